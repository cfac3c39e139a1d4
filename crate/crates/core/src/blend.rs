//! Prompt blending: resample prompt-embedding matrices to a common length
//! along the sequence axis by piecewise-linear interpolation, then average.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{MoiError, Result};

/// `L × d` prompt embeddings; JSON form `{"dim": d, "rows": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMatrix {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
}

impl PromptMatrix {
    pub fn new(dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { dim, rows };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(MoiError::InvalidInput("prompt matrix has no rows".into()));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != self.dim {
                return Err(MoiError::InvalidInput(format!(
                    "row {i} has {} entries, dim is {}",
                    r.len(),
                    self.dim
                )));
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(MoiError::InvalidInput(format!("row {i} has a non-finite entry")));
            }
        }
        Ok(())
    }

    /// Embedding rows of `tokens` looked up in `table`.
    pub fn from_tokens(table: &EmbeddingTable, tokens: &[u32]) -> Result<Self> {
        let rows = tokens
            .iter()
            .map(|&t| table.row(t).map(|r| r.iter().map(|&x| x as f64).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(table.dim(), rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Resamples `e` to `target` rows. Input row `k` sits at `k / (L − 1)` and
/// output row `j` is the linear interpolant at `j / (target − 1)`; a single
/// input row is repeated.
pub fn interpolate_length(e: &PromptMatrix, target: usize) -> Result<PromptMatrix> {
    if target < 1 {
        return Err(MoiError::Range("target length must be ≥ 1".into()));
    }
    e.validate()?;
    let l = e.len();
    if l == 1 {
        return Ok(PromptMatrix {
            dim: e.dim,
            rows: vec![e.rows[0].clone(); target],
        });
    }
    let rows = (0..target)
        .map(|j| {
            if target == 1 {
                return e.rows[0].clone();
            }
            // Position j·(L−1)/(target−1), split into integer part and remainder.
            let num = j * (l - 1);
            let den = target - 1;
            let (k, rem) = (num / den, num % den);
            if rem == 0 {
                return e.rows[k].clone();
            }
            let f = rem as f64 / den as f64;
            e.rows[k]
                .iter()
                .zip(&e.rows[k + 1])
                .map(|(a, b)| (1.0 - f) * a + f * b)
                .collect()
        })
        .collect();
    Ok(PromptMatrix { dim: e.dim, rows })
}

/// Elementwise mean of every prompt resampled to `target` rows (default:
/// the longest prompt's length).
pub fn blend_prompts(prompts: &[PromptMatrix], target: Option<usize>) -> Result<PromptMatrix> {
    let first = prompts
        .first()
        .ok_or_else(|| MoiError::InvalidInput("no prompts to blend".into()))?;
    let dim = first.dim;
    if let Some(p) = prompts.iter().find(|p| p.dim != dim) {
        return Err(MoiError::InvalidInput(format!("mixed dimensions {dim} and {}", p.dim)));
    }
    let target = target.unwrap_or_else(|| prompts.iter().map(PromptMatrix::len).max().unwrap_or(1));
    let mut acc = vec![vec![0f64; dim]; target];
    for p in prompts {
        let r = interpolate_length(p, target)?;
        for (a, row) in acc.iter_mut().zip(&r.rows) {
            for (x, y) in a.iter_mut().zip(row) {
                *x += y;
            }
        }
    }
    let n = prompts.len() as f64;
    acc.iter_mut().flatten().for_each(|x| *x /= n);
    Ok(PromptMatrix { dim, rows: acc })
}

pub fn read_prompt_pool(path: impl AsRef<Path>) -> Result<Vec<PromptMatrix>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MoiError::io(path, e))?;
    let pool: Vec<PromptMatrix> = serde_json::from_str(&text)
        .map_err(|e| MoiError::parse(format!("{}:{}", path.display(), e.line()), e.to_string()))?;
    for (i, p) in pool.iter().enumerate() {
        p.validate()
            .map_err(|e| MoiError::parse(format!("{} prompt {i}", path.display()), e.to_string()))?;
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> PromptMatrix {
        PromptMatrix::new(rows[0].len(), rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn identity_when_lengths_match() {
        let e = m(&[&[1.0, 2.0], &[3.0, -1.0], &[0.5, 0.25]]);
        assert_eq!(interpolate_length(&e, 3).unwrap(), e);
    }

    #[test]
    fn two_to_three_inserts_midpoint() {
        let e = m(&[&[1.0, 2.0], &[3.0, -1.0]]);
        let r = interpolate_length(&e, 3).unwrap();
        assert_eq!(r.rows[0], vec![1.0, 2.0]);
        assert_eq!(r.rows[1], vec![2.0, 0.5]);
        assert_eq!(r.rows[2], vec![3.0, -1.0]);
    }

    #[test]
    fn three_to_five_quarter_points() {
        let (a, b, c) = ([0.0, 4.0], [2.0, 0.0], [6.0, 1.0]);
        let r = interpolate_length(&m(&[&a, &b, &c]), 5).unwrap();
        let mid = |x: &[f64; 2], y: &[f64; 2]| vec![(x[0] + y[0]) / 2.0, (x[1] + y[1]) / 2.0];
        assert_eq!(r.rows, vec![a.to_vec(), mid(&a, &b), b.to_vec(), mid(&b, &c), c.to_vec()]);
    }

    #[test]
    fn single_row_repeats_and_downsampling_works() {
        let r = interpolate_length(&m(&[&[7.0]]), 4).unwrap();
        assert_eq!(r.rows, vec![vec![7.0]; 4]);
        let r = interpolate_length(&m(&[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0]]), 3).unwrap();
        assert_eq!(r.rows, vec![vec![0.0], vec![2.0], vec![4.0]]);
        assert!(matches!(interpolate_length(&m(&[&[0.0]]), 0), Err(MoiError::Range(_))));
    }

    #[test]
    fn blend_examples() {
        let a = m(&[&[1.0, 2.0], &[3.0, -1.0]]);
        assert_eq!(blend_prompts(std::slice::from_ref(&a), Some(3)).unwrap(), interpolate_length(&a, 3).unwrap());
        assert_eq!(blend_prompts(&[a.clone(), a.clone(), a.clone()], None).unwrap(), a);
        let b = m(&[&[3.0, 0.0], &[1.0, 1.0]]);
        let mid = blend_prompts(&[a, b], None).unwrap();
        assert_eq!(mid.rows, vec![vec![2.0, 1.0], vec![2.0, 0.0]]);
        assert!(matches!(blend_prompts(&[], None), Err(MoiError::InvalidInput(_))));
    }

    #[test]
    fn blend_defaults_to_longest_prompt() {
        let short = m(&[&[0.0]]);
        let long = m(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        assert_eq!(blend_prompts(&[short, long], None).unwrap().len(), 4);
    }

    fn arb_matrix() -> impl Strategy<Value = PromptMatrix> {
        (1usize..8).prop_flat_map(|l| {
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), l)
                .prop_map(|rows| PromptMatrix { dim: 3, rows })
        })
    }

    proptest! {
        #[test]
        fn endpoints_and_segment_convexity(e in arb_matrix(), target in 2usize..20) {
            let r = interpolate_length(&e, target).unwrap();
            prop_assert_eq!(&r.rows[0], &e.rows[0]);
            prop_assert_eq!(r.rows.last().unwrap(), e.rows.last().unwrap());
            if e.len() > 1 {
                for (j, row) in r.rows.iter().enumerate() {
                    let k = ((j * (e.len() - 1)) / (target - 1)).min(e.len() - 2);
                    for ((&x, &a), &b) in row.iter().zip(&e.rows[k]).zip(&e.rows[k + 1]) {
                        prop_assert!(x >= a.min(b) - 1e-12 && x <= a.max(b) + 1e-12);
                    }
                }
            }
        }

        #[test]
        fn blend_is_permutation_invariant(pool in prop::collection::vec(arb_matrix(), 1..6), shift in 0usize..6) {
            let mut rotated = pool.clone();
            rotated.rotate_left(shift % pool.len());
            let (a, b) = (blend_prompts(&pool, None).unwrap(), blend_prompts(&rotated, None).unwrap());
            for (x, y) in a.rows.iter().flatten().zip(b.rows.iter().flatten()) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }
    }
}
