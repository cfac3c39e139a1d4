//! Token embedding storage and the mixed input `h = Σ w_i e_i`.

use crate::error::{MoiError, Result};
use crate::mix::MixingWeights;

/// `vocab × dim` row-major table of `f32` embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(vocab: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if vocab < 2 {
            return Err(MoiError::InvalidVocabulary(vocab));
        }
        if dim == 0 {
            return Err(MoiError::InvalidConfig("embedding dimension must be ≥ 1".into()));
        }
        if data.len() != vocab * dim {
            return Err(MoiError::Shape {
                tensor: "embedding".into(),
                expected: vec![vocab, dim],
                found: vec![data.len()],
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(MoiError::InvalidInput(format!(
                "non-finite embedding entry at row {}, column {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self { vocab, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(MoiError::InvalidInput("ragged embedding rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row(&self, id: u32) -> Result<&[f32]> {
        let i = id as usize;
        if i >= self.vocab {
            return Err(MoiError::Index {
                index: i,
                len: self.vocab,
            });
        }
        Ok(&self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn lookup(&self, id: u32) -> Result<MixedEmbedding> {
        self.row(id).map(|r| MixedEmbedding(r.to_vec()))
    }

    /// `Σ w_i e_i` over the sparse support of `w`, in ascending token id,
    /// accumulated in `f64` and narrowed to `f32` once at the end.
    pub fn mix(&self, w: &MixingWeights) -> Result<MixedEmbedding> {
        let mut acc = vec![0f64; self.dim];
        for (id, weight) in w.iter() {
            let row = self.row(id)?;
            for (a, &e) in acc.iter_mut().zip(row) {
                *a += weight * e as f64;
            }
        }
        Ok(MixedEmbedding(acc.into_iter().map(|x| x as f32).collect()))
    }

    /// Largest `‖e_i − e_y‖∞` over all rows.
    pub fn max_row_distance(&self, y: u32) -> Result<f32> {
        let ey = self.row(y)?;
        Ok(self
            .data
            .chunks_exact(self.dim)
            .flat_map(|row| row.iter().zip(ey).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f32::max))
    }
}

pub fn lookup(table: &EmbeddingTable, id: u32) -> Result<MixedEmbedding> {
    table.lookup(id)
}

pub fn mix_embeddings(table: &EmbeddingTable, w: &MixingWeights) -> Result<MixedEmbedding> {
    table.mix(w)
}

/// A `d`-dimensional model input.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedEmbedding(pub Vec<f32>);

impl MixedEmbedding {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn max_abs_diff(&self, other: &[f32]) -> f32 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mix::{posterior_mix_weights, ProbabilityVector};
    use crate::rng::{session_rng, uniform_f64};
    use proptest::prelude::*;

    fn identity() -> EmbeddingTable {
        EmbeddingTable::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    fn seeded_table(vocab: usize, dim: usize, seed: u64) -> EmbeddingTable {
        let mut rng = session_rng(seed);
        let data = (0..vocab * dim)
            .map(|_| (uniform_f64(&mut rng) * 2.0 - 1.0) as f32)
            .collect();
        EmbeddingTable::new(vocab, dim, data).unwrap()
    }

    #[test]
    fn lookup_examples() {
        let t = identity();
        assert_eq!(t.lookup(0).unwrap().0, vec![1.0, 0.0]);
        assert_eq!(t.lookup(1).unwrap().0, vec![0.0, 1.0]);
        assert!(matches!(t.lookup(2), Err(MoiError::Index { index: 2, len: 2 })));
    }

    #[test]
    fn table_rejects_bad_shapes() {
        assert!(EmbeddingTable::new(1, 4, vec![0.0; 4]).is_err());
        assert!(EmbeddingTable::new(2, 0, vec![]).is_err());
        assert!(EmbeddingTable::new(2, 2, vec![0.0; 3]).is_err());
        assert!(EmbeddingTable::new(2, 1, vec![0.0, f32::NAN]).is_err());
    }

    #[test]
    fn one_hot_mix_is_bit_exact_lookup() {
        let t = seeded_table(16, 8, 3);
        for y in 0..16 {
            let w = MixingWeights::new(vec![(y, 1.0)]).unwrap();
            assert_eq!(t.mix(&w).unwrap(), t.lookup(y).unwrap());
        }
    }

    #[test]
    fn midpoint_mix() {
        let t = seeded_table(4, 8, 11);
        let w = MixingWeights::new(vec![(0, 0.5), (1, 0.5)]).unwrap();
        let h = t.mix(&w).unwrap();
        let (a, b) = (t.row(0).unwrap(), t.row(1).unwrap());
        for k in 0..8 {
            assert!((h.0[k] - (a[k] + b[k]) / 2.0).abs() <= 1e-7);
        }
    }

    #[test]
    fn worked_posterior_mix_matches_independent_dot_products() {
        let t = seeded_table(4, 8, 2024);
        let p = ProbabilityVector::from_dense(vec![0.7, 0.2, 0.05, 0.05]).unwrap();
        let w = posterior_mix_weights(&p, 0, 1.0).unwrap();
        let coeffs = [
            0.905_741_526_291_472,
            0.062_838_982_472_351_97,
            0.015_709_745_618_087_993,
            0.015_709_745_618_087_993,
        ];
        let h = t.mix(&w).unwrap();
        for k in 0..8 {
            let expect: f64 = (0..4).map(|i| coeffs[i] * t.row(i as u32).unwrap()[k] as f64).sum();
            assert!((h.0[k] as f64 - expect).abs() <= 1e-6, "column {k}");
        }
    }

    #[test]
    fn mix_rejects_out_of_range_ids() {
        let w = MixingWeights::new(vec![(0, 0.5), (5, 0.5)]).unwrap();
        assert!(identity().mix(&w).is_err());
    }

    fn arb_weights(v: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, v).prop_filter_map("zero mass", |raw| {
            let s: f64 = raw.iter().sum();
            (s > 1e-6).then(|| raw.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn mix_is_linear(a in arb_weights(6), b in arb_weights(6), lambda in 0.0f64..1.0) {
            let t = seeded_table(6, 8, 77);
            let wa = MixingWeights::new(a.iter().copied().enumerate().map(|(i, x)| (i as u32, x)).collect()).unwrap();
            let wb = MixingWeights::new(b.iter().copied().enumerate().map(|(i, x)| (i as u32, x)).collect()).unwrap();
            let wl = MixingWeights::new(
                (0..6).map(|i| (i as u32, lambda * a[i] + (1.0 - lambda) * b[i])).collect(),
            ).unwrap();
            let (ha, hb, hl) = (t.mix(&wa).unwrap(), t.mix(&wb).unwrap(), t.mix(&wl).unwrap());
            for k in 0..8 {
                let lin = lambda as f32 * ha.0[k] + (1.0 - lambda as f32) * hb.0[k];
                prop_assert!((hl.0[k] - lin).abs() <= 1e-5);
            }
        }

        #[test]
        fn deviation_bound(raw in arb_weights(6), y in 0u32..6, beta in 0.01f64..100.0) {
            let t = seeded_table(6, 8, 5);
            let p = ProbabilityVector::from_dense(raw).unwrap();
            let w = posterior_mix_weights(&p, y, beta).unwrap();
            let h = t.mix(&w).unwrap();
            let dev = h.max_abs_diff(t.row(y).unwrap()) as f64;
            let bound = (1.0 - w.get(y)) * t.max_row_distance(y).unwrap() as f64;
            prop_assert!(dev <= bound + 1e-6);
        }
    }
}
