//! JSONL traces: one [`StepRecord`] per line,
//! `{"step","token","H","support","probs","weights","mode"}`. Floats are
//! written in shortest round-trip form, so reading a trace back reproduces
//! every recorded value exactly.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::StepRecord;
use crate::error::{MoiError, Result};

pub fn write_trace(steps: &[StepRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| MoiError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in steps {
        serde_json::to_writer(&mut out, rec).expect("step records serialize");
        out.write_all(b"\n").map_err(|e| MoiError::io(path, e))?;
    }
    out.flush().map_err(|e| MoiError::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| MoiError::io(path, e))?;
    let mut steps = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| MoiError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{}:{}", path.display(), i + 1);
        let rec: StepRecord = serde_json::from_str(&line).map_err(|e| MoiError::parse(loc(), e.to_string()))?;
        if rec.probs.len() != rec.support.len() || rec.weights.len() != rec.support.len() {
            return Err(MoiError::parse(
                loc(),
                format!(
                    "support, probs and weights lengths differ ({}, {}, {})",
                    rec.support.len(),
                    rec.probs.len(),
                    rec.weights.len()
                ),
            ));
        }
        steps.push(rec);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mix::MixMode;

    fn record(step: usize) -> StepRecord {
        StepRecord {
            step,
            token: 3,
            entropy: 0.1 + step as f64 / 3.0,
            support: vec![3, 1],
            probs: vec![2.0 / 3.0, 1.0 / 3.0],
            weights: vec![0.9, 0.1],
            mode: MixMode::Moi,
        }
    }

    #[test]
    fn empty_trace_is_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_trace(&[], &path).unwrap();
        assert_eq!(fs::read(&path).unwrap().len(), 0);
        assert!(read_trace(&path).unwrap().is_empty());
    }

    #[test]
    fn five_steps_five_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let steps: Vec<_> = (0..5).map(record).collect();
        write_trace(&steps, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 5);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in ["step", "token", "H", "support", "probs", "weights", "mode"] {
                assert!(v.get(key).is_some(), "missing {key}");
            }
            assert_eq!(v["mode"], "moi");
        }
        assert_eq!(read_trace(&path).unwrap(), steps);
    }

    #[test]
    fn schema_violation_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let good = serde_json::to_string(&record(0)).unwrap();
        fs::write(&path, format!("{good}\n{{\"step\":1}}\n")).unwrap();
        match read_trace(&path) {
            Err(MoiError::Parse { location, .. }) => assert!(location.ends_with(":2"), "{location}"),
            other => panic!("expected parse error, got {other:?}"),
        }
        let mut bad = record(0);
        bad.weights.pop();
        fs::write(&path, serde_json::to_string(&bad).unwrap()).unwrap();
        assert!(matches!(read_trace(&path), Err(MoiError::Parse { .. })));
    }
}
