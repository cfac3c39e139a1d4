//! Results tables in CSV: `mode,beta,top_p,temperature,seed,score,tokens_per_s`.
//!
//! Floats are written in shortest round-trip form. A failed trial has the
//! literal `error` in its score column; an unmeasured throughput is empty.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{MoiError, Result};
use crate::mix::MixMode;

pub const RESULTS_HEADER: [&str; 7] = ["mode", "beta", "top_p", "temperature", "seed", "score", "tokens_per_s"];
pub const ERROR_MARKER: &str = "error";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub mode: MixMode,
    pub beta: f64,
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
    /// `None` when the trial failed.
    pub score: Option<f64>,
    pub tokens_per_s: Option<f64>,
}

impl ResultRow {
    fn fields(&self) -> [String; 7] {
        [
            self.mode.to_string(),
            self.beta.to_string(),
            self.top_p.to_string(),
            self.temperature.to_string(),
            self.seed.to_string(),
            self.score.map_or_else(|| ERROR_MARKER.to_string(), |s| s.to_string()),
            self.tokens_per_s.map_or_else(String::new, |t| t.to_string()),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(RESULTS_HEADER).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.fields()).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| MoiError::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| MoiError::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    pub fn parse_csv(text: &str, origin: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| MoiError::parse(format!("{origin}:1"), e.to_string()))?;
        if header.iter().collect::<Vec<_>>() != RESULTS_HEADER {
            return Err(MoiError::parse(
                format!("{origin}:1"),
                format!("expected header {}", RESULTS_HEADER.join(",")),
            ));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let loc = format!("{origin}:{}", i + 2);
            let rec = rec.map_err(|e| MoiError::parse(&loc, e.to_string()))?;
            let num = |k: usize| -> Result<f64> {
                rec[k]
                    .parse::<f64>()
                    .map_err(|e| MoiError::parse(&loc, format!("column {}: {e}", RESULTS_HEADER[k])))
            };
            let score = match &rec[5] {
                ERROR_MARKER => None,
                _ => Some(num(5)?),
            };
            let tokens_per_s = if rec[6].is_empty() { None } else { Some(num(6)?) };
            rows.push(ResultRow {
                mode: rec[0].parse().map_err(|e: MoiError| MoiError::parse(&loc, e.to_string()))?,
                beta: num(1)?,
                top_p: num(2)?,
                temperature: num(3)?,
                seed: rec[4].parse().map_err(|e| MoiError::parse(&loc, format!("column seed: {e}")))?,
                score,
                tokens_per_s,
            });
        }
        Ok(Self { rows })
    }
}

/// Appends rows as they complete, then publishes the final table with an
/// atomic rename. The partial file survives a crash.
pub(crate) struct IncrementalWriter {
    partial: std::path::PathBuf,
    target: std::path::PathBuf,
    file: fs::File,
}

impl IncrementalWriter {
    pub fn create(target: &Path) -> Result<Self> {
        let mut partial = target.as_os_str().to_owned();
        partial.push(".partial");
        let partial = std::path::PathBuf::from(partial);
        let mut file = fs::File::create(&partial).map_err(|e| MoiError::io(&partial, e))?;
        writeln!(file, "{}", RESULTS_HEADER.join(",")).map_err(|e| MoiError::io(&partial, e))?;
        Ok(Self {
            partial,
            target: target.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, row: &ResultRow) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(row.fields()).expect("in-memory write");
        let line = w.into_inner().expect("in-memory flush");
        self.file.write_all(&line).map_err(|e| MoiError::io(&self.partial, e))?;
        self.file.flush().map_err(|e| MoiError::io(&self.partial, e))
    }

    /// Replaces the partial file with `table` and renames it into place.
    pub fn finish(self, table: &ResultsTable) -> Result<()> {
        drop(self.file);
        table.write_csv(&self.partial)?;
        fs::rename(&self.partial, &self.target).map_err(|e| MoiError::io(&self.target, e))
    }
}
