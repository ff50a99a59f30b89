//! Result tables: one row per (mode, lambda, interval) experiment cell,
//! rates normalized per CSI element, written as CSV with a fixed schema.

use std::path::Path;

use csifeed::error::{Error, Result};

pub const COLUMNS: [&str; 11] = [
    "experiment",
    "mode",
    "lambda",
    "interval",
    "n_bins",
    "rate_latent",
    "rate_update",
    "rate_total",
    "nmse_db",
    "nonzero_updates",
    "wall_time_s",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub experiment: String,
    pub mode: String,
    pub lambda: f64,
    pub interval: usize,
    pub n_bins: u32,
    pub rate_latent: f64,
    pub rate_update: f64,
    pub rate_total: f64,
    pub nmse_db: f64,
    pub nonzero_updates: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<Row>,
}

impl ResultTable {
    pub fn new() -> Self {
        ResultTable { rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut out = COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.experiment,
                r.mode,
                r.lambda,
                r.interval,
                r.n_bins,
                r.rate_latent,
                r.rate_update,
                r.rate_total,
                r.nmse_db,
                r.nonzero_updates,
                r.wall_time_s
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_csv())?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format(0, "empty result table"))?;
        if header != COLUMNS.join(",") {
            return Err(Error::format(0, format!("unexpected table header: {}", header)));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != COLUMNS.len() {
                return Err(Error::format(
                    (i + 2) as u64,
                    format!("row has {} fields, expected {}", parts.len(), COLUMNS.len()),
                ));
            }
            let f = |j: usize| -> Result<f64> {
                parts[j]
                    .parse()
                    .map_err(|_| Error::format((i + 2) as u64, format!("bad number {:?}", parts[j])))
            };
            rows.push(Row {
                experiment: parts[0].to_string(),
                mode: parts[1].to_string(),
                lambda: f(2)?,
                interval: f(3)? as usize,
                n_bins: f(4)? as u32,
                rate_latent: f(5)?,
                rate_update: f(6)?,
                rate_total: f(7)?,
                nmse_db: f(8)?,
                nonzero_updates: f(9)? as usize,
                wall_time_s: f(10)?,
            });
        }
        Ok(ResultTable { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let mut t = ResultTable::new();
        t.rows.push(Row {
            experiment: "exp1".into(),
            mode: "full_model".into(),
            lambda: 5e4,
            interval: 200,
            n_bins: 50,
            rate_latent: 0.31,
            rate_update: 0.004,
            rate_total: 0.314,
            nmse_db: -14.2,
            nonzero_updates: 312,
            wall_time_s: 12.5,
        });
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        t.write(&p).unwrap();
        let back = ResultTable::read(&p).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn schema_mismatch_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "a,b,c\n1,2,3\n").unwrap();
        assert!(ResultTable::read(&p).is_err());
    }
}
