//! Dataset ingestion for the Bayesian model targets.

use crate::error::{Error, Result};
use std::path::Path;

/// German credit design matrix: 24 standardized numeric attributes plus a
/// constant intercept column (25 columns), binary labels.
#[derive(Debug, Clone)]
pub struct CreditDataset {
    /// Row-major n x 25.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl CreditDataset {
    pub const N_FEATURES: usize = 25;

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    /// Build from raw attribute rows (24 columns) and labels in {0,1}:
    /// standardize each attribute column, append the intercept.
    pub fn from_raw(raw: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        let n = raw.len();
        if n == 0 {
            return Err(Error::DegenerateInput("empty credit dataset".into()));
        }
        let p = raw[0].len();
        let mut features = vec![vec![0.0; p + 1]; n];
        for j in 0..p {
            let mean = raw.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = raw.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            for (i, r) in raw.iter().enumerate() {
                features[i][j] = (r[j] - mean) / std;
            }
        }
        for row in features.iter_mut() {
            row[p] = 1.0;
        }
        Ok(CreditDataset { features, labels })
    }

    /// First-k-rows truncation (re-standardizes on the truncated rows).
    pub fn truncate(&self, k: usize, raw: &[Vec<f64>]) -> Result<Self> {
        let k = k.min(raw.len());
        CreditDataset::from_raw(raw[..k].to_vec(), self.labels[..k].to_vec())
    }
}

/// Load the German credit file: whitespace- or comma-delimited numeric
/// matrix whose last column is the label ({1,2} mapped to {0,1}, or already
/// {0,1}). Returns the standardized dataset plus the raw attribute rows so
/// callers can re-truncate.
pub fn load_credit<P: AsRef<Path>>(path: P) -> Result<(CreditDataset, Vec<Vec<f64>>)> {
    let path_str = path.as_ref().display().to_string();
    let text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
        path: path_str.clone(),
        source,
    })?;
    let mut raw = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected at least 2 columns, got {}", fields.len()),
            });
        }
        if let Some(w) = width {
            if fields.len() != w {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("ragged row: {} columns, expected {w}", fields.len()),
                });
            }
        } else {
            width = Some(fields.len());
        }
        let mut vals = Vec::with_capacity(fields.len());
        for f in &fields {
            vals.push(f.parse::<f64>().map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("bad number `{f}`: {e}"),
            })?);
        }
        let label_raw = vals.pop().unwrap();
        if label_raw != 0.0 && label_raw != 1.0 && label_raw != 2.0 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("non-binary label {label_raw}"),
            });
        }
        raw.push(vals);
        labels.push(label_raw as u8);
    }
    // The original file encodes labels as {1,2}; map to {0,1}. Files
    // already in {0,1} are passed through unchanged.
    if labels.iter().any(|&l| l == 2) {
        for l in labels.iter_mut() {
            *l -= 1;
        }
    }
    if raw.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: format!("empty file: {path_str}"),
        });
    }
    let ds = CreditDataset::from_raw(raw.clone(), labels)?;
    Ok((ds, raw))
}

/// Radon measurements: county index (0-based, contiguous after
/// re-indexing), floor indicator, log radon response.
#[derive(Debug, Clone)]
pub struct RadonDataset {
    pub county_index: Vec<usize>,
    pub floor: Vec<f64>,
    pub log_radon: Vec<f64>,
    pub n_counties: usize,
}

impl RadonDataset {
    pub fn n_rows(&self) -> usize {
        self.log_radon.len()
    }

    /// Keep only the first k rows; the county set stays fixed so the model
    /// dimension does not change with truncation.
    pub fn truncate(&self, k: usize) -> RadonDataset {
        let k = k.min(self.n_rows());
        RadonDataset {
            county_index: self.county_index[..k].to_vec(),
            floor: self.floor[..k].to_vec(),
            log_radon: self.log_radon[..k].to_vec(),
            n_counties: self.n_counties,
        }
    }
}

/// Load the radon CSV with columns county_code, floor, log_radon (an
/// optional header line is skipped). County codes are re-indexed to a
/// contiguous 0-based range in order of first appearance.
pub fn load_radon<P: AsRef<Path>>(path: P) -> Result<RadonDataset> {
    let path_str = path.as_ref().display().to_string();
    let text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
        path: path_str.clone(),
        source,
    })?;
    let mut codes: Vec<i64> = Vec::new();
    let mut floor = Vec::new();
    let mut log_radon = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if lineno == 0 && fields[0].parse::<f64>().is_err() {
            continue; // header
        }
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected 3 columns, got {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("bad number `{s}`: {e}"),
            })
        };
        let code = parse(fields[0])? as i64;
        let fl = parse(fields[1])?;
        if fl != 0.0 && fl != 1.0 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("floor must be 0 or 1, got {fl}"),
            });
        }
        codes.push(code);
        floor.push(fl);
        log_radon.push(parse(fields[2])?);
    }
    if codes.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: format!("empty file: {path_str}"),
        });
    }
    let mut seen: Vec<i64> = Vec::new();
    let county_index: Vec<usize> = codes
        .iter()
        .map(|c| match seen.iter().position(|s| s == c) {
            Some(i) => i,
            None => {
                seen.push(*c);
                seen.len() - 1
            }
        })
        .collect();
    Ok(RadonDataset {
        county_index,
        floor,
        log_radon,
        n_counties: seen.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn credit_parses_and_standardizes() {
        let f = write_tmp("1 2 1\n3 4 2\n5 9 1\n7 1 2\n");
        let (ds, raw) = load_credit(f.path()).unwrap();
        assert_eq!(ds.n_rows(), 4);
        assert_eq!(raw.len(), 4);
        assert_eq!(ds.labels, vec![0, 1, 0, 1]);
        // 2 attribute columns + intercept.
        assert_eq!(ds.features[0].len(), 3);
        for j in 0..2 {
            let mean: f64 = ds.features.iter().map(|r| r[j]).sum::<f64>() / 4.0;
            let var: f64 = ds.features.iter().map(|r| r[j] * r[j]).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
        assert!(ds.features.iter().all(|r| r[2] == 1.0));
    }

    #[test]
    fn credit_rejects_bad_label_and_empty() {
        let f = write_tmp("1 2 5\n");
        assert!(matches!(load_credit(f.path()), Err(Error::Parse { line: 1, .. })));
        let f = write_tmp("");
        assert!(matches!(load_credit(f.path()), Err(Error::Parse { .. })));
        assert!(matches!(load_credit("/nonexistent/file"), Err(Error::Io { .. })));
    }

    #[test]
    fn credit_reports_malformed_line_number() {
        let f = write_tmp("1 2 1\nx 4 2\n");
        match load_credit(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn radon_reindexes_counties() {
        let f = write_tmp("county_code,floor,log_radon\n27,0,1.1\n3,1,0.5\n27,1,0.8\n9,0,0.2\n");
        let ds = load_radon(f.path()).unwrap();
        assert_eq!(ds.n_rows(), 4);
        assert_eq!(ds.county_index, vec![0, 1, 0, 2]);
        assert_eq!(ds.n_counties, 3);
        let t = ds.truncate(1);
        assert_eq!(t.n_rows(), 1);
        assert_eq!(t.n_counties, 3);
    }
}
