//! Binary-classification datasets for the finite-sum logistic problem.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use super::ProblemInstance;
use crate::error::{LabError, Result};
use crate::rng::{Purpose, StreamKey};

/// Distance between the two class means of the synthetic generator.
const BLOB_SEPARATION: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    /// Row-major `n × d`.
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(n: usize, d: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if d == 0 {
            return Err(LabError::MalformedData("feature dimension must be >= 1".into()));
        }
        if features.len() != n * d {
            return Err(LabError::MalformedData(format!(
                "expected {} feature values, got {}",
                n * d,
                features.len()
            )));
        }
        if labels.len() != n {
            return Err(LabError::MalformedData(format!(
                "expected {n} labels, got {}",
                labels.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(LabError::MalformedData(format!(
                "non-finite feature in row {} column {}",
                pos / d,
                pos % d
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(LabError::MalformedData(format!("label in row {i} is not 0 or 1")));
        }
        Ok(Self {
            n,
            d,
            features,
            labels,
        })
    }

    /// Two overlapping unit-variance Gaussian blobs whose means sit at
    /// distance 2 apart along the all-ones direction. Labels alternate
    /// `0, 1, 0, …`.
    pub fn synthetic(n: usize, d: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(LabError::invalid("n", "synthetic dataset needs n >= 2"));
        }
        if d == 0 {
            return Err(LabError::invalid("d", "synthetic dataset needs d >= 1"));
        }
        let shift = 0.5 * BLOB_SEPARATION / (d as f64).sqrt();
        let mut features = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = StreamKey::new(seed, i as u64, 0, Purpose::Dataset).rng();
            let y = (i % 2) as u8;
            let sign = if y == 1 { 1.0 } else { -1.0 };
            for _ in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                features.push(z + sign * shift);
            }
            labels.push(y);
        }
        Self::new(n, d, features, labels)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    /// Writes `label,f1,...,fd` followed by one row per sample. Floats use the
    /// shortest representation that parses back to the same value.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| LabError::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["label".to_string()];
        header.extend((1..=self.d).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut rec = Vec::with_capacity(self.d + 1);
            rec.push(self.labels[i].to_string());
            rec.extend(self.row(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        let mut inner = w
            .into_inner()
            .map_err(|e| LabError::io(path, e.into_error()))?;
        inner.flush().map_err(|e| LabError::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| LabError::io(path, e))?;
        let mut r = csv::Reader::from_reader(file);
        let header = r.headers()?.clone();
        if header.is_empty() || &header[0] != "label" {
            return Err(LabError::MalformedData("first column must be `label`".into()));
        }
        let d = header.len() - 1;
        for (j, name) in header.iter().skip(1).enumerate() {
            if name != format!("f{}", j + 1) {
                return Err(LabError::MalformedData(format!(
                    "column {} should be `f{}`, found `{name}`",
                    j + 2,
                    j + 1
                )));
            }
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != d + 1 {
                return Err(LabError::MalformedData(format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    rec.len(),
                    d + 1
                )));
            }
            let label = match rec[0].trim() {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(LabError::MalformedData(format!(
                        "row {}: label `{other}` is not 0 or 1",
                        i + 1
                    )))
                }
            };
            labels.push(label);
            for field in rec.iter().skip(1) {
                let v: f64 = field.trim().parse().map_err(|_| {
                    LabError::MalformedData(format!("row {}: cannot parse `{field}`", i + 1))
                })?;
                features.push(v);
            }
        }
        Self::new(labels.len(), d, features, labels)
    }
}

/// Where a finite-sum problem's data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { n: usize, d: usize, seed: u64 },
    Csv(PathBuf),
}

/// Logistic regression (cross-entropy, no regularizer, bias column appended).
pub fn build_finite_sum_problem(source: &DataSource) -> Result<ProblemInstance> {
    let dataset = match source {
        DataSource::Synthetic { n, d, seed } => Dataset::synthetic(*n, *d, *seed)?,
        DataSource::Csv(path) => Dataset::read_csv(path)?,
    };
    ProblemInstance::finite_sum(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Part;

    #[test]
    fn synthetic_is_deterministic() {
        let a = Dataset::synthetic(100, 2, 7).unwrap();
        let b = Dataset::synthetic(100, 2, 7).unwrap();
        assert_eq!(a, b);
        let c = Dataset::synthetic(100, 2, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn loss_at_origin_is_ln2() {
        let p = build_finite_sum_problem(&DataSource::Synthetic { n: 100, d: 5, seed: 3 }).unwrap();
        assert_eq!(p.dimension(), 6);
        let f = p.value(Part::F, &[0.0; 6]).unwrap();
        assert!((f - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn synthetic_rejects_small_n() {
        assert!(Dataset::synthetic(1, 3, 0).is_err());
        assert!(Dataset::synthetic(4, 0, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let a = Dataset::synthetic(37, 4, 11).unwrap();
        a.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("label,f1,f2,f3,f4\n"));
        let b = Dataset::read_csv(&path).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        for body in [
            "label,f1\n2,0.5\n",
            "label,f2\n1,0.5\n",
            "y,f1\n1,0.5\n",
            "label,f1\n1,abc\n",
            "label,f1\n1,NaN\n",
            "label,f1\n1,0.5,0.7\n",
        ] {
            std::fs::write(&path, body).unwrap();
            assert!(
                matches!(
                    Dataset::read_csv(&path),
                    Err(LabError::MalformedData(_)) | Err(LabError::Csv(_))
                ),
                "accepted {body:?}"
            );
        }
    }

    #[test]
    fn validation() {
        assert!(Dataset::new(2, 1, vec![1.0], vec![0, 1]).is_err());
        assert!(Dataset::new(1, 1, vec![1.0], vec![2]).is_err());
        assert!(Dataset::new(1, 1, vec![f64::INFINITY], vec![0]).is_err());
    }
}
