//! Synthetic regression tasks and CSV-backed datasets. Input and output
//! width are always equal; inputs are kept strictly positive so the first
//! activation is the identity on them and the synthetic maps stay exactly
//! representable by the trained architecture.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dtp_core::net::random_orthogonal;
use dtp_core::{ActivationKind, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    /// y = Q x for a seeded orthogonal Q.
    LinearMap { d: usize, n: usize },
    /// y = Q sigma(P x) for seeded orthogonal Q, P and the leaky nonlinearity.
    RotatedNonlinear { d: usize, n: usize },
    /// One sample per row: 2d comma-separated decimal columns, x then y.
    FileCsv { path: PathBuf },
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::LinearMap { d, n } | DatasetSpec::RotatedNonlinear { d, n } => {
                if *d == 0 || *n == 0 {
                    return Err(HarnessError::Config(
                        "dataset d and n must be >= 1".to_string(),
                    ));
                }
            }
            DatasetSpec::FileCsv { .. } => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vector>,
    pub labels: Vec<Vector>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn width(&self) -> usize {
        self.inputs.first().map_or(0, Vector::len)
    }
}

/// The nonlinearity baked into RotatedNonlinear labels; matches the default
/// training activation so the task is representable without approximation.
pub const DATASET_ACTIVATION: ActivationKind = ActivationKind::LeakyRelu { slope: 0.1 };

fn positive_input(d: usize, rng: &mut ChaCha8Rng) -> Vector {
    // |N(0,1)| + 0.1 keeps inputs off the activation kink and inside the
    // identity region of the leaky ReLU.
    Vector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z.abs() + 0.1
    })
}

pub fn make_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    match spec {
        DatasetSpec::LinearMap { d, n } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_orthogonal(*d, &mut rng);
            let inputs: Vec<Vector> = (0..*n).map(|_| positive_input(*d, &mut rng)).collect();
            let labels = inputs.iter().map(|x| &q * x).collect();
            Ok(Dataset { inputs, labels })
        }
        DatasetSpec::RotatedNonlinear { d, n } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_orthogonal(*d, &mut rng);
            let p = random_orthogonal(*d, &mut rng);
            let inputs: Vec<Vector> = (0..*n).map(|_| positive_input(*d, &mut rng)).collect();
            let labels = inputs
                .iter()
                .map(|x| &q * DATASET_ACTIVATION.apply(&(&p * x)))
                .collect();
            Ok(Dataset { inputs, labels })
        }
        DatasetSpec::FileCsv { path } => read_csv(path),
    }
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| HarnessError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let values = line
            .split(',')
            .map(|field| {
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("bad number {:?}: {e}", field.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() % 2 != 0 {
            return Err(parse_err(format!(
                "expected an even number of columns (x then y), got {}",
                values.len()
            )));
        }
        let d = values.len() / 2;
        match width {
            None => width = Some(d),
            Some(expect) if expect != d => {
                return Err(parse_err(format!(
                    "row has {} columns but earlier rows had {}",
                    values.len(),
                    2 * expect
                )));
            }
            _ => {}
        }
        inputs.push(Vector::from_row_slice(&values[..d]));
        labels.push(Vector::from_row_slice(&values[d..]));
    }
    if inputs.is_empty() {
        return Err(HarnessError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "no samples".to_string(),
        });
    }
    Ok(Dataset { inputs, labels })
}

pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (x, y) in dataset.inputs.iter().zip(&dataset.labels) {
        let mut fields: Vec<String> = Vec::with_capacity(2 * x.len());
        fields.extend(x.iter().map(f64::to_string));
        fields.extend(y.iter().map(f64::to_string));
        let _ = writeln!(text, "{}", fields.join(","));
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_map_is_an_isometry() {
        let spec = DatasetSpec::LinearMap { d: 2, n: 4 };
        let data = make_dataset(&spec, 3).unwrap();
        assert_eq!(data.len(), 4);
        for (x, y) in data.inputs.iter().zip(&data.labels) {
            assert_abs_diff_eq!(x.norm(), y.norm(), epsilon = 1e-12);
        }
        // Deterministic: the same seed rebuilds the same pairs bit for bit.
        let again = make_dataset(&spec, 3).unwrap();
        assert_eq!(data, again);
        assert_ne!(data, make_dataset(&spec, 4).unwrap());
    }

    #[test]
    fn rotated_nonlinear_keeps_positive_inputs() {
        let data = make_dataset(&DatasetSpec::RotatedNonlinear { d: 5, n: 20 }, 7).unwrap();
        assert!(data.inputs.iter().all(|x| x.iter().all(|&v| v >= 0.1)));
        assert_eq!(data.width(), 5);
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        let data = make_dataset(&DatasetSpec::LinearMap { d: 3, n: 5 }, 11).unwrap();
        write_csv(&data, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1.0,2.0\n3.0,oops\n").unwrap();
        let err = read_csv(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "missing line number: {msg}");

        std::fs::write(&path, "1.0,2.0,3.0\n").unwrap();
        let err = read_csv(&path).unwrap_err();
        assert!(err.to_string().contains("even number"), "{err}");

        std::fs::write(&path, "1.0,2.0\n1.0,2.0,3.0,4.0\n").unwrap();
        let err = read_csv(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }
}
