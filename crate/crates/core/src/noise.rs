//! Class-conditional label noise.
//!
//! A [`TransitionMatrix`] is stored in the forward orientation:
//! `entry(i, j) = P(noisy = j | true = i)`, so every row is a probability
//! distribution. All other modules consume matrices in this orientation.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

/// Largest row-sum deviation accepted (and then renormalised away).
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Row-stochastic `C × C` matrix of label flip probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct TransitionMatrix {
    rows: Matrix,
}

impl TryFrom<Matrix> for TransitionMatrix {
    type Error = Error;

    fn try_from(rows: Matrix) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<TransitionMatrix> for Matrix {
    fn from(t: TransitionMatrix) -> Self {
        t.rows
    }
}

/// Matrices with published ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnownMatrix {
    Fashion05,
    Fashion06,
}

impl KnownMatrix {
    pub fn name(self) -> &'static str {
        match self {
            KnownMatrix::Fashion05 => "fashion05",
            KnownMatrix::Fashion06 => "fashion06",
        }
    }
}

impl std::str::FromStr for KnownMatrix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fashion05" => Ok(KnownMatrix::Fashion05),
            "fashion06" => Ok(KnownMatrix::Fashion06),
            other => Err(Error::UnknownMatrix(other.to_string())),
        }
    }
}

impl TransitionMatrix {
    /// Validates and renormalises a square probability matrix.
    pub fn from_rows(rows: Matrix) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::Dimension(format!(
                "transition matrix needs at least 2 classes, got {n}"
            )));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::Dimension(format!(
                "expected {n} columns per row, found a row of length {}",
                bad.len()
            )));
        }
        let mut rows = rows;
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidProbability {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                if v < 0.0 {
                    return Err(Error::NegativeEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                if v > 1.0 + ROW_SUM_TOLERANCE {
                    return Err(Error::InvalidProbability {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::RowSum { row: i, sum });
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(Self { rows })
    }

    pub fn known(which: KnownMatrix) -> Self {
        let rows = match which {
            KnownMatrix::Fashion05 => vec![
                vec![0.5, 0.2, 0.3],
                vec![0.3, 0.5, 0.2],
                vec![0.2, 0.3, 0.5],
            ],
            KnownMatrix::Fashion06 => vec![
                vec![0.4, 0.3, 0.3],
                vec![0.3, 0.4, 0.3],
                vec![0.3, 0.3, 0.4],
            ],
        };
        Self { rows }
    }

    /// Looks up a published matrix by name.
    pub fn known_matrix(name: &str) -> Result<Self> {
        Ok(Self::known(name.parse()?))
    }

    /// `1 − rho` on the diagonal, `rho / (C − 1)` elsewhere.
    pub fn symmetric(n_classes: usize, rho: f64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Dimension(format!(
                "transition matrix needs at least 2 classes, got {n_classes}"
            )));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!(
                "flip rate must lie in [0, 1), got {rho}"
            )));
        }
        let off = rho / (n_classes - 1) as f64;
        let rows = (0..n_classes)
            .map(|i| {
                (0..n_classes)
                    .map(|j| if i == j { 1.0 - rho } else { off })
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn identity(n_classes: usize) -> Result<Self> {
        Self::symmetric(n_classes, 0.0)
    }

    pub fn n_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, true_class: usize, noisy_class: usize) -> f64 {
        self.rows[true_class][noisy_class]
    }

    pub fn row(&self, true_class: usize) -> &[f64] {
        &self.rows[true_class]
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    /// Off-diagonal mass of each row, `1 − T[i][i]`.
    ///
    /// For two classes this is `(ρ₊₁, ρ₋₁)` with class 0 playing `+1`.
    pub fn flip_rates(&self) -> Vec<f64> {
        (0..self.n_classes())
            .map(|i| 1.0 - self.rows[i][i])
            .collect()
    }

    pub fn is_identity(&self) -> bool {
        crate::linalg::identity_residual(&self.rows) == 0.0
    }

    /// One row per line, comma separated, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = parse_csv_matrix(text)?;
        Self::from_rows(rows)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub(crate) fn parse_csv_matrix(text: &str) -> Result<Matrix> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|e| {
                        Error::Parse(format!("line {}: '{}': {e}", i + 1, cell.trim()))
                    })
                })
                .collect()
        })
        .collect()
}

impl fmt::Display for TransitionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(f, "[{}]", cells.join(", "))?;
        }
        Ok(())
    }
}

/// Outcome of [`inject_noise`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseInjectionRecord {
    pub seed: u64,
    pub n_flipped: usize,
    /// `counts[i][j]`: samples of true class `i` that received label `j`.
    pub counts: Vec<Vec<usize>>,
    /// Row-normalised `counts`; rows of absent classes stay zero.
    pub empirical_matrix: Matrix,
}

/// Resamples every label from its row of `t` by inverse-CDF sampling.
pub fn inject_noise(
    labels: &[usize],
    t: &TransitionMatrix,
    seed: u64,
) -> Result<(Vec<usize>, NoiseInjectionRecord)> {
    let c = t.n_classes();
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: c,
        });
    }
    let mut stream = rng::substream(seed, &[0x6e6f_6973_65]);
    let mut counts = vec![vec![0usize; c]; c];
    let mut noisy = Vec::with_capacity(labels.len());
    for &y in labels {
        let u: f64 = stream.random();
        let row = t.row(y);
        let mut acc = 0.0;
        // falls back to the last class with positive mass when rounding
        // leaves u above the final cumulative sum
        let mut pick = (0..c).rev().find(|&j| row[j] > 0.0).unwrap_or(y);
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = j;
                break;
            }
        }
        counts[y][pick] += 1;
        noisy.push(pick);
    }
    let n_flipped = labels.iter().zip(&noisy).filter(|(a, b)| a != b).count();
    let empirical_matrix = counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&k| {
                    if total == 0 {
                        0.0
                    } else {
                        k as f64 / total as f64
                    }
                })
                .collect()
        })
        .collect();
    Ok((
        noisy,
        NoiseInjectionRecord {
            seed,
            n_flipped,
            counts,
            empirical_matrix,
        },
    ))
}
