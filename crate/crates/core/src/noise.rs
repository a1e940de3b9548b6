//! Instance-independent label noise.
//!
//! A [`TransitionMatrix`] stores `T[j][k] = Pr(noisy = j | clean = k)`, so
//! every column is a distribution over noisy labels.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const COLUMN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric { eta: f64 },
    PairFlip { eta: f64, mapping: Vec<usize> },
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    classes: usize,
    /// Row-major: `entries[j * classes + k] = T[j][k]`.
    entries: Vec<f64>,
    kind: NoiseKind,
}

fn check_rate(eta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("noise rate {eta} outside [0, 1]")))
    }
}

fn check_classes(classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    Ok(())
}

/// Adjacent-cycle mapping `k -> (k + 1) mod C`.
pub fn cycle_mapping(classes: usize) -> Vec<usize> {
    (0..classes).map(|k| (k + 1) % classes).collect()
}

pub fn symmetric_matrix(classes: usize, eta: f64) -> Result<TransitionMatrix> {
    check_classes(classes)?;
    check_rate(eta)?;
    let off = eta / (classes - 1) as f64;
    let mut entries = vec![off; classes * classes];
    for k in 0..classes {
        entries[k * classes + k] = 1.0 - eta;
    }
    Ok(TransitionMatrix {
        classes,
        entries,
        kind: NoiseKind::Symmetric { eta },
    })
}

pub fn pairflip_matrix(classes: usize, eta: f64, mapping: &[usize]) -> Result<TransitionMatrix> {
    check_classes(classes)?;
    check_rate(eta)?;
    if mapping.len() != classes {
        return Err(Error::InvalidParameter(format!(
            "mapping has {} entries for {classes} classes",
            mapping.len()
        )));
    }
    let mut seen = vec![false; classes];
    for (k, &target) in mapping.iter().enumerate() {
        if target >= classes || seen[target] {
            return Err(Error::InvalidParameter("mapping is not a permutation".into()));
        }
        if target == k {
            return Err(Error::InvalidParameter(format!("mapping fixes class {k}")));
        }
        seen[target] = true;
    }
    let mut entries = vec![0.0; classes * classes];
    for (k, &target) in mapping.iter().enumerate() {
        entries[k * classes + k] = 1.0 - eta;
        entries[target * classes + k] = eta;
    }
    Ok(TransitionMatrix {
        classes,
        entries,
        kind: NoiseKind::PairFlip {
            eta,
            mapping: mapping.to_vec(),
        },
    })
}

impl TransitionMatrix {
    /// Arbitrary column-stochastic matrix given row-major as `rows[j][k]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.len();
        check_classes(classes)?;
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::InvalidParameter("transition matrix is not square".into()));
        }
        let entries: Vec<f64> = rows.iter().flatten().copied().collect();
        let t = TransitionMatrix {
            classes,
            entries,
            kind: NoiseKind::Custom,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if self.entries.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "negative or non-finite transition entry".into(),
            ));
        }
        for k in 0..self.classes {
            let sum: f64 = self.column(k).sum();
            if (sum - 1.0).abs() > COLUMN_TOL {
                return Err(Error::InvalidParameter(format!("column {k} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    /// `Pr(noisy = j | clean = k)`.
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.entries[j * self.classes + k]
    }

    /// Noisy-label distribution for clean class `k`.
    pub fn column(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.classes).map(move |j| self.get(j, k))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.classes).map(<[f64]>::to_vec).collect()
    }

    /// Symmetric noise with `eta < 1 - 1/C`, the regime of the symmetric
    /// risk bound.
    pub fn symmetric_bound_applies(&self) -> bool {
        match self.kind {
            NoiseKind::Symmetric { eta } => eta < 1.0 - 1.0 / self.classes as f64,
            _ => false,
        }
    }

    /// `T[j][k] <= T[k][k]` for every `j != k`, the regime of the asymmetric
    /// risk bound.
    pub fn diagonal_dominant(&self) -> bool {
        (0..self.classes).all(|k| {
            let diag = self.get(k, k);
            (0..self.classes).all(|j| j == k || self.get(j, k) <= diag)
        })
    }

    fn sample(&self, clean: usize, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last = clean;
        for j in 0..self.classes {
            let p = self.get(j, clean);
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
        // u landed in the rounding gap above the final cumulative sum
        last
    }
}

/// Compact noise description, `sym:<rate>` or `pair:<rate>[:mapping=cycle]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseSpec {
    Symmetric { eta: f64 },
    PairCycle { eta: f64 },
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec::Symmetric { eta: 0.0 }
    }

    pub fn rate(&self) -> f64 {
        match *self {
            NoiseSpec::Symmetric { eta } | NoiseSpec::PairCycle { eta } => eta,
        }
    }

    pub fn matrix(&self, classes: usize) -> Result<TransitionMatrix> {
        match *self {
            NoiseSpec::Symmetric { eta } => symmetric_matrix(classes, eta),
            NoiseSpec::PairCycle { eta } => pairflip_matrix(classes, eta, &cycle_mapping(classes)),
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseSpec::Symmetric { eta } => write!(f, "sym:{eta}"),
            NoiseSpec::PairCycle { eta } => write!(f, "pair:{eta}"),
        }
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bad noise spec {s:?}"));
        let mut parts = s.split(':');
        let kind = parts.next().ok_or_else(bad)?;
        let eta: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        check_rate(eta)?;
        let spec = match kind {
            "sym" => NoiseSpec::Symmetric { eta },
            "pair" => {
                match parts.next() {
                    None | Some("mapping=cycle") => {}
                    Some(_) => return Err(bad()),
                }
                NoiseSpec::PairCycle { eta }
            }
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    /// Expected flip rate for these labels, `mean(1 - T[y][y])`.
    pub requested_rate: f64,
    pub empirical_rate: f64,
    /// Number of flipped samples per clean class.
    pub flips_per_class: Vec<u64>,
    pub samples_per_class: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub noisy: Vec<usize>,
    pub mask: Vec<bool>,
    pub report: NoiseReport,
}

/// Draws each noisy label independently from column `labels[i]` of `t`,
/// using one uniform from sub-stream `i` of `seed`.
pub fn corrupt(labels: &[usize], t: &TransitionMatrix, seed: u64) -> Result<Corruption> {
    let classes = t.classes();
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::InvalidInput(format!(
            "label {y} at index {i} not below {classes}"
        )));
    }
    let mut flips = vec![0u64; classes];
    let mut counts = vec![0u64; classes];
    let mut noisy = Vec::with_capacity(labels.len());
    let mut mask = Vec::with_capacity(labels.len());
    let mut expected = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let u: f64 = rng::stream(seed, i as u64).gen();
        let j = t.sample(y, u);
        counts[y] += 1;
        expected += 1.0 - t.get(y, y);
        if j != y {
            flips[y] += 1;
        }
        noisy.push(j);
        mask.push(j != y);
    }
    let n = labels.len().max(1) as f64;
    let flipped: u64 = flips.iter().sum();
    Ok(Corruption {
        noisy,
        mask,
        report: NoiseReport {
            requested_rate: expected / n,
            empirical_rate: flipped as f64 / n,
            flips_per_class: flips,
            samples_per_class: counts,
        },
    })
}
