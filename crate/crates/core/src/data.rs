//! Datasets of unit-norm feature rows: synthetic strong-prior generation,
//! the DSPT-EMB binary format, CSV import and deterministic batching.
//!
//! DSPT-EMB v1 layout, all little-endian:
//!
//! ```text
//! "DSPTEMB1" | u32 n | u32 d | u32 C | n*d f32 features (row-major) | n u32 labels
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::model::UNIT_TOL;
use crate::noise::{corrupt, NoiseReport, TransitionMatrix};
use crate::numerics::l2_norm;
use crate::rng;

pub const EMB_MAGIC: &[u8; 8] = b"DSPTEMB1";

/// Rows further than this from unit norm are rejected on load.
pub const RENORM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    classes: usize,
    dim: usize,
    features: Vec<f64>,
    clean: Vec<usize>,
    noisy: Vec<usize>,
    mask: Vec<bool>,
    split: Split,
}

impl Dataset {
    /// A clean dataset (noisy labels equal clean labels).
    pub fn new(features: Vec<f64>, labels: Vec<usize>, classes: usize, dim: usize, split: Split) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for {} rows of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        let ds = Dataset {
            classes,
            dim,
            features,
            noisy: labels.clone(),
            mask: vec![false; labels.len()],
            clean: labels,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks label ranges, mask consistency and unit-norm rows.
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidParameter(format!("{} classes", self.classes)));
        }
        for (i, (&c, &y)) in self.clean.iter().zip(&self.noisy).enumerate() {
            if c >= self.classes || y >= self.classes {
                return Err(Error::ClassOutOfRange {
                    index: c.max(y),
                    classes: self.classes,
                });
            }
            if self.mask[i] != (c != y) {
                return Err(Error::InvalidInput(format!("mask inconsistent at row {i}")));
            }
        }
        for (i, row) in self.features.chunks(self.dim).enumerate() {
            let norm = l2_norm(row);
            if norm.is_nan() || (norm - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidInput(format!("row {i} has norm {norm}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn clean(&self) -> &[usize] {
        &self.clean
    }

    pub fn noisy(&self) -> &[usize] {
        &self.noisy
    }

    /// `mask[i]` is true when sample `i` carries a wrong label.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn noisy_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Replaces the noisy labels by a draw from `t`. Test splits stay clean.
    pub fn corrupt(&mut self, t: &TransitionMatrix, seed: u64) -> Result<NoiseReport> {
        if self.split == Split::Test {
            return Err(Error::InvalidInput("test splits are never corrupted".into()));
        }
        if t.classes() != self.classes {
            return Err(Error::DimensionMismatch(format!(
                "{}-class transition matrix for {} classes",
                t.classes(),
                self.classes
            )));
        }
        let c = corrupt(&self.clean, t, seed)?;
        self.noisy = c.noisy;
        self.mask = c.mask;
        self.validate()?;
        Ok(c.report)
    }

    pub fn write_emb<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(EMB_MAGIC)?;
        for v in [self.len(), self.dim, self.classes] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in &self.features {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        for y in &self.clean {
            w.write_all(&(*y as u32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_emb(File::create(path)?)
    }

    /// Parses DSPT-EMB bytes. Rows within [`RENORM_TOL`] of unit norm are
    /// re-normalized when they miss it by more than [`UNIT_TOL`].
    pub fn read_emb<R: Read>(r: R, split: Split) -> Result<Self> {
        let mut r = ByteReader::new(BufReader::new(r));
        let magic = r.bytes(8)?;
        if magic != EMB_MAGIC {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(EMB_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            }
            .into());
        }
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let classes = r.u32()?;
        if dim == 0 || classes < 2 {
            return Err(FormatError::DimensionMismatch(format!("d={dim}, C={classes}")).into());
        }
        let mut features = Vec::with_capacity(n.saturating_mul(dim).min(1 << 26));
        for row in 0..n {
            for col in 0..dim {
                let v = r.f32()?;
                if !v.is_finite() {
                    return Err(FormatError::NonFinite { row, col }.into());
                }
                features.push(v as f64);
            }
        }
        let mut labels = Vec::with_capacity(n.min(1 << 26));
        for row in 0..n {
            let label = r.u32()?;
            if label >= classes {
                return Err(FormatError::LabelOutOfRange { row, label, classes }.into());
            }
            labels.push(label as usize);
        }
        r.expect_end()?;
        renormalize_rows(&mut features, dim)?;
        Dataset::new(features, labels, classes as usize, dim, split)
    }

    pub fn load(path: &Path, split: Split) -> Result<Self> {
        Self::read_emb(File::open(path)?, split)
    }

    /// CSV with header `label,f0,...,f{d-1}`. Floats go through Rust's
    /// standard `f64` parser; the class count is given by the caller.
    pub fn read_csv<R: Read>(r: R, classes: usize, split: Split) -> Result<Self> {
        let csv_err = |m: String| Error::from(FormatError::Csv(m));
        let mut text = String::new();
        BufReader::new(r).read_to_string(&mut text)?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| csv_err("missing header".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"label") || cols.len() < 2 {
            return Err(csv_err(format!("bad header {header:?}")));
        }
        for (k, name) in cols[1..].iter().enumerate() {
            if *name != format!("f{k}") {
                return Err(csv_err(format!("column {} should be f{k}, found {name}", k + 1)));
            }
        }
        let dim = cols.len() - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (row, (lineno, line)) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(FormatError::DimensionMismatch(format!(
                    "line {} has {} fields, expected {}",
                    lineno + 1,
                    fields.len(),
                    dim + 1
                ))
                .into());
            }
            let label: u32 = fields[0]
                .parse()
                .map_err(|_| csv_err(format!("bad label {:?} on line {}", fields[0], lineno + 1)))?;
            if label as usize >= classes {
                return Err(FormatError::LabelOutOfRange {
                    row,
                    label,
                    classes: classes as u32,
                }
                .into());
            }
            labels.push(label as usize);
            for (col, f) in fields[1..].iter().enumerate() {
                let v: f64 = f
                    .parse()
                    .map_err(|_| csv_err(format!("bad float {f:?} on line {}", lineno + 1)))?;
                if !v.is_finite() {
                    return Err(FormatError::NonFinite { row, col }.into());
                }
                features.push(v);
            }
        }
        renormalize_rows(&mut features, dim)?;
        Dataset::new(features, labels, classes, dim, split)
    }
}

fn renormalize_rows(features: &mut [f64], dim: usize) -> Result<()> {
    for (row, values) in features.chunks_mut(dim).enumerate() {
        let norm = l2_norm(values);
        let off = (norm - 1.0).abs();
        if off > RENORM_TOL {
            return Err(FormatError::NotUnitNorm { row, norm }.into());
        }
        if off > UNIT_TOL {
            values.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(())
}

/// Reads DSPT-EMB into a dataset (convenience wrapper over
/// [`Dataset::load`]).
pub fn load_embeddings(path: &Path, split: Split) -> Result<Dataset> {
    Dataset::load(path, split)
}

/// Little-endian reader that reports the byte offset of a short read.
pub(crate) struct ByteReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        let mut filled = 0;
        while filled < n {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(FormatError::Truncated {
                        offset: self.offset + filled as u64,
                        needed: (n - filled) as u64,
                    }
                    .into())
                }
                Ok(k) => filled += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += n as u64;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let v = self.bytes(N)?;
        Ok(v.try_into().expect("length checked"))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub(crate) fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(FormatError::TrailingBytes { offset: self.offset }.into()),
        }
    }
}

/// Parameters of the synthetic strong-prior generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub classes: usize,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Concentration: samples are `normalize(mean + g / sqrt(kappa))`.
    pub kappa: f64,
    /// Anchors are `normalize(mean + anchor_perturb * g' / sqrt(dim))`, so
    /// `anchor_perturb` is the expected norm of the anchor perturbation.
    pub anchor_perturb: f64,
    pub seed: u64,
}

/// Output of [`gen_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    pub train: Dataset,
    pub test: Dataset,
    /// Row-major `classes x dim` unit anchors.
    pub anchors: Vec<f64>,
    pub warnings: Vec<String>,
}

impl SyntheticBundle {
    /// The anchors as a dataset whose row `c` has label `c`, for DSPT-EMB
    /// export.
    pub fn anchor_set(&self) -> Dataset {
        anchor_dataset(&self.anchors, self.train.classes, self.train.dim)
    }
}

pub fn anchor_dataset(anchors: &[f64], classes: usize, dim: usize) -> Dataset {
    Dataset::new(anchors.to_vec(), (0..classes).collect(), classes, dim, Split::Test).expect("anchors are unit rows")
}

/// Recovers `classes x dim` anchors from a dataset holding one row per
/// class, ordered by label.
pub fn anchors_from_dataset(ds: &Dataset) -> Result<Vec<f64>> {
    let mut slot: Vec<Option<usize>> = vec![None; ds.classes()];
    for (i, &y) in ds.clean().iter().enumerate() {
        if slot[y].replace(i).is_some() {
            return Err(Error::InvalidInput(format!("anchor for class {y} appears twice")));
        }
    }
    let mut out = Vec::with_capacity(ds.classes() * ds.dim());
    for (c, s) in slot.iter().enumerate() {
        let i = s.ok_or_else(|| Error::InvalidInput(format!("no anchor for class {c}")))?;
        out.extend_from_slice(ds.row(i));
    }
    Ok(out)
}

/// Normalizes `v` and rounds it to `f32` precision so that DSPT-EMB
/// round trips are exact.
fn unit_f32(v: &mut [f64]) {
    let norm = l2_norm(v);
    for x in v.iter_mut() {
        *x = (*x / norm) as f32 as f64;
    }
}

fn gaussian(rng: &mut rng::Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn gen_synthetic(p: &SyntheticParams) -> Result<SyntheticBundle> {
    if p.classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes, got {}",
            p.classes
        )));
    }
    if p.dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if !(p.kappa > 0.0 && p.kappa.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "kappa must be positive, got {}",
            p.kappa
        )));
    }
    if !(p.anchor_perturb >= 0.0 && p.anchor_perturb.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "anchor_perturb must be non-negative, got {}",
            p.anchor_perturb
        )));
    }
    let mut warnings = Vec::new();
    if p.dim < p.classes {
        warnings.push(format!(
            "dim {} < classes {}: class means cannot be near-orthogonal",
            p.dim, p.classes
        ));
    }
    let seed = rng::derive(p.seed, rng::domain::DATA);
    let mut mean_rng = rng::stream(seed, 0);
    let means: Vec<Vec<f64>> = (0..p.classes)
        .map(|_| {
            let mut m = gaussian(&mut mean_rng, p.dim);
            let n = l2_norm(&m);
            m.iter_mut().for_each(|v| *v /= n);
            m
        })
        .collect();

    let perturb = p.anchor_perturb / (p.dim as f64).sqrt();
    let mut anchor_rng = rng::stream(seed, 1);
    let mut anchors = Vec::with_capacity(p.classes * p.dim);
    for mean in &means {
        let g = gaussian(&mut anchor_rng, p.dim);
        let mut a: Vec<f64> = mean.iter().zip(&g).map(|(m, e)| m + perturb * e).collect();
        unit_f32(&mut a);
        anchors.extend(a);
    }

    let spread = 1.0 / p.kappa.sqrt();
    let sample = |stream: u64, n: usize, split: Split| -> Result<Dataset> {
        let mut r = rng::stream(seed, stream);
        let mut features = Vec::with_capacity(n * p.dim);
        let labels: Vec<usize> = (0..n).map(|i| i % p.classes).collect();
        for &y in &labels {
            let g = gaussian(&mut r, p.dim);
            let mut x: Vec<f64> = means[y].iter().zip(&g).map(|(m, e)| m + spread * e).collect();
            unit_f32(&mut x);
            features.extend(x);
        }
        Dataset::new(features, labels, p.classes, p.dim, split)
    };
    Ok(SyntheticBundle {
        train: sample(2, p.n_train, Split::Train)?,
        test: sample(3, p.n_test, Split::Test)?,
        anchors,
        warnings,
    })
}

/// Index batches for one epoch: a shuffle keyed by `(seed, epoch)`, cut into
/// chunks of `batch_size` (the last one may be short).
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(rng::derive(seed, rng::domain::BATCHES), epoch as u64);
    order.shuffle(&mut r);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
