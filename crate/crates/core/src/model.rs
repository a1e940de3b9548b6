//! Prototype classifier with frozen class anchors and a learnable shift.
//!
//! Logits are `z_c = scale * <x, normalize(anchor_c + shift_c)>`, where
//! `shift_c` is one vector shared by all classes ([`ShiftMode::Shared`]) or a
//! separate vector per class ([`ShiftMode::PerClass`]). With a zero shift the
//! model predicts exactly as the anchors do.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::numerics::{argmax, dot, l2_norm, LogitVector};

pub const DEFAULT_SCALE: f64 = 30.0;

/// Inputs must be unit-norm within this tolerance.
pub const UNIT_TOL: f64 = 1e-6;

/// `‖anchor + shift‖` below this is rejected instead of normalized.
pub const DEGENERATE_NORM: f64 = 1e-8;

const CHECKPOINT_MAGIC: &[u8; 8] = b"DSPTCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    #[default]
    Shared,
    #[serde(alias = "per-class")]
    PerClass,
}

impl std::str::FromStr for ShiftMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(ShiftMode::Shared),
            "per-class" | "per_class" | "perclass" => Ok(ShiftMode::PerClass),
            other => Err(Error::InvalidParameter(format!("unknown shift mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeModel {
    classes: usize,
    dim: usize,
    anchors: Vec<f64>,
    shift: Vec<f64>,
    scale: f64,
    mode: ShiftMode,
}

fn check_unit(x: &[f64]) -> Result<()> {
    let norm = l2_norm(x);
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidInput(format!("feature norm {norm} is not 1")));
    }
    Ok(())
}

impl PrototypeModel {
    /// Builds a model from row-major `classes x dim` anchors. Rows are
    /// normalized; a zero row is an error. The shift starts at zero.
    pub fn new(anchors: Vec<f64>, classes: usize, dim: usize, scale: f64, mode: ShiftMode) -> Result<Self> {
        if classes < 2 || dim == 0 {
            return Err(Error::InvalidParameter(format!("bad model shape {classes}x{dim}")));
        }
        if anchors.len() != classes * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} anchor values for {classes}x{dim}",
                anchors.len()
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
        }
        let mut anchors = anchors;
        for (c, row) in anchors.chunks_mut(dim).enumerate() {
            let norm = l2_norm(row);
            if !(norm.is_finite() && norm >= DEGENERATE_NORM) {
                return Err(Error::DegenerateEmbedding { class: c, norm });
            }
            if (norm - 1.0).abs() > UNIT_TOL {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        let shift_len = match mode {
            ShiftMode::Shared => dim,
            ShiftMode::PerClass => classes * dim,
        };
        Ok(Self {
            classes,
            dim,
            anchors,
            shift: vec![0.0; shift_len],
            scale,
            mode,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mode(&self) -> ShiftMode {
        self.mode
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn anchor(&self, c: usize) -> &[f64] {
        &self.anchors[c * self.dim..(c + 1) * self.dim]
    }

    /// Learnable parameters: `dim` values in shared mode, `classes * dim`
    /// in per-class mode.
    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn set_shift(&mut self, shift: Vec<f64>) -> Result<()> {
        if shift.len() != self.shift.len() || shift.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(format!(
                "shift of length {} for {} parameters",
                shift.len(),
                self.shift.len()
            )));
        }
        self.shift = shift;
        Ok(())
    }

    /// `shift -= lr * grad`.
    pub fn apply_update(&mut self, grad: &[f64], lr: f64) {
        debug_assert_eq!(grad.len(), self.shift.len());
        for (s, g) in self.shift.iter_mut().zip(grad) {
            *s -= lr * g;
        }
    }

    fn shift_for(&self, c: usize) -> &[f64] {
        match self.mode {
            ShiftMode::Shared => &self.shift,
            ShiftMode::PerClass => &self.shift[c * self.dim..(c + 1) * self.dim],
        }
    }

    /// Normalized class embeddings for the current parameters.
    pub fn embeddings(&self) -> Result<Embeddings> {
        self.embeddings_with(|c| self.shift_for(c))
    }

    fn embeddings_with<'a>(&'a self, shift: impl Fn(usize) -> &'a [f64]) -> Result<Embeddings> {
        let mut unit = Vec::with_capacity(self.classes * self.dim);
        let mut inv_norm = Vec::with_capacity(self.classes);
        for c in 0..self.classes {
            let start = unit.len();
            unit.extend(self.anchor(c).iter().zip(shift(c)).map(|(a, s)| a + s));
            let norm = l2_norm(&unit[start..]);
            if !(norm.is_finite() && norm >= DEGENERATE_NORM) {
                return Err(Error::DegenerateEmbedding { class: c, norm });
            }
            unit[start..].iter_mut().for_each(|v| *v /= norm);
            inv_norm.push(1.0 / norm);
        }
        Ok(Embeddings {
            classes: self.classes,
            dim: self.dim,
            scale: self.scale,
            mode: self.mode,
            unit,
            inv_norm,
        })
    }

    /// Embeddings of the untouched anchors.
    pub fn zero_shot_embeddings(&self) -> Embeddings {
        let zero = vec![0.0; self.dim];
        self.embeddings_with(|_| &zero)
            .expect("anchors are unit-norm by construction")
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "feature of length {} for model dim {}",
                x.len(),
                self.dim
            )));
        }
        check_unit(x)
    }

    pub fn forward(&self, x: &[f64]) -> Result<LogitVector> {
        self.check_input(x)?;
        let emb = self.embeddings()?;
        LogitVector::new(emb.logits(x))
    }

    /// Gradient of `<upstream, forward(x)>` with respect to the shift.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if upstream.len() != self.classes || upstream.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidInput(
                "upstream must be finite with one entry per class".into(),
            ));
        }
        let emb = self.embeddings()?;
        let mut grad = vec![0.0; self.shift.len()];
        emb.accumulate_backward(x, upstream, 1.0, &mut grad);
        Ok(grad)
    }

    /// Class predicted by the anchors alone; ties go to the lowest index.
    pub fn zero_shot_predict(&self, x: &[f64]) -> Result<usize> {
        self.check_input(x)?;
        Ok(argmax(&self.zero_shot_embeddings().logits(x)))
    }

    /// Writes the versioned little-endian `f32` checkpoint.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.classes as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        let mode: u32 = match self.mode {
            ShiftMode::Shared => 0,
            ShiftMode::PerClass => 1,
        };
        w.write_all(&mode.to_le_bytes())?;
        w.write_all(&(self.scale as f32).to_le_bytes())?;
        for v in self.anchors.iter().chain(&self.shift) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self> {
        let mut r = crate::data::ByteReader::new(r);
        let magic = r.bytes(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            }
            .into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::Version(version).into());
        }
        let classes = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mode = match r.u32()? {
            0 => ShiftMode::Shared,
            1 => ShiftMode::PerClass,
            m => return Err(FormatError::DimensionMismatch(format!("unknown mode tag {m}")).into()),
        };
        let scale = r.f32()? as f64;
        let mut anchors = Vec::with_capacity(classes * dim);
        for _ in 0..classes * dim {
            anchors.push(r.f32()? as f64);
        }
        let mut model = PrototypeModel::new(anchors, classes, dim, scale, mode)?;
        let mut shift = Vec::with_capacity(model.shift.len());
        for _ in 0..model.shift.len() {
            shift.push(r.f32()? as f64);
        }
        model.set_shift(shift)?;
        r.expect_end()?;
        Ok(model)
    }
}

/// Normalized class embeddings, computed once per parameter state.
#[derive(Debug, Clone)]
pub struct Embeddings {
    classes: usize,
    dim: usize,
    scale: f64,
    mode: ShiftMode,
    unit: Vec<f64>,
    inv_norm: Vec<f64>,
}

impl Embeddings {
    pub fn classes(&self) -> usize {
        self.classes
    }

    fn row(&self, c: usize) -> &[f64] {
        &self.unit[c * self.dim..(c + 1) * self.dim]
    }

    pub fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.scale * dot(x, self.row(c));
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.classes];
        self.logits_into(x, &mut out);
        out
    }

    /// Adds `weight * d<upstream, z(x)>/d shift` into `grad`.
    ///
    /// For `w = v/‖v‖` with `v = anchor + shift`,
    /// `d<x, w>/dv = (x - <x, w> w) / ‖v‖`.
    pub fn accumulate_backward(&self, x: &[f64], upstream: &[f64], weight: f64, grad: &mut [f64]) {
        for (c, &u) in upstream.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            let w = self.row(c);
            let cos = dot(x, w);
            let coef = weight * self.scale * u * self.inv_norm[c];
            let target = match self.mode {
                ShiftMode::Shared => &mut grad[..],
                ShiftMode::PerClass => &mut grad[c * self.dim..(c + 1) * self.dim],
            };
            for ((g, xi), wi) in target.iter_mut().zip(x).zip(w) {
                *g += coef * (xi - cos * wi);
            }
        }
    }
}
