//! Per-sample losses with closed-form gradients with respect to the logits.
//!
//! Every gradient here is analytic. [`fd_gradient`] is the central-difference
//! oracle they are all tested against.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, log_sum_exp_unchecked, softmax_into, softmax_vec, LogitVector};

pub const DEFAULT_SMOOTHING_ALPHA: f64 = 0.2;
pub const DEFAULT_LOGITNORM_TAU: f64 = 1.0;
pub const DEFAULT_BOOTSTRAP_BETA: f64 = 0.8;
pub const DEFAULT_GCE_Q: f64 = 0.7;

/// Loss families. Parameters are validated by [`LossKind::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Dspt,
    Smoothing {
        alpha: f64,
    },
    LogitNorm {
        tau: f64,
    },
    LogitClip {
        tau: f64,
    },
    /// Soft bootstrapping; the model's own prediction in the target is
    /// treated as a constant.
    Bootstrap {
        beta: f64,
    },
    Nce,
    Gce {
        q: f64,
    },
    /// Cross-entropy on the squared-and-renormalized softmax.
    SquareNorm,
    /// Cross-entropy whose trainer drops samples the model disagrees with.
    SelectCe,
}

/// Loss value (nats) and its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEval {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossEval {
    pub fn grad_l1(&self) -> f64 {
        self.grad.iter().map(|g| g.abs()).sum()
    }
}

impl LossKind {
    pub fn smoothing() -> Self {
        LossKind::Smoothing {
            alpha: DEFAULT_SMOOTHING_ALPHA,
        }
    }

    pub fn logit_norm() -> Self {
        LossKind::LogitNorm {
            tau: DEFAULT_LOGITNORM_TAU,
        }
    }

    pub fn bootstrap() -> Self {
        LossKind::Bootstrap {
            beta: DEFAULT_BOOTSTRAP_BETA,
        }
    }

    pub fn gce() -> Self {
        LossKind::Gce { q: DEFAULT_GCE_Q }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidParameter(what));
        match *self {
            LossKind::Smoothing { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                bad(format!("smoothing alpha must lie in (0, 1), got {alpha}"))
            }
            LossKind::LogitNorm { tau } | LossKind::LogitClip { tau } if !(tau > 0.0 && tau.is_finite()) => {
                bad(format!("tau must be positive, got {tau}"))
            }
            LossKind::Bootstrap { beta } if !(beta > 0.0 && beta <= 1.0) => {
                bad(format!("bootstrap beta must lie in (0, 1], got {beta}"))
            }
            LossKind::Gce { q } if !(q > 0.0 && q <= 1.0) => bad(format!("gce q must lie in (0, 1], got {q}")),
            _ => Ok(()),
        }
    }

    /// Short lowercase name used in file names and CSV rows.
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Dspt => "dspt",
            LossKind::Smoothing { .. } => "smoothing",
            LossKind::LogitNorm { .. } => "logitnorm",
            LossKind::LogitClip { .. } => "logitclip",
            LossKind::Bootstrap { .. } => "bootstrap",
            LossKind::Nce => "nce",
            LossKind::Gce { .. } => "gce",
            LossKind::SquareNorm => "square",
            LossKind::SelectCe => "select",
        }
    }

    /// Whether the trainer should drop samples whose prediction disagrees
    /// with the given label.
    pub fn selects(&self) -> bool {
        matches!(self, LossKind::SelectCe)
    }

    pub fn eval(&self, z: &LogitVector, y: usize) -> Result<LossEval> {
        self.validate()?;
        check_label(y, z.classes())?;
        Ok(self.eval_unchecked(z.as_slice(), y))
    }

    /// Evaluation for callers that already validated the kind, the label
    /// and the finiteness of `z`.
    pub fn eval_unchecked(&self, z: &[f64], y: usize) -> LossEval {
        match *self {
            LossKind::Ce | LossKind::SelectCe => ce_slice(z, y),
            LossKind::Dspt => dspt_slice(z, y),
            LossKind::Smoothing { alpha } => smoothing_slice(z, y, alpha),
            LossKind::LogitNorm { tau } => logit_norm_slice(z, y, tau),
            LossKind::LogitClip { tau } => logit_clip_slice(z, y, tau),
            LossKind::Bootstrap { beta } => {
                let target = bootstrap_target(z, y, beta);
                soft_target_ce(z, &target)
            }
            LossKind::Nce => nce_slice(z, y),
            LossKind::Gce { q } => gce_slice(z, y, q),
            LossKind::SquareNorm => square_norm_slice(z, y),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Smoothing { alpha } => write!(f, "smoothing:{alpha}"),
            LossKind::LogitNorm { tau } => write!(f, "logitnorm:{tau}"),
            LossKind::LogitClip { tau } => write!(f, "logitclip:{tau}"),
            LossKind::Bootstrap { beta } => write!(f, "bootstrap:{beta}"),
            LossKind::Gce { q } => write!(f, "gce:{q}"),
            other => f.write_str(other.name()),
        }
    }
}

/// Parses `name` or `name:param`, e.g. `dspt`, `smoothing:0.1`,
/// `logitclip:0.5`. Parameter-free forms take the documented defaults, except
/// `logitclip`, whose threshold is mandatory.
impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let param = param
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::InvalidParameter(format!("bad loss parameter {p:?}")))
            })
            .transpose()?;
        let no_param = |kind: LossKind| match param {
            None => Ok(kind),
            Some(_) => Err(Error::InvalidParameter(format!("loss {name} takes no parameter"))),
        };
        let kind = match name.to_ascii_lowercase().as_str() {
            "ce" => no_param(LossKind::Ce)?,
            "dspt" => no_param(LossKind::Dspt)?,
            "nce" => no_param(LossKind::Nce)?,
            "square" | "squarenorm" => no_param(LossKind::SquareNorm)?,
            "select" | "selectce" => no_param(LossKind::SelectCe)?,
            "smoothing" => LossKind::Smoothing {
                alpha: param.unwrap_or(DEFAULT_SMOOTHING_ALPHA),
            },
            "logitnorm" => LossKind::LogitNorm {
                tau: param.unwrap_or(DEFAULT_LOGITNORM_TAU),
            },
            "bootstrap" => LossKind::Bootstrap {
                beta: param.unwrap_or(DEFAULT_BOOTSTRAP_BETA),
            },
            "gce" => LossKind::Gce {
                q: param.unwrap_or(DEFAULT_GCE_Q),
            },
            "logitclip" => LossKind::LogitClip {
                tau: param.ok_or_else(|| Error::InvalidParameter("logitclip requires an explicit tau".into()))?,
            },
            other => return Err(Error::InvalidParameter(format!("unknown loss {other:?}"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

fn check_label(y: usize, classes: usize) -> Result<()> {
    if y >= classes {
        Err(Error::ClassOutOfRange { index: y, classes })
    } else {
        Ok(())
    }
}

/// Cross-entropy `-log softmax(z)_y`, gradient `p - e_y`.
pub fn ce_eval(z: &LogitVector, y: usize) -> Result<LossEval> {
    check_label(y, z.classes())?;
    Ok(ce_slice(z.as_slice(), y))
}

/// Double-softmax cross-entropy `-log softmax(softmax(z))_y`.
pub fn dspt_eval(z: &LogitVector, y: usize) -> Result<LossEval> {
    check_label(y, z.classes())?;
    Ok(dspt_slice(z.as_slice(), y))
}

/// Any of the baseline losses (and CE/DSPT) by kind.
pub fn baseline_eval(kind: LossKind, z: &LogitVector, y: usize) -> Result<LossEval> {
    kind.eval(z, y)
}

/// Bounds `[log(1 + (C-1)/e), log(e + C - 1)]` on the double-softmax loss.
pub fn dspt_loss_bounds(classes: usize) -> (f64, f64) {
    let e = std::f64::consts::E;
    let c = classes as f64;
    ((1.0 + (c - 1.0) / e).ln(), (e + c - 1.0).ln())
}

fn ce_slice(z: &[f64], y: usize) -> LossEval {
    let lse = log_sum_exp_unchecked(z);
    let mut grad = softmax_vec(z);
    grad[y] -= 1.0;
    LossEval {
        value: lse - z[y],
        grad,
    }
}

/// Pulls an upstream gradient `g` (with respect to `softmax(a)`'s logits
/// side, i.e. `dL/da` of an outer loss on `s = softmax(a)` expressed as
/// `dL/ds`) back through the softmax Jacobian: `s ⊙ (g - <s, g>)`.
fn softmax_vjp(s: &[f64], g: &[f64]) -> Vec<f64> {
    let inner = dot(s, g);
    s.iter().zip(g).map(|(si, gi)| si * (gi - inner)).collect()
}

fn dspt_slice(z: &[f64], y: usize) -> LossEval {
    let p = softmax_vec(z);
    // Outer cross-entropy on logits p: value lse(p) - p_y, gradient q - e_y.
    let mut outer = softmax_vec(&p);
    let value = log_sum_exp_unchecked(&p) - p[y];
    outer[y] -= 1.0;
    LossEval {
        value,
        grad: softmax_vjp(&p, &outer),
    }
}

fn smoothing_slice(z: &[f64], y: usize, alpha: f64) -> LossEval {
    let c = z.len() as f64;
    let mut target = vec![alpha / c; z.len()];
    target[y] += 1.0 - alpha;
    soft_target_ce(z, &target)
}

/// `-Σ t_i log softmax(z)_i` for a constant target `t` summing to one;
/// gradient `p - t`.
fn soft_target_ce(z: &[f64], target: &[f64]) -> LossEval {
    let lse = log_sum_exp_unchecked(z);
    let value = target
        .iter()
        .zip(z)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, zi)| t * (lse - zi))
        .sum();
    let mut grad = softmax_vec(z);
    for (g, t) in grad.iter_mut().zip(target) {
        *g -= t;
    }
    LossEval { value, grad }
}

fn bootstrap_target(z: &[f64], y: usize, beta: f64) -> Vec<f64> {
    let mut target = softmax_vec(z);
    for t in target.iter_mut() {
        *t *= 1.0 - beta;
    }
    target[y] += beta;
    target
}

/// Pulls `g = dL/dw` back through `w = scale_num * z / ‖z‖` where the factor
/// `scale_num / ‖z‖` multiplies the projection off the radial direction.
fn radial_vjp(z: &[f64], norm: f64, factor: f64, g: &[f64]) -> Vec<f64> {
    let radial = dot(z, g) / (norm * norm);
    z.iter().zip(g).map(|(zi, gi)| factor * (gi - radial * zi)).collect()
}

fn logit_norm_slice(z: &[f64], y: usize, tau: f64) -> LossEval {
    let norm = l2_norm(z);
    if norm == 0.0 {
        // z/‖z‖ is undefined at the origin; treat it as the uniform point.
        let inner = ce_slice(z, y);
        return LossEval {
            value: inner.value,
            grad: vec![0.0; z.len()],
        };
    }
    let factor = 1.0 / (tau * norm);
    let w: Vec<f64> = z.iter().map(|zi| zi * factor).collect();
    let inner = ce_slice(&w, y);
    LossEval {
        value: inner.value,
        grad: radial_vjp(z, norm, factor, &inner.grad),
    }
}

fn logit_clip_slice(z: &[f64], y: usize, tau: f64) -> LossEval {
    let norm = l2_norm(z);
    if norm <= tau {
        return ce_slice(z, y);
    }
    let factor = tau / norm;
    let w: Vec<f64> = z.iter().map(|zi| zi * factor).collect();
    let inner = ce_slice(&w, y);
    LossEval {
        value: inner.value,
        grad: radial_vjp(z, norm, factor, &inner.grad),
    }
}

fn nce_slice(z: &[f64], y: usize) -> LossEval {
    let c = z.len() as f64;
    let lse = log_sum_exp_unchecked(z);
    let p = softmax_vec(z);
    let num = lse - z[y];
    let den = c * lse - z.iter().sum::<f64>();
    let grad = p
        .iter()
        .enumerate()
        .map(|(k, &pk)| {
            let d_num = pk - if k == y { 1.0 } else { 0.0 };
            let d_den = c * pk - 1.0;
            (d_num * den - num * d_den) / (den * den)
        })
        .collect();
    LossEval { value: num / den, grad }
}

fn gce_slice(z: &[f64], y: usize, q: f64) -> LossEval {
    let p = softmax_vec(z);
    // p_y^q computed in log space to stay accurate when p_y underflows.
    let log_py = z[y] - log_sum_exp_unchecked(z);
    let py_q = (q * log_py).exp();
    let grad = p
        .iter()
        .enumerate()
        .map(|(k, &pk)| py_q * (pk - if k == y { 1.0 } else { 0.0 }))
        .collect();
    LossEval {
        value: (1.0 - py_q) / q,
        grad,
    }
}

fn square_norm_slice(z: &[f64], y: usize) -> LossEval {
    // p_i^2 / Σ p_j^2 = softmax(2z)_i
    let doubled: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
    let mut grad = vec![0.0; z.len()];
    softmax_into(&doubled, &mut grad);
    grad[y] -= 1.0;
    for g in grad.iter_mut() {
        *g *= 2.0;
    }
    LossEval {
        value: log_sum_exp_unchecked(&doubled) - doubled[y],
        grad,
    }
}

/// Central finite differences of the loss value, one coordinate at a time.
///
/// For [`LossKind::Bootstrap`] the target is frozen at `z` before
/// differencing, matching the detached target of the analytic gradient.
pub fn fd_gradient(kind: LossKind, z: &LogitVector, y: usize, h: f64) -> Result<Vec<f64>> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidParameter(format!("step h={h} outside [1e-7, 1e-3]")));
    }
    kind.validate()?;
    check_label(y, z.classes())?;
    let frozen = match kind {
        LossKind::Bootstrap { beta } => Some(bootstrap_target(z.as_slice(), y, beta)),
        _ => None,
    };
    let value = |point: &[f64]| match &frozen {
        Some(target) => soft_target_ce(point, target).value,
        None => kind.eval_unchecked(point, y).value,
    };
    let mut point = z.as_slice().to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = point[i];
        point[i] = orig + h;
        let up = value(&point);
        point[i] = orig - h;
        let down = value(&point);
        point[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Worst coordinate-wise discrepancy between two gradients, relative to the
/// larger of their infinity norms floored at [`GRAD_REL_FLOOR`].
pub fn gradient_rel_error(analytic: &[f64], oracle: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf(analytic).max(inf(oracle)).max(GRAD_REL_FLOOR);
    analytic
        .iter()
        .zip(oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Below this gradient magnitude the relative check becomes absolute.
pub const GRAD_REL_FLOOR: f64 = 1e-3;
