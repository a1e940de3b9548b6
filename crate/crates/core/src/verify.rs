//! Executable checks of the double-softmax loss: the closed-form gradient,
//! gradient vanishing on confident mistakes, the 1-nat loss bounds, and
//! the symmetric/asymmetric noise risk bounds via an exhaustive
//! simplex-grid oracle.
//!
//! A report folds several sub-checks into one number. Each sub-check
//! measures a quantity against its own tolerance, and the report's
//! `worst_violation` is the largest `measured / tolerance` ratio seen, so
//! the report passes iff that ratio is at most `tolerance = 1`.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::benchmark::Benchmark;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{dspt_eval, dspt_loss_bounds, gradient_rel_error, LossKind};
use crate::model::PrototypeModel;
use crate::noise::{symmetric_matrix, TransitionMatrix};
use crate::numerics::LogitVector;
use crate::rng::{self, Rng};
use crate::trainer::{evaluate, grad_audit, AuditSummary};

pub const GRAD_ABS_TOL: f64 = 1e-10;
pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const BOUND_SLACK: f64 = 1e-9;
pub const WIDTH_TOL: f64 = 1e-12;
pub const ENDPOINT_TOL: f64 = 1e-6;
pub const ENDPOINT_SPREAD: f64 = 40.0;
/// Largest class count for which the 1-nat identity is checked.
pub const IDENTITY_MAX_CLASSES: usize = 10_000;
/// Minimum accuracy and mean top-class probability for a strong prior.
pub const PRIOR_MIN_ACC: f64 = 0.8;
pub const PRIOR_MIN_CONFIDENCE: f64 = 0.5;
pub const SEPARATION_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub status: Status,
    pub pass: bool,
    pub trials: u64,
    /// `None` when the check was not applicable.
    pub worst_violation: Option<f64>,
    pub tolerance: f64,
    /// Input of the worst failing sub-check.
    pub witness: Option<Value>,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    fn not_applicable(check: &str, note: String, metrics: BTreeMap<String, f64>) -> Self {
        VerificationReport {
            check: check.into(),
            status: Status::NotApplicable,
            pass: false,
            trials: 0,
            worst_violation: None,
            tolerance: 1.0,
            witness: None,
            metrics,
            notes: vec![note],
        }
    }

    pub fn applicable(&self) -> bool {
        self.status != Status::NotApplicable
    }
}

struct Tally {
    check: &'static str,
    trials: u64,
    worst: f64,
    witness: Option<Value>,
    metrics: BTreeMap<String, f64>,
    notes: Vec<String>,
}

impl Tally {
    fn new(check: &'static str) -> Self {
        Tally {
            check,
            trials: 0,
            worst: 0.0,
            witness: None,
            metrics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// Records `measured <= tol`. The witness is only built on failure.
    fn record(&mut self, measured: f64, tol: f64, witness: impl FnOnce() -> Value) {
        let ratio = if measured.is_nan() {
            f64::MAX
        } else {
            (measured / tol).max(0.0)
        };
        if ratio > self.worst {
            self.worst = ratio;
            if ratio > 1.0 {
                self.witness = Some(witness());
            }
        }
    }

    fn metric(&mut self, key: impl Into<String>, v: f64) {
        self.metrics.insert(key.into(), v);
    }

    fn max_metric(&mut self, key: &str, v: f64) {
        let e = self.metrics.entry(key.into()).or_insert(f64::NEG_INFINITY);
        *e = e.max(v);
    }

    fn finish(self) -> VerificationReport {
        let pass = self.worst <= 1.0;
        VerificationReport {
            check: self.check.into(),
            status: if pass { Status::Pass } else { Status::Fail },
            pass,
            trials: self.trials,
            worst_violation: Some(self.worst),
            tolerance: 1.0,
            witness: self.witness,
            metrics: self.metrics,
            notes: self.notes,
        }
    }
}

fn check_rng(seed: u64, check: u64) -> Rng {
    rng::stream(rng::derive(seed, rng::domain::VERIFY), check)
}

fn check_classes(range: &RangeInclusive<usize>) -> Result<()> {
    if *range.start() < 2 || range.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "class range {range:?} needs at least 2 classes"
        )));
    }
    Ok(())
}

/// Logits with a random overall scale between 1e-2 and ~30.
fn random_logits(r: &mut Rng, c: usize) -> Vec<f64> {
    let scale = 10f64.powf(r.gen_range(-2.0..1.5));
    (0..c).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()
}

/// Logits spanning `[-spread/2, spread/2]`, both ends attained.
fn spread_logits(r: &mut Rng, c: usize, spread: f64) -> Vec<f64> {
    let mut z: Vec<f64> = (0..c).map(|_| r.gen_range(-spread / 2.0..=spread / 2.0)).collect();
    let hi = r.gen_range(0..c);
    let lo = (hi + r.gen_range(1..c)) % c;
    z[hi] = spread / 2.0;
    z[lo] = -spread / 2.0;
    z
}

fn naive_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Loss value computed directly from its definition.
fn naive_dspt_value(z: &[f64], y: usize) -> f64 {
    let p = naive_softmax(z);
    let q = naive_softmax(&p);
    -q[y].ln()
}

/// `p_i * [(q_i - [i = y]) + (p_y - Σ_j p_j q_j)]` with `p = softmax(z)`,
/// `q = softmax(p)`.
pub fn closed_form_gradient(z: &[f64], y: usize) -> Vec<f64> {
    let p = naive_softmax(z);
    let q = naive_softmax(&p);
    let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
    (0..z.len())
        .map(|i| {
            let hit = if i == y { 1.0 } else { 0.0 };
            p[i] * ((q[i] - hit) + (p[y] - pq))
        })
        .collect()
}

fn central_difference(z: &[f64], y: usize, h: f64) -> Vec<f64> {
    let mut w = z.to_vec();
    (0..z.len())
        .map(|i| {
            w[i] = z[i] + h;
            let up = naive_dspt_value(&w, y);
            w[i] = z[i] - h;
            let down = naive_dspt_value(&w, y);
            w[i] = z[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest `|log((e + C - 1) / (1 + (C - 1)/e)) - 1|` over `2..=max_classes`.
pub fn one_nat_identity_error(max_classes: usize) -> f64 {
    let e = std::f64::consts::E;
    (2..=max_classes)
        .map(|c| {
            let c = c as f64;
            (((e + c - 1.0) / (1.0 + (c - 1.0) / e)).ln() - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Analytic gradient against the closed form (absolute) and against
/// central differences (relative), on random and near-saturated logits.
pub fn check_prop31(trials: u64, classes: RangeInclusive<usize>, seed: u64) -> Result<VerificationReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    check_classes(&classes)?;
    let mut t = Tally::new("prop31");
    let mut r = check_rng(seed, 31);

    let uniform = dspt_eval(&LogitVector::new(vec![0.0; 3])?, 0)?.grad;
    let expected = [-2.0 / 9.0, 1.0 / 9.0, 1.0 / 9.0];
    t.record(
        max_abs_diff(&uniform, &expected),
        GRAD_ABS_TOL,
        || json!({ "z": [0.0, 0.0, 0.0], "y": 0 }),
    );

    let (mut worst_abs, mut worst_fd) = (0.0f64, 0.0f64);
    for trial in 0..trials {
        let c = r.gen_range(classes.clone());
        // every tenth trial sits in the saturated regime
        let z = if trial % 10 == 9 {
            spread_logits(&mut r, c, 60.0)
        } else {
            random_logits(&mut r, c)
        };
        let y = r.gen_range(0..c);
        let analytic = LossKind::Dspt.eval_unchecked(&z, y).grad;
        let formula = closed_form_gradient(&z, y);
        let fd = central_difference(&z, y, FD_STEP);
        let abs = max_abs_diff(&analytic, &formula);
        let rel = gradient_rel_error(&analytic, &fd);
        worst_abs = worst_abs.max(abs);
        worst_fd = worst_fd.max(rel);
        let wit = || json!({ "z": z, "y": y, "analytic": analytic, "closed_form": formula, "finite_difference": fd });
        t.record(abs, GRAD_ABS_TOL, wit);
        t.record(
            rel,
            FD_REL_TOL,
            || json!({ "z": z, "y": y, "analytic": analytic, "finite_difference": fd }),
        );
        t.trials += 1;
    }
    t.metric("max_abs_error_closed_form", worst_abs);
    t.metric("max_rel_error_finite_difference", worst_fd);
    t.metric("classes_min", *classes.start() as f64);
    t.metric("classes_max", *classes.end() as f64);
    Ok(t.finish())
}

/// `delta` values `1e-1, 1e-2, ..., 1e-8`.
pub fn default_deltas() -> Vec<f64> {
    (1..=8).map(|k| 10f64.powi(-k)).collect()
}

/// Confident-wrong inputs: `p_ŷ = 1 - δ` on a wrong class, the remaining
/// mass spread at random, `z = log p`. The total gradient must stay below
/// `5δ` and shrink with δ.
pub fn check_thm32(
    deltas: &[f64],
    classes: RangeInclusive<usize>,
    trials_per_delta: u64,
    seed: u64,
) -> Result<VerificationReport> {
    check_classes(&classes)?;
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0 && *d < 0.5)) {
        return Err(Error::InvalidParameter("deltas must lie in (0, 0.5)".into()));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("deltas must be strictly decreasing".into()));
    }
    if trials_per_delta == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let mut t = Tally::new("thm32");
    let mut r = check_rng(seed, 32);

    // z = [10, 0] with label 1
    let z = [10.0, 0.0];
    let delta0 = 1.0 / (1.0 + 10f64.exp());
    let l1 = LossKind::Dspt.eval_unchecked(&z, 1).grad_l1();
    t.metric("reference_z10_grad_l1", l1);
    t.record(l1, 5.0 * delta0, || json!({ "z": z, "y": 1 }));

    let mut means = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let (mut sum, mut max) = (0.0, 0.0f64);
        for _ in 0..trials_per_delta {
            let c = r.gen_range(classes.clone());
            let y = r.gen_range(0..c);
            let wrong = (y + r.gen_range(1..c)) % c;
            let mut p: Vec<f64> = (0..c).map(|_| r.gen_range(f64::EPSILON..1.0)).collect();
            p[wrong] = 0.0;
            let rest: f64 = p.iter().sum();
            for v in p.iter_mut() {
                *v *= delta / rest;
            }
            p[wrong] = 1.0 - delta;
            let z: Vec<f64> = p.iter().map(|v| v.ln()).collect();
            let l1 = LossKind::Dspt.eval_unchecked(&z, y).grad_l1();
            sum += l1;
            max = max.max(l1);
            t.record(
                l1,
                5.0 * delta,
                || json!({ "delta": delta, "z": z, "y": y, "grad_l1": l1 }),
            );
            t.trials += 1;
        }
        let mean = sum / trials_per_delta as f64;
        t.metric(format!("mean_grad_l1_delta_{delta:e}"), mean);
        t.metric(format!("max_grad_l1_delta_{delta:e}"), max);
        means.push((delta, mean, max));
    }
    for w in means.windows(2) {
        let ((d0, m0, _), (d1, m1, _)) = (w[0], w[1]);
        t.record(
            m1,
            m0,
            || json!({ "non_monotone": { "delta": [d0, d1], "mean_grad_l1": [m0, m1] } }),
        );
    }
    if let Some(&(delta, _, max)) = means.last() {
        if delta <= 1e-8 {
            t.record(max, 1e-7, || json!({ "delta": delta, "max_grad_l1": max }));
        }
    }
    Ok(t.finish())
}

/// The classes used for the loss-bound check by default.
pub const PROP33_CLASSES: [usize; 5] = [2, 3, 10, 101, 1000];

/// Loss values inside `[log(1 + (C-1)/e), log(e + C - 1)]` for random and
/// one-hot-limit logits, width exactly one nat, endpoints attained.
pub fn check_prop33(trials: u64, classes: &[usize], seed: u64) -> Result<VerificationReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    if classes.is_empty() || classes.iter().any(|c| *c < 2) {
        return Err(Error::InvalidParameter("class counts must be at least 2".into()));
    }
    let mut t = Tally::new("prop33");
    let mut r = check_rng(seed, 33);

    let identity = one_nat_identity_error(IDENTITY_MAX_CLASSES);
    t.metric("one_nat_identity_error", identity);
    t.record(
        identity,
        WIDTH_TOL,
        || json!({ "identity_up_to_classes": IDENTITY_MAX_CLASSES }),
    );

    for &c in classes {
        let (lo, hi) = dspt_loss_bounds(c);
        t.metric(format!("lower_c{c}"), lo);
        t.metric(format!("upper_c{c}"), hi);
        t.record(
            (hi - lo - 1.0).abs(),
            WIDTH_TOL,
            || json!({ "classes": c, "lower": lo, "upper": hi }),
        );
        let (mut seen_lo, mut seen_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for trial in 0..trials {
            let y = r.gen_range(0..c);
            let z = match trial % 4 {
                0 | 1 => random_logits(&mut r, c),
                2 => {
                    let spread = r.gen_range(1.0..200.0);
                    spread_logits(&mut r, c, spread)
                }
                _ => {
                    // near a one-hot limit, on the label or on a wrong class
                    let hot = if r.gen_bool(0.5) {
                        y
                    } else {
                        (y + r.gen_range(1..c)) % c
                    };
                    let mut z: Vec<f64> = (0..c).map(|_| r.gen_range(-1.0..1.0)).collect();
                    z[hot] = r.gen_range(ENDPOINT_SPREAD..1e3);
                    z
                }
            };
            let v = LossKind::Dspt.eval_unchecked(&z, y).value;
            seen_lo = seen_lo.min(v);
            seen_hi = seen_hi.max(v);
            let excess = (lo - v).max(v - hi);
            t.record(
                excess,
                BOUND_SLACK,
                || json!({ "classes": c, "z": z, "y": y, "loss": v, "bounds": [lo, hi] }),
            );
            t.trials += 1;
        }
        t.metric(format!("min_seen_c{c}"), seen_lo);
        t.metric(format!("max_seen_c{c}"), seen_hi);

        // endpoints at spread exactly ENDPOINT_SPREAD
        let mut z = vec![0.0; c];
        z[0] = ENDPOINT_SPREAD;
        let at_lo = LossKind::Dspt.eval_unchecked(&z, 0).value;
        let at_hi = LossKind::Dspt.eval_unchecked(&z, 1).value;
        t.metric(format!("endpoint_gap_lower_c{c}"), (at_lo - lo).abs());
        t.metric(format!("endpoint_gap_upper_c{c}"), (hi - at_hi).abs());
        t.record(
            (at_lo - lo).abs(),
            ENDPOINT_TOL,
            || json!({ "classes": c, "z": z, "y": 0, "loss": at_lo }),
        );
        t.record(
            (hi - at_hi).abs(),
            ENDPOINT_TOL,
            || json!({ "classes": c, "z": z, "y": 1, "loss": at_hi }),
        );
        t.trials += 2;
    }
    Ok(t.finish())
}

/// Size of the finite instances behind the risk-bound checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskParams {
    pub classes: usize,
    pub inputs: usize,
    pub grid: usize,
    pub instances: usize,
}

impl Default for RiskParams {
    fn default() -> Self {
        RiskParams {
            classes: 3,
            inputs: 4,
            grid: 40,
            instances: 20,
        }
    }
}

impl RiskParams {
    fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.classes) {
            return Err(Error::InvalidParameter(format!(
                "risk checks support 2 or 3 classes, got {}",
                self.classes
            )));
        }
        if self.grid < 10 {
            return Err(Error::InvalidParameter(format!(
                "grid must be at least 10, got {}",
                self.grid
            )));
        }
        if self.inputs == 0 || self.instances == 0 {
            return Err(Error::InvalidParameter(
                "need at least one input and one instance".into(),
            ));
        }
        Ok(())
    }

    pub fn slack(&self) -> f64 {
        2.0 / self.grid as f64
    }
}

/// All points of the simplex with coordinates in multiples of `1/grid`.
pub fn simplex_grid(classes: usize, grid: usize) -> Vec<Vec<f64>> {
    fn rec(prefix: &mut Vec<usize>, left: usize, slots: usize, grid: usize, out: &mut Vec<Vec<f64>>) {
        if slots == 1 {
            prefix.push(left);
            out.push(prefix.iter().map(|k| *k as f64 / grid as f64).collect());
            prefix.pop();
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            rec(prefix, left - k, slots - 1, grid, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(classes), grid, classes, grid, &mut out);
    out
}

/// Per grid point, the loss `-log softmax(p)_j` of every label `j`.
struct GridLosses {
    points: Vec<Vec<f64>>,
    losses: Vec<Vec<f64>>,
}

impl GridLosses {
    fn new(classes: usize, grid: usize) -> Self {
        let points = simplex_grid(classes, grid);
        let losses = points
            .iter()
            .map(|p| {
                let q = naive_softmax(p);
                q.iter().map(|v| -v.ln()).collect()
            })
            .collect();
        GridLosses { points, losses }
    }

    /// Expected loss at point `g` under label distribution `dist`.
    fn risk(&self, g: usize, dist: &[f64]) -> f64 {
        self.losses[g].iter().zip(dist).map(|(l, w)| l * w).sum()
    }

    /// Minimizer of the `primary` risk; among exact ties, the one with the
    /// largest `secondary` risk.
    fn argmin(&self, primary: &[f64], secondary: &[f64]) -> usize {
        let mut best = 0;
        for g in 1..self.points.len() {
            let (a, b) = (self.risk(g, primary), self.risk(best, primary));
            if a < b || (a == b && self.risk(g, secondary) > self.risk(best, secondary)) {
                best = g;
            }
        }
        best
    }
}

fn one_hot(c: usize, y: usize) -> Vec<f64> {
    let mut v = vec![0.0; c];
    v[y] = 1.0;
    v
}

/// The grid search must return the one-hot point on the label as the clean
/// minimizer, at every resolution tried.
fn validate_grid_oracle(t: &mut Tally, classes: usize, grid: usize) {
    for res in [10, 20, grid] {
        let g = GridLosses::new(classes, res);
        for y in 0..classes {
            let target = one_hot(classes, y);
            let best = g.argmin(&target, &target);
            let dist = max_abs_diff(&g.points[best], &target);
            t.record(dist, 1e-12, || json!({ "oracle_validation": { "classes": classes, "grid": res, "label": y, "minimizer": g.points[best] } }));
        }
    }
}

struct Instance {
    labels: Vec<usize>,
    weights: Vec<f64>,
}

fn random_instance(r: &mut Rng, classes: usize, inputs: usize) -> Instance {
    let labels = (0..inputs).map(|_| r.gen_range(0..classes)).collect();
    let raw: Vec<f64> = (0..inputs).map(|_| r.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    Instance {
        labels,
        weights: raw.into_iter().map(|w| w / s).collect(),
    }
}

/// Clean and noisy risks of the clean minimizer and of the noisy minimizer.
struct RiskOutcome {
    clean_of_clean_min: f64,
    clean_of_noisy_min: f64,
    noisy_of_clean_min: f64,
    noisy_of_noisy_min: f64,
}

fn solve(g: &GridLosses, inst: &Instance, t: &TransitionMatrix) -> RiskOutcome {
    let c = t.classes();
    let mut out = RiskOutcome {
        clean_of_clean_min: 0.0,
        clean_of_noisy_min: 0.0,
        noisy_of_clean_min: 0.0,
        noisy_of_noisy_min: 0.0,
    };
    // both risks are sums over inputs, so each input is minimized on its own
    for (&y, &w) in inst.labels.iter().zip(&inst.weights) {
        let clean = one_hot(c, y);
        let noisy: Vec<f64> = t.column(y).collect();
        let f = g.argmin(&clean, &noisy);
        let f_t = g.argmin(&noisy, &clean);
        out.clean_of_clean_min += w * g.risk(f, &clean);
        out.clean_of_noisy_min += w * g.risk(f_t, &clean);
        out.noisy_of_clean_min += w * g.risk(f, &noisy);
        out.noisy_of_noisy_min += w * g.risk(f_t, &noisy);
    }
    out
}

fn log_factor(classes: usize) -> f64 {
    let (lo, hi) = dspt_loss_bounds(classes);
    hi - lo
}

/// Symmetric noise: the clean risk of the noisy-risk minimizer exceeds the
/// clean optimum by at most `log((e+C-1)/(1+(C-1)/e)) * eta/(1-eta)`.
/// Not applicable unless `eta < 1 - 1/C`.
pub fn check_thm34(params: &RiskParams, eta: f64, seed: u64) -> Result<VerificationReport> {
    params.validate()?;
    let c = params.classes;
    let t_mat = symmetric_matrix(c, eta)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("eta".to_string(), eta);
    metrics.insert("classes".to_string(), c as f64);
    if !t_mat.symmetric_bound_applies() {
        return Ok(VerificationReport::not_applicable(
            "thm34",
            format!("eta = {eta} is not below 1 - 1/C = {}", 1.0 - 1.0 / c as f64),
            metrics,
        ));
    }
    let mut t = Tally::new("thm34");
    t.metrics = metrics;
    let identity = one_nat_identity_error(IDENTITY_MAX_CLASSES);
    t.record(
        identity,
        WIDTH_TOL,
        || json!({ "identity_up_to_classes": IDENTITY_MAX_CLASSES }),
    );
    validate_grid_oracle(&mut t, c, params.grid);

    let bound = log_factor(c) * eta / (1.0 - eta);
    let slack = params.slack();
    t.metric("bound", bound);
    t.metric("slack", slack);
    let g = GridLosses::new(c, params.grid);
    let mut r = check_rng(seed, 34);
    for k in 0..params.instances {
        let inst = random_instance(&mut r, c, params.inputs);
        let out = solve(&g, &inst, &t_mat);
        let diff = out.clean_of_noisy_min - out.clean_of_clean_min;
        t.max_metric("max_difference", diff);
        let wit = || json!({ "instance": k, "labels": inst.labels, "weights": inst.weights, "difference": diff, "bound": bound });
        t.record(-diff, WIDTH_TOL, wit);
        t.record(diff - bound, slack, || json!({ "instance": k, "labels": inst.labels, "weights": inst.weights, "difference": diff, "bound": bound }));
        t.trials += 1;
    }
    Ok(t.finish())
}

/// A random column-stochastic matrix with `T[j][k] <= T[k][k]`.
pub fn random_admissible_matrix(r: &mut Rng, classes: usize) -> Result<TransitionMatrix> {
    let mut rows = vec![vec![0.0; classes]; classes];
    for k in 0..classes {
        loop {
            let diag = r.gen_range(1.0 / classes as f64..1.0);
            let raw: Vec<f64> = (0..classes - 1).map(|_| r.gen_range(f64::EPSILON..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let off: Vec<f64> = raw.iter().map(|v| v / s * (1.0 - diag)).collect();
            if off.iter().all(|v| *v <= diag) {
                let mut it = off.into_iter();
                for (j, row) in rows.iter_mut().enumerate() {
                    row[k] = if j == k { diag } else { it.next().unwrap_or(0.0) };
                }
                break;
            }
        }
    }
    TransitionMatrix::from_rows(&rows)
}

/// Asymmetric noise: the noisy risk of the clean minimizer exceeds the
/// noisy optimum by at most `C * P_T` nats, `P_T` being the mean of
/// `T[y][y]` over the instance. Uses `matrix` for every instance, or a
/// fresh random admissible matrix per instance when `None`.
pub fn check_thm35(params: &RiskParams, matrix: Option<&TransitionMatrix>, seed: u64) -> Result<VerificationReport> {
    let params = RiskParams {
        classes: matrix.map_or(params.classes, |m| m.classes()),
        ..*params
    };
    params.validate()?;
    let c = params.classes;
    if let Some(m) = matrix {
        if !m.diagonal_dominant() {
            return Ok(VerificationReport::not_applicable(
                "thm35",
                "transition matrix has an off-diagonal entry above its column's diagonal".into(),
                BTreeMap::from([("classes".to_string(), c as f64)]),
            ));
        }
    }
    let mut t = Tally::new("thm35");
    t.metric("classes", c as f64);
    let identity = one_nat_identity_error(IDENTITY_MAX_CLASSES);
    t.record(
        identity,
        WIDTH_TOL,
        || json!({ "identity_up_to_classes": IDENTITY_MAX_CLASSES }),
    );
    validate_grid_oracle(&mut t, c, params.grid);
    if matrix.is_none() {
        t.notes.push("random admissible transition matrix per instance".into());
    }

    let slack = params.slack();
    t.metric("slack", slack);
    let g = GridLosses::new(c, params.grid);
    let mut r = check_rng(seed, 35);
    for k in 0..params.instances {
        let owned;
        let m = match matrix {
            Some(m) => m,
            None => {
                owned = random_admissible_matrix(&mut r, c)?;
                &owned
            }
        };
        let inst = random_instance(&mut r, c, params.inputs);
        let p_t: f64 = inst
            .labels
            .iter()
            .zip(&inst.weights)
            .map(|(&y, &w)| w * m.get(y, y))
            .sum();
        let bound = c as f64 * p_t * log_factor(c);
        let out = solve(&g, &inst, m);
        let diff = out.noisy_of_clean_min - out.noisy_of_noisy_min;
        t.max_metric("max_difference", diff);
        t.max_metric("max_p_t", p_t);
        let wit = || json!({ "instance": k, "matrix": m.rows(), "labels": inst.labels, "weights": inst.weights, "difference": diff, "p_t": p_t, "bound": bound });
        t.record(-diff, WIDTH_TOL, wit);
        t.record(diff - bound, slack, wit);
        t.trials += 1;
    }
    Ok(t.finish())
}

/// Epoch-0 gradient audit: mislabeled samples must receive at most a tenth
/// of the cross-entropy gradient under the double-softmax loss, and clean
/// samples no more than under cross-entropy. Needs a strong prior.
pub fn check_grad_suppression_separation(ds: &Dataset, model: &PrototypeModel) -> Result<VerificationReport> {
    let acc = evaluate(model, ds)?;
    let emb = model.embeddings()?;
    let confidence = (0..ds.len())
        .map(|i| {
            let p = naive_softmax(&emb.logits(ds.row(i)));
            p.into_iter().fold(0.0, f64::max)
        })
        .sum::<f64>()
        / ds.len() as f64;
    let mut metrics = BTreeMap::from([
        ("prior_accuracy".to_string(), acc),
        ("prior_confidence".to_string(), confidence),
        ("noisy_fraction".to_string(), ds.noisy_count() as f64 / ds.len() as f64),
    ]);
    if acc < PRIOR_MIN_ACC || confidence < PRIOR_MIN_CONFIDENCE {
        return Ok(VerificationReport::not_applicable(
            "grad_suppression",
            format!(
                "prior too weak: accuracy {acc:.4} (needs {PRIOR_MIN_ACC}), mean top probability {confidence:.4} (needs {PRIOR_MIN_CONFIDENCE})"
            ),
            metrics,
        ));
    }
    let ce = AuditSummary::from_records(LossKind::Ce, &grad_audit(model, ds, LossKind::Ce)?);
    let dspt = AuditSummary::from_records(LossKind::Dspt, &grad_audit(model, ds, LossKind::Dspt)?);
    let mut t = Tally::new("grad_suppression");
    t.trials = ds.len() as u64;
    for (k, v) in [
        ("ce_clean_mean", ce.clean_mean),
        ("ce_noisy_mean", ce.noisy_mean),
        ("dspt_clean_mean", dspt.clean_mean),
        ("dspt_noisy_mean", dspt.noisy_mean),
    ] {
        if let Some(v) = v {
            metrics.insert(k.into(), v);
        }
    }
    t.metrics = metrics;
    if let (Some(c), Some(d)) = (ce.clean_mean, dspt.clean_mean) {
        t.record(d, c, || json!({ "ce_clean_mean": c, "dspt_clean_mean": d }));
    }
    match (ce.noisy_mean, dspt.noisy_mean) {
        (Some(c), Some(d)) => {
            t.metric("separation_factor", c / d);
            t.record(
                d,
                SEPARATION_RATIO * c,
                || json!({ "ce_noisy_mean": c, "dspt_noisy_mean": d }),
            );
        }
        _ => t.notes.push("no mislabeled samples; separation holds vacuously".into()),
    }
    Ok(t.finish())
}

pub const CHECK_NAMES: [&str; 6] = ["prop31", "thm32", "prop33", "thm34", "thm35", "grad_suppression"];

/// Settings for the full suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Suite {
    pub prop31_trials: u64,
    pub thm32_trials: u64,
    pub prop33_trials: u64,
    pub grad_classes: (usize, usize),
    pub risk: RiskParams,
    pub eta: f64,
}

impl Default for Suite {
    fn default() -> Self {
        Suite {
            prop31_trials: 10_000,
            thm32_trials: 1_000,
            prop33_trials: 100_000,
            grad_classes: (2, 50),
            risk: RiskParams::default(),
            eta: 0.4,
        }
    }
}

impl Suite {
    /// Runs the named check (one of [`CHECK_NAMES`]).
    pub fn run(&self, check: &str, seed: u64) -> Result<VerificationReport> {
        let classes = self.grad_classes.0..=self.grad_classes.1;
        match check {
            "prop31" => check_prop31(self.prop31_trials, classes, seed),
            "thm32" => check_thm32(&default_deltas(), classes, self.thm32_trials, seed),
            "prop33" => check_prop33(self.prop33_trials, &PROP33_CLASSES, seed),
            "thm34" => check_thm34(&self.risk, self.eta, seed),
            "thm35" => check_thm35(&self.risk, None, seed),
            "grad_suppression" => {
                let b = Benchmark::pinned(seed).build()?;
                check_grad_suppression_separation(&b.train, &b.model)
            }
            other => Err(Error::InvalidParameter(format!("unknown check {other:?}"))),
        }
    }

    pub fn run_all(&self, seed: u64) -> Result<Vec<VerificationReport>> {
        CHECK_NAMES.iter().map(|c| self.run(c, seed)).collect()
    }
}
