//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if
//! any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use dspt_core::benchmark::{Benchmark, PINNED_SEED};
use dspt_core::noise::{corrupt, cycle_mapping, pairflip_matrix, symmetric_matrix, NoiseSpec};
use dspt_core::trainer::{grad_audit, train, AuditSummary, MetricsLog};
use dspt_core::verify::{
    check_prop31, check_prop33, check_thm32, check_thm34, check_thm35, default_deltas, RiskParams, Status,
    PROP33_CLASSES,
};
use dspt_core::{LossKind, VerificationReport};

// criterion 1
const PROP31_TRIALS: u64 = 10_000;
const PROP31_MAX_SECS: f64 = 10.0;
// criterion 2
const THM32_TRIALS_PER_DELTA: u64 = 1_000;
// criterion 3
const PROP33_TRIALS_PER_CLASS: u64 = 100_000;
// criterion 4
const RISK_GRID: usize = 40;
const RISK_INPUTS: usize = 4;
const RISK_INSTANCES: usize = 20;
const RISK_MAX_SECS: f64 = 120.0;
// criterion 5
const SUPPRESSION_RATIO: f64 = 0.1;
const CE_NOISY_MIN: f64 = 1.5;
// criterion 6
const GAP_NATS: f64 = 1.0;
const CE_GAP_EPOCH: usize = 20;
// criterion 7
const SWEEP_ETAS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
const HIGH_NOISE_MARGIN: f64 = 0.05;
// criterion 8
const TAUS: [f64; 5] = [0.05, 0.1, 0.5, 1.0, 2.0];
const TAU_SPREAD_MIN: f64 = 0.05;
const BEST_TAU_SLACK: f64 = 0.02;
// criterion 10
const NOISE_SAMPLES: usize = 100_000;
const NOISE_SIGMAS: f64 = 3.0;
const NOISE_CLASSES: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report_ok(r: &VerificationReport) -> bool {
    r.status == Status::Pass && r.pass
}

fn worst(r: &VerificationReport) -> String {
    r.worst_violation.map_or_else(|| "n/a".into(), |w| format!("{w:.3e}"))
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let r = check_prop31(PROP31_TRIALS, 2..=50, PINNED_SEED).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        report_ok(&r) && r.trials >= PROP31_TRIALS && secs < PROP31_MAX_SECS,
        format!(
            "{} trials, max |analytic - closed form| {:.2e}, max FD rel error {:.2e}, {secs:.2}s",
            r.trials, r.metrics["max_abs_error_closed_form"], r.metrics["max_rel_error_finite_difference"]
        ),
    )
}

fn criterion_2() -> Outcome {
    let deltas = default_deltas();
    let r = check_thm32(&deltas, 2..=50, THM32_TRIALS_PER_DELTA, PINNED_SEED).unwrap();
    let smallest = deltas[deltas.len() - 1];
    let max_at_smallest = r.metrics[&format!("max_grad_l1_delta_{smallest:e}")];
    outcome(
        report_ok(&r) && r.trials >= THM32_TRIALS_PER_DELTA * deltas.len() as u64 && max_at_smallest <= 5e-8,
        format!(
            "{} trials, worst L1/(5 delta) {}, max L1 at delta=1e-8: {max_at_smallest:.3e}",
            r.trials,
            worst(&r)
        ),
    )
}

fn criterion_3() -> Outcome {
    let r = check_prop33(PROP33_TRIALS_PER_CLASS, &PROP33_CLASSES, PINNED_SEED).unwrap();
    let endpoint = PROP33_CLASSES
        .iter()
        .flat_map(|c| {
            [
                r.metrics[&format!("endpoint_gap_lower_c{c}")],
                r.metrics[&format!("endpoint_gap_upper_c{c}")],
            ]
        })
        .fold(0.0, f64::max);
    outcome(
        report_ok(&r) && r.trials >= PROP33_TRIALS_PER_CLASS * PROP33_CLASSES.len() as u64,
        format!(
            "{} inputs over C in {PROP33_CLASSES:?}, worst ratio {}, width error {:.1e}, max endpoint gap {endpoint:.1e}",
            r.trials,
            worst(&r),
            r.metrics["one_nat_identity_error"]
        ),
    )
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let risk = |classes| RiskParams {
        classes,
        inputs: RISK_INPUTS,
        grid: RISK_GRID,
        instances: RISK_INSTANCES,
    };
    let mut reports = Vec::new();
    for (c, eta) in [(2, 0.2), (2, 0.49), (3, 0.2), (3, 0.4), (3, 0.6)] {
        reports.push((
            format!("sym C={c} eta={eta}"),
            check_thm34(&risk(c), eta, PINNED_SEED).unwrap(),
        ));
    }
    for c in [2, 3] {
        reports.push((
            format!("random T C={c}"),
            check_thm35(&risk(c), None, PINNED_SEED).unwrap(),
        ));
    }
    let pair = pairflip_matrix(3, 0.3, &cycle_mapping(3)).unwrap();
    reports.push((
        "pair-flip 0.3 C=3".into(),
        check_thm35(&risk(3), Some(&pair), PINNED_SEED).unwrap(),
    ));
    let secs = t.elapsed().as_secs_f64();
    let failed: Vec<&str> = reports
        .iter()
        .filter(|(_, r)| !report_ok(r))
        .map(|(n, _)| n.as_str())
        .collect();
    let enough = reports.iter().all(|(_, r)| r.trials >= RISK_INSTANCES as u64);
    outcome(
        failed.is_empty() && enough && secs < RISK_MAX_SECS,
        format!(
            "{} settings x {RISK_INSTANCES} instances (grid {RISK_GRID}, {RISK_INPUTS} inputs), {secs:.2}s{}",
            reports.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!(", failing: {failed:?}")
            }
        ),
    )
}

fn criterion_5() -> Outcome {
    let inst = Benchmark::pinned(PINNED_SEED).build().unwrap();
    let ce = AuditSummary::from_records(
        LossKind::Ce,
        &grad_audit(&inst.model, &inst.train, LossKind::Ce).unwrap(),
    );
    let ds = AuditSummary::from_records(
        LossKind::Dspt,
        &grad_audit(&inst.model, &inst.train, LossKind::Dspt).unwrap(),
    );
    let (ce_noisy, ds_noisy) = (ce.noisy_mean.unwrap(), ds.noisy_mean.unwrap());
    outcome(
        ds_noisy <= SUPPRESSION_RATIO * ce_noisy && ce_noisy > CE_NOISY_MIN,
        format!(
            "mislabeled mean grad L1: CE {ce_noisy:.4}, DSPT {ds_noisy:.4} (factor {:.1})",
            ce_noisy / ds_noisy
        ),
    )
}

fn run(bench: &Benchmark, loss: LossKind) -> MetricsLog {
    let inst = bench.build().unwrap();
    let mut model = inst.model.clone();
    train(&bench.train_config(loss), &inst.train, &inst.test, &mut model).unwrap()
}

fn gap(log: &MetricsLog, epoch: usize) -> f64 {
    let r = &log.rows[epoch];
    (r.clean_loss_mean.unwrap() - r.noisy_loss_mean.unwrap()).abs()
}

fn criterion_6() -> Outcome {
    let bench = Benchmark::pinned(PINNED_SEED);
    let ds = run(&bench, LossKind::Dspt);
    let ce = run(&bench, LossKind::Ce);
    let ds_max = (0..ds.rows.len()).map(|e| gap(&ds, e)).fold(0.0, f64::max);
    let ce_gap = gap(&ce, CE_GAP_EPOCH);
    outcome(
        ds.rows.len() == 50 && ds_max <= GAP_NATS && ce_gap > GAP_NATS,
        format!("max DSPT clean/noisy loss gap {ds_max:.3} nats over 50 epochs, CE gap at epoch {CE_GAP_EPOCH}: {ce_gap:.3} nats"),
    )
}

fn criterion_7() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut zs = 0.0;
    for eta in SWEEP_ETAS {
        let bench = Benchmark::pinned(PINNED_SEED).with_noise(NoiseSpec::Symmetric { eta });
        let ce = run(&bench, LossKind::Ce);
        let ds = run(&bench, LossKind::Dspt);
        zs = ds.zero_shot_acc;
        pass &= ds.final_acc >= ce.final_acc;
        if eta <= 0.6 {
            pass &= ds.final_acc >= zs;
        }
        if eta == 0.8 {
            pass &= ds.final_acc - ce.final_acc >= HIGH_NOISE_MARGIN && ce.final_acc < zs;
        }
        parts.push(format!("{eta}: {:.3}/{:.3}", ds.final_acc, ce.final_acc));
    }
    outcome(
        pass,
        format!("DSPT/CE final accuracy by eta {}; zero-shot {zs:.3}", parts.join(", ")),
    )
}

fn criterion_8() -> Outcome {
    let bench = Benchmark::pinned(PINNED_SEED);
    let accs: Vec<f64> = TAUS
        .iter()
        .map(|&tau| run(&bench, LossKind::LogitClip { tau }).final_acc)
        .collect();
    let best = accs.iter().cloned().fold(f64::MIN, f64::max);
    let spread = best - accs.iter().cloned().fold(f64::MAX, f64::min);
    let ds = run(&bench, LossKind::Dspt).final_acc;
    outcome(
        spread >= TAU_SPREAD_MIN && ds >= best - BEST_TAU_SLACK,
        format!(
            "LogitClip over tau {TAUS:?}: {:?}, spread {:.1} points; DSPT {ds:.4} vs best {best:.4}",
            accs.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>(),
            spread * 100.0
        ),
    )
}

fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn dspt(args: &[&str], out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_dspt"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn criterion_9() -> Outcome {
    let commands: [&[&str]; 5] = [
        &[
            "gen-data",
            "--classes",
            "10",
            "--dim",
            "16",
            "--n-train",
            "300",
            "--n-test",
            "100",
            "--seed",
            "4",
        ],
        &[
            "train",
            "--loss",
            "dspt",
            "--noise",
            "sym:0.6",
            "--mode",
            "per-class",
            "--epochs",
            "5",
            "--seed",
            "4",
        ],
        &[
            "audit",
            "--losses",
            "ce,dspt,logitclip:0.5",
            "--noise",
            "pair:0.3",
            "--seed",
            "4",
        ],
        &[
            "verify", "--check", "thm34", "--check", "prop31", "--trials", "500", "--seed", "4",
        ],
        &[
            "sweep",
            "--etas",
            "0.2,0.8",
            "--losses",
            "ce,logitclip",
            "--taus",
            "0.1,1",
            "--epochs",
            "3",
            "--n-train",
            "400",
            "--seed",
            "4",
        ],
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut files = 0;
    for (i, args) in commands.iter().enumerate() {
        let (a, b) = (tmp.path().join(format!("{i}a")), tmp.path().join(format!("{i}b")));
        pass &= dspt(args, &a) && dspt(args, &b);
        let (ta, tb) = (read_tree(&a), read_tree(&b));
        pass &= !ta.is_empty() && ta == tb;
        files += ta.len();
    }
    outcome(
        pass,
        format!("5 commands run twice, {files} output files byte-identical"),
    )
}

fn criterion_10() -> Outcome {
    let labels: Vec<usize> = (0..NOISE_SAMPLES).map(|i| i % NOISE_CLASSES).collect();
    let mut pass = true;
    let mut worst_z = 0.0f64;
    for eta in [0.2, 0.4, 0.6, 0.8] {
        for t in [
            symmetric_matrix(NOISE_CLASSES, eta).unwrap(),
            pairflip_matrix(NOISE_CLASSES, eta, &cycle_mapping(NOISE_CLASSES)).unwrap(),
        ] {
            let c = corrupt(&labels, &t, PINNED_SEED).unwrap();
            let se = (eta * (1.0 - eta) / NOISE_SAMPLES as f64).sqrt();
            let z = (c.report.empirical_rate - eta).abs() / se;
            worst_z = worst_z.max(z);
            pass &= z <= NOISE_SIGMAS;
        }
    }
    outcome(
        pass,
        format!("n = {NOISE_SAMPLES}, sym and pair at eta 0.2..0.8, worst deviation {worst_z:.2} standard errors"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient formula", criterion_1),
        ("gradient vanishing", criterion_2),
        ("loss bounds", criterion_3),
        ("risk bounds", criterion_4),
        ("gradient suppression", criterion_5),
        ("loss gap", criterion_6),
        ("accuracy vs noise rate", criterion_7),
        ("logitclip tau sensitivity", criterion_8),
        ("determinism", criterion_9),
        ("noise model", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        failed += !o.pass as usize;
        println!(
            "criterion {:>2} {:<26} {}  {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
