use std::path::Path;

use clap::Args;
use dspt_core::benchmark::Benchmark;
use dspt_core::data::{gen_synthetic, Dataset, Split};
use dspt_core::noise::NoiseSpec;
use dspt_core::trainer::{audit_csv, grad_audit, train, zero_shot_accuracy, AuditSummary, MetricsLog};
use dspt_core::verify::{
    check_grad_suppression_separation, check_prop31, check_prop33, check_thm32, check_thm34, check_thm35,
    default_deltas, RiskParams, Status, Suite, CHECK_NAMES, PROP33_CLASSES,
};
use dspt_core::{LossKind, NoiseReport, PrototypeModel, VerificationReport};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{load_config, CommonArgs, DataArgs, LossParams, ModelArgs, RunConfig};
use crate::error::{CliError, CliResult, EXIT_VERIFY};
use crate::output::{create_dir, file_label, write, write_json, write_manifest};

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// ce, dspt, smoothing, logitnorm, logitclip, bootstrap, nce, gce,
    /// square, select; `name:param` sets the hyperparameter inline
    #[arg(long)]
    pub loss: Option<String>,
    #[command(flatten)]
    pub params: LossParams,
    /// sym:<rate> or pair:<rate>[:mapping=cycle]
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Drop samples whose epoch-start prediction disagrees with their label
    #[arg(long)]
    pub selection: bool,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated losses
    #[arg(long, value_delimiter = ',')]
    pub losses: Option<Vec<String>>,
    #[command(flatten)]
    pub params: LossParams,
    #[arg(long)]
    pub noise: Option<String>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("which").required(true).args(["all", "check"])))]
pub struct VerifyArgs {
    /// Run every check
    #[arg(long)]
    pub all: bool,
    /// Run one check (repeatable)
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(CHECK_NAMES))]
    pub check: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trials for prop31 and prop33, trials per delta for thm32
    #[arg(long)]
    pub trials: Option<u64>,
    /// Class count for the gradient, bound and risk checks
    #[arg(long)]
    pub classes: Option<usize>,
    /// Symmetric noise rate for thm34
    #[arg(long)]
    pub eta: Option<f64>,
    /// Transition matrix for thm35 and label noise for grad_suppression
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub inputs: Option<usize>,
    #[arg(long)]
    pub instances: Option<usize>,
    /// Logit temperature for grad_suppression
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<std::path::PathBuf>,
    #[arg(long, env = "DSPT_OUT", default_value = "dspt-out", value_name = "DIR")]
    pub out_root: std::path::PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated noise rates
    #[arg(long, value_delimiter = ',')]
    pub etas: Option<Vec<f64>>,
    /// Comma-separated losses; a bare `logitclip` expands over --taus
    #[arg(long, value_delimiter = ',')]
    pub losses: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// sym or pair
    #[arg(long)]
    pub noise_kind: Option<String>,
    #[command(flatten)]
    pub params: LossParams,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub selection: bool,
    /// Concurrent runs [default: all cores]
    #[arg(long)]
    pub jobs: Option<usize>,
}

fn base_config(common: &CommonArgs, data: &DataArgs) -> CliResult<RunConfig> {
    let mut cfg = load_config(common.config.as_deref())?;
    cfg.apply_common(common);
    cfg.apply_data(data);
    Ok(cfg)
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::usage(e.to_string())
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let cfg = base_config(&a.common, &a.data)?;
    cfg.check_paths()?;
    let out = cfg.out_dir(&a.common, "gen-data");
    create_dir(&out)?;
    let files = ["train.emb", "test.emb", "anchors.emb"].map(String::from);
    let info = match &cfg.data.dir {
        None => {
            let bundle = gen_synthetic(&cfg.synthetic_params())?;
            bundle.train.save(&out.join("train.emb"))?;
            bundle.test.save(&out.join("test.emb"))?;
            bundle.anchor_set().save(&out.join("anchors.emb"))?;
            let p = cfg.synthetic_params();
            let model = PrototypeModel::new(
                bundle.anchors.clone(),
                p.classes,
                p.dim,
                cfg.model.scale,
                cfg.model.mode,
            )?;
            let test_acc = zero_shot_accuracy(&model, &bundle.test)?;
            let train_acc = zero_shot_accuracy(&model, &bundle.train)?;
            for w in &bundle.warnings {
                eprintln!("warning: {w}");
            }
            println!("zero-shot accuracy: test {test_acc:.4}, train {train_acc:.4}");
            json!({
                "source": "synthetic",
                "params": p,
                "zero_shot_accuracy": { "train": train_acc, "test": test_acc },
                "warnings": bundle.warnings,
            })
        }
        Some(dir) => {
            // pass-through: validate and re-emit in canonical form
            let inst = cfg.load(NoiseSpec::none())?;
            inst.train.save(&out.join("train.emb"))?;
            inst.test.save(&out.join("test.emb"))?;
            let anchors = Dataset::load(&dir.join("anchors.emb"), Split::Test)?;
            anchors.save(&out.join("anchors.emb"))?;
            println!("zero-shot accuracy: test {:.4}", inst.zero_shot_acc);
            json!({
                "source": dir,
                "zero_shot_accuracy": { "test": inst.zero_shot_acc },
                "warnings": [],
            })
        }
    };
    write_manifest(&out, "gen-data", cfg.seed, &cfg.fingerprint(), &files, info)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn apply_train_flags(
    cfg: &mut RunConfig,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    selection: bool,
) {
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = batch {
        cfg.train.batch = b;
    }
    if let Some(l) = lr {
        cfg.train.lr0 = l;
    }
    cfg.train.selection |= selection;
}

#[derive(Serialize)]
struct RunSummary<'a> {
    loss: String,
    noise: String,
    final_acc: f64,
    zero_shot_acc: f64,
    noise_report: &'a NoiseReport,
    log: &'a MetricsLog,
}

struct RunOutcome {
    log: MetricsLog,
    report: NoiseReport,
}

/// One training run writing metrics, checkpoint and manifest into `out`.
fn run_training(cfg: &RunConfig, loss: LossKind, noise: NoiseSpec, out: &Path) -> CliResult<RunOutcome> {
    let tc = cfg.train_config(loss, noise)?;
    create_dir(out)?;
    let inst = cfg.load(noise)?;
    let mut model = inst.model.clone();
    let log = train(&tc, &inst.train, &inst.test, &mut model)?;
    write(&out.join("metrics.csv"), log.to_csv().as_bytes())?;
    write_json(
        &out.join("metrics.json"),
        &RunSummary {
            loss: loss.to_string(),
            noise: noise.to_string(),
            final_acc: log.final_acc,
            zero_shot_acc: log.zero_shot_acc,
            noise_report: &inst.noise,
            log: &log,
        },
    )?;
    let mut ckpt = Vec::new();
    model.write_checkpoint(&mut ckpt)?;
    write(&out.join("model.ckpt"), &ckpt)?;
    let files = ["metrics.csv", "metrics.json", "model.ckpt"].map(String::from);
    write_manifest(
        out,
        "train",
        cfg.seed,
        &cfg.fingerprint(),
        &files,
        json!({ "final_acc": log.final_acc }),
    )?;
    Ok(RunOutcome {
        log,
        report: inst.noise,
    })
}

pub fn train_cmd(a: &TrainArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common, &a.data)?;
    cfg.apply_model(&a.model);
    apply_train_flags(&mut cfg, a.epochs, a.batch, a.lr, a.selection);
    if let Some(l) = &a.loss {
        cfg.train.loss = l.clone();
    }
    if let Some(n) = &a.noise {
        cfg.train.noise = n.clone();
    }
    let loss = a.params.loss(&cfg.train.loss)?;
    let noise = cfg.noise()?;
    cfg.train.loss = loss.to_string();
    cfg.train.noise = noise.to_string();
    cfg.train_config(loss, noise)?;
    cfg.check_paths()?;
    let out = cfg.out_dir(&a.common, "train");
    let r = run_training(&cfg, loss, noise, &out)?;
    println!(
        "{loss} noise {noise} (empirical {:.4}): zero-shot {:.4}, final accuracy {:.4} (mean of last {} epochs)",
        r.report.empirical_rate,
        r.log.zero_shot_acc,
        r.log.final_acc,
        r.log.rows.len().min(5)
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn audit(a: &AuditArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common, &a.data)?;
    cfg.apply_model(&a.model);
    if let Some(l) = &a.losses {
        cfg.audit.losses = l.clone();
    }
    if let Some(n) = &a.noise {
        cfg.train.noise = n.clone();
    }
    let losses = cfg
        .audit
        .losses
        .iter()
        .map(|s| a.params.loss(s))
        .collect::<CliResult<Vec<_>>>()?;
    if losses.is_empty() {
        return Err(CliError::usage("no losses to audit"));
    }
    let noise = cfg.noise()?;
    cfg.audit.losses = losses.iter().map(|l| l.to_string()).collect();
    cfg.train.noise = noise.to_string();
    cfg.check_paths()?;
    let out = cfg.out_dir(&a.common, "audit");
    create_dir(&out)?;
    let inst = cfg.load(noise)?;

    let mut files = Vec::new();
    let mut summaries = Vec::new();
    for loss in &losses {
        let records = grad_audit(&inst.model, &inst.train, *loss)?;
        let name = format!("audit_{}.csv", file_label(&loss.to_string()));
        write(&out.join(&name), audit_csv(&records).as_bytes())?;
        files.push(name);
        let s = AuditSummary::from_records(*loss, &records);
        println!(
            "{:<16} clean mean {:<12} noisy mean {}",
            s.loss,
            fmt_opt(s.clean_mean),
            fmt_opt(s.noisy_mean)
        );
        summaries.push(s);
    }
    let noisy_mean = |k: LossKind| {
        summaries
            .iter()
            .find(|s| s.loss == k.to_string())
            .and_then(|s| s.noisy_mean)
    };
    let separation = match (noisy_mean(LossKind::Ce), noisy_mean(LossKind::Dspt)) {
        (Some(ce), Some(d)) => Some(ce / d),
        _ => None,
    };
    if let Some(f) = separation {
        println!("separation factor (ce / dspt, mislabeled samples): {f:.2}");
    }
    write_json(
        &out.join("summary.json"),
        &json!({
            "noise": noise.to_string(),
            "noise_report": inst.noise,
            "zero_shot_acc": inst.zero_shot_acc,
            "losses": summaries,
            "separation_factor": separation,
        }),
    )?;
    files.push("summary.json".into());
    write_manifest(&out, "audit", cfg.seed, &cfg.fingerprint(), &files, Value::Null)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

#[derive(Serialize)]
struct VerifySettings<'a> {
    checks: &'a [String],
    seed: u64,
    trials: Option<u64>,
    classes: Option<usize>,
    eta: Option<f64>,
    noise: Option<String>,
    grid: Option<usize>,
    inputs: Option<usize>,
    instances: Option<usize>,
    scale: Option<f64>,
}

pub fn verify(a: &VerifyArgs) -> CliResult<()> {
    let checks: Vec<String> = if a.all {
        CHECK_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        a.check.clone()
    };
    let noise: Option<NoiseSpec> = a.noise.as_deref().map(str::parse).transpose().map_err(usage)?;
    let suite = Suite::default();
    let risk = RiskParams {
        classes: a.classes.unwrap_or(suite.risk.classes),
        inputs: a.inputs.unwrap_or(suite.risk.inputs),
        grid: a.grid.unwrap_or(suite.risk.grid),
        instances: a.instances.unwrap_or(suite.risk.instances),
    };
    let range = match a.classes {
        Some(c) => c..=c,
        None => suite.grad_classes.0..=suite.grad_classes.1,
    };
    let out = a.out.clone().unwrap_or_else(|| a.out_root.join("verify"));
    create_dir(&out)?;

    let mut reports: Vec<VerificationReport> = Vec::new();
    for check in &checks {
        let rep = match check.as_str() {
            "prop31" => check_prop31(a.trials.unwrap_or(suite.prop31_trials), range.clone(), a.seed),
            "thm32" => check_thm32(
                &default_deltas(),
                range.clone(),
                a.trials.unwrap_or(suite.thm32_trials),
                a.seed,
            ),
            "prop33" => {
                let classes = a.classes.map_or(PROP33_CLASSES.to_vec(), |c| vec![c]);
                check_prop33(a.trials.unwrap_or(suite.prop33_trials), &classes, a.seed)
            }
            "thm34" => check_thm34(&risk, a.eta.unwrap_or(suite.eta), a.seed),
            "thm35" => match noise {
                Some(n) => check_thm35(&risk, Some(&n.matrix(risk.classes).map_err(usage)?), a.seed),
                None => check_thm35(&risk, None, a.seed),
            },
            "grad_suppression" => {
                let mut b = Benchmark::pinned(a.seed);
                if let Some(s) = a.scale {
                    b = b.with_scale(s);
                }
                if let Some(n) = noise {
                    b = b.with_noise(n);
                }
                b.build()
                    .and_then(|inst| check_grad_suppression_separation(&inst.train, &inst.model))
            }
            other => Err(dspt_core::Error::InvalidParameter(format!("unknown check {other:?}"))),
        }
        .map_err(|e| match e {
            dspt_core::Error::InvalidParameter(m) => CliError::usage(format!("{check}: {m}")),
            other => other.into(),
        })?;
        print_report(&rep);
        reports.push(rep);
    }

    write_json(&out.join("reports.json"), &reports)?;
    let settings = VerifySettings {
        checks: &checks,
        seed: a.seed,
        trials: a.trials,
        classes: a.classes,
        eta: a.eta,
        noise: noise.map(|n| n.to_string()),
        grid: a.grid,
        inputs: a.inputs,
        instances: a.instances,
        scale: a.scale,
    };
    let passed = reports.iter().filter(|r| r.pass).count();
    let failed = reports.iter().filter(|r| r.status == Status::Fail).count();
    let skipped = reports.len() - passed - failed;
    write_manifest(
        &out,
        "verify",
        a.seed,
        &serde_json::to_value(&settings)?,
        &["reports.json".to_string()],
        json!({ "passed": passed, "failed": failed, "not_applicable": skipped }),
    )?;
    println!(
        "{passed} passed, {failed} failed, {skipped} not applicable; wrote {}",
        out.display()
    );
    if failed > 0 {
        return Err(CliError {
            code: EXIT_VERIFY,
            message: format!("{failed} check(s) failed"),
        });
    }
    Ok(())
}

fn print_report(r: &VerificationReport) {
    let status = match r.status {
        Status::Pass => "pass",
        Status::Fail => "FAIL",
        Status::NotApplicable => "not-applicable",
    };
    match r.worst_violation {
        Some(w) => println!("{:<17} {status:<15} worst/tol {w:.3e}  trials {}", r.check, r.trials),
        None => println!("{:<17} {status}", r.check),
    }
    let mut bounds: Vec<(usize, f64, f64)> = r
        .metrics
        .iter()
        .filter_map(|(k, lo)| {
            let c = k.strip_prefix("lower_c")?;
            Some((c.parse().ok()?, *lo, *r.metrics.get(&format!("upper_c{c}"))?))
        })
        .collect();
    bounds.sort_by_key(|b| b.0);
    for (c, lo, hi) in bounds {
        println!("    C={c}: loss bounds [{lo:.5}, {hi:.5}]");
    }
    if let Some(f) = r.metrics.get("separation_factor") {
        println!("    separation factor {f:.2}");
    }
    for n in &r.notes {
        println!("    {n}");
    }
}

struct SweepJob {
    id: String,
    loss: LossKind,
    noise: NoiseSpec,
}

#[derive(Serialize)]
struct SweepRow {
    run: String,
    loss: String,
    tau: Option<f64>,
    noise: String,
    eta: f64,
    seed: u64,
    status: &'static str,
    final_acc: Option<f64>,
    zero_shot_acc: Option<f64>,
    empirical_noise_rate: Option<f64>,
    exit_code: i32,
    error: String,
}

pub fn sweep(a: &SweepArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common, &a.data)?;
    cfg.apply_model(&a.model);
    apply_train_flags(&mut cfg, a.epochs, a.batch, a.lr, a.selection);
    let s = &mut cfg.sweep;
    if let Some(v) = &a.etas {
        s.etas = v.clone();
    }
    if let Some(v) = &a.losses {
        s.losses = v.clone();
    }
    if let Some(v) = &a.taus {
        s.taus = v.clone();
    }
    if let Some(v) = &a.noise_kind {
        s.noise_kind = v.clone();
    }

    let mut losses = Vec::new();
    for spec in &cfg.sweep.losses {
        if spec.trim().eq_ignore_ascii_case("logitclip") && a.params.tau.is_none() {
            if cfg.sweep.taus.is_empty() {
                return Err(CliError::usage("logitclip in a sweep needs --taus or --tau"));
            }
            for &tau in &cfg.sweep.taus {
                losses.push(a.params.loss(&format!("logitclip:{tau}"))?);
            }
        } else {
            losses.push(a.params.loss(spec)?);
        }
    }
    let mut jobs = Vec::new();
    for &eta in &cfg.sweep.etas {
        let noise: NoiseSpec = format!("{}:{eta}", cfg.sweep.noise_kind).parse().map_err(usage)?;
        for &loss in &losses {
            let id = format!("{:03}_{}_eta{eta}", jobs.len(), file_label(&loss.to_string()));
            jobs.push(SweepJob { id, loss, noise });
        }
    }
    if jobs.is_empty() {
        return Err(CliError::usage("empty sweep"));
    }
    for j in &jobs {
        cfg.train_config(j.loss, j.noise)?;
    }
    cfg.check_paths()?;
    let out = cfg.out_dir(&a.common, "sweep");
    create_dir(&out)?;

    let run_one = |job: &SweepJob| -> SweepRow {
        let mut run_cfg = cfg.clone();
        run_cfg.train.loss = job.loss.to_string();
        run_cfg.train.noise = job.noise.to_string();
        let result = run_training(&run_cfg, job.loss, job.noise, &out.join("runs").join(&job.id));
        let tau = match job.loss {
            LossKind::LogitClip { tau } => Some(tau),
            _ => None,
        };
        let mut row = SweepRow {
            run: job.id.clone(),
            loss: job.loss.name().into(),
            tau,
            noise: job.noise.to_string(),
            eta: job.noise.rate(),
            seed: cfg.seed,
            status: "ok",
            final_acc: None,
            zero_shot_acc: None,
            empirical_noise_rate: None,
            exit_code: 0,
            error: String::new(),
        };
        match result {
            Ok(r) => {
                row.final_acc = Some(r.log.final_acc);
                row.zero_shot_acc = Some(r.log.zero_shot_acc);
                row.empirical_noise_rate = Some(r.report.empirical_rate);
            }
            Err(e) => {
                row.status = "error";
                row.exit_code = e.code;
                row.error = e.message;
            }
        }
        row
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| jobs.par_iter().map(run_one).collect());

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
        println!(
            "{:<28} {:<10} {}",
            r.run,
            r.status,
            r.final_acc
                .map_or_else(|| r.error.clone(), |v| format!("final accuracy {v:.4}"))
        );
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    write(&out.join("sweep.csv"), &bytes)?;
    write_manifest(
        &out,
        "sweep",
        cfg.seed,
        &cfg.fingerprint(),
        &["sweep.csv".to_string()],
        json!({ "runs": rows.len() }),
    )?;
    println!("wrote {}", out.display());
    match rows.iter().find(|r| r.exit_code != 0) {
        Some(r) => Err(CliError {
            code: r.exit_code,
            message: format!(
                "{} of {} runs failed",
                rows.iter().filter(|r| r.exit_code != 0).count(),
                rows.len()
            ),
        }),
        None => Ok(()),
    }
}
