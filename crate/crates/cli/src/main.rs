use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use robust_subspace::adversary::{self, AttackKind, InstanceOptimalOptions, MinmaxOptions};
use robust_subspace::covmodel::{self, CovarianceModel, Dataset, Provenance};
use robust_subspace::estimators::{self, EstimatorConfig};
use robust_subspace::fantope::{self, FeasibleSetParams, SolverConfig};
use robust_subspace::harness::{self, EstimatorKind, RunOptions, ScalingAxis, SweepSpec};
use robust_subspace::io::{self, ModelRecord};
use robust_subspace::metrics::{self, ErrorReport};
use robust_subspace::norms::NormIndex;
use robust_subspace::plot::{self, PlotSpec};
use robust_subspace::{Error, Result};

#[derive(Parser)]
#[command(
    name = "robust-subspace",
    version,
    about = "Principal subspace estimation under bounded per-sample perturbations"
)]
struct Cli {
    /// Print a machine-readable summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from a covariance model.
    Generate(GenerateArgs),
    /// Perturb a dataset.
    Attack(AttackArgs),
    /// Run the semidefinite program on a dataset.
    Solve(SolveArgs),
    /// Estimate the top subspace of a dataset.
    Estimate(EstimateArgs),
    /// Robust mean estimation.
    Mean(MeanArgs),
    /// Run a parameter sweep from a JSON spec.
    Sweep(SweepArgs),
    /// Render a CSV as an SVG line plot.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Spiked,
    Minmax,
    Isotropic,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "spiked")]
    model: ModelKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    r: usize,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 2.0)]
    kappa: f64,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    seed: u64,
    /// Noise level of the isotropic model.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Number of leading coordinates of the mean set to `mu_magnitude`.
    #[arg(long, default_value_t = 0)]
    mu_support: usize,
    #[arg(long, default_value_t = 1.0)]
    mu_magnitude: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackChoice {
    None,
    ConstantShift,
    SpikeInflation,
    InstanceOptimal,
    Minmax,
    MeanSparse,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: AttackChoice,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    seed: u64,
    /// Constant of the instance-optimal `ε`.
    #[arg(long, default_value_t = 0.1)]
    c: f64,
    /// Constant of the min-max `ε`.
    #[arg(long, default_value_t = 0.1)]
    c4: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelFlags {
    /// Target rank; defaults to the sidecar model's.
    #[arg(long)]
    r: Option<usize>,
    /// `κ`; defaults to the sidecar value.
    #[arg(long)]
    kappa: Option<f64>,
    /// Solver configuration, JSON or `.toml`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the randomized norm oracles.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    /// `q`, a number above 2 or `inf`.
    #[arg(long, default_value = "inf")]
    q: NormIndex,
    /// Write the per-iteration trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write `X̂` as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    #[value(alias = "robust-projection")]
    Sdp,
    AdvRobustPca,
    StatisticalR1,
    VanillaPca,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "sdp")]
    algo: Algo,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long, default_value_t = 1.0)]
    kappa_slack: f64,
    #[arg(long, default_value_t = 100_000)]
    max_support: u128,
    /// `δ` for the reference curves; defaults to the provenance of the input.
    #[arg(long)]
    delta: Option<f64>,
    /// Write the estimated projector as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeanArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "inf")]
    q: NormIndex,
    #[arg(long)]
    delta: f64,
    /// Upper bound on the noise level; defaults to the sidecar `sigma`.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    /// CSV output; overrides the spec.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to ROBUST_SUBSPACE_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    /// Keep rows already in the output and run only the missing pairs.
    #[arg(long)]
    resume: bool,
    /// Overrides the spec's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Fit a log-log slope of `fit_y` along this axis.
    #[arg(long)]
    fit: Option<ScalingAxis>,
    #[arg(long, default_value = "sin_theta_sq")]
    fit_y: String,
}

#[derive(Args)]
struct PlotArgs {
    /// JSON plot spec; the flags below are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, required_unless_present = "spec")]
    input: Option<PathBuf>,
    #[arg(long, default_value = "delta")]
    x: String,
    #[arg(long, default_value = "sin_theta_sq")]
    y: String,
    #[arg(long)]
    group_by: Option<String>,
    #[arg(long)]
    log_x: bool,
    #[arg(long)]
    log_y: bool,
    /// Column drawn as a dashed reference curve; repeatable.
    #[arg(long = "reference")]
    references: Vec<String>,
    #[arg(long)]
    title: Option<String>,
    #[arg(long, required_unless_present = "spec")]
    output: Option<PathBuf>,
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!({ "rows": m.nrows(), "cols": m.ncols(), "data": m.as_slice() })
}

fn num(v: f64) -> Value {
    // JSON has no NaN
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn report_json(rep: &ErrorReport) -> Value {
    json!({
        "sin_theta_sq": num(rep.sin_theta_sq),
        "frob_proj_sq": num(rep.frob_proj_sq),
        "frob_cov_sq": num(rep.frob_cov_sq),
        "inner_product": num(rep.inner_product),
        "predicted_bound_proj": num(rep.predicted_bound_proj),
        "predicted_bound_cov": num(rep.predicted_bound_cov),
        "delta_diag": num(rep.delta_diag),
    })
}

/// Model and estimator `κ` recorded next to a dataset, if any.
struct Meta {
    sidecar: Value,
    model: Option<CovarianceModel>,
}

impl Meta {
    fn load(path: &Path) -> Result<Meta> {
        let sidecar = io::read_sidecar(path)?.unwrap_or(Value::Null);
        let model = match sidecar.get("model") {
            Some(v) if !v.is_null() => Some(serde_json::from_value::<ModelRecord>(v.clone())?.to_model()?),
            _ => None,
        };
        Ok(Meta { sidecar, model })
    }

    fn f64(&self, key: &str) -> Option<f64> {
        self.sidecar.get(key).and_then(Value::as_f64)
    }

    fn need_model(&self) -> Result<&CovarianceModel> {
        self.model.as_ref().ok_or_else(|| Error::Format("this command needs a sidecar with a model".into()))
    }
}

fn cmd_generate(a: &GenerateArgs) -> Result<Value> {
    let mu =
        (a.mu_support > 0).then(|| DVector::from_fn(a.n, |i, _| if i < a.mu_support { a.mu_magnitude } else { 0.0 }));
    let (data, model, est_kappa) = match a.model {
        ModelKind::Isotropic => {
            let mu = mu.clone().unwrap_or_else(|| DVector::zeros(a.n));
            (covmodel::sample_isotropic(&mu, a.sigma, a.m, a.seed)?, None, None)
        }
        ModelKind::Spiked | ModelKind::Minmax => {
            let (model, kind) = match a.model {
                ModelKind::Spiked => (covmodel::spiked_model(a.n, a.r, a.theta, a.kappa)?, AttackKind::None),
                _ => (covmodel::minmax_model(a.n, a.r, a.theta, a.kappa)?, AttackKind::Minmax),
            };
            let k = harness::estimator_kappa(kind, &model, a.kappa);
            (covmodel::sample(&model, a.m, mu.as_ref(), a.seed)?, Some(model), Some(k))
        }
    };
    let model_name = match a.model {
        ModelKind::Spiked => "spiked",
        ModelKind::Minmax => "minmax",
        ModelKind::Isotropic => "isotropic",
    };
    let sidecar = json!({
        "generator": {
            "model": model_name, "n": a.n, "r": a.r, "theta": a.theta, "kappa": a.kappa, "m": a.m, "seed": a.seed,
        },
        "model": model.as_ref().map(ModelRecord::from_model),
        "estimator_kappa": est_kappa,
        "sigma": matches!(a.model, ModelKind::Isotropic).then_some(a.sigma),
    });
    io::write_dataset(&a.out, &data, Some(&sidecar))?;
    Ok(json!({
        "output": a.out,
        "sidecar": io::sidecar_path(&a.out),
        "n": data.n(),
        "m": data.m(),
        "seed": a.seed,
        "kappa_measured": model.as_ref().map(|m| m.kappa),
    }))
}

fn cmd_attack(a: &AttackArgs) -> Result<Value> {
    let data = io::read_dataset(&a.input)?;
    let meta = Meta::load(&a.input)?;
    let kind = a.kind.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    let mut info = json!({ "kind": kind, "delta": a.delta, "seed": a.seed });
    let perturbed = match a.kind {
        AttackChoice::None => data.clone(),
        AttackChoice::ConstantShift => adversary::attack_constant_shift(&data, a.delta, &vec![1.0; data.n()])?,
        AttackChoice::SpikeInflation => adversary::attack_spike_inflation(meta.need_model()?, &data, a.delta)?,
        AttackChoice::MeanSparse => {
            let mu = data.mu.clone().ok_or_else(|| Error::Format("dataset carries no mean".into()))?;
            let shift = adversary::attack_mean_sparse(&data, &mu, a.delta)?;
            info["support"] = json!(shift.support);
            info["displacement"] = json!(shift.displacement);
            shift.perturbed
        }
        AttackChoice::InstanceOptimal | AttackChoice::Minmax => {
            let model = meta.need_model()?;
            let inst = if matches!(a.kind, AttackChoice::Minmax) {
                let kappa = meta.sidecar["generator"]["kappa"].as_f64().unwrap_or(model.kappa);
                adversary::attack_minmax(model, &data, kappa, a.delta, &MinmaxOptions { c4: a.c4 }, a.seed)?
            } else {
                let opts = InstanceOptimalOptions { c: a.c, ..Default::default() };
                adversary::attack_instance_optimal(model, &data, a.delta, &opts, a.seed)?
            };
            info["epsilon"] = json!(inst.epsilon);
            info["k_prime"] = json!(inst.k_prime);
            info["accepted"] = json!(inst.accepted);
            info["rejections"] = json!(inst.rejections);
            info["alt_projector_distance"] = json!((&inst.pi_alt - model.projector()).norm_squared());
            info["alt_basis"] = matrix_json(&inst.alt_basis);
            inst.perturbed
        }
    };
    let budget = adversary::validate_budget(&data, &perturbed, NormIndex::Infinity, a.delta)?;
    info["max_violation"] = json!(budget.max_violation);
    info["within_budget"] = json!(budget.within_budget());
    let mut sidecar = if meta.sidecar.is_object() { meta.sidecar.clone() } else { json!({}) };
    sidecar["attack"] = info.clone();
    io::write_dataset(&a.out, &perturbed, Some(&sidecar))?;
    info["output"] = json!(a.out);
    Ok(info)
}

fn estimator_config(flags: &ModelFlags, kappa_slack: f64) -> Result<EstimatorConfig> {
    let mut cfg = EstimatorConfig { kappa_slack, ..Default::default() };
    if let Some(path) = &flags.config {
        cfg.solver = SolverConfig::from_path(path)?;
    }
    if let Some(seed) = flags.seed {
        cfg.solver.seed = seed;
        cfg.oracle_seed = seed;
    }
    Ok(cfg)
}

fn rank_and_kappa(flags: &ModelFlags, meta: &Meta) -> Result<(usize, f64)> {
    let r = flags.r.or(meta.model.as_ref().map(|m| m.r));
    let kappa = flags.kappa.or(meta.f64("estimator_kappa")).or(meta.model.as_ref().map(|m| m.kappa));
    match (r, kappa) {
        (Some(r), Some(k)) => Ok((r, k)),
        _ => Err(Error::InvalidParameter("pass --r and --kappa or use a dataset with a model sidecar".into())),
    }
}

fn cmd_solve(a: &SolveArgs) -> Result<Value> {
    let data = io::read_dataset(&a.input)?;
    let meta = Meta::load(&a.input)?;
    let (r, kappa) = rank_and_kappa(&a.model, &meta)?;
    let cfg = estimator_config(&a.model, 1.0)?;
    let params = FeasibleSetParams::new(data.n(), r, kappa, a.q)?;
    let state = fantope::solve(&data, &params, &cfg.solver)?;
    if let Some(path) = &a.trace {
        state.write_trace_csv(std::fs::File::create(path).map_err(Error::at(path))?)?;
    }
    if let Some(path) = &a.out {
        io::write_json(path, &matrix_json(&state.x))?;
    }
    let res = state.feas_trace.last().copied().unwrap_or_default();
    Ok(json!({
        "status": state.status,
        "iters": state.iters,
        "objective": state.objective(),
        "residuals": res,
        "cuts": state.cuts.len(),
        "norm_ratio": state.norm_ratio,
        "norm_ratio_exact": state.norm_ratio_exact,
        "delta_diag": meta.model.as_ref().map(|m| fantope::compute_delta_diagnostic(&state.x, &data, m)),
    }))
}

fn provenance_delta(d: &Dataset) -> f64 {
    match d.provenance {
        Provenance::Clean => 0.0,
        Provenance::Perturbed { delta, .. } => delta,
    }
}

fn cmd_estimate(a: &EstimateArgs) -> Result<Value> {
    let data = io::read_dataset(&a.input)?;
    let meta = Meta::load(&a.input)?;
    let (r, kappa) = rank_and_kappa(&a.model, &meta)?;
    let cfg = estimator_config(&a.model, a.kappa_slack)?;
    let delta = a.delta.unwrap_or_else(|| provenance_delta(&data));
    let algo_name = match a.algo {
        Algo::Sdp => "sdp",
        Algo::AdvRobustPca => "adv_robust_pca",
        Algo::StatisticalR1 => "statistical_r1",
        Algo::VanillaPca => "vanilla_pca",
    };
    let hash = io::config_hash(
        &json!({ "algo": algo_name, "config": cfg, "r": r, "kappa": kappa, "max_support": a.max_support.to_string() }),
    )?;
    let mut out =
        json!({ "algo": algo_name, "r": r, "kappa": kappa, "delta": delta, "m": data.m(), "config_hash": hash });
    let projector = match a.algo {
        Algo::AdvRobustPca => {
            let params = FeasibleSetParams::new(data.n(), r, kappa, NormIndex::Infinity)?;
            let est = estimators::adv_robust_pca(&data, &params, &cfg)?;
            if let Some(model) = &meta.model {
                let mut rep = ErrorReport::projector_errors(&est.projection.projector, &model.projector());
                rep.frob_cov_sq = (&est.sigma_top_hat - model.sigma_top()).norm_squared();
                let half = est.sample_counts.0;
                rep.predicted_bound_proj =
                    metrics::predicted_error_comp(model, &params, delta, half).unwrap_or(f64::NAN);
                rep.predicted_bound_cov =
                    metrics::predicted_bound_cov(model, &params, delta, half, rep.predicted_bound_proj);
                rep.delta_diag = f64::NAN;
                out["report"] = report_json(&rep);
                out["sin_theta_sq"] = num(rep.sin_theta_sq);
            }
            out["solver_iters"] = json!(est.projection.state.iters);
            out["sigma_top_hat"] = matrix_json(&est.sigma_top_hat);
            est.projection.projector
        }
        _ => {
            let kind = match a.algo {
                Algo::Sdp => EstimatorKind::Sdp,
                Algo::StatisticalR1 => EstimatorKind::StatisticalR1,
                _ => EstimatorKind::VanillaPca,
            };
            let fit = harness::fit_estimator(kind, &cfg, a.max_support, &data, r, kappa)?;
            if let Some(model) = meta.model.as_ref().filter(|m| m.r == r && m.n == data.n()) {
                let ev = harness::score(kind, &fit, model, &data, kappa, delta)?;
                out["report"] = report_json(&ev.report);
                out["sin_theta_sq"] = num(ev.report.sin_theta_sq);
                out["predicted_lower_proj"] = num(ev.predicted_lower_proj);
            }
            out["kappa_measured"] = num(fit.projector.measured_kappa);
            out["solver_iters"] = json!(fit.solver_iters);
            out["solver_kappa"] = num(fit.solver_kappa);
            fit.projector
        }
    };
    if let Some(path) = &a.out {
        io::write_json(
            path,
            &json!({ "projector": matrix_json(&projector.p), "basis": matrix_json(&projector.basis), "config_hash": out["config_hash"] }),
        )?;
    }
    Ok(out)
}

fn cmd_mean(a: &MeanArgs) -> Result<Value> {
    let data = io::read_dataset(&a.input)?;
    let meta = Meta::load(&a.input)?;
    let sigma = a
        .sigma
        .or(meta.f64("sigma"))
        .ok_or_else(|| Error::InvalidParameter("pass --sigma or use a dataset whose sidecar records it".into()))?;
    let est = estimators::robust_mean(&data, a.q, a.delta, sigma)?;
    let mut out = serde_json::to_value(&est)?;
    if let Some(mu) = &data.mu {
        let hat = DVector::from_column_slice(&est.mu_hat);
        let emp = DVector::from_column_slice(&est.mu_empirical);
        out["error_sq"] = json!((hat - mu).norm_squared());
        out["empirical_error_sq"] = json!((emp - mu).norm_squared());
    }
    Ok(out)
}

fn cmd_sweep(a: &SweepArgs) -> Result<(Value, bool)> {
    let mut spec = SweepSpec::from_path(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.master_seed = seed;
    }
    let opts = RunOptions { threads: a.threads, resume: a.resume, output: a.out.clone() };
    let summary = harness::run_sweep(&spec, &opts)?;
    let count = |s: harness::RecordStatus| summary.records.iter().filter(|r| r.status == s).count();
    let mut out = json!({
        "rows": summary.records.len(),
        "newly_run": summary.newly_run,
        "ok": count(harness::RecordStatus::Ok),
        "skipped": count(harness::RecordStatus::Skipped),
        "errors": summary.errors(),
        "determinism_hash": summary.hash,
        "output": opts.output.or(spec.output_path.clone()),
    });
    if let Some(axis) = a.fit {
        out["fit"] = match harness::fit_scaling(&summary.records, axis, &a.fit_y) {
            Ok(fit) => serde_json::to_value(fit)?,
            Err(e) => json!({ "error": e.to_string() }),
        };
    }
    Ok((out, summary.errors() == 0))
}

fn cmd_plot(a: &PlotArgs) -> Result<Value> {
    let spec = match &a.spec {
        Some(path) => serde_json::from_str::<PlotSpec>(&std::fs::read_to_string(path).map_err(Error::at(path))?)?,
        None => {
            let mut s =
                PlotSpec::new(a.input.clone().unwrap_or_default(), &a.x, &a.y, a.output.clone().unwrap_or_default());
            s.group_by = a.group_by.clone();
            s.log_x = a.log_x;
            s.log_y = a.log_y;
            s.references = a.references.clone();
            s.title = a.title.clone();
            s
        }
    };
    let svg = plot::plot(&spec)?;
    Ok(json!({ "output": spec.output, "bytes": svg.len() }))
}

fn error_kind(e: &Error) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

/// Write the summary; a closed stdout is not an error.
fn print(json_mode: bool, v: &Value) {
    let mut out = std::io::stdout().lock();
    if json_mode {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(v).expect("serializable summary"));
    } else if let Some(map) = v.as_object() {
        for (k, val) in map {
            let _ = match val {
                Value::Object(_) | Value::Array(_) => {
                    writeln!(out, "{k}: {}", serde_json::to_string(val).unwrap_or_default())
                }
                Value::String(s) => writeln!(out, "{k}: {s}"),
                other => writeln!(out, "{k}: {other}"),
            };
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|v| (v, true)),
        Command::Attack(a) => cmd_attack(a).map(|v| (v, true)),
        Command::Solve(a) => cmd_solve(a).map(|v| (v, true)),
        Command::Estimate(a) => cmd_estimate(a).map(|v| (v, true)),
        Command::Mean(a) => cmd_mean(a).map(|v| (v, true)),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Plot(a) => cmd_plot(a).map(|v| (v, true)),
    };
    match result {
        Ok((v, clean)) => {
            print(cli.json, &v);
            if clean {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            if cli.json {
                eprintln!("{}", json!({ "error": { "kind": error_kind(&e), "message": e.to_string() } }));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(1)
        }
    }
}
