//! Parameter sweeps: cell enumeration, seeding, parallel execution, CSV
//! persistence with resume, and log-log slope fits.
//!
//! Every (cell, seed index) pair gets its own seed from a 64-bit mix of the
//! master seed and the cell coordinates, so results do not depend on the
//! order in which cells run or on the number of worker threads.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::{self, AttackKind, InstanceOptimalOptions, MinmaxOptions};
use crate::covmodel::{self, derive_seed, splitmix64, CovarianceModel, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorConfig, ProjectionMatrix};
use crate::fantope::{self, FeasibleSetParams, SolverConfig};
use crate::linalg;
use crate::metrics::{self, ErrorReport};
use crate::norms::NormIndex;

/// Version stamped into every CSV row.
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "ROBUST_SUBSPACE_THREADS";

/// CSV header, in column order.
pub const CSV_COLUMNS: [&str; 28] = [
    "schema_version",
    "cell_id",
    "n",
    "r",
    "theta",
    "kappa",
    "delta",
    "m",
    "adversary",
    "estimator",
    "seed_index",
    "seed",
    "kappa_measured",
    "epsilon",
    "max_violation",
    "sin_theta_sq",
    "frob_proj_sq",
    "frob_cov_sq",
    "inner_product",
    "predicted_bound_proj",
    "predicted_lower_proj",
    "predicted_bound_cov",
    "delta_diag",
    "solver_iters",
    "solver_kappa",
    "status",
    "note",
    "wall_time",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Sdp,
    StatisticalR1,
    VanillaPca,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Sdp => "sdp",
            EstimatorKind::StatisticalR1 => "statistical_r1",
            EstimatorKind::VanillaPca => "vanilla_pca",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "sdp" => EstimatorKind::Sdp,
            "statistical_r1" => EstimatorKind::StatisticalR1,
            "vanilla_pca" => EstimatorKind::VanillaPca,
            other => return Err(Error::InvalidParameter(format!("unknown estimator `{other}`"))),
        })
    }
}

fn default_seeds() -> usize {
    1
}

fn default_slack() -> f64 {
    1.0
}

fn default_max_support() -> u128 {
    100_000
}

/// A sweep description, usually read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub master_seed: u64,
    pub n: Vec<usize>,
    pub r: Vec<usize>,
    pub theta: Vec<f64>,
    pub kappa: Vec<f64>,
    pub delta: Vec<f64>,
    pub m: Vec<usize>,
    pub adversary: AttackKind,
    pub estimator: EstimatorKind,
    #[serde(default = "default_seeds")]
    pub seeds_per_cell: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Multiplier on `κ` handed to the solver.
    #[serde(default = "default_slack")]
    pub kappa_slack: f64,
    #[serde(default)]
    pub instance_optimal: InstanceOptimalOptions,
    #[serde(default)]
    pub minmax: MinmaxOptions,
    /// Support budget of the exhaustive estimator.
    #[serde(default = "default_max_support")]
    pub max_support: u128,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

impl SweepSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path).map_err(Error::at(path))?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, xs: &[f64]| {
            if xs.is_empty() || xs.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                Err(Error::InvalidParameter(format!("grid `{name}` must be non-empty and positive")))
            } else {
                Ok(())
            }
        };
        let counts = |name: &str, xs: &[usize]| {
            if xs.is_empty() || xs.contains(&0) {
                Err(Error::InvalidParameter(format!("grid `{name}` must be non-empty and positive")))
            } else {
                Ok(())
            }
        };
        counts("n", &self.n)?;
        counts("r", &self.r)?;
        counts("m", &self.m)?;
        positive("theta", &self.theta)?;
        positive("kappa", &self.kappa)?;
        // δ = 0 is a legitimate clean cell
        if self.delta.is_empty() || self.delta.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidParameter("grid `delta` must be non-empty and nonnegative".into()));
        }
        if self.seeds_per_cell == 0 {
            return Err(Error::InvalidParameter("seeds_per_cell must be at least 1".into()));
        }
        Ok(())
    }

    /// All cells in a fixed order: `n`, `r`, `θ`, `κ`, `δ`, `m`, outermost first.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &r in &self.r {
                for &theta in &self.theta {
                    for &kappa in &self.kappa {
                        for &delta in &self.delta {
                            for &m in &self.m {
                                let id = out.len();
                                out.push(Cell { id, n, r, theta, kappa, delta, m });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig { solver: self.solver.clone(), kappa_slack: self.kappa_slack, ..Default::default() }
    }
}

/// One point of the parameter grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub id: usize,
    pub n: usize,
    pub r: usize,
    pub theta: f64,
    pub kappa: f64,
    pub delta: f64,
    pub m: usize,
}

impl Cell {
    /// Seed for `seed_index`: splitmix64 folded over the master seed, the
    /// coordinate bit patterns and the seed index.
    pub fn seed(&self, master: u64, seed_index: usize) -> u64 {
        let words = [
            self.n as u64,
            self.r as u64,
            self.theta.to_bits(),
            self.kappa.to_bits(),
            self.delta.to_bits(),
            self.m as u64,
            seed_index as u64,
        ];
        words.iter().fold(splitmix64(master), |h, &w| splitmix64(h ^ w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Skipped,
    Error,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub cell_id: usize,
    pub n: usize,
    pub r: usize,
    pub theta: f64,
    pub kappa: f64,
    pub delta: f64,
    pub m: usize,
    pub adversary: AttackKind,
    pub estimator: EstimatorKind,
    pub seed_index: usize,
    pub seed: u64,
    pub kappa_measured: f64,
    pub epsilon: f64,
    pub max_violation: f64,
    pub sin_theta_sq: f64,
    pub frob_proj_sq: f64,
    pub frob_cov_sq: f64,
    pub inner_product: f64,
    pub predicted_bound_proj: f64,
    pub predicted_lower_proj: f64,
    pub predicted_bound_cov: f64,
    pub delta_diag: f64,
    pub solver_iters: usize,
    pub solver_kappa: f64,
    pub status: RecordStatus,
    pub note: String,
    pub wall_time: f64,
}

impl ExperimentRecord {
    fn blank(spec: &SweepSpec, cell: &Cell, seed_index: usize, seed: u64) -> Self {
        ExperimentRecord {
            schema_version: SCHEMA_VERSION,
            cell_id: cell.id,
            n: cell.n,
            r: cell.r,
            theta: cell.theta,
            kappa: cell.kappa,
            delta: cell.delta,
            m: cell.m,
            adversary: spec.adversary,
            estimator: spec.estimator,
            seed_index,
            seed,
            kappa_measured: f64::NAN,
            epsilon: 0.0,
            max_violation: 0.0,
            sin_theta_sq: f64::NAN,
            frob_proj_sq: f64::NAN,
            frob_cov_sq: f64::NAN,
            inner_product: f64::NAN,
            predicted_bound_proj: f64::NAN,
            predicted_lower_proj: f64::NAN,
            predicted_bound_cov: f64::NAN,
            delta_diag: f64::NAN,
            solver_iters: 0,
            solver_kappa: f64::NAN,
            status: RecordStatus::Ok,
            note: String::new(),
            wall_time: 0.0,
        }
    }

    /// Value of a numeric column by CSV name.
    pub fn field(&self, name: &str) -> Option<f64> {
        Some(match name {
            "n" => self.n as f64,
            "r" => self.r as f64,
            "theta" => self.theta,
            "kappa" => self.kappa,
            "delta" => self.delta,
            "m" => self.m as f64,
            "kappa_measured" => self.kappa_measured,
            "epsilon" => self.epsilon,
            "max_violation" => self.max_violation,
            "sin_theta_sq" => self.sin_theta_sq,
            "frob_proj_sq" => self.frob_proj_sq,
            "frob_cov_sq" => self.frob_cov_sq,
            "inner_product" => self.inner_product,
            "predicted_bound_proj" => self.predicted_bound_proj,
            "predicted_lower_proj" => self.predicted_lower_proj,
            "predicted_bound_cov" => self.predicted_bound_cov,
            "delta_diag" => self.delta_diag,
            "solver_iters" => self.solver_iters as f64,
            _ => return None,
        })
    }
}

/// The model a cell is built on.
pub fn cell_model(spec: &SweepSpec, cell: &Cell) -> Result<CovarianceModel> {
    match spec.adversary {
        AttackKind::Minmax => covmodel::minmax_model(cell.n, cell.r, cell.theta, cell.kappa),
        _ => covmodel::spiked_model(cell.n, cell.r, cell.theta, cell.kappa),
    }
}

/// Data actually shown to the estimator, plus attack bookkeeping.
pub struct CellData {
    pub model: CovarianceModel,
    pub clean: Dataset,
    pub perturbed: Dataset,
    pub epsilon: f64,
    pub max_violation: f64,
    /// `κ` given to the estimator before slack.
    pub estimator_kappa: f64,
}

/// Seed handed to the attack of a pair whose data seed is `seed`.
pub fn attack_seed(seed: u64) -> u64 {
    derive_seed(seed, 1)
}

/// `κ` the estimator is told for a model built with target `kappa`.
pub fn estimator_kappa(kind: AttackKind, model: &CovarianceModel, kappa: f64) -> f64 {
    match kind {
        AttackKind::Minmax => kappa.min((model.n as f64).sqrt()),
        _ => model.kappa,
    }
}

/// Sample and attack one (cell, seed) pair.
pub fn cell_data(spec: &SweepSpec, cell: &Cell, seed: u64) -> Result<CellData> {
    let model = cell_model(spec, cell)?;
    let clean = covmodel::sample(&model, cell.m, None, seed)?;
    let attack_seed = attack_seed(seed);
    let estimator_kappa = estimator_kappa(spec.adversary, &model, cell.kappa);
    let (perturbed, epsilon, max_violation) = match spec.adversary {
        AttackKind::None => (clean.clone(), 0.0, 0.0),
        AttackKind::ConstantShift => {
            let p = adversary::attack_constant_shift(&clean, cell.delta, &vec![1.0; cell.n])?;
            (p, 0.0, cell.delta)
        }
        AttackKind::SpikeInflation => {
            let p = adversary::attack_spike_inflation(&model, &clean, cell.delta)?;
            let rep = adversary::validate_budget(&clean, &p, NormIndex::Infinity, cell.delta)?;
            (p, 0.0, rep.max_violation)
        }
        AttackKind::InstanceOptimal => {
            let inst =
                adversary::attack_instance_optimal(&model, &clean, cell.delta, &spec.instance_optimal, attack_seed)?;
            (inst.perturbed, inst.epsilon, inst.max_violation)
        }
        AttackKind::Minmax => {
            let inst = adversary::attack_minmax(&model, &clean, cell.kappa, cell.delta, &spec.minmax, attack_seed)?;
            (inst.perturbed, inst.epsilon, inst.max_violation)
        }
    };
    Ok(CellData { model, clean, perturbed, epsilon, max_violation, estimator_kappa })
}

/// Everything an estimator run contributes to a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub estimator: EstimatorKind,
    pub report: ErrorReport,
    pub predicted_lower_proj: f64,
    pub kappa_measured: f64,
    pub solver_iters: usize,
    pub solver_kappa: f64,
}

/// A fitted projector plus solver bookkeeping.
#[derive(Debug, Clone)]
pub struct FittedProjector {
    pub projector: ProjectionMatrix,
    /// Solver output before rounding, for the SDP estimator.
    pub x_hat: Option<nalgebra::DMatrix<f64>>,
    pub solver_iters: usize,
    pub solver_kappa: f64,
}

/// Run `estimator` on `data` for rank `r` and bound `kappa`.
pub fn fit_estimator(
    estimator: EstimatorKind,
    config: &EstimatorConfig,
    max_support: u128,
    data: &Dataset,
    r: usize,
    kappa: f64,
) -> Result<FittedProjector> {
    let params = FeasibleSetParams::new(data.n(), r, kappa, NormIndex::Infinity)?;
    Ok(match estimator {
        EstimatorKind::Sdp => {
            let out = estimators::robust_projection(data, &params, config)?;
            FittedProjector {
                projector: out.projector,
                solver_iters: out.state.iters,
                solver_kappa: out.solver_kappa,
                x_hat: Some(out.state.x),
            }
        }
        EstimatorKind::StatisticalR1 => {
            if r != 1 {
                return Err(Error::InvalidParameter("the exhaustive estimator is rank one only".into()));
            }
            let s = estimators::statistical_estimator_r1(data, kappa, max_support, &config.oracle())?;
            FittedProjector { projector: s.projector, x_hat: None, solver_iters: 0, solver_kappa: f64::NAN }
        }
        EstimatorKind::VanillaPca => FittedProjector {
            projector: estimators::vanilla_pca(data, r, &config.oracle())?,
            x_hat: None,
            solver_iters: 0,
            solver_kappa: f64::NAN,
        },
    })
}

/// Score a fitted projector against `model`.
///
/// `frob_cov_sq` compares `Π̂ S Π̂`, with `S` the second moment of `data`,
/// against `Σ_top`. Reference curves are evaluated at the unslacked `kappa`.
pub fn score(
    estimator: EstimatorKind,
    fit: &FittedProjector,
    model: &CovarianceModel,
    data: &Dataset,
    kappa: f64,
    delta: f64,
) -> Result<Evaluation> {
    let m = data.m();
    let params = FeasibleSetParams::new(model.n, model.r, kappa, NormIndex::Infinity)?;
    let projector = &fit.projector;
    let mut report = ErrorReport::projector_errors(projector, &model.projector());
    let s = data.second_moment();
    let sigma_top_hat = linalg::symmetrize(&(&projector.p * &s * &projector.p));
    report.frob_cov_sq = (sigma_top_hat - model.sigma_top()).norm_squared();
    report.delta_diag = fantope::compute_delta_diagnostic(fit.x_hat.as_ref().unwrap_or(&projector.p), data, model);
    report.predicted_bound_proj = metrics::predicted_error_comp(model, &params, delta, m).unwrap_or(f64::NAN);
    report.predicted_bound_cov = metrics::predicted_bound_cov(model, &params, delta, m, report.predicted_bound_proj);
    Ok(Evaluation {
        estimator,
        report,
        predicted_lower_proj: metrics::predicted_error_lower(model, &params, delta, m),
        kappa_measured: projector.measured_kappa,
        solver_iters: fit.solver_iters,
        solver_kappa: fit.solver_kappa,
    })
}

/// [`fit_estimator`] followed by [`score`].
pub fn evaluate(
    estimator: EstimatorKind,
    config: &EstimatorConfig,
    max_support: u128,
    model: &CovarianceModel,
    data: &Dataset,
    kappa: f64,
    delta: f64,
) -> Result<Evaluation> {
    let fit = fit_estimator(estimator, config, max_support, data, model.r, kappa)?;
    score(estimator, &fit, model, data, kappa, delta)
}

/// Run the configured estimator on a cell's data and fill in the errors.
pub fn evaluate_cell(spec: &SweepSpec, cell: &Cell, data: &CellData, rec: &mut ExperimentRecord) -> Result<()> {
    let ev = evaluate(
        spec.estimator,
        &spec.estimator_config(),
        spec.max_support,
        &data.model,
        &data.perturbed,
        data.estimator_kappa,
        cell.delta,
    )?;
    let rep = ev.report;
    rec.kappa_measured = ev.kappa_measured;
    rec.solver_iters = ev.solver_iters;
    rec.solver_kappa = ev.solver_kappa;
    rec.sin_theta_sq = rep.sin_theta_sq;
    rec.frob_proj_sq = rep.frob_proj_sq;
    rec.frob_cov_sq = rep.frob_cov_sq;
    rec.inner_product = rep.inner_product;
    rec.predicted_bound_proj = rep.predicted_bound_proj;
    rec.predicted_lower_proj = ev.predicted_lower_proj;
    rec.predicted_bound_cov = rep.predicted_bound_cov;
    rec.delta_diag = rep.delta_diag;
    Ok(())
}

fn is_window_error(e: &Error) -> bool {
    matches!(
        e,
        Error::ParameterWindow { .. }
            | Error::SupportOverflow { .. }
            | Error::InvalidSupport(_)
            | Error::BudgetExceeded { .. }
    ) || matches!(e, Error::InvalidParameter(msg) if msg.contains("kappa"))
}

/// Run one (cell, seed index) pair. Failures become the row status.
pub fn run_cell(spec: &SweepSpec, cell: &Cell, seed_index: usize) -> ExperimentRecord {
    let seed = cell.seed(spec.master_seed, seed_index);
    let mut rec = ExperimentRecord::blank(spec, cell, seed_index, seed);
    let start = Instant::now();
    let result = cell_data(spec, cell, seed).and_then(|data| {
        rec.epsilon = data.epsilon;
        rec.max_violation = data.max_violation;
        evaluate_cell(spec, cell, &data, &mut rec)
    });
    if let Err(e) = result {
        rec.status = if is_window_error(&e) { RecordStatus::Skipped } else { RecordStatus::Error };
        rec.note = e.to_string();
    }
    rec.wall_time = start.elapsed().as_secs_f64();
    rec
}

/// How to execute a sweep.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; falls back to `ROBUST_SUBSPACE_THREADS`, then to rayon's default.
    pub threads: Option<usize>,
    /// Keep rows already present in the output file and skip their pairs.
    pub resume: bool,
    /// Overrides the spec's output path.
    pub output: Option<PathBuf>,
}

/// Thread count from the option or the environment.
pub fn resolve_threads(opt: Option<usize>) -> Option<usize> {
    opt.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok())).filter(|&t| t > 0)
}

fn format_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        // shortest round-tripping representation
        format!("{x:?}")
    }
}

fn record_fields(r: &ExperimentRecord) -> Vec<String> {
    vec![
        r.schema_version.to_string(),
        r.cell_id.to_string(),
        r.n.to_string(),
        r.r.to_string(),
        format_f64(r.theta),
        format_f64(r.kappa),
        format_f64(r.delta),
        r.m.to_string(),
        r.adversary.name().to_string(),
        r.estimator.name().to_string(),
        r.seed_index.to_string(),
        r.seed.to_string(),
        format_f64(r.kappa_measured),
        format_f64(r.epsilon),
        format_f64(r.max_violation),
        format_f64(r.sin_theta_sq),
        format_f64(r.frob_proj_sq),
        format_f64(r.frob_cov_sq),
        format_f64(r.inner_product),
        format_f64(r.predicted_bound_proj),
        format_f64(r.predicted_lower_proj),
        format_f64(r.predicted_bound_cov),
        format_f64(r.delta_diag),
        r.solver_iters.to_string(),
        format_f64(r.solver_kappa),
        match r.status {
            RecordStatus::Ok => "ok",
            RecordStatus::Skipped => "skipped",
            RecordStatus::Error => "error",
        }
        .to_string(),
        r.note.clone(),
        format_f64(r.wall_time),
    ]
}

fn write_row<W: Write>(w: &mut csv::Writer<W>, r: &ExperimentRecord) -> Result<()> {
    w.write_record(record_fields(r))?;
    w.flush()?;
    Ok(())
}

/// Parse rows written by a sweep.
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_COLUMNS {
        return Err(Error::Format(format!("unexpected CSV header in {}", path.display())));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or("");
        let f = |i: usize| -> Result<f64> {
            get(i)
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number `{}` in column {}", get(i), CSV_COLUMNS[i])))
        };
        let u = |i: usize| -> Result<u64> {
            get(i)
                .parse::<u64>()
                .map_err(|_| Error::Format(format!("bad integer `{}` in column {}", get(i), CSV_COLUMNS[i])))
        };
        out.push(ExperimentRecord {
            schema_version: u(0)? as u32,
            cell_id: u(1)? as usize,
            n: u(2)? as usize,
            r: u(3)? as usize,
            theta: f(4)?,
            kappa: f(5)?,
            delta: f(6)?,
            m: u(7)? as usize,
            adversary: get(8).parse()?,
            estimator: get(9).parse()?,
            seed_index: u(10)? as usize,
            seed: u(11)?,
            kappa_measured: f(12)?,
            epsilon: f(13)?,
            max_violation: f(14)?,
            sin_theta_sq: f(15)?,
            frob_proj_sq: f(16)?,
            frob_cov_sq: f(17)?,
            inner_product: f(18)?,
            predicted_bound_proj: f(19)?,
            predicted_lower_proj: f(20)?,
            predicted_bound_cov: f(21)?,
            delta_diag: f(22)?,
            solver_iters: u(23)? as usize,
            solver_kappa: f(24)?,
            status: match get(25) {
                "ok" => RecordStatus::Ok,
                "skipped" => RecordStatus::Skipped,
                "error" => RecordStatus::Error,
                other => return Err(Error::Format(format!("bad status `{other}`"))),
            },
            note: get(26).to_string(),
            wall_time: f(27)?,
        });
    }
    Ok(out)
}

/// Drop a trailing partial line left by an interrupted run.
fn truncate_partial_line(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let f = OpenOptions::new().write(true).open(path)?;
    f.set_len(keep as u64)?;
    Ok(())
}

/// SHA-256 over the sorted CSV rows with `wall_time` removed.
pub fn determinism_hash(records: &[ExperimentRecord]) -> String {
    let mut lines: Vec<String> = records
        .iter()
        .map(|r| {
            let mut f = record_fields(r);
            f.pop();
            f.join(",")
        })
        .collect();
    lines.sort();
    let mut h = Sha256::new();
    for l in &lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    crate::io::hex(&h.finalize())
}

/// Result of [`run_sweep`].
#[derive(Debug, Clone)]
pub struct SweepSummary {
    /// All rows, including resumed ones, sorted by `(cell_id, seed_index)`.
    pub records: Vec<ExperimentRecord>,
    pub newly_run: usize,
    pub hash: String,
}

impl SweepSummary {
    pub fn errors(&self) -> usize {
        self.records.iter().filter(|r| r.status == RecordStatus::Error).count()
    }
}

/// Execute every (cell, seed index) pair, appending rows to the output CSV
/// (if any) as they finish.
pub fn run_sweep(spec: &SweepSpec, opts: &RunOptions) -> Result<SweepSummary> {
    spec.validate()?;
    let output = opts.output.clone().or_else(|| spec.output_path.clone());
    let mut previous = Vec::new();
    let mut writer: Option<Mutex<csv::Writer<File>>> = None;
    if let Some(path) = &output {
        let existing = path.exists() && std::fs::metadata(path)?.len() > 0;
        if opts.resume && existing {
            truncate_partial_line(path)?;
            previous = read_records(path)?;
            let mut f = OpenOptions::new().append(true).open(path)?;
            f.seek(SeekFrom::End(0))?;
            writer = Some(Mutex::new(csv::WriterBuilder::new().has_headers(false).from_writer(f)));
        } else {
            let f = File::create(path).map_err(Error::at(path))?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
            w.write_record(CSV_COLUMNS)?;
            w.flush()?;
            writer = Some(Mutex::new(w));
        }
    }
    let done: HashSet<(usize, usize)> = previous.iter().map(|r| (r.cell_id, r.seed_index)).collect();
    let work: Vec<(Cell, usize)> = spec
        .cells()
        .into_iter()
        .flat_map(|c| (0..spec.seeds_per_cell).map(move |s| (c, s)))
        .filter(|(c, s)| !done.contains(&(c.id, *s)))
        .collect();

    let sink_error: Mutex<Option<Error>> = Mutex::new(None);
    let run_one = |(cell, s): &(Cell, usize)| -> ExperimentRecord {
        let rec = run_cell(spec, cell, *s);
        if let Some(w) = &writer {
            let mut w = w.lock().expect("csv writer lock");
            if let Err(e) = write_row(&mut w, &rec) {
                sink_error.lock().expect("error slot").get_or_insert(e);
            }
        }
        rec
    };
    let fresh: Vec<ExperimentRecord> = match resolve_threads(opts.threads) {
        Some(1) => work.iter().map(run_one).collect(),
        threads => {
            let mut b = rayon::ThreadPoolBuilder::new();
            if let Some(t) = threads {
                b = b.num_threads(t);
            }
            let pool = b.build().map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            pool.install(|| work.par_iter().map(run_one).collect())
        }
    };
    if let Some(e) = sink_error.into_inner().expect("error slot") {
        return Err(e);
    }
    let newly_run = fresh.len();
    let mut records = previous;
    records.extend(fresh);
    records.sort_by_key(|r| (r.cell_id, r.seed_index));
    let hash = determinism_hash(&records);
    Ok(SweepSummary { records, newly_run, hash })
}

/// Axis for [`fit_scaling`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingAxis {
    Delta,
    M,
    Kappa,
    R,
}

impl ScalingAxis {
    fn column(self) -> &'static str {
        match self {
            ScalingAxis::Delta => "delta",
            ScalingAxis::M => "m",
            ScalingAxis::Kappa => "kappa",
            ScalingAxis::R => "r",
        }
    }
}

impl std::str::FromStr for ScalingAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "delta" => ScalingAxis::Delta,
            "m" => ScalingAxis::M,
            "kappa" => ScalingAxis::Kappa,
            "r" => ScalingAxis::R,
            other => return Err(Error::InvalidParameter(format!("unknown axis `{other}`"))),
        })
    }
}

/// Least-squares log-log slope with a bootstrap interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `(x, median y)` per grid point.
    pub points: Vec<(f64, f64)>,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn ls_slope(points: &[(f64, f64)]) -> (f64, f64) {
    let k = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Slope of `log(median y)` against `log x` over records with status `ok`.
///
/// The interval comes from 1000 bootstrap resamples of the seeds within
/// each grid point.
pub fn fit_scaling(records: &[ExperimentRecord], axis: ScalingAxis, y: &str) -> Result<ScalingFit> {
    let mut groups: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.status == RecordStatus::Ok) {
        let x = r.field(axis.column()).expect("axis column");
        let v = r.field(y).ok_or_else(|| Error::MissingColumn(y.to_string()))?;
        if v.is_finite() {
            groups.entry(x.to_bits()).or_insert((x, Vec::new())).1.push(v);
        }
    }
    let mut groups: Vec<(f64, Vec<f64>)> = groups.into_values().filter(|(x, _)| *x > 0.0).collect();
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    let points: Vec<(f64, f64)> = groups.iter().map(|(x, ys)| (*x, median(&mut ys.clone()))).collect();
    if points.len() < 4 || points.iter().any(|&(_, m)| !(m > 0.0)) {
        return Err(Error::InsufficientData(format!(
            "need at least 4 grid points with positive medians, have {}",
            points.iter().filter(|p| p.1 > 0.0).count()
        )));
    }
    let (slope, intercept) = ls_slope(&points);
    let mut rng = ChaCha8Rng::seed_from_u64(0xb007);
    let mut slopes = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let pts: Vec<(f64, f64)> = groups
            .iter()
            .map(|(x, ys)| {
                let mut draw: Vec<f64> = (0..ys.len()).map(|_| ys[rng.random_range(0..ys.len())]).collect();
                (*x, median(&mut draw))
            })
            .collect();
        if pts.iter().all(|p| p.1 > 0.0) {
            slopes.push(ls_slope(&pts).0);
        }
    }
    slopes.sort_by(|a, b| a.total_cmp(b));
    let q =
        |p: f64| if slopes.is_empty() { f64::NAN } else { slopes[((slopes.len() - 1) as f64 * p).round() as usize] };
    Ok(ScalingFit { slope, intercept, ci_low: q(0.025), ci_high: q(0.975), points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(slope: f64) -> Vec<ExperimentRecord> {
        let spec = tiny_spec();
        let cell = spec.cells()[0];
        let mut out = Vec::new();
        for (i, d) in [0.1, 0.2, 0.4, 0.8, 1.6].iter().enumerate() {
            for s in 0..5 {
                let mut r = ExperimentRecord::blank(&spec, &cell, s, 0);
                r.cell_id = i;
                r.delta = *d;
                r.sin_theta_sq = 3.0 * d.powf(slope);
                out.push(r);
            }
        }
        out
    }

    fn tiny_spec() -> SweepSpec {
        SweepSpec::from_json_str(
            r#"{"n":[8],"r":[1],"theta":[1.0],"kappa":[2.0],"delta":[0.0],"m":[200],
                "adversary":"none","estimator":"sdp","seeds_per_cell":2}"#,
        )
        .unwrap()
    }

    #[test]
    fn exact_power_laws() {
        for slope in [1.0, 2.0] {
            let fit = fit_scaling(&synthetic(slope), ScalingAxis::Delta, "sin_theta_sq").unwrap();
            assert!((fit.slope - slope).abs() < 1e-10);
            assert!((fit.ci_low - slope).abs() < 1e-10 && (fit.ci_high - slope).abs() < 1e-10);
        }
        let few: Vec<_> = synthetic(1.0).into_iter().filter(|r| r.delta < 0.5).collect();
        assert!(matches!(fit_scaling(&few, ScalingAxis::Delta, "sin_theta_sq"), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn seeds_depend_on_coordinates() {
        let spec = tiny_spec();
        let c = spec.cells()[0];
        let mut d = c;
        d.delta = 0.5;
        assert_ne!(c.seed(1, 0), d.seed(1, 0));
        assert_ne!(c.seed(1, 0), c.seed(1, 1));
        assert_ne!(c.seed(1, 0), c.seed(2, 0));
        assert_eq!(c.seed(1, 0), c.seed(1, 0));
    }

    #[test]
    fn one_cell_clean_sweep() {
        let summary = run_sweep(&tiny_spec(), &RunOptions { threads: Some(1), ..Default::default() }).unwrap();
        assert_eq!(summary.records.len(), 2);
        for r in &summary.records {
            assert_eq!(r.status, RecordStatus::Ok, "{}", r.note);
            assert!(r.sin_theta_sq <= 0.1);
        }
    }

    #[test]
    fn out_of_window_cells_are_skipped() {
        let mut spec = tiny_spec();
        spec.adversary = AttackKind::InstanceOptimal;
        spec.delta = vec![0.9];
        spec.seeds_per_cell = 1;
        let summary = run_sweep(&spec, &RunOptions { threads: Some(1), ..Default::default() }).unwrap();
        assert_eq!(summary.records[0].status, RecordStatus::Skipped);
        assert_eq!(summary.errors(), 0);
    }
}
