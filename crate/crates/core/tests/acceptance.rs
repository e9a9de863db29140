//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its PASS/FAIL line even when output capture is on.

mod common;

use std::time::Instant;

use common::{brute_inf_to_2, gaussian, median, random_fantope_point, random_psd, random_symmetric};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use robust_subspace::adversary::{
    attack_constant_shift, attack_instance_optimal, attack_minmax, attack_spike_inflation, frobenius_closed_form,
    minmax_window, InstanceOptimalOptions, MinmaxOptions,
};
use robust_subspace::covmodel::{
    general_model, minmax_model, sample, sample_isotropic, spiked_model, BasisSpec, CovarianceModel,
};
use robust_subspace::estimators::{adv_robust_pca, mean_eta, robust_mean, EstimatorConfig, ProjectionMatrix};
use robust_subspace::fantope::{project_fantope, solve_moment, FeasibleSetParams, SolverConfig};
use robust_subspace::harness::{
    fit_scaling, read_records, run_sweep, ExperimentRecord, RecordStatus, RunOptions, ScalingAxis, SweepSpec,
};
use robust_subspace::linalg;
use robust_subspace::metrics::sin_theta_sq;
use robust_subspace::norms::{
    check_psd_monotonicity, op_2_to_1_projector, op_inf_to_1_exact, op_inf_to_1_heuristic, op_q_to_qstar_psd,
    NormIndex, OracleOptions,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (k - 1) as f64).exp()).collect()
}

fn base_spec(json: &str) -> SweepSpec {
    SweepSpec::from_json_str(json).expect("acceptance spec")
}

fn ok_values(records: &[ExperimentRecord], delta: Option<f64>) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.status == RecordStatus::Ok && delta.is_none_or(|d| r.delta == d))
        .map(|r| r.sin_theta_sq)
        .collect()
}

fn norm_oracles() -> Outcome {
    let mut worst_ratio = f64::INFINITY;
    let mut unsound = 0;
    let mut worst_duality = 0.0f64;
    for i in 0..200u64 {
        let mut g = rng(1000 + i);
        let n = 4 + (i as usize % 9);
        let m = random_psd(n, 1 + g.random_range(0..n), &mut g);
        let exact = op_inf_to_1_exact(&m).unwrap();
        let heur = op_inf_to_1_heuristic(&m, 64, &mut g);
        let tol = 1e-9 * exact.value.max(1.0);
        if heur.value > exact.value + tol || (heur.recompute(&m) - heur.value).abs() > tol {
            unsound += 1;
        }
        worst_ratio = worst_ratio.min(heur.value / exact.value);
        let a = gaussian(1 + g.random_range(0..n), n, &mut g);
        let direct = brute_inf_to_2(&a);
        let gram = op_inf_to_1_exact(&(a.transpose() * &a)).unwrap().value;
        worst_duality = worst_duality.max((direct * direct - gram).abs() / gram.max(1.0));
    }
    outcome(
        worst_ratio >= 0.63 && unsound == 0 && worst_duality <= 1e-8,
        format!(
            "min heuristic/exact {worst_ratio:.4}, unsound certificates {unsound}, duality rel err {worst_duality:.1e}"
        ),
    )
}

fn monotonicity() -> Outcome {
    let violations = (0..200u64)
        .filter(|&i| {
            let mut g = rng(2000 + i);
            let a = random_psd(8, 1 + (i as usize % 8), &mut g);
            let b = random_psd(8, 1 + (i as usize % 3), &mut g) * g.random_range(0.01..2.0);
            !check_psd_monotonicity(&a, &b).unwrap()
        })
        .count();
    outcome(violations == 0, format!("{violations} violations in 200 pairs"))
}

fn fantope_projection() -> Outcome {
    let results: Vec<(f64, f64, bool)> = (0..500u64)
        .into_par_iter()
        .map(|i| {
            let mut g = rng(3000 + i);
            let n = 1 + (i as usize % 8);
            let r = (1 + (i as usize / 8) % 3).min(n);
            let m = random_symmetric(n, &mut g) * 2.0;
            let p = project_fantope(&m, r).unwrap();
            let (vals, _) = linalg::sym_eigen(&p);
            let trace_err = (p.trace() - r as f64).abs();
            let eig_err = (-vals[vals.len() - 1]).max(vals[0] - 1.0).max(0.0);
            let best = (&p - &m).norm();
            let beaten = (0..1000).all(|_| best <= (&random_fantope_point(n, r, &mut g) - &m).norm() + 1e-12);
            (trace_err, eig_err, beaten)
        })
        .collect();
    let trace = results.iter().map(|x| x.0).fold(0.0, f64::max);
    let eig = results.iter().map(|x| x.1).fold(0.0, f64::max);
    let lost = results.iter().filter(|x| !x.2).count();
    outcome(
        trace <= 1e-9 && eig <= 1e-9 && lost == 0,
        format!("max trace err {trace:.1e}, max eig overshoot {eig:.1e}, {lost} of 500 beaten by a random point"),
    )
}

fn random_model(g: &mut ChaCha8Rng, n: usize, r: usize) -> CovarianceModel {
    let mut eig: Vec<f64> = (0..n).map(|_| g.random_range(0.0..3.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig[..r].iter_mut().for_each(|l| *l += g.random_range(0.05..2.0));
    eig.sort_by(|a, b| b.total_cmp(a));
    general_model(eig, r, &BasisSpec::RandomRotation { support: n, seed: g.random() }).unwrap()
}

fn feasibility_bounds() -> Outcome {
    let mut worst_distance = f64::INFINITY;
    for i in 0..1000u64 {
        let mut g = rng(4000 + i);
        let n = 3 + (i as usize % 10);
        let r = 1 + (i as usize / 10) % 3;
        let model = random_model(&mut g, n, r);
        let x = if i % 2 == 0 {
            random_fantope_point(n, r, &mut g)
        } else {
            project_fantope(&(random_symmetric(n, &mut g) * 3.0), r).unwrap()
        };
        let (pi, sigma) = (model.projector(), model.sigma());
        let lhs = linalg::frob_inner(&x, &pi);
        let rhs = r as f64 - (linalg::frob_inner(&pi, &sigma) - linalg::frob_inner(&x, &sigma)) / model.eigengap();
        worst_distance = worst_distance.min(lhs - rhs);
    }

    let margins: Vec<f64> = (0..500u64)
        .into_par_iter()
        .map(|i| {
            let mut g = rng(5000 + i);
            let n = 4 + (i as usize % 9);
            let r = 1 + (i as usize % 2);
            let kappa = g.random_range(1.0..(n as f64).sqrt());
            let (x, c) = if i % 5 == 0 {
                let s = random_psd(n, n, &mut g) + random_psd(n, r, &mut g) * 4.0;
                let params = FeasibleSetParams::new(n, r, kappa.max((r as f64).sqrt()), NormIndex::Infinity).unwrap();
                let state = solve_moment(&s, &params, &SolverConfig::default()).unwrap();
                let k2 = params.kappa * params.kappa;
                (state.x, state.norm_ratio * k2 / (kappa * kappa))
            } else {
                let x = random_fantope_point(n, r, &mut g);
                let est = op_q_to_qstar_psd(&x, NormIndex::Infinity, &OracleOptions::default()).unwrap();
                (x, est.value / (kappa * kappa))
            };
            let delta = g.random_range(0.001..1.0);
            let m = 1 + g.random_range(0..40);
            let witness = op_inf_to_1_exact(&linalg::symmetrize(&x)).unwrap().witness_x;
            let b = DMatrix::from_fn(n, m, |row, col| {
                if col % 2 == 0 {
                    delta * witness[row].signum()
                } else {
                    g.random_range(-delta..=delta)
                }
            });
            let lhs = (linalg::psd_sqrt(&x) * b).norm();
            let rhs = (c * m as f64).sqrt() * kappa * delta;
            rhs * (1.0 + 1e-9) - lhs
        })
        .collect();
    let worst_half = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        worst_distance >= -1e-8 && worst_half >= 0.0,
        format!(
            "distance slack min {worst_distance:.2e} over 1000; perturbation bound slack min {worst_half:.2e} over 500"
        ),
    )
}

fn clean_recovery() -> Outcome {
    let spec = base_spec(
        r#"{"master_seed": 5, "n": [16], "r": [1], "theta": [1.0], "kappa": [2.0], "delta": [0.0],
            "m": [20000], "adversary": "none", "estimator": "sdp", "seeds_per_cell": 20}"#,
    );
    let s = run_sweep(&spec, &RunOptions::default()).unwrap();
    let vals = ok_values(&s.records, None);
    let med = median(vals.clone());
    outcome(vals.len() == 20 && med <= 0.05, format!("{} ok rows, median sin^2 {med:.3e} (limit 0.05)", vals.len()))
}

fn headline_spec(n: usize, kappa: f64, deltas: &[f64], estimator: &str) -> SweepSpec {
    let mut spec = base_spec(&format!(
        r#"{{"master_seed": 6, "n": [{n}], "r": [1], "theta": [1.0], "kappa": [{kappa}], "delta": [0.1],
            "m": [50000], "adversary": "instance_optimal", "estimator": "{estimator}", "seeds_per_cell": 20,
            "kappa_slack": 1.5}}"#
    ));
    spec.delta = deltas.to_vec();
    spec
}

fn delta_scaling() -> Outcome {
    let deltas = log_grid(0.17, 0.5, 5);
    let spec = headline_spec(32, 8f64.sqrt(), &deltas, "sdp");
    let s = run_sweep(&spec, &RunOptions::default()).unwrap();
    let ok = ok_values(&s.records, None).len();
    let fit = fit_scaling(&s.records, ScalingAxis::Delta, "sin_theta_sq").unwrap();
    let medians: Vec<String> = fit.points.iter().map(|(d, v)| format!("{d:.3}:{v:.2e}")).collect();
    outcome(
        ok == 100 && (0.7..=1.3).contains(&fit.slope),
        format!(
            "slope {:.3} (95% CI {:.3}..{:.3}), {ok} ok rows, medians [{}]",
            fit.slope,
            fit.ci_low,
            fit.ci_high,
            medians.join(" ")
        ),
    )
}

fn adversary_validity() -> Outcome {
    let model = spiked_model(32, 1, 1.0, 8f64.sqrt()).unwrap();
    let deltas = log_grid(0.17, 0.5, 5);
    let rows: Vec<(bool, bool, f64, bool)> = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let delta = deltas[i as usize % 5];
            let data = sample(&model, 50_000, None, 7000 + i).unwrap();
            let inst =
                attack_instance_optimal(&model, &data, delta, &InstanceOptimalOptions::default(), 8000 + i).unwrap();
            let norms: Vec<f64> = inst.u_vectors.column_iter().map(|c| c.norm()).collect();
            let direct = (&inst.pi_alt - model.projector()).norm_squared();
            let gap = (frobenius_closed_form(inst.epsilon, &norms) - direct).abs();
            let first_try = inst.accepted && inst.rejections == 0;
            let lower_ok = !inst.accepted || direct >= model.r as f64 * inst.epsilon;
            (first_try, inst.accepted, gap, lower_ok)
        })
        .collect();
    let first = rows.iter().filter(|x| x.0).count();
    let accepted = rows.iter().filter(|x| x.1).count();
    let gap = rows.iter().map(|x| x.2).fold(0.0, f64::max);
    let lower = rows.iter().filter(|x| !x.3).count();
    outcome(
        first >= 90 && gap <= 1e-8 && lower == 0,
        format!("{first}/100 within budget on the first draw ({accepted} after resampling), closed form err {gap:.1e}, {lower} below r*eps"),
    )
}

fn minmax_adversary() -> Outcome {
    let kappa = 2.0;
    let model = minmax_model(64, 1, 1.0, kappa).unwrap();
    let (lo, hi) = minmax_window(&model, kappa);
    let deltas = log_grid(lo * 1.05, hi, 5);
    let rows: Vec<(bool, f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let delta = deltas[i as usize % 5];
            let data = sample(&model, 500, None, 9000 + i).unwrap();
            let inst = attack_minmax(&model, &data, kappa, delta, &MinmaxOptions::default(), 9500 + i).unwrap();
            let eps = inst.epsilon;
            let norm = op_2_to_1_projector(&inst.alt_basis).unwrap();
            let frob = (&inst.pi_alt - model.projector()).norm_squared();
            (inst.accepted, kappa - norm, frob - model.r as f64 * (4.0 * eps - 2.0 * eps * eps))
        })
        .collect();
    let acc: Vec<_> = rows.iter().filter(|x| x.0).collect();
    let norm_slack = acc.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let frob_slack = acc.iter().map(|x| x.2).fold(f64::INFINITY, f64::min);
    outcome(
        !acc.is_empty() && norm_slack >= -1e-12 && frob_slack >= -1e-12,
        format!(
            "{} of 100 accepted across delta in [{:.3}, {:.3}]; min kappa - norm {norm_slack:.2e}; min Frobenius slack {frob_slack:.2e}",
            acc.len(),
            deltas[0],
            deltas[4]
        ),
    )
}

fn covariance_recovery() -> Outcome {
    let model = spiked_model(16, 1, 1.0, 2.0).unwrap();
    let params = FeasibleSetParams::new(16, 1, model.kappa, NormIndex::Infinity).unwrap();
    let delta = 0.02;
    let truth = ProjectionMatrix::from_basis(model.top_basis(), &OracleOptions::default()).unwrap();
    let rows: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let clean = sample(&model, 20_000, None, 11_000 + i).unwrap();
            let data = attack_spike_inflation(&model, &clean, delta).unwrap();
            let est = adv_robust_pca(&data, &params, &EstimatorConfig::default()).unwrap();
            let sin = sin_theta_sq(&est.projection.projector, &truth).unwrap();
            let (m, _) = est.sample_counts;
            let (l1, r, k) = (model.lambda_max(), 1.0, model.kappa);
            let bound = 20.0 * (l1 * l1 * sin * 2.0 + l1 * l1 * r * r / m as f64 + l1 * k * k * delta * delta);
            ((est.sigma_top_hat - model.sigma_top()).norm_squared(), bound)
        })
        .collect();
    let hits = rows.iter().filter(|(e, b)| e <= b).count();
    let worst = rows.iter().map(|(e, b)| e / b).fold(0.0, f64::max);
    outcome(hits >= 18, format!("{hits}/20 seeds within bound, worst error/bound {worst:.3}"))
}

fn mean_estimation() -> Outcome {
    let (n, sigma, delta, m) = (64, 0.1, 0.05, 5000);
    let mu: DVector<f64> = DVector::from_fn(n, |i, _| if i < 9 { 1.0 } else { 0.0 });
    let l1: f64 = mu.iter().map(|x| x.abs()).sum();
    let ones = vec![1.0; n];
    let rows: Vec<(bool, bool)> = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let data = sample_isotropic(&mu, sigma, m, 12_000 + i).unwrap();
            let shifted = attack_constant_shift(&data, delta, &ones).unwrap();
            let est = robust_mean(&shifted, NormIndex::Infinity, delta, sigma).unwrap();
            let t = delta + est.eta;
            let bound = 4.0 * (l1 * t).min(n as f64 * t * t);
            let err = (DVector::from_column_slice(&est.mu_hat) - &mu).norm_squared();
            (err <= bound, est.kkt_ok)
        })
        .collect();
    let within = rows.iter().filter(|x| x.0).count();
    let kkt = rows.iter().filter(|x| x.1).count();
    let eta = mean_eta(n, m, NormIndex::Infinity, sigma);
    outcome(within >= 95 && kkt == 100, format!("{within}/100 within bound, KKT exact on {kkt}/100, eta {eta:.4}"))
}

fn statistical_parity() -> Outcome {
    let deltas = log_grid(0.354, 0.707, 5);
    let sdp = run_sweep(&headline_spec(12, 2.0, &deltas, "sdp"), &RunOptions::default()).unwrap();
    let stat = run_sweep(&headline_spec(12, 2.0, &deltas, "statistical_r1"), &RunOptions::default()).unwrap();
    let (a, b) = (ok_values(&sdp.records, None), ok_values(&stat.records, None));
    let (ma, mb) = (median(a.clone()), median(b.clone()));
    let per: Vec<String> = deltas
        .iter()
        .map(|&d| {
            format!(
                "{d:.3}:{:.2}",
                median(ok_values(&stat.records, Some(d))) / median(ok_values(&sdp.records, Some(d)))
            )
        })
        .collect();
    outcome(
        a.len() == 100 && b.len() == 100 && mb <= 2.0 * ma,
        format!(
            "median statistical {mb:.3e} vs sdp {ma:.3e} (ratio {:.3}); per delta ratios [{}]",
            mb / ma,
            per.join(" ")
        ),
    )
}

fn determinism_and_resume() -> Outcome {
    let spec = base_spec(
        r#"{"master_seed": 12, "n": [16], "r": [1], "theta": [1.0], "kappa": [2.0], "delta": [0.0, 0.02, 0.05],
            "m": [2000], "adversary": "spike_inflation", "estimator": "sdp", "seeds_per_cell": 3}"#,
    );
    let run = |threads: usize, output: Option<std::path::PathBuf>, resume: bool| {
        run_sweep(&spec, &RunOptions { threads: Some(threads), resume, output }).unwrap()
    };
    let a = run(1, None, false);
    let b = run(1, None, false);
    let c = run(4, None, false);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    run(4, Some(path.clone()), false);
    let text = std::fs::read_to_string(&path).unwrap();
    let keep: usize = text.lines().take(5).map(|l| l.len() + 1).sum::<usize>() + 7;
    std::fs::write(&path, &text.as_bytes()[..keep]).unwrap();
    let resumed = run(2, Some(path.clone()), true);
    let rows = read_records(&path).unwrap();
    let resume_ok = resumed.hash == a.hash && rows.len() == 9 && resumed.newly_run == 5;
    outcome(
        a.hash == b.hash && a.hash == c.hash && resume_ok,
        format!(
            "hash {} serial twice {}, serial vs parallel {}, resume {} ({} rows re-run)",
            &a.hash[..12],
            a.hash == b.hash,
            a.hash == c.hash,
            resume_ok,
            resumed.newly_run
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("norm oracle equivalence", norm_oracles),
        ("psd monotonicity", monotonicity),
        ("fantope projection", fantope_projection),
        ("feasibility bounds", feasibility_bounds),
        ("clean recovery", clean_recovery),
        ("delta scaling slope", delta_scaling),
        ("adversary validity", adversary_validity),
        ("min-max adversary", minmax_adversary),
        ("covariance recovery", covariance_recovery),
        ("mean estimation", mean_estimation),
        ("statistical estimator parity", statistical_parity),
        ("determinism and resume", determinism_and_resume),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict}: {name}: {} [{:.1}s]", i + 1, o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
