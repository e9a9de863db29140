mod common;

use common::{gaussian, random_fantope_point, random_psd, random_symmetric};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust_subspace::covmodel::{general_model, sample, spiked_model, BasisSpec};
use robust_subspace::fantope::{
    objective, project_entrywise_l1, project_fantope, solve_moment, FeasibleSetParams, SolverConfig, SolverStatus,
};
use robust_subspace::linalg;
use robust_subspace::norms::{op_inf_to_1_exact, NormIndex};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn eig_range(x: &DMatrix<f64>) -> (f64, f64) {
    let (v, _) = linalg::sym_eigen(x);
    (v[v.len() - 1], v[0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fantope_projection_is_feasible_and_nearest(seed in any::<u64>(), n in 1usize..9, r_pick in 1usize..4) {
        let r = r_pick.min(n);
        let mut g = rng(seed);
        let m = random_symmetric(n, &mut g) * 2.0;
        let p = project_fantope(&m, r).unwrap();
        prop_assert!((p.trace() - r as f64).abs() <= 1e-9);
        let (lo, hi) = eig_range(&p);
        prop_assert!(lo >= -1e-9 && hi <= 1.0 + 1e-9);
        let best = (&p - &m).norm();
        for _ in 0..100 {
            let y = random_fantope_point(n, r, &mut g);
            prop_assert!(best <= (&y - &m).norm() + 1e-9);
        }
        let again = project_fantope(&p, r).unwrap();
        prop_assert!((&again - &p).amax() < 1e-9);
    }

    #[test]
    fn entrywise_l1_projection_is_nearest(seed in any::<u64>(), n in 1usize..6, radius in 0.2f64..6.0) {
        let mut g = rng(seed);
        let m = gaussian(n, n, &mut g) * 1.5;
        let p = project_entrywise_l1(&m, radius);
        let l1: f64 = p.iter().map(|x| x.abs()).sum();
        prop_assert!(l1 <= radius + 1e-9);
        let best = (&p - &m).norm();
        for _ in 0..100 {
            let mut y = gaussian(n, n, &mut g);
            let s: f64 = y.iter().map(|x| x.abs()).sum();
            y *= radius / s * rand::Rng::random_range(&mut g, 0.0..1.0);
            prop_assert!(best <= (&y - &m).norm() + 1e-9);
        }
    }

    #[test]
    fn fantope_points_are_close_to_the_top_projector(seed in any::<u64>(), n in 3usize..10, r_pick in 1usize..3, raw in prop::collection::vec(0.0f64..4.0, 10)) {
        let r = r_pick.min(n - 1);
        let mut eig: Vec<f64> = raw[..n].to_vec();
        eig.sort_by(|a, b| b.total_cmp(a));
        eig[..r].iter_mut().for_each(|l| *l += 0.5);
        let model = general_model(eig, r, &BasisSpec::RandomRotation { support: n, seed }).unwrap();
        let (pi, sigma, gap) = (model.projector(), model.sigma(), model.eigengap());
        let mut g = rng(seed ^ 0x55);
        for _ in 0..10 {
            let x = random_fantope_point(n, r, &mut g);
            let lhs = linalg::frob_inner(&x, &pi);
            let rhs = r as f64 - (linalg::frob_inner(&pi, &sigma) - linalg::frob_inner(&x, &sigma)) / gap;
            prop_assert!(lhs >= rhs - 1e-8);
        }
    }
}

#[test]
fn solver_exit_is_feasible_and_beats_truth() {
    let model = spiked_model(8, 1, 1.0, 2.0).unwrap();
    let params = FeasibleSetParams::new(8, 1, model.kappa, NormIndex::Infinity).unwrap();
    for seed in 0..5 {
        let data = sample(&model, 2000, None, seed).unwrap();
        let s = data.second_moment();
        let state = solve_moment(&s, &params, &SolverConfig::default()).unwrap();
        assert_eq!(state.status, SolverStatus::Converged);
        let x = &state.x;
        assert!((x.trace() - 1.0).abs() < 1e-7);
        let (lo, hi) = eig_range(x);
        assert!(lo > -1e-7 && hi < 1.0 + 1e-7);
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        assert!(l1 <= params.entrywise_radius() * (1.0 + 1e-7));
        let norm = op_inf_to_1_exact(&linalg::symmetrize(x)).unwrap().value;
        assert!(norm <= model.kappa * model.kappa * (1.0 + 1e-5));
        assert!(objective(&s, x) <= objective(&s, &model.projector()) + 1e-6);
    }
}

#[test]
fn solver_handles_arbitrary_psd_inputs() {
    let mut g = rng(11);
    for trial in 0..6 {
        let n = 4 + trial;
        let s = random_psd(n, n, &mut g);
        let params = FeasibleSetParams::new(n, 2, 1.8, NormIndex::Infinity).unwrap();
        let state = solve_moment(&s, &params, &SolverConfig::default()).unwrap();
        assert_ne!(state.status, SolverStatus::Infeasible);
        assert!((state.x.trace() - 2.0).abs() < 1e-7);
        let obj = state.objective_trace.last().copied().unwrap();
        assert!(obj.is_finite() && obj >= -1e-7);
    }
}
