use std::path::PathBuf;

use proptest::prelude::*;

use perisolve::analysis::{check_attractivity, check_hypotheses, delta_of_x};
use perisolve::integrator::{delay_sum, integrate, HistoryFunction, SolverConfig};
use perisolve::linalg::fundamental_matrix;
use perisolve::model::{community_matrices, load_model_file, Kernel, SystemModel};
use perisolve::periodic::{
    default_initial_profile, find_periodic_fixed_point, find_periodic_poincare, FixedPointOptions,
};

const ALL: [&str; 7] = [
    "scalar_nicholson.json",
    "corollary_4_1.json",
    "planar_1_9.json",
    "autonomous.json",
    "example_3_1.json",
    "example_3_2.json",
    "extinction.json",
];

fn fixture(name: &str) -> SystemModel {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name);
    load_model_file(path).unwrap()
}

fn tail_range(model: &SystemModel, x0: f64, periods: usize, cfg: &SolverConfig) -> (f64, f64, f64) {
    let traj = integrate(
        model,
        HistoryFunction::constant(model, cfg, &vec![x0; model.n]),
        periods as f64 * model.omega,
        cfg,
    )
    .unwrap();
    let h = &traj.history;
    let mut min = f64::INFINITY;
    let mut late_max = f64::NEG_INFINITY;
    let mut mid_max = f64::NEG_INFINITY;
    let steps = cfg.steps_per_period;
    for k in traj.origin()..h.len() {
        let period = (k - traj.origin()) / steps;
        for v in h.knot_values(k) {
            min = min.min(*v);
            if period >= periods - 10 {
                late_max = late_max.max(*v);
            } else if period >= periods / 2 {
                mid_max = mid_max.max(*v);
            }
        }
    }
    (min, mid_max, late_max)
}

#[test]
fn trajectories_stay_positive_for_fifty_periods() {
    let cfg = SolverConfig::with_steps(128);
    for name in ALL {
        let m = fixture(name);
        for x0 in [1e-3, 1.0, 10.0] {
            let (min, _, _) = tail_range(&m, x0, 50, &cfg);
            assert!(min > 0.0, "{name} from {x0}: min {min:e}");
        }
    }
}

#[test]
fn large_histories_enter_a_bounded_box() {
    let cfg = SolverConfig::with_steps(128);
    for name in ALL {
        let m = fixture(name);
        let (_, mid, late) = tail_range(&m, 100.0, 40, &cfg);
        // after the transient the orbit stays far below the initial level and
        // does not grow again
        assert!(
            late < 10.0 && late <= mid + 1e-6,
            "{name}: mid {mid}, late {late}"
        );
    }
}

#[test]
fn density_delay_terms_respect_their_bound() {
    let m = fixture("example_3_2.json");
    let cfg = SolverConfig::with_steps(128);
    let traj = integrate(
        &m,
        HistoryFunction::constant(&m, &cfg, &[3.0, 0.2]),
        6.0 * m.omega,
        &cfg,
    )
    .unwrap();
    for k in 0..200 {
        let t = m.tau_max + k as f64 * (traj.end() - m.tau_max) / 200.0;
        for (i, eq) in m.equations.iter().enumerate() {
            let term = &eq.terms[0];
            let Kernel::DistributedDensity { gamma, tau } = &term.kernel else {
                panic!("density kernel expected")
            };
            let c_min = term.nonlinearity.c().range(512).unwrap().0;
            let h_sup = 1.0 / (std::f64::consts::E * c_min);
            let g_max = gamma.range(512).unwrap().1;
            let bound = term.beta.eval(t).unwrap() * h_sup * tau.eval(t).unwrap() * g_max;
            let value = delay_sum(&m, i, t, &traj.history, cfg.quad_nodes).unwrap();
            assert!(
                value <= bound + 1e-12,
                "eq {i} at t = {t}: {value} > {bound}"
            );
        }
    }
}

#[test]
fn both_routes_agree_on_every_certified_fixture() {
    let cfg = SolverConfig::with_steps(128);
    for name in ALL {
        let m = fixture(name);
        let hyp = check_hypotheses(&m).unwrap();
        if !hyp.all_satisfied() {
            continue;
        }
        let init = default_initial_profile(&m, 128, hyp.witness_v.as_deref());
        let cache = fundamental_matrix(&m, &cfg).unwrap();
        let (a, diag) =
            find_periodic_fixed_point(&m, &cache, init.clone(), FixedPointOptions::default(), &cfg)
                .unwrap();
        assert!(diag.converged, "{name}: {diag:?}");
        assert!(diag.operator_residual <= 10.0 * 1e-10);
        let (b, _) =
            find_periodic_poincare(&m, init.to_history(&m, &cfg), &cfg, 2000, 1e-11).unwrap();
        assert!(a.sup_distance(&b) <= 1e-5, "{name}: {}", a.sup_distance(&b));
        assert!(a.min() > 0.0 && a.periodicity_gap() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn community_matrices_are_periodic(t in -20.0f64..20.0, which in 0usize..ALL.len()) {
        let m = fixture(ALL[which]);
        let a = community_matrices(&m, t).unwrap();
        let b = community_matrices(&m, t + m.omega).unwrap();
        prop_assert!((a.m - b.m).abs().max() <= 1e-9);
        prop_assert!((a.d - b.d).abs().max() <= 1e-9);
        prop_assert!((a.a - b.a).abs().max() <= 1e-9);
    }

    #[test]
    fn ricker_is_bounded_by_its_envelope(t in 0.0f64..3.2, x in 0.0f64..50.0) {
        let m = fixture("example_3_2.json");
        for eq in &m.equations {
            let nl = &eq.terms[0].nonlinearity;
            let c_min = nl.c().range(512).unwrap().0;
            prop_assert!(nl.eval(t, x).unwrap() <= 1.0 / (std::f64::consts::E * c_min) + 1e-12);
        }
    }

    #[test]
    fn attractivity_decision_is_scale_invariant(v1 in 0.2f64..5.0, v2 in 0.2f64..5.0, s in 0.1f64..10.0) {
        let m = fixture("planar_1_9.json");
        let a = check_attractivity(&m, &[v1, v2]).unwrap();
        let b = check_attractivity(&m, &[s * v1, s * v2]).unwrap();
        prop_assert_eq!(a.condition_met, b.condition_met);
        prop_assert!((a.c0 / a.c0_sup - b.c0 / b.c0_sup).abs() <= 1e-12);
        if let (Some(x), Some(y)) = (&a.gamma_i, &b.gamma_i) {
            for (p, q) in x.iter().zip(y) {
                prop_assert!((p - q).abs() <= 1e-9 * p.abs());
            }
        }
    }

    #[test]
    fn delta_stays_below_exponential(x in 0.05f64..1.95, m in 0.01f64..0.5) {
        let d = delta_of_x(x, m, 50.0).unwrap();
        prop_assert!(d < (-x).exp());
    }
}
