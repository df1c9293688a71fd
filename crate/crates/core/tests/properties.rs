//! Invariants checked over randomly generated PH distributions and moment triples.

use proptest::prelude::*;
use supermarket::fit::{feasibility_clamp, fit, verify_fit, MomentTriple};
use supermarket::fixed_point::{
    balance_residuals, expected_sojourn, fixed_point_table, fixed_point_vector, ModelParams, Truncation, UNDERFLOW,
};
use supermarket::mean_field::{integrate, MeanFieldState, StepControl, ORDER_SLACK};
use supermarket::PhaseType;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Dense PH with strictly positive initial law and exit rates, so that
/// `T + T0 alpha` is irreducible by construction.
fn arb_ph() -> impl Strategy<Value = PhaseType> {
    (1usize..=4).prop_flat_map(|m| {
        (
            prop::collection::vec(0.05f64..1.0, m),
            prop::collection::vec(0.0f64..5.0, m * m),
            prop::collection::vec(0.1f64..5.0, m),
        )
            .prop_map(move |(w, off, exit)| {
                let total: f64 = w.iter().sum();
                let alpha: Vec<f64> = w.iter().map(|x| x / total).collect();
                let mut t = vec![vec![0.0; m]; m];
                for i in 0..m {
                    let mut out = exit[i];
                    for j in 0..m {
                        if i != j {
                            t[i][j] = off[i * m + j];
                            out += off[i * m + j];
                        }
                    }
                    t[i][i] = -out;
                }
                PhaseType::new(alpha, t).expect("constructed to be valid")
            })
    })
}

fn arb_model() -> impl Strategy<Value = ModelParams> {
    (arb_ph(), 0.05f64..0.95, prop::sample::select(vec![1u32, 2, 3, 5])).prop_map(|(ph, rho, d)| {
        let lambda = rho * ph.service_rate();
        ModelParams::new(ph, lambda, d).unwrap()
    })
}

/// Moments of a canonical PH(2), computed by hand from the bidiagonal form
/// `alpha = (eta, 1 - eta)`, phase 1 rate `xi1` into phase 2, phase 2 rate `xi2`.
fn coxian_moments(eta: f64, xi1: f64, xi2: f64) -> [f64; 3] {
    // phase 1 contributes Exp(xi1) followed by Exp(xi2); phase 2 only Exp(xi2)
    let hypo = |n: i32| -> f64 {
        if (xi1 - xi2).abs() < 1e-12 * xi2 {
            let f: f64 = (1..=n + 1).map(f64::from).product();
            f / xi1.powi(n)
        } else {
            // E[(X1 + X2)^n] via partial fractions of the hypoexponential density
            let f: f64 = (1..=n).map(f64::from).product();
            f * (xi2 * xi1.powi(-n) - xi1 * xi2.powi(-n)) / (xi2 - xi1)
        }
    };
    let expo = |n: i32| -> f64 {
        let f: f64 = (1..=n).map(f64::from).product();
        f / xi2.powi(n)
    };
    [1, 2, 3].map(|n| eta * hypo(n) + (1.0 - eta) * expo(n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mean_and_service_rate_agree(ph in arb_ph()) {
        prop_assert!(rel(ph.service_rate(), 1.0 / ph.mean()) < 1e-9);
    }

    #[test]
    fn exit_closes_rows(ph in arb_ph()) {
        for (row, exit) in ph.generator_rows().iter().zip(ph.exit()) {
            let sum: f64 = row.iter().sum();
            prop_assert_eq!(sum + exit, 0.0);
        }
    }

    #[test]
    fn theta_is_one_at_d1_and_decreasing(ph in arb_ph()) {
        prop_assert_eq!(ph.theta(1), 1.0);
        let omega = ph.stationary_phase_vector().unwrap();
        let positive = omega.iter().filter(|&&w| w > 1e-6).count();
        if positive >= 2 {
            for d in 1..6 {
                prop_assert!(ph.theta(d + 1) < ph.theta(d));
            }
        }
    }

    #[test]
    fn residual_has_same_generator(ph in arb_ph()) {
        let r = ph.residual();
        prop_assert_eq!(r.generator(), ph.generator());
        let omega = ph.stationary_phase_vector().unwrap();
        prop_assert_eq!(r.alpha(), &omega[..]);
    }

    #[test]
    fn log_space_matches_recursion(params in arb_model()) {
        // c_1 = rho, c_{k+1} = theta rho c_k^d
        let mut c = params.rho();
        for k in 1..=8 {
            let got = fixed_point_vector(&params, k);
            if c > 1e-280 {
                for (x, w) in got.iter().zip(params.omega().iter()) {
                    prop_assert!(rel(*x, c * w) < 1e-12, "k = {}: {} vs {}", k, x, c * w);
                }
            } else if c < UNDERFLOW * 1e-3 {
                prop_assert_eq!(got.total(), 0.0);
            }
            c = params.theta() * params.rho() * c.powi(params.d() as i32);
        }
    }

    #[test]
    fn first_level_carries_the_load(params in arb_model()) {
        prop_assert!(rel(fixed_point_vector(&params, 1).total(), params.rho()) < 1e-14);
    }

    #[test]
    fn scalar_balance_vanishes(params in arb_model()) {
        let table = fixed_point_table(&params, Truncation::levels(8));
        let res = balance_residuals(&table, &params);
        prop_assert!(res.max_scalar() < 1e-10 * params.lambda(), "{}", res.max_scalar());
        if params.order() == 1 {
            prop_assert!(res.max_vector() < 1e-10 * params.lambda());
        }
    }

    #[test]
    fn tails_strictly_decrease(params in arb_model()) {
        let tails = fixed_point_table(&params, Truncation::default()).tails();
        prop_assert!(tails.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn sojourn_improves_with_d(ph in arb_ph(), rho in 0.05f64..0.95) {
        let lambda = rho * ph.service_rate();
        let times: Vec<f64> = [1u32, 2, 3, 5]
            .iter()
            .map(|&d| expected_sojourn(&ModelParams::new(ph.clone(), lambda, d).unwrap()))
            .collect();
        prop_assert!(times.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{:?}", times);
    }

    #[test]
    fn coxian_fits_round_trip(eta in 0.0f64..=1.0, xi1 in 0.2f64..20.0, spread in 0.0f64..10.0) {
        let xi2 = xi1 * (1.0 + spread);
        let [m1, m2, m3] = coxian_moments(eta, xi1, xi2);
        let raw = MomentTriple::new(m1, m2, m3).unwrap();
        let (_, flags) = feasibility_clamp(raw).unwrap();
        // a triple produced by a PH(2) never needs repair, up to rounding on the band edges
        if flags.is_empty() {
            if let Ok(out) = fit(raw) {
                prop_assert!(verify_fit(&out) < 1e-8, "{:?} -> {}", raw, verify_fit(&out));
            }
        }
    }

    #[test]
    fn clamping_is_idempotent(m1 in 0.1f64..10.0, r2 in 0.1f64..10.0, r3 in 0.1f64..100.0) {
        let raw = MomentTriple::new(m1, r2 * m1 * m1, r3 * m1.powi(3)).unwrap();
        let (once, _) = feasibility_clamp(raw).unwrap();
        let (twice, flags) = feasibility_clamp(once).unwrap();
        prop_assert!(flags.is_empty(), "{:?} fired {:?}", once, flags);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn moment_oracle_matches_matrix_formula(eta in 0.0f64..=1.0, xi1 in 0.2f64..20.0, spread in 0.0f64..10.0) {
        let xi2 = xi1 * (1.0 + spread);
        let ph = PhaseType::coxian2(eta, xi1, xi2).unwrap();
        let want = coxian_moments(eta, xi1, xi2);
        for n in 1..=3 {
            prop_assert!(rel(ph.moment(n), want[n as usize - 1]) < 1e-9);
        }
    }
}

/// Interior of the feasible region: scv in [0.5, 1] with m3 strictly inside
/// its band, or scv > 1 with m3 above the open lower edge.
fn arb_feasible() -> impl Strategy<Value = MomentTriple> {
    (0.1f64..10.0, 0.5f64..4.0, 0.001f64..0.999).prop_map(|(m1, scv, u)| {
        let (lo, hi) = supermarket::fit::third_moment_band(m1, scv);
        let m3 = if hi.is_finite() { lo + u * (hi - lo) } else { lo * (1.0 + 4.0 * u) };
        MomentTriple::new(m1, (1.0 + scv) * m1 * m1, m3).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn feasible_triples_refit(mo in arb_feasible()) {
        let out = fit(mo).unwrap();
        prop_assert!(out.clamp_flags.is_empty());
        prop_assert!((0.0..=1.0).contains(&out.eta));
        prop_assert!(out.xi1 > 0.0 && out.xi1 <= out.xi2);
        prop_assert!(verify_fit(&out) < 1e-8, "{:?}: {}", mo, verify_fit(&out));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn trajectories_stay_nested(params in arb_model()) {
        let depth = 12;
        let init = MeanFieldState::empty(params.order(), depth);
        let horizon = 5.0 / params.lambda();
        let control = StepControl { sample_every: Some(horizon / 20.0), ..StepControl::default() };
        let traj = integrate(&init, &params, horizon, control).unwrap();
        for s in &traj.samples {
            for k in 1..=depth {
                for (i, &x) in s.level(k).iter().enumerate() {
                    prop_assert!((-ORDER_SLACK..=1.0 + ORDER_SLACK).contains(&x));
                    if k < depth {
                        prop_assert!(s.level(k + 1)[i] <= x + ORDER_SLACK);
                    }
                }
            }
        }
    }
}
