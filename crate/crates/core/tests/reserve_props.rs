use microgrid_risk::gbm::{simulate_path, GbmParams};
use microgrid_risk::oracle::golden_section_min;
use microgrid_risk::reserve::{
    expected_sq_mismatch, interval_length, optimal_blocks, plan_horizon, IntervalClamp, ReserveProblem,
};
use proptest::prelude::*;

fn problem(mu: f64, sigma: f64, demand: f64, block: f64, eps: f64) -> ReserveProblem {
    ReserveProblem::new(GbmParams::new(20.0, mu, sigma).unwrap(), demand, block, 5.0, eps).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn closed_form_blocks_beat_golden_section(
        p_obs in 1.0f64..50.0,
        dt in 1e-3f64..5.0,
        demand in 1.0f64..60.0,
        block in 0.5f64..10.0,
        mu in -0.3f64..0.3,
        sigma in 0.0f64..0.8,
    ) {
        let pr = problem(mu, sigma, demand, block, 1.0);
        let k = optimal_blocks(&pr, p_obs, dt).unwrap();
        let closed = expected_sq_mismatch(&pr, p_obs, k, dt).unwrap();
        let upper = 10.0 * demand / block;
        let (_, searched) = golden_section_min(|k| expected_sq_mismatch(&pr, p_obs, k, dt).unwrap(), 0.0, upper, 1e-12);
        prop_assert!(closed <= searched + 1e-7, "{} vs {}", closed, searched);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn minimum_mismatch_grows_with_interval(
        p_obs in 1.0f64..30.0,
        mu in -0.3f64..0.3,
        sigma in 0.05f64..0.8,
        dt1 in 1e-3f64..5.0,
        dt2 in 1e-3f64..5.0,
    ) {
        // demand high enough that the optimum never clamps at zero
        let demand = p_obs * (0.3f64 * 5.0).exp() + 1.0;
        let pr = problem(mu, sigma, demand, 1.0, 1.0);
        let (lo, hi) = if dt1 < dt2 { (dt1, dt2) } else { (dt2, dt1) };
        let at = |dt: f64| expected_sq_mismatch(&pr, p_obs, optimal_blocks(&pr, p_obs, dt).unwrap(), dt).unwrap();
        prop_assert!(at(lo) <= at(hi) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn interval_shrinks_as_volatility_grows(
        p_obs in 5.0f64..40.0,
        s1 in 0.05f64..0.8,
        s2 in 0.05f64..0.8,
        eps in 0.1f64..20.0,
    ) {
        let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
        let calm = interval_length(&problem(0.1, lo, 25.0, 1.0, eps), p_obs).unwrap();
        let wild = interval_length(&problem(0.1, hi, 25.0, 1.0, eps), p_obs).unwrap();
        prop_assert!(wild.dt <= calm.dt * (1.0 + 1e-9));
    }

    #[test]
    fn zero_blocks_are_best_when_generation_covers_demand(
        p_obs in 26.0f64..60.0,
        dt in 1e-3f64..5.0,
        k in 1e-6f64..20.0,
        sigma in 0.0f64..0.8,
    ) {
        let pr = problem(0.1, sigma, 25.0, 1.0, 1.0);
        prop_assert_eq!(optimal_blocks(&pr, p_obs, dt).unwrap(), 0.0);
        let zero = expected_sq_mismatch(&pr, p_obs, 0.0, dt).unwrap();
        prop_assert!(zero <= expected_sq_mismatch(&pr, p_obs, k, dt).unwrap());
    }

    #[test]
    fn plans_are_contiguous_and_cover_horizon(seed in any::<u64>(), sigma in 0.0f64..0.8, eps in 0.05f64..10.0) {
        let params = GbmParams::new(20.0, 0.1, sigma).unwrap();
        let pr = ReserveProblem::new(params, 25.0, 1.0, 5.0, eps).unwrap();
        let path = simulate_path(&params, 5.0, 300, seed).unwrap();
        let plan = plan_horizon(&pr, &path).unwrap();
        prop_assert_eq!(plan.intervals[0].t_start, 0.0);
        for w in plan.intervals.windows(2) {
            prop_assert_eq!(w[0].t_end, w[1].t_start);
        }
        prop_assert!(plan.total_covered >= 5.0);
        for iv in &plan.intervals {
            prop_assert!(iv.dt() > 0.0);
            prop_assert!(iv.k_blocks >= 0.0);
            if iv.clamp != IntervalClamp::Floor {
                prop_assert!(iv.expected_mismatch <= eps * (1.0 + 1e-9));
            }
        }
    }
}

#[test]
fn worked_block_count() {
    let pr = problem(0.1, 0.3, 25.0, 1.0, 1.0);
    let k = optimal_blocks(&pr, 20.0, 0.5).unwrap();
    let (k_gs, _) = golden_section_min(|k| expected_sq_mismatch(&pr, 20.0, k, 0.5).unwrap(), 0.0, 250.0, 1e-12);
    assert!((k - 4.4915).abs() < 1e-4);
    assert!((k - k_gs).abs() < 1e-5);
}
