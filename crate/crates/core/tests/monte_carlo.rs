//! Monte Carlo engine invariants: martingale curve, positivity, standard
//! error scaling and reproducibility.

use vardyn::curve::VarianceCurve;
use vardyn::model::ModelParams;
use vardyn::montecarlo::{mc_vix_future, summarize, SimConfig, Simulator};
use vardyn::DT;

fn upward_curve() -> VarianceCurve {
    VarianceCurve::from_fn(|t| 0.03 + 0.02 * (1.0 - (-1.5 * t).exp()), 4.0)
}

#[test]
fn forward_variances_are_martingales_and_stay_positive() {
    let curve = upward_curve();
    let steps = 63;
    let sim = Simulator::new(curve.clone(), &ModelParams::paper(), SimConfig::new(40_000, steps, 5)).unwrap();
    let tenors = [0.0, 5.0 * DT, 21.0 * DT, 63.0 * DT, 126.0 * DT, 0.5, 1.0];
    let s = summarize(&sim, &tenors);
    let horizon = steps as f64 * DT;
    for (tau, est) in &s.terminal_xi {
        let target = curve.eval(horizon + tau).unwrap();
        let z = (est.value - target) / est.se;
        assert!(z.abs() < 3.0, "tenor {tau}: mc {} ± {}, initial {target} (z {z:.2})", est.value, est.se);
    }
    let z = (s.terminal_spot.value - 1.0) / s.terminal_spot.se;
    assert!(z.abs() < 3.0, "spot drifts: z {z:.2}");
    assert!(s.min_spot > 0.0 && s.min_xi > 0.0);
}

#[test]
fn standard_error_scales_as_inverse_root_paths() {
    let p = ModelParams::paper();
    let run = |paths| {
        let sim = Simulator::new(VarianceCurve::flat(0.04, 4.0), &p, SimConfig::new(paths, 42, 17)).unwrap();
        mc_vix_future(&sim, 42.0 * DT).unwrap()
    };
    let (small, large) = (run(10_000), run(100_000));
    let ratio = small.se / large.se;
    // the SE of the sample SE is about 1% at these sizes
    assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.05, "SE ratio {ratio}");
    assert!((small.value - large.value).abs() < 3.0 * (small.se.powi(2) + large.se.powi(2)).sqrt());
}

#[test]
fn identical_seed_and_config_give_identical_statistics() {
    let p = ModelParams::paper().scaled(0.5);
    let cfg = SimConfig::new(3_000, 30, 99);
    let a = summarize(&Simulator::new(upward_curve(), &p, cfg.clone()).unwrap(), &[0.0, 0.25]);
    let b = summarize(&Simulator::new(upward_curve(), &p, cfg).unwrap(), &[0.0, 0.25]);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = summarize(&Simulator::new(upward_curve(), &p, SimConfig::new(3_000, 30, 100)).unwrap(), &[0.0, 0.25]);
    assert_ne!(a.terminal_spot.value, c.terminal_spot.value);
}
