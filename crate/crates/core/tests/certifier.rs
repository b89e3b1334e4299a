use dipqrb::certifier::{rate_scan, ScanOptions};
use dipqrb::photonic_sim::OpticalModel;

#[test]
fn rate_is_positive_at_full_efficiency_and_zero_well_below_half() {
    let rows = rate_scan(&OpticalModel::default(), &[0.3, 1.0], &ScanOptions::default());
    let (low, high) = (&rows[0], &rows[1]);
    assert_eq!(low.rate_per_heralded_event, 0.0, "{low:?}");
    assert!(high.pg_upper < 1.0 && high.rate_per_heralded_event > 0.0, "{high:?}");
    // one bit per generation round at best, a quarter of rounds generate
    assert!(high.rate_per_heralded_event <= 0.25 + 1e-6);
    assert!(!high.solver_status.starts_with("error"));
}

#[test]
fn slack_box_rate_never_exceeds_the_point_rate() {
    use dipqrb::certifier::{asymptotic_rate, build_min_tradeoff, ConstraintMode, DiMode, GuessingProgramSpec, Score, ScoreModel};
    use dipqrb::certifier::{min_entropy_rate, AcceptedSet};
    use dipqrb::photonic_sim::exact_behavior;
    use dipqrb::sdp::SolverOptions;

    let b = exact_behavior(&OpticalModel::default()).unwrap();
    let opts = SolverOptions::<f64>::default();
    for mode in [DiMode::SemiDi, DiMode::FullyDi] {
        let model = ScoreModel { mode, gamma: [0.1; 2], p_switch: 0.5, px: [0.5; 2], py: [0.5; 2], pz: [0.5; 2], bob_efficiency: 1.0 };
        let spec = GuessingProgramSpec::from_behavior(&b, ConstraintMode::CoarseGrained, mode).unwrap();
        let (f, bound, _) = build_min_tradeoff(&spec, &model, None, &opts).unwrap();
        let q = model.expected(&b).unwrap();
        let point = min_entropy_rate(bound.pg_upper, bound.p_gen).unwrap();
        let acc = AcceptedSet::around(&q, &[0.01; Score::COUNT]).unwrap();
        let h = asymptotic_rate(&f, &acc).unwrap();
        println!("{mode:?}: point rate {point:.6}, h* over ±0.01 box {h:.6}");
        assert!((f.evaluate(&q) - point).abs() < 1e-6);
        assert!(h <= point + 1e-9);
    }
}
