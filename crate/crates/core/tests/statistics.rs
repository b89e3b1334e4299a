use dipqrb::behavior::{coarse_grain, FrequencyCounter, Observation, Outcome};
use dipqrb::photonic_sim::{exact_behavior, OpticalModel, RoundSampler};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn model(eta_c: f64) -> OpticalModel<f64> {
    OpticalModel::default().with_eta_c(eta_c)
}

fn simulate(sm: &RoundSampler, n: usize, seed: u64) -> Vec<Observation> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = rng.random_bool(0.5) as u8;
            let (x, y, z) = (rng.random_bool(0.5) as u8, rng.random_bool(0.5) as u8, rng.random_bool(0.5) as u8);
            let (a, b, c) = sm.sample_round(&mut rng, s, x, y, z);
            let (y, z) = if s == 0 { (y, 0) } else { (0, z) };
            Observation { s, x, y, z, a, b, c }
        })
        .collect()
}

#[test]
fn ideal_scores() {
    let s = coarse_grain(&exact_behavior(&model(1.0)).unwrap()).unwrap();
    assert!((s.omega - (2.0 + 2f64.sqrt()) / 4.0).abs() < 1e-12);
    assert!(s.q0.abs() < 1e-12 && s.q1.abs() < 1e-12);
    assert!((s.tau0 - 1.0).abs() < 1e-12 && (s.tau1 - 1.0).abs() < 1e-12);
    let s = coarse_grain(&exact_behavior(&model(0.5)).unwrap()).unwrap();
    assert!((s.tau0 - 0.5).abs() < 1e-12 && (s.tau1 - 0.5).abs() < 1e-12);
}

#[test]
fn error_rates_vanish_across_efficiencies() {
    for k in 1..=10 {
        let s = coarse_grain(&exact_behavior(&model(k as f64 / 10.0)).unwrap()).unwrap();
        assert!(s.q0.abs() < 1e-10 && s.q1.abs() < 1e-10, "eta_c = {}", k as f64 / 10.0);
    }
}

#[test]
fn simulated_and_fully_di_behaviors_are_non_signalling() {
    let b = exact_behavior(&OpticalModel { eta_a: 0.8, eta_b: 0.75, eta_c: 0.6, ..Default::default() }).unwrap();
    let r = b.no_signalling(1e-12);
    assert!(r.passed && r.max_deviation < 1e-12, "{r:?}");
    let d = b.to_fully_di();
    let r = d.no_signalling(1e-12);
    assert!(r.passed && r.max_deviation < 1e-12, "{r:?}");
    assert_eq!(d.to_fully_di(), d);
    let ideal = exact_behavior(&model(1.0)).unwrap();
    assert_eq!(ideal.to_fully_di(), ideal);
}

#[test]
fn accumulated_frequencies_track_exact_behavior() {
    let sm = RoundSampler::new(&model(1.0)).unwrap();
    let mut counter = FrequencyCounter::new();
    for o in simulate(&sm, 100_000, 5) {
        counter.accumulate(&o);
    }
    assert_eq!(counter.total(), 100_000);
    let est = counter.estimate::<f64>();
    let exact = sm.behavior();
    let mut tv = 0.0;
    for x in 0..2 {
        for w in 0..2 {
            for a in 0..3 {
                for o in 0..3 {
                    tv += (est.table0[x][w][a][o] - exact.table0[x][w][a][o]).abs() / 8.0 / 2.0;
                    tv += (est.table1[x][w][a][o] - exact.table1[x][w][a][o]).abs() / 8.0 / 2.0;
                }
            }
        }
    }
    assert!(tv < 0.02, "total variation {tv}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn accumulation_is_order_independent(seed in any::<u64>(), shuffle in any::<u64>()) {
        let sm = RoundSampler::new(&model(0.7)).unwrap();
        let obs = simulate(&sm, 300, seed);
        let mut perm = obs.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(shuffle);
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let (mut c1, mut c2) = (FrequencyCounter::new(), FrequencyCounter::new());
        obs.iter().for_each(|o| c1.accumulate(o));
        perm.iter().for_each(|o| c2.accumulate(o));
        prop_assert_eq!(c1.cells().collect::<Vec<_>>(), c2.cells().collect::<Vec<_>>());
        prop_assert_eq!(c1.total(), 300);
    }

    #[test]
    fn fully_di_is_idempotent_and_normalised(eta_a in 0.0..=1.0f64, eta_c in 0.0..=1.0f64) {
        let b = exact_behavior(&OpticalModel { eta_a, eta_b: 0.9, eta_c, ..Default::default() }).unwrap();
        let d = b.to_fully_di();
        prop_assert_eq!(d.to_fully_di(), d.clone());
        prop_assert!(d.validate(1e-9).is_ok());
        for x in 0..2 {
            for z in 0..2 {
                prop_assert_eq!(d.table1[x][z][Outcome::Void.index()].iter().sum::<f64>(), 0.0);
            }
        }
    }
}
