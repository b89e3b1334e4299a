#![allow(dead_code)]

use dipqrb::certifier::{tangent_bound, AcceptedSet, DiMode, MinTradeoff, Score, ScoreDistribution};
use dipqrb::photonic_sim::OpticalModel;
use dipqrb::protocol::{honest_scores, AcceptanceTest, ProtocolConfig, Seeds, SessionParams};

/// Accept everything: the session outcome depends only on the records.
pub fn open_acceptance() -> AcceptanceTest {
    AcceptanceTest {
        accepted: AcceptedSet::new([0.0; Score::COUNT], [1.0; Score::COUNT]).unwrap(),
        threshold: 0.0,
        tradeoff: zero_tradeoff(),
    }
}

pub fn zero_tradeoff() -> MinTradeoff<f64> {
    MinTradeoff { constant: 0.0, coeffs: [0.0; Score::COUNT], tangent: tangent_bound(0.5).unwrap(), p_gen: 0.25 }
}

pub fn seeds(server: u64, client: u64, switch: u64) -> Seeds {
    Seeds { server, client, switch }
}

pub fn open_config(n: u64, gamma: f64, seeds: Seeds, mode: DiMode) -> ProtocolConfig {
    let model = OpticalModel::default();
    ProtocolConfig { params: SessionParams::new(n, gamma, &model, seeds, mode), acceptance: open_acceptance() }
}

/// Honest scores ± k sigma for the ideal model, with a flat tradeoff.
pub fn honest_box_config(n: u64, gamma: f64, k: f64, seeds: Seeds) -> (ProtocolConfig, ScoreDistribution<f64>) {
    let model = OpticalModel::default();
    let params = SessionParams::new(n, gamma, &model, seeds, DiMode::SemiDi);
    let (q, counted) = honest_scores(&params, &model).unwrap();
    let accepted = AcceptedSet::with_sigmas(&q, counted as usize, k).unwrap();
    let acceptance = AcceptanceTest { accepted, threshold: 0.0, tradeoff: zero_tradeoff() };
    (ProtocolConfig { params, acceptance }, q)
}

/// Probability that a Binomial(n, p) count divided by n falls outside [lo, hi].
pub fn binomial_outside(n: u64, p: f64, lo: f64, hi: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        let k = if p <= 0.0 { 0.0 } else { 1.0 };
        return if k >= lo && k <= hi { 0.0 } else { 1.0 };
    }
    let nf = n as f64;
    let mut log_pmf = nf * (1.0 - p).ln();
    let odds = (p / (1.0 - p)).ln();
    let mut inside = 0.0;
    for k in 0..=n {
        let f = k as f64 / nf;
        if f >= lo && f <= hi {
            inside += log_pmf.exp();
        }
        log_pmf += ((nf - k as f64) / (k as f64 + 1.0)).ln() + odds;
    }
    (1.0 - inside).max(0.0)
}
