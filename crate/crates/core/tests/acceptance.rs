//! One line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use dipqrb::behavior::coarse_grain;
use dipqrb::certifier::{
    build_min_tradeoff, min_entropy_rate, rate_scan, ConstraintMode, DiMode, GuessingProgramSpec, ScanOptions, Score,
    ScoreModel,
};
use dipqrb::extractor::{extract, extract_naive, ToeplitzSeed};
use dipqrb::npa::{build_moment_sdp, generate_monomials, Party, Polynomial, Scenario};
use dipqrb::photonic_sim::{exact_behavior, OpticalModel};
use dipqrb::protocol::{run_session, SessionStatus};
use dipqrb::sdp::{residuals, solve, BlockKind, BlockMatrix, SdpProblem, Sense, SolveStatus, SolverOptions, SparseSym};
use dipqrb::transport::{connect, run_client, Server, ServerOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn tsirelson() -> Verdict {
    let start = Instant::now();
    let s = Scenario::chsh();
    let mut obj = Polynomial::zero();
    for x in 0..2u8 {
        for y in 0..2u8 {
            for a in 0..2u8 {
                let b = a ^ (x & y);
                let t = &Polynomial::projector(&s, Party::A, x, a) * &Polynomial::projector(&s, Party::B, y, b);
                obj.add_scaled(0.25, &t);
            }
        }
    }
    let mons = generate_monomials(&s, &"1+AB".parse().unwrap());
    let value = build_moment_sdp(&mons, &obj, &[]).and_then(|m| m.solve(&SolverOptions::default())).map(|sol| sol.value);
    let elapsed = start.elapsed();
    let exact = (2.0 + 2f64.sqrt()) / 4.0;
    match value {
        Ok(v) => verdict(
            (v - exact).abs() <= 1e-6 && elapsed < Duration::from_secs(5),
            format!("value {v:.10} vs {exact:.10} (|diff| {:.1e}), {elapsed:.2?}", (v - exact).abs()),
        ),
        Err(e) => verdict(false, format!("error {e}")),
    }
}

fn threshold_scan() -> Verdict {
    let start = Instant::now();
    let etas: Vec<f64> = (0..13).map(|k| ((40 + 5 * k) as f64) / 100.0).collect();
    let rows = rate_scan(&OpticalModel::default(), &etas, &ScanOptions::default());
    let rates: Vec<f64> = rows.iter().map(|r| r.rate_per_heralded_event).collect();
    let positive: Vec<bool> = rates.iter().map(|&r| r > 0.0).collect();
    let zero_low = etas.iter().zip(&rates).filter(|(e, _)| **e <= 0.45 + 1e-9).all(|(_, r)| *r == 0.0);
    let pos_high = etas.iter().zip(&positive).filter(|(e, _)| **e >= 0.65 - 1e-9).all(|(_, p)| *p);
    let crossings: Vec<usize> = (1..positive.len()).filter(|&k| positive[k] != positive[k - 1]).collect();
    // the first positive point lies in [0.50, 0.65] and nothing switches back
    let single = crossings.len() == 1 && {
        let k = crossings[0];
        positive[k] && etas[k] >= 0.50 - 1e-9 && etas[k] <= 0.65 + 1e-9
    };
    let monotone = rates.windows(2).all(|w| w[1] >= w[0] - 1e-6);
    let errors = rows.iter().filter(|r| r.solver_status.starts_with("error")).count();
    let elapsed = start.elapsed();
    let table: Vec<String> = etas.iter().zip(&rates).map(|(e, r)| format!("{e:.2}:{r:.4}")).collect();
    verdict(
        zero_low && pos_high && single && monotone && errors == 0 && elapsed < Duration::from_secs(1800),
        format!(
            "zero<=0.45 {zero_low}, positive>=0.65 {pos_high}, single crossing {single}, monotone {monotone}, {elapsed:.0?} [{}]",
            table.join(" ")
        ),
    )
}

fn random_psd(rng: &mut ChaCha8Rng, kinds: &[BlockKind]) -> BlockMatrix<f64> {
    let mut x = BlockMatrix::zeros(kinds);
    for (b, k) in kinds.iter().enumerate() {
        let n = k.dim();
        match k {
            BlockKind::Diagonal(_) => {
                for i in 0..n {
                    x.blocks[b][(i, i)] = rng.random_range(0.5..1.5);
                }
            }
            BlockKind::Dense(_) => {
                let g: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                for i in 0..n {
                    for j in 0..n {
                        let v: f64 = (0..n).map(|l| g[i][l] * g[j][l]).sum::<f64>() / n as f64;
                        x.blocks[b][(i, j)] = v + if i == j { 0.5 } else { 0.0 };
                    }
                }
            }
        }
    }
    x
}

fn random_sym(rng: &mut ChaCha8Rng, kinds: &[BlockKind], density: f64) -> SparseSym<f64> {
    let mut a = SparseSym::new();
    for (b, k) in kinds.iter().enumerate() {
        for i in 0..k.dim() {
            let cols = match k {
                BlockKind::Diagonal(_) => i..i + 1,
                BlockKind::Dense(n) => i..*n,
            };
            for j in cols {
                if rng.random::<f64>() < density {
                    a.add(b, i, j, rng.random_range(-1.0..1.0));
                }
            }
        }
    }
    a
}

fn trace_constraint(kinds: &[BlockKind]) -> SparseSym<f64> {
    let mut a = SparseSym::new();
    for (b, k) in kinds.iter().enumerate() {
        for i in 0..k.dim() {
            a.add(b, i, i, 1.0);
        }
    }
    a
}

/// `max/min <C, X>` over `{X ⪰ 0 : <A_i, X> = <A_i, X0>, tr X = tr X0}`
/// for a random positive definite `X0`: strictly feasible and bounded.
fn random_problem(rng: &mut ChaCha8Rng) -> SdpProblem<f64> {
    let total = rng.random_range(2..=20);
    let mut kinds = Vec::new();
    let mut left = total;
    while left > 0 {
        let d = rng.random_range(1..=left);
        kinds.push(if rng.random::<f64>() < 0.3 { BlockKind::Diagonal(d) } else { BlockKind::Dense(d) });
        left -= d;
    }
    let sense = if rng.random::<bool>() { Sense::Maximize } else { Sense::Minimize };
    let mut p = SdpProblem::new(kinds.clone(), sense);
    let x0 = random_psd(rng, &kinds);
    p.objective = random_sym(rng, &kinds, 0.6);
    let tr = trace_constraint(&kinds);
    let t = tr.dot(&x0);
    p.add_constraint(tr, t);
    let k = rng.random_range(1..=14);
    for _ in 0..k {
        let a = random_sym(rng, &kinds, 0.4);
        if a.is_empty() {
            continue;
        }
        let b = a.dot(&x0);
        p.add_constraint(a, b);
    }
    p
}

/// Largest eigenvalue of a symmetric 3×3 matrix, closed form.
fn lambda_max_3(a: &[[f64; 3]; 3]) -> f64 {
    let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
    let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    if p1 == 0.0 {
        return a[0][0].max(a[1][1]).max(a[2][2]);
    }
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (a[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det / 2.0).clamp(-1.0, 1.0);
    q + 2.0 * p * (r.acos() / 3.0).cos()
}

/// `max <C, X>` over 3×3 density matrices with `<A, X> = b`, from the
/// one-parameter dual `min_y λmax(C − yA) + b y` by grid plus golden section.
fn spectrahedron_oracle(c: &[[f64; 3]; 3], a: &[[f64; 3]; 3], b: f64) -> f64 {
    let f = |y: f64| {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = c[i][j] - y * a[i][j];
            }
        }
        lambda_max_3(&m) + b * y
    };
    let (lo, hi, steps) = (-50.0, 50.0, 200_000);
    let h = (hi - lo) / steps as f64;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=steps {
        let y = lo + h * k as f64;
        let v = f(y);
        if v < best.0 {
            best = (v, y);
        }
    }
    let (mut l, mut r) = (best.1 - h, best.1 + h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let m1 = r - g * (r - l);
        let m2 = l + g * (r - l);
        if f(m1) < f(m2) {
            r = m2;
        } else {
            l = m1;
        }
    }
    f(0.5 * (l + r)).min(best.0)
}

fn sym3(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = rng.random_range(-1.0..1.0);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

fn sparse3(m: &[[f64; 3]; 3]) -> SparseSym<f64> {
    let mut s = SparseSym::new();
    for i in 0..3 {
        for j in i..3 {
            s.add(0, i, j, m[i][j]);
        }
    }
    s
}

fn oracle_problem(rng: &mut ChaCha8Rng) -> (SdpProblem<f64>, f64) {
    let c = sym3(rng);
    let a = sym3(rng);
    let g = sym3(rng);
    let mut x0 = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            x0[i][j] = (if i == j { 1.0 } else { 0.0 } + 0.2 * g[i][j]) / 3.0;
        }
    }
    let tr: f64 = (0..3).map(|i| x0[i][i]).sum();
    let b = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| a[i][j] * x0[j][i]).sum::<f64>() / tr;
    let mut p = SdpProblem::new(vec![BlockKind::Dense(3)], Sense::Maximize);
    p.objective = sparse3(&c);
    p.add_constraint(trace_constraint(&[BlockKind::Dense(3)]), 1.0);
    p.add_constraint(sparse3(&a), b);
    (p, spectrahedron_oracle(&c, &a, b))
}

fn sdp_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = SolverOptions::default();
    let (mut optimal, mut worst_gap, mut worst_feas, mut worst_oracle) = (0, 0.0f64, 0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for k in 0..50 {
        let (p, oracle) = if k < 10 {
            let (p, o) = oracle_problem(&mut rng);
            (p, Some(o))
        } else {
            (random_problem(&mut rng), None)
        };
        let sol = match solve(&p, &opts) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("#{k}: {e}"));
                continue;
            }
        };
        if let Some(o) = oracle {
            let d = (sol.primal_objective - o).abs();
            worst_oracle = worst_oracle.max(d);
            if d > 1e-4 {
                failures.push(format!("#{k}: oracle {o} vs {}", sol.primal_objective));
            }
        }
        if sol.status != SolveStatus::Optimal {
            failures.push(format!("#{k}: status {}", sol.status));
            continue;
        }
        optimal += 1;
        let r = residuals(&p, &sol);
        worst_gap = worst_gap.max(r.gap);
        worst_feas = worst_feas.max(r.primal_feas).max(r.dual_feas);
        if r.gap > 1e-8 || r.primal_feas > 1e-8 || r.dual_feas > 1e-8 {
            failures.push(format!("#{k}: {r:?}"));
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "{optimal}/50 optimal, max gap {worst_gap:.1e}, max residual {worst_feas:.1e}, max oracle diff {worst_oracle:.1e}{}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn simulation_exactness() -> Verdict {
    let exact = (2.0 + 2f64.sqrt()) / 4.0;
    let mut worst: f64 = 0.0;
    let mut ns: f64 = 0.0;
    for eta in [0.5, 0.8, 1.0] {
        let b = exact_behavior(&OpticalModel::default().with_eta_c(eta)).unwrap();
        let c = coarse_grain(&b).unwrap();
        for d in [c.omega - exact, c.q0, c.q1, c.tau0 - eta, c.tau1 - eta] {
            worst = worst.max(d.abs());
        }
        ns = ns.max(b.no_signalling(1e-12).max_deviation);
    }
    verdict(worst <= 1e-10 && ns < 1e-12, format!("max deviation {worst:.1e}, no-signalling {ns:.1e}"))
}

fn protocol_determinism() -> Verdict {
    let model = OpticalModel::default();
    let cfg = open_config(10_000, 0.1, seeds(1, 2, 3), DiMode::SemiDi);
    let runs: Vec<Vec<u8>> = (0..5).map(|_| run_session(&cfg, &model).unwrap().to_jsonl_bytes()).collect();
    let identical = runs.windows(2).all(|w| w[0] == w[1]);

    let sabotaged = OpticalModel { angles_b: [0.0, 0.0], ..OpticalModel::default() };
    let n = 100_000;
    let (honest, q) = honest_box_config(n, 0.1, 3.0, seeds(0, 0, 0));
    let b = exact_behavior(&sabotaged).unwrap();
    let q_bad = honest.params.score_model(1.0).expected(&b).unwrap();
    let loss = Score::ChshLoss.index();
    let acc = &honest.acceptance.accepted;
    let false_accept = 1.0 - binomial_outside(n, q_bad[loss], acc.lo[loss], acc.hi[loss]);
    let sessions = 20;
    let aborted = (0..sessions)
        .filter(|&k| {
            let mut cfg = honest.clone();
            cfg.params.seeds = seeds(10 + k, 20 + k, 30 + k);
            run_session(&cfg, &sabotaged).unwrap().status == SessionStatus::Aborted
        })
        .count();
    verdict(
        identical && aborted == sessions as usize,
        format!(
            "5 runs identical {identical} ({} bytes); sabotaged aborted {aborted}/{sessions}, P(loss freq accepted) <= {false_accept:.1e} (honest loss {:.4}, sabotaged {:.4})",
            runs[0].len(),
            q[loss],
            q_bad[loss]
        ),
    )
}

fn tradeoff_consistency() -> Verdict {
    let opts = SolverOptions::<f64>::default();
    let base = OpticalModel::default().with_eta_c(0.9).with_visibility(0.97);
    let mode = DiMode::SemiDi;
    let b = exact_behavior(&base).unwrap();
    let model = ScoreModel { mode, gamma: [0.1; 2], p_switch: 0.5, px: [0.5; 2], py: [0.5; 2], pz: [0.5; 2], bob_efficiency: 1.0 };
    let spec = GuessingProgramSpec::from_behavior(&b, ConstraintMode::CoarseGrained, mode).unwrap();
    let (f, bound, program) = build_min_tradeoff(&spec, &model, None, &opts).unwrap();
    let honest = model.expected(&b).unwrap();
    let rate = min_entropy_rate(bound.pg_upper, bound.p_gen).unwrap();
    let at_honest = f.evaluate(&honest);
    let tight = (at_honest - rate).abs() <= 1e-6;

    // the accepted set is the box spanned by these distributions
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = f64::INFINITY;
    let mut statuses = Vec::new();
    let mut lo = honest;
    let mut hi = honest;
    let mut samples = Vec::new();
    for _ in 0..20 {
        let eta = 0.9 + rng.random_range(-0.03..0.03);
        let vis = (0.97 + rng.random_range(-0.02..0.02f64)).min(1.0);
        let q = model.expected(&exact_behavior(&base.clone().with_eta_c(eta).with_visibility(vis)).unwrap()).unwrap();
        for d in 0..Score::COUNT {
            lo[d] = lo[d].min(q[d]);
            hi[d] = hi[d].max(q[d]);
        }
        samples.push(q);
    }
    let mut ok = true;
    for q in &samples {
        assert!((0..Score::COUNT).all(|d| q[d] >= lo[d] && q[d] <= hi[d]));
        let r = program.solve_with_values(&model.coarse_values(q).to_vec(mode), &opts).unwrap();
        let h = min_entropy_rate(r.pg_upper, r.p_gen).unwrap();
        let margin = h + 2.0 * opts.gap_tol - f.evaluate(q);
        worst = worst.min(margin);
        ok &= margin >= 0.0;
        statuses.push(r.status.to_string());
    }
    statuses.sort();
    statuses.dedup();
    verdict(
        tight && ok,
        format!(
            "f(honest) {at_honest:.9} vs rate {rate:.9} (|diff| {:.1e}); min over 20 of resolved + 2 gap_tol - f = {worst:.2e}; statuses {statuses:?}",
            (at_honest - rate).abs()
        ),
    )
}

fn extractor_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let bits = |rng: &mut ChaCha8Rng, n: usize| -> Vec<u8> { (0..n).map(|_| rng.random_range(0..2u8)).collect() };
    let mut mismatches = 0;
    let mut linear_failures = 0;
    let mut largest = 0;
    for k in 0..100 {
        let n_in = if k < 5 { 4096 } else { rng.random_range(1..=4096) };
        let n_out = rng.random_range(1..=n_in.min(512));
        largest = largest.max(n_in);
        let seed = ToeplitzSeed::new(bits(&mut rng, n_in + n_out - 1)).unwrap();
        let x = bits(&mut rng, n_in);
        if extract(&x, &seed, n_out).unwrap() != extract_naive(&x, &seed, n_out).unwrap() {
            mismatches += 1;
        }
        let y = bits(&mut rng, n_in);
        let xy: Vec<u8> = x.iter().zip(&y).map(|(a, b)| a ^ b).collect();
        let fx = extract(&x, &seed, n_out).unwrap();
        let fy = extract(&y, &seed, n_out).unwrap();
        let sum: Vec<u8> = fx.iter().zip(&fy).map(|(a, b)| a ^ b).collect();
        if extract(&xy, &seed, n_out).unwrap() != sum {
            linear_failures += 1;
        }
    }
    verdict(
        mismatches == 0 && linear_failures == 0,
        format!("fast vs naive mismatches {mismatches}/100 (n_in up to {largest}), linearity failures {linear_failures}/100"),
    )
}

fn transport_equivalence() -> Verdict {
    let n = 1000;
    let model = OpticalModel::default();
    let params = dipqrb::protocol::SessionParams::new(n, 0.1, &model, seeds(7, 0, 9), DiMode::SemiDi);
    let client_cfg = |k: u64| open_config(n, 0.1, seeds(7 + k, 500 + k, 9 + k), DiMode::SemiDi);

    let srv = Server::with_model(params.clone(), model.clone(), ServerOptions::default());
    let loop_handles: Vec<_> = (0..3u64)
        .map(|k| {
            let (mut chan, server) = srv.connect_loopback();
            let cfg = client_cfg(k);
            let c = std::thread::spawn(move || run_client(&mut chan, &cfg, &OpticalModel::default(), k).unwrap());
            (c, server)
        })
        .collect();
    let mut looped: Vec<_> = loop_handles
        .into_iter()
        .map(|(c, s)| {
            let _ = s.join();
            c.join().unwrap()
        })
        .collect();

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let srv = Server::with_model(params, model, ServerOptions::default());
    let acceptor = std::thread::spawn(move || srv.serve(listener, Some(3)).unwrap());
    let clients: Vec<_> = (0..3u64)
        .map(|k| {
            let cfg = client_cfg(k);
            std::thread::spawn(move || run_client(&mut connect(addr).unwrap(), &cfg, &OpticalModel::default(), k).unwrap())
        })
        .collect();
    let mut socketed: Vec<_> = clients.into_iter().map(|c| c.join().unwrap()).collect();
    for h in acceptor.join().unwrap() {
        let _ = h.join();
    }
    looped.sort_by_key(|r| r.session_id);
    socketed.sort_by_key(|r| r.session_id);
    let same = looped.len() == 3
        && socketed.len() == 3
        && looped.iter().zip(&socketed).all(|(a, b)| {
            a.session_id == b.session_id && a.transcript.to_jsonl_bytes() == b.transcript.to_jsonl_bytes()
        });
    let completed = looped.iter().chain(&socketed).all(|r| r.transcript.status == SessionStatus::Completed);
    let ids: Vec<u64> = looped.iter().map(|r| r.session_id).collect();
    verdict(same && completed, format!("3 clients x {n} rounds, sessions {ids:?}, identical {same}, completed {completed}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("tsirelson reproduction", tsirelson),
        ("efficiency threshold scan", threshold_scan),
        ("sdp solver suite", sdp_suite),
        ("simulation exactness", simulation_exactness),
        ("protocol determinism and abort soundness", protocol_determinism),
        ("min-tradeoff consistency", tradeoff_consistency),
        ("extractor correctness", extractor_correctness),
        ("transport equivalence", transport_equivalence),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        if !v.pass {
            failed += 1;
        }
        println!("criterion {} {name}: {} | {}", k + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
