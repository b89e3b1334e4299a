use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dipqrb::behavior::{FrequencyCounter, Observation};
use dipqrb::certifier::{rate_scan, write_scan_csv, AcceptedSet, ConstraintMode, DiMode, ScanOptions, ScanRow, Score};
use dipqrb::config::ExperimentConfig;
use dipqrb::extractor::{bits_from_hex, bits_to_hex, bytes_to_bits, encode_raw, extract, output_length, ToeplitzSeed};
use dipqrb::npa::LevelSpec;
use dipqrb::photonic_sim::exact_behavior;
use dipqrb::protocol::{
    check_transcript, plan_acceptance, raw_string, run_session, AcceptanceTest, PlanOptions, ProtocolConfig,
    SessionStatus, Transcript,
};
use dipqrb::transport::{connect, run_client, Server, ServerOptions};

#[derive(Parser)]
#[command(name = "dipqrb", version, about = "Routed Bell test randomness beacon")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// TOML file with [inputs], [optics] and [protocol] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    eta_c: Option<f64>,
    /// NPA level, e.g. "1+AB+AC+AE+CE".
    #[arg(long)]
    level: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long)]
    seed_server: Option<u64>,
    #[arg(long)]
    seed_client: Option<u64>,
    #[arg(long)]
    seed_switch: Option<u64>,
    /// semi_di or fully_di.
    #[arg(long)]
    mode: Option<DiMode>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the exact behavior as CSV, or sampled counts with --sample.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Run --rounds rounds from the seeds and write per-cell counts as JSON lines.
        #[arg(long)]
        sample: bool,
    },
    /// Bound the guessing probability at one efficiency and print the rate.
    Certify {
        #[command(flatten)]
        common: Common,
        /// full or coarse.
        #[arg(long, default_value = "full")]
        constraints: ConstraintMode,
    },
    /// Certified rate per heralded event over a grid of client efficiencies (CSV).
    RateScan {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.4)]
        eta_from: f64,
        #[arg(long, default_value_t = 1.0)]
        eta_to: f64,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        /// full or coarse.
        #[arg(long, default_value = "full")]
        constraints: ConstraintMode,
        /// Write only the (x, y) columns.
        #[arg(long)]
        plot: bool,
    },
    /// Derive the accepted set, min-tradeoff function and threshold (JSON).
    Plan {
        #[command(flatten)]
        common: Common,
    },
    /// Serve sessions over TCP.
    RunServer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        port: Option<u16>,
        /// Exit after this many sessions.
        #[arg(long)]
        sessions: Option<usize>,
        #[arg(long)]
        ack_every: Option<u32>,
        /// Drop each connection after this many rounds.
        #[arg(long)]
        fail_after: Option<u64>,
    },
    /// Run a client session and write its transcript as JSON lines.
    RunClient {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value_t = 0)]
        session: u64,
        /// Run server and client in this process instead of connecting.
        #[arg(long)]
        local: bool,
        /// Acceptance test from `plan`; derived from the config when absent.
        #[arg(long)]
        acceptance: Option<PathBuf>,
    },
    /// Toeplitz-hash raw bits; writes hex.
    Extract {
        /// Raw bits as a binary file (or hex text with --hex).
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        hex: bool,
        /// Take the raw string from a completed transcript instead.
        #[arg(long, conflicts_with = "input")]
        transcript: Option<PathBuf>,
        /// Seed as hex; at least n_in + n_out - 1 bits.
        #[arg(long)]
        seed: Option<PathBuf>,
        #[arg(long)]
        out_bits: Option<usize>,
        /// Certified min-entropy in bits; defaults to the transcript's n·h.
        #[arg(long)]
        certified_bits: Option<f64>,
        #[arg(long, default_value_t = 32)]
        security: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a transcript's invariants.
    Check {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        acceptance: Option<PathBuf>,
    },
}

enum Failure {
    Abort(String),
    Usage(String),
    Solver(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Abort(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Solver(_) => 3,
        }
    }
}

type Outcome = Result<(), Failure>;

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).map_err(usage)?,
        None => ExperimentConfig::default(),
    };
    let p = &mut cfg.protocol;
    if let Some(v) = common.eta_c {
        cfg.optics.eta_c = v;
    }
    if let Some(v) = &common.level {
        p.level = Some(v.clone());
    }
    if let Some(v) = common.gamma {
        p.gamma = v;
    }
    if let Some(v) = common.rounds {
        p.rounds = v;
    }
    if let Some(v) = common.seed_server {
        p.seed_server = v;
    }
    if let Some(v) = common.seed_client {
        p.seed_client = v;
    }
    if let Some(v) = common.seed_switch {
        p.seed_switch = v;
    }
    if let Some(v) = common.mode {
        p.mode = v;
    }
    cfg.optical_model().validate().map_err(usage)?;
    Ok(cfg)
}

fn level(cfg: &ExperimentConfig) -> Result<LevelSpec, Failure> {
    match &cfg.protocol.level {
        Some(s) => s.parse().map_err(usage),
        None => Ok(LevelSpec::default()),
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Outcome {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| usage(format!("writing {}: {e}", p.display()))),
        None => std::io::stdout().write_all(bytes).map_err(usage),
    }
}

fn scan_options(cfg: &ExperimentConfig, constraints: ConstraintMode) -> Result<ScanOptions<f64>, Failure> {
    Ok(ScanOptions { mode: cfg.protocol.mode, constraint_mode: constraints, level: level(cfg)?, ..ScanOptions::default() })
}

fn solver_failed(row: &ScanRow<f64>) -> bool {
    row.solver_status.starts_with("error") || row.solver_status.starts_with("infeasible")
}

fn simulate(common: &Common, sample: bool) -> Outcome {
    let cfg = load(common)?;
    let model = cfg.optical_model();
    let mut buf = Vec::new();
    if sample {
        let params = cfg.session_params().map_err(usage)?;
        let acceptance = open_acceptance();
        let t = run_session(&ProtocolConfig { params, acceptance }, &model).map_err(usage)?;
        let mut counter = FrequencyCounter::new();
        for r in &t.records {
            counter.accumulate(&Observation { s: r.s, x: r.x, y: r.y, z: r.z, a: r.a, b: r.b, c: r.c });
        }
        counter.write_jsonl(&mut buf).map_err(usage)?;
    } else {
        exact_behavior(&model).map_err(usage)?.write_csv(&mut buf).map_err(usage)?;
    }
    emit(common.out.as_deref(), &buf)
}

/// Accepts every frequency vector; used for plain sampling.
fn open_acceptance() -> AcceptanceTest {
    AcceptanceTest {
        accepted: AcceptedSet::new([0.0; Score::COUNT], [1.0; Score::COUNT]).expect("full box"),
        threshold: 0.0,
        tradeoff: dipqrb::certifier::MinTradeoff {
            constant: 0.0,
            coeffs: [0.0; Score::COUNT],
            tangent: dipqrb::certifier::tangent_bound(1.0).expect("tangent at 1"),
            p_gen: 0.0,
        },
    }
}

fn certify(common: &Common, constraints: ConstraintMode) -> Outcome {
    let cfg = load(common)?;
    let model = cfg.optical_model();
    let opts = scan_options(&cfg, constraints)?;
    let row = rate_scan(&model, &[model.eta_c], &opts).remove(0);
    let text = format!(
        "eta_c = {}\nmode = {}\nlevel = {}\npg_upper = {}\np_gen = {}\nrate_per_heralded_event = {}\nsolver_status = {}\ngap = {}\n",
        row.eta_c, opts.mode, opts.level, row.pg_upper, row.p_gen, row.rate_per_heralded_event, row.solver_status, row.gap
    );
    print!("{text}");
    if let Some(p) = &common.out {
        let json = serde_json::to_vec_pretty(&row).map_err(usage)?;
        emit(Some(p), &json)?;
    }
    if solver_failed(&row) {
        return Err(Failure::Solver(row.solver_status));
    }
    Ok(())
}

fn scan_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>, Failure> {
    if !(step > 0.0) || !(to >= from) {
        return Err(usage(format!("empty grid {from}..{to} step {step}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| ((from + k as f64 * step) * 1e12).round() / 1e12).collect())
}

fn rate_scan_cmd(common: &Common, from: f64, to: f64, step: f64, constraints: ConstraintMode, plot: bool) -> Outcome {
    let cfg = load(common)?;
    let opts = scan_options(&cfg, constraints)?;
    let etas = scan_grid(from, to, step)?;
    let rows = rate_scan(&cfg.optical_model(), &etas, &opts);
    let mut buf = Vec::new();
    write_scan_csv(&rows, &mut buf, plot).map_err(usage)?;
    emit(common.out.as_deref(), &buf)?;
    match rows.iter().find(|r| solver_failed(r)) {
        Some(r) => Err(Failure::Solver(format!("eta_c = {}: {}", r.eta_c, r.solver_status))),
        None => Ok(()),
    }
}

fn plan(cfg: &ExperimentConfig) -> Result<AcceptanceTest, Failure> {
    let params = cfg.session_params().map_err(usage)?;
    let opts = PlanOptions {
        sigmas: cfg.protocol.accept_sigmas,
        threshold: cfg.protocol.threshold,
        level: level(cfg)?,
        ..PlanOptions::default()
    };
    plan_acceptance(&params, &cfg.optical_model(), &opts).map_err(|e| Failure::Solver(e.to_string()))
}

fn plan_cmd(common: &Common) -> Outcome {
    let cfg = load(common)?;
    let acc = plan(&cfg)?;
    let mut json = serde_json::to_vec_pretty(&acc).map_err(usage)?;
    json.push(b'\n');
    emit(common.out.as_deref(), &json)
}

fn run_server(common: &Common, port: Option<u16>, sessions: Option<usize>, ack: Option<u32>, fail_after: Option<u64>) -> Outcome {
    let cfg = load(common)?;
    let params = cfg.session_params().map_err(usage)?;
    let ack_every = ack.unwrap_or(cfg.protocol.ack_every);
    if ack_every == 0 {
        return Err(usage("ack_every must be positive"));
    }
    let port = port.unwrap_or(cfg.protocol.port);
    let listener = TcpListener::bind((cfg.protocol.host.as_str(), port)).map_err(usage)?;
    eprintln!("listening on {}", listener.local_addr().map_err(usage)?);
    let server = Server::with_model(params, cfg.optical_model(), ServerOptions { ack_every, fail_after });
    let handles = server.serve(listener, sessions).map_err(usage)?;
    let mut failed = false;
    for h in handles {
        match h.join() {
            Ok(Ok(r)) => println!("session {} rounds {} completed {}", r.session_id, r.rounds_sent, r.completed),
            Ok(Err(e)) => {
                failed = true;
                println!("session failed: {e}");
            }
            Err(_) => failed = true,
        }
    }
    if failed {
        return Err(Failure::Abort("one or more sessions failed".into()));
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let bytes = std::fs::read(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| usage(format!("parsing {}: {e}", path.display())))
}

fn read_transcript(path: &Path) -> Result<Transcript, Failure> {
    let f = std::fs::File::open(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    Transcript::read_jsonl(std::io::BufReader::new(f)).map_err(usage)
}

fn run_client_cmd(common: &Common, host: Option<String>, port: Option<u16>, session: u64, local: bool, acceptance: Option<PathBuf>) -> Outcome {
    let cfg = load(common)?;
    let params = cfg.session_params().map_err(usage)?;
    let acceptance = match acceptance {
        Some(p) => read_json(&p)?,
        None => plan(&cfg)?,
    };
    let config = ProtocolConfig { params, acceptance };
    let model = cfg.optical_model();
    let transcript = if local {
        run_session(&config, &model).map_err(usage)?
    } else {
        let host = host.unwrap_or_else(|| cfg.protocol.host.clone());
        let port = port.unwrap_or(cfg.protocol.port);
        let mut chan = connect((host.as_str(), port)).map_err(|e| Failure::Abort(format!("transport_error: {e}")))?;
        let report = run_client(&mut chan, &config, &model, session).map_err(|e| Failure::Abort(format!("transport_error: {e}")))?;
        eprintln!("session {}", report.session_id);
        report.transcript
    };
    emit(common.out.as_deref(), &transcript.to_jsonl_bytes())?;
    eprintln!(
        "status {} rounds {} counted {} estimate {} certified {}",
        transcript.status,
        transcript.records.len(),
        transcript.counted_rounds,
        transcript.entropy_estimate.map_or("n/a".to_string(), |e| e.to_string()),
        transcript.entropy_threshold.map_or("n/a".to_string(), |e| e.to_string())
    );
    match transcript.status {
        SessionStatus::Completed => Ok(()),
        _ => Err(Failure::Abort(transcript.abort_reason.unwrap_or_else(|| transcript.status.to_string()))),
    }
}

#[allow(clippy::too_many_arguments)]
fn extract_cmd(
    input: Option<PathBuf>,
    hex: bool,
    transcript: Option<PathBuf>,
    seed: Option<PathBuf>,
    out_bits: Option<usize>,
    certified_bits: Option<f64>,
    security: u32,
    out: Option<PathBuf>,
) -> Outcome {
    let (bits, estimate) = match (&input, &transcript) {
        (Some(p), None) => {
            let bytes = std::fs::read(p).map_err(|e| usage(format!("reading {}: {e}", p.display())))?;
            let bits = if hex {
                bits_from_hex(&String::from_utf8_lossy(&bytes), None).map_err(usage)?
            } else {
                bytes_to_bits(&bytes)
            };
            (bits, None)
        }
        (None, Some(p)) => {
            let t = read_transcript(p)?;
            let raw = raw_string(&t).map_err(|e| Failure::Abort(e.to_string()))?;
            (encode_raw(&raw, t.mode), t.entropy_threshold)
        }
        _ => return Err(usage("give exactly one of --in and --transcript")),
    };
    let n_out = match (out_bits, certified_bits.or(estimate)) {
        (Some(n), _) => n,
        (None, Some(h)) => output_length(h.max(0.0), security),
        (None, None) => return Err(usage("give --out-bits or --certified-bits")),
    };
    let result = if n_out == 0 {
        Vec::new()
    } else {
        let path = seed.ok_or_else(|| usage("--seed is required for a non-empty output"))?;
        let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
        let need = ToeplitzSeed::required_len(bits.len(), n_out);
        let seed = ToeplitzSeed::new(bits_from_hex(&text, Some(need)).map_err(usage)?).map_err(usage)?;
        extract(&bits, &seed, n_out).map_err(usage)?
    };
    let mut text = bits_to_hex(&result);
    text.push('\n');
    if result.is_empty() {
        text.clear();
    }
    emit(out.as_deref(), text.as_bytes())
}

fn check_cmd(path: &Path, acceptance: Option<PathBuf>) -> Outcome {
    let t = read_transcript(path)?;
    let acc: Option<AcceptanceTest> = acceptance.map(|p| read_json(&p)).transpose()?;
    let checks = check_transcript(&t, acc.as_ref().map(|a| &a.accepted));
    for c in &checks {
        if c.passed {
            println!("PASS {}", c.name);
        } else {
            println!("FAIL {}: {}", c.name, c.detail);
        }
    }
    if checks.iter().all(|c| c.passed) {
        Ok(())
    } else {
        Err(Failure::Abort("transcript failed its checks".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { common, sample } => simulate(&common, sample),
        Command::Certify { common, constraints } => certify(&common, constraints),
        Command::RateScan { common, eta_from, eta_to, step, constraints, plot } => {
            rate_scan_cmd(&common, eta_from, eta_to, step, constraints, plot)
        }
        Command::Plan { common } => plan_cmd(&common),
        Command::RunServer { common, port, sessions, ack_every, fail_after } => {
            run_server(&common, port, sessions, ack_every, fail_after)
        }
        Command::RunClient { common, host, port, session, local, acceptance } => {
            run_client_cmd(&common, host, port, session, local, acceptance)
        }
        Command::Extract { input, hex, transcript, seed, out_bits, certified_bits, security, out } => {
            extract_cmd(input, hex, transcript, seed, out_bits, certified_bits, security, out)
        }
        Command::Check { transcript, acceptance } => check_cmd(&transcript, acceptance),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Abort(m) => eprintln!("aborted: {m}"),
                Failure::Usage(m) => eprintln!("error: {m}\n\nRun with --help for usage."),
                Failure::Solver(m) => eprintln!("solver failure: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
