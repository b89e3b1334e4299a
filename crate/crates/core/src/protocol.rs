//! Round loop of the beacon: server and client state machines, the
//! accepted-set check and transcripts.

use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::{InputDist, Outcome};
use crate::certifier::{
    asymptotic_rate, build_min_tradeoff, AcceptedSet, CertifierError, ConstraintMode, DiMode, GuessingProgramSpec,
    MinTradeoff, Score, ScoreDistribution, ScoreModel,
};
use crate::npa::LevelSpec;
use crate::photonic_sim::{exact_behavior, OpticalModel, RoundSampler, SimError};
use crate::sdp::SolverOptions;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("round {got} announced, expected {expected}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("round {0}: {1}")]
    Malformed(u64, String),
    #[error("session already has {0} rounds")]
    Overrun(u64),
    #[error("transcript was aborted: {0}")]
    NotCompleted(String),
    #[error("transcript: {0}")]
    Transcript(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Certifier(#[from] CertifierError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seeds {
    pub server: u64,
    pub client: u64,
    pub switch: u64,
}

/// Parameters both parties agree on before the first round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionParams {
    pub n: u64,
    /// Test probability for s=0 and s=1 rounds.
    pub gamma: [f64; 2],
    pub p_switch: f64,
    pub px: InputDist<f64>,
    pub py: InputDist<f64>,
    pub pz: InputDist<f64>,
    pub seeds: Seeds,
    pub mode: DiMode,
}

impl SessionParams {
    pub fn new(n: u64, gamma: f64, model: &OpticalModel<f64>, seeds: Seeds, mode: DiMode) -> Self {
        Self { n, gamma: [gamma; 2], p_switch: model.p_switch, px: model.px, py: model.py, pz: model.pz, seeds, mode }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::Config(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        for g in self.gamma {
            if !(g > 0.0 && g < 1.0) {
                return bad(format!("gamma = {g} outside (0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.p_switch) {
            return bad(format!("p_switch = {} outside [0, 1]", self.p_switch));
        }
        for (name, d) in [("px", self.px), ("py", self.py), ("pz", self.pz)] {
            if d.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (d[0] + d[1] - 1.0).abs() > 1e-9 {
                return bad(format!("{name} = {d:?} is not a distribution"));
            }
        }
        Ok(())
    }

    pub fn score_model(&self, bob_efficiency: f64) -> ScoreModel<f64> {
        ScoreModel {
            mode: self.mode,
            gamma: self.gamma,
            p_switch: self.p_switch,
            px: self.px,
            py: self.py,
            pz: self.pz,
            bob_efficiency,
        }
    }
}

/// What the client checks after the last round: observed frequencies must
/// lie in `accepted`, and `N·f(freq) ≥ N·threshold` where `N` counts the
/// rounds frequencies are taken over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceTest {
    pub accepted: AcceptedSet<f64>,
    pub threshold: f64,
    pub tradeoff: MinTradeoff<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub params: SessionParams,
    pub acceptance: AcceptanceTest,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.params.validate()?;
        self.acceptance.accepted.validate()?;
        if self.acceptance.threshold.is_nan() {
            return Err(ProtocolError::Config("threshold is NaN".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Knobs for deriving the acceptance test from an honest device model.
#[derive(Clone, Debug)]
pub struct PlanOptions {
    pub sigmas: f64,
    pub threshold: Option<f64>,
    pub level: LevelSpec,
    pub solver: SolverOptions<f64>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self { sigmas: 3.0, threshold: None, level: LevelSpec::default(), solver: SolverOptions::default() }
    }
}

/// Expected score distribution of an honest run and the number of rounds the
/// frequencies will be taken over.
pub fn honest_scores(params: &SessionParams, model: &OpticalModel<f64>) -> Result<(ScoreDistribution<f64>, f64), ProtocolError> {
    let b = exact_behavior(model)?;
    let q = params.score_model(model.eta_b).expected(&b)?;
    let counted = match params.mode {
        DiMode::SemiDi => params.n as f64 * b.heralding_rate(),
        DiMode::FullyDi => params.n as f64,
    };
    Ok((q, counted))
}

/// Build the acceptance test for an honest model: the min-tradeoff function
/// from the score-constrained program at the honest scores, an accepted set
/// of ±`sigmas` binomial deviations and, unless given, the threshold
/// `h = min f` over that set.
pub fn plan_acceptance(
    params: &SessionParams,
    model: &OpticalModel<f64>,
    opts: &PlanOptions,
) -> Result<AcceptanceTest, ProtocolError> {
    params.validate()?;
    model.validate()?;
    let b = exact_behavior(model)?;
    let mut spec = GuessingProgramSpec::from_behavior(&b, ConstraintMode::CoarseGrained, params.mode)?;
    spec.level = opts.level.clone();
    let score_model = params.score_model(model.eta_b);
    let (tradeoff, _, _) = build_min_tradeoff(&spec, &score_model, None, &opts.solver)?;
    let (q, counted) = honest_scores(params, model)?;
    let accepted = AcceptedSet::with_sigmas(&q, counted.round().max(1.0) as usize, opts.sigmas)?;
    let threshold = match opts.threshold {
        Some(h) => h,
        None => asymptotic_rate(&tradeoff, &accepted)?,
    };
    Ok(AcceptanceTest { accepted, threshold, tradeoff })
}

/// ChaCha20 stream that counts the 64-bit words it hands out.
#[derive(Clone, Debug)]
pub struct CountingRng {
    rng: ChaCha20Rng,
    words: u64,
}

impl CountingRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, words: 0 }
    }

    pub fn words(&self) -> u64 {
        self.words
    }
}

impl RngCore for CountingRng {
    fn next_u32(&mut self) -> u32 {
        self.words += 1;
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.words += 1;
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.words += dst.len().div_ceil(8) as u64;
        self.rng.fill_bytes(dst)
    }
}

// Input choices use stream 0 of each seed; simulated detector noise uses
// stream 1 so that it never shifts an input draw.
const INPUT_STREAM: u64 = 0;
const DEVICE_STREAM: u64 = 1;

/// Words consumed from each randomness source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamCounters {
    pub switch: u64,
    pub server: u64,
    pub client: u64,
    pub server_device: u64,
    pub client_device: u64,
}

fn draw_bit<R: Rng + ?Sized>(rng: &mut R, dist: InputDist<f64>) -> u8 {
    u8::from(rng.random::<f64>() >= dist[0])
}

/// The public announcement `P_i = (s, x, y, a, b)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Announcement {
    pub i: u64,
    pub s: u8,
    pub x: u8,
    pub y: u8,
    pub a: Outcome,
    pub b: Outcome,
}

impl Announcement {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let err = |m: &str| Err(ProtocolError::Malformed(self.i, m.into()));
        if self.s > 1 || self.x > 1 || self.y > 1 {
            return err("input outside {0, 1}");
        }
        if self.s == 1 && self.b != Outcome::Void {
            return err("b must be void when s = 1");
        }
        Ok(())
    }
}

/// Server side: switch, Alice and Bob.
#[derive(Clone, Debug)]
pub struct ServerSession {
    params: SessionParams,
    sampler: RoundSampler,
    switch: CountingRng,
    inputs: CountingRng,
    device: CountingRng,
    next: u64,
}

impl ServerSession {
    pub fn new(params: SessionParams, model: &OpticalModel<f64>) -> Result<Self, ProtocolError> {
        params.validate()?;
        let sampler = RoundSampler::new(model)?;
        let seeds = params.seeds;
        Ok(Self {
            params,
            sampler,
            switch: CountingRng::new(seeds.switch, INPUT_STREAM),
            inputs: CountingRng::new(seeds.server, INPUT_STREAM),
            device: CountingRng::new(seeds.server, DEVICE_STREAM),
            next: 0,
        })
    }

    pub fn params(&self) -> &SessionParams {
        &self.params
    }

    pub fn rounds_sent(&self) -> u64 {
        self.next
    }

    pub fn next_round(&mut self) -> Option<Announcement> {
        if self.next >= self.params.n {
            return None;
        }
        let s = u8::from(self.switch.random::<f64>() < self.params.p_switch);
        let x = draw_bit(&mut self.inputs, self.params.px);
        let y = draw_bit(&mut self.inputs, self.params.py);
        let (a, b) = self.sampler.sample_server(&mut self.device, s, x, y);
        let ann = Announcement { i: self.next, s, x, y, a, b };
        self.next += 1;
        Some(ann)
    }

    /// Counts for the server-held streams; client fields are zero.
    pub fn counters(&self) -> StreamCounters {
        StreamCounters {
            switch: self.switch.words(),
            server: self.inputs.words(),
            server_device: self.device.words(),
            ..StreamCounters::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub i: u64,
    pub s: u8,
    pub x: u8,
    pub y: u8,
    pub z: u8,
    pub a: Outcome,
    pub b: Outcome,
    pub c: Outcome,
    pub t: bool,
    pub d: Score,
}

impl RoundRecord {
    pub fn check_blanking(&self) -> bool {
        (self.s == 0 || self.b == Outcome::Void) && (self.s == 1 || self.c == Outcome::Void)
    }

    /// Whether the round enters the score frequencies.
    pub fn counted(&self, mode: DiMode) -> bool {
        mode == DiMode::FullyDi || self.a != Outcome::Void
    }
}

fn map_void(o: Outcome, mode: DiMode) -> Outcome {
    match (mode, o) {
        (DiMode::FullyDi, Outcome::Void) => Outcome::Zero,
        _ => o,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Completed,
    Aborted,
    TransportError,
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionStatus::Completed => "completed",
            SessionStatus::Aborted => "aborted",
            SessionStatus::TransportError => "transport_error",
        })
    }
}

/// Client side: Charlie plus the bookkeeping for the final test.
#[derive(Clone, Debug)]
pub struct ClientSession {
    config: ProtocolConfig,
    config_hash: String,
    sampler: RoundSampler,
    inputs: CountingRng,
    device: CountingRng,
    records: Vec<RoundRecord>,
}

impl ClientSession {
    pub fn new(config: ProtocolConfig, model: &OpticalModel<f64>) -> Result<Self, ProtocolError> {
        config.validate()?;
        let sampler = RoundSampler::new(model)?;
        let seeds = config.params.seeds;
        Ok(Self {
            config_hash: config.hash(),
            sampler,
            inputs: CountingRng::new(seeds.client, INPUT_STREAM),
            device: CountingRng::new(seeds.client, DEVICE_STREAM),
            records: Vec::with_capacity(config.params.n.min(1 << 24) as usize),
            config,
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn next_index(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn ingest(&mut self, ann: &Announcement) -> Result<&RoundRecord, ProtocolError> {
        let p = &self.config.params;
        let expected = self.next_index();
        if expected >= p.n {
            return Err(ProtocolError::Overrun(p.n));
        }
        if ann.i != expected {
            return Err(ProtocolError::OutOfOrder { expected, got: ann.i });
        }
        ann.validate()?;
        let z = draw_bit(&mut self.inputs, p.pz);
        let t = self.inputs.random::<f64>() < p.gamma[ann.s as usize];
        let c = if ann.s == 1 { self.sampler.sample_client(&mut self.device, ann.a, ann.x, z) } else { Outcome::Void };
        let a = map_void(ann.a, p.mode);
        let (b, c) = if ann.s == 0 { (map_void(ann.b, p.mode), c) } else { (ann.b, map_void(c, p.mode)) };
        let d = Score::of_round(ann.s, ann.x, ann.y, z, a, b, c, t);
        self.records.push(RoundRecord { i: ann.i, s: ann.s, x: ann.x, y: ann.y, z, a, b, c, t, d });
        Ok(self.records.last().expect("just pushed"))
    }

    fn counters(&self) -> StreamCounters {
        StreamCounters { client: self.inputs.words(), client_device: self.device.words(), ..StreamCounters::default() }
    }

    /// Run the final test on everything ingested so far.
    pub fn finish(self) -> Transcript {
        let streams = self.counters();
        let mode = self.config.params.mode;
        let tally = Tally::of(&self.records, mode);
        let mut t = Transcript {
            config_hash: self.config_hash,
            mode,
            records: self.records,
            status: SessionStatus::Aborted,
            abort_reason: None,
            counts: tally.counts,
            counted_rounds: tally.counted,
            frequencies: tally.frequencies(),
            entropy_estimate: None,
            entropy_threshold: None,
            streams,
        };
        let acc = &self.config.acceptance;
        if t.records.len() as u64 != self.config.params.n {
            t.abort_reason = Some(format!("only {} of {} rounds", t.records.len(), self.config.params.n));
        } else if tally.counted == 0 {
            t.abort_reason = Some("no rounds to estimate from".into());
        } else if !acc.accepted.contains(&t.frequencies) {
            t.abort_reason = Some("score frequencies outside the accepted set".into());
        } else {
            let n = tally.counted as f64;
            let est = n * acc.tradeoff.evaluate(&t.frequencies);
            let need = n * acc.threshold;
            t.entropy_estimate = Some(est);
            t.entropy_threshold = Some(need);
            if est >= need - 1e-9 * need.abs().max(1.0) {
                t.status = SessionStatus::Completed;
            } else {
                t.abort_reason = Some(format!("entropy estimate {est} below {need}"));
            }
        }
        t
    }

    /// Give up after a transport failure at the next expected round.
    pub fn fail(self, why: &str) -> Transcript {
        let next = self.next_index();
        let mut t = self.finish();
        t.status = SessionStatus::TransportError;
        t.entropy_estimate = None;
        t.entropy_threshold = None;
        t.abort_reason = Some(format!("transport_error at i={next}: {why}"));
        t
    }
}

struct Tally {
    counts: [u64; Score::COUNT],
    counted: u64,
}

impl Tally {
    fn of(records: &[RoundRecord], mode: DiMode) -> Self {
        let mut counts = [0u64; Score::COUNT];
        let mut counted = 0;
        for r in records.iter().filter(|r| r.counted(mode)) {
            counts[r.d.index()] += 1;
            counted += 1;
        }
        Self { counts, counted }
    }

    fn frequencies(&self) -> ScoreDistribution<f64> {
        let mut q = [0.0; Score::COUNT];
        if self.counted > 0 {
            for d in 0..Score::COUNT {
                q[d] = self.counts[d] as f64 / self.counted as f64;
            }
        }
        q
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub config_hash: String,
    pub mode: DiMode,
    pub records: Vec<RoundRecord>,
    pub status: SessionStatus,
    pub abort_reason: Option<String>,
    pub counts: [u64; Score::COUNT],
    /// Rounds the frequencies are taken over: heralded rounds in semi-DI
    /// mode, all rounds in fully-DI mode.
    pub counted_rounds: u64,
    pub frequencies: ScoreDistribution<f64>,
    pub entropy_estimate: Option<f64>,
    pub entropy_threshold: Option<f64>,
    pub streams: StreamCounters,
}

#[derive(Serialize, Deserialize)]
struct Footer {
    status: SessionStatus,
    abort_reason: Option<String>,
    config_hash: String,
    mode: DiMode,
    rounds: u64,
    counted_rounds: u64,
    counts: std::collections::BTreeMap<String, u64>,
    frequencies: std::collections::BTreeMap<String, f64>,
    entropy_estimate: Option<f64>,
    entropy_threshold: Option<f64>,
    streams: StreamCounters,
}

impl Transcript {
    /// One JSON object per round, then a footer object.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), ProtocolError> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        let named = |f: &dyn Fn(usize) -> f64| Score::ALL.iter().map(|d| (d.name().to_string(), f(d.index()))).collect();
        let footer = Footer {
            status: self.status,
            abort_reason: self.abort_reason.clone(),
            config_hash: self.config_hash.clone(),
            mode: self.mode,
            rounds: self.records.len() as u64,
            counted_rounds: self.counted_rounds,
            counts: Score::ALL.iter().map(|d| (d.name().to_string(), self.counts[d.index()])).collect(),
            frequencies: named(&|i| self.frequencies[i]),
            entropy_estimate: self.entropy_estimate,
            entropy_threshold: self.entropy_threshold,
            streams: self.streams,
        };
        serde_json::to_writer(&mut w, &footer)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_jsonl(&mut v).expect("writing to memory");
        v
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, ProtocolError> {
        let lines: Vec<String> = r.lines().collect::<Result<_, _>>()?;
        let lines: Vec<&String> = lines.iter().filter(|l| !l.trim().is_empty()).collect();
        let (last, body) = lines.split_last().ok_or_else(|| ProtocolError::Transcript("empty transcript".into()))?;
        let footer: Footer = serde_json::from_str(last)?;
        let records = body.iter().map(|l| serde_json::from_str(l)).collect::<Result<Vec<RoundRecord>, _>>()?;
        if records.len() as u64 != footer.rounds {
            return Err(ProtocolError::Transcript(format!(
                "footer says {} rounds, found {}",
                footer.rounds,
                records.len()
            )));
        }
        let lookup = |what: &str, d: Score| -> Result<(), ProtocolError> {
            Err(ProtocolError::Transcript(format!("footer {what} lacks {}", d.name())))
        };
        let mut counts = [0u64; Score::COUNT];
        let mut frequencies = [0.0; Score::COUNT];
        for d in Score::ALL {
            match footer.counts.get(d.name()) {
                Some(&c) => counts[d.index()] = c,
                None => lookup("counts", d)?,
            }
            match footer.frequencies.get(d.name()) {
                Some(&f) => frequencies[d.index()] = f,
                None => lookup("frequencies", d)?,
            }
        }
        Ok(Self {
            config_hash: footer.config_hash,
            mode: footer.mode,
            records,
            status: footer.status,
            abort_reason: footer.abort_reason,
            counts,
            counted_rounds: footer.counted_rounds,
            frequencies,
            entropy_estimate: footer.entropy_estimate,
            entropy_threshold: footer.entropy_threshold,
            streams: footer.streams,
        })
    }
}

/// Client outcomes of all `s = 1` rounds in round order. In semi-DI mode the
/// sequence may contain `Void`; in fully-DI mode it is binary.
pub fn raw_string(t: &Transcript) -> Result<Vec<Outcome>, ProtocolError> {
    if t.status != SessionStatus::Completed {
        return Err(ProtocolError::NotCompleted(t.abort_reason.clone().unwrap_or_else(|| t.status.to_string())));
    }
    Ok(t.records.iter().filter(|r| r.s == 1).map(|r| r.c).collect())
}

/// Run a whole session in one process.
pub fn run_session(config: &ProtocolConfig, model: &OpticalModel<f64>) -> Result<Transcript, ProtocolError> {
    let mut server = ServerSession::new(config.params.clone(), model)?;
    let mut client = ClientSession::new(config.clone(), model)?;
    while let Some(ann) = server.next_round() {
        client.ingest(&ann)?;
    }
    let server_side = server.counters();
    let mut t = client.finish();
    t.streams.switch = server_side.switch;
    t.streams.server = server_side.server;
    t.streams.server_device = server_side.server_device;
    Ok(t)
}

/// Result of one invariant check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Invariants a transcript must satisfy on its own, plus abort soundness
/// when the accepted set is known.
pub fn check_transcript(t: &Transcript, accepted: Option<&AcceptedSet<f64>>) -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name, bad: Option<String>| {
        out.push(Check { name, passed: bad.is_none(), detail: bad.unwrap_or_default() })
    };
    push("indices", t.records.iter().enumerate().find(|(k, r)| r.i != *k as u64).map(|(k, r)| format!("record {k} has i={}", r.i)));
    push("blanking", t.records.iter().find(|r| !r.check_blanking()).map(|r| format!("round {}", r.i)));
    push(
        "scores",
        t.records
            .iter()
            .find(|r| r.d != Score::of_round(r.s, r.x, r.y, r.z, r.a, r.b, r.c, r.t))
            .map(|r| format!("round {} stores {}", r.i, r.d)),
    );
    push(
        "fully_di_binary",
        match t.mode {
            DiMode::SemiDi => None,
            DiMode::FullyDi => t
                .records
                .iter()
                .find(|r| r.a == Outcome::Void || (r.s == 0 && r.b == Outcome::Void) || (r.s == 1 && r.c == Outcome::Void))
                .map(|r| format!("round {} keeps a void outcome", r.i)),
        },
    );
    let tally = Tally::of(&t.records, t.mode);
    let freq = tally.frequencies();
    push(
        "frequencies",
        if tally.counts != t.counts || tally.counted != t.counted_rounds || freq != t.frequencies {
            Some("stored counts or frequencies differ from the records".into())
        } else {
            None
        },
    );
    if let Some(acc) = accepted {
        push(
            "abort_soundness",
            (!acc.contains(&freq) && t.status == SessionStatus::Completed)
                .then(|| "completed with frequencies outside the accepted set".into()),
        );
    }
    out
}
