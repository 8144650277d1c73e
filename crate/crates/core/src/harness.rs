//! Monte Carlo driver: experiment configuration, per-trial seeding,
//! parallel cell execution, count aggregation, CSV output and resume.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{AttackConfig, AttackTarget};
use crate::analytics::{analytic_row, binomial_tail_gt, p_success_exact, p_success_hoeffding, pdf_y, AnalyticParams, AnalyticRow};
use crate::channel::ChannelConfig;
use crate::detection::{detect, CirFeature, DetectionConfig};
use crate::error::{Error, Result};
use crate::phy::{generate_sts, StsCounterState};
use crate::protocol::{
    compute_distance, fnv1a64, run_dstwr, HopTable, ModePolicy, ProtocolConfig, RangingTimestamps, RoundEnv,
    RoundOutcome, SessionState, TrialRecord,
};
use crate::receiver::{leading_edge_detect, CirSpectrum, ReceiverConfig};
use crate::seed;

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_TRIALS: u64 = 2000;
pub const FULL_TRIALS: u64 = 20_000;
/// Caps the worker count when set.
pub const THREADS_ENV: &str = "UWB_HOPGUARD_THREADS";
pub const GRID_HEADER: &str = "sir_db,tsy_us,trials,successes,success_rate,failures,detections";
const RECORD_HEADER: &str = "sir_db,tsy_us,trial,round,seed,mode,distance_m,failure,attack_success,detection,feature_correlation,hop_delay_us,attack_offset_samples";

/// Attacker settings shared by every grid cell; SIR and T_sy come from
/// the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSpec {
    pub enabled: bool,
    pub target: AttackTarget,
    pub framing_sir_db: f64,
    /// Hop delay a guessing attacker adds to the sniffed epoch.
    pub assumed_hop_us: Option<f64>,
}

impl Default for AttackSpec {
    fn default() -> Self {
        let base = AttackConfig::default();
        Self {
            enabled: true,
            target: base.target,
            framing_sir_db: base.framing_sir_db,
            assumed_hop_us: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub config_version: u32,
    pub trial_count: u64,
    /// Consecutive rounds on one session per trial; matters for `auto`.
    pub rounds_per_trial: u64,
    pub master_seed: u64,
    pub snr_db: f64,
    pub sir_db: Vec<f64>,
    pub tsy_us: Vec<f64>,
    pub true_distance_m: f64,
    pub attacker_distance_m: f64,
    pub mode: ModePolicy,
    pub detection_enabled: bool,
    pub attack: AttackSpec,
    pub protocol: ProtocolConfig,
    pub receiver: ReceiverConfig,
    pub detection: DetectionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            trial_count: DEFAULT_TRIALS,
            rounds_per_trial: 1,
            master_seed: 0,
            snr_db: -10.0,
            sir_db: vec![-20.0, -22.0, -24.0, -26.0, -28.0, -30.0],
            tsy_us: (0..11).map(|i| -2.5 + 0.5 * f64::from(i)).collect(),
            true_distance_m: 10.0,
            attacker_distance_m: 1.0,
            mode: ModePolicy::Classic,
            detection_enabled: true,
            attack: AttackSpec::default(),
            protocol: ProtocolConfig::default(),
            receiver: ReceiverConfig::default(),
            detection: DetectionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.config_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        if self.trial_count == 0 || self.rounds_per_trial == 0 {
            return bad("trial_count and rounds_per_trial must be at least 1");
        }
        if self.sir_db.is_empty() || self.tsy_us.is_empty() {
            return bad("sir_db and tsy_us grids must be non-empty");
        }
        if self.sir_db.iter().chain(&self.tsy_us).any(|v| !v.is_finite()) {
            return bad("grid values must be finite");
        }
        if self.snr_db.is_nan() || !(self.true_distance_m > 0.0) || !(self.attacker_distance_m > 0.0) {
            return bad("snr_db must be a number and distances positive");
        }
        self.protocol.validate()?;
        self.receiver.validate()?;
        self.detection.validate()?;
        self.attack_config(self.sir_db[0], self.tsy_us[0]).validate()
    }

    pub fn channel(&self) -> ChannelConfig {
        ChannelConfig {
            distance_m: self.true_distance_m,
            snr_db: self.snr_db,
            attacker_distance_m: self.attacker_distance_m,
            ..ChannelConfig::default()
        }
    }

    pub fn attack_config(&self, sir_db: f64, tsy_us: f64) -> AttackConfig {
        AttackConfig {
            sync_time_s: tsy_us * 1e-6,
            sir_db,
            target: self.attack.target,
            framing_sir_db: self.attack.framing_sir_db,
            assumed_hop_s: self.attack.assumed_hop_us.map(|u| u * 1e-6),
            ..AttackConfig::default()
        }
    }

    pub fn cells(&self) -> Vec<CellKey> {
        self.sir_db
            .iter()
            .flat_map(|&sir_db| self.tsy_us.iter().map(move |&tsy_us| CellKey { sir_db, tsy_us }))
            .collect()
    }

    /// Stable identity of everything that affects results.
    pub fn fingerprint(&self) -> Result<u64> {
        Ok(fnv1a64(self.to_toml()?.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub sir_db: f64,
    pub tsy_us: f64,
}

impl CellKey {
    fn bits(&self) -> (u64, u64) {
        (normalize(self.sir_db).to_bits(), normalize(self.tsy_us).to_bits())
    }
}

fn normalize(v: f64) -> f64 {
    v + 0.0
}

/// Derived from cell values rather than grid positions, so removing a
/// cell leaves every other cell unchanged.
pub fn trial_seed(master: u64, cell: CellKey, trial: u64) -> u64 {
    let (s, t) = cell.bits();
    seed::derive(master, &[s, t, trial])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrialSummary {
    pub success: bool,
    pub failed: bool,
    pub detected: bool,
}

impl TrialSummary {
    fn of(records: &[TrialRecord]) -> Self {
        Self {
            success: records.iter().any(|r| r.attack_success),
            failed: records.iter().any(|r| r.failure.is_some()),
            detected: records.iter().any(|r| r.detection == Some(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub key: CellKey,
    pub trials: u64,
    pub successes: u64,
    pub failures: u64,
    pub detections: u64,
}

impl CellResult {
    fn from_summaries(key: CellKey, s: &[TrialSummary]) -> Self {
        let count = |f: fn(&TrialSummary) -> bool| s.iter().filter(|x| f(x)).count() as u64;
        Self {
            key,
            trials: s.len() as u64,
            successes: count(|x| x.success),
            failures: count(|x| x.failed),
            detections: count(|x| x.detected),
        }
    }

    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    /// `None` uses every available core, capped by `UWB_HOPGUARD_THREADS`.
    Parallel(Option<usize>),
}

impl Execution {
    pub fn threads(&self) -> usize {
        match self {
            Execution::Serial => 1,
            Execution::Parallel(requested) => {
                let available = std::thread::available_parallelism().map_or(1, |n| n.get());
                let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
                requested.unwrap_or(available).min(cap.unwrap_or(usize::MAX)).max(1)
            }
        }
    }
}

/// Owned per-cell pieces a [`RoundEnv`] borrows.
struct Prepared {
    channel: ChannelConfig,
    table: HopTable,
    attack: Option<AttackConfig>,
}

impl Prepared {
    fn new(cfg: &ExperimentConfig, cell: Option<CellKey>) -> Result<Self> {
        Ok(Self {
            channel: cfg.channel(),
            table: cfg.protocol.hop_table()?,
            attack: cell.filter(|_| cfg.attack.enabled).map(|c| cfg.attack_config(c.sir_db, c.tsy_us)),
        })
    }

    fn env<'a>(&'a self, cfg: &'a ExperimentConfig, keep_cir: bool) -> RoundEnv<'a> {
        RoundEnv {
            protocol: &cfg.protocol,
            hop_table: &self.table,
            channel: &self.channel,
            receiver: &cfg.receiver,
            attack: self.attack.as_ref(),
            detection: cfg.detection_enabled.then_some(&cfg.detection),
            keep_cir,
        }
    }
}

/// Fresh session pair with key and counter drawn from the trial seed.
pub fn session_pair(cfg: &ExperimentConfig, trial_seed: u64) -> (SessionState, SessionState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(trial_seed, &[0]));
    let key: [u8; 16] = rng.random();
    let counter = u128::from(rng.random::<u32>());
    SessionState::pair(key, counter, cfg.protocol.packet.sts_pulses(), cfg.mode)
}

/// All rounds of one trial.
pub fn run_trial(cfg: &ExperimentConfig, cell: CellKey, trial: u64) -> Result<Vec<TrialRecord>> {
    let prepared = Prepared::new(cfg, Some(cell))?;
    run_trial_with(cfg, &prepared, cell, trial)
}

fn run_trial_with(cfg: &ExperimentConfig, prepared: &Prepared, cell: CellKey, trial: u64) -> Result<Vec<TrialRecord>> {
    let env = prepared.env(cfg, false);
    let ts = trial_seed(cfg.master_seed, cell, trial);
    let (mut init, mut resp) = session_pair(cfg, ts);
    (0..cfg.rounds_per_trial)
        .map(|r| run_dstwr(&mut init, &mut resp, &env, trial, seed::derive(ts, &[r + 1])).map(|o| o.record))
        .collect()
}

/// One verbose round; `cell = None` runs without an attacker.
pub fn single_round(cfg: &ExperimentConfig, cell: Option<CellKey>, trial: u64, keep_cir: bool) -> Result<RoundOutcome> {
    let prepared = Prepared::new(cfg, cell)?;
    let env = prepared.env(cfg, keep_cir);
    let key = cell.unwrap_or(CellKey { sir_db: f64::INFINITY, tsy_us: 0.0 });
    let ts = trial_seed(cfg.master_seed, key, trial);
    let (mut init, mut resp) = session_pair(cfg, ts);
    run_dstwr(&mut init, &mut resp, &env, trial, seed::derive(ts, &[1]))
}

/// Every trial of one cell, ordered by trial index.
pub fn run_cell(cfg: &ExperimentConfig, cell: CellKey, exec: Execution) -> Result<Vec<Vec<TrialRecord>>> {
    let prepared = Prepared::new(cfg, Some(cell))?;
    let one = |t: u64| run_trial_with(cfg, &prepared, cell, t);
    match exec {
        Execution::Serial => (0..cfg.trial_count).map(one).collect(),
        Execution::Parallel(_) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(exec.threads())
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| (0..cfg.trial_count).into_par_iter().map(one).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
    /// Cells restored from an existing records file.
    pub resumed: usize,
}

/// Run the whole grid. With `records`, per-round records are appended
/// cell by cell; an existing file from the same configuration is resumed.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution, records: Option<&Path>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let fingerprint = cfg.fingerprint()?;
    let mut done = match records {
        Some(path) if path.exists() => load_records(path, fingerprint, cfg.trial_count)?,
        _ => BTreeMap::new(),
    };
    let mut sink = match records {
        Some(path) => Some(open_records(path, fingerprint, &done)?),
        None => None,
    };
    let mut cells = Vec::new();
    let mut resumed = 0;
    for key in cfg.cells() {
        if let Some(summaries) = done.remove(&key.bits()) {
            resumed += 1;
            cells.push(CellResult::from_summaries(key, &summaries));
            continue;
        }
        let trials = run_cell(cfg, key, exec)?;
        if let Some(out) = sink.as_mut() {
            for (t, rounds) in trials.iter().enumerate() {
                for (r, rec) in rounds.iter().enumerate() {
                    write_record(out, key, t as u64, r as u64, rec)?;
                }
            }
            out.flush()?;
        }
        let summaries: Vec<TrialSummary> = trials.iter().map(|t| TrialSummary::of(t)).collect();
        let cell = CellResult::from_summaries(key, &summaries);
        log::info!(
            "cell sir {} dB tsy {} us: {}/{} successes",
            fmt_num(key.sir_db),
            fmt_num(key.tsy_us),
            cell.successes,
            cell.trials
        );
        cells.push(cell);
    }
    Ok(ExperimentResult { cells, resumed })
}

type CellBits = (u64, u64);

fn write_record(out: &mut impl Write, key: CellKey, trial: u64, round: u64, r: &TrialRecord) -> Result<()> {
    let opt = |v: Option<String>| v.unwrap_or_default();
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        fmt_num(key.sir_db),
        fmt_num(key.tsy_us),
        trial,
        round,
        r.seed,
        match r.mode {
            crate::protocol::RangingMode::Classic => "classic",
            crate::protocol::RangingMode::Hopping => "hopping",
        },
        opt(r.distance_m.map(|d| d.to_string())),
        opt(r.failure.map(|f| f.code())),
        u8::from(r.attack_success),
        opt(r.detection.map(|d| d.to_string())),
        opt(r.feature_correlation.map(|c| c.to_string())),
        opt(r.hop_delay_s.map(|h| (h * 1e6).to_string())),
        opt(r.attack_offset_samples.map(|o| o.to_string())),
    )?;
    Ok(())
}

/// Summaries of every complete cell in a records file.
fn load_records(path: &Path, fingerprint: u64, trial_count: u64) -> Result<BTreeMap<CellBits, Vec<TrialSummary>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    if first != fingerprint_line(fingerprint) {
        return Err(Error::Config(format!(
            "{} was produced by a different configuration",
            path.display()
        )));
    }
    let mut cells: BTreeMap<CellBits, BTreeMap<u64, TrialSummary>> = BTreeMap::new();
    for line in lines {
        let line = line?;
        if line.is_empty() || line == RECORD_HEADER {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parse_f = |s: &str| s.parse::<f64>().map_err(|_| Error::Config(format!("bad record line: {line}")));
        let parse_u = |s: &str| s.parse::<u64>().map_err(|_| Error::Config(format!("bad record line: {line}")));
        if f.len() != RECORD_HEADER.split(',').count() {
            return Err(Error::Config(format!("bad record line: {line}")));
        }
        let key = CellKey {
            sir_db: parse_f(f[0])?,
            tsy_us: parse_f(f[1])?,
        };
        let s = cells.entry(key.bits()).or_default().entry(parse_u(f[2])?).or_default();
        s.failed |= !f[7].is_empty();
        s.success |= f[8] == "1";
        s.detected |= f[9] == "1";
    }
    Ok(cells
        .into_iter()
        .filter(|(_, trials)| trials.len() as u64 == trial_count && trials.keys().copied().eq(0..trial_count))
        .map(|(k, trials)| (k, trials.into_values().collect()))
        .collect())
}

/// Rewrite the file keeping only complete cells, then open for appending.
fn open_records(path: &Path, fingerprint: u64, keep: &BTreeMap<CellBits, Vec<TrialSummary>>) -> Result<BufWriter<File>> {
    let kept: Vec<String> = if path.exists() {
        let complete: BTreeSet<CellBits> = keep.keys().copied().collect();
        BufReader::new(File::open(path)?)
            .lines()
            .skip(1)
            .filter_map(|l| l.ok())
            .filter(|l| l != RECORD_HEADER && !l.is_empty())
            .filter(|l| {
                let mut f = l.split(',');
                let key = f.next().zip(f.next()).and_then(|(s, t)| Some(CellKey { sir_db: s.parse().ok()?, tsy_us: t.parse().ok()? }));
                key.is_some_and(|k| complete.contains(&k.bits()))
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", fingerprint_line(fingerprint))?;
    writeln!(out, "{RECORD_HEADER}")?;
    for l in kept {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    let file = out.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    drop(file);
    Ok(BufWriter::new(OpenOptions::new().append(true).open(path)?))
}

fn fingerprint_line(fingerprint: u64) -> String {
    format!("# config {fingerprint:016x}")
}

/// Shortest round-trip formatting with negative zero folded to zero.
pub fn fmt_num(v: f64) -> String {
    normalize(v).to_string()
}

/// Grid CSV. Outside deterministic mode a timestamp comment line leads.
pub fn write_grid_csv(mut out: impl Write, cells: &[CellResult], deterministic: bool) -> Result<()> {
    if !deterministic {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        writeln!(out, "# generated_unix {now}")?;
    }
    writeln!(out, "{GRID_HEADER}")?;
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{:.6},{},{}",
            fmt_num(c.key.sir_db),
            fmt_num(c.key.tsy_us),
            c.trials,
            c.successes,
            c.success_rate(),
            c.failures,
            c.detections
        )?;
    }
    Ok(())
}

/// Inclusive `start:stop:step` (or a single value); the step's sign is
/// taken from the direction of travel.
pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("range `{spec}` must be start:stop:step or a number"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match parts[..] {
        [v] if v.is_finite() => Ok(vec![v]),
        [start, stop, step] if start.is_finite() && stop.is_finite() && step.is_finite() && step != 0.0 => {
            let step = step.abs() * if stop < start { -1.0 } else { 1.0 };
            let count = ((stop - start) / step + 1e-9).floor() as u64 + 1;
            Ok((0..count).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect())
        }
        _ => Err(bad()),
    }
}

pub const ANALYTIC_HEADER: &str = "theta_over_x,exact,bound,windowed,hopped,gain";

pub fn analyze_table(base: &AnalyticParams, theta_over_x: &[f64]) -> Result<Vec<AnalyticRow>> {
    theta_over_x
        .iter()
        .map(|&r| {
            let p = AnalyticParams {
                theta: r * base.x_t,
                ..base.clone()
            };
            p.validate()?;
            Ok(analytic_row(&p))
        })
        .collect()
}

pub fn write_analytic_csv(mut out: impl Write, rows: &[AnalyticRow]) -> Result<()> {
    writeln!(out, "{ANALYTIC_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", fmt_num(r.theta_over_x), r.exact, r.bound, r.windowed, r.hopped, r.gain)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Fast invariant checks across every module.
pub fn selftest() -> Vec<SelftestCheck> {
    let mut out = Vec::new();
    let mut check = |name: &'static str, f: &dyn Fn() -> Result<(bool, String)>| {
        let (passed, detail) = f().unwrap_or_else(|e| (false, e.to_string()));
        out.push(SelftestCheck { name, passed, detail });
    };

    check("sts_deterministic", &|| {
        let s = StsCounterState::new([9; 16], 77, 4096);
        let a = generate_sts(&s)?;
        let mut next = s;
        next.advance();
        let b = generate_sts(&next)?;
        Ok((a == generate_sts(&s)? && a != b, format!("corr(c, c+1) = {:.4}", a.correlation(&b))))
    });

    check("distance_symmetric", &|| {
        let tau = 10.0 / crate::phy::SPEED_OF_LIGHT;
        let d = compute_distance(&RangingTimestamps::symmetric(300e-6, tau))?;
        Ok(((d.meters - 10.0).abs() < 1e-6, format!("{} m", d.meters)))
    });

    check("analytics_bound", &|| {
        let mut ok = true;
        for n in [16u64, 64] {
            for r in 0..=n {
                let p = AnalyticParams { n, theta: r as f64, ..AnalyticParams::default() };
                ok &= p_success_exact(&p) <= p_success_hoeffding(&p);
            }
        }
        let f = pdf_y(&AnalyticParams::default());
        ok &= (f.integral(f.lo, f.hi) - 1.0).abs() < 1e-12;
        ok &= binomial_tail_gt(8, 8.0) == 0.0;
        Ok((ok, "exact <= hoeffding, pdf_Y normalized".into()))
    });

    check("leading_edge_impulse", &|| {
        let mut m = vec![0.0; 801];
        m[400] = 1.0;
        let idx = leading_edge_detect(&CirSpectrum::from_magnitude(m, 0), &ReceiverConfig::default());
        Ok((idx == 400, format!("index {idx}")))
    });

    check("detection_symmetric", &|| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut feat = || CirFeature { values: (0..16).map(|_| rng.random_range(0..256)).collect(), bits: 8, padded: false };
        let ok = (0..200).all(|_| {
            let (a, b) = (feat(), feat());
            detect(&a, &b, 0.95) == detect(&b, &a, 0.95) && detect(&a, &a, 0.95) == 0
        });
        Ok((ok, "200 random pairs".into()))
    });

    check("clean_ranging", &|| {
        let cfg = ExperimentConfig::default();
        let mut worst: f64 = 0.0;
        for t in 0..5 {
            let o = single_round(&cfg, None, t, false)?;
            let d = o.record.distance_m.ok_or_else(|| Error::InvalidParameter(format!("round failed: {:?}", o.record.failure)))?;
            worst = worst.max((d - cfg.true_distance_m).abs());
        }
        Ok((worst <= 0.30, format!("max error {worst:.3} m over 5 rounds")))
    });

    check("hopping_defeats_attack", &|| {
        let cfg = ExperimentConfig { mode: ModePolicy::Hop, ..ExperimentConfig::default() };
        let cell = CellKey { sir_db: -26.0, tsy_us: -1.0 };
        let mut successes = 0;
        let mut agree = true;
        for t in 0..10 {
            let o = single_round(&cfg, Some(cell), t, false)?;
            successes += u32::from(o.record.attack_success);
            agree &= o.record.hop_agree;
        }
        Ok((successes == 0 && agree, format!("{successes} successes over 10 hopped rounds")))
    });

    out
}
