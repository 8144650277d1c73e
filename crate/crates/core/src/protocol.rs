//! DS-TWR on the global sample clock, with counter-synchronized random
//! time hopping of the Response and the classic-to-hopping mode switch.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::adversary::{forge_attack_waveform, schedule_attack, AttackConfig, AttackTarget};
use crate::channel::{inject, propagate, ChannelConfig, RxCapture, RxWindow};
use crate::detection::{detect, extract_feature, feature_correlation, CirFeature, DetectionConfig};
use crate::error::{Error, Result};
use crate::phy::{build_packet, generate_sts, PacketConfig, PacketLayout, StsCounterState, SPEED_OF_LIGHT};
use crate::receiver::{receive_packet, CirSpectrum, ReceiverConfig, Reception, RxFailure};
use crate::seed;

/// DS-TWR intervals in seconds. Leg 1 values are un-hopped; the effective
/// leg 1 adds `hop_s` to both sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangingTimestamps {
    pub round1: f64,
    pub round2: f64,
    pub reply1: f64,
    pub reply2: f64,
    pub hop_s: Option<f64>,
}

impl RangingTimestamps {
    /// Symmetric exchange with reply time `reply` and one-way flight `tau`.
    pub fn symmetric(reply: f64, tau: f64) -> Self {
        Self {
            round1: reply + 2.0 * tau,
            round2: reply + 2.0 * tau,
            reply1: reply,
            reply2: reply,
            hop_s: None,
        }
    }

    /// (T_round1_new, T_reply1_new).
    pub fn leg1(&self) -> (f64, f64) {
        let h = self.hop_s.unwrap_or(0.0);
        (self.round1 + h, self.reply1 + h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceEstimate {
    pub meters: f64,
    /// Negative numerator: physically impossible, returned unclamped.
    pub suspicious: bool,
}

pub fn compute_distance(ts: &RangingTimestamps) -> Result<DistanceEstimate> {
    let (round1, reply1) = ts.leg1();
    let den = round1 + ts.round2 + reply1 + ts.reply2;
    if !(den > 0.0) || !den.is_finite() {
        return Err(Error::InvalidTimestamps(format!("denominator {den} is not positive")));
    }
    let num = round1 * ts.round2 - reply1 * ts.reply2;
    Ok(DistanceEstimate {
        meters: SPEED_OF_LIGHT * num / den,
        suspicious: num < 0.0,
    })
}

/// Admissible hop delays Δt, seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopTable {
    pub entries_s: Vec<f64>,
    pub min_s: f64,
    pub max_s: f64,
}

impl HopTable {
    pub fn new(entries_s: Vec<f64>, min_s: f64, max_s: f64) -> Result<Self> {
        let t = Self { entries_s, min_s, max_s };
        t.validate()?;
        Ok(t)
    }

    /// `count` evenly spaced entries over `[min_s, max_s]`.
    pub fn uniform(min_s: f64, max_s: f64, count: usize) -> Result<Self> {
        let entries = match count {
            0 => vec![],
            1 => vec![min_s],
            n => (0..n).map(|i| min_s + (max_s - min_s) * i as f64 / (n - 1) as f64).collect(),
        };
        Self::new(entries, min_s, max_s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries_s.is_empty() {
            return Err(Error::EmptyHopTable);
        }
        if !(self.min_s >= 0.0 && self.min_s <= self.max_s) {
            return Err(Error::InvalidHopTable(format!("bounds [{}, {}]", self.min_s, self.max_s)));
        }
        if let Some(e) = self.entries_s.iter().find(|e| !(self.min_s..=self.max_s).contains(*e)) {
            return Err(Error::InvalidHopTable(format!("entry {e} outside bounds")));
        }
        let mut sorted = self.entries_s.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidHopTable("duplicate entries".into()));
        }
        Ok(())
    }

    /// Every entry must exceed `span_s`, the STS-to-payload span of an
    /// un-hopped attack frame, so a hopped STS window cannot meet it.
    pub fn check_clearance(&self, span_s: f64) -> Result<()> {
        let min = self.entries_s.iter().copied().fold(f64::INFINITY, f64::min);
        if min < span_s {
            return Err(Error::InvalidHopTable(format!(
                "smallest hop {min:e} s is below the attack span {span_s:e} s"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries_s.is_empty()
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

pub fn select_hop_index(counter: u128, table: &HopTable) -> Result<usize> {
    if table.is_empty() {
        return Err(Error::EmptyHopTable);
    }
    Ok((fnv1a64(&counter.to_be_bytes()) % table.len() as u64) as usize)
}

/// Δt = table[FNV-1a(counter bytes) mod len].
pub fn select_hop_delay(counter: u128, table: &HopTable) -> Result<f64> {
    Ok(table.entries_s[select_hop_index(counter, table)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangingMode {
    Classic,
    Hopping,
}

/// Session-level mode policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModePolicy {
    Classic,
    Hop,
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub role: Role,
    pub sts: StsCounterState,
    pub mode: RangingMode,
    pub auto_switch: bool,
    /// Last detection output S.
    pub detection: u8,
}

impl SessionState {
    pub fn new(role: Role, sts: StsCounterState, policy: ModePolicy) -> Self {
        Self {
            role,
            sts,
            mode: if policy == ModePolicy::Hop { RangingMode::Hopping } else { RangingMode::Classic },
            auto_switch: policy == ModePolicy::Auto,
            detection: 0,
        }
    }

    /// Matched initiator/responder pair sharing key and counter.
    pub fn pair(key: [u8; 16], counter: u128, sts_pulses: usize, policy: ModePolicy) -> (Self, Self) {
        let sts = StsCounterState::new(key, counter, sts_pulses);
        (
            Self::new(Role::Initiator, sts, policy),
            Self::new(Role::Responder, sts, policy),
        )
    }

    /// classic → hopping on S = 1; never back.
    pub fn on_detection(&mut self, s: u8) {
        self.detection = s;
        if s == 1 && self.auto_switch {
            self.mode = RangingMode::Hopping;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Nominal (un-hopped) reply time R.
    pub reply_time_s: f64,
    pub success_threshold_m: f64,
    pub hop_min_us: f64,
    pub hop_max_us: f64,
    pub hop_entries: usize,
    /// Also hop the Final (leg 2).
    pub hop_final: bool,
    /// Preamble symbols a receiver digitizes ahead of the SFD.
    pub lead_symbols: usize,
    /// Bounds the arrival uncertainty a receive window must cover.
    pub max_range_m: f64,
    pub packet: PacketConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            reply_time_s: 300e-6,
            success_threshold_m: 5.0,
            hop_min_us: 15.0,
            hop_max_us: 20.0,
            hop_entries: 32,
            hop_final: false,
            lead_symbols: 16,
            max_range_m: 150.0,
            packet: PacketConfig::legitimate(),
        }
    }
}

impl ProtocolConfig {
    pub fn hop_table(&self) -> Result<HopTable> {
        HopTable::uniform(self.hop_min_us * 1e-6, self.hop_max_us * 1e-6, self.hop_entries)
    }

    pub fn validate(&self) -> Result<()> {
        self.packet.validate()?;
        if !(self.reply_time_s > 0.0) || !(self.success_threshold_m > 0.0) || !(self.max_range_m > 0.0) {
            return Err(Error::Config("reply time, success threshold and max range must be positive".into()));
        }
        if self.lead_symbols < 5 {
            return Err(Error::Config("lead_symbols must be at least 5".into()));
        }
        self.hop_table()?;
        Ok(())
    }

    fn reply_samples(&self) -> i64 {
        (self.reply_time_s * self.packet.sample_rate()).round() as i64
    }
}

/// Everything a round needs besides the two sessions.
#[derive(Debug, Clone, Copy)]
pub struct RoundEnv<'a> {
    pub protocol: &'a ProtocolConfig,
    pub hop_table: &'a HopTable,
    pub channel: &'a ChannelConfig,
    pub receiver: &'a ReceiverConfig,
    pub attack: Option<&'a AttackConfig>,
    pub detection: Option<&'a DetectionConfig>,
    /// Keep CIR traces in the outcome.
    pub keep_cir: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Message {
    Poll,
    Response,
    Final,
}

impl Message {
    pub fn name(&self) -> &'static str {
        match self {
            Message::Poll => "poll",
            Message::Response => "response",
            Message::Final => "final",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundFailure {
    Reception(Message, RxFailure),
    /// Final payload did not parse.
    Payload,
    Timestamps,
}

impl RoundFailure {
    pub fn code(&self) -> String {
        match self {
            RoundFailure::Reception(m, f) => format!("{}_{}", m.name(), f.code()),
            RoundFailure::Payload => "payload".into(),
            RoundFailure::Timestamps => "timestamps".into(),
        }
    }
}

/// One DS-TWR round.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub mode: RangingMode,
    pub distance_m: Option<f64>,
    pub failure: Option<RoundFailure>,
    pub attack_success: bool,
    pub detection: Option<u8>,
    /// Correlation between the two sides' CIR features.
    pub feature_correlation: Option<f64>,
    pub hop_delay_s: Option<f64>,
    /// Initiator and responder selected the same Δt.
    pub hop_agree: bool,
    /// Attack STS arrival minus legitimate STS arrival at the victim, samples.
    pub attack_offset_samples: Option<i64>,
    pub attack_missed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub message: Message,
    pub counter: u128,
    pub tx_rmarker: i64,
    pub true_rx_rmarker: i64,
    pub est_rx_rmarker: Option<i64>,
    pub hop_samples: i64,
}

pub fn write_trace_csv<W: Write>(mut out: W, events: &[TraceEvent]) -> std::io::Result<()> {
    writeln!(out, "message,counter,tx_rmarker,true_rx_rmarker,est_rx_rmarker,hop_samples")?;
    for e in events {
        let est = e.est_rx_rmarker.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.message.name(),
            e.counter,
            e.tx_rmarker,
            e.true_rx_rmarker,
            est,
            e.hop_samples
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub record: TrialRecord,
    pub trace: Vec<TraceEvent>,
    /// (message, trace, trace index of the nominal STS start).
    pub cirs: Vec<(Message, CirSpectrum, usize)>,
}

const FINAL_TIMESTAMP_BYTES: usize = 8;

/// Global-clock interval covering `lead_symbols` preamble symbols ahead of
/// the SFD through the frame end, for a packet whose RMARKER would arrive
/// at `expected_rmarker` over zero distance.
pub fn rx_window(expected_rmarker: i64, layout: &PacketLayout, pkt: &PacketConfig, proto: &ProtocolConfig) -> RxWindow {
    let sym = pkt.preamble_symbol_chips() * pkt.samples_per_pulse;
    let rmarker = layout.sample_of(layout.rmarker);
    let pre = rmarker - layout.sample_of(layout.sfd_start) + proto.lead_symbols * sym;
    let post = layout.total_samples() - rmarker;
    let guard = 2 * ChannelConfig::delay_samples(proto.max_range_m, pkt.sample_rate()) as usize;
    RxWindow {
        start: expected_rmarker - pre as i64,
        len: pre + post + guard,
    }
}

struct Leg {
    reception: Reception,
    true_rmarker: i64,
    capture_truth_offset: Option<i64>,
    attack_missed: bool,
}

/// Transmit one message with its RMARKER at `tx_rmarker` and receive it
/// over `window`, optionally under attack.
#[allow(clippy::too_many_arguments)]
fn leg(
    env: &RoundEnv,
    sender: &SessionState,
    receiver: &SessionState,
    payload: &[u8],
    tx_rmarker: i64,
    expected_rmarker: i64,
    attack_epoch: Option<i64>,
    seed: u64,
) -> Result<Leg> {
    let pkt = &env.protocol.packet;
    let sts = generate_sts(&sender.sts)?;
    let packet = build_packet(pkt, &sts, payload)?;
    let layout = packet.layout;
    let origin = tx_rmarker - layout.sample_of(layout.rmarker) as i64;
    let window = rx_window(expected_rmarker, &layout, pkt, env.protocol);
    let mut cap: RxCapture = propagate(&packet, origin, env.channel, Some(window), seed::derive(seed, &[1]));
    let mut offset = None;
    let mut missed = false;
    if let (Some(atk), Some(epoch)) = (env.attack, attack_epoch) {
        let forged = forge_attack_waveform(atk, seed::derive(seed, &[2]))?;
        let al = forged.layout;
        let atk_origin = epoch - al.sample_of(al.rmarker) as i64;
        cap = inject(cap, &forged, atk.sir_db, atk_origin, env.channel.attacker_distance_m);
        let arrival = cap.truth.attack_arrival.unwrap_or(atk_origin);
        offset = Some(arrival + al.sample_of(al.sts_start) as i64 - cap.truth.legit_sts_start());
        missed = cap.truth.attack_missed;
    }
    let template = generate_sts(&receiver.sts)?;
    let reception = receive_packet(&cap, &template, pkt, env.receiver);
    Ok(Leg {
        reception,
        true_rmarker: cap.truth.legit_rmarker(),
        capture_truth_offset: offset,
        attack_missed: missed,
    })
}

/// Run Poll → Response → Final. Both counters advance by one per expected
/// message whether or not it was received, so they stay equal after
/// aborted rounds.
pub fn run_dstwr(
    initiator: &mut SessionState,
    responder: &mut SessionState,
    env: &RoundEnv,
    trial: u64,
    seed: u64,
) -> Result<RoundOutcome> {
    if initiator.sts.counter != responder.sts.counter || initiator.sts.key != responder.sts.key {
        return Err(Error::InvalidParameter("sessions are not synchronized".into()));
    }
    let proto = env.protocol;
    let fs = proto.packet.sample_rate();
    let reply = proto.reply_samples();
    let hopping = initiator.mode == RangingMode::Hopping;
    let start_counter = initiator.sts.counter;
    let hop_samples = |counter: u128| -> Result<i64> {
        Ok((select_hop_delay(counter, env.hop_table)? * fs).round() as i64)
    };
    let mut record = TrialRecord {
        trial,
        seed,
        mode: initiator.mode,
        distance_m: None,
        failure: None,
        attack_success: false,
        detection: None,
        feature_correlation: None,
        hop_delay_s: None,
        hop_agree: true,
        attack_offset_samples: None,
        attack_missed: false,
    };
    let mut trace = Vec::new();
    let mut cirs = Vec::new();
    let finish = |initiator: &mut SessionState, responder: &mut SessionState| {
        while initiator.sts.counter != start_counter.wrapping_add(3) {
            initiator.sts.advance();
            responder.sts.advance();
        }
    };
    let keep = |m: Message, rx: &Reception, cirs: &mut Vec<(Message, CirSpectrum, usize)>| {
        if env.keep_cir {
            if let Some(c) = &rx.cir {
                cirs.push((m, c.clone(), rx.nominal_index));
            }
        }
    };
    let target = env.attack.map(|a| a.target);

    // Poll.
    let t0 = 0i64;
    let poll = leg(env, initiator, responder, &[], t0, t0, None, seed::derive(seed, &[10]))?;
    keep(Message::Poll, &poll.reception, &mut cirs);
    trace.push(TraceEvent {
        message: Message::Poll,
        counter: initiator.sts.counter,
        tx_rmarker: t0,
        true_rx_rmarker: poll.true_rmarker,
        est_rx_rmarker: poll.reception.is_valid().then_some(poll.reception.rmarker_sample),
        hop_samples: 0,
    });
    initiator.sts.advance();
    responder.sts.advance();

    // Both sides select Δt from the counter at the Response step.
    let (hop_i, hop_r) = if hopping {
        (hop_samples(initiator.sts.counter)?, hop_samples(responder.sts.counter)?)
    } else {
        (0, 0)
    };
    record.hop_agree = hop_i == hop_r;
    if hopping {
        record.hop_delay_s = Some(select_hop_delay(responder.sts.counter, env.hop_table)?);
    }
    if !poll.reception.is_valid() {
        record.failure = Some(RoundFailure::Reception(Message::Poll, poll.reception.payload.unwrap_err()));
        finish(initiator, responder);
        return Ok(RoundOutcome { record, trace, cirs });
    }
    let r0 = poll.reception.rmarker_sample;

    // Response, delayed by Δt in hopping mode. The attacker only knows
    // the un-hopped epoch.
    let t1 = r0 + reply + hop_r;
    let atk_epoch = env.attack.filter(|_| target == Some(AttackTarget::Response)).map(|a| schedule_attack(r0 + reply, a, fs));
    let resp = leg(env, responder, initiator, &[], t1, t0 + reply + hop_i, atk_epoch, seed::derive(seed, &[11]))?;
    keep(Message::Response, &resp.reception, &mut cirs);
    trace.push(TraceEvent {
        message: Message::Response,
        counter: responder.sts.counter,
        tx_rmarker: t1,
        true_rx_rmarker: resp.true_rmarker,
        est_rx_rmarker: resp.reception.is_valid().then_some(resp.reception.rmarker_sample),
        hop_samples: hop_r,
    });
    if atk_epoch.is_some() {
        record.attack_offset_samples = resp.capture_truth_offset;
        record.attack_missed = resp.attack_missed;
    }
    initiator.sts.advance();
    responder.sts.advance();
    if !resp.reception.is_valid() {
        record.failure = Some(RoundFailure::Reception(Message::Response, resp.reception.payload.unwrap_err()));
        finish(initiator, responder);
        return Ok(RoundOutcome { record, trace, cirs });
    }
    let r1 = resp.reception.rmarker_sample;

    // Final carries the initiator's timestamps and CIR feature.
    let (hop2_i, hop2_r) = if hopping && proto.hop_final {
        (hop_samples(initiator.sts.counter)?, hop_samples(responder.sts.counter)?)
    } else {
        (0, 0)
    };
    record.hop_agree &= hop2_i == hop2_r;
    let t2 = r1 + reply + hop2_i;
    let round1_meas = r1 - t0;
    let reply2_meas = t2 - r1;
    let mut payload = Vec::with_capacity(FINAL_TIMESTAMP_BYTES + 32);
    for v in [round1_meas, reply2_meas] {
        let Ok(v) = u32::try_from(v) else {
            record.failure = Some(RoundFailure::Timestamps);
            finish(initiator, responder);
            return Ok(RoundOutcome { record, trace, cirs });
        };
        payload.extend_from_slice(&v.to_be_bytes());
    }
    if let (Some(det), Some(cir)) = (env.detection, resp.reception.cir.as_ref()) {
        payload.extend(extract_feature(cir, &resp.reception.toa, det).to_bytes());
    }
    let atk_epoch = env.attack.filter(|_| target == Some(AttackTarget::Final)).map(|a| schedule_attack(r1 + reply, a, fs));
    let fin = leg(env, initiator, responder, &payload, t2, t1 + reply + hop2_r, atk_epoch, seed::derive(seed, &[12]))?;
    keep(Message::Final, &fin.reception, &mut cirs);
    trace.push(TraceEvent {
        message: Message::Final,
        counter: initiator.sts.counter,
        tx_rmarker: t2,
        true_rx_rmarker: fin.true_rmarker,
        est_rx_rmarker: fin.reception.is_valid().then_some(fin.reception.rmarker_sample),
        hop_samples: hop2_i,
    });
    if atk_epoch.is_some() {
        record.attack_offset_samples = fin.capture_truth_offset;
        record.attack_missed = fin.attack_missed;
    }
    initiator.sts.advance();
    responder.sts.advance();
    let body = match &fin.reception.payload {
        Ok(b) => b.clone(),
        Err(f) => {
            record.failure = Some(RoundFailure::Reception(Message::Final, *f));
            return Ok(RoundOutcome { record, trace, cirs });
        }
    };
    let feature_len = env.detection.map_or(0, |d| d.feature_bytes());
    if body.len() != FINAL_TIMESTAMP_BYTES + feature_len {
        record.failure = Some(RoundFailure::Payload);
        return Ok(RoundOutcome { record, trace, cirs });
    }
    let round1_rx = i64::from(u32::from_be_bytes(body[0..4].try_into().expect("4 bytes")));
    let reply2_rx = i64::from(u32::from_be_bytes(body[4..8].try_into().expect("4 bytes")));
    let r2 = fin.reception.rmarker_sample;
    let s = |samples: i64| samples as f64 / fs;
    let ts = RangingTimestamps {
        round1: s(round1_rx - hop_r),
        round2: s(r2 - t1),
        reply1: s(t1 - r0 - hop_r),
        reply2: s(reply2_rx),
        hop_s: hopping.then_some(s(hop_r)),
    };
    match compute_distance(&ts) {
        Ok(d) => {
            record.distance_m = Some(d.meters);
            record.attack_success = d.meters < proto.success_threshold_m;
        }
        Err(_) => record.failure = Some(RoundFailure::Timestamps),
    }
    if let (Some(det), Some(cir)) = (env.detection, fin.reception.cir.as_ref()) {
        let remote = CirFeature::from_bytes(&body[FINAL_TIMESTAMP_BYTES..], det)?;
        let local = extract_feature(cir, &fin.reception.toa, det);
        let s = detect(&local, &remote, det.gamma);
        record.detection = Some(s);
        record.feature_correlation = Some(feature_correlation(&local, &remote));
        initiator.on_detection(s);
        responder.on_detection(s);
    }
    Ok(RoundOutcome { record, trace, cirs })
}
