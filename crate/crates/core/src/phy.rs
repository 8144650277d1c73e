//! Transmit-side physical layer: STS generation, pulse shaping and packet
//! assembly (SYNC | SFD | gap | STS | gap | PHR + payload).
//!
//! All positions are counted in chips at 499.2 MHz; each chip spans
//! `samples_per_pulse` samples. A pulse emitted at chip `c` is centered on
//! sample `c * samples_per_pulse + PulseShape::center()`.

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHIP_RATE_HZ: f64 = 499.2e6;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const MAX_STS_PULSES: usize = 4096;
/// One STS "length unit" carries 64 pulses (512 chips in the standard).
pub const STS_PULSES_PER_UNIT: usize = 64;
/// Silent gap before and after the STS: 128 periods of the L=4 pulse grid.
pub const STS_GAP_CHIPS: usize = 512;
pub const PREAMBLE_CODE_LEN: usize = 127;
pub const SFD_SYMBOLS: usize = 8;
/// Data symbol: two BPM halves of 64 chips; the burst fills one half.
pub const DATA_SYMBOL_CHIPS: usize = 128;
pub const DATA_BURST_CHIPS: usize = 64;
pub const PHR_BYTES: usize = 2;
pub const CRC_BYTES: usize = 2;

const CRC16: crc::Crc<u16> = crc::Crc::<u16>::new(&crc::CRC_16_KERMIT);

pub fn crc16(bytes: &[u8]) -> u16 {
    CRC16.checksum(bytes)
}

/// STS key and counter ("STS Data") shared by both ranging endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StsCounterState {
    pub key: [u8; 16],
    pub counter: u128,
    pub segment_length: usize,
}

impl StsCounterState {
    pub fn new(key: [u8; 16], counter: u128, segment_length: usize) -> Self {
        Self {
            key,
            counter,
            segment_length,
        }
    }

    pub fn advance(&mut self) {
        self.counter = self.counter.wrapping_add(1);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StsSequence {
    pub codes: Vec<i8>,
    pub source_counter: u128,
}

impl StsSequence {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Normalized correlation at zero lag.
    pub fn correlation(&self, other: &StsSequence) -> f64 {
        let n = self.codes.len().min(other.codes.len());
        if n == 0 {
            return 0.0;
        }
        let s: i64 = self
            .codes
            .iter()
            .zip(&other.codes)
            .map(|(&a, &b)| i64::from(a) * i64::from(b))
            .sum();
        s as f64 / n as f64
    }
}

/// AES-128 counter-mode STS generator. Block `j` encrypts `counter + j`
/// (big-endian); keystream bits are read MSB first, 0 -> +1 and 1 -> -1.
/// The caller's counter is not modified.
pub fn generate_sts(state: &StsCounterState) -> Result<StsSequence> {
    let n = state.segment_length;
    if n == 0 || n > MAX_STS_PULSES {
        return Err(Error::StsLength(n));
    }
    let cipher = Aes128::new(GenericArray::from_slice(&state.key));
    let mut codes = Vec::with_capacity(n);
    let blocks = n.div_ceil(128);
    for j in 0..blocks {
        let mut block = GenericArray::clone_from_slice(
            &state.counter.wrapping_add(j as u128).to_be_bytes(),
        );
        cipher.encrypt_block(&mut block);
        for byte in block.iter() {
            for bit in (0..8).rev() {
                if codes.len() == n {
                    break;
                }
                codes.push(if (byte >> bit) & 1 == 0 { 1 } else { -1 });
            }
        }
    }
    Ok(StsSequence {
        codes,
        source_counter: state.counter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacketRole {
    Legitimate,
    Attack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PacketConfig {
    pub preamble_code_index: u8,
    pub preamble_spreading_factor: usize,
    pub preamble_symbol_repetitions: usize,
    pub sfd_index: u8,
    /// STS length in units of 64 pulses; 64 units give N = 4096.
    pub sts_segment_length: usize,
    pub sts_pulse_spacing_chips: usize,
    pub payload_bytes: usize,
    pub samples_per_pulse: usize,
    pub role: PacketRole,
}

impl Default for PacketConfig {
    fn default() -> Self {
        Self::legitimate()
    }
}

impl PacketConfig {
    pub fn legitimate() -> Self {
        Self {
            preamble_code_index: 9,
            preamble_spreading_factor: 4,
            preamble_symbol_repetitions: 64,
            sfd_index: 0,
            sts_segment_length: 64,
            sts_pulse_spacing_chips: 1,
            payload_bytes: 32,
            samples_per_pulse: 4,
            role: PacketRole::Legitimate,
        }
    }

    pub fn attack() -> Self {
        Self {
            preamble_spreading_factor: 9,
            role: PacketRole::Attack,
            ..Self::legitimate()
        }
    }

    /// Number of STS pulses N.
    pub fn sts_pulses(&self) -> usize {
        self.sts_segment_length * STS_PULSES_PER_UNIT
    }

    pub fn sample_rate(&self) -> f64 {
        CHIP_RATE_HZ * self.samples_per_pulse as f64
    }

    pub fn preamble_symbol_chips(&self) -> usize {
        PREAMBLE_CODE_LEN * self.preamble_spreading_factor
    }

    pub fn validate(&self) -> Result<()> {
        preamble_code(self.preamble_code_index)?;
        sfd_pattern(self.sfd_index)?;
        let n = self.sts_pulses();
        if n == 0 || n > MAX_STS_PULSES {
            return Err(Error::StsLength(n));
        }
        if self.preamble_spreading_factor == 0
            || self.samples_per_pulse == 0
            || self.sts_pulse_spacing_chips == 0
            || self.preamble_symbol_repetitions == 0
        {
            return Err(Error::Config(
                "spreading factor, repetitions, pulse spacing and samples per pulse must be > 0"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn layout(&self, payload_len: usize) -> PacketLayout {
        let sym = self.preamble_symbol_chips();
        let preamble_start = 0;
        let sfd_start = preamble_start + self.preamble_symbol_repetitions * sym;
        let rmarker = sfd_start + SFD_SYMBOLS * sym;
        let sts_start = rmarker + STS_GAP_CHIPS;
        let sts_end = sts_start + self.sts_pulses() * self.sts_pulse_spacing_chips;
        let data_start = sts_end + STS_GAP_CHIPS;
        let data_bits = 8 * (PHR_BYTES + payload_len + CRC_BYTES);
        let end = data_start + data_bits.div_ceil(2) * DATA_SYMBOL_CHIPS;
        PacketLayout {
            samples_per_chip: self.samples_per_pulse,
            preamble_start,
            sfd_start,
            rmarker,
            sts_start,
            sts_end,
            data_start,
            end,
        }
    }
}

/// Segment boundaries of one packet, in chips from the packet start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketLayout {
    pub samples_per_chip: usize,
    pub preamble_start: usize,
    pub sfd_start: usize,
    /// End of SFD; the transmit/receive timestamp reference.
    pub rmarker: usize,
    pub sts_start: usize,
    pub sts_end: usize,
    pub data_start: usize,
    pub end: usize,
}

impl PacketLayout {
    /// Sample index of the pulse center of chip `chip`.
    pub fn sample_of(&self, chip: usize) -> usize {
        chip * self.samples_per_chip + PulseShape::HALF_SUPPORT_CHIPS * self.samples_per_chip
    }

    pub fn total_samples(&self) -> usize {
        self.end * self.samples_per_chip + 2 * PulseShape::HALF_SUPPORT_CHIPS * self.samples_per_chip
    }

    /// Sample ranges inside the two STS gaps that no pulse tail reaches.
    pub fn silent_gaps(&self) -> [std::ops::Range<usize>; 2] {
        let spc = self.samples_per_chip;
        let half = PulseShape::HALF_SUPPORT_CHIPS * spc;
        // The last pulse before each gap sits one chip before it.
        let before = (self.sample_of(self.rmarker - 1) + half)..(self.sample_of(self.sts_start) - half);
        let after = (self.sample_of(self.sts_end - 1) + half)..(self.sample_of(self.data_start) - half);
        [before, after]
    }
}

/// Root-raised-cosine pulse (roll-off 0.5, 8-chip support), unit energy.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseShape {
    pub taps: Vec<f64>,
    pub samples_per_pulse: usize,
    pub symbol_duration: f64,
    pub unit_power: bool,
}

impl PulseShape {
    pub const ROLL_OFF: f64 = 0.5;
    pub const SUPPORT_CHIPS: usize = 8;
    pub const HALF_SUPPORT_CHIPS: usize = 4;

    pub fn root_raised_cosine(samples_per_pulse: usize) -> Self {
        let beta = Self::ROLL_OFF;
        let len = samples_per_pulse * Self::SUPPORT_CHIPS;
        let center = (len / 2) as f64;
        let mut taps: Vec<f64> = (0..len)
            .map(|k| rrc((k as f64 - center) / samples_per_pulse as f64, beta))
            .collect();
        let energy: f64 = taps.iter().map(|t| t * t).sum();
        let scale = energy.sqrt().recip();
        taps.iter_mut().for_each(|t| *t *= scale);
        Self {
            taps,
            samples_per_pulse,
            symbol_duration: 1.0 / CHIP_RATE_HZ,
            unit_power: true,
        }
    }

    /// Tap index aligned with the pulse peak.
    pub fn center(&self) -> usize {
        self.taps.len() / 2
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }

    /// Pulse autocorrelation at integer sample lag.
    pub fn autocorrelation(&self, lag: isize) -> f64 {
        let n = self.taps.len() as isize;
        (0..n)
            .filter_map(|i| {
                let j = i + lag;
                (0..n).contains(&j).then(|| self.taps[i as usize] * self.taps[j as usize])
            })
            .sum()
    }
}

fn rrc(t: f64, beta: f64) -> f64 {
    use std::f64::consts::PI;
    if t.abs() < 1e-12 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    if ((4.0 * beta * t).abs() - 1.0).abs() < 1e-12 {
        let a = PI / (4.0 * beta);
        return beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

/// Complex baseband samples on the global sample grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    /// Global sample index of `samples[0]`.
    pub origin_sample: i64,
}

impl Waveform {
    pub fn origin_time(&self) -> f64 {
        self.origin_sample as f64 / self.sample_rate
    }

    pub fn time_of(&self, k: usize) -> f64 {
        (self.origin_sample + k as i64) as f64 / self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self, range: std::ops::Range<usize>) -> f64 {
        let n = range.len().max(1) as f64;
        self.samples[range].iter().map(|s| s.norm_sqr()).sum::<f64>() / n
    }
}

/// A built packet: pulse list plus layout. Rendering is lazy so long
/// preambles only cost samples where a receiver actually listens.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub pulses: Vec<(usize, f64)>,
    pub layout: PacketLayout,
    pub shape: PulseShape,
    pub sample_rate: f64,
}

impl Packet {
    pub fn len(&self) -> usize {
        self.layout.total_samples()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    /// Sample range covering the STS pulses (pulse centers).
    pub fn sts_range(&self) -> std::ops::Range<usize> {
        self.layout.sample_of(self.layout.sts_start)..self.layout.sample_of(self.layout.sts_end)
    }

    /// Full waveform with origin at global sample 0.
    pub fn waveform(&self) -> Waveform {
        let mut samples = vec![Complex64::new(0.0, 0.0); self.len()];
        self.render_into(&mut samples, 0, 1.0);
        Waveform {
            samples,
            sample_rate: self.sample_rate,
            origin_sample: 0,
        }
    }

    /// Add `gain` times the packet into `buf`, where `buf[0]` is packet
    /// sample `offset`.
    pub fn render_into(&self, buf: &mut [Complex64], offset: i64, gain: f64) {
        render_pulses(buf, &self.pulses, &self.shape, &self.layout, offset, gain);
    }

    /// Mean power over the STS segment.
    pub fn sts_power(&self) -> f64 {
        let r = self.sts_range();
        let mut buf = vec![Complex64::new(0.0, 0.0); r.len()];
        let (lo, hi) = (self.layout.sts_start, self.layout.sts_end);
        let sts: Vec<(usize, f64)> = self
            .pulses
            .iter()
            .copied()
            .filter(|&(c, _)| c + PulseShape::HALF_SUPPORT_CHIPS >= lo && c < hi + PulseShape::HALF_SUPPORT_CHIPS)
            .collect();
        render_pulses(&mut buf, &sts, &self.shape, &self.layout, r.start as i64, 1.0);
        buf.iter().map(|s| s.norm_sqr()).sum::<f64>() / r.len().max(1) as f64
    }

    /// Scale every pulse whose chip index lies in `chips`.
    pub fn scale_chips(&mut self, chips: std::ops::Range<usize>, gain: f64) {
        for (c, a) in &mut self.pulses {
            if chips.contains(c) {
                *a *= gain;
            }
        }
    }
}

/// Length-127 binary maximal-length code (x^7 + x^6 + 1) used as the
/// preamble code for index 9.
pub fn preamble_code(index: u8) -> Result<Vec<i8>> {
    if index != 9 {
        return Err(Error::UnsupportedCodeIndex(index));
    }
    let mut state: u8 = 0x7f;
    Ok((0..PREAMBLE_CODE_LEN)
        .map(|_| {
            let out = state & 1;
            let fb = ((state >> 6) ^ (state >> 5)) & 1;
            state = ((state << 1) | fb) & 0x7f;
            if out == 0 {
                1
            } else {
                -1
            }
        })
        .collect())
}

pub fn sfd_pattern(index: u8) -> Result<[i8; SFD_SYMBOLS]> {
    match index {
        0 => Ok([0, 1, 0, -1, 1, 0, 0, -1]),
        other => Err(Error::UnsupportedSfd(other)),
    }
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1))
        .collect()
}

pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1)))
        .collect()
}

/// PHR (payload length, big-endian) + payload + CRC-16 over both.
pub fn frame_bytes(payload: &[u8]) -> Vec<u8> {
    let mut frame = Vec::with_capacity(PHR_BYTES + payload.len() + CRC_BYTES);
    frame.extend_from_slice(&(payload.len() as u16).to_be_bytes());
    frame.extend_from_slice(payload);
    let crc = crc16(&frame);
    frame.extend_from_slice(&crc.to_be_bytes());
    frame
}

/// Pulse list of a packet: (chip index, amplitude).
pub fn packet_pulses(cfg: &PacketConfig, sts: &StsSequence, payload: &[u8]) -> Result<Vec<(usize, f64)>> {
    cfg.validate()?;
    if payload.len() > cfg.payload_bytes {
        return Err(Error::PayloadCapacity {
            len: payload.len(),
            capacity: cfg.payload_bytes,
        });
    }
    if sts.len() != cfg.sts_pulses() {
        return Err(Error::StsMismatch {
            expected: cfg.sts_pulses(),
            got: sts.len(),
        });
    }
    let layout = cfg.layout(payload.len());
    let code = preamble_code(cfg.preamble_code_index)?;
    let sfd = sfd_pattern(cfg.sfd_index)?;
    let sf = cfg.preamble_spreading_factor;
    let sym = cfg.preamble_symbol_chips();
    let mut pulses = Vec::new();

    let emit_symbol = |start: usize, sign: f64, pulses: &mut Vec<(usize, f64)>| {
        for (j, &c) in code.iter().enumerate() {
            if c != 0 {
                pulses.push((start + j * sf, sign * f64::from(c)));
            }
        }
    };
    for s in 0..cfg.preamble_symbol_repetitions {
        emit_symbol(layout.preamble_start + s * sym, 1.0, &mut pulses);
    }
    for (s, &v) in sfd.iter().enumerate() {
        if v != 0 {
            emit_symbol(layout.sfd_start + s * sym, f64::from(v), &mut pulses);
        }
    }
    for (i, &a) in sts.codes.iter().enumerate() {
        pulses.push((layout.sts_start + i * cfg.sts_pulse_spacing_chips, f64::from(a)));
    }
    let bits = bytes_to_bits(&frame_bytes(payload));
    for (k, pair) in bits.chunks(2).enumerate() {
        let half = usize::from(pair[0]);
        let polarity = if pair.get(1).copied().unwrap_or(0) == 0 { 1.0 } else { -1.0 };
        let start = layout.data_start + k * DATA_SYMBOL_CHIPS + half * DATA_SYMBOL_CHIPS / 2;
        pulses.extend((0..DATA_BURST_CHIPS).map(|c| (start + c, polarity)));
    }
    Ok(pulses)
}

/// Assemble a packet: preamble, SFD, gap, STS, gap, PHR + payload + CRC.
pub fn build_packet(cfg: &PacketConfig, sts: &StsSequence, payload: &[u8]) -> Result<Packet> {
    let pulses = packet_pulses(cfg, sts, payload)?;
    Ok(Packet {
        pulses,
        layout: cfg.layout(payload.len()),
        shape: PulseShape::root_raised_cosine(cfg.samples_per_pulse),
        sample_rate: cfg.sample_rate(),
    })
}

/// Add `gain * pulse` for each pulse into `buf`, where `buf[0]` corresponds
/// to packet sample `offset`. Pulses outside the buffer are skipped.
pub fn render_pulses(
    buf: &mut [Complex64],
    pulses: &[(usize, f64)],
    shape: &PulseShape,
    layout: &PacketLayout,
    offset: i64,
    gain: f64,
) {
    let c = shape.center() as i64;
    let n = buf.len() as i64;
    for &(chip, amp) in pulses {
        let start = layout.sample_of(chip) as i64 - c - offset;
        if start + shape.taps.len() as i64 <= 0 || start >= n {
            continue;
        }
        let a = amp * gain;
        for (t, &tap) in shape.taps.iter().enumerate() {
            let idx = start + t as i64;
            if (0..n).contains(&idx) {
                buf[idx as usize].re += a * tap;
            }
        }
    }
}
