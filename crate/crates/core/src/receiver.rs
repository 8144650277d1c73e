//! Receive chain: preamble acquisition, SFD detection, STS cross-correlation,
//! back-search leading-edge detection and RAKE demodulation of PHR/payload.

use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::channel::RxCapture;
use crate::error::{Error, Result};
use crate::phy::{
    bits_to_bytes, crc16, preamble_code, sfd_pattern, PacketConfig, PulseShape, StsSequence,
    CRC_BYTES, DATA_BURST_CHIPS, DATA_SYMBOL_CHIPS, PHR_BYTES, SFD_SYMBOLS, STS_GAP_CHIPS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverConfig {
    /// Back-search window T_BTW * F_s.
    pub btw_samples: usize,
    /// MPEP threshold T_m.
    pub mpep_threshold: f64,
    /// PAPR threshold T_p.
    pub papr_threshold: f64,
    pub sfd_detect_threshold: f64,
    pub rake_fingers: usize,
    /// Preamble symbols folded for acquisition.
    pub acquisition_symbols: usize,
    /// An SFD or data symbol whose mean received power exceeds this
    /// multiple of the lead-preamble power is treated as collided.
    pub collision_factor: f64,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            btw_samples: 400,
            mpep_threshold: 0.5,
            papr_threshold: 2.0,
            sfd_detect_threshold: 0.6,
            rake_fingers: 4,
            acquisition_symbols: 4,
            collision_factor: 4.0,
        }
    }
}

impl ReceiverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.btw_samples == 0
            || self.mpep_threshold <= 0.0
            || self.papr_threshold <= 0.0
            || self.sfd_detect_threshold <= 0.0
            || self.rake_fingers == 0
            || self.acquisition_symbols == 0
            || !(self.collision_factor > 1.0)
        {
            return Err(Error::Config("receiver thresholds and sizes must be positive".into()));
        }
        Ok(())
    }
}

/// STS cross-correlation trace over the back-search window.
#[derive(Debug, Clone, PartialEq)]
pub struct CirSpectrum {
    pub values: Vec<Complex64>,
    pub magnitude: Vec<f64>,
    pub p_max: f64,
    pub p_rms: f64,
    pub peak_index: usize,
    /// Global sample corresponding to `magnitude[0]`.
    pub start_sample: i64,
}

impl CirSpectrum {
    pub fn from_values(values: Vec<Complex64>, start_sample: i64) -> Self {
        let magnitude: Vec<f64> = values.iter().map(|v| v.norm()).collect();
        Self::from_parts(values, magnitude, start_sample)
    }

    /// Build from a magnitude trace alone (phase set to zero).
    pub fn from_magnitude(magnitude: Vec<f64>, start_sample: i64) -> Self {
        let values = magnitude.iter().map(|&m| Complex64::new(m, 0.0)).collect();
        Self::from_parts(values, magnitude, start_sample)
    }

    fn from_parts(values: Vec<Complex64>, magnitude: Vec<f64>, start_sample: i64) -> Self {
        let (peak_index, p_max) = magnitude
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, m)| if m > best.1 { (i, m) } else { best });
        let p_rms = if magnitude.is_empty() {
            0.0
        } else {
            (magnitude.iter().map(|m| m * m).sum::<f64>() / magnitude.len() as f64).sqrt()
        };
        Self {
            values,
            magnitude,
            p_max: p_max.max(0.0),
            p_rms,
            peak_index,
            start_sample,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.magnitude.is_empty() || self.p_max <= 0.0
    }

    /// Acceptance threshold max{P_max * T_m, P_rms * T_p}.
    pub fn threshold(&self, cfg: &ReceiverConfig) -> f64 {
        (self.p_max * cfg.mpep_threshold).max(self.p_rms * cfg.papr_threshold)
    }

    /// Dump as `offset_sample,magnitude` rows, offsets relative to the
    /// nominal STS start.
    pub fn write_csv<W: Write>(&self, mut out: W, nominal_offset: i64) -> std::io::Result<()> {
        writeln!(out, "offset_sample,magnitude")?;
        for (i, m) in self.magnitude.iter().enumerate() {
            writeln!(out, "{},{}", i as i64 - nominal_offset, m)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToaEstimate {
    /// Index into the CIR trace chosen by the leading-edge rule.
    pub first_path_index: usize,
    /// Global sample of that index.
    pub first_path_sample: i64,
    pub first_path_time: f64,
    pub valid: bool,
}

/// Back-search from the global peak over at most `btw_samples`; the
/// earliest sample strictly above the threshold becomes the first path.
pub fn leading_edge_detect(cir: &CirSpectrum, cfg: &ReceiverConfig) -> usize {
    let peak = cir.peak_index;
    let thr = cir.threshold(cfg);
    let lo = peak.saturating_sub(cfg.btw_samples);
    (lo..peak).find(|&i| cir.magnitude[i] > thr).unwrap_or(peak)
}

/// Samples the leading-edge rule places before the true peak of a clean
/// pulse autocorrelation; added back when timestamping.
pub fn edge_bias(pulse: &PulseShape, cfg: &ReceiverConfig) -> i64 {
    let half = pulse.taps.len() as isize;
    let trace: Vec<f64> = (-half..=half).map(|lag| pulse.autocorrelation(lag).abs()).collect();
    let cir = CirSpectrum::from_magnitude(trace, 0);
    (cir.peak_index - leading_edge_detect(&cir, cfg)) as i64
}

/// Mean |r|^2 over `[start, start + len)` clipped to the capture.
fn mean_power(r: &[Complex64], start: i64, len: usize) -> f64 {
    let lo = start.clamp(0, r.len() as i64) as usize;
    let hi = (start + len as i64).clamp(0, r.len() as i64) as usize;
    if hi <= lo {
        return 0.0;
    }
    r[lo..hi].iter().map(|x| x.norm_sqr()).sum::<f64>() / (hi - lo) as f64
}

/// True when any of `count` consecutive `len`-sample windows from `start`
/// carries more than `factor * reference` mean power.
fn collided(r: &[Complex64], start: i64, len: usize, count: usize, reference: f64, factor: f64) -> bool {
    (0..count).any(|k| mean_power(r, start + (k * len) as i64, len) > factor * reference)
}

thread_local! {
    static PLANNER: std::cell::RefCell<FftPlanner<f64>> = std::cell::RefCell::new(FftPlanner::new());
}

/// `out[k] = sum_j x[(k + j) mod n] * conj(y[j])`, both of length n.
pub fn circular_correlate(mut x: Vec<Complex64>, mut y: Vec<Complex64>) -> Vec<Complex64> {
    let n = x.len();
    assert_eq!(n, y.len());
    let (fwd, inv) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    });
    fwd.process(&mut x);
    fwd.process(&mut y);
    let scale = 1.0 / n as f64;
    for (a, b) in x.iter_mut().zip(&y) {
        *a *= b.conj() * scale;
    }
    inv.process(&mut x);
    x
}

#[inline]
fn mf_at(r: &[Complex64], taps: &[f64], center: usize, pos: i64) -> Complex64 {
    let start = pos - center as i64;
    let n = r.len() as i64;
    if start >= 0 && start + taps.len() as i64 <= n {
        let s = &r[start as usize..start as usize + taps.len()];
        let (mut re, mut im) = (0.0, 0.0);
        for (x, &t) in s.iter().zip(taps) {
            re += x.re * t;
            im += x.im * t;
        }
        Complex64::new(re, im)
    } else {
        taps.iter()
            .enumerate()
            .filter_map(|(t, &tap)| {
                let i = start + t as i64;
                (0..n).contains(&i).then(|| r[i as usize] * tap)
            })
            .sum()
    }
}

/// Result of preamble acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acquisition {
    /// Capture-local sample of a preamble symbol's first pulse.
    pub symbol_phase: usize,
    /// Complex preamble correlation at that phase (channel reference).
    pub reference: Complex64,
    pub peak_to_rms: f64,
    /// Mean received power over the folded lead symbols.
    pub reference_power: f64,
}

/// Fold `acquisition_symbols` consecutive symbols and correlate circularly
/// with the spread preamble code. Blocks slide one symbol at a time until a
/// lock, leaving room for the SFD after the block.
pub fn acquire(
    capture: &RxCapture,
    pkt: &PacketConfig,
    pulse: &PulseShape,
    cfg: &ReceiverConfig,
) -> Option<Acquisition> {
    let r = &capture.waveform.samples;
    let spp = pkt.samples_per_pulse;
    let sym = pkt.preamble_symbol_chips() * spp;
    let total = r.len() / sym;
    let folds = cfg.acquisition_symbols.min(total);
    if folds == 0 {
        return None;
    }
    let code = preamble_code(pkt.preamble_code_index).ok()?;
    let step = pkt.preamble_spreading_factor * spp;
    // Spread code convolved circularly with the pulse, centered at 0.
    let c = pulse.center();
    let mut template = vec![Complex64::new(0.0, 0.0); sym];
    for (i, &v) in code.iter().enumerate().filter(|(_, &v)| v != 0) {
        for (t, &tap) in pulse.taps.iter().enumerate() {
            template[(i * step + sym + t - c) % sym].re += f64::from(v) * tap;
        }
    }
    let last_block = total.saturating_sub(folds + SFD_SYMBOLS);
    (0..=last_block).find_map(|block| {
        let mut folded = vec![Complex64::new(0.0, 0.0); sym];
        for s in block..block + folds {
            for (f, x) in folded.iter_mut().zip(&r[s * sym..(s + 1) * sym]) {
                *f += x;
            }
        }
        let corr = circular_correlate(folded, template.clone());
        let (best, peak) = corr
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((0, 0.0), |b, (i, m)| if m > b.1 { (i, m) } else { b });
        let rms = (corr.iter().map(|v| v.norm_sqr()).sum::<f64>() / sym as f64).sqrt();
        let peak_to_rms = if rms > 0.0 { peak / rms } else { 0.0 };
        // A clean length-127 code gives sqrt(sym) ~ 45; pure noise stays near 4.
        (peak_to_rms >= 8.0).then(|| Acquisition {
            symbol_phase: best,
            reference: corr[best],
            peak_to_rms,
            reference_power: mean_power(r, (block * sym) as i64, folds * sym),
        })
    })
}

/// Despread one preamble-code symbol starting at capture-local `start`,
/// projected on the acquisition reference phase.
fn despread(r: &[Complex64], pkt: &PacketConfig, pulse: &PulseShape, code: &[i8], start: usize, reference: Complex64) -> f64 {
    let step = (pkt.preamble_spreading_factor * pkt.samples_per_pulse) as i64;
    let c = pulse.center();
    let s: Complex64 = code
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, &v)| mf_at(r, &pulse.taps, c, start as i64 + i as i64 * step) * f64::from(v))
        .sum();
    (s * reference.conj()).re / reference.norm()
}

/// Locate the SFD; returns the capture-local RMARKER sample.
pub fn detect_sfd(
    capture: &RxCapture,
    acq: &Acquisition,
    pkt: &PacketConfig,
    pulse: &PulseShape,
    cfg: &ReceiverConfig,
) -> Option<usize> {
    let r = &capture.waveform.samples;
    let sym = pkt.preamble_symbol_chips() * pkt.samples_per_pulse;
    let code = preamble_code(pkt.preamble_code_index).ok()?;
    let pattern = sfd_pattern(pkt.sfd_index).ok()?;
    let n_sym = (r.len().saturating_sub(acq.symbol_phase)) / sym;
    if n_sym < SFD_SYMBOLS {
        return None;
    }
    let d: Vec<f64> = (0..n_sym)
        .map(|k| despread(r, pkt, pulse, &code, acq.symbol_phase + k * sym, acq.reference))
        .collect();
    let t_norm = pattern.iter().map(|&t| f64::from(t).powi(2)).sum::<f64>().sqrt();
    let (best, rho) = (0..=n_sym - SFD_SYMBOLS)
        .map(|k| {
            let w = &d[k..k + SFD_SYMBOLS];
            let dot: f64 = w.iter().zip(&pattern).map(|(x, &t)| x * f64::from(t)).sum();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            (k, if norm > 0.0 { dot / (norm * t_norm) } else { 0.0 })
        })
        .fold((0, f64::NEG_INFINITY), |b, (k, v)| if v > b.1 { (k, v) } else { b });
    (rho >= cfg.sfd_detect_threshold).then(|| acq.symbol_phase + (best + SFD_SYMBOLS) * sym)
}

/// Correlate the STS template against the capture for offsets
/// `[-btw, +btw]` around `nominal_sts` (capture-local sample of the first
/// STS pulse), after matched filtering with the pulse.
pub fn cross_correlate(
    capture: &RxCapture,
    template: &StsSequence,
    pulse: &PulseShape,
    nominal_sts: i64,
    spacing_samples: usize,
    cfg: &ReceiverConfig,
) -> Result<CirSpectrum> {
    let r = &capture.waveform.samples;
    let btw = cfg.btw_samples as i64;
    let c = pulse.center() as i64;
    let span = (template.len().saturating_sub(1) * spacing_samples) as i64;
    let first = nominal_sts - btw;
    let last = nominal_sts + btw + span;
    if first - c < 0 || last - c + pulse.taps.len() as i64 > r.len() as i64 {
        return Err(Error::TruncatedWindow {
            start: first - c,
            end: last - c + pulse.taps.len() as i64,
            len: r.len(),
        });
    }
    let width = (2 * btw + 1) as usize;
    let taps = pulse.taps.len();
    let template_len = span as usize + taps;
    let mut shaped = vec![Complex64::new(0.0, 0.0); template_len];
    for (i, &a) in template.codes.iter().enumerate() {
        let off = i * spacing_samples;
        for (t, &tap) in pulse.taps.iter().enumerate() {
            shaped[off + t].re += f64::from(a) * tap;
        }
    }
    let x0 = (first - c) as usize;
    let x = &r[x0..x0 + width + template_len - 1];
    let n = x.len().next_power_of_two();
    let mut xs = x.to_vec();
    xs.resize(n, Complex64::new(0.0, 0.0));
    shaped.resize(n, Complex64::new(0.0, 0.0));
    let mut values = circular_correlate(xs, shaped);
    values.truncate(width);
    Ok(CirSpectrum::from_values(values, capture.waveform.origin_sample + first))
}

/// RAKE demodulation of `n_bytes` frame bytes starting at capture-local
/// sample `data_start` (pulse center of the first data chip). Fingers are
/// the strongest CIR taps, delayed relative to `nominal_index`.
#[allow(clippy::too_many_arguments)]
pub fn demodulate(
    capture: &RxCapture,
    cir: &CirSpectrum,
    nominal_index: usize,
    pulse: &PulseShape,
    data_start: i64,
    n_bytes: usize,
    spp: usize,
    fingers: usize,
) -> Vec<u8> {
    let mut order: Vec<usize> = (0..cir.magnitude.len()).collect();
    order.sort_by(|&a, &b| cir.magnitude[b].total_cmp(&cir.magnitude[a]));
    order.truncate(fingers);
    let r = &capture.waveform.samples;
    let n_sym = (8 * n_bytes).div_ceil(2);
    let c = pulse.center() as i64;
    let burst_span = ((DATA_BURST_CHIPS - 1) * spp) as i64;
    // Stride-spp prefix sums turn each burst into an O(1) difference.
    let max_delay = order.iter().map(|&f| f as i64 - nominal_index as i64).max().unwrap_or(0);
    let min_delay = order.iter().map(|&f| f as i64 - nominal_index as i64).min().unwrap_or(0);
    let lo = (data_start + min_delay - c).max(0) as usize;
    let hi = ((data_start + max_delay + (n_sym * DATA_SYMBOL_CHIPS * spp) as i64 + c + 1).max(0) as usize).min(r.len());
    if lo >= hi {
        return vec![0; n_bytes];
    }
    let mut prefix = vec![Complex64::new(0.0, 0.0); hi - lo];
    for i in 0..hi - lo {
        prefix[i] = r[lo + i] + if i >= spp { prefix[i - spp] } else { Complex64::new(0.0, 0.0) };
    }
    // Sum of r[p], r[p + spp], ..., r[p + burst_span].
    let burst_sum = |p: i64| -> Complex64 {
        let end = p + burst_span;
        let get = |q: i64| -> Complex64 {
            let i = q - lo as i64;
            if i < 0 {
                Complex64::new(0.0, 0.0)
            } else {
                let i = i as usize;
                if i < prefix.len() {
                    prefix[i]
                } else {
                    // Past the capture: back off to the last sample of this residue.
                    let back = (i - prefix.len()) / spp + 1;
                    prefix.get(i - back * spp).copied().unwrap_or_default()
                }
            }
        };
        get(end) - get(p - spp as i64)
    };
    let half_stat = |pos: i64| -> f64 {
        let z: Complex64 = order
            .iter()
            .map(|&f| {
                let delay = f as i64 - nominal_index as i64;
                let base = pos + delay - c;
                let s: Complex64 = pulse
                    .taps
                    .iter()
                    .enumerate()
                    .map(|(t, &tap)| burst_sum(base + t as i64) * tap)
                    .sum();
                s * cir.values[f].conj()
            })
            .sum();
        z.re
    };
    let mut bits = Vec::with_capacity(2 * n_sym);
    for m in 0..n_sym {
        let sym_start = data_start + (m * DATA_SYMBOL_CHIPS * spp) as i64;
        let h0 = half_stat(sym_start);
        let h1 = half_stat(sym_start + (DATA_SYMBOL_CHIPS / 2 * spp) as i64);
        let (half, stat) = if h1.abs() > h0.abs() { (1, h1) } else { (0, h0) };
        if std::env::var("RXDBG").is_ok() { eprintln!("sym {m} {h0:.3e} {h1:.3e}"); }
        bits.push(half);
        bits.push(u8::from(stat < 0.0));
    }
    bits.truncate(8 * n_bytes);
    bits_to_bytes(&bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RxFailure {
    Sync,
    Sfd,
    Collision,
    Window,
    Header,
    Crc,
}

impl RxFailure {
    pub fn code(&self) -> &'static str {
        match self {
            RxFailure::Sync => "sync",
            RxFailure::Sfd => "sfd",
            RxFailure::Collision => "collision",
            RxFailure::Window => "window",
            RxFailure::Header => "header",
            RxFailure::Crc => "crc",
        }
    }
}

/// Output of the full receive chain.
#[derive(Debug, Clone)]
pub struct Reception {
    pub toa: ToaEstimate,
    /// Global RMARKER arrival derived from the calibrated first path.
    pub rmarker_sample: i64,
    pub payload: std::result::Result<Vec<u8>, RxFailure>,
    pub cir: Option<CirSpectrum>,
    /// Trace index corresponding to the nominal (SFD-derived) STS start.
    pub nominal_index: usize,
}

impl Reception {
    fn failed(f: RxFailure, cir: Option<CirSpectrum>) -> Self {
        Self {
            toa: ToaEstimate {
                first_path_index: 0,
                first_path_sample: 0,
                first_path_time: 0.0,
                valid: false,
            },
            rmarker_sample: 0,
            payload: Err(f),
            cir,
            nominal_index: 0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.toa.valid
    }
}

/// Full receive chain: acquisition, SFD, STS correlation, leading edge,
/// RAKE demodulation and CRC. Valid only when SFD and CRC both pass.
pub fn receive_packet(
    capture: &RxCapture,
    template: &StsSequence,
    pkt: &PacketConfig,
    cfg: &ReceiverConfig,
) -> Reception {
    let pulse = PulseShape::root_raised_cosine(pkt.samples_per_pulse);
    let spp = pkt.samples_per_pulse;
    let Some(acq) = acquire(capture, pkt, &pulse, cfg) else {
        return Reception::failed(RxFailure::Sync, None);
    };
    let Some(rmarker) = detect_sfd(capture, &acq, pkt, &pulse, cfg) else {
        return Reception::failed(RxFailure::Sfd, None);
    };
    let r = &capture.waveform.samples;
    let c = pulse.center() as i64;
    let sym = pkt.preamble_symbol_chips() * spp;
    let sfd_start = (rmarker - SFD_SYMBOLS * sym) as i64 - c;
    if collided(r, sfd_start, sym, SFD_SYMBOLS, acq.reference_power, cfg.collision_factor) {
        return Reception::failed(RxFailure::Collision, None);
    }
    let nominal_sts = (rmarker + STS_GAP_CHIPS * spp) as i64;
    let spacing = pkt.sts_pulse_spacing_chips * spp;
    let cir = match cross_correlate(capture, template, &pulse, nominal_sts, spacing, cfg) {
        Ok(c) if !c.is_degenerate() => c,
        _ => return Reception::failed(RxFailure::Window, None),
    };
    let fp = leading_edge_detect(&cir, cfg);
    let fp_sample = cir.start_sample + fp as i64;
    let bias = edge_bias(&pulse, cfg);
    let sts_to_rmarker = (STS_GAP_CHIPS * spp) as i64;
    let rmarker_sample = fp_sample + bias - sts_to_rmarker;
    let toa = ToaEstimate {
        first_path_index: fp,
        first_path_sample: fp_sample,
        first_path_time: fp_sample as f64 / capture.waveform.sample_rate,
        valid: false,
    };
    let nominal_index = cfg.btw_samples;
    let data_start = nominal_sts + ((template.len() * pkt.sts_pulse_spacing_chips + STS_GAP_CHIPS) * spp) as i64;
    let data_sym = DATA_SYMBOL_CHIPS * spp;
    let symbols = |bytes: usize| (8 * bytes).div_ceil(2);
    let mut out = Reception {
        toa,
        rmarker_sample,
        payload: Err(RxFailure::Collision),
        cir: None,
        nominal_index,
    };
    let jammed = |from: usize, to: usize| {
        collided(r, data_start - c + (from * data_sym) as i64, data_sym, to - from, acq.reference_power, cfg.collision_factor)
    };
    if jammed(0, symbols(PHR_BYTES)) {
        out.cir = Some(cir);
        return out;
    }
    let header = demodulate(capture, &cir, nominal_index, &pulse, data_start, PHR_BYTES, spp, cfg.rake_fingers);
    let len = usize::from(u16::from_be_bytes([header[0], header[1]]));
    out.payload = Err(RxFailure::Header);
    if len > pkt.payload_bytes {
        out.cir = Some(cir);
        return out;
    }
    if jammed(symbols(PHR_BYTES), symbols(PHR_BYTES + len + CRC_BYTES)) {
        out.payload = Err(RxFailure::Collision);
        out.cir = Some(cir);
        return out;
    }
    let frame = demodulate(
        capture,
        &cir,
        nominal_index,
        &pulse,
        data_start,
        PHR_BYTES + len + CRC_BYTES,
        spp,
        cfg.rake_fingers,
    );
    let (body, crc) = frame.split_at(PHR_BYTES + len);
    if crc16(body).to_be_bytes() == [crc[0], crc[1]] {
        out.payload = Ok(body[PHR_BYTES..].to_vec());
        out.toa.valid = true;
    } else {
        out.payload = Err(RxFailure::Crc);
    }
    out.cir = Some(cir);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{propagate, ChannelConfig};
    use crate::phy::{build_packet, generate_sts, StsCounterState};

    fn trace(len: usize, peak: (usize, f64), bump: Option<(usize, f64)>, floor: f64) -> CirSpectrum {
        let mut m = vec![floor; len];
        m[peak.0] = peak.1;
        if let Some((i, v)) = bump {
            m[i] = v;
        }
        CirSpectrum::from_magnitude(m, 0)
    }

    #[test]
    fn single_impulse_first_path_is_peak() {
        let cir = trace(801, (400, 1.0), None, 0.0);
        assert_eq!(leading_edge_detect(&cir, &ReceiverConfig::default()), 400);
    }

    #[test]
    fn early_bump_above_mpep_is_taken() {
        // RMS of this trace is ~0.05 so the MPEP term (0.5) dominates.
        let cir = trace(801, (500, 1.0), Some((300, 0.6)), 0.04);
        assert!(cir.p_rms * 2.0 < 0.5);
        assert_eq!(leading_edge_detect(&cir, &ReceiverConfig::default()), 300);
        let cir = trace(801, (500, 1.0), Some((300, 0.4)), 0.04);
        assert_eq!(leading_edge_detect(&cir, &ReceiverConfig::default()), 500);
    }

    #[test]
    fn back_search_is_bounded_by_btw() {
        let cir = trace(1200, (1000, 1.0), Some((500, 0.9)), 0.0);
        assert_eq!(leading_edge_detect(&cir, &ReceiverConfig::default()), 1000);
    }

    #[test]
    fn edge_bias_matches_autocorrelation_crossing() {
        let p = PulseShape::root_raised_cosine(4);
        let r0 = p.autocorrelation(0);
        // Earliest lag whose normalized autocorrelation still exceeds 0.5.
        let oracle = (1..32).take_while(|&l| p.autocorrelation(-l) / r0 > 0.5).count() as i64;
        assert_eq!(edge_bias(&p, &ReceiverConfig::default()), oracle);
        assert_eq!(oracle, 2);
    }

    fn clean_capture(snr_db: f64, payload: &[u8]) -> (RxCapture, StsSequence, PacketConfig) {
        let pkt = PacketConfig::legitimate();
        let sts = generate_sts(&StsCounterState::new([1; 16], 77, pkt.sts_pulses())).unwrap();
        let packet = build_packet(&pkt, &sts, payload).unwrap();
        let ch = ChannelConfig {
            snr_db,
            ..ChannelConfig::default()
        };
        let sym = pkt.preamble_symbol_chips() * 4;
        let start = packet.layout.sample_of(packet.layout.sfd_start) as i64 - 6 * sym as i64 + 1234;
        let window = crate::channel::RxWindow {
            start,
            len: packet.len() - start as usize + 2000,
        };
        (propagate(&packet, 0, &ch, Some(window), 5), sts, pkt)
    }

    #[test]
    fn clean_capture_round_trips_payload() {
        let payload: Vec<u8> = (0..16).collect();
        let (cap, sts, pkt) = clean_capture(f64::INFINITY, &payload);
        let rx = receive_packet(&cap, &sts, &pkt, &ReceiverConfig::default());
        assert_eq!(rx.payload, Ok(payload));
        assert!(rx.toa.valid);
        let cir = rx.cir.unwrap();
        let truth = cap.truth.legit_sts_start();
        assert!((cir.start_sample + cir.peak_index as i64 - truth).abs() <= 1);
        assert_eq!(rx.rmarker_sample, cap.truth.legit_rmarker());
    }

    #[test]
    fn noisy_capture_is_received() {
        let payload = [0xa5u8; 20];
        let (cap, sts, pkt) = clean_capture(-10.0, &payload);
        let rx = receive_packet(&cap, &sts, &pkt, &ReceiverConfig::default());
        assert_eq!(rx.payload, Ok(payload.to_vec()));
        assert!((rx.rmarker_sample - cap.truth.legit_rmarker()).abs() <= 1);
    }

    #[test]
    fn wrong_template_stays_below_papr() {
        let (cap, _, pkt) = clean_capture(f64::INFINITY, &[]);
        let rx_cfg = ReceiverConfig::default();
        let pulse = PulseShape::root_raised_cosine(4);
        let nominal = cap.local(cap.truth.legit_sts_start());
        let mut above = 0;
        for counter in 0..50u128 {
            let other = generate_sts(&StsCounterState::new([9; 16], counter, pkt.sts_pulses())).unwrap();
            let cir = cross_correlate(&cap, &other, &pulse, nominal, 4, &rx_cfg).unwrap();
            if cir.p_max / cir.p_rms >= rx_cfg.papr_threshold * 3.0 {
                above += 1;
            }
        }
        assert_eq!(above, 0);
    }

    #[test]
    fn all_zero_capture_fails_sync() {
        let (mut cap, sts, pkt) = clean_capture(f64::INFINITY, &[]);
        cap.waveform.samples.iter_mut().for_each(|s| *s = Complex64::new(0.0, 0.0));
        let rx = receive_packet(&cap, &sts, &pkt, &ReceiverConfig::default());
        assert_eq!(rx.payload, Err(RxFailure::Sync));
        assert!(!rx.toa.valid);
    }

    #[test]
    fn truncated_window_is_an_error() {
        let (cap, sts, _) = clean_capture(f64::INFINITY, &[]);
        let pulse = PulseShape::root_raised_cosine(4);
        let err = cross_correlate(&cap, &sts, &pulse, 10, 4, &ReceiverConfig::default());
        assert!(matches!(err, Err(Error::TruncatedWindow { .. })));
    }

    #[test]
    fn fft_correlation_matches_direct_sum() {
        let (cap, sts, _) = clean_capture(-5.0, &[1, 2, 3]);
        let pulse = PulseShape::root_raised_cosine(4);
        let cfg = ReceiverConfig {
            btw_samples: 40,
            ..ReceiverConfig::default()
        };
        let nominal = cap.local(cap.truth.legit_sts_start()) - 7;
        let cir = cross_correlate(&cap, &sts, &pulse, nominal, 4, &cfg).unwrap();
        let r = &cap.waveform.samples;
        for k in 0..81 {
            let direct: Complex64 = sts
                .codes
                .iter()
                .enumerate()
                .map(|(i, &a)| mf_at(r, &pulse.taps, 16, nominal - 40 + k + 4 * i as i64) * f64::from(a))
                .sum();
            assert!((cir.values[k as usize] - direct).norm() < 1e-9 * direct.norm().max(1.0));
        }
    }

    #[test]
    fn circular_correlation_matches_definition() {
        let x: Vec<Complex64> = (0..12).map(|i| Complex64::new(i as f64, (i * i % 5) as f64)).collect();
        let y: Vec<Complex64> = (0..12).map(|i| Complex64::new((i % 3) as f64, -(i as f64))).collect();
        let got = circular_correlate(x.clone(), y.clone());
        for k in 0..12 {
            let want: Complex64 = (0..12).map(|j| x[(k + j) % 12] * y[j].conj()).sum();
            assert!((got[k] - want).norm() < 1e-9);
        }
    }
}
