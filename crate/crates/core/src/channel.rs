//! Propagation on the global sample clock: delay, optional fixed multipath,
//! AWGN referenced to the legitimate STS power, and attack superposition.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::phy::{Packet, PacketLayout, Waveform, SPEED_OF_LIGHT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub distance_m: f64,
    /// Legitimate STS power over unit noise power, dB. `+inf` disables noise.
    pub snr_db: f64,
    /// (extra delay in samples, amplitude) taps; LOS only by default.
    pub multipath: Vec<(usize, f64)>,
    pub attacker_distance_m: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            distance_m: 10.0,
            snr_db: -10.0,
            multipath: vec![(0, 1.0)],
            attacker_distance_m: 1.0,
        }
    }
}

impl ChannelConfig {
    pub fn delay_samples(distance_m: f64, sample_rate: f64) -> i64 {
        (distance_m / SPEED_OF_LIGHT * sample_rate).round() as i64
    }
}

/// Global-clock interval a receiver digitizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RxWindow {
    pub start: i64,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureTruth {
    /// Global sample where packet sample 0 of the legitimate packet lands.
    pub legit_arrival: i64,
    pub legit_layout: PacketLayout,
    pub signal_amplitude: f64,
    /// STS power of the unscaled legitimate packet.
    pub legit_sts_power: f64,
    pub attack_arrival: Option<i64>,
    pub attack_amplitude: f64,
    /// Set when an injected attack did not overlap the capture at all.
    pub attack_missed: bool,
}

impl CaptureTruth {
    /// Global sample of the first legitimate STS pulse center.
    pub fn legit_sts_start(&self) -> i64 {
        self.legit_arrival + self.legit_layout.sample_of(self.legit_layout.sts_start) as i64
    }

    pub fn legit_rmarker(&self) -> i64 {
        self.legit_arrival + self.legit_layout.sample_of(self.legit_layout.rmarker) as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RxCapture {
    pub waveform: Waveform,
    pub truth: CaptureTruth,
}

impl RxCapture {
    /// Capture-relative index of a global sample.
    pub fn local(&self, global: i64) -> i64 {
        global - self.waveform.origin_sample
    }
}

/// Delay `tx` (transmitted with packet sample 0 at global `tx_origin`) by
/// the propagation time, add AWGN, and digitize over `window` (the whole
/// packet when `None`). Deterministic in `seed`.
pub fn propagate(
    tx: &Packet,
    tx_origin: i64,
    cfg: &ChannelConfig,
    window: Option<RxWindow>,
    seed: u64,
) -> RxCapture {
    let delay = ChannelConfig::delay_samples(cfg.distance_m, tx.sample_rate);
    let arrival = tx_origin + delay;
    let window = window.unwrap_or(RxWindow {
        start: arrival,
        len: tx.len(),
    });
    let sts_power = tx.sts_power();
    let amp = if cfg.snr_db.is_finite() {
        (10f64.powf(cfg.snr_db / 10.0) / sts_power).sqrt()
    } else {
        1.0
    };
    let mut samples = vec![Complex64::new(0.0, 0.0); window.len];
    for &(extra, gain) in &cfg.multipath {
        tx.render_into(&mut samples, window.start - arrival - extra as i64, amp * gain);
    }
    if cfg.snr_db.is_finite() {
        add_noise(&mut samples, seed);
    }
    RxCapture {
        waveform: Waveform {
            samples,
            sample_rate: tx.sample_rate,
            origin_sample: window.start,
        },
        truth: CaptureTruth {
            legit_arrival: arrival,
            legit_layout: tx.layout,
            signal_amplitude: amp,
            legit_sts_power: sts_power,
            attack_arrival: None,
            attack_amplitude: 0.0,
            attack_missed: false,
        },
    }
}

/// Unit-variance circular complex Gaussian noise.
pub fn add_noise(samples: &mut [Complex64], seed: u64) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for x in samples.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        x.re += s * re;
        x.im += s * im;
    }
}

/// Superimpose an attack packet whose sample 0 leaves the attacker at
/// global `attack_origin`, scaled so legit STS power / attack STS power
/// equals `sir_db` at the victim.
pub fn inject(
    mut victim: RxCapture,
    attack: &Packet,
    sir_db: f64,
    attack_origin: i64,
    attacker_distance_m: f64,
) -> RxCapture {
    let delay = ChannelConfig::delay_samples(attacker_distance_m, attack.sample_rate);
    let arrival = attack_origin + delay;
    let legit_power = victim.truth.signal_amplitude.powi(2) * victim.truth.legit_sts_power;
    let amp = (legit_power / attack.sts_power() / 10f64.powf(sir_db / 10.0)).sqrt();
    let start = victim.waveform.origin_sample;
    let end = start + victim.waveform.len() as i64;
    let overlaps = arrival < end && arrival + attack.len() as i64 > start;
    if overlaps {
        attack.render_into(&mut victim.waveform.samples, start - arrival, amp);
    }
    victim.truth.attack_arrival = Some(arrival);
    victim.truth.attack_amplitude = amp;
    victim.truth.attack_missed = !overlaps;
    victim
}
