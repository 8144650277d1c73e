//! Ghost Peak attacker: forges a packet with a random STS and schedules it
//! relative to the sniffed (un-hopped) legitimate transmit epoch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phy::{build_packet, generate_sts, Packet, PacketConfig, StsCounterState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackTarget {
    Response,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// T_sy: attack epoch minus the targeted legitimate epoch, seconds.
    pub sync_time_s: f64,
    /// Legitimate STS power over attack STS power at the victim, dB.
    pub sir_db: f64,
    pub target: AttackTarget,
    pub packet: PacketConfig,
    /// Legitimate framing power over attack framing power (preamble, SFD,
    /// PHR, payload). Only the forged STS is transmitted at high power.
    pub framing_sir_db: f64,
    pub payload_bytes: usize,
    /// A Δt-guessing attacker adds this to the sniffed epoch.
    pub assumed_hop_s: Option<f64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            sync_time_s: -1e-6,
            sir_db: -26.0,
            target: AttackTarget::Response,
            packet: PacketConfig::attack(),
            framing_sir_db: 20.0,
            payload_bytes: 0,
            assumed_hop_s: None,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.sir_db.is_finite() || !self.sync_time_s.is_finite() {
            return Err(Error::Config("attack sir_db and sync_time_s must be finite".into()));
        }
        if self.framing_sir_db.is_nan() {
            return Err(Error::Config("attack framing_sir_db is NaN".into()));
        }
        self.packet.validate()
    }

    /// x_t: attack STS amplitude relative to the legitimate STS amplitude.
    pub fn attack_power_x_t(&self) -> f64 {
        10f64.powf(-self.sir_db / 20.0)
    }
}

/// Forged packet with a fresh random key and counter drawn from `seed`;
/// the legitimate key is never an input.
pub fn forge_attack_waveform(cfg: &AttackConfig, seed: u64) -> Result<Packet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key: [u8; 16] = rng.random();
    let counter: u128 = rng.random();
    let sts = generate_sts(&StsCounterState::new(key, counter, cfg.packet.sts_pulses()))?;
    let payload = vec![0u8; cfg.payload_bytes];
    let mut packet = build_packet(&cfg.packet, &sts, &payload)?;
    // Channel injection scales on STS power; framing pulses sit at
    // framing_sir_db below the legitimate framing.
    let framing_gain = 10f64.powf((cfg.sir_db - cfg.framing_sir_db) / 20.0);
    let layout = packet.layout;
    packet.scale_chips(0..layout.sts_start, framing_gain);
    packet.scale_chips(layout.sts_end..usize::MAX, framing_gain);
    Ok(packet)
}

/// Attack transmit epoch (global samples) for a sniffed legitimate epoch.
pub fn schedule_attack(legit_tx_epoch: i64, cfg: &AttackConfig, sample_rate: f64) -> i64 {
    let offset = cfg.sync_time_s + cfg.assumed_hop_s.unwrap_or(0.0);
    legit_tx_epoch + (offset * sample_rate).round() as i64
}
