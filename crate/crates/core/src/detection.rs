//! Channel-reciprocity attack detector. Each side reduces its CIR to a
//! quantized tap profile anchored at the detected first path; the sides
//! disagree when a forged early peak exists on only one of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::receiver::{CirSpectrum, ToaEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    /// K: taps kept from the first path onward.
    pub taps: usize,
    /// B: bits per quantized tap, 1..=16.
    pub bits: u32,
    /// γ: S = 1 when the feature correlation drops below this.
    pub gamma: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            taps: 16,
            bits: 8,
            gamma: 0.95,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps < 2 || !(1..=16).contains(&self.bits) || !(-1.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("detection needs taps >= 2, bits in 1..=16, gamma in [-1, 1]".into()));
        }
        Ok(())
    }

    /// Bytes a serialized feature occupies in a payload.
    pub fn feature_bytes(&self) -> usize {
        self.taps * (self.bits as usize).div_ceil(8)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CirFeature {
    pub values: Vec<u16>,
    pub bits: u32,
    /// Set when the trace ended before K taps and zeros were appended.
    pub padded: bool,
}

impl CirFeature {
    pub fn to_bytes(&self) -> Vec<u8> {
        if self.bits <= 8 {
            self.values.iter().map(|&v| v as u8).collect()
        } else {
            self.values.iter().flat_map(|v| v.to_be_bytes()).collect()
        }
    }

    pub fn from_bytes(bytes: &[u8], cfg: &DetectionConfig) -> Result<Self> {
        if bytes.len() != cfg.feature_bytes() {
            return Err(Error::InvalidParameter(format!(
                "feature needs {} bytes, got {}",
                cfg.feature_bytes(),
                bytes.len()
            )));
        }
        let values = if cfg.bits <= 8 {
            bytes.iter().map(|&b| u16::from(b)).collect()
        } else {
            bytes.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        };
        Ok(Self {
            values,
            bits: cfg.bits,
            padded: false,
        })
    }
}

/// K taps starting at the first path, normalized to their maximum and
/// uniformly quantized to B bits.
pub fn extract_feature(cir: &CirSpectrum, toa: &ToaEstimate, cfg: &DetectionConfig) -> CirFeature {
    let start = toa.first_path_index.min(cir.magnitude.len());
    let end = (start + cfg.taps).min(cir.magnitude.len());
    let window = &cir.magnitude[start..end];
    let max = window.iter().copied().fold(0.0, f64::max);
    let top = f64::from((1u32 << cfg.bits) - 1);
    let mut values: Vec<u16> = window
        .iter()
        .map(|&m| if max > 0.0 { (m / max * top).round() as u16 } else { 0 })
        .collect();
    let padded = values.len() < cfg.taps;
    values.resize(cfg.taps, 0);
    CirFeature {
        values,
        bits: cfg.bits,
        padded,
    }
}

/// Pearson correlation; a constant vector correlates 1 with an identical
/// vector and 0 with anything else.
pub fn feature_correlation(a: &CirFeature, b: &CirFeature) -> f64 {
    let x: Vec<f64> = a.values.iter().map(|&v| f64::from(v)).collect();
    let y: Vec<f64> = b.values.iter().map(|&v| f64::from(v)).collect();
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, q) in x.iter().zip(&y) {
        sxy += (p - mx) * (q - my);
        sxx += (p - mx).powi(2);
        syy += (q - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return if a.values == b.values { 1.0 } else { 0.0 };
    }
    sxy / (sxx * syy).sqrt()
}

/// S = 1 iff the features correlate below γ.
pub fn detect(local: &CirFeature, remote: &CirFeature, gamma: f64) -> u8 {
    u8::from(feature_correlation(local, remote) < gamma)
}
