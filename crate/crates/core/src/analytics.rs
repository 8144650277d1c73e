//! Closed-form attack-success model: exact binomial tail of the forged
//! correlation, its Hoeffding bound, the offset-window factor, and the
//! trapezoidal offset density under random hopping.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::phy::SPEED_OF_LIGHT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticParams {
    /// STS length in pulses.
    pub n: u64,
    /// Detection threshold θ.
    pub theta: f64,
    /// Adversarial amplitude x_t at the evaluated offset.
    pub x_t: f64,
    /// Attack-viability window, seconds.
    pub t_sfd: f64,
    pub t_payload: f64,
    /// Time-of-flight offset support, seconds.
    pub t_min: f64,
    pub t_max: f64,
    /// Hop delay support, seconds.
    pub t_min_hop: f64,
    pub t_max_hop: f64,
}

impl Default for AnalyticParams {
    fn default() -> Self {
        Self::with_range(4096, 0.0, 1.0, 15.0)
    }
}

impl AnalyticParams {
    /// Defaults with the time-of-flight support derived from the maximum
    /// operating range.
    pub fn with_range(n: u64, theta: f64, x_t: f64, max_range_m: f64) -> Self {
        Self {
            n,
            theta,
            x_t,
            t_sfd: -1.026e-6,
            t_payload: 1.026e-6,
            t_min: 0.0,
            t_max: max_range_m / SPEED_OF_LIGHT,
            t_min_hop: 15e-6,
            t_max_hop: 20e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.n == 0 {
            return bad("N must be at least 1");
        }
        if !(self.theta >= 0.0) || !(self.x_t > 0.0) {
            return bad("theta must be non-negative and x_t positive");
        }
        if !(self.t_payload > self.t_sfd) || !(self.t_max > self.t_min) || !(self.t_max_hop > self.t_min_hop) {
            return bad("every window needs upper > lower");
        }
        Ok(())
    }

    pub fn dt0(&self) -> f64 {
        self.t_payload - self.t_sfd
    }

    pub fn dt1(&self) -> f64 {
        self.t_max - self.t_min
    }

    pub fn dt2(&self) -> f64 {
        self.t_max_hop - self.t_min_hop
    }

    /// The rectangle approximation behind G needs Δt2 ≥ Δt1.
    pub fn rectangle_regime(&self) -> bool {
        self.dt2() >= self.dt1()
    }
}

/// P(X > bound) for X ~ B(n, 1/2); strict on integer bounds.
pub fn binomial_tail_gt(n: u64, bound: f64) -> f64 {
    if bound.is_nan() || bound >= n as f64 {
        return 0.0;
    }
    let k0 = if bound < 0.0 { 0 } else { bound.floor() as u64 + 1 };
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let logs: Vec<f64> = (k0..=n).map(|k| ln_binomial(n, k) + ln_half_n).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()).exp().min(1.0)
}

/// 2·P(X > θ/(2x_t) + N/2).
pub fn p_success_exact(p: &AnalyticParams) -> f64 {
    let bound = 0.5 * p.theta / p.x_t + 0.5 * p.n as f64;
    (2.0 * binomial_tail_gt(p.n, bound)).min(1.0)
}

pub fn p_success_hoeffding(p: &AnalyticParams) -> f64 {
    (2.0 * (-p.theta * p.theta / (2.0 * p.x_t * p.x_t * p.n as f64)).exp()).min(1.0)
}

/// Per-offset probability times the number of sampled offsets, capped at 1.
pub fn p_success_union(p: &AnalyticParams, offsets: usize) -> f64 {
    (p_success_exact(p) * offsets as f64).min(1.0)
}

pub fn p_success_windowed(p: &AnalyticParams) -> f64 {
    let ratio = p.dt0() / p.dt1();
    if ratio > 1.0 {
        log::info!("offset window {:.3e} s exceeds TOF support {:.3e} s; clamping", p.dt0(), p.dt1());
    }
    (p_success_exact(p) * ratio.clamp(0.0, 1.0)).clamp(0.0, 1.0)
}

/// Density of Y = t − Δt for independent uniform t and Δt: an isosceles
/// trapezoid with ramps of width min(Δt1, Δt2) and height 1/max(Δt1, Δt2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trapezoid {
    pub lo: f64,
    pub hi: f64,
    pub ramp: f64,
    pub height: f64,
}

impl Trapezoid {
    pub fn pdf(&self, y: f64) -> f64 {
        if y <= self.lo || y >= self.hi {
            return 0.0;
        }
        let edge = (y - self.lo).min(self.hi - y);
        if edge >= self.ramp {
            self.height
        } else {
            self.height * edge / self.ramp
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let (h, r) = (self.height, self.ramp);
        if y <= self.lo {
            0.0
        } else if y >= self.hi {
            1.0
        } else if y < self.lo + r {
            h * (y - self.lo).powi(2) / (2.0 * r)
        } else if y <= self.hi - r {
            h * (0.5 * r + (y - self.lo - r))
        } else {
            1.0 - h * (self.hi - y).powi(2) / (2.0 * r)
        }
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        (self.cdf(b) - self.cdf(a)).max(0.0)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

pub fn pdf_y(p: &AnalyticParams) -> Trapezoid {
    let (w1, w2) = (p.dt1(), p.dt2());
    Trapezoid {
        lo: p.t_min - p.t_max_hop,
        hi: p.t_max - p.t_min_hop,
        ramp: w1.min(w2),
        height: 1.0 / w1.max(w2),
    }
}

pub fn p_success_hopped(p: &AnalyticParams) -> f64 {
    (p_success_exact(p) * pdf_y(p).integral(p.t_sfd, p.t_payload)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gain {
    /// G = Δt2/Δt1.
    pub g: f64,
    /// Windowed over hopped probability; infinite when hopping zeroes it.
    pub exact_ratio: f64,
}

pub fn gain(p: &AnalyticParams) -> Gain {
    let hopped = p_success_hopped(p);
    let windowed = p_success_windowed(p);
    Gain {
        g: p.dt2() / p.dt1(),
        exact_ratio: if hopped > 0.0 {
            windowed / hopped
        } else if windowed > 0.0 {
            f64::INFINITY
        } else {
            f64::NAN
        },
    }
}

/// One row of the analytic table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticRow {
    pub theta_over_x: f64,
    pub exact: f64,
    pub bound: f64,
    pub windowed: f64,
    pub hopped: f64,
    pub gain: f64,
}

pub fn analytic_row(p: &AnalyticParams) -> AnalyticRow {
    AnalyticRow {
        theta_over_x: p.theta / p.x_t,
        exact: p_success_exact(p),
        bound: p_success_hoeffding(p),
        windowed: p_success_windowed(p),
        hopped: p_success_hopped(p),
        gain: p.dt2() / p.dt1(),
    }
}
