//! ITU-T G.107 E-model voice quality scoring: transmission rating factor R
//! and its mapping to an estimated Mean Opinion Score.
//!
//! The module scores measured `(delay, loss)` pairs per reporting window.
//! Two impairment terms are modeled:
//!
//! * `Id` — delay impairment, linear in the mouth-to-ear delay with an extra
//!   penalty slope beyond the 177.3 ms interactivity threshold (G.114 region).
//! * `Ie` — equipment/loss impairment, the logarithmic packet-loss curve with
//!   per-codec coefficients (G.113 appendix form).
//!
//! All other G.107 terms are folded into their defaults so that with zero
//! impairments R comes out at 94.2, the customary PCM reference point.

use thiserror::Error;

/// Default simultaneous-impairment term `Is`.
pub const DEFAULT_IS: f64 = 5.8;
/// Default advantage factor `A` (fixed network, no access advantage).
pub const DEFAULT_A: f64 = 0.0;
/// R achieved with all defaults and zero measured impairment:
/// `100 - DEFAULT_IS + DEFAULT_A`.
pub const R_CLEAN: f64 = 94.2;
/// Delay in milliseconds beyond which the steeper impairment slope applies.
pub const DELAY_KNEE_MS: f64 = 177.3;

#[derive(Debug, Error, PartialEq)]
pub enum EmodelError {
    #[error("delay must be non-negative, got {0} ms")]
    NegativeDelay(f64),
    #[error("loss fraction must lie in [0, 1], got {0}")]
    LossOutOfRange(f64),
}

/// Codec whose loss-impairment coefficients are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Codec {
    /// G.711 (64 kbps PCM) without PLC: `Ie = 0 + 30 ln(1 + 15 e)`.
    G711,
}

impl Codec {
    /// `(gamma1, gamma2, gamma3)` for `Ie = g1 + g2 * ln(1 + g3 * e)`.
    pub fn loss_coefficients(self) -> (f64, f64, f64) {
        match self {
            Codec::G711 => (0.0, 30.0, 15.0),
        }
    }
}

/// Delay impairment `Id` for a one-way (mouth-to-ear) delay in milliseconds.
///
/// `Id = 0.024 d + 0.11 (d - 177.3) H(d - 177.3)` where `H` is the unit step.
pub fn compute_id(delay_ms: f64) -> Result<f64, EmodelError> {
    if !(delay_ms >= 0.0) {
        return Err(EmodelError::NegativeDelay(delay_ms));
    }
    let base = 0.024 * delay_ms;
    let excess = if delay_ms > DELAY_KNEE_MS {
        0.11 * (delay_ms - DELAY_KNEE_MS)
    } else {
        0.0
    };
    Ok(base + excess)
}

/// Equipment/loss impairment `Ie` for a packet-loss fraction `e` in `[0, 1]`.
pub fn compute_ie(loss_fraction: f64, codec: Codec) -> Result<f64, EmodelError> {
    if !(0.0..=1.0).contains(&loss_fraction) || loss_fraction.is_nan() {
        return Err(EmodelError::LossOutOfRange(loss_fraction));
    }
    let (g1, g2, g3) = codec.loss_coefficients();
    Ok(g1 + g2 * (1.0 + g3 * loss_fraction).ln())
}

/// Transmission rating with the full term structure:
/// `R = 100 - Is - Ie - Id + A`.
pub fn compute_r_full(is: f64, ie: f64, id: f64, a: f64) -> f64 {
    100.0 - is - ie - id + a
}

/// Transmission rating with default `Is` and `A`: `R = 94.2 - Ie - Id`.
pub fn compute_r(ie: f64, id: f64) -> f64 {
    compute_r_full(DEFAULT_IS, ie, id, DEFAULT_A)
}

/// Maps a rating factor to an estimated Mean Opinion Score.
///
/// Piecewise: `R <= 0` scores 1.0, `R >= 100` scores 4.5, and in between the
/// cubic `1 + 0.035 R + 7e-6 R (R - 60)(100 - R)` applies, clamped into
/// `[1, 4.5]`. The clamp matters: the raw cubic dips slightly below 1 for
/// R below about 6.5, and a score below "bad" is not meaningful.
pub fn r_to_mos(r: f64) -> f64 {
    if r <= 0.0 {
        return 1.0;
    }
    if r >= 100.0 {
        return 4.5;
    }
    let mos = 1.0 + 0.035 * r + 7.0e-6 * r * (r - 60.0) * (100.0 - r);
    mos.clamp(1.0, 4.5)
}

/// Measured inputs for one scoring window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoiceWindowStats {
    /// Mean mouth-to-ear delay over packets delivered in the window, ms.
    pub mean_delay_ms: f64,
    /// Fraction of packets transmitted in the window that were lost.
    pub loss_fraction: f64,
    /// Packets delivered in the window.
    pub delivered_packets: u64,
}

/// Full impairment breakdown for one scored window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoiceQualityScore {
    pub r_value: f64,
    pub mos: f64,
    pub id_component: f64,
    pub ie_component: f64,
    pub mean_delay_ms: f64,
    pub loss_fraction: f64,
}

/// Outcome of scoring a window: a score, or an explicit no-data marker for
/// windows in which nothing was delivered (never a fabricated number).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowScore {
    Scored(VoiceQualityScore),
    NoData,
}

impl WindowScore {
    pub fn score(&self) -> Option<&VoiceQualityScore> {
        match self {
            WindowScore::Scored(s) => Some(s),
            WindowScore::NoData => None,
        }
    }
}

/// Scores one window of measurements with the given codec.
pub fn score_window(stats: &VoiceWindowStats, codec: Codec) -> Result<WindowScore, EmodelError> {
    if stats.delivered_packets == 0 {
        return Ok(WindowScore::NoData);
    }
    let id = compute_id(stats.mean_delay_ms)?;
    let ie = compute_ie(stats.loss_fraction, codec)?;
    let r = compute_r(ie, id);
    Ok(WindowScore::Scored(VoiceQualityScore {
        r_value: r,
        mos: r_to_mos(r),
        id_component: id,
        ie_component: ie,
        mean_delay_ms: stats.mean_delay_ms,
        loss_fraction: stats.loss_fraction,
    }))
}
