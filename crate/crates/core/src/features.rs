//! Load-invariant slope features of the three-phase current trajectory.
//!
//! Currents are mapped into the stationary α-β frame with the
//! amplitude-invariant Concordia transform
//!
//! ```text
//! i_α = √(2/3) · (i_a − i_b/2 − i_c/2)
//! i_β = √(2/3) · (√3/2) · (i_b − i_c)
//! ```
//!
//! For a zero-sum triple this reduces to `i_α = √(3/2)·i_a` and
//! `i_β = √2·i_b + i_a/√2`; the same closed form with the phases rotated
//! (b → c → a) gives the frames anchored on phase b and phase c.
//!
//! Two slopes are taken in each of the three frames: the position slope
//! `ψ1 = i_α / i_β` and the trajectory slope `ψ2 = Δi_α / Δi_β` between two
//! consecutive samples. Both are ratios, so a current scaled by any positive
//! factor (a heavier or lighter resistive load) yields the same features.
//!
//! Ratios blow up twice per cycle where the denominator crosses zero; every
//! slope is clamped to `±PSI_MAX`.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use crate::fault::Phase;
use crate::sim::CurrentSample;

pub const PSI_MAX: f64 = 10.0;

/// Relative size below which a denominator counts as zero.
const DEN_EPS: f64 = 1e-9;

const SQRT_3_2: f64 = 1.224_744_871_391_589; // √(3/2)
const SQRT_2_3: f64 = 0.816_496_580_927_726; // √(2/3)

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaBeta {
    pub alpha: f64,
    pub beta: f64,
}

pub fn clarke(ia: f64, ib: f64, ic: f64) -> AlphaBeta {
    AlphaBeta {
        alpha: SQRT_2_3 * (ia - 0.5 * ib - 0.5 * ic),
        beta: FRAC_1_SQRT_2 * (ib - ic),
    }
}

/// α-β components with `first_phase` playing the role of phase a.
/// Assumes the currents sum to zero.
pub fn rotated_components(first_phase: Phase, s: &CurrentSample) -> AlphaBeta {
    let first = s.phase_current(first_phase);
    let second = s.phase_current(first_phase.next());
    AlphaBeta {
        alpha: SQRT_3_2 * first,
        beta: SQRT_2 * second + first * FRAC_1_SQRT_2,
    }
}

fn bounded_ratio(num: f64, den: f64) -> f64 {
    let eps = DEN_EPS * num.abs().max(1.0);
    if den.abs() < eps {
        if num.abs() < eps {
            return 0.0;
        }
        let sign = if (num >= 0.0) == (den >= 0.0) {
            1.0
        } else {
            -1.0
        };
        return sign * PSI_MAX;
    }
    (num / den).clamp(-PSI_MAX, PSI_MAX)
}

/// Position slope `i_α / i_β`.
pub fn slope1(v: AlphaBeta) -> f64 {
    bounded_ratio(v.alpha, v.beta)
}

/// Trajectory slope between two consecutive samples.
pub fn slope2(curr: AlphaBeta, prev: AlphaBeta) -> f64 {
    bounded_ratio(curr.alpha - prev.alpha, curr.beta - prev.beta)
}

/// `[ψA1, ψB1, ψC1, ψA2, ψB2, ψC2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; 6]);

impl FeatureVector {
    pub const NAMES: [&'static str; 6] = ["psiA1", "psiB1", "psiC1", "psiA2", "psiB2", "psiC2"];

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max_abs_diff(&self, other: &FeatureVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn feature_vector(curr: &CurrentSample, prev: &CurrentSample) -> FeatureVector {
    let mut out = [0.0; 6];
    for phase in Phase::ALL {
        let c = rotated_components(phase, curr);
        let p = rotated_components(phase, prev);
        out[phase.index()] = slope1(c);
        out[3 + phase.index()] = slope2(c, p);
    }
    FeatureVector(out)
}

/// Which representation of a sample the classifier consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Six slope features.
    Transformed,
    /// Instantaneous `(i_a, i_b, i_c)`.
    Raw,
}

impl FeatureMode {
    pub fn dim(self) -> usize {
        match self {
            FeatureMode::Transformed => 6,
            FeatureMode::Raw => 3,
        }
    }

    pub fn extract(self, curr: &CurrentSample, prev: &CurrentSample) -> Vec<f64> {
        match self {
            FeatureMode::Transformed => feature_vector(curr, prev).0.to_vec(),
            FeatureMode::Raw => curr.currents().to_vec(),
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureMode::Transformed => "transformed",
            FeatureMode::Raw => "raw",
        })
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "transformed" => Ok(FeatureMode::Transformed),
            "raw" => Ok(FeatureMode::Raw),
            other => Err(crate::Error::Config(format!(
                "unknown feature mode `{other}`"
            ))),
        }
    }
}
