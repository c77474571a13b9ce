//! Non-classicality witnesses for two click detectors behind a beamsplitter.
//!
//! Any mixture of coherent states satisfies `pc >= ps1 * ps2` as long as both
//! click probabilities increase with the photon number, so `g2 < 1` (or a
//! negative difference `pc - ps1 ps2`) certifies non-classical light.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::detector::{click_prob_coherent, DetectorModel};
use crate::error::{Error, Result};
use crate::fock::{number_distribution, split_joint, ComplexAmplitude, DensityMatrix, NumberDistribution};

const STATS_TOL: f64 = 1e-12;

/// Singles on each detector and their coincidence, per run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickStats {
    pub ps1: f64,
    pub ps2: f64,
    pub pc: f64,
}

impl ClickStats {
    pub fn new(ps1: f64, ps2: f64, pc: f64) -> Result<Self> {
        let s = Self { ps1, ps2, pc };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { ps1, ps2, pc } = *self;
        for (name, v) in [("ps1", ps1), ("ps2", ps2), ("pc", pc)] {
            if !(v >= -STATS_TOL && v <= 1.0 + STATS_TOL) {
                return Err(Error::invalid(name, format!("{v} outside [0, 1]")));
            }
        }
        if pc > ps1.min(ps2) + STATS_TOL {
            return Err(Error::invalid("pc", format!("{pc} exceeds min(ps1, ps2)")));
        }
        if ps1 + ps2 - pc > 1.0 + STATS_TOL {
            return Err(Error::invalid("ps1 + ps2 - pc", "exceeds 1"));
        }
        Ok(())
    }

    /// Mean single probability of the two detectors.
    pub fn mean_single(&self) -> f64 {
        0.5 * (self.ps1 + self.ps2)
    }
}

/// Finite mixture of coherent states `sum_i w_i |alpha_i><alpha_i|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalEnsemble {
    components: Vec<(ComplexAmplitude, f64)>,
}

impl ClassicalEnsemble {
    pub fn new(components: Vec<(ComplexAmplitude, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("components", "empty ensemble"));
        }
        if components.iter().any(|(a, w)| !(*w >= 0.0) || !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::invalid("components", "weights must be non-negative, amplitudes finite"));
        }
        let total: f64 = components.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("components", format!("weights sum to {total}")));
        }
        Ok(Self { components })
    }

    pub fn coherent(alpha: ComplexAmplitude) -> Self {
        Self {
            components: vec![(alpha, 1.0)],
        }
    }

    pub fn components(&self) -> &[(ComplexAmplitude, f64)] {
        &self.components
    }
}

/// Singles and coincidences of a photon-number distribution split with reflectance `r`;
/// detector 1 sits on the reflected port.
pub fn singles_and_coincidences(
    p: &NumberDistribution,
    det1: &DetectorModel,
    det2: &DetectorModel,
    r: f64,
) -> Result<ClickStats> {
    det1.validate()?;
    det2.validate()?;
    let joint = split_joint(p, r)?;
    let f1 = det1.fock_response(joint.size());
    let f2 = det2.fock_response(joint.size());
    let (mut ps1, mut ps2, mut pc) = (0.0, 0.0, 0.0);
    for (k, m, w) in joint.iter() {
        ps1 += w * f1[k];
        ps2 += w * f2[m];
        pc += w * f1[k] * f2[m];
    }
    Ok(ClickStats { ps1, ps2, pc })
}

pub fn g2(stats: &ClickStats) -> Result<f64> {
    let denom = stats.ps1 * stats.ps2;
    if denom == 0.0 {
        return Err(Error::UndefinedRatio("product of singles is zero"));
    }
    Ok(stats.pc / denom)
}

/// `pc - ps1 ps2`; non-negative for every classical state.
pub fn witness_difference(stats: &ClickStats) -> f64 {
    stats.pc - stats.ps1 * stats.ps2
}

pub fn classical_ensemble_stats(
    ens: &ClassicalEnsemble,
    det1: &DetectorModel,
    det2: &DetectorModel,
    r: f64,
) -> Result<ClickStats> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::invalid("r", format!("{r} outside [0, 1]")));
    }
    let (mut ps1, mut ps2, mut pc) = (0.0, 0.0, 0.0);
    for (alpha, w) in &ens.components {
        let mu = alpha.norm_sqr();
        let s1 = click_prob_coherent(r * mu, det1);
        let s2 = click_prob_coherent((1.0 - r) * mu, det2);
        ps1 += w * s1;
        ps2 += w * s2;
        pc += w * s1 * s2;
    }
    Ok(ClickStats { ps1, ps2, pc })
}

/// Photon-number variance of `D(alpha)(|0>+|1>)/sqrt(2)` relative to a
/// coherent state of equal mean.
pub fn variance_ratio(alpha: ComplexAmplitude) -> Result<f64> {
    let x = alpha.norm_sqr();
    let denom = 2.0 + 4.0 * x + 4.0 * alpha.re;
    if !(denom > 0.0) {
        return Err(Error::UndefinedRatio("variance ratio denominator is not positive"));
    }
    Ok((1.0 + 8.0 * x - 4.0 * alpha.re * alpha.re) / denom)
}

/// `(<N^2> - <N>) / <N>^2`; at least 1 for classical light.
pub fn number_moment_ratio(p: &NumberDistribution) -> Result<f64> {
    let mean = p.mean();
    if !(mean > 0.0) {
        return Err(Error::UndefinedRatio("zero-mean distribution"));
    }
    Ok((p.second_moment() - mean) / (mean * mean))
}

/// One row of an alpha scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub alpha: f64,
    pub stats: ClickStats,
    pub g2: f64,
}

/// Click statistics of `D(alpha) rho` for a real displacement.
pub fn displaced_state_stats(
    rho: &DensityMatrix,
    alpha: f64,
    det1: &DetectorModel,
    det2: &DetectorModel,
    r: f64,
    tail_tol: f64,
) -> Result<ClickStats> {
    let p = number_distribution(rho, Complex64::new(alpha, 0.0), tail_tol)?;
    singles_and_coincidences(&p, det1, det2, r)
}

/// `g2` over a grid of real displacements, evaluated in parallel.
pub fn g2_scan(
    rho: &DensityMatrix,
    alphas: &[f64],
    det1: &DetectorModel,
    det2: &DetectorModel,
    r: f64,
    tail_tol: f64,
) -> Result<Vec<ScanPoint>> {
    alphas
        .par_iter()
        .map(|&alpha| {
            let stats = displaced_state_stats(rho, alpha, det1, det2, r, tail_tol)?;
            Ok(ScanPoint {
                alpha,
                stats,
                g2: g2(&stats)?,
            })
        })
        .collect()
}

/// Locates `g2 = 1` in `[lo, hi]` by bisection to `resolution` in alpha.
/// `g2 - 1` must change sign over the bracket.
pub fn g2_crossing(
    rho: &DensityMatrix,
    bracket: (f64, f64),
    det1: &DetectorModel,
    det2: &DetectorModel,
    r: f64,
    tail_tol: f64,
    resolution: f64,
) -> Result<f64> {
    let excess = |alpha: f64| -> Result<f64> {
        Ok(g2(&displaced_state_stats(rho, alpha, det1, det2, r, tail_tol)?)? - 1.0)
    };
    let (mut lo, mut hi) = bracket;
    let f_lo = excess(lo)?;
    let f_hi = excess(hi)?;
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::invalid("bracket", "g2 - 1 does not change sign"));
    }
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        if excess(mid)?.signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
