//! Heralded preparation of the vacuum/single-photon superposition.
//!
//! A heralded photon (coupling `eta_c`) meets an unbalanced beamsplitter of
//! transmission `t`: `|1> -> sqrt(t)|1,0> - sqrt(1-t)|0,1>` (transmitted,
//! reflected). The reflected mode is displaced by `beta` and measured with a
//! non-photon-number-resolving detector of efficiency `eta_d`; a click leaves
//! the transmitted mode close to `(|0> + |1>)/sqrt(2)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{check_amplitude, displaced_columns, ComplexAmplitude, DensityMatrix};

const MIN_CLICK_PROB: f64 = 1e-12;
const REFLECTED_TAIL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparationParams {
    pub eta_c: f64,
    pub t: f64,
    pub beta: ComplexAmplitude,
    pub eta_d: f64,
    pub reflected_cutoff: usize,
}

impl Default for PreparationParams {
    fn default() -> Self {
        Self {
            eta_c: 0.8,
            t: 0.98,
            beta: Complex64::new(0.08, 0.0),
            eta_d: 0.5,
            reflected_cutoff: 8,
        }
    }
}

impl PreparationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_c", self.eta_c), ("t", self.t), ("eta_d", self.eta_d)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("{v} outside [0, 1]")));
            }
        }
        check_amplitude(self.beta).map_err(|_| Error::invalid("beta", "not a valid displacement"))?;
        if self.reflected_cutoff < 4 {
            return Err(Error::invalid(
                "reflected_cutoff",
                format!("{} is below the minimum of 4", self.reflected_cutoff),
            ));
        }
        Ok(())
    }
}

/// Conditional state of the transmitted mode, before the analysis displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedState {
    pub rho: DensityMatrix,
    pub p_click_given_herald: f64,
    /// `max_phi <psi_phi|rho|psi_phi>` with `psi_phi = (|0> + e^{i phi}|1>)/sqrt(2)`.
    pub fidelity_plus: f64,
    /// Phase `phi` attaining `fidelity_plus`.
    pub coherence_phase: f64,
}

impl PreparedState {
    /// Square-root (Uhlmann) fidelity with the best-aligned superposition.
    pub fn root_fidelity_plus(&self) -> f64 {
        self.fidelity_plus.sqrt()
    }

    /// The state rotated so that its `|0><1|` coherence is real and non-negative,
    /// i.e. aligned with a real analysis displacement.
    pub fn aligned_rho(&self) -> DensityMatrix {
        self.rho.rotated(self.coherence_phase)
    }
}

pub fn conditional_state(params: &PreparationParams) -> Result<PreparedState> {
    params.validate()?;
    let cutoff = params.reflected_cutoff;
    // <n|D(beta)|0>, <n|D(beta)|1> for the reflected mode
    let cols = displaced_columns(2, cutoff, params.beta);
    let tail = cols
        .iter()
        .map(|col| 1.0 - col.iter().map(|a| a.norm_sqr()).sum::<f64>())
        .fold(0.0, f64::max);
    if tail > REFLECTED_TAIL_TOL {
        return Err(Error::CutoffInsufficient { cutoff, tail });
    }
    let povm: Vec<f64> = (0..cutoff)
        .map(|n| 1.0 - (1.0 - params.eta_d).powi(n as i32))
        .collect();

    // photon branch: |0>_t (x) psi_0 + |1>_t (x) psi_1 on the reflected mode
    let rt = (1.0 - params.t).sqrt();
    let tt = params.t.sqrt();
    let psi0: Vec<Complex64> = cols[1].iter().map(|a| -rt * a).collect();
    let psi1: Vec<Complex64> = cols[0].iter().map(|a| tt * a).collect();
    let branches = [&psi0, &psi1];
    let overlap = |u: &[Complex64], v: &[Complex64]| -> Complex64 {
        (0..cutoff).map(|n| povm[n] * u[n] * v[n].conj()).sum()
    };

    let mut rho = DMatrix::from_fn(2, 2, |i, j| params.eta_c * overlap(branches[i], branches[j]));
    // vacuum branch: no photon entered the splitter
    rho[(0, 0)] += (1.0 - params.eta_c) * overlap(&cols[0], &cols[0]);

    let p_click = rho.trace().re;
    if !(p_click >= MIN_CLICK_PROB) {
        return Err(Error::ZeroClickProbability(p_click));
    }
    let rho = DensityMatrix::normalized(rho)?;
    let coherence = rho.get(1, 0);
    let (fidelity_plus, coherence_phase) = if coherence.norm() == 0.0 {
        (0.5, 0.0)
    } else {
        (0.5 + coherence.norm(), coherence.arg())
    };
    Ok(PreparedState {
        rho,
        p_click_given_herald: p_click,
        fidelity_plus: fidelity_plus.min(1.0),
        coherence_phase,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBudget {
    pub herald_rate: f64,
    pub trigger_rate: f64,
}

/// Heralding and trigger rates (Hz) from the pump and heralding chain.
pub fn rate_budget(
    rep_rate: f64,
    duty_cycle: f64,
    p_pair: f64,
    eta_herald: f64,
    p_click_given_herald: f64,
) -> Result<RateBudget> {
    if !(rep_rate >= 0.0) || !rep_rate.is_finite() {
        return Err(Error::invalid("rep_rate", format!("{rep_rate} is not a finite rate")));
    }
    for (name, v) in [
        ("duty_cycle", duty_cycle),
        ("p_pair", p_pair),
        ("eta_herald", eta_herald),
        ("p_click_given_herald", p_click_given_herald),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(name, format!("{v} outside [0, 1]")));
        }
    }
    let herald_rate = rep_rate * duty_cycle * p_pair * eta_herald;
    Ok(RateBudget {
        herald_rate,
        trigger_rate: herald_rate * p_click_given_herald,
    })
}

/// Signal-to-noise after a pulse picker with the given extinction ratio.
pub fn snr_budget(noise_over_signal: f64, extinction_ratio: f64) -> Result<f64> {
    if !(noise_over_signal > 0.0) || !(extinction_ratio > 0.0) {
        return Err(Error::invalid("snr_budget", "inputs must be positive"));
    }
    Ok(extinction_ratio / noise_over_signal)
}
