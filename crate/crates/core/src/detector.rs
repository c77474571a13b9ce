//! Threshold click detectors: the eye model and non-photon-number-resolving
//! laboratory detectors (threshold 1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{binomial_ln_pmf, binomial_sf, poisson_ln_pmf, poisson_sf};

/// Clicks when `Binomial(n, eta) + Poisson(dark_mean)` reaches `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    pub theta: u32,
    pub eta: f64,
    pub dark_mean: f64,
}

impl DetectorModel {
    pub fn new(theta: u32, eta: f64, dark_mean: f64) -> Result<Self> {
        let det = Self {
            theta,
            eta,
            dark_mean,
        };
        det.validate()?;
        Ok(det)
    }

    /// Reference eye: threshold 7 photons, 8% efficiency.
    pub fn reference_eye() -> Self {
        Self {
            theta: 7,
            eta: 0.08,
            dark_mean: 0.0,
        }
    }

    /// Eye with a 3-photon threshold and 8% efficiency.
    pub fn low_threshold_eye() -> Self {
        Self {
            theta: 3,
            eta: 0.08,
            dark_mean: 0.0,
        }
    }

    /// Eye with a 7-photon threshold and 10% efficiency.
    pub fn high_efficiency_eye() -> Self {
        Self {
            theta: 7,
            eta: 0.10,
            dark_mean: 0.0,
        }
    }

    /// Non-photon-number-resolving detector.
    pub fn non_pnr(eta: f64) -> Self {
        Self {
            theta: 1,
            eta,
            dark_mean: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta < 1 {
            return Err(Error::invalid("theta", "threshold must be at least 1 photon"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(
                "eta",
                format!("efficiency {} outside [0, 1]", self.eta),
            ));
        }
        if !(self.dark_mean >= 0.0) || !self.dark_mean.is_finite() {
            return Err(Error::invalid(
                "dark_mean",
                format!("{} is not a finite non-negative mean", self.dark_mean),
            ));
        }
        Ok(())
    }

    /// Click probability for the Fock state `|n>`.
    pub fn click_prob_fock(&self, n: usize) -> f64 {
        click_prob_fock(n, self)
    }

    pub fn click_prob_coherent(&self, mu: f64) -> f64 {
        click_prob_coherent(mu, self)
    }

    /// `f(n)` for `n = 0..len`.
    pub fn fock_response(&self, len: usize) -> Vec<f64> {
        (0..len).map(|n| click_prob_fock(n, self)).collect()
    }
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel::reference_eye()
    }
}

pub fn click_prob_fock(n: usize, det: &DetectorModel) -> f64 {
    let theta = det.theta as u64;
    let n = n as u64;
    if det.dark_mean == 0.0 {
        return binomial_sf(theta, n, det.eta);
    }
    // P(B >= theta) + sum_{j < theta} P(B = j) P(Poisson >= theta - j), or its
    // complement from the no-click sum once the click probability passes 1/2
    let direct = binomial_sf(theta, n, det.eta)
        + (0..theta.min(n + 1))
            .map(|j| binomial_ln_pmf(j, n, det.eta).exp() * poisson_sf(theta - j, det.dark_mean))
            .sum::<f64>();
    if direct < 0.5 {
        return direct;
    }
    let no_click: f64 = (0..theta.min(n + 1))
        .map(|j| {
            let dark_below: f64 = (0..theta - j).map(|i| poisson_ln_pmf(i, det.dark_mean).exp()).sum();
            binomial_ln_pmf(j, n, det.eta).exp() * dark_below
        })
        .sum();
    (1.0 - no_click).clamp(0.0, 1.0)
}

/// Click probability for a coherent state of mean photon number `mu`.
pub fn click_prob_coherent(mu: f64, det: &DetectorModel) -> f64 {
    debug_assert!(mu >= 0.0);
    poisson_sf(det.theta as u64, det.eta * mu + det.dark_mean)
}

/// Frequency-of-seeing curve: `click_prob_coherent` over a grid of means.
pub fn frequency_of_seeing_curve(mu_grid: &[f64], det: &DetectorModel) -> Result<Vec<f64>> {
    if let Some(mu) = mu_grid.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
        return Err(Error::invalid("mu_grid", format!("{mu} is not a finite non-negative mean")));
    }
    Ok(mu_grid.iter().map(|&mu| click_prob_coherent(mu, det)).collect())
}
