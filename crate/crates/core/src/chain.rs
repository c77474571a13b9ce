//! The full experiment chain: heralded preparation, analysis displacement,
//! beamsplitter and two eyes, reduced to one statistics cell.

use num_complex::Complex64;

use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::fock::{number_distribution, ComplexAmplitude, DEFAULT_TAIL_TOL};
use crate::preparation::{conditional_state, PreparationParams, PreparedState};
use crate::statistics::CellProbabilities;
use crate::witness::{singles_and_coincidences, ClickStats};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainParams {
    pub prep: PreparationParams,
    /// Analysis displacement, with its phase measured from the prepared
    /// state's `|0><1|` coherence.
    pub alpha: ComplexAmplitude,
    pub eye1: DetectorModel,
    pub eye2: DetectorModel,
    pub bs_reflectance: f64,
    pub tail_tol: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            prep: PreparationParams::default(),
            alpha: Complex64::new(10.99, 0.0),
            eye1: DetectorModel::reference_eye(),
            eye2: DetectorModel::reference_eye(),
            bs_reflectance: 0.5,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }
}

impl ChainParams {
    /// Same eye model on both ports.
    pub fn with_eye(mut self, eye: DetectorModel) -> Self {
        self.eye1 = eye;
        self.eye2 = eye;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutcome {
    pub prepared: PreparedState,
    pub stats: ClickStats,
    /// Symmetrized cell used by the certification statistics.
    pub cell: CellProbabilities,
    /// Relative difference of the two single probabilities.
    pub asymmetry: f64,
}

impl ChainOutcome {
    pub fn asymmetry_warning(&self) -> Option<String> {
        (self.asymmetry > crate::statistics::ASYMMETRY_WARNING).then(|| {
            format!(
                "single probabilities differ by {:.3}% (ps1 = {}, ps2 = {}); using their mean",
                100.0 * self.asymmetry,
                self.stats.ps1,
                self.stats.ps2
            )
        })
    }
}

pub fn run_chain(params: &ChainParams) -> Result<ChainOutcome> {
    if !(0.0..=1.0).contains(&params.bs_reflectance) {
        return Err(Error::invalid(
            "bs_reflectance",
            format!("{} outside [0, 1]", params.bs_reflectance),
        ));
    }
    let prepared = conditional_state(&params.prep)?;
    let p = number_distribution(&prepared.aligned_rho(), params.alpha, params.tail_tol)?;
    let stats = singles_and_coincidences(&p, &params.eye1, &params.eye2, params.bs_reflectance)?;
    let (cell, asymmetry) = CellProbabilities::from_stats(&stats)?;
    Ok(ChainOutcome {
        prepared,
        stats,
        cell,
        asymmetry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn working_point_cell() {
        let out = run_chain(&ChainParams::default()).unwrap();
        assert!((out.cell.ps - 0.26596).abs() < 2e-4, "{:?}", out.cell);
        assert!((out.cell.pc - 0.069713).abs() < 2e-4);
        assert!(out.asymmetry < 1e-12);
        assert!(out.asymmetry_warning().is_none());
        assert!(out.cell.g2() < 1.0);
    }

    #[test]
    fn unbalanced_splitter_warns() {
        let params = ChainParams {
            bs_reflectance: 0.6,
            ..ChainParams::default()
        };
        let out = run_chain(&params).unwrap();
        assert!(out.asymmetry_warning().is_some());
    }
}
