//! Run configuration: a TOML document with one section per parameter group.
//! Every field is optional; omitted fields take the working-point defaults.
//!
//! ```toml
//! [eye]
//! theta = 7
//! eta = 0.08
//!
//! [prep]
//! eta_c = 0.8
//! t = 0.98
//! beta = 0.08            # or { re = 0.08, im = 0.0 }
//! eta_d = 0.5
//!
//! [analysis]
//! alpha = 10.99
//! bs_reflectance = 0.5
//!
//! [statistics]
//! epsilon = 0.01
//! coarse_n = 12500
//! a = 40.0
//! ```

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chain::ChainParams;
use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::fock::{check_amplitude, ComplexAmplitude, DEFAULT_TAIL_TOL};
use crate::optimizer::{Bound, ChainConfig, Objective, OptimizationSpec, Parameter};
use crate::preparation::PreparationParams;
use crate::statistics::{ClassicalScan, ClassicalSearch, StopOptions, SummationLimits, CHI0_REL_TOL};

/// A displacement written either as a real number or as `{ re, im }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AmplitudeValue {
    Real(f64),
    Complex { re: f64, im: f64 },
}

impl AmplitudeValue {
    pub fn value(&self) -> ComplexAmplitude {
        match *self {
            AmplitudeValue::Real(re) => Complex64::new(re, 0.0),
            AmplitudeValue::Complex { re, im } => Complex64::new(re, im),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepSection {
    pub eta_c: f64,
    pub t: f64,
    pub beta: AmplitudeValue,
    pub eta_d: f64,
    pub reflected_cutoff: usize,
}

impl Default for PrepSection {
    fn default() -> Self {
        let p = PreparationParams::default();
        Self {
            eta_c: p.eta_c,
            t: p.t,
            beta: AmplitudeValue::Real(p.beta.re),
            eta_d: p.eta_d,
            reflected_cutoff: p.reflected_cutoff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub alpha: AmplitudeValue,
    pub bs_reflectance: f64,
    pub tail_tol: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            alpha: AmplitudeValue::Real(10.99),
            bs_reflectance: 0.5,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchKind {
    /// Coherent boundary only.
    Boundary,
    /// Full `pc >= ps^2` grid.
    Grid,
    /// Boundary search verified on the full grid.
    Verified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatisticsSection {
    pub epsilon: f64,
    pub coarse_n: u64,
    pub a: f64,
    pub search: SearchKind,
    pub scan_ps_points: usize,
    pub scan_pc_points: usize,
    pub chi0_rel_tol: f64,
    pub tail_tolerance: f64,
}

impl Default for StatisticsSection {
    fn default() -> Self {
        let scan = ClassicalScan::default();
        Self {
            epsilon: 0.01,
            coarse_n: 12500,
            a: 40.0,
            search: SearchKind::Verified,
            scan_ps_points: scan.ps_points,
            scan_pc_points: scan.pc_points,
            chi0_rel_tol: CHI0_REL_TOL,
            tail_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub seed: u64,
    pub trials: usize,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self { seed: 20130901, trials: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsSection {
    /// Largest number of `Ns` terms in one windowed summation.
    pub max_window: u64,
    /// Largest number of coarse-grid points in one stopping curve.
    pub max_points: usize,
    pub window_sigmas: f64,
}

impl Default for LimitsSection {
    fn default() -> Self {
        let lim = SummationLimits::default();
        Self {
            max_window: lim.max_window,
            max_points: StopOptions::default().max_points,
            window_sigmas: lim.window_sigmas,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    ExpectedRuns,
    StopProbability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub objective: ObjectiveKind,
    /// Run count for the stop-probability objective.
    pub n: u64,
    pub budget: usize,
    pub xtol: f64,
    pub alpha: BoundSection,
    pub beta: BoundSection,
    pub a: BoundSection,
    /// Optimizes the preparation transmission jointly when present.
    pub t: Option<BoundSection>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let std = OptimizationSpec::standard(Objective::ExpectedRuns { epsilon: 0.01, coarse_n: 12500 });
        let b = |i: usize| BoundSection {
            lo: std.bounds[i].lo,
            hi: std.bounds[i].hi,
            points: std.bounds[i].grid_points,
        };
        Self {
            objective: ObjectiveKind::ExpectedRuns,
            n: 350_000,
            budget: std.budget,
            xtol: std.xtol,
            alpha: b(0),
            beta: b(1),
            a: b(2),
            t: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub eye: DetectorModel,
    pub prep: PrepSection,
    pub analysis: AnalysisSection,
    pub statistics: StatisticsSection,
    pub montecarlo: MonteCarloSection,
    pub limits: LimitsSection,
    pub optimizer: OptimizerSection,
}

fn field_err(field: &str, e: Error) -> Error {
    Error::Config(format!("{field}: {e}"))
}

fn check_unit(field: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{field}: {v} outside [0, 1]")));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.eye.validate().map_err(|e| field_err("eye", e))?;
        self.prep_params().validate().map_err(|e| field_err("prep", e))?;
        check_amplitude(self.analysis.alpha.value()).map_err(|e| field_err("analysis.alpha", e))?;
        check_unit("analysis.bs_reflectance", self.analysis.bs_reflectance)?;
        if !(self.analysis.tail_tol > 0.0 && self.analysis.tail_tol <= 1e-4) {
            return Err(Error::Config(format!(
                "analysis.tail_tol: {} outside (0, 1e-4]",
                self.analysis.tail_tol
            )));
        }
        let s = &self.statistics;
        if !(s.epsilon > 0.0 && s.epsilon <= 0.5) {
            return Err(Error::Config(format!("statistics.epsilon: {} outside (0, 0.5]", s.epsilon)));
        }
        if s.coarse_n < 1 {
            return Err(Error::Config("statistics.coarse_n: must be at least 1".into()));
        }
        if !(s.a >= 0.0) || !s.a.is_finite() {
            return Err(Error::Config(format!("statistics.a: {} must be finite and >= 0", s.a)));
        }
        if s.scan_ps_points < 2 || s.scan_pc_points < 2 {
            return Err(Error::Config("statistics.scan_*_points: need at least 2 points per axis".into()));
        }
        if !(s.chi0_rel_tol > 0.0 && s.chi0_rel_tol < 1.0) {
            return Err(Error::Config(format!("statistics.chi0_rel_tol: {} outside (0, 1)", s.chi0_rel_tol)));
        }
        if !(s.tail_tolerance > 0.0 && s.tail_tolerance < 1.0) {
            return Err(Error::Config(format!(
                "statistics.tail_tolerance: {} outside (0, 1)",
                s.tail_tolerance
            )));
        }
        if self.montecarlo.trials < 100 {
            return Err(Error::Config(format!(
                "montecarlo.trials: {} is below the minimum of 100",
                self.montecarlo.trials
            )));
        }
        let l = &self.limits;
        if l.max_window < 1 || l.max_points < 1 || !(l.window_sigmas >= 1.0) {
            return Err(Error::Config(
                "limits: max_window and max_points must be positive, window_sigmas >= 1".into(),
            ));
        }
        self.optimization_spec().validate().map_err(|e| field_err("optimizer", e))?;
        Ok(())
    }

    pub fn prep_params(&self) -> PreparationParams {
        PreparationParams {
            eta_c: self.prep.eta_c,
            t: self.prep.t,
            beta: self.prep.beta.value(),
            eta_d: self.prep.eta_d,
            reflected_cutoff: self.prep.reflected_cutoff,
        }
    }

    pub fn chain_params(&self) -> ChainParams {
        ChainParams {
            prep: self.prep_params(),
            alpha: self.analysis.alpha.value(),
            eye1: self.eye,
            eye2: self.eye,
            bs_reflectance: self.analysis.bs_reflectance,
            tail_tol: self.analysis.tail_tol,
        }
    }

    pub fn summation_limits(&self) -> SummationLimits {
        SummationLimits {
            window_sigmas: self.limits.window_sigmas,
            max_window: self.limits.max_window,
        }
    }

    pub fn classical_scan(&self) -> ClassicalScan {
        ClassicalScan {
            ps_points: self.statistics.scan_ps_points,
            pc_points: self.statistics.scan_pc_points,
            ..ClassicalScan::default()
        }
    }

    pub fn classical_search(&self) -> ClassicalSearch {
        match self.statistics.search {
            SearchKind::Boundary => ClassicalSearch::Boundary,
            SearchKind::Grid => ClassicalSearch::Grid(self.classical_scan()),
            SearchKind::Verified => ClassicalSearch::Verified(self.classical_scan()),
        }
    }

    pub fn stop_options(&self) -> StopOptions {
        StopOptions {
            tail_tolerance: self.statistics.tail_tolerance,
            max_points: self.limits.max_points,
            search: self.classical_search(),
            limits: self.summation_limits(),
            chi0_rel_tol: self.statistics.chi0_rel_tol,
        }
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            chain: self.chain_params(),
            a: self.statistics.a,
            stop: self.stop_options(),
        }
    }

    pub fn optimization_spec(&self) -> OptimizationSpec {
        let o = &self.optimizer;
        let objective = match o.objective {
            ObjectiveKind::ExpectedRuns => Objective::ExpectedRuns {
                epsilon: self.statistics.epsilon,
                coarse_n: self.statistics.coarse_n,
            },
            ObjectiveKind::StopProbability => Objective::StopProbability {
                epsilon: self.statistics.epsilon,
                n: o.n,
            },
        };
        let bound = |param, b: &BoundSection| Bound {
            param,
            lo: b.lo,
            hi: b.hi,
            grid_points: b.points,
        };
        let mut bounds = vec![
            bound(Parameter::Alpha, &o.alpha),
            bound(Parameter::Beta, &o.beta),
            bound(Parameter::A, &o.a),
        ];
        if let Some(t) = &o.t {
            bounds.push(bound(Parameter::T, t));
        }
        OptimizationSpec {
            objective,
            bounds,
            fixed: Vec::new(),
            budget: o.budget,
            xtol: o.xtol,
        }
    }

    /// Canonical TOML rendering, used for hashing.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
