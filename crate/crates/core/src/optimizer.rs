//! Parameter search over the experiment chain: a coarse grid followed by a
//! bounded Nelder-Mead refinement from the best grid point.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{run_chain, ChainParams};
use crate::error::{Error, Result};
use crate::statistics::{critical_chi0_tol, expected_runs, p_stop, Estimator, StopOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameter {
    /// Analysis displacement (real).
    Alpha,
    /// Preparation displacement (real).
    Beta,
    /// Parabola steepness of the estimator.
    A,
    /// Preparation splitter transmission.
    T,
}

impl Parameter {
    pub fn name(&self) -> &'static str {
        match self {
            Parameter::Alpha => "alpha",
            Parameter::Beta => "beta",
            Parameter::A => "a",
            Parameter::T => "t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Objective {
    /// Minimize the expected run count at p-value `epsilon`.
    ExpectedRuns { epsilon: f64, coarse_n: u64 },
    /// Maximize the stopping probability after `n` runs at p-value `epsilon`.
    StopProbability { epsilon: f64, n: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub param: Parameter,
    pub lo: f64,
    pub hi: f64,
    /// Grid points along this axis in the coarse pass.
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSpec {
    pub objective: Objective,
    pub bounds: Vec<Bound>,
    pub fixed: Vec<(Parameter, f64)>,
    /// Maximum number of objective evaluations.
    pub budget: usize,
    /// Simplex size, in units of the bound widths, at which refinement stops.
    pub xtol: f64,
}

impl OptimizationSpec {
    /// Grid 16 x 16 x 8 over `(alpha, beta, a)`.
    pub fn standard(objective: Objective) -> Self {
        Self {
            objective,
            bounds: vec![
                Bound { param: Parameter::Alpha, lo: 6.0, hi: 14.0, grid_points: 16 },
                Bound { param: Parameter::Beta, lo: 0.02, hi: 0.2, grid_points: 16 },
                Bound { param: Parameter::A, lo: 5.0, hi: 120.0, grid_points: 8 },
            ],
            fixed: Vec::new(),
            budget: 3000,
            xtol: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget < 1 {
            return Err(Error::invalid("budget", "at least one evaluation is required"));
        }
        if self.bounds.is_empty() {
            return Err(Error::invalid("bounds", "no free parameters"));
        }
        for b in &self.bounds {
            if !(b.lo <= b.hi) || !b.lo.is_finite() || !b.hi.is_finite() {
                return Err(Error::invalid("bounds", format!("empty interval for {}", b.param.name())));
            }
            if b.grid_points < 1 {
                return Err(Error::invalid("bounds", format!("no grid points for {}", b.param.name())));
            }
            if self.fixed.iter().any(|(p, _)| *p == b.param) {
                return Err(Error::invalid("fixed", format!("{} is both free and fixed", b.param.name())));
            }
        }
        if !(self.xtol > 0.0) {
            return Err(Error::invalid("xtol", "must be positive"));
        }
        match self.objective {
            Objective::ExpectedRuns { epsilon, coarse_n } if !(epsilon > 0.0 && epsilon <= 0.5) || coarse_n < 1 => {
                Err(Error::invalid("objective", "needs epsilon in (0, 0.5] and coarse_n >= 1"))
            }
            Objective::StopProbability { epsilon, n } if !(epsilon > 0.0 && epsilon <= 0.5) || n < 1 => {
                Err(Error::invalid("objective", "needs epsilon in (0, 0.5] and n >= 1"))
            }
            _ => Ok(()),
        }
    }
}

/// Chain configuration the parameters are substituted into.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub chain: ChainParams,
    pub a: f64,
    pub stop: StopOptions,
}

impl ChainConfig {
    pub fn with(&self, assignments: &[(Parameter, f64)]) -> Self {
        let mut cfg = self.clone();
        for &(param, v) in assignments {
            match param {
                Parameter::Alpha => cfg.chain.alpha = Complex64::new(v, 0.0),
                Parameter::Beta => cfg.chain.prep.beta = Complex64::new(v, 0.0),
                Parameter::A => cfg.a = v,
                Parameter::T => cfg.chain.prep.t = v,
            }
        }
        cfg
    }
}

/// Raw objective value: expected runs, or the stopping probability.
pub fn evaluate_objective(objective: &Objective, cfg: &ChainConfig) -> Result<f64> {
    let out = run_chain(&cfg.chain)?;
    let est = Estimator::new(&out.cell, cfg.a)?;
    match *objective {
        Objective::ExpectedRuns { epsilon, coarse_n } => {
            Ok(expected_runs(epsilon, coarse_n, &out.cell, &est, &cfg.stop)?.expected_runs)
        }
        Objective::StopProbability { epsilon, n } => {
            let crit = critical_chi0_tol(epsilon, n, &est, &cfg.stop.search, &cfg.stop.limits, cfg.stop.chi0_rel_tol)?;
            p_stop(n, crit.chi0, &out.cell, &est, &cfg.stop.limits)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Grid,
    Refine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: usize,
    pub stage: Stage,
    pub point: Vec<f64>,
    /// Value being minimized, `None` where evaluation failed.
    pub value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub budget_exhausted: bool,
    pub trace: Vec<TraceEntry>,
}

struct Recorder<'a, F> {
    f: &'a F,
    trace: Vec<TraceEntry>,
    budget: usize,
    best: Option<(Vec<f64>, f64)>,
}

impl<F: Fn(&[f64]) -> Result<f64> + Sync> Recorder<'_, F> {
    fn remaining(&self) -> usize {
        self.budget - self.trace.len()
    }

    fn push(&mut self, stage: Stage, point: Vec<f64>, res: Result<f64>) -> f64 {
        let (value, error) = match res {
            Ok(v) if v.is_finite() => (Some(v), None),
            Ok(v) => (None, Some(format!("non-finite objective {v}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(v) = value {
            if self.best.as_ref().map_or(true, |(_, b)| v < *b) {
                self.best = Some((point.clone(), v));
            }
        }
        self.trace.push(TraceEntry {
            index: self.trace.len(),
            stage,
            point,
            value,
            error,
        });
        value.unwrap_or(f64::INFINITY)
    }

    fn eval(&mut self, point: Vec<f64>) -> Option<f64> {
        if self.remaining() == 0 {
            return None;
        }
        let res = (self.f)(&point);
        Some(self.push(Stage::Refine, point, res))
    }
}

fn grid_axis(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 || lo == hi {
        return vec![0.5 * (lo + hi)];
    }
    (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
}

/// Minimizes `f` over the box `bounds`: grid pass (in parallel), then
/// Nelder-Mead from the best grid point with steps of one grid spacing.
/// Points outside the box are projected onto it.
pub fn minimize_bounded<F>(
    f: &F,
    bounds: &[(f64, f64)],
    grid_points: &[usize],
    budget: usize,
    xtol: f64,
) -> Result<Minimum>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let dim = bounds.len();
    if dim == 0 || grid_points.len() != dim || budget < 1 {
        return Err(Error::invalid("bounds", "dimension mismatch or empty budget"));
    }
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .zip(grid_points)
        .map(|(&(lo, hi), &m)| grid_axis(lo, hi, m.max(1)))
        .collect();
    let total: usize = axes.iter().map(|a| a.len()).product();
    let points: Vec<Vec<f64>> = (0..total.min(budget))
        .map(|mut idx| {
            let mut p = vec![0.0; dim];
            for d in (0..dim).rev() {
                p[d] = axes[d][idx % axes[d].len()];
                idx /= axes[d].len();
            }
            p
        })
        .collect();
    let values: Vec<Result<f64>> = points.par_iter().map(|p| f(p)).collect();

    let mut rec = Recorder {
        f,
        trace: Vec::new(),
        budget,
        best: None,
    };
    for (p, v) in points.into_iter().zip(values) {
        rec.push(Stage::Grid, p, v);
    }
    let Some((start, _)) = rec.best.clone() else {
        return Err(Error::InfeasibleRegion);
    };

    let width: Vec<f64> = bounds.iter().map(|(lo, hi)| hi - lo).collect();
    let clamp = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(bounds)
            .map(|(v, &(lo, hi))| v.clamp(lo, hi))
            .collect()
    };
    let step: Vec<f64> = axes
        .iter()
        .zip(&width)
        .map(|(ax, w)| if ax.len() > 1 { ax[1] - ax[0] } else { 0.25 * w })
        .collect();

    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.clone(), rec.best.as_ref().unwrap().1)];
    let mut exhausted = total > budget;
    for d in 0..dim {
        if width[d] == 0.0 {
            continue;
        }
        let mut p = start.clone();
        p[d] = if p[d] + step[d] <= bounds[d].1 { p[d] + step[d] } else { p[d] - step[d] };
        match rec.eval(p.clone()) {
            Some(v) => simplex.push((p, v)),
            None => exhausted = true,
        }
    }
    let free = simplex.len() - 1;

    'nm: while !exhausted && free > 0 {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| {
                p.iter()
                    .zip(&simplex[0].0)
                    .zip(&width)
                    .filter(|(_, w)| **w > 0.0)
                    .map(|((x, y), w)| ((x - y) / w).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if size < xtol {
            break;
        }
        let worst = simplex[free].clone();
        let centroid: Vec<f64> = (0..dim)
            .map(|d| simplex[..free].iter().map(|(p, _)| p[d]).sum::<f64>() / free as f64)
            .collect();
        let towards = |coef: f64| -> Vec<f64> {
            clamp(
                &centroid
                    .iter()
                    .zip(&worst.0)
                    .map(|(c, w)| c + coef * (c - w))
                    .collect::<Vec<_>>(),
            )
        };
        let xr = towards(1.0);
        let Some(fr) = rec.eval(xr.clone()) else {
            exhausted = true;
            break;
        };
        if fr < simplex[0].1 {
            let xe = towards(2.0);
            let Some(fe) = rec.eval(xe.clone()) else {
                simplex[free] = (xr, fr);
                exhausted = true;
                break;
            };
            simplex[free] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[free - 1].1 {
            simplex[free] = (xr, fr);
            continue;
        }
        let (xc, coef_ok) = if fr < worst.1 { (towards(0.5), fr) } else { (towards(-0.5), worst.1) };
        let Some(fc) = rec.eval(xc.clone()) else {
            exhausted = true;
            break;
        };
        if fc < coef_ok {
            simplex[free] = (xc, fc);
            continue;
        }
        // shrink towards the best vertex
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let p = clamp(&vertex.0.iter().zip(&best).map(|(x, b)| b + 0.5 * (x - b)).collect::<Vec<_>>());
            let Some(v) = rec.eval(p.clone()) else {
                exhausted = true;
                break 'nm;
            };
            *vertex = (p, v);
        }
    }

    let (point, value) = rec.best.clone().expect("a feasible point was recorded");
    Ok(Minimum {
        point,
        value,
        evaluations: rec.trace.len(),
        budget_exhausted: exhausted,
        trace: rec.trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best: Vec<(Parameter, f64)>,
    /// Expected runs, or the stopping probability, at the best point.
    pub objective_value: f64,
    pub evaluations: usize,
    pub budget_exhausted: bool,
    pub parameters: Vec<Parameter>,
    pub trace: Vec<TraceEntry>,
}

pub fn optimize(spec: &OptimizationSpec, base: &ChainConfig) -> Result<OptimizationResult> {
    spec.validate()?;
    let base = base.with(&spec.fixed);
    let params: Vec<Parameter> = spec.bounds.iter().map(|b| b.param).collect();
    let sign = match spec.objective {
        Objective::ExpectedRuns { .. } => 1.0,
        Objective::StopProbability { .. } => -1.0,
    };
    let f = |x: &[f64]| -> Result<f64> {
        let assignments: Vec<(Parameter, f64)> = params.iter().copied().zip(x.iter().copied()).collect();
        Ok(sign * evaluate_objective(&spec.objective, &base.with(&assignments))?)
    };
    let bounds: Vec<(f64, f64)> = spec.bounds.iter().map(|b| (b.lo, b.hi)).collect();
    let grid: Vec<usize> = spec.bounds.iter().map(|b| b.grid_points).collect();
    let min = minimize_bounded(&f, &bounds, &grid, spec.budget, spec.xtol)?;
    Ok(OptimizationResult {
        best: params.iter().copied().zip(min.point.iter().copied()).collect(),
        objective_value: sign * min.value,
        evaluations: min.evaluations,
        budget_exhausted: min.budget_exhausted,
        parameters: params,
        trace: min.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> Result<f64> {
        Ok((x[0] - 0.3).powi(2) + 4.0 * (x[1] + 0.2).powi(2) + 1.0)
    }

    #[test]
    fn finds_interior_minimum() {
        let m = minimize_bounded(&quadratic, &[(-1.0, 1.0), (-1.0, 1.0)], &[5, 5], 500, 1e-6).unwrap();
        assert!((m.point[0] - 0.3).abs() < 1e-4 && (m.point[1] + 0.2).abs() < 1e-4, "{:?}", m.point);
        assert!(!m.budget_exhausted);
        let grid_best = m.trace[..25].iter().filter_map(|t| t.value).fold(f64::INFINITY, f64::min);
        assert!(m.value <= grid_best);
    }

    #[test]
    fn minimum_on_the_boundary() {
        let f = |x: &[f64]| Ok(x[0]);
        let m = minimize_bounded(&f, &[(2.0, 5.0)], &[4], 100, 1e-6).unwrap();
        assert_eq!(m.point, vec![2.0]);
    }

    #[test]
    fn budget_is_respected_and_flagged() {
        let m = minimize_bounded(&quadratic, &[(-1.0, 1.0), (-1.0, 1.0)], &[5, 5], 30, 1e-12).unwrap();
        assert_eq!(m.evaluations, 30);
        assert!(m.budget_exhausted);
    }

    #[test]
    fn all_failures_are_infeasible() {
        let f = |_: &[f64]| -> Result<f64> { Err(Error::InfeasibleRegion) };
        assert!(matches!(
            minimize_bounded(&f, &[(0.0, 1.0)], &[3], 10, 1e-3),
            Err(Error::InfeasibleRegion)
        ));
    }

    #[test]
    fn failed_points_are_traced() {
        let f = |x: &[f64]| if x[0] < 0.0 { Err(Error::InfeasibleRegion) } else { Ok((x[0] - 0.5).powi(2)) };
        let m = minimize_bounded(&f, &[(-1.0, 1.0)], &[5], 200, 1e-6).unwrap();
        assert!(m.trace.iter().any(|t| t.error.is_some()));
        assert!((m.point[0] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn spec_validation() {
        let mut spec = OptimizationSpec::standard(Objective::StopProbability { epsilon: 0.01, n: 1000 });
        assert!(spec.validate().is_ok());
        spec.budget = 0;
        assert!(spec.validate().is_err());
        spec.budget = 10;
        spec.bounds[0].lo = 20.0;
        assert!(spec.validate().is_err());
        spec.bounds[0].lo = 6.0;
        spec.fixed.push((Parameter::Alpha, 10.0));
        assert!(spec.validate().is_err());
    }
}
