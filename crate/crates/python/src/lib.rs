use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use eyewitness::chain::{run_chain, ChainParams};
use eyewitness::config::parse_config;
use eyewitness::detector::DetectorModel;
use eyewitness::fock::{self, DensityMatrix};
use eyewitness::montecarlo;
use eyewitness::preparation::{conditional_state, PreparationParams};
use eyewitness::statistics::{self, CellProbabilities, ClassicalSearch, StopOptions, SummationLimits};
use eyewitness::witness::{self, ClickStats};

fn err(e: eyewitness::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "DetectorModel", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyDetector(DetectorModel);

#[pymethods]
impl PyDetector {
    #[new]
    #[pyo3(signature = (theta=7, eta=0.08, dark_mean=0.0))]
    fn new(theta: u32, eta: f64, dark_mean: f64) -> PyResult<Self> {
        DetectorModel::new(theta, eta, dark_mean).map(Self).map_err(err)
    }

    #[staticmethod]
    fn non_pnr(eta: f64) -> Self {
        Self(DetectorModel::non_pnr(eta))
    }

    #[getter]
    fn theta(&self) -> u32 {
        self.0.theta
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.0.eta
    }

    #[getter]
    fn dark_mean(&self) -> f64 {
        self.0.dark_mean
    }

    fn click_prob_fock(&self, n: usize) -> f64 {
        self.0.click_prob_fock(n)
    }

    fn click_prob_coherent(&self, mu: f64) -> f64 {
        self.0.click_prob_coherent(mu)
    }

    fn __repr__(&self) -> String {
        format!(
            "DetectorModel(theta={}, eta={}, dark_mean={})",
            self.0.theta, self.0.eta, self.0.dark_mean
        )
    }
}

/// `<n|D(alpha)|m>` with source index `m`.
#[pyfunction]
fn displaced_fock_amplitude(n: usize, m: usize, alpha: Complex64) -> PyResult<Complex64> {
    fock::displaced_fock_amplitude(n, m, alpha).map_err(err)
}

/// Photon-number distribution of `D(alpha) (|0> + e^{i phase}|1>)/sqrt(2)`.
#[pyfunction]
#[pyo3(signature = (alpha, phase=0.0, tail_tol=1e-12))]
fn plus_state_number_distribution(alpha: Complex64, phase: f64, tail_tol: f64) -> PyResult<Vec<f64>> {
    let p = fock::number_distribution(&DensityMatrix::plus_state(phase), alpha, tail_tol).map_err(err)?;
    Ok(p.probs().to_vec())
}

/// `(ps1, ps2, pc)` of the displaced ideal superposition behind the splitter.
#[pyfunction]
#[pyo3(signature = (alpha, eye, reflectance=0.5, tail_tol=1e-12))]
fn plus_state_stats(alpha: f64, eye: &PyDetector, reflectance: f64, tail_tol: f64) -> PyResult<(f64, f64, f64)> {
    let s = witness::displaced_state_stats(&DensityMatrix::plus_state(0.0), alpha, &eye.0, &eye.0, reflectance, tail_tol)
        .map_err(err)?;
    Ok((s.ps1, s.ps2, s.pc))
}

#[pyfunction]
fn g2(ps1: f64, ps2: f64, pc: f64) -> PyResult<f64> {
    witness::g2(&ClickStats::new(ps1, ps2, pc).map_err(err)?).map_err(err)
}

#[pyfunction]
fn witness_difference(ps1: f64, ps2: f64, pc: f64) -> PyResult<f64> {
    Ok(witness::witness_difference(&ClickStats::new(ps1, ps2, pc).map_err(err)?))
}

/// `(p_click_given_herald, fidelity_plus, root_fidelity_plus)` of the heralded state.
#[pyfunction]
#[pyo3(signature = (eta_c=0.8, t=0.98, beta=Complex64::new(0.08, 0.0), eta_d=0.5))]
fn prepare(eta_c: f64, t: f64, beta: Complex64, eta_d: f64) -> PyResult<(f64, f64, f64)> {
    let params = PreparationParams {
        eta_c,
        t,
        beta,
        eta_d,
        ..PreparationParams::default()
    };
    let s = conditional_state(&params).map_err(err)?;
    Ok((s.p_click_given_herald, s.fidelity_plus, s.root_fidelity_plus()))
}

/// Symmetrized `(ps, pc)` of the full chain; `None` fields take working-point defaults.
#[pyfunction]
#[pyo3(signature = (alpha=None, beta=None, eye=None))]
fn chain_cell(alpha: Option<f64>, beta: Option<f64>, eye: Option<PyDetector>) -> PyResult<(f64, f64)> {
    let mut params = ChainParams::default();
    if let Some(a) = alpha {
        params.alpha = Complex64::new(a, 0.0);
    }
    if let Some(b) = beta {
        params.prep.beta = Complex64::new(b, 0.0);
    }
    if let Some(e) = eye {
        params = params.with_eye(e.0);
    }
    let out = run_chain(&params).map_err(err)?;
    Ok((out.cell.ps, out.cell.pc))
}

#[pyfunction]
fn multinomial_log_pmf(ns: u64, nc: u64, n: u64, ps: f64, pc: f64) -> PyResult<f64> {
    let cell = CellProbabilities::new(ps, pc).map_err(err)?;
    statistics::multinomial_log_pmf(ns, nc, n, &cell).map_err(err)
}

/// Counts `(Ns, Nc)` after `n` runs; deterministic in `seed`.
#[pyfunction]
fn simulate_counts(ps: f64, pc: f64, n: u64, seed: u64) -> PyResult<(u64, u64)> {
    let cell = CellProbabilities::new(ps, pc).map_err(err)?;
    Ok(montecarlo::simulate_counts(&cell, n, seed))
}

/// Estimator and critical values for one quantum cell.
#[pyclass(name = "CertificationPlan", frozen)]
struct PyPlan {
    plan: statistics::CertificationPlan,
    cell: CellProbabilities,
}

#[pymethods]
impl PyPlan {
    #[new]
    #[pyo3(signature = (ps, pc, a=40.0, epsilon=0.01))]
    fn new(ps: f64, pc: f64, a: f64, epsilon: f64) -> PyResult<Self> {
        let cell = CellProbabilities::new(ps, pc).map_err(err)?;
        let plan = statistics::CertificationPlan::new(cell, a, epsilon).map_err(err)?;
        Ok(Self { plan, cell })
    }

    #[getter]
    fn ps_cl(&self) -> f64 {
        self.plan.ps_cl()
    }

    #[getter]
    fn center(&self) -> (f64, f64) {
        self.plan.center()
    }

    /// `(b, c, d, phi)`.
    #[getter]
    fn coefficients(&self) -> (f64, f64, f64, f64) {
        let t = self.plan.coeffs();
        (t.b, t.c, t.d, t.phi)
    }

    fn chi(&self, ns: u64, nc: u64, n: u64) -> f64 {
        self.plan.chi(ns, nc, n)
    }

    /// `(chi0, worst-case p-value)` at `n` runs.
    fn critical_chi0(&self, n: u64) -> PyResult<(f64, f64)> {
        let est = statistics::Estimator::new(&self.cell, self.plan.a()).map_err(err)?;
        let c = statistics::critical_chi0(
            self.plan.epsilon,
            n,
            &est,
            &ClassicalSearch::default(),
            &SummationLimits::default(),
        )
        .map_err(err)?;
        Ok((c.chi0, c.pvalue.pvalue))
    }

    /// Probability that the quantum cell gives `chi <= chi0` after `n` runs.
    fn p_stop(&self, n: u64, chi0: f64) -> PyResult<f64> {
        let est = statistics::Estimator::new(&self.cell, self.plan.a()).map_err(err)?;
        statistics::p_stop(n, chi0, &self.cell, &est, &SummationLimits::default()).map_err(err)
    }

    /// `(expected runs, [(N, chi0, P_stop)])` on the grid `coarse_n, 2 coarse_n, ...`.
    fn expected_runs(&self, py: Python<'_>, coarse_n: u64) -> PyResult<(f64, Vec<(u64, f64, f64)>)> {
        let curve = py
            .detach(|| self.plan.expected_runs(coarse_n, &StopOptions::default()))
            .map_err(err)?;
        let grid = curve.grid.iter().map(|p| (p.n, p.chi0, p.p_stop)).collect();
        Ok((curve.expected_runs, grid))
    }
}

/// Validates a TOML run configuration and returns it with defaults filled in.
#[pyfunction]
fn normalize_config(text: &str) -> PyResult<String> {
    let cfg = parse_config(text).map_err(err)?;
    cfg.validate().map_err(err)?;
    Ok(cfg.to_toml())
}

#[pymodule]
fn eyewitness_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDetector>()?;
    m.add_class::<PyPlan>()?;
    m.add_function(wrap_pyfunction!(displaced_fock_amplitude, m)?)?;
    m.add_function(wrap_pyfunction!(plus_state_number_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(plus_state_stats, m)?)?;
    m.add_function(wrap_pyfunction!(g2, m)?)?;
    m.add_function(wrap_pyfunction!(witness_difference, m)?)?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(chain_cell, m)?)?;
    m.add_function(wrap_pyfunction!(multinomial_log_pmf, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_counts, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_config, m)?)?;
    Ok(())
}
