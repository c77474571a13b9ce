//! Truncated Fock-space primitives.
//!
//! Displacement matrix elements are evaluated as log-magnitude plus phase so
//! that amplitudes with `|alpha|` up to 50 (photon numbers in the thousands)
//! neither overflow nor underflow before the final exponentiation.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::special::{binomial_pmf_row, ln_factorial};

/// Displacement amplitude. Plain complex number; finiteness is checked at use.
pub type ComplexAmplitude = Complex64;

pub const MAX_DISPLACEMENT: f64 = 50.0;
/// Largest photon index evaluated by [`displaced_fock_amplitude`].
pub const MAX_FOCK_INDEX: usize = 20_000;
/// Largest source index `m` in `<n|D(alpha)|m>`.
pub const MAX_SOURCE_INDEX: usize = 64;
pub const DEFAULT_TAIL_TOL: f64 = 1e-10;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-10;
const NEGATIVE_CLAMP: f64 = 1e-12;

pub(crate) fn check_amplitude(alpha: ComplexAmplitude) -> Result<()> {
    if !alpha.re.is_finite() || !alpha.im.is_finite() {
        return Err(Error::invalid("alpha", "non-finite component"));
    }
    if alpha.norm() > MAX_DISPLACEMENT {
        return Err(Error::invalid(
            "alpha",
            format!("|alpha| = {} exceeds {MAX_DISPLACEMENT}", alpha.norm()),
        ));
    }
    Ok(())
}

/// `<n|D(alpha)|m>`.
///
/// Uses `<n|D|m> = sqrt(m!/n!) alpha^(n-m) e^(-|alpha|^2/2) L_m^(n-m)(|alpha|^2)`
/// for `n >= m` and the mirrored form with `-conj(alpha)` otherwise. The
/// generalized Laguerre polynomial comes from its three-term recurrence in
/// the degree, which is short because `m` is a low source index.
pub fn displaced_fock_amplitude(n: usize, m: usize, alpha: ComplexAmplitude) -> Result<Complex64> {
    check_amplitude(alpha)?;
    if m > MAX_SOURCE_INDEX {
        return Err(Error::InvalidIndex {
            index: m,
            max: MAX_SOURCE_INDEX,
        });
    }
    if n > MAX_FOCK_INDEX {
        return Err(Error::CutoffOverflow {
            index: n,
            max: MAX_FOCK_INDEX,
        });
    }
    Ok(amplitude_unchecked(n, m, alpha))
}

fn amplitude_unchecked(n: usize, m: usize, alpha: Complex64) -> Complex64 {
    let x = alpha.norm_sqr();
    if x == 0.0 {
        return if n == m { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
    }
    // for n < m, <n|D(alpha)|m> = conj(<m|D(-alpha)|n>)
    let (hi, lo, base) = if n >= m { (n, m, alpha) } else { (m, n, -alpha.conj()) };
    let k = hi - lo;
    let lag = laguerre(lo, k as f64, x);
    if lag == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let ln_mag = 0.5 * (ln_factorial(lo as u64) - ln_factorial(hi as u64))
        + k as f64 * base.norm().ln()
        - 0.5 * x
        + lag.abs().ln();
    let mut phase = k as f64 * base.arg();
    if lag < 0.0 {
        phase += std::f64::consts::PI;
    }
    Complex64::from_polar(ln_mag.exp(), phase)
}

/// Generalized Laguerre polynomial `L_degree^(k)(x)`.
fn laguerre(degree: usize, k: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if degree == 0 {
        return prev;
    }
    let mut cur = 1.0 + k - x;
    for j in 1..degree {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0 + k - x) * cur - (jf + k) * prev) / (jf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Columns `<n|D(alpha)|m>` for `n = 0..len` and each source `m < sources`.
pub(crate) fn displaced_columns(sources: usize, len: usize, alpha: Complex64) -> Vec<Vec<Complex64>> {
    (0..sources)
        .map(|m| (0..len).map(|n| amplitude_unchecked(n, m, alpha)).collect())
        .collect()
}

/// Density matrix in the Fock basis `{|0>, ..., |dim-1>}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::InvalidDensityMatrix(format!(
                "shape {}x{} is not square and non-empty",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidDensityMatrix("non-finite entry".into()));
        }
        let dim = entries.nrows();
        for i in 0..dim {
            for j in i..dim {
                let dev = (entries[(i, j)] - entries[(j, i)].conj()).norm();
                if dev > HERMITIAN_TOL {
                    return Err(Error::InvalidDensityMatrix(format!(
                        "not Hermitian at ({i}, {j}), deviation {dev:e}"
                    )));
                }
            }
        }
        let trace = entries.trace();
        if (trace.re - 1.0).abs() > TRACE_TOL || trace.im.abs() > TRACE_TOL {
            return Err(Error::InvalidDensityMatrix(format!("trace {trace} is not 1")));
        }
        let min_eig = entries
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidDensityMatrix(format!(
                "smallest eigenvalue {min_eig:e} is negative"
            )));
        }
        Ok(Self { entries })
    }

    /// Divides by the trace first, then validates.
    pub fn normalized(entries: DMatrix<Complex64>) -> Result<Self> {
        let trace = entries.trace().re;
        if !(trace > 0.0) {
            return Err(Error::InvalidDensityMatrix(format!("trace {trace} is not positive")));
        }
        Self::new(entries.map(|z| z / trace))
    }

    /// `|psi><psi|` for an amplitude vector, normalized.
    pub fn pure(amplitudes: &[Complex64]) -> Result<Self> {
        let dim = amplitudes.len();
        let entries = DMatrix::from_fn(dim, dim, |i, j| amplitudes[i] * amplitudes[j].conj());
        Self::normalized(entries)
    }

    /// Diagonal (Fock-mixture) state.
    pub fn diagonal(probs: &[f64]) -> Result<Self> {
        let dim = probs.len();
        let entries = DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                Complex64::new(probs[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Self::new(entries)
    }

    pub fn vacuum() -> Self {
        Self {
            entries: DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)),
        }
    }

    /// `(|0> + e^{i phase} |1>) / sqrt(2)`.
    pub fn plus_state(phase: f64) -> Self {
        let c = Complex64::from_polar(1.0, phase);
        let h = 0.5;
        Self {
            entries: DMatrix::from_row_slice(
                2,
                2,
                &[Complex64::new(h, 0.0), c.conj() * h, c * h, Complex64::new(h, 0.0)],
            ),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[(i, j)]
    }

    pub fn mean_photon_number(&self) -> f64 {
        (0..self.dim()).map(|n| n as f64 * self.entries[(n, n)].re).sum()
    }

    /// Applies the phase rotation `e^{-i phase N}`, i.e. `rho_jk -> rho_jk e^{-i phase (j - k)}`.
    pub fn rotated(&self, phase: f64) -> Self {
        let dim = self.dim();
        let entries = DMatrix::from_fn(dim, dim, |j, k| {
            self.entries[(j, k)] * Complex64::from_polar(1.0, -phase * (j as f64 - k as f64))
        });
        Self { entries }
    }
}

/// Photon-number probabilities `p(0..=n_max)` plus the mass beyond the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct NumberDistribution {
    probs: Vec<f64>,
    tail_mass: f64,
}

impl NumberDistribution {
    pub fn new(probs: Vec<f64>, tail_mass: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("probs", "empty distribution"));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(**p >= 0.0 && **p <= 1.0))
        {
            return Err(Error::invalid("probs", format!("entry {i} = {p} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&tail_mass) {
            return Err(Error::invalid("tail_mass", format!("{tail_mass} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum::<f64>() + tail_mass;
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::invalid("probs", format!("total mass {total} is not 1")));
        }
        Ok(Self { probs, tail_mass })
    }

    /// `delta_{n, k}`.
    pub fn fock(k: usize) -> Self {
        let mut probs = vec![0.0; k + 1];
        probs[k] = 1.0;
        Self { probs, tail_mass: 0.0 }
    }

    /// Poisson distribution with mean `mu`, truncated once the tail drops below `tail_tol`.
    pub fn poisson(mu: f64, tail_tol: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::invalid("mu", format!("{mu} is not a finite non-negative mean")));
        }
        let rho = DensityMatrix::vacuum();
        number_distribution(&rho, Complex64::new(mu.sqrt(), 0.0), tail_tol)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| (n * n) as f64 * p)
            .sum()
    }
}

/// `P(k, m)` over reflected (`k`) and transmitted (`m`) photon numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct JointNumberDistribution {
    size: usize,
    probs: Vec<f64>,
}

impl JointNumberDistribution {
    /// Number of photon-number values per mode (`0..size`).
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, k: usize, m: usize) -> f64 {
        if k >= self.size || m >= self.size {
            0.0
        } else {
            self.probs[k * self.size + m]
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn reflected_marginal(&self) -> Vec<f64> {
        (0..self.size)
            .map(|k| self.probs[k * self.size..(k + 1) * self.size].iter().sum())
            .collect()
    }

    pub fn transmitted_marginal(&self) -> Vec<f64> {
        (0..self.size)
            .map(|m| (0..self.size).map(|k| self.probs[k * self.size + m]).sum())
            .collect()
    }

    /// Nonzero entries as `(k, m, P)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p != 0.0)
            .map(move |(i, p)| (i / self.size, i % self.size, *p))
    }
}

const MAX_AUTO_CUTOFF: usize = 16_384;

/// Photon-number distribution of `D(alpha) rho D(alpha)^dagger`.
///
/// The cutoff starts at `mean + 12 sqrt(mean)` and doubles until the
/// missing mass `1 - sum p(n)` is at most `tail_tol`.
pub fn number_distribution(
    rho: &DensityMatrix,
    alpha: ComplexAmplitude,
    tail_tol: f64,
) -> Result<NumberDistribution> {
    check_amplitude(alpha)?;
    if !(tail_tol > 0.0 && tail_tol <= 1e-4) {
        return Err(Error::invalid("tail_tol", format!("{tail_tol} outside (0, 1e-4]")));
    }
    let dim = rho.dim();
    if dim > MAX_SOURCE_INDEX + 1 {
        return Err(Error::InvalidIndex {
            index: dim - 1,
            max: MAX_SOURCE_INDEX,
        });
    }
    let mean = {
        let a = alpha.norm() + rho.mean_photon_number().sqrt();
        a * a
    };
    let mut cutoff = ((mean + 12.0 * mean.sqrt()).ceil() as usize + 16).max(dim + 8);
    loop {
        if cutoff > MAX_AUTO_CUTOFF {
            return Err(Error::TruncationFailure {
                max_cutoff: MAX_AUTO_CUTOFF,
                tail_tol,
            });
        }
        let cols = displaced_columns(dim, cutoff, alpha);
        let mut probs = Vec::with_capacity(cutoff);
        for n in 0..cutoff {
            let mut acc = 0.0;
            for j in 0..dim {
                let aj = cols[j][n];
                acc += rho.get(j, j).re * aj.norm_sqr();
                for k in (j + 1)..dim {
                    acc += 2.0 * (rho.get(j, k) * aj * cols[k][n].conj()).re;
                }
            }
            if acc < 0.0 {
                if acc < -NEGATIVE_CLAMP {
                    return Err(Error::NegativeProbability { index: n, value: acc });
                }
                acc = 0.0;
            }
            probs.push(acc.min(1.0));
        }
        let tail = (1.0 - probs.iter().sum::<f64>()).max(0.0);
        if tail <= tail_tol {
            trim_trailing_zeros(&mut probs);
            return NumberDistribution::new(probs, tail);
        }
        cutoff *= 2;
    }
}

fn trim_trailing_zeros(probs: &mut Vec<f64>) {
    while probs.len() > 1 && *probs.last().unwrap() == 0.0 {
        probs.pop();
    }
}

fn check_unit_interval(name: &'static str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid(name, format!("{x} outside [0, 1]")));
    }
    Ok(())
}

/// Binomial partition of each photon number on a beamsplitter with reflectance `r`:
/// `P(k, m) = p(k + m) C(k + m, k) r^k (1 - r)^m`.
pub fn split_joint(p: &NumberDistribution, r: f64) -> Result<JointNumberDistribution> {
    check_unit_interval("r", r)?;
    let size = p.probs.len();
    let mut probs = vec![0.0; size * size];
    for (n, &pn) in p.probs.iter().enumerate() {
        if pn == 0.0 {
            continue;
        }
        let row = binomial_pmf_row(n, r);
        for (k, w) in row.into_iter().enumerate() {
            probs[k * size + (n - k)] = pn * w;
        }
    }
    Ok(JointNumberDistribution { size, probs })
}

/// Loss channel with transmission `eta`: each photon survives independently.
pub fn apply_loss(p: &NumberDistribution, eta: f64) -> Result<NumberDistribution> {
    check_unit_interval("eta", eta)?;
    let size = p.probs.len();
    let mut out = vec![0.0; size];
    for (n, &pn) in p.probs.iter().enumerate() {
        if pn == 0.0 {
            continue;
        }
        for (k, w) in binomial_pmf_row(n, eta).into_iter().enumerate() {
            out[k] += pn * w;
        }
    }
    trim_trailing_zeros(&mut out);
    Ok(NumberDistribution {
        probs: out,
        tail_mass: p.tail_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn vacuum_overlap() {
        let alpha = c(1.3, -0.4);
        let a = displaced_fock_amplitude(0, 0, alpha).unwrap();
        assert!((a.re - (-alpha.norm_sqr() / 2.0).exp()).abs() < 1e-15);
        assert!(a.im.abs() < 1e-15);
    }

    #[test]
    fn identity_displacement() {
        for n in 0..5 {
            let a = displaced_fock_amplitude(n, n.min(1), c(0.0, 0.0)).unwrap();
            if n <= 1 {
                assert_eq!(a, c(1.0, 0.0));
            }
        }
        assert_eq!(displaced_fock_amplitude(3, 1, c(0.0, 0.0)).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn single_photon_closed_form() {
        // <n|D(a)|1> = e^{-|a|^2/2} a^{n-1} (n - |a|^2) / sqrt(n!)
        let alpha = c(2.0, 0.0);
        for n in 0..12usize {
            let got = displaced_fock_amplitude(n, 1, alpha).unwrap();
            let expect = if n == 0 {
                -2.0 * (-2.0f64).exp()
            } else {
                (-2.0f64).exp() * 2f64.powi(n as i32 - 1) * (n as f64 - 4.0)
                    / (1..=n).map(|k| k as f64).product::<f64>().sqrt()
            };
            assert!((got.re - expect).abs() < 1e-13, "n={n}: {got} vs {expect}");
            assert!(got.im.abs() < 1e-13);
        }
    }

    #[test]
    fn amplitude_errors() {
        assert!(matches!(
            displaced_fock_amplitude(MAX_FOCK_INDEX + 1, 0, c(1.0, 0.0)),
            Err(Error::CutoffOverflow { .. })
        ));
        assert!(matches!(
            displaced_fock_amplitude(0, MAX_SOURCE_INDEX + 1, c(1.0, 0.0)),
            Err(Error::InvalidIndex { .. })
        ));
        assert!(displaced_fock_amplitude(0, 0, c(51.0, 0.0)).is_err());
        assert!(displaced_fock_amplitude(0, 0, c(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn unitarity_at_large_displacement() {
        let alpha = c(11.0, 0.0);
        for m in 0..2 {
            let total: f64 = (0..600)
                .map(|n| displaced_fock_amplitude(n, m, alpha).unwrap().norm_sqr())
                .sum();
            assert!((total - 1.0).abs() < 1e-8, "m={m}: {total}");
        }
    }

    #[test]
    fn coherent_state_is_poissonian() {
        let mu: f64 = 6.25;
        let p = number_distribution(&DensityMatrix::vacuum(), c(2.5, 0.0), 1e-10).unwrap();
        for (n, &pn) in p.probs().iter().enumerate() {
            let expect = (-mu + n as f64 * mu.ln() - ln_factorial(n as u64)).exp();
            assert!((pn - expect).abs() < 1e-14);
        }
        assert!(p.tail_mass() <= 1e-10);
    }

    #[test]
    fn balanced_mixture_without_displacement() {
        let rho = DensityMatrix::diagonal(&[0.5, 0.5]).unwrap();
        let p = number_distribution(&rho, c(0.0, 0.0), 1e-10).unwrap();
        assert!((p.probs()[0] - 0.5).abs() < 1e-15);
        assert!((p.probs()[1] - 0.5).abs() < 1e-15);
        assert_eq!(p.n_max(), 1);
    }

    #[test]
    fn tail_tolerance_validated() {
        let rho = DensityMatrix::vacuum();
        assert!(number_distribution(&rho, c(1.0, 0.0), 0.0).is_err());
        assert!(number_distribution(&rho, c(1.0, 0.0), 1e-3).is_err());
    }

    #[test]
    fn two_photons_on_balanced_splitter() {
        let j = split_joint(&NumberDistribution::fock(2), 0.5).unwrap();
        assert!((j.get(1, 1) - 0.5).abs() < 1e-15);
        assert!((j.get(2, 0) - 0.25).abs() < 1e-15);
        assert!((j.get(0, 2) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn vacuum_split() {
        for r in [0.0, 0.3, 1.0] {
            let j = split_joint(&NumberDistribution::fock(0), r).unwrap();
            assert_eq!(j.get(0, 0), 1.0);
        }
    }

    #[test]
    fn loss_limits() {
        let p = NumberDistribution::poisson(3.0, 1e-10).unwrap();
        let same = apply_loss(&p, 1.0).unwrap();
        for (a, b) in p.probs().iter().zip(same.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
        let gone = apply_loss(&p, 0.0).unwrap();
        assert!((gone.probs()[0] - p.total_mass()).abs() < 1e-15);
        assert_eq!(gone.n_max(), 0);
    }

    #[test]
    fn loss_on_ten_photons_is_binomial() {
        let out = apply_loss(&NumberDistribution::fock(10), 0.08).unwrap();
        for k in 0..=10u64 {
            let expect = (ln_factorial(10) - ln_factorial(k) - ln_factorial(10 - k)).exp()
                * 0.08f64.powi(k as i32)
                * 0.92f64.powi(10 - k as i32);
            assert!((out.probs()[k as usize] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn density_matrix_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.6, 0.0), c(0.6, 0.0), c(0.5, 0.0)]);
        assert!(DensityMatrix::new(bad).is_err());
        let non_herm = DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.1, 0.1), c(0.1, 0.1), c(0.5, 0.0)]);
        assert!(DensityMatrix::new(non_herm).is_err());
        assert!(DensityMatrix::diagonal(&[0.5, 0.4]).is_err());
        let plus = DensityMatrix::plus_state(0.3);
        assert!(DensityMatrix::new(plus.entries().clone()).is_ok());
    }
}
