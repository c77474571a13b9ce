//! Certification statistics: how many runs are needed before the observed
//! singles/coincidence counts rule out every classical state at p-value `epsilon`.
//!
//! Counts `(Ns, Nc)` out of `N` runs follow a three-cell multinomial with
//! cells `{pc, ps - pc, 1 - ps}` (a coincidence also counts as a single). The
//! estimator lives in the frequency plane `(fs^2, fc)`, linearly mapped so the
//! quantum distribution is isotropic to first order, then rotated so the
//! classical boundary `pc = ps^2` runs along the `x'` axis:
//!
//! ```text
//! chi = y' - y'0 + a (x' - x'0)^2
//! ```
//!
//! where `(x'0, y'0)` is the image of the coherent cell closest to the quantum one.
//! Probabilities of `{chi <= chi0}` are summed exactly over a window of
//! `Ns` values; for each `Ns` the accepted `Nc` form an interval, whose
//! conditional binomial mass is tracked incrementally.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{binomial_cdf, binomial_ln_pmf, ln_factorial, xlogy};
use crate::witness::ClickStats;

/// Half-width of the summation window, in standard deviations.
pub const WINDOW_SIGMAS: f64 = 12.0;
/// Default ceiling on the number of `Ns` terms per summation.
pub const DEFAULT_MAX_WINDOW: u64 = 20_000_000;
/// Relative single-probability asymmetry above which a warning is reported.
pub const ASYMMETRY_WARNING: f64 = 0.01;

/// One-run probabilities of a single (per eye) and of a coincidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellProbabilities {
    pub ps: f64,
    pub pc: f64,
}

impl CellProbabilities {
    pub fn new(ps: f64, pc: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ps) {
            return Err(Error::invalid("ps", format!("{ps} outside [0, 1]")));
        }
        if !(0.0..=ps).contains(&pc) {
            return Err(Error::invalid("pc", format!("{pc} outside [0, ps = {ps}]")));
        }
        Ok(Self { ps, pc })
    }

    /// Coherent-state cell `(ps, ps^2)` on the classical boundary.
    pub fn coherent(ps: f64) -> Result<Self> {
        Self::new(ps, ps * ps)
    }

    /// Symmetrizes two-detector statistics; returns the cell and the relative
    /// asymmetry `|ps1 - ps2| / mean`.
    pub fn from_stats(stats: &ClickStats) -> Result<(Self, f64)> {
        let ps = stats.mean_single();
        let asym = if ps > 0.0 {
            (stats.ps1 - stats.ps2).abs() / ps
        } else {
            0.0
        };
        Ok((Self::new(ps, stats.pc.min(ps).max(0.0))?, asym))
    }

    /// `pc / ps^2`.
    pub fn g2(&self) -> f64 {
        self.pc / (self.ps * self.ps)
    }
}

/// `ln P(Ns, Nc)` of the three-cell multinomial.
pub fn multinomial_log_pmf(ns: u64, nc: u64, n: u64, cell: &CellProbabilities) -> Result<f64> {
    if nc > ns || ns > n {
        return Err(Error::CountOrdering { ns, nc, n });
    }
    let (only, none) = (ns - nc, n - ns);
    let coeff = ln_factorial(n) - ln_factorial(nc) - ln_factorial(only) - ln_factorial(none);
    let terms = [
        (nc, cell.pc),
        (only, cell.ps - cell.pc),
        (none, 1.0 - cell.ps),
    ];
    let mut lp = coeff;
    for (count, p) in terms {
        if count > 0 && p <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        lp += xlogy(count as f64, p);
    }
    Ok(lp)
}

/// Variance-equalizing coefficients and boundary rotation angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformCoefficients {
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub phi: f64,
}

impl TransformCoefficients {
    /// `(fs^2, fc) -> (x, y)`.
    pub fn to_xy(&self, u: f64, v: f64) -> (f64, f64) {
        let (b, c, d) = (self.b, self.c, self.d);
        let x = (c / b).sqrt() * u + d / (c * b).sqrt() * v;
        let y = (b / c).sqrt() * v;
        (x, y)
    }

    /// `(x, y) -> (x', y')`.
    pub fn rotate(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.phi.sin_cos();
        (c * x + s * y, c * y - s * x)
    }

    /// `(fs^2, fc) -> (x', y')`.
    pub fn to_rotated(&self, u: f64, v: f64) -> (f64, f64) {
        let (x, y) = self.to_xy(u, v);
        self.rotate(x, y)
    }
}

/// Coefficients for a quantum cell with `0 < pc < ps < 1`.
pub fn transform_coefficients(cell_q: &CellProbabilities) -> Result<TransformCoefficients> {
    let CellProbabilities { ps, pc } = *cell_q;
    let degenerate = |reason| Error::DegenerateCell { ps, pc, reason };
    if !(ps > 0.0 && ps < 1.0) {
        return Err(degenerate("ps must lie strictly inside (0, 1)"));
    }
    if !(pc > 0.0) {
        return Err(degenerate("pc must be positive"));
    }
    if !(pc < ps) {
        return Err(degenerate("pc = ps leaves no single-only events"));
    }
    let b2 = (1.0 - pc) * ps / ((1.0 - ps) * pc) - 1.0;
    if !(b2 > 0.0) {
        return Err(degenerate("b vanishes"));
    }
    let b = b2.sqrt();
    let c = (1.0 - pc) / (2.0 * ps * (1.0 - ps));
    let d = -1.0;
    let phi = ((c + d) / (b * b + (c + d) * (c + d)).sqrt()).acos();
    Ok(TransformCoefficients { b, c, d, phi })
}

/// Single probability of the coherent cell whose image is the orthogonal
/// projection of the quantum cell onto the classical boundary.
pub fn classical_projection(cell_q: &CellProbabilities, coeffs: &TransformCoefficients) -> Result<f64> {
    let TransformCoefficients { b, c, d, .. } = *coeffs;
    let CellProbabilities { ps, pc } = *cell_q;
    let radicand = (c * (c + d) * ps * ps + (d * (c + d) + b * b) * pc) / (b * b + (c + d) * (c + d));
    if !(radicand >= 0.0) {
        return Err(Error::NegativeRadicand(radicand));
    }
    Ok(radicand.sqrt())
}

/// The parabola estimator anchored at the projected coherent cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub coeffs: TransformCoefficients,
    pub a: f64,
    pub ps_cl: f64,
    /// Rotated image `(x'0, y'0)` of the coherent cell `(ps_cl, ps_cl^2)`.
    pub center: (f64, f64),
}

impl Estimator {
    pub fn new(cell_q: &CellProbabilities, a: f64) -> Result<Self> {
        if !(a >= 0.0) || !a.is_finite() {
            return Err(Error::invalid("a", format!("parabola steepness {a} must be finite and >= 0")));
        }
        let coeffs = transform_coefficients(cell_q)?;
        let ps_cl = classical_projection(cell_q, &coeffs)?;
        if ps_cl > 1.0 {
            return Err(Error::invalid("ps_cl", format!("projected single probability {ps_cl} exceeds 1")));
        }
        let u = ps_cl * ps_cl;
        let center = coeffs.to_rotated(u, u);
        Ok(Self {
            coeffs,
            a,
            ps_cl,
            center,
        })
    }

    /// `chi` at frequencies `(fs, fc)`.
    pub fn chi_frequencies(&self, fs: f64, fc: f64) -> f64 {
        let (xr, yr) = self.coeffs.to_rotated(fs * fs, fc);
        let dx = xr - self.center.0;
        yr - self.center.1 + self.a * dx * dx
    }

    pub fn chi(&self, ns: u64, nc: u64, n: u64) -> f64 {
        let nf = n as f64;
        self.chi_frequencies(ns as f64 / nf, nc as f64 / nf)
    }

    /// `chi` along `fc` at fixed `fs` is `q2 fc^2 + q1 fc + q0`.
    fn chi_quadratic(&self, fs: f64) -> (f64, f64, f64) {
        let TransformCoefficients { b, c, d, phi } = self.coeffs;
        let (s, co) = phi.sin_cos();
        let k1 = (c / b).sqrt();
        let k2 = d / (c * b).sqrt();
        let k3 = (b / c).sqrt();
        let u = fs * fs;
        let a1 = co * k1 * u - self.center.0;
        let b1 = co * k2 + s * k3;
        let a2 = -s * k1 * u - self.center.1;
        let b2 = co * k3 - s * k2;
        (self.a * b1 * b1, b2 + 2.0 * self.a * a1 * b1, a2 + self.a * a1 * a1)
    }

    /// Inclusive range of `Nc` in `[0, ns]` with `chi(ns, Nc, n) <= chi0`.
    pub fn acceptance_interval(&self, ns: u64, n: u64, chi0: f64) -> Option<(u64, u64)> {
        let nf = n as f64;
        let (q2, q1, q0) = self.chi_quadratic(ns as f64 / nf);
        let q0 = q0 - chi0;
        // roots in fc, then scaled to counts
        let (lo, hi) = if q2 > 0.0 {
            let disc = q1 * q1 - 4.0 * q2 * q0;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t = -0.5 * (q1 + q1.signum() * sq);
            let (r1, r2) = if t != 0.0 { (t / q2, q0 / t) } else { (0.0, 0.0) };
            (r1.min(r2), r1.max(r2))
        } else if q1 > 0.0 {
            (f64::NEG_INFINITY, -q0 / q1)
        } else if q1 < 0.0 {
            (-q0 / q1, f64::INFINITY)
        } else if q0 <= 0.0 {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            return None;
        };
        let lo_count = (lo * nf).ceil().max(0.0);
        let hi_count = (hi * nf).floor().min(ns as f64);
        if !(lo_count <= hi_count) {
            // rounding at the edge can hide a single accepted point
            return self.refine_empty(ns, n, chi0, lo * nf, hi * nf);
        }
        let (mut lo_c, mut hi_c) = (lo_count as u64, hi_count as u64);
        // settle floating-point ties against direct evaluation
        while lo_c > 0 && self.chi(ns, lo_c - 1, n) <= chi0 {
            lo_c -= 1;
        }
        while lo_c <= hi_c && self.chi(ns, lo_c, n) > chi0 {
            lo_c += 1;
        }
        while hi_c < ns && self.chi(ns, hi_c + 1, n) <= chi0 {
            hi_c += 1;
        }
        while hi_c >= lo_c && self.chi(ns, hi_c, n) > chi0 {
            if hi_c == 0 {
                return None;
            }
            hi_c -= 1;
        }
        (lo_c <= hi_c).then_some((lo_c, hi_c))
    }

    fn refine_empty(&self, ns: u64, n: u64, chi0: f64, lo: f64, hi: f64) -> Option<(u64, u64)> {
        if !lo.is_finite() && !hi.is_finite() {
            return None;
        }
        let mid = 0.5 * (lo.max(0.0) + hi.min(ns as f64));
        if !mid.is_finite() || mid < -1.0 || mid > ns as f64 + 1.0 {
            return None;
        }
        let k = mid.round().clamp(0.0, ns as f64) as u64;
        (self.chi(ns, k, n) <= chi0).then_some((k, k))
    }
}

/// Resource limits for the windowed summations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummationLimits {
    pub window_sigmas: f64,
    pub max_window: u64,
}

impl Default for SummationLimits {
    fn default() -> Self {
        Self {
            window_sigmas: WINDOW_SIGMAS,
            max_window: DEFAULT_MAX_WINDOW,
        }
    }
}

/// Incrementally maintained `(pmf(k), cdf(k))` of `Binomial(n, q)`.
struct CdfTracker {
    q: f64,
    ratio: f64,
    n: u64,
    k: i64,
    pmf: f64,
    cdf: f64,
    steps: u32,
    valid: bool,
}

const TRACKER_REANCHOR: u32 = 256;
const TRACKER_MAX_JUMP: i64 = 48;

impl CdfTracker {
    fn new(q: f64) -> Self {
        Self {
            q,
            ratio: q / (1.0 - q),
            n: 0,
            k: 0,
            pmf: 0.0,
            cdf: 0.0,
            steps: 0,
            valid: false,
        }
    }

    fn anchor(&mut self, n: u64, k: i64) {
        self.n = n;
        self.k = k;
        self.pmf = if k < 0 || k as u64 > n {
            0.0
        } else {
            binomial_ln_pmf(k as u64, n, self.q).exp()
        };
        self.cdf = binomial_cdf(k, n, self.q);
        self.steps = 0;
        self.valid = true;
    }

    /// `P(Binomial(n, q) <= k)`, where `n` is non-decreasing between calls.
    fn cdf_at(&mut self, n: u64, k: i64) -> f64 {
        if k < 0 {
            return 0.0;
        }
        if k as u64 >= n {
            return 1.0;
        }
        let jump = (k - self.k).abs();
        let stale = !self.valid
            || n < self.n
            || n - self.n > 4
            || jump > TRACKER_MAX_JUMP
            || self.steps > TRACKER_REANCHOR
            || self.pmf < 1e-250
            || self.k < 0
            || self.k as u64 >= self.n;
        if stale {
            self.anchor(n, k);
            return self.cdf;
        }
        while self.n < n {
            // F(k; n+1) = F(k; n) - q pmf(k; n)
            let (nn, kk) = (self.n as f64, self.k as f64);
            self.cdf -= self.q * self.pmf;
            self.pmf *= (nn + 1.0) / (nn + 1.0 - kk) * (1.0 - self.q);
            self.n += 1;
            self.steps += 1;
        }
        while self.k < k {
            let kk = self.k as f64;
            self.pmf *= (self.n as f64 - kk) / (kk + 1.0) * self.ratio;
            self.k += 1;
            self.cdf += self.pmf;
            self.steps += 1;
        }
        while self.k > k {
            let kk = self.k as f64;
            self.cdf -= self.pmf;
            self.pmf *= kk / (self.n as f64 - kk + 1.0) / self.ratio;
            self.k -= 1;
            self.steps += 1;
        }
        if self.k as u64 >= self.n {
            self.valid = false;
        }
        self.cdf.clamp(0.0, 1.0)
    }
}

fn binomial_window(n: u64, p: f64, sigmas: f64) -> (u64, u64) {
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    let half = sigmas * sd + 1.0;
    let lo = (mean - half).floor().max(0.0) as u64;
    let hi = ((mean + half).ceil() as u64).min(n);
    (lo, hi)
}

/// `P(chi <= chi0)` after `n` runs drawn from `cell`, by windowed exact summation.
pub fn region_probability(
    est: &Estimator,
    cell: &CellProbabilities,
    n: u64,
    chi0: f64,
    limits: &SummationLimits,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n", "at least one run is required"));
    }
    if chi0 == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if chi0 == f64::INFINITY {
        return Ok(1.0);
    }
    let CellProbabilities { ps, pc } = *cell;
    let (ns_lo, ns_hi) = binomial_window(n, ps, limits.window_sigmas);
    let size = ns_hi - ns_lo + 1;
    if size > limits.max_window {
        return Err(Error::WindowOverflow {
            size,
            limit: limits.max_window,
        });
    }
    let q = if ps > 0.0 { (pc / ps).clamp(0.0, 1.0) } else { 0.0 };
    let degenerate_q = q <= 0.0 || q >= 1.0;
    let mut lo_tracker = CdfTracker::new(q);
    let mut hi_tracker = CdfTracker::new(q);

    let mut total = 0.0;
    let mut ln_w = binomial_ln_pmf(ns_lo, n, ps);
    let step_ratio = ps / (1.0 - ps);
    for ns in ns_lo..=ns_hi {
        if ns > ns_lo {
            ln_w = if (ns - ns_lo) % 1024 == 0 || !ln_w.is_finite() {
                binomial_ln_pmf(ns, n, ps)
            } else {
                ln_w + ((n - ns + 1) as f64 / ns as f64 * step_ratio).ln()
            };
        }
        let w = ln_w.exp();
        if w < 1e-300 {
            continue;
        }
        let Some((lo, hi)) = est.acceptance_interval(ns, n, chi0) else {
            continue;
        };
        let conditional = if degenerate_q {
            let nc = if q >= 1.0 { ns } else { 0 };
            if (lo..=hi).contains(&nc) {
                1.0
            } else {
                0.0
            }
        } else {
            // Nc | Ns ~ Binomial(Ns, q); skip outside its own window
            let (c_lo, c_hi) = binomial_window(ns, q, limits.window_sigmas);
            if hi < c_lo || lo > c_hi {
                0.0
            } else if lo <= c_lo && hi >= c_hi {
                1.0
            } else {
                let upper = if hi >= c_hi { 1.0 } else { hi_tracker.cdf_at(ns, hi as i64) };
                let lower = if lo <= c_lo { 0.0 } else { lo_tracker.cdf_at(ns, lo as i64 - 1) };
                (upper - lower).max(0.0)
            }
        };
        total += w * conditional;
    }
    Ok(total.min(1.0))
}

/// Probability that the quantum experiment certifies after `n` runs.
pub fn p_stop(n: u64, chi0: f64, cell_q: &CellProbabilities, est: &Estimator, limits: &SummationLimits) -> Result<f64> {
    region_probability(est, cell_q, n, chi0, limits)
}

/// Grid over classical cells `pc in [ps^2, ps]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalScan {
    pub ps_points: usize,
    pub pc_points: usize,
    pub ps_min: f64,
    pub ps_max: f64,
    /// Adds the projected coherent cell to the grid.
    pub include_projection: bool,
}

impl Default for ClassicalScan {
    fn default() -> Self {
        Self {
            ps_points: 400,
            pc_points: 100,
            ps_min: 1e-4,
            ps_max: 1.0 - 1e-4,
            include_projection: true,
        }
    }
}

impl ClassicalScan {
    pub fn refined(&self) -> Self {
        Self {
            ps_points: 2 * self.ps_points,
            pc_points: 2 * self.pc_points,
            ..*self
        }
    }

    fn ps_grid(&self, extra: Option<f64>) -> Vec<f64> {
        let (l0, l1) = (self.ps_min.ln(), self.ps_max.ln());
        let m = self.ps_points.max(2);
        let mut grid: Vec<f64> = (0..m)
            .map(|i| (l0 + (l1 - l0) * i as f64 / (m - 1) as f64).exp())
            .collect();
        if let Some(p) = extra {
            grid.push(p);
            grid.sort_by(|a, b| a.total_cmp(b));
        }
        grid
    }

    fn pc_grid(&self, ps: f64) -> Vec<f64> {
        let m = self.pc_points.max(2);
        (0..m)
            .map(|j| ps * ps + (ps - ps * ps) * j as f64 / (m - 1) as f64)
            .collect()
    }

    /// Geometric step between neighbouring `ps` grid points.
    pub fn ps_ratio(&self) -> f64 {
        ((self.ps_max / self.ps_min).ln() / (self.ps_points.max(2) - 1) as f64).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalPValue {
    pub pvalue: f64,
    pub argmax: CellProbabilities,
    /// Whether the maximizing cell is the projected coherent cell, to grid resolution.
    pub argmax_is_projection: bool,
}

/// Cheap screening: `chi` at the cell mean lies this many (delta-method)
/// standard deviations above `chi0`.
fn screening_z(est: &Estimator, cell: &CellProbabilities, n: u64, chi0: f64) -> f64 {
    let CellProbabilities { ps, pc } = *cell;
    let nf = n as f64;
    let mean_chi = est.chi_frequencies(ps, pc);
    // gradient of chi in (fs, fc)
    let h = 1e-7;
    let g_s = (est.chi_frequencies(ps + h, pc) - est.chi_frequencies(ps - h, pc)) / (2.0 * h);
    let g_c = (est.chi_frequencies(ps, pc + h) - est.chi_frequencies(ps, pc - h)) / (2.0 * h);
    let var = (g_s * g_s * ps * (1.0 - ps) + g_c * g_c * pc * (1.0 - pc) + 2.0 * g_s * g_c * pc * (1.0 - ps)) / nf;
    let sd = var.max(0.0).sqrt();
    if sd == 0.0 {
        return if mean_chi > chi0 { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    (mean_chi - chi0) / sd
}

const SCREEN_Z: f64 = 40.0;

/// `P(chi <= chi0)` for every cell of the classical grid; cells screened out
/// as negligible report 0.
pub fn classical_surface(
    chi0: f64,
    n: u64,
    est: &Estimator,
    scan: &ClassicalScan,
    limits: &SummationLimits,
) -> Result<Vec<(CellProbabilities, f64)>> {
    let extra = (scan.include_projection && est.ps_cl > 0.0 && est.ps_cl < 1.0).then_some(est.ps_cl);
    let cells: Vec<CellProbabilities> = scan
        .ps_grid(extra)
        .into_iter()
        .flat_map(|ps| scan.pc_grid(ps).into_iter().map(move |pc| CellProbabilities { ps, pc }))
        .collect();
    cells
        .par_iter()
        .map(|cell| {
            if screening_z(est, cell, n, chi0) > SCREEN_Z {
                return Ok((*cell, 0.0));
            }
            Ok((*cell, region_probability(est, cell, n, chi0, limits)?))
        })
        .collect()
}

/// Worst-case classical `P(chi <= chi0)` over a grid of classical cells.
pub fn classical_pvalue(
    chi0: f64,
    n: u64,
    est: &Estimator,
    scan: &ClassicalScan,
    limits: &SummationLimits,
) -> Result<ClassicalPValue> {
    let projection = CellProbabilities::coherent(est.ps_cl)?;
    if chi0 == f64::NEG_INFINITY || chi0 == f64::INFINITY {
        return Ok(ClassicalPValue {
            pvalue: if chi0 > 0.0 { 1.0 } else { 0.0 },
            argmax: projection,
            argmax_is_projection: true,
        });
    }
    let (argmax, pvalue) = classical_surface(chi0, n, est, scan, limits)?
        .into_iter()
        .fold((projection, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let ratio = scan.ps_ratio();
    let pc_step = (projection.ps - projection.pc) / (scan.pc_points.max(2) - 1) as f64;
    let argmax_is_projection = (argmax.ps / projection.ps).ln().abs() <= ratio.ln() * 1.0001
        && (argmax.pc - argmax.ps * argmax.ps) <= pc_step * 1.0001;
    Ok(ClassicalPValue {
        pvalue: pvalue.max(0.0),
        argmax,
        argmax_is_projection,
    })
}

/// How the worst classical cell is searched for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClassicalSearch {
    /// Golden-section search along the coherent boundary `pc = ps^2`, around
    /// the projected cell.
    Boundary,
    /// Full grid over `pc in [ps^2, ps]`.
    Grid(ClassicalScan),
    /// Boundary search, with the resulting critical value checked on the
    /// full grid; falls back to the grid search if the grid finds a worse cell.
    Verified(ClassicalScan),
}

impl Default for ClassicalSearch {
    fn default() -> Self {
        ClassicalSearch::Verified(ClassicalScan::default())
    }
}

/// Golden-section maximum of `P(chi <= chi0)` over coherent cells in `[lo, hi]`.
fn boundary_maximum(
    chi0: f64,
    n: u64,
    est: &Estimator,
    limits: &SummationLimits,
    (mut lo, mut hi): (f64, f64),
    tol: f64,
) -> Result<(f64, f64)> {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let eval = |ps: f64| -> Result<f64> {
        let cell = CellProbabilities::coherent(ps.clamp(1e-12, 1.0 - 1e-12))?;
        region_probability(est, &cell, n, chi0, limits)
    };
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = eval(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = eval(x2)?;
        }
    }
    Ok(if f1 >= f2 { (f1, x1) } else { (f2, x2) })
}

fn boundary_bracket(est: &Estimator, n: u64, center: f64, half_sigmas: f64) -> (f64, f64) {
    let sd = (est.ps_cl * (1.0 - est.ps_cl) / n as f64).sqrt();
    ((center - half_sigmas * sd).max(1e-9), (center + half_sigmas * sd).min(1.0 - 1e-9))
}

/// Worst-case classical probability of `{chi <= chi0}` under the chosen search.
pub fn worst_case_pvalue(
    chi0: f64,
    n: u64,
    est: &Estimator,
    search: &ClassicalSearch,
    limits: &SummationLimits,
) -> Result<ClassicalPValue> {
    match search {
        ClassicalSearch::Grid(scan) => classical_pvalue(chi0, n, est, scan, limits),
        ClassicalSearch::Boundary => boundary_pvalue(chi0, n, est, limits, None),
        ClassicalSearch::Verified(scan) => {
            let edge = boundary_pvalue(chi0, n, est, limits, None)?;
            let grid = classical_pvalue(chi0, n, est, scan, limits)?;
            Ok(if grid.pvalue > edge.pvalue { grid } else { edge })
        }
    }
}

fn boundary_pvalue(
    chi0: f64,
    n: u64,
    est: &Estimator,
    limits: &SummationLimits,
    hint: Option<f64>,
) -> Result<ClassicalPValue> {
    let sd = (est.ps_cl * (1.0 - est.ps_cl) / n as f64).sqrt();
    let bracket = match hint {
        Some(center) => boundary_bracket(est, n, center, 1.5),
        None => boundary_bracket(est, n, est.ps_cl, 8.0),
    };
    let (mut pvalue, mut ps) = boundary_maximum(chi0, n, est, limits, bracket, 1e-3 * sd)?;
    // a maximum pinned to the edge of a narrow bracket means the hint was off
    if hint.is_some() && ((ps - bracket.0) < 0.05 * sd || (bracket.1 - ps) < 0.05 * sd) {
        (pvalue, ps) = boundary_maximum(chi0, n, est, limits, boundary_bracket(est, n, est.ps_cl, 8.0), 1e-3 * sd)?;
    }
    let argmax = CellProbabilities::coherent(ps)?;
    Ok(ClassicalPValue {
        pvalue,
        argmax,
        argmax_is_projection: (ps - est.ps_cl).abs() <= sd,
    })
}

/// Relative tolerance of the critical-value search: the returned `chi0`
/// has worst-case p-value in `[epsilon (1 - tol), epsilon]`.
pub const CHI0_REL_TOL: f64 = 1e-3;

/// Critical value and the worst-case p-value it attains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub chi0: f64,
    pub pvalue: ClassicalPValue,
}

/// Largest `chi0` whose worst-case classical p-value does not exceed `epsilon`.
pub fn critical_chi0(
    epsilon: f64,
    n: u64,
    est: &Estimator,
    search: &ClassicalSearch,
    limits: &SummationLimits,
) -> Result<CriticalValue> {
    critical_chi0_tol(epsilon, n, est, search, limits, CHI0_REL_TOL)
}

/// [`critical_chi0`] with the attained p-value in `[epsilon (1 - rel_tol), epsilon]`.
pub fn critical_chi0_tol(
    epsilon: f64,
    n: u64,
    est: &Estimator,
    search: &ClassicalSearch,
    limits: &SummationLimits,
    rel_tol: f64,
) -> Result<CriticalValue> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::invalid("rel_tol", format!("{rel_tol} outside (0, 1)")));
    }
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::invalid("epsilon", format!("{epsilon} outside (0, 0.5]")));
    }
    if n == 0 {
        return Err(Error::invalid("n", "at least one run is required"));
    }
    let ClassicalSearch::Verified(scan) = search else {
        return bracketed_chi0(epsilon, n, est, search, limits, rel_tol);
    };
    let edge = bracketed_chi0(epsilon, n, est, &ClassicalSearch::Boundary, limits, rel_tol)?;
    let grid = classical_pvalue(edge.chi0, n, est, scan, limits)?;
    if grid.pvalue <= epsilon {
        let pvalue = if grid.pvalue > edge.pvalue.pvalue { grid } else { edge.pvalue };
        return Ok(CriticalValue { chi0: edge.chi0, pvalue });
    }
    bracketed_chi0(epsilon, n, est, &ClassicalSearch::Grid(*scan), limits, rel_tol)
}

fn bracketed_chi0(
    epsilon: f64,
    n: u64,
    est: &Estimator,
    search: &ClassicalSearch,
    limits: &SummationLimits,
    rel_tol: f64,
) -> Result<CriticalValue> {
    let mut hint: Option<f64> = None;
    let mut worst = |chi0: f64| -> Result<ClassicalPValue> {
        let r = match search {
            ClassicalSearch::Boundary => boundary_pvalue(chi0, n, est, limits, hint)?,
            ClassicalSearch::Grid(scan) | ClassicalSearch::Verified(scan) => {
                classical_pvalue(chi0, n, est, scan, limits)?
            }
        };
        hint = Some(r.argmax.ps);
        Ok(r)
    };

    // chi scale: first-order standard deviation of y' for the projected cell
    let TransformCoefficients { b, c, .. } = est.coeffs;
    let u = est.ps_cl * est.ps_cl;
    let scale = ((b / c) * u * (1.0 - u) / n as f64).sqrt().max(1e-12);

    let mut lo = -8.0 * scale;
    let mut f_lo = worst(lo)?;
    let mut expansions = 0;
    while f_lo.pvalue > epsilon {
        lo -= 8.0 * scale * 2f64.powi(expansions);
        f_lo = worst(lo)?;
        expansions += 1;
        if expansions > 40 {
            return Err(Error::Infeasible(format!("no chi0 reaches p-value {epsilon}")));
        }
    }
    let mut hi = 8.0 * scale + est.a * 64.0 * scale * scale;
    let mut f_hi = worst(hi)?;
    expansions = 0;
    while f_hi.pvalue <= epsilon {
        (lo, f_lo) = (hi, f_hi);
        hi += 8.0 * scale * 2f64.powi(expansions);
        f_hi = worst(hi)?;
        expansions += 1;
        if expansions > 40 {
            return Err(Error::Infeasible("worst-case p-value never exceeds epsilon".into()));
        }
    }
    // Illinois-modified regula falsi on p(chi0) - epsilon, keeping p(lo) <= epsilon < p(hi)
    let target_lo = epsilon * (1.0 - rel_tol);
    let (mut g_lo, mut g_hi) = (f_lo.pvalue - epsilon, f_hi.pvalue - epsilon);
    let mut side = 0i8;
    for _ in 0..200 {
        if f_lo.pvalue >= target_lo || hi - lo <= 1e-15 * scale.max(hi.abs()) {
            break;
        }
        let mut x = (lo * g_hi - hi * g_lo) / (g_hi - g_lo);
        let width = hi - lo;
        if !(x > lo + 1e-3 * width && x < hi - 1e-3 * width) {
            x = 0.5 * (lo + hi);
        }
        let fx = worst(x)?;
        let gx = fx.pvalue - epsilon;
        if gx <= 0.0 {
            (lo, f_lo, g_lo) = (x, fx, gx);
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        } else {
            (hi, g_hi) = (x, gx);
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(CriticalValue { chi0: lo, pvalue: f_lo })
}

/// One coarse-grid point of the stopping curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopPoint {
    pub n: u64,
    pub chi0: f64,
    pub p_stop: f64,
    /// Worst-case classical p-value attained by `chi0`.
    pub pvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopCurve {
    pub grid: Vec<StopPoint>,
    pub coarse_n: u64,
    pub expected_runs: f64,
    /// `(1 - P_stop) (N_last + n/2)` at the last grid point: the order of
    /// magnitude of the truncated remainder of the sum.
    pub remainder_estimate: f64,
}

impl StopCurve {
    /// Coarse-grained `<N> = sum_j n (2j + 1)/2 (P(n(j+1)) - P(nj))`, with `P(0) = 0`.
    pub fn expected_runs_from(grid: &[StopPoint], coarse_n: u64) -> f64 {
        let mut prev = 0.0;
        let mut total = 0.0;
        for (j, pt) in grid.iter().enumerate() {
            total += coarse_n as f64 * (2 * j + 1) as f64 / 2.0 * (pt.p_stop - prev);
            prev = pt.p_stop;
        }
        total
    }

    /// First grid `N` from which `N (1 - P_stop(N))` decreases monotonically
    /// to the end of the grid.
    pub fn tail_decreasing_from(&self) -> Option<u64> {
        let tail: Vec<f64> = self.grid.iter().map(|p| p.n as f64 * (1.0 - p.p_stop)).collect();
        if tail.len() < 2 {
            return None;
        }
        let mut start = tail.len() - 1;
        while start > 0 && tail[start - 1] >= tail[start] {
            start -= 1;
        }
        (start < tail.len() - 1).then(|| self.grid[start].n)
    }

    /// Linear interpolation of `chi0` between grid points (clamped at the ends).
    pub fn chi0_at(&self, n: u64) -> Option<f64> {
        interpolate_chi0(&self.grid.iter().map(|p| (p.n, p.chi0)).collect::<Vec<_>>(), n)
    }
}

pub(crate) fn interpolate_chi0(table: &[(u64, f64)], n: u64) -> Option<f64> {
    let first = table.first()?;
    if n <= first.0 {
        return Some(first.1);
    }
    for w in table.windows(2) {
        let ((n0, c0), (n1, c1)) = (w[0], w[1]);
        if n <= n1 {
            if n == n1 {
                return Some(c1);
            }
            if c0 == c1 || n == n0 {
                return Some(c0);
            }
            let t = (n - n0) as f64 / (n1 - n0) as f64;
            return Some(c0 + t * (c1 - c0));
        }
    }
    table.last().map(|p| p.1)
}

/// Options for [`expected_runs`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopOptions {
    /// Summation stops once `1 - P_stop` falls below this.
    pub tail_tolerance: f64,
    /// Resource ceiling on the coarse grid length.
    pub max_points: usize,
    pub search: ClassicalSearch,
    pub limits: SummationLimits,
    /// Relative tolerance of each critical-value search.
    pub chi0_rel_tol: f64,
}

impl Default for StopOptions {
    fn default() -> Self {
        Self {
            chi0_rel_tol: CHI0_REL_TOL,
            tail_tolerance: 1e-4,
            max_points: 2_000,
            search: ClassicalSearch::default(),
            limits: SummationLimits::default(),
        }
    }
}

/// One coarse-grid evaluation: `chi0(n)` then `P_stop(n)`.
pub fn stop_point(
    epsilon: f64,
    n: u64,
    cell_q: &CellProbabilities,
    est: &Estimator,
    opts: &StopOptions,
) -> Result<StopPoint> {
    let crit = critical_chi0_tol(epsilon, n, est, &opts.search, &opts.limits, opts.chi0_rel_tol)?;
    let p = p_stop(n, crit.chi0, cell_q, est, &opts.limits)?;
    Ok(StopPoint {
        n,
        chi0: crit.chi0,
        p_stop: p,
        pvalue: crit.pvalue.pvalue,
    })
}

/// Stopping curve on the grid `N = n, 2n, ...` and the expected run count.
pub fn expected_runs(
    epsilon: f64,
    coarse_n: u64,
    cell_q: &CellProbabilities,
    est: &Estimator,
    opts: &StopOptions,
) -> Result<StopCurve> {
    if coarse_n < 1 {
        return Err(Error::invalid("coarse_n", "must be at least 1"));
    }
    let batch = rayon::current_num_threads().max(1);
    let mut grid: Vec<StopPoint> = Vec::new();
    'outer: loop {
        let start = grid.len() as u64 + 1;
        let points: Vec<StopPoint> = (start..start + batch as u64)
            .into_par_iter()
            .map(|j| stop_point(epsilon, j * coarse_n, cell_q, est, opts))
            .collect::<Result<_>>()?;
        for pt in points {
            grid.push(pt);
            if 1.0 - pt.p_stop < opts.tail_tolerance {
                break 'outer;
            }
            if grid.len() >= opts.max_points {
                return Err(Error::NonConvergence {
                    max_runs: coarse_n * opts.max_points as u64,
                    tolerance: opts.tail_tolerance,
                });
            }
        }
    }
    let last = grid.last().expect("grid is non-empty");
    let remainder_estimate = (1.0 - last.p_stop) * (last.n as f64 + coarse_n as f64 / 2.0);
    Ok(StopCurve {
        expected_runs: StopCurve::expected_runs_from(&grid, coarse_n),
        remainder_estimate,
        coarse_n,
        grid,
    })
}

/// Certification plan: the estimator built on a quantum cell plus the
/// critical values for a target p-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationPlan {
    pub cell_q: CellProbabilities,
    pub estimator: Estimator,
    pub epsilon: f64,
    pub chi0_by_n: Vec<(u64, f64)>,
}

impl CertificationPlan {
    pub fn new(cell_q: CellProbabilities, a: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 0.5) {
            return Err(Error::invalid("epsilon", format!("{epsilon} outside (0, 0.5]")));
        }
        Ok(Self {
            estimator: Estimator::new(&cell_q, a)?,
            cell_q,
            epsilon,
            chi0_by_n: Vec::new(),
        })
    }

    pub fn coeffs(&self) -> &TransformCoefficients {
        &self.estimator.coeffs
    }

    pub fn a(&self) -> f64 {
        self.estimator.a
    }

    pub fn ps_cl(&self) -> f64 {
        self.estimator.ps_cl
    }

    pub fn center(&self) -> (f64, f64) {
        self.estimator.center
    }

    pub fn chi(&self, ns: u64, nc: u64, n: u64) -> f64 {
        self.estimator.chi(ns, nc, n)
    }

    /// Fills `chi0_by_n` from a computed stopping curve.
    pub fn with_curve(mut self, curve: &StopCurve) -> Self {
        self.chi0_by_n = curve.grid.iter().map(|p| (p.n, p.chi0)).collect();
        self
    }

    /// Uses a fixed table of critical values.
    pub fn with_table(mut self, table: Vec<(u64, f64)>) -> Self {
        self.chi0_by_n = table;
        self
    }

    /// Tabulated critical value, linearly interpolated.
    pub fn chi0_at(&self, n: u64) -> Option<f64> {
        interpolate_chi0(&self.chi0_by_n, n)
    }

    pub fn expected_runs(&self, coarse_n: u64, opts: &StopOptions) -> Result<StopCurve> {
        expected_runs(self.epsilon, coarse_n, &self.cell_q, &self.estimator, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(ps: f64, pc: f64) -> CellProbabilities {
        CellProbabilities::new(ps, pc).unwrap()
    }

    #[test]
    fn multinomial_examples() {
        assert_eq!(multinomial_log_pmf(5, 5, 5, &cell(1.0, 1.0)).unwrap(), 0.0);
        let lp = multinomial_log_pmf(0, 0, 40, &cell(0.3, 0.05)).unwrap();
        assert!((lp - 40.0 * 0.7f64.ln()).abs() < 1e-12);
        let lp = multinomial_log_pmf(2, 1, 3, &cell(0.5, 0.2)).unwrap();
        assert!((lp - 0.18f64.ln()).abs() < 1e-14);
        assert!(multinomial_log_pmf(1, 2, 3, &cell(0.5, 0.2)).is_err());
        assert!(multinomial_log_pmf(4, 1, 3, &cell(0.5, 0.2)).is_err());
        assert_eq!(multinomial_log_pmf(2, 1, 3, &cell(0.5, 0.0)).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn coefficients_off_the_boundary() {
        let t = transform_coefficients(&cell(0.3, 0.09 * (1.0 - 1e-9))).unwrap();
        assert!(t.b > 0.0 && t.b.is_finite());
        assert_eq!(t.d, -1.0);
        assert!((0.0..=std::f64::consts::PI).contains(&t.phi));
        let t = transform_coefficients(&cell(0.3, 0.05)).unwrap();
        assert!((t.b - (0.95 * 0.3 / (0.7 * 0.05) - 1.0f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cells() {
        for (ps, pc) in [(0.3, 0.3), (0.3, 0.0), (0.0, 0.0), (1.0, 0.5)] {
            assert!(matches!(
                transform_coefficients(&cell(ps, pc)),
                Err(Error::DegenerateCell { .. })
            ));
        }
    }

    #[test]
    fn projection_fixed_point() {
        for ps in [0.05, 0.3, 0.7] {
            let q = cell(ps, ps * ps);
            let t = transform_coefficients(&q).unwrap();
            assert!((classical_projection(&q, &t).unwrap() - ps).abs() < 1e-12);
        }
    }

    #[test]
    fn estimator_vertex_and_offset() {
        let est = Estimator::new(&cell(0.3, 0.05), 40.0).unwrap();
        let u = est.ps_cl * est.ps_cl;
        assert!(est.chi_frequencies(est.ps_cl, u).abs() < 1e-14);
        // move along +y' by delta: (x, y) = R^-1 (x'0, y'0 + delta)
        let delta = 1e-3;
        let (s, c) = est.coeffs.phi.sin_cos();
        let (xr, yr) = (est.center.0, est.center.1 + delta);
        let (x, y) = (c * xr - s * yr, s * xr + c * yr);
        let TransformCoefficients { b, c: cc, d, .. } = est.coeffs;
        let v = y / (b / cc).sqrt();
        let uu = (x - d / (cc * b).sqrt() * v) / (cc / b).sqrt();
        assert!((est.chi_frequencies(uu.sqrt(), v) - delta).abs() < 1e-12);
        // the quantum mean sits on the non-classical side
        assert!(est.chi_frequencies(0.3, 0.05) < 0.0);
    }

    #[test]
    fn interval_matches_pointwise_evaluation() {
        let est = Estimator::new(&cell(0.3, 0.05), 40.0).unwrap();
        let n = 400;
        for chi0 in [-0.05, -0.01, 0.0, 0.02] {
            for ns in 0..=n {
                let direct: Vec<u64> = (0..=ns).filter(|&nc| est.chi(ns, nc, n) <= chi0).collect();
                let got = est.acceptance_interval(ns, n, chi0);
                match got {
                    None => assert!(direct.is_empty(), "ns={ns} chi0={chi0}"),
                    Some((lo, hi)) => {
                        assert_eq!(direct.first(), Some(&lo), "ns={ns} chi0={chi0}");
                        assert_eq!(direct.last(), Some(&hi));
                        assert_eq!(direct.len() as u64, hi - lo + 1);
                    }
                }
            }
        }
    }

    #[test]
    fn region_probability_limits() {
        let q = cell(0.3, 0.05);
        let est = Estimator::new(&q, 40.0).unwrap();
        let lim = SummationLimits::default();
        assert_eq!(region_probability(&est, &q, 1000, f64::INFINITY, &lim).unwrap(), 1.0);
        assert_eq!(region_probability(&est, &q, 1000, f64::NEG_INFINITY, &lim).unwrap(), 0.0);
        assert!((region_probability(&est, &q, 1000, 1e6, &lim).unwrap() - 1.0).abs() < 1e-9);
        let tiny = SummationLimits {
            max_window: 10,
            ..lim
        };
        assert!(matches!(
            region_probability(&est, &q, 100_000, 0.0, &tiny),
            Err(Error::WindowOverflow { .. })
        ));
    }

    #[test]
    fn classical_pvalue_limits() {
        let est = Estimator::new(&cell(0.3, 0.05), 40.0).unwrap();
        let scan = ClassicalScan {
            ps_points: 20,
            pc_points: 5,
            ..ClassicalScan::default()
        };
        let lim = SummationLimits::default();
        assert_eq!(classical_pvalue(f64::NEG_INFINITY, 1000, &est, &scan, &lim).unwrap().pvalue, 0.0);
        assert_eq!(classical_pvalue(f64::INFINITY, 1000, &est, &scan, &lim).unwrap().pvalue, 1.0);
    }

    #[test]
    fn stop_curve_step_function() {
        let grid: Vec<StopPoint> = (1..=10)
            .map(|j| StopPoint {
                n: j * 100,
                chi0: 0.0,
                p_stop: if j >= 4 { 1.0 } else { 0.0 },
                pvalue: 0.01,
            })
            .collect();
        // jump between j = 3 and j = 4: n (2*3 + 1)/2
        assert_eq!(StopCurve::expected_runs_from(&grid, 100), 350.0);
    }

    #[test]
    fn chi0_interpolation() {
        let table = vec![(100, -1.0), (200, -0.5), (300, -0.25)];
        assert_eq!(interpolate_chi0(&table, 50), Some(-1.0));
        assert_eq!(interpolate_chi0(&table, 150), Some(-0.75));
        assert_eq!(interpolate_chi0(&table, 1000), Some(-0.25));
        assert_eq!(interpolate_chi0(&[], 10), None);
        let inf = vec![(100, f64::INFINITY), (200, f64::INFINITY)];
        assert_eq!(interpolate_chi0(&inf, 150), Some(f64::INFINITY));
        assert_eq!(interpolate_chi0(&inf, 200), Some(f64::INFINITY));
    }
}
