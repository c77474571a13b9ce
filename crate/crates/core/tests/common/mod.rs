#![allow(dead_code)]

use num_bigint::BigInt;

use eyewitness::statistics::{CellProbabilities, Estimator, TransformCoefficients};

/// Fractional bits of the fixed-point oracle.
const FRAC_BITS: u32 = 200;

fn fixed_from_f64(x: f64) -> BigInt {
    // exact: x carries at most 53 significant bits and |x| < 2^10
    BigInt::from((x * 2f64.powi(60)).round() as i128) << (FRAC_BITS - 60)
}

fn fixed_to_f64(x: &BigInt) -> f64 {
    // keep the leading 63 bits so tiny values retain full relative precision
    let shift = x.bits().saturating_sub(63);
    let top: BigInt = x >> shift as usize;
    let top: i64 = top.try_into().expect("63-bit mantissa");
    top as f64 * 2f64.powi(shift as i32 - FRAC_BITS as i32)
}

/// Column `<n|D(alpha)|m>`, `n = 0..=n_max`, for real `alpha >= 0`, from the
/// exponential of the truncated generator `alpha (a^dag - a)` applied to `|m>`
/// in 200-bit fixed point (scaling and squaring on the vector, Taylor steps).
pub fn displacement_column(m: usize, alpha: f64, n_max: usize) -> Vec<f64> {
    assert!(alpha >= 0.0 && alpha < 100.0);
    let cutoff = n_max.max(m).max((alpha * alpha) as usize) + (12.0 * alpha) as usize + 80;
    let one = BigInt::from(1) << FRAC_BITS;
    let a = fixed_from_f64(alpha);
    // coupling[j] = alpha sqrt(j) in fixed point
    let coupling: Vec<BigInt> = (0..=cutoff + 1)
        .map(|j| (&a * (BigInt::from(j) << (2 * FRAC_BITS)).sqrt()) >> FRAC_BITS)
        .collect();
    let apply = |v: &[BigInt]| -> Vec<BigInt> {
        (0..=cutoff)
            .map(|j| {
                let mut out = BigInt::from(0);
                if j > 0 {
                    out += &coupling[j] * &v[j - 1];
                }
                if j < cutoff {
                    out -= &coupling[j + 1] * &v[j + 1];
                }
                out >> FRAC_BITS
            })
            .collect()
    };
    let norm = 2.0 * alpha * ((cutoff + 1) as f64).sqrt();
    let steps = (norm / 16.0).ceil().max(1.0) as u64;
    let mut v = vec![BigInt::from(0); cutoff + 1];
    v[m] = one;
    for _ in 0..steps {
        let mut sum = v.clone();
        let mut term = v;
        for k in 1u64.. {
            term = apply(&term)
                .into_iter()
                .map(|t| t / BigInt::from(steps * k))
                .collect();
            if term.iter().all(|t| t.bits() == 0) {
                break;
            }
            for (s, t) in sum.iter_mut().zip(&term) {
                *s += t;
            }
        }
        v = sum;
    }
    v[..=n_max].iter().map(fixed_to_f64).collect()
}

/// `ln k!` for `k = 0..=n` by direct summation.
pub fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// `P(chi <= chi0)` by summing the trinomial over every `(Ns, Nc)`.
pub fn region_probability_direct(est: &Estimator, cell: &CellProbabilities, n: u64, chi0: f64) -> f64 {
    let lf = ln_factorials(n);
    let (ps, pc) = (cell.ps, cell.pc);
    let ln = |p: f64, k: u64| if k == 0 { 0.0 } else { k as f64 * p.ln() };
    let mut total = 0.0;
    for ns in 0..=n {
        for nc in 0..=ns {
            if est.chi(ns, nc, n) <= chi0 {
                let (a, b, c) = (nc, ns - nc, n - ns);
                let lp = lf[n as usize] - lf[a as usize] - lf[b as usize] - lf[c as usize]
                    + ln(pc, a)
                    + ln(ps - pc, b)
                    + ln(1.0 - ps, c);
                total += lp.exp();
            }
        }
    }
    total
}

/// Coherent single probability whose `(x, y)` image is closest to the quantum
/// cell, by golden-section search over the boundary `pc = ps^2`.
pub fn projection_by_minimization(cell: &CellProbabilities, coeffs: &TransformCoefficients) -> f64 {
    let (xq, yq) = coeffs.to_xy(cell.ps * cell.ps, cell.pc);
    let dist = |w: f64| {
        let (x, y) = coeffs.to_xy(w, w);
        (x - xq).powi(2) + (y - yq).powi(2)
    };
    // coarse scan, then golden section on the bracketing cells
    let points = 10_000;
    let best = (0..=points)
        .min_by(|&i, &j| dist(i as f64 / points as f64).total_cmp(&dist(j as f64 / points as f64)))
        .unwrap();
    let (mut lo, mut hi) = ((best.max(1) - 1) as f64 / points as f64, ((best + 1).min(points)) as f64 / points as f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if dist(x1) < dist(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    (0.5 * (lo + hi)).sqrt()
}

/// `P(Binomial(n, p) <= k)` by direct summation of the mass function.
pub fn binomial_cdf_direct(k: u64, n: u64, p: f64) -> f64 {
    let lf = ln_factorials(n);
    (0..=k.min(n))
        .map(|j| {
            (lf[n as usize] - lf[j as usize] - lf[(n - j) as usize] + j as f64 * p.ln() + (n - j) as f64 * (1.0 - p).ln())
                .exp()
        })
        .sum()
}

pub fn working_point_cell() -> CellProbabilities {
    eyewitness::chain::run_chain(&Default::default()).unwrap().cell
}
