//! Log-domain helpers for the binomial and Poisson families.

use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;
use std::sync::OnceLock;

const FACTORIAL_TABLE_LEN: usize = 171;

fn ln_factorial_table() -> &'static [f64; FACTORIAL_TABLE_LEN] {
    static TABLE: OnceLock<[f64; FACTORIAL_TABLE_LEN]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0.0; FACTORIAL_TABLE_LEN];
        let mut fact = 1.0f64;
        for (n, slot) in table.iter_mut().enumerate().skip(1) {
            fact *= n as f64;
            *slot = fact.ln();
        }
        table
    })
}

/// `ln(n!)`; tabulated from exact products below 171, log-gamma above.
#[inline]
pub fn ln_factorial(n: u64) -> f64 {
    if (n as usize) < FACTORIAL_TABLE_LEN {
        ln_factorial_table()[n as usize]
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// `ln C(n, k)`.
#[inline]
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `x * ln(p)` with the convention `0 * ln(0) = 0`.
#[inline]
pub(crate) fn xlogy(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * p.ln()
    }
}

pub fn binomial_ln_pmf(k: u64, n: u64, q: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_choose(n, k) + xlogy(k as f64, q) + xlogy((n - k) as f64, 1.0 - q)
}

/// Full mass function of `Binomial(n, q)` over `k = 0..=n`.
pub fn binomial_pmf_row(n: usize, q: f64) -> Vec<f64> {
    if q <= 0.0 {
        let mut row = vec![0.0; n + 1];
        row[0] = 1.0;
        return row;
    }
    if q >= 1.0 {
        let mut row = vec![0.0; n + 1];
        row[n] = 1.0;
        return row;
    }
    let (lq, lp) = (q.ln(), (1.0 - q).ln());
    let ln_n = ln_factorial(n as u64);
    (0..=n)
        .map(|k| {
            let lk = ln_n - ln_factorial(k as u64) - ln_factorial((n - k) as u64)
                + k as f64 * lq
                + (n - k) as f64 * lp;
            lk.exp()
        })
        .collect()
}

/// `P(Binomial(n, q) >= k)`, accurate in both tails.
pub fn binomial_sf(k: u64, n: u64, q: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n || q <= 0.0 {
        return 0.0;
    }
    if q >= 1.0 {
        return 1.0;
    }
    let mean = n as f64 * q;
    if (k as f64) > mean {
        // direct upper sum; terms decrease geometrically past the mode
        let mut total = 0.0;
        let mut j = k;
        let mut term = binomial_ln_pmf(j, n, q).exp();
        let ratio = q / (1.0 - q);
        while j <= n {
            total += term;
            if term <= total * 1e-18 {
                break;
            }
            term *= (n - j) as f64 / (j + 1) as f64 * ratio;
            j += 1;
        }
        total.min(1.0)
    } else {
        let lower: f64 = (0..k).map(|j| binomial_ln_pmf(j, n, q).exp()).sum();
        (1.0 - lower).clamp(0.0, 1.0)
    }
}

/// `P(Binomial(n, q) <= k)` via the regularized incomplete beta function.
pub fn binomial_cdf(k: i64, n: u64, q: f64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    let k = k as u64;
    if k >= n {
        return 1.0;
    }
    if q <= 0.0 {
        return 1.0;
    }
    if q >= 1.0 {
        return 0.0;
    }
    beta_reg((n - k) as f64, k as f64 + 1.0, 1.0 - q)
}

pub fn poisson_ln_pmf(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -lambda + k as f64 * lambda.ln() - ln_factorial(k)
}

/// `P(Poisson(lambda) >= k)`, accurate in both tails.
pub fn poisson_sf(k: u64, lambda: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if lambda <= 0.0 {
        return 0.0;
    }
    if (k as f64) > lambda {
        let mut total = 0.0;
        let mut j = k;
        let mut term = poisson_ln_pmf(j, lambda).exp();
        loop {
            total += term;
            if term <= total * 1e-18 || term == 0.0 {
                break;
            }
            j += 1;
            term *= lambda / j as f64;
        }
        total.min(1.0)
    } else {
        let lower: f64 = (0..k).map(|j| poisson_ln_pmf(j, lambda).exp()).sum();
        (1.0 - lower).clamp(0.0, 1.0)
    }
}
