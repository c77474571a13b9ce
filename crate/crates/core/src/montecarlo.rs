//! Trajectory simulation of the sequential experiment.
//!
//! Every trajectory draws from its own ChaCha stream of one master seed, so
//! results do not depend on how trajectories are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statistics::{CellProbabilities, CertificationPlan};

/// Two-sided 95% normal quantile used for Wilson intervals.
pub const WILSON_Z: f64 = 1.959963984540054;

/// Seed of one trajectory: the master seed and the stream index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectorySeed {
    pub master: u64,
    pub stream: u64,
}

impl TrajectorySeed {
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    /// First checkpoint at which `chi <= chi0(N)`.
    pub stop_run: Option<u64>,
    /// Counts at the stopping checkpoint, or at the last checkpoint if none.
    pub counts_at_stop: (u64, u64),
    pub seed: TrajectorySeed,
}

fn draw_block(rng: &mut ChaCha8Rng, cell: &CellProbabilities, n: u64) -> (u64, u64) {
    if n == 0 {
        return (0, 0);
    }
    let ns = sample_binomial(rng, n, cell.ps);
    let q = if cell.ps > 0.0 { (cell.pc / cell.ps).clamp(0.0, 1.0) } else { 0.0 };
    (ns, sample_binomial(rng, ns, q))
}

fn sample_binomial(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    if p <= 0.0 || n == 0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p lies in (0, 1)").sample(rng)
}

/// `(Ns, Nc)` after `n` i.i.d. runs; deterministic given `seed`.
pub fn simulate_counts(cell: &CellProbabilities, n: u64, seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_block(&mut rng, cell, n)
}

/// Runs one sequential experiment, checking at `coarse_n, 2 coarse_n, ...`.
pub fn run_trajectory(
    cell: &CellProbabilities,
    plan: &CertificationPlan,
    coarse_n: u64,
    checkpoints: usize,
    seed: TrajectorySeed,
) -> TrajectoryResult {
    let mut rng = seed.rng();
    let (mut ns, mut nc) = (0u64, 0u64);
    for j in 1..=checkpoints as u64 {
        let (bs, bc) = draw_block(&mut rng, cell, coarse_n);
        ns += bs;
        nc += bc;
        let n = j * coarse_n;
        let chi0 = plan.chi0_at(n).unwrap_or(f64::NEG_INFINITY);
        if plan.chi(ns, nc, n) <= chi0 {
            return TrajectoryResult {
                stop_run: Some(n),
                counts_at_stop: (ns, nc),
                seed,
            };
        }
    }
    TrajectoryResult {
        stop_run: None,
        counts_at_stop: (ns, nc),
        seed,
    }
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalStopPoint {
    pub n: u64,
    pub stopped: u64,
    pub fraction: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalStopCurve {
    pub points: Vec<EmpiricalStopPoint>,
    pub trajectories: Vec<TrajectoryResult>,
}

/// Cumulative fraction of trajectories stopped by each checkpoint, with
/// Wilson 95% intervals.
pub fn empirical_stop_curve(
    cell_q: &CellProbabilities,
    plan: &CertificationPlan,
    coarse_n: u64,
    checkpoints: usize,
    trials: usize,
    seed: u64,
) -> Result<EmpiricalStopCurve> {
    if trials < 100 {
        return Err(Error::invalid("trials", format!("{trials} is below the minimum of 100")));
    }
    if coarse_n < 1 || checkpoints < 1 {
        return Err(Error::invalid("coarse_n", "need coarse_n >= 1 and at least one checkpoint"));
    }
    let trajectories: Vec<TrajectoryResult> = (0..trials as u64)
        .into_par_iter()
        .map(|stream| run_trajectory(cell_q, plan, coarse_n, checkpoints, TrajectorySeed { master: seed, stream }))
        .collect();
    let mut stops = vec![0u64; checkpoints];
    for t in &trajectories {
        if let Some(n) = t.stop_run {
            stops[(n / coarse_n - 1) as usize] += 1;
        }
    }
    let mut cumulative = 0;
    let points = stops
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            cumulative += k;
            let (wilson_low, wilson_high) = wilson_interval(cumulative, trials as u64, WILSON_Z);
            EmpiricalStopPoint {
                n: (j as u64 + 1) * coarse_n,
                stopped: cumulative,
                fraction: cumulative as f64 / trials as f64,
                wilson_low,
                wilson_high,
            }
        })
        .collect();
    Ok(EmpiricalStopCurve { points, trajectories })
}

/// Number of trajectories with `chi <= chi0` at the single checkpoint `n`.
pub fn single_checkpoint_stops(
    cell_q: &CellProbabilities,
    plan: &CertificationPlan,
    n: u64,
    chi0: f64,
    trials: usize,
    seed: u64,
) -> u64 {
    (0..trials as u64)
        .into_par_iter()
        .map(|stream| {
            let mut rng = TrajectorySeed { master: seed, stream }.rng();
            let (ns, nc) = draw_block(&mut rng, cell_q, n);
            u64::from(plan.chi(ns, nc, n) <= chi0)
        })
        .sum()
}
