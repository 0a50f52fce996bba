//! Classical QUBO solvers: exhaustive enumeration, steepest descent,
//! simulated annealing and tabu search. All heuristics use O(n) incremental
//! flip updates; reported energies are recomputed from scratch.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubo::{QuboProblem, SelectionMask};

/// Largest problem the exhaustive solver accepts.
pub const EXHAUSTIVE_LIMIT: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub best_mask: SelectionMask,
    pub best_energy: f64,
    pub evaluations: u64,
    pub solver_name: String,
    pub seed: u64,
}

impl SolveReport {
    fn new(p: &QuboProblem, bits: Vec<bool>, evaluations: u64, name: &str, seed: u64) -> Self {
        let best_energy = p.energy_bits(&bits);
        Self {
            best_mask: SelectionMask::new(bits),
            best_energy,
            evaluations,
            solver_name: name.to_owned(),
            seed,
        }
    }
}

/// Bits plus the per-variable flip gains, updated in O(n) per flip.
struct FlipState<'a> {
    p: &'a QuboProblem,
    bits: Vec<bool>,
    /// `q_ii + sum_{j != i} (q_ij + q_ji) x_j`
    gain: Vec<f64>,
    energy: f64,
}

impl<'a> FlipState<'a> {
    fn new(p: &'a QuboProblem, bits: Vec<bool>) -> Self {
        let n = p.n();
        let q = p.q();
        let gain = (0..n)
            .map(|i| {
                q[[i, i]]
                    + (0..n)
                        .filter(|&j| j != i && bits[j])
                        .map(|j| q[[i, j]] + q[[j, i]])
                        .sum::<f64>()
            })
            .collect();
        let energy = p.energy_bits(&bits);
        Self {
            p,
            bits,
            gain,
            energy,
        }
    }

    fn delta(&self, i: usize) -> f64 {
        if self.bits[i] {
            -self.gain[i]
        } else {
            self.gain[i]
        }
    }

    fn flip(&mut self, i: usize) {
        self.energy += self.delta(i);
        self.bits[i] = !self.bits[i];
        let sign = if self.bits[i] { 1.0 } else { -1.0 };
        let q = self.p.q();
        for j in 0..self.bits.len() {
            if j != i {
                self.gain[j] += sign * (q[[j, i]] + q[[i, j]]);
            }
        }
    }

    /// Lowest-index flip with the smallest delta.
    fn best_flip(&self, allowed: impl Fn(usize, f64) -> bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.bits.len() {
            let d = self.delta(i);
            if allowed(i, d) && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }
}

pub fn random_mask(n: usize, rng: &mut impl Rng) -> Vec<bool> {
    (0..n).map(|_| rng.gen_bool(0.5)).collect()
}

/// Enumerate all 2^n masks in Gray-code order. Ties go to the smallest mask
/// index (bit i = x_i).
pub fn solve_exhaustive(p: &QuboProblem) -> Result<SolveReport> {
    let n = p.n();
    if n > EXHAUSTIVE_LIMIT {
        return Err(Error::TooLarge {
            n,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let mut state = FlipState::new(p, vec![false; n]);
    let (mut best_index, mut best_energy) = (0u64, state.energy);
    let mut index = 0u64;
    let total = 1u64 << n;
    for step in 1..total {
        let bit = step.trailing_zeros() as usize;
        state.flip(bit);
        index ^= 1 << bit;
        let e = state.energy;
        let tol = 1e-12 * (1.0 + best_energy.abs());
        if e < best_energy - tol || ((e - best_energy).abs() <= tol && index < best_index) {
            best_energy = e.min(best_energy);
            best_index = index;
        }
    }
    let bits = SelectionMask::from_index(best_index, n).bits;
    Ok(SolveReport::new(p, bits, total, "exhaustive", 0))
}

/// Greedy single-flip descent until no flip lowers the energy.
pub fn solve_steepest_descent(
    p: &QuboProblem,
    start: &SelectionMask,
    max_iters: u64,
) -> Result<SolveReport> {
    if start.len() != p.n() {
        return Err(Error::Dimension {
            expected: p.n(),
            actual: start.len(),
        });
    }
    let mut state = FlipState::new(p, start.bits.clone());
    let mut evaluations = 0;
    for _ in 0..max_iters {
        evaluations += p.n() as u64;
        match state.best_flip(|_, _| true) {
            Some((i, d)) if d < -1e-12 => state.flip(i),
            _ => break,
        }
    }
    Ok(SolveReport::new(p, state.bits, evaluations, "sd", 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteepestDescentConfig {
    pub max_iters: u64,
}

impl Default for SteepestDescentConfig {
    fn default() -> Self {
        Self { max_iters: 10_000 }
    }
}

/// Steepest descent from a uniformly random start drawn from `seed`.
pub fn solve_steepest_descent_seeded(
    p: &QuboProblem,
    seed: u64,
    cfg: &SteepestDescentConfig,
) -> Result<SolveReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = SelectionMask::new(random_mask(p.n(), &mut rng));
    let mut report = solve_steepest_descent(p, &start, cfg.max_iters)?;
    report.seed = seed;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealingConfig {
    pub sweeps: u64,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for AnnealingConfig {
    fn default() -> Self {
        Self {
            sweeps: 1000,
            beta_min: 0.1,
            beta_max: 10.0,
        }
    }
}

/// Metropolis single-flip annealing with a geometric inverse-temperature
/// schedule; one sweep proposes each variable once in a fresh random order.
pub fn solve_simulated_annealing(
    p: &QuboProblem,
    seed: u64,
    cfg: &AnnealingConfig,
) -> Result<SolveReport> {
    if !(cfg.beta_min > 0.0 && cfg.beta_min <= cfg.beta_max && cfg.beta_max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta_min <= beta_max, got {} and {}",
            cfg.beta_min, cfg.beta_max
        )));
    }
    let n = p.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = FlipState::new(p, random_mask(n, &mut rng));
    let mut best = (state.bits.clone(), state.energy);
    let mut order: Vec<usize> = (0..n).collect();
    let ratio = cfg.beta_max / cfg.beta_min;
    for sweep in 0..cfg.sweeps {
        let frac = if cfg.sweeps > 1 {
            sweep as f64 / (cfg.sweeps - 1) as f64
        } else {
            1.0
        };
        let beta = cfg.beta_min * ratio.powf(frac);
        order.shuffle(&mut rng);
        for &i in &order {
            let d = state.delta(i);
            let u: f64 = rng.gen();
            if d <= 0.0 || u < (-beta * d).exp() {
                state.flip(i);
                if state.energy < best.1 {
                    best = (state.bits.clone(), state.energy);
                }
            }
        }
    }
    Ok(SolveReport::new(p, best.0, cfg.sweeps * n as u64, "sa", seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TabuConfig {
    /// Defaults to `50 * n`.
    pub iterations: Option<u64>,
    /// Defaults to `min(20, n / 4 + 1)`; always capped at `n - 1`.
    pub tenure: Option<usize>,
}

impl TabuConfig {
    pub fn resolve(&self, n: usize) -> (u64, usize) {
        let iterations = self.iterations.unwrap_or(50 * n as u64);
        let tenure = self.tenure.unwrap_or((n / 4 + 1).min(20));
        (iterations, tenure)
    }
}

/// Single-flip tabu search with aspiration.
pub fn solve_tabu_search(p: &QuboProblem, seed: u64, cfg: &TabuConfig) -> Result<SolveReport> {
    let n = p.n();
    let (iterations, tenure) = cfg.resolve(n);
    if tenure < 1 {
        return Err(Error::InvalidArgument("tabu tenure must be >= 1".into()));
    }
    let tenure = tenure.min(n.saturating_sub(1)) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = FlipState::new(p, random_mask(n, &mut rng));
    let mut best = (state.bits.clone(), state.energy);
    let mut tabu_until = vec![0u64; n];
    for iter in 1..=iterations {
        let energy = state.energy;
        let best_energy = best.1;
        let choice = state.best_flip(|i, d| {
            tabu_until[i] < iter || energy + d < best_energy - 1e-12
        });
        let Some((i, _)) = choice else { break };
        state.flip(i);
        tabu_until[i] = iter + tenure;
        if state.energy < best.1 {
            best = (state.bits.clone(), state.energy);
        }
    }
    Ok(SolveReport::new(p, best.0, iterations * n as u64, "tabu", seed))
}
