//! Statevector simulation of p-layer QAOA on a diagonal cost Hamiltonian,
//! with shot sampling and the variational loop.
//!
//! Basis index convention: bit i of the index holds x_i.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{minimize, Evaluation, OptimizerConfig};
use crate::qubo::{QuboProblem, SelectionMask};
use crate::solvers::SolveReport;

/// Largest register the simulator accepts (2^24 amplitudes).
pub const MAX_QUBITS: usize = 24;

/// Below this many amplitudes the gate loops stay on one thread.
const PAR_THRESHOLD: usize = 1 << 14;

/// Cost of every basis state.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalCost {
    n: usize,
    energies: Vec<f64>,
}

impl DiagonalCost {
    pub fn from_energies(energies: Vec<f64>) -> Result<Self> {
        let len = energies.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("spectrum length {len} is not 2^n with n >= 1")));
        }
        Ok(Self {
            n: len.trailing_zeros() as usize,
            energies,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn min(&self) -> f64 {
        self.energies.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.energies.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.energies.iter().sum::<f64>() / self.energies.len() as f64
    }
}

/// Tabulate the QUBO energy of every mask. Each entry extends the entry with
/// its lowest set bit cleared, O(n) work per state.
pub fn build_diagonal_cost(p: &QuboProblem) -> Result<DiagonalCost> {
    let n = p.n();
    if n > MAX_QUBITS {
        return Err(Error::TooLarge {
            n,
            limit: MAX_QUBITS,
        });
    }
    let q = p.q();
    let pair: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..n).map(|b| q[[a, b]] + q[[b, a]]).collect())
        .collect();
    let mut energies = vec![0.0; 1 << n];
    energies[0] = p.offset();
    for idx in 1..energies.len() {
        let low = idx.trailing_zeros() as usize;
        let mut rest = idx & (idx - 1);
        let mut e = energies[rest] + q[[low, low]];
        while rest != 0 {
            let j = rest.trailing_zeros() as usize;
            e += pair[low][j];
            rest &= rest - 1;
        }
        energies[idx] = e;
    }
    Ok(DiagonalCost { n, energies })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaoaParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl QaoaParams {
    pub fn new(gamma: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if gamma.is_empty() || gamma.len() != beta.len() {
            return Err(Error::InvalidArgument(format!(
                "gamma and beta must have equal length >= 1, got {} and {}",
                gamma.len(),
                beta.len()
            )));
        }
        Ok(Self { gamma, beta })
    }

    pub fn zeros(depth: usize) -> Self {
        Self {
            gamma: vec![0.0; depth],
            beta: vec![0.0; depth],
        }
    }

    /// Angles drawn uniformly from (0, pi/2).
    pub fn random(depth: usize, rng: &mut impl Rng) -> Self {
        let mut draw = || rng.gen_range(f64::EPSILON..FRAC_PI_2);
        let gamma = (0..depth).map(|_| draw()).collect();
        let beta = (0..depth).map(|_| draw()).collect();
        Self { gamma, beta }
    }

    pub fn depth(&self) -> usize {
        self.gamma.len()
    }

    /// `[gamma_1..gamma_p, beta_1..beta_p]`
    pub fn to_vec(&self) -> Vec<f64> {
        self.gamma.iter().chain(&self.beta).copied().collect()
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() % 2 != 0 {
            return Err(Error::InvalidArgument("parameter vector has odd length".into()));
        }
        let (g, b) = x.split_at(x.len() / 2);
        Self::new(g.to_vec(), b.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotConfig {
    pub shots: usize,
    pub seed: u64,
}

impl Default for ShotConfig {
    fn default() -> Self {
        Self { shots: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn uniform(n: usize) -> Self {
        let a = Complex64::new((1u64 << n) as f64, 0.0).sqrt().inv();
        Self {
            amplitudes: vec![a; 1 << n],
        }
    }

    pub fn basis(n: usize, index: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Self { amplitudes }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    fn apply_phase(&mut self, cost: &DiagonalCost, gamma: f64) {
        let kernel = |(a, &e): (&mut Complex64, &f64)| *a *= Complex64::from_polar(1.0, -gamma * e);
        if self.amplitudes.len() >= PAR_THRESHOLD {
            self.amplitudes.par_iter_mut().zip(cost.energies.par_iter()).for_each(kernel);
        } else {
            self.amplitudes.iter_mut().zip(cost.energies.iter()).for_each(kernel);
        }
    }

    /// `exp(-i beta X)` on qubit `q`.
    fn apply_mixer(&mut self, q: usize, beta: f64) {
        let (c, s) = (beta.cos(), beta.sin());
        let off = Complex64::new(0.0, -s);
        let stride = 1 << q;
        let kernel = |block: &mut [Complex64]| {
            let (lo, hi) = block.split_at_mut(stride);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x0, x1) = (*a0, *a1);
                *a0 = x0 * c + x1 * off;
                *a1 = x0 * off + x1 * c;
            }
        };
        if self.amplitudes.len() >= PAR_THRESHOLD {
            self.amplitudes.par_chunks_mut(2 * stride).for_each(kernel);
        } else {
            self.amplitudes.chunks_mut(2 * stride).for_each(kernel);
        }
    }
}

/// Run the circuit: uniform superposition, then per layer the cost phase
/// `exp(-i gamma E)` followed by `exp(-i beta X)` on every qubit.
pub fn evolve(cost: &DiagonalCost, params: &QaoaParams) -> StateVector {
    let mut state = StateVector::uniform(cost.n);
    for (&gamma, &beta) in params.gamma.iter().zip(&params.beta) {
        state.apply_phase(cost, gamma);
        for q in 0..cost.n {
            state.apply_mixer(q, beta);
        }
    }
    state
}

pub fn exact_expectation(state: &StateVector, cost: &DiagonalCost) -> Result<f64> {
    if state.amplitudes.len() != cost.energies.len() {
        return Err(Error::LengthMismatch {
            left: state.amplitudes.len(),
            right: cost.energies.len(),
        });
    }
    Ok(state
        .amplitudes
        .iter()
        .zip(&cost.energies)
        .map(|(a, e)| a.norm_sqr() * e)
        .sum())
}

/// Inverse-CDF sampling of `shots` basis indices from `|amplitude|^2`.
pub fn sample_with_rng(state: &StateVector, shots: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(state.amplitudes.len());
    let mut acc = 0.0;
    for a in &state.amplitudes {
        acc += a.norm_sqr();
        cumulative.push(acc);
    }
    let last = cumulative.len() - 1;
    (0..shots)
        .map(|_| {
            let u = rng.gen::<f64>() * acc;
            cumulative.partition_point(|&c| c <= u).min(last)
        })
        .collect()
}

pub fn sample(state: &StateVector, cfg: &ShotConfig) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sample_with_rng(state, cfg.shots, &mut rng)
}

/// Mean energy over the sampled basis states.
pub fn estimate_cost(samples: &[usize], cost: &DiagonalCost) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    Ok(samples.iter().map(|&s| cost.energies[s]).sum::<f64>() / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// m-shot estimate per evaluation.
    #[default]
    Sampled,
    /// Exact expectation value; for debugging.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaoaConfig {
    pub depth: usize,
    pub shots: ShotConfig,
    pub optimizer: OptimizerConfig,
    pub objective: ObjectiveMode,
    /// Fixed starting angles; otherwise drawn from the run seed.
    pub initial_params: Option<QaoaParams>,
}

impl QaoaConfig {
    pub fn new(depth: usize, shots: ShotConfig) -> Self {
        Self {
            depth,
            shots,
            optimizer: OptimizerConfig::default(),
            objective: ObjectiveMode::Sampled,
            initial_params: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaoaReport {
    pub solve: SolveReport,
    pub depth: usize,
    pub initial_params: QaoaParams,
    pub best_params: QaoaParams,
    /// Best objective value seen by the optimizer.
    pub best_objective: f64,
    pub shots_used: u64,
    pub trace: Vec<Evaluation>,
    pub final_samples: Vec<usize>,
}

/// Variational loop: optimize the angles against the shot-estimated cost,
/// sample the circuit once more at the best angles and return the sampled
/// state with the lowest energy (lowest index on ties).
pub fn run_qaoa(p: &QuboProblem, cfg: &QaoaConfig, seed: u64) -> Result<QaoaReport> {
    let cost = build_diagonal_cost(p)?;
    run_qaoa_on_cost(p, &cost, cfg, seed)
}

pub fn run_qaoa_on_cost(
    p: &QuboProblem,
    cost: &DiagonalCost,
    cfg: &QaoaConfig,
    seed: u64,
) -> Result<QaoaReport> {
    if cfg.depth < 1 {
        return Err(Error::InvalidArgument("QAOA depth must be >= 1".into()));
    }
    if cfg.shots.shots < 1 {
        return Err(Error::InvalidArgument("shots must be >= 1".into()));
    }
    if cost.n != p.n() {
        return Err(Error::Dimension {
            expected: p.n(),
            actual: cost.n,
        });
    }
    let initial = match &cfg.initial_params {
        Some(params) if params.depth() != cfg.depth => {
            return Err(Error::InvalidArgument("initial params do not match depth".into()))
        }
        Some(params) => params.clone(),
        None => QaoaParams::random(cfg.depth, &mut ChaCha8Rng::seed_from_u64(seed)),
    };

    let shots = cfg.shots.shots;
    let mut shot_rng = ChaCha8Rng::seed_from_u64(cfg.shots.seed);
    let objective = |x: &[f64]| {
        let params = QaoaParams::from_slice(x).expect("optimizer keeps the dimension");
        let state = evolve(cost, &params);
        match cfg.objective {
            ObjectiveMode::Sampled => {
                let samples = sample_with_rng(&state, shots, &mut shot_rng);
                estimate_cost(&samples, cost).expect("shots >= 1")
            }
            ObjectiveMode::Exact => exact_expectation(&state, cost).expect("same register"),
        }
    };
    let result = minimize(objective, &initial.to_vec(), &cfg.optimizer)?;

    let best_params = QaoaParams::from_slice(&result.x_best)?;
    let state = evolve(cost, &best_params);
    let final_samples = sample_with_rng(&state, shots, &mut shot_rng);
    let best_index = final_samples
        .iter()
        .copied()
        .min_by(|&a, &b| cost.energies[a].total_cmp(&cost.energies[b]).then(a.cmp(&b)))
        .expect("shots >= 1");

    let mask = SelectionMask::from_index(best_index as u64, p.n());
    let best_energy = p.energy_bits(&mask.bits);
    let shots_used = match cfg.objective {
        ObjectiveMode::Sampled => (result.evals as u64 + 1) * shots as u64,
        ObjectiveMode::Exact => shots as u64,
    };
    Ok(QaoaReport {
        solve: SolveReport {
            best_mask: mask,
            best_energy,
            evaluations: result.evals as u64,
            solver_name: "qaoa".into(),
            seed,
        },
        depth: cfg.depth,
        initial_params: initial,
        best_params,
        best_objective: result.f_best,
        shots_used,
        trace: result.trace,
        final_samples,
    })
}
