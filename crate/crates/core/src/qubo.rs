//! QUBO problems for feature selection, the cardinality penalty and the
//! mapping to an Ising Hamiltonian.
//!
//! Energies use the full double sum `sum_ij q[i][j] x_i x_j + offset` over a
//! symmetric matrix, so an unordered pair {i, j} contributes
//! `q[i][j] + q[j][i]`. Builders store each formula value as-is in both
//! halves, i.e. `x^T Q x` for the matrix exactly as the formulas define it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{discretize_columns, TabularDataset};
use crate::error::{Error, Result};
use crate::stats::{
    conditional_mutual_information, mutual_information, pearson, single_feature_svc_predictions,
};

#[derive(Debug, Clone, PartialEq)]
pub struct QuboProblem {
    q: Array2<f64>,
    offset: f64,
}

impl QuboProblem {
    /// Requires a square, exactly symmetric, finite matrix.
    pub fn new(q: Array2<f64>, offset: f64) -> Result<Self> {
        let (rows, cols) = q.dim();
        if rows != cols || rows == 0 {
            return Err(Error::InvalidArgument(format!("Q must be square and non-empty, got {rows}x{cols}")));
        }
        for i in 0..rows {
            for j in 0..i {
                if q[[i, j]] != q[[j, i]] {
                    return Err(Error::InvalidArgument(format!("Q not symmetric at ({i}, {j})")));
                }
            }
        }
        if q.iter().any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(Error::InvalidArgument("Q has non-finite entries".into()));
        }
        Ok(Self { q, offset })
    }

    /// Symmetrize an arbitrary square matrix as `(Q + Q^T) / 2`, which leaves
    /// `x^T Q x` unchanged for every x.
    pub fn from_asymmetric(raw: Array2<f64>, offset: f64) -> Result<Self> {
        if raw.nrows() != raw.ncols() {
            return Err(Error::InvalidArgument("Q must be square".into()));
        }
        let sym = (&raw + &raw.t()) * 0.5;
        Self::new(sym, offset)
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: Array2::zeros((n, n)),
            offset: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Energy of a bit vector, exact O(n^2) double sum.
    pub fn energy_bits(&self, bits: &[bool]) -> f64 {
        let on: Vec<usize> = (0..bits.len()).filter(|&i| bits[i]).collect();
        let mut e = self.offset;
        for &i in &on {
            for &j in &on {
                e += self.q[[i, j]];
            }
        }
        e
    }

    /// Energy of the mask encoded by `index` (bit i of the index is x_i).
    pub fn energy_index(&self, index: u64) -> f64 {
        let bits: Vec<bool> = (0..self.n()).map(|i| index >> i & 1 == 1).collect();
        self.energy_bits(&bits)
    }

    /// Energy change from flipping bit `i` of `bits`.
    pub fn flip_delta(&self, bits: &[bool], i: usize) -> f64 {
        let coupling: f64 = (0..self.n())
            .filter(|&j| j != i && bits[j])
            .map(|j| self.q[[i, j]] + self.q[[j, i]])
            .sum();
        let gain = self.q[[i, i]] + coupling;
        if bits[i] {
            -gain
        } else {
            gain
        }
    }

    /// Largest possible energy change of a single flip:
    /// `max_i |q_ii| + sum_{j != i} |q_ij + q_ji|`.
    pub fn max_flip_magnitude(&self) -> f64 {
        (0..self.n())
            .map(|i| {
                self.q[[i, i]].abs()
                    + (0..self.n())
                        .filter(|&j| j != i)
                        .map(|j| (self.q[[i, j]] + self.q[[j, i]]).abs())
                        .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Binary feature selection: `bits[i]` is true iff feature i is selected.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionMask {
    pub bits: Vec<bool>,
    pub k_target: Option<usize>,
}

impl SelectionMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self {
            bits,
            k_target: None,
        }
    }

    pub fn with_target(mut self, k: usize) -> Self {
        self.k_target = Some(k);
        self
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![false; n])
    }

    pub fn from_index(index: u64, n: usize) -> Self {
        Self::new((0..n).map(|i| index >> i & 1 == 1).collect())
    }

    pub fn to_index(&self) -> u64 {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .fold(0, |acc, (i, _)| acc | 1 << i)
    }

    /// Parse `"1010"`, where character i is x_i.
    pub fn from_bitstring(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidArgument(format!("bad mask character {other:?}"))),
            })
            .collect::<Result<Vec<bool>>>()
            .map(Self::new)
    }

    pub fn to_bitstring(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn selected(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostingConfig {
    pub lambda: f64,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        Self { lambda: 0.5 }
    }
}

/// `q[i][j] = r(f_i, f_j)` off the diagonal, `q[i][i] = -r(f_i, y)`.
pub fn build_correlation_qubo(d: &TabularDataset) -> Result<QuboProblem> {
    let n = d.n_features();
    let columns: Vec<Vec<f64>> = (0..n).map(|j| d.column(j).to_vec()).collect();
    let y = d.target_as_f64();
    let mut q = Array2::zeros((n, n));
    for i in 0..n {
        q[[i, i]] = -pearson(&columns[i], &y)?;
        for j in 0..i {
            let r = pearson(&columns[i], &columns[j])?;
            q[[i, j]] = r;
            q[[j, i]] = r;
        }
    }
    QuboProblem::new(q, 0.0)
}

/// Raw, asymmetric MI matrix: `-MI(f_i, y | f_j)` off the diagonal and
/// `-MI(f_i, y)` on it, over features discretized into `n_bins` bins.
pub fn mi_matrix_raw(d: &TabularDataset, n_bins: usize) -> Result<Array2<f64>> {
    let codes = discretize_columns(d, n_bins)?;
    let n = d.n_features();
    let columns: Vec<Vec<usize>> = (0..n).map(|j| codes.column(j).to_vec()).collect();
    let y = d.target();
    let mut raw = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            raw[[i, j]] = if i == j {
                -mutual_information(&columns[i], y)?
            } else {
                -conditional_mutual_information(&columns[i], y, &columns[j])?
            };
        }
    }
    Ok(raw)
}

pub fn build_mi_qubo(d: &TabularDataset, n_bins: usize) -> Result<QuboProblem> {
    QuboProblem::from_asymmetric(mi_matrix_raw(d, n_bins)?, 0.0)
}

/// `q[i][j] = r(h_i, h_j)` off the diagonal and
/// `q[i][i] = S / n^2 + lambda - 2 r(h_i, y)`, with `h_i` the predictions of a
/// linear SVC trained on feature i alone. Correlations use the class codes.
pub fn build_boosting_qubo(d: &TabularDataset, cfg: &BoostingConfig) -> Result<QuboProblem> {
    if !(cfg.lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    let n = d.n_features();
    let predictions: Vec<Vec<f64>> = (0..n)
        .map(|i| single_feature_svc_predictions(d, i).map(|h| h.as_f64()))
        .collect::<Result<_>>()?;
    let y = d.target_as_f64();
    let base = d.n_samples() as f64 / (n * n) as f64 + cfg.lambda;
    let mut q = Array2::zeros((n, n));
    for i in 0..n {
        q[[i, i]] = base - 2.0 * pearson(&predictions[i], &y)?;
        for j in 0..i {
            let r = pearson(&predictions[i], &predictions[j])?;
            q[[i, j]] = r;
            q[[j, i]] = r;
        }
    }
    QuboProblem::new(q, 0.0)
}

/// Add `alpha * (sum_i x_i - k)^2`. With `x_i^2 = x_i` this is
/// `alpha * (1 - 2k)` on each diagonal entry, `alpha` on each off-diagonal
/// entry (so `2 alpha` per unordered pair) and `alpha * k^2` on the offset.
pub fn apply_cardinality_penalty(p: &QuboProblem, k: usize, alpha: f64) -> Result<QuboProblem> {
    let n = p.n();
    if k < 1 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={n}")));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let mut q = p.q.clone();
    let kf = k as f64;
    for i in 0..n {
        for j in 0..n {
            q[[i, j]] += if i == j { alpha * (1.0 - 2.0 * kf) } else { alpha };
        }
    }
    QuboProblem::new(q, p.offset + alpha * kf * kf)
}

pub fn qubo_energy(p: &QuboProblem, x: &SelectionMask) -> Result<f64> {
    if x.len() != p.n() {
        return Err(Error::Dimension {
            expected: p.n(),
            actual: x.len(),
        });
    }
    Ok(p.energy_bits(&x.bits))
}

/// `sum_i h_i z_i + sum_{i<j} J_ij z_i z_j + constant` over spins in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    pub h: Vec<f64>,
    /// Strictly upper triangular; `j[[a, b]]` is used only for `a < b`.
    pub j: Array2<f64>,
    pub constant: f64,
}

impl IsingModel {
    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn energy(&self, spins: &[i8]) -> Result<f64> {
        if spins.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                actual: spins.len(),
            });
        }
        let mut e = self.constant;
        for a in 0..self.n() {
            let za = spins[a] as f64;
            e += self.h[a] * za;
            for b in a + 1..self.n() {
                e += self.j[[a, b]] * za * spins[b] as f64;
            }
        }
        Ok(e)
    }
}

/// Spin image of a mask: `z = +1` for an unselected bit, `-1` for a selected one.
pub fn mask_to_spins(x: &SelectionMask) -> Vec<i8> {
    x.bits.iter().map(|&b| if b { -1 } else { 1 }).collect()
}

/// Substitute `x_i = (1 - z_i) / 2`.
pub fn qubo_to_ising(p: &QuboProblem) -> IsingModel {
    let n = p.n();
    let q = &p.q;
    let mut h = vec![0.0; n];
    let mut j = Array2::zeros((n, n));
    let mut constant = p.offset;
    for a in 0..n {
        constant += q[[a, a]] / 2.0;
        h[a] -= q[[a, a]] / 2.0;
        for b in a + 1..n {
            let pair = q[[a, b]] + q[[b, a]];
            constant += pair / 4.0;
            h[a] -= pair / 4.0;
            h[b] -= pair / 4.0;
            j[[a, b]] = pair / 4.0;
        }
    }
    IsingModel { h, j, constant }
}

/// Plain-text form: `n`, then `offset`, then n rows of whitespace-separated
/// values. Values use the shortest representation that round-trips.
pub fn qubo_to_text(p: &QuboProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", p.n());
    let _ = writeln!(out, "{:?}", p.offset);
    for row in p.q.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn qubo_from_text(text: &str) -> Result<QuboProblem> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let bad = |m: &str| Error::QuboFormat(m.to_owned());
    let n: usize = lines
        .next()
        .ok_or_else(|| bad("missing dimension line"))?
        .parse()
        .map_err(|_| bad("dimension is not an integer"))?;
    let offset: f64 = lines
        .next()
        .ok_or_else(|| bad("missing offset line"))?
        .parse()
        .map_err(|_| bad("offset is not a number"))?;
    let mut values = Vec::with_capacity(n * n);
    for r in 0..n {
        let line = lines.next().ok_or_else(|| bad(&format!("missing row {r}")))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(&format!("row {r} has a non-numeric entry")))?;
        if row.len() != n {
            return Err(bad(&format!("row {r} has {} entries, expected {n}", row.len())));
        }
        values.extend(row);
    }
    if lines.next().is_some() {
        return Err(bad("trailing data after matrix"));
    }
    let q = Array2::from_shape_vec((n, n), values).map_err(|e| bad(&e.to_string()))?;
    QuboProblem::new(q, offset)
}

pub fn write_qubo(p: &QuboProblem, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, qubo_to_text(p))?;
    Ok(())
}

pub fn read_qubo(path: impl AsRef<Path>) -> Result<QuboProblem> {
    qubo_from_text(&fs::read_to_string(path)?)
}
