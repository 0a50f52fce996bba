//! Statistics that feed the QUBO builders: Pearson correlation, plug-in
//! (conditional) mutual information and single-feature SVC predictions.

use ndarray::ArrayView1;

use crate::dataset::TabularDataset;
use crate::error::{Error, Result};

/// Predicted class codes of one single-feature classifier over S rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionVector {
    pub labels: Vec<usize>,
}

impl PredictionVector {
    pub fn as_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| l as f64).collect()
    }

    pub fn accuracy(&self, target: &[usize]) -> f64 {
        let hits = self.labels.iter().zip(target).filter(|(a, b)| a == b).count();
        hits as f64 / target.len().max(1) as f64
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// Sample Pearson correlation. A constant input yields 0.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least 2 samples".into()));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson_view(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    pearson(&a.to_vec(), &b.to_vec())
}

/// Joint counts of two code vectors as a dense table.
fn contingency(x: &[usize], y: &[usize]) -> (Vec<f64>, usize, usize) {
    let nx = x.iter().max().map_or(0, |m| m + 1);
    let ny = y.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0.0; nx * ny];
    for (&a, &b) in x.iter().zip(y) {
        table[a * ny + b] += 1.0;
    }
    (table, nx, ny)
}

/// Plug-in MI in nats from a joint count table with `total` observations.
fn mi_from_counts(table: &[f64], nx: usize, ny: usize, total: f64) -> f64 {
    let mut px = vec![0.0; nx];
    let mut py = vec![0.0; ny];
    for i in 0..nx {
        for j in 0..ny {
            px[i] += table[i * ny + j];
            py[j] += table[i * ny + j];
        }
    }
    let mut mi = 0.0;
    for i in 0..nx {
        for j in 0..ny {
            let c = table[i * ny + j];
            if c > 0.0 {
                mi += c / total * (c * total / (px[i] * py[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Plug-in mutual information in nats, clamped at 0.
pub fn mutual_information(x: &[usize], y: &[usize]) -> Result<f64> {
    check_len(x.len(), y.len())?;
    if x.is_empty() {
        return Ok(0.0);
    }
    let (table, nx, ny) = contingency(x, y);
    Ok(mi_from_counts(&table, nx, ny, x.len() as f64))
}

/// Plug-in conditional mutual information `I(x; y | z)` in nats, computed as
/// the `p(z)`-weighted sum of the MI within each stratum of `z`.
pub fn conditional_mutual_information(x: &[usize], y: &[usize], z: &[usize]) -> Result<f64> {
    check_len(x.len(), y.len())?;
    check_len(x.len(), z.len())?;
    if x.is_empty() {
        return Ok(0.0);
    }
    let nx = x.iter().max().map_or(0, |m| m + 1);
    let ny = y.iter().max().map_or(0, |m| m + 1);
    let nz = z.iter().max().map_or(0, |m| m + 1);
    let mut tables = vec![0.0; nz * nx * ny];
    let mut z_counts = vec![0.0; nz];
    for ((&a, &b), &c) in x.iter().zip(y).zip(z) {
        tables[c * nx * ny + a * ny + b] += 1.0;
        z_counts[c] += 1.0;
    }
    let total = x.len() as f64;
    let cmi = (0..nz)
        .filter(|&c| z_counts[c] > 0.0)
        .map(|c| {
            let table = &tables[c * nx * ny..(c + 1) * nx * ny];
            z_counts[c] / total * mi_from_counts(table, nx, ny, z_counts[c])
        })
        .sum::<f64>();
    Ok(cmi.max(0.0))
}

/// Regularization constant of the single-feature SVC.
pub const SVC_C: f64 = 1.0;
const SVC_MAX_ITERS: usize = 200;

/// Fit `w * z + b` for labels `signs` in {-1, +1} by minimizing the L2-loss
/// primal `0.5 w^2 + C * sum(max(0, 1 - y (w z + b))^2)` with damped Newton.
fn fit_l2_svm(z: &[f64], signs: &[f64], c: f64) -> (f64, f64) {
    let objective = |w: f64, b: f64| {
        0.5 * w * w
            + c * z
                .iter()
                .zip(signs)
                .map(|(zi, yi)| (1.0 - yi * (w * zi + b)).max(0.0).powi(2))
                .sum::<f64>()
    };
    let (mut w, mut b) = (0.0, 0.0);
    for _ in 0..SVC_MAX_ITERS {
        let (mut gw, mut gb) = (w, 0.0);
        let (mut hzz, mut hz, mut h1) = (1.0, 0.0, 1e-12);
        for (&zi, &yi) in z.iter().zip(signs) {
            let slack = 1.0 - yi * (w * zi + b);
            if slack > 0.0 {
                gw -= 2.0 * c * yi * zi * slack;
                gb -= 2.0 * c * yi * slack;
                hzz += 2.0 * c * zi * zi;
                hz += 2.0 * c * zi;
                h1 += 2.0 * c;
            }
        }
        if gw.abs() + gb.abs() < 1e-10 {
            break;
        }
        let det = hzz * h1 - hz * hz;
        let (dw, db) = ((h1 * gw - hz * gb) / det, (hzz * gb - hz * gw) / det);
        let start = objective(w, b);
        let slope = gw * dw + gb * db;
        let mut step = 1.0;
        while objective(w - step * dw, b - step * db) > start - 1e-4 * step * slope && step > 1e-12
        {
            step *= 0.5;
        }
        w -= step * dw;
        b -= step * db;
    }
    (w, b)
}

/// Train a one-vs-rest linear SVC on column `i` alone and predict the same rows.
pub fn single_feature_svc_predictions(d: &TabularDataset, i: usize) -> Result<PredictionVector> {
    if i >= d.n_features() {
        return Err(Error::InvalidArgument(format!(
            "feature index {i} out of range for {} features",
            d.n_features()
        )));
    }
    let column = d.column(i);
    let s = column.len() as f64;
    let mean = column.sum() / s;
    let sd = (column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s).sqrt();
    let counts = d.class_counts();

    if sd == 0.0 {
        let majority = argmax(counts.iter().map(|&c| c as f64));
        return Ok(PredictionVector {
            labels: vec![majority; d.n_samples()],
        });
    }

    let z: Vec<f64> = column.iter().map(|v| (v - mean) / sd).collect();
    let models: Vec<(f64, f64)> = (0..d.n_classes())
        .map(|class| {
            let signs: Vec<f64> = d
                .target()
                .iter()
                .map(|&t| if t == class { 1.0 } else { -1.0 })
                .collect();
            fit_l2_svm(&z, &signs, SVC_C)
        })
        .collect();
    let labels = z
        .iter()
        .map(|&zi| argmax(models.iter().map(|(w, b)| w * zi + b)))
        .collect();
    Ok(PredictionVector { labels })
}

/// Index of the maximum, first one on ties.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
