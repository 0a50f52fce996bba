//! Derivative-free minimizers for the (noisy) variational objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMethod {
    /// Linear-model trust region over a simplex of d + 1 points.
    CobylaLike,
    NelderMead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub method: OptimizerMethod,
    pub max_evals: usize,
    pub initial_step: f64,
    pub tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: OptimizerMethod::CobylaLike,
            max_evals: 500,
            initial_step: 0.3,
            tolerance: 1e-3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_evals < 1 || !(self.initial_step > 0.0) || !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "optimizer needs max_evals >= 1, initial_step > 0, tolerance > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub x: Vec<f64>,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    pub evals: usize,
    /// Every evaluated point in order.
    pub trace: Vec<Evaluation>,
}

/// Budget-limited objective wrapper that keeps the log and the best point.
struct Evaluator<F> {
    objective: F,
    budget: usize,
    trace: Vec<Evaluation>,
    best: usize,
}

impl<F: FnMut(&[f64]) -> f64> Evaluator<F> {
    fn eval(&mut self, x: &[f64]) -> Option<f64> {
        if self.trace.len() >= self.budget {
            return None;
        }
        let f = (self.objective)(x);
        self.trace.push(Evaluation { x: x.to_vec(), f });
        // NaN never becomes the best point
        if self.trace.len() == 1 || f < self.trace[self.best].f || self.trace[self.best].f.is_nan() {
            self.best = self.trace.len() - 1;
        }
        Some(f)
    }

    fn finish(self) -> OptimizeResult {
        let best = &self.trace[self.best];
        OptimizeResult {
            x_best: best.x.clone(),
            f_best: best.f,
            evals: self.trace.len(),
            trace: self.trace,
        }
    }
}

/// Minimize `objective` from `x0`. Returns the best point ever evaluated.
pub fn minimize<F>(objective: F, x0: &[f64], cfg: &OptimizerConfig) -> Result<OptimizeResult>
where
    F: FnMut(&[f64]) -> f64,
{
    cfg.validate()?;
    if x0.is_empty() {
        return Err(Error::Empty("starting point"));
    }
    let mut ev = Evaluator {
        objective,
        budget: cfg.max_evals,
        trace: Vec::new(),
        best: 0,
    };
    let f0 = ev.eval(x0).expect("budget is at least one");
    match cfg.method {
        OptimizerMethod::CobylaLike => cobyla_like(&mut ev, x0, f0, cfg),
        OptimizerMethod::NelderMead => nelder_mead(&mut ev, x0, f0, cfg),
    }
    Ok(ev.finish())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

fn argmax(values: &[f64]) -> usize {
    let mut worst = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[worst] {
            worst = i;
        }
    }
    worst
}

/// Solve the square system `a x = b` by Gaussian elimination with partial
/// pivoting; `None` when a pivot falls below `min_pivot`.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>, min_pivot: f64) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[pivot][col].abs() < min_pivot {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Points `center + rho * e_i`, evaluated; `None` once the budget runs out.
fn coordinate_simplex<F: FnMut(&[f64]) -> f64>(
    ev: &mut Evaluator<F>,
    center: &[f64],
    f_center: f64,
    rho: f64,
) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut points = vec![center.to_vec()];
    let mut values = vec![f_center];
    for i in 0..center.len() {
        let mut x = center.to_vec();
        x[i] += rho;
        values.push(ev.eval(&x)?);
        points.push(x);
    }
    Some((points, values))
}

/// Component of `v` orthogonal to the span of `basis` (modified Gram-Schmidt).
fn orthogonal_part(v: &[f64], basis: &[&Vec<f64>]) -> Vec<f64> {
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for b in basis {
        let mut w = b.to_vec();
        for o in &ortho {
            let dot: f64 = w.iter().zip(o).map(|(x, y)| x * y).sum();
            w.iter_mut().zip(o).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-14 {
            ortho.push(w.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut out = v.to_vec();
    for o in &ortho {
        let dot: f64 = out.iter().zip(o).map(|(x, y)| x * y).sum();
        out.iter_mut().zip(o).for_each(|(x, y)| *x -= dot * y);
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Trust-region iteration on linear interpolation models. The gradient of the
/// linear model through the d + 1 simplex points gives a step of length `rho`
/// from the best vertex. A step achieving a tenth of the predicted decrease
/// replaces the worst vertex (and doubles `rho`, up to the initial step, when
/// it achieves 70%); a failed step still replaces the worst vertex if it beats
/// it. Otherwise the simplex is repaired one vertex at a time: a vertex too
/// far from the best one, or nearly in the affine hull of the others, moves to
/// distance `rho` along its orthogonal direction. Only a failure on an
/// acceptable simplex halves `rho`; the run ends when `rho < tolerance`.
fn cobyla_like<F: FnMut(&[f64]) -> f64>(
    ev: &mut Evaluator<F>,
    x0: &[f64],
    f0: f64,
    cfg: &OptimizerConfig,
) {
    let d = x0.len();
    let mut rho = cfg.initial_step;
    let Some((mut points, mut values)) = coordinate_simplex(ev, x0, f0, rho) else {
        return;
    };
    loop {
        let b = argmin(&values);
        let base = points[b].clone();
        let others: Vec<usize> = (0..=d).filter(|&i| i != b).collect();
        let edges: Vec<Vec<f64>> = others
            .iter()
            .map(|&i| points[i].iter().zip(&base).map(|(p, q)| p - q).collect())
            .collect();
        let rhs: Vec<f64> = others.iter().map(|&i| values[i] - values[b]).collect();
        let grad = solve_linear(edges.clone(), rhs, 1e-10 * rho);
        let gnorm = grad.as_ref().map_or(0.0, |g| norm(g));

        if let Some(grad) = grad.filter(|_| gnorm > 0.0 && gnorm.is_finite()) {
            let trial: Vec<f64> = base
                .iter()
                .zip(&grad)
                .map(|(x, g)| x - rho * g / gnorm)
                .collect();
            let Some(ft) = ev.eval(&trial) else { return };
            let predicted = rho * gnorm;
            let actual = values[b] - ft;
            if actual > 0.1 * predicted {
                let worst = argmax(&values);
                points[worst] = trial;
                values[worst] = ft;
                if actual > 0.7 * predicted {
                    rho = (2.0 * rho).min(cfg.initial_step);
                }
                continue;
            }
            let worst = argmax(&values);
            if ft < values[worst] {
                points[worst] = trial;
                values[worst] = ft;
                continue;
            }
        }

        // Simplex acceptability: every vertex within 2 rho of the best and
        // at least rho / 4 away from the hull of the remaining ones.
        let far = (0..d).max_by(|&i, &j| norm(&edges[i]).total_cmp(&norm(&edges[j])));
        let far = far.filter(|&i| norm(&edges[i]) > 2.0 * rho);
        let flat = || {
            (0..d)
                .map(|i| {
                    let rest: Vec<&Vec<f64>> = (0..d).filter(|&k| k != i).map(|k| &edges[k]).collect();
                    (i, orthogonal_part(&edges[i], &rest))
                })
                .min_by(|a, b| norm(&a.1).total_cmp(&norm(&b.1)))
                .filter(|(_, o)| norm(o) < 0.25 * rho)
                .map(|(i, _)| i)
        };
        let Some(fix) = far.or_else(flat) else {
            rho *= 0.5;
            if rho < cfg.tolerance {
                return;
            }
            continue;
        };

        let rest: Vec<&Vec<f64>> = (0..d).filter(|&k| k != fix).map(|k| &edges[k]).collect();
        let mut dir = orthogonal_part(&edges[fix], &rest);
        if norm(&dir) < 1e-12 * rho.max(1e-300) {
            dir = (0..d)
                .map(|c| {
                    let mut e = vec![0.0; d];
                    e[c] = 1.0;
                    orthogonal_part(&e, &rest)
                })
                .max_by(|a, b| norm(a).total_cmp(&norm(b)))
                .expect("d >= 1");
        }
        let len = norm(&dir);
        let replacement: Vec<f64> = base.iter().zip(&dir).map(|(x, u)| x + rho * u / len).collect();
        let Some(fr) = ev.eval(&replacement) else { return };
        let slot = others[fix];
        points[slot] = replacement;
        values[slot] = fr;
    }
}

/// Standard Nelder-Mead (reflection 1, expansion 2, contraction 1/2,
/// shrink 1/2). Stops when every vertex is within `tolerance` of the best.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    ev: &mut Evaluator<F>,
    x0: &[f64],
    f0: f64,
    cfg: &OptimizerConfig,
) {
    let d = x0.len();
    let Some((mut points, mut values)) = coordinate_simplex(ev, x0, f0, cfg.initial_step) else {
        return;
    };
    let blend = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
    };
    loop {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
        points = order.iter().map(|&i| points[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let size = points.iter().map(|p| dist(p, &points[0])).fold(0.0, f64::max);
        if size < cfg.tolerance {
            return;
        }

        let mut centroid = vec![0.0; d];
        for p in &points[..d] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / d as f64;
            }
        }
        let worst = points[d].clone();
        // x_r = c + (c - x_worst)
        let reflected = blend(&centroid, &worst, -1.0);
        let Some(fr) = ev.eval(&reflected) else { return };
        if fr < values[0] {
            let expanded = blend(&centroid, &worst, -2.0);
            let Some(fe) = ev.eval(&expanded) else { return };
            if fe < fr {
                (points[d], values[d]) = (expanded, fe);
            } else {
                (points[d], values[d]) = (reflected, fr);
            }
            continue;
        }
        if fr < values[d - 1] {
            (points[d], values[d]) = (reflected, fr);
            continue;
        }
        let (contracted, reference) = if fr < values[d] {
            (blend(&centroid, &reflected, 0.5), fr)
        } else {
            (blend(&centroid, &worst, 0.5), values[d])
        };
        let Some(fc) = ev.eval(&contracted) else { return };
        if fc < reference {
            (points[d], values[d]) = (contracted, fc);
            continue;
        }
        for i in 1..=d {
            points[i] = blend(&points[0], &points[i], 0.5);
            let Some(f) = ev.eval(&points[i]) else { return };
            values[i] = f;
        }
    }
}
