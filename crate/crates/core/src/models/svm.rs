use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Curvature floor for non-positive-definite pair directions.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    /// `(gamma * x.y + coef0)^degree`
    Poly { gamma: f64, degree: u32, coef0: f64 },
    /// `exp(-gamma * |x - y|^2)`
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::Poly { gamma, degree, coef0 } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                (gamma * dot + coef0).powi(degree as i32)
            }
            Kernel::Rbf { gamma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    /// Row-major Gram matrix of `xs`.
    pub fn gram(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        let n = xs.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval(&xs[i], &xs[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    }

    /// Default `gamma = 1 / (dim * var)` over all feature values.
    pub fn scale_gamma(xs: &[Vec<f64>]) -> f64 {
        let dim = xs.first().map_or(1, Vec::len).max(1);
        let count = (xs.len() * dim) as f64;
        let mean = xs.iter().flatten().sum::<f64>() / count;
        let var = xs.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        if var > 0.0 {
            1.0 / (dim as f64 * var)
        } else {
            1.0
        }
    }
}

/// Dual solution of one binary problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub b: f64,
    /// Dual objective `sum(alpha) - alpha^T Q alpha / 2`, tracked incrementally.
    pub dual_objective: f64,
    /// Dual objective after each accepted pair update, starting from 0.
    pub dual_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SmoSolution {
    /// Dual objective recomputed from the multipliers.
    pub fn dual_from_scratch(&self, gram: &[f64], y: &[f64]) -> f64 {
        let n = y.len();
        let mut quad = 0.0;
        for i in 0..n {
            if self.alpha[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                quad += self.alpha[i] * self.alpha[j] * y[i] * y[j] * gram[i * n + j];
            }
        }
        self.alpha.iter().sum::<f64>() - 0.5 * quad
    }

    /// Largest violation of the KKT conditions on the training set,
    /// measured on the functional margin `y_i f(x_i)`.
    pub fn kkt_violation(&self, gram: &[f64], y: &[f64], c: f64) -> f64 {
        let n = y.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            let f: f64 = (0..n).map(|j| self.alpha[j] * y[j] * gram[j * n + i]).sum::<f64>() + self.b;
            let m = y[i] * f;
            if self.alpha[i] < c {
                worst = worst.max(1.0 - m);
            }
            if self.alpha[i] > 0.0 {
                worst = worst.max(m - 1.0);
            }
        }
        worst
    }
}

/// SMO on a precomputed Gram matrix with second-order working-set selection.
///
/// Labels must be `+1` or `-1`. Stops when the maximal KKT gap drops below
/// `tol` or after `max_iter` pair updates.
pub fn smo_solve(gram: &[f64], y: &[f64], c: f64, tol: f64, max_iter: usize) -> Result<SmoSolution> {
    let n = y.len();
    if n < 2 {
        return Err(Error::DegenerateData(format!("SMO needs at least 2 samples, got {n}")));
    }
    if gram.len() != n * n {
        return Err(Error::shape("smo gram", &[n, n], &[gram.len()]));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument("SMO labels must be +1 or -1".into()));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::DegenerateData("SMO needs both labels present".into()));
    }
    if !(c > 0.0 && tol > 0.0) {
        return Err(Error::InvalidArgument("C and tol must be positive".into()));
    }
    let k = |i: usize, j: usize| gram[i * n + j];
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut objective = 0.0;
    let mut history = vec![0.0];
    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    let (mut gmax, mut gmin);
    loop {
        gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i == usize::MAX {
                continue;
            }
            let diff = gmax - v;
            if diff > 0.0 {
                let a = k(i, i) + k(t, t) - 2.0 * k(i, t);
                let obj = -diff * diff / if a > 0.0 { a } else { TAU };
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        if gmax - gmin < tol || j == usize::MAX {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        let quad = k(i, i) + k(j, j) - 2.0 * k(i, j);
        let quad = if quad > 0.0 { quad } else { TAU };
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        let (di, dj) = (ai - old_i, aj - old_j);
        objective += di * grad[i] + dj * grad[j] + 0.5 * (di * di * q(i, i) + dj * dj * q(j, j)) + di * dj * q(i, j);
        alpha[i] = ai;
        alpha[j] = aj;
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
        history.push(-objective);
    }

    let free: Vec<f64> = (0..n).filter(|&t| alpha[t] > 0.0 && alpha[t] < c).map(|t| -y[t] * grad[t]).collect();
    let b = if free.is_empty() { (gmax + gmin) / 2.0 } else { free.iter().sum::<f64>() / free.len() as f64 };
    let b = if b.is_finite() { b } else { 0.0 };
    Ok(SmoSolution { alpha, b, dual_objective: -objective, dual_history: history, iterations, converged })
}

/// Iteration budget used when none is given.
pub fn default_max_iter(n: usize) -> usize {
    10_000_000.max(100 * n)
}

/// Two-class SVM holding only its support vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    pub kernel: Kernel,
    pub support: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub b: f64,
}

impl BinarySvm {
    /// Trains on labels `+1` / `-1`; also returns the full dual solution.
    pub fn train(
        features: &[Vec<f64>],
        labels: &[f64],
        kernel: Kernel,
        c: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<(Self, SmoSolution)> {
        if features.len() != labels.len() {
            return Err(Error::Dimension { expected: features.len(), got: labels.len() });
        }
        check_rows(features)?;
        let gram = kernel.gram(features);
        let sol = smo_solve(&gram, labels, c, tol, max_iter)?;
        let mut support = Vec::new();
        let mut coef = Vec::new();
        for (i, &a) in sol.alpha.iter().enumerate() {
            if a > 0.0 {
                support.push(features[i].clone());
                coef.push(a * labels[i]);
            }
        }
        Ok((BinarySvm { kernel, support, coef, b: sol.b }, sol))
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if let Some(sv) = self.support.first() {
            if sv.len() != x.len() {
                return Err(Error::Dimension { expected: sv.len(), got: x.len() });
            }
        }
        Ok(self.support.iter().zip(&self.coef).map(|(sv, a)| a * self.kernel.eval(sv, x)).sum::<f64>() + self.b)
    }

    /// `+1` when the decision value is positive, else `-1`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(if self.decision(x)? > 0.0 { 1.0 } else { -1.0 })
    }
}

fn check_rows(features: &[Vec<f64>]) -> Result<usize> {
    let dim = features.first().map_or(0, Vec::len);
    for row in features {
        if row.len() != dim {
            return Err(Error::Dimension { expected: dim, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("features must be finite".into()));
        }
    }
    Ok(dim)
}

/// Binary machine for classes `pos` (label +1) against `neg` (label -1),
/// referencing rows of the shared support pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    pub pos: usize,
    pub neg: usize,
    pub support: Vec<usize>,
    pub coef: Vec<f64>,
    pub b: f64,
}

/// One-vs-one multiclass SVM.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub num_classes: usize,
    pub dim: usize,
    pub support: Vec<Vec<f64>>,
    pub pairs: Vec<PairModel>,
}

/// Training diagnostics of a multiclass fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmFitReport {
    /// Largest KKT violation over all pair problems.
    pub max_kkt_violation: f64,
    /// False if any pair's dual objective ever decreased by more than rounding.
    pub dual_monotone: bool,
    pub all_converged: bool,
}

impl SvmModel {
    pub fn train(
        features: &[Vec<f64>],
        labels: &[usize],
        kernel: Kernel,
        c: f64,
        tol: f64,
    ) -> Result<(Self, SvmFitReport)> {
        if features.len() != labels.len() {
            return Err(Error::Dimension { expected: features.len(), got: labels.len() });
        }
        let dim = check_rows(features)?;
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        let present: Vec<usize> = (0..num_classes).filter(|c| labels.contains(c)).collect();
        if present.len() < 2 {
            return Err(Error::DegenerateData("SVM needs at least two classes".into()));
        }
        let gram = kernel.gram(features);
        let n = features.len();
        let mut pool_index = vec![usize::MAX; n];
        let mut support = Vec::new();
        let mut pairs = Vec::new();
        let mut report = SvmFitReport { max_kkt_violation: 0.0, dual_monotone: true, all_converged: true };
        for (ai, &a) in present.iter().enumerate() {
            for &b in &present[ai + 1..] {
                let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == a || labels[i] == b).collect();
                let m = idx.len();
                let y: Vec<f64> = idx.iter().map(|&i| if labels[i] == a { 1.0 } else { -1.0 }).collect();
                let sub: Vec<f64> =
                    idx.iter().flat_map(|&i| idx.iter().map(move |&j| (i, j))).map(|(i, j)| gram[i * n + j]).collect();
                let sol = smo_solve(&sub, &y, c, tol, default_max_iter(m))?;
                report.max_kkt_violation = report.max_kkt_violation.max(sol.kkt_violation(&sub, &y, c));
                report.dual_monotone &= dual_is_monotone(&sol.dual_history);
                report.all_converged &= sol.converged;
                let mut pm = PairModel { pos: a, neg: b, support: Vec::new(), coef: Vec::new(), b: sol.b };
                for (local, &i) in idx.iter().enumerate() {
                    if sol.alpha[local] > 0.0 {
                        if pool_index[i] == usize::MAX {
                            pool_index[i] = support.len();
                            support.push(features[i].clone());
                        }
                        pm.support.push(pool_index[i]);
                        pm.coef.push(sol.alpha[local] * y[local]);
                    }
                }
                pairs.push(pm);
            }
        }
        Ok((SvmModel { kernel, num_classes, dim, support, pairs }, report))
    }

    /// Decision value of every pair model, as `(pos, neg, value)`.
    pub fn decisions(&self, x: &[f64]) -> Result<Vec<(usize, usize, f64)>> {
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.len() });
        }
        let kv: Vec<f64> = self.support.iter().map(|sv| self.kernel.eval(sv, x)).collect();
        Ok(self
            .pairs
            .iter()
            .map(|p| {
                let d = p.support.iter().zip(&p.coef).map(|(&s, a)| a * kv[s]).sum::<f64>() + p.b;
                (p.pos, p.neg, d)
            })
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(ovo_vote(self.num_classes, &self.decisions(x)?))
    }
}

/// True when no step lowers the objective by more than rounding noise.
pub fn dual_is_monotone(history: &[f64]) -> bool {
    history.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0))
}

/// One-vs-one vote over `(pos, neg, decision)` triples. A positive decision
/// is a vote for `pos`. Ties go to the larger summed margin, where each pair
/// adds `d` to `pos` and `-d` to `neg`, then to the lower class index.
pub fn ovo_vote(num_classes: usize, decisions: &[(usize, usize, f64)]) -> usize {
    let mut votes = vec![0usize; num_classes];
    let mut margin = vec![0.0f64; num_classes];
    for &(a, b, d) in decisions {
        if d > 0.0 {
            votes[a] += 1;
        } else {
            votes[b] += 1;
        }
        margin[a] += d;
        margin[b] -= d;
    }
    let mut best = 0;
    for c in 1..num_classes {
        if votes[c] > votes[best] || (votes[c] == votes[best] && margin[c] > margin[best]) {
            best = c;
        }
    }
    best
}
