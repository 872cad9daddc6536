//! SparseMAP over budget-constrained binary masks.
//!
//! The feasible set is every configuration `z ∈ {0,1}ⁿ` with `Σz ≤ k`. A
//! configuration scores `θ·z − c·(number of 0↔1 switches between adjacent
//! positions)`. SparseMAP returns the marginals `μ` maximizing the expected
//! score minus `½‖μ‖²` over distributions on configurations, represented
//! as a sparse convex combination of active configurations found by an
//! active-set method that only needs a MAP oracle.

use crate::error::{CoreError, Result};
use crest_grad::{CustomOp, Element, GradError, Tensor};
use nalgebra::{DMatrix, DVector};
use std::any::Any;

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Binary 0/1 mask.
pub type Mask = Vec<u8>;

/// `⌈B·n⌉` clamped to `[1, n]`. The epsilon absorbs products like
/// `0.3 * 10 = 3.0000000000000004`.
pub fn budget_tokens(budget: f64, n: usize) -> usize {
    let k = (budget * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetFactor {
    n: usize,
    k: usize,
    transition_penalty: f64,
}

impl BudgetFactor {
    pub fn new(n: usize, k: usize, transition_penalty: f64) -> Result<Self> {
        if n == 0 || k == 0 || k > n {
            return Err(CoreError::Budget(format!("need 1 <= k <= n, got k={k}, n={n}")));
        }
        if !(transition_penalty >= 0.0) || !transition_penalty.is_finite() {
            return Err(CoreError::Budget(format!(
                "transition penalty must be a finite nonnegative number, got {transition_penalty}"
            )));
        }
        Ok(Self {
            n,
            k,
            transition_penalty,
        })
    }

    /// Factor with `k = ⌈budget·n⌉`.
    pub fn from_budget(n: usize, budget: f64, transition_penalty: f64) -> Result<Self> {
        if !(budget > 0.0 && budget <= 1.0) {
            return Err(CoreError::Budget(format!("budget must lie in (0, 1], got {budget}")));
        }
        Self::new(n, budget_tokens(budget, n), transition_penalty)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn transition_penalty(&self) -> f64 {
        self.transition_penalty
    }

    pub fn transitions(z: &[u8]) -> usize {
        z.windows(2).filter(|w| w[0] != w[1]).count()
    }

    /// `scores·z − c·transitions(z)`.
    pub fn score(&self, scores: &[f64], z: &[u8]) -> f64 {
        let lin: f64 = scores
            .iter()
            .zip(z)
            .filter(|(_, &b)| b == 1)
            .map(|(s, _)| s)
            .sum();
        lin - self.transition_penalty * Self::transitions(z) as f64
    }
}

fn check_scores(scores: &[f64], factor: &BudgetFactor) -> Result<()> {
    if scores.len() != factor.n {
        return Err(CoreError::Length {
            what: "scores",
            expected: factor.n,
            got: scores.len(),
        });
    }
    match scores.iter().position(|s| !s.is_finite()) {
        Some(i) => Err(CoreError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Highest-scoring feasible configuration.
///
/// Without a transition penalty this keeps the positive scores among the
/// top `k` (ties to the lower index). With a penalty it runs a DP over
/// (position, ones used, current state); on exact ties a position is
/// switched on only when its own score is positive, and earlier positions
/// are preferred.
pub fn map_oracle(scores: &[f64], factor: &BudgetFactor) -> Result<Mask> {
    check_scores(scores, factor)?;
    Ok(if factor.transition_penalty == 0.0 {
        top_k_positive(scores, factor.k)
    } else {
        dp_oracle(scores, factor)
    })
}

fn top_k_positive(scores: &[f64], k: usize) -> Mask {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > 0.0).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut z = vec![0u8; scores.len()];
    for &i in idx.iter().take(k) {
        z[i] = 1;
    }
    z
}

fn dp_oracle(scores: &[f64], factor: &BudgetFactor) -> Mask {
    let (n, k, c) = (factor.n, factor.k, factor.transition_penalty);
    // best[i][u][s]: best score of positions i.. given z[i-1] = s and u ones
    // already used before position i.
    let neg = f64::NEG_INFINITY;
    let mut best = vec![vec![[neg; 2]; k + 1]; n + 1];
    for row in best[n].iter_mut() {
        *row = [0.0, 0.0];
    }
    for i in (0..n).rev() {
        for u in 0..=k {
            for prev in 0..2usize {
                let off = best[i + 1][u][0] - if i > 0 && prev == 1 { c } else { 0.0 };
                let on = if u < k {
                    best[i + 1][u + 1][1] + scores[i] - if i > 0 && prev == 0 { c } else { 0.0 }
                } else {
                    neg
                };
                best[i][u][prev] = off.max(on);
            }
        }
    }
    let mut z = vec![0u8; n];
    let (mut u, mut prev) = (0usize, 0usize);
    for i in 0..n {
        let off = best[i + 1][u][0] - if i > 0 && prev == 1 { c } else { 0.0 };
        let on = if u < k {
            best[i + 1][u + 1][1] + scores[i] - if i > 0 && prev == 0 { c } else { 0.0 }
        } else {
            neg
        };
        let take = on > off || (on == off && scores[i] > 0.0);
        if take {
            z[i] = 1;
            u += 1;
            prev = 1;
        } else {
            prev = 0;
        }
    }
    z
}

/// Sparse solution: `μ = Σ coefficients[j] · active_vertices[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMapSolution {
    pub marginals: Vec<f64>,
    pub active_vertices: Vec<Mask>,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    scores: Vec<f64>,
    factor: BudgetFactor,
}

impl SparseMapSolution {
    pub fn factor(&self) -> &BudgetFactor {
        &self.factor
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Top-k binarization of the marginals: positions of the `k` largest
    /// nonzero entries, ties to the lower index.
    pub fn binarize(&self) -> Mask {
        binarize(&self.marginals, self.factor.k)
    }
}

/// Positions of the `k` largest nonzero entries (ties to the lower index).
/// Values are compared after rounding to 1e-6 so solver noise cannot
/// reorder genuine ties.
pub fn binarize(marginals: &[f64], k: usize) -> Mask {
    let q: Vec<i64> = marginals.iter().map(|&m| (m * 1e6).round() as i64).collect();
    let mut idx: Vec<usize> = (0..q.len()).filter(|&i| q[i] > 0).collect();
    idx.sort_by(|&a, &b| q[b].cmp(&q[a]).then(a.cmp(&b)));
    let mut z = vec![0u8; marginals.len()];
    for &i in idx.iter().take(k) {
        z[i] = 1;
    }
    z
}

fn combine(vertices: &[Mask], coef: &[f64], n: usize) -> Vec<f64> {
    let mut mu = vec![0.0; n];
    for (v, &a) in vertices.iter().zip(coef) {
        for (m, &b) in mu.iter_mut().zip(v) {
            if b == 1 {
                *m += a;
            }
        }
    }
    mu
}

fn dot(v: &Mask, x: &[f64]) -> f64 {
    v.iter().zip(x).filter(|(&b, _)| b == 1).map(|(_, &y)| y).sum()
}

fn overlap(a: &Mask, b: &Mask) -> f64 {
    a.iter().zip(b).filter(|(&x, &y)| x == 1 && y == 1).count() as f64
}

/// Solves `[Q 1; 1ᵀ 0][β; ν] = [rhs; tail]` with `Q_ij = ⟨v_i, v_j⟩`.
fn bordered_solve(vertices: &[Mask], rhs: &[f64], tail: f64) -> Option<Vec<f64>> {
    let m = vertices.len();
    let mut k = DMatrix::<f64>::zeros(m + 1, m + 1);
    for i in 0..m {
        for j in 0..=i {
            let q = overlap(&vertices[i], &vertices[j]);
            k[(i, j)] = q;
            k[(j, i)] = q;
        }
        k[(i, m)] = 1.0;
        k[(m, i)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(m + 1);
    for i in 0..m {
        b[i] = rhs[i];
    }
    b[m] = tail;
    let sol = k.clone().lu().solve(&b).filter(|x| x.iter().all(|v| v.is_finite()));
    let sol = match sol {
        Some(s) => s,
        None => k.svd(true, true).solve(&b, 1e-12).ok()?,
    };
    Some(sol.iter().take(m).copied().collect())
}

/// Active-set SparseMAP. Returns the last iterate flagged non-converged if
/// `max_iter` runs out.
pub fn sparsemap(scores: &[f64], factor: &BudgetFactor, max_iter: usize, tol: f64) -> Result<SparseMapSolution> {
    check_scores(scores, factor)?;
    if max_iter == 0 || !(tol > 0.0) {
        return Err(CoreError::Budget(format!(
            "need max_iter >= 1 and tol > 0, got {max_iter}, {tol}"
        )));
    }
    let n = factor.n;
    let mut active = vec![map_oracle(scores, factor)?];
    let mut alpha = vec![1.0];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let s: Vec<f64> = active.iter().map(|v| factor.score(scores, v)).collect();
        let beta = match bordered_solve(&active, &s, 1.0) {
            Some(b) => b,
            None => break,
        };
        if beta.iter().all(|&b| b >= -1e-12) {
            alpha = beta.iter().map(|&b| b.max(0.0)).collect();
            let total: f64 = alpha.iter().sum();
            alpha.iter_mut().for_each(|a| *a /= total);
            prune(&mut active, &mut alpha);

            let mu = combine(&active, &alpha, n);
            let resid: Vec<f64> = scores.iter().zip(&mu).map(|(t, m)| t - m).collect();
            let cand = map_oracle(&resid, factor)?;
            let cand_val = factor.score(&resid, &cand);
            let cur_val: f64 = active
                .iter()
                .zip(&alpha)
                .map(|(v, a)| a * factor.score(&resid, v))
                .sum();
            if cand_val - cur_val <= tol {
                converged = true;
                break;
            }
            if active.contains(&cand) {
                break;
            }
            active.push(cand);
            alpha.push(0.0);
        } else {
            // Step toward beta until the first coefficient hits zero.
            let mut step = 1.0f64;
            for (a, b) in alpha.iter().zip(&beta) {
                if *b < *a && *b < 0.0 {
                    step = step.min(a / (a - b));
                }
            }
            for (a, b) in alpha.iter_mut().zip(&beta) {
                *a += step * (b - *a);
            }
            prune(&mut active, &mut alpha);
        }
    }

    let marginals = combine(&active, &alpha, n);
    Ok(SparseMapSolution {
        marginals,
        active_vertices: active,
        coefficients: alpha,
        converged,
        iterations,
        scores: scores.to_vec(),
        factor: *factor,
    })
}

fn prune(active: &mut Vec<Mask>, alpha: &mut Vec<f64>) {
    let keep: Vec<bool> = alpha.iter().map(|&a| a > 1e-12).collect();
    if keep.iter().all(|&k| !k) {
        return;
    }
    let mut i = 0;
    active.retain(|_| {
        i += 1;
        keep[i - 1]
    });
    alpha.retain(|&a| a > 1e-12);
    let total: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= total);
}

/// Orthonormal basis under Gram–Schmidt.
#[derive(Default)]
struct Basis {
    vecs: Vec<Vec<f64>>,
}

impl Basis {
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = x.to_vec();
        for b in &self.vecs {
            let p: f64 = r.iter().zip(b).map(|(u, v)| u * v).sum();
            r.iter_mut().zip(b).for_each(|(u, v)| *u -= p * v);
        }
        r
    }

    /// Adds the component of `x` outside the span; false if there is none.
    fn push(&mut self, x: &[f64]) -> bool {
        let r = self.residual(x);
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return false;
        }
        self.vecs.push(r.into_iter().map(|v| v / norm).collect());
        true
    }
}

fn diff(a: &Mask, b: &Mask) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| x as f64 - y as f64).collect()
}

/// Affinely independent vertices spanning the optimal face: the active set
/// after dropping dependent members, completed with every further vertex the
/// linearized oracle ties on. The face is probed one direction at a time; a
/// direction along which no tied vertex moves is orthogonal to the face.
fn face_basis(sol: &SparseMapSolution) -> Result<Vec<Mask>> {
    let factor = &sol.factor;
    let n = factor.n;
    let resid: Vec<f64> = sol
        .scores
        .iter()
        .zip(&sol.marginals)
        .map(|(t, m)| t - m)
        .collect();

    let mut order: Vec<usize> = (0..sol.active_vertices.len())
        .filter(|&i| sol.coefficients[i] > 1e-12)
        .collect();
    order.sort_by(|&a, &b| sol.coefficients[b].total_cmp(&sol.coefficients[a]));
    let Some(&first) = order.first() else {
        return Ok(vec![map_oracle(&resid, factor)?]);
    };
    let anchor = sol.active_vertices[first].clone();
    let mut verts = vec![anchor.clone()];
    let mut span = Basis::default();
    for &i in &order[1..] {
        let v = &sol.active_vertices[i];
        if span.push(&diff(v, &anchor)) {
            verts.push(v.clone());
        }
    }

    let top = factor.score(&resid, &anchor);
    let scale = 1.0 + resid.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let eps = 1e-7 * scale;
    let in_face = |v: &Mask| factor.score(&resid, v) >= top - 1e-6 * scale;

    let mut flat = Basis::default();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        loop {
            let d = flat.residual(&span.residual(&e));
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-9 {
                break;
            }
            let d: Vec<f64> = d.iter().map(|v| v / norm).collect();
            let mut grew = false;
            for sign in [1.0, -1.0] {
                let probe: Vec<f64> = resid.iter().zip(&d).map(|(r, x)| r + sign * eps * x).collect();
                let v = map_oracle(&probe, factor)?;
                if !in_face(&v) {
                    continue;
                }
                let dv = diff(&v, &anchor);
                let along: f64 = dv.iter().zip(&d).map(|(a, b)| a * b).sum();
                if along.abs() > 1e-9 && span.push(&dv) {
                    verts.push(v);
                    grew = true;
                    break;
                }
            }
            if !grew {
                flat.push(&d);
            }
        }
    }
    Ok(verts)
}

/// Vector-Jacobian product of `scores ↦ μ` at a converged solution.
///
/// Differentiates the equality-constrained QP on the optimal face:
/// `∂μ/∂θ = M A Mᵀ` where `A` is the leading block of the inverse bordered
/// KKT matrix over an affinely independent vertex set `M`.
pub fn sparsemap_backward(sol: &SparseMapSolution, upstream: &[f64]) -> Result<Vec<f64>> {
    let n = sol.factor.n;
    if upstream.len() != n {
        return Err(CoreError::Length {
            what: "upstream gradient",
            expected: n,
            got: upstream.len(),
        });
    }
    if upstream.iter().all(|&u| u == 0.0) {
        return Ok(vec![0.0; n]);
    }
    let verts = face_basis(sol)?;
    if verts.len() == 1 {
        return Ok(vec![0.0; n]);
    }
    let rhs: Vec<f64> = verts.iter().map(|v| dot(v, upstream)).collect();
    let a = bordered_solve(&verts, &rhs, 0.0)
        .ok_or_else(|| CoreError::Budget("singular face system".into()))?;
    Ok(combine(&verts, &a, n))
}

/// Graph node mapping a `[n, 1]` score column to `[n, 1]` marginals.
#[derive(Debug, Clone)]
pub struct SparseMapOp {
    pub factor: BudgetFactor,
    pub max_iter: usize,
    pub tol: f64,
}

impl SparseMapOp {
    pub fn new(factor: BudgetFactor) -> Self {
        Self {
            factor,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

fn op_err(e: CoreError) -> GradError {
    GradError::Custom {
        name: "sparsemap",
        message: e.to_string(),
    }
}

impl<T: Element> CustomOp<T> for SparseMapOp {
    fn name(&self) -> &'static str {
        "sparsemap"
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> crest_grad::Result<Vec<usize>> {
        let want = [self.factor.n, 1];
        match inputs {
            [s] if *s == want => Ok(want.to_vec()),
            _ => Err(GradError::Shape {
                node: 0,
                op: "sparsemap",
                expected: format!("[{:?}]", want),
                actual: format!("{inputs:?}"),
            }),
        }
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> crest_grad::Result<(Tensor<T>, Box<dyn Any + Send + Sync>)> {
        let scores: Vec<f64> = inputs[0].data().iter().map(|x| x.as_f64()).collect();
        let sol = sparsemap(&scores, &self.factor, self.max_iter, self.tol).map_err(op_err)?;
        let out = Tensor::column(sol.marginals.iter().map(|&m| T::of(m)).collect());
        Ok((out, Box::new(sol)))
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        state: &(dyn Any + Send + Sync),
        upstream: &[T],
    ) -> crest_grad::Result<Vec<Option<Vec<T>>>> {
        let sol = state
            .downcast_ref::<SparseMapSolution>()
            .ok_or_else(|| op_err(CoreError::Budget("missing solution state".into())))?;
        let up: Vec<f64> = upstream.iter().map(|x| x.as_f64()).collect();
        let g = sparsemap_backward(sol, &up).map_err(op_err)?;
        Ok(vec![Some(g.into_iter().map(T::of).collect())])
    }
}
