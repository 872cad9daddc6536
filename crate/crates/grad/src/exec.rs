use crate::error::{GradError, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::params::ParamStore;
use crate::tensor::{Element, Tensor};
use std::any::Any;
use std::collections::{BTreeMap, HashMap};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Source of tensors for a graph's named inputs.
pub trait Bindings<T: Element> {
    fn lookup(&self, name: &str) -> Option<&Tensor<T>>;
}

impl<T: Element> Bindings<T> for HashMap<String, Tensor<T>> {
    fn lookup(&self, name: &str) -> Option<&Tensor<T>> {
        self.get(name)
    }
}

impl<T: Element> Bindings<T> for ParamStore<T> {
    fn lookup(&self, name: &str) -> Option<&Tensor<T>> {
        self.get(name)
    }
}

/// First source wins.
impl<T: Element, A: Bindings<T>, B: Bindings<T>> Bindings<T> for (&A, &B) {
    fn lookup(&self, name: &str) -> Option<&Tensor<T>> {
        self.0.lookup(name).or_else(|| self.1.lookup(name))
    }
}

/// Result of a forward pass: one tensor per node.
pub struct Values<T: Element = f32> {
    tensors: Vec<Tensor<T>>,
    states: Vec<Option<Box<dyn Any + Send + Sync>>>,
    tracked: Vec<bool>,
    outputs: Vec<(String, NodeId)>,
}

impl<T: Element> Values<T> {
    pub fn get(&self, id: NodeId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.tensors[id.0].data()[0]
    }

    /// State a custom op saved during the forward pass.
    pub fn state<S: 'static>(&self, id: NodeId) -> Option<&S> {
        self.states[id.0].as_ref()?.downcast_ref::<S>()
    }

    pub fn output(&self, name: &str) -> Option<&Tensor<T>> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| &self.tensors[id.0])
    }

    pub fn named_outputs(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.outputs
            .iter()
            .map(|(n, id)| (n.as_str(), &self.tensors[id.0]))
    }
}

/// Gradients of a scalar loss keyed by input name.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T: Element = f32> {
    by_name: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    /// Adds another gradient set into this one.
    pub fn merge(&mut self, other: Gradients<T>) {
        for (name, g) in other.by_name {
            match self.by_name.get_mut(&name) {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, &b)| *a += b),
                None => {
                    self.by_name.insert(name, g);
                }
            }
        }
    }

    pub fn scale(&mut self, by: f64) {
        let s = T::of(by);
        for g in self.by_name.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
}

fn domain(node: usize, op: &'static str) -> GradError {
    GradError::Domain { node, op }
}

fn all_finite<T: Element>(xs: &[T]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// `c[m, n] += a[m, k] * b[k, n]`.
fn matmul_acc<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

fn transpose<T: Element>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn softmax_row<T: Element>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o = *o / z);
}

fn map<T: Element>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).expect("same layout")
}

fn zip<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
    .expect("same layout")
}

/// Forward pass. Pure: identical inputs give bit-identical outputs.
pub fn evaluate<T: Element, B: Bindings<T> + ?Sized>(
    graph: &Graph<T>,
    inputs: &B,
) -> Result<Values<T>> {
    let n = graph.nodes.len();
    let mut tensors: Vec<Tensor<T>> = Vec::with_capacity(n);
    let mut states: Vec<Option<Box<dyn Any + Send + Sync>>> = Vec::with_capacity(n);
    let mut tracked = Vec::with_capacity(n);

    for (idx, node) in graph.nodes.iter().enumerate() {
        let v = |id: NodeId| -> &Tensor<T> { &tensors[id.0] };
        let mut state = None;
        let out = match &node.op {
            Op::Input(name) => {
                let t = inputs
                    .lookup(name)
                    .ok_or_else(|| GradError::Unbound(name.clone()))?;
                if t.shape() != node.shape.as_slice() {
                    return Err(crate::error::shape_err(
                        idx,
                        "input",
                        &node.shape,
                        t.shape(),
                    ));
                }
                let mut t = t.clone();
                t.zero_grad();
                t
            }
            Op::Const(t) => t.clone(),
            Op::Add(a, b) => zip(v(*a), v(*b), |x, y| x + y),
            Op::Sub(a, b) => zip(v(*a), v(*b), |x, y| x - y),
            Op::Mul(a, b) => zip(v(*a), v(*b), |x, y| x * y),
            Op::Scale(a, s) => map(v(*a), |x| x * *s),
            Op::MatMul(a, b) => {
                let (ta, tb) = (v(*a), v(*b));
                let (m, k, nn) = (ta.rows(), ta.cols(), tb.cols());
                let mut out = vec![T::zero(); m * nn];
                matmul_acc(ta.data(), tb.data(), &mut out, m, k, nn);
                Tensor::new(vec![m, nn], out)?
            }
            Op::Transpose(a) => {
                let t = v(*a);
                Tensor::new(node.shape.clone(), transpose(t.data(), t.rows(), t.cols()))?
            }
            Op::Concat { parts, axis } => {
                let (rows, cols) = (node.shape[0], node.shape[1]);
                let mut out = vec![T::zero(); rows * cols];
                let mut offset = 0;
                for &p in parts {
                    let t = v(p);
                    for i in 0..t.rows() {
                        for j in 0..t.cols() {
                            let (r, c) = if *axis == 0 {
                                (offset + i, j)
                            } else {
                                (i, offset + j)
                            };
                            out[r * cols + c] = t.at(i, j);
                        }
                    }
                    offset += if *axis == 0 { t.rows() } else { t.cols() };
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::Gather { table, rows } => {
                let t = v(*table);
                let mut out = Vec::with_capacity(rows.len() * t.cols());
                for &r in rows {
                    out.extend_from_slice(t.row(r));
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::Tanh(a) => map(v(*a), T::tanh),
            Op::Relu(a) => map(v(*a), |x| x.max(T::zero())),
            Op::Sigmoid(a) => map(v(*a), |x| T::one() / (T::one() + (-x).exp())),
            Op::Exp(a) => map(v(*a), T::exp),
            Op::Log(a) => {
                let t = v(*a);
                if t.data().iter().any(|x| !x.is_finite() || *x < T::zero()) {
                    return Err(domain(idx, "log"));
                }
                map(t, T::ln)
            }
            Op::Sum(a) => Tensor::scalar(v(*a).data().iter().copied().sum()),
            Op::Mean(a) => {
                let t = v(*a);
                let s: T = t.data().iter().copied().sum();
                Tensor::scalar(s / T::of(t.numel() as f64))
            }
            Op::SoftmaxRows(a) => {
                let t = v(*a);
                if !all_finite(t.data()) {
                    return Err(domain(idx, "row-softmax"));
                }
                let c = t.cols();
                let mut out = vec![T::zero(); t.numel()];
                for i in 0..t.rows() {
                    softmax_row(t.row(i), &mut out[i * c..(i + 1) * c]);
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::CrossEntropy { logits, targets } => {
                let t = v(*logits);
                if !all_finite(t.data()) {
                    return Err(domain(idx, "cross-entropy"));
                }
                let mut total = T::zero();
                for (i, &y) in targets.iter().enumerate() {
                    let row = t.row(i);
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
                    total += lse - row[y];
                }
                Tensor::scalar(total / T::of(targets.len() as f64))
            }
            Op::LayerNorm { x, gain, bias } => {
                let (t, g, b) = (v(*x), v(*gain), v(*bias));
                let d = t.cols();
                let mut out = vec![T::zero(); t.numel()];
                for i in 0..t.rows() {
                    let row = t.row(i);
                    let (mu, inv) = norm_stats(row);
                    for j in 0..d {
                        out[i * d + j] = (row[j] - mu) * inv * g.data()[j] + b.data()[j];
                    }
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::ScaleRows { x, scale } => {
                let (t, s) = (v(*x), v(*scale));
                let c = t.cols();
                let mut out = t.data().to_vec();
                for i in 0..t.rows() {
                    let f = s.data()[i];
                    out[i * c..(i + 1) * c].iter_mut().for_each(|o| *o *= f);
                }
                Tensor::new(node.shape.clone(), out)?
            }
            Op::Custom { op, inputs } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&i| v(i)).collect();
                let (out, st) = op.forward(&ins)?;
                if out.shape() != node.shape.as_slice() {
                    return Err(crate::error::shape_err(
                        idx,
                        op.name(),
                        &node.shape,
                        out.shape(),
                    ));
                }
                state = Some(st);
                out
            }
        };
        let track = match &node.op {
            Op::Input(name) => inputs.lookup(name).is_some_and(|t| t.requires_grad()),
            Op::Const(_) => false,
            op => op.inputs().iter().any(|i| tracked[i.0]),
        };
        tensors.push(out);
        states.push(state);
        tracked.push(track);
    }

    Ok(Values {
        tensors,
        states,
        tracked,
        outputs: graph.outputs().to_vec(),
    })
}

fn norm_stats<T: Element>(row: &[T]) -> (T, T) {
    let d = T::of(row.len() as f64);
    let mu = row.iter().copied().sum::<T>() / d;
    let var = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<T>() / d;
    (mu, T::one() / (var + T::of(LAYER_NORM_EPS)).sqrt())
}

fn acc<T: Element>(slot: &mut Option<Vec<T>>, len: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); len]);
    f(buf);
}

/// Reverse pass from a scalar `loss`. Returns gradients for every input
/// whose bound tensor has `requires_grad` set.
pub fn gradients<T: Element>(
    graph: &Graph<T>,
    values: &Values<T>,
    loss: NodeId,
) -> Result<Gradients<T>> {
    let loss_shape = graph.shape(loss);
    if values.get(loss).numel() != 1 {
        return Err(GradError::NonScalarLoss {
            node: loss.0,
            shape: loss_shape.to_vec(),
        });
    }
    let n = graph.nodes.len();
    let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
    grads[loss.0] = Some(vec![T::one()]);
    let mut out = Gradients::default();

    for idx in (0..=loss.0).rev() {
        if !values.tracked[idx] {
            continue;
        }
        let Some(g) = grads[idx].take() else {
            continue;
        };
        let node = &graph.nodes[idx];
        let val = &values.tensors;
        let tracked = &values.tracked;
        let send = |grads: &mut Vec<Option<Vec<T>>>, id: NodeId, f: &dyn Fn(&mut [T])| {
            if tracked[id.0] {
                let len = val[id.0].numel();
                acc(&mut grads[id.0], len, |b| f(b));
            }
        };
        match &node.op {
            Op::Input(name) => {
                let t = Tensor::new(node.shape.clone(), g)?;
                match out.by_name.get_mut(name) {
                    Some(existing) => existing
                        .data_mut()
                        .iter_mut()
                        .zip(t.data())
                        .for_each(|(a, &b)| *a += b),
                    None => {
                        out.by_name.insert(name.clone(), t);
                    }
                }
            }
            Op::Const(_) => {}
            Op::Add(a, b) => {
                send(&mut grads, *a, &|buf| {
                    buf.iter_mut().zip(&g).for_each(|(x, &y)| *x += y)
                });
                send(&mut grads, *b, &|buf| {
                    buf.iter_mut().zip(&g).for_each(|(x, &y)| *x += y)
                });
            }
            Op::Sub(a, b) => {
                send(&mut grads, *a, &|buf| {
                    buf.iter_mut().zip(&g).for_each(|(x, &y)| *x += y)
                });
                send(&mut grads, *b, &|buf| {
                    buf.iter_mut().zip(&g).for_each(|(x, &y)| *x -= y)
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val[a.0].data(), val[b.0].data());
                send(&mut grads, *a, &|buf| {
                    for ((x, &gy), &o) in buf.iter_mut().zip(&g).zip(vb) {
                        *x += gy * o;
                    }
                });
                send(&mut grads, *b, &|buf| {
                    for ((x, &gy), &o) in buf.iter_mut().zip(&g).zip(va) {
                        *x += gy * o;
                    }
                });
            }
            Op::Scale(a, s) => {
                send(&mut grads, *a, &|buf| {
                    buf.iter_mut().zip(&g).for_each(|(x, &y)| *x += y * *s)
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (&val[a.0], &val[b.0]);
                let (m, k, nn) = (ta.rows(), ta.cols(), tb.cols());
                send(&mut grads, *a, &|buf| {
                    let bt = transpose(tb.data(), k, nn);
                    matmul_acc(&g, &bt, buf, m, nn, k);
                });
                send(&mut grads, *b, &|buf| {
                    let at = transpose(ta.data(), m, k);
                    matmul_acc(&at, &g, buf, k, m, nn);
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (node.shape[0], node.shape[1]);
                send(&mut grads, *a, &|buf| {
                    let gt = transpose(&g, r, c);
                    buf.iter_mut().zip(&gt).for_each(|(x, &y)| *x += y);
                });
            }
            Op::Concat { parts, axis } => {
                let cols = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = (val[p.0].rows(), val[p.0].cols());
                    let off = offset;
                    send(&mut grads, p, &|buf| {
                        for i in 0..pr {
                            for j in 0..pc {
                                let (r, c) = if *axis == 0 {
                                    (off + i, j)
                                } else {
                                    (i, off + j)
                                };
                                buf[i * pc + j] += g[r * cols + c];
                            }
                        }
                    });
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Gather { table, rows } => {
                let d = node.shape[1];
                send(&mut grads, *table, &|buf| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..d {
                            buf[r * d + j] += g[i * d + j];
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let y = val[idx].data();
                send(&mut grads, *a, &|buf| {
                    for ((x, &gy), &o) in buf.iter_mut().zip(&g).zip(y) {
                        *x += gy * (T::one() - o * o);
                    }
                });
            }
            Op::Relu(a) => {
                let xin = val[a.0].data();
                send(&mut grads, *a, &|buf| {
                    for ((x, &gy), &o) in buf.iter_mut().zip(&g).zip(xin) {
                        if o > T::zero() {
                            *x += gy;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = val[idx].data();
                send(&mut grads, *a, &|buf| {
                    for ((x, &gy), &o) in buf.iter_mut().zip(&g).zip(y) {
                        *x += gy * o * (T::one() - o);
                    }
                });
            }
            Op::Exp(a) => {
                let y = val[idx].data();
                send(&mut grads, *a, &|buf| {
                    for ((x, &gy), &o) in buf.iter_mut().zip(&g).zip(y) {
                        *x += gy * o;
                    }
                });
            }
            Op::Log(a) => {
                let xin = val[a.0].data();
                send(&mut grads, *a, &|buf| {
                    for ((x, &gy), &o) in buf.iter_mut().zip(&g).zip(xin) {
                        *x += gy / o;
                    }
                });
            }
            Op::Sum(a) => {
                let s = g[0];
                send(&mut grads, *a, &|buf| buf.iter_mut().for_each(|x| *x += s));
            }
            Op::Mean(a) => {
                let s = g[0] / T::of(val[a.0].numel() as f64);
                send(&mut grads, *a, &|buf| buf.iter_mut().for_each(|x| *x += s));
            }
            Op::SoftmaxRows(a) => {
                let y = &val[idx];
                let c = y.cols();
                send(&mut grads, *a, &|buf| {
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..c {
                            buf[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets } => {
                let t = &val[logits.0];
                let c = t.cols();
                let s = g[0] / T::of(targets.len() as f64);
                send(&mut grads, *logits, &|buf| {
                    let mut p = vec![T::zero(); c];
                    for (i, &y) in targets.iter().enumerate() {
                        softmax_row(t.row(i), &mut p);
                        p[y] -= T::one();
                        for j in 0..c {
                            buf[i * c + j] += s * p[j];
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias } => {
                let (t, gn) = (&val[x.0], val[gain.0].data());
                let (rows, d) = (t.rows(), t.cols());
                let df = T::of(d as f64);
                let mut xhat = vec![T::zero(); t.numel()];
                let mut invs = vec![T::zero(); rows];
                for i in 0..rows {
                    let (mu, inv) = norm_stats(t.row(i));
                    invs[i] = inv;
                    for j in 0..d {
                        xhat[i * d + j] = (t.row(i)[j] - mu) * inv;
                    }
                }
                send(&mut grads, *bias, &|buf| {
                    for i in 0..rows {
                        for j in 0..d {
                            buf[j] += g[i * d + j];
                        }
                    }
                });
                send(&mut grads, *gain, &|buf| {
                    for i in 0..rows {
                        for j in 0..d {
                            buf[j] += g[i * d + j] * xhat[i * d + j];
                        }
                    }
                });
                send(&mut grads, *x, &|buf| {
                    for i in 0..rows {
                        let gx: Vec<T> = (0..d).map(|j| g[i * d + j] * gn[j]).collect();
                        let m1 = gx.iter().copied().sum::<T>() / df;
                        let m2 = (0..d).map(|j| gx[j] * xhat[i * d + j]).sum::<T>() / df;
                        for j in 0..d {
                            buf[i * d + j] += invs[i] * (gx[j] - m1 - xhat[i * d + j] * m2);
                        }
                    }
                });
            }
            Op::ScaleRows { x, scale } => {
                let (t, s) = (&val[x.0], val[scale.0].data());
                let c = t.cols();
                send(&mut grads, *x, &|buf| {
                    for i in 0..t.rows() {
                        for j in 0..c {
                            buf[i * c + j] += g[i * c + j] * s[i];
                        }
                    }
                });
                send(&mut grads, *scale, &|buf| {
                    for i in 0..t.rows() {
                        let r = t.row(i);
                        buf[i] += (0..c).map(|j| g[i * c + j] * r[j]).sum::<T>();
                    }
                });
            }
            Op::Custom { op, inputs } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&i| &val[i.0]).collect();
                let st = values.states[idx].as_deref().ok_or(GradError::Custom {
                    name: op.name(),
                    message: "missing forward state".into(),
                })?;
                let back = op.backward(&ins, &val[idx], st, &g)?;
                for (&i, gi) in inputs.iter().zip(back) {
                    if let Some(gi) = gi {
                        send(&mut grads, i, &|buf| {
                            buf.iter_mut().zip(&gi).for_each(|(x, &y)| *x += y)
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, Tensor<f32>)]) -> HashMap<String, Tensor<f32>> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn identity_matmul_is_noop() {
        let mut g = Graph::<f32>::new();
        let i = g.constant(Tensor::identity(2));
        let a = g.input("a", &[2, 2]);
        let out = g.matmul(i, a).unwrap();
        let a_val = Tensor::matrix(2, 2, vec![1.5, -2.0, 0.25, 7.0]).unwrap();
        let v = evaluate(&g, &bind(&[("a", a_val.clone())])).unwrap();
        assert_eq!(v.get(out).data(), a_val.data());
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::<f32>::new();
        let z = g.constant(Tensor::zeros(&[1, 2]));
        let s = g.softmax_rows(z).unwrap();
        let v = evaluate(&g, &HashMap::new()).unwrap();
        assert_eq!(v.get(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn sum_of_squares() {
        let mut g = Graph::<f32>::new();
        let x = g.input("x", &[1, 2]);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let x_val = Tensor::matrix(1, 2, vec![1.0, 2.0])
            .unwrap()
            .requiring_grad();
        let v = evaluate(&g, &bind(&[("x", x_val)])).unwrap();
        assert_eq!(v.scalar(s), 5.0);
        let gr = gradients(&g, &v, s).unwrap();
        assert_eq!(gr.get("x").unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut g = Graph::<f32>::new();
        let x = g.input("x", &[1, 2]);
        let c = g.constant(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap());
        let z = g.mul(c, c).unwrap();
        let zx = g.scale(x, 0.0);
        let tot = g.add(z, zx).unwrap();
        let s = g.sum(tot);
        let x_val = Tensor::matrix(1, 2, vec![1.0, 2.0])
            .unwrap()
            .requiring_grad();
        let v = evaluate(&g, &bind(&[("x", x_val)])).unwrap();
        let gr = gradients(&g, &v, s).unwrap();
        assert_eq!(gr.get("x").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.input("x", &[1, 2]);
        let v = evaluate(&g, &bind(&[("x", Tensor::zeros(&[1, 2]).requiring_grad())])).unwrap();
        assert!(matches!(
            gradients(&g, &v, x),
            Err(GradError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn log_and_softmax_reject_non_finite() {
        let mut g = Graph::<f32>::new();
        let x = g.input("x", &[1, 2]);
        let _ = g.log(x);
        let bad = Tensor::matrix(1, 2, vec![f32::NAN, 1.0]).unwrap();
        assert!(matches!(
            evaluate(&g, &bind(&[("x", bad.clone())])),
            Err(GradError::Domain { .. })
        ));

        let mut g = Graph::<f32>::new();
        let x = g.input("x", &[1, 2]);
        g.softmax_rows(x).unwrap();
        let inf = Tensor::matrix(1, 2, vec![f32::INFINITY, 1.0]).unwrap();
        assert!(matches!(
            evaluate(&g, &bind(&[("x", inf)])),
            Err(GradError::Domain { .. })
        ));
    }

    #[test]
    fn bound_shape_must_match_declaration() {
        let mut g = Graph::<f32>::new();
        g.input("x", &[2, 2]);
        let err = evaluate(&g, &bind(&[("x", Tensor::zeros(&[2, 3]))]))
            .err()
            .unwrap();
        assert!(matches!(err, GradError::Shape { .. }));
        let err = evaluate(&g, &HashMap::<String, Tensor<f32>>::new())
            .err()
            .unwrap();
        assert!(matches!(err, GradError::Unbound(_)));
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let mut g = Graph::<f32>::new();
        let l = g.constant(Tensor::zeros(&[3, 4]));
        let ce = g.cross_entropy(l, &[0, 1, 3]).unwrap();
        let v = evaluate(&g, &HashMap::new()).unwrap();
        assert!((v.scalar(ce) - 4f32.ln()).abs() < 1e-6);
    }
}
