use crate::error::{shape_err, GradError, Result};
use crate::tensor::{Element, Tensor};
use std::any::Any;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose forward and backward passes live outside the graph,
/// e.g. an iterative solver with an implicit-differentiation backward.
pub trait CustomOp<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;

    fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>>;

    /// Returns the output and any state the backward pass needs.
    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<(Tensor<T>, Box<dyn Any + Send + Sync>)>;

    /// Vector-Jacobian product. One entry per input; `None` means no gradient.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        state: &(dyn Any + Send + Sync),
        upstream: &[T],
    ) -> Result<Vec<Option<Vec<T>>>>;
}

pub(crate) enum Op<T: Element> {
    Input(String),
    Const(Tensor<T>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Gather {
        table: NodeId,
        rows: Vec<usize>,
    },
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SoftmaxRows(NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    ScaleRows {
        x: NodeId,
        scale: NodeId,
    },
    Custom {
        op: Arc<dyn CustomOp<T>>,
        inputs: Vec<NodeId>,
    },
}

impl<T: Element> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Concat { .. } => "concat",
            Op::Gather { .. } => "gather",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SoftmaxRows(_) => "row-softmax",
            Op::CrossEntropy { .. } => "cross-entropy",
            Op::LayerNorm { .. } => "layer-norm",
            Op::ScaleRows { .. } => "scale-rows",
            Op::Custom { op, .. } => op.name(),
        }
    }

    pub(crate) fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Const(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SoftmaxRows(a) => vec![*a],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Gather { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::LayerNorm { x, gain, bias } => vec![*x, *gain, *bias],
            Op::ScaleRows { x, scale } => vec![*x, *scale],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

pub(crate) struct Node<T: Element> {
    pub(crate) op: Op<T>,
    pub(crate) shape: Vec<usize>,
}

/// Computation graph in topological order: a node only references nodes
/// created before it.
pub struct Graph<T: Element = f32> {
    pub(crate) nodes: Vec<Node<T>>,
    inputs: HashMap<String, NodeId>,
    outputs: Vec<(String, NodeId)>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("outputs", &self.outputs)
            .finish()
    }
}

fn is_matrix(s: &[usize]) -> bool {
    s.len() == 2
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            inputs: HashMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// `"node 3 (matmul)"`, for diagnostics.
    pub fn describe(&self, id: NodeId) -> String {
        format!("node {} ({})", id.0, self.nodes[id.0].op.name())
    }

    pub fn outputs(&self) -> &[(String, NodeId)] {
        &self.outputs
    }

    pub fn mark_output(&mut self, name: &str, id: NodeId) {
        self.outputs.push((name.to_string(), id));
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    fn next(&self) -> usize {
        self.nodes.len()
    }

    /// Named leaf. Declaring the same name twice returns the first node.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        if let Some(&id) = self.inputs.get(name) {
            return id;
        }
        let id = self.push(Op::Input(name.to_string()), shape.to_vec());
        self.inputs.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        let shape = t.shape().to_vec();
        self.push(Op::Const(t), shape)
    }

    fn same_shape(&mut self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(self.next(), op, sa, sb));
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    pub fn scale(&mut self, a: NodeId, by: f64) -> NodeId {
        let s = self.shape(a).to_vec();
        self.push(Op::Scale(a, T::of(by)), s)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if !is_matrix(&sa) || !is_matrix(&sb) || sa[1] != sb[0] {
            return Err(shape_err(
                self.next(),
                "matmul",
                format!(
                    "[m, k] x [k, n] with k = {}",
                    sa.get(1).copied().unwrap_or(0)
                ),
                (sa, sb),
            ));
        }
        Ok(self.push(Op::MatMul(a, b), vec![sa[0], sb[1]]))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if !is_matrix(&s) {
            return Err(shape_err(self.next(), "transpose", "[rows, cols]", s));
        }
        Ok(self.push(Op::Transpose(a), vec![s[1], s[0]]))
    }

    /// Concatenates matrices along `axis` (0 = stack rows, 1 = append columns).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let node = self.next();
        if parts.is_empty() || axis > 1 {
            return Err(shape_err(
                node,
                "concat",
                "non-empty parts, axis 0 or 1",
                (parts.len(), axis),
            ));
        }
        let first = self.shape(parts[0]).to_vec();
        if !is_matrix(&first) {
            return Err(shape_err(node, "concat", "[rows, cols]", first));
        }
        let other = 1 - axis;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if !is_matrix(s) || s[other] != first[other] {
                return Err(shape_err(node, "concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            shape,
        ))
    }

    /// Row lookup: `out[i] = table[rows[i]]` (embedding lookup).
    pub fn gather(&mut self, table: NodeId, rows: &[usize]) -> Result<NodeId> {
        let s = self.shape(table).to_vec();
        if !is_matrix(&s) {
            return Err(shape_err(self.next(), "gather", "[vocab, dim]", s));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= s[0]) {
            return Err(GradError::Index {
                what: "gather table",
                index: bad,
                size: s[0],
            });
        }
        Ok(self.push(
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            vec![rows.len(), s[1]],
        ))
    }

    fn unary(&mut self, a: NodeId, make: fn(NodeId) -> Op<T>) -> NodeId {
        let s = self.shape(a).to_vec();
        self.push(make(a), s)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Log)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), vec![])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a), vec![])
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if !is_matrix(&s) {
            return Err(shape_err(self.next(), "row-softmax", "[rows, cols]", s));
        }
        Ok(self.push(Op::SoftmaxRows(a), s))
    }

    /// Mean cross-entropy of `logits` rows against class `targets`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let s = self.shape(logits).to_vec();
        if !is_matrix(&s) || s[0] != targets.len() || s[0] == 0 {
            return Err(shape_err(
                self.next(),
                "cross-entropy",
                format!("[{}, classes]", targets.len()),
                s,
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= s[1]) {
            return Err(GradError::Index {
                what: "class targets",
                index: bad,
                size: s[1],
            });
        }
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            vec![],
        ))
    }

    /// Per-row normalization with `[1, d]` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if !is_matrix(&s) {
            return Err(shape_err(self.next(), "layer-norm", "[rows, d]", s));
        }
        for p in [gain, bias] {
            let sp = self.shape(p);
            if sp != [1, s[1]] {
                return Err(shape_err(self.next(), "layer-norm", [1, s[1]], sp));
            }
        }
        Ok(self.push(Op::LayerNorm { x, gain, bias }, s))
    }

    /// `out[i, j] = x[i, j] * scale[i]` with `scale` shaped `[rows, 1]`.
    pub fn scale_rows(&mut self, x: NodeId, scale: NodeId) -> Result<NodeId> {
        let (sx, ss) = (self.shape(x).to_vec(), self.shape(scale).to_vec());
        if !is_matrix(&sx) || ss != [sx[0], 1] {
            return Err(shape_err(
                self.next(),
                "scale-rows",
                [sx.first().copied().unwrap_or(0), 1],
                ss,
            ));
        }
        Ok(self.push(Op::ScaleRows { x, scale }, sx))
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp<T>>, inputs: &[NodeId]) -> Result<NodeId> {
        let shapes: Vec<&[usize]> = inputs.iter().map(|&i| self.shape(i)).collect();
        let out = op.output_shape(&shapes)?;
        Ok(self.push(
            Op::Custom {
                op,
                inputs: inputs.to_vec(),
            },
            out,
        ))
    }

    // Composite helpers built only from the primitives above.

    /// Tiles a `[1, d]` row into `[rows, d]` via an explicit ones-column matmul.
    pub fn repeat_row(&mut self, row: NodeId, rows: usize) -> Result<NodeId> {
        let ones = self.constant(Tensor::filled(&[rows, 1], T::one()));
        self.matmul(ones, row)
    }

    /// `x W + b` where `b` is a `[1, out]` row.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        let rows = self.shape(x)[0];
        let bb = self.repeat_row(b, rows)?;
        self.add(xw, bb)
    }

    /// Squared Euclidean distance between two same-shape nodes.
    pub fn squared_distance(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.sum(sq))
    }

    /// Selects a single row as a `[1, cols]` matrix.
    pub fn row(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if !is_matrix(&s) || index >= s[0] {
            return Err(shape_err(
                self.next(),
                "row",
                format!("row {index} of a matrix"),
                s,
            ));
        }
        let mut sel = Tensor::zeros(&[1, s[0]]);
        sel.data_mut()[index] = T::one();
        let sel = self.constant(sel);
        self.matmul(sel, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_mismatch_names_node_and_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.input("a", &[2, 3]);
        let b = g.input("b", &[2, 3]);
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("node 2"), "{err}");
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn input_names_are_deduplicated() {
        let mut g = Graph::<f32>::new();
        let a = g.input("w", &[2, 2]);
        let b = g.input("w", &[2, 2]);
        assert_eq!(a, b);
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn gather_rejects_out_of_range_rows() {
        let mut g = Graph::<f32>::new();
        let t = g.input("emb", &[4, 3]);
        assert!(g.gather(t, &[0, 4]).is_err());
        let r = g.gather(t, &[3, 0, 3]).unwrap();
        assert_eq!(g.shape(r), &[3, 3]);
    }

    #[test]
    fn node_order_is_topological() {
        let mut g = Graph::<f32>::new();
        let a = g.input("a", &[2, 2]);
        let b = g.tanh(a);
        let c = g.matmul(a, b).unwrap();
        let _ = g.sum(c);
        for (i, node) in g.nodes.iter().enumerate() {
            assert!(node.op.inputs().iter().all(|p| p.0 < i));
        }
    }
}
