//! Analytic gradients (f32) against central finite differences taken on the
//! same forward graph evaluated in f64. Shared by this crate's tests and the
//! workspace acceptance suite.

use crest_grad::{evaluate, gradients, Element, Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

const H: f64 = 1e-3;
pub const TOL: f64 = 1e-3;

trait Case {
    fn build<T: Element>(g: &mut Graph<T>) -> NodeId;
}

type Inputs = Vec<(&'static str, Tensor<f64>, bool)>;

fn bind<T: Element>(inputs: &Inputs) -> HashMap<String, Tensor<T>> {
    inputs
        .iter()
        .map(|(n, t, grad)| {
            let mut c: Tensor<T> = t.cast();
            c.set_requires_grad(*grad);
            (n.to_string(), c)
        })
        .collect()
}

fn loss64<C: Case>(inputs: &Inputs) -> f64 {
    let mut g = Graph::<f64>::new();
    let out = C::build(&mut g);
    evaluate(&g, &bind::<f64>(inputs)).unwrap().scalar(out)
}

/// Max relative error over up to `samples` coordinates per gradient input.
fn check<C: Case>(mut inputs: Inputs, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut g = Graph::<f32>::new();
    let out = C::build(&mut g);
    let vals = evaluate(&g, &bind::<f32>(&inputs)).unwrap();
    let grads = gradients(&g, &vals, out).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for k in 0..inputs.len() {
        if !inputs[k].2 {
            continue;
        }
        let name = inputs[k].0;
        let analytic = grads.get(name).expect("gradient present").clone();
        let n = inputs[k].1.numel();
        let coords: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            (0..samples).map(|_| rng.gen_range(0..n)).collect()
        };
        for i in coords {
            let orig = inputs[k].1.data()[i];
            inputs[k].1.data_mut()[i] = orig + H;
            let up = loss64::<C>(&inputs);
            inputs[k].1.data_mut()[i] = orig - H;
            let down = loss64::<C>(&inputs);
            inputs[k].1.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let a = analytic.data()[i] as f64;
            if numeric.abs().max(a.abs()) <= 1e-6 {
                continue;
            }
            checked += 1;
            let rel = (a - numeric).abs() / numeric.abs().max(a.abs());
            worst = worst.max(rel);
        }
    }
    assert!(checked > 0, "no coordinates checked");
    worst
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Entries bounded away from zero, for kinks (relu) and poles (log).
fn rand_away(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces any output to a scalar through a fixed random weighting.
fn project<T: Element>(g: &mut Graph<T>, out: NodeId) -> NodeId {
    let shape = g.shape(out).to_vec();
    let w = g.input("proj", &shape);
    let m = g.mul(out, w).unwrap();
    g.sum(m)
}

fn with_proj(mut inputs: Inputs, rng: &mut ChaCha8Rng, shape: &[usize]) -> Inputs {
    inputs.push(("proj", rand_t(rng, shape, -1.0, 1.0), false));
    inputs
}

macro_rules! case {
    ($name:ident, |$g:ident| $body:block) => {
        struct $name;
        impl Case for $name {
            fn build<T: Element>($g: &mut Graph<T>) -> NodeId $body
        }
    };
}

case!(AddCase, |g| {
    let a = g.input("a", &[3, 4]);
    let b = g.input("b", &[3, 4]);
    let o = g.add(a, b).unwrap();
    project(g, o)
});
case!(SubCase, |g| {
    let a = g.input("a", &[3, 4]);
    let b = g.input("b", &[3, 4]);
    let o = g.sub(a, b).unwrap();
    project(g, o)
});
case!(MulCase, |g| {
    let a = g.input("a", &[3, 4]);
    let b = g.input("b", &[3, 4]);
    let o = g.mul(a, b).unwrap();
    project(g, o)
});
case!(ScaleCase, |g| {
    let a = g.input("a", &[3, 4]);
    let o = g.scale(a, -0.7);
    project(g, o)
});
case!(MatMulCase, |g| {
    let a = g.input("a", &[3, 4]);
    let b = g.input("b", &[4, 2]);
    let o = g.matmul(a, b).unwrap();
    project(g, o)
});
case!(TransposeCase, |g| {
    let a = g.input("a", &[3, 4]);
    let o = g.transpose(a).unwrap();
    project(g, o)
});
case!(ConcatRowsCase, |g| {
    let a = g.input("a", &[3, 4]);
    let b = g.input("b", &[2, 4]);
    let o = g.concat(&[a, b], 0).unwrap();
    project(g, o)
});
case!(ConcatColsCase, |g| {
    let a = g.input("a", &[3, 4]);
    let b = g.input("b", &[3, 2]);
    let o = g.concat(&[a, b, a], 1).unwrap();
    project(g, o)
});
case!(GatherCase, |g| {
    let a = g.input("a", &[5, 3]);
    let o = g.gather(a, &[4, 0, 4, 2]).unwrap();
    project(g, o)
});
case!(TanhCase, |g| {
    let a = g.input("a", &[3, 4]);
    let o = g.tanh(a);
    project(g, o)
});
case!(ReluCase, |g| {
    let a = g.input("a", &[3, 4]);
    let o = g.relu(a);
    project(g, o)
});
case!(SigmoidCase, |g| {
    let a = g.input("a", &[3, 4]);
    let o = g.sigmoid(a);
    project(g, o)
});
case!(ExpCase, |g| {
    let a = g.input("a", &[3, 4]);
    let o = g.exp(a);
    project(g, o)
});
case!(LogCase, |g| {
    let a = g.input("a", &[3, 4]);
    let sq = g.mul(a, a).unwrap();
    let o = g.log(sq);
    project(g, o)
});
case!(SumCase, |g| {
    let a = g.input("a", &[3, 4]);
    let w = g.input("proj", &[3, 4]);
    let m = g.mul(a, w).unwrap();
    let s = g.sum(m);
    g.mul(s, s).unwrap()
});
case!(MeanCase, |g| {
    let a = g.input("a", &[3, 4]);
    let w = g.input("proj", &[3, 4]);
    let m = g.mul(a, w).unwrap();
    let s = g.mean(m);
    g.mul(s, s).unwrap()
});
case!(SoftmaxCase, |g| {
    let a = g.input("a", &[3, 4]);
    let o = g.softmax_rows(a).unwrap();
    project(g, o)
});
case!(CrossEntropyCase, |g| {
    let a = g.input("a", &[3, 4]);
    g.cross_entropy(a, &[2, 0, 3]).unwrap()
});
case!(LayerNormCase, |g| {
    let a = g.input("a", &[3, 4]);
    let gain = g.input("gain", &[1, 4]);
    let bias = g.input("bias", &[1, 4]);
    let o = g.layer_norm(a, gain, bias).unwrap();
    project(g, o)
});
case!(ScaleRowsCase, |g| {
    let a = g.input("a", &[3, 4]);
    let s = g.input("b", &[3, 1]);
    let o = g.scale_rows(a, s).unwrap();
    project(g, o)
});

case!(LinearCase, |g| {
    let a = g.input("a", &[3, 4]);
    let w = g.input("w", &[4, 2]);
    let b = g.input("b", &[1, 2]);
    let o = g.linear(a, w, b).unwrap();
    project(g, o)
});
case!(RepeatRowCase, |g| {
    let a = g.input("a", &[1, 4]);
    let o = g.repeat_row(a, 3).unwrap();
    project(g, o)
});
case!(SquaredDistanceCase, |g| {
    let a = g.input("a", &[3, 4]);
    let b = g.input("b", &[3, 4]);
    g.squared_distance(a, b).unwrap()
});
case!(RowCase, |g| {
    let a = g.input("a", &[3, 4]);
    let o = g.row(a, 1).unwrap();
    project(g, o)
});

fn std_inputs(rng: &mut ChaCha8Rng, a: &[usize], b: Option<&[usize]>, out: &[usize]) -> Inputs {
    let mut v: Inputs = vec![("a", rand_t(rng, a, -1.5, 1.5), true)];
    if let Some(b) = b {
        v.push(("b", rand_t(rng, b, -1.5, 1.5), true));
    }
    with_proj(v, rng, out)
}

// Three-layer tanh/relu MLP with a softmax cross-entropy head.
case!(MlpCase, |g| {
    let x = g.input("x", &[6, 5]);
    let w1 = g.input("w1", &[5, 8]);
    let b1 = g.input("b1", &[1, 8]);
    let w2 = g.input("w2", &[8, 8]);
    let b2 = g.input("b2", &[1, 8]);
    let w3 = g.input("w3", &[8, 3]);
    let b3 = g.input("b3", &[1, 3]);
    let h1 = g.linear(x, w1, b1).unwrap();
    let h1 = g.tanh(h1);
    let h2 = g.linear(h1, w2, b2).unwrap();
    let h2 = g.sigmoid(h2);
    let o = g.linear(h2, w3, b3).unwrap();
    g.cross_entropy(o, &[0, 1, 2, 2, 1, 0]).unwrap()
});

// Pre-norm attention block with a pooled readout.
case!(AttentionCase, |g| {
    let x = g.input("x", &[5, 4]);
    let gain = g.input("gain", &[1, 4]);
    let bias = g.input("bias", &[1, 4]);
    let wq = g.input("wq", &[4, 4]);
    let wk = g.input("wk", &[4, 4]);
    let wv = g.input("wv", &[4, 4]);
    let n = g.layer_norm(x, gain, bias).unwrap();
    let q = g.matmul(n, wq).unwrap();
    let k = g.matmul(n, wk).unwrap();
    let v = g.matmul(n, wv).unwrap();
    let kt = g.transpose(k).unwrap();
    let s = g.matmul(q, kt).unwrap();
    let s = g.scale(s, 0.5);
    let p = g.softmax_rows(s).unwrap();
    let o = g.matmul(p, v).unwrap();
    let r = g.add(x, o).unwrap();
    project(g, r)
});

// Masked embedding pooling, mirroring the rationale predictor.
case!(PoolingCase, |g| {
    let emb = g.input("emb", &[7, 4]);
    let mask = g.input("mask", &[5, 1]);
    let w = g.input("w", &[4, 1]);
    let cls = g.input("cls", &[4, 2]);
    let cb = g.input("cb", &[1, 2]);
    let e = g.gather(emb, &[1, 3, 3, 6, 0]).unwrap();
    let e = g.scale_rows(e, mask).unwrap();
    let a = g.matmul(e, w).unwrap();
    let at = g.transpose(a).unwrap();
    let p = g.softmax_rows(at).unwrap();
    let pooled = g.matmul(p, e).unwrap();
    let logits = g.linear(pooled, cls, cb).unwrap();
    g.cross_entropy(logits, &[1]).unwrap()
});

// Squared-distance penalty plus exp/log chain.
case!(PenaltyCase, |g| {
    let a = g.input("a", &[4, 1]);
    let b = g.input("b", &[4, 1]);
    let d = g.squared_distance(a, b).unwrap();
    let e = g.exp(a);
    let l = g.log(e);
    let s = g.mean(l);
    let t = g.mul(s, d).unwrap();
    let c = g.concat(&[a, b], 1).unwrap();
    let c = g.relu(c);
    let cs = g.sum(c);
    g.add(t, cs).unwrap()
});

// Row selection and concatenation feeding a second matmul.
case!(RowSelectCase, |g| {
    let a = g.input("a", &[4, 3]);
    let b = g.input("b", &[3, 3]);
    let r0 = g.row(a, 0).unwrap();
    let r3 = g.row(a, 3).unwrap();
    let st = g.concat(&[r0, r3], 0).unwrap();
    let m = g.matmul(st, b).unwrap();
    let t = g.tanh(m);
    project(g, t)
});

/// Worst relative error per primitive.
pub fn primitive_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let r = &mut rng;
    let mut results: Vec<(&str, f64)> = Vec::new();
    let i = std_inputs(r, &[3, 4], Some(&[3, 4]), &[3, 4]);
    results.push(("add", check::<AddCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], Some(&[3, 4]), &[3, 4]);
    results.push(("sub", check::<SubCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], Some(&[3, 4]), &[3, 4]);
    results.push(("mul", check::<MulCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], None, &[3, 4]);
    results.push(("scale", check::<ScaleCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], Some(&[4, 2]), &[3, 2]);
    results.push(("matmul", check::<MatMulCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], None, &[4, 3]);
    results.push(("transpose", check::<TransposeCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], Some(&[2, 4]), &[5, 4]);
    results.push(("concat-rows", check::<ConcatRowsCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], Some(&[3, 2]), &[3, 10]);
    results.push(("concat-cols", check::<ConcatColsCase>(i, 64, r)));
    let i = std_inputs(r, &[5, 3], None, &[4, 3]);
    results.push(("gather", check::<GatherCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], None, &[3, 4]);
    results.push(("tanh", check::<TanhCase>(i, 64, r)));
    let i = with_proj(vec![("a", rand_away(r, &[3, 4]), true)], r, &[3, 4]);
    results.push(("relu", check::<ReluCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], None, &[3, 4]);
    results.push(("sigmoid", check::<SigmoidCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], None, &[3, 4]);
    results.push(("exp", check::<ExpCase>(i, 64, r)));
    let i = with_proj(vec![("a", rand_away(r, &[3, 4]), true)], r, &[3, 4]);
    results.push(("log", check::<LogCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], None, &[3, 4]);
    results.push(("sum", check::<SumCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], None, &[3, 4]);
    results.push(("mean", check::<MeanCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], None, &[3, 4]);
    results.push(("row-softmax", check::<SoftmaxCase>(i, 64, r)));
    let i: Inputs = vec![("a", rand_t(r, &[3, 4], -2.0, 2.0), true)];
    results.push(("cross-entropy", check::<CrossEntropyCase>(i, 64, r)));
    let i = with_proj(
        vec![
            ("a", rand_t(r, &[3, 4], -1.5, 1.5), true),
            ("gain", rand_t(r, &[1, 4], 0.5, 1.5), true),
            ("bias", rand_t(r, &[1, 4], -0.5, 0.5), true),
        ],
        r,
        &[3, 4],
    );
    results.push(("layer-norm", check::<LayerNormCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], Some(&[3, 1]), &[3, 4]);
    results.push(("scale-rows", check::<ScaleRowsCase>(i, 64, r)));

    let i = with_proj(
        vec![
            ("a", rand_t(r, &[3, 4], -1.5, 1.5), true),
            ("w", rand_t(r, &[4, 2], -1.0, 1.0), true),
            ("b", rand_t(r, &[1, 2], -0.5, 0.5), true),
        ],
        r,
        &[3, 2],
    );
    results.push(("linear", check::<LinearCase>(i, 64, r)));
    let i = std_inputs(r, &[1, 4], None, &[3, 4]);
    results.push(("repeat-row", check::<RepeatRowCase>(i, 64, r)));
    let i: Inputs = vec![("a", rand_t(r, &[3, 4], -1.5, 1.5), true), ("b", rand_t(r, &[3, 4], -1.5, 1.5), true)];
    results.push(("sq-distance", check::<SquaredDistanceCase>(i, 64, r)));
    let i = std_inputs(r, &[3, 4], None, &[1, 4]);
    results.push(("row", check::<RowCase>(i, 64, r)));
    results
}

/// Worst relative error per composite graph.
pub fn composite_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r = &mut rng;
    let mut results = Vec::new();

    let i: Inputs = vec![
        ("x", rand_t(r, &[6, 5], -1.0, 1.0), false),
        ("w1", rand_t(r, &[5, 8], -0.8, 0.8), true),
        ("b1", rand_t(r, &[1, 8], -0.2, 0.2), true),
        ("w2", rand_t(r, &[8, 8], -0.8, 0.8), true),
        ("b2", rand_t(r, &[1, 8], -0.2, 0.2), true),
        ("w3", rand_t(r, &[8, 3], -0.8, 0.8), true),
        ("b3", rand_t(r, &[1, 3], -0.2, 0.2), true),
    ];
    results.push(("3-layer mlp", check::<MlpCase>(i, 64, r)));

    let i = with_proj(
        vec![
            ("x", rand_t(r, &[5, 4], -1.0, 1.0), true),
            ("gain", rand_t(r, &[1, 4], 0.5, 1.5), true),
            ("bias", rand_t(r, &[1, 4], -0.3, 0.3), true),
            ("wq", rand_t(r, &[4, 4], -0.8, 0.8), true),
            ("wk", rand_t(r, &[4, 4], -0.8, 0.8), true),
            ("wv", rand_t(r, &[4, 4], -0.8, 0.8), true),
        ],
        r,
        &[5, 4],
    );
    results.push(("attention", check::<AttentionCase>(i, 64, r)));

    let i: Inputs = vec![
        ("emb", rand_t(r, &[7, 4], -1.0, 1.0), true),
        ("mask", rand_t(r, &[5, 1], 0.0, 1.0), true),
        ("w", rand_t(r, &[4, 1], -1.0, 1.0), true),
        ("cls", rand_t(r, &[4, 2], -1.0, 1.0), true),
        ("cb", rand_t(r, &[1, 2], -0.2, 0.2), true),
    ];
    results.push(("masked pooling", check::<PoolingCase>(i, 64, r)));

    let i: Inputs = vec![
        ("a", rand_away(r, &[4, 1]), true),
        ("b", rand_away(r, &[4, 1]), true),
    ];
    results.push(("penalty", check::<PenaltyCase>(i, 64, r)));

    let i = std_inputs(r, &[4, 3], Some(&[3, 3]), &[2, 3]);
    results.push(("row select", check::<RowSelectCase>(i, 64, r)));

    results
}
