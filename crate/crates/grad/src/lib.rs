//! Reverse-mode automatic differentiation over dense row-major arrays.
//!
//! A [`Graph`] is built symbolically: every builder call appends a node,
//! infers its shape and rejects shape mismatches immediately. Leaves are
//! either named inputs (bound at evaluation time through [`Bindings`]) or
//! constants. [`evaluate`] runs the forward pass and [`gradients`] replays
//! the node list in reverse.
//!
//! ```
//! use crest_grad::{evaluate, gradients, Graph, Tensor};
//! use std::collections::HashMap;
//!
//! let mut g = Graph::<f32>::new();
//! let x = g.input("x", &[1, 2]);
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//!
//! let mut inputs = HashMap::new();
//! inputs.insert("x".to_string(), Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap().requiring_grad());
//! let values = evaluate(&g, &inputs).unwrap();
//! assert_eq!(values.scalar(loss), 5.0);
//! let grads = gradients(&g, &values, loss).unwrap();
//! assert_eq!(grads.get("x").unwrap().data(), &[2.0, 4.0]);
//! ```

mod error;
mod exec;
mod graph;
mod optim;
mod params;
mod tensor;

pub use error::{GradError, Result};
pub use exec::{evaluate, gradients, Bindings, Gradients, Values};
pub use graph::{CustomOp, Graph, NodeId};
pub use optim::{adamw_update, AdamWConfig, OptimizerState};
pub use params::ParamStore;
pub use tensor::{Element, Tensor};
