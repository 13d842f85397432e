//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Build a [`Tape`], record inputs with [`Tape::leaf`] (or
//! [`Tape::constant`] for values that need no gradient), compose
//! primitives, then call [`Tape::backward`] with seed gradients on any
//! recorded outputs:
//!
//! ```
//! use yieldnet_autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::default();
//! let x = tape.leaf(Tensor::vector(vec![1.0, -2.0]));
//! let w = tape.leaf(Tensor::new(&[1, 2], vec![3.0, 0.5]));
//! let b = tape.leaf(Tensor::vector(vec![0.25]));
//! let y = tape.affine(x, w, b);
//! let grads = tape.backward_scalar(y);
//! assert_eq!(tape.value(y).item(), 2.25);
//! assert_eq!(grads.get(x).unwrap().data(), &[3.0, 0.5]);
//! ```
//!
//! A tape created with [`GradMode::Guided`] differs only at ReLU nodes,
//! which then pass gradient where both the input and the upstream gradient
//! are positive.

mod gemm;
mod gradcheck;
mod lstm;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckError};
pub use lstm::{GateVars, LstmVars};
pub use ops::BatchStats;
pub use tape::{GradMode, Gradients, Tape, Var};
pub use tensor::Tensor;
