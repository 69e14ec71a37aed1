//! A minimalist machine learning library: tensors on swappable backends,
//! pluggable memory managers, tape-based autograd, layers, optimizers,
//! datasets and in-process collectives.
//!
//! ```
//! use kindling::autograd::Variable;
//! use kindling::Tensor;
//!
//! let x = Variable::new(Tensor::from_vec(vec![2.0f64], &[1]).unwrap(), true);
//! x.mul(&x).unwrap().sum_all().unwrap().backward(None, false).unwrap();
//! assert_eq!(x.grad().unwrap().to_vec::<f64>().unwrap(), vec![4.0]);
//! ```

pub mod autograd;
pub mod backend;
pub mod data;
pub mod distributed;
pub mod dtype;
pub mod error;
pub mod kernels;
pub mod memory;
pub mod nn;
pub mod op;
pub mod optim;
pub mod shape;
pub mod tensor;
pub mod testing;

pub use dtype::DType;
pub use error::{Error, Result};
pub use shape::Shape;
pub use tensor::{Factory, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/autograd.md")]
    mod autograd {}
    #[doc = include_str!("../../../book/src/modules.md")]
    mod modules {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/memory.md")]
    mod memory {}
    #[doc = include_str!("../../../book/src/distributed.md")]
    mod distributed {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
