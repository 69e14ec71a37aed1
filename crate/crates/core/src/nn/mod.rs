//! Neural-network building blocks.
//!
//! Everything trainable implements [`Module`]: it exposes its parameters in
//! a stable order, forwards a list of [`Variable`]s and can describe itself
//! as a serializable [`Record`].

mod layers;
mod loss;
mod meter;
pub mod models;
mod serialize;

use std::fmt;

use crate::autograd::Variable;
use crate::error::{Error, Result};

pub use layers::{BatchNorm2d, Conv2D, Dropout, Linear, LogSoftmax, MaxPool2D, ReLU, View};
pub use loss::{categorical_cross_entropy, mse, Reduction};
pub use meter::{AccuracyMeter, AverageMeter};
pub use serialize::{deserialize, load_record, register_module, serialize, Checkpoint, Loader, Record, MAGIC, VERSION};

pub trait Module: Send + Sync {
    /// Registry tag used by serialization.
    fn kind(&self) -> &'static str;

    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>>;

    /// Trainable parameters, depth-first for nested modules.
    fn params(&self) -> Vec<Variable> {
        Vec::new()
    }

    fn set_training(&mut self, _training: bool) {}

    fn to_record(&self) -> Result<Record>;

    /// Forwards a single input expecting a single output.
    fn call(&self, x: &Variable) -> Result<Variable> {
        let mut out = self.forward(std::slice::from_ref(x))?;
        if out.len() != 1 {
            return Err(Error::shape(format!(
                "{} produced {} outputs, expected 1",
                self.kind(),
                out.len()
            )));
        }
        Ok(out.remove(0))
    }

    fn train(&mut self) {
        self.set_training(true);
    }

    fn eval(&mut self) {
        self.set_training(false);
    }

    fn zero_grad(&self) {
        for p in self.params() {
            p.zero_grad();
        }
    }
}

pub(crate) fn single<'a>(kind: &str, inputs: &'a [Variable]) -> Result<&'a Variable> {
    match inputs {
        [x] => Ok(x),
        _ => Err(Error::shape(format!("{kind} takes 1 input, got {}", inputs.len()))),
    }
}

/// Chains modules: the output of child `i` feeds child `i + 1`.
#[derive(Default)]
pub struct Sequential {
    children: Vec<Box<dyn Module>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(mut self, module: impl Module + 'static) -> Self {
        self.children.push(Box::new(module));
        self
    }

    pub fn push(&mut self, module: Box<dyn Module>) {
        self.children.push(module);
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn children(&self) -> &[Box<dyn Module>] {
        &self.children
    }

    pub(crate) fn load(r: &Record) -> Result<Box<dyn Module>> {
        let children = r.children.iter().map(load_record).collect::<Result<_>>()?;
        Ok(Box::new(Sequential { children }))
    }
}

impl fmt::Debug for Sequential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.children.iter().map(|c| c.kind())).finish()
    }
}

impl Module for Sequential {
    fn kind(&self) -> &'static str {
        "sequential"
    }

    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        let mut xs = inputs.to_vec();
        for child in &self.children {
            xs = child.forward(&xs)?;
        }
        Ok(xs)
    }

    fn params(&self) -> Vec<Variable> {
        self.children.iter().flat_map(|c| c.params()).collect()
    }

    fn set_training(&mut self, training: bool) {
        for c in &mut self.children {
            c.set_training(training);
        }
    }

    fn to_record(&self) -> Result<Record> {
        let mut r = Record::new(self.kind());
        r.children = self.children.iter().map(|c| c.to_record()).collect::<Result<_>>()?;
        Ok(r)
    }
}
