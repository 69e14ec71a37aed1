//! First-order optimizers over [`Variable`] parameter lists.
//!
//! `step` reads gradients and writes parameter values; nothing else is
//! touched. Gradients accumulate until [`Optimizer::zero_grad`].

use crate::autograd::Variable;
use crate::error::{Error, Result};
use crate::nn::Record;
use crate::tensor::Tensor;

pub trait Optimizer {
    fn params(&self) -> &[Variable];

    fn step(&mut self) -> Result<()>;

    fn zero_grad(&self) {
        for p in self.params() {
            p.zero_grad();
        }
    }

    fn learning_rate(&self) -> f64;

    fn set_learning_rate(&mut self, lr: f64);

    /// Hyperparameters and per-parameter buffers, for checkpoints.
    fn state(&self) -> Result<Record>;

    fn load_state(&mut self, state: &Record) -> Result<()>;
}

/// All gradients, or the index of the first parameter without one.
fn gradients(params: &[Variable]) -> Result<Vec<Tensor>> {
    params
        .iter()
        .enumerate()
        .map(|(i, p)| p.grad().ok_or(Error::MissingGradient(i)))
        .collect()
}

fn state_error(message: impl Into<String>) -> Error {
    Error::Format {
        offset: 0,
        message: message.into(),
    }
}

fn expect_kind(state: &Record, kind: &str, params: &[Variable]) -> Result<()> {
    if state.kind != kind {
        return Err(state_error(format!(
            "expected `{kind}` optimizer state, found `{}`",
            state.kind
        )));
    }
    if state.usize(0)? != params.len() {
        return Err(state_error(format!(
            "state holds {} parameters, optimizer has {}",
            state.int(0)?,
            params.len()
        )));
    }
    Ok(())
}

fn restore_buffer(state: &Record, i: usize, like: &Variable) -> Result<Tensor> {
    let t = Tensor::on(like.tensor().backend()).from_host(state.tensor(i)?)?;
    if t.shape() != &like.shape() {
        return Err(state_error(format!(
            "state buffer {i} has shape {}, parameter has {}",
            t.shape(),
            like.shape()
        )));
    }
    Ok(t)
}

/// Stochastic gradient descent with optional momentum and L2 weight decay:
/// `g = grad + λθ`, `v = μv + g`, `θ = θ - lr·v`.
#[derive(Debug)]
pub struct Sgd {
    params: Vec<Variable>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(params: Vec<Variable>, lr: f64) -> Self {
        let n = params.len();
        Sgd {
            params,
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
            velocity: vec![None; n],
        }
    }

    pub fn momentum(mut self, mu: f64) -> Self {
        self.momentum = mu;
        self
    }

    pub fn weight_decay(mut self, lambda: f64) -> Self {
        self.weight_decay = lambda;
        self
    }
}

impl Optimizer for Sgd {
    fn params(&self) -> &[Variable] {
        &self.params
    }

    fn step(&mut self) -> Result<()> {
        let grads = gradients(&self.params)?;
        for (i, (p, g)) in self.params.iter().zip(grads).enumerate() {
            let theta = p.tensor();
            let g = if self.weight_decay != 0.0 {
                g.add(&theta.mul_scalar(self.weight_decay)?)?
            } else {
                g
            };
            let update = if self.momentum != 0.0 {
                let v = match self.velocity[i].take() {
                    Some(v) => v.mul_scalar(self.momentum)?.add(&g)?,
                    None => g,
                };
                self.velocity[i] = Some(v.clone());
                v
            } else {
                g
            };
            p.set_data(theta.sub(&update.mul_scalar(self.lr)?)?);
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn state(&self) -> Result<Record> {
        let mut r = Record::new("sgd");
        r.ints.push(self.params.len() as i64);
        r.ints.extend(self.velocity.iter().map(|v| v.is_some() as i64));
        r.floats = vec![self.lr, self.momentum, self.weight_decay];
        for v in self.velocity.iter().flatten() {
            r.tensors.push(v.to_host()?);
        }
        Ok(r)
    }

    fn load_state(&mut self, state: &Record) -> Result<()> {
        expect_kind(state, "sgd", &self.params)?;
        let mut velocity = Vec::with_capacity(self.params.len());
        let mut next = 0;
        for (i, p) in self.params.iter().enumerate() {
            if state.int(1 + i)? != 0 {
                velocity.push(Some(restore_buffer(state, next, p)?));
                next += 1;
            } else {
                velocity.push(None);
            }
        }
        self.lr = state.float(0)?;
        self.momentum = state.float(1)?;
        self.weight_decay = state.float(2)?;
        self.velocity = velocity;
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug)]
pub struct Adam {
    params: Vec<Variable>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl Adam {
    pub fn new(params: Vec<Variable>, lr: f64) -> Self {
        let n = params.len();
        Adam {
            params,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            moments: vec![None; n],
        }
    }

    pub fn betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn weight_decay(mut self, lambda: f64) -> Self {
        self.weight_decay = lambda;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

impl Optimizer for Adam {
    fn params(&self) -> &[Variable] {
        &self.params
    }

    fn step(&mut self) -> Result<()> {
        let grads = gradients(&self.params)?;
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (i, (p, g)) in self.params.iter().zip(grads).enumerate() {
            let theta = p.tensor();
            let g = if self.weight_decay != 0.0 {
                g.add(&theta.mul_scalar(self.weight_decay)?)?
            } else {
                g
            };
            let (m, v) = match self.moments[i].take() {
                Some(mv) => mv,
                None => (g.zeros_like()?, g.zeros_like()?),
            };
            let m = m.mul_scalar(b1)?.add(&g.mul_scalar(1.0 - b1)?)?;
            let v = v.mul_scalar(b2)?.add(&g.mul(&g)?.mul_scalar(1.0 - b2)?)?;
            let m_hat = m.mul_scalar(1.0 / c1)?;
            let v_hat = v.mul_scalar(1.0 / c2)?;
            let update = m_hat.div(&v_hat.sqrt()?.add_scalar(self.eps)?)?;
            p.set_data(theta.sub(&update.mul_scalar(self.lr)?)?);
            self.moments[i] = Some((m, v));
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn state(&self) -> Result<Record> {
        let mut r = Record::new("adam");
        r.ints.push(self.params.len() as i64);
        r.ints.push(self.step as i64);
        r.ints.extend(self.moments.iter().map(|m| m.is_some() as i64));
        r.floats = vec![self.lr, self.beta1, self.beta2, self.eps, self.weight_decay];
        for (m, v) in self.moments.iter().flatten() {
            r.tensors.push(m.to_host()?);
            r.tensors.push(v.to_host()?);
        }
        Ok(r)
    }

    fn load_state(&mut self, state: &Record) -> Result<()> {
        expect_kind(state, "adam", &self.params)?;
        let mut moments = Vec::with_capacity(self.params.len());
        let mut next = 0;
        for (i, p) in self.params.iter().enumerate() {
            if state.int(2 + i)? != 0 {
                let m = restore_buffer(state, next, p)?;
                let v = restore_buffer(state, next + 1, p)?;
                moments.push(Some((m, v)));
                next += 2;
            } else {
                moments.push(None);
            }
        }
        self.step = state.int(1)? as u64;
        self.lr = state.float(0)?;
        self.beta1 = state.float(1)?;
        self.beta2 = state.float(2)?;
        self.eps = state.float(3)?;
        self.weight_decay = state.float(4)?;
        self.moments = moments;
        Ok(())
    }
}
