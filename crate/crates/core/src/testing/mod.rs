//! Randomized tensor programs for checking one backend against another.
//!
//! A [`Program`] is a list of inputs and steps, each step reading earlier
//! values by index. [`Program::run`] executes it on a backend and records
//! every value, or the first step that failed. [`gradient_cases`] lists
//! differentiable functions for finite-difference checks.

use std::fmt;

mod gradients;
pub use gradients::{gradient_cases, GradCase};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::BackendRef;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SHAPES: &[&[usize]] = &[&[3, 4], &[4, 3], &[4], &[3, 1], &[1, 4], &[2, 3, 4], &[]];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Neg(usize),
    Abs(usize),
    Exp(usize),
    Tanh(usize),
    Sigmoid(usize),
    Sin(usize),
    Relu(usize),
    SqrtAbs(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Maximum(usize, usize),
    Minimum(usize, usize),
    AddScalar(usize, f64),
    MulScalar(usize, f64),
    Sum(usize, usize),
    Max(usize, usize),
    Softmax(usize, usize),
    Matmul(usize, usize),
    Transpose(usize),
    Flatten(usize),
}

#[derive(Debug, Clone)]
pub struct Program {
    pub inputs: Vec<(Vec<usize>, Vec<f32>)>,
    pub steps: Vec<Step>,
}

/// Values of every input and step, or the first failing step.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub values: Vec<Vec<f64>>,
    pub failed_at: Option<(usize, Error)>,
}

impl Program {
    /// A program of `1..=max_steps` steps drawn from `seed`.
    pub fn random(seed: u64, max_steps: usize) -> Program {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (0..rng.gen_range(1..=3))
            .map(|_| {
                let dims = SHAPES.choose(&mut rng).expect("non-empty").to_vec();
                let n = dims.iter().product();
                let vals = (0..n).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
                (dims, vals)
            })
            .collect::<Vec<_>>();
        let mut steps = Vec::new();
        for s in 0..rng.gen_range(1..=max_steps.max(1)) {
            let avail = inputs.len() + s;
            let mut pick = || rng.gen_range(0..avail);
            let (a, b) = (pick(), pick());
            let axis = rng.gen_range(0..3);
            let c = rng.gen_range(-1.5..1.5);
            steps.push(match rng.gen_range(0..22) {
                0 => Step::Neg(a),
                1 => Step::Abs(a),
                2 => Step::Exp(a),
                3 => Step::Tanh(a),
                4 => Step::Sigmoid(a),
                5 => Step::Sin(a),
                6 => Step::Relu(a),
                7 => Step::SqrtAbs(a),
                8 => Step::Add(a, b),
                9 => Step::Sub(a, b),
                10 => Step::Mul(a, b),
                11 => Step::Div(a, b),
                12 => Step::Maximum(a, b),
                13 => Step::Minimum(a, b),
                14 => Step::AddScalar(a, c),
                15 => Step::MulScalar(a, c),
                16 => Step::Sum(a, axis),
                17 => Step::Max(a, axis),
                18 => Step::Softmax(a, axis),
                19 => Step::Matmul(a, b),
                20 => Step::Transpose(a),
                _ => Step::Flatten(a),
            });
        }
        Program { inputs, steps }
    }

    pub fn run(&self, backend: &BackendRef) -> Outcome {
        let f = Tensor::on(backend);
        let mut vals: Vec<Tensor> = Vec::new();
        for (dims, v) in &self.inputs {
            match f.from_vec(v.clone(), dims) {
                Ok(t) => vals.push(t),
                Err(e) => {
                    return Outcome {
                        values: Vec::new(),
                        failed_at: Some((0, e)),
                    }
                }
            }
        }
        let mut failed_at = None;
        for (i, step) in self.steps.iter().enumerate() {
            match apply(&vals, *step) {
                Ok(t) => vals.push(t),
                Err(e) => {
                    failed_at = Some((i, e));
                    break;
                }
            }
        }
        let values = vals.iter().map(|t| t.to_f64_vec()).collect::<Result<Vec<_>>>();
        match values {
            Ok(values) => Outcome { values, failed_at },
            Err(e) => Outcome {
                values: Vec::new(),
                failed_at: Some((usize::MAX, e)),
            },
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (dims, _)) in self.inputs.iter().enumerate() {
            writeln!(f, "v{i} = input {dims:?}")?;
        }
        for (i, s) in self.steps.iter().enumerate() {
            writeln!(f, "v{} = {s:?}", self.inputs.len() + i)?;
        }
        Ok(())
    }
}

fn apply(v: &[Tensor], step: Step) -> Result<Tensor> {
    match step {
        Step::Neg(a) => v[a].neg(),
        Step::Abs(a) => v[a].abs(),
        Step::Exp(a) => v[a].exp(),
        Step::Tanh(a) => v[a].tanh(),
        Step::Sigmoid(a) => v[a].sigmoid(),
        Step::Sin(a) => v[a].sin(),
        Step::Relu(a) => v[a].relu(),
        Step::SqrtAbs(a) => v[a].abs()?.sqrt(),
        Step::Add(a, b) => v[a].add(&v[b]),
        Step::Sub(a, b) => v[a].sub(&v[b]),
        Step::Mul(a, b) => v[a].mul(&v[b]),
        Step::Div(a, b) => v[a].div(&v[b]),
        Step::Maximum(a, b) => v[a].maximum(&v[b]),
        Step::Minimum(a, b) => v[a].minimum(&v[b]),
        Step::AddScalar(a, c) => v[a].add_scalar(c),
        Step::MulScalar(a, c) => v[a].mul_scalar(c),
        Step::Sum(a, axis) => v[a].sum(Some(axis), false),
        Step::Max(a, axis) => v[a].max(Some(axis), true),
        Step::Softmax(a, axis) => v[a].softmax(axis),
        Step::Matmul(a, b) => v[a].matmul(&v[b]),
        Step::Transpose(a) => v[a].transpose(),
        Step::Flatten(a) => v[a].reshape(&[v[a].numel()]),
    }
}

/// Elementwise `|x - y| <= rtol * max(|x|, |y|, 1)`; non-finite values must
/// match exactly (NaN matches NaN).
pub fn close(x: f64, y: f64, rtol: f64) -> bool {
    if x.is_nan() || y.is_nan() {
        return x.is_nan() && y.is_nan();
    }
    if !x.is_finite() || !y.is_finite() {
        return x == y;
    }
    (x - y).abs() <= rtol * x.abs().max(y.abs()).max(1.0)
}

/// Checks two outcomes agree: same failing step and error kind, and every
/// value within `rtol`.
pub fn compare(a: &Outcome, b: &Outcome, rtol: f64) -> std::result::Result<(), String> {
    match (&a.failed_at, &b.failed_at) {
        (None, None) => {}
        (Some((i, e)), Some((j, f))) if i == j && std::mem::discriminant(e) == std::mem::discriminant(f) => {}
        (x, y) => return Err(format!("failures differ: {x:?} vs {y:?}")),
    }
    if a.values.len() != b.values.len() {
        return Err(format!("{} values vs {}", a.values.len(), b.values.len()));
    }
    for (k, (u, w)) in a.values.iter().zip(&b.values).enumerate() {
        if u.len() != w.len() {
            return Err(format!("value {k}: {} elements vs {}", u.len(), w.len()));
        }
        if let Some(i) = (0..u.len()).find(|&i| !close(u[i], w[i], rtol)) {
            return Err(format!("value {k}[{i}]: {} vs {}", u[i], w[i]));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend;

    #[test]
    fn generation_is_seeded() {
        let a = Program::random(3, 20);
        let b = Program::random(3, 20);
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.inputs, b.inputs);
        assert!(!a.steps.is_empty() && a.steps.len() <= 20);
    }

    #[test]
    fn a_backend_agrees_with_itself() {
        let eager = backend::get("eager").unwrap();
        for seed in 0..10 {
            let p = Program::random(seed, 20);
            compare(&p.run(&eager), &p.run(&eager), 0.0).unwrap();
        }
    }

    #[test]
    fn closeness_rules() {
        assert!(close(f64::NAN, f64::NAN, 0.0));
        assert!(!close(f64::INFINITY, 1e308, 1.0));
        assert!(close(1.0, 1.0 + 1e-7, 1e-6));
        assert!(!close(1.0, 1.0 + 1e-5, 1e-6));
    }
}
