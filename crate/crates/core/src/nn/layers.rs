use std::sync::Mutex;

use super::{single, Module, Record};
use crate::autograd::{no_grad, Variable};
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn layer_error(layer: &str, msg: impl std::fmt::Display) -> Error {
    Error::Shape(format!("{layer}: {msg}"))
}

/// Weights uniform in `±1/sqrt(fan_in)`.
fn init_uniform(dims: &[usize], fan_in: usize) -> Result<Variable> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Ok(Variable::new(
        Tensor::rand_uniform(dims, DType::F32, -bound, bound)?,
        true,
    ))
}

fn zeros_param(dims: &[usize]) -> Result<Variable> {
    Ok(Variable::new(Tensor::zeros(dims, DType::F32)?, true))
}

fn load_param(r: &Record, i: usize) -> Result<Variable> {
    Ok(Variable::new(Tensor::from_host(r.tensor(i)?)?, true))
}

fn push_param(r: &mut Record, v: &Variable) -> Result<()> {
    r.tensors.push(v.tensor().to_host()?);
    Ok(())
}

fn pair(r: &Record, i: usize) -> Result<(usize, usize)> {
    Ok((r.usize(i)?, r.usize(i + 1)?))
}

/// Fully connected layer: `y = x Wᵀ + b` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Variable,
    pub bias: Option<Variable>,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize) -> Result<Self> {
        Ok(Linear {
            weight: init_uniform(&[outputs, inputs], inputs)?,
            bias: Some(zeros_param(&[outputs])?),
        })
    }

    pub fn from_params(weight: Variable, bias: Option<Variable>) -> Result<Self> {
        let w = weight.dims();
        if w.len() != 2 {
            return Err(layer_error("Linear", format!("weight must be [out, in], got {w:?}")));
        }
        if let Some(b) = &bias {
            if b.dims() != [w[0]] {
                return Err(layer_error(
                    "Linear",
                    format!("bias {:?} does not match {} outputs", b.dims(), w[0]),
                ));
            }
        }
        Ok(Linear { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    pub(crate) fn load(r: &Record) -> Result<Box<dyn Module>> {
        let bias = if r.int(0)? != 0 { Some(load_param(r, 1)?) } else { None };
        Ok(Box::new(Linear::from_params(load_param(r, 0)?, bias)?))
    }
}

impl Module for Linear {
    fn kind(&self) -> &'static str {
        "linear"
    }

    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        let x = single("Linear", inputs)?;
        let d = x.dims();
        if d.len() != 2 || d[1] != self.in_features() {
            return Err(layer_error(
                "Linear",
                format!("expected [N, {}], got {d:?}", self.in_features()),
            ));
        }
        let y = x.matmul(&self.weight.transpose()?)?;
        Ok(vec![match &self.bias {
            Some(b) => y.add(b)?,
            None => y,
        }])
    }

    fn params(&self) -> Vec<Variable> {
        std::iter::once(self.weight.clone()).chain(self.bias.clone()).collect()
    }

    fn to_record(&self) -> Result<Record> {
        let mut r = Record::new(self.kind());
        r.ints.push(self.bias.is_some() as i64);
        push_param(&mut r, &self.weight)?;
        if let Some(b) = &self.bias {
            push_param(&mut r, b)?;
        }
        Ok(r)
    }
}

/// 2-D convolution over `[N, C, H, W]` with weights `[F, C, kh, kw]`.
#[derive(Debug, Clone)]
pub struct Conv2D {
    pub weight: Variable,
    pub bias: Option<Variable>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2D {
    pub fn new(in_channels: usize, out_channels: usize, kernel: (usize, usize)) -> Result<Self> {
        let fan_in = in_channels * kernel.0 * kernel.1;
        Ok(Conv2D {
            weight: init_uniform(&[out_channels, in_channels, kernel.0, kernel.1], fan_in)?,
            bias: Some(zeros_param(&[out_channels])?),
            stride: (1, 1),
            padding: (0, 0),
        })
    }

    pub fn from_params(weight: Variable, bias: Option<Variable>) -> Result<Self> {
        let w = weight.dims();
        if w.len() != 4 {
            return Err(layer_error(
                "Conv2D",
                format!("weight must be [F, C, kh, kw], got {w:?}"),
            ));
        }
        if let Some(b) = &bias {
            if b.dims() != [w[0]] {
                return Err(layer_error(
                    "Conv2D",
                    format!("bias {:?} does not match {} filters", b.dims(), w[0]),
                ));
            }
        }
        Ok(Conv2D {
            weight,
            bias,
            stride: (1, 1),
            padding: (0, 0),
        })
    }

    pub fn stride(mut self, stride: (usize, usize)) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: (usize, usize)) -> Self {
        self.padding = padding;
        self
    }

    pub(crate) fn load(r: &Record) -> Result<Box<dyn Module>> {
        let bias = if r.int(0)? != 0 { Some(load_param(r, 1)?) } else { None };
        let conv = Conv2D::from_params(load_param(r, 0)?, bias)?
            .stride(pair(r, 1)?)
            .padding(pair(r, 3)?);
        Ok(Box::new(conv))
    }
}

impl Module for Conv2D {
    fn kind(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        let x = single("Conv2D", inputs)?;
        let (d, w) = (x.dims(), self.weight.dims());
        if d.len() != 4 || d[1] != w[1] {
            return Err(layer_error(
                "Conv2D",
                format!("expected [N, {}, H, W], got {d:?}", w[1]),
            ));
        }
        Ok(vec![x.conv2d(
            &self.weight,
            self.bias.as_ref(),
            self.stride,
            self.padding,
        )?])
    }

    fn params(&self) -> Vec<Variable> {
        std::iter::once(self.weight.clone()).chain(self.bias.clone()).collect()
    }

    fn to_record(&self) -> Result<Record> {
        let mut r = Record::new(self.kind());
        r.ints = [
            self.bias.is_some() as usize,
            self.stride.0,
            self.stride.1,
            self.padding.0,
            self.padding.1,
        ]
        .iter()
        .map(|&v| v as i64)
        .collect();
        push_param(&mut r, &self.weight)?;
        if let Some(b) = &self.bias {
            push_param(&mut r, b)?;
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReLU;

impl ReLU {
    pub(crate) fn load(_: &Record) -> Result<Box<dyn Module>> {
        Ok(Box::new(ReLU))
    }
}

impl Module for ReLU {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        Ok(vec![single("ReLU", inputs)?.relu()?])
    }

    fn to_record(&self) -> Result<Record> {
        Ok(Record::new(self.kind()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaxPool2D {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl MaxPool2D {
    /// Non-overlapping `k x k` pooling.
    pub fn new(k: usize) -> Self {
        MaxPool2D {
            kernel: (k, k),
            stride: (k, k),
            padding: (0, 0),
        }
    }

    pub(crate) fn load(r: &Record) -> Result<Box<dyn Module>> {
        Ok(Box::new(MaxPool2D {
            kernel: pair(r, 0)?,
            stride: pair(r, 2)?,
            padding: pair(r, 4)?,
        }))
    }
}

impl Module for MaxPool2D {
    fn kind(&self) -> &'static str {
        "maxpool2d"
    }

    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        let x = single("MaxPool2D", inputs)?;
        if x.dims().len() != 4 {
            return Err(layer_error(
                "MaxPool2D",
                format!("expected [N, C, H, W], got {:?}", x.dims()),
            ));
        }
        Ok(vec![x.max_pool2d(self.kernel, self.stride, self.padding)?])
    }

    fn to_record(&self) -> Result<Record> {
        let mut r = Record::new(self.kind());
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        r.ints = [k.0, k.1, s.0, s.1, p.0, p.1].iter().map(|&v| v as i64).collect();
        Ok(r)
    }
}

/// Zeroes each element with probability `p` during training and scales
/// survivors by `1 / (1 - p)`. Identity in eval mode.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub ratio: f64,
    pub training: bool,
}

impl Dropout {
    pub fn new(ratio: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Config(format!("dropout ratio {ratio} outside [0, 1)")));
        }
        Ok(Dropout { ratio, training: true })
    }

    /// A fresh scaled keep-mask shaped like `x`.
    pub fn mask(&self, x: &Tensor) -> Result<Tensor> {
        let u = x.factory().rand_uniform(x.dims(), x.dtype(), 0.0, 1.0)?;
        u.lt_scalar(self.ratio)?
            .logical_not()?
            .astype(x.dtype())?
            .mul_scalar(1.0 / (1.0 - self.ratio))
    }

    pub(crate) fn load(r: &Record) -> Result<Box<dyn Module>> {
        let mut d = Dropout::new(r.float(0)?)?;
        d.training = r.int(0)? != 0;
        Ok(Box::new(d))
    }
}

impl Module for Dropout {
    fn kind(&self) -> &'static str {
        "dropout"
    }

    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        let x = single("Dropout", inputs)?;
        if !self.training || self.ratio == 0.0 {
            return Ok(vec![x.clone()]);
        }
        let mask = self.mask(&x.tensor())?;
        Ok(vec![x.mul(&Variable::constant(mask))?])
    }

    fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    fn to_record(&self) -> Result<Record> {
        let mut r = Record::new(self.kind());
        r.floats.push(self.ratio);
        r.ints.push(self.training as i64);
        Ok(r)
    }
}

/// Per-channel batch normalization over `[N, C, H, W]`.
///
/// Training mode normalizes with batch statistics and updates the running
/// estimates; eval mode uses the running estimates only.
#[derive(Debug)]
pub struct BatchNorm2d {
    pub weight: Variable,
    pub bias: Variable,
    running_mean: Mutex<Tensor>,
    running_var: Mutex<Tensor>,
    pub momentum: f64,
    pub eps: f64,
    pub training: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Result<Self> {
        Self::from_params(
            Variable::new(Tensor::ones(&[channels], DType::F32)?, true),
            zeros_param(&[channels])?,
        )
    }

    /// Affine parameters `[C]`; running statistics start at 0 and 1 in
    /// the same dtype.
    pub fn from_params(weight: Variable, bias: Variable) -> Result<Self> {
        let c = weight.dims();
        if c.len() != 1 || bias.dims() != c {
            return Err(layer_error(
                "BatchNorm2d",
                format!("weight {c:?} and bias {:?} must be [C]", bias.dims()),
            ));
        }
        let w = weight.tensor();
        Ok(BatchNorm2d {
            running_mean: Mutex::new(w.zeros_like()?),
            running_var: Mutex::new(w.ones_like()?),
            weight,
            bias,
            momentum: 0.1,
            eps: 1e-5,
            training: true,
        })
    }

    pub fn channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn running_mean(&self) -> Tensor {
        self.running_mean.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn running_var(&self) -> Tensor {
        self.running_var.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub(crate) fn load(r: &Record) -> Result<Box<dyn Module>> {
        Ok(Box::new(BatchNorm2d {
            weight: load_param(r, 0)?,
            bias: load_param(r, 1)?,
            running_mean: Mutex::new(Tensor::from_host(r.tensor(2)?)?),
            running_var: Mutex::new(Tensor::from_host(r.tensor(3)?)?),
            momentum: r.float(0)?,
            eps: r.float(1)?,
            training: r.int(0)? != 0,
        }))
    }

    fn update_running(&self, mean: &Tensor, var: &Tensor, count: usize) -> Result<()> {
        let m = self.momentum;
        let unbiased = var.mul_scalar(count as f64 / (count.max(2) - 1) as f64)?;
        let mut rm = self.running_mean.lock().unwrap_or_else(|e| e.into_inner());
        let mut rv = self.running_var.lock().unwrap_or_else(|e| e.into_inner());
        *rm = rm.mul_scalar(1.0 - m)?.add(&mean.mul_scalar(m)?.astype(rm.dtype())?)?;
        *rv = rv
            .mul_scalar(1.0 - m)?
            .add(&unbiased.mul_scalar(m)?.astype(rv.dtype())?)?;
        Ok(())
    }
}

impl Module for BatchNorm2d {
    fn kind(&self) -> &'static str {
        "batchnorm2d"
    }

    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        let x = single("BatchNorm2d", inputs)?;
        let d = x.dims();
        let c = self.channels();
        if d.len() != 4 || d[1] != c {
            return Err(layer_error(
                "BatchNorm2d",
                format!("expected [N, {c}, H, W], got {d:?}"),
            ));
        }
        let (n, h, w) = (d[0], d[2], d[3]);
        if !self.training {
            let mean = Variable::constant(self.running_mean().reshape(&[1, c, 1, 1])?);
            let std = self.running_var().add_scalar(self.eps)?.sqrt()?;
            let xhat = x.sub(&mean)?.div(&Variable::constant(std.reshape(&[1, c, 1, 1])?))?;
            let y = xhat
                .mul(&self.weight.reshape(&[1, c, 1, 1])?)?
                .add(&self.bias.reshape(&[1, c, 1, 1])?)?;
            return Ok(vec![y]);
        }
        let lanes = x.permute(&[1, 0, 2, 3])?.reshape(&[c, n * h * w])?;
        let mean = lanes.mean(Some(1), true)?;
        let centered = lanes.sub(&mean)?;
        let var = centered.mul(&centered)?.mean(Some(1), true)?;
        let xhat = centered.div(&var.add_scalar(self.eps)?.sqrt()?)?;
        let y = xhat
            .mul(&self.weight.reshape(&[c, 1])?)?
            .add(&self.bias.reshape(&[c, 1])?)?
            .reshape(&[c, n, h, w])?
            .permute(&[1, 0, 2, 3])?;
        no_grad(|| self.update_running(&mean.tensor().reshape(&[c])?, &var.tensor().reshape(&[c])?, n * h * w))?;
        Ok(vec![y])
    }

    fn params(&self) -> Vec<Variable> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    fn to_record(&self) -> Result<Record> {
        let mut r = Record::new(self.kind());
        r.ints.push(self.training as i64);
        r.floats = vec![self.momentum, self.eps];
        push_param(&mut r, &self.weight)?;
        push_param(&mut r, &self.bias)?;
        r.tensors.push(self.running_mean().to_host()?);
        r.tensors.push(self.running_var().to_host()?);
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogSoftmax {
    pub axis: usize,
}

impl LogSoftmax {
    pub fn new(axis: usize) -> Self {
        LogSoftmax { axis }
    }

    pub(crate) fn load(r: &Record) -> Result<Box<dyn Module>> {
        Ok(Box::new(LogSoftmax::new(r.usize(0)?)))
    }
}

impl Module for LogSoftmax {
    fn kind(&self) -> &'static str {
        "logsoftmax"
    }

    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        let x = single("LogSoftmax", inputs)?;
        if self.axis >= x.dims().len() {
            return Err(layer_error(
                "LogSoftmax",
                format!("axis {} out of range for {:?}", self.axis, x.dims()),
            ));
        }
        Ok(vec![x.log_softmax(self.axis)?])
    }

    fn to_record(&self) -> Result<Record> {
        let mut r = Record::new(self.kind());
        r.ints.push(self.axis as i64);
        Ok(r)
    }
}

/// Reshape; at most one extent may be `-1` and is inferred.
#[derive(Debug, Clone)]
pub struct View {
    pub dims: Vec<i64>,
}

impl View {
    pub fn new(dims: &[i64]) -> Result<Self> {
        if dims.iter().filter(|&&d| d == -1).count() > 1 || dims.iter().any(|&d| d < -1) {
            return Err(layer_error("View", format!("invalid target {dims:?}")));
        }
        Ok(View { dims: dims.to_vec() })
    }

    pub fn resolve(&self, numel: usize) -> Result<Vec<usize>> {
        let known: usize = self.dims.iter().filter(|&&d| d >= 0).map(|&d| d as usize).product();
        let fail = || layer_error("View", format!("cannot view {numel} elements as {:?}", self.dims));
        self.dims
            .iter()
            .map(|&d| match d {
                -1 if known == 0 || !numel.is_multiple_of(known) => Err(fail()),
                -1 => Ok(numel / known),
                d => Ok(d as usize),
            })
            .collect()
    }

    pub(crate) fn load(r: &Record) -> Result<Box<dyn Module>> {
        Ok(Box::new(View::new(&r.ints)?))
    }
}

impl Module for View {
    fn kind(&self) -> &'static str {
        "view"
    }

    fn forward(&self, inputs: &[Variable]) -> Result<Vec<Variable>> {
        let x = single("View", inputs)?;
        let dims = self.resolve(x.shape().numel())?;
        if dims.iter().product::<usize>() != x.shape().numel() {
            return Err(layer_error(
                "View",
                format!("cannot view {:?} as {:?}", x.dims(), self.dims),
            ));
        }
        Ok(vec![x.reshape(&dims)?])
    }

    fn to_record(&self) -> Result<Record> {
        let mut r = Record::new(self.kind());
        r.ints = self.dims.clone();
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(v: Vec<f32>, dims: &[usize]) -> Variable {
        Variable::constant(Tensor::from_vec(v, dims).unwrap())
    }

    #[test]
    fn linear_identity_passes_input_through() {
        let l = Linear::from_params(
            Variable::new(Tensor::identity(3, DType::F32).unwrap(), true),
            Some(Variable::new(Tensor::zeros(&[3], DType::F32).unwrap(), true)),
        )
        .unwrap();
        let x = var(vec![1.0, -2.0, 3.5, 0.0, 4.0, 9.0], &[2, 3]);
        assert_eq!(
            l.call(&x).unwrap().tensor().to_vec::<f32>().unwrap(),
            x.tensor().to_vec::<f32>().unwrap()
        );
    }

    #[test]
    fn linear_shape_error_names_layer() {
        let l = Linear::new(4, 2).unwrap();
        let err = l.call(&var(vec![0.0; 3], &[1, 3])).unwrap_err();
        assert!(err.to_string().contains("Linear"), "{err}");
    }

    #[test]
    fn init_is_bounded() {
        let l = Linear::new(16, 8).unwrap();
        let bound = 0.25;
        assert!(l.weight.tensor().to_f64_vec().unwrap().iter().all(|w| w.abs() <= bound));
        assert!(l.bias.unwrap().tensor().to_f64_vec().unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn dropout_zero_is_identity_in_both_modes() {
        let mut d = Dropout::new(0.0).unwrap();
        let x = var(vec![1.0, 2.0, 3.0], &[3]);
        for training in [true, false] {
            d.set_training(training);
            assert_eq!(
                d.call(&x).unwrap().tensor().to_vec::<f32>().unwrap(),
                vec![1.0, 2.0, 3.0]
            );
        }
    }

    #[test]
    fn dropout_half_preserves_mean() {
        let d = Dropout::new(0.5).unwrap();
        let x = Variable::constant(Tensor::ones(&[10000], DType::F32).unwrap());
        let y = d.call(&x).unwrap().tensor().to_f64_vec().unwrap();
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() <= 0.05, "{mean}");
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut d = Dropout::new(0.9).unwrap();
        d.eval();
        let x = var(vec![1.0, 2.0], &[2]);
        assert_eq!(d.call(&x).unwrap().tensor().to_vec::<f32>().unwrap(), vec![1.0, 2.0]);
        assert!(Dropout::new(1.0).is_err());
    }

    #[test]
    fn batchnorm_train_normalizes_channels() {
        let bn = BatchNorm2d::new(2).unwrap();
        let x = Tensor::from_vec((0..16).map(|i| (i * i) as f64 * 0.1).collect(), &[2, 2, 2, 2]).unwrap();
        let y = bn
            .call(&Variable::constant(x.astype(DType::F32).unwrap()))
            .unwrap()
            .tensor();
        let per_channel = y.permute(&[1, 0, 2, 3]).unwrap().reshape(&[2, 8]).unwrap();
        for m in per_channel.mean(Some(1), false).unwrap().to_f64_vec().unwrap() {
            assert!(m.abs() < 1e-5);
        }
        for v in per_channel.var(Some(1), false).unwrap().to_f64_vec().unwrap() {
            assert!((v - 1.0).abs() < 1e-3, "{v}");
        }
        assert!(bn.running_mean().to_f64_vec().unwrap().iter().all(|&m| m > 0.0));
    }

    #[test]
    fn batchnorm_eval_does_not_mutate() {
        let mut bn = BatchNorm2d::new(1).unwrap();
        bn.eval();
        let x = Variable::constant(Tensor::rand_normal(&[2, 1, 3, 3], DType::F32, 2.0, 1.0).unwrap());
        let a = bn.call(&x).unwrap().tensor().to_vec::<f32>().unwrap();
        let b = bn.call(&x).unwrap().tensor().to_vec::<f32>().unwrap();
        assert_eq!(a, b);
        assert_eq!(bn.running_mean().to_f64_vec().unwrap(), vec![0.0]);
    }

    #[test]
    fn view_infers_one_extent() {
        let v = View::new(&[-1, 6]).unwrap();
        assert_eq!(v.resolve(24).unwrap(), vec![4, 6]);
        assert!(v.resolve(25).is_err());
        assert!(View::new(&[-1, -1]).is_err());
    }

    #[test]
    fn pooling_and_conv_shapes() {
        let conv = Conv2D::new(1, 4, (3, 3)).unwrap().padding((1, 1));
        let x = Variable::constant(Tensor::rand_uniform(&[2, 1, 6, 6], DType::F32, 0.0, 1.0).unwrap());
        let y = conv.call(&x).unwrap();
        assert_eq!(y.dims(), vec![2, 4, 6, 6]);
        assert_eq!(MaxPool2D::new(2).call(&y).unwrap().dims(), vec![2, 4, 3, 3]);
        assert!(conv
            .call(&Variable::constant(Tensor::zeros(&[1, 2, 4, 4], DType::F32).unwrap()))
            .is_err());
    }
}
