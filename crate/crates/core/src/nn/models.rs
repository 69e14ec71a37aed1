//! Ready-made architectures.

use super::{Conv2D, Linear, LogSoftmax, MaxPool2D, ReLU, Sequential, View};
use crate::error::Result;

/// The classic small MNIST CNN over `[N, 1, 28, 28]` inputs:
/// two 5x5 convolutions (32 and 64 channels) with 2x2 max pooling, then a
/// 128-unit hidden layer and 10 log-probabilities.
pub fn mnist_cnn() -> Result<Sequential> {
    Ok(Sequential::new()
        .add(Conv2D::new(1, 32, (5, 5))?)
        .add(ReLU)
        .add(MaxPool2D::new(2))
        .add(Conv2D::new(32, 64, (5, 5))?)
        .add(ReLU)
        .add(MaxPool2D::new(2))
        .add(View::new(&[-1, 64 * 4 * 4])?)
        .add(Linear::new(64 * 4 * 4, 128)?)
        .add(ReLU)
        .add(Linear::new(128, 10)?)
        .add(LogSoftmax::new(1)))
}

/// One hidden layer perceptron producing log-probabilities.
pub fn mlp(inputs: usize, hidden: usize, classes: usize) -> Result<Sequential> {
    Ok(Sequential::new()
        .add(Linear::new(inputs, hidden)?)
        .add(ReLU)
        .add(Linear::new(hidden, classes)?)
        .add(LogSoftmax::new(1)))
}
