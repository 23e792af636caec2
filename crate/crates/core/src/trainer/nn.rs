//! Minimal single-precision dense layers and first-order optimizers.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const LEAK: f32 = 0.2;

/// `y = W x + b`; batches are columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f32>,
    pub b: DVector<f32>,
}

pub struct DenseGrad {
    pub w: DMatrix<f32>,
    pub b: DVector<f32>,
}

impl Dense {
    /// Gaussian weights with standard deviation `gain / sqrt(inputs)`, zero bias.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, gain: f32, rng: &mut R) -> Self {
        let std = gain / (inputs as f32).sqrt();
        let w = DMatrix::from_fn(outputs, inputs, |_, _| rng.sample::<f32, _>(StandardNormal) * std);
        Self { w, b: DVector::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &DMatrix<f32>) -> DMatrix<f32> {
        let mut y = &self.w * x;
        for mut col in y.column_iter_mut() {
            col += &self.b;
        }
        y
    }

    /// Parameter gradients and, when `need_input` is set, the input gradient.
    pub fn backward(&self, x: &DMatrix<f32>, dy: &DMatrix<f32>, need_input: bool) -> (DenseGrad, Option<DMatrix<f32>>) {
        let w = dy * x.transpose();
        let b = dy.column_sum();
        let dx = need_input.then(|| self.w.transpose() * dy);
        (DenseGrad { w, b }, dx)
    }
}

pub fn leaky_relu(x: &DMatrix<f32>) -> DMatrix<f32> {
    x.map(|v| if v > 0.0 { v } else { LEAK * v })
}

pub fn leaky_relu_backward(pre: &DMatrix<f32>, dy: &DMatrix<f32>) -> DMatrix<f32> {
    pre.zip_map(dy, |p, g| if p > 0.0 { g } else { LEAK * g })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// SGD with momentum 0.9.
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(Error::Parse(format!("unknown optimizer {s:?}"))),
        }
    }
}

const MOMENTUM: f64 = 0.9;
const ADAM_BETA1: f64 = 0.5;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Scalar types the optimizer can update; state is kept in f64.
pub trait Param: Copy {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Param for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Param for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Per-array optimizer state for a fixed list of parameter arrays.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect();
        let second = if kind == OptimizerKind::Adam { zeros() } else { Vec::new() };
        Self { kind, lr, first: zeros(), second, t: 0 }
    }

    pub fn step<T: Param>(&mut self, params: Vec<&mut [T]>, grads: &[&[T]]) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grads.len(), self.first.len());
        self.t += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.first) {
                    for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                        *vi = MOMENTUM * *vi + gi.to_f64();
                        *pi = T::from_f64(pi.to_f64() - lr * *vi);
                    }
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.t);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t);
                for (((p, g), m), s) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    for (((pi, gi), mi), si) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(s.iter_mut()) {
                        let g = gi.to_f64();
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                        *si = ADAM_BETA2 * *si + (1.0 - ADAM_BETA2) * g * g;
                        *pi = T::from_f64(pi.to_f64() - lr * (*mi / c1) / ((*si / c2).sqrt() + ADAM_EPS));
                    }
                }
            }
        }
    }
}
