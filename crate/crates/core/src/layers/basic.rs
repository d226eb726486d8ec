use rand_chacha::ChaCha8Rng;

use super::{ForwardCtx, Module, ParamKind, Parameter};
use crate::error::{shape_err, Result};
use crate::tensor::{Conv2dParams, Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization with learnable affine and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Real> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Parameter<T>,
    pub running_var: Parameter<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Parameter::new(Tensor::ones(&[channels]), ParamKind::Norm),
            beta: Parameter::zeros(&[channels], ParamKind::Norm),
            running_mean: Parameter::zeros(&[channels], ParamKind::Buffer),
            running_var: Parameter::new(Tensor::ones(&[channels]), ParamKind::Buffer),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>> {
        if !ctx.train {
            return x.batch_norm_eval(
                self.gamma.tensor(),
                self.beta.tensor(),
                self.running_mean.tensor().data(),
                self.running_var.tensor().data(),
                self.eps,
            );
        }
        let (y, stats) = x.batch_norm_train(self.gamma.tensor(), self.beta.tensor(), self.eps)?;
        if ctx.update_norm_stats {
            let m = T::lit(self.momentum);
            let keep = T::one() - m;
            let unbias = T::lit(stats.count as f64 / (stats.count - 1).max(1) as f64);
            let mean: Vec<T> = self
                .running_mean
                .tensor()
                .data()
                .iter()
                .zip(&stats.mean)
                .map(|(&r, &b)| keep * r + m * b)
                .collect();
            let var: Vec<T> = self
                .running_var
                .tensor()
                .data()
                .iter()
                .zip(&stats.var)
                .map(|(&r, &b)| keep * r + m * b * unbias)
                .collect();
            self.running_mean.set_data(mean)?;
            self.running_var.set_data(var)?;
        }
        Ok(y)
    }

    fn params(&self) -> Vec<(String, &Parameter<T>)> {
        vec![
            ("gamma".into(), &self.gamma),
            ("beta".into(), &self.beta),
            ("running_mean".into(), &self.running_mean),
            ("running_var".into(), &self.running_var),
        ]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Parameter<T>)> {
        vec![
            ("gamma".into(), &mut self.gamma),
            ("beta".into(), &mut self.beta),
            ("running_mean".into(), &mut self.running_mean),
            ("running_var".into(), &mut self.running_var),
        ]
    }
}

/// Ordinary convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub params: Conv2dParams,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        params: Conv2dParams,
        kind: ParamKind,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (in_channels / params.groups.max(1)) * kernel * kernel;
        Conv2d {
            weight: Parameter::randn(
                &[out_channels, in_channels / params.groups.max(1), kernel, kernel],
                (fan_in as f64).powf(-0.5),
                kind,
                rng,
            ),
            bias: Parameter::zeros(&[out_channels], kind),
            params,
        }
    }

    /// Weight and bias count of a convolution with these extents.
    pub fn count(in_channels: usize, out_channels: usize, kernel: usize, groups: usize) -> usize {
        out_channels * (in_channels / groups) * kernel * kernel + out_channels
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>> {
        let o = self.bias.numel();
        let y = x.conv2d(self.weight.tensor(), self.params)?;
        y.add(&self.bias.tensor().reshape(&[1, o, 1, 1])?)
    }

    fn params(&self) -> Vec<(String, &Parameter<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Parameter<T>)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

/// Fully connected layer on `[B, in]` inputs.
#[derive(Debug, Clone)]
pub struct Linear<T: Real> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(inputs: usize, outputs: usize, bias: bool, kind: ParamKind, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Parameter::randn(&[outputs, inputs], (inputs as f64).powf(-0.5), kind, rng),
            bias: bias.then(|| Parameter::zeros(&[outputs], kind)),
        }
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>> {
        let w = self.weight.tensor();
        if x.ndim() != 2 || x.shape()[1] != w.shape()[1] {
            return shape_err(
                "linear",
                format!("input {:?} does not match weight {:?}", x.shape(), w.shape()),
            );
        }
        let y = x.matmul_t(w, false, true)?;
        match &self.bias {
            Some(b) => y.add(b.tensor()),
            None => Ok(y),
        }
    }

    fn params(&self) -> Vec<(String, &Parameter<T>)> {
        let mut v = vec![("weight".to_string(), &self.weight)];
        if let Some(b) = &self.bias {
            v.push(("bias".into(), b));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Parameter<T>)> {
        let mut v = vec![("weight".to_string(), &mut self.weight)];
        if let Some(b) = &mut self.bias {
            v.push(("bias".into(), b));
        }
        v
    }
}
