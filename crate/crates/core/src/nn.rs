//! Parameterised layers on top of the autodiff graph.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tsonet_tensor::{Bound, ConvSpec, ParamId, ParamStore, Real, Tensor, Var};

/// Registers parameters under a dotted name prefix.
pub struct Init<'a> {
    store: &'a mut ParamStore<f32>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: impl std::fmt::Display) -> Init<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Init {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<f32>) -> ParamId {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.add(full, value)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-bound..=bound) as f32);
        self.tensor(name, t)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let t = tsonet_tensor::randn(self.rng, shape.to_vec(), std);
        self.tensor(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> ParamId {
        self.tensor(name, Tensor::full(shape.to_vec(), value))
    }
}

pub type Params<'p, 'g, T> = &'p Bound<'g, T>;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv2d {
    /// Uniform `±1/sqrt(fan_in)` initialisation for weight and bias.
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, k: usize, groups: usize, bias: bool) -> Self {
        assert!(c_in % groups == 0 && c_out % groups == 0, "conv {c_in}->{c_out} not divisible into {groups} groups");
        let fan_in = c_in / groups * k * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = init.uniform("weight", &[c_out, c_in / groups, k, k], bound);
        let bias = bias.then(|| init.uniform("bias", &[c_out], bound));
        Self {
            weight,
            bias,
            spec: ConvSpec::new(1, k / 2, groups),
        }
    }

    /// Weight and bias start at zero.
    pub fn zeroed(init: &mut Init, c_in: usize, c_out: usize, k: usize, groups: usize) -> Self {
        let weight = init.constant("weight", &[c_out, c_in / groups, k, k], 0.0);
        let bias = Some(init.constant("bias", &[c_out], 0.0));
        Self {
            weight,
            bias,
            spec: ConvSpec::new(1, k / 2, groups),
        }
    }

    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.conv2d(p.var(self.weight), self.bias.map(|b| p.var(b)), self.spec)
    }
}

/// Largest group count not above `max_groups` that divides `channels`.
pub fn norm_groups(channels: usize, max_groups: usize) -> usize {
    (1..=max_groups.max(1)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(init: &mut Init, channels: usize, groups: usize) -> Self {
        Self {
            gamma: init.constant("gamma", &[channels], 1.0),
            beta: init.constant("beta", &[channels], 0.0),
            groups,
        }
    }

    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.group_norm(p.var(self.gamma), p.var(self.beta), self.groups, Self::EPS)
    }
}

/// 3x3 conv, group norm, GELU.
#[derive(Clone, Debug)]
pub struct ConvNormAct {
    pub conv: Conv2d,
    pub norm: GroupNorm,
}

impl ConvNormAct {
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, max_groups: usize) -> Self {
        Self {
            conv: Conv2d::new(&mut init.sub("conv"), c_in, c_out, 3, 1, true),
            norm: GroupNorm::new(&mut init.sub("norm"), c_out, norm_groups(c_out, max_groups)),
        }
    }

    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        self.norm.forward(p, self.conv.forward(p, x)).gelu()
    }
}

/// Per-pixel normalisation over the channel axis of `[B, C, H, W]`.
#[derive(Clone, Debug)]
pub struct ChannelNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl ChannelNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(init: &mut Init, channels: usize) -> Self {
        Self {
            gamma: init.constant("gamma", &[1, channels, 1, 1], 1.0),
            beta: init.constant("beta", &[1, channels, 1, 1], 0.0),
        }
    }

    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let centered = x - x.mean_axes(&[1]);
        let var = centered.square().mean_axes(&[1]);
        let normed = centered / var.add_scalar(Self::EPS).sqrt();
        normed * p.var(self.gamma) + p.var(self.beta)
    }
}

/// Affine map on the last axis: `[.., in] -> [.., out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init, d_in: usize, d_out: usize) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self {
            weight: init.uniform("weight", &[d_in, d_out], bound),
            bias: init.uniform("bias", &[d_out], bound),
        }
    }

    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let shape = x.shape();
        let d_in = *shape.last().expect("linear input rank >= 1");
        let rows = x.reshape([shape.iter().product::<usize>() / d_in, d_in]);
        let y = rows.matmul(p.var(self.weight)) + p.var(self.bias);
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = y.shape()[1];
        y.reshape(out_shape)
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(init: &mut Init, d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Self {
            fc1: Linear::new(&mut init.sub("fc1"), d_in, d_hidden),
            fc2: Linear::new(&mut init.sub("fc2"), d_hidden, d_out),
        }
    }

    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        self.fc2.forward(p, self.fc1.forward(p, x).gelu())
    }
}

/// Greatest common divisor, used to pick group counts that divide both
/// sides of a grouped convolution.
pub fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
