//! Two-branch point-cloud embedding network.
//!
//! * foreground branch: shared per-point perceptron, then a point weighting
//!   head whose scores are softmax-normalized across points and used to sum
//!   the per-point features;
//! * environment branch: shared per-point perceptron, then coordinate-wise
//!   max pooling;
//! * fusion perceptron over `[foreground ++ environment ++ position]`.
//!
//! All hidden layers use a leaky rectifier with slope 0.1. The weight-head
//! score and the final embedding are linear.

mod io;
mod model;
mod scalar;

pub use io::{load_params, save_params, PARAM_MAGIC, PARAM_VERSION};
pub use model::{backward, critical_env_points, embed, forward, softmax_pool, top_weighted_points, ForwardTrace};
pub use scalar::Scalar;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pointcloud::{POINT_DIM, POSITION_DIM};

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Semantic classes including background.
    pub z: usize,
    pub fg_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub env_hidden: Vec<usize>,
    pub fusion_hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl NetConfig {
    /// Full-size network: 5→64→128→256, head 256→64→1, env (5+Z)→64→128→256,
    /// fusion 576→256→64→32.
    pub fn standard(z: usize) -> Self {
        NetConfig {
            z,
            fg_hidden: vec![64, 128, 256],
            head_hidden: vec![64],
            env_hidden: vec![64, 128, 256],
            fusion_hidden: vec![256, 64],
            embed_dim: 32,
        }
    }

    /// Reference tiny network used for gradient checking.
    pub fn tiny(z: usize) -> Self {
        NetConfig {
            z,
            fg_hidden: vec![8, 8],
            head_hidden: vec![4],
            env_hidden: vec![8, 8],
            fusion_hidden: vec![16],
            embed_dim: 8,
        }
    }

    pub fn fg_widths(&self) -> Vec<usize> {
        std::iter::once(POINT_DIM).chain(self.fg_hidden.iter().copied()).collect()
    }

    pub fn head_widths(&self) -> Vec<usize> {
        std::iter::once(self.fg_out())
            .chain(self.head_hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect()
    }

    pub fn env_widths(&self) -> Vec<usize> {
        std::iter::once(POINT_DIM + self.z)
            .chain(self.env_hidden.iter().copied())
            .collect()
    }

    pub fn fusion_widths(&self) -> Vec<usize> {
        std::iter::once(self.fg_out() + self.env_out() + POSITION_DIM)
            .chain(self.fusion_hidden.iter().copied())
            .chain(std::iter::once(self.embed_dim))
            .collect()
    }

    pub fn fg_out(&self) -> usize {
        *self.fg_hidden.last().unwrap_or(&POINT_DIM)
    }

    pub fn env_out(&self) -> usize {
        *self.env_hidden.last().unwrap_or(&(POINT_DIM + self.z))
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = self.z < 2
            || self.fg_hidden.is_empty()
            || self.env_hidden.is_empty()
            || self.embed_dim == 0
            || [&self.fg_hidden, &self.head_hidden, &self.env_hidden, &self.fusion_hidden]
                .iter()
                .any(|v| v.contains(&0));
        if bad {
            return Err(crate::Error::InvalidConfig(format!("bad network config {self:?}")));
        }
        Ok(())
    }
}

/// Fully connected layer, `w` is `inp x out` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inp: usize,
    pub out: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Dense {
            inp,
            out,
            w: vec![T::zero(); inp * out],
            b: vec![T::zero(); out],
        }
    }

    fn cast<U: Scalar>(&self) -> Dense<U> {
        Dense {
            inp: self.inp,
            out: self.out,
            w: self.w.iter().map(|&v| U::of(v.as_f64())).collect(),
            b: self.b.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }
}

fn stack<T: Scalar>(widths: &[usize]) -> Vec<Dense<T>> {
    widths.windows(2).map(|p| Dense::zeros(p[0], p[1])).collect()
}

/// Weights and biases of every layer. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub config: NetConfig,
    pub fg: Vec<Dense<T>>,
    pub head: Vec<Dense<T>>,
    pub env: Vec<Dense<T>>,
    pub fusion: Vec<Dense<T>>,
}

/// Canonical (master) parameters, stored in double precision.
pub type NetworkParams = Params<f64>;

impl<T: Scalar> Params<T> {
    pub fn zeros(config: &NetConfig) -> Self {
        Params {
            config: config.clone(),
            fg: stack(&config.fg_widths()),
            head: stack(&config.head_widths()),
            env: stack(&config.env_widths()),
            fusion: stack(&config.fusion_widths()),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            config: self.config.clone(),
            fg: self.fg.iter().map(Dense::cast).collect(),
            head: self.head.iter().map(Dense::cast).collect(),
            env: self.env.iter().map(Dense::cast).collect(),
            fusion: self.fusion.iter().map(Dense::cast).collect(),
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Dense<T>> {
        self.fg.iter().chain(&self.head).chain(&self.env).chain(&self.fusion)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense<T>> {
        self.fg
            .iter_mut()
            .chain(&mut self.head)
            .chain(&mut self.env)
            .chain(&mut self.fusion)
    }

    /// Parameter tensors in serialization order (each layer: weights, bias).
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers().flat_map(|l| [l.w.as_slice(), l.b.as_slice()]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, accumulated element-wise.
    pub fn add_assign<U: Scalar>(&mut self, other: &Params<U>) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + T::of(s.as_f64());
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v * k;
            }
        }
    }
}

/// Deterministic Glorot-uniform initialization with zero biases. The last
/// layer of the weight head starts at zero so the initial point weights are
/// uniform.
pub fn init_params(seed: u64, config: &NetConfig) -> NetworkParams {
    let mut p = NetworkParams::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head_last = p.head.len() - 1;
    let fill = |l: &mut Dense<f64>, rng: &mut ChaCha8Rng| {
        let lim = (6.0 / (l.inp + l.out) as f64).sqrt();
        for w in l.w.iter_mut() {
            *w = rng.random_range(-lim..lim);
        }
    };
    for l in p.fg.iter_mut() {
        fill(l, &mut rng);
    }
    for (i, l) in p.head.iter_mut().enumerate() {
        if i != head_last {
            fill(l, &mut rng);
        }
    }
    for l in p.env.iter_mut().chain(p.fusion.iter_mut()) {
        fill(l, &mut rng);
    }
    p
}
