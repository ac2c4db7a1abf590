//! Fully connected feed-forward networks.
//!
//! Parameters live in one flat vector, layer-major: for each layer the
//! weight matrix `W[out][in]` in row-major order, followed by the bias `b[out]`.
//! Hidden layers apply the activation, the output layer is affine.

pub mod jet;

use std::io::{self, Read, Write};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{DiffContext, DiffScalar};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid layer widths {0:?}: need at least two positive widths")]
    InvalidWidths(Vec<usize>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("malformed parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 1,
            Activation::Identity => 0,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Activation::Tanh),
            0 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Parameter offsets of one affine layer inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    layers: Vec<LayerLayout>,
    params: Vec<f64>,
}

fn layout(widths: &[usize]) -> (Vec<LayerLayout>, usize) {
    let mut offset = 0;
    let layers = widths
        .windows(2)
        .map(|w| {
            let l = LayerLayout {
                fan_in: w[0],
                fan_out: w[1],
                weights: offset,
                bias: offset + w[0] * w[1],
            };
            offset += w[0] * w[1] + w[1];
            l
        })
        .collect();
    (layers, offset)
}

/// Number of parameters of a network with the given widths.
pub fn parameter_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. Deterministic in `seed`.
    pub fn init(widths: &[usize], activation: Activation, seed: u64) -> Result<Self, NetworkError> {
        let mut net = Self::zeros(widths, activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in net.layers.clone() {
            let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            let dist = Uniform::new(-limit, limit).expect("finite bounds");
            for w in &mut net.params[l.weights..l.bias] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(net)
    }

    /// All parameters zero.
    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self, NetworkError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(NetworkError::InvalidWidths(widths.to_vec()));
        }
        let (layers, count) = layout(widths);
        Ok(Self {
            widths: widths.to_vec(),
            activation,
            layers,
            params: vec![0.0; count],
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    pub fn layers(&self) -> &[LayerLayout] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, v: &[f64]) -> Result<(), NetworkError> {
        if v.len() != self.params.len() {
            return Err(NetworkError::Dimension {
                expected: self.params.len(),
                got: v.len(),
            });
        }
        self.params.copy_from_slice(v);
        Ok(())
    }

    /// Weight `W[row][col]` of layer `layer`.
    pub fn weight(&self, layer: usize, row: usize, col: usize) -> f64 {
        let l = self.layers[layer];
        self.params[l.weights + row * l.fan_in + col]
    }

    pub fn bias(&self, layer: usize, row: usize) -> f64 {
        self.params[self.layers[layer].bias + row]
    }

    /// Plain `f64` forward pass.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
        self.check_input(x.len())?;
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let w = &self.params[l.weights..l.bias];
            let b = &self.params[l.bias..l.bias + l.fan_out];
            let mut z: Vec<f64> = b.to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &w[r * l.fan_in..(r + 1) * l.fan_in];
                *zr += row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>();
            }
            if k != last && self.activation == Activation::Tanh {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            a = z;
        }
        Ok(a)
    }

    fn check_input(&self, got: usize) -> Result<(), NetworkError> {
        if got != self.input_dim() {
            return Err(NetworkError::Dimension {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    /// Record the parameters as leaf variables so that derivatives with
    /// respect to them can be taken.
    pub fn bind_variables<'n, 'c>(&'n self, ctx: &'c DiffContext) -> BoundMlp<'n, 'c> {
        BoundMlp {
            net: self,
            params: self.params.iter().map(|&p| ctx.variable(p)).collect(),
        }
    }

    /// Record the parameters as constants.
    pub fn bind_constants<'n, 'c>(&'n self, ctx: &'c DiffContext) -> BoundMlp<'n, 'c> {
        BoundMlp {
            net: self,
            params: self.params.iter().map(|&p| ctx.lift(p)).collect(),
        }
    }

    /// Binary dump: magic `MLP1`, u32 layer-width count, u64 widths,
    /// u8 activation tag, u64 parameter count, f64 parameters. Little endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), NetworkError> {
        w.write_all(b"MLP1")?;
        w.write_all(&(self.widths.len() as u32).to_le_bytes())?;
        for &width in &self.widths {
            w.write_all(&(width as u64).to_le_bytes())?;
        }
        w.write_all(&[self.activation.tag()])?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, NetworkError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"MLP1" {
            return Err(NetworkError::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        if n > 1 << 16 {
            return Err(NetworkError::Format(format!("implausible layer count {n}")));
        }
        let mut widths = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            widths.push(u64::from_le_bytes(b8) as usize);
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let activation = Activation::from_tag(tag[0])
            .ok_or_else(|| NetworkError::Format(format!("unknown activation tag {}", tag[0])))?;
        let mut net = Self::zeros(&widths, activation)?;
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        if count != net.param_count() {
            return Err(NetworkError::Dimension {
                expected: net.param_count(),
                got: count,
            });
        }
        for p in net.params.iter_mut() {
            r.read_exact(&mut b8)?;
            *p = f64::from_le_bytes(b8);
        }
        Ok(net)
    }
}

/// A network whose parameters are nodes of a [`DiffContext`].
#[derive(Debug, Clone)]
pub struct BoundMlp<'n, 'c> {
    net: &'n Mlp,
    params: Vec<DiffScalar<'c>>,
}

impl<'n, 'c> BoundMlp<'n, 'c> {
    pub fn net(&self) -> &'n Mlp {
        self.net
    }

    pub fn params(&self) -> &[DiffScalar<'c>] {
        &self.params
    }

    /// Forward pass recorded in the graph; differentiable with respect to
    /// both the inputs and (when bound as variables) the parameters.
    pub fn forward(&self, x: &[DiffScalar<'c>]) -> Result<Vec<DiffScalar<'c>>, NetworkError> {
        self.net.check_input(x.len())?;
        let mut a = x.to_vec();
        let last = self.net.layers.len() - 1;
        for (k, l) in self.net.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(l.fan_out);
            for r in 0..l.fan_out {
                let mut acc = self.params[l.bias + r];
                for (c, &ac) in a.iter().enumerate() {
                    acc = acc + self.params[l.weights + r * l.fan_in + c] * ac;
                }
                z.push(acc);
            }
            if k != last && self.net.activation == Activation::Tanh {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            a = z;
        }
        Ok(a)
    }
}
