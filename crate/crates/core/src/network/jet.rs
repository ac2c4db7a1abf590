//! Batched second-order jets through an [`Mlp`].
//!
//! A jet of a field at a point is its value together with first and second
//! derivatives along `dim` local directions. Jets of all points are pushed
//! through the layers at once: every stream (value, ∂ₖ, ∂ₖ∂ₗ) is a block of
//! columns, so each affine layer is a single matrix product. [`backward`]
//! propagates adjoints of the output jets back to the parameters, which gives
//! the parameter gradient of any loss that is expressed through the jets.
//!
//! Column `s * points + p` holds stream `s` of point `p`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2};

use super::{Activation, Mlp, NetworkError};

/// Stream bookkeeping for jets along `dim` directions up to `order` ≤ 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JetLayout {
    dim: usize,
    order: usize,
}

impl JetLayout {
    pub fn new(dim: usize, order: usize) -> Self {
        assert!(order <= 2, "jets are truncated at second order");
        Self { dim, order }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn streams(&self) -> usize {
        let mut s = 1;
        if self.order >= 1 {
            s += self.dim;
        }
        if self.order >= 2 {
            s += self.dim * (self.dim + 1) / 2;
        }
        s
    }

    /// Stream of ∂/∂xₖ.
    pub fn first(&self, k: usize) -> usize {
        debug_assert!(self.order >= 1 && k < self.dim);
        1 + k
    }

    /// Stream of ∂²/∂xₖ∂xₗ (symmetric in `k`, `l`).
    pub fn second(&self, k: usize, l: usize) -> usize {
        debug_assert!(self.order >= 2 && k < self.dim && l < self.dim);
        let (k, l) = if k <= l { (k, l) } else { (l, k) };
        // pairs enumerated row by row: (0,0),(0,1)..(0,d-1),(1,1)..
        let before: usize = (0..k).map(|i| self.dim - i).sum();
        1 + self.dim + before + (l - k)
    }

    /// `(k, l, stream)` for every second-order stream with `k ≤ l`.
    pub fn pairs(&self) -> Vec<(usize, usize, usize)> {
        if self.order < 2 {
            return Vec::new();
        }
        let mut out = Vec::new();
        for k in 0..self.dim {
            for l in k..self.dim {
                out.push((k, l, self.second(k, l)));
            }
        }
        out
    }
}

/// Jets of a vector-valued quantity at a batch of points.
#[derive(Debug, Clone, PartialEq)]
pub struct Jets {
    layout: JetLayout,
    points: usize,
    data: Array2<f64>,
}

impl Jets {
    pub fn zeros(layout: JetLayout, width: usize, points: usize) -> Self {
        Self {
            layout,
            points,
            data: Array2::zeros((width, layout.streams() * points)),
        }
    }

    /// Jets of the identity map at `points` (each of length `layout.dim()`).
    pub fn identity(layout: JetLayout, points: &[Vec<f64>]) -> Self {
        let d = layout.dim();
        let mut jets = Self::zeros(layout, d, points.len());
        for (p, x) in points.iter().enumerate() {
            assert_eq!(x.len(), d, "point dimension");
            for (i, &xi) in x.iter().enumerate() {
                jets.set(i, 0, p, xi);
                if layout.order() >= 1 {
                    jets.set(i, layout.first(i), p, 1.0);
                }
            }
        }
        jets
    }

    pub fn layout(&self) -> JetLayout {
        self.layout
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn width(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, row: usize, stream: usize, point: usize) -> f64 {
        self.data[[row, stream * self.points + point]]
    }

    pub fn set(&mut self, row: usize, stream: usize, point: usize, v: f64) {
        self.data[[row, stream * self.points + point]] = v;
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Intermediate values kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct JetTape {
    layout: JetLayout,
    points: usize,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    act: Vec<Array2<f64>>,
}

impl JetTape {
    pub fn layout(&self) -> JetLayout {
        self.layout
    }
}

fn weights(net: &Mlp, layer: usize) -> ArrayView2<'_, f64> {
    let l = net.layers()[layer];
    ArrayView2::from_shape((l.fan_out, l.fan_in), &net.params()[l.weights..l.bias])
        .expect("layout matches parameter vector")
}

fn is_tanh_hidden(net: &Mlp, layer: usize) -> bool {
    layer + 1 < net.layers().len() && net.activation() == Activation::Tanh
}

/// Push input jets through the network.
pub fn forward(net: &Mlp, input: &Jets) -> Result<(Jets, JetTape), NetworkError> {
    if input.width() != net.input_dim() {
        return Err(NetworkError::Dimension {
            expected: net.input_dim(),
            got: input.width(),
        });
    }
    let layout = input.layout;
    let np = input.points;
    let cols = layout.streams() * np;
    let pairs = layout.pairs();

    let mut tape = JetTape {
        layout,
        points: np,
        inputs: Vec::with_capacity(net.layers().len()),
        pre: Vec::new(),
        act: Vec::new(),
    };
    let mut a = input.data.clone();
    for (k, l) in net.layers().iter().enumerate() {
        let w = weights(net, k);
        let mut z = Array2::<f64>::zeros((l.fan_out, cols));
        general_mat_mul(1.0, &w, &a, 0.0, &mut z);
        let bias = &net.params()[l.bias..l.bias + l.fan_out];
        for (r, &b) in bias.iter().enumerate() {
            z.slice_mut(s![r, 0..np]).mapv_inplace(|v| v + b);
        }
        tape.inputs.push(a);
        if !is_tanh_hidden(net, k) {
            a = z;
            continue;
        }
        let mut out = Array2::<f64>::zeros((l.fan_out, cols));
        let mut act = Array2::<f64>::zeros((l.fan_out, np));
        {
            let zs = z.as_slice().expect("standard layout");
            let os = out.as_slice_mut().expect("standard layout");
            let acts = act.as_slice_mut().expect("standard layout");
            for r in 0..l.fan_out {
                let zr = &zs[r * cols..(r + 1) * cols];
                let or = &mut os[r * cols..(r + 1) * cols];
                let ar = &mut acts[r * np..(r + 1) * np];
                for p in 0..np {
                    let t = zr[p].tanh();
                    ar[p] = t;
                    or[p] = t;
                }
                if layout.order() >= 1 {
                    for kk in 0..layout.dim() {
                        let st = layout.first(kk) * np;
                        for p in 0..np {
                            let t = ar[p];
                            or[st + p] = (1.0 - t * t) * zr[st + p];
                        }
                    }
                }
                for &(k1, k2, sidx) in &pairs {
                    let (s0, s1, s2) = (sidx * np, layout.first(k1) * np, layout.first(k2) * np);
                    for p in 0..np {
                        let t = ar[p];
                        let d1 = 1.0 - t * t;
                        let d2 = -2.0 * t * d1;
                        or[s0 + p] = d1 * zr[s0 + p] + d2 * zr[s1 + p] * zr[s2 + p];
                    }
                }
            }
        }
        tape.pre.push(z);
        tape.act.push(act);
        a = out;
    }
    Ok((
        Jets {
            layout,
            points: np,
            data: a,
        },
        tape,
    ))
}

/// Adjoint of the tanh jet map of one layer: from ∂L/∂(activation jets) to
/// ∂L/∂(pre-activation jets).
fn activation_backward(
    layout: JetLayout,
    np: usize,
    z: &Array2<f64>,
    act: &Array2<f64>,
    abar: &Array2<f64>,
) -> Array2<f64> {
    let (rows, cols) = z.dim();
    let mut zbar = Array2::<f64>::zeros((rows, cols));
    let pairs = layout.pairs();
    let zs = z.as_slice().expect("standard layout");
    let acts = act.as_slice().expect("standard layout");
    let abs = abar.as_slice().expect("standard layout");
    let zbs = zbar.as_slice_mut().expect("standard layout");
    let mut d1bar = vec![0.0; np];
    let mut d2bar = vec![0.0; np];
    for r in 0..rows {
        let zr = &zs[r * cols..(r + 1) * cols];
        let ar = &acts[r * np..(r + 1) * np];
        let abr = &abs[r * cols..(r + 1) * cols];
        let zbr = &mut zbs[r * cols..(r + 1) * cols];
        d1bar.iter_mut().for_each(|v| *v = 0.0);
        d2bar.iter_mut().for_each(|v| *v = 0.0);
        for &(k1, k2, sidx) in &pairs {
            let (s0, s1, s2) = (sidx * np, layout.first(k1) * np, layout.first(k2) * np);
            for p in 0..np {
                let g = abr[s0 + p];
                if g == 0.0 {
                    continue;
                }
                let t = ar[p];
                let d1 = 1.0 - t * t;
                let d2 = -2.0 * t * d1;
                zbr[s0 + p] += d1 * g;
                d1bar[p] += g * zr[s0 + p];
                d2bar[p] += g * zr[s1 + p] * zr[s2 + p];
                zbr[s1 + p] += g * d2 * zr[s2 + p];
                zbr[s2 + p] += g * d2 * zr[s1 + p];
            }
        }
        if layout.order() >= 1 {
            for kk in 0..layout.dim() {
                let st = layout.first(kk) * np;
                for p in 0..np {
                    let g = abr[st + p];
                    let t = ar[p];
                    zbr[st + p] += (1.0 - t * t) * g;
                    d1bar[p] += g * zr[st + p];
                }
            }
        }
        for p in 0..np {
            let t = ar[p];
            let d1 = 1.0 - t * t;
            // d2 = -2 t d1, d1 = 1 - t², t = tanh(z)
            let d1_total = d1bar[p] - 2.0 * t * d2bar[p];
            let tbar = abr[p] - 2.0 * d1 * d2bar[p] - 2.0 * t * d1_total;
            zbr[p] = d1 * tbar;
        }
    }
    zbar
}

/// Back-propagate adjoints of the output jets. Parameter gradients are added
/// into `grad` (same layout as [`Mlp::params`]). Returns the adjoint of the
/// input jets when `want_input` is set.
pub fn backward(
    net: &Mlp,
    tape: &JetTape,
    output_adjoint: &Jets,
    grad: &mut [f64],
    want_input: bool,
) -> Result<Option<Array2<f64>>, NetworkError> {
    if grad.len() != net.param_count() {
        return Err(NetworkError::Dimension {
            expected: net.param_count(),
            got: grad.len(),
        });
    }
    if output_adjoint.width() != net.output_dim()
        || output_adjoint.points != tape.points
        || output_adjoint.layout != tape.layout
    {
        return Err(NetworkError::Dimension {
            expected: net.output_dim(),
            got: output_adjoint.width(),
        });
    }
    let np = tape.points;
    let nlayers = net.layers().len();
    let mut abar = output_adjoint.data.clone();
    let mut hidden = tape.pre.len();
    for k in (0..nlayers).rev() {
        let l = net.layers()[k];
        let zbar = if is_tanh_hidden(net, k) {
            hidden -= 1;
            activation_backward(tape.layout, np, &tape.pre[hidden], &tape.act[hidden], &abar)
        } else {
            abar
        };
        let a_in = &tape.inputs[k];
        let mut wbar = Array2::<f64>::zeros((l.fan_out, l.fan_in));
        general_mat_mul(1.0, &zbar, &a_in.t(), 0.0, &mut wbar);
        let wgrad = &mut grad[l.weights..l.bias];
        for (g, v) in wgrad.iter_mut().zip(wbar.iter()) {
            *g += v;
        }
        for r in 0..l.fan_out {
            grad[l.bias + r] += zbar.slice(s![r, 0..np]).sum();
        }
        if k > 0 || want_input {
            let w = weights(net, k);
            let mut prev = Array2::<f64>::zeros((l.fan_in, zbar.ncols()));
            general_mat_mul(1.0, &w.t(), &zbar, 0.0, &mut prev);
            abar = prev;
        } else {
            return Ok(None);
        }
    }
    Ok(Some(abar))
}
