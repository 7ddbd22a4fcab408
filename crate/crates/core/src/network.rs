//! Layer weights of a fully connected network and the forward pass.

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::Activation;
use crate::error::{LpomError, Result};
use crate::par::Parallelism;
use crate::tensor::Matrix;

/// Weights `W¹..Wⁿ⁻¹`. `layers[i]` maps block `i` to block `i + 1`.
///
/// With `bias` set, each matrix carries one extra trailing column that multiplies an
/// implicit constant-one row appended to its input, so `Wⁱ` is `nᵢ₊₁ × (nᵢ + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    layers: Vec<Matrix>,
    bias: bool,
}

impl Weights {
    pub fn new(layers: Vec<Matrix>, bias: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(LpomError::Empty("Weights::new"));
        }
        let extra = usize::from(bias);
        for pair in layers.windows(2) {
            if pair[1].cols() != pair[0].rows() + extra {
                return Err(LpomError::DimensionMismatch {
                    op: "Weights::new",
                    left: pair[0].shape(),
                    right: pair[1].shape(),
                });
            }
        }
        if layers[0].cols() <= extra {
            return Err(LpomError::Empty("Weights::new (input width)"));
        }
        Ok(Weights { layers, bias })
    }

    /// Glorot-uniform weights, `U[−√(6/(nᵢ+nᵢ₊₁)), +√(6/(nᵢ+nᵢ₊₁))]`, zero biases.
    pub fn glorot(layer_sizes: &[usize], bias: bool, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(LpomError::Config(format!(
                "need at least two positive layer sizes, got {layer_sizes:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = glorot_bound(fan_in, fan_out);
                let cols = fan_in + usize::from(bias);
                Matrix::from_fn(fan_out, cols, |_, c| {
                    if c < fan_in {
                        rng.random_range(-bound..=bound)
                    } else {
                        0.0
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Weights::new(layers, bias)
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    /// Number of weight matrices, `n − 1`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Matrix {
        &self.layers[i]
    }

    pub fn set_layer(&mut self, i: usize, w: Matrix) -> Result<()> {
        if w.shape() != self.layers[i].shape() {
            return Err(LpomError::DimensionMismatch {
                op: "Weights::set_layer",
                left: self.layers[i].shape(),
                right: w.shape(),
            });
        }
        self.layers[i] = w;
        Ok(())
    }

    pub fn into_layers(self) -> Vec<Matrix> {
        self.layers
    }

    /// `n₁..nₙ`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(Matrix::rows));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols() - usize::from(self.bias)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Matrix::rows)
    }

    /// `Wⁱ` without its bias column.
    pub fn linear_part(&self, i: usize) -> Matrix {
        let w = &self.layers[i];
        let n = w.cols() - usize::from(self.bias);
        Matrix::from_array_unchecked(w.leading_columns(n).to_owned())
    }

    /// The input block as the weight matrix sees it (ones row appended with bias).
    pub fn lift_input(&self, x: &Matrix) -> Matrix {
        if self.bias {
            x.append_ones_row()
        } else {
            x.clone()
        }
    }

    /// `Wⁱ Xⁱ` (plus bias).
    pub fn pre_activation(&self, i: usize, x: &Matrix) -> Result<Matrix> {
        let w = &self.layers[i];
        let n = w.cols() - usize::from(self.bias);
        if x.rows() != n {
            return Err(LpomError::DimensionMismatch {
                op: "pre_activation",
                left: w.shape(),
                right: x.shape(),
            });
        }
        let wa = w.as_array();
        let mut out: Array2<f64> = wa.slice(s![.., ..n]).dot(x.as_array());
        if self.bias {
            let b = wa.column(n);
            out += &b.insert_axis(Axis(1));
        }
        Matrix::from_array(out)
    }

    /// `(Wⁱ)ᵀ R` over the linear part only.
    pub fn transpose_apply(&self, i: usize, r: &Matrix) -> Result<Matrix> {
        let w = &self.layers[i];
        let n = w.cols() - usize::from(self.bias);
        if r.rows() != w.rows() {
            return Err(LpomError::DimensionMismatch {
                op: "transpose_apply",
                left: w.shape(),
                right: r.shape(),
            });
        }
        Matrix::from_array(w.as_array().slice(s![.., ..n]).t().dot(r.as_array()))
    }

    /// `X²..Xⁿ` with `Xⁱ⁺¹ = φ(Wⁱ Xⁱ)`.
    pub fn feedforward(&self, act: Activation, input: &Matrix) -> Result<Vec<Matrix>> {
        let mut out: Vec<Matrix> = Vec::with_capacity(self.depth());
        for i in 0..self.depth() {
            let prev = out.last().unwrap_or(input);
            let z = self.pre_activation(i, prev)?;
            out.push(act.apply(&z));
        }
        Ok(out)
    }

    /// Network output `Xⁿ` only.
    pub fn forward(&self, act: Activation, input: &Matrix) -> Result<Matrix> {
        Ok(self.feedforward(act, input)?.pop().expect("depth >= 1"))
    }

    /// Class index per column: argmax over output rows, lowest index on ties.
    pub fn predict(&self, act: Activation, inputs: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_columns(&self.forward(act, inputs)?))
    }

    /// [`predict`](Self::predict) over column chunks of `chunk` samples, possibly in
    /// parallel. Results are identical to the unchunked call.
    pub fn predict_chunked(
        &self,
        act: Activation,
        inputs: &Matrix,
        chunk: usize,
        par: Parallelism,
    ) -> Result<Vec<usize>> {
        let n = inputs.cols();
        let chunk = chunk.max(1);
        let pieces = par.map(n.div_ceil(chunk), |c| {
            let end = ((c + 1) * chunk).min(n);
            self.predict(act, &inputs.column_range(c * chunk, end))
        });
        let mut out = Vec::with_capacity(n);
        for p in pieces {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Weights> {
        let layers = self
            .layers
            .iter()
            .map(|w| w.scale(factor))
            .collect::<Result<Vec<_>>>()?;
        Weights::new(layers, self.bias)
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn argmax_columns(out: &Matrix) -> Vec<usize> {
    out.as_array()
        .axis_iter(Axis(1))
        .map(|col| {
            let mut best = 0;
            for (k, &v) in col.iter().enumerate() {
                if v > col[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
