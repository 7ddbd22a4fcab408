//! The lifted objective and its activation-block solvers.
//!
//! Blocks are indexed from zero: block 0 is the input batch `X¹`, block `L` (the
//! network depth) is the output `Xⁿ`. Penalty `μ` for block `j ≥ 1` couples it to
//! `Wʲ⁻¹ Xʲ⁻¹`. With all other blocks fixed each activation block is the unique
//! minimizer of a convex problem, found here by a fixed-point iteration whose
//! contraction factor (`ρ` for hidden blocks, `τ` for the output) is available as a
//! certificate.

use log::warn;

use crate::activation::{Activation, ExtReal, Quadrature};
use crate::error::{LpomError, Result};
use crate::network::Weights;
use crate::tensor::{abs_gram_norms, Matrix};

/// Entries this close to the closed range of φ count as on it when evaluating `f̃`.
const RANGE_SLACK: f64 = 1e-12;

/// Output loss `ℓ(Xⁿ, L)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Loss {
    /// `½‖Xⁿ − L‖²_F`.
    #[default]
    LeastSquares,
}

impl Loss {
    /// Bound η on the 1-norm of the entry-wise absolute Hessian.
    pub fn hessian_abs_norm_bound(&self) -> f64 {
        match self {
            Loss::LeastSquares => 1.0,
        }
    }

    pub fn value(&self, out: &Matrix, labels: &Matrix) -> Result<f64> {
        match self {
            Loss::LeastSquares => Ok(0.5 * out.sub(labels)?.frobenius_norm().powi(2)),
        }
    }

    pub fn gradient(&self, out: &Matrix, labels: &Matrix) -> Result<Matrix> {
        match self {
            Loss::LeastSquares => out.sub(labels),
        }
    }
}

/// `μ₂..μₙ`, one positive weight per non-input block.
#[derive(Clone, Debug, PartialEq)]
pub struct Penalties(Vec<f64>);

impl Penalties {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(LpomError::Empty("Penalties::new"));
        }
        if let Some(bad) = mu.iter().find(|&&m| !(m > 0.0 && m.is_finite())) {
            return Err(LpomError::Config(format!("penalty weights must be > 0, got {bad}")));
        }
        Ok(Penalties(mu))
    }

    pub fn uniform(mu: f64, depth: usize) -> Result<Self> {
        Self::new(vec![mu; depth])
    }

    /// `μ` of block `j` (`1 ≤ j ≤ depth`).
    pub fn mu(&self, block: usize) -> f64 {
        self.0[block - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Weights plus one batch's activation blocks.
#[derive(Clone, Debug)]
pub struct NetworkState {
    pub weights: Weights,
    /// `X¹..Xⁿ`; `blocks[0]` is the input batch and is never updated.
    pub blocks: Vec<Matrix>,
    pub activation: Activation,
    pub penalties: Penalties,
}

impl NetworkState {
    /// Activation blocks initialized by the forward pass.
    pub fn from_feedforward(
        weights: Weights,
        activation: Activation,
        penalties: Penalties,
        input: Matrix,
    ) -> Result<Self> {
        let mut blocks = vec![input];
        blocks.extend(weights.feedforward(activation, &blocks[0])?);
        Self::new(weights, blocks, activation, penalties)
    }

    pub fn new(weights: Weights, blocks: Vec<Matrix>, activation: Activation, penalties: Penalties) -> Result<Self> {
        let state = NetworkState {
            weights,
            blocks,
            activation,
            penalties,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn depth(&self) -> usize {
        self.weights.depth()
    }

    pub fn batch_size(&self) -> usize {
        self.blocks[0].cols()
    }

    /// Shape chain, penalty count, and range membership of every non-input block.
    pub fn validate(&self) -> Result<()> {
        let depth = self.depth();
        if self.blocks.len() != depth + 1 {
            return Err(LpomError::Config(format!(
                "{} blocks for {} weight layers",
                self.blocks.len(),
                depth
            )));
        }
        if self.penalties.len() != depth {
            return Err(LpomError::Config(format!(
                "{} penalty weights for {} weight layers",
                self.penalties.len(),
                depth
            )));
        }
        let sizes = self.weights.layer_sizes();
        let m = self.batch_size();
        for (j, (x, &n)) in self.blocks.iter().zip(&sizes).enumerate() {
            if x.shape() != (n, m) {
                return Err(LpomError::DimensionMismatch {
                    op: "NetworkState block",
                    left: (n, m),
                    right: x.shape(),
                });
            }
            if j > 0 {
                let (lo, hi) = self.activation.range_closure();
                if let Some(&v) = x
                    .as_array()
                    .iter()
                    .find(|&&v| v < lo - RANGE_SLACK || v > hi + RANGE_SLACK)
                {
                    return Err(LpomError::Domain {
                        what: format!("block {j} (range of {})", self.activation),
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }
}

/// The lifted objective
/// `ℓ(Xⁿ,L) + Σⱼ μⱼ (𝟏ᵀf̃(Xʲ)𝟏 + 𝟏ᵀg̃(Wʲ⁻¹Xʲ⁻¹)𝟏 − ⟨Xʲ, Wʲ⁻¹Xʲ⁻¹⟩)`.
pub fn objective(state: &NetworkState, labels: &Matrix, loss: Loss, quad: Quadrature) -> Result<ExtReal> {
    let act = state.activation;
    let depth = state.depth();
    let mut total = ExtReal::Finite(loss.value(&state.blocks[depth], labels)?);
    for j in 1..=depth {
        let x = &state.blocks[j];
        let z = state.weights.pre_activation(j - 1, &state.blocks[j - 1])?;
        let f = act.f_tilde_sum(&snap_to_range(act, x), quad)?;
        let g = act.g_tilde_sum(&z, quad)?;
        let cross = x.frobenius_dot(&z)?;
        let mu = state.penalties.mu(j);
        total = total + f.map(|f| mu * (f + g - cross));
        if total.is_infinite() {
            break;
        }
    }
    Ok(total)
}

fn snap_to_range(act: Activation, x: &Matrix) -> Matrix {
    let (lo, hi) = act.range_closure();
    let mut data = x.as_array().clone();
    data.mapv_inplace(|v| {
        if v < lo && v > lo - RANGE_SLACK {
            lo
        } else if v > hi && v < hi + RANGE_SLACK {
            hi
        } else {
            v
        }
    });
    Matrix::from_array_unchecked(data)
}

/// `ρ = (μⱼ₊₁/μⱼ) γ² √(‖|Wʲᵀ||Wʲ|‖₁ ‖|Wʲᵀ||Wʲ|‖_∞)` for hidden block `j`; `ρ < 1`
/// certifies linear convergence of [`x_hidden_update`].
pub fn contraction_rho(state: &NetworkState, block: usize) -> Result<f64> {
    check_hidden(state, block)?;
    rho_from_weights(&state.weights, state.activation, &state.penalties, block)
}

/// [`contraction_rho`] from the weights and penalties alone; the activation blocks
/// do not enter the bound.
pub fn rho_from_weights(weights: &Weights, act: Activation, penalties: &Penalties, block: usize) -> Result<f64> {
    if block == 0 || block >= weights.depth() || penalties.len() != weights.depth() {
        return Err(LpomError::Config(format!(
            "block {block} is not a hidden block of a depth-{} network with {} penalties",
            weights.depth(),
            penalties.len()
        )));
    }
    let ratio = penalties.mu(block + 1) / penalties.mu(block);
    rho_for(&weights.linear_part(block), ratio, act.gamma())
}

pub(crate) fn rho_for(w: &Matrix, ratio: f64, gamma: f64) -> Result<f64> {
    let (n1, ninf) = abs_gram_norms(w)?;
    Ok(ratio * gamma * gamma * (n1 * ninf).sqrt())
}

/// `τ = γη/μₙ`; `τ < 1` certifies linear convergence of [`x_output_update`].
pub fn contraction_tau(state: &NetworkState, loss: Loss) -> f64 {
    tau_for(state.activation, loss, state.penalties.mu(state.depth()))
}

pub fn tau_for(act: Activation, loss: Loss, mu_out: f64) -> f64 {
    act.gamma() * loss.hessian_abs_norm_bound() / mu_out
}

fn check_hidden(state: &NetworkState, block: usize) -> Result<()> {
    if block == 0 || block >= state.depth() {
        return Err(LpomError::Config(format!(
            "block {block} is not a hidden block (valid: 1..{})",
            state.depth()
        )));
    }
    Ok(())
}

/// What to do when the contraction certificate fails (`ρ ≥ 1` or `τ ≥ 1`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Damping {
    /// Iterate the plain map anyway (a warning is still logged).
    #[default]
    Off,
    /// Relax each step, `X ← (1−λ)X + λ·map(X)` with `λ = min(1, 0.9/ρ)`. The
    /// fixed points are unchanged.
    Safeguard,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPointOptions {
    pub max_iter: usize,
    /// Stop once `‖Xᵗ⁺¹ − Xᵗ‖_F ≤ tol·(1 + ‖Xᵗ‖_F)`.
    pub tol: f64,
    pub damping: Damping,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            max_iter: 10,
            tol: 1e-6,
            damping: Damping::Off,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockSolve {
    pub x: Matrix,
    pub iterations: usize,
    pub converged: bool,
    /// Contraction bound of the map (`ρ` or `τ`).
    pub certificate: f64,
    /// Relaxation factor actually used (1 when undamped).
    pub relaxation: f64,
    /// `‖Xᵗ⁺¹ − Xᵗ‖_F` per iteration.
    pub steps: Vec<f64>,
}

pub trait FixedPointMap {
    fn apply(&self, x: &Matrix) -> Result<Matrix>;
    /// Lipschitz bound of [`apply`](Self::apply).
    fn certificate(&self) -> f64;
    fn describe(&self) -> String;
}

/// `X ↦ φ(Wʲ⁻¹Xʲ⁻¹ − (μⱼ₊₁/μⱼ)(Wʲ)ᵀ(φ(WʲX) − Xʲ⁺¹))`.
pub struct HiddenBlockMap<'a> {
    block: usize,
    base: Matrix,
    ratio: f64,
    weights: &'a Weights,
    upper: &'a Matrix,
    act: Activation,
    rho: f64,
}

impl<'a> HiddenBlockMap<'a> {
    pub fn new(state: &'a NetworkState, block: usize) -> Result<Self> {
        check_hidden(state, block)?;
        let ratio = state.penalties.mu(block + 1) / state.penalties.mu(block);
        Self::with_ratio(state, block, ratio)
    }

    /// Same map with an explicit `μⱼ₊₁/μⱼ` (0 recovers the forward pass).
    pub fn with_ratio(state: &'a NetworkState, block: usize, ratio: f64) -> Result<Self> {
        check_hidden(state, block)?;
        let base = state.weights.pre_activation(block - 1, &state.blocks[block - 1])?;
        Self::build(state, block, ratio, base)
    }

    /// The map with `Wʲ⁻¹Xʲ⁻¹` supplied by the caller, who keeps it in sync with
    /// the state.
    pub fn with_base(state: &'a NetworkState, block: usize, base: Matrix) -> Result<Self> {
        check_hidden(state, block)?;
        if base.shape() != state.blocks[block].shape() {
            return Err(LpomError::DimensionMismatch {
                op: "hidden block base",
                left: state.blocks[block].shape(),
                right: base.shape(),
            });
        }
        let ratio = state.penalties.mu(block + 1) / state.penalties.mu(block);
        Self::build(state, block, ratio, base)
    }

    fn build(state: &'a NetworkState, block: usize, ratio: f64, base: Matrix) -> Result<Self> {
        let rho = rho_for(&state.weights.linear_part(block), ratio, state.activation.gamma())?;
        Ok(HiddenBlockMap {
            block,
            base,
            ratio,
            weights: &state.weights,
            upper: &state.blocks[block + 1],
            act: state.activation,
            rho,
        })
    }
}

impl FixedPointMap for HiddenBlockMap<'_> {
    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let resid = self
            .act
            .apply(&self.weights.pre_activation(self.block, x)?)
            .sub(self.upper)?;
        let pull = self.weights.transpose_apply(self.block, &resid)?;
        Ok(self.act.apply(&self.base.lin_comb(1.0, &pull, -self.ratio)?))
    }

    fn certificate(&self) -> f64 {
        self.rho
    }

    fn describe(&self) -> String {
        format!("hidden block {} (rho)", self.block)
    }
}

/// `X ↦ φ(Wⁿ⁻¹Xⁿ⁻¹ − (1/μₙ) ∂ℓ(X, L)/∂X)`.
pub struct OutputBlockMap<'a> {
    base: Matrix,
    inv_mu: f64,
    labels: &'a Matrix,
    loss: Loss,
    act: Activation,
    tau: f64,
}

impl<'a> OutputBlockMap<'a> {
    pub fn new(state: &NetworkState, labels: &'a Matrix, loss: Loss) -> Result<Self> {
        let depth = state.depth();
        if labels.shape() != state.blocks[depth].shape() {
            return Err(LpomError::DimensionMismatch {
                op: "output block labels",
                left: state.blocks[depth].shape(),
                right: labels.shape(),
            });
        }
        let base = state.weights.pre_activation(depth - 1, &state.blocks[depth - 1])?;
        let mu = state.penalties.mu(depth);
        Ok(OutputBlockMap {
            base,
            inv_mu: 1.0 / mu,
            labels,
            loss,
            act: state.activation,
            tau: contraction_tau(state, loss),
        })
    }
}

impl FixedPointMap for OutputBlockMap<'_> {
    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let grad = self.loss.gradient(x, self.labels)?;
        Ok(self.act.apply(&self.base.lin_comb(1.0, &grad, -self.inv_mu)?))
    }

    fn certificate(&self) -> f64 {
        self.tau
    }

    fn describe(&self) -> String {
        "output block (tau)".into()
    }
}

fn warn_uncertified(map: &impl FixedPointMap, damping: Damping) {
    let cert = map.certificate();
    if cert >= 1.0 {
        warn!(
            "{}: contraction bound {cert:.4} >= 1, convergence not certified{}",
            map.describe(),
            if damping == Damping::Safeguard { "; damping" } else { "" }
        );
    }
}

/// Iterates `map` from `start` under the stopping rule in `opts`. Unlike the block
/// updates below it does not log when the certificate fails; check
/// [`BlockSolve::certificate`].
pub fn iterate_fixed_point(map: &impl FixedPointMap, start: &Matrix, opts: FixedPointOptions) -> Result<BlockSolve> {
    let cert = map.certificate();
    let relaxation = if cert >= 1.0 {
        match opts.damping {
            Damping::Safeguard => (0.9 / cert).min(1.0),
            Damping::Off => 1.0,
        }
    } else {
        1.0
    };

    let mut x = start.clone();
    let mut steps = Vec::with_capacity(opts.max_iter);
    let mut converged = false;
    for t in 0..opts.max_iter {
        let mapped = map.apply(&x).map_err(|e| match e {
            LpomError::NonFinite(msg) => LpomError::NonFinite(format!("{} iteration {t}: {msg}", map.describe())),
            other => other,
        })?;
        let next = if relaxation < 1.0 {
            x.lin_comb(1.0 - relaxation, &mapped, relaxation)?
        } else {
            mapped
        };
        let step = next.sub(&x)?.frobenius_norm();
        let scale = 1.0 + x.frobenius_norm();
        steps.push(step);
        x = next;
        if step <= opts.tol * scale {
            converged = true;
            break;
        }
    }
    Ok(BlockSolve {
        x,
        iterations: steps.len(),
        converged,
        certificate: cert,
        relaxation,
        steps,
    })
}

/// Solves hidden block `j` (`1 ≤ j < depth`) starting from its current value.
pub fn x_hidden_update(state: &NetworkState, block: usize, opts: FixedPointOptions) -> Result<BlockSolve> {
    let map = HiddenBlockMap::new(state, block)?;
    warn_uncertified(&map, opts.damping);
    iterate_fixed_point(&map, &state.blocks[block], opts)
}

/// Solves the output block starting from its current value.
pub fn x_output_update(
    state: &NetworkState,
    labels: &Matrix,
    loss: Loss,
    opts: FixedPointOptions,
) -> Result<BlockSolve> {
    let map = OutputBlockMap::new(state, labels, loss)?;
    warn_uncertified(&map, opts.damping);
    iterate_fixed_point(&map, &state.blocks[state.depth()], opts)
}
