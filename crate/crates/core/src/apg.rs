//! Accelerated proximal gradient for `min_x F(x) = φ(Ax) + h(x)` with the
//! linearization taken in the image of `A`:
//!
//! ```text
//! x_{k+1} = argmin_x ⟨∇φ(Ay_k), A(x − y_k)⟩ + (L_φ/2)‖A(x − y_k)‖² + h(x)
//! ```
//!
//! The extrapolation weights come from `1 − θ_k = √θ_k (1 − θ_{k−1})`, `θ_0 = 0`, and
//! `y_k = θ_k x_k − √θ_k (θ_{k−1} x_{k−1} − x_k)`. The Lyapunov quantity
//! `F(x_k) − F* + (L_φ/2)‖z_k‖²`, `z_k = A[θ_{k−1}x_{k−1} − x_k + (1 − θ_{k−1})x*]`,
//! then decays at least as fast as `4/k²` (see [`certify_rate`]).
//!
//! Penalizing `‖A(x − y)‖²` instead of `‖x − y‖²` matters for the weight update: there
//! `A = (·)X` and the usual step would scale with `‖X‖₂²`.

use crate::activation::{Activation, Quadrature};
use crate::error::{LpomError, Result};
use crate::tensor::{default_ridge, GramSide, Matrix, PseudoInverse, DEFAULT_RIDGE_SCALE};

/// `θ_{k−1}`, `θ_k` and the step counter `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaSchedule {
    pub k: usize,
    pub theta_prev: f64,
    pub theta: f64,
}

impl Default for ThetaSchedule {
    fn default() -> Self {
        ThetaSchedule::new()
    }
}

impl ThetaSchedule {
    /// `k = 0`, `θ_0 = 0`.
    pub fn new() -> Self {
        ThetaSchedule {
            k: 0,
            theta_prev: 0.0,
            theta: 0.0,
        }
    }

    pub fn next(self) -> Self {
        ThetaSchedule {
            k: self.k + 1,
            theta_prev: self.theta,
            theta: theta_next(self.theta),
        }
    }
}

impl Iterator for ThetaSchedule {
    type Item = ThetaSchedule;

    /// Yields `k = 1, 2, …`.
    fn next(&mut self) -> Option<ThetaSchedule> {
        *self = ThetaSchedule::next(*self);
        Some(*self)
    }
}

/// The root in `(0, 1]` of `(1 − θ)² = θ (1 − θ_prev)²`.
///
/// With `c = 1 − θ_prev` the quadratic is `θ² − (2 + c²)θ + 1 = 0`; the small root is
/// evaluated as `1 − c(√(4 + c²) − c)/2` to avoid cancellation in the discriminant.
pub fn theta_next(theta_prev: f64) -> f64 {
    let c = 1.0 - theta_prev;
    1.0 - 0.5 * c * ((4.0 + c * c).sqrt() - c)
}

/// A composite problem `φ(Ax) + h(x)` over matrix-valued iterates.
pub trait ApgProblem {
    /// `L_φ`, the Lipschitz constant of `∇φ`.
    fn smooth_lipschitz(&self) -> f64;
    fn apply_a(&self, x: &Matrix) -> Result<Matrix>;
    /// `∇φ(u)` at an image point `u = Ay`.
    fn grad_smooth(&self, u: &Matrix) -> Result<Matrix>;
    /// Exact minimizer of the linearized subproblem anchored at `y`.
    fn solve_subproblem(&self, y: &Matrix) -> Result<Matrix>;
    /// `F(x)`.
    fn objective(&self, x: &Matrix) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApgOptions {
    pub max_iter: usize,
    /// Stop once `‖x_{k+1} − x_k‖_F ≤ rel_tol·(1 + ‖x_k‖_F)`; `None` runs all steps.
    pub rel_tol: Option<f64>,
    /// Keep every iterate `x_0, x_1, …` for certificates.
    pub record_trace: bool,
}

impl Default for ApgOptions {
    fn default() -> Self {
        ApgOptions {
            max_iter: 30,
            rel_tol: Some(1e-7),
            record_trace: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ApgOutcome {
    pub x: Matrix,
    pub steps: usize,
    pub converged: bool,
    /// `x_0, x_1, …, x_{steps+1}` when requested.
    pub trace: Vec<Matrix>,
}

/// Runs the accelerated scheme from seeds `x_0`, `x_1` for at most `opts.max_iter` steps
/// and returns the last iterate.
pub fn apg_solve<P: ApgProblem + ?Sized>(prob: &P, x0: Matrix, x1: Matrix, opts: ApgOptions) -> Result<ApgOutcome> {
    if opts.max_iter == 0 {
        return Err(LpomError::Config("apg_solve needs at least one step".into()));
    }
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(x0.clone());
        trace.push(x1.clone());
    }
    let (mut prev, mut cur) = (x0, x1);
    let mut sched = ThetaSchedule::new();
    let mut converged = false;
    let mut steps = 0;
    for _ in 0..opts.max_iter {
        sched = sched.next();
        let root = sched.theta.sqrt();
        let y = cur.lin_comb(sched.theta + root, &prev, -root * sched.theta_prev)?;
        let next = prob.solve_subproblem(&y).map_err(|e| match e {
            LpomError::NonFinite(msg) => LpomError::NonFinite(format!("APG step {}: {msg}", sched.k)),
            other => other,
        })?;
        steps += 1;
        if opts.record_trace {
            trace.push(next.clone());
        }
        let done = match opts.rel_tol {
            Some(tol) => next.sub(&cur)?.frobenius_norm() <= tol * (1.0 + cur.frobenius_norm()),
            None => false,
        };
        prev = std::mem::replace(&mut cur, next);
        if done {
            converged = true;
            break;
        }
    }
    Ok(ApgOutcome {
        x: cur,
        steps,
        converged,
        trace,
    })
}

/// One step of the rate certificate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateCertificate {
    pub k: usize,
    /// `F(x_k) − F(x*)`.
    pub gap: f64,
    /// `‖z_k‖²`.
    pub z_norm_sq: f64,
    /// `gap + (L_φ/2)‖z_k‖²`.
    pub lyapunov: f64,
    /// `(4/k²)` times the `k = 1` Lyapunov value.
    pub bound: f64,
    /// `(Π_{i<k} θ_i)` times the `k = 1` Lyapunov value, the sharper form of `bound`.
    pub product_bound: f64,
    /// `bound − lyapunov`; negative means the inequality is violated.
    pub slack: f64,
}

/// Evaluates the Lyapunov inequality at every step of a recorded trace
/// `x_0, x_1, …` against an optimal `x*`.
pub fn certify_rate<P: ApgProblem + ?Sized>(
    prob: &P,
    trace: &[Matrix],
    x_star: &Matrix,
) -> Result<Vec<RateCertificate>> {
    if trace.len() < 2 {
        return Err(LpomError::Config("certify_rate needs x_0 and x_1".into()));
    }
    let f_star = prob.objective(x_star)?;
    let half_l = 0.5 * prob.smooth_lipschitz();
    let mut out: Vec<RateCertificate> = Vec::with_capacity(trace.len() - 1);
    // θ_{k−1} for k = 1 is θ_0 = 0.
    let mut sched = ThetaSchedule::new();
    for k in 1..trace.len() {
        let theta_prev = sched.theta;
        let inner = trace[k - 1]
            .lin_comb(theta_prev, &trace[k], -1.0)?
            .lin_comb(1.0, x_star, 1.0 - theta_prev)?;
        let z_norm_sq = prob.apply_a(&inner)?.frobenius_norm().powi(2);
        let gap = prob.objective(&trace[k])? - f_star;
        let lyapunov = gap + half_l * z_norm_sq;
        let first = out.first().map_or(lyapunov, |c| c.lyapunov);
        let bound = 4.0 / (k * k) as f64 * first;
        let one_minus = 1.0 - theta_prev;
        let product_bound = if k == 1 { first } else { one_minus * one_minus * first };
        out.push(RateCertificate {
            k,
            gap,
            z_norm_sq,
            lyapunov,
            bound,
            product_bound,
            slack: bound - lyapunov,
        });
        sched = sched.next();
    }
    Ok(out)
}

/// How the ridge of the pseudo-inverse is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ridge {
    /// `scale · trace(XXᵀ)/rows(X)`.
    Relative(f64),
    Absolute(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(DEFAULT_RIDGE_SCALE)
    }
}

impl Ridge {
    pub fn resolve(self, x: &Matrix) -> f64 {
        match self {
            Ridge::Relative(s) => s / DEFAULT_RIDGE_SCALE * default_ridge(x),
            Ridge::Absolute(v) => v,
        }
    }
}

/// The weight subproblem `min_W 𝟏ᵀg̃(WX)𝟏 − ⟨X⁺, WX⟩` as an instance of
/// [`ApgProblem`] with `A = (·)X`, `φ(U) = 𝟏ᵀg̃(U)𝟏 − ⟨X⁺, U⟩`, `h = 0`, `L_φ = β`.
///
/// `input` is the block the weights multiply (with the ones row already appended when
/// the layer has a bias), `target` the block above.
pub struct WeightProblem<'a> {
    input: &'a Matrix,
    target: &'a Matrix,
    act: Activation,
    pinv: PseudoInverse,
}

impl<'a> WeightProblem<'a> {
    pub fn new(input: &'a Matrix, target: &'a Matrix, act: Activation, ridge: Ridge) -> Result<Self> {
        Self::build(input, target, act, ridge, None)
    }

    fn build(
        input: &'a Matrix,
        target: &'a Matrix,
        act: Activation,
        ridge: Ridge,
        side: Option<GramSide>,
    ) -> Result<Self> {
        if input.cols() != target.cols() {
            return Err(LpomError::DimensionMismatch {
                op: "WeightProblem",
                left: input.shape(),
                right: target.shape(),
            });
        }
        let lambda = ridge.resolve(input);
        let pinv = match side {
            Some(side) => PseudoInverse::with_side(input, lambda, side)?,
            None => PseudoInverse::new(input, lambda)?,
        };
        Ok(WeightProblem {
            input,
            target,
            act,
            pinv,
        })
    }

    pub fn pseudo_inverse(&self) -> &PseudoInverse {
        &self.pinv
    }
}

impl ApgProblem for WeightProblem<'_> {
    fn smooth_lipschitz(&self) -> f64 {
        self.act.beta()
    }

    fn apply_a(&self, w: &Matrix) -> Result<Matrix> {
        w.matmul(self.input)
    }

    fn grad_smooth(&self, u: &Matrix) -> Result<Matrix> {
        self.act.apply(u).sub(self.target)
    }

    fn solve_subproblem(&self, y: &Matrix) -> Result<Matrix> {
        let resid = self.grad_smooth(&self.apply_a(y)?)?;
        let step = self.pinv.apply_right(&resid)?;
        y.lin_comb(1.0, &step, -1.0 / self.act.beta())
    }

    fn objective(&self, w: &Matrix) -> Result<f64> {
        let u = self.apply_a(w)?;
        Ok(self.act.g_tilde_sum(&u, Quadrature::Allowed)? - self.target.frobenius_dot(&u)?)
    }
}

/// Which algebraic route [`weight_update`] takes. Both produce the same iterates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightRoute {
    /// Image route when the batch is no wider than the input, weight route otherwise.
    #[default]
    Auto,
    /// Iterate on `W` directly through [`apg_solve`] and [`WeightProblem`].
    Weights,
    /// Iterate on the coefficients `C` of `W = W₁ + C X†`, so each step costs
    /// `O(c·m²)` instead of `O(c·n·m)`.
    Image,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightUpdateOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub ridge: Ridge,
    pub route: WeightRoute,
}

impl Default for WeightUpdateOptions {
    fn default() -> Self {
        WeightUpdateOptions {
            max_iter: 30,
            rel_tol: 1e-7,
            ridge: Ridge::default(),
            route: WeightRoute::Auto,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WeightSolve {
    pub w: Matrix,
    pub steps: usize,
    pub converged: bool,
}

/// Minimizes `𝟏ᵀg̃(WX)𝟏 − ⟨X⁺, WX⟩` over `W` with the accelerated scheme seeded at
/// `x_0 = x_1 = w_init`, each step being
/// `W ← Y − (1/β)(φ(YX) − X⁺)X†`.
pub fn weight_update(
    w_init: &Matrix,
    input: &Matrix,
    target: &Matrix,
    act: Activation,
    opts: WeightUpdateOptions,
) -> Result<WeightSolve> {
    if w_init.cols() != input.rows() || w_init.rows() != target.rows() {
        return Err(LpomError::DimensionMismatch {
            op: "weight_update",
            left: w_init.shape(),
            right: (target.rows(), input.rows()),
        });
    }
    let image = match opts.route {
        WeightRoute::Auto => input.cols() <= input.rows(),
        WeightRoute::Weights => false,
        WeightRoute::Image => true,
    };
    if image {
        return weight_update_image(w_init, input, target, act, opts);
    }
    let prob = WeightProblem::new(input, target, act, opts.ridge)?;
    let out = apg_solve(
        &prob,
        w_init.clone(),
        w_init.clone(),
        ApgOptions {
            max_iter: opts.max_iter,
            rel_tol: Some(opts.rel_tol),
            record_trace: false,
        },
    )?;
    Ok(WeightSolve {
        w: out.x,
        steps: out.steps,
        converged: out.converged,
    })
}

/// Every iterate is `W₁ + C X†`, so the scheme runs on `C` (`c×m`) and the image
/// `U = W X = W₁X + C G` with `G = X†X`. Step sizes in weight space are measured
/// through `H = X†X†ᵀ`: `‖C X†‖²_F = ⟨C H, C⟩`.
fn weight_update_image(
    w_init: &Matrix,
    input: &Matrix,
    target: &Matrix,
    act: Activation,
    opts: WeightUpdateOptions,
) -> Result<WeightSolve> {
    if opts.max_iter == 0 {
        return Err(LpomError::Config("weight_update needs at least one step".into()));
    }
    let lambda = opts.ridge.resolve(input);
    let pinv = PseudoInverse::new(input, lambda)?;
    let g = pinv.projector()?;
    let h = pinv.pinv_gram()?;
    let inv_beta = 1.0 / act.beta();
    let (c_rows, m) = (w_init.rows(), input.cols());

    let u1 = w_init.matmul(input)?;
    // ⟨W₁, C X†⟩ = ⟨W₁ X†ᵀ, C⟩ and W₁ X†ᵀ = (X† W₁ᵀ)ᵀ.
    let w1_pt = pinv.apply_right(&Matrix::identity(m))?.matmul_t(w_init)?.transpose();
    let w1_sq = w_init.frobenius_norm().powi(2);

    let zero = Matrix::zeros(c_rows, m);
    let (mut c_prev, mut c_cur) = (zero.clone(), zero.clone());
    let (mut ch_prev, mut ch_cur) = (zero.clone(), zero);
    let (mut u_prev, mut u_cur) = (u1.clone(), u1);
    let mut sched = ThetaSchedule::new();
    let mut steps = 0;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        sched = sched.next();
        let root = sched.theta.sqrt();
        let (a, b) = (sched.theta + root, -root * sched.theta_prev);
        let c_y = c_cur.lin_comb(a, &c_prev, b)?;
        let u_y = u_cur.lin_comb(a, &u_prev, b)?;
        let ch_y = ch_cur.lin_comb(a, &ch_prev, b)?;

        let resid = act.apply(&u_y).sub(target)?;
        let c_next = c_y.lin_comb(1.0, &resid, -inv_beta)?;
        let u_next = u_y.lin_comb(1.0, &resid.matmul(&g)?, -inv_beta)?;
        let ch_next = ch_y.lin_comb(1.0, &resid.matmul(&h)?, -inv_beta)?;
        steps += 1;

        let dc = c_next.sub(&c_cur)?;
        let dch = ch_next.sub(&ch_cur)?;
        let step = dc.frobenius_dot(&dch)?.max(0.0).sqrt();
        let w_norm = (w1_sq + 2.0 * w1_pt.frobenius_dot(&c_cur)? + c_cur.frobenius_dot(&ch_cur)?)
            .max(0.0)
            .sqrt();

        c_prev = std::mem::replace(&mut c_cur, c_next);
        ch_prev = std::mem::replace(&mut ch_cur, ch_next);
        u_prev = std::mem::replace(&mut u_cur, u_next);
        if step <= opts.rel_tol * (1.0 + w_norm) {
            converged = true;
            break;
        }
    }
    let w = w_init.add(&pinv.apply_right(&c_cur)?)?;
    Ok(WeightSolve { w, steps, converged })
}

/// `‖(φ(WX) − X⁺)Xᵀ‖_F`, the first-order residual of the weight subproblem.
pub fn weight_kkt_residual(w: &Matrix, input: &Matrix, target: &Matrix, act: Activation) -> Result<f64> {
    let resid = act.apply(&w.matmul(input)?).sub(target)?;
    Ok(resid.matmul_t(input)?.frobenius_norm())
}
