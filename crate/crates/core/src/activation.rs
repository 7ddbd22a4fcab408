//! Non-decreasing Lipschitz activations and their proximal-penalty data.
//!
//! Training only ever evaluates φ itself. The antiderivatives
//! `f̃(x) = ∫₀ˣ φ⁻¹` and `g̃(x) = ∫₀ˣ φ` exist here so the lifted objective can be
//! monitored; both are anchored at zero (`f̃(0) = g̃(0) = 0`).

use std::fmt;
use std::str::FromStr;

use crate::error::{LpomError, Result};
use crate::quadrature;
use crate::tensor::Matrix;

const QUAD_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    /// Slope on the negative axis, `0 < α < 1`.
    LeakyRelu(f64),
    /// Saturation level on the negative axis, `α > 0`.
    Elu(f64),
    Softplus,
    /// Linear map; every subproblem becomes exactly solvable, which tests rely on.
    Identity,
}

/// A real number or `+∞`, as taken by `f̃` outside the range of φ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ExtReal::Infinite)
    }

    pub fn map(self, f: impl FnOnce(f64) -> f64) -> ExtReal {
        match self {
            ExtReal::Finite(v) => ExtReal::Finite(f(v)),
            ExtReal::Infinite => ExtReal::Infinite,
        }
    }
}

impl std::ops::Add for ExtReal {
    type Output = ExtReal;
    fn add(self, rhs: ExtReal) -> ExtReal {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::Infinite,
        }
    }
}

/// Whether antiderivatives without a closed form may be integrated numerically.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quadrature {
    Allowed,
    Forbidden,
}

pub const ACTIVATION_NAMES: &[&str] = &[
    "sigmoid",
    "tanh",
    "relu",
    "leaky_relu[:alpha]",
    "elu[:alpha]",
    "softplus",
    "identity",
];

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `x ln x` with the continuous extension `0 ln 0 = 0`.
#[inline]
fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

impl Activation {
    pub fn leaky_relu(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(LpomError::Config(format!(
                "leaky_relu needs 0 < alpha < 1, got {alpha}"
            )));
        }
        Ok(Activation::LeakyRelu(alpha))
    }

    pub fn elu(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(LpomError::Config(format!("elu needs alpha > 0, got {alpha}")));
        }
        Ok(Activation::Elu(alpha))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Elu(_) => "elu",
            Activation::Softplus => "softplus",
            Activation::Identity => "identity",
        }
    }

    /// The activation's own parameter, if it has one.
    pub fn param(&self) -> Option<f64> {
        match *self {
            Activation::LeakyRelu(a) | Activation::Elu(a) => Some(a),
            _ => None,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Elu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x.exp_m1()
                }
            }
            Activation::Softplus => softplus(x),
            Activation::Identity => x,
        }
    }

    /// φ′, with the right-continuous choice at kinks except ReLU, whose derivative at 0
    /// is taken as 0. Only the backprop baseline uses this.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Elu(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    a * x.exp()
                }
            }
            Activation::Softplus => sigmoid(x),
            Activation::Identity => 1.0,
        }
    }

    /// Element-wise φ. Every activation maps finite inputs to finite outputs.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let act = *self;
        let mut data = x.as_array().clone();
        #[cfg(feature = "parallel")]
        {
            if data.len() >= 1 << 16 {
                data.par_mapv_inplace(|v| act.eval(v));
                return Matrix::from_array_unchecked(data);
            }
        }
        data.mapv_inplace(|v| act.eval(v));
        Matrix::from_array_unchecked(data)
    }

    /// Upper bound γ on |φ′|.
    pub fn gamma(&self) -> f64 {
        self.lipschitz_constants().0
    }

    /// Lipschitz constant β of φ (equivalently, the smoothness of g̃).
    pub fn beta(&self) -> f64 {
        self.lipschitz_constants().1
    }

    pub fn lipschitz_constants(&self) -> (f64, f64) {
        match *self {
            Activation::Sigmoid => (0.25, 0.25),
            Activation::Elu(a) => (a.max(1.0), a.max(1.0)),
            _ => (1.0, 1.0),
        }
    }

    /// False only for softplus, whose antiderivatives need quadrature.
    pub fn has_closed_forms(&self) -> bool {
        !matches!(self, Activation::Softplus)
    }

    /// `true` when the derivative-based contraction certificates are only heuristic
    /// because φ has a kink.
    pub fn is_nonsmooth(&self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu(_)) || matches!(self, Activation::Elu(a) if *a != 1.0)
    }

    /// Closure of the range of φ as `(low, high)`, with infinities where unbounded.
    pub fn range_closure(&self) -> (f64, f64) {
        match *self {
            Activation::Sigmoid => (0.0, 1.0),
            Activation::Tanh => (-1.0, 1.0),
            Activation::Relu | Activation::Softplus => (0.0, f64::INFINITY),
            Activation::Elu(a) => (-a, f64::INFINITY),
            Activation::LeakyRelu(_) | Activation::Identity => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// `g̃(x) = ∫₀ˣ φ(y) dy`.
    pub fn g_tilde(&self, x: f64, quad: Quadrature) -> Result<f64> {
        Ok(match *self {
            Activation::Sigmoid => softplus(x) - std::f64::consts::LN_2,
            Activation::Tanh => {
                // ln cosh x, stable for large |x|.
                let a = x.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
            Activation::Relu => {
                if x >= 0.0 {
                    0.5 * x * x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    0.5 * x * x
                } else {
                    0.5 * a * x * x
                }
            }
            Activation::Elu(a) => {
                if x >= 0.0 {
                    0.5 * x * x
                } else {
                    a * (x.exp_m1() - x)
                }
            }
            Activation::Identity => 0.5 * x * x,
            Activation::Softplus => {
                self.require_quadrature(quad)?;
                quadrature::integrate(softplus, 0.0, x, QUAD_TOL)
            }
        })
    }

    /// `f̃(x) = ∫₀ˣ φ⁻¹(y) dy`. Returns `+∞` where the convex extension is infinite
    /// (outside the closed range of sigmoid, tanh, ReLU and softplus) and a domain
    /// error below `−α` for ELU, where no extension is defined.
    pub fn f_tilde(&self, x: f64, quad: Quadrature) -> Result<ExtReal> {
        let (lo, hi) = self.range_closure();
        if x < lo || x > hi {
            return match self {
                Activation::Elu(_) => Err(LpomError::Domain {
                    what: "elu f̃".into(),
                    value: x,
                }),
                _ => Ok(ExtReal::Infinite),
            };
        }
        Ok(ExtReal::Finite(match *self {
            Activation::Sigmoid => xlogx(x) + xlogx(1.0 - x),
            Activation::Tanh => 0.5 * (xlogx(1.0 - x) + xlogx(1.0 + x)),
            Activation::Relu | Activation::Identity => 0.5 * x * x,
            Activation::LeakyRelu(a) => {
                if x >= 0.0 {
                    0.5 * x * x
                } else {
                    0.5 * x * x / a
                }
            }
            Activation::Elu(a) => {
                if x >= 0.0 {
                    0.5 * x * x
                } else {
                    xlogx(a + x) - (a + x) * a.ln() - x
                }
            }
            Activation::Softplus => {
                self.require_quadrature(quad)?;
                // φ⁻¹(y) = ln(eʸ − 1) = ln y + ln((eʸ − 1)/y); the first part is integrated
                // analytically, the remainder is smooth on [0, x].
                let smooth = |y: f64| y + (-(-y).exp()).ln_1p() - y.ln();
                xlogx(x) - x + quadrature::integrate(smooth, 0.0, x, QUAD_TOL)
            }
        }))
    }

    fn require_quadrature(&self, quad: Quadrature) -> Result<()> {
        match quad {
            Quadrature::Allowed => Ok(()),
            Quadrature::Forbidden => Err(LpomError::Unsupported(format!(
                "{} has no closed-form antiderivative; allow quadrature",
                self.name()
            ))),
        }
    }

    /// `𝟏ᵀ g̃(X) 𝟏`.
    pub fn g_tilde_sum(&self, x: &Matrix, quad: Quadrature) -> Result<f64> {
        let mut acc = 0.0;
        for &v in x.as_array().iter() {
            acc += self.g_tilde(v, quad)?;
        }
        Ok(acc)
    }

    /// `𝟏ᵀ f̃(X) 𝟏`, infinite if any entry is.
    pub fn f_tilde_sum(&self, x: &Matrix, quad: Quadrature) -> Result<ExtReal> {
        let mut acc = 0.0;
        for &v in x.as_array().iter() {
            match self.f_tilde(v, quad)? {
                ExtReal::Finite(f) => acc += f,
                ExtReal::Infinite => return Ok(ExtReal::Infinite),
            }
        }
        Ok(ExtReal::Finite(acc))
    }

    /// Serialization tag used by the checkpoint format.
    pub fn tag(&self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
            Activation::LeakyRelu(_) => 3,
            Activation::Elu(_) => 4,
            Activation::Softplus => 5,
            Activation::Identity => 6,
        }
    }

    pub fn from_tag(tag: u8, param: f64) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Sigmoid),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Relu),
            3 => Activation::leaky_relu(param),
            4 => Activation::elu(param),
            5 => Ok(Activation::Softplus),
            6 => Ok(Activation::Identity),
            t => Err(LpomError::format("activation tag", format!("unknown tag {t}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.param() {
            Some(p) => write!(f, "{}:{}", self.name(), p),
            None => f.write_str(self.name()),
        }
    }
}

impl FromStr for Activation {
    type Err = LpomError;

    /// `name[:param]`, e.g. `relu`, `leaky_relu:0.1`, `elu:1`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => {
                let p: f64 = p
                    .trim()
                    .parse()
                    .map_err(|_| LpomError::Config(format!("bad activation parameter in {s:?}")))?;
                (n.trim(), Some(p))
            }
            None => (s.trim(), None),
        };
        let no_param = |act: Activation| match param {
            None => Ok(act),
            Some(_) => Err(LpomError::Config(format!("{name} takes no parameter"))),
        };
        match name.to_ascii_lowercase().as_str() {
            "sigmoid" => no_param(Activation::Sigmoid),
            "tanh" => no_param(Activation::Tanh),
            "relu" => no_param(Activation::Relu),
            "softplus" => no_param(Activation::Softplus),
            "identity" | "linear" => no_param(Activation::Identity),
            "leaky_relu" | "leakyrelu" => Activation::leaky_relu(param.unwrap_or(0.01)),
            "elu" => Activation::elu(param.unwrap_or(1.0)),
            _ => Err(LpomError::Config(format!(
                "unknown activation {name:?}; valid names: {}",
                ACTIVATION_NAMES.join(", ")
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL: [Activation; 7] = [
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Relu,
        Activation::LeakyRelu(0.1),
        Activation::Elu(2.0),
        Activation::Softplus,
        Activation::Identity,
    ];

    const Q: Quadrature = Quadrature::Allowed;

    fn row(v: &[f64]) -> Matrix {
        Matrix::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn phi_examples() {
        assert_eq!(
            Activation::Relu.apply(&row(&[2.0, -3.0])).to_row_major(),
            vec![2.0, 0.0]
        );
        assert_eq!(Activation::Sigmoid.apply(&row(&[0.0])).to_row_major(), vec![0.5]);
        let y = Activation::LeakyRelu(0.1).apply(&row(&[-5.0])).get(0, 0);
        assert!((y + 0.5).abs() < 1e-15);
    }

    #[test]
    fn lipschitz_constants_registry() {
        assert_eq!(Activation::Relu.lipschitz_constants(), (1.0, 1.0));
        assert_eq!(Activation::Sigmoid.lipschitz_constants(), (0.25, 0.25));
        assert_eq!(Activation::Elu(2.0).lipschitz_constants(), (2.0, 2.0));
        assert_eq!(Activation::Elu(0.5).lipschitz_constants(), (1.0, 1.0));
        assert_eq!(Activation::Tanh.lipschitz_constants(), (1.0, 1.0));
    }

    #[test]
    fn monotone_lipschitz_and_slope_bound_on_grid() {
        for act in ALL {
            let (gamma, beta) = act.lipschitz_constants();
            let h = 1e-3;
            let mut x = -20.0;
            while x < 20.0 {
                let (a, b) = (act.eval(x), act.eval(x + h));
                assert!(a <= b, "{act} decreases at {x}");
                assert!(
                    (b - a).abs() <= beta * h * (1.0 + 1e-9),
                    "{act} not {beta}-Lipschitz at {x}"
                );
                assert!((b - a) / h <= gamma + 1e-6, "{act} slope exceeds gamma at {x}");
                x += h;
            }
        }
    }

    #[test]
    fn g_tilde_examples() {
        let relu = Activation::Relu.g_tilde_sum(&row(&[2.0, -1.0]), Q).unwrap();
        assert_eq!(relu, 2.0);
        assert_eq!(Activation::Identity.g_tilde_sum(&row(&[3.0]), Q).unwrap(), 4.5);
        // Anchored at zero: ∫₀⁰ σ = 0.
        assert!(Activation::Sigmoid.g_tilde_sum(&row(&[0.0]), Q).unwrap().abs() < 1e-15);
    }

    #[test]
    fn f_tilde_examples() {
        assert_eq!(
            Activation::Relu.f_tilde_sum(&row(&[2.0]), Q).unwrap(),
            ExtReal::Finite(2.0)
        );
        assert_eq!(
            Activation::Relu.f_tilde_sum(&row(&[-1.0]), Q).unwrap(),
            ExtReal::Infinite
        );
        assert_eq!(Activation::Sigmoid.f_tilde(1.5, Q).unwrap(), ExtReal::Infinite);
        assert!(matches!(
            Activation::Elu(1.0).f_tilde(-1.5, Q),
            Err(LpomError::Domain { .. })
        ));
        // End points of closed ranges are finite.
        assert_eq!(Activation::Sigmoid.f_tilde(0.0, Q).unwrap(), ExtReal::Finite(0.0));
        assert_eq!(Activation::Sigmoid.f_tilde(1.0, Q).unwrap(), ExtReal::Finite(0.0));
        let elu_edge = Activation::Elu(2.0).f_tilde(-2.0, Q).unwrap().finite().unwrap();
        assert!((elu_edge - 2.0).abs() < 1e-12);
    }

    #[test]
    fn softplus_needs_quadrature() {
        let act = Activation::Softplus;
        assert!(matches!(
            act.g_tilde_sum(&row(&[1.0]), Quadrature::Forbidden),
            Err(LpomError::Unsupported(_))
        ));
        // d/dx g̃ = softplus(x)
        let h = 1e-4;
        let d = (act.g_tilde(1.3 + h, Q).unwrap() - act.g_tilde(1.3 - h, Q).unwrap()) / (2.0 * h);
        assert!((d - softplus(1.3)).abs() < 1e-6);
        // d/dx f̃ = ln(eˣ − 1)
        let f = |x: f64| act.f_tilde(x, Q).unwrap().finite().unwrap();
        let d = (f(0.7 + h) - f(0.7 - h)) / (2.0 * h);
        assert!((d - (0.7f64.exp() - 1.0).ln()).abs() < 1e-6);
        assert_eq!(act.f_tilde(-0.1, Q).unwrap(), ExtReal::Infinite);
    }

    #[test]
    fn antiderivatives_differentiate_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for act in ALL {
            for _ in 0..200 {
                let x: f64 = rng.random_range(-5.0..5.0);
                let d = (act.g_tilde(x + h, Q).unwrap() - act.g_tilde(x - h, Q).unwrap()) / (2.0 * h);
                assert!((d - act.eval(x)).abs() < 1e-5, "{act} g̃' at {x}");
            }
        }
    }

    #[test]
    fn antiderivatives_are_convex() {
        let h = 1e-3;
        for act in ALL {
            let (lo, hi) = act.range_closure();
            let (lo, hi) = (lo.max(-8.0) + 2.0 * h, hi.min(8.0) - 2.0 * h);
            let n = 400;
            for i in 0..=n {
                let x = lo + (hi - lo) * i as f64 / n as f64;
                let g = |v: f64| act.g_tilde(v, Q).unwrap();
                assert!(g(x + h) - 2.0 * g(x) + g(x - h) >= -1e-8, "{act} g̃ at {x}");
                let f = |v: f64| act.f_tilde(v, Q).unwrap().finite().unwrap();
                assert!(f(x + h) - 2.0 * f(x) + f(x - h) >= -1e-8, "{act} f̃ at {x}");
            }
        }
    }

    /// The table of penalty functions drops additive constants: sigmoid's g and ELU's
    /// f and g differ from `g̃ − x²/2`, `f̃ − x²/2` by a constant; the rest match.
    #[test]
    fn penalty_functions_match_table_up_to_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let alpha = 0.7;
        for _ in 0..100 {
            let x: f64 = rng.random_range(-4.0..4.0);
            let p: f64 = rng.random_range(0.001..0.999);
            let t: f64 = rng.random_range(-0.999..0.999);
            let neg: f64 = rng.random_range(-alpha + 1e-3..0.0);
            let f = |a: Activation, v: f64| a.f_tilde(v, Q).unwrap().finite().unwrap() - 0.5 * v * v;
            let g = |a: Activation, v: f64| a.g_tilde(v, Q).unwrap() - 0.5 * v * v;

            let table_sig_f = p * p.ln() + (1.0 - p) * (1.0 - p).ln() - 0.5 * p * p;
            assert!((f(Activation::Sigmoid, p) - table_sig_f).abs() < 1e-6);
            let table_sig_g = (x.exp() + 1.0).ln() - 0.5 * x * x;
            assert!((g(Activation::Sigmoid, x) + std::f64::consts::LN_2 - table_sig_g).abs() < 1e-6);

            let table_tanh_f = 0.5 * ((1.0 - t) * (1.0 - t).ln() + (1.0 + t) * (1.0 + t).ln()) - 0.5 * t * t;
            assert!((f(Activation::Tanh, t) - table_tanh_f).abs() < 1e-6);
            let table_tanh_g = ((x.exp() + (-x).exp()) / 2.0).ln() - 0.5 * x * x;
            assert!((g(Activation::Tanh, x) - table_tanh_g).abs() < 1e-6);

            let table_relu_g = if x >= 0.0 { 0.0 } else { -0.5 * x * x };
            assert!((g(Activation::Relu, x) - table_relu_g).abs() < 1e-12);
            assert!(f(Activation::Relu, x.abs()).abs() < 1e-12);

            let a = 0.2;
            let lr = Activation::LeakyRelu(a);
            let table_lr_f = if x >= 0.0 { 0.0 } else { (1.0 - a) / (2.0 * a) * x * x };
            let table_lr_g = if x >= 0.0 { 0.0 } else { (a - 1.0) / 2.0 * x * x };
            assert!((f(lr, x) - table_lr_f).abs() < 1e-9);
            assert!((g(lr, x) - table_lr_g).abs() < 1e-9);

            let elu = Activation::Elu(alpha);
            let table_elu_f = (alpha + neg) * ((neg / alpha + 1.0).ln() - 1.0) - 0.5 * neg * neg;
            assert!((f(elu, neg) - alpha - table_elu_f).abs() < 1e-6);
            let xn = -x.abs();
            let table_elu_g = alpha * (xn.exp() - xn) - 0.5 * xn * xn;
            assert!((g(elu, xn) + alpha - table_elu_g).abs() < 1e-6);
        }
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("relu".parse::<Activation>().unwrap(), Activation::Relu);
        assert_eq!(
            "leaky_relu:0.1".parse::<Activation>().unwrap(),
            Activation::LeakyRelu(0.1)
        );
        assert_eq!("elu:2".parse::<Activation>().unwrap(), Activation::Elu(2.0));
        assert!("leaky_relu:1.5".parse::<Activation>().is_err());
        let err = "swish".parse::<Activation>().unwrap_err().to_string();
        assert!(err.contains("sigmoid") && err.contains("leaky_relu"));
        assert!("relu:3".parse::<Activation>().is_err());
        for act in ALL {
            assert_eq!(act.to_string().parse::<Activation>().unwrap(), act);
            assert_eq!(
                Activation::from_tag(act.tag(), act.param().unwrap_or(0.0)).unwrap(),
                act
            );
        }
    }
}
