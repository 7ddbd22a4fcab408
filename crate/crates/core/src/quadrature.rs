//! Adaptive Gauss–Legendre quadrature, used for antiderivatives without closed forms.

use std::sync::OnceLock;

const ORDER: usize = 10;
const MAX_DEPTH: u32 = 40;

fn nodes() -> &'static [(f64, f64); ORDER] {
    static NODES: OnceLock<[(f64, f64); ORDER]> = OnceLock::new();
    NODES.get_or_init(|| {
        // Newton iteration on P_n from the Chebyshev initial guess.
        let n = ORDER;
        let mut out = [(0.0, 0.0); ORDER];
        for (i, slot) in out.iter_mut().enumerate() {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            *slot = (x, 2.0 / ((1.0 - x * x) * dp * dp));
        }
        out
    })
}

fn panel(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    nodes().iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

fn adapt(f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let mid = 0.5 * (a + b);
    let left = panel(f, a, mid);
    let right = panel(f, mid, b);
    let split = left + right;
    if depth >= MAX_DEPTH || (split - whole).abs() <= tol.max(f64::EPSILON * split.abs()) {
        return split;
    }
    adapt(f, a, mid, left, 0.5 * tol, depth + 1) + adapt(f, mid, b, right, 0.5 * tol, depth + 1)
}

/// `∫ₐᵇ f`, refined until bisection changes the estimate by less than `tol`. The
/// integrand is never evaluated at the end points, so integrable end-point
/// singularities are tolerated (they just cost extra bisections).
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if b < a {
        return -integrate(f, b, a, tol);
    }
    let whole = panel(&f, a, b);
    adapt(&f, a, b, whole, tol, 0)
}
