//! Reference computations written independently of the library, used as oracles.
#![allow(dead_code)]

/// Solves `a x = b` (dense, row-major `n × n`) by Gaussian elimination with partial
/// pivoting.
pub fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &v)| {
            let mut r = row.clone();
            r.push(v);
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular system");
        for row in col + 1..n {
            let f = m[row][col] / p;
            if f != 0.0 {
                for k in col..=n {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (m[row][n] - s) / m[row][row];
    }
    x
}

/// `∫_a^b f` by tanh-sinh quadrature. Never evaluates `f` at the end points, so
/// integrable end-point singularities are fine.
pub fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let r = (b - a) / 2.0;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let term = |t: f64| -> f64 {
        let s = half_pi * t.sinh();
        let u = s.tanh();
        let w = half_pi * t.cosh() / s.cosh().powi(2);
        // Distance to the nearer end computed without cancellation.
        let gap = r / (s.abs().exp() * s.abs().cosh());
        let x = if u >= 0.0 { b - gap } else { a + gap };
        if gap == 0.0 || w == 0.0 {
            return 0.0;
        }
        f(x) * w
    };
    let mut h = 1.0;
    let mut sum = term(0.0);
    let mut k = 1;
    while k as f64 * h <= 6.5 {
        sum += term(k as f64 * h) + term(-(k as f64) * h);
        k += 1;
    }
    let mut estimate = sum * h * r;
    let mut prev = estimate;
    for _ in 0..12 {
        h /= 2.0;
        let mut k = 1;
        while k as f64 * h <= 6.5 {
            sum += term(k as f64 * h) + term(-(k as f64) * h);
            k += 2;
        }
        estimate = sum * h * r;
        if (estimate - prev).abs() <= 1e-13 * (1.0 + estimate.abs()) {
            break;
        }
        prev = estimate;
    }
    estimate
}

/// Minimizes `½xᵀHx + pᵀx` over the box `[lo, hi]ⁿ` by cyclic coordinate descent with
/// exact one-dimensional steps, from `start`, until no coordinate moves more than
/// `1e-15` (relative) or `max_sweeps` is hit.
pub fn box_qp(h: &[Vec<f64>], p: &[f64], lo: f64, hi: f64, start: &[f64], max_sweeps: usize) -> Vec<f64> {
    let n = p.len();
    let mut x = start.to_vec();
    // Hx maintained incrementally.
    let mut hx: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * x[j]).sum()).collect();
    for sweep in 0..max_sweeps {
        let mut biggest = 0.0f64;
        for i in 0..n {
            if h[i][i] <= 0.0 {
                continue;
            }
            let grad = hx[i] + p[i];
            let target = (x[i] - grad / h[i][i]).clamp(lo, hi);
            let d = target - x[i];
            if d != 0.0 {
                for (k, v) in hx.iter_mut().enumerate() {
                    *v += h[k][i] * d;
                }
                x[i] = target;
                biggest = biggest.max(d.abs());
            }
        }
        if biggest <= 1e-15 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            break;
        }
        // Refresh to shed accumulated rounding.
        if sweep % 64 == 63 {
            hx = (0..n).map(|i| (0..n).map(|j| h[i][j] * x[j]).sum()).collect();
        }
    }
    x
}

/// Largest violation of the box-QP optimality conditions at `x`.
pub fn box_kkt_violation(h: &[Vec<f64>], p: &[f64], lo: f64, hi: f64, x: &[f64]) -> f64 {
    let n = p.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        let g: f64 = (0..n).map(|j| h[i][j] * x[j]).sum::<f64>() + p[i];
        let v = if x[i] <= lo {
            (-g).max(0.0)
        } else if x[i] >= hi {
            g.max(0.0)
        } else {
            g.abs()
        };
        worst = worst.max(v);
    }
    worst
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
