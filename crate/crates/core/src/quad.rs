//! Composite Gauss-Legendre quadrature on graded panels.
//!
//! Nodes and weights are computed once per order by Newton iteration on the
//! Legendre recurrence; no tables.

use std::sync::OnceLock;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gl_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-based initial guess, then Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn rule16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gl_rule(16))
}

/// 16-point Gauss-Legendre on [a, b].
pub fn gl16<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    let (xs, ws) = rule16();
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in xs.iter().zip(ws) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Composite 16-point rule over the panel edges in `edges` (ascending).
pub fn composite<F: FnMut(f64) -> f64>(mut f: F, edges: &[f64]) -> f64 {
    edges
        .windows(2)
        .map(|w| gl16(&mut f, w[0], w[1]))
        .sum()
}

/// Panel edges geometrically graded from `a` toward `b` (a < b, a > 0),
/// suitable for integrands with a power singularity at 0.
pub fn geometric_edges(a: f64, b: f64, panels: usize) -> Vec<f64> {
    let ratio = (b / a).powf(1.0 / panels as f64);
    let mut edges = Vec::with_capacity(panels + 1);
    let mut x = a;
    edges.push(a);
    for _ in 0..panels {
        x *= ratio;
        edges.push(x);
    }
    *edges.last_mut().unwrap() = b;
    edges
}

/// Uniform panel edges on [a, b].
pub fn uniform_edges(a: f64, b: f64, panels: usize) -> Vec<f64> {
    (0..=panels)
        .map(|i| a + (b - a) * i as f64 / panels as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exactness() {
        // 16-point rule integrates x^31 exactly
        let v = gl16(|x| x.powi(31), 0.0, 1.0);
        assert!((v - 1.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn graded_panels_capture_endpoint_power() {
        // integral of x^(-1/2) over (0, 1] is 2
        let edges = geometric_edges(1e-14, 1.0, 60);
        let v = composite(|x| x.powf(-0.5), &edges);
        assert!((v - 2.0).abs() < 2e-7, "got {v}");
    }

    #[test]
    fn sin_integral() {
        let edges = uniform_edges(0.0, std::f64::consts::PI, 8);
        let v = composite(|x| x.sin(), &edges);
        assert!((v - 2.0).abs() < 1e-14);
    }
}
