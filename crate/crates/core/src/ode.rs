//! Adaptive one-step integration of small ODE systems with dense output and
//! zero-crossing detection.
//!
//! The integrator is an embedded Dormand-Prince 5(4) pair with PI step-size
//! control. Accepted steps are additionally limited so that the cubic Hermite
//! interpolant between nodes stays within the requested tolerance; without
//! this the dense output would be one order behind the integrator and event
//! location and quadrature downstream would silently lose accuracy.

use crate::error::{Error, Result};

/// Relative/absolute tolerance pair plus an optional step cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeTol {
    pub rel: f64,
    pub abs: f64,
    pub max_step: Option<f64>,
}

impl OdeTol {
    pub fn new(rel: f64, abs: f64) -> Self {
        OdeTol {
            rel,
            abs,
            max_step: None,
        }
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = Some(h);
        self
    }
}

impl Default for OdeTol {
    fn default() -> Self {
        OdeTol::new(1e-10, 1e-12)
    }
}

impl From<&crate::problem::Tolerances> for OdeTol {
    fn from(t: &crate::problem::Tolerances) -> Self {
        OdeTol {
            rel: t.ode_rel,
            abs: t.ode_abs,
            max_step: t.max_step,
        }
    }
}

/// One accepted integration node: abscissa, state and derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub x: f64,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
}

/// Dense numerical solution: ordered accepted steps, interpolable between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    nodes: Vec<Node>,
    tol_used: OdeTol,
}

impl Trajectory {
    /// Assemble a trajectory from externally built nodes (strictly increasing
    /// abscissas, derivative = field value); used to splice series seeds in
    /// front of an integrated part.
    pub(crate) fn from_nodes(nodes: Vec<Node>, tol_used: OdeTol) -> Self {
        debug_assert!(nodes.windows(2).all(|w| w[0].x < w[1].x));
        Trajectory { nodes, tol_used }
    }

    pub fn t_start(&self) -> f64 {
        self.nodes.first().map(|n| n.x).unwrap_or(f64::NAN)
    }

    pub fn t_end(&self) -> f64 {
        self.nodes.last().map(|n| n.x).unwrap_or(f64::NAN)
    }

    pub fn tol_used(&self) -> OdeTol {
        self.tol_used
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map(|n| n.y.len()).unwrap_or(0)
    }

    pub fn end(&self) -> &Node {
        self.nodes.last().expect("trajectory is never empty")
    }

    /// Cubic Hermite interpolation of state and derivative at `x`.
    ///
    /// Node abscissas reproduce node data exactly.
    pub fn evaluate(&self, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let dim = self.dim();
        let mut y = vec![0.0; dim];
        let mut dy = vec![0.0; dim];
        self.evaluate_into(x, &mut y, &mut dy)?;
        Ok((y, dy))
    }

    /// Allocation-free variant of [`evaluate`](Self::evaluate) for hot loops.
    pub fn evaluate_into(&self, x: f64, y: &mut [f64], dy: &mut [f64]) -> Result<()> {
        let (lo, hi) = (self.t_start(), self.t_end());
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfRange { x, lo, hi });
        }
        // partition_point returns the first node with node.x > x
        let idx = self.nodes.partition_point(|n| n.x <= x);
        if idx == 0 {
            unreachable!("x >= t_start was checked");
        }
        let left = &self.nodes[idx - 1];
        if left.x == x || idx == self.nodes.len() {
            y.copy_from_slice(&left.y);
            dy.copy_from_slice(&left.dy);
            return Ok(());
        }
        let right = &self.nodes[idx];
        let h = right.x - left.x;
        let t = (x - left.x) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        // Hermite basis for value and derivative
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let d00 = (6.0 * t2 - 6.0 * t) / h;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (6.0 * t - 6.0 * t2) / h;
        let d11 = 3.0 * t2 - 2.0 * t;
        for i in 0..y.len() {
            y[i] = h00 * left.y[i] + h10 * h * left.dy[i] + h01 * right.y[i] + h11 * h * right.dy[i];
            dy[i] =
                d00 * left.y[i] + d10 * left.dy[i] + d01 * right.y[i] + d11 * right.dy[i];
        }
        Ok(())
    }
}

/// Located zero of a scalar event function along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventResult {
    /// Abscissa of the root.
    pub location: f64,
    /// Total derivative of the event function along the trajectory at the root.
    pub slope: f64,
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - bhat, for the embedded error estimate
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_ALPHA: f64 = 0.17; // 1/5 - 0.75 * PI_BETA
const PI_BETA: f64 = 0.04;
const MAX_STEPS: usize = 2_000_000;

struct Stepper<'a, F> {
    field: &'a F,
    tol: OdeTol,
    dim: usize,
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    err_vec: Vec<f64>,
}

impl<'a, F> Stepper<'a, F>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn new(field: &'a F, tol: OdeTol, dim: usize) -> Self {
        Stepper {
            field,
            tol,
            dim,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            y_stage: vec![0.0; dim],
            y_new: vec![0.0; dim],
            err_vec: vec![0.0; dim],
        }
    }

    fn eval(&mut self, stage: usize, x: f64, y: &[f64]) {
        let mut dy = std::mem::take(&mut self.k[stage]);
        (self.field)(x, y, &mut dy);
        self.k[stage] = dy;
    }

    /// One trial step from (x, y) with k[0] = f(x, y) already loaded.
    /// Returns (rk error ratio, dense error ratio); y_new and k[6] are filled.
    fn trial(&mut self, x: f64, y: &[f64], h: f64) -> (f64, f64) {
        let n = self.dim;
        for i in 0..n {
            self.y_stage[i] = y[i] + h * A21 * self.k[0][i];
        }
        (self.field)(x + C[1] * h, &self.y_stage, &mut self.k[1]);
        for i in 0..n {
            self.y_stage[i] = y[i] + h * (A31 * self.k[0][i] + A32 * self.k[1][i]);
        }
        (self.field)(x + C[2] * h, &self.y_stage, &mut self.k[2]);
        for i in 0..n {
            self.y_stage[i] =
                y[i] + h * (A41 * self.k[0][i] + A42 * self.k[1][i] + A43 * self.k[2][i]);
        }
        (self.field)(x + C[3] * h, &self.y_stage, &mut self.k[3]);
        for i in 0..n {
            self.y_stage[i] = y[i]
                + h * (A51 * self.k[0][i]
                    + A52 * self.k[1][i]
                    + A53 * self.k[2][i]
                    + A54 * self.k[3][i]);
        }
        (self.field)(x + C[4] * h, &self.y_stage, &mut self.k[4]);
        for i in 0..n {
            self.y_stage[i] = y[i]
                + h * (A61 * self.k[0][i]
                    + A62 * self.k[1][i]
                    + A63 * self.k[2][i]
                    + A64 * self.k[3][i]
                    + A65 * self.k[4][i]);
        }
        (self.field)(x + C[5] * h, &self.y_stage, &mut self.k[5]);
        for i in 0..n {
            self.y_new[i] = y[i]
                + h * (B1 * self.k[0][i]
                    + B3 * self.k[2][i]
                    + B4 * self.k[3][i]
                    + B5 * self.k[4][i]
                    + B6 * self.k[5][i]);
        }
        (self.field)(x + h, &self.y_new, &mut self.k[6]);
        for i in 0..n {
            self.err_vec[i] = h
                * (E1 * self.k[0][i]
                    + E3 * self.k[2][i]
                    + E4 * self.k[3][i]
                    + E5 * self.k[4][i]
                    + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
        }

        let mut err = 0.0;
        let mut dense = 0.0;
        for i in 0..n {
            let sc = self.tol.abs + self.tol.rel * self.y_new[i].abs().max(y[i].abs());
            let r = self.err_vec[i] / sc;
            err += r * r;
            // Third divided difference of the stage slopes at c = 0, 0.3, 0.8, 1
            // estimates y''''/6; the cubic Hermite error bound is h^4 |y''''| / 384.
            let g01 = (self.k[2][i] - self.k[0][i]) / (0.3 * h);
            let g12 = (self.k[3][i] - self.k[2][i]) / (0.5 * h);
            let g23 = (self.k[6][i] - self.k[3][i]) / (0.2 * h);
            let g012 = (g12 - g01) / (0.8 * h);
            let g123 = (g23 - g12) / (0.7 * h);
            let y4 = 6.0 * (g123 - g012) / h;
            let d = h.powi(4) * y4.abs() / 384.0 / sc;
            dense += d * d;
        }
        let nf = n as f64;
        ((err / nf).sqrt(), (dense / nf).sqrt())
    }
}

fn initial_step<F>(field: &F, x0: f64, y0: &[f64], f0: &[f64], x1: f64, tol: &OdeTol) -> f64
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let span = x1 - x0;
    let n = y0.len() as f64;
    let sc = |i: usize| tol.abs + tol.rel * y0[i].abs();
    let d0 = (y0.iter().enumerate().map(|(i, y)| (y / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().enumerate().map(|(i, f)| (f / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6_f64
    } else {
        0.01 * d0 / d1
    }
    .min(span);
    // one Euler probe to estimate the second derivative scale
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    field(x0 + h0, &y1, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .enumerate()
        .map(|(i, (a, b))| ((a - b) / sc(i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    let mut h = h1.min(100.0 * h0).min(span);
    if let Some(cap) = tol.max_step {
        h = h.min(cap);
    }
    h
}

/// Integrate y' = field(x, y) from `x0` to `x1 > x0`, recording every accepted
/// step through `sink`. The initial point is recorded first.
fn drive<F, S>(field: &F, x0: f64, y0: &[f64], x1: f64, tol: &OdeTol, mut sink: S) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]),
    S: FnMut(f64, &[f64], &[f64]),
{
    if !(x1 > x0) {
        return Err(Error::Domain(format!(
            "integration span must be increasing: x0 = {x0}, x1 = {x1}"
        )));
    }
    if !(tol.rel > 0.0 && tol.abs > 0.0) {
        return Err(Error::Domain("tolerance components must be positive".into()));
    }
    let dim = y0.len();
    let mut st = Stepper::new(field, *tol, dim);
    let mut x = x0;
    let mut y = y0.to_vec();

    st.eval(0, x, &y);
    if !st.k[0].iter().all(|v| v.is_finite()) {
        return Err(Error::Integration {
            x,
            reason: "vector field not finite at the initial point".into(),
        });
    }
    sink(x, &y, &st.k[0]);

    let mut h = initial_step(field, x0, &y, &st.k[0], x1, tol);
    let mut fac_old: f64 = 1e-4;
    let mut just_rejected = false;

    for _ in 0..MAX_STEPS {
        if x >= x1 {
            return Ok(y);
        }
        let h_min = 1e-14 * x.abs().max(1.0);
        if h < h_min {
            return Err(Error::Integration {
                x,
                reason: format!("step size underflow (h = {h:.3e})"),
            });
        }
        let h_used = h.min(x1 - x);
        let (err, dense) = st.trial(x, &y, h_used);

        if !err.is_finite() || !st.y_new.iter().all(|v| v.is_finite()) {
            h = 0.25 * h_used;
            just_rejected = true;
            continue;
        }

        if err <= 1.0 && dense <= 1.0 {
            // accept
            x += h_used;
            y.copy_from_slice(&st.y_new);
            st.k.swap(0, 6); // FSAL
            sink(x, &y, &st.k[0]);

            // PI update: h * safety * err^-alpha * err_prev^beta
            let fac = SAFETY * fac_old.powf(PI_BETA) / err.max(1e-30).powf(PI_ALPHA);
            fac_old = err.max(1e-4);
            let fmax = if just_rejected { 1.0 } else { FAC_MAX };
            let mut h_next = h_used * fac.clamp(FAC_MIN, fmax);
            // keep the Hermite interpolant within budget on the next step too
            let dense_cap = h_used * (0.5 / dense.max(1e-12)).powf(0.25);
            h_next = h_next.min(dense_cap);
            if let Some(cap) = tol.max_step {
                h_next = h_next.min(cap);
            }
            h = h_next;
            just_rejected = false;
        } else {
            let ratio = err.max(dense);
            let shrink = (SAFETY * (1.0 / ratio).powf(0.2)).clamp(FAC_MIN, 0.9);
            h = h_used * shrink;
            just_rejected = true;
        }
    }
    Err(Error::Integration {
        x,
        reason: format!("step budget exhausted ({MAX_STEPS} steps)"),
    })
}

/// Integrate and return the dense trajectory.
pub fn integrate<F>(field: F, x0: f64, y0: &[f64], x1: f64, tol: &OdeTol) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let mut nodes: Vec<Node> = Vec::new();
    drive(&field, x0, y0, x1, tol, |x, y, dy| {
        nodes.push(Node {
            x,
            y: y.to_vec(),
            dy: dy.to_vec(),
        });
    })?;
    Ok(Trajectory {
        nodes,
        tol_used: *tol,
    })
}

/// Integrate and return only the final state; no dense storage.
pub fn integrate_final<F>(field: F, x0: f64, y0: &[f64], x1: f64, tol: &OdeTol) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    drive(&field, x0, y0, x1, tol, |_, _, _| {})
}

/// Resume integration from the last node of `traj` up to `x1`, appending nodes.
pub fn extend<F>(traj: Trajectory, field: F, x1: f64, tol: &OdeTol) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let last = traj.end().clone();
    if !(x1 > last.x) {
        return Ok(traj);
    }
    let mut nodes = traj.nodes;
    let mut first = true;
    drive(&field, last.x, &last.y, x1, tol, |x, y, dy| {
        if first {
            first = false; // the resume point is already stored
            return;
        }
        nodes.push(Node {
            x,
            y: y.to_vec(),
            dy: dy.to_vec(),
        });
    })?;
    Ok(Trajectory {
        nodes,
        tol_used: *tol,
    })
}

/// Locate the earliest zero of `event(x, y(x))` along `traj` within `window`.
///
/// Scans consecutive nodes for sign changes, refines by bisection to a width
/// of 1e-13 (relative to scale), then applies one Newton step using the
/// interpolant. Returns `Ok(None)` when the event does not change sign.
pub fn first_root<E>(traj: &Trajectory, event: E, window: (f64, f64)) -> Result<Option<EventResult>>
where
    E: Fn(f64, &[f64]) -> f64,
{
    let (mut a, mut b) = window;
    a = a.max(traj.t_start());
    b = b.min(traj.t_end());
    if !(a < b) {
        return Err(Error::Domain(format!(
            "event window [{}, {}] does not intersect trajectory [{}, {}]",
            window.0,
            window.1,
            traj.t_start(),
            traj.t_end()
        )));
    }
    let dim = traj.dim();
    let mut y = vec![0.0; dim];
    let mut dy = vec![0.0; dim];
    let mut g_at = |x: f64| -> Result<f64> {
        traj.evaluate_into(x, &mut y, &mut dy)?;
        Ok(event(x, &y))
    };

    let xs: Vec<f64> = {
        let mut v: Vec<f64> = traj
            .nodes()
            .iter()
            .map(|n| n.x)
            .filter(|&x| x > a && x < b)
            .collect();
        v.insert(0, a);
        v.push(b);
        v
    };

    let mut ga = g_at(xs[0])?;
    for win in xs.windows(2) {
        let (xa, xb) = (win[0], win[1]);
        let gb = g_at(xb)?;
        if ga == 0.0 {
            let slope = event_slope(traj, &event, xa)?;
            return Ok(Some(EventResult { location: xa, slope }));
        }
        if ga * gb < 0.0 {
            let (mut lo, mut hi, mut glo) = (xa, xb, ga);
            let width_tol = 1e-13 * lo.abs().max(1.0);
            while hi - lo > width_tol {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let gm = g_at(mid)?;
                if gm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if glo * gm < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    glo = gm;
                }
            }
            let mut root = 0.5 * (lo + hi);
            let slope = event_slope(traj, &event, root)?;
            if slope != 0.0 {
                let g = g_at(root)?;
                let newton = root - g / slope;
                if newton >= xa && newton <= xb {
                    root = newton;
                }
            }
            let slope = event_slope(traj, &event, root)?;
            return Ok(Some(EventResult { location: root, slope }));
        }
        ga = gb;
    }
    if ga == 0.0 {
        let xb = *xs.last().expect("nonempty");
        let slope = event_slope(traj, &event, xb)?;
        return Ok(Some(EventResult { location: xb, slope }));
    }
    Ok(None)
}

/// Total derivative of the event along the trajectory by a central difference
/// on the interpolant.
fn event_slope<E: Fn(f64, &[f64]) -> f64>(traj: &Trajectory, event: &E, x: f64) -> Result<f64> {
    let h = 1e-7 * x.abs().max(1.0);
    let lo = (x - h).max(traj.t_start());
    let hi = (x + h).min(traj.t_end());
    let (ylo, _) = traj.evaluate(lo)?;
    let (yhi, _) = traj.evaluate(hi)?;
    Ok((event(hi, &yhi) - event(lo, &ylo)) / (hi - lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn sine_field(_x: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = y[1];
        dy[1] = -y[0];
    }

    #[test]
    fn zero_field_stays_constant() {
        let traj = integrate(|_, _, dy| dy[0] = 0.0, 0.0, &[1.0], 1.0, &OdeTol::default()).unwrap();
        assert_eq!(traj.end().y[0], 1.0);
    }

    #[test]
    fn sine_quarter_period() {
        let tol = OdeTol::new(1e-10, 1e-12);
        let traj = integrate(sine_field, 0.0, &[0.0, 1.0], FRAC_PI_2, &tol).unwrap();
        assert!((traj.end().y[0] - 1.0).abs() < 1e-9, "y(pi/2) = {}", traj.end().y[0]);
    }

    #[test]
    fn exponential_generator_l0_closed_form() {
        // w'' = -e^w, w(0) = w'(0) = 0 has w(x) = -2 ln cosh(x / sqrt(2)).
        let tol = OdeTol::default();
        let traj = integrate(
            |_x, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[1];
                dy[1] = -y[0].exp();
            },
            0.0,
            &[0.0, 0.0],
            1.0,
            &tol,
        )
        .unwrap();
        let exact = -2.0 * (1.0 / 2.0_f64.sqrt()).cosh().ln();
        assert!(
            (traj.end().y[0] - exact).abs() < 1e-8,
            "w(1) = {}, exact = {exact}",
            traj.end().y[0]
        );
    }

    #[test]
    fn evaluate_reproduces_nodes_exactly() {
        let traj = integrate(sine_field, 0.0, &[0.0, 1.0], 3.0, &OdeTol::default()).unwrap();
        for n in traj.nodes() {
            let (y, dy) = traj.evaluate(n.x).unwrap();
            assert_eq!(y, n.y);
            assert_eq!(dy, n.dy);
        }
    }

    #[test]
    fn evaluate_sine_between_nodes() {
        let traj = integrate(sine_field, 0.0, &[0.0, 1.0], 2.0, &OdeTol::default()).unwrap();
        let (y, _) = traj.evaluate(FRAC_PI_4).unwrap();
        assert!((y[0] - FRAC_PI_4.sin()).abs() < 1e-9);
    }

    #[test]
    fn evaluate_agrees_with_reintegration() {
        // dense output between nodes vs a fresh integration to the same abscissa
        let tol = OdeTol::new(1e-10, 1e-12);
        let field = |_x: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0].exp();
        };
        let traj = integrate(field, 0.0, &[0.0, 0.0], 4.0, &tol).unwrap();
        for k in 1..40 {
            let x = 0.1 * k as f64;
            let (y, _) = traj.evaluate(x).unwrap();
            let direct = integrate_final(field, 0.0, &[0.0, 0.0], x, &tol).unwrap();
            assert!(
                (y[0] - direct[0]).abs() <= 10.0 * (tol.rel * direct[0].abs() + tol.abs).max(1e-10),
                "x = {x}: interp {} vs direct {}",
                y[0],
                direct[0]
            );
        }
    }

    #[test]
    fn evaluate_out_of_range_errors() {
        let traj = integrate(sine_field, 0.0, &[0.0, 1.0], 1.0, &OdeTol::default()).unwrap();
        assert!(matches!(traj.evaluate(1.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(traj.evaluate(-0.1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn order_check_halving_tolerance() {
        // errors against closed forms decrease monotonically as tol halves
        let mut last = f64::INFINITY;
        for k in 0..4 {
            let tol = OdeTol::new(1e-8 * 0.5_f64.powi(k), 1e-10 * 0.5_f64.powi(k));
            let traj = integrate(sine_field, 0.0, &[0.0, 1.0], FRAC_PI_2, &tol).unwrap();
            let err = (traj.end().y[0] - 1.0).abs().max(1e-18);
            assert!(err < last, "tolerance halving did not reduce error: {err} vs {last}");
            last = err;
        }
        let gen_field = |_x: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0].exp();
        };
        // loose enough that truncation, not roundoff, dominates
        let exact = -2.0 * (3.0 / 2.0_f64.sqrt()).cosh().ln();
        let mut last = f64::INFINITY;
        for k in 0..4 {
            let tol = OdeTol::new(1e-5 * 0.5_f64.powi(k), 1e-7 * 0.5_f64.powi(k));
            let traj = integrate(gen_field, 0.0, &[0.0, 0.0], 3.0, &tol).unwrap();
            let err = (traj.end().y[0] - exact).abs().max(1e-18);
            assert!(err < last, "generator error did not shrink: {err} vs {last}");
            last = err;
        }
    }

    #[test]
    fn determinism_bit_identical() {
        let run = || {
            integrate(
                |_x, y: &[f64], dy: &mut [f64]| {
                    dy[0] = y[1];
                    dy[1] = -y[0].exp();
                },
                0.0,
                &[0.0, 0.0],
                5.0,
                &OdeTol::default(),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.nodes().len(), b.nodes().len());
        for (na, nb) in a.nodes().iter().zip(b.nodes()) {
            assert_eq!(na.x.to_bits(), nb.x.to_bits());
            for (ya, yb) in na.y.iter().zip(&nb.y) {
                assert_eq!(ya.to_bits(), yb.to_bits());
            }
        }
    }

    #[test]
    fn step_underflow_reports_last_abscissa() {
        // y' = y^2 from y(0) = 1 blows up at x = 1
        let res = integrate(
            |_x, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0],
            0.0,
            &[1.0],
            2.0,
            &OdeTol::default(),
        );
        match res {
            Err(Error::Integration { x, .. }) => {
                assert!(x > 0.9 && x < 1.05, "blow-up abscissa {x}");
            }
            other => panic!("expected integration failure, got {other:?}"),
        }
    }

    #[test]
    fn first_root_sine_at_pi() {
        let traj = integrate(sine_field, 0.0, &[0.0, 1.0], 4.0, &OdeTol::default()).unwrap();
        let root = first_root(&traj, |_, y| y[0], (0.1, 4.0)).unwrap().unwrap();
        assert!((root.location - PI).abs() < 1e-9, "root at {}", root.location);
        assert!(root.slope < 0.0);
    }

    #[test]
    fn first_root_none_without_sign_change() {
        let traj = integrate(sine_field, 0.0, &[0.0, 1.0], 2.0, &OdeTol::default()).unwrap();
        assert!(first_root(&traj, |_, y| y[0] + 10.0, (0.0, 2.0)).unwrap().is_none());
    }

    #[test]
    fn first_root_transversality_sign() {
        let traj = integrate(sine_field, 0.0, &[0.0, 1.0], 7.0, &OdeTol::default()).unwrap();
        // y crosses downward at pi, upward at 2 pi
        let down = first_root(&traj, |_, y| y[0], (0.5, 4.0)).unwrap().unwrap();
        let up = first_root(&traj, |_, y| y[0], (4.0, 7.0)).unwrap().unwrap();
        assert!(down.slope < 0.0 && up.slope > 0.0);
        assert!((up.location - 2.0 * PI).abs() < 1e-9);
    }

    #[test]
    fn extend_continues_from_last_node() {
        let tol = OdeTol::default();
        let traj = integrate(sine_field, 0.0, &[0.0, 1.0], 1.0, &tol).unwrap();
        let traj = extend(traj, sine_field, FRAC_PI_2, &tol).unwrap();
        assert!((traj.end().y[0] - 1.0).abs() < 1e-8);
        let xs: Vec<f64> = traj.nodes().iter().map(|n| n.x).collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]), "abscissas strictly increasing");
    }
}
