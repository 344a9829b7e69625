//! Generator-based construction of the even solution branch.
//!
//! A single solution w of w'' + |x|^l f(w) = 0, w(0) = w'(0) = 0 generates
//! every positive even solution of the boundary value problem: with eta the
//! inverse of -w,
//!
//!   exponential: lambda(alpha) = eta(alpha)^(l+2) e^(-alpha),
//!                U(x; alpha)   = w(eta(alpha) |x|) + alpha;
//!   power:       lambda(alpha) = (alpha+1)^(1-p) eta(alpha/(alpha+1))^(l+2),
//!                U(x; alpha)   = (alpha+1) w(eta(alpha/(alpha+1)) |x|) + alpha.
//!
//! The sup norm of U(.; alpha) is exactly alpha, so the branch is
//! parameterized by its maximum.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ode::{self, OdeTol, Trajectory};
use crate::problem::{Nonlinearity, ProblemSpec};

/// |x|^l with fast paths for the common exponents.
pub(crate) fn pow_l(x: f64, l: f64) -> f64 {
    let a = x.abs();
    if l == 0.0 {
        1.0
    } else if l == 1.0 {
        a
    } else if l == 2.0 {
        a * a
    } else {
        a.powf(l)
    }
}

#[derive(Debug)]
struct GenInner {
    l: f64,
    nonlinearity: Nonlinearity,
    tol: OdeTol,
    root_tol: f64,
    traj: Trajectory,
    /// Generated depth: -w at the trajectory end (exponential) or 1 (power).
    depth: f64,
    /// Power only: abscissa where w = -1.
    x1: Option<f64>,
}

/// Numerical generator solution (w, w') with its inverse eta.
///
/// Immutable after construction; cloning is cheap and extension returns a new
/// value rather than mutating.
#[derive(Debug, Clone)]
pub struct Generator {
    inner: Arc<GenInner>,
}

fn generator_field(l: f64, nl: Nonlinearity) -> impl Fn(f64, &[f64], &mut [f64]) {
    move |x, y, dy| {
        dy[0] = y[1];
        dy[1] = -pow_l(x, l) * nl.f(y[0]);
    }
}

/// Two-term series for w near 0: w = -x^(l+2)/d1 + f'(0) x^(2l+4)/d2.
fn series(l: f64, p_eff: f64, x: f64) -> (f64, f64) {
    let d1 = (l + 1.0) * (l + 2.0);
    let d2 = d1 * (2.0 * l + 3.0) * (2.0 * l + 4.0);
    let w = -x.powf(l + 2.0) / d1 + p_eff * x.powf(2.0 * l + 4.0) / d2;
    let dw = -x.powf(l + 1.0) / (l + 1.0) + p_eff * (2.0 * l + 4.0) * x.powf(2.0 * l + 3.0) / d2;
    (w, dw)
}

/// Construct the generator out to the requested depth of -w.
///
/// The vector field is only C^0 at x = 0 for fractional l, so the first nodes
/// come from the series seed; the step length is chosen so the truncated term
/// stays below the absolute tolerance.
pub fn generate(spec: &ProblemSpec, depth: f64) -> Result<Generator> {
    spec.validate()?;
    if !(depth > 0.0) {
        return Err(Error::Domain(format!("depth must be positive, got {depth}")));
    }
    if spec.nonlinearity.is_power() && depth > 1.0 {
        return Err(Error::Domain(format!(
            "power nonlinearity: depth must be <= 1 (w only reaches -1), got {depth}"
        )));
    }
    let l = spec.l;
    let nl = spec.nonlinearity;
    let tol = OdeTol::from(&spec.tolerances);
    let field = generator_field(l, nl);

    let p_eff = nl.f_prime_at_zero();
    let d1 = (l + 1.0) * (l + 2.0);
    let d2 = d1 * (2.0 * l + 3.0) * (2.0 * l + 4.0);
    let h0 = (tol.abs * d2 / p_eff)
        .powf(1.0 / (2.0 * l + 4.0))
        .clamp(1e-6, 0.05);

    // origin node plus geometric series sub-nodes up to h0
    let w0_dd = if l == 0.0 { -1.0 } else { 0.0 };
    let mut nodes_x = vec![0.0];
    for k in (0..=6).rev() {
        nodes_x.push(h0 * 0.5_f64.powi(k));
    }
    let mut seed: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    seed.push((0.0, vec![0.0, 0.0], vec![0.0, w0_dd]));
    for &x in &nodes_x[1..] {
        let (w, dw) = series(l, p_eff, x);
        let mut dy = vec![0.0; 2];
        field(x, &[w, dw], &mut dy);
        seed.push((x, vec![w, dw], dy));
    }

    // integrate from h0 outward in chunks until the stopping condition holds
    let (w_h0, dw_h0) = series(l, p_eff, h0);
    let mut traj = ode::integrate(&field, h0, &[w_h0, dw_h0], h0 + 0.25, &tol)?;
    let target_w = match nl {
        Nonlinearity::Exponential => -depth,
        Nonlinearity::Power { .. } => -1.0 - 1e-3,
    };
    let mut chunks = 0;
    while traj.end().y[0] > target_w {
        chunks += 1;
        if chunks > 400 {
            return Err(Error::Integration {
                x: traj.t_end(),
                reason: "generator failed to reach the requested depth".into(),
            });
        }
        let end = traj.end();
        let remaining = (target_w - end.y[0]).abs();
        let slope = end.y[1].abs().max(1e-3);
        let dx = (remaining / slope + 0.02).clamp(0.1, 25.0);
        let x_next = end.x + dx;
        traj = ode::extend(traj, &field, x_next, &tol)?;
    }

    // splice the seed nodes in front of the integrated part
    let traj = prepend_nodes(seed, traj);

    let (depth_reached, x1) = match nl {
        Nonlinearity::Exponential => (-traj.end().y[0], None),
        Nonlinearity::Power { .. } => {
            let hit = ode::first_root(&traj, |_, y| y[0] + 1.0, (traj.t_start(), traj.t_end()))?
                .ok_or_else(|| Error::Domain("power generator never reached w = -1".into()))?;
            (1.0, Some(hit.location))
        }
    };

    Ok(Generator {
        inner: Arc::new(GenInner {
            l,
            nonlinearity: nl,
            tol,
            root_tol: spec.tolerances.root,
            traj,
            depth: depth_reached,
            x1,
        }),
    })
}

fn prepend_nodes(seed: Vec<(f64, Vec<f64>, Vec<f64>)>, traj: Trajectory) -> Trajectory {
    let tol = traj.tol_used();
    let mut nodes: Vec<ode::Node> = seed
        .into_iter()
        .map(|(x, y, dy)| ode::Node { x, y, dy })
        .collect();
    // the seed's last abscissa equals the trajectory's first
    for n in traj.nodes().iter().skip(1) {
        nodes.push(n.clone());
    }
    Trajectory::from_nodes(nodes, tol)
}

impl Generator {
    pub fn l(&self) -> f64 {
        self.inner.l
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.inner.nonlinearity
    }

    /// Generated depth of -w.
    pub fn depth(&self) -> f64 {
        self.inner.depth
    }

    /// Power only: the blow-down abscissa with w(x1) = -1.
    pub fn x1(&self) -> Option<f64> {
        self.inner.x1
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.inner.traj
    }

    /// (w, w') at abscissa x >= 0.
    pub fn w(&self, x: f64) -> Result<(f64, f64)> {
        let mut y = [0.0; 2];
        let mut dy = [0.0; 2];
        self.inner.traj.evaluate_into(x, &mut y, &mut dy)?;
        Ok((y[0], y[1]))
    }

    /// w''(x) from the ODE itself (exact given w).
    pub fn w_second(&self, x: f64) -> Result<f64> {
        let (w, _) = self.w(x)?;
        Ok(-pow_l(x, self.inner.l) * self.inner.nonlinearity.f(w))
    }

    /// A generator covering at least the requested depth; extends by resuming
    /// integration from the last stored node when necessary.
    pub fn ensure_depth(&self, depth: f64) -> Result<Generator> {
        match self.inner.nonlinearity {
            Nonlinearity::Power { .. } => {
                if depth >= 1.0 {
                    Err(Error::DepthExceeded {
                        requested: depth,
                        available: 1.0,
                    })
                } else {
                    Ok(self.clone())
                }
            }
            Nonlinearity::Exponential => {
                if depth <= self.inner.depth {
                    return Ok(self.clone());
                }
                let field = generator_field(self.inner.l, self.inner.nonlinearity);
                let mut traj = self.inner.traj.clone();
                let mut chunks = 0;
                while -traj.end().y[0] < depth {
                    chunks += 1;
                    if chunks > 400 {
                        return Err(Error::Integration {
                            x: traj.t_end(),
                            reason: "generator extension stalled".into(),
                        });
                    }
                    let end = traj.end();
                    let remaining = depth + end.y[0];
                    let slope = end.y[1].abs().max(1e-3);
                    let dx = (remaining / slope + 0.02).clamp(0.1, 25.0);
                    let x_next = end.x + dx;
                    traj = ode::extend(traj, &field, x_next, &self.inner.tol)?;
                }
                let depth_reached = -traj.end().y[0];
                Ok(Generator {
                    inner: Arc::new(GenInner {
                        l: self.inner.l,
                        nonlinearity: self.inner.nonlinearity,
                        tol: self.inner.tol,
                        root_tol: self.inner.root_tol,
                        traj,
                        depth: depth_reached,
                        x1: None,
                    }),
                })
            }
        }
    }

    /// Inverse of -w: the abscissa where -w(x) = t. Strictly increasing in t.
    pub fn eta(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("eta requires t > 0, got {t}")));
        }
        match self.inner.nonlinearity {
            Nonlinearity::Power { .. } => {
                if t >= 1.0 - 1e-12 {
                    return Err(Error::DepthExceeded {
                        requested: t,
                        available: 1.0 - 1e-12,
                    });
                }
            }
            Nonlinearity::Exponential => {
                if t > self.inner.depth * (1.0 + 1e-12) {
                    return Err(Error::DepthExceeded {
                        requested: t,
                        available: self.inner.depth,
                    });
                }
            }
        }
        let nodes = self.inner.traj.nodes();
        // -w is strictly increasing along the nodes
        let idx = nodes.partition_point(|n| -n.y[0] < t);
        if idx >= nodes.len() {
            return Ok(self.inner.traj.t_end());
        }
        if idx == 0 {
            return Ok(nodes[0].x);
        }
        let (mut lo, mut hi) = (nodes[idx - 1].x, nodes[idx].x);
        let mut yb = [0.0; 2];
        let mut db = [0.0; 2];
        let mut f_at = |x: f64| -> Result<f64> {
            self.inner.traj.evaluate_into(x, &mut yb, &mut db)?;
            Ok(-yb[0] - t)
        };
        let mut flo = f_at(lo)?;
        let width = self.inner.root_tol;
        while hi - lo > width * lo.abs().max(1.0) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let fm = f_at(mid)?;
            if fm == 0.0 {
                return Ok(mid);
            }
            if flo * fm < 0.0 {
                hi = mid;
            } else {
                lo = mid;
                flo = fm;
            }
        }
        // Newton polish: F = -w - t, F' = -w'
        let mut x = 0.5 * (lo + hi);
        for _ in 0..2 {
            let (w, dw) = self.w(x)?;
            if dw == 0.0 {
                break;
            }
            let step = (w + t) / dw;
            let xn = x - step;
            if xn > nodes[idx - 1].x && xn < nodes[idx].x {
                x = xn;
            }
        }
        Ok(x)
    }

    /// eta evaluated at the depth corresponding to the branch parameter alpha.
    pub fn eta_for_alpha(&self, alpha: f64) -> Result<f64> {
        match self.inner.nonlinearity {
            Nonlinearity::Exponential => self.eta(alpha),
            Nonlinearity::Power { .. } => self.eta(alpha / (alpha + 1.0)),
        }
    }
}

/// lambda(alpha), the parameter at which U(.; alpha) solves the BVP.
pub fn lambda_of_alpha(spec: &ProblemSpec, gen: &Generator, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let eta = gen.eta_for_alpha(alpha)?;
    Ok(match spec.nonlinearity {
        Nonlinearity::Exponential => eta.powf(spec.l + 2.0) * (-alpha).exp(),
        Nonlinearity::Power { p } => (alpha + 1.0).powf(1.0 - p) * eta.powf(spec.l + 2.0),
    })
}

/// One point of the even branch with dense access to U and U'.
#[derive(Debug, Clone)]
pub struct EvenSolution {
    pub alpha: f64,
    pub lambda: f64,
    /// eta(alpha) (exponential) or eta(alpha/(alpha+1)) (power).
    pub eta_alpha: f64,
    l: f64,
    nonlinearity: Nonlinearity,
    gen: Generator,
    /// (x, U, U') on 513 Chebyshev-Lobatto points of [0, 1]; the even
    /// reflection determines [-1, 0).
    samples: Vec<(f64, f64, f64)>,
}

/// Number of stored half-interval samples.
pub const SOLUTION_SAMPLES: usize = 513;

/// The Korman solution U(.; alpha) at lambda(alpha).
pub fn korman_solution(spec: &ProblemSpec, gen: &Generator, alpha: f64) -> Result<EvenSolution> {
    let lambda = lambda_of_alpha(spec, gen, alpha)?;
    let eta_alpha = gen.eta_for_alpha(alpha)?;
    let n = SOLUTION_SAMPLES - 1;
    let mut samples = Vec::with_capacity(SOLUTION_SAMPLES);
    let mut sol = EvenSolution {
        alpha,
        lambda,
        eta_alpha,
        l: spec.l,
        nonlinearity: spec.nonlinearity,
        gen: gen.clone(),
        samples: Vec::new(),
    };
    for j in 0..=n {
        // Chebyshev-Lobatto points of [0, 1], clustered at both ends
        let x = 0.5 * (1.0 - (std::f64::consts::PI * j as f64 / n as f64).cos());
        let (u, du) = sol.eval(x)?;
        samples.push((x, u, du));
    }
    sol.samples = samples;
    Ok(sol)
}

impl EvenSolution {
    /// (U, U') at x in [-1, 1]; U is even, U' odd.
    pub fn eval(&self, x: f64) -> Result<(f64, f64)> {
        if x.abs() > 1.0 + 1e-9 {
            return Err(Error::OutOfRange {
                x,
                lo: -1.0,
                hi: 1.0,
            });
        }
        let s = (self.eta_alpha * x.abs()).min(self.gen.trajectory().t_end());
        let (w, dw) = self.gen.w(s)?;
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        Ok(match self.nonlinearity {
            Nonlinearity::Exponential => (w + self.alpha, sign * self.eta_alpha * dw),
            Nonlinearity::Power { .. } => (
                (self.alpha + 1.0) * w + self.alpha,
                sign * (self.alpha + 1.0) * self.eta_alpha * dw,
            ),
        })
    }

    /// U'' at x from the interpolated derivative of the w' component.
    pub fn second_derivative_interp(&self, x: f64) -> Result<f64> {
        let s = (self.eta_alpha * x.abs()).min(self.gen.trajectory().t_end());
        let mut y = [0.0; 2];
        let mut dy = [0.0; 2];
        self.gen.trajectory().evaluate_into(s, &mut y, &mut dy)?;
        let scale = match self.nonlinearity {
            Nonlinearity::Exponential => 1.0,
            Nonlinearity::Power { .. } => self.alpha + 1.0,
        };
        Ok(scale * self.eta_alpha * self.eta_alpha * dy[1])
    }

    /// Explicit solution of the linearized equation:
    /// exponential psi = x U' + l + 2; power psi = x U' + (l+2)/(p-1) (U + 1).
    pub fn psi(&self, x: f64) -> Result<f64> {
        let (u, du) = self.eval(x)?;
        Ok(match self.nonlinearity {
            Nonlinearity::Exponential => x * du + self.l + 2.0,
            Nonlinearity::Power { p } => x * du + (self.l + 2.0) / (p - 1.0) * (u + 1.0),
        })
    }

    /// Stored samples (x, U, U') on [0, 1].
    pub fn samples(&self) -> &[(f64, f64, f64)] {
        &self.samples
    }

    pub fn sup_norm(&self) -> f64 {
        self.alpha
    }

    /// U'(-1) > 0, the slope a shot must use to reproduce this solution.
    pub fn boundary_slope(&self) -> f64 {
        let (_, du) = self.eval(1.0).expect("x = 1 is in range");
        -du
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    /// Max BVP residual |U'' + lambda |x|^l f(U)| over the sample grid, with
    /// U'' taken from the dense interpolant.
    pub fn bvp_residual(&self) -> Result<f64> {
        let mut worst = 0.0_f64;
        for &(x, u, _) in &self.samples {
            let upp = self.second_derivative_interp(x)?;
            let r = (upp + self.lambda * pow_l(x, self.l) * self.nonlinearity.f(u)).abs();
            worst = worst.max(r);
        }
        Ok(worst)
    }
}

/// The turning point alpha*, where lambda attains its maximum along the branch.
///
/// Exponential: unique root of eta(alpha) w'(eta(alpha)) + l + 2.
/// Power: beta* solves W(x) = (p-1) x w'(x) + (l+2)(w(x)+1) = 0 on (0, x1),
/// then alpha* = -w(beta*)/(w(beta*)+1).
pub fn find_alpha_star(spec: &ProblemSpec, gen: &Generator) -> Result<f64> {
    match spec.nonlinearity {
        Nonlinearity::Exponential => {
            let s_fn = |alpha: f64| -> Result<f64> {
                let e = gen.eta(alpha)?;
                let (_, dw) = gen.w(e)?;
                Ok(e * dw + spec.l + 2.0)
            };
            let mut lo = 0.25;
            while s_fn(lo)? <= 0.0 {
                lo *= 0.25;
                if lo < 1e-12 {
                    return Err(Error::BracketNotFound {
                        what: "eta w'(eta) + l + 2".into(),
                        lo,
                        hi: gen.depth(),
                        hint: "no positive region found near alpha = 0".into(),
                    });
                }
            }
            let mut hi = lo * 2.0;
            loop {
                if hi > gen.depth() {
                    return Err(Error::BracketNotFound {
                        what: "eta w'(eta) + l + 2".into(),
                        lo,
                        hi: gen.depth(),
                        hint: "generate to a larger depth".into(),
                    });
                }
                if s_fn(hi)? < 0.0 {
                    break;
                }
                lo = hi;
                hi *= 2.0;
            }
            let mut flo = s_fn(lo)?;
            while hi - lo > 1e-14 * hi {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let fm = s_fn(mid)?;
                if fm == 0.0 {
                    return Ok(mid);
                }
                if flo * fm < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            Ok(0.5 * (lo + hi))
        }
        Nonlinearity::Power { .. } => {
            let beta = find_beta_star(spec, gen)?;
            let (w, _) = gen.w(beta)?;
            Ok(-w / (w + 1.0))
        }
    }
}

/// Power case: the unique root beta* of W(x) = (p-1) x w'(x) + (l+2)(w(x)+1)
/// on (0, x1). W is strictly decreasing there.
pub fn find_beta_star(spec: &ProblemSpec, gen: &Generator) -> Result<f64> {
    let p = match spec.nonlinearity {
        Nonlinearity::Power { p } => p,
        Nonlinearity::Exponential => {
            return Err(Error::Domain(
                "beta* is defined for the power nonlinearity only".into(),
            ))
        }
    };
    let x1 = gen
        .x1()
        .ok_or_else(|| Error::Domain("generator lacks a blow-down point".into()))?;
    let w_fn = |x: f64| -> Result<f64> {
        let (w, dw) = gen.w(x)?;
        Ok((p - 1.0) * x * dw + (spec.l + 2.0) * (w + 1.0))
    };
    let (mut lo, mut hi) = (x1 * 1e-9, x1 * (1.0 - 1e-12));
    let mut flo = w_fn(lo)?;
    if flo <= 0.0 || w_fn(hi)? >= 0.0 {
        return Err(Error::BracketNotFound {
            what: "W".into(),
            lo,
            hi,
            hint: "expected W(0+) > 0 > W(x1-)".into(),
        });
    }
    while hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = w_fn(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if flo * fm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Invert lambda(alpha) = lambda on one side of the fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchSide {
    /// alpha < alpha*, where lambda is increasing.
    Lower,
    /// alpha > alpha*, where lambda is decreasing.
    Upper,
}

pub fn alpha_of_lambda(
    spec: &ProblemSpec,
    gen: &Generator,
    lambda: f64,
    side: BranchSide,
    alpha_star: f64,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let lam_star = lambda_of_alpha(spec, gen, alpha_star)?;
    if lambda > lam_star {
        return Err(Error::Domain(format!(
            "lambda = {lambda} exceeds the fold value {lam_star}"
        )));
    }
    let alpha_cap = match spec.nonlinearity {
        Nonlinearity::Exponential => gen.depth(),
        Nonlinearity::Power { .. } => spec.alpha_max.max(4.0 * alpha_star),
    };
    let (mut lo, mut hi) = match side {
        BranchSide::Lower => (1e-10, alpha_star),
        BranchSide::Upper => (alpha_star, alpha_cap),
    };
    // on the upper side lambda decreases; make g increasing in both cases
    let orient = match side {
        BranchSide::Lower => 1.0,
        BranchSide::Upper => -1.0,
    };
    let g = |alpha: f64| -> Result<f64> {
        Ok(orient * (lambda_of_alpha(spec, gen, alpha)? - lambda))
    };
    if g(hi)? < 0.0 {
        return Err(Error::BracketNotFound {
            what: "lambda(alpha) - lambda".into(),
            lo,
            hi,
            hint: "raise alpha_max / generator depth".into(),
        });
    }
    while hi - lo > 1e-13 * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_l0() -> (ProblemSpec, Generator) {
        let spec = ProblemSpec::exponential(0.0);
        let gen = generate(&spec, 8.0).unwrap();
        (spec, gen)
    }

    // closed forms for l = 0 exponential: w = -2 ln cosh(x/sqrt 2),
    // eta(t) = sqrt 2 acosh(e^(t/2))
    fn w_exact(x: f64) -> f64 {
        -2.0 * (x / 2.0_f64.sqrt()).cosh().ln()
    }
    fn eta_exact(t: f64) -> f64 {
        2.0_f64.sqrt() * (t / 2.0).exp().acosh()
    }

    #[test]
    fn generator_matches_l0_closed_form() {
        let (_, gen) = exp_l0();
        for k in 1..=10 {
            let x = 0.5 * k as f64;
            let (w, _) = gen.w(x).unwrap();
            assert!(
                (w - w_exact(x)).abs() < 1e-8,
                "x = {x}: w = {w}, exact = {}",
                w_exact(x)
            );
        }
    }

    #[test]
    fn generator_initial_conditions() {
        for spec in [ProblemSpec::exponential(1.7), ProblemSpec::power(0.5, 3.0)] {
            let gen = generate(&spec, 0.9).unwrap();
            let (w, dw) = gen.w(0.0).unwrap();
            assert_eq!(w, 0.0);
            assert_eq!(dw, 0.0);
        }
    }

    #[test]
    fn generator_series_start_l1() {
        // near 0 with l = 1, w = -x^3/6 to within the next series term
        let spec = ProblemSpec::exponential(1.0);
        let gen = generate(&spec, 2.0).unwrap();
        let x = 0.01;
        let (w, _) = gen.w(x).unwrap();
        assert!(
            (w - (-x * x * x / 6.0)).abs() < 1e-12,
            "w(0.01) = {w:e} vs series {:e}",
            -x * x * x / 6.0
        );
    }

    #[test]
    fn eta_closed_form_and_small_t() {
        let (_, gen) = exp_l0();
        let e1 = gen.eta(1.0).unwrap();
        assert!(
            (e1 - eta_exact(1.0)).abs() < 1e-8,
            "eta(1) = {e1}, exact {}",
            eta_exact(1.0)
        );
        // eta(t) -> 0 as t -> 0+
        assert!(gen.eta(1e-9).unwrap() < 1e-3);
    }

    #[test]
    fn eta_round_trip_on_log_grid() {
        let (_, gen) = exp_l0();
        for k in 0..24 {
            let t = 8.0 * 10.0_f64.powf(-6.0 * (1.0 - k as f64 / 23.0));
            let x = gen.eta(t).unwrap();
            let (w, _) = gen.w(x).unwrap();
            assert!((-w - t).abs() < 1e-10, "round trip at t = {t}: -w = {}", -w);
        }
    }

    #[test]
    fn eta_is_strictly_increasing() {
        let (_, gen) = exp_l0();
        let mut last = 0.0;
        for k in 1..=40 {
            let t = 8.0 * k as f64 / 40.0;
            let x = gen.eta(t).unwrap();
            assert!(x > last);
            last = x;
        }
    }

    #[test]
    fn eta_depth_error_and_extension() {
        let spec = ProblemSpec::exponential(1.0);
        let gen = generate(&spec, 3.0).unwrap();
        let beyond = 1.5 * gen.depth();
        assert!(matches!(gen.eta(beyond), Err(Error::DepthExceeded { .. })));
        let deeper = gen.ensure_depth(2.0 * gen.depth()).unwrap();
        assert!(deeper.eta(beyond).is_ok());
        // original untouched and the new one covers the request
        assert!(gen.depth() >= 3.0);
        assert!(deeper.depth() >= 2.0 * gen.depth());
    }

    #[test]
    fn lambda_closed_form_l0() {
        let (spec, gen) = exp_l0();
        let lam = lambda_of_alpha(&spec, &gen, 1.0).unwrap();
        let exact = eta_exact(1.0).powi(2) * (-1.0_f64).exp();
        assert!((lam - exact).abs() < 1e-7, "lambda(1) = {lam}, exact {exact}");
    }

    #[test]
    fn lambda_limits_and_positivity() {
        let (spec, gen) = exp_l0();
        let lam_star = lambda_of_alpha(&spec, &gen, 1.1868).unwrap();
        assert!(lambda_of_alpha(&spec, &gen, 1e-4).unwrap() < 0.05 * lam_star);
        assert!(lambda_of_alpha(&spec, &gen, 7.9).unwrap() < 0.6 * lam_star);
        for k in 1..40 {
            let a = 0.2 * k as f64;
            assert!(lambda_of_alpha(&spec, &gen, a).unwrap() > 0.0);
        }
    }

    #[test]
    fn korman_solution_boundary_and_center() {
        let spec = ProblemSpec::exponential(1.0);
        let gen = generate(&spec, 6.0).unwrap();
        let sol = korman_solution(&spec, &gen, 5.0).unwrap();
        let (u0, du0) = sol.eval(0.0).unwrap();
        assert_eq!(u0, 5.0); // U(0) = alpha exactly by construction
        assert_eq!(du0, 0.0);
        let (u1, _) = sol.eval(1.0).unwrap();
        assert!(u1.abs() < 1e-9, "U(1) = {u1:e}");
        let (um1, _) = sol.eval(-1.0).unwrap();
        assert!(um1.abs() < 1e-9);
    }

    #[test]
    fn korman_solution_bvp_residual() {
        // oracle: interpolated second derivative against the field, fine tolerances
        let mut spec = ProblemSpec::exponential(1.0);
        spec.tolerances.ode_rel = 1e-12;
        spec.tolerances.ode_abs = 1e-14;
        let gen = generate(&spec, 6.0).unwrap();
        let sol = korman_solution(&spec, &gen, 5.0).unwrap();
        let res = sol.bvp_residual().unwrap();
        assert!(res <= 1e-7, "BVP residual {res:e}");
    }

    #[test]
    fn psi_center_value_exponential() {
        let spec = ProblemSpec::exponential(1.0);
        let gen = generate(&spec, 6.0).unwrap();
        for alpha in [0.3, 1.0, 4.0] {
            let sol = korman_solution(&spec, &gen, alpha).unwrap();
            assert_eq!(sol.psi(0.0).unwrap(), 3.0); // l + 2
        }
    }

    #[test]
    fn alpha_star_l0_matches_scalar_optimization() {
        // independent oracle: maximize the closed form lambda(alpha) =
        // 2 acosh^2(e^(alpha/2)) e^(-alpha) by golden-section search
        let (spec, gen) = exp_l0();
        let lam = |a: f64| 2.0 * (a / 2.0).exp().acosh().powi(2) * (-a).exp();
        let (mut a, mut b) = (0.5, 3.0);
        let phi = 0.5 * (5.0_f64.sqrt() - 1.0);
        while b - a > 1e-12 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if lam(c) > lam(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let astar_oracle = 0.5 * (a + b);
        let astar = find_alpha_star(&spec, &gen).unwrap();
        assert!(
            (astar - astar_oracle).abs() < 1e-7,
            "alpha* = {astar} vs oracle {astar_oracle}"
        );
        let lam_star = lambda_of_alpha(&spec, &gen, astar).unwrap();
        assert!(
            (lam_star - 0.8784576797812903).abs() < 1e-6,
            "lambda(alpha*) = {lam_star}"
        );
    }

    #[test]
    fn alpha_star_is_a_maximum_by_finite_differences() {
        let spec = ProblemSpec::exponential(1.0);
        let gen = generate(&spec, 8.0).unwrap();
        let astar = find_alpha_star(&spec, &gen).unwrap();
        let h = 1e-3;
        let lam = |a: f64| lambda_of_alpha(&spec, &gen, a).unwrap();
        let d_left = (lam(astar) - lam(astar - 2.0 * h)) / (2.0 * h);
        let d_right = (lam(astar + 2.0 * h) - lam(astar)) / (2.0 * h);
        assert!(
            d_left > 0.0 && d_right < 0.0,
            "one-sided slopes {d_left}, {d_right}"
        );
    }

    #[test]
    fn power_beta_star_root_and_sign_change() {
        let spec = ProblemSpec::power(1.0, 7.0);
        let gen = generate(&spec, 1.0).unwrap();
        let beta = find_beta_star(&spec, &gen).unwrap();
        let w_of = |x: f64| {
            let (w, dw) = gen.w(x).unwrap();
            6.0 * x * dw + 3.0 * (w + 1.0)
        };
        assert!(w_of(beta).abs() < 1e-10, "W(beta*) = {:e}", w_of(beta));
        assert!(w_of(beta - 1e-4) > 0.0 && w_of(beta + 1e-4) < 0.0);
        let astar = find_alpha_star(&spec, &gen).unwrap();
        assert!(astar > 0.0);
    }

    #[test]
    fn power_energy_first_integral_l0() {
        // l = 0: E = w'^2/2 + (w+1)^(p+1)/(p+1) is conserved, E = 1/(p+1)
        let p = 7.0;
        let spec = ProblemSpec::power(0.0, p);
        let gen = generate(&spec, 1.0).unwrap();
        let e0 = 1.0 / (p + 1.0);
        let x_end = gen.eta(0.999).unwrap();
        for k in 0..=60 {
            let x = x_end * k as f64 / 60.0;
            let (w, dw) = gen.w(x).unwrap();
            let e = dw * dw / 2.0 + (w + 1.0).powf(p + 1.0) / (p + 1.0);
            assert!((e - e0).abs() < 1e-9, "energy drift {:e} at x = {x}", e - e0);
        }
    }

    #[test]
    fn generator_monotone_and_concave() {
        for spec in [ProblemSpec::exponential(1.0), ProblemSpec::power(1.0, 7.0)] {
            let gen = generate(&spec, if spec.nonlinearity.is_power() { 1.0 } else { 6.0 }).unwrap();
            let nodes = gen.trajectory().nodes();
            for pair in nodes.windows(2) {
                assert!(pair[1].y[0] < pair[0].y[0], "w strictly decreasing");
            }
            for n in nodes.iter().skip(1) {
                if n.y[0] > -1.0 {
                    assert!(n.dy[1] < 0.0, "w'' < 0 at x = {}", n.x);
                }
            }
        }
    }

    #[test]
    fn branch_is_unimodal_on_grid() {
        let spec = ProblemSpec::exponential(1.0);
        let gen = generate(&spec, 16.0).unwrap();
        let astar = find_alpha_star(&spec, &gen).unwrap();
        let lam = |a: f64| lambda_of_alpha(&spec, &gen, a).unwrap();
        let mut prev = lam(0.01);
        for k in 1..=30 {
            let a = 0.01 + (astar - 0.02) * k as f64 / 30.0;
            let v = lam(a);
            assert!(v > prev, "lambda increasing below alpha*");
            prev = v;
        }
        let mut prev = lam(astar + 0.01);
        for k in 1..=30 {
            let a = astar + 0.01 + (15.0 - astar) * k as f64 / 30.0;
            let v = lam(a);
            assert!(v < prev, "lambda decreasing above alpha*");
            prev = v;
        }
    }

    #[test]
    fn psi_zero_structure_across_the_fold() {
        let spec = ProblemSpec::exponential(1.0);
        let gen = generate(&spec, 12.0).unwrap();
        let astar = find_alpha_star(&spec, &gen).unwrap();
        let zeros_of_psi = |alpha: f64| {
            let sol = korman_solution(&spec, &gen, alpha).unwrap();
            let mut count = 0;
            let mut prev = sol.psi(-1.0).unwrap();
            for k in 1..=2000 {
                let x = -1.0 + 2.0 * k as f64 / 2000.0;
                let v = sol.psi(x).unwrap();
                if prev * v < 0.0 {
                    count += 1;
                }
                prev = v;
            }
            count
        };
        // below the fold: strictly positive
        let sol = korman_solution(&spec, &gen, astar / 2.0).unwrap();
        for k in 0..=100 {
            let x = -1.0 + 2.0 * k as f64 / 100.0;
            assert!(sol.psi(x).unwrap() > 0.0);
        }
        // at the fold: boundary values vanish
        let sol_star = korman_solution(&spec, &gen, astar).unwrap();
        assert!(sol_star.psi(1.0).unwrap().abs() < 1e-6);
        assert!(sol_star.psi(-1.0).unwrap().abs() < 1e-6);
        // above the fold: exactly two interior zeros, negative at the ends
        for alpha in [1.5 * astar, 4.0 * astar] {
            let sol = korman_solution(&spec, &gen, alpha).unwrap();
            assert!(sol.psi(1.0).unwrap() < 0.0);
            assert_eq!(zeros_of_psi(alpha), 2, "alpha = {alpha}");
        }
    }

    #[test]
    fn alpha_of_lambda_inverts_both_sides() {
        let spec = ProblemSpec::exponential(1.0);
        let gen = generate(&spec, 20.0).unwrap();
        let astar = find_alpha_star(&spec, &gen).unwrap();
        let lam_star = lambda_of_alpha(&spec, &gen, astar).unwrap();
        let lam = 0.37 * lam_star;
        let lo = alpha_of_lambda(&spec, &gen, lam, BranchSide::Lower, astar).unwrap();
        let hi = alpha_of_lambda(&spec, &gen, lam, BranchSide::Upper, astar).unwrap();
        assert!(lo < astar && astar < hi);
        assert!((lambda_of_alpha(&spec, &gen, lo).unwrap() - lam).abs() < 1e-10);
        assert!((lambda_of_alpha(&spec, &gen, hi).unwrap() - lam).abs() < 1e-10);
    }
}
