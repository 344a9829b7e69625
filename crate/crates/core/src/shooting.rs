//! Shooting for solutions of the Dirichlet problem at fixed lambda.
//!
//! u(x; beta) solves u'' + lambda |x|^l f(u) = 0, u(-1) = 0, u'(-1) = beta.
//! Its first zero z(beta) in (-1, infinity) turns the boundary value problem
//! into the scalar root condition z(beta) = 1, or equivalently u(1; beta) = 0
//! since positive solutions stay negative past their first zero. The
//! derivative z'(beta) = -v(z)/u'(z) comes from the variational equation
//! v'' + lambda |x|^l f'(u) v = 0, v(-1) = 0, v'(-1) = 1.
//!
//! Non-even solutions come in mirror pairs (u(x), u(-x)); the reflected
//! slope is -u'(1). Tracing the non-even pair in lambda up to where it
//! collapses onto the upper even branch brackets the symmetry-breaking
//! bifurcation parameter alpha_2.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::korman::{self, pow_l, BranchSide, Generator};
use crate::ode::{self, OdeTol, Trajectory};
use crate::problem::{Nonlinearity, ProblemSpec};
use crate::spectra::SpectralScan;
use serde::{Deserialize, Serialize};

fn field2(spec: &ProblemSpec, lambda: f64) -> impl Fn(f64, &[f64], &mut [f64]) + Sync {
    let l = spec.l;
    let nl = spec.nonlinearity;
    move |x, y, dy| {
        dy[0] = y[1];
        dy[1] = -lambda * pow_l(x, l) * nl.f(y[0]);
    }
}

fn field4(spec: &ProblemSpec, lambda: f64) -> impl Fn(f64, &[f64], &mut [f64]) + Sync {
    let l = spec.l;
    let nl = spec.nonlinearity;
    move |x, y, dy| {
        let h = lambda * pow_l(x, l);
        dy[0] = y[1];
        dy[1] = -h * nl.f(y[0]);
        dy[2] = y[3];
        dy[3] = -h * nl.f_prime(y[0]) * y[2];
    }
}

/// One shot: trajectory of (u, u') from x = -1 and its first zero, if any
/// lies inside the window.
#[derive(Debug, Clone)]
pub struct ShootResult {
    pub beta: f64,
    pub lambda: f64,
    /// First zero of u in (-1, window_end], or None when u stays positive.
    pub z: Option<f64>,
    /// u'(z) at the located zero; negative for transversal first zeros.
    pub slope_at_z: Option<f64>,
    pub traj: Trajectory,
}

fn shoot_window(spec: &ProblemSpec, lambda: f64, beta: f64, window_end: f64) -> Result<ShootResult> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let tol = OdeTol::from(&spec.tolerances);
    let field = field2(spec, lambda);
    let traj = ode::integrate(&field, -1.0, &[0.0, beta], window_end, &tol)?;
    let hit = ode::first_root(&traj, |_, y| y[0], (-1.0 + 1e-12, window_end))?;
    let (z, slope) = match hit {
        Some(ev) => (Some(ev.location), Some(ev.slope)),
        None => (None, None),
    };
    Ok(ShootResult {
        beta,
        lambda,
        z,
        slope_at_z: slope,
        traj,
    })
}

/// Shoot from x = -1 with slope beta and locate the first zero of u.
pub fn shoot(spec: &ProblemSpec, lambda: f64, beta: f64, window_end: f64) -> Result<ShootResult> {
    if !(window_end >= 1.0) {
        return Err(Error::Domain(format!(
            "window must reach x = 1, got window_end = {window_end}"
        )));
    }
    shoot_window(spec, lambda, beta, window_end)
}

/// Joint shot of (u, u', v, v') with the first zero of u and z'(beta).
#[derive(Debug, Clone)]
pub struct VariationalShot {
    pub beta: f64,
    pub lambda: f64,
    pub z: f64,
    pub z_prime: f64,
    /// Trajectory of (u, u', v, v').
    pub traj: Trajectory,
}

/// Integrate the variational system until the first zero of u is found,
/// doubling the window as needed.
pub fn shoot_variational(spec: &ProblemSpec, lambda: f64, beta: f64) -> Result<VariationalShot> {
    if !(beta > 0.0 && lambda > 0.0) {
        return Err(Error::Domain("beta and lambda must be positive".into()));
    }
    let tol = OdeTol::from(&spec.tolerances);
    let field = field4(spec, lambda);
    let mut window = 1.5;
    let mut traj = ode::integrate(&field, -1.0, &[0.0, beta, 0.0, 1.0], window, &tol)?;
    loop {
        if let Some(ev) = ode::first_root(&traj, |_, y| y[0], (-1.0 + 1e-12, window))? {
            let z = ev.location;
            let (yz, _) = traj.evaluate(z)?;
            let z_prime = -yz[2] / yz[1];
            return Ok(VariationalShot {
                beta,
                lambda,
                z,
                z_prime,
                traj,
            });
        }
        window *= 2.0;
        if window > 512.0 {
            return Err(Error::BracketNotFound {
                what: "first zero of u".into(),
                lo: -1.0,
                hi: window,
                hint: "z(beta) exceeded the window cap".into(),
            });
        }
        traj = ode::extend(traj, &field, window, &tol)?;
    }
}

/// dz/dbeta at (lambda, beta) via the variational equation.
pub fn z_prime(spec: &ProblemSpec, lambda: f64, beta: f64) -> Result<f64> {
    Ok(shoot_variational(spec, lambda, beta)?.z_prime)
}

/// u(1; beta) and u'(1; beta); the root condition for the BVP is u(1) = 0.
fn end_state(spec: &ProblemSpec, lambda: f64, beta: f64) -> Result<(f64, f64)> {
    let tol = OdeTol::from(&spec.tolerances);
    let end = ode::integrate_final(field2(spec, lambda), -1.0, &[0.0, beta], 1.0, &tol)?;
    Ok((end[0], end[1]))
}

/// (u(1), u'(1), v(1)) for Newton refinement in beta.
fn end_state_sens(spec: &ProblemSpec, lambda: f64, beta: f64) -> Result<(f64, f64, f64)> {
    let tol = OdeTol::from(&spec.tolerances);
    let end = ode::integrate_final(field4(spec, lambda), -1.0, &[0.0, beta, 0.0, 1.0], 1.0, &tol)?;
    Ok((end[0], end[1], end[2]))
}

/// Parity classification of a Dirichlet solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    Even,
    NonEven,
}

/// A solution of the boundary value problem found by shooting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionAtLambda {
    pub lambda: f64,
    /// Initial slope u'(-1).
    pub beta: f64,
    /// u on 257 uniform points of [-1, 1].
    pub samples: Vec<(f64, f64)>,
    pub sup_norm: f64,
    pub symmetry: Symmetry,
    /// Boundary residual |u(1)|.
    pub residual: f64,
    /// Slope -u'(1) of the reflected solution u(-x).
    pub mirror_beta: f64,
    /// max |u(x) - u(-x)| over the sample grid.
    pub asymmetry: f64,
}

/// Relative slope threshold separating discretization noise from genuine
/// asymmetry.
pub const SYMMETRY_TOL: f64 = 1e-6;

fn build_solution(spec: &ProblemSpec, lambda: f64, beta: f64) -> Result<SolutionAtLambda> {
    let shot = shoot_window(spec, lambda, beta, 1.0)?;
    let n = 256;
    let mut samples = Vec::with_capacity(n + 1);
    let mut y = [0.0; 2];
    let mut dy = [0.0; 2];
    for i in 0..=n {
        let x = -1.0 + 2.0 * i as f64 / n as f64;
        shot.traj.evaluate_into(x, &mut y, &mut dy)?;
        samples.push((x, y[0]));
    }
    // the maximum sits where u' vanishes
    let sup_norm = match ode::first_root(&shot.traj, |_, y| y[1], (-1.0 + 1e-12, 1.0))? {
        Some(ev) => {
            let (yc, _) = shot.traj.evaluate(ev.location)?;
            yc[0]
        }
        None => samples.iter().map(|&(_, u)| u).fold(f64::MIN, f64::max),
    };
    let asymmetry = (0..=n / 2)
        .map(|i| (samples[i].1 - samples[n - i].1).abs())
        .fold(0.0, f64::max);
    let symmetry = if asymmetry > SYMMETRY_TOL * sup_norm.abs() {
        Symmetry::NonEven
    } else {
        Symmetry::Even
    };
    let end = shot.traj.evaluate(1.0)?;
    Ok(SolutionAtLambda {
        lambda,
        beta,
        samples,
        sup_norm,
        symmetry,
        residual: end.0[0].abs(),
        mirror_beta: -end.0[1],
        asymmetry,
    })
}

/// Slope of the even solution at the fold: U'(-1; alpha*) = l + 2
/// (exponential) or (l + 2)/(p - 1) (power); follows from the defining
/// equations of alpha*.
fn fold_slope(spec: &ProblemSpec) -> f64 {
    match spec.nonlinearity {
        Nonlinearity::Exponential => spec.l + 2.0,
        Nonlinearity::Power { p } => (spec.l + 2.0) / (p - 1.0),
    }
}

/// Scan cap: double from 10x the fold slope until z(beta) < 0.9 at three
/// consecutive doublings.
fn beta_scan_cap(spec: &ProblemSpec, lambda: f64) -> Result<f64> {
    let mut cap = 10.0 * fold_slope(spec);
    let mut consecutive = 0;
    let mut guard = 0;
    loop {
        let shot = shoot_window(spec, lambda, cap, 0.95)?;
        let small = matches!(shot.z, Some(z) if z < 0.9);
        if small {
            consecutive += 1;
            if consecutive == 3 {
                return Ok(cap);
            }
        } else {
            consecutive = 0;
        }
        cap *= 2.0;
        guard += 1;
        if guard > 60 {
            return Err(Error::BracketNotFound {
                what: "beta cap with z < 0.9".into(),
                lo: 10.0 * fold_slope(spec),
                hi: cap,
                hint: "z(beta) never settled below 0.9".into(),
            });
        }
    }
}

/// Refine a sign change of u(1; beta) by bisection followed by safeguarded
/// Newton using v(1).
fn refine_root(spec: &ProblemSpec, lambda: f64, lo0: f64, hi0: f64, f_lo0: f64) -> Result<f64> {
    let (mut lo, mut hi, mut f_lo) = (lo0, hi0, f_lo0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (f_mid, _) = end_state(spec, lambda, mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_lo * f_mid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
    }
    let mut beta = 0.5 * (lo + hi);
    for _ in 0..20 {
        let (u1, _, v1) = end_state_sens(spec, lambda, beta)?;
        if u1 == 0.0 {
            break;
        }
        if f_lo * u1 < 0.0 {
            hi = beta.min(hi);
        } else {
            lo = beta.max(lo);
        }
        let mut next = beta - u1 / v1;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - beta).abs() <= 1e-13 * beta.abs().max(1e-3) {
            beta = next;
            break;
        }
        beta = next;
    }
    Ok(beta)
}

/// All sign changes of u(1; beta) over an explicit beta grid; grid cells
/// around slope-sign changes are subdivided to catch close root pairs.
fn brackets_on_grid(
    spec: &ProblemSpec,
    lambda: f64,
    grid: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    let values: Result<Vec<f64>> = grid
        .par_iter()
        .map(|&b| Ok(end_state(spec, lambda, b)?.0))
        .collect();
    let values = values?;
    let mut brackets: Vec<(f64, f64, f64)> = Vec::new();
    for i in 0..grid.len() - 1 {
        if values[i] * values[i + 1] < 0.0 {
            brackets.push((grid[i], grid[i + 1], values[i]));
        }
    }
    // a slope reversal may hide a close pair of roots inside one cell
    for i in 1..grid.len() - 1 {
        let d_prev = values[i] - values[i - 1];
        let d_next = values[i + 1] - values[i];
        if d_prev * d_next < 0.0 {
            let (a, b) = (grid[i - 1], grid[i + 1]);
            let m = 24;
            let sub: Vec<f64> = (0..=m).map(|j| a + (b - a) * j as f64 / m as f64).collect();
            let sub_vals: Result<Vec<f64>> = sub
                .par_iter()
                .map(|&b| Ok(end_state(spec, lambda, b)?.0))
                .collect();
            let sub_vals = sub_vals?;
            for j in 0..m {
                if sub_vals[j] * sub_vals[j + 1] < 0.0 {
                    let covered = brackets
                        .iter()
                        .any(|&(lo, hi, _)| sub[j] >= lo - 1e-300 && sub[j + 1] <= hi + 1e-300);
                    if !covered {
                        brackets.push((sub[j], sub[j + 1], sub_vals[j]));
                    }
                }
            }
        }
    }
    brackets.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(brackets)
}

/// Every solution of the boundary value problem at this lambda found by a
/// beta scan: sign changes of z(beta) - 1 bracketed on a geometric grid,
/// refined, classified by symmetry. The returned list is ordered by beta.
pub fn find_solutions(spec: &ProblemSpec, lambda: f64) -> Result<Vec<SolutionAtLambda>> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    spec.validate()?;
    let cap = beta_scan_cap(spec, lambda)?;
    let lo = (1e-3_f64).min(0.1 * lambda);
    let n = 400;
    let grid: Vec<f64> = (0..=n)
        .map(|i| lo * (cap / lo).powf(i as f64 / n as f64))
        .collect();
    let brackets = brackets_on_grid(spec, lambda, &grid)?;
    let mut roots = Vec::new();
    for (blo, bhi, f_lo) in brackets {
        roots.push(refine_root(spec, lambda, blo, bhi, f_lo)?);
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-8 * a.abs().max(1e-3));
    roots
        .into_iter()
        .map(|beta| build_solution(spec, lambda, beta))
        .collect()
}

/// M = integral over (-1,1) of the cumulative weight: for h = lambda |x|^l
/// this is 2 lambda / (l + 1). Every solution satisfies
/// 2 beta = int int h f(u) <= M f(sup u).
pub fn weight_double_integral(spec: &ProblemSpec, lambda: f64) -> f64 {
    2.0 * lambda / (spec.l + 1.0)
}

/// The non-even branch over a decreasing lambda grid, with the merge-based
/// bracket for the bifurcation parameter alpha_2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonEvenBranch {
    /// Decreasing lambda grid, as supplied.
    pub lambda_grid: Vec<f64>,
    /// The non-even mirror pair at each grid lambda, ordered as lambda_grid.
    pub solutions: Vec<Vec<SolutionAtLambda>>,
    /// Midpoint of the merge bracket.
    pub merge_lambda: f64,
    /// (lo, hi): the pair exists at lo and is gone at hi.
    pub merge_bracket: (f64, f64),
    /// alpha on the upper even branch with lambda(alpha) = merge_lambda.
    pub alpha_2_estimate: f64,
    pub alpha_2_bracket: (f64, f64),
}

struct BranchContext<'a> {
    spec: &'a ProblemSpec,
    gen: &'a Generator,
    alpha_star: f64,
}

impl BranchContext<'_> {
    /// Slope of the upper even solution at this lambda.
    fn even_upper_slope(&self, lambda: f64) -> Result<f64> {
        let alpha = korman::alpha_of_lambda(
            self.spec,
            self.gen,
            lambda,
            BranchSide::Upper,
            self.alpha_star,
        )?;
        Ok(korman::korman_solution(self.spec, self.gen, alpha)?.boundary_slope())
    }

    /// Does a non-even root distinct from the even one exist near the upper
    /// even slope? Scans u(1; beta) over a window around it, with one finer
    /// pass close to the slope when the wide pass sees nothing.
    fn noneven_near_even(&self, lambda: f64) -> Result<bool> {
        let beta_e = self.even_upper_slope(lambda)?;
        for (rel_window, n) in [(0.35, 1200), (0.015, 800)] {
            let a = beta_e * (1.0 - rel_window);
            let b = beta_e * (1.0 + rel_window);
            let grid: Vec<f64> = (0..=n)
                .map(|i| a + (b - a) * i as f64 / n as f64)
                .collect();
            let brackets = brackets_on_grid(self.spec, lambda, &grid)?;
            for (lo, hi, f_lo) in brackets {
                let root = refine_root(self.spec, lambda, lo, hi, f_lo)?;
                if (root - beta_e).abs() <= 1e-7 * beta_e {
                    continue;
                }
                if build_solution(self.spec, lambda, root)?.symmetry == Symmetry::NonEven {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }
}

/// Newton correction of the branch member from a predicted slope; errors when
/// the corrector leaves the non-even branch.
fn correct_member(
    spec: &ProblemSpec,
    lambda: f64,
    beta_pred: f64,
    beta_even: f64,
) -> Result<f64> {
    let mut beta = beta_pred;
    for _ in 0..16 {
        let (u1, _, v1) = end_state_sens(spec, lambda, beta)?;
        let step = u1 / v1;
        if !step.is_finite() {
            return Err(Error::BranchLost {
                lambda,
                detail: "singular variational derivative during correction".into(),
            });
        }
        beta -= step;
        if !(beta > 0.0) {
            return Err(Error::BranchLost {
                lambda,
                detail: "corrector left the positive slope region".into(),
            });
        }
        if step.abs() <= 1e-12 * beta.abs().max(1e-3) {
            if (beta - beta_even).abs() <= 1e-6 * beta_even {
                return Err(Error::BranchLost {
                    lambda,
                    detail: "corrector collapsed onto the even root".into(),
                });
            }
            return Ok(beta);
        }
    }
    Err(Error::BranchLost {
        lambda,
        detail: "corrector failed to converge".into(),
    })
}

/// Trace the non-even pair over the grid (ascending internally), then bracket
/// the lambda at which the pair merges with the upper even branch and map it
/// to alpha_2 through the branch parameterization.
pub fn trace_noneven_branch(
    spec: &ProblemSpec,
    gen: &Generator,
    scan: &SpectralScan,
    lambda_grid: &[f64],
) -> Result<NonEvenBranch> {
    if lambda_grid.len() < 2 {
        return Err(Error::Domain("lambda grid needs at least two points".into()));
    }
    if !lambda_grid.windows(2).all(|w| w[0] > w[1]) {
        return Err(Error::Domain("lambda grid must be strictly decreasing".into()));
    }
    let lambda_a3 = korman::lambda_of_alpha(spec, gen, scan.alpha_3)?;
    if !(lambda_grid[0] < lambda_a3 && *lambda_grid.last().unwrap() > 0.0) {
        return Err(Error::Domain(format!(
            "lambda grid must lie inside (0, lambda(alpha_3) = {lambda_a3})"
        )));
    }
    let ctx = BranchContext {
        spec,
        gen,
        alpha_star: scan.alpha_star,
    };

    let ascending: Vec<f64> = lambda_grid.iter().rev().copied().collect();

    // seed with a full scan at the smallest lambda
    let all = find_solutions(spec, ascending[0])?;
    let noneven: Vec<&SolutionAtLambda> = all
        .iter()
        .filter(|s| s.symmetry == Symmetry::NonEven)
        .collect();
    if noneven.len() < 2 {
        return Err(Error::BranchLost {
            lambda: ascending[0],
            detail: format!(
                "expected a non-even mirror pair, found {} non-even root(s)",
                noneven.len()
            ),
        });
    }
    // mirror partner of the pair member with the smallest slope
    let lower = noneven
        .iter()
        .min_by(|a, b| a.beta.total_cmp(&b.beta))
        .unwrap();
    let partner = noneven
        .iter()
        .min_by(|a, b| {
            (a.beta - lower.mirror_beta)
                .abs()
                .total_cmp(&(b.beta - lower.mirror_beta).abs())
        })
        .unwrap();
    if (partner.beta - lower.mirror_beta).abs() > 1e-5 * lower.mirror_beta {
        return Err(Error::BranchLost {
            lambda: ascending[0],
            detail: "non-even roots do not close under reflection".into(),
        });
    }
    let mut pair_history: Vec<(f64, f64)> = vec![(ascending[0], lower.beta)];
    let mut per_lambda: Vec<Vec<SolutionAtLambda>> =
        vec![vec![(*lower).clone(), (*partner).clone()]];

    // continue the lower member upward in lambda with a secant predictor and
    // Newton corrector, halving the step on failure
    for &target in &ascending[1..] {
        let (mut lam_cur, mut beta_cur) = *pair_history.last().unwrap();
        let mut halvings = 0;
        loop {
            let lam_next = target;
            let step_target = {
                // limit one continuation step to a factor of 2 in lambda
                let max_fac = 2.0;
                if lam_next / lam_cur > max_fac {
                    lam_cur * max_fac
                } else {
                    lam_next
                }
            };
            let beta_pred = match pair_history.len() {
                1 => beta_cur,
                _ => {
                    let (l0, b0) = pair_history[pair_history.len() - 2];
                    let (l1, b1) = pair_history[pair_history.len() - 1];
                    if (l1 - l0).abs() > 0.0 {
                        b1 + (b1 - b0) / (l1 - l0) * (step_target - l1)
                    } else {
                        b1
                    }
                }
            };
            let beta_even = ctx.even_upper_slope(step_target)?;
            match correct_member(spec, step_target, beta_pred.max(1e-6), beta_even) {
                Ok(beta) => {
                    let sol = build_solution(spec, step_target, beta)?;
                    if sol.symmetry != Symmetry::NonEven {
                        return Err(Error::BranchLost {
                            lambda: step_target,
                            detail: "continuation landed on an even solution".into(),
                        });
                    }
                    pair_history.push((step_target, beta));
                    lam_cur = step_target;
                    beta_cur = beta;
                    if lam_cur == target {
                        let partner = refine_partner(spec, lam_cur, &sol)?;
                        per_lambda.push(vec![sol, partner]);
                        break;
                    }
                }
                Err(_) if halvings < 12 => {
                    // refine the grid between lam_cur and the target
                    halvings += 1;
                    let mid = 0.5 * (lam_cur + step_target);
                    let beta_even = ctx.even_upper_slope(mid)?;
                    let beta = correct_member(spec, mid, beta_cur, beta_even)?;
                    pair_history.push((mid, beta));
                    lam_cur = mid;
                    beta_cur = beta;
                }
                Err(e) => return Err(e),
            }
        }
    }

    // merge bracketing: the pair exists at the top of the grid and is gone
    // just above lambda(alpha_1)
    let mut lo = ascending[ascending.len() - 1];
    let mut hi = korman::lambda_of_alpha(spec, gen, scan.alpha_1)? * 1.02;
    if !ctx.noneven_near_even(lo)? {
        return Err(Error::BranchLost {
            lambda: lo,
            detail: "no non-even pair near the even branch at the top grid point".into(),
        });
    }
    if ctx.noneven_near_even(hi)? {
        return Err(Error::BranchLost {
            lambda: hi,
            detail: "non-even pair persists above lambda(alpha_1)".into(),
        });
    }
    let alpha_up = |lam: f64| -> Result<f64> {
        korman::alpha_of_lambda(spec, gen, lam, BranchSide::Upper, scan.alpha_star)
    };
    let mut extra = 0;
    loop {
        let rel = (hi - lo) / hi;
        let alpha_width = alpha_up(lo)? - alpha_up(hi)?;
        if rel <= 1e-4 && (alpha_width <= 8e-3 * scan.alpha_3 || extra >= 12) {
            break;
        }
        if rel <= 1e-7 {
            break;
        }
        if rel <= 1e-4 {
            extra += 1;
        }
        let mid = 0.5 * (lo + hi);
        if ctx.noneven_near_even(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let merge_bracket = (lo, hi);
    let merge_lambda = 0.5 * (lo + hi);
    let alpha_2_bracket = (alpha_up(hi)?, alpha_up(lo)?);
    let alpha_2_estimate = 0.5 * (alpha_2_bracket.0 + alpha_2_bracket.1);

    // report in the supplied (decreasing) order
    per_lambda.reverse();
    Ok(NonEvenBranch {
        lambda_grid: lambda_grid.to_vec(),
        solutions: per_lambda,
        merge_lambda,
        merge_bracket,
        alpha_2_estimate,
        alpha_2_bracket,
    })
}

/// Polish the mirror partner of a non-even solution into a root of its own.
fn refine_partner(
    spec: &ProblemSpec,
    lambda: f64,
    sol: &SolutionAtLambda,
) -> Result<SolutionAtLambda> {
    let mut beta = sol.mirror_beta;
    for _ in 0..20 {
        let (u1, _, v1) = end_state_sens(spec, lambda, beta)?;
        let step = u1 / v1;
        if !step.is_finite() {
            break;
        }
        beta -= step;
        if step.abs() <= 1e-13 * beta.abs().max(1e-3) {
            break;
        }
    }
    build_solution(spec, lambda, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::korman::{find_alpha_star, generate, korman_solution, lambda_of_alpha};
    use crate::spectra;

    fn setup_exp() -> (ProblemSpec, Generator) {
        let spec = ProblemSpec::exponential(1.0);
        let gen = generate(&spec, 16.0).unwrap();
        (spec, gen)
    }

    #[test]
    fn korman_branch_self_consistency() {
        // shoot with the branch slope at lambda(alpha): the first zero is x = 1
        let (spec, gen) = setup_exp();
        let alpha = 5.0;
        let lam = lambda_of_alpha(&spec, &gen, alpha).unwrap();
        let sol = korman_solution(&spec, &gen, alpha).unwrap();
        let beta = sol.boundary_slope();
        let shot = shoot(&spec, lam, beta, 1.5).unwrap();
        let z = shot.z.expect("zero exists");
        assert!((z - 1.0).abs() < 1e-7, "z = {z}");
        assert!(shot.slope_at_z.unwrap() < 0.0);
    }

    #[test]
    fn large_beta_first_zero_before_one() {
        let (spec, _) = setup_exp();
        let shot = shoot(&spec, 0.5, 3000.0, 1.5).unwrap();
        assert!(shot.z.expect("zero exists") < 1.0);
    }

    #[test]
    fn positive_part_is_concave() {
        let (spec, _) = setup_exp();
        let shot = shoot(&spec, 0.4, 2.0, 1.5).unwrap();
        for n in shot.traj.nodes() {
            if n.y[0] > 0.0 {
                assert!(n.dy[1] <= 0.0, "u'' = {} at x = {}", n.dy[1], n.x);
            }
        }
    }

    #[test]
    fn z_prime_matches_finite_differences() {
        let (spec, _) = setup_exp();
        for (lam, beta) in [(0.5, 2.0), (0.3, 6.0), (1.2, 4.0)] {
            let zp = z_prime(&spec, lam, beta).unwrap();
            let h = 1e-6 * beta;
            let z1 = shoot_variational(&spec, lam, beta + h).unwrap().z;
            let z0 = shoot_variational(&spec, lam, beta - h).unwrap().z;
            let fd = (z1 - z0) / (2.0 * h);
            assert!(
                (zp - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                "lambda = {lam}, beta = {beta}: z' = {zp}, fd = {fd}"
            );
        }
    }

    #[test]
    fn morse_two_regime_variational_structure() {
        // below lambda(alpha_3) the upper even solution has Morse index 2,
        // z'(U'(-1)) > 0, and v has exactly two zeros with v(1) > 0
        let (spec, gen) = setup_exp();
        let astar = find_alpha_star(&spec, &gen).unwrap();
        let alpha = 8.0; // comfortably above alpha_3 ~ 4.32
        let lam = lambda_of_alpha(&spec, &gen, alpha).unwrap();
        let sol = korman_solution(&spec, &gen, alpha).unwrap();
        let pot = spectra::LinearizedPotential::from_solution(&spec, &sol);
        assert_eq!(spectra::morse_index(&pot).unwrap(), 2);
        let beta = sol.boundary_slope();
        let var = shoot_variational(&spec, lam, beta).unwrap();
        assert!(var.z_prime > 0.0, "z' = {}", var.z_prime);
        // count zeros of v in (-1, 1)
        let mut zeros = 0;
        let mut last_sign = 0.0;
        for i in 0..=2000 {
            let x = -1.0 + 2.0 * i as f64 / 2000.0;
            if x <= -1.0 + 1e-9 {
                continue;
            }
            let (y, _) = var.traj.evaluate(x).unwrap();
            let s = if y[2] > 0.0 {
                1.0
            } else if y[2] < 0.0 {
                -1.0
            } else {
                0.0
            };
            if s != 0.0 {
                if last_sign != 0.0 && s != last_sign {
                    zeros += 1;
                }
                last_sign = s;
            }
        }
        assert_eq!(zeros, 2, "v should vanish exactly twice in (-1, 1)");
        let (y1, _) = var.traj.evaluate(1.0).unwrap();
        assert!(y1[2] > 0.0, "v(1) = {}", y1[2]);
        let _ = astar;
    }

    #[test]
    fn find_solutions_structure_below_crossing() {
        // at lambda = lambda(alpha_3)/2 there are two even roots (matching the
        // branch) and one non-even mirror pair
        let (spec, gen) = setup_exp();
        let astar = find_alpha_star(&spec, &gen).unwrap();
        // alpha_3 for l = 1 is near 4.316; use its lambda without a full scan
        let lam_a3 = lambda_of_alpha(&spec, &gen, 4.3160598911).unwrap();
        let lam = 0.5 * lam_a3;
        let sols = find_solutions(&spec, lam).unwrap();
        assert!(sols.len() >= 4, "found {} roots", sols.len());
        let evens: Vec<_> = sols.iter().filter(|s| s.symmetry == Symmetry::Even).collect();
        let odds: Vec<_> = sols
            .iter()
            .filter(|s| s.symmetry == Symmetry::NonEven)
            .collect();
        assert_eq!(evens.len(), 2);
        assert_eq!(odds.len() % 2, 0);
        assert!(odds.len() >= 2);

        // even roots agree with the Korman predictions on both branch sides
        let a_lo = korman::alpha_of_lambda(&spec, &gen, lam, BranchSide::Lower, astar).unwrap();
        let a_hi = korman::alpha_of_lambda(&spec, &gen, lam, BranchSide::Upper, astar).unwrap();
        let b_lo = korman_solution(&spec, &gen, a_lo).unwrap().boundary_slope();
        let b_hi = korman_solution(&spec, &gen, a_hi).unwrap().boundary_slope();
        assert!((evens[0].beta - b_lo).abs() <= 1e-6, "{} vs {b_lo}", evens[0].beta);
        assert!((evens[1].beta - b_hi).abs() <= 1e-6, "{} vs {b_hi}", evens[1].beta);

        // the mirror pair closes under reflection and brackets the even slope
        let (a, b) = (odds[0], odds[1]);
        assert!((a.mirror_beta - b.beta).abs() <= 1e-6 * b.beta);
        assert!(a.beta < b_hi && b_hi < b.beta);
        assert!((a.sup_norm - b.sup_norm).abs() <= 1e-6 * a.sup_norm);

        // residuals and the slope identity 2 beta = int int h f(u) <= M f(sup)
        let m = weight_double_integral(&spec, lam);
        for s in &sols {
            assert!(s.residual <= 1e-8, "residual {:e}", s.residual);
            assert!(m * spec.nonlinearity.f(s.sup_norm) > 2.0 * s.beta);
        }
    }

    #[test]
    fn mirror_closure_reproduces_reflection() {
        let (spec, gen) = setup_exp();
        let lam = 0.5 * lambda_of_alpha(&spec, &gen, 4.3160598911).unwrap();
        let sols = find_solutions(&spec, lam).unwrap();
        let ne = sols
            .iter()
            .find(|s| s.symmetry == Symmetry::NonEven)
            .expect("non-even root exists");
        let mirrored = build_solution(&spec, lam, ne.mirror_beta).unwrap();
        assert!(mirrored.residual < 1e-6);
        let n = ne.samples.len();
        for i in 0..n {
            let (x, u) = ne.samples[i];
            let (xm, um) = mirrored.samples[n - 1 - i];
            assert!((x + xm).abs() < 1e-12);
            assert!(
                (u - um).abs() <= 1e-6 * ne.sup_norm,
                "reflection mismatch at x = {x}"
            );
        }
    }

    #[test]
    fn solution_count_across_the_fold() {
        let (spec, gen) = setup_exp();
        let astar = find_alpha_star(&spec, &gen).unwrap();
        let lam_star = lambda_of_alpha(&spec, &gen, astar).unwrap();
        let below = find_solutions(&spec, 0.999 * lam_star).unwrap();
        let evens = below.iter().filter(|s| s.symmetry == Symmetry::Even).count();
        assert_eq!(evens, 2, "two even roots just below the fold");
        let above = find_solutions(&spec, 1.001 * lam_star).unwrap();
        assert!(above.is_empty(), "no roots above the fold, found {}", above.len());
    }

    #[test]
    fn weight_double_integral_matches_quadrature() {
        let spec = ProblemSpec::exponential(1.7);
        let lam = 0.42;
        // oracle: nested quadrature of int_{-1}^{1} int_{-1}^{x} h(t) dt dx
        let inner = |x: f64| {
            crate::quad::composite(
                |t: f64| lam * pow_l(t, spec.l),
                &crate::quad::uniform_edges(-1.0, x, 32),
            )
        };
        let outer = crate::quad::composite(inner, &crate::quad::uniform_edges(-1.0, 1.0, 32));
        let m = weight_double_integral(&spec, lam);
        assert!((m - outer).abs() < 1e-10, "M = {m}, quadrature {outer}");
    }

    #[test]
    fn noneven_trace_and_merge_bracket() {
        let (spec, gen) = setup_exp();
        let grid: Vec<f64> = (0..36)
            .map(|i| 0.05 * (30.0_f64 / 0.05).powf(i as f64 / 35.0))
            .collect();
        let scan = spectra::scan_branch(&spec, &gen.ensure_depth(30.0).unwrap(), &grid).unwrap();
        let lam_a3 = lambda_of_alpha(&spec, &gen, scan.alpha_3).unwrap();
        let lgrid = [0.4 * lam_a3, 0.15 * lam_a3];
        let branch = trace_noneven_branch(&spec, &gen, &scan, &lgrid).unwrap();
        // sup norms grow as lambda decreases
        let s0 = branch.solutions[0][0].sup_norm; // at 0.4 lam_a3
        let s1 = branch.solutions[1][0].sup_norm; // at 0.15 lam_a3
        assert!(s1 > s0, "sup norm should grow: {s0} -> {s1}");
        // the bracket sits inside [alpha_1, alpha_3] up to its own width
        let (alo, ahi) = branch.alpha_2_bracket;
        assert!(alo <= scan.alpha_3 + 1e-2 && ahi >= scan.alpha_1 - 1e-2);
        assert!(branch.merge_lambda > 0.0 && branch.merge_lambda <= scan.lambda_star);
        // existence/absence across the bracket
        let ctx = BranchContext {
            spec: &spec,
            gen: &gen,
            alpha_star: scan.alpha_star,
        };
        assert!(ctx.noneven_near_even(branch.merge_bracket.0).unwrap());
        assert!(!ctx.noneven_near_even(branch.merge_bracket.1).unwrap());
    }
}
