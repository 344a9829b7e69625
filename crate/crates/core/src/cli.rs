//! Command-line front end.
//!
//! Exit codes: 0 success (and verification pass), 1 verification failure,
//! 2 usage error, 3 numerical failure. Data goes to stdout or --output;
//! diagnostics go to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::diagram::{self, ExportFormat, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::problem::{Nonlinearity, ProblemSpec};
use crate::{korman, shooting, spectra};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NonlinearityArg {
    /// f(u) = e^u
    Exp,
    /// f(u) = (u + 1)^p; requires --p
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ExportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ExportFormat::Json,
            FormatArg::Csv => ExportFormat::Csv,
        }
    }
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// Exponent l of the weight |x|^l.
    #[arg(long, default_value_t = 1.0)]
    l: f64,

    /// Nonlinearity selector.
    #[arg(long, value_enum, default_value_t = NonlinearityArg::Exp)]
    nonlinearity: NonlinearityArg,

    /// Power exponent p > 1; only with --nonlinearity power.
    #[arg(long)]
    p: Option<f64>,

    /// Relative ODE tolerance.
    #[arg(long, env = "LBL_TOL_REL")]
    tol_rel: Option<f64>,

    /// Absolute ODE tolerance.
    #[arg(long, env = "LBL_TOL_ABS")]
    tol_abs: Option<f64>,

    /// Branch sweep cap in alpha.
    #[arg(long, env = "LBL_ALPHA_MAX")]
    alpha_max: Option<f64>,
}

impl ProblemArgs {
    /// Validate flag combinations before any computation starts.
    fn to_spec(&self) -> std::result::Result<ProblemSpec, String> {
        let mut spec = match self.nonlinearity {
            NonlinearityArg::Exp => {
                if self.p.is_some() {
                    return Err("--p requires --nonlinearity power".into());
                }
                ProblemSpec::exponential(self.l)
            }
            NonlinearityArg::Power => {
                let p = self.p.ok_or("--nonlinearity power requires --p")?;
                ProblemSpec::power(self.l, p)
            }
        };
        if let Some(r) = self.tol_rel {
            spec.tolerances.ode_rel = r;
        }
        if let Some(a) = self.tol_abs {
            spec.tolerances.ode_abs = a;
        }
        if let Some(m) = self.alpha_max {
            spec.alpha_max = m;
        }
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output format.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,

    /// Destination path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(
    name = "lbl",
    version,
    about = "Branch, spectra and symmetry-breaking analysis for one-dimensional \
             Liouville-type boundary value problems"
)]
struct Cli {
    /// Worker threads for branch sweeps; 1 keeps runs sequential.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Evaluate the even branch solution at one alpha.
    Korman {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Branch parameter (the sup norm of the solution).
        #[arg(long)]
        alpha: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Eigenvalues mu_1..mu_3 and the Morse index at one alpha.
    Spectrum {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        alpha: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Sweep the even branch and export the table.
    Trace {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Lower end of the alpha grid.
        #[arg(long, default_value_t = 1e-2)]
        alpha_min: f64,
        /// Number of log-spaced grid points up to alpha-max.
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Non-even solutions: roots at one lambda, or the traced branch with
    /// the bifurcation bracket when --lambda is omitted.
    Noneven {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Find all solutions at this lambda only.
        #[arg(long)]
        lambda: Option<f64>,
        /// Number of lambda samples for the branch trace.
        #[arg(long, default_value_t = 4)]
        lambda_points: usize,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run the full verification suite; exit 0 only if every check passes.
    Verify {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Closed-form self-tests of the numerical substrate.
    Oracle {
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Serialize)]
struct KormanOutput {
    schema_version: String,
    alpha: f64,
    lambda: f64,
    eta_alpha: f64,
    boundary_slope: f64,
    /// (x, U, U') on the stored half-interval grid; U is even.
    samples: Vec<(f64, f64, f64)>,
}

#[derive(Serialize)]
struct SpectrumOutput {
    schema_version: String,
    alpha: f64,
    lambda: f64,
    mu1: f64,
    mu2: f64,
    mu3: f64,
    morse: usize,
    degenerate: bool,
}

#[derive(Serialize)]
struct NonevenAtLambda {
    schema_version: String,
    lambda: f64,
    solutions: Vec<shooting::SolutionAtLambda>,
}

#[derive(Serialize)]
struct NonevenBranchOutput {
    schema_version: String,
    branch: shooting::NonEvenBranch,
}

#[derive(Serialize)]
struct OracleCheck {
    name: String,
    max_error: f64,
    tolerance: f64,
    pass: bool,
}

#[derive(Serialize)]
struct OracleOutput {
    schema_version: String,
    checks: Vec<OracleCheck>,
    passed: bool,
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return 2;
    }
    // results are independent of the pool size; re-initialization is a no-op
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global();

    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(Error::Domain(msg)) if msg.starts_with("usage:") => {
            eprintln!("error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            3
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::Korman {
            problem,
            alpha,
            out,
        } => {
            let spec = usage(problem.to_spec())?;
            let gen = generator_for(&spec, alpha)?;
            let sol = korman::korman_solution(&spec, &gen, alpha)?;
            let doc = KormanOutput {
                schema_version: SCHEMA_VERSION.into(),
                alpha: sol.alpha,
                lambda: sol.lambda,
                eta_alpha: sol.eta_alpha,
                boundary_slope: sol.boundary_slope(),
                samples: sol.samples().to_vec(),
            };
            let csv = {
                let mut s = String::from("x,u,du\n");
                for &(x, u, du) in sol.samples() {
                    s.push_str(&format!("{x:.16e},{u:.16e},{du:.16e}\n"));
                }
                s
            };
            emit(&doc, csv, &out)?;
            Ok(0)
        }
        Cmd::Spectrum {
            problem,
            alpha,
            out,
        } => {
            let spec = usage(problem.to_spec())?;
            let gen = generator_for(&spec, alpha)?;
            let sol = korman::korman_solution(&spec, &gen, alpha)?;
            let pot = spectra::LinearizedPotential::from_solution(&spec, &sol);
            let mu1 = spectra::eigenvalue_only(&pot, 1)?;
            let mu2 = spectra::eigenvalue_only(&pot, 2)?;
            let mu3 = spectra::eigenvalue_only(&pot, 3)?;
            if mu3 <= 0.0 {
                return Err(Error::SpectralAnomaly(format!(
                    "mu_3 = {mu3} <= 0 at alpha = {alpha}"
                )));
            }
            let tol = 1e-5 * (1.0 + mu3.abs());
            let doc = SpectrumOutput {
                schema_version: SCHEMA_VERSION.into(),
                alpha,
                lambda: sol.lambda,
                mu1,
                mu2,
                mu3,
                morse: (mu1 < 0.0) as usize + (mu2 < 0.0) as usize,
                degenerate: mu1.abs() < tol || mu2.abs() < tol,
            };
            let csv = format!(
                "alpha,lambda,mu1,mu2,mu3,morse,degenerate\n\
                 {:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}\n",
                doc.alpha, doc.lambda, doc.mu1, doc.mu2, doc.mu3, doc.morse, doc.degenerate
            );
            emit(&doc, csv, &out)?;
            Ok(0)
        }
        Cmd::Trace {
            problem,
            alpha_min,
            points,
            out,
        } => {
            let spec = usage(problem.to_spec())?;
            if points < 2 || !(alpha_min > 0.0) || alpha_min >= spec.alpha_max {
                return Err(Error::Domain(
                    "usage: need points >= 2 and 0 < alpha-min < alpha-max".into(),
                ));
            }
            let grid = diagram::log_grid(alpha_min, spec.alpha_max, points);
            let table = diagram::trace_even_branch(&spec, &grid)?;
            write_out(&out, |dest| {
                diagram::export_table(&table, out.format.into(), dest)
            })?;
            Ok(0)
        }
        Cmd::Noneven {
            problem,
            lambda,
            lambda_points,
            out,
        } => {
            let spec = usage(problem.to_spec())?;
            match lambda {
                Some(lam) => {
                    if !(lam > 0.0) {
                        return Err(Error::Domain("usage: --lambda must be positive".into()));
                    }
                    let solutions = shooting::find_solutions(&spec, lam)?;
                    let csv = solutions_csv(&solutions);
                    let doc = NonevenAtLambda {
                        schema_version: SCHEMA_VERSION.into(),
                        lambda: lam,
                        solutions,
                    };
                    emit(&doc, csv, &out)?;
                }
                None => {
                    if lambda_points < 2 {
                        return Err(Error::Domain(
                            "usage: --lambda-points must be at least 2".into(),
                        ));
                    }
                    let depth = match spec.nonlinearity {
                        Nonlinearity::Exponential => spec.alpha_max,
                        Nonlinearity::Power { .. } => 1.0,
                    };
                    let gen = korman::generate(&spec, depth)?;
                    let grid = diagram::default_alpha_grid(&spec);
                    let scan = spectra::scan_branch(&spec, &gen, &grid)?;
                    let lam_a3 = korman::lambda_of_alpha(&spec, &gen, scan.alpha_3)?;
                    // log-spaced samples spanning near-bifurcation to blow-up
                    let fractions = diagram::log_grid(0.01, 0.8, lambda_points);
                    let lgrid: Vec<f64> = fractions.iter().rev().map(|f| f * lam_a3).collect();
                    let branch = shooting::trace_noneven_branch(&spec, &gen, &scan, &lgrid)?;
                    let csv = branch_csv(&branch);
                    let doc = NonevenBranchOutput {
                        schema_version: SCHEMA_VERSION.into(),
                        branch,
                    };
                    emit(&doc, csv, &out)?;
                }
            }
            Ok(0)
        }
        Cmd::Verify { problem, out } => {
            let spec = usage(problem.to_spec())?;
            let report = diagram::verify(&spec)?;
            write_out(&out, |dest| {
                diagram::export_report(&report, out.format.into(), dest)
            })?;
            Ok(if report.passed { 0 } else { 1 })
        }
        Cmd::Oracle { out } => {
            let doc = run_oracles()?;
            let csv = {
                let mut s = String::from("name,max_error,tolerance,pass\n");
                for c in &doc.checks {
                    s.push_str(&format!(
                        "{},{:.16e},{:.16e},{}\n",
                        c.name, c.max_error, c.tolerance, c.pass
                    ));
                }
                s
            };
            let passed = doc.passed;
            emit(&doc, csv, &out)?;
            Ok(if passed { 0 } else { 1 })
        }
    }
}

/// Map flag-combination problems to the usage error path.
fn usage(r: std::result::Result<ProblemSpec, String>) -> Result<ProblemSpec> {
    r.map_err(|msg| Error::Domain(format!("usage: {msg}")))
}

fn generator_for(spec: &ProblemSpec, alpha: f64) -> Result<korman::Generator> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let depth = match spec.nonlinearity {
        Nonlinearity::Exponential => alpha.max(1.0),
        Nonlinearity::Power { .. } => 1.0,
    };
    korman::generate(spec, depth)
}

fn solutions_csv(solutions: &[shooting::SolutionAtLambda]) -> String {
    let mut s = String::from("beta,sup_norm,symmetry,residual,mirror_beta,asymmetry\n");
    for sol in solutions {
        s.push_str(&format!(
            "{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e}\n",
            sol.beta,
            sol.sup_norm,
            match sol.symmetry {
                shooting::Symmetry::Even => "even",
                shooting::Symmetry::NonEven => "non_even",
            },
            sol.residual,
            sol.mirror_beta,
            sol.asymmetry
        ));
    }
    s
}

fn branch_csv(branch: &shooting::NonEvenBranch) -> String {
    let mut s = String::from("lambda,beta,sup_norm,asymmetry\n");
    for (lam, pair) in branch.lambda_grid.iter().zip(&branch.solutions) {
        for sol in pair {
            s.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                lam, sol.beta, sol.sup_norm, sol.asymmetry
            ));
        }
    }
    s.push_str(&format!(
        "# merge_lambda,{:.16e},bracket,{:.16e},{:.16e}\n",
        branch.merge_lambda, branch.merge_bracket.0, branch.merge_bracket.1
    ));
    s.push_str(&format!(
        "# alpha_2,{:.16e},bracket,{:.16e},{:.16e}\n",
        branch.alpha_2_estimate, branch.alpha_2_bracket.0, branch.alpha_2_bracket.1
    ));
    s
}

/// Closed-form self-tests: the l = 0 exponential generator, the free
/// eigenvalue ladder, and the power-case energy first integral.
fn run_oracles() -> Result<OracleOutput> {
    let mut checks = Vec::new();

    {
        let spec = ProblemSpec::exponential(0.0);
        let gen = korman::generate(&spec, 8.0)?;
        let mut worst = 0.0_f64;
        for k in 0..=500 {
            let x = 5.0 * k as f64 / 500.0;
            let (w, _) = gen.w(x)?;
            let exact = -2.0 * (x / 2.0_f64.sqrt()).cosh().ln();
            worst = worst.max((w - exact).abs());
        }
        checks.push(OracleCheck {
            name: "generator_l0_closed_form".into(),
            max_error: worst,
            tolerance: 1e-8,
            pass: worst <= 1e-8,
        });
    }

    {
        let pot = spectra::LinearizedPotential::zero(&crate::problem::Tolerances::default());
        let mut worst = 0.0_f64;
        for k in 1..=3 {
            let exact = (k as f64 * std::f64::consts::PI / 2.0).powi(2);
            worst = worst.max((spectra::eigenvalue_only(&pot, k)? - exact).abs());
            worst = worst.max((spectra::eigenvalue_full_interval(&pot, k)? - exact).abs());
        }
        checks.push(OracleCheck {
            name: "free_eigenvalue_ladder".into(),
            max_error: worst,
            tolerance: 1e-7,
            pass: worst <= 1e-7,
        });
    }

    {
        let p = 7.0;
        let spec = ProblemSpec::power(0.0, p);
        let gen = korman::generate(&spec, 1.0)?;
        let x_end = gen.eta(0.999)?;
        let mut worst = 0.0_f64;
        for k in 0..=400 {
            let x = x_end * k as f64 / 400.0;
            let (w, dw) = gen.w(x)?;
            let e = dw * dw / 2.0 + (w + 1.0).powf(p + 1.0) / (p + 1.0);
            worst = worst.max((e - 1.0 / (p + 1.0)).abs());
        }
        checks.push(OracleCheck {
            name: "power_energy_first_integral".into(),
            max_error: worst,
            tolerance: 1e-9,
            pass: worst <= 1e-9,
        });
    }

    let passed = checks.iter().all(|c| c.pass);
    Ok(OracleOutput {
        schema_version: SCHEMA_VERSION.into(),
        checks,
        passed,
    })
}

/// Serialize `doc` as JSON or emit the prepared CSV, to stdout or --output.
fn emit<T: Serialize>(doc: &T, csv: String, out: &OutputArgs) -> Result<()> {
    write_out(out, |dest| match out.format {
        FormatArg::Json => {
            serde_json::to_writer_pretty(&mut *dest, doc)
                .map_err(|e| Error::Domain(e.to_string()))?;
            dest.write_all(b"\n").map_err(|e| Error::Io {
                path: "<writer>".into(),
                source: e,
            })
        }
        FormatArg::Csv => dest.write_all(csv.as_bytes()).map_err(|e| Error::Io {
            path: "<writer>".into(),
            source: e,
        }),
    })
}

fn write_out<F>(out: &OutputArgs, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match &out.output {
        Some(path) => {
            let mut file = File::create(path).map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            f(&mut file)?;
            file.flush().map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_gate_p_requires_power() {
        let args = ProblemArgs {
            l: 1.0,
            nonlinearity: NonlinearityArg::Exp,
            p: Some(7.0),
            tol_rel: None,
            tol_abs: None,
            alpha_max: None,
        };
        assert!(args.to_spec().is_err());
        let args = ProblemArgs {
            l: 1.0,
            nonlinearity: NonlinearityArg::Power,
            p: None,
            tol_rel: None,
            tol_abs: None,
            alpha_max: None,
        };
        assert!(args.to_spec().is_err());
    }

    #[test]
    fn oracle_suite_passes() {
        let doc = run_oracles().unwrap();
        for c in &doc.checks {
            assert!(c.pass, "{}: max error {:e}", c.name, c.max_error);
        }
        assert!(doc.passed);
    }
}
