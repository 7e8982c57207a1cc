use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};

use nalgebra::DVector;
use npasa_core::corpus;
use npasa_core::driver::{read_log, write_log};
use npasa_core::model::ReferenceSolution;
use npasa_core::oracle::{derivative_check, projection_sweep, reference_check, sample_points};
use npasa_core::{fit_convergence_order, npasa_solve, LogRecord, NlpProblem, QuadraticNlpSpec, Status};
use thiserror::Error;

use crate::args::{CheckArgs, CorpusArgs, RateArgs, SolveArgs, Source};

/// Failures that end a command, each tied to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Check(_) => 3,
        }
    }
}

impl From<npasa_core::Error> for CliError {
    fn from(e: npasa_core::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

/// A problem with its default start and any known solutions.
struct Loaded {
    problem: NlpProblem,
    x0: DVector<f64>,
    lambda0: DVector<f64>,
    references: Vec<ReferenceSolution>,
}

fn load(source: &Source) -> Result<Loaded, CliError> {
    if let Some(name) = &source.corpus_name {
        let cp = corpus::by_name(name).ok_or_else(|| {
            CliError::Input(format!("unknown problem `{name}`; available: {}", corpus::names().join(", ")))
        })?;
        let references = cp
            .solutions
            .iter()
            .map(|(x, lambda, mu)| ReferenceSolution {
                x: x.clone(),
                lambda: lambda.clone(),
                mu: Some(mu.clone()),
            })
            .collect();
        return Ok(Loaded {
            problem: cp.problem,
            x0: cp.x0,
            lambda0: cp.lambda0,
            references,
        });
    }
    let path = source.problem.as_deref().expect("clap enforces one source");
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let definition = QuadraticNlpSpec::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let problem = definition.to_problem();
    let x0 = definition.x0.clone().unwrap_or_else(|| {
        let mut x = DVector::zeros(definition.dim());
        problem.omega().clamp_to_box(&mut x);
        x
    });
    let lambda0 = definition.lambda0.clone().unwrap_or_else(|| DVector::zeros(definition.num_eq()));
    Ok(Loaded {
        problem,
        x0,
        lambda0,
        references: definition.solution.into_iter().collect(),
    })
}

fn fmt_vec(v: &DVector<f64>) -> String {
    // adding zero turns -0.0 into 0.0
    let parts: Vec<String> = v.iter().map(|x| format!("{:.10}", x + 0.0)).collect();
    format!("[{}]", parts.join(", "))
}

fn sized(name: &str, values: Option<&Vec<f64>>, len: usize) -> Result<Option<DVector<f64>>, CliError> {
    match values {
        Some(v) if v.len() != len => Err(CliError::Input(format!("--{name} has {} entries, expected {len}", v.len()))),
        Some(v) => Ok(Some(DVector::from_column_slice(v))),
        None => Ok(None),
    }
}

/// Returns the exit code: 0 when converged, 2 at the iteration cap.
pub fn solve(args: &SolveArgs, out: &mut impl Write) -> Result<u8, CliError> {
    let config = args.config.to_config();
    config.validate()?;
    let loaded = load(&args.source)?;
    let p = &loaded.problem;
    let x0 = sized("x0", args.x0.as_ref(), p.dim())?.unwrap_or(loaded.x0);
    let lambda0 = sized("lambda0", args.lambda0.as_ref(), p.num_eq())?.unwrap_or(loaded.lambda0);
    let mu0 = DVector::zeros(p.num_ineq());
    let sol = npasa_solve(p, &x0, &lambda0, &mu0, &config)?;
    if let Some(path) = &args.log {
        let file = File::create(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        write_log(&sol.log, &mut w)?;
        w.flush().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    let status = match sol.status {
        Status::Converged => "converged",
        Status::MaxOuterIterations => "iteration limit reached",
    };
    let lines = [
        format!("problem     {}", p.name()),
        format!("status      {status}"),
        format!(
            "iterations  {} (phase one {}, phase two {}, rejected local steps {})",
            sol.iterations, sol.phase_one_steps, sol.phase_two_steps, sol.rejected_local_steps
        ),
        format!("E1          {:.3e}", sol.report.e1),
        format!("Em1         {:.3e}", sol.report.em1),
        format!("Ec          {:.3e}", sol.report.ec),
        format!("penalty     {:.3e}", sol.final_penalty),
        format!("x           {}", fmt_vec(&sol.iterate.x)),
        format!("lambda      {}", fmt_vec(&sol.iterate.lambda)),
    ];
    for line in lines {
        writeln!(out, "{line}").map_err(io_err)?;
    }
    if sol.start_projected {
        writeln!(out, "note        the start was projected onto the polyhedron").map_err(io_err)?;
    }
    Ok(match sol.status {
        Status::Converged => 0,
        Status::MaxOuterIterations => 2,
    })
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Input(e.to_string())
}

pub fn list_corpus(args: &CorpusArgs, out: &mut impl Write) -> Result<(), CliError> {
    if let Some(name) = &args.dump {
        let cp = corpus::by_name(name).ok_or_else(|| CliError::Input(format!("unknown problem `{name}`")))?;
        let definition = cp
            .definition
            .ok_or_else(|| CliError::Input(format!("`{name}` is not in the quadratic file family")))?;
        write!(out, "{}", definition.to_text()).map_err(io_err)?;
        return Ok(());
    }
    writeln!(out, "{:<16} {:>2} {:>3}  {:<24} start", "name", "n", "ell", "solution").map_err(io_err)?;
    for cp in corpus::corpus() {
        writeln!(
            out,
            "{:<16} {:>2} {:>3}  {:<24} {}",
            cp.name,
            cp.problem.dim(),
            cp.problem.num_eq(),
            fmt_short(cp.x_star()),
            fmt_short(&cp.x0)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn fmt_short(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("({})", parts.join(", "))
}

struct Row {
    name: String,
    value: f64,
    tol: f64,
}

impl Row {
    fn ok(&self) -> bool {
        self.value <= self.tol
    }
}

pub fn check(args: &CheckArgs, out: &mut impl Write) -> Result<(), CliError> {
    if args.samples == 0 {
        return Err(CliError::Input("--samples must be positive".into()));
    }
    let loaded = load(&args.source)?;
    let p = &loaded.problem;
    let points = sample_points(p.omega(), args.samples, args.seed);
    let deriv = derivative_check(p, &points, args.fd_step)?;
    let sweep = projection_sweep(p.omega(), args.samples, args.seed)?;

    let mut rows = vec![Row {
        name: "objective gradient".into(),
        value: deriv.gradient_error,
        tol: args.derivative_tol,
    }];
    for (j, &e) in deriv.constraint_errors.iter().enumerate() {
        rows.push(Row {
            name: format!("constraint {j} jacobian row"),
            value: e,
            tol: args.derivative_tol,
        });
    }
    rows.push(Row {
        name: "projection kkt residual".into(),
        value: sweep.max_kkt_residual,
        tol: args.kkt_tol,
    });
    rows.push(Row {
        name: "projection infeasibility".into(),
        value: sweep.max_infeasibility,
        tol: args.kkt_tol,
    });
    for (s, sol) in loaded.references.iter().enumerate() {
        let rep = reference_check(p, sol)?;
        for (j, &r) in rep.constraint_residuals.iter().enumerate() {
            rows.push(Row {
                name: format!("solution {s} constraint {j}"),
                value: r,
                tol: args.kkt_tol,
            });
        }
        rows.push(Row {
            name: format!("solution {s} stationarity"),
            value: rep.kkt.stationarity,
            tol: args.kkt_tol,
        });
        rows.push(Row {
            name: format!("solution {s} complementarity"),
            value: rep.kkt.complementarity.max(rep.kkt.sign).max(rep.kkt.feasibility),
            tol: args.kkt_tol,
        });
    }

    writeln!(out, "problem {} ({} points, fd step {:e})", p.name(), points.len(), args.fd_step).map_err(io_err)?;
    writeln!(out, "{:<32} {:>10} {:>10}  status", "check", "value", "tolerance").map_err(io_err)?;
    for r in &rows {
        let status = if r.ok() { "ok" } else { "FAIL" };
        writeln!(out, "{:<32} {:>10.2e} {:>10.0e}  {status}", r.name, r.value, r.tol).map_err(io_err)?;
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.ok()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed.join(", ")))
    }
}

/// Positive values of the trailing `window` accepted records.
fn trailing(log: &[LogRecord], window: usize, value: impl Fn(&LogRecord) -> f64) -> Vec<f64> {
    let values: Vec<f64> = log.iter().filter(|r| r.accepted).map(value).collect();
    let start = values.len().saturating_sub(window);
    values[start..].iter().copied().filter(|&v| v > 0.0).collect()
}

pub fn rate(args: &RateArgs, out: &mut impl Write) -> Result<(), CliError> {
    if args.window < 3 {
        return Err(CliError::Input(format!("--window {} is below 3", args.window)));
    }
    let file = File::open(&args.log).map_err(|e| CliError::Input(format!("{}: {e}", args.log.display())))?;
    let log = read_log(BufReader::new(file)).map_err(|e| CliError::Input(format!("{}: {e}", args.log.display())))?;
    let e1 = trailing(&log, args.window, |r| r.e1);
    let fit = fit_convergence_order(&e1, args.window)
        .map_err(|e| CliError::Input(format!("E1 tail {e1:?}: {e}")))?;
    writeln!(
        out,
        "E1  order {:.2}  constant {:.3e}  max ratio {:.3e}  window {}",
        fit.order, fit.constant, fit.max_quadratic_ratio, fit.window
    )
    .map_err(io_err)?;
    let h = trailing(&log, args.window, |r| r.h_norm);
    match fit_convergence_order(&h, args.window) {
        Ok(fit) => writeln!(
            out,
            "|h| order {:.2}  constant {:.3e}  max ratio {:.3e}  window {}",
            fit.order, fit.constant, fit.max_quadratic_ratio, fit.window
        ),
        Err(e) => writeln!(out, "|h| not fitted: {e}"),
    }
    .map_err(io_err)?;
    Ok(())
}
