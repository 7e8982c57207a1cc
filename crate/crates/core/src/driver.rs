//! The outer loop: phase switching, penalty growth, termination, logging,
//! and an empirical convergence-order fit.

use std::io::{BufRead, Write};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::estimators::{EstimatorReport, PointEval};
use crate::model::{EvalCounts, Iterate, NlpProblem, SolverConfig};
use crate::phase1::global_step;
use crate::phase2::{local_step, LocalFailure};
use crate::projection::{mu_of_x, project};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    MaxOuterIterations,
}

/// One line of the iteration log.
///
/// Record 0 describes the starting triple (`phase` 0). Every later record
/// describes one pass of the outer loop; rejected local steps are logged with
/// `accepted = false` and leave `k` unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub k: usize,
    pub phase: u8,
    pub q: f64,
    /// Best error so far, `e_k`.
    pub e: f64,
    pub e0: Option<f64>,
    pub e1: f64,
    pub em1: f64,
    pub ec: f64,
    pub h_norm: f64,
    /// `E_m1(x, λ, μ(x, 1))`, the phase-one termination guard.
    pub em1_projected: Option<f64>,
    pub constraint_iterations: usize,
    pub multiplier_iterations: usize,
    pub accepted: bool,
    pub failure: Option<String>,
    /// Inner projected-gradient norm of a global step.
    pub pg_norm: Option<f64>,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub status: Status,
    pub iterate: Iterate,
    pub report: EstimatorReport,
    pub log: Vec<LogRecord>,
    /// Accepted outer iterations.
    pub iterations: usize,
    pub phase_one_steps: usize,
    pub phase_two_steps: usize,
    pub rejected_local_steps: usize,
    pub final_penalty: f64,
    /// The starting point was outside Ω and had to be projected.
    pub start_projected: bool,
    pub evaluations: EvalCounts,
}

fn report_at(p: &NlpProblem, it: &Iterate, tol: f64) -> Result<(EstimatorReport, f64)> {
    let pe = PointEval::new(p, &it.x)?;
    Ok((pe.report(p.omega(), &it.lambda, &it.mu, tol)?, pe.h.norm()))
}

struct Logger {
    start: Instant,
    records: Vec<LogRecord>,
}

struct StepInfo {
    phase: u8,
    accepted: bool,
    failure: Option<String>,
    constraint_iterations: usize,
    multiplier_iterations: usize,
    pg_norm: Option<f64>,
    em1_projected: Option<f64>,
}

impl Logger {
    fn push(&mut self, k: usize, q: f64, e: f64, rep: &EstimatorReport, h_norm: f64, info: StepInfo) {
        self.records.push(LogRecord {
            k,
            phase: info.phase,
            q,
            e,
            e0: rep.e0,
            e1: rep.e1,
            em1: rep.em1,
            ec: rep.ec,
            h_norm,
            em1_projected: info.em1_projected,
            constraint_iterations: info.constraint_iterations,
            multiplier_iterations: info.multiplier_iterations,
            accepted: info.accepted,
            failure: info.failure,
            pg_norm: info.pg_norm,
            wall_time: self.start.elapsed().as_secs_f64(),
        });
    }
}

/// Runs the two-phase method from `(x0, λ0, μ0)`.
///
/// Terminates with [`Status::Converged`] once `E_1 ≤ eps` at the current
/// triple, or at the triple with μ read off the unit projected-gradient step.
pub fn npasa_solve(
    p: &NlpProblem,
    x0: &DVector<f64>,
    lambda0: &DVector<f64>,
    mu0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolveOutcome> {
    config.validate()?;
    check_len("x0", p.dim(), x0.len())?;
    let counts0 = p.counts();
    let tol = config.inner_tol;
    let start_projected = !p.omega().is_feasible(x0, 0.0);
    let x = if start_projected {
        project(p.omega(), x0)?.y_star
    } else {
        x0.clone()
    };
    let mut it = Iterate::new(p, x, lambda0.clone(), mu0.clone())?;
    let mut log = Logger {
        start: Instant::now(),
        records: Vec::new(),
    };
    let (mut rep, mut h_norm) = report_at(p, &it, tol)?;
    let mut e = rep.e1;
    let mut q = config.q0;
    log.push(
        0,
        q,
        e,
        &rep,
        h_norm,
        StepInfo {
            phase: 0,
            accepted: true,
            failure: start_projected.then(|| "start projected onto omega".to_string()),
            constraint_iterations: 0,
            multiplier_iterations: 0,
            pg_norm: None,
            em1_projected: None,
        },
    );

    let mut k = 0;
    let mut passes = 0;
    let mut phase_one_steps = 0;
    let mut phase_two_steps = 0;
    let mut rejected = 0;
    let mut phase = Phase::One;
    let mut entering = true;
    let mut status = Status::MaxOuterIterations;

    'outer: loop {
        if rep.e1 <= config.eps {
            status = Status::Converged;
            break;
        }
        match phase {
            Phase::One => {
                if entering {
                    q *= config.phi.max(1.0 / e);
                    entering = false;
                }
                let mu_proj = mu_of_x(p, &it.x, &it.lambda, 0.0)?;
                let projected = Iterate {
                    mu: mu_proj,
                    ..it.clone()
                };
                let (rep_proj, _) = report_at(p, &projected, tol)?;
                if rep_proj.e1 <= config.eps {
                    it = projected;
                    rep = rep_proj;
                    status = Status::Converged;
                    break;
                }
                if passes >= config.max_outer {
                    break;
                }
                passes += 1;
                let ec_prev = rep.ec;
                let gs = global_step(p, &it, q, config)?;
                it = gs.iterate;
                (rep, h_norm) = report_at(p, &it, tol)?;
                e = e.min(rep.e1);
                k += 1;
                phase_one_steps += 1;
                log.push(
                    k,
                    q,
                    e,
                    &rep,
                    h_norm,
                    StepInfo {
                        phase: 1,
                        accepted: true,
                        failure: None,
                        constraint_iterations: 0,
                        multiplier_iterations: 0,
                        pg_norm: Some(gs.pg_norm),
                        em1_projected: Some(rep_proj.em1),
                    },
                );
                if rep.em1 <= config.theta * ec_prev {
                    phase = Phase::Two;
                }
            }
            Phase::Two => {
                if passes >= config.max_outer {
                    break 'outer;
                }
                passes += 1;
                let ls = local_step(p, &it, config)?;
                let ci = ls.constraint.iterations();
                let mi = ls.multiplier.as_ref().map_or(0, |m| m.iterations());
                let mut failure = ls.failure.map(|f| match f {
                    LocalFailure::Constraint(o) => format!("constraint step: {o:?}"),
                    LocalFailure::Multiplier(o) => format!("multiplier step: {o:?}"),
                });
                let mut candidate = None;
                if failure.is_none() {
                    let (rep_new, h_new) = report_at(p, &ls.iterate, tol)?;
                    if rep_new.e1 > config.theta * rep.e1 {
                        failure = Some(format!("insufficient decrease: {:e} > theta * {:e}", rep_new.e1, rep.e1));
                    } else {
                        candidate = Some((ls.iterate, rep_new, h_new));
                    }
                }
                match candidate {
                    Some((next, rep_new, h_new)) => {
                        it = next;
                        rep = rep_new;
                        h_norm = h_new;
                        e = e.min(rep.e1);
                        k += 1;
                        phase_two_steps += 1;
                        log.push(
                            k,
                            q,
                            e,
                            &rep,
                            h_norm,
                            StepInfo {
                                phase: 2,
                                accepted: true,
                                failure: None,
                                constraint_iterations: ci,
                                multiplier_iterations: mi,
                                pg_norm: None,
                                em1_projected: None,
                            },
                        );
                    }
                    None => {
                        rejected += 1;
                        log.push(
                            k,
                            q,
                            e,
                            &rep,
                            h_norm,
                            StepInfo {
                                phase: 2,
                                accepted: false,
                                failure,
                                constraint_iterations: ci,
                                multiplier_iterations: mi,
                                pg_norm: None,
                                em1_projected: None,
                            },
                        );
                        phase = Phase::One;
                        entering = true;
                    }
                }
            }
        }
    }

    Ok(SolveOutcome {
        status,
        iterate: it,
        report: rep,
        log: log.records,
        iterations: k,
        phase_one_steps,
        phase_two_steps,
        rejected_local_steps: rejected,
        final_penalty: q,
        start_projected,
        evaluations: p.counts().since(&counts0),
    })
}

/// Least-squares fit of `log e_{k+1} = order·log e_k + log c` over the last
/// `window` entries of `errors`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub order: f64,
    pub constant: f64,
    /// `max e_{k+1}/e_k²` over the window.
    pub max_quadratic_ratio: f64,
    pub window: usize,
}

pub fn fit_convergence_order(errors: &[f64], window: usize) -> Result<RateFit> {
    if window < 3 {
        return Err(Error::InsufficientData(format!("window {window} is below 3")));
    }
    if errors.len() < window {
        return Err(Error::InsufficientData(format!(
            "{} entries for a window of {window}",
            errors.len()
        )));
    }
    let tail = &errors[errors.len() - window..];
    if let Some(v) = tail.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InsufficientData(format!("non-positive entry {v} in the window")));
    }
    let pairs: Vec<(f64, f64)> = tail.windows(2).map(|w| (w[0].ln(), w[1].ln())).collect();
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("window entries are all equal".into()));
    }
    let order = sxy / sxx;
    let constant = (my - order * mx).exp();
    let max_quadratic_ratio = tail.windows(2).map(|w| w[1] / (w[0] * w[0])).fold(0.0, f64::max);
    Ok(RateFit {
        order,
        constant,
        max_quadratic_ratio,
        window,
    })
}

/// `E_1` over the trailing run of accepted phase-two records, preceded by
/// the accepted record the run started from.
pub fn phase_two_tail(log: &[LogRecord]) -> Vec<f64> {
    tail_of(log, |r| r.e1)
}

/// `‖h‖` over the same records as [`phase_two_tail`].
pub fn phase_two_h_tail(log: &[LogRecord]) -> Vec<f64> {
    tail_of(log, |r| r.h_norm)
}

fn tail_of(log: &[LogRecord], value: impl Fn(&LogRecord) -> f64) -> Vec<f64> {
    let accepted: Vec<&LogRecord> = log.iter().filter(|r| r.accepted).collect();
    let run = accepted.iter().rev().take_while(|r| r.phase == 2).count();
    if run == 0 {
        return Vec::new();
    }
    let start = accepted.len() - run - 1;
    accepted[start..].iter().map(|r| value(r)).collect()
}

pub fn write_log<W: Write>(records: &[LogRecord], mut out: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::Internal(e.to_string()))?;
    }
    Ok(())
}

pub fn read_log<R: BufRead>(input: R) -> Result<Vec<LogRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            location: format!("line {}", i + 1),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("line {}", i + 1),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use nalgebra::dvector;

    #[test]
    fn rate_fit_examples() {
        let f = fit_convergence_order(&[1e-1, 1e-2, 1e-4, 1e-8], 4).unwrap();
        assert!((f.order - 2.0).abs() < 1e-9);
        assert!((f.constant - 1.0).abs() < 1e-9);
        let f = fit_convergence_order(&[1e-1, 5e-2, 2.5e-2], 3).unwrap();
        assert!((f.order - 1.0).abs() < 1e-9);
        assert!(matches!(fit_convergence_order(&[1e-1, 1e-2], 3), Err(Error::InsufficientData(_))));
        assert!(matches!(
            fit_convergence_order(&[1e-1, 0.0, 1e-2], 3),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn lin_eq_box_converges() {
        let cp = corpus::lin_eq_box();
        let out = npasa_solve(&cp.problem, &cp.x0, &cp.lambda0, &DVector::zeros(4), &SolverConfig::default()).unwrap();
        assert_eq!(out.status, Status::Converged);
        assert!((&out.iterate.x - dvector![1.0, 1.0]).amax() < 1e-6);
        assert!((out.iterate.lambda[0] + 1.0).abs() < 1e-6);
        assert!(out.report.e1 <= 1e-8);
    }

    #[test]
    fn kkt_start_returns_immediately() {
        let cp = corpus::circle_min();
        let out =
            npasa_solve(&cp.problem, cp.x_star(), cp.lambda_star(), cp.mu_star(), &SolverConfig::default()).unwrap();
        assert_eq!(out.status, Status::Converged);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.log.len(), 1);
    }

    #[test]
    fn infeasible_start_is_projected() {
        let cp = corpus::lin_eq_box();
        let out = npasa_solve(&cp.problem, &dvector![-1.0, 3.0], &dvector![0.0], &DVector::zeros(4), &SolverConfig::default())
            .unwrap();
        assert!(out.start_projected);
        assert_eq!(out.status, Status::Converged);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let cp = corpus::circle_interior();
        let cfg = SolverConfig {
            max_outer: 1,
            ..SolverConfig::default()
        };
        let out = npasa_solve(&cp.problem, &cp.x0, &cp.lambda0, &DVector::zeros(4), &cfg).unwrap();
        assert_eq!(out.status, Status::MaxOuterIterations);
    }

    #[test]
    fn log_invariants_hold() {
        for cp in corpus::corpus() {
            let m = cp.problem.num_ineq();
            let out = npasa_solve(&cp.problem, &cp.x0, &cp.lambda0, &DVector::zeros(m), &SolverConfig::default())
                .unwrap();
            assert_eq!(out.status, Status::Converged, "{}", cp.name);
            assert!(out.log.windows(2).all(|w| w[1].e <= w[0].e), "{}", cp.name);
            let accepted: Vec<&LogRecord> = out.log.iter().filter(|r| r.accepted).collect();
            for w in accepted.windows(2) {
                if w[1].phase == 2 {
                    assert!(w[1].e1 <= 0.75 * w[0].e1, "{}", cp.name);
                }
            }
        }
    }

    #[test]
    fn log_round_trips() {
        let cp = corpus::lin_eq_box();
        let out = npasa_solve(&cp.problem, &cp.x0, &cp.lambda0, &DVector::zeros(4), &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_log(&out.log, &mut buf).unwrap();
        let back = read_log(&buf[..]).unwrap();
        assert_eq!(back, out.log);
        assert!(matches!(read_log(&b"{not json\n"[..]), Err(Error::Parse { .. })));
    }
}
