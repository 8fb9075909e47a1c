//! Damped Newton iteration over the assembled equation system, plus the
//! flat-start initial-guess builder and finite-difference Jacobian checks.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{HeatEfficiency, LinkKind, Network, SlotKey, SlotOwner, SymbolKind};
use crate::system::{assemble_system, DomainPolicy, EquationSystem, SystemError};
use crate::wellposedness::{
    pivot_verdict, BoundaryConditionSet, DofCount, RankVerdict, Squareness, WellposednessError,
};

/// Newton-iteration knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Convergence threshold on the residual 2-norm.
    pub tol: f64,
    /// Maximum number of Newton steps.
    pub max_iter: usize,
    /// Step fraction applied to each Newton update.
    pub damping: f64,
    /// Relative pivot floor (against the largest pivot) below which the
    /// factorised Jacobian counts as singular.
    pub min_pivot: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            max_iter: 50,
            damping: 1.0,
            min_pivot: 1e-12,
        }
    }
}

/// Why the iteration stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    SingularJacobian { condition_estimate: f64 },
    DomainViolation { slot: String, value: f64 },
}

impl SolveStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, SolveStatus::Converged)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolveStatus::Converged => write!(f, "converged"),
            SolveStatus::MaxIterations => write!(f, "stopped at the iteration limit"),
            SolveStatus::SingularJacobian { condition_estimate } => {
                write!(
                    f,
                    "singular Jacobian (condition estimate {condition_estimate:.3e})"
                )
            }
            SolveStatus::DomainViolation { slot, value } => write!(
                f,
                "mass flow left the temperature model's domain at {slot} (value {value:.3e} kg/s)"
            ),
        }
    }
}

/// Result of one Newton run. `iterations` counts the steps taken;
/// `residual_history` holds the residual norm before each step and after the
/// last, so it has `iterations + 1` entries when the iteration ran to a
/// residual-based stop.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub state: DVector<f64>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("cannot iterate a non-square system ({equations} equations, {unknowns} unknowns)")]
    NonSquare { equations: usize, unknowns: usize },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Wellposedness(#[from] WellposednessError),
}

/// How the starting point was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuessStrategy {
    /// Built by [`default_initial_guess`].
    FlatStart,
    /// Supplied by the caller.
    UserSupplied,
}

/// A starting point for the iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    pub values: DVector<f64>,
    pub strategy: GuessStrategy,
}

impl InitialGuess {
    pub fn flat_start(net: &Network, bcs: &BoundaryConditionSet) -> InitialGuess {
        InitialGuess {
            values: default_initial_guess(net, bcs),
            strategy: GuessStrategy::FlatStart,
        }
    }

    pub fn user(values: DVector<f64>) -> InitialGuess {
        InitialGuess {
            values,
            strategy: GuessStrategy::UserSupplied,
        }
    }
}

/// Voltage-magnitude fallback when no boundary voltage is reachable, V.
pub const DEFAULT_VOLTAGE_GUESS: f64 = 1.0;
/// Pressure fallback when no boundary pressure is reachable, Pa.
pub const DEFAULT_PRESSURE_GUESS: f64 = 1.05e5;
/// Factor applied to the nearest boundary pressure when seeding.
pub const PRESSURE_SEED_FACTOR: f64 = 1.05;
/// Mass-flow starting value, kg/s; keeps the pipe temperature equations away
/// from their vanishing-flow singularity.
pub const DEFAULT_MASS_FLOW_GUESS: f64 = 1.0;
/// Supply-temperature starting value, K.
pub const DEFAULT_SUPPLY_GUESS: f64 = 353.15;
/// Return-temperature starting value, K.
pub const DEFAULT_RETURN_GUESS: f64 = 313.15;
/// Residual-heat fraction starting value in free-efficiency mode.
pub const DEFAULT_ETA_H_GUESS: f64 = 0.5;
/// Electric input seeded on a free-efficiency electrolyser, W. At zero input
/// the fraction's Jacobian column would be structurally zero.
pub const FREE_MODE_POWER_GUESS: f64 = 1.0e6;

/// Nearest-source value per node under multi-source breadth-first search.
fn nearest_values(
    n: usize,
    edges: &[(usize, usize)],
    sources: &[(usize, f64)],
) -> Vec<Option<f64>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut val: Vec<Option<f64>> = vec![None; n];
    let mut queue = VecDeque::new();
    for &(s, v) in sources {
        if val[s].is_none() {
            val[s] = Some(v);
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        let vu = val[u].expect("queued nodes are seeded");
        for &w in &adj[u] {
            if val[w].is_none() {
                val[w] = Some(vu);
                queue.push_back(w);
            }
        }
    }
    val
}

/// Builds the flat-start state: boundary slots take their prescribed values;
/// voltage magnitudes copy the nearest boundary voltage across the line
/// graph; pressures take the nearest boundary pressure of their carrier
/// scaled by [`PRESSURE_SEED_FACTOR`]; angles, powers and gas flows start at
/// zero; mass flows, temperatures and free residual-heat fractions start at
/// fixed physical values.
pub fn default_initial_guess(net: &Network, bcs: &BoundaryConditionSet) -> DVector<f64> {
    let reg = net.registry();
    let nodes = net.nodes();
    let idx: HashMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();

    let mut line_edges = Vec::new();
    let mut pipe_edges = Vec::new();
    for link in net.links() {
        let pair = (idx[link.from.as_str()], idx[link.to.as_str()]);
        match link.kind {
            LinkKind::TransmissionLine { .. } => line_edges.push(pair),
            LinkKind::GasPipe { .. } | LinkKind::HeatPipe { .. } => pipe_edges.push(pair),
            LinkKind::Dummy { .. } => {}
        }
    }

    let mut v_sources = Vec::new();
    let mut p_sources = Vec::new();
    for (slot, key) in reg.iter() {
        let Some(value) = bcs.get(slot) else { continue };
        if let SlotOwner::Node(id) = &key.owner {
            match key.kind {
                SymbolKind::VoltageMagnitude => v_sources.push((idx[id.as_str()], value)),
                SymbolKind::Pressure => p_sources.push((idx[id.as_str()], value)),
                _ => {}
            }
        }
    }
    let v_seed = nearest_values(nodes.len(), &line_edges, &v_sources);
    let p_seed = nearest_values(nodes.len(), &pipe_edges, &p_sources);

    let mut x = DVector::zeros(reg.len());
    for (slot, key) in reg.iter() {
        let node_index = match &key.owner {
            SlotOwner::Node(id) => Some(idx[id.as_str()]),
            SlotOwner::Link(_, _) => None,
        };
        x[slot] = match key.kind {
            SymbolKind::VoltageMagnitude => node_index
                .and_then(|i| v_seed[i])
                .unwrap_or(DEFAULT_VOLTAGE_GUESS),
            SymbolKind::VoltageAngle => 0.0,
            SymbolKind::Pressure => node_index
                .and_then(|i| p_seed[i])
                .map(|p| p * PRESSURE_SEED_FACTOR)
                .unwrap_or(DEFAULT_PRESSURE_GUESS),
            SymbolKind::GasFlow => 0.0,
            SymbolKind::MassFlow => DEFAULT_MASS_FLOW_GUESS,
            SymbolKind::SupplyTemperature => DEFAULT_SUPPLY_GUESS,
            SymbolKind::ReturnTemperature => DEFAULT_RETURN_GUESS,
            SymbolKind::ActivePower | SymbolKind::ReactivePower | SymbolKind::HeatPower => 0.0,
            SymbolKind::HeatEta => DEFAULT_ETA_H_GUESS,
        };
    }

    for unit in net.coupling_units() {
        if unit.params.eta_h == HeatEfficiency::Free {
            if let Some(li) = unit.electric_dummy {
                let l = &net.links()[li];
                if let Ok(slot) =
                    reg.lookup(&SlotKey::link(SymbolKind::ActivePower, &l.from, &l.to))
                {
                    x[slot] = FREE_MODE_POWER_GUESS;
                }
            }
        }
    }

    for (slot, value) in bcs.iter() {
        if slot < x.len() {
            x[slot] = value;
        }
    }
    x
}

/// Runs the damped Newton iteration from `x0` until the residual norm falls
/// under `cfg.tol` or a stop condition hits. Domain violations and singular
/// Jacobians are reported through [`SolveStatus`], not as errors.
pub fn newton_solve(
    sys: &EquationSystem,
    x0: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolverError> {
    if !sys.is_square() {
        return Err(SolverError::NonSquare {
            equations: sys.n_equations(),
            unknowns: sys.n_free(),
        });
    }
    let mut x = x0.clone();
    sys.clamp(&mut x);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIterations;
    for step in 0..=cfg.max_iter {
        iterations = step;
        let f = match sys.eval_residuals(&x, DomainPolicy::Strict) {
            Ok(f) => f,
            Err(SystemError::DomainViolation { slot, value }) => {
                status = SolveStatus::DomainViolation { slot, value };
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let norm = f.norm();
        history.push(norm);
        if norm <= cfg.tol {
            status = SolveStatus::Converged;
            break;
        }
        if step == cfg.max_iter {
            status = SolveStatus::MaxIterations;
            break;
        }
        let jac = match sys.jacobian(&x, DomainPolicy::Strict) {
            Ok(j) => j,
            Err(SystemError::DomainViolation { slot, value }) => {
                status = SolveStatus::DomainViolation { slot, value };
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let lu = jac.lu();
        let pivots = lu.u().diagonal().map(|d| d.abs());
        let max_p = pivots.max();
        let min_p = pivots.min();
        if max_p == 0.0 || min_p <= cfg.min_pivot * max_p {
            status = SolveStatus::SingularJacobian {
                condition_estimate: if min_p == 0.0 {
                    f64::INFINITY
                } else {
                    max_p / min_p
                },
            };
            break;
        }
        let Some(dx) = lu.solve(&(-&f)) else {
            status = SolveStatus::SingularJacobian {
                condition_estimate: f64::INFINITY,
            };
            break;
        };
        for (col, &slot) in sys.free_slots().iter().enumerate() {
            x[slot] += cfg.damping * dx[col];
        }
    }
    Ok(SolveResult {
        status,
        state: x,
        iterations,
        residual_history: history,
    })
}

/// Central-difference Jacobian over the free slots, step `1e-6·max(1,|x|)`.
pub fn finite_difference_jacobian(
    sys: &EquationSystem,
    x: &DVector<f64>,
    policy: DomainPolicy,
) -> Result<DMatrix<f64>, SystemError> {
    let mut xc = x.clone();
    sys.clamp(&mut xc);
    let mut jac = DMatrix::zeros(sys.n_equations(), sys.n_free());
    for (col, &slot) in sys.free_slots().iter().enumerate() {
        let h = 1e-6 * xc[slot].abs().max(1.0);
        let mut xp = xc.clone();
        xp[slot] += h;
        let mut xm = xc.clone();
        xm[slot] -= h;
        let fp = sys.eval_residuals(&xp, policy)?;
        let fm = sys.eval_residuals(&xm, policy)?;
        jac.set_column(col, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}

/// One disagreeing Jacobian entry found by [`compare_jacobians`].
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMismatch {
    pub equation: String,
    pub slot: String,
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

/// Entries where analytic and finite-difference Jacobians disagree by more
/// than `tol`, measured against `max(1, |analytic|, |finite difference|)`.
pub fn compare_jacobians(
    sys: &EquationSystem,
    analytic: &DMatrix<f64>,
    finite_difference: &DMatrix<f64>,
    tol: f64,
) -> Vec<JacobianMismatch> {
    let mut out = Vec::new();
    for i in 0..sys.n_equations() {
        for (j, &slot) in sys.free_slots().iter().enumerate() {
            let a = analytic[(i, j)];
            let fd = finite_difference[(i, j)];
            let denom = a.abs().max(fd.abs()).max(1.0);
            let relative_error = (a - fd).abs() / denom;
            if relative_error > tol {
                out.push(JacobianMismatch {
                    equation: sys.labels()[i].clone(),
                    slot: sys.slot_path(slot).to_string(),
                    analytic: a,
                    finite_difference: fd,
                    relative_error,
                });
            }
        }
    }
    out
}

/// Combined well-posedness report and solve attempt for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub dofs: DofCount,
    pub squareness: Squareness,
    /// Rank probe at the starting point; `None` when the system is not
    /// square or the starting point is outside the equations' domain.
    pub probe: Option<RankVerdict>,
    /// `None` when the system is not square.
    pub result: Option<SolveResult>,
}

/// Counts degrees of freedom, probes the Jacobian at the starting point and,
/// if the case is square, runs the Newton iteration.
pub fn solve_network(
    net: &Network,
    bcs: &BoundaryConditionSet,
    cfg: &SolverConfig,
    guess: Option<&InitialGuess>,
) -> Result<SolveOutcome, SolverError> {
    let sys = assemble_system(net, bcs)?;
    let dofs = DofCount {
        equations: sys.n_equations(),
        unknowns: sys.n_slots(),
    };
    let (eq, free) = (sys.n_equations(), sys.n_free());
    let squareness = if eq == free {
        Squareness::Square
    } else if free > eq {
        Squareness::Underdetermined(free - eq)
    } else {
        Squareness::Overdetermined(eq - free)
    };
    if squareness != Squareness::Square {
        return Ok(SolveOutcome {
            dofs,
            squareness,
            probe: None,
            result: None,
        });
    }
    let flat;
    let x0 = match guess {
        Some(g) => &g.values,
        None => {
            flat = default_initial_guess(net, bcs);
            &flat
        }
    };
    let probe = sys
        .jacobian(x0, DomainPolicy::Limit)
        .ok()
        .map(|jac| pivot_verdict(&jac));
    let result = newton_solve(&sys, x0, cfg)?;
    Ok(SolveOutcome {
        dofs,
        squareness,
        probe,
        result: Some(result),
    })
}
