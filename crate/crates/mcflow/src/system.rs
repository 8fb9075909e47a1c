//! Equation assembly.
//!
//! Turns a validated [`Network`] plus a boundary-condition set into an
//! evaluator for the nonlinear residual vector `F(x)` and its Jacobian over
//! the registry's state vector. Boundary-condition slots are clamped to their
//! prescribed values and excluded from the Jacobian's columns, so the matrix
//! is `n_equations × n_free`.
//!
//! Equations are emitted in a deterministic order: per node (nodes sorted by
//! id) each node's balances, coupling nodes contributing their unit's
//! equations instead, then one hydraulic equation per pipe (links sorted by
//! id).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::carrier::{
    decay_factor, decay_factor_derivative, gas_pipe_flow_derivative, gas_pipe_residual,
    line_power_term, LineQuantity, MIN_MASS_FLOW,
};
use crate::coupling::{
    coupling_heat_terminal_residual, eboiler_residual, electrolyser_energy_balance_residual,
    electrolyser_residual_heat_residual, p2g_residual,
};
use crate::model::{
    Carrier, CouplingKind, HeatEfficiency, LinkKind, Network, NodeKind, SlotId, SlotKey,
    SymbolKind, TerminalKind,
};
use crate::wellposedness::BoundaryConditionSet;

/// How residual evaluation treats mass flows near the vanishing-flow
/// threshold of the pipe temperature model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainPolicy {
    /// Reject flows at or below the threshold: the decayed pipe temperature
    /// is undefined there. The Newton iteration uses this.
    Strict,
    /// Evaluate the vanishing-flow limit (decay factor and its derivative
    /// both zero) for flows in `[0, threshold]`; reject only negative flows.
    /// The rank probe uses this so that degenerate states can be inspected.
    Limit,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("boundary condition on unknown slot id {0}")]
    UnknownBcSlot(SlotId),
    #[error("boundary condition on {path} is not finite ({value})")]
    NonFiniteBc { path: String, value: f64 },
    #[error("state vector has {got} entries but the registry has {want} slots")]
    StateLength { got: usize, want: usize },
    #[error("mass flow {value} kg/s at {slot} is outside the pipe temperature model's domain")]
    DomainViolation { slot: String, value: f64 },
    #[error("network invariant broken during assembly: {0}")]
    Internal(String),
}

/// One line-end power expression inside a nodal balance.
#[derive(Debug, Clone)]
struct LineTermRef {
    which: LineQuantity,
    v_from: SlotId,
    d_from: SlotId,
    v_to: SlotId,
    d_to: SlotId,
    conductance: f64,
    susceptance: f64,
}

/// Temperature entering a nodal energy balance: either a slot read directly
/// (the slot sits at this end of the link) or the far end's slot decayed
/// along the pipe.
#[derive(Debug, Clone)]
enum TempRef {
    Direct(SlotId),
    Decayed {
        t_slot: SlotId,
        /// λ·L/C_p, kg/s: the decay factor is exp(−decay_per_flow/m).
        decay_per_flow: f64,
        ambient: f64,
    },
}

/// One signed `m·T` advection term of a nodal energy balance.
#[derive(Debug, Clone)]
struct AdvectionTerm {
    sign: f64,
    m_slot: SlotId,
    temp: TempRef,
}

#[derive(Debug, Clone)]
enum EtaHRef {
    Fixed(f64),
    Slot(SlotId),
}

#[derive(Debug, Clone)]
enum Equation {
    /// Active- or reactive-power balance of an electric node: terminal
    /// injection slot plus all link powers measured leaving the node.
    ElectricNode {
        terminal: Option<SlotId>,
        lines: Vec<LineTermRef>,
        dummies: Vec<(SlotId, f64)>,
    },
    /// Mass/flow balance of a gas or heat node: signed link flows minus the
    /// terminal draw.
    FlowBalance {
        terminal: Option<SlotId>,
        flows: Vec<(SlotId, f64)>,
    },
    /// Pipe hydraulics: `p_from − p_to = f·c⁻²·|q|q`.
    PipeHydraulic {
        p_from: SlotId,
        p_to: SlotId,
        flow: SlotId,
        pipe_constant: f64,
        friction: f64,
    },
    /// Supply- or return-side energy balance of a heat node. `terminal_sign`
    /// is −1 on the supply side and +1 on the return side.
    HeatEnergy {
        terminal: Option<(SlotId, SlotId)>,
        terminal_sign: f64,
        terms: Vec<AdvectionTerm>,
    },
    /// Total heat power across a temperature drop: `C_p·m·(T^s − T^r) = Δφ`.
    HeatPower {
        m: SlotId,
        ts: SlotId,
        tr: SlotId,
        dphi: SlotId,
        specific_heat: f64,
    },
    /// Conversion unit's energy balance: `η·P = HHV·q + Δφ`, with the gas
    /// and/or heat output terms absent when the unit has no such attachment.
    ConversionBalance {
        power: SlotId,
        eta: f64,
        gas: Option<(SlotId, f64)>,
        heat: Option<SlotId>,
    },
    /// Electrolyser residual-heat split: `η_h·η·P = Δφ`.
    ResidualHeat {
        power: SlotId,
        dphi: SlotId,
        eta: f64,
        eta_h: EtaHRef,
    },
}

/// Assembled residual/Jacobian evaluator for one network and one
/// boundary-condition set.
#[derive(Debug, Clone)]
pub struct EquationSystem {
    equations: Vec<Equation>,
    labels: Vec<String>,
    slot_paths: Vec<String>,
    bc: Vec<Option<f64>>,
    free_slots: Vec<SlotId>,
    col_of_slot: Vec<Option<usize>>,
}

/// Per-node accumulator filled while walking the links.
#[derive(Default)]
struct NodeAcc {
    p_lines: Vec<LineTermRef>,
    q_lines: Vec<LineTermRef>,
    p_dummies: Vec<(SlotId, f64)>,
    q_dummies: Vec<(SlotId, f64)>,
    flows: Vec<(SlotId, f64)>,
    supply: Vec<AdvectionTerm>,
    ret: Vec<AdvectionTerm>,
}

/// Builds the equation system for `net` under `bcs`. Fails if a boundary
/// condition names a slot outside the registry or carries a non-finite value.
pub fn assemble_system(
    net: &Network,
    bcs: &BoundaryConditionSet,
) -> Result<EquationSystem, SystemError> {
    let reg = net.registry();
    let n_slots = reg.len();

    let mut bc: Vec<Option<f64>> = vec![None; n_slots];
    for (slot, value) in bcs.iter() {
        if slot >= n_slots {
            return Err(SystemError::UnknownBcSlot(slot));
        }
        if !value.is_finite() {
            return Err(SystemError::NonFiniteBc {
                path: reg.key(slot).to_string(),
                value,
            });
        }
        bc[slot] = Some(value);
    }
    let mut free_slots = Vec::new();
    let mut col_of_slot = vec![None; n_slots];
    for slot in 0..n_slots {
        if bc[slot].is_none() {
            col_of_slot[slot] = Some(free_slots.len());
            free_slots.push(slot);
        }
    }

    let slot = |key: SlotKey| -> Result<SlotId, SystemError> {
        reg.lookup(&key)
            .map_err(|e| SystemError::Internal(e.to_string()))
    };
    let node_slot = |kind: SymbolKind, id: &str| -> Result<SlotId, SystemError> {
        slot(SlotKey::node(kind, id))
    };
    let link_slot = |kind: SymbolKind, from: &str, to: &str| -> Result<SlotId, SystemError> {
        slot(SlotKey::link(kind, from, to))
    };

    let heat = net.params().heat;
    let mut acc: Vec<NodeAcc> = net.nodes().iter().map(|_| NodeAcc::default()).collect();
    let node_idx = |id: &str| -> Result<usize, SystemError> {
        net.nodes()
            .iter()
            .position(|n| n.id == id)
            .ok_or_else(|| SystemError::Internal(format!("unknown node id {id}")))
    };

    let mut pipe_eqs: Vec<(String, Equation)> = Vec::new();
    for link in net.links() {
        let fi = node_idx(&link.from)?;
        let ti = node_idx(&link.to)?;
        match &link.kind {
            LinkKind::TransmissionLine {
                conductance,
                susceptance,
            } => {
                let v_from = node_slot(SymbolKind::VoltageMagnitude, &link.from)?;
                let d_from = node_slot(SymbolKind::VoltageAngle, &link.from)?;
                let v_to = node_slot(SymbolKind::VoltageMagnitude, &link.to)?;
                let d_to = node_slot(SymbolKind::VoltageAngle, &link.to)?;
                let term = |which| LineTermRef {
                    which,
                    v_from,
                    d_from,
                    v_to,
                    d_to,
                    conductance: *conductance,
                    susceptance: *susceptance,
                };
                acc[fi].p_lines.push(term(LineQuantity::PSend));
                acc[fi].q_lines.push(term(LineQuantity::QSend));
                acc[ti].p_lines.push(term(LineQuantity::PRecv));
                acc[ti].q_lines.push(term(LineQuantity::QRecv));
            }
            LinkKind::GasPipe {
                pipe_constant,
                friction,
            } => {
                let q = link_slot(SymbolKind::GasFlow, &link.from, &link.to)?;
                acc[fi].flows.push((q, -1.0));
                acc[ti].flows.push((q, 1.0));
                pipe_eqs.push((
                    format!("pipe-flow@{}-{}", link.from, link.to),
                    Equation::PipeHydraulic {
                        p_from: node_slot(SymbolKind::Pressure, &link.from)?,
                        p_to: node_slot(SymbolKind::Pressure, &link.to)?,
                        flow: q,
                        pipe_constant: *pipe_constant,
                        friction: *friction,
                    },
                ));
            }
            LinkKind::HeatPipe {
                pipe_constant,
                friction,
                heat_transfer,
                length,
                ..
            } => {
                let m = link_slot(SymbolKind::MassFlow, &link.from, &link.to)?;
                let ts = link_slot(SymbolKind::SupplyTemperature, &link.from, &link.to)?;
                let tr = link_slot(SymbolKind::ReturnTemperature, &link.from, &link.to)?;
                let decay_per_flow = heat_transfer * length / heat.specific_heat;
                let ambient = heat.ambient_temperature;
                // Supply water runs from → to: the supply slot sits at the
                // from end and arrives decayed at the to end. Return water
                // runs the other way with the return slot at the to end.
                acc[fi].flows.push((m, -1.0));
                acc[ti].flows.push((m, 1.0));
                acc[fi].supply.push(AdvectionTerm {
                    sign: -1.0,
                    m_slot: m,
                    temp: TempRef::Direct(ts),
                });
                acc[ti].supply.push(AdvectionTerm {
                    sign: 1.0,
                    m_slot: m,
                    temp: TempRef::Decayed {
                        t_slot: ts,
                        decay_per_flow,
                        ambient,
                    },
                });
                acc[fi].ret.push(AdvectionTerm {
                    sign: 1.0,
                    m_slot: m,
                    temp: TempRef::Decayed {
                        t_slot: tr,
                        decay_per_flow,
                        ambient,
                    },
                });
                acc[ti].ret.push(AdvectionTerm {
                    sign: -1.0,
                    m_slot: m,
                    temp: TempRef::Direct(tr),
                });
                pipe_eqs.push((
                    format!("pipe-flow@{}-{}", link.from, link.to),
                    Equation::PipeHydraulic {
                        p_from: node_slot(SymbolKind::Pressure, &link.from)?,
                        p_to: node_slot(SymbolKind::Pressure, &link.to)?,
                        flow: m,
                        pipe_constant: *pipe_constant,
                        friction: *friction,
                    },
                ));
            }
            LinkKind::Dummy { carrier } => match carrier {
                // Electric dummies run carrier node → coupling; their powers
                // leave the carrier node, so they enter its balance with +.
                Carrier::Electricity => {
                    let p = link_slot(SymbolKind::ActivePower, &link.from, &link.to)?;
                    let q = link_slot(SymbolKind::ReactivePower, &link.from, &link.to)?;
                    acc[fi].p_dummies.push((p, 1.0));
                    acc[fi].q_dummies.push((q, 1.0));
                }
                // Gas/heat dummies run coupling → carrier node; their flows
                // arrive at the carrier node, so they enter with +.
                Carrier::Gas => {
                    let q = link_slot(SymbolKind::GasFlow, &link.from, &link.to)?;
                    acc[ti].flows.push((q, 1.0));
                }
                Carrier::Heat => {
                    let m = link_slot(SymbolKind::MassFlow, &link.from, &link.to)?;
                    let ts = link_slot(SymbolKind::SupplyTemperature, &link.from, &link.to)?;
                    let tr = link_slot(SymbolKind::ReturnTemperature, &link.from, &link.to)?;
                    acc[ti].flows.push((m, 1.0));
                    // The dummy is lossless: both ends see the slot value.
                    acc[ti].supply.push(AdvectionTerm {
                        sign: 1.0,
                        m_slot: m,
                        temp: TempRef::Direct(ts),
                    });
                    acc[ti].ret.push(AdvectionTerm {
                        sign: -1.0,
                        m_slot: m,
                        temp: TempRef::Direct(tr),
                    });
                }
            },
        }
    }

    let units = net.coupling_units();
    let mut equations = Vec::new();
    let mut labels = Vec::new();
    for (ni, node) in net.nodes().iter().enumerate() {
        let id = &node.id;
        match &node.kind {
            NodeKind::Carrier { carrier, terminal } => match carrier {
                Carrier::Electricity => {
                    let a = std::mem::take(&mut acc[ni]);
                    let p_term = terminal
                        .map(|_| node_slot(SymbolKind::ActivePower, id))
                        .transpose()?;
                    let q_term = terminal
                        .map(|_| node_slot(SymbolKind::ReactivePower, id))
                        .transpose()?;
                    equations.push(Equation::ElectricNode {
                        terminal: p_term,
                        lines: a.p_lines,
                        dummies: a.p_dummies,
                    });
                    labels.push(format!("P-balance@{id}"));
                    equations.push(Equation::ElectricNode {
                        terminal: q_term,
                        lines: a.q_lines,
                        dummies: a.q_dummies,
                    });
                    labels.push(format!("Q-balance@{id}"));
                }
                Carrier::Gas => {
                    let a = std::mem::take(&mut acc[ni]);
                    let term = terminal
                        .map(|_| node_slot(SymbolKind::GasFlow, id))
                        .transpose()?;
                    equations.push(Equation::FlowBalance {
                        terminal: term,
                        flows: a.flows,
                    });
                    labels.push(format!("mass@{id}"));
                }
                Carrier::Heat => {
                    let a = std::mem::take(&mut acc[ni]);
                    let m_term = terminal
                        .map(|_| node_slot(SymbolKind::MassFlow, id))
                        .transpose()?;
                    let full = matches!(terminal, Some(TerminalKind::HeatFull));
                    equations.push(Equation::FlowBalance {
                        terminal: m_term,
                        flows: a.flows,
                    });
                    labels.push(format!("mass@{id}"));
                    let energy_terminal = if full {
                        Some((
                            node_slot(SymbolKind::MassFlow, id)?,
                            node_slot(SymbolKind::SupplyTemperature, id)?,
                        ))
                    } else {
                        None
                    };
                    equations.push(Equation::HeatEnergy {
                        terminal: energy_terminal,
                        terminal_sign: -1.0,
                        terms: a.supply,
                    });
                    labels.push(format!("supply-energy@{id}"));
                    let energy_terminal = if full {
                        Some((
                            node_slot(SymbolKind::MassFlow, id)?,
                            node_slot(SymbolKind::ReturnTemperature, id)?,
                        ))
                    } else {
                        None
                    };
                    equations.push(Equation::HeatEnergy {
                        terminal: energy_terminal,
                        terminal_sign: 1.0,
                        terms: a.ret,
                    });
                    labels.push(format!("return-energy@{id}"));
                    if full {
                        equations.push(Equation::HeatPower {
                            m: node_slot(SymbolKind::MassFlow, id)?,
                            ts: node_slot(SymbolKind::SupplyTemperature, id)?,
                            tr: node_slot(SymbolKind::ReturnTemperature, id)?,
                            dphi: node_slot(SymbolKind::HeatPower, id)?,
                            specific_heat: heat.specific_heat,
                        });
                        labels.push(format!("heat-power@{id}"));
                    }
                }
            },
            NodeKind::Coupling { kind, params } => {
                let unit = units
                    .iter()
                    .find(|u| u.node == ni)
                    .ok_or_else(|| SystemError::Internal(format!("no coupling unit at {id}")))?;
                let edummy = unit
                    .electric_dummy
                    .ok_or_else(|| SystemError::Internal(format!("no electric dummy at {id}")))?;
                let e_link = &net.links()[edummy];
                let power = link_slot(SymbolKind::ActivePower, &e_link.from, &e_link.to)?;
                let gas = unit
                    .gas_dummy
                    .map(|li| -> Result<(SlotId, f64), SystemError> {
                        let l = &net.links()[li];
                        Ok((link_slot(SymbolKind::GasFlow, &l.from, &l.to)?, params.hhv))
                    })
                    .transpose()?;
                let heat_slots = unit
                    .heat_dummy
                    .map(
                        |li| -> Result<(SlotId, SlotId, SlotId, SlotId), SystemError> {
                            let l = &net.links()[li];
                            Ok((
                                link_slot(SymbolKind::MassFlow, &l.from, &l.to)?,
                                link_slot(SymbolKind::SupplyTemperature, &l.from, &l.to)?,
                                link_slot(SymbolKind::ReturnTemperature, &l.from, &l.to)?,
                                link_slot(SymbolKind::HeatPower, &l.from, &l.to)?,
                            ))
                        },
                    )
                    .transpose()?;
                if let Some((m, ts, tr, dphi)) = heat_slots {
                    equations.push(Equation::HeatPower {
                        m,
                        ts,
                        tr,
                        dphi,
                        specific_heat: heat.specific_heat,
                    });
                    labels.push(format!("coupling-heat-power@{id}"));
                }
                equations.push(Equation::ConversionBalance {
                    power,
                    eta: params.eta,
                    gas,
                    heat: heat_slots.map(|(_, _, _, dphi)| dphi),
                });
                labels.push(format!("energy-balance@{id}"));
                if *kind == CouplingKind::Electrolyser && gas.is_some() && heat_slots.is_some() {
                    let eta_h = match params.eta_h {
                        HeatEfficiency::Fixed(v) => EtaHRef::Fixed(v),
                        HeatEfficiency::Free => EtaHRef::Slot(node_slot(SymbolKind::HeatEta, id)?),
                    };
                    equations.push(Equation::ResidualHeat {
                        power,
                        dphi: heat_slots
                            .map(|(_, _, _, dphi)| dphi)
                            .expect("checked above"),
                        eta: params.eta,
                        eta_h,
                    });
                    labels.push(format!("residual-heat@{id}"));
                }
            }
        }
    }
    for (label, eq) in pipe_eqs {
        equations.push(eq);
        labels.push(label);
    }

    let slot_paths = (0..n_slots).map(|s| reg.key(s).to_string()).collect();
    Ok(EquationSystem {
        equations,
        labels,
        slot_paths,
        bc,
        free_slots,
        col_of_slot,
    })
}

impl EquationSystem {
    pub fn n_equations(&self) -> usize {
        self.equations.len()
    }

    pub fn n_slots(&self) -> usize {
        self.slot_paths.len()
    }

    pub fn n_free(&self) -> usize {
        self.free_slots.len()
    }

    pub fn is_square(&self) -> bool {
        self.n_equations() == self.n_free()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Free (non-boundary) slots in registry order; column `j` of the
    /// Jacobian differentiates with respect to `free_slots()[j]`.
    pub fn free_slots(&self) -> &[SlotId] {
        &self.free_slots
    }

    pub fn col_of_slot(&self, slot: SlotId) -> Option<usize> {
        self.col_of_slot.get(slot).copied().flatten()
    }

    pub fn bc_value(&self, slot: SlotId) -> Option<f64> {
        self.bc.get(slot).copied().flatten()
    }

    pub fn slot_path(&self, slot: SlotId) -> &str {
        &self.slot_paths[slot]
    }

    /// Overwrites boundary-condition slots with their prescribed values.
    pub fn clamp(&self, x: &mut DVector<f64>) {
        for (slot, value) in self.bc.iter().enumerate() {
            if let Some(v) = value {
                x[slot] = *v;
            }
        }
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<(), SystemError> {
        if x.len() != self.n_slots() {
            return Err(SystemError::StateLength {
                got: x.len(),
                want: self.n_slots(),
            });
        }
        Ok(())
    }

    /// Residual vector at `x` (boundary slots are clamped first).
    pub fn eval_residuals(
        &self,
        x: &DVector<f64>,
        policy: DomainPolicy,
    ) -> Result<DVector<f64>, SystemError> {
        self.check_len(x)?;
        let mut xc = x.clone();
        self.clamp(&mut xc);
        let mut f = DVector::zeros(self.n_equations());
        let mut scratch = Vec::new();
        for (i, eq) in self.equations.iter().enumerate() {
            scratch.clear();
            f[i] = self.eval_equation(eq, &xc, policy, &mut scratch)?;
        }
        Ok(f)
    }

    /// Jacobian `∂F/∂x_free` at `x`, an `n_equations × n_free` dense matrix.
    pub fn jacobian(
        &self,
        x: &DVector<f64>,
        policy: DomainPolicy,
    ) -> Result<DMatrix<f64>, SystemError> {
        self.check_len(x)?;
        let mut xc = x.clone();
        self.clamp(&mut xc);
        let mut jac = DMatrix::zeros(self.n_equations(), self.n_free());
        let mut partials = Vec::new();
        for (i, eq) in self.equations.iter().enumerate() {
            partials.clear();
            self.eval_equation(eq, &xc, policy, &mut partials)?;
            for &(slot, d) in &partials {
                if let Some(col) = self.col_of_slot[slot] {
                    jac[(i, col)] += d;
                }
            }
        }
        Ok(jac)
    }

    /// Slots each equation reads, in emission order.
    pub fn sparsity(&self) -> Vec<Vec<SlotId>> {
        self.equations
            .iter()
            .map(|eq| {
                let mut slots = slots_of(eq);
                slots.sort_unstable();
                slots.dedup();
                slots
            })
            .collect()
    }

    /// Temperature seen by a node at one end of a link, with partials with
    /// respect to the temperature slot and the mass-flow slot.
    fn temp_value(
        &self,
        temp: &TempRef,
        m: f64,
        m_slot: SlotId,
        x: &DVector<f64>,
        policy: DomainPolicy,
    ) -> Result<(f64, f64, f64), SystemError> {
        match temp {
            TempRef::Direct(t) => Ok((x[*t], 1.0, 0.0)),
            TempRef::Decayed {
                t_slot,
                decay_per_flow,
                ambient,
            } => {
                let out_of_domain = match policy {
                    DomainPolicy::Strict => m <= MIN_MASS_FLOW,
                    DomainPolicy::Limit => m < 0.0,
                };
                if out_of_domain {
                    return Err(SystemError::DomainViolation {
                        slot: self.slot_paths[m_slot].clone(),
                        value: m,
                    });
                }
                let (phi, dphi_dm) = if m <= MIN_MASS_FLOW {
                    (0.0, 0.0)
                } else {
                    (
                        decay_factor(m, *decay_per_flow),
                        decay_factor_derivative(m, *decay_per_flow),
                    )
                };
                let t_in = x[*t_slot];
                Ok((
                    ambient + (t_in - ambient) * phi,
                    phi,
                    (t_in - ambient) * dphi_dm,
                ))
            }
        }
    }

    /// Evaluates one equation's residual at (already clamped) `x` and pushes
    /// its nonzero partials as `(slot, ∂r/∂slot)` pairs into `partials`.
    fn eval_equation(
        &self,
        eq: &Equation,
        x: &DVector<f64>,
        policy: DomainPolicy,
        partials: &mut Vec<(SlotId, f64)>,
    ) -> Result<f64, SystemError> {
        match eq {
            Equation::ElectricNode {
                terminal,
                lines,
                dummies,
            } => {
                let mut r = 0.0;
                if let Some(t) = terminal {
                    r += x[*t];
                    partials.push((*t, 1.0));
                }
                for l in lines {
                    let term = line_power_term(
                        l.which,
                        x[l.v_from],
                        x[l.d_from],
                        x[l.v_to],
                        x[l.d_to],
                        l.conductance,
                        l.susceptance,
                    );
                    r += term.value;
                    partials.push((l.v_from, term.d_v_i));
                    partials.push((l.d_from, term.d_delta_i));
                    partials.push((l.v_to, term.d_v_j));
                    partials.push((l.d_to, term.d_delta_j));
                }
                for &(slot, sign) in dummies {
                    r += sign * x[slot];
                    partials.push((slot, sign));
                }
                Ok(r)
            }
            Equation::FlowBalance { terminal, flows } => {
                let mut r = 0.0;
                for &(slot, sign) in flows {
                    r += sign * x[slot];
                    partials.push((slot, sign));
                }
                if let Some(t) = terminal {
                    r -= x[*t];
                    partials.push((*t, -1.0));
                }
                Ok(r)
            }
            Equation::PipeHydraulic {
                p_from,
                p_to,
                flow,
                pipe_constant,
                friction,
            } => {
                let q = x[*flow];
                let r = gas_pipe_residual(x[*p_from], x[*p_to], q, *pipe_constant, *friction);
                partials.push((*p_from, 1.0));
                partials.push((*p_to, -1.0));
                partials.push((
                    *flow,
                    gas_pipe_flow_derivative(q, *pipe_constant, *friction),
                ));
                Ok(r)
            }
            Equation::HeatEnergy {
                terminal,
                terminal_sign,
                terms,
            } => {
                let mut r = 0.0;
                for term in terms {
                    let m = x[term.m_slot];
                    let (t, dt_dtslot, dt_dm) =
                        self.temp_value(&term.temp, m, term.m_slot, x, policy)?;
                    r += term.sign * m * t;
                    partials.push((term.m_slot, term.sign * (t + m * dt_dm)));
                    let t_slot = match &term.temp {
                        TempRef::Direct(t) => *t,
                        TempRef::Decayed { t_slot, .. } => *t_slot,
                    };
                    partials.push((t_slot, term.sign * m * dt_dtslot));
                }
                if let Some((m_slot, t_slot)) = terminal {
                    r += terminal_sign * x[*m_slot] * x[*t_slot];
                    partials.push((*m_slot, terminal_sign * x[*t_slot]));
                    partials.push((*t_slot, terminal_sign * x[*m_slot]));
                }
                Ok(r)
            }
            Equation::HeatPower {
                m,
                ts,
                tr,
                dphi,
                specific_heat,
            } => {
                let r = coupling_heat_terminal_residual(
                    x[*m],
                    x[*ts],
                    x[*tr],
                    x[*dphi],
                    *specific_heat,
                );
                partials.push((*m, specific_heat * (x[*ts] - x[*tr])));
                partials.push((*ts, specific_heat * x[*m]));
                partials.push((*tr, -specific_heat * x[*m]));
                partials.push((*dphi, -1.0));
                Ok(r)
            }
            Equation::ConversionBalance {
                power,
                eta,
                gas,
                heat,
            } => {
                let p = x[*power];
                partials.push((*power, *eta));
                let r = match (gas, heat) {
                    (Some((q, hhv)), Some(dphi)) => {
                        partials.push((*q, -hhv));
                        partials.push((*dphi, -1.0));
                        electrolyser_energy_balance_residual(p, x[*q], x[*dphi], *eta, *hhv)
                    }
                    (Some((q, hhv)), None) => {
                        partials.push((*q, -hhv));
                        p2g_residual(p, x[*q], *eta, *hhv)
                    }
                    (None, Some(dphi)) => {
                        partials.push((*dphi, -1.0));
                        eboiler_residual(p, x[*dphi], *eta)
                    }
                    (None, None) => {
                        return Err(SystemError::Internal(
                            "conversion unit with no outputs".into(),
                        ))
                    }
                };
                Ok(r)
            }
            Equation::ResidualHeat {
                power,
                dphi,
                eta,
                eta_h,
            } => {
                let p = x[*power];
                let eh = match eta_h {
                    EtaHRef::Fixed(v) => *v,
                    EtaHRef::Slot(s) => {
                        partials.push((*s, eta * p));
                        x[*s]
                    }
                };
                partials.push((*power, eh * eta));
                partials.push((*dphi, -1.0));
                Ok(electrolyser_residual_heat_residual(p, x[*dphi], *eta, eh))
            }
        }
    }
}

fn slots_of(eq: &Equation) -> Vec<SlotId> {
    let mut s = Vec::new();
    match eq {
        Equation::ElectricNode {
            terminal,
            lines,
            dummies,
        } => {
            s.extend(terminal.iter().copied());
            for l in lines {
                s.extend([l.v_from, l.d_from, l.v_to, l.d_to]);
            }
            s.extend(dummies.iter().map(|&(slot, _)| slot));
        }
        Equation::FlowBalance { terminal, flows } => {
            s.extend(terminal.iter().copied());
            s.extend(flows.iter().map(|&(slot, _)| slot));
        }
        Equation::PipeHydraulic {
            p_from, p_to, flow, ..
        } => s.extend([*p_from, *p_to, *flow]),
        Equation::HeatEnergy {
            terminal, terms, ..
        } => {
            if let Some((m, t)) = terminal {
                s.extend([*m, *t]);
            }
            for term in terms {
                s.push(term.m_slot);
                match &term.temp {
                    TempRef::Direct(t) => s.push(*t),
                    TempRef::Decayed { t_slot, .. } => s.push(*t_slot),
                }
            }
        }
        Equation::HeatPower {
            m, ts, tr, dphi, ..
        } => s.extend([*m, *ts, *tr, *dphi]),
        Equation::ConversionBalance {
            power, gas, heat, ..
        } => {
            s.push(*power);
            s.extend(gas.iter().map(|&(q, _)| q));
            s.extend(heat.iter().copied());
        }
        Equation::ResidualHeat {
            power, dphi, eta_h, ..
        } => {
            s.extend([*power, *dphi]);
            if let EtaHRef::Slot(slot) = eta_h {
                s.push(*slot);
            }
        }
    }
    s
}
