//! Well-posedness of a load-flow case: boundary-condition bookkeeping,
//! degree-of-freedom counting, squareness checks, canonical
//! boundary-condition templates for the supported unit layouts, and a
//! numerical rank probe of the Jacobian at a chosen state.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DVector;
use thiserror::Error;

use crate::model::{
    Carrier, CouplingKind, HeatEfficiency, LinkKind, ModelError, Network, NodeKind, SlotId,
    SymbolKind, TerminalKind,
};
use crate::system::{assemble_system, DomainPolicy, SystemError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WellposednessError {
    #[error("duplicate boundary condition on slot {path}")]
    DuplicateBc { path: String },
    #[error("boundary value for {path} is not finite")]
    NonFiniteValue { path: String },
    #[error("template {template} does not fit this network: {reason}")]
    TemplateMismatch { template: String, reason: String },
    #[error("template requires a value for {path}")]
    MissingValue { path: String },
    #[error("template does not use a value for {path}")]
    UnexpectedValue { path: String },
    #[error("rank probe needs a square system, got {equations} equations and {unknowns} unknowns")]
    NonSquareProbe { equations: usize, unknowns: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Ordered set of prescribed slot values. Insertion order is preserved;
/// duplicate slots and non-finite values are rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryConditionSet {
    entries: Vec<(SlotId, f64)>,
    index: HashMap<SlotId, usize>,
}

impl BoundaryConditionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a condition; refuses duplicates and non-finite values.
    pub fn insert(&mut self, slot: SlotId, value: f64) -> Result<(), WellposednessError> {
        if !value.is_finite() {
            return Err(WellposednessError::NonFiniteValue {
                path: format!("slot {slot}"),
            });
        }
        if self.index.contains_key(&slot) {
            return Err(WellposednessError::DuplicateBc {
                path: format!("slot {slot}"),
            });
        }
        self.index.insert(slot, self.entries.len());
        self.entries.push((slot, value));
        Ok(())
    }

    /// Replaces the value of an existing condition, or inserts it.
    pub fn set(&mut self, slot: SlotId, value: f64) -> Result<(), WellposednessError> {
        if !value.is_finite() {
            return Err(WellposednessError::NonFiniteValue {
                path: format!("slot {slot}"),
            });
        }
        match self.index.get(&slot) {
            Some(&i) => {
                self.entries[i].1 = value;
                Ok(())
            }
            None => self.insert(slot, value),
        }
    }

    /// Removes a condition, returning its value if it was present.
    pub fn remove(&mut self, slot: SlotId) -> Option<f64> {
        let i = self.index.remove(&slot)?;
        let (_, value) = self.entries.remove(i);
        for idx in self.index.values_mut() {
            if *idx > i {
                *idx -= 1;
            }
        }
        Some(value)
    }

    pub fn get(&self, slot: SlotId) -> Option<f64> {
        self.index.get(&slot).map(|&i| self.entries[i].1)
    }

    pub fn contains(&self, slot: SlotId) -> bool {
        self.index.contains_key(&slot)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SlotId, f64)> + '_ {
        self.entries.iter().copied()
    }
}

/// Equation and unknown totals of a network before boundary conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofCount {
    pub equations: usize,
    pub unknowns: usize,
}

/// Counts equations and registry slots of the assembled system.
pub fn count_dofs(net: &Network) -> Result<DofCount, WellposednessError> {
    let sys = assemble_system(net, &BoundaryConditionSet::new())?;
    Ok(DofCount {
        equations: sys.n_equations(),
        unknowns: sys.n_slots(),
    })
}

/// Outcome of comparing equation count against free unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Squareness {
    Square,
    /// `0` boundary conditions short of square.
    Underdetermined(usize),
    /// `0` boundary conditions beyond square.
    Overdetermined(usize),
}

/// Checks whether `bcs` closes the system exactly.
pub fn check_square(
    net: &Network,
    bcs: &BoundaryConditionSet,
) -> Result<Squareness, WellposednessError> {
    let sys = assemble_system(net, bcs)?;
    let eq = sys.n_equations();
    let free = sys.n_free();
    Ok(if eq == free {
        Squareness::Square
    } else if free > eq {
        Squareness::Underdetermined(free - eq)
    } else {
        Squareness::Overdetermined(eq - free)
    })
}

/// Canonical boundary-condition layouts for the supported cases. Each
/// template pattern-matches the network's topology, fixes the structural
/// zeros (junction injections, dummy reactive power) itself and asks the
/// caller for the remaining physical values, keyed by slot path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcTemplate {
    /// Power-to-gas unit between an electric and a gas terminal node.
    PowerToGasKnownEfficiency,
    /// Electric boiler between an electric and a heat terminal node.
    ElectricBoiler,
    /// Electrolyser across all three carriers, residual-heat fraction known.
    ElectrolyserKnownEfficiency,
    /// Electrolyser with the residual-heat fraction left as an unknown;
    /// the gas output and the heat draw are prescribed instead.
    ElectrolyserFreeEfficiency,
    /// Electrolyser whose carrier nodes sit behind a transmission line, a
    /// gas pipe and a heat pipe; residual-heat fraction known.
    LinkedKnownEfficiency,
    /// As [`BcTemplate::LinkedKnownEfficiency`] with the fraction free; the
    /// far gas flow and heat draw are prescribed instead of the electric
    /// input.
    LinkedFreeEfficiency,
}

impl std::fmt::Display for BcTemplate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            BcTemplate::PowerToGasKnownEfficiency => "power_to_gas_known_efficiency",
            BcTemplate::ElectricBoiler => "electric_boiler",
            BcTemplate::ElectrolyserKnownEfficiency => "electrolyser_known_efficiency",
            BcTemplate::ElectrolyserFreeEfficiency => "electrolyser_free_efficiency",
            BcTemplate::LinkedKnownEfficiency => "linked_known_efficiency",
            BcTemplate::LinkedFreeEfficiency => "linked_free_efficiency",
        };
        f.write_str(name)
    }
}

impl BcTemplate {
    pub fn parse(name: &str) -> Option<BcTemplate> {
        match name {
            "power_to_gas_known_efficiency" => Some(BcTemplate::PowerToGasKnownEfficiency),
            "electric_boiler" => Some(BcTemplate::ElectricBoiler),
            "electrolyser_known_efficiency" => Some(BcTemplate::ElectrolyserKnownEfficiency),
            "electrolyser_free_efficiency" => Some(BcTemplate::ElectrolyserFreeEfficiency),
            "linked_known_efficiency" => Some(BcTemplate::LinkedKnownEfficiency),
            "linked_free_efficiency" => Some(BcTemplate::LinkedFreeEfficiency),
            _ => None,
        }
    }
}

/// Knobs for template application.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TemplateOptions {
    /// Prescribe the gas/heat reference pressures at the junction-side nodes
    /// (where the unit feeds in) instead of at the far terminal nodes.
    pub reference_pressure_on_junctions: bool,
}

/// One planned entry of a template: either filled with a structural default
/// or required from the caller.
enum Planned {
    Default(f64),
    Required,
}

/// Roles a template resolves on the concrete network.
struct UnitRoles {
    electric_node: String,
    gas_node: Option<String>,
    heat_node: Option<String>,
    electric_dummy: (String, String),
    heat_dummy: Option<(String, String)>,
}

fn mismatch(template: BcTemplate, reason: impl Into<String>) -> WellposednessError {
    WellposednessError::TemplateMismatch {
        template: template.to_string(),
        reason: reason.into(),
    }
}

/// Finds the single coupling unit and the carrier nodes its dummies attach.
fn unit_roles(net: &Network, template: BcTemplate) -> Result<UnitRoles, WellposednessError> {
    let units = net.coupling_units();
    if units.len() != 1 {
        return Err(mismatch(
            template,
            format!(
                "expected exactly one conversion unit, found {}",
                units.len()
            ),
        ));
    }
    let unit = &units[0];
    let link = |idx: usize| {
        let l = &net.links()[idx];
        (l.from.clone(), l.to.clone())
    };
    let edummy = unit
        .electric_dummy
        .ok_or_else(|| mismatch(template, "conversion unit has no electric attachment"))?;
    let (e_from, e_to) = link(edummy);
    Ok(UnitRoles {
        electric_node: e_from.clone(),
        gas_node: unit.gas_dummy.map(|i| link(i).1),
        heat_node: unit.heat_dummy.map(|i| link(i).1),
        electric_dummy: (e_from, e_to),
        heat_dummy: unit.heat_dummy.map(link),
    })
}

/// The far end of the single same-carrier physical link at `node`, if any.
fn far_end<'a>(net: &'a Network, node: &'a str, want_line: bool) -> Vec<&'a crate::model::Link> {
    net.incident_links(node)
        .filter(|l| match l.kind {
            LinkKind::TransmissionLine { .. } => want_line,
            LinkKind::GasPipe { .. } | LinkKind::HeatPipe { .. } => !want_line,
            LinkKind::Dummy { .. } => false,
        })
        .collect()
}

impl BcTemplate {
    /// Resolves the template against `net`, filling structural defaults and
    /// taking the remaining values from `values` (keyed by slot path). Every
    /// key in `values` must be consumed.
    pub fn apply(
        self,
        net: &Network,
        values: &HashMap<String, f64>,
        opts: TemplateOptions,
    ) -> Result<BoundaryConditionSet, WellposednessError> {
        let roles = unit_roles(net, self)?;
        let kind = match &net.nodes()[net
            .nodes()
            .iter()
            .position(|n| n.is_coupling())
            .expect("unit_roles found a unit")]
        .kind
        {
            NodeKind::Coupling { kind, params } => (*kind, params.clone()),
            _ => unreachable!(),
        };
        let (unit_kind, unit_params) = kind;

        let expect_kind = |want: CouplingKind| -> Result<(), WellposednessError> {
            if unit_kind != want {
                return Err(mismatch(
                    self,
                    format!("template expects a {want:?} unit, network has {unit_kind:?}"),
                ));
            }
            Ok(())
        };
        let expect_mode = |free: bool| -> Result<(), WellposednessError> {
            let is_free = unit_params.eta_h == HeatEfficiency::Free;
            if is_free != free {
                return Err(mismatch(
                    self,
                    if free {
                        "template needs the residual-heat fraction left free"
                    } else {
                        "template needs a fixed residual-heat fraction"
                    },
                ));
            }
            Ok(())
        };

        // Planned entries in template order: (slot path, default or required).
        let mut plan: Vec<(String, Planned)> = Vec::new();
        let e = &roles.electric_node;
        let (ed_from, ed_to) = &roles.electric_dummy;
        let q_dummy_path = format!("Q@{ed_from}-{ed_to}");

        match self {
            BcTemplate::PowerToGasKnownEfficiency => {
                expect_kind(CouplingKind::PowerToGas)?;
                let _g = roles
                    .gas_node
                    .as_ref()
                    .ok_or_else(|| mismatch(self, "unit has no gas attachment"))?;
                plan.push((format!("P@{e}"), Planned::Required));
                plan.push((q_dummy_path.clone(), Planned::Default(0.0)));
            }
            BcTemplate::ElectricBoiler => {
                expect_kind(CouplingKind::ElectricBoiler)?;
                let h = roles
                    .heat_node
                    .as_ref()
                    .ok_or_else(|| mismatch(self, "unit has no heat attachment"))?;
                let (hd_from, hd_to) = roles.heat_dummy.as_ref().expect("heat node implies dummy");
                plan.push((format!("P@{e}"), Planned::Required));
                plan.push((format!("Tr@{h}"), Planned::Required));
                plan.push((q_dummy_path.clone(), Planned::Default(0.0)));
                plan.push((format!("Ts@{hd_from}-{hd_to}"), Planned::Required));
            }
            BcTemplate::ElectrolyserKnownEfficiency | BcTemplate::ElectrolyserFreeEfficiency => {
                expect_kind(CouplingKind::Electrolyser)?;
                expect_mode(self == BcTemplate::ElectrolyserFreeEfficiency)?;
                let g = roles
                    .gas_node
                    .as_ref()
                    .ok_or_else(|| mismatch(self, "unit has no gas attachment"))?;
                let h = roles
                    .heat_node
                    .as_ref()
                    .ok_or_else(|| mismatch(self, "unit has no heat attachment"))?;
                let (hd_from, hd_to) = roles.heat_dummy.as_ref().expect("heat node implies dummy");
                if self == BcTemplate::ElectrolyserKnownEfficiency {
                    plan.push((format!("P@{e}"), Planned::Required));
                } else {
                    // Free fraction: prescribe the unit's outputs instead of
                    // its electric input.
                    plan.push((format!("q@{g}"), Planned::Required));
                    plan.push((format!("dphi@{h}"), Planned::Required));
                }
                plan.push((format!("Tr@{h}"), Planned::Required));
                plan.push((q_dummy_path.clone(), Planned::Default(0.0)));
                plan.push((format!("Ts@{hd_from}-{hd_to}"), Planned::Required));
            }
            BcTemplate::LinkedKnownEfficiency | BcTemplate::LinkedFreeEfficiency => {
                expect_kind(CouplingKind::Electrolyser)?;
                expect_mode(self == BcTemplate::LinkedFreeEfficiency)?;
                let g = roles
                    .gas_node
                    .as_ref()
                    .ok_or_else(|| mismatch(self, "unit has no gas attachment"))?;
                let h = roles
                    .heat_node
                    .as_ref()
                    .ok_or_else(|| mismatch(self, "unit has no heat attachment"))?;
                let (hd_from, hd_to) = roles.heat_dummy.as_ref().expect("heat node implies dummy");

                let lines = far_end(net, e, true);
                let [line] = lines.as_slice() else {
                    return Err(mismatch(
                        self,
                        format!(
                            "expected one transmission line at {e}, found {}",
                            lines.len()
                        ),
                    ));
                };
                let e2 = if line.from == *e {
                    &line.to
                } else {
                    &line.from
                };
                let gas_pipes = far_end(net, g, false);
                let [gas_pipe] = gas_pipes.as_slice() else {
                    return Err(mismatch(
                        self,
                        format!("expected one gas pipe at {g}, found {}", gas_pipes.len()),
                    ));
                };
                let g2 = if gas_pipe.from == *g {
                    &gas_pipe.to
                } else {
                    &gas_pipe.from
                };
                let heat_pipes = far_end(net, h, false);
                let [heat_pipe] = heat_pipes.as_slice() else {
                    return Err(mismatch(
                        self,
                        format!("expected one heat pipe at {h}, found {}", heat_pipes.len()),
                    ));
                };
                let h2 = if heat_pipe.from == *h {
                    &heat_pipe.to
                } else {
                    &heat_pipe.from
                };
                let far_heat = net
                    .node(h2)
                    .ok_or_else(|| mismatch(self, format!("missing node {h2}")))?;
                if far_heat.terminal() != Some(TerminalKind::HeatFull) {
                    return Err(mismatch(
                        self,
                        format!("node {h2} must carry a full heat terminal"),
                    ));
                }

                // Structural zeros at the junction-side terminals.
                plan.push((format!("P@{e}"), Planned::Default(0.0)));
                plan.push((format!("Q@{e}"), Planned::Default(0.0)));
                plan.push((format!("q@{g}"), Planned::Default(0.0)));
                plan.push((format!("m@{h}"), Planned::Default(0.0)));
                // Electric side: the far node is the network connection with
                // known voltage phasor; its drawn power is known only when
                // the residual-heat fraction is, too.
                if self == BcTemplate::LinkedKnownEfficiency {
                    plan.push((format!("P@{e2}"), Planned::Required));
                }
                plan.push((format!("V@{e2}"), Planned::Required));
                plan.push((format!("delta@{e2}"), Planned::Required));
                // Reference pressures, movable to the junction side.
                let (p_gas, p_heat) = if opts.reference_pressure_on_junctions {
                    (format!("p@{g}"), format!("p@{h}"))
                } else {
                    (format!("p@{g2}"), format!("p@{h2}"))
                };
                plan.push((p_gas, Planned::Required));
                plan.push((p_heat, Planned::Required));
                if self == BcTemplate::LinkedFreeEfficiency {
                    plan.push((format!("q@{g2}"), Planned::Required));
                    plan.push((format!("dphi@{h2}"), Planned::Required));
                }
                plan.push((format!("Tr@{h2}"), Planned::Required));
                plan.push((q_dummy_path.clone(), Planned::Default(0.0)));
                plan.push((format!("Ts@{hd_from}-{hd_to}"), Planned::Required));
            }
        }

        let mut bcs = BoundaryConditionSet::new();
        let reg = net.registry();
        let mut used: BTreeMap<&str, bool> = values.keys().map(|k| (k.as_str(), false)).collect();
        for (path, planned) in &plan {
            let slot = reg.lookup_path(path)?;
            let value = match (planned, values.get(path)) {
                // A caller-supplied value overrides a structural default.
                (_, Some(v)) => {
                    used.insert(path.as_str(), true);
                    *v
                }
                (Planned::Default(v), None) => *v,
                (Planned::Required, None) => {
                    return Err(WellposednessError::MissingValue { path: path.clone() })
                }
            };
            if !value.is_finite() {
                return Err(WellposednessError::NonFiniteValue { path: path.clone() });
            }
            bcs.insert(slot, value)
                .map_err(|_| WellposednessError::DuplicateBc { path: path.clone() })?;
        }
        for (path, was_used) in used {
            if !was_used {
                return Err(WellposednessError::UnexpectedValue { path: path.into() });
            }
        }
        Ok(bcs)
    }
}

/// Verdict of the numerical rank probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankVerdict {
    Nonsingular { condition_estimate: f64 },
    Singular { condition_estimate: f64 },
}

impl RankVerdict {
    pub fn is_singular(&self) -> bool {
        matches!(self, RankVerdict::Singular { .. })
    }

    pub fn condition_estimate(&self) -> f64 {
        match self {
            RankVerdict::Nonsingular { condition_estimate }
            | RankVerdict::Singular { condition_estimate } => *condition_estimate,
        }
    }
}

/// Relative pivot floor below which the probe declares the matrix singular.
pub const PROBE_PIVOT_FLOOR: f64 = 1e-12;

/// LU-factorises the Jacobian at `probe` and inspects the pivot spread.
/// The probe state is evaluated under the vanishing-flow limit policy, so
/// states with zero pipe flows are admissible; negative mass flows are not.
pub fn jacobian_rank_probe(
    net: &Network,
    bcs: &BoundaryConditionSet,
    probe: &DVector<f64>,
) -> Result<RankVerdict, WellposednessError> {
    let sys = assemble_system(net, bcs)?;
    if !sys.is_square() {
        return Err(WellposednessError::NonSquareProbe {
            equations: sys.n_equations(),
            unknowns: sys.n_free(),
        });
    }
    let jac = sys.jacobian(probe, DomainPolicy::Limit)?;
    Ok(pivot_verdict(&jac))
}

/// Pivot-spread verdict on an already-computed square Jacobian.
pub(crate) fn pivot_verdict(jac: &nalgebra::DMatrix<f64>) -> RankVerdict {
    let lu = jac.clone().lu();
    let pivots = lu.u().diagonal().map(|d| d.abs());
    let max_p = pivots.max();
    let min_p = pivots.min();
    if max_p == 0.0 {
        return RankVerdict::Singular {
            condition_estimate: f64::INFINITY,
        };
    }
    let condition_estimate = if min_p == 0.0 {
        f64::INFINITY
    } else {
        max_p / min_p
    };
    if min_p <= PROBE_PIVOT_FLOOR * max_p {
        RankVerdict::Singular { condition_estimate }
    } else {
        RankVerdict::Nonsingular { condition_estimate }
    }
}

/// Returns `base` with every heat mass-flow slot (node and link alike)
/// forced to zero: the all-flows-at-rest probe of the temperature equations.
pub fn zero_mass_flow_probe(net: &Network, base: &DVector<f64>) -> DVector<f64> {
    let mut x = base.clone();
    for (slot, key) in net.registry().iter() {
        if key.kind == SymbolKind::MassFlow {
            x[slot] = 0.0;
        }
    }
    x
}

/// Returns `base` as a hydraulically-at-rest state: uniform pressure per
/// carrier (taken from the base state's maximum for that carrier) and zero
/// flow on every pipe, while dummy-link flows keep their base values.
pub fn at_rest_probe(net: &Network, base: &DVector<f64>) -> DVector<f64> {
    let mut x = base.clone();
    let reg = net.registry();
    let mut ref_p: HashMap<Carrier, f64> = HashMap::new();
    for node in net.nodes() {
        if let Some(carrier) = node.carrier() {
            if let Ok(slot) = reg.lookup_path(&format!("p@{}", node.id)) {
                let entry = ref_p.entry(carrier).or_insert(f64::NEG_INFINITY);
                *entry = entry.max(base[slot]);
            }
        }
    }
    for node in net.nodes() {
        if let Some(carrier) = node.carrier() {
            if let Ok(slot) = reg.lookup_path(&format!("p@{}", node.id)) {
                x[slot] = ref_p[&carrier];
            }
        }
    }
    for link in net.links() {
        match link.kind {
            LinkKind::GasPipe { .. } => {
                let slot = reg
                    .lookup_path(&format!("q@{}-{}", link.from, link.to))
                    .expect("gas pipe carries a flow slot");
                x[slot] = 0.0;
            }
            LinkKind::HeatPipe { .. } => {
                let slot = reg
                    .lookup_path(&format!("m@{}-{}", link.from, link.to))
                    .expect("heat pipe carries a flow slot");
                x[slot] = 0.0;
            }
            _ => {}
        }
    }
    x
}
