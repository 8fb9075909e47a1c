//! Network model: carriers, nodes, links, terminals and the variable registry.
//!
//! A network is a graph of single-carrier nodes (electricity, gas, heat) and
//! coupling nodes (conversion units), joined by physical links (transmission
//! lines, gas pipes, heat pipes), lossless dummy links (coupling unit to
//! carrier node) and terminal links (injections/draws attached to a node).
//!
//! Every quantity that can appear in an assembled equation occupies exactly
//! one slot of the [`VariableRegistry`]; boundary conditions later pin a
//! subset of those slots, the rest are solved for.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Energy carrier of a single-carrier node or physical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Carrier {
    Electricity,
    Gas,
    Heat,
}

impl fmt::Display for Carrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Carrier::Electricity => write!(f, "electricity"),
            Carrier::Gas => write!(f, "gas"),
            Carrier::Heat => write!(f, "heat"),
        }
    }
}

/// Conversion unit housed on a coupling node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    /// Electricity to gas and residual heat (`ηP = HHV·q + Δφ`, `η_h·η·P = Δφ`).
    Electrolyser,
    /// Electricity to gas only (`ηP = HHV·q`).
    PowerToGas,
    /// Electricity to heat only (`Δφ = ηP`).
    ElectricBoiler,
}

impl fmt::Display for CouplingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CouplingKind::Electrolyser => write!(f, "electrolyser"),
            CouplingKind::PowerToGas => write!(f, "power-to-gas"),
            CouplingKind::ElectricBoiler => write!(f, "electric boiler"),
        }
    }
}

/// Heat efficiency mode of an electrolyser: a fixed parameter or an extra
/// unknown (one registry slot on the coupling node).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatEfficiency {
    Fixed(f64),
    Free,
}

/// Parameters of a conversion unit.
///
/// `hhv` is the higher heating value of the produced gas in J/kg; it is
/// copied from the gas carrier parameters at build time unless overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    /// Overall conversion efficiency η, dimensionless in (0, 1].
    pub eta: f64,
    /// Fraction of converted energy leaving as heat, η_h.
    pub eta_h: HeatEfficiency,
    /// Higher heating value of the produced gas, J/kg.
    pub hhv: f64,
}

/// What a terminal link on a node carries.
///
/// Electric terminals carry active and reactive power draws, gas terminals a
/// mass-flow draw. Heat terminals come in two flavours: a full source/sink
/// with supply/return temperatures and a total-heat-power equation, or a
/// mass-only terminal used on junctions (the junction's energy balance has no
/// terminal contribution).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    Electric,
    Gas,
    HeatFull,
    HeatMassOnly,
}

/// Node of the network graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// Single-carrier node, optionally with a terminal link.
    Carrier {
        carrier: Carrier,
        terminal: Option<TerminalKind>,
    },
    /// Coupling node housing a conversion unit. Coupling nodes have no
    /// terminal and no nodal balance equations of their own; the unit's
    /// equations take their place.
    Coupling {
        kind: CouplingKind,
        params: CouplingParams,
    },
}

impl Node {
    pub fn carrier(&self) -> Option<Carrier> {
        match &self.kind {
            NodeKind::Carrier { carrier, .. } => Some(*carrier),
            NodeKind::Coupling { .. } => None,
        }
    }

    pub fn terminal(&self) -> Option<TerminalKind> {
        match &self.kind {
            NodeKind::Carrier { terminal, .. } => *terminal,
            NodeKind::Coupling { .. } => None,
        }
    }

    pub fn is_coupling(&self) -> bool {
        matches!(self.kind, NodeKind::Coupling { .. })
    }
}

/// Link of the network graph. `from`/`to` fix the positive flow orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    pub from: String,
    pub to: String,
    pub kind: LinkKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinkKind {
    /// AC transmission line with series conductance/susceptance in siemens.
    /// Line-end powers are substituted expressions in the end voltages and
    /// angles, so a line adds no slots of its own.
    TransmissionLine { conductance: f64, susceptance: f64 },
    /// Gas pipe: `p_from - p_to = cg⁻²·f·|q|q`. Carries one flow slot.
    GasPipe { pipe_constant: f64, friction: f64 },
    /// Heat pipe: hydraulics as the gas pipe plus supply/return temperature
    /// decay along the pipe. Carries a mass-flow slot, the supply temperature
    /// at the `from` end and the return temperature at the `to` end; the
    /// opposite-end temperatures are substituted decayed values.
    HeatPipe {
        pipe_constant: f64,
        friction: f64,
        /// Heat transfer coefficient λ, W/(m·K) of pipe length.
        heat_transfer: f64,
        length: f64,
        diameter: f64,
    },
    /// Lossless dummy link joining a coupling node and a carrier node.
    /// Electric dummies carry P and Q slots and must be oriented carrier
    /// node → coupling; gas and heat dummies carry the unit's outputs and
    /// must be oriented coupling → carrier node.
    Dummy { carrier: Carrier },
}

/// Gas carrier parameters (standard conditions used to reconstruct pipe
/// constants from geometry, and the higher heating value of the gas).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GasParams {
    /// Higher heating value, J/kg.
    pub hhv: f64,
    /// Specific gravity relative to air, dimensionless.
    pub specific_gravity: f64,
    /// Compressibility factor Z, dimensionless.
    pub compressibility: f64,
    /// Standard pressure, Pa.
    pub standard_pressure: f64,
    /// Standard temperature, K.
    pub standard_temperature: f64,
    /// Universal gas constant, J/(mol·K).
    pub gas_constant: f64,
    /// Molar mass of air, kg/mol.
    pub molar_mass_air: f64,
}

impl Default for GasParams {
    /// Hydrogen-density defaults: specific gravity of hydrogen relative to
    /// air, hydrogen higher heating value.
    fn default() -> Self {
        GasParams {
            hhv: 1.418e8,
            specific_gravity: 0.0696,
            compressibility: 1.0,
            standard_pressure: 1.0e5,
            standard_temperature: 288.0,
            gas_constant: 8.314413,
            molar_mass_air: 28.97e-3,
        }
    }
}

impl GasParams {
    /// Gas density at standard conditions, kg/m³.
    pub fn standard_density(&self) -> f64 {
        let molar_mass = self.specific_gravity * self.molar_mass_air;
        self.standard_pressure * molar_mass
            / (self.gas_constant * self.standard_temperature * self.compressibility)
    }
}

/// Heat carrier (hot water loop) parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatParams {
    /// Water density, kg/m³.
    pub density: f64,
    /// Specific heat capacity, J/(kg·K).
    pub specific_heat: f64,
    /// Ambient temperature the pipes lose heat to, K.
    pub ambient_temperature: f64,
    /// Gravitational acceleration, m/s². Housed for completeness; the flat
    /// pipe model never reads it.
    pub gravity: f64,
}

impl Default for HeatParams {
    fn default() -> Self {
        HeatParams {
            density: 960.0,
            specific_heat: 4182.0,
            ambient_temperature: 273.15,
            gravity: 9.81,
        }
    }
}

/// Carrier-level physical parameters shared by the whole network.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CarrierParams {
    pub gas: GasParams,
    pub heat: HeatParams,
}

/// Kind of quantity a registry slot holds. The order of the variants is the
/// within-owner ordering of slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SymbolKind {
    /// Voltage magnitude |V|, volts.
    VoltageMagnitude,
    /// Voltage angle δ, radians.
    VoltageAngle,
    /// Active power P, watts.
    ActivePower,
    /// Reactive power Q, watts (reactive).
    ReactivePower,
    /// Pressure p, pascals.
    Pressure,
    /// Gas mass flow q, kg/s.
    GasFlow,
    /// Water mass flow m, kg/s.
    MassFlow,
    /// Supply-line temperature T^s, kelvin.
    SupplyTemperature,
    /// Return-line temperature T^r, kelvin.
    ReturnTemperature,
    /// Heat power Δφ, watts.
    HeatPower,
    /// Heat efficiency η_h, dimensionless (free-efficiency mode only).
    HeatEta,
}

impl SymbolKind {
    /// Stable text token used in slot paths, reports and CSV headers.
    pub fn token(&self) -> &'static str {
        match self {
            SymbolKind::VoltageMagnitude => "V",
            SymbolKind::VoltageAngle => "delta",
            SymbolKind::ActivePower => "P",
            SymbolKind::ReactivePower => "Q",
            SymbolKind::Pressure => "p",
            SymbolKind::GasFlow => "q",
            SymbolKind::MassFlow => "m",
            SymbolKind::SupplyTemperature => "Ts",
            SymbolKind::ReturnTemperature => "Tr",
            SymbolKind::HeatPower => "dphi",
            SymbolKind::HeatEta => "eta_h",
        }
    }

    fn from_token(tok: &str) -> Option<SymbolKind> {
        Some(match tok {
            "V" => SymbolKind::VoltageMagnitude,
            "delta" => SymbolKind::VoltageAngle,
            "P" => SymbolKind::ActivePower,
            "Q" => SymbolKind::ReactivePower,
            "p" => SymbolKind::Pressure,
            "q" => SymbolKind::GasFlow,
            "m" => SymbolKind::MassFlow,
            "Ts" => SymbolKind::SupplyTemperature,
            "Tr" => SymbolKind::ReturnTemperature,
            "dphi" => SymbolKind::HeatPower,
            "eta_h" => SymbolKind::HeatEta,
            _ => return None,
        })
    }

    /// Display unit used when printing reports (values are stored in SI).
    pub fn display_unit(&self) -> &'static str {
        match self {
            SymbolKind::VoltageMagnitude => "V",
            SymbolKind::VoltageAngle => "rad",
            SymbolKind::ActivePower | SymbolKind::ReactivePower | SymbolKind::HeatPower => "MW",
            SymbolKind::Pressure => "bar",
            SymbolKind::GasFlow | SymbolKind::MassFlow => "kg/s",
            SymbolKind::SupplyTemperature | SymbolKind::ReturnTemperature => "K",
            SymbolKind::HeatEta => "-",
        }
    }
}

/// Where a slot lives: on a node (node state or terminal injection) or on a
/// link (flow slot, link-end temperature, dummy-link quantity).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SlotOwner {
    Node(String),
    /// Identified by the link's `(from, to)` endpoint pair as declared.
    Link(String, String),
}

impl fmt::Display for SlotOwner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotOwner::Node(n) => write!(f, "{n}"),
            SlotOwner::Link(a, b) => write!(f, "{a}-{b}"),
        }
    }
}

/// Fully-qualified slot identity, e.g. `P@1e` or `Ts@0c-0h`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SlotKey {
    pub kind: SymbolKind,
    pub owner: SlotOwner,
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.kind.token(), self.owner)
    }
}

impl SlotKey {
    pub fn node(kind: SymbolKind, node: &str) -> SlotKey {
        SlotKey {
            kind,
            owner: SlotOwner::Node(node.to_string()),
        }
    }

    pub fn link(kind: SymbolKind, from: &str, to: &str) -> SlotKey {
        SlotKey {
            kind,
            owner: SlotOwner::Link(from.to_string(), to.to_string()),
        }
    }

    /// Parses a slot path of the form `kind@node` or `kind@from-to`.
    pub fn parse(path: &str) -> Result<SlotKey, ModelError> {
        let bad = || ModelError::BadSlotPath(path.to_string());
        let (tok, owner) = path.split_once('@').ok_or_else(bad)?;
        let kind = SymbolKind::from_token(tok.trim()).ok_or_else(bad)?;
        let owner = owner.trim();
        if owner.is_empty() {
            return Err(bad());
        }
        let owner = match owner.split_once('-') {
            Some((a, b)) if !a.is_empty() && !b.is_empty() => {
                SlotOwner::Link(a.to_string(), b.to_string())
            }
            Some(_) => return Err(bad()),
            None => SlotOwner::Node(owner.to_string()),
        };
        Ok(SlotKey { kind, owner })
    }
}

/// Index of a slot in the registry (and in full state vectors).
pub type SlotId = usize;

/// Deterministic mapping between slot identities and state-vector indices.
///
/// Slots are ordered node-attached first (nodes sorted by id, symbol kinds in
/// declaration order), then link-attached (links sorted by id). Two builds of
/// the same network produce identical orderings.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableRegistry {
    slots: Vec<SlotKey>,
    index: HashMap<SlotKey, SlotId>,
}

impl VariableRegistry {
    fn new(slots: Vec<SlotKey>) -> Result<Self, ModelError> {
        let mut index = HashMap::with_capacity(slots.len());
        for (i, key) in slots.iter().enumerate() {
            if index.insert(key.clone(), i).is_some() {
                return Err(ModelError::DuplicateSlot(key.to_string()));
            }
        }
        Ok(VariableRegistry { slots, index })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn key(&self, id: SlotId) -> &SlotKey {
        &self.slots[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (SlotId, &SlotKey)> {
        self.slots.iter().enumerate()
    }

    /// Looks a slot up by identity; errors if the symbol does not exist on
    /// this network (e.g. η_h in fixed-efficiency mode).
    pub fn lookup(&self, key: &SlotKey) -> Result<SlotId, ModelError> {
        self.index
            .get(key)
            .copied()
            .ok_or_else(|| ModelError::UnknownSlot(key.to_string()))
    }

    /// Looks a slot up by textual path, e.g. `p@1g` or `m@0c-0h`.
    pub fn lookup_path(&self, path: &str) -> Result<SlotId, ModelError> {
        self.lookup(&SlotKey::parse(path)?)
    }
}

/// Validated network: nodes, links, registry and physical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<Node>,
    links: Vec<Link>,
    params: CarrierParams,
    registry: VariableRegistry,
    node_index: HashMap<String, usize>,
}

/// Errors raised while building or querying a network.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("duplicate link id `{0}`")]
    DuplicateLink(String),
    #[error("parallel links between `{0}` and `{1}` are not supported")]
    ParallelLink(String, String),
    #[error("link `{link}` references unknown node `{node}`")]
    DanglingEndpoint { link: String, node: String },
    #[error("link `{0}` joins a node to itself")]
    SelfLoop(String),
    #[error("node id `{0}` contains a reserved character (`@`, `-`, `,` or whitespace)")]
    BadNodeId(String),
    #[error("link `{link}`: {what}")]
    BadLink { link: String, what: String },
    #[error("node `{node}`: {what}")]
    BadNode { node: String, what: String },
    #[error("coupling `{node}`: {what}")]
    BadCoupling { node: String, what: String },
    #[error("malformed slot path `{0}` (expected `kind@node` or `kind@from-to`)")]
    BadSlotPath(String),
    #[error("no such slot `{0}` on this network")]
    UnknownSlot(String),
    #[error("duplicate slot `{0}`")]
    DuplicateSlot(String),
}

/// Per-coupling view assembled at build time: the unit, its parameters and
/// the dummy links that attach it to each carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingUnit {
    pub node: usize,
    pub kind: CouplingKind,
    pub params: CouplingParams,
    pub electric_dummy: Option<usize>,
    pub gas_dummy: Option<usize>,
    pub heat_dummy: Option<usize>,
}

impl Network {
    /// Validates the topology and builds the registry.
    ///
    /// Rules enforced here: unique ids, endpoints exist, physical links join
    /// two nodes of their own carrier, dummy links join a coupling node and a
    /// matching carrier node with the canonical orientation (electricity:
    /// carrier node → coupling; gas/heat: coupling → carrier node), each
    /// coupling unit has the attachments its model needs, link parameters
    /// are positive.
    pub fn build(
        nodes: Vec<Node>,
        links: Vec<Link>,
        params: CarrierParams,
    ) -> Result<Network, ModelError> {
        let mut nodes = nodes;
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let mut links = links;
        links.sort_by(|a, b| a.id.cmp(&b.id));

        let mut node_index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if n.id.is_empty()
                || n.id
                    .chars()
                    .any(|c| c == '@' || c == '-' || c == ',' || c.is_whitespace())
            {
                return Err(ModelError::BadNodeId(n.id.clone()));
            }
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(ModelError::DuplicateNode(n.id.clone()));
            }
            if let NodeKind::Carrier { carrier, terminal } = &n.kind {
                match (carrier, terminal) {
                    (Carrier::Electricity, Some(t)) if *t != TerminalKind::Electric => {
                        return Err(ModelError::BadNode {
                            node: n.id.clone(),
                            what: format!("terminal kind {t:?} does not fit carrier electricity"),
                        })
                    }
                    (Carrier::Gas, Some(t)) if *t != TerminalKind::Gas => {
                        return Err(ModelError::BadNode {
                            node: n.id.clone(),
                            what: format!("terminal kind {t:?} does not fit carrier gas"),
                        })
                    }
                    (Carrier::Heat, Some(t))
                        if !matches!(t, TerminalKind::HeatFull | TerminalKind::HeatMassOnly) =>
                    {
                        return Err(ModelError::BadNode {
                            node: n.id.clone(),
                            what: format!("terminal kind {t:?} does not fit carrier heat"),
                        })
                    }
                    _ => {}
                }
            }
            if let NodeKind::Coupling { params, .. } = &n.kind {
                if !(params.eta > 0.0 && params.eta <= 1.0) {
                    return Err(ModelError::BadCoupling {
                        node: n.id.clone(),
                        what: format!("efficiency eta = {} outside (0, 1]", params.eta),
                    });
                }
                if let HeatEfficiency::Fixed(eh) = params.eta_h {
                    if !(0.0..=1.0).contains(&eh) {
                        return Err(ModelError::BadCoupling {
                            node: n.id.clone(),
                            what: format!("heat efficiency eta_h = {eh} outside [0, 1]"),
                        });
                    }
                }
                if !(params.hhv > 0.0) {
                    return Err(ModelError::BadCoupling {
                        node: n.id.clone(),
                        what: format!("higher heating value {} must be positive", params.hhv),
                    });
                }
            }
        }

        let mut link_ids = HashMap::new();
        let mut endpoint_pairs = HashMap::new();
        for (i, l) in links.iter().enumerate() {
            if link_ids.insert(l.id.clone(), i).is_some() {
                return Err(ModelError::DuplicateLink(l.id.clone()));
            }
            for end in [&l.from, &l.to] {
                if !node_index.contains_key(end) {
                    return Err(ModelError::DanglingEndpoint {
                        link: l.id.clone(),
                        node: end.clone(),
                    });
                }
            }
            if l.from == l.to {
                return Err(ModelError::SelfLoop(l.id.clone()));
            }
            let mut pair = [l.from.clone(), l.to.clone()];
            pair.sort();
            if endpoint_pairs.insert(pair, i).is_some() {
                return Err(ModelError::ParallelLink(l.from.clone(), l.to.clone()));
            }

            let from = &nodes[node_index[&l.from]];
            let to = &nodes[node_index[&l.to]];
            let bad = |what: String| ModelError::BadLink {
                link: l.id.clone(),
                what,
            };
            let positive = |name: &str, v: f64| -> Result<(), ModelError> {
                if v > 0.0 && v.is_finite() {
                    Ok(())
                } else {
                    Err(bad(format!("{name} = {v} must be positive and finite")))
                }
            };
            match &l.kind {
                LinkKind::TransmissionLine { conductance, .. } => {
                    if from.carrier() != Some(Carrier::Electricity)
                        || to.carrier() != Some(Carrier::Electricity)
                    {
                        return Err(bad(
                            "transmission line endpoints must both be electricity nodes".into(),
                        ));
                    }
                    if !conductance.is_finite() || *conductance < 0.0 {
                        return Err(bad(format!(
                            "conductance = {conductance} must be non-negative and finite"
                        )));
                    }
                }
                LinkKind::GasPipe {
                    pipe_constant,
                    friction,
                } => {
                    if from.carrier() != Some(Carrier::Gas) || to.carrier() != Some(Carrier::Gas) {
                        return Err(bad("gas pipe endpoints must both be gas nodes".into()));
                    }
                    positive("pipe constant", *pipe_constant)?;
                    positive("friction factor", *friction)?;
                }
                LinkKind::HeatPipe {
                    pipe_constant,
                    friction,
                    heat_transfer,
                    length,
                    diameter,
                } => {
                    if from.carrier() != Some(Carrier::Heat) || to.carrier() != Some(Carrier::Heat)
                    {
                        return Err(bad("heat pipe endpoints must both be heat nodes".into()));
                    }
                    positive("pipe constant", *pipe_constant)?;
                    positive("friction factor", *friction)?;
                    positive("heat transfer coefficient", *heat_transfer)?;
                    positive("length", *length)?;
                    positive("diameter", *diameter)?;
                }
                LinkKind::Dummy { carrier } => {
                    // Canonical orientation keeps the sign conventions of the
                    // slot names: electric dummy power flows into the unit,
                    // gas/heat dummy flows out of it.
                    let (coupling_end, carrier_end, expect) = match carrier {
                        Carrier::Electricity => (to, from, "carrier node -> coupling"),
                        Carrier::Gas | Carrier::Heat => (from, to, "coupling -> carrier node"),
                    };
                    if !coupling_end.is_coupling() || carrier_end.carrier() != Some(*carrier) {
                        return Err(bad(format!(
                            "{carrier} dummy link must join a coupling node and a {carrier} node, oriented {expect}"
                        )));
                    }
                }
            }
        }

        let network = Network {
            registry: VariableRegistry::new(Vec::new())?,
            nodes,
            links,
            params,
            node_index,
        };
        network.validate_couplings()?;
        let registry = network.build_registry()?;
        Ok(Network {
            registry,
            ..network
        })
    }

    fn validate_couplings(&self) -> Result<(), ModelError> {
        for unit in self.coupling_units() {
            let node = &self.nodes[unit.node];
            let err = |what: String| ModelError::BadCoupling {
                node: node.id.clone(),
                what,
            };
            let free = matches!(unit.params.eta_h, HeatEfficiency::Free);
            match unit.kind {
                CouplingKind::Electrolyser => {
                    if unit.electric_dummy.is_none() {
                        return Err(err("missing electricity dummy link".into()));
                    }
                    match (unit.gas_dummy.is_some(), unit.heat_dummy.is_some()) {
                        (true, true) => {}
                        // Degenerate attachments: without a heat (resp. gas)
                        // side the unit only makes sense when no energy is
                        // routed there, i.e. eta_h pinned to 0 (resp. 1).
                        (true, false) => match unit.params.eta_h {
                            HeatEfficiency::Fixed(v) if v == 0.0 => {}
                            _ => return Err(err(
                                "electrolyser without a heat dummy link requires fixed eta_h = 0"
                                    .into(),
                            )),
                        },
                        (false, true) => match unit.params.eta_h {
                            HeatEfficiency::Fixed(v) if v == 1.0 => {}
                            _ => return Err(err(
                                "electrolyser without a gas dummy link requires fixed eta_h = 1"
                                    .into(),
                            )),
                        },
                        (false, false) => {
                            return Err(err("electrolyser needs a gas or heat dummy link".into()))
                        }
                    }
                }
                CouplingKind::PowerToGas => {
                    if unit.electric_dummy.is_none() || unit.gas_dummy.is_none() {
                        return Err(err(
                            "power-to-gas needs electricity and gas dummy links".into()
                        ));
                    }
                    if unit.heat_dummy.is_some() {
                        return Err(err("power-to-gas cannot have a heat dummy link".into()));
                    }
                    if free {
                        return Err(err(
                            "free heat efficiency only applies to electrolysers".into()
                        ));
                    }
                }
                CouplingKind::ElectricBoiler => {
                    if unit.electric_dummy.is_none() || unit.heat_dummy.is_none() {
                        return Err(err(
                            "electric boiler needs electricity and heat dummy links".into(),
                        ));
                    }
                    if unit.gas_dummy.is_some() {
                        return Err(err("electric boiler cannot have a gas dummy link".into()));
                    }
                    if free {
                        return Err(err(
                            "free heat efficiency only applies to electrolysers".into()
                        ));
                    }
                }
            }
        }
        // A dummy link must belong to some coupling node; build() already
        // checks one end is a coupling, so nothing further here. Duplicate
        // attachments per carrier are rejected below.
        let mut seen: HashMap<(usize, Carrier), String> = HashMap::new();
        for l in &self.links {
            if let LinkKind::Dummy { carrier } = l.kind {
                let cidx = match carrier {
                    Carrier::Electricity => self.node_index[&l.to],
                    _ => self.node_index[&l.from],
                };
                if let Some(prev) = seen.insert((cidx, carrier), l.id.clone()) {
                    return Err(ModelError::BadCoupling {
                        node: self.nodes[cidx].id.clone(),
                        what: format!("more than one {carrier} dummy link (`{prev}`, `{}`)", l.id),
                    });
                }
            }
        }
        Ok(())
    }

    fn build_registry(&self) -> Result<VariableRegistry, ModelError> {
        let mut slots = Vec::new();
        for node in &self.nodes {
            match &node.kind {
                NodeKind::Carrier { carrier, terminal } => match carrier {
                    Carrier::Electricity => {
                        if self
                            .incident_links(&node.id)
                            .any(|l| matches!(l.kind, LinkKind::TransmissionLine { .. }))
                        {
                            slots.push(SlotKey::node(SymbolKind::VoltageMagnitude, &node.id));
                            slots.push(SlotKey::node(SymbolKind::VoltageAngle, &node.id));
                        }
                        if terminal.is_some() {
                            slots.push(SlotKey::node(SymbolKind::ActivePower, &node.id));
                            slots.push(SlotKey::node(SymbolKind::ReactivePower, &node.id));
                        }
                    }
                    Carrier::Gas => {
                        if self
                            .incident_links(&node.id)
                            .any(|l| matches!(l.kind, LinkKind::GasPipe { .. }))
                        {
                            slots.push(SlotKey::node(SymbolKind::Pressure, &node.id));
                        }
                        if terminal.is_some() {
                            slots.push(SlotKey::node(SymbolKind::GasFlow, &node.id));
                        }
                    }
                    Carrier::Heat => {
                        if self
                            .incident_links(&node.id)
                            .any(|l| matches!(l.kind, LinkKind::HeatPipe { .. }))
                        {
                            slots.push(SlotKey::node(SymbolKind::Pressure, &node.id));
                        }
                        match terminal {
                            Some(TerminalKind::HeatFull) => {
                                slots.push(SlotKey::node(SymbolKind::MassFlow, &node.id));
                                slots.push(SlotKey::node(SymbolKind::SupplyTemperature, &node.id));
                                slots.push(SlotKey::node(SymbolKind::ReturnTemperature, &node.id));
                                slots.push(SlotKey::node(SymbolKind::HeatPower, &node.id));
                            }
                            Some(TerminalKind::HeatMassOnly) => {
                                slots.push(SlotKey::node(SymbolKind::MassFlow, &node.id));
                            }
                            _ => {}
                        }
                    }
                },
                NodeKind::Coupling { params, .. } => {
                    if matches!(params.eta_h, HeatEfficiency::Free) {
                        slots.push(SlotKey::node(SymbolKind::HeatEta, &node.id));
                    }
                }
            }
        }
        for link in &self.links {
            let key = |kind| SlotKey::link(kind, &link.from, &link.to);
            match &link.kind {
                LinkKind::TransmissionLine { .. } => {}
                LinkKind::GasPipe { .. } => slots.push(key(SymbolKind::GasFlow)),
                LinkKind::HeatPipe { .. } => {
                    slots.push(key(SymbolKind::MassFlow));
                    slots.push(key(SymbolKind::SupplyTemperature));
                    slots.push(key(SymbolKind::ReturnTemperature));
                }
                LinkKind::Dummy { carrier } => match carrier {
                    Carrier::Electricity => {
                        slots.push(key(SymbolKind::ActivePower));
                        slots.push(key(SymbolKind::ReactivePower));
                    }
                    Carrier::Gas => slots.push(key(SymbolKind::GasFlow)),
                    Carrier::Heat => {
                        slots.push(key(SymbolKind::MassFlow));
                        slots.push(key(SymbolKind::SupplyTemperature));
                        slots.push(key(SymbolKind::ReturnTemperature));
                        slots.push(key(SymbolKind::HeatPower));
                    }
                },
            }
        }
        VariableRegistry::new(slots)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn params(&self) -> &CarrierParams {
        &self.params
    }

    pub fn registry(&self) -> &VariableRegistry {
        &self.registry
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.node_index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn incident_links<'a>(&'a self, node_id: &'a str) -> impl Iterator<Item = &'a Link> + 'a {
        self.links
            .iter()
            .filter(move |l| l.from == node_id || l.to == node_id)
    }

    /// All coupling units with their attached dummy links resolved.
    pub fn coupling_units(&self) -> Vec<CouplingUnit> {
        let mut units = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let NodeKind::Coupling { kind, params } = &node.kind {
                let mut unit = CouplingUnit {
                    node: i,
                    kind: *kind,
                    params: *params,
                    electric_dummy: None,
                    gas_dummy: None,
                    heat_dummy: None,
                };
                for (j, l) in self.links.iter().enumerate() {
                    if let LinkKind::Dummy { carrier } = l.kind {
                        let attaches = match carrier {
                            Carrier::Electricity => l.to == node.id,
                            _ => l.from == node.id,
                        };
                        if attaches {
                            match carrier {
                                Carrier::Electricity => unit.electric_dummy = Some(j),
                                Carrier::Gas => unit.gas_dummy = Some(j),
                                Carrier::Heat => unit.heat_dummy = Some(j),
                            }
                        }
                    }
                }
                units.push(unit);
            }
        }
        units
    }

    /// Returns a copy with the fixed heat efficiency of the named coupling
    /// replaced (used by parameter sweeps).
    pub fn with_heat_eta(&self, coupling_id: &str, eta_h: f64) -> Result<Network, ModelError> {
        let mut out = self.clone();
        let idx = *out
            .node_index
            .get(coupling_id)
            .ok_or_else(|| ModelError::UnknownSlot(format!("eta_h@{coupling_id}")))?;
        match &mut out.nodes[idx].kind {
            NodeKind::Coupling {
                kind: CouplingKind::Electrolyser,
                params,
            } => match params.eta_h {
                HeatEfficiency::Fixed(_) => {
                    if !(0.0..=1.0).contains(&eta_h) {
                        return Err(ModelError::BadCoupling {
                            node: coupling_id.to_string(),
                            what: format!("heat efficiency eta_h = {eta_h} outside [0, 1]"),
                        });
                    }
                    params.eta_h = HeatEfficiency::Fixed(eta_h);
                }
                HeatEfficiency::Free => {
                    return Err(ModelError::BadCoupling {
                        node: coupling_id.to_string(),
                        what: "cannot sweep eta_h while it is a free unknown".into(),
                    })
                }
            },
            _ => {
                return Err(ModelError::BadCoupling {
                    node: coupling_id.to_string(),
                    what: "not an electrolyser coupling node".into(),
                })
            }
        }
        out.validate_couplings()?;
        Ok(out)
    }
}
