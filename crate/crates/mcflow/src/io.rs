//! JSON case documents, solution reports and parameter sweeps.
//!
//! A *case document* bundles a network description, boundary conditions
//! (either a named template with its values or an explicit slot list) and
//! solver settings. [`load_case`] turns a document into a ready-to-solve
//! [`LoadedCase`]; [`build_report`] turns a solve outcome back into rows that
//! [`format_table`], [`format_csv`] and [`format_json`] render.
//!
//! State is stored in SI units internally; reports and sweep outputs convert
//! to display units (MW, bar, V, rad, kg/s, K) as indicated by each row's
//! unit column. Boundary values in documents are either plain numbers (taken
//! as SI) or `"value unit"` strings checked against the slot's dimension.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carrier::{
    heat_pipe_constant, heat_pipe_temperature_out, line_power_flows, CarrierError, MIN_MASS_FLOW,
};
use crate::model::{
    Carrier, CarrierParams, CouplingKind, CouplingParams, HeatEfficiency, Link, LinkKind,
    ModelError, Network, Node, NodeKind, SlotId, SymbolKind, TerminalKind,
};
use crate::solver::{solve_network, InitialGuess, SolveOutcome, SolverConfig, SolverError};
use crate::system::assemble_system;
use crate::wellposedness::{
    BcTemplate, BoundaryConditionSet, Squareness, TemplateOptions, WellposednessError,
};

/// Version tag expected in `schema_version` of case documents.
pub const SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported schema version {0} (this build reads version {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("{context}: {message}")]
    Document { context: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Carrier(#[from] CarrierError),
    #[error(transparent)]
    Wellposedness(#[from] WellposednessError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("cannot serialise output: {0}")]
    Render(String),
}

fn doc_err(context: impl Into<String>, message: impl Into<String>) -> IoError {
    IoError::Document {
        context: context.into(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Document schema
// ---------------------------------------------------------------------------

/// Top-level case document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseDocument {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Carrier parameters; omitted fields fall back to the hydrogen/water
    /// defaults.
    #[serde(default)]
    pub parameters: CarrierParams,
    pub nodes: Vec<NodeDoc>,
    pub links: Vec<LinkDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_conditions: Option<BoundaryDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverDoc>,
}

/// One node: a single-carrier node (with an optional terminal) or a
/// conversion unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier: Option<Carrier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingDoc>,
}

/// Terminal marker: `true`/`false`, or for heat nodes `"full"` /
/// `"mass_only"` (`true` on a heat node means a full terminal).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TerminalDoc {
    Flag(bool),
    Kind(String),
}

/// Conversion unit on a coupling node.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingDoc {
    /// `"electrolyser"`, `"power_to_gas"` or `"electric_boiler"`.
    pub kind: String,
    /// Overall conversion efficiency η in (0, 1].
    pub eta: f64,
    /// Residual-heat fraction η_h: a number or `"free"`. Required for
    /// electrolysers, forbidden for the single-output units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_h: Option<EtaHDoc>,
    /// Higher heating value of the produced gas, J/kg; defaults to the gas
    /// carrier's value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hhv: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaHDoc {
    Value(f64),
    Keyword(String),
}

/// One link; exactly one of the payload fields must be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub id: String,
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<LineDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gas_pipe: Option<GasPipeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat_pipe: Option<HeatPipeDoc>,
    /// Lossless coupling attachment carrying the given carrier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dummy: Option<Carrier>,
}

/// AC line with series admittance in siemens.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineDoc {
    pub conductance: f64,
    pub susceptance: f64,
}

/// Gas pipe: give either the pipe constant directly or the geometry it is
/// reconstructed from, not both.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasPipeDoc {
    pub friction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipe_constant: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometryDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryDoc {
    pub length: f64,
    pub diameter: f64,
}

/// Heat pipe: geometry is always needed (for the temperature decay); the
/// hydraulic pipe constant may be overridden.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatPipeDoc {
    pub friction: f64,
    pub length: f64,
    pub diameter: f64,
    /// Heat transfer coefficient λ, W/(m·K).
    pub heat_transfer: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipe_constant: Option<f64>,
}

/// Boundary conditions: a template with its required values, or an explicit
/// slot list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<BTreeMap<String, Quantity>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<Vec<ExplicitBc>>,
    /// Move the gas/heat reference pressures to the junction-side nodes.
    #[serde(default)]
    pub reference_pressure_on_junctions: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitBc {
    pub slot: String,
    pub value: Quantity,
}

/// Solver settings override; omitted fields keep the defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverDoc {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub damping: Option<f64>,
    pub min_pivot: Option<f64>,
}

impl SolverDoc {
    pub fn to_config(&self) -> SolverConfig {
        let d = SolverConfig::default();
        SolverConfig {
            tol: self.tol.unwrap_or(d.tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            damping: self.damping.unwrap_or(d.damping),
            min_pivot: self.min_pivot.unwrap_or(d.min_pivot),
        }
    }
}

// ---------------------------------------------------------------------------
// Quantities
// ---------------------------------------------------------------------------

/// A boundary value: a bare number (SI) or a `"value unit"` string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Number(f64),
    WithUnit(String),
}

/// Physical dimension a slot kind accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dimension {
    Power,
    Pressure,
    Voltage,
    Angle,
    MassFlow,
    Temperature,
    Dimensionless,
}

fn dimension_of(kind: SymbolKind) -> Dimension {
    match kind {
        SymbolKind::ActivePower | SymbolKind::ReactivePower | SymbolKind::HeatPower => {
            Dimension::Power
        }
        SymbolKind::Pressure => Dimension::Pressure,
        SymbolKind::VoltageMagnitude => Dimension::Voltage,
        SymbolKind::VoltageAngle => Dimension::Angle,
        SymbolKind::GasFlow | SymbolKind::MassFlow => Dimension::MassFlow,
        SymbolKind::SupplyTemperature | SymbolKind::ReturnTemperature => Dimension::Temperature,
        SymbolKind::HeatEta => Dimension::Dimensionless,
    }
}

/// SI scale of a unit spelling within a dimension.
fn unit_scale(dim: Dimension, unit: &str) -> Option<f64> {
    let table: &[(&str, f64)] = match dim {
        Dimension::Power => &[("W", 1.0), ("kW", 1e3), ("MW", 1e6)],
        Dimension::Pressure => &[("Pa", 1.0), ("kPa", 1e3), ("bar", 1e5)],
        Dimension::Voltage => &[("V", 1.0), ("kV", 1e3)],
        Dimension::Angle => &[("rad", 1.0)],
        Dimension::MassFlow => &[("kg/s", 1.0)],
        Dimension::Temperature => &[("K", 1.0)],
        Dimension::Dimensionless => &[],
    };
    table.iter().find(|(u, _)| *u == unit).map(|(_, s)| *s)
}

impl Quantity {
    /// Resolves to an SI value for a slot of the given kind.
    pub fn resolve(&self, kind: SymbolKind, context: &str) -> Result<f64, IoError> {
        match self {
            Quantity::Number(v) => Ok(*v),
            Quantity::WithUnit(text) => {
                let mut parts = text.split_whitespace();
                let (num, unit) = match (parts.next(), parts.next(), parts.next()) {
                    (Some(num), Some(unit), None) => (num, unit),
                    _ => {
                        return Err(doc_err(
                            context,
                            format!("expected \"<number> <unit>\", got {text:?}"),
                        ))
                    }
                };
                let value: f64 = num
                    .parse()
                    .map_err(|_| doc_err(context, format!("{num:?} is not a number")))?;
                let dim = dimension_of(kind);
                if dim == Dimension::Dimensionless {
                    return Err(doc_err(
                        context,
                        format!("{} takes a bare number, not a unit", kind.token()),
                    ));
                }
                let scale = unit_scale(dim, unit).ok_or_else(|| {
                    doc_err(
                        context,
                        format!("unit {unit:?} does not fit a {} slot", kind.token()),
                    )
                })?;
                Ok(value * scale)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

/// A case document resolved into model objects.
#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub network: Network,
    pub boundary: BoundaryConditionSet,
    pub solver: SolverConfig,
    pub description: Option<String>,
}

/// Parses a document from JSON text.
pub fn parse_document(text: &str) -> Result<CaseDocument, IoError> {
    let doc: CaseDocument = serde_json::from_str(text).map_err(|e| IoError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(IoError::SchemaVersion(doc.schema_version));
    }
    Ok(doc)
}

/// Parses and resolves a case from JSON text.
pub fn load_case(text: &str) -> Result<LoadedCase, IoError> {
    let doc = parse_document(text)?;
    let network = build_network(&doc)?;
    let boundary = build_boundary(&doc, &network)?;
    let solver = doc.solver.unwrap_or_default().to_config();
    Ok(LoadedCase {
        network,
        boundary,
        solver,
        description: doc.description,
    })
}

/// Reads and resolves a case from a file.
pub fn load_case_from_path(path: &Path) -> Result<LoadedCase, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    load_case(&text)
}

fn node_from_doc(doc: &NodeDoc) -> Result<Node, IoError> {
    let ctx = format!("node {}", doc.id);
    let kind = match (&doc.carrier, &doc.coupling) {
        (Some(carrier), None) => {
            let terminal = match &doc.terminal {
                None | Some(TerminalDoc::Flag(false)) => None,
                Some(TerminalDoc::Flag(true)) => Some(match carrier {
                    Carrier::Electricity => TerminalKind::Electric,
                    Carrier::Gas => TerminalKind::Gas,
                    Carrier::Heat => TerminalKind::HeatFull,
                }),
                Some(TerminalDoc::Kind(kind)) => match (carrier, kind.as_str()) {
                    (Carrier::Heat, "full") => Some(TerminalKind::HeatFull),
                    (Carrier::Heat, "mass_only") => Some(TerminalKind::HeatMassOnly),
                    (_, other) => {
                        return Err(doc_err(
                            ctx,
                            format!(
                                "terminal {other:?} is not valid on a {carrier} node \
                                 (use true/false, or \"full\"/\"mass_only\" on heat nodes)"
                            ),
                        ))
                    }
                },
            };
            NodeKind::Carrier {
                carrier: *carrier,
                terminal,
            }
        }
        (None, Some(coupling)) => {
            if doc.terminal.is_some() {
                return Err(doc_err(ctx, "coupling nodes take no terminal"));
            }
            coupling_kind_from_doc(coupling, &ctx)?
        }
        (Some(_), Some(_)) => {
            return Err(doc_err(ctx, "give either carrier or coupling, not both"));
        }
        (None, None) => {
            return Err(doc_err(ctx, "give either carrier or coupling"));
        }
    };
    Ok(Node {
        id: doc.id.clone(),
        kind,
    })
}

fn coupling_kind_from_doc(doc: &CouplingDoc, ctx: &str) -> Result<NodeKind, IoError> {
    let kind = match doc.kind.as_str() {
        "electrolyser" => CouplingKind::Electrolyser,
        "power_to_gas" => CouplingKind::PowerToGas,
        "electric_boiler" => CouplingKind::ElectricBoiler,
        other => {
            return Err(doc_err(
                ctx,
                format!(
                    "unknown coupling kind {other:?} (expected electrolyser, \
                     power_to_gas or electric_boiler)"
                ),
            ))
        }
    };
    let eta_h = match (kind, &doc.eta_h) {
        (CouplingKind::Electrolyser, Some(EtaHDoc::Value(v))) => HeatEfficiency::Fixed(*v),
        (CouplingKind::Electrolyser, Some(EtaHDoc::Keyword(word))) if word == "free" => {
            HeatEfficiency::Free
        }
        (CouplingKind::Electrolyser, Some(EtaHDoc::Keyword(word))) => {
            return Err(doc_err(
                ctx,
                format!("eta_h must be a number or \"free\", got {word:?}"),
            ))
        }
        (CouplingKind::Electrolyser, None) => {
            return Err(doc_err(
                ctx,
                "an electrolyser needs eta_h (number or \"free\")",
            ))
        }
        (CouplingKind::PowerToGas, None) => HeatEfficiency::Fixed(0.0),
        (CouplingKind::ElectricBoiler, None) => HeatEfficiency::Fixed(1.0),
        (_, Some(_)) => {
            return Err(doc_err(
                ctx,
                format!(
                    "{} units take no eta_h (their split is structural)",
                    doc.kind
                ),
            ))
        }
    };
    // A placeholder the builder replaces with the gas carrier's value.
    let hhv = doc.hhv.unwrap_or(f64::NAN);
    Ok(NodeKind::Coupling {
        kind,
        params: CouplingParams {
            eta: doc.eta,
            eta_h,
            hhv,
        },
    })
}

fn link_from_doc(doc: &LinkDoc, params: &CarrierParams) -> Result<Link, IoError> {
    let ctx = format!("link {}", doc.id);
    let payloads = [
        doc.line.is_some(),
        doc.gas_pipe.is_some(),
        doc.heat_pipe.is_some(),
        doc.dummy.is_some(),
    ]
    .iter()
    .filter(|p| **p)
    .count();
    if payloads != 1 {
        return Err(doc_err(
            ctx,
            "give exactly one of line, gas_pipe, heat_pipe or dummy",
        ));
    }
    let kind = if let Some(line) = &doc.line {
        LinkKind::TransmissionLine {
            conductance: line.conductance,
            susceptance: line.susceptance,
        }
    } else if let Some(pipe) = &doc.gas_pipe {
        let pipe_constant = match (&pipe.pipe_constant, &pipe.geometry) {
            (Some(c), None) => *c,
            (None, Some(geo)) => gas_pipe_constant_from(params, geo)?,
            (Some(_), Some(_)) => {
                return Err(doc_err(ctx, "give pipe_constant or geometry, not both"))
            }
            (None, None) => return Err(doc_err(ctx, "give pipe_constant or geometry")),
        };
        LinkKind::GasPipe {
            pipe_constant,
            friction: pipe.friction,
        }
    } else if let Some(pipe) = &doc.heat_pipe {
        let pipe_constant = match pipe.pipe_constant {
            Some(c) => c,
            None => heat_pipe_constant(&params.heat, pipe.length, pipe.diameter)?,
        };
        LinkKind::HeatPipe {
            pipe_constant,
            friction: pipe.friction,
            heat_transfer: pipe.heat_transfer,
            length: pipe.length,
            diameter: pipe.diameter,
        }
    } else {
        LinkKind::Dummy {
            carrier: doc.dummy.expect("payload count checked"),
        }
    };
    Ok(Link {
        id: doc.id.clone(),
        from: doc.from.clone(),
        to: doc.to.clone(),
        kind,
    })
}

fn gas_pipe_constant_from(params: &CarrierParams, geo: &GeometryDoc) -> Result<f64, IoError> {
    Ok(crate::carrier::gas_pipe_constant(
        &params.gas,
        geo.length,
        geo.diameter,
    )?)
}

/// Builds the network described by a document.
pub fn build_network(doc: &CaseDocument) -> Result<Network, IoError> {
    let nodes = doc
        .nodes
        .iter()
        .map(node_from_doc)
        .collect::<Result<Vec<_>, _>>()?;
    let links = doc
        .links
        .iter()
        .map(|l| link_from_doc(l, &doc.parameters))
        .collect::<Result<Vec<_>, _>>()?;
    // Units without an explicit heating value take the gas carrier's.
    let nodes = nodes
        .into_iter()
        .map(|mut n| {
            if let NodeKind::Coupling { params, .. } = &mut n.kind {
                if params.hhv.is_nan() {
                    params.hhv = doc.parameters.gas.hhv;
                }
            }
            n
        })
        .collect();
    Ok(Network::build(nodes, links, doc.parameters)?)
}

/// Resolves the document's boundary conditions against a built network.
pub fn build_boundary(doc: &CaseDocument, net: &Network) -> Result<BoundaryConditionSet, IoError> {
    let Some(bdoc) = &doc.boundary_conditions else {
        return Ok(BoundaryConditionSet::new());
    };
    match (&bdoc.template, &bdoc.explicit) {
        (Some(_), Some(_)) => Err(doc_err(
            "boundary_conditions",
            "give template or explicit, not both",
        )),
        (Some(name), None) => {
            let template = BcTemplate::parse(name).ok_or_else(|| {
                doc_err("boundary_conditions", format!("unknown template {name:?}"))
            })?;
            let mut resolved = HashMap::new();
            if let Some(values) = &bdoc.values {
                for (path, quantity) in values {
                    let kind = crate::model::SlotKey::parse(path)?.kind;
                    let ctx = format!("boundary value {path}");
                    resolved.insert(path.clone(), quantity.resolve(kind, &ctx)?);
                }
            }
            let opts = TemplateOptions {
                reference_pressure_on_junctions: bdoc.reference_pressure_on_junctions,
            };
            Ok(template.apply(net, &resolved, opts)?)
        }
        (None, Some(entries)) => {
            if bdoc.values.is_some() {
                return Err(doc_err(
                    "boundary_conditions",
                    "values go with a template; explicit entries carry their own",
                ));
            }
            let mut bcs = BoundaryConditionSet::new();
            for entry in entries {
                let key = crate::model::SlotKey::parse(&entry.slot)?;
                let slot = net.registry().lookup(&key)?;
                let ctx = format!("boundary value {}", entry.slot);
                bcs.insert(slot, entry.value.resolve(key.kind, &ctx)?)?;
            }
            Ok(bcs)
        }
        (None, None) => {
            if bdoc.values.is_some() {
                return Err(doc_err(
                    "boundary_conditions",
                    "values need a template naming the slots they fill",
                ));
            }
            Ok(BoundaryConditionSet::new())
        }
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Display scale applied to an SI value of the given kind.
fn display_scale(kind: SymbolKind) -> f64 {
    match kind {
        SymbolKind::ActivePower | SymbolKind::ReactivePower | SymbolKind::HeatPower => 1e-6,
        SymbolKind::Pressure => 1e-5,
        _ => 1.0,
    }
}

/// One state row of a solution report (value in the display unit).
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub slot: String,
    pub symbol: &'static str,
    pub value: f64,
    pub unit: &'static str,
    pub boundary: bool,
}

/// One derived row: a substituted quantity reconstructed from the state.
#[derive(Debug, Clone, Serialize)]
pub struct DerivedRow {
    pub quantity: String,
    pub location: String,
    pub value: f64,
    pub unit: &'static str,
}

/// Renderable summary of one solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolutionReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub status: String,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_residual: Option<f64>,
    pub equations: usize,
    pub unknowns: usize,
    pub prescribed: usize,
    pub squareness: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_probe: Option<String>,
    pub rows: Vec<ReportRow>,
    pub derived: Vec<DerivedRow>,
}

fn squareness_text(s: &Squareness) -> String {
    match s {
        Squareness::Square => "square".into(),
        Squareness::Underdetermined(k) => format!("underdetermined by {k}"),
        Squareness::Overdetermined(k) => format!("overdetermined by {k}"),
    }
}

/// Builds the report for a solve outcome.
pub fn build_report(
    net: &Network,
    bcs: &BoundaryConditionSet,
    outcome: &SolveOutcome,
    description: Option<&str>,
) -> SolutionReport {
    let (status, converged, iterations, final_residual) = match &outcome.result {
        Some(result) => (
            result.status.to_string(),
            result.status.is_converged(),
            result.iterations,
            result.residual_history.last().copied(),
        ),
        None => ("not solvable as posed".to_string(), false, 0, None),
    };
    let mut rows = Vec::new();
    let mut derived = Vec::new();
    if let Some(result) = &outcome.result {
        let reg = net.registry();
        for (slot, key) in reg.iter() {
            rows.push(ReportRow {
                slot: key.to_string(),
                symbol: key.kind.token(),
                value: result.state[slot] * display_scale(key.kind),
                unit: key.kind.display_unit(),
                boundary: bcs.contains(slot),
            });
        }
        derived = derived_rows(net, result.state.as_slice());
    }
    SolutionReport {
        description: description.map(|s| s.to_string()),
        status,
        converged,
        iterations,
        final_residual,
        equations: outcome.dofs.equations,
        unknowns: outcome.dofs.unknowns,
        prescribed: bcs.len(),
        squareness: squareness_text(&outcome.squareness),
        start_probe: outcome.probe.as_ref().map(|p| {
            if p.is_singular() {
                format!(
                    "singular at the starting point (condition estimate {:.3e})",
                    p.condition_estimate()
                )
            } else {
                format!(
                    "nonsingular at the starting point (condition estimate {:.3e})",
                    p.condition_estimate()
                )
            }
        }),
        rows,
        derived,
    }
}

/// Reconstructs substituted quantities: line-end powers and losses, pipe
/// pressure drops, temperature decay along heat pipes.
fn derived_rows(net: &Network, state: &[f64]) -> Vec<DerivedRow> {
    let reg = net.registry();
    let value =
        |key: &crate::model::SlotKey| -> Option<f64> { reg.lookup(key).ok().map(|id| state[id]) };
    let node_val = |kind, node: &str| value(&crate::model::SlotKey::node(kind, node));
    let link_val = |kind, from: &str, to: &str| value(&crate::model::SlotKey::link(kind, from, to));
    let mut rows = Vec::new();
    let params = net.params();
    for link in net.links() {
        let loc = format!("{}-{}", link.from, link.to);
        match &link.kind {
            LinkKind::TransmissionLine {
                conductance,
                susceptance,
            } => {
                let (Some(vi), Some(di), Some(vj), Some(dj)) = (
                    node_val(SymbolKind::VoltageMagnitude, &link.from),
                    node_val(SymbolKind::VoltageAngle, &link.from),
                    node_val(SymbolKind::VoltageMagnitude, &link.to),
                    node_val(SymbolKind::VoltageAngle, &link.to),
                ) else {
                    continue;
                };
                let flows = line_power_flows(vi, di, vj, dj, *conductance, *susceptance);
                for (name, val) in [
                    ("P into line (from end)", flows.p_send),
                    ("Q into line (from end)", flows.q_send),
                    ("P into line (to end)", flows.p_recv),
                    ("Q into line (to end)", flows.q_recv),
                    ("line loss", flows.p_send + flows.p_recv),
                ] {
                    rows.push(DerivedRow {
                        quantity: name.to_string(),
                        location: loc.clone(),
                        value: val * 1e-6,
                        unit: "MW",
                    });
                }
            }
            LinkKind::GasPipe { .. } => {
                let (Some(pi), Some(pj)) = (
                    node_val(SymbolKind::Pressure, &link.from),
                    node_val(SymbolKind::Pressure, &link.to),
                ) else {
                    continue;
                };
                rows.push(DerivedRow {
                    quantity: "pressure drop".to_string(),
                    location: loc,
                    value: (pi - pj) * 1e-5,
                    unit: "bar",
                });
            }
            LinkKind::HeatPipe {
                heat_transfer,
                length,
                ..
            } => {
                if let (Some(pi), Some(pj)) = (
                    node_val(SymbolKind::Pressure, &link.from),
                    node_val(SymbolKind::Pressure, &link.to),
                ) {
                    rows.push(DerivedRow {
                        quantity: "pressure drop".to_string(),
                        location: loc.clone(),
                        value: (pi - pj) * 1e-5,
                        unit: "bar",
                    });
                }
                let m = link_val(SymbolKind::MassFlow, &link.from, &link.to);
                let ts = link_val(SymbolKind::SupplyTemperature, &link.from, &link.to);
                let tr = link_val(SymbolKind::ReturnTemperature, &link.from, &link.to);
                if let (Some(m), Some(ts), Some(tr)) = (m, ts, tr) {
                    if m > MIN_MASS_FLOW {
                        let cp = params.heat.specific_heat;
                        let ta = params.heat.ambient_temperature;
                        for (name, t_in) in [
                            ("supply temperature loss", ts),
                            ("return temperature loss", tr),
                        ] {
                            if let Ok(t_out) =
                                heat_pipe_temperature_out(t_in, m, *heat_transfer, *length, cp, ta)
                            {
                                rows.push(DerivedRow {
                                    quantity: name.to_string(),
                                    location: loc.clone(),
                                    value: t_in - t_out,
                                    unit: "K",
                                });
                            }
                        }
                    }
                }
            }
            LinkKind::Dummy { .. } => {}
        }
    }
    rows
}

/// Output rendering formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Table,
    Csv,
    Json,
}

impl OutputFormat {
    pub fn parse(name: &str) -> Option<OutputFormat> {
        match name {
            "table" => Some(OutputFormat::Table),
            "csv" => Some(OutputFormat::Csv),
            "json" => Some(OutputFormat::Json),
            _ => None,
        }
    }
}

/// Renders a report in the requested format.
pub fn render_report(report: &SolutionReport, format: OutputFormat) -> Result<String, IoError> {
    match format {
        OutputFormat::Table => Ok(format_table(report)),
        OutputFormat::Csv => format_csv(report),
        OutputFormat::Json => format_json(report),
    }
}

/// Formats a value with a fixed number of significant digits, trimming noise.
fn fmt_sig(v: f64, sig: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-4..1e9).contains(&a) {
        let magnitude = a.log10().floor() as i64 + 1;
        let decimals = (sig as i64 - magnitude).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.prec$e}", prec = sig - 1)
    }
}

/// Plain-text table for terminals.
pub fn format_table(report: &SolutionReport) -> String {
    let mut out = String::new();
    if let Some(desc) = &report.description {
        out.push_str(desc);
        out.push('\n');
    }
    out.push_str(&format!(
        "system: {} equations, {} unknowns, {} prescribed ({})\n",
        report.equations, report.unknowns, report.prescribed, report.squareness
    ));
    if let Some(probe) = &report.start_probe {
        out.push_str(&format!("starting point: {probe}\n"));
    }
    out.push_str(&format!(
        "status: {} after {} iterations",
        report.status, report.iterations
    ));
    if let Some(r) = report.final_residual {
        out.push_str(&format!(" (residual norm {r:.3e})"));
    }
    out.push('\n');
    if !report.rows.is_empty() {
        out.push_str("\nstate (* = prescribed):\n");
        let width = report.rows.iter().map(|r| r.slot.len()).max().unwrap_or(0);
        for row in &report.rows {
            out.push_str(&format!(
                "  {mark} {slot:<width$}  {value:>18} {unit}\n",
                mark = if row.boundary { "*" } else { " " },
                slot = row.slot,
                value = fmt_sig(row.value, 9),
                unit = row.unit,
            ));
        }
    }
    if !report.derived.is_empty() {
        out.push_str("\nderived quantities:\n");
        let width = report
            .derived
            .iter()
            .map(|r| r.quantity.len())
            .max()
            .unwrap_or(0);
        for row in &report.derived {
            out.push_str(&format!(
                "    {q:<width$}  {loc:<12}  {value:>18} {unit}\n",
                q = row.quantity,
                loc = row.location,
                value = fmt_sig(row.value, 9),
                unit = row.unit,
            ));
        }
    }
    out
}

/// CSV with one record per state/derived row, 12 significant digits.
pub fn format_csv(report: &SolutionReport) -> Result<String, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let write = |w: &mut csv::Writer<Vec<u8>>, rec: &[String]| -> Result<(), IoError> {
        w.write_record(rec)
            .map_err(|e| IoError::Render(e.to_string()))
    };
    write(
        &mut w,
        &[
            "row".into(),
            "name".into(),
            "location".into(),
            "value".into(),
            "unit".into(),
            "prescribed".into(),
        ],
    )?;
    for row in &report.rows {
        write(
            &mut w,
            &[
                "state".into(),
                row.slot.clone(),
                String::new(),
                format!("{:.11e}", row.value),
                row.unit.into(),
                if row.boundary {
                    "yes".into()
                } else {
                    "no".into()
                },
            ],
        )?;
    }
    for row in &report.derived {
        write(
            &mut w,
            &[
                "derived".into(),
                row.quantity.clone(),
                row.location.clone(),
                format!("{:.11e}", row.value),
                row.unit.into(),
                String::new(),
            ],
        )?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Render(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| IoError::Render(e.to_string()))
}

/// Pretty-printed JSON of the whole report.
pub fn format_json(report: &SolutionReport) -> Result<String, IoError> {
    serde_json::to_string_pretty(report).map_err(|e| IoError::Render(e.to_string()))
}

/// Summary of a validation run (no Newton iteration).
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub nodes: usize,
    pub links: usize,
    pub coupling_units: usize,
    pub equations: usize,
    pub unknowns: usize,
    pub prescribed: usize,
    pub squareness: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_probe: Option<String>,
    /// Square and nonsingular at the starting point.
    pub well_posed: bool,
}

/// Checks degree-of-freedom bookkeeping and probes the starting point.
pub fn validate_case(case: &LoadedCase) -> Result<ValidationReport, IoError> {
    let net = &case.network;
    let sys = assemble_system(net, &case.boundary).map_err(SolverError::from)?;
    let (eq, free) = (sys.n_equations(), sys.n_free());
    let squareness = if eq == free {
        Squareness::Square
    } else if free > eq {
        Squareness::Underdetermined(free - eq)
    } else {
        Squareness::Overdetermined(eq - free)
    };
    let mut probe_text = None;
    let mut well_posed = false;
    if squareness == Squareness::Square {
        let x0 = crate::solver::default_initial_guess(net, &case.boundary);
        let verdict = crate::wellposedness::jacobian_rank_probe(net, &case.boundary, &x0)?;
        well_posed = !verdict.is_singular();
        probe_text = Some(if verdict.is_singular() {
            format!(
                "singular at the starting point (condition estimate {:.3e})",
                verdict.condition_estimate()
            )
        } else {
            format!(
                "nonsingular at the starting point (condition estimate {:.3e})",
                verdict.condition_estimate()
            )
        });
    }
    Ok(ValidationReport {
        description: case.description.clone(),
        nodes: net.nodes().len(),
        links: net.links().len(),
        coupling_units: net.coupling_units().len(),
        equations: sys.n_equations(),
        unknowns: sys.n_slots(),
        prescribed: case.boundary.len(),
        squareness: squareness_text(&squareness),
        start_probe: probe_text,
        well_posed,
    })
}

/// Renders a validation report.
pub fn render_validation(
    report: &ValidationReport,
    format: OutputFormat,
) -> Result<String, IoError> {
    match format {
        OutputFormat::Json => {
            serde_json::to_string_pretty(report).map_err(|e| IoError::Render(e.to_string()))
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["field", "value"])
                .map_err(|e| IoError::Render(e.to_string()))?;
            let pairs = [
                ("nodes", report.nodes.to_string()),
                ("links", report.links.to_string()),
                ("coupling_units", report.coupling_units.to_string()),
                ("equations", report.equations.to_string()),
                ("unknowns", report.unknowns.to_string()),
                ("prescribed", report.prescribed.to_string()),
                ("squareness", report.squareness.clone()),
                (
                    "start_probe",
                    report.start_probe.clone().unwrap_or_default(),
                ),
                ("well_posed", report.well_posed.to_string()),
            ];
            for (k, v) in pairs {
                w.write_record([k, v.as_str()])
                    .map_err(|e| IoError::Render(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| IoError::Render(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| IoError::Render(e.to_string()))
        }
        OutputFormat::Table => {
            let mut out = String::new();
            if let Some(desc) = &report.description {
                out.push_str(desc);
                out.push('\n');
            }
            out.push_str(&format!(
                "graph: {} nodes, {} links, {} coupling unit(s)\n",
                report.nodes, report.links, report.coupling_units
            ));
            out.push_str(&format!(
                "system: {} equations, {} unknowns, {} prescribed ({})\n",
                report.equations, report.unknowns, report.prescribed, report.squareness
            ));
            if let Some(probe) = &report.start_probe {
                out.push_str(&format!("starting point: {probe}\n"));
            }
            out.push_str(&format!(
                "well-posed: {}\n",
                if report.well_posed { "yes" } else { "no" }
            ));
            Ok(out)
        }
    }
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// What a sweep varies per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepParam {
    /// Replace (or add) the boundary value of a slot, given by its path.
    BoundarySlot(String),
    /// Vary the fixed residual-heat fraction of the unit on the named
    /// coupling node.
    HeatEta(String),
}

impl SweepParam {
    /// `eta_h@<node>` selects the unit parameter when the network has no
    /// such slot (fixed-fraction mode); every other path is a boundary slot.
    pub fn resolve(net: &Network, text: &str) -> Result<SweepParam, IoError> {
        let key = crate::model::SlotKey::parse(text)?;
        if net.registry().lookup(&key).is_ok() {
            return Ok(SweepParam::BoundarySlot(text.to_string()));
        }
        if key.kind == SymbolKind::HeatEta {
            if let crate::model::SlotOwner::Node(node) = &key.owner {
                if net.node(node).map(|n| n.is_coupling()).unwrap_or(false) {
                    return Ok(SweepParam::HeatEta(node.clone()));
                }
            }
        }
        Err(doc_err(
            "sweep parameter",
            format!("{text} names neither a state slot nor a unit's fixed eta_h"),
        ))
    }
}

/// One solved (or failed) sweep sample.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub status: String,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    /// Full state in display units, aligned with the parent's `columns`;
    /// absent when the sample was not solvable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<Vec<f64>>,
}

/// All samples of one sweep, in input order.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub parameter: String,
    pub columns: Vec<String>,
    pub units: Vec<&'static str>,
    pub rows: Vec<SweepRow>,
}

fn sweep_sample(
    net: &Network,
    bcs: &BoundaryConditionSet,
    cfg: &SolverConfig,
    param: &SweepParam,
    value: f64,
) -> Result<SweepRow, IoError> {
    let solved;
    match param {
        SweepParam::BoundarySlot(path) => {
            let slot = net.registry().lookup_path(path)?;
            let mut bcs = bcs.clone();
            bcs.set(slot, value)?;
            solved = solve_network(net, &bcs, cfg, None)?;
        }
        SweepParam::HeatEta(node) => {
            let net = net.with_heat_eta(node, value)?;
            solved = solve_network(&net, bcs, cfg, None)?;
        }
    }
    Ok(match solved.result {
        Some(result) => SweepRow {
            value,
            status: result.status.to_string(),
            converged: result.status.is_converged(),
            iterations: result.iterations,
            residual: result.residual_history.last().copied(),
            state: Some(result.state.iter().copied().collect()),
        },
        None => SweepRow {
            value,
            status: format!(
                "not solvable as posed ({})",
                squareness_text(&solved.squareness)
            ),
            converged: false,
            iterations: 0,
            residual: None,
            state: None,
        },
    })
}

fn sweep_columns(net: &Network) -> (Vec<String>, Vec<&'static str>, Vec<f64>) {
    let reg = net.registry();
    let mut columns = Vec::with_capacity(reg.len());
    let mut units = Vec::with_capacity(reg.len());
    let mut scales = Vec::with_capacity(reg.len());
    for (_, key) in reg.iter() {
        columns.push(key.to_string());
        units.push(key.kind.display_unit());
        scales.push(display_scale(key.kind));
    }
    (columns, units, scales)
}

fn finish_sweep(net: &Network, param_text: &str, mut rows: Vec<SweepRow>) -> SweepResult {
    let (columns, units, scales) = sweep_columns(net);
    for row in &mut rows {
        if let Some(state) = &mut row.state {
            for (v, s) in state.iter_mut().zip(&scales) {
                *v *= s;
            }
        }
    }
    SweepResult {
        parameter: param_text.to_string(),
        columns,
        units,
        rows,
    }
}

/// Solves the case once per parameter value, sequentially.
pub fn run_sweep_seq(
    net: &Network,
    bcs: &BoundaryConditionSet,
    cfg: &SolverConfig,
    param_text: &str,
    values: &[f64],
) -> Result<SweepResult, IoError> {
    let param = SweepParam::resolve(net, param_text)?;
    let rows = values
        .iter()
        .map(|v| sweep_sample(net, bcs, cfg, &param, *v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(finish_sweep(net, param_text, rows))
}

/// Solves the case once per parameter value. Samples are independent and run
/// on the rayon thread pool when the `parallel` feature is on; row order
/// always follows the input values.
#[cfg(feature = "parallel")]
pub fn run_sweep(
    net: &Network,
    bcs: &BoundaryConditionSet,
    cfg: &SolverConfig,
    param_text: &str,
    values: &[f64],
) -> Result<SweepResult, IoError> {
    let param = SweepParam::resolve(net, param_text)?;
    let rows = values
        .par_iter()
        .map(|v| sweep_sample(net, bcs, cfg, &param, *v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(finish_sweep(net, param_text, rows))
}

/// Sequential stand-in used when the `parallel` feature is off.
#[cfg(not(feature = "parallel"))]
pub fn run_sweep(
    net: &Network,
    bcs: &BoundaryConditionSet,
    cfg: &SolverConfig,
    param_text: &str,
    values: &[f64],
) -> Result<SweepResult, IoError> {
    run_sweep_seq(net, bcs, cfg, param_text, values)
}

/// CSV with one record per sample; state columns use display units.
pub fn sweep_to_csv(sweep: &SweepResult) -> Result<String, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        sweep.parameter.clone(),
        "status".to_string(),
        "iterations".to_string(),
        "residual".to_string(),
    ];
    header.extend(
        sweep
            .columns
            .iter()
            .zip(&sweep.units)
            .map(|(c, u)| format!("{c} [{u}]")),
    );
    w.write_record(&header)
        .map_err(|e| IoError::Render(e.to_string()))?;
    for row in &sweep.rows {
        let mut rec = vec![
            format!("{:.11e}", row.value),
            row.status.clone(),
            row.iterations.to_string(),
            row.residual.map(|r| format!("{r:.3e}")).unwrap_or_default(),
        ];
        match &row.state {
            Some(state) => rec.extend(state.iter().map(|v| format!("{v:.11e}"))),
            None => rec.extend(std::iter::repeat(String::new()).take(sweep.columns.len())),
        }
        w.write_record(&rec)
            .map_err(|e| IoError::Render(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Render(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| IoError::Render(e.to_string()))
}

/// Pretty-printed JSON of the whole sweep.
pub fn sweep_to_json(sweep: &SweepResult) -> Result<String, IoError> {
    serde_json::to_string_pretty(sweep).map_err(|e| IoError::Render(e.to_string()))
}

/// Evenly spaced sample values, inclusive of both ends.
pub fn linspace(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..steps)
            .map(|i| from + (to - from) * (i as f64) / ((steps - 1) as f64))
            .collect(),
    }
}

/// Applies `overrides` (slot path → SI value) on top of the default starting
/// point.
pub fn guess_with_overrides(
    net: &Network,
    bcs: &BoundaryConditionSet,
    overrides: &BTreeMap<String, f64>,
) -> Result<InitialGuess, IoError> {
    let mut x0 = crate::solver::default_initial_guess(net, bcs);
    for (path, value) in overrides {
        let slot: SlotId = net.registry().lookup_path(path)?;
        x0[slot] = *value;
    }
    Ok(InitialGuess::user(x0))
}
