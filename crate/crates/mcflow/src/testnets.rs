//! Reference networks used by unit tests: the two-carrier power-to-gas case,
//! the single electrolyser, the electric boiler, and the electrolyser behind
//! physical links (line + pipes). Values mirror the shipped fixtures.

use crate::carrier::{gas_pipe_constant, heat_pipe_constant};
use crate::model::*;

/// Series conductance of the test line, siemens (0.03 p.u. on a 690 V /
/// 100 MVA base).
pub const LINE_G: f64 = 6.301_197_227_473_22;
/// Series susceptance of the test line, siemens (-0.3 p.u. on the same base).
pub const LINE_B: f64 = -63.011_972_274_732_2;
/// Boundary voltage magnitude at the load node: 690/sqrt(3) volts.
pub const LOAD_VOLTAGE: f64 = 398.371_685_740_841_8;

pub fn enode(id: &str) -> Node {
    Node {
        id: id.into(),
        kind: NodeKind::Carrier {
            carrier: Carrier::Electricity,
            terminal: Some(TerminalKind::Electric),
        },
    }
}

pub fn gnode(id: &str) -> Node {
    Node {
        id: id.into(),
        kind: NodeKind::Carrier {
            carrier: Carrier::Gas,
            terminal: Some(TerminalKind::Gas),
        },
    }
}

pub fn hnode(id: &str, terminal: TerminalKind) -> Node {
    Node {
        id: id.into(),
        kind: NodeKind::Carrier {
            carrier: Carrier::Heat,
            terminal: Some(terminal),
        },
    }
}

pub fn coupling_node(id: &str, kind: CouplingKind, eta_h: HeatEfficiency) -> Node {
    Node {
        id: id.into(),
        kind: NodeKind::Coupling {
            kind,
            params: CouplingParams {
                eta: 0.9,
                eta_h,
                hhv: 1.418e8,
            },
        },
    }
}

pub fn dummy(id: &str, from: &str, to: &str, carrier: Carrier) -> Link {
    Link {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        kind: LinkKind::Dummy { carrier },
    }
}

fn eta_h(free: bool) -> HeatEfficiency {
    if free {
        HeatEfficiency::Free
    } else {
        HeatEfficiency::Fixed(1.0 / 6.0)
    }
}

/// Electricity + gas + power-to-gas unit: registry of 6 slots, 4 equations.
pub fn two_carrier_p2g() -> Network {
    let nodes = vec![
        enode("0e"),
        gnode("0g"),
        coupling_node("0c", CouplingKind::PowerToGas, HeatEfficiency::Fixed(0.0)),
    ];
    let links = vec![
        dummy("dummy-e", "0e", "0c", Carrier::Electricity),
        dummy("dummy-g", "0c", "0g", Carrier::Gas),
    ];
    Network::build(nodes, links, CarrierParams::default()).unwrap()
}

/// Electricity + heat + electric boiler: 12 slots, 8 equations.
pub fn boiler() -> Network {
    let nodes = vec![
        enode("0e"),
        hnode("0h", TerminalKind::HeatFull),
        coupling_node(
            "0c",
            CouplingKind::ElectricBoiler,
            HeatEfficiency::Fixed(1.0),
        ),
    ];
    let links = vec![
        dummy("dummy-e", "0e", "0c", Carrier::Electricity),
        dummy("dummy-h", "0c", "0h", Carrier::Heat),
    ];
    Network::build(nodes, links, CarrierParams::default()).unwrap()
}

/// Three-carrier electrolyser: 14 slots (15 with free heat efficiency),
/// 10 equations.
pub fn electrolyser(free: bool) -> Network {
    let nodes = vec![
        enode("0e"),
        gnode("0g"),
        hnode("0h", TerminalKind::HeatFull),
        coupling_node("0c", CouplingKind::Electrolyser, eta_h(free)),
    ];
    let links = vec![
        dummy("dummy-e", "0e", "0c", Carrier::Electricity),
        dummy("dummy-g", "0c", "0g", Carrier::Gas),
        dummy("dummy-h", "0c", "0h", Carrier::Heat),
    ];
    Network::build(nodes, links, CarrierParams::default()).unwrap()
}

/// Electrolyser with no heat attachment: the residual-heat fraction must be
/// pinned to zero and the unit's equations coincide with power-to-gas.
pub fn degenerate_electrolyser_no_heat() -> Network {
    let nodes = vec![
        enode("0e"),
        gnode("0g"),
        coupling_node("0c", CouplingKind::Electrolyser, HeatEfficiency::Fixed(0.0)),
    ];
    let links = vec![
        dummy("dummy-e", "0e", "0c", Carrier::Electricity),
        dummy("dummy-g", "0c", "0g", Carrier::Gas),
    ];
    Network::build(nodes, links, CarrierParams::default()).unwrap()
}

/// Electrolyser with no gas attachment: the residual-heat fraction must be
/// pinned to one and the unit's equations coincide with the electric boiler.
pub fn degenerate_electrolyser_no_gas() -> Network {
    let nodes = vec![
        enode("0e"),
        hnode("0h", TerminalKind::HeatFull),
        coupling_node("0c", CouplingKind::Electrolyser, HeatEfficiency::Fixed(1.0)),
    ];
    let links = vec![
        dummy("dummy-e", "0e", "0c", Carrier::Electricity),
        dummy("dummy-h", "0c", "0h", Carrier::Heat),
    ];
    Network::build(nodes, links, CarrierParams::default()).unwrap()
}

/// Electrolyser behind physical links: junction nodes carry the coupling,
/// loads sit across a transmission line, a gas pipe and a heat pipe.
/// 30 slots (31 free), 18 equations.
pub fn linked_network(free: bool) -> Network {
    let params = CarrierParams::default();
    let nodes = vec![
        enode("0e"),
        enode("1e"),
        gnode("0g"),
        gnode("1g"),
        hnode("0h", TerminalKind::HeatMassOnly),
        hnode("1h", TerminalKind::HeatFull),
        coupling_node("0c", CouplingKind::Electrolyser, eta_h(free)),
    ];
    let links = vec![
        Link {
            id: "line".into(),
            from: "0e".into(),
            to: "1e".into(),
            kind: LinkKind::TransmissionLine {
                conductance: LINE_G,
                susceptance: LINE_B,
            },
        },
        Link {
            id: "pipe-g".into(),
            from: "0g".into(),
            to: "1g".into(),
            kind: LinkKind::GasPipe {
                pipe_constant: gas_pipe_constant(&params.gas, 500.0, 0.15).unwrap(),
                friction: 6.5e-3,
            },
        },
        Link {
            id: "pipe-h".into(),
            from: "0h".into(),
            to: "1h".into(),
            kind: LinkKind::HeatPipe {
                pipe_constant: heat_pipe_constant(&params.heat, 500.0, 0.15).unwrap(),
                friction: 6.5e-3,
                heat_transfer: 0.2,
                length: 500.0,
                diameter: 0.15,
            },
        },
        dummy("dummy-e", "0e", "0c", Carrier::Electricity),
        dummy("dummy-g", "0c", "0g", Carrier::Gas),
        dummy("dummy-h", "0c", "0h", Carrier::Heat),
    ];
    Network::build(nodes, links, params).unwrap()
}
