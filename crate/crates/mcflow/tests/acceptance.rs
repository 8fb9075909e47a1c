//! Acceptance gate: one test per criterion, each printing a single
//! `acceptance criterion N (<label>): PASS|FAIL` line before asserting.
//!
//! Published reference values are pinned with their stated tolerances; the
//! structural checks (counts, squareness verdicts, probe singularities) are
//! exact.

use std::time::Instant;

use mcflow::carrier::{heat_pipe_temperature_out, line_power_flows, terminal_heat_power_residual};
use mcflow::fixtures;
use mcflow::io::load_case;
use mcflow::model::{
    Carrier, CarrierParams, CouplingKind, CouplingParams, HeatEfficiency, Link, LinkKind, Network,
    Node, NodeKind, SymbolKind, TerminalKind,
};
use mcflow::solver::{
    compare_jacobians, default_initial_guess, finite_difference_jacobian, solve_network,
    InitialGuess, SolverConfig,
};
use mcflow::system::{assemble_system, DomainPolicy};
use mcflow::wellposedness::{
    at_rest_probe, check_square, count_dofs, jacobian_rank_probe, zero_mass_flow_probe,
    BoundaryConditionSet, Squareness,
};
use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Collects sub-check failures for one criterion and prints its verdict.
struct Criterion {
    n: usize,
    label: &'static str,
    failures: Vec<String>,
}

impl Criterion {
    fn new(n: usize, label: &'static str) -> Criterion {
        Criterion {
            n,
            label,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(detail());
        }
    }

    fn finish(self) {
        let verdict = if self.failures.is_empty() {
            "PASS"
        } else {
            "FAIL"
        };
        println!(
            "acceptance criterion {} ({}): {verdict}",
            self.n, self.label
        );
        assert!(
            self.failures.is_empty(),
            "criterion {} ({}) failed:\n  {}",
            self.n,
            self.label,
            self.failures.join("\n  ")
        );
    }
}

fn rel_err(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs()
}

fn load_network(name: &str) -> (Network, BoundaryConditionSet, SolverConfig) {
    let fixture = fixtures::by_name(name).unwrap_or_else(|| panic!("no fixture {name}"));
    let case = load_case(fixture.json).unwrap_or_else(|e| panic!("{name} load: {e}"));
    (case.network, case.boundary, case.solver)
}

fn solved_state(name: &str) -> (Network, BoundaryConditionSet, DVector<f64>, usize, f64) {
    let (net, bcs, cfg) = load_network(name);
    let outcome = solve_network(&net, &bcs, &cfg, None).unwrap();
    let result = outcome
        .result
        .unwrap_or_else(|| panic!("{name} not square"));
    assert!(
        result.status.is_converged(),
        "{name}: {status}",
        status = result.status
    );
    let residual = result.residual_history.last().copied().unwrap();
    (net, bcs, result.state, result.iterations, residual)
}

#[test]
fn criterion_1_degree_of_freedom_counts() {
    let started = Instant::now();
    let mut c = Criterion::new(1, "degree-of-freedom counts");
    let expected = [
        ("power_to_gas", 4usize, 6usize),
        ("electrolyser", 10, 14),
        ("electrolyser_free_split", 10, 15),
        ("linked", 18, 30),
    ];
    for (name, equations, unknowns) in expected {
        let (net, _, _) = load_network(name);
        let dofs = count_dofs(&net).unwrap();
        c.check(
            dofs.equations == equations && dofs.unknowns == unknowns,
            || {
                format!(
                    "{name}: counted ({}, {}), expected ({equations}, {unknowns})",
                    dofs.equations, dofs.unknowns
                )
            },
        );
    }
    c.check(started.elapsed().as_secs_f64() < 1.0, || {
        format!("took {:?}, over the 1 s budget", started.elapsed())
    });
    c.finish();
}

#[test]
fn criterion_2_conversion_unit_arithmetic() {
    let started = Instant::now();
    let mut c = Criterion::new(2, "conversion-unit arithmetic");
    let (p, eta, eta_h, hhv, cp) = (2.434e6, 0.9, 1.0 / 6.0, 1.418e8, 4182.0);
    let (ts, tr) = (338.15, 322.942);
    // Heat draw from the residual-heat split, gas flow from the energy
    // balance, water flow from the heat-power equation.
    let dphi = eta_h * eta * p;
    let q = (eta * p - dphi) / hhv;
    let m = dphi / (cp * (ts - tr));
    c.check(
        mcflow::coupling::electrolyser_residual_heat_residual(p, dphi, eta, eta_h).abs() < 1e-9,
        || "residual-heat equation does not close at the computed draw".into(),
    );
    c.check(
        mcflow::coupling::electrolyser_energy_balance_residual(p, q, dphi, eta, hhv).abs() < 1e-9,
        || "energy balance does not close at the computed gas flow".into(),
    );
    c.check(
        terminal_heat_power_residual(m, ts, tr, dphi, cp).abs() < 1e-9,
        || "heat-power equation does not close at the computed water flow".into(),
    );
    c.check(rel_err(dphi, 0.365e6) <= 5e-3, || {
        format!("heat draw {dphi} W vs 0.365 MW (0.5%)")
    });
    c.check(rel_err(q, 0.0129) <= 1e-2, || {
        format!("gas flow {q} kg/s vs 0.0129 kg/s (1%)")
    });
    c.check(rel_err(m, 5.74) <= 5e-3, || {
        format!("water flow {m} kg/s vs 5.74 kg/s (0.5%)")
    });
    c.check(started.elapsed().as_secs_f64() < 1.0, || {
        format!("took {:?}, over the 1 s budget", started.elapsed())
    });
    c.finish();
}

#[test]
fn criterion_3_pipe_temperature_decay() {
    let mut c = Criterion::new(3, "pipe temperature decay");
    let supply = heat_pipe_temperature_out(338.15, 5.74, 0.2, 500.0, 4182.0, 273.15).unwrap();
    let ret = heat_pipe_temperature_out(323.15, 5.74, 0.2, 500.0, 4182.0, 273.15).unwrap();
    c.check((supply - 337.88).abs() <= 0.01, || {
        format!("supply outlet {supply} K vs 337.88 K (±0.01)")
    });
    c.check((ret - 322.94).abs() <= 0.01, || {
        format!("return outlet {ret} K vs 322.94 K (±0.01)")
    });
    c.check((338.15 - supply - 0.27).abs() <= 0.01, || {
        format!("supply drop {} K vs 0.27 K", 338.15 - supply)
    });
    c.check((323.15 - ret - 0.208).abs() <= 0.01, || {
        format!("return drop {} K vs 0.208 K", 323.15 - ret)
    });
    c.finish();
}

#[test]
fn criterion_4_pipe_pressure_drops() {
    let mut c = Criterion::new(4, "pipe pressure drops");
    let (net, _, state, _, _) = solved_state("linked");
    let reg = net.registry();
    let p = |path: &str| state[reg.lookup_path(path).unwrap()];
    let gas_drop_bar = (p("p@0g") - p("p@1g")) * 1e-5;
    let heat_drop_bar = (p("p@0h") - p("p@1h")) * 1e-5;
    c.check(rel_err(heat_drop_bar, 0.048) <= 0.02, || {
        format!("heat pipe drop {heat_drop_bar} bar vs 0.048 bar (2%)")
    });
    c.check(rel_err(gas_drop_bar, 0.003) <= 0.15, || {
        format!("gas pipe drop {gas_drop_bar} bar vs 0.003 bar (15%)")
    });
    c.finish();
}

#[test]
fn criterion_5_linked_solve_and_free_mode_agreement() {
    let started = Instant::now();
    let mut c = Criterion::new(5, "linked solve and free-split agreement");
    // Fixed-fraction case from the default starting point.
    let (net, bcs, state, iterations, residual) = solved_state("linked");
    c.check(iterations <= 10, || {
        format!("took {iterations} iterations, budget is 10")
    });
    c.check(residual <= 1e-6, || {
        format!("final residual norm {residual:e} above 1e-6")
    });
    let sys = assemble_system(&net, &bcs).unwrap();
    let residuals = sys.eval_residuals(&state, DomainPolicy::Strict).unwrap();
    let worst = residuals.amax();
    c.check(worst <= 1e-6, || {
        format!("worst conservation residual {worst:e} above 1e-6")
    });
    // Free-fraction case, its prescribed outputs taken from the solve above.
    let (free_net, mut free_bcs, free_cfg) = load_network("linked_free_split");
    let free_reg = free_net.registry();
    let known_reg = net.registry();
    for path in ["q@1g", "dphi@1h"] {
        let from = known_reg.lookup_path(path).unwrap();
        let to = free_reg.lookup_path(path).unwrap();
        free_bcs.set(to, state[from]).unwrap();
    }
    let free_out = solve_network(&free_net, &free_bcs, &free_cfg, None).unwrap();
    let free_result = free_out.result.unwrap();
    c.check(free_result.status.is_converged(), || {
        format!("free-split solve: {}", free_result.status)
    });
    let mut worst_slot = (String::new(), 0.0f64);
    for (slot, key) in known_reg.iter() {
        let other = free_reg.lookup(key).unwrap();
        let diff = (state[slot] - free_result.state[other]).abs();
        if diff > worst_slot.1 {
            worst_slot = (key.to_string(), diff);
        }
    }
    c.check(worst_slot.1 <= 1e-6, || {
        format!(
            "free and fixed modes differ by {:e} at {}",
            worst_slot.1, worst_slot.0
        )
    });
    let eta_h = free_result.state[free_reg.lookup_path("eta_h@0c").unwrap()];
    c.check(rel_err(eta_h, 1.0 / 6.0) <= 1e-6, || {
        format!("recovered split fraction {eta_h} vs 1/6")
    });
    c.check(started.elapsed().as_secs_f64() < 2.0, || {
        format!(
            "took {:?}, over the 1 s per-solve budget",
            started.elapsed()
        )
    });
    c.finish();
}

// --- criterion 6 helpers -----------------------------------------------

fn carrier_node(id: &str, carrier: Carrier, terminal: TerminalKind) -> Node {
    Node {
        id: id.into(),
        kind: NodeKind::Carrier {
            carrier,
            terminal: Some(terminal),
        },
    }
}

fn unit_node(id: &str, kind: CouplingKind, eta_h: HeatEfficiency) -> Node {
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

fn dummy_link(id: &str, from: &str, to: &str, carrier: Carrier) -> Link {
    Link {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        kind: LinkKind::Dummy { carrier },
    }
}

/// Electric + gas pair: an electrolyser pinned to zero residual heat, and a
/// plain power-to-gas unit on the same graph.
fn gas_only_pair() -> (Network, Network) {
    let build = |kind, eta_h| {
        Network::build(
            vec![
                carrier_node("0e", Carrier::Electricity, TerminalKind::Electric),
                carrier_node("0g", Carrier::Gas, TerminalKind::Gas),
                unit_node("0c", kind, eta_h),
            ],
            vec![
                dummy_link("dummy-e", "0e", "0c", Carrier::Electricity),
                dummy_link("dummy-g", "0c", "0g", Carrier::Gas),
            ],
            CarrierParams::default(),
        )
        .unwrap()
    };
    (
        build(CouplingKind::Electrolyser, HeatEfficiency::Fixed(0.0)),
        build(CouplingKind::PowerToGas, HeatEfficiency::Fixed(0.0)),
    )
}

/// Electric + heat pair: an electrolyser pinned to full residual heat, and a
/// boiler on the same graph.
fn heat_only_pair() -> (Network, Network) {
    let build = |kind, eta_h| {
        Network::build(
            vec![
                carrier_node("0e", Carrier::Electricity, TerminalKind::Electric),
                carrier_node("0h", Carrier::Heat, TerminalKind::HeatFull),
                unit_node("0c", kind, eta_h),
            ],
            vec![
                dummy_link("dummy-e", "0e", "0c", Carrier::Electricity),
                dummy_link("dummy-h", "0c", "0h", Carrier::Heat),
            ],
            CarrierParams::default(),
        )
        .unwrap()
    };
    (
        build(CouplingKind::Electrolyser, HeatEfficiency::Fixed(1.0)),
        build(CouplingKind::ElectricBoiler, HeatEfficiency::Fixed(1.0)),
    )
}

fn bcs_from_paths(net: &Network, entries: &[(&str, f64)]) -> BoundaryConditionSet {
    let mut bcs = BoundaryConditionSet::new();
    for (path, value) in entries {
        let slot = net.registry().lookup_path(path).unwrap();
        bcs.insert(slot, *value).unwrap();
    }
    bcs
}

fn solve_state(net: &Network, bcs: &BoundaryConditionSet) -> DVector<f64> {
    let out = solve_network(net, bcs, &SolverConfig::default(), None).unwrap();
    let result = out.result.expect("square");
    assert!(result.status.is_converged(), "{}", result.status);
    result.state
}

#[test]
fn criterion_6_substituted_properties() {
    let mut c = Criterion::new(6, "substituted electrical-side properties");

    // (a) Line losses are non-negative for any operating state.
    let mut rng = StdRng::seed_from_u64(0x6c6f_7373);
    for _ in 0..1000 {
        let v_i = rng.gen_range(1.0..1000.0);
        let v_j = rng.gen_range(1.0..1000.0);
        let d_i = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let d_j = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let g = rng.gen_range(0.0..100.0);
        let b = rng.gen_range(-100.0..100.0);
        let flows = line_power_flows(v_i, d_i, v_j, d_j, g, b);
        let loss = flows.p_send + flows.p_recv;
        let floor = -1e-9 * (flows.p_send.abs() + flows.p_recv.abs() + 1.0);
        c.check(loss >= floor, || {
            format!("negative loss {loss} for v=({v_i},{v_j}) d=({d_i},{d_j}) g={g} b={b}")
        });
    }

    // (b) Analytic Jacobian against central differences at the solved
    // operating point of every fixture. (At the raw starting point the
    // quadratic pipe law sits exactly on its |x|x kink — differences there
    // measure the kink, not the derivative.)
    for fixture in fixtures::ALL {
        let (net, bcs, state, _, _) = solved_state(fixture.name);
        let sys = assemble_system(&net, &bcs).unwrap();
        let analytic = sys.jacobian(&state, DomainPolicy::Strict).unwrap();
        let fd = finite_difference_jacobian(&sys, &state, DomainPolicy::Strict).unwrap();
        let mismatches = compare_jacobians(&sys, &analytic, &fd, 1e-5);
        c.check(mismatches.is_empty(), || {
            format!(
                "{}: {} Jacobian entries off, first {:?}",
                fixture.name,
                mismatches.len(),
                mismatches.first()
            )
        });
    }

    // (c) Degenerate electrolysers match the single-output units
    // slot-for-slot at the solved state.
    let gas_bcs = [("P@0e", -2.0e6), ("Q@0e-0c", 0.0)];
    let (degenerate, plain) = gas_only_pair();
    let a = solve_state(&degenerate, &bcs_from_paths(&degenerate, &gas_bcs));
    let b = solve_state(&plain, &bcs_from_paths(&plain, &gas_bcs));
    for (slot, key) in degenerate.registry().iter() {
        let other = plain.registry().lookup(key).unwrap();
        c.check((a[slot] - b[other]).abs() <= 1e-9, || {
            format!(
                "zero-split electrolyser and power-to-gas differ at {key}: {} vs {}",
                a[slot], b[other]
            )
        });
    }
    let heat_bcs = [
        ("P@0e", -2.0e6),
        ("Q@0e-0c", 0.0),
        ("Tr@0h", 313.15),
        ("Ts@0c-0h", 338.15),
    ];
    let (degenerate, plain) = heat_only_pair();
    let a = solve_state(&degenerate, &bcs_from_paths(&degenerate, &heat_bcs));
    let b = solve_state(&plain, &bcs_from_paths(&plain, &heat_bcs));
    for (slot, key) in degenerate.registry().iter() {
        let other = plain.registry().lookup(key).unwrap();
        c.check((a[slot] - b[other]).abs() <= 1e-9, || {
            format!(
                "full-split electrolyser and boiler differ at {key}: {} vs {}",
                a[slot], b[other]
            )
        });
    }

    // (d) Removing any single condition from any template's closure leaves
    // the case underdetermined by exactly one.
    for name in [
        "power_to_gas",
        "electric_boiler",
        "electrolyser",
        "electrolyser_free_split",
        "linked",
        "linked_free_split",
    ] {
        let (net, bcs, _) = load_network(name);
        let slots: Vec<_> = bcs.iter().map(|(slot, _)| slot).collect();
        for slot in slots {
            let mut reduced = bcs.clone();
            reduced.remove(slot);
            let verdict = check_square(&net, &reduced).unwrap();
            c.check(verdict == Squareness::Underdetermined(1), || {
                format!(
                    "{name} without {}: {verdict:?}, expected Underdetermined(1)",
                    net.registry().key(slot)
                )
            });
        }
    }
    c.finish();
}

#[test]
fn criterion_7_linear_case_exactness() {
    let mut c = Criterion::new(7, "linear-case exactness");
    let (net, bcs, cfg) = load_network("power_to_gas");
    let expected_q = 0.9 * 2.0e6 / 1.418e8;
    let q_slot = net.registry().lookup_path("q@0g").unwrap();
    // Default start plus a batch of random ones: an affine system must land
    // in a single step from anywhere. Random draws are scaled per slot kind —
    // flow slots stay O(10) while every other slot roams ±1e6 — because a
    // guess with a huge flow value cancels against the step (x + Δx) with an
    // absolute error of ~1e-16·|guess|, and the heating-value coefficient
    // (1.4e8) amplifies that past any sensible residual tolerance. That is a
    // property of f64, not of the solver.
    let kinds: Vec<SymbolKind> = net.registry().iter().map(|(_, key)| key.kind).collect();
    let mut rng = StdRng::seed_from_u64(0x1e6);
    let mut guesses = vec![InitialGuess::flat_start(&net, &bcs)];
    for _ in 0..32 {
        let values = DVector::from_fn(net.registry().len(), |i, _| {
            let scale = if kinds[i] == SymbolKind::GasFlow {
                10.0
            } else {
                1.0e6
            };
            rng.gen_range(-scale..scale)
        });
        guesses.push(InitialGuess::user(values));
    }
    for (i, guess) in guesses.iter().enumerate() {
        let out = solve_network(&net, &bcs, &cfg, Some(guess)).unwrap();
        let result = out.result.unwrap();
        c.check(result.status.is_converged(), || {
            format!("guess {i}: {}", result.status)
        });
        c.check(result.iterations == 1, || {
            format!(
                "guess {i}: {} iterations, expected exactly 1",
                result.iterations
            )
        });
        let q = result.state[q_slot];
        c.check(rel_err(q, expected_q) <= 1e-12, || {
            format!("guess {i}: q {q} vs closed form {expected_q} (1e-12)")
        });
    }
    c.finish();
}

#[test]
fn criterion_8_singularity_probes() {
    let mut c = Criterion::new(8, "designed-singular probe states");
    let (net, bcs, _) = load_network("linked");
    let base = default_initial_guess(&net, &bcs);

    let resting_flows = zero_mass_flow_probe(&net, &base);
    let verdict = jacobian_rank_probe(&net, &bcs, &resting_flows).unwrap();
    c.check(verdict.is_singular(), || {
        format!("zero-mass-flow probe came back {verdict:?}, expected singular")
    });

    let resting_pressures = at_rest_probe(&net, &base);
    let verdict = jacobian_rank_probe(&net, &bcs, &resting_pressures).unwrap();
    c.check(verdict.is_singular(), || {
        format!("zero-pressure-drop probe came back {verdict:?}, expected singular")
    });

    // The regular starting point, by contrast, is rank-complete.
    let verdict = jacobian_rank_probe(&net, &bcs, &base).unwrap();
    c.check(!verdict.is_singular(), || {
        format!("default starting point came back {verdict:?}, expected nonsingular")
    });
    c.finish();
}
