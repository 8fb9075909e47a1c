//! Built-in example cases, embedded at compile time.
//!
//! Each fixture is a complete case document; the CLI accepts a fixture name
//! wherever it accepts a case file. [`by_name`] fetches one, [`ALL`] lists
//! them in presentation order (simplest first).

/// One embedded case.
#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    /// Name accepted by the CLI.
    pub name: &'static str,
    /// One-line summary for listings.
    pub summary: &'static str,
    /// The case document text.
    pub json: &'static str,
}

/// All embedded cases.
pub const ALL: &[Fixture] = &[
    Fixture {
        name: "power_to_gas",
        summary: "two-terminal power-to-gas unit, linear, solves in one step",
        json: include_str!("../fixtures/power_to_gas.json"),
    },
    Fixture {
        name: "electric_boiler",
        summary: "electric boiler feeding a hot-water terminal",
        json: include_str!("../fixtures/electric_boiler.json"),
    },
    Fixture {
        name: "electrolyser",
        summary: "three-carrier electrolyser with a fixed residual-heat split",
        json: include_str!("../fixtures/electrolyser.json"),
    },
    Fixture {
        name: "electrolyser_free_split",
        summary: "electrolyser with the residual-heat fraction as an unknown",
        json: include_str!("../fixtures/electrolyser_free_split.json"),
    },
    Fixture {
        name: "linked",
        summary: "electrolyser behind a line, a gas pipe and a heat pipe",
        json: include_str!("../fixtures/linked.json"),
    },
    Fixture {
        name: "linked_free_split",
        summary: "linked case solving for the residual-heat fraction",
        json: include_str!("../fixtures/linked_free_split.json"),
    },
    Fixture {
        name: "linked_dense_gas",
        summary: "linked case with natural-gas density in the gas pipe",
        json: include_str!("../fixtures/linked_dense_gas.json"),
    },
];

/// Looks a fixture up by its CLI name.
pub fn by_name(name: &str) -> Option<&'static Fixture> {
    ALL.iter().find(|f| f.name == name)
}
