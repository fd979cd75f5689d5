//! The two worked example models bundled with the toolkit, with golden
//! renderings of each derived artifact.
//!
//! `delivery` models a drone package delivery: request, address
//! resolution through a tracking device and satellites, flight, docking
//! handshake, pickup, departure. `drone` models a control panel driving
//! a drone through eight command signals with a stored-and-forwarded
//! data path back to the display.
//!
//! The golden files freeze the canonical text form, the DOT renderings,
//! and the simulation trace; tests regenerate them when the
//! `TM_UPDATE_GOLDEN` environment variable is set and otherwise compare
//! byte for byte.

use crate::dsl::{parse, Document};

/// One bundled model plus its frozen derived artifacts.
pub struct CorpusEntry {
    pub name: &'static str,
    /// The `.tm` source as shipped.
    pub source: &'static str,
    /// Canonical formatting of `source`.
    pub fmt: &'static str,
    /// Full DOT rendering.
    pub dot: &'static str,
    /// DOT rendering after simplification to the machine level.
    pub l2_dot: &'static str,
    /// DOT rendering of the chronology.
    pub chron_dot: &'static str,
    /// Deterministic simulation trace.
    pub trace: &'static str,
}

pub const DELIVERY: CorpusEntry = CorpusEntry {
    name: "delivery",
    source: include_str!("../corpus/delivery.tm"),
    fmt: include_str!("../corpus/golden/delivery.fmt.tm"),
    dot: include_str!("../corpus/golden/delivery.dot"),
    l2_dot: include_str!("../corpus/golden/delivery.l2.dot"),
    chron_dot: include_str!("../corpus/golden/delivery.chron.dot"),
    trace: include_str!("../corpus/golden/delivery.trace.txt"),
};

pub const DRONE: CorpusEntry = CorpusEntry {
    name: "drone",
    source: include_str!("../corpus/drone.tm"),
    fmt: include_str!("../corpus/golden/drone.fmt.tm"),
    dot: include_str!("../corpus/golden/drone.dot"),
    l2_dot: include_str!("../corpus/golden/drone.l2.dot"),
    chron_dot: include_str!("../corpus/golden/drone.chron.dot"),
    trace: include_str!("../corpus/golden/drone.trace.txt"),
};

pub fn entries() -> [&'static CorpusEntry; 2] {
    [&DELIVERY, &DRONE]
}

fn document(entry: &CorpusEntry) -> Document {
    let file = format!("{}.tm", entry.name);
    let result = parse(entry.source, &file);
    if let Some(d) = result.diagnostics.first() {
        panic!(
            "corpus model {} has findings: {}",
            entry.name,
            d.render(&file)
        );
    }
    result.document.expect("corpus model parses cleanly")
}

/// Parses the bundled delivery model; panics if it has any findings.
pub fn delivery_document() -> Document {
    document(&DELIVERY)
}

/// Parses the bundled drone model; panics if it has any findings.
pub fn drone_document() -> Document {
    document(&DRONE)
}
