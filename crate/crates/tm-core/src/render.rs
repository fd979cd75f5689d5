//! Graphviz DOT renderers: the machine/flow diagram and the event
//! chronology DAG.
//!
//! Output is deterministic — machines in pre-order, stages in declaration
//! order, arcs by index — so rendered files diff cleanly under version
//! control. Machines become nested `cluster` subgraphs, stages become
//! boxes, flow arcs solid edges labeled with their thing, trigger arcs
//! dashed edges. An optional overlay tints each event's region with its
//! own color and appends a legend.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::event::{Chronology, TMEvent};
use crate::model::{StageRef, TMModel};

/// Left-to-right (default) or top-to-bottom layout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Rankdir {
    #[default]
    LR,
    TB,
}

impl Rankdir {
    pub fn as_str(self) -> &'static str {
        match self {
            Rankdir::LR => "LR",
            Rankdir::TB => "TB",
        }
    }
}

/// Rendering knobs for [`to_dot`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RenderOptions {
    pub rankdir: Rankdir,
    /// Suppress trigger edges entirely.
    pub hide_triggers: bool,
    /// Tint each event's region and append a legend.
    pub overlay: Option<Vec<TMEvent>>,
}

/// Region tint palette; events beyond its length cycle.
const PALETTE: [&str; 10] = [
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94", "#f7b6d2", "#dbdb8d",
    "#9edae5", "#e7cb94",
];

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

/// Renders the machine diagram. Arcs whose endpoints do not resolve are
/// omitted; render after validation to see everything.
pub fn to_dot(model: &TMModel, options: &RenderOptions) -> String {
    let mut out = String::from("digraph tm {\n");
    out.push_str(&format!("  rankdir={};\n", options.rankdir.as_str()));
    out.push_str("  compound=true;\n");
    out.push_str("  fontname=\"Helvetica\";\n");
    out.push_str("  node [shape=box, style=rounded, fontname=\"Helvetica\"];\n");
    out.push_str("  edge [fontname=\"Helvetica\"];\n");

    // First event claiming a stage supplies its tint; stages claimed by
    // several events get a double border.
    let mut tint: BTreeMap<StageRef, usize> = BTreeMap::new();
    let mut shared: BTreeSet<StageRef> = BTreeSet::new();
    if let Some(events) = &options.overlay {
        for (i, ev) in events.iter().enumerate() {
            for stage in &ev.region {
                if tint.contains_key(stage) {
                    shared.insert(stage.clone());
                } else {
                    tint.insert(stage.clone(), i);
                }
            }
        }
    }

    // Assign node ids while walking the machine tree.
    let mut ids: BTreeMap<StageRef, String> = BTreeMap::new();
    let mut next = 0usize;
    for &mi in model.roots() {
        render_machine(model, mi, 1, &mut ids, &mut next, &tint, &shared, &mut out);
    }

    for arc in &model.arcs {
        let (Some(from), Some(to)) = (ids.get(&arc.from), ids.get(&arc.to)) else {
            continue;
        };
        out.push_str(&format!(
            "  {from} -> {to} [label=\"{}\"];\n",
            esc(&arc.thing)
        ));
    }
    if !options.hide_triggers {
        for t in &model.triggers {
            let (Some(from), Some(to)) = (ids.get(&t.from), ids.get(&t.to)) else {
                continue;
            };
            let label = match &t.label {
                Some(l) => format!(", label=\"{}\"", esc(l)),
                None => String::new(),
            };
            out.push_str(&format!(
                "  {from} -> {to} [style=dashed, arrowhead=vee{label}];\n"
            ));
        }
    }

    if let Some(events) = &options.overlay {
        out.push_str("  subgraph cluster_legend {\n");
        out.push_str("    label=\"events\";\n");
        out.push_str("    style=dashed;\n");
        for (i, ev) in events.iter().enumerate() {
            let label = match ev.time {
                Some(t) => format!("{}@{}", ev.id, t),
                None => ev.id.clone(),
            };
            out.push_str(&format!(
                "    legend{i} [label=\"{}\", style=\"rounded,filled\", fillcolor=\"{}\"];\n",
                esc(&label),
                PALETTE[i % PALETTE.len()]
            ));
        }
        out.push_str("  }\n");
    }

    out.push_str("}\n");
    out
}

#[allow(clippy::too_many_arguments)]
fn render_machine(
    model: &TMModel,
    mi: usize,
    depth: usize,
    ids: &mut BTreeMap<StageRef, String>,
    next: &mut usize,
    tint: &BTreeMap<StageRef, usize>,
    shared: &BTreeSet<StageRef>,
    out: &mut String,
) {
    let indent = "  ".repeat(depth);
    let machine = &model.machines()[mi];
    out.push_str(&format!("{indent}subgraph cluster_m{mi} {{\n"));
    out.push_str(&format!("{indent}  label=\"{}\";\n", esc(&machine.id)));
    for stage in &machine.stages {
        let r = StageRef {
            machine: machine.id.clone(),
            kind: stage.kind,
            disambiguator: stage.disambiguator.clone(),
        };
        let node = format!("n{}", *next);
        *next += 1;
        let mut label = String::from(stage.kind.as_str());
        if let Some(d) = &stage.disambiguator {
            label.push_str(&format!("[{}]", esc(d)));
        }
        if let Some(n) = stage.number {
            // A literal backslash-n: DOT's in-label line break.
            label.push_str(&format!("\\n@{n}"));
        }
        let mut attrs = format!("label=\"{label}\"");
        if let Some(&ev) = tint.get(&r) {
            attrs.push_str(&format!(
                ", style=\"rounded,filled\", fillcolor=\"{}\"",
                PALETTE[ev % PALETTE.len()]
            ));
        }
        if shared.contains(&r) {
            attrs.push_str(", peripheries=2");
        }
        out.push_str(&format!("{indent}  {node} [{attrs}];\n"));
        ids.insert(r, node);
    }
    for &child in &machine.children {
        render_machine(model, child, depth + 1, ids, next, tint, shared, out);
    }
    out.push_str(&format!("{indent}}}\n"));
}

/// Renders the chronology DAG: one ellipse per event (in declaration
/// order, annotated with its time when present), one edge per precedence
/// pair.
pub fn chronology_dot(events: &[TMEvent], chron: &Chronology) -> String {
    let mut out = String::from("digraph chronology {\n");
    out.push_str("  rankdir=LR;\n");
    out.push_str("  fontname=\"Helvetica\";\n");
    out.push_str("  node [shape=ellipse, fontname=\"Helvetica\"];\n");
    let mut ids: BTreeMap<&str, String> = BTreeMap::new();
    for (i, ev) in events.iter().enumerate() {
        let node = format!("e{i}");
        let label = match ev.time {
            Some(t) => format!("{}@{}", ev.id, t),
            None => ev.id.clone(),
        };
        out.push_str(&format!("  {node} [label=\"{}\"];\n", esc(&label)));
        ids.insert(ev.id.as_str(), node);
    }
    // Chronology entries with no declared event still get nodes so every
    // edge can be drawn.
    for id in &chron.events {
        if !ids.contains_key(id.as_str()) {
            let node = format!("e{}", ids.len());
            out.push_str(&format!(
                "  {node} [label=\"{}\", style=dashed];\n",
                esc(id)
            ));
            ids.insert(id.as_str(), node);
        }
    }
    for (a, b) in &chron.edges {
        let (Some(from), Some(to)) = (ids.get(a.as_str()), ids.get(b.as_str())) else {
            continue;
        };
        out.push_str(&format!("  {from} -> {to};\n"));
    }
    out.push_str("}\n");
    out
}
