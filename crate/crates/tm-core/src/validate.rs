//! Structural validation and flow reachability.
//!
//! [`validate`] returns findings instead of failing: an empty list means
//! the model is well-formed, errors mean downstream operations will refuse
//! it, warnings are advisory. The finding order is deterministic: flow
//! arcs in arc order, then triggers in trigger order, then stages in
//! machine pre-order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use crate::model::{DiagCode, Diagnostic, Site, StageKind, StageRef, TMModel};

/// The legal intra-machine stage adjacencies. Everything outside this
/// table (and outside inter-machine transfer-to-transfer) is rejected.
///
/// - create → process | release
/// - receive → process | release
/// - process → release
/// - release → transfer
/// - transfer → receive
pub fn legal_intra(from: StageKind, to: StageKind) -> bool {
    use StageKind::*;
    matches!(
        (from, to),
        (Create, Process)
            | (Create, Release)
            | (Receive, Process)
            | (Receive, Release)
            | (Process, Release)
            | (Release, Transfer)
            | (Transfer, Receive)
    )
}

/// Trigger sources that do not draw a warning.
fn quiet_trigger_source(kind: StageKind) -> bool {
    matches!(kind, StageKind::Process | StageKind::Create)
}

/// Stage kinds a trigger may point at.
fn legal_trigger_target(kind: StageKind) -> bool {
    matches!(
        kind,
        StageKind::Create | StageKind::Process | StageKind::Transfer
    )
}

/// Checks the whole static model and returns every finding.
///
/// Models marked as simplified are exempt from the adjacency and
/// cross-machine rules (their collapsed arcs intentionally skip stages);
/// all other rules still apply.
pub fn validate(model: &TMModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let relaxed = model.simplified_level().is_some();

    // Flow arcs, in arc order.
    for (i, arc) in model.arcs.iter().enumerate() {
        let mut dangling = false;
        for (end, r) in [("source", &arc.from), ("target", &arc.to)] {
            if model.resolve(r).is_none() {
                dangling = true;
                out.push(Diagnostic::error(
                    DiagCode::DanglingRef,
                    Site::Flow(i),
                    format!("flow {end} `{r}` does not resolve"),
                ));
            }
        }
        if arc.thing.is_empty() {
            out.push(Diagnostic::error(
                DiagCode::EmptyThing,
                Site::Flow(i),
                format!(
                    "flow arc `{}` -> `{}` has an empty thing label",
                    arc.from, arc.to
                ),
            ));
        }
        if dangling || relaxed {
            continue;
        }
        if arc.from.machine != arc.to.machine {
            if !(arc.from.kind == StageKind::Transfer && arc.to.kind == StageKind::Transfer) {
                out.push(Diagnostic::error(
                    DiagCode::CrossMachineNonTransfer,
                    Site::Flow(i),
                    format!(
                        "flow `{}` -> `{}` crosses machines; only transfer -> transfer may",
                        arc.from, arc.to
                    ),
                ));
            }
        } else if !legal_intra(arc.from.kind, arc.to.kind) {
            out.push(Diagnostic::error(
                DiagCode::IllegalAdjacency,
                Site::Flow(i),
                format!(
                    "stage adjacency {} -> {} is not legal within a machine",
                    arc.from.kind, arc.to.kind
                ),
            ));
        }
    }

    // Triggers, in trigger order.
    let flow_succ = flow_successors(model);
    for (i, t) in model.triggers.iter().enumerate() {
        let mut dangling = false;
        for (end, r) in [("source", &t.from), ("target", &t.to)] {
            if model.resolve(r).is_none() {
                dangling = true;
                out.push(Diagnostic::error(
                    DiagCode::DanglingRef,
                    Site::Trigger(i),
                    format!("trigger {end} `{r}` does not resolve"),
                ));
            }
        }
        if dangling {
            continue;
        }
        if !quiet_trigger_source(t.from.kind) {
            out.push(Diagnostic::warning(
                DiagCode::TriggerSourceKind,
                Site::Trigger(i),
                format!("trigger starts at a {} stage `{}`", t.from.kind, t.from),
            ));
        }
        if !legal_trigger_target(t.to.kind) {
            out.push(Diagnostic::error(
                DiagCode::TriggerTargetKind,
                Site::Trigger(i),
                format!(
                    "trigger may target create, process or transfer, not {} `{}`",
                    t.to.kind, t.to
                ),
            ));
        }
        if on_one_flow(&flow_succ, &t.from, &t.to) {
            out.push(Diagnostic::warning(
                DiagCode::TriggerSameFlow,
                Site::Trigger(i),
                format!(
                    "trigger `{}` ~> `{}` connects stages already joined by flow arcs",
                    t.from, t.to
                ),
            ));
        }
    }

    // Stages, machines in pre-order.
    for r in model.all_stage_refs() {
        let incoming: Vec<&str> = model.arcs_into(&r).map(|(_, a)| a.thing.as_str()).collect();
        let outgoing: Vec<&str> = model.arcs_from(&r).map(|(_, a)| a.thing.as_str()).collect();
        let in_triggers = model.triggers.iter().any(|t| t.from == r || t.to == r);

        if matches!(
            r.kind,
            StageKind::Release | StageKind::Transfer | StageKind::Receive
        ) {
            let mut labels: BTreeSet<&str> = incoming.iter().copied().collect();
            labels.extend(outgoing.iter().copied());
            if labels.len() > 1 {
                out.push(Diagnostic::warning(
                    DiagCode::ThingLabelMismatch,
                    Site::Stage(r.clone()),
                    format!(
                        "{} stage `{}` sees more than one thing label; only process may relabel",
                        r.kind, r
                    ),
                ));
            }
        }
        if r.kind == StageKind::Release && !incoming.is_empty() && outgoing.is_empty() {
            out.push(Diagnostic::warning(
                DiagCode::TerminalRelease,
                Site::Stage(r.clone()),
                format!("release stage `{r}` is never transferred onward"),
            ));
        }
        if incoming.is_empty() && outgoing.is_empty() && !in_triggers {
            out.push(Diagnostic::warning(
                DiagCode::UnreachableStage,
                Site::Stage(r.clone()),
                format!("stage `{r}` participates in no flow or trigger"),
            ));
        }
    }

    out
}

/// Error from [`flow_reachable`]: the starting point does not resolve.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnresolvedStart(pub StageRef);

impl core::fmt::Display for UnresolvedStart {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "start stage `{}` does not resolve", self.0)
    }
}

/// The set of stages reachable from `start` along flow arcs (and trigger
/// arcs too when `follow_triggers` is set). Includes `start` itself.
/// Growing the arc set or enabling `follow_triggers` can only grow the
/// result.
pub fn flow_reachable(
    model: &TMModel,
    start: &StageRef,
    follow_triggers: bool,
) -> Result<BTreeSet<StageRef>, UnresolvedStart> {
    if model.resolve(start).is_none() {
        return Err(UnresolvedStart(start.clone()));
    }
    let mut succ = flow_successors(model);
    if follow_triggers {
        for t in &model.triggers {
            succ.entry(t.from.clone()).or_default().push(t.to.clone());
        }
    }
    let mut seen: BTreeSet<StageRef> = BTreeSet::new();
    let mut queue: Vec<StageRef> = alloc::vec![start.clone()];
    seen.insert(start.clone());
    while let Some(cur) = queue.pop() {
        if let Some(nexts) = succ.get(&cur) {
            for n in nexts {
                if seen.insert(n.clone()) {
                    queue.push(n.clone());
                }
            }
        }
    }
    Ok(seen)
}

/// Successor map over flow arcs only.
pub(crate) fn flow_successors(model: &TMModel) -> BTreeMap<StageRef, Vec<StageRef>> {
    let mut succ: BTreeMap<StageRef, Vec<StageRef>> = BTreeMap::new();
    for a in &model.arcs {
        succ.entry(a.from.clone()).or_default().push(a.to.clone());
    }
    succ
}

/// True if a directed flow path joins the two stages in either direction.
fn on_one_flow(succ: &BTreeMap<StageRef, Vec<StageRef>>, a: &StageRef, b: &StageRef) -> bool {
    path_exists(succ, a, b) || path_exists(succ, b, a)
}

pub(crate) fn path_exists(
    succ: &BTreeMap<StageRef, Vec<StageRef>>,
    from: &StageRef,
    to: &StageRef,
) -> bool {
    if from == to {
        return true;
    }
    let mut seen: BTreeSet<&StageRef> = BTreeSet::new();
    let mut queue: Vec<&StageRef> = alloc::vec![from];
    seen.insert(from);
    while let Some(cur) = queue.pop() {
        if let Some(nexts) = succ.get(cur) {
            for n in nexts {
                if n == to {
                    return true;
                }
                if seen.insert(n) {
                    queue.push(n);
                }
            }
        }
    }
    false
}
