//! The dynamic side of a model: events, chronologies, and the algebra
//! connecting them to the static flow structure.
//!
//! An *elementary* event is a single stage doing its work once. Coarser
//! events own a *region* (a set of stages) and may carry a time and a
//! description. A *chronology* is a DAG of event precedence. The dynamic
//! validator checks that the chronology does not contradict the flow arcs;
//! `infer_precedence` derives the weakest chronology the flows demand.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{has_errors, DiagCode, Diagnostic, Site, StageRef, TMModel};
use crate::validate::validate;

/// An event over a region of stages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TMEvent {
    pub id: String,
    pub region: BTreeSet<StageRef>,
    /// Optional non-negative tick. Chronology edges dominate times when
    /// they disagree; the disagreement itself is a warning.
    pub time: Option<u64>,
    pub desc: Option<String>,
}

/// Event precedence: a set of event ids and a set of `(before, after)`
/// edges, expected to be acyclic.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Chronology {
    pub events: BTreeSet<String>,
    pub edges: BTreeSet<(String, String)>,
}

impl Chronology {
    /// Forward reachability per event (transitive, excluding the event
    /// itself unless it lies on a cycle).
    pub fn paths(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (a, b) in &self.edges {
            succ.entry(a).or_default().push(b);
        }
        let mut out = BTreeMap::new();
        for e in &self.events {
            let mut seen: BTreeSet<String> = BTreeSet::new();
            let mut stack: Vec<&str> = alloc::vec![e.as_str()];
            while let Some(cur) = stack.pop() {
                if let Some(nexts) = succ.get(cur) {
                    for n in nexts {
                        if seen.insert((*n).into()) {
                            stack.push(n);
                        }
                    }
                }
            }
            out.insert(e.clone(), seen);
        }
        out
    }

    /// True if the edge relation has a cycle.
    pub fn has_cycle(&self) -> bool {
        self.paths().iter().any(|(e, reach)| reach.contains(e))
    }
}

/// One stage doing its work once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElementaryEvent {
    /// Derived identifier: the dotted textual form of the stage.
    pub id: String,
    pub stage: StageRef,
    /// The thing label in transit at this stage ("" when no flow arc or
    /// labeled trigger touches it).
    pub thing: String,
}

/// Errors from the event operations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventError {
    /// The static model has validation errors.
    ModelHasErrors,
    /// A grouping named an elementary event that does not exist.
    UnknownElementary { group: usize, id: String },
    /// A grouping listed one elementary event in two groups.
    OverlappingGroups { group: usize },
    /// A group's stages do not form one directed path.
    NonContiguousGroup { group: usize },
    /// An event's region is empty or fails to resolve.
    UnresolvedRegion { event: String },
    /// Two events share an id.
    DuplicateEventId(String),
}

impl core::fmt::Display for EventError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EventError::ModelHasErrors => f.write_str("model has validation errors"),
            EventError::UnknownElementary { group, id } => {
                write!(f, "group {group} names unknown elementary event `{id}`")
            }
            EventError::OverlappingGroups { group } => {
                write!(f, "group {group} overlaps an earlier group")
            }
            EventError::NonContiguousGroup { group } => {
                write!(f, "group {group} is not a contiguous path")
            }
            EventError::UnresolvedRegion { event } => {
                write!(f, "event `{event}` has an empty or unresolved region")
            }
            EventError::DuplicateEventId(id) => write!(f, "duplicate event id `{id}`"),
        }
    }
}

/// Arc successors over flows and triggers together, restricted to `within`
/// when given.
fn induced_successors(
    model: &TMModel,
    within: Option<&BTreeSet<StageRef>>,
) -> BTreeMap<StageRef, Vec<StageRef>> {
    let keep = |r: &StageRef| within.is_none_or(|s| s.contains(r));
    let mut succ: BTreeMap<StageRef, Vec<StageRef>> = BTreeMap::new();
    for a in &model.arcs {
        if keep(&a.from) && keep(&a.to) {
            succ.entry(a.from.clone()).or_default().push(a.to.clone());
        }
    }
    for t in &model.triggers {
        if keep(&t.from) && keep(&t.to) {
            succ.entry(t.from.clone()).or_default().push(t.to.clone());
        }
    }
    succ
}

/// Deterministic (pseudo-)topological order of a stage set under the
/// flow-and-trigger arcs induced on it. Ties — and cycle leftovers — are
/// resolved by (machine path, kind, disambiguator).
pub(crate) fn order_stages(model: &TMModel, stages: &BTreeSet<StageRef>) -> Vec<StageRef> {
    let succ = induced_successors(model, Some(stages));
    let mut indeg: BTreeMap<&StageRef, usize> = stages.iter().map(|s| (s, 0)).collect();
    for nexts in succ.values() {
        for n in nexts {
            if let Some(d) = indeg.get_mut(n) {
                *d += 1;
            }
        }
    }
    type Key = (String, u8, String);
    let key = |r: &StageRef| model.sort_key(r);
    let mut ready: BTreeSet<(Key, StageRef)> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(r, _)| (key(r), (*r).clone()))
        .collect();
    let mut remaining: BTreeMap<StageRef, usize> = indeg
        .iter()
        .filter(|(_, d)| **d > 0)
        .map(|(r, d)| ((*r).clone(), *d))
        .collect();
    let mut out = Vec::with_capacity(stages.len());
    while out.len() < stages.len() {
        let next = match ready.iter().next().cloned() {
            Some(entry) => {
                ready.remove(&entry);
                entry.1
            }
            None => {
                // Cycle: free the smallest-keyed remaining stage.
                let entry = remaining
                    .keys()
                    .map(|r| (key(r), r.clone()))
                    .min()
                    .expect("stage count mismatch");
                remaining.remove(&entry.1);
                entry.1
            }
        };
        out.push(next.clone());
        if let Some(nexts) = succ.get(&next) {
            for n in nexts {
                if let Some(d) = remaining.get_mut(n) {
                    *d -= 1;
                    if *d == 0 {
                        remaining.remove(n);
                        ready.insert((key(n), n.clone()));
                    }
                }
            }
        }
    }
    out
}

/// One elementary event per stage that participates in at least one flow
/// or trigger arc, in deterministic topological order. Isolated declared
/// stages are excluded (the static validator already warns about them).
/// Refused when the model has validation errors.
pub fn elementary_events(model: &TMModel) -> Result<Vec<ElementaryEvent>, EventError> {
    if has_errors(&validate(model)) {
        return Err(EventError::ModelHasErrors);
    }
    let mut participating: BTreeSet<StageRef> = BTreeSet::new();
    for a in &model.arcs {
        participating.insert(a.from.clone());
        participating.insert(a.to.clone());
    }
    for t in &model.triggers {
        participating.insert(t.from.clone());
        participating.insert(t.to.clone());
    }
    let ordered = order_stages(model, &participating);
    Ok(ordered
        .into_iter()
        .map(|stage| {
            let thing = model
                .arcs_into(&stage)
                .map(|(_, a)| a.thing.clone())
                .next()
                .or_else(|| model.arcs_from(&stage).map(|(_, a)| a.thing.clone()).next())
                .or_else(|| {
                    model
                        .triggers
                        .iter()
                        .find(|t| t.to == stage)
                        .and_then(|t| t.label.clone())
                })
                .unwrap_or_default();
            ElementaryEvent {
                id: model.ref_dsl(&stage),
                stage,
                thing,
            }
        })
        .collect())
}

/// Coarsens elementary events into composite events. Each group becomes
/// one event (id `G1`, `G2`, … by position) whose region is the union of
/// its members' stages; elementary events left out of every group become
/// singleton events keeping their derived id. Output order follows the
/// elementary order of each event's first member.
///
/// Groups must be disjoint, name existing elementary ids, and form one
/// directed path under flow and trigger arcs.
pub fn compose_events(
    model: &TMModel,
    grouping: &[Vec<String>],
) -> Result<Vec<TMEvent>, EventError> {
    let elementary = elementary_events(model)?;
    let by_id: BTreeMap<&str, &ElementaryEvent> =
        elementary.iter().map(|e| (e.id.as_str(), e)).collect();

    let mut claimed: BTreeMap<&str, usize> = BTreeMap::new();
    for (gi, group) in grouping.iter().enumerate() {
        for id in group {
            let Some(e) = by_id.get(id.as_str()) else {
                return Err(EventError::UnknownElementary {
                    group: gi,
                    id: id.clone(),
                });
            };
            if claimed.insert(e.id.as_str(), gi).is_some() {
                return Err(EventError::OverlappingGroups { group: gi });
            }
        }
        let stages: BTreeSet<StageRef> = group
            .iter()
            .map(|id| by_id[id.as_str()].stage.clone())
            .collect();
        if !is_directed_path(model, &stages) {
            return Err(EventError::NonContiguousGroup { group: gi });
        }
    }

    let mut out = Vec::new();
    let mut emitted_groups: BTreeSet<usize> = BTreeSet::new();
    for e in &elementary {
        match claimed.get(e.id.as_str()) {
            Some(&gi) => {
                if emitted_groups.insert(gi) {
                    let region: BTreeSet<StageRef> = grouping[gi]
                        .iter()
                        .map(|id| by_id[id.as_str()].stage.clone())
                        .collect();
                    out.push(TMEvent {
                        id: format!("G{}", gi + 1),
                        region,
                        time: None,
                        desc: None,
                    });
                }
            }
            None => out.push(TMEvent {
                id: e.id.clone(),
                region: BTreeSet::from([e.stage.clone()]),
                time: None,
                desc: None,
            }),
        }
    }
    Ok(out)
}

/// Expands composite events back to the elementary events of every covered
/// stage, in elementary order. `flatten_events ∘ compose_events` restores
/// the full elementary list.
pub fn flatten_events(
    model: &TMModel,
    events: &[TMEvent],
) -> Result<Vec<ElementaryEvent>, EventError> {
    let elementary = elementary_events(model)?;
    let covered: BTreeSet<&StageRef> = events.iter().flat_map(|e| e.region.iter()).collect();
    Ok(elementary
        .into_iter()
        .filter(|e| covered.contains(&e.stage))
        .collect())
}

/// True if the stage set can be arranged into one directed path using the
/// flow and trigger arcs among its members. Empty groups do not qualify;
/// singletons do.
fn is_directed_path(model: &TMModel, stages: &BTreeSet<StageRef>) -> bool {
    if stages.is_empty() {
        return false;
    }
    if stages.len() == 1 {
        return true;
    }
    let succ = induced_successors(model, Some(stages));
    fn extend(
        succ: &BTreeMap<StageRef, Vec<StageRef>>,
        visited: &mut BTreeSet<StageRef>,
        cur: &StageRef,
        want: usize,
    ) -> bool {
        if visited.len() == want {
            return true;
        }
        if let Some(nexts) = succ.get(cur) {
            for n in nexts {
                if visited.insert(n.clone()) {
                    if extend(succ, visited, n, want) {
                        return true;
                    }
                    visited.remove(n);
                }
            }
        }
        false
    }
    stages.iter().any(|start| {
        let mut visited = BTreeSet::from([start.clone()]);
        extend(&succ, &mut visited, start, stages.len())
    })
}

/// Checks events and chronology against each other and the static model.
/// Finding order: events in declaration order, then chronology edges,
/// then cross-event flow consistency, then time conflicts.
pub fn validate_dynamic(
    model: &TMModel,
    events: &[TMEvent],
    chron: &Chronology,
) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    let mut seen_ids: BTreeSet<&str> = BTreeSet::new();
    for ev in events {
        if !seen_ids.insert(ev.id.as_str()) {
            out.push(Diagnostic::error(
                DiagCode::DuplicateEvent,
                Site::Event(ev.id.clone()),
                format!("event `{}` is declared more than once", ev.id),
            ));
            continue;
        }
        if ev.region.is_empty() {
            out.push(Diagnostic::error(
                DiagCode::RegionEmpty,
                Site::Event(ev.id.clone()),
                format!("event `{}` has an empty region", ev.id),
            ));
            continue;
        }
        let mut resolved = true;
        for r in &ev.region {
            if model.resolve(r).is_none() {
                resolved = false;
                out.push(Diagnostic::error(
                    DiagCode::DanglingRef,
                    Site::Event(ev.id.clone()),
                    format!("event `{}` region stage `{r}` does not resolve", ev.id),
                ));
            }
        }
        if resolved && !weakly_connected(model, &ev.region) {
            out.push(Diagnostic::warning(
                DiagCode::RegionDisconnected,
                Site::Event(ev.id.clone()),
                format!("event `{}` region is not connected by arcs", ev.id),
            ));
        }
    }

    let declared: BTreeSet<&str> = events.iter().map(|e| e.id.as_str()).collect();
    for id in &chron.events {
        if !declared.contains(id.as_str()) {
            out.push(Diagnostic::error(
                DiagCode::ChronologyUnknownEvent,
                Site::Event(id.clone()),
                format!("chronology lists undeclared event `{id}`"),
            ));
        }
    }
    for (i, (a, b)) in chron.edges.iter().enumerate() {
        for id in [a, b] {
            if !declared.contains(id.as_str()) {
                out.push(Diagnostic::error(
                    DiagCode::ChronologyUnknownEvent,
                    Site::ChronEdge(i),
                    format!("chronology edge names undeclared event `{id}`"),
                ));
            }
        }
    }

    let cyclic = chron.has_cycle();
    if cyclic {
        out.push(Diagnostic::error(
            DiagCode::ChronologyCycle,
            Site::Model,
            String::from("chronology contains a cycle"),
        ));
    }

    if !cyclic && !has_errors(&out) {
        let paths = chron.paths();
        let feeds = region_feeds(model, events);
        for (i, a) in events.iter().enumerate() {
            for (j, b) in events.iter().enumerate() {
                if i == j {
                    continue;
                }
                if feeds.contains(&(i, j)) && !feeds.contains(&(j, i)) {
                    let ordered = paths.get(&a.id).is_some_and(|reach| reach.contains(&b.id));
                    if !ordered {
                        out.push(Diagnostic::error(
                            DiagCode::ChronologyContradictsFlow,
                            Site::Event(a.id.clone()),
                            format!(
                                "flow runs from `{}` into `{}` but the chronology never orders them",
                                a.id, b.id
                            ),
                        ));
                    }
                }
            }
        }
        for a in events {
            for b in events {
                if let (Some(ta), Some(tb)) = (a.time, b.time) {
                    let ordered = paths.get(&a.id).is_some_and(|reach| reach.contains(&b.id));
                    if ordered && ta > tb {
                        out.push(Diagnostic::warning(
                            DiagCode::TimeOrderConflict,
                            Site::Event(b.id.clone()),
                            format!(
                                "`{}` (time {}) precedes `{}` (time {}); edges dominate times",
                                a.id, ta, b.id, tb
                            ),
                        ));
                    }
                }
            }
        }
    }

    out
}

/// Ordered pairs (i, j) of event indices where a flow arc runs from a
/// stage in region(i) to a stage in region(j).
fn region_feeds(model: &TMModel, events: &[TMEvent]) -> BTreeSet<(usize, usize)> {
    let mut feeds = BTreeSet::new();
    for a in &model.arcs {
        for (i, ei) in events.iter().enumerate() {
            if !ei.region.contains(&a.from) {
                continue;
            }
            for (j, ej) in events.iter().enumerate() {
                if i != j && ej.region.contains(&a.to) {
                    feeds.insert((i, j));
                }
            }
        }
    }
    feeds
}

/// Weak connectivity of the region under flow and trigger arcs.
fn weakly_connected(model: &TMModel, region: &BTreeSet<StageRef>) -> bool {
    if region.len() <= 1 {
        return true;
    }
    let succ = induced_successors(model, Some(region));
    let mut undirected: BTreeMap<&StageRef, Vec<&StageRef>> = BTreeMap::new();
    for (from, tos) in &succ {
        for to in tos {
            undirected.entry(from).or_default().push(to);
            undirected.entry(to).or_default().push(from);
        }
    }
    let start = region.iter().next().unwrap();
    let mut seen: BTreeSet<&StageRef> = BTreeSet::from([start]);
    let mut stack = alloc::vec![start];
    while let Some(cur) = stack.pop() {
        if let Some(nexts) = undirected.get(cur) {
            for n in nexts {
                if seen.insert(n) {
                    stack.push(n);
                }
            }
        }
    }
    seen.len() == region.len()
}

/// Derives the weakest chronology the flow structure demands: an edge
/// A → B whenever some flow arc leads from region(A) into region(B) and
/// none leads back, transitively reduced. Feed cycles (mutual or longer)
/// contribute no edges and are reported as warnings.
pub fn infer_precedence(
    model: &TMModel,
    events: &[TMEvent],
) -> Result<(Chronology, Vec<Diagnostic>), EventError> {
    if has_errors(&validate(model)) {
        return Err(EventError::ModelHasErrors);
    }
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for ev in events {
        if !seen.insert(ev.id.as_str()) {
            return Err(EventError::DuplicateEventId(ev.id.clone()));
        }
        if ev.region.is_empty() || ev.region.iter().any(|r| model.resolve(r).is_none()) {
            return Err(EventError::UnresolvedRegion {
                event: ev.id.clone(),
            });
        }
    }

    let mut diags = Vec::new();
    let feeds = region_feeds(model, events);
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &(i, j) in &feeds {
        if feeds.contains(&(j, i)) {
            if i < j {
                diags.push(Diagnostic::warning(
                    DiagCode::PrecedenceCycle,
                    Site::Event(events[i].id.clone()),
                    format!(
                        "regions of `{}` and `{}` feed each other; no edge inferred",
                        events[i].id, events[j].id
                    ),
                ));
            }
        } else {
            edges.insert((i, j));
        }
    }

    // Longer feed cycles: drop every edge inside a strongly connected
    // component and report its members.
    let sccs = tarjan_sccs(events.len(), &edges);
    for comp in &sccs {
        if comp.len() > 1 {
            let mut names: Vec<&str> = comp.iter().map(|&i| events[i].id.as_str()).collect();
            names.sort_unstable();
            diags.push(Diagnostic::warning(
                DiagCode::PrecedenceCycle,
                Site::Event(names[0].into()),
                format!(
                    "regions feed in a cycle: {}; no edges inferred",
                    names.join(", ")
                ),
            ));
        }
    }
    let mut comp_of = alloc::vec![0usize; events.len()];
    for (ci, comp) in sccs.iter().enumerate() {
        for &i in comp {
            comp_of[i] = ci;
        }
    }
    edges.retain(|&(i, j)| comp_of[i] != comp_of[j]);

    // Transitive reduction of the remaining DAG.
    let reach =
        |from: usize, skip: (usize, usize), edges: &BTreeSet<(usize, usize)>| -> BTreeSet<usize> {
            let mut seen = BTreeSet::new();
            let mut stack = alloc::vec![from];
            while let Some(cur) = stack.pop() {
                for &(a, b) in edges.iter() {
                    if a == cur && (a, b) != skip && seen.insert(b) {
                        stack.push(b);
                    }
                }
            }
            seen
        };
    let reduced: BTreeSet<(String, String)> = edges
        .iter()
        .filter(|&&(i, j)| !reach(i, (i, j), &edges).contains(&j))
        .map(|&(i, j)| (events[i].id.clone(), events[j].id.clone()))
        .collect();

    let chron = Chronology {
        events: events.iter().map(|e| e.id.clone()).collect(),
        edges: reduced,
    };
    Ok((chron, diags))
}

/// Tarjan's strongly connected components over event indices.
fn tarjan_sccs(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<Vec<usize>> {
    struct State {
        succ: BTreeMap<usize, Vec<usize>>,
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        out: Vec<Vec<usize>>,
    }
    fn strongconnect(st: &mut State, v: usize) {
        st.index[v] = Some(st.next);
        st.low[v] = st.next;
        st.next += 1;
        st.stack.push(v);
        st.on_stack[v] = true;
        let nexts = st.succ.get(&v).cloned().unwrap_or_default();
        for w in nexts {
            if st.index[w].is_none() {
                strongconnect(st, w);
                st.low[v] = st.low[v].min(st.low[w]);
            } else if st.on_stack[w] {
                st.low[v] = st.low[v].min(st.index[w].unwrap());
            }
        }
        if st.low[v] == st.index[v].unwrap() {
            let mut comp = Vec::new();
            loop {
                let w = st.stack.pop().unwrap();
                st.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            comp.sort_unstable();
            st.out.push(comp);
        }
    }
    let mut succ: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in edges {
        succ.entry(a).or_default().push(b);
    }
    let mut st = State {
        succ,
        index: alloc::vec![None; n],
        low: alloc::vec![0; n],
        on_stack: alloc::vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for v in 0..n {
        if st.index[v].is_none() {
            strongconnect(&mut st, v);
        }
    }
    st.out
}
