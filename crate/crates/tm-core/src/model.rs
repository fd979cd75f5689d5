//! The static metamodel: machines, stages, arcs, and diagnostics.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;

/// The five stage kinds a machine can own, in their canonical order.
///
/// The declaration order doubles as the tie-breaking order wherever stages
/// of one machine must be sorted deterministically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StageKind {
    /// Brings a new thing into existence within the machine.
    Create,
    /// Changes a thing's description without changing its identity.
    Process,
    /// Marks a thing as ready to leave the machine.
    Release,
    /// Moves a thing across a machine boundary (outbound or inbound side).
    Transfer,
    /// Accepts an arriving thing into the machine.
    Receive,
}

impl StageKind {
    /// All kinds in canonical order.
    pub const ALL: [StageKind; 5] = [
        StageKind::Create,
        StageKind::Process,
        StageKind::Release,
        StageKind::Transfer,
        StageKind::Receive,
    ];

    /// The lowercase keyword used by the textual form.
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Create => "create",
            StageKind::Process => "process",
            StageKind::Release => "release",
            StageKind::Transfer => "transfer",
            StageKind::Receive => "receive",
        }
    }

    /// Parses a lowercase keyword.
    pub fn from_keyword(word: &str) -> Option<StageKind> {
        StageKind::ALL.iter().copied().find(|k| k.as_str() == word)
    }
}

impl core::fmt::Display for StageKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A stage owned by a machine. A machine may own at most one stage per
/// `(kind, disambiguator)` pair; the disambiguator separates same-kind
/// stages (e.g. two `process` stages handling different things).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Stage {
    pub kind: StageKind,
    pub disambiguator: Option<String>,
    /// Optional numeric annotation (`@N` in the textual form), carried
    /// verbatim for traceability of hand-numbered diagrams.
    pub number: Option<u32>,
}

/// A machine in the nesting tree. `parent`/`children` are arena indices
/// into [`TMModel::machines`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Machine {
    /// Unique identifier (model-wide).
    pub id: String,
    /// Display name; the textual form has no separate name syntax, so this
    /// equals `id` for parsed models.
    pub name: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub stages: Vec<Stage>,
}

/// A reference to a stage: the owning machine's id plus the stage key.
/// References are resolved against a model; they may dangle, which the
/// validator reports rather than panicking.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StageRef {
    pub machine: String,
    pub kind: StageKind,
    pub disambiguator: Option<String>,
}

impl StageRef {
    pub fn new(machine: &str, kind: StageKind, disambiguator: Option<&str>) -> StageRef {
        StageRef {
            machine: machine.to_owned(),
            kind,
            disambiguator: disambiguator.map(|d| d.to_owned()),
        }
    }
}

impl core::fmt::Display for StageRef {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}.{}", self.machine, self.kind)?;
        if let Some(d) = &self.disambiguator {
            write!(f, "[{d}]")?;
        }
        Ok(())
    }
}

/// A solid arc: a thing moving from one stage to the next.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowArc {
    pub from: StageRef,
    pub to: StageRef,
    /// Label of the thing in transit; never empty in a well-formed model.
    pub thing: String,
}

/// A dashed arc: the source stage's activity starts the target's flow.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TriggerArc {
    pub from: StageRef,
    pub to: StageRef,
    pub label: Option<String>,
}

/// Model-level bookkeeping. The textual form has no metadata syntax, so
/// parsed models take their name from the source file; structural equality
/// helpers ignore this struct.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Metadata {
    pub name: String,
    pub version: String,
}

/// A static model: a machine tree plus flow and trigger arcs.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TMModel {
    machines: Vec<Machine>,
    roots: Vec<usize>,
    pub arcs: Vec<FlowArc>,
    pub triggers: Vec<TriggerArc>,
    pub metadata: Metadata,
    /// Set by `simplify`; simplified models are exempt from the strict
    /// stage-adjacency rules.
    simplified: Option<u8>,
}

impl TMModel {
    pub fn builder() -> TMModelBuilder {
        TMModelBuilder::new()
    }

    /// All machines in arena order (insertion order; parsed models insert
    /// depth-first, so this is also pre-order).
    pub fn machines(&self) -> &[Machine] {
        &self.machines
    }

    /// Indices of the top-level machines.
    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    /// Simplification level, if this model was produced by `simplify`.
    pub fn simplified_level(&self) -> Option<u8> {
        self.simplified
    }

    pub(crate) fn set_simplified(&mut self, level: u8) {
        self.simplified = Some(level);
    }

    /// Looks up a machine by id.
    pub fn machine_index(&self, id: &str) -> Option<usize> {
        self.machines.iter().position(|m| m.id == id)
    }

    /// Machine indices in pre-order (roots first, each followed by its
    /// subtree in declaration order).
    pub fn pre_order(&self) -> Vec<usize> {
        fn walk(model: &TMModel, idx: usize, out: &mut Vec<usize>) {
            out.push(idx);
            for &c in &model.machines[idx].children {
                walk(model, c, out);
            }
        }
        let mut out = Vec::new();
        for &r in &self.roots {
            walk(self, r, &mut out);
        }
        out
    }

    /// Ids along the path from the root to this machine, inclusive.
    pub fn machine_path(&self, mut idx: usize) -> Vec<&str> {
        let mut rev = Vec::new();
        loop {
            rev.push(self.machines[idx].id.as_str());
            match self.machines[idx].parent {
                Some(p) => idx = p,
                None => break,
            }
        }
        rev.reverse();
        rev
    }

    /// Path string with a chosen separator, e.g. `UAV/Control`.
    pub fn path_string(&self, idx: usize, sep: &str) -> String {
        self.machine_path(idx).join(sep)
    }

    /// Resolves a reference to `(machine index, stage index)`.
    pub fn resolve(&self, r: &StageRef) -> Option<(usize, usize)> {
        let mi = self.machine_index(&r.machine)?;
        let si = self.machines[mi]
            .stages
            .iter()
            .position(|s| s.kind == r.kind && s.disambiguator == r.disambiguator)?;
        Some((mi, si))
    }

    /// Canonical one-token form of a stage reference for traces and DOT
    /// node ids: machine path joined with `/`, then `:kind`, then the
    /// disambiguator in brackets. Dangling references fall back to the
    /// bare machine id.
    pub fn ref_token(&self, r: &StageRef) -> String {
        let path = match self.machine_index(&r.machine) {
            Some(mi) => self.path_string(mi, "/"),
            None => r.machine.clone(),
        };
        let mut s = path;
        s.push(':');
        s.push_str(r.kind.as_str());
        if let Some(d) = &r.disambiguator {
            s.push('[');
            s.push_str(d);
            s.push(']');
        }
        s
    }

    /// Dotted form of a stage reference for the textual format: full
    /// machine path joined with `.`, then the kind, then `[disambiguator]`.
    pub fn ref_dsl(&self, r: &StageRef) -> String {
        let path = match self.machine_index(&r.machine) {
            Some(mi) => self.path_string(mi, "."),
            None => r.machine.clone(),
        };
        let mut s = path;
        s.push('.');
        s.push_str(r.kind.as_str());
        if let Some(d) = &r.disambiguator {
            s.push('[');
            s.push_str(d);
            s.push(']');
        }
        s
    }

    /// Deterministic sort key for a stage reference: machine path, then
    /// kind rank, then disambiguator. Dangling machines sort by their id.
    pub fn sort_key(&self, r: &StageRef) -> (String, u8, String) {
        let path = match self.machine_index(&r.machine) {
            Some(mi) => self.path_string(mi, "/"),
            None => r.machine.clone(),
        };
        (
            path,
            r.kind as u8,
            r.disambiguator.clone().unwrap_or_default(),
        )
    }

    /// Every stage in the model as a reference, machines in pre-order and
    /// stages in declaration order.
    pub fn all_stage_refs(&self) -> Vec<StageRef> {
        let mut out = Vec::new();
        for mi in self.pre_order() {
            for s in &self.machines[mi].stages {
                out.push(StageRef {
                    machine: self.machines[mi].id.clone(),
                    kind: s.kind,
                    disambiguator: s.disambiguator.clone(),
                });
            }
        }
        out
    }

    /// Flow arcs leaving a stage, in arc order.
    pub fn arcs_from<'a>(&'a self, r: &'a StageRef) -> impl Iterator<Item = (usize, &'a FlowArc)> {
        self.arcs
            .iter()
            .enumerate()
            .filter(move |(_, a)| &a.from == r)
    }

    /// Flow arcs entering a stage, in arc order.
    pub fn arcs_into<'a>(&'a self, r: &'a StageRef) -> impl Iterator<Item = (usize, &'a FlowArc)> {
        self.arcs
            .iter()
            .enumerate()
            .filter(move |(_, a)| &a.to == r)
    }
}

/// Errors from [`TMModelBuilder`] operations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BuildError {
    DuplicateMachine(String),
    UnknownMachine(String),
    DuplicateStage(StageRef),
}

impl core::fmt::Display for BuildError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            BuildError::DuplicateMachine(id) => write!(f, "duplicate machine id `{id}`"),
            BuildError::UnknownMachine(id) => write!(f, "unknown machine `{id}`"),
            BuildError::DuplicateStage(r) => write!(f, "duplicate stage `{r}`"),
        }
    }
}

/// Incremental model construction. Machine ids are unique and parents must
/// exist before their children (which structurally guarantees a tree);
/// arcs, by contrast, are accepted unchecked — dangling references are the
/// validator's business, not the builder's.
#[derive(Clone, Debug, Default)]
pub struct TMModelBuilder {
    model: TMModel,
}

impl TMModelBuilder {
    pub fn new() -> TMModelBuilder {
        TMModelBuilder::default()
    }

    pub fn metadata(&mut self, name: &str, version: &str) -> &mut Self {
        self.model.metadata = Metadata {
            name: name.to_owned(),
            version: version.to_owned(),
        };
        self
    }

    /// Adds a machine under `parent` (or as a root).
    pub fn add_machine(&mut self, parent: Option<&str>, id: &str) -> Result<(), BuildError> {
        if self.model.machine_index(id).is_some() {
            return Err(BuildError::DuplicateMachine(id.to_owned()));
        }
        let parent_idx = match parent {
            Some(p) => Some(
                self.model
                    .machine_index(p)
                    .ok_or_else(|| BuildError::UnknownMachine(p.to_owned()))?,
            ),
            None => None,
        };
        let idx = self.model.machines.len();
        self.model.machines.push(Machine {
            id: id.to_owned(),
            name: id.to_owned(),
            parent: parent_idx,
            children: Vec::new(),
            stages: Vec::new(),
        });
        match parent_idx {
            Some(p) => self.model.machines[p].children.push(idx),
            None => self.model.roots.push(idx),
        }
        Ok(())
    }

    /// Adds a stage; refuses duplicates of the same `(kind, disambiguator)`.
    pub fn add_stage(
        &mut self,
        machine: &str,
        kind: StageKind,
        disambiguator: Option<&str>,
        number: Option<u32>,
    ) -> Result<(), BuildError> {
        let mi = self
            .model
            .machine_index(machine)
            .ok_or_else(|| BuildError::UnknownMachine(machine.to_owned()))?;
        let r = StageRef::new(machine, kind, disambiguator);
        if self.model.resolve(&r).is_some() {
            return Err(BuildError::DuplicateStage(r));
        }
        self.model.machines[mi].stages.push(Stage {
            kind,
            disambiguator: disambiguator.map(|d| d.to_owned()),
            number,
        });
        Ok(())
    }

    /// Declares a stage if absent; no-op (and no error) if it exists.
    /// This is how stages referenced by flows are brought into being.
    pub fn ensure_stage(&mut self, r: &StageRef) -> Result<(), BuildError> {
        if self.model.resolve(r).is_some() {
            return Ok(());
        }
        self.add_stage(&r.machine, r.kind, r.disambiguator.as_deref(), None)
    }

    /// Records a flow arc. References are not checked here.
    pub fn add_flow(&mut self, from: StageRef, to: StageRef, thing: &str) -> &mut Self {
        self.model.arcs.push(FlowArc {
            from,
            to,
            thing: thing.to_owned(),
        });
        self
    }

    /// Records a trigger arc. References are not checked here.
    pub fn add_trigger(&mut self, from: StageRef, to: StageRef, label: Option<&str>) -> &mut Self {
        self.model.triggers.push(TriggerArc {
            from,
            to,
            label: label.map(|l| l.to_owned()),
        });
        self
    }

    /// Sets the numeric annotation on an existing stage.
    pub fn annotate(&mut self, r: &StageRef, number: u32) -> Result<(), BuildError> {
        let (mi, si) = self
            .model
            .resolve(r)
            .ok_or_else(|| BuildError::UnknownMachine(r.machine.clone()))?;
        self.model.machines[mi].stages[si].number = Some(number);
        Ok(())
    }

    pub fn build(self) -> TMModel {
        self.model
    }
}

/// Structural equality that ignores [`Metadata`] (which the textual form
/// cannot carry) and the arena layout of the machine tree, but compares
/// everything observable: the tree walked in pre-order (so root, child,
/// and stage orders all count), every arc and trigger in order, and the
/// simplification marker.
pub fn structurally_equal(a: &TMModel, b: &TMModel) -> bool {
    if a.arcs != b.arcs || a.triggers != b.triggers || a.simplified != b.simplified {
        return false;
    }
    let pa = a.pre_order();
    let pb = b.pre_order();
    if pa.len() != pb.len() || a.machines.len() != b.machines.len() {
        return false;
    }
    pa.iter().zip(pb.iter()).all(|(&ia, &ib)| {
        let ma = &a.machines[ia];
        let mb = &b.machines[ib];
        let parent_a = ma.parent.map(|p| a.machines[p].id.as_str());
        let parent_b = mb.parent.map(|p| b.machines[p].id.as_str());
        ma.id == mb.id && ma.name == mb.name && ma.stages == mb.stages && parent_a == parent_b
    })
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// Finding severity. Errors make a model unusable for downstream
/// operations; warnings do not.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

impl core::fmt::Display for Severity {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Severity::Warning => "warning",
            Severity::Error => "error",
        })
    }
}

/// Stable diagnostic codes. Each code maps to exactly one rule; the set
/// only grows, codes are never renamed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DiagCode {
    /// A flow arc's (from-kind, to-kind) pair is outside the legal table.
    IllegalAdjacency,
    /// A stage reference does not resolve to a declared machine or stage.
    DanglingRef,
    /// A flow arc crosses machines other than transfer-to-transfer.
    CrossMachineNonTransfer,
    /// A trigger's endpoints already lie on one flow path.
    TriggerSameFlow,
    /// A declared stage participates in no arc at all.
    UnreachableStage,
    /// A release stage with no outgoing flow: released but never sent.
    TerminalRelease,
    /// A trigger originates at a stage kind other than process or create.
    TriggerSourceKind,
    /// A trigger targets a stage kind other than create, process, transfer.
    TriggerTargetKind,
    /// Incoming and outgoing thing labels differ at a stage that must
    /// preserve them (release, transfer, receive).
    ThingLabelMismatch,
    /// A flow arc carries an empty thing label.
    EmptyThing,
    /// Two machines declared with the same id (textual form only).
    DuplicateMachine,
    /// One machine declares the same (kind, disambiguator) twice
    /// (textual form only).
    DuplicateStage,
    /// Two events declared with the same id.
    DuplicateEvent,
    /// An event's region is empty.
    RegionEmpty,
    /// An event's region is not weakly connected by flow and trigger arcs.
    RegionDisconnected,
    /// The chronology contains a cycle.
    ChronologyCycle,
    /// A chronology edge names an undeclared event.
    ChronologyUnknownEvent,
    /// A flow arc demands an event order the chronology does not contain.
    ChronologyContradictsFlow,
    /// Event times decrease along a chronology path (edges dominate ticks).
    TimeOrderConflict,
    /// Precedence inference found a cycle of region-to-region feeding;
    /// the offending edges were dropped.
    PrecedenceCycle,
    /// During simulation, a region stage had no instance or activation.
    StarvedStage,
    /// A trigger fired toward a stage outside every enabled region.
    TriggerTargetOutside,
    /// The textual form could not be parsed at this point.
    Syntax,
}

impl DiagCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagCode::IllegalAdjacency => "ILLEGAL_ADJACENCY",
            DiagCode::DanglingRef => "DANGLING_REF",
            DiagCode::CrossMachineNonTransfer => "CROSS_MACHINE_NON_TRANSFER",
            DiagCode::TriggerSameFlow => "TRIGGER_SAME_FLOW",
            DiagCode::UnreachableStage => "UNREACHABLE_STAGE",
            DiagCode::TerminalRelease => "TERMINAL_RELEASE",
            DiagCode::TriggerSourceKind => "TRIGGER_SOURCE_KIND",
            DiagCode::TriggerTargetKind => "TRIGGER_TARGET_KIND",
            DiagCode::ThingLabelMismatch => "THING_LABEL_MISMATCH",
            DiagCode::EmptyThing => "EMPTY_THING",
            DiagCode::DuplicateMachine => "DUPLICATE_MACHINE",
            DiagCode::DuplicateStage => "DUPLICATE_STAGE",
            DiagCode::DuplicateEvent => "DUPLICATE_EVENT",
            DiagCode::RegionEmpty => "REGION_EMPTY",
            DiagCode::RegionDisconnected => "REGION_DISCONNECTED",
            DiagCode::ChronologyCycle => "CHRONOLOGY_CYCLE",
            DiagCode::ChronologyUnknownEvent => "CHRONOLOGY_UNKNOWN_EVENT",
            DiagCode::ChronologyContradictsFlow => "CHRONOLOGY_CONTRADICTS_FLOW",
            DiagCode::TimeOrderConflict => "TIME_ORDER_CONFLICT",
            DiagCode::PrecedenceCycle => "PRECEDENCE_CYCLE",
            DiagCode::StarvedStage => "STARVED_STAGE",
            DiagCode::TriggerTargetOutside => "TRIGGER_TARGET_OUTSIDE",
            DiagCode::Syntax => "SYNTAX",
        }
    }
}

impl core::fmt::Display for DiagCode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a diagnostic is about.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Site {
    Model,
    Machine(String),
    Stage(StageRef),
    /// Index into [`TMModel::arcs`].
    Flow(usize),
    /// Index into [`TMModel::triggers`].
    Trigger(usize),
    Event(String),
    /// Index into the chronology's edge list (sorted order).
    ChronEdge(usize),
}

/// One validation finding. Validators return findings; they never panic
/// on bad models.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagCode,
    pub message: String,
    pub site: Site,
}

impl Diagnostic {
    pub fn error(code: DiagCode, site: Site, message: String) -> Diagnostic {
        Diagnostic {
            severity: Severity::Error,
            code,
            message,
            site,
        }
    }

    pub fn warning(code: DiagCode, site: Site, message: String) -> Diagnostic {
        Diagnostic {
            severity: Severity::Warning,
            code,
            message,
            site,
        }
    }
}

/// True if any finding in the list is an error.
pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_rejects_duplicate_machine() {
        let mut b = TMModel::builder();
        b.add_machine(None, "A").unwrap();
        assert_eq!(
            b.add_machine(None, "A"),
            Err(BuildError::DuplicateMachine("A".into()))
        );
    }

    #[test]
    fn builder_rejects_duplicate_stage_but_ensure_is_idempotent() {
        let mut b = TMModel::builder();
        b.add_machine(None, "A").unwrap();
        b.add_stage("A", StageKind::Create, None, None).unwrap();
        assert!(b.add_stage("A", StageKind::Create, None, None).is_err());
        let r = StageRef::new("A", StageKind::Create, None);
        b.ensure_stage(&r).unwrap();
        let m = b.build();
        assert_eq!(m.machines()[0].stages.len(), 1);
    }

    #[test]
    fn nested_paths_and_tokens() {
        let mut b = TMModel::builder();
        b.add_machine(None, "UAV").unwrap();
        b.add_machine(Some("UAV"), "Control").unwrap();
        b.add_stage("Control", StageKind::Process, Some("gps"), Some(12))
            .unwrap();
        let m = b.build();
        let idx = m.machine_index("Control").unwrap();
        assert_eq!(m.machine_path(idx), ["UAV", "Control"]);
        let r = StageRef::new("Control", StageKind::Process, Some("gps"));
        assert_eq!(m.ref_token(&r), "UAV/Control:process[gps]");
        assert_eq!(m.ref_dsl(&r), "UAV.Control.process[gps]");
    }

    #[test]
    fn pre_order_follows_declaration() {
        let mut b = TMModel::builder();
        b.add_machine(None, "A").unwrap();
        b.add_machine(Some("A"), "B").unwrap();
        b.add_machine(None, "C").unwrap();
        b.add_machine(Some("A"), "D").unwrap();
        let m = b.build();
        let names: Vec<&str> = m
            .pre_order()
            .into_iter()
            .map(|i| m.machines()[i].id.as_str())
            .collect();
        assert_eq!(names, ["A", "B", "D", "C"]);
    }

    #[test]
    fn kind_keywords_round_trip() {
        for k in StageKind::ALL {
            assert_eq!(StageKind::from_keyword(k.as_str()), Some(k));
        }
        assert_eq!(StageKind::from_keyword("made_up"), None);
    }
}
