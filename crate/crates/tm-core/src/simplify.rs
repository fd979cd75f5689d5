//! Model simplification for high-level views.
//!
//! Level 1 removes transport plumbing: every Release → Transfer →
//! Transfer → Receive run whose two Transfer stages carry no other arcs
//! and no triggers collapses to a direct Release → Receive arc with the
//! same thing label. Level 2 additionally collapses every machine to a
//! single synthetic Process stage, keeping one arc per (from machine,
//! to machine, label).
//!
//! Both levels preserve the machine-level connection graph exactly: a
//! machine pair is connected after simplification if and only if it was
//! before. Simplified models are marked as such, which exempts them from
//! the strict stage-adjacency rules during validation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{FlowArc, StageKind, StageRef, TMModel};

/// Simplifies to the requested level. Level 0 returns the model
/// unchanged; levels above 2 behave as level 2. Each level is
/// idempotent.
pub fn simplify(model: &TMModel, level: u8) -> TMModel {
    match level {
        0 => model.clone(),
        1 => strip_transport(model),
        _ => collapse_machines(&strip_transport(model)),
    }
}

/// Machine pairs directly connected by a flow arc (cross-machine arcs
/// only; arcs with unresolvable endpoints are ignored).
pub fn flow_projection(model: &TMModel) -> BTreeSet<(String, String)> {
    model
        .arcs
        .iter()
        .filter(|a| model.resolve(&a.from).is_some() && model.resolve(&a.to).is_some())
        .filter(|a| a.from.machine != a.to.machine)
        .map(|a| (a.from.machine.clone(), a.to.machine.clone()))
        .collect()
}

/// Machine pairs directly connected by a trigger arc.
pub fn trigger_projection(model: &TMModel) -> BTreeSet<(String, String)> {
    model
        .triggers
        .iter()
        .filter(|t| model.resolve(&t.from).is_some() && model.resolve(&t.to).is_some())
        .filter(|t| t.from.machine != t.to.machine)
        .map(|t| (t.from.machine.clone(), t.to.machine.clone()))
        .collect()
}

/// Level 1: drop eligible Transfer pairs, bridging Release to Receive.
fn strip_transport(model: &TMModel) -> TMModel {
    let mut ins: BTreeMap<&StageRef, Vec<usize>> = BTreeMap::new();
    let mut outs: BTreeMap<&StageRef, Vec<usize>> = BTreeMap::new();
    for (i, a) in model.arcs.iter().enumerate() {
        ins.entry(&a.to).or_default().push(i);
        outs.entry(&a.from).or_default().push(i);
    }
    let triggered: BTreeSet<&StageRef> = model
        .triggers
        .iter()
        .flat_map(|t| [&t.from, &t.to])
        .collect();

    let single = |m: &BTreeMap<&StageRef, Vec<usize>>, r: &StageRef| -> Option<usize> {
        match m.get(r).map(Vec::as_slice) {
            Some([only]) => Some(*only),
            _ => None,
        }
    };

    let mut removed_stages: BTreeSet<StageRef> = BTreeSet::new();
    let mut removed_arcs: BTreeSet<usize> = BTreeSet::new();
    let mut bridged: BTreeMap<usize, FlowArc> = BTreeMap::new();
    for (i, arc) in model.arcs.iter().enumerate() {
        let t1 = &arc.to;
        if arc.from.kind != StageKind::Release
            || t1.kind != StageKind::Transfer
            || arc.from.machine != t1.machine
            || removed_stages.contains(t1)
            || model.resolve(t1).is_none()
        {
            continue;
        }
        let (Some(j), Some(i_in)) = (single(&outs, t1), single(&ins, t1)) else {
            continue;
        };
        if i_in != i || triggered.contains(t1) {
            continue;
        }
        let t2 = &model.arcs[j].to;
        if t2.kind != StageKind::Transfer
            || t2.machine == t1.machine
            || removed_stages.contains(t2)
            || model.resolve(t2).is_none()
            || triggered.contains(t2)
        {
            continue;
        }
        let (Some(k), Some(j_in)) = (single(&outs, t2), single(&ins, t2)) else {
            continue;
        };
        if j_in != j {
            continue;
        }
        let v = &model.arcs[k].to;
        if v.kind != StageKind::Receive || v.machine != t2.machine {
            continue;
        }
        removed_stages.insert(t1.clone());
        removed_stages.insert(t2.clone());
        removed_arcs.insert(j);
        removed_arcs.insert(k);
        bridged.insert(
            i,
            FlowArc {
                from: arc.from.clone(),
                to: v.clone(),
                thing: arc.thing.clone(),
            },
        );
    }

    let mut b = TMModel::builder();
    b.metadata(&model.metadata.name, &model.metadata.version);
    for mi in model.pre_order() {
        let machine = &model.machines()[mi];
        let parent = machine.parent.map(|p| model.machines()[p].id.as_str());
        b.add_machine(parent, &machine.id).expect("copied machine");
        for stage in &machine.stages {
            let r = StageRef {
                machine: machine.id.clone(),
                kind: stage.kind,
                disambiguator: stage.disambiguator.clone(),
            };
            if removed_stages.contains(&r) {
                continue;
            }
            b.add_stage(
                &machine.id,
                stage.kind,
                stage.disambiguator.as_deref(),
                stage.number,
            )
            .expect("copied stage");
        }
    }
    for (i, arc) in model.arcs.iter().enumerate() {
        if let Some(bridge) = bridged.get(&i) {
            b.add_flow(bridge.from.clone(), bridge.to.clone(), &bridge.thing);
        } else if !removed_arcs.contains(&i) {
            b.add_flow(arc.from.clone(), arc.to.clone(), &arc.thing);
        }
    }
    for t in &model.triggers {
        b.add_trigger(t.from.clone(), t.to.clone(), t.label.as_deref());
    }
    let mut out = b.build();
    out.set_simplified(1);
    out
}

/// Level 2: one synthetic Process stage per machine, one arc per
/// (from machine, to machine, label).
fn collapse_machines(model: &TMModel) -> TMModel {
    let mut b = TMModel::builder();
    b.metadata(&model.metadata.name, &model.metadata.version);
    for mi in model.pre_order() {
        let machine = &model.machines()[mi];
        let parent = machine.parent.map(|p| model.machines()[p].id.as_str());
        b.add_machine(parent, &machine.id).expect("copied machine");
        b.add_stage(&machine.id, StageKind::Process, None, None)
            .expect("synthetic stage");
    }
    let stage_of = |machine: &str| StageRef::new(machine, StageKind::Process, None);
    let arcs: BTreeSet<(String, String, String)> = model
        .arcs
        .iter()
        .filter(|a| model.resolve(&a.from).is_some() && model.resolve(&a.to).is_some())
        .filter(|a| a.from.machine != a.to.machine)
        .map(|a| {
            (
                a.from.machine.clone(),
                a.to.machine.clone(),
                a.thing.clone(),
            )
        })
        .collect();
    for (from, to, thing) in &arcs {
        b.add_flow(stage_of(from), stage_of(to), thing);
    }
    let triggers: BTreeSet<(String, String, Option<String>)> = model
        .triggers
        .iter()
        .filter(|t| model.resolve(&t.from).is_some() && model.resolve(&t.to).is_some())
        .filter(|t| t.from.machine != t.to.machine)
        .map(|t| {
            (
                t.from.machine.clone(),
                t.to.machine.clone(),
                t.label.clone(),
            )
        })
        .collect();
    for (from, to, label) in &triggers {
        b.add_trigger(stage_of(from), stage_of(to), label.as_deref());
    }
    let mut out = b.build();
    out.set_simplified(2);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{structurally_equal, StageKind::*};
    use crate::validate::validate;

    fn r(machine: &str, kind: StageKind, d: Option<&str>) -> StageRef {
        StageRef::new(machine, kind, d)
    }

    /// A.create -> A.release -> A.transfer -> B.transfer -> B.receive
    /// -> B.process.
    fn chain() -> TMModel {
        let mut b = TMModel::builder();
        b.add_machine(None, "A").unwrap();
        b.add_machine(None, "B").unwrap();
        for (m, k) in [
            ("A", Create),
            ("A", Release),
            ("A", Transfer),
            ("B", Transfer),
            ("B", Receive),
            ("B", Process),
        ] {
            b.add_stage(m, k, None, None).unwrap();
        }
        b.add_flow(r("A", Create, None), r("A", Release, None), "parcel");
        b.add_flow(r("A", Release, None), r("A", Transfer, None), "parcel");
        b.add_flow(r("A", Transfer, None), r("B", Transfer, None), "parcel");
        b.add_flow(r("B", Transfer, None), r("B", Receive, None), "parcel");
        b.add_flow(r("B", Receive, None), r("B", Process, None), "parcel");
        b.build()
    }

    #[test]
    fn level_one_bridges_transfer_pairs() {
        let s = simplify(&chain(), 1);
        assert_eq!(s.simplified_level(), Some(1));
        let arcs: Vec<(String, String)> = s
            .arcs
            .iter()
            .map(|a| (a.from.to_string(), a.to.to_string()))
            .collect();
        assert_eq!(
            arcs,
            [
                ("A.create".into(), "A.release".into()),
                ("A.release".into(), "B.receive".into()),
                ("B.receive".into(), "B.process".into()),
            ]
        );
        assert!(s.arcs.iter().all(|a| a.thing == "parcel"));
        // The transfer stages are gone; everything else stays.
        assert!(s.resolve(&r("A", Transfer, None)).is_none());
        assert!(s.resolve(&r("B", Transfer, None)).is_none());
        assert!(s.resolve(&r("A", Create, None)).is_some());
        // No validation errors: simplified models are exempt from strict
        // adjacency.
        assert!(!crate::model::has_errors(&validate(&s)));
    }

    #[test]
    fn machine_connections_survive_both_levels() {
        let m = chain();
        for level in [1, 2] {
            let s = simplify(&m, level);
            assert_eq!(flow_projection(&s), flow_projection(&m), "level {level}");
            assert_eq!(
                trigger_projection(&s),
                trigger_projection(&m),
                "level {level}"
            );
        }
    }

    #[test]
    fn triggered_transfers_are_kept() {
        let mut b = TMModel::builder();
        b.add_machine(None, "A").unwrap();
        b.add_machine(None, "B").unwrap();
        for (m, k) in [
            ("A", Create),
            ("A", Release),
            ("A", Transfer),
            ("B", Transfer),
            ("B", Receive),
            ("B", Process),
        ] {
            b.add_stage(m, k, None, None).unwrap();
        }
        b.add_flow(r("A", Create, None), r("A", Release, None), "parcel");
        b.add_flow(r("A", Release, None), r("A", Transfer, None), "parcel");
        b.add_flow(r("A", Transfer, None), r("B", Transfer, None), "parcel");
        b.add_flow(r("B", Transfer, None), r("B", Receive, None), "parcel");
        b.add_flow(r("B", Receive, None), r("B", Process, None), "parcel");
        b.add_trigger(r("B", Process, None), r("A", Transfer, None), None);
        let m = b.build();
        let s = simplify(&m, 1);
        assert_eq!(s.arcs.len(), 5);
        assert!(s.resolve(&r("A", Transfer, None)).is_some());
    }

    #[test]
    fn fanned_out_transfers_are_kept() {
        let mut b = TMModel::builder();
        b.add_machine(None, "A").unwrap();
        b.add_machine(None, "B").unwrap();
        b.add_machine(None, "C").unwrap();
        for (m, k) in [
            ("A", Release),
            ("A", Transfer),
            ("B", Transfer),
            ("B", Receive),
            ("C", Transfer),
            ("C", Receive),
        ] {
            b.add_stage(m, k, None, None).unwrap();
        }
        b.add_flow(r("A", Release, None), r("A", Transfer, None), "x");
        b.add_flow(r("A", Transfer, None), r("B", Transfer, None), "x");
        b.add_flow(r("A", Transfer, None), r("C", Transfer, None), "x");
        b.add_flow(r("B", Transfer, None), r("B", Receive, None), "x");
        b.add_flow(r("C", Transfer, None), r("C", Receive, None), "x");
        let m = b.build();
        // A.transfer has two outgoing arcs, so no quadruple forms.
        let s = simplify(&m, 1);
        assert_eq!(s.arcs.len(), m.arcs.len());
    }

    #[test]
    fn both_levels_are_idempotent() {
        let m = chain();
        let once = simplify(&m, 1);
        let twice = simplify(&once, 1);
        assert!(structurally_equal(&once, &twice));
        let l2 = simplify(&m, 2);
        let l2_again = simplify(&l2, 2);
        assert!(structurally_equal(&l2, &l2_again));
    }

    #[test]
    fn level_two_collapses_to_machine_graph() {
        let s = simplify(&chain(), 2);
        assert_eq!(s.simplified_level(), Some(2));
        for machine in s.machines() {
            assert_eq!(machine.stages.len(), 1);
            assert_eq!(machine.stages[0].kind, Process);
        }
        assert_eq!(s.arcs.len(), 1);
        assert_eq!(s.arcs[0].from, r("A", Process, None));
        assert_eq!(s.arcs[0].to, r("B", Process, None));
        assert_eq!(s.arcs[0].thing, "parcel");
        assert!(!crate::model::has_errors(&validate(&s)));
    }

    #[test]
    fn relay_machines_survive_level_one() {
        // A sends to B which relays to C; B must not vanish.
        let mut b = TMModel::builder();
        for id in ["A", "B", "C"] {
            b.add_machine(None, id).unwrap();
        }
        b.add_stage("A", Release, None, None).unwrap();
        b.add_stage("A", Transfer, None, None).unwrap();
        b.add_stage("B", Transfer, Some("in"), None).unwrap();
        b.add_stage("B", Receive, None, None).unwrap();
        b.add_stage("B", Release, None, None).unwrap();
        b.add_stage("B", Transfer, Some("out"), None).unwrap();
        b.add_stage("C", Transfer, None, None).unwrap();
        b.add_stage("C", Receive, None, None).unwrap();
        b.add_flow(r("A", Release, None), r("A", Transfer, None), "x");
        b.add_flow(r("A", Transfer, None), r("B", Transfer, Some("in")), "x");
        b.add_flow(r("B", Transfer, Some("in")), r("B", Receive, None), "x");
        b.add_flow(r("B", Receive, None), r("B", Release, None), "x");
        b.add_flow(r("B", Release, None), r("B", Transfer, Some("out")), "x");
        b.add_flow(r("B", Transfer, Some("out")), r("C", Transfer, None), "x");
        b.add_flow(r("C", Transfer, None), r("C", Receive, None), "x");
        let m = b.build();
        let s = simplify(&m, 1);
        let arcs: Vec<(String, String)> = s
            .arcs
            .iter()
            .map(|a| (a.from.to_string(), a.to.to_string()))
            .collect();
        assert_eq!(
            arcs,
            [
                ("A.release".into(), "B.receive".into()),
                ("B.receive".into(), "B.release".into()),
                ("B.release".into(), "C.receive".into()),
            ]
        );
        assert_eq!(flow_projection(&s), flow_projection(&m));
    }
}
