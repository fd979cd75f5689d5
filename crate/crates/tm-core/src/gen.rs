//! Seeded generators for valid models, event groupings, and targeted
//! invalid mutations. Everything here is deterministic in the seed, so
//! test failures reproduce exactly.
//!
//! Generated models are *clean by construction*: machines form transport
//! chains wired only through legal stage adjacencies, labels stay
//! consistent except at relabeling Process stages, and triggers connect
//! otherwise unrelated chains. `validate` returns nothing at all for
//! them — errors or warnings — which the tests pin down.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::event::{compose_events, elementary_events, infer_precedence, Chronology, TMEvent};
use crate::model::{DiagCode, FlowArc, StageKind, StageRef, TMModel};
use crate::validate::legal_intra;

/// Small splitmix64 generator; plenty for test-data purposes.
#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform-ish value in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    pub fn chance(&mut self, percent: u64) -> bool {
        self.below(100) < percent
    }
}

/// Builds a random model that validates with no findings at all.
///
/// The model holds one to three transport chains. A chain is one to
/// three machines: the first creates and sends, middle machines relay,
/// the last receives and processes. Machines sometimes nest inside their
/// predecessor and Process stages sometimes relabel the thing. Separate
/// chains are sometimes linked by a Process-to-Create trigger.
pub fn random_model(seed: u64) -> TMModel {
    let things = ["parcel", "signal", "report", "order", "sample"];
    let mut rng = Rng::new(seed);
    let mut b = TMModel::builder();
    b.metadata(&format!("gen-{seed}"), "");
    let n_chains = 1 + rng.below(3) as usize;
    let mut machine_n = 0usize;
    let mut heads: Vec<StageRef> = Vec::new(); // each chain's Create
    let mut tails: Vec<StageRef> = Vec::new(); // each chain's final Process
    let mut number = 1u32;

    for c in 0..n_chains {
        let len = 1 + rng.below(3) as usize;
        let mut thing = format!("{}{c}", things[rng.below(5) as usize]);
        let ids: Vec<String> = (0..len)
            .map(|_| {
                let id = format!("M{machine_n}");
                machine_n += 1;
                id
            })
            .collect();
        for (i, id) in ids.iter().enumerate() {
            let parent = if i > 0 && rng.chance(30) {
                Some(ids[i - 1].as_str())
            } else {
                None
            };
            b.add_machine(parent, id).unwrap();
        }

        // One closure per stage so annotation stays uniform.
        let mut stage = |b: &mut crate::model::TMModelBuilder,
                         rng: &mut Rng,
                         machine: &str,
                         kind: StageKind,
                         d: Option<&str>| {
            b.add_stage(machine, kind, d, None).unwrap();
            let r = StageRef::new(machine, kind, d);
            if rng.chance(60) {
                b.annotate(&r, number).unwrap();
            }
            number += 1;
            r
        };

        if len == 1 {
            let m = &ids[0];
            let create = stage(&mut b, &mut rng, m, StageKind::Create, None);
            let process = stage(&mut b, &mut rng, m, StageKind::Process, None);
            b.add_flow(create.clone(), process.clone(), &thing);
            heads.push(create);
            tails.push(process);
        } else {
            // First machine: create [-> process] -> release -> transfer.
            let m = &ids[0];
            let create = stage(&mut b, &mut rng, m, StageKind::Create, None);
            heads.push(create.clone());
            let mut cur = create;
            if rng.chance(40) {
                let p = stage(&mut b, &mut rng, m, StageKind::Process, None);
                b.add_flow(cur, p.clone(), &thing);
                cur = p;
            }
            let rel = stage(&mut b, &mut rng, m, StageKind::Release, None);
            b.add_flow(cur, rel.clone(), &thing);
            let tr = stage(&mut b, &mut rng, m, StageKind::Transfer, None);
            b.add_flow(rel, tr.clone(), &thing);
            let mut outgoing = tr;

            // Middle machines: transfer[in] -> receive [-> process]
            // -> release -> transfer[out].
            for m in &ids[1..len - 1] {
                let t_in = stage(&mut b, &mut rng, m, StageKind::Transfer, Some("in"));
                b.add_flow(outgoing, t_in.clone(), &thing);
                let rc = stage(&mut b, &mut rng, m, StageKind::Receive, None);
                b.add_flow(t_in, rc.clone(), &thing);
                let mut cur = rc;
                if rng.chance(50) {
                    let p = stage(&mut b, &mut rng, m, StageKind::Process, None);
                    b.add_flow(cur, p.clone(), &thing);
                    cur = p;
                    if rng.chance(40) {
                        // Process may relabel what it passes on.
                        thing.push('x');
                    }
                }
                let rel = stage(&mut b, &mut rng, m, StageKind::Release, None);
                b.add_flow(cur, rel.clone(), &thing);
                let t_out = stage(&mut b, &mut rng, m, StageKind::Transfer, Some("out"));
                b.add_flow(rel, t_out.clone(), &thing);
                outgoing = t_out;
            }

            // Last machine: transfer -> receive -> process.
            let m = &ids[len - 1];
            let tr = stage(&mut b, &mut rng, m, StageKind::Transfer, None);
            b.add_flow(outgoing, tr.clone(), &thing);
            let rc = stage(&mut b, &mut rng, m, StageKind::Receive, None);
            b.add_flow(tr, rc.clone(), &thing);
            let p = stage(&mut b, &mut rng, m, StageKind::Process, None);
            b.add_flow(rc, p.clone(), &thing);
            tails.push(p);
        }
    }

    // Triggers between distinct chains: a finished chain pokes another
    // chain's Create. No flow path connects the chains, so these stay
    // quiet in validation.
    if n_chains >= 2 {
        for _ in 0..rng.below(3) {
            let from = rng.below(n_chains as u64) as usize;
            let to = rng.below(n_chains as u64) as usize;
            if from != to {
                b.add_trigger(tails[from].clone(), heads[to].clone(), None);
            }
        }
    }

    b.build()
}

/// Random contiguous grouping of the model's elementary events: each
/// group is a run of stages linked one-to-one by flow arcs, suitable for
/// [`compose_events`]. Ungrouped stages stay singletons.
pub fn random_grouping(model: &TMModel, seed: u64) -> Vec<Vec<String>> {
    let mut rng = Rng::new(seed);
    let elementary = elementary_events(model).expect("generator models are valid");
    let mut groups = Vec::new();
    let mut used: BTreeSet<&StageRef> = BTreeSet::new();
    for e in &elementary {
        if used.contains(&e.stage) {
            continue;
        }
        used.insert(&e.stage);
        let mut group = alloc::vec![e.id.clone()];
        let mut cur = &e.stage;
        loop {
            // Extend only along an unambiguous link: one arc out of the
            // current stage, one arc into the next, next still free.
            let outs: Vec<&FlowArc> = model.arcs_from(cur).map(|(_, a)| a).collect();
            let [only] = outs.as_slice() else { break };
            let next = &only.to;
            if used.contains(next)
                || model.arcs_into(next).count() != 1
                || model.resolve(next).is_none()
                || !rng.chance(70)
            {
                break;
            }
            used.insert(next);
            group.push(model.ref_dsl(next));
            cur = next;
        }
        if group.len() > 1 || rng.chance(30) {
            groups.push(group);
        }
    }
    groups
}

/// Random events plus the chronology inferred from the flows; the pair
/// is simulation-ready (no dynamic findings).
pub fn random_events(model: &TMModel, seed: u64) -> (Vec<TMEvent>, Chronology) {
    let grouping = random_grouping(model, seed);
    let events = compose_events(model, &grouping).expect("groups are contiguous paths");
    let (chron, _) = infer_precedence(model, &events).expect("regions resolve");
    (events, chron)
}

/// Clones the model and plants exactly one invalid arc, returning the
/// diagnostic code the validator must now report as an error.
pub fn mutate_invalid(model: &TMModel, seed: u64) -> (TMModel, DiagCode) {
    let mut rng = Rng::new(seed);
    let mut m = model.clone();
    let refs = m.all_stage_refs();
    let pick = rng.below(4);

    if pick == 3 && !m.arcs.is_empty() {
        // An arc with an empty thing label.
        let i = rng.below(m.arcs.len() as u64) as usize;
        let mut arc = m.arcs[i].clone();
        arc.thing = String::new();
        m.arcs.push(arc);
        return (m, DiagCode::EmptyThing);
    }
    if pick == 2 {
        // A dangling reference.
        let from = refs[rng.below(refs.len() as u64) as usize].clone();
        m.arcs.push(FlowArc {
            from,
            to: StageRef::new("Ghost", StageKind::Receive, None),
            thing: String::from("x"),
        });
        return (m, DiagCode::DanglingRef);
    }
    if pick == 1 {
        // A non-transfer arc between machines, when there are two.
        let candidates: Vec<(StageRef, StageRef)> = refs
            .iter()
            .flat_map(|a| refs.iter().map(move |b| (a.clone(), b.clone())))
            .filter(|(a, b)| a.machine != b.machine)
            .filter(|(a, b)| !(a.kind == StageKind::Transfer && b.kind == StageKind::Transfer))
            .collect();
        if !candidates.is_empty() {
            let (from, to) = candidates[rng.below(candidates.len() as u64) as usize].clone();
            m.arcs.push(FlowArc {
                from,
                to,
                thing: String::from("x"),
            });
            return (m, DiagCode::CrossMachineNonTransfer);
        }
    }
    // Default: an illegal same-machine adjacency. Every generated machine
    // has at least one illegal ordered pair.
    let candidates: Vec<(StageRef, StageRef)> = refs
        .iter()
        .flat_map(|a| refs.iter().map(move |b| (a.clone(), b.clone())))
        .filter(|(a, b)| a.machine == b.machine && a != b)
        .filter(|(a, b)| !legal_intra(a.kind, b.kind))
        .collect();
    let (from, to) = candidates[rng.below(candidates.len() as u64) as usize].clone();
    m.arcs.push(FlowArc {
        from,
        to,
        thing: String::from("x"),
    });
    (m, DiagCode::IllegalAdjacency)
}
