//! JSON export of a parsed document.
//!
//! The layout is stable: object keys appear in the order given by the
//! structs below, machines in declaration order, region references and
//! chronology edges sorted. Two exports of the same document are
//! byte-identical.

use serde::Serialize;

use crate::dsl::Document;
use tm_core::{StageRef, TMModel};

#[derive(Serialize)]
struct JsonStage<'a> {
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    disambiguator: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    number: Option<u32>,
}

#[derive(Serialize)]
struct JsonMachine<'a> {
    id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent: Option<&'a str>,
    children: Vec<&'a str>,
    stages: Vec<JsonStage<'a>>,
}

#[derive(Serialize)]
struct JsonRef<'a> {
    machine: &'a str,
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    disambiguator: Option<&'a str>,
}

#[derive(Serialize)]
struct JsonArc<'a> {
    from: JsonRef<'a>,
    to: JsonRef<'a>,
    thing: &'a str,
}

#[derive(Serialize)]
struct JsonTrigger<'a> {
    from: JsonRef<'a>,
    to: JsonRef<'a>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
}

#[derive(Serialize)]
struct JsonEvent<'a> {
    id: &'a str,
    region: Vec<JsonRef<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    time: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    desc: Option<&'a str>,
}

#[derive(Serialize)]
struct JsonEdge<'a> {
    before: &'a str,
    after: &'a str,
}

#[derive(Serialize)]
struct JsonChronology<'a> {
    events: Vec<&'a str>,
    edges: Vec<JsonEdge<'a>>,
}

#[derive(Serialize)]
struct JsonDocument<'a> {
    name: &'a str,
    version: &'a str,
    simplified: u8,
    machines: Vec<JsonMachine<'a>>,
    arcs: Vec<JsonArc<'a>>,
    triggers: Vec<JsonTrigger<'a>>,
    events: Vec<JsonEvent<'a>>,
    chronology: JsonChronology<'a>,
}

fn json_ref<'a>(r: &'a StageRef) -> JsonRef<'a> {
    JsonRef {
        machine: &r.machine,
        kind: r.kind.as_str(),
        disambiguator: r.disambiguator.as_deref(),
    }
}

/// Renders the document as pretty-printed JSON with a trailing newline.
pub fn export(doc: &Document) -> String {
    let model: &TMModel = &doc.model;
    let machines = model
        .pre_order()
        .into_iter()
        .map(|i| {
            let m = &model.machines()[i];
            JsonMachine {
                id: &m.id,
                parent: m.parent.map(|p| model.machines()[p].id.as_str()),
                children: m
                    .children
                    .iter()
                    .map(|&c| model.machines()[c].id.as_str())
                    .collect(),
                stages: m
                    .stages
                    .iter()
                    .map(|s| JsonStage {
                        kind: s.kind.as_str(),
                        disambiguator: s.disambiguator.as_deref(),
                        number: s.number,
                    })
                    .collect(),
            }
        })
        .collect();
    let arcs = model
        .arcs
        .iter()
        .map(|a| JsonArc {
            from: json_ref(&a.from),
            to: json_ref(&a.to),
            thing: &a.thing,
        })
        .collect();
    let triggers = model
        .triggers
        .iter()
        .map(|t| JsonTrigger {
            from: json_ref(&t.from),
            to: json_ref(&t.to),
            label: t.label.as_deref(),
        })
        .collect();
    let events = doc
        .events
        .iter()
        .map(|e| {
            let mut region: Vec<&StageRef> = e.region.iter().collect();
            region.sort_by_key(|r| model.sort_key(r));
            JsonEvent {
                id: &e.id,
                region: region.into_iter().map(json_ref).collect(),
                time: e.time,
                desc: e.desc.as_deref(),
            }
        })
        .collect();
    let chronology = JsonChronology {
        events: doc.chronology.events.iter().map(String::as_str).collect(),
        edges: doc
            .chronology
            .edges
            .iter()
            .map(|(b, a)| JsonEdge {
                before: b,
                after: a,
            })
            .collect(),
    };
    let json = JsonDocument {
        name: &model.metadata.name,
        version: &model.metadata.version,
        simplified: model.simplified_level().unwrap_or(0),
        machines,
        arcs,
        triggers,
        events,
        chronology,
    };
    let mut text = serde_json::to_string_pretty(&json).expect("serializable");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;

    #[test]
    fn export_is_deterministic_and_complete() {
        let text = "\
machine A {
  stage create;
  stage process x @3;
  machine Inner {
    stage process;
  }
}
flow s: A.create -> A.process[x];
trigger go: A.process[x] ~> Inner.process;
event E1 {
  region: A.process[x], A.create;
  time: 4;
  desc: \"go\";
}
event E2 {
  region: Inner.process;
}
chronology {
  E1 -> E2;
}
";
        let doc = parse(text, "ex.tm").document.expect("clean");
        let a = export(&doc);
        let b = export(&doc);
        assert_eq!(a, b);
        assert!(a.ends_with('\n'));
        let value: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(value["name"], "ex");
        assert_eq!(value["simplified"], 0);
        assert_eq!(value["machines"][0]["id"], "A");
        assert_eq!(value["machines"][0]["children"][0], "Inner");
        assert_eq!(value["machines"][1]["parent"], "A");
        assert_eq!(value["machines"][0]["stages"][1]["kind"], "process");
        assert_eq!(value["machines"][0]["stages"][1]["number"], 3);
        assert_eq!(value["arcs"][0]["thing"], "s");
        assert_eq!(value["arcs"][0]["from"]["machine"], "A");
        assert_eq!(value["triggers"][0]["label"], "go");
        // The unsorted source region comes out sorted.
        assert_eq!(value["events"][0]["region"][0]["kind"], "create");
        assert_eq!(value["events"][0]["time"], 4);
        assert_eq!(value["chronology"]["edges"][0]["before"], "E1");
        // Absent options are omitted, not null.
        assert!(value["events"][1].get("time").is_none());
        assert!(value["machines"][0]["stages"][0]
            .get("disambiguator")
            .is_none());
    }
}
