//! The `tm` command line.
//!
//! Every subcommand reads one `.tm` file, reports findings on stderr
//! (one line each: `severity CODE file:line:col message`), and writes
//! its artifact to stdout. Exit codes: 0 on success, 1 when the model
//! has errors (or, under `--strict`, any findings at all), 2 for usage
//! and file-system problems.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use crate::dsl::{self, Document, ParseResult};
use crate::json;
use tm_core::event::elementary_events;
use tm_core::render::{chronology_dot, to_dot, Rankdir, RenderOptions};
use tm_core::sim::{simulate, SimConfig, SimError};
use tm_core::simplify::simplify;
use tm_core::{Severity, TMModel};

#[derive(Parser)]
#[command(
    name = "tm",
    version,
    about = "Work with thinging-machine models: validate, format, simulate, render"
)]
struct Cli {
    /// Treat warnings as errors when deciding the exit code.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RankdirArg {
    #[value(name = "LR")]
    Lr,
    #[value(name = "TB")]
    Tb,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model and report all findings.
    Validate { file: PathBuf },
    /// Print the canonical form, or rewrite the file in place.
    Fmt {
        file: PathBuf,
        /// Rewrite the file instead of printing.
        #[arg(long)]
        write: bool,
    },
    /// List the declared events, or the elementary events of every stage.
    Events {
        file: PathBuf,
        /// Derive one event per arc-touching stage instead.
        #[arg(long)]
        elementary: bool,
    },
    /// Execute the chronology deterministically and print the trace.
    Simulate {
        file: PathBuf,
        /// Run only these events (comma-separated or repeated).
        #[arg(long, value_delimiter = ',')]
        scenario: Vec<String>,
        /// Stop after this many stage firings.
        #[arg(long, default_value_t = 10_000)]
        max_firings: usize,
        /// Recorded in the trace header; runs are deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render the model (or its chronology) as DOT.
    Dot {
        file: PathBuf,
        /// Tint these events' regions (comma-separated or repeated).
        #[arg(long, value_delimiter = ',')]
        overlay: Vec<String>,
        /// Collapse transfer chains (1) or project to machines (2) first.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        simplify: Option<u8>,
        /// Render the event precedence graph instead of the model.
        #[arg(long)]
        chronology: bool,
        /// Diagram direction.
        #[arg(long, value_enum, default_value = "LR")]
        rankdir: RankdirArg,
        /// Leave trigger arcs out of the diagram.
        #[arg(long)]
        no_triggers: bool,
    },
    /// Export the whole document as JSON.
    Export {
        file: PathBuf,
        /// Select the JSON layout (the only one, but say it explicitly).
        #[arg(long)]
        json: bool,
    },
}

/// Runs the command line against explicit argument and output streams.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    0
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    2
                }
            };
        }
    };
    let strict = cli.strict;
    match cli.command {
        Command::Validate { file } => with_document(&file, strict, out, err, |_, _, _| Ok(())),
        Command::Fmt { file, write } => {
            let path = file.clone();
            with_document(&file, strict, out, err, move |doc, out, err| {
                let text = dsl::format(doc);
                if write {
                    fs::write(&path, &text).map_err(|e| {
                        usage(err, format_args!("cannot write `{}`: {e}", path.display()))
                    })?;
                } else {
                    let _ = write!(out, "{text}");
                }
                Ok(())
            })
        }
        Command::Events { file, elementary } => {
            with_document(&file, strict, out, err, move |doc, out, _| {
                if elementary {
                    let events = elementary_events(&doc.model)
                        .expect("document models have no validation errors");
                    for e in events {
                        let _ = writeln!(out, "{}\t{}", doc.model.ref_dsl(&e.stage), e.thing);
                    }
                } else {
                    for e in &doc.events {
                        let id = match e.time {
                            Some(t) => format!("{}@{t}", e.id),
                            None => e.id.clone(),
                        };
                        let stages = e.region.len();
                        let noun = if stages == 1 { "stage" } else { "stages" };
                        match &e.desc {
                            Some(d) => {
                                let _ = writeln!(out, "{id} [{stages} {noun}] {d}");
                            }
                            None => {
                                let _ = writeln!(out, "{id} [{stages} {noun}]");
                            }
                        }
                    }
                }
                Ok(())
            })
        }
        Command::Simulate {
            file,
            scenario,
            max_firings,
            seed,
        } => {
            let display = file.display().to_string();
            with_parse(&file, strict, out, err, move |doc, result, out, err| {
                let config = SimConfig {
                    scenario: if scenario.is_empty() {
                        None
                    } else {
                        Some(scenario.iter().cloned().collect())
                    },
                    max_firings,
                    seed,
                };
                let trace = match simulate(&doc.model, &doc.events, &doc.chronology, config) {
                    Ok(trace) => trace,
                    Err(e @ SimError::UnknownScenarioEvent(_)) => {
                        return Err(usage(err, format_args!("{e}")));
                    }
                    Err(e) => {
                        // Unreachable with a clean document; report anyway.
                        return Err(usage(err, format_args!("{e}")));
                    }
                };
                let _ = write!(out, "{}", trace.to_text(&doc.model));
                let mut warned = false;
                for diag in &trace.warnings {
                    warned = true;
                    let spanned = dsl::SpannedDiagnostic {
                        diagnostic: diag.clone(),
                        span: result.span_for(&diag.site),
                    };
                    let _ = writeln!(err, "{}", spanned.render(&display));
                }
                if trace.truncated {
                    warned = true;
                    let _ = writeln!(
                        err,
                        "tm: firing cap ({max_firings}) reached; trace truncated"
                    );
                }
                if warned && strict {
                    return Err(1);
                }
                Ok(())
            })
        }
        Command::Dot {
            file,
            overlay,
            simplify: level,
            chronology,
            rankdir,
            no_triggers,
        } => with_document(&file, strict, out, err, move |doc, out, err| {
            if chronology {
                let _ = write!(out, "{}", chronology_dot(&doc.events, &doc.chronology));
                return Ok(());
            }
            let mut overlay_events = Vec::new();
            for id in &overlay {
                match doc.events.iter().find(|e| &e.id == id) {
                    Some(e) => overlay_events.push(e.clone()),
                    None => return Err(usage(err, format_args!("unknown event `{id}`"))),
                }
            }
            let model: TMModel = match level {
                Some(l) => simplify(&doc.model, l),
                None => doc.model.clone(),
            };
            let options = RenderOptions {
                rankdir: match rankdir {
                    RankdirArg::Lr => Rankdir::LR,
                    RankdirArg::Tb => Rankdir::TB,
                },
                hide_triggers: no_triggers,
                overlay: if overlay_events.is_empty() {
                    None
                } else {
                    Some(overlay_events)
                },
            };
            let _ = write!(out, "{}", to_dot(&model, &options));
            Ok(())
        }),
        Command::Export { file, json } => {
            with_document(&file, strict, out, err, move |doc, out, err| {
                if !json {
                    return Err(usage(err, format_args!("export requires `--json`")));
                }
                let _ = write!(out, "{}", json::export(doc));
                Ok(())
            })
        }
    }
}

fn usage(err: &mut dyn Write, message: std::fmt::Arguments<'_>) -> i32 {
    let _ = writeln!(err, "tm: {message}");
    2
}

fn report<D: Display>(err: &mut dyn Write, diags: impl IntoIterator<Item = D>) {
    for d in diags {
        let _ = writeln!(err, "{d}");
    }
}

/// Reads and parses the file, prints every finding, and hands the
/// document plus the parse result to `body`. The final exit code folds
/// in strictness and `body`'s own verdict.
fn with_parse<F>(
    file: &PathBuf,
    strict: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
    body: F,
) -> i32
where
    F: FnOnce(&Document, &ParseResult, &mut dyn Write, &mut dyn Write) -> Result<(), i32>,
{
    let text = match fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => return usage(err, format_args!("cannot read `{}`: {e}", file.display())),
    };
    let display = file.display().to_string();
    let result = dsl::parse(&text, &display);
    report(err, result.diagnostics.iter().map(|d| d.render(&display)));
    let Some(document) = result.document.as_ref() else {
        return 1;
    };
    let warned = result
        .diagnostics
        .iter()
        .any(|d| d.diagnostic.severity == Severity::Warning);
    match body(document, &result, out, err) {
        Err(code) => code,
        Ok(()) => {
            if strict && warned {
                1
            } else {
                0
            }
        }
    }
}

fn with_document<F>(
    file: &PathBuf,
    strict: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
    body: F,
) -> i32
where
    F: FnOnce(&Document, &mut dyn Write, &mut dyn Write) -> Result<(), i32>,
{
    with_parse(file, strict, out, err, |doc, _, out, err| {
        body(doc, out, err)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(args.iter().copied(), &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    fn write_model(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
        let path = dir.path().join(name);
        fs::write(&path, text).unwrap();
        path.display().to_string()
    }

    const GOOD: &str = "\
machine A {
  stage create;
  stage process;
}
flow s: A.create -> A.process;
event E1 {
  region: A.create, A.process;
  desc: \"everything\";
}
";

    #[test]
    fn help_and_version_go_to_stdout() {
        let (code, out, err) = run_str(&["tm", "--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("validate"));
        assert!(err.is_empty());
        let (code, out, _) = run_str(&["tm", "--version"]);
        assert_eq!(code, 0);
        assert!(out.starts_with("tm "));
    }

    #[test]
    fn unknown_flags_are_usage_errors() {
        let (code, out, err) = run_str(&["tm", "validate", "--bogus"]);
        assert_eq!(code, 2);
        assert!(out.is_empty());
        assert!(!err.is_empty());
    }

    #[test]
    fn missing_files_are_usage_errors() {
        let (code, _, err) = run_str(&["tm", "validate", "/nonexistent/x.tm"]);
        assert_eq!(code, 2);
        assert!(err.contains("cannot read"));
    }

    #[test]
    fn validate_is_quiet_on_clean_models() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_model(&dir, "good.tm", GOOD);
        let (code, out, err) = run_str(&["tm", "validate", &path]);
        assert_eq!(code, 0);
        assert!(out.is_empty());
        assert!(err.is_empty());
    }

    #[test]
    fn validate_reports_findings_with_positions() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_model(
            &dir,
            "bad.tm",
            "machine A { stage release; stage process; }\nflow s: A.release -> A.process;\n",
        );
        let (code, out, err) = run_str(&["tm", "validate", &path]);
        assert_eq!(code, 1);
        assert!(out.is_empty());
        assert!(err.contains("error ILLEGAL_ADJACENCY"));
        assert!(err.contains(&format!("{path}:2:19")));
    }

    #[test]
    fn strict_turns_warnings_into_failure() {
        let dir = tempfile::tempdir().unwrap();
        // The declared-but-unused stage only warns.
        let path = write_model(
            &dir,
            "warn.tm",
            "machine A {\n  stage create;\n  stage process;\n  stage release;\n}\nflow s: A.create -> A.process;\n",
        );
        let (code, _, err) = run_str(&["tm", "validate", &path]);
        assert_eq!(code, 0);
        assert!(err.contains("warning UNREACHABLE_STAGE"));
        let (code, _, _) = run_str(&["tm", "--strict", "validate", &path]);
        assert_eq!(code, 1);
    }

    #[test]
    fn fmt_prints_canonical_text_and_rewrites_in_place() {
        let dir = tempfile::tempdir().unwrap();
        let messy = "machine A { stage create; stage process; }\nflow s: A.create -> A.process;\n";
        let path = write_model(&dir, "messy.tm", messy);
        let (code, out, _) = run_str(&["tm", "fmt", &path]);
        assert_eq!(code, 0);
        assert!(out.contains("machine A {\n  stage create;\n  stage process;\n}"));
        let (code, _, _) = run_str(&["tm", "fmt", "--write", &path]);
        assert_eq!(code, 0);
        assert_eq!(
            fs::read_to_string(dir.path().join("messy.tm")).unwrap(),
            out
        );
        // Formatting the canonical text changes nothing.
        let (_, out2, _) = run_str(&["tm", "fmt", &path]);
        assert_eq!(out2, out);
    }

    #[test]
    fn events_lists_declared_and_elementary() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_model(&dir, "good.tm", GOOD);
        let (code, out, _) = run_str(&["tm", "events", &path]);
        assert_eq!(code, 0);
        assert_eq!(out, "E1 [2 stages] everything\n");
        let (code, out, _) = run_str(&["tm", "events", "--elementary", &path]);
        assert_eq!(code, 0);
        assert_eq!(out, "A.create\ts\nA.process\ts\n");
    }

    #[test]
    fn simulate_prints_a_trace_and_rejects_unknown_scenarios() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_model(&dir, "good.tm", GOOD);
        let (code, out, _) = run_str(&["tm", "simulate", &path]);
        assert_eq!(code, 0);
        assert!(out.contains("E1"));
        let (code, _, err) = run_str(&["tm", "simulate", "--scenario", "E9", &path]);
        assert_eq!(code, 2);
        assert!(err.contains("E9"));
    }

    #[test]
    fn dot_renders_model_and_chronology() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_model(&dir, "good.tm", GOOD);
        let (code, out, _) = run_str(&["tm", "dot", &path]);
        assert_eq!(code, 0);
        assert!(out.starts_with("digraph"));
        assert!(out.contains("rankdir=LR"));
        let (code, out, _) = run_str(&["tm", "dot", "--rankdir", "TB", &path]);
        assert_eq!(code, 0);
        assert!(out.contains("rankdir=TB"));
        let (code, out, _) = run_str(&["tm", "dot", "--chronology", &path]);
        assert_eq!(code, 0);
        assert!(out.starts_with("digraph"));
        let (code, _, err) = run_str(&["tm", "dot", "--overlay", "E7", &path]);
        assert_eq!(code, 2);
        assert!(err.contains("unknown event `E7`"));
        let (code, out, _) = run_str(&["tm", "dot", "--overlay", "E1", &path]);
        assert_eq!(code, 0);
        assert!(out.contains("E1"));
    }

    #[test]
    fn export_requires_the_json_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_model(&dir, "good.tm", GOOD);
        let (code, _, err) = run_str(&["tm", "export", &path]);
        assert_eq!(code, 2);
        assert!(err.contains("--json"));
        let (code, out, _) = run_str(&["tm", "export", "--json", &path]);
        assert_eq!(code, 0);
        let value: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(value["machines"][0]["id"], "A");
    }

    #[test]
    fn broken_models_never_produce_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_model(&dir, "broken.tm", "flow s: A.create -> B.process;\n");
        for cmd in [
            vec!["tm", "fmt", &path],
            vec!["tm", "events", &path],
            vec!["tm", "simulate", &path],
            vec!["tm", "dot", &path],
            vec!["tm", "export", "--json", &path],
        ] {
            let (code, out, err) = run_str(&cmd);
            assert_eq!(code, 1, "command {cmd:?}");
            assert!(out.is_empty(), "command {cmd:?} wrote {out}");
            assert!(err.contains("DANGLING_REF"), "command {cmd:?}: {err}");
        }
    }
}
