//! Core metamodel and algorithms for Thinging Machine models.
//!
//! A *machine* is a nested component that handles *things* through five
//! stage kinds (create, process, release, transfer, receive). Things move
//! along solid *flow* arcs; dashed *trigger* arcs start one flow from
//! another. On top of the static model sit *events* (regions of stages,
//! optionally timed) and a *chronology* (a DAG of event precedence), which
//! together drive a deterministic simulator.
//!
//! This crate is `no_std` (with `alloc`) and carries no IO: parsing,
//! file formats, and the command-line front end live in the companion
//! `tm-tools` crate.
//!
//! Module map:
//! - [`model`]: machines, stages, arcs, diagnostics.
//! - [`validate`]: structural validation and flow reachability.
//! - [`event`]: elementary events, composition, dynamic-model validation,
//!   precedence inference.
//! - [`sim`]: deterministic chronology-driven simulation and trace text.
//! - [`render`]: DOT output for models and chronologies.
//! - [`simplify`]: transfer-chain collapsing and machine-level graphs.
//! - [`gen`]: seeded random model generation for tests and fuzzing.
//!
//! # Example
//!
//! ```
//! use tm_core::validate::validate;
//! use tm_core::{StageKind, StageRef, TMModelBuilder};
//!
//! let mut b = TMModelBuilder::new();
//! b.metadata("demo", "");
//! b.add_machine(None, "M")?;
//! b.add_stage("M", StageKind::Create, Some("x"), None)?;
//! b.add_stage("M", StageKind::Process, Some("x"), None)?;
//! b.add_flow(
//!     StageRef::new("M", StageKind::Create, Some("x")),
//!     StageRef::new("M", StageKind::Process, Some("x")),
//!     "x",
//! );
//! let model = b.build();
//! assert!(validate(&model).is_empty());
//! # Ok::<(), tm_core::model::BuildError>(())
//! ```

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod event;
pub mod gen;
pub mod model;
pub mod render;
pub mod sim;
pub mod simplify;
pub mod validate;

pub use model::{
    has_errors, structurally_equal, DiagCode, Diagnostic, FlowArc, Machine, Metadata, Severity,
    Site, Stage, StageKind, StageRef, TMModel, TMModelBuilder, TriggerArc,
};
