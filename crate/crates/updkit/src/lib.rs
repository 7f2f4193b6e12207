//! Toolkit for unit-level process diagrams (UPDs) in refinery design.
//!
//! A UPD is a directed graph whose nodes are processing units (crude
//! distillation, FCC, hydrotreaters, ...) and whose edges are material
//! flows. Every edge must respect the hard compatibility constraint: the
//! source unit's output material set intersects the target unit's input
//! material set.
//!
//! The crate is organized around that constraint:
//!
//! - [`kb`] — knowledge-base model: materials, unit I/O schemas, motifs,
//!   critical-path rules, name canonicalization.
//! - [`graph`] — the process-graph model, compatibility checking, per-unit
//!   I/O rule validation, and reachability.
//! - [`metrics`] — scoring: unit-selection F1, chain-of-thought
//!   correctness, exact and approximate graph edit distance, critical-path
//!   coverage, and I/O validity rate.
//! - [`synth`] — topology synthesis: schema/motif retrieval, pluggable
//!   edge proposers, and the iterative constraint-repair loop.
//! - [`datagen`] — rationale-augmented training-data factory with a
//!   four-check validation loop and negative-sample perturbation.
//! - [`adapter`] — generator boundary: wire protocol for remote text
//!   generators, deterministic mock tables, and the rule-based
//!   justification judge.
//! - [`bench`] — benchmark harness: fixture loading, two-stage evaluation
//!   runners, and train/bench disjointness checking.

pub mod adapter;
pub mod assignment;
pub mod bench;
pub mod datagen;
pub mod graph;
pub mod kb;
pub mod metrics;
pub mod rng;
pub mod synth;

pub use graph::{check_phi, parse_graph, serialize_graph, PhiReport, ProcessGraph};
pub use kb::{
    canonicalize_unit_name, load_knowledge_base, validate_knowledge_base, DesignIntent,
    KnowledgeBase,
};
pub use metrics::{approx_nged, cspc, exact_ged, iov, unit_selection_f1, UnitSelection};
