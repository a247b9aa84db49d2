//! Engine and evaluation harness for four-role multi-agent diagnostic
//! deliberation over chat-completion backends.
//!
//! The crate is organized around the run pipeline:
//!
//! * [`case`] — case-file model, validation, and presentation rendering
//! * [`gateway`] — chat backends (HTTP and scripted) with retries and audit logging
//! * [`engine`] — the four-role roster and deterministic turn-taking protocol
//! * [`outcome`] — recorder-summary parsing, grading, and bias-hallucination checks
//! * [`metrics`] — accuracy aggregation and Fleiss' kappa consistency statistics
//! * [`harness`] — end-to-end run/replay orchestration and report emission
//! * [`fixtures`] — the bundled synthetic 16-scenario scripted fixture

pub mod bias;
pub mod case;
pub mod normalize;

pub use bias::BiasKind;
pub use case::{
    parse_case_file, render_presentation, validate_case_set, CaseError, CaseScenario,
    DiagnosisSpec, Finding, PresentationSection, SectionKind, ValidationReport,
};
pub use normalize::normalize_label;
