//! Clinical-case data model and case-file ingestion.
//!
//! A case set is a directory of `*.case.json` files, one scenario per file.
//! Scenarios are authored pre-redacted: presentation text must stop at the
//! point of the initial diagnosis and must not mention the documented wrong
//! diagnosis. [`render_presentation`] enforces the latter as a safety net.

use crate::bias::BiasKind;
use crate::normalize::{fold_text, normalize_label};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("malformed case file{}: {message}", fmt_path(.path))]
    MalformedFile { path: Option<PathBuf>, message: String },
    #[error("schema violation{} at {field}: {message}", fmt_path(.path))]
    SchemaViolation {
        path: Option<PathBuf>,
        field: String,
        message: String,
    },
    #[error("invariant violation{} at {field}: {message}", fmt_path(.path))]
    InvariantViolation {
        path: Option<PathBuf>,
        field: String,
        message: String,
    },
    #[error("wrong-diagnosis label {label:?} leaks into presentation section {section_index}")]
    LeakDetected { label: String, section_index: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_path(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!(" in {}", p.display()),
        None => String::new(),
    }
}

/// Kind of one presentation section. `ImageLegend` carries the textual
/// description that stands in for an image; binary payloads are not allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Demographics,
    History,
    Complaint,
    Examination,
    Investigations,
    ImageLegend,
    Other,
}

impl SectionKind {
    /// Header label used when rendering the presentation into prompt text.
    pub fn header(self) -> &'static str {
        match self {
            SectionKind::Demographics => "Demographics",
            SectionKind::History => "Past Medical History",
            SectionKind::Complaint => "Presenting Complaint",
            SectionKind::Examination => "Examination Findings",
            SectionKind::Investigations => "Preliminary Investigations",
            SectionKind::ImageLegend => "Imaging Legend",
            SectionKind::Other => "Additional Information",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentationSection {
    pub kind: SectionKind,
    pub text: String,
}

/// A diagnosis with the alternative label spellings that count as the same
/// answer. Near-miss adjudication is encoded per case through the alias list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisSpec {
    pub canonical: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl DiagnosisSpec {
    pub fn new(canonical: impl Into<String>, aliases: &[&str]) -> Self {
        Self {
            canonical: canonical.into(),
            aliases: aliases.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// All labels, canonical first.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical.as_str()).chain(self.aliases.iter().map(String::as_str))
    }

    /// Returns the stored label (canonical or alias) whose normalization
    /// equals the candidate's, if any.
    pub fn match_label(&self, candidate: &str) -> Option<&str> {
        let norm = normalize_label(candidate);
        self.labels().find(|l| normalize_label(l) == norm)
    }
}

/// One clinical vignette: the presentation available up to (and before) the
/// point of the initial diagnosis, plus analysis-only metadata.
///
/// `documented_wrong_diagnosis` is never rendered into prompts; it exists so
/// the leak check and the report's wrong-diagnosis column have a source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseScenario {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub source_year: Option<i32>,
    pub presentation: Vec<PresentationSection>,
    pub ground_truth: DiagnosisSpec,
    pub documented_wrong_diagnosis: DiagnosisSpec,
    #[serde(default)]
    pub allowed_biases: BTreeSet<BiasKind>,
}

#[derive(Deserialize)]
struct RawCaseFile {
    id: String,
    title: String,
    #[serde(default)]
    source_year: Option<i32>,
    presentation: Vec<PresentationSection>,
    ground_truth: DiagnosisSpec,
    documented_wrong_diagnosis: DiagnosisSpec,
    #[serde(default)]
    allowed_biases: Vec<String>,
}

/// Parse and validate one case file.
pub fn parse_case_file(raw_bytes: &[u8]) -> Result<CaseScenario, CaseError> {
    parse_case_file_at(raw_bytes, None)
}

fn parse_case_file_at(raw_bytes: &[u8], path: Option<&Path>) -> Result<CaseScenario, CaseError> {
    let text = std::str::from_utf8(raw_bytes).map_err(|e| CaseError::MalformedFile {
        path: path.map(Path::to_path_buf),
        message: format!("not UTF-8: {e}"),
    })?;

    let mut de = serde_json::Deserializer::from_str(text);
    let raw: RawCaseFile = match serde_path_to_error::deserialize(&mut de) {
        Ok(raw) => raw,
        Err(err) => {
            let inner = err.inner();
            if inner.is_syntax() || inner.is_eof() {
                return Err(CaseError::MalformedFile {
                    path: path.map(Path::to_path_buf),
                    message: inner.to_string(),
                });
            }
            return Err(CaseError::SchemaViolation {
                path: path.map(Path::to_path_buf),
                field: err.path().to_string(),
                message: inner.to_string(),
            });
        }
    };

    let mut allowed_biases = BTreeSet::new();
    for (i, name) in raw.allowed_biases.iter().enumerate() {
        let kind =
            BiasKind::from_taxonomy_name(name).ok_or_else(|| CaseError::InvariantViolation {
                path: path.map(Path::to_path_buf),
                field: format!("allowed_biases[{i}]"),
                message: format!("{name:?} is not in the registered bias taxonomy"),
            })?;
        allowed_biases.insert(kind);
    }

    let case = CaseScenario {
        id: raw.id,
        title: raw.title,
        source_year: raw.source_year,
        presentation: raw.presentation,
        ground_truth: raw.ground_truth,
        documented_wrong_diagnosis: raw.documented_wrong_diagnosis,
        allowed_biases,
    };

    if let Some(finding) = case_findings(&case).into_iter().next() {
        return Err(CaseError::InvariantViolation {
            path: path.map(Path::to_path_buf),
            field: finding.field,
            message: finding.message,
        });
    }
    Ok(case)
}

/// One problem found while validating a case or case set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub case_id: Option<String>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.case_id {
            Some(id) => write!(f, "{id}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

fn diagnosis_findings(spec: &DiagnosisSpec, field: &str, out: &mut Vec<Finding>) {
    if spec.canonical.trim().is_empty() {
        out.push(Finding {
            case_id: None,
            field: format!("{field}.canonical"),
            message: "canonical label is empty".into(),
        });
    }
    let canonical_norm = normalize_label(&spec.canonical);
    let mut seen = BTreeSet::new();
    for (i, alias) in spec.aliases.iter().enumerate() {
        let norm = normalize_label(alias);
        if norm == canonical_norm {
            out.push(Finding {
                case_id: None,
                field: format!("{field}.aliases[{i}]"),
                message: format!("alias {alias:?} duplicates the canonical label"),
            });
        } else if !seen.insert(norm) {
            out.push(Finding {
                case_id: None,
                field: format!("{field}.aliases[{i}]"),
                message: format!("alias {alias:?} duplicates an earlier alias after normalization"),
            });
        }
    }
}

/// Structural and leak findings for one scenario; empty iff the scenario is valid.
fn case_findings(case: &CaseScenario) -> Vec<Finding> {
    let mut out = Vec::new();
    if case.id.trim().is_empty() {
        out.push(Finding {
            case_id: None,
            field: "id".into(),
            message: "id is empty".into(),
        });
    }
    if case.presentation.is_empty() {
        out.push(Finding {
            case_id: None,
            field: "presentation".into(),
            message: "presentation has no sections".into(),
        });
    }
    for (i, section) in case.presentation.iter().enumerate() {
        if section.text.trim().is_empty() {
            out.push(Finding {
                case_id: None,
                field: format!("presentation[{i}].text"),
                message: "section text is empty".into(),
            });
        }
        if section.kind == SectionKind::ImageLegend
            && section
                .text
                .chars()
                .any(|c| c.is_control() && !matches!(c, '\n' | '\r' | '\t'))
        {
            out.push(Finding {
                case_id: None,
                field: format!("presentation[{i}].text"),
                message: "image_legend must be a textual figure description, not a binary payload"
                    .into(),
            });
        }
    }
    diagnosis_findings(&case.ground_truth, "ground_truth", &mut out);
    diagnosis_findings(
        &case.documented_wrong_diagnosis,
        "documented_wrong_diagnosis",
        &mut out,
    );
    if normalize_label(&case.ground_truth.canonical)
        == normalize_label(&case.documented_wrong_diagnosis.canonical)
    {
        out.push(Finding {
            case_id: None,
            field: "ground_truth.canonical".into(),
            message: "ground truth equals the documented wrong diagnosis after normalization"
                .into(),
        });
    }
    if let Err(CaseError::LeakDetected {
        label,
        section_index,
    }) = render_presentation(case)
    {
        out.push(Finding {
            case_id: None,
            field: format!("presentation[{section_index}].text"),
            message: format!("documented wrong diagnosis {label:?} appears in the presentation"),
        });
    }
    for f in &mut out {
        f.case_id = Some(case.id.clone());
    }
    out
}

/// Render the presentation sections into the prompt text block, with one
/// labeled header per section, in stored order.
///
/// Refuses to render when any documented-wrong-diagnosis label occurs
/// (after normalization) in a section: that is an authoring error.
pub fn render_presentation(case: &CaseScenario) -> Result<String, CaseError> {
    for (i, section) in case.presentation.iter().enumerate() {
        let folded = fold_text(&section.text);
        for label in case.documented_wrong_diagnosis.labels() {
            let needle = normalize_label(label);
            if !needle.is_empty() && folded.contains(&needle) {
                return Err(CaseError::LeakDetected {
                    label: label.to_string(),
                    section_index: i,
                });
            }
        }
    }
    let mut out = String::new();
    for section in &case.presentation {
        out.push_str("### ");
        out.push_str(section.kind.header());
        out.push_str("\n\n");
        out.push_str(section.text.trim_end());
        out.push_str("\n\n");
    }
    Ok(out)
}

/// Check a whole case set: per-case invariants plus id uniqueness.
pub fn validate_case_set(cases: &[CaseScenario]) -> ValidationReport {
    let mut findings = Vec::new();
    let mut by_id: BTreeMap<&str, usize> = BTreeMap::new();
    for case in cases {
        *by_id.entry(case.id.as_str()).or_default() += 1;
        findings.extend(case_findings(case));
    }
    for (id, count) in by_id {
        if count > 1 {
            findings.push(Finding {
                case_id: Some(id.to_string()),
                field: "id".into(),
                message: format!("duplicate id used by {count} cases"),
            });
        }
    }
    ValidationReport { findings }
}

/// Load every `*.case.json` file in a directory, sorted by file name.
/// Fails on the first unreadable or invalid file.
pub fn load_case_dir(dir: &Path) -> Result<Vec<CaseScenario>, CaseError> {
    let mut cases = Vec::new();
    for path in case_file_paths(dir)? {
        let bytes = std::fs::read(&path).map_err(|source| CaseError::Io {
            path: path.clone(),
            source,
        })?;
        cases.push(parse_case_file_at(&bytes, Some(&path))?);
    }
    Ok(cases)
}

/// Validate a case directory, turning per-file parse failures into findings
/// instead of aborting, then applying the case-set checks.
pub fn validate_case_dir(dir: &Path) -> Result<ValidationReport, CaseError> {
    let mut cases = Vec::new();
    let mut findings = Vec::new();
    for path in case_file_paths(dir)? {
        let bytes = std::fs::read(&path).map_err(|source| CaseError::Io {
            path: path.clone(),
            source,
        })?;
        match parse_case_file_at(&bytes, Some(&path)) {
            Ok(case) => cases.push(case),
            Err(err) => findings.push(Finding {
                case_id: None,
                field: path.display().to_string(),
                message: err.to_string(),
            }),
        }
    }
    let mut report = validate_case_set(&cases);
    findings.append(&mut report.findings);
    Ok(ValidationReport { findings })
}

fn case_file_paths(dir: &Path) -> Result<Vec<PathBuf>, CaseError> {
    let entries = std::fs::read_dir(dir).map_err(|source| CaseError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".case.json"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_case() -> CaseScenario {
        CaseScenario {
            id: "case-12".into(),
            title: "Sudden pleuritic chest pain".into(),
            source_year: Some(2023),
            presentation: vec![
                PresentationSection {
                    kind: SectionKind::Demographics,
                    text: "A young adult, previously well.".into(),
                },
                PresentationSection {
                    kind: SectionKind::Complaint,
                    text: "Sudden left-sided sharp chest pain, easing when sitting forward.".into(),
                },
            ],
            ground_truth: DiagnosisSpec::new("Pneumothorax", &[]),
            documented_wrong_diagnosis: DiagnosisSpec::new("Pulmonary embolism", &["PE"]),
            allowed_biases: [BiasKind::Anchoring].into_iter().collect(),
        }
    }

    fn sample_json() -> String {
        serde_json::to_string_pretty(&sample_case()).unwrap()
    }

    #[test]
    fn parses_valid_case_file() {
        let case = parse_case_file(sample_json().as_bytes()).unwrap();
        assert_eq!(case.id, "case-12");
        assert_eq!(case.ground_truth.canonical, "Pneumothorax");
        assert_eq!(case.presentation.len(), 2);
    }

    #[test]
    fn empty_presentation_is_invariant_violation() {
        let mut v: serde_json::Value = serde_json::from_str(&sample_json()).unwrap();
        v["presentation"] = serde_json::json!([]);
        let err = parse_case_file(v.to_string().as_bytes()).unwrap_err();
        match err {
            CaseError::InvariantViolation { field, .. } => assert_eq!(field, "presentation"),
            other => panic!("expected invariant violation, got {other}"),
        }
    }

    #[test]
    fn ground_truth_equal_to_wrong_diagnosis_is_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&sample_json()).unwrap();
        v["documented_wrong_diagnosis"] = serde_json::json!({"canonical": " PNEUMOTHORAX. "});
        let err = parse_case_file(v.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, CaseError::InvariantViolation { .. }), "{err}");
    }

    #[test]
    fn missing_field_is_schema_violation_naming_the_path() {
        let mut v: serde_json::Value = serde_json::from_str(&sample_json()).unwrap();
        v.as_object_mut().unwrap().remove("ground_truth");
        let err = parse_case_file(v.to_string().as_bytes()).unwrap_err();
        match err {
            CaseError::SchemaViolation { message, .. } => {
                assert!(message.contains("ground_truth"), "{message}")
            }
            other => panic!("expected schema violation, got {other}"),
        }
    }

    #[test]
    fn ill_typed_field_names_the_path() {
        let mut v: serde_json::Value = serde_json::from_str(&sample_json()).unwrap();
        v["presentation"][0]["kind"] = serde_json::json!("xray");
        let err = parse_case_file(v.to_string().as_bytes()).unwrap_err();
        match err {
            CaseError::SchemaViolation { field, .. } => {
                assert!(field.contains("presentation"), "{field}")
            }
            other => panic!("expected schema violation, got {other}"),
        }
    }

    #[test]
    fn syntax_error_is_malformed_file() {
        let err = parse_case_file(b"{not json").unwrap_err();
        assert!(matches!(err, CaseError::MalformedFile { .. }));
    }

    #[test]
    fn out_of_taxonomy_bias_is_invariant_violation() {
        let mut v: serde_json::Value = serde_json::from_str(&sample_json()).unwrap();
        v["allowed_biases"] = serde_json::json!(["anchoring", "hindsight"]);
        let err = parse_case_file(v.to_string().as_bytes()).unwrap_err();
        match err {
            CaseError::InvariantViolation { field, .. } => assert_eq!(field, "allowed_biases[1]"),
            other => panic!("expected invariant violation, got {other}"),
        }
    }

    #[test]
    fn render_orders_sections_and_is_deterministic() {
        let case = sample_case();
        let a = render_presentation(&case).unwrap();
        let b = render_presentation(&case).unwrap();
        assert_eq!(a, b);
        let demo = a.find("### Demographics").unwrap();
        let complaint = a.find("### Presenting Complaint").unwrap();
        assert!(demo < complaint);
        assert!(a.contains("A young adult, previously well."));
    }

    #[test]
    fn render_refuses_wrong_diagnosis_leak() {
        let mut case = sample_case();
        case.presentation[1].text =
            "Pain suggestive of a pulmonary  EMBOLISM according to the referral.".into();
        let err = render_presentation(&case).unwrap_err();
        match err {
            CaseError::LeakDetected { label, section_index } => {
                assert_eq!(label, "Pulmonary embolism");
                assert_eq!(section_index, 1);
            }
            other => panic!("expected leak, got {other}"),
        }
    }

    #[test]
    fn render_checks_aliases_too() {
        let mut case = sample_case();
        case.presentation[0].text = "Referred with suspected pe on arrival.".into();
        // "PE" alias folds to "pe"; the substring occurs in "suspected pe on".
        assert!(render_presentation(&case).is_err());
    }

    #[test]
    fn case_file_round_trips_through_serialization() {
        let case = parse_case_file(sample_json().as_bytes()).unwrap();
        let reserialized = serde_json::to_vec(&case).unwrap();
        let again = parse_case_file(&reserialized).unwrap();
        assert_eq!(case, again);
    }

    #[test]
    fn validate_case_set_flags_duplicates() {
        let a = sample_case();
        let mut b = sample_case();
        b.title = "Another".into();
        let report = validate_case_set(&[a, b]);
        assert!(!report.is_clean());
        assert!(report
            .findings
            .iter()
            .any(|f| f.message.contains("duplicate id")));
    }

    #[test]
    fn validate_case_set_empty_is_clean() {
        assert!(validate_case_set(&[]).is_clean());
    }

    #[test]
    fn alias_matching_uses_normalization() {
        let spec = DiagnosisSpec::new("Miliary tuberculosis", &["Miliary TB"]);
        assert_eq!(spec.match_label("  miliary tb."), Some("Miliary TB"));
        assert_eq!(spec.match_label("MILIARY TUBERCULOSIS"), Some("Miliary tuberculosis"));
        assert_eq!(spec.match_label("sarcoidosis"), None);
    }
}
