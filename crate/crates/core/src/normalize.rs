//! Label normalization shared by case validation and grading.
//!
//! Diagnosis labels are compared only after passing through [`normalize_label`],
//! so authoring differences in casing, spacing, and trailing punctuation do not
//! affect matching. Parenthetical qualifiers are kept as-is.

use unicode_normalization::UnicodeNormalization;

const TERMINAL_PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?'];

/// Case-fold, apply Unicode NFC, and collapse runs of whitespace.
///
/// This is the substring-search form used by the wrong-diagnosis leak check;
/// unlike [`normalize_label`] it does not strip terminal punctuation.
pub fn fold_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Canonicalize a diagnosis label: lowercase, Unicode NFC, trimmed,
/// internal whitespace collapsed, terminal punctuation stripped.
pub fn normalize_label(label: &str) -> String {
    let folded = fold_text(label);
    folded
        .trim_end_matches(TERMINAL_PUNCTUATION)
        .trim_end()
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_case_whitespace_and_terminal_punctuation() {
        assert_eq!(normalize_label("  Miliary TB."), "miliary tb");
        assert_eq!(normalize_label("Pneumothorax"), "pneumothorax");
        assert_eq!(normalize_label("Heart   failure ,"), "heart failure");
    }

    #[test]
    fn empty_input_is_identity() {
        assert_eq!(normalize_label(""), "");
    }

    #[test]
    fn parenthetical_qualifiers_are_retained() {
        assert_eq!(
            normalize_label("Bacterial pneumonia (Legionella pneumoniae)"),
            "bacterial pneumonia (legionella pneumoniae)"
        );
    }

    #[test]
    fn idempotent() {
        for s in ["  Miliary TB.", "a.b.", "x ...", "", "Crohn's disease?!"] {
            let once = normalize_label(s);
            assert_eq!(normalize_label(&once), once);
        }
    }
}
