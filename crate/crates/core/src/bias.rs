//! Registered cognitive-bias taxonomy.
//!
//! Case files declare which biases were adjudicated as genuinely present, and
//! the summary parser maps free-text mentions onto the same taxonomy via
//! keyword stems. Anything outside the taxonomy is treated as unrecognized
//! chatter by the parser rather than a taxonomy member.

use serde::{Deserialize, Serialize};
use std::fmt;

/// The registered bias taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    Anchoring,
    Availability,
    Confirmation,
    Knowledge,
    PrematureClosure,
}

impl BiasKind {
    pub const ALL: [BiasKind; 5] = [
        BiasKind::Anchoring,
        BiasKind::Availability,
        BiasKind::Confirmation,
        BiasKind::Knowledge,
        BiasKind::PrematureClosure,
    ];

    /// Canonical name as used in case files and reports.
    pub fn taxonomy_name(self) -> &'static str {
        match self {
            BiasKind::Anchoring => "anchoring",
            BiasKind::Availability => "availability",
            BiasKind::Confirmation => "confirmation",
            BiasKind::Knowledge => "knowledge",
            BiasKind::PrematureClosure => "premature_closure",
        }
    }

    /// Case-insensitive keyword stem used to spot mentions in free text.
    pub fn stem(self) -> &'static str {
        match self {
            BiasKind::Anchoring => "anchor",
            BiasKind::Availability => "availab",
            BiasKind::Confirmation => "confirm",
            BiasKind::Knowledge => "knowledge",
            BiasKind::PrematureClosure => "premature",
        }
    }

    pub fn from_taxonomy_name(name: &str) -> Option<BiasKind> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.taxonomy_name() == name)
    }
}

impl fmt::Display for BiasKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.taxonomy_name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxonomy_names_round_trip() {
        for kind in BiasKind::ALL {
            assert_eq!(BiasKind::from_taxonomy_name(kind.taxonomy_name()), Some(kind));
        }
        assert_eq!(BiasKind::from_taxonomy_name("hindsight"), None);
    }

    #[test]
    fn serde_uses_taxonomy_names() {
        let json = serde_json::to_string(&BiasKind::PrematureClosure).unwrap();
        assert_eq!(json, "\"premature_closure\"");
        let back: BiasKind = serde_json::from_str(&json).unwrap();
        assert_eq!(back, BiasKind::PrematureClosure);
    }
}
