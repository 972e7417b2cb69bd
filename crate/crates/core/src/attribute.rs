//! The closed set of aesthetic attributes the reasoning step is asked about.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the six aesthetic dimensions. Declaration order is the canonical
/// order used everywhere (prompt text, maps, report columns).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum AestheticAttribute {
    Color,
    Style,
    Occasion,
    Season,
    Material,
    Balance,
}

impl AestheticAttribute {
    pub const ALL: [AestheticAttribute; 6] = [
        AestheticAttribute::Color,
        AestheticAttribute::Style,
        AestheticAttribute::Occasion,
        AestheticAttribute::Season,
        AestheticAttribute::Material,
        AestheticAttribute::Balance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AestheticAttribute::Color => "color",
            AestheticAttribute::Style => "style",
            AestheticAttribute::Occasion => "occasion",
            AestheticAttribute::Season => "season",
            AestheticAttribute::Material => "material",
            AestheticAttribute::Balance => "balance",
        }
    }

    /// Title-cased label for report columns.
    pub fn title(self) -> &'static str {
        match self {
            AestheticAttribute::Color => "Color",
            AestheticAttribute::Style => "Style",
            AestheticAttribute::Occasion => "Occasion",
            AestheticAttribute::Season => "Season",
            AestheticAttribute::Material => "Material",
            AestheticAttribute::Balance => "Balance",
        }
    }
}

impl fmt::Display for AestheticAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown aesthetic attribute `{0}`")]
pub struct UnknownAttribute(pub String);

impl FromStr for AestheticAttribute {
    type Err = UnknownAttribute;

    /// Case-insensitive; surrounding whitespace is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lowered = s.trim().to_ascii_lowercase();
        AestheticAttribute::ALL
            .into_iter()
            .find(|a| a.as_str() == lowered)
            .ok_or_else(|| UnknownAttribute(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_case_insensitively() {
        assert_eq!(" Color ".parse::<AestheticAttribute>().unwrap(), AestheticAttribute::Color);
        assert_eq!("BALANCE".parse::<AestheticAttribute>().unwrap(), AestheticAttribute::Balance);
        assert!("texture".parse::<AestheticAttribute>().is_err());
    }

    #[test]
    fn serde_uses_lowercase_names() {
        let json = serde_json::to_string(&AestheticAttribute::ALL).unwrap();
        assert_eq!(
            json,
            r#"["color","style","occasion","season","material","balance"]"#
        );
    }

    #[test]
    fn canonical_order_matches_all() {
        let mut sorted = AestheticAttribute::ALL;
        sorted.sort();
        assert_eq!(sorted, AestheticAttribute::ALL);
    }
}
