//! Condition-default parameters shipped with the crate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

const SHIPPED: &str = include_str!("../config/defaults.toml");

/// Supported defaults-file major version.
pub const DEFAULTS_VERSION: &str = "1";

/// Difficulty of the post-switch rule in the hidden-moderator condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostSwitchDifficulty {
    /// Disjunctive rule over a single distractor.
    Easy,
    /// Conjunctive rule over three distractors (or all of them when fewer remain).
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenModeratorDefaults {
    pub switch_point: u32,
    pub post_switch: PostSwitchDifficulty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorDefaults {
    pub fire_threshold: f64,
    pub inhibition_margin: f64,
    pub one_shot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionDefaults {
    pub version: String,
    pub blicket_count: u8,
    pub activation_probability: f64,
    pub step_budget: BTreeMap<String, u32>,
    pub hidden_moderator: HiddenModeratorDefaults,
    pub monitors: MonitorDefaults,
}

#[derive(Debug, thiserror::Error)]
pub enum DefaultsError {
    #[error("defaults file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("defaults file version {found} is not supported (expected {DEFAULTS_VERSION})")]
    Version { found: String },
}

impl ConditionDefaults {
    pub fn shipped() -> Self {
        Self::from_toml(SHIPPED).expect("shipped defaults parse")
    }

    pub fn shipped_text() -> &'static str {
        SHIPPED
    }

    pub fn from_toml(text: &str) -> Result<Self, DefaultsError> {
        let d: ConditionDefaults = toml::from_str(text)?;
        if d.version.split('.').next() != Some(DEFAULTS_VERSION) {
            return Err(DefaultsError::Version { found: d.version });
        }
        Ok(d)
    }

    pub fn budget_for(&self, object_count: u8) -> Option<u32> {
        self.step_budget.get(&object_count.to_string()).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults_match_documented_values() {
        let d = ConditionDefaults::shipped();
        assert_eq!(d.budget_for(3), Some(50));
        assert_eq!(d.budget_for(5), Some(75));
        assert_eq!(d.budget_for(6), None);
        assert_eq!(d.activation_probability, 0.70);
        assert_eq!(d.hidden_moderator.switch_point, 3);
        assert_eq!(d.monitors.fire_threshold, 6.0);
        assert_eq!(d.monitors.inhibition_margin, 1.0);
    }

    #[test]
    fn rejects_foreign_major_version() {
        let text = SHIPPED.replace("version = \"1\"", "version = \"2\"");
        assert!(matches!(
            ConditionDefaults::from_toml(&text),
            Err(DefaultsError::Version { .. })
        ));
    }
}
