use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Key that selects the default response in a script file.
pub const DEFAULT_KEY: &str = "*";

/// Prompt-prefix → response table. Always total: prompts that match no
/// key get the default response.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct MockScript {
    rules: BTreeMap<String, String>,
    default: String,
}

impl From<BTreeMap<String, String>> for MockScript {
    fn from(mut rules: BTreeMap<String, String>) -> Self {
        let default = rules.remove(DEFAULT_KEY).unwrap_or_default();
        MockScript { rules, default }
    }
}

impl From<MockScript> for BTreeMap<String, String> {
    fn from(s: MockScript) -> Self {
        let mut m = s.rules;
        m.insert(DEFAULT_KEY.to_string(), s.default);
        m
    }
}

impl MockScript {
    pub fn constant(response: impl Into<String>) -> MockScript {
        MockScript {
            rules: BTreeMap::new(),
            default: response.into(),
        }
    }

    pub fn with_rule(
        mut self,
        prefix: impl Into<String>,
        response: impl Into<String>,
    ) -> MockScript {
        self.rules.insert(prefix.into(), response.into());
        self
    }

    pub fn load(path: &Path) -> Result<MockScript, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }

    /// Response of the longest key that prefixes `prompt`.
    pub fn respond(&self, prompt: &str) -> &str {
        self.rules
            .iter()
            .filter(|(k, _)| prompt.starts_with(k.as_str()))
            .max_by_key(|(k, _)| k.len())
            .map_or(self.default.as_str(), |(_, v)| v.as_str())
    }
}
