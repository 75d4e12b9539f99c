//! Evaluation report: measured values and threshold checks.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub value: f64,
    /// Upper bound the value must not exceed, for checked entries.
    pub max: Option<f64>,
}

impl Entry {
    pub fn passed(&self) -> Option<bool> {
        self.max.map(|m| self.value.is_finite() && self.value <= m)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<Entry>,
}

impl EvalReport {
    pub fn value(&mut self, name: &str, value: f64) {
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            max: None,
        });
    }

    pub fn check(&mut self, name: &str, value: f64, max: f64) {
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            max: Some(max),
        });
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn failures(&self) -> Vec<&Entry> {
        self.entries
            .iter()
            .filter(|e| e.passed() == Some(false))
            .collect()
    }

    pub fn all_passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One `name = value` line per entry, plus `name.max` and `name.pass`
    /// for checked entries.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{} = {:?}\n", e.name, e.value));
            if let (Some(m), Some(ok)) = (e.max, e.passed()) {
                out.push_str(&format!("{}.max = {m:?}\n{}.pass = {ok}\n", e.name, e.name));
            }
        }
        out
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(0);
        for e in &self.entries {
            write!(f, "{:width$}  {:>12.6}", e.name, e.value)?;
            match (e.max, e.passed()) {
                (Some(m), Some(ok)) => {
                    writeln!(f, "  <= {m:<8} {}", if ok { "PASS" } else { "FAIL" })?
                }
                _ => writeln!(f)?,
            }
        }
        Ok(())
    }
}
