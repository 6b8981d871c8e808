use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AssetError, AssetModel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticEntry {
    pub semantic_label: String,
    pub joint_kind: String,
}

/// Link name → semantic annotation, as read from a semantics file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SemanticMap {
    pub entries: BTreeMap<String, SemanticEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SemanticMap {
    pub fn label(&self, link: &str) -> Option<&str> {
        self.entries.get(link).map(|e| e.semantic_label.as_str())
    }

    /// Keys that do not name a link of `model`.
    pub fn orphans(&self, model: &AssetModel) -> Vec<String> {
        self.entries
            .keys()
            .filter(|k| model.link(k).is_none())
            .cloned()
            .collect()
    }
}

/// Parses `link_name joint_kind semantic_label` lines.
///
/// Blank lines are skipped. Extra fields after the label are joined into it.
/// A repeated link keeps its last line and records a warning.
pub fn parse_semantics(text: &str) -> Result<SemanticMap, AssetError> {
    let mut map = SemanticMap::default();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(AssetError::InvalidValue {
                field: "semantics".into(),
                message: format!(
                    "line {}: expected `link_name joint_kind semantic_label`, got {} field(s)",
                    i + 1,
                    fields.len()
                ),
                location: Some(super::Location {
                    line: (i + 1) as u32,
                    col: 1,
                }),
            });
        }
        let entry = SemanticEntry {
            joint_kind: fields[1].to_string(),
            semantic_label: fields[2..].join(" "),
        };
        if map.entries.insert(fields[0].to_string(), entry).is_some() {
            map.warnings.push(format!(
                "line {}: duplicate entry for `{}`; keeping the last one",
                i + 1,
                fields[0]
            ));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line() {
        let m = parse_semantics("link_0 hinge lid\n").unwrap();
        assert_eq!(
            m.entries["link_0"],
            SemanticEntry {
                semantic_label: "lid".into(),
                joint_kind: "hinge".into()
            }
        );
    }

    #[test]
    fn empty_file() {
        let m = parse_semantics("").unwrap();
        assert!(m.entries.is_empty());
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn duplicate_keeps_last() {
        let m = parse_semantics("link_0 hinge lid\nlink_0 slider drawer\n").unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.label("link_0"), Some("drawer"));
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn short_line_reports_line_number() {
        let err = parse_semantics("link_0 hinge lid\n\nlink_1 free\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
