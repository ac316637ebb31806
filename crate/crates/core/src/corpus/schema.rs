use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelKind {
    Entity,
    Relation,
    Trigger,
    ArgumentRole,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelKind::Entity => "entity",
            LabelKind::Relation => "relation",
            LabelKind::Trigger => "trigger",
            LabelKind::ArgumentRole => "argument role",
        })
    }
}

/// Label inventories for every task.
///
/// Each list holds the non-null labels. Label ids used throughout the crate
/// are 1-based positions in these lists; id 0 is the implicit null label.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSchema {
    pub entity_labels: Vec<String>,
    pub relation_labels: Vec<String>,
    pub trigger_labels: Vec<String>,
    pub argument_roles: Vec<String>,
}

pub const NULL_LABEL: usize = 0;

impl LabelSchema {
    pub fn new(
        entity_labels: Vec<String>,
        relation_labels: Vec<String>,
        trigger_labels: Vec<String>,
        argument_roles: Vec<String>,
    ) -> Result<Self, CorpusError> {
        let schema = Self {
            entity_labels,
            relation_labels,
            trigger_labels,
            argument_roles,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        for kind in [
            LabelKind::Entity,
            LabelKind::Relation,
            LabelKind::Trigger,
            LabelKind::ArgumentRole,
        ] {
            let labels = self.labels(kind);
            let mut seen = BTreeSet::new();
            for l in labels {
                if !seen.insert(l) {
                    return Err(CorpusError::Schema(format!("duplicate {kind} label {l:?}")));
                }
            }
        }
        if !self.trigger_labels.is_empty() && self.argument_roles.is_empty() {
            return Err(CorpusError::Schema(
                "event types present but no argument roles".into(),
            ));
        }
        Ok(())
    }

    pub fn labels(&self, kind: LabelKind) -> &[String] {
        match kind {
            LabelKind::Entity => &self.entity_labels,
            LabelKind::Relation => &self.relation_labels,
            LabelKind::Trigger => &self.trigger_labels,
            LabelKind::ArgumentRole => &self.argument_roles,
        }
    }

    /// Number of classes including null.
    pub fn num_classes(&self, kind: LabelKind) -> usize {
        self.labels(kind).len() + 1
    }

    /// 1-based id of a non-null label.
    pub fn id(&self, kind: LabelKind, label: &str) -> Option<usize> {
        self.labels(kind).iter().position(|l| l == label).map(|p| p + 1)
    }

    /// Name for a non-null id.
    pub fn name(&self, kind: LabelKind, id: usize) -> &str {
        &self.labels(kind)[id - 1]
    }

    pub fn has_events(&self) -> bool {
        !self.trigger_labels.is_empty()
    }

    pub fn has_relations(&self) -> bool {
        !self.relation_labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn ids_are_one_based_with_null_at_zero() {
        let schema = LabelSchema::new(s(&["LOC", "PER"]), s(&[]), s(&[]), s(&[])).unwrap();
        assert_eq!(schema.id(LabelKind::Entity, "LOC"), Some(1));
        assert_eq!(schema.id(LabelKind::Entity, "PER"), Some(2));
        assert_eq!(schema.num_classes(LabelKind::Entity), 3);
        assert_eq!(schema.name(LabelKind::Entity, 2), "PER");
        assert_eq!(schema.id(LabelKind::Entity, "ORG"), None);
    }

    #[test]
    fn duplicates_rejected() {
        assert!(LabelSchema::new(s(&["A", "A"]), s(&[]), s(&[]), s(&[])).is_err());
    }

    #[test]
    fn events_need_roles() {
        assert!(LabelSchema::new(s(&["A"]), s(&[]), s(&["Move"]), s(&[])).is_err());
    }
}
