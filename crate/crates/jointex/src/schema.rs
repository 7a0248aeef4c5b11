//! Closed label sets for the three tasks and the derived BIO tag set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OTHER_LABEL: &str = "Other";

/// Index of a BIO tag in [`LabelSchema::bio_tags`].
pub type BioTag = usize;

/// The closed sets of entity types, event types and argument roles.
///
/// `Other` always sits at index 0 of the event and role sets. The BIO tag set
/// is derived as `O` plus `B-X`/`I-X` per entity type, with `O` at index 0
/// and `B-X` always immediately before its `I-X`; indices depend only on the
/// entity type order, so they are stable across save and load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub entity_types: Vec<String>,
    pub event_types: Vec<String>,
    pub roles: Vec<String>,
}

impl LabelSchema {
    /// Build a schema from explicit label inventories. `Other` is prepended
    /// to events and roles if absent; duplicates are rejected.
    pub fn new<S: AsRef<str>>(entity_types: &[S], event_types: &[S], roles: &[S]) -> Result<Self> {
        fn collect<S: AsRef<str>>(items: &[S], with_other: bool, what: &str) -> Result<Vec<String>> {
            let mut out: Vec<String> = Vec::new();
            if with_other {
                out.push(OTHER_LABEL.to_string());
            }
            for item in items {
                let s = item.as_ref();
                if out.iter().any(|x| x == s) {
                    if s == OTHER_LABEL && with_other {
                        continue;
                    }
                    return Err(Error::Annotation(format!("duplicate {what} label: {s}")));
                }
                out.push(s.to_string());
            }
            Ok(out)
        }
        Ok(LabelSchema {
            entity_types: collect(entity_types, false, "entity type")?,
            event_types: collect(event_types, true, "event type")?,
            roles: collect(roles, true, "role")?,
        })
    }

    pub fn num_bio_tags(&self) -> usize {
        1 + 2 * self.entity_types.len()
    }

    /// The full BIO tag inventory in index order.
    pub fn bio_tags(&self) -> Vec<String> {
        let mut tags = vec!["O".to_string()];
        for t in &self.entity_types {
            tags.push(format!("B-{t}"));
            tags.push(format!("I-{t}"));
        }
        tags
    }

    pub const OUTSIDE: BioTag = 0;

    pub fn begin_tag(&self, entity_type: usize) -> BioTag {
        1 + 2 * entity_type
    }

    pub fn inside_tag(&self, entity_type: usize) -> BioTag {
        2 + 2 * entity_type
    }

    pub fn is_begin(&self, tag: BioTag) -> bool {
        tag != Self::OUTSIDE && (tag - 1) % 2 == 0
    }

    pub fn is_inside(&self, tag: BioTag) -> bool {
        tag != Self::OUTSIDE && (tag - 1) % 2 == 1
    }

    /// Entity type index of a `B-X` or `I-X` tag.
    pub fn tag_entity_type(&self, tag: BioTag) -> Option<usize> {
        if tag == Self::OUTSIDE {
            None
        } else {
            Some((tag - 1) / 2)
        }
    }

    pub fn bio_tag_name(&self, tag: BioTag) -> String {
        if tag == Self::OUTSIDE {
            "O".to_string()
        } else {
            let t = &self.entity_types[(tag - 1) / 2];
            if self.is_begin(tag) {
                format!("B-{t}")
            } else {
                format!("I-{t}")
            }
        }
    }

    pub fn entity_type_index(&self, name: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == name)
    }

    pub fn event_type_index(&self, name: &str) -> Option<usize> {
        self.event_types.iter().position(|t| t == name)
    }

    pub fn role_index(&self, name: &str) -> Option<usize> {
        self.roles.iter().position(|t| t == name)
    }

    pub const OTHER: usize = 0;
}
