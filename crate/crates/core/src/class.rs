//! Class identifiers and the class registry.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense class index, starting at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: ClassId,
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("class ids must be dense from 0: entry {index} has id {found}")]
    NotDense { index: usize, found: ClassId },
    #[error("class name or alias {0:?} is used more than once")]
    DuplicateName(String),
    #[error("registry must contain at least one class")]
    Empty,
}

/// Ordered class list with case-insensitive name and alias lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassEntry>", into = "Vec<ClassEntry>")]
pub struct ClassRegistry {
    entries: Vec<ClassEntry>,
}

impl TryFrom<Vec<ClassEntry>> for ClassRegistry {
    type Error = RegistryError;

    fn try_from(entries: Vec<ClassEntry>) -> Result<Self, Self::Error> {
        Self::new(entries)
    }
}

impl From<ClassRegistry> for Vec<ClassEntry> {
    fn from(r: ClassRegistry) -> Self {
        r.entries
    }
}

impl Default for ClassRegistry {
    /// black_pod / monilia / healthy, with the usual field names as aliases.
    fn default() -> Self {
        let entry = |id, name: &str, aliases: &[&str]| ClassEntry {
            id: ClassId(id),
            name: name.to_string(),
            aliases: aliases.iter().map(|s| s.to_string()).collect(),
        };
        Self::new(vec![
            entry(0, "black_pod", &["black pod", "black-pod", "blackpod", "fitoftora", "phytophthora"]),
            entry(1, "monilia", &["moniliasis", "moniliophthora", "frosty pod"]),
            entry(2, "healthy", &["sana", "sano"]),
        ])
        .expect("default registry is well-formed")
    }
}

fn fold(name: &str) -> String {
    name.trim().to_lowercase()
}

impl ClassRegistry {
    pub fn new(entries: Vec<ClassEntry>) -> Result<Self, RegistryError> {
        if entries.is_empty() {
            return Err(RegistryError::Empty);
        }
        let mut seen = std::collections::HashSet::new();
        for (index, e) in entries.iter().enumerate() {
            if e.id.0 as usize != index {
                return Err(RegistryError::NotDense { index, found: e.id });
            }
            for n in std::iter::once(&e.name).chain(e.aliases.iter()) {
                if !seen.insert(fold(n)) {
                    return Err(RegistryError::DuplicateName(n.clone()));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn contains(&self, id: ClassId) -> bool {
        (id.0 as usize) < self.entries.len()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.entries.get(id.0 as usize).map(|e| e.name.as_str())
    }

    /// Resolves a canonical name or alias, ignoring case and surrounding
    /// whitespace.
    pub fn resolve(&self, name: &str) -> Option<ClassId> {
        let key = fold(name);
        self.entries.iter().find(|e| fold(&e.name) == key || e.aliases.iter().any(|a| fold(a) == key)).map(|e| e.id)
    }
}
