//! Versioned intent taxonomy.
//!
//! The default label set ships as `data/intent_taxonomy.default.json` and is a
//! placeholder: deployments are expected to supply their own file.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{self, ConfigError};

pub const DEFAULT_TAXONOMY_DOCUMENT: &str = include_str!("../data/intent_taxonomy.default.json");

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("taxonomy document lists no labels")]
    Empty,
    #[error("taxonomy label at position {0} is blank")]
    BlankLabel(usize),
    #[error("duplicate taxonomy label {0:?}")]
    Duplicate(String),
    #[error(transparent)]
    Document(#[from] ConfigError),
}

/// On-disk form: a flat label list plus a version string.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyDocument {
    pub version: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentTaxonomy {
    version: String,
    labels: Vec<String>,
    members: BTreeSet<String>,
    hash: String,
}

impl IntentTaxonomy {
    pub fn from_document(doc: TaxonomyDocument) -> Result<Self, TaxonomyError> {
        if doc.labels.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        let mut members = BTreeSet::new();
        for (position, label) in doc.labels.iter().enumerate() {
            if label.trim().is_empty() {
                return Err(TaxonomyError::BlankLabel(position));
            }
            if !members.insert(label.clone()) {
                return Err(TaxonomyError::Duplicate(label.clone()));
            }
        }
        let hash = membership_hash(&members);
        Ok(IntentTaxonomy {
            version: doc.version,
            labels: doc.labels,
            members,
            hash,
        })
    }

    pub fn parse(source: &str) -> Result<Self, TaxonomyError> {
        let doc: TaxonomyDocument =
            serde_json::from_str(source).map_err(|e| ConfigError::Parse {
                path: "<inline>".into(),
                message: e.to_string(),
            })?;
        Self::from_document(doc)
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        Self::from_document(io::load_config(path)?)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Order-insensitive SHA-256 over the sorted label set.
    pub fn version_hash(&self) -> &str {
        &self.hash
    }

    /// Labels in document order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.members.contains(label)
    }

    pub fn to_document(&self) -> TaxonomyDocument {
        TaxonomyDocument {
            version: self.version.clone(),
            labels: self.labels.clone(),
        }
    }
}

impl Default for IntentTaxonomy {
    fn default() -> Self {
        IntentTaxonomy::parse(DEFAULT_TAXONOMY_DOCUMENT).expect("shipped taxonomy is valid")
    }
}

fn membership_hash(members: &BTreeSet<String>) -> String {
    let mut hasher = Sha256::new();
    for label in members {
        hasher.update(label.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}
