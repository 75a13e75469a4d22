//! Intent taxonomy and the intent → library mapping.
//!
//! Maps are authored offline. [`propose_intent_map`] drafts one from a corpus
//! of prompts; a draft is only ever written to a file and becomes active when
//! someone points `--intent-map` at a reviewed copy.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::registry::ToolRegistry;

/// Library marker meaning "every library in the registry".
pub const ALL_LIBRARIES: &str = "*";

#[derive(Debug, Error, PartialEq)]
pub enum IntentError {
    #[error("failed to parse intent map: {0}")]
    Parse(String),
    #[error("duplicate intent `{0}`")]
    DuplicateIntent(String),
    #[error("intent `{0}` maps to no libraries")]
    EmptyLibrarySet(String),
    #[error("intent map declares no intents")]
    NoIntents,
    #[error("intent id must be non-empty")]
    EmptyId,
    #[error("unknown intent `{0}`")]
    UnknownIntent(String),
    #[error("failed to read intent map: {0}")]
    Io(String),
    #[error("cannot draft an intent map from an empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefaultPolicy {
    #[default]
    FullToolset,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentRecord {
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub example_queries: Vec<String>,
    pub libraries: BTreeSet<String>,
}

impl IntentRecord {
    pub fn selection(&self) -> LibrarySelection {
        if self.libraries.contains(ALL_LIBRARIES) {
            LibrarySelection::All
        } else {
            LibrarySelection::Subset(self.libraries.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentMap {
    #[serde(default)]
    pub default_policy: DefaultPolicy,
    pub intents: Vec<IntentRecord>,
}

/// The libraries an intent unlocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LibrarySelection {
    /// The full toolset, offered without the fallback sentinel.
    All,
    Subset(BTreeSet<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapIssue {
    MissingLibrary { intent: String, library: String },
}

impl IntentMap {
    pub fn new(default_policy: DefaultPolicy, intents: Vec<IntentRecord>) -> Result<Self, IntentError> {
        let map = Self {
            default_policy,
            intents,
        };
        map.check()?;
        Ok(map)
    }

    fn check(&self) -> Result<(), IntentError> {
        if self.intents.is_empty() {
            return Err(IntentError::NoIntents);
        }
        let mut seen = HashSet::new();
        for intent in &self.intents {
            if intent.id.trim().is_empty() {
                return Err(IntentError::EmptyId);
            }
            if !seen.insert(intent.id.as_str()) {
                return Err(IntentError::DuplicateIntent(intent.id.clone()));
            }
            if intent.libraries.is_empty() {
                return Err(IntentError::EmptyLibrarySet(intent.id.clone()));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, IntentError> {
        let map: IntentMap =
            serde_json::from_str(text).map_err(|e| IntentError::Parse(e.to_string()))?;
        map.check()?;
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IntentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| IntentError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("intent map serializes")
    }

    pub fn get(&self, id: &str) -> Option<&IntentRecord> {
        self.intents.iter().find(|i| i.id == id)
    }

    /// Lists every reference to a library the registry does not define.
    pub fn validate(&self, registry: &ToolRegistry) -> Vec<MapIssue> {
        self.intents
            .iter()
            .flat_map(|intent| {
                intent
                    .libraries
                    .iter()
                    .filter(|lib| lib.as_str() != ALL_LIBRARIES && !registry.has_library(lib))
                    .map(|lib| MapIssue::MissingLibrary {
                        intent: intent.id.clone(),
                        library: lib.clone(),
                    })
            })
            .collect()
    }

    pub fn libraries_for(&self, intent_id: &str) -> Result<LibrarySelection, IntentError> {
        match self.get(intent_id) {
            Some(record) => Ok(record.selection()),
            None => self.unknown_intent(intent_id),
        }
    }

    /// Outcome for an id outside the map, per the default policy.
    pub fn unknown_intent(&self, intent_id: &str) -> Result<LibrarySelection, IntentError> {
        match self.default_policy {
            DefaultPolicy::FullToolset => Ok(LibrarySelection::All),
            DefaultPolicy::Reject => Err(IntentError::UnknownIntent(intent_id.to_string())),
        }
    }
}

/// One prompt to be grouped, with the tools its reference trajectory called
/// when a reference run exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposalInput {
    pub prompt: String,
    pub invoked_tools: Option<BTreeSet<String>>,
}

impl ProposalInput {
    pub fn prompt(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            invoked_tools: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftIntent {
    pub id: String,
    pub description: String,
    pub example_queries: Vec<String>,
    pub libraries: BTreeSet<String>,
    /// Set when no reference trajectory supplied libraries for this group.
    pub needs_review: bool,
}

/// An unreviewed intent map. Same layout as an intent-map file plus review
/// flags; drafts with empty library sets do not load as an [`IntentMap`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentMapDraft {
    pub default_policy: DefaultPolicy,
    pub intents: Vec<DraftIntent>,
}

impl IntentMapDraft {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("draft serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json_string() + "\n")
    }
}

/// Assigns a free-form intent label to a prompt.
pub trait IntentLabeler {
    fn label(&self, prompt: &str) -> Result<String, BackendError>;
}

/// Groups the corpus by label, in order of first appearance.
pub fn propose_intent_map(
    corpus: &[ProposalInput],
    labeler: &dyn IntentLabeler,
    registry: &ToolRegistry,
) -> Result<IntentMapDraft, IntentError> {
    if corpus.is_empty() {
        return Err(IntentError::EmptyCorpus);
    }
    let mut groups: Vec<(String, Vec<&ProposalInput>)> = Vec::new();
    for input in corpus {
        let label = labeler.label(&input.prompt)?.trim().to_string();
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, members)) => members.push(input),
            None => groups.push((label, vec![input])),
        }
    }
    let intents = groups
        .into_iter()
        .map(|(label, members)| {
            let mut libraries = BTreeSet::new();
            let mut referenced = false;
            for m in &members {
                if let Some(tools) = &m.invoked_tools {
                    referenced = true;
                    libraries.extend(
                        tools
                            .iter()
                            .filter_map(|t| registry.library_of(t))
                            .map(str::to_string),
                    );
                }
            }
            DraftIntent {
                id: label.clone(),
                description: label,
                example_queries: members.iter().map(|m| m.prompt.clone()).collect(),
                needs_review: !referenced || libraries.is_empty(),
                libraries,
            }
        })
        .collect();
    Ok(IntentMapDraft {
        default_policy: DefaultPolicy::FullToolset,
        intents,
    })
}
