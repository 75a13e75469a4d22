//! Tool definitions grouped into libraries, and the schemas offered to the
//! planner.
//!
//! A [`RegistryBuilder`] collects libraries in registration order and is
//! sealed into an immutable [`ToolRegistry`]. Only sealed registries hand out
//! [`ToolSchema`]s, so every schema is drawn from a registry that can no
//! longer change.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical;
use crate::gate::SENTINEL_TOOL_NAME;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("library `{0}` is already registered")]
    DuplicateLibrary(String),
    #[error("tool `{0}` is already registered")]
    DuplicateTool(String),
    #[error("invalid identifier `{0}`: expected [A-Za-z0-9_]+")]
    InvalidName(String),
    #[error("tool `{tool}` has an invalid parameter schema: {reason}")]
    InvalidParameters { tool: String, reason: String },
    #[error("unknown library `{0}`")]
    UnknownLibrary(String),
    #[error("failed to parse registry: {0}")]
    Parse(String),
    #[error("failed to read registry: {0}")]
    Io(String),
}

/// A single callable tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "empty_parameters")]
    pub parameters: Value,
}

fn empty_parameters() -> Value {
    json!({"type": "object", "properties": {}})
}

impl ToolSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>, parameters: Value) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            parameters,
        }
    }

    /// A tool that takes no arguments.
    pub fn without_parameters(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self::new(name, description, empty_parameters())
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        check_identifier(&self.name)?;
        validate_parameters(&self.name, &self.parameters)
    }
}

pub(crate) fn is_identifier(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

fn check_identifier(name: &str) -> Result<(), RegistryError> {
    if is_identifier(name) {
        Ok(())
    } else {
        Err(RegistryError::InvalidName(name.to_string()))
    }
}

fn validate_parameters(tool: &str, params: &Value) -> Result<(), RegistryError> {
    let invalid = |reason: &str| RegistryError::InvalidParameters {
        tool: tool.to_string(),
        reason: reason.to_string(),
    };
    let obj = params.as_object().ok_or_else(|| invalid("not a JSON object"))?;
    if let Some(ty) = obj.get("type") {
        if ty != "object" {
            return Err(invalid("top-level type must be \"object\""));
        }
    }
    let properties = match obj.get("properties") {
        None => None,
        Some(Value::Object(props)) => {
            if props.values().any(|p| !p.is_object()) {
                return Err(invalid("every property must be a schema object"));
            }
            Some(props)
        }
        Some(_) => return Err(invalid("\"properties\" must be an object")),
    };
    if let Some(required) = obj.get("required") {
        let required = required
            .as_array()
            .ok_or_else(|| invalid("\"required\" must be an array"))?;
        for name in required {
            let name = name
                .as_str()
                .ok_or_else(|| invalid("\"required\" entries must be strings"))?;
            if !properties.is_some_and(|p| p.contains_key(name)) {
                return Err(invalid(&format!("required property `{name}` is not declared")));
            }
        }
    }
    Ok(())
}

/// A named bundle of related tools; the granularity at which gating operates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolLibrary {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub tools: Vec<ToolSpec>,
}

/// The flattened tool list offered to the planner for one request.
///
/// Equality compares the tool list only; `origin` records provenance and is
/// not part of the serialized payload.
#[derive(Clone)]
pub struct ToolSchema {
    tools: Arc<Vec<ToolSpec>>,
    origin: BTreeSet<String>,
    canonical: Arc<str>,
    gated: bool,
}

impl ToolSchema {
    /// Builds a schema from an explicit tool list, e.g. one parsed off the wire.
    pub fn from_tools(tools: Vec<ToolSpec>) -> Self {
        Self::build(tools, BTreeSet::new())
    }

    pub fn empty() -> Self {
        Self::from_tools(Vec::new())
    }

    fn build(tools: Vec<ToolSpec>, origin: BTreeSet<String>) -> Self {
        let canonical: Arc<str> = canonical::value_to_canonical(&json!({ "tools": tools })).into();
        let gated = tools.iter().any(|t| t.name == SENTINEL_TOOL_NAME);
        Self {
            tools: Arc::new(tools),
            origin,
            canonical,
            gated,
        }
    }

    /// Returns a copy with `tool` appended last.
    pub(crate) fn with_appended(&self, tool: ToolSpec) -> Self {
        let mut tools = self.tools.as_ref().clone();
        tools.push(tool);
        Self::build(tools, self.origin.clone())
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn origin(&self) -> &BTreeSet<String> {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn contains(&self, tool: &str) -> bool {
        self.tools.iter().any(|t| t.name == tool)
    }

    pub fn tool_names(&self) -> impl Iterator<Item = &str> {
        self.tools.iter().map(|t| t.name.as_str())
    }

    /// True when the fallback sentinel is offered.
    pub fn is_gated(&self) -> bool {
        self.gated
    }

    /// Canonical JSON `{"tools":[...]}`.
    pub fn canonical(&self) -> &str {
        &self.canonical
    }
}

impl PartialEq for ToolSchema {
    fn eq(&self, other: &Self) -> bool {
        self.tools == other.tools
    }
}

impl fmt::Debug for ToolSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolSchema")
            .field("tools", &self.tool_names().collect::<Vec<_>>())
            .field("origin", &self.origin)
            .finish()
    }
}

/// Canonical serialization of a schema: sorted keys, no whitespace.
pub fn serialize_schema(schema: &ToolSchema) -> String {
    schema.canonical().to_string()
}

#[derive(Debug, Default)]
pub struct RegistryBuilder {
    libraries: Vec<ToolLibrary>,
    library_names: HashSet<String>,
    tool_names: HashSet<String>,
}

impl RegistryBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_library(
        &mut self,
        name: impl Into<String>,
        description: impl Into<String>,
        tools: Vec<ToolSpec>,
    ) -> Result<&mut Self, RegistryError> {
        let name = name.into();
        check_identifier(&name)?;
        if self.library_names.contains(&name) {
            return Err(RegistryError::DuplicateLibrary(name));
        }
        let mut seen = HashSet::new();
        for tool in &tools {
            tool.validate()?;
            if tool.name == SENTINEL_TOOL_NAME {
                return Err(RegistryError::InvalidName(tool.name.clone()));
            }
            if !seen.insert(tool.name.as_str()) || self.tool_names.contains(&tool.name) {
                return Err(RegistryError::DuplicateTool(tool.name.clone()));
            }
        }
        self.tool_names.extend(tools.iter().map(|t| t.name.clone()));
        self.library_names.insert(name.clone());
        self.libraries.push(ToolLibrary {
            name,
            description: description.into(),
            tools,
        });
        Ok(self)
    }

    pub fn seal(self) -> ToolRegistry {
        ToolRegistry::from_libraries(self.libraries)
    }
}

/// Serialized form of a registry definition file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryDocument {
    pub libraries: Vec<ToolLibrary>,
}

/// A sealed, read-only registry.
#[derive(Debug, Clone)]
pub struct ToolRegistry {
    libraries: Vec<ToolLibrary>,
    library_index: HashMap<String, usize>,
    tool_library: HashMap<String, usize>,
    full: ToolSchema,
}

impl ToolRegistry {
    fn from_libraries(libraries: Vec<ToolLibrary>) -> Self {
        let library_index = libraries
            .iter()
            .enumerate()
            .map(|(i, lib)| (lib.name.clone(), i))
            .collect();
        let tool_library = libraries
            .iter()
            .enumerate()
            .flat_map(|(i, lib)| lib.tools.iter().map(move |t| (t.name.clone(), i)))
            .collect();
        let full = ToolSchema::build(
            libraries.iter().flat_map(|l| l.tools.iter().cloned()).collect(),
            libraries.iter().map(|l| l.name.clone()).collect(),
        );
        Self {
            libraries,
            library_index,
            tool_library,
            full,
        }
    }

    pub fn from_document(doc: RegistryDocument) -> Result<Self, RegistryError> {
        let mut builder = RegistryBuilder::new();
        for lib in doc.libraries {
            builder.register_library(lib.name, lib.description, lib.tools)?;
        }
        Ok(builder.seal())
    }

    pub fn from_json_str(text: &str) -> Result<Self, RegistryError> {
        let doc: RegistryDocument =
            serde_json::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RegistryError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_document(&self) -> RegistryDocument {
        RegistryDocument {
            libraries: self.libraries.clone(),
        }
    }

    pub fn libraries(&self) -> &[ToolLibrary] {
        &self.libraries
    }

    pub fn library(&self, name: &str) -> Option<&ToolLibrary> {
        self.library_index.get(name).map(|&i| &self.libraries[i])
    }

    pub fn has_library(&self, name: &str) -> bool {
        self.library_index.contains_key(name)
    }

    pub fn library_names(&self) -> impl Iterator<Item = &str> {
        self.libraries.iter().map(|l| l.name.as_str())
    }

    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        let lib = &self.libraries[*self.tool_library.get(name)?];
        lib.tools.iter().find(|t| t.name == name)
    }

    /// Name of the library that declares `tool`.
    pub fn library_of(&self, tool: &str) -> Option<&str> {
        self.tool_library
            .get(tool)
            .map(|&i| self.libraries[i].name.as_str())
    }

    pub fn tool_count(&self) -> usize {
        self.tool_library.len()
    }

    /// Union of the requested libraries' tools, libraries in registration
    /// order and tools in declaration order.
    pub fn subset_schema<I, S>(&self, libraries: I) -> Result<ToolSchema, RegistryError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut wanted = vec![false; self.libraries.len()];
        let mut origin = BTreeSet::new();
        for name in libraries {
            let name = name.as_ref();
            let &i = self
                .library_index
                .get(name)
                .ok_or_else(|| RegistryError::UnknownLibrary(name.to_string()))?;
            wanted[i] = true;
            origin.insert(name.to_string());
        }
        if wanted.iter().all(|&w| w) {
            return Ok(self.full.clone());
        }
        let tools = self
            .libraries
            .iter()
            .zip(&wanted)
            .filter(|(_, &w)| w)
            .flat_map(|(lib, _)| lib.tools.iter().cloned())
            .collect();
        Ok(ToolSchema::build(tools, origin))
    }

    pub fn full_schema(&self) -> ToolSchema {
        self.full.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tools(prefix: &str, n: usize) -> Vec<ToolSpec> {
        (0..n)
            .map(|i| ToolSpec::without_parameters(format!("{prefix}_{i}"), format!("tool {i}")))
            .collect()
    }

    fn abc() -> ToolRegistry {
        let mut b = RegistryBuilder::new();
        b.register_library("A", "", tools("a", 3)).unwrap();
        b.register_library("B", "", tools("b", 2)).unwrap();
        b.register_library("C", "", tools("c", 4)).unwrap();
        b.seal()
    }

    #[test]
    fn register_single_library() {
        let mut b = RegistryBuilder::new();
        b.register_library(
            "map_apis",
            "mapping",
            vec![ToolSpec::without_parameters("plot_images", "Plot images on a map")],
        )
        .unwrap();
        let reg = b.seal();
        assert_eq!(reg.libraries().len(), 1);
        assert_eq!(reg.tool_count(), 1);
    }

    #[test]
    fn empty_library_is_accepted() {
        let mut b = RegistryBuilder::new();
        b.register_library("empty_lib", "", vec![]).unwrap();
        let reg = b.seal();
        let schema = reg.subset_schema(["empty_lib"]).unwrap();
        assert!(schema.is_empty());
    }

    #[test]
    fn duplicate_library_rejected() {
        let mut b = RegistryBuilder::new();
        b.register_library("map_apis", "", vec![]).unwrap();
        assert_eq!(
            b.register_library("map_apis", "", vec![]).unwrap_err(),
            RegistryError::DuplicateLibrary("map_apis".into())
        );
    }

    #[test]
    fn duplicate_tools_rejected_within_and_across_libraries() {
        let mut b = RegistryBuilder::new();
        let dup = vec![
            ToolSpec::without_parameters("x", ""),
            ToolSpec::without_parameters("x", ""),
        ];
        assert_eq!(
            b.register_library("L", "", dup).unwrap_err(),
            RegistryError::DuplicateTool("x".into())
        );
        b.register_library("L1", "", vec![ToolSpec::without_parameters("x", "")])
            .unwrap();
        assert_eq!(
            b.register_library("L2", "", vec![ToolSpec::without_parameters("x", "")])
                .unwrap_err(),
            RegistryError::DuplicateTool("x".into())
        );
    }

    #[test]
    fn invalid_names_rejected() {
        let mut b = RegistryBuilder::new();
        assert!(matches!(
            b.register_library("bad name", "", vec![]),
            Err(RegistryError::InvalidName(_))
        ));
        assert!(matches!(
            b.register_library("ok", "", vec![ToolSpec::without_parameters("plot-images", "")]),
            Err(RegistryError::InvalidName(_))
        ));
        assert!(matches!(
            b.register_library("", "", vec![]),
            Err(RegistryError::InvalidName(_))
        ));
        // the fallback sentinel name is reserved
        assert!(matches!(
            b.register_library("ok", "", vec![ToolSpec::without_parameters(SENTINEL_TOOL_NAME, "")]),
            Err(RegistryError::InvalidName(_))
        ));
    }

    #[test]
    fn invalid_parameter_schemas_rejected() {
        let bad = [
            json!([]),
            json!({"type": "string"}),
            json!({"properties": []}),
            json!({"properties": {"a": 1}}),
            json!({"properties": {"a": {"type": "string"}}, "required": ["b"]}),
            json!({"required": "a"}),
        ];
        for params in bad {
            let spec = ToolSpec::new("t", "", params.clone());
            assert!(
                matches!(spec.validate(), Err(RegistryError::InvalidParameters { .. })),
                "{params}"
            );
        }
        let good = ToolSpec::new(
            "t",
            "",
            json!({"type": "object", "properties": {"a": {"type": "string"}}, "required": ["a"]}),
        );
        good.validate().unwrap();
    }

    #[test]
    fn subset_is_union_in_registration_order() {
        let reg = abc();
        let schema = reg.subset_schema(["C", "A"]).unwrap();
        assert_eq!(schema.len(), 7);
        assert!(schema.tool_names().all(|n| !n.starts_with("b_")));
        let names: Vec<_> = schema.tool_names().collect();
        assert_eq!(names, ["a_0", "a_1", "a_2", "c_0", "c_1", "c_2", "c_3"]);
        assert_eq!(
            schema.origin().iter().map(String::as_str).collect::<Vec<_>>(),
            ["A", "C"]
        );
    }

    #[test]
    fn subset_over_all_equals_full() {
        let reg = abc();
        let all = reg.subset_schema(reg.library_names()).unwrap();
        assert_eq!(all, reg.full_schema());
        assert_eq!(serialize_schema(&all), serialize_schema(&reg.full_schema()));
        assert_eq!(all.origin(), reg.full_schema().origin());
    }

    #[test]
    fn unknown_library_rejected() {
        let reg = abc();
        assert_eq!(
            reg.subset_schema(["nonexistent"]).unwrap_err(),
            RegistryError::UnknownLibrary("nonexistent".into())
        );
    }

    #[test]
    fn empty_registry_has_empty_schema() {
        let reg = RegistryBuilder::new().seal();
        assert!(reg.full_schema().is_empty());
        assert_eq!(serialize_schema(&reg.full_schema()), r#"{"tools":[]}"#);
    }

    #[test]
    fn single_tool_serialization_is_stable() {
        let schema = ToolSchema::from_tools(vec![ToolSpec::new("ping", "Ping", json!({}))]);
        let text = serialize_schema(&schema);
        assert_eq!(
            text,
            r#"{"tools":[{"description":"Ping","name":"ping","parameters":{}}]}"#
        );
        assert_eq!(text, serialize_schema(&schema.clone()));
    }

    #[test]
    fn registry_document_round_trip() {
        let reg = abc();
        let doc = reg.to_document();
        let text = serde_json::to_string(&doc).unwrap();
        let again = ToolRegistry::from_json_str(&text).unwrap();
        assert_eq!(again.to_document(), doc);
        assert_eq!(again.full_schema(), reg.full_schema());
    }

    #[test]
    fn library_of_resolves_tools() {
        let reg = abc();
        assert_eq!(reg.library_of("b_1"), Some("B"));
        assert_eq!(reg.library_of("zzz"), None);
        assert_eq!(reg.tool("c_3").unwrap().description, "tool 3");
    }
}
