use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Transform;
use crate::category::CategoryId;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    Bool,
    Number,
    Integer,
    String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Scalar>,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

impl ParamSpec {
    pub fn new(name: &str, ty: ParamType) -> Self {
        ParamSpec {
            name: name.to_string(),
            ty,
            default: None,
            required: false,
            min: None,
            max: None,
            choices: Vec::new(),
            description: String::new(),
        }
    }

    pub fn boolean(name: &str) -> Self {
        Self::new(name, ParamType::Bool).default(false)
    }

    pub fn number(name: &str) -> Self {
        Self::new(name, ParamType::Number)
    }

    pub fn integer(name: &str) -> Self {
        Self::new(name, ParamType::Integer)
    }

    pub fn string(name: &str) -> Self {
        Self::new(name, ParamType::String)
    }

    pub fn required(mut self) -> Self {
        self.required = true;
        self
    }

    pub fn default(mut self, value: impl Into<Scalar>) -> Self {
        self.default = Some(value.into());
        self
    }

    pub fn range(mut self, min: f64, max: f64) -> Self {
        self.min = Some(min);
        self.max = Some(max);
        self
    }

    pub fn min(mut self, min: f64) -> Self {
        self.min = Some(min);
        self
    }

    pub fn choices(mut self, choices: &[&str]) -> Self {
        self.choices = choices.iter().map(|c| c.to_string()).collect();
        self
    }

    pub fn describe(mut self, text: &str) -> Self {
        self.description = text.to_string();
        self
    }

    fn check(&self, value: &Scalar) -> Result<Scalar, String> {
        let value = match (self.ty, value) {
            (ParamType::Bool, Scalar::Bool(_)) => value.clone(),
            (ParamType::Number, Scalar::Num(_)) => value.clone(),
            (ParamType::Integer, Scalar::Num(n)) if n.fract() == 0.0 => value.clone(),
            (ParamType::Integer, Scalar::Num(n)) => {
                return Err(format!("`{}` must be an integer, got {n}", self.name))
            }
            (ParamType::String, Scalar::Str(_)) => value.clone(),
            // numbers are accepted where text is expected (fmtp values)
            (ParamType::String, Scalar::Num(n)) => Scalar::Str(format_number(*n)),
            (ty, other) => {
                return Err(format!(
                    "`{}` must be {}, got {}",
                    self.name,
                    match ty {
                        ParamType::Bool => "a boolean",
                        ParamType::Number => "a number",
                        ParamType::Integer => "an integer",
                        ParamType::String => "a string",
                    },
                    other.type_name()
                ))
            }
        };
        if let Scalar::Num(n) = value {
            if !n.is_finite() {
                return Err(format!("`{}` must be finite", self.name));
            }
            if self.min.is_some_and(|m| n < m) || self.max.is_some_and(|m| n > m) {
                return Err(format!(
                    "`{}` = {n} outside [{}, {}]",
                    self.name,
                    self.min.map_or("-inf".into(), format_number),
                    self.max.map_or("inf".into(), format_number)
                ));
            }
        }
        if let Scalar::Str(s) = &value {
            if !self.choices.is_empty() && !self.choices.contains(s) {
                return Err(format!(
                    "`{}` must be one of {}, got `{s}`",
                    self.name,
                    self.choices.join(", ")
                ));
            }
        }
        Ok(value)
    }
}

fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        n.to_string()
    }
}

/// Validated parameters with defaults filled in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Params(pub BTreeMap<String, Scalar>);

impl Params {
    pub fn get(&self, name: &str) -> Option<&Scalar> {
        self.0.get(name)
    }

    pub fn str(&self, name: &str) -> Option<&str> {
        self.0.get(name).and_then(Scalar::as_str)
    }

    pub fn f64(&self, name: &str) -> Option<f64> {
        self.0.get(name).and_then(Scalar::as_f64)
    }

    pub fn bool(&self, name: &str) -> bool {
        self.0.get(name).and_then(Scalar::as_bool).unwrap_or(false)
    }
}

pub fn validate_params(schema: &[ParamSpec], given: &BTreeMap<String, Scalar>) -> Result<Params, String> {
    if let Some(unknown) = given.keys().find(|k| !schema.iter().any(|p| &p.name == *k)) {
        return Err(format!("unknown parameter `{unknown}`"));
    }
    let mut out = BTreeMap::new();
    for spec in schema {
        match given.get(&spec.name) {
            Some(v) => {
                out.insert(spec.name.clone(), spec.check(v)?);
            }
            None if spec.required => return Err(format!("missing required parameter `{}`", spec.name)),
            None => {
                if let Some(d) = &spec.default {
                    out.insert(spec.name.clone(), d.clone());
                }
            }
        }
    }
    Ok(Params(out))
}

pub type TransformFactory = Arc<dyn Fn(&Params) -> Result<Arc<dyn Transform>, String> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntrySource {
    Builtin,
    Plugin,
}

#[derive(Clone)]
pub struct CatalogEntry {
    pub name: String,
    pub category: CategoryId,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub strict_safe: bool,
    /// Bindings used when a spec requests none.
    pub default_bindings: Vec<String>,
    pub source: EntrySource,
    pub factory: TransformFactory,
}

impl std::fmt::Debug for CatalogEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CatalogEntry")
            .field("name", &self.name)
            .field("category", &self.category)
            .field("strict_safe", &self.strict_safe)
            .finish()
    }
}

impl CatalogEntry {
    pub fn manifest(&self) -> ManifestEntry {
        ManifestEntry {
            name: self.name.clone(),
            category: self.category,
            description: self.description.clone(),
            strict_safe: self.strict_safe,
            source: self.source,
            default_bindings: self.default_bindings.clone(),
            params: self.params.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub category: CategoryId,
    pub description: String,
    pub strict_safe: bool,
    pub source: EntrySource,
    pub default_bindings: Vec<String>,
    pub params: Vec<ParamSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegisterError {
    #[error("`{name}` is already registered for {category}")]
    Duplicate { category: CategoryId, name: String },
    #[error("binding `{binding}` is not available to {category}")]
    UnknownBinding { category: CategoryId, binding: String },
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    entries: BTreeMap<(CategoryId, String), CatalogEntry>,
}

impl Catalog {
    pub fn empty() -> Self {
        Catalog::default()
    }

    /// The catalog with every builtin registered.
    pub fn with_builtins() -> Self {
        let mut c = Catalog::empty();
        super::builtins::register_all(&mut c);
        c
    }

    pub fn get(&self, category: CategoryId, name: &str) -> Option<&CatalogEntry> {
        self.entries.get(&(category, name.to_string()))
    }

    pub fn entries(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.values()
    }

    pub fn register(&mut self, entry: CatalogEntry) -> Result<(), RegisterError> {
        if let Some(b) = entry
            .default_bindings
            .iter()
            .find(|b| !entry.category.allows_binding(b))
        {
            return Err(RegisterError::UnknownBinding {
                category: entry.category,
                binding: b.clone(),
            });
        }
        let key = (entry.category, entry.name.clone());
        if self.entries.contains_key(&key) {
            return Err(RegisterError::Duplicate {
                category: entry.category,
                name: entry.name,
            });
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    /// Registers compiled host code. Plugins are never strict-safe.
    pub fn register_plugin(
        &mut self,
        category: CategoryId,
        name: &str,
        description: &str,
        params: Vec<ParamSpec>,
        factory: TransformFactory,
    ) -> Result<(), RegisterError> {
        self.register(CatalogEntry {
            name: name.to_string(),
            category,
            description: description.to_string(),
            params,
            strict_safe: false,
            default_bindings: Vec::new(),
            source: EntrySource::Plugin,
            factory,
        })
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.entries.values().map(CatalogEntry::manifest).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<ParamSpec> {
        vec![
            ParamSpec::string("kind").required().choices(&["audio", "video"]),
            ParamSpec::integer("kbps").range(1.0, 100_000.0).default(256),
            ParamSpec::boolean("strip"),
            ParamSpec::string("value"),
        ]
    }

    fn given(pairs: &[(&str, Scalar)]) -> BTreeMap<String, Scalar> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn fills_defaults() {
        let p = validate_params(&schema(), &given(&[("kind", "audio".into())])).unwrap();
        assert_eq!(p.f64("kbps"), Some(256.0));
        assert!(!p.bool("strip"));
        assert_eq!(p.get("value"), None);
    }

    #[test]
    fn rejects_bad_values() {
        let s = schema();
        assert!(validate_params(&s, &given(&[])).unwrap_err().contains("missing"));
        assert!(validate_params(&s, &given(&[("kind", "text".into())])).is_err());
        assert!(validate_params(&s, &given(&[("kind", "audio".into()), ("kbps", 0.into())])).is_err());
        assert!(validate_params(&s, &given(&[("kind", "audio".into()), ("kbps", 1.5.into())])).is_err());
        assert!(validate_params(&s, &given(&[("kind", true.into())])).is_err());
        assert!(validate_params(&s, &given(&[("kind", "audio".into()), ("nope", 1.into())]))
            .unwrap_err()
            .contains("unknown"));
    }

    #[test]
    fn numbers_coerce_to_text() {
        let p = validate_params(&schema(), &given(&[("kind", "video".into()), ("value", 0.into())])).unwrap();
        assert_eq!(p.str("value"), Some("0"));
    }

    #[test]
    fn builtin_manifest_is_consistent() {
        let c = Catalog::with_builtins();
        let manifest = c.manifest();
        assert!(manifest.len() >= 20);
        for category in CategoryId::ALL {
            assert!(
                manifest.iter().any(|m| m.category == category),
                "no builtin for {category}"
            );
        }
        assert!(manifest.iter().any(|m| !m.strict_safe));
        let json = serde_json::to_string(&manifest).unwrap();
        let back: Vec<ManifestEntry> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, manifest);
    }
}
