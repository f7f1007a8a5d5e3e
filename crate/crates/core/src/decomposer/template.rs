use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DecomposeError;

pub const PLACEHOLDER: &str = "{user question here}";

const BUILTIN: [(&str, &str); 4] = [
    ("default", include_str!("../../templates/default.txt")),
    ("no-background", include_str!("../../templates/no-background.txt")),
    ("no-temporal", include_str!("../../templates/no-temporal.txt")),
    ("rephrased", include_str!("../../templates/rephrased.txt")),
];

/// Decomposition prompt with exactly one `{user question here}` placeholder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    name: String,
    body: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self, DecomposeError> {
        let name = name.into();
        let body = body.into();
        if body.trim().is_empty() {
            return Err(DecomposeError::Template(format!("template `{name}` has an empty body")));
        }
        let count = body.matches(PLACEHOLDER).count();
        if count != 1 {
            return Err(DecomposeError::Template(format!(
                "template `{name}` must contain `{PLACEHOLDER}` exactly once, found {count}"
            )));
        }
        Ok(Self { name, body })
    }

    /// The built-in prompt used unless another is selected.
    pub fn default_template() -> Self {
        Self::builtin("default").expect("built-in template exists")
    }

    /// `default`, `no-background`, `no-temporal` or `rephrased`.
    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, body)| Self::new(*n, *body).expect("built-in templates are well formed"))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    /// Loads a UTF-8 text file; the template is named after the file stem.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, DecomposeError> {
        let path = path.as_ref();
        let body = fs::read_to_string(path)
            .map_err(|e| DecomposeError::Template(format!("{}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(name, body)
    }

    /// A built-in name, or otherwise a path to a template file.
    pub fn resolve(name_or_path: &str) -> Result<Self, DecomposeError> {
        match Self::builtin(name_or_path) {
            Some(t) => Ok(t),
            None if Path::new(name_or_path).is_file() => Self::from_file(name_or_path),
            None => Err(DecomposeError::Template(format!(
                "unknown template `{name_or_path}` (built-ins: {})",
                Self::builtin_names().collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }
}

/// Substitutes the question verbatim into the placeholder.
pub fn build_prompt(template: &PromptTemplate, question: &str) -> Result<String, DecomposeError> {
    if question.trim().is_empty() {
        return Err(DecomposeError::Validation("question must not be empty".into()));
    }
    Ok(template.body.replacen(PLACEHOLDER, question, 1))
}
