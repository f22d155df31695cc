//! Stratified prompt models: ordered strata of text components anchored by a
//! fixed query, with exhaustive enumeration of every subprompt the model can
//! produce.
//!
//! A stratum is either `static` (its single component appears in every
//! subprompt; the query is the designated static stratum) or `variable` (any
//! one of its components, or the implicit empty choice, appears). Enumeration
//! therefore yields the product over variable strata of `n_i + 1` subprompts,
//! with the all-empty selection — the bare query — first.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard ceiling on enumeration size unless the caller raises it.
pub const DEFAULT_SUBPROMPT_CAP: u64 = 1 << 20;

const DEFAULT_SEPARATOR: &str = "\n";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model has no strata")]
    NoStrata,
    #[error("duplicate component id `{0}`")]
    DuplicateComponentId(String),
    #[error("component `{id}` in stratum {stratum} has empty text")]
    EmptyComponentText { stratum: usize, id: String },
    #[error("no stratum marked as query")]
    NoQueryStratum,
    #[error("more than one stratum marked as query (strata {first} and {second})")]
    MultipleQueryStrata { first: usize, second: usize },
    #[error("query stratum index {index} out of range ({count} strata)")]
    QueryStratumOutOfRange { index: usize, count: usize },
    #[error("query stratum {0} must be static")]
    QueryStratumNotStatic(usize),
    #[error("static stratum {index} must hold exactly one component, found {count}")]
    StaticStratumComponentCount { index: usize, count: usize },
    #[error("stratum {0} has no components")]
    EmptyStratum(usize),
    #[error("design too large: {subprompts} subprompts exceeds cap {cap}")]
    DesignTooLarge { subprompts: u128, cap: u64 },
    #[error("unknown component id `{0}`")]
    UnknownComponent(String),
    #[error("stratum index {0} out of range")]
    UnknownStratum(usize),
    #[error("component `{id}` does not belong to stratum {stratum}")]
    ComponentNotInStratum { stratum: usize, id: String },
    #[error("static stratum {0} cannot take the empty choice")]
    EmptyChoiceForStatic(usize),
    #[error("malformed subprompt key `{key}`: {reason}")]
    MalformedKey { key: String, reason: String },
    #[error("failed to read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid model file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// One candidate text within a stratum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptComponent {
    pub id: String,
    pub stratum_index: usize,
    pub text: String,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratumKind {
    Static,
    Variable,
}

/// An ordered position in the prompt holding one or more alternative components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptStratum {
    pub index: usize,
    pub name: String,
    pub kind: StratumKind,
    pub components: Vec<PromptComponent>,
}

impl PromptStratum {
    pub fn is_variable(&self) -> bool {
        self.kind == StratumKind::Variable
    }

    /// Number of stored components (the implicit empty choice is not counted).
    pub fn component_count(&self) -> usize {
        self.components.len()
    }
}

/// On-disk description of a prompt model. Unknown fields are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_separator")]
    pub separator: String,
    pub strata: Vec<StratumSpec>,
    pub query_stratum: usize,
}

fn default_separator() -> String {
    DEFAULT_SEPARATOR.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumSpec {
    pub name: String,
    pub kind: StratumKind,
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

/// A validated stratified prompt model.
#[derive(Debug, Clone)]
pub struct PromptModel {
    strata: Vec<PromptStratum>,
    query_stratum: usize,
    separator: String,
    variable_strata: Vec<usize>,
    component_index: HashMap<String, (usize, usize)>,
}

/// One enumerated (or hand-assembled) subprompt: a validated per-stratum
/// selection, its canonical key, and the rendered prompt text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subprompt {
    /// Per-stratum selected component position; `None` is the empty choice.
    selections: Vec<Option<u32>>,
    key: String,
    rendered: String,
}

impl Subprompt {
    pub fn selections(&self) -> &[Option<u32>] {
        &self.selections
    }

    /// Canonical key: one `<stratum>:<escaped id>` entry per variable stratum,
    /// joined by `|`, with the id omitted for the empty choice.
    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn rendered(&self) -> &str {
        &self.rendered
    }

    /// Id of the component selected in `stratum`, if any.
    pub fn selected_id<'m>(&self, model: &'m PromptModel, stratum: usize) -> Option<&'m str> {
        let pos = self.selections.get(stratum).copied().flatten()?;
        Some(model.strata[stratum].components[pos as usize].id.as_str())
    }

    /// Selected `(stratum, component id)` pairs across variable strata.
    pub fn active_pairs<'m>(&self, model: &'m PromptModel) -> Vec<(usize, &'m str)> {
        model
            .variable_strata
            .iter()
            .filter_map(|&l| self.selected_id(model, l).map(|id| (l, id)))
            .collect()
    }

    /// True when no variable stratum selects a component (the bare query).
    pub fn is_all_empty(&self, model: &PromptModel) -> bool {
        model.variable_strata.iter().all(|&l| self.selections[l].is_none())
    }
}

impl PromptModel {
    /// Validate a structured description and build the model.
    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        if spec.strata.is_empty() {
            return Err(ModelError::NoStrata);
        }
        if spec.query_stratum >= spec.strata.len() {
            return Err(ModelError::QueryStratumOutOfRange {
                index: spec.query_stratum,
                count: spec.strata.len(),
            });
        }
        let mut strata = Vec::with_capacity(spec.strata.len());
        let mut component_index = HashMap::new();
        let mut variable_strata = Vec::new();
        for (index, s) in spec.strata.iter().enumerate() {
            match s.kind {
                StratumKind::Static if s.components.len() != 1 => {
                    return Err(ModelError::StaticStratumComponentCount {
                        index,
                        count: s.components.len(),
                    });
                }
                StratumKind::Variable if s.components.is_empty() => {
                    return Err(ModelError::EmptyStratum(index));
                }
                _ => {}
            }
            let mut components = Vec::with_capacity(s.components.len());
            for (pos, c) in s.components.iter().enumerate() {
                if c.text.is_empty() {
                    return Err(ModelError::EmptyComponentText {
                        stratum: index,
                        id: c.id.clone(),
                    });
                }
                if component_index.insert(c.id.clone(), (index, pos)).is_some() {
                    return Err(ModelError::DuplicateComponentId(c.id.clone()));
                }
                components.push(PromptComponent {
                    id: c.id.clone(),
                    stratum_index: index,
                    text: c.text.clone(),
                    tags: c.tags.clone(),
                });
            }
            if s.kind == StratumKind::Variable {
                variable_strata.push(index);
            }
            strata.push(PromptStratum {
                index,
                name: s.name.clone(),
                kind: s.kind,
                components,
            });
        }
        if strata[spec.query_stratum].kind != StratumKind::Static {
            return Err(ModelError::QueryStratumNotStatic(spec.query_stratum));
        }
        Ok(PromptModel {
            strata,
            query_stratum: spec.query_stratum,
            separator: spec.separator.clone(),
            variable_strata,
            component_index,
        })
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let spec: ModelSpec = serde_json::from_str(json)?;
        Self::from_spec(&spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Re-emit the structured description this model was built from.
    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            separator: self.separator.clone(),
            strata: self
                .strata
                .iter()
                .map(|s| StratumSpec {
                    name: s.name.clone(),
                    kind: s.kind,
                    components: s
                        .components
                        .iter()
                        .map(|c| ComponentSpec {
                            id: c.id.clone(),
                            text: c.text.clone(),
                            tags: c.tags.clone(),
                        })
                        .collect(),
                })
                .collect(),
            query_stratum: self.query_stratum,
        }
    }

    pub fn strata(&self) -> &[PromptStratum] {
        &self.strata
    }

    pub fn stratum(&self, index: usize) -> Result<&PromptStratum, ModelError> {
        self.strata.get(index).ok_or(ModelError::UnknownStratum(index))
    }

    pub fn query_stratum(&self) -> usize {
        self.query_stratum
    }

    pub fn query_text(&self) -> &str {
        &self.strata[self.query_stratum].components[0].text
    }

    pub fn separator(&self) -> &str {
        &self.separator
    }

    /// Indices of variable strata, in prompt order.
    pub fn variable_strata(&self) -> &[usize] {
        &self.variable_strata
    }

    /// All components of variable strata, in (stratum, position) order.
    pub fn variable_components(&self) -> impl Iterator<Item = &PromptComponent> {
        self.variable_strata
            .iter()
            .flat_map(|&l| self.strata[l].components.iter())
    }

    /// Locate a component by id as `(stratum index, position)`.
    pub fn component_position(&self, id: &str) -> Result<(usize, usize), ModelError> {
        self.component_index
            .get(id)
            .copied()
            .ok_or_else(|| ModelError::UnknownComponent(id.to_string()))
    }

    pub fn component(&self, id: &str) -> Result<&PromptComponent, ModelError> {
        let (l, pos) = self.component_position(id)?;
        Ok(&self.strata[l].components[pos])
    }

    /// Number of subprompts the full enumeration would produce:
    /// the product over variable strata of `n_i + 1`.
    pub fn subprompt_count(&self) -> u128 {
        self.variable_strata
            .iter()
            .map(|&l| self.strata[l].components.len() as u128 + 1)
            .product()
    }

    /// Enumerate every subprompt under the default size cap.
    pub fn enumerate(&self) -> Result<Vec<Subprompt>, ModelError> {
        self.enumerate_capped(DEFAULT_SUBPROMPT_CAP)
    }

    /// Enumerate every subprompt, failing if the design exceeds `cap` rows.
    ///
    /// Order is deterministic: the per-stratum choice sequence is treated as a
    /// number with the empty choice as digit zero and the last stratum varying
    /// fastest, so the all-empty selection (the bare query) comes first.
    pub fn enumerate_capped(&self, cap: u64) -> Result<Vec<Subprompt>, ModelError> {
        let count = self.subprompt_count();
        if count > cap as u128 {
            return Err(ModelError::DesignTooLarge {
                subprompts: count,
                cap,
            });
        }
        let count = count as u64;
        let mut out = Vec::with_capacity(count as usize);
        let mut selections = vec![None; self.strata.len()];
        for s in &self.strata {
            if s.kind == StratumKind::Static {
                selections[s.index] = Some(0);
            }
        }
        for c in 0..count {
            let mut rest = c;
            for &l in self.variable_strata.iter().rev() {
                let radix = self.strata[l].components.len() as u64 + 1;
                let digit = rest % radix;
                rest /= radix;
                selections[l] = if digit == 0 { None } else { Some(digit as u32 - 1) };
            }
            out.push(self.subprompt_from_selections(&selections));
        }
        Ok(out)
    }

    fn subprompt_from_selections(&self, selections: &[Option<u32>]) -> Subprompt {
        let key = self.encode_key(selections);
        let rendered = self.render_selections(selections, &self.separator);
        Subprompt {
            selections: selections.to_vec(),
            key,
            rendered,
        }
    }

    /// Assemble a single subprompt from `(stratum, component id)` choices.
    /// Variable strata not mentioned take the empty choice; static strata are
    /// filled automatically and reject any conflicting choice.
    pub fn subprompt_from_choices(
        &self,
        choices: &[(usize, Option<&str>)],
    ) -> Result<Subprompt, ModelError> {
        let mut selections: Vec<Option<u32>> = vec![None; self.strata.len()];
        for s in &self.strata {
            if s.kind == StratumKind::Static {
                selections[s.index] = Some(0);
            }
        }
        for &(l, choice) in choices {
            let stratum = self.stratum(l)?;
            match choice {
                None => {
                    if !stratum.is_variable() {
                        return Err(ModelError::EmptyChoiceForStatic(l));
                    }
                    selections[l] = None;
                }
                Some(id) => {
                    let (found_l, pos) = self.component_position(id)?;
                    if found_l != l {
                        return Err(ModelError::ComponentNotInStratum {
                            stratum: l,
                            id: id.to_string(),
                        });
                    }
                    selections[l] = Some(pos as u32);
                }
            }
        }
        Ok(self.subprompt_from_selections(&selections))
    }

    /// Render a subprompt with the model's separator.
    pub fn render(&self, sub: &Subprompt) -> String {
        self.render_selections(&sub.selections, &self.separator)
    }

    /// Render a subprompt with an explicit separator: selected component texts
    /// in stratum order, empty choices skipped.
    pub fn render_with_separator(&self, sub: &Subprompt, separator: &str) -> String {
        self.render_selections(&sub.selections, separator)
    }

    fn render_selections(&self, selections: &[Option<u32>], separator: &str) -> String {
        debug_assert_eq!(selections.len(), self.strata.len());
        let mut parts = Vec::new();
        for s in &self.strata {
            if let Some(pos) = selections[s.index] {
                parts.push(s.components[pos as usize].text.as_str());
            }
        }
        parts.join(separator)
    }

    fn encode_key(&self, selections: &[Option<u32>]) -> String {
        let mut parts = Vec::with_capacity(self.variable_strata.len());
        for &l in &self.variable_strata {
            match selections[l] {
                None => parts.push(format!("{l}:")),
                Some(pos) => {
                    let id = &self.strata[l].components[pos as usize].id;
                    parts.push(format!("{l}:{}", escape_key_part(id)));
                }
            }
        }
        parts.join("|")
    }

    /// Invert [`Subprompt::key`] back into a full subprompt.
    pub fn parse_key(&self, key: &str) -> Result<Subprompt, ModelError> {
        let malformed = |reason: &str| ModelError::MalformedKey {
            key: key.to_string(),
            reason: reason.to_string(),
        };
        let mut selections: Vec<Option<u32>> = vec![None; self.strata.len()];
        for s in &self.strata {
            if s.kind == StratumKind::Static {
                selections[s.index] = Some(0);
            }
        }
        let parts: Vec<&str> = if key.is_empty() {
            Vec::new()
        } else {
            key.split('|').collect()
        };
        if parts.len() != self.variable_strata.len() {
            return Err(malformed(&format!(
                "expected {} entries, found {}",
                self.variable_strata.len(),
                parts.len()
            )));
        }
        for (part, &expected_l) in parts.iter().zip(&self.variable_strata) {
            let (l_str, id_part) = part
                .split_once(':')
                .ok_or_else(|| malformed("entry missing `:`"))?;
            let l: usize = l_str
                .parse()
                .map_err(|_| malformed("non-numeric stratum index"))?;
            if l != expected_l {
                return Err(malformed(&format!(
                    "entry for stratum {l} where stratum {expected_l} was expected"
                )));
            }
            if id_part.is_empty() {
                selections[l] = None;
            } else {
                let id = unescape_key_part(id_part)
                    .ok_or_else(|| malformed("bad escape sequence"))?;
                let (found_l, pos) = self.component_position(&id)?;
                if found_l != l {
                    return Err(ModelError::ComponentNotInStratum { stratum: l, id });
                }
                selections[l] = Some(pos as u32);
            }
        }
        Ok(self.subprompt_from_selections(&selections))
    }
}

fn escape_key_part(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for ch in id.chars() {
        match ch {
            '%' => out.push_str("%25"),
            '|' => out.push_str("%7C"),
            ':' => out.push_str("%3A"),
            _ => out.push(ch),
        }
    }
    out
}

fn unescape_key_part(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '%' {
            out.push(ch);
            continue;
        }
        let hi = chars.next()?;
        let lo = chars.next()?;
        match (hi, lo) {
            ('2', '5') => out.push('%'),
            ('7', 'C') => out.push('|'),
            ('3', 'A') => out.push(':'),
            _ => return None,
        }
    }
    Some(out)
}

/// Incremental construction of a [`ModelSpec`], mainly for tests and examples.
#[derive(Debug, Default)]
pub struct ModelBuilder {
    separator: Option<String>,
    strata: Vec<StratumSpec>,
    query_marks: Vec<usize>,
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn separator(mut self, sep: &str) -> Self {
        self.separator = Some(sep.to_string());
        self
    }

    pub fn static_stratum(mut self, name: &str, id: &str, text: &str) -> Self {
        self.strata.push(StratumSpec {
            name: name.to_string(),
            kind: StratumKind::Static,
            components: vec![ComponentSpec {
                id: id.to_string(),
                text: text.to_string(),
                tags: Vec::new(),
            }],
        });
        self
    }

    pub fn variable_stratum(mut self, name: &str, components: &[(&str, &str)]) -> Self {
        self.strata.push(StratumSpec {
            name: name.to_string(),
            kind: StratumKind::Variable,
            components: components
                .iter()
                .map(|(id, text)| ComponentSpec {
                    id: id.to_string(),
                    text: text.to_string(),
                    tags: Vec::new(),
                })
                .collect(),
        });
        self
    }

    pub fn variable_stratum_with(mut self, name: &str, components: Vec<ComponentSpec>) -> Self {
        self.strata.push(StratumSpec {
            name: name.to_string(),
            kind: StratumKind::Variable,
            components,
        });
        self
    }

    /// Append the query stratum. Marking more than one is a build error.
    pub fn query(mut self, name: &str, id: &str, text: &str) -> Self {
        self.query_marks.push(self.strata.len());
        self.static_stratum(name, id, text)
    }

    pub fn build(self) -> Result<PromptModel, ModelError> {
        let query_stratum = match self.query_marks.as_slice() {
            [] => return Err(ModelError::NoQueryStratum),
            [one] => *one,
            [first, second, ..] => {
                return Err(ModelError::MultipleQueryStrata {
                    first: *first,
                    second: *second,
                })
            }
        };
        PromptModel::from_spec(&ModelSpec {
            separator: self.separator.unwrap_or_else(default_separator),
            strata: self.strata,
            query_stratum,
        })
    }
}
