//! Binary design matrices over enumerated subprompts.
//!
//! Each column is a 0/1 indicator: first-order columns mark a single
//! component being selected, interaction columns of order `g` mark `g`
//! components from `g` distinct strata all being selected at once. The
//! intercept is part of every exported or densified matrix but is not stored
//! as a bit column. Storage is dense and column-major; at the sizes this
//! crate caps enumeration at (2^20 rows, ~10^3 columns) sparse formats buy
//! nothing.

use std::io::Write;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt_model::{ModelError, PromptModel, Subprompt};

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("stratum index {0} is out of range")]
    UnknownStratum(usize),
    #[error("interaction stratum {0} is not variable")]
    InteractionStratumNotVariable(usize),
    #[error("max interaction order must be at least 1, got {0}")]
    MaxOrderZero(usize),
    #[error("max interaction order {max_order} exceeds the {strata} interaction strata")]
    MaxOrderTooLarge { max_order: usize, strata: usize },
    #[error("term references unknown component `{0}`")]
    UnknownComponent(String),
    #[error("invalid term `{label}`: {reason}")]
    InvalidTerm { label: String, reason: String },
    #[error("repeats must be at least 1")]
    ZeroRepeats,
    #[error("subprompt selection does not match the model shape")]
    SelectionShapeMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv write failed: {0}")]
    Csv(#[from] csv::Error),
}

/// One member of a term: a component identified within its stratum.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TermMember {
    pub stratum: usize,
    pub component_id: String,
}

/// A design-matrix column: an order-1 indicator or a cross-stratum
/// interaction of 2..=L indicators. Members are kept sorted by stratum and
/// never share one (components within a stratum are mutually exclusive, so an
/// intra-stratum interaction would be identically zero).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TermDescriptor {
    order: usize,
    members: Vec<TermMember>,
    label: String,
}

impl TermDescriptor {
    /// Build a term from component ids, resolving strata through the model.
    pub fn new(model: &PromptModel, component_ids: &[&str]) -> Result<Self, EncodingError> {
        let mut members = Vec::with_capacity(component_ids.len());
        for &id in component_ids {
            let (stratum, _) = model
                .component_position(id)
                .map_err(|_| EncodingError::UnknownComponent(id.to_string()))?;
            members.push(TermMember {
                stratum,
                component_id: id.to_string(),
            });
        }
        members.sort();
        let label = join_label(&members);
        let term = TermDescriptor {
            order: members.len(),
            members,
            label,
        };
        term.check_well_formed()?;
        Ok(term)
    }

    fn from_members(mut members: Vec<TermMember>) -> Self {
        members.sort();
        let label = join_label(&members);
        TermDescriptor {
            order: members.len(),
            members,
            label,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn members(&self) -> &[TermMember] {
        &self.members
    }

    /// Component id for a first-order term; interaction labels join the
    /// member ids with `*` in stratum order.
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn member_pairs(&self) -> impl Iterator<Item = (usize, &str)> {
        self.members
            .iter()
            .map(|m| (m.stratum, m.component_id.as_str()))
    }

    fn check_well_formed(&self) -> Result<(), EncodingError> {
        let invalid = |reason: &str| EncodingError::InvalidTerm {
            label: self.label.clone(),
            reason: reason.to_string(),
        };
        if self.members.is_empty() {
            return Err(invalid("no members"));
        }
        if self.members.len() != self.order {
            return Err(invalid("member count does not equal order"));
        }
        for pair in self.members.windows(2) {
            if pair[0].stratum == pair[1].stratum {
                return Err(invalid("two members share a stratum"));
            }
        }
        Ok(())
    }
}

fn join_label(members: &[TermMember]) -> String {
    members
        .iter()
        .map(|m| m.component_id.as_str())
        .collect::<Vec<_>>()
        .join("*")
}

/// All terms up to `max_order`: first-order terms for every component of
/// every variable stratum ordered by (stratum, position), then interaction
/// terms of order 2..=`max_order` drawn from `interaction_strata` (one member
/// per stratum), ordered by order and then lexicographically by member tuple.
pub fn term_universe(
    model: &PromptModel,
    interaction_strata: &[usize],
    max_order: usize,
) -> Result<Vec<TermDescriptor>, EncodingError> {
    if max_order < 1 {
        return Err(EncodingError::MaxOrderZero(max_order));
    }
    let mut strata: Vec<usize> = interaction_strata.to_vec();
    strata.sort_unstable();
    strata.dedup();
    for &l in &strata {
        let stratum = model
            .stratum(l)
            .map_err(|_| EncodingError::UnknownStratum(l))?;
        if !stratum.is_variable() {
            return Err(EncodingError::InteractionStratumNotVariable(l));
        }
    }
    // A first-order-only universe needs no interaction strata; any higher
    // order must fit inside the interaction set.
    if max_order > strata.len().max(1) {
        return Err(EncodingError::MaxOrderTooLarge {
            max_order,
            strata: strata.len(),
        });
    }

    let mut terms = Vec::new();
    for component in model.variable_components() {
        terms.push(TermDescriptor::from_members(vec![TermMember {
            stratum: component.stratum_index,
            component_id: component.id.clone(),
        }]));
    }
    for order in 2..=max_order {
        let mut level: Vec<TermDescriptor> = Vec::new();
        for combo in combinations(&strata, order) {
            component_assignments(model, &combo, &mut level);
        }
        level.sort_by(|a, b| {
            let a_key: Vec<(usize, &str)> = a.member_pairs().collect();
            let b_key: Vec<(usize, &str)> = b.member_pairs().collect();
            a_key.cmp(&b_key)
        });
        terms.extend(level);
    }
    Ok(terms)
}

/// All size-`k` ascending combinations of `items` (itself sorted).
fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn recurse(items: &[usize], k: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..items.len() {
            current.push(items[i]);
            recurse(items, k, i + 1, current, out);
            current.pop();
        }
    }
    recurse(items, k, 0, &mut current, &mut out);
    out
}

/// Every choice of one component per stratum in `combo`, appended to `out`.
fn component_assignments(model: &PromptModel, combo: &[usize], out: &mut Vec<TermDescriptor>) {
    let mut positions = vec![0usize; combo.len()];
    loop {
        let members: Vec<TermMember> = combo
            .iter()
            .zip(&positions)
            .map(|(&l, &p)| TermMember {
                stratum: l,
                component_id: model.strata()[l].components[p].id.clone(),
            })
            .collect();
        out.push(TermDescriptor::from_members(members));
        // Mixed-radix increment, last stratum fastest.
        let mut i = combo.len();
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            positions[i] += 1;
            if positions[i] < model.strata()[combo[i]].components.len() {
                break;
            }
            positions[i] = 0;
        }
    }
}

/// The assembled binary matrix: one bit column per term, rows stacked as
/// (subprompt, repeat) pairs with repeats adjacent.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    terms: Vec<TermDescriptor>,
    columns: Vec<BitVec<u64, Lsb0>>,
    row_keys: Vec<(String, u32)>,
    repeats: u32,
}

/// Build the matrix for `subprompts` over `terms`, stacking `repeats`
/// identical rows per subprompt.
pub fn build_design_matrix(
    model: &PromptModel,
    subprompts: &[Subprompt],
    terms: &[TermDescriptor],
    repeats: u32,
) -> Result<DesignMatrix, EncodingError> {
    if repeats == 0 {
        return Err(EncodingError::ZeroRepeats);
    }
    // Resolve every member to (stratum, position) once, validating as we go.
    let mut resolved: Vec<Vec<(usize, u32)>> = Vec::with_capacity(terms.len());
    for term in terms {
        term.check_well_formed()?;
        let mut pairs = Vec::with_capacity(term.members.len());
        for m in &term.members {
            let (stratum, pos) = match model.component_position(&m.component_id) {
                Ok(found) => found,
                Err(ModelError::UnknownComponent(id)) => {
                    return Err(EncodingError::UnknownComponent(id))
                }
                Err(_) => return Err(EncodingError::UnknownComponent(m.component_id.clone())),
            };
            if stratum != m.stratum {
                return Err(EncodingError::InvalidTerm {
                    label: term.label.clone(),
                    reason: format!(
                        "component `{}` lives in stratum {stratum}, not {}",
                        m.component_id, m.stratum
                    ),
                });
            }
            pairs.push((stratum, pos as u32));
        }
        resolved.push(pairs);
    }

    let n_rows = subprompts.len() * repeats as usize;
    let mut columns: Vec<BitVec<u64, Lsb0>> =
        (0..terms.len()).map(|_| bitvec![u64, Lsb0; 0; n_rows]).collect();
    let mut row_keys = Vec::with_capacity(n_rows);
    for (s_idx, sub) in subprompts.iter().enumerate() {
        let selections = sub.selections();
        if selections.len() != model.strata().len() {
            return Err(EncodingError::SelectionShapeMismatch);
        }
        for rep in 0..repeats {
            row_keys.push((sub.key().to_string(), rep));
        }
        for (t_idx, pairs) in resolved.iter().enumerate() {
            let active = pairs
                .iter()
                .all(|&(stratum, pos)| selections[stratum] == Some(pos));
            if active {
                let base = s_idx * repeats as usize;
                for rep in 0..repeats as usize {
                    columns[t_idx].set(base + rep, true);
                }
            }
        }
    }
    Ok(DesignMatrix {
        terms: terms.to_vec(),
        columns,
        row_keys,
        repeats,
    })
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.row_keys.len()
    }

    /// Column count including the intercept.
    pub fn n_columns(&self) -> usize {
        self.terms.len() + 1
    }

    pub fn terms(&self) -> &[TermDescriptor] {
        &self.terms
    }

    pub fn row_keys(&self) -> &[(String, u32)] {
        &self.row_keys
    }

    pub fn repeats(&self) -> u32 {
        self.repeats
    }

    /// Bit column for term `t` (the intercept has no stored column).
    pub fn term_column(&self, t: usize) -> &BitSlice<u64, Lsb0> {
        &self.columns[t]
    }

    pub fn entry(&self, row: usize, t: usize) -> bool {
        self.columns[t][row]
    }

    pub fn ones_in_column(&self, t: usize) -> usize {
        self.columns[t].count_ones()
    }

    /// Densify the full matrix, intercept first.
    pub fn to_dense(&self) -> DenseDesign {
        let all: Vec<usize> = (0..self.terms.len()).collect();
        self.to_dense_subset(&all)
    }

    /// Densify the intercept plus the selected term columns, in the given
    /// order.
    pub fn to_dense_subset(&self, term_indices: &[usize]) -> DenseDesign {
        let n_rows = self.n_rows();
        let n_cols = term_indices.len() + 1;
        let mut data = vec![0.0; n_rows * n_cols];
        data[..n_rows].fill(1.0);
        let mut labels = Vec::with_capacity(n_cols);
        labels.push("intercept".to_string());
        for (out_col, &t) in term_indices.iter().enumerate() {
            labels.push(self.terms[t].label.clone());
            let dst = &mut data[(out_col + 1) * n_rows..(out_col + 2) * n_rows];
            for row in self.columns[t].iter_ones() {
                dst[row] = 1.0;
            }
        }
        DenseDesign {
            labels,
            n_rows,
            n_cols,
            data,
        }
    }

    /// Write the 0/1 matrix as CSV: header `intercept` plus term labels, one
    /// row per (subprompt, repeat).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EncodingError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = Vec::with_capacity(self.n_columns());
        header.push("intercept".to_string());
        header.extend(self.terms.iter().map(|t| t.label.clone()));
        w.write_record(&header)?;
        let mut record = vec![String::new(); self.n_columns()];
        for row in 0..self.n_rows() {
            record[0] = "1".to_string();
            for (t, col) in self.columns.iter().enumerate() {
                record[t + 1] = if col[row] { "1" } else { "0" }.to_string();
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Write the companion manifest: column index -> term, plus row keys.
    pub fn write_manifest_json<W: Write>(&self, writer: W) -> Result<(), EncodingError> {
        let manifest = MatrixManifest::from_matrix(self);
        serde_json::to_writer_pretty(writer, &manifest)
            .map_err(|e| EncodingError::Io(e.into()))?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MatrixManifest {
    pub repeats: u32,
    pub columns: Vec<ManifestColumn>,
    pub row_keys: Vec<(String, u32)>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestColumn {
    pub index: usize,
    pub order: usize,
    pub label: String,
    pub members: Vec<ManifestMember>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestMember {
    pub stratum: usize,
    pub component: String,
}

impl MatrixManifest {
    pub fn from_matrix(matrix: &DesignMatrix) -> Self {
        let mut columns = Vec::with_capacity(matrix.n_columns());
        columns.push(ManifestColumn {
            index: 0,
            order: 0,
            label: "intercept".to_string(),
            members: Vec::new(),
        });
        for (t, term) in matrix.terms.iter().enumerate() {
            columns.push(ManifestColumn {
                index: t + 1,
                order: term.order,
                label: term.label.clone(),
                members: term
                    .members
                    .iter()
                    .map(|m| ManifestMember {
                        stratum: m.stratum,
                        component: m.component_id.clone(),
                    })
                    .collect(),
            });
        }
        MatrixManifest {
            repeats: matrix.repeats,
            columns,
            row_keys: matrix.row_keys.clone(),
        }
    }
}

/// A dense column-major f64 matrix with labeled columns, the common input of
/// every solver in this crate. Column 0 is conventionally the intercept.
#[derive(Debug, Clone)]
pub struct DenseDesign {
    pub labels: Vec<String>,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Column-major values, length `n_rows * n_cols`.
    pub data: Vec<f64>,
}

impl DenseDesign {
    /// Assemble from explicit columns (no implicit intercept).
    pub fn from_columns(labels: Vec<String>, columns: Vec<Vec<f64>>) -> Self {
        assert_eq!(labels.len(), columns.len(), "one label per column");
        let n_rows = columns.first().map_or(0, Vec::len);
        assert!(
            columns.iter().all(|c| c.len() == n_rows),
            "ragged columns"
        );
        let mut data = Vec::with_capacity(n_rows * columns.len());
        for col in &columns {
            data.extend_from_slice(col);
        }
        DenseDesign {
            labels,
            n_rows,
            n_cols: columns.len(),
            data,
        }
    }

    /// Assemble from columns with an intercept column of ones prepended.
    pub fn with_intercept(labels: Vec<String>, columns: Vec<Vec<f64>>) -> Self {
        let n_rows = columns.first().map_or(0, Vec::len);
        let mut all_labels = Vec::with_capacity(labels.len() + 1);
        all_labels.push("intercept".to_string());
        all_labels.extend(labels);
        let mut all_columns = Vec::with_capacity(columns.len() + 1);
        all_columns.push(vec![1.0; n_rows]);
        all_columns.extend(columns);
        Self::from_columns(all_labels, all_columns)
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n_rows..(j + 1) * self.n_rows]
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.n_rows + row]
    }
}
