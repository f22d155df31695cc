//! Hierarchical forward selection over a binary term universe: first-order
//! terms are admitted by Bonferroni-corrected coefficient p-values, then
//! interaction terms level by level, an order-g term becoming a candidate
//! only once every one of its order-(g-1) sub-terms has been admitted.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::DesignMatrix;
use crate::regression::{fit_ols, FitResult, RegressionError};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    BadAlpha(f64),
    #[error("max_level must be at least 1")]
    ZeroMaxLevel,
    #[error("max_level {max_level} exceeds the {strata} distinct interaction strata")]
    BadMaxLevel { max_level: usize, strata: usize },
    #[error("term universe holds no candidate terms")]
    EmptyUniverse,
    #[error("regression failed during selection: {0}")]
    Regression(#[from] RegressionError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization failure: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// How the Bonferroni denominator is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelPolicy {
    /// Divide alpha by the number of candidates eligible at the start of
    /// the current level.
    #[default]
    PerLevelBonferroni,
    /// Divide alpha by the total number of candidate terms across all
    /// levels, giving one family-wide threshold.
    GlobalBonferroni,
}

/// How admissions are decided within a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Repeatedly refit each remaining candidate on top of the current
    /// model and admit the smallest qualifying p-value, until none qualify.
    #[default]
    Greedy,
    /// Fit all eligible candidates of the level jointly once and keep every
    /// coefficient whose p-value clears the threshold.
    JointPerLevel,
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Highest interaction order considered (1 = first-order terms only).
    pub max_level: usize,
    /// Strata whose components may appear in interaction candidates.
    pub interaction_strata: Vec<usize>,
    #[serde(default)]
    pub level_policy: LevelPolicy,
    #[serde(default)]
    pub mode: SelectionMode,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 || self.alpha >= 1.0 {
            return Err(SelectionError::BadAlpha(self.alpha));
        }
        if self.max_level == 0 {
            return Err(SelectionError::ZeroMaxLevel);
        }
        let distinct: BTreeSet<usize> = self.interaction_strata.iter().copied().collect();
        if self.max_level > distinct.len().max(1) {
            return Err(SelectionError::BadMaxLevel {
                max_level: self.max_level,
                strata: distinct.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Admitted,
    Rejected,
    /// The candidate's fit was rank-deficient; it is dropped for good.
    Skipped,
}

/// One logged evaluation of one candidate term.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStep {
    pub step: u64,
    pub level: usize,
    pub term: String,
    /// Absent when the candidate fit was rank-deficient.
    pub p_value: Option<f64>,
    pub threshold: f64,
    pub decision: Decision,
}

/// The full audit log of a selection run plus the refit on the final model.
#[derive(Debug)]
pub struct SelectionTrace {
    steps: Vec<SelectionStep>,
    included: Vec<usize>,
    included_labels: Vec<String>,
    final_fit: FitResult,
}

impl SelectionTrace {
    pub fn steps(&self) -> &[SelectionStep] {
        &self.steps
    }

    /// Term indices into the universe design, in admission order.
    pub fn included_terms(&self) -> &[usize] {
        &self.included
    }

    pub fn included_labels(&self) -> &[String] {
        &self.included_labels
    }

    pub fn final_fit(&self) -> &FitResult {
        &self.final_fit
    }

    /// One JSON object per decision, preceded by a manifest meta line when
    /// a hash is supplied.
    pub fn write_jsonl<W: Write>(
        &self,
        mut writer: W,
        manifest_hash: Option<&str>,
    ) -> Result<(), SelectionError> {
        if let Some(hash) = manifest_hash {
            serde_json::to_writer(&mut writer, &serde_json::json!({ "manifest_hash": hash }))?;
            writeln!(writer)?;
        }
        #[derive(Serialize)]
        struct Line<'a> {
            step: u64,
            term: &'a str,
            p_value: Option<f64>,
            threshold: f64,
            admitted: bool,
        }
        for s in &self.steps {
            let line = Line {
                step: s.step,
                term: &s.term,
                p_value: s.p_value,
                threshold: s.threshold,
                admitted: s.decision == Decision::Admitted,
            };
            serde_json::to_writer(&mut writer, &line)?;
            writeln!(writer)?;
        }
        Ok(())
    }
}

struct Selector<'a> {
    universe: &'a DesignMatrix,
    y: &'a [f64],
    steps: Vec<SelectionStep>,
    included: Vec<usize>,
    included_labels: BTreeSet<String>,
    step_no: u64,
}

impl<'a> Selector<'a> {
    fn log(
        &mut self,
        level: usize,
        term: &str,
        p_value: Option<f64>,
        threshold: f64,
        decision: Decision,
    ) {
        self.step_no += 1;
        self.steps.push(SelectionStep {
            step: self.step_no,
            level,
            term: term.to_string(),
            p_value,
            threshold,
            decision,
        });
    }

    fn admit(&mut self, t: usize) {
        self.included.push(t);
        self.included_labels
            .insert(self.universe.terms()[t].label().to_string());
    }

    /// Fit the current model plus one candidate; the candidate's p-value is
    /// at the last column. A rank-deficient fit returns None.
    fn candidate_p(&self, t: usize) -> Result<Option<f64>, SelectionError> {
        let mut cols = self.included.clone();
        cols.push(t);
        let dense = self.universe.to_dense_subset(&cols);
        match fit_ols(&dense, self.y) {
            Ok(fit) => {
                let p = fit.p_values.as_ref().expect("ols reports p-values")[cols.len()];
                Ok(Some(p))
            }
            Err(RegressionError::RankDeficient { .. }) => Ok(None),
            Err(other) => Err(other.into()),
        }
    }

    fn greedy_level(
        &mut self,
        level: usize,
        mut candidates: Vec<usize>,
        threshold: f64,
    ) -> Result<(), SelectionError> {
        while !candidates.is_empty() {
            let mut evaluated: Vec<(usize, f64)> = Vec::new();
            let mut skipped: Vec<usize> = Vec::new();
            for &t in &candidates {
                match self.candidate_p(t)? {
                    Some(p) => evaluated.push((t, p)),
                    None => skipped.push(t),
                }
            }
            let winner = evaluated
                .iter()
                .filter(|(_, p)| *p < threshold)
                .min_by(|(a, pa), (b, pb)| {
                    pa.partial_cmp(pb)
                        .expect("qualifying p-values are comparable")
                        .then_with(|| {
                            self.universe.terms()[*a]
                                .label()
                                .cmp(self.universe.terms()[*b].label())
                        })
                })
                .map(|&(t, _)| t);
            for &(t, p) in &evaluated {
                let decision = if Some(t) == winner {
                    Decision::Admitted
                } else {
                    Decision::Rejected
                };
                let label = self.universe.terms()[t].label().to_string();
                self.log(level, &label, Some(p), threshold, decision);
            }
            for &t in &skipped {
                let label = self.universe.terms()[t].label().to_string();
                self.log(level, &label, None, threshold, Decision::Skipped);
            }
            candidates.retain(|t| !skipped.contains(t));
            match winner {
                Some(t) => {
                    self.admit(t);
                    candidates.retain(|&c| c != t);
                }
                None => break,
            }
        }
        Ok(())
    }

    fn joint_level(
        &mut self,
        level: usize,
        candidates: Vec<usize>,
        threshold: f64,
    ) -> Result<(), SelectionError> {
        let mut active = candidates;
        loop {
            if active.is_empty() {
                return Ok(());
            }
            let mut cols = self.included.clone();
            cols.extend(&active);
            let dense = self.universe.to_dense_subset(&cols);
            match fit_ols(&dense, self.y) {
                Ok(fit) => {
                    let p_values = fit.p_values.as_ref().expect("ols reports p-values");
                    let offset = 1 + self.included.len();
                    let decisions: Vec<(usize, f64)> = active
                        .iter()
                        .enumerate()
                        .map(|(i, &t)| (t, p_values[offset + i]))
                        .collect();
                    for (t, p) in decisions {
                        let decision = if p < threshold {
                            Decision::Admitted
                        } else {
                            Decision::Rejected
                        };
                        let label = self.universe.terms()[t].label().to_string();
                        self.log(level, &label, Some(p), threshold, decision);
                        if decision == Decision::Admitted {
                            self.admit(t);
                        }
                    }
                    return Ok(());
                }
                Err(RegressionError::RankDeficient { columns }) => {
                    let before = active.len();
                    let mut dropped = Vec::new();
                    active.retain(|&t| {
                        let label = self.universe.terms()[t].label();
                        if columns.iter().any(|c| c == label) {
                            dropped.push(t);
                            false
                        } else {
                            true
                        }
                    });
                    if active.len() == before {
                        // The dependency lies inside the already-included
                        // model; nothing here can be dropped to fix it.
                        return Err(RegressionError::RankDeficient { columns }.into());
                    }
                    for t in dropped {
                        let label = self.universe.terms()[t].label().to_string();
                        self.log(level, &label, None, threshold, Decision::Skipped);
                    }
                }
                Err(other) => return Err(other.into()),
            }
        }
    }
}

/// Run hierarchical forward selection over the term universe encoded in
/// `universe` against the response `y`, returning the audit trace and the
/// ordinary least-squares refit on the admitted terms.
pub fn forward_select(
    universe: &DesignMatrix,
    y: &[f64],
    config: &SelectionConfig,
) -> Result<SelectionTrace, SelectionError> {
    config.validate()?;
    let terms = universe.terms();
    if terms.is_empty() {
        return Err(SelectionError::EmptyUniverse);
    }
    let strata: BTreeSet<usize> = config.interaction_strata.iter().copied().collect();
    let in_strata = |t: usize| {
        terms[t]
            .members()
            .iter()
            .all(|m| strata.contains(&m.stratum))
    };
    // The family under a global correction: every term the procedure could
    // ever test under this configuration.
    let family_size = (0..terms.len())
        .filter(|&t| {
            let order = terms[t].order();
            order == 1 || (order <= config.max_level && in_strata(t))
        })
        .count();

    let mut selector = Selector {
        universe,
        y,
        steps: Vec::new(),
        included: Vec::new(),
        included_labels: BTreeSet::new(),
        step_no: 0,
    };

    for level in 1..=config.max_level {
        let candidates: Vec<usize> = (0..terms.len())
            .filter(|&t| {
                if terms[t].order() != level {
                    return false;
                }
                if level == 1 {
                    return true;
                }
                if !in_strata(t) {
                    return false;
                }
                // Every sub-term obtained by dropping one member must
                // already be in the model.
                let members = terms[t].members();
                (0..members.len()).all(|drop| {
                    let sub: Vec<&str> = members
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != drop)
                        .map(|(_, m)| m.component_id.as_str())
                        .collect();
                    selector.included_labels.contains(&sub.join("*"))
                })
            })
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let threshold = match config.level_policy {
            LevelPolicy::PerLevelBonferroni => config.alpha / candidates.len() as f64,
            LevelPolicy::GlobalBonferroni => config.alpha / family_size as f64,
        };
        match config.mode {
            SelectionMode::Greedy => selector.greedy_level(level, candidates, threshold)?,
            SelectionMode::JointPerLevel => selector.joint_level(level, candidates, threshold)?,
        }
    }

    let final_fit = fit_ols(&universe.to_dense_subset(&selector.included), y)?;
    let included_labels = selector
        .included
        .iter()
        .map(|&t| terms[t].label().to_string())
        .collect();
    Ok(SelectionTrace {
        steps: selector.steps,
        included: selector.included,
        included_labels,
        final_fit,
    })
}
