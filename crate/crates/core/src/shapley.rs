//! Exact Shapley attribution for prompt components under intra-stratum
//! mutual exclusivity. A coalition is any selection of components with at
//! most one per variable stratum; a component's value is a normalized
//! average of its marginal contributions, stratified by coalition size. A
//! textbook Shapley implementation over unconstrained feature sets serves
//! as the validation oracle for the unconstrained special case.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::prompt_model::{ModelError, PromptComponent, PromptModel};
use crate::regression::{pearson, FitResult, RegressionError};
use crate::scoring::{FitTarget, ScoreTable, ScoringError};

/// Most feasible coalitions enumerated for any single component.
pub const COALITION_CAP: u64 = 1 << 20;

/// Most features allowed by the exact classic computation.
pub const CLASSIC_FEATURE_CAP: usize = 12;

#[derive(Debug, Error)]
pub enum ShapleyError {
    #[error("value function is undefined on required coalition '{key}'")]
    ValueUndefined { key: String },
    #[error(
        "component '{component}' requires {coalitions} coalition evaluations, above the cap of {cap}"
    )]
    SizeCapExceeded {
        component: String,
        coalitions: u128,
        cap: u64,
    },
    #[error("classic computation supports at most {cap} features, got {features}")]
    TooManyFeatures { features: usize, cap: usize },
    #[error("only {matched} components match first-order fit columns; at least 2 are needed")]
    AlignmentFailure { matched: usize },
    #[error("correlation failed: {0}")]
    Correlation(#[from] RegressionError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("scoring error: {0}")]
    Scoring(#[from] ScoringError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialization failure: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// A value function over feasible coalitions. Coalitions arrive as
/// (variable stratum index, component id) pairs sorted by stratum, with at
/// most one entry per stratum; the empty slice is the empty coalition.
pub trait CoalitionValue {
    fn value(&self, coalition: &[(usize, &str)]) -> Result<f64, ShapleyError>;
}

/// Adapter turning any closure over coalitions into a value function.
pub struct FnValue<F: Fn(&[(usize, &str)]) -> f64>(pub F);

impl<F: Fn(&[(usize, &str)]) -> f64> CoalitionValue for FnValue<F> {
    fn value(&self, coalition: &[(usize, &str)]) -> Result<f64, ShapleyError> {
        Ok((self.0)(coalition))
    }
}

/// Value lookup through persisted scores: a coalition maps to its
/// subprompt's key and the coalition value is the mean target value over
/// that key's repeats. The empty coalition resolves to the all-empty
/// subprompt, the bare query.
pub struct TableValue<'a> {
    model: &'a PromptModel,
    table: &'a ScoreTable,
    target: FitTarget,
}

impl<'a> TableValue<'a> {
    pub fn new(model: &'a PromptModel, table: &'a ScoreTable, target: FitTarget) -> Self {
        TableValue {
            model,
            table,
            target,
        }
    }
}

impl CoalitionValue for TableValue<'_> {
    fn value(&self, coalition: &[(usize, &str)]) -> Result<f64, ShapleyError> {
        let choices: Vec<(usize, Option<&str>)> = self
            .model
            .variable_strata()
            .iter()
            .map(|&stratum| {
                let pick = coalition
                    .iter()
                    .find(|(s, _)| *s == stratum)
                    .map(|(_, id)| *id);
                (stratum, pick)
            })
            .collect();
        let subprompt = self.model.subprompt_from_choices(&choices)?;
        self.table
            .mean_for_key(subprompt.key(), self.target)
            .map_err(|_| ShapleyError::ValueUndefined {
                key: subprompt.key().to_string(),
            })
    }
}

/// Which outer averaging the attribution uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyFormula {
    /// Average the per-size mean marginals over realized sizes. Reduces to
    /// the classic value when strata are singletons.
    #[default]
    SizeStratified,
    /// Weight each coalition's marginal by the binomial count of its size
    /// and divide by k_i. The weights do not sum to one; kept for
    /// comparison only.
    LiteralPrinted,
}

/// Attribution for one component.
#[derive(Debug, Clone, Serialize)]
pub struct ShapleyEstimate {
    component_id: String,
    stratum: usize,
    phi: f64,
    #[serde(rename = "k_i")]
    k: usize,
    /// Feasible coalition count at each size d = 0..=k_i.
    size_counts: Vec<u64>,
    /// Mean marginal contribution at each size; absent when no feasible
    /// coalition of that size exists.
    size_means: Vec<Option<f64>>,
}

impl ShapleyEstimate {
    pub fn component_id(&self) -> &str {
        &self.component_id
    }

    pub fn stratum(&self) -> usize {
        self.stratum
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Number of components that can co-occur with this one.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn size_counts(&self) -> &[u64] {
        &self.size_counts
    }

    pub fn size_means(&self) -> &[Option<f64>] {
        &self.size_means
    }
}

fn stratum_components(model: &PromptModel, stratum: usize) -> &[PromptComponent] {
    &model
        .stratum(stratum)
        .expect("variable stratum indices are valid")
        .components
}

/// Exact attribution for every variable component, averaging marginal
/// contributions over all feasible coalitions of the other strata.
pub fn shapley_values<V: CoalitionValue>(
    v: &V,
    model: &PromptModel,
) -> Result<Vec<ShapleyEstimate>, ShapleyError> {
    shapley_values_with(v, model, ShapleyFormula::SizeStratified)
}

pub fn shapley_values_with<V: CoalitionValue>(
    v: &V,
    model: &PromptModel,
    formula: ShapleyFormula,
) -> Result<Vec<ShapleyEstimate>, ShapleyError> {
    let variable = model.variable_strata();
    let total_components: usize = variable
        .iter()
        .map(|&s| stratum_components(model, s).len())
        .sum();
    let mut estimates = Vec::new();
    for &stratum in variable {
        let siblings = stratum_components(model, stratum).len();
        let k = total_components - siblings;
        for component in stratum_components(model, stratum) {
            let estimate = attribute_component(
                v,
                model,
                stratum,
                &component.id,
                k,
                formula,
            )?;
            estimates.push(estimate);
        }
    }
    Ok(estimates)
}

fn attribute_component<V: CoalitionValue>(
    v: &V,
    model: &PromptModel,
    stratum: usize,
    component_id: &str,
    k: usize,
    formula: ShapleyFormula,
) -> Result<ShapleyEstimate, ShapleyError> {
    let others: Vec<usize> = model
        .variable_strata()
        .iter()
        .copied()
        .filter(|&s| s != stratum)
        .collect();
    let coalitions: u128 = others
        .iter()
        .map(|&s| stratum_components(model, s).len() as u128 + 1)
        .product();
    if coalitions > COALITION_CAP as u128 {
        return Err(ShapleyError::SizeCapExceeded {
            component: component_id.to_string(),
            coalitions,
            cap: COALITION_CAP,
        });
    }

    let mut size_counts = vec![0u64; k + 1];
    let mut size_sums = vec![0.0f64; k + 1];
    // Mixed-radix odometer over the other strata, empty choice first.
    let mut digits = vec![0usize; others.len()];
    loop {
        let mut coalition: Vec<(usize, &str)> = Vec::with_capacity(others.len() + 1);
        for (pos, &s) in others.iter().enumerate() {
            if digits[pos] > 0 {
                let id = stratum_components(model, s)[digits[pos] - 1].id.as_str();
                coalition.push((s, id));
            }
        }
        let d = coalition.len();
        let without = v.value(&coalition)?;
        let insert_at = coalition
            .iter()
            .position(|(s, _)| *s > stratum)
            .unwrap_or(coalition.len());
        coalition.insert(insert_at, (stratum, component_id));
        let with = v.value(&coalition)?;
        size_counts[d] += 1;
        size_sums[d] += with - without;

        // Advance the odometer, last stratum fastest.
        let mut pos = others.len();
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] <= stratum_components(model, others[pos]).len() {
                break;
            }
            digits[pos] = 0;
        }
        if digits.iter().all(|&d| d == 0) {
            break;
        }
    }

    let size_means: Vec<Option<f64>> = size_counts
        .iter()
        .zip(&size_sums)
        .map(|(&count, &sum)| {
            if count > 0 {
                Some(sum / count as f64)
            } else {
                None
            }
        })
        .collect();
    let phi = match formula {
        ShapleyFormula::SizeStratified => {
            let realized: Vec<f64> = size_means.iter().filter_map(|m| *m).collect();
            realized.iter().sum::<f64>() / realized.len() as f64
        }
        ShapleyFormula::LiteralPrinted => {
            if k == 0 {
                size_means[0].expect("the empty coalition always exists")
            } else {
                // The printed form weights each coalition's marginal by the
                // binomial count of its size and divides by k alone.
                let mut sum = 0.0;
                for (d, &count) in size_counts.iter().enumerate() {
                    if count > 0 {
                        sum += binomial(k, d) * size_sums[d] / count as f64;
                    }
                }
                sum / k as f64
            }
        }
    };
    Ok(ShapleyEstimate {
        component_id: component_id.to_string(),
        stratum,
        phi,
        k,
        size_counts,
        size_means,
    })
}

fn binomial(n: usize, r: usize) -> f64 {
    if r > n {
        return 0.0;
    }
    let r = r.min(n - r);
    let mut value = 1.0f64;
    for i in 0..r {
        value = value * (n - i) as f64 / (i + 1) as f64;
    }
    value
}

/// Textbook Shapley values for an unconstrained feature set 0..n_features.
/// `v` receives each coalition as a sorted slice of feature indices. This
/// is the permutation average in closed form: every subset not containing
/// feature i contributes its marginal with weight |s|!(n-|s|-1)!/n!.
pub fn classic_shapley<F: Fn(&[usize]) -> f64>(
    v: F,
    n_features: usize,
) -> Result<Vec<f64>, ShapleyError> {
    if n_features > CLASSIC_FEATURE_CAP {
        return Err(ShapleyError::TooManyFeatures {
            features: n_features,
            cap: CLASSIC_FEATURE_CAP,
        });
    }
    let n = n_features;
    let mut factorial = vec![1.0f64; n + 1];
    for i in 1..=n {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let mut phi = vec![0.0f64; n];
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        for mask in 0u64..(1u64 << others.len()) {
            let mut subset: Vec<usize> = others
                .iter()
                .enumerate()
                .filter(|(pos, _)| mask >> pos & 1 == 1)
                .map(|(_, &j)| j)
                .collect();
            let s = subset.len();
            let weight = factorial[s] * factorial[n - s - 1] / factorial[n];
            let without = v(&subset);
            subset.push(i);
            subset.sort_unstable();
            let with = v(&subset);
            phi[i] += weight * (with - without);
        }
    }
    Ok(phi)
}

/// Pearson correlation between attribution values and the matching
/// first-order coefficients of a fit. Components whose id does not appear
/// as a fit column are left out; fewer than two matches is an error.
pub fn shapley_vs_first_order(
    estimates: &[ShapleyEstimate],
    fit: &FitResult,
) -> Result<f64, ShapleyError> {
    let mut phis = Vec::new();
    let mut coefs = Vec::new();
    for estimate in estimates {
        if let Some(coef) = fit.coefficient(&estimate.component_id) {
            phis.push(estimate.phi);
            coefs.push(coef);
        }
    }
    if phis.len() < 2 {
        return Err(ShapleyError::AlignmentFailure {
            matched: phis.len(),
        });
    }
    Ok(pearson(&phis, &coefs)?)
}

/// CSV export: component_id, stratum, phi, k_i; a manifest hash, when
/// given, leads as a comment line.
pub fn write_shapley_csv<W: Write>(
    estimates: &[ShapleyEstimate],
    mut writer: W,
    manifest_hash: Option<&str>,
) -> Result<(), ShapleyError> {
    if let Some(hash) = manifest_hash {
        writeln!(writer, "# manifest_hash={hash}")?;
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["component_id", "stratum", "phi", "k_i"])?;
    for e in estimates {
        w.write_record([
            e.component_id.as_str(),
            &e.stratum.to_string(),
            &format!("{}", e.phi),
            &e.k.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// JSON export of the full estimates including per-size audit data.
pub fn write_shapley_json<W: Write>(
    estimates: &[ShapleyEstimate],
    mut writer: W,
    manifest_hash: Option<&str>,
) -> Result<(), ShapleyError> {
    #[derive(Serialize)]
    struct Export<'a> {
        #[serde(skip_serializing_if = "Option::is_none")]
        manifest_hash: Option<&'a str>,
        estimates: &'a [ShapleyEstimate],
    }
    serde_json::to_writer_pretty(
        &mut writer,
        &Export {
            manifest_hash,
            estimates,
        },
    )?;
    writeln!(writer)?;
    Ok(())
}

/// Sum of additive weights over a coalition, a convenience for oracles and
/// tests: v(s) = base + Σ weights of members.
pub fn additive_value(
    weights: &BTreeMap<(usize, String), f64>,
    base: f64,
) -> impl Fn(&[(usize, &str)]) -> f64 + '_ {
    move |coalition| {
        base + coalition
            .iter()
            .map(|(s, id)| weights.get(&(*s, id.to_string())).copied().unwrap_or(0.0))
            .sum::<f64>()
    }
}
