//! Attribution of language-model prompt effects to individual prompt
//! components.
//!
//! The crate models a prompt as ordered strata of interchangeable text
//! components, enumerates every subprompt the model can produce, scores each
//! one against a target token (live endpoint, recorded fixtures, or a
//! synthetic oracle), and then explains the scores: ordinary least squares
//! with full inference, L1-regularized linear and logistic fits with
//! regularization paths, hierarchical forward selection of interaction terms,
//! and Shapley values adapted to mutually exclusive components.
//!
//! Modules mirror the pipeline: [`prompt_model`] -> [`encoding`] ->
//! [`scoring`] / [`scorer_backends`] -> [`regression`] / [`selection`] /
//! [`shapley`] -> [`reporting`], with [`pipeline`] orchestrating the stages
//! behind the command-line tool.

pub mod encoding;
#[cfg(test)]
pub(crate) mod test_fixtures;
pub mod pipeline;
pub mod prompt_model;
pub mod regression;
pub mod reporting;
pub mod scorer_backends;
pub mod scoring;
pub mod selection;
pub mod shapley;
