//! Scoring of subprompts through a pluggable scorer contract, with a
//! crash-safe JSONL store and deterministic synthetic oracles.
//!
//! A run scores the bare query once to fix the baseline probability, then
//! scores every missing (subprompt, repeat) pair, persisting records as they
//! arrive. Records already in the store are never rescored, so interrupted
//! runs resume with exactly the remaining calls. Response vectors are
//! assembled by key, never by arrival order.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoding::TermDescriptor;
use crate::prompt_model::{ModelError, PromptModel, Subprompt};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("repeats must be at least 1")]
    ZeroRepeats,
    #[error("degenerate baseline: query probability is {0}, ratio undefined")]
    DegenerateBaseline(f64),
    #[error("probability out of range: {value}")]
    InvalidProbability { value: f64 },
    #[error("noise standard deviation must be nonnegative, got {0}")]
    NegativeNoiseSd(f64),
    #[error("missing score record for subprompt `{key}` repeat {repeat}")]
    MissingRecord { key: String, repeat: u32 },
    #[error("record for subprompt `{key}` repeat {repeat} has no binary outcome")]
    MissingBinary { key: String, repeat: u32 },
    #[error("store holds conflicting baselines for scorer `{scorer_id}`: {a} and {b}")]
    InconsistentBaseline { scorer_id: String, a: f64, b: f64 },
    #[error("scoring failed for subprompt `{key}` repeat {repeat}")]
    ScorerFailed {
        key: String,
        repeat: u32,
        #[source]
        source: Box<ScoringError>,
    },
    #[error("scorer backend failure: {0}")]
    Backend(#[source] Box<dyn std::error::Error + Send + Sync>),
    #[error("score store line {line} is corrupt: {message}")]
    CorruptStore { line: usize, message: String },
    #[error("score store was produced under manifest hash {found}, expected {expected}")]
    ManifestHashMismatch { expected: String, found: String },
    #[error("score store has no manifest hash but one was expected ({expected})")]
    MissingManifestHash { expected: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One persisted measurement. Field order is the on-disk JSONL field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub scorer_id: String,
    pub subprompt_key: String,
    pub repeat: u32,
    /// P(correct token | subprompt); synthetic oracles may step outside [0,1].
    pub raw: f64,
    /// P(correct token | query alone), shared by every record of a run.
    pub baseline: f64,
    /// raw / baseline.
    pub dcpmi: f64,
    pub binary: Option<u8>,
    pub timestamp: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Continuous,
    Binary,
}

/// Which per-record value becomes the response vector entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitTarget {
    Dcpmi,
    Raw,
    Binary,
}

/// Ratio of the correct-token probability under a subprompt to the
/// query-alone probability. A zero (or negative) baseline is refused rather
/// than letting the ratio blow up.
pub fn dcpmi(raw: f64, baseline: f64) -> Result<f64, ScoringError> {
    if !raw.is_finite() {
        return Err(ScoringError::InvalidProbability { value: raw });
    }
    if !baseline.is_finite() {
        return Err(ScoringError::InvalidProbability { value: baseline });
    }
    if baseline <= 0.0 {
        return Err(ScoringError::DegenerateBaseline(baseline));
    }
    Ok(raw / baseline)
}

/// What a scorer is asked to evaluate. The baseline query is scored with an
/// empty `subprompt_key`.
#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub subprompt_key: &'a str,
    pub rendered: &'a str,
    pub repeat: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOutcome {
    pub raw: f64,
    pub binary: Option<u8>,
}

/// The pluggable scoring contract. Implementations must be shareable across
/// the scoring worker threads.
pub trait Scorer: Send + Sync {
    fn id(&self) -> &str;
    fn kind(&self) -> ScoreKind;
    fn score(&self, request: &ScoreRequest) -> Result<ScoreOutcome, ScoringError>;
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreMeta {
    manifest_hash: String,
}

/// Append-only JSONL score store keyed by (scorer_id, subprompt_key, repeat).
/// Loading deduplicates by keeping the last record for a key. An optional
/// first meta line pins the run manifest the store belongs to.
#[derive(Debug)]
pub struct ScoreStore {
    path: PathBuf,
    manifest_hash: Option<String>,
    records: HashMap<(String, String, u32), ScoreRecord>,
    writer: BufWriter<File>,
}

impl ScoreStore {
    /// Open (creating if missing) a store with no manifest binding.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ScoringError> {
        Self::open_inner(path.as_ref(), None)
    }

    /// Open a store, writing `manifest_hash` as the meta line when the file
    /// is new. An existing store must carry the same hash.
    pub fn open_bound(
        path: impl AsRef<Path>,
        manifest_hash: &str,
    ) -> Result<Self, ScoringError> {
        let store = Self::open_inner(path.as_ref(), Some(manifest_hash))?;
        match &store.manifest_hash {
            Some(found) if found == manifest_hash => Ok(store),
            Some(found) => Err(ScoringError::ManifestHashMismatch {
                expected: manifest_hash.to_string(),
                found: found.clone(),
            }),
            None => Err(ScoringError::MissingManifestHash {
                expected: manifest_hash.to_string(),
            }),
        }
    }

    fn open_inner(path: &Path, create_hash: Option<&str>) -> Result<Self, ScoringError> {
        let mut manifest_hash = None;
        let mut records = HashMap::new();
        let existed = path.exists();
        if existed {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<ScoreRecord>(&line) {
                    Ok(rec) => {
                        records.insert(
                            (rec.scorer_id.clone(), rec.subprompt_key.clone(), rec.repeat),
                            rec,
                        );
                    }
                    Err(record_err) => {
                        if i == 0 {
                            if let Ok(meta) = serde_json::from_str::<StoreMeta>(&line) {
                                manifest_hash = Some(meta.manifest_hash);
                                continue;
                            }
                        }
                        return Err(ScoringError::CorruptStore {
                            line: i + 1,
                            message: record_err.to_string(),
                        });
                    }
                }
            }
        }
        let file = OpenOptions::new().append(true).create(true).open(path)?;
        let mut writer = BufWriter::new(file);
        if !existed {
            if let Some(hash) = create_hash {
                let meta = StoreMeta {
                    manifest_hash: hash.to_string(),
                };
                serde_json::to_writer(&mut writer, &meta)
                    .map_err(|e| ScoringError::Io(e.into()))?;
                writer.write_all(b"\n")?;
                writer.flush()?;
                manifest_hash = Some(hash.to_string());
            }
        }
        Ok(ScoreStore {
            path: path.to_path_buf(),
            manifest_hash,
            records,
            writer,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn manifest_hash(&self) -> Option<&str> {
        self.manifest_hash.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, scorer_id: &str, key: &str, repeat: u32) -> Option<&ScoreRecord> {
        self.records
            .get(&(scorer_id.to_string(), key.to_string(), repeat))
    }

    pub fn records_for<'a>(
        &'a self,
        scorer_id: &'a str,
    ) -> impl Iterator<Item = &'a ScoreRecord> {
        self.records
            .values()
            .filter(move |r| r.scorer_id == scorer_id)
    }

    /// Append one record to disk and memory. Flushes per record: a crash
    /// loses at most the in-flight line.
    pub fn append(&mut self, record: &ScoreRecord) -> Result<(), ScoringError> {
        serde_json::to_writer(&mut self.writer, record)
            .map_err(|e| ScoringError::Io(e.into()))?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        self.records.insert(
            (
                record.scorer_id.clone(),
                record.subprompt_key.clone(),
                record.repeat,
            ),
            record.clone(),
        );
        Ok(())
    }

    /// The baseline shared by this scorer's persisted records, if any.
    /// Conflicting baselines mean the store mixes incompatible runs.
    fn stored_baseline(&self, scorer_id: &str) -> Result<Option<f64>, ScoringError> {
        let mut found: Option<f64> = None;
        for rec in self.records_for(scorer_id) {
            match found {
                None => found = Some(rec.baseline),
                Some(b) if b == rec.baseline => {}
                Some(b) => {
                    return Err(ScoringError::InconsistentBaseline {
                        scorer_id: scorer_id.to_string(),
                        a: b,
                        b: rec.baseline,
                    })
                }
            }
        }
        Ok(found)
    }
}

/// In-memory view of one scorer's records, keyed by (subprompt_key, repeat).
#[derive(Debug, Clone)]
pub struct ScoreTable {
    scorer_id: String,
    score_kind: ScoreKind,
    records: HashMap<(String, u32), ScoreRecord>,
    repeats_by_key: HashMap<String, Vec<u32>>,
}

impl ScoreTable {
    pub fn new(scorer_id: &str, score_kind: ScoreKind) -> Self {
        ScoreTable {
            scorer_id: scorer_id.to_string(),
            score_kind,
            records: HashMap::new(),
            repeats_by_key: HashMap::new(),
        }
    }

    pub fn from_store(store: &ScoreStore, scorer_id: &str, score_kind: ScoreKind) -> Self {
        let mut table = ScoreTable::new(scorer_id, score_kind);
        for rec in store.records_for(scorer_id) {
            table.insert(rec.clone());
        }
        table
    }

    pub fn insert(&mut self, record: ScoreRecord) {
        let subprompt_key = record.subprompt_key.clone();
        let repeat = record.repeat;
        if self
            .records
            .insert((subprompt_key.clone(), repeat), record)
            .is_none()
        {
            self.repeats_by_key.entry(subprompt_key).or_default().push(repeat);
        }
    }

    pub fn scorer_id(&self) -> &str {
        &self.scorer_id
    }

    pub fn score_kind(&self) -> ScoreKind {
        self.score_kind
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &str, repeat: u32) -> Option<&ScoreRecord> {
        self.records.get(&(key.to_string(), repeat))
    }

    pub fn records(&self) -> impl Iterator<Item = &ScoreRecord> {
        self.records.values()
    }

    pub fn baseline(&self) -> Option<f64> {
        self.records.values().next().map(|r| r.baseline)
    }

    fn target_value(record: &ScoreRecord, target: FitTarget) -> Result<f64, ScoringError> {
        match target {
            FitTarget::Dcpmi => Ok(record.dcpmi),
            FitTarget::Raw => Ok(record.raw),
            FitTarget::Binary => record
                .binary
                .map(f64::from)
                .ok_or(ScoringError::MissingBinary {
                    key: record.subprompt_key.clone(),
                    repeat: record.repeat,
                }),
        }
    }

    /// Response vector aligned with design-matrix rows. Every row must have a
    /// record; alignment is by key, never by insertion order.
    pub fn response_vector(
        &self,
        row_keys: &[(String, u32)],
        target: FitTarget,
    ) -> Result<Vec<f64>, ScoringError> {
        let mut y = Vec::with_capacity(row_keys.len());
        for (key, repeat) in row_keys {
            let record =
                self.records
                    .get(&(key.clone(), *repeat))
                    .ok_or(ScoringError::MissingRecord {
                        key: key.clone(),
                        repeat: *repeat,
                    })?;
            y.push(Self::target_value(record, target)?);
        }
        Ok(y)
    }

    /// Mean target value over the repeats recorded for `key`.
    pub fn mean_for_key(&self, key: &str, target: FitTarget) -> Result<f64, ScoringError> {
        let repeats = self
            .repeats_by_key
            .get(key)
            .ok_or_else(|| ScoringError::MissingRecord {
                key: key.to_string(),
                repeat: 0,
            })?;
        let mut sum = 0.0;
        for &repeat in repeats {
            let record = &self.records[&(key.to_string(), repeat)];
            sum += Self::target_value(record, target)?;
        }
        Ok(sum / repeats.len() as f64)
    }
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
}

/// Score every missing (subprompt, repeat) pair, persisting each record as it
/// completes. Returns the complete table for the scorer.
///
/// The baseline is reused from any persisted record for this scorer; only a
/// fresh store triggers the single baseline query. Up to `concurrency`
/// scorer calls run at once; the store sees them through one writer. On a
/// scorer failure the run aborts with the failing key, keeping everything
/// already persisted.
pub fn score_all(
    scorer: &dyn Scorer,
    subprompts: &[Subprompt],
    query_text: &str,
    repeats: u32,
    concurrency: usize,
    store: &mut ScoreStore,
) -> Result<ScoreTable, ScoringError> {
    if repeats == 0 {
        return Err(ScoringError::ZeroRepeats);
    }
    let scorer_id = scorer.id().to_string();
    let baseline = match store.stored_baseline(&scorer_id)? {
        Some(b) => b,
        None => {
            let request = ScoreRequest {
                subprompt_key: "",
                rendered: query_text,
                repeat: 0,
            };
            scorer
                .score(&request)
                .map_err(|e| ScoringError::ScorerFailed {
                    key: String::new(),
                    repeat: 0,
                    source: Box::new(e),
                })?
                .raw
        }
    };
    if !(baseline > 0.0) || !baseline.is_finite() {
        return Err(ScoringError::DegenerateBaseline(baseline));
    }

    let mut missing: Vec<(usize, u32)> = Vec::new();
    for (i, sub) in subprompts.iter().enumerate() {
        for rep in 0..repeats {
            if store.get(&scorer_id, sub.key(), rep).is_none() {
                missing.push((i, rep));
            }
        }
    }

    if !missing.is_empty() {
        let workers = concurrency.max(1).min(missing.len());
        let abort = AtomicBool::new(false);
        let cursor = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<Result<ScoreRecord, ScoringError>>();
        let mut first_error: Option<ScoringError> = None;
        std::thread::scope(|scope| -> Result<(), ScoringError> {
            let abort = &abort;
            let cursor = &cursor;
            let missing = &missing;
            let scorer_id = &scorer_id;
            for _ in 0..workers {
                let tx = tx.clone();
                scope.spawn(move || loop {
                    if abort.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = cursor.fetch_add(1, Ordering::Relaxed);
                    if i >= missing.len() {
                        break;
                    }
                    let (sub_idx, repeat) = missing[i];
                    let sub = &subprompts[sub_idx];
                    let request = ScoreRequest {
                        subprompt_key: sub.key(),
                        rendered: sub.rendered(),
                        repeat,
                    };
                    let result = scorer
                        .score(&request)
                        .and_then(|outcome| {
                            Ok(ScoreRecord {
                                scorer_id: scorer_id.clone(),
                                subprompt_key: sub.key().to_string(),
                                repeat,
                                raw: outcome.raw,
                                baseline,
                                dcpmi: dcpmi(outcome.raw, baseline)?,
                                binary: outcome.binary,
                                timestamp: now_rfc3339(),
                            })
                        })
                        .map_err(|e| ScoringError::ScorerFailed {
                            key: sub.key().to_string(),
                            repeat,
                            source: Box::new(e),
                        });
                    let failed = result.is_err();
                    if tx.send(result).is_err() {
                        break;
                    }
                    if failed {
                        abort.store(true, Ordering::Relaxed);
                        break;
                    }
                });
            }
            drop(tx);
            for result in rx {
                match result {
                    Ok(record) => store.append(&record)?,
                    Err(e) => {
                        abort.store(true, Ordering::Relaxed);
                        if first_error.is_none() {
                            first_error = Some(e);
                        }
                    }
                }
            }
            Ok(())
        })?;
        if let Some(e) = first_error {
            return Err(e);
        }
    }

    Ok(ScoreTable::from_store(store, &scorer_id, scorer.kind()))
}

/// Hidden ground truth for a synthetic run: an intercept plus weights on a
/// subset of terms.
#[derive(Debug, Clone)]
pub struct SyntheticWeights {
    pub intercept: f64,
    pub terms: Vec<(TermDescriptor, f64)>,
}

/// A deterministic scorer that computes intercept + sum of active-term
/// weights (+ seeded Gaussian noise). The continuous variant returns that
/// value as `raw`; the binary variant pushes it through a logistic transform
/// and draws a Bernoulli outcome from the same per-record stream.
///
/// Noise is keyed by (seed, subprompt key, repeat) alone, so values are
/// independent of scoring order and stable across resumed runs.
pub struct SyntheticOracle {
    id: String,
    model: PromptModel,
    intercept: f64,
    resolved: Vec<(Vec<(usize, u32)>, f64)>,
    noise_sd: f64,
    seed: u64,
    kind: ScoreKind,
}

impl SyntheticOracle {
    pub fn continuous(
        model: PromptModel,
        weights: &SyntheticWeights,
        noise_sd: f64,
        seed: u64,
    ) -> Result<Self, ScoringError> {
        Self::build(model, weights, noise_sd, seed, ScoreKind::Continuous)
    }

    pub fn binary(
        model: PromptModel,
        weights: &SyntheticWeights,
        noise_sd: f64,
        seed: u64,
    ) -> Result<Self, ScoringError> {
        Self::build(model, weights, noise_sd, seed, ScoreKind::Binary)
    }

    fn build(
        model: PromptModel,
        weights: &SyntheticWeights,
        noise_sd: f64,
        seed: u64,
        kind: ScoreKind,
    ) -> Result<Self, ScoringError> {
        if noise_sd < 0.0 || !noise_sd.is_finite() {
            return Err(ScoringError::NegativeNoiseSd(noise_sd));
        }
        let mut resolved = Vec::with_capacity(weights.terms.len());
        for (term, weight) in &weights.terms {
            let mut members = Vec::with_capacity(term.members().len());
            for (stratum, id) in term.member_pairs() {
                let (found, pos) = model.component_position(id)?;
                debug_assert_eq!(found, stratum);
                members.push((stratum, pos as u32));
            }
            resolved.push((members, *weight));
        }
        let tag = match kind {
            ScoreKind::Continuous => "synthetic",
            ScoreKind::Binary => "synthetic-binary",
        };
        Ok(SyntheticOracle {
            id: format!("{tag}:{seed}"),
            model,
            intercept: weights.intercept,
            resolved,
            noise_sd,
            seed,
            kind,
        })
    }

    /// Deterministic part of the score: intercept plus active-term weights.
    /// The empty key is the baseline query (no active terms).
    pub fn linear_value(&self, subprompt_key: &str) -> Result<f64, ScoringError> {
        if subprompt_key.is_empty() {
            return Ok(self.intercept);
        }
        let sub = self.model.parse_key(subprompt_key)?;
        let selections = sub.selections();
        let mut value = self.intercept;
        for (members, weight) in &self.resolved {
            if members
                .iter()
                .all(|&(stratum, pos)| selections[stratum] == Some(pos))
            {
                value += weight;
            }
        }
        Ok(value)
    }

    fn record_rng(&self, subprompt_key: &str, repeat: u32) -> ChaCha20Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update((subprompt_key.len() as u64).to_le_bytes());
        hasher.update(subprompt_key.as_bytes());
        hasher.update(repeat.to_le_bytes());
        ChaCha20Rng::from_seed(hasher.finalize().into())
    }
}

impl Scorer for SyntheticOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> ScoreKind {
        self.kind
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreOutcome, ScoringError> {
        let mut value = self.linear_value(request.subprompt_key)?;
        let mut rng = self.record_rng(request.subprompt_key, request.repeat);
        if self.noise_sd > 0.0 {
            let noise = Normal::new(0.0, self.noise_sd)
                .expect("validated noise_sd")
                .sample(&mut rng);
            value += noise;
        }
        match self.kind {
            ScoreKind::Continuous => Ok(ScoreOutcome {
                raw: value,
                binary: None,
            }),
            ScoreKind::Binary => {
                let p = 1.0 / (1.0 + (-value).exp());
                let u: f64 = rng.random();
                Ok(ScoreOutcome {
                    raw: p,
                    binary: Some(u8::from(u < p)),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt_model::ModelBuilder;
    use std::sync::atomic::AtomicUsize;

    fn two_stratum_model() -> PromptModel {
        ModelBuilder::new()
            .variable_stratum("a", &[("a1", "A1"), ("a2", "A2")])
            .variable_stratum("b", &[("b1", "B1")])
            .query("q", "q", "3+2=")
            .build()
            .unwrap()
    }

    struct CountingScorer {
        calls: AtomicUsize,
        fail_key: Option<String>,
    }

    impl CountingScorer {
        fn new() -> Self {
            CountingScorer {
                calls: AtomicUsize::new(0),
                fail_key: None,
            }
        }

        fn failing_at(key: &str) -> Self {
            CountingScorer {
                calls: AtomicUsize::new(0),
                fail_key: Some(key.to_string()),
            }
        }
    }

    impl Scorer for CountingScorer {
        fn id(&self) -> &str {
            "counting"
        }

        fn kind(&self) -> ScoreKind {
            ScoreKind::Continuous
        }

        fn score(&self, request: &ScoreRequest) -> Result<ScoreOutcome, ScoringError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.fail_key.as_deref() == Some(request.subprompt_key) {
                return Err(ScoringError::Backend("simulated outage".into()));
            }
            // Value depends only on the key and repeat, so reruns agree.
            let len = request.subprompt_key.len() as f64;
            Ok(ScoreOutcome {
                raw: 0.25 + 0.001 * len + 0.01 * f64::from(request.repeat),
                binary: None,
            })
        }
    }

    #[test]
    fn dcpmi_of_equal_values_is_exactly_one() {
        for b in [0.38, 0.22, 1e-12, 1.0] {
            assert_eq!(dcpmi(b, b).unwrap(), 1.0);
        }
        assert_eq!(dcpmi(0.76, 0.38).unwrap(), 2.0);
    }

    #[test]
    fn dcpmi_rejects_degenerate_baseline() {
        let err = dcpmi(0.5, 0.0).unwrap_err();
        assert!(err.to_string().contains("degenerate baseline"));
        assert!(dcpmi(0.5, -0.1).is_err());
        assert!(dcpmi(f64::NAN, 0.5).is_err());
        assert!(dcpmi(0.5, f64::INFINITY).is_err());
    }

    #[test]
    fn intercept_only_oracle_scores_everything_identically() {
        let model = two_stratum_model();
        let weights = SyntheticWeights {
            intercept: 1.0,
            terms: Vec::new(),
        };
        let oracle = SyntheticOracle::continuous(model.clone(), &weights, 0.0, 7).unwrap();
        for sub in model.enumerate().unwrap() {
            let out = oracle
                .score(&ScoreRequest {
                    subprompt_key: sub.key(),
                    rendered: sub.rendered(),
                    repeat: 0,
                })
                .unwrap();
            assert_eq!(out.raw, 1.0);
        }
    }

    #[test]
    fn additive_oracle_scores_by_active_terms() {
        let model = two_stratum_model();
        let term_a = TermDescriptor::new(&model, &["a1"]).unwrap();
        let weights = SyntheticWeights {
            intercept: 1.0,
            terms: vec![(term_a, 0.5)],
        };
        let oracle = SyntheticOracle::continuous(model.clone(), &weights, 0.0, 7).unwrap();
        for sub in model.enumerate().unwrap() {
            let raw = oracle
                .score(&ScoreRequest {
                    subprompt_key: sub.key(),
                    rendered: sub.rendered(),
                    repeat: 0,
                })
                .unwrap()
                .raw;
            let expected = if sub.selected_id(&model, 0) == Some("a1") {
                1.5
            } else {
                1.0
            };
            assert_eq!(raw, expected);
        }
    }

    #[test]
    fn oracle_ignores_rendering_and_separator() {
        let spec_a = two_stratum_model().to_spec();
        let mut spec_b = spec_a.clone();
        spec_b.separator = " || ".to_string();
        let model_a = PromptModel::from_spec(&spec_a).unwrap();
        let model_b = PromptModel::from_spec(&spec_b).unwrap();
        let weights = SyntheticWeights {
            intercept: 0.4,
            terms: vec![(TermDescriptor::new(&model_a, &["b1"]).unwrap(), 0.2)],
        };
        let oracle_a = SyntheticOracle::continuous(model_a.clone(), &weights, 0.25, 11).unwrap();
        let oracle_b = SyntheticOracle::continuous(model_b.clone(), &weights, 0.25, 11).unwrap();
        for (sa, sb) in model_a
            .enumerate()
            .unwrap()
            .iter()
            .zip(model_b.enumerate().unwrap().iter())
        {
            assert_eq!(sa.key(), sb.key());
            if !sa.is_all_empty(&model_a) {
                assert_ne!(sa.rendered(), sb.rendered());
            }
            let ra = oracle_a
                .score(&ScoreRequest {
                    subprompt_key: sa.key(),
                    rendered: sa.rendered(),
                    repeat: 0,
                })
                .unwrap();
            let rb = oracle_b
                .score(&ScoreRequest {
                    subprompt_key: sb.key(),
                    rendered: sb.rendered(),
                    repeat: 0,
                })
                .unwrap();
            assert_eq!(ra.raw, rb.raw);
        }
    }

    #[test]
    fn oracle_noise_is_deterministic_per_record() {
        let model = two_stratum_model();
        let weights = SyntheticWeights {
            intercept: 1.0,
            terms: Vec::new(),
        };
        let oracle = SyntheticOracle::continuous(model.clone(), &weights, 0.3, 99).unwrap();
        let sub = &model.enumerate().unwrap()[3];
        let r = |repeat| {
            oracle
                .score(&ScoreRequest {
                    subprompt_key: sub.key(),
                    rendered: sub.rendered(),
                    repeat,
                })
                .unwrap()
                .raw
        };
        assert_eq!(r(0), r(0));
        assert_ne!(r(0), r(1));
        assert!(matches!(
            SyntheticOracle::continuous(model, &weights, -0.1, 0),
            Err(ScoringError::NegativeNoiseSd(_))
        ));
    }

    #[test]
    fn binary_oracle_draws_reproducible_outcomes() {
        let model = two_stratum_model();
        let weights = SyntheticWeights {
            intercept: 0.2,
            terms: vec![(TermDescriptor::new(&model, &["a2"]).unwrap(), -1.3)],
        };
        let oracle = SyntheticOracle::binary(model.clone(), &weights, 0.0, 5).unwrap();
        for sub in model.enumerate().unwrap() {
            let a = oracle
                .score(&ScoreRequest {
                    subprompt_key: sub.key(),
                    rendered: sub.rendered(),
                    repeat: 0,
                })
                .unwrap();
            let b = oracle
                .score(&ScoreRequest {
                    subprompt_key: sub.key(),
                    rendered: sub.rendered(),
                    repeat: 0,
                })
                .unwrap();
            assert_eq!(a, b);
            assert!(a.raw > 0.0 && a.raw < 1.0);
            assert!(matches!(a.binary, Some(0) | Some(1)));
        }
    }

    #[test]
    fn score_all_counts_and_resumes() {
        let model = two_stratum_model();
        let subs = model.enumerate().unwrap();
        assert_eq!(subs.len(), 6);
        let dir = tempfile::tempdir().unwrap();
        let store_path = dir.path().join("scores.jsonl");

        let scorer = CountingScorer::new();
        let mut store = ScoreStore::open(&store_path).unwrap();
        let table = score_all(&scorer, &subs, model.query_text(), 3, 2, &mut store).unwrap();
        assert_eq!(table.len(), 18);
        // 18 records plus the single baseline query.
        assert_eq!(scorer.calls.load(Ordering::SeqCst), 19);

        // Second run over a complete store issues zero calls.
        let scorer2 = CountingScorer::new();
        let mut store = ScoreStore::open(&store_path).unwrap();
        let table2 = score_all(&scorer2, &subs, model.query_text(), 3, 2, &mut store).unwrap();
        assert_eq!(table2.len(), 18);
        assert_eq!(scorer2.calls.load(Ordering::SeqCst), 0);

        // Deleting five records leads to exactly five calls on rerun.
        drop(store);
        let text = std::fs::read_to_string(&store_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let kept: Vec<&str> = lines[..lines.len() - 5].to_vec();
        std::fs::write(&store_path, format!("{}\n", kept.join("\n"))).unwrap();
        let scorer3 = CountingScorer::new();
        let mut store = ScoreStore::open(&store_path).unwrap();
        assert_eq!(store.len(), 13);
        let table3 = score_all(&scorer3, &subs, model.query_text(), 3, 2, &mut store).unwrap();
        assert_eq!(table3.len(), 18);
        assert_eq!(scorer3.calls.load(Ordering::SeqCst), 5);

        // The reused baseline matches what the first run persisted.
        assert_eq!(table3.baseline(), table.baseline());
    }

    #[test]
    fn score_all_aborts_on_failure_but_keeps_partial_results() {
        let model = two_stratum_model();
        let subs = model.enumerate().unwrap();
        let fail_key = subs[4].key().to_string();
        let dir = tempfile::tempdir().unwrap();
        let store_path = dir.path().join("scores.jsonl");
        let scorer = CountingScorer::failing_at(&fail_key);
        let mut store = ScoreStore::open(&store_path).unwrap();
        let err = score_all(&scorer, &subs, model.query_text(), 1, 1, &mut store).unwrap_err();
        match err {
            ScoringError::ScorerFailed { key, .. } => assert_eq!(key, fail_key),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(store.len() >= 4);
        // Partial results persist on disk for the next attempt.
        let reopened = ScoreStore::open(&store_path).unwrap();
        assert_eq!(reopened.len(), store.len());
    }

    #[test]
    fn response_vector_aligns_by_key_not_arrival() {
        let mk = |key: &str, repeat: u32, raw: f64| ScoreRecord {
            scorer_id: "t".into(),
            subprompt_key: key.into(),
            repeat,
            raw,
            baseline: 0.5,
            dcpmi: raw / 0.5,
            binary: None,
            timestamp: "2026-01-01T00:00:00Z".into(),
        };
        let rows = vec![
            ("0:".to_string(), 0u32),
            ("0:a1".to_string(), 0u32),
            ("0:a2".to_string(), 0u32),
        ];
        let mut forward = ScoreTable::new("t", ScoreKind::Continuous);
        forward.insert(mk("0:", 0, 0.1));
        forward.insert(mk("0:a1", 0, 0.2));
        forward.insert(mk("0:a2", 0, 0.3));
        let mut shuffled = ScoreTable::new("t", ScoreKind::Continuous);
        shuffled.insert(mk("0:a2", 0, 0.3));
        shuffled.insert(mk("0:", 0, 0.1));
        shuffled.insert(mk("0:a1", 0, 0.2));
        let ya = forward.response_vector(&rows, FitTarget::Raw).unwrap();
        let yb = shuffled.response_vector(&rows, FitTarget::Raw).unwrap();
        assert_eq!(ya, yb);
        assert_eq!(ya, vec![0.1, 0.2, 0.3]);

        let yd = forward.response_vector(&rows, FitTarget::Dcpmi).unwrap();
        assert_eq!(yd, vec![0.2, 0.4, 0.6]);

        let missing = vec![("0:zzz".to_string(), 0u32)];
        assert!(matches!(
            forward.response_vector(&missing, FitTarget::Raw),
            Err(ScoringError::MissingRecord { .. })
        ));
        assert!(matches!(
            forward.response_vector(&rows, FitTarget::Binary),
            Err(ScoringError::MissingBinary { .. })
        ));
    }

    #[test]
    fn store_round_trips_and_keeps_last_duplicate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.jsonl");
        let mut store = ScoreStore::open(&path).unwrap();
        let mut rec = ScoreRecord {
            scorer_id: "s".into(),
            subprompt_key: "0:a".into(),
            repeat: 0,
            raw: 0.4,
            baseline: 0.2,
            dcpmi: 2.0,
            binary: Some(1),
            timestamp: now_rfc3339(),
        };
        store.append(&rec).unwrap();
        rec.raw = 0.6;
        rec.dcpmi = 3.0;
        store.append(&rec).unwrap();
        drop(store);

        let reopened = ScoreStore::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(reopened.get("s", "0:a", 0).unwrap().raw, 0.6);

        // On-disk field names are pinned.
        let text = std::fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap();
        for field in [
            "\"scorer_id\"",
            "\"subprompt_key\"",
            "\"repeat\"",
            "\"raw\"",
            "\"baseline\"",
            "\"dcpmi\"",
            "\"binary\"",
            "\"timestamp\"",
        ] {
            assert!(first.contains(field), "missing {field} in {first}");
        }
    }

    #[test]
    fn store_meta_line_binds_manifest_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.jsonl");
        let store = ScoreStore::open_bound(&path, "abc123").unwrap();
        assert_eq!(store.manifest_hash(), Some("abc123"));
        drop(store);

        let again = ScoreStore::open_bound(&path, "abc123").unwrap();
        assert_eq!(again.len(), 0);
        drop(again);
        assert!(matches!(
            ScoreStore::open_bound(&path, "other"),
            Err(ScoringError::ManifestHashMismatch { .. })
        ));

        let unbound_path = dir.path().join("plain.jsonl");
        let _ = ScoreStore::open(&unbound_path).unwrap();
        assert!(matches!(
            ScoreStore::open_bound(&unbound_path, "abc123"),
            Err(ScoringError::MissingManifestHash { .. })
        ));
    }

    #[test]
    fn corrupt_store_lines_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.jsonl");
        std::fs::write(&path, "{\"manifest_hash\":\"x\"}\nnot json\n").unwrap();
        let err = ScoreStore::open(&path).unwrap_err();
        assert!(matches!(err, ScoringError::CorruptStore { line: 2, .. }));
    }

    #[test]
    fn concurrent_scoring_completes_the_table() {
        let model = ModelBuilder::new()
            .variable_stratum("a", &[("a1", "A1"), ("a2", "A2"), ("a3", "A3")])
            .variable_stratum("b", &[("b1", "B1"), ("b2", "B2"), ("b3", "B3")])
            .variable_stratum("c", &[("c1", "C1")])
            .query("q", "q", "Q")
            .build()
            .unwrap();
        let subs = model.enumerate().unwrap();
        assert_eq!(subs.len(), 32);
        let dir = tempfile::tempdir().unwrap();
        let mut store = ScoreStore::open(dir.path().join("scores.jsonl")).unwrap();
        let scorer = CountingScorer::new();
        let table = score_all(&scorer, &subs, model.query_text(), 2, 4, &mut store).unwrap();
        assert_eq!(table.len(), 64);
        assert_eq!(scorer.calls.load(Ordering::SeqCst), 65);
        for sub in &subs {
            for rep in 0..2 {
                assert!(table.get(sub.key(), rep).is_some());
            }
        }
    }
}
