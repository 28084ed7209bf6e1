//! Cognitive update strategy: low-cognition frames are re-detected from the
//! high-cognition frames around them and relabeled only when the new
//! effectiveness clears the old one by a margin `tau`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcm::{CognitionRecord, FeatureTriple, Fcm, Level};
use crate::features::{validate_sequence, FrameRecord};

pub const DEFAULT_LAMBDA: usize = 3;
pub const DEFAULT_TAU: f64 = 0.35;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_BLEND: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ProjectionSource {
    Identity,
    File { key: String, value: String },
    SeededRandom { seed: u64 },
}

/// Linear key and value maps, each `d x d'`: `f_k = K^T f`, `f_v = V^T f`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionConfig {
    key: DMatrix<f64>,
    value: DMatrix<f64>,
    source: ProjectionSource,
}

impl ProjectionConfig {
    pub fn new(key: DMatrix<f64>, value: DMatrix<f64>, source: ProjectionSource) -> Result<Self> {
        if key.nrows() != value.nrows() {
            return Err(Error::DimensionMismatch {
                expected: key.nrows(),
                found: value.nrows(),
            });
        }
        if key.nrows() == 0 || key.ncols() == 0 || value.ncols() == 0 {
            return Err(Error::InvalidInput("projection matrices must be non-empty".into()));
        }
        Ok(Self { key, value, source })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            key: DMatrix::identity(dim, dim),
            value: DMatrix::identity(dim, dim),
            source: ProjectionSource::Identity,
        }
    }

    /// Gaussian entries scaled by `1/sqrt(dim)`, keys drawn before values.
    pub fn seeded_random(dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let draw = |rng: &mut ChaCha8Rng| {
            DMatrix::from_fn(dim, out_dim, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
        };
        let key = draw(&mut rng);
        let value = draw(&mut rng);
        Self {
            key,
            value,
            source: ProjectionSource::SeededRandom { seed },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.key.nrows()
    }

    pub fn source(&self) -> &ProjectionSource {
        &self.source
    }

    pub fn key_matrix(&self) -> &DMatrix<f64> {
        &self.key
    }

    pub fn value_matrix(&self) -> &DMatrix<f64> {
        &self.value
    }

    pub fn project(&self, f: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if f.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: f.len(),
            });
        }
        let v = DVector::from_column_slice(f);
        let fk = self.key.tr_mul(&v);
        let fv = self.value.tr_mul(&v);
        Ok((fk.as_slice().to_vec(), fv.as_slice().to_vec()))
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Frames of `high` (sorted) inside the open window `(i - lambda, i + lambda)`.
pub fn correlated_sequence(i: usize, high: &[usize], lambda: usize) -> Vec<usize> {
    let (lo, hi) = (i as i64 - lambda as i64, i as i64 + lambda as i64);
    high.iter()
        .copied()
        .filter(|&j| (j as i64) > lo && (j as i64) < hi)
        .collect()
}

/// Attention over the correlated frames: softmax of key cosines weights the
/// value vectors.
pub fn aggregate_high_cognition(
    query_key: &[f64],
    keys: &[&[f64]],
    values: &[&[f64]],
) -> Result<Vec<f64>> {
    if keys.is_empty() {
        return Err(Error::NoCorrelatedFrames);
    }
    if keys.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: keys.len(),
            found: values.len(),
        });
    }
    let sims: Vec<f64> = keys.iter().map(|k| cosine(k, query_key)).collect();
    let weights = softmax(&sims);
    let dim = values[0].len();
    let mut out = vec![0.0; dim];
    for (w, v) in weights.iter().zip(values) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// Temperature-scaled soft nearest-prototype classifier over a blend of the
/// aggregated context feature and the frame's own value feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeClassifier {
    labels: Vec<String>,
    prototypes: Vec<Vec<f64>>,
    temperature: f64,
    blend: f64,
}

impl PrototypeClassifier {
    pub fn new(
        labels: Vec<String>,
        prototypes: Vec<Vec<f64>>,
        temperature: f64,
        blend: f64,
    ) -> Result<Self> {
        if labels.is_empty() || labels.len() != prototypes.len() {
            return Err(Error::InvalidInput(format!(
                "need one prototype per label, got {} labels and {} prototypes",
                labels.len(),
                prototypes.len()
            )));
        }
        let dim = prototypes[0].len();
        if let Some(p) = prototypes.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.len(),
            });
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidInput(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if !(0.0..=1.0).contains(&blend) {
            return Err(Error::InvalidInput(format!("blend {blend} outside [0, 1]")));
        }
        Ok(Self {
            labels,
            prototypes,
            temperature,
            blend,
        })
    }

    /// Per-label mean of the given value vectors, labels in sorted order.
    pub fn from_class_means<'a>(
        samples: impl IntoIterator<Item = (&'a str, &'a [f64])>,
        temperature: f64,
        blend: f64,
    ) -> Result<Self> {
        let mut sums: std::collections::BTreeMap<&str, (Vec<f64>, usize)> = Default::default();
        for (label, v) in samples {
            let entry = sums
                .entry(label)
                .or_insert_with(|| (vec![0.0; v.len()], 0));
            if entry.0.len() != v.len() {
                return Err(Error::DimensionMismatch {
                    expected: entry.0.len(),
                    found: v.len(),
                });
            }
            for (s, x) in entry.0.iter_mut().zip(v) {
                *s += x;
            }
            entry.1 += 1;
        }
        let (labels, prototypes) = sums
            .into_iter()
            .map(|(l, (s, n))| (l.to_string(), s.into_iter().map(|x| x / n as f64).collect()))
            .unzip();
        Self::new(labels, prototypes, temperature, blend)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Self = serde_json::from_str(text)?;
        Self::new(raw.labels, raw.prototypes, raw.temperature, raw.blend)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].len()
    }

    /// Class scores aligned with [`labels`](Self::labels); a probability vector.
    pub fn reclassify(&self, aggregated: &[f64], own_value: &[f64]) -> Result<Vec<f64>> {
        for v in [aggregated, own_value] {
            if v.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    found: v.len(),
                });
            }
        }
        let blended: Vec<f64> = aggregated
            .iter()
            .zip(own_value)
            .map(|(a, o)| self.blend * a + (1.0 - self.blend) * o)
            .collect();
        let logits: Vec<f64> = self
            .prototypes
            .iter()
            .map(|p| cosine(&blended, p) / self.temperature)
            .collect();
        Ok(softmax(&logits))
    }
}

/// Re-detection confidence: the infinity norm of the score vector.
pub fn confidence_from_scores(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("empty score vector".into()));
    }
    Ok(scores.iter().fold(0.0_f64, |m, s| m.max(s.abs())))
}

/// `(max(new, old + tau), new > old + tau)`.
pub fn update_rule(old: f64, new: f64, tau: f64) -> (f64, bool) {
    (new.max(old + tau), new > old + tau)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// Re-detect every low-cognition frame against the first pass, then commit.
    #[default]
    Batch,
    /// Commit each accepted update before scoring the next frame.
    Sequential,
}

/// Where `N` and `G` for the re-detected frame come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateFeatures {
    /// Recomputed with the candidate label substituted into the label stream.
    #[default]
    Candidate,
    /// First-pass values.
    Frozen,
}

/// Quantity compared in the update test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Effectiveness before and after re-detection.
    #[default]
    Effectiveness,
    /// Raw confidence before and after re-detection.
    Confidence,
}

#[derive(Clone, Debug)]
pub struct FcsConfig {
    pub lambda: usize,
    pub tau: f64,
    pub projection: ProjectionConfig,
    pub classifier: PrototypeClassifier,
    pub mode: UpdateMode,
    pub candidate_features: CandidateFeatures,
    pub criterion: Criterion,
}

impl FcsConfig {
    pub fn new(projection: ProjectionConfig, classifier: PrototypeClassifier) -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            tau: DEFAULT_TAU,
            projection,
            classifier,
            mode: UpdateMode::Batch,
            candidate_features: CandidateFeatures::Candidate,
            criterion: Criterion::Effectiveness,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambda < 1 {
            return Err(Error::InvalidInput("lambda must be >= 1".into()));
        }
        if self.tau.is_nan() {
            return Err(Error::InvalidInput("tau is NaN".into()));
        }
        Ok(())
    }
}

/// Result of re-detecting one low-cognition frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Redetection {
    pub label: String,
    pub c_hat: f64,
    pub u_hat: f64,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub index: usize,
    pub old_label: String,
    pub new_label: String,
    /// Re-detected label whether or not it was accepted.
    pub candidate_label: Option<String>,
    pub c_old: f64,
    pub c_hat: Option<f64>,
    pub u_old: f64,
    pub u_hat: Option<f64>,
    pub u_opt: Option<f64>,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl UpdateOutcome {
    /// Replays the update test at another margin and criterion.
    pub fn accepts(&self, tau: f64, criterion: Criterion) -> bool {
        match (criterion, self.c_hat, self.u_hat) {
            (Criterion::Effectiveness, _, Some(u_hat)) => update_rule(self.u_old, u_hat, tau).1,
            (Criterion::Confidence, Some(c_hat), _) => update_rule(self.c_old, c_hat, tau).1,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcsOutput {
    pub sequence: Vec<FrameRecord>,
    pub outcomes: Vec<UpdateOutcome>,
    /// Frame index and message for frames whose re-detection failed.
    pub errors: Vec<(usize, String)>,
}

struct Context<'a> {
    fcm: &'a Fcm,
    cfg: &'a FcsConfig,
    records: &'a [CognitionRecord],
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    high: Vec<usize>,
}

impl Context<'_> {
    fn redetect(&self, pos: usize, labels: &[String]) -> Result<Redetection> {
        let window = correlated_sequence(pos, &self.high, self.cfg.lambda);
        let keys: Vec<&[f64]> = window.iter().map(|&j| self.keys[j].as_slice()).collect();
        let values: Vec<&[f64]> = window.iter().map(|&j| self.values[j].as_slice()).collect();
        let aggregated = aggregate_high_cognition(&self.keys[pos], &keys, &values)?;
        let scores = self.cfg.classifier.reclassify(&aggregated, &self.values[pos])?;
        let c_hat = confidence_from_scores(&scores)?;
        let best = scores
            .iter()
            .enumerate()
            .fold(0, |b, (k, s)| if *s > scores[b] { k } else { b });
        let label = self.cfg.classifier.labels()[best].clone();
        let record = &self.records[pos];
        let (n, g) = match self.cfg.candidate_features {
            CandidateFeatures::Frozen => (record.n, record.g),
            CandidateFeatures::Candidate => {
                let mut hypothesis = labels.to_vec();
                hypothesis[pos] = label.clone();
                self.fcm.context_features(&hypothesis, pos)?
            }
        };
        let u_hat = self.fcm.effectiveness(FeatureTriple { c: c_hat, n, g })?;
        Ok(Redetection {
            label,
            c_hat,
            u_hat,
            scores,
        })
    }

    fn outcome(&self, pos: usize, result: Result<Redetection>) -> UpdateOutcome {
        let record = &self.records[pos];
        let mut outcome = UpdateOutcome {
            index: record.index,
            old_label: record.label.clone(),
            new_label: record.label.clone(),
            candidate_label: None,
            c_old: record.c,
            c_hat: None,
            u_old: record.u,
            u_hat: None,
            u_opt: None,
            accepted: false,
            error: None,
        };
        match result {
            Ok(r) => {
                let (old, new) = match self.cfg.criterion {
                    Criterion::Effectiveness => (record.u, r.u_hat),
                    Criterion::Confidence => (record.c, r.c_hat),
                };
                let (u_opt, accepted) = update_rule(old, new, self.cfg.tau);
                if accepted {
                    outcome.new_label = r.label.clone();
                }
                outcome.candidate_label = Some(r.label);
                outcome.c_hat = Some(r.c_hat);
                outcome.u_hat = Some(r.u_hat);
                outcome.u_opt = Some(u_opt);
                outcome.accepted = accepted;
            }
            Err(Error::NoCorrelatedFrames) => {}
            Err(e) => outcome.error = Some(e.to_string()),
        }
        outcome
    }
}

/// Re-detects the low-cognition frames of one sequence and applies the
/// accepted updates. `records` are the first-pass cognition records of
/// `sequence`; their `level` decides which frames are re-detected.
pub fn run_fcs(
    sequence: &[FrameRecord],
    records: &[CognitionRecord],
    fcm: &Fcm,
    cfg: &FcsConfig,
) -> Result<FcsOutput> {
    cfg.validate()?;
    validate_sequence(sequence)?;
    if records.len() != sequence.len() {
        return Err(Error::Contract(format!(
            "{} cognition records for {} frames",
            records.len(),
            sequence.len()
        )));
    }
    let mut keys = Vec::with_capacity(sequence.len());
    let mut values = Vec::with_capacity(sequence.len());
    for frame in sequence {
        let (k, v) = cfg
            .projection
            .project(&frame.feature)
            .map_err(|e| e.at_frame(frame.index))?;
        keys.push(k);
        values.push(v);
    }
    let (high, low): (Vec<usize>, Vec<usize>) =
        (0..records.len()).partition(|&p| records[p].level == Level::High);
    let ctx = Context {
        fcm,
        cfg,
        records,
        keys,
        values,
        high,
    };

    let first_pass: Vec<String> = records.iter().map(|r| r.label.clone()).collect();
    let outcomes: Vec<UpdateOutcome> = match cfg.mode {
        UpdateMode::Batch => low
            .par_iter()
            .map(|&pos| ctx.outcome(pos, ctx.redetect(pos, &first_pass)))
            .collect(),
        UpdateMode::Sequential => {
            let mut working = first_pass.clone();
            let mut out = Vec::with_capacity(low.len());
            for &pos in &low {
                let o = ctx.outcome(pos, ctx.redetect(pos, &working));
                if o.accepted {
                    working[pos] = o.new_label.clone();
                }
                out.push(o);
            }
            out
        }
    };

    let offset = sequence[0].index;
    let mut updated = sequence.to_vec();
    let mut errors = Vec::new();
    for o in &outcomes {
        if let Some(e) = &o.error {
            errors.push((o.index, e.clone()));
        }
        if o.accepted {
            let frame = &mut updated[o.index - offset];
            frame.label = o.new_label.clone();
            if let Some(c) = o.c_hat {
                frame.confidence = c;
            }
        }
    }
    Ok(FcsOutput {
        sequence: updated,
        outcomes,
        errors,
    })
}
