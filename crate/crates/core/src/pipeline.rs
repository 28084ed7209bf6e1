//! End-to-end configuration and driver: fit statistics, evaluate every
//! sequence, build the re-detection classifier, update low-cognition frames.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcm::{CognitionRecord, Fcm, FcmConfig, Level, DEFAULT_DELTA};
use crate::fcs::{
    run_fcs, CandidateFeatures, Criterion, FcsConfig, ProjectionConfig, ProjectionSource,
    PrototypeClassifier, UpdateMode, UpdateOutcome, DEFAULT_BLEND, DEFAULT_LAMBDA, DEFAULT_TAU,
    DEFAULT_TEMPERATURE,
};
use crate::features::{
    validate_sequence, CooccurrenceModel, FrameRecord, PositionScale, DEFAULT_ALPHA,
};
use crate::fuzzy::RuleBase;
use crate::io::{self, SequenceInput, SCHEMA_VERSION};
use crate::rules::{self, DEFAULT_MU1, DEFAULT_MU2};

/// Flat `key = value` configuration; every field is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub delta: f64,
    pub lambda: usize,
    pub tau: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// `.frl` rule file; the generated base with the bundled example overrides otherwise.
    pub rule_file: Option<PathBuf>,
    /// `"fit"` or the path of a saved co-occurrence model.
    pub cooccurrence: String,
    /// Label sequences to fit co-occurrence on instead of the input stream.
    pub annotations: Option<PathBuf>,
    pub alpha: f64,
    /// `"identity"`, `"seeded"` or `"file"`.
    pub projection: String,
    /// Output dimension of a seeded projection; the input dimension if unset.
    pub projection_dim: Option<usize>,
    pub key_matrix: Option<PathBuf>,
    pub value_matrix: Option<PathBuf>,
    /// `"class-means"` or the path of a prototype classifier JSON file.
    pub classifier: String,
    pub temperature: f64,
    pub blend: f64,
    pub update_mode: UpdateMode,
    pub candidate_features: CandidateFeatures,
    /// Quantity compared by the update test.
    pub criterion: Criterion,
    /// Quantity compared against `delta` to pick low-cognition frames.
    pub partition_by: Criterion,
    pub position_scale: PositionScale,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            lambda: DEFAULT_LAMBDA,
            tau: DEFAULT_TAU,
            mu1: DEFAULT_MU1,
            mu2: DEFAULT_MU2,
            rule_file: None,
            cooccurrence: "fit".into(),
            annotations: None,
            alpha: DEFAULT_ALPHA,
            projection: "identity".into(),
            projection_dim: None,
            key_matrix: None,
            value_matrix: None,
            classifier: "class-means".into(),
            temperature: DEFAULT_TEMPERATURE,
            blend: DEFAULT_BLEND,
            update_mode: UpdateMode::Batch,
            candidate_features: CandidateFeatures::Candidate,
            criterion: Criterion::Effectiveness,
            partition_by: Criterion::Effectiveness,
            position_scale: PositionScale::Normalized,
            seed: 0,
        }
    }
}

fn bad_config(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

impl PipelineConfig {
    /// Parses a config document with `key=value` overrides applied on top.
    /// Override values that are not valid TOML literals are taken as strings.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| bad_config(format!("config: {e}")))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| bad_config(format!("override `{item}` is not key=value")))?;
            let (key, raw) = (key.trim(), raw.trim());
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.to_string(), value);
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| bad_config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(bad_config(format!("delta {} outside [0, 1]", self.delta)));
        }
        if self.lambda < 1 {
            return Err(bad_config("lambda must be >= 1"));
        }
        if self.tau.is_nan() {
            return Err(bad_config("tau is NaN"));
        }
        if !(self.mu1 >= 0.0 && self.mu2 >= 0.0 && self.mu1 + self.mu2 <= 1.0 + 1e-12) {
            return Err(bad_config("mu1, mu2 must be >= 0 with mu1 + mu2 <= 1"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(bad_config("alpha must be >= 0"));
        }
        if !matches!(self.projection.as_str(), "identity" | "seeded" | "file") {
            return Err(bad_config(format!("unknown projection `{}`", self.projection)));
        }
        if self.projection == "file" && (self.key_matrix.is_none() || self.value_matrix.is_none())
        {
            return Err(bad_config("projection = \"file\" needs key_matrix and value_matrix"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(bad_config("temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.blend) {
            return Err(bad_config("blend outside [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CooccurrenceSource {
    Annotations,
    Input,
    File,
    Supplied,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub cooccurrence_source: CooccurrenceSource,
    pub rules: usize,
    pub delta: f64,
    pub lambda: usize,
    pub tau: f64,
    pub update_mode: UpdateMode,
    pub criterion: Criterion,
    pub partition_by: Criterion,
    pub projection: ProjectionSource,
    pub classifier_labels: Vec<String>,
    pub sequences: usize,
    pub frames: usize,
    pub low_cognition: usize,
    pub accepted: usize,
    pub frame_errors: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceResult {
    pub id: String,
    pub cognition: Vec<CognitionRecord>,
    pub outcomes: Vec<UpdateOutcome>,
    pub output: Vec<FrameRecord>,
    pub errors: Vec<(usize, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub sequences: Vec<SequenceResult>,
    pub meta: RunMeta,
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    cfg: PipelineConfig,
    rulebase: RuleBase,
    cooccurrence: Option<(CooccurrenceModel, CooccurrenceSource)>,
    annotations: Option<Vec<Vec<String>>>,
    projection: Option<ProjectionConfig>,
    classifier: Option<PrototypeClassifier>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Pipeline {
    /// Pipeline without file inputs: a `rule_file`, saved model or matrix
    /// files in `cfg` are ignored until [`load`](Self::load) is used.
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let rulebase = rules::generate_default_rulebase(cfg.mu1, cfg.mu2, &rules::example_overrides())?;
        Ok(Self {
            cfg,
            rulebase,
            cooccurrence: None,
            annotations: None,
            projection: None,
            classifier: None,
        })
    }

    /// Resolves every file named in `cfg`, relative to `base`.
    pub fn load(cfg: PipelineConfig, base: &Path) -> Result<Self> {
        let mut p = Self::new(cfg)?;
        let cfg = p.cfg.clone();
        if let Some(path) = &cfg.rule_file {
            let text = std::fs::read_to_string(resolve(base, path))?;
            p.rulebase = rules::parse_str(&text)?;
        }
        if cfg.cooccurrence != "fit" {
            let text = std::fs::read_to_string(resolve(base, Path::new(&cfg.cooccurrence)))?;
            p.cooccurrence = Some((CooccurrenceModel::from_json(&text)?, CooccurrenceSource::File));
        }
        if let Some(path) = &cfg.annotations {
            p.annotations = Some(io::read_annotations(&resolve(base, path))?);
        }
        if cfg.projection == "file" {
            let key = cfg.key_matrix.as_ref().expect("validated");
            let value = cfg.value_matrix.as_ref().expect("validated");
            p.projection = Some(ProjectionConfig::new(
                io::read_matrix(&resolve(base, key))?,
                io::read_matrix(&resolve(base, value))?,
                ProjectionSource::File {
                    key: key.display().to_string(),
                    value: value.display().to_string(),
                },
            )?);
        }
        if cfg.classifier != "class-means" {
            let text = std::fs::read_to_string(resolve(base, Path::new(&cfg.classifier)))?;
            p.classifier = Some(PrototypeClassifier::from_json(&text)?);
        }
        Ok(p)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn rulebase(&self) -> &RuleBase {
        &self.rulebase
    }

    pub fn with_rulebase(mut self, rulebase: RuleBase) -> Self {
        self.rulebase = rulebase;
        self
    }

    pub fn with_annotations(mut self, corpus: Vec<Vec<String>>) -> Self {
        self.annotations = Some(corpus);
        self
    }

    pub fn with_cooccurrence(mut self, model: CooccurrenceModel) -> Self {
        self.cooccurrence = Some((model, CooccurrenceSource::Supplied));
        self
    }

    pub fn with_projection(mut self, projection: ProjectionConfig) -> Self {
        self.projection = Some(projection);
        self
    }

    pub fn with_classifier(mut self, classifier: PrototypeClassifier) -> Self {
        self.classifier = Some(classifier);
        self
    }

    fn cooccurrence_for(
        &self,
        inputs: &[SequenceInput],
    ) -> Result<(CooccurrenceModel, CooccurrenceSource)> {
        if let Some(supplied) = &self.cooccurrence {
            return Ok(supplied.clone());
        }
        let input_labels: Vec<Vec<&str>> = inputs
            .iter()
            .map(|s| s.frames.iter().map(|f| f.label.as_str()).collect())
            .collect();
        let vocabulary = input_labels.iter().flatten().copied();
        match &self.annotations {
            Some(corpus) => Ok((
                CooccurrenceModel::fit_with_vocabulary(vocabulary, corpus, self.cfg.alpha)?,
                CooccurrenceSource::Annotations,
            )),
            None => Ok((
                CooccurrenceModel::fit_with_vocabulary(
                    std::iter::empty::<&str>(),
                    &input_labels,
                    self.cfg.alpha,
                )?,
                CooccurrenceSource::Input,
            )),
        }
    }

    /// First pass only: cognition records per sequence, with levels set by
    /// `partition_by`.
    pub fn evaluate(&self, inputs: &[SequenceInput]) -> Result<(Fcm, Vec<Vec<CognitionRecord>>, CooccurrenceSource)> {
        if inputs.is_empty() {
            return Err(Error::InvalidInput("no sequences".into()));
        }
        for s in inputs {
            validate_sequence(&s.frames)
                .map_err(|e| Error::InvalidInput(format!("sequence `{}`: {e}", s.id)))?;
        }
        let (model, source) = self.cooccurrence_for(inputs)?;
        let fcm = Fcm::new(FcmConfig {
            delta: self.cfg.delta,
            mu1: self.cfg.mu1,
            mu2: self.cfg.mu2,
            rulebase: self.rulebase.clone(),
            cooccurrence: model,
            position_scale: self.cfg.position_scale,
        })?;
        let delta = self.cfg.delta;
        let by_confidence = self.cfg.partition_by == Criterion::Confidence;
        let cognition = inputs
            .par_iter()
            .map(|s| {
                let mut recs = fcm
                    .evaluate(&s.frames)
                    .map_err(|e| Error::InvalidInput(format!("sequence `{}`: {e}", s.id)))?;
                if by_confidence {
                    for r in &mut recs {
                        r.level = if r.c >= delta { Level::High } else { Level::Low };
                    }
                }
                Ok(recs)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((fcm, cognition, source))
    }

    pub fn run(&self, inputs: &[SequenceInput]) -> Result<PipelineOutput> {
        let (fcm, cognition, source) = self.evaluate(inputs)?;
        let dim = inputs[0].frames[0].feature.len();
        if let Some(s) = inputs.iter().find(|s| s.frames[0].feature.len() != dim) {
            return Err(Error::InvalidInput(format!(
                "sequence `{}` has feature dimension {}, expected {dim}",
                s.id,
                s.frames[0].feature.len()
            )));
        }
        let projection = match &self.projection {
            Some(p) => p.clone(),
            None => match self.cfg.projection.as_str() {
                "seeded" => ProjectionConfig::seeded_random(
                    dim,
                    self.cfg.projection_dim.unwrap_or(dim),
                    self.cfg.seed,
                ),
                "identity" => ProjectionConfig::identity(dim),
                other => {
                    return Err(bad_config(format!(
                        "projection `{other}` needs matrix files; use Pipeline::load"
                    )))
                }
            },
        };
        let classifier = match &self.classifier {
            Some(c) => c.clone(),
            None => self.class_means(inputs, &cognition, &projection)?,
        };
        let fcs_cfg = FcsConfig {
            lambda: self.cfg.lambda,
            tau: self.cfg.tau,
            projection: projection.clone(),
            classifier: classifier.clone(),
            mode: self.cfg.update_mode,
            candidate_features: self.cfg.candidate_features,
            criterion: self.cfg.criterion,
        };
        let sequences = inputs
            .par_iter()
            .zip(cognition.into_par_iter())
            .map(|(s, recs)| {
                let out = run_fcs(&s.frames, &recs, &fcm, &fcs_cfg)
                    .map_err(|e| Error::InvalidInput(format!("sequence `{}`: {e}", s.id)))?;
                Ok(SequenceResult {
                    id: s.id.clone(),
                    cognition: recs,
                    outcomes: out.outcomes,
                    output: out.sequence,
                    errors: out.errors,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let meta = RunMeta {
            schema_version: SCHEMA_VERSION,
            cooccurrence_source: source,
            rules: self.rulebase.len(),
            delta: self.cfg.delta,
            lambda: self.cfg.lambda,
            tau: self.cfg.tau,
            update_mode: self.cfg.update_mode,
            criterion: self.cfg.criterion,
            partition_by: self.cfg.partition_by,
            projection: projection.source().clone(),
            classifier_labels: classifier.labels().to_vec(),
            sequences: sequences.len(),
            frames: sequences.iter().map(|s| s.output.len()).sum(),
            low_cognition: sequences.iter().map(|s| s.outcomes.len()).sum(),
            accepted: sequences
                .iter()
                .flat_map(|s| &s.outcomes)
                .filter(|o| o.accepted)
                .count(),
            frame_errors: sequences.iter().map(|s| s.errors.len()).sum(),
        };
        Ok(PipelineOutput { sequences, meta })
    }

    /// Prototypes are the per-label means of the value projections of
    /// high-cognition frames across all sequences.
    fn class_means(
        &self,
        inputs: &[SequenceInput],
        cognition: &[Vec<CognitionRecord>],
        projection: &ProjectionConfig,
    ) -> Result<PrototypeClassifier> {
        let mut samples: Vec<(&str, Vec<f64>)> = Vec::new();
        for (s, recs) in inputs.iter().zip(cognition) {
            for (frame, rec) in s.frames.iter().zip(recs) {
                if rec.level == Level::High {
                    samples.push((frame.label.as_str(), projection.project(&frame.feature)?.1));
                }
            }
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput(
                "no high-cognition frames to build class prototypes from".into(),
            ));
        }
        PrototypeClassifier::from_class_means(
            samples.iter().map(|(l, v)| (*l, v.as_slice())),
            self.cfg.temperature,
            self.cfg.blend,
        )
    }
}
