//! Per-frame cognition features: confidence, adjacent-action NPMI and the
//! Gaussian position score of a frame inside its label run.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COOCCURRENCE_VERSION: u32 = 1;
pub const DEFAULT_ALPHA: f64 = 0.5;

/// One detector output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub label: String,
    pub confidence: f64,
    pub feature: Vec<f64>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
}

impl FrameRecord {
    pub fn new(index: usize, label: impl Into<String>, confidence: f64, feature: Vec<f64>) -> Self {
        Self {
            index,
            label: label.into(),
            confidence,
            feature,
            bbox: None,
        }
    }
}

/// Checks the per-sequence invariants: non-empty, confidence in [0, 1],
/// constant feature dimension, indices increasing by one.
pub fn validate_sequence(sequence: &[FrameRecord]) -> Result<()> {
    let first = sequence.first().ok_or(Error::EmptySequence)?;
    let dim = first.feature.len();
    for (pos, frame) in sequence.iter().enumerate() {
        if !(0.0..=1.0).contains(&frame.confidence) {
            return Err(Error::InvalidInput(format!(
                "confidence {} outside [0, 1]",
                frame.confidence
            ))
            .at_frame(frame.index));
        }
        if frame.feature.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: frame.feature.len(),
            }
            .at_frame(frame.index));
        }
        if frame.feature.iter().any(|v| !v.is_finite()) {
            return Err(
                Error::InvalidInput("non-finite feature value".into()).at_frame(frame.index)
            );
        }
        if frame.index != first.index + pos {
            return Err(Error::InvalidInput(format!(
                "frame indices must increase by 1, expected {}",
                first.index + pos
            ))
            .at_frame(frame.index));
        }
    }
    Ok(())
}

/// Maximal run of one label; `start` and `end` are inclusive frame indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSegment {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl ActionSegment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.start..=self.end).contains(&index)
    }
}

/// Run-length segmentation of a label stream whose first frame has index `offset`.
pub fn segment_labels<S: AsRef<str>>(labels: &[S], offset: usize) -> Result<Vec<ActionSegment>> {
    if labels.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut segments: Vec<ActionSegment> = Vec::new();
    for (pos, label) in labels.iter().enumerate() {
        let label = label.as_ref();
        match segments.last_mut() {
            Some(seg) if seg.label == label => seg.end = offset + pos,
            _ => segments.push(ActionSegment {
                start: offset + pos,
                end: offset + pos,
                label: label.to_string(),
            }),
        }
    }
    Ok(segments)
}

pub fn segment_runs(sequence: &[FrameRecord]) -> Result<Vec<ActionSegment>> {
    let offset = sequence.first().ok_or(Error::EmptySequence)?.index;
    let labels: Vec<&str> = sequence.iter().map(|f| f.label.as_str()).collect();
    segment_labels(&labels, offset)
}

/// Smoothed label-transition statistics over adjacent segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceModel {
    labels: Vec<String>,
    /// Row-major `labels.len()` squared matrix, `joint[a * n + b] = P(a -> b)`.
    joint: Vec<f64>,
    marginal: Vec<f64>,
    alpha: f64,
    version: u32,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl CooccurrenceModel {
    /// Builds a model from explicit probability tables.
    pub fn from_tables(
        labels: Vec<String>,
        joint: Vec<f64>,
        marginal: Vec<f64>,
        alpha: f64,
    ) -> Result<Self> {
        let model = Self {
            lookup: HashMap::new(),
            labels,
            joint,
            marginal,
            alpha,
            version: COOCCURRENCE_VERSION,
        };
        model.checked()
    }

    fn checked(mut self) -> Result<Self> {
        let n = self.labels.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty label vocabulary".into()));
        }
        if self.joint.len() != n * n || self.marginal.len() != n {
            return Err(Error::InvalidInput(format!(
                "tables do not match a vocabulary of {n} labels"
            )));
        }
        if self.version != COOCCURRENCE_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported co-occurrence model version {}",
                self.version
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid alpha {}", self.alpha)));
        }
        for (name, table) in [("joint", &self.joint), ("marginal", &self.marginal)] {
            if table.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidInput(format!("{name} has entries outside [0, 1]")));
            }
            let total: f64 = table.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("{name} sums to {total}, not 1")));
            }
        }
        self.lookup = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        if self.lookup.len() != n {
            return Err(Error::InvalidInput("duplicate labels in vocabulary".into()));
        }
        Ok(self)
    }

    /// Fits on the label sequences of `corpus` with the vocabulary they use.
    pub fn fit<S: AsRef<str>>(corpus: &[Vec<S>], alpha: f64) -> Result<Self> {
        Self::fit_with_vocabulary(std::iter::empty::<&str>(), corpus, alpha)
    }

    /// Fits on `corpus` with `extra` labels added to the vocabulary, so labels
    /// that never occur still receive smoothed mass.
    ///
    /// Counts ordered transitions between adjacent segments, adds `alpha` to
    /// every cell of the vocabulary-squared table, and takes each label's
    /// marginal as the mean of its row and column mass.
    pub fn fit_with_vocabulary<S: AsRef<str>>(
        extra: impl IntoIterator<Item = impl AsRef<str>>,
        corpus: &[Vec<S>],
        alpha: f64,
    ) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidInput(format!("alpha must be >= 0, got {alpha}")));
        }
        if corpus.is_empty() {
            return Err(Error::InvalidInput("empty corpus".into()));
        }
        let vocab: BTreeSet<String> = corpus
            .iter()
            .flatten()
            .map(|l| l.as_ref().to_string())
            .chain(extra.into_iter().map(|l| l.as_ref().to_string()))
            .collect();
        let labels: Vec<String> = vocab.into_iter().collect();
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty label vocabulary".into()));
        }
        let lookup: HashMap<&str, usize> =
            labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();

        let mut counts = vec![0.0_f64; n * n];
        for seq in corpus {
            let mut prev: Option<usize> = None;
            for label in seq {
                let cur = lookup[label.as_ref()];
                if let Some(p) = prev {
                    if p != cur {
                        counts[p * n + cur] += 1.0;
                    }
                }
                prev = Some(cur);
            }
        }
        let total: f64 = counts.iter().sum::<f64>() + alpha * (n * n) as f64;
        if total <= 0.0 {
            return Err(Error::InvalidInput(
                "corpus has no transitions and alpha is 0".into(),
            ));
        }
        let joint: Vec<f64> = counts.iter().map(|c| (c + alpha) / total).collect();
        let marginal: Vec<f64> = (0..n)
            .map(|a| {
                let row: f64 = (0..n).map(|b| joint[a * n + b]).sum();
                let col: f64 = (0..n).map(|b| joint[b * n + a]).sum();
                (row + col) / 2.0
            })
            .collect();
        Self::from_tables(labels, joint, marginal, alpha)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.checked()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn position(&self, label: &str) -> Result<usize> {
        self.lookup
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn joint(&self, prev: &str, cur: &str) -> Result<f64> {
        let n = self.labels.len();
        Ok(self.joint[self.position(prev)? * n + self.position(cur)?])
    }

    pub fn marginal(&self, label: &str) -> Result<f64> {
        Ok(self.marginal[self.position(label)?])
    }

    pub fn npmi(&self, prev: &str, cur: &str) -> Result<f64> {
        Ok(npmi_from_probabilities(
            self.joint(prev, cur)?,
            self.marginal(prev)?,
            self.marginal(cur)?,
        ))
    }
}

/// `ln(p_ab / (p_a p_b)) / -ln(p_ab)`, clamped to [-1, 1]. A zero joint
/// probability is the never-co-occur limit -1, a joint of 1 the limit +1.
pub fn npmi_from_probabilities(p_ab: f64, p_a: f64, p_b: f64) -> f64 {
    if p_ab <= 0.0 {
        return -1.0;
    }
    if p_ab >= 1.0 {
        return 1.0;
    }
    let pmi = (p_ab / (p_a * p_b)).ln();
    (pmi / -p_ab.ln()).clamp(-1.0, 1.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionScale {
    /// `exp(-z^2 / 2)`, peak 1 at the segment centre.
    #[default]
    Normalized,
    /// The Gaussian density `exp(-z^2 / 2) / (sigma sqrt(2 pi))`.
    Density,
}

/// Gaussian reliability of frame `index` inside `segment`.
///
/// With `n = end - start`, `mu = start + n/2` and
/// `sigma = sqrt(sum (i - mu)^2 / n)`. Single-frame segments score 1.
pub fn position_score(segment: &ActionSegment, index: usize) -> Result<f64> {
    position_score_with(segment, index, PositionScale::Normalized)
}

pub fn position_score_with(
    segment: &ActionSegment,
    index: usize,
    scale: PositionScale,
) -> Result<f64> {
    if !segment.contains(index) {
        return Err(Error::Contract(format!(
            "frame {index} outside segment [{}, {}]",
            segment.start, segment.end
        )));
    }
    let n = segment.end - segment.start;
    if n == 0 {
        return Ok(1.0);
    }
    let mu = segment.start as f64 + n as f64 / 2.0;
    let ss: f64 = (segment.start..=segment.end)
        .map(|i| (i as f64 - mu).powi(2))
        .sum();
    let sigma = (ss / n as f64).sqrt();
    let z = (index as f64 - mu) / sigma;
    let shape = (-0.5 * z * z).exp();
    Ok(match scale {
        PositionScale::Normalized => shape,
        PositionScale::Density => shape / (sigma * (2.0 * std::f64::consts::PI).sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(labels: &[&str]) -> Vec<FrameRecord> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| FrameRecord::new(i, *l, 0.9, vec![1.0]))
            .collect()
    }

    fn seg(start: usize, end: usize) -> ActionSegment {
        ActionSegment {
            start,
            end,
            label: "a".into(),
        }
    }

    #[test]
    fn runs_of_labels() {
        let s = segment_runs(&frames(&["A", "A", "B"])).unwrap();
        assert_eq!(
            s,
            vec![
                ActionSegment { start: 0, end: 1, label: "A".into() },
                ActionSegment { start: 2, end: 2, label: "B".into() },
            ]
        );
        assert_eq!(segment_runs(&frames(&["A"])).unwrap().len(), 1);
        assert_eq!(segment_runs(&frames(&["A", "B", "A"])).unwrap().len(), 3);
        assert!(matches!(segment_runs(&[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn sequence_validation() {
        let mut seq = frames(&["A", "B"]);
        assert!(validate_sequence(&seq).is_ok());
        seq[1].index = 3;
        assert!(validate_sequence(&seq).is_err());
        let mut seq = frames(&["A", "B"]);
        seq[1].feature.push(0.0);
        assert!(validate_sequence(&seq).is_err());
        let mut seq = frames(&["A"]);
        seq[0].confidence = 1.2;
        assert!(validate_sequence(&seq).is_err());
    }

    #[test]
    fn fit_single_transition() {
        let m = CooccurrenceModel::fit(&[vec!["A", "A", "B"]], 0.0).unwrap();
        assert_eq!(m.joint("A", "B").unwrap(), 1.0);
        assert_eq!(m.joint("B", "A").unwrap(), 0.0);
        assert_eq!(m.marginal("A").unwrap(), 0.5);
        assert_eq!(m.marginal("B").unwrap(), 0.5);
    }

    #[test]
    fn fit_without_transitions_is_uniform() {
        let m = CooccurrenceModel::fit(&[vec!["A"], vec!["B"], vec!["C"]], 0.5).unwrap();
        for a in ["A", "B", "C"] {
            for b in ["A", "B", "C"] {
                assert!((m.joint(a, b).unwrap() - 1.0 / 9.0).abs() < 1e-15);
            }
        }
        assert!(CooccurrenceModel::fit(&[vec!["A"]], 0.0).is_err());
        assert!(CooccurrenceModel::fit::<&str>(&[], 0.5).is_err());
        assert!(CooccurrenceModel::fit::<&str>(&[vec![]], 0.5).is_err());
    }

    #[test]
    fn fit_is_invariant_to_corpus_duplication() {
        let corpus = vec![vec!["A", "A", "B", "C"], vec!["C", "A", "B"]];
        let doubled: Vec<_> = corpus.iter().chain(&corpus).cloned().collect();
        let once = CooccurrenceModel::fit(&corpus, 0.0).unwrap();
        let twice = CooccurrenceModel::fit(&doubled, 0.0).unwrap();
        for a in once.labels() {
            for b in once.labels() {
                let (x, y) = (once.joint(a, b).unwrap(), twice.joint(a, b).unwrap());
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn npmi_anchors() {
        assert!(npmi_from_probabilities(0.06, 0.2, 0.3).abs() < 1e-12);
        assert!((npmi_from_probabilities(0.25, 0.25, 0.25) - 1.0).abs() < 1e-12);
        let expected = 1.25_f64.ln() / 5.0_f64.ln();
        assert!((npmi_from_probabilities(0.2, 0.4, 0.4) - expected).abs() < 1e-12);
        assert!((expected - 0.1386).abs() < 1e-4);
        assert_eq!(npmi_from_probabilities(0.0, 0.3, 0.3), -1.0);
    }

    #[test]
    fn npmi_unknown_label() {
        let m = CooccurrenceModel::fit(&[vec!["A", "B"]], 0.5).unwrap();
        assert!(matches!(m.npmi("A", "Z"), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn model_json_round_trip() {
        let m = CooccurrenceModel::fit(&[vec!["A", "B", "C", "A"]], 0.5).unwrap();
        let back = CooccurrenceModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.npmi("A", "B").unwrap(), m.npmi("A", "B").unwrap());
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        for key in ["labels", "joint", "marginal", "alpha", "version"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn tables_must_normalize() {
        let labels = vec!["A".to_string(), "B".to_string()];
        assert!(CooccurrenceModel::from_tables(
            labels.clone(),
            vec![0.5, 0.5, 0.5, 0.0],
            vec![0.5, 0.5],
            0.0
        )
        .is_err());
        assert!(
            CooccurrenceModel::from_tables(labels, vec![0.25; 4], vec![0.5, 0.5], 0.0).is_ok()
        );
    }

    #[test]
    fn position_examples() {
        assert_eq!(position_score(&seg(0, 4), 2).unwrap(), 1.0);
        let edge = position_score(&seg(0, 4), 0).unwrap();
        assert!((edge - (-0.8_f64).exp()).abs() < 1e-12);
        assert!((edge - 0.4493).abs() < 1e-4);
        assert_eq!(position_score(&seg(7, 7), 7).unwrap(), 1.0);
        assert!(matches!(position_score(&seg(0, 4), 5), Err(Error::Contract(_))));
    }

    #[test]
    fn density_scale_keeps_the_raw_peak() {
        let s = seg(0, 4);
        let sigma = (10.0_f64 / 4.0).sqrt();
        let peak = position_score_with(&s, 2, PositionScale::Density).unwrap();
        assert!((peak - 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-12);
    }
}
