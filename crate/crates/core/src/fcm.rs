//! Cognitive effectiveness evaluation: assemble `(C, N, G)` per frame, infer
//! the effectiveness `u` and split frames into high- and low-cognition sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    position_score_with, segment_labels, validate_sequence, ActionSegment, CooccurrenceModel,
    FrameRecord, PositionScale,
};
use crate::fuzzy::{Engine, RuleBase};
use crate::rules::{self, DEFAULT_MU1, DEFAULT_MU2};

pub const DEFAULT_DELTA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    High,
    Low,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CognitionRecord {
    pub index: usize,
    pub label: String,
    pub c: f64,
    pub n: f64,
    pub g: f64,
    pub u: f64,
    pub level: Level,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureTriple {
    pub c: f64,
    pub n: f64,
    pub g: f64,
}

#[derive(Clone, Debug)]
pub struct FcmConfig {
    pub delta: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub rulebase: RuleBase,
    pub cooccurrence: CooccurrenceModel,
    pub position_scale: PositionScale,
}

impl FcmConfig {
    /// Default threshold and weights with the shipped rule base.
    pub fn new(cooccurrence: CooccurrenceModel) -> Self {
        Self {
            delta: DEFAULT_DELTA,
            mu1: DEFAULT_MU1,
            mu2: DEFAULT_MU2,
            rulebase: rules::shipped_rulebase(),
            cooccurrence,
            position_scale: PositionScale::Normalized,
        }
    }
}

/// Validated evaluator; immutable and shareable across threads.
#[derive(Clone, Debug)]
pub struct Fcm {
    engine: Engine,
    cooccurrence: CooccurrenceModel,
    delta: f64,
    position_scale: PositionScale,
}

impl Fcm {
    pub fn new(cfg: FcmConfig) -> Result<Self> {
        let engine = Engine::standard(cfg.rulebase);
        let uni = engine.output().universe();
        if !(uni.lower()..=uni.upper()).contains(&cfg.delta) {
            return Err(Error::InvalidInput(format!(
                "delta {} outside the effectiveness universe",
                cfg.delta
            )));
        }
        if !(cfg.mu1 >= 0.0 && cfg.mu2 >= 0.0 && cfg.mu1 + cfg.mu2 <= 1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "weights need mu1, mu2 >= 0 and mu1 + mu2 <= 1, got ({}, {})",
                cfg.mu1, cfg.mu2
            )));
        }
        Ok(Self {
            engine,
            cooccurrence: cfg.cooccurrence,
            delta: cfg.delta,
            position_scale: cfg.position_scale,
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn cooccurrence(&self) -> &CooccurrenceModel {
        &self.cooccurrence
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Effectiveness of one feature triple. A rule base with no active rule
    /// falls back to the confidence itself.
    pub fn effectiveness(&self, t: FeatureTriple) -> Result<f64> {
        match self.engine.infer(t.c, t.n, t.g) {
            Err(Error::NoActiveRules) => Ok(t.c),
            other => other,
        }
    }

    fn segment_features(&self, prev: Option<&ActionSegment>, seg: &ActionSegment, index: usize) -> Result<(f64, f64)> {
        let n = match prev {
            Some(p) => self.cooccurrence.npmi(&p.label, &seg.label)?,
            None => 0.0,
        };
        let g = position_score_with(seg, index, self.position_scale)?;
        Ok((n, g))
    }

    /// `(N, G)` of position `pos` in `labels`, from the run containing it.
    pub fn context_features<S: AsRef<str>>(&self, labels: &[S], pos: usize) -> Result<(f64, f64)> {
        let label = labels[pos].as_ref();
        let start = (0..pos)
            .rev()
            .find(|&k| labels[k].as_ref() != label)
            .map_or(0, |k| k + 1);
        let end = (pos + 1..labels.len())
            .find(|&k| labels[k].as_ref() != label)
            .map_or(labels.len() - 1, |k| k - 1);
        let seg = ActionSegment {
            start,
            end,
            label: label.to_string(),
        };
        let prev = (start > 0).then(|| ActionSegment {
            start: start - 1,
            end: start - 1,
            label: labels[start - 1].as_ref().to_string(),
        });
        self.segment_features(prev.as_ref(), &seg, pos)
    }

    /// Feature triples for every frame, in order.
    pub fn features(&self, sequence: &[FrameRecord]) -> Result<Vec<FeatureTriple>> {
        validate_sequence(sequence)?;
        let labels: Vec<&str> = sequence.iter().map(|f| f.label.as_str()).collect();
        // positions, not frame indices, so segment bounds index `sequence`
        let segments = segment_labels(&labels, 0)?;
        let mut out = Vec::with_capacity(sequence.len());
        for (k, seg) in segments.iter().enumerate() {
            let prev = k.checked_sub(1).map(|p| &segments[p]);
            for pos in seg.start..=seg.end {
                let (n, g) = self
                    .segment_features(prev, seg, pos)
                    .map_err(|e| e.at_frame(sequence[pos].index))?;
                out.push(FeatureTriple {
                    c: sequence[pos].confidence,
                    n,
                    g,
                });
            }
        }
        Ok(out)
    }

    pub fn evaluate(&self, sequence: &[FrameRecord]) -> Result<Vec<CognitionRecord>> {
        let triples = self.features(sequence)?;
        sequence
            .iter()
            .zip(triples)
            .map(|(frame, t)| {
                let u = self.effectiveness(t).map_err(|e| e.at_frame(frame.index))?;
                Ok(CognitionRecord {
                    index: frame.index,
                    label: frame.label.clone(),
                    c: t.c,
                    n: t.n,
                    g: t.g,
                    u,
                    level: if u >= self.delta { Level::High } else { Level::Low },
                })
            })
            .collect()
    }
}

/// Frame indices with `u >= delta` and the rest.
pub fn partition(records: &[CognitionRecord], delta: f64) -> (Vec<usize>, Vec<usize>) {
    let (high, low): (Vec<_>, Vec<_>) = records.iter().partition(|r| r.u >= delta);
    (
        high.into_iter().map(|r| r.index).collect(),
        low.into_iter().map(|r| r.index).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzzy::{Rule, Term};

    fn record(index: usize, u: f64) -> CognitionRecord {
        CognitionRecord {
            index,
            label: "a".into(),
            c: 0.5,
            n: 0.0,
            g: 1.0,
            u,
            level: Level::High,
        }
    }

    fn model() -> CooccurrenceModel {
        CooccurrenceModel::fit(&[vec!["A", "B", "A", "C", "B", "C", "A"]], 0.5).unwrap()
    }

    fn seq(labels: &[&str], conf: &[f64]) -> Vec<FrameRecord> {
        labels
            .iter()
            .zip(conf)
            .enumerate()
            .map(|(i, (l, c))| FrameRecord::new(i, *l, *c, vec![1.0, 0.0]))
            .collect()
    }

    #[test]
    fn partition_threshold() {
        let recs = vec![record(0, 0.8), record(1, 0.3)];
        assert_eq!(partition(&recs, 0.5), (vec![0], vec![1]));
        assert_eq!(partition(&recs, 0.0).1, Vec::<usize>::new());
        assert_eq!(partition(&[record(4, 0.5)], 0.5), (vec![4], vec![]));
    }

    #[test]
    fn single_frame_all_max() {
        let fcm = Fcm::new(FcmConfig::new(model())).unwrap();
        let recs = fcm.evaluate(&seq(&["A"], &[1.0])).unwrap();
        let r = &recs[0];
        assert_eq!((r.c, r.n, r.g), (1.0, 0.0, 1.0));
        assert_eq!(r.u, fcm.engine().infer(1.0, 0.0, 1.0).unwrap());
        assert_eq!(r.level, Level::High);
    }

    #[test]
    fn evaluate_is_deterministic_and_framewise() {
        let fcm = Fcm::new(FcmConfig::new(model())).unwrap();
        let s = seq(&["A", "A", "B", "B", "B", "A"], &[0.9, 0.7, 0.4, 0.8, 0.95, 0.3]);
        let a = fcm.evaluate(&s).unwrap();
        assert_eq!(a, fcm.evaluate(&s).unwrap());
        for (pos, r) in a.iter().enumerate() {
            let (n, g) = fcm.context_features(&s.iter().map(|f| &f.label).collect::<Vec<_>>(), pos).unwrap();
            assert_eq!((r.n, r.g), (n, g));
            assert_eq!(r.u, fcm.engine().infer(r.c, r.n, r.g).unwrap());
        }
        assert_eq!(a[0].n, 0.0);
        assert_eq!(a[2].n, model().npmi("A", "B").unwrap());
    }

    #[test]
    fn empty_rulebase_falls_back_to_confidence() {
        let mut cfg = FcmConfig::new(model());
        cfg.rulebase = RuleBase::new(vec![Rule::new("R", Term::PB, Term::PB, Term::PB, Term::PB)]);
        let fcm = Fcm::new(cfg).unwrap();
        let recs = fcm.evaluate(&seq(&["A", "B"], &[0.2, 0.4])).unwrap();
        assert_eq!(recs[0].u, 0.2);
        assert_eq!(recs[1].u, 0.4);
    }

    #[test]
    fn unknown_label_carries_frame_index() {
        let fcm = Fcm::new(FcmConfig::new(model())).unwrap();
        let err = fcm.evaluate(&seq(&["A", "Q"], &[0.9, 0.9])).unwrap_err();
        assert!(matches!(err, Error::AtFrame { index: 1, .. }), "{err}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = FcmConfig::new(model());
        cfg.delta = 1.5;
        assert!(Fcm::new(cfg).is_err());
        let mut cfg = FcmConfig::new(model());
        cfg.mu1 = 0.9;
        assert!(Fcm::new(cfg).is_err());
    }
}
