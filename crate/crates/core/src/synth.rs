//! Seeded synthetic detection streams with injected abnormalities.
//!
//! Ground truth is a Markov chain over action segments with geometric dwell
//! times. Each frame carries its true class prototype plus Gaussian noise.
//! The detector view then flips frames of similar action pairs and inserts
//! single-frame actions that rarely follow the current one; both kinds get
//! confidence from the depressed band, clean frames from the upper band.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FrameRecord;

const WORLD_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_labels: usize,
    pub feature_dim: usize,
    /// Mean segment length in frames.
    pub dwell: f64,
    /// Row-stochastic label transition matrix; drawn from the seed when absent.
    pub transition: Option<Vec<Vec<f64>>>,
    pub noise_sigma: f64,
    pub flip_rate: f64,
    pub spur_rate: f64,
    pub similar_pairs: Vec<(usize, usize)>,
    /// Cosine between the prototypes of a similar pair.
    pub similar_affinity: f64,
    /// Weight factor of a similar partner as successor in a drawn transition
    /// matrix.
    pub partner_transition: f64,
    /// Keep only this many most likely successors per label in a drawn
    /// transition matrix; all are kept when absent.
    pub successors: Option<usize>,
    pub num_sequences: usize,
    pub sequence_length: usize,
    /// Clean label sequences drawn from the same chain, for fitting statistics.
    pub num_train_sequences: usize,
    pub clean_confidence: (f64, f64),
    pub corrupt_confidence: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_labels: 8,
            feature_dim: 16,
            dwell: 12.0,
            transition: None,
            noise_sigma: 0.35,
            flip_rate: 0.15,
            spur_rate: 0.0,
            similar_pairs: vec![(0, 1), (2, 3)],
            similar_affinity: 0.8,
            partner_transition: 0.02,
            successors: None,
            num_sequences: 200,
            sequence_length: 100,
            num_train_sequences: 200,
            clean_confidence: (0.6, 1.0),
            corrupt_confidence: (0.3, 0.6),
            seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    None,
    Flip,
    Spurious,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSequence {
    pub id: String,
    pub frames: Vec<FrameRecord>,
    pub truth: Vec<String>,
    pub corruption: Vec<Corruption>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub labels: Vec<String>,
    pub prototypes: Vec<Vec<f64>>,
    pub transition: Vec<Vec<f64>>,
    pub sequences: Vec<SynthSequence>,
    pub training: Vec<Vec<String>>,
}

pub fn label_name(k: usize) -> String {
    format!("action_{k}")
}

fn check_rate(name: &str, r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} = {r} outside [0, 1]")))
    }
}

fn check_band(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if 0.0 <= lo && lo <= hi && hi <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} band ({lo}, {hi}) is not inside [0, 1]")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_labels < 2 {
            return Err(Error::InvalidInput("need at least two labels".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidInput("feature_dim must be positive".into()));
        }
        if !(self.dwell >= 1.0 && self.dwell.is_finite()) {
            return Err(Error::InvalidInput(format!("dwell {} must be >= 1", self.dwell)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidInput("noise_sigma must be >= 0".into()));
        }
        check_rate("flip_rate", self.flip_rate)?;
        check_rate("spur_rate", self.spur_rate)?;
        check_rate("similar_affinity", self.similar_affinity)?;
        check_rate("partner_transition", self.partner_transition)?;
        check_band("clean_confidence", self.clean_confidence)?;
        check_band("corrupt_confidence", self.corrupt_confidence)?;
        let mut seen = vec![false; self.num_labels];
        for &(a, b) in &self.similar_pairs {
            if a >= self.num_labels || b >= self.num_labels || a == b {
                return Err(Error::InvalidInput(format!("invalid similar pair ({a}, {b})")));
            }
            if seen[a] || seen[b] {
                return Err(Error::InvalidInput(format!(
                    "label in more than one similar pair: ({a}, {b})"
                )));
            }
            seen[a] = true;
            seen[b] = true;
        }
        if let Some(t) = &self.transition {
            check_stochastic(t, self.num_labels)?;
        }
        Ok(())
    }

    fn partner(&self, label: usize) -> Option<usize> {
        self.similar_pairs.iter().find_map(|&(a, b)| match label {
            l if l == a => Some(b),
            l if l == b => Some(a),
            _ => None,
        })
    }
}

fn check_stochastic(t: &[Vec<f64>], n: usize) -> Result<()> {
    if t.len() != n || t.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidInput(format!("transition matrix must be {n}x{n}")));
    }
    for (a, row) in t.iter().enumerate() {
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidInput(format!("row {a} has a negative entry")));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("row {a} sums to {total}")));
        }
    }
    Ok(())
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn draw_prototypes(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut protos: Vec<Vec<f64>> = (0..cfg.num_labels)
        .map(|_| {
            let mut v = gaussian_vector(rng, cfg.feature_dim);
            normalize(&mut v);
            v
        })
        .collect();
    let s = cfg.similar_affinity;
    for &(a, b) in &cfg.similar_pairs {
        // component of a random direction orthogonal to prototype a
        let mut orth = gaussian_vector(rng, cfg.feature_dim);
        let dot: f64 = orth.iter().zip(&protos[a]).map(|(x, y)| x * y).sum();
        orth.iter_mut().zip(&protos[a]).for_each(|(o, p)| *o -= dot * p);
        normalize(&mut orth);
        let r = (1.0 - s * s).sqrt();
        protos[b] = protos[a]
            .iter()
            .zip(&orth)
            .map(|(p, o)| s * p + r * o)
            .collect();
    }
    protos
}

/// Random successor weights with the similar partner strongly suppressed.
fn draw_transition(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..cfg.num_labels)
        .map(|a| {
            let mut row: Vec<f64> = (0..cfg.num_labels)
                .map(|b| {
                    let w: f64 = rng.random_range(0.05..1.0);
                    if b == a {
                        0.0
                    } else if cfg.partner(a) == Some(b) {
                        cfg.partner_transition * w
                    } else {
                        w * w
                    }
                })
                .collect();
            if let Some(k) = cfg.successors {
                let mut order: Vec<usize> = (0..row.len()).collect();
                order.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
                for &b in &order[k.max(1)..] {
                    row[b] = 0.0;
                }
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
            row
        })
        .collect()
}

fn draw_labels(
    cfg: &SynthConfig,
    transition: &[WeightedIndex<f64>],
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let dwell = Geometric::new(1.0 / cfg.dwell).expect("dwell validated");
    let mut labels = Vec::with_capacity(cfg.sequence_length);
    let mut current = rng.random_range(0..cfg.num_labels);
    while labels.len() < cfg.sequence_length {
        let run = 1 + dwell.sample(rng) as usize;
        let take = run.min(cfg.sequence_length - labels.len());
        labels.extend(std::iter::repeat_n(current, take));
        current = transition[current].sample(rng);
    }
    labels
}

/// Labels that rarely follow `truth`: the lowest third of its successors,
/// excluding its similar partner.
fn spurious_candidates(cfg: &SynthConfig, transition: &[Vec<f64>], truth: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..cfg.num_labels)
        .filter(|&b| b != truth && cfg.partner(truth) != Some(b))
        .collect();
    if others.is_empty() {
        others = (0..cfg.num_labels).filter(|&b| b != truth).collect();
    }
    others.sort_by(|&x, &y| transition[truth][x].total_cmp(&transition[truth][y]).then(x.cmp(&y)));
    let keep = others.len().div_ceil(3).max(1);
    others.truncate(keep);
    others
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut world = ChaCha8Rng::seed_from_u64(cfg.seed);
    world.set_stream(WORLD_STREAM);
    let prototypes = draw_prototypes(cfg, &mut world);
    let transition = match &cfg.transition {
        Some(t) => t.clone(),
        None => draw_transition(cfg, &mut world),
    };
    let samplers = transition
        .iter()
        .enumerate()
        .map(|(a, row)| {
            WeightedIndex::new(row)
                .map_err(|e| Error::InvalidInput(format!("transition row {a}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = (0..cfg.num_labels).map(label_name).collect();
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
    let spurious: Vec<Vec<usize>> = (0..cfg.num_labels)
        .map(|a| spurious_candidates(cfg, &transition, a))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TEST_STREAM);
    let mut sequences = Vec::with_capacity(cfg.num_sequences);
    for s in 0..cfg.num_sequences {
        let truth = draw_labels(cfg, &samplers, &mut rng);
        let mut frames = Vec::with_capacity(truth.len());
        let mut corruption = Vec::with_capacity(truth.len());
        for (i, &t) in truth.iter().enumerate() {
            // fixed draw order per frame keeps streams aligned across rates
            let feature: Vec<f64> = prototypes[t]
                .iter()
                .map(|p| p + noise.sample(&mut rng))
                .collect();
            let flip_draw: f64 = rng.random();
            let spur_draw: f64 = rng.random();
            let conf_draw: f64 = rng.random();
            let pick_draw: f64 = rng.random();

            let prev_spurious = corruption.last() == Some(&Corruption::Spurious);
            let (label, kind) = match cfg.partner(t) {
                Some(p) if flip_draw < cfg.flip_rate => (p, Corruption::Flip),
                _ if !prev_spurious && spur_draw < cfg.spur_rate => {
                    let pool = &spurious[t];
                    let k = ((pick_draw * pool.len() as f64) as usize).min(pool.len() - 1);
                    (pool[k], Corruption::Spurious)
                }
                _ => (t, Corruption::None),
            };
            let (lo, hi) = if kind == Corruption::None {
                cfg.clean_confidence
            } else {
                cfg.corrupt_confidence
            };
            let confidence = lo + (hi - lo) * conf_draw;
            frames.push(FrameRecord::new(i, labels[label].clone(), confidence, feature));
            corruption.push(kind);
        }
        sequences.push(SynthSequence {
            id: format!("seq_{s:04}"),
            frames,
            truth: truth.iter().map(|&t| labels[t].clone()).collect(),
            corruption,
        });
    }

    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    train_rng.set_stream(TRAIN_STREAM);
    let training = (0..cfg.num_train_sequences)
        .map(|_| {
            draw_labels(cfg, &samplers, &mut train_rng)
                .into_iter()
                .map(|t| labels[t].clone())
                .collect()
        })
        .collect();

    Ok(SynthCorpus {
        labels,
        prototypes,
        transition,
        sequences,
        training,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(flip: f64, spur: f64) -> SynthConfig {
        SynthConfig {
            num_sequences: 6,
            sequence_length: 40,
            num_train_sequences: 3,
            flip_rate: flip,
            spur_rate: spur,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_rates_leave_labels_clean() {
        let corpus = generate(&small(0.0, 0.0)).unwrap();
        for seq in &corpus.sequences {
            let labels: Vec<_> = seq.frames.iter().map(|f| f.label.clone()).collect();
            assert_eq!(labels, seq.truth);
            assert!(seq.frames.iter().all(|f| f.confidence >= 0.6));
        }
    }

    #[test]
    fn drawn_transitions_respect_successor_cap_and_partner_weight() {
        let cfg = SynthConfig { successors: Some(2), partner_transition: 0.0, ..small(0.0, 0.0) };
        let t = generate(&cfg).unwrap().transition;
        for (a, row) in t.iter().enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(row[a], 0.0);
            assert!(row.iter().filter(|p| **p > 0.0).count() <= 2);
            if let Some(b) = cfg.partner(a) {
                assert_eq!(row[b], 0.0);
            }
        }
        assert!(SynthConfig { partner_transition: 1.5, ..small(0.0, 0.0) }.validate().is_err());
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = small(0.2, 0.05);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 8, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap().sequences, generate(&other).unwrap().sequences);
    }

    #[test]
    fn full_flip_rate_swaps_every_pair_frame() {
        let cfg = SynthConfig {
            similar_pairs: vec![(0, 1)],
            ..small(1.0, 0.0)
        };
        let corpus = generate(&cfg).unwrap();
        for seq in &corpus.sequences {
            for (f, t) in seq.frames.iter().zip(&seq.truth) {
                match t.as_str() {
                    "action_0" => assert_eq!(f.label, "action_1"),
                    "action_1" => assert_eq!(f.label, "action_0"),
                    _ => assert_eq!(&f.label, t),
                }
            }
        }
    }

    #[test]
    fn rates_share_features() {
        let a = generate(&small(0.0, 0.0)).unwrap();
        let b = generate(&small(0.3, 0.1)).unwrap();
        for (x, y) in a.sequences.iter().zip(&b.sequences) {
            assert_eq!(x.truth, y.truth);
            for (fx, fy) in x.frames.iter().zip(&y.frames) {
                assert_eq!(fx.feature, fy.feature);
            }
        }
    }

    #[test]
    fn spurious_frames_are_isolated_and_rare() {
        let cfg = small(0.0, 0.3);
        let corpus = generate(&cfg).unwrap();
        let mut count = 0;
        for seq in &corpus.sequences {
            for w in seq.corruption.windows(2) {
                assert!(!(w[0] == Corruption::Spurious && w[1] == Corruption::Spurious));
            }
            for (k, c) in seq.corruption.iter().enumerate() {
                if *c == Corruption::Spurious {
                    count += 1;
                    let t: usize = seq.truth[k]["action_".len()..].parse().unwrap();
                    let s: usize = seq.frames[k].label["action_".len()..].parse().unwrap();
                    let row = &corpus.transition[t];
                    let better = row.iter().enumerate().filter(|&(b, p)| b != t && *p > row[s]).count();
                    assert!(better >= 3, "spurious label is a common successor");
                }
            }
        }
        assert!(count > 0);
    }

    #[test]
    fn similar_prototypes_have_requested_affinity() {
        let corpus = generate(&small(0.0, 0.0)).unwrap();
        let dot: f64 = corpus.prototypes[0].iter().zip(&corpus.prototypes[1]).map(|(a, b)| a * b).sum();
        assert!((dot - 0.8).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let bad = SynthConfig {
            transition: Some(vec![vec![0.5, 0.4], vec![0.5, 0.5]]),
            num_labels: 2,
            similar_pairs: vec![],
            ..SynthConfig::default()
        };
        assert!(generate(&bad).is_err());
        assert!(generate(&SynthConfig { flip_rate: 1.5, ..SynthConfig::default() }).is_err());
        assert!(generate(&SynthConfig { similar_pairs: vec![(0, 9)], ..SynthConfig::default() }).is_err());
    }
}
