//! Frame accuracy, classification-level average precision and before/after
//! reports with a replayed update-threshold sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcs::{Criterion, UpdateOutcome};
use crate::features::FrameRecord;

pub fn frame_accuracy<P: AsRef<str>, T: AsRef<str>>(pred: &[P], truth: &[T]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput("no frames to score".into()));
    }
    let hits = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| p.as_ref() == t.as_ref())
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// All-point interpolated AP of `(confidence, is_correct)` pairs. Recall is
/// relative to the positives in the list; tied confidences form one
/// threshold. `None` when the list has no positive.
pub fn average_precision(scores: &[(f64, bool)]) -> Option<f64> {
    let positives = scores.iter().filter(|s| s.1).count();
    average_precision_of(scores, positives)
}

/// As [`average_precision`], with recall measured against `positives`
/// ground-truth items of which the list may retrieve only some.
pub fn average_precision_of(scores: &[(f64, bool)], positives: usize) -> Option<f64> {
    let retrieved = scores.iter().filter(|s| s.1).count();
    assert!(retrieved <= positives, "list holds more positives than exist");
    if positives == 0 {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < sorted.len() {
        let threshold = sorted[k].0;
        while k < sorted.len() && sorted[k].0 == threshold {
            if sorted[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / (tp + fp) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(recall, _)) in points.iter().enumerate() {
        let envelope = points[i..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (recall - prev_recall) * envelope;
        prev_recall = recall;
    }
    Some(ap)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub per_class: BTreeMap<String, f64>,
    /// Predicted classes that never occur in the ground truth.
    pub excluded: Vec<String>,
    pub mean: f64,
}

/// Frame mAP over `(predicted, confidence, truth)` triples. For each class,
/// the frames predicted as it are ranked by confidence and recall counts
/// every ground-truth frame of the class, so missed frames cap the AP. The
/// mean runs over classes present in the ground truth.
pub fn mean_ap<'a>(frames: impl IntoIterator<Item = (&'a str, f64, &'a str)>) -> MapSummary {
    let mut ranked: BTreeMap<&str, Vec<(f64, bool)>> = BTreeMap::new();
    let mut positives: BTreeMap<&str, usize> = BTreeMap::new();
    for (label, conf, truth) in frames {
        ranked.entry(label).or_default().push((conf, label == truth));
        *positives.entry(truth).or_default() += 1;
    }
    let mut summary = MapSummary::default();
    for (&label, &count) in &positives {
        let scores = ranked.get(label).map(Vec::as_slice).unwrap_or_default();
        let ap = average_precision_of(scores, count).expect("class has positives");
        summary.per_class.insert(label.to_string(), ap);
    }
    summary.excluded = ranked
        .keys()
        .filter(|l| !positives.contains_key(*l))
        .map(|l| l.to_string())
        .collect();
    if !summary.per_class.is_empty() {
        summary.mean = summary.per_class.values().sum::<f64>() / summary.per_class.len() as f64;
    }
    summary
}

/// One sequence as seen before and after updating, with its ground truth and
/// the update outcomes that produced `after`.
#[derive(Clone, Copy, Debug)]
pub struct Aligned<'a> {
    pub before: &'a [FrameRecord],
    pub after: &'a [FrameRecord],
    pub truth: &'a [String],
    pub outcomes: &'a [UpdateOutcome],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub criterion: Criterion,
    pub accepted: usize,
    pub frame_accuracy: f64,
    pub mean_ap: f64,
    pub repaired: usize,
    pub broken: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub frame_accuracy_before: f64,
    pub frame_accuracy_after: f64,
    pub ap_before: MapSummary,
    pub ap_after: MapSummary,
    pub mean_ap_before: f64,
    pub mean_ap_after: f64,
    /// Frames wrong before and right after.
    pub repaired: usize,
    /// Frames right before and wrong after.
    pub broken: usize,
    pub sweep: Vec<SweepRow>,
}

struct Tally {
    correct: usize,
    total: usize,
    map: MapSummary,
}

fn tally<'a>(frames: impl Iterator<Item = (&'a str, f64, &'a str)> + Clone) -> Tally {
    let total = frames.clone().count();
    let correct = frames.clone().filter(|(l, _, t)| l == t).count();
    let map = mean_ap(frames);
    Tally { correct, total, map }
}

fn check(item: &Aligned) -> Result<()> {
    let n = item.truth.len();
    for (name, len) in [("before", item.before.len()), ("after", item.after.len())] {
        if len != n {
            return Err(Error::InvalidInput(format!(
                "{name} stream has {len} frames, truth has {n}"
            )));
        }
    }
    for (b, a) in item.before.iter().zip(item.after) {
        if a.index != b.index {
            return Err(Error::InvalidInput(format!(
                "streams misaligned at frame {} vs {}",
                b.index, a.index
            )));
        }
    }
    Ok(())
}

fn repair_counts<'a>(
    pairs: impl Iterator<Item = (&'a str, &'a str, &'a str)>,
) -> (usize, usize) {
    pairs.fold((0, 0), |(r, b), (before, after, truth)| {
        match (before == truth, after == truth) {
            (false, true) => (r + 1, b),
            (true, false) => (r, b + 1),
            _ => (r, b),
        }
    })
}

/// Replays `outcomes` on `before` at margin `tau`: accepted frames take the
/// candidate label and the re-detection confidence.
pub fn replay(before: &[FrameRecord], outcomes: &[UpdateOutcome], tau: f64, criterion: Criterion) -> Vec<FrameRecord> {
    let mut out = before.to_vec();
    let Some(offset) = before.first().map(|f| f.index) else {
        return out;
    };
    for o in outcomes {
        if o.accepts(tau, criterion) {
            if let (Some(label), Some(c)) = (&o.candidate_label, o.c_hat) {
                if let Some(frame) = o.index.checked_sub(offset).and_then(|p| out.get_mut(p)) {
                    frame.label = label.clone();
                    frame.confidence = c;
                }
            }
        }
    }
    out
}

fn labeled<'a>(
    items: &'a [Aligned<'a>],
    pick: fn(&Aligned<'a>) -> &'a [FrameRecord],
) -> impl Iterator<Item = (&'a str, f64, &'a str)> + Clone + 'a {
    items.iter().flat_map(move |i| {
        pick(i)
            .iter()
            .zip(i.truth)
            .map(|(f, t)| (f.label.as_str(), f.confidence, t.as_str()))
    })
}

pub fn compare(items: &[Aligned], taus: &[f64]) -> Result<EvalReport> {
    for item in items {
        check(item)?;
    }
    let frames: usize = items.iter().map(|i| i.truth.len()).sum();
    if frames == 0 {
        return Err(Error::InvalidInput("no frames to compare".into()));
    }
    let before = tally(labeled(items, |i| i.before));
    let after = tally(labeled(items, |i| i.after));
    let (repaired, broken) = repair_counts(items.iter().flat_map(|i| {
        i.before
            .iter()
            .zip(i.after)
            .zip(i.truth)
            .map(|((b, a), t)| (b.label.as_str(), a.label.as_str(), t.as_str()))
    }));

    let mut sweep = Vec::new();
    for criterion in [Criterion::Effectiveness, Criterion::Confidence] {
        for &tau in taus {
            let replayed: Vec<Vec<FrameRecord>> = items
                .iter()
                .map(|i| replay(i.before, i.outcomes, tau, criterion))
                .collect();
            let accepted = items
                .iter()
                .flat_map(|i| i.outcomes)
                .filter(|o| o.accepts(tau, criterion))
                .count();
            let t = tally(items.iter().zip(&replayed).flat_map(|(i, r)| {
                r.iter()
                    .zip(i.truth)
                    .map(|(f, t)| (f.label.as_str(), f.confidence, t.as_str()))
            }));
            let (repaired, broken) = repair_counts(items.iter().zip(&replayed).flat_map(|(i, r)| {
                i.before
                    .iter()
                    .zip(r)
                    .zip(i.truth)
                    .map(|((b, a), t)| (b.label.as_str(), a.label.as_str(), t.as_str()))
            }));
            sweep.push(SweepRow {
                tau,
                criterion,
                accepted,
                frame_accuracy: t.correct as f64 / t.total as f64,
                mean_ap: t.map.mean,
                repaired,
                broken,
            });
        }
    }

    Ok(EvalReport {
        frames,
        frame_accuracy_before: before.correct as f64 / before.total as f64,
        frame_accuracy_after: after.correct as f64 / after.total as f64,
        mean_ap_before: before.map.mean,
        mean_ap_after: after.map.mean,
        ap_before: before.map,
        ap_after: after.map,
        repaired,
        broken,
        sweep,
    })
}

/// Plain-text rendering of a report.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "frames            {}", report.frames);
    let _ = writeln!(
        out,
        "frame accuracy    {:.4} -> {:.4}",
        report.frame_accuracy_before, report.frame_accuracy_after
    );
    let _ = writeln!(
        out,
        "mean AP           {:.4} -> {:.4}",
        report.mean_ap_before, report.mean_ap_after
    );
    let _ = writeln!(out, "repaired / broken {} / {}", report.repaired, report.broken);
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<24} {:>8} {:>8}", "class", "AP before", "AP after");
    let classes: std::collections::BTreeSet<&String> = report
        .ap_before
        .per_class
        .keys()
        .chain(report.ap_after.per_class.keys())
        .collect();
    for class in classes {
        let fmt = |m: &MapSummary| {
            m.per_class
                .get(class)
                .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
        };
        let _ = writeln!(
            out,
            "{:<24} {:>8} {:>8}",
            class,
            fmt(&report.ap_before),
            fmt(&report.ap_after)
        );
    }
    if !report.sweep.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>8} {:>9} {:>8} {:>8} {:>6}",
            "criterion", "tau", "accepted", "accuracy", "mean AP", "repaired", "broken"
        );
        for row in &report.sweep {
            let name = match row.criterion {
                Criterion::Effectiveness => "effectiveness",
                Criterion::Confidence => "confidence",
            };
            let _ = writeln!(
                out,
                "{:<14} {:>6.3} {:>8} {:>9.4} {:>8.4} {:>8} {:>6}",
                name, row.tau, row.accepted, row.frame_accuracy, row.mean_ap, row.repaired, row.broken
            );
        }
    }
    out
}
