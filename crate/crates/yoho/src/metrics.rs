//! Segment-based evaluation.
//!
//! Reference and estimated event lists are rasterized onto a fixed segment
//! grid; true/false positives and negatives are counted per (segment,
//! class) cell and micro-averaged. The error rate decomposes per-segment
//! mistakes into substitutions, deletions, and insertions:
//! `S_k = min(FN_k, FP_k)`, `D_k = max(0, FN_k - FP_k)`,
//! `I_k = max(0, FP_k - FN_k)`, normalized by the count of active
//! reference cells.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::labels::Event;

/// Activity raster: `segments x classes` booleans.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityMatrix {
    pub classes: Vec<String>,
    pub n_segments: usize,
    cells: Vec<bool>,
}

impl ActivityMatrix {
    #[inline]
    pub fn active(&self, segment: usize, class_idx: usize) -> bool {
        self.cells[segment * self.classes.len() + class_idx]
    }
}

/// Rasterize events: cell `(k, c)` is active when a class-`c` event
/// overlaps `[k*s, (k+1)*s)` with nonzero length.
pub fn segmentize(
    events: &[Event],
    segment_size: f64,
    total_duration: f64,
    classes: &[String],
) -> ActivityMatrix {
    assert!(segment_size > 0.0, "segment size must be positive");
    let n_segments = (total_duration / segment_size).ceil() as usize;
    let mut cells = vec![false; n_segments * classes.len()];
    for ev in events {
        let Some(ci) = classes.iter().position(|c| c == &ev.class_name) else {
            continue;
        };
        if ev.offset <= ev.onset {
            continue;
        }
        let first = (ev.onset / segment_size).floor() as usize;
        let last = (ev.offset / segment_size).ceil() as usize;
        for k in first..last.min(n_segments) {
            let seg_start = k as f64 * segment_size;
            let seg_end = seg_start + segment_size;
            if ev.onset < seg_end && ev.offset > seg_start {
                cells[k * classes.len() + ci] = true;
            }
        }
    }
    ActivityMatrix {
        classes: classes.to_vec(),
        n_segments,
        cells,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub false_neg: u64,
}

impl ClassCounts {
    pub fn f_measure(&self) -> f64 {
        let p_den = self.tp + self.fp;
        let r_den = self.tp + self.false_neg;
        if p_den + r_den == 0 {
            return 0.0;
        }
        2.0 * self.tp as f64 / (p_den + r_den) as f64
    }
}

/// Micro-averaged cell counts, accumulable across files.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SegmentCounts {
    pub tp: u64,
    pub fp: u64,
    pub false_neg: u64,
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
    /// Total active reference cells.
    pub n_ref: u64,
    pub per_class: BTreeMap<String, ClassCounts>,
}

/// Classes observed in either list, sorted and deduplicated.
pub fn observed_classes(reference: &[Event], estimate: &[Event]) -> Vec<String> {
    let mut classes: Vec<String> = reference
        .iter()
        .chain(estimate.iter())
        .map(|e| e.class_name.clone())
        .collect();
    classes.sort();
    classes.dedup();
    classes
}

// Largest offset in either list, rounded up to a whole segment.
fn implied_duration(reference: &[Event], estimate: &[Event], segment_size: f64) -> f64 {
    let max_offset = reference
        .iter()
        .chain(estimate.iter())
        .map(|e| e.offset)
        .fold(0.0f64, f64::max);
    (max_offset / segment_size).ceil() * segment_size
}

impl SegmentCounts {
    /// Count one file pair. `total_duration` defaults to the largest offset
    /// in either list, rounded up to a whole segment.
    pub fn from_lists(
        reference: &[Event],
        estimate: &[Event],
        segment_size: f64,
        total_duration: Option<f64>,
    ) -> Self {
        let classes = observed_classes(reference, estimate);
        let duration =
            total_duration.unwrap_or_else(|| implied_duration(reference, estimate, segment_size));
        let ref_m = segmentize(reference, segment_size, duration, &classes);
        let est_m = segmentize(estimate, segment_size, duration, &classes);

        let mut counts = SegmentCounts::default();
        for class in &classes {
            counts.per_class.insert(class.clone(), ClassCounts::default());
        }
        for k in 0..ref_m.n_segments {
            let mut seg_fn = 0u64;
            let mut seg_fp = 0u64;
            let mut seg_n = 0u64;
            for (ci, class) in classes.iter().enumerate() {
                let r = ref_m.active(k, ci);
                let e = est_m.active(k, ci);
                let slot = counts.per_class.get_mut(class).unwrap();
                match (r, e) {
                    (true, true) => {
                        counts.tp += 1;
                        slot.tp += 1;
                    }
                    (false, true) => {
                        counts.fp += 1;
                        slot.fp += 1;
                        seg_fp += 1;
                    }
                    (true, false) => {
                        counts.false_neg += 1;
                        slot.false_neg += 1;
                        seg_fn += 1;
                    }
                    (false, false) => {}
                }
                if r {
                    seg_n += 1;
                }
            }
            counts.substitutions += seg_fn.min(seg_fp);
            counts.deletions += seg_fn.saturating_sub(seg_fp);
            counts.insertions += seg_fp.saturating_sub(seg_fn);
            counts.n_ref += seg_n;
        }
        counts
    }

    /// Fold another file's counts into this one (micro averaging).
    pub fn merge(&mut self, other: &SegmentCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.false_neg += other.false_neg;
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.n_ref += other.n_ref;
        for (class, c) in &other.per_class {
            let slot = self.per_class.entry(class.clone()).or_default();
            slot.tp += c.tp;
            slot.fp += c.fp;
            slot.false_neg += c.false_neg;
        }
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.false_neg == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.false_neg) as f64
        }
    }

    pub fn f_measure(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// `(S + D + I) / N`. With no active reference cells this is 0 when
    /// there are no insertions and +infinity otherwise.
    pub fn error_rate(&self) -> f64 {
        let errors = self.substitutions + self.deletions + self.insertions;
        if self.n_ref == 0 {
            if errors == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            errors as f64 / self.n_ref as f64
        }
    }

    pub fn report(&self, segment_size: f64) -> MetricsReport {
        MetricsReport {
            segment_size,
            precision: self.precision(),
            recall: self.recall(),
            f_measure: self.f_measure(),
            error_rate: self.error_rate(),
            substitutions: self.substitutions,
            deletions: self.deletions,
            insertions: self.insertions,
            n_ref: self.n_ref,
            per_class_f: self
                .per_class
                .iter()
                .map(|(c, counts)| (c.clone(), counts.f_measure()))
                .collect(),
        }
    }
}

/// Micro-averaged precision, recall, and F-measure for one file pair.
pub fn segment_f1(
    reference: &[Event],
    estimate: &[Event],
    segment_size: f64,
    total_duration: Option<f64>,
) -> (f64, f64, f64) {
    let c = SegmentCounts::from_lists(reference, estimate, segment_size, total_duration);
    (c.precision(), c.recall(), c.f_measure())
}

/// Error rate with its decomposition `(ER, S, D, I, N)`.
pub fn error_rate(
    reference: &[Event],
    estimate: &[Event],
    segment_size: f64,
    total_duration: Option<f64>,
) -> (f64, u64, u64, u64, u64) {
    let c = SegmentCounts::from_lists(reference, estimate, segment_size, total_duration);
    (
        c.error_rate(),
        c.substitutions,
        c.deletions,
        c.insertions,
        c.n_ref,
    )
}

/// Per-class F-measures. Classes absent from both lists are not reported.
pub fn class_wise_f1(
    reference: &[Event],
    estimate: &[Event],
    segment_size: f64,
    total_duration: Option<f64>,
) -> BTreeMap<String, f64> {
    SegmentCounts::from_lists(reference, estimate, segment_size, total_duration)
        .per_class
        .into_iter()
        .map(|(c, counts)| (c, counts.f_measure()))
        .collect()
}

/// Evaluation summary for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub segment_size: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub error_rate: f64,
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
    pub n_ref: u64,
    pub per_class_f: BTreeMap<String, f64>,
}

impl MetricsReport {
    /// `key=value` lines; precision/recall/F as percentages with two
    /// decimals, the error rate as a plain ratio.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("segment_size={}\n", self.segment_size));
        out.push_str(&format!("overall_precision={:.2}\n", self.precision * 100.0));
        out.push_str(&format!("overall_recall={:.2}\n", self.recall * 100.0));
        out.push_str(&format!("overall_f_measure={:.2}\n", self.f_measure * 100.0));
        out.push_str(&format!("error_rate={:.2}\n", self.error_rate));
        out.push_str(&format!("substitutions={}\n", self.substitutions));
        out.push_str(&format!("deletions={}\n", self.deletions));
        out.push_str(&format!("insertions={}\n", self.insertions));
        out.push_str(&format!("n_ref={}\n", self.n_ref));
        for (class, f) in &self.per_class_f {
            out.push_str(&format!("class_f.{}={:.2}\n", class, f * 100.0));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::EventList;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn ev(class: &str, onset: f64, offset: f64) -> Event {
        Event::new(class, onset, offset)
    }

    #[test]
    fn segmentize_basic_row_pattern() {
        let m = segmentize(&[ev("a", 0.0, 1.0)], 1.0, 3.0, &["a".to_string()]);
        assert_eq!(m.n_segments, 3);
        assert_eq!(
            (m.active(0, 0), m.active(1, 0), m.active(2, 0)),
            (true, false, false)
        );
    }

    #[test]
    fn segmentize_straddling_event_activates_both() {
        let m = segmentize(&[ev("a", 0.999, 1.001)], 1.0, 3.0, &["a".to_string()]);
        assert!(m.active(0, 0) && m.active(1, 0) && !m.active(2, 0));
    }

    #[test]
    fn zero_length_boundary_intersection_is_inactive() {
        let m = segmentize(&[ev("a", 1.0, 2.0)], 1.0, 3.0, &["a".to_string()]);
        assert!(!m.active(0, 0), "touching a span boundary does not activate");
        assert!(m.active(1, 0) && !m.active(2, 0));
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let reference = vec![ev("music", 0.2, 4.3), ev("speech", 3.6, 6.0)];
        for seg in [0.01, 1.0] {
            let (p, r, f) = segment_f1(&reference, &reference, seg, Some(8.0));
            assert_eq!((p, r, f), (1.0, 1.0, 1.0), "segment size {seg}");
            let (er, ..) = error_rate(&reference, &reference, seg, Some(8.0));
            assert_eq!(er, 0.0);
        }
    }

    #[test]
    fn empty_estimate_scores_zero_f_and_unit_error_rate() {
        let reference = vec![ev("music", 0.0, 5.0)];
        let (_, r, f) = segment_f1(&reference, &[], 1.0, Some(5.0));
        assert_eq!((r, f), (0.0, 0.0));
        let (er, s, d, i, n) = error_rate(&reference, &[], 1.0, Some(5.0));
        assert_eq!(er, 1.0, "every active segment is a deletion");
        assert_eq!((s, d, i, n), (0, 5, 0, 5));
    }

    #[test]
    fn complementary_one_class_hand_count() {
        // Reference active in segments 0..4, estimate in segments 4..10.
        let reference = vec![ev("a", 0.0, 4.0)];
        let estimate = vec![ev("a", 4.0, 10.0)];
        let (er, s, d, i, n) = error_rate(&reference, &estimate, 1.0, Some(10.0));
        assert_eq!((s, d, i, n), (0, 4, 6, 4));
        assert!((er - 2.5).abs() < 1e-12);
    }

    #[test]
    fn substitution_when_fn_meets_fp() {
        // Segment 0: reference says class a, estimate says class b.
        let reference = vec![ev("a", 0.0, 1.0)];
        let estimate = vec![ev("b", 0.0, 1.0)];
        let (er, s, d, i, n) = error_rate(&reference, &estimate, 1.0, Some(1.0));
        assert_eq!((s, d, i, n), (1, 0, 0, 1));
        assert_eq!(er, 1.0);
    }

    #[test]
    fn no_reference_with_insertions_is_infinite() {
        let estimate = vec![ev("a", 0.0, 2.0)];
        let (er, ..) = error_rate(&[], &estimate, 1.0, Some(2.0));
        assert!(er.is_infinite());
        let (er, ..) = error_rate(&[], &[], 1.0, Some(2.0));
        assert_eq!(er, 0.0);
    }

    #[test]
    fn class_wise_perfect_and_spurious() {
        let reference = vec![ev("music", 0.0, 3.0)];
        let estimate = vec![ev("music", 0.0, 3.0), ev("speech", 0.0, 2.0)];
        let map = class_wise_f1(&reference, &estimate, 1.0, Some(3.0));
        assert_eq!(map["music"], 1.0);
        assert_eq!(map["speech"], 0.0);
        assert_eq!(map.len(), 2, "classes absent from both lists are omitted");
    }

    #[test]
    fn class_wise_matches_single_class_runs() {
        let reference = vec![ev("a", 0.0, 3.0), ev("b", 2.0, 6.0)];
        let estimate = vec![ev("a", 1.0, 4.0), ev("b", 2.0, 5.0)];
        let map = class_wise_f1(&reference, &estimate, 1.0, Some(6.0));
        for class in ["a", "b"] {
            let only = |evs: &[Event]| -> EventList {
                evs.iter()
                    .filter(|e| e.class_name == class)
                    .cloned()
                    .collect()
            };
            let (_, _, f) =
                segment_f1(&only(&reference), &only(&estimate), 1.0, Some(6.0));
            assert!(
                (map[class] - f).abs() < 1e-12,
                "class {class}: {} vs {f}",
                map[class]
            );
        }
    }

    /// Independent brute-force oracle: rasterize by sampling every segment
    /// midpointless interval directly against the raw event lists.
    fn brute_force_counts(
        reference: &[Event],
        estimate: &[Event],
        segment_size: f64,
        total_duration: f64,
    ) -> (u64, u64, u64, u64, u64, u64, u64) {
        let classes = observed_classes(reference, estimate);
        let n_segments = (total_duration / segment_size).ceil() as usize;
        let (mut tp, mut fp, mut fn_, mut s, mut d, mut i_, mut n) = (0, 0, 0, 0, 0, 0, 0);
        for k in 0..n_segments {
            let lo = k as f64 * segment_size;
            let hi = lo + segment_size;
            let mut seg_fn = 0u64;
            let mut seg_fp = 0u64;
            for class in &classes {
                let has = |evs: &[Event]| {
                    evs.iter().any(|e| {
                        e.class_name == *class && e.offset.min(hi) - e.onset.max(lo) > 0.0
                    })
                };
                let (r, e) = (has(reference), has(estimate));
                if r && e {
                    tp += 1;
                }
                if !r && e {
                    fp += 1;
                    seg_fp += 1;
                }
                if r && !e {
                    fn_ += 1;
                    seg_fn += 1;
                }
                if r {
                    n += 1;
                }
            }
            s += seg_fn.min(seg_fp);
            d += seg_fn.saturating_sub(seg_fp);
            i_ += seg_fp.saturating_sub(seg_fn);
        }
        (tp, fp, fn_, s, d, i_, n)
    }

    fn random_list(rng: &mut StdRng, max_events: usize) -> EventList {
        let classes = ["a", "b", "c"];
        let count = rng.random_range(0..=max_events);
        (0..count)
            .map(|_| {
                let onset = rng.random_range(0.0..9.0);
                let dur = rng.random_range(0.05..4.0);
                ev(
                    classes[rng.random_range(0..classes.len())],
                    onset,
                    (onset + dur).min(10.0),
                )
            })
            .collect()
    }

    #[test]
    fn matches_bruteforce_oracle_on_many_seeds() {
        for seed in 0..300 {
            let mut rng = StdRng::seed_from_u64(seed);
            let reference = random_list(&mut rng, 10);
            let estimate = random_list(&mut rng, 10);
            let counts = SegmentCounts::from_lists(&reference, &estimate, 1.0, Some(10.0));
            let (tp, fp, fn_, s, d, i_, n) =
                brute_force_counts(&reference, &estimate, 1.0, 10.0);
            assert_eq!(
                (counts.tp, counts.fp, counts.false_neg),
                (tp, fp, fn_),
                "seed {seed}"
            );
            assert_eq!(
                (
                    counts.substitutions,
                    counts.deletions,
                    counts.insertions,
                    counts.n_ref
                ),
                (s, d, i_, n),
                "seed {seed}"
            );
            // Rasterization consistency: TP + FN accounts for every active
            // reference cell.
            assert_eq!(counts.tp + counts.false_neg, counts.n_ref);
        }
    }

    #[test]
    fn merge_equals_concatenated_computation() {
        let mut rng = StdRng::seed_from_u64(42);
        let ref_a = random_list(&mut rng, 8);
        let est_a = random_list(&mut rng, 8);
        let ref_b = random_list(&mut rng, 8);
        let est_b = random_list(&mut rng, 8);
        let mut merged = SegmentCounts::from_lists(&ref_a, &est_a, 1.0, Some(10.0));
        merged.merge(&SegmentCounts::from_lists(&ref_b, &est_b, 1.0, Some(10.0)));

        // Same events with the second file shifted by exactly the first
        // file's duration.
        let shift = |evs: &EventList| -> EventList {
            evs.iter()
                .map(|e| ev(&e.class_name, e.onset + 10.0, e.offset + 10.0))
                .collect()
        };
        let mut ref_cat = ref_a.clone();
        ref_cat.extend(shift(&ref_b));
        let mut est_cat = est_a.clone();
        est_cat.extend(shift(&est_b));
        let cat = SegmentCounts::from_lists(&ref_cat, &est_cat, 1.0, Some(20.0));
        assert_eq!(merged, cat);
    }

    #[test]
    fn report_formats() {
        let reference = vec![ev("music", 0.0, 3.0)];
        let counts = SegmentCounts::from_lists(&reference, &reference, 1.0, Some(3.0));
        let report = counts.report(1.0);
        let text = report.to_text();
        assert!(text.contains("overall_f_measure=100.00"), "{text}");
        assert!(text.contains("error_rate=0.00"), "{text}");
        assert!(text.contains("class_f.music=100.00"), "{text}");
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["f_measure"], 1.0);
    }

    proptest! {
        #[test]
        fn permutation_invariance(seed in 0u64..50, swap in any::<prop::sample::Index>()) {
            let mut rng = StdRng::seed_from_u64(seed);
            let reference = random_list(&mut rng, 8);
            let estimate = random_list(&mut rng, 8);
            prop_assume!(estimate.len() >= 2);
            let mut shuffled = estimate.clone();
            let i = swap.index(shuffled.len());
            shuffled.swap(0, i);
            let a = SegmentCounts::from_lists(&reference, &estimate, 1.0, Some(10.0));
            let b = SegmentCounts::from_lists(&reference, &shuffled, 1.0, Some(10.0));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn f_monotone_when_adding_correct_segment(seed in 0u64..50) {
            let mut rng = StdRng::seed_from_u64(seed);
            let reference = random_list(&mut rng, 8);
            let estimate = random_list(&mut rng, 4);
            let counts = SegmentCounts::from_lists(&reference, &estimate, 1.0, Some(10.0));
            let before = counts.f_measure();

            // Find a missed (segment, class) cell and cover exactly it.
            let classes = observed_classes(&reference, &estimate);
            let ref_m = segmentize(&reference, 1.0, 10.0, &classes);
            let est_m = segmentize(&estimate, 1.0, 10.0, &classes);
            let mut improved = estimate.clone();
            'outer: for k in 0..ref_m.n_segments {
                for (ci, class) in classes.iter().enumerate() {
                    if ref_m.active(k, ci) && !est_m.active(k, ci) {
                        improved.push(ev(class, k as f64, (k + 1) as f64));
                        break 'outer;
                    }
                }
            }
            let after = SegmentCounts::from_lists(&reference, &improved, 1.0, Some(10.0))
                .f_measure();
            prop_assert!(after >= before - 1e-12, "{before} -> {after}");
        }
    }
}
