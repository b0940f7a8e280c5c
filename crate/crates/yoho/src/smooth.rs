//! Threshold-dependent smoothing of decoded event lists.
//!
//! Two passes, in fixed order: first merge consecutive same-class events
//! whose silence gap is strictly shorter than the class's `min_gap`, then
//! drop events strictly shorter than the class's `min_duration` (when one
//! is set). Merging first lets adjacent fragments pool enough duration to
//! survive the drop pass.

use std::collections::BTreeMap;

use crate::labels::{Event, EventList};

/// Smoothing thresholds for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSmoothing {
    /// Merge same-class events separated by less than this many seconds.
    pub min_gap: f64,
    /// Drop events shorter than this many seconds; `None` keeps everything.
    pub min_duration: Option<f64>,
}

impl ClassSmoothing {
    pub fn new(min_gap: f64, min_duration: Option<f64>) -> Self {
        assert!(min_gap >= 0.0);
        assert!(min_duration.is_none_or(|d| d >= 0.0));
        ClassSmoothing {
            min_gap,
            min_duration,
        }
    }
}

/// Per-class smoothing thresholds with a fallback for unlisted classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingConfig {
    pub per_class: BTreeMap<String, ClassSmoothing>,
    pub default: ClassSmoothing,
}

impl SmoothingConfig {
    pub fn uniform(smoothing: ClassSmoothing) -> Self {
        SmoothingConfig {
            per_class: BTreeMap::new(),
            default: smoothing,
        }
    }

    /// Broadcast thresholds: 0.8 s gaps for both classes, minimum durations
    /// of 3.4 s for music and 0.8 s for speech.
    pub fn music_speech() -> Self {
        let mut per_class = BTreeMap::new();
        per_class.insert("music".to_string(), ClassSmoothing::new(0.8, Some(3.4)));
        per_class.insert("speech".to_string(), ClassSmoothing::new(0.8, Some(0.8)));
        SmoothingConfig {
            per_class,
            default: ClassSmoothing::new(0.8, None),
        }
    }

    /// Environmental thresholds: 1.0 s gap for every class, no minimum
    /// duration.
    pub fn environmental() -> Self {
        SmoothingConfig::uniform(ClassSmoothing::new(1.0, None))
    }

    pub fn for_class(&self, class: &str) -> ClassSmoothing {
        self.per_class.get(class).copied().unwrap_or(self.default)
    }
}

/// Apply merge-then-drop smoothing. Output is sorted by onset, then class.
pub fn smooth(events: &[Event], config: &SmoothingConfig) -> EventList {
    let mut by_class: BTreeMap<&str, Vec<&Event>> = BTreeMap::new();
    for ev in events {
        by_class.entry(&ev.class_name).or_default().push(ev);
    }

    let mut out: EventList = Vec::new();
    for (class, mut class_events) in by_class {
        class_events.sort_by(|a, b| a.onset.partial_cmp(&b.onset).unwrap());
        let params = config.for_class(class);

        // Merge pass: close the gap when it is strictly below min_gap.
        let mut merged: Vec<Event> = Vec::new();
        for ev in class_events {
            match merged.last_mut() {
                Some(last) if ev.onset - last.offset < params.min_gap => {
                    last.offset = last.offset.max(ev.offset);
                }
                _ => merged.push(ev.clone()),
            }
        }

        // Drop pass: discard events strictly shorter than min_duration.
        if let Some(min_dur) = params.min_duration {
            merged.retain(|ev| ev.duration() >= min_dur);
        }
        out.extend(merged);
    }

    out.sort_by(|a, b| {
        a.onset
            .partial_cmp(&b.onset)
            .unwrap()
            .then_with(|| a.class_name.cmp(&b.class_name))
    });
    out
}
