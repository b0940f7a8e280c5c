//! Conversion between human-readable event lists and the per-step
//! regression grid.
//!
//! The grid divides a clip into `n_steps` equal spans. Each span holds one
//! `(presence, start, stop)` triplet per class, with start/stop normalized
//! to the span so values live in [0, 1]. A class is marked present in a
//! span when one of its events overlaps the span with nonzero length; the
//! start value is 0 unless the event begins inside the span, and the stop
//! value is 1 unless it ends inside.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// A single annotated acoustic event.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub class_name: String,
    pub onset: f64,
    pub offset: f64,
}

impl Event {
    pub fn new(class_name: impl Into<String>, onset: f64, offset: f64) -> Self {
        Event {
            class_name: class_name.into(),
            onset,
            offset,
        }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

pub type EventList = Vec<Event>;

/// Default presence threshold for decoding.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Fragments of the same class closer than this merge during decode.
pub const DEFAULT_MERGE_EPSILON: f64 = 1e-4;

/// Per-step regression target/prediction grid.
///
/// Cells are stored step-major; within a step, triplets follow the class
/// list order, `(presence, start, stop)` inside each triplet. This layout
/// is exactly the network's output row layout, so [`YohoGrid::flat`] needs
/// no shuffling.
#[derive(Debug, Clone, PartialEq)]
pub struct YohoGrid {
    pub classes: Vec<String>,
    pub n_steps: usize,
    /// Seconds per step: clip duration / step count.
    pub step_duration: f64,
    cells: Vec<f64>,
}

impl YohoGrid {
    pub fn zeros(classes: Vec<String>, n_steps: usize, step_duration: f64) -> Self {
        let cells = vec![0.0; n_steps * 3 * classes.len()];
        YohoGrid {
            classes,
            n_steps,
            step_duration,
            cells,
        }
    }

    /// Rebuild a grid from the network's flat output row layout.
    pub fn from_flat(
        values: Vec<f64>,
        classes: Vec<String>,
        step_duration: f64,
    ) -> Result<Self> {
        let per_step = 3 * classes.len();
        if per_step == 0 || values.len() % per_step != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not divide into triplets for {} classes",
                values.len(),
                classes.len()
            )));
        }
        let n_steps = values.len() / per_step;
        Ok(YohoGrid {
            classes,
            n_steps,
            step_duration,
            cells: values,
        })
    }

    pub fn flat(&self) -> &[f64] {
        &self.cells
    }

    pub fn clip_duration(&self) -> f64 {
        self.step_duration * self.n_steps as f64
    }

    #[inline]
    fn base(&self, step: usize, class_idx: usize) -> usize {
        (step * self.classes.len() + class_idx) * 3
    }

    pub fn cell(&self, step: usize, class_idx: usize) -> (f64, f64, f64) {
        let b = self.base(step, class_idx);
        (self.cells[b], self.cells[b + 1], self.cells[b + 2])
    }

    pub fn set_cell(&mut self, step: usize, class_idx: usize, cell: (f64, f64, f64)) {
        let b = self.base(step, class_idx);
        self.cells[b] = cell.0;
        self.cells[b + 1] = cell.1;
        self.cells[b + 2] = cell.2;
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }
}

/// Encode an event list into the regression grid.
///
/// Two same-class events touching the same step cannot be told apart by a
/// single triplet; they are merged within that step (earliest onset, latest
/// offset), losing the gap between them at this quantization.
pub fn encode(
    events: &[Event],
    clip_duration: f64,
    n_steps: usize,
    classes: &[String],
) -> Result<YohoGrid> {
    if n_steps == 0 || clip_duration <= 0.0 {
        return Err(Error::InvalidConfig(
            "encode needs n_steps >= 1 and a positive clip duration".into(),
        ));
    }
    for ev in events {
        if !(0.0 <= ev.onset && ev.onset < ev.offset && ev.offset <= clip_duration) {
            return Err(Error::EventOutsideClip {
                onset: ev.onset,
                offset: ev.offset,
                duration: clip_duration,
            });
        }
        if !classes.iter().any(|c| c == &ev.class_name) {
            return Err(Error::UnknownClass(ev.class_name.clone()));
        }
    }

    let d = clip_duration / n_steps as f64;
    let mut grid = YohoGrid::zeros(classes.to_vec(), n_steps, d);
    for k in 0..n_steps {
        let span_start = k as f64 * d;
        let span_end = (k + 1) as f64 * d;
        for (ci, class) in classes.iter().enumerate() {
            let mut onset = f64::INFINITY;
            let mut offset = f64::NEG_INFINITY;
            for ev in events {
                if &ev.class_name == class && ev.onset < span_end && ev.offset > span_start {
                    onset = onset.min(ev.onset);
                    offset = offset.max(ev.offset);
                }
            }
            if onset.is_finite() {
                let y2 = ((onset - span_start) / d).max(0.0);
                let y3 = ((offset - span_start) / d).min(1.0);
                grid.set_cell(k, ci, (1.0, y2, y3));
            }
        }
    }
    Ok(grid)
}

/// Decode a grid into an event list.
///
/// Steps whose presence reaches `threshold` emit a fragment positioned by
/// their start/stop values; same-class fragments that touch or overlap
/// (gap at most [`DEFAULT_MERGE_EPSILON`]) are merged. Output is sorted by
/// onset, then class name.
pub fn decode(grid: &YohoGrid, threshold: f64) -> EventList {
    decode_with_epsilon(grid, threshold, DEFAULT_MERGE_EPSILON)
}

pub fn decode_with_epsilon(grid: &YohoGrid, threshold: f64, merge_epsilon: f64) -> EventList {
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "presence threshold must lie in (0, 1)"
    );
    let d = grid.step_duration;
    let mut events = Vec::new();
    for (ci, class) in grid.classes.iter().enumerate() {
        let mut fragments: Vec<(f64, f64)> = Vec::new();
        for k in 0..grid.n_steps {
            let (y1, y2, y3) = grid.cell(k, ci);
            if y1 < threshold {
                continue;
            }
            let start = (k as f64 + y2.clamp(0.0, 1.0)) * d;
            let stop = (k as f64 + y3.clamp(0.0, 1.0)) * d;
            if stop <= start {
                // Inverted regression pair; nothing sensible to emit.
                continue;
            }
            fragments.push((start, stop));
        }
        for (start, stop) in fragments {
            match events.last_mut() {
                Some(Event {
                    class_name,
                    offset,
                    ..
                }) if class_name == class && start - *offset <= merge_epsilon => {
                    *offset = stop.max(*offset);
                }
                _ => events.push(Event::new(class.clone(), start, stop)),
            }
        }
    }
    events.sort_by(|a, b| {
        a.onset
            .partial_cmp(&b.onset)
            .unwrap()
            .then_with(|| a.class_name.cmp(&b.class_name))
    });
    events
}

/// Union-merge same-class events that overlap or sit within `gap` of each
/// other. Useful to normalize hand-written annotations before encoding.
pub fn merge_same_class(events: &[Event], gap: f64) -> EventList {
    let mut sorted: Vec<Event> = events.to_vec();
    sorted.sort_by(|a, b| {
        a.class_name
            .cmp(&b.class_name)
            .then(a.onset.partial_cmp(&b.onset).unwrap())
    });
    let mut out: EventList = Vec::new();
    for ev in sorted {
        match out.last_mut() {
            Some(last) if last.class_name == ev.class_name && ev.onset - last.offset <= gap => {
                last.offset = last.offset.max(ev.offset);
            }
            _ => out.push(ev),
        }
    }
    out.sort_by(|a, b| {
        a.onset
            .partial_cmp(&b.onset)
            .unwrap()
            .then_with(|| a.class_name.cmp(&b.class_name))
    });
    out
}

/// Write events as UTF-8 TSV lines: `onset<TAB>offset<TAB>class_name`,
/// seconds with six decimals.
pub fn write_tsv(path: impl AsRef<Path>, events: &[Event]) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    for ev in events {
        writeln!(file, "{:.6}\t{:.6}\t{}", ev.onset, ev.offset, ev.class_name)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

pub fn read_tsv(path: impl AsRef<Path>) -> Result<EventList> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Unreadable {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: &str| Error::BadAnnotation {
            path: path.to_path_buf(),
            line: i + 1,
            detail: detail.to_string(),
        };
        let mut parts = line.split('\t');
        let onset: f64 = parts
            .next()
            .ok_or_else(|| bad("missing onset"))?
            .trim()
            .parse()
            .map_err(|_| bad("bad onset"))?;
        let offset: f64 = parts
            .next()
            .ok_or_else(|| bad("missing offset"))?
            .trim()
            .parse()
            .map_err(|_| bad("bad offset"))?;
        let class = parts.next().ok_or_else(|| bad("missing class name"))?.trim();
        if class.is_empty() {
            return Err(bad("empty class name"));
        }
        if offset <= onset {
            return Err(bad("offset must exceed onset"));
        }
        events.push(Event::new(class, onset, offset));
    }
    Ok(events)
}
