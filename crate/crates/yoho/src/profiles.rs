//! Named end-to-end configurations.
//!
//! A profile fixes the feature front end, the clip window the network
//! sees, the smoothing thresholds, the class list, and the evaluation
//! segment size. `music-speech` and `environmental` carry the published
//! constants; `desk` is a small two-class profile matching the synthetic
//! generator for self-contained experiments.

use crate::features::FeatureConfig;
use crate::smooth::{ClassSmoothing, SmoothingConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineProfile {
    pub name: &'static str,
    pub features: FeatureConfig,
    /// Clip length fed to the network, seconds.
    pub window_secs: f64,
    pub smoothing: SmoothingConfig,
    pub classes: Vec<String>,
    /// Segment size for evaluation metrics, seconds.
    pub eval_segment_secs: f64,
}

fn strings(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

impl PipelineProfile {
    /// Broadcast music/speech detection: 16 kHz features over 8 s windows,
    /// 10 ms evaluation segments.
    pub fn music_speech() -> Self {
        PipelineProfile {
            name: "music-speech",
            features: FeatureConfig::music_speech(),
            window_secs: 8.0,
            smoothing: SmoothingConfig::music_speech(),
            classes: strings(&["speech", "music"]),
            eval_segment_secs: 0.01,
        }
    }

    /// Environmental sound events: 44.1 kHz features over 2.56 s windows,
    /// 1 s evaluation segments, six street-scene classes.
    pub fn environmental() -> Self {
        PipelineProfile {
            name: "environmental",
            features: FeatureConfig::environmental(),
            window_secs: 2.56,
            smoothing: SmoothingConfig::environmental(),
            classes: strings(&[
                "brakes_squeaking",
                "car",
                "children",
                "large_vehicle",
                "people_speaking",
                "people_walking",
            ]),
            eval_segment_secs: 1.0,
        }
    }

    /// Environmental variant with 10 s windows and the ten urban classes.
    pub fn environmental_long() -> Self {
        PipelineProfile {
            name: "environmental-long",
            features: FeatureConfig::environmental(),
            window_secs: 10.0,
            smoothing: SmoothingConfig::environmental(),
            classes: strings(&[
                "air_conditioner",
                "car_horn",
                "children_playing",
                "dog_bark",
                "drilling",
                "engine_idling",
                "gun_shot",
                "jackhammer",
                "siren",
                "street_music",
            ]),
            eval_segment_secs: 1.0,
        }
    }

    /// Desk-scale profile for the synthetic two-class generator:
    /// music-speech features, light smoothing, no minimum duration.
    pub fn desk() -> Self {
        PipelineProfile {
            name: "desk",
            features: FeatureConfig::music_speech(),
            window_secs: 8.0,
            smoothing: SmoothingConfig::uniform(ClassSmoothing::new(0.3, None)),
            classes: strings(&["tone", "noise"]),
            eval_segment_secs: 0.01,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "music-speech" => Some(Self::music_speech()),
            "environmental" => Some(Self::environmental()),
            "environmental-long" => Some(Self::environmental_long()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn names() -> &'static [&'static str] {
        &["music-speech", "environmental", "environmental-long", "desk"]
    }

    /// Samples per clip window at the profile's rate.
    pub fn window_samples(&self) -> usize {
        (self.window_secs * self.features.sample_rate as f64).round() as usize
    }

    /// Spectrogram frames the network sees per window.
    pub fn input_time(&self) -> usize {
        self.features.frames_for(self.window_samples())
    }
}
