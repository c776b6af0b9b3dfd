//! The seven emotion classes in their canonical order.
//!
//! The order matches the confusion-matrix figures (AN, SA, SU, HA, DI, FE,
//! NE) so that rendered reports line up with the published tables.

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionClass {
    Anger,
    Sadness,
    Surprise,
    Happiness,
    Disgust,
    Fear,
    Neutral,
}

/// All classes in canonical order.
pub const ALL_CLASSES: [EmotionClass; NUM_CLASSES] = [
    EmotionClass::Anger,
    EmotionClass::Sadness,
    EmotionClass::Surprise,
    EmotionClass::Happiness,
    EmotionClass::Disgust,
    EmotionClass::Fear,
    EmotionClass::Neutral,
];

impl EmotionClass {
    /// Index into the canonical order.
    pub fn index(self) -> usize {
        ALL_CLASSES.iter().position(|&c| c == self).unwrap()
    }

    pub fn from_index(i: usize) -> Result<Self> {
        ALL_CLASSES
            .get(i)
            .copied()
            .ok_or_else(|| Error::Usage(format!("class index {i} out of range 0..{NUM_CLASSES}")))
    }

    /// Lowercase label used in manifests and file names.
    pub fn name(self) -> &'static str {
        match self {
            EmotionClass::Anger => "anger",
            EmotionClass::Sadness => "sadness",
            EmotionClass::Surprise => "surprise",
            EmotionClass::Happiness => "happiness",
            EmotionClass::Disgust => "disgust",
            EmotionClass::Fear => "fear",
            EmotionClass::Neutral => "neutral",
        }
    }

    /// Two-letter abbreviation used in confusion-matrix headers.
    pub fn abbrev(self) -> &'static str {
        match self {
            EmotionClass::Anger => "AN",
            EmotionClass::Sadness => "SA",
            EmotionClass::Surprise => "SU",
            EmotionClass::Happiness => "HA",
            EmotionClass::Disgust => "DI",
            EmotionClass::Fear => "FE",
            EmotionClass::Neutral => "NE",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ALL_CLASSES
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Manifest(format!("unknown emotion class: {s:?}")))
    }
}

impl std::fmt::Display for EmotionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
