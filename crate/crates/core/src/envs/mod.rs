//! Multimodal gridworlds with seeded dynamics.
//!
//! Every environment renders a visual occupancy grid (one binary channel per
//! object kind) and a 1x16x16 audio image; Mining+ adds a token sequence.
//! All randomness comes from a per-environment ChaCha stream, so a seed and an
//! action list fully determine the observation/reward stream.

mod audio;
mod av_nav;
mod grid;
mod hetero_nav;
mod mining;
mod replay;
mod target_select;
pub mod text;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::Result;

pub use audio::{rms_distance, AudioClass, AudioRenderer, AUDIO_NOISE_STD, AUDIO_SIZE};
pub use av_nav::AvNavigation;
pub use hetero_nav::HeteroNav;
pub use mining::{Mining, Ore, Tool};
pub use replay::{ReplayEntry, ReplayRecorder};
pub use target_select::TargetSelect;

/// Steps after which an episode ends without bonus.
pub const EPISODE_CAP: usize = 100;

pub const ACTION_UP: usize = 0;
pub const ACTION_DOWN: usize = 1;
pub const ACTION_LEFT: usize = 2;
pub const ACTION_RIGHT: usize = 3;
pub const ACTION_PICK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    Audio,
    Text,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObsShape {
    Image { channels: usize, height: usize, width: usize },
    Tokens { len: usize, vocab: usize },
}

impl fmt::Display for ObsShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObsShape::Image { channels, height, width } => write!(f, "image {channels}x{height}x{width}"),
            ObsShape::Tokens { len, vocab } => write!(f, "{len} tokens over {vocab} ids"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub modality: Modality,
    pub shape: ObsShape,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModalityObs {
    Image(Tensor),
    Tokens(Vec<usize>),
}

impl ModalityObs {
    pub fn describe(&self) -> String {
        match self {
            ModalityObs::Image(t) => format!("image {:?}", t.shape()),
            ModalityObs::Tokens(ids) => format!("{} tokens", ids.len()),
        }
    }

    pub fn fits(&self, shape: &ObsShape) -> bool {
        match (self, shape) {
            (ModalityObs::Image(t), ObsShape::Image { channels, height, width }) => {
                t.shape() == [*channels, *height, *width]
            }
            (ModalityObs::Tokens(ids), ObsShape::Tokens { len, vocab }) => {
                ids.len() == *len && ids.iter().all(|id| id < vocab)
            }
            _ => false,
        }
    }
}

/// One observation per modality, in the environment's declared modality order.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalObservation {
    pub parts: Vec<ModalityObs>,
    /// The audio class rendered this step; `None` means noise only.
    pub cue: Option<AudioClass>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: MultimodalObservation,
    pub reward: f64,
    pub done: bool,
    /// The episode ended by completing the task.
    pub success: bool,
}

pub trait Environment: Send {
    fn kind(&self) -> EnvKind;

    fn modalities(&self) -> &[ModalitySpec];

    fn action_count(&self) -> usize;

    /// Starts a new episode. `Some(seed)` reseeds the environment's random
    /// stream first; `None` continues it.
    fn reset(&mut self, seed: Option<u64>) -> MultimodalObservation;

    fn step(&mut self, action: usize) -> Result<Step>;

    /// Hash of the random stream position, for replay logs.
    fn rng_fingerprint(&self) -> u64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    HeteroNav,
    TargetSelect,
    AvNav,
    Mining,
    MiningPlus,
}

impl EnvKind {
    pub const ALL: [EnvKind; 5] =
        [EnvKind::HeteroNav, EnvKind::TargetSelect, EnvKind::AvNav, EnvKind::Mining, EnvKind::MiningPlus];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::HeteroNav => "hetero_nav",
            EnvKind::TargetSelect => "target_select",
            EnvKind::AvNav => "av_nav",
            EnvKind::Mining => "mining",
            EnvKind::MiningPlus => "mining_plus",
        }
    }

    pub fn build(self, seed: u64) -> Box<dyn Environment> {
        match self {
            EnvKind::HeteroNav => Box::new(HeteroNav::new(seed)),
            EnvKind::TargetSelect => Box::new(TargetSelect::new(seed)),
            EnvKind::AvNav => Box::new(AvNavigation::new(seed)),
            EnvKind::Mining => Box::new(Mining::new(seed, false)),
            EnvKind::MiningPlus => Box::new(Mining::new(seed, true)),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EnvKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown environment `{s}` (expected one of hetero_nav, target_select, av_nav, mining, mining_plus)"))
    }
}
