use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

/// Side length of the square audio image.
pub const AUDIO_SIZE: usize = 16;
pub const AUDIO_NOISE_STD: f64 = 0.1;

/// Every sound an environment can emit. Each class renders as a fixed
/// +-1 stripe pattern; silence renders as noise only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioClass {
    /// Bearing of a source in one of eight compass directions, clockwise from north.
    Bearing(u8),
    Stereo,
    LeftChannel,
    RightChannel,
    TargetOne,
    TargetTwo,
    Gold,
    Iron,
    Ax,
    Pickaxe,
    Monster,
}

impl AudioClass {
    pub fn all() -> Vec<AudioClass> {
        let mut v: Vec<AudioClass> = (0..8).map(AudioClass::Bearing).collect();
        v.extend([
            AudioClass::Stereo,
            AudioClass::LeftChannel,
            AudioClass::RightChannel,
            AudioClass::TargetOne,
            AudioClass::TargetTwo,
            AudioClass::Gold,
            AudioClass::Iron,
            AudioClass::Ax,
            AudioClass::Pickaxe,
            AudioClass::Monster,
        ]);
        v
    }

    /// Stable label used in trace files.
    pub fn name(self) -> String {
        match self {
            AudioClass::Bearing(i) => format!("bearing_{i}"),
            AudioClass::Stereo => "stereo".into(),
            AudioClass::LeftChannel => "left_channel".into(),
            AudioClass::RightChannel => "right_channel".into(),
            AudioClass::TargetOne => "target_one".into(),
            AudioClass::TargetTwo => "target_two".into(),
            AudioClass::Gold => "gold".into(),
            AudioClass::Iron => "iron".into(),
            AudioClass::Ax => "ax".into(),
            AudioClass::Pickaxe => "pickaxe".into(),
            AudioClass::Monster => "monster".into(),
        }
    }

    /// Bearing class for a source displaced by (`drow`, `dcol`) from the
    /// listener. `None` when they coincide.
    pub fn bearing(drow: i32, dcol: i32) -> Option<AudioClass> {
        let idx = match (drow.signum(), dcol.signum()) {
            (-1, 0) => 0,
            (-1, 1) => 1,
            (0, 1) => 2,
            (1, 1) => 3,
            (1, 0) => 4,
            (1, -1) => 5,
            (0, -1) => 6,
            (-1, -1) => 7,
            _ => return None,
        };
        Some(AudioClass::Bearing(idx))
    }

    /// Noiseless pattern, row-major `AUDIO_SIZE x AUDIO_SIZE`.
    pub fn pattern(self) -> Vec<f64> {
        let n = AUDIO_SIZE;
        let stripes = |a: f64, b: f64| -> Vec<f64> {
            let mut v = Vec::with_capacity(n * n);
            for r in 0..n {
                for c in 0..n {
                    let phase = 2.0 * std::f64::consts::PI * (a * r as f64 + b * c as f64) / n as f64 + 0.4;
                    v.push(if phase.sin() >= 0.0 { 1.0 } else { -1.0 });
                }
            }
            v
        };
        let half = |keep_left: bool| -> Vec<f64> {
            let mut v = stripes(4.0, 0.0);
            for r in 0..n {
                for c in 0..n {
                    if (c < n / 2) != keep_left {
                        v[r * n + c] = 0.0;
                    }
                }
            }
            v
        };
        match self {
            AudioClass::Bearing(k) => {
                const WAVES: [(f64, f64); 8] =
                    [(1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (1.0, -1.0), (2.0, 0.0), (2.0, 1.0), (0.0, 2.0), (1.0, 2.0)];
                let (a, b) = WAVES[usize::from(k % 8)];
                stripes(a, b)
            }
            AudioClass::Stereo => stripes(4.0, 0.0),
            AudioClass::LeftChannel => half(true),
            AudioClass::RightChannel => half(false),
            AudioClass::TargetOne => stripes(3.0, 0.0),
            AudioClass::TargetTwo => stripes(0.0, 3.0),
            AudioClass::Gold => stripes(3.0, 1.0),
            AudioClass::Iron => stripes(1.0, 3.0),
            AudioClass::Ax => stripes(2.0, 2.0),
            AudioClass::Pickaxe => stripes(2.0, -2.0),
            AudioClass::Monster => stripes(3.0, 3.0),
        }
    }
}

/// Root-mean-square distance between two equally sized patterns.
pub fn rms_distance(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len() as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct AudioRenderer {
    noise: Normal<f64>,
}

impl Default for AudioRenderer {
    fn default() -> Self {
        AudioRenderer { noise: Normal::new(0.0, AUDIO_NOISE_STD).expect("valid std") }
    }
}

impl AudioRenderer {
    /// 1 x 16 x 16 image: the class pattern (or silence) plus Gaussian noise.
    pub fn render<R: Rng + ?Sized>(&self, class: Option<AudioClass>, rng: &mut R) -> Tensor {
        let mut data = class.map(AudioClass::pattern).unwrap_or_else(|| vec![0.0; AUDIO_SIZE * AUDIO_SIZE]);
        for v in data.iter_mut() {
            *v += self.noise.sample(rng);
        }
        Tensor::new(vec![1, AUDIO_SIZE, AUDIO_SIZE], data).expect("audio shape")
    }
}
