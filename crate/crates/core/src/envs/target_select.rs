use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::grid::{fingerprint, render_grid, seeded, Pos};
use super::{
    AudioClass, AudioRenderer, EnvKind, Environment, Modality, ModalityObs, ModalitySpec, MultimodalObservation,
    ObsShape, Step, AUDIO_SIZE, EPISODE_CAP,
};
use crate::error::{Error, Result};

const SIZE: usize = 10;
const START: Pos = Pos::new(4, 0);
/// Target one sits bottom-right, target two top-right.
const TARGET_ONE: Pos = Pos::new(9, 9);
const TARGET_TWO: Pos = Pos::new(0, 9);
/// Column on which the target's identity can be heard.
pub const AUDIO_LINE_COL: i32 = 8;
const CH_AGENT: usize = 0;
const CH_TARGET: usize = 1;
const CH_LINE: usize = 2;

/// Reach whichever of two visually identical corner targets the audio names.
/// The audio only carries the target identity on one column of the grid.
pub struct TargetSelect {
    rng: ChaCha8Rng,
    audio: AudioRenderer,
    specs: [ModalitySpec; 2],
    agent: Pos,
    target_one: bool,
    steps: usize,
}

impl TargetSelect {
    pub fn new(seed: u64) -> Self {
        TargetSelect {
            rng: seeded(seed),
            audio: AudioRenderer::default(),
            specs: [
                ModalitySpec {
                    modality: Modality::Visual,
                    shape: ObsShape::Image { channels: 3, height: SIZE, width: SIZE },
                },
                ModalitySpec {
                    modality: Modality::Audio,
                    shape: ObsShape::Image { channels: 1, height: AUDIO_SIZE, width: AUDIO_SIZE },
                },
            ],
            agent: START,
            target_one: true,
            steps: 0,
        }
    }

    pub fn agent(&self) -> Pos {
        self.agent
    }

    /// Position of the target that pays out this episode.
    pub fn correct_target(&self) -> Pos {
        if self.target_one {
            TARGET_ONE
        } else {
            TARGET_TWO
        }
    }

    pub fn target_is_one(&self) -> bool {
        self.target_one
    }

    fn observe(&mut self) -> MultimodalObservation {
        let mut cells = vec![(CH_AGENT, self.agent), (CH_TARGET, TARGET_ONE), (CH_TARGET, TARGET_TWO)];
        cells.extend((0..SIZE as i32).map(|r| (CH_LINE, Pos::new(r, AUDIO_LINE_COL))));
        let visual = render_grid(3, SIZE, SIZE, &cells);
        let cue = (self.agent.col == AUDIO_LINE_COL)
            .then_some(if self.target_one { AudioClass::TargetOne } else { AudioClass::TargetTwo });
        let audio = self.audio.render(cue, &mut self.rng);
        MultimodalObservation { parts: vec![ModalityObs::Image(visual), ModalityObs::Image(audio)], cue }
    }
}

impl Environment for TargetSelect {
    fn kind(&self) -> EnvKind {
        EnvKind::TargetSelect
    }

    fn modalities(&self) -> &[ModalitySpec] {
        &self.specs
    }

    fn action_count(&self) -> usize {
        4
    }

    fn reset(&mut self, seed: Option<u64>) -> MultimodalObservation {
        if let Some(s) = seed {
            self.rng = seeded(s);
        }
        self.target_one = self.rng.random_bool(0.5);
        self.agent = START;
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if action >= self.action_count() {
            return Err(Error::InvalidAction { action, count: self.action_count() });
        }
        self.steps += 1;
        let next = self.agent.moved(action);
        if next.inside(SIZE, SIZE) {
            self.agent = next;
        }
        let correct = self.correct_target();
        let on_target = self.agent == TARGET_ONE || self.agent == TARGET_TWO;
        let success = self.agent == correct;
        let reward = if success { 1.0 } else { -1.0 };
        let done = on_target || self.steps >= EPISODE_CAP;
        Ok(Step { observation: self.observe(), reward, done, success })
    }

    fn rng_fingerprint(&self) -> u64 {
        fingerprint(&self.rng)
    }
}
