use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::grid::{fingerprint, render_grid, seeded, Pos};
use super::{
    AudioClass, AudioRenderer, EnvKind, Environment, Modality, ModalityObs, ModalitySpec, MultimodalObservation,
    ObsShape, Step, AUDIO_SIZE, EPISODE_CAP,
};
use crate::error::{Error, Result};

const SIZE: usize = 10;
const WALL_COL: i32 = 4;
pub const CORRIDOR: Pos = Pos::new(4, WALL_COL);
pub const GOAL: Pos = Pos::new(7, 9);
const CH_AGENT: usize = 0;
const CH_WALL: usize = 1;
const CH_GOAL: usize = 2;

/// Two rooms joined by a one-cell corridor in the dividing wall. The agent
/// starts somewhere in the left room. Audio tells the vertical relation to
/// the effective sound source: the corridor mouth while in the left room or
/// the corridor itself, the goal otherwise. Level source -> stereo, source
/// below -> right channel, source above -> left channel.
pub struct AvNavigation {
    rng: ChaCha8Rng,
    audio: AudioRenderer,
    specs: [ModalitySpec; 2],
    agent: Pos,
    steps: usize,
}

fn is_wall(p: Pos) -> bool {
    p.col == WALL_COL && p != CORRIDOR
}

impl AvNavigation {
    pub fn new(seed: u64) -> Self {
        AvNavigation {
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
            agent: Pos::new(0, 0),
            steps: 0,
        }
    }

    pub fn agent(&self) -> Pos {
        self.agent
    }

    /// Places the agent explicitly (scripted tests and analysis).
    pub fn set_agent(&mut self, p: Pos) {
        assert!(p.inside(SIZE, SIZE) && !is_wall(p));
        self.agent = p;
    }

    pub fn sound_source(&self) -> Pos {
        if self.agent.col <= WALL_COL {
            CORRIDOR
        } else {
            GOAL
        }
    }

    pub fn audio_class(&self) -> AudioClass {
        let src = self.sound_source();
        match src.row.cmp(&self.agent.row) {
            std::cmp::Ordering::Equal => AudioClass::Stereo,
            std::cmp::Ordering::Greater => AudioClass::RightChannel,
            std::cmp::Ordering::Less => AudioClass::LeftChannel,
        }
    }

    fn observe(&mut self) -> MultimodalObservation {
        let mut cells = vec![(CH_AGENT, self.agent), (CH_GOAL, GOAL)];
        cells.extend((0..SIZE as i32).map(|r| Pos::new(r, WALL_COL)).filter(|p| is_wall(*p)).map(|p| (CH_WALL, p)));
        let visual = render_grid(3, SIZE, SIZE, &cells);
        let cue = Some(self.audio_class());
        let audio = self.audio.render(cue, &mut self.rng);
        MultimodalObservation { parts: vec![ModalityObs::Image(visual), ModalityObs::Image(audio)], cue }
    }
}

impl Environment for AvNavigation {
    fn kind(&self) -> EnvKind {
        EnvKind::AvNav
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
        self.agent = Pos::new(self.rng.random_range(0..SIZE as i32), self.rng.random_range(0..WALL_COL));
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if action >= self.action_count() {
            return Err(Error::InvalidAction { action, count: self.action_count() });
        }
        self.steps += 1;
        let next = self.agent.moved(action);
        if next.inside(SIZE, SIZE) && !is_wall(next) {
            self.agent = next;
        }
        let success = self.agent == GOAL;
        let reward = if success { 1.0 } else { -1.0 };
        let done = success || self.steps >= EPISODE_CAP;
        Ok(Step { observation: self.observe(), reward, done, success })
    }

    fn rng_fingerprint(&self) -> u64 {
        fingerprint(&self.rng)
    }
}
