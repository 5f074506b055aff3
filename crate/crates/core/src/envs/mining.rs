use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::grid::{fingerprint, render_grid, seeded, Pos};
use super::text::{self, Hint, TEXT_LEN, VOCAB_SIZE};
use super::{
    AudioClass, AudioRenderer, EnvKind, Environment, Modality, ModalityObs, ModalitySpec, MultimodalObservation,
    ObsShape, Step, ACTION_PICK, AUDIO_SIZE, EPISODE_CAP,
};
use crate::error::{Error, Result};

const SIZE: usize = 8;
const START: Pos = Pos::new(0, 0);
pub const ORE: Pos = Pos::new(2, 4);
pub const AX_HOME: Pos = Pos::new(7, 1);
pub const PICKAXE_HOME: Pos = Pos::new(7, 6);
const MONSTER_START: Pos = Pos::new(4, 7);
const MONSTER_RADIUS: i32 = 2;
const MONSTER_MOVE_PROB: f64 = 0.5;

const MINE_REWARD: f64 = 10.0;
const WRONG_TOOL_PENALTY: f64 = -10.0;
const MONSTER_PENALTY: f64 = -100.0;
const STEP_COST: f64 = -1.0;

const CH_AGENT: usize = 0;
const CH_ORE: usize = 1;
const CH_AX: usize = 2;
const CH_PICKAXE: usize = 3;
const CH_MONSTER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ore {
    Gold,
    Iron,
}

impl Ore {
    pub fn required_tool(self) -> Tool {
        match self {
            Ore::Gold => Tool::Ax,
            Ore::Iron => Tool::Pickaxe,
        }
    }

    fn cue(self) -> AudioClass {
        match self {
            Ore::Gold => AudioClass::Gold,
            Ore::Iron => AudioClass::Iron,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tool {
    Ax,
    Pickaxe,
}

impl Tool {
    pub fn home(self) -> Pos {
        match self {
            Tool::Ax => AX_HOME,
            Tool::Pickaxe => PICKAXE_HOME,
        }
    }

    fn cue(self) -> AudioClass {
        match self {
            Tool::Ax => AudioClass::Ax,
            Tool::Pickaxe => AudioClass::Pickaxe,
        }
    }
}

/// Pick the tool matching an ore, then mine it. Both ore types look the same
/// to vision; the ore's sound is audible only next to it.
///
/// The `plus` variant always has gold, adds a pursuing monster, tool and
/// monster sounds, and a text channel carrying hint messages.
pub struct Mining {
    rng: ChaCha8Rng,
    audio: AudioRenderer,
    specs: Vec<ModalitySpec>,
    plus: bool,
    agent: Pos,
    ore: Ore,
    held: Option<Tool>,
    monster: Pos,
    steps: usize,
}

impl Mining {
    pub fn new(seed: u64, plus: bool) -> Self {
        let mut specs = vec![
            ModalitySpec { modality: Modality::Visual, shape: ObsShape::Image { channels: 5, height: SIZE, width: SIZE } },
            ModalitySpec {
                modality: Modality::Audio,
                shape: ObsShape::Image { channels: 1, height: AUDIO_SIZE, width: AUDIO_SIZE },
            },
        ];
        if plus {
            specs.push(ModalitySpec { modality: Modality::Text, shape: ObsShape::Tokens { len: TEXT_LEN, vocab: VOCAB_SIZE } });
        }
        Mining {
            rng: seeded(seed),
            audio: AudioRenderer::default(),
            specs,
            plus,
            agent: START,
            ore: Ore::Gold,
            held: None,
            monster: MONSTER_START,
            steps: 0,
        }
    }

    pub fn agent(&self) -> Pos {
        self.agent
    }

    pub fn ore(&self) -> Ore {
        self.ore
    }

    pub fn held(&self) -> Option<Tool> {
        self.held
    }

    pub fn monster(&self) -> Option<Pos> {
        self.plus.then_some(self.monster)
    }

    /// Whether the agent is within hearing range of the ore.
    pub fn ore_adjacent(&self) -> bool {
        self.agent.chebyshev(ORE) <= 1
    }

    fn tools_on_map(&self) -> impl Iterator<Item = Tool> + '_ {
        [Tool::Ax, Tool::Pickaxe].into_iter().filter(move |t| self.held != Some(*t))
    }

    fn cue(&self) -> Option<AudioClass> {
        if self.plus && self.monster.chebyshev(self.agent) <= MONSTER_RADIUS {
            return Some(AudioClass::Monster);
        }
        if self.ore_adjacent() {
            return Some(self.ore.cue());
        }
        if self.plus {
            return self.tools_on_map().find(|t| t.home().chebyshev(self.agent) <= 1).map(Tool::cue);
        }
        None
    }

    fn observe(&mut self, hint: Option<Hint>) -> MultimodalObservation {
        let mut cells = vec![(CH_AGENT, self.agent), (CH_ORE, ORE)];
        for t in self.tools_on_map() {
            cells.push((if t == Tool::Ax { CH_AX } else { CH_PICKAXE }, t.home()));
        }
        if self.plus {
            cells.push((CH_MONSTER, self.monster));
        }
        let visual = render_grid(5, SIZE, SIZE, &cells);
        let cue = self.cue();
        let audio = self.audio.render(cue, &mut self.rng);
        let mut parts = vec![ModalityObs::Image(visual), ModalityObs::Image(audio)];
        if self.plus {
            parts.push(ModalityObs::Tokens(hint.map_or_else(text::padding, |h| text::tokenize(h.message()))));
        }
        MultimodalObservation { parts, cue }
    }

    fn move_monster(&mut self) {
        if self.monster.chebyshev(self.agent) > MONSTER_RADIUS || !self.rng.random_bool(MONSTER_MOVE_PROB) {
            return;
        }
        let (dr, dc) = (self.agent.row - self.monster.row, self.agent.col - self.monster.col);
        let next = if dr.abs() >= dc.abs() {
            Pos::new(self.monster.row + dr.signum(), self.monster.col)
        } else {
            Pos::new(self.monster.row, self.monster.col + dc.signum())
        };
        if next != ORE {
            self.monster = next;
        }
    }
}

impl Environment for Mining {
    fn kind(&self) -> EnvKind {
        if self.plus {
            EnvKind::MiningPlus
        } else {
            EnvKind::Mining
        }
    }

    fn modalities(&self) -> &[ModalitySpec] {
        &self.specs
    }

    fn action_count(&self) -> usize {
        5
    }

    fn reset(&mut self, seed: Option<u64>) -> MultimodalObservation {
        if let Some(s) = seed {
            self.rng = seeded(s);
        }
        self.ore = if self.plus || self.rng.random_bool(0.5) { Ore::Gold } else { Ore::Iron };
        self.agent = START;
        self.held = None;
        self.monster = MONSTER_START;
        self.steps = 0;
        self.observe(Some(Hint::FindGold))
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if action >= self.action_count() {
            return Err(Error::InvalidAction { action, count: self.action_count() });
        }
        self.steps += 1;
        let mut reward = STEP_COST;
        let mut success = false;
        let mut hint = None;
        if action == ACTION_PICK {
            let here = self.tools_on_map().find(|t| t.home() == self.agent);
            if let Some(tool) = here {
                self.held = Some(tool);
                if tool == Tool::Ax {
                    hint = Some(Hint::GotAx);
                }
            }
        } else {
            let next = self.agent.moved(action);
            if next == ORE {
                if self.held == Some(self.ore.required_tool()) {
                    self.agent = next;
                    reward = MINE_REWARD;
                    success = true;
                    hint = Some(Hint::GotGold);
                } else {
                    reward = WRONG_TOOL_PENALTY;
                    hint = Some(Hint::NoAx);
                }
            } else if next.inside(SIZE, SIZE) {
                self.agent = next;
            }
        }
        let mut hurt = false;
        if self.plus && !success {
            hurt = self.monster == self.agent;
            if !hurt {
                self.move_monster();
                hurt = self.monster == self.agent;
            }
            if hurt {
                reward = MONSTER_PENALTY;
                hint = Some(Hint::HurtByTiger);
            } else if hint.is_none() && self.ore_adjacent() && self.held != Some(Tool::Ax) {
                hint = Some(Hint::NoAx);
            }
        }
        let done = success || hurt || self.steps >= EPISODE_CAP;
        Ok(Step { observation: self.observe(hint), reward, done, success })
    }

    fn rng_fingerprint(&self) -> u64 {
        fingerprint(&self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ACTION_DOWN, ACTION_LEFT, ACTION_RIGHT, ACTION_UP};

    fn toward(from: Pos, to: Pos) -> usize {
        if from.row < to.row {
            ACTION_DOWN
        } else if from.row > to.row {
            ACTION_UP
        } else if from.col < to.col {
            ACTION_RIGHT
        } else {
            ACTION_LEFT
        }
    }

    /// Scripted solver: listen next to the ore, fetch the matching tool, mine.
    pub(crate) fn solve(env: &mut Mining) -> (f64, bool, Vec<Step>) {
        let mut log = Vec::new();
        let mut total = 0.0;
        let listen = Pos::new(1, 3);
        let mut heard = None;
        while env.agent() != listen {
            let s = env.step(toward(env.agent(), listen)).unwrap();
            total += s.reward;
            heard = s.observation.cue;
            log.push(s);
        }
        let tool = match heard {
            Some(AudioClass::Gold) => Tool::Ax,
            Some(AudioClass::Iron) => Tool::Pickaxe,
            other => panic!("expected an ore cue, got {other:?}"),
        };
        while env.agent() != tool.home() {
            let s = env.step(toward(env.agent(), tool.home())).unwrap();
            total += s.reward;
            log.push(s);
        }
        let s = env.step(ACTION_PICK).unwrap();
        total += s.reward;
        log.push(s);
        loop {
            let s = env.step(toward(env.agent(), ORE)).unwrap();
            total += s.reward;
            let done = s.done;
            let success = s.success;
            log.push(s);
            if done {
                return (total, success, log);
            }
        }
    }

    #[test]
    fn adjacent_to_gold_hears_gold() {
        let mut env = Mining::new(0, false);
        for seed in 0..20 {
            env.reset(Some(seed));
            if env.ore() == Ore::Gold {
                env.step(ACTION_DOWN).unwrap();
                env.step(ACTION_RIGHT).unwrap();
                env.step(ACTION_RIGHT).unwrap();
                let s = env.step(ACTION_RIGHT).unwrap();
                assert!(env.ore_adjacent());
                assert_eq!(s.observation.cue, Some(AudioClass::Gold));
                return;
            }
        }
        panic!("no gold episode in 20 seeds");
    }

    #[test]
    fn audio_is_noise_away_from_ore() {
        let mut env = Mining::new(0, false);
        let obs = env.reset(Some(1));
        assert_eq!(obs.cue, None);
    }

    #[test]
    fn scripted_solver_mines_both_ores() {
        let mut seen = [false, false];
        for seed in 0..16 {
            let mut env = Mining::new(seed, false);
            env.reset(Some(seed));
            let ore = env.ore();
            let (total, success, _) = solve(&mut env);
            assert!(success, "seed {seed}");
            assert!(total > -30.0, "{total}");
            seen[usize::from(ore == Ore::Gold)] = true;
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn mining_without_the_right_tool_is_penalised() {
        let mut env = Mining::new(0, false);
        env.reset(Some(0));
        env.step(ACTION_DOWN).unwrap();
        env.step(ACTION_DOWN).unwrap();
        for _ in 0..3 {
            env.step(ACTION_RIGHT).unwrap();
        }
        assert_eq!(env.agent(), Pos::new(2, 3));
        let s = env.step(ACTION_RIGHT).unwrap();
        assert_eq!(s.reward, WRONG_TOOL_PENALTY);
        assert!(!s.done);
        assert_eq!(env.agent(), Pos::new(2, 3));
    }

    #[test]
    fn picking_ax_emits_hint() {
        let mut env = Mining::new(0, true);
        env.reset(Some(0));
        while env.agent() != AX_HOME {
            let a = toward(env.agent(), AX_HOME);
            let s = env.step(a).unwrap();
            assert!(!s.done);
        }
        let s = env.step(ACTION_PICK).unwrap();
        assert_eq!(env.held(), Some(Tool::Ax));
        assert_eq!(s.observation.parts[2], ModalityObs::Tokens(text::tokenize(Hint::GotAx.message())));
    }

    #[test]
    fn monster_contact_ends_episode() {
        let mut env = Mining::new(0, true);
        env.reset(Some(4));
        // walk straight at the monster
        let mut hurt = None;
        for _ in 0..40 {
            let m = env.monster().unwrap();
            let s = env.step(toward(env.agent(), m)).unwrap();
            if s.done {
                hurt = Some(s);
                break;
            }
        }
        let s = hurt.expect("monster reached");
        assert_eq!(s.reward, MONSTER_PENALTY);
        assert!(!s.success);
        assert_eq!(s.observation.parts[2], ModalityObs::Tokens(text::tokenize(Hint::HurtByTiger.message())));
    }

    #[test]
    fn plus_variant_is_solvable() {
        let mut successes = 0;
        for seed in 0..10 {
            let mut env = Mining::new(seed, true);
            env.reset(Some(seed));
            assert_eq!(env.ore(), Ore::Gold);
            let (_, success, _) = solve(&mut env);
            successes += usize::from(success);
        }
        assert!(successes >= 5, "{successes}");
    }
}
