use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Environment, MultimodalObservation, Step};
use crate::error::Result;

/// One line of a replay log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub step: usize,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub rng: u64,
}

/// Wraps an environment and logs every transition.
pub struct ReplayRecorder<E> {
    env: E,
    entries: Vec<ReplayEntry>,
}

impl<E: Environment> ReplayRecorder<E> {
    pub fn new(env: E) -> Self {
        ReplayRecorder { env, entries: Vec::new() }
    }

    pub fn reset(&mut self, seed: Option<u64>) -> MultimodalObservation {
        self.env.reset(seed)
    }

    pub fn step(&mut self, action: usize) -> Result<Step> {
        let s = self.env.step(action)?;
        self.entries.push(ReplayEntry {
            step: self.entries.len(),
            action,
            reward: s.reward,
            done: s.done,
            rng: self.env.rng_fingerprint(),
        });
        Ok(s)
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    pub fn into_inner(self) -> (E, Vec<ReplayEntry>) {
        (self.env, self.entries)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl ReplayEntry {
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<ReplayEntry>> {
        let mut out = Vec::new();
        for line in r.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::Mining;

    #[test]
    fn log_round_trips_and_is_reproducible() {
        let run = || {
            let mut rec = ReplayRecorder::new(Mining::new(8, true));
            rec.reset(Some(8));
            for i in 0..30 {
                if rec.step(i % 5).unwrap().done {
                    rec.reset(None);
                }
            }
            rec
        };
        let a = run();
        let mut buf = Vec::new();
        a.write_jsonl(&mut buf).unwrap();
        let parsed = ReplayEntry::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(parsed, a.entries());
        assert_eq!(run().entries(), a.entries());
        assert_eq!(parsed.len(), 30);
    }
}
