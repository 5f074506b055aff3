use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Discounted targets by the backward recursion `R_t = r_t + γ R_{t+1}`,
/// cut at episode ends and seeded with `bootstrap` after the last step.
pub fn compute_returns(rewards: &[f64], dones: &[bool], gamma: f64, bootstrap: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::EmptyBatch("compute_returns"));
    }
    if rewards.len() != dones.len() {
        return Err(Error::Config(format!("{} rewards but {} done flags", rewards.len(), dones.len())));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            next = 0.0;
        }
        next = rewards[t] + gamma * next;
        out[t] = next;
    }
    Ok(out)
}

/// A categorical distribution given by logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl Categorical {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::EmptyBatch("categorical"));
        }
        if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
            return Err(Error::NonFinite { what: "policy logits", detail: format!("logit {i} in {logits:?}") });
        }
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = top + logits.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|l| l - log_z).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Ok(Categorical { probs, log_probs })
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().zip(&self.log_probs).map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 }).sum::<f64>()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// `½ mean((R - V)²)` for values `[T]` or `[T, 1]`.
pub fn loss_critic(g: &mut Graph, values: Var, returns: &[f64]) -> Result<Var> {
    let n = g.value(values).len();
    if n != returns.len() {
        return Err(Error::Config(format!("{n} values but {} returns", returns.len())));
    }
    let v = g.reshape(values, vec![n])?;
    let r = g.constant(Tensor::vector(returns.to_vec()));
    let diff = g.sub(r, v)?;
    let sq = g.square(diff)?;
    let m = g.mean(sq)?;
    Ok(g.scale(m, 0.5)?)
}

/// Terms of the policy loss, all scalars.
#[derive(Clone, Copy, Debug)]
pub struct ActorLoss {
    /// Policy-gradient term minus the entropy bonus.
    pub total: Var,
    pub policy_gradient: Var,
    pub entropy: Var,
}

/// `-mean(log π(a_t) A_t) - entropy_coef · mean entropy` over logits `[T, A]`.
/// Advantages enter as constants.
pub fn loss_actor(
    g: &mut Graph,
    logits: Var,
    actions: &[usize],
    advantages: &[f64],
    entropy_coef: f64,
) -> Result<ActorLoss> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != actions.len() || actions.len() != advantages.len() {
        return Err(Error::Config(format!(
            "logits {:?} for {} actions and {} advantages",
            shape,
            actions.len(),
            advantages.len()
        )));
    }
    let (t, a) = (shape[0], shape[1]);
    if let Some(bad) = actions.iter().find(|x| **x >= a) {
        return Err(Error::InvalidAction { action: *bad, count: a });
    }
    let mut mask = vec![0.0; t * a];
    for (i, &act) in actions.iter().enumerate() {
        mask[i * a + act] = 1.0;
    }
    let logp = g.log_softmax(logits, 1)?;
    let mask = g.constant(Tensor::new(vec![t, a], mask)?);
    let chosen = g.mul(logp, mask)?;
    let chosen = g.sum_axis(chosen, 1)?;
    let adv = g.constant(Tensor::vector(advantages.to_vec()));
    let weighted = g.mul(chosen, adv)?;
    let pg = g.mean(weighted)?;
    let pg = g.scale(pg, -1.0)?;
    let probs = g.softmax(logits, 1)?;
    let plogp = g.mul(probs, logp)?;
    let per_step = g.sum_axis(plogp, 1)?;
    let neg_entropy = g.mean(per_step)?;
    let entropy = g.scale(neg_entropy, -1.0)?;
    let bonus = g.scale(neg_entropy, entropy_coef)?;
    let total = g.add(pg, bonus)?;
    Ok(ActorLoss { total, policy_gradient: pg, entropy })
}
