use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};

/// Single-layer LSTM. Gate blocks are laid out `[input, forget, cell, output]`
/// along the last axis of every weight.
#[derive(Clone, Debug)]
pub struct Lstm {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    hidden: usize,
}

impl Lstm {
    pub fn new(prefix: &str, input: usize, hidden: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
        let w_ih = Tensor::new(vec![input, 4 * hidden], draw(input * 4 * hidden)).expect("shape");
        let w_hh = Tensor::new(vec![hidden, 4 * hidden], draw(hidden * 4 * hidden)).expect("shape");
        let mut b = draw(4 * hidden);
        b[hidden..2 * hidden].fill(1.0);
        let bias = Tensor::new(vec![4 * hidden], b).expect("shape");
        Lstm {
            w_ih: store.add(format!("{prefix}.w_ih"), w_ih),
            w_hh: store.add(format!("{prefix}.w_hh"), w_hh),
            bias: store.add(format!("{prefix}.bias"), bias),
            hidden,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 3] {
        [self.w_ih, self.w_hh, self.bias]
    }

    /// `x W_ih + b` for a whole `[T, input]` sequence at once.
    pub fn project_inputs(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let w = g.param(store, self.w_ih);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add_bias(xw, b)
    }

    /// One step from a projected input row `[1, 4H]`; returns `(h, c)`.
    pub fn cell(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        projected: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var), AutodiffError> {
        let w = g.param(store, self.w_hh);
        let hw = g.matmul(h, w)?;
        let z = g.add(projected, hw)?;
        let n = self.hidden;
        let i = g.slice(z, 1, 0, n)?;
        let f = g.slice(z, 1, n, n)?;
        let cand = g.slice(z, 1, 2 * n, n)?;
        let o = g.slice(z, 1, 3 * n, n)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let cand = g.tanh(cand)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next)?;
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}
