use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

pub const HIDDEN: [usize; 2] = [256, 64];

/// Fully connected network `input -> 256 -> 64 -> output` with ReLU between
/// layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    output: usize,
}

impl Mlp {
    /// Hidden layers use the uniform fan-in scheme; the output layer is
    /// scaled by `output_scale` (0 gives a zero-initialised output).
    pub fn new(
        prefix: &str,
        input: usize,
        output: usize,
        output_scale: f64,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let sizes = [input, HIDDEN[0], HIDDEN[1], output];
        let mut layers = Vec::with_capacity(3);
        for (i, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let mut bound = 1.0 / (fan_in as f64).sqrt();
            if i == 2 {
                bound *= output_scale;
            }
            let mut draw = |n: usize| -> Vec<f64> {
                (0..n).map(|_| if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 }).collect()
            };
            let w = Tensor::new(vec![fan_in, fan_out], draw(fan_in * fan_out)).expect("shape");
            let b = Tensor::new(vec![fan_out], draw(fan_out)).expect("shape");
            layers.push((store.add(format!("{prefix}.fc{i}.weight"), w), store.add(format!("{prefix}.fc{i}.bias"), b)));
        }
        Mlp { layers, output }
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|(w, b)| [*w, *b]).collect()
    }

    /// Maps `[N, input]` to `[N, output]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wv = g.param(store, *w);
            let bv = g.param(store, *b);
            let z = g.matmul(h, wv)?;
            h = g.add_bias(z, bv)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}
