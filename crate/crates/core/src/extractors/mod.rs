//! Per-modality feature extractors: a small CNN (or TextCNN over token
//! embeddings) followed by an LSTM whose hidden state is the modality's
//! feature vector.

mod checkpoint;
mod lstm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::envs::{ModalityObs, ModalitySpec, ObsShape};
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use lstm::Lstm;

/// Feature dimension shared by every modality.
pub const FEATURE_DIM: usize = 32;
pub const IMAGE_FILTERS: usize = 32;
pub const TEXT_FILTERS: usize = 3;
pub const EMBED_DIM: usize = 8;

/// LSTM hidden and cell vectors of one extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros() -> Self {
        RecurrentState { h: vec![0.0; FEATURE_DIM], c: vec![0.0; FEATURE_DIM] }
    }

    pub fn is_zero(&self) -> bool {
        self.h.iter().chain(&self.c).all(|v| *v == 0.0)
    }
}

impl Default for RecurrentState {
    fn default() -> Self {
        Self::zeros()
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    padding: usize,
}

/// Feature extractor for one modality.
#[derive(Clone, Debug)]
pub struct Extractor {
    spec: ModalitySpec,
    embedding: Option<ParamId>,
    convs: Vec<ConvLayer>,
    flat_dim: usize,
    lstm: Lstm,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}

impl Extractor {
    /// Registers the extractor's parameters in `store`, initialised from `rng`.
    pub fn new(spec: ModalitySpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let prefix = spec.modality.name();
        let (mut channels, mut height, mut width, filters, kernel, stride, padding) = match spec.shape {
            ObsShape::Image { channels, height, width } => (channels, height, width, IMAGE_FILTERS, 3, 2, 1),
            ObsShape::Tokens { len, .. } => (1, len, EMBED_DIM, TEXT_FILTERS, 2, 1, 1),
        };
        let embedding = match spec.shape {
            ObsShape::Tokens { vocab, .. } => {
                let bound = 3f64.sqrt();
                Some(store.add(format!("{prefix}.embedding"), uniform(rng, &[vocab, EMBED_DIM], bound)))
            }
            ObsShape::Image { .. } => None,
        };
        let mut convs = Vec::with_capacity(3);
        for layer in 0..3 {
            let fan_in = channels * kernel * kernel;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight =
                store.add(format!("{prefix}.conv{layer}.weight"), uniform(rng, &[filters, channels, kernel, kernel], bound));
            let bias = store.add(format!("{prefix}.conv{layer}.bias"), uniform(rng, &[filters], bound));
            convs.push(ConvLayer { weight, bias, stride, padding });
            channels = filters;
            height = conv_out(height, kernel, stride, padding);
            width = conv_out(width, kernel, stride, padding);
        }
        let flat_dim = channels * height * width;
        let lstm = Lstm::new(&format!("{prefix}.lstm"), flat_dim, FEATURE_DIM, store, rng);
        Extractor { spec, embedding, convs, flat_dim, lstm }
    }

    pub fn spec(&self) -> ModalitySpec {
        self.spec
    }

    /// Size of the flattened CNN output fed to the LSTM.
    pub fn flat_dim(&self) -> usize {
        self.flat_dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.embedding.into_iter().collect();
        for c in &self.convs {
            ids.extend([c.weight, c.bias]);
        }
        ids.extend(self.lstm.param_ids());
        ids
    }

    /// Parameter ids of the convolution stack only.
    pub fn conv_param_ids(&self) -> Vec<ParamId> {
        self.convs.iter().flat_map(|c| [c.weight, c.bias]).collect()
    }

    fn check(&self, obs: &ModalityObs) -> Result<()> {
        if obs.fits(&self.spec.shape) {
            Ok(())
        } else {
            Err(Error::ObservationShape {
                modality: self.spec.modality,
                expected: self.spec.shape.to_string(),
                got: obs.describe(),
            })
        }
    }

    /// Runs the convolution stack over a batch of observations, returning
    /// `[N, flat_dim]`.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, obs: &[&ModalityObs]) -> Result<Var> {
        if obs.is_empty() {
            return Err(Error::EmptyBatch("extractor"));
        }
        for o in obs {
            self.check(o)?;
        }
        let n = obs.len();
        let mut x = match self.spec.shape {
            ObsShape::Image { channels, height, width } => {
                let mut data = Vec::with_capacity(n * channels * height * width);
                for o in obs {
                    if let ModalityObs::Image(t) = o {
                        data.extend_from_slice(t.data());
                    }
                }
                g.constant(Tensor::new(vec![n, channels, height, width], data)?)
            }
            ObsShape::Tokens { len, vocab } => {
                let mut one_hot = vec![0.0; n * len * vocab];
                let mut row = 0;
                for o in obs {
                    if let ModalityObs::Tokens(ids) = o {
                        for &id in ids {
                            one_hot[row * vocab + id] = 1.0;
                            row += 1;
                        }
                    }
                }
                let one_hot = g.constant(Tensor::new(vec![n * len, vocab], one_hot)?);
                let table = g.param(store, self.embedding.expect("text extractor has an embedding"));
                let embedded = g.matmul(one_hot, table)?;
                g.reshape(embedded, vec![n, 1, len, EMBED_DIM])?
            }
        };
        for c in &self.convs {
            let w = g.param(store, c.weight);
            let b = g.param(store, c.bias);
            x = g.conv2d(x, w, Some(b), c.stride, c.padding)?;
            x = g.relu(x)?;
        }
        Ok(g.reshape(x, vec![n, self.flat_dim])?)
    }

    /// Feature of a single observation: `[FEATURE_DIM]` plus the next state.
    pub fn extract(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        obs: &ModalityObs,
        state: &RecurrentState,
    ) -> Result<(Var, RecurrentState)> {
        let (seq, next) = self.extract_sequence(g, store, &[obs], &[false], state)?;
        Ok((g.reshape(seq, vec![FEATURE_DIM])?, next))
    }

    /// Features of a time-ordered sequence, `[T, FEATURE_DIM]`. The state is
    /// zeroed before any step flagged in `resets` (first step of an episode).
    /// `init` enters the graph as a constant, so gradients stop at the
    /// sequence boundary.
    pub fn extract_sequence(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        obs: &[&ModalityObs],
        resets: &[bool],
        init: &RecurrentState,
    ) -> Result<(Var, RecurrentState)> {
        if resets.len() != obs.len() {
            return Err(Error::Config(format!("{} observations but {} reset flags", obs.len(), resets.len())));
        }
        let x = self.encode(g, store, obs)?;
        let proj = self.lstm.project_inputs(g, store, x)?;
        let zero = g.constant(Tensor::zeros(&[1, FEATURE_DIM]));
        let mut h = g.constant(Tensor::new(vec![1, FEATURE_DIM], init.h.clone())?);
        let mut c = g.constant(Tensor::new(vec![1, FEATURE_DIM], init.c.clone())?);
        let mut outs = Vec::with_capacity(obs.len());
        for (t, &reset) in resets.iter().enumerate() {
            if reset {
                h = zero;
                c = zero;
            }
            let row = g.slice(proj, 0, t, 1)?;
            (h, c) = self.lstm.cell(g, store, row, h, c)?;
            outs.push(h);
        }
        let next = RecurrentState { h: g.value(h).to_vec(), c: g.value(c).to_vec() };
        Ok((g.concat(&outs, 0)?, next))
    }
}

/// One extractor per modality, in the environment's modality order.
#[derive(Clone, Debug)]
pub struct Extractors {
    list: Vec<Extractor>,
}

impl Extractors {
    pub fn new(specs: &[ModalitySpec], store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        Extractors { list: specs.iter().map(|s| Extractor::new(*s, store, rng)).collect() }
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Extractor> {
        self.list.iter()
    }

    pub fn get(&self, i: usize) -> &Extractor {
        &self.list[i]
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.list.iter().flat_map(Extractor::param_ids).collect()
    }

    pub fn initial_states(&self) -> Vec<RecurrentState> {
        vec![RecurrentState::zeros(); self.list.len()]
    }
}

/// Fresh extractors and parameter store, deterministic in `seed`.
pub fn init_parameters(specs: &[ModalitySpec], seed: u64) -> (Extractors, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ex = Extractors::new(specs, &mut store, &mut rng);
    (ex, store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{text, EnvKind, Modality};

    fn spec_of(kind: EnvKind, modality: Modality) -> ModalitySpec {
        let env = kind.build(0);
        *env.modalities().iter().find(|s| s.modality == modality).unwrap()
    }

    fn random_image(shape: &[usize], seed: u64) -> ModalityObs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModalityObs::Image(uniform(&mut rng, shape, 1.0))
    }

    #[test]
    fn visual_conv_stack_parameter_count() {
        let spec = spec_of(EnvKind::AvNav, Modality::Visual);
        let (ex, store) = init_parameters(&[spec], 0);
        let conv = store.numel_of(&ex.get(0).conv_param_ids());
        let expected: usize = [3, 32, 32].iter().map(|c_in| 3 * 3 * c_in * 32 + 32).sum();
        assert_eq!(conv, expected);
        // 10 -> 5 -> 3 -> 2
        assert_eq!(ex.get(0).flat_dim(), 32 * 2 * 2);
    }

    #[test]
    fn text_stack_flattens_to_495() {
        let spec = spec_of(EnvKind::MiningPlus, Modality::Text);
        let (ex, _) = init_parameters(&[spec], 0);
        assert_eq!(ex.get(0).flat_dim(), 3 * 15 * 11);
    }

    #[test]
    fn lstm_forget_bias_is_one() {
        let spec = spec_of(EnvKind::HeteroNav, Modality::Audio);
        let (_, store) = init_parameters(&[spec], 4);
        let b = store.value(store.find("audio.lstm.bias").unwrap()).data().to_vec();
        assert!(b[FEATURE_DIM..2 * FEATURE_DIM].iter().all(|v| *v == 1.0));
        assert!(b[..FEATURE_DIM].iter().all(|v| v.abs() <= 1.0 / (FEATURE_DIM as f64).sqrt()));
    }

    #[test]
    fn init_is_seeded() {
        let specs: Vec<ModalitySpec> = EnvKind::MiningPlus.build(0).modalities().to_vec();
        let a = init_parameters(&specs, 9).1.to_saved();
        let b = init_parameters(&specs, 9).1.to_saved();
        let c = init_parameters(&specs, 10).1.to_saved();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn every_modality_yields_feature_dim() {
        for kind in EnvKind::ALL {
            let mut env = kind.build(1);
            let obs = env.reset(Some(1));
            let (ex, store) = init_parameters(env.modalities(), 1);
            for (e, part) in ex.iter().zip(&obs.parts) {
                let mut g = Graph::no_grad();
                let (f, next) = e.extract(&mut g, &store, part, &RecurrentState::zeros()).unwrap();
                assert_eq!(g.shape(f), [FEATURE_DIM]);
                assert_eq!(next.h.len(), FEATURE_DIM);
                assert!(!next.is_zero());
            }
        }
    }

    #[test]
    fn zero_input_is_deterministic_and_inputs_are_distinguished() {
        let spec = spec_of(EnvKind::HeteroNav, Modality::Visual);
        let (ex, store) = init_parameters(&[spec], 2);
        let e = ex.get(0);
        let zero = ModalityObs::Image(Tensor::zeros(&[2, 10, 10]));
        let run = |o: &ModalityObs| {
            let mut g = Graph::no_grad();
            let (f, _) = e.extract(&mut g, &store, o, &RecurrentState::zeros()).unwrap();
            g.value(f).to_vec()
        };
        assert_eq!(run(&zero), run(&zero));
        let other = random_image(&[2, 10, 10], 5);
        let diff: f64 = run(&zero).iter().zip(run(&other)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-9);
    }

    #[test]
    fn wrong_shape_names_the_modality() {
        let spec = spec_of(EnvKind::HeteroNav, Modality::Audio);
        let (ex, store) = init_parameters(&[spec], 2);
        let mut g = Graph::no_grad();
        let err = ex.get(0).extract(&mut g, &store, &random_image(&[2, 10, 10], 0), &RecurrentState::zeros()).unwrap_err();
        assert!(err.to_string().contains("audio"), "{err}");
        let err = ex.get(0).extract(&mut g, &store, &ModalityObs::Tokens(text::padding()), &RecurrentState::zeros());
        assert!(err.is_err());
    }

    #[test]
    fn sequence_matches_stepwise_extraction_and_resets() {
        let spec = spec_of(EnvKind::MiningPlus, Modality::Text);
        let (ex, store) = init_parameters(&[spec], 3);
        let e = ex.get(0);
        let seq: Vec<ModalityObs> = [text::Hint::FindGold, text::Hint::NoAx, text::Hint::GotAx, text::Hint::GotGold]
            .iter()
            .map(|h| ModalityObs::Tokens(text::tokenize(h.message())))
            .collect();
        let refs: Vec<&ModalityObs> = seq.iter().collect();
        let resets = [false, false, true, false];
        let init = {
            let mut g = Graph::no_grad();
            e.extract(&mut g, &store, &seq[3], &RecurrentState::zeros()).unwrap().1
        };
        let mut g = Graph::no_grad();
        let (batch, last) = e.extract_sequence(&mut g, &store, &refs, &resets, &init).unwrap();
        let batch = g.value(batch).to_vec();
        let mut state = init.clone();
        for (t, o) in seq.iter().enumerate() {
            if resets[t] {
                state = RecurrentState::zeros();
            }
            let mut g = Graph::no_grad();
            let (f, next) = e.extract(&mut g, &store, o, &state).unwrap();
            let row = &batch[t * FEATURE_DIM..(t + 1) * FEATURE_DIM];
            for (a, b) in g.value(f).data().iter().zip(row) {
                assert!((a - b).abs() < 1e-12);
            }
            state = next;
        }
        assert_eq!(state, last);
    }

    /// Finite differences on the parameter store itself, independent of the
    /// graph's adjoints.
    fn check_param_grads(spec: ModalitySpec, obs: Vec<ModalityObs>, seed: u64) {
        let (ex, mut store) = init_parameters(&[spec], seed);
        let e = ex.get(0).clone();
        let refs: Vec<ModalityObs> = obs;
        let resets = vec![false; refs.len()];
        let loss_of = |store: &ParamStore| {
            let r: Vec<&ModalityObs> = refs.iter().collect();
            let mut g = Graph::new();
            let (f, _) = e.extract_sequence(&mut g, store, &r, &resets, &RecurrentState::zeros()).unwrap();
            let sq = g.square(f).unwrap();
            let l = g.sum(sq).unwrap();
            (g, l)
        };
        let (mut g, l) = loss_of(&store);
        g.backward(l).unwrap();
        store.zero_grad();
        g.accumulate_param_grads(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let h = 1e-6;
        for id in e.param_ids() {
            let n = store.value(id).len();
            for _ in 0..4 {
                let i = rng.random_range(0..n);
                let analytic = store.grad(id)[i];
                let orig = store.value(id).data()[i];
                store.get_mut(id).value.data_mut()[i] = orig + h;
                let (g1, l1) = loss_of(&store);
                let plus = g1.value(l1).item();
                store.get_mut(id).value.data_mut()[i] = orig - h;
                let (g2, l2) = loss_of(&store);
                let minus = g2.value(l2).item();
                store.get_mut(id).value.data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let rel = (numeric - analytic).abs() / analytic.abs().max(1.0);
                assert!(rel < 1e-4, "{} [{i}]: numeric {numeric} analytic {analytic}", store.get(id).name);
            }
        }
    }

    #[test]
    fn visual_extractor_gradients_match_finite_differences() {
        let spec = spec_of(EnvKind::TargetSelect, Modality::Visual);
        check_param_grads(spec, vec![random_image(&[3, 10, 10], 1), random_image(&[3, 10, 10], 2)], 11);
    }

    #[test]
    fn audio_extractor_gradients_match_finite_differences() {
        let spec = spec_of(EnvKind::Mining, Modality::Audio);
        check_param_grads(spec, vec![random_image(&[1, 16, 16], 3), random_image(&[1, 16, 16], 4)], 12);
    }

    #[test]
    fn text_extractor_gradients_match_finite_differences() {
        let spec = spec_of(EnvKind::MiningPlus, Modality::Text);
        let obs = vec![
            ModalityObs::Tokens(text::tokenize(text::Hint::GotAx.message())),
            ModalityObs::Tokens(text::tokenize(text::Hint::HurtByTiger.message())),
        ];
        check_param_grads(spec, obs, 13);
    }

    #[test]
    fn episode_feature_sequences_are_deterministic() {
        let run = || {
            let mut env = EnvKind::AvNav.build(6);
            let (ex, store) = init_parameters(env.modalities(), 6);
            let mut obs = env.reset(Some(6));
            let mut states = ex.initial_states();
            let mut out = Vec::new();
            for t in 0..12 {
                let mut g = Graph::no_grad();
                for (i, e) in ex.iter().enumerate() {
                    let (f, next) = e.extract(&mut g, &store, &obs.parts[i], &states[i]).unwrap();
                    out.extend(g.value(f).to_vec());
                    states[i] = next;
                }
                obs = env.step(t % 4).unwrap().observation;
            }
            out
        };
        assert_eq!(run(), run());
    }
}
