//! State-representation losses over modality features: cross-modal
//! similarity, within-modality temporal discrimination, and their weighted sum.
//!
//! Features are `[L]` vectors for a single timestep or `[T, L]` matrices for a
//! rollout; distances are taken row by row.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Guards the cosine denominator against zero vectors.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    #[default]
    Cosine,
    SquaredEuclidean,
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceKind::Cosine => "cosine",
            DistanceKind::SquaredEuclidean => "squared_euclidean",
        })
    }
}

impl FromStr for DistanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(DistanceKind::Cosine),
            "squared_euclidean" => Ok(DistanceKind::SquaredEuclidean),
            _ => Err(format!("unknown distance `{s}` (expected cosine or squared_euclidean)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub c_sim: f64,
    pub c_td: f64,
    pub distance: DistanceKind,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig { c_sim: 0.1, c_td: 0.01, distance: DistanceKind::Cosine }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_sim", self.c_sim), ("c_td", self.c_td)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// The three loss terms of one evaluation, all scalars.
#[derive(Clone, Copy, Debug)]
pub struct SrlLosses {
    pub total: Var,
    pub sim: Var,
    pub td: Var,
}

fn as_rows(g: &mut Graph, v: Var) -> Result<Var> {
    match g.shape(v).len() {
        1 => {
            let n = g.shape(v)[0];
            Ok(g.reshape(v, vec![1, n])?)
        }
        2 => Ok(v),
        _ => Err(Error::Config(format!("features must be [L] or [T, L], got {:?}", g.shape(v)))),
    }
}

/// Row-wise distance between two `[T, L]` matrices, giving `[T]`.
pub fn row_distances(g: &mut Graph, a: Var, b: Var, kind: DistanceKind) -> Result<Var> {
    let (a, b) = (as_rows(g, a)?, as_rows(g, b)?);
    if g.shape(a) != g.shape(b) {
        return Err(Error::Config(format!("distance between {:?} and {:?}", g.shape(a), g.shape(b))));
    }
    let (t, l) = (g.shape(a)[0], g.shape(a)[1]);
    match kind {
        DistanceKind::Cosine => {
            let ab = g.mul(a, b)?;
            let dot = g.sum_axis(ab, 1)?;
            let aa = g.square(a)?;
            let bb = g.square(b)?;
            let na = g.sum_axis(aa, 1)?;
            let nb = g.sum_axis(bb, 1)?;
            let na = g.sqrt(na)?;
            let nb = g.sqrt(nb)?;
            let norms = g.mul(na, nb)?;
            let eps = g.constant(Tensor::full(&[t], COSINE_EPS));
            let denom = g.add(norms, eps)?;
            let cos = g.div(dot, denom)?;
            let one = g.constant(Tensor::full(&[t], 1.0));
            Ok(g.sub(one, cos)?)
        }
        DistanceKind::SquaredEuclidean => {
            let d = g.sub(a, b)?;
            let d2 = g.square(d)?;
            let s = g.sum_axis(d2, 1)?;
            Ok(g.scale(s, 1.0 / l as f64)?)
        }
    }
}

/// ψ[a | b] for two `[L]` vectors.
pub fn distance(g: &mut Graph, a: Var, b: Var, kind: DistanceKind) -> Result<Var> {
    let d = row_distances(g, a, b, kind)?;
    Ok(g.sum(d)?)
}

/// Sum of ψ over ordered modality pairs, averaged over timesteps.
pub fn loss_sim(g: &mut Graph, features: &[Var], kind: DistanceKind) -> Result<Var> {
    if features.len() < 2 {
        log::debug!("similarity loss with {} modality: zero", features.len());
        return Ok(g.scalar(0.0));
    }
    let mut terms = Vec::new();
    for (i, &fi) in features.iter().enumerate() {
        for (j, &fj) in features.iter().enumerate() {
            if i != j {
                terms.push(row_distances(g, fi, fj, kind)?);
            }
        }
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(g.mean(acc)?)
}

/// Negated sum over modalities and consecutive steps of ψ[f_t | f_{t+1}].
/// Each sequence is `[T, L]`.
pub fn loss_td(g: &mut Graph, sequences: &[Var], kind: DistanceKind) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &seq in sequences {
        let seq = as_rows(g, seq)?;
        let t = g.shape(seq)[0];
        if t < 2 {
            log::debug!("temporal loss over {t} step: zero");
            continue;
        }
        let head = g.slice(seq, 0, 0, t - 1)?;
        let tail = g.slice(seq, 0, 1, t - 1)?;
        let d = row_distances(g, head, tail, kind)?;
        let s = g.sum(d)?;
        total = Some(match total {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
    }
    match total {
        Some(s) => Ok(g.scale(s, -1.0)?),
        None => Ok(g.scalar(0.0)),
    }
}

/// `c_sim * loss_sim + c_td * loss_td` over per-modality `[T, L]` sequences.
pub fn loss_srl(g: &mut Graph, sequences: &[Var], cfg: &AlignmentConfig) -> Result<SrlLosses> {
    let sim = loss_sim(g, sequences, cfg.distance)?;
    let td = loss_td(g, sequences, cfg.distance)?;
    let a = g.scale(sim, cfg.c_sim)?;
    let b = g.scale(td, cfg.c_td)?;
    let total = g.add(a, b)?;
    Ok(SrlLosses { total, sim, td })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn vec_var(g: &mut Graph, v: &[f64]) -> Var {
        g.input(Tensor::vector(v.to_vec()))
    }

    fn mat(g: &mut Graph, rows: &[&[f64]]) -> Var {
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        g.input(Tensor::new(vec![rows.len(), rows[0].len()], data).unwrap())
    }

    fn eval(f: impl FnOnce(&mut Graph) -> Var) -> f64 {
        let mut g = Graph::new();
        let v = f(&mut g);
        g.value(v).item()
    }

    /// Plain-loop cosine distance.
    fn cosine_ref(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 - dot / (na * nb + COSINE_EPS)
    }

    #[test]
    fn cosine_self_and_antipodal() {
        let v = [0.3, -1.2, 2.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let same = eval(|g| {
            let (a, b) = (vec_var(g, &v), vec_var(g, &v));
            distance(g, a, b, DistanceKind::Cosine).unwrap()
        });
        assert!(same.abs() < 1e-8);
        let anti = eval(|g| {
            let (a, b) = (vec_var(g, &v), vec_var(g, &neg));
            distance(g, a, b, DistanceKind::Cosine).unwrap()
        });
        assert!((anti - 2.0).abs() < 1e-8);
    }

    #[test]
    fn cosine_of_zero_vector_is_finite() {
        let d = eval(|g| {
            let (a, b) = (vec_var(g, &[0.0, 0.0]), vec_var(g, &[1.0, 2.0]));
            distance(g, a, b, DistanceKind::Cosine).unwrap()
        });
        assert_eq!(d, 1.0);
    }

    #[test]
    fn squared_euclidean_unit_vectors() {
        let d = eval(|g| {
            let (a, b) = (vec_var(g, &[1.0, 0.0]), vec_var(g, &[0.0, 1.0]));
            distance(g, a, b, DistanceKind::SquaredEuclidean).unwrap()
        });
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut g = Graph::new();
        let (a, b) = (vec_var(&mut g, &[1.0, 0.0]), vec_var(&mut g, &[1.0]));
        assert!(distance(&mut g, a, b, DistanceKind::Cosine).is_err());
    }

    #[test]
    fn sim_identical_modalities_is_zero() {
        for kind in [DistanceKind::Cosine, DistanceKind::SquaredEuclidean] {
            let l = eval(|g| {
                let f: Vec<Var> = (0..3).map(|_| vec_var(g, &[0.5, 1.0, -2.0])).collect();
                loss_sim(g, &f, kind).unwrap()
            });
            // cosine carries an O(eps) offset per pair
            assert!(l.abs() < 1e-7, "{kind}");
        }
    }

    #[test]
    fn sim_two_modalities_counts_both_directions() {
        let (a, b) = ([1.0, 2.0, 0.5], [-0.3, 0.8, 1.1]);
        let l = eval(|g| {
            let f = [vec_var(g, &a), vec_var(g, &b)];
            loss_sim(g, &f, DistanceKind::Cosine).unwrap()
        });
        assert_abs_diff_eq!(l, 2.0 * cosine_ref(&a, &b), epsilon = 1e-12);
    }

    #[test]
    fn sim_three_orthogonal_units_is_six() {
        let l = eval(|g| {
            let f = [vec_var(g, &[1.0, 0.0, 0.0]), vec_var(g, &[0.0, 1.0, 0.0]), vec_var(g, &[0.0, 0.0, 1.0])];
            loss_sim(g, &f, DistanceKind::Cosine).unwrap()
        });
        assert_abs_diff_eq!(l, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn sim_single_modality_is_zero() {
        let l = eval(|g| {
            let f = [vec_var(g, &[1.0, 0.0])];
            loss_sim(g, &f, DistanceKind::Cosine).unwrap()
        });
        assert_eq!(l, 0.0);
    }

    #[test]
    fn td_examples() {
        let constant = eval(|g| {
            let s = mat(g, &[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
            loss_td(g, &[s], DistanceKind::Cosine).unwrap()
        });
        assert!(constant.abs() < 1e-8);
        let single = eval(|g| {
            let s = mat(g, &[&[1.0, 0.0], &[0.0, 1.0]]);
            loss_td(g, &[s], DistanceKind::Cosine).unwrap()
        });
        assert_abs_diff_eq!(single, -1.0, epsilon = 1e-12);
        let two = eval(|g| {
            let a = mat(g, &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]]);
            let b = mat(g, &[&[0.0, 2.0], &[3.0, 0.0], &[0.0, 1.0]]);
            loss_td(g, &[a, b], DistanceKind::Cosine).unwrap()
        });
        assert_abs_diff_eq!(two, -4.0, epsilon = 1e-12);
        let short = eval(|g| {
            let s = mat(g, &[&[1.0, 0.0]]);
            loss_td(g, &[s], DistanceKind::Cosine).unwrap()
        });
        assert_eq!(short, 0.0);
    }

    #[test]
    fn srl_is_linear_in_its_terms() {
        let cfg = AlignmentConfig { c_sim: 1.0, c_td: 1.0, distance: DistanceKind::Cosine };
        let mut g = Graph::new();
        let a = mat(&mut g, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = mat(&mut g, &[&[0.0, 1.0], &[0.0, 1.0]]);
        let l = loss_srl(&mut g, &[a, b], &cfg).unwrap();
        // sim: t0 orthogonal (2 per step), t1 identical (0) -> mean 1; td: -1 + 0
        assert_abs_diff_eq!(g.value(l.sim).item(), 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(g.value(l.td).item(), -1.0, epsilon = 1e-7);
        let sum = g.value(l.sim).item() + g.value(l.td).item();
        assert_abs_diff_eq!(g.value(l.total).item(), sum, epsilon = 1e-15);

        let zero = AlignmentConfig { c_sim: 0.0, c_td: 0.0, ..cfg };
        let l = loss_srl(&mut g, &[a, b], &zero).unwrap();
        assert_eq!(g.value(l.total).item(), 0.0);
    }

    #[test]
    fn negative_coefficients_are_rejected() {
        assert!(AlignmentConfig { c_sim: -0.1, ..Default::default() }.validate().is_err());
        assert!(AlignmentConfig { c_td: f64::NAN, ..Default::default() }.validate().is_err());
        assert!(AlignmentConfig::default().validate().is_ok());
    }

    #[test]
    fn srl_gradient_matches_finite_differences() {
        for kind in [DistanceKind::Cosine, DistanceKind::SquaredEuclidean] {
            let cfg = AlignmentConfig { c_sim: 0.7, c_td: 0.3, distance: kind };
            let a = Tensor::new(vec![3, 4], (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.4 + 0.1).collect()).unwrap();
            let b = Tensor::new(vec![3, 4], (0..12).map(|i| ((i * 3 % 7) as f64 - 3.0) * 0.3 - 0.05).collect()).unwrap();
            let report = grad_check(
                |g, x| Ok(loss_srl(g, x, &cfg).unwrap().total),
                &[a, b],
                1e-6,
                1e-4,
            )
            .unwrap();
            assert!(report.passed(), "{kind}: {:?}", report.max_rel_err);
        }
    }

    fn mean_pair_cosine(a: &[f64], b: &[f64], l: usize) -> f64 {
        let t = a.len() / l;
        (0..t).map(|i| cosine_ref(&a[i * l..(i + 1) * l], &b[i * l..(i + 1) * l])).sum::<f64>() / t as f64
    }

    fn mean_consecutive_cosine(a: &[f64], l: usize) -> f64 {
        let t = a.len() / l;
        (0..t - 1).map(|i| cosine_ref(&a[i * l..(i + 1) * l], &a[(i + 1) * l..(i + 2) * l])).sum::<f64>()
            / (t - 1) as f64
    }

    /// Plain gradient descent on raw feature matrices.
    fn descend(
        mut feats: Vec<Vec<f64>>,
        shape: [usize; 2],
        lr: f64,
        steps: usize,
        loss: impl Fn(&mut Graph, &[Var]) -> Var,
        mut observe: impl FnMut(&[Vec<f64>]),
    ) {
        for _ in 0..steps {
            let mut g = Graph::new();
            let vars: Vec<Var> =
                feats.iter().map(|f| g.input(Tensor::new(shape.to_vec(), f.clone()).unwrap())).collect();
            let l = loss(&mut g, &vars);
            g.backward(l).unwrap();
            for (f, v) in feats.iter_mut().zip(&vars) {
                for (x, d) in f.iter_mut().zip(g.grad(*v).unwrap()) {
                    *x -= lr * d;
                }
            }
            observe(&feats);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn distance_is_symmetric_and_bounded(
            a in prop::collection::vec(-5.0f64..5.0, 6),
            b in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            for kind in [DistanceKind::Cosine, DistanceKind::SquaredEuclidean] {
                let ab = eval(|g| { let (x, y) = (vec_var(g, &a), vec_var(g, &b)); distance(g, x, y, kind).unwrap() });
                let ba = eval(|g| { let (x, y) = (vec_var(g, &b), vec_var(g, &a)); distance(g, x, y, kind).unwrap() });
                prop_assert!((ab - ba).abs() <= 1e-12);
                prop_assert!(ab >= -1e-12);
                if kind == DistanceKind::Cosine {
                    prop_assert!(ab <= 2.0 + 1e-12);
                    prop_assert!((ab - cosine_ref(&a, &b)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn descending_sim_pulls_modalities_together(
            a in prop::collection::vec(-1.0f64..1.0, 16),
            b in prop::collection::vec(-1.0f64..1.0, 16),
        ) {
            prop_assume!(mean_pair_cosine(&a, &b, 8) > 0.05);
            let mut history = vec![mean_pair_cosine(&a, &b, 8)];
            descend(vec![a, b], [2, 8], 0.05, 50,
                |g, v| loss_sim(g, v, DistanceKind::Cosine).unwrap(),
                |f| history.push(mean_pair_cosine(&f[0], &f[1], 8)));
            for w in history.windows(2) {
                prop_assert!(w[1] < w[0], "{:?}", history);
            }
        }

        #[test]
        fn descending_td_pushes_steps_apart(
            a in prop::collection::vec(-1.0f64..1.0, 24),
        ) {
            let start = mean_consecutive_cosine(&a, 8);
            prop_assume!(start < 1.9);
            let mut history = vec![start];
            descend(vec![a], [3, 8], 0.05, 50,
                |g, v| loss_td(g, v, DistanceKind::Cosine).unwrap(),
                |f| history.push(mean_consecutive_cosine(&f[0], 8)));
            for w in history.windows(2) {
                prop_assert!(w[1] > w[0] || w[0] > 2.0 - 1e-6, "{:?}", history);
            }
        }
    }
}
