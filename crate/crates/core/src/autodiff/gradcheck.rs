use super::{AutodiffError, Graph, Tensor, Var};

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Per input: max over elements of `|numeric - analytic| / max(1, |analytic|)`.
    pub max_rel_err: Vec<f64>,
    pub rel_tol: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_err.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() < self.rel_tol
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(Graph, Vec<Var>, Var), AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok((g, vars, out))
}

/// Checks the gradient of the scalar function `f` at `inputs`.
///
/// `f` builds its computation on the supplied graph from the given input
/// handles and returns the scalar output. It must be deterministic.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64, rel_tol: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let (mut g, vars, out) = evaluate(&f, inputs)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let scalar_at = |perturbed: &[Tensor], input: usize, index: usize| -> Result<f64, AutodiffError> {
        let (g, _, out) = evaluate(&f, perturbed)?;
        let v = g.value(out).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(AutodiffError::NonFinite { input, index })
        }
    };

    let mut max_rel_err = Vec::with_capacity(inputs.len());
    for (i, t) in inputs.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..t.len() {
            let mut work = inputs.to_vec();
            work[i].data_mut()[j] = t.data()[j] + step;
            let plus = scalar_at(&work, i, j)?;
            work[i].data_mut()[j] = t.data()[j] - step;
            let minus = scalar_at(&work, i, j)?;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i][j];
            if !a.is_finite() {
                return Err(AutodiffError::NonFinite { input: i, index: j });
            }
            worst = worst.max((numeric - a).abs() / a.abs().max(1.0));
        }
        max_rel_err.push(worst);
    }
    Ok(GradCheckReport { max_rel_err, rel_tol })
}
