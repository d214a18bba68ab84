//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, ParamId, ParamStore, Var};
use super::AutodiffError;
use crate::par;

/// Result for one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    /// Flat index, analytic and numeric gradient at the worst entry.
    pub worst: (usize, f64, f64),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub loss: f64,
    pub max_rel_error: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn entries(&self) -> usize {
        self.params.iter().map(|p| p.entries).sum()
    }

    pub fn worst_param(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<F, E>(builder: &F, store: &ParamStore) -> Result<f64, E>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, E>,
{
    let mut g = Graph::new(store);
    let loss = builder(&mut g)?;
    Ok(g.value(loss).item())
}

/// Checks every parameter entry of `params`.
pub fn grad_check<F, E>(builder: F, params: &ParamStore, epsilon: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, E> + Sync + Send,
    E: From<AutodiffError> + Send,
{
    grad_check_with(builder, params, epsilon, |_, _| true)
}

/// Checks the parameters accepted by `select`. Perturbations fan out over
/// chunks of entries, each working on its own copy of the store.
pub fn grad_check_with<F, E, S>(
    builder: F,
    params: &ParamStore,
    epsilon: f64,
    select: S,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, E> + Sync + Send,
    E: From<AutodiffError> + Send,
    S: Fn(ParamId, &str) -> bool,
{
    if !(epsilon > 0.0) {
        return Err(AutodiffError::BadEpsilon(epsilon).into());
    }

    let (loss, grads) = {
        let mut g = Graph::new(params);
        let loss = builder(&mut g)?;
        (g.value(loss).item(), g.backward(loss)?)
    };
    let again = eval(&builder, params)?;
    if again.to_bits() != loss.to_bits() {
        return Err(AutodiffError::NonDeterministic {
            first: loss,
            second: again,
        }
        .into());
    }

    const CHUNK: usize = 64;
    let mut tasks = Vec::new();
    for (id, name, t) in params.iter() {
        if !select(id, name) {
            continue;
        }
        let mut start = 0;
        while start < t.len() {
            let end = (start + CHUNK).min(t.len());
            tasks.push((id, start, end));
            start = end;
        }
    }

    let results = par::map(&tasks, |&(id, start, end)| -> Result<Vec<(f64, f64)>, E> {
        let mut local = params.clone();
        let mut out = Vec::with_capacity(end - start);
        for k in start..end {
            let orig = local.get(id).data()[k];
            local.get_mut(id).data_mut()[k] = orig + epsilon;
            let plus = eval(&builder, &local)?;
            local.get_mut(id).data_mut()[k] = orig - epsilon;
            let minus = eval(&builder, &local)?;
            local.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            out.push((grads.get(id).data()[k], numeric));
        }
        Ok(out)
    });

    let mut checks: Vec<ParamCheck> = Vec::new();
    for (&(id, start, _), res) in tasks.iter().zip(results) {
        let pairs = res?;
        let name = params.name(id);
        if checks.last().map(|c| c.name != name).unwrap_or(true) {
            checks.push(ParamCheck {
                name: name.to_string(),
                entries: 0,
                max_rel_error: 0.0,
                worst: (0, 0.0, 0.0),
            });
        }
        let check = checks.last_mut().expect("pushed above");
        for (offset, (a, n)) in pairs.into_iter().enumerate() {
            let err = relative_error(a, n);
            check.entries += 1;
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst = (start + offset, a, n);
            }
        }
    }

    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        loss,
        max_rel_error,
        params: checks,
    })
}
