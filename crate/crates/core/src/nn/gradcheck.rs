use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `(parameter name, relative error)` per checked parameter.
    pub per_param: Vec<(String, f64)>,
    pub max_relative_error: f64,
}

/// Compares reverse-mode gradients with central finite differences.
///
/// The relative error of a parameter tensor is
/// `‖g_auto − g_fd‖ / max(‖g_auto‖ + ‖g_fd‖, 1e-12)`; the report carries the
/// maximum over `ids`. `build` must construct the same scalar loss for any
/// parameter values.
pub fn grad_check<F>(store: &mut ParamStore, ids: &[ParamId], eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backward(loss, store)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        Ok(tape.value(loss).item())
    };

    let mut per_param = Vec::with_capacity(ids.len());
    let mut max_rel = 0.0f64;
    for &id in ids {
        let analytic = store.grad(id).clone();
        let n = analytic.data().len();
        let mut diff_sq = 0.0;
        let mut numeric_sq = 0.0;
        for i in 0..n {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            diff_sq += (analytic.data()[i] - numeric).powi(2);
            numeric_sq += numeric * numeric;
        }
        let denom = (analytic.norm() + numeric_sq.sqrt()).max(1e-12);
        let rel = diff_sq.sqrt() / denom;
        max_rel = max_rel.max(rel);
        per_param.push((store.name(id).to_string(), rel));
    }
    Ok(GradCheckReport {
        per_param,
        max_relative_error: max_rel,
    })
}
