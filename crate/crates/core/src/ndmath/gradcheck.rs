use super::params::ParamStore;
use crate::error::Result;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Denominator floor for relative errors, so entries whose true gradient is
/// zero are judged on absolute error.
const REL_FLOOR: f64 = 1e-6;

/// Checks the gradient that `loss_fn` accumulates into `store` against
/// central differences with step `h`.
///
/// `loss_fn` must return the loss and add its gradient into the store, and be
/// deterministic (fix any RNG inside it). At most `max_per_param` evenly spaced
/// entries of each parameter are probed.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut loss_fn: F,
    h: f64,
    max_per_param: usize,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    store.zero_grads();
    loss_fn(store)?;
    let analytic: Vec<Vec<f64>> = store.params().iter().map(|p| p.grad.clone()).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for id in store.ids().collect::<Vec<_>>() {
        let len = store.param(id).len();
        let stride = if max_per_param == 0 {
            1
        } else {
            len.div_ceil(max_per_param).max(1)
        };
        for k in (0..len).step_by(stride) {
            let orig = store.value(id)[k];
            store.value_mut(id)[k] = orig + h;
            let plus = loss_fn(store)?;
            store.value_mut(id)[k] = orig - h;
            let minus = loss_fn(store)?;
            store.value_mut(id)[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[id.index()][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.entries_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.param(id).name.clone(), k));
            }
        }
    }
    store.zero_grads();
    Ok(report)
}
