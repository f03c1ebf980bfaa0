use crate::numerics::{ParamStore, Tensor};

/// Gradient magnitudes below this are compared absolutely rather than relatively,
/// so entries that are zero up to round-off do not dominate the report.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, RELATIVE_ERROR_FLOOR)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Largest analytic gradient magnitude seen.
    pub max_abs_analytic: f64,
    /// Parameter name and flat index of the worst relative error.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compares the analytic gradient produced by `f` with central finite differences.
///
/// `f` must return the scalar objective and accumulate its analytic gradient into the
/// store's gradient buffers. Gradients are zeroed before each call; on return the
/// store holds the analytic gradient at the unperturbed point.
pub fn grad_check<F>(mut f: F, store: &mut ParamStore, h: f64) -> GradCheckReport
where
    F: FnMut(&mut ParamStore) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    store.zero_grads();
    f(store);
    let analytic: Vec<(String, Tensor)> = store
        .iter()
        .map(|(n, p)| (n.to_string(), p.grad.clone()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        max_abs_analytic: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for (name, grad) in &analytic {
        for i in 0..grad.len() {
            let orig = store.value(name).data()[i];
            store.value_mut(name).data_mut()[i] = orig + h;
            store.zero_grads();
            let plus = f(store);
            store.value_mut(name).data_mut()[i] = orig - h;
            store.zero_grads();
            let minus = f(store);
            store.value_mut(name).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_abs_analytic = report.max_abs_analytic.max(a.abs());
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
            report.entries_checked += 1;
        }
    }
    store.zero_grads();
    f(store);
    report
}
