use super::tape::{Grads, ParamSet};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over all parameter entries of `|a - n| / max(1, |a|, |n|)`.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares `analytic` gradients against central finite differences of
/// `loss` with step `h`, entry by entry.
pub fn check_gradients(
    params: &ParamSet,
    analytic: &Grads,
    h: f64,
    loss: impl Fn(&ParamSet) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: String::new(), worst_index: 0, checked: 0 };
    for id in params.ids() {
        for j in 0..params.get(id).len() {
            let orig = params.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + h;
            let plus = loss(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig - h;
            let minus = loss(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).data()[j];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = params.name(id).to_string();
                report.worst_index = j;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
