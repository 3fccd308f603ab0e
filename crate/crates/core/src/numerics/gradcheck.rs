use super::params::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and element index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares analytic gradients against central differences.
///
/// `loss_fn` returns the loss at `params` together with the analytic gradient
/// laid out like [`ModelParams::flat_grads`]. Relative error uses the
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(
    loss_fn: F,
    params: &ModelParams,
    epsilon: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ModelParams) -> Result<(f64, Vec<f64>)>,
{
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    if analytic.len() != params.num_elements() {
        return Err(Error::shape(
            "finite_diff_check",
            &[params.num_elements()],
            &[analytic.len()],
        ));
    }
    let names: Vec<(String, usize)> = params
        .iter()
        .map(|(n, t)| (n.to_string(), t.len()))
        .collect();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut flat = 0;
    for (name, len) in names {
        for i in 0..len {
            let orig = probe.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + epsilon;
            let (fp, _) = loss_fn(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - epsilon;
            let (fm, _) = loss_fn(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite(format!("loss at {name}[{i}]")));
            }
            let numeric = (fp - fm) / (2.0 * epsilon);
            let a = analytic[flat];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if report.worst.is_none() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), i));
            }
            report.checked += 1;
            flat += 1;
        }
    }
    Ok(report)
}
