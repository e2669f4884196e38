use std::collections::BTreeMap;

use super::Gradients;
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};

/// Worst entry of one parameter array.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: String,
    pub group: ParamGroup,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// Max relative error per parameter group, for groups that were checked.
    pub fn by_group(&self) -> BTreeMap<ParamGroup, f64> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let slot = out.entry(e.group).or_insert(0.0f64);
            *slot = slot.max(e.max_rel_error);
        }
        out
    }

    pub fn failures(&self, tolerance: f64) -> Vec<&GradCheckEntry> {
        self.entries
            .iter()
            .filter(|e| !(e.max_rel_error < tolerance))
            .collect()
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central finite differences.
///
/// `loss` evaluates the objective on a parameter store; when its flag is true
/// it must also return the gradients from a backward pass. At most
/// `max_entries` evenly spaced entries are checked per parameter array.
pub fn grad_check<F>(
    params: &ParamStore<f64>,
    mut loss: F,
    eps: f64,
    max_entries: Option<usize>,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, bool) -> Result<(f64, Option<Gradients<f64>>)>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::Contract(format!("grad_check eps {eps} outside (0, 1e-3]")));
    }
    let (base, grads) = loss(params, true)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("loss at unperturbed parameters".into()));
    }
    let grads = grads.ok_or_else(|| Error::Contract("loss returned no gradients".into()))?;
    if let Some(bad) = grads.all_finite() {
        return Err(Error::NonFinite(format!(
            "analytic gradient of {}",
            params.get(bad).name
        )));
    }

    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    for (id, param) in params.iter() {
        let analytic = grads.get(id, params);
        let n = param.value.len();
        let indices: Vec<usize> = match max_entries {
            Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
            _ => (0..n).collect(),
        };
        let mut entry = GradCheckEntry {
            param: param.name.clone(),
            group: param.group,
            checked: indices.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &i in &indices {
            let original = work.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = original + eps;
            let (plus, _) = loss(&work, false)?;
            work.value_mut(id).data_mut()[i] = original - eps;
            let (minus, _) = loss(&work, false)?;
            work.value_mut(id).data_mut()[i] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("{}[{i}] perturbed loss", param.name)));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = relative_error(a, numeric);
            if err > entry.max_rel_error || entry.checked == 0 {
                entry.max_rel_error = err;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        report.entries.push(entry);
    }
    Ok(report)
}
