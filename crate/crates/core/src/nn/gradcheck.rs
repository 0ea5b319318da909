use super::network::{mse_loss, Network};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Compares analytic MSE gradients with central differences.
///
/// The error of one entry is `|analytic − fd| / max(|analytic|, |fd|, 1e-12)`.
/// `max_per_array` limits how many evenly spaced entries of each parameter
/// array are perturbed; `None` checks every parameter.
pub fn grad_check(
    net: &Network<f64>,
    inputs: &[&Tensor<f64>],
    target: &Tensor<f64>,
    eps: f64,
    max_per_array: Option<usize>,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    let (pred, cache) = net.forward(inputs)?;
    let (_, dl) = mse_loss(&pred, target)?;
    let grads = net.backward(&cache, &dl)?;

    let names: Vec<String> = net.param_slots().into_iter().map(|(n, _)| n).collect();
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    let loss_at = |n: &Network<f64>| -> Result<f64> {
        let y = n.predict(inputs)?;
        Ok(mse_loss(&y, target)?.0)
    };
    for (slot, name) in names.iter().enumerate() {
        let len = grads.slots[slot].len();
        let picks: Vec<usize> = match max_per_array {
            Some(k) if k < len => (0..k).map(|i| i * len / k).collect(),
            _ => (0..len).collect(),
        };
        for i in picks {
            let orig = probe.params_mut()[slot][i];
            probe.params_mut()[slot][i] = orig + eps;
            let up = loss_at(&probe)?;
            probe.params_mut()[slot][i] = orig - eps;
            let down = loss_at(&probe)?;
            probe.params_mut()[slot][i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let an = grads.slots[slot][i];
            let err = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-12);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}
