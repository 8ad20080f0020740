use serde::Serialize;

use super::{batch_loss, batch_loss_and_grads, TrainSample};
use crate::encoder::ModelParams;
use crate::Result;

/// Agreement of one parameter tensor's analytic gradient with central
/// differences of the batch loss.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupCheck {
    pub name: String,
    pub len: usize,
    pub analytic_norm: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, or the absolute
    /// difference norm when both are below `1e-6`, as for tensors whose true
    /// gradient is identically zero.
    pub rel_error: f64,
}

/// Compares [`batch_loss_and_grads`] against central differences with step
/// `h` on every entry of every tensor.
pub fn gradient_check(
    params: &ModelParams<f64>,
    samples: &[TrainSample],
    distinct_negatives: bool,
    h: f64,
) -> Result<Vec<GroupCheck>> {
    let mut analytic = params.zeros_like();
    batch_loss_and_grads(params, samples, distinct_negatives, &mut analytic)?;
    let mut work = params.clone();
    let mut out = Vec::new();
    for (ti, (name, tensor)) in analytic.tensors().into_iter().enumerate() {
        let mut diff2 = 0.0;
        let mut an2 = 0.0;
        let mut fd2 = 0.0;
        for (e, &a) in tensor.data.iter().enumerate() {
            let orig = work.tensors()[ti].1.data[e];
            work.tensors_mut()[ti].1.data[e] = orig + h;
            let plus = batch_loss(&work, samples, distinct_negatives)?;
            work.tensors_mut()[ti].1.data[e] = orig - h;
            let minus = batch_loss(&work, samples, distinct_negatives)?;
            work.tensors_mut()[ti].1.data[e] = orig;
            let fd = (plus - minus) / (2.0 * h);
            diff2 += (a - fd) * (a - fd);
            an2 += a * a;
            fd2 += fd * fd;
        }
        let scale = an2.sqrt().max(fd2.sqrt());
        let rel_error = if scale < 1e-6 { diff2.sqrt() } else { diff2.sqrt() / scale };
        out.push(GroupCheck { name, len: tensor.data.len(), analytic_norm: an2.sqrt(), rel_error });
    }
    Ok(out)
}
