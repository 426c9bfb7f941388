//! Central finite-difference verification of analytic gradients.

use super::ParamBlock;
use crate::error::{CotError, Result};

/// Compare analytic gradients against central finite differences.
///
/// `f(params, with_grad)` must return the loss; when `with_grad` is true it
/// must also leave fresh gradients in each trainable block (zeroing first is
/// the callee's job). Returns the maximum relative error over every entry of
/// every trainable block, with relative error defined as
/// `|analytic - fd| / max(1, |analytic|, |fd|)`.
pub fn grad_check<F>(params: &mut [ParamBlock], mut f: F, eps: f64) -> Result<f64>
where
    F: FnMut(&mut [ParamBlock], bool) -> Result<f64>,
{
    if !(eps > 1e-8 && eps < 1e-3) {
        return Err(CotError::Range(format!(
            "grad_check eps {eps} outside (1e-8, 1e-3)"
        )));
    }
    let loss = f(params, true)?;
    if !loss.is_finite() {
        return Err(CotError::NonFinite("grad_check loss".into()));
    }
    let analytic: Vec<Vec<f64>> = params.iter().map(|b| b.grad.data().to_vec()).collect();

    let mut max_rel = 0.0f64;
    for bi in 0..params.len() {
        if !params[bi].trainable {
            continue;
        }
        for ei in 0..params[bi].value.len() {
            let orig = params[bi].value.data()[ei];
            params[bi].value.data_mut()[ei] = orig + eps;
            let plus = f(params, false)?;
            params[bi].value.data_mut()[ei] = orig - eps;
            let minus = f(params, false)?;
            params[bi].value.data_mut()[ei] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(CotError::NonFinite("grad_check perturbed loss".into()));
            }
            let fd = (plus - minus) / (2.0 * eps);
            let a = analytic[bi][ei];
            let rel = (a - fd).abs() / 1.0f64.max(a.abs()).max(fd.abs());
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
