//! Central finite-difference gradient checking.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares `analytic` with central differences of `loss_fn` around `param`.
///
/// Returns the largest per-entry error
/// `|g_fd - g_ad| / max(REL_ERROR_FLOOR, |g_fd| + |g_ad|)`. The loss is evaluated twice
/// at `param` first; differing results mean the closure is not deterministic.
pub fn finite_difference_check<F>(
    param: &Tensor,
    analytic: &Tensor,
    mut loss_fn: F,
    eps: f64,
) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if param.shape() != analytic.shape() {
        return Err(Error::Shape(format!(
            "gradient {:?} for parameter {:?}",
            analytic.shape(),
            param.shape()
        )));
    }
    let first = loss_fn(param)?;
    let second = loss_fn(param)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let mut probe = param.clone();
    let mut worst: f64 = 0.0;
    for i in 0..param.len() {
        let orig = param.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = loss_fn(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = loss_fn(&probe)?;
        probe.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let ad = analytic.data()[i];
        worst = worst.max(relative_error(fd, ad));
    }
    Ok(worst)
}

/// Denominator floor of [`relative_error`]. Central differences of an O(1)
/// loss carry roundoff near `1e-16 / eps`, so entries smaller than this are
/// compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[inline]
pub fn relative_error(fd: f64, ad: f64) -> f64 {
    (fd - ad).abs() / (fd.abs() + ad.abs()).max(REL_ERROR_FLOOR)
}
