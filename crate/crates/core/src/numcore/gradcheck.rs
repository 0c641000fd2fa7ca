use crate::error::{Error, Result};

/// Central-difference gradient check.
///
/// Returns `maxᵢ |g_fd,i − g_an,i| / max(1, |g_fd,i|, |g_an,i|)`.
pub fn finite_diff_check<F>(mut f: F, point: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if point.len() != analytic.len() {
        return Err(Error::shape(
            "finite_diff_check",
            format!("{} coordinates, {} gradient entries", point.len(), analytic.len()),
        ));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x)?;
        x[i] = orig - h;
        let down = f(&x)?;
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i} ± {h}"
            )));
        }
        let fd = (up - down) / (2.0 * h);
        let an = analytic[i];
        let err = (fd - an).abs() / 1.0_f64.max(fd.abs()).max(an.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
