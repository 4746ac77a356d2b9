//! Image quality figures.

use crate::error::Result;
use crate::grid::ImageGrid;

/// `20 log₁₀(‖x‖₂ / ‖x − y‖₂)` in dB, with `y` the reference image.
///
/// Identical images give `f64::INFINITY`.
pub fn snr(x: &ImageGrid, y: &ImageGrid) -> Result<f64> {
    x.check_same_dims(y)?;
    let residual = x.sub(y)?.norm2();
    if residual == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (x.norm2() / residual).log10())
}
