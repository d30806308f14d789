use super::{Element, Tensor4};
use crate::error::{Error, Result};
use crate::parallel::map_range;

/// Linear-interpolation quantile of already sorted values.
///
/// The position is `q * (m - 1)`; fractional positions interpolate between
/// the neighbouring order statistics. Panics on an empty slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub(crate) fn check_level(q: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(Error::QuantileLevel(q))
    }
}

/// Per-sample linear-interpolation quantile over all `c, h, w` elements.
pub fn quantile_per_sample<T: Element>(a: &Tensor4<T>, q: f64) -> Result<Vec<f64>> {
    check_level(q)?;
    Ok(map_range(a.shape().n, |s| {
        let mut xs: Vec<f64> = a.sample(s).iter().map(|v| v.to_f64()).collect();
        xs.sort_unstable_by(f64::total_cmp);
        quantile_sorted(&xs, q)
    }))
}
