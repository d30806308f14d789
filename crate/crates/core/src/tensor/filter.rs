//! Separable Gaussian low-pass and Sobel gradient magnitude.

use super::{Element, Tensor4};
use crate::error::{Error, Result};
use crate::parallel::for_each_chunk;

/// Sampled, renormalized 1D Gaussian with `radius = ceil(3 * sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    radius: usize,
    taps: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::config("sigma", format!("must be positive, got {sigma}")));
        }
        let radius = (3.0 * sigma).ceil() as usize;
        let denom = 2.0 * sigma * sigma;
        let mut taps: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let d = i as f64 - radius as f64;
                (-d * d / denom).exp()
            })
            .collect();
        let total: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= total);
        Ok(Self {
            sigma,
            radius,
            taps,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Weights for offsets `-radius..=radius`.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

/// Mirror index without repeating the border sample: `.. 2 1 | 0 1 2 .. n-1 | n-2 ..`.
///
/// Periodic with period `2 (n - 1)`, so offsets larger than the signal still
/// land inside it.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Separable horizontal-then-vertical convolution of every channel plane
/// with reflect padding. Accumulates in `f64`; the intermediate row pass is
/// not rounded.
pub fn gaussian_blur<T: Element>(a: &Tensor4<T>, kernel: &GaussianKernel) -> Tensor4<T> {
    let shape = a.shape();
    let (h, w) = (shape.h, shape.w);
    let plane = shape.plane_len();
    let mut out = vec![T::default(); shape.len()];
    let r = kernel.radius as isize;
    let taps = kernel.taps();

    for_each_chunk(&mut out, plane, |p, dst| {
        let src = &a.data()[p * plane..(p + 1) * plane];
        let mut rows = vec![0.0f64; plane];
        for y in 0..h {
            let line = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let xi = reflect_index(x as isize + k as isize - r, w);
                    acc += t * line[xi].to_f64();
                }
                rows[y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let yi = reflect_index(y as isize + k as isize - r, h);
                    acc += t * rows[yi * w + x];
                }
                dst[y * w + x] = T::from_f64(acc);
            }
        }
    });
    Tensor4::new(shape, out).expect("blur preserves shape")
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Per-channel `sqrt(gx^2 + gy^2)` with 3x3 Sobel stencils and reflect
/// padding, averaged over channels into a `(n, 1, h, w)` map.
pub fn sobel_magnitude<T: Element>(a: &Tensor4<T>) -> Result<Tensor4<T>> {
    let shape = a.shape();
    let (c, h, w) = (shape.c, shape.h, shape.w);
    if h < 3 || w < 3 {
        return Err(Error::TooSmall { h, w });
    }
    let out_shape = shape.with_channels(1);
    let plane = shape.plane_len();
    let mut out = vec![T::default(); out_shape.len()];

    for_each_chunk(&mut out, plane, |b, dst| {
        let mut acc = vec![0.0f64; plane];
        for ch in 0..c {
            let src = &a.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
            for y in 0..h {
                for x in 0..w {
                    let (mut gx, mut gy) = (0.0, 0.0);
                    for (dy, (row_x, row_y)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                        let yi = reflect_index(y as isize + dy as isize - 1, h);
                        for dx in 0..3 {
                            let xi = reflect_index(x as isize + dx as isize - 1, w);
                            let v = src[yi * w + xi].to_f64();
                            gx += row_x[dx] * v;
                            gy += row_y[dx] * v;
                        }
                    }
                    acc[y * w + x] += (gx * gx + gy * gy).sqrt();
                }
            }
        }
        for (d, s) in dst.iter_mut().zip(&acc) {
            *d = T::from_f64(s / c as f64);
        }
    });
    Tensor4::new(out_shape, out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape4 {
        Shape4::new(n, c, h, w).unwrap()
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for sigma in [0.1, 0.5, 1.0, 1.7, 2.0, 4.0] {
            let k = GaussianKernel::new(sigma).unwrap();
            assert_eq!(k.radius(), (3.0 * sigma).ceil() as usize);
            assert_eq!(k.taps().len(), 2 * k.radius() + 1);
            assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let t = k.taps();
            for i in 0..t.len() {
                assert_eq!(t[i], t[t.len() - 1 - i]);
            }
        }
        assert!(GaussianKernel::new(0.0).is_err());
        assert!(GaussianKernel::new(f64::NAN).is_err());
    }

    #[test]
    fn reflect_without_border_repeat() {
        let idx: Vec<usize> = (-3..8).map(|i| reflect_index(i, 5)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect_index(-7, 1), 0);
        // radius wider than the signal
        assert_eq!(reflect_index(-4, 2), 0);
        assert_eq!(reflect_index(5, 2), 1);
    }

    #[test]
    fn constant_preserved() {
        for sigma in [0.5, 1.0, 2.0] {
            let k = GaussianKernel::new(sigma).unwrap();
            for s in [shape(1, 2, 7, 9), shape(2, 1, 1, 3), shape(1, 1, 2, 2)] {
                let t = Tensor4::<f32>::full(s, -3.75);
                let out = gaussian_blur(&t, &k);
                assert!(out.data().iter().all(|&v| (v + 3.75).abs() <= 1e-6));
            }
        }
    }

    #[test]
    fn impulse_gives_outer_product_of_taps() {
        let k = GaussianKernel::new(1.0).unwrap();
        let s = shape(1, 1, 9, 9);
        let mut t = Tensor4::<f64>::zeros(s);
        t.set(0, 0, 4, 4, 1.0);
        let out = gaussian_blur(&t, &k);
        let taps = k.taps();
        let r = k.radius();
        for y in 0..9 {
            for x in 0..9 {
                let (dy, dx) = (y as isize - 4, x as isize - 4);
                let expected = if dy.unsigned_abs() <= r && dx.unsigned_abs() <= r {
                    taps[(dy + r as isize) as usize] * taps[(dx + r as isize) as usize]
                } else {
                    0.0
                };
                assert!((out.get(0, 0, y, x) - expected).abs() < 1e-15);
            }
        }
        assert_eq!(out.get(0, 0, 4, 4), taps[r] * taps[r]);
    }

    #[test]
    fn sobel_constant_is_zero_and_step_edge_is_four() {
        let s = shape(1, 2, 6, 8);
        let flat = sobel_magnitude(&Tensor4::<f32>::full(s, 2.0)).unwrap();
        assert_eq!(flat.shape(), s.with_channels(1));
        assert!(flat.data().iter().all(|&v| v == 0.0));

        let step = Tensor4::<f32>::from_fn(s, |_, _, _, x| if x >= 4 { 1.0 } else { 0.0 });
        let mag = sobel_magnitude(&step).unwrap();
        for y in 0..6 {
            assert_eq!(mag.get(0, 0, y, 3), 4.0);
            assert_eq!(mag.get(0, 0, y, 4), 4.0);
            assert_eq!(mag.get(0, 0, y, 1), 0.0);
        }
    }

    #[test]
    fn sobel_rejects_small_images() {
        let t = Tensor4::<f32>::zeros(shape(1, 1, 2, 5));
        assert!(matches!(sobel_magnitude(&t), Err(Error::TooSmall { h: 2, w: 5 })));
    }
}
