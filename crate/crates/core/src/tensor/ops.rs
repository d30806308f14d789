//! Elementwise arithmetic and per-sample reductions.

use super::{ensure_same_shape, Element, Tensor4};
use crate::error::Result;
use crate::parallel::map_range;

/// `a + k * b`, evaluated in `f64` and rounded once.
pub fn add_scaled<T: Element>(a: &Tensor4<T>, b: &Tensor4<T>, k: f64) -> Result<Tensor4<T>> {
    a.zip_map(b, |x, y| T::from_f64(x.to_f64() + k * y.to_f64()))
}

/// Inner product over `c, h, w` for each batch entry.
pub fn dot_per_sample<T: Element, U: Element>(a: &Tensor4<T>, b: &Tensor4<U>) -> Result<Vec<f64>> {
    ensure_same_shape(a.shape(), b.shape())?;
    let len = a.shape().sample_len();
    Ok(map_range(a.shape().n, |s| {
        let (x, y) = (&a.data()[s * len..(s + 1) * len], &b.data()[s * len..(s + 1) * len]);
        x.iter()
            .zip(y)
            .map(|(&p, &q)| p.to_f64() * q.to_f64())
            .sum()
    }))
}

/// Squared Euclidean norm of each batch entry.
pub fn energy_per_sample<T: Element>(a: &Tensor4<T>) -> Vec<f64> {
    let len = a.shape().sample_len();
    map_range(a.shape().n, |s| {
        a.data()[s * len..(s + 1) * len]
            .iter()
            .map(|v| {
                let v = v.to_f64();
                v * v
            })
            .sum()
    })
}

pub fn mean_per_sample<T: Element>(a: &Tensor4<T>) -> Vec<f64> {
    let len = a.shape().sample_len();
    map_range(a.shape().n, |s| sample_mean(&a.data()[s * len..(s + 1) * len]))
}

/// Population standard deviation (divides by the element count) of each
/// batch entry, two-pass.
pub fn std_per_sample<T: Element>(a: &Tensor4<T>) -> Vec<f64> {
    let len = a.shape().sample_len();
    map_range(a.shape().n, |s| {
        let xs = &a.data()[s * len..(s + 1) * len];
        let mean = sample_mean(xs);
        let var = xs
            .iter()
            .map(|v| {
                let d = v.to_f64() - mean;
                d * d
            })
            .sum::<f64>()
            / xs.len() as f64;
        var.sqrt()
    })
}

/// Euclidean distance over the whole tensor.
pub fn l2_distance<T: Element>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<f64> {
    ensure_same_shape(a.shape(), b.shape())?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| {
            let d = p.to_f64() - q.to_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

fn sample_mean<T: Element>(xs: &[T]) -> f64 {
    xs.iter().map(|v| v.to_f64()).sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::tensor::Shape4;

    fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape4 {
        Shape4::new(n, c, h, w).unwrap()
    }

    #[test]
    fn add_scaled_examples() {
        let s = shape(1, 1, 2, 2);
        let out = add_scaled(&Tensor4::<f32>::zeros(s), &Tensor4::ones(s), 2.0).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.0));

        let a = Tensor4::new(s, vec![1.5f32, -2.0, 3.25, 0.1]).unwrap();
        assert_eq!(add_scaled(&a, &Tensor4::ones(s), 0.0).unwrap(), a);

        let s = shape(1, 1, 1, 2);
        let a = Tensor4::new(s, vec![1.0f32, 2.0]).unwrap();
        let b = Tensor4::new(s, vec![3.0f32, 4.0]).unwrap();
        assert_eq!(add_scaled(&a, &b, 0.5).unwrap().data(), &[2.5, 4.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor4::<f32>::zeros(shape(1, 1, 2, 2));
        let b = Tensor4::<f32>::zeros(shape(1, 1, 2, 3));
        let err = add_scaled(&a, &b, 1.0).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
        let msg = err.to_string();
        assert!(msg.contains("(1, 1, 2, 2)") && msg.contains("(1, 1, 2, 3)"), "{msg}");
        assert!(dot_per_sample(&a, &b).is_err());
    }

    #[test]
    fn dot_examples() {
        let s = shape(1, 1, 2, 2);
        assert_eq!(dot_per_sample(&Tensor4::<f32>::ones(s), &Tensor4::<f32>::ones(s)).unwrap(), vec![4.0]);
        let s = shape(1, 1, 1, 2);
        let a = Tensor4::new(s, vec![1.0f32, -1.0]).unwrap();
        let b = Tensor4::new(s, vec![1.0f32, 1.0]).unwrap();
        assert_eq!(dot_per_sample(&a, &b).unwrap(), vec![0.0]);
    }

    #[test]
    fn std_examples() {
        let s = shape(2, 1, 2, 2);
        assert_eq!(std_per_sample(&Tensor4::<f32>::full(s, 3.5)), vec![0.0, 0.0]);
        let a = Tensor4::new(shape(1, 1, 1, 4), vec![1.0f32, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(std_per_sample(&a), vec![1.0]);
    }
}
