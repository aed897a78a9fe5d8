//! k-space terms: squared-error data fidelity and the L1 + L2 regularizer.
//!
//! Gradients with respect to complex entries are packed as
//! `dL/dre + i dL/dim`.

use num_complex::Complex64;

use crate::error::Result;
use crate::transforms::CoilStack;

use super::{Evaluated, Normalization};

/// Entries with modulus below this get a zero L1 subgradient.
pub const L1_ZERO: f64 = 1e-12;

/// `||k_pred - k_full||^2`, divided by the element count under
/// [`Normalization::Mean`].
pub fn fidelity_loss(
    k_pred: &CoilStack,
    k_full: &CoilStack,
    norm: Normalization,
    with_grad: bool,
) -> Result<Evaluated<CoilStack>> {
    k_pred.same_shape(k_full, "fidelity_loss")?;
    let scale = norm.factor(k_pred.len());
    let value = scale
        * k_pred
            .data()
            .iter()
            .zip(k_full.data())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>();
    let grad = with_grad.then(|| {
        let data = k_pred
            .data()
            .iter()
            .zip(k_full.data())
            .map(|(a, b)| (a - b) * (2.0 * scale))
            .collect();
        CoilStack::new(k_pred.coils(), k_pred.height(), k_pred.width(), data).expect("same shape")
    });
    Ok(Evaluated { value, grad })
}

/// `||k||_1 + beta ||k||_2`. Under [`Normalization::Mean`] this is
/// `mean|k| + beta * sqrt(mean|k|^2)`.
pub fn reg_loss(k: &CoilStack, beta: f64, norm: Normalization, with_grad: bool) -> Result<Evaluated<CoilStack>> {
    if !(beta >= 0.0) {
        return Err(crate::Error::invalid(format!("beta must be nonnegative, got {beta}")));
    }
    let scale = norm.factor(k.len());
    let l1: f64 = k.data().iter().map(|z| z.norm()).sum();
    let sum_sq: f64 = k.norm_sqr();
    let l2 = (scale * sum_sq).sqrt();
    let value = scale * l1 + beta * l2;
    let grad = with_grad.then(|| {
        let data = k
            .data()
            .iter()
            .map(|&z| {
                let m = z.norm();
                let mut g = if m < L1_ZERO {
                    Complex64::new(0.0, 0.0)
                } else {
                    z * (scale / m)
                };
                if l2 > 0.0 {
                    g += z * (beta * scale / l2);
                }
                g
            })
            .collect();
        CoilStack::new(k.coils(), k.height(), k.width(), data).expect("same shape")
    });
    Ok(Evaluated { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(values: &[Complex64]) -> CoilStack {
        CoilStack::new(1, 1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn fidelity_examples() {
        let a = stack(&[Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.25)]);
        let e = fidelity_loss(&a, &a, Normalization::Mean, true).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.grad.unwrap().data().iter().all(|z| z.norm() == 0.0));

        let ones = stack(&[Complex64::new(1.0, 0.0); 6]);
        let zeros = stack(&[Complex64::new(0.0, 0.0); 6]);
        assert_eq!(
            fidelity_loss(&ones, &zeros, Normalization::Mean, false).unwrap().value,
            1.0
        );
        assert_eq!(
            fidelity_loss(&ones, &zeros, Normalization::Sum, false).unwrap().value,
            6.0
        );
        assert!(fidelity_loss(
            &ones,
            &stack(&[Complex64::new(0.0, 0.0); 5]),
            Normalization::Mean,
            false
        )
        .is_err());
    }

    #[test]
    fn fidelity_matches_scalar_loop() {
        let a: Vec<_> = (0..12)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.7).cos()))
            .collect();
        let b: Vec<_> = (0..12)
            .map(|i| Complex64::new((i as f64 * 1.3).cos(), -(i as f64) / 10.0))
            .collect();
        let mut acc = 0.0;
        for i in 0..12 {
            let dr = a[i].re - b[i].re;
            let di = a[i].im - b[i].im;
            acc += dr * dr + di * di;
        }
        let v = fidelity_loss(&stack(&a), &stack(&b), Normalization::Mean, false)
            .unwrap()
            .value;
        assert!((v - acc / 12.0).abs() < 1e-15);
    }

    #[test]
    fn reg_examples() {
        let zeros = stack(&[Complex64::new(0.0, 0.0); 4]);
        let e = reg_loss(&zeros, 1.0, Normalization::Mean, true).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.grad.unwrap().data().iter().all(|z| z.norm() == 0.0));

        let ones = stack(&[Complex64::new(1.0, 0.0); 4]);
        assert!((reg_loss(&ones, 1.0, Normalization::Mean, false).unwrap().value - 2.0).abs() < 1e-15);
        assert!((reg_loss(&ones, 1.0, Normalization::Sum, false).unwrap().value - 6.0).abs() < 1e-15);
        assert!(reg_loss(&ones, -1.0, Normalization::Mean, false).is_err());
    }

    #[test]
    fn reg_matches_scalar_oracle() {
        let v: Vec<_> = (0..9)
            .map(|i| Complex64::new(i as f64 - 4.0, (i * i) as f64 / 7.0))
            .collect();
        let mut l1 = 0.0;
        let mut sq = 0.0;
        for z in &v {
            let m = (z.re * z.re + z.im * z.im).sqrt();
            l1 += m;
            sq += m * m;
        }
        let expect = l1 / 9.0 + 0.5 * (sq / 9.0).sqrt();
        let got = reg_loss(&stack(&v), 0.5, Normalization::Mean, false).unwrap().value;
        assert!((got - expect).abs() < 1e-14);
    }
}
