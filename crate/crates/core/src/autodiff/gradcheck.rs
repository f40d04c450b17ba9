//! Finite-difference gradient verification.
//!
//! Central differences over a scalar-valued closure. The closure rebuilds the
//! forward pass from plain tensors, so the numeric gradients are independent
//! of the tape's backward rules.

use super::tensor::Tensor;

/// Central-difference gradients of `f` w.r.t. every element of `inputs`.
pub fn finite_diff(
    f: &mut dyn FnMut(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    eps: f64,
) -> Vec<Tensor<f64>> {
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let fp = f(&work);
            work[i].data_mut()[j] = orig - eps;
            let fm = f(&work);
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (fp - fm) / (2.0 * eps);
        }
        grads.push(g);
    }
    grads
}

/// Largest relative error between two gradients.
///
/// The denominator is floored so that near-zero gradients compare by
/// absolute error instead of blowing up the ratio.
pub fn max_rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_of_quadratic() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let grads = finite_diff(
            &mut |xs: &[Tensor<f64>]| xs[0].data().iter().map(|v| v * v).sum(),
            &[x],
            1e-5,
        );
        for (g, expect) in grads[0].data().iter().zip([2.0, 4.0, 6.0]) {
            assert!((g - expect).abs() < 1e-8);
        }
    }
}
