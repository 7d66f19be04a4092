//! Central finite-difference gradient checking, the independent oracle for
//! every backward implementation.

use ndarray::ArrayD;

use super::optim::ParamSet;

/// Default step for the central difference.
pub const FD_STEP: f64 = 1e-5;
/// Relative-error gate for 64-bit gradient agreement.
pub const FD_TOLERANCE: f64 = 1e-4;

/// Numerically differentiates `f` with respect to every element of every
/// parameter: `(f(x+h) - f(x-h)) / 2h`. The closure must be a pure function
/// of the parameter values (rebuild the tape inside it, with a fixed seed).
pub fn numeric_gradients(
    params: &mut ParamSet,
    h: f64,
    f: &mut dyn FnMut(&ParamSet) -> f64,
) -> Vec<ArrayD<f64>> {
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut grad = ArrayD::zeros(params.get(pi).value.raw_dim());
        let n = grad.len();
        for k in 0..n {
            let old = params.get(pi).value.as_slice().unwrap()[k];
            params.get_mut(pi).value.as_slice_mut().unwrap()[k] = old + h;
            let fp = f(params);
            params.get_mut(pi).value.as_slice_mut().unwrap()[k] = old - h;
            let fm = f(params);
            params.get_mut(pi).value.as_slice_mut().unwrap()[k] = old;
            grad.as_slice_mut().unwrap()[k] = (fp - fm) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// Worst relative disagreement between two gradients, guarded for
/// near-zero entries.
pub fn max_rel_error(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Asserts finite-difference agreement for every parameter.
pub fn assert_grads_match(analytic: &[ArrayD<f64>], numeric: &[ArrayD<f64>], context: &str) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let err = max_rel_error(a, n);
        assert!(
            err < FD_TOLERANCE,
            "{context}: parameter {i} gradient mismatch, max relative error {err:.3e}"
        );
    }
}
