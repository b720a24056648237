//! Central finite-difference gradient oracle.
//!
//! Used by the verification tests to check every analytic backward rule.
//! Runs in f64: the checks perturb inputs by `FD_STEP` and compare
//! (f(x+h) - f(x-h)) / 2h against the tape gradient. The numeric estimate
//! only depends on the forward pass, never on any backward rule.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Perturbation step for central differences in f64 mode.
pub const FD_STEP: f64 = 1e-4;

/// Relative-error floor: gradients whose analytic and numeric magnitudes are
/// both below this agree by definition (central differences carry ~1e-12
/// absolute noise at f64, which would dominate a raw relative error).
pub const REL_FLOOR: f64 = 1e-6;

/// Relative discrepancy between an analytic and a numeric gradient value.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central-difference gradient of `f` wrt every element of `x`.
///
/// `f` must be a pure function of the given tensor (re-executed 2·len times).
pub fn central_diff_grad<E, F>(x: &Tensor<E>, mut f: F) -> Vec<f64>
where
    E: Scalar,
    F: FnMut(&Tensor<E>) -> f64,
{
    let mut grad = Vec::with_capacity(x.len());
    let base = x.data().to_vec();
    for i in 0..x.len() {
        let mut plus = base.clone();
        plus[i] = E::from_f64(base[i].as_f64() + FD_STEP);
        let mut minus = base.clone();
        minus[i] = E::from_f64(base[i].as_f64() - FD_STEP);
        let fp = f(&Tensor::from_vec(x.dims(), plus).expect("same dims"));
        let fm = f(&Tensor::from_vec(x.dims(), minus).expect("same dims"));
        grad.push((fp - fm) / (2.0 * FD_STEP));
    }
    grad
}

/// Largest relative error between an analytic gradient tensor and the
/// central-difference estimate of the same quantity.
pub fn max_relative_error<E: Scalar>(analytic: &Tensor<E>, numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .data()
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a.as_f64(), n))
        .fold(0.0, f64::max)
}

/// Checks the tape gradient of a scalar-valued graph against central
/// differences, input tensor by input tensor. `build` must deterministically
/// rebuild the same graph from the ids it is handed. Returns the worst
/// relative error observed across all inputs.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut crate::tape::Tape<f64>, &[crate::tape::ValueId]) -> crate::tape::ValueId,
{
    use crate::tape::Tape;

    let mut tape = Tape::<f64>::new();
    let ids: Vec<_> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let loss = build(&mut tape, &ids);
    let bw = tape.backward(loss).expect("scalar loss");

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = match bw.wrt(ids[i]) {
            Some(g) => g.clone(),
            None => Tensor::zeros(input.dims()).expect("valid dims"),
        };
        let numeric = central_diff_grad(input, |perturbed| {
            let mut t2 = Tape::<f64>::new();
            let ids2: Vec<_> = inputs
                .iter()
                .enumerate()
                .map(|(j, orig)| {
                    t2.leaf(if j == i { perturbed.clone() } else { orig.clone() })
                })
                .collect();
            let l = build(&mut t2, &ids2);
            t2.value(l).data()[0]
        });
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_has_linear_gradient() {
        // f(x) = sum(x^2) has df/dx_i = 2 x_i
        let x = Tensor::<f64>::from_vec(&[3], vec![0.5, -1.5, 2.0]).unwrap();
        let g = central_diff_grad(&x, |t| t.data().iter().map(|v| v * v).sum());
        for (gi, xi) in g.iter().zip(x.data()) {
            assert!(relative_error(2.0 * xi, *gi) < 1e-8, "{gi} vs {}", 2.0 * xi);
        }
    }

    #[test]
    fn relative_error_floor_kicks_in() {
        assert!(relative_error(1e-9, -1e-9) < 1e-2);
        assert!(relative_error(1.0, 2.0) > 0.4);
    }
}
