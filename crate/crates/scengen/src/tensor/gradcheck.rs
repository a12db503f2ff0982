//! Central finite-difference verification of analytic gradients.
//!
//! This is the independent oracle for the whole op set: it re-evaluates the
//! forward function at perturbed inputs and never touches the recorded
//! backward pass it is checking.

use super::{Tape, Tensor, Var};

/// Relative error with a unit floor so near-zero gradients compare sanely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Check gradients of a scalar-valued function of several tensors.
///
/// `f` must be a pure function of its inputs. Returns the maximum relative
/// error between the recorded backward pass and central finite differences
/// over every element of every input.
pub fn check_gradients<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> f64
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Var<f64>,
{
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<f64>> = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.leaf(&format!("in{i}"), t))
            .collect();
        f(&tape, &vars).value().item()
    };

    // Analytic gradients from one recorded graph.
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| tape.leaf(&format!("in{i}"), t))
        .collect();
    let loss = f(&tape, &vars);
    assert_eq!(loss.value().numel(), 1, "check_gradients needs a scalar loss");
    let grads = tape.backward(&loss);

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(&format!("in{i}")).expect("missing gradient");
        for j in 0..input.numel() {
            let mut plus = input.to_f64_vec();
            plus[j] += eps;
            let mut minus = input.to_f64_vec();
            minus[j] -= eps;

            let mut tensors = inputs.to_vec();
            tensors[i] = Tensor::from_f64s(input.shape(), &plus);
            let up = eval(&tensors);
            tensors[i] = Tensor::from_f64s(input.shape(), &minus);
            let down = eval(&tensors);

            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_checks_out() {
        // loss = sum(x * x): exact gradient 2x.
        let x = Tensor::from_f64s(&[3], &[0.5, -1.5, 2.0]);
        let err = check_gradients(|_, vars| vars[0].mul(&vars[0]).sum(), &[x], 1e-5);
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        // relu's zero subgradient at 0 vs an input exactly at 0 would hide
        // errors; use a deliberately wrong op pairing instead: treat exp as
        // if it were identity by detaching.
        let x = Tensor::from_f64s(&[2], &[0.3, -0.2]);
        let err = check_gradients(
            |_, vars| {
                let wrong = vars[0].detach().exp(); // gradient path cut
                vars[0].add(&wrong).sum()
            },
            &[x],
            1e-5,
        );
        assert!(err > 1e-2, "should flag the cut gradient, got {err}");
    }
}
