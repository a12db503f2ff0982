//! Loss functions, composed from the primitive ops so their gradients
//! come from the same verified backward passes.

use super::{Element, Tensor, Var};

/// Cross-entropy of a logit vector against a class index:
/// `logsumexp(logits) - logits[target]`, computed with the usual
/// max-subtraction for stability.
pub fn cross_entropy<E: Element>(logits: &Var<E>, target: usize) -> Var<E> {
    let v = logits.value();
    assert_eq!(v.rank(), 1, "cross_entropy expects a logit vector, got {:?}", v.shape());
    assert!(target < v.numel(), "target {target} out of range for {:?}", v.shape());
    let m = v.data().iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b.as_f64()));
    let lse = logits.add_scalar(-m).exp().sum().ln().add_scalar(m);
    let picked = logits.narrow(0, target, 1).reshape(&[]);
    lse.sub(&picked)
}

/// Mean binary cross-entropy of probabilities against {0,1} labels.
/// Probabilities are clamped away from 0 and 1 before the logs.
pub fn binary_cross_entropy<E: Element>(probs: &Var<E>, labels: &Tensor<E>) -> Var<E> {
    assert_eq!(
        probs.value().shape(),
        labels.shape(),
        "bce shape mismatch: probs {:?} labels {:?}",
        probs.value().shape(),
        labels.shape()
    );
    let eps = 1e-12;
    let p = probs.clamp(eps, 1.0 - eps);
    let y = probs.tape().constant(labels.clone());
    let y_flip = probs.tape().constant(labels.map(|v| E::one() - v));
    let pos = y.mul(&p.ln());
    let neg = y_flip.mul(&p.neg().add_scalar(1.0).ln());
    pos.add(&neg).mean().neg()
}

/// Sum of absolute differences. The subgradient at exact ties is 0.
pub fn l1<E: Element>(pred: &Var<E>, target: &Tensor<E>) -> Var<E> {
    assert_eq!(
        pred.value().shape(),
        target.shape(),
        "l1 shape mismatch: pred {:?} target {:?}",
        pred.value().shape(),
        target.shape()
    );
    let t = pred.tape().constant(target.clone());
    pred.sub(&t).abs().sum()
}

/// Negative log density of 2-D Gaussians, one per row.
///
/// All five parameter vectors share shape [T]; `targets` holds the observed
/// (x, y) per row. Callers keep `sigma > 0` and `|rho| < 1` by
/// parameterization (softplus / scaled tanh). Returns the per-row NLL [T].
pub fn gaussian_nll_2d<E: Element>(
    mu_x: &Var<E>,
    mu_y: &Var<E>,
    sigma_x: &Var<E>,
    sigma_y: &Var<E>,
    rho: &Var<E>,
    targets: &[(f64, f64)],
) -> Var<E> {
    let t = mu_x.value().numel();
    for (name, v) in [("mu_y", mu_y), ("sigma_x", sigma_x), ("sigma_y", sigma_y), ("rho", rho)] {
        assert_eq!(v.value().numel(), t, "gaussian_nll_2d: {name} length mismatch");
    }
    assert_eq!(targets.len(), t, "gaussian_nll_2d: target length mismatch");
    let tape = mu_x.tape();
    let tx = tape.constant(Tensor::from_f64s(&[t], &targets.iter().map(|p| p.0).collect::<Vec<_>>()));
    let ty = tape.constant(Tensor::from_f64s(&[t], &targets.iter().map(|p| p.1).collect::<Vec<_>>()));

    let dx = tx.sub(mu_x);
    let dy = ty.sub(mu_y);
    let zx = dx.div(sigma_x);
    let zy = dy.div(sigma_y);
    let one_minus_r2 = rho.mul(rho).neg().add_scalar(1.0);
    let cross = rho.mul(&zx).mul(&zy).scale(2.0);
    let z = zx.mul(&zx).add(&zy.mul(&zy)).sub(&cross);

    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    sigma_x
        .ln()
        .add(&sigma_y.ln())
        .add(&one_minus_r2.ln().scale(0.5))
        .add(&z.div(&one_minus_r2.scale(2.0)))
        .add_scalar(ln_2pi)
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use super::*;

    #[test]
    fn cross_entropy_decreases_with_confidence() {
        let tape = Tape::<f64>::new();
        let mut last = f64::INFINITY;
        for conf in [1.0, 2.0, 5.0, 10.0, 50.0] {
            let logits = tape.constant(Tensor::from_f64s(&[3], &[conf, 0.0, 0.0]));
            let ce = cross_entropy(&logits, 0).value().item();
            assert!(ce < last, "ce should fall as confidence grows");
            last = ce;
        }
        assert!(last < 1e-20);
    }

    #[test]
    fn bce_perfect_predictions_near_zero() {
        let tape = Tape::<f64>::new();
        let labels = Tensor::from_f64s(&[4], &[0.0, 1.0, 0.0, 1.0]);
        let probs = tape.constant(Tensor::from_f64s(&[4], &[1e-9, 1.0 - 1e-9, 1e-9, 1.0 - 1e-9]));
        assert!(binary_cross_entropy(&probs, &labels).value().item() < 1e-6);
    }

    #[test]
    fn l1_self_is_zero_with_zero_subgradient() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_f64s(&[3], &[1.0, -2.0, 0.5]);
        let v = tape.leaf("x", &x);
        let loss = l1(&v, &x);
        assert_eq!(loss.value().item(), 0.0);
        let g = tape.backward(&loss);
        assert_eq!(g.get("x").unwrap().to_f64_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn gaussian_nll_at_mean_unit_sigma_is_ln_2pi() {
        let tape = Tape::<f64>::new();
        let c = |v: f64| tape.constant(Tensor::from_f64s(&[2], &[v, v]));
        let nll = gaussian_nll_2d(
            &c(1.5),
            &c(-0.5),
            &c(1.0),
            &c(1.0),
            &c(0.0),
            &[(1.5, -0.5), (1.5, -0.5)],
        );
        let expect = (2.0 * std::f64::consts::PI).ln();
        for &v in nll.value().data() {
            assert!((v - expect).abs() < 1e-12);
        }
    }
}
