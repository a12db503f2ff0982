//! Adam optimizer with per-parameter state keyed by name.

use super::{Element, Tensor};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam<E: Element = f64> {
    pub cfg: AdamConfig,
    step: u64,
    state: HashMap<String, (Tensor<E>, Tensor<E>)>,
}

impl<E: Element> Adam<E> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, state: HashMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Start a new optimizer step (advances the bias-correction counter).
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Apply the Adam update to one parameter in place.
    pub fn update(&mut self, name: &str, param: &mut Tensor<E>, grad: &Tensor<E>) {
        assert_eq!(
            param.shape(),
            grad.shape(),
            "adam shape mismatch for {name}: param {:?} grad {:?}",
            param.shape(),
            grad.shape()
        );
        assert!(self.step > 0, "call begin_step before update");
        let (m, v) = self
            .state
            .entry(name.to_string())
            .or_insert_with(|| (Tensor::zeros(param.shape()), Tensor::zeros(param.shape())));

        let b1 = E::from_f64(self.cfg.beta1);
        let b2 = E::from_f64(self.cfg.beta2);
        let lr = E::from_f64(self.cfg.lr);
        let eps = E::from_f64(self.cfg.eps);
        let corr1 = E::from_f64(1.0 - self.cfg.beta1.powi(self.step as i32));
        let corr2 = E::from_f64(1.0 - self.cfg.beta2.powi(self.step as i32));

        let gd = grad.data();
        let mut md = m.to_f64_vec();
        let mut vd = v.to_f64_vec();
        let mut pd = param.to_f64_vec();
        for i in 0..gd.len() {
            let g = gd[i];
            let mi = b1 * E::from_f64(md[i]) + (E::one() - b1) * g;
            let vi = b2 * E::from_f64(vd[i]) + (E::one() - b2) * g * g;
            md[i] = mi.as_f64();
            vd[i] = vi.as_f64();
            let m_hat = mi / corr1;
            let v_hat = vi / corr2;
            pd[i] = (E::from_f64(pd[i]) - lr * m_hat / (v_hat.sqrt() + eps)).as_f64();
        }
        *m = Tensor::from_f64s(param.shape(), &md);
        *v = Tensor::from_f64s(param.shape(), &vd);
        *param = Tensor::from_f64s(param.shape(), &pd);
    }

    /// Optimizer state as name-sorted entries, for checkpointing.
    pub fn state_entries(&self) -> Vec<(String, Tensor<E>, Tensor<E>)> {
        let mut names: Vec<&String> = self.state.keys().collect();
        names.sort();
        names
            .into_iter()
            .map(|n| {
                let (m, v) = &self.state[n];
                (n.clone(), m.clone(), v.clone())
            })
            .collect()
    }

    pub fn restore(cfg: AdamConfig, step: u64, entries: Vec<(String, Tensor<E>, Tensor<E>)>) -> Self {
        let state = entries.into_iter().map(|(n, m, v)| (n, (m, v))).collect();
        Self { cfg, step, state }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut opt = Adam::<f64>::new(AdamConfig::default());
        let mut p = Tensor::from_f64s(&[2], &[1.0, -2.0]);
        let g = Tensor::zeros(&[2]);
        opt.begin_step();
        opt.update("p", &mut p, &g);
        assert_eq!(p.to_f64_vec(), vec![1.0, -2.0]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn quadratic_converges() {
        // minimize (x - 3)^2 with lr 0.05 over 500 steps
        let mut opt = Adam::<f64>::new(AdamConfig { lr: 0.05, ..Default::default() });
        let mut x = Tensor::from_f64s(&[1], &[-4.0]);
        for _ in 0..500 {
            let g = Tensor::from_f64s(&[1], &[2.0 * (x.data()[0] - 3.0)]);
            opt.begin_step();
            opt.update("x", &mut x, &g);
        }
        assert!((x.data()[0] - 3.0).abs() < 1e-2, "x = {}", x.data()[0]);
    }

    #[test]
    fn equal_seeds_equal_trajectories() {
        let run = || {
            let mut opt = Adam::<f64>::new(AdamConfig::default());
            let mut x: Tensor<f64> = Tensor::from_f64s(&[1], &[0.7]);
            for step in 0..50 {
                let gv: f64 = (x.data()[0] * 1.3 - step as f64 * 0.01).sin();
                let g = Tensor::from_f64s(&[1], &[gv]);
                opt.begin_step();
                opt.update("x", &mut x, &g);
            }
            x.data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
