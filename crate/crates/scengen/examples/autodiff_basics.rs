//! The autodiff substrate on its own: record ops on a tape, verify the
//! backward pass against finite differences, and fit a toy problem with
//! Adam.
//!
//! ```bash
//! cargo run --example autodiff_basics
//! ```

use scengen::tensor::gradcheck::check_gradients;
use scengen::tensor::{Adam, AdamConfig, Tape, Tensor};

fn main() {
    // Gradient check: loss = sum(sigmoid(x W) * x W) on random shapes.
    let x = Tensor::from_f64s(&[3, 4], &(0..12).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>());
    let w = Tensor::from_f64s(&[4, 2], &(0..8).map(|i| (i as f64 * 0.61).cos()).collect::<Vec<_>>());
    let err = check_gradients(
        |_, vars| {
            let h = vars[0].matmul(&vars[1]);
            h.sigmoid().mul(&h).sum()
        },
        &[x, w],
        1e-5,
    );
    println!("gradient check max relative error: {err:.3e}");

    // Fit y = 2x - 1 with a single linear neuron.
    let xs: Vec<f64> = (0..16).map(|i| i as f64 / 8.0 - 1.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
    let x_t = Tensor::from_f64s(&[16, 1], &xs);
    let y_t = Tensor::from_f64s(&[16, 1], &ys);

    let mut w = Tensor::from_f64s(&[1, 1], &[0.3]);
    let mut b = Tensor::from_f64s(&[1], &[0.0]);
    let mut opt = Adam::<f64>::new(AdamConfig { lr: 0.05, ..Default::default() });
    for step in 0..400 {
        let tape = Tape::new();
        let xv = tape.constant(x_t.clone());
        let yv = tape.constant(y_t.clone());
        let pred = xv.matmul(&tape.leaf("w", &w)).add(&tape.leaf("b", &b));
        let residual = pred.sub(&yv);
        let loss = residual.mul(&residual).mean();
        if step % 100 == 0 {
            println!("step {step}: loss {:.6}", loss.value().item());
        }
        let grads = tape.backward(&loss);
        opt.begin_step();
        opt.update("w", &mut w, grads.get("w").unwrap());
        opt.update("b", &mut b, grads.get("b").unwrap());
    }
    println!("fit: w = {:.4} (expect 2), b = {:.4} (expect -1)", w.data()[0], b.data()[0]);
}
