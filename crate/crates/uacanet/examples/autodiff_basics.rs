//! Tour of the tensor engine: building a small differentiable computation,
//! reading gradients back, and verifying them against finite differences.
//!
//! ```bash
//! cargo run --release --example autodiff_basics
//! ```

use uacanet::tensor::gradcheck::grad_check;
use uacanet::tensor::{ops, Tensor};

fn main() -> uacanet::Result<()> {
    // y = sum(sigmoid(W·x + b) ⊙ x): every op records its backward rule
    let x = Tensor::param(vec![0.5f64, -1.0, 2.0, 0.25], &[1, 4])?;
    let w = Tensor::param(vec![0.1, -0.2, 0.3, 0.4, 0.7, 0.0, -0.5, 0.2], &[4, 2])?;
    let z = ops::matmul(&x, &w)?;
    let y = ops::sum_all(&ops::sigmoid(&z));
    y.backward()?;

    println!("y        = {:.6}", y.item());
    println!("dy/dx    = {:?}", x.grad().unwrap());
    println!("dy/dW[0] = {:.6}", w.grad().unwrap()[0]);

    // the finite-difference verifier, run in 64-bit mode
    let probe = Tensor::from_vec(vec![0.3, -0.7, 1.1, 0.9, -0.2, 0.4], &[1, 2, 3, 1])?;
    let err = grad_check(
        |t| {
            let up = ops::bilinear_resize(t, 5, 2)?;
            let parts = ops::softmax_over(&[&up, &ops::mul_scalar(&up, -0.5)])?;
            Ok(ops::sum_all(&ops::mul(&parts[0], &up)?))
        },
        &probe,
        1e-5,
    )?;
    println!("grad check (resize + softmax chain): max rel error {err:.2e}");
    assert!(err < 1e-6);

    // convolution identity: 1×1 kernel of value 1 reproduces the input
    let img = Tensor::from_vec((1..=9).map(f64::from).collect(), &[1, 1, 3, 3])?;
    let ident = Tensor::from_vec(vec![1.0], &[1, 1, 1, 1])?;
    let bias = Tensor::zeros(&[1]);
    let out = ops::conv2d(&img, &ident, &bias, 1, 0, 1)?;
    assert_eq!(out.to_vec(), img.to_vec());
    println!("conv2d identity kernel: exact");
    Ok(())
}
