//! The autodiff tape in isolation: eager forward ops, reverse-mode
//! gradients, and verification against central finite differences.
//!
//! ```bash
//! cargo run --release --example autodiff_basics
//! ```

use rfmt::tensor::{grad_check, Graph, Tensor};

fn main() {
    // forward: softmax rows sum to one
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.0, 0.0]));
    let s = g.softmax(x, 1).unwrap();
    println!("softmax rows: {:?}", g.value(s).data());

    // backward: loss = sum(w * x) so grad(w) = x
    let mut g = Graph::new();
    let w = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let c = g.constant(Tensor::vector(vec![4.0, -5.0, 6.0]));
    let prod = g.mul(w, c).unwrap();
    let loss = g.sum(prod).unwrap();
    let grads = g.backward(loss).unwrap();
    println!("grad of sum(w*x) wrt w: {:?}", grads.get(w).unwrap().data());

    // a two-layer graph checked against finite differences
    let w1 = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin() * 0.5).collect());
    let w2 = Tensor::matrix(4, 2, (0..8).map(|i| (i as f64 * 0.61).cos() * 0.5).collect());
    let err = grad_check(
        |g, params| {
            let x = g.constant(Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]));
            let h = g.matmul(x, params[0])?;
            let h = g.gelu(h)?;
            let out = g.matmul(h, params[1])?;
            g.sum(out)
        },
        &[w1, w2],
        1e-5,
    )
    .unwrap();
    println!("two-layer MLP max relative gradient error vs finite differences: {err:.2e}");
    assert!(err < 1e-3);

    // label-smoothed cross entropy on uniform logits gives exactly ln(V)
    let mut g = Graph::new();
    let logits = g.constant(Tensor::matrix(1, 7, vec![0.0; 7]));
    let ce = g.cross_entropy_ls(logits, &[3], 0.1).unwrap();
    println!("label-smoothed CE at uniform logits: {:.6} (ln 7 = {:.6})", g.value(ce).data()[0], (7f64).ln());
}
