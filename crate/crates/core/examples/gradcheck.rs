//! Build a small graph, run backward, and compare against central
//! differences.
//!
//!     cargo run --example gradcheck

use framecl::dcore::{check_gradients, DArray, Graph};

fn main() -> framecl::Result<()> {
    // loss = sum(tanh(x·W + b))
    let x = DArray::from_rows(&[vec![0.5, -1.0, 2.0], vec![0.0, 0.3, -0.7]])?;
    let w = DArray::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.4], vec![0.5, -0.6]])?;
    let b = DArray::row(&[0.01, -0.02])?;

    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.parameter(w.clone());
    let bv = g.parameter(b.clone());
    let h = g.matmul(xv, wv)?;
    let h = g.add(h, bv)?;
    let h = g.tanh(h)?;
    let loss = g.sum_all(h)?;
    println!("loss = {:.6}", g.scalar(loss));

    let grads = g.backward(loss)?;
    println!("dL/dW = {:?}", grads[&wv.id()].data());
    println!("dL/db = {:?}", grads[&bv.id()].data());

    let check = check_gradients(
        |g, p| {
            let xv = g.constant(x.clone());
            let h = g.matmul(xv, p[0])?;
            let h = g.add(h, p[1])?;
            let h = g.tanh(h)?;
            g.sum_all(h)
        },
        &[w, b],
        1e-6,
    )?;
    println!("max relative error vs finite differences: {:.2e}", check.max_relative_error);
    Ok(())
}
