//! Reverse-mode differentiation on the tape: a tiny softmax regression and
//! a finite-difference check of its gradient.

use relmap::tensor::{grad_check, Tape, Tensor};

fn main() -> relmap::Result<()> {
    let x = Tensor::new(&[1, 3], vec![0.5, -1.0, 2.0])?;
    let w = Tensor::new(&[3, 2], vec![0.1, -0.2, 0.3, 0.0, -0.4, 0.2])?;

    let tape = Tape::new();
    let wv = tape.var(w.clone());
    let logits = tape.constant(x.clone()).matmul(wv)?.reshape(&[2])?;
    let loss = logits.log_softmax()?.slice(0, 1, 1)?.scale(-1.0);
    let grads = tape.backward(loss)?;
    println!("loss {:.5}", loss.value().item());
    println!("dL/dW {:?}", grads.wrt(wv).data());

    let worst = grad_check(
        |tape, w| {
            let logits = tape.constant(x.clone()).matmul(w)?.reshape(&[2])?;
            Ok(logits.log_softmax()?.slice(0, 1, 1)?.scale(-1.0))
        },
        &w,
        1e-3,
    )?;
    println!("worst relative error against central differences: {worst:.2e}");
    Ok(())
}
