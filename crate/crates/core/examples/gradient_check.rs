//! Finite-difference checks: one hand-written objective, then a few random
//! instances of every tape primitive and the SetCon objective end to end.
//!
//! cargo run --release --example gradient_check

use setcon::diffcore::{grad_check, Tensor};
use setcon::harness::gradcheck::{check_end_to_end, check_primitives, EndToEnd, GRADCHECK_TOL};

fn main() -> setcon::Result<()> {
    // f(θ) = Σ softmax(θ)·w, a smooth objective with a dense Jacobian.
    let theta = Tensor::from_f64(&[2, 3], &[0.3, -1.2, 0.5, 2.0, 0.1, -0.7])?;
    let w = Tensor::from_f64(&[2, 3], &[1.0, -2.0, 0.5, 0.25, 3.0, -1.0])?;
    let report = grad_check(
        |g, x| {
            let s = g.softmax(x, 1)?;
            let wv = g.constant(w.clone());
            let y = g.mul(s, wv)?;
            Ok(g.sum(y))
        },
        &theta,
        1e-6,
    )?;
    println!("softmax projection: max rel error {:.2e}", report.max_rel_error);

    for c in check_primitives(5, 0)? {
        println!("{:<16} {:.2e}", c.name, c.max_rel_error);
    }
    let e2e = check_end_to_end(EndToEnd::Setcon, 0)?;
    println!("{}: {:.2e} (tolerance {GRADCHECK_TOL:e})", e2e.name, e2e.max_rel_error);
    Ok(())
}
