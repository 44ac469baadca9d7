//! Layer compositions over [`Graph`] primitives, keyed by parameter prefix.

use crate::diffcore::{Bound, Graph, Real, Var};
use crate::error::{Error, Result};

/// Epsilon inside every layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// `x · {prefix}.weight (+ {prefix}.bias)`; the bias is used when bound.
pub fn dense<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let y = g.matmul(x, w)?;
    let bias = format!("{prefix}.bias");
    if p.contains(&bias) {
        g.add_bias(y, p.get(&bias)?)
    } else {
        Ok(y)
    }
}

/// `{prefix}.l1(relu({prefix}.l0(x)))`
pub fn mlp<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = dense(g, p, &format!("{prefix}.l0"), x)?;
    let h = g.relu(h);
    dense(g, p, &format!("{prefix}.l1"), h)
}

pub fn layer_norm<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let gain = p.get(&format!("{prefix}.gain"))?;
    let offset = p.get(&format!("{prefix}.offset"))?;
    g.layer_norm(x, gain, offset, LAYER_NORM_EPS)
}

/// One GRU update in the Cho et al. orientation:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
pub fn gru_cell<T: Real>(g: &mut Graph<T>, p: &Bound, prefix: &str, h: Var, x: Var) -> Result<Var> {
    let u_zr = p.get(&format!("{prefix}.u_zr"))?;
    let width = g.shape(u_zr)[0];
    let hs = g.shape(h).to_vec();
    if hs.last() != Some(&width) || hs[..hs.len() - 1] != g.shape(x)[..g.shape(x).len().saturating_sub(1)] {
        return Err(Error::dim(
            "gru_cell",
            format!("state {:?} and input {:?} for hidden width {width}", hs, g.shape(x)),
        ));
    }
    let gx = g.matmul(x, p.get(&format!("{prefix}.w_x"))?)?;
    let gx = g.add_bias(gx, p.get(&format!("{prefix}.bias"))?)?;
    let gh = g.matmul(h, u_zr)?;
    let last = hs.len() - 1;

    let xz = g.slice(gx, last, 0, width)?;
    let hz = g.slice(gh, last, 0, width)?;
    let z = g.add(xz, hz)?;
    let z = g.sigmoid(z);

    let xr = g.slice(gx, last, width, 2 * width)?;
    let hr = g.slice(gh, last, width, 2 * width)?;
    let r = g.add(xr, hr)?;
    let r = g.sigmoid(r);

    let rh = g.mul(r, h)?;
    let hc = g.matmul(rh, p.get(&format!("{prefix}.u_h"))?)?;
    let xc = g.slice(gx, last, 2 * width, 3 * width)?;
    let cand = g.add(xc, hc)?;
    let cand = g.tanh(cand);

    let diff = g.sub(cand, h)?;
    let step = g.mul(z, diff)?;
    g.add(h, step)
}
