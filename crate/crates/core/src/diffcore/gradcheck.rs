//! Central finite-difference verification of analytic gradients.

use crate::diffcore::{Bound, Graph, ParameterTree, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            analytic: 0.0,
            numeric: 0.0,
            coordinates: 0,
        }
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
        self.coordinates += 1;
        if self.worst.is_none() || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = Some((name.to_string(), index));
            self.analytic = analytic;
            self.numeric = numeric;
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

fn scalar_of(g: &Graph<f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::dim("grad_check", format!("objective has shape {:?}", t.shape())));
    }
    let x = t.item();
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {x}")));
    }
    Ok(x)
}

/// Compare the tape gradient of `f` at `theta` against central differences.
pub fn grad_check<F>(f: F, theta: &Tensor<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut params = ParameterTree::new();
    params.insert("theta", crate::diffcore::Role::Weight, theta.clone())?;
    grad_check_tree(|g, p| f(g, p.get("theta")?), &params, eps)
}

/// [`grad_check`] over every coordinate of every entry of a parameter tree.
pub fn grad_check_tree<F>(f: F, params: &ParameterTree<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("eps must be positive, got {eps}")));
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = f(&mut g, &bound)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out)?;
    let analytic = params.gradients(&bound, &grads)?;
    if !analytic.all_finite() {
        return Err(Error::NonFinite("analytic gradient".into()));
    }

    let eval = |p: &ParameterTree<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let b = p.bind_constant(&mut g);
        let out = f(&mut g, &b)?;
        scalar_of(&g, out)
    };

    let mut report = GradCheckReport::empty();
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name)?.len();
        for i in 0..n {
            let orig = params.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            report.record(&name, i, analytic.get(&name)?.data()[i], numeric);
        }
    }
    Ok(report)
}
