//! Central finite-difference oracle for graph gradients.
//!
//! Perturbs one leaf value at a time and replays the recorded graph, so it
//! never touches the reverse-mode code it is checking.

use std::collections::HashMap;

use super::graph::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

/// Relative error with a small absolute floor on the denominator so that
/// gradients that vanish analytically do not dominate.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `graph.grad(output, wrt)` with central differences of step `h`.
///
/// `max_per_leaf` bounds how many elements of each leaf are probed
/// (evenly strided); `None` probes all of them.
pub fn check_gradients<S: Scalar>(
    graph: &Graph<S>,
    output: NodeId,
    wrt: &[&str],
    h: f64,
    max_per_leaf: Option<usize>,
) -> Result<GradCheck> {
    let analytic = graph.grad(output, wrt)?;
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for &name in wrt {
        let id = graph
            .param_id(name)
            .or_else(|| graph.input_id(name))
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        let base = graph.value(id).clone();
        let n = base.len();
        let stride = max_per_leaf.map_or(1, |m| n.div_ceil(m.max(1)));
        for i in (0..n).step_by(stride.max(1)) {
            let eval = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v.values_mut()[i] = v.values()[i] + S::of(delta);
                let mut b = HashMap::new();
                b.insert(name.to_string(), v);
                Ok(graph.forward(&b)?.scalar(output).as_f64())
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let a = analytic[name].values()[i].as_f64();
            let e = rel_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = Some((name.to_string(), i, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Array, Axis, RandomSource};

    /// Ten scalar parameters threaded through every differentiable
    /// primitive.
    #[test]
    fn random_ten_parameter_graph() {
        let mut rng = RandomSource::new(42);
        let mut g = Graph::<f64>::new();
        let p = g.param("p", &rng.sample_normal(vec![2, 5]).unwrap());
        let x = g.input("x", rng.sample_normal(vec![3, 2]).unwrap()).unwrap();
        let a = g.matmul(x, p).unwrap();
        let bias = g.slice(p, Axis::Rows, 0, 1).unwrap();
        let a = g.add(a, bias).unwrap();
        let t = g.tanh(a).unwrap();
        let s = g.sigmoid(a).unwrap();
        let m = g.mul(t, s).unwrap();
        let sp = g.softplus(m).unwrap();
        let d = g.sub(sp, t).unwrap();
        let q = g.square(d).unwrap();
        let ab = g.abs(a).unwrap();
        let both = g.concat(&[q, ab], Axis::Cols).unwrap();
        let ls = g.log_softmax(both).unwrap();
        let sc = g.scale(ls, -0.3).unwrap();
        let out = g.mean(sc).unwrap();
        let report = check_gradients(&g, out, &["p", "x"], 1e-5, None).unwrap();
        assert_eq!(report.checked, 16);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!((rel_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        let _ = Array::<f64>::scalar(0.0);
    }
}
