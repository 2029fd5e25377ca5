//! Finite-difference verification of analytic gradients.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradcheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn central_difference(
    mut eval: impl FnMut(&[f64]) -> Result<f64>,
    point: &[f64],
    index: usize,
    epsilon: f64,
) -> Result<f64> {
    let mut p = point.to_vec();
    p[index] = point[index] + epsilon;
    let plus = eval(&p)?;
    p[index] = point[index] - epsilon;
    let minus = eval(&p)?;
    Ok((plus - minus) / (2.0 * epsilon))
}

/// Compares `analytic[i]` with a central difference of `eval` at `point` for
/// every `i` in `coords`.
pub fn gradcheck_coords(
    mut eval: impl FnMut(&[f64]) -> Result<f64>,
    analytic: &[f64],
    point: &[f64],
    coords: &[usize],
    epsilon: f64,
) -> Result<GradcheckReport> {
    if analytic.len() != point.len() {
        return Err(Error::Shape(format!(
            "gradcheck: {} analytic values for a {}-dimensional point",
            analytic.len(),
            point.len()
        )));
    }
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_index: coords.first().copied().unwrap_or(0),
        analytic: Vec::with_capacity(coords.len()),
        numeric: Vec::with_capacity(coords.len()),
    };
    for &i in coords {
        let numeric = central_difference(&mut eval, point, i, epsilon)?;
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || !err.is_finite() {
            report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
            report.worst_index = i;
        }
        report.analytic.push(analytic[i]);
        report.numeric.push(numeric);
    }
    Ok(report)
}

fn eval_scalar<F>(f: &F, point: &Tensor<f64>) -> Result<(Graph<f64>, Var, Var)>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(point.clone(), true);
    let y = f(&mut g, x)?;
    if !g.value(y).is_scalar() {
        return Err(Error::NonScalarLoss(g.shape(y).to_vec()));
    }
    Ok((g, x, y))
}

/// Checks the graph-recorded gradient of the scalar function `f` at `point`
/// against central differences over every coordinate.
pub fn gradcheck<F>(f: F, point: &Tensor<f64>, epsilon: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let (g, x, y) = eval_scalar(&f, point)?;
    let grads = g.backward(y)?;
    let analytic = grads
        .get(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.numel()]);
    let shape = point.shape().to_vec();
    let coords: Vec<usize> = (0..point.numel()).collect();
    gradcheck_coords(
        |p| {
            let t = Tensor::new(shape.clone(), p.to_vec())?;
            let (g, _, y) = eval_scalar(&f, &t)?;
            g.value(y).item()
        },
        &analytic,
        point.data(),
        &coords,
        epsilon,
    )
}
