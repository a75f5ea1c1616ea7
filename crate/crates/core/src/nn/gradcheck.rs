//! Central finite differences, used as the independent reference for every
//! analytic backward pass.

use super::params::Params;

/// Numerical gradient of `loss` w.r.t. every parameter element.
pub fn numerical_gradient(params: &Params, step: f64, loss: impl Fn(&Params) -> f64) -> Params {
    let mut probe = params.clone();
    let mut grads = params.zeros_like();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in names {
        let n = params.get(&name).len();
        for i in 0..n {
            let orig = params.get(&name).as_slice_memory_order().expect("contiguous")[i];
            probe.get_mut(&name).as_slice_memory_order_mut().expect("contiguous")[i] = orig + step;
            let up = loss(&probe);
            probe.get_mut(&name).as_slice_memory_order_mut().expect("contiguous")[i] = orig - step;
            let down = loss(&probe);
            probe.get_mut(&name).as_slice_memory_order_mut().expect("contiguous")[i] = orig;
            grads.get_mut(&name).as_slice_memory_order_mut().expect("contiguous")[i] =
                (up - down) / (2.0 * step);
        }
    }
    grads
}

/// Per-array relative error `||a - n|| / max(||a|| + ||n||, floor)`.
pub fn relative_errors(analytic: &Params, numeric: &Params) -> Vec<(String, f64)> {
    analytic
        .iter()
        .map(|(name, a)| {
            let n = numeric.get(name);
            let diff: f64 = a.iter().zip(n.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
            (name.to_owned(), diff / (na + nn).max(1e-12))
        })
        .collect()
}

/// Largest per-array relative error.
pub fn max_relative_error(analytic: &Params, numeric: &Params) -> f64 {
    relative_errors(analytic, numeric)
        .into_iter()
        .map(|(_, e)| e)
        .fold(0.0, f64::max)
}
