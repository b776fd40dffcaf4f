//! Central finite-difference checks for anything built on a [`Graph`].

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Builds a graph from differentiable inputs and returns a scalar output.
pub type Builder<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

fn eval(inputs: &[Tensor], f: &Builder) -> Result<f64> {
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .enumerate()
        .map(|(k, t)| g.param(t.clone(), k))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).data()[0])
}

/// Analytic gradients of the scalar built by `f` with respect to each input.
pub fn analytic(inputs: &[Tensor], f: &Builder) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .enumerate()
        .map(|(k, t)| g.param(t.clone(), k))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.wrt(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect())
}

/// Central differences with step `h` for every input entry.
pub fn numeric(inputs: &[Tensor], f: &Builder, h: f64) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut gk = Vec::with_capacity(inputs[k].len());
        for j in 0..inputs[k].len() {
            let mut probe = inputs.to_vec();
            probe[k].data_mut()[j] += h;
            let up = eval(&probe, f)?;
            probe[k].data_mut()[j] -= 2.0 * h;
            let down = eval(&probe, f)?;
            gk.push((up - down) / (2.0 * h));
        }
        out.push(gk);
    }
    Ok(out)
}

/// Largest entrywise disagreement between analytic and numeric gradients,
/// relative to the largest gradient magnitude of the same input.
pub fn max_relative_error(inputs: &[Tensor], f: &Builder, h: f64) -> Result<f64> {
    let a = analytic(inputs, f)?;
    let n = numeric(inputs, f, h)?;
    let mut worst = 0.0f64;
    for (ga, gn) in a.iter().zip(&n) {
        let scale = ga.iter().chain(gn).fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            continue;
        }
        let err = ga.iter().zip(gn).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(err / scale);
    }
    Ok(worst)
}
