//! Central finite differences, the independent oracle for every reverse-mode
//! gradient in the test suite. Shared with the acceptance target.
#![allow(dead_code)]

pub mod cases;
pub mod stats;

use stutter_core::{GradBuffer, Graph, ParamStore, Tensor, Var};

/// Relative error `|a - n| / max(|a|, |n|, SCALE_FLOOR)`; gradients below
/// the floor are compared on an absolute scale, since double-precision
/// differencing noise is about 1e-12 regardless of the gradient's size.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl Report {
    fn record(&mut self, what: &str, i: usize, a: f64, n: f64, tol: f64, floor: f64) -> Result<(), String> {
        self.checked += 1;
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > self.worst {
            self.worst = rel;
            self.worst_at = format!("{what}[{i}] analytic {a:e} numeric {n:e}");
        }
        if rel > tol {
            return Err(format!("{what}[{i}]: analytic {a:e} vs numeric {n:e}"));
        }
        Ok(())
    }
}

pub const SCALE_FLOOR: f64 = 1e-6;

fn step(x: f64) -> f64 {
    1e-4 * x.abs().max(1.0)
}

/// Fourth-order central difference: truncation error O(h⁴), so a fairly
/// large step keeps rounding noise near 1e-12.
fn derivative(f: &mut dyn FnMut(f64) -> f64, x: f64) -> f64 {
    let h = step(x);
    let d1 = f(x + h) - f(x - h);
    let d2 = f(x + 2.0 * h) - f(x - 2.0 * h);
    (8.0 * d1 - d2) / (12.0 * h)
}

/// Deterministic projection weights so a non-scalar output reduces to a
/// scalar whose gradient exercises every output element differently.
fn projection(len: usize) -> Vec<f64> {
    (0..len).map(|i| ((i as f64 * 0.7548776662).fract() - 0.5) * 2.0 + 0.1).collect()
}

fn project(g: &mut Graph<'_, f64>, out: Var) -> Var {
    let shape = g.shape(out).to_vec();
    if shape.iter().product::<usize>() == 1 {
        return out;
    }
    let w = g.constant(Tensor::new(&shape, projection(shape.iter().product())).unwrap());
    let m = g.mul(out, w).unwrap();
    g.sum(m)
}

fn eval(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars);
    let s = project(&mut g, out);
    g.value(s).item()
}

/// Checks the gradient of `f` with respect to every element of every input.
pub fn check_inputs(
    inputs: &[Tensor<f64>],
    f: &dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
    tol: f64,
) -> Result<Report, String> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars);
    let s = project(&mut g, out);
    g.backward(s).map_err(|e| e.to_string())?;
    let mut report = Report::default();
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).expect("leaf requires grad");
        for i in 0..inputs[k].len() {
            let mut work = inputs.to_vec();
            let n = derivative(
                &mut |x| {
                    work[k].data_mut()[i] = x;
                    eval(&work, f)
                },
                inputs[k].data()[i],
            );
            report.record(&format!("input{k}"), i, analytic.data()[i], n, tol, SCALE_FLOOR)?;
        }
    }
    Ok(report)
}

/// Checks `analytic` against central differences of `loss` for every
/// parameter element. `stride` > 1 samples every stride-th element of large
/// tensors (always including the first and last).
pub fn check_params(
    params: &ParamStore<f64>,
    loss: &dyn Fn(&ParamStore<f64>) -> f64,
    analytic: &GradBuffer<f64>,
    tol: f64,
    stride: usize,
) -> Result<Report, String> {
    let mut report = Report::default();
    let mut work = params.clone();
    for (id, name, t) in params.iter() {
        let n = t.len();
        let picks: Vec<usize> = (0..n).filter(|&i| i % stride.max(1) == 0 || i + 1 == n).collect();
        for i in picks {
            let x = t.data()[i];
            let n = derivative(
                &mut |v| {
                    work.get_mut(id).data_mut()[i] = v;
                    loss(&work)
                },
                x,
            );
            work.get_mut(id).data_mut()[i] = x;
            report.record(name, i, analytic.get(id)[i], n, tol, SCALE_FLOOR)?;
        }
    }
    Ok(report)
}
