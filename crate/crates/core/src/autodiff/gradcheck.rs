//! Central finite-difference gradient verification.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of comparing analytic and numeric gradients for every input.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, floor)` over all
    /// inputs jointly. The floor keeps vanishing gradients from dividing by 0.
    pub fn relative_error(&self) -> f64 {
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nn = 0.0;
        for (a, n) in self.analytic.iter().zip(&self.numeric) {
            for (&x, &y) in a.iter().zip(n) {
                diff += (x - y) * (x - y);
                na += x * x;
                nn += y * y;
            }
        }
        diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-8)
    }
}

/// Evaluates `f` on `inputs`, differentiates the scalar it returns, and
/// compares against central differences with step [`FD_STEP`].
pub fn check<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.gradients(out)?;
    let analytic = vars.iter().map(|&v| grads.get(v).into_data()).collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut col = Vec::with_capacity(inputs[i].len());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            col.push((up - down) / (2.0 * FD_STEP));
        }
        numeric.push(col);
    }
    Ok(GradCheck { analytic, numeric })
}
