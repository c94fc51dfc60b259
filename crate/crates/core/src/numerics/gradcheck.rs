use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares the tape gradient of a scalar function against central finite
/// differences. Returns `max_i |analytic_i - numeric_i| / (|numeric_i| + 1e-12)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |point: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(point.clone());
        let out = f(&mut g, v)?;
        let val = g.value(out);
        if val.numel() != 1 {
            return Err(Error::NonScalarLoss(val.shape().to_vec()));
        }
        Ok(val.item())
    };

    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    g.backward(out)?;
    let analytic = g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic.data()[i] - numeric).abs() / (numeric.abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
