use super::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn evaluate<F>(f: &mut F, params: &[Tensor]) -> Result<f64>
where
    F: FnMut(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &ids)?;
    let v = tape.value(loss).item()?;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("grad_check: loss evaluated to {v}")));
    }
    Ok(v)
}

/// Compares tape gradients of `f` against central differences.
///
/// `f` rebuilds the scalar loss on a fresh tape from the supplied parameter
/// leaves; it must be deterministic (reseed any dropout inside it). Returns
/// `max |analytic - numeric| / max(1, |analytic|, |numeric|)` over every
/// parameter element.
pub fn grad_check<F>(mut f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: FnMut(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (pi, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(*id);
        for e in 0..work[pi].len() {
            let orig = work[pi].data()[e];
            work[pi].data_mut()[e] = orig + step;
            let up = evaluate(&mut f, &work)?;
            work[pi].data_mut()[e] = orig - step;
            let down = evaluate(&mut f, &work)?;
            work[pi].data_mut()[e] = orig;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[e];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
