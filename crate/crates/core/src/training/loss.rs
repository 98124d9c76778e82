use crate::error::{Error, Result};
use crate::flow::FlowScale;
use crate::numerics::{Tape, Tensor, Var};

/// Records `(1/N) Σ [‖u_i‖²/2 − log|det J_i|]` on `tape`.
pub fn cflow_loss_traced(
    tape: &mut Tape,
    scale: &FlowScale,
    params: &[Var],
    z: &Tensor,
    cond: Option<&Tensor>,
) -> Result<Var> {
    if z.rows() == 0 {
        return Err(Error::Contract("loss needs at least one sample".into()));
    }
    let zv = tape.constant(z.clone());
    let cv = match cond {
        Some(c) if scale.cond_dim() > 0 => Some(tape.constant(c.clone())),
        _ => None,
    };
    let (u, logdet) = scale.inverse_traced(tape, params, zv, cv)?;
    let sq = tape.square(u)?;
    let norms = tape.row_sums(sq)?;
    let half = tape.scale(norms, 0.5)?;
    let per_sample = tape.sub(half, logdet)?;
    tape.mean(per_sample)
}

/// Loss value and gradients (flattened, declaration order) for one batch.
///
/// `batch` only labels the error raised when the loss is not finite.
pub fn cflow_loss(
    scale: &FlowScale,
    z: &Tensor,
    cond: Option<&Tensor>,
    batch: u64,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let params = scale.register(&mut tape, 0)?;
    let loss = cflow_loss_traced(&mut tape, scale, &params, z, cond)?;
    let value = tape.value(loss)?.item().expect("mean is scalar");
    if !value.is_finite() {
        return Err(Error::Training {
            batch,
            msg: format!("non-finite loss {value}"),
        });
    }
    let grads = tape
        .backward(loss)?
        .into_ordered()
        .into_iter()
        .flat_map(Tensor::into_data)
        .collect();
    Ok((value, grads))
}

/// Plain (untraced) loss value, used as an independent check of the traced path.
pub fn cflow_loss_value(scale: &FlowScale, z: &Tensor, cond: Option<&Tensor>) -> Result<f64> {
    let (u, logdet) = scale.inverse_batch(z, cond)?;
    let n = u.rows() as f64;
    Ok((0..u.rows())
        .map(|r| 0.5 * u.row(r).iter().map(|v| v * v).sum::<f64>() - logdet[r])
        .sum::<f64>()
        / n)
}
