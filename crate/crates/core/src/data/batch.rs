use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Shuffles `0..n` with `rng` and cuts it into batches of `batch_size`; the
/// final short batch is kept.
pub fn batches(n: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Usage("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
