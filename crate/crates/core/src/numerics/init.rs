use crate::numerics::{Rng, Tensor};

/// Uniform Glorot initialization, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform_range(-a, a)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.uniform_range(-scale, scale))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

pub fn zeros(n: usize) -> Tensor {
    Tensor::zeros(&[n])
}

pub fn filled(n: usize, value: f64) -> Tensor {
    Tensor::vector(vec![value; n])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bounds() {
        let mut rng = Rng::new(3);
        let t = glorot(10, 20, &mut rng);
        let a = (6.0f64 / 30.0).sqrt();
        assert_eq!(t.shape(), &[10, 20]);
        assert!(t.data().iter().all(|v| v.abs() <= a));
    }
}
