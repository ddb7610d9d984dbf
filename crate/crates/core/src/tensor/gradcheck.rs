use super::Tensor;

/// Central-difference gradient of a scalar function: `(f(x + h e_i) - f(x - h e_i)) / 2h`
/// for every coordinate `i`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        *g = (up - down) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad).expect("same shape as x")
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero pairs from
/// blowing up the ratio.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| relative_error(*x, *y, floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_of_square() {
        let g = finite_diff_grad(|t| t.data()[0] * t.data()[0], &Tensor::from_vec(vec![3.0]), 1e-5);
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = finite_diff_grad(|_| 4.2, &Tensor::from_vec(vec![1.0, -2.0, 3.0]), 1e-5);
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
    }
}
