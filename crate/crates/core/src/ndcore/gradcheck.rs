//! Finite-difference verification of backpropagated gradients.

use crate::error::Result;
use crate::ndcore::graph::{Graph, Var};
use crate::ndcore::matrix::Matrix;

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-7;

/// Relative discrepancy `|a - b| / max(|a|, |b|, GRAD_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(GRAD_FLOOR);
    (a - b).abs() / scale
}

/// Largest relative error between the backprop gradient of `f` at `point` and
/// the central difference `(f(x+h) - f(x-h)) / 2h`, over every coordinate.
///
/// `f` records a scalar function of its input variable on the given graph.
pub fn grad_check<F>(f: F, point: &Matrix, h: f64) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    grad_check_at(f, point, h, &coords)
}

/// [`grad_check`] restricted to the listed flat coordinates.
pub fn grad_check_at<F>(f: F, point: &Matrix, h: f64, coords: &[usize]) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, Var) -> Result<Var>,
{
    let analytic = backprop_grad(&f, point)?;
    let mut worst: f64 = 0.0;
    for &i in coords {
        let fd = central_difference(&f, point, i, h)?;
        worst = worst.max(relative_error(analytic.data()[i], fd));
    }
    Ok(worst)
}

pub fn backprop_grad<F>(f: &F, point: &Matrix) -> Result<Matrix>
where
    F: for<'g> Fn(&mut Graph<'g>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.variable(point.clone());
    let y = f(&mut g, x)?;
    g.backward(y)?;
    Ok(g.take_grad(x))
}

fn eval<F>(f: &F, point: Matrix) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.variable(point);
    let y = f(&mut g, x)?;
    Ok(g.value(y).get(0, 0))
}

fn central_difference<F>(f: &F, point: &Matrix, i: usize, h: f64) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, Var) -> Result<Var>,
{
    let mut plus = point.clone();
    plus.data_mut()[i] += h;
    let mut minus = point.clone();
    minus.data_mut()[i] -= h;
    Ok((eval(f, plus)? - eval(f, minus)?) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::graph::Activation;
    use crate::ndcore::layers::dense_forward;
    use crate::ndcore::rng::Rng;

    #[test]
    fn square_at_three() {
        // x² as the 1x1 product x · x
        let sq = |g: &mut Graph<'_>, x: Var| g.matmul(x, x);
        let p = Matrix::filled(1, 1, 3.0);
        let grad = backprop_grad(&sq, &p).unwrap();
        assert_eq!(grad.get(0, 0), 6.0);
        assert!(grad_check(sq, &p, 1e-4).unwrap() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let c = |g: &mut Graph<'_>, x: Var| {
            let z = g.mul_const(x, Matrix::zeros(2, 3))?;
            Ok(g.sum(z))
        };
        let p = Matrix::filled(2, 3, 1.25);
        assert_eq!(backprop_grad(&c, &p).unwrap(), Matrix::zeros(2, 3));
        assert_eq!(grad_check(c, &p, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn dense_mse_over_ten_points() {
        for seed in 0..10 {
            let mut rng = Rng::derive(seed, "dense-mse");
            let x = Matrix::from_fn(6, 5, |_, _| rng.uniform_range(-1.0, 1.0));
            let b = Matrix::from_fn(1, 4, |_, _| rng.uniform_range(-0.5, 0.5));
            let t = Matrix::from_fn(6, 4, |_, _| rng.uniform_range(-1.0, 1.0));
            let w = Matrix::from_fn(5, 4, |_, _| rng.uniform_range(-1.0, 1.0));
            for act in [Activation::Linear, Activation::Tanh, Activation::Relu] {
                let f = |g: &mut Graph<'_>, w: Var| {
                    let vx = g.constant(x.clone());
                    let vb = g.constant(b.clone());
                    let y = dense_forward(g, vx, w, vb, act)?;
                    g.mse(y, t.clone())
                };
                let err = grad_check(f, &w, 1e-4).unwrap();
                assert!(err < 1e-4, "seed {seed} {act:?}: {err}");
            }
        }
    }
}
