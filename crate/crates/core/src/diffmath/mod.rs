//! Dense matrices and a differentiation engine for second-order objectives.
//!
//! Jacobian-vector products are recorded on the tape in forward mode
//! ([`Tape::jvp`]), vector-Jacobian products in reverse mode ([`Tape::vjp`]);
//! both yield ordinary tape nodes, and [`Tape::gradient`] runs a numeric
//! reverse sweep over everything, including those nodes.

mod func;
mod matrix;
mod tape;

pub use func::{Elementwise, MAX_ORDER};
pub use matrix::Matrix;
pub use tape::{sorted_sum, DiffError, Tape, Var};

/// Gradient of a scalar objective at `at`.
///
/// `objective` receives the tape and the parameter vector (an `n x 1`
/// variable) and must return a `1 x 1` node.
pub fn grad<F>(objective: F, at: &[f64]) -> Result<Vec<f64>, DiffError>
where
    F: FnOnce(&mut Tape, Var) -> Var,
{
    value_and_grad(objective, at).map(|(_, g)| g)
}

pub fn value_and_grad<F>(objective: F, at: &[f64]) -> Result<(f64, Vec<f64>), DiffError>
where
    F: FnOnce(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let p = tape.variable(Matrix::column_vector(at.to_vec()));
    let out = objective(&mut tape, p);
    let g = tape.gradient(out, p)?;
    Ok((tape.scalar(out), g.into_vec()))
}

/// `J(at) * direction` for the vector function `map` (forward mode).
pub fn jvp<F>(map: F, at: &[f64], direction: &[f64]) -> Result<Vec<f64>, DiffError>
where
    F: FnOnce(&mut Tape, Var) -> Var,
{
    if at.len() != direction.len() {
        return Err(DiffError::Shape {
            op: "jvp",
            detail: format!("direction of length {} for input of length {}", direction.len(), at.len()),
        });
    }
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::column_vector(at.to_vec()));
    let y = map(&mut tape, x);
    let v = tape.constant(Matrix::column_vector(direction.to_vec()));
    let t = tape.jvp(x, y, v);
    tape.check()?;
    Ok(tape.value(t).as_slice().to_vec())
}

/// `J(at)^T * covector` for the vector function `map` (reverse mode).
pub fn vjp<F>(map: F, at: &[f64], covector: &[f64]) -> Result<Vec<f64>, DiffError>
where
    F: FnOnce(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::column_vector(at.to_vec()));
    let y = map(&mut tape, x);
    tape.check()?;
    if tape.value(y).len() != covector.len() {
        return Err(DiffError::Shape {
            op: "vjp",
            detail: format!(
                "covector of length {} for output of length {}",
                covector.len(),
                tape.value(y).len()
            ),
        });
    }
    let (r, c) = tape.shape(y);
    let w = tape.constant(Matrix::from_vec(r, c, covector.to_vec()));
    let t = tape.vjp(x, y, w);
    tape.check()?;
    Ok(tape.value(t).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `x -> (x1^2, x1*x2)`
    fn quad_map(t: &mut Tape, x: Var) -> Var {
        let x1 = t.select_rows(x, 0, 1);
        let x2 = t.select_rows(x, 1, 1);
        let a = t.mul(x1, x1);
        let b = t.mul(x1, x2);
        let a = t.embed_rows(a, 0, 2);
        let b = t.embed_rows(b, 1, 2);
        t.add(a, b)
    }

    #[test]
    fn gradient_of_square() {
        let g = grad(|t, p| t.mul(p, p), &[3.0]).unwrap();
        assert_eq!(g, vec![6.0]);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = grad(
            |t, _p| t.constant(Matrix::scalar(4.0)),
            &[1.0, -2.0, 0.5],
        )
        .unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn jvp_identity_and_hand_jacobian() {
        assert_eq!(jvp(|_, x| x, &[1.0, 2.0], &[0.3, -4.0]).unwrap(), vec![0.3, -4.0]);
        assert_eq!(jvp(quad_map, &[1.0, 2.0], &[1.0, 0.0]).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn vjp_identity_and_hand_jacobian() {
        assert_eq!(vjp(|_, x| x, &[1.0, 2.0], &[0.3, -4.0]).unwrap(), vec![0.3, -4.0]);
        assert_eq!(vjp(quad_map, &[1.0, 2.0], &[1.0, 1.0]).unwrap(), vec![4.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        assert!(matches!(
            jvp(|_, x| x, &[1.0, 2.0], &[1.0]),
            Err(DiffError::Shape { .. })
        ));
        assert!(matches!(
            vjp(|_, x| x, &[1.0, 2.0], &[1.0]),
            Err(DiffError::Shape { .. })
        ));
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 3));
        t.matmul(a, b);
        assert!(matches!(t.check(), Err(DiffError::Shape { op: "matmul", .. })));
    }

    #[test]
    fn non_finite_reports_failing_node() {
        let err = grad(
            |t, p| {
                let z = t.constant(Matrix::scalar(0.0));
                let q = t.div(p, z);
                t.sum(q)
            },
            &[1.0],
        )
        .unwrap_err();
        assert_eq!(err, DiffError::NonFinite { node: 2, op: "div" });
    }

    #[test]
    fn atan2_derivatives() {
        let map = |t: &mut Tape, x: Var| {
            let a = t.select_rows(x, 0, 1);
            let b = t.select_rows(x, 1, 1);
            t.atan2(b, a)
        };
        let at = [0.6, -0.8];
        let j = jvp(map, &at, &[1.0, 0.0]).unwrap()[0];
        assert!((j - 0.8).abs() < 1e-15);
        let v = vjp(map, &at, &[1.0]).unwrap();
        assert!((v[0] - 0.8).abs() < 1e-15 && (v[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn replay_is_bit_identical_and_accepts_new_leaves() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_vec(2, 1, vec![0.3, -1.2]));
        let w = t.constant(Matrix::from_vec(2, 2, vec![1.0, 2.0, -0.5, 0.25]));
        let h = t.matmul(w, x);
        let a = t.apply(Elementwise::Tanh, h);
        let s = t.sum(a);
        assert_eq!(&t.replay(&[], s).unwrap(), t.value(s));
        let other = Matrix::from_vec(2, 1, vec![0.0, 0.0]);
        assert_eq!(t.replay(&[(x, other)], s).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn sorted_sum_ignores_order() {
        let v = [1e16, 1.0, -1e16, 3.5, 1e-3];
        let mut w = v;
        w.reverse();
        assert_eq!(sorted_sum(&v), sorted_sum(&w));
    }
}
