use crate::{Block, Error, Matrix, Result, Vector};

/// Largest accepted condition estimate of the full saddle block.
pub const SADDLE_CONDITION_LIMIT: f64 = 1e12;

/// Solve `[[M, Cᵀ], [C, 0]] · (x, y) = (rhs_top, rhs_bot)`.
///
/// The full `(n+m)` block is factored with partial-pivoting LU. A condition
/// estimate from the singular values gates the solve; on failure the error
/// names the block that degenerated.
pub fn solve_saddle(m: &Matrix, c: &Matrix, rhs_top: &Vector, rhs_bot: &Vector) -> Result<(Vector, Vector)> {
    let n = m.nrows();
    let k = c.nrows();
    if m.ncols() != n || rhs_top.len() != n || (k > 0 && c.ncols() != n) || rhs_bot.len() != k {
        return Err(Error::Dimension(format!(
            "saddle system with M {}x{}, C {}x{}, rhs {} + {}",
            m.nrows(),
            m.ncols(),
            c.nrows(),
            c.ncols(),
            rhs_top.len(),
            rhs_bot.len()
        )));
    }

    let mut block = Matrix::zeros(n + k, n + k);
    block.view_mut((0, 0), (n, n)).copy_from(m);
    if k > 0 {
        block.view_mut((n, 0), (k, n)).copy_from(c);
        block.view_mut((0, n), (n, k)).copy_from(&c.transpose());
    }
    let mut rhs = Vector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(rhs_top);
    rhs.rows_mut(n, k).copy_from(rhs_bot);

    let condition = condition_estimate(&block);
    if !(condition < SADDLE_CONDITION_LIMIT) {
        let block = if k > 0 && condition_estimate(&(c * c.transpose())) >= SADDLE_CONDITION_LIMIT {
            Block::Constraint
        } else {
            Block::Mass
        };
        return Err(Error::Singular { block, condition });
    }

    let sol = block
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular { block: Block::Mass, condition: f64::INFINITY })?;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
}

fn condition_estimate(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    if a.iter().any(|x| !x.is_finite()) {
        return f64::INFINITY;
    }
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if max == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_data() {
        let (x, y) = solve_saddle(
            &Matrix::identity(2, 2),
            &Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            &Vector::zeros(2),
            &Vector::zeros(1),
        )
        .unwrap();
        assert_eq!(x, Vector::zeros(2));
        assert_eq!(y, Vector::zeros(1));
    }

    #[test]
    fn hand_elimination() {
        let (x, y) = solve_saddle(
            &(Matrix::identity(2, 2) * 2.0),
            &Matrix::from_row_slice(1, 2, &[0.0, 1.0]),
            &Vector::from_vec(vec![2.0, 2.0]),
            &Vector::zeros(1),
        )
        .unwrap();
        assert!((x - Vector::from_vec(vec![1.0, 0.0])).norm() < 1e-15);
        assert!((y[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn random_well_conditioned_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let b = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            let m = &b * b.transpose() + Matrix::identity(4, 4);
            let c = Matrix::from_fn(1, 4, |_, _| rng.random_range(-1.0..1.0));
            let top = Vector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let bot = Vector::from_fn(1, |_, _| rng.random_range(-1.0..1.0));
            let (x, y) = solve_saddle(&m, &c, &top, &bot).unwrap();
            assert!((&m * &x + c.transpose() * &y - &top).norm() < 1e-10);
            assert!((&c * &x - &bot).norm() < 1e-10);
        }
    }

    #[test]
    fn dependent_constraints_are_named() {
        let c = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let err = solve_saddle(&Matrix::identity(2, 2), &c, &Vector::zeros(2), &Vector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::Singular { block: Block::Constraint, .. }));
    }

    #[test]
    fn singular_mass_is_named() {
        let m = Matrix::zeros(2, 2);
        let c = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let err = solve_saddle(&m, &c, &Vector::zeros(2), &Vector::zeros(1)).unwrap_err();
        assert!(matches!(err, Error::Singular { block: Block::Mass, .. }));
    }

    #[test]
    fn unconstrained_block() {
        let m = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let (x, y) = solve_saddle(&m, &Matrix::zeros(0, 2), &Vector::from_vec(vec![2.0, 2.0]), &Vector::zeros(0)).unwrap();
        assert_eq!(y.len(), 0);
        assert!((x - Vector::from_vec(vec![1.0, 0.5])).norm() < 1e-15);
    }
}
