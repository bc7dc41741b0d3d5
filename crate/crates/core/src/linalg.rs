//! Dense matrix helpers on top of nalgebra: exponential, principal
//! logarithm, null spaces and orthonormal spans.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn skew_part(m: &Mat) -> Mat {
    (m - m.transpose()) * 0.5
}

pub fn commutator(a: &Mat, b: &Mat) -> Mat {
    a * b - b * a
}

pub fn frobenius_inner(a: &Mat, b: &Mat) -> f64 {
    a.component_mul(b).sum()
}

/// Largest singular value.
pub fn operator_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn expm(a: &Mat) -> Mat {
    let n = a.nrows();
    let norm = a.norm();
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let x = a * scale;
    let mut term = Mat::identity(n, n);
    let mut sum = Mat::identity(n, n);
    for k in 1..=18 {
        term = &term * &x / f64::from(k);
        sum += &term;
        if term.norm() < 1e-18 * sum.norm() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

fn try_inverse(m: &Mat) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::LogBranch("singular iterate in square root".into()))
}

/// Principal square root by the Denman–Beavers iteration.
pub fn sqrtm(a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = Mat::identity(n, n);
    for _ in 0..100 {
        let yi = try_inverse(&y)?;
        let zi = try_inverse(&z)?;
        let y_next = (&y + &zi) * 0.5;
        let z_next = (&z + &yi) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.norm() {
            return Ok(y);
        }
    }
    Err(Error::LogBranch("square-root iteration did not converge".into()))
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Rejects matrices with an eigenvalue at (or numerically near) -1, where
/// the principal branch is undefined for orthogonal operators.
pub fn logm(a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let id = Mat::identity(n, n);
    let shifted = a + &id;
    let sv = shifted.singular_values();
    if sv.min() < 1e-6 * sv.max().max(1.0) {
        return Err(Error::LogBranch(format!(
            "eigenvalue near -1 (smallest singular value of A+I is {:e})",
            sv.min()
        )));
    }
    let mut m = a.clone();
    let mut roots = 0u32;
    while (&m - &id).norm() > 0.25 {
        if roots >= 40 {
            return Err(Error::LogBranch("too many square roots".into()));
        }
        m = sqrtm(&m)?;
        roots += 1;
    }
    // log(M) = 2 atanh(S), S = (M - I)(M + I)^-1
    let s = (&m - &id) * try_inverse(&(&m + &id))?;
    let s2 = &s * &s;
    let mut term = s.clone();
    let mut sum = s.clone();
    for k in 1..60 {
        term = &term * &s2;
        let add = &term / f64::from(2 * k + 1);
        sum += &add;
        if add.norm() < 1e-18 {
            break;
        }
    }
    Ok(sum * 2.0 * f64::from(2u32).powi(roots as i32))
}

/// Gram–Schmidt of the columns of `basis` with respect to the inner product
/// `gram` (u, v) -> uᵀ G v. Re-orthogonalizes once for stability.
pub fn gram_schmidt(basis: &Mat, gram: &Mat) -> Option<Mat> {
    let n = basis.ncols();
    let mut out = Mat::zeros(basis.nrows(), n);
    for j in 0..n {
        let mut v = basis.column(j).into_owned();
        for _pass in 0..2 {
            for i in 0..j {
                let e = out.column(i);
                let proj = (e.transpose() * gram * &v)[(0, 0)];
                v -= e * proj;
            }
        }
        let norm2 = (v.transpose() * gram * &v)[(0, 0)];
        if !(norm2 > 1e-300) {
            return None;
        }
        out.set_column(j, &(v / norm2.sqrt()));
    }
    Some(out)
}

/// Orthonormal basis of the null space of `a`: right singular vectors whose
/// singular value is below `tol`. Returned as columns.
pub fn null_space(a: &Mat, tol: f64) -> Mat {
    let cols = a.ncols();
    if a.nrows() == 0 {
        return Mat::identity(cols, cols);
    }
    // Pad to at least `cols` rows so that V is square.
    let padded = if a.nrows() < cols {
        let mut p = Mat::zeros(cols, cols);
        p.view_mut((0, 0), (a.nrows(), cols)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let picked: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] < tol).collect();
    let mut out = Mat::zeros(cols, picked.len());
    for (k, &i) in picked.iter().enumerate() {
        out.set_column(k, &v_t.row(i).transpose());
    }
    out
}

/// SVD of the row-stacked `samples`; returns (singular values descending,
/// right singular vectors as rows).
pub fn row_svd(samples: &Mat) -> (Vec<f64>, Mat) {
    let cols = samples.ncols();
    let padded = if samples.nrows() < cols {
        let mut p = Mat::zeros(cols, cols);
        p.view_mut((0, 0), (samples.nrows(), cols)).copy_from(samples);
        p
    } else {
        samples.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut rows = Mat::zeros(order.len(), cols);
    for (k, &i) in order.iter().enumerate() {
        rows.set_row(k, &v_t.row(i));
    }
    (values, rows)
}

/// Index pairs (a, b), a < b, enumerating the standard basis of so(n).
pub fn skew_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Skew matrix E_ab - E_ba.
pub fn skew_unit(n: usize, a: usize, b: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    m[(a, b)] = 1.0;
    m[(b, a)] = -1.0;
    m
}

/// Coordinates of a skew matrix in the basis `(E_ab - E_ba)/sqrt(2)`, which
/// is Frobenius-orthonormal.
pub fn skew_to_vec(m: &Mat) -> Vector {
    let pairs = skew_pairs(m.nrows());
    let s = std::f64::consts::SQRT_2;
    Vector::from_iterator(pairs.len(), pairs.iter().map(|&(a, b)| (m[(a, b)] - m[(b, a)]) / s))
}

pub fn vec_to_skew(v: &Vector, n: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    let s = std::f64::consts::SQRT_2;
    for (k, &(a, b)) in skew_pairs(n).iter().enumerate() {
        m[(a, b)] = v[k] / s;
        m[(b, a)] = -v[k] / s;
    }
    m
}

/// Least-squares slope of log(residual) against log(step). For a method of
/// order p the slope approaches p.
pub fn observed_order(steps: &[f64], residuals: &[f64]) -> f64 {
    assert_eq!(steps.len(), residuals.len());
    let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = residuals.iter().map(|r| r.max(f64::MIN_POSITIVE).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_skew(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Mat {
        let m = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        skew_part(&m) * scale
    }

    #[test]
    fn log_inverts_exp_on_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 3, 4, 6] {
            for _ in 0..20 {
                let a = random_skew(n, 1.2, &mut rng);
                let r = expm(&a);
                assert!((r.transpose() * &r - Mat::identity(n, n)).norm() < 1e-13);
                let l = logm(&r).unwrap();
                assert!((&l - &a).norm() < 1e-10, "n={n}: {}", (&l - &a).norm());
            }
        }
    }

    #[test]
    fn log_rejects_half_turn() {
        let r = expm(&(skew_unit(3, 0, 1) * std::f64::consts::PI));
        assert!(matches!(logm(&r), Err(Error::LogBranch(_))));
    }

    #[test]
    fn exp_of_plane_generator_is_rotation() {
        let t = 0.7f64;
        let r = expm(&(skew_unit(2, 0, 1) * t));
        assert!((r[(0, 0)] - t.cos()).abs() < 1e-15);
        assert!((r[(0, 1)] - t.sin()).abs() < 1e-15);
    }

    #[test]
    fn null_space_of_rank_deficient_map() {
        let a = Mat::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let ns = null_space(&a, 1e-10);
        assert_eq!(ns.ncols(), 1);
        assert!((ns[(2, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn skew_coordinates_are_isometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_skew(5, 1.0, &mut rng);
        let v = skew_to_vec(&m);
        assert!((v.norm() - m.norm()).abs() < 1e-14);
        assert!((vec_to_skew(&v, 5) - m).norm() < 1e-14);
    }

    #[test]
    fn gram_schmidt_is_orthonormal_in_metric() {
        let g = Mat::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5]);
        let e = gram_schmidt(&Mat::identity(3, 3), &g).unwrap();
        assert!((e.transpose() * &g * &e - Mat::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn observed_order_of_power_law() {
        let hs = [0.1, 0.05, 0.025];
        let rs: Vec<f64> = hs.iter().map(|h: &f64| 3.0 * h.powi(4)).collect();
        assert!((observed_order(&hs, &rs) - 4.0).abs() < 1e-12);
    }
}
