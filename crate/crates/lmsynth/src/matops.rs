//! Dense symmetric-matrix algebra shared by all other modules:
//! eigendecomposition, PSD tests, Schur complements, the Woodbury identity
//! and symmetric (isometric) vectorization.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Condition numbers above this are reported as `SingularBlock` instead of
/// silently inverting an ill-conditioned pivot.
pub const COND_LIMIT: f64 = 1e12;

/// PSD acceptance: `lambda_min >= -PSD_TOL * max(1, ||S||_2)`.
pub const PSD_TOL: f64 = 1e-8;

/// Default margin used to encode strict definiteness `S - delta*I >= 0`.
pub const DEFAULT_DELTA: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MatError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("singular block: {0}")]
    SingularBlock(String),
}

pub type MatResult<T> = Result<T, MatError>;

/// Dense real symmetric matrix. Storage is exactly symmetric: constructors
/// either check or enforce `entries[i][j] == entries[j][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds from a general square matrix by averaging with its transpose.
    pub fn symmetrize(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "SymMatrix requires a square matrix");
        let mut data = m.clone();
        for i in 0..m.nrows() {
            for j in 0..i {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        Self { data }
    }

    /// Wraps a matrix that is already symmetric to round-off; panics if the
    /// asymmetry exceeds `1e-12 * max(1, ||m||)`.
    pub fn from_symmetric(m: DMatrix<f64>) -> Self {
        let scale = 1.0_f64.max(m.norm());
        let mut asym: f64 = 0.0;
        for i in 0..m.nrows() {
            for j in 0..i {
                asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        assert!(
            asym <= 1e-12 * scale,
            "matrix is not symmetric (asymmetry {asym:.3e})"
        );
        Self::symmetrize(&m)
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: DMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            data: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self {
            data: DMatrix::from_diagonal(&DVector::from_row_slice(d)),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn spectral_norm_bound(&self) -> f64 {
        // Frobenius norm upper-bounds the spectral norm; cheap and adequate
        // for tolerance scaling.
        self.data.norm()
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.data[idx]
    }
}

/// Eigendecomposition of a symmetric matrix; eigenvalues ascending, columns
/// of the returned matrix are the matching orthonormal eigenvectors.
pub fn sym_eig(s: &SymMatrix) -> MatResult<(DVector<f64>, DMatrix<f64>)> {
    if !s.is_finite() {
        return Err(MatError::InvalidInput("non-finite entries".into()));
    }
    let se = s.data.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..s.dim()).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let vals = DVector::from_iterator(s.dim(), order.iter().map(|&k| se.eigenvalues[k]));
    let vecs = DMatrix::from_columns(
        &order
            .iter()
            .map(|&k| se.eigenvectors.column(k).into_owned())
            .collect::<Vec<_>>(),
    );
    Ok((vals, vecs))
}

/// Smallest eigenvalue of `s`; callers interpret `>= -tol` as PSD.
pub fn min_eig_margin(s: &SymMatrix) -> MatResult<f64> {
    let (vals, _) = sym_eig(s)?;
    Ok(vals[0])
}

/// PSD test at the module-level tolerance.
pub fn is_psd(s: &SymMatrix) -> MatResult<bool> {
    let margin = min_eig_margin(s)?;
    Ok(margin >= -PSD_TOL * 1.0_f64.max(s.spectral_norm_bound()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchurPivot {
    /// Invert the leading `k x k` block: returns `C - B^T A^{-1} B`.
    TopLeft,
    /// Invert the trailing block: returns `A - B C^{-1} B^T`.
    BottomRight,
}

fn checked_inverse(m: &DMatrix<f64>, what: &str) -> MatResult<DMatrix<f64>> {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 || smax / smin > COND_LIMIT {
        return Err(MatError::SingularBlock(format!(
            "{what}: condition number {:.3e} exceeds {COND_LIMIT:.0e}",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| MatError::SingularBlock(format!("{what}: not invertible")))
}

/// Schur complement of a symmetric matrix partitioned as `[[A, B], [B^T, C]]`
/// with `A` of size `k`. Satisfies: `M > 0` iff the pivot block is positive
/// definite and the complement is positive definite.
pub fn schur_complement(m: &SymMatrix, k: usize, pivot: SchurPivot) -> MatResult<SymMatrix> {
    let n = m.dim();
    if k == 0 || k >= n {
        return Err(MatError::InvalidInput(format!(
            "split {k} out of range for dimension {n}"
        )));
    }
    let a = m.data.view((0, 0), (k, k)).into_owned();
    let b = m.data.view((0, k), (k, n - k)).into_owned();
    let c = m.data.view((k, k), (n - k, n - k)).into_owned();
    let out = match pivot {
        SchurPivot::TopLeft => {
            let ainv = checked_inverse(&a, "top-left pivot")?;
            &c - b.transpose() * ainv * &b
        }
        SchurPivot::BottomRight => {
            let cinv = checked_inverse(&c, "bottom-right pivot")?;
            &a - &b * cinv * b.transpose()
        }
    };
    Ok(SymMatrix::symmetrize(&out))
}

/// `(D + U C V)^{-1}` computed as `D~ - D~ U (C~ + V D~ U)^{-1} V D~` where
/// `~` denotes inversion.
pub fn woodbury_inverse(
    d: &DMatrix<f64>,
    u: &DMatrix<f64>,
    c: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> MatResult<DMatrix<f64>> {
    let dt = checked_inverse(d, "D")?;
    let ct = checked_inverse(c, "C")?;
    let inner = &ct + v * &dt * u;
    let inner_inv = checked_inverse(&inner, "C~ + V D~ U")?;
    Ok(&dt - &dt * u * inner_inv * v * &dt)
}

/// Symmetric square root of a PSD matrix (eigenvalues clipped at zero).
pub fn sqrt_psd(s: &SymMatrix) -> MatResult<SymMatrix> {
    let (vals, vecs) = sym_eig(s)?;
    let d = DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    Ok(SymMatrix::symmetrize(&(&vecs * d * vecs.transpose())))
}

/// Dimension of `svec` for an `n x n` symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Isometric vectorization: diagonal entries as-is, off-diagonals scaled by
/// sqrt(2), column-major lower triangle, so that
/// `<S1, S2>_F = svec(S1) . svec(S2)`.
pub fn svec(s: &SymMatrix) -> DVector<f64> {
    let n = s.dim();
    let mut out = DVector::zeros(svec_len(n));
    let mut k = 0;
    let r2 = std::f64::consts::SQRT_2;
    for j in 0..n {
        for i in j..n {
            out[k] = if i == j { s[(i, j)] } else { r2 * s[(i, j)] };
            k += 1;
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64]) -> MatResult<SymMatrix> {
    // solve n(n+1)/2 = len
    let len = v.len();
    let n = ((-1.0 + (1.0 + 8.0 * len as f64).sqrt()) / 2.0).round() as usize;
    if svec_len(n) != len {
        return Err(MatError::InvalidInput(format!(
            "length {len} is not a triangular number"
        )));
    }
    let mut m = DMatrix::zeros(n, n);
    let inv_r2 = 1.0 / std::f64::consts::SQRT_2;
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            let val = if i == j { v[k] } else { inv_r2 * v[k] };
            m[(i, j)] = val;
            m[(j, i)] = val;
            k += 1;
        }
    }
    Ok(SymMatrix { data: m })
}

/// Block matrix assembler for the 4- and 5-block structures used by the
/// inequality builders and their test oracles. Off-diagonal placements are
/// mirrored automatically so the assembled matrix is symmetric.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
    data: DMatrix<f64>,
}

impl BlockMatrix {
    pub fn new_symmetric(dims: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        for &d in dims {
            offsets.push(total);
            total += d;
        }
        Self {
            dims: dims.to_vec(),
            offsets,
            total,
            data: DMatrix::zeros(total, total),
        }
    }

    pub fn offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    /// Adds `m` at block position `(bi, bj)`; for `bi != bj`, `m^T` is added
    /// at `(bj, bi)` as well.
    pub fn add(&mut self, bi: usize, bj: usize, m: &DMatrix<f64>) {
        assert_eq!(m.nrows(), self.dims[bi], "row dim mismatch");
        assert_eq!(m.ncols(), self.dims[bj], "col dim mismatch");
        let (r0, c0) = (self.offsets[bi], self.offsets[bj]);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.data[(r0 + i, c0 + j)] += m[(i, j)];
                if bi != bj {
                    self.data[(c0 + j, r0 + i)] += m[(i, j)];
                }
            }
        }
    }

    pub fn assemble(&self) -> SymMatrix {
        SymMatrix::from_symmetric(self.data.clone())
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        SymMatrix::symmetrize(&m)
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        SymMatrix::symmetrize(&(&m * m.transpose() + DMatrix::identity(n, n) * 0.1))
    }

    #[test]
    fn eig_identity() {
        let (vals, _) = sym_eig(&SymMatrix::identity(3)).unwrap();
        for i in 0..3 {
            assert!((vals[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eig_diagonal_sorted() {
        let s = SymMatrix::from_diagonal(&[-1.0, 2.0]);
        let (vals, vecs) = sym_eig(&s).unwrap();
        assert!((vals[0] + 1.0).abs() < 1e-12);
        assert!((vals[1] - 2.0).abs() < 1e-12);
        // eigenvectors are +-e1, +-e2
        assert!(vecs[(0, 0)].abs() > 0.999);
        assert!(vecs[(1, 1)].abs() > 0.999);
    }

    #[test]
    fn eig_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_sym(&mut rng, 5);
        let (vals, vecs) = sym_eig(&s).unwrap();
        let rec = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        let err = (s.as_dmatrix() - rec).norm();
        assert!(err < 1e-10 * s.as_dmatrix().norm().max(1.0), "err = {err}");
    }

    #[test]
    fn eig_rejects_nonfinite() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 0)] = f64::NAN;
        let s = SymMatrix { data: m };
        assert!(matches!(sym_eig(&s), Err(MatError::InvalidInput(_))));
    }

    #[test]
    fn margin_examples() {
        assert_eq!(min_eig_margin(&SymMatrix::zeros(3)).unwrap(), 0.0);
        let m = min_eig_margin(&SymMatrix::from_diagonal(&[3.0, -0.5])).unwrap();
        assert!((m + 0.5).abs() < 1e-12);
    }

    #[test]
    fn schur_identity_and_hand_value() {
        let s = schur_complement(&SymMatrix::identity(2), 1, SchurPivot::TopLeft).unwrap();
        assert!((s[(0, 0)] - 1.0).abs() < 1e-14);

        let m = SymMatrix::from_symmetric(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        let s = schur_complement(&m, 1, SchurPivot::TopLeft).unwrap();
        assert!((s[(0, 0)] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn schur_psd_equivalence_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.gen_range(2..6);
            let k = rng.gen_range(1..n);
            // Mix PSD and indefinite cases.
            let m = if rng.gen_bool(0.5) {
                random_psd(&mut rng, n)
            } else {
                random_sym(&mut rng, n)
            };
            let pivot = m.as_dmatrix().view((0, 0), (k, k)).into_owned();
            let pivot = SymMatrix::symmetrize(&pivot);
            if min_eig_margin(&pivot).unwrap() < 1e-6 {
                continue; // pivot must be PD for the equivalence
            }
            let comp = schur_complement(&m, k, SchurPivot::TopLeft).unwrap();
            let whole = min_eig_margin(&m).unwrap() >= -1e-10;
            let split = min_eig_margin(&comp).unwrap() >= -1e-10;
            assert_eq!(whole, split, "schur PSD equivalence failed");
        }
    }

    #[test]
    fn schur_singular_pivot() {
        let m = SymMatrix::from_diagonal(&[0.0, 1.0]);
        assert!(matches!(
            schur_complement(&m, 1, SchurPivot::TopLeft),
            Err(MatError::SingularBlock(_))
        ));
    }

    #[test]
    fn woodbury_trivial_and_hand() {
        let i2 = DMatrix::identity(2, 2);
        let w = woodbury_inverse(&i2, &(0.0 * &i2), &i2, &(0.0 * &i2)).unwrap();
        assert!((w - &i2).norm() < 1e-14);

        // D = 2I, U = V = C = I  =>  (3I)^{-1}
        let w = woodbury_inverse(&(2.0 * &i2), &i2, &i2, &i2).unwrap();
        assert!((w - &i2 / 3.0).norm() < 1e-12);
    }

    #[test]
    fn woodbury_matches_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(1..6);
            let q = rng.gen_range(1..4);
            let d = random_psd(&mut rng, n).into_dmatrix() + DMatrix::identity(n, n);
            let c = random_psd(&mut rng, q).into_dmatrix() + DMatrix::identity(q, q);
            let u = DMatrix::from_fn(n, q, |_, _| rng.gen_range(-1.0..1.0));
            let v = u.transpose();
            let sum = &d + &u * &c * &v;
            let direct = sum.clone().try_inverse().unwrap();
            let wood = woodbury_inverse(&d, &u, &c, &v).unwrap();
            let rel = (&wood - &direct).norm() / direct.norm();
            assert!(rel < 1e-9, "relative error {rel}");
            let residual = (&sum * &wood - DMatrix::identity(n, n)).norm();
            assert!(residual < 1e-9 * sum.norm().max(1.0));
        }
    }

    #[test]
    fn woodbury_lm_coupling_identity() {
        // (lam_ii P_i + sum_{j != i} lam_ji P_j)^{-1} reproduced from the
        // block form, random P's and weights.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = 3;
            let nm1 = 2usize;
            let p_i = random_psd(&mut rng, n).into_dmatrix();
            let p_j: Vec<_> = (0..nm1)
                .map(|_| random_psd(&mut rng, n).into_dmatrix())
                .collect();
            let lam_ii: f64 = rng.gen_range(0.2..0.8);
            let lam_ji: Vec<f64> = (0..nm1).map(|_| rng.gen_range(0.1..0.6)).collect();

            // D = stacked coupling, U = (1 (x) I), C = lam_ii^{-1} P_i^{-1} ... use
            // the identity with D = blkdiag(lam_ji P_j)^{-1}? Direct check of the
            // sum via woodbury on (D + U C V) with D = sum_{j} lam_ji P_j ... here
            // we verify the proof step: inverting
            //   blkdiag((lam_ji P_j)~) + (1 (x) I) (lam_ii P_i)~ (1 (x) I)^T
            // through the woodbury routine and comparing against the direct
            // inverse of the assembled matrix.
            let dim = nm1 * n;
            let mut dmat = DMatrix::zeros(dim, dim);
            for (k, pj) in p_j.iter().enumerate() {
                let inv = (lam_ji[k] * pj).try_inverse().unwrap();
                dmat.view_mut((k * n, k * n), (n, n)).copy_from(&inv);
            }
            let mut u = DMatrix::zeros(dim, n);
            for k in 0..nm1 {
                u.view_mut((k * n, 0), (n, n))
                    .copy_from(&DMatrix::identity(n, n));
            }
            let c = (lam_ii * &p_i).try_inverse().unwrap();
            let v = u.transpose();
            let assembled = &dmat + &u * &c * &v;
            let direct = assembled.clone().try_inverse().unwrap();
            let wood = woodbury_inverse(&dmat, &u, &c, &v).unwrap();
            assert!((&wood - &direct).norm() / direct.norm() < 1e-9);

            // And the Schur-reduction identity used in the DT theorem:
            // ( sum_j lam_ji P_j )^{-1} equals
            // c - c U^T (D + U c U^T)^{-1} U c with c = (lam_ii P_i)~.
            let total: DMatrix<f64> = lam_ii * &p_i
                + p_j
                    .iter()
                    .zip(&lam_ji)
                    .map(|(pj, &l)| l * pj)
                    .sum::<DMatrix<f64>>();
            let lhs = total.try_inverse().unwrap();
            let rhs = &c - &c * &v * assembled.try_inverse().unwrap() * &u * &c;
            assert!((&lhs - &rhs).norm() / lhs.norm() < 1e-8);
        }
    }

    #[test]
    fn svec_hand_cases() {
        let v = svec(&SymMatrix::identity(2));
        assert_eq!(v.as_slice(), &[1.0, 0.0, 1.0]);

        let s = SymMatrix::from_symmetric(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let v = svec(&s);
        assert!((v[0]).abs() < 1e-15);
        assert!((v[1] - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!((v[2]).abs() < 1e-15);
    }

    #[test]
    fn svec_roundtrip_and_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let s1 = random_sym(&mut rng, 6);
            let s2 = random_sym(&mut rng, 6);
            let rt = smat(svec(&s1).as_slice()).unwrap();
            assert!((rt.as_dmatrix() - s1.as_dmatrix()).norm() < 1e-14);
            let frob = (s1.as_dmatrix().transpose() * s2.as_dmatrix()).trace();
            let dot = svec(&s1).dot(&svec(&s2));
            assert!((frob - dot).abs() < 1e-12, "isometry violated");
        }
    }

    #[test]
    fn smat_rejects_bad_length() {
        assert!(matches!(
            smat(&[1.0, 2.0, 3.0, 4.0]),
            Err(MatError::InvalidInput(_))
        ));
    }

    #[test]
    fn block_matrix_assembly() {
        let mut b = BlockMatrix::new_symmetric(&[1, 2]);
        b.add(0, 0, &DMatrix::from_row_slice(1, 1, &[2.0]));
        b.add(0, 1, &DMatrix::from_row_slice(1, 2, &[3.0, 4.0]));
        b.add(1, 1, &DMatrix::identity(2, 2));
        let s = b.assemble();
        assert_eq!(s.dim(), 3);
        assert_eq!(s[(0, 1)], 3.0);
        assert_eq!(s[(1, 0)], 3.0);
        assert_eq!(s[(2, 0)], 4.0);
    }
}
