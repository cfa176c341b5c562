//! Experiments, disturbance priors and the quadratic compatibility sets of
//! systems consistent with measured data, plus data-richness and Slater
//! checks and ellipsoid sampling used for certification.

use crate::conic::{self, BlockExpr, LmiProblem, SolveStatus};
use crate::matops::{self, MatError, MatResult, SymMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeKind {
    Ct,
    Dt,
}

/// Energy-type prior on the unknown disturbance samples `W`:
/// `[I; W']' Phi [I; W'] >= 0` with `Phi22 < 0`.
#[derive(Debug, Clone)]
pub struct DisturbancePrior {
    pub phi11: SymMatrix,
    pub phi12: DMatrix<f64>,
    pub phi22: SymMatrix,
}

impl DisturbancePrior {
    pub fn new(phi11: SymMatrix, phi12: DMatrix<f64>, phi22: SymMatrix) -> MatResult<Self> {
        if phi11.dim() != phi12.nrows() || phi12.ncols() != phi22.dim() {
            return Err(MatError::InvalidInput("prior dimension mismatch".into()));
        }
        let neg22 = SymMatrix::symmetrize(&(-phi22.as_dmatrix()));
        if phi22.dim() > 0 && matops::min_eig_margin(&neg22)? <= 0.0 {
            return Err(MatError::InvalidInput("Phi22 must be negative definite".into()));
        }
        Ok(Self { phi11, phi12, phi22 })
    }

    /// `Phi11 = eps*I, Phi12 = 0, Phi22 = -I` (energy bound).
    pub fn energy(eps: f64, n: usize, t: usize) -> Self {
        Self {
            phi11: SymMatrix::symmetrize(&(DMatrix::identity(n, n) * eps)),
            phi12: DMatrix::zeros(n, t),
            phi22: SymMatrix::symmetrize(&(-DMatrix::identity(t, t))),
        }
    }

    /// Instantaneous bound `sup_t ||w(t)||^2 <= wbar` mapped to the
    /// energy-type form: `Phi11 = T*wbar*I, Phi12 = 0, Phi22 = -I`.
    pub fn from_instantaneous_bound(wbar: f64, n: usize, t: usize) -> MatResult<Self> {
        if wbar < 0.0 {
            return Err(MatError::InvalidInput("wbar must be nonnegative".into()));
        }
        if t == 0 {
            return Err(MatError::InvalidInput("T must be at least 1".into()));
        }
        Ok(Self::energy(t as f64 * wbar, n, t))
    }

    /// Maps a prior on process-noise samples `Psi` through a known channel
    /// matrix `E` (`w = E psi`): `Phi11 = E Phihat11 E', Phi12 = E Phihat12,
    /// Phi22 = Phihat22`.
    pub fn from_process_noise(phi_hat: &DisturbancePrior, e: &DMatrix<f64>) -> MatResult<Self> {
        if e.ncols() != phi_hat.phi11.dim() {
            return Err(MatError::InvalidInput("E columns must match psi dimension".into()));
        }
        Ok(Self {
            phi11: SymMatrix::symmetrize(&(e * phi_hat.phi11.as_dmatrix() * e.transpose())),
            phi12: e * &phi_hat.phi12,
            phi22: phi_hat.phi22.clone(),
        })
    }

    /// Stacked `(n + T) x (n + T)` prior matrix.
    pub fn assemble(&self) -> SymMatrix {
        let n = self.phi11.dim();
        let t = self.phi22.dim();
        let mut b = matops::BlockMatrix::new_symmetric(&[n, t]);
        b.add(0, 0, self.phi11.as_dmatrix());
        if t > 0 {
            b.add(0, 1, &self.phi12);
            b.add(1, 1, self.phi22.as_dmatrix());
        }
        b.assemble()
    }

    /// Margin of the prior quadratic form at a concrete disturbance matrix.
    pub fn margin_at(&self, w: &DMatrix<f64>) -> MatResult<f64> {
        let form = self.phi11.as_dmatrix()
            + &self.phi12 * w.transpose()
            + w * self.phi12.transpose()
            + w * self.phi22.as_dmatrix() * w.transpose();
        matops::min_eig_margin(&SymMatrix::symmetrize(&form))
    }
}

/// Per-mode experiment data: state samples, derivative estimates (CT) or
/// successor states (DT), and inputs. Input dimension may differ per mode.
#[derive(Debug, Clone)]
pub struct ModeDataset {
    pub mode_index: usize,
    pub x: DMatrix<f64>,
    pub xdot_or_xplus: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub time_kind: TimeKind,
}

impl ModeDataset {
    pub fn new(
        mode_index: usize,
        x: DMatrix<f64>,
        xdot_or_xplus: DMatrix<f64>,
        u: DMatrix<f64>,
        time_kind: TimeKind,
    ) -> MatResult<Self> {
        if x.ncols() != xdot_or_xplus.ncols() || x.ncols() != u.ncols() && u.nrows() > 0 {
            return Err(MatError::InvalidInput(
                "sample counts disagree across X, Xdot, U".into(),
            ));
        }
        if x.nrows() != xdot_or_xplus.nrows() {
            return Err(MatError::InvalidInput("X and Xdot row counts disagree".into()));
        }
        Ok(Self {
            mode_index,
            x,
            xdot_or_xplus,
            u,
            time_kind,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn t(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RankCheck {
    Ok,
    Deficient(usize),
}

/// `ok` iff `rank(X) = n` at singular-value threshold `1e-10 * sigma_max`.
pub fn check_rank(d: &ModeDataset) -> RankCheck {
    let n = d.n();
    if d.t() == 0 {
        return RankCheck::Deficient(0);
    }
    let svd = d.x.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return RankCheck::Deficient(0);
    }
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax)
        .count();
    if rank == n {
        RankCheck::Ok
    } else {
        RankCheck::Deficient(rank)
    }
}

/// The data-dependent symmetric matrix `H` whose quadratic form in
/// `[I; A'; B']` characterizes the systems consistent with one mode's data.
/// `t == 0` marks the unconstrained set (`H = 0`: the S-procedure multiplier
/// term vanishes and membership is unrestricted).
#[derive(Debug, Clone)]
pub struct CompatibilityForm {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub h: SymMatrix,
}

/// Assembles `H` from one mode's data and its disturbance prior.
pub fn build_h(d: &ModeDataset, prior: &DisturbancePrior) -> MatResult<CompatibilityForm> {
    let (n, m, t) = (d.n(), d.m(), d.t());
    if prior.phi11.dim() != n || prior.phi22.dim() != t {
        return Err(MatError::InvalidInput(format!(
            "prior dimensions ({} x {}) do not match mode data ({n} x {t})",
            prior.phi11.dim(),
            prior.phi22.dim()
        )));
    }
    if t == 0 {
        return Ok(CompatibilityForm {
            n,
            m,
            t,
            h: SymMatrix::zeros(2 * n + m),
        });
    }
    // V = [[I, D], [0, -X], [0, -U]] with D the derivative/successor block
    let mut v = DMatrix::zeros(2 * n + m, n + t);
    v.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    v.view_mut((0, n), (n, t)).copy_from(&d.xdot_or_xplus);
    v.view_mut((n, n), (n, t)).copy_from(&(-&d.x));
    if m > 0 {
        v.view_mut((2 * n, n), (m, t)).copy_from(&(-&d.u));
    }
    let phi = prior.assemble();
    let h = SymMatrix::symmetrize(&(&v * phi.as_dmatrix() * v.transpose()));
    Ok(CompatibilityForm { n, m, t, h })
}

impl CompatibilityForm {
    pub fn is_unconstrained(&self) -> bool {
        self.t == 0
    }

    /// `lambda_min([I A' B']' H [I A' B'])`; nonnegative iff `(A, B)` can
    /// explain the data.
    pub fn membership_margin(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> MatResult<f64> {
        if self.is_unconstrained() {
            return Ok(f64::INFINITY);
        }
        let w = self.stack(a, b)?;
        let form = SymMatrix::symmetrize(&(w.transpose() * self.h.as_dmatrix() * &w));
        matops::min_eig_margin(&form)
    }

    fn stack(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> MatResult<DMatrix<f64>> {
        let (n, m) = (self.n, self.m);
        if a.nrows() != n || a.ncols() != n || b.nrows() != n || b.ncols() != m {
            return Err(MatError::InvalidInput("system dimensions mismatch".into()));
        }
        let mut w = DMatrix::zeros(2 * n + m, n);
        w.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
        w.view_mut((n, 0), (n, n)).copy_from(&a.transpose());
        if m > 0 {
            w.view_mut((2 * n, 0), (m, n)).copy_from(&b.transpose());
        }
        Ok(w)
    }

    fn partition(&self) -> (SymMatrix, DMatrix<f64>, SymMatrix) {
        let n = self.n;
        let k = n + self.m;
        let h = self.h.as_dmatrix();
        let h11 = SymMatrix::symmetrize(&h.view((0, 0), (n, n)).into_owned());
        let h12 = h.view((0, n), (n, k)).into_owned();
        let h22 = SymMatrix::symmetrize(&h.view((n, n), (k, k)).into_owned());
        (h11, h12, h22)
    }

    /// Ellipsoid data `(Zc, Delta, -H22)` of the compatibility set
    /// `{Z : (Z - Zc)' (-H22) (Z - Zc) <= Delta}`; `restricted` is set when
    /// `-H22` is only PSD and the metric is taken on its range.
    pub fn ellipsoid(&self) -> MatResult<Ellipsoid> {
        let (h11, h12, h22) = self.partition();
        let neg_h22 = SymMatrix::symmetrize(&(-h22.as_dmatrix()));
        let (vals, vecs) = matops::sym_eig(&neg_h22)?;
        let lmax = vals[vals.len() - 1].max(0.0);
        if lmax <= 0.0 {
            return Err(MatError::SingularBlock("-H22 is zero".into()));
        }
        let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-12 * lmax).collect();
        let restricted = keep.len() < vals.len();
        // pseudo-inverse on the kept subspace
        let k = self.n + self.m;
        let mut pinv = DMatrix::zeros(k, k);
        let mut metric_inv_sqrt = DMatrix::zeros(k, keep.len());
        for (col, &i) in keep.iter().enumerate() {
            let v = vecs.column(i);
            pinv.ger(1.0 / vals[i], &v, &v, 1.0);
            metric_inv_sqrt
                .column_mut(col)
                .copy_from(&(v / vals[i].sqrt()));
        }
        let zc = &pinv * h12.transpose();
        let delta = SymMatrix::symmetrize(&(h11.as_dmatrix() + &h12 * &zc));
        Ok(Ellipsoid {
            zc,
            delta,
            neg_h22,
            metric_inv_sqrt,
            restricted,
        })
    }
}

/// Center/shape description of a bounded (or range-restricted) compatibility
/// set.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    /// `(n + m) x n` center; `Z = [A'; B']`.
    pub zc: DMatrix<f64>,
    /// `n x n` shape bound.
    pub delta: SymMatrix,
    pub neg_h22: SymMatrix,
    /// `(n + m) x r` map from the reduced ball coordinates.
    metric_inv_sqrt: DMatrix<f64>,
    pub restricted: bool,
}

#[derive(Debug, Clone)]
pub enum SlaterCheck {
    Ok { witness: DMatrix<f64>, margin: f64 },
    Fail { best_margin: f64 },
}

impl SlaterCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, SlaterCheck::Ok { .. })
    }
}

fn slater_form(c: &CompatibilityForm, z: &DMatrix<f64>) -> SymMatrix {
    let (h11, h12, h22) = c.partition();
    SymMatrix::symmetrize(
        &(h11.as_dmatrix()
            + &h12 * z
            + z.transpose() * h12.transpose()
            + z.transpose() * h22.as_dmatrix() * z),
    )
}

/// Strict-interior check: seeks `Z` with `[I Z'] H [I; Z] > 0`. The
/// ellipsoid center is optimal when `-H22` is positive definite; otherwise a
/// small feasibility SDP over `Z` is solved.
pub fn check_slater(c: &CompatibilityForm, delta: f64) -> MatResult<SlaterCheck> {
    if c.is_unconstrained() {
        return Ok(SlaterCheck::Ok {
            witness: DMatrix::zeros(c.n + c.m, c.n),
            margin: f64::INFINITY,
        });
    }
    let ell = c.ellipsoid()?;
    let margin = matops::min_eig_margin(&ell.delta)?;
    if !ell.restricted {
        // form(Z) = Delta - (Z - Zc)'(-H22)(Z - Zc) <= Delta: center optimal
        return Ok(if margin > delta {
            SlaterCheck::Ok {
                witness: ell.zc,
                margin,
            }
        } else {
            SlaterCheck::Fail { best_margin: margin }
        });
    }
    if margin > delta {
        let true_margin = matops::min_eig_margin(&slater_form(c, &ell.zc))?;
        if true_margin > delta {
            return Ok(SlaterCheck::Ok {
                witness: ell.zc,
                margin: true_margin,
            });
        }
    }
    // degenerate metric: maximize mu s.t.
    // [[H11 + H12 Z + Z'H12' - mu I, Z'R'], [R Z, I]] >= 0, R = sqrt(-H22)
    let (h11, h12, _) = c.partition();
    let r = matops::sqrt_psd(&ell.neg_h22)?.into_dmatrix();
    let (n, k) = (c.n, c.n + c.m);
    let mut p = LmiProblem::new();
    let zv = p.rect("Z", k, n);
    let mu = p.scalar("mu");
    let mut blk = BlockExpr::new("slater", n + k);
    blk.add_const(0, 0, h11.as_dmatrix());
    blk.add_lin(0, 0, 1.0, &p, Some(&h12), zv, false, None);
    blk.add_lin(0, 0, 1.0, &p, None, zv, true, Some(&h12.transpose()));
    blk.add_scalar_mat(0, 0, &p, mu, &(-DMatrix::identity(n, n)));
    blk.add_lin(n, 0, 1.0, &p, Some(&r), zv, false, None);
    blk.add_const(n, n, &DMatrix::identity(k, k));
    p.add_psd_block(blk);
    p.set_objective(vec![(p.scalar_index(mu), -1.0)]);
    let opts = conic::SolverOptions {
        tol: 1e-9,
        ..Default::default()
    };
    let sol = conic::solve(&p, &opts).map_err(|e| MatError::InvalidInput(e.to_string()))?;
    if sol.status != SolveStatus::Optimal {
        return Ok(SlaterCheck::Fail {
            best_margin: f64::NEG_INFINITY,
        });
    }
    let z = p.extract_matrix(&sol.x, zv);
    let true_margin = matops::min_eig_margin(&slater_form(c, &z))?;
    Ok(if true_margin > delta {
        SlaterCheck::Ok {
            witness: z,
            margin: true_margin,
        }
    } else {
        SlaterCheck::Fail {
            best_margin: true_margin,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleStrategy {
    Interior,
    Boundary,
    Mixed,
}

#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub pairs: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    /// true when `-H22` was singular and sampling was restricted to the
    /// bounded slice through its range
    pub restricted: bool,
}

/// Draws systems from the compatibility ellipsoid:
/// `Z = Zc + (-H22)^{-1/2} S Delta^{1/2}` with `||S||_2 <= 1`; boundary
/// points use partial isometries (`||S||_2 = 1`). Membership holds by
/// construction.
pub fn sample_compatible(
    c: &CompatibilityForm,
    count: usize,
    strategy: SampleStrategy,
    seed: u64,
) -> MatResult<SampleBatch> {
    if c.is_unconstrained() {
        return Err(MatError::InvalidInput(
            "cannot sample an unconstrained compatibility set".into(),
        ));
    }
    let ell = c.ellipsoid()?;
    let delta_sqrt = matops::sqrt_psd(&ell.delta)?.into_dmatrix();
    let (n, _k) = (c.n, c.n + c.m);
    let r = ell.metric_inv_sqrt.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    for idx in 0..count {
        let g = DMatrix::from_fn(r, n, |_, _| {
            // Box-Muller standard normal
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        let svd = g.svd(true, true);
        let u = svd.u.as_ref().unwrap();
        let vt = svd.v_t.as_ref().unwrap();
        let iso = u * vt; // partial isometry, all singular values 1
        let on_boundary = match strategy {
            SampleStrategy::Boundary => true,
            SampleStrategy::Interior => false,
            SampleStrategy::Mixed => idx % 2 == 0,
        };
        let scale = if on_boundary { 1.0 } else { rng.gen_range(0.0..1.0) };
        let s = iso * scale;
        let z = &ell.zc + &ell.metric_inv_sqrt * s * &delta_sqrt;
        let a = z.view((0, 0), (n, n)).transpose().into_owned();
        let b = z.view((n, 0), (c.m, n)).transpose().into_owned();
        pairs.push((a, b));
    }
    Ok(SampleBatch {
        pairs,
        restricted: ell.restricted,
    })
}

// ---------------------------------------------------------------------------
// JSON dataset schema
// ---------------------------------------------------------------------------

pub fn mat_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn rows_to_mat(rows: &[Vec<f64>], ncols_if_empty: usize) -> Result<DMatrix<f64>, String> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, ncols_if_empty));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorJson {
    #[serde(rename = "Phi11")]
    pub phi11: Vec<Vec<f64>>,
    #[serde(rename = "Phi12")]
    pub phi12: Vec<Vec<f64>>,
    #[serde(rename = "Phi22")]
    pub phi22: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeJson {
    pub i: usize,
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
    #[serde(rename = "Xdot")]
    pub xdot: Vec<Vec<f64>>,
    #[serde(rename = "U")]
    pub u: Vec<Vec<f64>>,
    pub prior: PriorJson,
    pub time_kind: TimeKind,
}

/// On-disk dataset: `{"n":..,"m":..,"modes":[{"i","X","Xdot","U","prior",
/// "time_kind"}..]}`, matrices row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub n: usize,
    pub m: usize,
    pub modes: Vec<ModeJson>,
}

impl DatasetFile {
    pub fn from_modes(modes: &[(ModeDataset, DisturbancePrior)]) -> Self {
        let n = modes.first().map_or(0, |(d, _)| d.n());
        let m = modes.iter().map(|(d, _)| d.m()).max().unwrap_or(0);
        DatasetFile {
            n,
            m,
            modes: modes
                .iter()
                .map(|(d, p)| ModeJson {
                    i: d.mode_index,
                    x: mat_to_rows(&d.x),
                    xdot: mat_to_rows(&d.xdot_or_xplus),
                    u: mat_to_rows(&d.u),
                    prior: PriorJson {
                        phi11: mat_to_rows(p.phi11.as_dmatrix()),
                        phi12: mat_to_rows(&p.phi12),
                        phi22: mat_to_rows(p.phi22.as_dmatrix()),
                    },
                    time_kind: d.time_kind,
                })
                .collect(),
        }
    }

    pub fn into_modes(&self) -> Result<Vec<(ModeDataset, DisturbancePrior)>, String> {
        self.modes
            .iter()
            .map(|mj| {
                let x = rows_to_mat(&mj.x, 0)?;
                let t = x.ncols();
                let xdot = rows_to_mat(&mj.xdot, t)?;
                let u = rows_to_mat(&mj.u, t)?;
                let d = ModeDataset::new(mj.i, x, xdot, u, mj.time_kind)
                    .map_err(|e| e.to_string())?;
                let phi11 = SymMatrix::from_symmetric(rows_to_mat(&mj.prior.phi11, 0)?);
                let phi12 = rows_to_mat(&mj.prior.phi12, t)?;
                let phi22 = SymMatrix::from_symmetric(rows_to_mat(&mj.prior.phi22, t)?);
                let p = DisturbancePrior::new(phi11, phi12, phi22).map_err(|e| e.to_string())?;
                Ok((d, p))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless_mode(a: &DMatrix<f64>, b: &DMatrix<f64>, t: usize, seed: u64) -> ModeDataset {
        let n = a.nrows();
        let m = b.ncols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, t, |_, _| rng.gen_range(-1.0..1.0));
        let u = DMatrix::from_fn(m, t, |_, _| rng.gen_range(-1.0..1.0));
        let xdot = a * &x + b * &u;
        ModeDataset::new(1, x, xdot, u, TimeKind::Ct).unwrap()
    }

    #[test]
    fn empty_dataset_is_unconstrained() {
        let d = ModeDataset::new(
            1,
            DMatrix::zeros(2, 0),
            DMatrix::zeros(2, 0),
            DMatrix::zeros(1, 0),
            TimeKind::Ct,
        )
        .unwrap();
        let prior = DisturbancePrior::energy(1.0, 2, 0);
        let c = build_h(&d, &prior).unwrap();
        assert!(c.is_unconstrained());
        let a = DMatrix::from_row_slice(2, 2, &[5.0, 1.0, 0.0, -3.0]);
        let b = DMatrix::zeros(2, 1);
        assert!(c.membership_margin(&a, &b).unwrap().is_infinite());
    }

    #[test]
    fn noiseless_membership_is_tight() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, -0.5, -0.7]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let d = noiseless_mode(&a, &b, 10, 3);
        // noiseless rich data: Phi11 = 0, Phi12 = 0, Phi22 = -I
        let prior = DisturbancePrior::energy(0.0, 2, 10);
        let c = build_h(&d, &prior).unwrap();
        let margin = c.membership_margin(&a, &b).unwrap();
        assert!(margin.abs() < 1e-10, "true-system margin {margin}");
        // any perturbed system with (A-Abar)X + (B-Bbar)U != 0 is excluded
        let mut a2 = a.clone();
        a2[(0, 0)] += 0.05;
        assert!(c.membership_margin(&a2, &b).unwrap() < -1e-8);
    }

    #[test]
    fn energy_prior_membership_nonnegative() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, -0.2]);
        let b = DMatrix::zeros(2, 0);
        let mut d = noiseless_mode(&a, &b, 20, 5);
        // inject admissible noise: W with lambda_max(WW') < eps
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = DMatrix::from_fn(2, 20, |_, _| rng.gen_range(-0.1..0.1));
        d.xdot_or_xplus += &w;
        let prior = DisturbancePrior::energy(1.0, 2, 20);
        assert!(prior.margin_at(&w).unwrap() >= 0.0);
        let c = build_h(&d, &prior).unwrap();
        assert!(c.membership_margin(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn rank_check_cases() {
        let d = ModeDataset::new(
            1,
            DMatrix::identity(3, 3),
            DMatrix::zeros(3, 3),
            DMatrix::zeros(0, 3),
            TimeKind::Ct,
        )
        .unwrap();
        assert_eq!(check_rank(&d), RankCheck::Ok);

        let x = DMatrix::from_fn(2, 6, |i, _| if i == 0 { 1.0 } else { 2.0 });
        let d = ModeDataset::new(1, x, DMatrix::zeros(2, 6), DMatrix::zeros(0, 6), TimeKind::Ct)
            .unwrap();
        assert_eq!(check_rank(&d), RankCheck::Deficient(1));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(3, 20, |_, _| rng.gen_range(-1.0..1.0));
        let d = ModeDataset::new(1, x, DMatrix::zeros(3, 20), DMatrix::zeros(0, 20), TimeKind::Ct)
            .unwrap();
        assert_eq!(check_rank(&d), RankCheck::Ok);
    }

    #[test]
    fn slater_noiseless_with_positive_phi11() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let b = DMatrix::zeros(2, 0);
        let d = noiseless_mode(&a, &b, 15, 7);
        let prior = DisturbancePrior::energy(0.5, 2, 15);
        let c = build_h(&d, &prior).unwrap();
        let s = check_slater(&c, 1e-9).unwrap();
        assert!(s.is_ok(), "{s:?}");

        // degenerate Phi11 = 0 with exact data: boundary only
        let prior0 = DisturbancePrior::energy(0.0, 2, 15);
        let c0 = build_h(&d, &prior0).unwrap();
        let s0 = check_slater(&c0, 1e-9).unwrap();
        assert!(!s0.is_ok(), "{s0:?}");
    }

    #[test]
    fn samples_satisfy_membership() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -0.4]);
        let b = DMatrix::from_row_slice(2, 1, &[0.2, 1.0]);
        let mut d = noiseless_mode(&a, &b, 25, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = DMatrix::from_fn(2, 25, |_, _| rng.gen_range(-0.05..0.05));
        d.xdot_or_xplus += &w;
        let prior = DisturbancePrior::energy(1.0, 2, 25);
        let c = build_h(&d, &prior).unwrap();
        let batch = sample_compatible(&c, 200, SampleStrategy::Mixed, 99).unwrap();
        assert!(!batch.restricted);
        assert_eq!(batch.pairs.len(), 200);
        for (i, (sa, sb)) in batch.pairs.iter().enumerate() {
            let margin = c.membership_margin(sa, sb).unwrap();
            assert!(margin >= -1e-10, "sample {i} margin {margin}");
            if i % 2 == 0 {
                assert!(margin <= 1e-8, "boundary sample {i} margin {margin}");
            }
        }
    }

    #[test]
    fn singleton_set_sampling() {
        // noiseless rich data with Phi11 = 0: the ellipsoid collapses to the
        // true system
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.6]);
        let b = DMatrix::zeros(2, 0);
        let d = noiseless_mode(&a, &b, 12, 17);
        let prior = DisturbancePrior::energy(0.0, 2, 12);
        let c = build_h(&d, &prior).unwrap();
        let batch = sample_compatible(&c, 10, SampleStrategy::Mixed, 5).unwrap();
        for (sa, _) in &batch.pairs {
            assert!((sa - &a).norm() < 1e-6, "sample deviates: {}", (sa - &a).norm());
        }
    }

    #[test]
    fn ball_set_geometry() {
        // H = blkdiag(r^2 I, -I) corresponds to { ||Z||_2^2 <= r^2 } per
        // column; check samples stay in the spectral ball
        let n = 2;
        let r = 0.7;
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n))
            .copy_from(&(DMatrix::identity(n, n) * r * r));
        h.view_mut((n, n), (n, n))
            .copy_from(&(-DMatrix::identity(n, n)));
        let c = CompatibilityForm {
            n,
            m: 0,
            t: 1,
            h: SymMatrix::from_symmetric(h),
        };
        let batch = sample_compatible(&c, 50, SampleStrategy::Mixed, 21).unwrap();
        for (sa, _) in &batch.pairs {
            let norm = sa.clone().svd(false, false).singular_values.max();
            assert!(norm <= r + 1e-9, "spectral norm {norm} exceeds {r}");
        }
    }

    #[test]
    fn process_noise_prior_mapping() {
        // E = [[0,0],[1,0],[0,1]], Phihat11 = 0.01 I -> Phi11 = 0.01 diag(0,1,1)
        let e = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let hat = DisturbancePrior::energy(0.01, 2, 20);
        let p = DisturbancePrior::from_process_noise(&hat, &e).unwrap();
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[
            0.0, 0.01, 0.01,
        ]));
        assert!((p.phi11.as_dmatrix() - expected).norm() < 1e-15);
        assert_eq!(p.phi12.nrows(), 3);
        assert!(p.phi12.norm() == 0.0);

        // identity channel maps the prior unchanged
        let id = DMatrix::identity(2, 2);
        let p2 = DisturbancePrior::from_process_noise(&hat, &id).unwrap();
        assert!((p2.phi11.as_dmatrix() - hat.phi11.as_dmatrix()).norm() < 1e-15);

        // zero channel: noise-free derivative channel
        let z = DMatrix::zeros(2, 2);
        let p3 = DisturbancePrior::from_process_noise(&hat, &z).unwrap();
        assert!(p3.phi11.as_dmatrix().norm() == 0.0);
    }

    #[test]
    fn instantaneous_prior_formula() {
        let p = DisturbancePrior::from_instantaneous_bound(0.0, 2, 4).unwrap();
        assert_eq!(p.phi11.as_dmatrix().norm(), 0.0);
        let p = DisturbancePrior::from_instantaneous_bound(0.1, 3, 20).unwrap();
        assert!((p.phi11[(0, 0)] - 2.0).abs() < 1e-15);
        let p = DisturbancePrior::from_instantaneous_bound(1.0, 2, 5).unwrap();
        assert!((p.phi11[(1, 1)] - 5.0).abs() < 1e-15);
        assert!(DisturbancePrior::from_instantaneous_bound(-1.0, 2, 5).is_err());
    }

    #[test]
    fn dataset_json_roundtrip() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let d = noiseless_mode(&a, &b, 6, 23);
        let prior = DisturbancePrior::energy(0.5, 2, 6);
        let file = DatasetFile::from_modes(&[(d.clone(), prior)]);
        let json = serde_json::to_string_pretty(&file).unwrap();
        let parsed: DatasetFile = serde_json::from_str(&json).unwrap();
        let modes = parsed.into_modes().unwrap();
        assert_eq!(modes.len(), 1);
        assert!((&modes[0].0.x - &d.x).norm() == 0.0);
        assert!((&modes[0].0.u - &d.u).norm() == 0.0);
    }
}
