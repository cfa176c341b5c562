//! Safe-stabilization conditions for a disturbed LTI plant under polytopic
//! state constraints: per-constraint quadratics `P_j = c_j c_j' + nu I` are
//! fixed, `P_0` is designed. The `j = 0` row is bilinear in `(P0~, P0,
//! gamma0~, beta0)`; it is exposed through a rank-1 moment lifting
//! `Mhat = [1; h][1; h]'` consumed by the rank-minimization loop, and
//! re-certified exactly by the fixed-parameter variant once `P0` and
//! `gamma0` are extracted.

use super::{BuildOptions, ConditionKind};
use crate::conic::{BlockExpr, LmiProblem, VarId};
use crate::datamodel::{build_h, DisturbancePrior, ModeDataset};
use crate::matops::{MatError, MatResult, SymMatrix};
use nalgebra::{DMatrix, DVector};

/// Index map of the lifted vector `h` (without its leading 1):
/// `[gamma0~]? beta0, vech(P0~), vech(P0)`.
#[derive(Debug, Clone, Copy)]
pub struct LiftLayout {
    pub n: usize,
    pub has_gamma0: bool,
}

impl LiftLayout {
    pub fn sv(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    /// dimension of `Mhat` (leading 1 included)
    pub fn dim(&self) -> usize {
        1 + usize::from(self.has_gamma0) + 1 + 2 * self.sv()
    }

    pub fn idx_gamma0(&self) -> usize {
        assert!(self.has_gamma0);
        1
    }

    pub fn idx_beta0(&self) -> usize {
        if self.has_gamma0 {
            2
        } else {
            1
        }
    }

    pub fn off_ptilde(&self) -> usize {
        self.idx_beta0() + 1
    }

    pub fn off_p0(&self) -> usize {
        self.off_ptilde() + self.sv()
    }

    pub fn vech(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        j * (2 * self.n - j + 1) / 2 + (i - j)
    }
}

#[derive(Debug, Clone)]
pub enum InvarianceKind {
    /// fixed Metzler coupling over the `M + 1` quadratics
    C4 { pi: DMatrix<f64> },
    /// per-column scalars: `pi_{k,j} = gamma_j`; for `j != 0` they enter
    /// affinely (fixed values optional), `gamma0~` rides in the lift
    C5 {
        gamma_j: Option<Vec<f64>>,
        gamma0_bounds: (f64, f64),
    },
}

#[derive(Debug, Clone)]
pub struct InvarianceSpec {
    pub kind: InvarianceKind,
    /// constraint vectors `c_j` (`|c_j' x| <= 1`)
    pub constraints: Vec<DVector<f64>>,
    pub nu: f64,
    /// disturbance channel, already scaled so `psi' psi <= 1`
    pub e_eff: DMatrix<f64>,
    pub input_sat: bool,
    /// vertex bounds `v' P_j v <= theta` (the `j != 0` ones are numeric)
    pub vertex_bound: Option<(Vec<DVector<f64>>, f64)>,
}

impl InvarianceSpec {
    pub fn fixed_quadratics(&self, n: usize) -> MatResult<Vec<DMatrix<f64>>> {
        if self.nu <= 0.0 {
            return Err(MatError::InvalidInput("nu must be positive".into()));
        }
        if self.constraints.iter().any(|c| c.len() != n) {
            return Err(MatError::InvalidInput("constraint vector dimension".into()));
        }
        Ok(self
            .constraints
            .iter()
            .map(|c| c * c.transpose() + DMatrix::identity(n, n) * self.nu)
            .collect())
    }

    /// `true` when the fixed quadratics already satisfy the vertex bound
    /// (necessary for any trial to be feasible).
    pub fn fixed_vertices_ok(&self, n: usize) -> MatResult<bool> {
        let Some((vertices, theta)) = &self.vertex_bound else {
            return Ok(true);
        };
        let pj = self.fixed_quadratics(n)?;
        for v in vertices {
            for p in &pj {
                if (v.transpose() * p * v)[(0, 0)] > *theta {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Lifted problem handles.
#[derive(Debug, Clone)]
pub struct BuiltInvariance {
    pub kind: ConditionKind,
    pub problem: LmiProblem,
    pub layout: LiftLayout,
    pub mhat: VarId,
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub num_constraints: usize,
    pub p_fixed: Vec<DMatrix<f64>>,
    /// `L` variables indexed over `J0` (`[0]` is the designed mode)
    pub l_vars: Vec<Option<VarId>>,
    /// scaled beta variables for `j != 0` (beta0 lives in the lift)
    pub beta_vars: Vec<VarId>,
    pub alpha_vars: Vec<VarId>,
    pub gamma_j_vars: Option<Vec<VarId>>,
    pub delta: f64,
}

/// Fixed-parameter problem handles (exact re-certification).
#[derive(Debug, Clone)]
pub struct BuiltInvarianceFixed {
    pub kind: ConditionKind,
    pub problem: LmiProblem,
    pub n: usize,
    pub m: usize,
    pub p0: DMatrix<f64>,
    pub p0_inv: DMatrix<f64>,
    pub gamma0: Option<f64>,
    pub p_fixed: Vec<DMatrix<f64>>,
    pub l_vars: Vec<Option<VarId>>,
    pub beta_vars: Vec<VarId>,
    pub beta0_var: VarId,
    pub alpha_vars: Vec<VarId>,
    pub gamma_j_vars: Option<Vec<VarId>>,
    pub delta: f64,
}

const GAMMA_J_BOUNDS: (f64, f64) = (1e-4, 1e4);

fn invariance_dims(
    data: &(ModeDataset, DisturbancePrior),
    spec: &InvarianceSpec,
) -> MatResult<(usize, usize, usize, DMatrix<f64>)> {
    let (d, prior) = data;
    let n = d.n();
    let m = d.m();
    let q = spec.e_eff.ncols();
    if spec.e_eff.nrows() != n {
        return Err(MatError::InvalidInput("E must have n rows".into()));
    }
    let c = build_h(d, prior)?;
    if c.is_unconstrained() {
        return Err(MatError::InvalidInput(
            "invariance design needs a nonempty dataset".into(),
        ));
    }
    Ok((n, m, q, c.h.into_dmatrix()))
}

/// Shared assembly of one condition row. `gamma_scaled` selects the
/// per-column-scalar scaled form (the `(2,3)` entry carries `gamma~`).
#[allow(clippy::too_many_arguments)]
struct RowCtx<'a> {
    p: &'a LmiProblem,
    n: usize,
    q: usize,
    e_eff: &'a DMatrix<f64>,
    h: &'a DMatrix<f64>,
}

/// Offsets of the row layout `[q, n, n, m]`.
fn row_offsets(q: usize, n: usize) -> (usize, usize, usize, usize) {
    (0, q, q + n, q + 2 * n)
}

/// Builds the affine row for a fixed quadratic `P_j` (`j != 0`).
///
/// `coupling_const` is the fixed part of `sum_{k != j} pi_{k,j} P_k`;
/// `p0_weight` scales the lifted/constant `P0` contribution; `diag_coeff`
/// is the coefficient of `Ptilde_j` in the `(2,2)` block (`pi_jj` for the
/// fixed-Metzler form, `-M` for the scaled form); `gamma_entry` drives the
/// `(2,3)` entry.
#[allow(clippy::too_many_arguments)]
fn build_fixed_row(
    ctx: &RowCtx,
    blk: &mut BlockExpr,
    pj_inv: &DMatrix<f64>,
    coupling_const: &DMatrix<f64>,
    diag_coeff: f64,
    beta_var: VarId,
    l_var: Option<VarId>,
    alpha_var: VarId,
    gamma_entry: GammaEntry,
    p0_entry: P0Entry,
) {
    let (o1, o2, o3, o4) = row_offsets(ctx.q, ctx.n);
    // (1,1) = beta I
    blk.add_scalar_mat(o1, o1, ctx.p, beta_var, &DMatrix::identity(ctx.q, ctx.q));
    // (1,2) = E'
    blk.add_const(o1, o2, &ctx.e_eff.transpose());
    // (2,2) constant parts
    blk.add_const(o2, o2, &(pj_inv * diag_coeff));
    blk.add_const(o2, o2, &(pj_inv * coupling_const * pj_inv));
    // (2,2) -beta * Ptilde_j
    blk.add_scalar_mat(o2, o2, ctx.p, beta_var, &(-pj_inv));
    // (2,2) P0 contribution: Ptilde_j P0 Ptilde_j
    match p0_entry {
        P0Entry::Lifted { layout, mhat, weight } => {
            add_lifted_sandwich(blk, ctx.p, mhat, layout, o2, weight, pj_inv, pj_inv);
        }
        P0Entry::Const { p0, weight } => {
            blk.add_const(o2, o2, &(pj_inv * p0 * pj_inv * weight));
        }
    }
    // (2,3)
    match gamma_entry {
        GammaEntry::Const(g) => blk.add_const(o2, o3, &(pj_inv * -g)),
        GammaEntry::Var(v) => blk.add_scalar_mat(o2, o3, ctx.p, v, &(-pj_inv)),
    }
    // (2,4) = -L'
    if let Some(l) = l_var {
        blk.add_var(o2, o4, -1.0, ctx.p, l, true);
    }
    // - alpha H over the data rows (I, A', B')
    blk.add_scalar_mat(o2, o2, ctx.p, alpha_var, &(-ctx.h));
}

enum GammaEntry {
    Const(f64),
    Var(VarId),
}

enum P0Entry<'a> {
    Lifted {
        layout: LiftLayout,
        mhat: VarId,
        weight: f64,
    },
    Const {
        p0: &'a DMatrix<f64>,
        weight: f64,
    },
}

/// Places `weight * A * P0 * B` where the entries of `P0` are the degree-1
/// coordinates of the lift (row 0 of `Mhat`).
fn add_lifted_sandwich(
    blk: &mut BlockExpr,
    p: &LmiProblem,
    mhat: VarId,
    layout: LiftLayout,
    o: usize,
    weight: f64,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) {
    let n = layout.n;
    for i in 0..n {
        for j in 0..n {
            // output entry (i, j) = sum_{r,s} A[i,r] P0[r,s] B[s,j]
            for r in 0..n {
                for s in 0..n {
                    let coeff = weight * a[(i, r)] * b[(s, j)];
                    if coeff == 0.0 {
                        continue;
                    }
                    let k = p.sym_entry_index(mhat, 0, layout.off_p0() + layout.vech(r, s));
                    blk.add_entry_raw(k, o + i, o + j, coeff);
                }
            }
        }
    }
}

/// Places `coeff * X` at `(r0, c0)` (mirrored when off-diagonal) where
/// `X[a,b] = Mhat[row_idx, off + vech(a,b)]` — a degree-1 or degree-2 lifted
/// symmetric matrix.
fn add_lifted_block(
    blk: &mut BlockExpr,
    p: &LmiProblem,
    mhat: VarId,
    layout: LiftLayout,
    row_idx: usize,
    off: usize,
    r0: usize,
    c0: usize,
    coeff: f64,
) {
    let n = layout.n;
    for a in 0..n {
        for b in 0..n {
            let k = p.sym_entry_index(mhat, row_idx, off + layout.vech(a, b));
            blk.add_entry_raw(k, r0 + a, c0 + b, coeff);
            if r0 != c0 {
                blk.add_entry_raw(k, c0 + b, r0 + a, coeff);
            }
        }
    }
}

/// Lifted assembly of the full condition (all rows plus the moment-matrix
/// constraints). The returned problem is an LMI in `(Mhat, betas, Ls,
/// alphas, gammas)`; only `rank(Mhat) = 1` is missing, which the
/// rank-minimization loop enforces.
pub fn build_invariance_lifted(
    data: &(ModeDataset, DisturbancePrior),
    spec: &InvarianceSpec,
    opts: &BuildOptions,
) -> MatResult<BuiltInvariance> {
    let (n, m, q, h) = invariance_dims(data, spec)?;
    let p_fixed = spec.fixed_quadratics(n)?;
    let mc = p_fixed.len();
    let delta = opts.delta;
    let has_gamma0 = matches!(spec.kind, InvarianceKind::C5 { .. });
    let layout = LiftLayout { n, has_gamma0 };
    let kind = if has_gamma0 {
        ConditionKind::C5
    } else {
        ConditionKind::C4
    };

    let mut p = LmiProblem::new();
    let mhat = p.sym("Mhat", layout.dim());
    let l_vars: Vec<Option<VarId>> = (0..=mc)
        .map(|j| (m > 0).then(|| p.rect(&format!("Lb_{j}"), m, n)))
        .collect();
    let beta_vars: Vec<VarId> = (1..=mc)
        .map(|j| p.scalar_nonneg(&format!("betab_{j}")))
        .collect();
    let alpha_vars: Vec<VarId> = (0..=mc)
        .map(|j| p.scalar_nonneg(&format!("alphab_{j}")))
        .collect();
    let gamma_j_vars = match &spec.kind {
        InvarianceKind::C5 { gamma_j: None, .. } => Some(
            (1..=mc)
                .map(|j| p.scalar_nonneg(&format!("gammat_{j}")))
                .collect::<Vec<_>>(),
        ),
        _ => None,
    };

    // moment-matrix structure
    {
        let mut b = BlockExpr::new("Mhat_psd", layout.dim());
        b.add_var(0, 0, 1.0, &p, mhat, false);
        p.add_psd_block(b);
    }
    p.add_eq(vec![(p.sym_entry_index(mhat, 0, 0), 1.0)], 1.0);
    // P0 * P0~ = I ties the two lifted copies together
    for i in 0..n {
        for k in 0..n {
            let mut terms = Vec::with_capacity(n);
            for j in 0..n {
                terms.push((
                    p.sym_entry_index(
                        mhat,
                        layout.off_p0() + layout.vech(i, j),
                        layout.off_ptilde() + layout.vech(j, k),
                    ),
                    1.0,
                ));
            }
            p.add_eq(terms, if i == k { 1.0 } else { 0.0 });
        }
    }
    // definiteness of the degree-1 copies
    for (name, off) in [("P0t_pd", layout.off_ptilde()), ("P0_pd", layout.off_p0())] {
        let mut b = BlockExpr::new(name, n);
        add_lifted_block(&mut b, &p, mhat, layout, 0, off, 0, 0, 1.0);
        b.add_const(0, 0, &(DMatrix::identity(n, n) * -delta));
        p.add_psd_block(b);
    }
    // scalar bounds
    if has_gamma0 {
        let InvarianceKind::C5 { gamma0_bounds, .. } = &spec.kind else {
            unreachable!()
        };
        let kg = p.sym_entry_index(mhat, 0, layout.idx_gamma0());
        let mut lo = BlockExpr::new("gamma0t_lo", 1);
        lo.add_entry_raw(kg, 0, 0, 1.0);
        lo.add_const(0, 0, &DMatrix::from_element(1, 1, -gamma0_bounds.0));
        p.add_psd_block(lo);
        let mut hi = BlockExpr::new("gamma0t_hi", 1);
        hi.add_entry_raw(kg, 0, 0, -1.0);
        hi.add_const(0, 0, &DMatrix::from_element(1, 1, gamma0_bounds.1));
        p.add_psd_block(hi);
    }
    {
        let kb = p.sym_entry_index(mhat, 0, layout.idx_beta0());
        let mut b = BlockExpr::new("beta0_nonneg", 1);
        b.add_entry_raw(kb, 0, 0, 1.0);
        p.add_psd_block(b);
    }
    if let Some(gv) = &gamma_j_vars {
        for (j, &g) in gv.iter().enumerate() {
            let mut lo = BlockExpr::new(format!("gammat_{}_lo", j + 1), 1);
            lo.add_scalar_mat(0, 0, &p, g, &DMatrix::identity(1, 1));
            lo.add_const(0, 0, &DMatrix::from_element(1, 1, -GAMMA_J_BOUNDS.0));
            p.add_psd_block(lo);
            let mut hi = BlockExpr::new(format!("gammat_{}_hi", j + 1), 1);
            hi.add_scalar_mat(0, 0, &p, g, &(-DMatrix::identity(1, 1)));
            hi.add_const(0, 0, &DMatrix::from_element(1, 1, GAMMA_J_BOUNDS.1));
            p.add_psd_block(hi);
        }
    }

    let ctx = RowCtx {
        p: &p,
        n,
        q,
        e_eff: &spec.e_eff,
        h: &h,
    };
    let (o1, o2, o3, o4) = row_offsets(q, n);
    let row_dim = q + 2 * n + m;

    // j != 0 rows
    let mut blocks = Vec::new();
    for j in 1..=mc {
        let pj = &p_fixed[j - 1];
        let pj_inv = pj
            .clone()
            .try_inverse()
            .ok_or_else(|| MatError::SingularBlock("P_j not invertible".into()))?;
        let mut blk = BlockExpr::new(format!("{kind}_row_{j}"), row_dim);
        match &spec.kind {
            InvarianceKind::C4 { pi } => {
                // coupling sum_{k != j} pi_{k,j} P_k (constraint index j ->
                // matrix column j)
                let mut coupling = DMatrix::zeros(n, n);
                for k in 1..=mc {
                    if k != j {
                        coupling += &p_fixed[k - 1] * pi[(k, j)];
                    }
                }
                build_fixed_row(
                    &ctx,
                    &mut blk,
                    &pj_inv,
                    &coupling,
                    pi[(j, j)],
                    beta_vars[j - 1],
                    l_vars[j],
                    alpha_vars[j],
                    GammaEntry::Const(1.0),
                    P0Entry::Lifted {
                        layout,
                        mhat,
                        weight: pi[(0, j)],
                    },
                );
            }
            InvarianceKind::C5 { gamma_j, .. } => {
                let mut coupling = DMatrix::zeros(n, n);
                for k in 1..=mc {
                    if k != j {
                        coupling += &p_fixed[k - 1];
                    }
                }
                let gamma_entry = match (gamma_j, &gamma_j_vars) {
                    (Some(gs), _) => GammaEntry::Const(1.0 / gs[j - 1]),
                    (None, Some(gv)) => GammaEntry::Var(gv[j - 1]),
                    _ => unreachable!(),
                };
                build_fixed_row(
                    &ctx,
                    &mut blk,
                    &pj_inv,
                    &coupling,
                    -(mc as f64),
                    beta_vars[j - 1],
                    l_vars[j],
                    alpha_vars[j],
                    gamma_entry,
                    P0Entry::Lifted {
                        layout,
                        mhat,
                        weight: 1.0,
                    },
                );
            }
        }
        blocks.push(blk);
    }

    // j = 0 row (lifted)
    {
        let mut blk = BlockExpr::new(format!("{kind}_row_0"), row_dim);
        let s_const: DMatrix<f64> = match &spec.kind {
            InvarianceKind::C4 { pi } => {
                let mut s = DMatrix::zeros(n, n);
                for k in 1..=mc {
                    s += &p_fixed[k - 1] * pi[(k, 0)];
                }
                s
            }
            InvarianceKind::C5 { .. } => {
                let mut s = DMatrix::zeros(n, n);
                for k in 1..=mc {
                    s += &p_fixed[k - 1];
                }
                s
            }
        };
        // (1,1): beta0 I (degree-1 lift entry)
        let kb = p.sym_entry_index(mhat, 0, layout.idx_beta0());
        for dq in 0..q {
            blk.add_entry_raw(kb, o1 + dq, o1 + dq, 1.0);
        }
        // (1,2): E'
        blk.add_const(o1, o2, &spec.e_eff.transpose());
        // (2,2): diagonal coefficient * P0~ (degree-1)
        let diag_coeff = match &spec.kind {
            InvarianceKind::C4 { pi } => pi[(0, 0)],
            InvarianceKind::C5 { .. } => -(mc as f64),
        };
        add_lifted_block(
            &mut blk,
            &p,
            mhat,
            layout,
            0,
            layout.off_ptilde(),
            o2,
            o2,
            diag_coeff,
        );
        // (2,2): -beta0 * P0~ (degree-2: row idx_beta0 x P0~ entries)
        add_lifted_block(
            &mut blk,
            &p,
            mhat,
            layout,
            layout.idx_beta0(),
            layout.off_ptilde(),
            o2,
            o2,
            -1.0,
        );
        // (2,2): P0~ S P0~ (degree-2 products of P0~ entries)
        for a in 0..n {
            for b in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        let w = s_const[(r, s)];
                        if w == 0.0 {
                            continue;
                        }
                        let k = p.sym_entry_index(
                            mhat,
                            layout.off_ptilde() + layout.vech(a, r),
                            layout.off_ptilde() + layout.vech(s, b),
                        );
                        blk.add_entry_raw(k, o2 + a, o2 + b, w);
                    }
                }
            }
        }
        // (2,3): -P0~ (C4) or -gamma0~ P0~ (C5, degree-2)
        match &spec.kind {
            InvarianceKind::C4 { .. } => {
                add_lifted_block(
                    &mut blk,
                    &p,
                    mhat,
                    layout,
                    0,
                    layout.off_ptilde(),
                    o2,
                    o3,
                    -1.0,
                );
            }
            InvarianceKind::C5 { .. } => {
                add_lifted_block(
                    &mut blk,
                    &p,
                    mhat,
                    layout,
                    layout.idx_gamma0(),
                    layout.off_ptilde(),
                    o2,
                    o3,
                    -1.0,
                );
            }
        }
        // (2,4): -L0'
        if let Some(l) = l_vars[0] {
            blk.add_var(o2, o4, -1.0, &p, l, true);
        }
        blk.add_scalar_mat(o2, o2, &p, alpha_vars[0], &(-&h));
        blocks.push(blk);
    }
    for b in blocks {
        p.add_psd_block(b);
    }

    // vertex bounds on P0 (the fixed ones are numeric and checked upstream)
    if let Some((vertices, theta)) = &spec.vertex_bound {
        for (vi, v) in vertices.iter().enumerate() {
            let mut b = BlockExpr::new(format!("vertex_{vi}"), 1);
            b.add_const(0, 0, &DMatrix::from_element(1, 1, *theta));
            for a in 0..n {
                for bb in 0..n {
                    let k = p.sym_entry_index(mhat, 0, layout.off_p0() + layout.vech(a, bb));
                    b.add_entry_raw(k, 0, 0, -v[a] * v[bb]);
                }
            }
            p.add_psd_block(b);
        }
    }

    // input saturation
    if spec.input_sat && m > 0 {
        for j in 0..=mc {
            let l = l_vars[j].unwrap();
            for row in 0..m {
                let el = DMatrix::from_fn(m, 1, |r, _| if r == row { 1.0 } else { 0.0 });
                match (&spec.kind, j) {
                    (InvarianceKind::C4 { .. }, 0) => {
                        // [[1, L0_l], [L0_l', P0~]]
                        let mut b = BlockExpr::new(format!("sat_{j}_{row}"), 1 + n);
                        b.add_const(0, 0, &DMatrix::from_element(1, 1, 1.0));
                        b.add_lin(0, 1, 1.0, &p, Some(&el.transpose()), l, false, None);
                        add_lifted_block(&mut b, &p, mhat, layout, 0, layout.off_ptilde(), 1, 1, 1.0);
                        p.add_psd_block(b);
                    }
                    (InvarianceKind::C4 { .. }, _) => {
                        let pj_inv = p_fixed[j - 1].clone().try_inverse().unwrap();
                        let mut b = BlockExpr::new(format!("sat_{j}_{row}"), 1 + n);
                        b.add_const(0, 0, &DMatrix::from_element(1, 1, 1.0));
                        b.add_lin(0, 1, 1.0, &p, Some(&el.transpose()), l, false, None);
                        b.add_const(1, 1, &pj_inv);
                        p.add_psd_block(b);
                    }
                    (InvarianceKind::C5 { .. }, 0) => {
                        // [[gamma0~^2, Lb0_l], [*, P0~]]
                        let mut b = BlockExpr::new(format!("sat_{j}_{row}"), 1 + n);
                        let kg2 =
                            p.sym_entry_index(mhat, layout.idx_gamma0(), layout.idx_gamma0());
                        b.add_entry_raw(kg2, 0, 0, 1.0);
                        b.add_lin(0, 1, 1.0, &p, Some(&el.transpose()), l, false, None);
                        add_lifted_block(&mut b, &p, mhat, layout, 0, layout.off_ptilde(), 1, 1, 1.0);
                        p.add_psd_block(b);
                    }
                    (InvarianceKind::C5 { gamma_j, .. }, _) => {
                        // ||P_j^{1/2} Lb_{j,l}'|| <= gamma_j~ as a PSD block
                        let pj_sqrt =
                            crate::matops::sqrt_psd(&SymMatrix::symmetrize(&p_fixed[j - 1]))?
                                .into_dmatrix();
                        let mut b = BlockExpr::new(format!("sat_{j}_{row}"), n + 1);
                        match (gamma_j, &gamma_j_vars) {
                            (Some(gs), _) => {
                                let gt = 1.0 / gs[j - 1];
                                b.add_const(0, 0, &(DMatrix::identity(n, n) * gt));
                                b.add_const(n, n, &DMatrix::from_element(1, 1, gt));
                            }
                            (None, Some(gv)) => {
                                b.add_scalar_mat(0, 0, &p, gv[j - 1], &DMatrix::identity(n, n));
                                b.add_scalar_mat(n, n, &p, gv[j - 1], &DMatrix::identity(1, 1));
                            }
                            _ => unreachable!(),
                        }
                        b.add_lin(0, n, 1.0, &p, Some(&pj_sqrt), l, true, Some(&el));
                        p.add_psd_block(b);
                    }
                }
            }
        }
    }

    Ok(BuiltInvariance {
        kind,
        problem: p,
        layout,
        mhat,
        n,
        m,
        q,
        num_constraints: mc,
        p_fixed,
        l_vars,
        beta_vars,
        alpha_vars,
        gamma_j_vars,
        delta,
    })
}

/// Exact re-certification problem at fixed `(P0, gamma0)`: every row is a
/// plain LMI in the remaining variables. `gamma0` is required in the
/// per-column-scalar form and ignored in the fixed-Metzler form.
pub fn build_invariance_fixed(
    data: &(ModeDataset, DisturbancePrior),
    spec: &InvarianceSpec,
    p0: &DMatrix<f64>,
    gamma0: Option<f64>,
    opts: &BuildOptions,
) -> MatResult<BuiltInvarianceFixed> {
    let (n, m, q, h) = invariance_dims(data, spec)?;
    let p_fixed = spec.fixed_quadratics(n)?;
    let mc = p_fixed.len();
    let delta = opts.delta;
    let kind = match spec.kind {
        InvarianceKind::C4 { .. } => ConditionKind::C4,
        InvarianceKind::C5 { .. } => ConditionKind::C5,
    };
    let p0 = SymMatrix::symmetrize(p0).into_dmatrix();
    let p0_inv = p0
        .clone()
        .try_inverse()
        .ok_or_else(|| MatError::SingularBlock("P0 not invertible".into()))?;
    let p0_inv = SymMatrix::symmetrize(&p0_inv).into_dmatrix();
    if matches!(spec.kind, InvarianceKind::C5 { .. }) && gamma0.is_none() {
        return Err(MatError::InvalidInput(
            "gamma0 required for the scaled form".into(),
        ));
    }

    let mut p = LmiProblem::new();
    let l_vars: Vec<Option<VarId>> = (0..=mc)
        .map(|j| (m > 0).then(|| p.rect(&format!("Lb_{j}"), m, n)))
        .collect();
    let beta_vars: Vec<VarId> = (1..=mc)
        .map(|j| p.scalar_nonneg(&format!("betab_{j}")))
        .collect();
    let beta0_var = p.scalar_nonneg("betab_0");
    let alpha_vars: Vec<VarId> = (0..=mc)
        .map(|j| p.scalar_nonneg(&format!("alphab_{j}")))
        .collect();
    let gamma_j_vars = match &spec.kind {
        InvarianceKind::C5 { gamma_j: None, .. } => Some(
            (1..=mc)
                .map(|j| p.scalar_nonneg(&format!("gammat_{j}")))
                .collect::<Vec<_>>(),
        ),
        _ => None,
    };
    if let Some(gv) = &gamma_j_vars {
        for (j, &g) in gv.iter().enumerate() {
            let mut lo = BlockExpr::new(format!("gammat_{}_lo", j + 1), 1);
            lo.add_scalar_mat(0, 0, &p, g, &DMatrix::identity(1, 1));
            lo.add_const(0, 0, &DMatrix::from_element(1, 1, -GAMMA_J_BOUNDS.0));
            p.add_psd_block(lo);
            let mut hi = BlockExpr::new(format!("gammat_{}_hi", j + 1), 1);
            hi.add_scalar_mat(0, 0, &p, g, &(-DMatrix::identity(1, 1)));
            hi.add_const(0, 0, &DMatrix::from_element(1, 1, GAMMA_J_BOUNDS.1));
            p.add_psd_block(hi);
        }
    }

    let ctx = RowCtx {
        p: &p,
        n,
        q,
        e_eff: &spec.e_eff,
        h: &h,
    };
    let row_dim = q + 2 * n + m;

    let mut blocks = Vec::new();
    for j in 0..=mc {
        let pj_inv = if j == 0 {
            p0_inv.clone()
        } else {
            p_fixed[j - 1].clone().try_inverse().unwrap()
        };
        let mut blk = BlockExpr::new(format!("{kind}_row_{j}"), row_dim);
        let beta_var = if j == 0 { beta0_var } else { beta_vars[j - 1] };
        match &spec.kind {
            InvarianceKind::C4 { pi } => {
                let mut coupling = DMatrix::zeros(n, n);
                for k in 0..=mc {
                    if k != j {
                        let pk = if k == 0 { &p0 } else { &p_fixed[k - 1] };
                        coupling += pk * pi[(k, j)];
                    }
                }
                build_fixed_row(
                    &ctx,
                    &mut blk,
                    &pj_inv,
                    &coupling,
                    pi[(j, j)],
                    beta_var,
                    l_vars[j],
                    alpha_vars[j],
                    GammaEntry::Const(1.0),
                    P0Entry::Const {
                        p0: &DMatrix::zeros(n, n),
                        weight: 0.0,
                    },
                );
            }
            InvarianceKind::C5 { gamma_j, .. } => {
                let mut coupling = DMatrix::zeros(n, n);
                for k in 0..=mc {
                    if k != j {
                        let pk = if k == 0 { &p0 } else { &p_fixed[k - 1] };
                        coupling += pk;
                    }
                }
                let gamma_entry = if j == 0 {
                    GammaEntry::Const(1.0 / gamma0.unwrap())
                } else {
                    match (gamma_j, &gamma_j_vars) {
                        (Some(gs), _) => GammaEntry::Const(1.0 / gs[j - 1]),
                        (None, Some(gv)) => GammaEntry::Var(gv[j - 1]),
                        _ => unreachable!(),
                    }
                };
                build_fixed_row(
                    &ctx,
                    &mut blk,
                    &pj_inv,
                    &coupling,
                    -(mc as f64),
                    beta_var,
                    l_vars[j],
                    alpha_vars[j],
                    gamma_entry,
                    P0Entry::Const {
                        p0: &DMatrix::zeros(n, n),
                        weight: 0.0,
                    },
                );
            }
        }
        blocks.push(blk);
    }
    for b in blocks {
        p.add_psd_block(b);
    }

    if spec.input_sat && m > 0 {
        for j in 0..=mc {
            let l = l_vars[j].unwrap();
            let pj = if j == 0 { &p0 } else { &p_fixed[j - 1] };
            let pj_inv = if j == 0 {
                p0_inv.clone()
            } else {
                pj.clone().try_inverse().unwrap()
            };
            for row in 0..m {
                let el = DMatrix::from_fn(m, 1, |r, _| if r == row { 1.0 } else { 0.0 });
                match &spec.kind {
                    InvarianceKind::C4 { .. } => {
                        let mut b = BlockExpr::new(format!("sat_{j}_{row}"), 1 + n);
                        b.add_const(0, 0, &DMatrix::from_element(1, 1, 1.0));
                        b.add_lin(0, 1, 1.0, &p, Some(&el.transpose()), l, false, None);
                        b.add_const(1, 1, &pj_inv);
                        p.add_psd_block(b);
                    }
                    InvarianceKind::C5 { gamma_j, .. } => {
                        let pj_sqrt =
                            crate::matops::sqrt_psd(&SymMatrix::symmetrize(pj))?.into_dmatrix();
                        let mut b = BlockExpr::new(format!("sat_{j}_{row}"), n + 1);
                        let gt_fixed = if j == 0 {
                            Some(1.0 / gamma0.unwrap())
                        } else {
                            gamma_j.as_ref().map(|gs| 1.0 / gs[j - 1])
                        };
                        match (gt_fixed, &gamma_j_vars) {
                            (Some(gt), _) => {
                                b.add_const(0, 0, &(DMatrix::identity(n, n) * gt));
                                b.add_const(n, n, &DMatrix::from_element(1, 1, gt));
                            }
                            (None, Some(gv)) => {
                                b.add_scalar_mat(0, 0, &p, gv[j - 1], &DMatrix::identity(n, n));
                                b.add_scalar_mat(n, n, &p, gv[j - 1], &DMatrix::identity(1, 1));
                            }
                            _ => unreachable!(),
                        }
                        b.add_lin(0, n, 1.0, &p, Some(&pj_sqrt), l, true, Some(&el));
                        p.add_psd_block(b);
                    }
                }
            }
        }
    }

    Ok(BuiltInvarianceFixed {
        kind,
        problem: p,
        n,
        m,
        p0,
        p0_inv,
        gamma0,
        p_fixed,
        l_vars,
        beta_vars,
        beta0_var,
        alpha_vars,
        gamma_j_vars,
        delta,
    })
}
