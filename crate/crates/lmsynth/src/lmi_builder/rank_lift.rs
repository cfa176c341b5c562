//! Rank-constrained reformulation of the per-mode-scaled condition: each
//! mode gets a moment block `Mhat_i = [1, gamma_i~, vech(Ptilde_i)]' [...]`
//! so the condition is affine in the blocks; `rank(Mhat_i) = 1` is enforced
//! by the reweighted nuclear-norm loop, and extracted scalars are always
//! re-certified through the plain fixed-parameter problem.

use super::{prepare_modes, BuildOptions, ConditionKind};
use crate::conic::{BlockExpr, LmiProblem, VarId};
use crate::datamodel::{DisturbancePrior, ModeDataset, TimeKind};
use crate::matops::{MatError, MatResult};
use nalgebra::DMatrix;

/// Per-mode lift layout: `[1, gamma~, vech(Ptilde)]`.
#[derive(Debug, Clone, Copy)]
pub struct C2LiftLayout {
    pub n: usize,
}

impl C2LiftLayout {
    pub fn sv(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    pub fn dim(&self) -> usize {
        2 + self.sv()
    }

    pub fn idx_gamma(&self) -> usize {
        1
    }

    pub fn off_ptilde(&self) -> usize {
        2
    }

    pub fn vech(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        j * (2 * self.n - j + 1) / 2 + (i - j)
    }
}

#[derive(Debug, Clone)]
pub struct BuiltC2Lifted {
    pub problem: LmiProblem,
    pub layout: C2LiftLayout,
    pub mhats: Vec<VarId>,
    pub q_tilde: VarId,
    pub l_vars: Vec<Option<VarId>>,
    pub alpha: Vec<VarId>,
    pub modes: Vec<usize>,
    pub excluded: Vec<usize>,
    pub n: usize,
    pub delta: f64,
    /// bounds imposed on each `gamma_i~`
    pub gamma_tilde_bounds: (f64, f64),
}

/// Places `coeff * X` at `(r0, c0)` (mirrored) where
/// `X[a,b] = Mhat[row_idx, off_ptilde + vech(a,b)]`.
fn add_lift(
    blk: &mut BlockExpr,
    p: &LmiProblem,
    mhat: VarId,
    layout: C2LiftLayout,
    row_idx: usize,
    r0: usize,
    c0: usize,
    coeff: f64,
) {
    for a in 0..layout.n {
        for b in 0..layout.n {
            let k = p.sym_entry_index(mhat, row_idx, layout.off_ptilde() + layout.vech(a, b));
            blk.add_entry_raw(k, r0 + a, c0 + b, coeff);
            if r0 != c0 {
                blk.add_entry_raw(k, c0 + b, r0 + a, coeff);
            }
        }
    }
}

/// Lifted per-mode-scaled condition over a gamma range (the plain condition
/// with `gamma_i` free through the rank-1 blocks).
pub fn build_c2_lifted(
    data: &[(ModeDataset, DisturbancePrior)],
    gamma_range: (f64, f64),
    opts: &BuildOptions,
) -> MatResult<BuiltC2Lifted> {
    if data.iter().any(|(d, _)| d.time_kind != TimeKind::Ct) {
        return Err(MatError::InvalidInput(
            "continuous-time condition requires CT datasets".into(),
        ));
    }
    if gamma_range.0 <= 0.0 || gamma_range.1 <= gamma_range.0 {
        return Err(MatError::InvalidInput("bad gamma range".into()));
    }
    let (kept, excluded) = prepare_modes(data)?;
    let keep_idx: Vec<usize> = kept.iter().map(|k| k.orig_index).collect();
    let n = kept[0].data.n();
    let nk = kept.len();
    let delta = opts.delta;
    let layout = C2LiftLayout { n };
    let gt_bounds = (1.0 / gamma_range.1, 1.0 / gamma_range.0);

    let mut p = LmiProblem::new();
    let mhats: Vec<VarId> = (0..nk)
        .map(|i| p.sym(&format!("Mhat_{}", keep_idx[i]), layout.dim()))
        .collect();
    let q_tilde = p.sym("Qtilde", n);
    let l_vars: Vec<Option<VarId>> = kept
        .iter()
        .map(|k| {
            let m = k.data.m();
            (m > 0).then(|| p.rect(&format!("L_{}", k.orig_index), m, n))
        })
        .collect();
    let alpha: Vec<VarId> = (0..nk)
        .map(|i| p.scalar_nonneg(&format!("alpha_{}", keep_idx[i])))
        .collect();

    for (i, &mh) in mhats.iter().enumerate() {
        let mut b = BlockExpr::new(format!("Mhat_{}_psd", keep_idx[i]), layout.dim());
        b.add_var(0, 0, 1.0, &p, mh, false);
        p.add_psd_block(b);
        p.add_eq(vec![(p.sym_entry_index(mh, 0, 0), 1.0)], 1.0);
        // gamma~ bounds
        let kg = p.sym_entry_index(mh, 0, layout.idx_gamma());
        let mut lo = BlockExpr::new(format!("gt_{}_lo", keep_idx[i]), 1);
        lo.add_entry_raw(kg, 0, 0, 1.0);
        lo.add_const(0, 0, &DMatrix::from_element(1, 1, -gt_bounds.0));
        p.add_psd_block(lo);
        let mut hi = BlockExpr::new(format!("gt_{}_hi", keep_idx[i]), 1);
        hi.add_entry_raw(kg, 0, 0, -1.0);
        hi.add_const(0, 0, &DMatrix::from_element(1, 1, gt_bounds.1));
        p.add_psd_block(hi);
        // Ptilde_i >= delta I through the degree-1 entries
        let mut pd = BlockExpr::new(format!("Ptilde_{}_pd", keep_idx[i]), n);
        add_lift(&mut pd, &p, mh, layout, 0, 0, 0, 1.0);
        pd.add_const(0, 0, &(DMatrix::identity(n, n) * -delta));
        p.add_psd_block(pd);
    }
    super::add_pd_block(&mut p, "Qtilde_pd", q_tilde, n, delta);
    p.add_trace_eq(q_tilde, 1.0);

    for i in 0..nk {
        let m = kept[i].data.m();
        let others: Vec<usize> = (0..nk).filter(|&j| j != i).collect();
        let o2 = n;
        let o3 = o2 + others.len() * n;
        let o4 = o3 + n;
        let o5 = o4 + n;
        let total = o5 + m;
        let mut blk = BlockExpr::new(format!("C2L_mode_{}", keep_idx[i]), total);
        blk.add_var(0, 0, 1.0, &p, q_tilde, false);
        add_lift(&mut blk, &p, mhats[i], layout, 0, 0, o3, 1.0);
        for (s, &j) in others.iter().enumerate() {
            let off = o2 + s * n;
            add_lift(&mut blk, &p, mhats[j], layout, 0, off, off, 1.0);
            add_lift(&mut blk, &p, mhats[i], layout, 0, off, o3, 1.0);
        }
        add_lift(&mut blk, &p, mhats[i], layout, 0, o3, o3, (nk - 1) as f64);
        // -(gamma_i~ Ptilde_i): degree-2 entries of Mhat_i
        add_lift(&mut blk, &p, mhats[i], layout, layout.idx_gamma(), o3, o4, -1.0);
        if let Some(l) = l_vars[i] {
            blk.add_var(o3, o5, -1.0, &p, l, true);
        }
        blk.add_scalar_mat(o3, o3, &p, alpha[i], &(-&kept[i].h));
        p.add_psd_block(blk);
    }

    Ok(BuiltC2Lifted {
        problem: p,
        layout,
        mhats,
        q_tilde,
        l_vars,
        alpha,
        modes: keep_idx,
        excluded,
        n,
        delta,
        gamma_tilde_bounds: gt_bounds,
    })
}

impl BuiltC2Lifted {
    pub fn kind(&self) -> ConditionKind {
        ConditionKind::C2
    }
}
