//! Discrete-time condition: the 5-block constraint whose top-left corner
//! carries the inverted coupling sum (recovered through the Woodbury
//! identity) plus the side constraints tying `Y_i` to `(P_i - Q)^{-1}`.
//! With the transition matrix fixed, everything is affine in the inverse
//! variables, so the whole condition is one LMI.

use super::{add_pd_block, prepare_modes, BuildOptions, BuiltLmi, ConditionKind, DtTransitionSpec};
use crate::conic::{BlockExpr, LmiProblem, VarId};
use crate::datamodel::{DisturbancePrior, ModeDataset, TimeKind};
use crate::matops::{MatError, MatResult};
use nalgebra::DMatrix;

/// Gains extract as `K_i = L_i * Y_i^{-1}`.
pub fn build_c3_dt(
    data: &[(ModeDataset, DisturbancePrior)],
    lambda_spec: &DtTransitionSpec,
    opts: &BuildOptions,
) -> MatResult<BuiltLmi> {
    if data.iter().any(|(d, _)| d.time_kind != TimeKind::Dt) {
        return Err(MatError::InvalidInput(
            "discrete-time condition requires DT datasets".into(),
        ));
    }
    let (kept, excluded) = prepare_modes(data)?;
    let lam_full = lambda_spec.matrix(data.len())?;
    let keep_idx: Vec<usize> = kept.iter().map(|k| k.orig_index).collect();
    // restrict and re-normalize columns to sum one
    let nk = kept.len();
    let mut lam = DMatrix::zeros(nk, nk);
    for (bi, &i) in keep_idx.iter().enumerate() {
        for (bj, &j) in keep_idx.iter().enumerate() {
            lam[(bi, bj)] = lam_full[(i, j)];
        }
    }
    for j in 0..nk {
        let s: f64 = (0..nk).map(|i| lam[(i, j)]).sum();
        if s <= 0.0 {
            return Err(MatError::InvalidInput(
                "transition column vanished after mode exclusion".into(),
            ));
        }
        for i in 0..nk {
            lam[(i, j)] /= s;
        }
    }
    for i in 0..nk {
        if lam[(i, i)] <= 0.0 {
            return Err(MatError::InvalidInput(format!(
                "diagonal transition weight lambda[{i},{i}] must be positive"
            )));
        }
    }
    let n = kept[0].data.n();
    let delta = opts.delta;

    let mut p = LmiProblem::new();
    let p_tilde: Vec<VarId> = (0..nk)
        .map(|i| p.sym(&format!("Ptilde_{}", keep_idx[i]), n))
        .collect();
    let q_tilde = p.sym("Qtilde", n);
    let y_vars: Vec<VarId> = (0..nk)
        .map(|i| p.sym(&format!("Y_{}", keep_idx[i]), n))
        .collect();
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

    for i in 0..nk {
        let m = kept[i].data.m();
        // prune coupling blocks with zero transition weight
        let coupled: Vec<usize> = (0..nk).filter(|&j| j != i && lam[(j, i)] > 0.0).collect();
        let lt_ii = 1.0 / lam[(i, i)];
        let o2 = coupled.len() * n;
        let o3 = o2 + n;
        let o4 = o3 + n;
        let o5 = o4 + m;
        let total = o5 + n;
        let mut blk = BlockExpr::new(format!("C3_mode_{}", keep_idx[i]), total);
        for (s, &j) in coupled.iter().enumerate() {
            let off = s * n;
            blk.add_var(off, off, 1.0 / lam[(j, i)], &p, p_tilde[j], false);
            // (1 (x) I) lt_ii Ptilde_i (1 (x) I)': fills every (s, s') block
            blk.add_var(off, off, lt_ii, &p, p_tilde[i], false);
            for (s2, _) in coupled.iter().enumerate().skip(s + 1) {
                blk.add_var(off, s2 * n, lt_ii, &p, p_tilde[i], false);
            }
            blk.add_var(off, o2, lt_ii, &p, p_tilde[i], false);
        }
        blk.add_var(o2, o2, lt_ii, &p, p_tilde[i], false);
        blk.add_var(o3, o3, -1.0, &p, y_vars[i], false);
        if let Some(l) = l_vars[i] {
            blk.add_var(o3, o4, -1.0, &p, l, true);
            blk.add_var(o4, o5, 1.0, &p, l, false);
        }
        blk.add_var(o5, o5, 1.0, &p, y_vars[i], false);
        blk.add_scalar_mat(o2, o2, &p, alpha[i], &(-&kept[i].h));
        p.add_psd_block(blk);

        // Qtilde - Ptilde_i > 0
        let mut side1 = BlockExpr::new(format!("C3_qp_{}", keep_idx[i]), n);
        side1.add_var(0, 0, 1.0, &p, q_tilde, false);
        side1.add_var(0, 0, -1.0, &p, p_tilde[i], false);
        side1.add_const(0, 0, &(DMatrix::identity(n, n) * -delta));
        p.add_psd_block(side1);

        // [[Y_i - Ptilde_i, Ptilde_i], [Ptilde_i, Qtilde - Ptilde_i]] >= 0
        let mut side2 = BlockExpr::new(format!("C3_link_{}", keep_idx[i]), 2 * n);
        side2.add_var(0, 0, 1.0, &p, y_vars[i], false);
        side2.add_var(0, 0, -1.0, &p, p_tilde[i], false);
        side2.add_var(0, n, 1.0, &p, p_tilde[i], false);
        side2.add_var(n, n, 1.0, &p, q_tilde, false);
        side2.add_var(n, n, -1.0, &p, p_tilde[i], false);
        p.add_psd_block(side2);
    }
    for (i, &pt) in p_tilde.iter().enumerate() {
        add_pd_block(&mut p, &format!("Ptilde_{}_pd", keep_idx[i]), pt, n, delta);
    }
    for (i, &y) in y_vars.iter().enumerate() {
        add_pd_block(&mut p, &format!("Y_{}_pd", keep_idx[i]), y, n, delta);
    }
    add_pd_block(&mut p, "Qtilde_pd", q_tilde, n, delta);
    let mut trace_normalized = false;
    if opts.normalize_trace {
        p.add_trace_eq(q_tilde, 1.0);
        trace_normalized = true;
    }

    Ok(BuiltLmi {
        kind: ConditionKind::C3,
        problem: p,
        delta,
        n,
        modes: keep_idx,
        excluded,
        m_per_mode: kept.iter().map(|k| k.data.m()).collect(),
        p_tilde,
        q_tilde: Some(q_tilde),
        l_vars,
        alpha,
        y_vars,
        rho_var: None,
        pi: None,
        gammas: None,
        lambda: Some(lam),
        trace_normalized,
    })
}
