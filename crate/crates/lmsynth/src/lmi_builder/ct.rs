//! Continuous-time condition assembly: the data-driven coupled Lyapunov
//! inequality with a fixed Metzler matrix, its per-mode-scaled relaxation,
//! and the H2 / H-infinity variants.

use super::{
    add_pd_block, prepare_modes, restrict_metzler, BuildOptions, BuiltLmi, ConditionKind,
    MetzlerSpec, PerfKind, PerformanceSpec,
};
use crate::conic::{BlockExpr, LmiProblem, VarId};
use crate::datamodel::{DisturbancePrior, ModeDataset, TimeKind};
use crate::matops::{MatError, MatResult};
use nalgebra::DMatrix;

fn check_ct(data: &[(ModeDataset, DisturbancePrior)]) -> MatResult<()> {
    if data.iter().any(|(d, _)| d.time_kind != TimeKind::Ct) {
        return Err(MatError::InvalidInput(
            "continuous-time condition requires CT datasets".into(),
        ));
    }
    Ok(())
}

/// Condition with a fixed Metzler matrix: one 5-block PSD constraint per
/// mode; zero off-diagonal couplings are pruned. Feasible solutions yield
/// gains `K_i = L_i P_i`.
pub fn build_c1(
    data: &[(ModeDataset, DisturbancePrior)],
    pi_spec: &MetzlerSpec,
    opts: &BuildOptions,
) -> MatResult<BuiltLmi> {
    check_ct(data)?;
    let (kept, excluded) = prepare_modes(data)?;
    let pi_full = pi_spec.matrix(data.len())?;
    let keep_idx: Vec<usize> = kept.iter().map(|k| k.orig_index).collect();
    let pi = restrict_metzler(&pi_full, &keep_idx);
    let n = kept[0].data.n();
    let nk = kept.len();
    let delta = opts.delta;

    let mut p = LmiProblem::new();
    let p_tilde: Vec<VarId> = (0..nk)
        .map(|i| p.sym(&format!("Ptilde_{}", keep_idx[i]), n))
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

    for i in 0..nk {
        let m = kept[i].data.m();
        let coupled: Vec<usize> = (0..nk).filter(|&j| j != i && pi[(j, i)] > 0.0).collect();
        let o2 = n;
        let o3 = o2 + coupled.len() * n;
        let o4 = o3 + n;
        let o5 = o4 + n;
        let total = o5 + m;
        let mut blk = BlockExpr::new(format!("C1_mode_{}", keep_idx[i]), total);
        blk.add_var(0, 0, 1.0, &p, q_tilde, false);
        blk.add_var(0, o3, 1.0, &p, p_tilde[i], false);
        for (s, &j) in coupled.iter().enumerate() {
            let off = o2 + s * n;
            blk.add_var(off, off, 1.0 / pi[(j, i)], &p, p_tilde[j], false);
            blk.add_var(off, o3, 1.0, &p, p_tilde[i], false);
        }
        blk.add_var(o3, o3, -pi[(i, i)], &p, p_tilde[i], false);
        blk.add_var(o3, o4, -1.0, &p, p_tilde[i], false);
        if let Some(l) = l_vars[i] {
            blk.add_var(o3, o5, -1.0, &p, l, true);
        }
        blk.add_scalar_mat(o3, o3, &p, alpha[i], &(-&kept[i].h));
        p.add_psd_block(blk);
    }
    for (i, &pt) in p_tilde.iter().enumerate() {
        add_pd_block(&mut p, &format!("Ptilde_{}_pd", keep_idx[i]), pt, n, delta);
    }
    add_pd_block(&mut p, "Qtilde_pd", q_tilde, n, delta);
    let mut trace_normalized = false;
    if opts.normalize_trace {
        p.add_trace_eq(q_tilde, 1.0);
        trace_normalized = true;
    }

    Ok(BuiltLmi {
        kind: ConditionKind::C1,
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
        y_vars: Vec::new(),
        rho_var: None,
        pi: Some(pi),
        gammas: None,
        lambda: None,
        trace_normalized,
    })
}

/// Per-mode-scaled relaxation: the coupling reduces to `sum_{j != i} Ptilde_j`
/// at fixed scalars `gamma_i > 0`. Gains are `K_i = gamma_i * L_i * P_i`.
pub fn build_c2(
    data: &[(ModeDataset, DisturbancePrior)],
    gammas: &[f64],
    opts: &BuildOptions,
) -> MatResult<BuiltLmi> {
    check_ct(data)?;
    if gammas.len() != data.len() {
        return Err(MatError::InvalidInput("one gamma per mode required".into()));
    }
    if gammas.iter().any(|&g| g <= 0.0) {
        return Err(MatError::InvalidInput("gammas must be positive".into()));
    }
    let (kept, excluded) = prepare_modes(data)?;
    let keep_idx: Vec<usize> = kept.iter().map(|k| k.orig_index).collect();
    let gs: Vec<f64> = keep_idx.iter().map(|&i| gammas[i]).collect();
    let n = kept[0].data.n();
    let nk = kept.len();
    let delta = opts.delta;

    let mut p = LmiProblem::new();
    let p_tilde: Vec<VarId> = (0..nk)
        .map(|i| p.sym(&format!("Ptilde_{}", keep_idx[i]), n))
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

    for i in 0..nk {
        let m = kept[i].data.m();
        let others: Vec<usize> = (0..nk).filter(|&j| j != i).collect();
        let o2 = n;
        let o3 = o2 + others.len() * n;
        let o4 = o3 + n;
        let o5 = o4 + n;
        let total = o5 + m;
        let gt = 1.0 / gs[i];
        let mut blk = BlockExpr::new(format!("C2_mode_{}", keep_idx[i]), total);
        blk.add_var(0, 0, 1.0, &p, q_tilde, false);
        blk.add_var(0, o3, 1.0, &p, p_tilde[i], false);
        for (s, &j) in others.iter().enumerate() {
            let off = o2 + s * n;
            blk.add_var(off, off, 1.0, &p, p_tilde[j], false);
            blk.add_var(off, o3, 1.0, &p, p_tilde[i], false);
        }
        blk.add_var(o3, o3, (nk - 1) as f64, &p, p_tilde[i], false);
        blk.add_var(o3, o4, -gt, &p, p_tilde[i], false);
        if let Some(l) = l_vars[i] {
            blk.add_var(o3, o5, -1.0, &p, l, true);
        }
        blk.add_scalar_mat(o3, o3, &p, alpha[i], &(-&kept[i].h));
        p.add_psd_block(blk);
    }
    for (i, &pt) in p_tilde.iter().enumerate() {
        add_pd_block(&mut p, &format!("Ptilde_{}_pd", keep_idx[i]), pt, n, delta);
    }
    add_pd_block(&mut p, "Qtilde_pd", q_tilde, n, delta);
    let mut trace_normalized = false;
    if opts.normalize_trace {
        p.add_trace_eq(q_tilde, 1.0);
        trace_normalized = true;
    }

    Ok(BuiltLmi {
        kind: ConditionKind::C2,
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
        y_vars: Vec::new(),
        rho_var: None,
        pi: None,
        gammas: Some(gs),
        lambda: None,
        trace_normalized,
    })
}

/// 4-block condition shared by the H2 and H-infinity variants.
#[allow(clippy::too_many_arguments)]
fn build_perf_core(
    data: &[(ModeDataset, DisturbancePrior)],
    pi_spec: &MetzlerSpec,
    opts: &BuildOptions,
    kind: ConditionKind,
) -> MatResult<BuiltLmi> {
    check_ct(data)?;
    let (kept, excluded) = prepare_modes(data)?;
    let pi_full = pi_spec.matrix(data.len())?;
    let keep_idx: Vec<usize> = kept.iter().map(|k| k.orig_index).collect();
    let pi = restrict_metzler(&pi_full, &keep_idx);
    let n = kept[0].data.n();
    let nk = kept.len();
    let delta = opts.delta;

    let mut p = LmiProblem::new();
    let p_tilde: Vec<VarId> = (0..nk)
        .map(|i| p.sym(&format!("Ptilde_{}", keep_idx[i]), n))
        .collect();
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
        let coupled: Vec<usize> = (0..nk).filter(|&j| j != i && pi[(j, i)] > 0.0).collect();
        let o2 = coupled.len() * n;
        let o3 = o2 + n;
        let o4 = o3 + n;
        let total = o4 + m;
        let mut blk = BlockExpr::new(format!("{kind}_mode_{}", keep_idx[i]), total);
        for (s, &j) in coupled.iter().enumerate() {
            let off = s * n;
            blk.add_var(off, off, 1.0 / pi[(j, i)], &p, p_tilde[j], false);
            blk.add_var(off, o2, 1.0, &p, p_tilde[i], false);
        }
        blk.add_var(o2, o2, -pi[(i, i)], &p, p_tilde[i], false);
        blk.add_var(o2, o2, -1.0, &p, y_vars[i], false);
        blk.add_var(o2, o3, -1.0, &p, p_tilde[i], false);
        if let Some(l) = l_vars[i] {
            blk.add_var(o2, o4, -1.0, &p, l, true);
        }
        blk.add_scalar_mat(o2, o2, &p, alpha[i], &(-&kept[i].h));
        p.add_psd_block(blk);
    }
    for (i, &pt) in p_tilde.iter().enumerate() {
        add_pd_block(&mut p, &format!("Ptilde_{}_pd", keep_idx[i]), pt, n, delta);
    }
    for (i, &y) in y_vars.iter().enumerate() {
        add_pd_block(&mut p, &format!("Y_{}_pd", keep_idx[i]), y, n, delta);
    }

    Ok(BuiltLmi {
        kind,
        problem: p,
        delta,
        n,
        modes: keep_idx,
        excluded,
        m_per_mode: kept.iter().map(|k| k.data.m()).collect(),
        p_tilde,
        q_tilde: None,
        l_vars,
        alpha,
        y_vars,
        rho_var: None,
        pi: Some(pi),
        gammas: None,
        lambda: None,
        trace_normalized: false,
    })
}

/// H2 condition: the 4-block constraint plus the per-mode quadratic-output
/// coupling `[[I, C Pt + D L], [*, Y]] > 0`. The cost
/// `min tr(E' P_i E)` is attached per mode by synthesis via its epigraph.
pub fn build_h2(
    data: &[(ModeDataset, DisturbancePrior)],
    pi_spec: &MetzlerSpec,
    perf: &PerformanceSpec,
    opts: &BuildOptions,
) -> MatResult<BuiltLmi> {
    if perf.kind != PerfKind::H2 {
        return Err(MatError::InvalidInput("performance kind must be H2".into()));
    }
    perf.validate(
        data[0].0.n(),
        &data.iter().map(|(d, _)| d.m()).collect::<Vec<_>>(),
    )?;
    let mut built = build_perf_core(data, pi_spec, opts, ConditionKind::H2)?;
    let n = built.n;
    let delta = built.delta;
    for (slot, &orig) in built.modes.clone().iter().enumerate() {
        let c = &perf.c[orig];
        let d = &perf.d[orig];
        let pdim = c.nrows();
        let mut blk = BlockExpr::new(format!("H2_coupling_{orig}"), pdim + n);
        blk.add_const(0, 0, &(DMatrix::identity(pdim, pdim) * (1.0 - delta)));
        blk.add_lin(
            0,
            pdim,
            1.0,
            &built.problem,
            Some(c),
            built.p_tilde[slot],
            false,
            None,
        );
        if let Some(l) = built.l_vars[slot] {
            blk.add_lin(0, pdim, 1.0, &built.problem, Some(d), l, false, None);
        }
        blk.add_var(pdim, pdim, 1.0, &built.problem, built.y_vars[slot], false);
        blk.add_const(pdim, pdim, &(DMatrix::identity(n, n) * -delta));
        built.problem.add_psd_block(blk);
    }
    Ok(built)
}

/// Bound handling for the H-infinity level.
#[derive(Debug, Clone, Copy)]
pub enum HinfRho {
    Fixed(f64),
    Variable,
}

/// H-infinity condition: the 4-block constraint plus the per-mode coupling
/// `[[Y, E, (C Pt + D L)'], [*, rho I, -F'], [*, *, I]] > 0`; minimizing a
/// variable `rho` is a linear objective.
pub fn build_hinf(
    data: &[(ModeDataset, DisturbancePrior)],
    pi_spec: &MetzlerSpec,
    perf: &PerformanceSpec,
    rho: HinfRho,
    opts: &BuildOptions,
) -> MatResult<BuiltLmi> {
    if perf.kind != PerfKind::Hinf {
        return Err(MatError::InvalidInput(
            "performance kind must be Hinf".into(),
        ));
    }
    perf.validate(
        data[0].0.n(),
        &data.iter().map(|(d, _)| d.m()).collect::<Vec<_>>(),
    )?;
    let mut built = build_perf_core(data, pi_spec, opts, ConditionKind::Hinf)?;
    let n = built.n;
    let delta = built.delta;
    let rho_var = match rho {
        HinfRho::Fixed(v) => {
            if v <= 0.0 {
                return Err(MatError::InvalidInput("rho must be positive".into()));
            }
            None
        }
        HinfRho::Variable => Some(built.problem.scalar_nonneg("rho")),
    };
    for (slot, &orig) in built.modes.clone().iter().enumerate() {
        let c = &perf.c[orig];
        let d = &perf.d[orig];
        let e = &perf.e[orig];
        let f = &perf.f[orig];
        let pdim = c.nrows();
        let q = e.ncols();
        let total = n + q + pdim;
        let mut blk = BlockExpr::new(format!("HINF_coupling_{orig}"), total);
        blk.add_var(0, 0, 1.0, &built.problem, built.y_vars[slot], false);
        blk.add_const(0, n, e);
        blk.add_lin(
            0,
            n + q,
            1.0,
            &built.problem,
            None,
            built.p_tilde[slot],
            false,
            Some(&c.transpose()),
        );
        if let Some(l) = built.l_vars[slot] {
            blk.add_lin(
                0,
                n + q,
                1.0,
                &built.problem,
                None,
                l,
                true,
                Some(&d.transpose()),
            );
        }
        match rho {
            HinfRho::Fixed(v) => {
                blk.add_const(n, n, &(DMatrix::identity(q, q) * v));
            }
            HinfRho::Variable => {
                blk.add_scalar_mat(n, n, &built.problem, rho_var.unwrap(), &DMatrix::identity(q, q));
            }
        }
        blk.add_const(n, n + q, &(-f.transpose()));
        blk.add_const(n + q, n + q, &DMatrix::identity(pdim, pdim));
        blk.add_const(0, 0, &(DMatrix::identity(total, total) * -delta));
        built.problem.add_psd_block(blk);
    }
    if let Some(r) = rho_var {
        built
            .problem
            .set_objective(vec![(built.problem.scalar_index(r), 1.0)]);
    }
    built.rho_var = rho_var;
    Ok(built)
}
