//! Reweighted nuclear-norm rank minimization over the lifted moment blocks,
//! and the bisection that maximizes the guaranteed invariant set. Extracted
//! parameters are never trusted directly: every candidate is re-certified by
//! solving the fixed-parameter problem from scratch.

use super::{
    finalize, rows, solver_certificate, ControllerKind, ControllerParams, SwitchedController,
    SynthError, SynthOptions, SynthResult,
};
use crate::conic::{self, LmiProblem, SolveStatus, VarId};
use crate::datamodel::{DisturbancePrior, ModeDataset};
use crate::lmi_builder::{
    build_c2, build_invariance_fixed, build_invariance_lifted, BuiltInvarianceFixed,
    InvarianceKind, InvarianceSpec,
};
use crate::matops::{self, SymMatrix};
use nalgebra::{DMatrix, DVector};

/// weight regularization in `W = (M + delta_w I)^{-1}`
const DELTA_W: f64 = 1e-4;
/// official rank-gap stopping ratio
const RANK_TOL: f64 = 1e-6;
/// looser ratio at which extraction is attempted while iterating
const TRY_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub enum RankMinCondition {
    /// per-mode-scaled CT condition with the coupling scalars lifted
    C2Structured { gamma_range: (f64, f64) },
    /// constrained-stabilization condition with the designed quadratic lifted
    Invariance { spec: InvarianceSpec },
}

struct LiftBlocks {
    problem: LmiProblem,
    mhats: Vec<VarId>,
    target_rank: usize,
}

fn set_reweighted_objective(p: &mut LmiProblem, mhats: &[VarId], weights: &[DMatrix<f64>]) {
    let mut obj = Vec::new();
    for (&mh, w) in mhats.iter().zip(weights) {
        let d = w.nrows();
        for j in 0..d {
            for i in j..d {
                let coeff = if i == j { w[(i, j)] } else { 2.0 * w[(i, j)] };
                obj.push((p.sym_entry_index(mh, i, j), coeff));
            }
        }
    }
    p.set_objective(obj);
}

/// descending eigenvalues of all moment blocks
fn block_spectra(p: &LmiProblem, x: &[f64], mhats: &[VarId]) -> Vec<Vec<f64>> {
    mhats
        .iter()
        .map(|&mh| {
            let m = SymMatrix::symmetrize(&p.extract_matrix(x, mh));
            let (vals, _) = matops::sym_eig(&m).unwrap();
            let mut v: Vec<f64> = vals.iter().copied().collect();
            v.reverse();
            v
        })
        .collect()
}

fn rank_gap(spectra: &[Vec<f64>], target: usize) -> f64 {
    let mut all: Vec<f64> = spectra.iter().flatten().copied().collect();
    all.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if all.len() <= target || all[0] <= 0.0 {
        return 0.0;
    }
    all[target].max(0.0) / all[0]
}

/// leading factor of a moment block scaled to unit first coordinate
fn leading_h(p: &LmiProblem, x: &[f64], mh: VarId) -> Option<DVector<f64>> {
    let m = SymMatrix::symmetrize(&p.extract_matrix(x, mh));
    let (vals, vecs) = matops::sym_eig(&m).ok()?;
    let k = vals.len() - 1;
    let v = vecs.column(k).into_owned() * vals[k].max(0.0).sqrt();
    if v[0].abs() < 1e-8 {
        return None;
    }
    Some(&v / v[0])
}

fn update_weights(
    p: &LmiProblem,
    x: &[f64],
    mhats: &[VarId],
    weights: &mut [DMatrix<f64>],
) -> SynthResult<()> {
    for (&mh, w) in mhats.iter().zip(weights.iter_mut()) {
        let m = SymMatrix::symmetrize(&p.extract_matrix(x, mh)).into_dmatrix();
        let d = m.nrows();
        let reg = &m + DMatrix::identity(d, d) * DELTA_W;
        *w = reg
            .try_inverse()
            .ok_or_else(|| SynthError::Numerical("weight update failed".into()))?;
        *w = SymMatrix::symmetrize(w).into_dmatrix();
    }
    Ok(())
}

/// Runs the reweighted nuclear-norm loop and re-certifies every extraction
/// through the fixed-parameter condition.
pub fn synth_rank_min(
    data: &[(ModeDataset, DisturbancePrior)],
    condition: &RankMinCondition,
    iters: usize,
    opts: &SynthOptions,
) -> SynthResult<SwitchedController> {
    if iters == 0 {
        return Err(SynthError::Invalid("at least one iteration required".into()));
    }
    match condition {
        RankMinCondition::C2Structured { gamma_range } => {
            let built = crate::lmi_builder::build_c2_lifted(data, *gamma_range, &opts.build)?;
            if !built.excluded.is_empty() {
                return Err(SynthError::Invalid(format!(
                    "modes {:?} fail the data-richness check",
                    built.excluded
                )));
            }
            let mhat_ids = built.mhats.clone();
            let mut lift = LiftBlocks {
                problem: built.problem.clone(),
                mhats: built.mhats.clone(),
                target_rank: built.mhats.len(),
            };
            let layout = built.layout;
            let gt_bounds = built.gamma_tilde_bounds;
            let extract = move |p: &LmiProblem, x: &[f64]| -> Option<Vec<f64>> {
                let mut gammas = Vec::with_capacity(mhat_ids.len());
                for &mh in &mhat_ids {
                    let h = leading_h(p, x, mh)?;
                    let gt = h[layout.idx_gamma()].clamp(gt_bounds.0, gt_bounds.1);
                    gammas.push(1.0 / gt);
                }
                Some(gammas)
            };
            run_rank_min(&mut lift, iters, opts, |p, x| {
                let gammas = extract(p, x)?;
                let fixed = build_c2(data, &gammas, &opts.build).ok()?;
                let sol = conic::solve(&fixed.problem, &opts.solver).ok()?;
                if sol.status != SolveStatus::Feasible {
                    return None;
                }
                let (pl, kl, params) = super::extract_controller(
                    &fixed,
                    &sol.x,
                    ControllerKind::MinSwitchCt,
                    None,
                )
                .ok()?;
                let cert =
                    solver_certificate(&fixed.problem, &sol.x, fixed.kind, fixed.delta, None);
                let cand = SwitchedController {
                    kind: ControllerKind::MinSwitchCt,
                    condition: fixed.kind,
                    p: pl,
                    k: kl,
                    params,
                    certificate: cert,
                };
                finalize(cand, data, opts).ok()
            })
        }
        RankMinCondition::Invariance { spec } => {
            if data.is_empty() {
                return Err(SynthError::Invalid("invariance needs one dataset".into()));
            }
            let n = data[0].0.n();
            if !spec.fixed_vertices_ok(n)? {
                return Err(SynthError::NoController(
                    "fixed quadratics violate the vertex bound".into(),
                ));
            }
            let built = build_invariance_lifted(&data[0], spec, &opts.build)?;
            let layout = built.layout;
            let mut lift = LiftBlocks {
                problem: built.problem.clone(),
                mhats: vec![built.mhat],
                target_rank: 1,
            };
            run_rank_min(&mut lift, iters, opts, |p, x| {
                let h = leading_h(p, x, built.mhat)?;
                let sv = layout.sv();
                // prefer the P0 copy of the lift; fall back to inverting the
                // other copy
                let read_sym = |off: usize| -> DMatrix<f64> {
                    let mut m = DMatrix::zeros(n, n);
                    for j in 0..n {
                        for i in j..n {
                            let v = h[off + layout.vech(i, j)];
                            m[(i, j)] = v;
                            m[(j, i)] = v;
                        }
                    }
                    m
                };
                let p0_direct = read_sym(layout.off_p0());
                let pt_direct = read_sym(layout.off_ptilde());
                let _ = sv;
                let gamma0 = if layout.has_gamma0 {
                    let InvarianceKind::C5 { gamma0_bounds, .. } = spec.kind else {
                        unreachable!()
                    };
                    Some(1.0 / h[layout.idx_gamma0()].clamp(gamma0_bounds.0, gamma0_bounds.1))
                } else {
                    None
                };
                for p0 in [
                    p0_direct,
                    pt_direct.try_inverse().unwrap_or_else(|| DMatrix::zeros(n, n)),
                ] {
                    let p0s = SymMatrix::symmetrize(&p0).into_dmatrix();
                    if matops::min_eig_margin(&SymMatrix::symmetrize(&p0s)).unwrap_or(-1.0)
                        <= 0.0
                    {
                        continue;
                    }
                    // vertex bound is numeric once P0 is fixed
                    if let Some((vertices, theta)) = &spec.vertex_bound {
                        if vertices
                            .iter()
                            .any(|v| (v.transpose() * &p0s * v)[(0, 0)] > *theta + 1e-9)
                        {
                            continue;
                        }
                    }
                    if let Some(ctrl) =
                        certify_invariance_fixed(data, spec, &p0s, gamma0, opts)
                    {
                        return Some(ctrl);
                    }
                }
                None
            })
        }
    }
}

/// Solves the fixed-parameter invariance condition at `(P0, gamma0)` and
/// extracts the max-switching controller when it certifies.
fn certify_invariance_fixed(
    data: &[(ModeDataset, DisturbancePrior)],
    spec: &InvarianceSpec,
    p0: &DMatrix<f64>,
    gamma0: Option<f64>,
    opts: &SynthOptions,
) -> Option<SwitchedController> {
    let fixed = build_invariance_fixed(&data[0], spec, p0, gamma0, &opts.build).ok()?;
    let sol = conic::solve(&fixed.problem, &opts.solver).ok()?;
    if sol.status != SolveStatus::Feasible {
        return None;
    }
    let ctrl = extract_invariance(&fixed, &sol.x, spec)?;
    finalize(ctrl, data, opts).ok()
}

fn extract_invariance(
    fixed: &BuiltInvarianceFixed,
    x: &[f64],
    spec: &InvarianceSpec,
) -> Option<SwitchedController> {
    let n = fixed.n;
    let mc = fixed.p_fixed.len();
    let mut p_list = Vec::with_capacity(mc + 1);
    p_list.push(fixed.p0.clone());
    p_list.extend(fixed.p_fixed.iter().cloned());

    // per-column coupling scalars
    let gammas: Vec<f64> = match &spec.kind {
        InvarianceKind::C4 { .. } => vec![1.0; mc + 1],
        InvarianceKind::C5 { gamma_j, .. } => {
            let mut gs = vec![fixed.gamma0.unwrap()];
            match (gamma_j, &fixed.gamma_j_vars) {
                (Some(fixed_gs), _) => gs.extend(fixed_gs.iter().copied()),
                (None, Some(gv)) => {
                    for &g in gv {
                        let gt = fixed.problem.extract_scalar(x, g).max(1e-9);
                        gs.push(1.0 / gt);
                    }
                }
                _ => return None,
            }
            gs
        }
    };

    let mut k_list = Vec::with_capacity(mc + 1);
    let mut betas = Vec::with_capacity(mc + 1);
    for j in 0..=mc {
        let scale = match &spec.kind {
            InvarianceKind::C4 { .. } => 1.0,
            InvarianceKind::C5 { .. } => gammas[j],
        };
        let k = match fixed.l_vars[j] {
            Some(l) => fixed.problem.extract_matrix(x, l) * &p_list[j] * scale,
            None => DMatrix::zeros(fixed.m, n),
        };
        k_list.push(k);
        let beta_scaled = if j == 0 {
            fixed.problem.extract_scalar(x, fixed.beta0_var)
        } else {
            fixed.problem.extract_scalar(x, fixed.beta_vars[j - 1])
        };
        betas.push(beta_scaled * scale);
    }

    // effective Metzler coupling over J0
    let pi = match &spec.kind {
        InvarianceKind::C4 { pi } => pi.clone(),
        InvarianceKind::C5 { .. } => DMatrix::from_fn(mc + 1, mc + 1, |k, j| {
            if k == j {
                -(mc as f64) * gammas[j]
            } else {
                gammas[j]
            }
        }),
    };

    let params = ControllerParams {
        pi: Some(rows(&pi)),
        gamma: matches!(spec.kind, InvarianceKind::C5 { .. }).then(|| gammas.clone()),
        delta: fixed.delta,
        beta: Some(betas),
        nu: Some(spec.nu),
        constraints: Some(spec.constraints.iter().map(|c| c.iter().copied().collect()).collect()),
        e_eff: Some(rows(&spec.e_eff)),
        theta: spec.vertex_bound.as_ref().map(|(_, t)| *t),
        ..Default::default()
    };
    let cert = solver_certificate(&fixed.problem, x, fixed.kind, fixed.delta, None);
    Some(SwitchedController {
        kind: ControllerKind::MaxSwitchInvariance,
        condition: fixed.kind,
        p: p_list,
        k: k_list,
        params,
        certificate: cert,
    })
}

fn run_rank_min<F>(
    lift: &mut LiftBlocks,
    iters: usize,
    opts: &SynthOptions,
    mut try_extract: F,
) -> SynthResult<SwitchedController>
where
    F: FnMut(&LmiProblem, &[f64]) -> Option<SwitchedController>,
{
    let dims: Vec<usize> = lift
        .mhats
        .iter()
        .map(|&mh| match lift.problem.kind(mh) {
            crate::conic::VarKind::Sym(d) => d,
            _ => unreachable!(),
        })
        .collect();
    let mut weights: Vec<DMatrix<f64>> =
        dims.iter().map(|&d| DMatrix::identity(d, d)).collect();
    let mut last_gap = f64::INFINITY;
    for it in 0..iters {
        set_reweighted_objective(&mut lift.problem, &lift.mhats, &weights);
        let sol = conic::solve(&lift.problem, &opts.solver)?;
        if !matches!(sol.status, SolveStatus::Optimal | SolveStatus::Feasible) {
            return Err(SynthError::NoController(format!(
                "rank-minimization SDP {:?} at iteration {it}",
                sol.status
            )));
        }
        let spectra = block_spectra(&lift.problem, &sol.x, &lift.mhats);
        last_gap = rank_gap(&spectra, lift.target_rank);
        if last_gap < TRY_TOL {
            if let Some(ctrl) = try_extract(&lift.problem, &sol.x) {
                return Ok(ctrl);
            }
            // extraction failed its re-certification: keep reducing the gap
            if last_gap < RANK_TOL {
                // rank target met but the extracted point does not certify
                return Err(SynthError::NoController(format!(
                    "rank gap {last_gap:.2e} met at iteration {it} but re-certification failed"
                )));
            }
        }
        update_weights(&lift.problem, &sol.x, &lift.mhats, &mut weights)?;
    }
    Err(SynthError::NoController(format!(
        "rank gap not achieved after {iters} iterations (gap {last_gap:.2e})"
    )))
}

/// Result of the invariant-set maximization.
#[derive(Debug, Clone)]
pub struct InvariantResult {
    pub controller: SwitchedController,
    pub theta: f64,
}

/// `true` when the constraint normals are axis-aligned unit vectors covering
/// every coordinate (the box case, whose vertices are enumerable).
fn box_vertices(constraints: &[DVector<f64>], n: usize) -> Option<Vec<DVector<f64>>> {
    let mut covered = vec![false; n];
    for c in constraints {
        let mut nz = None;
        for (i, &v) in c.iter().enumerate() {
            if v != 0.0 {
                if nz.is_some() || v.abs() != 1.0 {
                    return None;
                }
                nz = Some(i);
            }
        }
        covered[nz?] = true;
    }
    if !covered.iter().all(|&c| c) {
        return None;
    }
    let mut vertices = Vec::with_capacity(1 << n);
    for mask in 0..(1usize << n) {
        vertices.push(DVector::from_fn(n, |i, _| {
            if mask >> i & 1 == 1 {
                1.0
            } else {
                -1.0
            }
        }));
    }
    Some(vertices)
}

#[derive(Debug, Clone)]
pub struct InvariantOptions {
    pub theta_bracket: (f64, f64),
    pub bisection_iters: usize,
    pub rank_min_iters: usize,
    pub input_sat: bool,
    pub gamma0_bounds: (f64, f64),
    /// explicit polytope vertices when the constraints are not a box
    pub vertices: Option<Vec<DVector<f64>>>,
}

impl Default for InvariantOptions {
    fn default() -> Self {
        Self {
            theta_bracket: (1.0, 100.0),
            bisection_iters: 20,
            rank_min_iters: 15,
            input_sat: false,
            gamma0_bounds: (0.01, 1.0),
            vertices: None,
        }
    }
}

/// Bisection over the vertex level `theta` (smaller is a larger guaranteed
/// set): each trial solves the lifted condition through rank minimization
/// and keeps the certified controller of the smallest feasible level.
#[allow(clippy::too_many_arguments)]
pub fn synth_invariant(
    data: &[(ModeDataset, DisturbancePrior)],
    constraints: &[DVector<f64>],
    nu: f64,
    eta: f64,
    e: &DMatrix<f64>,
    inv_opts: &InvariantOptions,
    opts: &SynthOptions,
) -> SynthResult<InvariantResult> {
    if eta < 0.0 {
        return Err(SynthError::Invalid("eta must be nonnegative".into()));
    }
    let n = data[0].0.n();
    let vertices = match &inv_opts.vertices {
        Some(v) => v.clone(),
        None => box_vertices(constraints, n).ok_or_else(|| {
            SynthError::Invalid(
                "vertices required: constraints do not describe the unit box".into(),
            )
        })?,
    };
    let e_eff = e * eta.sqrt();
    let make_spec = |theta: f64| InvarianceSpec {
        kind: InvarianceKind::C5 {
            gamma_j: None,
            gamma0_bounds: inv_opts.gamma0_bounds,
        },
        constraints: constraints.to_vec(),
        nu,
        e_eff: e_eff.clone(),
        input_sat: inv_opts.input_sat,
        vertex_bound: Some((vertices.clone(), theta)),
    };
    // levels below the fixed quadratics' own vertex values are impossible
    let theta_floor = {
        let mut t: f64 = 0.0;
        for c in constraints {
            for v in &vertices {
                let val = (c.dot(v)).powi(2) + nu * v.norm_squared();
                t = t.max(val);
            }
        }
        t
    };
    let (lo0, hi0) = inv_opts.theta_bracket;
    let mut lo = lo0.max(theta_floor);
    let mut hi = hi0;
    if hi <= lo {
        hi = lo * 2.0;
    }

    let trial = |theta: f64| -> Option<SwitchedController> {
        synth_rank_min(
            data,
            &RankMinCondition::Invariance {
                spec: make_spec(theta),
            },
            inv_opts.rank_min_iters,
            opts,
        )
        .ok()
    };

    let mut best = match trial(hi) {
        Some(c) => (hi, c),
        None => {
            return Err(SynthError::NoController(format!(
                "invariance condition infeasible at the bracket top (theta = {hi})"
            )))
        }
    };
    for _ in 0..inv_opts.bisection_iters {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) / hi < 1e-3 {
            break;
        }
        match trial(mid) {
            Some(c) => {
                best = (mid, c);
                hi = mid;
            }
            None => lo = mid,
        }
    }
    let mut controller = best.1;
    controller.params.theta = Some(best.0);
    Ok(InvariantResult {
        controller,
        theta: best.0,
    })
}
