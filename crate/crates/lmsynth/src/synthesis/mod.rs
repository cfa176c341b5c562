//! Solve orchestration: fixed-parameter synthesis, scalar line-search,
//! reweighted nuclear-norm rank minimization, invariant-set maximization,
//! controller extraction and certification against the compatibility sets.

mod rankmin;
mod search;

pub use rankmin::{synth_invariant, synth_rank_min, InvariantOptions, InvariantResult, RankMinCondition};
pub use search::{synth_linesearch, GridSpec, SearchCondition, SearchRecord, SearchStructure};

use crate::conic::{self, CertReport, SolveStatus, SolverOptions};
use crate::datagen::TrueSystem;
use crate::datamodel::{
    build_h, sample_compatible, DisturbancePrior, ModeDataset, SampleStrategy,
};
use crate::lmi_builder::{
    build_c1, build_c3_dt, build_h2, build_hinf, BuildOptions, BuiltLmi, ConditionKind,
    DtTransitionSpec, HinfRho, MetzlerSpec, PerformanceSpec,
};
use crate::matops::{self, SymMatrix};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no controller: {0}")]
    NoController(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type SynthResult<T> = Result<T, SynthError>;

impl From<crate::matops::MatError> for SynthError {
    fn from(e: crate::matops::MatError) -> Self {
        SynthError::Invalid(e.to_string())
    }
}

impl From<crate::conic::ConicError> for SynthError {
    fn from(e: crate::conic::ConicError) -> Self {
        SynthError::Numerical(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    MinSwitchCt,
    MinSwitchDt,
    MaxSwitchInvariance,
    MjlsGains,
}

/// Feasibility margins of the solved condition plus sampled verification
/// against the compatibility sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub condition_id: String,
    pub solver_margins: Vec<(String, f64)>,
    pub delta: f64,
    pub samples_per_mode: usize,
    pub min_sample_margin: f64,
    pub true_system_margin: Option<f64>,
    pub performance_bound: Option<f64>,
    pub restricted_sampling: bool,
}

impl Certificate {
    pub fn min_solver_margin(&self) -> f64 {
        self.solver_margins
            .iter()
            .map(|&(_, m)| m)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Gate applied before a controller is emitted.
pub const EMIT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ControllerParams {
    #[serde(skip_serializing_if = "Option::is_none", default, rename = "Pi")]
    pub pi: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default, rename = "Lambda")]
    pub lambda: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta: Option<f64>,
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub constraints: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub e_eff: Option<Vec<Vec<f64>>>,
    /// per-mode output weights when the condition carries them (H2)
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub perf_c: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub perf_d: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub perf_e: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub perf_f: Option<Vec<Vec<Vec<f64>>>>,
}

/// Switching controller together with the certificate that produced it.
#[derive(Debug, Clone)]
pub struct SwitchedController {
    pub kind: ControllerKind,
    pub condition: ConditionKind,
    /// Lyapunov matrices, one per mode (invariance: `[P_0, P_1..P_M]`)
    pub p: Vec<DMatrix<f64>>,
    /// gains, one per mode (possibly `0 x n`)
    pub k: Vec<DMatrix<f64>>,
    pub params: ControllerParams,
    pub certificate: Certificate,
}

impl SwitchedController {
    pub fn n(&self) -> usize {
        self.p[0].nrows()
    }

    pub fn num_modes(&self) -> usize {
        self.p.len()
    }

    /// min-switching rule: smallest index attaining `min x' P_i x`
    pub fn sigma_min(&self, x: &DVector<f64>) -> usize {
        let mut best = 0;
        let mut bestv = f64::INFINITY;
        for (i, p) in self.p.iter().enumerate() {
            let v = (x.transpose() * p * x)[(0, 0)];
            if v < bestv {
                bestv = v;
                best = i;
            }
        }
        best
    }

    /// max-switching rule for invariance
    pub fn sigma_max(&self, x: &DVector<f64>) -> usize {
        let mut best = 0;
        let mut bestv = f64::NEG_INFINITY;
        for (i, p) in self.p.iter().enumerate() {
            let v = (x.transpose() * p * x)[(0, 0)];
            if v > bestv {
                bestv = v;
                best = i;
            }
        }
        best
    }

    pub fn q_matrix(&self) -> Option<DMatrix<f64>> {
        self.params
            .q
            .as_ref()
            .map(|rows| crate::datamodel::rows_to_mat(rows, 0).expect("stored Q"))
    }
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub build: BuildOptions,
    pub solver: SolverOptions,
    /// compatibility-set samples per mode for certification
    pub samples: usize,
    pub seed: u64,
    /// in grid searches, stop at the first certified point instead of
    /// scanning for the maximal slack
    pub stop_at_first: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            build: BuildOptions::default(),
            solver: SolverOptions::default(),
            samples: 200,
            seed: 0,
            stop_at_first: false,
        }
    }
}

#[derive(Debug, Clone)]
pub enum FixedCondition {
    C1 { pi: MetzlerSpec },
    H2 { pi: MetzlerSpec, perf: PerformanceSpec },
    Hinf { pi: MetzlerSpec, perf: PerformanceSpec, rho: HinfRho },
    C3 { lambda: DtTransitionSpec },
}

fn invert_spd(m: &DMatrix<f64>, what: &str) -> SynthResult<DMatrix<f64>> {
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| SynthError::Numerical(format!("{what} not invertible")))?;
    Ok(SymMatrix::symmetrize(&inv).into_dmatrix())
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    crate::datamodel::mat_to_rows(m)
}

/// Extracts the controller from a solved condition; `built.modes` maps the
/// slots back to original mode indices, excluded modes get empty gains and
/// an identity Lyapunov placeholder is never emitted (callers require all
/// modes to survive).
pub(crate) fn extract_controller(
    built: &BuiltLmi,
    x: &[f64],
    kind: ControllerKind,
    perf: Option<&PerformanceSpec>,
) -> SynthResult<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, ControllerParams)> {
    let nk = built.modes.len();
    let mut p_list = Vec::with_capacity(nk);
    let mut k_list = Vec::with_capacity(nk);
    let mut params = ControllerParams {
        delta: built.delta,
        ..Default::default()
    };
    let p_tilde: Vec<DMatrix<f64>> = built
        .p_tilde
        .iter()
        .map(|&v| SymMatrix::symmetrize(&built.problem.extract_matrix(x, v)).into_dmatrix())
        .collect();
    for pt in &p_tilde {
        p_list.push(invert_spd(pt, "Ptilde")?);
    }
    match built.kind {
        ConditionKind::C1 | ConditionKind::H2 | ConditionKind::Hinf => {
            for i in 0..nk {
                let m = built.m_per_mode[i];
                let k = match built.l_vars[i] {
                    Some(l) => built.problem.extract_matrix(x, l) * &p_list[i],
                    None => DMatrix::zeros(m, built.n),
                };
                k_list.push(k);
            }
            params.pi = built.pi.as_ref().map(rows);
        }
        ConditionKind::C2 => {
            let gs = built.gammas.clone().expect("C2 carries gammas");
            for i in 0..nk {
                let m = built.m_per_mode[i];
                let k = match built.l_vars[i] {
                    Some(l) => built.problem.extract_matrix(x, l) * &p_list[i] * gs[i],
                    None => DMatrix::zeros(m, built.n),
                };
                k_list.push(k);
            }
            // effective Metzler coupling for certification
            let nkf = nk as f64;
            let pi = DMatrix::from_fn(nk, nk, |j, i| {
                if j == i {
                    -(nkf - 1.0) * gs[i]
                } else {
                    gs[i]
                }
            });
            params.pi = Some(rows(&pi));
            params.gamma = Some(gs);
        }
        ConditionKind::C3 => {
            for i in 0..nk {
                let m = built.m_per_mode[i];
                let k = match built.l_vars[i] {
                    Some(l) => {
                        let y = SymMatrix::symmetrize(
                            &built.problem.extract_matrix(x, built.y_vars[i]),
                        )
                        .into_dmatrix();
                        built.problem.extract_matrix(x, l) * invert_spd(&y, "Y")?
                    }
                    None => DMatrix::zeros(m, built.n),
                };
                k_list.push(k);
            }
            params.lambda = built.lambda.as_ref().map(rows);
        }
        ConditionKind::C4 | ConditionKind::C5 => {
            return Err(SynthError::Invalid(
                "invariance conditions extract through their own path".into(),
            ));
        }
    }
    if let Some(q) = built.q_tilde {
        let qt = SymMatrix::symmetrize(&built.problem.extract_matrix(x, q)).into_dmatrix();
        let mut qm = invert_spd(&qt, "Qtilde")?;
        if built.kind == ConditionKind::C2 {
            let gmin = built
                .gammas
                .as_ref()
                .unwrap()
                .iter()
                .fold(f64::INFINITY, |a, &b| a.min(b));
            qm *= gmin;
        }
        params.q = Some(rows(&qm));
    }
    if let Some(r) = built.rho_var {
        params.rho = Some(built.problem.extract_scalar(x, r));
    }
    if let Some(pf) = perf {
        params.perf_c = Some(pf.c.iter().map(rows).collect());
        params.perf_d = Some(pf.d.iter().map(rows).collect());
        params.perf_e = Some(pf.e.iter().map(rows).collect());
        params.perf_f = Some(pf.f.iter().map(rows).collect());
    }
    let _ = kind;
    Ok((p_list, k_list, params))
}

/// Maximum real part of the eigenvalues of a (not necessarily symmetric)
/// matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue modulus (discrete-time stability radius).
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Model-based inequality evaluated at one sampled system; the margin is
/// `-lambda_max(LHS)` so the contract is `margin >= -tol`.
fn sample_margin(
    ctrl: &SwitchedController,
    mode: usize,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> SynthResult<f64> {
    let n = ctrl.n();
    let k = &ctrl.k[mode];
    let acl = a + b * k;
    let p = &ctrl.p[mode];
    let lhs: DMatrix<f64> = match ctrl.condition {
        ConditionKind::C1 | ConditionKind::C2 => {
            let pi = ctrl
                .params
                .pi
                .as_ref()
                .ok_or_else(|| SynthError::Invalid("missing coupling matrix".into()))?;
            let q = ctrl
                .q_matrix()
                .ok_or_else(|| SynthError::Invalid("missing Q".into()))?;
            let mut s = acl.transpose() * p + p * &acl + q;
            for (j, pj) in ctrl.p.iter().enumerate() {
                s += pj * pi[j][mode];
            }
            s
        }
        ConditionKind::H2 => {
            let pi = ctrl.params.pi.as_ref().unwrap();
            let c = crate::datamodel::rows_to_mat(&ctrl.params.perf_c.as_ref().unwrap()[mode], n)
                .unwrap();
            let d = crate::datamodel::rows_to_mat(
                &ctrl.params.perf_d.as_ref().unwrap()[mode],
                k.nrows(),
            )
            .unwrap();
            let ccl = &c + &d * k;
            let mut s = acl.transpose() * p + p * &acl + ccl.transpose() * &ccl;
            for (j, pj) in ctrl.p.iter().enumerate() {
                s += pj * pi[j][mode];
            }
            s
        }
        ConditionKind::Hinf => {
            let pi = ctrl.params.pi.as_ref().unwrap();
            let rho = ctrl.params.rho.unwrap();
            let c = crate::datamodel::rows_to_mat(&ctrl.params.perf_c.as_ref().unwrap()[mode], n)
                .unwrap();
            let d = crate::datamodel::rows_to_mat(
                &ctrl.params.perf_d.as_ref().unwrap()[mode],
                k.nrows(),
            )
            .unwrap();
            let e = crate::datamodel::rows_to_mat(&ctrl.params.perf_e.as_ref().unwrap()[mode], n)
                .unwrap();
            let f = crate::datamodel::rows_to_mat(
                &ctrl.params.perf_f.as_ref().unwrap()[mode],
                c.nrows(),
            )
            .unwrap();
            let q = e.ncols();
            let pdim = c.nrows();
            let ccl = &c + &d * k;
            let mut s = acl.transpose() * p + p * &acl;
            for (j, pj) in ctrl.p.iter().enumerate() {
                s += pj * pi[j][mode];
            }
            let mut blk = matops::BlockMatrix::new_symmetric(&[n, q, pdim]);
            blk.add(0, 0, &s);
            blk.add(0, 1, &(p * &e));
            blk.add(0, 2, &ccl.transpose());
            blk.add(1, 1, &(-DMatrix::identity(q, q) * rho));
            blk.add(1, 2, &f.transpose());
            blk.add(2, 2, &(-DMatrix::identity(pdim, pdim)));
            blk.assemble().into_dmatrix()
        }
        ConditionKind::C3 => {
            let lam = ctrl.params.lambda.as_ref().unwrap();
            let q = ctrl.q_matrix().unwrap();
            let mut coupling = DMatrix::zeros(n, n);
            for (j, pj) in ctrl.p.iter().enumerate() {
                coupling += pj * lam[j][mode];
            }
            acl.transpose() * coupling * &acl - p + q
        }
        ConditionKind::C4 | ConditionKind::C5 => {
            // max-switching invariance block for constraint index `mode`
            let beta = ctrl.params.beta.as_ref().unwrap()[mode];
            let e = crate::datamodel::rows_to_mat(ctrl.params.e_eff.as_ref().unwrap(), n).unwrap();
            let q = e.ncols();
            let pi = ctrl.params.pi.as_ref().unwrap();
            let mut s = acl.transpose() * p + p * &acl + p * beta;
            for (kk, pk) in ctrl.p.iter().enumerate() {
                if kk != mode {
                    s -= (pk - p) * pi[kk][mode];
                }
            }
            let mut blk = matops::BlockMatrix::new_symmetric(&[n, q]);
            blk.add(0, 0, &s);
            blk.add(0, 1, &(p * &e));
            blk.add(1, 1, &(-DMatrix::identity(q, q) * beta));
            blk.assemble().into_dmatrix()
        }
    };
    let margin = -matops::sym_eig(&SymMatrix::symmetrize(&lhs))
        .map_err(|e| SynthError::Numerical(e.to_string()))?
        .0
        .max();
    Ok(margin)
}

/// Draws systems from each mode's compatibility set (mixed strategy) and
/// evaluates the underlying model-based inequality, reporting the minimum
/// margin; when the true system is supplied its margin is evaluated too.
pub fn certify_controller(
    ctrl: &SwitchedController,
    data: &[(ModeDataset, DisturbancePrior)],
    samples: usize,
    seed: u64,
    true_system: Option<&TrueSystem>,
) -> SynthResult<Certificate> {
    let mut min_margin = f64::INFINITY;
    let mut restricted = false;
    let num_modes = ctrl.num_modes();
    let invariance = matches!(
        ctrl.condition,
        ConditionKind::C4 | ConditionKind::C5
    );
    for mode in 0..num_modes {
        // invariance: one shared dataset (single plant), conditions per
        // constraint; switched: one dataset per mode
        let (d, prior) = if invariance { &data[0] } else { &data[mode] };
        let c = build_h(d, prior)?;
        if c.is_unconstrained() {
            continue;
        }
        let batch = sample_compatible(&c, samples, SampleStrategy::Mixed, seed ^ (mode as u64))?;
        restricted |= batch.restricted;
        for (a, b) in &batch.pairs {
            let m = sample_margin(ctrl, mode, a, b)?;
            min_margin = min_margin.min(m);
        }
    }
    let true_margin = match true_system {
        Some(sys) => {
            let mut tm = f64::INFINITY;
            for mode in 0..num_modes {
                let (a, b) = if invariance {
                    (&sys.a[0], &sys.b[0])
                } else {
                    (&sys.a[mode], &sys.b[mode])
                };
                tm = tm.min(sample_margin(ctrl, mode, a, b)?);
            }
            Some(tm)
        }
        None => None,
    };
    Ok(Certificate {
        condition_id: ctrl.certificate.condition_id.clone(),
        solver_margins: ctrl.certificate.solver_margins.clone(),
        delta: ctrl.certificate.delta,
        samples_per_mode: samples,
        min_sample_margin: min_margin,
        true_system_margin: true_margin,
        performance_bound: ctrl.certificate.performance_bound,
        restricted_sampling: restricted,
    })
}

/// Builds the preliminary certificate from an independent re-check of the
/// solved problem.
pub(crate) fn solver_certificate(
    built_problem: &crate::conic::LmiProblem,
    x: &[f64],
    condition: ConditionKind,
    delta: f64,
    bound: Option<f64>,
) -> Certificate {
    let rep: CertReport = conic::certify(built_problem, x, EMIT_MARGIN);
    Certificate {
        condition_id: condition.to_string(),
        solver_margins: rep.block_margins,
        delta,
        samples_per_mode: 0,
        min_sample_margin: f64::INFINITY,
        true_system_margin: None,
        performance_bound: bound,
        restricted_sampling: false,
    }
}

/// Finalizes a candidate controller: samples the compatibility sets and
/// enforces the emission gate.
pub(crate) fn finalize(
    mut ctrl: SwitchedController,
    data: &[(ModeDataset, DisturbancePrior)],
    opts: &SynthOptions,
) -> SynthResult<SwitchedController> {
    let cert = certify_controller(&ctrl, data, opts.samples, opts.seed, None)?;
    if cert.min_solver_margin() < -EMIT_MARGIN {
        return Err(SynthError::NoController(format!(
            "solver margins below gate: {:.3e}",
            cert.min_solver_margin()
        )));
    }
    if cert.min_sample_margin < -EMIT_MARGIN {
        return Err(SynthError::NoController(format!(
            "sampled compatibility margin {:.3e} below gate",
            cert.min_sample_margin
        )));
    }
    ctrl.certificate = cert;
    Ok(ctrl)
}

/// Solves one fixed-parameter condition and extracts the controller.
pub fn synth_fixed(
    data: &[(ModeDataset, DisturbancePrior)],
    condition: &FixedCondition,
    opts: &SynthOptions,
) -> SynthResult<SwitchedController> {
    let (built, perf, ctrl_kind) = match condition {
        FixedCondition::C1 { pi } => (
            build_c1(data, pi, &opts.build)?,
            None,
            ControllerKind::MinSwitchCt,
        ),
        FixedCondition::H2 { pi, perf } => (
            build_h2(data, pi, perf, &opts.build)?,
            Some(perf.clone()),
            ControllerKind::MinSwitchCt,
        ),
        FixedCondition::Hinf { pi, perf, rho } => (
            build_hinf(data, pi, perf, *rho, &opts.build)?,
            Some(perf.clone()),
            ControllerKind::MinSwitchCt,
        ),
        FixedCondition::C3 { lambda } => (
            build_c3_dt(data, lambda, &opts.build)?,
            None,
            ControllerKind::MinSwitchDt,
        ),
    };
    if !built.excluded.is_empty() {
        return Err(SynthError::Invalid(format!(
            "modes {:?} fail the data-richness check",
            built.excluded
        )));
    }
    let kind = if matches!(condition, FixedCondition::C3 { .. }) {
        ControllerKind::MinSwitchDt
    } else {
        ctrl_kind
    };

    // H2: one objective solve per mode (epigraph on tr(E' P_i E)), keep the
    // smallest achieved bound
    if matches!(condition, FixedCondition::H2 { .. }) {
        let perf_ref = perf.as_ref().unwrap();
        let e = &perf_ref.e[0];
        let q = e.ncols();
        let mut best: Option<(f64, SwitchedController)> = None;
        for target in 0..built.modes.len() {
            let mut prob = built.clone();
            let s_var = prob.problem.sym("S_epi", q);
            let mut blk = crate::conic::BlockExpr::new("H2_epigraph", q + built.n);
            blk.add_var(0, 0, 1.0, &prob.problem, s_var, false);
            blk.add_const(0, q, &e.transpose());
            blk.add_var(q, q, 1.0, &prob.problem, prob.p_tilde[target], false);
            prob.problem.add_psd_block(blk);
            let mut obj = Vec::new();
            for i in 0..q {
                obj.push((prob.problem.sym_entry_index(s_var, i, i), 1.0));
            }
            prob.problem.set_objective(obj);
            let sol = conic::solve(&prob.problem, &opts.solver)?;
            if sol.status != SolveStatus::Optimal {
                continue;
            }
            let (p_list, k_list, mut params) =
                extract_controller(&prob, &sol.x, kind, perf.as_ref())?;
            let bound = p_list
                .iter()
                .map(|p| (e.transpose() * p * e).trace())
                .fold(f64::INFINITY, f64::min);
            params.rho = None;
            let cert = solver_certificate(&prob.problem, &sol.x, built.kind, built.delta, Some(bound));
            let cand = SwitchedController {
                kind,
                condition: built.kind,
                p: p_list,
                k: k_list,
                params,
                certificate: cert,
            };
            if best.as_ref().map_or(true, |(b, _)| bound < *b) {
                best = Some((bound, cand));
            }
        }
        let (_, cand) = best.ok_or_else(|| {
            SynthError::NoController("all per-mode H2 objective solves failed".into())
        })?;
        return finalize(cand, data, opts);
    }

    let sol = conic::solve(&built.problem, &opts.solver)?;
    match sol.status {
        SolveStatus::Feasible | SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(SynthError::NoController(format!(
                "{} infeasible (margin {:?})",
                built.kind, sol.slack_margin
            )))
        }
        SolveStatus::MaxIters => {
            return Err(SynthError::NoController(format!(
                "{} undecided after {} iterations",
                built.kind, sol.iterations
            )))
        }
        SolveStatus::NumericalFailure => {
            return Err(SynthError::Numerical("solver breakdown".into()))
        }
    }
    let (p_list, k_list, params) = extract_controller(&built, &sol.x, kind, perf.as_ref())?;
    let bound = params.rho;
    let cert = solver_certificate(&built.problem, &sol.x, built.kind, built.delta, bound);
    let cand = SwitchedController {
        kind,
        condition: built.kind,
        p: p_list,
        k: k_list,
        params,
        certificate: cert,
    };
    finalize(cand, data, opts)
}

/// Searches the probability simplex for weights making the convex
/// combination of closed-loop matrices Hurwitz. Test-mode helper: requires
/// the true model; used to predict feasibility, never in the data-driven
/// path.
pub fn hurwitz_combination_probe(
    a_cl: &[DMatrix<f64>],
    resolution: usize,
    seed: u64,
) -> Option<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let n_modes = a_cl.len();
    let combo = |w: &[f64]| -> DMatrix<f64> {
        let mut s = DMatrix::zeros(a_cl[0].nrows(), a_cl[0].ncols());
        for (ai, &wi) in a_cl.iter().zip(w) {
            s += ai * wi;
        }
        s
    };
    // vertices first (single Hurwitz mode)
    for i in 0..n_modes {
        let mut w = vec![0.0; n_modes];
        w[i] = 1.0;
        if spectral_abscissa(&combo(&w)) < 0.0 {
            return Some(w);
        }
    }
    // simplex grid
    let mut stack = vec![(Vec::<usize>::new(), resolution)];
    while let Some((prefix, left)) = stack.pop() {
        if prefix.len() == n_modes - 1 {
            let mut w: Vec<f64> = prefix.iter().map(|&k| k as f64 / resolution as f64).collect();
            w.push(left as f64 / resolution as f64);
            if spectral_abscissa(&combo(&w)) < 0.0 {
                return Some(w);
            }
            continue;
        }
        for k in 0..=left {
            let mut p = prefix.clone();
            p.push(k);
            stack.push((p, left - k));
        }
    }
    // random refinement
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..2000 {
        let mut w: Vec<f64> = (0..n_modes).map(|_| -rng.gen_range(f64::EPSILON..1.0f64).ln()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        if spectral_abscissa(&combo(&w)) < 0.0 {
            return Some(w);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// controller artifact JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerJson {
    pub kind: ControllerKind,
    pub condition: String,
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<Vec<f64>>>,
    pub params: ControllerParams,
    pub certificate: Certificate,
}

impl From<&SwitchedController> for ControllerJson {
    fn from(c: &SwitchedController) -> Self {
        ControllerJson {
            kind: c.kind,
            condition: c.condition.to_string(),
            p: c.p.iter().map(|m| rows(m)).collect(),
            k: c.k.iter().map(|m| rows(m)).collect(),
            params: c.params.clone(),
            certificate: c.certificate.clone(),
        }
    }
}

impl ControllerJson {
    pub fn into_controller(&self) -> Result<SwitchedController, String> {
        let condition = match self.condition.as_str() {
            "C1" => ConditionKind::C1,
            "C2" => ConditionKind::C2,
            "H2" => ConditionKind::H2,
            "HINF" => ConditionKind::Hinf,
            "C3" => ConditionKind::C3,
            "C4" => ConditionKind::C4,
            "C5" => ConditionKind::C5,
            other => return Err(format!("unknown condition `{other}`")),
        };
        let p = self
            .p
            .iter()
            .map(|m| crate::datamodel::rows_to_mat(m, 0))
            .collect::<Result<Vec<_>, _>>()?;
        let n = p.first().map_or(0, |m| m.ncols());
        let k = self
            .k
            .iter()
            .map(|m| crate::datamodel::rows_to_mat(m, n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SwitchedController {
            kind: self.kind,
            condition,
            p,
            k,
            params: self.params.clone(),
            certificate: self.certificate.clone(),
        })
    }
}
