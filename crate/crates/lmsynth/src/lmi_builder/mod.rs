//! Assembly of every matrix-inequality condition as an [`LmiProblem`]:
//! coupled Lyapunov conditions for continuous- and discrete-time switched
//! stabilization, their H2/H-infinity extensions, and the invariance
//! conditions for constrained LTI plants, given datasets and fixed or
//! structured coupling parameters.

mod ct;
mod dt;
mod invariance;
pub mod model_based;
mod rank_lift;

pub use ct::{build_c1, build_c2, build_h2, build_hinf, HinfRho};
pub use dt::build_c3_dt;
pub use invariance::{
    build_invariance_fixed, build_invariance_lifted, BuiltInvariance, BuiltInvarianceFixed,
    InvarianceKind, InvarianceSpec, LiftLayout,
};
pub use rank_lift::{build_c2_lifted, BuiltC2Lifted, C2LiftLayout};

use crate::conic::{LmiProblem, VarId};
use crate::datamodel::{build_h, check_rank, DisturbancePrior, ModeDataset, RankCheck};
use crate::matops::{MatError, MatResult, DEFAULT_DELTA};
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    C1,
    C2,
    H2,
    Hinf,
    C3,
    C4,
    C5,
}

impl std::fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConditionKind::C1 => "C1",
            ConditionKind::C2 => "C2",
            ConditionKind::H2 => "H2",
            ConditionKind::Hinf => "HINF",
            ConditionKind::C3 => "C3",
            ConditionKind::C4 => "C4",
            ConditionKind::C5 => "C5",
        };
        f.write_str(s)
    }
}

/// Structure imposed on the Metzler coupling matrix.
#[derive(Debug, Clone)]
pub enum MetzlerSpec {
    /// Full matrix, zero column sums, nonnegative off-diagonals; zero
    /// off-diagonals prune the corresponding coupling blocks.
    Fixed(DMatrix<f64>),
    /// `pi_{j,i} = gamma` for all `j != i`.
    Uniform(f64),
    /// `pi_{j,i} = gamma_i` for `j != i`, `pi_{i,i} = -(N-1) gamma_i`.
    PerMode(Vec<f64>),
}

impl MetzlerSpec {
    /// Expands to the full matrix and validates the Metzler class.
    pub fn matrix(&self, n_modes: usize) -> MatResult<DMatrix<f64>> {
        let pi = match self {
            MetzlerSpec::Fixed(m) => {
                if m.nrows() != n_modes || m.ncols() != n_modes {
                    return Err(MatError::InvalidInput(format!(
                        "Metzler matrix is {}x{}, expected {n_modes}x{n_modes}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                m.clone()
            }
            MetzlerSpec::Uniform(g) => Self::PerMode(vec![*g; n_modes]).matrix(n_modes)?,
            MetzlerSpec::PerMode(gs) => {
                if gs.len() != n_modes {
                    return Err(MatError::InvalidInput(
                        "one gamma per mode required".into(),
                    ));
                }
                if gs.iter().any(|&g| g <= 0.0) {
                    return Err(MatError::InvalidInput("gammas must be positive".into()));
                }
                DMatrix::from_fn(n_modes, n_modes, |j, i| {
                    if j == i {
                        -((n_modes - 1) as f64) * gs[i]
                    } else {
                        gs[i]
                    }
                })
            }
        };
        for i in 0..n_modes {
            let mut col = 0.0;
            for j in 0..n_modes {
                if j != i && pi[(j, i)] < 0.0 {
                    return Err(MatError::InvalidInput(format!(
                        "negative off-diagonal pi[{j},{i}]"
                    )));
                }
                col += pi[(j, i)];
            }
            if col.abs() > 1e-9 * pi.norm().max(1.0) {
                return Err(MatError::InvalidInput(format!(
                    "column {i} of the Metzler matrix does not sum to zero"
                )));
            }
        }
        Ok(pi)
    }
}

/// Structure imposed on the discrete-time transition matrix (column
/// stochastic).
#[derive(Debug, Clone)]
pub enum DtTransitionSpec {
    Fixed(DMatrix<f64>),
    /// `lambda_{j,i} = gamma_i` for `j != i`, `lambda_{i,i} = 1-(N-1)gamma_i`
    /// with `0 < gamma_i < 1/N`.
    PerMode(Vec<f64>),
}

impl DtTransitionSpec {
    pub fn matrix(&self, n_modes: usize) -> MatResult<DMatrix<f64>> {
        let lam = match self {
            DtTransitionSpec::Fixed(m) => {
                if m.nrows() != n_modes || m.ncols() != n_modes {
                    return Err(MatError::InvalidInput("transition matrix shape".into()));
                }
                m.clone()
            }
            DtTransitionSpec::PerMode(gs) => {
                if gs.len() != n_modes {
                    return Err(MatError::InvalidInput("one gamma per mode required".into()));
                }
                if gs
                    .iter()
                    .any(|&g| g <= 0.0 || g >= 1.0 / n_modes as f64)
                {
                    return Err(MatError::InvalidInput(
                        "per-mode gammas must lie in (0, 1/N)".into(),
                    ));
                }
                DMatrix::from_fn(n_modes, n_modes, |j, i| {
                    if j == i {
                        1.0 - ((n_modes - 1) as f64) * gs[i]
                    } else {
                        gs[i]
                    }
                })
            }
        };
        for i in 0..n_modes {
            let mut col = 0.0;
            for j in 0..n_modes {
                if lam[(j, i)] < 0.0 || lam[(j, i)] > 1.0 {
                    return Err(MatError::InvalidInput("entries must lie in [0,1]".into()));
                }
                col += lam[(j, i)];
            }
            if (col - 1.0).abs() > 1e-9 {
                return Err(MatError::InvalidInput(format!(
                    "column {i} of the transition matrix does not sum to one"
                )));
            }
        }
        Ok(lam)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerfKind {
    None,
    H2,
    Hinf,
}

/// Output/disturbance channel matrices per mode.
#[derive(Debug, Clone)]
pub struct PerformanceSpec {
    pub kind: PerfKind,
    pub c: Vec<DMatrix<f64>>,
    pub d: Vec<DMatrix<f64>>,
    pub e: Vec<DMatrix<f64>>,
    pub f: Vec<DMatrix<f64>>,
}

impl PerformanceSpec {
    pub fn validate(&self, n: usize, m_per_mode: &[usize]) -> MatResult<()> {
        let nm = m_per_mode.len();
        if self.c.len() != nm || self.d.len() != nm || self.e.len() != nm || self.f.len() != nm {
            return Err(MatError::InvalidInput(
                "performance spec must list one matrix per mode".into(),
            ));
        }
        let p = self.c[0].nrows();
        let q = self.e[0].ncols();
        for i in 0..nm {
            if self.c[i].nrows() != p || self.c[i].ncols() != n {
                return Err(MatError::InvalidInput(format!("C[{i}] has wrong shape")));
            }
            if self.d[i].nrows() != p || self.d[i].ncols() != m_per_mode[i] {
                return Err(MatError::InvalidInput(format!("D[{i}] has wrong shape")));
            }
            if self.e[i].nrows() != n || self.e[i].ncols() != q {
                return Err(MatError::InvalidInput(format!("E[{i}] has wrong shape")));
            }
            if self.f[i].nrows() != p || self.f[i].ncols() != q {
                return Err(MatError::InvalidInput(format!("F[{i}] has wrong shape")));
            }
        }
        if self.kind == PerfKind::H2 {
            if self.f.iter().any(|f| f.norm() > 0.0) {
                return Err(MatError::InvalidInput("H2 requires F = 0".into()));
            }
            for e in &self.e[1..] {
                if (e - &self.e[0]).norm() > 0.0 {
                    return Err(MatError::InvalidInput("H2 requires a common E".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Margin used to encode every strict definiteness requirement.
    pub delta: f64,
    /// Pin the scale of homogeneous feasibility problems via `tr(Qt) = 1`.
    pub normalize_trace: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            normalize_trace: true,
        }
    }
}

/// An assembled condition with handles to its decision variables.
#[derive(Debug, Clone)]
pub struct BuiltLmi {
    pub kind: ConditionKind,
    pub problem: LmiProblem,
    pub delta: f64,
    pub n: usize,
    /// original mode indices kept after the data-richness check
    pub modes: Vec<usize>,
    pub excluded: Vec<usize>,
    pub m_per_mode: Vec<usize>,
    pub p_tilde: Vec<VarId>,
    pub q_tilde: Option<VarId>,
    pub l_vars: Vec<Option<VarId>>,
    pub alpha: Vec<VarId>,
    pub y_vars: Vec<VarId>,
    pub rho_var: Option<VarId>,
    pub pi: Option<DMatrix<f64>>,
    pub gammas: Option<Vec<f64>>,
    pub lambda: Option<DMatrix<f64>>,
    pub trace_normalized: bool,
}

impl BuiltLmi {
    /// Appends the eigenvalue-spreading objective: minimize
    /// `-sum_i tr(Ptilde_i)` subject to `tr(Qtilde) = 1`.
    pub fn add_trace_objective(&mut self) -> MatResult<()> {
        let Some(q) = self.q_tilde else {
            return Err(MatError::InvalidInput(
                "condition carries no Qtilde variable".into(),
            ));
        };
        if self.problem.has_trace_objective {
            return Err(MatError::InvalidInput(
                "trace objective already present".into(),
            ));
        }
        if !self.trace_normalized {
            self.problem.add_trace_eq(q, 1.0);
            self.trace_normalized = true;
        }
        for &pt in &self.p_tilde {
            self.problem.add_objective_trace(pt, -1.0);
        }
        self.problem.has_trace_objective = true;
        Ok(())
    }
}

/// Per-mode data actually used by a builder after the richness check.
pub(crate) struct ModeInput<'a> {
    pub orig_index: usize,
    pub data: &'a ModeDataset,
    pub h: DMatrix<f64>,
}

/// Runs the data-richness check, dropping deficient modes, and assembles the
/// compatibility matrix of each survivor.
pub(crate) fn prepare_modes<'a>(
    data: &'a [(ModeDataset, DisturbancePrior)],
) -> MatResult<(Vec<ModeInput<'a>>, Vec<usize>)> {
    if data.is_empty() {
        return Err(MatError::InvalidInput("no mode datasets".into()));
    }
    let n = data[0].0.n();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (idx, (d, prior)) in data.iter().enumerate() {
        if d.n() != n {
            return Err(MatError::InvalidInput("state dimensions disagree".into()));
        }
        match check_rank(d) {
            RankCheck::Ok => {
                let c = build_h(d, prior)?;
                kept.push(ModeInput {
                    orig_index: idx,
                    data: d,
                    h: c.h.into_dmatrix(),
                });
            }
            RankCheck::Deficient(_) => excluded.push(idx),
        }
    }
    if kept.is_empty() {
        return Err(MatError::InvalidInput(
            "every mode failed the data-richness check".into(),
        ));
    }
    Ok((kept, excluded))
}

/// Restricts a Metzler matrix to surviving modes, resetting the diagonal to
/// restore zero column sums.
pub(crate) fn restrict_metzler(pi: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    let k = keep.len();
    let mut out = DMatrix::zeros(k, k);
    for (bi, &i) in keep.iter().enumerate() {
        for (bj, &j) in keep.iter().enumerate() {
            if bi != bj {
                out[(bi, bj)] = pi[(i, j)];
            }
        }
    }
    for i in 0..k {
        let s: f64 = (0..k).filter(|&j| j != i).map(|j| out[(j, i)]).sum();
        out[(i, i)] = -s;
    }
    out
}

/// `Ptilde >= delta I` strictness block.
pub(crate) fn add_pd_block(p: &mut LmiProblem, name: &str, v: VarId, dim: usize, delta: f64) {
    let mut b = crate::conic::BlockExpr::new(name, dim);
    b.add_var(0, 0, 1.0, p, v, false);
    b.add_const(0, 0, &(DMatrix::identity(dim, dim) * -delta));
    p.add_psd_block(b);
}

