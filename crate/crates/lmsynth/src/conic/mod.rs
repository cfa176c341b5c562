//! Self-contained semidefinite-programming layer: affine matrix-inequality
//! problems over products of PSD cones, nonnegative scalars and free
//! variables, an operator-splitting solver in homogeneous self-dual
//! embedding, and a solution certifier that recomputes every margin from the
//! raw problem data (never from solver internals).

mod solver;

pub use solver::{solve, SolveStatus, SolverOptions};

use crate::matops::{self, SymMatrix};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub type ConicResult<T> = Result<T, ConicError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Scalar,
    /// Symmetric matrix, stored as the lower triangle (column-major).
    Sym(usize),
    /// General rectangular matrix, stored row-major.
    Rect(usize, usize),
}

impl VarKind {
    pub fn len(&self) -> usize {
        match *self {
            VarKind::Scalar => 1,
            VarKind::Sym(n) => n * (n + 1) / 2,
            VarKind::Rect(r, c) => r * c,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VarDecl {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
}

/// One affine symmetric-matrix expression required PSD, stored as a constant
/// plus scalar-variable triplets on full-matrix entries.
#[derive(Debug, Clone)]
pub struct PsdBlock {
    pub name: String,
    pub dim: usize,
    pub constant: DMatrix<f64>,
    /// (flattened variable index, row, col, coefficient)
    pub terms: Vec<(usize, usize, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct LinearEq {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Affine matrix-inequality problem: named scalar/matrix decision variables,
/// PSD constraints, scalar equalities, nonnegativity flags and an optional
/// linear objective (minimized). With no objective, the solver maximizes a
/// common slack margin over all PSD blocks and reports Feasible iff the
/// optimal margin exceeds the strictness threshold.
#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    pub(crate) vars: Vec<VarDecl>,
    pub(crate) num_scalars: usize,
    pub(crate) blocks: Vec<PsdBlock>,
    pub(crate) eqs: Vec<LinearEq>,
    pub(crate) nonneg: Vec<usize>,
    /// minimize sum of coeff * x[idx]
    pub(crate) objective: Vec<(usize, f64)>,
    pub(crate) has_trace_objective: bool,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn declare(&mut self, name: &str, kind: VarKind) -> VarId {
        assert!(
            self.vars.iter().all(|v| v.name != name),
            "variable `{name}` declared twice"
        );
        let offset = self.num_scalars;
        self.num_scalars += kind.len();
        self.vars.push(VarDecl {
            name: name.to_string(),
            kind,
            offset,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn scalar(&mut self, name: &str) -> VarId {
        self.declare(name, VarKind::Scalar)
    }

    pub fn scalar_nonneg(&mut self, name: &str) -> VarId {
        let id = self.declare(name, VarKind::Scalar);
        self.nonneg.push(self.vars[id.0].offset);
        id
    }

    pub fn sym(&mut self, name: &str, dim: usize) -> VarId {
        self.declare(name, VarKind::Sym(dim))
    }

    pub fn rect(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        self.declare(name, VarKind::Rect(rows, cols))
    }

    pub fn var(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    pub fn kind(&self, v: VarId) -> VarKind {
        self.vars[v.0].kind
    }

    pub fn num_scalars(&self) -> usize {
        self.num_scalars
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Flattened index of a scalar variable.
    pub fn scalar_index(&self, v: VarId) -> usize {
        assert!(matches!(self.vars[v.0].kind, VarKind::Scalar));
        self.vars[v.0].offset
    }

    /// Flattened index of entry (i, j) of a symmetric variable (i, j in any
    /// order).
    pub fn sym_entry_index(&self, v: VarId, i: usize, j: usize) -> usize {
        let VarKind::Sym(n) = self.vars[v.0].kind else {
            panic!("not a symmetric variable");
        };
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i < n);
        // column-major lower triangle: entries of column j start after
        // n + (n-1) + ... + (n-j+1)
        let col_start = j * (2 * n - j + 1) / 2;
        self.vars[v.0].offset + col_start + (i - j)
    }

    pub fn rect_entry_index(&self, v: VarId, i: usize, j: usize) -> usize {
        let VarKind::Rect(r, c) = self.vars[v.0].kind else {
            panic!("not a rectangular variable");
        };
        assert!(i < r && j < c);
        self.vars[v.0].offset + i * c + j
    }

    pub fn add_psd_block(&mut self, b: BlockExpr) {
        self.blocks.push(b.finish());
    }

    pub fn add_eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.eqs.push(LinearEq { terms, rhs });
    }

    /// Convenience: `tr(V) = rhs` for a symmetric variable.
    pub fn add_trace_eq(&mut self, v: VarId, rhs: f64) {
        let VarKind::Sym(n) = self.vars[v.0].kind else {
            panic!("trace constraint requires a symmetric variable");
        };
        let terms = (0..n).map(|i| (self.sym_entry_index(v, i, i), 1.0)).collect();
        self.add_eq(terms, rhs);
    }

    /// Sets `minimize sum coeff * x[idx]`; replaces any previous objective.
    pub fn set_objective(&mut self, terms: Vec<(usize, f64)>) {
        self.objective = terms;
    }

    pub fn add_objective_trace(&mut self, v: VarId, coeff: f64) {
        let VarKind::Sym(n) = self.vars[v.0].kind else {
            panic!("trace objective requires a symmetric variable");
        };
        for i in 0..n {
            self.objective.push((self.sym_entry_index(v, i, i), coeff));
        }
    }

    pub fn has_objective(&self) -> bool {
        !self.objective.is_empty()
    }

    /// Structural checks: term indices in range, every variable coefficient
    /// matrix symmetric in each block.
    pub fn validate(&self) -> ConicResult<()> {
        for b in &self.blocks {
            if b.constant.nrows() != b.dim || b.constant.ncols() != b.dim {
                return Err(ConicError::InvalidProblem(format!(
                    "block `{}` constant has wrong shape",
                    b.name
                )));
            }
            let asym = (&b.constant - b.constant.transpose()).norm();
            if asym > 1e-10 * b.constant.norm().max(1.0) {
                return Err(ConicError::InvalidProblem(format!(
                    "block `{}` constant not symmetric",
                    b.name
                )));
            }
            // accumulate per-variable asymmetry: each (k, r, c) triplet must be
            // matched so that the coefficient matrix of x_k is symmetric
            let mut acc: std::collections::HashMap<(usize, usize, usize), f64> =
                std::collections::HashMap::new();
            for &(k, r, c, coeff) in &b.terms {
                if k >= self.num_scalars || r >= b.dim || c >= b.dim {
                    return Err(ConicError::InvalidProblem(format!(
                        "block `{}` term out of range",
                        b.name
                    )));
                }
                *acc.entry((k, r, c)).or_insert(0.0) += coeff;
            }
            for (&(k, r, c), &v) in &acc {
                let m = acc.get(&(k, c, r)).copied().unwrap_or(0.0);
                if (v - m).abs() > 1e-10 * v.abs().max(1.0) {
                    return Err(ConicError::InvalidProblem(format!(
                        "block `{}`: coefficient of x[{k}] asymmetric at ({r},{c})",
                        b.name
                    )));
                }
            }
        }
        for e in &self.eqs {
            if e.terms.iter().any(|&(k, _)| k >= self.num_scalars) {
                return Err(ConicError::InvalidProblem("equality index out of range".into()));
            }
        }
        if self.objective.iter().any(|&(k, _)| k >= self.num_scalars) {
            return Err(ConicError::InvalidProblem("objective index out of range".into()));
        }
        Ok(())
    }

    /// Evaluates a PSD block at a flattened assignment.
    pub fn eval_block(&self, block: usize, x: &[f64]) -> SymMatrix {
        let b = &self.blocks[block];
        let mut m = b.constant.clone();
        for &(k, r, c, coeff) in &b.terms {
            m[(r, c)] += coeff * x[k];
        }
        SymMatrix::symmetrize(&m)
    }

    pub fn block_name(&self, block: usize) -> &str {
        &self.blocks[block].name
    }

    /// Extracts the value of a matrix variable from a flattened assignment.
    pub fn extract_matrix(&self, x: &[f64], v: VarId) -> DMatrix<f64> {
        let d = &self.vars[v.0];
        match d.kind {
            VarKind::Scalar => DMatrix::from_element(1, 1, x[d.offset]),
            VarKind::Sym(n) => {
                let mut m = DMatrix::zeros(n, n);
                let mut k = d.offset;
                for j in 0..n {
                    for i in j..n {
                        m[(i, j)] = x[k];
                        m[(j, i)] = x[k];
                        k += 1;
                    }
                }
                m
            }
            VarKind::Rect(r, c) => {
                DMatrix::from_row_slice(r, c, &x[d.offset..d.offset + r * c])
            }
        }
    }

    pub fn extract_scalar(&self, x: &[f64], v: VarId) -> f64 {
        x[self.scalar_index(v)]
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(k, c)| c * x[k]).sum()
    }
}

/// Builder for one PSD block. All placements at block offset `(r0, c0)` with
/// `r0 != c0` are mirrored (the transpose is placed at `(c0, r0)`), so the
/// assembled expression is symmetric by construction.
#[derive(Debug, Clone)]
pub struct BlockExpr {
    name: String,
    dim: usize,
    constant: DMatrix<f64>,
    terms: Vec<(usize, usize, usize, f64)>,
}

impl BlockExpr {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
            constant: DMatrix::zeros(dim, dim),
            terms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn push(&mut self, k: usize, r: usize, c: usize, coeff: f64) {
        if coeff != 0.0 {
            debug_assert!(r < self.dim && c < self.dim);
            self.terms.push((k, r, c, coeff));
        }
    }

    /// Adds a constant matrix at `(r0, c0)`, mirrored if off-diagonal.
    pub fn add_const(&mut self, r0: usize, c0: usize, m: &DMatrix<f64>) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.constant[(r0 + i, c0 + j)] += m[(i, j)];
                if r0 != c0 {
                    self.constant[(c0 + j, r0 + i)] += m[(i, j)];
                }
            }
        }
    }

    /// Adds `coeff * L * V^(T) * R` at `(r0, c0)` (mirrored), where `V` is a
    /// matrix variable and `L`, `R` are optional constant factors.
    #[allow(clippy::too_many_arguments)]
    pub fn add_lin(
        &mut self,
        r0: usize,
        c0: usize,
        coeff: f64,
        p: &LmiProblem,
        left: Option<&DMatrix<f64>>,
        v: VarId,
        transpose: bool,
        right: Option<&DMatrix<f64>>,
    ) {
        let (vr, vc) = match p.kind(v) {
            VarKind::Sym(n) => (n, n),
            VarKind::Rect(r, c) => {
                if transpose {
                    (c, r)
                } else {
                    (r, c)
                }
            }
            VarKind::Scalar => panic!("use add_scalar_mat for scalar variables"),
        };
        let out_rows = left.map_or(vr, |l| l.nrows());
        let out_cols = right.map_or(vc, |r| r.ncols());
        if let Some(l) = left {
            assert_eq!(l.ncols(), vr, "left factor shape mismatch");
        }
        if let Some(r) = right {
            assert_eq!(r.nrows(), vc, "right factor shape mismatch");
        }
        // iterate over variable entries (a, b) of V^(T)
        for a in 0..vr {
            for b in 0..vc {
                // scalar index of this entry
                let (ei, ej) = if transpose { (b, a) } else { (a, b) };
                let k = match p.kind(v) {
                    VarKind::Sym(_) => p.sym_entry_index(v, ei, ej),
                    VarKind::Rect(_, _) => p.rect_entry_index(v, ei, ej),
                    VarKind::Scalar => unreachable!(),
                };
                for i in 0..out_rows {
                    let lfac = left.map_or(if i == a { 1.0 } else { 0.0 }, |l| l[(i, a)]);
                    if lfac == 0.0 {
                        continue;
                    }
                    for j in 0..out_cols {
                        let rfac = right.map_or(if j == b { 1.0 } else { 0.0 }, |r| r[(b, j)]);
                        let w = coeff * lfac * rfac;
                        if w == 0.0 {
                            continue;
                        }
                        self.push(k, r0 + i, c0 + j, w);
                        if r0 != c0 {
                            self.push(k, c0 + j, r0 + i, w);
                        }
                    }
                }
            }
        }
    }

    /// Adds `coeff * V` (or `V^T`) at `(r0, c0)`, mirrored.
    pub fn add_var(
        &mut self,
        r0: usize,
        c0: usize,
        coeff: f64,
        p: &LmiProblem,
        v: VarId,
        transpose: bool,
    ) {
        self.add_lin(r0, c0, coeff, p, None, v, transpose, None);
    }

    /// Adds `x * M` for a scalar variable `x` at `(r0, c0)`, mirrored.
    pub fn add_scalar_mat(
        &mut self,
        r0: usize,
        c0: usize,
        p: &LmiProblem,
        v: VarId,
        m: &DMatrix<f64>,
    ) {
        let k = p.scalar_index(v);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.push(k, r0 + i, c0 + j, m[(i, j)]);
                if r0 != c0 {
                    self.push(k, c0 + j, r0 + i, m[(i, j)]);
                }
            }
        }
    }

    /// Raw triplet escape hatch (for lifted rank-minimization terms). The
    /// caller must keep the overall coefficient matrices symmetric; entries
    /// with `r != c` are mirrored automatically here.
    pub fn add_entry(&mut self, k: usize, r: usize, c: usize, coeff: f64) {
        self.push(k, r, c, coeff);
        if r != c {
            self.push(k, c, r, coeff);
        }
    }

    /// Like [`add_entry`](Self::add_entry) but without mirroring.
    pub fn add_entry_raw(&mut self, k: usize, r: usize, c: usize, coeff: f64) {
        self.push(k, r, c, coeff);
    }

    fn finish(self) -> PsdBlock {
        PsdBlock {
            name: self.name,
            dim: self.dim,
            constant: self.constant,
            terms: self.terms,
        }
    }
}

/// Outcome of an independent solution check: per-block minimum eigenvalues,
/// worst equality residual and nonnegativity violation, all recomputed from
/// the problem data.
#[derive(Debug, Clone)]
pub struct CertReport {
    pub block_margins: Vec<(String, f64)>,
    pub max_eq_residual: f64,
    pub min_nonneg: f64,
    pub tol: f64,
    pub pass: bool,
}

impl CertReport {
    pub fn min_block_margin(&self) -> f64 {
        self.block_margins
            .iter()
            .map(|&(_, m)| m)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Recomputes every PSD margin and residual from scratch; independent of the
/// solve path, so any assignment that certifies is accepted regardless of
/// origin.
pub fn certify(p: &LmiProblem, x: &[f64], tol: f64) -> CertReport {
    let mut block_margins = Vec::with_capacity(p.blocks.len());
    for i in 0..p.blocks.len() {
        let m = p.eval_block(i, x);
        let margin = matops::min_eig_margin(&m).unwrap_or(f64::NEG_INFINITY);
        block_margins.push((p.blocks[i].name.clone(), margin));
    }
    let mut max_eq_residual: f64 = 0.0;
    for e in &p.eqs {
        let v: f64 = e.terms.iter().map(|&(k, c)| c * x[k]).sum();
        max_eq_residual = max_eq_residual.max((v - e.rhs).abs());
    }
    let min_nonneg = p
        .nonneg
        .iter()
        .map(|&k| x[k])
        .fold(f64::INFINITY, f64::min);
    let pass = block_margins.iter().all(|&(_, m)| m >= -tol)
        && max_eq_residual <= tol.max(1e-9)
        && (p.nonneg.is_empty() || min_nonneg >= -tol);
    CertReport {
        block_margins,
        max_eq_residual,
        min_nonneg,
        tol,
        pass,
    }
}

/// Solution of an [`LmiProblem`]: status, flattened variable values and
/// residuals recomputed on the original (unscaled) data.
#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective_value: f64,
    /// Maximized common PSD margin when solved in feasibility mode.
    pub slack_margin: Option<f64>,
    pub iterations: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn sym_entry_indexing_roundtrip() {
        let mut p = LmiProblem::new();
        let v = p.sym("S", 4);
        let mut seen = std::collections::HashSet::new();
        for j in 0..4 {
            for i in j..4 {
                let k = p.sym_entry_index(v, i, j);
                assert_eq!(k, p.sym_entry_index(v, j, i));
                assert!(seen.insert(k));
            }
        }
        assert_eq!(seen.len(), 10);

        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let m = p.extract_matrix(&x, v);
        for j in 0..4 {
            for i in j..4 {
                assert_eq!(m[(i, j)], x[p.sym_entry_index(v, i, j)]);
                assert_eq!(m[(j, i)], m[(i, j)]);
            }
        }
    }

    #[test]
    fn block_expr_mirrors_offdiagonal() {
        let mut p = LmiProblem::new();
        let s = p.sym("P", 2);
        let l = p.rect("L", 1, 2);
        let mut b = BlockExpr::new("test", 3);
        // place L^T (2x1) at (0, 2) => mirrored L at (2, 0)
        b.add_var(0, 2, -1.0, &p, l, true);
        b.add_var(0, 0, 1.0, &p, s, false);
        p.add_psd_block(b);
        p.validate().unwrap();
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0]; // P = [[1,2],[2,3]], L = [4,5]
        let g = p.eval_block(0, &x);
        assert_eq!(g[(0, 2)], -4.0);
        assert_eq!(g[(2, 0)], -4.0);
        assert_eq!(g[(1, 2)], -5.0);
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(0, 1)], 2.0);
    }

    #[test]
    fn add_lin_sandwich() {
        // place A * P * B with known values and compare against dense algebra
        let mut p = LmiProblem::new();
        let s = p.sym("P", 2);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let bmat = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 1.0, -1.0]);
        let mut blk = BlockExpr::new("sandwich", 4);
        blk.add_lin(0, 2, 1.0, &p, Some(&a), s, false, Some(&bmat));
        p.add_psd_block(blk);
        let x = vec![1.0, 2.0, 3.0]; // P = [[1,2],[2,3]]
        let g = p.eval_block(0, &x);
        let pm = p.extract_matrix(&x, s);
        let prod = &a * &pm * &bmat;
        for i in 0..2 {
            for j in 0..2 {
                assert!((g[(i, 2 + j)] - prod[(i, j)]).abs() < 1e-14);
                assert!((g[(2 + j, i)] - prod[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn certify_reports_violations() {
        let mut p = LmiProblem::new();
        let s = p.sym("X", 2);
        let mut b = BlockExpr::new("X", 2);
        b.add_var(0, 0, 1.0, &p, s, false);
        p.add_psd_block(b);
        p.add_trace_eq(s, 1.0);
        // X = diag(0.9, 0.1): PSD, trace 1 -> pass
        let k00 = p.sym_entry_index(s, 0, 0);
        let k11 = p.sym_entry_index(s, 1, 1);
        let mut x = vec![0.0; p.num_scalars()];
        x[k00] = 0.9;
        x[k11] = 0.1;
        let rep = certify(&p, &x, 1e-8);
        assert!(rep.pass, "expected pass: {rep:?}");
        // perturb to indefinite
        x[k11] = -0.1;
        let rep = certify(&p, &x, 1e-8);
        assert!(!rep.pass);
        assert!(rep.min_block_margin() < -0.09);
    }
}
