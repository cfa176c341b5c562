//! Operator-splitting conic solver in homogeneous self-dual embedding.
//!
//! The problem `min c'x  s.t.  A x + s = b, s in K` (K a product of a zero
//! cone, the nonnegative orthant and svec'd PSD cones) is solved by
//! alternating a linear solve with `(I + Q)` and a projection onto
//! `R^d x K* x R_+`, where `Q` is the skew HSDE matrix. Infeasibility is
//! certified from the improving ray, so a problem is never declared
//! infeasible on non-convergence alone.
//!
//! Problems without an objective are solved by maximizing a common slack
//! margin `t` over all PSD blocks (`G(x) - t I >= 0`, `t <= cap`) and are
//! reported `Feasible` iff the achieved margin exceeds the strictness
//! threshold `feas_delta`.

use super::{certify, ConicError, ConicResult, ConicSolution, LmiProblem};
use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    MaxIters,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Feasibility-mode verdict threshold: Feasible iff slack margin > this.
    pub feas_delta: f64,
    /// Upper bound on the maximized slack margin (keeps homogeneous
    /// feasibility problems bounded).
    pub slack_cap: f64,
    /// Tolerance for the certifier run on returned solutions.
    pub certify_tol: f64,
    pub check_every: usize,
    pub over_relax: f64,
    pub ruiz_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            tol: 1e-8,
            feas_delta: 1e-6,
            slack_cap: 1.0,
            certify_tol: 1e-6,
            check_every: 25,
            over_relax: 1.5,
            ruiz_iters: 10,
        }
    }
}

/// Row layout of the stacked cone: equalities, then nonnegative rows, then
/// svec'd PSD blocks.
struct ConeLayout {
    n_zero: usize,
    n_pos: usize,
    psd_dims: Vec<usize>,
}

impl ConeLayout {
    fn total(&self) -> usize {
        self.n_zero
            + self.n_pos
            + self
                .psd_dims
                .iter()
                .map(|&d| d * (d + 1) / 2)
                .sum::<usize>()
    }
}

fn svec_coord(dim: usize, i: usize, j: usize) -> usize {
    // (i, j) with i >= j, column-major lower triangle
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    j * (2 * dim - j + 1) / 2 + (i - j)
}

struct ConicData {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    cone: ConeLayout,
    /// index of the internal slack variable in feasibility mode
    slack: Option<usize>,
}

fn build_conic(p: &LmiProblem, opts: &SolverOptions) -> ConicData {
    let feas = !p.has_objective();
    let d_orig = p.num_scalars;
    let d = if feas { d_orig + 1 } else { d_orig };
    let slack = if feas { Some(d_orig) } else { None };

    let n_zero = p.eqs.len();
    let n_pos = p.nonneg.len() + usize::from(feas);
    let cone = ConeLayout {
        n_zero,
        n_pos,
        psd_dims: p.blocks.iter().map(|b| b.dim).collect(),
    };
    let m = cone.total();
    let mut a = DMatrix::zeros(m, d);
    let mut b = DVector::zeros(m);
    let mut c = DVector::zeros(d);

    let mut row = 0;
    for e in &p.eqs {
        for &(k, coeff) in &e.terms {
            a[(row, k)] += -coeff;
        }
        b[row] = -e.rhs;
        // zero cone: s = b - Ax = 0 <=> sum coeff x = rhs; sign convention:
        // -(sum coeff x) + s = -rhs
        row += 1;
    }
    for &k in &p.nonneg {
        a[(row, k)] = -1.0;
        b[row] = 0.0;
        row += 1;
    }
    if let Some(t) = slack {
        // t <= cap
        a[(row, t)] = 1.0;
        b[row] = opts.slack_cap;
        row += 1;
    }
    let r2 = std::f64::consts::SQRT_2;
    for blk in &p.blocks {
        let dim = blk.dim;
        for j in 0..dim {
            for i in j..dim {
                let r = row + svec_coord(dim, i, j);
                b[r] = if i == j {
                    blk.constant[(i, j)]
                } else {
                    r2 * blk.constant[(i, j)]
                };
            }
        }
        for &(k, r, cc, coeff) in &blk.terms {
            let coord = row + svec_coord(dim, r, cc);
            // each (r,c) entry triplet contributes G_rc; svec off-diagonal
            // coordinates carry sqrt(2) * G_rc built from both mirrored
            // triplets, hence the 1/sqrt(2) factor per triplet
            let w = if r == cc { coeff } else { coeff / r2 };
            a[(coord, k)] += -w;
        }
        if let Some(t) = slack {
            for i in 0..dim {
                a[(row + svec_coord(dim, i, i), t)] += 1.0;
            }
        }
        row += dim * (dim + 1) / 2;
    }
    debug_assert_eq!(row, m);

    if let Some(t) = slack {
        c[t] = -1.0; // maximize t
    } else {
        for &(k, coeff) in &p.objective {
            c[k] += coeff;
        }
    }
    let _ = d;
    ConicData { a, b, c, cone, slack }
}

/// Ruiz equilibration with per-PSD-block uniform row scaling (per-row scaling
/// inside a block would break the cone).
struct Scaling {
    dvec: DVector<f64>,
    evec: DVector<f64>,
    sb: f64,
    sc: f64,
}

fn equilibrate(data: &ConicData, iters: usize) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, Scaling) {
    let (m, d) = (data.a.nrows(), data.a.ncols());
    let mut a = data.a.clone();
    let mut dvec = DVector::from_element(m, 1.0);
    let mut evec = DVector::from_element(d, 1.0);
    // row group id: equalities and nonneg rows are singleton groups; PSD
    // blocks share one group
    let mut group_of = vec![0usize; m];
    let mut g = 0;
    let mut r = 0;
    for _ in 0..(data.cone.n_zero + data.cone.n_pos) {
        group_of[r] = g;
        g += 1;
        r += 1;
    }
    for &dim in &data.cone.psd_dims {
        for _ in 0..dim * (dim + 1) / 2 {
            group_of[r] = g;
            r += 1;
        }
        g += 1;
    }
    let n_groups = g;

    for _ in 0..iters {
        let mut gmax = vec![0.0f64; n_groups];
        for i in 0..m {
            let mut rn = 0.0f64;
            for j in 0..d {
                rn = rn.max(a[(i, j)].abs());
            }
            let gi = group_of[i];
            gmax[gi] = gmax[gi].max(rn);
        }
        for i in 0..m {
            let gm = gmax[group_of[i]];
            if gm > 1e-12 {
                let s = 1.0 / gm.sqrt();
                for j in 0..d {
                    a[(i, j)] *= s;
                }
                dvec[i] *= s;
            }
        }
        for j in 0..d {
            let mut cn = 0.0f64;
            for i in 0..m {
                cn = cn.max(a[(i, j)].abs());
            }
            if cn > 1e-12 {
                let s = 1.0 / cn.sqrt();
                for i in 0..m {
                    a[(i, j)] *= s;
                }
                evec[j] *= s;
            }
        }
    }
    let mut b = DVector::zeros(m);
    for i in 0..m {
        b[i] = data.b[i] * dvec[i];
    }
    let mut c = DVector::zeros(d);
    for j in 0..d {
        c[j] = data.c[j] * evec[j];
    }
    let sb = 1.0 / b.norm().max(1.0);
    let sc = 1.0 / c.norm().max(1.0);
    b *= sb;
    c *= sc;
    (a, b, c, Scaling { dvec, evec, sb, sc })
}

/// Projects the dual-cone part of the iterate in place: equality rows free,
/// nonnegative rows clamped, PSD blocks eigenvalue-clipped.
fn project_dual(y: &mut [f64], cone: &ConeLayout) {
    let mut off = cone.n_zero;
    for k in 0..cone.n_pos {
        let v = &mut y[off + k];
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    off += cone.n_pos;
    let inv_r2 = 1.0 / std::f64::consts::SQRT_2;
    for &dim in &cone.psd_dims {
        let len = dim * (dim + 1) / 2;
        if dim == 1 {
            if y[off] < 0.0 {
                y[off] = 0.0;
            }
        } else {
            let mut mat = DMatrix::zeros(dim, dim);
            let mut k = off;
            for j in 0..dim {
                for i in j..dim {
                    let v = if i == j { y[k] } else { y[k] * inv_r2 };
                    mat[(i, j)] = v;
                    mat[(j, i)] = v;
                    k += 1;
                }
            }
            let se = mat.symmetric_eigen();
            let mut clipped = DMatrix::zeros(dim, dim);
            for (idx, ev) in se.eigenvalues.iter().enumerate() {
                if *ev > 0.0 {
                    let col = se.eigenvectors.column(idx);
                    clipped.ger(*ev, &col, &col, 1.0);
                }
            }
            let mut k = off;
            let r2 = std::f64::consts::SQRT_2;
            for j in 0..dim {
                for i in j..dim {
                    y[k] = if i == j {
                        clipped[(i, j)]
                    } else {
                        r2 * clipped[(i, j)]
                    };
                    k += 1;
                }
            }
        }
        off += len;
    }
}

struct Workspace {
    chol: Cholesky<f64, nalgebra::Dyn>,
    at: DMatrix<f64>,
    g: DVector<f64>,
    denom: f64,
}

fn factorize(a: &DMatrix<f64>, c: &DVector<f64>, b: &DVector<f64>) -> ConicResult<Workspace> {
    let d = a.ncols();
    let at = a.transpose();
    let mut gram = &at * a;
    for i in 0..d {
        gram[(i, i)] += 1.0;
    }
    let chol = Cholesky::new(gram)
        .ok_or_else(|| ConicError::NumericalFailure("Gram factorization failed".into()))?;
    // g = M^{-1} (c; b)
    let (g1, g2) = msolve(&chol, a, &at, c, b);
    let denom = 1.0 + c.dot(&g1) + b.dot(&g2);
    let mut g = DVector::zeros(d + a.nrows());
    g.rows_mut(0, d).copy_from(&g1);
    g.rows_mut(d, a.nrows()).copy_from(&g2);
    Ok(Workspace { chol, at, g, denom })
}

/// Solves `[[I, A'], [-A, I]] (z1; z2) = (p1; p2)` via the Gram reduction.
fn msolve(
    chol: &Cholesky<f64, nalgebra::Dyn>,
    a: &DMatrix<f64>,
    at: &DMatrix<f64>,
    p1: &DVector<f64>,
    p2: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let rhs = p1 - at * p2;
    let z1 = chol.solve(&rhs);
    let z2 = p2 + a * &z1;
    (z1, z2)
}

/// Least-squares corrector onto the equality manifold: normalization
/// equalities (trace pins, moment-matrix anchors) converge slowly under
/// operator splitting but can be satisfied exactly by a tiny projection,
/// after which the independent certifier decides.
struct EqProjector {
    aeq: DMatrix<f64>,
    beq: DVector<f64>,
    gram_chol: Option<Cholesky<f64, nalgebra::Dyn>>,
}

impl EqProjector {
    fn new(p: &LmiProblem) -> Self {
        let me = p.eqs.len();
        let d = p.num_scalars;
        let mut aeq = DMatrix::zeros(me, d);
        let mut beq = DVector::zeros(me);
        for (r, e) in p.eqs.iter().enumerate() {
            for &(k, c) in &e.terms {
                aeq[(r, k)] += c;
            }
            beq[r] = e.rhs;
        }
        let gram_chol = if me > 0 {
            Cholesky::new(&aeq * aeq.transpose() + DMatrix::identity(me, me) * 1e-14)
        } else {
            None
        };
        Self { aeq, beq, gram_chol }
    }

    fn project(&self, x: &mut [f64]) {
        let Some(chol) = &self.gram_chol else { return };
        let xv = DVector::from_column_slice(x);
        let resid = &self.aeq * &xv - &self.beq;
        let corr = self.aeq.transpose() * chol.solve(&resid);
        for (xi, ci) in x.iter_mut().zip(corr.iter()) {
            *xi -= ci;
        }
    }
}

pub fn solve(p: &LmiProblem, opts: &SolverOptions) -> ConicResult<ConicSolution> {
    p.validate()?;
    if p.num_scalars == 0 || p.blocks.is_empty() && p.eqs.is_empty() && p.nonneg.is_empty() {
        return Err(ConicError::InvalidProblem(
            "problem has no variables or no constraints".into(),
        ));
    }
    let feas_mode = !p.has_objective();
    let projector = EqProjector::new(p);
    let data = build_conic(p, opts);
    let (ah, bh, ch, scaling) = equilibrate(&data, opts.ruiz_iters);
    let ws = factorize(&ah, &ch, &bh)?;
    let (m, d) = (ah.nrows(), ah.ncols());
    let n = d + m;

    let mut u = DVector::zeros(n + 1);
    let mut v = DVector::zeros(n + 1);
    u[n] = 1.0;
    v[n] = 1.0;

    let alpha = opts.over_relax;
    let b_norm = data.b.norm();
    let c_norm = data.c.norm();

    let mut best: Option<ConicSolution> = None;
    let mut iter = 0;
    while iter < opts.max_iters {
        // linear solve: (I + Q) utilde = u + v
        let w = &u + &v;
        let wx = w.rows(0, d).into_owned();
        let wy = w.rows(d, m).into_owned();
        let wt = w[n];
        let (z1, z2) = msolve(&ws.chol, &ah, &ws.at, &wx, &wy);
        let ut_tau = (wt + ch.dot(&z1) + bh.dot(&z2)) / ws.denom;
        let mut utilde = DVector::zeros(n + 1);
        utilde.rows_mut(0, d).copy_from(&(&z1 - ut_tau * ws.g.rows(0, d)));
        utilde
            .rows_mut(d, m)
            .copy_from(&(&z2 - ut_tau * ws.g.rows(d, m)));
        utilde[n] = ut_tau;

        // relaxed projection step
        let mut q = alpha * &utilde + (1.0 - alpha) * &u - &v;
        {
            let mut qy = q.rows_mut(d, m);
            let slice: &mut [f64] = qy.as_mut_slice();
            project_dual(slice, &data.cone);
        }
        if q[n] < 0.0 {
            q[n] = 0.0;
        }
        let u_new = q; // x-part of projection is identity
        let v_new = &v + &u_new - alpha * &utilde - (1.0 - alpha) * &u;
        u = u_new;
        v = v_new;
        iter += 1;

        if iter % opts.check_every != 0 && iter != opts.max_iters {
            continue;
        }
        if u.iter().any(|x| !x.is_finite()) || v.iter().any(|x| !x.is_finite()) {
            return Err(ConicError::NumericalFailure(format!(
                "non-finite iterate at iteration {iter}"
            )));
        }

        let tau = u[n];
        if tau > 1e-10 {
            // candidate solution in original coordinates
            let mut x = vec![0.0; d];
            for j in 0..d {
                x[j] = scaling.evec[j] * u[j] / tau / scaling.sb;
            }
            let mut y = vec![0.0; m];
            let mut s = vec![0.0; m];
            for i in 0..m {
                y[i] = scaling.dvec[i] * u[d + i] / tau / scaling.sc;
                s[i] = v[d + i] / scaling.dvec[i] / tau / scaling.sb;
            }
            let xv = DVector::from_vec(x.clone());
            let yv = DVector::from_vec(y);
            let sv = DVector::from_vec(s);
            let pr = (&data.a * &xv + &sv - &data.b).norm() / (1.0 + b_norm);
            let dr = (data.a.transpose() * &yv + &data.c).norm() / (1.0 + c_norm);
            let cx = data.c.dot(&xv);
            let by = data.b.dot(&yv);
            let gap = (cx + by).abs() / (1.0 + cx.abs() + by.abs());

            let mut x_corr = x[..p.num_scalars].to_vec();
            projector.project(&mut x_corr);
            let x_orig = &x_corr[..];
            let make_sol = |status: SolveStatus| ConicSolution {
                status,
                x: x_orig.to_vec(),
                primal_residual: pr,
                dual_residual: dr,
                objective_value: if feas_mode {
                    -cx
                } else {
                    p.objective_value(x_orig)
                },
                slack_margin: data.slack.map(|t| x[t]),
                iterations: iter,
            };

            let converged = pr <= opts.tol && dr <= opts.tol && gap <= opts.tol;
            if feas_mode {
                let t_val = x[data.slack.unwrap()];
                // any candidate whose independently recomputed margins pass
                // is a valid feasibility witness, regardless of conic
                // residuals
                if t_val > opts.feas_delta {
                    let rep = certify(p, x_orig, opts.certify_tol);
                    if rep.min_block_margin() > opts.feas_delta
                        && rep.max_eq_residual <= opts.certify_tol
                        && (p.nonneg.is_empty() || rep.min_nonneg >= -opts.certify_tol)
                    {
                        return Ok(make_sol(SolveStatus::Feasible));
                    }
                }
                if converged && t_val <= opts.feas_delta {
                    return Ok(make_sol(SolveStatus::Infeasible));
                }
                // strongly infeasible shortcut: near-converged with a
                // distinctly negative optimal margin
                if pr <= 1e-6 && dr <= 1e-6 && gap <= 1e-6 && t_val < -1e-4 {
                    return Ok(make_sol(SolveStatus::Infeasible));
                }
                best = Some(make_sol(SolveStatus::MaxIters));
            } else if converged {
                let rep = certify(p, x_orig, opts.certify_tol);
                if rep.pass {
                    return Ok(make_sol(SolveStatus::Optimal));
                }
                best = Some(make_sol(SolveStatus::MaxIters));
            } else {
                best = Some(make_sol(SolveStatus::MaxIters));
            }
        }

        // infeasibility certificates from the ray
        let uy = u.rows(d, m);
        let mut y_ray = DVector::zeros(m);
        for i in 0..m {
            y_ray[i] = scaling.dvec[i] * uy[i];
        }
        let bty = data.b.dot(&y_ray);
        if bty < -1e-12 {
            let scale = -1.0 / bty;
            let atn = (data.a.transpose() * &y_ray).norm() * scale;
            if atn * (1.0 + b_norm) <= opts.tol.max(1e-8) * 10.0 {
                return Ok(ConicSolution {
                    status: SolveStatus::Infeasible,
                    x: vec![0.0; p.num_scalars],
                    primal_residual: f64::INFINITY,
                    dual_residual: atn,
                    objective_value: f64::INFINITY,
                    slack_margin: None,
                    iterations: iter,
                });
            }
        }
        if !feas_mode {
            // unboundedness ray: A x + s = 0, c'x < 0
            let ux = u.rows(0, d);
            let mut x_ray = DVector::zeros(d);
            for j in 0..d {
                x_ray[j] = scaling.evec[j] * ux[j];
            }
            let ctx = data.c.dot(&x_ray);
            if ctx < -1e-12 {
                let mut s_ray = DVector::zeros(m);
                for i in 0..m {
                    s_ray[i] = v[d + i] / scaling.dvec[i];
                }
                let res = (&data.a * &x_ray + &s_ray).norm() * (-1.0 / ctx);
                if res * (1.0 + c_norm) <= opts.tol.max(1e-8) * 10.0 {
                    return Err(ConicError::NumericalFailure(
                        "objective unbounded below (dual infeasible)".into(),
                    ));
                }
            }
        }
    }

    Ok(best.unwrap_or(ConicSolution {
        status: SolveStatus::MaxIters,
        x: vec![0.0; p.num_scalars],
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        objective_value: f64::NAN,
        slack_margin: None,
        iterations: opts.max_iters,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::BlockExpr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn feasibility_scaled_identity() {
        // x * I2 >= 0 with x = 1 fixed by equality
        let mut p = LmiProblem::new();
        let x = p.scalar("x");
        let mut b = BlockExpr::new("xI", 2);
        b.add_scalar_mat(0, 0, &p, x, &DMatrix::identity(2, 2));
        p.add_psd_block(b);
        p.add_eq(vec![(p.scalar_index(x), 1.0)], 1.0);
        let sol = solve(&p, &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Feasible, "{sol:?}");
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn analytic_optimum() {
        // minimize -t  s.t.  I2 - t I2 >= 0  =>  t* = 1
        let mut p = LmiProblem::new();
        let t = p.scalar("t");
        let mut b = BlockExpr::new("ItI", 2);
        b.add_const(0, 0, &DMatrix::identity(2, 2));
        b.add_scalar_mat(0, 0, &p, t, &(-DMatrix::identity(2, 2)));
        p.add_psd_block(b);
        p.set_objective(vec![(p.scalar_index(t), -1.0)]);
        let sol = solve(&p, &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "{sol:?}");
        assert!((sol.x[0] - 1.0).abs() < 1e-6, "t = {}", sol.x[0]);
    }

    #[test]
    fn infeasible_trace_battery() {
        // X >= I_n with tr(X) = n/2 is infeasible for every n >= 1
        for n in 1..4usize {
            let mut p = LmiProblem::new();
            let xv = p.sym("X", n);
            let mut b = BlockExpr::new("X-I", n);
            b.add_var(0, 0, 1.0, &p, xv, false);
            b.add_const(0, 0, &(-DMatrix::identity(n, n)));
            p.add_psd_block(b);
            p.add_trace_eq(xv, n as f64 / 2.0);
            let sol = solve(&p, &opts()).unwrap();
            assert_eq!(sol.status, SolveStatus::Infeasible, "n = {n}: {sol:?}");
        }
    }

    #[test]
    fn random_strictly_feasible_battery() {
        // interior-point construction: G(x0) := S0 (PD) at a random x0
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut failures = 0;
        for trial in 0..100 {
            let nv = rng.gen_range(1..4usize);
            let dim = rng.gen_range(1..5usize);
            let mut p = LmiProblem::new();
            let vars: Vec<_> = (0..nv).map(|i| p.scalar(&format!("x{i}"))).collect();
            let x0: Vec<f64> = (0..nv).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut blk = BlockExpr::new("G", dim);
            let mut constant = {
                let g = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
                &g * g.transpose() + DMatrix::identity(dim, dim) * rng.gen_range(0.3..1.0)
            };
            for (i, v) in vars.iter().enumerate() {
                let gk = {
                    let g = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
                    crate::matops::SymMatrix::symmetrize(&g).into_dmatrix()
                };
                constant -= &gk * x0[i];
                blk.add_scalar_mat(0, 0, &p, *v, &gk);
            }
            blk.add_const(0, 0, &constant);
            p.add_psd_block(blk);
            let sol = solve(&p, &opts()).unwrap();
            if sol.status != SolveStatus::Feasible {
                failures += 1;
                eprintln!("trial {trial}: {:?}", sol.status);
            }
        }
        assert_eq!(failures, 0);
    }

    #[test]
    fn certify_detects_perturbation() {
        // solve a feasible problem, then corrupt a pivotal entry by 1e-3
        let mut p = LmiProblem::new();
        let xv = p.sym("X", 2);
        let mut b = BlockExpr::new("X - I", 2);
        b.add_var(0, 0, 1.0, &p, xv, false);
        b.add_const(0, 0, &(-DMatrix::identity(2, 2)));
        p.add_psd_block(b);
        p.add_trace_eq(xv, 2.5);
        let sol = solve(&p, &opts()).unwrap();
        assert_eq!(sol.status, SolveStatus::Feasible);
        let rep = certify(&p, &sol.x, 1e-6);
        assert!(rep.pass);
        let mut bad = sol.x.clone();
        let k = p.sym_entry_index(xv, 0, 0);
        bad[k] = 1.0 - 1e-3; // X = diag(1 - 1e-3, ...) violates X >= I
        let rep = certify(&p, &bad, 1e-6);
        assert!(!rep.pass);
    }

    #[test]
    fn solver_margins_meet_default_contract() {
        // regression: solutions from solve() with defaults certify at 1e-6
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let dim = rng.gen_range(2..5usize);
            let mut p = LmiProblem::new();
            let xv = p.sym("X", dim);
            let t = p.scalar("t");
            let mut b = BlockExpr::new("X", dim);
            b.add_var(0, 0, 1.0, &p, xv, false);
            p.add_psd_block(b);
            let mut b2 = BlockExpr::new("cap", dim);
            b2.add_const(0, 0, &DMatrix::identity(dim, dim));
            b2.add_var(0, 0, -0.2, &p, xv, false);
            b2.add_scalar_mat(0, 0, &p, t, &DMatrix::identity(dim, dim));
            p.add_psd_block(b2);
            p.add_trace_eq(xv, 1.0);
            p.add_eq(vec![(p.scalar_index(t), 1.0)], -0.5);
            let sol = solve(&p, &opts()).unwrap();
            assert_eq!(sol.status, SolveStatus::Feasible);
            let rep = certify(&p, &sol.x, 1e-6);
            assert!(rep.pass, "{rep:?}");
        }
    }
}
