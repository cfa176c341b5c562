//! Model-based coupled Lyapunov conditions used as test oracles and for the
//! relaxation-dominance comparison; these take the true matrices and are
//! never part of the data-driven path.

use crate::conic::{self, BlockExpr, LmiProblem, SolveStatus, SolverOptions, VarId};
use crate::matops::{MatError, MatResult};
use nalgebra::DMatrix;

fn solve_feasibility(p: &LmiProblem) -> MatResult<bool> {
    let sol = conic::solve(p, &SolverOptions::default())
        .map_err(|e| MatError::InvalidInput(e.to_string()))?;
    Ok(sol.status == SolveStatus::Feasible)
}

fn declare_p_vars(p: &mut LmiProblem, n_modes: usize, n: usize, delta: f64) -> (Vec<VarId>, VarId) {
    let ps: Vec<VarId> = (0..n_modes).map(|i| p.sym(&format!("P_{i}"), n)).collect();
    let q = p.sym("Q", n);
    for (i, &pv) in ps.iter().enumerate() {
        super::add_pd_block(p, &format!("P_{i}_pd"), pv, n, delta);
    }
    super::add_pd_block(p, "Q_pd", q, n, delta);
    p.add_trace_eq(q, 1.0);
    (ps, q)
}

/// Pairwise relaxation: `A_i'P_i + P_i A_i + gamma (P_j - P_i) + Q < 0` for
/// all `j != i`. Known to be strictly more conservative than the averaged
/// structure below.
pub fn model_lm_pairwise_feasible(a: &[DMatrix<f64>], gamma: f64, delta: f64) -> MatResult<bool> {
    let n = a[0].nrows();
    let nm = a.len();
    let mut p = LmiProblem::new();
    let (ps, q) = declare_p_vars(&mut p, nm, n, delta);
    for i in 0..nm {
        for j in 0..nm {
            if i == j {
                continue;
            }
            // -(A_i'P_i + P_i A_i + gamma(P_j - P_i) + Q) - delta I >= 0
            let mut blk = BlockExpr::new(format!("pair_{i}_{j}"), n);
            blk.add_lin(0, 0, -1.0, &p, None, ps[i], false, Some(&a[i].clone()));
            blk.add_lin(0, 0, -1.0, &p, Some(&a[i].transpose()), ps[i], false, None);
            blk.add_var(0, 0, -gamma, &p, ps[j], false);
            blk.add_var(0, 0, gamma, &p, ps[i], false);
            blk.add_var(0, 0, -1.0, &p, q, false);
            blk.add_const(0, 0, &(DMatrix::identity(n, n) * -delta));
            p.add_psd_block(blk);
        }
    }
    solve_feasibility(&p)
}

/// Averaged structure: `A_i'P_i + P_i A_i + gamma sum_{j != i}(P_j - P_i) +
/// Q <= 0`.
pub fn model_lm_uniform_feasible(a: &[DMatrix<f64>], gamma: f64, delta: f64) -> MatResult<bool> {
    let n = a[0].nrows();
    let nm = a.len();
    let mut p = LmiProblem::new();
    let (ps, q) = declare_p_vars(&mut p, nm, n, delta);
    for i in 0..nm {
        let mut blk = BlockExpr::new(format!("avg_{i}"), n);
        blk.add_lin(0, 0, -1.0, &p, None, ps[i], false, Some(&a[i].clone()));
        blk.add_lin(0, 0, -1.0, &p, Some(&a[i].transpose()), ps[i], false, None);
        for j in 0..nm {
            if j != i {
                blk.add_var(0, 0, -gamma, &p, ps[j], false);
                blk.add_var(0, 0, gamma, &p, ps[i], false);
            }
        }
        blk.add_var(0, 0, -1.0, &p, q, false);
        p.add_psd_block(blk);
    }
    solve_feasibility(&p)
}

/// Model-based discrete-time coupled condition (test oracle):
/// `A_i'(sum_j lambda_{j,i} P_j) A_i - P_i + Q < 0`.
pub fn model_dtlm_feasible(a: &[DMatrix<f64>], lambda: &DMatrix<f64>, delta: f64) -> MatResult<bool> {
    let n = a[0].nrows();
    let nm = a.len();
    let mut p = LmiProblem::new();
    let (ps, q) = declare_p_vars(&mut p, nm, n, delta);
    for i in 0..nm {
        let mut blk = BlockExpr::new(format!("dt_{i}"), n);
        for j in 0..nm {
            let w = lambda[(j, i)];
            if w > 0.0 {
                blk.add_lin(
                    0,
                    0,
                    -w,
                    &p,
                    Some(&a[i].transpose()),
                    ps[j],
                    false,
                    Some(&a[i].clone()),
                );
            }
        }
        blk.add_var(0, 0, 1.0, &p, ps[i], false);
        blk.add_var(0, 0, -1.0, &p, q, false);
        p.add_psd_block(blk);
    }
    solve_feasibility(&p)
}
