//! Scalar line-search over the coupling parameters: full logarithmic grid
//! scan for the single-scalar structure, multi-start cyclic coordinate
//! ascent on the feasibility slack (or the achieved performance level) for
//! the per-mode structure.

use super::{
    extract_controller, finalize, solver_certificate, ControllerKind, SwitchedController,
    SynthError, SynthOptions, SynthResult,
};
use crate::conic::{self, SolveStatus};
use crate::datamodel::{DisturbancePrior, ModeDataset};
use crate::lmi_builder::{
    build_c2, build_c3_dt, build_hinf, BuiltLmi, ConditionKind, DtTransitionSpec, HinfRho,
    MetzlerSpec, PerformanceSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStructure {
    Uniform,
    PerMode,
}

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 20,
            lo: 1.0,
            hi: 100.0,
        }
    }
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        assert!(self.points >= 1 && self.lo > 0.0 && self.hi >= self.lo);
        if self.points == 1 {
            return vec![self.lo];
        }
        (0..self.points)
            .map(|k| self.lo * (self.hi / self.lo).powf(k as f64 / (self.points - 1) as f64))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SearchRecord {
    pub gammas: Vec<f64>,
    pub status: SolveStatus,
    /// feasibility slack, or the achieved level for objective problems
    pub score: f64,
}

#[derive(Debug, Clone)]
pub enum SearchCondition {
    C2,
    Hinf { perf: PerformanceSpec },
    C3,
}

impl SearchCondition {
    fn name(&self) -> ConditionKind {
        match self {
            SearchCondition::C2 => ConditionKind::C2,
            SearchCondition::Hinf { .. } => ConditionKind::Hinf,
            SearchCondition::C3 => ConditionKind::C3,
        }
    }
}

struct Eval {
    status: SolveStatus,
    /// larger is better; respects feasibility first
    score: f64,
    feasible: bool,
    built: Option<BuiltLmi>,
    x: Option<Vec<f64>>,
}

fn eval_point(
    data: &[(ModeDataset, DisturbancePrior)],
    cond: &SearchCondition,
    gammas: &[f64],
    opts: &SynthOptions,
) -> SynthResult<Eval> {
    let built = match cond {
        SearchCondition::C2 => build_c2(data, gammas, &opts.build)?,
        SearchCondition::C3 => {
            build_c3_dt(data, &DtTransitionSpec::PerMode(gammas.to_vec()), &opts.build)?
        }
        SearchCondition::Hinf { perf } => build_hinf(
            data,
            &MetzlerSpec::PerMode(gammas.to_vec()),
            perf,
            HinfRho::Variable,
            &opts.build,
        )?,
    };
    let sol = match conic::solve(&built.problem, &opts.solver) {
        Ok(s) => s,
        Err(_) => {
            return Ok(Eval {
                status: SolveStatus::NumericalFailure,
                score: f64::NEG_INFINITY,
                feasible: false,
                built: None,
                x: None,
            })
        }
    };
    let (feasible, score) = match (&cond, sol.status) {
        (SearchCondition::Hinf { .. }, SolveStatus::Optimal) => (true, -sol.objective_value),
        (SearchCondition::Hinf { .. }, _) => (false, f64::NEG_INFINITY),
        (_, SolveStatus::Feasible) => (true, sol.slack_margin.unwrap_or(0.0)),
        (_, SolveStatus::Infeasible) => (false, sol.slack_margin.unwrap_or(f64::NEG_INFINITY)),
        (_, _) => (false, f64::NEG_INFINITY),
    };
    Ok(Eval {
        status: sol.status,
        score,
        feasible,
        built: feasible.then_some(built),
        x: feasible.then(|| sol.x.clone()),
    })
}

fn controller_from(
    cond: &SearchCondition,
    built: &BuiltLmi,
    x: &[f64],
    data: &[(ModeDataset, DisturbancePrior)],
    opts: &SynthOptions,
) -> SynthResult<SwitchedController> {
    let kind = match cond {
        SearchCondition::C3 => ControllerKind::MinSwitchDt,
        _ => ControllerKind::MinSwitchCt,
    };
    let perf = match cond {
        SearchCondition::Hinf { perf } => Some(perf.clone()),
        _ => None,
    };
    let (p_list, k_list, params) = extract_controller(built, x, kind, perf.as_ref())?;
    let bound = params.rho;
    let cert = solver_certificate(&built.problem, x, built.kind, built.delta, bound);
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

/// Line-search over the coupling scalars; returns the best certified
/// controller (maximal slack, or minimal achieved level for the
/// performance condition) together with the per-point search log.
pub fn synth_linesearch(
    data: &[(ModeDataset, DisturbancePrior)],
    structure: SearchStructure,
    grid: &GridSpec,
    cond: &SearchCondition,
    opts: &SynthOptions,
) -> SynthResult<(SwitchedController, Vec<SearchRecord>)> {
    let n_modes = data.len();
    let values = grid.values();
    let mut records = Vec::new();

    type Best = Option<(f64, Vec<f64>, BuiltLmi, Vec<f64>)>; // score, gammas, built, x
    let mut best: Best = None;
    fn consider(
        best: &mut Best,
        stop_at_first: bool,
        gammas: &[f64],
        ev: Eval,
        records: &mut Vec<SearchRecord>,
    ) -> Option<(BuiltLmi, Vec<f64>)> {
        records.push(SearchRecord {
            gammas: gammas.to_vec(),
            status: ev.status,
            score: ev.score,
        });
        if ev.feasible {
            let better = best.as_ref().map_or(true, |(s, ..)| ev.score > *s);
            if better {
                *best = Some((ev.score, gammas.to_vec(), ev.built.unwrap(), ev.x.unwrap()));
            }
            if stop_at_first {
                let (_, _, b, x) = best.as_ref().unwrap();
                return Some((b.clone(), x.clone()));
            }
        }
        None
    }

    match structure {
        SearchStructure::Uniform => {
            for &g in &values {
                let gammas = vec![g; n_modes];
                let ev = eval_point(data, cond, &gammas, opts)?;
                if let Some((b, x)) = consider(&mut best, opts.stop_at_first, &gammas, ev, &mut records)
                {
                    if let Ok(ctrl) = controller_from(cond, &b, &x, data, opts) {
                        return Ok((ctrl, records));
                    }
                }
            }
        }
        SearchStructure::PerMode => {
            // multi-start cyclic coordinate ascent on the score
            let pts = values.len();
            let starts: Vec<usize> = {
                let mut s = vec![pts / 2, pts / 5, (4 * pts) / 5];
                s.dedup();
                s
            };
            let mut memo: std::collections::HashMap<Vec<usize>, (SolveStatus, f64, bool)> =
                std::collections::HashMap::new();
            'outer: for &s0 in &starts {
                let mut idx = vec![s0.min(pts - 1); n_modes];
                for _sweep in 0..3 {
                    let mut improved = false;
                    for coord in 0..n_modes {
                        let mut best_here: Option<(f64, usize)> = None;
                        for cand in 0..pts {
                            let mut trial = idx.clone();
                            trial[coord] = cand;
                            let gammas: Vec<f64> =
                                trial.iter().map(|&k| values[k]).collect();
                            let key = trial.clone();
                            let (status, score, feasible) = match memo.get(&key) {
                                Some(&v) => v,
                                None => {
                                    let ev = eval_point(data, cond, &gammas, opts)?;
                                    let tup = (ev.status, ev.score, ev.feasible);
                                    memo.insert(key, tup);
                                    if let Some((b, x)) = consider(
                                        &mut best,
                                        opts.stop_at_first,
                                        &gammas,
                                        ev,
                                        &mut records,
                                    ) {
                                        if let Ok(ctrl) =
                                            controller_from(cond, &b, &x, data, opts)
                                        {
                                            return Ok((ctrl, records));
                                        }
                                    }
                                    tup
                                }
                            };
                            let _ = status;
                            if best_here.map_or(true, |(s, _)| score > s) {
                                best_here = Some((score, cand));
                            }
                            let _ = feasible;
                        }
                        if let Some((_, cand)) = best_here {
                            if idx[coord] != cand {
                                idx[coord] = cand;
                                improved = true;
                            }
                        }
                    }
                    if !improved {
                        continue 'outer;
                    }
                }
            }
        }
    }

    if let Some((_, _, built, x)) = best {
        let ctrl = controller_from(cond, &built, &x, data, opts)?;
        return Ok((ctrl, records));
    }
    Err(SynthError::NoController(format!(
        "{} infeasible over the whole grid ({} points evaluated)",
        cond.name(),
        records.len()
    )))
}
