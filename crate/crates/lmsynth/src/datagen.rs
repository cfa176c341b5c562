//! Synthetic experiment generation from known true systems, with
//! disturbances rescaled so the declared prior provably holds, plus the
//! catalog of worked example plants.

use crate::datamodel::{DisturbancePrior, ModeDataset, TimeKind};
use crate::matops::{self, SymMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// True plant matrices, hidden from synthesis; used only for data generation
/// and test oracles.
#[derive(Debug, Clone)]
pub struct TrueSystem {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    /// process-noise channels, one per mode (empty when unused)
    pub e: Vec<DMatrix<f64>>,
}

impl TrueSystem {
    pub fn n(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn num_modes(&self) -> usize {
        self.a.len()
    }
}

#[derive(Debug, Clone)]
pub enum NoiseSpec {
    /// `Phi11 = eps*I, Phi12 = 0, Phi22 = -I`
    Energy(f64),
    /// instantaneous bound `||w(t)||^2 <= wbar`
    Instant(f64),
    /// process noise `w = E psi` with an energy bound `epshat` on the psi
    /// samples
    Process { eps_hat: f64 },
}

/// Relative interior margin enforced when rescaling generated disturbances.
const NOISE_MARGIN: f64 = 0.05;

/// Sampling policy for the algebraic experiment columns. Standard normal by
/// default; larger state scales emulate samples taken along excited
/// open-loop trajectories.
#[derive(Debug, Clone, Copy)]
pub struct InputPolicy {
    pub state_std: f64,
    pub input_std: f64,
}

impl Default for InputPolicy {
    fn default() -> Self {
        Self {
            state_std: 1.0,
            input_std: 1.0,
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| std * standard_normal(rng))
}

/// Draws `rows x t` noise samples and rescales them so that
/// `eps*I - W W' >= NOISE_MARGIN * eps * I`.
fn draw_bounded_energy(rng: &mut ChaCha8Rng, rows: usize, t: usize, eps: f64) -> DMatrix<f64> {
    if eps == 0.0 || t == 0 {
        return DMatrix::zeros(rows, t);
    }
    let target = (1.0 - NOISE_MARGIN) * eps;
    let g = gaussian_matrix(rng, rows, t, (target / t as f64).sqrt());
    let gram = SymMatrix::symmetrize(&(&g * g.transpose()));
    let (vals, _) = matops::sym_eig(&gram).unwrap();
    let lmax = vals[vals.len() - 1];
    if lmax <= target {
        g
    } else {
        g * (target / lmax).sqrt()
    }
}

/// Per-column ball sampling for instantaneous bounds: `||w_k||^2 <= 0.95*wbar`.
fn draw_bounded_instant(rng: &mut ChaCha8Rng, rows: usize, t: usize, wbar: f64) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(rows, t);
    if wbar == 0.0 {
        return w;
    }
    for k in 0..t {
        let dir = DVector::from_fn(rows, |_, _| standard_normal(rng));
        let norm = dir.norm().max(1e-12);
        let radius = ((1.0 - NOISE_MARGIN) * wbar).sqrt()
            * rng.gen_range(0.0f64..1.0).powf(1.0 / rows as f64);
        w.column_mut(k).copy_from(&(dir * (radius / norm)));
    }
    w
}

/// Generates continuous-time mode datasets: state and input columns i.i.d.
/// standard normal (the data relation is algebraic per sample), derivatives
/// `Xdot = A X + B U + W` exact, `W` strictly inside the declared prior set.
pub fn make_dataset_ct(
    sys: &TrueSystem,
    t_per_mode: &[usize],
    policy: &InputPolicy,
    noise: &NoiseSpec,
    seed: u64,
) -> Vec<(ModeDataset, DisturbancePrior)> {
    make_dataset(sys, t_per_mode, policy, noise, seed, TimeKind::Ct)
}

/// Discrete-time variant: successor states in place of derivatives.
pub fn make_dataset_dt(
    sys: &TrueSystem,
    t_per_mode: &[usize],
    policy: &InputPolicy,
    noise: &NoiseSpec,
    seed: u64,
) -> Vec<(ModeDataset, DisturbancePrior)> {
    make_dataset(sys, t_per_mode, policy, noise, seed, TimeKind::Dt)
}

fn make_dataset(
    sys: &TrueSystem,
    t_per_mode: &[usize],
    policy: &InputPolicy,
    noise: &NoiseSpec,
    seed: u64,
    time_kind: TimeKind,
) -> Vec<(ModeDataset, DisturbancePrior)> {
    assert_eq!(t_per_mode.len(), sys.num_modes());
    let n = sys.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sys.num_modes());
    for (i, &t) in t_per_mode.iter().enumerate() {
        let m = sys.b[i].ncols();
        let x = gaussian_matrix(&mut rng, n, t, policy.state_std);
        let u = gaussian_matrix(&mut rng, m, t, policy.input_std);
        let (w, prior) = match noise {
            NoiseSpec::Energy(eps) => (
                draw_bounded_energy(&mut rng, n, t, *eps),
                DisturbancePrior::energy(*eps, n, t),
            ),
            NoiseSpec::Instant(wbar) => (
                draw_bounded_instant(&mut rng, n, t, *wbar),
                DisturbancePrior::from_instantaneous_bound(*wbar, n, t).unwrap(),
            ),
            NoiseSpec::Process { eps_hat } => {
                let e = &sys.e[i];
                let q = e.ncols();
                let psi = draw_bounded_energy(&mut rng, q, t, *eps_hat);
                let hat = DisturbancePrior::energy(*eps_hat, q, t);
                (e * psi, DisturbancePrior::from_process_noise(&hat, e).unwrap())
            }
        };
        let xdot = &sys.a[i] * &x + &sys.b[i] * &u + &w;
        out.push((
            ModeDataset::new(i + 1, x, xdot, u, time_kind).unwrap(),
            prior,
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Worked example catalog
// ---------------------------------------------------------------------------

/// Markov-jump instance: 3 modes, 3 states, inputs on modes 1 and 3 only,
/// with its generator-defining Metzler matrix.
#[derive(Debug, Clone)]
pub struct MjlsInstance {
    pub sys: TrueSystem,
    pub pi: DMatrix<f64>,
    pub eps: f64,
    pub t: usize,
}

/// 3-mode, 2-state autonomous switched plant with a Hurwitz average.
#[derive(Debug, Clone)]
pub struct Sw2dInstance {
    pub sys: TrueSystem,
    pub t: usize,
}

/// 3-mode, 3-state disturbed switched plant for H-infinity design.
#[derive(Debug, Clone)]
pub struct Sw3dHinfInstance {
    pub sys: TrueSystem,
    pub c: DMatrix<f64>,
    pub eps_hat: f64,
    pub t: usize,
}

/// Constrained LTI plant with unit-cube state constraints and input
/// saturation.
#[derive(Debug, Clone)]
pub struct LtiConstrainedInstance {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub constraints: Vec<DVector<f64>>,
    pub nu: f64,
    pub t: usize,
}

#[derive(Debug, Clone)]
pub struct PaperInstances {
    pub mjls: MjlsInstance,
    pub sw2d: Sw2dInstance,
    pub sw3d_hinf: Sw3dHinfInstance,
    pub lti_constrained: LtiConstrainedInstance,
}

/// The four worked examples with all constants transcribed.
pub fn paper_instances() -> PaperInstances {
    let mjls = MjlsInstance {
        sys: TrueSystem {
            a: vec![
                DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.3, 0.1, 0.5, 0.0, 0.0, 0.4, 0.3]),
                DMatrix::from_row_slice(3, 3, &[0.3, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2, 0.5]),
                DMatrix::from_row_slice(3, 3, &[0.0, 0.1, 0.2, 0.1, 0.5, 0.0, 0.0, 0.1, 0.3]),
            ],
            b: vec![
                DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
                DMatrix::zeros(3, 0),
                DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            ],
            e: vec![],
        },
        pi: DMatrix::from_row_slice(3, 3, &[-3.0, 4.0, 5.0, 3.0, -7.0, 0.0, 0.0, 3.0, -5.0]),
        eps: 10.0,
        t: 20,
    };

    let sw2d = Sw2dInstance {
        sys: TrueSystem {
            a: vec![
                DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, -0.2]),
                DMatrix::from_row_slice(2, 2, &[-10.0, 0.1, 0.1, 0.0]),
                DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.1]),
            ],
            b: vec![DMatrix::zeros(2, 0), DMatrix::zeros(2, 0), DMatrix::zeros(2, 0)],
            e: vec![],
        },
        t: 20,
    };

    let sw3d_hinf = Sw3dHinfInstance {
        sys: TrueSystem {
            a: vec![
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[-1.0, -0.1, 0.1, 0.1, 0.1, 0.1, -0.1, -0.1, 0.1],
                ),
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[0.1, -0.1, 0.1, 0.1, -0.1, 0.0, -0.1, 0.0, 0.1],
                ),
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[0.1, 0.1, 0.1, -0.1, 0.1, -0.1, -0.1, 0.1, -1.0],
                ),
            ],
            b: vec![DMatrix::zeros(3, 0), DMatrix::zeros(3, 0), DMatrix::zeros(3, 0)],
            e: vec![
                DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]),
                DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
                DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            ],
        },
        c: DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 3.0, 1.0])),
        eps_hat: 0.01,
        t: 20,
    };

    let lti_constrained = LtiConstrainedInstance {
        a: DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 0.0, 1.0, -2.0, -1.0, 0.0, 1.0, 0.0]),
        b: DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]),
        e: DMatrix::identity(3, 3),
        constraints: vec![
            DVector::from_row_slice(&[1.0, 0.0, 0.0]),
            DVector::from_row_slice(&[0.0, 1.0, 0.0]),
            DVector::from_row_slice(&[0.0, 0.0, 1.0]),
        ],
        nu: 0.1,
        t: 20,
    };

    PaperInstances {
        mjls,
        sw2d,
        sw3d_hinf,
        lti_constrained,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{build_h, check_rank, RankCheck};

    #[test]
    fn catalog_constants() {
        let cat = paper_instances();
        assert_eq!(cat.mjls.sys.a[0][(0, 0)], 0.5);
        assert_eq!(cat.mjls.sys.b[1].ncols(), 0);
        assert_eq!(cat.sw2d.sys.a[1][(0, 0)], -10.0);
        assert_eq!(cat.sw2d.sys.a[1][(0, 1)], 0.1);
        assert_eq!(cat.lti_constrained.a[(1, 1)], -2.0);
        assert_eq!(cat.lti_constrained.nu, 0.1);
        // Metzler class: nonnegative off-diagonals, zero column sums
        let pi = &cat.mjls.pi;
        for j in 0..3 {
            let mut col = 0.0;
            for i in 0..3 {
                if i != j {
                    assert!(pi[(i, j)] >= 0.0);
                }
                col += pi[(i, j)];
            }
            assert!(col.abs() < 1e-12);
        }
    }

    #[test]
    fn generated_noise_obeys_prior() {
        let cat = paper_instances();
        for seed in 0..5 {
            let data = make_dataset_ct(&cat.sw2d.sys, &[20, 20, 20], &InputPolicy::default(), &NoiseSpec::Energy(10.0), seed);
            for (i, (d, p)) in data.iter().enumerate() {
                let w = &d.xdot_or_xplus - &cat.sw2d.sys.a[i] * &d.x;
                let margin = p.margin_at(&w).unwrap();
                assert!(
                    margin >= NOISE_MARGIN * 10.0 - 1e-9,
                    "mode {i} margin {margin}"
                );
                let c = build_h(d, p).unwrap();
                assert!(c.membership_margin(&cat.sw2d.sys.a[i], &cat.sw2d.sys.b[i]).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn noiseless_data_is_exact() {
        let sys = TrueSystem {
            a: vec![DMatrix::from_row_slice(1, 1, &[0.5])],
            b: vec![DMatrix::zeros(1, 0)],
            e: vec![],
        };
        let data = make_dataset_dt(&sys, &[5], &InputPolicy::default(), &NoiseSpec::Energy(0.0), 7);
        let (d, p) = &data[0];
        assert!((&d.xdot_or_xplus - 0.5 * &d.x).norm() == 0.0);
        let c = build_h(d, p).unwrap();
        let margin = c
            .membership_margin(&sys.a[0], &DMatrix::zeros(1, 0))
            .unwrap();
        assert!(margin.abs() < 1e-12);
    }

    #[test]
    fn rank_ok_over_seeds() {
        let cat = paper_instances();
        for seed in 0..100 {
            let data =
                make_dataset_ct(&cat.mjls.sys, &[20, 20, 20], &InputPolicy::default(), &NoiseSpec::Energy(10.0), seed);
            for (d, _) in &data {
                assert_eq!(check_rank(d), RankCheck::Ok, "seed {seed}");
            }
        }
    }

    #[test]
    fn determinism_bit_identical() {
        let cat = paper_instances();
        let a = make_dataset_ct(&cat.sw2d.sys, &[20, 20, 20], &InputPolicy::default(), &NoiseSpec::Energy(1.0), 42);
        let b = make_dataset_ct(&cat.sw2d.sys, &[20, 20, 20], &InputPolicy::default(), &NoiseSpec::Energy(1.0), 42);
        for ((da, _), (db, _)) in a.iter().zip(&b) {
            assert_eq!(da.x, db.x);
            assert_eq!(da.xdot_or_xplus, db.xdot_or_xplus);
        }
        let fa = crate::datamodel::DatasetFile::from_modes(&a);
        let fb = crate::datamodel::DatasetFile::from_modes(&b);
        assert_eq!(
            serde_json::to_string(&fa).unwrap(),
            serde_json::to_string(&fb).unwrap()
        );
    }

    #[test]
    fn process_noise_margin() {
        let cat = paper_instances();
        let data = make_dataset_ct(
            &cat.sw3d_hinf.sys,
            &[20, 20, 20],
            &InputPolicy::default(),
            &NoiseSpec::Process { eps_hat: 0.01 },
            3,
        );
        for (i, (d, p)) in data.iter().enumerate() {
            let w = &d.xdot_or_xplus - &cat.sw3d_hinf.sys.a[i] * &d.x;
            // w = E psi lies in the mapped prior set
            assert!(p.margin_at(&w).unwrap() >= -1e-12, "mode {i}");
            let c = build_h(d, p).unwrap();
            assert!(
                c.membership_margin(&cat.sw3d_hinf.sys.a[i], &cat.sw3d_hinf.sys.b[i])
                    .unwrap()
                    >= -1e-12
            );
        }
    }
}
