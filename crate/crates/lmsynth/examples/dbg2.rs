use lmsynth::conic::{self, SolverOptions};
use lmsynth::datagen::{self, InputPolicy, NoiseSpec};
use lmsynth::lmi_builder::{build_c1, BuildOptions, MetzlerSpec};

fn main() {
    let cat = datagen::paper_instances();
    for std in [4.0, 8.0, 16.0] {
        let pol = InputPolicy { state_std: std, input_std: 1.0 };
        let data = datagen::make_dataset_ct(&cat.mjls.sys, &[20, 20, 20], &pol, &NoiseSpec::Energy(10.0), 0);
        let built = build_c1(&data, &MetzlerSpec::Fixed(cat.mjls.pi.clone()), &BuildOptions::default()).unwrap();
        let o = SolverOptions::default();
        let sol = conic::solve(&built.problem, &o).unwrap();
        let rep = conic::certify(&built.problem, &sol.x, 1e-6);
        println!("std={std}: {:?} slack={:+.3e} pr={:.1e} dr={:.1e} eq={:.1e} minmargin={:+.2e} it={}",
            sol.status, sol.slack_margin.unwrap_or(f64::NAN), sol.primal_residual, sol.dual_residual,
            rep.max_eq_residual, rep.min_block_margin(), sol.iterations);
        // which blocks are worst?
        let mut worst: Vec<_> = rep.block_margins.iter().collect();
        worst.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        for (nm, m) in worst.iter().take(3) { println!("   {nm}: {m:+.2e}"); }
    }
}
