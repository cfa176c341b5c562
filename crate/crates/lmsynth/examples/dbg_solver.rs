use lmsynth::datagen::{self, InputPolicy, NoiseSpec, TrueSystem};
use lmsynth::lmi_builder::MetzlerSpec;
use lmsynth::synthesis::{self, spectral_abscissa, FixedCondition, SynthOptions};
use nalgebra::DMatrix;
use std::time::Instant;

fn main() {
    // LTI noiseless
    let sys = TrueSystem {
        a: vec![DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, -0.3])],
        b: vec![DMatrix::from_row_slice(2, 1, &[0.0, 1.0])],
        e: vec![],
    };
    let data = datagen::make_dataset_ct(&sys, &[10], &InputPolicy::default(), &NoiseSpec::Energy(0.0), 1);
    let t0 = Instant::now();
    match synthesis::synth_fixed(&data, &FixedCondition::C1 { pi: MetzlerSpec::Fixed(DMatrix::zeros(1, 1)) }, &SynthOptions::default()) {
        Ok(c) => {
            let acl = &sys.a[0] + &sys.b[0] * &c.k[0];
            println!("LTI noiseless OK {:?}: abscissa={:.3} sample_margin={:.2e}", t0.elapsed(), spectral_abscissa(&acl), c.certificate.min_sample_margin);
        }
        Err(e) => println!("LTI FAILED: {e}"),
    }

    // MJLS with excited-state policy, 10 seeds
    let cat = datagen::paper_instances();
    let pol = InputPolicy { state_std: 8.0, input_std: 1.0 };
    let mut ok = 0;
    let t0 = Instant::now();
    for seed in 0..10 {
        let data = datagen::make_dataset_ct(&cat.mjls.sys, &[20, 20, 20], &pol, &NoiseSpec::Energy(10.0), seed);
        match synthesis::synth_fixed(&data, &FixedCondition::C1 { pi: MetzlerSpec::Fixed(cat.mjls.pi.clone()) }, &SynthOptions::default()) {
            Ok(c) => { ok += 1; if seed == 0 { println!("  seed0 margin {:.2e} K1={:?}", c.certificate.min_sample_margin, c.k[0].shape()); } }
            Err(e) => println!("  seed {seed} failed: {e}"),
        }
    }
    println!("MJLS state_std=8: {ok}/10 in {:?}", t0.elapsed());
}
