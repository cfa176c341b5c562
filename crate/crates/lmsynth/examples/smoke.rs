use lmsynth::datagen::{self, NoiseSpec, TrueSystem};
use lmsynth::lmi_builder::MetzlerSpec;
use lmsynth::synthesis::{self, spectral_abscissa, FixedCondition, SynthOptions};
use nalgebra::DMatrix;
use std::time::Instant;

fn main() {
    // Example: N = 1, stabilizable pair, noiseless rich data
    let sys = TrueSystem {
        a: vec![DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, -0.3])],
        b: vec![DMatrix::from_row_slice(2, 1, &[0.0, 1.0])],
        e: vec![],
    };
    let data = datagen::make_dataset_ct(&sys, &[10], &NoiseSpec::Energy(0.0), 1);
    let t0 = Instant::now();
    let opts = SynthOptions::default();
    let r = synthesis::synth_fixed(
        &data,
        &FixedCondition::C1 { pi: MetzlerSpec::Fixed(DMatrix::zeros(1, 1)) },
        &opts,
    );
    match &r {
        Ok(c) => {
            let acl = &sys.a[0] + &sys.b[0] * &c.k[0];
            println!("LTI OK in {:?}: abscissa = {:.4}, sample margin = {:.3e}",
                t0.elapsed(), spectral_abscissa(&acl), c.certificate.min_sample_margin);
        }
        Err(e) => println!("LTI FAILED: {e}"),
    }

    // unstable uncontrollable scalar -> NoController
    let bad = TrueSystem {
        a: vec![DMatrix::from_row_slice(1, 1, &[1.0])],
        b: vec![DMatrix::zeros(1, 0)],
        e: vec![],
    };
    let data_bad = datagen::make_dataset_ct(&bad, &[5], &NoiseSpec::Energy(0.0), 2);
    let r2 = synthesis::synth_fixed(
        &data_bad,
        &FixedCondition::C1 { pi: MetzlerSpec::Fixed(DMatrix::zeros(1, 1)) },
        &SynthOptions::default(),
    );
    println!("unstable scalar: {:?}", r2.as_ref().err().map(|e| e.to_string()));

    // MJLS instance
    let cat = datagen::paper_instances();
    let t0 = Instant::now();
    let data = datagen::make_dataset_ct(&cat.mjls.sys, &[20, 20, 20], &NoiseSpec::Energy(cat.mjls.eps), 7);
    let r3 = synthesis::synth_fixed(
        &data,
        &FixedCondition::C1 { pi: MetzlerSpec::Fixed(cat.mjls.pi.clone()) },
        &SynthOptions::default(),
    );
    match &r3 {
        Ok(c) => {
            println!("MJLS OK in {:?}: K1 = {:?}, K2 rows = {}, K3 = {:?}, sample margin = {:.3e}, true?",
                t0.elapsed(), c.k[0].shape(), c.k[1].nrows(), c.k[2].shape(), c.certificate.min_sample_margin);
            let cert = synthesis::certify_controller(c, &data, 50, 3, Some(&cat.mjls.sys)).unwrap();
            println!("  true-system margin = {:?}", cert.true_system_margin);
        }
        Err(e) => println!("MJLS FAILED: {e}"),
    }
}
