//! Analytic gradients against central finite differences (step 1e-3).

mod common;

use bvd::model::{ModelConfig, Variant};

fn run(check: common::Check) {
    match check {
        Ok(msg) => eprintln!("{msg}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn l1_gradient() {
    run(common::check_l1_grad());
}

#[test]
fn gradient_l1_gradient() {
    run(common::check_gradient_l1_grad());
}

#[test]
fn ssim_loss_gradient() {
    run(common::check_ssim_grad());
}

#[test]
fn temporal_loss_gradient_for_both_frames() {
    run(common::check_temporal_grad());
}

#[test]
fn toy_model_parameter_gradients() {
    run(common::check_model_grad(&ModelConfig::toy(), 10));
}

#[test]
fn toy_model_gradients_for_other_variants() {
    for variant in [Variant::Enc3dDec3d, Variant::Enc2dDec2d] {
        let cfg = ModelConfig {
            variant,
            use_recurrence_stream: false,
            ..ModelConfig::toy()
        };
        run(common::check_model_grad(&cfg, 11));
    }
}
