use std::f64::consts::PI;

use ctns::grid::{RectDomain, ScalarField, SystemState, VectorField};
use ctns::sensitivity::SensitivitySpec;
use ctns::steppers::{run, StepConfig, Stepper};

fn final_state(dt: f64) -> SystemState {
    let d = RectDomain::build_grid(1.0, 1.0, 24, 24).unwrap();
    let n0 = ScalarField::from_fn(&d, |x| 1.0 + 0.2 * (PI * x[0]).cos() * (PI * x[1]).cos());
    let c0 = ScalarField::from_fn(&d, |x| 0.4 + 0.2 * (2.0 * PI * x[1]).cos());
    let u0 = VectorField::from_stream_function(&d, |x, y| 0.05 * (PI * x).sin().powi(2) * (PI * y).sin().powi(2)).unwrap();
    let mut s = SystemState::new(&n0, &c0, u0).unwrap();
    let sens = SensitivitySpec::rotation(&d, 0.5, PI / 3.0).unwrap();
    let phi = ScalarField::from_fn(&d, |x| x[1]);
    let mut stepper = Stepper::new(&sens, &phi, StepConfig::new(dt)).unwrap();
    run(&mut stepper, &mut s, 0.2, usize::MAX, |_| Ok(())).unwrap();
    s
}

fn gap(a: &SystemState, b: &SystemState) -> f64 {
    let n = a.n.to_field().lin_comb(1.0, &b.n.to_field(), -1.0).max_abs();
    let c = a.c.to_field().lin_comb(1.0, &b.c.to_field(), -1.0).max_abs();
    n.max(c)
}

#[test]
fn lie_splitting_is_first_order() {
    let states: Vec<_> = [4e-3, 2e-3, 1e-3, 5e-4].iter().map(|&dt| final_state(dt)).collect();
    let diffs: Vec<f64> = states.windows(2).map(|w| gap(&w[0], &w[1])).collect();
    for w in diffs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}, diffs {diffs:?}");
    }
}
