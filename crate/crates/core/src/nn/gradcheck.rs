//! Central-difference gradient verification for double-precision networks.
//!
//! The probe loss is `sum(output * c)` for a fixed random `c`. For a fixed
//! ReLU activation pattern the network output is linear in any single
//! parameter, so a central difference is exact up to rounding; probes whose
//! `+h`/`-h` evaluations change the activation pattern straddle a kink and
//! are counted separately instead of compared.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConvSpec, Network, NetworkSpec};
use crate::error::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-5;
pub const MAX_PARAMS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradcheckReport {
    pub nets: usize,
    pub params_checked: usize,
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE && self.params_checked > 0
    }

    fn merge(&mut self, other: GradcheckReport) {
        self.nets += other.nets;
        self.params_checked += other.params_checked;
        self.kinks_skipped += other.kinks_skipped;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// A random architecture with at most [`MAX_PARAMS`] parameters.
pub fn random_small_spec(rng: &mut impl Rng) -> NetworkSpec {
    loop {
        let c = rng.gen_range(1..=3);
        let side = rng.gen_range(5..=9);
        let n_convs = rng.gen_range(0..=2);
        let mut convs = Vec::new();
        for _ in 0..n_convs {
            convs.push(ConvSpec::new(
                rng.gen_range(1..=4),
                rng.gen_range(1..=3),
                rng.gen_range(1..=2),
                rng.gen_range(0..=1),
            ));
        }
        let mut spec = NetworkSpec { input: [c, side, side], convs, fc: vec![1], output: 4 };
        let Ok(flat) = spec.flatten_width() else { continue };
        spec.fc = vec![flat];
        for _ in 0..rng.gen_range(0..=2) {
            spec.fc.push(rng.gen_range(2..=12));
        }
        if let Ok(net) = Network::<f64>::new(spec.clone(), 0) {
            if net.num_params() <= MAX_PARAMS {
                return spec;
            }
        }
    }
}

/// Probe loss and the on/off state of every ReLU unit.
fn evaluate(net: &Network<f64>, x: &[f64], batch: usize, c: &[f64]) -> (f64, Vec<bool>) {
    let cache = net.forward_cached(x, batch).expect("shapes checked by caller");
    let loss = cache.output().iter().zip(c).map(|(a, b)| a * b).sum();
    let mut pattern = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        if layer.relu {
            pattern.extend(cache.acts[l + 1].iter().map(|&v| v > 0.0));
        }
    }
    (loss, pattern)
}

/// Compares `backward` with central differences on every parameter.
pub fn check_network(net: &mut Network<f64>, x: &[f64], batch: usize, c: &[f64]) -> Result<GradcheckReport> {
    let cache = net.forward_cached(x, batch)?;
    let grads = net.backward(&cache, c)?;
    let analytic: Vec<f64> = grads.iter().flat_map(|l| l.weight.iter().chain(&l.bias).copied()).collect();
    let (_, base_pattern) = evaluate(net, x, batch, c);
    let mut report = GradcheckReport { nets: 1, ..Default::default() };
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *net.param_mut(i);
        *net.param_mut(i) = orig + STEP;
        let (plus, plus_pattern) = evaluate(net, x, batch, c);
        *net.param_mut(i) = orig - STEP;
        let (minus, minus_pattern) = evaluate(net, x, batch, c);
        *net.param_mut(i) = orig;
        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            report.kinks_skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * STEP);
        report.params_checked += 1;
        report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
    }
    Ok(report)
}

/// Checks `count` random networks derived from `seed`.
pub fn run(seed: u64, count: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = GradcheckReport::default();
    for _ in 0..count {
        let spec = random_small_spec(&mut rng);
        let mut net = Network::<f64>::new(spec.clone(), rng.gen())?;
        let batch = rng.gen_range(1..=3);
        let x: Vec<f64> = (0..batch * spec.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..batch * spec.output).map(|_| rng.gen_range(-1.0..1.0)).collect();
        total.merge(check_network(&mut net, &x, batch, &c)?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_specs_are_small_and_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = random_small_spec(&mut rng);
            s.validate().unwrap();
            assert!(Network::<f64>::new(s, 0).unwrap().num_params() <= MAX_PARAMS);
        }
    }

    #[test]
    fn single_network_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = random_small_spec(&mut rng);
        let mut net = Network::<f64>::new(spec.clone(), 1).unwrap();
        let x: Vec<f64> = (0..spec.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = check_network(&mut net, &x, 1, &[1.0, -0.5, 0.25, 2.0]).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.params_checked + report.kinks_skipped, net.num_params());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!(relative_error(1e-12, 2e-12) < 1e-6);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
