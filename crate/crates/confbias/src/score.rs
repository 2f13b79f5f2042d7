//! Noise-conditional score fields.
//!
//! A [`ScoreModel`] wraps a dense network into a score field over
//! conformations: coordinates are flattened, the noise scale enters as
//! `ln(sigma)`, and the raw network output is divided by `sigma` so the
//! network itself learns an O(1) quantity across levels. Analytic oracles
//! implement the same [`ScoreField`] trait, which is what the samplers and
//! the bias estimator operate on.

use crate::error::{Error, Result};
use crate::geom::{self, Conformation};
use crate::nn::{mlp_init, Activation, Mlp};
use crate::schedule::NoiseSchedule;

/// Anything that maps `(conformation, sigma)` to a score over coordinates.
pub trait ScoreField {
    fn n_atoms(&self) -> usize;
    fn schedule(&self) -> &NoiseSchedule;
    /// True when the field lives in the center-of-mass-free subspace; the
    /// samplers then keep chains there by projecting noise and init draws.
    fn com_free(&self) -> bool;
    fn score(&self, c: &[[f64; 3]], sigma: f64) -> Result<Conformation>;
}

/// Default hidden layout for score networks.
pub const DEFAULT_HIDDEN: [usize; 3] = [128, 128, 128];

/// A trained (or trainable) score network over `n_atoms` conformations.
#[derive(Debug, Clone)]
pub struct ScoreModel {
    pub net: Mlp,
    pub n_atoms: usize,
    pub schedule: NoiseSchedule,
    /// Subtract the centroid from inputs and project outputs to zero mean per
    /// axis. On for molecular models; off for low-dimensional toys where the
    /// projection would annihilate the field (a single atom most of all).
    pub center_input: bool,
}

impl ScoreModel {
    /// Wraps an existing network, validating its dimensions against
    /// `3 * n_atoms (+1 for the noise feature)`.
    pub fn new(
        net: Mlp,
        n_atoms: usize,
        schedule: NoiseSchedule,
        center_input: bool,
    ) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::Config("n_atoms must be at least 1".into()));
        }
        if net.input_dim() != 3 * n_atoms + 1 {
            return Err(Error::Shape(format!(
                "network input dim {} does not match 3 * {n_atoms} + 1",
                net.input_dim()
            )));
        }
        if net.output_dim() != 3 * n_atoms {
            return Err(Error::Shape(format!(
                "network output dim {} does not match 3 * {n_atoms}",
                net.output_dim()
            )));
        }
        Ok(ScoreModel {
            net,
            n_atoms,
            schedule,
            center_input,
        })
    }

    /// Fresh model with seeded hidden layers and a zero final layer, so the
    /// untrained score is exactly zero everywhere.
    pub fn init(
        n_atoms: usize,
        schedule: NoiseSchedule,
        hidden: &[usize],
        seed: u64,
        center_input: bool,
    ) -> Result<Self> {
        let mut layout = vec![3 * n_atoms + 1];
        layout.extend_from_slice(hidden);
        layout.push(3 * n_atoms);
        let net = mlp_init(&layout, Activation::Silu, seed)?;
        ScoreModel::new(net, n_atoms, schedule, center_input)
    }

    /// Network input features for a conformation at noise scale `sigma`.
    ///
    /// Centering subtracts the centroid via differences from atom 0, which
    /// cancels exact translations bitwise before any rounding can diverge.
    pub fn features(&self, c: &[[f64; 3]], sigma: f64) -> Result<Vec<f64>> {
        if c.len() != self.n_atoms {
            return Err(Error::Shape(format!(
                "conformation has {} atoms, model expects {}",
                c.len(),
                self.n_atoms
            )));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!(
                "noise scale must be positive and finite, got {sigma}"
            )));
        }
        let mut x = Vec::with_capacity(3 * self.n_atoms + 1);
        if self.center_input {
            let n = c.len() as f64;
            let mut rel: Vec<[f64; 3]> = c.iter().map(|p| geom::sub(*p, c[0])).collect();
            let mut mean = [0.0; 3];
            for p in &rel {
                for k in 0..3 {
                    mean[k] += p[k];
                }
            }
            for k in 0..3 {
                mean[k] /= n;
            }
            for p in rel.iter_mut() {
                for k in 0..3 {
                    x.push(p[k] - mean[k]);
                }
            }
        } else {
            for p in c {
                x.extend_from_slice(p);
            }
        }
        x.push(sigma.ln());
        Ok(x)
    }

    /// Projects a flat score to zero mean per axis when the model is CoM-free.
    pub fn project_output(&self, flat: &mut [f64]) {
        if !self.center_input {
            return;
        }
        let n = flat.len() / 3;
        for k in 0..3 {
            let mut mean = 0.0;
            for a in 0..n {
                mean += flat[3 * a + k];
            }
            mean /= n as f64;
            for a in 0..n {
                flat[3 * a + k] -= mean;
            }
        }
    }
}

impl ScoreField for ScoreModel {
    fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn com_free(&self) -> bool {
        self.center_input
    }

    fn score(&self, c: &[[f64; 3]], sigma: f64) -> Result<Conformation> {
        let x = self.features(c, sigma)?;
        let mut out = self.net.forward(&x)?;
        for v in out.iter_mut() {
            *v /= sigma;
        }
        self.project_output(&mut out);
        geom::unflatten(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::make_schedule;

    fn toy_model(center: bool) -> ScoreModel {
        let sched = make_schedule(0.79, 0.02, 6).unwrap();
        ScoreModel::init(4, sched, &[16, 16], 5, center).unwrap()
    }

    #[test]
    fn untrained_model_scores_zero() {
        let m = toy_model(true);
        let c = vec![
            [0.1, 0.4, -0.2],
            [1.3, -0.5, 0.9],
            [-0.7, 0.2, 0.3],
            [0.5, 0.5, -1.0],
        ];
        let s = m.score(&c, 0.5).unwrap();
        assert!(s.iter().all(|p| p.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn dimension_validation() {
        let sched = make_schedule(0.79, 0.02, 6).unwrap();
        let net = mlp_init(&[12, 8, 12], Activation::Silu, 0).unwrap();
        // 4 atoms wants input 13, output 12.
        assert!(matches!(
            ScoreModel::new(net, 4, sched.clone(), true),
            Err(Error::Shape(_))
        ));
        let m = toy_model(true);
        let c3 = vec![[0.0; 3]; 3];
        assert!(matches!(m.score(&c3, 0.5), Err(Error::Shape(_))));
        let c4 = vec![[0.0; 3]; 4];
        assert!(matches!(m.score(&c4, 0.0), Err(Error::Domain(_))));
        assert!(matches!(m.score(&c4, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn output_is_com_projected() {
        let mut m = toy_model(true);
        m.net.randomize_params(77);
        let c = vec![
            [0.3, 1.4, -0.2],
            [2.3, -0.5, 0.9],
            [-1.7, 0.2, 0.3],
            [0.5, 0.8, -1.2],
        ];
        let s = m.score(&c, 0.19).unwrap();
        for k in 0..3 {
            let mean: f64 = s.iter().map(|p| p[k]).sum::<f64>() / s.len() as f64;
            assert!(mean.abs() < 1e-12, "axis {k} mean {mean}");
        }
    }

    #[test]
    fn translation_invariance_is_bitwise_for_exact_shifts() {
        let mut m = toy_model(true);
        m.net.randomize_params(99);
        // Coordinates on a 2^-16 lattice; adding these shifts is exact.
        let q = |v: f64| (v * 65536.0).round() / 65536.0;
        let c: Conformation = vec![
            [q(0.31), q(1.41), q(-0.27)],
            [q(2.35), q(-0.53), q(0.94)],
            [q(-1.71), q(0.21), q(0.33)],
            [q(0.52), q(0.83), q(-1.22)],
        ];
        let t = [10.0, -5.5, 2.25];
        let shifted: Conformation = c.iter().map(|p| crate::geom::add(*p, t)).collect();
        let a = m.score(&c, 0.0871).unwrap();
        let b = m.score(&shifted, 0.0871).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            for k in 0..3 {
                assert_eq!(pa[k].to_bits(), pb[k].to_bits());
            }
        }
    }

    #[test]
    fn uncentered_model_skips_projection() {
        let sched = make_schedule(1.0, 0.3, 6).unwrap();
        let mut m = ScoreModel::init(1, sched, &[8], 3, false).unwrap();
        m.net.randomize_params(123);
        let s = m.score(&[[0.4, -0.2, 0.9]], 0.5).unwrap();
        // A single atom with projection would be identically zero.
        assert!(s[0].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn score_scales_inverse_sigma() {
        // With center_input off and identical features except ln(sigma), the
        // 1/sigma parametrization is visible directly on a constant net.
        let sched = make_schedule(1.0, 0.3, 6).unwrap();
        let mut m = ScoreModel::init(1, sched, &[4], 0, false).unwrap();
        // Zero out everything but final bias: net output constant 2.0.
        let last = m.net.layers.len() - 1;
        for l in 0..last {
            for w in m.net.layers[l].weights.iter_mut() {
                *w = 0.0;
            }
        }
        m.net.layers[last].bias = vec![2.0, 2.0, 2.0];
        let c = [[0.0, 0.0, 0.0]];
        let s1 = m.score(&c, 0.5).unwrap();
        let s2 = m.score(&c, 1.0).unwrap();
        assert!((s1[0][0] - 4.0).abs() < 1e-15);
        assert!((s2[0][0] - 2.0).abs() < 1e-15);
    }
}
