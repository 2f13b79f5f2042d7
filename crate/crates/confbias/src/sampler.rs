//! Annealed Langevin sampling and its noise-free restriction.
//!
//! Levels are visited from the largest noise scale to the smallest. At level
//! `t` the step size is `alpha_t = a * sigma_t^2 / sigma_L^2` and each update
//! is `C <- C + alpha_t * s(C, sigma_t) + sqrt(2 alpha_t) * z`. The
//! deterministic reverse used by the bias estimator is the same loop with the
//! noise forced to zero, starting from an intermediate level.

use crate::error::{Error, Result};
use crate::geom::{self, Conformation};
use crate::score::ScoreField;
use crate::seed::{derive_seed, rng_from};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    /// Base step coefficient `a` (coordinate units squared).
    pub step_a: f64,
    /// Langevin updates per level.
    pub t_steps: usize,
    pub seed: u64,
    /// Std of the Gaussian prior init; defaults to `sigma_1`.
    pub init_scale: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            step_a: 1e-5,
            t_steps: 50,
            seed: 0,
            init_scale: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_a > 0.0) || !self.step_a.is_finite() {
            return Err(Error::Config(format!(
                "step coefficient must be positive, got {}",
                self.step_a
            )));
        }
        if self.t_steps == 0 {
            return Err(Error::Config("need at least one update per level".into()));
        }
        if let Some(s) = self.init_scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Config(format!(
                    "init scale must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Source of the per-update noise `z`; injectable so the deterministic
/// reverse is literally the Langevin loop with zeros.
pub trait NoiseSource {
    fn draw(&mut self, n_atoms: usize, com_free: bool) -> Conformation;
}

/// Standard normal per coordinate, CoM-projected for CoM-free fields.
pub struct GaussianNoise(pub ChaCha8Rng);

impl NoiseSource for GaussianNoise {
    fn draw(&mut self, n_atoms: usize, com_free: bool) -> Conformation {
        let mut z: Conformation = (0..n_atoms)
            .map(|_| {
                [
                    self.0.sample(StandardNormal),
                    self.0.sample(StandardNormal),
                    self.0.sample(StandardNormal),
                ]
            })
            .collect();
        if com_free {
            geom::project_com(&mut z);
        }
        z
    }
}

/// Always zero; turns the loop into pure gradient steps.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn draw(&mut self, n_atoms: usize, _com_free: bool) -> Conformation {
        vec![[0.0; 3]; n_atoms]
    }
}

/// Walks levels `t_start..=L`, applying `updates_per_level` score steps with
/// noise from `noise` at each level. Fails with a sampling error naming the
/// level and update if coordinates stop being finite.
pub fn run_level_loop<S: ScoreField + ?Sized>(
    field: &S,
    start: Conformation,
    t_start: usize,
    updates_per_level: usize,
    a: f64,
    noise: &mut dyn NoiseSource,
) -> Result<Conformation> {
    if start.len() != field.n_atoms() {
        return Err(Error::Shape(format!(
            "start conformation has {} atoms, field expects {}",
            start.len(),
            field.n_atoms()
        )));
    }
    let levels = field.schedule().levels();
    if t_start == 0 || t_start > levels {
        return Err(Error::Index(format!(
            "start level {t_start} out of range 1..={levels}"
        )));
    }
    let com_free = field.com_free();
    let mut c = start;
    for t in t_start..=levels {
        let sigma = field.schedule().sigma(t)?;
        let alpha = field.schedule().step_size(t, a)?;
        let noise_scale = (2.0 * alpha).sqrt();
        for i in 1..=updates_per_level {
            let s = field.score(&c, sigma)?;
            let z = noise.draw(field.n_atoms(), com_free);
            for ((p, sv), zv) in c.iter_mut().zip(&s).zip(&z) {
                for k in 0..3 {
                    p[k] += alpha * sv[k] + noise_scale * zv[k];
                }
            }
            if !geom::all_finite(&c) {
                return Err(Error::Sampling {
                    level: t,
                    step: i,
                    msg: "coordinates became non-finite".into(),
                });
            }
        }
    }
    Ok(c)
}

/// Draws one conformation by annealed Langevin dynamics: Gaussian prior init
/// at `init_scale`, then the full level loop from `t = 1`.
pub fn langevin_sample<S: ScoreField + ?Sized>(
    field: &S,
    cfg: &SamplerConfig,
) -> Result<Conformation> {
    cfg.validate()?;
    let mut rng = rng_from(cfg.seed);
    let scale = cfg.init_scale.unwrap_or_else(|| field.schedule().sigma_max());
    let mut init: Conformation = (0..field.n_atoms())
        .map(|_| {
            [
                scale * rng.sample::<f64, _>(StandardNormal),
                scale * rng.sample::<f64, _>(StandardNormal),
                scale * rng.sample::<f64, _>(StandardNormal),
            ]
        })
        .collect();
    if field.com_free() {
        geom::project_com(&mut init);
    }
    let mut noise = GaussianNoise(rng);
    run_level_loop(field, init, 1, cfg.t_steps, cfg.step_a, &mut noise)
}

/// Draws `count` independent chains; chain `i` runs on the child seed derived
/// from `(cfg.seed, i)`, so the ensemble is independent of evaluation order.
pub fn sample_ensemble<S: ScoreField + ?Sized>(
    field: &S,
    cfg: &SamplerConfig,
    count: usize,
) -> Result<Vec<Conformation>> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::Config("need at least one chain".into()));
    }
    (0..count)
        .map(|i| {
            let chain = SamplerConfig {
                seed: derive_seed(cfg.seed, &[i as u64]),
                ..cfg.clone()
            };
            langevin_sample(field, &chain)
        })
        .collect()
}

/// Noise-free reverse: from `(c_start, t_start)` walks down through the
/// smallest scale, applying `det_steps` score updates per level.
pub fn deterministic_reverse<S: ScoreField + ?Sized>(
    field: &S,
    c_start: &[[f64; 3]],
    t_start: usize,
    det_steps: usize,
    a: f64,
) -> Result<Conformation> {
    if det_steps == 0 {
        return Err(Error::Config("need at least one update per level".into()));
    }
    run_level_loop(
        field,
        c_start.to_vec(),
        t_start,
        det_steps,
        a,
        &mut ZeroNoise,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_schedule, NoiseSchedule};
    use crate::score::ScoreModel;
    use crate::synth::{AnalyticScore, GaussianMixture};

    fn point_mass_field(c_star: &[f64], levels: usize) -> AnalyticScore {
        let sched = make_schedule(0.79, 0.02, levels).unwrap();
        AnalyticScore::new(
            GaussianMixture::point_mass(c_star.to_vec()),
            sched,
            c_star.len() / 3,
        )
        .unwrap()
    }

    #[test]
    fn point_mass_single_update_lands_exactly() {
        // alpha_t = sigma_t^2 when a = sigma_L^2; the update cancels the
        // displacement in one step at any level.
        let c_star = [0.4, -0.2, 1.1, 0.0, 0.9, -0.7];
        let field = point_mass_field(&c_star, 6);
        let a = 0.02 * 0.02;
        for t in 1..=6 {
            let start = vec![[5.0, -3.0, 2.0], [1.0, 0.5, -2.0]];
            let out = deterministic_reverse(&field, &start, t, 1, a).unwrap();
            for (i, p) in out.iter().enumerate() {
                for k in 0..3 {
                    let e = (p[k] - c_star[3 * i + k]).abs();
                    assert!(e < 1e-9, "t={t} atom {i} axis {k}: err {e}");
                }
            }
        }
    }

    #[test]
    fn point_mass_contraction_factor() {
        let c_star = [0.0, 0.0, 0.0];
        let field = point_mass_field(&c_star, 4);
        let sigma_l = field.schedule().sigma_min();
        let a = 0.3 * sigma_l * sigma_l;
        let det_steps = 2;
        let t_start = 2;
        let delta = [0.8, -0.4, 0.2];
        let start = vec![delta];
        let out = deterministic_reverse(&field, &start, t_start, det_steps, a).unwrap();
        let updates = (4 - t_start + 1) * det_steps;
        let factor = (1.0 - 0.3_f64).powi(updates as i32);
        for k in 0..3 {
            let expect = delta[k] * factor;
            assert!(
                (out[0][k] - expect).abs() < 1e-9 * expect.abs().max(1e-3),
                "axis {k}: {} vs {expect}",
                out[0][k]
            );
        }
    }

    #[test]
    fn single_level_zero_model_is_init_plus_noise() {
        let sched = NoiseSchedule::from_sigmas(vec![0.5]).unwrap();
        let model = ScoreModel::init(2, sched, &[8], 0, false).unwrap();
        let cfg = SamplerConfig {
            step_a: 0.01,
            t_steps: 1,
            seed: 9,
            init_scale: Some(0.5),
        };
        let out = langevin_sample(&model, &cfg).unwrap();
        // Replay the stream by hand: init draws then one noise draw.
        let mut rng = rng_from(9);
        let mut init = [[0.0f64; 3]; 2];
        for p in init.iter_mut() {
            for v in p.iter_mut() {
                *v = 0.5 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let mut z = [[0.0f64; 3]; 2];
        for p in z.iter_mut() {
            for v in p.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        let scale = (2.0 * 0.01_f64).sqrt();
        for i in 0..2 {
            for k in 0..3 {
                let expect = init[i][k] + scale * z[i][k];
                assert_eq!(out[i][k].to_bits(), expect.to_bits());
            }
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let sched = make_schedule(1.0, 0.3, 4).unwrap();
        let mix = GaussianMixture {
            means: vec![vec![0.0; 6]],
            stds: vec![1.0],
            weights: vec![1.0],
        };
        let field = AnalyticScore::new(mix, sched, 2).unwrap();
        let cfg = SamplerConfig {
            step_a: 0.05,
            t_steps: 20,
            seed: 4,
            init_scale: None,
        };
        let a = langevin_sample(&field, &cfg).unwrap();
        let b = langevin_sample(&field, &cfg).unwrap();
        assert_eq!(a, b);
        let c = langevin_sample(
            &field,
            &SamplerConfig {
                seed: 5,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_ne!(a, c);
        let ens = sample_ensemble(&field, &cfg, 3).unwrap();
        let ens2 = sample_ensemble(&field, &cfg, 3).unwrap();
        assert_eq!(ens, ens2);
        assert_ne!(ens[0], ens[1]);
    }

    #[test]
    fn com_free_chains_stay_centered() {
        let sched = make_schedule(0.79, 0.02, 5).unwrap();
        let mut model = ScoreModel::init(4, sched, &[16], 2, true).unwrap();
        model.net.randomize_params(8);
        let cfg = SamplerConfig {
            step_a: 1e-5,
            t_steps: 10,
            seed: 1,
            init_scale: None,
        };
        let out = langevin_sample(&model, &cfg).unwrap();
        let m = geom::centroid(&out);
        for k in 0..3 {
            assert!(m[k].abs() < 1e-12, "axis {k} CoM {}", m[k]);
        }
    }

    #[test]
    fn reverse_is_langevin_with_zero_noise() {
        let sched = make_schedule(0.79, 0.02, 6).unwrap();
        let mut model = ScoreModel::init(3, sched, &[16, 16], 6, true).unwrap();
        model.net.randomize_params(44);
        let start = vec![[0.5, 0.2, -0.1], [-0.4, 0.8, 0.3], [0.1, -0.9, 0.6]];
        let via_loop =
            run_level_loop(&model, start.clone(), 3, 4, 1e-4, &mut ZeroNoise).unwrap();
        let via_reverse = deterministic_reverse(&model, &start, 3, 4, 1e-4).unwrap();
        assert_eq!(via_loop, via_reverse);
    }

    #[test]
    fn non_finite_scores_name_level_and_step() {
        struct BadField(NoiseSchedule);
        impl ScoreField for BadField {
            fn n_atoms(&self) -> usize {
                1
            }
            fn schedule(&self) -> &NoiseSchedule {
                &self.0
            }
            fn com_free(&self) -> bool {
                false
            }
            fn score(&self, _c: &[[f64; 3]], _sigma: f64) -> Result<Conformation> {
                Ok(vec![[f64::NAN, 0.0, 0.0]])
            }
        }
        let field = BadField(make_schedule(0.5, 0.1, 3).unwrap());
        match deterministic_reverse(&field, &[[0.0; 3]], 2, 3, 0.01) {
            Err(Error::Sampling { level, step, .. }) => {
                assert_eq!(level, 2);
                assert_eq!(step, 1);
            }
            other => panic!("expected sampling error, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let cfg = SamplerConfig {
            step_a: 0.0,
            ..SamplerConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SamplerConfig {
            t_steps: 0,
            ..SamplerConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SamplerConfig {
            init_scale: Some(-1.0),
            ..SamplerConfig::default()
        };
        assert!(cfg.validate().is_err());
        let field = point_mass_field(&[0.0, 0.0, 0.0], 3);
        assert!(matches!(
            deterministic_reverse(&field, &[[0.0; 3]], 7, 1, 0.01),
            Err(Error::Index(_))
        ));
        assert!(matches!(
            deterministic_reverse(&field, &[[0.0; 3]], 1, 0, 0.01),
            Err(Error::Config(_))
        ));
    }
}
