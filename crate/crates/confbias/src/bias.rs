//! Exposure-bias measurement for trained score fields.
//!
//! For a probe at level `t`: perturb a real conformation to `C_t = C_0 +
//! sigma_t * eps`, run the deterministic reverse from `(C_t, t)` down through
//! the smallest scale, and record `e = ||C_0 - C_hat_0||_1 / n_atoms`. The
//! per-level mean of `|e|` exposes where along the schedule the model's own
//! predictions stop matching what it saw in training.

use crate::error::{Error, Result};
use crate::sampler;
use crate::score::ScoreField;
use crate::seed::{derive_seed, rng_from};
use crate::synth::ConformerSet;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// How probe levels are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LevelSampling {
    /// Fixed budget at every level; per-level counts are equal.
    Stratified,
    /// Each probe draws its level uniformly; per-level counts vary.
    Uniform,
}

impl LevelSampling {
    pub fn name(self) -> &'static str {
        match self {
            LevelSampling::Stratified => "stratified",
            LevelSampling::Uniform => "uniform",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "stratified" => Ok(LevelSampling::Stratified),
            "uniform" => Ok(LevelSampling::Uniform),
            other => Err(Error::Config(format!(
                "unknown level sampling mode {other:?}; expected stratified or uniform"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BiasConfig {
    /// Probes per level (stratified) or per-level budget whose total
    /// `samples_per_level * L` is drawn uniformly over levels.
    pub samples_per_level: usize,
    /// Reverse updates per level on the way down.
    pub det_steps: usize,
    /// Step coefficient `a` for the reverse.
    pub step_a: f64,
    pub seed: u64,
    pub mode: LevelSampling,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            samples_per_level: 100,
            det_steps: 1,
            step_a: 1e-5,
            seed: 0,
            mode: LevelSampling::Stratified,
        }
    }
}

impl BiasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_level == 0 {
            return Err(Error::Config("need at least one probe per level".into()));
        }
        if self.det_steps == 0 {
            return Err(Error::Config("need at least one reverse update".into()));
        }
        if !(self.step_a > 0.0) || !self.step_a.is_finite() {
            return Err(Error::Config(format!(
                "step coefficient must be positive, got {}",
                self.step_a
            )));
        }
        Ok(())
    }
}

/// Bias summary for one noise level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelBias {
    pub t: usize,
    pub sigma: f64,
    /// Mean of |e| over this level's probes; zero when the level drew none.
    pub mean_abs_bias: f64,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct BiasReport {
    pub levels: Vec<LevelBias>,
    /// Raw per-probe errors, grouped by level.
    pub raw_errors: Vec<Vec<f64>>,
    /// Signed per-coordinate reconstruction errors pooled over all probes,
    /// as predicted minus reference.
    pub coordinate_errors: Vec<f64>,
}

impl BiasReport {
    /// Probe-weighted mean of the per-level means.
    pub fn global_mean(&self) -> f64 {
        let total: usize = self.levels.iter().map(|l| l.n).sum();
        if total == 0 {
            return 0.0;
        }
        let sum: f64 = self
            .levels
            .iter()
            .map(|l| l.mean_abs_bias * l.n as f64)
            .sum();
        sum / total as f64
    }
}

/// Runs the probe loop against `field` using conformations from `dataset`.
///
/// Every probe reseeds from `(seed, t, i)` (stratified) or `(seed, j)`
/// (uniform), so per-level results do not depend on what other levels drew.
pub fn estimate_bias<S: ScoreField + ?Sized>(
    field: &S,
    dataset: &[ConformerSet],
    cfg: &BiasConfig,
) -> Result<BiasReport> {
    cfg.validate()?;
    let pool: Vec<&[[f64; 3]]> = dataset
        .iter()
        .flat_map(|set| set.conformers.iter().map(|c| c.as_slice()))
        .collect();
    if pool.is_empty() {
        return Err(Error::InsufficientData(
            "bias estimation needs at least one reference conformation".into(),
        ));
    }
    for c in &pool {
        if c.len() != field.n_atoms() {
            return Err(Error::Shape(format!(
                "reference conformation has {} atoms, field expects {}",
                c.len(),
                field.n_atoms()
            )));
        }
    }
    let levels = field.schedule().levels();
    let mut raw_errors: Vec<Vec<f64>> = vec![Vec::new(); levels];
    let mut coordinate_errors = Vec::new();
    match cfg.mode {
        LevelSampling::Stratified => {
            for t in 1..=levels {
                for i in 0..cfg.samples_per_level {
                    let probe_seed = derive_seed(cfg.seed, &[t as u64, i as u64]);
                    let e = run_probe(field, &pool, t, probe_seed, cfg, &mut coordinate_errors)?;
                    raw_errors[t - 1].push(e);
                }
            }
        }
        LevelSampling::Uniform => {
            let total = cfg.samples_per_level * levels;
            for j in 0..total {
                let probe_seed = derive_seed(cfg.seed, &[j as u64]);
                let mut rng = rng_from(derive_seed(probe_seed, &[0]));
                let t = rng.random_range(1..=levels);
                let e = run_probe(field, &pool, t, probe_seed, cfg, &mut coordinate_errors)?;
                raw_errors[t - 1].push(e);
            }
        }
    }
    let levels_out = raw_errors
        .iter()
        .enumerate()
        .map(|(idx, errs)| {
            let t = idx + 1;
            let n = errs.len();
            let mean_abs_bias = if n == 0 {
                0.0
            } else {
                errs.iter().map(|e| e.abs()).sum::<f64>() / n as f64
            };
            Ok(LevelBias {
                t,
                sigma: field.schedule().sigma(t)?,
                mean_abs_bias,
                n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BiasReport {
        levels: levels_out,
        raw_errors,
        coordinate_errors,
    })
}

fn run_probe<S: ScoreField + ?Sized>(
    field: &S,
    pool: &[&[[f64; 3]]],
    t: usize,
    probe_seed: u64,
    cfg: &BiasConfig,
    coordinate_errors: &mut Vec<f64>,
) -> Result<f64> {
    let mut rng = rng_from(derive_seed(probe_seed, &[1]));
    let c0 = pool[rng.random_range(0..pool.len())];
    let sigma = field.schedule().sigma(t)?;
    let perturbed: Vec<[f64; 3]> = c0
        .iter()
        .map(|p| {
            [
                p[0] + sigma * rng.sample::<f64, _>(StandardNormal),
                p[1] + sigma * rng.sample::<f64, _>(StandardNormal),
                p[2] + sigma * rng.sample::<f64, _>(StandardNormal),
            ]
        })
        .collect();
    let recovered =
        sampler::deterministic_reverse(field, &perturbed, t, cfg.det_steps, cfg.step_a)?;
    let mut l1 = 0.0;
    for (p, q) in recovered.iter().zip(c0) {
        for k in 0..3 {
            let d = p[k] - q[k];
            coordinate_errors.push(d);
            l1 += d.abs();
        }
    }
    Ok(l1 / c0.len() as f64)
}

/// One histogram bin over `[left, right)`; the last bin is closed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistBin>,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub n: usize,
    /// All values equal; the histogram collapses to a single bin.
    pub degenerate: bool,
}

pub const HIST_MIN_SAMPLES: usize = 100;
pub const HIST_BINS: usize = 40;

/// Fixed-width histogram over `mean +- 4 std` with outliers clamped into the
/// edge bins, plus the first three standardized moments.
pub fn bias_histogram(values: &[f64]) -> Result<Histogram> {
    if values.len() < HIST_MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "histogram needs at least {HIST_MIN_SAMPLES} values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("histogram input contains non-finite values".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n as f64;
    let std = m2.sqrt();
    if std == 0.0 {
        return Ok(Histogram {
            bins: vec![HistBin {
                left: mean,
                right: mean,
                count: n,
            }],
            mean,
            std,
            skewness: 0.0,
            n,
            degenerate: true,
        });
    }
    let skewness = m3 / m2.powf(1.5);
    let lo = mean - 4.0 * std;
    let hi = mean + 4.0 * std;
    let width = (hi - lo) / HIST_BINS as f64;
    let mut counts = vec![0usize; HIST_BINS];
    for v in values {
        let idx = ((v - lo) / width).floor() as isize;
        let idx = idx.clamp(0, HIST_BINS as isize - 1) as usize;
        counts[idx] += 1;
    }
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistBin {
            left: lo + i as f64 * width,
            right: lo + (i + 1) as f64 * width,
            count,
        })
        .collect();
    Ok(Histogram {
        bins,
        mean,
        std,
        skewness,
        n,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Conformation;
    use crate::schedule::{make_schedule, NoiseSchedule};
    use crate::synth::{AnalyticScore, GaussianMixture, MoleculeTemplate};

    fn zero_field(n_atoms: usize, schedule: NoiseSchedule) -> AnalyticScore {
        // A very wide single Gaussian: score ~ -x / (s^2 + sigma^2) ~ 0.
        AnalyticScore::new(
            GaussianMixture {
                means: vec![vec![0.0; 3 * n_atoms]],
                stds: vec![1e12],
                weights: vec![1.0],
            },
            schedule,
            n_atoms,
        )
        .unwrap()
    }

    fn one_atom_dataset(coords: [f64; 3]) -> Vec<ConformerSet> {
        vec![ConformerSet {
            template: MoleculeTemplate::chain(2).unwrap(),
            seed: 0,
            conformers: vec![vec![coords]],
        }]
    }

    #[test]
    fn zero_field_matches_folded_normal_mean() {
        // With a negligible score the reverse leaves C_t untouched, so
        // e = sigma_t * sum |eps| / n and E[e] = 3 sigma_t sqrt(2 / pi).
        let sched = make_schedule(0.79, 0.02, 6).unwrap();
        let field = zero_field(1, sched.clone());
        let data = one_atom_dataset([0.0, 0.0, 0.0]);
        let cfg = BiasConfig {
            samples_per_level: 600,
            det_steps: 1,
            step_a: 1e-9,
            seed: 3,
            mode: LevelSampling::Stratified,
        };
        let report = estimate_bias(&field, &data, &cfg).unwrap();
        for level in &report.levels {
            let expect = 3.0 * level.sigma * (2.0 / std::f64::consts::PI).sqrt();
            let rel = (level.mean_abs_bias - expect).abs() / expect;
            assert!(
                rel < 0.10,
                "t={} mean {} vs {expect} (rel {rel})",
                level.t,
                level.mean_abs_bias
            );
            assert_eq!(level.n, 600);
        }
    }

    #[test]
    fn point_mass_reverse_recovers_exactly() {
        let sched = make_schedule(0.79, 0.02, 6).unwrap();
        let c_star = vec![0.3, -0.4, 0.25];
        let field = AnalyticScore::new(
            GaussianMixture::point_mass(c_star.clone()),
            sched,
            1,
        )
        .unwrap();
        let data = one_atom_dataset([0.3, -0.4, 0.25]);
        let cfg = BiasConfig {
            samples_per_level: 50,
            det_steps: 1,
            step_a: 0.02 * 0.02,
            seed: 11,
            mode: LevelSampling::Stratified,
        };
        let report = estimate_bias(&field, &data, &cfg).unwrap();
        for level in &report.levels {
            assert!(
                level.mean_abs_bias < 1e-9,
                "t={} bias {}",
                level.t,
                level.mean_abs_bias
            );
        }
        assert!(report.global_mean() < 1e-9);
        assert!(report.coordinate_errors.iter().all(|e| e.abs() < 1e-9));
    }

    #[test]
    fn constant_drift_is_detected() {
        struct Drift {
            schedule: NoiseSchedule,
            shift: f64,
        }
        impl ScoreField for Drift {
            fn n_atoms(&self) -> usize {
                1
            }
            fn schedule(&self) -> &NoiseSchedule {
                &self.schedule
            }
            fn com_free(&self) -> bool {
                false
            }
            fn score(&self, _c: &[[f64; 3]], _sigma: f64) -> crate::error::Result<Conformation> {
                Ok(vec![[self.shift, 0.0, 0.0]])
            }
        }
        let sched = make_schedule(0.79, 0.02, 4).unwrap();
        let data = one_atom_dataset([0.0, 0.0, 0.0]);
        let cfg = BiasConfig {
            samples_per_level: 300,
            det_steps: 1,
            step_a: 1e-2,
            seed: 5,
            mode: LevelSampling::Stratified,
        };
        let clean = estimate_bias(
            &Drift {
                schedule: sched.clone(),
                shift: 0.0,
            },
            &data,
            &cfg,
        )
        .unwrap();
        let drifted = estimate_bias(
            &Drift {
                schedule: sched,
                shift: 50.0,
            },
            &data,
            &cfg,
        )
        .unwrap();
        for (c, d) in clean.levels.iter().zip(&drifted.levels) {
            assert!(
                d.mean_abs_bias > c.mean_abs_bias + 0.1,
                "t={}: drifted {} vs clean {}",
                c.t,
                d.mean_abs_bias,
                c.mean_abs_bias
            );
        }
        assert!(drifted.global_mean() > clean.global_mean());
    }

    #[test]
    fn stratified_and_uniform_agree_on_budget_and_value() {
        let sched = make_schedule(0.79, 0.02, 5).unwrap();
        let field = zero_field(1, sched);
        let data = one_atom_dataset([0.1, 0.2, 0.3]);
        let base = BiasConfig {
            samples_per_level: 400,
            det_steps: 1,
            step_a: 1e-9,
            seed: 21,
            mode: LevelSampling::Stratified,
        };
        let strat = estimate_bias(&field, &data, &base).unwrap();
        let uni = estimate_bias(
            &field,
            &data,
            &BiasConfig {
                mode: LevelSampling::Uniform,
                ..base.clone()
            },
        )
        .unwrap();
        let strat_total: usize = strat.levels.iter().map(|l| l.n).sum();
        let uni_total: usize = uni.levels.iter().map(|l| l.n).sum();
        assert_eq!(strat_total, 400 * 5);
        assert_eq!(uni_total, 400 * 5);
        for l in &strat.levels {
            assert_eq!(l.n, 400);
        }
        // Uniform counts fluctuate around the stratified budget.
        for l in &uni.levels {
            assert!(l.n > 250 && l.n < 550, "t={} drew {}", l.t, l.n);
        }
        for (a, b) in strat.levels.iter().zip(&uni.levels) {
            let rel = (a.mean_abs_bias - b.mean_abs_bias).abs() / a.mean_abs_bias;
            assert!(rel < 0.2, "t={} {} vs {}", a.t, a.mean_abs_bias, b.mean_abs_bias);
        }
    }

    #[test]
    fn reports_are_seed_deterministic() {
        let sched = make_schedule(0.79, 0.02, 3).unwrap();
        let field = zero_field(1, sched);
        let data = one_atom_dataset([0.0, 1.0, -1.0]);
        let cfg = BiasConfig {
            samples_per_level: 40,
            det_steps: 2,
            step_a: 1e-6,
            seed: 7,
            mode: LevelSampling::Stratified,
        };
        let a = estimate_bias(&field, &data, &cfg).unwrap();
        let b = estimate_bias(&field, &data, &cfg).unwrap();
        assert_eq!(a.raw_errors, b.raw_errors);
        assert_eq!(a.coordinate_errors, b.coordinate_errors);
        let c = estimate_bias(
            &field,
            &data,
            &BiasConfig {
                seed: 8,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_ne!(a.raw_errors, c.raw_errors);
    }

    #[test]
    fn config_and_data_validation() {
        let sched = make_schedule(0.79, 0.02, 3).unwrap();
        let field = zero_field(1, sched);
        let cfg = BiasConfig::default();
        assert!(matches!(
            estimate_bias(&field, &[], &cfg),
            Err(Error::InsufficientData(_))
        ));
        let bad = BiasConfig {
            samples_per_level: 0,
            ..BiasConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = BiasConfig {
            det_steps: 0,
            ..BiasConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = BiasConfig {
            step_a: -1.0,
            ..BiasConfig::default()
        };
        assert!(bad.validate().is_err());
        let wrong_atoms = vec![ConformerSet {
            template: MoleculeTemplate::chain(4).unwrap(),
            seed: 0,
            conformers: vec![vec![[0.0; 3]; 4]],
        }];
        assert!(matches!(
            estimate_bias(&field, &wrong_atoms, &BiasConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn histogram_moments_and_counts() {
        let mut rng = crate::seed::rng_from(17);
        let values: Vec<f64> = (0..100_000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let h = bias_histogram(&values).unwrap();
        assert_eq!(h.n, 100_000);
        assert_eq!(h.bins.len(), HIST_BINS);
        assert_eq!(h.bins.iter().map(|b| b.count).sum::<usize>(), 100_000);
        assert!(h.mean.abs() < 0.02, "mean {}", h.mean);
        assert!((h.std - 1.0).abs() < 0.02, "std {}", h.std);
        assert!(h.skewness.abs() < 0.05, "skew {}", h.skewness);
        assert!(!h.degenerate);
        // Contiguous bins spanning mean +- 4 std.
        for w in h.bins.windows(2) {
            assert!((w[0].right - w[1].left).abs() < 1e-12);
        }
        assert!((h.bins[0].left - (h.mean - 4.0 * h.std)).abs() < 1e-12);
    }

    #[test]
    fn histogram_clamps_outliers_into_edge_bins() {
        let mut values = vec![0.0; 200];
        for (i, v) in values.iter_mut().enumerate() {
            *v = (i as f64 / 200.0) - 0.5;
        }
        values.push(1000.0);
        values.push(-1000.0);
        let h = bias_histogram(&values).unwrap();
        assert_eq!(h.bins.iter().map(|b| b.count).sum::<usize>(), 202);
        assert!(h.bins.first().unwrap().count >= 1);
        assert!(h.bins.last().unwrap().count >= 1);
    }

    #[test]
    fn histogram_degenerate_and_short_inputs() {
        let h = bias_histogram(&vec![2.5; 150]).unwrap();
        assert!(h.degenerate);
        assert_eq!(h.bins.len(), 1);
        assert_eq!(h.bins[0].count, 150);
        assert_eq!(h.mean, 2.5);
        assert_eq!(h.skewness, 0.0);
        assert!(matches!(
            bias_histogram(&vec![0.0; 99]),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            bias_histogram(&vec![f64::NAN; 150]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn skewed_input_has_positive_skewness() {
        let mut rng = crate::seed::rng_from(3);
        let values: Vec<f64> = (0..50_000)
            .map(|_| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                (z * 0.5).exp()
            })
            .collect();
        let h = bias_histogram(&values).unwrap();
        assert!(h.skewness > 0.5, "skew {}", h.skewness);
    }
}
