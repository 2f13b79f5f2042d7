//! Denoising score-matching training, with optional input perturbation.
//!
//! Each iteration draws `(C0, t, eps, xi)`, noises the conformation to
//! `C_t = C0 + sigma_t * eps`, feeds the network the (possibly further
//! perturbed) input `C~_t = C0 + sigma_t * (eps + lambda * xi)`, and regresses
//! the score toward `-(C_t - C0) / sigma_t^2`. The target always comes from
//! the unperturbed `C_t`; only the network input moves. `xi` is drawn every
//! iteration regardless of `lambda`, so runs differing only in `lambda`
//! consume identical RNG streams and are directly comparable.

use crate::error::{Error, Result};
use crate::geom::{self, Conformation};
use crate::nn::{adam_step, AdamState, ParamGrads};
use crate::score::ScoreModel;
use crate::seed::rng_from;
use crate::synth::ConformerSet;
use rand::Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

/// Per-level weighting of the squared residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossWeighting {
    /// Multiply by `sigma_t^2`; equalizes level magnitudes (the default).
    SigmaSquared,
    /// The literal unweighted objective.
    Unweighted,
}

impl LossWeighting {
    pub fn name(self) -> &'static str {
        match self {
            LossWeighting::SigmaSquared => "sigma-squared",
            LossWeighting::Unweighted => "unweighted",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sigma-squared" => Ok(LossWeighting::SigmaSquared),
            "unweighted" => Ok(LossWeighting::Unweighted),
            other => Err(Error::Config(format!("unknown loss weighting '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Input-perturbation strength; 0 recovers vanilla training.
    pub lambda_ip: f64,
    pub seed: u64,
    pub weighting: LossWeighting,
    /// Record a log row every this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            steps: 20_000,
            lambda_ip: 0.0,
            seed: 0,
            weighting: LossWeighting::SigmaSquared,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lambda_ip >= 0.0) || !self.lambda_ip.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda_ip
            )));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log interval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    /// Mean objective over the interval ending at `step`.
    pub loss: f64,
    /// Wall-clock seconds since training started.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub final_loss: Option<f64>,
    pub seed: u64,
}

/// `C_t = C0 + sigma * eps`.
pub fn perturb(c0: &[[f64; 3]], sigma: f64, eps: &[[f64; 3]]) -> Conformation {
    c0.iter()
        .zip(eps)
        .map(|(p, e)| [p[0] + sigma * e[0], p[1] + sigma * e[1], p[2] + sigma * e[2]])
        .collect()
}

/// `C~_t = C0 + sigma * (eps + lambda * xi)`; bitwise equal to [`perturb`]
/// when `lambda` is 0.
pub fn perturb_ip(
    c0: &[[f64; 3]],
    sigma: f64,
    eps: &[[f64; 3]],
    xi: &[[f64; 3]],
    lambda: f64,
) -> Conformation {
    c0.iter()
        .zip(eps.iter().zip(xi))
        .map(|(p, (e, x))| {
            [
                p[0] + sigma * (e[0] + lambda * x[0]),
                p[1] + sigma * (e[1] + lambda * x[1]),
                p[2] + sigma * (e[2] + lambda * x[2]),
            ]
        })
        .collect()
}

/// One-sample objective and its parameter gradients.
///
/// Returns `w_t * || s(C~_t, sigma_t) + (C_t - C0) / sigma_t^2 ||^2` with
/// `w_t = sigma_t^2` or 1 depending on the weighting.
pub fn dsm_loss(
    model: &ScoreModel,
    c0: &[[f64; 3]],
    t: usize,
    eps: &[[f64; 3]],
    xi: &[[f64; 3]],
    lambda: f64,
    weighting: LossWeighting,
) -> Result<(f64, ParamGrads)> {
    if c0.len() != model.n_atoms || eps.len() != model.n_atoms || xi.len() != model.n_atoms {
        return Err(Error::Shape(format!(
            "conformation/noise atom counts ({}, {}, {}) do not match model ({})",
            c0.len(),
            eps.len(),
            xi.len(),
            model.n_atoms
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let sigma = model.schedule.sigma(t)?;
    let c_t = perturb(c0, sigma, eps);
    let c_in = perturb_ip(c0, sigma, eps, xi, lambda);

    let x = model.features(&c_in, sigma)?;
    let raw = model.net.forward(&x)?;
    let mut s = raw.clone();
    for v in s.iter_mut() {
        *v /= sigma;
    }
    model.project_output(&mut s);

    let flat_t = geom::flatten(&c_t);
    let flat_0 = geom::flatten(c0);
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut residual = vec![0.0; s.len()];
    let mut loss_raw = 0.0;
    for i in 0..s.len() {
        let r = s[i] + (flat_t[i] - flat_0[i]) * inv_s2;
        residual[i] = r;
        loss_raw += r * r;
    }
    let w = match weighting {
        LossWeighting::SigmaSquared => sigma * sigma,
        LossWeighting::Unweighted => 1.0,
    };
    // d(loss)/d(net output): residual through the projection and 1/sigma.
    let mut upstream = residual;
    model.project_output(&mut upstream);
    let c = 2.0 * w / sigma;
    for v in upstream.iter_mut() {
        *v *= c;
    }
    let (grads, _) = model.net.backward(&x, &upstream)?;
    Ok((w * loss_raw, grads))
}

/// Runs seeded minibatch training, returning the trained model and its log.
///
/// Per batch element the RNG stream is: conformer index, level, `eps`
/// (3 * n_atoms draws), `xi` (3 * n_atoms draws), in that order.
pub fn train(
    dataset: &[ConformerSet],
    model: ScoreModel,
    cfg: &TrainConfig,
) -> Result<(ScoreModel, TrainLog)> {
    cfg.validate()?;
    let conformers: Vec<&Conformation> =
        dataset.iter().flat_map(|s| s.conformers.iter()).collect();
    if conformers.is_empty() {
        return Err(Error::Config("dataset has no conformers".into()));
    }
    if let Some(bad) = conformers.iter().find(|c| c.len() != model.n_atoms) {
        return Err(Error::Shape(format!(
            "dataset conformer has {} atoms, model expects {}",
            bad.len(),
            model.n_atoms
        )));
    }
    let mut model = model;
    let log = TrainLog {
        records: Vec::new(),
        final_loss: None,
        seed: cfg.seed,
    };
    if cfg.steps == 0 {
        return Ok((model, log));
    }
    let mut log = log;
    let mut rng = rng_from(cfg.seed);
    let levels = model.schedule.levels();
    let n_atoms = model.n_atoms;
    let mut opt = AdamState::new(&model.net);
    let start = Instant::now();
    let mut interval_sum = 0.0;
    let mut interval_count = 0usize;
    let inv_b = 1.0 / cfg.batch_size as f64;
    let mut eps: Conformation = vec![[0.0; 3]; n_atoms];
    let mut xi: Conformation = vec![[0.0; 3]; n_atoms];
    for step in 1..=cfg.steps {
        let mut batch_grads = ParamGrads::zeros_like(&model.net);
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch_size {
            let idx = rng.random_range(0..conformers.len());
            let t = rng.random_range(1..=levels);
            for p in eps.iter_mut() {
                for v in p.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            }
            for p in xi.iter_mut() {
                for v in p.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            }
            let (loss, grads) = dsm_loss(
                &model,
                conformers[idx],
                t,
                &eps,
                &xi,
                cfg.lambda_ip,
                cfg.weighting,
            )?;
            batch_loss += loss;
            batch_grads.add_scaled(&grads, 1.0);
        }
        batch_loss *= inv_b;
        batch_grads.scale(inv_b);
        if !batch_loss.is_finite() || batch_loss > 1e6 {
            return Err(Error::Training {
                step,
                msg: format!("objective diverged to {batch_loss}"),
            });
        }
        adam_step(&mut model.net, &batch_grads, &mut opt, cfg.lr).map_err(|e| match e {
            Error::Training { msg, .. } => Error::Training { step, msg },
            other => other,
        })?;
        interval_sum += batch_loss;
        interval_count += 1;
        if step % cfg.log_every == 0 || step == cfg.steps {
            let loss = interval_sum / interval_count as f64;
            log.records.push(TrainRecord {
                step,
                loss,
                seconds: start.elapsed().as_secs_f64(),
            });
            interval_sum = 0.0;
            interval_count = 0;
        }
    }
    log.final_loss = log.records.last().map(|r| r.loss);
    Ok((model, log))
}
