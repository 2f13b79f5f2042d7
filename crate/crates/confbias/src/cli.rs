//! Command-line interface.
//!
//! Every subcommand resolves its settings as flags > config file > defaults,
//! writes a `manifest.json` describing the run into the output directory, and
//! prints a short summary plus wall time to stdout. Exit codes: 0 success,
//! 1 runtime or data failure, 2 usage or configuration mistake.

use crate::bias::{self, BiasConfig, LevelSampling};
use crate::error::{Error, Result};
use crate::io::{self, TrainEcho};
use crate::metrics;
use crate::plot;
use crate::sampler::{sample_ensemble, SamplerConfig};
use crate::schedule::make_schedule;
use crate::score::{ScoreModel, DEFAULT_HIDDEN};
use crate::seed::derive_seed;
use crate::synth::{gen_dataset, ConformerSet, EnsembleStat, MoleculeTemplate, ToyProperty};
use crate::train::{train, LossWeighting, TrainConfig};
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "confbias",
    version,
    about = "Synthetic conformer ensembles, score-model training, and exposure-bias measurement"
)]
struct Cli {
    /// Flat `key = value` config file; flags override its entries.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic conformer dataset.
    GenData(GenDataArgs),
    /// Train a noise-conditional score model on a dataset.
    Train(TrainArgs),
    /// Draw conformations from a trained model by annealed Langevin dynamics.
    Sample(SampleArgs),
    /// Probe a trained model for exposure bias across noise levels.
    MeasureBias(MeasureBiasArgs),
    /// Score a generated ensemble against a reference (coverage, matching).
    Evaluate(EvaluateArgs),
    /// Compare ensemble-level property statistics.
    Props(PropsArgs),
    /// Render bias reports as an SVG line plot.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of molecule variants.
    #[arg(long)]
    molecules: Option<usize>,
    /// Conformers per molecule.
    #[arg(long)]
    conformers: Option<usize>,
    /// Atoms per chain.
    #[arg(long)]
    atoms: Option<usize>,
    #[arg(long)]
    bond_length: Option<f64>,
    /// Bond angle in degrees.
    #[arg(long)]
    bond_angle: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (JSONL).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Input-perturbation strength; 0 is vanilla training.
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated strengths; trains one checkpoint per value.
    #[arg(long)]
    lambda_grid: Option<String>,
    /// Loss weighting: sigma-squared or unweighted.
    #[arg(long)]
    weighting: Option<String>,
    #[arg(long)]
    sigma_max: Option<f64>,
    #[arg(long)]
    sigma_min: Option<f64>,
    /// Number of noise levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Comma-separated hidden layer widths.
    #[arg(long)]
    hidden: Option<String>,
    /// Center inputs and project scores to the CoM-free subspace.
    #[arg(long)]
    center_input: Option<bool>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Reference dataset providing templates and ensemble sizes.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generated count per molecule = multiplier * reference count.
    #[arg(long)]
    multiplier: Option<usize>,
    /// Fixed generated count per molecule; overrides the multiplier.
    #[arg(long)]
    count: Option<usize>,
    /// Langevin updates per noise level.
    #[arg(long)]
    t_steps: Option<usize>,
    /// Base step coefficient `a`.
    #[arg(long)]
    step_a: Option<f64>,
    /// Std of the Gaussian init; defaults to the largest noise scale.
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeasureBiasArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    samples_per_level: Option<usize>,
    /// Reverse updates per level.
    #[arg(long)]
    det_steps: Option<usize>,
    #[arg(long)]
    step_a: Option<f64>,
    /// Level selection: stratified or uniform.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    generated: Option<PathBuf>,
    /// Coverage threshold (strict).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PropsArgs {
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    generated: Option<PathBuf>,
    /// rg, end-to-end, or torsion-energy.
    #[arg(long)]
    property: Option<String>,
    /// Comma-separated subset of mean,min,max.
    #[arg(long)]
    stats: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Bias report CSVs, one series each.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Config-file resolution.

struct Cfg {
    map: BTreeMap<String, String>,
}

impl Cfg {
    fn load(path: Option<&Path>, allowed: &[&str], sub: &str) -> Result<Cfg> {
        let map = match path {
            Some(p) => io::parse_config_file(p)?,
            None => BTreeMap::new(),
        };
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Usage(format!(
                    "unknown config key {key:?} for {sub}"
                )));
            }
        }
        Ok(Cfg { map })
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                Error::Usage(format!("config key {key:?}: invalid value {raw:?}: {e}"))
            }),
        }
    }

    fn string(&self, key: &str) -> Option<String> {
        self.map.get(key).cloned()
    }
}

fn pick<T>(flag: Option<T>, cfg: Result<Option<T>>, default: T) -> Result<T> {
    Ok(flag.or(cfg?).unwrap_or(default))
}

fn pick_opt<T>(flag: Option<T>, cfg: Result<Option<T>>) -> Result<Option<T>> {
    Ok(flag.or(cfg?))
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::Usage(format!("missing required --{flag}")))
}

fn parse_csv_list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    let mut out = Vec::new();
    for tok in raw.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            return Err(Error::Usage(format!("{what}: empty entry in {raw:?}")));
        }
        out.push(tok.parse().map_err(|e| {
            Error::Usage(format!("{what}: invalid entry {tok:?}: {e}"))
        })?);
    }
    Ok(out)
}

fn echo(map: &mut BTreeMap<String, String>, key: &str, value: impl Display) {
    map.insert(key.to_string(), value.to_string());
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| Error::Persistence(format!("creating {}: {e}", out.display())))
}

fn finish_manifest(
    subcommand: &str,
    config: BTreeMap<String, String>,
    inputs: &[(&str, &Path)],
    out: &Path,
) -> Result<io::Manifest> {
    let mut digests = BTreeMap::new();
    for (role, path) in inputs {
        digests.insert(role.to_string(), io::sha256_file(path)?);
    }
    let manifest = io::build_manifest(subcommand, config, digests);
    io::write_manifest(&manifest, out)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Subcommands.

fn run_gen_data(args: GenDataArgs, config: Option<&Path>) -> Result<()> {
    let allowed = [
        "atoms",
        "molecules",
        "conformers",
        "bond-length",
        "bond-angle",
        "seed",
        "out",
    ];
    let cfg = Cfg::load(config, &allowed, "gen-data")?;
    let molecules = pick(args.molecules, cfg.parsed("molecules"), 8)?;
    let conformers = pick(args.conformers, cfg.parsed("conformers"), 50)?;
    let atoms = pick(args.atoms, cfg.parsed("atoms"), 8)?;
    let bond_length = pick(args.bond_length, cfg.parsed("bond-length"), 1.5)?;
    let bond_angle = pick(args.bond_angle, cfg.parsed("bond-angle"), 112.0)?;
    let seed = pick(args.seed, cfg.parsed("seed"), 0)?;
    let out = require(pick_opt(args.out, cfg.parsed("out"))?, "out")?;

    let mut tmpl = MoleculeTemplate::chain(atoms)?;
    tmpl.bond_length = bond_length;
    tmpl.bond_angle_deg = bond_angle;
    tmpl.validate()?;
    let sets = gen_dataset(&tmpl, molecules, conformers, seed)?;

    prepare_out(&out)?;
    io::write_dataset(&sets, &out.join("dataset.jsonl"))?;
    let mut c = BTreeMap::new();
    echo(&mut c, "atoms", atoms);
    echo(&mut c, "molecules", molecules);
    echo(&mut c, "conformers", conformers);
    echo(&mut c, "bond-length", bond_length);
    echo(&mut c, "bond-angle", bond_angle);
    echo(&mut c, "seed", seed);
    finish_manifest("gen-data", c, &[], &out)?;
    println!(
        "wrote {molecules} molecules x {conformers} conformers ({atoms} atoms) to {}",
        out.join("dataset.jsonl").display()
    );
    Ok(())
}

fn run_train(args: TrainArgs, config: Option<&Path>) -> Result<()> {
    let allowed = [
        "data",
        "steps",
        "lr",
        "batch-size",
        "lambda",
        "lambda-grid",
        "weighting",
        "sigma-max",
        "sigma-min",
        "levels",
        "hidden",
        "center-input",
        "log-every",
        "seed",
        "out",
    ];
    let cfg = Cfg::load(config, &allowed, "train")?;
    let data = require(pick_opt(args.data, cfg.parsed("data"))?, "data")?;
    let steps = pick(args.steps, cfg.parsed("steps"), 20_000)?;
    let lr = pick(args.lr, cfg.parsed("lr"), 1e-3)?;
    let batch_size = pick(args.batch_size, cfg.parsed("batch-size"), 64)?;
    let lambda = pick_opt(args.lambda, cfg.parsed("lambda"))?;
    let lambda_grid = pick_opt(args.lambda_grid, Ok(cfg.string("lambda-grid")))?;
    let weighting_name = pick(
        args.weighting,
        Ok(cfg.string("weighting")),
        "sigma-squared".to_string(),
    )?;
    let sigma_max = pick(args.sigma_max, cfg.parsed("sigma-max"), 0.79)?;
    let sigma_min = pick(args.sigma_min, cfg.parsed("sigma-min"), 0.02)?;
    let levels = pick(args.levels, cfg.parsed("levels"), 6)?;
    let hidden_default = DEFAULT_HIDDEN
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let hidden_raw = pick(args.hidden, Ok(cfg.string("hidden")), hidden_default)?;
    let center_input = pick(args.center_input, cfg.parsed("center-input"), true)?;
    let log_every = pick(args.log_every, cfg.parsed("log-every"), 100)?;
    let seed = pick(args.seed, cfg.parsed("seed"), 0)?;
    let out = require(pick_opt(args.out, cfg.parsed("out"))?, "out")?;

    if lambda.is_some() && lambda_grid.is_some() {
        return Err(Error::Usage(
            "--lambda and --lambda-grid are mutually exclusive".into(),
        ));
    }
    let weighting = LossWeighting::from_name(&weighting_name)
        .map_err(|e| Error::Usage(e.to_string()))?;
    let hidden: Vec<usize> = parse_csv_list(&hidden_raw, "hidden")?;
    // (tag, value) pairs; the tag names per-value output files for grids.
    let runs: Vec<(Option<String>, f64)> = match &lambda_grid {
        Some(raw) => {
            let values: Vec<f64> = parse_csv_list(raw, "lambda-grid")?;
            values
                .iter()
                .zip(raw.split(','))
                .map(|(v, tok)| (Some(tok.trim().to_string()), *v))
                .collect()
        }
        None => vec![(None, lambda.unwrap_or(0.0))],
    };

    let sets = io::read_dataset(&data)?;
    let n_atoms = sets[0].template.n_atoms;
    if sets.iter().any(|s| s.template.n_atoms != n_atoms) {
        return Err(Error::Shape("dataset mixes atom counts".into()));
    }
    let schedule = make_schedule(sigma_max, sigma_min, levels)?;

    prepare_out(&out)?;
    let mut c = BTreeMap::new();
    echo(&mut c, "steps", steps);
    echo(&mut c, "lr", lr);
    echo(&mut c, "batch-size", batch_size);
    match &lambda_grid {
        Some(raw) => echo(&mut c, "lambda-grid", raw),
        None => echo(&mut c, "lambda", runs[0].1),
    }
    echo(&mut c, "weighting", weighting.name());
    echo(&mut c, "sigma-max", sigma_max);
    echo(&mut c, "sigma-min", sigma_min);
    echo(&mut c, "levels", levels);
    echo(&mut c, "hidden", &hidden_raw);
    echo(&mut c, "center-input", center_input);
    echo(&mut c, "log-every", log_every);
    echo(&mut c, "seed", seed);
    let manifest = finish_manifest("train", c, &[("data", data.as_path())], &out)?;

    for (tag, lambda_ip) in &runs {
        let model = ScoreModel::init(n_atoms, schedule.clone(), &hidden, seed, center_input)?;
        let tcfg = TrainConfig {
            lr,
            batch_size,
            steps,
            lambda_ip: *lambda_ip,
            seed,
            weighting,
            log_every,
        };
        let (trained, log) = train(&sets, model, &tcfg)?;
        let (ckpt_name, log_name) = match tag {
            Some(t) => (
                format!("checkpoint_lambda_{t}.json"),
                format!("train_log_lambda_{t}.csv"),
            ),
            None => ("checkpoint.json".to_string(), "train_log.csv".to_string()),
        };
        io::save_checkpoint(
            &trained,
            Some(&TrainEcho::from_config(&tcfg)),
            log.final_loss,
            &out.join(&ckpt_name),
        )?;
        let rows: Vec<Vec<String>> = log
            .records
            .iter()
            .map(|r| {
                vec![
                    r.step.to_string(),
                    r.loss.to_string(),
                    format!("{:.3}", r.seconds),
                ]
            })
            .collect();
        io::write_report_csv(
            &out.join(&log_name),
            &manifest.digest,
            &["step", "loss", "seconds"],
            &rows,
        )?;
        match log.final_loss {
            Some(l) => println!("lambda {lambda_ip}: final loss {l:.6} -> {ckpt_name}"),
            None => println!("lambda {lambda_ip}: no training steps -> {ckpt_name}"),
        }
    }
    Ok(())
}

fn run_sample(args: SampleArgs, config: Option<&Path>) -> Result<()> {
    let allowed = [
        "checkpoint",
        "data",
        "multiplier",
        "count",
        "t-steps",
        "step-a",
        "init-scale",
        "seed",
        "out",
    ];
    let cfg = Cfg::load(config, &allowed, "sample")?;
    let checkpoint = require(pick_opt(args.checkpoint, cfg.parsed("checkpoint"))?, "checkpoint")?;
    let data = require(pick_opt(args.data, cfg.parsed("data"))?, "data")?;
    let multiplier = pick(args.multiplier, cfg.parsed("multiplier"), 2)?;
    let count = pick_opt(args.count, cfg.parsed("count"))?;
    let t_steps = pick(args.t_steps, cfg.parsed("t-steps"), 50)?;
    let step_a = pick(args.step_a, cfg.parsed("step-a"), 1e-5)?;
    let init_scale = pick_opt(args.init_scale, cfg.parsed("init-scale"))?;
    let seed = pick(args.seed, cfg.parsed("seed"), 0)?;
    let out = require(pick_opt(args.out, cfg.parsed("out"))?, "out")?;

    if multiplier == 0 {
        return Err(Error::Usage("--multiplier must be at least 1".into()));
    }
    let (model, _meta) = io::load_checkpoint(&checkpoint)?;
    let sets = io::read_dataset(&data)?;
    for s in &sets {
        if s.template.n_atoms != model.n_atoms {
            return Err(Error::Shape(format!(
                "dataset molecules have {} atoms, checkpoint expects {}",
                s.template.n_atoms, model.n_atoms
            )));
        }
    }
    let mut generated = Vec::with_capacity(sets.len());
    for (i, set) in sets.iter().enumerate() {
        let k = count.unwrap_or(multiplier * set.conformers.len());
        let chain_seed = derive_seed(seed, &[i as u64]);
        let scfg = SamplerConfig {
            step_a,
            t_steps,
            seed: chain_seed,
            init_scale,
        };
        let conformers = sample_ensemble(&model, &scfg, k)?;
        generated.push(ConformerSet {
            template: set.template.clone(),
            seed: chain_seed,
            conformers,
        });
    }
    prepare_out(&out)?;
    io::write_dataset(&generated, &out.join("samples.jsonl"))?;
    let mut c = BTreeMap::new();
    echo(&mut c, "multiplier", multiplier);
    if let Some(k) = count {
        echo(&mut c, "count", k);
    }
    echo(&mut c, "t-steps", t_steps);
    echo(&mut c, "step-a", step_a);
    if let Some(s) = init_scale {
        echo(&mut c, "init-scale", s);
    }
    echo(&mut c, "seed", seed);
    finish_manifest(
        "sample",
        c,
        &[("checkpoint", checkpoint.as_path()), ("data", data.as_path())],
        &out,
    )?;
    let total: usize = generated.iter().map(|s| s.conformers.len()).sum();
    println!(
        "sampled {total} conformers over {} molecules to {}",
        generated.len(),
        out.join("samples.jsonl").display()
    );
    Ok(())
}

fn run_measure_bias(args: MeasureBiasArgs, config: Option<&Path>) -> Result<()> {
    let allowed = [
        "checkpoint",
        "data",
        "samples-per-level",
        "det-steps",
        "step-a",
        "mode",
        "seed",
        "out",
    ];
    let cfg = Cfg::load(config, &allowed, "measure-bias")?;
    let checkpoint = require(pick_opt(args.checkpoint, cfg.parsed("checkpoint"))?, "checkpoint")?;
    let data = require(pick_opt(args.data, cfg.parsed("data"))?, "data")?;
    let samples_per_level = pick(args.samples_per_level, cfg.parsed("samples-per-level"), 100)?;
    let det_steps = pick(args.det_steps, cfg.parsed("det-steps"), 1)?;
    let step_a = pick(args.step_a, cfg.parsed("step-a"), 1e-5)?;
    let mode_name = pick(args.mode, Ok(cfg.string("mode")), "stratified".to_string())?;
    let seed = pick(args.seed, cfg.parsed("seed"), 0)?;
    let out = require(pick_opt(args.out, cfg.parsed("out"))?, "out")?;
    let mode = LevelSampling::from_name(&mode_name).map_err(|e| Error::Usage(e.to_string()))?;

    let (model, _meta) = io::load_checkpoint(&checkpoint)?;
    let sets = io::read_dataset(&data)?;
    let bcfg = BiasConfig {
        samples_per_level,
        det_steps,
        step_a,
        seed,
        mode,
    };
    let report = bias::estimate_bias(&model, &sets, &bcfg)?;

    prepare_out(&out)?;
    let mut c = BTreeMap::new();
    echo(&mut c, "samples-per-level", samples_per_level);
    echo(&mut c, "det-steps", det_steps);
    echo(&mut c, "step-a", step_a);
    echo(&mut c, "mode", mode.name());
    echo(&mut c, "seed", seed);
    let manifest = finish_manifest(
        "measure-bias",
        c,
        &[("checkpoint", checkpoint.as_path()), ("data", data.as_path())],
        &out,
    )?;
    let rows: Vec<Vec<String>> = report
        .levels
        .iter()
        .map(|l| {
            vec![
                l.t.to_string(),
                l.sigma.to_string(),
                l.mean_abs_bias.to_string(),
                l.n.to_string(),
            ]
        })
        .collect();
    io::write_report_csv(
        &out.join("bias.csv"),
        &manifest.digest,
        &["t", "sigma", "mean_abs_bias", "n"],
        &rows,
    )?;
    for l in &report.levels {
        println!(
            "t={} sigma={:.6} mean|e|={:.6} n={}",
            l.t, l.sigma, l.mean_abs_bias, l.n
        );
    }
    println!("global mean |e| = {:.6}", report.global_mean());
    match bias::bias_histogram(&report.coordinate_errors) {
        Ok(h) => {
            let hrows: Vec<Vec<String>> = h
                .bins
                .iter()
                .map(|b| {
                    vec![
                        b.left.to_string(),
                        b.right.to_string(),
                        b.count.to_string(),
                    ]
                })
                .collect();
            io::write_report_csv(
                &out.join("histogram.csv"),
                &manifest.digest,
                &["left", "right", "count"],
                &hrows,
            )?;
            println!(
                "coordinate errors: mean={:.6} std={:.6} skewness={:.4} (n={})",
                h.mean, h.std, h.skewness, h.n
            );
        }
        Err(Error::InsufficientData(msg)) => {
            println!("histogram skipped: {msg}");
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

fn run_evaluate(args: EvaluateArgs, config: Option<&Path>) -> Result<()> {
    let allowed = ["reference", "generated", "delta", "out"];
    let cfg = Cfg::load(config, &allowed, "evaluate")?;
    let reference = require(pick_opt(args.reference, cfg.parsed("reference"))?, "reference")?;
    let generated = require(pick_opt(args.generated, cfg.parsed("generated"))?, "generated")?;
    let delta = pick(args.delta, cfg.parsed("delta"), 0.5)?;
    let out = require(pick_opt(args.out, cfg.parsed("out"))?, "out")?;

    let ref_sets = io::read_dataset(&reference)?;
    let gen_sets = io::read_dataset(&generated)?;
    if ref_sets.len() != gen_sets.len() {
        return Err(Error::Shape(format!(
            "reference has {} molecules, generated has {}",
            ref_sets.len(),
            gen_sets.len()
        )));
    }
    let matrices = ref_sets
        .iter()
        .zip(&gen_sets)
        .map(|(r, g)| metrics::pairwise_rmsd(&g.conformers, &r.conformers))
        .collect::<Result<Vec<_>>>()?;
    let rep = metrics::eval_report(&matrices, delta)?;

    prepare_out(&out)?;
    let mut c = BTreeMap::new();
    echo(&mut c, "delta", delta);
    let manifest = finish_manifest(
        "evaluate",
        c,
        &[
            ("reference", reference.as_path()),
            ("generated", generated.as_path()),
        ],
        &out,
    )?;
    let mut rows: Vec<Vec<String>> = rep
        .per_molecule
        .iter()
        .enumerate()
        .map(|(i, e)| vec![i.to_string(), e.cov.to_string(), e.mat.to_string()])
        .collect();
    rows.push(vec![
        "mean".to_string(),
        rep.cov_mean.to_string(),
        rep.mat_mean.to_string(),
    ]);
    rows.push(vec![
        "median".to_string(),
        rep.cov_median.to_string(),
        rep.mat_median.to_string(),
    ]);
    io::write_report_csv(
        &out.join("eval.csv"),
        &manifest.digest,
        &["molecule", "cov", "mat"],
        &rows,
    )?;
    println!(
        "COV mean {:.4} median {:.4} | MAT mean {:.4} median {:.4} (delta {delta})",
        rep.cov_mean, rep.cov_median, rep.mat_mean, rep.mat_median
    );
    Ok(())
}

fn run_props(args: PropsArgs, config: Option<&Path>) -> Result<()> {
    let allowed = ["reference", "generated", "property", "stats", "out"];
    let cfg = Cfg::load(config, &allowed, "props")?;
    let reference = require(pick_opt(args.reference, cfg.parsed("reference"))?, "reference")?;
    let generated = require(pick_opt(args.generated, cfg.parsed("generated"))?, "generated")?;
    let property_name = pick(args.property, Ok(cfg.string("property")), "rg".to_string())?;
    let stats_raw = pick(args.stats, Ok(cfg.string("stats")), "mean,min,max".to_string())?;
    let out = require(pick_opt(args.out, cfg.parsed("out"))?, "out")?;

    let property =
        ToyProperty::from_name(&property_name).map_err(|e| Error::Usage(e.to_string()))?;
    let stat_names: Vec<String> = parse_csv_list(&stats_raw, "stats")?;
    let stats = stat_names
        .iter()
        .map(|n| EnsembleStat::from_name(n).map_err(|e| Error::Usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;

    let ref_sets = io::read_dataset(&reference)?;
    let gen_sets = io::read_dataset(&generated)?;
    if ref_sets.len() != gen_sets.len() {
        return Err(Error::Shape(format!(
            "reference has {} molecules, generated has {}",
            ref_sets.len(),
            gen_sets.len()
        )));
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut totals = vec![0.0; stats.len()];
    for (i, (r, g)) in ref_sets.iter().zip(&gen_sets).enumerate() {
        let gv = crate::synth::ensemble_stats(&g.conformers, &r.template, property, &stats)?;
        let rv = crate::synth::ensemble_stats(&r.conformers, &r.template, property, &stats)?;
        for ((stat, gval), rval) in stats.iter().zip(&gv).zip(&rv) {
            let err = (gval - rval).abs();
            rows.push(vec![
                i.to_string(),
                property.name().to_string(),
                stat.name().to_string(),
                gval.to_string(),
                rval.to_string(),
                err.to_string(),
            ]);
        }
        for (acc, (gval, rval)) in totals.iter_mut().zip(gv.iter().zip(&rv)) {
            *acc += (gval - rval).abs();
        }
    }
    for (stat, total) in stats.iter().zip(&totals) {
        rows.push(vec![
            "mean".to_string(),
            property.name().to_string(),
            stat.name().to_string(),
            String::new(),
            String::new(),
            (total / ref_sets.len() as f64).to_string(),
        ]);
    }

    prepare_out(&out)?;
    let mut c = BTreeMap::new();
    echo(&mut c, "property", property.name());
    echo(&mut c, "stats", &stats_raw);
    let manifest = finish_manifest(
        "props",
        c,
        &[
            ("reference", reference.as_path()),
            ("generated", generated.as_path()),
        ],
        &out,
    )?;
    io::write_report_csv(
        &out.join("props.csv"),
        &manifest.digest,
        &["molecule", "property", "stat", "generated", "reference", "abs_error"],
        &rows,
    )?;
    for (stat, total) in stats.iter().zip(&totals) {
        println!(
            "{} {}: mean abs error {:.6}",
            property.name(),
            stat.name(),
            total / ref_sets.len() as f64
        );
    }
    Ok(())
}

fn run_plot(args: PlotArgs, config: Option<&Path>) -> Result<()> {
    let allowed = ["title", "out"];
    let cfg = Cfg::load(config, &allowed, "plot")?;
    let title = pick(
        args.title,
        Ok(cfg.string("title")),
        "exposure bias per noise level".to_string(),
    )?;
    let out = require(pick_opt(args.out, cfg.parsed("out"))?, "out")?;

    let mut series = Vec::new();
    for path in &args.inputs {
        let (header, rows) = io::read_report_csv(path)?;
        let col = |name: &str| {
            header.iter().position(|h| h == name).ok_or_else(|| {
                Error::Persistence(format!(
                    "{}: missing column {name:?}",
                    path.display()
                ))
            })
        };
        let sigma_col = col("sigma")?;
        let bias_col = col("mean_abs_bias")?;
        let mut points = Vec::with_capacity(rows.len());
        for row in &rows {
            let parse = |idx: usize| -> Result<f64> {
                row[idx].parse().map_err(|e| {
                    Error::Persistence(format!(
                        "{}: bad number {:?}: {e}",
                        path.display(),
                        row[idx]
                    ))
                })
            };
            points.push((parse(sigma_col)?, parse(bias_col)?));
        }
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        series.push(plot::Series { label, points });
    }

    prepare_out(&out)?;
    let svg_path = out.join("bias_curves.svg");
    plot::write_plot(&series, &title, "sigma", "mean |e|", &svg_path)?;
    let mut c = BTreeMap::new();
    echo(&mut c, "title", &title);
    let inputs: Vec<(String, &Path)> = args
        .inputs
        .iter()
        .map(|p| (p.display().to_string(), p.as_path()))
        .collect();
    let input_refs: Vec<(&str, &Path)> =
        inputs.iter().map(|(s, p)| (s.as_str(), *p)).collect();
    finish_manifest("plot", c, &input_refs, &out)?;
    println!("plotted {} series to {}", series.len(), svg_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// Entry point.

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

/// Parses `argv` (program name first) and runs the selected subcommand.
/// Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let started = Instant::now();
    let config = cli.config.as_deref();
    let (name, result) = match cli.cmd {
        Cmd::GenData(a) => ("gen-data", run_gen_data(a, config)),
        Cmd::Train(a) => ("train", run_train(a, config)),
        Cmd::Sample(a) => ("sample", run_sample(a, config)),
        Cmd::MeasureBias(a) => ("measure-bias", run_measure_bias(a, config)),
        Cmd::Evaluate(a) => ("evaluate", run_evaluate(a, config)),
        Cmd::Props(a) => ("props", run_props(a, config)),
        Cmd::Plot(a) => ("plot", run_plot(a, config)),
    };
    match result {
        Ok(()) => {
            println!("completed {name} in {:.2}s", started.elapsed().as_secs_f64());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(parts: &[&str]) -> Vec<String> {
        let mut v = vec!["confbias".to_string()];
        v.extend(parts.iter().map(|s| s.to_string()));
        v
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run(argv(&["frobnicate"])), 2);
        assert_eq!(run(argv(&["gen-data", "--no-such-flag", "1"])), 2);
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run(argv(&["--help"])), 0);
        assert_eq!(run(argv(&["--version"])), 0);
        assert_eq!(run(argv(&["train", "--help"])), 0);
    }

    #[test]
    fn missing_input_file_is_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert_eq!(
            run(argv(&[
                "train",
                "--data",
                "/nonexistent/data.jsonl",
                "--out",
                out.to_str().unwrap(),
            ])),
            1
        );
    }

    #[test]
    fn missing_required_flag_is_usage_error() {
        assert_eq!(run(argv(&["gen-data"])), 2);
    }

    #[test]
    fn unknown_config_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("c.conf");
        std::fs::write(&conf, "frobs = 7\n").unwrap();
        let out = dir.path().join("out");
        assert_eq!(
            run(argv(&[
                "--config",
                conf.to_str().unwrap(),
                "gen-data",
                "--out",
                out.to_str().unwrap(),
            ])),
            2
        );
    }

    #[test]
    fn lambda_and_grid_conflict() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert_eq!(
            run(argv(&[
                "train",
                "--data",
                "x.jsonl",
                "--lambda",
                "0.1",
                "--lambda-grid",
                "0.05,0.1",
                "--out",
                out.to_str().unwrap(),
            ])),
            2
        );
    }

    #[test]
    fn gen_data_round_trips_through_cli() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert_eq!(
            run(argv(&[
                "gen-data",
                "--molecules",
                "2",
                "--conformers",
                "3",
                "--atoms",
                "5",
                "--seed",
                "4",
                "--out",
                out.to_str().unwrap(),
            ])),
            0
        );
        let sets = io::read_dataset(&out.join("dataset.jsonl")).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].conformers.len(), 3);
        assert_eq!(sets[0].template.n_atoms, 5);
        let text = std::fs::read_to_string(out.join("manifest.json")).unwrap();
        let m: io::Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(m.subcommand, "gen-data");
        assert_eq!(m.config.get("seed").unwrap(), "4");
        assert!(!m.digest.is_empty());
    }

    #[test]
    fn config_file_supplies_defaults_flags_override() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("gen.conf");
        let out = dir.path().join("out");
        std::fs::write(
            &conf,
            format!(
                "molecules = 4\nconformers = 2\natoms = 6\nout = {}\n",
                out.display()
            ),
        )
        .unwrap();
        assert_eq!(
            run(argv(&[
                "--config",
                conf.to_str().unwrap(),
                "gen-data",
                "--molecules",
                "1",
            ])),
            0
        );
        let sets = io::read_dataset(&out.join("dataset.jsonl")).unwrap();
        // Flag beat the config file; the rest came from the file.
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].conformers.len(), 2);
        assert_eq!(sets[0].template.n_atoms, 6);
    }
}
