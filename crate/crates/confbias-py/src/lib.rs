//! Python bindings for the conformer bias toolkit.
//!
//! The module mirrors the CLI pipeline: generate a dataset, train a score
//! model, draw samples, probe exposure bias, and compare ensembles.

use confbias::bias::{estimate_bias, BiasConfig, LevelSampling};
use confbias::error::Error;
use confbias::io as cio;
use confbias::metrics;
use confbias::sampler::{deterministic_reverse, sample_ensemble, SamplerConfig};
use confbias::schedule::{make_schedule, NoiseSchedule};
use confbias::score::{ScoreField, ScoreModel};
use confbias::synth::{self, ConformerSet, EnsembleStat, MoleculeTemplate, ToyProperty};
use confbias::train::{train as train_model, LossWeighting, TrainConfig};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use std::path::PathBuf;

type Coords = Vec<[f64; 3]>;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Persistence(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A collection of molecules, each with a conformer ensemble.
#[pyclass]
struct Dataset {
    inner: Vec<ConformerSet>,
}

#[pymethods]
impl Dataset {
    /// Generate synthetic chain molecules with torsion-sampled conformers.
    #[staticmethod]
    #[pyo3(signature = (atoms, molecules, conformers, seed=0, bond_length=1.5, bond_angle=112.0))]
    fn generate(
        atoms: usize,
        molecules: usize,
        conformers: usize,
        seed: u64,
        bond_length: f64,
        bond_angle: f64,
    ) -> PyResult<Self> {
        let mut tmpl = MoleculeTemplate::chain(atoms).map_err(err)?;
        tmpl.bond_length = bond_length;
        tmpl.bond_angle_deg = bond_angle;
        tmpl.validate().map_err(err)?;
        let inner = synth::gen_dataset(&tmpl, molecules, conformers, seed).map_err(err)?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Dataset {
            inner: cio::read_dataset(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        cio::write_dataset(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn n_molecules(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_atoms(&self) -> usize {
        self.inner.first().map(|s| s.template.n_atoms).unwrap_or(0)
    }

    /// Conformer coordinates of molecule `i`.
    fn conformers(&self, i: usize) -> PyResult<Vec<Coords>> {
        self.inner
            .get(i)
            .map(|s| s.conformers.clone())
            .ok_or_else(|| PyValueError::new_err(format!("no molecule {i}")))
    }

    /// Property values (rg, end-to-end, or torsion-energy) over molecule
    /// `i`'s ensemble.
    fn property_values(&self, i: usize, property: &str) -> PyResult<Vec<f64>> {
        let which = ToyProperty::from_name(property).map_err(err)?;
        let set = self
            .inner
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("no molecule {i}")))?;
        set.conformers
            .iter()
            .map(|c| synth::toy_property(c, &set.template, which).map_err(err))
            .collect()
    }

    /// Mean/min/max statistics of a property over molecule `i`'s ensemble.
    #[pyo3(signature = (i, property, stats=vec!["mean".into(), "min".into(), "max".into()]))]
    fn property_stats(&self, i: usize, property: &str, stats: Vec<String>) -> PyResult<Vec<f64>> {
        let which = ToyProperty::from_name(property).map_err(err)?;
        let stats = stats
            .iter()
            .map(|s| EnsembleStat::from_name(s).map_err(err))
            .collect::<PyResult<Vec<_>>>()?;
        let set = self
            .inner
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("no molecule {i}")))?;
        synth::ensemble_stats(&set.conformers, &set.template, which, &stats).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Noise-conditional score model over conformations.
#[pyclass]
struct Model {
    inner: ScoreModel,
}

#[pymethods]
impl Model {
    /// Fresh model with a geometric noise schedule.
    #[staticmethod]
    #[pyo3(signature = (n_atoms, sigma_max=0.79, sigma_min=0.02, levels=6, hidden=vec![128, 128, 128], seed=0, center_input=true))]
    fn init(
        n_atoms: usize,
        sigma_max: f64,
        sigma_min: f64,
        levels: usize,
        hidden: Vec<usize>,
        seed: u64,
        center_input: bool,
    ) -> PyResult<Self> {
        let schedule = make_schedule(sigma_max, sigma_min, levels).map_err(err)?;
        Ok(Model {
            inner: ScoreModel::init(n_atoms, schedule, &hidden, seed, center_input)
                .map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _meta) = cio::load_checkpoint(&path).map_err(err)?;
        Ok(Model { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        cio::save_checkpoint(&self.inner, None, None, &path).map_err(err)
    }

    #[getter]
    fn n_atoms(&self) -> usize {
        self.inner.n_atoms
    }

    #[getter]
    fn sigmas(&self) -> Vec<f64> {
        self.inner.schedule.sigmas().to_vec()
    }

    /// Score field evaluated at one conformation and noise scale.
    fn score(&self, c: Coords, sigma: f64) -> PyResult<Coords> {
        self.inner.score(&c, sigma).map_err(err)
    }

    /// Denoising score matching on `data`; updates the model in place and
    /// returns (step, loss) pairs from the training log.
    #[pyo3(signature = (data, steps, lr=1e-3, batch_size=64, lambda_ip=0.0, seed=0, weighting="sigma-squared", log_every=100))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        data: PyRef<Dataset>,
        steps: usize,
        lr: f64,
        batch_size: usize,
        lambda_ip: f64,
        seed: u64,
        weighting: &str,
        log_every: usize,
    ) -> PyResult<Vec<(usize, f64)>> {
        let cfg = TrainConfig {
            lr,
            batch_size,
            steps,
            lambda_ip,
            seed,
            weighting: LossWeighting::from_name(weighting).map_err(err)?,
            log_every,
        };
        let (trained, log) = train_model(&data.inner, self.inner.clone(), &cfg).map_err(err)?;
        self.inner = trained;
        Ok(log.records.iter().map(|r| (r.step, r.loss)).collect())
    }

    /// Draw `count` conformations by annealed Langevin dynamics.
    #[pyo3(signature = (count, t_steps=50, step_a=1e-5, seed=0, init_scale=None))]
    fn sample(
        &self,
        count: usize,
        t_steps: usize,
        step_a: f64,
        seed: u64,
        init_scale: Option<f64>,
    ) -> PyResult<Vec<Coords>> {
        let cfg = SamplerConfig {
            step_a,
            t_steps,
            seed,
            init_scale,
        };
        sample_ensemble(&self.inner, &cfg, count).map_err(err)
    }

    /// Noise-free reverse from `(c, t_start)` down through the smallest
    /// scale.
    #[pyo3(signature = (c, t_start, det_steps=1, step_a=1e-5))]
    fn reverse(&self, c: Coords, t_start: usize, det_steps: usize, step_a: f64) -> PyResult<Coords> {
        deterministic_reverse(&self.inner, &c, t_start, det_steps, step_a).map_err(err)
    }

    /// Exposure-bias probe against reference data. Returns one
    /// (t, sigma, mean_abs_bias, n) tuple per noise level.
    #[pyo3(signature = (data, samples_per_level=100, det_steps=1, step_a=1e-5, seed=0, mode="stratified"))]
    fn measure_bias(
        &self,
        data: PyRef<Dataset>,
        samples_per_level: usize,
        det_steps: usize,
        step_a: f64,
        seed: u64,
        mode: &str,
    ) -> PyResult<Vec<(usize, f64, f64, usize)>> {
        let cfg = BiasConfig {
            samples_per_level,
            det_steps,
            step_a,
            seed,
            mode: LevelSampling::from_name(mode).map_err(err)?,
        };
        let report = estimate_bias(&self.inner, &data.inner, &cfg).map_err(err)?;
        Ok(report
            .levels
            .iter()
            .map(|l| (l.t, l.sigma, l.mean_abs_bias, l.n))
            .collect())
    }
}

/// Geometric noise schedule from `sigma_max` down to `sigma_min`.
#[pyfunction]
#[pyo3(name = "make_schedule")]
fn make_schedule_py(sigma_max: f64, sigma_min: f64, levels: usize) -> PyResult<Vec<f64>> {
    let s: NoiseSchedule = make_schedule(sigma_max, sigma_min, levels).map_err(err)?;
    Ok(s.sigmas().to_vec())
}

/// RMSD after optimal proper-rotation alignment.
#[pyfunction]
fn rmsd(a: Coords, b: Coords) -> PyResult<f64> {
    metrics::rmsd(&a, &b).map_err(err)
}

/// Optimal rigid alignment of `p` onto `q`: returns (rotation, translation).
#[pyfunction]
fn kabsch(p: Coords, q: Coords) -> PyResult<([[f64; 3]; 3], [f64; 3])> {
    metrics::kabsch_align(&p, &q).map_err(err)
}

/// Coverage and matching of a generated ensemble against a reference one.
#[pyfunction]
#[pyo3(signature = (generated, reference, delta=0.5))]
fn coverage_matching(
    generated: Vec<Coords>,
    reference: Vec<Coords>,
    delta: f64,
) -> PyResult<(f64, f64)> {
    let m = metrics::pairwise_rmsd(&generated, &reference).map_err(err)?;
    Ok((
        metrics::coverage(&m, delta).map_err(err)?,
        metrics::matching(&m).map_err(err)?,
    ))
}

#[pymodule]
fn confbias_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(make_schedule_py, m)?)?;
    m.add_function(wrap_pyfunction!(rmsd, m)?)?;
    m.add_function(wrap_pyfunction!(kabsch, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_matching, m)?)?;
    Ok(())
}
