//! Synthetic chain molecules.
//!
//! A template fixes bond length and bond angle; conformations differ only in
//! their torsion angles, drawn from per-bond von Mises mixtures. Coordinates
//! are built by natural-extension placement (each atom from the previous
//! three plus internal coordinates), so every generated structure has exact
//! bond lengths and angles and known torsions. The module also carries the
//! analytic Gaussian-mixture oracle used to validate training and sampling,
//! and cheap ensemble properties for distribution-level comparisons.

use crate::error::{Error, Result};
use crate::geom::{self, Conformation};
use crate::schedule::NoiseSchedule;
use crate::score::ScoreField;
use crate::seed::{derive_seed, rng_from};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Mixture of von Mises components over a circular angle in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircularMixture {
    pub means_deg: Vec<f64>,
    pub concentrations: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CircularMixture {
    /// Default torsion prior: gauche-/gauche+/anti at -60, 60, 180 degrees,
    /// weights 0.3/0.3/0.4, concentration 20.
    pub fn default_torsion() -> Self {
        CircularMixture {
            means_deg: vec![-60.0, 60.0, 180.0],
            concentrations: vec![20.0, 20.0, 20.0],
            weights: vec![0.3, 0.3, 0.4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means_deg.len();
        if k == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if self.concentrations.len() != k || self.weights.len() != k {
            return Err(Error::Shape(format!(
                "mixture component counts disagree: {} means, {} concentrations, {} weights",
                k,
                self.concentrations.len(),
                self.weights.len()
            )));
        }
        if self.means_deg.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("mixture means must be finite".into()));
        }
        if self.concentrations.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
            return Err(Error::Config("concentrations must be positive".into()));
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("weights must be positive".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("weights must sum to 1, got {sum}")));
        }
        Ok(())
    }

    /// Draws one angle in degrees, wrapped to (-180, 180].
    pub fn sample_deg<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = i;
                break;
            }
        }
        let tau = von_mises_sample(rng, self.means_deg[idx].to_radians(), self.concentrations[idx]);
        geom::wrap_deg(tau.to_degrees())
    }

    /// Mixture density at `tau` (degrees), per unit radian.
    pub fn density_deg(&self, tau_deg: f64) -> f64 {
        let tau = tau_deg.to_radians();
        let mut p = 0.0;
        for ((&mu, &kappa), &w) in self
            .means_deg
            .iter()
            .zip(&self.concentrations)
            .zip(&self.weights)
        {
            let log_vm = kappa * (tau - mu.to_radians()).cos()
                - (2.0 * PI).ln()
                - log_bessel_i0(kappa);
            p += w * log_vm.exp();
        }
        p
    }
}

/// `ln I0(x)` via the Abramowitz-Stegun polynomial fits, overflow-safe.
pub fn log_bessel_i0(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 3.75 {
        let t = (ax / 3.75) * (ax / 3.75);
        let p = 1.0
            + t * (3.5156229
                + t * (3.0899424
                    + t * (1.2067492 + t * (0.2659732 + t * (0.0360768 + t * 0.0045813)))));
        p.ln()
    } else {
        let t = 3.75 / ax;
        let p = 0.39894228
            + t * (0.01328592
                + t * (0.00225319
                    + t * (-0.00157565
                        + t * (0.00916281
                            + t * (-0.02057706
                                + t * (0.02635537 + t * (-0.01647633 + t * 0.00392377)))))));
        ax + p.ln() - 0.5 * ax.ln()
    }
}

/// Best-Fisher rejection sampling for the von Mises distribution; returns an
/// angle in radians near `mu`.
pub fn von_mises_sample<R: Rng>(rng: &mut R, mu: f64, kappa: f64) -> f64 {
    if kappa < 1e-8 {
        return mu + rng.random_range(-PI..PI);
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2: f64 = rng.random();
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let sign = if u3 < 0.5 { -1.0 } else { 1.0 };
            return mu + sign * f.clamp(-1.0, 1.0).acos();
        }
    }
}

/// Chain-molecule template: geometry plus one torsion prior per rotatable
/// bond (`n_atoms - 3` of them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeTemplate {
    pub n_atoms: usize,
    pub bond_length: f64,
    pub bond_angle_deg: f64,
    pub torsion_modes: Vec<CircularMixture>,
}

impl MoleculeTemplate {
    /// Default chain: bonds 1.5, angles 112 degrees, default torsion prior on
    /// every rotatable bond.
    pub fn chain(n_atoms: usize) -> Result<Self> {
        let t = MoleculeTemplate {
            n_atoms,
            bond_length: 1.5,
            bond_angle_deg: 112.0,
            torsion_modes: vec![CircularMixture::default_torsion(); n_atoms.saturating_sub(3)],
        };
        t.validate()?;
        Ok(t)
    }

    pub fn n_torsions(&self) -> usize {
        self.n_atoms.saturating_sub(3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_atoms < 2 {
            return Err(Error::Config(format!(
                "a chain needs at least 2 atoms, got {}",
                self.n_atoms
            )));
        }
        if !(self.bond_length > 0.0) || !self.bond_length.is_finite() {
            return Err(Error::Config(format!(
                "bond length must be positive, got {}",
                self.bond_length
            )));
        }
        if !(self.bond_angle_deg > 0.0 && self.bond_angle_deg < 180.0) {
            return Err(Error::Config(format!(
                "bond angle must lie strictly between 0 and 180 degrees, got {}",
                self.bond_angle_deg
            )));
        }
        if self.torsion_modes.len() != self.n_torsions() {
            return Err(Error::Shape(format!(
                "{} torsion priors for {} rotatable bonds",
                self.torsion_modes.len(),
                self.n_torsions()
            )));
        }
        for m in &self.torsion_modes {
            m.validate()?;
        }
        Ok(())
    }
}

/// Draws one torsion vector (degrees) from the template's priors.
pub fn sample_torsions<R: Rng>(tmpl: &MoleculeTemplate, rng: &mut R) -> Vec<f64> {
    tmpl.torsion_modes.iter().map(|m| m.sample_deg(rng)).collect()
}

/// Builds Cartesian coordinates from the template geometry and explicit
/// torsions (degrees), centered to zero mean.
///
/// Natural-extension placement: atom 0 at the origin, atom 1 along x, atom 2
/// in the xy-plane at the template angle, every later atom from its three
/// predecessors plus (length, angle, torsion).
pub fn build_coordinates(tmpl: &MoleculeTemplate, torsions_deg: &[f64]) -> Result<Conformation> {
    tmpl.validate()?;
    if torsions_deg.len() != tmpl.n_torsions() {
        return Err(Error::Shape(format!(
            "{} torsions for {} rotatable bonds",
            torsions_deg.len(),
            tmpl.n_torsions()
        )));
    }
    if torsions_deg.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("torsions must be finite".into()));
    }
    let r = tmpl.bond_length;
    let theta = tmpl.bond_angle_deg.to_radians();
    let mut c: Conformation = Vec::with_capacity(tmpl.n_atoms);
    c.push([0.0, 0.0, 0.0]);
    c.push([r, 0.0, 0.0]);
    if tmpl.n_atoms >= 3 {
        c.push([r - r * theta.cos(), r * theta.sin(), 0.0]);
    }
    for i in 3..tmpl.n_atoms {
        let a = c[i - 3];
        let b = c[i - 2];
        let cc = c[i - 1];
        let phi = torsions_deg[i - 3].to_radians();
        let bc = geom::normalize(geom::sub(cc, b))?;
        let n = geom::normalize(geom::cross(geom::sub(b, a), bc))?;
        let m = geom::cross(n, bc);
        let d_local = [-r * theta.cos(), r * theta.sin() * phi.cos(), r * theta.sin() * phi.sin()];
        let d = geom::add(
            cc,
            geom::add(
                geom::scale(bc, d_local[0]),
                geom::add(geom::scale(m, d_local[1]), geom::scale(n, d_local[2])),
            ),
        );
        c.push(d);
    }
    geom::project_com(&mut c);
    Ok(c)
}

/// Recovers the torsion angles (degrees) of a built conformation.
pub fn torsion_angles(c: &[[f64; 3]]) -> Result<Vec<f64>> {
    if c.len() < 4 {
        return Ok(Vec::new());
    }
    (3..c.len())
        .map(|i| geom::dihedral_deg(c[i - 3], c[i - 2], c[i - 1], c[i]))
        .collect()
}

/// One molecule instance: the shared template plus its conformations,
/// tagged with the seed that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformerSet {
    pub template: MoleculeTemplate,
    pub seed: u64,
    pub conformers: Vec<Conformation>,
}

/// Generates `n_variants` molecule instances with `conformers_each` draws.
/// Variant `v` uses the child seed derived from `(seed, v)`, so sets are
/// independent of generation order and stable under reruns.
pub fn gen_dataset(
    tmpl: &MoleculeTemplate,
    n_variants: usize,
    conformers_each: usize,
    seed: u64,
) -> Result<Vec<ConformerSet>> {
    tmpl.validate()?;
    if n_variants == 0 || conformers_each == 0 {
        return Err(Error::Config(format!(
            "need at least one variant and one conformer, got ({n_variants}, {conformers_each})"
        )));
    }
    let mut out = Vec::with_capacity(n_variants);
    for v in 0..n_variants {
        let child = derive_seed(seed, &[v as u64]);
        let mut rng = rng_from(child);
        let mut conformers = Vec::with_capacity(conformers_each);
        for _ in 0..conformers_each {
            let torsions = sample_torsions(tmpl, &mut rng);
            conformers.push(build_coordinates(tmpl, &torsions)?);
        }
        out.push(ConformerSet {
            template: tmpl.clone(),
            seed: child,
            conformers,
        });
    }
    Ok(out)
}

/// Isotropic Gaussian mixture in flat coordinate space; the analytic stand-in
/// for a data distribution with known smoothed scores.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussianMixture {
    /// Point mass at `mean` (std 0); its smoothed score is exactly
    /// `-(x - mean) / sigma^2`.
    pub fn point_mass(mean: Vec<f64>) -> Self {
        GaussianMixture {
            means: vec![mean],
            stds: vec![0.0],
            weights: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if self.stds.len() != k || self.weights.len() != k {
            return Err(Error::Shape(format!(
                "mixture component counts disagree: {} means, {} stds, {} weights",
                k,
                self.stds.len(),
                self.weights.len()
            )));
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(Error::Shape("mixture means must share one dimension".into()));
        }
        if self.stds.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(Error::Config("stds must be non-negative".into()));
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("weights must be positive".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("weights must sum to 1, got {sum}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn component_logs(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "point has dim {}, mixture has dim {}",
                x.len(),
                self.dim()
            )));
        }
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(Error::Domain(format!(
                "noise scale must be non-negative, got {sigma}"
            )));
        }
        let d = self.dim() as f64;
        let mut logs = Vec::with_capacity(self.means.len());
        for ((mu, &s), &w) in self.means.iter().zip(&self.stds).zip(&self.weights) {
            let v = s * s + sigma * sigma;
            if v <= 0.0 {
                return Err(Error::Domain(
                    "smoothed variance is zero; need sigma > 0 or std > 0".into(),
                ));
            }
            let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
            logs.push(w.ln() - 0.5 * d * (2.0 * PI * v).ln() - 0.5 * sq / v);
        }
        Ok(logs)
    }

    /// Log density of the mixture smoothed by `N(0, sigma^2 I)`.
    pub fn log_density(&self, x: &[f64], sigma: f64) -> Result<f64> {
        self.validate()?;
        let logs = self.component_logs(x, sigma)?;
        Ok(log_sum_exp(&logs))
    }

    /// Score (gradient of log density) of the smoothed mixture:
    /// `-sum_k r_k(x) (x - mu_k) / (s_k^2 + sigma^2)` with softmax
    /// responsibilities `r_k`.
    pub fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.validate()?;
        let logs = self.component_logs(x, sigma)?;
        let lse = log_sum_exp(&logs);
        let mut out = vec![0.0; self.dim()];
        for (k, mu) in self.means.iter().enumerate() {
            let r = (logs[k] - lse).exp();
            let v = self.stds[k] * self.stds[k] + sigma * sigma;
            for (o, (xi, mi)) in out.iter_mut().zip(x.iter().zip(mu)) {
                *o -= r * (xi - mi) / v;
            }
        }
        Ok(out)
    }
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Wraps a [`GaussianMixture`] over flat coordinates into a score field over
/// conformations, for use anywhere a trained model fits.
#[derive(Debug, Clone)]
pub struct AnalyticScore {
    pub mixture: GaussianMixture,
    pub schedule: NoiseSchedule,
    pub n_atoms: usize,
}

impl AnalyticScore {
    pub fn new(mixture: GaussianMixture, schedule: NoiseSchedule, n_atoms: usize) -> Result<Self> {
        mixture.validate()?;
        if mixture.dim() != 3 * n_atoms {
            return Err(Error::Shape(format!(
                "mixture dim {} does not match 3 * {n_atoms}",
                mixture.dim()
            )));
        }
        Ok(AnalyticScore {
            mixture,
            schedule,
            n_atoms,
        })
    }
}

impl ScoreField for AnalyticScore {
    fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn com_free(&self) -> bool {
        false
    }

    fn score(&self, c: &[[f64; 3]], sigma: f64) -> Result<Conformation> {
        if c.len() != self.n_atoms {
            return Err(Error::Shape(format!(
                "conformation has {} atoms, field expects {}",
                c.len(),
                self.n_atoms
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!(
                "noise scale must be positive, got {sigma}"
            )));
        }
        let flat = geom::flatten(c);
        geom::unflatten(&self.mixture.score(&flat, sigma)?)
    }
}

/// Scalar per-conformation properties of the toy chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyProperty {
    /// Root-mean-square distance of atoms from the centroid.
    RadiusOfGyration,
    /// Distance between the first and last atom.
    EndToEnd,
    /// Negative log density of the recomputed torsions under the template
    /// priors, summed over rotatable bonds.
    TorsionEnergy,
}

impl ToyProperty {
    pub fn name(self) -> &'static str {
        match self {
            ToyProperty::RadiusOfGyration => "rg",
            ToyProperty::EndToEnd => "end-to-end",
            ToyProperty::TorsionEnergy => "torsion-energy",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "rg" => Ok(ToyProperty::RadiusOfGyration),
            "end-to-end" => Ok(ToyProperty::EndToEnd),
            "torsion-energy" => Ok(ToyProperty::TorsionEnergy),
            other => Err(Error::Config(format!("unknown property '{other}'"))),
        }
    }
}

pub fn toy_property(c: &[[f64; 3]], tmpl: &MoleculeTemplate, which: ToyProperty) -> Result<f64> {
    if c.len() != tmpl.n_atoms {
        return Err(Error::Shape(format!(
            "conformation has {} atoms, template has {}",
            c.len(),
            tmpl.n_atoms
        )));
    }
    if !geom::all_finite(c) {
        return Err(Error::Domain("conformation has non-finite coordinates".into()));
    }
    match which {
        ToyProperty::RadiusOfGyration => {
            let m = geom::centroid(c);
            let ms: f64 = c
                .iter()
                .map(|p| {
                    let d = geom::sub(*p, m);
                    geom::dot(d, d)
                })
                .sum::<f64>()
                / c.len() as f64;
            Ok(ms.sqrt())
        }
        ToyProperty::EndToEnd => Ok(geom::distance(c[0], c[c.len() - 1])),
        ToyProperty::TorsionEnergy => {
            let taus = torsion_angles(c)?;
            let mut e = 0.0;
            for (tau, mode) in taus.iter().zip(&tmpl.torsion_modes) {
                let p = mode.density_deg(*tau);
                if !(p > 0.0) {
                    return Err(Error::Domain(format!(
                        "torsion density vanished at {tau} degrees"
                    )));
                }
                e -= p.ln();
            }
            Ok(e)
        }
    }
}

/// Ensemble statistics compared between generated and reference sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleStat {
    Mean,
    Min,
    Max,
}

impl EnsembleStat {
    pub fn name(self) -> &'static str {
        match self {
            EnsembleStat::Mean => "mean",
            EnsembleStat::Min => "min",
            EnsembleStat::Max => "max",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mean" => Ok(EnsembleStat::Mean),
            "min" => Ok(EnsembleStat::Min),
            "max" => Ok(EnsembleStat::Max),
            other => Err(Error::Config(format!("unknown statistic '{other}'"))),
        }
    }

    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            EnsembleStat::Mean => values.iter().sum::<f64>() / values.len() as f64,
            EnsembleStat::Min => values.iter().cloned().fold(f64::INFINITY, f64::min),
            EnsembleStat::Max => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Per-statistic ensemble values for one set of conformations.
pub fn ensemble_stats(
    set: &[Conformation],
    tmpl: &MoleculeTemplate,
    which: ToyProperty,
    stats: &[EnsembleStat],
) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::Config("conformer set is empty".into()));
    }
    let props: Vec<f64> = set
        .iter()
        .map(|c| toy_property(c, tmpl, which))
        .collect::<Result<_>>()?;
    Ok(stats.iter().map(|s| s.apply(&props)).collect())
}

/// Absolute error of each ensemble statistic between a generated and a
/// reference set of the same molecule.
pub fn ensemble_property_error(
    generated: &[Conformation],
    reference: &[Conformation],
    tmpl: &MoleculeTemplate,
    which: ToyProperty,
    stats: &[EnsembleStat],
) -> Result<Vec<(EnsembleStat, f64)>> {
    let g = ensemble_stats(generated, tmpl, which, stats)?;
    let r = ensemble_stats(reference, tmpl, which, stats)?;
    Ok(stats
        .iter()
        .zip(g.iter().zip(&r))
        .map(|(s, (gv, rv))| (*s, (gv - rv).abs()))
        .collect())
}
