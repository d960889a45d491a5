//! Monte Carlo experiment harness: calibration, power sweeps and the
//! non-IID suite.
//!
//! Trial `t` of condition `c` under master seed `s` uses the trial seed
//! `derive(derive(s, c), t)`; its data and its test derive from that seed
//! through streams 0 and 1. Trials run in parallel and are collected in
//! order, so reports do not depend on the thread count.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_tests, Method, TestSpec};
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::rng;
use crate::toymodels::{
    attack_batch, gen_dependent_h0, gen_non_iid, gen_synthetic, train_toy_classifier, AttackConfig, AttackKind,
    ClassifierConfig, NonIidFlavor, SyntheticKind, ToyClassifier, VARIANTS_PER_POINT,
};

/// Natural data source plus the classifier trained on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub natural: SyntheticKind,
    pub train_rows: usize,
    pub classifier: ClassifierConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            natural: SyntheticKind::Blobs {
                centers: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
                std: 0.15,
            },
            train_rows: 1000,
            classifier: ClassifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub classifier: ToyClassifier,
    pub train_data: FeatureMatrix,
    pub train_labels: Vec<usize>,
}

impl World {
    pub fn build(config: WorldConfig, seed: u64) -> Result<Self> {
        let (train_data, train_labels) = gen_synthetic(&config.natural, config.train_rows, rng::derive_seed(seed, 0))?;
        let cls_cfg = ClassifierConfig {
            seed: rng::derive_seed(seed, 1),
            ..config.classifier
        };
        let classifier = train_toy_classifier(&train_data, &train_labels, &cls_cfg)?;
        Ok(Self {
            config,
            classifier,
            train_data,
            train_labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.natural.dim()
    }

    fn natural(&self, n: usize, seed: u64) -> Result<(FeatureMatrix, Vec<usize>)> {
        gen_synthetic(&self.config.natural, n, seed)
    }
}

/// How the two samples of one trial are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// Both samples IID from `N(0, I)`.
    GaussianH0 { n: usize },
    /// `S_X ~ N(0, I)`, `S_Y ~ N(shift * e_1, I)`.
    GaussianShift { n: usize, shift: f64 },
    /// Both samples from independent runs of the dependent generator over `N(0, I)`.
    DependentH0 { n: usize, l: f64 },
    /// `S_X` natural; `S_Y` attacked natural data in which a fraction of rows
    /// is replaced by fresh natural rows.
    Adversarial {
        n: usize,
        epsilon: f64,
        attack: AttackKind,
        natural_fraction: f64,
    },
    /// `S_X` natural; `S_Y` non-IID adversarial data of the given flavor.
    NonIid { n: usize, epsilon: f64, flavor: NonIidFlavor },
}

impl Scenario {
    pub fn n(&self) -> usize {
        match self {
            Scenario::GaussianH0 { n }
            | Scenario::GaussianShift { n, .. }
            | Scenario::DependentH0 { n, .. }
            | Scenario::Adversarial { n, .. }
            | Scenario::NonIid { n, .. } => *n,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Scenario::GaussianH0 { n } => format!("gaussian-h0 n={n}"),
            Scenario::GaussianShift { n, shift } => format!("gaussian-shift n={n} shift={shift}"),
            Scenario::DependentH0 { n, l } => format!("dependent-h0 n={n} l={l}"),
            Scenario::Adversarial {
                n,
                epsilon,
                attack,
                natural_fraction,
            } => format!(
                "adversarial n={n} eps={epsilon} attack={} natural={natural_fraction}",
                match attack {
                    AttackKind::Fgsm => "fgsm",
                    AttackKind::Pgd => "pgd",
                }
            ),
            Scenario::NonIid { n, epsilon, flavor } => format!(
                "non-iid-{} n={n} eps={epsilon}",
                match flavor {
                    NonIidFlavor::A => "a",
                    NonIidFlavor::B => "b",
                }
            ),
        }
    }

    /// Draws `(S_X, S_Y)` for one trial.
    pub fn draw(&self, world: &World, seed: u64) -> Result<(FeatureMatrix, FeatureMatrix)> {
        let s = |i| rng::derive_seed(seed, i);
        let dim = world.dim();
        match self {
            Scenario::GaussianH0 { n } => {
                let kind = SyntheticKind::standard_gaussian(dim);
                Ok((gen_synthetic(&kind, *n, s(0))?.0, gen_synthetic(&kind, *n, s(1))?.0))
            }
            Scenario::GaussianShift { n, shift } => {
                let mut mean = vec![0.0; dim];
                mean[0] = *shift;
                let q = SyntheticKind::Gaussian { mean, std: 1.0 };
                Ok((
                    gen_synthetic(&SyntheticKind::standard_gaussian(dim), *n, s(0))?.0,
                    gen_synthetic(&q, *n, s(1))?.0,
                ))
            }
            Scenario::DependentH0 { n, l } => {
                let base = SyntheticKind::standard_gaussian(dim);
                Ok((gen_dependent_h0(*n, *l, &base, s(0))?, gen_dependent_h0(*n, *l, &base, s(1))?))
            }
            Scenario::Adversarial {
                n,
                epsilon,
                attack,
                natural_fraction,
            } => {
                if !(0.0..=1.0).contains(natural_fraction) {
                    return Err(Error::invalid("natural fraction must lie in [0, 1]"));
                }
                let (sx, _) = world.natural(*n, s(0))?;
                let (base, labels) = world.natural(*n, s(1))?;
                let cfg = match attack {
                    AttackKind::Fgsm => AttackConfig::fgsm(*epsilon),
                    AttackKind::Pgd => AttackConfig::pgd(*epsilon),
                };
                let adv = attack_batch(&world.classifier, &base, &labels, *attack, &cfg)?;
                let replace = (natural_fraction * *n as f64).round() as usize;
                if replace == 0 {
                    return Ok((sx, adv));
                }
                let (fresh, _) = world.natural(*n, s(2))?;
                let mut picked = vec![false; *n];
                index::sample(&mut rng::stream(seed, 3), *n, replace)
                    .into_iter()
                    .for_each(|i| picked[i] = true);
                let rows: Vec<&[f64]> = (0..*n)
                    .map(|i| if picked[i] { fresh.row(i) } else { adv.row(i) })
                    .collect();
                Ok((sx, FeatureMatrix::from_rows(&rows)?))
            }
            Scenario::NonIid { n, epsilon, flavor } => {
                let (sx, _) = world.natural(*n, s(0))?;
                let cfg = AttackConfig::pgd(*epsilon);
                let sy = match flavor {
                    NonIidFlavor::A => {
                        let rows = world.train_data.rows();
                        if rows < *n {
                            return Err(Error::invalid("world training set smaller than n"));
                        }
                        let mut pick = index::sample(&mut rng::stream(seed, 1), rows, *n).into_vec();
                        pick.sort_unstable();
                        let base = world.train_data.select(&pick)?;
                        let labels: Vec<usize> = pick.iter().map(|&i| world.train_labels[i]).collect();
                        gen_non_iid(NonIidFlavor::A, &base, &labels, &world.classifier, &cfg, s(2))?
                    }
                    NonIidFlavor::B => {
                        let base_rows = n.div_ceil(VARIANTS_PER_POINT);
                        let (base, labels) = world.natural(base_rows, s(1))?;
                        let out = gen_non_iid(NonIidFlavor::B, &base, &labels, &world.classifier, &cfg, s(2))?;
                        out.select(&(0..*n).collect::<Vec<_>>())?
                    }
                };
                Ok((sx, sy))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub condition: String,
    /// Swept axis value, when the row belongs to a sweep.
    pub value: Option<f64>,
    pub trials: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub std_error: f64,
}

impl ReportRow {
    fn new(method: Method, condition: String, value: Option<f64>, rejections: usize, trials: usize) -> Self {
        let p = rejections as f64 / trials as f64;
        Self {
            method,
            condition,
            value,
            trials,
            rejections,
            rejection_rate: p,
            std_error: (p * (1.0 - p) / trials as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub trials: usize,
    /// Pooled over all rows.
    pub rejection_rate: f64,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    fn new(experiment: &str, seed: u64, trials: usize, rows: Vec<ReportRow>) -> Self {
        let (rej, tot) = rows
            .iter()
            .fold((0, 0), |(r, t), row| (r + row.rejections, t + row.trials));
        Self {
            experiment: experiment.to_string(),
            seed,
            trials,
            rejection_rate: if tot == 0 { 0.0 } else { rej as f64 / tot as f64 },
            rows,
        }
    }

    pub fn row(&self, method: Method, condition: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.condition == condition)
    }

    /// Curve points as `condition,rejection_rate,std_error` with a header.
    /// The condition cell names the method and the scenario.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,rejection_rate,std_error\n");
        for r in &self.rows {
            out.push_str(&format!("\"{} {}\",{},{}\n", r.method, r.condition, r.rejection_rate, r.std_error));
        }
        out
    }
}

/// Seed of trial `trial` under condition `condition`.
pub fn trial_seed(master: u64, condition: u64, trial: u64) -> u64 {
    rng::derive_seed(rng::derive_seed(master, condition), trial)
}

/// Runs each method in `specs` on the same `trials` draws of `scenario`;
/// returns rejection counts per method.
fn count_rejections(
    world: &World,
    scenario: &Scenario,
    specs: &[TestSpec],
    trials: usize,
    master: u64,
    condition: u64,
) -> Result<Vec<usize>> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let per_trial = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(master, condition, t);
            let (sx, sy) = scenario.draw(world, rng::derive_seed(seed, 0))?;
            let specs: Vec<TestSpec> = specs.iter().map(|s| s.with_seed(rng::derive_seed(seed, 1))).collect();
            Ok(run_tests(&sx, &sy, &world.classifier, &specs)?
                .into_iter()
                .map(|r| r.reject)
                .collect::<Vec<bool>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0; specs.len()];
    for row in per_trial {
        for (c, r) in counts.iter_mut().zip(row) {
            *c += r as usize;
        }
    }
    Ok(counts)
}

/// Type-I error of `spec` on an `H0` scenario.
pub fn run_calibration(world: &World, scenario: &Scenario, spec: &TestSpec, trials: usize, seed: u64) -> Result<ExperimentReport> {
    let counts = count_rejections(world, scenario, &[*spec], trials, seed, 0)?;
    let row = ReportRow::new(spec.method, scenario.label(), None, counts[0], trials);
    Ok(ExperimentReport::new("calibration", seed, trials, vec![row]))
}

/// Type-I error (or power) of several methods on the same draws of one
/// scenario. Methods that train the same kernel share the fit.
pub fn run_comparison(
    world: &World,
    scenario: &Scenario,
    specs: &[TestSpec],
    trials: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    if specs.is_empty() {
        return Err(Error::invalid("comparison needs at least one method"));
    }
    let counts = count_rejections(world, scenario, specs, trials, seed, 0)?;
    let rows = specs
        .iter()
        .zip(counts)
        .map(|(s, k)| ReportRow::new(s.method, scenario.label(), None, k, trials))
        .collect();
    Ok(ExperimentReport::new("comparison", seed, trials, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Epsilon,
    SetSize,
    MixtureFraction,
}

impl SweepAxis {
    /// `base` with the swept field set to `value`.
    pub fn apply(&self, base: &Scenario, value: f64) -> Result<Scenario> {
        let mut s = base.clone();
        match (self, &mut s) {
            (SweepAxis::Epsilon, Scenario::Adversarial { epsilon, .. })
            | (SweepAxis::Epsilon, Scenario::NonIid { epsilon, .. }) => *epsilon = value,
            (SweepAxis::MixtureFraction, Scenario::Adversarial { natural_fraction, .. }) => *natural_fraction = value,
            (SweepAxis::SetSize, scenario) => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::invalid(format!("set size must be a positive integer, got {value}")));
                }
                let v = value as usize;
                match scenario {
                    Scenario::GaussianH0 { n }
                    | Scenario::GaussianShift { n, .. }
                    | Scenario::DependentH0 { n, .. }
                    | Scenario::Adversarial { n, .. }
                    | Scenario::NonIid { n, .. } => *n = v,
                }
            }
            _ => return Err(Error::invalid(format!("axis {self:?} does not apply to {}", base.label()))),
        }
        Ok(s)
    }
}

/// Rejection rate of `spec` at every value of `axis`.
pub fn run_power_sweep(
    world: &World,
    axis: SweepAxis,
    values: &[f64],
    base: &Scenario,
    spec: &TestSpec,
    trials: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for (c, &v) in values.iter().enumerate() {
        let scenario = axis.apply(base, v)?;
        let counts = count_rejections(world, &scenario, &[*spec], trials, seed, c as u64)?;
        rows.push(ReportRow::new(spec.method, scenario.label(), Some(v), counts[0], trials));
    }
    Ok(ExperimentReport::new("power", seed, trials, rows))
}

/// Configuration of the non-IID suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonIidSuite {
    pub flavor: NonIidFlavor,
    pub n: usize,
    pub epsilon: f64,
    /// Dependence timescale of the dependent-`H0` condition.
    pub dependent_l: f64,
}

impl NonIidSuite {
    pub fn new(flavor: NonIidFlavor) -> Self {
        Self {
            flavor,
            n: 200,
            epsilon: 0.2,
            dependent_l: 1.0,
        }
    }

    pub fn conditions(&self) -> [Scenario; 2] {
        [
            Scenario::DependentH0 {
                n: self.n,
                l: self.dependent_l,
            },
            Scenario::NonIid {
                n: self.n,
                epsilon: self.epsilon,
                flavor: self.flavor,
            },
        ]
    }
}

/// Runs every spec on a dependent-`H0` condition and on non-IID adversarial
/// data, one row per `(method, condition)`.
pub fn run_noniid_suite(
    world: &World,
    suite: &NonIidSuite,
    specs: &[TestSpec],
    trials: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    if specs.is_empty() {
        return Err(Error::invalid("non-IID suite needs at least one method"));
    }
    let mut rows = Vec::new();
    for (c, scenario) in suite.conditions().iter().enumerate() {
        let counts = count_rejections(world, scenario, specs, trials, seed, c as u64)?;
        for (spec, k) in specs.iter().zip(counts) {
            rows.push(ReportRow::new(spec.method, scenario.label(), None, k, trials));
        }
    }
    Ok(ExperimentReport::new("noniid", seed, trials, rows))
}

/// Picks the wild-bootstrap timescale whose type-I error on an `H0`
/// scenario is closest to `spec.alpha`. Ties go to the earlier candidate.
pub fn select_wild_l(
    world: &World,
    scenario: &Scenario,
    spec: &TestSpec,
    candidates: &[f64],
    trials: usize,
    seed: u64,
) -> Result<(f64, ExperimentReport)> {
    if candidates.is_empty() {
        return Err(Error::invalid("need at least one candidate l"));
    }
    let mut rows = Vec::new();
    let mut best = (f64::INFINITY, candidates[0]);
    for (c, &l) in candidates.iter().enumerate() {
        let mut s = *spec;
        s.bootstrap.l = l;
        let counts = count_rejections(world, scenario, &[s], trials, seed, c as u64)?;
        let row = ReportRow::new(spec.method, format!("{} wild-l={l}", scenario.label()), Some(l), counts[0], trials);
        let gap = (row.rejection_rate - spec.alpha).abs();
        if gap < best.0 {
            best = (gap, l);
        }
        rows.push(row);
    }
    Ok((best.1, ExperimentReport::new("select-l", seed, trials, rows)))
}
