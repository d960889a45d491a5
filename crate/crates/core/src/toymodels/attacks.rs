//! L-infinity gradient attacks (FGSM and PGD) against a [`ToyClassifier`].

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::ToyClassifier;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Per-coordinate `[lo, hi]`; `None` leaves the domain unbounded.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl AttackConfig {
    /// `steps = 20`, `step_size = epsilon / 10`, unbounded domain.
    pub fn pgd(epsilon: f64) -> Self {
        Self {
            epsilon,
            steps: 20,
            step_size: epsilon / 10.0,
            bounds: None,
        }
    }

    /// Single full-radius step.
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            epsilon,
            steps: 1,
            step_size: epsilon,
            bounds: None,
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon must be finite and nonnegative"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("attack needs at least one step"));
        }
        if !(self.step_size >= 0.0 && self.step_size <= self.epsilon) {
            return Err(Error::invalid("step size must lie in [0, epsilon]"));
        }
        if let Some(b) = &self.bounds {
            if b.iter().any(|(lo, hi)| !(lo <= hi)) {
                return Err(Error::invalid("domain bounds must satisfy lo <= hi"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_domain(x: &[f64], cfg: &AttackConfig) -> Result<()> {
    if let Some(b) = &cfg.bounds {
        if b.len() != x.len() {
            return Err(Error::Dimension {
                expected: x.len(),
                actual: b.len(),
            });
        }
        if x.iter().zip(b).any(|(v, (lo, hi))| v < lo || v > hi) {
            return Err(Error::invalid("attack origin lies outside the domain bounds"));
        }
    }
    Ok(())
}

/// Projects `cand` onto `B_eps[origin]` intersected with the domain. The result
/// satisfies `|cand_i - origin_i| <= eps` exactly in floating point.
fn project(origin: &[f64], cand: &mut [f64], cfg: &AttackConfig) {
    let eps = cfg.epsilon;
    for (i, (c, &x)) in cand.iter_mut().zip(origin).enumerate() {
        let mut v = c.clamp(x - eps, x + eps);
        if let Some(b) = &cfg.bounds {
            v = v.clamp(b[i].0, b[i].1);
        }
        while (v - x).abs() > eps {
            v = if v > x { v.next_down() } else { v.next_up() };
        }
        *c = v;
    }
}

fn ascent_step(model: &ToyClassifier, point: &mut [f64], label: usize, step: f64) -> Result<()> {
    let g = model.forward_backward(point, label)?.grad_x;
    point.iter_mut().zip(&g).for_each(|(p, gi)| *p += step * sign(*gi));
    Ok(())
}

/// Fast gradient sign method: one `epsilon`-sized signed step, projected.
pub fn fgsm(model: &ToyClassifier, x: &[f64], label: usize, cfg: &AttackConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_domain(x, cfg)?;
    let mut adv = x.to_vec();
    ascent_step(model, &mut adv, label, cfg.epsilon)?;
    project(x, &mut adv, cfg);
    Ok(adv)
}

/// Projected gradient ascent from `x` itself.
pub fn pgd(model: &ToyClassifier, x: &[f64], label: usize, cfg: &AttackConfig) -> Result<Vec<f64>> {
    pgd_from(model, x, x, label, cfg)
}

/// Projected gradient ascent around `x`, starting at `start` (projected first).
pub fn pgd_from(model: &ToyClassifier, x: &[f64], start: &[f64], label: usize, cfg: &AttackConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_domain(x, cfg)?;
    if start.len() != x.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: start.len(),
        });
    }
    let mut cur = start.to_vec();
    project(x, &mut cur, cfg);
    for _ in 0..cfg.steps {
        ascent_step(model, &mut cur, label, cfg.step_size)?;
        project(x, &mut cur, cfg);
    }
    Ok(cur)
}

/// PGD from a uniform random start inside the ball.
pub fn pgd_random_start<R: Rng + ?Sized>(
    model: &ToyClassifier,
    x: &[f64],
    label: usize,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let start: Vec<f64> = x
        .iter()
        .map(|v| v + cfg.epsilon * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    pgd_from(model, x, &start, label, cfg)
}

/// Attacks every row of `data`. Unset domain bounds default to the per-column
/// range of `data`.
pub fn attack_batch(
    model: &ToyClassifier,
    data: &FeatureMatrix,
    labels: &[usize],
    kind: AttackKind,
    cfg: &AttackConfig,
) -> Result<FeatureMatrix> {
    if labels.len() != data.rows() {
        return Err(Error::Dimension {
            expected: data.rows(),
            actual: labels.len(),
        });
    }
    let cfg = with_default_bounds(cfg, data);
    let rows = (0..data.rows())
        .into_par_iter()
        .map(|i| match kind {
            AttackKind::Fgsm => fgsm(model, data.row(i), labels[i], &cfg),
            AttackKind::Pgd => pgd(model, data.row(i), labels[i], &cfg),
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_rows(&rows)
}

/// `variants` random-start PGD attacks per row; variant `v` of row `i` uses
/// stream `i * variants + v` of `seed`. Output rows are grouped by source row.
pub fn attack_restarts(
    model: &ToyClassifier,
    data: &FeatureMatrix,
    labels: &[usize],
    variants: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<FeatureMatrix> {
    if labels.len() != data.rows() {
        return Err(Error::Dimension {
            expected: data.rows(),
            actual: labels.len(),
        });
    }
    let cfg = with_default_bounds(cfg, data);
    let rows = (0..data.rows() * variants)
        .into_par_iter()
        .map(|k| {
            let i = k / variants;
            let mut r = rng::stream(seed, k as u64);
            pgd_random_start(model, data.row(i), labels[i], &cfg, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_rows(&rows)
}

pub(crate) fn with_default_bounds(cfg: &AttackConfig, data: &FeatureMatrix) -> AttackConfig {
    let mut cfg = cfg.clone();
    if cfg.bounds.is_none() {
        cfg.bounds = Some(data.column_bounds());
    }
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ToyClassifier {
        ToyClassifier::random(3, 6, 2, &mut rng::stream(4, 0))
    }

    #[test]
    fn zero_radius_is_identity() {
        let m = model();
        let x = [0.1, -0.7, 2.0];
        assert_eq!(fgsm(&m, &x, 1, &AttackConfig::fgsm(0.0)).unwrap(), x.to_vec());
        assert_eq!(pgd(&m, &x, 0, &AttackConfig::pgd(0.0)).unwrap(), x.to_vec());
    }

    #[test]
    fn single_step_pgd_equals_fgsm() {
        let m = model();
        let x = [0.3, 0.1, -0.4];
        let cfg = AttackConfig::fgsm(0.2);
        assert_eq!(fgsm(&m, &x, 0, &cfg).unwrap(), pgd(&m, &x, 0, &cfg).unwrap());
    }

    #[test]
    fn ball_containment_is_exact() {
        let m = model();
        let cfg = AttackConfig::pgd(0.2);
        for k in 0..50 {
            let x: Vec<f64> = (0..3).map(|j| 0.1 * (k * 3 + j) as f64 - 2.0).collect();
            for adv in [fgsm(&m, &x, k % 2, &AttackConfig::fgsm(0.2)).unwrap(), pgd(&m, &x, k % 2, &cfg).unwrap()] {
                assert!(adv.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 0.2));
            }
        }
    }

    #[test]
    fn domain_bounds_respected() {
        let m = model();
        let cfg = AttackConfig::pgd(0.5).with_bounds(vec![(0.0, 1.0); 3]);
        let adv = pgd(&m, &[0.0, 1.0, 0.5], 1, &cfg).unwrap();
        assert!(adv.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(pgd(&m, &[1.5, 0.0, 0.0], 1, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = AttackConfig::pgd(0.1);
        cfg.step_size = 0.2;
        assert!(cfg.validate().is_err());
        cfg = AttackConfig::pgd(0.1);
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
        assert!(AttackConfig::fgsm(-1.0).validate().is_err());
    }
}
