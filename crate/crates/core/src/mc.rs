//! Monte Carlo validation of the estimators and of the first-order
//! leakage variance.
//!
//! Trial `t` draws its noise from a ChaCha20 stream keyed by
//! `(master_seed, t)`, so results do not depend on how trials are spread
//! across threads. Sums use a fixed pairwise tree for the same reason.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::{self, BeamformScenario};
use crate::calibrate::{CalibrationProblem, Estimator};
use crate::error::{Error, Result};
use crate::io::{format_f64, serde_matrix, serde_vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McCase {
    Full,
    Subset,
}

/// Where the per-trial noise comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Draws from the problem's noise model.
    Model,
    /// `w = 0` in every trial; the theory covariance is zero.
    Noiseless,
}

#[derive(Debug, Clone)]
pub struct McConfig<'a> {
    pub master_seed: u64,
    pub trials: usize,
    pub phi_true: DVector<f64>,
    pub problem: &'a CalibrationProblem,
    pub case: McCase,
    pub scenario: Option<&'a BeamformScenario>,
    pub sampling: Sampling,
}

impl<'a> McConfig<'a> {
    pub fn new(problem: &'a CalibrationProblem, phi_true: DVector<f64>, trials: usize, master_seed: u64) -> Self {
        McConfig {
            master_seed,
            trials,
            phi_true,
            problem,
            case: McCase::Full,
            scenario: None,
            sampling: Sampling::Model,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Degenerate("at least one trial is required".into()));
        }
        let n = self.problem.node_count();
        if self.phi_true.len() != n {
            return Err(Error::DimensionMismatch {
                what: "true phase vector length",
                expected: n,
                actual: self.phi_true.len(),
            });
        }
        if let Some(bad) = self.phi_true.iter().find(|x| !x.is_finite()) {
            return Err(Error::Parse(format!("true phase {bad} is not finite")));
        }
        if self.case == McCase::Subset && self.problem.restricted().is_none() {
            return Err(Error::InvalidSubset("subset case needs a problem with Ω".into()));
        }
        if let Some(sc) = self.scenario {
            if sc.v().len() != n {
                return Err(Error::DimensionMismatch {
                    what: "scenario length",
                    expected: n,
                    actual: sc.v().len(),
                });
            }
        }
        Ok(())
    }

    fn estimator(&self) -> &Estimator {
        match (self.case, self.problem.restricted()) {
            (McCase::Subset, Some(r)) => &r.estimator,
            _ => self.problem.full(),
        }
    }
}

/// RNG for one trial.
pub fn trial_rng(master_seed: u64, trial: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(trial);
    rng
}

/// Raw per-trial results, kept in trial order.
#[derive(Debug, Clone)]
pub struct TrialLog {
    pub estimates: Vec<DVector<f64>>,
    pub effective_channels: Option<Vec<Complex64>>,
}

impl TrialLog {
    /// CSV with one row per trial: `trial, phi_hat_0..`, then `g_re, g_im`
    /// when a scenario was given.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.estimates.first().map_or(0, |e| e.len());
        let mut header: Vec<String> = std::iter::once("trial".to_string())
            .chain((0..n).map(|i| format!("phi_hat_{i}")))
            .collect();
        if self.effective_channels.is_some() {
            header.push("g_re".into());
            header.push("g_im".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for (t, est) in self.estimates.iter().enumerate() {
            let mut fields: Vec<String> = std::iter::once(t.to_string())
                .chain(est.iter().map(|&x| format_f64(x)))
                .collect();
            if let Some(g) = &self.effective_channels {
                fields.push(format_f64(g[t].re));
                fields.push(format_f64(g[t].im));
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

pub fn run_trials(cfg: &McConfig<'_>) -> Result<TrialLog> {
    cfg.validate()?;
    let problem = cfg.problem;
    let estimator = cfg.estimator();
    let clean = problem.incidence().matrix() * &cfg.phi_true;
    let row_map = match cfg.case {
        McCase::Subset => problem.restricted().map(|r| r.row_map.as_slice()),
        McCase::Full => None,
    };
    let estimates = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| {
            let x = match cfg.sampling {
                Sampling::Model => &clean + problem.noise().sample(&mut trial_rng(cfg.master_seed, t)),
                Sampling::Noiseless => clean.clone(),
            };
            let x = match row_map {
                Some(map) => DVector::from_iterator(map.len(), map.iter().map(|&m| x[m])),
                None => x,
            };
            estimator.estimate(&x)
        })
        .collect::<Result<Vec<_>>>()?;
    let effective_channels = match cfg.scenario {
        Some(sc) => Some(
            estimates
                .par_iter()
                .map(|est| beamform::effective_channel(sc, &cfg.phi_true, est))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok(TrialLog {
        estimates,
        effective_channels,
    })
}

const LEAF: usize = 64;

/// Sum over `items` with a split tree that depends only on `items.len()`.
fn pairwise_sum<T, A, L, F>(items: &[T], leaf: &L, add: &F) -> A
where
    T: Sync,
    A: Send,
    L: Fn(&[T]) -> A + Sync,
    F: Fn(A, A) -> A + Sync,
{
    if items.len() <= LEAF {
        return leaf(items);
    }
    let (lo, hi) = items.split_at(items.len() / 2);
    let (a, b) = rayon::join(|| pairwise_sum(lo, leaf, add), || pairwise_sum(hi, leaf, add));
    add(a, b)
}

/// Empirical moments next to their theoretical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub case: McCase,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(with = "serde_vector")]
    pub empirical_mean: DVector<f64>,
    /// `E[phi_hat]`, the projection of the true phases.
    #[serde(with = "serde_vector")]
    pub mean_oracle: DVector<f64>,
    #[serde(with = "serde_matrix")]
    pub empirical_cov: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub theory_cov: DMatrix<f64>,
    /// Largest `|mean - oracle|` in standard errors; components with zero
    /// theoretical variance are skipped.
    pub max_abs_bias_sigmas: f64,
    /// `||emp - theory||_F / ||theory||_F`, or `||emp||_F` when the theory is zero.
    pub cov_rel_frobenius_gap: f64,
    pub empirical_mean_g: Option<[f64; 2]>,
    pub empirical_var_g: Option<f64>,
    pub theory_var_g: Option<f64>,
    pub var_g_rel_gap: Option<f64>,
}

pub fn summarize(cfg: &McConfig<'_>, log: &TrialLog) -> Result<McReport> {
    cfg.validate()?;
    let trials = log.estimates.len();
    if trials == 0 {
        return Err(Error::Degenerate("empty trial log".into()));
    }
    let n = cfg.problem.node_count();
    let tf = trials as f64;
    let estimator = cfg.estimator();

    let sum = pairwise_sum(
        &log.estimates,
        &|chunk: &[DVector<f64>]| chunk.iter().fold(DVector::zeros(n), |acc, e| acc + e),
        &|a, b| a + b,
    );
    let mean = sum / tf;
    let scatter = pairwise_sum(
        &log.estimates,
        &|chunk: &[DVector<f64>]| {
            let mut acc = DMatrix::zeros(n, n);
            for e in chunk {
                let d = e - &mean;
                acc.ger(1.0, &d, &d, 1.0);
            }
            acc
        },
        &|a, b| a + b,
    );
    let empirical_cov = if trials > 1 { scatter / (tf - 1.0) } else { DMatrix::zeros(n, n) };

    let theory_cov = match cfg.sampling {
        Sampling::Model => estimator.covariance().clone(),
        Sampling::Noiseless => DMatrix::zeros(n, n),
    };
    let mean_oracle = estimator.projector() * &cfg.phi_true;
    let max_abs_bias_sigmas = (0..n)
        .filter(|&i| theory_cov[(i, i)] > 0.0)
        .map(|i| (mean[i] - mean_oracle[i]).abs() / (theory_cov[(i, i)] / tf).sqrt())
        .fold(0.0, f64::max);
    let theory_norm = theory_cov.norm();
    let cov_rel_frobenius_gap = if theory_norm > 0.0 {
        (&empirical_cov - &theory_cov).norm() / theory_norm
    } else {
        empirical_cov.norm()
    };

    let (mut empirical_mean_g, mut empirical_var_g, mut theory_var_g, mut var_g_rel_gap) = (None, None, None, None);
    if let (Some(sc), Some(g)) = (cfg.scenario, &log.effective_channels) {
        let g_mean = pairwise_sum(
            g,
            &|chunk: &[Complex64]| chunk.iter().sum::<Complex64>(),
            &|a, b| a + b,
        ) / tf;
        let g_scatter = pairwise_sum(
            g,
            &|chunk: &[Complex64]| chunk.iter().map(|x| (x - g_mean).norm_sqr()).sum::<f64>(),
            &|a, b| a + b,
        );
        let var = if trials > 1 { g_scatter / (tf - 1.0) } else { 0.0 };
        let theory = beamform::var_g(sc, &theory_cov)?;
        empirical_mean_g = Some([g_mean.re, g_mean.im]);
        empirical_var_g = Some(var);
        theory_var_g = Some(theory);
        var_g_rel_gap = Some(if theory > 0.0 { (var - theory).abs() / theory } else { var });
    }

    Ok(McReport {
        case: cfg.case,
        trials,
        master_seed: cfg.master_seed,
        empirical_mean: mean,
        mean_oracle,
        empirical_cov,
        theory_cov,
        max_abs_bias_sigmas,
        cov_rel_frobenius_gap,
        empirical_mean_g,
        empirical_var_g,
        theory_var_g,
        var_g_rel_gap,
    })
}

pub fn run_calibration_mc(cfg: &McConfig<'_>) -> Result<McReport> {
    let cfg = McConfig {
        scenario: None,
        ..cfg.clone()
    };
    summarize(&cfg, &run_trials(&cfg)?)
}

pub fn run_beamforming_mc(cfg: &McConfig<'_>) -> Result<McReport> {
    if cfg.scenario.is_none() {
        return Err(Error::Degenerate("beamforming Monte Carlo needs a scenario".into()));
    }
    summarize(cfg, &run_trials(cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseModel;
    use crate::topology::{SubsetSpec, Topology};

    fn line_problem(n: usize, sigma2: f64, subset: Option<SubsetSpec>) -> CalibrationProblem {
        let t = Topology::line(n).unwrap();
        let q = NoiseModel::scalar(t.edge_count(), sigma2).unwrap();
        CalibrationProblem::new(t, q, subset).unwrap()
    }

    fn phases(n: usize) -> DVector<f64> {
        DVector::from_fn(n, |i, _| 0.3 * i as f64 - 0.7)
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let items: Vec<f64> = (1..=1000).map(f64::from).collect();
        let s = pairwise_sum(&items, &|c: &[f64]| c.iter().sum::<f64>(), &|a, b| a + b);
        assert_eq!(s, 500_500.0);
    }

    #[test]
    fn trial_streams_are_distinct_and_stable() {
        use rand::Rng;
        let a: u64 = trial_rng(7, 0).random();
        let b: u64 = trial_rng(7, 1).random();
        let c: u64 = trial_rng(8, 0).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, trial_rng(7, 0).random::<u64>());
    }

    #[test]
    fn single_trial_is_reproducible() {
        let p = line_problem(5, 1e-2, None);
        let cfg = McConfig::new(&p, phases(5), 1, 99);
        let a = run_trials(&cfg).unwrap();
        let b = run_trials(&cfg).unwrap();
        assert_eq!(a.estimates, b.estimates);
        let report = summarize(&cfg, &a).unwrap();
        assert_eq!(report.empirical_cov, DMatrix::zeros(5, 5));
    }

    #[test]
    fn noiseless_trials_hit_the_projection() {
        let p = line_problem(4, 1.0, Some(SubsetSpec::new(4, &[1, 2]).unwrap()));
        let mut cfg = McConfig::new(&p, phases(4), 3, 1);
        cfg.sampling = Sampling::Noiseless;
        for case in [McCase::Full, McCase::Subset] {
            cfg.case = case;
            let r = run_calibration_mc(&cfg).unwrap();
            assert!((&r.empirical_mean - &r.mean_oracle).amax() < 1e-12);
            assert!(r.cov_rel_frobenius_gap < 1e-20);
            assert_eq!(r.max_abs_bias_sigmas, 0.0);
        }
    }

    #[test]
    fn small_run_agrees_with_theory() {
        let p = line_problem(4, 1e-4, None);
        let cfg = McConfig::new(&p, phases(4), 20_000, 5);
        let r = run_calibration_mc(&cfg).unwrap();
        assert!(r.cov_rel_frobenius_gap < 0.05, "{}", r.cov_rel_frobenius_gap);
        assert!(r.max_abs_bias_sigmas < 5.0);
    }

    #[test]
    fn config_errors() {
        let p = line_problem(4, 1.0, None);
        let cfg = McConfig::new(&p, phases(3), 10, 0);
        assert!(run_trials(&cfg).is_err());
        let mut cfg = McConfig::new(&p, phases(4), 0, 0);
        assert!(run_trials(&cfg).is_err());
        cfg.trials = 5;
        cfg.case = McCase::Subset;
        assert!(matches!(run_trials(&cfg), Err(Error::InvalidSubset(_))));
        cfg.case = McCase::Full;
        assert!(run_beamforming_mc(&cfg).is_err());
    }

    #[test]
    fn trial_csv_layout() {
        let p = line_problem(3, 1e-2, None);
        let log = run_trials(&McConfig::new(&p, phases(3), 2, 4)).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "trial,phi_hat_0,phi_hat_1,phi_hat_2");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,"));
    }
}
