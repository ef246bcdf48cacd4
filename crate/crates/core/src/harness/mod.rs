//! Monte-Carlo trials, reports and residual checks.

pub mod figures;
pub mod rate;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{generate_block, generate_slot, FadingModel};
use crate::config::{CsiType, SystemConfig};
use crate::error::{Error, Result};
use crate::scheme::{dcsi, icsi, nocsi, Payloads, SchemeId, SchemeOutcome};

/// Residual above which a construction counts as broken.
pub const RESIDUAL_LIMIT: f64 = 1e-8;
/// Recovery error above which decoding counts as failed.
pub const RECOVERY_LIMIT: f64 = 1e-6;
/// SNR pair for the rate-slope DoF estimate.
pub const SLOPE_SNR_DB: (f64, f64) = (40.0, 60.0);

/// Per-trial generator: the master seed picks the key, the trial index
/// picks the stream.
pub fn trial_rng(master: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(trial);
    rng
}

pub fn csi_of(scheme: SchemeId) -> CsiType {
    match scheme {
        SchemeId::NoCsi => CsiType::None,
        SchemeId::Icsi => CsiType::Instantaneous,
        SchemeId::Dcsi => CsiType::Delayed,
    }
}

/// Checks that `scheme` can run at the configured dimensions.
pub fn check_feasible(cfg: &SystemConfig, scheme: SchemeId) -> Result<()> {
    cfg.ensure_valid()?;
    let full = (cfg.kd + 1) * cfg.n;
    match scheme {
        SchemeId::NoCsi if cfg.kd < 2 || !cfg.n.is_multiple_of(2) || cfg.ms < cfg.n => {
            Err(Error::NotApplicable(format!(
                "no-CSI alignment needs kd ≥ 2, even n and ms ≥ n (kd = {}, n = {}, ms = {})",
                cfg.kd, cfg.n, cfg.ms
            )))
        }
        SchemeId::Icsi if cfg.ms < full => Err(Error::NotApplicable(format!(
            "instantaneous-CSI simulation needs ms ≥ (kd+1)·n = {full} (got {})",
            cfg.ms
        ))),
        SchemeId::Dcsi if cfg.kd < 2 || cfg.ms < full => Err(Error::NotApplicable(format!(
            "delayed-CSI simulation needs kd ≥ 2 and ms ≥ (kd+1)·n = {full}"
        ))),
        _ => Ok(()),
    }
}

/// One noiseless trial on fresh channels and payloads.
pub fn run_trial(cfg: &SystemConfig, scheme: SchemeId, trial: u64) -> Result<SchemeOutcome> {
    check_feasible(cfg, scheme)?;
    let mut rng = trial_rng(cfg.seed, trial);
    let fading = FadingModel::default();
    let (kd, n) = (cfg.kd, cfg.n);
    match scheme {
        SchemeId::NoCsi => {
            let ch = generate_slot(cfg, &fading, &mut rng, 1)?;
            let p = Payloads::random(&mut rng, n / 2, kd, n / 2);
            nocsi::run(&ch, &p)
        }
        SchemeId::Icsi => {
            let ch = generate_slot(cfg, &fading, &mut rng, 1)?;
            let p = Payloads::random(&mut rng, n, kd, n);
            icsi::run(&ch, &p)
        }
        SchemeId::Dcsi => {
            let block = generate_block(cfg, &fading, &mut rng, dcsi::session_slots(kd))?;
            let p = dcsi::DcsiPayloads::random(&mut rng, kd, n);
            Ok(dcsi::run(&block, &p)?.outcome)
        }
    }
}

/// JSON-lines trace of one delayed-CSI session.
pub fn dcsi_trace(cfg: &SystemConfig, trial: u64) -> Result<String> {
    check_feasible(cfg, SchemeId::Dcsi)?;
    let mut rng = trial_rng(cfg.seed, trial);
    let block = generate_block(cfg, &FadingModel::default(), &mut rng, dcsi::session_slots(cfg.kd))?;
    let p = dcsi::DcsiPayloads::random(&mut rng, cfg.kd, cfg.n);
    dcsi::run(&block, &p)?.state.trace_jsonl()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: u64,
    pub interference_residual: f64,
    pub ris_residual: f64,
    pub recovery_err: f64,
    pub min_desired_sv: f64,
    pub dof_num: i64,
    pub dof_den: i64,
    /// Sum rate in bits per slot at each point of the config's SNR grid.
    pub sum_rate: Vec<f64>,
    /// Rate-slope DoF at 40/60 dB, when the noise power is positive.
    pub empirical_dof: Option<f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Aggregate {
    pub trials: usize,
    pub mean_interference_residual: f64,
    pub max_interference_residual: f64,
    pub max_ris_residual: f64,
    pub mean_recovery_err: f64,
    pub max_recovery_err: f64,
    pub mean_sum_rate: Vec<f64>,
    pub mean_empirical_dof: Option<f64>,
}

impl Aggregate {
    pub fn from_rows(rows: &[TrialRow]) -> Self {
        if rows.is_empty() {
            return Aggregate::default();
        }
        let count = rows.len() as f64;
        let mean = |f: &dyn Fn(&TrialRow) -> f64| rows.iter().map(f).sum::<f64>() / count;
        let max = |f: &dyn Fn(&TrialRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
        let points = rows[0].sum_rate.len();
        let mean_sum_rate = (0..points).map(|i| mean(&|r| r.sum_rate[i])).collect();
        let mean_empirical_dof = rows
            .iter()
            .map(|r| r.empirical_dof)
            .sum::<Option<f64>>()
            .map(|s| s / count);
        Aggregate {
            trials: rows.len(),
            mean_interference_residual: mean(&|r| r.interference_residual),
            max_interference_residual: max(&|r| r.interference_residual),
            max_ris_residual: max(&|r| r.ris_residual),
            mean_recovery_err: mean(&|r| r.recovery_err),
            max_recovery_err: max(&|r| r.recovery_err),
            mean_sum_rate,
            mean_empirical_dof,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_interference_residual > RESIDUAL_LIMIT {
            out.push(format!(
                "interference residual {:.3e} exceeds {RESIDUAL_LIMIT:e}",
                self.max_interference_residual
            ));
        }
        if self.max_recovery_err > RECOVERY_LIMIT {
            out.push(format!(
                "recovery error {:.3e} exceeds {RECOVERY_LIMIT:e}",
                self.max_recovery_err
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub config: SystemConfig,
    pub scheme: SchemeId,
    pub csi: CsiType,
    pub trials: Vec<TrialRow>,
    pub aggregate: Aggregate,
}

impl TrialReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn row(cfg: &SystemConfig, trial: u64, o: &SchemeOutcome) -> Result<TrialRow> {
    let sum_rate = if cfg.sigma2 > 0.0 {
        cfg.snr_grid_db
            .iter()
            .map(|&snr| {
                let p = rate::Powers::at_snr_db(snr, cfg.sigma2, cfg.p_s, cfg.p_k)?;
                rate::sum_rate(&o.sinks, &p)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let empirical_dof = if cfg.sigma2 > 0.0 {
        Some(rate::empirical_dof(&o.sinks, SLOPE_SNR_DB, cfg.sigma2, cfg.p_s, cfg.p_k)?.total)
    } else {
        None
    };
    Ok(TrialRow {
        trial,
        interference_residual: o.interference_residual,
        ris_residual: o.ris_residual,
        recovery_err: o.recovery_err,
        min_desired_sv: o.min_desired_sv,
        dof_num: *o.dof_counted.numer(),
        dof_den: *o.dof_counted.denom(),
        sum_rate,
        empirical_dof,
        diagnostics: o.diagnostics.clone(),
    })
}

/// Runs `trials` independent trials on `threads` workers (0 picks the
/// rayon default). Rows come back in trial order whatever the schedule.
pub fn run_experiment(
    cfg: &SystemConfig,
    scheme: SchemeId,
    trials: u64,
    threads: usize,
) -> Result<TrialReport> {
    check_feasible(cfg, scheme)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let o = run_trial(cfg, scheme, t)?;
                log::debug!("trial {t}: residual {:.3e}", o.interference_residual);
                row(cfg, t, &o)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let aggregate = Aggregate::from_rows(&rows);
    Ok(TrialReport {
        config: cfg.clone(),
        scheme,
        csi: csi_of(scheme),
        trials: rows,
        aggregate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeCheck {
    pub scheme: SchemeId,
    pub interference_residual: f64,
    pub ris_residual: f64,
    pub recovery_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub warnings: Vec<String>,
    pub checks: Vec<SchemeCheck>,
    pub skipped: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// One noiseless trial of every scheme the dimensions admit.
pub fn verify_config(cfg: &SystemConfig) -> Result<VerifyReport> {
    let report = cfg.validate();
    cfg.ensure_valid()?;
    let mut checks = Vec::new();
    let mut skipped = Vec::new();
    for scheme in [SchemeId::NoCsi, SchemeId::Icsi, SchemeId::Dcsi] {
        if let Err(e) = check_feasible(cfg, scheme) {
            skipped.push(format!("{scheme}: {e}"));
            continue;
        }
        let o = run_trial(cfg, scheme, 0)?;
        checks.push(SchemeCheck {
            scheme,
            interference_residual: o.interference_residual,
            ris_residual: o.ris_residual,
            recovery_err: o.recovery_err,
            passed: o.interference_residual <= RESIDUAL_LIMIT && o.recovery_err <= RECOVERY_LIMIT,
        });
    }
    Ok(VerifyReport {
        warnings: report.warnings,
        checks,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kd: usize, n: usize, ms: usize, l: usize) -> SystemConfig {
        let mut c = SystemConfig::with_dims(kd, n, ms, l);
        c.seed = 42;
        c.snr_grid_db = vec![20.0, 40.0];
        c
    }

    #[test]
    fn zero_trials_is_empty() {
        let r = run_experiment(&cfg(2, 2, 2, 16), SchemeId::NoCsi, 0, 1).unwrap();
        assert!(r.trials.is_empty());
        assert_eq!(r.aggregate.trials, 0);
        assert!(r.aggregate.violations().is_empty());
    }

    #[test]
    fn nocsi_batch_residuals() {
        let r = run_experiment(&cfg(2, 2, 2, 16), SchemeId::NoCsi, 100, 0).unwrap();
        assert_eq!(r.trials.len(), 100);
        assert!(r.aggregate.max_interference_residual <= RESIDUAL_LIMIT);
        assert!(r.aggregate.violations().is_empty());
    }

    #[test]
    fn same_seed_same_bytes() {
        let c = cfg(2, 2, 6, 20);
        let a = run_experiment(&c, SchemeId::Dcsi, 3, 1).unwrap().to_json().unwrap();
        let b = run_experiment(&c, SchemeId::Dcsi, 3, 2).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_differ() {
        let a = run_trial(&cfg(2, 2, 6, 16), SchemeId::Icsi, 0).unwrap();
        let b = run_trial(&cfg(2, 2, 6, 16), SchemeId::Icsi, 1).unwrap();
        assert_ne!(a.sent, b.sent);
    }

    #[test]
    fn infeasible_combinations() {
        assert!(matches!(
            run_experiment(&cfg(2, 2, 5, 16), SchemeId::Icsi, 1, 1),
            Err(Error::NotApplicable(_))
        ));
        assert!(run_experiment(&cfg(2, 3, 9, 36), SchemeId::NoCsi, 1, 1).is_err());
    }

    #[test]
    fn aggregate_recomputes() {
        let r = run_experiment(&cfg(2, 2, 6, 16), SchemeId::Icsi, 4, 1).unwrap();
        assert_eq!(Aggregate::from_rows(&r.trials), r.aggregate);
        let slope = r.aggregate.mean_empirical_dof.unwrap();
        assert!((slope - 6.0).abs() < 0.05, "{slope}");
    }

    #[test]
    fn trace_matches_trial() {
        let c = cfg(2, 2, 6, 20);
        let t = dcsi_trace(&c, 0).unwrap();
        assert_eq!(t.lines().count(), 7);
        assert!(t.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    }

    #[test]
    fn verify_reports_skips() {
        let v = verify_config(&cfg(2, 2, 2, 16)).unwrap();
        assert_eq!(v.checks.len(), 1);
        assert_eq!(v.skipped.len(), 2);
        assert!(v.passed());
    }
}
