//! Multi-day protocol: editorial days, then daily retraining on everything
//! collected so far, replicated over runs and loss kinds.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::losses::{LossKind, Sample};
use crate::ranker::{RankerModel, TrainConfig};
use crate::rng;
use crate::stats::{mean, welch_t_test};
use crate::world::{
    editorial_ranking, generate_world, simulate_day, RankingSource, SessionEvent, World,
    WorldConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub editorial_days: usize,
    pub total_days: usize,
    pub n_runs: usize,
    pub kinds: Vec<LossKind>,
    /// Continue from the previous day's model instead of re-initializing.
    pub warm_start: bool,
    pub world: WorldConfig,
    pub train: TrainConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            editorial_days: 3,
            total_days: 13,
            n_runs: 10,
            kinds: LossKind::all(1.5).to_vec(),
            warm_start: false,
            world: WorldConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.editorial_days == 0 || self.editorial_days > self.total_days {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= editorial_days <= total_days, got {} and {}",
                self.editorial_days, self.total_days
            )));
        }
        if self.n_runs == 0 {
            return Err(Error::InvalidConfig("n_runs must be >= 1".into()));
        }
        for kind in &self.kinds {
            kind.validate()?;
        }
        self.world.validate()?;
        self.train.validate()
    }

    pub fn master_seed(&self) -> u64 {
        self.world.master_seed
    }

    /// World of run `run`; shared by every loss kind.
    pub fn run_world_config(&self, run: usize) -> WorldConfig {
        WorldConfig {
            master_seed: rng::derive_key(self.world.master_seed, "run-world", &[run as u64]),
            ..self.world.clone()
        }
    }

    fn editorial_seed(&self, run: usize) -> u64 {
        rng::derive_key(self.world.master_seed, "run-editorial", &[run as u64])
    }

    fn train_seeds(&self, run: usize, day: usize) -> (u64, u64) {
        let coords = [run as u64, day as u64];
        (
            rng::derive_key(self.train.shuffle_seed, "model-init", &coords),
            rng::derive_key(self.train.shuffle_seed, "model-shuffle", &coords),
        )
    }
}

/// Daily reward of one (kind, run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    /// Summed watch seconds for days `1..=total_days`.
    pub daily_totals: Vec<f64>,
    /// Event log, kept only when requested.
    #[serde(skip)]
    pub events: Vec<SessionEvent>,
}

fn to_sample(event: &SessionEvent, watch_scale: f64) -> Sample {
    Sample::new(
        event.title_id,
        event.clicked,
        event.watch_seconds / watch_scale,
    )
}

/// Runs the protocol for one loss kind and run index.
pub fn run_protocol(config: &ProtocolConfig, kind: &LossKind, run: usize) -> Result<RunOutcome> {
    run_protocol_inner(config, kind, run, false)
}

/// Like [`run_protocol`], also returning every session event.
pub fn run_protocol_with_events(
    config: &ProtocolConfig,
    kind: &LossKind,
    run: usize,
) -> Result<RunOutcome> {
    run_protocol_inner(config, kind, run, true)
}

fn run_protocol_inner(
    config: &ProtocolConfig,
    kind: &LossKind,
    run: usize,
    keep_events: bool,
) -> Result<RunOutcome> {
    config.validate()?;
    kind.validate()?;
    let world = generate_world(&config.run_world_config(run))?;
    let editorial_seed = config.editorial_seed(run);
    let scale = config.world.watch_scale;

    let mut samples: Vec<Sample> = Vec::new();
    let mut events_log = Vec::new();
    let mut daily_totals = Vec::with_capacity(config.total_days);
    let mut model: Option<RankerModel> = None;

    for day in 1..=config.total_days {
        let events = if day <= config.editorial_days {
            let ranking = editorial_ranking(&world, day, editorial_seed);
            simulate_day(RankingSource::Fixed(&ranking), &world, day)?
        } else {
            let (init_seed, shuffle_seed) = config.train_seeds(run, day);
            let mut m = match model.take() {
                Some(prev) if config.warm_start => prev,
                _ => RankerModel::new(world.n_titles(), *kind, init_seed),
            };
            let train = TrainConfig {
                shuffle_seed,
                ..config.train.clone()
            };
            m.train(&samples, &train)?;
            let events = simulate_day(RankingSource::Model(&m), &world, day)?;
            model = Some(m);
            events
        };
        daily_totals.push(events.iter().map(|e| e.watch_seconds).sum());
        samples.extend(events.iter().map(|e| to_sample(e, scale)));
        if keep_events {
            events_log.extend(events);
        }
    }
    Ok(RunOutcome {
        daily_totals,
        events: events_log,
    })
}

/// All runs of one loss kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindRuns {
    pub label: String,
    pub kind: LossKind,
    /// `[run][day]` summed watch seconds.
    pub daily_totals: Vec<Vec<f64>>,
    /// Per-run total over the model-driven days.
    pub totals: Vec<f64>,
}

impl KindRuns {
    /// `[run][day]` mean watch seconds per user.
    pub fn daily_means(&self, n_users: usize) -> Vec<Vec<f64>> {
        self.daily_totals
            .iter()
            .map(|days| days.iter().map(|t| t / n_users as f64).collect())
            .collect()
    }

    /// Per-day mean watch seconds per user, averaged over runs.
    pub fn mean_curve(&self, n_users: usize) -> Vec<f64> {
        let per_run = self.daily_means(n_users);
        let n_days = per_run.first().map_or(0, Vec::len);
        (0..n_days)
            .map(|d| per_run.iter().map(|r| r[d]).sum::<f64>() / per_run.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reference: String,
    pub baseline: String,
    /// `100 * (mean(reference) / mean(baseline) - 1)`.
    pub lift_pct: f64,
    pub t: Option<f64>,
    pub dof: Option<f64>,
    /// Two-sided Welch p-value; `None` when both samples are constant.
    pub p_value: Option<f64>,
}

impl Comparison {
    pub fn significant(&self, level: f64) -> bool {
        self.p_value.is_some_and(|p| p < level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ProtocolConfig,
    pub kinds: Vec<KindRuns>,
    pub comparisons: Vec<Comparison>,
}

impl ExperimentReport {
    pub fn kind(&self, label: &str) -> Option<&KindRuns> {
        self.kinds.iter().find(|k| k.label == label)
    }

    pub fn comparison(&self, baseline: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.baseline == baseline)
    }
}

fn unique_labels(kinds: &[LossKind]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let base = kind.label();
        let seen = labels
            .iter()
            .filter(|l| l.split('#').next() == Some(base))
            .count();
        labels.push(if seen == 0 {
            base.to_string()
        } else {
            format!("{base}#{}", seen + 1)
        });
    }
    labels
}

/// Compares `reference` against `baseline` by lift and Welch test.
pub fn compare(reference: &KindRuns, baseline: &KindRuns) -> Result<Comparison> {
    let lift_pct = 100.0 * (mean(&reference.totals) / mean(&baseline.totals) - 1.0);
    let (t, dof, p_value) = match welch_t_test(&reference.totals, &baseline.totals) {
        Ok(w) => (Some(w.t), Some(w.dof), Some(w.p)),
        Err(Error::DegenerateVariance) => (None, None, None),
        Err(e) => return Err(e),
    };
    Ok(Comparison {
        reference: reference.label.clone(),
        baseline: baseline.label.clone(),
        lift_pct,
        t,
        dof,
        p_value,
    })
}

/// Every kind over every run. Runs of the same index share their world,
/// editorial lists and user streams across kinds.
pub fn run_many(config: &ProtocolConfig) -> Result<ExperimentReport> {
    Ok(run_many_with_events(config, 0)?.0)
}

/// Event log of one (kind, run).
#[derive(Debug, Clone, PartialEq)]
pub struct RunEvents {
    pub label: String,
    pub run: usize,
    pub events: Vec<SessionEvent>,
}

/// Like [`run_many`], also keeping the event logs of runs `0..event_runs`.
pub fn run_many_with_events(
    config: &ProtocolConfig,
    event_runs: usize,
) -> Result<(ExperimentReport, Vec<RunEvents>)> {
    config.validate()?;
    if config.kinds.is_empty() {
        return Err(Error::InvalidConfig("no loss kinds to run".into()));
    }
    if config.n_runs < 2 {
        return Err(Error::InvalidConfig(
            "significance needs n_runs >= 2".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = (0..config.kinds.len())
        .flat_map(|k| (0..config.n_runs).map(move |r| (k, r)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(k, r)| run_protocol_inner(config, &config.kinds[k], r, r < event_runs))
        .collect::<Result<Vec<_>>>()?;

    let labels = unique_labels(&config.kinds);
    let first_model_day = config.editorial_days;
    let kinds: Vec<KindRuns> = config
        .kinds
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            let runs = &outcomes[k * config.n_runs..(k + 1) * config.n_runs];
            let daily_totals: Vec<Vec<f64>> = runs.iter().map(|o| o.daily_totals.clone()).collect();
            let totals = daily_totals
                .iter()
                .map(|d| d[first_model_day..].iter().sum())
                .collect();
            KindRuns {
                label: labels[k].clone(),
                kind: *kind,
                daily_totals,
                totals,
            }
        })
        .collect();

    let reference = config
        .kinds
        .iter()
        .position(|k| matches!(k, LossKind::TweediePow { .. }))
        .unwrap_or(0);
    let comparisons = kinds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != reference)
        .map(|(_, base)| compare(&kinds[reference], base))
        .collect::<Result<Vec<_>>>()?;

    let logs = jobs
        .iter()
        .zip(outcomes)
        .filter(|((_, r), _)| *r < event_runs)
        .map(|(&(k, run), o)| RunEvents {
            label: labels[k].clone(),
            run,
            events: o.events,
        })
        .collect();
    let report = ExperimentReport {
        config: config.clone(),
        kinds,
        comparisons,
    };
    Ok((report, logs))
}

pub const REPORT_FILE: &str = "report.json";
pub const PLOT_FILE: &str = "plot_data.csv";

/// Structured report as JSON text.
pub fn report_json(report: &ExperimentReport) -> Result<String> {
    let n_users = report.config.world.n_users;
    let mut per_run_totals = Map::new();
    let mut daily_means = Map::new();
    for k in &report.kinds {
        per_run_totals.insert(k.label.clone(), json!(k.totals));
        daily_means.insert(
            k.label.clone(),
            json!({ "mean_over_runs": k.mean_curve(n_users), "per_run": k.daily_means(n_users) }),
        );
    }
    let mut lifts = Map::new();
    let mut p_values = Map::new();
    for c in &report.comparisons {
        let key = format!("{}_vs_{}", c.reference, c.baseline);
        lifts.insert(key.clone(), json!(c.lift_pct));
        p_values.insert(
            key,
            json!({ "p": c.p_value, "t": c.t, "dof": c.dof, "significant_at_0.05": c.significant(0.05) }),
        );
    }
    let value = json!({
        "config_echo": report.config,
        "per_run_totals": Value::Object(per_run_totals),
        "daily_means": Value::Object(daily_means),
        "lifts": Value::Object(lifts),
        "p_values": Value::Object(p_values),
    });
    serde_json::to_string_pretty(&value)
        .map_err(|e| Error::Degenerate(format!("report serialization: {e}")))
}

/// Per-day mean watch seconds per user, averaged over runs, one row per
/// (kind, day).
pub fn plot_csv(report: &ExperimentReport) -> String {
    let mut out = format!(
        "# master_seed={}\nkind,day,mean_watch_seconds\n",
        report.config.master_seed()
    );
    for k in &report.kinds {
        for (d, v) in k.mean_curve(report.config.world.n_users).iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", k.label, d + 1, v));
        }
    }
    out
}

/// Writes `report.json` and `plot_data.csv` into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.kinds.is_empty() {
        return Err(Error::InvalidConfig("report has no loss kinds".into()));
    }
    let json = report_json(report)?;
    let plot = plot_csv(report);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report_path = dir.join(REPORT_FILE);
    let plot_path = dir.join(PLOT_FILE);
    fs::write(&report_path, json + "\n").map_err(|e| Error::io(&report_path, e))?;
    fs::write(&plot_path, plot).map_err(|e| Error::io(&plot_path, e))?;
    Ok(vec![report_path, plot_path])
}

/// The world used by run `run`, for inspection.
pub fn run_world(config: &ProtocolConfig, run: usize) -> Result<World> {
    generate_world(&config.run_world_config(run))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ProtocolConfig {
        ProtocolConfig {
            editorial_days: 2,
            total_days: 4,
            n_runs: 2,
            world: WorldConfig {
                n_users: 60,
                n_titles: 15,
                master_seed: 5,
                ..WorldConfig::default()
            },
            train: TrainConfig {
                epochs: 2,
                batch_size: 32,
                learning_rate: 0.05,
                shuffle_seed: 1,
            },
            ..ProtocolConfig::default()
        }
    }

    #[test]
    fn editorial_only_protocol() {
        let cfg = ProtocolConfig {
            editorial_days: 4,
            ..tiny()
        };
        let a = run_protocol_with_events(&cfg, &LossKind::LogLoss, 0).unwrap();
        let b = run_protocol_with_events(&cfg, &LossKind::MeanSquared, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.events, b.events);
        assert_eq!(a.daily_totals.len(), 4);
    }

    #[test]
    fn protocol_is_deterministic() {
        let cfg = tiny();
        let kind = LossKind::TweediePow { p: 1.5 };
        assert_eq!(
            run_protocol(&cfg, &kind, 1).unwrap(),
            run_protocol(&cfg, &kind, 1).unwrap()
        );
    }

    #[test]
    fn daily_totals_are_event_sums() {
        let cfg = tiny();
        let out = run_protocol_with_events(&cfg, &LossKind::WeightedLogLoss, 0).unwrap();
        for day in 1..=cfg.total_days {
            let sum: f64 = out
                .events
                .iter()
                .filter(|e| e.day == day)
                .map(|e| e.watch_seconds)
                .sum();
            assert_eq!(sum, out.daily_totals[day - 1]);
        }
    }

    #[test]
    fn editorial_days_shared_across_kinds() {
        let cfg = tiny();
        let outs: Vec<RunOutcome> = LossKind::all(1.5)
            .iter()
            .map(|k| run_protocol(&cfg, k, 0).unwrap())
            .collect();
        for o in &outs[1..] {
            assert_eq!(o.daily_totals[..2], outs[0].daily_totals[..2]);
        }
    }

    #[test]
    fn shuffle_seed_only_touches_model_days() {
        let cfg = tiny();
        let other = ProtocolConfig {
            train: TrainConfig {
                shuffle_seed: 99,
                ..cfg.train.clone()
            },
            ..cfg.clone()
        };
        let kind = LossKind::LogLoss;
        let a = run_protocol_with_events(&cfg, &kind, 0).unwrap();
        let b = run_protocol_with_events(&other, &kind, 0).unwrap();
        assert_eq!(a.daily_totals[..2], b.daily_totals[..2]);
        assert_eq!(run_world(&cfg, 0).unwrap(), run_world(&other, 0).unwrap());
        assert_ne!(a.events, b.events);
    }

    #[test]
    fn duplicate_kind_gives_zero_lift() {
        let cfg = ProtocolConfig {
            kinds: vec![LossKind::LogLoss, LossKind::LogLoss],
            ..tiny()
        };
        let report = run_many(&cfg).unwrap();
        assert_eq!(report.kinds[1].label, "logloss#2");
        let c = &report.comparisons[0];
        assert_eq!(c.lift_pct, 0.0);
        assert!(!c.significant(0.05));
    }

    #[test]
    fn report_totals_exclude_editorial_days() {
        let report = run_many(&tiny()).unwrap();
        for k in &report.kinds {
            for (run, days) in k.daily_totals.iter().enumerate() {
                let sum: f64 = days[2..].iter().sum();
                assert!((sum - k.totals[run]).abs() <= 1e-9 * sum.abs().max(1.0));
            }
        }
        assert_eq!(report.comparisons.len(), 3);
        assert!(report.comparisons.iter().all(|c| c.reference == "tweedie"));
    }

    #[test]
    fn emitted_files() {
        let report = run_many(&tiny()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&report, dir.path()).unwrap();
        let plot = fs::read_to_string(&files[1]).unwrap();
        assert_eq!(plot.lines().count(), 2 + 4 * 4);
        let json: Value = serde_json::from_str(&fs::read_to_string(&files[0]).unwrap()).unwrap();
        for key in [
            "config_echo",
            "per_run_totals",
            "daily_means",
            "lifts",
            "p_values",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
        let first = fs::read(&files[0]).unwrap();
        emit_report(&report, dir.path()).unwrap();
        assert_eq!(first, fs::read(&files[0]).unwrap());
    }

    #[test]
    fn empty_kinds_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let report = ExperimentReport {
            config: tiny(),
            kinds: vec![],
            comparisons: vec![],
        };
        assert!(emit_report(&report, &dir.path().join("out")).is_err());
        assert!(!dir.path().join("out").exists());
        assert!(run_many(&ProtocolConfig {
            kinds: vec![],
            ..tiny()
        })
        .is_err());
    }

    #[test]
    fn invalid_protocols() {
        assert!(ProtocolConfig {
            editorial_days: 5,
            ..tiny()
        }
        .validate()
        .is_err());
        assert!(run_many(&ProtocolConfig {
            n_runs: 1,
            ..tiny()
        })
        .is_err());
    }
}
