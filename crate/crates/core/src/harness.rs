//! Experiment configuration, runners, metrics files and summaries.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkParams;
use crate::ratio::{run_hierarchical_training, MetaPpoConfig, RatioController, TrainingRecord, TrainingSetup};
use crate::tilt::RobustPpoConfig;
use crate::twin::{DntConfig, EpochBuffer};

/// First line of every metrics file.
pub const METRICS_VERSION_LINE: &str = "# twinrl-metrics v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Robust tilt learner, learned ratio.
    #[serde(rename = "robust+ppo")]
    RobustPpo,
    /// Plain clipped-surrogate tilt learner, learned ratio.
    #[serde(rename = "vanilla+ppo")]
    VanillaPpo,
    /// Robust tilt learner, uniformly random ratio.
    #[serde(rename = "robust+random")]
    RobustRandom,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::RobustPpo, Method::VanillaPpo, Method::RobustRandom];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::RobustPpo => "robust+ppo",
            Method::VanillaPpo => "vanilla+ppo",
            Method::RobustRandom => "robust+random",
        }
    }

    /// File-name friendly form.
    pub fn slug(self) -> &'static str {
        match self {
            Method::RobustPpo => "robust_ppo",
            Method::VanillaPpo => "vanilla_ppo",
            Method::RobustRandom => "robust_random",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s || m.slug() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    /// Meta epochs (first-level epochs) per run.
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Replaces the ratio controller with a constant.
    pub pinned_ratio: Option<f64>,
    /// Also write one row per collected transition.
    pub transition_log: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::RobustPpo,
            epochs: 500,
            batch_size: 64,
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: PathBuf::from("runs"),
            pinned_ratio: None,
            transition_log: false,
        }
    }
}

/// Full experiment description; the TOML sections mirror the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: RunConfig,
    pub network: NetworkParams,
    pub twin: DntConfig,
    pub tilt: RobustPpoConfig,
    pub meta: MetaPpoConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.setup(self.experiment.method, 0).validate()?;
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    /// The training setup for one method and seed.
    pub fn setup(&self, method: Method, seed: u64) -> TrainingSetup {
        let mut tilt = self.tilt.clone();
        if method == Method::VanillaPpo {
            tilt.kappa = 0.0;
        }
        let controller = match (self.experiment.pinned_ratio, method) {
            (Some(r), _) => RatioController::Fixed(r),
            (None, Method::RobustRandom) => RatioController::Random,
            (None, _) => RatioController::Learned,
        };
        TrainingSetup {
            network: self.network.clone(),
            dnt: self.twin,
            tilt,
            meta: self.meta.clone(),
            controller,
            epochs: self.experiment.epochs,
            batch_size: self.experiment.batch_size,
            seed,
        }
    }
}

/// One row of a metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub epoch: usize,
    pub method: String,
    pub ratio: f64,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub physical_delay: f64,
    pub cumulative_delay: f64,
    pub meta_reward: f64,
    pub meta_grad_norm: f64,
}

pub fn metrics_records(record: &TrainingRecord, method: &str, seed: u64) -> Vec<MetricsRecord> {
    record
        .epochs
        .iter()
        .map(|r| MetricsRecord {
            seed,
            epoch: r.epoch,
            method: method.to_string(),
            ratio: r.ratio,
            mean_reward: r.mean_reward,
            policy_loss: r.policy_loss,
            value_loss: r.value_loss,
            physical_delay: r.physical_delay,
            cumulative_delay: r.cumulative_delay,
            meta_reward: r.meta_reward,
            meta_grad_norm: r.meta_grad_norm,
        })
        .collect()
}

pub fn write_metrics<W: Write>(records: &[MetricsRecord], mut out: W) -> Result<()> {
    writeln!(out, "{METRICS_VERSION_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_metrics(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    write_metrics(records, std::io::BufWriter::new(file))
}

/// Reads a metrics file, rejecting any schema version other than the current one.
pub fn read_metrics<R: std::io::Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != METRICS_VERSION_LINE {
        return Err(Error::Config(format!("unsupported metrics header {:?}", first.trim_end())));
    }
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    read_metrics(fs::File::open(path)?)
}

/// Column order of the transition log.
pub fn transition_log_header(num_cells: usize) -> Vec<String> {
    let mut h: Vec<String> = ["epoch", "slot", "source", "ratio", "reward", "delay"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..num_cells).map(|c| format!("tilt_{c}")));
    h
}

pub fn transition_log_rows(epoch: usize, buffer: &EpochBuffer) -> Vec<Vec<String>> {
    buffer
        .transitions
        .iter()
        .map(|t| {
            let mut row = vec![
                epoch.to_string(),
                t.slot.to_string(),
                t.source.as_str().to_string(),
                buffer.ratio.to_string(),
                t.reward.to_string(),
                t.delay.to_string(),
            ];
            row.extend(t.action.tilts.as_slice().iter().map(|v| v.to_string()));
            row
        })
        .collect()
}

/// Files produced by one seeded run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub grad_norms: Vec<(usize, f64)>,
    pub metrics_path: Option<PathBuf>,
}

pub fn metrics_file_name(method: Method, seed: u64) -> String {
    format!("metrics_{}_seed{seed}.csv", method.slug())
}

/// Runs one method for one seed. With `out_dir` set, writes the metrics file,
/// the resolved manifest and (if enabled) the transition log.
pub fn run_seed(config: &ExperimentConfig, method: Method, seed: u64, out_dir: Option<&Path>) -> Result<RunOutput> {
    let setup = config.setup(method, seed);
    let mut log = match (out_dir, config.experiment.transition_log) {
        (Some(dir), true) => {
            let path = dir.join(format!("transitions_{}_seed{seed}.csv", method.slug()));
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(transition_log_header(config.network.num_cells))?;
            Some(w)
        }
        _ => None,
    };
    let record = run_hierarchical_training(&setup, &mut |e, buf| {
        if let Some(w) = log.as_mut() {
            for row in transition_log_rows(e, buf) {
                w.write_record(&row)?;
            }
        }
        Ok(())
    })?;
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    let records = metrics_records(&record, method.as_str(), seed);
    let mut metrics_path = None;
    if let Some(dir) = out_dir {
        let path = dir.join(metrics_file_name(method, seed));
        export_metrics(&records, &path)?;
        let mut manifest = config.clone();
        manifest.experiment.method = method;
        manifest.experiment.seeds = vec![seed];
        fs::write(dir.join(format!("manifest_{}_seed{seed}.toml", method.slug())), manifest.to_toml()?)?;
        metrics_path = Some(path);
    }
    Ok(RunOutput {
        records,
        grad_norms: record.grad_norms,
        metrics_path,
    })
}

/// Mean of `f` over the last `frac` of the records (at least one).
pub fn tail_mean(records: &[MetricsRecord], frac: f64, f: impl Fn(&MetricsRecord) -> f64) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    let n = ((records.len() as f64 * frac).ceil() as usize).clamp(1, records.len());
    records[records.len() - n..].iter().map(&f).sum::<f64>() / n as f64
}

/// Mean of `f` over the first `n` records.
pub fn head_mean(records: &[MetricsRecord], n: usize, f: impl Fn(&MetricsRecord) -> f64) -> f64 {
    let n = n.min(records.len()).max(1);
    records[..n].iter().map(&f).sum::<f64>() / n as f64
}

/// Converged quantities of one (method, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub seed: u64,
    pub final_cumulative_delay: f64,
    pub tail_mean_reward: f64,
    pub tail_meta_reward: f64,
    pub tail_ratio: f64,
}

pub fn summarize(method: &str, seed: u64, records: &[MetricsRecord]) -> SummaryRow {
    SummaryRow {
        method: method.to_string(),
        seed,
        final_cumulative_delay: records.last().map_or(0.0, |r| r.cumulative_delay),
        tail_mean_reward: tail_mean(records, 0.1, |r| r.mean_reward),
        tail_meta_reward: tail_mean(records, 0.1, |r| r.meta_reward),
        tail_ratio: tail_mean(records, 0.1, |r| r.ratio),
    }
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Every method on every configured seed.
pub fn compare(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for method in Method::ALL {
        for &seed in &config.experiment.seeds {
            let out = run_seed(config, method, seed, out_dir)?;
            rows.push(summarize(method.as_str(), seed, &out.records));
        }
    }
    Ok(rows)
}

/// Parameter swept by [`ablate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Kappa,
    Penalty,
    NoiseBound,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kappa" => Ok(SweepParam::Kappa),
            "penalty" | "xi" => Ok(SweepParam::Penalty),
            "noise_bound" | "epsilon" => Ok(SweepParam::NoiseBound),
            _ => Err(Error::Config(format!("unknown sweep parameter {s:?}"))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Kappa => "kappa",
            SweepParam::Penalty => "penalty",
            SweepParam::NoiseBound => "noise_bound",
        }
    }

    pub fn apply(self, config: &mut ExperimentConfig, value: f64) {
        match self {
            SweepParam::Kappa => config.tilt.kappa = value,
            SweepParam::Penalty => config.meta.penalty = value,
            SweepParam::NoiseBound => config.twin.noise_bound = value,
        }
    }
}

/// Runs the configured method once per (value, seed); each row's `method`
/// field reads `<method>:<param>=<value>`.
pub fn ablate(
    config: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    out_dir: Option<&Path>,
) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for &v in values {
        let mut cfg = config.clone();
        param.apply(&mut cfg, v);
        cfg.validate()?;
        let dir = match out_dir {
            Some(d) => {
                let sub = d.join(format!("{}_{v}", param.name()));
                fs::create_dir_all(&sub)?;
                Some(sub)
            }
            None => None,
        };
        for &seed in &cfg.experiment.seeds {
            let out = run_seed(&cfg, cfg.experiment.method, seed, dir.as_deref())?;
            let label = format!("{}:{}={v}", cfg.experiment.method, param.name());
            rows.push(summarize(&label, seed, &out.records));
        }
    }
    Ok(rows)
}

/// Scalar multiplications of one forward pass through layers of these widths.
pub fn width_products(widths: &[usize]) -> u64 {
    widths.windows(2).map(|w| (w[0] * w[1]) as u64).sum()
}

/// `(first-level, total)` multiplication counts for a whole run.
pub fn flops_from_widths(
    epochs: usize,
    batch_size: usize,
    tilt_policy: &[usize],
    tilt_value: &[usize],
    meta_policy: &[usize],
    meta_value: &[usize],
) -> (u64, u64) {
    let first = epochs as u64 * batch_size as u64 * (width_products(tilt_policy) + width_products(tilt_value));
    let second = epochs as u64 * (width_products(meta_policy) + width_products(meta_value));
    (first, first + second)
}

pub fn estimate_training_flops(config: &ExperimentConfig) -> (u64, u64) {
    let n_in = 2 * config.network.num_users;
    let widths = |input: usize, hidden: &[usize], output: usize| {
        let mut w = vec![input];
        w.extend(hidden);
        w.push(output);
        w
    };
    flops_from_widths(
        config.experiment.epochs,
        config.experiment.batch_size,
        &widths(n_in, &config.tilt.hidden, config.network.num_cells),
        &widths(n_in, &config.tilt.hidden, 1),
        &widths(2, &config.meta.hidden, 1),
        &widths(2, &config.meta.hidden, 1),
    )
}
