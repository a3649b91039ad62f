//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. Every key has a default; unknown
//! keys are rejected so typos do not silently fall back to defaults.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub costs: String,
    pub sales: String,
    /// Optional solar-term boundary override; empty uses the built-in table.
    pub terms: String,
    pub forecast: String,
    pub loss_curves: String,
    pub forecast_metrics: String,
    pub models: String,
    pub intervals: String,
    pub intervals_daily: String,
    pub ranking: String,
    pub weights: String,
    pub selected: String,
    pub demand: String,
    pub plan: String,
    pub trace: String,
    pub baseline: String,
    pub manifest: String,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            costs: "costs.csv".into(),
            sales: "sales.csv".into(),
            terms: String::new(),
            forecast: "forecast.csv".into(),
            loss_curves: "loss_curves.csv".into(),
            forecast_metrics: "forecast_metrics.csv".into(),
            models: "models".into(),
            intervals: "intervals.csv".into(),
            intervals_daily: "intervals_daily.csv".into(),
            ranking: "ranking.csv".into(),
            weights: "weights.csv".into(),
            selected: "selected.csv".into(),
            demand: "demand.csv".into(),
            plan: "plan.csv".into(),
            trace: "ga_trace.csv".into(),
            baseline: "baseline_plan.csv".into(),
            manifest: "manifest.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub input_days: usize,
    pub horizon_days: usize,
    pub tcn_kernel: usize,
    pub tcn_dilations: Vec<usize>,
    pub tcn_channels: usize,
    pub train_epochs: usize,
    pub train_lr: f64,
    pub train_cosine: bool,
    pub train_weight_decay: f64,
    pub validation_fraction: f64,
    pub bootstrap_replicas: usize,
    pub bootstrap_min_fraction: f64,
    pub bootstrap_level: f64,
    pub bootstrap_channels: usize,
    pub bootstrap_dilations: Vec<usize>,
    pub bootstrap_epochs: usize,
    pub bootstrap_lr: f64,
    pub top_k: usize,
    pub ga_pop: usize,
    pub ga_gens: usize,
    pub ga_tournament: usize,
    pub ga_elitism: usize,
    pub ga_crossover_rate: f64,
    pub ga_mutation_prob: f64,
    pub ga_sigma_fraction: f64,
    pub ga_sigma_decay: f64,
    pub ga_constrain_demand: bool,
    pub ga_constrain_allocation: bool,
    /// Price ceiling as a multiple of the highest observed price.
    pub ga_price_cap_factor: f64,
    pub synth_products: usize,
    pub synth_days: usize,
    pub synth_start: NaiveDate,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            input_days: 15,
            horizon_days: 7,
            tcn_kernel: 3,
            tcn_dilations: vec![1, 2],
            tcn_channels: 16,
            train_epochs: 100,
            train_lr: 1e-3,
            train_cosine: false,
            train_weight_decay: 0.0,
            validation_fraction: 0.2,
            bootstrap_replicas: 100,
            bootstrap_min_fraction: 0.7,
            bootstrap_level: 0.95,
            bootstrap_channels: 8,
            bootstrap_dilations: vec![1],
            bootstrap_epochs: 30,
            bootstrap_lr: 1e-3,
            top_k: 32,
            ga_pop: 200,
            ga_gens: 500,
            ga_tournament: 3,
            ga_elitism: 1,
            ga_crossover_rate: 0.9,
            ga_mutation_prob: 0.1,
            ga_sigma_fraction: 0.1,
            ga_sigma_decay: 0.995,
            ga_constrain_demand: true,
            ga_constrain_allocation: true,
            ga_price_cap_factor: 2.0,
            synth_products: 61,
            synth_days: 730,
            synth_start: NaiveDate::from_ymd_opt(2021, 7, 1).expect("valid date"),
            paths: Paths::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> CliResult<Vec<usize>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn list(xs: &[usize]) -> String {
    xs.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Reads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a `KEY=VALUE` override.
    pub fn apply_override(&mut self, kv: &str) -> CliResult<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {kv:?} is not KEY=VALUE")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        let p = &mut self.paths;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "window.input_days" => self.input_days = parse(key, v)?,
            "window.horizon_days" => self.horizon_days = parse(key, v)?,
            "tcn.kernel" => self.tcn_kernel = parse(key, v)?,
            "tcn.dilations" => self.tcn_dilations = parse_list(key, v)?,
            "tcn.channels" => self.tcn_channels = parse(key, v)?,
            "train.epochs" => self.train_epochs = parse(key, v)?,
            "train.lr" => self.train_lr = parse(key, v)?,
            "train.cosine" => self.train_cosine = parse(key, v)?,
            "train.weight_decay" => self.train_weight_decay = parse(key, v)?,
            "train.validation_fraction" => self.validation_fraction = parse(key, v)?,
            "bootstrap.replicas" => self.bootstrap_replicas = parse(key, v)?,
            "bootstrap.min_fraction" => self.bootstrap_min_fraction = parse(key, v)?,
            "bootstrap.level" => self.bootstrap_level = parse(key, v)?,
            "bootstrap.channels" => self.bootstrap_channels = parse(key, v)?,
            "bootstrap.dilations" => self.bootstrap_dilations = parse_list(key, v)?,
            "bootstrap.epochs" => self.bootstrap_epochs = parse(key, v)?,
            "bootstrap.lr" => self.bootstrap_lr = parse(key, v)?,
            "topsis.top_k" => self.top_k = parse(key, v)?,
            "ga.pop" => self.ga_pop = parse(key, v)?,
            "ga.gens" => self.ga_gens = parse(key, v)?,
            "ga.tournament" => self.ga_tournament = parse(key, v)?,
            "ga.elitism" => self.ga_elitism = parse(key, v)?,
            "ga.crossover_rate" => self.ga_crossover_rate = parse(key, v)?,
            "ga.mutation_prob" => self.ga_mutation_prob = parse(key, v)?,
            "ga.sigma_fraction" => self.ga_sigma_fraction = parse(key, v)?,
            "ga.sigma_decay" => self.ga_sigma_decay = parse(key, v)?,
            "ga.constrain_demand" => self.ga_constrain_demand = parse(key, v)?,
            "ga.constrain_allocation" => self.ga_constrain_allocation = parse(key, v)?,
            "ga.price_cap_factor" => self.ga_price_cap_factor = parse(key, v)?,
            "synth.products" => self.synth_products = parse(key, v)?,
            "synth.days" => self.synth_days = parse(key, v)?,
            "synth.start" => self.synth_start = parse(key, v)?,
            "paths.costs" => p.costs = v.into(),
            "paths.sales" => p.sales = v.into(),
            "paths.terms" => p.terms = v.into(),
            "paths.forecast" => p.forecast = v.into(),
            "paths.loss_curves" => p.loss_curves = v.into(),
            "paths.forecast_metrics" => p.forecast_metrics = v.into(),
            "paths.models" => p.models = v.into(),
            "paths.intervals" => p.intervals = v.into(),
            "paths.intervals_daily" => p.intervals_daily = v.into(),
            "paths.ranking" => p.ranking = v.into(),
            "paths.weights" => p.weights = v.into(),
            "paths.selected" => p.selected = v.into(),
            "paths.demand" => p.demand = v.into(),
            "paths.plan" => p.plan = v.into(),
            "paths.trace" => p.trace = v.into(),
            "paths.baseline" => p.baseline = v.into(),
            "paths.manifest" => p.manifest = v.into(),
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.paths;
        vec![
            ("seed", self.seed.to_string()),
            ("window.input_days", self.input_days.to_string()),
            ("window.horizon_days", self.horizon_days.to_string()),
            ("tcn.kernel", self.tcn_kernel.to_string()),
            ("tcn.dilations", list(&self.tcn_dilations)),
            ("tcn.channels", self.tcn_channels.to_string()),
            ("train.epochs", self.train_epochs.to_string()),
            ("train.lr", self.train_lr.to_string()),
            ("train.cosine", self.train_cosine.to_string()),
            ("train.weight_decay", self.train_weight_decay.to_string()),
            (
                "train.validation_fraction",
                self.validation_fraction.to_string(),
            ),
            ("bootstrap.replicas", self.bootstrap_replicas.to_string()),
            (
                "bootstrap.min_fraction",
                self.bootstrap_min_fraction.to_string(),
            ),
            ("bootstrap.level", self.bootstrap_level.to_string()),
            ("bootstrap.channels", self.bootstrap_channels.to_string()),
            ("bootstrap.dilations", list(&self.bootstrap_dilations)),
            ("bootstrap.epochs", self.bootstrap_epochs.to_string()),
            ("bootstrap.lr", self.bootstrap_lr.to_string()),
            ("topsis.top_k", self.top_k.to_string()),
            ("ga.pop", self.ga_pop.to_string()),
            ("ga.gens", self.ga_gens.to_string()),
            ("ga.tournament", self.ga_tournament.to_string()),
            ("ga.elitism", self.ga_elitism.to_string()),
            ("ga.crossover_rate", self.ga_crossover_rate.to_string()),
            ("ga.mutation_prob", self.ga_mutation_prob.to_string()),
            ("ga.sigma_fraction", self.ga_sigma_fraction.to_string()),
            ("ga.sigma_decay", self.ga_sigma_decay.to_string()),
            ("ga.constrain_demand", self.ga_constrain_demand.to_string()),
            (
                "ga.constrain_allocation",
                self.ga_constrain_allocation.to_string(),
            ),
            ("ga.price_cap_factor", self.ga_price_cap_factor.to_string()),
            ("synth.products", self.synth_products.to_string()),
            ("synth.days", self.synth_days.to_string()),
            ("synth.start", self.synth_start.to_string()),
            ("paths.costs", p.costs.clone()),
            ("paths.sales", p.sales.clone()),
            ("paths.terms", p.terms.clone()),
            ("paths.forecast", p.forecast.clone()),
            ("paths.loss_curves", p.loss_curves.clone()),
            ("paths.forecast_metrics", p.forecast_metrics.clone()),
            ("paths.models", p.models.clone()),
            ("paths.intervals", p.intervals.clone()),
            ("paths.intervals_daily", p.intervals_daily.clone()),
            ("paths.ranking", p.ranking.clone()),
            ("paths.weights", p.weights.clone()),
            ("paths.selected", p.selected.clone()),
            ("paths.demand", p.demand.clone()),
            ("paths.plan", p.plan.clone()),
            ("paths.trace", p.trace.clone()),
            ("paths.baseline", p.baseline.clone()),
            ("paths.manifest", p.manifest.clone()),
        ]
    }

    /// The config as file text; reading it back yields an equal config.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        let counts = [
            ("window.input_days", self.input_days),
            ("window.horizon_days", self.horizon_days),
            ("tcn.kernel", self.tcn_kernel),
            ("tcn.channels", self.tcn_channels),
            ("train.epochs", self.train_epochs),
            ("bootstrap.replicas", self.bootstrap_replicas),
            ("bootstrap.channels", self.bootstrap_channels),
            ("bootstrap.epochs", self.bootstrap_epochs),
            ("topsis.top_k", self.top_k),
            ("ga.pop", self.ga_pop),
            ("ga.gens", self.ga_gens),
            ("ga.tournament", self.ga_tournament),
            ("ga.elitism", self.ga_elitism),
            ("synth.products", self.synth_products),
            ("synth.days", self.synth_days),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(CliError::Config(format!("{k} must be >= 1")));
            }
        }
        for (k, d) in [
            ("tcn.dilations", &self.tcn_dilations),
            ("bootstrap.dilations", &self.bootstrap_dilations),
        ] {
            if d.is_empty() || d.contains(&0) {
                return Err(CliError::Config(format!(
                    "{k} needs at least one dilation, all >= 1"
                )));
            }
        }
        let probs = [
            ("ga.crossover_rate", self.ga_crossover_rate),
            ("ga.mutation_prob", self.ga_mutation_prob),
            ("train.validation_fraction", self.validation_fraction),
        ];
        for (k, v) in probs {
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::Config(format!("{k} must lie in [0, 1]")));
            }
        }
        if !(self.bootstrap_level > 0.0 && self.bootstrap_level < 1.0) {
            return Err(CliError::Config(
                "bootstrap.level must lie in (0, 1)".into(),
            ));
        }
        if !(self.bootstrap_min_fraction > 0.0 && self.bootstrap_min_fraction <= 1.0) {
            return Err(CliError::Config(
                "bootstrap.min_fraction must lie in (0, 1]".into(),
            ));
        }
        if !(self.ga_sigma_decay > 0.0 && self.ga_sigma_decay <= 1.0)
            || !(self.ga_sigma_fraction >= 0.0)
        {
            return Err(CliError::Config(
                "ga.sigma_decay must lie in (0, 1], ga.sigma_fraction >= 0".into(),
            ));
        }
        if !(self.train_weight_decay >= 0.0 && self.train_lr * self.train_weight_decay < 1.0) {
            return Err(CliError::Config(
                "train.weight_decay must be >= 0 with train.lr * train.weight_decay < 1".into(),
            ));
        }
        if !(self.train_lr > 0.0 && self.bootstrap_lr > 0.0) {
            return Err(CliError::Config("learning rates must be positive".into()));
        }
        if !(self.ga_price_cap_factor >= 1.0) {
            return Err(CliError::Config("ga.price_cap_factor must be >= 1".into()));
        }
        if self.ga_elitism >= self.ga_pop {
            return Err(CliError::Config(
                "ga.elitism must be smaller than ga.pop".into(),
            ));
        }
        Ok(())
    }

    /// Resolves a configured path against the output directory.
    pub fn resolve(&self, out: &Path, rel: &str) -> PathBuf {
        out.join(rel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let mut back = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn file_syntax() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# reduced run\n\nseed = 7\ntcn.dilations = 1, 4\n  ga.gens=3  \nsynth.start = 2020-01-05\n")
            .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.tcn_dilations, vec![1, 4]);
        assert_eq!(cfg.ga_gens, 3);
        assert_eq!(
            cfg.synth_start,
            NaiveDate::from_ymd_opt(2020, 1, 5).unwrap()
        );
        assert!(cfg.apply_text("nonsense").is_err());
        assert!(cfg.apply_text("no.such.key = 1").is_err());
        assert!(cfg.apply_text("seed = -1").is_err());
        cfg.apply_override("topsis.top_k=5").unwrap();
        assert_eq!(cfg.top_k, 5);
    }

    #[test]
    fn invalid_values() {
        for kv in [
            "ga.pop=0",
            "bootstrap.level=1",
            "ga.mutation_prob=1.5",
            "tcn.dilations=0",
            "ga.elitism=200",
        ] {
            let mut cfg = RunConfig::default();
            cfg.apply_override(kv).unwrap();
            assert!(cfg.validate().is_err(), "{kv}");
        }
    }
}
