//! Contiguous-subseries bootstrap ensembles and normal-fit sales intervals.
//!
//! Each replica is a forecaster trained on its own contiguous slice of the
//! sales series, normalized on that slice alone. The interval for the next
//! week is a normal fit over the replicas' 7-day totals.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calendar::{SolarTermVector, TermBoundaryTable};
use crate::error::{Error, Result};
use crate::forecaster::{predict, train, ForecasterConfig, ForecasterModel, TrainConfig};
use crate::pipeline::{fit_normalizer, make_windows, SeriesFrame};
use crate::seeding::{derive_seed, rng_for};

pub const INTERVALS_HEADER: [&str; 6] = ["product_id", "level", "mean", "std", "lower", "upper"];

/// Two-sided normal interval on a product's 7-day sales total (kg).
#[derive(Debug, Clone, PartialEq)]
pub struct SalesInterval {
    pub product_id: String,
    pub level: f64,
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

impl SalesInterval {
    pub fn from_moments(
        product_id: impl Into<String>,
        mean: f64,
        std: f64,
        level: f64,
    ) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std < 0.0 {
            return Err(Error::InvalidInput(format!(
                "bad interval moments: mean {mean}, std {std}"
            )));
        }
        let z = z_for_level(level)?;
        Ok(Self {
            product_id: product_id.into(),
            level,
            mean,
            std,
            lower: (mean - z * std).max(0.0),
            upper: mean + z * std,
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Standard normal quantile `z` with `P(|Z| ≤ z) = level`.
pub fn z_for_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    let std_normal = Normal::standard();
    Ok(std_normal.inverse_cdf(0.5 * (1.0 + level)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub replicas: usize,
    /// Shortest slice as a fraction of the series length.
    pub min_fraction: f64,
    pub seed: u64,
    pub model: ForecasterConfig,
    /// `seed` inside is ignored; each replica derives its own.
    pub train: TrainConfig,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicas: 100,
            min_fraction: 0.7,
            seed: 0,
            model: ForecasterConfig {
                channels: 8,
                dilations: vec![1],
                ..ForecasterConfig::default()
            },
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
        }
    }
}

impl BootstrapConfig {
    fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::InvalidInput("replicas must be >= 1".into()));
        }
        if !(self.min_fraction > 0.0 && self.min_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "min_fraction must lie in (0, 1], got {}",
                self.min_fraction
            )));
        }
        Ok(())
    }
}

/// Half-open slice `[start, start + len)` of the training series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slice {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replica {
    pub index: usize,
    pub seed: u64,
    pub slice: Slice,
    pub model: ForecasterModel,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub product_id: String,
    pub replicas: Vec<Replica>,
}

fn min_slice_len(len: usize, min_fraction: f64) -> usize {
    ((min_fraction * len as f64).ceil() as usize).clamp(1, len.max(1))
}

/// Draws the slice for every replica. Slice `r` depends only on
/// `(seed, product_id, r)`.
pub fn plan_slices(
    product_id: &str,
    len: usize,
    cfg: &BootstrapConfig,
    span: usize,
) -> Result<Vec<Slice>> {
    cfg.validate()?;
    let shortest = min_slice_len(len, cfg.min_fraction);
    if len == 0 || shortest < span {
        return Err(Error::InsufficientHistory {
            needed: (span as f64 / cfg.min_fraction).ceil() as usize,
            available: len,
        });
    }
    Ok((0..cfg.replicas)
        .map(|r| {
            let mut rng = rng_for(
                cfg.seed,
                &["bootstrap", product_id, &r.to_string(), "slice"],
            );
            let l = rng.random_range(shortest..=len);
            let start = rng.random_range(0..=len - l);
            Slice { start, len: l }
        })
        .collect())
}

fn train_replica(
    frame: &SeriesFrame,
    table: &TermBoundaryTable,
    cfg: &BootstrapConfig,
    index: usize,
    slice: Slice,
) -> Result<Replica> {
    let pid = frame.product_id.as_str();
    let seed = derive_seed(cfg.seed, &["bootstrap", pid, &index.to_string()]);
    let sub = frame.slice(slice.start, slice.len);
    let normalizer = fit_normalizer(&sub.values)?;
    let windows = make_windows(&sub, &normalizer, table, cfg.model.window)?;
    let mut model = ForecasterModel::new(
        pid,
        cfg.model.clone(),
        normalizer,
        derive_seed(seed, &["init"]),
    )?;
    let train_cfg = TrainConfig {
        seed: derive_seed(seed, &["shuffle"]),
        ..cfg.train
    };
    let report = train(&mut model, &windows, &train_cfg)?;
    Ok(Replica {
        index,
        seed,
        slice,
        model,
        final_loss: report.final_loss,
    })
}

/// Trains `cfg.replicas` forecasters on random contiguous slices of `frame`.
pub fn bootstrap_train(
    frame: &SeriesFrame,
    table: &TermBoundaryTable,
    cfg: &BootstrapConfig,
) -> Result<Ensemble> {
    let slices = plan_slices(&frame.product_id, frame.len(), cfg, cfg.model.window.span())?;
    let replicas = slices
        .into_par_iter()
        .enumerate()
        .map(|(r, s)| train_replica(frame, table, cfg, r, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        product_id: frame.product_id.clone(),
        replicas,
    })
}

/// Weekly interval plus per-day ensemble moments.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalForecast {
    pub interval: SalesInterval,
    pub totals: Vec<f64>,
    pub daily_mean: Vec<f64>,
    pub daily_std: Vec<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Raw daily predictions of every replica from the last `input_days` raw
/// sales values.
pub fn replica_predictions(
    ensemble: &Ensemble,
    history: &[f64],
    future_terms: &[SolarTermVector],
) -> Result<Vec<Vec<f64>>> {
    if ensemble.replicas.is_empty() {
        return Err(Error::InvalidInput("empty ensemble".into()));
    }
    ensemble
        .replicas
        .iter()
        .map(|r| predict(&r.model, history, future_terms))
        .collect()
}

pub fn predict_interval_detailed(
    ensemble: &Ensemble,
    history: &[f64],
    future_terms: &[SolarTermVector],
    level: f64,
) -> Result<IntervalForecast> {
    let preds = replica_predictions(ensemble, history, future_terms)?;
    let totals: Vec<f64> = preds.iter().map(|p| p.iter().sum()).collect();
    let (mean, std) = mean_std(&totals);
    let horizon = preds[0].len();
    let (daily_mean, daily_std) = (0..horizon)
        .map(|d| mean_std(&preds.iter().map(|p| p[d]).collect::<Vec<_>>()))
        .unzip();
    Ok(IntervalForecast {
        interval: SalesInterval::from_moments(ensemble.product_id.clone(), mean, std, level)?,
        totals,
        daily_mean,
        daily_std,
    })
}

/// Normal-fit interval on the next 7-day total.
pub fn predict_interval(
    ensemble: &Ensemble,
    history: &[f64],
    future_terms: &[SolarTermVector],
    level: f64,
) -> Result<SalesInterval> {
    Ok(predict_interval_detailed(ensemble, history, future_terms, level)?.interval)
}

pub fn write_intervals_csv<W: Write>(writer: W, intervals: &[SalesInterval]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(INTERVALS_HEADER).map_err(Error::csv)?;
    for iv in intervals {
        wtr.write_record([
            iv.product_id.clone(),
            iv.level.to_string(),
            iv.mean.to_string(),
            iv.std.to_string(),
            iv.lower.to_string(),
            iv.upper.to_string(),
        ])
        .map_err(Error::csv)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_intervals_csv<R: Read>(reader: R) -> Result<Vec<SalesInterval>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(Error::csv)?.clone();
    if header.iter().ne(INTERVALS_HEADER) {
        return Err(Error::InvalidInput(format!(
            "intervals header must be {}",
            INTERVALS_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(Error::csv)?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| {
                Error::InvalidInput(format!("bad number {:?} in intervals.csv", &rec[i]))
            })
        };
        let iv = SalesInterval {
            product_id: rec[0].to_string(),
            level: num(1)?,
            mean: num(2)?,
            std: num(3)?,
            lower: num(4)?,
            upper: num(5)?,
        };
        if !(iv.lower >= 0.0 && iv.lower <= iv.upper) {
            return Err(Error::InvalidInput(format!(
                "{}: interval bounds out of order",
                iv.product_id
            )));
        }
        out.push(iv);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::encode_date_range;
    use crate::pipeline::WindowSpec;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn tiny_cfg(replicas: usize, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            replicas,
            seed,
            model: ForecasterConfig {
                channels: 4,
                dilations: vec![1],
                ..ForecasterConfig::default()
            },
            train: TrainConfig {
                epochs: 2,
                lr: 1e-2,
                seed: 0,
                ..TrainConfig::default()
            },
            ..BootstrapConfig::default()
        }
    }

    fn wave(n: usize) -> SeriesFrame {
        let start = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
        let v = (0..n)
            .map(|i| 50.0 + 10.0 * (i as f64 / 9.0).sin())
            .collect();
        SeriesFrame::from_start("S1", start, v)
    }

    #[test]
    fn z_values() {
        assert!((z_for_level(0.95).unwrap() - 1.959963984540054).abs() < 1e-8);
        assert!((z_for_level(0.90).unwrap() - 1.6448536269514722).abs() < 1e-8);
        assert!((z_for_level(0.99).unwrap() - 2.5758293035489004).abs() < 1e-8);
        assert!(z_for_level(0.0).is_err());
        assert!(z_for_level(1.0).is_err());
    }

    #[test]
    fn moment_examples() {
        let iv = SalesInterval::from_moments("p", 100.0, 10.0, 0.95).unwrap();
        assert!((iv.lower - 80.4).abs() < 0.01 && (iv.upper - 119.6).abs() < 0.01);
        let iv = SalesInterval::from_moments("p", 5.0, 10.0, 0.95).unwrap();
        assert_eq!(iv.lower, 0.0);
        let iv = SalesInterval::from_moments("p", 7.0, 0.0, 0.95).unwrap();
        assert_eq!((iv.lower, iv.upper), (7.0, 7.0));
        assert!(SalesInterval::from_moments("p", 7.0, -1.0, 0.95).is_err());
    }

    #[test]
    fn single_replica_slice_bounds() {
        let cfg = tiny_cfg(1, 3);
        let s = plan_slices("S1", 100, &cfg, 22).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s[0].len >= 70 && s[0].start + s[0].len <= 100);
    }

    #[test]
    fn slices_are_contiguous_bounded_and_seeded() {
        let cfg = tiny_cfg(100, 11);
        let a = plan_slices("S1", 365, &cfg, 22).unwrap();
        assert_eq!(a, plan_slices("S1", 365, &cfg, 22).unwrap());
        assert_ne!(a, plan_slices("S1", 365, &tiny_cfg(100, 12), 22).unwrap());
        for s in &a {
            assert!(s.len >= 256 && s.len <= 365, "{s:?}");
            assert!(s.start + s.len <= 365);
        }
        let distinct: std::collections::BTreeSet<_> = a.iter().map(|s| (s.start, s.len)).collect();
        assert!(distinct.len() > 50);
    }

    #[test]
    fn short_series_rejected() {
        let cfg = tiny_cfg(3, 1);
        // ceil(0.7 * 31) = 22 is just enough, 30 is not
        assert!(plan_slices("S1", 31, &cfg, 22).is_ok());
        assert!(matches!(
            plan_slices("S1", 30, &cfg, 22),
            Err(Error::InsufficientHistory { .. })
        ));
        assert!(bootstrap_train(&wave(30), &TermBoundaryTable::default(), &cfg).is_err());
    }

    #[test]
    fn identical_replicas_have_zero_spread() {
        let table = TermBoundaryTable::default();
        let frame = wave(60);
        let ens = bootstrap_train(&frame, &table, &tiny_cfg(1, 5)).unwrap();
        let mut twin = ens.clone();
        let r = twin.replicas[0].clone();
        twin.replicas.push(r);
        let spec = WindowSpec::default();
        let terms = encode_date_range(
            NaiveDate::from_ymd_opt(2022, 3, 2).unwrap(),
            spec.horizon,
            &table,
        );
        let hist = &frame.values[frame.len() - spec.input_days..];
        let f = predict_interval_detailed(&twin, hist, &terms, 0.95).unwrap();
        assert_eq!(f.interval.std, 0.0);
        assert_eq!(f.interval.lower, f.interval.upper);
        assert_eq!(f.interval.mean, f.interval.upper);
        assert!(f.daily_std.iter().all(|&s| s == 0.0));
        assert!((f.daily_mean.iter().sum::<f64>() - f.interval.mean).abs() < 1e-9);
    }

    #[test]
    fn ensemble_is_deterministic_and_nested_in_level() {
        let table = TermBoundaryTable::default();
        let frame = wave(80);
        let cfg = tiny_cfg(4, 9);
        let a = bootstrap_train(&frame, &table, &cfg).unwrap();
        let b = bootstrap_train(&frame, &table, &cfg).unwrap();
        assert_eq!(a, b);
        let terms = encode_date_range(NaiveDate::from_ymd_opt(2022, 3, 22).unwrap(), 7, &table);
        let hist = &frame.values[frame.len() - 15..];
        let narrow = predict_interval(&a, hist, &terms, 0.90).unwrap();
        let wide = predict_interval(&a, hist, &terms, 0.99).unwrap();
        assert!(wide.lower <= narrow.lower && narrow.upper <= wide.upper);
        assert!(narrow.std > 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let ivs = vec![
            SalesInterval::from_moments("P001", 120.5, 3.25, 0.95).unwrap(),
            SalesInterval::from_moments("P002", 1.0, 4.0, 0.9).unwrap(),
        ];
        let mut buf = Vec::new();
        write_intervals_csv(&mut buf, &ivs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("product_id,level,mean,std,lower,upper\n"));
        assert_eq!(read_intervals_csv(buf.as_slice()).unwrap(), ivs);
    }

    proptest! {
        #[test]
        fn wider_level_contains_narrower(mean in 0.0f64..500.0, std in 0.0f64..100.0, a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let n = SalesInterval::from_moments("p", mean, std, lo).unwrap();
            let w = SalesInterval::from_moments("p", mean, std, hi).unwrap();
            prop_assert!(w.lower <= n.lower && n.upper <= w.upper);
            prop_assert!(n.lower >= 0.0 && n.lower <= mean && mean <= n.upper);
        }
    }
}
