//! Two-branch TCN + attention cost model.
//!
//! The cost history (15 × 1) and the term codes of the forecast days
//! (7 × 10) each pass through their own TCN stack. Their feature rows are
//! fused by dot-product attention, queried by the last cost row, and a dense
//! head maps the fused vector to the 7 forecast days. Training minimises MSE
//! on min-max normalized targets with per-sample Adam updates.

use std::io::{Read, Write};

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::calendar::{encode_date_range, SolarTermVector, TermBoundaryTable, CODE_WIDTH};
use crate::error::{Error, Result};
use crate::neuralcore::{
    attention_fuse, dense, AdamConfig, Bound, DenseLayer, ParamSet, Tape, Tcn, Var,
};
use crate::pipeline::{
    fit_normalizer, make_windows, Normalizer, SeriesFrame, WindowSample, WindowSpec,
};
use crate::seeding::derive_seed;

pub const FORECAST_HEADER: [&str; 3] = ["product_id", "date", "predicted_cost"];

#[derive(Debug, Clone, PartialEq)]
pub struct ForecasterConfig {
    pub window: WindowSpec,
    pub channels: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            window: WindowSpec::default(),
            channels: 16,
            kernel_size: 3,
            dilations: vec![1, 2],
        }
    }
}

impl ForecasterConfig {
    fn validate(&self) -> Result<()> {
        if self.channels == 0
            || self.kernel_size == 0
            || self.dilations.is_empty()
            || self.dilations.contains(&0)
        {
            return Err(Error::InvalidInput(
                "forecaster needs channels >= 1, kernel >= 1 and at least one dilation >= 1".into(),
            ));
        }
        if self.window.input_days == 0 || self.window.horizon == 0 {
            return Err(Error::InvalidInput(
                "window lengths must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecasterModel {
    pub product_id: String,
    pub config: ForecasterConfig,
    pub params: ParamSet,
    pub cost_branch: Tcn,
    pub term_branch: Tcn,
    pub head: DenseLayer,
    pub normalizer: Normalizer,
}

impl ForecasterModel {
    pub fn new(
        product_id: impl Into<String>,
        config: ForecasterConfig,
        normalizer: Normalizer,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let cost_branch = Tcn::new(
            &mut params,
            "cost",
            1,
            config.channels,
            config.kernel_size,
            &config.dilations,
            &mut rng,
        );
        let term_branch = Tcn::new(
            &mut params,
            "term",
            CODE_WIDTH,
            config.channels,
            config.kernel_size,
            &config.dilations,
            &mut rng,
        );
        let head = DenseLayer::new(
            &mut params,
            "head",
            config.channels,
            config.window.horizon,
            &mut rng,
        );
        Ok(Self {
            product_id: product_id.into(),
            config,
            params,
            cost_branch,
            term_branch,
            head,
            normalizer,
        })
    }

    fn check_inputs(&self, history: &[f64], future_terms: &[SolarTermVector]) -> Result<()> {
        let w = self.config.window;
        if history.len() != w.input_days {
            return Err(Error::InvalidInput(format!(
                "history must have {} days, got {}",
                w.input_days,
                history.len()
            )));
        }
        if future_terms.len() != w.horizon {
            return Err(Error::InvalidInput(format!(
                "future terms must cover {} days, got {}",
                w.horizon,
                future_terms.len()
            )));
        }
        Ok(())
    }

    /// Builds the forward graph on `tape` (which should be empty) and returns
    /// the parameter binding and the normalized outputs.
    pub fn forward(
        &self,
        tape: &mut Tape,
        history: &[f64],
        future_terms: &[SolarTermVector],
    ) -> Result<(Bound, Vec<Var>)> {
        self.check_inputs(history, future_terms)?;
        let bound = self.params.bind(tape);
        let cost_in: Vec<Vec<Var>> = history.iter().map(|&v| vec![tape.leaf(v)]).collect();
        let term_in: Vec<Vec<Var>> = future_terms
            .iter()
            .map(|code| code.to_f64().iter().map(|&b| tape.leaf(b)).collect())
            .collect();
        let cost_feats = self.cost_branch.forward(tape, bound, &cost_in);
        let term_feats = self.term_branch.forward(tape, bound, &term_in);
        let fused = attention_fuse(tape, &cost_feats, &term_feats)?;
        let out = dense(tape, bound, &self.head, &fused.output)?;
        Ok((bound, out))
    }

    /// MSE of one window with the current parameters.
    pub fn sample_loss(&self, tape: &mut Tape, sample: &WindowSample) -> Result<f64> {
        tape.clear();
        let (_, out) = self.forward(tape, &sample.history, &sample.future_terms)?;
        let loss = tape.mse(&out, &sample.target)?;
        Ok(tape.value(loss))
    }

    pub fn predict_normalized(
        &self,
        history: &[f64],
        future_terms: &[SolarTermVector],
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (_, out) = self.forward(&mut tape, history, future_terms)?;
        Ok(tape.values_of(&out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Peak learning rate.
    pub lr: f64,
    pub seed: u64,
    /// Anneal the learning rate from `lr` to `lr / 100` along a half cosine.
    pub cosine: bool,
    /// Decoupled weight decay, applied as `w *= 1 - lr * weight_decay` after
    /// each Adam step.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            seed: 0,
            cosine: false,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean sample loss with the final parameters.
    pub final_loss: f64,
    /// Mean per-sample loss seen during each epoch.
    pub loss_curve: Vec<f64>,
}

fn mean_loss(model: &ForecasterModel, tape: &mut Tape, samples: &[WindowSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += model.sample_loss(tape, s)?;
    }
    Ok(total / samples.len() as f64)
}

impl TrainConfig {
    /// Learning rate after `step` of `total` updates.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if !self.cosine || total == 0 {
            return self.lr;
        }
        let frac = step as f64 / total as f64;
        self.lr * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
    }
}

/// Per-sample Adam training; the visiting order is reshuffled every epoch
/// from `cfg.seed`.
pub fn train(
    model: &mut ForecasterModel,
    samples: &[WindowSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    if !(cfg.weight_decay >= 0.0 && cfg.lr * cfg.weight_decay < 1.0) {
        return Err(Error::InvalidInput(format!(
            "weight decay {} out of range",
            cfg.weight_decay
        )));
    }
    let adam = AdamConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut tape = Tape::new();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let total_steps = cfg.epochs * samples.len();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let s = &samples[i];
            tape.clear();
            let (bound, out) = model.forward(&mut tape, &s.history, &s.future_terms)?;
            let loss = tape.mse(&out, &s.target)?;
            total += tape.value(loss);
            tape.backward(loss)?;
            model.params.accumulate_grads(&tape, bound);
            let lr = cfg.lr_at(step, total_steps);
            step += 1;
            model.params.adam_step(lr, &adam);
            if cfg.weight_decay > 0.0 {
                let keep = 1.0 - lr * cfg.weight_decay;
                model
                    .params
                    .values_mut()
                    .iter_mut()
                    .for_each(|v| *v *= keep);
            }
        }
        let epoch_loss = total / samples.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Invariant(format!(
                "{}: non-finite training loss at epoch {epoch}",
                model.product_id
            )));
        }
        loss_curve.push(epoch_loss);
    }
    let final_loss = mean_loss(model, &mut tape, samples)?;
    Ok(TrainReport {
        final_loss,
        loss_curve,
    })
}

/// Forecasts raw costs from the last `input_days` raw values.
pub fn predict(
    model: &ForecasterModel,
    history: &[f64],
    future_terms: &[SolarTermVector],
) -> Result<Vec<f64>> {
    let scaled: Vec<f64> = history
        .iter()
        .map(|&v| model.normalizer.normalize(v))
        .collect();
    let out = model.predict_normalized(&scaled, future_terms)?;
    Ok(out
        .into_iter()
        .map(|y| model.normalizer.inverse(y))
        .collect())
}

/// Forecast for the days right after the end of `frame`.
pub fn forecast_next(
    model: &ForecasterModel,
    frame: &SeriesFrame,
    table: &TermBoundaryTable,
) -> Result<Vec<(NaiveDate, f64)>> {
    let w = model.config.window;
    if frame.len() < w.input_days {
        return Err(Error::InsufficientHistory {
            needed: w.input_days,
            available: frame.len(),
        });
    }
    let last = frame.last_date().ok_or(Error::EmptySeries)?;
    let first_day = last.checked_add_days(Days::new(1)).expect("date in range");
    let terms = encode_date_range(first_day, w.horizon, table);
    let history = &frame.values[frame.len() - w.input_days..];
    let preds = predict(model, history, &terms)?;
    Ok(preds
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            (
                first_day
                    .checked_add_days(Days::new(i as u64))
                    .expect("date in range"),
                p,
            )
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
}

pub fn evaluate(y: &[f64], y_hat: &[f64]) -> Result<MetricsReport> {
    if y.len() != y_hat.len() {
        return Err(Error::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput(
            "cannot evaluate empty sequences".into(),
        ));
    }
    let n = y.len() as f64;
    let (sq, abs) = y.iter().zip(y_hat).fold((0.0, 0.0), |(sq, abs), (a, b)| {
        let e = a - b;
        (sq + e * e, abs + e.abs())
    });
    let mse = sq / n;
    Ok(MetricsReport {
        mse,
        mae: abs / n,
        rmse: mse.sqrt(),
    })
}

/// Repeats the last observed value over the horizon.
pub fn naive_last_value(history: &[f64], horizon: usize) -> Vec<f64> {
    vec![history.last().copied().unwrap_or(0.0); horizon]
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub model: ForecasterConfig,
    pub train: TrainConfig,
    /// Trailing fraction of windows held out for validation.
    pub validation_fraction: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            model: ForecasterConfig::default(),
            train: TrainConfig::default(),
            validation_fraction: 0.2,
        }
    }
}

/// Validation scores of a fitted model next to the repeat-last-value baseline,
/// both in normalized space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub windows: usize,
    pub model: MetricsReport,
    pub naive: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedProduct {
    pub model: ForecasterModel,
    pub report: TrainReport,
    pub validation: Option<Validation>,
    pub train_windows: usize,
}

/// Chronological split of `count` windows into (train, held-out) counts.
pub fn split_counts(count: usize, validation_fraction: f64) -> (usize, usize) {
    let held = ((count as f64) * validation_fraction.clamp(0.0, 1.0)).round() as usize;
    let held = held.min(count.saturating_sub(1));
    (count - held, held)
}

/// Fits one product: the normalizer sees only the days covered by training
/// windows; the trailing windows are scored against the naive baseline.
pub fn fit_product(
    frame: &SeriesFrame,
    table: &TermBoundaryTable,
    cfg: &FitConfig,
) -> Result<FittedProduct> {
    let spec = cfg.model.window;
    if frame.len() < spec.span() {
        return Err(Error::InsufficientHistory {
            needed: spec.span(),
            available: frame.len(),
        });
    }
    let (n_train, n_val) = split_counts(spec.count(frame.len()), cfg.validation_fraction);
    let train_days = n_train - 1 + spec.span();
    let normalizer = fit_normalizer(&frame.values[..train_days])?;
    let windows = make_windows(frame, &normalizer, table, spec)?;
    let (train_set, val_set) = windows.split_at(n_train);

    let init_seed = derive_seed(cfg.train.seed, &["init", &frame.product_id]);
    let mut model = ForecasterModel::new(
        frame.product_id.clone(),
        cfg.model.clone(),
        normalizer,
        init_seed,
    )?;
    let report = train(&mut model, train_set, &cfg.train)?;

    let validation = if n_val > 0 {
        let mut truth = Vec::with_capacity(n_val * spec.horizon);
        let mut pred = Vec::with_capacity(truth.capacity());
        let mut naive = Vec::with_capacity(truth.capacity());
        for s in val_set {
            truth.extend_from_slice(&s.target);
            pred.extend(model.predict_normalized(&s.history, &s.future_terms)?);
            naive.extend(naive_last_value(&s.history, spec.horizon));
        }
        Some(Validation {
            windows: n_val,
            model: evaluate(&truth, &pred)?,
            naive: evaluate(&truth, &naive)?,
        })
    } else {
        None
    };
    Ok(FittedProduct {
        model,
        report,
        validation,
        train_windows: n_train,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub product_id: String,
    pub date: NaiveDate,
    pub predicted_cost: f64,
}

pub fn write_forecast_csv<W: Write>(writer: W, rows: &[ForecastRow]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(FORECAST_HEADER).map_err(Error::csv)?;
    for r in rows {
        wtr.write_record([
            r.product_id.clone(),
            r.date.to_string(),
            r.predicted_cost.to_string(),
        ])
        .map_err(Error::csv)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_forecast_csv<R: Read>(reader: R) -> Result<Vec<ForecastRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr
        .headers()
        .map_err(Error::csv)?
        .iter()
        .ne(FORECAST_HEADER)
    {
        return Err(Error::InvalidInput(format!(
            "forecast header must be {}",
            FORECAST_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(Error::csv)?;
        let date = rec[1]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad date {:?} in forecast.csv", &rec[1])))?;
        let predicted_cost = rec[2].parse().map_err(|_| {
            Error::InvalidInput(format!("bad number {:?} in forecast.csv", &rec[2]))
        })?;
        out.push(ForecastRow {
            product_id: rec[0].to_string(),
            date,
            predicted_cost,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::TermBoundaryTable;
    use crate::pipeline::SeriesFrame;

    fn tiny_config() -> ForecasterConfig {
        ForecasterConfig {
            channels: 4,
            ..Default::default()
        }
    }

    fn sample_frame(len: usize) -> SeriesFrame {
        let start = NaiveDate::from_ymd_opt(2023, 3, 1).unwrap();
        let values = (0..len)
            .map(|i| 5.0 + (i as f64 * 0.4).sin() + 0.1 * i as f64)
            .collect();
        SeriesFrame::from_start("p", start, values)
    }

    #[test]
    fn metrics_examples() {
        let m = evaluate(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m.mse, m.mae, m.rmse), (0.0, 0.0, 0.0));
        let m = evaluate(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!((m.mse, m.mae, m.rmse), (1.0, 1.0, 1.0));
        let m = evaluate(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!((m.mse - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.mae - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.rmse - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(matches!(
            evaluate(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn zero_head_predicts_bias() {
        let norm = Normalizer::new(2.0, 6.0).unwrap();
        let mut model = ForecasterModel::new("p", tiny_config(), norm, 1).unwrap();
        model.params.get_mut("head.weights").unwrap().fill(0.0);
        let bias: Vec<f64> = model.params.get("head.bias").unwrap().to_vec();
        let table = TermBoundaryTable::default();
        let terms = encode_date_range(NaiveDate::from_ymd_opt(2023, 6, 1).unwrap(), 7, &table);
        let out = predict(&model, &[3.0; 15], &terms).unwrap();
        assert_eq!(out.len(), 7);
        for (o, b) in out.iter().zip(&bias) {
            assert!((o - norm.inverse(*b)).abs() < 1e-12);
        }
        assert!(predict(&model, &[3.0; 14], &terms).is_err());
    }

    #[test]
    fn epochs_zero_is_noop_and_training_is_deterministic() {
        let table = TermBoundaryTable::default();
        let frame = sample_frame(30);
        let norm = fit_normalizer(&frame.values).unwrap();
        let samples = make_windows(&frame, &norm, &table, WindowSpec::default()).unwrap();
        let base = ForecasterModel::new("p", tiny_config(), norm, 5).unwrap();

        let mut m0 = base.clone();
        let r0 = train(
            &mut m0,
            &samples,
            &TrainConfig {
                epochs: 0,
                lr: 1e-2,
                seed: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(r0.loss_curve.is_empty());
        assert_eq!(m0.params, base.params);

        let cfg = TrainConfig {
            epochs: 3,
            lr: 1e-2,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut a = base.clone();
        let mut b = base.clone();
        let ra = train(&mut a, &samples, &cfg).unwrap();
        let rb = train(&mut b, &samples, &cfg).unwrap();
        assert_eq!(ra.loss_curve.len(), 3);
        assert_eq!(ra, rb);
        assert_eq!(a.params, b.params);

        assert!(train(&mut a, &[], &cfg).is_err());
    }

    #[test]
    fn memorizes_a_single_window() {
        let table = TermBoundaryTable::default();
        let frame = sample_frame(22);
        let norm = fit_normalizer(&frame.values).unwrap();
        let samples = make_windows(&frame, &norm, &table, WindowSpec::default()).unwrap();
        assert_eq!(samples.len(), 1);
        let mut model = ForecasterModel::new("p", ForecasterConfig::default(), norm, 3).unwrap();
        let report = train(
            &mut model,
            &samples,
            &TrainConfig {
                epochs: 200,
                lr: 1e-2,
                seed: 4,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(report.final_loss < 1e-3, "final loss {}", report.final_loss);
        let pred = predict(&model, &frame.values[..15], &samples[0].future_terms).unwrap();
        for (p, t) in pred.iter().zip(&frame.values[15..]) {
            assert!((p - t).abs() / t.abs() < 0.02, "pred {p} target {t}");
        }
    }

    #[test]
    fn cosine_schedule_and_decay_bounds() {
        let cfg = TrainConfig {
            lr: 2e-3,
            cosine: true,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(0, 100), 2e-3);
        assert!((cfg.lr_at(50, 100) - 2e-3 * 0.505).abs() < 1e-15);
        assert!((cfg.lr_at(100, 100) - 2e-5).abs() < 1e-15);
        let flat = TrainConfig {
            lr: 2e-3,
            ..TrainConfig::default()
        };
        assert_eq!(flat.lr_at(70, 100), 2e-3);

        let frame = sample_frame(40);
        let table = TermBoundaryTable::default();
        let norm = fit_normalizer(&frame.values).unwrap();
        let samples = make_windows(&frame, &norm, &table, WindowSpec::default()).unwrap();
        let mut model = ForecasterModel::new("P", tiny_config(), norm, 3).unwrap();
        let bad = TrainConfig {
            weight_decay: -1.0,
            ..TrainConfig::default()
        };
        assert!(train(&mut model, &samples, &bad).is_err());
    }

    #[test]
    fn split_counts_holds_out_tail() {
        assert_eq!(split_counts(100, 0.2), (80, 20));
        assert_eq!(split_counts(1, 0.2), (1, 0));
        assert_eq!(split_counts(3, 1.0), (1, 2));
    }

    #[test]
    fn fit_product_reports_validation() {
        let table = TermBoundaryTable::default();
        let frame = sample_frame(60);
        let cfg = FitConfig {
            model: tiny_config(),
            train: TrainConfig {
                epochs: 2,
                lr: 1e-2,
                seed: 1,
                ..TrainConfig::default()
            },
            validation_fraction: 0.2,
        };
        let fitted = fit_product(&frame, &table, &cfg).unwrap();
        let v = fitted.validation.unwrap();
        assert_eq!(fitted.train_windows + v.windows, 39);
        assert!(v.model.mse.is_finite());
        let next = forecast_next(&fitted.model, &frame, &table).unwrap();
        assert_eq!(next.len(), 7);
        assert_eq!(next[0].0, frame.last_date().unwrap().succ_opt().unwrap());
        assert!(fit_product(&sample_frame(21), &table, &cfg).is_err());
    }

    #[test]
    fn forecast_csv_round_trip() {
        let d = NaiveDate::from_ymd_opt(2023, 6, 30).unwrap();
        let rows = vec![
            ForecastRow {
                product_id: "P001".into(),
                date: d,
                predicted_cost: 4.25,
            },
            ForecastRow {
                product_id: "P001".into(),
                date: d.succ_opt().unwrap(),
                predicted_cost: 0.1 + 0.2,
            },
        ];
        let mut buf = Vec::new();
        write_forecast_csv(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(b"product_id,date,predicted_cost\nP001,2023-06-30,4.25\n"));
        assert_eq!(read_forecast_csv(buf.as_slice()).unwrap(), rows);
        assert!(read_forecast_csv("a,b,c\n".as_bytes()).is_err());
    }
}
