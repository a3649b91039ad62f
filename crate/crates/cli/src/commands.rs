//! One function per pipeline stage. Stages talk to each other only through
//! the files under the output directory.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::Days;
use rayon::prelude::*;

use planner_core::calendar::{encode_date_range, TermBoundaryTable};
use planner_core::demand::{fit_demand, write_demand_csv, DemandCurve};
use planner_core::forecaster::{
    evaluate, fit_product, forecast_next, read_forecast_csv, write_forecast_csv, FitConfig,
    FittedProduct, ForecastRow, ForecasterConfig, MetricsReport, TrainConfig,
};
use planner_core::gaopt::{
    evolve, plan_rows, random_search, write_plan_csv, write_trace_csv, ConstraintFlags, GaConfig,
    MutationConfig, Problem, ProductContext,
};
use planner_core::intervals::{
    bootstrap_train, predict_interval_detailed, read_intervals_csv, write_intervals_csv,
    BootstrapConfig, IntervalForecast, SalesInterval,
};
use planner_core::mcdm::{
    rank, read_ranking_csv, select_top, write_ranking_csv, CriteriaMatrix, DEFAULT_CRITERIA,
};
use planner_core::pipeline::{
    fit_normalizer, generate_synthetic, read_costs_csv, read_sales_csv, write_costs_csv,
    write_sales_csv, SalesSeries, SeriesFrame, SynthConfig, WindowSpec,
};
use planner_core::seeding::derive_seed;
use planner_core::Error;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{RunManifest, StageTimer};

/// Writes a file produced by `fill`, creating parent directories.
fn emit(
    path: &Path,
    timer: &mut StageTimer,
    fill: impl FnOnce(&mut Vec<u8>) -> planner_core::Result<()>,
) -> CliResult<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, buf).map_err(|e| CliError::io(path, e))?;
    timer.output(path);
    Ok(())
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(buf)
}

fn csv_err(e: csv::Error) -> planner_core::Error {
    Error::Csv(e.to_string())
}

pub fn load_table(cfg: &RunConfig, manifest: &mut RunManifest) -> CliResult<TermBoundaryTable> {
    if cfg.paths.terms.is_empty() {
        return Ok(TermBoundaryTable::default());
    }
    let bytes = manifest.read_input(Path::new(&cfg.paths.terms))?;
    Ok(TermBoundaryTable::from_csv_reader(bytes.as_slice())?)
}

fn window(cfg: &RunConfig) -> WindowSpec {
    WindowSpec {
        input_days: cfg.input_days,
        horizon: cfg.horizon_days,
    }
}

pub fn forecaster_config(cfg: &RunConfig) -> ForecasterConfig {
    ForecasterConfig {
        window: window(cfg),
        channels: cfg.tcn_channels,
        kernel_size: cfg.tcn_kernel,
        dilations: cfg.tcn_dilations.clone(),
    }
}

pub fn bootstrap_config(cfg: &RunConfig) -> BootstrapConfig {
    BootstrapConfig {
        replicas: cfg.bootstrap_replicas,
        min_fraction: cfg.bootstrap_min_fraction,
        seed: derive_seed(cfg.seed, &["intervals"]),
        model: ForecasterConfig {
            window: window(cfg),
            channels: cfg.bootstrap_channels,
            kernel_size: cfg.tcn_kernel,
            dilations: cfg.bootstrap_dilations.clone(),
        },
        train: TrainConfig {
            epochs: cfg.bootstrap_epochs,
            lr: cfg.bootstrap_lr,
            seed: 0,
            ..TrainConfig::default()
        },
    }
}

pub fn ga_config(cfg: &RunConfig) -> GaConfig {
    GaConfig {
        pop: cfg.ga_pop,
        gens: cfg.ga_gens,
        tournament: cfg.ga_tournament,
        elitism: cfg.ga_elitism,
        crossover_rate: cfg.ga_crossover_rate,
        mutation: MutationConfig {
            prob: cfg.ga_mutation_prob,
            sigma_fraction: cfg.ga_sigma_fraction,
            decay: cfg.ga_sigma_decay,
        },
        seed: derive_seed(cfg.seed, &["optimize"]),
    }
}

fn read_costs(cfg: &RunConfig, out: &Path, m: &mut RunManifest) -> CliResult<Vec<SeriesFrame>> {
    let bytes = m.read_input(&cfg.resolve(out, &cfg.paths.costs))?;
    Ok(read_costs_csv(bytes.as_slice())?)
}

fn read_sales(cfg: &RunConfig, out: &Path, m: &mut RunManifest) -> CliResult<Vec<SalesSeries>> {
    let bytes = m.read_input(&cfg.resolve(out, &cfg.paths.sales))?;
    Ok(read_sales_csv(bytes.as_slice())?)
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path, m: &mut RunManifest) -> CliResult<()> {
    let mut t = m.begin("synth");
    let table = load_table(cfg, m)?;
    let synth = SynthConfig {
        products: cfg.synth_products,
        days: cfg.synth_days,
        seed: cfg.seed,
        start: cfg.synth_start,
    };
    let data = generate_synthetic(&synth, &table)?;
    emit(&cfg.resolve(out, &cfg.paths.costs), &mut t, |w| {
        write_costs_csv(w, &data.costs)
    })?;
    emit(&cfg.resolve(out, &cfg.paths.sales), &mut t, |w| {
        write_sales_csv(w, &data.sales_series())
    })?;
    log::info!("synth: {} products x {} days", synth.products, synth.days);
    m.finish(t);
    Ok(())
}

struct ProductForecast {
    fitted: FittedProduct,
    rows: Vec<ForecastRow>,
}

pub fn cmd_forecast(cfg: &RunConfig, out: &Path, m: &mut RunManifest) -> CliResult<()> {
    let mut t = m.begin("forecast");
    let table = load_table(cfg, m)?;
    let frames = read_costs(cfg, out, m)?;
    let base = FitConfig {
        model: forecaster_config(cfg),
        train: TrainConfig {
            epochs: cfg.train_epochs,
            lr: cfg.train_lr,
            seed: 0,
            cosine: cfg.train_cosine,
            weight_decay: cfg.train_weight_decay,
        },
        validation_fraction: cfg.validation_fraction,
    };
    let results: Vec<planner_core::Result<ProductForecast>> = frames
        .par_iter()
        .map(|frame| {
            let mut fc = base.clone();
            fc.train.seed = derive_seed(cfg.seed, &["forecast", &frame.product_id]);
            let fitted = fit_product(frame, &table, &fc)?;
            let rows = forecast_next(&fitted.model, frame, &table)?
                .into_iter()
                .map(|(date, predicted_cost)| ForecastRow {
                    product_id: frame.product_id.clone(),
                    date,
                    predicted_cost,
                })
                .collect();
            Ok(ProductForecast { fitted, rows })
        })
        .collect();

    let mut done = Vec::new();
    for (frame, res) in frames.iter().zip(results) {
        match res {
            Ok(p) => done.push(p),
            Err(e @ Error::InsufficientHistory { .. }) => t.skip(&frame.product_id, e.to_string()),
            Err(e) => return Err(e.into()),
        }
    }
    let rows: Vec<ForecastRow> = done.iter().flat_map(|p| p.rows.iter().cloned()).collect();
    emit(&cfg.resolve(out, &cfg.paths.forecast), &mut t, |w| {
        write_forecast_csv(w, &rows)
    })?;
    emit(&cfg.resolve(out, &cfg.paths.loss_curves), &mut t, |w| {
        let mut wtr = csv_writer(w);
        wtr.write_record(["product_id", "epoch", "loss"])
            .map_err(csv_err)?;
        for p in &done {
            for (e, loss) in p.fitted.report.loss_curve.iter().enumerate() {
                wtr.write_record([
                    p.fitted.model.product_id.clone(),
                    e.to_string(),
                    loss.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        Ok(wtr.flush()?)
    })?;
    emit(
        &cfg.resolve(out, &cfg.paths.forecast_metrics),
        &mut t,
        |w| {
            let mut wtr = csv_writer(w);
            wtr.write_record([
                "product_id",
                "windows",
                "model_mse",
                "model_mae",
                "model_rmse",
                "naive_mse",
                "naive_mae",
                "naive_rmse",
            ])
            .map_err(csv_err)?;
            for p in &done {
                if let Some(v) = &p.fitted.validation {
                    let (a, b) = (v.model, v.naive);
                    let cells = [a.mse, a.mae, a.rmse, b.mse, b.mae, b.rmse].map(|x| x.to_string());
                    let mut rec = vec![p.fitted.model.product_id.clone(), v.windows.to_string()];
                    rec.extend(cells);
                    wtr.write_record(rec).map_err(csv_err)?;
                }
            }
            Ok(wtr.flush()?)
        },
    )?;
    let models = cfg.resolve(out, &cfg.paths.models);
    for p in &done {
        let path = models.join(format!("{}.params", p.fitted.model.product_id));
        emit(&path, &mut t, |w| p.fitted.model.params.save(w))?;
    }
    log::info!(
        "forecast: {} products forecast, {} skipped",
        done.len(),
        t.record.skipped.len()
    );
    m.finish(t);
    Ok(())
}

pub fn cmd_intervals(cfg: &RunConfig, out: &Path, m: &mut RunManifest) -> CliResult<()> {
    let mut t = m.begin("intervals");
    let table = load_table(cfg, m)?;
    let sales = read_sales(cfg, out, m)?;
    let bcfg = bootstrap_config(cfg);
    let spec = window(cfg);
    let results: Vec<planner_core::Result<IntervalForecast>> = sales
        .par_iter()
        .map(|s| {
            let q = &s.quantity;
            let ens = bootstrap_train(q, &table, &bcfg)?;
            let first = q.last_date().ok_or(Error::EmptySeries)? + Days::new(1);
            let terms = encode_date_range(first, spec.horizon, &table);
            predict_interval_detailed(
                &ens,
                &q.values[q.len() - spec.input_days..],
                &terms,
                cfg.bootstrap_level,
            )
        })
        .collect();
    let mut done = Vec::new();
    for (s, res) in sales.iter().zip(results) {
        match res {
            Ok(f) => done.push((s, f)),
            Err(e @ Error::InsufficientHistory { .. }) => t.skip(s.product_id(), e.to_string()),
            Err(e) => return Err(e.into()),
        }
    }
    let intervals: Vec<SalesInterval> = done.iter().map(|(_, f)| f.interval.clone()).collect();
    emit(&cfg.resolve(out, &cfg.paths.intervals), &mut t, |w| {
        write_intervals_csv(w, &intervals)
    })?;
    emit(&cfg.resolve(out, &cfg.paths.intervals_daily), &mut t, |w| {
        let mut wtr = csv_writer(w);
        wtr.write_record(["product_id", "date", "mean", "std"])
            .map_err(csv_err)?;
        for (s, f) in &done {
            let first = s.quantity.last_date().expect("non-empty series") + Days::new(1);
            for (d, (mean, std)) in f.daily_mean.iter().zip(&f.daily_std).enumerate() {
                let date = first + Days::new(d as u64);
                wtr.write_record([
                    s.product_id().to_string(),
                    date.to_string(),
                    mean.to_string(),
                    std.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        Ok(wtr.flush()?)
    })?;
    log::info!(
        "intervals: {} products, {} replicas each",
        done.len(),
        bcfg.replicas
    );
    m.finish(t);
    Ok(())
}

/// Total profit and total sales volume per product over the days where both
/// sales and costs are known.
pub fn criteria_from_history(
    sales: &[SalesSeries],
    costs: &[SeriesFrame],
    t: &mut StageTimer,
) -> CliResult<CriteriaMatrix> {
    let by_id: BTreeMap<&str, &SeriesFrame> =
        costs.iter().map(|f| (f.product_id.as_str(), f)).collect();
    let mut ids = Vec::new();
    let mut x = Vec::new();
    for s in sales {
        let Some(cost) = by_id.get(s.product_id()) else {
            t.skip(s.product_id(), "no cost history".into());
            continue;
        };
        let cost_start = cost.dates[0];
        let (mut profit, mut volume, mut days) = (0.0, 0.0, 0usize);
        for ((date, &q), &p) in s
            .quantity
            .dates
            .iter()
            .zip(&s.quantity.values)
            .zip(&s.price.values)
        {
            let offset = (*date - cost_start).num_days();
            if offset < 0 || offset as usize >= cost.len() {
                continue;
            }
            profit += (p - cost.values[offset as usize]) * q;
            volume += q;
            days += 1;
        }
        if days == 0 {
            t.skip(s.product_id(), "sales and cost dates do not overlap".into());
            continue;
        }
        ids.push(s.product_id().to_string());
        x.push(vec![profit, volume]);
    }
    let criteria = DEFAULT_CRITERIA.iter().map(|c| c.to_string()).collect();
    Ok(CriteriaMatrix::new(ids, criteria, x)?)
}

pub fn cmd_rank(cfg: &RunConfig, out: &Path, m: &mut RunManifest) -> CliResult<()> {
    let mut t = m.begin("rank");
    let sales = read_sales(cfg, out, m)?;
    let costs = read_costs(cfg, out, m)?;
    let matrix = criteria_from_history(&sales, &costs, &mut t)?;
    let (weights, result) = rank(&matrix)?;
    let n = result.product_ids.len();
    let k = if cfg.top_k > n {
        t.warn(format!(
            "topsis.top_k = {} exceeds {n} products; selecting all",
            cfg.top_k
        ));
        n
    } else {
        cfg.top_k
    };
    let selected = select_top(&result, k)?;
    emit(&cfg.resolve(out, &cfg.paths.ranking), &mut t, |w| {
        write_ranking_csv(w, &result)
    })?;
    emit(&cfg.resolve(out, &cfg.paths.weights), &mut t, |w| {
        let mut wtr = csv_writer(w);
        wtr.write_record(["criterion", "entropy", "utility", "weight"])
            .map_err(csv_err)?;
        for (j, c) in matrix.criteria.iter().enumerate() {
            wtr.write_record([
                c.clone(),
                weights.e[j].to_string(),
                weights.d[j].to_string(),
                weights.w[j].to_string(),
            ])
            .map_err(csv_err)?;
        }
        Ok(wtr.flush()?)
    })?;
    emit(&cfg.resolve(out, &cfg.paths.selected), &mut t, |w| {
        let mut wtr = csv_writer(w);
        wtr.write_record(["product_id"]).map_err(csv_err)?;
        for id in &selected {
            wtr.write_record([id]).map_err(csv_err)?;
        }
        Ok(wtr.flush()?)
    })?;
    log::info!("rank: {n} products scored, top {k} selected");
    m.finish(t);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSummary {
    pub products: usize,
    pub ga_profit: f64,
    pub random_profit: Option<f64>,
}

fn demand_curves(sales: &[SalesSeries], t: &mut StageTimer) -> Vec<DemandCurve> {
    let mut curves = Vec::new();
    for s in sales {
        match fit_demand(s.product_id(), &s.price.values, &s.quantity.values) {
            Ok(c) => curves.push(c),
            Err(e) => t.warn(format!("{}: no demand curve ({e})", s.product_id())),
        }
    }
    curves
}

pub fn cmd_optimize(
    cfg: &RunConfig,
    out: &Path,
    m: &mut RunManifest,
    baseline: bool,
) -> CliResult<OptimizeSummary> {
    let mut t = m.begin("optimize");
    let ranking = read_ranking_csv(
        m.read_input(&cfg.resolve(out, &cfg.paths.ranking))?
            .as_slice(),
    )?;
    let forecast = read_forecast_csv(
        m.read_input(&cfg.resolve(out, &cfg.paths.forecast))?
            .as_slice(),
    )?;
    let intervals = read_intervals_csv(
        m.read_input(&cfg.resolve(out, &cfg.paths.intervals))?
            .as_slice(),
    )?;
    let sales = read_sales(cfg, out, m)?;

    let curves = demand_curves(&sales, &mut t);
    emit(&cfg.resolve(out, &cfg.paths.demand), &mut t, |w| {
        write_demand_csv(w, &curves)
    })?;

    let mut costs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &forecast {
        costs
            .entry(r.product_id.as_str())
            .or_default()
            .push(r.predicted_cost);
    }
    let intervals: BTreeMap<&str, &SalesInterval> = intervals
        .iter()
        .map(|i| (i.product_id.as_str(), i))
        .collect();
    let curves: BTreeMap<&str, &DemandCurve> =
        curves.iter().map(|c| (c.product_id.as_str(), c)).collect();
    let max_price: BTreeMap<&str, f64> = sales
        .iter()
        .map(|s| {
            (
                s.product_id(),
                s.price.values.iter().copied().fold(0.0, f64::max),
            )
        })
        .collect();

    let mut contexts = Vec::new();
    for (_, pid, _) in ranking.iter().take(cfg.top_k) {
        let pid = pid.as_str();
        let (Some(cost), Some(iv), Some(curve)) =
            (costs.get(pid), intervals.get(pid), curves.get(pid))
        else {
            t.skip(pid, "missing forecast, interval or demand curve".into());
            continue;
        };
        let unit_cost = cost.iter().sum::<f64>() / cost.len() as f64;
        if !(unit_cost > 0.0) {
            t.skip(
                pid,
                format!("forecast unit cost {unit_cost} is not positive"),
            );
            continue;
        }
        if curve.anomalous_slope() {
            t.warn(format!(
                "{pid}: demand does not fall with price; treated as price-insensitive"
            ));
        }
        let observed = max_price.get(pid).copied().unwrap_or(0.0).max(unit_cost);
        contexts.push(ProductContext {
            product_id: pid.to_string(),
            unit_cost,
            demand: (*curve).clone(),
            interval: (*iv).clone(),
            price_cap: cfg.ga_price_cap_factor * observed,
        });
    }
    if contexts.is_empty() {
        return Err(Error::NoFeasiblePlan.into());
    }
    let flags = ConstraintFlags {
        constrain_demand: cfg.ga_constrain_demand,
        constrain_allocation: cfg.ga_constrain_allocation,
    };
    let problem = Problem::new(contexts, flags)?;
    for pid in problem.relaxed_products() {
        t.warn(format!(
            "{pid}: no positive price puts demand inside the interval; demand constraint dropped"
        ));
    }
    let ga = ga_config(cfg);
    let result = evolve(&problem, &ga)?;
    let plan = plan_rows(&problem, &result.best);
    emit(&cfg.resolve(out, &cfg.paths.plan), &mut t, |w| {
        write_plan_csv(w, &plan)
    })?;
    emit(&cfg.resolve(out, &cfg.paths.trace), &mut t, |w| {
        write_trace_csv(w, &result.trace)
    })?;

    let random_profit = if baseline {
        let rs = random_search(
            &problem,
            ga.pop * ga.gens,
            derive_seed(cfg.seed, &["optimize", "random"]),
        )?;
        let rows = plan_rows(&problem, &rs.best);
        emit(&cfg.resolve(out, &cfg.paths.baseline), &mut t, |w| {
            write_plan_csv(w, &rows)
        })?;
        Some(rs.best_fitness)
    } else {
        None
    };
    log::info!(
        "optimize: {} products, expected weekly profit {:.2}",
        problem.products.len(),
        result.best_fitness
    );
    m.finish(t);
    Ok(OptimizeSummary {
        products: problem.products.len(),
        ga_profit: result.best_fitness,
        random_profit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Raw,
    Normalized,
}

/// Scores forecast rows against the costs on the same dates.
pub fn cmd_evaluate(
    predictions: &Path,
    truth: &Path,
    space: Space,
    m: &mut RunManifest,
) -> CliResult<(usize, MetricsReport)> {
    let mut t = m.begin("evaluate");
    let preds = read_forecast_csv(m.read_input(predictions)?.as_slice())?;
    let frames = read_costs_csv(m.read_input(truth)?.as_slice())?;
    let by_id: BTreeMap<&str, &SeriesFrame> =
        frames.iter().map(|f| (f.product_id.as_str(), f)).collect();
    let mut normalizers = BTreeMap::new();
    let (mut y, mut y_hat) = (Vec::new(), Vec::new());
    let mut unmatched = 0usize;
    for r in &preds {
        let Some(frame) = by_id.get(r.product_id.as_str()) else {
            unmatched += 1;
            continue;
        };
        let offset = (r.date - frame.dates[0]).num_days();
        if offset < 0 || offset as usize >= frame.len() {
            unmatched += 1;
            continue;
        }
        let actual = frame.values[offset as usize];
        match space {
            Space::Raw => {
                y.push(actual);
                y_hat.push(r.predicted_cost);
            }
            Space::Normalized => {
                if !normalizers.contains_key(&r.product_id) {
                    normalizers.insert(r.product_id.clone(), fit_normalizer(&frame.values)?);
                }
                let n = &normalizers[&r.product_id];
                y.push(n.normalize(actual));
                y_hat.push(n.normalize(r.predicted_cost));
            }
        }
    }
    if unmatched > 0 {
        t.warn(format!(
            "{unmatched} predictions have no matching truth value"
        ));
    }
    if y.is_empty() {
        return Err(CliError::Input(
            "no prediction matches a truth value".into(),
        ));
    }
    let report = evaluate(&y, &y_hat)?;
    m.finish(t);
    Ok((y.len(), report))
}
