use planner_core::calendar::{encode_date_range, TermBoundaryTable};
use planner_core::demand::fit_demand;
use planner_core::forecaster::{
    fit_product, forecast_next, FitConfig, ForecasterConfig, TrainConfig,
};
use planner_core::gaopt::{evolve, plan_rows, ConstraintFlags, GaConfig, Problem, ProductContext};
use planner_core::intervals::{bootstrap_train, predict_interval, BootstrapConfig};
use planner_core::mcdm::{rank, select_top, CriteriaMatrix};
use planner_core::pipeline::{
    generate_synthetic, read_costs_csv, read_sales_csv, write_costs_csv, write_sales_csv,
    SynthConfig,
};

fn small_synth() -> (TermBoundaryTable, planner_core::pipeline::SyntheticData) {
    let table = TermBoundaryTable::default();
    let cfg = SynthConfig {
        products: 6,
        days: 200,
        seed: 9,
        ..SynthConfig::default()
    };
    let data = generate_synthetic(&cfg, &table).unwrap();
    (table, data)
}

#[test]
fn csv_round_trip_of_synthetic_data() {
    let (_, data) = small_synth();
    let mut buf = Vec::new();
    write_costs_csv(&mut buf, &data.costs).unwrap();
    assert_eq!(read_costs_csv(buf.as_slice()).unwrap(), data.costs);
    let sales = data.sales_series();
    let mut buf = Vec::new();
    write_sales_csv(&mut buf, &sales).unwrap();
    assert_eq!(read_sales_csv(buf.as_slice()).unwrap(), sales);
}

#[test]
fn demand_fit_recovers_synthetic_slope_sign() {
    let (_, data) = small_synth();
    for (s, truth) in data.sales_series().iter().zip(&data.truth) {
        let curve = fit_demand(s.product_id(), &s.price.values, &s.quantity.values).unwrap();
        assert!(
            curve.slope < 0.0,
            "{}: slope {}",
            truth.product_id,
            curve.slope
        );
    }
}

#[test]
fn rank_select_and_plan() {
    let (table, data) = small_synth();
    let sales = data.sales_series();

    let (ids, x): (Vec<String>, Vec<Vec<f64>>) = sales
        .iter()
        .zip(&data.costs)
        .map(|(s, c)| {
            let profit: f64 = (0..c.len())
                .map(|t| (s.price.values[t] - c.values[t]) * s.quantity.values[t])
                .sum();
            let volume: f64 = s.quantity.values.iter().sum();
            (s.product_id().to_string(), vec![profit, volume])
        })
        .unzip();
    let matrix =
        CriteriaMatrix::new(ids, vec!["total_profit".into(), "total_volume".into()], x).unwrap();
    let (weights, topsis) = rank(&matrix).unwrap();
    assert!((weights.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let chosen = select_top(&topsis, 3).unwrap();
    assert_eq!(chosen.len(), 3);

    let fit_cfg = FitConfig {
        model: ForecasterConfig {
            channels: 4,
            ..ForecasterConfig::default()
        },
        train: TrainConfig {
            epochs: 2,
            lr: 1e-3,
            seed: 1,
            ..TrainConfig::default()
        },
        validation_fraction: 0.2,
    };
    let boot = BootstrapConfig {
        replicas: 3,
        seed: 2,
        ..BootstrapConfig::default()
    };
    let mut contexts = Vec::new();
    for pid in &chosen {
        let i = sales.iter().position(|s| s.product_id() == pid).unwrap();
        let (s, c) = (&sales[i], &data.costs[i]);
        let fitted = fit_product(c, &table, &fit_cfg).unwrap();
        let next = forecast_next(&fitted.model, c, &table).unwrap();
        assert_eq!(next.len(), 7);
        let unit_cost = next.iter().map(|(_, v)| v).sum::<f64>() / 7.0;

        let ensemble = bootstrap_train(&s.quantity, &table, &boot).unwrap();
        let spec = boot.model.window;
        let n = s.quantity.len();
        let terms = encode_date_range(next[0].0, spec.horizon, &table);
        let interval = predict_interval(
            &ensemble,
            &s.quantity.values[n - spec.input_days..],
            &terms,
            0.95,
        )
        .unwrap();
        assert!(interval.lower <= interval.upper);

        let demand = fit_demand(pid.clone(), &s.price.values, &s.quantity.values).unwrap();
        let max_price = s.price.values.iter().copied().fold(0.0, f64::max);
        contexts.push(ProductContext {
            product_id: pid.clone(),
            unit_cost: unit_cost.max(0.01),
            demand,
            interval,
            price_cap: 2.0 * max_price.max(unit_cost),
        });
    }

    let problem = Problem::new(contexts, ConstraintFlags::default()).unwrap();
    let result = evolve(
        &problem,
        &GaConfig {
            pop: 40,
            gens: 40,
            seed: 3,
            ..GaConfig::default()
        },
    )
    .unwrap();
    let rows = plan_rows(&problem, &result.best);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.price > 0.0 && r.allocation > 0.0));
    let total: f64 = rows.iter().map(|r| r.expected_profit).sum();
    assert!((total - result.best_fitness).abs() < 1e-6 * (1.0 + total.abs()));
}
