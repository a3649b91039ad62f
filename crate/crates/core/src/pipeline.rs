//! Series ingestion, min-max scaling, sliding windows and synthetic data.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::calendar::{encode_date_range, SolarTermVector, TermBoundaryTable};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

pub const COSTS_HEADER: [&str; 3] = ["date", "product_id", "wholesale_cost"];
pub const SALES_HEADER: [&str; 4] = ["date", "product_id", "quantity_kg", "unit_price"];

/// A gapless daily series for one product.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    pub product_id: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl SeriesFrame {
    pub fn new(
        product_id: impl Into<String>,
        dates: Vec<NaiveDate>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::LengthMismatch(dates.len(), values.len()));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0].succ_opt() != Some(w[1])) {
            return Err(Error::InvalidInput(format!(
                "dates must be consecutive days: {} followed by {}",
                w[0], w[1]
            )));
        }
        Ok(Self {
            product_id: product_id.into(),
            dates,
            values,
        })
    }

    /// Builds a frame of consecutive days starting at `start`.
    pub fn from_start(product_id: impl Into<String>, start: NaiveDate, values: Vec<f64>) -> Self {
        let dates = consecutive_dates(start, values.len());
        Self {
            product_id: product_id.into(),
            dates,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.dates.last().copied()
    }

    /// Contiguous sub-series `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> SeriesFrame {
        SeriesFrame {
            product_id: self.product_id.clone(),
            dates: self.dates[start..start + len].to_vec(),
            values: self.values[start..start + len].to_vec(),
        }
    }
}

pub fn consecutive_dates(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    (0..n as u64)
        .map(|i| start.checked_add_days(Days::new(i)).expect("date in range"))
        .collect()
}

/// Min-max scaler. A degenerate range maps every value to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub x_min: f64,
    pub x_max: f64,
}

impl Normalizer {
    pub fn new(x_min: f64, x_max: f64) -> Result<Self> {
        if !(x_min <= x_max) {
            return Err(Error::InvalidInput(format!(
                "normalizer requires x_min <= x_max, got {x_min} > {x_max}"
            )));
        }
        Ok(Self { x_min, x_max })
    }

    pub fn range(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn normalize(&self, x: f64) -> f64 {
        let r = self.range();
        if r > 0.0 {
            (x - self.x_min) / r
        } else {
            0.0
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        self.x_min + y * self.range()
    }
}

pub fn fit_normalizer(values: &[f64]) -> Result<Normalizer> {
    let first = *values.first().ok_or(Error::EmptySeries)?;
    let (lo, hi) = values
        .iter()
        .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Normalizer::new(lo, hi)
}

pub fn normalize(n: &Normalizer, x: f64) -> f64 {
    n.normalize(x)
}

pub fn inverse_normalize(n: &Normalizer, y: f64) -> f64 {
    n.inverse(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub input_days: usize,
    pub horizon: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            input_days: 15,
            horizon: 7,
        }
    }
}

impl WindowSpec {
    pub fn span(&self) -> usize {
        self.input_days + self.horizon
    }

    /// Number of windows a series of `len` days yields.
    pub fn count(&self, len: usize) -> usize {
        (len + 1).saturating_sub(self.span())
    }
}

/// One training example: normalized history, the term codes of the forecast
/// days and the normalized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub history: Vec<f64>,
    pub future_terms: Vec<SolarTermVector>,
    pub target: Vec<f64>,
    pub anchor_date: NaiveDate,
}

/// Slides a `input_days + horizon` window over the series one day at a time.
pub fn make_windows(
    frame: &SeriesFrame,
    normalizer: &Normalizer,
    table: &TermBoundaryTable,
    spec: WindowSpec,
) -> Result<Vec<WindowSample>> {
    let len = frame.len();
    if spec.input_days == 0 || spec.horizon == 0 {
        return Err(Error::InvalidInput(
            "window lengths must be positive".into(),
        ));
    }
    if len < spec.span() {
        return Err(Error::InsufficientHistory {
            needed: spec.span(),
            available: len,
        });
    }
    let scaled: Vec<f64> = frame
        .values
        .iter()
        .map(|&v| normalizer.normalize(v))
        .collect();
    let samples = (0..spec.count(len))
        .map(|k| {
            let split = k + spec.input_days;
            WindowSample {
                history: scaled[k..split].to_vec(),
                future_terms: encode_date_range(frame.dates[split], spec.horizon, table),
                target: scaled[split..split + spec.horizon].to_vec(),
                anchor_date: frame.dates[split],
            }
        })
        .collect();
    Ok(samples)
}

/// Sorts observations by date and fills interior gaps with the last seen
/// value. When `start` is given, the series must begin exactly there.
pub fn forward_fill<T: Copy>(
    mut points: Vec<(NaiveDate, T)>,
    start: Option<NaiveDate>,
) -> Result<(Vec<NaiveDate>, Vec<T>)> {
    points.sort_by_key(|p| p.0);
    if let Some(w) = points.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidInput(format!(
            "duplicate observation on {}",
            w[0].0
        )));
    }
    let Some(&(first, _)) = points.first() else {
        return Err(Error::EmptySeries);
    };
    if let Some(s) = start {
        if first > s {
            return Err(Error::InvalidInput(format!(
                "leading gap: series starts {first}, expected {s}"
            )));
        }
        if first < s {
            points.retain(|p| p.0 >= s);
            if points.first().map(|p| p.0) != Some(s) {
                return Err(Error::InvalidInput(format!(
                    "leading gap: no observation on {s}"
                )));
            }
        }
    }
    let mut dates = Vec::with_capacity(points.len());
    let mut values = Vec::with_capacity(points.len());
    let mut iter = points.into_iter();
    let (mut cur, mut last) = iter.next().expect("non-empty");
    dates.push(cur);
    values.push(last);
    for (d, v) in iter {
        while let Some(next) = cur.succ_opt().filter(|n| *n < d) {
            dates.push(next);
            values.push(last);
            cur = next;
        }
        dates.push(d);
        values.push(v);
        cur = d;
        last = v;
    }
    Ok((dates, values))
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers().map_err(Error::csv)?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::InvalidInput(format!(
            "expected header `{}`, found `{}`",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn non_negative(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidInput(format!(
            "{what} must be a finite non-negative number, got {v}"
        )))
    }
}

/// Reads `date,product_id,wholesale_cost` rows into one frame per product,
/// ordered by product id.
pub fn read_costs_csv<R: Read>(reader: R) -> Result<Vec<SeriesFrame>> {
    #[derive(Deserialize)]
    struct Row {
        date: NaiveDate,
        product_id: String,
        wholesale_cost: f64,
    }
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &COSTS_HEADER)?;
    let mut by_product: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for rec in rdr.deserialize::<Row>() {
        let row = rec.map_err(Error::csv)?;
        let cost = non_negative(row.wholesale_cost, "wholesale_cost")?;
        by_product
            .entry(row.product_id)
            .or_default()
            .push((row.date, cost));
    }
    by_product
        .into_iter()
        .map(|(pid, pts)| {
            let (dates, values) =
                forward_fill(pts, None).map_err(|e| Error::InvalidInput(format!("{pid}: {e}")))?;
            Ok(SeriesFrame {
                product_id: pid,
                dates,
                values,
            })
        })
        .collect()
}

/// Daily sales of one product: volume and the realised unit price, on the
/// same dates.
#[derive(Debug, Clone, PartialEq)]
pub struct SalesSeries {
    pub quantity: SeriesFrame,
    pub price: SeriesFrame,
}

impl SalesSeries {
    pub fn product_id(&self) -> &str {
        &self.quantity.product_id
    }
}

pub fn read_sales_csv<R: Read>(reader: R) -> Result<Vec<SalesSeries>> {
    #[derive(Deserialize)]
    struct Row {
        date: NaiveDate,
        product_id: String,
        quantity_kg: f64,
        unit_price: f64,
    }
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &SALES_HEADER)?;
    let mut by_product: BTreeMap<String, Vec<(NaiveDate, (f64, f64))>> = BTreeMap::new();
    for rec in rdr.deserialize::<Row>() {
        let row = rec.map_err(Error::csv)?;
        let q = non_negative(row.quantity_kg, "quantity_kg")?;
        let p = non_negative(row.unit_price, "unit_price")?;
        by_product
            .entry(row.product_id)
            .or_default()
            .push((row.date, (q, p)));
    }
    by_product
        .into_iter()
        .map(|(pid, pts)| {
            let (dates, vals) =
                forward_fill(pts, None).map_err(|e| Error::InvalidInput(format!("{pid}: {e}")))?;
            let (q, p): (Vec<f64>, Vec<f64>) = vals.into_iter().unzip();
            Ok(SalesSeries {
                quantity: SeriesFrame {
                    product_id: pid.clone(),
                    dates: dates.clone(),
                    values: q,
                },
                price: SeriesFrame {
                    product_id: pid,
                    dates,
                    values: p,
                },
            })
        })
        .collect()
}

/// Writes frames in date-major order, products sorted within a date.
pub fn write_costs_csv<W: Write>(writer: W, costs: &[SeriesFrame]) -> Result<()> {
    let mut rows: Vec<(NaiveDate, &str, f64)> = costs
        .iter()
        .flat_map(|f| {
            f.dates
                .iter()
                .zip(&f.values)
                .map(move |(d, v)| (*d, f.product_id.as_str(), *v))
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(COSTS_HEADER).map_err(Error::csv)?;
    for (d, pid, v) in rows {
        wtr.write_record([d.to_string(), pid.to_string(), v.to_string()])
            .map_err(Error::csv)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_sales_csv<W: Write>(writer: W, sales: &[SalesSeries]) -> Result<()> {
    let mut rows: Vec<(NaiveDate, &str, f64, f64)> = Vec::new();
    for s in sales {
        if s.quantity.dates != s.price.dates {
            return Err(Error::InvalidInput(format!(
                "{}: quantity and price dates differ",
                s.product_id()
            )));
        }
        for ((d, q), p) in s
            .quantity
            .dates
            .iter()
            .zip(&s.quantity.values)
            .zip(&s.price.values)
        {
            rows.push((*d, s.product_id(), *q, *p));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(SALES_HEADER).map_err(Error::csv)?;
    for (d, pid, q, p) in rows {
        wtr.write_record([d.to_string(), pid.to_string(), q.to_string(), p.to_string()])
            .map_err(Error::csv)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub products: usize,
    pub days: usize,
    pub seed: u64,
    pub start: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            products: 61,
            days: 730,
            seed: 42,
            start: NaiveDate::from_ymd_opt(2021, 7, 1).expect("valid date"),
        }
    }
}

/// Ground-truth parameters behind one synthetic product.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProduct {
    pub product_id: String,
    pub base_cost: f64,
    pub markup: f64,
    /// Daily demand intercept (kg).
    pub demand_intercept: f64,
    /// Daily demand falls by this many kg per unit of price.
    pub demand_slope: f64,
    pub sales_noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub costs: Vec<SeriesFrame>,
    pub sales: Vec<SeriesFrame>,
    pub prices: Vec<SeriesFrame>,
    pub truth: Vec<SyntheticProduct>,
}

impl SyntheticData {
    pub fn sales_series(&self) -> Vec<SalesSeries> {
        self.sales
            .iter()
            .zip(&self.prices)
            .map(|(q, p)| SalesSeries {
                quantity: q.clone(),
                price: p.clone(),
            })
            .collect()
    }
}

pub fn synthetic_product_id(i: usize) -> String {
    format!("P{:03}", i + 1)
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Seasonal cost, price and sales series driven by the solar term of each day.
///
/// Per product: `cost = base * (1 + amp * profile[term]) + ar1_noise`, clamped
/// at a positive floor; `price = cost * markup + noise`;
/// `sales = max(0, a - b * price + noise)` with `a, b > 0`. All values are
/// rounded to 4 decimals so that the CSV text is exact.
pub fn generate_synthetic(cfg: &SynthConfig, table: &TermBoundaryTable) -> Result<SyntheticData> {
    if cfg.products == 0 {
        return Err(Error::InvalidInput(
            "product_count must be at least 1".into(),
        ));
    }
    if cfg.days < 30 {
        return Err(Error::InvalidInput(
            "synthetic series need at least 30 days".into(),
        ));
    }
    let dates = consecutive_dates(cfg.start, cfg.days);
    let terms: Vec<usize> = dates
        .iter()
        .map(|d| table.term_of_date(*d).index())
        .collect();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut out = SyntheticData {
        costs: Vec::with_capacity(cfg.products),
        sales: Vec::with_capacity(cfg.products),
        prices: Vec::with_capacity(cfg.products),
        truth: Vec::with_capacity(cfg.products),
    };
    for i in 0..cfg.products {
        let pid = synthetic_product_id(i);
        let mut rng = rng_for(cfg.seed, &["synth", &pid]);
        let base: f64 = rng.random_range(3.0..15.0);
        let amp: f64 = rng.random_range(0.2..0.45);
        let phase1: f64 = rng.random_range(0.0..24.0);
        let phase2: f64 = rng.random_range(0.0..24.0);
        let noise_sd = base * rng.random_range(0.015..0.04);
        let ar = 0.7;
        let markup: f64 = rng.random_range(1.3..1.8);
        let price_sd = base * markup * 0.04;
        let typical_volume: f64 = rng.random_range(20.0..120.0);
        let elasticity: f64 = rng.random_range(0.5..1.2);
        let typical_price = base * markup;
        let slope = elasticity * typical_volume / typical_price;
        let intercept = typical_volume + slope * typical_price;
        let sales_sd = typical_volume * rng.random_range(0.05..0.1);

        let profile: Vec<f64> = (0..24)
            .map(|t| {
                let t = t as f64;
                0.7 * (std::f64::consts::TAU * (t + phase1) / 24.0).sin()
                    + 0.3 * (2.0 * std::f64::consts::TAU * (t + phase2) / 24.0).sin()
            })
            .collect();

        let mut ar_state = 0.0;
        let mut cost = Vec::with_capacity(cfg.days);
        let mut price = Vec::with_capacity(cfg.days);
        let mut sales = Vec::with_capacity(cfg.days);
        for &term in &terms {
            ar_state = ar * ar_state + noise_sd * std_normal.sample(&mut rng);
            let c = (base * (1.0 + amp * profile[term]) + ar_state).max(0.2 * base);
            let p = (c * markup + price_sd * std_normal.sample(&mut rng)).max(0.01);
            let q = (intercept - slope * p + sales_sd * std_normal.sample(&mut rng)).max(0.0);
            cost.push(round4(c));
            price.push(round4(p));
            sales.push(round4(q));
        }
        out.costs.push(SeriesFrame {
            product_id: pid.clone(),
            dates: dates.clone(),
            values: cost,
        });
        out.prices.push(SeriesFrame {
            product_id: pid.clone(),
            dates: dates.clone(),
            values: price,
        });
        out.sales.push(SeriesFrame {
            product_id: pid.clone(),
            dates: dates.clone(),
            values: sales,
        });
        out.truth.push(SyntheticProduct {
            product_id: pid,
            base_cost: base,
            markup,
            demand_intercept: intercept,
            demand_slope: slope,
            sales_noise_sd: sales_sd,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn normalizer_fit_examples() {
        assert_eq!(
            fit_normalizer(&[0.0, 5.0, 10.0]).unwrap(),
            Normalizer {
                x_min: 0.0,
                x_max: 10.0
            }
        );
        assert_eq!(
            fit_normalizer(&[3.0]).unwrap(),
            Normalizer {
                x_min: 3.0,
                x_max: 3.0
            }
        );
        assert_eq!(
            fit_normalizer(&[2.5, 2.5, 7.5]).unwrap(),
            Normalizer {
                x_min: 2.5,
                x_max: 7.5
            }
        );
        assert_eq!(fit_normalizer(&[]), Err(Error::EmptySeries));
        assert_eq!(Error::EmptySeries.to_string(), "empty series");
    }

    #[test]
    fn normalize_examples() {
        let n = Normalizer::new(0.0, 10.0).unwrap();
        assert_eq!(normalize(&n, 5.0), 0.5);
        assert_eq!(normalize(&n, 0.0), 0.0);
        let flat = Normalizer::new(3.0, 3.0).unwrap();
        assert_eq!(normalize(&flat, 3.0), 0.0);
        assert_eq!(inverse_normalize(&flat, 0.0), 3.0);
        assert!(Normalizer::new(2.0, 1.0).is_err());
    }

    fn ramp(len: usize) -> SeriesFrame {
        SeriesFrame::from_start("x", d(2023, 1, 1), (0..len).map(|i| i as f64).collect())
    }

    #[test]
    fn window_counts() {
        let table = TermBoundaryTable::default();
        let n = Normalizer::new(0.0, 100.0).unwrap();
        let spec = WindowSpec::default();
        assert_eq!(make_windows(&ramp(22), &n, &table, spec).unwrap().len(), 1);
        assert_eq!(make_windows(&ramp(23), &n, &table, spec).unwrap().len(), 2);
        let err = make_windows(&ramp(21), &n, &table, spec).unwrap_err();
        assert!(err.to_string().starts_with("insufficient history"));
        for len in 22..60 {
            assert_eq!(
                make_windows(&ramp(len), &n, &table, spec).unwrap().len(),
                len - 21
            );
        }
    }

    #[test]
    fn window_contents() {
        let table = TermBoundaryTable::default();
        let frame = ramp(40);
        let n = fit_normalizer(&frame.values).unwrap();
        let windows = make_windows(&frame, &n, &table, WindowSpec::default()).unwrap();
        for (k, w) in windows.iter().enumerate() {
            let joined: Vec<f64> = w.history.iter().chain(&w.target).copied().collect();
            let expected: Vec<f64> = frame.values[k..k + 22]
                .iter()
                .map(|&v| n.normalize(v))
                .collect();
            assert_eq!(joined, expected);
            assert_eq!(w.anchor_date, frame.dates[k + 15]);
            assert_eq!(
                w.future_terms,
                encode_date_range(frame.dates[k + 15], 7, &table)
            );
        }
    }

    #[test]
    fn forward_fill_gaps() {
        let pts = vec![
            (d(2023, 1, 4), 4.0),
            (d(2023, 1, 1), 1.0),
            (d(2023, 1, 2), 2.0),
        ];
        let (dates, vals) = forward_fill(pts, None).unwrap();
        assert_eq!(dates, consecutive_dates(d(2023, 1, 1), 4));
        assert_eq!(vals, vec![1.0, 2.0, 2.0, 4.0]);

        let lead = forward_fill(vec![(d(2023, 1, 3), 1.0)], Some(d(2023, 1, 1)));
        assert!(lead.unwrap_err().to_string().contains("leading gap"));

        let dup = forward_fill(vec![(d(2023, 1, 3), 1.0), (d(2023, 1, 3), 2.0)], None);
        assert!(dup.is_err());
    }

    #[test]
    fn csv_roundtrip_and_gap_fill() {
        let text = "date,product_id,wholesale_cost\n2023-01-01,B,1.5\n2023-01-01,A,2\n2023-01-03,A,4\n2023-01-02,B,1.25\n";
        let frames = read_costs_csv(text.as_bytes()).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].product_id, "A");
        assert_eq!(frames[0].values, vec![2.0, 2.0, 4.0]);
        let mut buf = Vec::new();
        write_costs_csv(&mut buf, &frames).unwrap();
        assert_eq!(read_costs_csv(buf.as_slice()).unwrap(), frames);

        let bad = "date,product,wholesale_cost\n2023-01-01,B,1.5\n";
        assert!(read_costs_csv(bad.as_bytes()).is_err());
        let neg = "date,product_id,wholesale_cost\n2023-01-01,B,-1\n";
        assert!(read_costs_csv(neg.as_bytes()).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_positive() {
        let table = TermBoundaryTable::default();
        let cfg = SynthConfig {
            products: 1,
            days: 30,
            seed: 7,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg, &table).unwrap();
        let b = generate_synthetic(&cfg, &table).unwrap();
        assert_eq!(a, b);
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        write_sales_csv(&mut bytes_a, &a.sales_series()).unwrap();
        write_sales_csv(&mut bytes_b, &b.sales_series()).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert!(a.costs[0].values.iter().all(|&c| c > 0.0));
        assert!(generate_synthetic(
            &SynthConfig {
                days: 29,
                ..cfg.clone()
            },
            &table
        )
        .is_err());
        assert!(generate_synthetic(&SynthConfig { products: 0, ..cfg }, &table).is_err());
    }

    fn correlation(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn synthetic_price_sales_negatively_correlated_via_csv() {
        let table = TermBoundaryTable::default();
        let cfg = SynthConfig {
            products: 8,
            days: 400,
            seed: 11,
            ..Default::default()
        };
        let data = generate_synthetic(&cfg, &table).unwrap();
        let mut buf = Vec::new();
        write_sales_csv(&mut buf, &data.sales_series()).unwrap();
        let parsed = read_sales_csv(buf.as_slice()).unwrap();
        assert_eq!(parsed, data.sales_series());
        for s in parsed {
            let r = correlation(&s.price.values, &s.quantity.values);
            assert!(r < 0.0, "{}: correlation {r}", s.product_id());
            assert!(s.price.values.iter().all(|&p| p > 0.0));
        }
    }

    proptest! {
        #[test]
        fn normalize_monotone_and_bounded(lo in -100.0f64..100.0, width in 0.0f64..100.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let n = Normalizer::new(lo, lo + width).unwrap();
            let (xa, xb) = (lo + a * width, lo + b * width);
            let (ya, yb) = (n.normalize(xa), n.normalize(xb));
            prop_assert!((0.0..=1.0).contains(&ya));
            if xa <= xb { prop_assert!(ya <= yb); }
            if width > 1e-6 {
                prop_assert!((n.inverse(ya) - xa).abs() <= 1e-12);
            }
        }
    }
}
