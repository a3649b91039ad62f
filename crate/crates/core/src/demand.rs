//! Linear demand curves fitted by ordinary least squares.

use std::io::Write;

use crate::error::{Error, Result};

pub const DEMAND_HEADER: [&str; 5] = [
    "product_id",
    "intercept",
    "slope",
    "r_squared",
    "anomalous_slope",
];

/// Daily volume as a linear function of unit price, `v = a + b·p`, clamped at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandCurve {
    pub product_id: String,
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub n_points: usize,
    /// Standard error of the slope estimate (0 for an exact fit).
    pub slope_std_error: f64,
}

impl DemandCurve {
    /// A non-negative slope means demand does not fall with price; planners
    /// treat such products as price-insensitive.
    pub fn anomalous_slope(&self) -> bool {
        self.slope >= 0.0
    }

    /// Daily volume at `price`, never negative.
    pub fn volume_at(&self, price: f64) -> Result<f64> {
        if !(price > 0.0) {
            return Err(Error::InvalidInput(format!(
                "price must be positive, got {price}"
            )));
        }
        Ok(self.volume_unchecked(price))
    }

    pub(crate) fn volume_unchecked(&self, price: f64) -> f64 {
        (self.intercept + self.slope * price).max(0.0)
    }
}

pub fn fit_demand(
    product_id: impl Into<String>,
    prices: &[f64],
    volumes: &[f64],
) -> Result<DemandCurve> {
    if prices.len() != volumes.len() {
        return Err(Error::LengthMismatch(prices.len(), volumes.len()));
    }
    let n = prices.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 observations, got {n}"
        )));
    }
    let nf = n as f64;
    let mean_p = prices.iter().sum::<f64>() / nf;
    let mean_v = volumes.iter().sum::<f64>() / nf;
    let (mut spp, mut spv, mut svv) = (0.0, 0.0, 0.0);
    for (&p, &v) in prices.iter().zip(volumes) {
        let (dp, dv) = (p - mean_p, v - mean_v);
        spp += dp * dp;
        spv += dp * dv;
        svv += dv * dv;
    }
    if spp <= 0.0 || prices.iter().all(|&p| p == prices[0]) {
        return Err(Error::DegenerateRegressor);
    }
    let slope = spv / spp;
    let intercept = mean_v - slope * mean_p;
    let sse: f64 = prices
        .iter()
        .zip(volumes)
        .map(|(&p, &v)| (v - intercept - slope * p).powi(2))
        .sum();
    // flat response: nothing to explain
    let r_squared = if svv > 0.0 {
        (1.0 - sse / svv).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let slope_std_error = if n > 2 {
        (sse / (nf - 2.0) / spp).sqrt()
    } else {
        0.0
    };
    Ok(DemandCurve {
        product_id: product_id.into(),
        intercept,
        slope,
        r_squared,
        n_points: n,
        slope_std_error,
    })
}

pub fn volume_at(curve: &DemandCurve, price: f64) -> Result<f64> {
    curve.volume_at(price)
}

pub fn write_demand_csv<W: Write>(writer: W, curves: &[DemandCurve]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(DEMAND_HEADER).map_err(Error::csv)?;
    for c in curves {
        wtr.write_record([
            c.product_id.clone(),
            c.intercept.to_string(),
            c.slope.to_string(),
            c.r_squared.to_string(),
            c.anomalous_slope().to_string(),
        ])
        .map_err(Error::csv)?;
    }
    wtr.flush()?;
    Ok(())
}
