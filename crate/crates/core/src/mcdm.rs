//! Entropy-weighted TOPSIS ranking.
//!
//! Criteria are min-max scaled per column, weighted by the entropy method,
//! and each alternative is scored by its relative closeness to the ideal
//! point of the weighted matrix. All criteria are benefit-type.

use std::cmp::Ordering;
use std::io::Write;

use crate::error::{Error, Result};

pub const RANKING_HEADER: [&str; 5] = ["rank", "product_id", "score", "d_plus", "d_minus"];
pub const DEFAULT_CRITERIA: [&str; 2] = ["total_profit", "total_sales_volume"];

#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaMatrix {
    pub product_ids: Vec<String>,
    pub criteria: Vec<String>,
    /// Raw values, one row per product.
    pub x: Vec<Vec<f64>>,
}

impl CriteriaMatrix {
    pub fn new(product_ids: Vec<String>, criteria: Vec<String>, x: Vec<Vec<f64>>) -> Result<Self> {
        if product_ids.len() != x.len() {
            return Err(Error::LengthMismatch(product_ids.len(), x.len()));
        }
        check_shape(&x, criteria.len())?;
        Ok(Self {
            product_ids,
            criteria,
            x,
        })
    }

    pub fn normalized(&self) -> Result<Vec<Vec<f64>>> {
        normalize_criteria(&self.x)
    }
}

fn check_shape(x: &[Vec<f64>], m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidInput(
            "at least one criterion is required".into(),
        ));
    }
    if let Some(row) = x.iter().find(|r| r.len() != m) {
        return Err(Error::LengthMismatch(row.len(), m));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("criteria values must be finite".into()));
    }
    Ok(())
}

fn column_count(x: &[Vec<f64>]) -> usize {
    x.first().map_or(0, |r| r.len())
}

/// Column-wise min-max scaling; a constant column becomes all zeros.
pub fn normalize_criteria(x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if x.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 alternatives, got {}",
            x.len()
        )));
    }
    let m = column_count(x);
    check_shape(x, m)?;
    let mut z = vec![vec![0.0; m]; x.len()];
    for j in 0..m {
        let lo = x.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let hi = x.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if range > 0.0 {
            for (zr, xr) in z.iter_mut().zip(x) {
                zr[j] = (xr[j] - lo) / range;
            }
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyWeights {
    /// Information entropy per criterion.
    pub e: Vec<f64>,
    /// Utility `1 - e`.
    pub d: Vec<f64>,
    /// Weights, summing to one.
    pub w: Vec<f64>,
}

/// Weights from given entropies: `d = 1 - e`, `w = d / Σd`. All-zero
/// utilities give uniform weights.
pub fn weights_from_entropy(e: &[f64]) -> EntropyWeights {
    let d: Vec<f64> = e.iter().map(|ej| 1.0 - ej).collect();
    let total: f64 = d.iter().sum();
    let w = if total > 0.0 {
        d.iter().map(|dj| dj / total).collect()
    } else {
        vec![1.0 / e.len() as f64; e.len()]
    };
    EntropyWeights {
        e: e.to_vec(),
        d,
        w,
    }
}

/// Entropy method on a normalized matrix. `0·ln 0` is taken as 0 and a
/// column summing to zero carries no information (`e = 1`).
pub fn entropy_weights(z: &[Vec<f64>]) -> Result<EntropyWeights> {
    let n = z.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 alternatives, got {n}"
        )));
    }
    let m = column_count(z);
    check_shape(z, m)?;
    let ln_n = (n as f64).ln();
    let e: Vec<f64> = (0..m)
        .map(|j| {
            let col_sum: f64 = z.iter().map(|r| r[j]).sum();
            if col_sum <= 0.0 {
                return 1.0;
            }
            let h: f64 = z
                .iter()
                .map(|r| r[j] / col_sum)
                .filter(|&p| p > 0.0)
                .map(|p| p * p.ln())
                .sum();
            (-h / ln_n).clamp(0.0, 1.0)
        })
        .collect();
    Ok(weights_from_entropy(&e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopsisResult {
    pub product_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub d_plus: Vec<f64>,
    pub d_minus: Vec<f64>,
    pub ideal: Vec<f64>,
    pub anti_ideal: Vec<f64>,
    /// Row indices by descending score, ties by product id.
    pub ranking: Vec<usize>,
}

impl TopsisResult {
    pub fn ranked_ids(&self) -> Vec<&str> {
        self.ranking
            .iter()
            .map(|&i| self.product_ids[i].as_str())
            .collect()
    }
}

/// Scores each row of the weighted matrix `v = w·z` by `D⁻ / (D⁺ + D⁻)`.
/// A row at zero distance from both ideal points scores 0.5.
pub fn topsis_scores(product_ids: &[String], z: &[Vec<f64>], w: &[f64]) -> Result<TopsisResult> {
    if product_ids.len() != z.len() {
        return Err(Error::LengthMismatch(product_ids.len(), z.len()));
    }
    if z.is_empty() {
        return Err(Error::InvalidInput("no alternatives to score".into()));
    }
    check_shape(z, w.len())?;
    let wsum: f64 = w.iter().sum();
    if w.iter().any(|&wj| wj < 0.0) || (wsum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "weights must be non-negative and sum to 1, got {wsum}"
        )));
    }
    let m = w.len();
    let v: Vec<Vec<f64>> = z
        .iter()
        .map(|r| r.iter().zip(w).map(|(a, b)| a * b).collect())
        .collect();
    let ideal: Vec<f64> = (0..m)
        .map(|j| v.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let anti_ideal: Vec<f64> = (0..m)
        .map(|j| v.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let dist = |r: &[f64], p: &[f64]| {
        r.iter()
            .zip(p)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let d_plus: Vec<f64> = v.iter().map(|r| dist(r, &ideal)).collect();
    let d_minus: Vec<f64> = v.iter().map(|r| dist(r, &anti_ideal)).collect();
    let scores: Vec<f64> = d_plus
        .iter()
        .zip(&d_minus)
        .map(|(&dp, &dm)| if dp + dm > 0.0 { dm / (dp + dm) } else { 0.5 })
        .collect();
    let mut ranking: Vec<usize> = (0..z.len()).collect();
    ranking.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| product_ids[a].cmp(&product_ids[b]))
    });
    Ok(TopsisResult {
        product_ids: product_ids.to_vec(),
        scores,
        d_plus,
        d_minus,
        ideal,
        anti_ideal,
        ranking,
    })
}

pub fn select_top(result: &TopsisResult, k: usize) -> Result<Vec<String>> {
    let n = result.ranking.len();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "top_k must be in 1..={n}, got {k}"
        )));
    }
    Ok(result.ranking[..k]
        .iter()
        .map(|&i| result.product_ids[i].clone())
        .collect())
}

/// Normalize, weight and score in one go.
pub fn rank(matrix: &CriteriaMatrix) -> Result<(EntropyWeights, TopsisResult)> {
    let z = matrix.normalized()?;
    let weights = entropy_weights(&z)?;
    let result = topsis_scores(&matrix.product_ids, &z, &weights.w)?;
    Ok((weights, result))
}

pub fn write_ranking_csv<W: Write>(writer: W, result: &TopsisResult) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(RANKING_HEADER).map_err(Error::csv)?;
    for (pos, &i) in result.ranking.iter().enumerate() {
        wtr.write_record([
            (pos + 1).to_string(),
            result.product_ids[i].clone(),
            result.scores[i].to_string(),
            result.d_plus[i].to_string(),
            result.d_minus[i].to_string(),
        ])
        .map_err(Error::csv)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads product ids in rank order from a ranking file.
pub fn read_ranking_csv<R: std::io::Read>(reader: R) -> Result<Vec<(usize, String, f64)>> {
    #[derive(serde::Deserialize)]
    struct Row {
        rank: usize,
        product_id: String,
        score: f64,
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(Error::csv)?;
    if headers.iter().ne(RANKING_HEADER.iter().copied()) {
        return Err(Error::InvalidInput(format!(
            "ranking header must be `{}`",
            RANKING_HEADER.join(",")
        )));
    }
    let mut rows: Vec<(usize, String, f64)> = rdr
        .deserialize::<Row>()
        .map(|r| {
            r.map(|r| (r.rank, r.product_id, r.score))
                .map_err(Error::csv)
        })
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.0);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn normalize_examples() {
        let z = normalize_criteria(&[vec![0.0], vec![5.0], vec![10.0]]).unwrap();
        assert_eq!(z, vec![vec![0.0], vec![0.5], vec![1.0]]);
        let z = normalize_criteria(&[vec![4.0], vec![4.0]]).unwrap();
        assert_eq!(z, vec![vec![0.0], vec![0.0]]);
        let z = normalize_criteria(&[vec![-2.0], vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(z, vec![vec![0.0], vec![0.5], vec![1.0]]);
        assert!(normalize_criteria(&[vec![1.0]]).is_err());
    }

    #[test]
    fn weights_from_rounded_entropies() {
        let w = weights_from_entropy(&[0.957, 0.827]);
        assert!((w.d[0] - 0.043).abs() < 1e-12);
        assert!((w.d[1] - 0.173).abs() < 1e-12);
        // 0.043 / 0.216 and 0.173 / 0.216
        assert!((w.w[0] - 0.043 / 0.216).abs() < 1e-12);
        assert!((w.w[1] - 0.173 / 0.216).abs() < 1e-12);
        assert!((w.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_symmetry_and_zero_column() {
        let z = vec![vec![0.0, 0.0], vec![0.5, 0.5], vec![1.0, 1.0]];
        let w = entropy_weights(&z).unwrap();
        assert!((w.w[0] - 0.5).abs() < 1e-12 && (w.w[1] - 0.5).abs() < 1e-12);

        // second column constant in the raw data -> normalized all zero
        let x = vec![vec![1.0, 7.0], vec![3.0, 7.0], vec![2.0, 7.0]];
        let z = normalize_criteria(&x).unwrap();
        let w = entropy_weights(&z).unwrap();
        assert_eq!(w.e[1], 1.0);
        assert_eq!(w.w[1], 0.0);
        assert!((w.w[0] - 1.0).abs() < 1e-12);
        // hand computed: p = (0, 1, 0.5)/1.5, e = -(1/ln 3)(2/3 ln 2/3 + 1/3 ln 1/3)
        let p: [f64; 2] = [2.0 / 3.0, 1.0 / 3.0];
        let e0 = -(p[0] * p[0].ln() + p[1] * p[1].ln()) / 3f64.ln();
        assert!((w.e[0] - e0).abs() < 1e-12);

        let flat = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(entropy_weights(&flat).unwrap().w, vec![0.5, 0.5]);
    }

    #[test]
    fn extreme_rows() {
        let x = vec![vec![3.0, 9.0], vec![1.0, 2.0], vec![2.0, 4.0]];
        let z = normalize_criteria(&x).unwrap();
        let w = entropy_weights(&z).unwrap();
        let r = topsis_scores(&ids(3), &z, &w.w).unwrap();
        assert_eq!(r.scores[0], 1.0);
        assert_eq!(r.scores[1], 0.0);
        assert_eq!(r.ranking, vec![0, 2, 1]);

        let same = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let r = topsis_scores(&ids(2), &same, &[0.5, 0.5]).unwrap();
        assert_eq!(r.scores, vec![0.5, 0.5]);
        assert_eq!(r.ranked_ids(), vec!["p0", "p1"]);
    }

    #[test]
    fn select_top_bounds() {
        let x = vec![
            vec![3.0, 1.0],
            vec![1.0, 2.0],
            vec![2.0, 4.0],
            vec![0.0, 0.0],
        ];
        let m = CriteriaMatrix::new(ids(4), vec!["a".into(), "b".into()], x).unwrap();
        let (_, r) = rank(&m).unwrap();
        let all = select_top(&r, 4).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(all, r.ranked_ids());
        let best = select_top(&r, 1).unwrap();
        let argmax = (0..4)
            .max_by(|&a, &b| r.scores[a].partial_cmp(&r.scores[b]).unwrap())
            .unwrap();
        assert_eq!(best, vec![format!("p{argmax}")]);
        assert!(select_top(&r, 0).is_err());
        assert!(select_top(&r, 5).is_err());
    }

    #[test]
    fn ranking_csv_roundtrip() {
        let x = vec![vec![3.0, 1.0], vec![1.0, 2.0], vec![2.0, 4.0]];
        let m = CriteriaMatrix::new(ids(3), vec!["a".into(), "b".into()], x).unwrap();
        let (_, r) = rank(&m).unwrap();
        let mut buf = Vec::new();
        write_ranking_csv(&mut buf, &r).unwrap();
        assert!(buf.starts_with(b"rank,product_id,score,d_plus,d_minus\n1,"));
        let rows = read_ranking_csv(buf.as_slice()).unwrap();
        let order: Vec<&str> = rows.iter().map(|r| r.1.as_str()).collect();
        assert_eq!(order, r.ranked_ids());
    }
}
