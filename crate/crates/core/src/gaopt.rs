//! Real-valued genetic algorithm for joint weekly pricing and allocation.
//!
//! A chromosome interleaves `(price, allocation)` for every product. Each
//! gene has a feasible box derived from the product's demand curve and its
//! weekly sales interval; repair clamps genes into their boxes, so every
//! evaluated individual satisfies the constraints.

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::demand::DemandCurve;
use crate::error::{Error, Result};
use crate::intervals::SalesInterval;
use crate::seeding::rng_for;

pub const PLAN_HEADER: [&str; 5] = [
    "product_id",
    "price",
    "allocation",
    "expected_sales",
    "expected_profit",
];
pub const TRACE_HEADER: [&str; 4] = ["generation", "max", "min", "avg"];

/// Smallest admissible price or allocation.
pub const EPS: f64 = 1e-6;

const DEMAND_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct ProductContext {
    pub product_id: String,
    /// Wholesale cost per kg for the planned week.
    pub unit_cost: f64,
    pub demand: DemandCurve,
    /// Interval on the weekly sales total.
    pub interval: SalesInterval,
    /// Highest price ever proposed when demand does not bound it.
    pub price_cap: f64,
}

impl ProductContext {
    fn price_insensitive(&self) -> bool {
        self.demand.slope >= 0.0
    }

    /// Weekly demand (kg) at `price`. Price-insensitive products are pinned
    /// to `clamp(7a, lower, upper)`.
    pub fn weekly_demand(&self, price: f64) -> f64 {
        if self.price_insensitive() {
            (7.0 * self.demand.intercept).clamp(
                self.interval.lower,
                self.interval.upper.max(self.interval.lower),
            )
        } else {
            7.0 * self.demand.volume_unchecked(price)
        }
    }

    /// Price at which weekly demand equals `volume` (only for `b < 0`).
    pub fn price_for_weekly_volume(&self, volume: f64) -> f64 {
        (7.0 * self.demand.intercept - volume) / (-7.0 * self.demand.slope)
    }

    fn validate(&self) -> Result<()> {
        let pid = &self.product_id;
        if !(self.unit_cost > 0.0 && self.unit_cost.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "{pid}: unit cost must be positive"
            )));
        }
        if !(self.interval.lower >= 0.0 && self.interval.lower <= self.interval.upper) {
            return Err(Error::InvalidInput(format!(
                "{pid}: interval must satisfy 0 <= lower <= upper"
            )));
        }
        if !(self.price_cap > EPS && self.price_cap.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "{pid}: price cap must be positive"
            )));
        }
        if !(self.demand.intercept.is_finite() && self.demand.slope.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "{pid}: demand curve is not finite"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, x: f64) -> f64 {
        if x.is_nan() {
            self.lo
        } else {
            x.clamp(self.lo, self.hi)
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Which readings of the interval constraint are enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintFlags {
    /// Price must induce weekly demand inside the interval.
    pub constrain_demand: bool,
    /// Allocation must lie inside the interval.
    pub constrain_allocation: bool,
}

impl Default for ConstraintFlags {
    fn default() -> Self {
        Self {
            constrain_demand: true,
            constrain_allocation: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductBox {
    pub price: Bounds,
    pub alloc: Bounds,
    /// False when the demand constraint is off or cannot be met at any
    /// positive price.
    pub demand_bound: bool,
}

fn product_box(ctx: &ProductContext, flags: ConstraintFlags) -> ProductBox {
    let (lower, upper) = (ctx.interval.lower, ctx.interval.upper);
    let b = ctx.demand.slope;
    let free_price = if b < 0.0 && ctx.demand.intercept > 0.0 {
        Bounds {
            lo: EPS,
            hi: (ctx.demand.intercept / -b).min(ctx.price_cap).max(EPS),
        }
    } else {
        Bounds {
            lo: EPS,
            hi: ctx.price_cap,
        }
    };
    let (price, demand_bound) = if !flags.constrain_demand || ctx.price_insensitive() {
        (
            free_price,
            flags.constrain_demand && ctx.price_insensitive(),
        )
    } else {
        let lo = ctx.price_for_weekly_volume(upper).max(EPS);
        let hi = if lower > 0.0 {
            ctx.price_for_weekly_volume(lower)
        } else {
            // demand is 0 for every price past a / -b
            (ctx.demand.intercept / -b).min(ctx.price_cap).max(lo)
        };
        if hi >= lo {
            (Bounds { lo, hi }, true)
        } else {
            (free_price, false)
        }
    };
    let alloc = if flags.constrain_allocation {
        Bounds {
            lo: lower.max(EPS),
            hi: upper.max(EPS),
        }
    } else {
        Bounds {
            lo: EPS,
            hi: upper.max(ctx.weekly_demand(price.lo)).max(EPS),
        }
    };
    ProductBox {
        price,
        alloc,
        demand_bound,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub products: Vec<ProductContext>,
    pub boxes: Vec<ProductBox>,
    pub flags: ConstraintFlags,
}

impl Problem {
    pub fn new(products: Vec<ProductContext>, flags: ConstraintFlags) -> Result<Self> {
        if products.is_empty() {
            return Err(Error::InvalidInput("no products to plan".into()));
        }
        for p in &products {
            p.validate()?;
        }
        if products.iter().all(|p| p.interval.upper <= 0.0) {
            return Err(Error::NoFeasiblePlan);
        }
        let boxes = products.iter().map(|p| product_box(p, flags)).collect();
        Ok(Self {
            products,
            boxes,
            flags,
        })
    }

    pub fn genes(&self) -> usize {
        2 * self.products.len()
    }

    pub fn gene_bounds(&self, g: usize) -> Bounds {
        let b = &self.boxes[g / 2];
        if g % 2 == 0 {
            b.price
        } else {
            b.alloc
        }
    }

    /// Products whose demand constraint had to be dropped.
    pub fn relaxed_products(&self) -> Vec<&str> {
        self.products
            .iter()
            .zip(&self.boxes)
            .filter(|(p, b)| {
                self.flags.constrain_demand && !b.demand_bound && !p.price_insensitive()
            })
            .map(|(p, _)| p.product_id.as_str())
            .collect()
    }

    pub fn random_chromosome(&self, rng: &mut ChaCha8Rng) -> Chromosome {
        let genes = (0..self.genes())
            .map(|g| {
                let b = self.gene_bounds(g);
                if b.width() > 0.0 {
                    rng.random_range(b.lo..=b.hi)
                } else {
                    b.lo
                }
            })
            .collect();
        Chromosome { genes }
    }

    fn check_feasible(&self, c: &Chromosome) -> Result<()> {
        if c.genes.len() != self.genes() {
            return Err(Error::LengthMismatch(c.genes.len(), self.genes()));
        }
        for (i, (ctx, bx)) in self.products.iter().zip(&self.boxes).enumerate() {
            let (p, q) = (c.price(i), c.alloc(i));
            if !(p > 0.0 && q > 0.0) {
                return Err(Error::Invariant(format!(
                    "{}: non-positive decision",
                    ctx.product_id
                )));
            }
            let tol = DEMAND_TOL * (1.0 + ctx.interval.upper);
            if bx.demand_bound {
                let d = ctx.weekly_demand(p);
                if d < ctx.interval.lower - tol || d > ctx.interval.upper + tol {
                    return Err(Error::Invariant(format!(
                        "{}: weekly demand {d} outside [{}, {}]",
                        ctx.product_id, ctx.interval.lower, ctx.interval.upper
                    )));
                }
            }
            if self.flags.constrain_allocation && !bx.alloc.contains(q) {
                return Err(Error::Invariant(format!(
                    "{}: allocation {q} outside its box",
                    ctx.product_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chromosome {
    /// `genes[2i]` is the price of product `i`, `genes[2i + 1]` its allocation.
    pub genes: Vec<f64>,
}

impl Chromosome {
    pub fn price(&self, i: usize) -> f64 {
        self.genes[2 * i]
    }

    pub fn alloc(&self, i: usize) -> f64 {
        self.genes[2 * i + 1]
    }
}

/// Profit of one product: revenue on what sells minus the cost of everything
/// allocated.
pub fn product_profit(ctx: &ProductContext, price: f64, alloc: f64) -> (f64, f64) {
    let sold = alloc.min(ctx.weekly_demand(price));
    (sold, price * sold - ctx.unit_cost * alloc)
}

/// Expected weekly profit of a repaired chromosome.
pub fn fitness(c: &Chromosome, problem: &Problem) -> Result<f64> {
    problem.check_feasible(c)?;
    Ok(problem
        .products
        .iter()
        .enumerate()
        .map(|(i, ctx)| product_profit(ctx, c.price(i), c.alloc(i)).1)
        .sum())
}

/// Clamps every gene into its feasible box.
pub fn repair(c: &Chromosome, problem: &Problem) -> Chromosome {
    Chromosome {
        genes: c
            .genes
            .iter()
            .enumerate()
            .map(|(g, &x)| problem.gene_bounds(g).clamp(x))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MutationConfig {
    /// Per-gene mutation probability.
    pub prob: f64,
    /// Noise scale as a fraction of the gene's box width.
    pub sigma_fraction: f64,
    /// Per-generation multiplicative shrink of the noise scale.
    pub decay: f64,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            prob: 0.1,
            sigma_fraction: 0.1,
            decay: 0.995,
        }
    }
}

/// Adds `N(0, σ_g²)` to each gene with probability `cfg.prob`, where
/// `σ_g = sigma_fraction · decay^generation · widths[g]`.
pub fn gaussian_mutate(
    c: &Chromosome,
    widths: &[f64],
    cfg: &MutationConfig,
    generation: usize,
    rng: &mut ChaCha8Rng,
) -> Chromosome {
    let scale = cfg.sigma_fraction * cfg.decay.powi(generation as i32);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let genes = c
        .genes
        .iter()
        .zip(widths)
        .map(|(&x, &w)| {
            if rng.random::<f64>() < cfg.prob {
                let sigma = (scale * w).max(0.0);
                x + sigma * unit.sample(rng)
            } else {
                x
            }
        })
        .collect();
    Chromosome { genes }
}

/// Per-gene blend with explicit weights: child one takes `u·a + (1−u)·b`,
/// child two `(1−u)·a + u·b`.
pub fn blend_with(a: &Chromosome, b: &Chromosome, u: &[f64]) -> Result<(Chromosome, Chromosome)> {
    if a.genes.len() != b.genes.len() {
        return Err(Error::LengthMismatch(a.genes.len(), b.genes.len()));
    }
    if u.len() != a.genes.len() {
        return Err(Error::LengthMismatch(u.len(), a.genes.len()));
    }
    let mix = |x: f64, y: f64, w: f64| if x == y { x } else { w * x + (1.0 - w) * y };
    let c1 = a
        .genes
        .iter()
        .zip(&b.genes)
        .zip(u)
        .map(|((&x, &y), &w)| mix(x, y, w))
        .collect();
    let c2 = a
        .genes
        .iter()
        .zip(&b.genes)
        .zip(u)
        .map(|((&x, &y), &w)| mix(y, x, w))
        .collect();
    Ok((Chromosome { genes: c1 }, Chromosome { genes: c2 }))
}

/// BLX-style blend crossover with `u ~ U[−0.5, 1.5]` per gene.
pub fn crossover(
    a: &Chromosome,
    b: &Chromosome,
    rng: &mut ChaCha8Rng,
) -> Result<(Chromosome, Chromosome)> {
    let u: Vec<f64> = (0..a.genes.len())
        .map(|_| rng.random_range(-0.5..1.5))
        .collect();
    blend_with(a, b, &u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub max_fitness: f64,
    pub min_fitness: f64,
    pub avg_fitness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaConfig {
    pub pop: usize,
    pub gens: usize,
    pub tournament: usize,
    pub elitism: usize,
    pub crossover_rate: f64,
    pub mutation: MutationConfig,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            pop: 200,
            gens: 500,
            tournament: 3,
            elitism: 1,
            crossover_rate: 0.9,
            mutation: MutationConfig::default(),
            seed: 0,
        }
    }
}

impl GaConfig {
    fn validate(&self) -> Result<()> {
        if self.pop < 2 || self.gens == 0 || self.tournament == 0 {
            return Err(Error::InvalidInput(
                "ga needs pop >= 2, gens >= 1 and tournament >= 1".into(),
            ));
        }
        if self.elitism == 0 || self.elitism >= self.pop {
            return Err(Error::InvalidInput("elitism must lie in [1, pop)".into()));
        }
        let m = &self.mutation;
        let probs_ok = (0.0..=1.0).contains(&self.crossover_rate) && (0.0..=1.0).contains(&m.prob);
        if !probs_ok || !(m.sigma_fraction >= 0.0) || !(m.decay > 0.0 && m.decay <= 1.0) {
            return Err(Error::InvalidInput(
                "rates must lie in [0, 1], sigma_fraction >= 0 and decay in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: Chromosome,
    pub best_fitness: f64,
    /// One record per generation; empty for random search.
    pub trace: Vec<GenerationStats>,
    pub evaluations: usize,
}

fn stats(generation: usize, fit: &[f64]) -> GenerationStats {
    let max = fit.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = fit.iter().copied().fold(f64::INFINITY, f64::min);
    let avg = (fit.iter().sum::<f64>() / fit.len() as f64).clamp(min, max);
    GenerationStats {
        generation,
        max_fitness: max,
        min_fitness: min,
        avg_fitness: avg,
    }
}

fn tournament(fit: &[f64], size: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut best = rng.random_range(0..fit.len());
    for _ in 1..size {
        let k = rng.random_range(0..fit.len());
        if fit[k] > fit[best] || (fit[k] == fit[best] && k < best) {
            best = k;
        }
    }
    best
}

/// Indices sorted by descending fitness, ties by index.
fn ranked(fit: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..fit.len()).collect();
    idx.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]).then(a.cmp(&b)));
    idx
}

/// Generational GA with tournament selection, blend crossover, Gaussian
/// mutation, repair and elitism. Each offspring pair draws from its own
/// derived random stream, so results do not depend on evaluation order.
pub fn evolve(problem: &Problem, cfg: &GaConfig) -> Result<SearchResult> {
    cfg.validate()?;
    let widths: Vec<f64> = (0..problem.genes())
        .map(|g| problem.gene_bounds(g).width())
        .collect();
    let mut pop: Vec<Chromosome> = (0..cfg.pop)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(cfg.seed, &["ga", "init", &i.to_string()]);
            problem.random_chromosome(&mut rng)
        })
        .collect();
    let mut fit = pop
        .par_iter()
        .map(|c| fitness(c, problem))
        .collect::<Result<Vec<_>>>()?;
    let mut evaluations = cfg.pop;
    let children_needed = cfg.pop - cfg.elitism;
    let mut trace = Vec::with_capacity(cfg.gens);

    for gen in 0..cfg.gens {
        let gen_label = gen.to_string();
        let offspring: Vec<(Chromosome, f64)> = (0..children_needed.div_ceil(2))
            .into_par_iter()
            .map(|k| -> Result<Vec<(Chromosome, f64)>> {
                let mut rng = rng_for(cfg.seed, &["ga", &gen_label, &k.to_string()]);
                let a = &pop[tournament(&fit, cfg.tournament, &mut rng)];
                let b = &pop[tournament(&fit, cfg.tournament, &mut rng)];
                let (c1, c2) = if rng.random::<f64>() < cfg.crossover_rate {
                    crossover(a, b, &mut rng)?
                } else {
                    (a.clone(), b.clone())
                };
                [c1, c2]
                    .iter()
                    .map(|c| {
                        let m = repair(
                            &gaussian_mutate(c, &widths, &cfg.mutation, gen, &mut rng),
                            problem,
                        );
                        let f = fitness(&m, problem)?;
                        Ok((m, f))
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .take(children_needed)
            .collect();
        evaluations += offspring.len();

        let order = ranked(&fit);
        let mut next_pop = Vec::with_capacity(cfg.pop);
        let mut next_fit = Vec::with_capacity(cfg.pop);
        for &i in &order[..cfg.elitism] {
            next_pop.push(pop[i].clone());
            next_fit.push(fit[i]);
        }
        for (c, f) in offspring {
            next_pop.push(c);
            next_fit.push(f);
        }
        pop = next_pop;
        fit = next_fit;
        trace.push(stats(gen, &fit));
    }
    let best = ranked(&fit)[0];
    Ok(SearchResult {
        best: pop[best].clone(),
        best_fitness: fit[best],
        trace,
        evaluations,
    })
}

/// Uniform sampling inside the feasible boxes with `budget` evaluations.
pub fn random_search(problem: &Problem, budget: usize, seed: u64) -> Result<SearchResult> {
    const CHUNK: usize = 1024;
    if budget == 0 {
        return Err(Error::InvalidInput(
            "random search needs a positive budget".into(),
        ));
    }
    let best = (0..budget.div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| -> Result<(Chromosome, f64)> {
            let mut rng = rng_for(seed, &["random-search", &k.to_string()]);
            let n = CHUNK.min(budget - k * CHUNK);
            let mut best: Option<(Chromosome, f64)> = None;
            for _ in 0..n {
                let c = problem.random_chromosome(&mut rng);
                let f = fitness(&c, problem)?;
                if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
                    best = Some((c, f));
                }
            }
            Ok(best.expect("chunk is non-empty"))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .reduce(|x, y| if y.1 > x.1 { y } else { x })
        .expect("budget is positive");
    Ok(SearchResult {
        best: best.0,
        best_fitness: best.1,
        trace: Vec::new(),
        evaluations: budget,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRow {
    pub product_id: String,
    pub price: f64,
    pub allocation: f64,
    pub expected_sales: f64,
    pub expected_profit: f64,
}

pub fn plan_rows(problem: &Problem, best: &Chromosome) -> Vec<PlanRow> {
    problem
        .products
        .iter()
        .enumerate()
        .map(|(i, ctx)| {
            let (price, allocation) = (best.price(i), best.alloc(i));
            let (sold, profit) = product_profit(ctx, price, allocation);
            PlanRow {
                product_id: ctx.product_id.clone(),
                price,
                allocation,
                expected_sales: sold,
                expected_profit: profit,
            }
        })
        .collect()
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn write_plan_csv<W: Write>(w: W, rows: &[PlanRow]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(PLAN_HEADER).map_err(Error::csv)?;
    for r in rows {
        wtr.write_record([
            r.product_id.clone(),
            r.price.to_string(),
            r.allocation.to_string(),
            r.expected_sales.to_string(),
            r.expected_profit.to_string(),
        ])
        .map_err(Error::csv)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_plan_csv<R: Read>(r: R) -> Result<Vec<PlanRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers().map_err(Error::csv)?.iter().ne(PLAN_HEADER) {
        return Err(Error::InvalidInput(format!(
            "plan header must be {}",
            PLAN_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(Error::csv)?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad number {:?} in plan.csv", &rec[i])))
        };
        out.push(PlanRow {
            product_id: rec[0].to_string(),
            price: num(1)?,
            allocation: num(2)?,
            expected_sales: num(3)?,
            expected_profit: num(4)?,
        });
    }
    Ok(out)
}

pub fn write_trace_csv<W: Write>(w: W, trace: &[GenerationStats]) -> Result<()> {
    let mut wtr = writer(w);
    wtr.write_record(TRACE_HEADER).map_err(Error::csv)?;
    for s in trace {
        wtr.write_record([
            s.generation.to_string(),
            s.max_fitness.to_string(),
            s.min_fitness.to_string(),
            s.avg_fitness.to_string(),
        ])
        .map_err(Error::csv)?;
    }
    wtr.flush()?;
    Ok(())
}

/// A seeded planning instance with downward-sloping demand and intervals
/// around the demand at a typical markup.
pub fn synthetic_contexts(products: usize, seed: u64) -> Vec<ProductContext> {
    (0..products)
        .map(|i| {
            let pid = format!("G{:03}", i + 1);
            let mut rng = rng_for(seed, &["ga-instance", &pid]);
            let cost = rng.random_range(2.0..10.0);
            let volume = rng.random_range(20.0..100.0);
            let markup = rng.random_range(1.3..1.8);
            let elasticity = rng.random_range(0.5..1.5);
            let slope = -elasticity * volume / (cost * markup);
            let intercept = volume - slope * cost * markup;
            let spread = rng.random_range(0.05..0.25);
            let mean = 7.0 * volume;
            ProductContext {
                product_id: pid.clone(),
                unit_cost: cost,
                demand: DemandCurve {
                    product_id: pid.clone(),
                    intercept,
                    slope,
                    r_squared: 1.0,
                    n_points: 0,
                    slope_std_error: 0.0,
                },
                interval: SalesInterval {
                    product_id: pid,
                    level: 0.95,
                    mean,
                    std: spread * mean / 1.96,
                    lower: mean * (1.0 - spread),
                    upper: mean * (1.0 + spread),
                },
                price_cap: 3.0 * cost * markup,
            }
        })
        .collect()
}
