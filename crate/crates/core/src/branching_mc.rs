//! Monte Carlo simulation of the multi-type Poisson branching process.
//!
//! Each generation is drawn in aggregate: given `z_k` individuals of type `k`,
//! the next generation has `Poisson(Σ_k z_k t A_kl p_l)` individuals of type
//! `l`, which is the sum of the individual offspring counts in law.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoagError, Result};
use crate::io::write_composition_table;
use crate::model::{Composition, ModelSpec};

/// Replicates per independent random stream. Fixed so results do not depend
/// on the number of worker threads.
pub const CHUNK_SIZE: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootChoice {
    /// Every tree starts from this type.
    Fixed(usize),
    /// Root type `i` with probability `p_i`.
    ByWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub replicates: u64,
    /// A tree is censored once its total size exceeds this.
    pub population_cap: u64,
    pub seed: u64,
    pub root: RootChoice,
}

impl McConfig {
    pub fn new(replicates: u64, population_cap: u64, seed: u64, root: RootChoice) -> Self {
        Self {
            replicates,
            population_cap,
            seed,
            root,
        }
    }

    fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.replicates == 0 || self.population_cap == 0 {
            return Err(CoagError::InvalidArgument(
                "replicates and population cap must be positive".into(),
            ));
        }
        if let RootChoice::Fixed(i) = self.root {
            if i >= spec.m() {
                return Err(CoagError::InvalidArgument(format!("root type {i} out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgenySample {
    pub root: usize,
    /// Total progeny by type; a lower bound when censored.
    pub counts: Composition,
    pub censored: bool,
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(CoagError::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    Ok(())
}

/// Grows one tree from a type-`root` individual.
pub fn sample_progeny<R: Rng + ?Sized>(
    spec: &ModelSpec,
    t: f64,
    root: usize,
    population_cap: u64,
    rng: &mut R,
) -> ProgenySample {
    let m = spec.m();
    let mut totals = vec![0u64; m];
    let mut generation = vec![0u64; m];
    totals[root] = 1;
    generation[root] = 1;
    let mut size = 1u64;
    let mut censored = size > population_cap;
    while !censored && generation.iter().any(|&z| z > 0) {
        let mut next = vec![0u64; m];
        for (l, slot) in next.iter_mut().enumerate() {
            let mean: f64 = (0..m).map(|k| generation[k] as f64 * t * spec.ap(k, l)).sum();
            if mean > 0.0 {
                *slot = Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(u64::MAX);
            }
        }
        for l in 0..m {
            totals[l] = totals[l].saturating_add(next[l]);
            size = size.saturating_add(next[l]);
        }
        generation = next;
        censored = size > population_cap;
    }
    let counts = totals.iter().map(|&c| c.min(u64::from(u32::MAX)) as u32).collect();
    ProgenySample {
        root,
        counts: Composition::new(counts),
        censored,
    }
}

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

// Runs every chunk in parallel, folding its samples with `fold`; results come
// back in chunk order.
fn run_chunks<T, F>(spec: &ModelSpec, t: f64, config: &McConfig, init: fn() -> T, fold: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut T, ProgenySample) + Sync,
{
    check_time(t)?;
    config.validate(spec)?;
    let chooser = match config.root {
        RootChoice::Fixed(_) => None,
        RootChoice::ByWeight => Some(
            WeightedIndex::new(spec.p())
                .map_err(|e| CoagError::InvalidArgument(format!("cannot sample roots by p: {e}")))?,
        ),
    };
    let chunks = config.replicates.div_ceil(CHUNK_SIZE);
    Ok((0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(config.seed, c);
            let count = CHUNK_SIZE.min(config.replicates - c * CHUNK_SIZE);
            let mut acc = init();
            for _ in 0..count {
                let root = match (&chooser, config.root) {
                    (Some(w), _) => w.sample(&mut rng),
                    (None, RootChoice::Fixed(i)) => i,
                    (None, RootChoice::ByWeight) => unreachable!(),
                };
                fold(&mut acc, sample_progeny(spec, t, root, config.population_cap, &mut rng));
            }
            acc
        })
        .collect())
}

/// All samples, in a seed-determined order independent of the thread count.
pub fn simulate(spec: &ModelSpec, t: f64, config: &McConfig) -> Result<Vec<ProgenySample>> {
    let parts = run_chunks(spec, t, config, Vec::new, |acc, s| acc.push(s))?;
    Ok(parts.into_iter().flatten().collect())
}

/// One histogram cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub count: u64,
    /// `count / replicates`.
    pub freq: f64,
    /// Binomial standard error `√(f(1 − f) / replicates)`.
    pub se: f64,
}

/// Histogram estimate of the total-progeny law.
///
/// Frequencies are relative to all replicates, so they estimate `P(T = n)`
/// directly; censored trees only enter the denominator. Under
/// [`RootChoice::ByWeight`] the cells estimate `Σ_k p_k P(T⁽ᵏ⁾ = n) = |n| w_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmfEstimate {
    pub m: usize,
    pub t: f64,
    pub config: McConfig,
    pub window: u32,
    pub censored: u64,
    pub censoring_rate: f64,
    pub censoring_se: f64,
    /// Uncensored trees larger than the window.
    pub beyond_window: u64,
    pub cells: BTreeMap<Composition, CellEstimate>,
}

#[derive(Default)]
struct Tally {
    censored: u64,
    beyond: u64,
    cells: HashMap<Composition, u64>,
}

fn binomial(count: u64, total: u64) -> (f64, f64) {
    let f = count as f64 / total as f64;
    (f, (f * (1.0 - f) / total as f64).max(0.0).sqrt())
}

pub fn estimate_pmf(spec: &ModelSpec, t: f64, config: &McConfig, window: u32) -> Result<PmfEstimate> {
    let parts = run_chunks(spec, t, config, Tally::default, |acc, s| {
        if s.censored {
            acc.censored += 1;
        } else if s.counts.size() > u64::from(window) {
            acc.beyond += 1;
        } else {
            *acc.cells.entry(s.counts).or_insert(0) += 1;
        }
    })?;
    let mut censored = 0;
    let mut beyond_window = 0;
    let mut merged: BTreeMap<Composition, u64> = BTreeMap::new();
    for part in parts {
        censored += part.censored;
        beyond_window += part.beyond;
        for (n, c) in part.cells {
            *merged.entry(n).or_insert(0) += c;
        }
    }
    let total = config.replicates;
    let cells = merged
        .into_iter()
        .map(|(n, count)| {
            let (freq, se) = binomial(count, total);
            (n, CellEstimate { count, freq, se })
        })
        .collect();
    let (censoring_rate, censoring_se) = binomial(censored, total);
    Ok(PmfEstimate {
        m: spec.m(),
        t,
        config: *config,
        window,
        censored,
        censoring_rate,
        censoring_se,
        beyond_window,
        cells,
    })
}

impl PmfEstimate {
    /// Frequency of `n` (zero for unobserved cells).
    pub fn freq(&self, n: &Composition) -> f64 {
        self.cells.get(n).map_or(0.0, |c| c.freq)
    }

    /// Writes `n_1,...,n_m,freq,se`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_composition_table(
            writer,
            self.m,
            &["freq", "se"],
            self.cells.iter().map(|(n, c)| (n, vec![c.freq, c.se])),
        )
    }
}
