//! Exact total-progeny law of the Poisson branching process and the
//! resulting closed-form size distribution below the critical time.
//!
//! For a type-`i` root,
//!
//! ```text
//! P(T⁽ⁱ⁾ = n) = Σ_{I ⊆ [m]} c_I Π_l Pois(λ_l; n_l − 1_I(l) − δ_li),
//! c_I = (−t)^{|I|} det((AP)_{I,I}),   λ_l = t Σ_k n_k A_kl p_l,
//! ```
//!
//! and `w_n(t) = (p_i / n_i) P(T⁽ⁱ⁾ = n)` for any `i` with `n_i > 0`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{CoagError, Result};
use crate::linalg::{self, compensated_sum};
use crate::model::{Composition, ModelSpec, SizeDistribution};
use crate::pgf;

/// Largest number of components accepted by [`MinorTable`].
pub const MAX_MINOR_COMPONENTS: usize = 20;
/// Results smaller than this fraction of the largest addend are flagged.
pub const PRECISION_LIMIT: f64 = 1e-12;
/// Negative sums below this are a numerical breakdown rather than roundoff.
pub const NEGATIVE_PMF_LIMIT: f64 = -1e-10;

/// `ln Pois(λ; k)`, with `ln 0 = −∞` for impossible counts.
pub fn log_poisson_pmf(lambda: f64, k: i64) -> Result<f64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(CoagError::InvalidArgument(format!(
            "Poisson mean must be finite and nonnegative, got {lambda}"
        )));
    }
    if k < 0 {
        return Ok(f64::NEG_INFINITY);
    }
    if lambda == 0.0 {
        return Ok(if k == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(k as f64 * lambda.ln() - lambda - ln_factorial(k as u64))
}

/// Coefficients `c_I` of `det(I − t diag(r) AP) = Σ_I c_I Π_{i∈I} r_i`,
/// indexed by the bitmask of `I`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinorTable {
    m: usize,
    t: f64,
    coefficients: Vec<f64>,
}

impl MinorTable {
    pub fn new(spec: &ModelSpec, t: f64) -> Result<Self> {
        let m = spec.m();
        if m > MAX_MINOR_COMPONENTS {
            return Err(CoagError::InvalidArgument(format!(
                "minor table needs 2^{m} entries; at most {MAX_MINOR_COMPONENTS} components supported"
            )));
        }
        if !(t.is_finite() && t >= 0.0) {
            return Err(CoagError::InvalidArgument(format!("time must be nonnegative, got {t}")));
        }
        let coefficients = (0..1usize << m)
            .into_par_iter()
            .map(|mask| {
                let members: Vec<usize> = (0..m).filter(|&i| mask >> i & 1 == 1).collect();
                let k = members.len();
                let mut sub = Vec::with_capacity(k * k);
                for &i in &members {
                    for &j in &members {
                        sub.push(spec.ap(i, j));
                    }
                }
                (-t).powi(k as i32) * linalg::determinant(&sub, k)
            })
            .collect();
        Ok(Self { m, t, coefficients })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// `c_I` for the subset with bitmask `mask`.
    pub fn coefficient(&self, mask: usize) -> f64 {
        self.coefficients[mask]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// `Σ_I c_I Π_{i∈I} r_i`.
    pub fn evaluate(&self, r: &[f64]) -> f64 {
        compensated_sum(self.coefficients.iter().enumerate().map(|(mask, c)| {
            c * (0..self.m)
                .filter(|&i| mask >> i & 1 == 1)
                .map(|i| r[i])
                .product::<f64>()
        }))
    }
}

/// Means `λ_l = t Σ_k n_k A_kl p_l` of the Poisson factors.
pub fn poisson_rates(spec: &ModelSpec, t: f64, n: &Composition) -> Vec<f64> {
    (0..spec.m())
        .map(|l| t * (0..spec.m()).map(|k| n.get(k) as f64 * spec.ap(k, l)).sum::<f64>())
        .collect()
}

/// A probability together with its natural logarithm and a cancellation flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmfValue {
    pub value: f64,
    pub ln_value: f64,
    /// The signed subset sum cancelled to below `1e-12` of its largest addend.
    pub precision_limited: bool,
}

impl PmfValue {
    const ZERO: PmfValue = PmfValue {
        value: 0.0,
        ln_value: f64::NEG_INFINITY,
        precision_limited: false,
    };
}

/// Evaluates the closed form for one `(spec, t)`; the minor table is built once.
#[derive(Debug, Clone)]
pub struct AnalyticSolver<'a> {
    spec: &'a ModelSpec,
    t: f64,
    t_c: f64,
    minors: MinorTable,
}

impl<'a> AnalyticSolver<'a> {
    /// Accepts `0 ≤ t < T_c`. At `t = 0` the formula reduces to the
    /// monodisperse initial state.
    pub fn new(spec: &'a ModelSpec, t: f64) -> Result<Self> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(CoagError::InvalidArgument(format!("time must be nonnegative, got {t}")));
        }
        let t_c = pgf::critical_time(spec)?;
        if t >= t_c {
            return Err(CoagError::Supercritical { t, t_c });
        }
        let minors = MinorTable::new(spec, t)?;
        Ok(Self { spec, t, t_c, minors })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn t_c(&self) -> f64 {
        self.t_c
    }

    pub fn minors(&self) -> &MinorTable {
        &self.minors
    }

    fn check(&self, i: usize, n: &Composition) -> Result<()> {
        if i >= self.spec.m() {
            return Err(CoagError::InvalidArgument(format!("root type {i} out of range")));
        }
        self.spec.check_composition(n)?;
        if n.size() == 0 {
            return Err(CoagError::InvalidArgument("composition must be nonempty".into()));
        }
        Ok(())
    }

    /// `P(T⁽ⁱ⁾ = n)` with its logarithm and precision diagnostics.
    pub fn progeny_pmf_detailed(&self, i: usize, n: &Composition) -> Result<PmfValue> {
        self.check(i, n)?;
        let m = self.spec.m();
        let lambda = poisson_rates(self.spec, self.t, n);
        // (sign, ln|addend|) for each nonvanishing subset term
        let mut terms: Vec<(f64, f64)> = Vec::new();
        for (mask, &c) in self.minors.coefficients().iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let mut ln_abs = c.abs().ln();
            for l in 0..m {
                let k = n.get(l) as i64 - (mask >> l & 1) as i64 - i64::from(l == i);
                ln_abs += log_poisson_pmf(lambda[l], k)?;
                if ln_abs == f64::NEG_INFINITY {
                    break;
                }
            }
            if ln_abs > f64::NEG_INFINITY {
                terms.push((c.signum(), ln_abs));
            }
        }
        combine_log_terms(terms)
    }

    pub fn progeny_pmf(&self, i: usize, n: &Composition) -> Result<f64> {
        self.progeny_pmf_detailed(i, n).map(|v| v.value)
    }

    /// Root types usable for `w_n`: `n_i > 0` and `p_i > 0`.
    pub fn valid_roots(&self, n: &Composition) -> Vec<usize> {
        (0..self.spec.m())
            .filter(|&i| n.get(i) > 0 && self.spec.p()[i] > 0.0)
            .collect()
    }

    /// `w_n(t)` with diagnostics, from the smallest valid root type.
    pub fn solve_detailed(&self, n: &Composition) -> Result<PmfValue> {
        self.spec.check_composition(n)?;
        if n.size() == 0 {
            return Err(CoagError::InvalidArgument("composition must be nonempty".into()));
        }
        let roots = self.valid_roots(n);
        let Some(&i) = roots.first() else {
            // Only zero-mass species are present; they are never created.
            return Ok(PmfValue::ZERO);
        };
        let pmf = self.progeny_pmf_detailed(i, n)?;
        let weight = self.spec.p()[i] / n.get(i) as f64;
        let result = PmfValue {
            value: weight * pmf.value,
            ln_value: weight.ln() + pmf.ln_value,
            precision_limited: pmf.precision_limited,
        };
        if cfg!(debug_assertions) && !result.precision_limited {
            for &j in &roots[1..] {
                let other = self.progeny_pmf_detailed(j, n)?;
                let alt = self.spec.p()[j] / n.get(j) as f64 * other.value;
                debug_assert!(
                    other.precision_limited || (alt - result.value).abs() <= 1e-12,
                    "root types {i} and {j} disagree at {n}: {} vs {alt}",
                    result.value
                );
            }
        }
        Ok(result)
    }

    pub fn solve(&self, n: &Composition) -> Result<f64> {
        self.solve_detailed(n).map(|v| v.value)
    }

    /// `ln w_n(t)`, accurate where `w_n` itself underflows.
    pub fn ln_solve(&self, n: &Composition) -> Result<f64> {
        self.solve_detailed(n).map(|v| v.ln_value)
    }

    /// All `w_n(t)` with `1 ≤ |n| ≤ max_size`; zero entries are omitted.
    pub fn distribution(&self, max_size: u32) -> Result<SizeDistribution> {
        let comps = Composition::enumerate(self.spec.m(), max_size);
        let values: Vec<Result<f64>> = comps.par_iter().map(|n| self.solve(n)).collect();
        let mut dist = SizeDistribution::new(self.spec.m(), self.t);
        for (n, w) in comps.into_iter().zip(values) {
            let w = w?;
            if w > 0.0 {
                dist.insert(n, w)?;
            }
        }
        Ok(dist)
    }
}

// Signed log-scaled summation: addends sorted by magnitude, compensated sum
// relative to the largest.
fn combine_log_terms(mut terms: Vec<(f64, f64)>) -> Result<PmfValue> {
    if terms.is_empty() {
        return Ok(PmfValue::ZERO);
    }
    terms.sort_by(|a, b| a.1.total_cmp(&b.1));
    let scale = terms.last().map(|t| t.1).unwrap_or(0.0);
    let relative = compensated_sum(terms.iter().map(|(s, l)| s * (l - scale).exp()));
    let precision_limited = relative.abs() < PRECISION_LIMIT;
    let absolute = relative * scale.exp();
    if absolute < NEGATIVE_PMF_LIMIT {
        return Err(CoagError::Numerical(format!(
            "signed subset sum is {absolute:e}; cancellation exceeded double precision"
        )));
    }
    if relative <= 0.0 {
        return Ok(PmfValue {
            precision_limited,
            ..PmfValue::ZERO
        });
    }
    let ln_value = (scale + relative.ln()).min(0.0);
    Ok(PmfValue {
        value: absolute.min(1.0),
        ln_value,
        precision_limited,
    })
}

/// `P(T⁽ⁱ⁾ = n)` for a single evaluation.
pub fn progeny_pmf(spec: &ModelSpec, t: f64, i: usize, n: &Composition) -> Result<f64> {
    AnalyticSolver::new(spec, t)?.progeny_pmf(i, n)
}

/// `w_n(t)` for a single evaluation.
pub fn solve(spec: &ModelSpec, t: f64, n: &Composition) -> Result<f64> {
    AnalyticSolver::new(spec, t)?.solve(n)
}

/// Default bound on dense coefficient-table entries in [`series_oracle`].
pub const SERIES_BUDGET: usize = 1 << 22;

/// `P(T⁽ⁱ⁾ = n)` for every root `i` and `1 ≤ |n| ≤ degree_cap`, by iterating
/// `g_i = s_i e^{−x_i} G_{X_i}(g)` as truncated power series from zero.
///
/// Independent of [`AnalyticSolver`]; after `d` iterations every coefficient
/// of total degree `≤ d` is exact. Works for any `t ≥ 0`.
pub fn series_oracle(spec: &ModelSpec, t: f64, degree_cap: u32) -> Result<BTreeMap<(usize, Composition), f64>> {
    series_oracle_with_budget(spec, t, degree_cap, SERIES_BUDGET)
}

pub fn series_oracle_with_budget(
    spec: &ModelSpec,
    t: f64,
    degree_cap: u32,
    budget: usize,
) -> Result<BTreeMap<(usize, Composition), f64>> {
    let m = spec.m();
    if !(t.is_finite() && t >= 0.0) {
        return Err(CoagError::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    if degree_cap == 0 {
        return Err(CoagError::InvalidArgument("degree cap must be positive".into()));
    }
    let radix = degree_cap as usize + 1;
    let entries = (radix as f64).powi(m as i32);
    if entries * m as f64 > budget as f64 {
        return Err(CoagError::InvalidArgument(format!(
            "series table of {entries:.3e} entries per type exceeds the budget of {budget}"
        )));
    }
    let dense = radix.pow(m as u32);
    let strides: Vec<usize> = (0..m).map(|l| radix.pow(l as u32)).collect();
    let index = |n: &Composition| (0..m).map(|l| n.get(l) as usize * strides[l]).sum::<usize>();

    // Compositions with |n| ≤ degree_cap, zero first, in increasing degree.
    let comps = std::iter::once(Composition::zeros(m))
        .chain(Composition::enumerate(m, degree_cap))
        .collect::<Vec<_>>();
    let slots: Vec<usize> = comps.iter().map(index).collect();
    let degrees: Vec<u64> = comps.iter().map(Composition::size).collect();
    // Proper divisors β ≤ α (componentwise, β ≠ 0) for the exp recursion.
    let divisors: Vec<Vec<usize>> = comps
        .iter()
        .map(|alpha| {
            (1..comps.len())
                .filter(|&b| (0..m).all(|l| comps[b].get(l) <= alpha.get(l)))
                .collect()
        })
        .collect();

    let leaf: Vec<f64> = (0..m)
        .map(|i| (-(0..m).map(|l| t * spec.ap(i, l)).sum::<f64>()).exp())
        .collect();
    let mut g = vec![vec![0.0; dense]; m];
    let mut h = vec![0.0; dense];
    let mut e = vec![0.0; dense];
    for _ in 0..degree_cap {
        let mut next = vec![vec![0.0; dense]; m];
        for i in 0..m {
            for &s in &slots {
                h[s] = (0..m).map(|l| t * spec.ap(i, l) * g[l][s]).sum();
            }
            // exp of a series with zero constant term, up to degree cap − 1
            e.fill(0.0);
            e[0] = 1.0;
            for (a, alpha) in comps.iter().enumerate().skip(1) {
                if degrees[a] >= u64::from(degree_cap) {
                    continue;
                }
                let sa = slots[a];
                let acc: f64 = divisors[a]
                    .iter()
                    .map(|&b| {
                        let sb = slots[b];
                        degrees[b] as f64 * h[sb] * e[sa - sb]
                    })
                    .sum();
                e[sa] = acc / alpha.size() as f64;
            }
            // multiply by s_i e^{−Σ_l t A_il p_l}
            for (a, &sa) in slots.iter().enumerate() {
                if degrees[a] < u64::from(degree_cap) {
                    next[i][sa + strides[i]] = leaf[i] * e[sa];
                }
            }
        }
        g = next;
    }

    let mut out = BTreeMap::new();
    for (i, series) in g.iter().enumerate() {
        for (a, n) in comps.iter().enumerate().skip(1) {
            out.insert((i, n.clone()), series[slots[a]]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::borel_oracle;

    fn single() -> ModelSpec {
        ModelSpec::new(vec![vec![1.0]], vec![1.0]).unwrap()
    }

    fn bipartite() -> ModelSpec {
        ModelSpec::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0.5, 0.5]).unwrap()
    }

    fn comp(v: &[u32]) -> Composition {
        Composition::new(v.to_vec())
    }

    #[test]
    fn poisson_log_pmf() {
        assert_eq!(log_poisson_pmf(2.0, 0).unwrap(), -2.0);
        assert_eq!(log_poisson_pmf(0.0, 0).unwrap(), 0.0);
        assert_eq!(log_poisson_pmf(0.0, 3).unwrap(), f64::NEG_INFINITY);
        assert_eq!(log_poisson_pmf(1.0, -1).unwrap(), f64::NEG_INFINITY);
        assert!((log_poisson_pmf(1.0, 3).unwrap() - (-2.791759469228055)).abs() < 1e-15);
        assert!(log_poisson_pmf(f64::NAN, 1).is_err());
        assert!(log_poisson_pmf(f64::INFINITY, 1).is_err());
    }

    #[test]
    fn minor_tables() {
        let table = MinorTable::new(&single(), 0.7).unwrap();
        assert_eq!(table.coefficients(), &[1.0, -0.7]);
        let table = MinorTable::new(&bipartite(), 1.0).unwrap();
        assert_eq!(table.coefficient(0), 1.0);
        assert_eq!(table.coefficient(1), 0.0);
        assert_eq!(table.coefficient(2), 0.0);
        assert!((table.coefficient(3) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn minor_table_matches_determinant() {
        let spec = ModelSpec::new(
            vec![vec![1.0, 2.0, 0.0], vec![2.0, 1.0, 1.0], vec![0.0, 1.0, 1.0]],
            vec![0.3, 0.3, 0.4],
        )
        .unwrap();
        let t = 0.4;
        let table = MinorTable::new(&spec, t).unwrap();
        for r in [[1.0, 1.0, 1.0], [0.2, 0.9, 0.5], [0.0, 0.3, 1.0]] {
            let mut mat = vec![0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    mat[i * 3 + j] = f64::from(u8::from(i == j)) - r[i] * t * spec.ap(i, j);
                }
            }
            assert!((table.evaluate(&r) - linalg::determinant(&mat, 3)).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_too_many_components() {
        let m = 21;
        let a = vec![vec![1.0; m]; m];
        let spec = ModelSpec::new(a, vec![1.0 / m as f64; m]).unwrap();
        assert!(MinorTable::new(&spec, 0.01).is_err());
    }

    #[test]
    fn single_component_progeny() {
        let spec = single();
        let solver = AnalyticSolver::new(&spec, 0.5).unwrap();
        let p3 = solver.progeny_pmf(0, &comp(&[3])).unwrap();
        assert!((p3 - 0.08367381005566113).abs() < 1e-15, "{p3}");
        assert!((solver.progeny_pmf(0, &comp(&[1])).unwrap() - (-0.5f64).exp()).abs() < 1e-16);
        let w2 = solver.solve(&comp(&[2])).unwrap();
        assert!((w2 - 0.0919698602928606).abs() < 1e-15);
        for n in 1..=40u32 {
            let w = solver.solve(&comp(&[n])).unwrap();
            let oracle = borel_oracle(0.5, n.into()).unwrap();
            assert!(((w - oracle) / oracle).abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn bipartite_values() {
        let spec = bipartite();
        let solver = AnalyticSolver::new(&spec, 1.0).unwrap();
        let w = solver.solve(&comp(&[1, 0])).unwrap();
        assert!((w - 0.3032653298563167).abs() < 1e-15);
        assert_eq!(solver.solve(&comp(&[2, 0])).unwrap(), 0.0);
        assert_eq!(solver.progeny_pmf(0, &comp(&[2, 0])).unwrap(), 0.0);
    }

    #[test]
    fn rejects_supercritical_time() {
        assert!(matches!(
            AnalyticSolver::new(&single(), 1.0),
            Err(CoagError::Supercritical { .. })
        ));
        assert!(AnalyticSolver::new(&bipartite(), 2.5).is_err());
    }

    #[test]
    fn time_zero_is_monodisperse() {
        let spec = ModelSpec::new(vec![vec![1.0, 2.0], vec![2.0, 1.0]], vec![0.7, 0.3]).unwrap();
        let dist = AnalyticSolver::new(&spec, 0.0).unwrap().distribution(5).unwrap();
        let entries: Vec<_> = dist.iter().map(|(n, w)| (n.clone(), w)).collect();
        assert_eq!(entries, vec![(comp(&[0, 1]), 0.3), (comp(&[1, 0]), 0.7)]);
    }

    #[test]
    fn zero_mass_species_never_appear() {
        let spec = ModelSpec::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 0.0]).unwrap();
        let solver = AnalyticSolver::new(&spec, 0.5).unwrap();
        assert_eq!(solver.solve(&comp(&[0, 2])).unwrap(), 0.0);
        assert_eq!(solver.solve(&comp(&[2, 1])).unwrap(), 0.0);
        let w = solver.solve(&comp(&[3, 0])).unwrap();
        assert!((w - borel_oracle(0.5, 3).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn log_domain_survives_underflow() {
        let spec = single();
        let solver = AnalyticSolver::new(&spec, 0.5).unwrap();
        let n = comp(&[2000]);
        let ln_w = solver.ln_solve(&n).unwrap();
        let oracle = crate::model::ln_borel_oracle(0.5, 2000).unwrap();
        assert!((ln_w - oracle).abs() < 1e-9 * oracle.abs());
    }

    #[test]
    fn series_oracle_single_component() {
        let table = series_oracle(&single(), 0.5, 10).unwrap();
        assert!((table[&(0, comp(&[1]))] - (-0.5f64).exp()).abs() < 1e-16);
        for n in 1..=10u32 {
            let expect = f64::from(n) * borel_oracle(0.5, n.into()).unwrap();
            assert!((table[&(0, comp(&[n]))] - expect).abs() < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn series_oracle_bipartite() {
        let spec = bipartite();
        let table = series_oracle(&spec, 1.0, 8).unwrap();
        let solver = AnalyticSolver::new(&spec, 1.0).unwrap();
        for ((i, n), v) in &table {
            assert!((solver.progeny_pmf(*i, n).unwrap() - v).abs() < 1e-12, "{i} {n}");
        }
    }

    #[test]
    fn series_oracle_budget() {
        assert!(series_oracle_with_budget(&bipartite(), 1.0, 30, 100).is_err());
        assert!(series_oracle(&bipartite(), 1.0, 0).is_err());
    }
}
