//! Problem instances: kernel matrix, monodisperse initial masses, cluster
//! compositions and sparse size distributions.
//!
//! The coagulation kernel is the bilinear form `K(k, l) = kᵀ A l` for a
//! nonnegative symmetric matrix `A`. Initial conditions are monodisperse:
//! only the pure monomers `e_i` carry mass, `w_{e_i}(0) = p_i`, with
//! `Σ p_i = 1`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{CoagError, Result};
use crate::io::{parse_real, write_composition_table};

/// Σp must equal one within this tolerance to be accepted as-is.
pub const MASS_SUM_TOLERANCE: f64 = 1e-12;
/// Σp within this distance of one is renormalized with a warning.
pub const MASS_SUM_RENORMALIZE: f64 = 1e-6;
/// Masses below this value are dropped when a distribution is pruned.
pub const DEFAULT_MASS_FLOOR: f64 = 1e-300;

/// Multi-index `n ∈ ℕ₀^m` identifying a cluster species.
///
/// Ordered by overall size `|n|` first, then lexicographically, so that
/// tables list small clusters before large ones.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Composition(Vec<u32>);

impl Composition {
    pub fn new(counts: Vec<u32>) -> Self {
        Self(counts)
    }

    /// The pure monomer of type `i` in an `m`-component system.
    pub fn unit(m: usize, i: usize) -> Self {
        let mut counts = vec![0; m];
        counts[i] = 1;
        Self(counts)
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0; m])
    }

    /// Overall cluster size `|n| = Σ n_i`.
    pub fn size(&self) -> u64 {
        self.0.iter().map(|&c| u64::from(c)).sum()
    }

    /// Number of components `m`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u32 {
        self.0[i]
    }

    /// Componentwise sum; `None` if the lengths differ.
    pub fn checked_add(&self, other: &Composition) -> Option<Composition> {
        if self.len() != other.len() {
            return None;
        }
        Some(Composition(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    /// Enumerates every composition of length `m` with `1 ≤ |n| ≤ max_size`,
    /// in the canonical order.
    pub fn enumerate(m: usize, max_size: u32) -> Vec<Composition> {
        let mut out = Vec::new();
        for size in 1..=max_size {
            let mut current = vec![0u32; m];
            fill_with_size(&mut current, 0, size, &mut out);
        }
        out
    }
}

// Emits all length-m vectors with the given total, lexicographically ascending.
fn fill_with_size(current: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<Composition>) {
    let m = current.len();
    if pos + 1 == m {
        current[pos] = remaining;
        out.push(Composition(current.clone()));
        return;
    }
    for c in 0..=remaining {
        current[pos] = c;
        fill_with_size(current, pos + 1, remaining - c, out);
    }
    current[pos] = 0;
}

impl Ord for Composition {
    fn cmp(&self, other: &Self) -> Ordering {
        self.size()
            .cmp(&other.size())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Composition {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<u32>> for Composition {
    fn from(counts: Vec<u32>) -> Self {
        Self(counts)
    }
}

/// Outcome of checking a raw problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// `A` was not symmetric and has been replaced by `½(A + Aᵀ)`.
    pub symmetrized: bool,
    /// `Σ p` was off by more than the strict tolerance and was rescaled.
    pub renormalized: bool,
    /// The support graph of `A` on `{i : p_i > 0}` is connected.
    pub irreducible: bool,
    /// Connected components of the support graph, each sorted ascending.
    pub blocks: Vec<Vec<usize>>,
    /// Components with `p_i = 0`.
    pub zero_p: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Checks a raw instance without constructing a [`ModelSpec`].
pub fn validate(a: &[Vec<f64>], p: &[f64]) -> Result<ValidationReport> {
    prepare(a, p).map(|(_, _, report)| report)
}

fn prepare(a: &[Vec<f64>], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>, ValidationReport)> {
    let m = p.len();
    if m == 0 {
        return Err(CoagError::InvalidSpec("at least one component is required".into()));
    }
    if a.len() != m || a.iter().any(|row| row.len() != m) {
        return Err(CoagError::InvalidSpec(format!(
            "kernel matrix must be {m}x{m} to match p"
        )));
    }
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(CoagError::InvalidSpec(format!(
                    "A[{i}][{j}] = {v} must be finite and nonnegative"
                )));
            }
        }
    }
    for (i, &v) in p.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(CoagError::InvalidSpec(format!(
                "p[{i}] = {v} must be finite and nonnegative"
            )));
        }
    }
    if a.iter().flatten().all(|&v| v == 0.0) {
        return Err(CoagError::InvalidSpec("kernel matrix is identically zero".into()));
    }

    let mut warnings = Vec::new();
    let total: f64 = p.iter().sum();
    let mut p = p.to_vec();
    let mut renormalized = false;
    if (total - 1.0).abs() > MASS_SUM_TOLERANCE {
        if (total - 1.0).abs() <= MASS_SUM_RENORMALIZE {
            p.iter_mut().for_each(|v| *v /= total);
            renormalized = true;
            warnings.push(format!("p summed to {total}; renormalized to 1"));
        } else {
            return Err(CoagError::InvalidSpec(format!(
                "initial masses must sum to 1, got {total}"
            )));
        }
    }

    let mut flat = vec![0.0; m * m];
    let mut symmetrized = false;
    for i in 0..m {
        for j in 0..m {
            if a[i][j] != a[j][i] {
                symmetrized = true;
            }
            flat[i * m + j] = 0.5 * (a[i][j] + a[j][i]);
        }
    }
    if symmetrized {
        warnings.push("kernel matrix was not symmetric; using (A + Aᵀ)/2".into());
    }

    let zero_p: Vec<usize> = (0..m).filter(|&i| p[i] == 0.0).collect();
    let blocks = support_blocks(&flat, &p);
    let irreducible = blocks.len() == 1;
    if !irreducible {
        warnings.push(format!(
            "kernel is reducible on the support of p: {} independent subsystems, \
             there may be several critical points",
            blocks.len()
        ));
    }

    let report = ValidationReport {
        symmetrized,
        renormalized,
        irreducible,
        blocks,
        zero_p,
        warnings,
    };
    Ok((flat, p, report))
}

// Connected components of {i : p_i > 0} under the adjacency A_ij > 0.
fn support_blocks(a: &[f64], p: &[f64]) -> Vec<Vec<usize>> {
    let m = p.len();
    let mut seen = vec![false; m];
    let mut blocks = Vec::new();
    for start in 0..m {
        if seen[start] || p[start] == 0.0 {
            continue;
        }
        let mut block = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            block.push(i);
            for j in 0..m {
                if !seen[j] && p[j] > 0.0 && a[i * m + j] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        block.sort_unstable();
        blocks.push(block);
    }
    blocks
}

/// A validated problem instance: `m` components, symmetric kernel matrix `A`
/// and monodisperse initial masses `p`.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    m: usize,
    a: Vec<f64>,
    p: Vec<f64>,
    report: ValidationReport,
}

impl ModelSpec {
    /// Validates, symmetrizes and (within tolerance) renormalizes the input.
    pub fn new(a: Vec<Vec<f64>>, p: Vec<f64>) -> Result<Self> {
        let (a, p, report) = prepare(&a, &p)?;
        Ok(Self {
            m: p.len(),
            a,
            p,
            report,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Entry `A_ij` of the (symmetrized) kernel matrix.
    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.m + j]
    }

    /// Entry `(AP)_ij = A_ij p_j`.
    #[inline]
    pub fn ap(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.m + j] * self.p[j]
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    pub fn a_rows(&self) -> Vec<Vec<f64>> {
        self.a.chunks(self.m).map(<[f64]>::to_vec).collect()
    }

    /// `true` when every `p_i > 0`.
    pub fn has_full_support(&self) -> bool {
        self.report.zero_p.is_empty()
    }

    /// `K(k, l) = kᵀ A l`.
    pub fn kernel(&self, k: &Composition, l: &Composition) -> f64 {
        debug_assert_eq!(k.len(), self.m);
        debug_assert_eq!(l.len(), self.m);
        // Σ_i A_ii k_i l_i + Σ_{i<j} A_ij (k_i l_j + k_j l_i): each pair weight is
        // an exact integer, so swapping k and l gives the same bits.
        let (k, l) = (k.counts(), l.counts());
        let mut sum = 0.0;
        for i in 0..self.m {
            for j in i..self.m {
                let pair = if i == j {
                    u64::from(k[i]) * u64::from(l[i])
                } else {
                    u64::from(k[i]) * u64::from(l[j]) + u64::from(k[j]) * u64::from(l[i])
                };
                if pair != 0 {
                    sum += self.a[i * self.m + j] * pair as f64;
                }
            }
        }
        sum
    }

    /// Same instance with `A` scaled by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(CoagError::InvalidArgument(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        let rows = self
            .a_rows()
            .into_iter()
            .map(|r| r.into_iter().map(|v| v * factor).collect())
            .collect();
        Self::new(rows, self.p.clone())
    }

    pub fn check_composition(&self, n: &Composition) -> Result<()> {
        if n.len() != self.m {
            return Err(CoagError::InvalidArgument(format!(
                "composition {n} has {} entries, model has {} components",
                n.len(),
                self.m
            )));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: RawSpec = serde_json::from_str(s)?;
        raw.try_into()
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self> {
        let raw: RawSpec = serde_json::from_reader(reader)?;
        raw.try_into()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(&RawSpec::from(self))?)
    }
}

/// Wire form of a [`ModelSpec`]: `{"m": int, "A": [[real]], "p": [real]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSpec {
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub p: Vec<f64>,
}

impl TryFrom<RawSpec> for ModelSpec {
    type Error = CoagError;

    fn try_from(raw: RawSpec) -> Result<Self> {
        if raw.m != raw.p.len() {
            return Err(CoagError::InvalidSpec(format!(
                "m = {} but p has {} entries",
                raw.m,
                raw.p.len()
            )));
        }
        ModelSpec::new(raw.a, raw.p)
    }
}

impl From<&ModelSpec> for RawSpec {
    fn from(spec: &ModelSpec) -> Self {
        RawSpec {
            m: spec.m,
            a: spec.a_rows(),
            p: spec.p.clone(),
        }
    }
}

impl Serialize for ModelSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        RawSpec::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = RawSpec::deserialize(deserializer)?;
        raw.try_into().map_err(serde::de::Error::custom)
    }
}

/// Sparse cluster-size distribution `n ↦ w_n(t)` at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeDistribution {
    t: f64,
    m: usize,
    entries: BTreeMap<Composition, f64>,
}

impl SizeDistribution {
    pub fn new(m: usize, t: f64) -> Self {
        Self {
            t,
            m,
            entries: BTreeMap::new(),
        }
    }

    /// The initial condition `w_{e_i}(0) = p_i`.
    pub fn monodisperse(spec: &ModelSpec) -> Self {
        let mut dist = Self::new(spec.m(), 0.0);
        for (i, &pi) in spec.p().iter().enumerate() {
            if pi > 0.0 {
                dist.entries.insert(Composition::unit(spec.m(), i), pi);
            }
        }
        dist
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stores `w_n`. Rejects negative or non-finite masses and the empty
    /// composition.
    pub fn insert(&mut self, n: Composition, w: f64) -> Result<()> {
        if n.len() != self.m {
            return Err(CoagError::InvalidArgument(format!(
                "composition {n} does not have {} components",
                self.m
            )));
        }
        if n.size() == 0 {
            return Err(CoagError::InvalidArgument("cluster species must have |n| >= 1".into()));
        }
        if !w.is_finite() || w < 0.0 {
            return Err(CoagError::InvalidArgument(format!("mass w{n} = {w} is not a nonnegative number")));
        }
        self.entries.insert(n, w);
        Ok(())
    }

    /// `w_n`, zero when absent.
    pub fn get(&self, n: &Composition) -> f64 {
        self.entries.get(n).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Composition, f64)> + '_ {
        self.entries.iter().map(|(n, &w)| (n, w))
    }

    /// Largest `|n|` with a stored entry.
    pub fn max_size(&self) -> u64 {
        self.entries.keys().map(Composition::size).max().unwrap_or(0)
    }

    /// Drops entries with `w < floor`.
    pub fn prune(&mut self, floor: f64) {
        self.entries.retain(|_, w| *w >= floor);
    }

    /// Total mass vector `m_i = Σ_n n_i w_n`.
    pub fn mass_vector(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.m];
        for (n, &w) in &self.entries {
            for (mi, &ni) in mass.iter_mut().zip(n.counts()) {
                *mi += f64::from(ni) * w;
            }
        }
        mass
    }

    /// Scalar mass `Σ_i m_i`.
    pub fn total_mass(&self) -> f64 {
        self.mass_vector().iter().sum()
    }

    /// Writes `n_1,...,n_m,w` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_composition_table(writer, self.m, &["w"], self.entries.iter().map(|(n, &w)| (n, vec![w])))
    }

    /// Reads the format produced by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: Read>(reader: R, t: f64) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        let header = input.headers()?.clone();
        if header.len() < 2 || header.get(header.len() - 1) != Some("w") {
            return Err(CoagError::InvalidArgument("CSV header must be n_1,...,n_m,w".into()));
        }
        let m = header.len() - 1;
        let mut dist = Self::new(m, t);
        for record in input.records() {
            let record = record?;
            let counts = (0..m)
                .map(|i| {
                    record[i]
                        .trim()
                        .parse::<u32>()
                        .map_err(|e| CoagError::InvalidArgument(format!("bad count {:?}: {e}", &record[i])))
                })
                .collect::<Result<Vec<_>>>()?;
            let w = parse_real(&record[m])?;
            dist.insert(Composition::new(counts), w)?;
        }
        Ok(dist)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
struct DistributionDoc {
    t: f64,
    m: usize,
    entries: Vec<EntryDoc>,
}

#[derive(Serialize, Deserialize)]
struct EntryDoc {
    n: Composition,
    w: f64,
}

impl Serialize for SizeDistribution {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        DistributionDoc {
            t: self.t,
            m: self.m,
            entries: self
                .entries
                .iter()
                .map(|(n, &w)| EntryDoc { n: n.clone(), w })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SizeDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = DistributionDoc::deserialize(deserializer)?;
        let mut dist = SizeDistribution::new(doc.m, doc.t);
        for e in doc.entries {
            dist.insert(e.n, e.w).map_err(serde::de::Error::custom)?;
        }
        Ok(dist)
    }
}

/// Logarithm of the single-component closed form
/// `w_n(t) = n^{n−2} t^{n−1} e^{−nt} / n!` for `A = [[1]]`, `p = [1]`.
pub fn ln_borel_oracle(t: f64, n: u64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(CoagError::InvalidArgument(format!(
            "closed form requires 0 < t < 1, got {t}"
        )));
    }
    if n == 0 {
        return Err(CoagError::InvalidArgument("cluster size must be >= 1".into()));
    }
    let nf = n as f64;
    Ok((nf - 2.0) * nf.ln() + (nf - 1.0) * t.ln() - nf * t - ln_factorial(n))
}

/// Single-component closed form `w_n(t) = n^{n−2} t^{n−1} e^{−nt} / n!`,
/// evaluated in the log domain.
pub fn borel_oracle(t: f64, n: u64) -> Result<f64> {
    ln_borel_oracle(t, n).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bipartite() -> ModelSpec {
        ModelSpec::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn validate_smallest_instance() {
        let report = validate(&[vec![1.0]], &[1.0]).unwrap();
        assert!(report.irreducible);
        assert!(!report.symmetrized);
        assert!(report.zero_p.is_empty());
    }

    #[test]
    fn validate_bipartite_is_irreducible() {
        let report = validate(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[0.5, 0.5]).unwrap();
        assert!(report.irreducible);
        assert_eq!(report.blocks, vec![vec![0, 1]]);
    }

    #[test]
    fn identity_kernel_is_flagged_reducible() {
        let report = validate(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.5, 0.5]).unwrap();
        assert!(!report.irreducible);
        assert_eq!(report.blocks, vec![vec![0], vec![1]]);
        assert!(report.warnings.iter().any(|w| w.contains("several critical points")));
    }

    #[test]
    fn validation_errors() {
        assert!(validate(&[vec![-1.0]], &[1.0]).is_err());
        assert!(validate(&[vec![1.0]], &[-1.0]).is_err());
        assert!(validate(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[0.5, 0.5]).is_err());
        assert!(validate(&[vec![1.0, 1.0], vec![1.0, 1.0]], &[0.5, 0.6]).is_err());
        assert!(validate(&[vec![1.0]], &[1.0, 0.0]).is_err());
        assert!(validate(&[vec![f64::NAN]], &[1.0]).is_err());
        assert!(validate(&[], &[]).is_err());
    }

    #[test]
    fn near_unit_mass_is_renormalized() {
        let spec = ModelSpec::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![0.5, 0.5 + 1e-8]).unwrap();
        assert!(spec.report().renormalized);
        assert!((spec.p().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_kernel_is_symmetrized() {
        let spec = ModelSpec::new(vec![vec![1.0, 3.0], vec![1.0, 1.0]], vec![0.5, 0.5]).unwrap();
        assert!(spec.report().symmetrized);
        assert_eq!(spec.a(0, 1), 2.0);
        assert_eq!(spec.a(1, 0), 2.0);
    }

    #[test]
    fn zero_p_components_are_reported() {
        let spec = ModelSpec::new(
            vec![vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 1.0], vec![0.0, 1.0, 1.0]],
            vec![0.5, 0.0, 0.5],
        )
        .unwrap();
        assert_eq!(spec.report().zero_p, vec![1]);
        // Components 0 and 2 only interact through the absent component 1.
        assert!(!spec.report().irreducible);
    }

    #[test]
    fn kernel_values() {
        let one = ModelSpec::new(vec![vec![1.0]], vec![1.0]).unwrap();
        assert_eq!(one.kernel(&Composition::new(vec![3]), &Composition::new(vec![4])), 12.0);
        let bip = bipartite();
        let e1 = Composition::unit(2, 0);
        let e2 = Composition::unit(2, 1);
        assert_eq!(bip.kernel(&e1, &e2), 1.0);
        assert_eq!(bip.kernel(&e1, &e1), 0.0);
    }

    #[test]
    fn mass_vectors() {
        let spec = bipartite();
        assert_eq!(SizeDistribution::monodisperse(&spec).mass_vector(), vec![0.5, 0.5]);

        let mut dist = SizeDistribution::new(2, 0.3);
        dist.insert(Composition::new(vec![1, 0]), 0.25).unwrap();
        dist.insert(Composition::new(vec![1, 1]), 0.25).unwrap();
        assert_eq!(dist.mass_vector(), vec![0.5, 0.25]);

        assert_eq!(SizeDistribution::new(3, 0.0).mass_vector(), vec![0.0; 3]);
    }

    #[test]
    fn distribution_rejects_bad_entries() {
        let mut dist = SizeDistribution::new(2, 0.0);
        assert!(dist.insert(Composition::new(vec![0, 0]), 1.0).is_err());
        assert!(dist.insert(Composition::new(vec![1]), 1.0).is_err());
        assert!(dist.insert(Composition::new(vec![1, 0]), -1.0).is_err());
    }

    #[test]
    fn prune_drops_tiny_entries() {
        let mut dist = SizeDistribution::new(1, 0.0);
        dist.insert(Composition::new(vec![1]), 0.5).unwrap();
        dist.insert(Composition::new(vec![2]), 1e-310).unwrap();
        dist.prune(DEFAULT_MASS_FLOOR);
        assert_eq!(dist.len(), 1);
    }

    #[test]
    fn enumeration_order_and_count() {
        let all = Composition::enumerate(2, 3);
        // C(3 + 2, 2) - 1
        assert_eq!(all.len(), 9);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(all[0], Composition::new(vec![0, 1]));
        assert_eq!(Composition::enumerate(3, 4).len(), 34);
    }

    #[test]
    fn borel_values() {
        assert!((borel_oracle(0.5, 1).unwrap() - 0.606530659712633).abs() < 1e-15);
        assert!((borel_oracle(0.5, 2).unwrap() - 0.0919698602928606).abs() < 1e-15);
        for &t in &[0.1, 0.37, 0.99] {
            assert!((borel_oracle(t, 1).unwrap() - (-t).exp()).abs() < 1e-15);
        }
        assert!(borel_oracle(1.0, 3).is_err());
        assert!(borel_oracle(0.0, 3).is_err());
        assert!(borel_oracle(0.5, 0).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ModelSpec::from_json_str(r#"{"m": 2, "A": [[0, 1], [1, 0]], "p": [0.5, 0.5]}"#).unwrap();
        assert_eq!(spec, bipartite());
        let again = ModelSpec::from_json_str(&spec.to_json_string().unwrap()).unwrap();
        assert_eq!(again, spec);
        assert!(ModelSpec::from_json_str(r#"{"m": 3, "A": [[1]], "p": [1]}"#).is_err());
    }

    #[test]
    fn distribution_csv_and_json() {
        let mut dist = SizeDistribution::new(2, 0.5);
        dist.insert(Composition::new(vec![1, 0]), 0.1).unwrap();
        dist.insert(Composition::new(vec![2, 3]), 1.0 / 3.0).unwrap();
        let mut buf = Vec::new();
        dist.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n_1,n_2,w\n1,0,"));
        assert_eq!(SizeDistribution::read_csv(buf.as_slice(), 0.5).unwrap(), dist);
        let json = dist.to_json_string().unwrap();
        assert_eq!(SizeDistribution::from_json_str(&json).unwrap(), dist);
    }
}
