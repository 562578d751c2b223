//! Rate function of large clusters and its minimizer.
//!
//! With `σ_l(ρ) = Σ_k ρ_k A_kl p_l`,
//!
//! ```text
//! Γ(ρ) = Σ_l ρ_l ln(ρ_l / (t σ_l)) + t σ_l − 1,
//! ```
//!
//! and `−(1/N) ln w_{Nρ}(t) → Γ(ρ)`. Large clusters concentrate along the
//! minimizer `ρ*(t)` of `Γ` over the probability simplex.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::AnalyticSolver;
use crate::error::{CoagError, Result};
use crate::io::format_real;
use crate::linalg;
use crate::model::{Composition, ModelSpec};
use crate::pgf;

/// Iterates with a coordinate below this are reported as boundary minima.
pub const BOUNDARY_WALL: f64 = 1e-14;

/// A point of the open probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    /// Accepts positive entries summing to one within `1e-10`, then
    /// renormalizes exactly.
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() || rho.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
            return Err(CoagError::InvalidArgument(format!(
                "simplex point needs positive finite entries, got {rho:?}"
            )));
        }
        let total: f64 = rho.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(CoagError::InvalidArgument(format!("simplex point sums to {total}, not 1")));
        }
        Ok(Self(rho.into_iter().map(|r| r / total).collect()))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for SimplexPoint {
    type Error = CoagError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexPoint> for Vec<f64> {
    fn from(p: SimplexPoint) -> Self {
        p.0
    }
}

fn check_dims(spec: &ModelSpec, rho: &SimplexPoint) -> Result<()> {
    if rho.len() != spec.m() {
        return Err(CoagError::InvalidArgument(format!(
            "simplex point has {} entries, expected {}",
            rho.len(),
            spec.m()
        )));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(CoagError::InvalidArgument(format!("time must be positive, got {t}")));
    }
    Ok(())
}

/// `σ_l = Σ_k ρ_k A_kl p_l`.
pub fn sigma(spec: &ModelSpec, rho: &[f64]) -> Vec<f64> {
    (0..spec.m())
        .map(|l| (0..spec.m()).map(|k| rho[k] * spec.ap(k, l)).sum())
        .collect()
}

fn sigma_checked(spec: &ModelSpec, rho: &SimplexPoint) -> Result<Vec<f64>> {
    check_dims(spec, rho)?;
    let s = sigma(spec, rho.as_slice());
    if let Some(l) = (0..spec.m()).find(|&l| s[l] <= 0.0) {
        return Err(CoagError::Hypothesis(format!(
            "σ_{} = 0 with ρ_{} > 0: the direction is unreachable (infinite rate)",
            l + 1,
            l + 1
        )));
    }
    Ok(s)
}

/// `Γ(ρ)`.
pub fn gamma(spec: &ModelSpec, t: f64, rho: &SimplexPoint) -> Result<f64> {
    check_time(t)?;
    let s = sigma_checked(spec, rho)?;
    let terms = rho
        .as_slice()
        .iter()
        .zip(&s)
        .flat_map(|(&r, &sl)| [r * (r / (t * sl)).ln(), t * sl]);
    Ok(linalg::compensated_sum(terms) - 1.0)
}

/// Euclidean gradient
/// `∂Γ/∂ρ_j = ln(ρ_j / (t σ_j)) + 1 + Σ_l (t − ρ_l / σ_l) A_jl p_l`.
pub fn gamma_gradient(spec: &ModelSpec, t: f64, rho: &SimplexPoint) -> Result<Vec<f64>> {
    check_time(t)?;
    let s = sigma_checked(spec, rho)?;
    let r = rho.as_slice();
    Ok((0..spec.m())
        .map(|j| {
            let coupling: f64 = (0..spec.m()).map(|l| (t - r[l] / s[l]) * spec.ap(j, l)).sum();
            (r[j] / (t * s[j])).ln() + 1.0 + coupling
        })
        .collect())
}

/// Component of `g` tangent to the simplex, `g − mean(g)`.
pub fn project_to_tangent(g: &[f64]) -> Vec<f64> {
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    g.iter().map(|v| v - mean).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    /// Stop once the projected gradient norm is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub rho_star: SimplexPoint,
    pub gamma_min: f64,
    /// Norm of the projected gradient at `rho_star`.
    pub grad_norm: f64,
    pub iterations: usize,
    /// Some coordinate hit the `1e-14` wall.
    pub boundary: bool,
}

/// Hessian of `Γ`:
/// `δ_jk / ρ_j − B_kj / σ_j − B_jk / σ_k + Σ_l ρ_l B_kl B_jl / σ_l²` with
/// `B_jl = A_jl p_l`.
pub fn gamma_hessian(spec: &ModelSpec, t: f64, rho: &SimplexPoint) -> Result<Vec<f64>> {
    check_time(t)?;
    let s = sigma_checked(spec, rho)?;
    let r = rho.as_slice();
    let m = spec.m();
    let mut h = vec![0.0; m * m];
    for j in 0..m {
        for k in 0..m {
            let cross: f64 = (0..m).map(|l| r[l] * spec.ap(k, l) * spec.ap(j, l) / (s[l] * s[l])).sum();
            let diag = if j == k { 1.0 / r[j] } else { 0.0 };
            h[j * m + k] = diag - spec.ap(k, j) / s[j] - spec.ap(j, k) / s[k] + cross;
        }
    }
    Ok(h)
}

/// Minimizes `Γ` over the open simplex, starting from the uniform point.
///
/// Exponentiated-gradient steps `ρ ← ρ e^{−η ∇Γ} / Z` with Armijo
/// backtracking carry the iterate until the projected gradient is below
/// `1e-6`. The first trial step is `η = 1`; later trials start from twice the
/// last accepted step. Comparisons of `Γ` lose resolution once the gradient
/// nears `√ε`, so the last digits come from Newton steps on the tangent space
/// of the simplex, accepted while they shrink the projected gradient.
pub fn minimize_gamma(spec: &ModelSpec, t: f64, opts: MinimizeOptions) -> Result<LocalizationResult> {
    check_time(t)?;
    if !spec.has_full_support() {
        return Err(CoagError::Hypothesis(
            "localization requires every p_i > 0".into(),
        ));
    }
    let t_c = pgf::critical_time(spec)?;
    if t >= t_c {
        return Err(CoagError::Supercritical { t, t_c });
    }
    let mut state = Iterate::new(spec, t, SimplexPoint::uniform(spec.m()))?;
    let mut iterations = 0;
    let mut eta_start = 1.0;
    while state.grad_norm > opts.tol.max(POLISH_BELOW) {
        if iterations >= opts.max_iter {
            return Err(CoagError::NonConvergence {
                iterations,
                residual: state.grad_norm,
            });
        }
        iterations += 1;
        let Some((next, eta)) = mirror_step(spec, t, &state, eta_start)? else {
            break;
        };
        eta_start = (2.0 * eta).clamp(1.0, MAX_STEP);
        let stalled = next.rho == state.rho;
        state = next;
        if state.rho.as_slice().iter().any(|&r| r < BOUNDARY_WALL) {
            return Ok(state.finish(iterations, true));
        }
        if stalled {
            break;
        }
    }
    for _ in 0..NEWTON_STEPS {
        if state.grad_norm <= opts.tol {
            break;
        }
        match newton_step(spec, t, &state)? {
            Some(next) => {
                iterations += 1;
                state = next;
            }
            None => break,
        }
    }
    if state.grad_norm > opts.tol {
        return Err(CoagError::NonConvergence {
            iterations,
            residual: state.grad_norm,
        });
    }
    Ok(state.finish(iterations, false))
}

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-30;
const MAX_STEP: f64 = 1e12;
const POLISH_BELOW: f64 = 1e-6;
const NEWTON_STEPS: usize = 50;

struct Iterate {
    rho: SimplexPoint,
    value: f64,
    grad: Vec<f64>,
    grad_norm: f64,
}

impl Iterate {
    fn new(spec: &ModelSpec, t: f64, rho: SimplexPoint) -> Result<Self> {
        let value = gamma(spec, t, &rho)?;
        let grad = gamma_gradient(spec, t, &rho)?;
        let grad_norm = norm(&project_to_tangent(&grad));
        Ok(Self {
            rho,
            value,
            grad,
            grad_norm,
        })
    }

    fn finish(self, iterations: usize, boundary: bool) -> LocalizationResult {
        LocalizationResult {
            rho_star: self.rho,
            gamma_min: self.value,
            grad_norm: self.grad_norm,
            iterations,
            boundary,
        }
    }
}

// Backtracking exponentiated-gradient step; None when no step decreases Γ.
fn mirror_step(spec: &ModelSpec, t: f64, state: &Iterate, eta_start: f64) -> Result<Option<(Iterate, f64)>> {
    let shift = state.grad.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 4.0 * f64::EPSILON * state.value.abs().max(1.0);
    let mut eta = eta_start;
    while eta >= MIN_STEP {
        let raw: Vec<f64> = state
            .rho
            .as_slice()
            .iter()
            .zip(&state.grad)
            .map(|(r, g)| r * (-eta * (g - shift)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        let candidate: Vec<f64> = raw.iter().map(|r| r / total).collect();
        if candidate.iter().all(|&c| c > 0.0 && c.is_finite()) {
            let point = SimplexPoint(candidate);
            let next = gamma(spec, t, &point)?;
            let decrease: f64 = state
                .grad
                .iter()
                .zip(state.rho.as_slice().iter().zip(point.as_slice()))
                .map(|(g, (old, new))| g * (old - new))
                .sum();
            if next <= state.value - ARMIJO * decrease + slack {
                return Ok(Some((Iterate::new(spec, t, point)?, eta)));
            }
        }
        eta *= 0.5;
    }
    Ok(None)
}

// Newton step restricted to Σ d = 0; None unless it shrinks the projected gradient.
fn newton_step(spec: &ModelSpec, t: f64, state: &Iterate) -> Result<Option<Iterate>> {
    let m = spec.m();
    let hess = gamma_hessian(spec, t, &state.rho)?;
    let k = m + 1;
    let mut kkt = vec![0.0; k * k];
    for j in 0..m {
        for l in 0..m {
            kkt[j * k + l] = hess[j * m + l];
        }
        kkt[j * k + m] = 1.0;
        kkt[m * k + j] = 1.0;
    }
    let mut rhs: Vec<f64> = state.grad.iter().map(|g| -g).collect();
    rhs.push(0.0);
    let Ok(solution) = linalg::solve(&kkt, &rhs) else {
        return Ok(None);
    };
    let direction = &solution[..m];
    let mut alpha = 1.0;
    for _ in 0..60 {
        let candidate: Vec<f64> = state
            .rho
            .as_slice()
            .iter()
            .zip(direction)
            .map(|(r, d)| r + alpha * d)
            .collect();
        if candidate.iter().all(|&c| c > 0.0 && c.is_finite()) {
            let total: f64 = candidate.iter().sum();
            let point = SimplexPoint(candidate.iter().map(|c| c / total).collect());
            let next = Iterate::new(spec, t, point)?;
            if next.grad_norm < state.grad_norm {
                return Ok(Some(next));
            }
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// `−(1/N) ln w_{Nρ}` at one `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: u64,
    pub rate: f64,
    pub precision_limited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSequence {
    pub points: Vec<RatePoint>,
    /// Limit of the fit `Γ + (a ln N + b) / N` through the three largest `N`.
    pub extrapolated: Option<f64>,
}

impl RateSequence {
    /// Writes `N,rate,extrapolated` (the last column empty when unavailable).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["N", "rate", "extrapolated"])?;
        let extrapolated = self.extrapolated.map(format_real).unwrap_or_default();
        for p in &self.points {
            out.write_record([p.n.to_string(), format_real(p.rate), extrapolated.clone()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Composition `Nρ`, which must be integral.
pub fn scaled_composition(rho: &SimplexPoint, n: u64) -> Result<Composition> {
    let counts = rho
        .as_slice()
        .iter()
        .map(|&r| {
            let x = r * n as f64;
            let rounded = x.round();
            if (x - rounded).abs() > 1e-9 * x.max(1.0) || rounded > f64::from(u32::MAX) {
                Err(CoagError::InvalidArgument(format!("N ρ is not integral for N = {n}")))
            } else {
                Ok(rounded as u32)
            }
        })
        .collect::<Result<Vec<u32>>>()?;
    Ok(Composition::new(counts))
}

/// Empirical rates `−(1/N) ln w_{Nρ}(t)` from the exact solution, with a
/// fitted limit removing the `O(ln N / N)` correction.
pub fn empirical_rate(spec: &ModelSpec, t: f64, rho: &SimplexPoint, n_list: &[u64]) -> Result<RateSequence> {
    check_dims(spec, rho)?;
    if n_list.contains(&0) {
        return Err(CoagError::InvalidArgument("N must be positive".into()));
    }
    let solver = AnalyticSolver::new(spec, t)?;
    let points = n_list
        .par_iter()
        .map(|&n| {
            let comp = scaled_composition(rho, n)?;
            let value = solver.solve_detailed(&comp)?;
            if value.ln_value == f64::NEG_INFINITY {
                return Err(CoagError::Numerical(format!("w vanishes at {comp}")));
            }
            Ok(RatePoint {
                n,
                rate: -value.ln_value / n as f64,
                precision_limited: value.precision_limited,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let extrapolated = extrapolate(&points);
    Ok(RateSequence { points, extrapolated })
}

// Γ from rate(N) = Γ + (a ln N + b) / N through the three largest distinct N.
fn extrapolate(points: &[RatePoint]) -> Option<f64> {
    let mut sorted: Vec<&RatePoint> = points.iter().collect();
    sorted.sort_by_key(|p| p.n);
    sorted.dedup_by_key(|p| p.n);
    if sorted.len() < 3 {
        return None;
    }
    let last = &sorted[sorted.len() - 3..];
    let mut mat = Vec::with_capacity(9);
    let mut rhs = Vec::with_capacity(3);
    for p in last {
        let n = p.n as f64;
        mat.extend([1.0, n.ln() / n, 1.0 / n]);
        rhs.push(p.rate);
    }
    linalg::solve(&mat, &rhs).ok().map(|x| x[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> ModelSpec {
        ModelSpec::new(vec![vec![1.0]], vec![1.0]).unwrap()
    }

    fn stochastic() -> ModelSpec {
        ModelSpec::new(vec![vec![0.0, 2.0], vec![2.0, 0.0]], vec![0.5, 0.5]).unwrap()
    }

    fn pt(v: &[f64]) -> SimplexPoint {
        SimplexPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn simplex_points() {
        assert!(SimplexPoint::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexPoint::new(vec![1.0, 0.0]).is_err());
        assert!(SimplexPoint::new(vec![]).is_err());
        let p: SimplexPoint = serde_json::from_str("[0.25,0.75]").unwrap();
        assert_eq!(p.as_slice(), &[0.25, 0.75]);
        assert!(serde_json::from_str::<SimplexPoint>("[0.25,0.5]").is_err());
    }

    #[test]
    fn sigma_values() {
        assert_eq!(sigma(&single(), &[1.0]), vec![1.0]);
        assert_eq!(sigma(&stochastic(), &[0.5, 0.5]), vec![0.5, 0.5]);
        let spec = ModelSpec::new(vec![vec![1.0, 2.0], vec![2.0, 1.0]], vec![0.7, 0.3]).unwrap();
        assert_eq!(sigma(&spec, &[1.0, 0.0]), vec![0.7, 0.6]);
    }

    #[test]
    fn gamma_values() {
        let g = gamma(&single(), 0.5, &pt(&[1.0])).unwrap();
        assert!((g - (0.5 - 1.0 - 0.5f64.ln())).abs() < 1e-15);
        assert!((g - 0.19314718).abs() < 1e-8);
        assert!(gamma(&single(), 1.0, &pt(&[1.0])).unwrap().abs() < 1e-15);
        let g = gamma(&stochastic(), 0.5, &pt(&[0.5, 0.5])).unwrap();
        assert!((g - (2f64.ln() - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn unreachable_direction() {
        let spec = ModelSpec::new(vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            gamma(&spec, 0.5, &pt(&[0.5, 0.5])),
            Err(CoagError::Hypothesis(_))
        ));
    }

    #[test]
    fn gradient_matches_differences() {
        let spec = ModelSpec::new(
            vec![vec![1.0, 2.0, 0.0], vec![2.0, 1.0, 1.0], vec![0.0, 1.0, 1.0]],
            vec![0.3, 0.3, 0.4],
        )
        .unwrap();
        let rho = [0.2, 0.5, 0.3];
        let grad = gamma_gradient(&spec, 0.4, &pt(&rho)).unwrap();
        // Γ extended off the simplex by the same formula
        let raw = |r: &[f64]| {
            let s = sigma(&spec, r);
            (0..3).map(|l| r[l] * (r[l] / (0.4 * s[l])).ln() + 0.4 * s[l]).sum::<f64>() - 1.0
        };
        let h = 1e-6;
        for j in 0..3 {
            let mut up = rho;
            let mut down = rho;
            up[j] += h;
            down[j] -= h;
            let fd = (raw(&up) - raw(&down)) / (2.0 * h);
            assert!((fd - grad[j]).abs() < 1e-7, "j = {j}: {fd} vs {}", grad[j]);
        }
    }

    #[test]
    fn hessian_matches_second_differences() {
        let spec = ModelSpec::new(
            vec![vec![1.0, 2.0, 0.0], vec![2.0, 1.0, 1.0], vec![0.0, 1.0, 1.0]],
            vec![0.3, 0.3, 0.4],
        )
        .unwrap();
        let rho = [0.2, 0.5, 0.3];
        let hess = gamma_hessian(&spec, 0.4, &pt(&rho)).unwrap();
        let raw = |r: &[f64]| {
            let s = sigma(&spec, r);
            (0..3).map(|l| r[l] * (r[l] / (0.4 * s[l])).ln() + 0.4 * s[l]).sum::<f64>()
        };
        let h = 1e-4;
        let shifted = |j: usize, a: f64, k: usize, b: f64| {
            let mut r = rho;
            r[j] += a;
            r[k] += b;
            raw(&r)
        };
        for j in 0..3 {
            for k in 0..3 {
                let fd = (shifted(j, h, k, h) - shifted(j, h, k, -h) - shifted(j, -h, k, h) + shifted(j, -h, k, -h))
                    / (4.0 * h * h);
                assert!((fd - hess[j * 3 + k]).abs() < 1e-5, "({j}, {k}): {fd} vs {}", hess[j * 3 + k]);
            }
        }
    }

    #[test]
    fn symmetric_point_is_critical() {
        let g = gamma_gradient(&stochastic(), 0.7, &pt(&[0.5, 0.5])).unwrap();
        assert!(norm(&project_to_tangent(&g)) < 1e-15);
    }

    #[test]
    fn minimizer_single_component() {
        let r = minimize_gamma(&single(), 0.5, MinimizeOptions::default()).unwrap();
        assert_eq!(r.rho_star.as_slice(), &[1.0]);
        assert_eq!(r.iterations, 0);
        assert!((r.gamma_min - (0.5 - 1.0 - 0.5f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn minimizer_moves_with_time() {
        let spec = ModelSpec::new(vec![vec![1.0, 2.0], vec![2.0, 1.0]], vec![0.7, 0.3]).unwrap();
        let t_c = pgf::critical_time(&spec).unwrap();
        let early = minimize_gamma(&spec, 0.3 * t_c, MinimizeOptions::default()).unwrap();
        let late = minimize_gamma(&spec, 0.9 * t_c, MinimizeOptions::default()).unwrap();
        assert!(!early.boundary && !late.boundary);
        let gap: f64 = early
            .rho_star
            .as_slice()
            .iter()
            .zip(late.rho_star.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(gap > 1e-4, "gap {gap}");
    }

    #[test]
    fn minimizer_preconditions() {
        let spec = ModelSpec::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            minimize_gamma(&spec, 0.5, MinimizeOptions::default()),
            Err(CoagError::Hypothesis(_))
        ));
        assert!(matches!(
            minimize_gamma(&single(), 1.2, MinimizeOptions::default()),
            Err(CoagError::Supercritical { .. })
        ));
    }

    #[test]
    fn rate_rows() {
        let seq = empirical_rate(&single(), 0.5, &pt(&[1.0]), &[10, 20, 40]).unwrap();
        assert_eq!(seq.points.len(), 3);
        assert!(seq.extrapolated.is_some());
        let mut buf = Vec::new();
        seq.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("N,rate,extrapolated\n10,"));
        assert!(empirical_rate(&stochastic(), 1.0, &pt(&[0.5, 0.5]), &[3]).is_err());
        let short = empirical_rate(&single(), 0.5, &pt(&[1.0]), &[10]).unwrap();
        assert_eq!(short.extrapolated, None);
    }
}
