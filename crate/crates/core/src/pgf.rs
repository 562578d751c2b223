//! Generating functions of the branching process.
//!
//! A type-`k` individual has independent `Poisson(t A_kl p_l)` children of
//! each type `l`, so its offspring PGF is
//! `G_{X_k}(s) = exp(Σ_l t A_kl p_l (s_l − 1))`. The total-progeny PGFs
//! `g_k = G_{T⁽ᵏ⁾}(e^{−x})` solve the implicit system
//! `g_k = e^{−x_k} G_{X_k}(g)`, and `u_k(t, x) = p_k g_k` solves
//! `∂u/∂t = −(∇u) A (u − p)` below the critical time `T_c = 1 / ‖AP‖₂`.

use serde::{Deserialize, Serialize};

use crate::error::{CoagError, Result};
use crate::linalg;
use crate::model::ModelSpec;

/// Criticality of the branching process / gelation of the coagulation system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GelationReport {
    #[serde(rename = "T_c")]
    pub t_c: f64,
    /// Perron root of `AP` on the support of `p`.
    pub spectral_value: f64,
    pub blocks: Vec<BlockCriticality>,
    pub reducible: bool,
}

/// Critical time of one irreducible subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCriticality {
    pub components: Vec<usize>,
    pub spectral_value: f64,
    /// `None` when the block has no coagulation (spectral value zero).
    #[serde(rename = "T_c")]
    pub t_c: Option<f64>,
}

// Largest eigenvalue of P^{1/2} A P^{1/2} restricted to `components`.
fn block_spectral_value(spec: &ModelSpec, components: &[usize]) -> f64 {
    let k = components.len();
    if let [i] = components {
        return spec.ap(*i, *i).max(0.0);
    }
    let mut sym = vec![0.0; k * k];
    for (r, &i) in components.iter().enumerate() {
        for (c, &j) in components.iter().enumerate() {
            sym[r * k + c] = spec.p()[i].sqrt() * spec.a(i, j) * spec.p()[j].sqrt();
        }
    }
    linalg::symmetric_eigenvalues(&sym, k)
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(0.0)
}

/// Gelation time `T_c = 1 / ‖AP‖₂`, with per-block critical times when the
/// kernel is reducible on the support of `p`.
pub fn gelation_time(spec: &ModelSpec) -> Result<GelationReport> {
    let blocks: Vec<BlockCriticality> = spec
        .report()
        .blocks
        .iter()
        .map(|components| {
            let value = block_spectral_value(spec, components);
            BlockCriticality {
                components: components.clone(),
                spectral_value: value,
                t_c: (value > 0.0).then(|| 1.0 / value),
            }
        })
        .collect();
    let spectral_value = blocks.iter().map(|b| b.spectral_value).fold(0.0, f64::max);
    if spectral_value <= 0.0 {
        return Err(CoagError::InvalidSpec(
            "no coagulation on the support of p (spectral value 0)".into(),
        ));
    }
    Ok(GelationReport {
        t_c: 1.0 / spectral_value,
        spectral_value,
        reducible: blocks.len() > 1,
        blocks,
    })
}

/// Shorthand for `gelation_time(spec)?.t_c`.
pub fn critical_time(spec: &ModelSpec) -> Result<f64> {
    gelation_time(spec).map(|r| r.t_c)
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(CoagError::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    Ok(())
}

// Σ_l t A_kl p_l (s_l − 1)
fn offspring_exponent(spec: &ModelSpec, t: f64, k: usize, s: &[f64]) -> f64 {
    (0..spec.m()).map(|l| t * spec.ap(k, l) * (s[l] - 1.0)).sum()
}

/// Offspring PGF of a type-`k` individual, `exp(Σ_l t A_kl p_l (s_l − 1))`.
pub fn offspring_pgf(spec: &ModelSpec, t: f64, k: usize, s: &[f64]) -> Result<f64> {
    check_time(t)?;
    if k >= spec.m() || s.len() != spec.m() {
        return Err(CoagError::InvalidArgument("type index or argument length out of range".into()));
    }
    if s.iter().any(|&v| !(-1e-12..=1.0 + 1e-12).contains(&v)) {
        return Err(CoagError::InvalidArgument(format!("PGF argument {s:?} outside [0,1]^m")));
    }
    let s: Vec<f64> = s.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(offspring_exponent(spec, t, k, &s).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Switch to Newton steps once the plain iteration is close; the Jacobian
    /// is `I − diag(g) t A P` at the current iterate.
    pub newton: bool,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 1_000_000,
            newton: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    /// `G_{T⁽ˡ⁾}(e^{−x})` for each type `l`.
    pub g: Vec<f64>,
    pub iterations: usize,
    /// `max_l |g_l − e^{−x_l} G_{X_l}(g)|`.
    pub residual: f64,
}

fn fixed_point_map(spec: &ModelSpec, t: f64, decay: &[f64], g: &[f64], out: &mut [f64]) {
    for k in 0..spec.m() {
        out[k] = decay[k] * offspring_exponent(spec, t, k, g).exp();
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Minimal solution of `g_k = e^{−x_k} G_{X_k}(g)`, iterated from `g = 0`.
///
/// Starting below every fixed point selects the minimal one, which is the
/// (possibly defective) total-progeny PGF. At `x = 0` this is the vector of
/// extinction probabilities.
pub fn solve_fixed_point(spec: &ModelSpec, t: f64, x: &[f64], opts: FixedPointOptions) -> Result<FixedPointResult> {
    check_time(t)?;
    let m = spec.m();
    if x.len() != m || x.iter().any(|&v| v.is_nan() || v < 0.0) {
        return Err(CoagError::InvalidArgument(format!("x = {x:?} must lie in [0, ∞)^{m}")));
    }
    let decay: Vec<f64> = x.iter().map(|v| (-v).exp()).collect();
    let mut g = vec![0.0; m];
    let mut next = vec![0.0; m];
    let mut residual = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        fixed_point_map(spec, t, &decay, &g, &mut next);
        residual = max_abs_diff(&g, &next);
        if residual <= opts.tol {
            return Ok(FixedPointResult {
                g,
                iterations: iter,
                residual,
            });
        }
        debug_assert!(
            next.iter().zip(&g).all(|(n, o)| *n >= o - 1e-14 && *n <= 1.0 + 1e-14),
            "fixed-point iterates must be nondecreasing and bounded by 1"
        );
        let newton_step = if opts.newton && residual < 1e-3 {
            newton_update(spec, t, &g, &next)
        } else {
            None
        };
        match newton_step {
            Some(candidate) => g = candidate,
            None => std::mem::swap(&mut g, &mut next),
        }
    }
    Err(CoagError::NonConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

// One Newton step for g − F(g) = 0; `mapped` is F(g). Rejected (None) unless it
// moves upward and stays in [0, 1], which keeps the iterate below the minimal
// fixed point.
fn newton_update(spec: &ModelSpec, t: f64, g: &[f64], mapped: &[f64]) -> Option<Vec<f64>> {
    let m = spec.m();
    let mut jac = vec![0.0; m * m];
    for k in 0..m {
        for l in 0..m {
            let delta = if k == l { 1.0 } else { 0.0 };
            jac[k * m + l] = delta - mapped[k] * t * spec.ap(k, l);
        }
    }
    let rhs: Vec<f64> = mapped.iter().zip(g).map(|(f, v)| f - v).collect();
    let step = linalg::solve(&jac, &rhs).ok()?;
    let candidate: Vec<f64> = g.iter().zip(&step).map(|(v, d)| v + d).collect();
    let admissible = candidate
        .iter()
        .zip(mapped)
        .all(|(c, f)| c.is_finite() && *c >= *f - 1e-15 && *c <= 1.0 + 1e-15);
    admissible.then(|| candidate.into_iter().map(|c| c.min(1.0)).collect())
}

/// Extinction probabilities of the process started from each type.
pub fn extinction_probabilities(spec: &ModelSpec, t: f64) -> Result<Vec<f64>> {
    let opts = FixedPointOptions {
        newton: true,
        ..FixedPointOptions::default()
    };
    solve_fixed_point(spec, t, &vec![0.0; spec.m()], opts).map(|r| r.g)
}

/// `u_k(t, x) = p_k G_{T⁽ᵏ⁾}(e^{−x})`.
pub fn u_field(spec: &ModelSpec, t: f64, x: &[f64], opts: FixedPointOptions) -> Result<Vec<f64>> {
    let fp = solve_fixed_point(spec, t, x, opts)?;
    Ok(fp.g.iter().zip(spec.p()).map(|(g, p)| p * g).collect())
}

/// Finite-difference residual `∂u/∂t + (∇u) A (u − p)` at `(t, x)`.
///
/// Central differences with step `h`; one-sided second-order stencils where
/// the central one would leave `t ≥ 0` or `x ≥ 0`. The residual of the exact
/// solution is the `O(h²)` truncation error of the stencil.
pub fn pde_residual(spec: &ModelSpec, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let m = spec.m();
    if !(h.is_finite() && h > 0.0) {
        return Err(CoagError::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    if x.len() != m {
        return Err(CoagError::InvalidArgument("x has the wrong length".into()));
    }
    let t_c = critical_time(spec)?;
    let t_reach = if t >= h { t + h } else { t + 2.0 * h };
    if t_reach >= t_c {
        return Err(CoagError::Supercritical { t: t_reach, t_c });
    }
    let opts = FixedPointOptions {
        tol: 1e-14,
        newton: true,
        ..FixedPointOptions::default()
    };
    let u = |tt: f64, xx: &[f64]| u_field(spec, tt, xx, opts);

    let u0 = u(t, x)?;
    let du_dt = if t >= h {
        let (up, um) = (u(t + h, x)?, u(t - h, x)?);
        central(&up, &um, h)
    } else {
        let (u1, u2) = (u(t + h, x)?, u(t + 2.0 * h, x)?);
        forward(&u0, &u1, &u2, h)
    };

    // jac[i][j] = ∂u_i/∂x_j
    let mut jac = vec![vec![0.0; m]; m];
    for j in 0..m {
        let shifted = |delta: f64| -> Result<Vec<f64>> {
            let mut xs = x.to_vec();
            xs[j] += delta;
            u(t, &xs)
        };
        let column = if x[j] >= h {
            central(&shifted(h)?, &shifted(-h)?, h)
        } else {
            forward(&u0, &shifted(h)?, &shifted(2.0 * h)?, h)
        };
        for i in 0..m {
            jac[i][j] = column[i];
        }
    }

    let excess: Vec<f64> = u0.iter().zip(spec.p()).map(|(ui, pi)| ui - pi).collect();
    let a_excess: Vec<f64> = (0..m)
        .map(|r| (0..m).map(|c| spec.a(r, c) * excess[c]).sum())
        .collect();
    Ok((0..m)
        .map(|i| du_dt[i] + (0..m).map(|j| jac[i][j] * a_excess[j]).sum::<f64>())
        .collect())
}

fn central(plus: &[f64], minus: &[f64], h: f64) -> Vec<f64> {
    plus.iter().zip(minus).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

fn forward(f0: &[f64], f1: &[f64], f2: &[f64], h: f64) -> Vec<f64> {
    (0..f0.len())
        .map(|i| (-3.0 * f0[i] + 4.0 * f1[i] - f2[i]) / (2.0 * h))
        .collect()
}
