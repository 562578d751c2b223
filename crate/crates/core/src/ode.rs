//! Fixed-step integration of the truncated multicomponent coagulation system.
//!
//! The state holds every composition with `1 ≤ |n| ≤ N_max`. Gain terms whose
//! product `k + l` leaves the window are dropped from the state, and their mass
//! is accumulated as an out-of-window flux so truncation loss can be told
//! apart from gelation.
//!
//! Two loss terms are available:
//! - [`Form::Full`]: `Σ_{k in window} K(n,k) w_n w_k = nᵀ A m_W(t) w_n`,
//! - [`Form::Reduced`]: `nᵀ A m(0) w_n` with `m(0) = p`.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoagError, Result};
use crate::model::{Composition, ModelSpec, SizeDistribution, DEFAULT_MASS_FLOOR};

/// Entries more negative than this abort the integration; milder undershoot is
/// clipped to zero.
pub const NEGATIVE_MASS_LIMIT: f64 = -1e-10;

const PARALLEL_THRESHOLD: usize = 512;

/// All compositions with `1 ≤ |n| ≤ max_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationWindow {
    pub max_size: u32,
}

impl TruncationWindow {
    pub fn new(max_size: u32) -> Result<Self> {
        if max_size == 0 {
            return Err(CoagError::InvalidArgument("truncation window needs N_max >= 1".into()));
        }
        Ok(Self { max_size })
    }

    pub fn contains(&self, n: &Composition) -> bool {
        let s = n.size();
        s >= 1 && s <= u64::from(self.max_size)
    }

    /// Number of compositions in the window, `C(N_max + m, m) − 1`.
    pub fn state_count(&self, m: usize) -> u128 {
        let n = u128::from(self.max_size);
        let mut c: u128 = 1;
        for i in 1..=m as u128 {
            c = c * (n + i) / i;
        }
        c - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Full,
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    pub dt: f64,
    pub method: Method,
    pub form: Form,
    /// Output times; when empty only `t_end` is recorded.
    pub record_times: Vec<f64>,
    /// Snapshot entries below this mass are omitted.
    pub mass_floor: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            method: Method::Rk4,
            form: Form::Reduced,
            record_times: Vec::new(),
            mass_floor: DEFAULT_MASS_FLOOR,
        }
    }
}

/// State of the truncated system at one output time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub distribution: SizeDistribution,
    /// Mass vector of the in-window state.
    pub mass: Vec<f64>,
    /// Mass per component carried out of the window by gain terms, accumulated
    /// since `t = 0`.
    pub flux_out: Vec<f64>,
    /// Scalar deficit `|m(0)| − |m(t)|`.
    pub deficit: f64,
}

impl Snapshot {
    pub fn t(&self) -> f64 {
        self.distribution.t()
    }
}

/// Precomputed convolution structure for one model and window.
pub struct TruncatedSystem<'a> {
    spec: &'a ModelSpec,
    window: TruncationWindow,
    states: Vec<Composition>,
    index: HashMap<Composition, usize>,
    // Row-major S×m copy of the state counts.
    counts: Vec<f64>,
    // Row-major S×m rows nᵀA.
    loss_rows: Vec<f64>,
    // nᵀ A p per state.
    reduced_loss: Vec<f64>,
    // Gain pairs grouped by target (CSR); coefficient is K(k,l), halved on the diagonal.
    offsets: Vec<usize>,
    left: Vec<u32>,
    right: Vec<u32>,
    coef: Vec<f64>,
}

impl<'a> TruncatedSystem<'a> {
    pub fn new(spec: &'a ModelSpec, window: TruncationWindow) -> Result<Self> {
        let m = spec.m();
        let states = Composition::enumerate(m, window.max_size);
        if states.len() > u32::MAX as usize {
            return Err(CoagError::InvalidArgument("truncation window too large".into()));
        }
        let index: HashMap<Composition, usize> =
            states.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();

        let counts: Vec<f64> = states
            .iter()
            .flat_map(|n| n.counts().iter().map(|&c| f64::from(c)))
            .collect();
        let mut loss_rows = vec![0.0; states.len() * m];
        let mut reduced_loss = vec![0.0; states.len()];
        for s in 0..states.len() {
            let n = &counts[s * m..(s + 1) * m];
            for j in 0..m {
                loss_rows[s * m + j] = (0..m).map(|i| n[i] * spec.a(i, j)).sum();
            }
            reduced_loss[s] = (0..m).map(|j| loss_rows[s * m + j] * spec.p()[j]).sum();
        }

        let sizes: Vec<u64> = states.iter().map(Composition::size).collect();
        let max = u64::from(window.max_size);
        let mut per_target: Vec<Vec<(u32, u32, f64)>> = vec![Vec::new(); states.len()];
        for i in 0..states.len() {
            for j in i..states.len() {
                // States are sorted by size.
                if sizes[i] + sizes[j] > max {
                    break;
                }
                let k = spec.kernel(&states[i], &states[j]);
                if k == 0.0 {
                    continue;
                }
                let coef = if i == j { 0.5 * k } else { k };
                let target = states[i]
                    .checked_add(&states[j])
                    .and_then(|n| index.get(&n).copied())
                    .expect("sum of in-window pair with |k+l| <= N_max is in the window");
                per_target[target].push((i as u32, j as u32, coef));
            }
        }
        let mut offsets = Vec::with_capacity(states.len() + 1);
        let total: usize = per_target.iter().map(Vec::len).sum();
        let (mut left, mut right, mut coef) =
            (Vec::with_capacity(total), Vec::with_capacity(total), Vec::with_capacity(total));
        offsets.push(0);
        for pairs in per_target {
            for (i, j, c) in pairs {
                left.push(i);
                right.push(j);
                coef.push(c);
            }
            offsets.push(left.len());
        }

        Ok(Self {
            spec,
            window,
            states,
            index,
            counts,
            loss_rows,
            reduced_loss,
            offsets,
            left,
            right,
            coef,
        })
    }

    pub fn states(&self) -> &[Composition] {
        &self.states
    }

    pub fn window(&self) -> TruncationWindow {
        self.window
    }

    /// Number of stored gain pairs.
    pub fn pair_count(&self) -> usize {
        self.coef.len()
    }

    /// Dense state vector of `dist`; rejects support outside the window.
    pub fn load(&self, dist: &SizeDistribution) -> Result<Vec<f64>> {
        if dist.m() != self.spec.m() {
            return Err(CoagError::InvalidArgument(format!(
                "distribution has {} components, model has {}",
                dist.m(),
                self.spec.m()
            )));
        }
        let mut w = vec![0.0; self.states.len()];
        for (n, mass) in dist.iter() {
            let idx = self.index.get(n).ok_or_else(|| {
                CoagError::InvalidArgument(format!(
                    "composition {n} lies outside the window |n| <= {}",
                    self.window.max_size
                ))
            })?;
            w[*idx] = mass;
        }
        Ok(w)
    }

    pub fn mass_vector(&self, w: &[f64]) -> Vec<f64> {
        let m = self.spec.m();
        let mut mass = vec![0.0; m];
        for (s, &ws) in w.iter().enumerate() {
            if ws == 0.0 {
                continue;
            }
            for (mi, c) in mass.iter_mut().zip(&self.counts[s * m..(s + 1) * m]) {
                *mi += c * ws;
            }
        }
        mass
    }

    /// Writes `dw/dt` into `dw` and the out-of-window mass flux rate into `flux`.
    pub fn rhs(&self, w: &[f64], form: Form, dw: &mut [f64], flux: &mut [f64]) {
        let m = self.spec.m();
        let gain = |s: usize| -> f64 {
            let mut g = 0.0;
            for q in self.offsets[s]..self.offsets[s + 1] {
                g += self.coef[q] * w[self.left[q] as usize] * w[self.right[q] as usize];
            }
            g
        };
        if self.states.len() >= PARALLEL_THRESHOLD {
            dw.par_iter_mut().enumerate().for_each(|(s, d)| *d = gain(s));
        } else {
            dw.iter_mut().enumerate().for_each(|(s, d)| *d = gain(s));
        }

        let mass = self.mass_vector(w);
        let mut total_gain = vec![0.0; m];
        let mut window_gain = vec![0.0; m];
        for s in 0..self.states.len() {
            let n = &self.counts[s * m..(s + 1) * m];
            let row = &self.loss_rows[s * m..(s + 1) * m];
            let window_rate: f64 = row.iter().zip(&mass).map(|(r, mj)| r * mj).sum();
            // Σ_l ½ K(n,l)(n + l) w_n w_l over all ordered pairs = n (nᵀA m_W) w_n.
            for i in 0..m {
                total_gain[i] += n[i] * window_rate * w[s];
                window_gain[i] += n[i] * dw[s];
            }
            let loss_rate = match form {
                Form::Full => window_rate,
                Form::Reduced => self.reduced_loss[s],
            };
            dw[s] -= loss_rate * w[s];
        }
        for i in 0..m {
            flux[i] = total_gain[i] - window_gain[i];
        }
    }

    fn snapshot(&self, t: f64, w: &[f64], flux: &[f64], initial_mass: f64, floor: f64) -> Result<Snapshot> {
        let mut distribution = SizeDistribution::new(self.spec.m(), t);
        for (n, &ws) in self.states.iter().zip(w) {
            if ws > 0.0 && ws >= floor {
                distribution.insert(n.clone(), ws)?;
            }
        }
        let mass = self.mass_vector(w);
        let deficit = initial_mass - mass.iter().sum::<f64>();
        Ok(Snapshot {
            distribution,
            mass,
            flux_out: flux.to_vec(),
            deficit,
        })
    }
}

/// `dw/dt` for every composition in the window, nonzero entries only.
pub fn derivative(
    spec: &ModelSpec,
    dist: &SizeDistribution,
    window: TruncationWindow,
    form: Form,
) -> Result<BTreeMap<Composition, f64>> {
    let system = TruncatedSystem::new(spec, window)?;
    let w = system.load(dist)?;
    let mut dw = vec![0.0; w.len()];
    let mut flux = vec![0.0; spec.m()];
    system.rhs(&w, form, &mut dw, &mut flux);
    Ok(system
        .states
        .iter()
        .zip(dw)
        .filter(|(_, d)| *d != 0.0)
        .map(|(n, d)| (n.clone(), d))
        .collect())
}

/// Integrates from the monodisperse initial condition and returns snapshots at
/// `config.record_times` (or only at `t_end` when none are given).
pub fn integrate(
    spec: &ModelSpec,
    window: TruncationWindow,
    config: &OdeConfig,
    t_end: f64,
) -> Result<Vec<Snapshot>> {
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(CoagError::InvalidArgument(format!("t_end must be positive, got {t_end}")));
    }
    if !(config.dt.is_finite() && config.dt > 0.0) {
        return Err(CoagError::InvalidArgument(format!("dt must be positive, got {}", config.dt)));
    }
    let records = if config.record_times.is_empty() {
        vec![t_end]
    } else {
        config.record_times.clone()
    };
    if records.windows(2).any(|w| w[1] < w[0]) {
        return Err(CoagError::InvalidArgument("record times must be sorted".into()));
    }
    if records.iter().any(|&r| !(0.0..=t_end).contains(&r)) {
        return Err(CoagError::InvalidArgument(format!("record times must lie in [0, {t_end}]")));
    }

    let system = TruncatedSystem::new(spec, window)?;
    let s = system.states.len();
    let m = spec.m();
    let mut w = system.load(&SizeDistribution::monodisperse(spec))?;
    let initial_mass: f64 = system.mass_vector(&w).iter().sum();
    let mut flux = vec![0.0; m];
    let mut stepper = Stepper::new(s, m);

    let mut out = Vec::with_capacity(records.len());
    let mut t = 0.0;
    for &target in &records {
        let span = target - t;
        if span > 0.0 {
            let steps = ((span / config.dt) - 1e-9).ceil().max(1.0) as u64;
            let h = span / steps as f64;
            for k in 0..steps {
                stepper.step(&system, config.method, config.form, h, &mut w, &mut flux);
                let now = t + (k + 1) as f64 * h;
                check_state(&mut w, now)?;
            }
            t = target;
        }
        out.push(system.snapshot(target, &w, &flux, initial_mass, config.mass_floor)?);
    }
    Ok(out)
}

/// Scalar mass deficit `|m(0)| − |m(t)|` of the truncated system on `t_grid`.
pub fn mass_loss_curve(
    spec: &ModelSpec,
    window: TruncationWindow,
    config: &OdeConfig,
    t_grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if t_grid.is_empty() {
        return Ok(Vec::new());
    }
    if t_grid.iter().any(|&t| !(t.is_finite() && t >= 0.0)) {
        return Err(CoagError::InvalidArgument("time grid must be nonnegative".into()));
    }
    let t_end = *t_grid.last().expect("non-empty");
    if t_end == 0.0 {
        return Ok(t_grid.iter().map(|&t| (t, 0.0)).collect());
    }
    let cfg = OdeConfig {
        record_times: t_grid.to_vec(),
        ..config.clone()
    };
    Ok(integrate(spec, window, &cfg, t_end)?
        .into_iter()
        .map(|snap| (snap.t(), snap.deficit))
        .collect())
}

fn check_state(w: &mut [f64], t: f64) -> Result<()> {
    for v in w.iter_mut() {
        if !v.is_finite() {
            return Err(CoagError::Integration {
                t,
                reason: "non-finite state (step too large?)".into(),
            });
        }
        if *v < 0.0 {
            if *v < NEGATIVE_MASS_LIMIT {
                return Err(CoagError::Integration {
                    t,
                    reason: format!("negative mass {v:e}"),
                });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

// Scratch buffers for the explicit schemes.
struct Stepper {
    k: [Vec<f64>; 4],
    kf: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Stepper {
    fn new(s: usize, m: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; s]),
            kf: std::array::from_fn(|_| vec![0.0; m]),
            tmp: vec![0.0; s],
        }
    }

    fn step(&mut self, sys: &TruncatedSystem<'_>, method: Method, form: Form, h: f64, w: &mut [f64], flux: &mut [f64]) {
        match method {
            Method::Euler => {
                sys.rhs(w, form, &mut self.k[0], &mut self.kf[0]);
                for (wi, ki) in w.iter_mut().zip(&self.k[0]) {
                    *wi += h * ki;
                }
                for (fi, ki) in flux.iter_mut().zip(&self.kf[0]) {
                    *fi += h * ki;
                }
            }
            Method::Rk4 => {
                let [k1, k2, k3, k4] = &mut self.k;
                let [f1, f2, f3, f4] = &mut self.kf;
                let tmp = &mut self.tmp;
                sys.rhs(w, form, k1, f1);
                axpy(tmp, w, 0.5 * h, k1);
                sys.rhs(tmp, form, k2, f2);
                axpy(tmp, w, 0.5 * h, k2);
                sys.rhs(tmp, form, k3, f3);
                axpy(tmp, w, h, k3);
                sys.rhs(tmp, form, k4, f4);
                for i in 0..w.len() {
                    w[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                for i in 0..flux.len() {
                    flux[i] += h / 6.0 * (f1[i] + 2.0 * f2[i] + 2.0 * f3[i] + f4[i]);
                }
            }
        }
    }
}

fn axpy(out: &mut [f64], base: &[f64], h: f64, k: &[f64]) {
    for ((o, b), ki) in out.iter_mut().zip(base).zip(k) {
        *o = b + h * ki;
    }
}
