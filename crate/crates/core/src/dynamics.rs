//! Controlled dynamics in the extended phase space and the mean-field
//! differential inclusion (MFDI).
//!
//! A [`ModelSpec`] bundles the drift `f(t,x,m,u)`, running reward rate
//! `g(t,x,m,u)`, terminal reward `sigma(x,m)`, the finite control sample `U`
//! and the regularity constants (Lipschitz constant `L`, terminal constant
//! `kappa`, time modulus `alpha`, speed bound `R`, derivative radius `c`).
//! Models are registered presets parameterised by numbers; they consume the
//! measure argument through cheap summary statistics (Fourier mass modes and
//! the representative mean), which keeps every Lipschitz constant explicit.
//!
//! The vectogram `F(t,x,m) = co{(f,g)(t,x,m,u) : u in U}` is explored through
//! explicit mixture weights over `U` on a simplex mesh; distances to the
//! vectogram are exact convex projections onto the hull of the extreme
//! samples. Relaxed trajectories integrate the mixture field with explicit
//! Euler, and [`mfdi_solve`] runs Picard iteration over the measure flow,
//! halving the horizon when the iteration stalls.

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::GridFunction;
use crate::measures::{
    concat_path_measures, project, DiscreteMeasure, ExtendedFlow, ExtendedMeasure, ExtendedPoint,
    Flow, MeasureFlow, PathMeasure,
};
use crate::torus::{TorusLattice, TorusPoint};
use crate::wasserstein::w1_distance;
use rand::Rng;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Measure statistics
// ---------------------------------------------------------------------------

/// Summary statistics through which the preset models read a measure.
/// Everything here is linear in the measure, so mixtures of measures carry
/// the mixed statistics.
#[derive(Debug, Clone)]
pub struct MeasureStats {
    /// Per-axis average of the canonical representatives.
    pub mean: Vec<f64>,
    /// Per-axis first Fourier mode, cosine part.
    pub cos1: Vec<f64>,
    /// Per-axis first Fourier mode, sine part.
    pub sin1: Vec<f64>,
}

impl MeasureStats {
    pub fn compute(m: &DiscreteMeasure) -> MeasureStats {
        let d = m.dim();
        let mut mean = vec![0.0; d];
        let mut cos1 = vec![0.0; d];
        let mut sin1 = vec![0.0; d];
        for (p, w) in m.atoms() {
            for a in 0..d {
                let x = p.coords()[a];
                mean[a] += w * x;
                let t = 2.0 * std::f64::consts::PI * x;
                cos1[a] += w * t.cos();
                sin1[a] += w * t.sin();
            }
        }
        MeasureStats { mean, cos1, sin1 }
    }

    /// Smooth first-mode density surrogate, valued in `[0, 2]`.
    pub fn density(&self, x: &TorusPoint) -> f64 {
        let d = self.mean.len() as f64;
        let mut acc = 1.0;
        for a in 0..self.mean.len() {
            let t = 2.0 * std::f64::consts::PI * x.coords()[a];
            acc += (self.cos1[a] * t.cos() + self.sin1[a] * t.sin()) / d;
        }
        acc
    }
}

/// A measure flow with one `MeasureStats` per slice.
#[derive(Debug, Clone)]
pub struct StatFlow {
    times: Vec<f64>,
    stats: Vec<MeasureStats>,
}

impl StatFlow {
    pub fn from_flow(flow: &MeasureFlow) -> StatFlow {
        StatFlow {
            times: flow.times().to_vec(),
            stats: flow.slices().iter().map(MeasureStats::compute).collect(),
        }
    }

    pub fn constant(times: Vec<f64>, st: MeasureStats) -> StatFlow {
        let stats = vec![st; times.len()];
        StatFlow { times, stats }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Statistics at the grid time nearest to `t`.
    pub fn at(&self, t: f64) -> &MeasureStats {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, &tk) in self.times.iter().enumerate() {
            let d = (tk - t).abs();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        &self.stats[best]
    }
}

// ---------------------------------------------------------------------------
// Model presets
// ---------------------------------------------------------------------------

/// Numeric parameters for the model presets; fields a preset does not
/// consume are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    /// Amplitude of the terminal payoff `sigma`.
    pub amplitude: f64,
    /// Strength of the mean-field coupling (crowd/congestion presets).
    pub coupling: f64,
    /// Quadratic control penalty in the running reward.
    pub control_cost: f64,
    /// Mean-reversion rate.
    pub rate: f64,
    /// Number of control samples.
    pub controls: usize,
    /// Constant drift (per axis) for the `drift` preset.
    pub drift: f64,
    /// Constant reward rate for the `drift` preset.
    pub reward: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            amplitude: 1.0,
            coupling: 0.5,
            control_cost: 0.0,
            rate: 1.0,
            controls: 3,
            drift: 0.0,
            reward: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Zero,
    Drift,
    Decoupled,
    CrowdAversion,
    Congestion,
    MeanReversion,
}

/// A registered game model: dynamics, rewards and regularity constants.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    name: String,
    dim: usize,
    kind: Kind,
    params: ModelParams,
    controls: Vec<Vec<f64>>,
    lip: f64,
    sigma_lip: f64,
    time_lip: f64,
    bound: f64,
    radius: f64,
}

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

impl ModelSpec {
    /// Instantiate a named preset: `zero`, `drift`, `decoupled-1d`,
    /// `crowd-aversion-1d`, `congestion-1d`, `mean-reversion-1d` (or the
    /// `-2d` variants).
    pub fn preset(name: &str, params: &ModelParams) -> Result<ModelSpec> {
        let (base, dim) = match name.strip_suffix("-1d") {
            Some(b) => (b, 1),
            None => match name.strip_suffix("-2d") {
                Some(b) => (b, 2),
                None => (name, 1),
            },
        };
        let kind = match base {
            "zero" => Kind::Zero,
            "drift" => Kind::Drift,
            "decoupled" => Kind::Decoupled,
            "crowd-aversion" => Kind::CrowdAversion,
            "congestion" => Kind::Congestion,
            "mean-reversion" => Kind::MeanReversion,
            _ => return Err(Error::invalid(format!("unknown model preset '{name}'"))),
        };
        let p = params.clone();
        if p.controls == 0 {
            return Err(Error::invalid("need at least one control sample"));
        }
        let controls: Vec<Vec<f64>> = match kind {
            Kind::Zero | Kind::Drift | Kind::MeanReversion => vec![vec![0.0; dim]],
            _ => control_sample(dim, p.controls),
        };
        let umax = controls
            .iter()
            .map(|u| u.iter().map(|c| c * c).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        // first-mode density surrogate: x-Lipschitz 2*pi, W1-Lipschitz
        // 2*sqrt(2)*pi; 9.0 covers both with margin
        let (lip, bound) = match kind {
            Kind::Zero => (0.0, 0.0),
            Kind::Drift => (0.0, p.drift.abs().max(p.reward.abs())),
            Kind::Decoupled => (0.0, umax),
            Kind::CrowdAversion => (
                9.0 * p.coupling,
                umax.max(2.0 * p.coupling + p.control_cost * umax * umax),
            ),
            Kind::Congestion => (
                9.0 * p.coupling * umax,
                umax.max(p.control_cost * umax * umax),
            ),
            Kind::MeanReversion => (p.rate, p.rate * (dim as f64).sqrt()),
        };
        let sigma_lip = TWO_PI * p.amplitude.abs();
        Ok(ModelSpec {
            name: name.to_string(),
            dim,
            kind,
            params: p,
            controls,
            lip,
            sigma_lip,
            time_lip: 0.0,
            bound,
            radius: bound,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    /// Lipschitz constant `L` of `f` and `g` in `(x, m)`.
    pub fn lipschitz(&self) -> f64 {
        self.lip
    }

    /// Lipschitz constant `kappa` of the terminal reward in `x`.
    pub fn sigma_lipschitz(&self) -> f64 {
        self.sigma_lip
    }

    /// Uniform bound `R` on `||f||` and `|g|`.
    pub fn speed_bound(&self) -> f64 {
        self.bound
    }

    /// Derivative-constraint radius `c >= R`.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Time modulus `alpha(delta)`; the presets are autonomous.
    pub fn alpha(&self, delta: f64) -> f64 {
        self.time_lip * delta.abs()
    }

    pub fn stats(&self, m: &DiscreteMeasure) -> MeasureStats {
        MeasureStats::compute(m)
    }

    /// Drift `f(t, x, m, u_k)` through the measure statistics.
    pub fn drift(&self, _t: f64, x: &TorusPoint, st: &MeasureStats, u: usize) -> Vec<f64> {
        match self.kind {
            Kind::Zero => vec![0.0; self.dim],
            Kind::Drift => vec![self.params.drift; self.dim],
            Kind::Decoupled | Kind::CrowdAversion => self.controls[u].clone(),
            Kind::Congestion => {
                let den = 1.0 + self.params.coupling * st.density(x);
                self.controls[u].iter().map(|c| c / den).collect()
            }
            Kind::MeanReversion => (0..self.dim)
                .map(|a| self.params.rate * (st.mean[a] - x.coords()[a]))
                .collect(),
        }
    }

    /// Running reward rate `g(t, x, m, u_k)`.
    pub fn reward_rate(&self, _t: f64, x: &TorusPoint, st: &MeasureStats, u: usize) -> f64 {
        let ctrl_pen = |u: usize| -> f64 {
            let n2: f64 = self.controls[u].iter().map(|c| c * c).sum();
            -self.params.control_cost * n2
        };
        match self.kind {
            Kind::Zero | Kind::Decoupled | Kind::MeanReversion => 0.0,
            Kind::Drift => self.params.reward,
            Kind::CrowdAversion => -self.params.coupling * st.density(x) + ctrl_pen(u),
            Kind::Congestion => ctrl_pen(u),
        }
    }

    /// Terminal reward `sigma(x, m)`.
    pub fn terminal(&self, x: &TorusPoint, _st: &MeasureStats) -> f64 {
        self.params.amplitude * (TWO_PI * x.coords()[0]).cos()
    }

    /// Terminal reward sampled on a lattice.
    pub fn terminal_grid(&self, lattice: TorusLattice, m: &DiscreteMeasure) -> GridFunction {
        let st = self.stats(m);
        GridFunction::from_fn(lattice, |x| self.terminal(x, &st))
    }

    /// Interval from which empirical validation probes are drawn. The
    /// mean-reversion drift acts on canonical representatives, so its
    /// constants hold on supports narrower than half the circle where the
    /// representative distance coincides with the quotient metric.
    pub fn probe_interval(&self) -> (f64, f64) {
        match self.kind {
            Kind::MeanReversion => (0.26, 0.74),
            _ => (0.0, 1.0),
        }
    }

    /// Empirical check of the declared constants on random probes
    /// (5% slack): speed bound, space/measure Lipschitz, terminal Lipschitz.
    pub fn validate(&self, rng: &mut impl Rng, probes: usize) -> Result<()> {
        let (lo, hi) = self.probe_interval();
        fn rand_point(rng: &mut impl Rng, dim: usize, lo: f64, hi: f64) -> TorusPoint {
            let coords: Vec<f64> = (0..dim).map(|_| rng.random_range(lo..hi)).collect();
            TorusPoint::wrap(&coords).unwrap()
        }
        fn rand_measure(rng: &mut impl Rng, dim: usize, lo: f64, hi: f64) -> DiscreteMeasure {
            let n = rng.random_range(1..=6usize);
            DiscreteMeasure::uniform((0..n).map(|_| rand_point(rng, dim, lo, hi)).collect())
                .unwrap()
        }
        for _ in 0..probes {
            let t: f64 = rng.random();
            let x1 = rand_point(rng, self.dim, lo, hi);
            let x2 = rand_point(rng, self.dim, lo, hi);
            let m1 = rand_measure(rng, self.dim, lo, hi);
            let m2 = rand_measure(rng, self.dim, lo, hi);
            let s1 = self.stats(&m1);
            let s2 = self.stats(&m2);
            let dx = x1.dist(&x2);
            let dm = w1_distance(&m1, &m2)?;
            for u in 0..self.num_controls() {
                let f1 = self.drift(t, &x1, &s1, u);
                let f2 = self.drift(t, &x2, &s2, u);
                let g1 = self.reward_rate(t, &x1, &s1, u);
                let g2 = self.reward_rate(t, &x2, &s2, u);
                let nf1 = f1.iter().map(|c| c * c).sum::<f64>().sqrt();
                if nf1 > self.bound * 1.000001 + 1e-12 || g1.abs() > self.bound * 1.000001 + 1e-12
                {
                    return Err(Error::invalid(format!(
                        "speed bound R={} violated by preset '{}'",
                        self.bound, self.name
                    )));
                }
                let df = f1
                    .iter()
                    .zip(&f2)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let allowed = 1.05 * self.lip * (dx + dm) + 1e-9;
                if df > allowed || (g1 - g2).abs() > allowed {
                    return Err(Error::invalid(format!(
                        "Lipschitz constant L={} violated by preset '{}' ({:.3e} > {:.3e})",
                        self.lip,
                        self.name,
                        df.max((g1 - g2).abs()),
                        allowed
                    )));
                }
            }
            let ds = (self.terminal(&x1, &s1) - self.terminal(&x2, &s1)).abs();
            if ds > 1.05 * self.sigma_lip * dx + 1e-9 {
                return Err(Error::invalid(format!(
                    "terminal Lipschitz constant {} violated by preset '{}'",
                    self.sigma_lip, self.name
                )));
            }
        }
        Ok(())
    }
}

/// Evenly placed control sample: `k` values in `[-1, 1]` for `d = 1`,
/// `k` unit directions for `d = 2`.
fn control_sample(dim: usize, k: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => {
            if k == 1 {
                vec![vec![0.0]]
            } else {
                (0..k)
                    .map(|i| vec![-1.0 + 2.0 * i as f64 / (k - 1) as f64])
                    .collect()
            }
        }
        _ => (0..k)
            .map(|i| {
                let th = TWO_PI * i as f64 / k as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Vectogram
// ---------------------------------------------------------------------------

/// A point of the extended velocity space `(a, b) in R^d x R`.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub a: Vec<f64>,
    pub b: f64,
}

impl Velocity {
    pub fn norm(&self) -> f64 {
        (self.a.iter().map(|c| c * c).sum::<f64>() + self.b * self.b).sqrt()
    }

    fn as_vec(&self) -> Vec<f64> {
        let mut v = self.a.clone();
        v.push(self.b);
        v
    }
}

/// Weighted atoms of (base point, extended velocity): houses the velocity
/// plans `beta` (bases on `T^d`) and `gamma` (bases on `T^d x R`). The
/// support constraint `||a|| <= c, |b| <= c` is tracked via [`Self::radius`].
#[derive(Debug, Clone)]
pub struct VelocityPlan<P> {
    atoms: Vec<(P, Velocity, f64)>,
}

impl<P: Clone> VelocityPlan<P> {
    pub fn new(atoms: Vec<(P, Velocity, f64)>) -> Result<VelocityPlan<P>> {
        if atoms.is_empty() {
            return Err(Error::invalid("velocity plan needs at least one atom"));
        }
        let total: f64 = atoms.iter().map(|(_, _, w)| w).sum();
        if atoms.iter().any(|(_, _, w)| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("velocity plan weights must be a probability"));
        }
        Ok(VelocityPlan { atoms })
    }

    pub fn atoms(&self) -> &[(P, Velocity, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Smallest `c` with every velocity in `B_c x [-c, c]`.
    pub fn radius(&self) -> f64 {
        self.atoms
            .iter()
            .map(|(_, v, _)| {
                let na = v.a.iter().map(|c| c * c).sum::<f64>().sqrt();
                na.max(v.b.abs())
            })
            .fold(0.0f64, f64::max)
    }

    /// Mean extended velocity norm `∫ (||a|| + |b|) d plan`.
    pub fn mean_speed(&self) -> f64 {
        self.atoms
            .iter()
            .map(|(_, v, w)| {
                let na = v.a.iter().map(|c| c * c).sum::<f64>().sqrt();
                w * (na + v.b.abs())
            })
            .sum()
    }
}

/// Simplex mesh of mixture weights over `k` controls: the `k` vertices
/// first, then the remaining compositions at the given subdivision count in
/// lexicographic order.
#[derive(Debug, Clone)]
pub struct MixtureMesh {
    k: usize,
    weights: Vec<Vec<f64>>,
}

impl MixtureMesh {
    pub fn new(k: usize, subdivisions: usize) -> MixtureMesh {
        let s = subdivisions.max(1);
        let mut weights: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let mut w = vec![0.0; k];
                w[i] = 1.0;
                w
            })
            .collect();
        if k > 1 {
            let mut counts = vec![0usize; k];
            compositions(s, 0, &mut counts, &mut |c| {
                if c.iter().any(|&x| x == s) {
                    return; // vertices already present
                }
                weights.push(c.iter().map(|&x| x as f64 / s as f64).collect());
            });
        }
        MixtureMesh { k, weights }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }
}

fn compositions(rest: usize, idx: usize, counts: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if idx == counts.len() - 1 {
        counts[idx] = rest;
        f(counts);
        return;
    }
    for c in 0..=rest {
        counts[idx] = c;
        compositions(rest - c, idx + 1, counts, f);
    }
}

/// Extreme samples `(f, g)(t, x, m, u_k)` for every control.
pub fn extreme_velocities(
    model: &ModelSpec,
    t: f64,
    x: &TorusPoint,
    st: &MeasureStats,
) -> Vec<Velocity> {
    (0..model.num_controls())
        .map(|u| Velocity {
            a: model.drift(t, x, st, u),
            b: model.reward_rate(t, x, st, u),
        })
        .collect()
}

/// Mixture of extreme velocities with simplex weights.
pub fn mixture_velocity(extremes: &[Velocity], lambda: &[f64]) -> Velocity {
    let d = extremes[0].a.len();
    let mut a = vec![0.0; d];
    let mut b = 0.0;
    for (v, &l) in extremes.iter().zip(lambda) {
        for (acc, c) in a.iter_mut().zip(&v.a) {
            *acc += l * c;
        }
        b += l * v.b;
    }
    Velocity { a, b }
}

/// Sampled vectogram: extreme velocities plus convex mixtures on the mesh.
/// Every returned point lies in the convex hull of the extremes.
pub fn vectogram(
    model: &ModelSpec,
    t: f64,
    x: &TorusPoint,
    st: &MeasureStats,
    mesh: &MixtureMesh,
) -> Vec<Velocity> {
    let extremes = extreme_velocities(model, t, x, st);
    debug_assert_eq!(extremes.len(), mesh.k());
    mesh.weights()
        .iter()
        .map(|l| mixture_velocity(&extremes, l))
        .collect()
}

/// Exact Euclidean distance from `v` to the convex hull of the sampled
/// extremes of `F(t, x, m)`.
pub fn dist_to_vectogram(
    model: &ModelSpec,
    v: &Velocity,
    t: f64,
    x: &TorusPoint,
    st: &MeasureStats,
) -> f64 {
    let pts: Vec<Vec<f64>> = extreme_velocities(model, t, x, st)
        .iter()
        .map(|e| e.as_vec())
        .collect();
    hull_distance(&pts, &v.as_vec())
}

/// Distance from `v` to `co{points}` by enumerating faces: the nearest point
/// lies in the relative interior of the affine hull of some affinely
/// independent subset of at most `dim + 1` points.
pub(crate) fn hull_distance(points: &[Vec<f64>], v: &[f64]) -> f64 {
    let dim = v.len();
    let k = points.len();
    let max_size = (dim + 1).min(k);
    let mut best = f64::INFINITY;
    let mut subset = Vec::with_capacity(max_size);
    for mask in 1u32..(1 << k) {
        let size = mask.count_ones() as usize;
        if size > max_size {
            continue;
        }
        subset.clear();
        for i in 0..k {
            if mask & (1 << i) != 0 {
                subset.push(i);
            }
        }
        if let Some(d) = project_onto_face(points, &subset, v) {
            best = best.min(d);
        }
    }
    best
}

/// Projection of `v` onto the affine hull of the subset; `None` when the
/// projection leaves the convex face or the subset is affinely dependent.
fn project_onto_face(points: &[Vec<f64>], subset: &[usize], v: &[f64]) -> Option<f64> {
    let s = subset.len();
    let p0 = &points[subset[0]];
    if s == 1 {
        let d2: f64 = p0.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        return Some(d2.sqrt());
    }
    let dim = v.len();
    let cols = s - 1;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for &i in &subset[1..] {
        basis.push(
            points[i]
                .iter()
                .zip(p0)
                .map(|(a, b)| a - b)
                .collect::<Vec<f64>>(),
        );
    }
    let rhs_vec: Vec<f64> = v.iter().zip(p0).map(|(a, b)| a - b).collect();
    let mut g = vec![0.0; cols * cols];
    let mut r = vec![0.0; cols];
    for i in 0..cols {
        for j in 0..cols {
            g[i * cols + j] = dot(&basis[i], &basis[j]);
        }
        r[i] = dot(&basis[i], &rhs_vec);
    }
    let mu = solve_dense(&mut g, &mut r, cols)?;
    if mu.iter().any(|&m| m < -1e-12) || mu.iter().sum::<f64>() > 1.0 + 1e-12 {
        return None;
    }
    let mut proj = p0.clone();
    for (b, &m) in basis.iter().zip(&mu) {
        for a in 0..dim {
            proj[a] += m * b[a];
        }
    }
    let d2: f64 = proj.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    Some(d2.sqrt())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting; `None` on (near) singularity.
fn solve_dense(g: &mut [f64], r: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let scale = g.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(1e-300);
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if g[row * n + col].abs() > g[piv * n + col].abs() {
                piv = row;
            }
        }
        if g[piv * n + col].abs() < 1e-12 * scale {
            return None;
        }
        if piv != col {
            for k in 0..n {
                g.swap(col * n + k, piv * n + k);
            }
            r.swap(col, piv);
        }
        let d = g[col * n + col];
        for row in col + 1..n {
            let fac = g[row * n + col] / d;
            if fac == 0.0 {
                continue;
            }
            for k in col..n {
                g[row * n + k] -= fac * g[col * n + k];
            }
            r[row] -= fac * r[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = r[col];
        for k in col + 1..n {
            acc -= g[col * n + k] * x[k];
        }
        x[col] = acc / g[col * n + col];
    }
    Some(x)
}

// ---------------------------------------------------------------------------
// Relaxed controls and trajectories
// ---------------------------------------------------------------------------

/// Measure-valued control: one probability vector over `U` per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedControl {
    weights: Vec<Vec<f64>>,
}

impl RelaxedControl {
    pub fn new(weights: Vec<Vec<f64>>) -> Result<RelaxedControl> {
        for row in &weights {
            if row.iter().any(|&w| w < 0.0) {
                return Err(Error::invalid("control weights must be nonnegative"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("control weights must sum to 1 per step"));
            }
        }
        Ok(RelaxedControl { weights })
    }

    /// Dirac at one control for every step.
    pub fn pure(k: usize, control: usize, steps: usize) -> RelaxedControl {
        let mut row = vec![0.0; k];
        row[control] = 1.0;
        RelaxedControl {
            weights: vec![row; steps],
        }
    }

    /// Uniform mixture over `U` for every step.
    pub fn uniform(k: usize, steps: usize) -> RelaxedControl {
        RelaxedControl {
            weights: vec![vec![1.0 / k as f64; k]; steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.weights.len()
    }

    pub fn row(&self, step: usize) -> &[f64] {
        &self.weights[step]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> RelaxedControl {
        RelaxedControl {
            weights: self.weights[range].to_vec(),
        }
    }
}

/// Uniform grid of `steps + 1` times on `[s, r]`.
pub fn time_grid(s: f64, r: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|k| s + (r - s) * k as f64 / steps as f64)
        .collect()
}

fn integrate_atom(
    model: &ModelSpec,
    times: &[f64],
    start: &ExtendedPoint,
    stats: &StatFlow,
    xi: &RelaxedControl,
) -> Vec<ExtendedPoint> {
    let mut states = Vec::with_capacity(times.len());
    let mut x = start.x.clone();
    let mut z = start.z;
    states.push(ExtendedPoint { x: x.clone(), z });
    for k in 0..times.len() - 1 {
        let t = times[k];
        let dt = times[k + 1] - t;
        let st = stats.at(t);
        let extremes = extreme_velocities(model, t, &x, st);
        let v = mixture_velocity(&extremes, xi.row(k));
        x = x.shifted(&v.a.iter().map(|c| c * dt).collect::<Vec<_>>());
        z += v.b * dt;
        states.push(ExtendedPoint { x: x.clone(), z });
    }
    states
}

/// Explicit-Euler trajectory of the relaxed dynamics from `y` with `z(s)=0`.
pub fn relaxed_trajectory(
    model: &ModelSpec,
    s: f64,
    r: f64,
    y: &TorusPoint,
    m_flow: &MeasureFlow,
    xi: &RelaxedControl,
    steps: usize,
) -> Result<(Vec<f64>, Vec<ExtendedPoint>)> {
    if !m_flow.covers(s, r) {
        return Err(Error::invalid("measure flow does not cover the horizon"));
    }
    if xi.steps() < steps {
        return Err(Error::invalid("relaxed control has too few steps"));
    }
    let times = time_grid(s, r, steps);
    let stats = StatFlow::from_flow(m_flow);
    let start = ExtendedPoint {
        x: y.clone(),
        z: 0.0,
    };
    let states = integrate_atom(model, &times, &start, &stats, xi);
    Ok((times, states))
}

// ---------------------------------------------------------------------------
// MFDI solver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MfdiSolution {
    /// Fixed-point flow `nu(t)` (the slice flow of `chi`).
    pub flow: ExtendedFlow,
    pub chi: PathMeasure,
    /// Final Picard residual `sup_t W1(m_new(t), m_old(t))`.
    pub residual: f64,
    pub iterations: usize,
}

/// Picard iteration for the mean-field differential inclusion: integrate
/// every atom of `nu0` with its relaxed control against the current flow
/// guess, recompute the flow from the slices, repeat. When the iteration
/// stalls the horizon is halved and the halves are concatenated.
pub fn mfdi_solve(
    model: &ModelSpec,
    s: f64,
    r: f64,
    nu0: &ExtendedMeasure,
    controls: &[RelaxedControl],
    steps: usize,
    max_iter: usize,
    tol: f64,
) -> Result<MfdiSolution> {
    if controls.len() != nu0.atoms().len() {
        return Err(Error::invalid("one relaxed control per atom required"));
    }
    if controls.iter().any(|c| c.steps() < steps) {
        return Err(Error::invalid("relaxed controls have too few steps"));
    }
    mfdi_rec(model, s, r, nu0, controls, 0, steps, max_iter, tol, 0)
}

#[allow(clippy::too_many_arguments)]
fn mfdi_rec(
    model: &ModelSpec,
    s: f64,
    r: f64,
    nu0: &ExtendedMeasure,
    controls: &[RelaxedControl],
    control_offset: usize,
    steps: usize,
    max_iter: usize,
    tol: f64,
    depth: usize,
) -> Result<MfdiSolution> {
    let times = time_grid(s, r, steps);
    let atoms: Vec<(ExtendedPoint, f64, usize)> = nu0
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, (p, w))| (p.clone(), *w, i))
        .collect();
    let integrate = |m_flow: &[DiscreteMeasure]| -> Result<PathMeasure> {
        let flow = Flow::new(times.clone(), m_flow.to_vec())?;
        let stats = StatFlow::from_flow(&flow);
        let paths: Vec<(Vec<ExtendedPoint>, f64)> = exec::par_map(&atoms, |(p, w, i)| {
            let xi = controls[*i].slice(control_offset..control_offset + steps);
            (integrate_atom(model, &times, p, &stats, &xi), *w)
        });
        PathMeasure::new(times.clone(), paths)
    };
    let slices_of = |chi: &PathMeasure| -> Vec<DiscreteMeasure> {
        (0..times.len()).map(|k| project(&chi.slice(k))).collect()
    };

    // first sweep against the constant-in-time initial guess
    let mut m_guess = slices_of(&integrate(&vec![project(nu0); times.len()])?);
    let mut last_residual = f64::INFINITY;

    for it in 1..=max_iter {
        let chi = integrate(&m_guess)?;
        let new_flow = slices_of(&chi);
        let residual = (0..times.len())
            .map(|k| w1_distance(&new_flow[k], &m_guess[k]).unwrap_or(f64::INFINITY))
            .fold(0.0f64, f64::max);
        m_guess = new_flow;
        last_residual = residual;
        if residual < tol {
            return Ok(MfdiSolution {
                flow: chi.flow(),
                chi,
                residual,
                iterations: it,
            });
        }
    }

    // stalled: halve the horizon and glue the sub-solutions
    if depth < 6 && steps >= 2 {
        let steps1 = steps / 2;
        let mid = times[steps1];
        let left = mfdi_rec(
            model,
            s,
            mid,
            nu0,
            controls,
            control_offset,
            steps1,
            max_iter,
            tol,
            depth + 1,
        )?;
        let nu_mid = left.chi.evaluate(mid)?;
        let right = mfdi_rec(
            model,
            mid,
            r,
            &nu_mid,
            controls,
            control_offset + steps1,
            steps - steps1,
            max_iter,
            tol,
            depth + 1,
        )?;
        let chi = concat_path_measures(&left.chi, &right.chi)?;
        return Ok(MfdiSolution {
            flow: chi.flow(),
            residual: left.residual.max(right.residual),
            iterations: left.iterations + right.iterations,
            chi,
        });
    }

    Err(Error::Convergence {
        iterations: max_iter,
        residual: last_residual,
    })
}

// ---------------------------------------------------------------------------
// Feasibility checking
// ---------------------------------------------------------------------------

/// Max over steps of the distance from the difference quotient to the
/// vectogram along one trajectory.
pub fn path_residual(
    model: &ModelSpec,
    times: &[f64],
    states: &[ExtendedPoint],
    stats: &StatFlow,
) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..times.len() - 1 {
        let dt = times[k + 1] - times[k];
        let dx = states[k].x.displacement_to(&states[k + 1].x);
        let v = Velocity {
            a: dx.iter().map(|c| c / dt).collect(),
            b: (states[k + 1].z - states[k].z) / dt,
        };
        let d = dist_to_vectogram(model, &v, times[k], &states[k].x, stats.at(times[k]));
        worst = worst.max(d);
    }
    worst
}

/// Max feasibility residual of a path measure against a measure flow:
/// `max over paths and steps of dist((dx, dz)/dt, F(t, x(t), m(t)))`.
pub fn verify_sol(model: &ModelSpec, chi: &PathMeasure, m_flow: &MeasureFlow) -> f64 {
    let stats = StatFlow::from_flow(m_flow);
    let residuals = exec::par_map(chi.paths(), |(states, _)| {
        path_residual(model, chi.times(), states, &stats)
    });
    residuals.into_iter().fold(0.0, f64::max)
}

/// Concatenate two feasible path measures and report the feasibility
/// residual of the glued object against its own slice flow.
pub fn concat_flows(
    model: &ModelSpec,
    a: &PathMeasure,
    b: &PathMeasure,
) -> Result<(PathMeasure, f64)> {
    let glued = concat_path_measures(a, b)?;
    let m_flow = glued.flow().projected();
    let residual = verify_sol(model, &glued, &m_flow);
    Ok((glued, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn pt(x: f64) -> TorusPoint {
        TorusPoint::wrap1(x)
    }

    fn stats_of(xs: &[f64]) -> MeasureStats {
        MeasureStats::compute(
            &DiscreteMeasure::uniform(xs.iter().map(|&x| pt(x)).collect()).unwrap(),
        )
    }

    #[test]
    fn presets_validate_their_constants() {
        let mut rng = StdRng::seed_from_u64(1);
        for name in [
            "zero",
            "drift",
            "decoupled-1d",
            "crowd-aversion-1d",
            "congestion-1d",
            "mean-reversion-1d",
        ] {
            let model = ModelSpec::preset(name, &ModelParams::default()).unwrap();
            model.validate(&mut rng, 200).unwrap();
            assert!(model.radius() >= model.speed_bound());
        }
        let model = ModelSpec::preset("decoupled-2d", &ModelParams::default()).unwrap();
        model.validate(&mut rng, 100).unwrap();
        assert!(ModelSpec::preset("bogus", &ModelParams::default()).is_err());
    }

    #[test]
    fn vectogram_single_control_is_one_point() {
        let model = ModelSpec::preset("zero", &ModelParams::default()).unwrap();
        let mesh = MixtureMesh::new(model.num_controls(), 4);
        let vg = vectogram(&model, 0.0, &pt(0.3), &stats_of(&[0.5]), &mesh);
        assert_eq!(vg.len(), 1);
        assert_abs_diff_eq!(vg[0].a[0], 0.0);
        assert_abs_diff_eq!(vg[0].b, 0.0);
    }

    #[test]
    fn vectogram_segment_mixtures() {
        // f = u with U = {-1, 1}, mesh step 1/2 -> {(-1,0), (1,0), (0,0)}
        let params = ModelParams {
            controls: 2,
            ..Default::default()
        };
        let model = ModelSpec::preset("decoupled-1d", &params).unwrap();
        let mesh = MixtureMesh::new(2, 2);
        let vg = vectogram(&model, 0.0, &pt(0.3), &stats_of(&[0.5]), &mesh);
        let mut xs: Vec<f64> = vg.iter().map(|v| v.a[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(xs.len(), 3);
        assert_abs_diff_eq!(xs[0], -1.0);
        assert_abs_diff_eq!(xs[1], 0.0);
        assert_abs_diff_eq!(xs[2], 1.0);
        assert!(vg.iter().all(|v| v.b == 0.0));
    }

    #[test]
    fn mesh_points_lie_in_hull() {
        let params = ModelParams {
            controls: 3,
            coupling: 0.4,
            control_cost: 0.2,
            ..Default::default()
        };
        let model = ModelSpec::preset("crowd-aversion-1d", &params).unwrap();
        let st = stats_of(&[0.2, 0.6, 0.9]);
        let mesh = MixtureMesh::new(3, 5);
        for v in vectogram(&model, 0.1, &pt(0.7), &st, &mesh) {
            let d = dist_to_vectogram(&model, &v, 0.1, &pt(0.7), &st);
            assert!(d <= 1e-9, "mesh point escaped the hull: {d}");
        }
    }

    #[test]
    fn dist_to_vectogram_point_case() {
        let params = ModelParams {
            drift: 0.25,
            reward: -0.5,
            ..Default::default()
        };
        let model = ModelSpec::preset("drift", &params).unwrap();
        let st = stats_of(&[0.5]);
        let extreme = extreme_velocities(&model, 0.0, &pt(0.1), &st).remove(0);
        assert_abs_diff_eq!(
            dist_to_vectogram(&model, &extreme, 0.0, &pt(0.1), &st),
            0.0,
            epsilon = 1e-15
        );
        // offset by (0.3, 0.4): distance 0.5
        let off = Velocity {
            a: vec![extreme.a[0] + 0.3],
            b: extreme.b + 0.4,
        };
        assert_abs_diff_eq!(
            dist_to_vectogram(&model, &off, 0.0, &pt(0.1), &st),
            0.5,
            epsilon = 1e-12
        );
    }

    fn mesh_best_distance(pts: &[Vec<f64>], v: &[f64], subdiv: usize) -> f64 {
        let mesh = MixtureMesh::new(pts.len(), subdiv);
        let mut best = f64::INFINITY;
        for l in mesh.weights() {
            let mut d2 = 0.0;
            for a in 0..v.len() {
                let p: f64 = pts.iter().zip(l).map(|(pi, li)| li * pi[a]).sum();
                d2 += (p - v[a]) * (p - v[a]);
            }
            best = best.min(d2.sqrt());
        }
        best
    }

    #[test]
    fn hull_distance_matches_segment_formula() {
        // k = 2 in the plane: closed-form distance to a segment
        let mut rng = StdRng::seed_from_u64(5);
        use rand::Rng;
        for _ in 0..25 {
            let p0 = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let p1 = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let v = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let exact = hull_distance(&[p0.clone(), p1.clone()], &v);
            let dx = [p1[0] - p0[0], p1[1] - p0[1]];
            let len2 = dx[0] * dx[0] + dx[1] * dx[1];
            let t = if len2 == 0.0 {
                0.0
            } else {
                (((v[0] - p0[0]) * dx[0] + (v[1] - p0[1]) * dx[1]) / len2).clamp(0.0, 1.0)
            };
            let q = [p0[0] + t * dx[0], p0[1] + t * dx[1]];
            let oracle = ((v[0] - q[0]).powi(2) + (v[1] - q[1]).powi(2)).sqrt();
            assert_abs_diff_eq!(exact, oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn hull_distance_matches_dense_mixture_enumeration() {
        // enumeration error for a point at distance d is ~ (diam/subdiv)^2 / (2 d)
        let mut rng = StdRng::seed_from_u64(6);
        use rand::Rng;
        for _ in 0..3 {
            let pts: Vec<Vec<f64>> = (0..3)
                .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let v = vec![rng.random_range(2.5..3.5), rng.random_range(2.5..3.5)];
            let exact = hull_distance(&pts, &v);
            assert!(exact >= 1.0, "test point must be far outside the hull");
            let best = mesh_best_distance(&pts, &v, 3000);
            assert!(exact <= best + 1e-12);
            assert!((exact - best).abs() <= 1e-6, "exact {exact} vs mesh {best}");
        }
        // interior and coarse sandwich checks for k = 4
        for _ in 0..5 {
            let pts: Vec<Vec<f64>> = (0..4)
                .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let v = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let exact = hull_distance(&pts, &v);
            let best = mesh_best_distance(&pts, &v, 40);
            assert!(exact <= best + 1e-12);
            assert!(best - exact <= 3.0 / 40.0, "sandwich violated: {exact} vs {best}");
        }
    }

    #[test]
    fn trajectory_zero_dynamics_is_constant() {
        let model = ModelSpec::preset("zero", &ModelParams::default()).unwrap();
        let flow = Flow::constant(time_grid(0.0, 1.0, 8), DiscreteMeasure::dirac(pt(0.5)))
            .unwrap();
        let xi = RelaxedControl::pure(1, 0, 8);
        let (_, states) = relaxed_trajectory(&model, 0.0, 1.0, &pt(0.25), &flow, &xi, 8).unwrap();
        for s in &states {
            assert_abs_diff_eq!(s.x.coords()[0], 0.25);
            assert_abs_diff_eq!(s.z, 0.0);
        }
    }

    #[test]
    fn trajectory_pure_reward_accumulates_time() {
        let params = ModelParams {
            reward: 1.0,
            ..Default::default()
        };
        let model = ModelSpec::preset("drift", &params).unwrap();
        let flow = Flow::constant(time_grid(0.5, 1.5, 10), DiscreteMeasure::dirac(pt(0.5)))
            .unwrap();
        let xi = RelaxedControl::pure(1, 0, 10);
        let (times, states) =
            relaxed_trajectory(&model, 0.5, 1.5, &pt(0.1), &flow, &xi, 10).unwrap();
        for (t, s) in times.iter().zip(&states) {
            assert_abs_diff_eq!(s.x.coords()[0], 0.1, epsilon = 1e-15);
            assert_abs_diff_eq!(s.z, t - 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn trajectory_balanced_mixture_stays_put() {
        let params = ModelParams {
            controls: 2,
            ..Default::default()
        };
        let model = ModelSpec::preset("decoupled-1d", &params).unwrap();
        let flow = Flow::constant(time_grid(0.0, 1.0, 16), DiscreteMeasure::dirac(pt(0.5)))
            .unwrap();
        let xi = RelaxedControl::uniform(2, 16);
        let (_, states) = relaxed_trajectory(&model, 0.0, 1.0, &pt(0.4), &flow, &xi, 16).unwrap();
        assert_abs_diff_eq!(states.last().unwrap().x.coords()[0], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn trajectory_requires_flow_coverage() {
        let model = ModelSpec::preset("zero", &ModelParams::default()).unwrap();
        let flow = Flow::constant(time_grid(0.0, 0.5, 4), DiscreteMeasure::dirac(pt(0.5)))
            .unwrap();
        let xi = RelaxedControl::pure(1, 0, 8);
        assert!(relaxed_trajectory(&model, 0.0, 1.0, &pt(0.1), &flow, &xi, 8).is_err());
    }

    #[test]
    fn mfdi_decoupled_converges_in_one_iteration() {
        let params = ModelParams {
            controls: 2,
            ..Default::default()
        };
        let model = ModelSpec::preset("decoupled-1d", &params).unwrap();
        let m0 = DiscreteMeasure::uniform(vec![pt(0.2), pt(0.7)]).unwrap();
        let nu0 = crate::measures::lift(&m0);
        let controls = vec![RelaxedControl::pure(2, 0, 8), RelaxedControl::pure(2, 1, 8)];
        let sol = mfdi_solve(&model, 0.0, 1.0, &nu0, &controls, 8, 10, 1e-9).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.residual < 1e-12);
        // speed bound holds exactly for Euler with bounded fields
        assert!(sol.chi.max_speed() <= model.speed_bound() + 1e-12);
    }

    #[test]
    fn mfdi_dirac_reduces_to_ode() {
        let params = ModelParams {
            rate: 1.0,
            ..Default::default()
        };
        let model = ModelSpec::preset("mean-reversion-1d", &params).unwrap();
        let nu0 = ExtendedMeasure::dirac(ExtendedPoint { x: pt(0.4), z: 0.0 });
        let controls = vec![RelaxedControl::pure(1, 0, 16)];
        let sol = mfdi_solve(&model, 0.0, 1.0, &nu0, &controls, 16, 20, 1e-9).unwrap();
        assert_eq!(sol.chi.paths().len(), 1);
        // a dirac's mean is itself: the trajectory is constant
        let end = &sol.chi.paths()[0].0.last().unwrap();
        assert_abs_diff_eq!(end.x.coords()[0], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn mfdi_mean_reversion_matches_exact_ode() {
        // atoms contract toward the (constant) mean; the exact solution is
        // x_i(t) = mu + (x_i - mu) e^{-rate t} for interior supports
        let params = ModelParams {
            rate: 1.0,
            ..Default::default()
        };
        let model = ModelSpec::preset("mean-reversion-1d", &params).unwrap();
        let xs = [0.35, 0.45, 0.55, 0.65];
        let m0 = DiscreteMeasure::uniform(xs.iter().map(|&x| pt(x)).collect()).unwrap();
        let nu0 = crate::measures::lift(&m0);
        let steps = 256;
        let controls = vec![RelaxedControl::pure(1, 0, steps); 4];
        let sol = mfdi_solve(&model, 0.0, 1.0, &nu0, &controls, steps, 50, 1e-10).unwrap();
        let mu = 0.5;
        for (i, (states, _)) in sol.chi.paths().iter().enumerate() {
            let exact = mu + (xs[i] - mu) * (-1.0f64).exp();
            assert_abs_diff_eq!(states.last().unwrap().x.coords()[0], exact, epsilon = 2e-3);
        }
        assert!(sol.residual < 1e-10);
    }

    #[test]
    fn verify_sol_accepts_euler_paths_and_flags_jumps() {
        let params = ModelParams {
            controls: 3,
            coupling: 0.3,
            ..Default::default()
        };
        let model = ModelSpec::preset("crowd-aversion-1d", &params).unwrap();
        let m0 = DiscreteMeasure::uniform(vec![pt(0.1), pt(0.5), pt(0.8)]).unwrap();
        let nu0 = crate::measures::lift(&m0);
        let controls = vec![
            RelaxedControl::pure(3, 0, 10),
            RelaxedControl::uniform(3, 10),
            RelaxedControl::pure(3, 2, 10),
        ];
        let sol = mfdi_solve(&model, 0.0, 1.0, &nu0, &controls, 10, 50, 1e-8).unwrap();
        let m_flow = sol.chi.flow().projected();
        let res = verify_sol(&model, &sol.chi, &m_flow);
        let dt = 0.1;
        let bound = model.alpha(dt) + model.lipschitz() * model.speed_bound() * dt + 1e-9;
        assert!(res <= bound, "residual {res} exceeds one-step bound {bound}");

        // a jump of size 1 in one step of dt = 0.1 against R = 1 -> residual >= 9
        let decoupled = ModelSpec::preset(
            "decoupled-1d",
            &ModelParams {
                controls: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let times = time_grid(0.0, 0.2, 2);
        let jump = PathMeasure::new(
            times.clone(),
            vec![(
                vec![
                    ExtendedPoint { x: pt(0.0), z: 0.0 },
                    ExtendedPoint { x: pt(0.0), z: 1.0 },
                    ExtendedPoint { x: pt(0.0), z: 1.0 },
                ],
                1.0,
            )],
        )
        .unwrap();
        let flow = Flow::constant(times, DiscreteMeasure::dirac(pt(0.0))).unwrap();
        let res = verify_sol(&decoupled, &jump, &flow);
        assert!(res >= 9.0 - 1e-9);
    }

    #[test]
    fn concat_flows_keeps_residual() {
        let params = ModelParams {
            controls: 2,
            ..Default::default()
        };
        let model = ModelSpec::preset("decoupled-1d", &params).unwrap();
        let m0 = DiscreteMeasure::uniform(vec![pt(0.3), pt(0.6)]).unwrap();
        let nu0 = crate::measures::lift(&m0);
        let controls = vec![RelaxedControl::pure(2, 0, 8), RelaxedControl::pure(2, 1, 8)];
        let sol = mfdi_solve(&model, 0.0, 1.0, &nu0, &controls, 8, 10, 1e-9).unwrap();
        let full_flow = sol.chi.flow().projected();
        let full_res = verify_sol(&model, &sol.chi, &full_flow);
        let left = sol.chi.restrict(0, 4).unwrap();
        let right = sol.chi.restrict(4, 8).unwrap();
        let (glued, res) = concat_flows(&model, &left, &right).unwrap();
        assert_eq!(glued.times().len(), sol.chi.times().len());
        assert_abs_diff_eq!(res, full_res, epsilon = 1e-9);
    }

    #[test]
    fn mixture_mesh_has_vertices_first() {
        let mesh = MixtureMesh::new(3, 5);
        for i in 0..3 {
            assert_abs_diff_eq!(mesh.weights()[i][i], 1.0);
        }
        // C(5+2, 2) compositions in total; every row sums to 1
        assert_eq!(mesh.len(), 21);
        for row in mesh.weights() {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }
}
