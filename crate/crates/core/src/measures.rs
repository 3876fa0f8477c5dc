//! Discrete probability measures and the measure calculus of the game.
//!
//! Measures live on `T^d` ([`DiscreteMeasure`]), on the extended phase space
//! `T^d x R` ([`ExtendedMeasure`], the `z` coordinate accumulates running
//! reward), and on path space ([`PathMeasure`], weighted families of
//! time-sampled motions). Couplings between discrete measures are
//! [`Coupling`]s. The operations mirror the calculus used throughout:
//! pushforward `h#m`, lifting `m -> m^` (z = 0), projection `p#`, the action
//! pairing `[phi, nu]`, slice evaluation `e_t#chi`, plan composition
//! `pi12 * pi23`, concatenation of path measures, and re-anchoring of the
//! initial extended slice of a flow.
//!
//! Atoms are matched across measures by exact index bucketing after rounding
//! coordinates to `1e-9` (wrap-aware on the torus); all conditional
//! bookkeeping (disintegration) happens per bucket.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::torus::TorusPoint;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Total-mass tolerance for measure constructors.
pub const MASS_TOL: f64 = 1e-12;
/// Atom-matching tolerance (bucket resolution) for disintegration-style ops.
pub const MATCH_TOL: f64 = 1e-9;

const KEY_SCALE: f64 = 1e9;
const KEY_WRAP: i64 = 1_000_000_000;

/// Bucket key: coordinates rounded to the matching resolution.
pub trait AtomKey {
    fn atom_key(&self) -> Vec<i64>;
}

fn torus_key(c: f64) -> i64 {
    ((c * KEY_SCALE).round() as i64).rem_euclid(KEY_WRAP)
}

fn real_key(c: f64) -> i64 {
    (c * KEY_SCALE).round() as i64
}

impl AtomKey for TorusPoint {
    fn atom_key(&self) -> Vec<i64> {
        self.coords().iter().map(|&c| torus_key(c)).collect()
    }
}

/// Point of the extended phase space `T^d x R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPoint {
    pub x: TorusPoint,
    pub z: f64,
}

impl ExtendedPoint {
    pub fn new(x: TorusPoint, z: f64) -> Result<ExtendedPoint> {
        if !z.is_finite() {
            return Err(Error::invalid("non-finite reward coordinate"));
        }
        Ok(ExtendedPoint { x, z })
    }

    /// Extended metric `||x - x'|| + |z - z'|`.
    pub fn dist(&self, other: &ExtendedPoint) -> f64 {
        self.x.dist(&other.x) + (self.z - other.z).abs()
    }
}

impl AtomKey for ExtendedPoint {
    fn atom_key(&self) -> Vec<i64> {
        let mut k = self.x.atom_key();
        k.push(real_key(self.z));
        k
    }
}

fn check_weights(weights: impl Iterator<Item = f64> + Clone) -> Result<()> {
    check_weights_ctx(weights, "measure")
}

fn check_weights_ctx(weights: impl Iterator<Item = f64> + Clone, ctx: &str) -> Result<()> {
    let mut total = 0.0;
    let mut any = false;
    for w in weights {
        any = true;
        if !w.is_finite() || w < 0.0 {
            return Err(Error::invalid(format!("invalid atom weight {w}")));
        }
        total += w;
    }
    if !any {
        return Err(Error::invalid("measure needs at least one atom"));
    }
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::invalid(format!(
            "{ctx} weights sum to {total}, expected 1 within {MASS_TOL:e}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Measures on T^d
// ---------------------------------------------------------------------------

/// Weighted atoms on `T^d`; houses the distribution of players `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<(TorusPoint, f64)>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<(TorusPoint, f64)>) -> Result<DiscreteMeasure> {
        check_weights_ctx(atoms.iter().map(|(_, w)| *w), "discrete measure")?;
        let d = atoms[0].0.dim();
        if atoms.iter().any(|(p, _)| p.dim() != d) {
            return Err(Error::invalid("mixed atom dimensions"));
        }
        Ok(DiscreteMeasure { atoms })
    }

    pub fn dirac(p: TorusPoint) -> DiscreteMeasure {
        DiscreteMeasure {
            atoms: vec![(p, 1.0)],
        }
    }

    pub fn uniform(points: Vec<TorusPoint>) -> Result<DiscreteMeasure> {
        if points.is_empty() {
            return Err(Error::invalid("measure needs at least one atom"));
        }
        let w = 1.0 / points.len() as f64;
        DiscreteMeasure::new(points.into_iter().map(|p| (p, w)).collect())
    }

    pub fn atoms(&self) -> &[(TorusPoint, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].0.dim()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w).sum()
    }

    /// Image measure under a point map; atoms are kept distinct.
    pub fn pushforward(&self, h: impl Fn(&TorusPoint) -> TorusPoint) -> DiscreteMeasure {
        DiscreteMeasure {
            atoms: self.atoms.iter().map(|(p, w)| (h(p), *w)).collect(),
        }
    }

    /// Merge atoms that share a bucket, summing weights.
    pub fn merged(&self) -> DiscreteMeasure {
        let mut buckets: BTreeMap<Vec<i64>, (TorusPoint, f64)> = BTreeMap::new();
        for (p, w) in &self.atoms {
            buckets
                .entry(p.atom_key())
                .and_modify(|e| e.1 += w)
                .or_insert_with(|| (p.clone(), *w));
        }
        DiscreteMeasure {
            atoms: buckets.into_values().collect(),
        }
    }

    /// Snap atoms to the uniform grid `k / resolution` and merge. Used to
    /// keep long running averages of flows at a bounded atom count; the
    /// W1 perturbation is at most half a grid cell per axis.
    pub fn quantized(&self, resolution: usize) -> DiscreteMeasure {
        let r = resolution as f64;
        let mut buckets: BTreeMap<Vec<i64>, (TorusPoint, f64)> = BTreeMap::new();
        for (p, w) in &self.atoms {
            let snapped: Vec<f64> = p
                .coords()
                .iter()
                .map(|&c| ((c * r).round() % r) / r)
                .collect();
            let q = TorusPoint::wrap(&snapped).expect("snapped coordinates are finite");
            buckets
                .entry(q.atom_key())
                .and_modify(|e| e.1 += w)
                .or_insert((q, *w));
        }
        DiscreteMeasure {
            atoms: {
                let mut atoms: Vec<(TorusPoint, f64)> = buckets.into_values().collect();
                renormalize(&mut atoms);
                atoms
            },
        }
    }

    /// Convex mixture of measures; weights must sum to 1.
    pub fn mix(parts: &[(f64, &DiscreteMeasure)]) -> Result<DiscreteMeasure> {
        let mut atoms = Vec::new();
        for (lambda, m) in parts {
            if *lambda < 0.0 {
                return Err(Error::invalid("mixture weights must be nonnegative"));
            }
            for (p, w) in &m.atoms {
                if lambda * w > 0.0 {
                    atoms.push((p.clone(), lambda * w));
                }
            }
        }
        renormalize(&mut atoms);
        Ok(DiscreteMeasure::new(atoms)?.merged())
    }
}

/// Lifting `m -> m^`: every atom gets `z = 0`.
pub fn lift(m: &DiscreteMeasure) -> ExtendedMeasure {
    ExtendedMeasure {
        atoms: m
            .atoms
            .iter()
            .map(|(p, w)| (ExtendedPoint { x: p.clone(), z: 0.0 }, *w))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Measures on the extended space
// ---------------------------------------------------------------------------

/// Weighted atoms on `T^d x R`; houses `nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedMeasure {
    atoms: Vec<(ExtendedPoint, f64)>,
}

impl ExtendedMeasure {
    pub fn new(atoms: Vec<(ExtendedPoint, f64)>) -> Result<ExtendedMeasure> {
        check_weights_ctx(atoms.iter().map(|(_, w)| *w), "extended measure")?;
        let d = atoms[0].0.x.dim();
        if atoms.iter().any(|(p, _)| p.x.dim() != d || !p.z.is_finite()) {
            return Err(Error::invalid("mixed dimensions or non-finite reward"));
        }
        Ok(ExtendedMeasure { atoms })
    }

    pub fn dirac(p: ExtendedPoint) -> ExtendedMeasure {
        ExtendedMeasure {
            atoms: vec![(p, 1.0)],
        }
    }

    pub fn atoms(&self) -> &[(ExtendedPoint, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].0.x.dim()
    }

    pub fn pushforward(&self, h: impl Fn(&ExtendedPoint) -> ExtendedPoint) -> ExtendedMeasure {
        ExtendedMeasure {
            atoms: self.atoms.iter().map(|(p, w)| (h(p), *w)).collect(),
        }
    }

    /// Mean of the reward coordinate.
    pub fn mean_z(&self) -> f64 {
        self.atoms.iter().map(|(p, w)| p.z * w).sum()
    }
}

/// Projection `p#nu`: drop the reward coordinate.
pub fn project(nu: &ExtendedMeasure) -> DiscreteMeasure {
    DiscreteMeasure {
        atoms: nu.atoms.iter().map(|(p, w)| (p.x.clone(), *w)).collect(),
    }
}

/// Action pairing `[phi, nu] = integral of phi(x) + z`.
pub fn action(phi: &GridFunction, nu: &ExtendedMeasure) -> f64 {
    nu.atoms
        .iter()
        .map(|(p, w)| w * (phi.eval(&p.x) + p.z))
        .sum()
}

// ---------------------------------------------------------------------------
// Path measures
// ---------------------------------------------------------------------------

/// Weighted family of time-sampled motions in `T^d x R`; houses `chi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMeasure {
    times: Vec<f64>,
    paths: Vec<(Vec<ExtendedPoint>, f64)>,
}

impl PathMeasure {
    pub fn new(times: Vec<f64>, paths: Vec<(Vec<ExtendedPoint>, f64)>) -> Result<PathMeasure> {
        if times.len() < 2 {
            return Err(Error::invalid("path measure needs at least two sample times"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("time grid must be strictly increasing"));
        }
        check_weights_ctx(paths.iter().map(|(_, w)| *w), "path measure")?;
        if paths.iter().any(|(p, _)| p.len() != times.len()) {
            return Err(Error::invalid("every trajectory must share the time grid"));
        }
        Ok(PathMeasure { times, paths })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn paths(&self) -> &[(Vec<ExtendedPoint>, f64)] {
        &self.paths
    }

    pub fn dim(&self) -> usize {
        self.paths[0].0[0].x.dim()
    }

    /// Index of the grid time nearest to `t`; `t` must lie inside the grid.
    pub fn snap_index(&self, t: f64) -> Result<usize> {
        snap_index(&self.times, t)
    }

    /// Slice measure at grid index `k`.
    pub fn slice(&self, k: usize) -> ExtendedMeasure {
        ExtendedMeasure {
            atoms: self
                .paths
                .iter()
                .map(|(states, w)| (states[k].clone(), *w))
                .collect(),
        }
    }

    /// Evaluation `e^_t # chi`: slice at the nearest grid time.
    pub fn evaluate(&self, t: f64) -> Result<ExtendedMeasure> {
        Ok(self.slice(self.snap_index(t)?))
    }

    /// Restriction to the grid index range `[i0, i1]`.
    pub fn restrict(&self, i0: usize, i1: usize) -> Result<PathMeasure> {
        if i0 >= i1 || i1 >= self.times.len() {
            return Err(Error::invalid("bad restriction range"));
        }
        PathMeasure::new(
            self.times[i0..=i1].to_vec(),
            self.paths
                .iter()
                .map(|(states, w)| (states[i0..=i1].to_vec(), *w))
                .collect(),
        )
    }

    /// The flow of slice measures on the full grid.
    pub fn flow(&self) -> Flow<ExtendedMeasure> {
        Flow {
            times: self.times.clone(),
            slices: (0..self.times.len()).map(|k| self.slice(k)).collect(),
        }
    }

    /// Max over steps and paths of the per-step speed
    /// `max(||dx||, |dz|) / dt`.
    pub fn max_speed(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (states, _) in &self.paths {
            for k in 0..states.len() - 1 {
                let dt = self.times[k + 1] - self.times[k];
                let dx = states[k].x.displacement_to(&states[k + 1].x);
                let nx = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nz = (states[k + 1].z - states[k].z).abs();
                best = best.max(nx.max(nz) / dt);
            }
        }
        best
    }
}

fn snap_index(times: &[f64], t: f64) -> Result<usize> {
    let lo = times[0];
    let hi = *times.last().unwrap();
    if t < lo - MATCH_TOL || t > hi + MATCH_TOL {
        return Err(Error::OutOfRange { t, lo, hi });
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, &tk) in times.iter().enumerate() {
        let d = (tk - t).abs();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    Ok(best)
}

/// Concatenation of path measures sharing the junction slice: every
/// left path ending at an atom is spliced with every right path starting
/// at it, weighted by the product of the conditional weights.
pub fn concat_path_measures(a: &PathMeasure, b: &PathMeasure) -> Result<PathMeasure> {
    let r_a = *a.times.last().unwrap();
    let r_b = b.times[0];
    if (r_a - r_b).abs() > MATCH_TOL {
        return Err(Error::precondition(format!(
            "junction times differ: {r_a} vs {r_b}"
        )));
    }

    let mut left: BTreeMap<Vec<i64>, (Vec<usize>, f64)> = BTreeMap::new();
    for (i, (states, w)) in a.paths.iter().enumerate() {
        let e = left
            .entry(states.last().unwrap().atom_key())
            .or_insert_with(|| (Vec::new(), 0.0));
        e.0.push(i);
        e.1 += w;
    }
    let mut right: BTreeMap<Vec<i64>, (Vec<usize>, f64)> = BTreeMap::new();
    for (j, (states, w)) in b.paths.iter().enumerate() {
        let e = right
            .entry(states[0].atom_key())
            .or_insert_with(|| (Vec::new(), 0.0));
        e.0.push(j);
        e.1 += w;
    }

    if left.len() != right.len() || left.keys().zip(right.keys()).any(|(k, l)| k != l) {
        return Err(Error::precondition(
            "endpoint measures do not share a common atom set",
        ));
    }
    for (key, (_, ma)) in &left {
        let mb = right[key].1;
        if (ma - mb).abs() > MATCH_TOL {
            return Err(Error::precondition(format!(
                "endpoint masses differ by {:.3e} at a junction atom",
                (ma - mb).abs()
            )));
        }
    }

    let mut times = a.times.clone();
    times.extend_from_slice(&b.times[1..]);
    let mut paths = Vec::new();
    for (key, (ids_a, _ma)) in &left {
        let (ids_b, mb) = &right[key];
        for &i in ids_a {
            for &j in ids_b {
                let (sa, wa) = &a.paths[i];
                let (sb, wb) = &b.paths[j];
                let mut states = sa.clone();
                states.extend_from_slice(&sb[1..]);
                paths.push((states, wa * wb / mb));
            }
        }
    }
    renormalize(&mut paths);
    PathMeasure::new(times, paths)
}

/// Remove floating-point drift from conditional-weight products, which sum
/// to 1 in exact arithmetic.
fn renormalize<T>(weighted: &mut [(T, f64)]) {
    let total: f64 = weighted.iter().map(|(_, w)| w).sum();
    debug_assert!((total - 1.0).abs() < 1e-6, "mass drifted by {}", total - 1.0);
    if total > 0.0 {
        for (_, w) in weighted.iter_mut() {
            *w /= total;
        }
    }
}

/// Re-anchor the initial extended slice of `chi` at `target`: each path's
/// reward coordinate is shifted to start from a `z*` drawn from the
/// target's conditional given the starting position.
pub fn reanchor_flow(chi: &PathMeasure, target: &ExtendedMeasure) -> Result<PathMeasure> {
    let mut by_x: BTreeMap<Vec<i64>, (Vec<usize>, f64)> = BTreeMap::new();
    for (i, (states, w)) in chi.paths.iter().enumerate() {
        let e = by_x
            .entry(states[0].x.atom_key())
            .or_insert_with(|| (Vec::new(), 0.0));
        e.0.push(i);
        e.1 += w;
    }
    let mut tgt: BTreeMap<Vec<i64>, (Vec<usize>, f64)> = BTreeMap::new();
    for (j, (p, w)) in target.atoms.iter().enumerate() {
        let e = tgt
            .entry(p.x.atom_key())
            .or_insert_with(|| (Vec::new(), 0.0));
        e.0.push(j);
        e.1 += w;
    }
    if by_x.len() != tgt.len() || by_x.keys().zip(tgt.keys()).any(|(k, l)| k != l) {
        return Err(Error::precondition(
            "x-marginals do not share a common atom set",
        ));
    }
    for (key, (_, ma)) in &by_x {
        if (ma - tgt[key].1).abs() > MATCH_TOL {
            return Err(Error::precondition(format!(
                "x-marginal masses differ by {:.3e}",
                (ma - tgt[key].1).abs()
            )));
        }
    }

    let mut paths = Vec::new();
    for (key, (ids, _)) in &by_x {
        let (tgt_ids, nx) = &tgt[key];
        for &i in ids {
            let (states, w) = &chi.paths[i];
            let z0 = states[0].z;
            for &j in tgt_ids {
                let (tp, v) = &target.atoms[j];
                let shift = tp.z - z0;
                let new_states = states
                    .iter()
                    .map(|p| ExtendedPoint {
                        x: p.x.clone(),
                        z: p.z + shift,
                    })
                    .collect();
                paths.push((new_states, w * v / nx));
            }
        }
    }
    renormalize(&mut paths);
    PathMeasure::new(chi.times.clone(), paths)
}

// ---------------------------------------------------------------------------
// Couplings
// ---------------------------------------------------------------------------

/// Discrete coupling (transport plan) between two atomic measures.
#[derive(Debug, Clone)]
pub struct Coupling<L, R> {
    pairs: Vec<(L, R, f64)>,
}

impl<L: AtomKey + Clone, R: AtomKey + Clone> Coupling<L, R> {
    pub fn new(pairs: Vec<(L, R, f64)>) -> Result<Coupling<L, R>> {
        check_weights_ctx(pairs.iter().map(|(_, _, w)| *w), "coupling")?;
        Ok(Coupling { pairs })
    }

    pub fn pairs(&self) -> &[(L, R, f64)] {
        &self.pairs
    }

    pub fn left_masses(&self) -> BTreeMap<Vec<i64>, f64> {
        let mut m = BTreeMap::new();
        for (l, _, w) in &self.pairs {
            *m.entry(l.atom_key()).or_insert(0.0) += w;
        }
        m
    }

    pub fn right_masses(&self) -> BTreeMap<Vec<i64>, f64> {
        let mut m = BTreeMap::new();
        for (_, r, w) in &self.pairs {
            *m.entry(r.atom_key()).or_insert(0.0) += w;
        }
        m
    }
}

/// Identity coupling of a measure with itself.
pub fn identity_coupling(m: &DiscreteMeasure) -> Coupling<TorusPoint, TorusPoint> {
    Coupling {
        pairs: m
            .atoms
            .iter()
            .map(|(p, w)| (p.clone(), p.clone(), *w))
            .collect(),
    }
}

/// Composition `pi12 * pi23` of couplings sharing the middle marginal:
/// conditionally independent gluing through the middle atoms.
pub fn compose_plans<X, Y, Z>(
    p12: &Coupling<X, Y>,
    p23: &Coupling<Y, Z>,
) -> Result<Coupling<X, Z>>
where
    X: AtomKey + Clone,
    Y: AtomKey + Clone,
    Z: AtomKey + Clone,
{
    let mut mid12: BTreeMap<Vec<i64>, (Vec<usize>, f64)> = BTreeMap::new();
    for (i, (_, y, w)) in p12.pairs.iter().enumerate() {
        let e = mid12.entry(y.atom_key()).or_insert_with(|| (Vec::new(), 0.0));
        e.0.push(i);
        e.1 += w;
    }
    let mut mid23: BTreeMap<Vec<i64>, (Vec<usize>, f64)> = BTreeMap::new();
    for (j, (y, _, w)) in p23.pairs.iter().enumerate() {
        let e = mid23.entry(y.atom_key()).or_insert_with(|| (Vec::new(), 0.0));
        e.0.push(j);
        e.1 += w;
    }
    if mid12.len() != mid23.len() || mid12.keys().zip(mid23.keys()).any(|(k, l)| k != l) {
        return Err(Error::precondition(
            "middle marginals do not share a common atom set",
        ));
    }
    for (key, (_, ma)) in &mid12 {
        if (ma - mid23[key].1).abs() > MATCH_TOL {
            return Err(Error::precondition(format!(
                "middle marginal masses differ by {:.3e}",
                (ma - mid23[key].1).abs()
            )));
        }
    }

    // accumulate into (x,z) buckets for a deterministic, merged table
    let mut out: BTreeMap<(Vec<i64>, Vec<i64>), (X, Z, f64)> = BTreeMap::new();
    for (key, (ids12, _)) in &mid12 {
        let (ids23, my) = &mid23[key];
        for &i in ids12 {
            let (x, _, w12) = &p12.pairs[i];
            for &j in ids23 {
                let (_, z, w23) = &p23.pairs[j];
                let w = w12 * w23 / my;
                if w == 0.0 {
                    continue;
                }
                out.entry((x.atom_key(), z.atom_key()))
                    .and_modify(|e| e.2 += w)
                    .or_insert_with(|| (x.clone(), z.clone(), w));
            }
        }
    }
    let mut pairs: Vec<((X, Z), f64)> = out
        .into_values()
        .map(|(x, z, w)| ((x, z), w))
        .collect();
    renormalize(&mut pairs);
    Coupling::new(pairs.into_iter().map(|((x, z), w)| (x, z, w)).collect())
}

// ---------------------------------------------------------------------------
// Flows of probabilities
// ---------------------------------------------------------------------------

/// Flow of measures over a time grid (one slice per time).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(
    serialize = "M: Serialize",
    deserialize = "M: serde::de::DeserializeOwned"
))]
pub struct Flow<M> {
    times: Vec<f64>,
    slices: Vec<M>,
}

pub type MeasureFlow = Flow<DiscreteMeasure>;
pub type ExtendedFlow = Flow<ExtendedMeasure>;

impl<M> Flow<M> {
    pub fn new(times: Vec<f64>, slices: Vec<M>) -> Result<Flow<M>> {
        if times.len() != slices.len() || times.is_empty() {
            return Err(Error::invalid("flow times/slices length mismatch"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("flow time grid must be strictly increasing"));
        }
        Ok(Flow { times, slices })
    }

    /// Constant-in-time flow.
    pub fn constant(times: Vec<f64>, slice: M) -> Result<Flow<M>>
    where
        M: Clone,
    {
        let slices = vec![slice; times.len()];
        Flow::new(times, slices)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> &[M] {
        &self.slices
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        snap_index(&self.times, t)
    }

    /// Slice at the grid time nearest to `t`.
    pub fn at(&self, t: f64) -> Result<&M> {
        Ok(&self.slices[self.index_of(t)?])
    }

    pub fn covers(&self, s: f64, r: f64) -> bool {
        self.times[0] <= s + MATCH_TOL && *self.times.last().unwrap() >= r - MATCH_TOL
    }

    pub fn map<N>(&self, f: impl Fn(&M) -> N) -> Flow<N> {
        Flow {
            times: self.times.clone(),
            slices: self.slices.iter().map(f).collect(),
        }
    }
}

impl Flow<ExtendedMeasure> {
    pub fn projected(&self) -> Flow<DiscreteMeasure> {
        self.map(project)
    }
}

// ---------------------------------------------------------------------------
// JSON schemas
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct AtomDto {
    x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z: Option<f64>,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct MeasureDto {
    dim: usize,
    atoms: Vec<AtomDto>,
}

impl Serialize for DiscreteMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureDto {
            dim: self.dim(),
            atoms: self
                .atoms
                .iter()
                .map(|(p, w)| AtomDto {
                    x: p.coords().to_vec(),
                    z: None,
                    w: *w,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let dto = MeasureDto::deserialize(d)?;
        let atoms = dto
            .atoms
            .into_iter()
            .map(|a| Ok((TorusPoint::wrap(&a.x).map_err(serde::de::Error::custom)?, a.w)))
            .collect::<std::result::Result<Vec<_>, D::Error>>()?;
        DiscreteMeasure::new(atoms).map_err(serde::de::Error::custom)
    }
}

impl Serialize for ExtendedMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureDto {
            dim: self.dim(),
            atoms: self
                .atoms
                .iter()
                .map(|(p, w)| AtomDto {
                    x: p.x.coords().to_vec(),
                    z: Some(p.z),
                    w: *w,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ExtendedMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let dto = MeasureDto::deserialize(d)?;
        let atoms = dto
            .atoms
            .into_iter()
            .map(|a| {
                let x = TorusPoint::wrap(&a.x).map_err(serde::de::Error::custom)?;
                Ok((
                    ExtendedPoint {
                        x,
                        z: a.z.unwrap_or(0.0),
                    },
                    a.w,
                ))
            })
            .collect::<std::result::Result<Vec<_>, D::Error>>()?;
        ExtendedMeasure::new(atoms).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct StateDto {
    x: Vec<f64>,
    z: f64,
}

#[derive(Serialize, Deserialize)]
struct PathDto {
    states: Vec<StateDto>,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct PathMeasureDto {
    dim: usize,
    time_grid: Vec<f64>,
    atoms: Vec<PathDto>,
}

impl Serialize for PathMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PathMeasureDto {
            dim: self.dim(),
            time_grid: self.times.clone(),
            atoms: self
                .paths
                .iter()
                .map(|(states, w)| PathDto {
                    states: states
                        .iter()
                        .map(|p| StateDto {
                            x: p.x.coords().to_vec(),
                            z: p.z,
                        })
                        .collect(),
                    w: *w,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PathMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let dto = PathMeasureDto::deserialize(d)?;
        let paths = dto
            .atoms
            .into_iter()
            .map(|p| {
                let states = p
                    .states
                    .into_iter()
                    .map(|s| {
                        Ok(ExtendedPoint {
                            x: TorusPoint::wrap(&s.x).map_err(serde::de::Error::custom)?,
                            z: s.z,
                        })
                    })
                    .collect::<std::result::Result<Vec<_>, D::Error>>()?;
                Ok((states, p.w))
            })
            .collect::<std::result::Result<Vec<_>, D::Error>>()?;
        PathMeasure::new(dto.time_grid, paths).map_err(serde::de::Error::custom)
    }
}
