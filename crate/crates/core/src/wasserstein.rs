//! Exact Kantorovich–Rubinstein (Wasserstein-1) distances and optimal plans.
//!
//! The general solver is a dense transportation simplex on the bipartite
//! atom graph, exact for the finite problem; entropic approximations are
//! deliberately avoided so the lemma-bound tests stay sharp. Ground
//! distances: quotient Euclidean on `T^d`, `||x|| + |z|` on the extended
//! space, and the sup over grid times of the extended norm on path space.
//!
//! For measures on `T^1` there is an `O(N log N)` exact fast path via the
//! circular cumulative-distribution formula (minimise the area between the
//! CDFs over a free rotation constant); it is cross-checked against the
//! simplex in the tests and used for large flow residuals.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::measures::{Coupling, DiscreteMeasure, ExtendedMeasure, PathMeasure};
use crate::torus::TorusPoint;

/// Result of an optimal transport solve: the distance and the attaining
/// plan as (left index, right index, mass) triples.
#[derive(Debug, Clone)]
pub struct TransportResult {
    pub distance: f64,
    pub pairs: Vec<(usize, usize, f64)>,
}

impl TransportResult {
    /// Transport cost of the plan under the given cost matrix accessor.
    pub fn plan_cost(&self, cost: impl Fn(usize, usize) -> f64) -> f64 {
        self.pairs.iter().map(|&(i, j, w)| w * cost(i, j)).sum()
    }
}

/// `W1` between measures on `T^d` with the quotient Euclidean ground metric.
pub fn w1(m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> Result<TransportResult> {
    if m1.dim() != m2.dim() {
        return Err(Error::invalid("measures live on different tori"));
    }
    let a: Vec<f64> = m1.atoms().iter().map(|(_, w)| *w).collect();
    let b: Vec<f64> = m2.atoms().iter().map(|(_, w)| *w).collect();
    let cost = |i: usize, j: usize| m1.atoms()[i].0.dist(&m2.atoms()[j].0);
    solve_transport(&a, &b, cost)
}

/// `W1` between extended measures with ground `||x - x'|| + |z - z'|`.
pub fn w1_extended(n1: &ExtendedMeasure, n2: &ExtendedMeasure) -> Result<TransportResult> {
    if n1.dim() != n2.dim() {
        return Err(Error::invalid("measures live on different spaces"));
    }
    let a: Vec<f64> = n1.atoms().iter().map(|(_, w)| *w).collect();
    let b: Vec<f64> = n2.atoms().iter().map(|(_, w)| *w).collect();
    let cost = |i: usize, j: usize| n1.atoms()[i].0.dist(&n2.atoms()[j].0);
    solve_transport(&a, &b, cost)
}

/// `W1` between path measures sharing a time grid; ground distance is the
/// sup over grid times of the extended norm.
pub fn w1_paths(c1: &PathMeasure, c2: &PathMeasure) -> Result<TransportResult> {
    if c1.times().len() != c2.times().len()
        || c1
            .times()
            .iter()
            .zip(c2.times())
            .any(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(Error::invalid("path measures must share the time grid"));
    }
    let a: Vec<f64> = c1.paths().iter().map(|(_, w)| *w).collect();
    let b: Vec<f64> = c2.paths().iter().map(|(_, w)| *w).collect();
    let cost = |i: usize, j: usize| {
        let (si, _) = &c1.paths()[i];
        let (sj, _) = &c2.paths()[j];
        si.iter()
            .zip(sj)
            .map(|(p, q)| p.dist(q))
            .fold(0.0f64, f64::max)
    };
    solve_transport(&a, &b, cost)
}

/// Distance-only `W1` on `T^d`: exact circle formula for `d = 1`, simplex
/// otherwise.
pub fn w1_distance(m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> Result<f64> {
    if m1.dim() != m2.dim() {
        return Err(Error::invalid("measures live on different tori"));
    }
    if m1.dim() == 1 {
        return Ok(w1_circle(m1, m2));
    }
    Ok(w1(m1, m2)?.distance)
}

/// Materialise a plan on `T^d` as a point coupling.
pub fn plan_coupling(
    m1: &DiscreteMeasure,
    m2: &DiscreteMeasure,
    res: &TransportResult,
) -> Result<Coupling<TorusPoint, TorusPoint>> {
    Coupling::new(
        res.pairs
            .iter()
            .map(|&(i, j, w)| (m1.atoms()[i].0.clone(), m2.atoms()[j].0.clone(), w))
            .collect(),
    )
}

/// Dual lower bound `∫phi dm1 - ∫phi dm2` for a lattice 1-Lipschitz `phi`.
pub fn w1_dual_lower_bound(
    m1: &DiscreteMeasure,
    m2: &DiscreteMeasure,
    phi: &GridFunction,
) -> Result<f64> {
    let lip = phi.empirical_lipschitz();
    if lip > 1.0 + 1e-9 {
        return Err(Error::precondition(format!(
            "test function is not 1-Lipschitz on the lattice (empirical constant {lip:.6})"
        )));
    }
    let avg = |m: &DiscreteMeasure| -> f64 {
        m.atoms().iter().map(|(p, w)| w * phi.eval(p)).sum()
    };
    Ok(avg(m1) - avg(m2))
}

// ---------------------------------------------------------------------------
// Exact 1-d circular transport
// ---------------------------------------------------------------------------

/// Exact `W1` on the circle: `min_t ∫ |F1(x) - F2(x) - t| dx`, with the
/// optimum at a weighted median of the CDF difference.
pub fn w1_circle(m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> f64 {
    debug_assert_eq!(m1.dim(), 1);
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(m1.len() + m2.len());
    events.extend(m1.atoms().iter().map(|(p, w)| (p.coords()[0], *w)));
    events.extend(m2.atoms().iter().map(|(p, w)| (p.coords()[0], -*w)));
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // merge coincident positions, build piecewise-constant CDF difference
    let mut positions: Vec<f64> = Vec::new();
    let mut deltas: Vec<f64> = Vec::new();
    for (pos, dw) in events {
        if let Some(&last) = positions.last() {
            if pos == last {
                *deltas.last_mut().unwrap() += dw;
                continue;
            }
        }
        positions.push(pos);
        deltas.push(dw);
    }
    let b = positions.len();
    if b == 1 {
        return 0.0;
    }
    let mut segments: Vec<(f64, f64)> = Vec::with_capacity(b); // (F value, length)
    let mut acc = 0.0;
    for k in 0..b {
        acc += deltas[k];
        let len = if k + 1 < b {
            positions[k + 1] - positions[k]
        } else {
            positions[0] + 1.0 - positions[k]
        };
        segments.push((acc, len));
    }
    // weighted median of F over segment lengths
    segments.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut cum = 0.0;
    let mut t = segments[0].0;
    for &(f, len) in &segments {
        cum += len;
        if cum >= 0.5 {
            t = f;
            break;
        }
    }
    segments.iter().map(|&(f, len)| len * (f - t).abs()).sum()
}

// ---------------------------------------------------------------------------
// Transportation simplex
// ---------------------------------------------------------------------------

/// Exact solver for the dense transportation problem
/// `min sum c_ij x_ij` s.t. row sums `a`, column sums `b`.
///
/// Spanning-tree simplex with most-negative entering arcs, switching to
/// Bland's rule (first eligible, lowest leaving index) if the pivot count
/// grows, which rules out cycling on degenerate instances.
pub fn solve_transport(
    a: &[f64],
    b: &[f64],
    cost: impl Fn(usize, usize) -> f64,
) -> Result<TransportResult> {
    let m = a.len();
    let n = b.len();
    if m == 0 || n == 0 {
        return Err(Error::invalid("empty marginals"));
    }
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    if (sa - sb).abs() > 1e-9 {
        return Err(Error::Transport(format!(
            "marginal masses differ: {sa} vs {sb}"
        )));
    }

    let costs: Vec<f64> = (0..m * n).map(|k| cost(k / n, k % n)).collect();
    let scale = costs.iter().fold(1.0f64, |s, c| s.max(c.abs()));
    let tol = 1e-12 * scale;

    // north-west corner initial basis
    let mut flow = vec![0.0f64; m * n];
    let mut basic = vec![false; m * n];
    let mut ra: Vec<f64> = a.to_vec();
    let mut rb: Vec<f64> = b.to_vec();
    {
        let (mut i, mut j) = (0usize, 0usize);
        loop {
            let q = ra[i].min(rb[j]);
            flow[i * n + j] = q;
            basic[i * n + j] = true;
            ra[i] -= q;
            rb[j] -= q;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if ra[i] <= rb[j] && i < m - 1 {
                i += 1;
            } else if j < n - 1 {
                j += 1;
            } else {
                i += 1;
            }
        }
    }

    let nodes = m + n;
    let mut u = vec![0.0f64; m];
    let mut v = vec![0.0f64; n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes]; // node -> arc ids
    let rebuild_adj = |basic: &[bool], adj: &mut Vec<Vec<usize>>| {
        for l in adj.iter_mut() {
            l.clear();
        }
        for (arc, &isb) in basic.iter().enumerate() {
            if isb {
                adj[arc / n].push(arc);
                adj[m + arc % n].push(arc);
            }
        }
    };
    rebuild_adj(&basic, &mut adj);

    let compute_potentials =
        |adj: &[Vec<usize>], costs: &[f64], u: &mut [f64], v: &mut [f64]| -> Result<()> {
            let mut seen = vec![false; m + n];
            let mut stack = vec![0usize]; // start from source 0, u[0] = 0
            u[0] = 0.0;
            seen[0] = true;
            while let Some(node) = stack.pop() {
                for &arc in &adj[node] {
                    let (i, j) = (arc / n, arc % n);
                    let (src, snk) = (i, m + j);
                    let other = if node == src { snk } else { src };
                    if seen[other] {
                        continue;
                    }
                    if other == snk {
                        v[j] = costs[arc] - u[i];
                    } else {
                        u[i] = costs[arc] - v[j];
                    }
                    seen[other] = true;
                    stack.push(other);
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::Transport("basis is not a spanning tree".into()));
            }
            Ok(())
        };
    compute_potentials(&adj, &costs, &mut u, &mut v)?;

    let max_pivots = 2000 + 60 * (m + n) * (m.max(n));
    let bland_after = 500 + 20 * (m + n);
    let mut parent: Vec<Option<usize>> = vec![None; nodes]; // node -> arc to parent
    for pivot in 0..max_pivots {
        // entering arc
        let mut enter: Option<usize> = None;
        let bland = pivot >= bland_after;
        let mut best = -tol;
        for arc in 0..m * n {
            if basic[arc] {
                continue;
            }
            let red = costs[arc] - u[arc / n] - v[arc % n];
            if red < best {
                enter = Some(arc);
                if bland {
                    break;
                }
                best = red;
            }
        }
        let Some(enter_arc) = enter else {
            // optimal
            let mut pairs = Vec::new();
            let mut total = 0.0;
            for arc in 0..m * n {
                if flow[arc] > 0.0 {
                    pairs.push((arc / n, arc % n, flow[arc]));
                    total += flow[arc] * costs[arc];
                }
            }
            if pairs.is_empty() {
                // all mass on zero-cost arcs collapsed; report the basis diagonal
                pairs.push((0, 0, 0.0));
            }
            return Ok(TransportResult {
                distance: total,
                pairs,
            });
        };

        // unique cycle: tree path between the endpoints of the entering arc
        let start = enter_arc / n;
        let goal = m + enter_arc % n;
        for p in parent.iter_mut() {
            *p = None;
        }
        let mut stack = vec![start];
        let mut seen = vec![false; nodes];
        seen[start] = true;
        while let Some(node) = stack.pop() {
            if node == goal {
                break;
            }
            for &arc in &adj[node] {
                let other = if node == arc / n { m + arc % n } else { arc / n };
                if !seen[other] {
                    seen[other] = true;
                    parent[other] = Some(arc);
                    stack.push(other);
                }
            }
        }

        // walk back from goal to start collecting the path arcs; signs
        // alternate starting with "-" for the arc adjacent to the sink
        let mut path: Vec<usize> = Vec::new();
        {
            let mut node = goal;
            while node != start {
                let arc = parent[node].ok_or_else(|| {
                    Error::Transport("disconnected basis while pivoting".into())
                })?;
                path.push(arc);
                node = if node == m + arc % n { arc / n } else { m + arc % n };
            }
        }
        let minus_arcs: Vec<usize> = path.iter().copied().step_by(2).collect();
        let mut delta = f64::INFINITY;
        let mut leave_arc = usize::MAX;
        for &arc in &minus_arcs {
            if flow[arc] < delta - 1e-15 || (flow[arc] <= delta + 1e-15 && arc < leave_arc) {
                delta = flow[arc].min(delta);
                leave_arc = arc;
            }
        }
        if leave_arc == usize::MAX {
            return Err(Error::Transport("no leaving arc found".into()));
        }

        flow[enter_arc] += delta;
        for (k, &arc) in path.iter().enumerate() {
            if k % 2 == 0 {
                flow[arc] -= delta;
            } else {
                flow[arc] += delta;
            }
        }
        flow[leave_arc] = 0.0;
        basic[leave_arc] = false;
        basic[enter_arc] = true;
        rebuild_adj(&basic, &mut adj);
        compute_potentials(&adj, &costs, &mut u, &mut v)?;
    }
    Err(Error::Transport(format!(
        "pivot limit exceeded ({max_pivots})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::ExtendedPoint;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn pt(x: f64) -> TorusPoint {
        TorusPoint::wrap1(x)
    }

    fn uniform(xs: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::uniform(xs.iter().map(|&x| pt(x)).collect()).unwrap()
    }

    /// Brute-force oracle for equal-weight, equal-size supports: min over
    /// all permutations of the mean matched distance.
    pub(crate) fn w1_permutation_oracle(m1: &DiscreteMeasure, m2: &DiscreteMeasure) -> f64 {
        let n = m1.len();
        assert_eq!(n, m2.len());
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let cost: f64 = (0..n)
                .map(|i| m1.atoms()[i].0.dist(&m2.atoms()[p[i]].0))
                .sum::<f64>()
                / n as f64;
            if cost < best {
                best = cost;
            }
        });
        best
    }

    fn permute(perm: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == perm.len() {
            f(perm);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(perm, k + 1, f);
            perm.swap(k, i);
        }
    }

    #[test]
    fn dirac_pair() {
        let r = w1(&uniform(&[0.2]), &uniform(&[0.5])).unwrap();
        assert_abs_diff_eq!(r.distance, 0.3, epsilon = 1e-12);
        assert_eq!(r.pairs.len(), 1);
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        let m = uniform(&[0.1, 0.4, 0.9]);
        let r = w1(&m, &m).unwrap();
        assert_abs_diff_eq!(r.distance, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn four_atom_uniform_matches_permutation_oracle() {
        let m1 = uniform(&[0.05, 0.3, 0.55, 0.8]);
        let m2 = uniform(&[0.1, 0.45, 0.65, 0.95]);
        let r = w1(&m1, &m2).unwrap();
        assert_abs_diff_eq!(r.distance, w1_permutation_oracle(&m1, &m2), epsilon = 1e-9);
    }

    #[test]
    fn random_pairs_match_oracle_and_circle() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.random_range(1..=5);
            let m1 = uniform(&(0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let m2 = uniform(&(0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let r = w1(&m1, &m2).unwrap();
            let oracle = w1_permutation_oracle(&m1, &m2);
            assert_abs_diff_eq!(r.distance, oracle, epsilon = 1e-9);
            assert_abs_diff_eq!(w1_circle(&m1, &m2), oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn circle_matches_simplex_on_weighted_measures() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..30 {
            let gen = |rng: &mut StdRng| {
                let n = rng.random_range(1..=12);
                let mut ws: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
                let total: f64 = ws.iter().sum();
                ws.iter_mut().for_each(|w| *w /= total);
                DiscreteMeasure::new(
                    ws.into_iter().map(|w| (pt(rng.random::<f64>()), w)).collect(),
                )
                .unwrap()
            };
            let m1 = gen(&mut rng);
            let m2 = gen(&mut rng);
            let exact = w1(&m1, &m2).unwrap().distance;
            assert_abs_diff_eq!(w1_circle(&m1, &m2), exact, epsilon = 1e-9);
        }
    }

    #[test]
    fn plan_attains_distance_and_matches_marginals() {
        let mut rng = StdRng::seed_from_u64(3);
        let m1 = uniform(&(0..6).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
        let m2 = uniform(&(0..6).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
        let r = w1(&m1, &m2).unwrap();
        let by_plan = r.plan_cost(|i, j| m1.atoms()[i].0.dist(&m2.atoms()[j].0));
        assert_abs_diff_eq!(r.distance, by_plan, epsilon = 1e-9);
        let mut left = vec![0.0; 6];
        let mut right = vec![0.0; 6];
        for &(i, j, w) in &r.pairs {
            left[i] += w;
            right[j] += w;
        }
        for k in 0..6 {
            assert_abs_diff_eq!(left[k], m1.atoms()[k].1, epsilon = 1e-12);
            assert_abs_diff_eq!(right[k], m2.atoms()[k].1, epsilon = 1e-12);
        }
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let gen = |rng: &mut StdRng| uniform(&(0..4).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let a = gen(&mut rng);
            let b = gen(&mut rng);
            let c = gen(&mut rng);
            let dab = w1(&a, &b).unwrap().distance;
            let dba = w1(&b, &a).unwrap().distance;
            let dac = w1(&a, &c).unwrap().distance;
            let dcb = w1(&c, &b).unwrap().distance;
            assert_abs_diff_eq!(dab, dba, epsilon = 1e-9);
            assert!(dab <= dac + dcb + 1e-9);
        }
    }

    #[test]
    fn dual_bound_is_tight_for_distance_potential() {
        let lat = crate::torus::TorusLattice::new(20, 1).unwrap();
        let phi = GridFunction::from_fn(lat, |p| {
            let d = (p.coords()[0] - 0.5).abs();
            d.min(1.0 - d)
        });
        let m1 = uniform(&[0.2]);
        let m2 = uniform(&[0.5]);
        let lb = w1_dual_lower_bound(&m1, &m2, &phi).unwrap();
        let primal = w1(&m1, &m2).unwrap().distance;
        assert_abs_diff_eq!(lb, 0.3, epsilon = 1e-12);
        assert!(lb <= primal + 1e-9);
        assert_abs_diff_eq!(lb, primal, epsilon = 1e-9);
    }

    #[test]
    fn dual_bound_rejects_steep_functions() {
        let lat = crate::torus::TorusLattice::new(8, 1).unwrap();
        let phi = GridFunction::from_fn(lat, |p| 3.0 * p.coords()[0]);
        assert!(w1_dual_lower_bound(&uniform(&[0.1]), &uniform(&[0.2]), &phi).is_err());
    }

    #[test]
    fn dual_never_exceeds_primal_on_random_lipschitz_family() {
        let mut rng = StdRng::seed_from_u64(5);
        let lat = crate::torus::TorusLattice::new(32, 1).unwrap();
        for _ in 0..20 {
            let c = rng.random::<f64>();
            let phi = GridFunction::from_fn(lat, |p| {
                let d = (p.coords()[0] - c).abs();
                d.min(1.0 - d)
            });
            let m1 = uniform(&(0..5).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let m2 = uniform(&(0..5).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let lb = w1_dual_lower_bound(&m1, &m2, &phi).unwrap();
            let primal = w1(&m1, &m2).unwrap().distance;
            assert!(lb <= primal + 1e-9);
        }
    }

    #[test]
    fn extended_ground_adds_reward_gap() {
        let n1 = ExtendedMeasure::dirac(ExtendedPoint { x: pt(0.2), z: 1.0 });
        let n2 = ExtendedMeasure::dirac(ExtendedPoint { x: pt(0.4), z: -0.5 });
        let r = w1_extended(&n1, &n2).unwrap();
        assert_abs_diff_eq!(r.distance, 0.2 + 1.5, epsilon = 1e-12);
    }

    #[test]
    fn path_ground_is_sup_over_times() {
        let mk = |a: f64, b: f64| {
            PathMeasure::new(
                vec![0.0, 1.0],
                vec![(
                    vec![
                        ExtendedPoint { x: pt(a), z: 0.0 },
                        ExtendedPoint { x: pt(b), z: 0.0 },
                    ],
                    1.0,
                )],
            )
            .unwrap()
        };
        let c1 = mk(0.0, 0.1);
        let c2 = mk(0.05, 0.4);
        let r = w1_paths(&c1, &c2).unwrap();
        assert_abs_diff_eq!(r.distance, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_equal_atoms() {
        // many coincident atoms force degenerate pivots
        let m1 = uniform(&[0.5, 0.5, 0.5, 0.5]);
        let m2 = uniform(&[0.5, 0.5, 0.25, 0.75]);
        let r = w1(&m1, &m2).unwrap();
        assert_abs_diff_eq!(r.distance, 0.125, epsilon = 1e-12);
    }

    #[test]
    fn two_dim_simplex_matches_oracle() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..20 {
            let gen = |rng: &mut StdRng| {
                DiscreteMeasure::uniform(
                    (0..4)
                        .map(|_| TorusPoint::wrap(&[rng.random(), rng.random()]).unwrap())
                        .collect(),
                )
                .unwrap()
            };
            let m1 = gen(&mut rng);
            let m2 = gen(&mut rng);
            let r = w1(&m1, &m2).unwrap();
            assert_abs_diff_eq!(r.distance, w1_permutation_oracle(&m1, &m2), epsilon = 1e-9);
        }
    }
}
