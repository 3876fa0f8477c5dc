//! Value multifunctions, viability checking, the set-valued derivative test
//! and the Euler-chain constructor.
//!
//! A [`ValueMultifunction`] is a finite sample table `(t, m) -> {phi}` with
//! uniform bound `M` and Lipschitz bound `C`; lookups match by time first,
//! then by smallest `W1`. Viability of its graph under the game dynamics is
//! spot-checked by regenerating steps whose terminal data stays in the
//! graph. The set-valued derivative test replaces the limit conditions by a
//! decreasing `tau` sequence with linear-fit extrapolation of the scaled
//! residuals; witnesses are velocity plans with atom-wise mixture
//! velocities, which satisfy the vectogram-support condition by
//! construction. [`chain_solve`] builds a value-multifunction trajectory as
//! a chain of generated steps, glues the flows by re-anchored concatenation,
//! and assembles the final value function by one backward sweep.

use crate::bellman::{bellman_b, frozen_a};
use crate::dynamics::{
    dist_to_vectogram, extreme_velocities, mixture_velocity, MixtureMesh, ModelSpec, Velocity,
    VelocityPlan,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::GridFunction;
use crate::measures::{
    action, lift, project, DiscreteMeasure, ExtendedMeasure, ExtendedPoint, PathMeasure,
};
use crate::mfg::{MFGSolution, SolveConfig, SolveReport};
use crate::gamedyn::{psi_check, psi_compose, psi_generate, PsiStep};
use crate::torus::TorusPoint;
use crate::wasserstein::w1_distance;
use rand::Rng;

// ---------------------------------------------------------------------------
// Value multifunction
// ---------------------------------------------------------------------------

/// One sampled point of the graph: the set of payoff functions stored at
/// `(t, m)`.
#[derive(Debug, Clone)]
pub struct VmfSample {
    pub t: f64,
    pub m: DiscreteMeasure,
    pub values: Vec<GridFunction>,
}

/// Finite sample table of a value multifunction with its uniform and
/// Lipschitz bounds.
#[derive(Debug, Clone)]
pub struct ValueMultifunction {
    samples: Vec<VmfSample>,
    bound_m: f64,
    bound_c: f64,
}

impl ValueMultifunction {
    /// Grid slack allowed on top of the declared Lipschitz bound.
    const LIP_SLACK: f64 = 1e-9;

    pub fn new(samples: Vec<VmfSample>, bound_m: f64, bound_c: f64) -> Result<ValueMultifunction> {
        if samples.is_empty() || samples.iter().any(|s| s.values.is_empty()) {
            return Err(Error::invalid("every sample needs at least one function"));
        }
        for s in &samples {
            for phi in &s.values {
                if phi.sup_norm() > bound_m + 1e-12 {
                    return Err(Error::invalid(format!(
                        "stored function exceeds the uniform bound M={bound_m}"
                    )));
                }
                if phi.empirical_lipschitz() > bound_c + Self::LIP_SLACK {
                    return Err(Error::invalid(format!(
                        "stored function exceeds the Lipschitz bound C={bound_c}"
                    )));
                }
            }
        }
        Ok(ValueMultifunction {
            samples,
            bound_m,
            bound_c,
        })
    }

    /// Sample the graph of one equilibrium: `V(t_k, m(t_k)) = {V(t_k, .)}`.
    pub fn from_solution(sol: &MFGSolution) -> Result<ValueMultifunction> {
        let bound_m = sol.values.iter().map(|v| v.sup_norm()).fold(0.0, f64::max);
        let bound_c = sol
            .values
            .iter()
            .map(|v| v.empirical_lipschitz())
            .fold(0.0, f64::max);
        let samples = sol
            .times
            .iter()
            .zip(sol.values.iter())
            .zip(sol.m_flow.slices())
            .map(|((t, v), m)| VmfSample {
                t: *t,
                m: m.clone(),
                values: vec![v.clone()],
            })
            .collect();
        ValueMultifunction::new(samples, bound_m, bound_c)
    }

    pub fn samples(&self) -> &[VmfSample] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [VmfSample] {
        &mut self.samples
    }

    pub fn bound_m(&self) -> f64 {
        self.bound_m
    }

    pub fn bound_c(&self) -> f64 {
        self.bound_c
    }

    /// Nearest sample: match by time first, then by smallest `W1`.
    /// Returns the sample and its `W1` distance from `m`.
    pub fn lookup(&self, t: f64, m: &DiscreteMeasure) -> Result<(&VmfSample, f64)> {
        let dt_best = self
            .samples
            .iter()
            .map(|s| (s.t - t).abs())
            .fold(f64::INFINITY, f64::min);
        let mut best: Option<(&VmfSample, f64)> = None;
        for s in &self.samples {
            if (s.t - t).abs() > dt_best + 1e-12 {
                continue;
            }
            let d = w1_distance(&s.m, m)?;
            if best.as_ref().map_or(true, |(_, bd)| d < *bd) {
                best = Some((s, d));
            }
        }
        best.ok_or_else(|| Error::invalid("empty multifunction"))
    }

    /// All stored functions at the sampled time nearest to `t`.
    pub fn candidates_at(&self, t: f64) -> Vec<GridFunction> {
        let dt_best = self
            .samples
            .iter()
            .map(|s| (s.t - t).abs())
            .fold(f64::INFINITY, f64::min);
        self.samples
            .iter()
            .filter(|s| (s.t - t).abs() <= dt_best + 1e-12)
            .flat_map(|s| s.values.iter().cloned())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Shifts and lifts
// ---------------------------------------------------------------------------

/// Shift of a base-on-`T^d` velocity plan: atoms `(x + tau a, tau b)`.
pub fn shift_theta(beta: &VelocityPlan<TorusPoint>, tau: f64) -> ExtendedMeasure {
    debug_assert!(tau >= 0.0);
    ExtendedMeasure::new(
        beta.atoms()
            .iter()
            .map(|(x, v, w)| {
                let shifted = x.shifted(&v.a.iter().map(|c| c * tau).collect::<Vec<_>>());
                (
                    ExtendedPoint {
                        x: shifted,
                        z: tau * v.b,
                    },
                    *w,
                )
            })
            .collect(),
    )
    .expect("shift preserves weights")
}

/// Shift of an extended-base velocity plan: atoms `w + tau v`.
pub fn shift_xi(gamma: &VelocityPlan<ExtendedPoint>, tau: f64) -> ExtendedMeasure {
    debug_assert!(tau >= 0.0);
    ExtendedMeasure::new(
        gamma
            .atoms()
            .iter()
            .map(|(w0, v, w)| {
                let shifted = w0.x.shifted(&v.a.iter().map(|c| c * tau).collect::<Vec<_>>());
                (
                    ExtendedPoint {
                        x: shifted,
                        z: w0.z + tau * v.b,
                    },
                    *w,
                )
            })
            .collect(),
    )
    .expect("shift preserves weights")
}

/// Straight-line path measure on `[tau, theta]`: each atom moves with its
/// own constant velocity, sampled on a uniform grid of `steps` steps.
pub fn linear_lift(
    gamma: &VelocityPlan<ExtendedPoint>,
    tau: f64,
    theta: f64,
    steps: usize,
) -> Result<PathMeasure> {
    if theta <= tau {
        return Err(Error::invalid("linear lift needs tau < theta"));
    }
    let steps = steps.max(1);
    let times = crate::dynamics::time_grid(tau, theta, steps);
    let paths = gamma
        .atoms()
        .iter()
        .map(|(w0, v, w)| {
            let states = times
                .iter()
                .map(|&t| {
                    let dt = t - tau;
                    ExtendedPoint {
                        x: w0.x.shifted(&v.a.iter().map(|c| c * dt).collect::<Vec<_>>()),
                        z: w0.z + dt * v.b,
                    }
                })
                .collect();
            (states, *w)
        })
        .collect();
    PathMeasure::new(times, paths)
}

/// Difference-quotient plan of a path measure between two grid times: one
/// atom per path with base `x(s)` and velocity
/// `((x(r) - x(s)) / (r - s), (z(r) - z(s)) / (r - s))`, the displacement
/// unwrapped step by step along the path.
pub fn finite_difference_plan(
    chi: &PathMeasure,
    s: f64,
    r: f64,
) -> Result<VelocityPlan<TorusPoint>> {
    let i0 = chi.snap_index(s)?;
    let i1 = chi.snap_index(r)?;
    if i0 >= i1 {
        return Err(Error::invalid("difference quotient needs s < r on the grid"));
    }
    let dt = chi.times()[i1] - chi.times()[i0];
    let atoms = chi
        .paths()
        .iter()
        .map(|(states, w)| {
            let dim = states[0].x.dim();
            let mut disp = vec![0.0; dim];
            for k in i0..i1 {
                let step = states[k].x.displacement_to(&states[k + 1].x);
                for (acc, d) in disp.iter_mut().zip(&step) {
                    *acc += d;
                }
            }
            let v = Velocity {
                a: disp.iter().map(|d| d / dt).collect(),
                b: (states[i1].z - states[i0].z) / dt,
            };
            (states[i0].x.clone(), v, *w)
        })
        .collect();
    VelocityPlan::new(atoms)
}

// ---------------------------------------------------------------------------
// Viability check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ViabilityVerdict {
    /// Index into the multifunction's sample table (the `(m, phi)` checked).
    pub sample: usize,
    pub value_index: usize,
    pub ok: bool,
    /// Best Bellman-match residual among generated steps.
    pub best_bellman: f64,
    /// Sup-norm distance from the step's terminal payoff to the nearest
    /// stored member at the terminal time.
    pub member_dist: f64,
    /// `W1` lookup distance of the terminal measure.
    pub lookup_w1: f64,
}

/// Check viability of the sampled graph between two times: for every
/// `(m, phi)` stored at time `s`, try to generate a step whose terminal
/// pair stays in the graph at time `r`.
pub fn viability_check(
    model: &ModelSpec,
    vmf: &ValueMultifunction,
    s: f64,
    r: f64,
    cfg: &SolveConfig,
    tol: f64,
) -> Result<Vec<ViabilityVerdict>> {
    let candidates = vmf.candidates_at(r);
    let mut verdicts = Vec::new();
    let dt_best = vmf
        .samples()
        .iter()
        .map(|x| (x.t - s).abs())
        .fold(f64::INFINITY, f64::min);
    for (si, sample) in vmf.samples().iter().enumerate() {
        if (sample.t - s).abs() > dt_best + 1e-12 {
            continue;
        }
        for (vi, phi) in sample.values.iter().enumerate() {
            let steps = psi_generate(model, s, r, &sample.m, phi, &candidates, cfg, tol)?;
            let mut best_bellman = f64::INFINITY;
            let mut member = f64::INFINITY;
            let mut lookup = f64::INFINITY;
            let mut ok = false;
            for step in &steps {
                let bell = psi_check(model, step, tol)
                    .checks
                    .iter()
                    .find(|c| c.name == "psi2-bellman")
                    .map(|c| c.residual)
                    .unwrap_or(f64::INFINITY);
                best_bellman = best_bellman.min(bell);
                let (hit, w1d) = vmf.lookup(r, &step.mu)?;
                let md = hit
                    .values
                    .iter()
                    .map(|g| g.linf_diff(&step.psi))
                    .fold(f64::INFINITY, f64::min);
                if w1d <= tol && md <= tol {
                    ok = true;
                    member = member.min(md);
                    lookup = lookup.min(w1d);
                } else {
                    member = member.min(md);
                    lookup = lookup.min(w1d);
                }
            }
            verdicts.push(ViabilityVerdict {
                sample: si,
                value_index: vi,
                ok,
                best_bellman,
                member_dist: member,
                lookup_w1: lookup,
            });
        }
    }
    Ok(verdicts)
}

// ---------------------------------------------------------------------------
// Set-valued derivative test
// ---------------------------------------------------------------------------

/// Scaled residuals measured at one `tau` of the sequence.
#[derive(Debug, Clone)]
pub struct DerivativeRecord {
    pub tau: f64,
    /// `||A^{t,t+tau}_m phi_tau - phi|| / tau`.
    pub q: f64,
    /// `([phi_tau, nu_tau] - [phi, lift m]) / tau`.
    pub p: f64,
    /// `W1` lookup distance of the shifted measure in the sample table.
    pub lookup_w1: f64,
}

/// A candidate derivative element together with its measured evidence.
#[derive(Debug, Clone)]
pub struct DerivativeWitness {
    pub beta: VelocityPlan<TorusPoint>,
    pub records: Vec<DerivativeRecord>,
    /// Linear-fit intercepts of `q` and `p` against `tau`.
    pub q_limit: f64,
    pub p_limit: f64,
    /// `∫ dist(v, F(t, x, m)) d beta` (zero by construction for mixture
    /// velocities, up to hull-projection roundoff).
    pub condition5: f64,
}

/// Result of the derivative search: `witness` is present when the fitted
/// limits meet the tolerance; `best` always reports the least-bad candidate.
#[derive(Debug, Clone)]
pub struct DerivativeOutcome {
    pub witness: Option<DerivativeWitness>,
    pub best: DerivativeWitness,
}

fn fit_intercept(records: &[DerivativeRecord], pick: impl Fn(&DerivativeRecord) -> f64) -> f64 {
    // least-squares line v = a + b tau; returns a
    let n = records.len() as f64;
    let sx: f64 = records.iter().map(|r| r.tau).sum();
    let sy: f64 = records.iter().map(|r| pick(r)).sum();
    let sxx: f64 = records.iter().map(|r| r.tau * r.tau).sum();
    let sxy: f64 = records.iter().map(|r| r.tau * pick(r)).sum();
    let den = n * sxx - sx * sx;
    if den.abs() < 1e-300 {
        return sy / n;
    }
    let slope = (n * sxy - sx * sy) / den;
    sy / n - slope * sx / n
}

fn evaluate_candidate(
    model: &ModelSpec,
    vmf: &ValueMultifunction,
    t: f64,
    m: &DiscreteMeasure,
    phi: &GridFunction,
    beta: &VelocityPlan<TorusPoint>,
    tau_seq: &[f64],
    mesh: &MixtureMesh,
) -> Result<DerivativeWitness> {
    let st = model.stats(m);
    let base_action = action(phi, &lift(m));
    let mut records = Vec::with_capacity(tau_seq.len());
    for &tau in tau_seq {
        let nu = shift_theta(beta, tau);
        let m_tau = project(&nu);
        let (sample, w1d) = vmf.lookup(t + tau, &m_tau)?;
        // the membership condition is existential over the stored set
        let mut q = f64::INFINITY;
        let mut p = f64::NEG_INFINITY;
        for cand in &sample.values {
            let a_phi = frozen_a(model, t, t + tau, m, cand, mesh)?;
            let qc = a_phi.linf_diff(phi) / tau;
            if qc < q {
                q = qc;
                p = (action(cand, &nu) - base_action) / tau;
            }
        }
        records.push(DerivativeRecord {
            tau,
            q,
            p,
            lookup_w1: w1d,
        });
    }
    let q_limit = fit_intercept(&records, |r| r.q);
    let p_limit = fit_intercept(&records, |r| r.p);
    let condition5 = beta
        .atoms()
        .iter()
        .map(|(x, v, w)| w * dist_to_vectogram(model, v, t, x, &st))
        .sum();
    Ok(DerivativeWitness {
        beta: beta.clone(),
        records,
        q_limit,
        p_limit,
        condition5,
    })
}

fn loss(w: &DerivativeWitness, tol: f64) -> f64 {
    (w.q_limit - tol).max(0.0) + (-tol - w.p_limit).max(0.0)
}

/// Project a velocity onto the sampled vectogram mixtures: the mesh mixture
/// closest to `v` in the extended velocity space.
fn nearest_mixture(extremes: &[Velocity], mesh: &MixtureMesh, v: &Velocity) -> Vec<f64> {
    let mut best = f64::INFINITY;
    let mut best_lambda = mesh.weights()[0].clone();
    for lambda in mesh.weights() {
        let mv = mixture_velocity(extremes, lambda);
        let d2: f64 = mv
            .a
            .iter()
            .zip(&v.a)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            + (mv.b - v.b) * (mv.b - v.b);
        if d2 < best {
            best = d2;
            best_lambda = lambda.clone();
        }
    }
    best_lambda
}

fn plan_from_mixtures(
    model: &ModelSpec,
    t: f64,
    m: &DiscreteMeasure,
    lambdas: &[Vec<f64>],
) -> VelocityPlan<TorusPoint> {
    let st = model.stats(m);
    let atoms = m
        .atoms()
        .iter()
        .zip(lambdas)
        .map(|((x, w), lambda)| {
            let extremes = extreme_velocities(model, t, x, &st);
            (x.clone(), mixture_velocity(&extremes, lambda), *w)
        })
        .collect();
    VelocityPlan::new(atoms).expect("measure weights are a probability")
}

/// Search for an element of the set-valued derivative at `(t, m, phi)`.
///
/// Candidate plans carry atom-wise mixture velocities from `F(t, x_i, m)`
/// (support condition by construction); seeds are the uniform mixture, the
/// pure controls, an optional list of external plans (e.g. finite-difference
/// plans of an equilibrium) projected onto mixtures, followed by random
/// local descent over the mixture weights.
#[allow(clippy::too_many_arguments)]
pub fn derivative_test(
    model: &ModelSpec,
    vmf: &ValueMultifunction,
    t: f64,
    m: &DiscreteMeasure,
    phi: &GridFunction,
    tau_seq: &[f64],
    tol: f64,
    seeds: &[VelocityPlan<TorusPoint>],
    mesh_subdiv: usize,
    rng: &mut impl Rng,
) -> Result<DerivativeOutcome> {
    if tau_seq.is_empty() {
        return Err(Error::invalid("need a tau sequence"));
    }
    let k = model.num_controls();
    let mesh = MixtureMesh::new(k, mesh_subdiv);
    let st = model.stats(m);

    let mut lambda_seeds: Vec<Vec<Vec<f64>>> = Vec::new();
    lambda_seeds.push(vec![vec![1.0 / k as f64; k]; m.len()]);
    for u in 0..k {
        let mut row = vec![0.0; k];
        row[u] = 1.0;
        lambda_seeds.push(vec![row; m.len()]);
    }
    for seed in seeds {
        if seed.len() != m.len() {
            continue;
        }
        let lambdas: Vec<Vec<f64>> = seed
            .atoms()
            .iter()
            .map(|(x, v, _)| {
                let extremes = extreme_velocities(model, t, x, &st);
                nearest_mixture(&extremes, &mesh, v)
            })
            .collect();
        lambda_seeds.push(lambdas);
    }

    let evaluated: Vec<(Vec<Vec<f64>>, DerivativeWitness)> = {
        let evals = exec::par_map(&lambda_seeds, |lambdas| {
            let beta = plan_from_mixtures(model, t, m, lambdas);
            evaluate_candidate(model, vmf, t, m, phi, &beta, tau_seq, &mesh)
                .map(|w| (lambdas.clone(), w))
        });
        let mut out = Vec::new();
        for e in evals {
            out.push(e?);
        }
        out
    };
    let (mut best_lambdas, mut best) = evaluated
        .into_iter()
        .min_by(|(_, a), (_, b)| loss(a, tol).partial_cmp(&loss(b, tol)).unwrap())
        .expect("at least one seed");

    // random projected local descent over the mixture weights
    let descent_steps = 60usize;
    for _ in 0..descent_steps {
        if loss(&best, tol) == 0.0 {
            break;
        }
        let mut cand = best_lambdas.clone();
        let atom = rng.random_range(0..cand.len());
        let vertex = rng.random_range(0..k);
        let eta: f64 = rng.random_range(0.1..0.9);
        for (j, lam) in cand[atom].iter_mut().enumerate() {
            let target = if j == vertex { 1.0 } else { 0.0 };
            *lam = (1.0 - eta) * *lam + eta * target;
        }
        let beta = plan_from_mixtures(model, t, m, &cand);
        let w = evaluate_candidate(model, vmf, t, m, phi, &beta, tau_seq, &mesh)?;
        if loss(&w, tol) < loss(&best, tol) {
            best = w;
            best_lambdas = cand;
        }
    }

    let witness = if loss(&best, tol) == 0.0 {
        Some(best.clone())
    } else {
        None
    };
    Ok(DerivativeOutcome { witness, best })
}

// ---------------------------------------------------------------------------
// Chain construction
// ---------------------------------------------------------------------------

/// Per-step record of a chain construction.
#[derive(Debug, Clone)]
pub struct ChainStepReport {
    pub index: usize,
    pub bellman_residual: f64,
    pub action_gap: f64,
    pub lookup_w1: f64,
}

#[derive(Debug, Clone)]
pub struct ChainResult {
    pub solution: MFGSolution,
    pub steps: Vec<ChainStepReport>,
    /// Deviation of the assembled value function from the requested start.
    pub start_value_gap: f64,
}

/// Build a solution from a viable multifunction by chaining generated steps
/// over `n_chain` equal subintervals of `[t_star, T]`, where `T` is the last
/// sampled time of the multifunction. The last step targets the model's
/// terminal payoff (the multifunction is assumed to store `sigma` there).
#[allow(clippy::too_many_arguments)]
pub fn chain_solve(
    model: &ModelSpec,
    vmf: &ValueMultifunction,
    t_star: f64,
    m_star: &DiscreteMeasure,
    phi_star: &GridFunction,
    n_chain: usize,
    cfg: &SolveConfig,
    tol: f64,
) -> Result<ChainResult> {
    if n_chain == 0 {
        return Err(Error::invalid("chain needs at least one step"));
    }
    let t_end = vmf
        .samples()
        .iter()
        .map(|s| s.t)
        .fold(f64::NEG_INFINITY, f64::max);
    if t_end <= t_star {
        return Err(Error::invalid("multifunction does not extend past t_star"));
    }
    let dt = (t_end - t_star) / n_chain as f64;

    let mut m_cur = m_star.clone();
    let mut phi_cur = phi_star.clone();
    let mut pieces: Vec<PsiStep> = Vec::new();
    let mut reports = Vec::new();
    for i in 1..=n_chain {
        let s = t_star + (i - 1) as f64 * dt;
        let r = t_star + i as f64 * dt;
        let candidates = if i == n_chain {
            // the graph stores sigma(., m) at the terminal time
            vmf.candidates_at(t_end)
        } else {
            vmf.candidates_at(r)
        };
        let steps = psi_generate(model, s, r, &m_cur, &phi_cur, &candidates, cfg, tol)?;
        let step = steps
            .into_iter()
            .min_by(|a, b| {
                let ra = psi_check(model, a, tol);
                let rb = psi_check(model, b, tol);
                let qa = ra
                    .checks
                    .iter()
                    .find(|c| c.name == "psi2-bellman")
                    .unwrap()
                    .residual;
                let qb = rb
                    .checks
                    .iter()
                    .find(|c| c.name == "psi2-bellman")
                    .unwrap()
                    .residual;
                qa.partial_cmp(&qb).unwrap()
            })
            .ok_or_else(|| Error::ChainFailure {
                index: i,
                reason: format!("no step found out of (t={s:.4}) at tolerance {tol:.2e}"),
            })?;
        let report = psi_check(model, &step, tol);
        let bell = report
            .checks
            .iter()
            .find(|c| c.name == "psi2-bellman")
            .unwrap()
            .residual;
        let (_, lookup) = vmf.lookup(r, &step.mu)?;
        reports.push(ChainStepReport {
            index: i,
            bellman_residual: bell,
            action_gap: report.action_gap,
            lookup_w1: lookup,
        });
        m_cur = step.mu.clone();
        phi_cur = step.psi.clone();
        pieces.push(step);
    }

    // glue the chain; re-anchoring happens inside the composition
    let mut glued = pieces[0].clone();
    for piece in &pieces[1..] {
        glued = psi_compose(model, &glued, piece, tol.max(1e-9))?;
    }
    let chi = glued.chi.clone();
    let nu_flow = chi.flow();
    let m_flow = nu_flow.projected();
    let times = chi.times().to_vec();
    let lattice = phi_star.lattice();
    let mesh = MixtureMesh::new(model.num_controls(), cfg.mesh_subdiv);
    let sigma = model.terminal_grid(lattice, m_flow.slices().last().unwrap());
    let sweep = bellman_b(
        model,
        t_star,
        t_end,
        &m_flow,
        &sigma,
        times.len() - 1,
        &mesh,
    )?;
    let start_value_gap = sweep.initial().linf_diff(phi_star);

    let solution = MFGSolution {
        model_name: model.name().to_string(),
        cfg: cfg.clone(),
        times,
        values: sweep.values().to_vec(),
        m_flow,
        nu_flow,
        chi,
        report: SolveReport {
            converged: true,
            iterations: n_chain,
            flow_residual: reports
                .iter()
                .map(|r| r.bellman_residual)
                .fold(0.0, f64::max),
            history: reports.iter().map(|r| r.bellman_residual).collect(),
        },
    };
    Ok(ChainResult {
        solution,
        steps: reports,
        start_value_gap,
    })
}
