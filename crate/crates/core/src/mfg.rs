//! Equilibrium solver and verifier for the coupled mean field game.
//!
//! An equilibrium pairs a value function `V` with a measure flow `m(.)` such
//! that `V` is the Bellman value along the flow, the flow is carried by
//! value-optimal trajectories, and the terminal payoff is `sigma(., m(T))`.
//! [`solve_mfg`] iterates best responses (backward sweep + forward optimal
//! selections from the initial atoms), updating the flow guess either by
//! replacement (Picard) or by running averages (fictitious play, the robust
//! default for non-monotone couplings). [`verify_solution`] re-derives every
//! defining property and reports one residual per check; it never throws.

use crate::bellman::{bellman_b, optimal_selection};
use crate::dynamics::{verify_sol, time_grid, MixtureMesh, ModelSpec};
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::GridFunction;
use crate::measures::{
    action, project, DiscreteMeasure, ExtendedFlow, Flow, MeasureFlow, PathMeasure,
};
use crate::report::{all_pass, CheckResult};
use crate::torus::TorusLattice;
use crate::wasserstein::w1_distance;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Flow-update rule of the fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Picard,
    FictitiousPlay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Lattice points per axis.
    pub lattice_n: usize,
    /// Time steps on the horizon.
    pub steps: usize,
    /// Simplex-mesh subdivisions for the vectogram mixtures.
    pub mesh_subdiv: usize,
    pub method: Method,
    pub max_iter: usize,
    /// Flow fixed-point tolerance (sup-in-time W1).
    pub tol: f64,
}

/// Auxiliary grid resolution for compressing fictitious-play averages.
const FP_QUANTIZE: usize = 8192;
/// How often fictitious play tests the current best response for being a
/// pure fixed point.
const PICARD_PROBE_EVERY: usize = 10;
/// Window length after which the fictitious-play running average restarts.
const FP_RESTART_PERIOD: usize = 40;

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            lattice_n: 64,
            steps: 16,
            mesh_subdiv: 5,
            method: Method::FictitiousPlay,
            max_iter: 300,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    /// Final fixed-point residual `sup_t W1(best-response flow, guess)`.
    pub flow_residual: f64,
    pub history: Vec<f64>,
}

/// A solved (or best-effort) equilibrium with all of its witnesses.
#[derive(Debug, Clone)]
pub struct MFGSolution {
    pub model_name: String,
    pub cfg: SolveConfig,
    pub times: Vec<f64>,
    /// Value function per time-grid point, computed along `m_flow`.
    pub values: Vec<GridFunction>,
    /// Projected slice flow of `chi`.
    pub m_flow: MeasureFlow,
    /// Extended slice flow of `chi`.
    pub nu_flow: ExtendedFlow,
    pub chi: PathMeasure,
    pub report: SolveReport,
}

impl MFGSolution {
    /// Value function at the grid time nearest to `t`.
    pub fn value_at(&self, t: f64) -> &GridFunction {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, &tk) in self.times.iter().enumerate() {
            let d = (tk - t).abs();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        &self.values[best]
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t1(&self) -> f64 {
        *self.times.last().unwrap()
    }
}

/// Terminal payoff of the optimisation problem: the model's `sigma(., m(T))`
/// or a fixed function (used when generating game-dynamics steps).
#[derive(Debug, Clone)]
pub enum Terminal {
    ModelSigma,
    Fixed(GridFunction),
}

struct BestResponse {
    chi: PathMeasure,
    slices: Vec<DiscreteMeasure>,
}

fn terminal_grid(
    model: &ModelSpec,
    lattice: TorusLattice,
    terminal: &Terminal,
    m_last: &DiscreteMeasure,
) -> GridFunction {
    match terminal {
        Terminal::ModelSigma => model.terminal_grid(lattice, m_last),
        Terminal::Fixed(g) => g.clone(),
    }
}

fn best_response(
    model: &ModelSpec,
    times: &[f64],
    lattice: TorusLattice,
    mesh: &MixtureMesh,
    m0: &DiscreteMeasure,
    guess: &[DiscreteMeasure],
    terminal: &Terminal,
) -> Result<BestResponse> {
    let t0 = times[0];
    let t1 = *times.last().unwrap();
    let steps = times.len() - 1;
    let flow = Flow::new(times.to_vec(), guess.to_vec())?;
    let psi_t = terminal_grid(model, lattice, terminal, guess.last().unwrap());
    let sweep = bellman_b(model, t0, t1, &flow, &psi_t, steps, mesh)?;
    let selections = exec::par_map(m0.atoms(), |(y, w)| {
        optimal_selection(model, &sweep, &flow, y, mesh).map(|sel| (sel.states, *w))
    });
    let mut paths = Vec::with_capacity(selections.len());
    for s in selections {
        paths.push(s?);
    }
    let chi = PathMeasure::new(times.to_vec(), paths)?;
    let slices = (0..times.len()).map(|k| project(&chi.slice(k))).collect();
    Ok(BestResponse { chi, slices })
}

/// Solve the mean field game on `[t0, t1]` from the initial distribution
/// `m0`. A non-converged iteration still returns the best-effort solution,
/// flagged in its report.
pub fn solve_mfg(
    model: &ModelSpec,
    t0: f64,
    t1: f64,
    m0: &DiscreteMeasure,
    cfg: &SolveConfig,
) -> Result<MFGSolution> {
    solve_mfg_with_terminal(model, t0, t1, m0, cfg, &Terminal::ModelSigma)
}

/// [`solve_mfg`] with an arbitrary terminal payoff in place of the model's
/// `sigma`.
pub fn solve_mfg_with_terminal(
    model: &ModelSpec,
    t0: f64,
    t1: f64,
    m0: &DiscreteMeasure,
    cfg: &SolveConfig,
    terminal: &Terminal,
) -> Result<MFGSolution> {
    if t1 <= t0 {
        return Err(Error::invalid("empty horizon"));
    }
    if m0.dim() != model.dim() {
        return Err(Error::invalid("initial measure dimension mismatch"));
    }
    let lattice = TorusLattice::new(cfg.lattice_n, model.dim())?;
    let mesh = MixtureMesh::new(model.num_controls(), cfg.mesh_subdiv);
    let times = time_grid(t0, t1, cfg.steps);

    // seed the iteration with the best response to the constant-in-time guess
    let constant: Vec<DiscreteMeasure> = vec![m0.clone(); times.len()];
    let mut guess =
        best_response(model, &times, lattice, &mesh, m0, &constant, terminal)?.slices;

    let flow_gap = |a: &[DiscreteMeasure], b: &[DiscreteMeasure]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| w1_distance(x, y).unwrap_or(f64::INFINITY))
            .fold(0.0f64, f64::max)
    };

    let mut history = Vec::new();
    let mut converged = false;
    let mut last = None;
    let mut iterations = 0;
    let mut avg_age = 0usize;
    for n in 1..=cfg.max_iter {
        let br = best_response(model, &times, lattice, &mesh, m0, &guess, terminal)?;
        let residual = flow_gap(&br.slices, &guess);
        history.push(residual);
        iterations = n;
        let slices = br.slices.clone();
        last = Some(br);
        if residual < cfg.tol {
            converged = true;
            break;
        }
        if cfg.method == Method::FictitiousPlay && n % PICARD_PROBE_EVERY == 0 {
            // averaging often steers the best response onto a pure fixed
            // point long before the average itself converges; test for one
            let probe = best_response(model, &times, lattice, &mesh, m0, &slices, terminal)?;
            let probe_res = flow_gap(&probe.slices, &slices);
            if probe_res < cfg.tol {
                history.push(probe_res);
                last = Some(probe);
                converged = true;
                break;
            }
        }
        match cfg.method {
            Method::Picard => guess = slices,
            Method::FictitiousPlay => {
                // restart the running average periodically: the fresh window
                // forgets the cold-start transient, whose 1/n inertia is what
                // slows plain averaging down
                avg_age = if avg_age >= FP_RESTART_PERIOD { 1 } else { avg_age + 1 };
                let w_new = 1.0 / avg_age as f64;
                // quantize so the support stays bounded over long runs
                guess = guess
                    .iter()
                    .zip(&slices)
                    .map(|(old, new)| {
                        DiscreteMeasure::mix(&[(1.0 - w_new, old), (w_new, new)])
                            .map(|m| m.quantized(FP_QUANTIZE))
                    })
                    .collect::<Result<Vec<_>>>()?;
            }
        }
    }
    let br = last.expect("at least one iteration");
    let flow_residual = *history.last().unwrap();

    // assemble: flows from chi, value recomputed along the realised flow so
    // the Bellman-consistency check is exact by construction
    let chi = br.chi;
    let nu_flow = chi.flow();
    let m_flow = nu_flow.projected();
    let psi_t = terminal_grid(model, lattice, terminal, m_flow.slices().last().unwrap());
    let sweep = bellman_b(model, t0, t1, &m_flow, &psi_t, cfg.steps, &mesh)?;

    Ok(MFGSolution {
        model_name: model.name().to_string(),
        cfg: cfg.clone(),
        times,
        values: sweep.values().to_vec(),
        m_flow,
        nu_flow,
        chi,
        report: SolveReport {
            converged,
            iterations,
            flow_residual,
            history,
        },
    })
}

/// Residual report of [`verify_solution`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    /// Min and max over grid times of the optimality gap
    /// `[sigma(., m(T)), nu(T)] - [V(s, .), nu(s)]`.
    pub gap_min: f64,
    pub gap_max: f64,
    pub pass: bool,
}

/// Re-derive the defining properties of a solution: projection consistency,
/// Bellman consistency, the optimality gap, per-path value conservation and
/// feasibility of the path measure. Reports residuals, never throws.
pub fn verify_solution(model: &ModelSpec, sol: &MFGSolution, tol: f64) -> VerifyReport {
    verify_solution_with_terminal(model, sol, tol, &Terminal::ModelSigma)
}

/// [`verify_solution`] against an arbitrary terminal payoff.
pub fn verify_solution_with_terminal(
    model: &ModelSpec,
    sol: &MFGSolution,
    tol: f64,
    terminal: &Terminal,
) -> VerifyReport {
    let mut checks = Vec::new();

    // (1) projection consistency
    let proj_res = sol
        .nu_flow
        .slices()
        .iter()
        .zip(sol.m_flow.slices())
        .map(|(nu, m)| w1_distance(&project(nu), m).unwrap_or(f64::INFINITY))
        .fold(0.0f64, f64::max);
    checks.push(CheckResult::le("projection-consistency", proj_res, tol));

    // (2) Bellman consistency of the stored value slices
    let lattice = sol.values[0].lattice();
    let mesh = MixtureMesh::new(model.num_controls(), sol.cfg.mesh_subdiv);
    let sigma_grid = terminal_grid(model, lattice, terminal, sol.m_flow.slices().last().unwrap());
    let bellman_res = match bellman_b(
        model,
        sol.t0(),
        sol.t1(),
        &sol.m_flow,
        &sigma_grid,
        sol.times.len() - 1,
        &mesh,
    ) {
        Ok(sweep) => sweep
            .values()
            .iter()
            .zip(&sol.values)
            .map(|(a, b)| a.linf_diff(b))
            .fold(0.0f64, f64::max),
        Err(_) => f64::INFINITY,
    };
    checks.push(CheckResult::le("bellman-consistency", bellman_res, tol));

    // (3) optimality gap at every grid time
    let terminal_action = action(&sigma_grid, sol.nu_flow.slices().last().unwrap());
    let mut gap_min = f64::INFINITY;
    let mut gap_max = f64::NEG_INFINITY;
    for (v, nu) in sol.values.iter().zip(sol.nu_flow.slices()) {
        let gap = terminal_action - action(v, nu);
        gap_min = gap_min.min(gap);
        gap_max = gap_max.max(gap);
    }
    checks.push(CheckResult::ge("equilibrium-gap-lower", gap_min, -tol));

    // (4) per-path value conservation
    let conservation = sol
        .chi
        .paths()
        .iter()
        .map(|(states, _)| {
            let v0 = sol.values[0].eval(&states[0].x) + states[0].z;
            states
                .iter()
                .enumerate()
                .map(|(k, p)| (sol.values[k].eval(&p.x) + p.z - v0).abs())
                .fold(0.0f64, f64::max)
        })
        .fold(0.0f64, f64::max);
    checks.push(CheckResult::le("value-conservation", conservation, tol));

    // (5) feasibility of chi against its own flow; the honest bound adds the
    // flow fixed-point residual times L (paths were integrated against the
    // pre-polish guess) to the one-step Euler consistency terms
    let feas = verify_sol(model, &sol.chi, &sol.m_flow);
    let dt = sol.times[1] - sol.times[0];
    let feas_bound = model.alpha(dt)
        + model.lipschitz() * (model.speed_bound() * dt + sol.report.flow_residual)
        + 1e-9;
    checks.push(CheckResult::le("mfdi-feasibility", feas, feas_bound.max(tol)));

    let pass = all_pass(&checks);
    VerifyReport {
        checks,
        gap_min,
        gap_max,
        pass,
    }
}

// ---------------------------------------------------------------------------
// Directory serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SolutionMeta {
    model: String,
    cfg: SolveConfig,
    times: Vec<f64>,
    report: SolveReport,
}

impl MFGSolution {
    /// Write the solution as a directory: `solution.json` (metadata and
    /// residuals), `V_<k>.json` per time slice, `flow.json`, `paths.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = SolutionMeta {
            model: self.model_name.clone(),
            cfg: self.cfg.clone(),
            times: self.times.clone(),
            report: self.report.clone(),
        };
        write_json(&dir.join("solution.json"), &meta)?;
        for (k, v) in self.values.iter().enumerate() {
            write_json(&dir.join(format!("V_{k:03}.json")), v)?;
        }
        write_json(
            &dir.join("flow.json"),
            &serde_json::json!({ "m": self.m_flow, "nu": self.nu_flow }),
        )?;
        write_json(&dir.join("paths.json"), &self.chi)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<MFGSolution> {
        let meta: SolutionMeta = read_json(&dir.join("solution.json"))?;
        let mut values = Vec::with_capacity(meta.times.len());
        for k in 0..meta.times.len() {
            values.push(read_json(&dir.join(format!("V_{k:03}.json")))?);
        }
        let flows: serde_json::Value = read_json(&dir.join("flow.json"))?;
        let m_flow: MeasureFlow = serde_json::from_value(flows["m"].clone())?;
        let nu_flow: ExtendedFlow = serde_json::from_value(flows["nu"].clone())?;
        let chi: PathMeasure = read_json(&dir.join("paths.json"))?;
        Ok(MFGSolution {
            model_name: meta.model,
            cfg: meta.cfg,
            times: meta.times,
            values,
            m_flow,
            nu_flow,
            chi,
            report: meta.report,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ModelParams;
    use crate::torus::TorusPoint;
    use approx::assert_abs_diff_eq;

    fn pt(x: f64) -> TorusPoint {
        TorusPoint::wrap1(x)
    }

    fn spread_measure(n: usize) -> DiscreteMeasure {
        DiscreteMeasure::uniform((0..n).map(|i| pt(0.1 + 0.8 * i as f64 / n as f64)).collect())
            .unwrap()
    }

    #[test]
    fn zero_dynamics_is_exact() {
        let model = ModelSpec::preset("zero", &ModelParams::default()).unwrap();
        let m0 = spread_measure(16);
        let cfg = SolveConfig {
            lattice_n: 32,
            steps: 8,
            mesh_subdiv: 1,
            ..Default::default()
        };
        let sol = solve_mfg(&model, 0.0, 1.0, &m0, &cfg).unwrap();
        assert!(sol.report.converged);
        assert_eq!(sol.report.iterations, 1);
        // V(t, .) = sigma for every t, m(t) = m0
        let sigma = model.terminal_grid(sol.values[0].lattice(), &m0);
        for v in &sol.values {
            assert_abs_diff_eq!(v.linf_diff(&sigma), 0.0, epsilon = 1e-12);
        }
        for m in sol.m_flow.slices() {
            assert_abs_diff_eq!(
                crate::wasserstein::w1_distance(m, &m0).unwrap(),
                0.0,
                epsilon = 1e-12
            );
        }
        let report = verify_solution(&model, &sol, 1e-9);
        assert!(report.pass, "checks: {:?}", report.checks);
        assert!(report.gap_min >= -1e-12 && report.gap_max <= 1e-12);
    }

    #[test]
    fn decoupled_game_converges_immediately() {
        let params = ModelParams {
            controls: 3,
            amplitude: 0.5,
            ..Default::default()
        };
        let model = ModelSpec::preset("decoupled-1d", &params).unwrap();
        let m0 = spread_measure(24);
        let cfg = SolveConfig {
            lattice_n: 128,
            steps: 16,
            mesh_subdiv: 4,
            tol: 1e-9,
            ..Default::default()
        };
        let sol = solve_mfg(&model, 0.0, 0.5, &m0, &cfg).unwrap();
        assert!(sol.report.converged);
        assert_eq!(sol.report.iterations, 1);
        assert!(sol.report.flow_residual < 1e-12);
        let report = verify_solution(&model, &sol, 5e-3);
        assert!(report.pass, "checks: {:?}", report.checks);
    }

    #[test]
    fn corrupted_value_is_flagged() {
        let model = ModelSpec::preset("zero", &ModelParams::default()).unwrap();
        let m0 = spread_measure(8);
        let cfg = SolveConfig {
            lattice_n: 32,
            steps: 4,
            mesh_subdiv: 1,
            ..Default::default()
        };
        let mut sol = solve_mfg(&model, 0.0, 1.0, &m0, &cfg).unwrap();
        sol.values[1].values_mut()[5] += 0.1;
        let report = verify_solution(&model, &sol, 1e-6);
        let bell = report
            .checks
            .iter()
            .find(|c| c.name == "bellman-consistency")
            .unwrap();
        assert!(!bell.pass);
        assert_abs_diff_eq!(bell.residual, 0.1, epsilon = 1e-9);
    }

    #[test]
    fn crowd_aversion_reaches_equilibrium() {
        let params = ModelParams {
            controls: 3,
            coupling: 0.2,
            control_cost: 0.05,
            amplitude: 0.5,
            ..Default::default()
        };
        let model = ModelSpec::preset("crowd-aversion-1d", &params).unwrap();
        let m0 = spread_measure(192);
        let cfg = SolveConfig {
            lattice_n: 64,
            steps: 16,
            mesh_subdiv: 4,
            method: Method::FictitiousPlay,
            max_iter: 300,
            tol: 1e-3,
        };
        let sol = solve_mfg(&model, 0.0, 0.5, &m0, &cfg).unwrap();
        assert!(
            sol.report.converged,
            "history: {:?}",
            &sol.report.history[sol.report.history.len().saturating_sub(5)..]
        );
        let report = verify_solution(&model, &sol, 1e-3);
        assert!(report.pass, "checks: {:?}", report.checks);
        assert!(report.gap_min >= -1e-3 && report.gap_max <= 1e-3);
    }

    #[test]
    fn save_load_round_trip() {
        let model = ModelSpec::preset("zero", &ModelParams::default()).unwrap();
        let m0 = spread_measure(4);
        let cfg = SolveConfig {
            lattice_n: 16,
            steps: 4,
            mesh_subdiv: 1,
            ..Default::default()
        };
        let sol = solve_mfg(&model, 0.0, 1.0, &m0, &cfg).unwrap();
        let dir = std::env::temp_dir().join(format!("mfg-sol-{}", std::process::id()));
        sol.save(&dir).unwrap();
        let back = MFGSolution::load(&dir).unwrap();
        assert_eq!(back.times, sol.times);
        assert_eq!(back.values.len(), sol.values.len());
        assert_abs_diff_eq!(back.values[0].linf_diff(&sol.values[0]), 0.0);
        assert_eq!(back.chi.paths().len(), sol.chi.paths().len());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
