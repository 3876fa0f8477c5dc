//! The set-valued game dynamics on (measure, payoff) pairs.
//!
//! A [`PsiStep`] witnesses one forward transition `(m, phi) -> (mu, psi)` on
//! `[s, r]`: a feasible extended flow whose projection starts at `m` and
//! ends at `mu`, with `phi` the Bellman value of `psi` along the flow and
//! the action pairing non-decreasing. [`psi_check`] measures all four
//! defining residuals; [`psi_generate`] searches for witnesses by solving
//! the sub-game with each candidate terminal payoff; [`psi_compose`] glues
//! compatible steps (re-anchoring the reward coordinate at the junction) so
//! the semigroup property can be exercised in both directions together with
//! [`split_step`].

use crate::bellman::bellman_b;
use crate::dynamics::{verify_sol, MixtureMesh, ModelSpec};
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::GridFunction;
use crate::measures::{
    action, concat_path_measures, project, reanchor_flow, DiscreteMeasure, ExtendedFlow,
    PathMeasure,
};
use crate::mfg::{solve_mfg_with_terminal, MFGSolution, SolveConfig, Terminal};
use crate::report::{all_pass, CheckResult};
use crate::wasserstein::w1_distance;

/// Witness of one game-dynamics transition `(mu, psi) in Psi^{r,s}(m, phi)`.
#[derive(Debug, Clone)]
pub struct PsiStep {
    pub s: f64,
    pub r: f64,
    pub m: DiscreteMeasure,
    pub mu: DiscreteMeasure,
    pub phi: GridFunction,
    pub psi: GridFunction,
    pub nu_flow: ExtendedFlow,
    pub chi: PathMeasure,
    /// Mixture-mesh subdivisions used when re-deriving Bellman values.
    pub mesh_subdiv: usize,
}

#[derive(Debug, Clone)]
pub struct PsiReport {
    pub checks: Vec<CheckResult>,
    /// Signed action gap `[psi, nu(r)] - [phi, nu(s)]`.
    pub action_gap: f64,
    pub pass: bool,
}

/// Measure the four defining residuals of a step: feasibility of the path
/// measure, both endpoint matches, Bellman consistency of `phi`, and the
/// (signed, one-sided) action inequality.
pub fn psi_check(model: &ModelSpec, step: &PsiStep, tol: f64) -> PsiReport {
    let mut checks = Vec::new();
    let m_flow = step.nu_flow.projected();

    let feas = verify_sol(model, &step.chi, &m_flow);
    let dt = step.chi.times()[1] - step.chi.times()[0];
    let feas_bound =
        model.alpha(dt) + model.lipschitz() * (model.speed_bound() * dt + tol) + 1e-9;
    checks.push(CheckResult::le("mfdi-feasibility", feas, feas_bound.max(tol)));

    let init = w1_distance(&project(step.nu_flow.slices().first().unwrap()), &step.m)
        .unwrap_or(f64::INFINITY);
    let term = w1_distance(&project(step.nu_flow.slices().last().unwrap()), &step.mu)
        .unwrap_or(f64::INFINITY);
    checks.push(CheckResult::le("psi1-initial-measure", init, tol));
    checks.push(CheckResult::le("psi1-terminal-measure", term, tol));

    let mesh = MixtureMesh::new(model.num_controls(), step.mesh_subdiv);
    let steps = step.chi.times().len() - 1;
    let bell = match bellman_b(model, step.s, step.r, &m_flow, &step.psi, steps, &mesh) {
        Ok(sweep) => sweep.initial().linf_diff(&step.phi),
        Err(_) => f64::INFINITY,
    };
    checks.push(CheckResult::le("psi2-bellman", bell, tol));

    let action_gap = action(&step.psi, step.nu_flow.slices().last().unwrap())
        - action(&step.phi, step.nu_flow.slices().first().unwrap());
    checks.push(CheckResult::ge("psi3-action", action_gap, -tol));

    let pass = all_pass(&checks);
    PsiReport {
        checks,
        action_gap,
        pass,
    }
}

/// Extract the step witnessed by an equilibrium between two of its grid
/// times (`phi = V(t_{i0})`, `psi = V(t_{i1})`, flow and paths restricted).
pub fn step_from_solution(sol: &MFGSolution, i0: usize, i1: usize) -> Result<PsiStep> {
    if i0 >= i1 || i1 >= sol.times.len() {
        return Err(Error::invalid("bad restriction indices"));
    }
    let chi = sol.chi.restrict(i0, i1)?;
    let nu_flow = chi.flow();
    Ok(PsiStep {
        s: sol.times[i0],
        r: sol.times[i1],
        m: sol.m_flow.slices()[i0].clone(),
        mu: sol.m_flow.slices()[i1].clone(),
        phi: sol.values[i0].clone(),
        psi: sol.values[i1].clone(),
        nu_flow,
        chi,
        mesh_subdiv: sol.cfg.mesh_subdiv,
    })
}

/// Search for steps out of `(m, phi)` over `[s, r]`: solve the sub-game
/// with every candidate terminal payoff and keep the witnesses that satisfy
/// the Bellman match and the action inequality. An empty result is a valid
/// outcome (no witness at this tolerance), not an error.
pub fn psi_generate(
    model: &ModelSpec,
    s: f64,
    r: f64,
    m: &DiscreteMeasure,
    phi: &GridFunction,
    candidates: &[GridFunction],
    cfg: &SolveConfig,
    tol: f64,
) -> Result<Vec<PsiStep>> {
    let sols = exec::par_map(candidates, |psi| {
        solve_mfg_with_terminal(model, s, r, m, cfg, &Terminal::Fixed(psi.clone()))
            .map(|sol| (psi.clone(), sol))
    });
    let mut steps = Vec::new();
    for item in sols {
        let (psi, sol) = item?;
        let step = PsiStep {
            s,
            r,
            m: m.clone(),
            mu: sol.m_flow.slices().last().unwrap().clone(),
            phi: phi.clone(),
            psi,
            nu_flow: sol.nu_flow.clone(),
            chi: sol.chi.clone(),
            mesh_subdiv: cfg.mesh_subdiv,
        };
        let bell = sol.values[0].linf_diff(phi);
        if bell > tol {
            continue;
        }
        if psi_check(model, &step, tol).pass {
            steps.push(step);
        }
    }
    Ok(steps)
}

/// Compose two steps sharing the junction interface (`a.mu = b.m`,
/// `a.psi = b.phi` within `tol`): re-anchor the right path measure at the
/// left one's terminal slice and concatenate.
pub fn psi_compose(model: &ModelSpec, a: &PsiStep, b: &PsiStep, tol: f64) -> Result<PsiStep> {
    if (a.r - b.s).abs() > 1e-9 {
        return Err(Error::precondition("steps do not abut in time"));
    }
    let dm = w1_distance(&a.mu, &b.m)?;
    if dm > tol {
        return Err(Error::precondition(format!(
            "interface measures differ by {dm:.3e}"
        )));
    }
    let dphi = a.psi.linf_diff(&b.phi);
    if dphi > tol {
        return Err(Error::precondition(format!(
            "interface payoffs differ by {dphi:.3e}"
        )));
    }
    let junction = a.nu_flow.slices().last().unwrap();
    let re_b = reanchor_flow(&b.chi, junction)?;
    let chi = concat_path_measures(&a.chi, &re_b)?;
    let nu_flow = chi.flow();
    let _ = model;
    Ok(PsiStep {
        s: a.s,
        r: b.r,
        m: a.m.clone(),
        mu: b.mu.clone(),
        phi: a.phi.clone(),
        psi: b.psi.clone(),
        nu_flow,
        chi,
        mesh_subdiv: a.mesh_subdiv.max(b.mesh_subdiv),
    })
}

/// Split a step at an interior grid index of its path measure: the interface
/// payoff is the Bellman value of `psi` from the midpoint, per dynamic
/// programming.
pub fn split_step(model: &ModelSpec, step: &PsiStep, mid: usize) -> Result<(PsiStep, PsiStep)> {
    let times = step.chi.times();
    if mid == 0 || mid + 1 >= times.len() {
        return Err(Error::invalid("split index must be interior"));
    }
    let t_mid = times[mid];
    let m_flow = step.nu_flow.projected();
    let mesh = MixtureMesh::new(model.num_controls(), step.mesh_subdiv);
    let sweep = bellman_b(
        model,
        step.s,
        step.r,
        &m_flow,
        &step.psi,
        times.len() - 1,
        &mesh,
    )?;
    let phi_mid = sweep.at(t_mid)?.clone();
    let m_mid = project(&step.chi.slice(mid));

    let chi_l = step.chi.restrict(0, mid)?;
    let chi_r = step.chi.restrict(mid, times.len() - 1)?;
    let left = PsiStep {
        s: step.s,
        r: t_mid,
        m: step.m.clone(),
        mu: m_mid.clone(),
        phi: step.phi.clone(),
        psi: phi_mid.clone(),
        nu_flow: chi_l.flow(),
        chi: chi_l,
        mesh_subdiv: step.mesh_subdiv,
    };
    let right = PsiStep {
        s: t_mid,
        r: step.r,
        m: m_mid,
        mu: step.mu.clone(),
        phi: phi_mid,
        psi: step.psi.clone(),
        nu_flow: chi_r.flow(),
        chi: chi_r,
        mesh_subdiv: step.mesh_subdiv,
    };
    Ok((left, right))
}
