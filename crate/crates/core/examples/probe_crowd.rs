use mfg_core::dynamics::{ModelParams, ModelSpec};
use mfg_core::measures::DiscreteMeasure;
use mfg_core::mfg::{solve_mfg, verify_solution, Method, SolveConfig};
use mfg_core::torus::TorusPoint;

fn main() {
    for (coupling, ccost, atoms, max_iter) in [
        (0.2f64, 0.05f64, 128usize, 600usize),
        (0.2, 0.05, 192, 600),
        (0.3, 0.05, 128, 600),
    ] {
        let params = ModelParams {
            controls: 3,
            coupling,
            control_cost: ccost,
            amplitude: 0.5,
            ..Default::default()
        };
        let model = ModelSpec::preset("crowd-aversion-1d", &params).unwrap();
        let m0 = DiscreteMeasure::uniform(
            (0..atoms)
                .map(|i| TorusPoint::wrap1(0.1 + 0.8 * i as f64 / atoms as f64))
                .collect(),
        )
        .unwrap();
        let cfg = SolveConfig {
            lattice_n: 64,
            steps: 16,
            mesh_subdiv: 4,
            method: Method::FictitiousPlay,
            max_iter,
            tol: 1e-3,
        };
        let t = std::time::Instant::now();
        let sol = solve_mfg(&model, 0.0, 0.5, &m0, &cfg).unwrap();
        let tail: Vec<f64> = sol.report.history.iter().rev().take(3).cloned().collect();
        let rep = verify_solution(&model, &sol, 1e-3);
        println!(
            "coupling={coupling} ccost={ccost} atoms={atoms}: converged={} iters={} residual={:.2e} tail={:?} gaps=[{:.2e},{:.2e}] pass={} ({:?})",
            sol.report.converged, sol.report.iterations, sol.report.flow_residual, tail,
            rep.gap_min, rep.gap_max, rep.pass, t.elapsed()
        );
        for c in &rep.checks {
            if !c.pass {
                println!("    FAIL {}: residual={:.3e} bound={:.3e}", c.name, c.residual, c.bound);
            }
        }
    }
}
