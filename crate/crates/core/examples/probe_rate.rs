use mfg_core::bellman::{bellman_b, frozen_a};
use mfg_core::checks::{crowd_model, spread_measure};
use mfg_core::dynamics::{mfdi_solve, MixtureMesh, RelaxedControl};
use mfg_core::grid::GridFunction;
use mfg_core::measures::lift;
use mfg_core::torus::TorusLattice;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn main() {
    let model = crowd_model();
    let mesh = MixtureMesh::new(model.num_controls(), 4);
    for n in [128usize, 256] {
        let lat = TorusLattice::new(n, 1).unwrap();
        let psi = GridFunction::from_fn(lat, |p| 0.5 * (TWO_PI * p.coords()[0]).cos());
        let m_star = spread_measure(24);
        let nu0 = lift(&m_star);
        for steps in [8usize, 16] {
            print!("n={n} steps={steps}: ");
            for &h in &[0.4, 0.3, 0.2, 0.15, 0.1, 0.05, 0.025] {
                let controls = vec![RelaxedControl::uniform(model.num_controls(), steps); m_star.len()];
                let sol = mfdi_solve(&model, 0.0, h, &nu0, &controls, steps, 40, 1e-6).unwrap();
                let flow = sol.chi.flow().projected();
                let b = bellman_b(&model, 0.0, h, &flow, &psi, steps, &mesh).unwrap();
                let a = frozen_a(&model, 0.0, h, &m_star, &psi, &mesh).unwrap();
                print!("{:.3e} ", a.linf_diff(b.initial()));
            }
            println!();
        }
    }
}
