use mfg_core::bellman::bellman_b;
use mfg_core::dynamics::{time_grid, MixtureMesh, ModelParams, ModelSpec};
use mfg_core::grid::GridFunction;
use mfg_core::measures::{DiscreteMeasure, Flow};
use mfg_core::torus::{TorusLattice, TorusPoint};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn hopf_lax(horizon: f64, x: f64) -> f64 {
    let steps = 20000;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=steps {
        let a = -horizon + 2.0 * horizon * i as f64 / steps as f64;
        best = best.max((TWO_PI * (x + a)).cos());
    }
    best
}

fn main() {
    let params = ModelParams { controls: 2, ..Default::default() };
    let model = ModelSpec::preset("decoupled-1d", &params).unwrap();
    let horizon = 0.25;
    let kappa = TWO_PI; // Lipschitz constant of cos(2 pi x)
    for (n, steps) in [(32usize, 12usize), (64, 24), (128, 48), (256, 96), (64, 16), (128, 16), (128, 64)] {
        let lat = TorusLattice::new(n, 1).unwrap();
        let psi = GridFunction::from_fn(lat, |p| (TWO_PI * p.coords()[0]).cos());
        let mesh = MixtureMesh::new(2, 4);
        let flow = Flow::constant(time_grid(0.0, horizon, steps), DiscreteMeasure::dirac(TorusPoint::wrap1(0.5))).unwrap();
        let sweep = bellman_b(&model, 0.0, horizon, &flow, &psi, steps, &mesh).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..lat.len() {
            let x = lat.node(i).coords()[0];
            worst = worst.max((sweep.initial().values()[i] - hopf_lax(horizon, x)).abs());
        }
        let h = 1.0 / n as f64;
        let dt = horizon / steps as f64;
        println!("n={n} steps={steps}: err={:.4e}  (K+1)(h+dt)={:.4e}  C={:.4}", worst, (kappa+1.0)*(h+dt), worst/((kappa+1.0)*(h+dt)));
    }
}
