use ldct_core::ct::{fbp, FanBeamGeometry, FbpFilter, LinearFidelity, Projector};
use ldct_core::diagnostics::trace_checks;
use ldct_core::features::FilterBank;
use ldct_core::regularizers::{GraphMode, Regularizer, RegularizerConfig};
use ldct_core::sim::{psnr, scaled_phantom, simulate_noisy_sinogram, ssim, DoseModel, SsimParams};
use ldct_core::solver::{run, Method, SolverConfig};
use ldct_core::{Image, Sinogram};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn geometry(n: usize, views: usize) -> FanBeamGeometry {
    FanBeamGeometry::desk().with_image_size(n).with_views(views)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn projector_pair_is_adjoint(n in 6usize..24, views in 8usize..90, seed in any::<u64>()) {
        let geo = geometry(n, views);
        let proj = Projector::new(geo.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Image::new(n, n, geo.pixel_size(), (0..n * n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let ax = proj.forward(&x).unwrap();
        let y = Sinogram::new(ax.n_views(), ax.n_detectors(), (0..ax.values().len()).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let aty = proj.back(&y).unwrap();
        let gap = (dot(ax.values(), y.values()) - dot(x.values(), aty.values())).abs();
        let scale = dot(ax.values(), ax.values()).sqrt() * dot(y.values(), y.values()).sqrt();
        prop_assert!(gap <= 1e-10 * scale, "gap {gap} scale {scale}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn solver_runs_keep_every_trace_invariant(
        seed in any::<u64>(),
        lambda in 0.0f64..1.0,
        random_bank in any::<bool>(),
        exact_graph in any::<bool>(),
        elda in any::<bool>(),
        dose in 1e4f64..1e6,
    ) {
        let n = 16;
        let geo = geometry(n, 60);
        let proj = Projector::new(geo.clone()).unwrap();
        let truth = scaled_phantom(n, geo.pixel_size(), 0.02).unwrap();
        let noisy = simulate_noisy_sinogram(&proj.forward(&truth).unwrap(), &DoseModel::new(dose, 10.0, seed).unwrap()).unwrap();
        let x0 = fbp(&noisy, &geo, FbpFilter::RamLak).unwrap();
        let bank = if random_bank { FilterBank::seeded_random(seed, 2, 4) } else { FilterBank::tv(0.5) };
        let cfg = RegularizerConfig {
            lambda,
            graph_mode: if exact_graph { GraphMode::Exact } else { GraphMode::Frozen },
            ..Default::default()
        };
        let reg = Regularizer::new(bank, cfg, &x0).unwrap();
        let fid = LinearFidelity::new(proj, noisy).unwrap();
        let solver = SolverConfig { max_iters: 20, ..Default::default() };
        let method = if elda { Method::Elda } else { Method::PlainGd };
        let out = run(x0.values(), &fid, &reg, &solver, method).unwrap();
        for check in trace_checks("run", &out.trace) {
            prop_assert!(check.passed, "{check}");
        }
        let first = &out.trace.records[0];
        prop_assert!(out.trace.final_phi <= first.phi);
        prop_assert!(out.trace.final_eps <= solver.eps0);
    }
}

#[test]
fn simulation_is_reproducible_per_seed() {
    let geo = geometry(24, 60);
    let proj = Projector::new(geo.clone()).unwrap();
    let clean = proj.forward(&scaled_phantom(24, geo.pixel_size(), 0.02).unwrap()).unwrap();
    let a = simulate_noisy_sinogram(&clean, &DoseModel::new(1e5, 10.0, 3).unwrap()).unwrap();
    let b = simulate_noisy_sinogram(&clean, &DoseModel::new(1e5, 10.0, 3).unwrap()).unwrap();
    let c = simulate_noisy_sinogram(&clean, &DoseModel::new(1e5, 10.0, 4).unwrap()).unwrap();
    assert_eq!(a.values(), b.values());
    assert_ne!(a.values(), c.values());
}

#[test]
fn fbp_improves_with_dose() {
    let geo = FanBeamGeometry::desk().with_image_size(32);
    let proj = Projector::new(geo.clone()).unwrap();
    let truth = scaled_phantom(32, geo.pixel_size(), 0.02).unwrap();
    let clean = proj.forward(&truth).unwrap();
    let quality = |i0: f64| {
        let noisy = simulate_noisy_sinogram(&clean, &DoseModel::new(i0, 10.0, 1).unwrap()).unwrap();
        let x = fbp(&noisy, &geo, FbpFilter::RamLak).unwrap();
        (psnr(&x, &truth, None).unwrap(), ssim(&x, &truth, &SsimParams::default()).unwrap())
    };
    let (low_p, low_s) = quality(1e4);
    let (high_p, high_s) = quality(1e7);
    assert!(high_p > low_p + 1.0, "{high_p} vs {low_p}");
    assert!(high_s > low_s);
}
