use modalreg::mode::{argmin_sparsity, sparsity_curve, BandwidthChoice};
use modalreg::qr::{check_loss, objective, solve_path_with, uniform_grid, PathOptions};
use modalreg::simlab::{sample_dgp, DgpKind, DgpSpec};
use modalreg::{estimate_mode, solve_path, solve_qr, Dataset, DesignPoint, ModeConfig, QuantileProcess};
use proptest::prelude::*;

fn dataset(y: Vec<f64>, x2: Vec<f64>) -> Option<Dataset> {
    let rows = x2.iter().map(|&x| vec![1.0, x]).collect();
    Dataset::new(y, rows, vec!["const".into(), "x2".into()]).ok()
}

/// Smallest check loss over lines through two observations.
fn brute_force(data: &Dataset, tau: f64) -> f64 {
    let n = data.n();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (data.row(i)[1], data.row(j)[1]);
            if (a - b).abs() < 1e-12 {
                continue;
            }
            let slope = (data.y()[i] - data.y()[j]) / (a - b);
            let beta = [data.y()[i] - slope * a, slope];
            best = best.min(objective(data, tau, &beta));
        }
    }
    best
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..=9).prop_flat_map(|n| {
        (
            prop::collection::vec(-5i32..=5, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            prop::collection::vec(-3.0f64..3.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn solver_matches_exact_fit_enumeration((y, x2) in instance(), tau in 0.03f64..0.97) {
        let Some(data) = dataset(y, x2) else { return Ok(()) };
        let Ok(fit) = solve_qr(&data, tau) else { return Ok(()) };
        let best = brute_force(&data, tau);
        prop_assert!(fit.objective <= best + 1e-8 * (1.0 + best.abs()), "{} vs {}", fit.objective, best);
        prop_assert!((fit.objective - objective(&data, tau, &fit.beta)).abs() < 1e-9 * (1.0 + best.abs()));
    }

    #[test]
    fn check_loss_is_nonnegative_and_homogeneous(tau in 0.01f64..0.99, u in -50.0f64..50.0, c in 0.1f64..10.0) {
        prop_assert!(check_loss(tau, u) >= 0.0);
        prop_assert!((check_loss(tau, c * u) - c * check_loss(tau, u)).abs() < 1e-9 * (1.0 + u.abs() * c));
    }

    #[test]
    fn warm_and_cold_paths_agree((y, x2) in instance()) {
        let Some(data) = dataset(y, x2) else { return Ok(()) };
        let taus = uniform_grid(0.1, 0.9, 9);
        let (Ok(warm), Ok(cold)) = (
            solve_path_with(&data, &taus, PathOptions { warm_start: true }),
            solve_path_with(&data, &taus, PathOptions { warm_start: false }),
        ) else { return Ok(()) };
        for (a, b) in warm.fits().iter().zip(cold.fits()) {
            prop_assert!((a.objective - b.objective).abs() < 1e-8 * (1.0 + a.objective.abs()));
        }
    }

    #[test]
    fn sparsity_of_linear_process_is_its_slope(slope in 0.1f64..20.0, intercept in -5.0f64..5.0, h in 0.02f64..0.3) {
        let taus = uniform_grid(0.05, 0.95, 91);
        let betas = taus.iter().map(|&t| vec![intercept + slope * t]).collect();
        let process = QuantileProcess::from_parts(taus, betas).unwrap();
        let x = DesignPoint::new(vec![1.0]).unwrap();
        let curve = sparsity_curve(&process, &x, h, 0.1).unwrap();
        for &v in &curve.values {
            prop_assert!((v - slope).abs() < 1e-9 * slope.max(1.0));
        }
        let (_, tau, _) = argmin_sparsity(&curve);
        prop_assert!((0.1 - 1e-9..=0.9 + 1e-9).contains(&tau), "{}", tau);
    }

    #[test]
    fn mode_is_equivariant(seed in 0u64..1000, a in 0.2f64..5.0, b0 in -3.0f64..3.0, b1 in -3.0f64..3.0) {
        let data = sample_dgp(&DgpSpec { kind: DgpKind::Case2, n: 150, seed }).unwrap();
        let x = DesignPoint::new(vec![1.0, 0.4]).unwrap();
        let config = ModeConfig { bandwidth: BandwidthChoice::Fixed(0.15), ..ModeConfig::default() };
        let base = estimate_mode(&data, &x, &config).unwrap();
        let y = data.y().iter().zip(data.rows()).map(|(&y, r)| a * y + b0 * r[0] + b1 * r[1]).collect();
        let moved = estimate_mode(&data.with_response(y).unwrap(), &x, &config).unwrap();
        let expect = a * base.mode + b0 + 0.4 * b1;
        prop_assert!((moved.mode - expect).abs() < 1e-7 * (1.0 + expect.abs()), "{} vs {}", moved.mode, expect);
        prop_assert_eq!(moved.tau_hat, base.tau_hat);
    }
}

#[test]
fn path_is_monotone_in_tau_at_the_centre_of_the_design() {
    let data = sample_dgp(&DgpSpec {
        kind: DgpKind::Case2,
        n: 800,
        seed: 3,
    })
    .unwrap();
    let process = solve_path(&data, &uniform_grid(0.05, 0.95, 100)).unwrap();
    let q = process.curve(&DesignPoint::new(vec![1.0, 0.5]).unwrap()).unwrap();
    assert!(q.windows(2).all(|w| w[1] >= w[0] - 1e-12));
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let data = sample_dgp(&DgpSpec {
        kind: DgpKind::Case1,
        n: 300,
        seed: 8,
    })
    .unwrap();
    let x = DesignPoint::new(vec![1.0, 0.5, 0.5, 0.0]).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_mode(&data, &x, &ModeConfig::default()).unwrap())
    };
    assert_eq!(run(1), run(3));
}
