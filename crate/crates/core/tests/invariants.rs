use drmtl::adaptive::AdaptiveSetup;
use drmtl::experiments::{hit_ratio, place_mpc, place_random, zipf_preference, Request, RequestLog};
use drmtl::mobility::{
    enumerate_paths, forecast, random_ground_truth, residence_times, MobilityState, SojournPmf,
};
use drmtl::model::{least_square_loss, make_synthetic_dataset, LocalObjective, RegularizationParams};
use drmtl::oracle::solve_kkt_direct;
use drmtl::solver::{run_admm, Initialization, Problem, SolverParams};
use drmtl::topology::{build_constraint, grid_graph, random_connected_graph};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph_shape() -> impl Strategy<Value = (usize, usize, u64)> {
    (2usize..9, any::<u64>()).prop_flat_map(|(n, seed)| (Just(n), (n - 1)..=(n * (n - 1) / 2), Just(seed)))
}

fn random_blocks(count: usize, rows: usize, cols: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0)))
        .collect()
}

fn request_log(agents: usize, files: usize, count: usize, seed: u64) -> RequestLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RequestLog {
        start: 0.0,
        end: 1.0,
        requests: (0..count)
            .map(|k| Request {
                time: k as f64 / count as f64,
                mt: 0,
                agent: rng.gen_range(0..agents),
                file: rng.gen_range(0..files),
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_graphs_are_connected_with_requested_size((n, m, seed) in graph_shape()) {
        let g = random_connected_graph(n, m, seed).unwrap();
        prop_assert!(g.is_connected());
        prop_assert_eq!(g.edge_count(), m);
        prop_assert_eq!(g.degrees().iter().sum::<usize>(), 2 * m);
    }

    #[test]
    fn laplacian_matches_degree_form((n, m, seed) in graph_shape(), rows in 1usize..4, cols in 1usize..3) {
        let g = random_connected_graph(n, m, seed).unwrap();
        let a = build_constraint(&g, (rows, cols)).unwrap();
        let w = random_blocks(n, rows, cols, seed ^ 1);
        let lw = a.laplacian_apply(&w).unwrap();
        for i in 0..n {
            let mut expect = &w[i] * g.degree(i) as f64;
            for &j in g.neighbors(i) {
                expect -= &w[j];
            }
            prop_assert!((&lw[i] - expect).amax() < 1e-12);
        }
        let quad: f64 = w.iter().zip(&lw).map(|(x, y)| x.dot(y)).sum();
        let res = a.residual_norm(&w).unwrap();
        prop_assert!((quad - res * res).abs() < 1e-9 * (1.0 + quad.abs()));
        let constant = vec![w[0].clone(); n];
        prop_assert!(a.residual_norm(&constant).unwrap() < 1e-12);
    }

    #[test]
    fn random_adaptive_design_is_valid((n, m, seed) in graph_shape()) {
        let g = random_connected_graph(n, m, seed).unwrap();
        let data: Vec<_> = (0..n).map(|i| make_synthetic_dataset(3, 1, 5, seed.wrapping_add(i as u64))).collect();
        let setup = AdaptiveSetup::random(&data, &g, 1.0, seed).unwrap();
        prop_assert!(setup.weights.partition_error() <= 1e-12);
        for i in 0..n {
            let row = setup.combiners.c.row(i);
            prop_assert!(row.iter().all(|&c| c >= 0.0 && c <= 1.0 / g.degree(i) as f64));
            prop_assert!(row.sum() <= 1.0);
            for j in 0..n {
                if !g.has_edge(i, j) {
                    prop_assert_eq!(setup.combiners.c[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn zipf_profiles_are_distributions(files in 1usize..40, iota in 0.0f64..2.5, seed in any::<u64>()) {
        let p = zipf_preference(files, iota, seed).unwrap();
        prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for w in p.permutation.windows(2) {
            prop_assert!(p.probs[w[0]] >= p.probs[w[1]]);
        }
        let mut sorted = p.permutation.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..files).collect::<Vec<_>>());
    }

    #[test]
    fn mpc_hit_ratio_grows_with_cache_size(agents in 1usize..6, files in 2usize..25, seed in any::<u64>()) {
        let log = request_log(agents, files, 200, seed);
        let prefs = random_blocks(agents, files, 1, seed ^ 7)
            .into_iter()
            .map(|m| m.iter().map(|v| v.abs()).collect::<Vec<f64>>())
            .collect::<Vec<_>>();
        let mut prev = 0.0;
        for theta in 0..=files {
            let (_, h) = hit_ratio(&place_mpc(&prefs, theta), &log);
            prop_assert!(h >= prev);
            prev = h;
        }
        prop_assert_eq!(prev, 1.0);
        prop_assert_eq!(hit_ratio(&place_random(agents, files, files, seed), &log).1, 1.0);
    }

    #[test]
    fn one_hop_paths_normalize(s in 1usize..4, mts in 1usize..6, seed in any::<u64>(), t_d in 1.0f64..60.0) {
        let g = grid_graph(s).unwrap();
        let model = random_ground_truth(&g, mts, 120, seed).unwrap();
        prop_assert!(model.validate(&g, 1e-12).is_ok());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states: Vec<_> = (0..mts)
            .map(|_| MobilityState { agent: rng.gen_range(0..g.agent_count()), elapsed: rng.gen_range(0.0..50.0) })
            .collect();
        let f = forecast(&model, &states, &g, t_d, false).unwrap();
        for (m, e) in f.entries.iter().enumerate() {
            let mass: f64 = e.paths.iter().map(|p| p.prob).sum();
            prop_assert!((mass - 1.0).abs() < 1e-12);
            prop_assert!(e.total_residence() <= t_d + 1e-9);
            let row = model.transition_row(m, e.state);
            prop_assert_eq!(&e.paths, &enumerate_paths(e.state, e.t1, row, &g, t_d));
            prop_assert_eq!(&e.residence, &residence_times(e.state, e.t1, row, &g, t_d));
        }
    }

    #[test]
    fn sojourn_samples_stay_in_support(t_max in 1usize..50, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs: Vec<f64> = (0..t_max).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = probs.iter().sum();
        let pmf = SojournPmf::new(probs.iter().map(|p| p / total).collect()).unwrap();
        for _ in 0..50 {
            let x = pmf.sample(&mut rng);
            prop_assert!((1..=t_max).contains(&x));
        }
        prop_assert!(pmf.mean() >= 1.0 && pmf.mean() <= t_max as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn admm_reaches_the_centralized_solution((n, m, seed) in graph_shape(), mu in 0.5f64..2.0) {
        let g = random_connected_graph(n, m, seed).unwrap();
        let objectives = (0..n)
            .map(|i| LocalObjective::plain(least_square_loss(&make_synthetic_dataset(3, 1, 6, seed.wrapping_add(i as u64)), None).unwrap()))
            .collect();
        let reg = RegularizationParams::new(mu, mu, 1.0, 1.0).unwrap();
        let p = Problem::new(g, objectives, reg).unwrap();
        let reference = solve_kkt_direct(&p).unwrap();
        let params = SolverParams::uniform(n, 1.0, 1.0, 2.0 * n as f64, 2.0, 4000);
        let (it, _) = run_admm(&p, &params, Initialization::Random(seed), None).unwrap();
        for i in 0..n {
            prop_assert!((&it.check[i] - &reference.check[i]).amax() < 1e-6);
            prop_assert!((&it.hat[i] - &reference.hat[i]).amax() < 1e-6);
        }
    }
}
