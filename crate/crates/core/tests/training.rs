//! Statistical and determinism checks on exploration and training.

use conman_core::dqn::{choose_action, legal_actions, train, EpisodeState, TrainConfig};
use conman_core::gnn::GnnParams;
use conman_core::metrics::{reward_throughput, sum_throughput};
use conman_core::net_model::{generate_deployment, RadioConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0;
        for k in i..=j {
            r[idx[k]] = mid;
        }
        i = j + 1;
    }
    r
}

/// Spearman's rho of `v` against its index, with the one-sided p-value for rho > 0.
fn spearman_trend(v: &[f64]) -> (f64, f64) {
    let x: Vec<f64> = (0..v.len()).map(|i| i as f64).collect();
    let (rx, ry) = (ranks(&x), ranks(v));
    let n = v.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    let rho = cov / (vx * vy).sqrt();
    let t = rho * ((n - 2.0) / (1.0 - rho * rho)).sqrt();
    let p = 1.0 - StudentsT::new(0.0, 1.0, n - 2.0).unwrap().cdf(t);
    (rho, p)
}

#[test]
fn spearman_helper_on_known_sequences() {
    let (rho, p) = spearman_trend(&[1.0, 2.0, 2.5, 4.0, 8.0, 9.0]);
    assert!((rho - 1.0).abs() < 1e-12);
    assert!(p < 1e-6);
    let (rho, _) = spearman_trend(&[3.0, 2.0, 1.0]);
    assert!((rho + 1.0).abs() < 1e-12);
}

#[test]
fn full_exploration_is_uniform_over_legal_actions() {
    let dep = generate_deployment(11, 3, 6, 500.0, &RadioConfig::default()).unwrap();
    let start = EpisodeState::initial(&dep, f64::INFINITY, 250.0).unwrap();
    let actions = legal_actions(&start);
    assert_eq!(actions.len(), 18);
    let p = GnnParams::init(0, 2, 8, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 18_000;
    let mut counts = vec![0usize; actions.len()];
    for _ in 0..draws {
        let c = choose_action(&p, &start, 1.0, &mut rng).unwrap();
        assert!(c.explored);
        counts[actions.iter().position(|&a| a == c.action).unwrap()] += 1;
    }
    let expected = draws as f64 / actions.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p_value = 1.0 - ChiSquared::new((actions.len() - 1) as f64).unwrap().cdf(chi2);
    assert!(p_value > 0.001, "chi2 {chi2:.2}, p {p_value:.2e}");
}

#[test]
fn zero_exploration_is_greedy() {
    let dep = generate_deployment(12, 3, 6, 500.0, &RadioConfig::default()).unwrap();
    let start = EpisodeState::initial(&dep, f64::INFINITY, 250.0).unwrap();
    let p = GnnParams::zeros(2, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let c = choose_action(&p, &start, 0.0, &mut rng).unwrap();
        assert!(!c.explored);
        assert_eq!(c.action, legal_actions(&start)[0]);
    }
}

// Repeated episodes on one instance; the curve is averaged over training seeds
// because a single seed can drift away from a good initial ordering.
#[test]
fn seed_averaged_return_trends_upward() {
    let dep = generate_deployment(7, 3, 8, 500.0, &RadioConfig::default()).unwrap();
    let episodes = 300;
    let mut curve = vec![0.0; episodes];
    let seeds = 0..5u64;
    let n_seeds = seeds.clone().count() as f64;
    for seed in seeds {
        let cfg = TrainConfig {
            seed,
            episodes_per_deployment: episodes,
            edge_threshold_db: f64::INFINITY,
            ..Default::default()
        };
        let (_, log) = train(&cfg, std::slice::from_ref(&dep)).unwrap();
        for (acc, r) in curve.iter_mut().zip(log.returns()) {
            *acc += r / n_seeds;
        }
    }
    let (rho, p) = spearman_trend(&curve[..episodes / 2]);
    assert!(rho > 0.0 && p < 0.05, "rho {rho:.3}, p {p:.2e}");
}

#[test]
fn training_is_deterministic() {
    let deps: Vec<_> = (0..20)
        .map(|s| generate_deployment(s, 3, 10, 500.0, &RadioConfig::default()).unwrap())
        .collect();
    let cfg = TrainConfig { seed: 9, ..Default::default() };
    let (p1, l1) = train(&cfg, &deps).unwrap();
    let (p2, l2) = train(&cfg, &deps).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(l1, l2);
    let other = TrainConfig { seed: 10, ..cfg };
    assert_ne!(train(&other, &deps).unwrap().0, p1);
}

#[test]
fn logged_return_telescopes_for_throughput() {
    let deps: Vec<_> = (0..10)
        .map(|s| generate_deployment(100 + s, 4, 12, 500.0, &RadioConfig::default()).unwrap())
        .collect();
    let cfg = TrainConfig::default();
    let (_, log) = train(&cfg, &deps).unwrap();
    for (dep, row) in deps.iter().zip(&log.episodes) {
        let start = EpisodeState::initial(dep, cfg.edge_threshold_db, cfg.d_max_m).unwrap();
        let u0 = sum_throughput(&start.graph, start.cap());
        assert!((row.episode_return - (row.u_th - u0)).abs() <= 1e-12 * row.u_th.abs().max(1.0));
    }
    // Empty start: the sum of step rewards is the terminal throughput.
    let empty = EpisodeState::initial(&deps[0], f64::INFINITY, 250.0).unwrap();
    let mut s = empty.clone();
    let mut total = 0.0;
    while let Some(&a) = legal_actions(&s).last() {
        let next = s.apply(a).unwrap();
        total += reward_throughput(&s.graph, &next.graph, s.cap());
        s = next;
    }
    assert!((total - sum_throughput(&s.graph, s.cap())).abs() < 1e-12 * total);
}
