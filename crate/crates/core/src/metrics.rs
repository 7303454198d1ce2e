//! Network utilities and the per-step RL rewards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ue_rates, CapacityMatrix, ConnectionGraph};

pub const DEFAULT_LAMBDA_FAIR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub w_th: f64,
    pub w_cov: f64,
    pub w_jain: f64,
    pub lambda_fair: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self {
            w_th: 1.0,
            w_cov: 0.0,
            w_jain: 0.0,
            lambda_fair: DEFAULT_LAMBDA_FAIR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Throughput,
    Fair,
}

impl std::str::FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "throughput" => Ok(RewardKind::Throughput),
            "fair" => Ok(RewardKind::Fair),
            other => Err(Error::InvalidArgument(format!("unknown reward kind '{other}'"))),
        }
    }
}

/// Throughput delivered by each cell: `Σ_{j∈C(i)} c(i,j) / |C(i)|`.
pub fn cell_throughputs(g: &ConnectionGraph, cap: &CapacityMatrix) -> Vec<f64> {
    let mut out = vec![0.0; g.n_cells()];
    for (j, cell) in g.assignment().iter().enumerate() {
        if let Some(i) = *cell {
            out[i] += cap.get(i, j);
        }
    }
    for (t, &load) in out.iter_mut().zip(g.loads()) {
        if load > 0 {
            *t /= load as f64;
        }
    }
    out
}

pub fn sum_throughput(g: &ConnectionGraph, cap: &CapacityMatrix) -> f64 {
    cell_throughputs(g, cap).iter().sum()
}

/// Order-statistic 5th percentile of the rates of assigned UEs.
pub fn coverage(g: &ConnectionGraph, cap: &CapacityMatrix) -> Result<f64> {
    let mut rates: Vec<f64> = ue_rates(g, cap)
        .into_iter()
        .zip(g.assignment())
        .filter_map(|(r, a)| a.map(|_| r))
        .collect();
    if rates.is_empty() {
        return Err(Error::EmptyAssignment("coverage needs at least one assigned UE"));
    }
    rates.sort_by(f64::total_cmp);
    // k = max(1, ceil(0.05 * m)) in exact integer arithmetic
    let k = rates.len().div_ceil(20).max(1);
    Ok(rates[k - 1])
}

/// Jain's index over cell loads, normalized by the number of assigned UEs.
pub fn jain_index(g: &ConnectionGraph) -> Result<f64> {
    let assigned = g.n_assigned();
    if assigned == 0 {
        return Err(Error::EmptyAssignment("Jain's index needs at least one assigned UE"));
    }
    let sum: f64 = g.loads().iter().map(|&l| l as f64).sum();
    let sum_sq: f64 = g.loads().iter().map(|&l| (l * l) as f64).sum();
    Ok(sum * sum / (assigned as f64 * sum_sq))
}

pub fn utility(g: &ConnectionGraph, cap: &CapacityMatrix, w: &UtilityWeights) -> Result<f64> {
    let mut u = 0.0;
    if w.w_th != 0.0 {
        u += w.w_th * sum_throughput(g, cap);
    }
    if w.w_cov != 0.0 {
        u += w.w_cov * coverage(g, cap)?;
    }
    if w.w_jain != 0.0 {
        u += w.w_jain * jain_index(g)?;
    }
    Ok(u)
}

/// `(1/N) Σ_i min_{j∈C(i)} c(i,j)`, empty cells contributing zero.
pub fn mean_min_capacity(g: &ConnectionGraph, cap: &CapacityMatrix) -> f64 {
    let mut mins = vec![f64::INFINITY; g.n_cells()];
    for (j, cell) in g.assignment().iter().enumerate() {
        if let Some(i) = *cell {
            mins[i] = mins[i].min(cap.get(i, j));
        }
    }
    let total: f64 = mins.iter().filter(|m| m.is_finite()).sum();
    total / g.n_cells() as f64
}

pub fn reward_throughput(prev: &ConnectionGraph, next: &ConnectionGraph, cap: &CapacityMatrix) -> f64 {
    sum_throughput(next, cap) - sum_throughput(prev, cap)
}

pub fn reward_fair(prev: &ConnectionGraph, next: &ConnectionGraph, cap: &CapacityMatrix, lambda: f64) -> f64 {
    reward_throughput(prev, next, cap) + lambda * mean_min_capacity(next, cap)
}

pub fn reward(kind: RewardKind, prev: &ConnectionGraph, next: &ConnectionGraph, cap: &CapacityMatrix, lambda: f64) -> f64 {
    match kind {
        RewardKind::Throughput => reward_throughput(prev, next, cap),
        RewardKind::Fair => reward_fair(prev, next, cap, lambda),
    }
}

/// The terminal-graph objective each reward kind steers towards:
/// `U_th` for throughput, `U_th + λ·mean_min_capacity` for fair.
pub fn objective(kind: RewardKind, g: &ConnectionGraph, cap: &CapacityMatrix, lambda: f64) -> f64 {
    match kind {
        RewardKind::Throughput => sum_throughput(g, cap),
        RewardKind::Fair => sum_throughput(g, cap) + lambda * mean_min_capacity(g, cap),
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn instance() -> impl Strategy<Value = (CapacityMatrix, Vec<Option<usize>>)> {
        (1usize..6, 1usize..12).prop_flat_map(|(n, m)| {
            (
                proptest::collection::vec(0.0f64..12.0, n * m),
                proptest::collection::vec(proptest::option::weighted(0.8, 0..n), m),
            )
                .prop_map(move |(c, a)| (CapacityMatrix::new(Array2::from_shape_vec((n, m), c).unwrap()).unwrap(), a))
        })
    }

    fn standard_jain(loads: &[usize]) -> f64 {
        let s: f64 = loads.iter().map(|&x| x as f64).sum();
        let s2: f64 = loads.iter().map(|&x| (x * x) as f64).sum();
        s * s / (loads.len() as f64 * s2)
    }

    proptest! {
        #[test]
        fn jain_bounds_and_scaling((cap, assign) in instance()) {
            let g = ConnectionGraph::with_assignment(Array2::zeros((cap.n_cells(), cap.n_cells())), assign, 1.0).unwrap();
            if g.n_assigned() > 0 {
                let j = jain_index(&g).unwrap();
                prop_assert!(j > 0.0 && j <= 1.0);
                // relation to the cell-normalized index, which hits 1 iff all N loads match
                let std = standard_jain(g.loads());
                let n = g.n_cells() as f64;
                let m = g.n_assigned() as f64;
                prop_assert!((j - std * n / m).abs() < 1e-12);
                let identical = g.loads().iter().all(|&l| l == g.loads()[0]);
                prop_assert_eq!((std - 1.0).abs() < 1e-12, identical);
            }
        }

        #[test]
        fn coverage_between_min_and_max_rate((cap, assign) in instance()) {
            let g = ConnectionGraph::with_assignment(Array2::zeros((cap.n_cells(), cap.n_cells())), assign, 1.0).unwrap();
            let rates: Vec<f64> = ue_rates(&g, &cap).into_iter().zip(g.assignment()).filter_map(|(r, a)| a.map(|_| r)).collect();
            if let Ok(cov) = coverage(&g, &cap) {
                let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= cov && cov <= hi);
            } else {
                prop_assert!(rates.is_empty());
            }
        }

        #[test]
        fn throughput_is_sum_of_cells((cap, assign) in instance()) {
            let g = ConnectionGraph::with_assignment(Array2::zeros((cap.n_cells(), cap.n_cells())), assign, 1.0).unwrap();
            let rates_total: f64 = crate::graph::rate_matrix(&g, &cap).0.sum();
            let per_cell: f64 = cell_throughputs(&g, &cap).iter().sum();
            prop_assert!((per_cell - sum_throughput(&g, &cap)).abs() == 0.0);
            prop_assert!((rates_total - per_cell).abs() <= 1e-12 * per_cell.max(1.0));
        }

        #[test]
        fn throughput_rewards_telescope((cap, assign) in instance(), order_seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let n = cap.n_cells();
            let mut order: Vec<(usize, usize)> = assign.iter().enumerate().filter_map(|(j, a)| a.map(|i| (i, j))).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(order_seed));
            let mut g = ConnectionGraph::new(Array2::zeros((n, n)), assign.len(), 1.0).unwrap();
            let mut total = 0.0;
            for (i, j) in order {
                let next = g.connect(i, j).unwrap();
                total += reward_throughput(&g, &next, &cap);
                g = next;
            }
            let u = sum_throughput(&g, &cap);
            prop_assert!((total - u).abs() <= 1e-12 * u.abs().max(1.0));
        }

        #[test]
        fn exhaustive_optimum_is_consistent(c in proptest::collection::vec(0.0f64..10.0, 8)) {
            // N=2, M=4: every assignment scored through `utility` matches an independent sum.
            let cap = CapacityMatrix::new(Array2::from_shape_vec((2, 4), c).unwrap()).unwrap();
            let w = UtilityWeights { w_th: 1.0, w_cov: 0.0, w_jain: 0.0, lambda_fair: 0.0 };
            let mut best_util = f64::NEG_INFINITY;
            let mut best_direct = f64::NEG_INFINITY;
            for code in 0..16u32 {
                let assign: Vec<Option<usize>> = (0..4).map(|j| Some(((code >> j) & 1) as usize)).collect();
                let g = ConnectionGraph::with_assignment(Array2::zeros((2, 2)), assign.clone(), 1.0).unwrap();
                best_util = best_util.max(utility(&g, &cap, &w).unwrap());
                let mut direct = 0.0;
                for cell in 0..2 {
                    let members: Vec<usize> = (0..4).filter(|&j| assign[j] == Some(cell)).collect();
                    if !members.is_empty() {
                        direct += members.iter().map(|&j| cap.get(cell, j)).sum::<f64>() / members.len() as f64;
                    }
                }
                best_direct = best_direct.max(direct);
            }
            prop_assert!((best_util - best_direct).abs() <= 1e-12 * best_direct.max(1.0));
        }
    }
}
