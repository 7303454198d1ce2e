//! The cell/UE connection graph, capacity and rate matrices, and GNN input features.

use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::net_model::Deployment;

pub const DEFAULT_D_MAX_M: f64 = 250.0;
pub const FEATURE_SCALE: f64 = 30.0;

/// Cell-to-cell virtual edges: `A_cl(i,j) = 1` iff `i != j` and the cells are
/// closer than `d_max_m`.
pub fn build_cell_graph(dep: &Deployment, d_max_m: f64) -> Array2<f64> {
    let n = dep.n_cells();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && dep.cells[i].distance(&dep.cells[j]) < d_max_m {
            1.0
        } else {
            0.0
        }
    })
}

/// Bipartite cell–UE assignment over a fixed cell–cell graph.
///
/// Updates are by value: [`ConnectionGraph::connect`] returns a new graph and
/// leaves the receiver untouched. The cell adjacency is shared.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionGraph {
    cell_adj: Arc<Array2<f64>>,
    assign: Vec<Option<usize>>,
    loads: Vec<usize>,
    d_max_m: f64,
}

impl ConnectionGraph {
    pub fn new(cell_adj: Array2<f64>, n_ues: usize, d_max_m: f64) -> Result<Self> {
        let n = cell_adj.nrows();
        if cell_adj.ncols() != n {
            return Err(Error::Shape(format!("cell adjacency must be square, got {:?}", cell_adj.dim())));
        }
        for i in 0..n {
            if cell_adj[[i, i]] != 0.0 {
                return Err(Error::InvalidArgument(format!("cell {i} has a self-loop")));
            }
            for j in 0..n {
                let v = cell_adj[[i, j]];
                if v != cell_adj[[j, i]] || (v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidArgument("cell adjacency must be symmetric 0/1".into()));
                }
            }
        }
        Ok(Self {
            cell_adj: Arc::new(cell_adj),
            assign: vec![None; n_ues],
            loads: vec![0; n],
            d_max_m,
        })
    }

    /// Empty assignment over the deployment's cell graph.
    pub fn from_deployment(dep: &Deployment, d_max_m: f64) -> Self {
        Self {
            cell_adj: Arc::new(build_cell_graph(dep, d_max_m)),
            assign: vec![None; dep.n_ues()],
            loads: vec![0; dep.n_cells()],
            d_max_m,
        }
    }

    /// Builds a graph with a given assignment vector.
    pub fn with_assignment(cell_adj: Array2<f64>, assign: Vec<Option<usize>>, d_max_m: f64) -> Result<Self> {
        let mut g = Self::new(cell_adj, assign.len(), d_max_m)?;
        for (ue, cell) in assign.into_iter().enumerate() {
            if let Some(cell) = cell {
                g.connect_mut(cell, ue)?;
            }
        }
        Ok(g)
    }

    pub fn n_cells(&self) -> usize {
        self.loads.len()
    }

    pub fn n_ues(&self) -> usize {
        self.assign.len()
    }

    pub fn d_max_m(&self) -> f64 {
        self.d_max_m
    }

    pub fn cell_adj(&self) -> &Array2<f64> {
        &self.cell_adj
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assign
    }

    pub fn cell_of(&self, ue: usize) -> Option<usize> {
        self.assign[ue]
    }

    /// `|C(i)|` for every cell.
    pub fn loads(&self) -> &[usize] {
        &self.loads
    }

    pub fn n_assigned(&self) -> usize {
        self.loads.iter().sum()
    }

    pub fn unassigned(&self) -> impl Iterator<Item = usize> + '_ {
        self.assign.iter().enumerate().filter(|(_, a)| a.is_none()).map(|(j, _)| j)
    }

    pub fn served_by(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        self.assign
            .iter()
            .enumerate()
            .filter(move |(_, a)| **a == Some(cell))
            .map(|(j, _)| j)
    }

    pub fn is_terminal(&self) -> bool {
        self.assign.iter().all(Option::is_some)
    }

    /// Dense `A_ue` (N×M).
    pub fn ue_adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n_cells(), self.n_ues()));
        for (j, cell) in self.assign.iter().enumerate() {
            if let Some(i) = cell {
                a[[*i, j]] = 1.0;
            }
        }
        a
    }

    pub fn connect(&self, cell: usize, ue: usize) -> Result<Self> {
        let mut next = self.clone();
        next.connect_mut(cell, ue)?;
        Ok(next)
    }

    pub(crate) fn connect_mut(&mut self, cell: usize, ue: usize) -> Result<()> {
        if cell >= self.n_cells() {
            return Err(Error::OutOfRange { what: "cell", index: cell, len: self.n_cells() });
        }
        if ue >= self.n_ues() {
            return Err(Error::OutOfRange { what: "ue", index: ue, len: self.n_ues() });
        }
        if let Some(current) = self.assign[ue] {
            return Err(Error::AlreadyConnected { ue, cell: current });
        }
        self.assign[ue] = Some(cell);
        self.loads[cell] += 1;
        Ok(())
    }

    pub(crate) fn disconnect_mut(&mut self, ue: usize) -> Option<usize> {
        let cell = self.assign[ue].take()?;
        self.loads[cell] -= 1;
        Some(cell)
    }
}

/// Spectral efficiency `c(i,j)` for every cell/UE pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityMatrix(pub Array2<f64>);

impl CapacityMatrix {
    pub fn new(c: Array2<f64>) -> Result<Self> {
        if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("capacities must be finite and >= 0".into()));
        }
        Ok(Self(c))
    }

    pub fn from_deployment(dep: &Deployment) -> Self {
        let n0 = dep.radio.noise_power_dbm();
        Self(Array2::from_shape_fn((dep.n_cells(), dep.n_ues()), |(i, j)| {
            let rsrp = dep.rsrp_dbm(i, j).expect("indices in range");
            (1.0 + 10f64.powf((rsrp - n0) / 10.0)).log2()
        }))
    }

    pub fn get(&self, cell: usize, ue: usize) -> f64 {
        self.0[[cell, ue]]
    }

    pub fn n_cells(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_ues(&self) -> usize {
        self.0.ncols()
    }
}

/// Shared per-UE rates: `r(i,j) = c(i,j) / |C(i)|` on assigned pairs, else 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix(pub Array2<f64>);

pub fn rate_matrix(g: &ConnectionGraph, cap: &CapacityMatrix) -> RateMatrix {
    let mut r = Array2::zeros((g.n_cells(), g.n_ues()));
    for (j, cell) in g.assignment().iter().enumerate() {
        if let Some(i) = *cell {
            r[[i, j]] = cap.get(i, j) / g.loads()[i] as f64;
        }
    }
    RateMatrix(r)
}

/// Rate of every UE (zero when unassigned), i.e. `Rᵀ 1_N`.
pub fn ue_rates(g: &ConnectionGraph, cap: &CapacityMatrix) -> Vec<f64> {
    g.assignment()
        .iter()
        .enumerate()
        .map(|(j, cell)| match *cell {
            Some(i) => cap.get(i, j) / g.loads()[i] as f64,
            None => 0.0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub x_cl1: Array2<f64>,
    pub x_cl2: Array2<f64>,
    pub x_ue: Array2<f64>,
}

impl NodeFeatures {
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            x_cl1: &self.x_cl1 * k,
            x_cl2: &self.x_cl2 * k,
            x_ue: &self.x_ue * k,
        }
    }
}

fn hstack(a: Array1<f64>, b: Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), 2));
    out.column_mut(0).assign(&a);
    out.column_mut(1).assign(&b);
    out
}

/// Layer-0 features before scaling.
pub fn raw_input_features(g: &ConnectionGraph, cap: &CapacityMatrix) -> NodeFeatures {
    let r = rate_matrix(g, cap).0;
    let a_ue = g.ue_adjacency();
    let cell_rate = r.sum_axis(Axis(1)); // R 1_M
    let ue_rate = r.sum_axis(Axis(0)); // Rᵀ 1_N
    let cell_cap = cap.0.sum_axis(Axis(1)); // C 1_M
    let ue_cap = cap.0.sum_axis(Axis(0)); // Cᵀ 1_N

    NodeFeatures {
        x_cl1: hstack(g.cell_adj().dot(&cell_rate), cell_rate),
        x_cl2: hstack(a_ue.dot(&ue_rate), cell_cap),
        x_ue: hstack(ue_cap, ue_rate),
    }
}

/// GNN input features. Capacity sums are averaged over the opposite node
/// set so every column is a rate in bits/s/Hz, then all columns are divided by
/// [`FEATURE_SCALE`]. Absolute rate levels are kept; per-column mean
/// normalization would make all first-step candidates indistinguishable.
pub fn input_features(g: &ConnectionGraph, cap: &CapacityMatrix) -> NodeFeatures {
    let mut f = raw_input_features(g, cap);
    let (n, m) = (g.n_cells() as f64, g.n_ues() as f64);
    f.x_cl2.column_mut(1).mapv_inplace(|v| v / m);
    f.x_ue.column_mut(0).mapv_inplace(|v| v / n);
    f.scaled(1.0 / FEATURE_SCALE)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn instance() -> impl Strategy<Value = (Array2<f64>, Vec<f64>, Vec<Option<usize>>, Vec<usize>)> {
        (2usize..6, 2usize..10).prop_flat_map(|(n, m)| {
            (
                proptest::collection::vec(proptest::bool::ANY, n * n),
                proptest::collection::vec(0.0f64..10.0, n * m),
                proptest::collection::vec(proptest::option::of(0..n), m),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            )
                .prop_map(move |(edges, caps, assign, perm)| {
                    let adj = Array2::from_shape_fn((n, n), |(i, j)| {
                        let (a, b) = (i.min(j), i.max(j));
                        if a != b && edges[a * n + b] { 1.0 } else { 0.0 }
                    });
                    (adj, caps, assign, perm)
                })
        })
    }

    proptest! {
        #[test]
        fn cell_permutation_permutes_cell_rows((adj, caps, assign, perm) in instance()) {
            let n = adj.nrows();
            let m = assign.len();
            let cap = CapacityMatrix::new(Array2::from_shape_vec((n, m), caps).unwrap()).unwrap();
            let g = ConnectionGraph::with_assignment(adj.clone(), assign.clone(), 1.0).unwrap();
            // new cell k is old cell perm[k]
            let mut inv = vec![0; n];
            for (k, &i) in perm.iter().enumerate() { inv[i] = k; }
            let adj_p = Array2::from_shape_fn((n, n), |(a, b)| adj[[perm[a], perm[b]]]);
            let cap_p = CapacityMatrix::new(Array2::from_shape_fn((n, m), |(a, j)| cap.get(perm[a], j))).unwrap();
            let assign_p = assign.iter().map(|c| c.map(|i| inv[i])).collect();
            let g_p = ConnectionGraph::with_assignment(adj_p, assign_p, 1.0).unwrap();
            let (f, fp) = (input_features(&g, &cap), input_features(&g_p, &cap_p));
            for (k, &i) in perm.iter().enumerate() {
                for c in 0..2 {
                    prop_assert!((f.x_cl1[[i, c]] - fp.x_cl1[[k, c]]).abs() < 1e-9);
                    prop_assert!((f.x_cl2[[i, c]] - fp.x_cl2[[k, c]]).abs() < 1e-9);
                }
            }
            for j in 0..m {
                for c in 0..2 {
                    prop_assert!((f.x_ue[[j, c]] - fp.x_ue[[j, c]]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn connect_decrements_unassigned((adj, _caps, assign, _perm) in instance()) {
            let n = adj.nrows();
            let g = ConnectionGraph::with_assignment(adj, assign, 1.0).unwrap();
            let first = g.unassigned().next();
            if let Some(ue) = first {
                let before = g.unassigned().count();
                let next = g.connect(n - 1, ue).unwrap();
                prop_assert_eq!(next.unassigned().count(), before - 1);
            }
        }
    }
}
