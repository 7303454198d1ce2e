//! Diffusion-convolution GNN scoring a connection graph, with hand-written
//! reverse-mode gradients.
//!
//! Per layer `l`:
//!
//! ```text
//! H_cl = relu(X_cl1 W1) + relu(X_cl2 W2)      N×d
//! H_ue = relu(X_ue W3)                         M×d
//! X_cl1' = A_cl H_cl,  X_ue' = A_ueᵀ H_cl,  X_cl2' = A_ue H_ue
//! ```
//!
//! and the graph score is `Q = relu((1ᵀ H_cl) W4) · w5` on the last layer.
//! There are no bias terms.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{input_features, CapacityMatrix, ConnectionGraph, NodeFeatures};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const FEATURE_DIM: usize = 2;

/// Learnable weights. The same layout doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    layers: usize,
    width: usize,
    pub w1: Vec<Array2<f64>>,
    pub w2: Vec<Array2<f64>>,
    pub w3: Vec<Array2<f64>>,
    pub w4: Array2<f64>,
    pub w5: Array1<f64>,
}

/// `∂Q/∂θ`, shape-congruent with [`GnnParams`].
pub type GnnGradients = GnnParams;

fn layer_rows(l: usize, width: usize) -> usize {
    if l == 0 {
        FEATURE_DIM
    } else {
        width
    }
}

impl GnnParams {
    pub fn zeros(layers: usize, width: usize) -> Self {
        let stack = || (0..layers).map(|l| Array2::zeros((layer_rows(l, width), width))).collect();
        Self {
            layers,
            width,
            w1: stack(),
            w2: stack(),
            w3: stack(),
            w4: Array2::zeros((width, width)),
            w5: Array1::zeros(width),
        }
    }

    pub fn init(seed: u64, layers: usize, width: usize, init_std: f64) -> Result<Self> {
        if layers == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "GNN needs at least one layer and width (got L={layers}, d={width})"
            )));
        }
        if !(init_std > 0.0 && init_std.is_finite()) {
            return Err(Error::InvalidArgument(format!("init_std must be > 0 (got {init_std})")));
        }
        let normal = Normal::new(0.0, init_std).expect("positive std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(layers, width);
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
        Ok(p)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Every weight tensor as a flat row-major slice, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(3 * self.layers + 2);
        for stack in [&self.w1, &self.w2, &self.w3] {
            out.extend(stack.iter().map(|w| w.as_slice().expect("standard layout")));
        }
        out.push(self.w4.as_slice().expect("standard layout"));
        out.push(self.w5.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.layers + 2);
        for stack in [&mut self.w1, &mut self.w2, &mut self.w3] {
            out.extend(stack.iter_mut().map(|w| w.as_slice_mut().expect("standard layout")));
        }
        out.push(self.w4.as_slice_mut().expect("standard layout"));
        out.push(self.w5.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &GnnParams, k: f64) {
        assert_eq!((self.layers, self.width), (other.layers, other.width));
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += k * s);
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.width;
        for (name, stack) in [("W1", &self.w1), ("W2", &self.w2), ("W3", &self.w3)] {
            if stack.len() != self.layers {
                return Err(Error::Shape(format!("{name} has {} layers, expected {}", stack.len(), self.layers)));
            }
            for (l, w) in stack.iter().enumerate() {
                if w.dim() != (layer_rows(l, d), d) {
                    return Err(Error::Shape(format!("{name}[{l}] is {:?}, expected {:?}", w.dim(), (layer_rows(l, d), d))));
                }
            }
        }
        if self.w4.dim() != (d, d) {
            return Err(Error::Shape(format!("W4 is {:?}, expected {:?}", self.w4.dim(), (d, d))));
        }
        if self.w5.len() != d {
            return Err(Error::Shape(format!("w5 has {} entries, expected {d}", self.w5.len())));
        }
        Ok(())
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
fn relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Intermediates of one layer.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub x_cl1: Array2<f64>,
    pub x_cl2: Array2<f64>,
    pub x_ue: Array2<f64>,
    pub pre_cl1: Array2<f64>,
    pub pre_cl2: Array2<f64>,
    pub pre_ue: Array2<f64>,
    pub h_cl: Array2<f64>,
    pub h_ue: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    /// `1ᵀ H_cl` of the last layer.
    pub pooled: Array1<f64>,
    /// `pooled · W4` before the activation.
    pub readout_pre: Array1<f64>,
    pub score: f64,
}

/// `A_ueᵀ H`: UE `j` receives the row of its serving cell.
fn gather_from_cells(g: &ConnectionGraph, h_cl: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((g.n_ues(), h_cl.ncols()));
    for (j, cell) in g.assignment().iter().enumerate() {
        if let Some(i) = *cell {
            out.row_mut(j).assign(&h_cl.row(i));
        }
    }
    out
}

/// `A_ue H`: each cell sums the rows of the UEs it serves.
fn scatter_to_cells(g: &ConnectionGraph, h_ue: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((g.n_cells(), h_ue.ncols()));
    for (j, cell) in g.assignment().iter().enumerate() {
        if let Some(i) = *cell {
            let mut row = out.row_mut(i);
            row += &h_ue.row(j);
        }
    }
    out
}

pub fn forward(p: &GnnParams, g: &ConnectionGraph, f: &NodeFeatures) -> Result<ForwardTrace> {
    p.check_shapes()?;
    let (n, m) = (g.n_cells(), g.n_ues());
    for (name, x, rows) in [("x_cl1", &f.x_cl1, n), ("x_cl2", &f.x_cl2, n), ("x_ue", &f.x_ue, m)] {
        if x.dim() != (rows, FEATURE_DIM) {
            return Err(Error::Shape(format!("{name} is {:?}, expected {:?}", x.dim(), (rows, FEATURE_DIM))));
        }
    }

    let mut layers = Vec::with_capacity(p.layers);
    let (mut x_cl1, mut x_cl2, mut x_ue) = (f.x_cl1.clone(), f.x_cl2.clone(), f.x_ue.clone());
    for l in 0..p.layers {
        let pre_cl1 = x_cl1.dot(&p.w1[l]);
        let pre_cl2 = x_cl2.dot(&p.w2[l]);
        let pre_ue = x_ue.dot(&p.w3[l]);
        let h_cl = pre_cl1.mapv(relu) + pre_cl2.mapv(relu);
        let h_ue = pre_ue.mapv(relu);

        let next = (
            g.cell_adj().dot(&h_cl),
            scatter_to_cells(g, &h_ue),
            gather_from_cells(g, &h_cl),
        );
        layers.push(LayerTrace { x_cl1, x_cl2, x_ue, pre_cl1, pre_cl2, pre_ue, h_cl, h_ue });
        (x_cl1, x_cl2, x_ue) = next;
    }

    let pooled = layers.last().expect("at least one layer").h_cl.sum_axis(Axis(0));
    let readout_pre = pooled.dot(&p.w4);
    let score = readout_pre.mapv(relu).dot(&p.w5);
    Ok(ForwardTrace { layers, pooled, readout_pre, score })
}

/// Exact gradients of the score with respect to every weight (`relu'(0) = 0`).
pub fn backward(p: &GnnParams, trace: &ForwardTrace, g: &ConnectionGraph) -> GnnGradients {
    let mut grad = GnnParams::zeros(p.layers, p.width);

    let act = trace.readout_pre.mapv(relu);
    grad.w5.assign(&act);
    let d_pre = &p.w5 * &trace.readout_pre.mapv(relu_grad);
    // dW4 = pooledᵀ ⊗ d_pre
    for (r, &z) in trace.pooled.iter().enumerate() {
        grad.w4.row_mut(r).assign(&(&d_pre * z));
    }
    let d_pooled = p.w4.dot(&d_pre);

    let n = g.n_cells();
    let mut d_h_cl = Array2::zeros((n, p.width));
    for mut row in d_h_cl.rows_mut() {
        row.assign(&d_pooled);
    }
    let mut d_h_ue: Array2<f64> = Array2::zeros((g.n_ues(), p.width));

    for l in (0..p.layers).rev() {
        let t = &trace.layers[l];
        let d_pre1 = &d_h_cl * &t.pre_cl1.mapv(relu_grad);
        let d_pre2 = &d_h_cl * &t.pre_cl2.mapv(relu_grad);
        let d_pre3 = &d_h_ue * &t.pre_ue.mapv(relu_grad);
        grad.w1[l] = t.x_cl1.t().dot(&d_pre1);
        grad.w2[l] = t.x_cl2.t().dot(&d_pre2);
        grad.w3[l] = t.x_ue.t().dot(&d_pre3);
        if l == 0 {
            break;
        }
        let d_x_cl1 = d_pre1.dot(&p.w1[l].t());
        let d_x_cl2 = d_pre2.dot(&p.w2[l].t());
        let d_x_ue = d_pre3.dot(&p.w3[l].t());
        // X_cl1 = A_cl H_cl, X_ue = A_ueᵀ H_cl, X_cl2 = A_ue H_ue
        d_h_cl = g.cell_adj().t().dot(&d_x_cl1) + scatter_to_cells(g, &d_x_ue);
        d_h_ue = gather_from_cells(g, &d_x_cl2);
    }
    grad
}

/// Score and gradient of one graph.
pub fn score_with_grad(p: &GnnParams, g: &ConnectionGraph, cap: &CapacityMatrix) -> Result<(f64, GnnGradients)> {
    let f = input_features(g, cap);
    let trace = forward(p, g, &f)?;
    let grad = backward(p, &trace, g);
    Ok((trace.score, grad))
}

pub fn score_graph(p: &GnnParams, g: &ConnectionGraph, cap: &CapacityMatrix) -> Result<f64> {
    let f = input_features(g, cap);
    Ok(forward(p, g, &f)?.score)
}

/// `Q(s, a)`: the score of the graph obtained by connecting `ue` to `cell`.
pub fn score_action(p: &GnnParams, g: &ConnectionGraph, cap: &CapacityMatrix, cell: usize, ue: usize) -> Result<f64> {
    score_graph(p, &g.connect(cell, ue)?, cap)
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixRecord {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixRecord {
    fn from_array(a: &Array2<f64>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    fn into_array(self, name: &str) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data)
            .map_err(|e| Error::Model(format!("{name}: {e}")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    #[serde(rename = "L")]
    layers: usize,
    d: usize,
    #[serde(rename = "W1")]
    w1: Vec<MatrixRecord>,
    #[serde(rename = "W2")]
    w2: Vec<MatrixRecord>,
    #[serde(rename = "W3")]
    w3: Vec<MatrixRecord>,
    #[serde(rename = "W4")]
    w4: MatrixRecord,
    w5: Vec<f64>,
}

impl GnnParams {
    pub fn to_json(&self) -> Result<String> {
        let stack = |s: &[Array2<f64>]| s.iter().map(MatrixRecord::from_array).collect();
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            layers: self.layers,
            d: self.width,
            w1: stack(&self.w1),
            w2: stack(&self.w2),
            w3: stack(&self.w3),
            w4: MatrixRecord::from_array(&self.w4),
            w5: self.w5.to_vec(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported format_version {}", file.format_version)));
        }
        let stack = |s: Vec<MatrixRecord>, name: &str| -> Result<Vec<Array2<f64>>> {
            s.into_iter().enumerate().map(|(l, m)| m.into_array(&format!("{name}[{l}]"))).collect()
        };
        let p = GnnParams {
            layers: file.layers,
            width: file.d,
            w1: stack(file.w1, "W1")?,
            w2: stack(file.w2, "W2")?,
            w3: stack(file.w3, "W3")?,
            w4: file.w4.into_array("W4")?,
            w5: Array1::from_vec(file.w5),
        };
        if p.layers == 0 || p.width == 0 {
            return Err(Error::Model("L and d must be positive".into()));
        }
        p.check_shapes().map_err(|e| Error::Model(e.to_string()))?;
        if !p.is_finite() {
            return Err(Error::Model("non-finite weight".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
