//! The xApp inference path: UE classification, local subgraphs around a
//! handover request, greedy GNN decisions, the max-RSRP baseline, and a
//! line-delimited JSON service loop.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, ToSocketAddrs};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dqn::{greedy_rollout, EpisodeState, Instance};
use crate::error::{Error, Result};
use crate::gnn::GnnParams;
use crate::graph::{CapacityMatrix, ConnectionGraph, DEFAULT_D_MAX_M};
use crate::net_model::{Deployment, MeasurementReport};

pub const DEFAULT_EDGE_THRESHOLD_DB: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UeClass {
    CellCenter,
    CellEdge,
}

/// Classifies a UE from its RSRPs sorted strongest first.
pub fn classify_ranked(ranked_rsrp: &[f64], threshold_db: f64) -> UeClass {
    match ranked_rsrp {
        [best, second, ..] if best - second < threshold_db => UeClass::CellEdge,
        _ => UeClass::CellCenter,
    }
}

pub fn classify_ues(dep: &Deployment, threshold_db: f64) -> Result<Vec<UeClass>> {
    if !(threshold_db > 0.0) {
        return Err(Error::InvalidArgument(format!("edge threshold must be > 0 dB (got {threshold_db})")));
    }
    Ok((0..dep.n_ues())
        .map(|ue| {
            let ranked: Vec<f64> = dep.ranked_cells(ue).into_iter().map(|(_, r)| r).collect();
            classify_ranked(&ranked, threshold_db)
        })
        .collect())
}

/// Cell-center UEs attached to their strongest cell; cell-edge UEs returned
/// unassigned as the reshuffled set.
pub fn initial_graph(dep: &Deployment, threshold_db: f64, d_max_m: f64) -> Result<(ConnectionGraph, Vec<usize>)> {
    let classes = classify_ues(dep, threshold_db)?;
    let mut g = ConnectionGraph::from_deployment(dep, d_max_m);
    let mut reshuffled = Vec::new();
    for (ue, class) in classes.into_iter().enumerate() {
        match class {
            UeClass::CellCenter => g.connect_mut(strongest_cell(dep, ue), ue)?,
            UeClass::CellEdge => reshuffled.push(ue),
        }
    }
    Ok((g, reshuffled))
}

fn strongest_cell(dep: &Deployment, ue: usize) -> usize {
    dep.ranked_cells(ue)[0].0
}

/// Each UE to its strongest cell over all cells, ties to the lower index.
pub fn max_rsrp_policy(dep: &Deployment, ues: &[usize]) -> Vec<(usize, usize)> {
    ues.iter().map(|&ue| (ue, strongest_cell(dep, ue))).collect()
}

/// The full max-RSRP association as a graph.
pub fn max_rsrp_graph(dep: &Deployment, d_max_m: f64) -> ConnectionGraph {
    let mut g = ConnectionGraph::from_deployment(dep, d_max_m);
    let all: Vec<usize> = (0..dep.n_ues()).collect();
    for (ue, cell) in max_rsrp_policy(dep, &all) {
        g.connect_mut(cell, ue).expect("fresh graph");
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandoverEvent {
    pub ue_index: usize,
    pub report: MeasurementReport,
}

impl HandoverEvent {
    /// An event carrying the UE's own measurement report from the deployment.
    pub fn from_deployment(dep: &Deployment, ue: usize) -> Result<Self> {
        Ok(Self { ue_index: ue, report: dep.measurement_report(ue)? })
    }

    /// Builds an event from raw `cell -> rsrp` measurements.
    pub fn from_measurements(ue: usize, rsrp_dbm: &BTreeMap<usize, f64>) -> Self {
        let mut entries: Vec<(usize, f64)> = rsrp_dbm.iter().map(|(&c, &r)| (c, r)).collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { ue_index: ue, report: MeasurementReport { ue_index: ue, entries } }
    }
}

/// Local view of the network around a handover request.
#[derive(Debug, Clone)]
pub struct SubGraph {
    pub kept_cells: Vec<usize>,
    pub kept_ues: Vec<usize>,
    /// Global cell index → local index.
    pub cell_local: BTreeMap<usize, usize>,
    /// Global UE index → local index.
    pub ue_local: BTreeMap<usize, usize>,
    pub graph: ConnectionGraph,
    pub cap: CapacityMatrix,
}

impl SubGraph {
    pub fn global_cell(&self, local: usize) -> usize {
        self.kept_cells[local]
    }

    pub fn global_ue(&self, local: usize) -> usize {
        self.kept_ues[local]
    }
}

/// Cells within `hops` steps of `seeds` in the cell graph, ascending.
fn cells_within(adj: &Array2<f64>, seeds: impl IntoIterator<Item = usize>, hops: usize) -> Vec<usize> {
    let n = adj.nrows();
    let mut depth = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for s in seeds {
        if depth[s] != 0 {
            depth[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(c) = queue.pop_front() {
        if depth[c] == hops {
            continue;
        }
        for nb in 0..n {
            if adj[[c, nb]] != 0.0 && depth[nb] == usize::MAX {
                depth[nb] = depth[c] + 1;
                queue.push_back(nb);
            }
        }
    }
    (0..n).filter(|&c| depth[c] != usize::MAX).collect()
}

pub fn extract_subgraph(dep: &Deployment, g: &ConnectionGraph, event: &HandoverEvent, hops: usize) -> Result<SubGraph> {
    if hops == 0 {
        return Err(Error::InvalidArgument("subgraph needs at least one hop".into()));
    }
    check_event(dep, event)?;
    let kept_cells = cells_within(g.cell_adj(), event.report.cells(), hops);
    let cell_local: BTreeMap<usize, usize> = kept_cells.iter().enumerate().map(|(l, &c)| (c, l)).collect();

    let mut kept: BTreeSet<usize> = (0..g.n_ues())
        .filter(|&ue| g.cell_of(ue).is_some_and(|c| cell_local.contains_key(&c)))
        .collect();
    kept.insert(event.ue_index);
    let kept_ues: Vec<usize> = kept.into_iter().collect();
    let ue_local: BTreeMap<usize, usize> = kept_ues.iter().enumerate().map(|(l, &u)| (u, l)).collect();

    let adj = Array2::from_shape_fn((kept_cells.len(), kept_cells.len()), |(a, b)| {
        g.cell_adj()[[kept_cells[a], kept_cells[b]]]
    });
    let assign = kept_ues
        .iter()
        .map(|&ue| g.cell_of(ue).and_then(|c| cell_local.get(&c).copied()))
        .collect();
    let graph = ConnectionGraph::with_assignment(adj, assign, g.d_max_m())?;
    let cap = CapacityMatrix::new(Array2::from_shape_fn((kept_cells.len(), kept_ues.len()), |(a, b)| {
        dep.link_capacity(kept_cells[a], kept_ues[b]).expect("indices in range")
    }))?;

    Ok(SubGraph { kept_cells, kept_ues, cell_local, ue_local, graph, cap })
}

fn check_event(dep: &Deployment, event: &HandoverEvent) -> Result<()> {
    if event.ue_index >= dep.n_ues() {
        return Err(Error::OutOfRange { what: "ue", index: event.ue_index, len: dep.n_ues() });
    }
    if event.report.entries.is_empty() {
        return Err(Error::EmptyReport(event.ue_index));
    }
    for &(cell, rsrp) in &event.report.entries {
        if cell >= dep.n_cells() {
            return Err(Error::OutOfRange { what: "cell", index: cell, len: dep.n_cells() });
        }
        if !rsrp.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite RSRP for cell {cell}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XappConfig {
    pub edge_threshold_db: f64,
    pub d_max_m: f64,
    /// Subgraph radius in cell-graph hops; `None` uses the GNN depth.
    pub hops: Option<usize>,
}

impl Default for XappConfig {
    fn default() -> Self {
        Self {
            edge_threshold_db: DEFAULT_EDGE_THRESHOLD_DB,
            d_max_m: DEFAULT_D_MAX_M,
            hops: None,
        }
    }
}

/// Re-decides the event UE and the cell-edge UEs of its subgraph with the
/// greedy policy. Returns `(ue, cell)` in global indices, in decision order.
pub fn handle_event(
    p: &GnnParams,
    dep: &Deployment,
    g: &ConnectionGraph,
    event: &HandoverEvent,
    cfg: &XappConfig,
) -> Result<Vec<(usize, usize)>> {
    let sub = extract_subgraph(dep, g, event, cfg.hops.unwrap_or(p.layers()))?;
    let classes = classify_ues(dep, cfg.edge_threshold_db)?;

    let mut graph = sub.graph.clone();
    let mut cap = sub.cap.clone();
    let mut candidates = vec![Vec::new(); sub.kept_ues.len()];
    for (local, &ue) in sub.kept_ues.iter().enumerate() {
        if ue == event.ue_index {
            // Reported measurements take precedence over the deployment's link budget.
            for &(cell, rsrp) in &event.report.entries {
                let lc = sub.cell_local[&cell];
                cap.0[[lc, local]] = dep.radio.capacity_from_rsrp(rsrp);
                candidates[local].push(lc);
            }
            graph.disconnect_mut(local);
        } else if classes[ue] == UeClass::CellEdge {
            let current = graph.disconnect_mut(local).expect("kept UEs are assigned");
            let report = dep.measurement_report(ue)?;
            candidates[local] = report.cells().filter_map(|c| sub.cell_local.get(&c).copied()).collect();
            if candidates[local].is_empty() {
                candidates[local].push(current);
            }
        }
    }

    let start = EpisodeState::new(graph, Arc::new(Instance { cap, candidates }))?;
    let (_, decisions) = greedy_rollout(p, &start)?;
    Ok(decisions
        .into_iter()
        .map(|(cell, ue)| (sub.global_ue(ue), sub.global_cell(cell)))
        .collect())
}

/// Applies `(ue, cell)` decisions, moving UEs that were already connected.
pub fn commit(g: &ConnectionGraph, assignments: &[(usize, usize)]) -> Result<ConnectionGraph> {
    let mut next = g.clone();
    for &(ue, cell) in assignments {
        next.disconnect_mut(ue);
        next.connect_mut(cell, ue)?;
    }
    Ok(next)
}

#[derive(Debug, Deserialize)]
struct Request {
    #[serde(rename = "type")]
    kind: String,
    ue: usize,
    rsrp_dbm: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AssignmentMsg {
    pub ue: usize,
    pub cell: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Response {
    pub ue: usize,
    pub assignments: Vec<AssignmentMsg>,
    pub latency_us: u64,
}

#[derive(Debug, Serialize)]
struct ErrorResponse {
    error: String,
}

/// Holds the live association and answers handover requests one at a time.
pub struct XappService {
    params: GnnParams,
    dep: Deployment,
    graph: ConnectionGraph,
    cfg: XappConfig,
}

impl XappService {
    /// Starts from the max-RSRP association of every UE.
    pub fn new(params: GnnParams, dep: Deployment, cfg: XappConfig) -> Self {
        let graph = max_rsrp_graph(&dep, cfg.d_max_m);
        Self { params, dep, graph, cfg }
    }

    pub fn graph(&self) -> &ConnectionGraph {
        &self.graph
    }

    pub fn handle(&mut self, event: &HandoverEvent) -> Result<Vec<(usize, usize)>> {
        let decisions = handle_event(&self.params, &self.dep, &self.graph, event, &self.cfg)?;
        self.graph = commit(&self.graph, &decisions)?;
        Ok(decisions)
    }

    fn parse(&self, line: &str) -> Result<HandoverEvent> {
        let req: Request = serde_json::from_str(line)?;
        if req.kind != "handover" {
            return Err(Error::InvalidArgument(format!("unsupported request type '{}'", req.kind)));
        }
        let mut rsrp = BTreeMap::new();
        for (key, value) in req.rsrp_dbm {
            let cell: usize = key
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("cell id '{key}' is not an integer")))?;
            rsrp.insert(cell, value);
        }
        Ok(HandoverEvent::from_measurements(req.ue, &rsrp))
    }

    /// Answers one request line with one response line (no trailing newline).
    pub fn handle_line(&mut self, line: &str) -> String {
        let started = Instant::now();
        let result = self.parse(line).and_then(|event| {
            let decisions = self.handle(&event)?;
            Ok((event.ue_index, decisions))
        });
        let text = match result {
            Ok((ue, decisions)) => serde_json::to_string(&Response {
                ue,
                assignments: decisions.into_iter().map(|(ue, cell)| AssignmentMsg { ue, cell }).collect(),
                latency_us: started.elapsed().as_micros() as u64,
            }),
            Err(e) => serde_json::to_string(&ErrorResponse { error: e.to_string() }),
        };
        text.expect("response serializes")
    }

    /// Serves requests until end of stream. Every line, blank ones included,
    /// gets exactly one response line.
    pub fn serve_stream<R: BufRead, W: Write>(&mut self, input: R, mut output: W) -> std::io::Result<usize> {
        let mut handled = 0;
        for line in input.lines() {
            let line = line?;
            writeln!(output, "{}", self.handle_line(&line))?;
            output.flush()?;
            handled += 1;
        }
        Ok(handled)
    }

    /// Accepts TCP clients one after another, sharing graph state between them.
    pub fn serve_tcp<A: ToSocketAddrs>(&mut self, addr: A) -> std::io::Result<()> {
        let listener = TcpListener::bind(addr)?;
        for stream in listener.incoming() {
            let stream = stream?;
            let reader = BufReader::new(stream.try_clone()?);
            self.serve_stream(reader, stream)?;
        }
        Ok(())
    }
}
