//! Experiment driver: deployment generation, training, evaluation sweeps
//! against the max-RSRP baseline, and the xApp service entry point.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dqn::{self, greedy_rollout, EpisodeState, TrainConfig, TrainLog};
use crate::error::{Error, Result};
use crate::gnn::GnnParams;
use crate::graph::{CapacityMatrix, ConnectionGraph};
use crate::metrics;
use crate::net_model::{generate_deployment, Deployment, Hexagon, RadioConfig};
use crate::xapp::{max_rsrp_graph, XappConfig, XappService};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const GAIN_REPORT_FILE: &str = "gain_report.csv";
pub const GAIN_SUMMARY_FILE: &str = "gain_summary.csv";

const STREAM_TRAIN: u64 = 1;
const STREAM_SIZE_SWEEP: u64 = 2;
const STREAM_DENSITY_SWEEP: u64 = 3;
const STREAM_SERVE: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_cells_list: Vec<usize>,
    pub n_ues_list: Vec<usize>,
    /// Cells per km². Each point uses the first entries of the size lists.
    pub density_list: Vec<f64>,
    /// Hexagon used for training and for the size sweep.
    pub hex_diameter_m: f64,
    pub n_train_deployments: usize,
    pub n_eval_deployments: usize,
    pub radio: RadioConfig,
    /// `seed` here drives both weight init and every deployment draw.
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Pre-generated training deployments; generated inline when absent.
    pub deployments_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub model_path: Option<PathBuf>,
    /// Deployment served by `serve`; generated from the seed when absent.
    pub serve_deployment: Option<PathBuf>,
    /// `host:port` for TCP; standard input/output when absent.
    pub serve_endpoint: Option<String>,
    pub hops: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_cells_list: vec![6],
            n_ues_list: vec![50],
            density_list: Vec::new(),
            hex_diameter_m: 500.0,
            n_train_deployments: 1000,
            n_eval_deployments: 50,
            radio: RadioConfig::default(),
            train: TrainConfig::default(),
            deployments_dir: None,
            out_dir: PathBuf::from("out"),
            model_path: None,
            serve_deployment: None,
            serve_endpoint: None,
            hops: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("experiment config: {msg}")));
        if self.n_cells_list.is_empty() || self.n_ues_list.is_empty() {
            return bad("n_cells_list and n_ues_list must be nonempty");
        }
        if self.n_cells_list.contains(&0) || self.n_ues_list.contains(&0) {
            return bad("cell and UE counts must be >= 1");
        }
        if self.density_list.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return bad("densities must be positive");
        }
        if !(self.hex_diameter_m > 0.0 && self.hex_diameter_m.is_finite()) {
            return bad("hex_diameter_m must be positive");
        }
        if self.n_eval_deployments == 0 {
            return bad("n_eval_deployments must be >= 1");
        }
        self.radio.validate()?;
        self.train.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn xapp(&self) -> XappConfig {
        XappConfig {
            edge_threshold_db: self.train.edge_threshold_db,
            d_max_m: self.train.d_max_m,
            hops: self.hops,
        }
    }

    fn training_shape(&self) -> (usize, usize) {
        (self.n_cells_list[0], self.n_ues_list[0])
    }
}

/// Independent deployment seed per (experiment seed, stream, index).
pub fn deployment_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.rotate_left(48) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic training set for a config.
pub fn training_deployments(cfg: &ExperimentConfig) -> Result<Vec<Deployment>> {
    let (n, m) = cfg.training_shape();
    (0..cfg.n_train_deployments as u64)
        .map(|i| generate_deployment(deployment_seed(cfg.seed(), STREAM_TRAIN, i), n, m, cfg.hex_diameter_m, &cfg.radio))
        .collect()
}

pub trait AssociationPolicy: Sync {
    fn associate(&self, dep: &Deployment) -> Result<ConnectionGraph>;
}

/// Max-RSRP association for the stable UEs, greedy GNN decisions for the
/// cell-edge ones.
pub struct GnnPolicy {
    pub params: GnnParams,
    pub edge_threshold_db: f64,
    pub d_max_m: f64,
}

impl AssociationPolicy for GnnPolicy {
    fn associate(&self, dep: &Deployment) -> Result<ConnectionGraph> {
        let start = EpisodeState::initial(dep, self.edge_threshold_db, self.d_max_m)?;
        let (end, _) = greedy_rollout(&self.params, &start)?;
        Ok(end.graph)
    }
}

pub struct MaxRsrp {
    pub d_max_m: f64,
}

impl AssociationPolicy for MaxRsrp {
    fn associate(&self, dep: &Deployment) -> Result<ConnectionGraph> {
        Ok(max_rsrp_graph(dep, self.d_max_m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub u_th: f64,
    pub u_cov: f64,
    pub u_jain: f64,
}

impl MetricTriple {
    pub fn of(g: &ConnectionGraph, cap: &CapacityMatrix) -> Result<Self> {
        Ok(Self {
            u_th: metrics::sum_throughput(g, cap),
            u_cov: metrics::coverage(g, cap)?,
            u_jain: metrics::jain_index(g)?,
        })
    }

    fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Throughput => self.u_th,
            Metric::Coverage => self.u_cov,
            Metric::Jain => self.u_jain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "U_th")]
    Throughput,
    #[serde(rename = "U_cov")]
    Coverage,
    #[serde(rename = "U_Jain")]
    Jain,
}

pub const METRICS: [Metric; 3] = [Metric::Throughput, Metric::Coverage, Metric::Jain];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Size,
    Density,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub sweep: Sweep,
    pub n_cells: usize,
    pub n_ues: usize,
    pub hex_diameter_m: f64,
}

impl SweepPoint {
    pub fn density_per_km2(&self) -> f64 {
        self.n_cells as f64 / (Hexagon::new(self.hex_diameter_m).area_m2() * 1e-6)
    }
}

/// One evaluated deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub point: SweepPoint,
    pub deployment_id: usize,
    pub seed: u64,
    pub policy: MetricTriple,
    pub baseline: MetricTriple,
}

impl GainRow {
    /// `None` when the baseline value is not positive.
    pub fn gain_pct(&self, metric: Metric) -> Option<f64> {
        let b = self.baseline.get(metric);
        (b > 0.0).then(|| 100.0 * (self.policy.get(metric) - b) / b)
    }
}

#[derive(Debug, Clone, Serialize)]
struct GainRowCsv {
    sweep: Sweep,
    n_cells: usize,
    n_ues: usize,
    density_per_km2: f64,
    deployment_id: usize,
    seed: u64,
    policy_u_th: f64,
    policy_u_cov: f64,
    policy_u_jain: f64,
    baseline_u_th: f64,
    baseline_u_cov: f64,
    baseline_u_jain: f64,
}

/// Aggregate over one sweep point and metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainSummary {
    pub sweep: Sweep,
    pub n_cells: usize,
    pub n_ues: usize,
    pub density_per_km2: f64,
    pub metric: Metric,
    pub n_rows: usize,
    /// Rows dropped because the baseline value was not positive.
    pub n_excluded: usize,
    pub median_gain_pct: f64,
    pub mean_gain_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GainReport {
    pub rows: Vec<GainRow>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

impl GainReport {
    /// Summaries in row order of first appearance of each point.
    pub fn summaries(&self) -> Vec<GainSummary> {
        let mut points: Vec<SweepPoint> = Vec::new();
        for row in &self.rows {
            if !points.contains(&row.point) {
                points.push(row.point);
            }
        }
        let mut out = Vec::new();
        for point in points {
            let rows: Vec<&GainRow> = self.rows.iter().filter(|r| r.point == point).collect();
            for metric in METRICS {
                let gains: Vec<f64> = rows.iter().filter_map(|r| r.gain_pct(metric)).collect();
                out.push(GainSummary {
                    sweep: point.sweep,
                    n_cells: point.n_cells,
                    n_ues: point.n_ues,
                    density_per_km2: point.density_per_km2(),
                    metric,
                    n_rows: rows.len(),
                    n_excluded: rows.len() - gains.len(),
                    median_gain_pct: median(&gains),
                    mean_gain_pct: mean(&gains),
                });
            }
        }
        out
    }

    pub fn summary(&self, point_index: usize, metric: Metric) -> Option<GainSummary> {
        self.summaries().into_iter().filter(|s| s.metric == metric).nth(point_index)
    }

    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(GainRowCsv {
                sweep: r.point.sweep,
                n_cells: r.point.n_cells,
                n_ues: r.point.n_ues,
                density_per_km2: r.point.density_per_km2(),
                deployment_id: r.deployment_id,
                seed: r.seed,
                policy_u_th: r.policy.u_th,
                policy_u_cov: r.policy.u_cov,
                policy_u_jain: r.policy.u_jain,
                baseline_u_th: r.baseline.u_th,
                baseline_u_cov: r.baseline.u_cov,
                baseline_u_jain: r.baseline.u_jain,
            })?;
        }
        w.flush().map_err(|e| Error::io("<gain report>", e))?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in self.summaries() {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| Error::io("<gain summary>", e))?;
        Ok(())
    }
}

/// Evaluates both policies on the same deployments. Rows come back in
/// deployment order whatever the thread count.
pub fn evaluate_point(
    policy: &dyn AssociationPolicy,
    baseline: &dyn AssociationPolicy,
    point: SweepPoint,
    seeds: &[u64],
    radio: &RadioConfig,
) -> Result<Vec<GainRow>> {
    seeds
        .par_iter()
        .enumerate()
        .map(|(id, &seed)| {
            let dep = generate_deployment(seed, point.n_cells, point.n_ues, point.hex_diameter_m, radio)?;
            let cap = CapacityMatrix::from_deployment(&dep);
            Ok(GainRow {
                point,
                deployment_id: id,
                seed,
                policy: MetricTriple::of(&policy.associate(&dep)?, &cap)?,
                baseline: MetricTriple::of(&baseline.associate(&dep)?, &cap)?,
            })
        })
        .collect()
}

/// Size sweep over the cartesian product of the size lists, then one density
/// point per entry of `density_list`.
pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<SweepPoint> {
    let mut points = Vec::new();
    for &n in &cfg.n_cells_list {
        for &m in &cfg.n_ues_list {
            points.push(SweepPoint { sweep: Sweep::Size, n_cells: n, n_ues: m, hex_diameter_m: cfg.hex_diameter_m });
        }
    }
    let (n, m) = cfg.training_shape();
    for &density in &cfg.density_list {
        let hex = Hexagon::for_density(n, density);
        points.push(SweepPoint { sweep: Sweep::Density, n_cells: n, n_ues: m, hex_diameter_m: hex.diameter_m });
    }
    points
}

pub fn evaluate(cfg: &ExperimentConfig, policy: &dyn AssociationPolicy, baseline: &dyn AssociationPolicy) -> Result<GainReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (k, point) in sweep_points(cfg).into_iter().enumerate() {
        let stream = match point.sweep {
            Sweep::Size => STREAM_SIZE_SWEEP,
            Sweep::Density => STREAM_DENSITY_SWEEP,
        };
        let seeds: Vec<u64> = (0..cfg.n_eval_deployments as u64)
            .map(|i| deployment_seed(cfg.seed(), stream, ((k as u64) << 32) | i))
            .collect();
        rows.extend(evaluate_point(policy, baseline, point, &seeds, &cfg.radio)?);
    }
    Ok(GainReport { rows })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_cells: usize,
    pub n_ues: usize,
    pub hex_diameter_m: f64,
    pub deployments: Vec<ManifestEntry>,
}

/// Writes the training deployments plus a manifest into `cfg.out_dir`.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    if cfg.n_train_deployments == 0 {
        return Err(Error::InvalidArgument("generate: n_train_deployments must be >= 1".into()));
    }
    ensure_dir(&cfg.out_dir)?;
    let (n, m) = cfg.training_shape();
    let mut entries = Vec::with_capacity(cfg.n_train_deployments);
    for (i, dep) in training_deployments(cfg)?.into_iter().enumerate() {
        let file = format!("deployment_{i:05}.json");
        dep.save(&cfg.out_dir.join(&file))?;
        entries.push(ManifestEntry { file, seed: dep.seed });
    }
    let manifest = Manifest { n_cells: n, n_ues: m, hex_diameter_m: cfg.hex_diameter_m, deployments: entries };
    write_file(&cfg.out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Loads deployments in manifest order.
pub fn load_deployments(dir: &Path) -> Result<Vec<Deployment>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    manifest.deployments.iter().map(|e| Deployment::load(&dir.join(&e.file))).collect()
}

pub struct TrainOutput {
    pub params: GnnParams,
    pub log: TrainLog,
    pub model_path: PathBuf,
    pub log_path: PathBuf,
}

/// Trains and writes the model and the per-episode log into `cfg.out_dir`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let deployments = match &cfg.deployments_dir {
        Some(dir) => load_deployments(dir)?,
        None => training_deployments(cfg)?,
    };
    let (params, log) = dqn::train(&cfg.train, &deployments)?;
    ensure_dir(&cfg.out_dir)?;
    let model_path = model_path(cfg);
    let log_path = cfg.out_dir.join(TRAIN_LOG_FILE);
    params.save(&model_path)?;
    log.save_csv(&log_path)?;
    Ok(TrainOutput { params, log, model_path, log_path })
}

fn model_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.model_path.clone().unwrap_or_else(|| cfg.out_dir.join(MODEL_FILE))
}

/// Evaluates a saved model and writes the per-deployment and summary CSVs.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<GainReport> {
    cfg.validate()?;
    let params = GnnParams::load(&model_path(cfg))?;
    let policy = GnnPolicy {
        params,
        edge_threshold_db: cfg.train.edge_threshold_db,
        d_max_m: cfg.train.d_max_m,
    };
    let report = evaluate(cfg, &policy, &MaxRsrp { d_max_m: cfg.train.d_max_m })?;
    ensure_dir(&cfg.out_dir)?;
    let mut rows = Vec::new();
    report.write_rows_csv(&mut rows)?;
    write_file(&cfg.out_dir.join(GAIN_REPORT_FILE), &rows)?;
    let mut summary = Vec::new();
    report.write_summary_csv(&mut summary)?;
    write_file(&cfg.out_dir.join(GAIN_SUMMARY_FILE), &summary)?;
    Ok(report)
}

/// Builds the service for `cmd_serve`.
pub fn service(cfg: &ExperimentConfig) -> Result<XappService> {
    cfg.validate()?;
    let params = GnnParams::load(&model_path(cfg))?;
    let dep = match &cfg.serve_deployment {
        Some(path) => Deployment::load(path)?,
        None => {
            let (n, m) = cfg.training_shape();
            generate_deployment(deployment_seed(cfg.seed(), STREAM_SERVE, 0), n, m, cfg.hex_diameter_m, &cfg.radio)?
        }
    };
    Ok(XappService::new(params, dep, cfg.xapp()))
}

/// Serves standard input, or TCP clients when an endpoint is configured.
pub fn cmd_serve(cfg: &ExperimentConfig) -> Result<()> {
    let mut svc = service(cfg)?;
    match &cfg.serve_endpoint {
        Some(addr) => svc.serve_tcp(addr.as_str()).map_err(|e| Error::io(addr, e)),
        None => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            svc.serve_stream(stdin.lock(), stdout.lock()).map_err(|e| Error::io("<stdio>", e))?;
            Ok(())
        }
    }
}
