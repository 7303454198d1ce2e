//! Random hexagonal deployments and the downlink link budget.
//!
//! Cells and UEs are dropped uniformly inside a flat-top hexagon centred on
//! the origin. RSRP follows a LOS street-canyon style pathloss with frozen
//! lognormal shadowing, and link capacity is the AWGN Shannon bound expressed
//! as spectral efficiency.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CELL_HEIGHT_M: f64 = 10.0;
pub const UE_HEIGHT_M: f64 = 1.5;
pub const DEFAULT_MIN_CELL_SEP_M: f64 = 50.0;
pub const MAX_SAMPLING_ATTEMPTS: usize = 100_000;
const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Position {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Position> for [f64; 2] {
    fn from(p: Position) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    pub tx_power_dbm: f64,
    pub carrier_ghz: f64,
    pub bandwidth_mhz: f64,
    pub noise_figure_db: f64,
    pub shadow_sigma_db: f64,
    /// Number of strongest cells a UE includes in its measurement report.
    pub report_set_size: usize,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 33.0,
            carrier_ghz: 30.0,
            bandwidth_mhz: 100.0,
            noise_figure_db: 7.0,
            shadow_sigma_db: 4.0,
            report_set_size: 4,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("radio config: {msg}")));
        if !self.tx_power_dbm.is_finite() {
            return bad("tx_power_dbm must be finite");
        }
        if !(self.carrier_ghz > 0.0 && self.carrier_ghz.is_finite()) {
            return bad("carrier_ghz must be > 0");
        }
        if !(self.bandwidth_mhz > 0.0 && self.bandwidth_mhz.is_finite()) {
            return bad("bandwidth_mhz must be > 0");
        }
        if !self.noise_figure_db.is_finite() {
            return bad("noise_figure_db must be finite");
        }
        if !(self.shadow_sigma_db >= 0.0 && self.shadow_sigma_db.is_finite()) {
            return bad("shadow_sigma_db must be >= 0");
        }
        if self.report_set_size < 2 {
            return bad("report_set_size must be >= 2");
        }
        Ok(())
    }

    /// Thermal noise over the full band plus the receiver noise figure.
    pub fn noise_power_dbm(&self) -> f64 {
        THERMAL_NOISE_DBM_PER_HZ + 10.0 * (self.bandwidth_mhz * 1e6).log10() + self.noise_figure_db
    }

    /// Pathloss in dB at a 3-D distance, clamped below at 1 m.
    pub fn pathloss_db(&self, distance_3d_m: f64) -> f64 {
        32.4 + 21.0 * distance_3d_m.max(1.0).log10() + 20.0 * self.carrier_ghz.log10()
    }

    /// Spectral efficiency `log2(1 + SNR)` for a received power in dBm.
    pub fn capacity_from_rsrp(&self, rsrp_dbm: f64) -> f64 {
        let snr = 10f64.powf((rsrp_dbm - self.noise_power_dbm()) / 10.0);
        (1.0 + snr).log2()
    }
}

/// A flat-top hexagon centred at the origin; `diameter` is vertex to vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hexagon {
    pub diameter_m: f64,
}

impl Hexagon {
    pub fn new(diameter_m: f64) -> Self {
        Self { diameter_m }
    }

    /// Diameter of the hexagon holding `n_cells` at the given density (cells/km²).
    pub fn for_density(n_cells: usize, cells_per_km2: f64) -> Self {
        let area_m2 = n_cells as f64 / cells_per_km2 * 1e6;
        let radius = (2.0 * area_m2 / (3.0 * 3f64.sqrt())).sqrt();
        Self::new(2.0 * radius)
    }

    pub fn circumradius(&self) -> f64 {
        self.diameter_m / 2.0
    }

    pub fn area_m2(&self) -> f64 {
        let r = self.circumradius();
        1.5 * 3f64.sqrt() * r * r
    }

    pub fn contains(&self, p: &Position) -> bool {
        let r = self.circumradius();
        let s3 = 3f64.sqrt();
        let (ax, ay) = (p.x.abs(), p.y.abs());
        ay <= s3 / 2.0 * r && s3 * ax + ay <= s3 * r
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Option<Position> {
        let r = self.circumradius();
        let half_h = 3f64.sqrt() / 2.0 * r;
        for _ in 0..MAX_SAMPLING_ATTEMPTS {
            let p = Position::new(rng.random_range(-r..=r), rng.random_range(-half_h..=half_h));
            if self.contains(&p) {
                return Some(p);
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub seed: u64,
    pub hex_diameter_m: f64,
    pub radio: RadioConfig,
    pub cells: Vec<Position>,
    pub ues: Vec<Position>,
    /// Frozen shadow-fading draws, `shadow_db[cell][ue]`.
    pub shadow_db: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementReport {
    pub ue_index: usize,
    /// `(cell, rsrp_dbm)` pairs, strongest first.
    pub entries: Vec<(usize, f64)>,
}

impl MeasurementReport {
    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(c, _)| c)
    }
}

pub fn generate_deployment(
    seed: u64,
    n_cells: usize,
    n_ues: usize,
    hex_diameter_m: f64,
    radio: &RadioConfig,
) -> Result<Deployment> {
    generate_deployment_with_separation(seed, n_cells, n_ues, hex_diameter_m, radio, DEFAULT_MIN_CELL_SEP_M)
}

pub fn generate_deployment_with_separation(
    seed: u64,
    n_cells: usize,
    n_ues: usize,
    hex_diameter_m: f64,
    radio: &RadioConfig,
    min_cell_sep_m: f64,
) -> Result<Deployment> {
    if n_cells == 0 || n_ues == 0 {
        return Err(Error::InvalidArgument(format!(
            "deployment needs at least one cell and one UE (got {n_cells} cells, {n_ues} UEs)"
        )));
    }
    if !(hex_diameter_m > 0.0 && hex_diameter_m.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "hex diameter must be > 0 (got {hex_diameter_m})"
        )));
    }
    radio.validate()?;

    let hex = Hexagon::new(hex_diameter_m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outside = || Error::SamplingFailed {
        attempts: MAX_SAMPLING_ATTEMPTS,
        constraint: "point inside hexagon".into(),
    };

    let mut cells: Vec<Position> = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        let mut placed = None;
        for _ in 0..MAX_SAMPLING_ATTEMPTS {
            let p = hex.sample(&mut rng).ok_or_else(outside)?;
            if cells.iter().all(|c| c.distance(&p) >= min_cell_sep_m) {
                placed = Some(p);
                break;
            }
        }
        cells.push(placed.ok_or_else(|| Error::SamplingFailed {
            attempts: MAX_SAMPLING_ATTEMPTS,
            constraint: format!(
                "minimum cell separation {min_cell_sep_m} m for {n_cells} cells in a {hex_diameter_m} m hexagon"
            ),
        })?);
    }

    let ues = (0..n_ues)
        .map(|_| hex.sample(&mut rng).ok_or_else(outside))
        .collect::<Result<Vec<_>>>()?;

    let normal = Normal::new(0.0, radio.shadow_sigma_db)
        .map_err(|e| Error::InvalidArgument(format!("shadow sigma: {e}")))?;
    let shadow_db = (0..n_cells)
        .map(|_| (0..n_ues).map(|_| normal.sample(&mut rng)).collect())
        .collect();

    Ok(Deployment {
        seed,
        hex_diameter_m,
        radio: radio.clone(),
        cells,
        ues,
        shadow_db,
    })
}

impl Deployment {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_ues(&self) -> usize {
        self.ues.len()
    }

    pub fn hexagon(&self) -> Hexagon {
        Hexagon::new(self.hex_diameter_m)
    }

    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        let (n, m) = (self.n_cells(), self.n_ues());
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument("deployment has no cells or no UEs".into()));
        }
        if self.shadow_db.len() != n || self.shadow_db.iter().any(|row| row.len() != m) {
            return Err(Error::Shape(format!("shadow_db must be {n}x{m}")));
        }
        let hex = self.hexagon();
        if let Some(p) = self.cells.iter().chain(&self.ues).find(|p| !hex.contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "position ({}, {}) lies outside the hexagon",
                p.x, p.y
            )));
        }
        Ok(())
    }

    fn check(&self, cell: usize, ue: usize) -> Result<()> {
        if cell >= self.n_cells() {
            return Err(Error::OutOfRange { what: "cell", index: cell, len: self.n_cells() });
        }
        if ue >= self.n_ues() {
            return Err(Error::OutOfRange { what: "ue", index: ue, len: self.n_ues() });
        }
        Ok(())
    }

    pub fn distance_3d(&self, cell: usize, ue: usize) -> f64 {
        let planar = self.cells[cell].distance(&self.ues[ue]);
        planar.hypot(CELL_HEIGHT_M - UE_HEIGHT_M)
    }

    pub fn rsrp_dbm(&self, cell: usize, ue: usize) -> Result<f64> {
        self.check(cell, ue)?;
        Ok(self.rsrp_unchecked(cell, ue))
    }

    fn rsrp_unchecked(&self, cell: usize, ue: usize) -> f64 {
        self.radio.tx_power_dbm
            - self.radio.pathloss_db(self.distance_3d(cell, ue))
            - self.shadow_db[cell][ue]
    }

    pub fn link_capacity(&self, cell: usize, ue: usize) -> Result<f64> {
        self.check(cell, ue)?;
        Ok(self.radio.capacity_from_rsrp(self.rsrp_unchecked(cell, ue)))
    }

    /// RSRP of every cell at one UE, indexed by cell.
    pub fn rsrp_column(&self, ue: usize) -> Vec<f64> {
        (0..self.n_cells()).map(|c| self.rsrp_unchecked(c, ue)).collect()
    }

    /// All cells at one UE, strongest first, ties to the lower cell index.
    pub fn ranked_cells(&self, ue: usize) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = self.rsrp_column(ue).into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }

    pub fn measurement_report(&self, ue: usize) -> Result<MeasurementReport> {
        if ue >= self.n_ues() {
            return Err(Error::OutOfRange { what: "ue", index: ue, len: self.n_ues() });
        }
        let mut entries = self.ranked_cells(ue);
        entries.truncate(self.radio.report_set_size.min(self.n_cells()));
        Ok(MeasurementReport { ue_index: ue, entries })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dep: Deployment = serde_json::from_str(text)?;
        dep.validate()?;
        Ok(dep)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cell(shadow: f64) -> Deployment {
        Deployment {
            seed: 0,
            hex_diameter_m: 500.0,
            radio: RadioConfig::default(),
            cells: vec![Position::new(0.0, 0.0), Position::new(100.0, 0.0)],
            ues: vec![Position::new(0.0, 0.0), Position::new(40.0, 0.0)],
            shadow_db: vec![vec![shadow; 2]; 2],
        }
    }

    #[test]
    fn full_size_deployment() {
        let dep = generate_deployment(7, 6, 50, 500.0, &RadioConfig::default()).unwrap();
        assert_eq!(dep.n_cells(), 6);
        assert_eq!(dep.n_ues(), 50);
        dep.validate().unwrap();
        for (i, a) in dep.cells.iter().enumerate() {
            for b in &dep.cells[i + 1..] {
                assert!(a.distance(b) >= DEFAULT_MIN_CELL_SEP_M);
            }
        }
    }

    #[test]
    fn minimal_deployment() {
        let dep = generate_deployment(3, 1, 1, 100.0, &RadioConfig::default()).unwrap();
        assert_eq!(dep.shadow_db.len(), 1);
        assert_eq!(dep.shadow_db[0].len(), 1);
    }

    #[test]
    fn same_seed_same_deployment() {
        let r = RadioConfig::default();
        let a = generate_deployment(11, 4, 9, 300.0, &r).unwrap();
        let b = generate_deployment(11, 4, 9, 300.0, &r).unwrap();
        assert_eq!(a, b);
        let c = generate_deployment(12, 4, 9, 300.0, &r).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_separation_names_constraint() {
        let err =
            generate_deployment_with_separation(1, 20, 1, 100.0, &RadioConfig::default(), 80.0)
                .unwrap_err();
        match err {
            Error::SamplingFailed { constraint, .. } => {
                assert!(constraint.contains("separation"))
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let r = RadioConfig::default();
        assert!(generate_deployment(0, 0, 5, 500.0, &r).is_err());
        assert!(generate_deployment(0, 2, 0, 500.0, &r).is_err());
        assert!(generate_deployment(0, 2, 5, 0.0, &r).is_err());
        let bad = RadioConfig { report_set_size: 1, ..r };
        assert!(generate_deployment(0, 2, 5, 500.0, &bad).is_err());
    }

    #[test]
    fn link_budget_is_additive() {
        // Pick the shadow term so that PL + shadow = 100 dB.
        let mut dep = two_cell(0.0);
        let pl = dep.radio.pathloss_db(dep.distance_3d(1, 1));
        dep.shadow_db[1][1] = 100.0 - pl;
        assert!((dep.rsrp_dbm(1, 1).unwrap() - -67.0).abs() < 1e-12);
    }

    #[test]
    fn pathloss_at_zero_planar_offset() {
        let dep = two_cell(0.0);
        let expected = 32.4 + 21.0 * 8.5f64.log10() + 20.0 * 30f64.log10();
        assert!((dep.distance_3d(0, 0) - 8.5).abs() < 1e-12);
        assert!((33.0 - dep.rsrp_dbm(0, 0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn doubling_distance_costs_21_log2() {
        let r = RadioConfig::default();
        let drop = r.pathloss_db(200.0) - r.pathloss_db(100.0);
        assert!((drop - 21.0 * 2f64.log10()).abs() < 1e-12);
        assert!((drop - 6.32).abs() < 0.005);
    }

    #[test]
    fn capacity_at_known_snr() {
        let r = RadioConfig::default();
        let n0 = r.noise_power_dbm();
        assert!((n0 - (-174.0 + 80.0 + 7.0)).abs() < 1e-12);
        assert!((r.capacity_from_rsrp(n0) - 1.0).abs() < 1e-12);
        let snr3 = n0 + 10.0 * 3f64.log10();
        assert!((r.capacity_from_rsrp(snr3) - 2.0).abs() < 1e-12);
        assert_eq!(r.capacity_from_rsrp(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn report_is_sorted_and_truncated() {
        let dep = generate_deployment(5, 6, 10, 500.0, &RadioConfig::default()).unwrap();
        for ue in 0..10 {
            let rep = dep.measurement_report(ue).unwrap();
            assert_eq!(rep.entries.len(), 4);
            assert!(rep.entries.windows(2).all(|w| w[0].1 >= w[1].1));
        }
        let single = generate_deployment(5, 1, 3, 500.0, &RadioConfig::default()).unwrap();
        assert_eq!(single.measurement_report(2).unwrap().entries.len(), 1);
    }

    #[test]
    fn report_ties_prefer_lower_index() {
        let mut dep = two_cell(0.0);
        // UE 1 sits midway between the two cells.
        dep.ues[1] = Position::new(50.0, 0.0);
        let rep = dep.measurement_report(1).unwrap();
        assert_eq!(rep.entries[0].1, rep.entries[1].1);
        assert_eq!(rep.cells().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn json_round_trip() {
        let dep = generate_deployment(99, 3, 7, 500.0, &RadioConfig::default()).unwrap();
        let back = Deployment::from_json(&dep.to_json().unwrap()).unwrap();
        assert_eq!(dep, back);
        let v: serde_json::Value = serde_json::from_str(&dep.to_json().unwrap()).unwrap();
        assert!(v["cells"][0].is_array());
        assert_eq!(v["shadow_db"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn density_hexagon_matches_reference_setup() {
        // 6 cells in a 500 m hexagon is about 37 cells per km².
        let hex = Hexagon::new(500.0);
        let density = 6.0 / (hex.area_m2() / 1e6);
        assert!((density - 37.0).abs() < 0.5, "{density}");
        let back = Hexagon::for_density(6, density);
        assert!((back.diameter_m - 500.0).abs() < 1e-9);
    }
}
