//! Scenario configuration, user deployment, sweeps and CSV output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crlb::SignalSpec;
use crate::error::{Error, Result};
use crate::fbhca::{self, AlgoConfig, Scenario, Scheme};
use crate::geometry::{self, ConstellationParams, EarthModel, GroundPosition};
use crate::linkbudget::LinkParams;

/// Longitude/latitude box, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Region {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl Default for Region {
    fn default() -> Self {
        Self {
            lon_min: -70.0,
            lon_max: -60.0,
            lat_min: -5.0,
            lat_max: 5.0,
        }
    }
}

impl Region {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lon_min <= self.lon_max
            && self.lat_min <= self.lat_max
            && (-90.0..=90.0).contains(&self.lat_min)
            && (-90.0..=90.0).contains(&self.lat_max)
            && self.lon_min.is_finite()
            && self.lon_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::param("region", "need lon_min <= lon_max and -90 <= lat_min <= lat_max <= 90"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// Orbit heights of the height sweep, km.
    pub heights_km: Vec<f64>,
    /// Orbit height of the snapshot sweep, km.
    pub snapshot_height_km: f64,
    /// Positioning-satellite counts of the snapshot sweep.
    pub positioning_sats: Vec<usize>,
    pub schemes: Vec<Scheme>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            heights_km: (8..=15).map(|h| h as f64 * 100.0).collect(),
            snapshot_height_km: 1200.0,
            positioning_sats: vec![4, 6, 8],
            schemes: Scheme::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Users `J`.
    pub users: usize,
    /// Snapshots `S`, spread evenly over one orbital period.
    pub snapshots: usize,
    pub output_dir: PathBuf,
    /// Write measured runtimes; zero otherwise so outputs stay reproducible.
    pub record_runtime: bool,
    pub earth: EarthModel,
    pub constellation: ConstellationParams,
    pub link: LinkParams,
    pub signal: SignalSpec,
    pub algo: AlgoConfig,
    pub region: Region,
    pub sweep: SweepSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            users: 50,
            snapshots: 20,
            output_dir: PathBuf::from("out"),
            record_runtime: false,
            earth: EarthModel::default(),
            constellation: ConstellationParams::default(),
            link: LinkParams::default(),
            signal: SignalSpec::default(),
            algo: AlgoConfig::default(),
            region: Region::default(),
            sweep: SweepSpec::default(),
        }
    }
}

/// Altitude below which the default constellation no longer covers the region well.
const COVERAGE_WARNING_KM: f64 = 1100.0;

impl ScenarioConfig {
    /// Checks every field; returns warnings for settings that are legal but suspect.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.users < 1 {
            return Err(Error::param("users", "must be >= 1"));
        }
        if self.snapshots < 1 {
            return Err(Error::param("snapshots", "must be >= 1"));
        }
        self.earth.validate()?;
        self.constellation.validate()?;
        self.link.validate()?;
        self.signal.validate()?;
        self.algo.validate()?;
        self.region.validate()?;
        if self.sweep.heights_km.is_empty() {
            return Err(Error::param("sweep.heights_km", "must not be empty"));
        }
        for &h in self.sweep.heights_km.iter().chain([&self.sweep.snapshot_height_km]) {
            if !(h > 0.0) {
                return Err(Error::param("sweep.heights_km", format!("altitude {h} must be > 0")));
            }
        }
        if self.sweep.positioning_sats.iter().any(|&n| n < 4) || self.sweep.positioning_sats.is_empty() {
            return Err(Error::param("sweep.positioning_sats", "needs entries, each >= 4"));
        }
        if self.sweep.schemes.is_empty() {
            return Err(Error::param("sweep.schemes", "must not be empty"));
        }
        let mut warnings = Vec::new();
        let low: Vec<f64> = self
            .sweep
            .heights_km
            .iter()
            .chain([&self.sweep.snapshot_height_km, &self.constellation.altitude_km])
            .copied()
            .filter(|&h| h < COVERAGE_WARNING_KM)
            .collect();
        if !low.is_empty() && self.constellation.total() <= 2400 {
            warnings.push(format!(
                "altitudes {low:?} km with {} satellites: expect coverage gaps below about {COVERAGE_WARNING_KM} km",
                self.constellation.total()
            ));
        }
        Ok(warnings)
    }

    /// Constellation at `altitude_km`, other parameters unchanged.
    pub fn constellation_at(&self, altitude_km: f64) -> Result<geometry::Constellation> {
        let params = ConstellationParams {
            altitude_km,
            ..self.constellation
        };
        geometry::build_constellation(params, self.earth)
    }
}

/// Parses a TOML config; omitted fields take their defaults.
pub fn parse_config(text: &str, path: &Path) -> Result<(ScenarioConfig, Vec<String>)> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let warnings = cfg.validate()?;
    Ok((cfg, warnings))
}

pub fn load_config(path: &Path) -> Result<(ScenarioConfig, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path)
}

/// `count` users uniform in longitude and latitude inside `region`.
pub fn deploy_users(region: &Region, count: usize, seed: u64, earth: &EarthModel) -> Vec<GroundPosition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: f64, hi: f64| if lo < hi { rng.random_range(lo..hi) } else { lo };
    (0..count)
        .map(|_| {
            let lon = draw(region.lon_min, region.lon_max);
            let lat = draw(region.lat_min, region.lat_max);
            GroundPosition::from_geodetic(lat, lon, earth)
        })
        .collect()
}

/// Independent seed for one (sweep point, snapshot) cell.
fn cell_seed(base: u64, point: usize, snapshot: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(((point as u64) << 32) | snapshot as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    OrbitHeight,
    Snapshot,
}

impl SweepKind {
    fn column(self) -> &'static str {
        match self {
            SweepKind::OrbitHeight => "orbit height (km)",
            SweepKind::Snapshot => "snapshot",
        }
    }
}

/// One (sweep point, scheme, N_pos) aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub n_pos: usize,
    /// Mean over covered (user, snapshot) pairs; NaN when none is covered.
    pub avg_crlb_m: f64,
    /// Covered (user, snapshot) pairs.
    pub covered_users: usize,
    pub excluded_users: usize,
    pub runtime_ms: u64,
    /// Mean interference-free SNR of the associated beam per anchor rank, dB.
    pub mean_snr_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub kind: SweepKind,
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentResult {
    pub fn rows_for(&self, scheme: Scheme, n_pos: usize) -> impl Iterator<Item = &ExperimentRow> {
        self.rows.iter().filter(move |r| r.scheme == scheme && r.n_pos == n_pos)
    }
}

/// Running sums of one scheme over the snapshots of one sweep point.
#[derive(Debug, Clone, Default)]
struct Tally {
    crlb_sum: f64,
    covered: usize,
    excluded: usize,
    runtime_ms: u64,
    snr_sum: Vec<f64>,
    snr_count: Vec<usize>,
}

impl Tally {
    fn merge(&mut self, other: &Tally) {
        self.crlb_sum += other.crlb_sum;
        self.covered += other.covered;
        self.excluded += other.excluded;
        self.runtime_ms += other.runtime_ms;
        if self.snr_sum.len() < other.snr_sum.len() {
            self.snr_sum.resize(other.snr_sum.len(), 0.0);
            self.snr_count.resize(other.snr_count.len(), 0);
        }
        for (i, (s, c)) in other.snr_sum.iter().zip(&other.snr_count).enumerate() {
            self.snr_sum[i] += s;
            self.snr_count[i] += c;
        }
    }

    fn row(&self, sweep_value: f64, scheme: Scheme, n_pos: usize) -> ExperimentRow {
        ExperimentRow {
            sweep_value,
            scheme,
            n_pos,
            avg_crlb_m: if self.covered > 0 { self.crlb_sum / self.covered as f64 } else { f64::NAN },
            covered_users: self.covered,
            excluded_users: self.excluded,
            runtime_ms: self.runtime_ms,
            mean_snr_db: self
                .snr_sum
                .iter()
                .zip(&self.snr_count)
                .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
                .collect(),
        }
    }
}

/// Snapshot `snapshot` of the constellation at `altitude_km` with the given users.
pub fn build_scenario(
    cfg: &ScenarioConfig,
    constellation: &geometry::Constellation,
    snapshot: usize,
    users: &[GroundPosition],
    seed: u64,
) -> Result<Scenario> {
    Ok(Scenario {
        earth: cfg.earth,
        sats: constellation.propagate(snapshot, cfg.snapshots)?,
        users: users.to_vec(),
        link: cfg.link.clone(),
        signal: cfg.signal,
        seed,
    })
}

/// Runs every scheme on one scenario.
fn run_cell(scenario: &Scenario, algo: &AlgoConfig, schemes: &[Scheme], timing: bool) -> Result<Vec<Tally>> {
    let mut out = Vec::with_capacity(schemes.len());
    for &scheme in schemes {
        let start = Instant::now();
        let outcome = fbhca::run_scheme(scheme, scenario, algo);
        let runtime_ms = if timing { start.elapsed().as_millis() as u64 } else { 0 };
        let mut tally = Tally {
            runtime_ms,
            snr_sum: vec![0.0; algo.positioning_sats],
            snr_count: vec![0; algo.positioning_sats],
            ..Tally::default()
        };
        match outcome {
            Ok(sol) => {
                for (u, c) in sol.evaluation.crlb_m.iter().enumerate() {
                    match c {
                        Some(v) => {
                            tally.crlb_sum += v;
                            tally.covered += 1;
                        }
                        None => tally.excluded += 1,
                    }
                    for (rank, &snr) in sol.evaluation.snr_db[u].iter().enumerate() {
                        if snr.is_finite() {
                            tally.snr_sum[rank] += snr;
                            tally.snr_count[rank] += 1;
                        }
                    }
                }
                tally.excluded += sol.deployment.excluded.len();
            }
            Err(Error::Coverage { .. }) => tally.excluded = scenario.users.len(),
            Err(e) => return Err(e),
        }
        out.push(tally);
    }
    Ok(out)
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::param("threads", e.to_string()))
}

/// Work item: sweep point index, N_pos, altitude, snapshot.
#[derive(Debug, Clone, Copy)]
struct Cell {
    point: usize,
    n_pos: usize,
    altitude_km: f64,
    snapshot: usize,
}

fn run_cells(cfg: &ScenarioConfig, cells: &[Cell], threads: Option<usize>) -> Result<Vec<Vec<Tally>>> {
    let users = deploy_users(&cfg.region, cfg.users, cfg.seed, &cfg.earth);
    let mut altitudes: Vec<f64> = cells.iter().map(|c| c.altitude_km).collect();
    altitudes.sort_by(f64::total_cmp);
    altitudes.dedup();
    let constellations = altitudes
        .iter()
        .map(|&h| cfg.constellation_at(h))
        .collect::<Result<Vec<_>>>()?;
    let pool = thread_pool(threads)?;
    let results: Vec<Result<Vec<Tally>>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let idx = altitudes.iter().position(|&h| h == cell.altitude_km).expect("altitude listed");
                let seed = cell_seed(cfg.seed, cell.point, cell.snapshot);
                let scenario = build_scenario(cfg, &constellations[idx], cell.snapshot, &users, seed)?;
                let algo = AlgoConfig {
                    positioning_sats: cell.n_pos,
                    ..cfg.algo.clone()
                };
                run_cell(&scenario, &algo, &cfg.sweep.schemes, cfg.record_runtime)
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Average bound per orbit height and scheme, over users and snapshots.
pub fn run_orbit_height_sweep(cfg: &ScenarioConfig, threads: Option<usize>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let n_pos = cfg.algo.positioning_sats;
    let mut cells = Vec::new();
    for (point, &h) in cfg.sweep.heights_km.iter().enumerate() {
        for snapshot in 0..cfg.snapshots {
            cells.push(Cell {
                point,
                n_pos,
                altitude_km: h,
                snapshot,
            });
        }
    }
    let tallies = run_cells(cfg, &cells, threads)?;
    let mut rows = Vec::new();
    for (point, &h) in cfg.sweep.heights_km.iter().enumerate() {
        for (s, &scheme) in cfg.sweep.schemes.iter().enumerate() {
            let mut total = Tally::default();
            for (cell, t) in cells.iter().zip(&tallies) {
                if cell.point == point {
                    total.merge(&t[s]);
                }
            }
            rows.push(total.row(h, scheme, n_pos));
        }
    }
    Ok(ExperimentResult {
        kind: SweepKind::OrbitHeight,
        rows,
    })
}

/// Average bound per snapshot, scheme and positioning-satellite count at a fixed height.
pub fn run_snapshot_sweep(cfg: &ScenarioConfig, threads: Option<usize>) -> Result<ExperimentResult> {
    run_snapshots(cfg, &cfg.sweep.positioning_sats, threads)
}

fn run_snapshots(cfg: &ScenarioConfig, n_pos_list: &[usize], threads: Option<usize>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &n_pos in n_pos_list {
        for snapshot in 0..cfg.snapshots {
            cells.push(Cell {
                point: 0,
                n_pos,
                altitude_km: cfg.sweep.snapshot_height_km,
                snapshot,
            });
        }
    }
    let tallies = run_cells(cfg, &cells, threads)?;
    let mut rows = Vec::new();
    for (cell, t) in cells.iter().zip(&tallies) {
        for (s, &scheme) in cfg.sweep.schemes.iter().enumerate() {
            rows.push(t[s].row(cell.snapshot as f64, scheme, cell.n_pos));
        }
    }
    Ok(ExperimentResult {
        kind: SweepKind::Snapshot,
        rows,
    })
}

/// Mean per-satellite SNR per scheme, satellites ranked by elevation.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrTable {
    pub n_pos: usize,
    pub rows: Vec<(Scheme, Vec<f64>)>,
}

/// Snapshot sweep with the configured `N_pos` only, reduced to per-rank SNR means.
pub fn run_table2(cfg: &ScenarioConfig, threads: Option<usize>) -> Result<SnrTable> {
    let n_pos = cfg.algo.positioning_sats;
    let result = run_snapshots(cfg, &[n_pos], threads)?;
    Ok(snr_table(&result, n_pos, &cfg.sweep.schemes))
}

/// Averages the per-row SNR means of `result` (weighted by covered pairs).
pub fn snr_table(result: &ExperimentResult, n_pos: usize, schemes: &[Scheme]) -> SnrTable {
    let rows = schemes
        .iter()
        .map(|&scheme| {
            let mut sum = vec![0.0; n_pos];
            let mut weight = vec![0.0; n_pos];
            for row in result.rows_for(scheme, n_pos) {
                for (rank, &snr) in row.mean_snr_db.iter().enumerate().take(n_pos) {
                    if snr.is_finite() {
                        sum[rank] += snr * row.covered_users as f64;
                        weight[rank] += row.covered_users as f64;
                    }
                }
            }
            let means = sum.iter().zip(&weight).map(|(s, w)| if *w > 0.0 { s / w } else { f64::NAN }).collect();
            (scheme, means)
        })
        .collect();
    SnrTable { n_pos, rows }
}

/// `%g`-style formatting with six significant digits.
pub fn format_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (5 - exp) as usize, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
}

pub const CSV_HEADER: [&str; 6] = ["sweep_value", "algorithm", "n_pos", "avg_crlb_m", "covered_users", "runtime_ms"];

pub fn emit_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in &result.rows {
        w.write_record([
            format_sig(r.sweep_value),
            r.scheme.label().to_string(),
            r.n_pos.to_string(),
            format_sig(r.avg_crlb_m),
            r.covered_users.to_string(),
            r.runtime_ms.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn emit_snr_table(table: &SnrTable, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut header = vec!["algorithm".to_string()];
    header.extend((1..=table.n_pos).map(|i| format!("sat{i}_snr_db")));
    w.write_record(&header).map_err(csv_err)?;
    for (scheme, snr) in &table.rows {
        let mut rec = vec![scheme.label().to_string()];
        rec.extend(snr.iter().map(|&s| format_sig(s)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Gnuplot script that plots an emitted sweep CSV.
pub fn write_plot_script(result: &ExperimentResult, csv_name: &str, path: &Path) -> Result<()> {
    let mut series = Vec::new();
    let mut keys: Vec<(Scheme, usize)> = result.rows.iter().map(|r| (r.scheme, r.n_pos)).collect();
    keys.sort();
    keys.dedup();
    for (scheme, n_pos) in keys {
        series.push(format!(
            "'{csv_name}' using 1:(strcol(2) eq '{label}' && $3 == {n_pos} ? $4 : 1/0) with linespoints title '{label} N={n_pos}'",
            label = scheme.label()
        ));
    }
    let text = format!(
        "# gnuplot {path}\nset datafile separator ','\nset key autotitle columnhead\nset xlabel '{x}'\nset ylabel 'average CRLB (m)'\nset logscale y\nplot {plots}\n",
        path = path.display(),
        x = result.kind.column(),
        plots = series.join(", \\\n     ")
    );
    fs::write(path, text).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_table_defaults() {
        let (cfg, _) = parse_config("", Path::new("empty.toml")).unwrap();
        assert_eq!(cfg.link.carrier_hz, 2e9);
        assert_eq!(cfg.link.bandwidth_hz, 30e6);
        assert_eq!(cfg.link.reuse, 3);
        assert_eq!(cfg.algo.coverage_beams, 61);
        assert_eq!(cfg.algo.per_beam_w, 110.0);
        assert_eq!(cfg.algo.per_sat_w, 6100.0);
        assert_eq!(cfg.link.noise_figure_db, 7.0);
        assert_eq!(cfg.link.antenna_temp_k, 290.0);
        assert_eq!(cfg.signal.subcarrier_spacing_hz, 15e3);
        assert_eq!(cfg.constellation.total(), 2400);
        assert_eq!(cfg.users, 50);
        assert_eq!(cfg.snapshots, 20);
    }

    #[test]
    fn low_altitude_is_flagged_and_bad_values_rejected() {
        let (_, warnings) = parse_config(
            "[constellation]\naltitude_km = 700\n[sweep]\nheights_km = [700]\nsnapshot_height_km = 700\n",
            Path::new("low.toml"),
        )
        .unwrap();
        assert!(warnings.iter().any(|w| w.contains("coverage")));
        let err = parse_config("[algo]\nper_sat_w = -5\n", Path::new("neg.toml")).unwrap_err();
        assert!(err.to_string().contains("per_sat_w"));
        let err = parse_config("users = 0\n", Path::new("j.toml")).unwrap_err();
        assert!(err.to_string().contains("users"));
        let err = parse_config("[link]\ncarrier = 2\n", Path::new("typo.toml")).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        assert!(err.to_string().contains("carrier"));
    }

    #[test]
    fn user_deployment() {
        let earth = EarthModel::default();
        let point = Region {
            lon_min: -65.0,
            lon_max: -65.0,
            lat_min: 2.0,
            lat_max: 2.0,
        };
        let one = deploy_users(&point, 1, 9, &earth);
        assert!((one[0].lat_deg - 2.0).abs() < 1e-9 && (one[0].lon_deg + 65.0).abs() < 1e-9);

        let region = Region::default();
        assert_eq!(deploy_users(&region, 20, 4, &earth), deploy_users(&region, 20, 4, &earth));
        let many = deploy_users(&region, 10_000, 5, &earth);
        let mean_lon = many.iter().map(|g| g.lon_deg).sum::<f64>() / many.len() as f64;
        assert!((mean_lon + 65.0).abs() < 0.1, "{mean_lon}");
        assert!(many.iter().all(|g| (-70.0..=-60.0).contains(&g.lon_deg) && (-5.0..=5.0).contains(&g.lat_deg)));
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(1200.0), "1200");
        assert_eq!(format_sig(3.14159265), "3.14159");
        assert_eq!(format_sig(0.000123456789), "0.000123457");
        assert_eq!(format_sig(1.5e-7), "1.5e-07");
        assert_eq!(format_sig(123456789.0), "1.23457e+08");
        assert_eq!(format_sig(-2.5), "-2.5");
        assert_eq!(format_sig(999999.7), "1e+06");
        assert_eq!(format_sig(f64::NAN), "nan");
    }

    #[test]
    fn empty_result_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/empty.csv");
        emit_csv(
            &ExperimentResult {
                kind: SweepKind::OrbitHeight,
                rows: Vec::new(),
            },
            &p,
        )
        .unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "sweep_value,algorithm,n_pos,avg_crlb_m,covered_users,runtime_ms\n");
    }

    #[test]
    fn cell_seeds_differ() {
        let a = cell_seed(7, 0, 0);
        assert_ne!(a, cell_seed(7, 0, 1));
        assert_ne!(a, cell_seed(7, 1, 0));
        assert_eq!(a, cell_seed(7, 0, 0));
    }
}
