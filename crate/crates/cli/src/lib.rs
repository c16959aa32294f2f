//! Batch commands behind the `lcnav` binary: scenario simulation, pipeline
//! runs, multi-run comparison and statistics.
//!
//! A simulation directory holds `scenario.toml`, `truth.csv`, `sensors.jsonl`,
//! `los_labels.jsonl`, `stations.csv` and `manifest.json`. A run directory
//! holds the estimates, error series, statistics, CDF and `run.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lcnav::eval::{cdf_points, error_series, format_table, summarize_run, EvalError, RunStats};
use lcnav::io::{
    read_errors_csv, read_nav_csv, read_sensor_log, read_stations_csv, sha256_bytes, sha256_file,
    write_cdf_csv, write_errors_csv, write_filter_csv, write_labels, write_modes_csv,
    write_nav_csv, write_sensor_log, write_stations_csv, write_stats_csv, IoError, Provenance,
};
use lcnav::mechanization::NavState;
use lcnav::pipeline::{run_pipeline, Ablation, ErrorKind, Pipeline, PipelineError, PipelineInputs};
use lcnav::scenario::{
    connectivity_histogram, reference_config, OutageWindow, Scenario, ScenarioConfig, ScenarioError,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TOOL_VERSION: &str = concat!("lcnav ", env!("CARGO_PKG_VERSION"));

/// Name accepted in place of a scenario path for the shipped reference scenario.
pub const REFERENCE_NAME: &str = "reference";

pub const SCENARIO_FILE: &str = "scenario.toml";
pub const TRUTH_FILE: &str = "truth.csv";
pub const SENSORS_FILE: &str = "sensors.jsonl";
pub const LABELS_FILE: &str = "los_labels.jsonl";
pub const STATIONS_FILE: &str = "stations.csv";
pub const SIM_MANIFEST: &str = "manifest.json";
pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e.kind() {
            ErrorKind::Config => CliError::Config(e.to_string()),
            ErrorKind::Data => CliError::Data(e.to_string()),
            ErrorKind::Numerical => CliError::Numerical(e.to_string()),
        }
    }
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| data_err(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| data_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| data_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| data_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| data_err(path, e))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| data_err(path, e))
}

/// Load a scenario configuration from a TOML file or the reference name.
pub fn load_scenario_config(source: &str) -> Result<ScenarioConfig, CliError> {
    if source == REFERENCE_NAME {
        return Ok(reference_config());
    }
    let path = Path::new(source);
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    ScenarioConfig::from_toml(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Summary of a simulation directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub tool: String,
    pub name: String,
    pub seed: u64,
    pub noise: bool,
    pub duration_s: f64,
    pub scenario_sha256: String,
    /// SHA-256 of each stream file.
    pub files: BTreeMap<String, String>,
    pub outages: Vec<OutageWindow>,
    /// Fraction of 5G epochs with 0, 1, 2 and ≥3 LOS stations.
    pub connectivity: [f64; 4],
    pub stations: usize,
}

/// Generate every stream of a scenario into `out`.
pub fn cmd_simulate(
    config: ScenarioConfig,
    seed: Option<u64>,
    out: &Path,
) -> Result<SimManifest, CliError> {
    let mut config = config;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let scenario = Scenario::new(config)?;
    let streams = scenario.simulate();
    ensure_dir(out)?;

    let toml_text = scenario.config.to_toml();
    let scenario_path = out.join(SCENARIO_FILE);
    fs::write(&scenario_path, &toml_text).map_err(|e| data_err(&scenario_path, e))?;
    let scenario_sha256 = sha256_bytes(toml_text.as_bytes());
    let prov = Provenance::new()
        .with("tool", TOOL_VERSION)
        .with("scenario", &scenario.config.name)
        .with("seed", scenario.config.seed)
        .with("scenario_sha256", &scenario_sha256);

    let mut w = create(&out.join(SENSORS_FILE))?;
    write_sensor_log(&mut w, &streams.imu, &streams.odo, &streams.fiveg)?;
    w.flush()
        .map_err(|e| data_err(&out.join(SENSORS_FILE), e))?;
    let mut w = create(&out.join(LABELS_FILE))?;
    write_labels(&mut w, &streams.labels)?;
    w.flush().map_err(|e| data_err(&out.join(LABELS_FILE), e))?;
    let truth: Vec<NavState> = streams.truth.iter().map(|s| s.nav).collect();
    write_nav_csv(create(&out.join(TRUTH_FILE))?, &prov, &truth)?;
    write_stations_csv(create(&out.join(STATIONS_FILE))?, &prov, &scenario.stations)?;

    let mut files = BTreeMap::new();
    for name in [SENSORS_FILE, LABELS_FILE, TRUTH_FILE, STATIONS_FILE] {
        files.insert(name.to_string(), sha256_file(&out.join(name))?);
    }
    let manifest = SimManifest {
        tool: TOOL_VERSION.to_string(),
        name: scenario.config.name.clone(),
        seed: scenario.config.seed,
        noise: scenario.config.noise,
        duration_s: scenario.duration(),
        scenario_sha256,
        files,
        outages: scenario.outages.clone(),
        connectivity: connectivity_histogram(&streams.labels),
        stations: scenario.stations.len(),
    };
    write_json(&out.join(SIM_MANIFEST), &manifest)?;
    log::info!(
        "simulated `{}`: {:.0} s, {} IMU samples, {} 5G measurements, {} stations",
        manifest.name,
        manifest.duration_s,
        streams.imu.len(),
        streams.fiveg.len(),
        manifest.stations
    );
    Ok(manifest)
}

/// Everything a pipeline run needs, as selected on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// A simulation directory, a scenario TOML file or `reference`.
    pub scenario: String,
    pub pipeline: Pipeline,
    pub ablation: Ablation,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn label(&self) -> String {
        let mut label = self.pipeline.name().to_string();
        if !self.ablation.bias_removal {
            label.push_str("+no-bias-removal");
        }
        if !self.ablation.stop_mechanism {
            label.push_str("+no-stop-mechanism");
        }
        if !self.ablation.odometer {
            label.push_str("+no-odometer");
        }
        if let Some(p) = self.ablation.gate_chi2 {
            label.push_str(&format!("+gate-{p}"));
        }
        label
    }
}

/// Summary of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub label: String,
    pub pipeline: Pipeline,
    pub ablation: Ablation,
    pub seed: u64,
    pub scenario_sha256: String,
    pub sensors_sha256: String,
    pub truth_sha256: String,
    pub outages: Vec<OutageWindow>,
    pub epochs: usize,
    pub position_updates: usize,
}

fn resolve_streams(cfg: &RunConfig) -> Result<(PathBuf, SimManifest), CliError> {
    let path = Path::new(&cfg.scenario);
    if path.is_dir() {
        let manifest: SimManifest = read_json(&path.join(SIM_MANIFEST))?;
        if let Some(seed) = cfg.seed {
            if seed != manifest.seed {
                return Err(CliError::Config(format!(
                    "streams in {} were generated with seed {}, not {seed}",
                    path.display(),
                    manifest.seed
                )));
            }
        }
        return Ok((path.to_path_buf(), manifest));
    }
    let config = load_scenario_config(&cfg.scenario)?;
    let dir = cfg.out.join("streams");
    let manifest = cmd_simulate(config, cfg.seed, &dir)?;
    Ok((dir, manifest))
}

fn check_hash(dir: &Path, name: &str, manifest: &SimManifest) -> Result<String, CliError> {
    let actual = sha256_file(&dir.join(name))?;
    match manifest.files.get(name) {
        Some(expected) if *expected != actual => Err(CliError::Data(format!(
            "{} does not match its manifest hash; regenerate the streams",
            dir.join(name).display()
        ))),
        _ => Ok(actual),
    }
}

fn outage_pairs(outages: &[OutageWindow]) -> Vec<(f64, f64)> {
    outages.iter().map(|o| (o.start, o.end())).collect()
}

fn write_stats(
    out: &Path,
    prov: &Provenance,
    label: &str,
    stats: &RunStats,
) -> Result<String, CliError> {
    let h_label = format!("{label} (horizontal)");
    write_stats_csv(
        create(&out.join("stats.csv"))?,
        prov,
        &[(label, &stats.error_3d), (&h_label, &stats.horizontal)],
    )?;
    let mut text = String::from("3D positioning error\n");
    text.push_str(&format_table(&[(label, &stats.error_3d)]));
    text.push_str("\nHorizontal positioning error\n");
    text.push_str(&format_table(&[(label, &stats.horizontal)]));
    for (k, (w3, wh)) in stats
        .error_3d
        .windows
        .iter()
        .zip(&stats.horizontal.windows)
        .enumerate()
    {
        text.push_str(&format!(
            "outage {} [{:.1}, {:.1}] s: 3D rms {:.3} m max {:.3} m, horizontal rms {:.3} m max {:.3} m\n",
            k + 1,
            w3.start,
            w3.end,
            w3.rms,
            w3.max,
            wh.rms,
            wh.max
        ));
    }
    let path = out.join("stats.txt");
    fs::write(&path, &text).map_err(|e| data_err(&path, e))?;
    Ok(text)
}

/// Run one pipeline over a simulation and write estimates and statistics to `cfg.out`.
pub fn cmd_run(cfg: &RunConfig) -> Result<(RunManifest, RunStats), CliError> {
    ensure_dir(&cfg.out)?;
    let (dir, sim) = resolve_streams(cfg)?;
    let scenario_text = fs::read_to_string(dir.join(SCENARIO_FILE))
        .map_err(|e| data_err(&dir.join(SCENARIO_FILE), e))?;
    let scenario_sha256 = sha256_bytes(scenario_text.as_bytes());
    if scenario_sha256 != sim.scenario_sha256 {
        return Err(CliError::Data(format!(
            "{} does not match its manifest hash",
            dir.join(SCENARIO_FILE).display()
        )));
    }
    let config = ScenarioConfig::from_toml(&scenario_text)?;
    let sensors_sha256 = check_hash(&dir, SENSORS_FILE, &sim)?;
    let truth_sha256 = check_hash(&dir, TRUTH_FILE, &sim)?;
    check_hash(&dir, STATIONS_FILE, &sim)?;

    let fiveg_cfg = config.fiveg_config();
    let log = read_sensor_log(
        open(&dir.join(SENSORS_FILE))?,
        fiveg_cfg.sigma_range,
        fiveg_cfg.sigma_aod,
    )
    .map_err(|e| data_err(&dir.join(SENSORS_FILE), e))?;
    let truth = read_nav_csv(open(&dir.join(TRUTH_FILE))?)
        .map_err(|e| data_err(&dir.join(TRUTH_FILE), e))?;
    let stations = read_stations_csv(open(&dir.join(STATIONS_FILE))?)
        .map_err(|e| data_err(&dir.join(STATIONS_FILE), e))?;
    let reference = truth
        .first()
        .ok_or_else(|| CliError::Data("truth file is empty".into()))?;
    let frame =
        lcnav::frames::LocalFrame::new(config.anchor()?, lcnav::frames::EarthModel::wgs84());

    let inputs = PipelineInputs {
        imu: &log.imu,
        odo: &log.odo,
        fiveg: &log.fiveg,
        stations: &stations,
        frame,
        fiveg_cfg,
        spec: config.sensor_spec(),
        reference_attitude: reference.att,
        static_window_s: config.motion.initial_static_s,
    };
    let output = run_pipeline(cfg.pipeline, &inputs, &cfg.ablation)?;
    let label = cfg.label();
    let prov = Provenance::new()
        .with("tool", TOOL_VERSION)
        .with("pipeline", &label)
        .with(
            "ablation",
            serde_json::to_string(&cfg.ablation).unwrap_or_default(),
        )
        .with("seed", sim.seed)
        .with("scenario_sha256", &scenario_sha256)
        .with("sensors_sha256", &sensors_sha256)
        .with("truth_sha256", &truth_sha256)
        .with("config", scenario_text.trim_end());

    let out = &cfg.out;
    write_nav_csv(
        create(&out.join("estimates.csv"))?,
        &prov,
        &output.estimates,
    )?;
    if let Some(run) = &output.filter {
        write_filter_csv(create(&out.join("filter.csv"))?, &prov, &run.epochs)?;
    }
    if !output.modes.is_empty() {
        write_modes_csv(create(&out.join("modes.csv"))?, &prov, &output.modes)?;
    }
    let errors = error_series(&output.estimates, &truth, &frame)?;
    write_errors_csv(create(&out.join("errors.csv"))?, &prov, &errors)?;
    let windows = outage_pairs(&sim.outages);
    let stats = summarize_run(&errors, &windows, 0.0)?;
    write_stats(out, &prov, &label, &stats)?;
    let e3: Vec<f64> = errors.iter().map(|e| e.error_3d).collect();
    let eh: Vec<f64> = errors.iter().map(|e| e.horizontal).collect();
    let (c3, ch) = (cdf_points(&e3)?, cdf_points(&eh)?);
    write_cdf_csv(
        create(&out.join("cdf.csv"))?,
        &prov,
        &[("error_3d", &c3), ("horizontal", &ch)],
    )?;

    let manifest = RunManifest {
        tool: TOOL_VERSION.to_string(),
        label,
        pipeline: cfg.pipeline,
        ablation: cfg.ablation,
        seed: sim.seed,
        scenario_sha256,
        sensors_sha256,
        truth_sha256,
        outages: sim.outages.clone(),
        epochs: output.estimates.len(),
        position_updates: output.position_updates.len(),
    };
    write_json(&out.join(RUN_MANIFEST), &manifest)?;
    Ok((manifest, stats))
}

/// A completed run read back from its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub stats: RunStats,
    pub cdf_3d: Vec<(f64, f64)>,
}

/// Read a run directory and recompute its statistics from the stored error series.
pub fn load_run(dir: &Path, tail: f64) -> Result<LoadedRun, CliError> {
    let manifest: RunManifest = read_json(&dir.join(RUN_MANIFEST))?;
    let errors = read_errors_csv(open(&dir.join("errors.csv"))?)
        .map_err(|e| data_err(&dir.join("errors.csv"), e))?;
    let stats = summarize_run(&errors, &outage_pairs(&manifest.outages), tail)?;
    let e3: Vec<f64> = errors.iter().map(|e| e.error_3d).collect();
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        manifest,
        stats,
        cdf_3d: cdf_points(&e3)?,
    })
}

/// Side-by-side statistics of runs over identical input streams.
pub fn cmd_compare(runs: &[PathBuf], out: &Path) -> Result<String, CliError> {
    if runs.len() < 2 {
        return Err(CliError::Config(
            "compare needs at least two run directories".into(),
        ));
    }
    let loaded = runs
        .iter()
        .map(|d| load_run(d, 0.0))
        .collect::<Result<Vec<_>, _>>()?;
    let first = &loaded[0];
    for r in &loaded[1..] {
        let (a, b) = (&first.manifest, &r.manifest);
        if a.sensors_sha256 != b.sensors_sha256
            || a.scenario_sha256 != b.scenario_sha256
            || a.truth_sha256 != b.truth_sha256
        {
            return Err(CliError::Data(format!(
                "refusing to compare {} and {}: they were run on different input streams",
                first.dir.display(),
                r.dir.display()
            )));
        }
    }
    let mut names: Vec<String> = Vec::with_capacity(loaded.len());
    for (i, r) in loaded.iter().enumerate() {
        let base = r.manifest.label.clone();
        let name = if loaded.iter().filter(|o| o.manifest.label == base).count() > 1 {
            format!("{base}#{}", i + 1)
        } else {
            base
        };
        names.push(name);
    }
    ensure_dir(out)?;
    let prov = Provenance::new()
        .with("tool", TOOL_VERSION)
        .with(
            "runs",
            runs.iter()
                .map(|d| d.display().to_string())
                .collect::<Vec<_>>()
                .join(", "),
        )
        .with("scenario_sha256", &first.manifest.scenario_sha256)
        .with("sensors_sha256", &first.manifest.sensors_sha256);
    let cols: Vec<(&str, &lcnav::eval::ErrorStats)> = names
        .iter()
        .map(String::as_str)
        .zip(loaded.iter().map(|r| &r.stats.error_3d))
        .collect();
    write_stats_csv(create(&out.join("compare_stats.csv"))?, &prov, &cols)?;
    let hcols: Vec<(&str, &lcnav::eval::ErrorStats)> = names
        .iter()
        .map(String::as_str)
        .zip(loaded.iter().map(|r| &r.stats.horizontal))
        .collect();
    write_stats_csv(
        create(&out.join("compare_stats_horizontal.csv"))?,
        &prov,
        &hcols,
    )?;
    let series: Vec<(&str, &[(f64, f64)])> = names
        .iter()
        .map(String::as_str)
        .zip(loaded.iter().map(|r| r.cdf_3d.as_slice()))
        .collect();
    write_cdf_csv(create(&out.join("compare_cdf.csv"))?, &prov, &series)?;

    let mut text = String::from("3D positioning error\n");
    text.push_str(&format_table(&cols));
    text.push_str("\nHorizontal positioning error\n");
    text.push_str(&format_table(&hcols));
    for k in 0..first.manifest.outages.len() {
        text.push_str(&format!("\noutage {} RMS / max (m):", k + 1));
        for (name, r) in names.iter().zip(&loaded) {
            if let Some(w) = r.stats.error_3d.windows.get(k) {
                text.push_str(&format!("  {name} {:.3} / {:.3}", w.rms, w.max));
            }
        }
    }
    text.push('\n');
    let path = out.join("compare.txt");
    fs::write(&path, &text).map_err(|e| data_err(&path, e))?;
    Ok(text)
}

/// Statistics table of one run, recomputed with an optional post-outage tail.
pub fn cmd_stats(run: &Path, tail: f64) -> Result<String, CliError> {
    if tail.is_nan() || tail < 0.0 {
        return Err(CliError::Config(format!("tail must be >= 0, got {tail}")));
    }
    let r = load_run(run, tail)?;
    let label = r.manifest.label.as_str();
    let mut text = format!("{label}: 3D positioning error\n");
    text.push_str(&format_table(&[(label, &r.stats.error_3d)]));
    text.push_str(&format!("\n{label}: horizontal positioning error\n"));
    text.push_str(&format_table(&[(label, &r.stats.horizontal)]));
    for (k, w) in r.stats.error_3d.windows.iter().enumerate() {
        text.push_str(&format!(
            "outage {} [{:.1}, {:.1}] s (+{tail} s): rms {:.3} m, max {:.3} m over {} epochs\n",
            k + 1,
            w.start,
            w.end,
            w.rms,
            w.max,
            w.n
        ));
    }
    Ok(text)
}
