use checkcal::calib_opt::{calibrate, CalibError};
use checkcal::config::{CalibConfig, ConfigError};
use checkcal::dataset::{generate_dataset, load_samples, DatasetError};
use checkcal::io::{read_cloud, read_extrinsics, read_ppm, write_csv, write_extrinsics, write_ppm, ExtrinsicsReport, Image, IoError};
use checkcal::overlay::{project_cloud, render_overlay};
use checkcal::sim::SimError;
use checkcal::study::{fit_levels, histograms, simulate_study, spread_stats, spread_study, SimulateParams, SpreadParams, StudyError};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Checkerboard-based lidar to camera extrinsic calibration.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `calibration.seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (directory for `generate`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Estimates the extrinsics from a manifest of scan/corner pairs.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// CSV with columns `cloud,corners`.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Error against sample count under feature-level noise.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Normal noise levels in degrees.
        #[arg(long, value_delimiter = ',', default_values_t = [1.5, 2.0, 2.5])]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        n_min: usize,
        #[arg(long, default_value_t = 15)]
        n_max: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Diameter of the centre-noise sphere, metres.
        #[arg(long, default_value_t = 0.01)]
        centre_diameter: f64,
        /// Exponential-fit summary CSV; defaults to `<out>` with a `.fit.csv` suffix.
        #[arg(long)]
        fit_out: Option<PathBuf>,
    },
    /// Spread of the estimates over random subsets of a manifest.
    Spread {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Subset sizes.
        #[arg(long = "n", value_delimiter = ',', default_values_t = [3, 4, 9])]
        n_values: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        combos: usize,
        /// Histogram CSV; defaults to `<out>` with a `.hist.csv` suffix.
        #[arg(long)]
        hist_out: Option<PathBuf>,
    },
    /// Projects a scan into the image and writes a PPM overlay.
    Project {
        #[command(flatten)]
        common: Common,
        /// Extrinsics JSON written by `calibrate`.
        #[arg(long)]
        extrinsics: PathBuf,
        /// Point cloud, CSV or ASCII PCD.
        #[arg(long)]
        cloud: PathBuf,
        /// Binary PPM drawn underneath the points.
        #[arg(long)]
        background: Option<PathBuf>,
        /// Projected points CSV `u,v,range`; defaults to `<out>` with a `.csv` suffix.
        #[arg(long)]
        points_out: Option<PathBuf>,
    },
    /// Writes a simulated dataset (scans, corners, manifest) from the `[simulation]` section.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 9)]
        samples: usize,
    },
}

/// Failure with its process exit status.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    const GENERIC: u8 = 1;
    const CONFIG: u8 = 2;
    const EXTRACTION: u8 = 3;
    const OPTIMIZATION: u8 = 4;

    fn new(code: u8, msg: impl Into<String>) -> Self {
        Self { code, msg: msg.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::new(Self::CONFIG, format!("config: {e}"))
    }
}

impl From<CalibError> for Failure {
    fn from(e: CalibError) -> Self {
        let code = match e {
            CalibError::TooFewSamples(_) | CalibError::Settings(_) => Self::CONFIG,
            _ => Self::OPTIMIZATION,
        };
        Self::new(code, format!("optimization: {e}"))
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        let code = match e {
            DatasetError::Manifest(_)
            | DatasetError::TooFewSamples(_)
            | DatasetError::Config(_)
            | DatasetError::Sim(SimError::RegionTooSmall(_)) => Self::CONFIG,
            DatasetError::Sample { .. } | DatasetError::Sim(_) => Self::EXTRACTION,
            DatasetError::Io(_) => Self::GENERIC,
        };
        Self::new(code, e.to_string())
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Calib(c) => c.into(),
            StudyError::Sim(s) => Self::new(Self::CONFIG, format!("simulation: {s}")),
            StudyError::Invalid(m) => Self::new(Self::CONFIG, m),
        }
    }
}

fn output(e: IoError) -> Failure {
    Failure::new(Failure::GENERIC, format!("output: {e}"))
}

fn load_config(common: &Common) -> Result<CalibConfig, Failure> {
    let mut cfg = CalibConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.calibration.seed = seed;
    }
    Ok(cfg)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_calibrate(common: &Common, manifest: &Path) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let k = cfg.intrinsics()?;
    let samples = load_samples(manifest, &cfg)?;
    let result = calibrate(&samples, &cfg.settings(), &k)?;
    write_extrinsics(&common.out, &ExtrinsicsReport::new(&result, &samples, &k)).map_err(output)?;
    let e = result.euler;
    let t = result.extrinsics.translation;
    println!(
        "euler [rad] {:.6} {:.6} {:.6}  translation [m] {:.6} {:.6} {:.6}  fitness {:.6e}",
        e.theta_x, e.theta_y, e.theta_z, t.x, t.y, t.z, result.fitness.total
    );
    Ok(())
}

#[derive(Serialize)]
struct FitRow {
    noise_level: f64,
    metric: &'static str,
    a: f64,
    b: f64,
    c: f64,
    sse: f64,
    #[serde(rename = "N_eval")]
    n_eval: usize,
    fit_at_n_eval: f64,
}

fn cmd_simulate(
    common: &Common,
    levels: &[f64],
    n_range: (usize, usize),
    trials: usize,
    centre_diameter: f64,
    fit_out: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let (n_min, n_max) = n_range;
    if n_min < 3 || n_max < n_min {
        return Err(Failure::new(Failure::CONFIG, "need 3 <= n-min <= n-max"));
    }
    if levels.iter().chain([&centre_diameter]).any(|l| l.is_nan() || *l < 0.0) {
        return Err(Failure::new(Failure::CONFIG, "noise levels and centre diameter must be non-negative"));
    }
    let params = SimulateParams {
        levels_deg: levels.to_vec(),
        n_values: (n_min..=n_max).collect(),
        trials,
        centre_diameter,
        seed: cfg.calibration.seed,
        settings: cfg.settings(),
    };
    let rows = simulate_study(&cfg.scene()?, &cfg.region, &cfg.simulation.poses, &params)?;
    write_csv(&common.out, &rows).map_err(output)?;
    let fits: Vec<FitRow> = fit_levels(&rows)
        .into_iter()
        .flat_map(|f| {
            [("translation", f.translation), ("rotation", f.rotation)].map(|(metric, e)| FitRow {
                noise_level: f.noise_level,
                metric,
                a: e.a,
                b: e.b,
                c: e.c,
                sse: e.sse,
                n_eval: n_max,
                fit_at_n_eval: e.eval(n_max as f64),
            })
        })
        .collect();
    for f in &fits {
        println!("level {:>4}  {:<11} fit at N={}: {:.6}", f.noise_level, f.metric, f.n_eval, f.fit_at_n_eval);
    }
    let fit_path = fit_out.map_or_else(|| with_suffix(&common.out, ".fit.csv"), Path::to_path_buf);
    write_csv(&fit_path, &fits).map_err(output)
}

#[derive(Serialize)]
struct StatsRow {
    #[serde(rename = "N")]
    n: usize,
    parameter: &'static str,
    mean: f64,
    sd: f64,
}

fn cmd_spread(common: &Common, manifest: &Path, n_values: &[usize], combos: usize, hist_out: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let samples = load_samples(manifest, &cfg)?;
    if let Some(&n) = n_values.iter().find(|&&n| n < 3) {
        return Err(Failure::new(Failure::CONFIG, format!("N = {n}: a minimum of 3 checkerboard poses is required")));
    }
    let params = SpreadParams { n_values: n_values.to_vec(), combos, seed: cfg.calibration.seed, settings: cfg.settings() };
    let rows = spread_study(&samples, &cfg.intrinsics()?, &params)?;
    write_csv(&common.out, &rows).map_err(output)?;
    let hist_path = hist_out.map_or_else(|| with_suffix(&common.out, ".hist.csv"), Path::to_path_buf);
    write_csv(&hist_path, histograms(&rows)).map_err(output)?;
    let stats: Vec<StatsRow> = spread_stats(&rows)
        .iter()
        .flat_map(|s| {
            (0..6).map(move |j| StatsRow { n: s.n, parameter: checkcal::study::SpreadRow::PARAMETERS[j], mean: s.mean[j], sd: s.sd[j] })
        })
        .collect();
    for s in &stats {
        println!("N={:<3} {:<8} mean {:>12.6} sd {:.6}", s.n, s.parameter, s.mean, s.sd);
    }
    write_csv(&with_suffix(&common.out, ".stats.csv"), &stats).map_err(output)
}

fn cmd_project(common: &Common, extrinsics: &Path, cloud: &Path, background: Option<&Path>, points_out: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let k = cfg.intrinsics()?;
    let size = cfg.image_size();
    let input = |e: IoError| Failure::new(Failure::EXTRACTION, format!("input: {e}"));
    let ext = read_extrinsics(extrinsics).map_err(|e| Failure::new(Failure::CONFIG, format!("extrinsics: {e}")))?;
    let cloud = read_cloud(cloud).map_err(input)?;
    let canvas = match background {
        Some(p) => {
            let img = read_ppm(p).map_err(input)?;
            if (img.width, img.height) != (size.width, size.height) {
                return Err(Failure::new(
                    Failure::CONFIG,
                    format!("background is {}x{}, camera is {}x{}", img.width, img.height, size.width, size.height),
                ));
            }
            img
        }
        None => Image::black(size.width, size.height),
    };
    let points = project_cloud(&cloud, &ext, &k, size);
    write_ppm(&common.out, &render_overlay(&points, canvas)).map_err(output)?;
    let csv_path = points_out.map_or_else(|| with_suffix(&common.out, ".csv"), Path::to_path_buf);
    if points.is_empty() {
        // The CSV writer derives the header from the first row.
        std::fs::write(&csv_path, "u,v,range\n").map_err(|e| output(IoError::Io { path: csv_path.display().to_string(), msg: e.to_string() }))?;
    } else {
        write_csv(&csv_path, &points).map_err(output)?;
    }
    println!("{} of {} points projected into the image", points.len(), cloud.len());
    Ok(())
}

fn cmd_generate(common: &Common, samples: usize) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let manifest = generate_dataset(&cfg, samples, cfg.calibration.seed, &common.out)?;
    println!("wrote {samples} samples, manifest {}", manifest.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Calibrate { common, manifest } => cmd_calibrate(common, manifest),
        Command::Simulate { common, levels, n_min, n_max, trials, centre_diameter, fit_out } => {
            cmd_simulate(common, levels, (*n_min, *n_max), *trials, *centre_diameter, fit_out.as_deref())
        }
        Command::Spread { common, manifest, n_values, combos, hist_out } => {
            cmd_spread(common, manifest, n_values, *combos, hist_out.as_deref())
        }
        Command::Project { common, extrinsics, cloud, background, points_out } => {
            cmd_project(common, extrinsics, cloud, background.as_deref(), points_out.as_deref())
        }
        Command::Generate { common, samples } => cmd_generate(common, *samples),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
