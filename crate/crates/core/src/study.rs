//! Experiments built on the calibrator: error against sample count under
//! feature-level noise, and the spread of estimates over random subsets of
//! a dataset.

use crate::calib_opt::{calibrate, derive_seed, CalibError, CalibrationSettings, Sample};
use crate::geom::{rotation_error, translation_error, CameraIntrinsics};
use crate::lidar_features::RegionBounds;
use crate::sim::{perturb_features, NoiseSpec, PoseSampling, Scene, SimError};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StudyError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateParams {
    pub levels_deg: Vec<f64>,
    pub n_values: Vec<usize>,
    pub trials: usize,
    /// Diameter of the centre-noise sphere, metres.
    pub centre_diameter: f64,
    pub seed: u64,
    pub settings: CalibrationSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub noise_level: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub trial: usize,
    pub e_translation: f64,
    pub e_rotation: f64,
}

/// Runs the error-against-N study. Trial `j` uses the same board poses,
/// noise draws and optimizer seeds at every noise level and shares its
/// poses across N (the first N of one pose list), so curves differ only
/// through the noise level and sample count.
pub fn simulate_study(
    scene: &Scene,
    region: &RegionBounds,
    sampling: &PoseSampling,
    params: &SimulateParams,
) -> Result<Vec<SimRow>, StudyError> {
    let max_n = params.n_values.iter().copied().max().unwrap_or(0);
    let mut rows = Vec::new();
    for trial in 0..params.trials {
        let trial_seed = derive_seed(params.seed, trial as u64);
        let poses = scene.sample_poses(max_n, region, sampling, trial_seed)?;
        let truths = poses.iter().map(|p| scene.true_features(p)).collect::<Result<Vec<_>, _>>()?;
        for &n in &params.n_values {
            let stream = derive_seed(trial_seed, n as u64);
            for &level in &params.levels_deg {
                let spec = NoiseSpec { normal_level_deg: level, centre_diameter: params.centre_diameter, seed: stream };
                let mut rng = spec.rng();
                let samples = truths[..n]
                    .iter()
                    .map(|(l, c)| {
                        let noisy = perturb_features(l, &spec, &mut rng);
                        Sample::new(noisy, *c, scene.board.square)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let mut settings = params.settings;
                settings.ga.seed = stream;
                let res = calibrate(&samples, &settings, &scene.intrinsics)?;
                rows.push(SimRow {
                    noise_level: level,
                    n,
                    trial,
                    e_translation: translation_error(&scene.extrinsics.translation, &res.extrinsics.translation),
                    e_rotation: rotation_error(&scene.extrinsics.rotation, &res.extrinsics.rotation),
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        a.noise_level.total_cmp(&b.noise_level).then(a.n.cmp(&b.n)).then(a.trial.cmp(&b.trial))
    });
    Ok(rows)
}

/// Least-squares fit of `a * exp(-b * x) + c` with `b >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub sse: f64,
}

impl ExpFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * (-self.b * x).exp() + self.c
    }
}

/// For fixed `b` the model is linear in `(a, c)`; `b` is scanned on a grid
/// and refined by golden-section search around the best grid point.
pub fn fit_exponential(points: &[(f64, f64)]) -> ExpFit {
    let linear = |b: f64| -> ExpFit {
        let n = points.len() as f64;
        let (mut se, mut see, mut sy, mut sey) = (0.0, 0.0, 0.0, 0.0);
        for &(x, y) in points {
            let e = (-b * x).exp();
            se += e;
            see += e * e;
            sy += y;
            sey += e * y;
        }
        let det = see * n - se * se;
        let (a, c) = if det.abs() > 1e-12 * (see * n).max(1e-300) {
            ((sey * n - se * sy) / det, (see * sy - se * sey) / det)
        } else {
            (0.0, sy / n.max(1.0))
        };
        let sse = points.iter().map(|&(x, y)| (a * (-b * x).exp() + c - y).powi(2)).sum();
        ExpFit { a, b, c, sse }
    };
    let step = 0.01;
    let grid: Vec<ExpFit> = (0..=300).map(|i| linear(i as f64 * step)).collect();
    let best = (0..grid.len()).min_by(|&i, &j| grid[i].sse.total_cmp(&grid[j].sse)).unwrap_or(0);
    let (mut lo, mut hi) = ((best as f64 - 1.0).max(0.0) * step, (best as f64 + 1.0) * step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let (m1, m2) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if linear(m1).sse <= linear(m2).sse {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let refined = linear((lo + hi) / 2.0);
    if refined.sse <= grid[best].sse {
        refined
    } else {
        grid[best]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelFit {
    pub noise_level: f64,
    pub translation: ExpFit,
    pub rotation: ExpFit,
}

/// Exponential fits of both errors against N, one per noise level.
pub fn fit_levels(rows: &[SimRow]) -> Vec<LevelFit> {
    let levels: Vec<f64> = {
        let mut l: Vec<f64> = rows.iter().map(|r| r.noise_level).collect();
        l.sort_by(f64::total_cmp);
        l.dedup();
        l
    };
    levels
        .into_iter()
        .map(|level| {
            let pick = |f: fn(&SimRow) -> f64| -> Vec<(f64, f64)> {
                rows.iter().filter(|r| r.noise_level == level).map(|r| (r.n as f64, f(r))).collect()
            };
            LevelFit {
                noise_level: level,
                translation: fit_exponential(&pick(|r| r.e_translation)),
                rotation: fit_exponential(&pick(|r| r.e_rotation)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpreadParams {
    pub n_values: Vec<usize>,
    pub combos: usize,
    pub seed: u64,
    pub settings: CalibrationSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub combo: usize,
    /// Sample indices joined by `;`.
    pub subset: String,
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
    pub t_x: f64,
    pub t_y: f64,
    pub t_z: f64,
}

impl SpreadRow {
    pub const PARAMETERS: [&'static str; 6] = ["theta_x", "theta_y", "theta_z", "t_x", "t_y", "t_z"];

    pub fn values(&self) -> [f64; 6] {
        [self.theta_x, self.theta_y, self.theta_z, self.t_x, self.t_y, self.t_z]
    }
}

fn binomial(m: usize, n: usize) -> f64 {
    (0..n).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

/// Up to `combos` distinct sorted `n`-subsets of `0..m`, reproducible from `seed`.
pub fn choose_subsets(m: usize, n: usize, combos: usize, seed: u64) -> Vec<Vec<usize>> {
    let target = (combos as f64).min(binomial(m, n)) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, n as u64));
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        let mut s = sample_indices(&mut rng, m, n).into_vec();
        s.sort_unstable();
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

/// Calibrates random subsets of `samples` for each requested N. Combo `i`
/// runs the optimizer with seed `seed + i`.
pub fn spread_study(samples: &[Sample], k: &CameraIntrinsics, params: &SpreadParams) -> Result<Vec<SpreadRow>, StudyError> {
    if let Some(&n) = params.n_values.iter().find(|&&n| n > samples.len()) {
        return Err(StudyError::Invalid(format!("N = {n} exceeds the {} available samples", samples.len())));
    }
    let mut rows = Vec::new();
    for &n in &params.n_values {
        for (combo, subset) in choose_subsets(samples.len(), n, params.combos, params.seed).into_iter().enumerate() {
            let chosen: Vec<Sample> = subset.iter().map(|&i| samples[i]).collect();
            let mut settings = params.settings;
            settings.ga.seed = params.seed.wrapping_add(combo as u64);
            let res = calibrate(&chosen, &settings, k)?;
            let t = res.extrinsics.translation;
            rows.push(SpreadRow {
                n,
                combo,
                subset: subset.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";"),
                theta_x: res.euler.theta_x,
                theta_y: res.euler.theta_y,
                theta_z: res.euler.theta_z,
                t_x: t.x,
                t_y: t.y,
                t_z: t.z,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterStats {
    pub n: usize,
    pub mean: [f64; 6],
    /// Sample standard deviation (divisor count - 1).
    pub sd: [f64; 6],
}

pub fn spread_stats(rows: &[SpreadRow]) -> Vec<ParameterStats> {
    let ns: BTreeSet<usize> = rows.iter().map(|r| r.n).collect();
    ns.into_iter()
        .map(|n| {
            let vals: Vec<[f64; 6]> = rows.iter().filter(|r| r.n == n).map(SpreadRow::values).collect();
            let count = vals.len() as f64;
            let mean: [f64; 6] = std::array::from_fn(|j| vals.iter().map(|v| v[j]).sum::<f64>() / count);
            let sd = std::array::from_fn(|j| {
                if vals.len() < 2 {
                    0.0
                } else {
                    (vals.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / (count - 1.0)).sqrt()
                }
            });
            ParameterStats { n, mean, sd }
        })
        .collect()
}

/// Histogram bin width: 0.5 degrees for angles, 0.5 cm for translations.
pub const ANGLE_BIN_DEG: f64 = 0.5;
pub const TRANSLATION_BIN_M: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    #[serde(rename = "N")]
    pub n: usize,
    pub parameter: String,
    /// Lower bin edge in degrees (angles) or metres (translations).
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Bins aligned to multiples of the width; only non-empty bins are listed.
pub fn histograms(rows: &[SpreadRow]) -> Vec<HistogramBin> {
    let ns: BTreeSet<usize> = rows.iter().map(|r| r.n).collect();
    let mut out = Vec::new();
    for n in ns {
        for (j, name) in SpreadRow::PARAMETERS.iter().enumerate() {
            let (width, scale) = if j < 3 { (ANGLE_BIN_DEG, 180.0 / std::f64::consts::PI) } else { (TRANSLATION_BIN_M, 1.0) };
            let mut counts = std::collections::BTreeMap::<i64, usize>::new();
            for r in rows.iter().filter(|r| r.n == n) {
                *counts.entry((r.values()[j] * scale / width).floor() as i64).or_default() += 1;
            }
            out.extend(counts.into_iter().map(|(bin, count)| HistogramBin {
                n,
                parameter: name.to_string(),
                lower: bin as f64 * width,
                upper: (bin + 1) as f64 * width,
                count,
            }));
        }
    }
    out
}
