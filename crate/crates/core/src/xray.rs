//! Black-box policy inspection: input-space sweeps over two observation
//! fields with background states drawn from simulation, PPM/CSV renders,
//! canned sanity scenarios and a checkpoint round-trip consistency check.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attmath::{mrp_from_dcm, Dcm, Vec3};
use crate::fswactions::{align_body_vector, MacroAction};
use crate::policy::{self, argmax, distribution, sample, ActionDistribution, CheckpointMetadata, PolicyError, PolicyParams, N_ACTIONS};
use crate::ppotrain::{collect_rollouts, episode_seed};
use crate::twinsim::{self, sun_direction, Observation, SimError, SimState, SpacecraftConfig, OBS_LAYOUT, WHEEL_INDICES};

/// Selector that moves all three wheel fractions together.
pub const WHEEL_SATURATION: &str = "wheel_saturation";
/// Alias for the battery charge fraction entry.
pub const BATTERY_CHARGE: &str = "battery_charge";

/// Key colors for drift, charge and desaturate.
pub const ACTION_COLORS: [[u8; 3]; N_ACTIONS] = [[255, 0, 0], [0, 255, 0], [0, 0, 255]];

#[derive(Debug, Error)]
pub enum XrayError {
    #[error("sweep specification: {0}")]
    Spec(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Stochastic,
    Argmax,
    Blend,
}

impl std::str::FromStr for RenderMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "stochastic" => Ok(RenderMode::Stochastic),
            "argmax" => Ok(RenderMode::Argmax),
            "blend" => Ok(RenderMode::Blend),
            _ => Err(format!("unknown render mode {s:?} (stochastic|argmax|blend)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub field: String,
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl AxisSpec {
    pub fn values(&self) -> Vec<f64> {
        let n = self.steps;
        (0..n).map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub x_axis: AxisSpec,
    pub y_axis: AxisSpec,
    pub background_samples: usize,
    pub mode: RenderMode,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            x_axis: AxisSpec { field: WHEEL_SATURATION.into(), min: 0.0, max: 1.0, steps: 50 },
            y_axis: AxisSpec { field: BATTERY_CHARGE.into(), min: 0.0, max: 1.0, steps: 50 },
            background_samples: 32,
            mode: RenderMode::Blend,
            seed: 0,
        }
    }
}

/// Observation indices written by a field selector.
pub fn field_indices(field: &str) -> Result<Vec<usize>, XrayError> {
    match field {
        WHEEL_SATURATION => Ok(WHEEL_INDICES.to_vec()),
        BATTERY_CHARGE => Ok(vec![twinsim::BATTERY_INDEX]),
        _ => Observation::index_of(field)
            .map(|i| vec![i])
            .ok_or_else(|| XrayError::Spec(format!("unknown observation field {field:?}"))),
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), XrayError> {
        for axis in [&self.x_axis, &self.y_axis] {
            if axis.steps < 2 {
                return Err(XrayError::Spec(format!("axis {} needs at least 2 steps", axis.field)));
            }
            if !(axis.min.is_finite() && axis.max.is_finite()) {
                return Err(XrayError::Spec(format!("axis {} bounds must be finite", axis.field)));
            }
        }
        let xi = field_indices(&self.x_axis.field)?;
        let yi = field_indices(&self.y_axis.field)?;
        if xi.iter().any(|i| yi.contains(i)) {
            return Err(XrayError::Spec("axes must select distinct observation fields".into()));
        }
        if self.background_samples == 0 {
            return Err(XrayError::Spec("background_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean action probabilities on a grid, row-major `[y][x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMap {
    pub x_axis: AxisSpec,
    pub y_axis: AxisSpec,
    pub cells: Vec<[f64; N_ACTIONS]>,
}

impl ActionMap {
    pub fn cell(&self, ix: usize, iy: usize) -> &[f64; N_ACTIONS] {
        &self.cells[iy * self.x_axis.steps + ix]
    }
}

/// Draws `n` observations uniformly from seeded rollouts of `params`.
pub fn background_states(params: &PolicyParams, env: &SpacecraftConfig, n: usize, seed: u64) -> Result<Vec<Observation>, XrayError> {
    let episodes = n.div_ceil(8).max(1) as u64;
    let seeds: Vec<u64> = (0..episodes).map(|k| episode_seed(seed, k)).collect();
    let trajs = collect_rollouts(env, params, &seeds)?;
    let pool: Vec<Observation> = trajs.iter().flat_map(|t| t.steps.iter().map(|s| s.obs)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| *pool.choose(&mut rng).expect("rollouts have at least one step")).collect())
}

pub fn sweep(params: &PolicyParams, spec: &SweepSpec, env: &SpacecraftConfig) -> Result<ActionMap, XrayError> {
    spec.validate()?;
    let background = background_states(params, env, spec.background_samples, spec.seed)?;
    sweep_with_background(params, spec, &background)
}

/// Sweep over caller-supplied background observations.
pub fn sweep_with_background(params: &PolicyParams, spec: &SweepSpec, background: &[Observation]) -> Result<ActionMap, XrayError> {
    spec.validate()?;
    if background.is_empty() {
        return Err(XrayError::Spec("no background observations".into()));
    }
    let xi = field_indices(&spec.x_axis.field)?;
    let yi = field_indices(&spec.y_axis.field)?;
    let xs = spec.x_axis.values();
    let ys = spec.y_axis.values();
    let grid: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let cells = grid
        .par_iter()
        .map(|&(x, y)| {
            let mut mean = [0.0; N_ACTIONS];
            for bg in background {
                let mut o = *bg;
                xi.iter().for_each(|&i| o.0[i] = x);
                yi.iter().for_each(|&i| o.0[i] = y);
                let (logits, _) = params.forward(o.as_slice()).expect("fixed length");
                let d = distribution(&logits);
                mean.iter_mut().zip(d.probs).for_each(|(m, p)| *m += p);
            }
            mean.map(|m| m / background.len() as f64)
        })
        .collect();
    Ok(ActionMap { x_axis: spec.x_axis.clone(), y_axis: spec.y_axis.clone(), cells })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    /// Binary PPM (P6), one pixel per cell, highest y on the top row.
    pub ppm: Vec<u8>,
    pub csv: String,
}

fn blend(p: &[f64; N_ACTIONS]) -> [u8; 3] {
    let mut px = [0u8; 3];
    for (a, color) in ACTION_COLORS.iter().enumerate() {
        for c in 0..3 {
            let share = (color[c] as f64 * p[a] + 1e-9).floor().clamp(0.0, 255.0) as u8;
            px[c] = px[c].saturating_add(share);
        }
    }
    px
}

pub fn render(map: &ActionMap, mode: RenderMode, seed: u64) -> Rendered {
    let (nx, ny) = (map.x_axis.steps, map.y_axis.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = vec![[0u8; 3]; nx * ny];
    let mut csv = String::from("x_value,y_value,p_drift,p_charge,p_desaturate\n");
    let xs = map.x_axis.values();
    let ys = map.y_axis.values();
    for iy in 0..ny {
        for ix in 0..nx {
            let p = map.cell(ix, iy);
            let dist = ActionDistribution { probs: *p };
            let px = match mode {
                RenderMode::Blend => blend(p),
                RenderMode::Argmax => ACTION_COLORS[argmax(&dist).code()],
                RenderMode::Stochastic => ACTION_COLORS[sample(&dist, &mut rng).code()],
            };
            pixels[(ny - 1 - iy) * nx + ix] = px;
            let _ = writeln!(csv, "{},{},{},{},{}", xs[ix], ys[iy], p[0], p[1], p[2]);
        }
    }
    let mut ppm = format!("P6\n{nx} {ny}\n255\n").into_bytes();
    ppm.extend(pixels.iter().flatten());
    Rendered { ppm, csv }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityScenario {
    pub name: String,
    pub overrides: Vec<(String, f64)>,
    pub expected: MacroAction,
    pub min_prob: f64,
}

/// Sunlit, sun-pointing, at rest, half charge, wheels idle.
pub fn nominal_state(config: &SpacecraftConfig) -> SimState {
    let mut s = SimState {
        t: 0.0,
        step_index: 0,
        r: Vec3::new(config.orbit_radius, 0.0, 0.0),
        v: Vec3::new(0.0, config.circular_speed(), 0.0),
        sigma_bn: crate::attmath::Mrp::zero(),
        omega_bn_body: Vec3::zeros(),
        battery_energy: 0.5 * config.battery_capacity,
        wheel_speeds: Vec3::zeros(),
        active_action: MacroAction::Drift,
        seed: 0,
        status: twinsim::EpisodeStatus::Alive,
    };
    let sun = sun_direction(0.0, config);
    s.sigma_bn = mrp_from_dcm(&align_body_vector(&Dcm::identity(), &config.panel_normal_body, &sun));
    s
}

pub fn nominal_observation(config: &SpacecraftConfig) -> Observation {
    twinsim::observe(&nominal_state(config), config)
}

/// Low battery with the panel facing away from the sun; wheels close to
/// their speed limit.
pub fn builtin_scenarios(config: &SpacecraftConfig) -> Vec<SanityScenario> {
    let sun = sun_direction(0.0, config);
    let away = mrp_from_dcm(&align_body_vector(&Dcm::identity(), &config.panel_normal_body, &-sun));
    let s = away.vector();
    vec![
        SanityScenario {
            name: "low-battery-away-from-sun".into(),
            overrides: vec![
                ("battery_fraction".into(), 0.05),
                ("sigma_bn_1".into(), s.x),
                ("sigma_bn_2".into(), s.y),
                ("sigma_bn_3".into(), s.z),
            ],
            expected: MacroAction::Charge,
            min_prob: 0.5,
        },
        SanityScenario {
            name: "wheels-near-saturation".into(),
            overrides: vec![(WHEEL_SATURATION.into(), 0.95)],
            expected: MacroAction::Desaturate,
            min_prob: 0.5,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub name: String,
    pub top_action: MacroAction,
    pub top_prob: f64,
    pub expected: MacroAction,
    pub expected_prob: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub results: Vec<ScenarioResult>,
    pub all_passed: bool,
}

pub fn sanity_suite(params: &PolicyParams, base: &Observation, scenarios: &[SanityScenario]) -> Result<SanityReport, XrayError> {
    let mut results = Vec::new();
    for sc in scenarios {
        let mut o = *base;
        for (field, value) in &sc.overrides {
            field_indices(field)?.into_iter().for_each(|i| o.0[i] = *value);
        }
        let (logits, _) = params.forward(o.as_slice())?;
        let d = distribution(&logits);
        let top = argmax(&d);
        let expected_prob = d.prob(sc.expected);
        results.push(ScenarioResult {
            name: sc.name.clone(),
            top_action: top,
            top_prob: d.prob(top),
            expected: sc.expected,
            expected_prob,
            passed: top == sc.expected && expected_prob > sc.min_prob,
        });
    }
    let all_passed = results.iter().all(|r| r.passed);
    Ok(SanityReport { results, all_passed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub records: usize,
    pub max_abs_logit_diff: f64,
    pub passed: bool,
}

/// Compares logits from `params` with logits from the same parameters after
/// a checkpoint serialize/parse round trip.
pub fn consistency_check(params: &PolicyParams, log: &[Observation]) -> Result<ConsistencyReport, XrayError> {
    consistency_check_with(params, log, |p| {
        let text = policy::Checkpoint::from_params(p, CheckpointMetadata::default()).to_json();
        policy::Checkpoint::from_json(&text)?.to_params()
    })
}

/// As [`consistency_check`] with a caller-supplied round trip.
pub fn consistency_check_with<F>(params: &PolicyParams, log: &[Observation], roundtrip: F) -> Result<ConsistencyReport, XrayError>
where
    F: FnOnce(&PolicyParams) -> Result<PolicyParams, PolicyError>,
{
    let other = roundtrip(params)?;
    let mut max = 0.0f64;
    let mut bitwise = true;
    for obs in log {
        let (a, _) = params.forward(obs.as_slice())?;
        let (b, _) = other.forward(obs.as_slice())?;
        for k in 0..N_ACTIONS {
            max = max.max((a[k] - b[k]).abs());
            bitwise &= a[k].to_bits() == b[k].to_bits();
        }
    }
    Ok(ConsistencyReport { records: log.len(), max_abs_logit_diff: max, passed: bitwise })
}

/// Names of the observation entries, for CSV headers and reports.
pub fn layout() -> &'static [&'static str] {
    &OBS_LAYOUT
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::DEFAULT_HIDDEN;
    use rand::Rng;

    fn small_spec(steps: usize) -> SweepSpec {
        SweepSpec {
            x_axis: AxisSpec { field: WHEEL_SATURATION.into(), min: 0.0, max: 1.0, steps },
            y_axis: AxisSpec { field: BATTERY_CHARGE.into(), min: 0.0, max: 1.0, steps },
            background_samples: 4,
            mode: RenderMode::Blend,
            seed: 3,
        }
    }

    fn random_params(seed: u64) -> PolicyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PolicyParams::init(&DEFAULT_HIDDEN, &mut rng);
        let flat: Vec<f64> = p.to_flat().iter().map(|_| rng.gen_range(-0.3..0.3)).collect();
        p.set_flat(&flat);
        p
    }

    #[test]
    fn zero_policy_sweep_is_uniform() {
        let p = PolicyParams::zeros(&DEFAULT_HIDDEN);
        let map = sweep(&p, &small_spec(5), &SpacecraftConfig::default()).unwrap();
        assert_eq!(map.cells.len(), 25);
        for c in &map.cells {
            for v in c {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let r = render(&map, RenderMode::Blend, 0);
        assert!(r.ppm[r.ppm.len() - 75..].chunks(3).all(|px| px == [85, 85, 85]));
    }

    #[test]
    fn single_background_equals_forward() {
        let p = random_params(1);
        let bg = nominal_observation(&SpacecraftConfig::default());
        let spec = small_spec(3);
        let map = sweep_with_background(&p, &spec, &[bg]).unwrap();
        let mut o = bg;
        o.0[13..16].copy_from_slice(&[0.5; 3]);
        o.0[12] = 1.0;
        let d = distribution(&p.forward(o.as_slice()).unwrap().0);
        assert_eq!(map.cell(1, 2), &d.probs);
    }

    #[test]
    fn large_grid_normalized() {
        let p = random_params(2);
        let mut spec = small_spec(50);
        spec.background_samples = 2;
        let map = sweep(&p, &spec, &SpacecraftConfig::default()).unwrap();
        assert_eq!(map.cells.len(), 2500);
        assert!(map.cells.iter().all(|c| (c.iter().sum::<f64>() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn spec_errors() {
        let p = PolicyParams::zeros(&DEFAULT_HIDDEN);
        let mut spec = small_spec(3);
        spec.x_axis.field = "not_a_field".into();
        assert!(matches!(sweep(&p, &spec, &SpacecraftConfig::default()), Err(XrayError::Spec(_))));
        let mut spec = small_spec(3);
        spec.y_axis.field = "wheel_fraction_2".into();
        assert!(spec.validate().is_err());
        let spec = small_spec(1);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn identical_axis_values_identical_cells() {
        let p = random_params(4);
        let bg = vec![nominal_observation(&SpacecraftConfig::default()); 2];
        let mut spec = small_spec(4);
        spec.x_axis.min = 0.5;
        spec.x_axis.max = 0.5;
        let map = sweep_with_background(&p, &spec, &bg).unwrap();
        for iy in 0..4 {
            assert_eq!(map.cell(0, iy), map.cell(3, iy));
        }
    }

    #[test]
    fn blend_pixels() {
        assert_eq!(blend(&[1.0, 0.0, 0.0]), [255, 0, 0]);
        assert_eq!(blend(&[1.0 / 3.0; 3]), [85, 85, 85]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let logits = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let px = blend(&distribution(&logits).probs);
            let sum: u32 = px.iter().map(|&v| v as u32).sum();
            assert!((253..=255).contains(&sum), "{px:?}");
        }
    }

    #[test]
    fn render_formats_and_determinism() {
        let p = random_params(5);
        let map = sweep(&p, &small_spec(6), &SpacecraftConfig::default()).unwrap();
        let a = render(&map, RenderMode::Stochastic, 11);
        let b = render(&map, RenderMode::Stochastic, 11);
        assert_eq!(a, b);
        assert!(a.ppm.starts_with(b"P6\n6 6\n255\n"));
        assert_eq!(a.ppm.len(), b"P6\n6 6\n255\n".len() + 6 * 6 * 3);
        assert_eq!(a.csv.lines().count(), 37);
        assert_eq!(a.csv.lines().next().unwrap(), "x_value,y_value,p_drift,p_charge,p_desaturate");
    }

    #[test]
    fn argmax_render_agrees_with_csv() {
        let p = random_params(6);
        let map = sweep(&p, &small_spec(7), &SpacecraftConfig::default()).unwrap();
        let r = render(&map, RenderMode::Argmax, 0);
        let header = b"P6\n7 7\n255\n".len();
        for (k, line) in r.csv.lines().skip(1).enumerate() {
            let (iy, ix) = (k / 7, k % 7);
            let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
            let best = argmax(&ActionDistribution { probs: [v[2], v[3], v[4]] });
            let off = header + ((6 - iy) * 7 + ix) * 3;
            assert_eq!(&r.ppm[off..off + 3], &ACTION_COLORS[best.code()]);
        }
    }

    #[test]
    fn uniform_policy_fails_sanity() {
        let c = SpacecraftConfig::default();
        let p = PolicyParams::zeros(&DEFAULT_HIDDEN);
        let rep = sanity_suite(&p, &nominal_observation(&c), &builtin_scenarios(&c)).unwrap();
        assert_eq!(rep.results.len(), 2);
        assert!(!rep.all_passed);
        assert!(rep.results.iter().all(|r| !r.passed && (r.top_prob - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn anti_sun_scenario_points_away() {
        let c = SpacecraftConfig::default();
        let sc = &builtin_scenarios(&c)[0];
        let sigma = Vec3::new(sc.overrides[1].1, sc.overrides[2].1, sc.overrides[3].1);
        let bn = crate::attmath::dcm_from_mrp(&crate::attmath::Mrp::new(sigma).unwrap());
        let cos = twinsim::sun_incidence(&bn, &sun_direction(0.0, &c), &c);
        assert!((cos + 1.0).abs() < 1e-12);
    }

    #[test]
    fn consistency_round_trip() {
        let p = random_params(7);
        let log: Vec<Observation> = (0..20)
            .map(|k| twinsim::reset(&SpacecraftConfig::default(), k).unwrap().1)
            .collect();
        let rep = consistency_check(&p, &log).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.max_abs_logit_diff, 0.0);

        let empty = consistency_check(&p, &[]).unwrap();
        assert!(empty.passed && empty.records == 0);

        // six significant digits, as a lossy export would write them
        let truncated = consistency_check_with(&p, &log, |p| {
            let mut ck = policy::Checkpoint::from_params(p, CheckpointMetadata::default());
            for l in &mut ck.layers {
                for row in &mut l.weights {
                    row.iter_mut().for_each(|w| *w = format!("{w:.6e}").parse().unwrap());
                }
            }
            ck.to_params()
        })
        .unwrap();
        assert!(!truncated.passed);
        assert!(truncated.max_abs_logit_diff > 0.0);
    }
}
