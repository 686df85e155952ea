//! Acceptance criteria 1-11, one PASS/FAIL line each. Exits nonzero if any
//! criterion fails.

mod common;

use std::f64::consts::{PI, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use carl_core::attmath::{dcm_from_euler321, dcm_from_mrp, mrp_from_dcm, EulerYpr, Vec3};
use carl_core::fswactions::MacroAction;
use carl_core::policy::{PolicyParams, DEFAULT_HIDDEN, N_ACTIONS};
use carl_core::ppotrain::{self, evaluate_policy, evaluate_with, select_best, ActionMode, TrainConfig};
use carl_core::telbridge::downlink::body;
use carl_core::telbridge::record::write_csv;
use carl_core::telbridge::*;
use carl_core::twinsim::*;
use carl_core::xray::{self, RenderMode, SweepSpec};
use common::{default_gradient_check, random_params};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn attitude_oracles() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_rt, mut worst_orth) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let e = EulerYpr { yaw: rng.gen_range(-PI..PI), pitch: rng.gen_range(-PI / 2.0..PI / 2.0), roll: rng.gen_range(-PI..PI) };
        let d = dcm_from_euler321(e).map_err(|e| e.to_string())?;
        let back = dcm_from_mrp(&mrp_from_dcm(&d));
        worst_rt = worst_rt.max((d.matrix() - back.matrix()).abs().max());
        let m = back.matrix();
        worst_orth = worst_orth.max((m.transpose() * m - nalgebra::Matrix3::identity()).abs().max());
    }
    let dt = t0.elapsed();
    check(worst_rt < 1e-12, format!("round trip error {worst_rt:e}"))?;
    check(worst_orth < 1e-12, format!("orthonormality error {worst_orth:e}"))?;
    check(dt < Duration::from_secs(5), format!("took {dt:?}"))?;
    Ok(format!("max round trip {worst_rt:.1e}, max orthonormality {worst_orth:.1e}, {dt:.2?}"))
}

fn reward_conservation() -> Outcome {
    let survive = SpacecraftConfig { episode_horizon: 1800.0, ..SpacecraftConfig::default() };
    for seed in 0..100 {
        let (mut s, _) = reset(&survive, seed).map_err(|e| e.to_string())?;
        let mut total = 0.0;
        loop {
            let (next, r) = step(&s, MacroAction::Charge, &survive).map_err(|e| e.to_string())?;
            total += r.reward;
            check(!r.terminated, format!("survival seed {seed} failed"))?;
            if r.truncated {
                break;
            }
            s = next;
        }
        check((total - 1.0).abs() < 1e-9, format!("seed {seed} sums to {total}"))?;
    }
    let harsh = harden(&SpacecraftConfig::default(), 0.5, 0.5).map_err(|e| e.to_string())?;
    let mut failures = 0;
    for seed in 0..100 {
        let (mut s, _) = reset(&harsh, seed).map_err(|e| e.to_string())?;
        loop {
            let (next, r) = step(&s, MacroAction::Drift, &harsh).map_err(|e| e.to_string())?;
            if r.terminated {
                failures += 1;
                check(r.reward == TERMINAL_REWARD, format!("seed {seed} terminal reward {}", r.reward))?;
                check(r.info.failure.is_some(), format!("seed {seed} has no failure cause"))?;
                break;
            }
            if r.truncated {
                break;
            }
            s = next;
        }
    }
    check(failures > 0, "no failure episode induced")?;
    Ok(format!("100 survival episodes sum to 1; {failures} induced failures end at {TERMINAL_REWARD} with a cause"))
}

fn orbit_energy() -> Outcome {
    let c = SpacecraftConfig::default();
    let energy = |r: &Vec3, v: &Vec3| v.norm_squared() / 2.0 - c.earth_mu / r.norm();
    let (mut r, mut v) = (Vec3::new(c.orbit_radius, 0.0, 0.0), Vec3::new(0.0, c.circular_speed() * 0.98, 0.6e3));
    let e0 = energy(&r, &v);
    let period = TAU * (c.orbit_radius.powi(3) / c.earth_mu).sqrt();
    let dt = c.decision_interval / c.substeps as f64;
    for _ in 0..(100.0 * period / dt).ceil() as usize {
        (r, v) = propagate_orbit(&r, &v, dt, c.earth_mu);
    }
    let rel = ((energy(&r, &v) - e0) / e0).abs();
    check(rel < 1e-6, format!("relative drift {rel:e}"))?;
    Ok(format!("relative energy drift {rel:.1e} over 100 periods"))
}

fn gradient_check() -> Outcome {
    let t0 = Instant::now();
    let worst = default_gradient_check();
    let dt = t0.elapsed();
    check(worst < 1e-4, format!("max relative error {worst:e}"))?;
    check(dt < Duration::from_secs(60), format!("took {dt:?}"))?;
    Ok(format!("max relative error {worst:.1e}, {dt:.2?}"))
}

struct Trained {
    env: SpacecraftConfig,
    selected: Option<PolicyParams>,
    iterations: usize,
    elapsed: Duration,
}

fn train_hardened() -> Result<Trained, String> {
    let env = harden(&SpacecraftConfig::default(), 0.5, 0.5).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    let t0 = Instant::now();
    let out = ppotrain::train(&env, &cfg, None).map_err(|e| e.to_string())?;
    Ok(Trained {
        selected: out.selected_params().cloned(),
        iterations: out.report.iterations.len(),
        elapsed: t0.elapsed(),
        env,
    })
}

fn learning(t: &Trained) -> Outcome {
    let params = t.selected.as_ref().ok_or("no checkpoint selected")?;
    check(t.iterations <= 200, format!("{} iterations", t.iterations))?;
    let seeds: Vec<u64> = (0..100).map(|i| 1_000_000 + i).collect();
    let learned = evaluate_policy(&t.env, params, &seeds, ActionMode::Argmax).map_err(|e| e.to_string())?;
    let drift = evaluate_with(&t.env, &seeds, |_, _| MacroAction::Drift).map_err(|e| e.to_string())?;
    let random = evaluate_with(&t.env, &seeds, |_, rng| MacroAction::ALL[rng.gen_range(0..N_ACTIONS)]).map_err(|e| e.to_string())?;
    let summary = format!(
        "learned {learned:.3} vs drift {drift:.3} and random {random:.3} ({} iterations, {:.1?})",
        t.iterations, t.elapsed
    );
    check(learned - drift.max(random) >= 0.15, summary.clone())?;
    Ok(summary)
}

fn sanity(t: &Trained) -> Outcome {
    let params = t.selected.as_ref().ok_or("no checkpoint selected")?;
    let base = xray::nominal_observation(&t.env);
    let scenarios = xray::builtin_scenarios(&t.env);
    let learned = xray::sanity_suite(params, &base, &scenarios).map_err(|e| e.to_string())?;
    let uniform = xray::sanity_suite(&PolicyParams::zeros(&DEFAULT_HIDDEN), &base, &scenarios).map_err(|e| e.to_string())?;
    let probs: Vec<String> = learned.results.iter().map(|r| format!("{} {:.3}", r.name, r.expected_prob)).collect();
    check(learned.all_passed, format!("learned policy: {}", probs.join(", ")))?;
    check(uniform.results.iter().all(|r| !r.passed), "uniform policy passed a scenario")?;
    Ok(format!("{}; uniform policy fails all", probs.join(", ")))
}

fn cadence_and_selection() -> Outcome {
    let env = SpacecraftConfig { episode_horizon: 3600.0, ..SpacecraftConfig::default() };
    let cfg = TrainConfig { episodes_per_iteration: 4, total_iterations: 3, minibatch_size: 64, ..TrainConfig::default() };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    ppotrain::train(&env, &cfg, Some(dir.path())).map_err(|e| e.to_string())?;
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("checkpoints"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let want = [ppotrain::checkpoint_file_name(5), ppotrain::checkpoint_file_name(10)];
    check(names == want, format!("checkpoints {names:?}"))?;
    let pick = select_best(&[0.2, 0.9, 0.4]);
    check(pick == Some(1), format!("selected {pick:?}"))?;
    Ok("12 episodes checkpoint at 5 and 10; (0.2, 0.9, 0.4) selects index 1".into())
}

fn bridge_equivalence() -> Outcome {
    let c = SpacecraftConfig::default();
    let mut worst = 0.0f64;
    let mut records = Vec::new();
    for seed in 0..1000u64 {
        let (mut s, _) = reset(&c, seed).map_err(|e| e.to_string())?;
        for k in 0..seed % 7 {
            s = step(&s, MacroAction::ALL[(k % 3) as usize], &c).map_err(|e| e.to_string())?.0;
        }
        let rec = synthesize_record(&s, None, RateFrame::Hill, SynthUnits::default(), None).map_err(|e| e.to_string())?;
        let parsed = parse_json_line(&rec.to_json_line()).map_err(|e| e.to_string())?;
        let mut tracker = BatteryTracker::new(c.battery_capacity, s.battery_energy / c.battery_capacity);
        let got = derive_observation(&parsed, &mut tracker, &c, RateFrame::Hill).map_err(|e| e.to_string())?;
        let want = observe(&s, &c);
        worst = (0..OBS_LEN).map(|i| (got.0[i] - want.0[i]).abs()).fold(worst, f64::max);
        records.push(rec);
    }
    check(worst < 1e-9, format!("max elementwise error {worst:e}"))?;

    let text = write_csv(&records[..50]);
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    let mut order: Vec<usize> = (0..rows[0].len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let shuffled: String = rows.iter().map(|r| order.iter().map(|&i| r[i]).collect::<Vec<_>>().join(",") + "\n").collect();
    let parse = |t: &str| -> Result<Vec<TelemetryRecord>, String> {
        parse_telemetry(t, TelemetryFormat::CsvWithHeader).map_err(|e| e.to_string())?.into_iter().map(|r| r.map_err(|e| e.to_string())).collect()
    };
    check(parse(&shuffled)? == parse(&text)?, "shuffled CSV parsed differently")?;
    Ok(format!("1000 records, max error {worst:.1e}; shuffled columns parse identically"))
}

fn shadow_consistency() -> Outcome {
    let env = harden(&SpacecraftConfig::default(), 0.5, 0.5).map_err(|e| e.to_string())?;
    let p = random_params(&DEFAULT_HIDDEN, 0.3, 42);
    let (records, z0) = twin_rollout_telemetry(&env, &p, 5, RateFrame::Hill, SynthUnits::default()).map_err(|e| e.to_string())?;
    let parsed = parse_telemetry(&write_csv(&records), TelemetryFormat::CsvWithHeader).map_err(|e| e.to_string())?;
    let summary = shadow_run(parsed, &p, &env, &ShadowConfig { initial_charge: z0, ..ShadowConfig::default() });
    check(summary.agreement == Some(1.0), format!("agreement {:?}", summary.agreement))?;
    let obs: Vec<Observation> = summary
        .events
        .iter()
        .filter_map(|e| match e {
            ShadowEvent::Entry(e) => Some(e.observation),
            ShadowEvent::Skip(_) => None,
        })
        .collect();
    let report = xray::consistency_check(&p, &obs).map_err(|e| e.to_string())?;
    check(report.passed && report.max_abs_logit_diff == 0.0, format!("logit diff {:e}", report.max_abs_logit_diff))?;
    Ok(format!("{} entries, agreement 1.0, logit diff 0", summary.entries))
}

fn downlink() -> Outcome {
    let entries: Vec<serde_json::Value> = (0..1000)
        .map(|i| {
            let rec = MacroAction::ALL[i % 3].name();
            json!({"timestamp": 60.0 * i as f64, "recommended": rec, "operator_script": "HOLD", "extra": i})
        })
        .collect();
    let whitelist: Vec<String> = ["timestamp", "recommended", "operator_script"].map(String::from).to_vec();
    let bytes = pack_downlink(&entries, &whitelist, 1 << 20).map_err(|e| e.to_string())?.to_bytes();
    let back = unpack_downlink(&bytes).map_err(|e| e.to_string())?;
    let lossless = back.len() == entries.len()
        && back.iter().zip(&entries).all(|(b, e)| b.as_object().unwrap().len() == 3 && whitelist.iter().all(|f| b[f] == e[f]));
    check(lossless, "round trip lost data")?;
    let raw = body(&downlink::prune(&entries, &whitelist).map_err(|e| e.to_string())?).len();
    let ratio = bytes.len() as f64 / raw as f64;
    check(ratio <= 0.5, format!("compressed to {ratio:.3} of {raw} bytes"))?;
    let over = |_| pack_downlink(&entries, &whitelist, 10).map(|_| ()).map_err(|e| e.to_string());
    let (a, b): (Result<(), String>, Result<(), String>) = (over(()), over(()));
    check(a.is_err() && a == b, format!("over-budget results {a:?} / {b:?}"))?;
    Ok(format!("lossless; {} -> {} bytes ({ratio:.3}); over budget: {}", raw, bytes.len(), a.unwrap_err()))
}

fn sweep_determinism() -> Outcome {
    let env = SpacecraftConfig::default();
    let spec = SweepSpec { background_samples: 8, ..SweepSpec::default() };
    let zero = xray::sweep(&PolicyParams::zeros(&DEFAULT_HIDDEN), &spec, &env).map_err(|e| e.to_string())?;
    let uniform = zero.cells.iter().all(|c| c.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
    check(uniform, "zero-weight map is not uniform")?;
    let p = random_params(&DEFAULT_HIDDEN, 0.5, 7);
    let spec = SweepSpec { mode: RenderMode::Stochastic, seed: 11, ..spec };
    let image = || -> Result<Vec<u8>, String> {
        let map = xray::sweep(&p, &spec, &env).map_err(|e| e.to_string())?;
        Ok(xray::render(&map, spec.mode, spec.seed).ppm)
    };
    check(image()? == image()?, "PPM bytes differ between runs")?;
    Ok(format!("{} cells uniform; stochastic PPM bitwise identical", zero.cells.len()))
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {id:2} {name}: {detail}");
    outcome.is_ok()
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= run(1, "attitude oracles", attitude_oracles);
    ok &= run(2, "reward conservation", reward_conservation);
    ok &= run(3, "orbit energy", orbit_energy);
    ok &= run(4, "gradient check", gradient_check);
    let trained = catch_unwind(train_hardened).unwrap_or_else(|_| Err("training panicked".into()));
    match &trained {
        Ok(t) => {
            ok &= run(5, "learning on hardened config", || learning(t));
            ok &= run(6, "sanity suite", || sanity(t));
        }
        Err(e) => {
            ok &= run(5, "learning on hardened config", || Err(e.clone()));
            ok &= run(6, "sanity suite", || Err(e.clone()));
        }
    }
    ok &= run(7, "checkpoint cadence and selection", cadence_and_selection);
    ok &= run(8, "bridge equivalence", bridge_equivalence);
    ok &= run(9, "shadow self-consistency", shadow_consistency);
    ok &= run(10, "downlink", downlink);
    ok &= run(11, "sweep determinism", sweep_determinism);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
