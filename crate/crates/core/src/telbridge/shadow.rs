use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::derive::{derive_state, BatteryTracker, RateFrame};
use super::record::TelemetryRecord;
use super::TelemetryError;
use crate::fswactions::{expand, render_operator_script, MacroAction};
use crate::policy::{argmax, distribution, PolicyParams, N_ACTIONS};
use crate::twinsim::{Observation, SpacecraftConfig};

/// Flight-mode names mapped onto macro actions for agreement scoring.
/// Matching ignores case and surrounding whitespace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeMap(pub BTreeMap<String, MacroAction>);

impl Default for ModeMap {
    fn default() -> Self {
        ModeMap(MacroAction::ALL.iter().map(|a| (a.name().to_string(), *a)).collect())
    }
}

impl ModeMap {
    pub fn lookup(&self, mode: &str) -> Option<MacroAction> {
        let m = mode.trim();
        self.0.iter().find(|(k, _)| k.eq_ignore_ascii_case(m)).map(|(_, a)| *a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowConfig {
    pub rate_frame: RateFrame,
    /// Battery state of charge at the first record.
    pub initial_charge: f64,
    pub mode_map: ModeMap,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        ShadowConfig { rate_frame: RateFrame::Hill, initial_charge: 1.0, mode_map: ModeMap::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowLogEntry {
    pub timestamp: f64,
    pub observation: Observation,
    pub probabilities: [f64; N_ACTIONS],
    pub recommended: MacroAction,
    pub operator_script: String,
    pub actual_mode: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    /// Position of the record in the input stream.
    pub index: usize,
    pub reason: String,
}

/// One line of the shadow log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShadowEvent {
    Entry(ShadowLogEntry),
    Skip(SkipRecord),
}

impl ShadowEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log event serializes")
    }
}

/// Cycle-by-cycle shadow inference. Never commands anything; bad records are
/// logged as skips and the run continues.
#[derive(Debug, Clone)]
pub struct ShadowRunner {
    params: PolicyParams,
    spacecraft: SpacecraftConfig,
    config: ShadowConfig,
    tracker: BatteryTracker,
    index: usize,
    compared: usize,
    agreed: usize,
}

impl ShadowRunner {
    pub fn new(params: PolicyParams, spacecraft: SpacecraftConfig, config: ShadowConfig) -> Self {
        let tracker = BatteryTracker::new(spacecraft.battery_capacity, config.initial_charge);
        ShadowRunner { params, spacecraft, config, tracker, index: 0, compared: 0, agreed: 0 }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn spacecraft(&self) -> &SpacecraftConfig {
        &self.spacecraft
    }

    /// Replaces the policy; call only between cycles.
    pub fn set_params(&mut self, params: PolicyParams) {
        self.params = params;
    }

    /// Replaces the spacecraft configuration, keeping the current state of
    /// charge; call only between cycles.
    pub fn set_spacecraft(&mut self, spacecraft: SpacecraftConfig) {
        self.tracker.set_capacity(spacecraft.battery_capacity);
        self.spacecraft = spacecraft;
    }

    pub fn process(&mut self, record: Result<TelemetryRecord, TelemetryError>) -> ShadowEvent {
        let index = self.index;
        self.index += 1;
        match record.and_then(|r| self.infer(&r)) {
            Ok(entry) => {
                if let Some(actual) = entry.actual_mode.as_deref().and_then(|m| self.config.mode_map.lookup(m)) {
                    self.compared += 1;
                    if actual == entry.recommended {
                        self.agreed += 1;
                    }
                }
                ShadowEvent::Entry(entry)
            }
            Err(e) => ShadowEvent::Skip(SkipRecord { index, reason: e.to_string() }),
        }
    }

    fn infer(&mut self, record: &TelemetryRecord) -> Result<ShadowLogEntry, TelemetryError> {
        let mut tracker = self.tracker.clone();
        let state = derive_state(record, &mut tracker, self.config.rate_frame)?;
        let obs = state.observation(&self.spacecraft);
        let (logits, _) = self.params.forward(obs.as_slice())?;
        let dist = distribution(&logits);
        let recommended = argmax(&dist);
        let program = expand(recommended, &state.sim_state(&self.spacecraft), &self.spacecraft);
        self.tracker = tracker;
        Ok(ShadowLogEntry {
            timestamp: record.timestamp,
            observation: obs,
            probabilities: dist.probs,
            recommended,
            operator_script: render_operator_script(&program).to_string(),
            actual_mode: record.mode.clone(),
        })
    }

    /// Fraction of mappable records whose recommendation matched the actual
    /// mode; `None` when nothing could be compared.
    pub fn agreement(&self) -> Option<f64> {
        (self.compared > 0).then(|| self.agreed as f64 / self.compared as f64)
    }

    pub fn compared(&self) -> usize {
        self.compared
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowSummary {
    pub events: Vec<ShadowEvent>,
    pub entries: usize,
    pub skips: usize,
    pub agreement: Option<f64>,
}

pub fn shadow_run<I>(records: I, params: &PolicyParams, spacecraft: &SpacecraftConfig, config: &ShadowConfig) -> ShadowSummary
where
    I: IntoIterator<Item = Result<TelemetryRecord, TelemetryError>>,
{
    let mut runner = ShadowRunner::new(params.clone(), spacecraft.clone(), config.clone());
    let events: Vec<ShadowEvent> = records.into_iter().map(|r| runner.process(r)).collect();
    let skips = events.iter().filter(|e| matches!(e, ShadowEvent::Skip(_))).count();
    ShadowSummary { entries: events.len() - skips, skips, agreement: runner.agreement(), events }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::DEFAULT_HIDDEN;
    use crate::telbridge::derive::{synthesize_record, SynthUnits};
    use crate::twinsim::reset;

    fn records(n: u64, mode: Option<&str>) -> Vec<Result<TelemetryRecord, TelemetryError>> {
        let c = SpacecraftConfig::default();
        (0..n)
            .map(|k| {
                let (mut s, _) = reset(&c, k).unwrap();
                s.t = 60.0 * k as f64;
                Ok(synthesize_record(&s, None, RateFrame::Hill, SynthUnits::default(), mode).unwrap())
            })
            .collect()
    }

    #[test]
    fn empty_stream() {
        let s = shadow_run(vec![], &PolicyParams::zeros(&DEFAULT_HIDDEN), &SpacecraftConfig::default(), &ShadowConfig::default());
        assert!(s.events.is_empty());
        assert_eq!(s.agreement, None);
    }

    #[test]
    fn uniform_policy_recommends_drift_and_agrees() {
        let p = PolicyParams::zeros(&DEFAULT_HIDDEN);
        let s = shadow_run(records(5, Some("DRIFT")), &p, &SpacecraftConfig::default(), &ShadowConfig::default());
        assert_eq!(s.entries, 5);
        assert_eq!(s.agreement, Some(1.0));
        for e in &s.events {
            let ShadowEvent::Entry(e) = e else { panic!() };
            assert_eq!(e.recommended, MacroAction::Drift);
            assert!((e.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(e.operator_script, "1 task queue ← ∅");
        }
        let none = shadow_run(records(3, Some("safe_mode")), &p, &SpacecraftConfig::default(), &ShadowConfig::default());
        assert_eq!(none.agreement, None);
        let half = {
            let mut rs = records(4, Some("drift"));
            for r in rs.iter_mut().skip(2) {
                r.as_mut().unwrap().mode = Some("charge".into());
            }
            shadow_run(rs, &p, &SpacecraftConfig::default(), &ShadowConfig::default())
        };
        assert_eq!(half.agreement, Some(0.5));
    }

    #[test]
    fn bad_records_are_skipped() {
        let mut rs = records(6, None);
        rs[1] = Err(TelemetryError::MissingFields(vec!["batt_voltage".into()]));
        // out-of-order timestamp
        rs[4].as_mut().unwrap().timestamp = 0.0;
        let s = shadow_run(rs, &PolicyParams::zeros(&DEFAULT_HIDDEN), &SpacecraftConfig::default(), &ShadowConfig::default());
        assert_eq!((s.entries, s.skips), (4, 2));
        assert!(matches!(&s.events[1], ShadowEvent::Skip(SkipRecord { index: 1, .. })));
        assert!(matches!(&s.events[4], ShadowEvent::Skip(SkipRecord { index: 4, .. })));
        let line = s.events[1].to_json_line();
        assert!(line.contains("\"kind\":\"skip\""));
        let back: ShadowEvent = serde_json::from_str(&s.events[0].to_json_line()).unwrap();
        assert_eq!(back, s.events[0]);
    }

    #[test]
    fn mode_map_is_configurable() {
        let mut m = ModeMap::default();
        m.0.insert("SUN_POINT".into(), MacroAction::Charge);
        assert_eq!(m.lookup(" sun_point "), Some(MacroAction::Charge));
        assert_eq!(m.lookup("Desaturate"), Some(MacroAction::Desaturate));
        assert_eq!(m.lookup("safe"), None);
    }
}
