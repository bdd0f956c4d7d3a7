use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::phase::{build_phase_table, Movement, PhaseTable, NUM_MOVEMENTS};
use super::SimError;

pub const DEFAULT_HORIZON_STEPS: usize = 360;
pub const DEFAULT_DECISION_INTERVAL_S: f64 = 10.0;
pub const DEFAULT_SATURATION: f64 = 5.0;
pub const DEFAULT_SWITCH_LOSS: f64 = 0.5;

/// How per-interval arrival counts are drawn from the scheduled rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProcess {
    /// Poisson counts with the scheduled mean.
    #[default]
    Poisson,
    /// Counts are the increments of the floored cumulative expected arrivals;
    /// needs no randomness.
    Deterministic,
}

/// One breakpoint of a movement's piecewise-constant rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalSegment {
    pub movement: Movement,
    pub from_step: usize,
    /// Expected vehicles per decision interval.
    pub rate: f64,
}

/// Full description of one traffic task.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub phase_table: PhaseTable,
    pub horizon_steps: usize,
    pub decision_interval_s: f64,
    pub saturation: f64,
    pub switch_loss_fraction: f64,
    pub seed: u64,
    pub arrival_process: ArrivalProcess,
    /// Per movement, breakpoints sorted by `from_step`.
    schedule: [Vec<(usize, f64)>; NUM_MOVEMENTS],
}

/// On-disk JSON form of a [`Scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub phase_setting: Vec<usize>,
    #[serde(default = "default_horizon")]
    pub horizon_steps: usize,
    #[serde(default = "default_interval")]
    pub decision_interval_s: f64,
    #[serde(default = "default_saturation")]
    pub saturation: f64,
    #[serde(default = "default_switch_loss")]
    pub switch_loss_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub arrival_process: ArrivalProcess,
    #[serde(default)]
    pub arrivals: Vec<ArrivalSegment>,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON_STEPS
}
fn default_interval() -> f64 {
    DEFAULT_DECISION_INTERVAL_S
}
fn default_saturation() -> f64 {
    DEFAULT_SATURATION
}
fn default_switch_loss() -> f64 {
    DEFAULT_SWITCH_LOSS
}

impl Scenario {
    /// Scenario with default timing and capacity and no traffic.
    pub fn new(name: impl Into<String>, phase_table: PhaseTable) -> Self {
        Scenario {
            name: name.into(),
            phase_table,
            horizon_steps: DEFAULT_HORIZON_STEPS,
            decision_interval_s: DEFAULT_DECISION_INTERVAL_S,
            saturation: DEFAULT_SATURATION,
            switch_loss_fraction: DEFAULT_SWITCH_LOSS,
            seed: 0,
            arrival_process: ArrivalProcess::Poisson,
            schedule: Default::default(),
        }
    }

    /// Sets a constant rate for a movement from `from_step` onwards.
    pub fn with_rate(mut self, movement: Movement, from_step: usize, rate: f64) -> Self {
        self.set_rate(movement, from_step, rate);
        self
    }

    /// Same constant rate on every movement listed.
    pub fn with_rates(mut self, rates: [f64; NUM_MOVEMENTS]) -> Self {
        for (m, r) in Movement::ALL.iter().zip(rates) {
            self.set_rate(*m, 0, r);
        }
        self
    }

    pub fn set_rate(&mut self, movement: Movement, from_step: usize, rate: f64) {
        let entries = &mut self.schedule[movement.index()];
        match entries.binary_search_by_key(&from_step, |(s, _)| *s) {
            Ok(i) => entries[i].1 = rate,
            Err(i) => entries.insert(i, (from_step, rate)),
        }
    }

    /// Scheduled rate for a movement at a step (0 before the first breakpoint).
    pub fn rate(&self, movement: Movement, step: usize) -> f64 {
        self.schedule[movement.index()]
            .iter()
            .take_while(|(s, _)| *s <= step)
            .last()
            .map_or(0.0, |(_, r)| *r)
    }

    /// Expected arrivals on a movement over steps `0..step`.
    pub fn cumulative_rate(&self, movement: Movement, step: usize) -> f64 {
        let entries = &self.schedule[movement.index()];
        let mut total = 0.0;
        for (i, &(from, rate)) in entries.iter().enumerate() {
            if from >= step {
                break;
            }
            let until = entries.get(i + 1).map_or(step, |(s, _)| (*s).min(step));
            total += rate * (until - from) as f64;
        }
        total
    }

    /// Episode duration in seconds.
    pub fn duration_s(&self) -> f64 {
        self.horizon_steps as f64 * self.decision_interval_s
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |field: &str, reason: String| SimError::InvalidScenario {
            scenario: self.name.clone(),
            field: field.to_string(),
            reason,
        };
        if self.horizon_steps == 0 {
            return Err(invalid("horizon_steps", "must be positive".into()));
        }
        if !(self.decision_interval_s.is_finite() && self.decision_interval_s > 0.0) {
            return Err(invalid("decision_interval_s", format!("must be positive, got {}", self.decision_interval_s)));
        }
        if !(self.saturation.is_finite() && self.saturation > 0.0) {
            return Err(invalid("saturation", format!("must be positive, got {}", self.saturation)));
        }
        if !(0.0..=1.0).contains(&self.switch_loss_fraction) {
            return Err(invalid(
                "switch_loss_fraction",
                format!("must lie in [0, 1], got {}", self.switch_loss_fraction),
            ));
        }
        for (k, entries) in self.schedule.iter().enumerate() {
            for &(from, rate) in entries {
                if !(rate.is_finite() && rate >= 0.0) {
                    return Err(invalid(
                        "arrivals",
                        format!("rate for {} from step {from} must be finite and >= 0, got {rate}", Movement::ALL[k]),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn from_file_form(file: ScenarioFile) -> Result<Scenario, SimError> {
        let phase_table = build_phase_table(&file.phase_setting)?;
        let mut scenario = Scenario {
            name: file.name,
            phase_table,
            horizon_steps: file.horizon_steps,
            decision_interval_s: file.decision_interval_s,
            saturation: file.saturation,
            switch_loss_fraction: file.switch_loss_fraction,
            seed: file.seed,
            arrival_process: file.arrival_process,
            schedule: Default::default(),
        };
        for seg in file.arrivals {
            if scenario.schedule[seg.movement.index()].iter().any(|(s, _)| *s == seg.from_step) {
                return Err(SimError::InvalidScenario {
                    scenario: scenario.name,
                    field: "arrivals".into(),
                    reason: format!("duplicate breakpoint for {} at step {}", seg.movement, seg.from_step),
                });
            }
            scenario.set_rate(seg.movement, seg.from_step, seg.rate);
        }
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_file_form(&self) -> ScenarioFile {
        let arrivals = Movement::ALL
            .iter()
            .flat_map(|m| {
                self.schedule[m.index()].iter().map(move |&(from_step, rate)| ArrivalSegment {
                    movement: *m,
                    from_step,
                    rate,
                })
            })
            .collect();
        ScenarioFile {
            name: self.name.clone(),
            phase_setting: self.phase_table.primary_ids(),
            horizon_steps: self.horizon_steps,
            decision_interval_s: self.decision_interval_s,
            saturation: self.saturation,
            switch_loss_fraction: self.switch_loss_fraction,
            seed: self.seed,
            arrival_process: self.arrival_process,
            arrivals,
        }
    }

    pub fn from_json(text: &str) -> Result<Scenario, SimError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| SimError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Scenario::from_file_form(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file_form()).expect("scenario serializes")
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, SimError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Scenario::from_json(&text).map_err(|e| e.in_file(path))
}

/// Per-movement arrival counts for one decision interval.
pub fn sample_arrivals<R: Rng + ?Sized>(
    scenario: &Scenario,
    step_index: usize,
    rng: &mut R,
) -> [u32; NUM_MOVEMENTS] {
    let mut counts = [0u32; NUM_MOVEMENTS];
    for (k, m) in Movement::ALL.iter().enumerate() {
        counts[k] = match scenario.arrival_process {
            ArrivalProcess::Poisson => {
                let rate = scenario.rate(*m, step_index);
                if rate > 0.0 {
                    let draw: f64 = Poisson::new(rate).expect("rate validated").sample(rng);
                    draw as u32
                } else {
                    0
                }
            }
            ArrivalProcess::Deterministic => {
                const SLACK: f64 = 1e-9;
                let before = (scenario.cumulative_rate(*m, step_index) + SLACK).floor();
                let after = (scenario.cumulative_rate(*m, step_index + 1) + SLACK).floor();
                (after - before) as u32
            }
        };
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::phase::{Approach, Turn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn four_phase() -> PhaseTable {
        build_phase_table(&[0, 1, 2, 3]).unwrap()
    }

    #[test]
    fn zero_rates_give_zero_arrivals() {
        let s = Scenario::new("empty", four_phase());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..50 {
            assert_eq!(sample_arrivals(&s, t, &mut rng), [0; 8]);
        }
    }

    #[test]
    fn same_seed_same_draw() {
        let s = Scenario::new("s", four_phase()).with_rates([2.0; 8]);
        let a = sample_arrivals(&s, 3, &mut ChaCha8Rng::seed_from_u64(7));
        let b = sample_arrivals(&s, 3, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn poisson_sample_mean() {
        let m = Movement::new(Approach::East, Turn::Straight);
        let s = Scenario::new("s", four_phase()).with_rate(m, 0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let total: u64 = (0..n).map(|_| sample_arrivals(&s, 0, &mut rng)[m.index()] as u64).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 3.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn piecewise_schedule() {
        let m = Movement::new(Approach::North, Turn::Left);
        let s = Scenario::new("s", four_phase()).with_rate(m, 0, 1.0).with_rate(m, 10, 0.5);
        assert_eq!(s.rate(m, 0), 1.0);
        assert_eq!(s.rate(m, 9), 1.0);
        assert_eq!(s.rate(m, 10), 0.5);
        assert_eq!(s.cumulative_rate(m, 10), 10.0);
        assert_eq!(s.cumulative_rate(m, 14), 12.0);
        let late = Scenario::new("s", four_phase()).with_rate(m, 5, 2.0);
        assert_eq!(late.rate(m, 4), 0.0);
        assert_eq!(late.cumulative_rate(m, 7), 4.0);
    }

    #[test]
    fn deterministic_arrivals_track_cumulative_rate() {
        let m = Movement::new(Approach::West, Turn::Straight);
        let mut s = Scenario::new("s", four_phase()).with_rate(m, 0, 0.3);
        s.arrival_process = ArrivalProcess::Deterministic;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let total: u32 = (0..100).map(|t| sample_arrivals(&s, t, &mut rng)[m.index()]).sum();
        assert_eq!(total, 30);
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::from_json(r#"{"name": "min", "phase_setting": [0, 1, 2, 3]}"#).unwrap();
        assert_eq!(s.horizon_steps, 360);
        assert_eq!(s.decision_interval_s, 10.0);
        assert_eq!(s.duration_s(), 3600.0);
        assert_eq!(s.saturation, DEFAULT_SATURATION);
    }

    #[test]
    fn rejects_negative_rate_and_unknown_fields() {
        let neg = r#"{"name": "n", "phase_setting": [0,1,2,3],
            "arrivals": [{"movement": "E-S", "from_step": 0, "rate": -1.0}]}"#;
        let err = Scenario::from_json(neg).unwrap_err();
        assert!(err.to_string().contains("arrivals"), "{err}");

        let unknown = r#"{"name": "n", "phase_setting": [0,1,2,3], "lanes": 3}"#;
        let err = Scenario::from_json(unknown).unwrap_err();
        assert!(matches!(err, SimError::Parse { line: 1, .. }), "{err}");
        assert!(err.to_string().contains("lanes"));
    }

    #[test]
    fn rejects_bad_scalars() {
        let bad = r#"{"name": "n", "phase_setting": [0,1,2,3], "switch_loss_fraction": 1.5}"#;
        assert!(Scenario::from_json(bad).unwrap_err().to_string().contains("switch_loss_fraction"));
        let bad = r#"{"name": "n", "phase_setting": [0,1,2,3], "saturation": 0}"#;
        assert!(Scenario::from_json(bad).unwrap_err().to_string().contains("saturation"));
        let bad = r#"{"name": "n", "phase_setting": [0,1,1,3]}"#;
        assert!(matches!(Scenario::from_json(bad), Err(SimError::DuplicatePhase(1))));
    }
}
