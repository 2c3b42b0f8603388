//! Timed scenario events: gait/style/velocity changes, pushes and leg
//! failures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpg::{GaitLibrary, GaitMatrix, GaitName};
use crate::error::{Error, Result};
use crate::leg::{Leg, NUM_LEGS};
use crate::pattern::StyleParams;

/// A gait given either by library name or as custom touchdown phases
/// (cycle fractions, FR FL HR HL).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GaitSpec {
    Named(String),
    Custom {
        phase: [f64; NUM_LEGS],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<[[f64; NUM_LEGS]; NUM_LEGS]>,
    },
}

impl GaitSpec {
    pub fn named(g: GaitName) -> Self {
        GaitSpec::Named(g.id().to_string())
    }

    pub fn resolve(&self, library: &GaitLibrary) -> Result<GaitMatrix<f64>> {
        match self {
            GaitSpec::Named(n) => library.get(n),
            GaitSpec::Custom { phase, weights } => {
                if phase.iter().any(|p| !p.is_finite()) {
                    return Err(Error::OutOfRange("custom gait phase must be finite".into()));
                }
                if let Some(w) = weights {
                    if w.iter().flatten().any(|x| !x.is_finite() || *x < 0.0) {
                        return Err(Error::OutOfRange(
                            "custom gait weights must be finite and >= 0".into(),
                        ));
                    }
                }
                Ok(GaitMatrix::from_fractions("custom", *phase, *weights))
            }
        }
    }
}

impl Default for GaitSpec {
    fn default() -> Self {
        GaitSpec::named(GaitName::Trot)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SetGait {
        gait: GaitSpec,
    },
    SetStyle {
        style: StyleParams<f64>,
    },
    SetVelocityCommand {
        velocity: f64,
    },
    /// Instantaneous horizontal base-velocity change. Direction in radians
    /// (world yaw); random when absent.
    Push {
        magnitude: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        direction: Option<f64>,
    },
    DisableLeg {
        leg: Leg,
        /// (abd, thigh, calf); the nominal stance pose when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lock_angles: Option<[f64; 3]>,
    },
    EnableLeg {
        leg: Leg,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    /// Seconds from episode start. Applied at the first control tick at or
    /// after this time.
    pub t: f64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    #[serde(default)]
    pub events: Vec<TimedEvent>,
}

impl ScenarioScript {
    pub fn new(events: Vec<TimedEvent>) -> Result<Self> {
        let s = ScenarioScript { events };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut last = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            if !e.t.is_finite() || e.t < 0.0 {
                return Err(Error::InvalidConfig(format!("event {i}: invalid time {}", e.t)));
            }
            if e.t < last {
                return Err(Error::InvalidConfig(format!(
                    "event {i}: time {} precedes previous event at {last}",
                    e.t
                )));
            }
            last = e.t;
            match &e.event {
                Event::SetStyle { style } => style.validate()?,
                Event::SetVelocityCommand { velocity } if !velocity.is_finite() => {
                    return Err(Error::OutOfRange(format!("event {i}: velocity not finite")))
                }
                Event::Push { magnitude, .. } if !(magnitude.is_finite() && *magnitude >= 0.0) => {
                    return Err(Error::OutOfRange(format!("event {i}: push magnitude")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn push(&mut self, t: f64, event: Event) {
        self.events.push(TimedEvent { t, event });
    }

    /// The leg-failure demonstration: trot → pace → bound → pronk, repeated
    /// with one and then both rear legs locked.
    pub fn leg_failure_demo(segment: f64, velocity: f64) -> Self {
        let gaits = [GaitName::Trot, GaitName::Pace, GaitName::Bound, GaitName::Pronk];
        let mut s = ScenarioScript::default();
        s.push(0.0, Event::SetVelocityCommand { velocity });
        let mut t = 0.0;
        for round in 0..3 {
            match round {
                1 => s.push(t, Event::DisableLeg { leg: Leg::HR, lock_angles: None }),
                2 => s.push(t, Event::DisableLeg { leg: Leg::HL, lock_angles: None }),
                _ => {}
            }
            for g in gaits {
                s.push(t, Event::SetGait { gait: GaitSpec::named(g) });
                t += segment;
            }
        }
        s
    }

    pub fn duration_hint(&self) -> f64 {
        self.events.last().map(|e| e.t).unwrap_or(0.0)
    }
}

/// Resampling schedule used for training-style episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampleSchedule {
    pub velocity_period: f64,
    pub gait_period: f64,
    pub push_period: f64,
    pub velocity_range: (f64, f64),
    pub max_push: f64,
}

impl Default for ResampleSchedule {
    fn default() -> Self {
        ResampleSchedule {
            velocity_period: 5.0,
            gait_period: 3.0,
            push_period: 15.0,
            velocity_range: (0.2, 3.0),
            max_push: 0.5,
        }
    }
}

impl ResampleSchedule {
    /// Expands the schedule into a concrete script for `duration` seconds.
    pub fn script(&self, duration: f64, seed: u64) -> ScenarioScript {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut timeline: Vec<(f64, u8)> = Vec::new();
        let mut add = |period: f64, kind: u8| {
            if period > 0.0 {
                let mut t = 0.0;
                while t < duration {
                    timeline.push((t, kind));
                    t += period;
                }
            }
        };
        add(self.velocity_period, 0);
        add(self.gait_period, 1);
        add(self.push_period, 2);
        timeline.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut s = ScenarioScript::default();
        for (t, kind) in timeline {
            let event = match kind {
                0 => Event::SetVelocityCommand {
                    velocity: rng.random_range(self.velocity_range.0..=self.velocity_range.1),
                },
                1 => {
                    let g = GaitName::ALL[rng.random_range(0..GaitName::ALL.len())];
                    Event::SetGait { gait: GaitSpec::named(g) }
                }
                _ => {
                    // no push at t = 0
                    if t == 0.0 {
                        continue;
                    }
                    Event::Push {
                        magnitude: rng.random_range(0.0..=self.max_push),
                        direction: Some(rng.random_range(0.0..std::f64::consts::TAU)),
                    }
                }
            };
            s.push(t, event);
        }
        s
    }
}
