use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const NUM_LEGS: usize = 4;

/// Leg index order used everywhere: FR, FL, HR, HL.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Leg {
    FR,
    FL,
    HR,
    HL,
}

impl Leg {
    pub const ALL: [Leg; NUM_LEGS] = [Leg::FR, Leg::FL, Leg::HR, Leg::HL];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Leg> {
        Self::ALL.get(i).copied()
    }

    #[inline]
    pub fn is_left(self) -> bool {
        matches!(self, Leg::FL | Leg::HL)
    }

    #[inline]
    pub fn is_front(self) -> bool {
        matches!(self, Leg::FR | Leg::FL)
    }

    pub fn name(self) -> &'static str {
        match self {
            Leg::FR => "FR",
            Leg::FL => "FL",
            Leg::HR => "HR",
            Leg::HL => "HL",
        }
    }
}

impl fmt::Display for Leg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Leg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FR" => Ok(Leg::FR),
            "FL" => Ok(Leg::FL),
            "HR" | "RR" => Ok(Leg::HR),
            "HL" | "RL" => Ok(Leg::HL),
            _ => Err(Error::Parse(format!("unknown leg `{s}` (expected FR, FL, HR or HL)"))),
        }
    }
}
