use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Coarse future-motion category. The discriminant is the class id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Maneuver {
    MaintainSpeed = 0,
    Accelerate = 1,
    Decelerate = 2,
    TurnLeft = 3,
    TurnRight = 4,
    LaneChange = 5,
}

pub const NUM_MANEUVERS: usize = 6;

impl Maneuver {
    pub const ALL: [Maneuver; NUM_MANEUVERS] = [
        Maneuver::MaintainSpeed,
        Maneuver::Accelerate,
        Maneuver::Decelerate,
        Maneuver::TurnLeft,
        Maneuver::TurnRight,
        Maneuver::LaneChange,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Maneuver> {
        Self::ALL.get(id).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Maneuver::MaintainSpeed => "maintain-speed",
            Maneuver::Accelerate => "accelerate",
            Maneuver::Decelerate => "decelerate",
            Maneuver::TurnLeft => "turn-left",
            Maneuver::TurnRight => "turn-right",
            Maneuver::LaneChange => "lane-change",
        }
    }

    pub fn is_turn(self) -> bool {
        matches!(self, Maneuver::TurnLeft | Maneuver::TurnRight)
    }

    pub fn is_longitudinal(self) -> bool {
        matches!(self, Maneuver::MaintainSpeed | Maneuver::Accelerate | Maneuver::Decelerate)
    }
}

impl fmt::Display for Maneuver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Maneuver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid("maneuver", format!("unknown maneuver `{s}`")))
    }
}
