use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DataError;

/// The twelve annotated base activities, in the order of the dataset's distribution table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Activity {
    Null,
    PressingButton,
    SlidingDoorlock,
    OpeningDoor,
    ClosingDoor,
    CheckingMachines,
    Walking,
    TakingKey,
    RotatingKey,
    PlacingKeyBack,
    CheckingDoorlock,
    TouchingScreen,
}

impl Activity {
    pub const ALL: [Activity; 12] = [
        Activity::Null,
        Activity::PressingButton,
        Activity::SlidingDoorlock,
        Activity::OpeningDoor,
        Activity::ClosingDoor,
        Activity::CheckingMachines,
        Activity::Walking,
        Activity::TakingKey,
        Activity::RotatingKey,
        Activity::PlacingKeyBack,
        Activity::CheckingDoorlock,
        Activity::TouchingScreen,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Activity::Null => "Null",
            Activity::PressingButton => "PressingButton",
            Activity::SlidingDoorlock => "SlidingDoorlock",
            Activity::OpeningDoor => "OpeningDoor",
            Activity::ClosingDoor => "ClosingDoor",
            Activity::CheckingMachines => "CheckingMachines",
            Activity::Walking => "Walking",
            Activity::TakingKey => "TakingKey",
            Activity::RotatingKey => "RotatingKey",
            Activity::PlacingKeyBack => "PlacingKeyBack",
            Activity::CheckingDoorlock => "CheckingDoorlock",
            Activity::TouchingScreen => "TouchingScreen",
        }
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activity {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Activity::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| DataError::UnknownActivity(s.to_string()))
    }
}

/// Sensor modality of a channel: inertial or body capacitance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "IMU")]
    Imu,
    #[serde(rename = "BCS")]
    Bcs,
}

impl Modality {
    /// Capacitance channels are named `cap…`, optionally behind a `device/` prefix.
    pub fn of_channel(name: &str) -> Modality {
        let local = name.rsplit('/').next().unwrap_or(name);
        if local.to_ascii_lowercase().starts_with("cap") {
            Modality::Bcs
        } else {
            Modality::Imu
        }
    }
}
