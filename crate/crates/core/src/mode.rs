//! The five travel-mode classes and their fixed order.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Walk,
    Bike,
    Bus,
    Car,
    Subway,
}

impl Mode {
    pub const ALL: [Mode; NUM_CLASSES] = [Mode::Walk, Mode::Bike, Mode::Bus, Mode::Car, Mode::Subway];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Mode> {
        Mode::ALL.get(i).copied()
    }

    /// Maps a GeoLife mode string to a class. Taxi rides count as car;
    /// modes outside the five classes (train, airplane, boat, run, ...)
    /// return `None`.
    pub fn from_label(s: &str) -> Option<Mode> {
        match s.trim().to_ascii_lowercase().as_str() {
            "walk" => Some(Mode::Walk),
            "bike" => Some(Mode::Bike),
            "bus" => Some(Mode::Bus),
            "car" | "taxi" => Some(Mode::Car),
            "subway" => Some(Mode::Subway),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Walk => "walk",
            Mode::Bike => "bike",
            Mode::Bus => "bus",
            Mode::Car => "car",
            Mode::Subway => "subway",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
