use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const N_PRIMITIVES: usize = 5;

/// The five functional primitives, in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Reach,
    Transport,
    Reposition,
    Stabilize,
    Idle,
}

impl Primitive {
    pub const ALL: [Primitive; N_PRIMITIVES] = [
        Primitive::Reach,
        Primitive::Transport,
        Primitive::Reposition,
        Primitive::Stabilize,
        Primitive::Idle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Primitive> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Reach => "reach",
            Primitive::Transport => "transport",
            Primitive::Reposition => "reposition",
            Primitive::Stabilize => "stabilize",
            Primitive::Idle => "idle",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A per-timestep label: one of the primitives, or unlabeled.
pub type StepLabel = Option<Primitive>;

/// Parse a label cell, case-insensitively. `Ok(None)` means "unlabeled".
pub fn parse_step_label(s: &str) -> Result<StepLabel, String> {
    let t = s.trim().to_ascii_lowercase();
    if t == "unlabeled" {
        return Ok(None);
    }
    Primitive::from_str(&t).map(Some)
}

pub fn step_label_name(l: StepLabel) -> &'static str {
    l.map_or("unlabeled", Primitive::name)
}

impl FromStr for Primitive {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == t)
            .ok_or_else(|| format!("unknown label {s:?}"))
    }
}
