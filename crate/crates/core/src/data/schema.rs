use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_SENSOR_CHANNELS: usize = 76;
pub const TIME_CHANNEL: &str = "time_elapsed";
pub const PARETIC_CHANNEL: &str = "paretic_side";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    LinearAcceleration,
    Quaternion,
    JointAngle,
    TimeElapsed,
    PareticFlag,
}

impl ChannelKind {
    pub fn is_context(self) -> bool {
        matches!(self, ChannelKind::TimeElapsed | ChannelKind::PareticFlag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDesc {
    pub name: String,
    pub kind: ChannelKind,
    pub unit: String,
}

impl ChannelDesc {
    pub fn new(name: impl Into<String>, kind: ChannelKind, unit: &str) -> Self {
        ChannelDesc {
            name: name.into(),
            kind,
            unit: unit.to_string(),
        }
    }
}

/// Ordered channel layout: sensor channels followed by the context channels
/// (elapsed time, paretic-side flag) that are attached from patient metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSchema {
    pub channels: Vec<ChannelDesc>,
}

const UPPER_BODY: [&str; 9] = [
    "c7", "t12", "pelvis", "upperarm_l", "upperarm_r", "forearm_l", "forearm_r", "hand_l", "hand_r",
];

impl ChannelSchema {
    /// Build a schema from counts: `acc_sensors` three-axis accelerometers,
    /// `quat_sensors` orientation quaternions and `angles` joint angles,
    /// plus the two context channels.
    pub fn from_counts(acc_sensors: usize, quat_sensors: usize, angles: usize) -> Self {
        let sensor_name = |i: usize| -> String {
            UPPER_BODY
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("imu{i}"))
        };
        let mut channels = Vec::new();
        for s in 0..quat_sensors {
            for axis in ["w", "x", "y", "z"] {
                channels.push(ChannelDesc::new(
                    format!("quat_{}_{axis}", sensor_name(s)),
                    ChannelKind::Quaternion,
                    "1",
                ));
            }
        }
        // accelerations come from the limb sensors first
        for s in (3..9).chain(0..3).chain(9..).take(acc_sensors) {
            for axis in ["x", "y", "z"] {
                channels.push(ChannelDesc::new(
                    format!("acc_{}_{axis}", sensor_name(s)),
                    ChannelKind::LinearAcceleration,
                    "m/s^2",
                ));
            }
        }
        for a in 0..angles {
            channels.push(ChannelDesc::new(format!("angle_{a:02}"), ChannelKind::JointAngle, "deg"));
        }
        channels.push(ChannelDesc::new(TIME_CHANNEL, ChannelKind::TimeElapsed, "s"));
        channels.push(ChannelDesc::new(PARETIC_CHANNEL, ChannelKind::PareticFlag, "1"));
        ChannelSchema { channels }
    }

    /// Nine quaternions, six accelerometers and 22 joint angles: 76 sensor
    /// channels, 78 with context.
    pub fn upper_body() -> Self {
        Self::from_counts(6, 9, 22)
    }

    /// A 12-sensor-channel layout used for desk-scale experiments.
    pub fn compact() -> Self {
        Self::from_counts(2, 1, 2)
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn sensor_channels(&self) -> &[ChannelDesc] {
        let n = self.sensor_count();
        &self.channels[..n]
    }

    pub fn sensor_count(&self) -> usize {
        self.channels.iter().filter(|c| !c.kind.is_context()).count()
    }

    pub fn context_count(&self) -> usize {
        self.len() - self.sensor_count()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|c| c.name.as_str())
    }

    pub fn validate(&self, expected_sensors: Option<usize>) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let mut in_context = false;
        for c in &self.channels {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate channel name {:?}", c.name)));
            }
            if c.name == "label" {
                return Err(Error::Config("channel name \"label\" is reserved".into()));
            }
            if c.kind.is_context() {
                in_context = true;
            } else if in_context {
                return Err(Error::Config(format!(
                    "sensor channel {:?} follows a context channel",
                    c.name
                )));
            }
        }
        let ctx: Vec<ChannelKind> = self.channels[self.sensor_count()..].iter().map(|c| c.kind).collect();
        if ctx != [ChannelKind::TimeElapsed, ChannelKind::PareticFlag] {
            return Err(Error::Config(
                "schema must end with the time_elapsed and paretic_flag context channels".into(),
            ));
        }
        if let Some(n) = expected_sensors {
            if self.sensor_count() != n {
                return Err(Error::Config(format!(
                    "schema has {} sensor channels, expected {n}",
                    self.sensor_count()
                )));
            }
        }
        Ok(())
    }

    /// Hash of channel order, used to reject checkpoints trained on a
    /// different layout. The statistic order is folded in for feature models.
    pub fn feature_order_hash(&self, statistics: &[&str]) -> String {
        let mut h = Sha256::new();
        for c in &self.channels {
            h.update(c.name.as_bytes());
            h.update([0u8]);
        }
        h.update([1u8]);
        for s in statistics {
            h.update(s.as_bytes());
            h.update([0u8]);
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Default for ChannelSchema {
    fn default() -> Self {
        Self::upper_body()
    }
}
