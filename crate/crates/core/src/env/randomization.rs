use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Command, EnvError};
use crate::sim::JOINTS;

/// Per-episode sampling ranges, each `[low, high]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainRandomization {
    /// When false every quantity sits at the midpoint of its range.
    pub enabled: bool,
    pub friction: [f64; 2],
    /// Added trunk mass, kg.
    pub added_mass: [f64; 2],
    pub command_vx: [f64; 2],
    pub command_wz: [f64; 2],
    /// Initial joint offset from the default pose, rad.
    pub joint_offset: [f64; 2],
}

impl Default for DomainRandomization {
    fn default() -> Self {
        Self {
            enabled: true,
            friction: [0.6, 1.5],
            added_mass: [-0.2, 1.0],
            command_vx: [0.0, 1.0],
            command_wz: [-0.5, 0.5],
            joint_offset: [-0.1, 0.1],
        }
    }
}

/// One draw from [`DomainRandomization`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrSample {
    pub friction: f64,
    pub added_mass: f64,
    pub command: Command,
    pub joint_offsets: [f64; JOINTS],
}

fn draw<R: Rng + ?Sized>(range: [f64; 2], enabled: bool, rng: &mut R) -> f64 {
    let [lo, hi] = range;
    if !enabled || lo == hi {
        0.5 * (lo + hi)
    } else {
        rng.random_range(lo..=hi)
    }
}

impl DomainRandomization {
    pub fn validate(&self) -> Result<(), EnvError> {
        let ranges = [
            ("friction", self.friction),
            ("added_mass", self.added_mass),
            ("command_vx", self.command_vx),
            ("command_wz", self.command_wz),
            ("joint_offset", self.joint_offset),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(EnvError::Config(format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        if self.friction[0] < 0.0 {
            return Err(EnvError::Config("friction must be non-negative".into()));
        }
        Ok(())
    }

    /// Draws all quantities; the draw order is fixed so equal seeds give
    /// equal samples.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DrSample {
        let on = self.enabled;
        let friction = draw(self.friction, on, rng);
        let added_mass = draw(self.added_mass, on, rng);
        let vx = draw(self.command_vx, on, rng);
        let wz = draw(self.command_wz, on, rng);
        let joint_offsets = std::array::from_fn(|_| draw(self.joint_offset, on, rng));
        DrSample { friction, added_mass, command: Command { vx, wz }, joint_offsets }
    }

    /// Same ranges with the command fixed.
    pub fn with_command(&self, cmd: Command) -> Self {
        Self { command_vx: [cmd.vx, cmd.vx], command_wz: [cmd.wz, cmd.wz], ..self.clone() }
    }
}
