//! Static propagation environments and their text description format.
//!
//! An environment file is TOML:
//!
//! ```toml
//! bs_position = [0.0, 0.0]
//! array_axis_deg = 90.0          # array axis direction, degrees from +x
//! speed_of_light = 299792458.0   # optional
//!
//! [[reflectors]]
//! start = [-6.0, 6.5]
//! end = [26.0, 6.5]
//! reflection_coefficient = 0.5
//!
//! [[blockers]]
//! start = [5.0, -1.0]
//! end = [5.0, 1.0]
//! ```
//!
//! All coordinates are meters.

use std::fs;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::channel::SPEED_OF_LIGHT;
use crate::error::{Error, Result};
use crate::geometry::{Segment, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reflector {
    #[serde(flatten)]
    pub segment: Segment,
    pub reflection_coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvironmentFile", into = "EnvironmentFile")]
pub struct Environment {
    pub bs_position: Vec2,
    /// Direction of the array axis, radians from +x. Angles of arrival are
    /// measured from this axis.
    pub array_axis: f64,
    pub reflectors: Vec<Reflector>,
    /// Opaque segments that block any path crossing them.
    pub blockers: Vec<Segment>,
    pub speed_of_light: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentFile {
    bs_position: Vec2,
    array_axis_deg: f64,
    #[serde(default = "default_speed_of_light")]
    speed_of_light: f64,
    #[serde(default)]
    reflectors: Vec<Reflector>,
    #[serde(default)]
    blockers: Vec<Segment>,
}

fn default_speed_of_light() -> f64 {
    SPEED_OF_LIGHT
}

impl TryFrom<EnvironmentFile> for Environment {
    type Error = Error;

    fn try_from(file: EnvironmentFile) -> Result<Self> {
        let env = Self {
            bs_position: file.bs_position,
            array_axis: file.array_axis_deg.to_radians(),
            reflectors: file.reflectors,
            blockers: file.blockers,
            speed_of_light: file.speed_of_light,
        };
        env.validate()?;
        Ok(env)
    }
}

impl From<Environment> for EnvironmentFile {
    fn from(env: Environment) -> Self {
        Self {
            bs_position: env.bs_position,
            array_axis_deg: env.array_axis.to_degrees(),
            speed_of_light: env.speed_of_light,
            reflectors: env.reflectors,
            blockers: env.blockers,
        }
    }
}

impl Environment {
    pub fn free_space(bs_position: Vec2) -> Self {
        Self {
            bs_position,
            array_axis: std::f64::consts::FRAC_PI_2,
            reflectors: vec![],
            blockers: vec![],
            speed_of_light: SPEED_OF_LIGHT,
        }
    }

    /// Two side walls: the direct path plus at most two reflections.
    pub fn sparse() -> Self {
        let mut env = Self::free_space(Vec2::new(0.0, 0.0));
        env.reflectors = vec![
            wall((-6.0, 7.0), (26.0, 7.0), 0.5),
            wall((-6.0, -7.0), (26.0, -7.0), 0.4),
        ];
        env
    }

    /// A cluttered hall: side walls, front and back walls, and slanted
    /// panels, giving eight to ten resolvable paths over the default grid.
    pub fn rich() -> Self {
        let mut env = Self::free_space(Vec2::new(0.0, 0.0));
        env.reflectors = vec![
            wall((-6.0, 6.5), (26.0, 6.5), 0.55),
            wall((-6.0, -6.5), (26.0, -6.5), 0.5),
            wall((13.5, -9.0), (13.5, 9.0), 0.45),
            wall((-1.5, -9.0), (-1.5, 9.0), 0.4),
            wall((4.0, 8.0), (16.0, 10.5), 0.35),
            wall((4.0, -8.0), (16.0, -10.5), 0.35),
            wall((15.5, -12.0), (17.5, 12.0), 0.3),
            wall((-3.0, -12.0), (-4.0, 12.0), 0.3),
            wall((-6.0, 9.0), (8.0, 12.0), 0.3),
            wall((-6.0, -9.0), (8.0, -12.0), 0.3),
        ];
        env
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "sparse" => Ok(Self::sparse()),
            "rich" => Ok(Self::rich()),
            "free-space" => Ok(Self::free_space(Vec2::new(0.0, 0.0))),
            other => Err(Error::Config(format!(
                "unknown environment preset {other:?} (expected sparse, rich or free-space)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bs_position.is_finite() || !self.array_axis.is_finite() {
            return Err(Error::Config("non-finite base station geometry".into()));
        }
        if !(self.speed_of_light > 0.0) {
            return Err(Error::Config("speed of light must be positive".into()));
        }
        for (i, r) in self.reflectors.iter().enumerate() {
            if r.segment.is_degenerate() {
                return Err(Error::Config(format!("reflector {i} has coincident endpoints")));
            }
            if !(r.reflection_coefficient > 0.0 && r.reflection_coefficient <= 1.0) {
                return Err(Error::Config(format!(
                    "reflector {i}: reflection coefficient {} outside (0, 1]",
                    r.reflection_coefficient
                )));
            }
        }
        if let Some(i) = self.blockers.iter().position(Segment::is_degenerate) {
            return Err(Error::Config(format!("blocker {i} has coincident endpoints")));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: EnvironmentFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("environment file: {e}")))?;
        Self::try_from(file)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&EnvironmentFile::from(self.clone())).expect("environment serializes")
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read environment {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        fs::write(path, self.to_toml_string())?;
        Ok(())
    }
}

fn wall(start: (f64, f64), end: (f64, f64), reflection_coefficient: f64) -> Reflector {
    Reflector {
        segment: Segment::new(Vec2::new(start.0, start.1), Vec2::new(end.0, end.1)),
        reflection_coefficient,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        Environment::sparse().validate().unwrap();
        Environment::rich().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let env = Environment::rich();
        let back = Environment::from_toml_str(&env.to_toml_string()).unwrap();
        assert_eq!(back.reflectors, env.reflectors);
        assert_eq!(back.bs_position, env.bs_position);
        assert!((back.array_axis - env.array_axis).abs() < 1e-12);
    }

    #[test]
    fn parses_documented_example() {
        let text = r#"
            bs_position = [0.0, 0.0]
            array_axis_deg = 90.0
            [[reflectors]]
            start = [-6.0, 6.5]
            end = [26.0, 6.5]
            reflection_coefficient = 0.5
            [[blockers]]
            start = [5.0, -1.0]
            end = [5.0, 1.0]
        "#;
        let env = Environment::from_toml_str(text).unwrap();
        assert_eq!(env.reflectors.len(), 1);
        assert_eq!(env.blockers.len(), 1);
        assert_eq!(env.speed_of_light, SPEED_OF_LIGHT);
    }

    #[test]
    fn rejects_bad_reflection_coefficient() {
        let text = r#"
            bs_position = [0.0, 0.0]
            array_axis_deg = 90.0
            [[reflectors]]
            start = [0.0, 1.0]
            end = [1.0, 1.0]
            reflection_coefficient = 1.5
        "#;
        assert!(matches!(Environment::from_toml_str(text), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_degenerate_segment() {
        let mut env = Environment::sparse();
        env.blockers.push(Segment::new(Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)));
        assert!(env.validate().is_err());
    }
}
