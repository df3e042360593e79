//! JSON run configuration shared by the command-line subcommands.
//!
//! ```json
//! {
//!   "domain": {"n": 8, "spin": ["periodic", "periodic"]},
//!   "target": {"kind": "clifford_torus", "r1": 1.0, "r2": 1.0},
//!   "map": {"kind": "perturbed", "amplitude": 0.1, "max_mode": 2,
//!           "base": {"kind": "wrap", "degrees": [[1, 0], [0, 1]]}},
//!   "kernel_block": "(1,0)",
//!   "seed": 7
//! }
//! ```
//!
//! Unknown keys are rejected everywhere.

use crate::domain::{Boundary, TorusDomain};
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, SpinorInit};
use crate::target::EmbeddedTarget;
use crate::twisted::{Block, MapField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// Grid points per direction; overridden by `nx`/`ny`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
    #[serde(default = "two_pi")]
    pub l1: f64,
    #[serde(default = "two_pi")]
    pub l2: f64,
    #[serde(default = "periodic")]
    pub spin: [Boundary; 2],
}

fn two_pi() -> f64 {
    2.0 * PI
}

fn periodic() -> [Boundary; 2] {
    [Boundary::Periodic; 2]
}

impl DomainSpec {
    pub fn build(&self) -> Result<TorusDomain> {
        let nx = self.nx.or(self.n).ok_or_else(|| Error::Config("domain needs `n` or `nx`".into()))?;
        let ny = self.ny.or(self.n).ok_or_else(|| Error::Config("domain needs `n` or `ny`".into()))?;
        TorusDomain::new(self.l1, self.l2, nx, ny, self.spin).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Sphere {
        q: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tube_radius: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        frame_axis: Option<[f64; 3]>,
    },
    CliffordTorus {
        r1: f64,
        r2: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tube_radius: Option<f64>,
    },
}

impl TargetSpec {
    pub fn build(&self) -> Result<EmbeddedTarget> {
        let cfg = |e: Error| Error::Config(e.to_string());
        match *self {
            TargetSpec::Sphere { q, tube_radius, frame_axis } => {
                let mut t = EmbeddedTarget::sphere(q).map_err(cfg)?;
                if let Some(d) = tube_radius {
                    t = t.with_tube_radius(d).map_err(cfg)?;
                }
                if let Some(a) = frame_axis {
                    t = t.with_frame_axis(a).map_err(cfg)?;
                }
                Ok(t)
            }
            TargetSpec::CliffordTorus { r1, r2, tube_radius } => {
                let mut t = EmbeddedTarget::clifford_torus(r1, r2).map_err(cfg)?;
                if let Some(d) = tube_radius {
                    t = t.with_tube_radius(d).map_err(cfg)?;
                }
                Ok(t)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    Constant {
        point: Vec<f64>,
    },
    /// Linear map into the Clifford torus: angle `b` is
    /// `2π (degrees[b][0] x/l1 + degrees[b][1] y/l2)`.
    Wrap {
        degrees: [[i64; 2]; 2],
    },
    /// `base` plus a random smooth ambient field, projected back.
    Perturbed {
        base: Box<MapSpec>,
        amplitude: f64,
        #[serde(default = "default_modes")]
        max_mode: usize,
    },
}

fn default_modes() -> usize {
    2
}

impl MapSpec {
    pub fn build(&self, domain: &TorusDomain, target: &EmbeddedTarget, rng: &mut ChaCha8Rng) -> Result<MapField> {
        match self {
            MapSpec::Constant { point } => {
                MapField::constant(domain, target, point).map_err(|e| Error::Config(format!("map.point: {e}")))
            }
            MapSpec::Wrap { degrees } => {
                let (l1, l2) = (domain.l1, domain.l2);
                let m = *degrees;
                MapField::torus_angles(domain, target, |x, y| {
                    let a = 2.0 * PI * (m[0][0] as f64 * x / l1 + m[0][1] as f64 * y / l2);
                    let b = 2.0 * PI * (m[1][0] as f64 * x / l1 + m[1][1] as f64 * y / l2);
                    (a, b)
                })
                .map_err(|e| Error::Config(format!("map: {e}")))
            }
            MapSpec::Perturbed { base, amplitude, max_mode } => {
                let u = base.build(domain, target, rng)?;
                u.perturbed(*amplitude, *max_mode, rng)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexSpec {
    #[serde(default = "deg_lo")]
    pub deg_min: i64,
    #[serde(default = "deg_hi")]
    pub deg_max: i64,
    #[serde(default)]
    pub genus_min: i64,
    #[serde(default = "genus_hi")]
    pub genus_max: i64,
}

fn deg_lo() -> i64 {
    -10
}
fn deg_hi() -> i64 {
    10
}
fn genus_hi() -> i64 {
    5
}

impl Default for IndexSpec {
    fn default() -> Self {
        IndexSpec { deg_min: deg_lo(), deg_max: deg_hi(), genus_min: 0, genus_max: genus_hi() }
    }
}

/// Kernel dimensions along the geodesic homotopy from `map` to `end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomotopySpec {
    pub end: MapSpec,
    pub steps: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSpec>,
    #[serde(default = "full_block")]
    pub kernel_block: Block,
    /// Number of eigenvalues of smallest magnitude to write; all by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigen_count: Option<usize>,
    #[serde(default = "zero_spinor")]
    pub spinor: SpinorInit,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub index: IndexSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homotopy: Option<HomotopySpec>,
    #[serde(default)]
    pub seed: u64,
}

fn full_block() -> Block {
    Block::Full
}

fn zero_spinor() -> SpinorInit {
    SpinorInit::Zero
}

/// Domain, target and map built from a config.
#[derive(Clone, Debug)]
pub struct Setup {
    pub domain: TorusDomain,
    pub target: EmbeddedTarget,
    pub map: MapField,
    pub rng: ChaCha8Rng,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Builds domain, target and map; the map's random parts draw from
    /// `seed`.
    pub fn setup(&self) -> Result<Setup> {
        let domain = self.domain.as_ref().ok_or_else(|| Error::Config("missing key `domain`".into()))?.build()?;
        let target = self.target.as_ref().ok_or_else(|| Error::Config("missing key `target`".into()))?.build()?;
        let spec = self.map.as_ref().ok_or_else(|| Error::Config("missing key `map`".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let map = spec.build(&domain, &target, &mut rng)?;
        Ok(Setup { domain, target, map, rng })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
        "domain": {"n": 8, "spin": ["periodic", "antiperiodic"]},
        "target": {"kind": "clifford_torus", "r1": 1.0, "r2": 1.0},
        "map": {"kind": "perturbed", "amplitude": 0.1, "max_mode": 2,
                "base": {"kind": "wrap", "degrees": [[1, 0], [0, 1]]}},
        "kernel_block": "(1,0)",
        "spinor": {"kind": "kernel", "index": 0},
        "flow": {"alpha": 1.05, "dt": 0.01, "lambda": {"fixed": 0.3}},
        "seed": 7
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let c = RunConfig::parse(EXAMPLE).unwrap();
        assert_eq!(c.kernel_block, Block::TypeOneZero);
        assert_eq!(c.flow.alpha, 1.05);
        assert_eq!(c.flow.max_steps, FlowConfig::default().max_steps);
        let again = RunConfig::parse(&c.to_json()).unwrap();
        assert_eq!(c, again);
        let s = c.setup().unwrap();
        assert_eq!(s.domain.spin[1], Boundary::Antiperiodic);
        let s2 = c.setup().unwrap();
        assert_eq!(s.map.values(), s2.map.values());
    }

    #[test]
    fn rejects_bad_documents() {
        let e = RunConfig::parse(r#"{"domian": {"n": 8}}"#).unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("domian") && m.contains("line 1")));
        let e = RunConfig::parse("{\n  \"flow\": {\"alpha\": 1.0,\n \"dtt\": 0.1}\n}").unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("line 3")));
        let c = RunConfig::parse(r#"{"domain": {"n": 8}, "map": {"kind": "constant", "point": [1, 0, 0]}}"#).unwrap();
        assert!(matches!(c.setup(), Err(Error::Config(ref m)) if m.contains("target")));
        let c = RunConfig::parse(
            r#"{"domain": {"n": 7}, "target": {"kind": "sphere", "q": 3}, "map": {"kind": "constant", "point": [1, 0, 0]}}"#,
        )
        .unwrap();
        assert!(matches!(c.setup(), Err(Error::Config(_))));
    }
}
