use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::plan::toml_error;
use crate::error::{read_to_string, Error, Result};

/// Direction of travel served by a detector or movement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    EB,
    WB,
    NB,
    SB,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::EB => Direction::WB,
            Direction::WB => Direction::EB,
            Direction::NB => Direction::SB,
            Direction::SB => Direction::NB,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EB" => Ok(Direction::EB),
            "WB" => Ok(Direction::WB),
            "NB" => Ok(Direction::NB),
            "SB" => Ok(Direction::SB),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Advance,
    Stopbar,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detector {
    pub id: String,
    pub intersection: String,
    pub direction: Direction,
    pub kind: DetectorKind,
}

/// Movement permitted by one signal phase at an intersection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseMovement {
    pub intersection: String,
    /// Single phase (`"2"`) or ring pair (`"2&6"`) whose split governs the movement.
    pub phase: String,
    pub inbound: Direction,
    pub outbound: Vec<Direction>,
}

impl PhaseMovement {
    pub fn is_u_turn(&self, out: Direction) -> bool {
        out == self.inbound.reverse()
    }

    /// Outbound directions that can contribute transition weight.
    pub fn effective_outbound(&self) -> impl Iterator<Item = Direction> + '_ {
        self.outbound
            .iter()
            .copied()
            .filter(|&o| !self.is_u_turn(o))
    }
}

/// Detectors, movements and downstream pairs of a study area.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    /// Intersections that carry detectors but no timing sheet (e.g.
    /// departure detectors several blocks downstream).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terminals: Vec<String>,
    /// `(i, j)`: detector `j` is directly downstream of detector `i`.
    #[serde(default)]
    pub adjacency: Vec<(String, String)>,
    #[serde(rename = "detector", default)]
    pub detectors: Vec<Detector>,
    #[serde(rename = "movement", default)]
    pub movements: Vec<PhaseMovement>,
}

impl Topology {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let t: Topology = toml::from_str(text).map_err(|e| toml_error(text, origin, e))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for d in &self.detectors {
            if !seen.insert(d.id.as_str()) {
                return Err(Error::InvalidTopology(format!(
                    "duplicate detector id {}",
                    d.id
                )));
            }
        }
        for (i, j) in &self.adjacency {
            if i == j {
                return Err(Error::InvalidTopology(format!("self adjacency on {i}")));
            }
            for id in [i, j] {
                if !seen.contains(id.as_str()) {
                    return Err(Error::UnknownDetector(id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.detectors.iter().position(|d| d.id == id)
    }

    pub fn detector_ids(&self) -> Vec<String> {
        self.detectors.iter().map(|d| d.id.clone()).collect()
    }

    pub fn is_adjacent(&self, from: &str, to: &str) -> bool {
        self.adjacency.iter().any(|(i, j)| i == from && j == to)
    }

    /// Induced sub-topology on `keep`, preserving the original detector order.
    pub fn restrict(&self, keep: &[String]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::EmptySubset);
        }
        for k in keep {
            if self.index_of(k).is_none() {
                return Err(Error::UnknownDetector(k.clone()));
            }
        }
        let kept: HashSet<&str> = keep.iter().map(String::as_str).collect();
        Ok(Self {
            terminals: self.terminals.clone(),
            adjacency: self
                .adjacency
                .iter()
                .filter(|(i, j)| kept.contains(i.as_str()) && kept.contains(j.as_str()))
                .cloned()
                .collect(),
            detectors: self
                .detectors
                .iter()
                .filter(|d| kept.contains(d.id.as_str()))
                .cloned()
                .collect(),
            movements: self.movements.clone(),
        })
    }

    /// Same topology with detectors listed in `order`.
    pub fn reorder(&self, order: &[usize]) -> Self {
        let mut t = self.clone();
        t.detectors = order.iter().map(|&i| self.detectors[i].clone()).collect();
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
adjacency = [["a", "b"]]

[[detector]]
id = "a"
intersection = "1"
direction = "EB"
kind = "advance"

[[detector]]
id = "b"
intersection = "2"
direction = "EB"
kind = "stopbar"

[[movement]]
intersection = "1"
phase = "2"
inbound = "EB"
outbound = ["EB", "WB"]
"#;

    #[test]
    fn parses_and_excludes_u_turn() {
        let t = Topology::parse(SMALL, Path::new("t.toml")).unwrap();
        assert_eq!(t.detectors.len(), 2);
        let outs: Vec<_> = t.movements[0].effective_outbound().collect();
        assert_eq!(outs, vec![Direction::EB]);
        assert!(t.is_adjacent("a", "b"));
        assert!(!t.is_adjacent("b", "a"));
    }

    #[test]
    fn rejects_duplicates_and_self_pairs() {
        let dup = SMALL.replace("id = \"b\"", "id = \"a\"");
        assert!(Topology::parse(&dup, Path::new("t")).is_err());
        let selfpair = SMALL.replace(r#"[["a", "b"]]"#, r#"[["a", "a"]]"#);
        assert!(matches!(
            Topology::parse(&selfpair, Path::new("t")),
            Err(Error::InvalidTopology(_))
        ));
    }

    #[test]
    fn restrict_drops_dangling_pairs() {
        let t = Topology::parse(SMALL, Path::new("t")).unwrap();
        let r = t.restrict(&["b".to_string()]).unwrap();
        assert_eq!(r.detectors.len(), 1);
        assert!(r.adjacency.is_empty());
        assert!(matches!(t.restrict(&[]), Err(Error::EmptySubset)));
    }
}
