use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{read_to_string, Error, Result};

/// Which part of a phase's allocation counts as its split `L(I, p)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Green plus yellow and all-red clearance.
    #[default]
    GreenPlusClearance,
    GreenOnly,
}

/// Timing of one ring-pair column of a plan, e.g. phases `2&6`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSplit {
    pub pair: String,
    pub green: f64,
    pub yellow_red: f64,
}

impl PhaseSplit {
    /// Individual phases named by the pair id (`"2&6"` → `["2", "6"]`).
    pub fn members(&self) -> impl Iterator<Item = &str> {
        self.pair
            .split('&')
            .map(str::trim)
            .filter(|s| !s.is_empty())
    }

    pub fn split(&self, mode: SplitMode) -> f64 {
        match mode {
            SplitMode::GreenPlusClearance => self.green + self.yellow_red,
            SplitMode::GreenOnly => self.green,
        }
    }

    fn matches(&self, phase: &str) -> bool {
        self.pair == phase || self.members().any(|m| m == phase)
    }
}

/// A time-of-day window in minutes since midnight, `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActivationWindow {
    pub start_minute: u32,
    pub end_minute: u32,
}

impl ActivationWindow {
    pub fn contains(&self, minute: u32) -> bool {
        minute >= self.start_minute && minute < self.end_minute
    }

    pub fn duration_minutes(&self) -> u32 {
        self.end_minute - self.start_minute
    }
}

fn parse_clock(s: &str) -> Option<u32> {
    let (h, m) = s.trim().split_once(':')?;
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    if m >= 60 || h > 24 || (h == 24 && m != 0) {
        return None;
    }
    Some(h * 60 + m)
}

impl FromStr for ActivationWindow {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| format!("activation window `{s}` must look like HH:MM-HH:MM"))?;
        let start = parse_clock(a).ok_or_else(|| format!("bad time `{a}`"))?;
        let end = parse_clock(b).ok_or_else(|| format!("bad time `{b}`"))?;
        if start >= end {
            return Err(format!("activation window `{s}` is empty"));
        }
        Ok(Self {
            start_minute: start,
            end_minute: end,
        })
    }
}

impl fmt::Display for ActivationWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{:02}-{}:{:02}",
            self.start_minute / 60,
            self.start_minute % 60,
            self.end_minute / 60,
            self.end_minute % 60
        )
    }
}

impl Serialize for ActivationWindow {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActivationWindow {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Set of weekdays, Monday = bit 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeekdayMask(u8);

impl WeekdayMask {
    pub const ALL: Self = Self(0b111_1111);
    pub const WEEKDAYS: Self = Self(0b001_1111);
    pub const WEEKENDS: Self = Self(0b110_0000);

    pub fn contains(&self, day: Weekday) -> bool {
        self.0 & (1 << day.num_days_from_monday()) != 0
    }

    pub fn contains_date(&self, date: chrono::NaiveDate) -> bool {
        self.contains(date.weekday())
    }
}

impl Default for WeekdayMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl FromStr for WeekdayMask {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" | "daily" => return Ok(Self::ALL),
            "weekdays" => return Ok(Self::WEEKDAYS),
            "weekends" => return Ok(Self::WEEKENDS),
            _ => {}
        }
        let mut bits = 0u8;
        for part in s.split(',') {
            let day: Weekday = part
                .trim()
                .parse()
                .map_err(|_| format!("unknown weekday `{}`", part.trim()))?;
            bits |= 1 << day.num_days_from_monday();
        }
        Ok(Self(bits))
    }
}

impl fmt::Display for WeekdayMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::ALL => f.write_str("all"),
            Self::WEEKDAYS => f.write_str("weekdays"),
            Self::WEEKENDS => f.write_str("weekends"),
            _ => {
                const NAMES: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];
                let days: Vec<&str> = (0..7)
                    .filter(|i| self.0 & (1 << i) != 0)
                    .map(|i| NAMES[i])
                    .collect();
                f.write_str(&days.join(","))
            }
        }
    }
}

impl Serialize for WeekdayMask {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WeekdayMask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One row of an intersection's timing sheet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalTimingPlan {
    pub id: String,
    pub cycle_length: f64,
    pub activation: Vec<ActivationWindow>,
    #[serde(default)]
    pub days: WeekdayMask,
    pub phases: Vec<PhaseSplit>,
}

impl SignalTimingPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.cycle_length > 0.0) {
            return Err(Error::InvalidPlan(format!(
                "plan {}: cycle length must be positive",
                self.id
            )));
        }
        let mut rings = [0.0f64; 2];
        for p in &self.phases {
            if p.green < 0.0 || p.yellow_red < 0.0 {
                return Err(Error::InvalidPlan(format!(
                    "plan {}: negative split for phases {}",
                    self.id, p.pair
                )));
            }
            for m in p.members() {
                let ring = match m.parse::<u32>() {
                    Ok(n) if n >= 5 => 1,
                    _ => 0,
                };
                rings[ring] += p.green + p.yellow_red;
            }
        }
        for (r, total) in rings.iter().enumerate() {
            if *total > self.cycle_length + 1e-9 {
                return Err(Error::InvalidPlan(format!(
                    "plan {}: ring {} allocates {total}s in a {}s cycle",
                    self.id,
                    r + 1,
                    self.cycle_length
                )));
            }
        }
        Ok(())
    }

    fn find(&self, phase: &str) -> Result<&PhaseSplit> {
        self.phases
            .iter()
            .find(|p| p.matches(phase))
            .ok_or_else(|| Error::UnknownPhase {
                plan: self.id.clone(),
                phase: phase.to_string(),
            })
    }

    /// `L(I, p)` in seconds. `phase` is a single phase (`"2"`) or a pair id.
    pub fn phase_split(&self, phase: &str, mode: SplitMode) -> Result<f64> {
        Ok(self.find(phase)?.split(mode))
    }

    pub fn phase_split_fraction(&self, phase: &str, mode: SplitMode) -> Result<f64> {
        Ok(self.phase_split(phase, mode)? / self.cycle_length)
    }

    /// `½ · Σ_{p∈P} L(I, p)` with every pair expanded into its member phases.
    pub fn half_total_split(&self, mode: SplitMode) -> f64 {
        0.5 * self
            .phases
            .iter()
            .map(|p| p.split(mode) * p.members().count() as f64)
            .sum::<f64>()
    }

    pub fn is_active(&self, weekday: Weekday, minute: u32) -> bool {
        self.days.contains(weekday) && self.activation.iter().any(|w| w.contains(minute))
    }
}

/// `(green + yellow_plus_red) / cycle_length` for a phase of a plan.
pub fn phase_split_fraction(plan: &SignalTimingPlan, phase: &str) -> Result<f64> {
    plan.phase_split_fraction(phase, SplitMode::GreenPlusClearance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionPlans {
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    #[serde(rename = "plan")]
    pub plans: Vec<SignalTimingPlan>,
}

/// All timing sheets of a study area, one block per intersection.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanBook {
    #[serde(rename = "intersection", default)]
    pub intersections: Vec<IntersectionPlans>,
}

impl PlanBook {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let book: PlanBook = toml::from_str(text).map_err(|e| toml_error(text, origin, e))?;
        for i in &book.intersections {
            for p in &i.plans {
                p.validate().map_err(|e| match e {
                    Error::InvalidPlan(msg) => {
                        Error::InvalidPlan(format!("intersection {}: {msg}", i.id))
                    }
                    other => other,
                })?;
            }
        }
        Ok(book)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn intersection(&self, id: &str) -> Option<&IntersectionPlans> {
        self.intersections.iter().find(|i| i.id == id)
    }

    pub fn plan(&self, intersection: &str, plan_id: &str) -> Result<&SignalTimingPlan> {
        self.intersection(intersection)
            .and_then(|i| i.plans.iter().find(|p| p.id == plan_id))
            .ok_or_else(|| Error::UnknownPlan {
                intersection: intersection.to_string(),
                plan: plan_id.to_string(),
            })
    }

    /// The plan governing `intersection` at a given weekday and minute.
    pub fn active_plan(
        &self,
        intersection: &str,
        weekday: Weekday,
        minute: u32,
    ) -> Option<&SignalTimingPlan> {
        self.intersection(intersection)?
            .plans
            .iter()
            .find(|p| p.is_active(weekday, minute))
    }
}

pub(crate) fn toml_error(text: &str, origin: &Path, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg: e.message().to_string(),
    }
}
