//! Seeded synthetic arterial corridor.
//!
//! An eastbound arterial crosses `intersections` signalized side streets.
//! Arterial demand enters at the first intersection; northbound side-street
//! demand joins the arterial with a right turn at every intersection. At
//! each intersection the eastbound stream divides between the through
//! phase and the left-turn phase in proportion to their planned splits, so
//! the flow reaching the next intersection follows the same phase-split
//! structure the transition matrix encodes.

use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::health::{filter_healthy_days, HealthCalendar};
use super::series::{
    slot_time, write_series, DetectorSeries, FlowGrid, SLOTS_PER_DAY, STEP_MINUTES,
};
use crate::error::{read_to_string, write_string, Error, Result};
use crate::signal_graph::{
    build_transition_matrix, Detector, DetectorGraph, DetectorKind, Direction, GraphOptions,
    IntersectionPlans, PhaseMovement, PlanBook, SignalTimingPlan, SplitMode, Topology,
};

pub const THROUGH_PHASE: &str = "2";
pub const LEFT_PHASE: &str = "5";
pub const SIDE_PHASE: &str = "4";

/// Double-peaked daily demand in vehicles per five minutes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandProfile {
    pub base: f64,
    pub morning_amplitude: f64,
    /// Hours since midnight.
    pub morning_peak: f64,
    pub morning_spread: f64,
    pub afternoon_amplitude: f64,
    pub afternoon_peak: f64,
    pub afternoon_spread: f64,
    /// Side-street demand relative to arterial demand.
    pub side_fraction: f64,
    /// Multiplier applied on Saturdays and Sundays.
    pub weekend_scale: f64,
}

impl Default for DemandProfile {
    fn default() -> Self {
        Self {
            base: 60.0,
            morning_amplitude: 140.0,
            morning_peak: 7.75,
            morning_spread: 0.9,
            afternoon_amplitude: 120.0,
            afternoon_peak: 17.25,
            afternoon_spread: 1.2,
            side_fraction: 0.35,
            weekend_scale: 0.6,
        }
    }
}

impl DemandProfile {
    /// Noise-free arterial demand at `hour` (fractional) on a weekday.
    pub fn at(&self, hour: f64) -> f64 {
        let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
        let daytime = 0.15 + 0.85 * logistic((hour - 6.0) / 0.7) * logistic((22.0 - hour) / 1.0);
        let bump = |amp: f64, peak: f64, spread: f64| {
            amp * (-0.5 * ((hour - peak) / spread).powi(2)).exp()
        };
        self.base * daytime
            + bump(
                self.morning_amplitude,
                self.morning_peak,
                self.morning_spread,
            )
            + bump(
                self.afternoon_amplitude,
                self.afternoon_peak,
                self.afternoon_spread,
            )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorridorConfig {
    pub seed: u64,
    #[serde(default = "defaults::intersections")]
    pub intersections: usize,
    /// 1 = advance detector only, 2 = advance plus stopbar.
    #[serde(default = "defaults::per_approach")]
    pub detectors_per_approach: usize,
    #[serde(default = "defaults::weeks")]
    pub weeks: usize,
    #[serde(default = "defaults::start_date")]
    pub start_date: NaiveDate,
    /// Overall noise level; 0 gives exactly periodic, noise-free data.
    #[serde(default = "defaults::noise")]
    pub noise: f64,
    /// Travel time between consecutive intersections in five-minute steps.
    #[serde(default = "defaults::travel_steps")]
    pub travel_steps: usize,
    #[serde(default)]
    pub demand: DemandProfile,
    /// Probability that a detector is flagged unhealthy on a given day.
    #[serde(default)]
    pub unhealthy_rate: f64,
    /// Timing plans used at every intersection; the built-in sheet when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plans: Option<Vec<SignalTimingPlan>>,
}

mod defaults {
    use chrono::NaiveDate;

    pub fn intersections() -> usize {
        2
    }
    pub fn per_approach() -> usize {
        2
    }
    pub fn weeks() -> usize {
        8
    }
    pub fn start_date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 1, 2).expect("valid date")
    }
    pub fn noise() -> f64 {
        0.1
    }
    pub fn travel_steps() -> usize {
        1
    }
}

impl SyntheticCorridorConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            intersections: defaults::intersections(),
            detectors_per_approach: defaults::per_approach(),
            weeks: defaults::weeks(),
            start_date: defaults::start_date(),
            noise: defaults::noise(),
            travel_steps: defaults::travel_steps(),
            demand: DemandProfile::default(),
            unhealthy_rate: 0.0,
            plans: None,
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let c: Self =
            toml::from_str(text).map_err(|e| crate::signal_graph::toml_error(text, origin, e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.intersections == 0 {
            return bad("at least one intersection is required");
        }
        if !(1..=2).contains(&self.detectors_per_approach) {
            return bad("detectors_per_approach must be 1 or 2");
        }
        if self.weeks == 0 {
            return bad("weeks must be positive");
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.unhealthy_rate) {
            return bad("unhealthy_rate must lie in [0, 1]");
        }
        let d = &self.demand;
        if d.base < 0.0
            || d.morning_amplitude < 0.0
            || d.afternoon_amplitude < 0.0
            || d.side_fraction < 0.0
            || d.weekend_scale < 0.0
        {
            return bad("demand parameters must be non-negative");
        }
        if d.morning_spread <= 0.0 || d.afternoon_spread <= 0.0 {
            return bad("peak spreads must be positive");
        }
        Ok(())
    }

    fn plan_sheet(&self) -> Result<Vec<SignalTimingPlan>> {
        match &self.plans {
            Some(p) => Ok(p.clone()),
            None => {
                let book = PlanBook::parse(
                    include_str!("../../data/plans_5083.toml"),
                    Path::new("plans_5083.toml"),
                )?;
                Ok(book.intersections[0].plans.clone())
            }
        }
    }
}

/// Everything the pipeline needs: series, topology, plans, health.
#[derive(Clone, Debug)]
pub struct SyntheticCorridor {
    pub series: Vec<DetectorSeries>,
    pub topology: Topology,
    pub plans: PlanBook,
    pub calendar: HealthCalendar,
}

impl SyntheticCorridor {
    /// Writes `detectors.csv`, `health.csv`, `topology.toml`, `plans.toml`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_series(&dir.join("detectors.csv"), &self.series)?;
        self.calendar.write(&dir.join("health.csv"))?;
        write_string(&dir.join("topology.toml"), &self.topology.to_toml()?)?;
        write_string(&dir.join("plans.toml"), &self.plans.to_toml()?)?;
        Ok(())
    }

    pub fn graph(&self, plan_id: &str, options: &GraphOptions) -> Result<DetectorGraph> {
        build_transition_matrix(&self.topology, &self.plans, plan_id, options)
    }

    /// Healthy days of every detector, in graph order.
    pub fn grid(&self, graph: &DetectorGraph, with_occupancy: bool) -> Result<FlowGrid> {
        let healthy = filter_healthy_days(&self.series, &self.calendar)?;
        FlowGrid::from_series(&healthy, &graph.detector_ids(), with_occupancy)
    }

    /// The plan as timed at the first intersection; every intersection
    /// shares its activation windows.
    pub fn plan(&self, plan_id: &str) -> Result<&SignalTimingPlan> {
        self.plans.plan(&intersection_id(0), plan_id)
    }
}

pub fn intersection_id(i: usize) -> String {
    format!("{}", 1001 + i)
}

pub const DEPARTURE_EAST: &str = "900101";
pub const DEPARTURE_NORTH: &str = "900201";

/// Detector layout of the corridor, in graph order.
pub fn corridor_topology(intersections: usize, per_approach: usize) -> Topology {
    let mut t = Topology {
        terminals: vec!["DEP-E".into(), "DEP-N".into()],
        ..Default::default()
    };
    let det = |id: String, inter: &str, dir, kind| Detector {
        id,
        intersection: inter.to_string(),
        direction: dir,
        kind,
    };
    let mut feeders: Vec<String> = Vec::new();
    for i in 0..intersections {
        let inter = intersection_id(i);
        let adv = format!("{inter}01");
        let stop = format!("{inter}02");
        let side = format!("{inter}03");
        t.detectors.push(det(
            adv.clone(),
            &inter,
            Direction::EB,
            DetectorKind::Advance,
        ));
        let last_eb = if per_approach == 2 {
            t.detectors.push(det(
                stop.clone(),
                &inter,
                Direction::EB,
                DetectorKind::Stopbar,
            ));
            t.adjacency.push((adv.clone(), stop.clone()));
            stop
        } else {
            adv.clone()
        };
        t.detectors.push(det(
            side.clone(),
            &inter,
            Direction::NB,
            DetectorKind::Advance,
        ));
        for f in feeders.drain(..) {
            t.adjacency.push((f, adv.clone()));
        }
        feeders.push(last_eb.clone());
        feeders.push(side);
        t.movements.extend([
            PhaseMovement {
                intersection: inter.clone(),
                phase: THROUGH_PHASE.into(),
                inbound: Direction::EB,
                outbound: vec![Direction::EB],
            },
            PhaseMovement {
                intersection: inter.clone(),
                phase: LEFT_PHASE.into(),
                inbound: Direction::EB,
                outbound: vec![Direction::NB],
            },
            PhaseMovement {
                intersection: inter.clone(),
                phase: SIDE_PHASE.into(),
                inbound: Direction::NB,
                outbound: vec![Direction::EB],
            },
        ]);
        if i + 1 == intersections {
            t.detectors.push(det(
                DEPARTURE_EAST.into(),
                "DEP-E",
                Direction::EB,
                DetectorKind::Advance,
            ));
            t.detectors.push(det(
                DEPARTURE_NORTH.into(),
                "DEP-N",
                Direction::NB,
                DetectorKind::Advance,
            ));
            for f in feeders.drain(..) {
                t.adjacency.push((f, DEPARTURE_EAST.into()));
            }
            t.adjacency.push((last_eb, DEPARTURE_NORTH.into()));
        }
    }
    t
}

/// Share of the eastbound stream that takes the through phase:
/// `L(through) / (L(through) + L(left))`.
pub fn through_share(plan: &SignalTimingPlan) -> Result<f64> {
    let th = plan.phase_split(THROUGH_PHASE, SplitMode::GreenPlusClearance)?;
    let lt = plan.phase_split(LEFT_PHASE, SplitMode::GreenPlusClearance)?;
    if th + lt <= 0.0 {
        return Ok(1.0);
    }
    Ok(th / (th + lt))
}

fn plan_at(
    plans: &[SignalTimingPlan],
    weekday: Weekday,
    minute: u32,
) -> &SignalTimingPlan {
    plans
        .iter()
        .find(|p| p.is_active(weekday, minute))
        .or_else(|| {
            plans
                .iter()
                .find(|p| p.activation.iter().any(|w| w.contains(minute)))
        })
        .unwrap_or(&plans[0])
}

pub fn generate_synthetic(config: &SyntheticCorridorConfig) -> Result<SyntheticCorridor> {
    config.validate()?;
    let sheet = config.plan_sheet()?;
    if sheet.is_empty() {
        return Err(Error::Config("no signal plans".into()));
    }
    let n_int = config.intersections;
    let days = config.weeks * 7;
    let total = days * SLOTS_PER_DAY;
    let eta = config.noise;
    let lag = config.travel_steps;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    // per-slot through share, identical at every intersection
    let mut share = Vec::with_capacity(total);
    for g in 0..total {
        let date = config.start_date + chrono::Duration::days((g / SLOTS_PER_DAY) as i64);
        let minute = (g % SLOTS_PER_DAY) as u32 * STEP_MINUTES;
        share.push(through_share(plan_at(&sheet, date.weekday(), minute))?);
    }

    // source demand: arterial entry plus one side street per intersection
    let n_sources = 1 + n_int;
    let mut sources = vec![vec![0.0; total]; n_sources];
    for (k, src) in sources.iter_mut().enumerate() {
        let scale = if k == 0 {
            1.0
        } else {
            config.demand.side_fraction
        };
        let mut ar = 0.0;
        let mut day_factor = 1.0;
        for (g, out) in src.iter_mut().enumerate() {
            let slot = g % SLOTS_PER_DAY;
            let date = config.start_date + chrono::Duration::days((g / SLOTS_PER_DAY) as i64);
            if slot == 0 {
                day_factor = (1.0 + 1.5 * eta * normal(&mut rng)).max(0.3);
            }
            ar = 0.95 * ar + 0.3 * eta * normal(&mut rng);
            let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
            let wk = if weekend {
                config.demand.weekend_scale
            } else {
                1.0
            };
            let hour = slot as f64 * STEP_MINUTES as f64 / 60.0;
            let mean = config.demand.at(hour) * scale * wk;
            *out = (mean * day_factor * (1.0 + ar)).max(0.0).round();
        }
    }

    // propagate true counts down the corridor
    let delayed = |v: &[f64], g: usize| if g >= lag { v[g - lag] } else { v[0] };
    let mut eb_in: Vec<Vec<f64>> = vec![sources[0].clone()];
    let mut dep_e = vec![0.0; total];
    let mut dep_n = vec![0.0; total];
    for i in 0..n_int {
        let inflow = &eb_in[i];
        let side = &sources[1 + i];
        let through: Vec<f64> = (0..total).map(|g| (inflow[g] * share[g]).round()).collect();
        let left: Vec<f64> = (0..total).map(|g| inflow[g] - through[g]).collect();
        let next: Vec<f64> = (0..total)
            .map(|g| delayed(&through, g) + delayed(side, g))
            .collect();
        if i + 1 == n_int {
            dep_e = next;
            dep_n = (0..total).map(|g| delayed(&left, g)).collect();
        } else {
            eb_in.push(next);
        }
    }

    let topology = corridor_topology(n_int, config.detectors_per_approach);
    let truth_of = |d: &Detector| -> Vec<f64> {
        if d.id == DEPARTURE_EAST {
            return dep_e.clone();
        }
        if d.id == DEPARTURE_NORTH {
            return dep_n.clone();
        }
        let i: usize = d.intersection.parse::<usize>().expect("numeric id") - 1001;
        match d.direction {
            Direction::NB => sources[1 + i].clone(),
            _ => eb_in[i].clone(),
        }
    };
    let timestamps: Vec<_> = (0..total)
        .map(|g| {
            slot_time(
                config.start_date + chrono::Duration::days((g / SLOTS_PER_DAY) as i64),
                g % SLOTS_PER_DAY,
            )
        })
        .collect();
    let mut series = Vec::with_capacity(topology.detectors.len());
    for d in &topology.detectors {
        let truth = truth_of(d);
        let (flow_noise, occ_gain) = match d.kind {
            DetectorKind::Advance => (3.0, 1.0),
            DetectorKind::Stopbar => (6.0, 1.6),
        };
        let mut flow = Vec::with_capacity(total);
        let mut occ = Vec::with_capacity(total);
        for &v in &truth {
            let f = if eta > 0.0 {
                (v + eta * flow_noise * (v + 1.0).sqrt() * normal(&mut rng))
                    .round()
                    .max(0.0)
            } else {
                v
            };
            let o = occ_gain * f / (f + 250.0) + 0.02 * eta * normal(&mut rng);
            flow.push(f);
            occ.push(o.clamp(0.0, 1.0));
        }
        series.push(DetectorSeries {
            detector_id: d.id.clone(),
            timestamps: timestamps.clone(),
            flow,
            occupancy: Some(occ),
        });
    }

    let mut calendar = HealthCalendar::new();
    for day in 0..days {
        let date = config.start_date + chrono::Duration::days(day as i64);
        for d in &topology.detectors {
            let healthy = config.unhealthy_rate == 0.0 || !rng.gen_bool(config.unhealthy_rate);
            calendar.set(&d.id, date, healthy);
        }
    }

    let plans = PlanBook {
        intersections: (0..n_int)
            .map(|i| IntersectionPlans {
                id: intersection_id(i),
                name: String::new(),
                plans: sheet.clone(),
            })
            .collect(),
    };
    Ok(SyntheticCorridor {
        series,
        topology,
        plans,
        calendar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_graph::{build_transition_matrix, GraphOptions};

    fn noiseless() -> SyntheticCorridorConfig {
        SyntheticCorridorConfig {
            noise: 0.0,
            weeks: 2,
            ..SyntheticCorridorConfig::new(3)
        }
    }

    fn flow<'a>(c: &'a SyntheticCorridor, id: &str) -> &'a [f64] {
        &c.series.iter().find(|s| s.detector_id == id).unwrap().flow
    }

    #[test]
    fn layout_has_eight_detectors() {
        let c = generate_synthetic(&SyntheticCorridorConfig::new(1)).unwrap();
        assert_eq!(c.topology.detectors.len(), 8);
        assert!(c.series.iter().all(|s| s.flow.len() == 8 * 7 * 288));
        let g =
            build_transition_matrix(&c.topology, &c.plans, "P2", &GraphOptions::default()).unwrap();
        // 100102 (EB stopbar, first intersection) feeds 100201 (EB advance, second)
        let i = c.topology.index_of("100102").unwrap();
        let j = c.topology.index_of("100201").unwrap();
        assert!((g.weights().get(i, j) - 0.425).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_downstream_is_split_times_upstream() {
        let cfg = noiseless();
        let c = generate_synthetic(&cfg).unwrap();
        let sheet = cfg.plan_sheet().unwrap();
        let up = flow(&c, "100101");
        let side = flow(&c, "100103");
        let down = flow(&c, "100201");
        for g in 1..up.len() {
            let date = cfg.start_date + chrono::Duration::days((g - 1) as i64 / 288);
            let minute = ((g - 1) % 288) as u32 * 5;
            let s = through_share(plan_at(&sheet, date.weekday(), minute)).unwrap();
            assert_eq!(down[g] - side[g - 1], (up[g - 1] * s).round(), "slot {g}");
        }
        // stopbar sees the same vehicles as the advance detector
        assert_eq!(flow(&c, "100101"), flow(&c, "100102"));
    }

    #[test]
    fn diverge_conserves_flow() {
        let c = generate_synthetic(&noiseless()).unwrap();
        let inbound = flow(&c, "100202");
        let side = flow(&c, "100203");
        let east = flow(&c, DEPARTURE_EAST);
        let north = flow(&c, DEPARTURE_NORTH);
        for g in 0..288 * 7 - 1 {
            assert_eq!(east[g + 1] - side[g] + north[g + 1], inbound[g]);
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let cfg = SyntheticCorridorConfig {
            weeks: 1,
            ..SyntheticCorridorConfig::new(11)
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.series, b.series);
        let c = generate_synthetic(&SyntheticCorridorConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn zero_noise_is_weekly_periodic() {
        let c = generate_synthetic(&noiseless()).unwrap();
        for s in &c.series {
            // skip the first slots, which depend on the warm-up lag
            for g in 10..7 * 288 {
                assert_eq!(s.flow[g], s.flow[g + 7 * 288]);
            }
        }
    }

    #[test]
    fn stopbar_is_noisier() {
        // both detectors see the same vehicles, so first differences differ
        // only through measurement noise
        let c = generate_synthetic(&SyntheticCorridorConfig::new(5)).unwrap();
        let rough = |x: &[f64]| (1..x.len()).map(|g| (x[g] - x[g - 1]).powi(2)).sum::<f64>();
        assert!(rough(flow(&c, "100202")) > rough(flow(&c, "100201")));
    }

    #[test]
    fn config_requires_seed() {
        assert!(SyntheticCorridorConfig::parse("weeks = 2\n", Path::new("c")).is_err());
        let c = SyntheticCorridorConfig::parse("seed = 9\nnoise = 0.2\n", Path::new("c")).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.intersections, 2);
        let again = SyntheticCorridorConfig::parse(&c.to_toml().unwrap(), Path::new("c")).unwrap();
        assert_eq!(c, again);
    }
}
