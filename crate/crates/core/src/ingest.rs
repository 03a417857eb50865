//! CSV ingestion of EV charging sessions and renewable output, and the
//! scenario builders of the charging case study.
//!
//! Timestamps are wall-clock times. Offsets, when present, are dropped after
//! parsing so that a session's slot follows its local time of day. A
//! timestamp `h:m` falls in slot `floor((60h + m) / slot_minutes) + 1`.

use std::collections::HashSet;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    build_inflexible_disutility, build_quadratic_disutility, GeneratorModel, Instance, LoadType,
    TimeGrid,
};

pub const SESSION_COLUMNS: [&str; 5] = [
    "session_id",
    "connection_time",
    "done_charging_time",
    "disconnection_time",
    "kwh_delivered",
];
pub const GENERATION_COLUMNS: [&str; 2] = ["timestamp", "kw"];
pub const SURGE_LEVELS: [u32; 5] = [0, 25, 50, 75, 100];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChargingSession {
    pub session_id: String,
    pub connection: NaiveDateTime,
    pub disconnection: NaiveDateTime,
    pub done_charging: NaiveDateTime,
    pub energy_kwh: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlexibilityMode {
    Quadratic,
    OnDemand,
}

impl FlexibilityMode {
    pub fn name(self) -> &'static str {
        match self {
            FlexibilityMode::Quadratic => "quadratic",
            FlexibilityMode::OnDemand => "on_demand",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub alpha: f64,
    pub ubar: f64,
    pub cost_a: f64,
    pub cost_b: f64,
    pub surge_pct: u32,
    pub seed: u64,
    pub mode: FlexibilityMode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            alpha: 0.01,
            ubar: 100.0,
            cost_a: 0.5,
            cost_b: 0.0,
            surge_pct: 0,
            seed: 0,
            mode: FlexibilityMode::Quadratic,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !SURGE_LEVELS.contains(&self.surge_pct) {
            return Err(Error::validation(format!(
                "surge {}% is not one of {SURGE_LEVELS:?}",
                self.surge_pct
            )));
        }
        for (name, v) in [("alpha", self.alpha), ("ubar", self.ubar), ("cost_b", self.cost_b)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!("{name} = {v} must be >= 0")));
            }
        }
        if !(self.cost_a.is_finite() && self.cost_a > 0.0) {
            return Err(Error::validation(format!("cost_a = {} must be > 0", self.cost_a)));
        }
        Ok(())
    }
}

/// Sessions kept for the requested day and counts of those left out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSet {
    pub sessions: Vec<ChargingSession>,
    pub spans_midnight: usize,
    pub other_days: usize,
}

pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.naive_local());
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
}

/// Maps each expected column to its position, rejecting unknown columns
/// unless `lenient`.
fn column_map<const K: usize>(
    headers: &csv::StringRecord,
    expected: [&str; K],
    lenient: bool,
) -> Result<[usize; K]> {
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if !lenient {
        if let Some(extra) = names.iter().find(|h| !expected.contains(h)) {
            return Err(Error::Parse {
                line: 1,
                message: format!("unknown column `{extra}`"),
            });
        }
    }
    let mut out = [0; K];
    for (slot, col) in out.iter_mut().zip(expected) {
        *slot = names.iter().position(|h| *h == col).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{col}`"),
        })?;
    }
    Ok(out)
}

fn line_of(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map_or(fallback, |p| p.line() as usize)
}

/// Reads a sessions CSV. With `day` set, only sessions connecting on that
/// date are kept. Sessions that end on a later date than they start are
/// left out and counted.
pub fn parse_sessions<R: Read>(reader: R, day: Option<NaiveDate>, lenient: bool) -> Result<SessionSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let cols = column_map(rdr.headers()?, SESSION_COLUMNS, lenient)?;
    let mut set = SessionSet {
        sessions: Vec::new(),
        spans_midnight: 0,
        other_days: 0,
    };
    let mut seen = HashSet::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, k + 2);
        let err = |message: String| Error::Parse { line, message };
        let field = |c: usize| rec.get(cols[c]).unwrap_or("");
        let time = |c: usize| {
            parse_timestamp(field(c))
                .ok_or_else(|| err(format!("`{}` is not an ISO-8601 timestamp", field(c))))
        };
        let session_id = field(0).to_string();
        if session_id.is_empty() {
            return Err(err("empty session_id".into()));
        }
        if !seen.insert(session_id.clone()) {
            return Err(err(format!("duplicate session_id `{session_id}`")));
        }
        let connection = time(1)?;
        let done_charging = time(2)?;
        let disconnection = time(3)?;
        let energy_kwh: f64 = field(4)
            .parse()
            .map_err(|_| err(format!("`{}` is not a number", field(4))))?;
        if !(energy_kwh.is_finite() && energy_kwh >= 0.0) {
            return Err(err(format!("session {session_id}: energy {energy_kwh} kWh must be >= 0")));
        }
        if done_charging < connection || disconnection < connection {
            return Err(err(format!("session {session_id}: connection is after completion or disconnection")));
        }
        if day.is_some_and(|d| connection.date() != d) {
            set.other_days += 1;
            continue;
        }
        if done_charging.date() != connection.date() || disconnection.date() != connection.date() {
            set.spans_midnight += 1;
            continue;
        }
        set.sessions.push(ChargingSession {
            session_id,
            connection,
            disconnection,
            done_charging,
            energy_kwh,
        });
    }
    Ok(set)
}

pub fn write_sessions<W: Write>(writer: W, sessions: &[ChargingSession]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SESSION_COLUMNS)?;
    for s in sessions {
        w.write_record([
            s.session_id.clone(),
            s.connection.format(TIMESTAMP_FORMAT).to_string(),
            s.done_charging.format(TIMESTAMP_FORMAT).to_string(),
            s.disconnection.format(TIMESTAMP_FORMAT).to_string(),
            s.energy_kwh.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn minute_of_day(t: &NaiveDateTime) -> u32 {
    t.hour() * 60 + t.minute()
}

/// 1-based slot containing `t`.
pub fn slot_of(t: &NaiveDateTime, grid: &TimeGrid) -> usize {
    (minute_of_day(t) / grid.slot_minutes) as usize + 1
}

/// Builds a load from a session: the duration is the charging time rounded
/// up to whole slots, the level spreads the delivered energy evenly over it.
pub fn session_to_load(s: &ChargingSession, grid: &TimeGrid, cfg: &ScenarioConfig) -> Result<LoadType> {
    let slot_secs = grid.slot_minutes as i64 * 60;
    let secs = (s.done_charging - s.connection).num_seconds();
    let tau = ((secs + slot_secs - 1) / slot_secs).max(0) as usize;
    if tau == 0 {
        return Err(Error::validation(format!("session {}: no charging time", s.session_id)));
    }
    let t_c = slot_of(&s.connection, grid);
    if t_c > grid.slots {
        return Err(Error::validation(format!(
            "session {}: connection slot {t_c} outside 1..={}",
            s.session_id, grid.slots
        )));
    }
    if t_c + tau - 1 > grid.slots {
        return Err(Error::validation(format!(
            "session {}: {tau} slots from slot {t_c} run past slot {}",
            s.session_id, grid.slots
        )));
    }
    let t_d = slot_of(&s.disconnection, grid).clamp(t_c, grid.slots);
    let level = s.energy_kwh / (tau as f64 * grid.slot_hours());
    if !(level > 0.0) {
        return Err(Error::validation(format!("session {}: no energy delivered", s.session_id)));
    }
    let (dis_start, dis_end) = match cfg.mode {
        FlexibilityMode::Quadratic => build_quadratic_disutility(t_c, t_d, cfg.alpha, grid)?,
        FlexibilityMode::OnDemand => build_inflexible_disutility(t_c, cfg.alpha, grid)?,
    };
    Ok(LoadType {
        id: s.session_id.clone(),
        tau,
        level,
        ubar: cfg.ubar,
        dis_start,
        dis_end,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// One value per slot.
    Exact,
    /// Coarser series: each value held over the slots it covers.
    Hold,
    /// Finer series: values averaged within each slot.
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationSeries {
    pub kw: Vec<f64>,
    pub resampling: Resampling,
}

/// Reads a renewable-output CSV and fits it to the grid. Rows must be in
/// increasing time order; the row count must divide or be a multiple of `T`.
pub fn parse_generation<R: Read>(reader: R, grid: &TimeGrid, lenient: bool) -> Result<GenerationSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let cols = column_map(rdr.headers()?, GENERATION_COLUMNS, lenient)?;
    let mut values = Vec::new();
    let mut last: Option<NaiveDateTime> = None;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, k + 2);
        let err = |message: String| Error::Parse { line, message };
        let raw_t = rec.get(cols[0]).unwrap_or("");
        let t = parse_timestamp(raw_t).ok_or_else(|| err(format!("`{raw_t}` is not an ISO-8601 timestamp")))?;
        if last.is_some_and(|p| t <= p) {
            return Err(err("timestamps must increase".into()));
        }
        last = Some(t);
        let raw_v = rec.get(cols[1]).unwrap_or("");
        let v: f64 = raw_v.parse().map_err(|_| err(format!("`{raw_v}` is not a number")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(err(format!("generation {v} kW must be >= 0")));
        }
        values.push(v);
    }
    resample(&values, grid.slots)
}

pub fn resample(values: &[f64], slots: usize) -> Result<GenerationSeries> {
    let n = values.len();
    let (kw, resampling) = if n == slots {
        (values.to_vec(), Resampling::Exact)
    } else if n > 0 && n < slots && slots % n == 0 {
        let k = slots / n;
        (values.iter().flat_map(|v| std::iter::repeat(*v).take(k)).collect(), Resampling::Hold)
    } else if n > slots && n % slots == 0 {
        let k = n / slots;
        (
            values.chunks(k).map(|c| c.iter().sum::<f64>() / k as f64).collect(),
            Resampling::Average,
        )
    } else {
        return Err(Error::dimension(format!(
            "{n} generation values cannot be fitted to {slots} slots"
        )));
    };
    Ok(GenerationSeries { kw, resampling })
}

/// Case-study instance: one load per session, quadratic cost, renewables.
/// Sessions that cannot be scheduled inside the horizon are returned with
/// the reason instead of a load.
pub fn build_instance(
    sessions: &[ChargingSession],
    renewable: Vec<f64>,
    grid: TimeGrid,
    cfg: &ScenarioConfig,
) -> Result<(Instance, Vec<(String, String)>)> {
    cfg.validate()?;
    let mut loads = Vec::with_capacity(sessions.len());
    let mut rejected = Vec::new();
    for s in sessions {
        match session_to_load(s, &grid, cfg) {
            Ok(l) => loads.push(l),
            Err(e) => rejected.push((s.session_id.clone(), e.to_string())),
        }
    }
    let inst = Instance {
        grid,
        loads,
        generator: GeneratorModel {
            a: cfg.cost_a,
            b: cfg.cost_b,
            renewable,
        },
    };
    inst.ensure_valid()?;
    Ok((inst, rejected))
}

/// Adds loads drawn uniformly with replacement from `pool` until the added
/// energy reaches `surge_pct` percent of the base energy. The `k`-th copy
/// is named `<id>#<k>`. Draws depend only on the seed and the pool's
/// energies, so pools built from the same sessions in different modes get
/// the same additions.
pub fn build_surge(base: &Instance, pool: &[LoadType], surge_pct: u32, seed: u64) -> Result<Instance> {
    let mut out = base.clone();
    if surge_pct == 0 {
        return Ok(out);
    }
    if pool.is_empty() {
        return Err(Error::validation("a positive surge needs a nonempty pool"));
    }
    if pool.iter().any(|l| !(l.energy() > 0.0)) {
        return Err(Error::validation("pool loads must carry energy"));
    }
    let target = surge_pct as f64 / 100.0 * base.loads.iter().map(LoadType::energy).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut added = 0.0;
    let mut k = 0;
    while added < target {
        let pick = &pool[rng.gen_range(0..pool.len())];
        k += 1;
        out.loads.push(LoadType {
            id: format!("{}#{k}", pick.id),
            ..pick.clone()
        });
        added += pick.energy();
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
