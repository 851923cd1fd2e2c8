//! Charging-session records: parsing, validation, synthesis and the ACN adapter.
//!
//! Times are hours on a single global clock. Integer timestamp `t` labels the
//! half-open interval `(t-1, t]`, and `hourly_energy[t]` is the cumulative
//! battery energy read at instant `t`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::numerics::RngStream;
use crate::{Error, Result};

/// One charger's record of a single EV visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingSession {
    pub charger_id: u32,
    pub t_arr: f64,
    pub t_dc: f64,
    pub t_de: f64,
    pub e_arr: f64,
    pub e_dc: f64,
    pub e_de: f64,
    pub e_user: f64,
    pub hourly_energy: BTreeMap<i64, f64>,
}

impl ChargingSession {
    /// Integer hours `t` with `t_arr < t < t_de`, where a meter reading must exist.
    pub fn interior_hours(&self) -> std::ops::RangeInclusive<i64> {
        let first = self.t_arr.floor() as i64 + 1;
        let last = self.t_de.ceil() as i64 - 1;
        first..=last
    }

    /// The hour labels `(t-1, t]` that overlap the connection interval.
    pub fn occupied_hours(&self) -> std::ops::RangeInclusive<i64> {
        let first = self.t_arr.floor() as i64 + 1;
        let last = self.t_de.ceil() as i64;
        first..=last
    }
}

/// One broken invariant of a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

fn violation(field: impl Into<String>, rule: impl Into<String>) -> Violation {
    Violation {
        field: field.into(),
        rule: rule.into(),
    }
}

/// Lists every violated invariant; empty means the session is valid.
pub fn validate_session(s: &ChargingSession) -> Vec<Violation> {
    let mut out = Vec::new();
    let scalars = [
        ("t_arr", s.t_arr),
        ("t_dc", s.t_dc),
        ("t_de", s.t_de),
        ("e_arr", s.e_arr),
        ("e_dc", s.e_dc),
        ("e_de", s.e_de),
        ("e_user", s.e_user),
    ];
    for (name, v) in scalars {
        if !v.is_finite() {
            out.push(violation(name, "must be finite"));
        }
    }
    if !out.is_empty() {
        return out;
    }

    if s.charger_id == 0 {
        out.push(violation("charger_id", "must be >= 1"));
    }
    if !(s.t_dc > s.t_arr) {
        out.push(violation("t_dc", "must satisfy t_arr < t_dc"));
    }
    if !(s.t_de >= s.t_dc) {
        out.push(violation("t_de", "must satisfy t_dc <= t_de"));
    }
    if !(s.e_dc >= s.e_arr) {
        out.push(violation("e_dc", "must satisfy e_arr <= e_dc"));
    }
    if s.e_de != s.e_dc {
        out.push(violation("e_de", "must equal e_dc (no energy change after done charging)"));
    }
    if !(s.e_user > s.e_arr) {
        out.push(violation("e_user", "must exceed e_arr"));
    }
    if s.t_de <= s.t_arr {
        // Hour coverage is meaningless without a positive stay.
        return out;
    }

    for t in s.interior_hours() {
        if !s.hourly_energy.contains_key(&t) {
            out.push(violation(format!("hourly_energy[{t}]"), "missing reading inside (t_arr, t_de)"));
        }
    }
    let mut prev: Option<(i64, f64)> = None;
    for (&t, &e) in &s.hourly_energy {
        let field = format!("hourly_energy[{t}]");
        if !e.is_finite() {
            out.push(violation(field, "must be finite"));
            continue;
        }
        if !((t as f64) > s.t_arr && (t as f64) < s.t_de) {
            out.push(violation(field.clone(), "timestamp outside (t_arr, t_de)"));
        }
        if e < s.e_arr || e > s.e_dc {
            out.push(violation(field.clone(), "must lie within [e_arr, e_dc]"));
        }
        if (t as f64) >= s.t_dc && e != s.e_dc {
            out.push(violation(field.clone(), "must equal e_dc at or after t_dc"));
        }
        if let Some((pt, pe)) = prev {
            if e < pe {
                out.push(violation(field, format!("decreases from hour {pt}")));
            }
        }
        prev = Some((t, e));
    }
    out
}

fn ensure_valid(s: &ChargingSession, row: usize) -> Result<()> {
    let v = validate_session(s);
    if v.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    Err(Error::Validation(format!("session at row {row}: {}", list.join("; "))))
}

pub const CSV_HEADER: [&str; 10] = [
    "charger_id", "t_arr", "t_dc", "t_de", "e_arr", "e_dc", "e_de", "e_user", "hour", "energy",
];

/// Parses sessions from the canonical JSON array or the long-format CSV.
///
/// Every returned session passes [`validate_session`].
pub fn parse_sessions(text: &str) -> Result<Vec<ChargingSession>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') || trimmed.starts_with('{') {
        parse_json(trimmed)
    } else {
        parse_csv(text)
    }
}

fn parse_json(text: &str) -> Result<Vec<ChargingSession>> {
    let root: Value = serde_json::from_str(text)?;
    let items = root.as_array().ok_or_else(|| Error::Parse {
        row: 0,
        field: "<root>".into(),
        message: "expected a JSON array of sessions".into(),
    })?;
    let mut out = Vec::with_capacity(items.len());
    for (row, item) in items.iter().enumerate() {
        let s = session_from_value(item, row)?;
        ensure_valid(&s, row)?;
        out.push(s);
    }
    Ok(out)
}

fn session_from_value(v: &Value, row: usize) -> Result<ChargingSession> {
    let obj = v.as_object().ok_or_else(|| Error::Parse {
        row,
        field: "<record>".into(),
        message: "expected an object".into(),
    })?;
    let num = |field: &str| -> Result<f64> {
        obj.get(field)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Parse {
                row,
                field: field.into(),
                message: "missing or not a number".into(),
            })
    };
    let charger_id = obj
        .get("charger_id")
        .and_then(Value::as_u64)
        .and_then(|c| u32::try_from(c).ok())
        .ok_or_else(|| Error::Parse {
            row,
            field: "charger_id".into(),
            message: "missing or not a non-negative integer".into(),
        })?;
    let t_arr = num("t_arr")?;
    let t_dc = num("t_dc")?;
    let t_de = num("t_de")?;
    let e_arr = num("e_arr")?;
    let e_dc = num("e_dc")?;
    let e_de = num("e_de")?;
    let e_user = num("e_user")?;
    let hourly = obj
        .get("hourly_energy")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::Parse {
            row,
            field: "hourly_energy".into(),
            message: "missing or not an object".into(),
        })?;
    let mut hourly_energy = BTreeMap::new();
    for (k, e) in hourly {
        let field = format!("hourly_energy[{k}]");
        let t: i64 = k.trim().parse().map_err(|_| Error::Parse {
            row,
            field: field.clone(),
            message: "key is not an integer hour".into(),
        })?;
        let e = e.as_f64().ok_or_else(|| Error::Parse {
            row,
            field,
            message: "not a number".into(),
        })?;
        hourly_energy.insert(t, e);
    }
    Ok(ChargingSession {
        charger_id,
        t_arr,
        t_dc,
        t_de,
        e_arr,
        e_dc,
        e_de,
        e_user,
        hourly_energy,
    })
}

fn parse_csv(text: &str) -> Result<Vec<ChargingSession>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::Parse {
            row: 1,
            field: "<header>".into(),
            message: format!("expected `{}`", CSV_HEADER.join(",")),
        });
    }

    let mut out: Vec<ChargingSession> = Vec::new();
    let mut first_line_of_current = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| Error::Parse {
                    row: line,
                    field: CSV_HEADER[i].into(),
                    message: "not a number".into(),
                })
        };
        let charger_id: u32 = rec.get(0).unwrap_or("").parse().map_err(|_| Error::Parse {
            row: line,
            field: "charger_id".into(),
            message: "not a non-negative integer".into(),
        })?;
        let key = ChargingSession {
            charger_id,
            t_arr: cell(1)?,
            t_dc: cell(2)?,
            t_de: cell(3)?,
            e_arr: cell(4)?,
            e_dc: cell(5)?,
            e_de: cell(6)?,
            e_user: cell(7)?,
            hourly_energy: BTreeMap::new(),
        };
        let hour_cell = rec.get(8).unwrap_or("");
        let energy_cell = rec.get(9).unwrap_or("");
        let reading = match (hour_cell.is_empty(), energy_cell.is_empty()) {
            (true, true) => None,
            (false, false) => {
                let hour: i64 = hour_cell.parse().map_err(|_| Error::Parse {
                    row: line,
                    field: "hour".into(),
                    message: "not an integer".into(),
                })?;
                Some((hour, cell(9)?))
            }
            _ => {
                return Err(Error::Parse {
                    row: line,
                    field: if hour_cell.is_empty() { "hour" } else { "energy" }.into(),
                    message: "hour and energy must both be present or both empty".into(),
                })
            }
        };

        let same = out.last().is_some_and(|s| {
            s.charger_id == key.charger_id
                && s.t_arr == key.t_arr
                && s.t_dc == key.t_dc
                && s.t_de == key.t_de
                && s.e_arr == key.e_arr
                && s.e_dc == key.e_dc
                && s.e_de == key.e_de
                && s.e_user == key.e_user
        });
        if !same {
            if let Some(prev) = out.last() {
                ensure_valid(prev, first_line_of_current)?;
            }
            out.push(key);
            first_line_of_current = line;
        }
        if let Some((h, e)) = reading {
            let s = out.last_mut().expect("pushed above");
            if s.hourly_energy.insert(h, e).is_some() {
                return Err(Error::Parse {
                    row: line,
                    field: "hour".into(),
                    message: format!("duplicate reading for hour {h}"),
                });
            }
        }
    }
    if let Some(prev) = out.last() {
        ensure_valid(prev, first_line_of_current)?;
    }
    Ok(out)
}

/// Canonical JSON encoding (inverse of [`parse_sessions`]).
pub fn sessions_to_json(sessions: &[ChargingSession]) -> Result<String> {
    Ok(serde_json::to_string_pretty(sessions)?)
}

/// Long-format CSV: one row per (session, hour reading).
pub fn sessions_to_csv(sessions: &[ChargingSession]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for s in sessions {
        let base = [
            s.charger_id.to_string(),
            s.t_arr.to_string(),
            s.t_dc.to_string(),
            s.t_de.to_string(),
            s.e_arr.to_string(),
            s.e_dc.to_string(),
            s.e_de.to_string(),
            s.e_user.to_string(),
        ];
        if s.hourly_energy.is_empty() {
            let mut row = base.to_vec();
            row.extend([String::new(), String::new()]);
            w.write_record(&row)?;
        }
        for (t, e) in &s.hourly_energy {
            let mut row = base.to_vec();
            row.extend([t.to_string(), e.to_string()]);
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
}

/// Parameters of the synthetic session generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub horizon_hours: u32,
    pub chargers: u32,
    /// Poisson arrival rate per charger, sessions per hour.
    pub arrival_rate: f64,
    pub mean_stay_hours: f64,
    pub mean_demand_kwh: f64,
    pub charge_rate_kw: f64,
    /// Standard deviation of the requested energy around its mean.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            horizon_hours: 720,
            chargers: 5,
            arrival_rate: 0.1,
            mean_stay_hours: 6.0,
            mean_demand_kwh: 15.0,
            charge_rate_kw: 6.6,
            noise_std: 5.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("synth config: {m}")));
        if self.horizon_hours < 48 {
            return bad("horizon_hours must be >= 48");
        }
        if self.chargers == 0 {
            return bad("chargers must be >= 1");
        }
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return bad("arrival_rate must be finite and >= 0");
        }
        for (name, v) in [
            ("mean_stay_hours", self.mean_stay_hours),
            ("mean_demand_kwh", self.mean_demand_kwh),
            ("charge_rate_kw", self.charge_rate_kw),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be finite and > 0"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and >= 0");
        }
        Ok(())
    }
}

/// Draws a synthetic station history.
///
/// Each charger sees Poisson arrivals. A stay is exponential but truncated so
/// the car leaves before the next arrival on the same charger (and before the
/// horizon), which keeps per-charger occupancy at most one.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<ChargingSession>> {
    cfg.check()?;
    let horizon = cfg.horizon_hours as f64;
    let root = RngStream::new(cfg.seed, 0);
    let mut out = Vec::new();
    if cfg.arrival_rate == 0.0 {
        return Ok(out);
    }

    for charger in 1..=cfg.chargers {
        let mut rng = root.split(charger as u64);
        let mut arrivals = Vec::new();
        let mut t = 0.0;
        loop {
            t += rng.exponential(1.0 / cfg.arrival_rate);
            if t >= horizon {
                break;
            }
            arrivals.push(t);
        }
        for (i, &t_arr) in arrivals.iter().enumerate() {
            let next = arrivals.get(i + 1).copied().unwrap_or(horizon);
            let stay = rng.exponential(cfg.mean_stay_hours);
            let t_de = (t_arr + stay).min(next).min(horizon);
            let demand = loop {
                let d = rng.gaussian(cfg.mean_demand_kwh, cfg.noise_std)?;
                if d > 0.0 {
                    break d;
                }
            };
            let e_arr = rng.uniform_range(2.0, 20.0);
            if t_de - t_arr < 1e-9 {
                continue;
            }
            out.push(build_linear_session(
                charger,
                t_arr,
                t_de,
                e_arr,
                demand,
                cfg.charge_rate_kw,
            ));
        }
    }
    out.sort_by(|a, b| a.t_arr.total_cmp(&b.t_arr).then(a.charger_id.cmp(&b.charger_id)));
    Ok(out)
}

/// A session charged at constant power until the demand is met or the car leaves.
pub fn build_linear_session(
    charger_id: u32,
    t_arr: f64,
    t_de: f64,
    e_arr: f64,
    demand_kwh: f64,
    rate_kw: f64,
) -> ChargingSession {
    let needed = demand_kwh / rate_kw;
    let (t_dc, e_dc) = if t_arr + needed < t_de {
        (t_arr + needed, e_arr + demand_kwh)
    } else {
        (t_de, e_arr + rate_kw * (t_de - t_arr))
    };
    linear_session(charger_id, t_arr, t_dc, t_de, e_arr, e_dc, e_arr + demand_kwh)
}

/// Session whose meter ramps linearly from `e_arr` at `t_arr` to `e_dc` at `t_dc`.
pub fn linear_session(
    charger_id: u32,
    t_arr: f64,
    t_dc: f64,
    t_de: f64,
    e_arr: f64,
    e_dc: f64,
    e_user: f64,
) -> ChargingSession {
    let mut s = ChargingSession {
        charger_id,
        t_arr,
        t_dc,
        t_de,
        e_arr,
        e_dc,
        e_de: e_dc,
        e_user,
        hourly_energy: BTreeMap::new(),
    };
    let rate = (e_dc - e_arr) / (t_dc - t_arr);
    for t in s.interior_hours() {
        let tf = t as f64;
        let e = if tf >= t_dc {
            e_dc
        } else {
            (e_arr + rate * (tf - t_arr)).clamp(e_arr, e_dc)
        };
        s.hourly_energy.insert(t, e);
    }
    s
}

/// Result of adapting an ACN export.
#[derive(Debug, Clone)]
pub struct AcnImport {
    pub sessions: Vec<ChargingSession>,
    /// Station ids in charger-id order (`charger_id = index + 1`).
    pub stations: Vec<String>,
    /// Epoch of hour 0, as a UNIX timestamp in seconds.
    pub origin_unix: i64,
    pub skipped: Vec<(usize, String)>,
}

/// Maps ACN-style session records onto [`ChargingSession`].
///
/// Accepts either a bare array or an object with an `_items` array. Field
/// mapping: `connectionTime -> t_arr`, `doneChargingTime -> t_dc` (falls back
/// to `disconnectTime`), `disconnectTime -> t_de`, `kWhDelivered -> e_dc = e_de`,
/// last `userInputs[].kWhRequested -> e_user` (falls back to `kWhDelivered`),
/// `e_arr = 0`, `stationID -> charger_id` by first appearance. ACN carries no
/// intermediate meter readings, so charging is taken to be linear between
/// connection and done-charging. Hours count from `origin_unix` when given,
/// otherwise from the earliest connection floored to the hour.
pub fn from_acn_json(text: &str, origin_unix: Option<i64>) -> Result<AcnImport> {
    let root: Value = serde_json::from_str(text)?;
    let items = root
        .as_array()
        .or_else(|| root.get("_items").and_then(Value::as_array))
        .ok_or_else(|| Error::Parse {
            row: 0,
            field: "_items".into(),
            message: "expected an array or an object with `_items`".into(),
        })?;

    struct Raw {
        row: usize,
        station: String,
        arr: i64,
        dc: Option<i64>,
        de: i64,
        delivered: f64,
        requested: Option<f64>,
    }

    let mut raws = Vec::new();
    for (row, item) in items.iter().enumerate() {
        let time = |field: &str| -> Result<Option<i64>> {
            match item.get(field) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => parse_timestamp(s).map(Some).ok_or_else(|| Error::Parse {
                    row,
                    field: field.into(),
                    message: format!("unrecognized timestamp `{s}`"),
                }),
                Some(_) => Err(Error::Parse {
                    row,
                    field: field.into(),
                    message: "expected a timestamp string".into(),
                }),
            }
        };
        let missing = |field: &str| Error::Parse {
            row,
            field: field.into(),
            message: "missing".into(),
        };
        let station = match item.get("stationID") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(missing("stationID")),
        };
        let requested = item
            .get("userInputs")
            .and_then(Value::as_array)
            .and_then(|ui| ui.last())
            .and_then(|u| u.get("kWhRequested"))
            .and_then(Value::as_f64);
        raws.push(Raw {
            row,
            station,
            arr: time("connectionTime")?.ok_or_else(|| missing("connectionTime"))?,
            dc: time("doneChargingTime")?,
            de: time("disconnectTime")?.ok_or_else(|| missing("disconnectTime"))?,
            delivered: item
                .get("kWhDelivered")
                .and_then(Value::as_f64)
                .ok_or_else(|| missing("kWhDelivered"))?,
            requested,
        });
    }

    let origin = origin_unix.unwrap_or_else(|| {
        let min = raws.iter().map(|r| r.arr).min().unwrap_or(0);
        min.div_euclid(3600) * 3600
    });
    let hours = |secs: i64| (secs - origin) as f64 / 3600.0;

    let mut stations: Vec<String> = Vec::new();
    let mut sessions = Vec::new();
    let mut skipped = Vec::new();
    for r in raws {
        let t_arr = hours(r.arr);
        let t_de = hours(r.de);
        if !(t_de > t_arr) {
            skipped.push((r.row, "disconnect not after connection".to_string()));
            continue;
        }
        let t_dc = r.dc.map(hours).unwrap_or(t_de).clamp(t_arr, t_de);
        if !(r.delivered > 0.0) || !(t_dc > t_arr) {
            skipped.push((r.row, "no energy delivered".to_string()));
            continue;
        }
        let e_user = r.requested.filter(|&q| q > 0.0).unwrap_or(r.delivered);
        let charger_id = match stations.iter().position(|s| *s == r.station) {
            Some(i) => i + 1,
            None => {
                stations.push(r.station.clone());
                stations.len()
            }
        } as u32;
        let s = linear_session(charger_id, t_arr, t_dc, t_de, 0.0, r.delivered, e_user);
        match validate_session(&s).first() {
            None => sessions.push(s),
            Some(v) => skipped.push((r.row, v.to_string())),
        }
    }
    Ok(AcnImport {
        sessions,
        stations,
        origin_unix: origin,
        skipped,
    })
}

fn parse_timestamp(s: &str) -> Option<i64> {
    chrono::DateTime::parse_from_rfc2822(s)
        .or_else(|_| chrono::DateTime::parse_from_rfc3339(s))
        .ok()
        .map(|d| d.timestamp())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn worked_session() -> ChargingSession {
        ChargingSession {
            charger_id: 1,
            t_arr: 2.5,
            t_dc: 5.2,
            t_de: 6.8,
            e_arr: 10.0,
            e_dc: 26.5,
            e_de: 26.5,
            e_user: 30.0,
            hourly_energy: [(3, 14.0), (4, 20.0), (5, 26.0), (6, 26.5)].into_iter().collect(),
        }
    }

    const WORKED_JSON: &str = r#"[{"charger_id": 1, "t_arr": 2.5, "t_dc": 5.2, "t_de": 6.8,
        "e_arr": 10.0, "e_dc": 26.5, "e_de": 26.5, "e_user": 30.0,
        "hourly_energy": {"3": 14.0, "4": 20.0, "5": 26.0, "6": 26.5}}]"#;

    #[test]
    fn empty_array_parses_to_nothing() {
        assert!(parse_sessions("[]").unwrap().is_empty());
        assert!(parse_sessions("  \n[ ]").unwrap().is_empty());
    }

    #[test]
    fn worked_session_round_trips() {
        let parsed = parse_sessions(WORKED_JSON).unwrap();
        assert_eq!(parsed, vec![worked_session()]);
        let csv = sessions_to_csv(&parsed).unwrap();
        assert_eq!(parse_sessions(&csv).unwrap(), parsed);
    }

    #[test]
    fn t_dc_before_arrival_is_rejected() {
        let text = WORKED_JSON.replace("\"t_dc\": 5.2", "\"t_dc\": 2.0");
        let err = parse_sessions(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("t_dc")), "{err}");
    }

    #[test]
    fn missing_field_names_field_and_row() {
        let text = r#"[{"charger_id": 1, "t_arr": 2.5, "t_dc": 5.2, "t_de": 6.8,
            "e_arr": 10.0, "e_dc": 26.5, "e_de": 26.5, "e_user": 30.0,
            "hourly_energy": {"3": 14.0, "4": 20.0, "5": 26.0, "6": 26.5}},
            {"charger_id": 2, "t_arr": 1.0}]"#;
        match parse_sessions(text).unwrap_err() {
            Error::Parse { row, field, .. } => {
                assert_eq!(row, 1);
                assert_eq!(field, "t_dc");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let mut csv = sessions_to_csv(&[worked_session()]).unwrap();
        csv = csv.replacen("14", "abc", 1);
        match parse_sessions(&csv).unwrap_err() {
            Error::Parse { row, field, .. } => {
                assert_eq!(row, 2);
                assert_eq!(field, "energy");
            }
            e => panic!("unexpected {e}"),
        }
        let bad_header = "a,b\n1,2\n";
        assert!(matches!(parse_sessions(bad_header), Err(Error::Parse { .. })));
    }

    #[test]
    fn valid_session_has_no_violations() {
        assert!(validate_session(&worked_session()).is_empty());
    }

    #[test]
    fn demand_equal_to_arrival_energy_is_flagged() {
        let mut s = worked_session();
        s.e_user = s.e_arr;
        let v = validate_session(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "e_user");
    }

    #[test]
    fn decreasing_reading_names_the_hour() {
        let mut s = worked_session();
        s.hourly_energy.insert(4, 13.0);
        let v = validate_session(&s);
        assert!(v.iter().any(|x| x.field == "hourly_energy[4]" && x.rule.contains("decreases")));
    }

    #[test]
    fn missing_and_post_done_readings_flagged() {
        let mut s = worked_session();
        s.hourly_energy.remove(&4);
        s.hourly_energy.insert(6, 26.0);
        let v = validate_session(&s);
        assert!(v.iter().any(|x| x.field == "hourly_energy[4]"));
        assert!(v.iter().any(|x| x.field == "hourly_energy[6]" && x.rule.contains("e_dc")));
        let mut s = worked_session();
        s.e_de = 27.0;
        assert_eq!(validate_session(&s)[0].field, "e_de");
    }

    #[test]
    fn zero_arrival_rate_gives_no_sessions() {
        let cfg = SynthConfig {
            arrival_rate: 0.0,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&cfg).unwrap().is_empty());
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        for s in &a {
            assert!(validate_session(s).is_empty(), "{:?}", validate_session(s));
        }
        let other = generate_synthetic(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn synthetic_count_matches_poisson_mean() {
        // 0.1 /h * 720 h * 5 chargers = 360 expected arrivals, sd = sqrt(360).
        let cfg = SynthConfig {
            horizon_hours: 720,
            chargers: 5,
            arrival_rate: 0.1,
            ..SynthConfig::default()
        };
        for seed in 0..5 {
            let n = generate_synthetic(&SynthConfig { seed, ..cfg.clone() }).unwrap().len() as f64;
            assert!((n - 360.0).abs() <= 3.0 * 360f64.sqrt(), "seed {seed}: {n}");
        }
    }

    #[test]
    fn synthetic_chargers_never_overlap() {
        let s = generate_synthetic(&SynthConfig {
            arrival_rate: 0.5,
            ..SynthConfig::default()
        })
        .unwrap();
        for c in 1..=5 {
            let mine: Vec<_> = s.iter().filter(|x| x.charger_id == c).collect();
            for w in mine.windows(2) {
                assert!(w[0].t_de <= w[1].t_arr);
            }
        }
    }

    #[test]
    fn synth_config_rejects_short_horizon() {
        let cfg = SynthConfig {
            horizon_hours: 24,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn acn_records_are_mapped() {
        let text = r#"{"_items": [
            {"connectionTime": "Wed, 25 Apr 2018 11:08:04 GMT",
             "disconnectTime": "Wed, 25 Apr 2018 15:30:00 GMT",
             "doneChargingTime": "Wed, 25 Apr 2018 13:45:00 GMT",
             "kWhDelivered": 9.5, "stationID": "2-39-78-362",
             "userInputs": [{"kWhRequested": 12.0}]},
            {"connectionTime": "Wed, 25 Apr 2018 12:00:00 GMT",
             "disconnectTime": "Wed, 25 Apr 2018 14:00:00 GMT",
             "doneChargingTime": null,
             "kWhDelivered": 4.0, "stationID": "2-39-78-999", "userInputs": null},
            {"connectionTime": "Wed, 25 Apr 2018 12:00:00 GMT",
             "disconnectTime": "Wed, 25 Apr 2018 13:00:00 GMT",
             "kWhDelivered": 0.0, "stationID": "2-39-78-362"}
        ]}"#;
        let imp = from_acn_json(text, None).unwrap();
        assert_eq!(imp.sessions.len(), 2);
        assert_eq!(imp.skipped.len(), 1);
        assert_eq!(imp.stations, vec!["2-39-78-362", "2-39-78-999"]);
        let a = &imp.sessions[0];
        assert_eq!(a.charger_id, 1);
        assert!((a.t_arr - (8.0 * 60.0 + 4.0) / 3600.0).abs() < 1e-12);
        assert!((a.t_dc - 2.75).abs() < 1e-9);
        assert_eq!(a.e_user, 12.0);
        assert_eq!(a.e_dc, 9.5);
        let b = &imp.sessions[1];
        assert_eq!(b.charger_id, 2);
        assert_eq!(b.t_dc, b.t_de);
        assert_eq!(b.e_user, 4.0);
    }

    proptest::proptest! {
        #[test]
        fn json_round_trip(seed in 0u64..1000) {
            let cfg = SynthConfig { horizon_hours: 96, chargers: 3, arrival_rate: 0.2, seed, ..SynthConfig::default() };
            let s = generate_synthetic(&cfg).unwrap();
            let back = parse_sessions(&sessions_to_json(&s).unwrap()).unwrap();
            proptest::prop_assert_eq!(back, s);
        }
    }
}

#[cfg(test)]
pub(crate) use tests::worked_session;
