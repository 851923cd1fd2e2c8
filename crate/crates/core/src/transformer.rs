//! Session-to-time-series transformer.
//!
//! Each session is split into hourly features (delivered energy, utilization
//! time, demand satisfaction), summed across chargers per hour, windowed into
//! supervised samples and z-score normalized.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::sessions::ChargingSession;
use crate::{Error, Result};

pub const NUM_FEATURES: usize = 3;
pub const DEFAULT_WINDOW: usize = 12;

/// How the done-charging and departure hours are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// The hour containing `t_dc` receives `e_dc - e_{t-1}` and the departure
    /// hour receives its occupied fraction, so energy is conserved.
    #[default]
    Conserving,
    /// Literal piecewise definitions: the `t_dc` hour gets zero energy and the
    /// departure hour (with `t > t_de`) is left out.
    StrictPaper,
}

/// Per-session features of one hour.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HourFeatures {
    /// kWh delivered during the hour.
    pub energy: f64,
    /// Fraction of the hour the charger was occupied.
    pub utilization: f64,
    /// Delivered energy as a percentage of the requested energy.
    pub demand: f64,
}

/// Station-level features for hour `t`: `x_t = [E_t, T_t, D_t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub t: i64,
    pub energy: f64,
    pub utilization: f64,
    pub demand: f64,
}

impl FeatureFrame {
    pub fn zero(t: i64) -> Self {
        FeatureFrame {
            t,
            energy: 0.0,
            utilization: 0.0,
            demand: 0.0,
        }
    }

    pub fn values(&self) -> [f64; NUM_FEATURES] {
        [self.energy, self.utilization, self.demand]
    }

    pub fn from_values(t: i64, v: [f64; NUM_FEATURES]) -> Self {
        FeatureFrame {
            t,
            energy: v[0],
            utilization: v[1],
            demand: v[2],
        }
    }
}

/// Splits one session into hourly features keyed by hour label.
pub fn session_features(s: &ChargingSession, mode: FeatureMode) -> Result<BTreeMap<i64, HourFeatures>> {
    let requested = s.e_user - s.e_arr;
    if !(requested > 0.0) {
        return Err(Error::Domain(format!(
            "e_user ({}) must exceed e_arr ({}) for demand satisfaction",
            s.e_user, s.e_arr
        )));
    }
    let reading = |t: i64| -> Result<f64> {
        if t as f64 >= s.t_dc {
            Ok(s.e_dc)
        } else {
            s.hourly_energy
                .get(&t)
                .copied()
                .ok_or_else(|| Error::Domain(format!("missing hourly_energy reading for hour {t}")))
        }
    };

    let mut out = BTreeMap::new();
    for t in s.occupied_hours() {
        let tf = t as f64;
        let start = (tf - 1.0).max(s.t_arr);
        let end = tf.min(s.t_de);
        if end <= start {
            continue;
        }
        if mode == FeatureMode::StrictPaper && tf > s.t_de {
            continue;
        }
        let e_start = if tf - 1.0 <= s.t_arr { s.e_arr } else { reading(t - 1)? };
        let mut energy = reading(t)? - e_start;
        if mode == FeatureMode::StrictPaper && tf >= s.t_dc {
            energy = 0.0;
        }
        out.insert(
            t,
            HourFeatures {
                energy,
                utilization: end - start,
                demand: energy / requested * 100.0,
            },
        );
    }
    Ok(out)
}

/// Sums per-session features for every hour in `hours`; idle hours are zero frames.
pub fn aggregate_frames(
    sessions: &[ChargingSession],
    hours: RangeInclusive<i64>,
    mode: FeatureMode,
) -> Result<Vec<FeatureFrame>> {
    let first = *hours.start();
    let mut frames: Vec<FeatureFrame> = hours.map(FeatureFrame::zero).collect();
    for s in sessions {
        for (t, f) in session_features(s, mode)? {
            let Some(frame) = usize::try_from(t - first).ok().and_then(|i| frames.get_mut(i)) else {
                continue;
            };
            frame.energy += f.energy;
            frame.utilization += f.utilization;
            frame.demand += f.demand;
        }
    }
    Ok(frames)
}

/// Hour range covering every occupied hour of `sessions`, or `None` if empty.
pub fn session_hour_span(sessions: &[ChargingSession]) -> Option<RangeInclusive<i64>> {
    let first = sessions.iter().map(|s| *s.occupied_hours().start()).min()?;
    let last = sessions.iter().map(|s| *s.occupied_hours().end()).max()?;
    Some(first..=last)
}

/// An input window of `N_h` consecutive frames and the next-hour energy target.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub x: Vec<[f64; NUM_FEATURES]>,
    pub target: f64,
    pub t_target: i64,
}

pub fn check_contiguous(frames: &[FeatureFrame]) -> Result<()> {
    for w in frames.windows(2) {
        if w[1].t != w[0].t + 1 {
            return Err(Error::Domain(format!(
                "frames are not contiguous: hour {} follows hour {}",
                w[1].t, w[0].t
            )));
        }
    }
    Ok(())
}

/// One sample per target hour: rows `i-N_h ..= i-1`, target `E_i`.
pub fn make_windows(frames: &[FeatureFrame], n_h: usize) -> Result<Vec<WindowedSample>> {
    if n_h == 0 {
        return Err(Error::Domain("window length must be positive".into()));
    }
    if frames.len() <= n_h {
        return Err(Error::Domain(format!(
            "need more than {n_h} frames to build a window, got {}",
            frames.len()
        )));
    }
    check_contiguous(frames)?;
    Ok((n_h..frames.len())
        .map(|i| WindowedSample {
            x: frames[i - n_h..i].iter().map(FeatureFrame::values).collect(),
            target: frames[i].energy,
            t_target: frames[i].t,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Per-feature z-score statistics frozen from a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; NUM_FEATURES],
    pub std: [f64; NUM_FEATURES],
}

impl Normalizer {
    /// Fits population mean and standard deviation; rejects constant features.
    pub fn fit(frames: &[FeatureFrame]) -> Result<Normalizer> {
        if frames.len() < 2 {
            return Err(Error::Domain("normalizer needs at least two frames".into()));
        }
        let n = frames.len() as f64;
        let mut mean = [0.0; NUM_FEATURES];
        let mut std = [0.0; NUM_FEATURES];
        for f in frames {
            for (m, v) in mean.iter_mut().zip(f.values()) {
                *m += v / n;
            }
        }
        for f in frames {
            for (k, v) in f.values().iter().enumerate() {
                std[k] += (v - mean[k]).powi(2) / n;
            }
        }
        for (k, s) in std.iter_mut().enumerate() {
            *s = s.sqrt();
            if !(*s > 1e-12) || !s.is_finite() {
                let names = ["E", "T", "D"];
                return Err(Error::Domain(format!(
                    "feature {} is constant on the training split",
                    names[k]
                )));
            }
        }
        Ok(Normalizer { mean, std })
    }

    pub fn apply(&self, v: [f64; NUM_FEATURES], dir: Direction) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for k in 0..NUM_FEATURES {
            out[k] = match dir {
                Direction::Forward => (v[k] - self.mean[k]) / self.std[k],
                Direction::Inverse => v[k] * self.std[k] + self.mean[k],
            };
        }
        out
    }

    pub fn frames(&self, frames: &[FeatureFrame], dir: Direction) -> Vec<FeatureFrame> {
        frames
            .iter()
            .map(|f| FeatureFrame::from_values(f.t, self.apply(f.values(), dir)))
            .collect()
    }

    /// The target channel shares the energy feature's statistics.
    pub fn energy(&self, v: f64, dir: Direction) -> f64 {
        match dir {
            Direction::Forward => (v - self.mean[0]) / self.std[0],
            Direction::Inverse => v * self.std[0] + self.mean[0],
        }
    }

    /// Maps a scale (not a location) of the energy channel.
    pub fn energy_scale(&self, v: f64, dir: Direction) -> f64 {
        match dir {
            Direction::Forward => v / self.std[0],
            Direction::Inverse => v * self.std[0],
        }
    }

    pub fn samples(&self, samples: &[WindowedSample], dir: Direction) -> Vec<WindowedSample> {
        samples
            .iter()
            .map(|s| WindowedSample {
                x: s.x.iter().map(|r| self.apply(*r, dir)).collect(),
                target: self.energy(s.target, dir),
                t_target: s.t_target,
            })
            .collect()
    }
}

pub const FRAMES_HEADER: [&str; 4] = ["t", "E", "T", "D"];

pub fn frames_to_csv(frames: &[FeatureFrame]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FRAMES_HEADER)?;
    for f in frames {
        w.write_record([
            f.t.to_string(),
            f.energy.to_string(),
            f.utilization.to_string(),
            f.demand.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
}

pub fn parse_frames_csv(text: &str) -> Result<Vec<FeatureFrame>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != FRAMES_HEADER {
        return Err(Error::Parse {
            row: 1,
            field: "<header>".into(),
            message: format!("expected `{}`", FRAMES_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: line,
                    field: FRAMES_HEADER[i].into(),
                    message: "not a finite number".into(),
                })
        };
        let t: i64 = rec.get(0).unwrap_or("").parse().map_err(|_| Error::Parse {
            row: line,
            field: "t".into(),
            message: "not an integer hour".into(),
        })?;
        out.push(FeatureFrame {
            t,
            energy: num(1)?,
            utilization: num(2)?,
            demand: num(3)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sessions::worked_session;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn worked_session_features() {
        let f = session_features(&worked_session(), FeatureMode::Conserving).unwrap();
        let hours: Vec<i64> = f.keys().copied().collect();
        assert_eq!(hours, vec![3, 4, 5, 6, 7]);
        let e = [4.0, 6.0, 6.0, 0.5, 0.0];
        let u = [0.5, 1.0, 1.0, 1.0, 0.8];
        let d = [20.0, 30.0, 30.0, 2.5, 0.0];
        for (i, t) in (3..=7).enumerate() {
            assert!(close(f[&t].energy, e[i]), "E at {t}: {}", f[&t].energy);
            assert!(close(f[&t].utilization, u[i]), "T at {t}: {}", f[&t].utilization);
            assert!(close(f[&t].demand, d[i]), "D at {t}: {}", f[&t].demand);
        }
        let total: f64 = f.values().map(|h| h.energy).sum();
        assert!(close(total, 16.5));
    }

    #[test]
    fn strict_mode_drops_done_charging_residual() {
        let f = session_features(&worked_session(), FeatureMode::StrictPaper).unwrap();
        assert_eq!(f.keys().copied().collect::<Vec<_>>(), vec![3, 4, 5, 6]);
        assert_eq!(f[&6].energy, 0.0);
        let total: f64 = f.values().map(|h| h.energy).sum();
        assert!(close(total, 16.0));
    }

    #[test]
    fn unguarded_demand_denominator_is_domain_error() {
        let mut s = worked_session();
        s.e_user = s.e_arr;
        assert!(matches!(
            session_features(&s, FeatureMode::Conserving),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn arrival_and_departure_in_one_hour() {
        let s = crate::sessions::linear_session(1, 4.2, 4.5, 4.9, 0.0, 2.0, 5.0);
        let f = session_features(&s, FeatureMode::Conserving).unwrap();
        assert_eq!(f.len(), 1);
        assert!(close(f[&5].utilization, 0.7));
        assert!(close(f[&5].energy, 2.0));
    }

    #[test]
    fn integer_arrival_has_no_empty_hour() {
        let s = crate::sessions::linear_session(1, 3.0, 5.0, 6.0, 0.0, 4.0, 8.0);
        let f = session_features(&s, FeatureMode::Conserving).unwrap();
        assert_eq!(f.keys().copied().collect::<Vec<_>>(), vec![4, 5, 6]);
        assert!(close(f[&4].energy, 2.0) && close(f[&5].energy, 2.0) && close(f[&6].energy, 0.0));
    }

    #[test]
    fn empty_sessions_aggregate_to_zero() {
        let frames = aggregate_frames(&[], 1..=10, FeatureMode::Conserving).unwrap();
        assert_eq!(frames.len(), 10);
        assert!(frames.iter().all(|f| f.values() == [0.0; 3]));
        assert_eq!(frames[0].t, 1);
    }

    #[test]
    fn aggregation_is_linear_and_additive() {
        let a = worked_session();
        let mut b = worked_session();
        b.charger_id = 2;
        let single = aggregate_frames(&[a.clone()], 1..=10, FeatureMode::Conserving).unwrap();
        let double = aggregate_frames(&[a.clone(), b], 1..=10, FeatureMode::Conserving).unwrap();
        for (s, d) in single.iter().zip(&double) {
            for (x, y) in s.values().iter().zip(d.values()) {
                assert!(close(2.0 * x, y));
            }
        }

        // A copy shifted by 24 hours has disjoint support.
        let mut later = worked_session();
        later.t_arr += 24.0;
        later.t_dc += 24.0;
        later.t_de += 24.0;
        later.hourly_energy = a.hourly_energy.iter().map(|(t, e)| (t + 24, *e)).collect();
        let both = aggregate_frames(&[a.clone(), later.clone()], 1..=40, FeatureMode::Conserving).unwrap();
        let only_a = aggregate_frames(&[a], 1..=40, FeatureMode::Conserving).unwrap();
        let only_b = aggregate_frames(&[later], 1..=40, FeatureMode::Conserving).unwrap();
        for i in 0..40 {
            for k in 0..3 {
                assert!(close(both[i].values()[k], only_a[i].values()[k] + only_b[i].values()[k]));
            }
        }
        assert!(close(both[5].energy, 0.5) && close(both[29].energy, 0.5));
    }

    fn ramp(n: usize) -> Vec<FeatureFrame> {
        (1..=n as i64)
            .map(|t| FeatureFrame {
                t,
                energy: t as f64,
                utilization: (t % 5) as f64,
                demand: (t * t % 7) as f64,
            })
            .collect()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&ramp(13), 12).unwrap().len(), 1);
        let w = make_windows(&ramp(100), 12).unwrap();
        assert_eq!(w.len(), 88);
        assert_eq!(w[0].t_target, 13);
        assert_eq!(w[0].target, 13.0);
        assert_eq!(w[0].x.len(), 12);
        assert_eq!(w[0].x[11][0], 12.0);
        assert!(matches!(make_windows(&ramp(12), 12), Err(Error::Domain(_))));
    }

    #[test]
    fn constant_frames_give_identical_windows() {
        let frames: Vec<_> = (1..=30)
            .map(|t| FeatureFrame {
                t,
                energy: 2.0,
                utilization: 1.0,
                demand: 5.0,
            })
            .collect();
        let w = make_windows(&frames, 12).unwrap();
        assert!(w.windows(2).all(|p| p[0].x == p[1].x && p[0].target == p[1].target));
    }

    #[test]
    fn gaps_are_rejected() {
        let mut f = ramp(20);
        f.remove(5);
        assert!(matches!(make_windows(&f, 12), Err(Error::Domain(_))));
    }

    #[test]
    fn normalizer_properties() {
        let frames = ramp(50);
        let n = Normalizer::fit(&frames).unwrap();
        let z = n.frames(&frames, Direction::Forward);
        for k in 0..3 {
            let col: Vec<f64> = z.iter().map(|f| f.values()[k]).collect();
            assert!(crate::numerics::mean(&col).abs() < 1e-9);
            assert!((crate::numerics::variance(&col).sqrt() - 1.0).abs() < 1e-9);
        }
        let back = n.frames(&z, Direction::Inverse);
        for (a, b) in back.iter().zip(&frames) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert_eq!(n.apply([0.0; 3], Direction::Inverse), n.mean);
        let w = make_windows(&frames, 12).unwrap();
        let wn = n.samples(&w, Direction::Forward);
        assert!(close(wn[0].target, z[12].energy));
    }

    #[test]
    fn constant_feature_cannot_be_fitted() {
        let frames: Vec<_> = (1..=10).map(FeatureFrame::zero).collect();
        assert!(matches!(Normalizer::fit(&frames), Err(Error::Domain(_))));
    }

    #[test]
    fn frames_csv_round_trip() {
        let frames = ramp(5);
        let text = frames_to_csv(&frames).unwrap();
        assert!(text.starts_with("t,E,T,D\n"));
        assert_eq!(parse_frames_csv(&text).unwrap(), frames);
    }

    proptest::proptest! {
        #[test]
        fn conservation_and_util_bounds(
            t_arr in 0.0f64..50.0,
            charge in 0.01f64..10.0,
            linger in 0.0f64..10.0,
            e_arr in 0.0f64..30.0,
            delivered in 0.0f64..40.0,
        ) {
            let t_dc = t_arr + charge;
            let s = crate::sessions::linear_session(1, t_arr, t_dc, t_dc + linger, e_arr, e_arr + delivered, e_arr + delivered + 1.0);
            let f = session_features(&s, FeatureMode::Conserving).unwrap();
            let total: f64 = f.values().map(|h| h.energy).sum();
            proptest::prop_assert!((total - delivered).abs() <= 1e-9);
            for h in f.values() {
                proptest::prop_assert!(h.utilization > 0.0 && h.utilization <= 1.0 + 1e-12);
            }
        }
    }
}
