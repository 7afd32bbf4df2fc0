//! Synthetic household load with correlated voltage and current.
//!
//! Each day is a smooth two-peak profile on top of an always-on base load,
//! scaled by a per-day factor and perturbed by multiplicative noise. Higher
//! variance levels add appliance spikes at Poisson-distributed times and
//! jitter the peak hours, which removes the repeatable daily pattern.

use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::SeriesFrame;
use crate::error::{Error, Result};
use crate::seed;

pub const SYNTH_ATTRIBUTES: [&str; 3] = ["energy", "voltage", "current"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceLevel {
    Low,
    Medium,
    High,
}

impl FromStr for VarianceLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Self::Low),
            "medium" => Ok(Self::Medium),
            "high" => Ok(Self::High),
            other => Err(Error::Config(format!("unknown variance level `{other}`"))),
        }
    }
}

struct LevelParams {
    day_scale_sd: f64,
    noise_sd: f64,
    spikes_per_day: f64,
    peak_jitter_hours: f64,
}

impl VarianceLevel {
    fn params(self) -> LevelParams {
        match self {
            Self::Low => LevelParams {
                day_scale_sd: 0.03,
                noise_sd: 0.03,
                spikes_per_day: 0.0,
                peak_jitter_hours: 0.0,
            },
            Self::Medium => LevelParams {
                day_scale_sd: 0.08,
                noise_sd: 0.08,
                spikes_per_day: 1.0,
                peak_jitter_hours: 0.5,
            },
            Self::High => LevelParams {
                day_scale_sd: 0.15,
                noise_sd: 0.15,
                spikes_per_day: 4.0,
                peak_jitter_hours: 1.5,
            },
        }
    }
}

/// Always-on load in kW; spikes are multiples of it.
const BASE_KW: f64 = 0.35;
const NOMINAL_VOLTS: f64 = 230.0;

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    let z = (hour - centre) / width;
    (-0.5 * z * z).exp()
}

fn profile_kw(hour: f64, morning: f64, evening: f64) -> f64 {
    BASE_KW + 0.6 * bump(hour, morning, 1.5) + 0.15 * bump(hour, 13.0, 2.0) + 1.1 * bump(hour, evening, 2.2)
}

/// Generates `days` of data at `interval_minutes` starting 2014-01-01 00:00.
///
/// Attributes are `energy` (kWh per interval), `voltage` (V) and
/// `current` (A). Output is a pure function of the arguments.
pub fn synth_grid_series(
    days: usize,
    interval_minutes: u32,
    level: VarianceLevel,
    seed: u64,
) -> Result<SeriesFrame> {
    if days < 2 {
        return Err(Error::BadRange(format!("need at least 2 days, got {days}")));
    }
    if interval_minutes == 0 || 1440 % interval_minutes != 0 {
        return Err(Error::BadRange(format!(
            "interval {interval_minutes} min does not divide a day"
        )));
    }
    let p = level.params();
    let mut rng = seed::rng(seed);
    let per_day = (1440 / interval_minutes) as usize;
    let n = days * per_day;
    let dt_hours = f64::from(interval_minutes) / 60.0;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    // spike power added per sample, Poisson arrivals over the whole span
    let mut spike_kw = vec![0.0; n];
    if p.spikes_per_day > 0.0 {
        let gaps = Exp::new(p.spikes_per_day / 24.0).expect("positive rate");
        let mut t = gaps.sample(&mut rng);
        let span_hours = n as f64 * dt_hours;
        while t < span_hours {
            let duration = rng.gen_range(0.25..1.5);
            let amplitude = BASE_KW * rng.gen_range(3.0..10.0);
            let first = (t / dt_hours) as usize;
            let last = (((t + duration) / dt_hours).ceil() as usize).min(n);
            for slot in spike_kw.iter_mut().take(last).skip(first) {
                *slot += amplitude;
            }
            t += gaps.sample(&mut rng);
        }
    }

    let start = NaiveDate::from_ymd_opt(2014, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date");
    let mut timestamps = Vec::with_capacity(n);
    let mut values = Array2::zeros((n, 3));
    for day in 0..days {
        let scale = 1.0 + p.day_scale_sd * std_normal.sample(&mut rng);
        let morning = 7.5 + p.peak_jitter_hours * std_normal.sample(&mut rng);
        let evening = 19.5 + p.peak_jitter_hours * std_normal.sample(&mut rng);
        for k in 0..per_day {
            let i = day * per_day + k;
            let hour = k as f64 * dt_hours;
            let noise = 1.0 + p.noise_sd * std_normal.sample(&mut rng);
            let kw = (profile_kw(hour, morning, evening) * scale * noise).max(0.0) + spike_kw[i];
            let volts = NOMINAL_VOLTS + 0.8 * std_normal.sample(&mut rng) - 1.5 * kw;
            let amps = kw * 1000.0 / volts * (1.0 + 0.01 * std_normal.sample(&mut rng));
            values[[i, 0]] = kw * dt_hours;
            values[[i, 1]] = volts;
            values[[i, 2]] = amps.max(0.0);
            timestamps.push(start + Duration::minutes(i as i64 * i64::from(interval_minutes)));
        }
    }
    SeriesFrame::new(
        timestamps,
        values,
        SYNTH_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
        interval_minutes,
    )
}
