//! Joint reconstruction of the context and forecast of the horizon.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::EtdModel;
use crate::dataio::WindowPair;
use crate::diffusion::{forward_diffuse, sample, stacked_normal, DiffusionSchedule, SampleStart};
use crate::error::{Error, Result};
use crate::seed;

/// `Full` starts both segments from pure noise and runs all `N` reverse
/// steps. `Partial(n1)` diffuses the observed window to step `n1` and runs
/// `n1` reverse steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InferenceMode {
    Full,
    Partial(usize),
}

impl InferenceMode {
    /// Partial mode at `round(0.4 N)` steps.
    pub fn default_partial(sched: &DiffusionSchedule) -> Self {
        Self::Partial((0.4 * sched.steps() as f64).round() as usize)
    }
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Full => f.write_str("full"),
            Self::Partial(n1) => write!(f, "partial:{n1}"),
        }
    }
}

impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("full") {
            return Ok(Self::Full);
        }
        s.strip_prefix("partial:")
            .and_then(|n| n.trim().parse().ok())
            .map(Self::Partial)
            .ok_or_else(|| Error::Config(format!("mode must be `full` or `partial:<N1>`, got `{s}`")))
    }
}

impl TryFrom<String> for InferenceMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InferenceMode> for String {
    fn from(m: InferenceMode) -> Self {
        m.to_string()
    }
}

/// Model outputs in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// `L x M`
    pub context: Array2<f64>,
    /// `T x M`
    pub horizon: Array2<f64>,
}

/// Single-window inference.
///
/// `covariates` covers all `L + T` positions. Partial mode needs the
/// observed horizon; full mode ignores it.
pub fn reconstruct_and_forecast(
    model: &EtdModel,
    sched: &DiffusionSchedule,
    x_context: ArrayView2<f64>,
    x_horizon: Option<ArrayView2<f64>>,
    covariates: ArrayView2<f64>,
    mode: InferenceMode,
    seed: u64,
) -> Result<Reconstruction> {
    let l = x_context.nrows();
    let t = covariates
        .nrows()
        .checked_sub(l)
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::shape((l + 1, covariates.ncols()), covariates.dim()))?;
    let (con_c, handoff) = model.condition_context(x_context, covariates.slice(s![..l, ..]), l)?;
    let con_h = model.condition_horizon(&handoff, covariates.slice(s![l.., ..]), t)?;
    let mut rngs = segment_rngs(&[seed]);
    let horizon_obs = match (mode, x_horizon) {
        (InferenceMode::Partial(_), None) => return Err(Error::MissingObservedHorizon),
        (_, h) => h,
    };
    if let Some(h) = horizon_obs {
        if h.dim() != (t, x_context.ncols()) {
            return Err(Error::shape((t, x_context.ncols()), h.dim()));
        }
    }
    let context = run_segment(model, sched, con_c.view(), Some(x_context), mode, &mut rngs.0)?;
    let horizon = run_segment(model, sched, con_h.view(), horizon_obs, mode, &mut rngs.1)?;
    Ok(Reconstruction { context, horizon })
}

/// Batched inference; window `i` draws all its noise from `seeds[i]`, so
/// each result is independent of the batch it was computed in.
pub fn reconstruct_and_forecast_batch(
    model: &EtdModel,
    sched: &DiffusionSchedule,
    windows: &[&WindowPair],
    mode: InferenceMode,
    seeds: &[u64],
) -> Result<Vec<Reconstruction>> {
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    if seeds.len() != windows.len() {
        return Err(Error::shape((windows.len(), 1), (seeds.len(), 1)));
    }
    let (l, t) = (windows[0].context_len(), windows[0].horizon_len());
    let bundle = model.condition(windows)?;
    let mut rngs = segment_rngs(seeds);
    let stack = |f: &dyn Fn(&WindowPair) -> ArrayView2<f64>| -> Result<Array2<f64>> {
        let views: Vec<_> = windows.iter().map(|w| f(w)).collect();
        concatenate(Axis(0), &views).map_err(|e| Error::Config(e.to_string()))
    };
    let obs_c = stack(&|w| w.context.view())?;
    let obs_h = stack(&|w| w.horizon.view())?;
    let ctx = run_segment(model, sched, bundle.con_context.view(), Some(obs_c.view()), mode, &mut rngs.0)?;
    let hor = run_segment(model, sched, bundle.con_horizon.view(), Some(obs_h.view()), mode, &mut rngs.1)?;
    Ok((0..windows.len())
        .map(|b| Reconstruction {
            context: ctx.slice(s![b * l..(b + 1) * l, ..]).to_owned(),
            horizon: hor.slice(s![b * t..(b + 1) * t, ..]).to_owned(),
        })
        .collect())
}

fn segment_rngs(seeds: &[u64]) -> (Vec<ChaCha8Rng>, Vec<ChaCha8Rng>) {
    (
        seeds.iter().map(|&s| seed::stream_rng(s, 0)).collect(),
        seeds.iter().map(|&s| seed::stream_rng(s, 1)).collect(),
    )
}

fn run_segment(
    model: &EtdModel,
    sched: &DiffusionSchedule,
    con: ArrayView2<f64>,
    observed: Option<ArrayView2<f64>>,
    mode: InferenceMode,
    rngs: &mut [ChaCha8Rng],
) -> Result<Array2<f64>> {
    let dim = model.config().attributes;
    let predictor = model.bind(con)?;
    match mode {
        InferenceMode::Full => sample(&predictor, con, dim, sched, SampleStart::FromNoise, rngs, true),
        InferenceMode::Partial(n1) => {
            let x0 = observed.ok_or(Error::MissingObservedHorizon)?;
            if n1 > sched.steps() {
                return Err(Error::StepOutOfRange {
                    step: n1,
                    max: sched.steps(),
                });
            }
            if x0.dim() != (con.nrows(), dim) {
                return Err(Error::shape((con.nrows(), dim), x0.dim()));
            }
            let seq_len = con.nrows() / rngs.len();
            let eps = stacked_normal(seq_len, dim, rngs);
            let x_start = forward_diffuse(x0, n1, eps.view(), sched)?;
            sample(
                &predictor,
                con,
                dim,
                sched,
                SampleStart::FromPartial {
                    x_start: x_start.view(),
                    steps: n1,
                },
                rngs,
                true,
            )
        }
    }
}
