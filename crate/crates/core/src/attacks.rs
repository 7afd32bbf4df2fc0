//! The seven energy-theft manipulations, applied to raw meter readings.
//!
//! Each attack rewrites the target attributes of a window (energy, and
//! current when present) and passes every other attribute through
//! untouched. Random coefficients and bypass positions are drawn once per
//! window from a seeded stream.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, ArrayViewMut1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{NormStats, SeriesFrame, WindowLabel, WindowPair};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackKind {
    /// Fixed reduction: subtract a fraction of the mean, clamped at zero.
    FR,
    /// Partial reduction: scale by a fixed coefficient.
    PR,
    /// Random partial reduction: scale by a coefficient drawn per window.
    RPR,
    /// Random average consumption: report a random fraction of the mean.
    RAC,
    /// Average consumption: report the mean.
    AC,
    /// Reverse every 24-hour block.
    REV,
    /// Selective bypass: report zero over a 6-hour interval.
    SBP,
}

impl AttackKind {
    pub const ALL: [AttackKind; 7] = [
        AttackKind::FR,
        AttackKind::PR,
        AttackKind::RPR,
        AttackKind::RAC,
        AttackKind::AC,
        AttackKind::REV,
        AttackKind::SBP,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FR => "FR",
            Self::PR => "PR",
            Self::RPR => "RPR",
            Self::RAC => "RAC",
            Self::AC => "AC",
            Self::REV => "REV",
            Self::SBP => "SBP",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// Adversary parameters. Serializes to JSON so experiment configs pin the
/// attack exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma31: f64,
    pub gamma32: f64,
    pub bypass_hours: u32,
    pub seed: u64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self::new(AttackKind::FR, 0)
    }
}

impl AttackSpec {
    pub fn new(kind: AttackKind, seed: u64) -> Self {
        Self {
            kind,
            gamma1: 0.2,
            gamma2: 0.8,
            gamma31: 0.7,
            gamma32: 0.9,
            bypass_hours: 6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma1 > 0.0) {
            return Err(Error::BadRange(format!("gamma1 = {} must be > 0", self.gamma1)));
        }
        if !(self.gamma2 > 0.0 && self.gamma2 <= 1.0) {
            return Err(Error::BadRange(format!("gamma2 = {} must be in (0, 1]", self.gamma2)));
        }
        if !(self.gamma31 > 0.0 && self.gamma31 <= self.gamma32 && self.gamma32 <= 1.0) {
            return Err(Error::BadRange(format!(
                "need 0 < gamma31 ({}) <= gamma32 ({}) <= 1",
                self.gamma31, self.gamma32
            )));
        }
        Ok(())
    }
}

/// What the adversary knows about the meter it manipulates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackContext {
    /// Per-attribute mean over the raw training split.
    pub user_mean: Vec<f64>,
    pub samples_per_hour: u32,
    pub target_attributes: Vec<String>,
    targets: Vec<usize>,
}

impl AttackContext {
    /// Builds a context from the raw training split.
    ///
    /// With `targets = None` the defaults apply: `energy` and `current` when
    /// present, otherwise the single attribute of a univariate series.
    pub fn from_train(train_raw: &SeriesFrame, targets: Option<&[String]>) -> Result<Self> {
        let names = train_raw.attribute_names();
        let chosen: Vec<String> = match targets {
            Some(t) => t.to_vec(),
            None => {
                let defaults: Vec<String> = ["energy", "current"]
                    .iter()
                    .filter(|n| names.iter().any(|a| a == *n))
                    .map(|s| s.to_string())
                    .collect();
                if !defaults.is_empty() {
                    defaults
                } else if names.len() == 1 {
                    names.to_vec()
                } else {
                    return Err(Error::Config(
                        "no `energy` attribute; name the attack targets explicitly".into(),
                    ));
                }
            }
        };
        let n = train_raw.len() as f64;
        let user_mean = train_raw
            .values()
            .columns()
            .into_iter()
            .map(|c| c.sum() / n)
            .collect();
        Self::new(user_mean, train_raw.samples_per_hour(), names, &chosen)
    }

    pub fn new(
        user_mean: Vec<f64>,
        samples_per_hour: u32,
        attribute_names: &[String],
        target_attributes: &[String],
    ) -> Result<Self> {
        if user_mean.len() != attribute_names.len() {
            return Err(Error::shape((1, attribute_names.len()), (1, user_mean.len())));
        }
        if user_mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::BadRange("user mean must be finite".into()));
        }
        if samples_per_hour == 0 {
            return Err(Error::BadRange("samples_per_hour must be positive".into()));
        }
        if target_attributes.is_empty() {
            return Err(Error::Config("attack needs at least one target attribute".into()));
        }
        let targets = target_attributes
            .iter()
            .map(|t| {
                attribute_names
                    .iter()
                    .position(|a| a == t)
                    .ok_or_else(|| Error::Config(format!("attack target `{t}` not in series")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            user_mean,
            samples_per_hour,
            target_attributes: target_attributes.to_vec(),
            targets,
        })
    }

    pub fn target_indices(&self) -> &[usize] {
        &self.targets
    }

    pub fn bypass_len(&self, spec: &AttackSpec) -> usize {
        (spec.bypass_hours * self.samples_per_hour) as usize
    }

    pub fn reverse_block(&self) -> usize {
        (24 * self.samples_per_hour) as usize
    }
}

/// The per-window random draws of an attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackDraws {
    /// Coefficient in `[gamma31, gamma32]` for RPR and RAC.
    pub coefficient: f64,
    /// First zeroed sample for SBP.
    pub bypass_start: usize,
}

impl AttackDraws {
    /// Draws both values so every kind consumes the stream identically.
    pub fn sample<R: Rng>(spec: &AttackSpec, ctx: &AttackContext, len: usize, rng: &mut R) -> Self {
        let coefficient = if spec.gamma31 < spec.gamma32 {
            rng.gen_range(spec.gamma31..=spec.gamma32)
        } else {
            spec.gamma31
        };
        let room = len.saturating_sub(ctx.bypass_len(spec));
        let bypass_start = rng.gen_range(0..=room);
        Self {
            coefficient,
            bypass_start,
        }
    }
}

/// Applies `spec` to a raw-unit `K x M` window with draws seeded by `spec.seed`.
pub fn apply_attack(
    sequence: ArrayView2<f64>,
    spec: &AttackSpec,
    ctx: &AttackContext,
) -> Result<Array2<f64>> {
    let mut rng = seed::rng(spec.seed);
    let draws = AttackDraws::sample(spec, ctx, sequence.nrows(), &mut rng);
    apply_attack_with(sequence, spec, ctx, draws)
}

/// Applies `spec` with explicit draws.
pub fn apply_attack_with(
    sequence: ArrayView2<f64>,
    spec: &AttackSpec,
    ctx: &AttackContext,
    draws: AttackDraws,
) -> Result<Array2<f64>> {
    spec.validate()?;
    if sequence.ncols() != ctx.user_mean.len() {
        return Err(Error::shape(
            (sequence.nrows(), ctx.user_mean.len()),
            sequence.dim(),
        ));
    }
    let len = sequence.nrows();
    let mut out = sequence.to_owned();
    if spec.kind == AttackKind::SBP {
        let needed = ctx.bypass_len(spec);
        if needed > len || draws.bypass_start + needed > len {
            return Err(Error::WindowTooShortForBypass { len, needed });
        }
    }
    for &m in ctx.target_indices() {
        let mean = ctx.user_mean[m];
        let mut col = out.column_mut(m);
        match spec.kind {
            AttackKind::FR => col.mapv_inplace(|x| (x - spec.gamma1 * mean).max(0.0)),
            AttackKind::PR => col.mapv_inplace(|x| spec.gamma2 * x),
            AttackKind::RPR => col.mapv_inplace(|x| draws.coefficient * x),
            AttackKind::RAC => col.fill(draws.coefficient * mean),
            AttackKind::AC => col.fill(mean),
            AttackKind::REV => reverse_in_blocks(col, ctx.reverse_block()),
            AttackKind::SBP => {
                let s = draws.bypass_start;
                for i in s..s + ctx.bypass_len(spec) {
                    col[i] = 0.0;
                }
            }
        }
    }
    Ok(out)
}

/// Reverses each consecutive block of `block` entries; a trailing partial
/// block is reversed in place.
pub fn reverse_in_blocks(mut values: ArrayViewMut1<f64>, block: usize) {
    let len = values.len();
    let mut start = 0;
    while start < len && block > 0 {
        let end = (start + block).min(len);
        let (mut i, mut j) = (start, end - 1);
        while i < j {
            values.swap(i, j);
            i += 1;
            j -= 1;
        }
        start = end;
    }
}

/// Pairs every normalized test window with an attacked copy.
///
/// Windows are denormalized with the training statistics, manipulated in
/// raw units, and normalized again. Window `i` draws from stream `i` of
/// `spec.seed`.
pub fn build_attacked_test_set(
    test_windows: &[WindowPair],
    spec: &AttackSpec,
    ctx: &AttackContext,
    stats: &NormStats,
) -> Result<(Vec<WindowPair>, Vec<WindowPair>)> {
    let mut normal = Vec::with_capacity(test_windows.len());
    let mut attacked = Vec::with_capacity(test_windows.len());
    for (i, w) in test_windows.iter().enumerate() {
        let raw = stats.denormalize(w.full().view())?;
        let window_spec = AttackSpec {
            seed: seed::derive(spec.seed, i as u64),
            ..spec.clone()
        };
        let hit = apply_attack(raw.view(), &window_spec, ctx)?;
        let renorm = stats.normalize(hit.view())?;
        let mut n = w.clone();
        n.label = WindowLabel::Normal;
        normal.push(n);
        attacked.push(w.with_full(&renorm, WindowLabel::Attacked(spec.kind))?);
    }
    Ok((normal, attacked))
}
