//! The full model: recurrent conditioners for context and horizon plus the
//! shared noise predictor, with the joint training loss and its gradient.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{self, LstmSlots};
use super::params::Layout;
use super::predictor::{self, PredictorConfig, PredictorSlots};
use crate::dataio::{WindowPair, COVARIATE_COUNT};
use crate::diffusion::{forward_diffuse, standard_normal, DiffusionSchedule, NoisePredictor};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of attributes `M`.
    pub attributes: usize,
    pub covariates: usize,
    pub context_len: usize,
    pub horizon_len: usize,
    /// Conditioner hidden width `H`.
    pub hidden: usize,
    pub predictor: PredictorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            attributes: 1,
            covariates: COVARIATE_COUNT,
            context_len: 24,
            horizon_len: 24,
            hidden: 128,
            predictor: PredictorConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.predictor;
        let dims = [
            ("attributes", self.attributes),
            ("covariates", self.covariates),
            ("context_len", self.context_len),
            ("horizon_len", self.horizon_len),
            ("hidden", self.hidden),
            ("residual_channels", p.residual_channels),
            ("residual_blocks", p.residual_blocks),
            ("dilation_cycle", p.dilation_cycle),
            ("step_embedding", p.step_embedding),
            ("step_hidden", p.step_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if p.step_embedding % 2 != 0 {
            return Err(Error::Config("model.predictor.step_embedding must be even".into()));
        }
        Ok(())
    }
}

/// Recurrent state after the last context position.
#[derive(Debug, Clone, PartialEq)]
pub struct Handoff {
    /// `B x H`
    pub h: Array2<f64>,
    pub c: Array2<f64>,
}

/// Conditioning rows for stacked windows: context rows are `B*L x H`,
/// horizon rows `B*T x H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBundle {
    pub con_context: Array2<f64>,
    pub con_horizon: Array2<f64>,
    pub handoff: Handoff,
}

/// Noisy inputs, labels and steps for one optimization step.
///
/// All blocks stack `B` windows row-wise.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub context: Array2<f64>,
    pub horizon: Array2<f64>,
    pub cov_context: Array2<f64>,
    pub cov_horizon: Array2<f64>,
    /// One diffusion step per window, shared by both segments.
    pub steps: Vec<usize>,
    pub eps_context: Array2<f64>,
    pub eps_horizon: Array2<f64>,
}

impl TrainBatch {
    /// Draws `n ~ U{1..N}` and i.i.d. standard-normal labels for each window.
    pub fn draw<R: Rng>(windows: &[&WindowPair], sched: &DiffusionSchedule, rng: &mut R) -> Result<Self> {
        let first = windows.first().ok_or(Error::EmptyInput("training batch"))?;
        let (l, t, m) = (first.context_len(), first.horizon_len(), first.n_attributes());
        let mut steps = Vec::with_capacity(windows.len());
        let mut eps_c = Vec::with_capacity(windows.len());
        let mut eps_h = Vec::with_capacity(windows.len());
        for w in windows {
            if (w.context_len(), w.horizon_len(), w.n_attributes()) != (l, t, m) {
                return Err(Error::shape((l + t, m), (w.context_len() + w.horizon_len(), w.n_attributes())));
            }
            steps.push(rng.gen_range(1..=sched.steps()));
            let eps = standard_normal(l + t, m, rng);
            eps_c.push(eps.slice(s![..l, ..]).to_owned());
            eps_h.push(eps.slice(s![l.., ..]).to_owned());
        }
        Self::from_parts(windows, steps, eps_c, eps_h)
    }

    /// Same as [`TrainBatch::draw`] but window `i` uses its own stream of `base`.
    pub fn draw_streams(windows: &[&WindowPair], sched: &DiffusionSchedule, base: u64) -> Result<Self> {
        let mut steps = Vec::with_capacity(windows.len());
        let mut eps_c = Vec::with_capacity(windows.len());
        let mut eps_h = Vec::with_capacity(windows.len());
        for (i, w) in windows.iter().enumerate() {
            let mut rng = seed::stream_rng(base, i as u64);
            let one = Self::draw(&[*w], sched, &mut rng)?;
            steps.push(one.steps[0]);
            eps_c.push(one.eps_context);
            eps_h.push(one.eps_horizon);
        }
        Self::from_parts(windows, steps, eps_c, eps_h)
    }

    fn from_parts(
        windows: &[&WindowPair],
        steps: Vec<usize>,
        eps_c: Vec<Array2<f64>>,
        eps_h: Vec<Array2<f64>>,
    ) -> Result<Self> {
        let l = windows[0].context_len();
        let stack = |f: &dyn Fn(&WindowPair) -> ArrayView2<f64>| -> Result<Array2<f64>> {
            let views: Vec<_> = windows.iter().map(|w| f(w)).collect();
            concatenate(Axis(0), &views).map_err(|e| Error::Config(e.to_string()))
        };
        let views = |v: &[Array2<f64>]| -> Result<Array2<f64>> {
            let views: Vec<_> = v.iter().map(|a| a.view()).collect();
            concatenate(Axis(0), &views).map_err(|e| Error::Config(e.to_string()))
        };
        Ok(Self {
            context: stack(&|w| w.context.view())?,
            horizon: stack(&|w| w.horizon.view())?,
            cov_context: stack(&|w| w.covariates.slice(s![..l, ..]))?,
            cov_horizon: stack(&|w| w.covariates.slice(s![l.., ..]))?,
            steps,
            eps_context: views(&eps_c)?,
            eps_horizon: views(&eps_h)?,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn context_len(&self) -> usize {
        self.context.nrows() / self.len().max(1)
    }

    pub fn horizon_len(&self) -> usize {
        self.horizon.nrows() / self.len().max(1)
    }
}

/// Batch-averaged loss terms; `total = context + gamma * horizon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub context: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ModelSlots {
    pub cond_r: LstmSlots,
    pub cond_f: LstmSlots,
    pub eps: PredictorSlots,
}

impl ModelSlots {
    fn build(config: &ModelConfig) -> (Layout, Self) {
        let mut layout = Layout::default();
        let cond_r = LstmSlots::new(&mut layout, "cond_r", config.attributes + config.covariates, config.hidden);
        let cond_f = LstmSlots::new(&mut layout, "cond_f", config.covariates, config.hidden);
        let eps = PredictorSlots::new(&mut layout, config.predictor, config.attributes, config.hidden);
        (layout, Self { cond_r, cond_f, eps })
    }
}

/// Conditioners and the shared noise predictor with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EtdModel {
    config: ModelConfig,
    layout: Layout,
    slots: ModelSlots,
    params: Vec<f64>,
}

struct ForwardCache {
    lstm_r: lstm::LstmCache,
    lstm_f: lstm::LstmCache,
    eps_c: predictor::PredictorCache,
    eps_h: predictor::PredictorCache,
}

impl EtdModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, slots) = ModelSlots::build(&config);
        let params = layout.init(&mut seed::rng(seed));
        Ok(Self {
            config,
            layout,
            slots,
            params,
        })
    }

    /// Rebuilds a model from stored parameters.
    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (layout, slots) = ModelSlots::build(&config);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            slots,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn check_cols(&self, what: ArrayView2<f64>, cols: usize, seq_len: usize) -> Result<usize> {
        if what.ncols() != cols || seq_len == 0 || what.nrows() % seq_len != 0 || what.nrows() == 0 {
            return Err(Error::shape((seq_len, cols), what.dim()));
        }
        Ok(what.nrows() / seq_len)
    }

    /// Runs the context conditioner from a zero state over `[x_l, cov_l]`.
    ///
    /// Inputs stack `B` sequences of `seq_len` rows. Returns the per-position
    /// conditioning rows and the state after the last position.
    pub fn condition_context(
        &self,
        x_context: ArrayView2<f64>,
        cov_context: ArrayView2<f64>,
        seq_len: usize,
    ) -> Result<(Array2<f64>, Handoff)> {
        self.condition_context_inner(x_context, cov_context, seq_len, false)
            .map(|(out, hand, _)| (out, hand))
    }

    fn condition_context_inner(
        &self,
        x_context: ArrayView2<f64>,
        cov_context: ArrayView2<f64>,
        seq_len: usize,
        keep: bool,
    ) -> Result<(Array2<f64>, Handoff, Option<lstm::LstmCache>)> {
        let batch = self.check_cols(x_context, self.config.attributes, seq_len)?;
        if cov_context.dim() != (x_context.nrows(), self.config.covariates) {
            return Err(Error::shape((x_context.nrows(), self.config.covariates), cov_context.dim()));
        }
        let input = concatenate![Axis(1), x_context, cov_context];
        let zero = Array2::zeros((batch, self.config.hidden));
        let out = lstm::forward(&self.params, &self.slots.cond_r, input.view(), seq_len, zero.view(), zero.view(), keep);
        Ok((
            out.out,
            Handoff {
                h: out.h_last,
                c: out.c_last,
            },
            out.cache,
        ))
    }

    /// Runs the horizon conditioner over covariates only, starting from the
    /// context handoff.
    pub fn condition_horizon(&self, handoff: &Handoff, cov_horizon: ArrayView2<f64>, seq_len: usize) -> Result<Array2<f64>> {
        self.condition_horizon_inner(handoff, cov_horizon, seq_len, false)
            .map(|(out, _)| out)
    }

    fn condition_horizon_inner(
        &self,
        handoff: &Handoff,
        cov_horizon: ArrayView2<f64>,
        seq_len: usize,
        keep: bool,
    ) -> Result<(Array2<f64>, Option<lstm::LstmCache>)> {
        let batch = self.check_cols(cov_horizon, self.config.covariates, seq_len)?;
        let expect = (batch, self.config.hidden);
        if handoff.h.dim() != expect || handoff.c.dim() != expect {
            return Err(Error::shape(expect, handoff.h.dim()));
        }
        let out = lstm::forward(
            &self.params,
            &self.slots.cond_f,
            cov_horizon,
            seq_len,
            handoff.h.view(),
            handoff.c.view(),
            keep,
        );
        Ok((out.out, out.cache))
    }

    /// Conditioning for a set of windows, stacked in order.
    pub fn condition(&self, windows: &[&WindowPair]) -> Result<ConditioningBundle> {
        let first = windows.first().ok_or(Error::EmptyInput("windows"))?;
        let (l, t) = (first.context_len(), first.horizon_len());
        let stack = |f: &dyn Fn(&WindowPair) -> ArrayView2<f64>| -> Result<Array2<f64>> {
            let views: Vec<_> = windows.iter().map(|w| f(w)).collect();
            concatenate(Axis(0), &views).map_err(|_| Error::shape((l + t, first.n_attributes()), (0, 0)))
        };
        let x = stack(&|w| w.context.view())?;
        let cov_c = stack(&|w| w.covariates.slice(s![..l, ..]))?;
        let cov_h = stack(&|w| w.covariates.slice(s![l.., ..]))?;
        let (con_context, handoff) = self.condition_context(x.view(), cov_c.view(), l)?;
        let con_horizon = self.condition_horizon(&handoff, cov_h.view(), t)?;
        Ok(ConditioningBundle {
            con_context,
            con_horizon,
            handoff,
        })
    }

    fn check_step(&self, n: usize, max: usize) -> Result<()> {
        if n == 0 || n > max {
            return Err(Error::StepOutOfRange { step: n, max });
        }
        Ok(())
    }

    /// Noise estimate with a separate step per stacked sequence.
    pub fn predict_noise_steps(
        &self,
        x_n: ArrayView2<f64>,
        con: ArrayView2<f64>,
        seq_len: usize,
        steps: &[usize],
    ) -> Result<Array2<f64>> {
        let batch = self.check_cols(x_n, self.config.attributes, seq_len)?;
        if con.dim() != (x_n.nrows(), self.config.hidden) {
            return Err(Error::shape((x_n.nrows(), self.config.hidden), con.dim()));
        }
        if steps.len() != batch {
            return Err(Error::shape((batch, 1), (steps.len(), 1)));
        }
        let proj = predictor::project_condition(&self.params, &self.slots.eps, con);
        let (out, _) = predictor::forward(&self.params, &self.slots.eps, x_n, con, &proj, seq_len, steps, false);
        Ok(out)
    }

    /// A predictor bound to fixed conditioning rows, reusing their projection
    /// across every step of a reverse chain.
    pub fn bind(&self, con: ArrayView2<f64>) -> Result<BoundPredictor<'_>> {
        if con.ncols() != self.config.hidden {
            return Err(Error::shape((con.nrows(), self.config.hidden), con.dim()));
        }
        Ok(BoundPredictor {
            model: self,
            con: con.to_owned(),
            proj: predictor::project_condition(&self.params, &self.slots.eps, con),
        })
    }

    /// Batch loss without gradients.
    pub fn loss(&self, batch: &TrainBatch, sched: &DiffusionSchedule, gamma: f64) -> Result<LossParts> {
        self.loss_impl(batch, sched, gamma, None)
    }

    /// Batch loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &TrainBatch, sched: &DiffusionSchedule, gamma: f64) -> Result<(LossParts, Vec<f64>)> {
        let mut grads = vec![0.0; self.params.len()];
        let parts = self.loss_impl(batch, sched, gamma, Some(&mut grads))?;
        Ok((parts, grads))
    }

    fn noisy(&self, x0: &Array2<f64>, eps: &Array2<f64>, steps: &[usize], seq_len: usize, sched: &DiffusionSchedule) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(x0.raw_dim());
        for (b, &n) in steps.iter().enumerate() {
            self.check_step(n, sched.steps())?;
            let rows = s![b * seq_len..(b + 1) * seq_len, ..];
            let xn = forward_diffuse(x0.slice(rows), n, eps.slice(rows), sched)?;
            out.slice_mut(rows).assign(&xn);
        }
        Ok(out)
    }

    fn loss_impl(
        &self,
        batch: &TrainBatch,
        sched: &DiffusionSchedule,
        gamma: f64,
        grads: Option<&mut [f64]>,
    ) -> Result<LossParts> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("training batch"));
        }
        let (l, t) = (batch.context_len(), batch.horizon_len());
        let keep = grads.is_some();
        let p = &self.params;
        let (con_c, handoff, cache_r) = self.condition_context_inner(batch.context.view(), batch.cov_context.view(), l, keep)?;
        let (con_h, cache_f) = self.condition_horizon_inner(&handoff, batch.cov_horizon.view(), t, keep)?;

        let xn_c = self.noisy(&batch.context, &batch.eps_context, &batch.steps, l, sched)?;
        let xn_h = self.noisy(&batch.horizon, &batch.eps_horizon, &batch.steps, t, sched)?;
        let slots = &self.slots.eps;
        let proj_c = predictor::project_condition(p, slots, con_c.view());
        let proj_h = predictor::project_condition(p, slots, con_h.view());
        let (hat_c, cache_c) = predictor::forward(p, slots, xn_c.view(), con_c.view(), &proj_c, l, &batch.steps, keep);
        let (hat_h, cache_h) = predictor::forward(p, slots, xn_h.view(), con_h.view(), &proj_h, t, &batch.steps, keep);

        let diff_c = &hat_c - &batch.eps_context;
        let diff_h = &hat_h - &batch.eps_horizon;
        let context = diff_c.mapv(|v| v * v).mean().unwrap_or(0.0);
        let horizon = diff_h.mapv(|v| v * v).mean().unwrap_or(0.0);
        let parts = LossParts {
            total: context + gamma * horizon,
            context,
            horizon,
        };

        if let Some(grads) = grads {
            let cache = ForwardCache {
                lstm_r: cache_r.expect("cache"),
                lstm_f: cache_f.expect("cache"),
                eps_c: cache_c.expect("cache"),
                eps_h: cache_h.expect("cache"),
            };
            let d_hat_c = diff_c * (2.0 / batch.eps_context.len() as f64);
            let d_hat_h = diff_h * (2.0 * gamma / batch.eps_horizon.len() as f64);
            let d_con_c = predictor::backward(p, slots, &cache.eps_c, d_hat_c.view(), grads);
            let d_con_h = predictor::backward(p, slots, &cache.eps_h, d_hat_h.view(), grads);
            let zero = Array2::zeros(handoff.h.raw_dim());
            let (dh, dc) = lstm::backward(p, &self.slots.cond_f, &cache.lstm_f, d_con_h.view(), zero.view(), zero.view(), grads);
            lstm::backward(p, &self.slots.cond_r, &cache.lstm_r, d_con_c.view(), dh.view(), dc.view(), grads);
        }
        Ok(parts)
    }
}

impl NoisePredictor for EtdModel {
    fn predict_noise(&self, x_n: ArrayView2<f64>, con: ArrayView2<f64>, seq_len: usize, n: usize) -> Result<Array2<f64>> {
        self.check_step(n, usize::MAX)?;
        let batch = self.check_cols(x_n, self.config.attributes, seq_len)?;
        self.predict_noise_steps(x_n, con, seq_len, &vec![n; batch])
    }
}

/// See [`EtdModel::bind`].
pub struct BoundPredictor<'a> {
    model: &'a EtdModel,
    con: Array2<f64>,
    proj: Vec<Array2<f64>>,
}

impl NoisePredictor for BoundPredictor<'_> {
    fn predict_noise(&self, x_n: ArrayView2<f64>, con: ArrayView2<f64>, seq_len: usize, n: usize) -> Result<Array2<f64>> {
        if con != self.con.view() {
            return self.model.predict_noise(x_n, con, seq_len, n);
        }
        self.model.check_step(n, usize::MAX)?;
        let batch = self.model.check_cols(x_n, self.model.config.attributes, seq_len)?;
        if x_n.nrows() != self.con.nrows() {
            return Err(Error::shape((self.con.nrows(), self.model.config.attributes), x_n.dim()));
        }
        let steps = vec![n; batch];
        let m = self.model;
        let (out, _) = predictor::forward(&m.params, &m.slots.eps, x_n, self.con.view(), &self.proj, seq_len, &steps, false);
        Ok(out)
    }
}
