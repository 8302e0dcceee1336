//! Training and sampling with the forward model inside the loop.
//!
//! The target loss noises a clean target observation, asks the conditioner
//! for a signal estimate, maps it back through the forward model and compares
//! against the clean target. The novel loss reuses the same signal estimate
//! but supervises it at a separate forward-model parameter, which is what
//! constrains signal coordinates the target view never sees.
//!
//! Sampling starts from unit noise in observation space and iterates
//! denoise -> forward -> renoise. Because the final re-noising step is
//! noiseless, the emitted observation is exactly the forward-model image of
//! the emitted signal.

use crate::denoiser::{bind_params, Conditioner, DenoiserError, DeterministicEstimator};
use crate::forward_models::{FmError, ForwardModel};
use crate::rng::RngKey;
use crate::schedule::{ddpm_posterior_step, q_sample, renoise, ScheduleError, VarianceSchedule};
use crate::tensor::{Tensor, TensorError};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("tuple has no novel observation but the novel loss was requested")]
    MissingNovel,
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Fm(#[from] FmError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Context/target (and optionally novel) observations of one signal.
#[derive(Debug, Clone)]
pub struct TrainingTuple<P> {
    pub o_ctxt: Tensor,
    pub phi_ctxt: P,
    pub o_trgt: Tensor,
    pub phi_trgt: P,
    pub novel: Option<(Tensor, P)>,
}

/// Which reverse step maps the clean estimate to the next noisy observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StepVariant {
    /// Re-noise the clean forward-model output to the previous level.
    #[default]
    Renoise,
    /// Standard diffusion posterior step evaluated at the clean estimate.
    DdpmPosterior,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    /// Tuples averaged per optimization step.
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Weight of the novel loss; 0 reproduces target-only training exactly.
    pub lambda_novel: f64,
    /// Weight of the motion smoothness regularizer (squared first
    /// differences of the motion channel); only used by the warp experiment.
    pub motion_smoothness: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 4,
            adam: AdamConfig::default(),
            lambda_novel: 1.0,
            motion_smoothness: 0.0,
        }
    }
}

/// Optional extra loss term computed from the raw signal estimate.
pub type SignalRegularizer<'a> = &'a dyn Fn(&Tensor) -> crate::tensor::Result<Tensor>;

fn signal_estimate_for_tuple<M, D>(
    model: &D,
    params: &[Tensor],
    fm: &M,
    tuple: &TrainingTuple<M::Params>,
    t: usize,
    noise: &Tensor,
    sched: &VarianceSchedule,
) -> Result<Tensor>
where
    M: ForwardModel,
    D: Conditioner<M> + ?Sized,
{
    let o_trgt_t = q_sample(&tuple.o_trgt, t, noise, sched)?;
    let ctxts = [(tuple.o_ctxt.clone(), tuple.phi_ctxt.clone())];
    Ok(model.estimate_signal(params, fm, &ctxts, &o_trgt_t, t, &tuple.phi_trgt)?)
}

/// `|| O_trgt - forward(estimate, phi_trgt) ||^2` at noise level t.
pub fn loss_trgt<M, D>(
    model: &D,
    params: &[Tensor],
    fm: &M,
    tuple: &TrainingTuple<M::Params>,
    t: usize,
    noise: &Tensor,
    sched: &VarianceSchedule,
) -> Result<Tensor>
where
    M: ForwardModel,
    D: Conditioner<M> + ?Sized,
{
    let signal = signal_estimate_for_tuple(model, params, fm, tuple, t, noise, sched)?;
    let o_hat = fm.apply(&signal, &tuple.phi_trgt)?;
    Ok(tuple.o_trgt.squared_error(&o_hat)?)
}

/// `|| O_novel - forward(same estimate, phi_novel) ||^2`; rejects tuples
/// without a novel observation.
pub fn loss_novel<M, D>(
    model: &D,
    params: &[Tensor],
    fm: &M,
    tuple: &TrainingTuple<M::Params>,
    t: usize,
    noise: &Tensor,
    sched: &VarianceSchedule,
) -> Result<Tensor>
where
    M: ForwardModel,
    D: Conditioner<M> + ?Sized,
{
    let (o_novel, phi_novel) = tuple.novel.as_ref().ok_or(TrainError::MissingNovel)?;
    let signal = signal_estimate_for_tuple(model, params, fm, tuple, t, noise, sched)?;
    let o_hat = fm.apply(&signal, phi_novel)?;
    Ok(o_novel.squared_error(&o_hat)?)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
    cfg: AdamConfig,
}

impl Adam {
    fn new(params: &[Tensor], cfg: AdamConfig) -> Self {
        Adam {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
            cfg,
        }
    }

    fn update(&mut self, params: &[Tensor], grads: &[Tensor]) -> Vec<Tensor> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        params
            .iter()
            .zip(grads.iter())
            .enumerate()
            .map(|(k, (p, g))| {
                let mut data = p.data().to_vec();
                for (i, gi) in g.data().iter().enumerate() {
                    let m = &mut self.m[k][i];
                    let v = &mut self.v[k][i];
                    *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * gi;
                    *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * gi * gi;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    data[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                }
                Tensor::from_vec(p.shape().to_vec(), data).unwrap()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Total loss per step.
    pub losses: Vec<f64>,
}

/// Adam training of `loss_trgt + lambda * loss_novel` (+ optional signal
/// regularizer) over a fixed step budget. A zero-step budget leaves the
/// parameters untouched. Aborts with the step index if the loss goes
/// non-finite.
pub fn train<M, D>(
    model: &mut D,
    fm: &M,
    dataset: &[TrainingTuple<M::Params>],
    sched: &VarianceSchedule,
    cfg: &TrainConfig,
    key: RngKey,
    regularizer: Option<SignalRegularizer>,
) -> Result<TrainReport>
where
    M: ForwardModel,
    D: Conditioner<M> + ?Sized,
{
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let obs_shape: Vec<usize> = fm.observation_shape();
    let batch = cfg.batch_size.max(1);
    let mut adam = Adam::new(&model.params(), cfg.adam.clone());
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = key.child(step as u64).rng();
        let tape = crate::tensor::Tape::new();
        let raw = model.params();
        let bound = bind_params(&tape, &raw);

        let mut loss_acc: Option<Tensor> = None;
        for _ in 0..batch {
            let tuple = &dataset[rng.random_range(0..dataset.len())];
            let t = rng.random_range(1..=model.t_max());
            let noise = Tensor::randn(&obs_shape, &mut rng);
            let o_trgt_t = q_sample(&tuple.o_trgt, t, &noise, sched)?;
            let ctxts = [(tuple.o_ctxt.clone(), tuple.phi_ctxt.clone())];
            let signal =
                model.estimate_signal(&bound, fm, &ctxts, &o_trgt_t, t, &tuple.phi_trgt)?;
            let o_hat = fm.apply(&signal, &tuple.phi_trgt)?;
            let mut loss = tuple.o_trgt.squared_error(&o_hat)?;
            if cfg.lambda_novel != 0.0 {
                if let Some((o_novel, phi_novel)) = &tuple.novel {
                    let o_hat_novel = fm.apply(&signal, phi_novel)?;
                    let novel = o_novel.squared_error(&o_hat_novel)?;
                    loss = loss.add(&novel.scale(cfg.lambda_novel)?)?;
                }
            }
            if let Some(reg) = regularizer {
                loss = loss.add(&reg(&signal)?)?;
            }
            loss_acc = Some(match loss_acc {
                None => loss,
                Some(acc) => acc.add(&loss)?,
            });
        }
        let loss = loss_acc.expect("batch is non-empty").scale(1.0 / batch as f64)?;

        let value = loss.item();
        if !value.is_finite() {
            return Err(TrainError::NonFinite { step });
        }
        losses.push(value);

        let grads = tape.backward(&loss)?;
        let grad_tensors: Vec<Tensor> = bound
            .iter()
            .map(|b| grads.wrt(b))
            .collect::<crate::tensor::Result<_>>()?;
        let new_params = adam.update(&raw, &grad_tensors);
        model.set_params(new_params)?;
    }
    Ok(TrainReport { losses })
}

/// Plain regression training of a deterministic estimator:
/// `|| O_trgt - forward(est(ctxt), phi_trgt) ||^2` (+ regularizer).
pub fn train_deterministic<M>(
    est: &mut DeterministicEstimator,
    fm: &M,
    dataset: &[TrainingTuple<M::Params>],
    cfg: &TrainConfig,
    key: RngKey,
    regularizer: Option<SignalRegularizer>,
) -> Result<TrainReport>
where
    M: ForwardModel,
{
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let batch = cfg.batch_size.max(1);
    let mut adam = Adam::new(est.params(), cfg.adam.clone());
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = key.child(step as u64).rng();
        let tape = crate::tensor::Tape::new();
        let raw = est.params().to_vec();
        let bound = bind_params(&tape, &raw);
        let mut loss_acc: Option<Tensor> = None;
        for _ in 0..batch {
            let tuple = &dataset[rng.random_range(0..dataset.len())];
            let ctxts = [(tuple.o_ctxt.clone(), tuple.phi_ctxt.clone())];
            let signal = est.estimate(&bound, fm, &ctxts, &tuple.phi_trgt)?;
            let o_hat = fm.apply(&signal, &tuple.phi_trgt)?;
            let mut loss = tuple.o_trgt.squared_error(&o_hat)?;
            if let Some(reg) = regularizer {
                loss = loss.add(&reg(&signal)?)?;
            }
            loss_acc = Some(match loss_acc {
                None => loss,
                Some(acc) => acc.add(&loss)?,
            });
        }
        let loss = loss_acc.expect("batch is non-empty").scale(1.0 / batch as f64)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(TrainError::NonFinite { step });
        }
        losses.push(value);
        let grads = tape.backward(&loss)?;
        let grad_tensors: Vec<Tensor> = bound
            .iter()
            .map(|b| grads.wrt(b))
            .collect::<crate::tensor::Result<_>>()?;
        est.set_params(adam.update(&raw, &grad_tensors))?;
    }
    Ok(TrainReport { losses })
}

#[derive(Debug, Clone)]
pub struct SampleResult {
    /// The raw signal emitted at the final step.
    pub signal: Tensor,
    /// The observation at t = 0; exactly `forward(signal, phi_trgt)`.
    pub observation: Tensor,
    /// Observations from t = T down to 0, inclusive.
    pub trajectory: Vec<Tensor>,
}

/// Reverse process: start from unit-normal observations and iterate
/// denoise -> forward -> step.
pub fn sample<M, D>(
    model: &D,
    fm: &M,
    ctxts: &[(Tensor, M::Params)],
    phi_trgt: &M::Params,
    sched: &VarianceSchedule,
    variant: StepVariant,
    key: RngKey,
) -> Result<SampleResult>
where
    M: ForwardModel,
    D: Conditioner<M> + ?Sized,
{
    let mut rng = key.rng();
    sample_with_rng(model, fm, ctxts, phi_trgt, sched, variant, &mut rng)
}

fn sample_with_rng<M, D>(
    model: &D,
    fm: &M,
    ctxts: &[(Tensor, M::Params)],
    phi_trgt: &M::Params,
    sched: &VarianceSchedule,
    variant: StepVariant,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<SampleResult>
where
    M: ForwardModel,
    D: Conditioner<M> + ?Sized,
{
    let obs_shape = fm.observation_shape();
    let params = model.params();
    let t_max = sched.t_max();
    let mut o_t = Tensor::randn(&obs_shape, rng);
    let mut trajectory = Vec::with_capacity(t_max + 1);
    trajectory.push(o_t.clone());
    let mut signal = None;
    for t in (1..=t_max).rev() {
        let s = model.estimate_signal(&params, fm, ctxts, &o_t, t, phi_trgt)?;
        let o_hat = fm.apply(&s, phi_trgt)?;
        let noise = Tensor::randn(&obs_shape, rng);
        o_t = match variant {
            StepVariant::Renoise => renoise(&o_hat, t - 1, &noise, sched)?,
            StepVariant::DdpmPosterior => ddpm_posterior_step(&o_hat, &o_t, t, &noise, sched)?,
        };
        trajectory.push(o_t.clone());
        signal = Some(s);
    }
    Ok(SampleResult {
        signal: signal.expect("schedule has at least one step"),
        observation: o_t,
        trajectory,
    })
}

/// Sample a sequence of targets, folding each completed observation into the
/// context set. Step i uses `key.child(i)`, so a one-element list reproduces
/// `sample` with `key.child(0)` exactly.
pub fn sample_autoregressive<M, D>(
    model: &D,
    fm: &M,
    o_ctxt: &Tensor,
    phi_ctxt: &M::Params,
    phi_list: &[M::Params],
    sched: &VarianceSchedule,
    variant: StepVariant,
    key: RngKey,
) -> Result<Vec<SampleResult>>
where
    M: ForwardModel,
    D: Conditioner<M> + ?Sized,
{
    let mut ctxts = vec![(o_ctxt.clone(), phi_ctxt.clone())];
    let mut out = Vec::with_capacity(phi_list.len());
    for (i, phi) in phi_list.iter().enumerate() {
        let result = sample(model, fm, &ctxts, phi, sched, variant, key.child(i as u64))?;
        ctxts.push((result.observation.clone(), phi.clone()));
        out.push(result);
    }
    Ok(out)
}

/// Mean novel-view squared error over a validation set at seeded random
/// noise levels; the evaluation protocol for the novel-loss effect.
pub fn validation_novel_error<M, D>(
    model: &D,
    fm: &M,
    dataset: &[TrainingTuple<M::Params>],
    sched: &VarianceSchedule,
    key: RngKey,
) -> Result<f64>
where
    M: ForwardModel,
    D: Conditioner<M> + ?Sized,
{
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let params = model.params();
    let obs_shape = fm.observation_shape();
    let mut total = 0.0;
    for (i, tuple) in dataset.iter().enumerate() {
        let mut rng = key.child(i as u64).rng();
        let t = rng.random_range(1..=model.t_max());
        let noise = Tensor::randn(&obs_shape, &mut rng);
        total += loss_novel(model, &params, fm, tuple, t, &noise, sched)?.item();
    }
    Ok(total / dataset.len() as f64)
}
