//! Conditional denoising networks: map (context observations, noisy target
//! observation, step, forward-model parameters) to a raw signal estimate.
//!
//! Two conditioners are provided. [`PlainConditioner`] feeds flattened
//! observations, parameter encodings and sinusoidal step features straight
//! into an MLP. [`RenderConditioner`] implements the deterministic-estimate
//! pattern for the rendering model: a context-only estimator predicts a scene
//! (plus per-cell features), that scene is rendered at the target pose, and
//! the deterministic image, feature image and noisy target are concatenated
//! into the denoiser input. Everything trains end-to-end through the renderer.

use crate::forward_models::{ForwardModel, RenderModel};
use crate::rng::RngKey;
use crate::tensor::{Tape, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("step {t} outside schedule 1..={t_max}")]
    StepOutOfSchedule { t: usize, t_max: usize },
    #[error("no context observations")]
    NoContext,
    #[error("expected {expected} parameter tensors, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Fm(#[from] crate::forward_models::FmError),
}

pub type Result<T> = std::result::Result<T, DenoiserError>;

/// Architecture knobs shared by the denoiser and the deterministic estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden_layers: usize,
    pub width: usize,
    /// Number of sinusoidal step features appended to the input.
    pub t_features: usize,
    /// Feature channels K rendered alongside the deterministic estimate.
    pub feature_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden_layers: 2,
            width: 128,
            t_features: 8,
            feature_channels: 4,
        }
    }
}

/// Affine + relu stack; the last layer is linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<Tensor>, // [W0, b0, W1, b1, ...]
}

impl Mlp {
    pub fn new(key: RngKey, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "mlp needs input and output dims");
        let mut params = Vec::new();
        for (layer, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut rng = key.child(layer as u64).rng();
            let scale = (2.0 / fan_in as f64).sqrt();
            params.push(
                Tensor::randn(&[fan_out, fan_in], &mut rng)
                    .scale(scale)
                    .unwrap(),
            );
            params.push(Tensor::zeros(&[fan_out]));
        }
        Mlp {
            dims: dims.to_vec(),
            params,
        }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(DenoiserError::ParamCount {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    /// Forward pass with explicit parameter tensors (tape-bound or raw).
    pub fn forward(&self, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        if params.len() != self.params.len() {
            return Err(DenoiserError::ParamCount {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        let n_layers = self.dims.len() - 1;
        let mut h = x.clone();
        for layer in 0..n_layers {
            let w = &params[2 * layer];
            let b = &params[2 * layer + 1];
            h = w.matmul(&h)?.add(b)?;
            if layer + 1 < n_layers {
                h = h.relu()?;
            }
        }
        Ok(h)
    }
}

/// Sinusoidal features of the normalized step index.
pub fn step_features(t: usize, t_max: usize, count: usize) -> Vec<f64> {
    let tn = t as f64 / t_max as f64;
    (0..count)
        .map(|i| {
            let freq = std::f64::consts::PI * (1 << (i / 2)) as f64;
            if i % 2 == 0 {
                (freq * tn).sin()
            } else {
                (freq * tn).cos()
            }
        })
        .collect()
}

/// Mean-pool flattened observations and parameter encodings over the context
/// set, preserving permutation invariance over contexts.
fn pooled_context<M: ForwardModel>(
    fm: &M,
    ctxts: &[(Tensor, M::Params)],
) -> Result<(Tensor, Tensor)> {
    if ctxts.is_empty() {
        return Err(DenoiserError::NoContext);
    }
    let inv = 1.0 / ctxts.len() as f64;
    let mut obs_acc: Option<Tensor> = None;
    let mut enc_acc: Option<Tensor> = None;
    for (obs, phi) in ctxts {
        let flat = obs.flatten()?;
        let enc_v = fm.encode_params(phi);
        let enc = Tensor::from_vec(vec![enc_v.len()], enc_v)?;
        obs_acc = Some(match obs_acc {
            None => flat,
            Some(a) => a.add(&flat)?,
        });
        enc_acc = Some(match enc_acc {
            None => enc,
            Some(a) => a.add(&enc)?,
        });
    }
    Ok((
        obs_acc.unwrap().scale(inv)?,
        enc_acc.unwrap().scale(inv)?,
    ))
}

fn encode<M: ForwardModel>(fm: &M, phi: &M::Params) -> Result<Tensor> {
    let v = fm.encode_params(phi);
    Ok(Tensor::from_vec(vec![v.len()], v)?)
}

/// Core denoiser MLP: validates the step index, appends nothing itself; the
/// conditioners assemble the input layout.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    mlp: Mlp,
    t_max: usize,
    t_features: usize,
    signal_shape: Vec<usize>,
}

impl DenoiserNet {
    pub fn new(
        key: RngKey,
        input_len: usize,
        signal_shape: Vec<usize>,
        t_max: usize,
        cfg: &NetConfig,
    ) -> Self {
        let out: usize = signal_shape.iter().product();
        let mut dims = vec![input_len];
        dims.extend(std::iter::repeat_n(cfg.width, cfg.hidden_layers));
        dims.push(out);
        DenoiserNet {
            mlp: Mlp::new(key, &dims),
            t_max,
            t_features: cfg.t_features,
            signal_shape,
        }
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn signal_shape(&self) -> &[usize] {
        &self.signal_shape
    }

    pub fn params(&self) -> &[Tensor] {
        self.mlp.params()
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        self.mlp.set_params(params)
    }

    fn check_step(&self, t: usize) -> Result<Tensor> {
        if t < 1 || t > self.t_max {
            return Err(DenoiserError::StepOutOfSchedule {
                t,
                t_max: self.t_max,
            });
        }
        let f = step_features(t, self.t_max, self.t_features);
        Ok(Tensor::from_vec(vec![f.len()], f)?)
    }

    fn forward(&self, params: &[Tensor], input: &Tensor) -> Result<Tensor> {
        Ok(self.mlp.forward(params, input)?.reshape(&self.signal_shape)?)
    }
}

/// A denoising model the diffusion loop can train and sample: it owns the
/// parameters and turns (contexts, noisy target, step) into a signal estimate.
pub trait Conditioner<M: ForwardModel> {
    fn params(&self) -> Vec<Tensor>;
    fn set_params(&mut self, params: Vec<Tensor>) -> Result<()>;

    /// Estimate the raw signal. `params` are either the stored tensors or
    /// tape-bound copies of them, in the order returned by `params()`.
    fn estimate_signal(
        &self,
        params: &[Tensor],
        fm: &M,
        ctxts: &[(Tensor, M::Params)],
        o_trgt_t: &Tensor,
        t: usize,
        phi_trgt: &M::Params,
    ) -> Result<Tensor>;

    fn t_max(&self) -> usize;
}

/// Direct conditioning: flatten(ctxt) | flatten(trgt_t) | enc(ctxt) | enc(trgt) | t.
#[derive(Debug, Clone)]
pub struct PlainConditioner {
    net: DenoiserNet,
}

impl PlainConditioner {
    pub fn new<M: ForwardModel>(key: RngKey, fm: &M, t_max: usize, cfg: &NetConfig) -> Self {
        let obs_len: usize = fm.observation_shape().iter().product();
        let phi_len = fm.param_encoding_len();
        let input_len = obs_len * 2 + phi_len * 2 + cfg.t_features;
        PlainConditioner {
            net: DenoiserNet::new(key, input_len, fm.signal_shape(), t_max, cfg),
        }
    }

    /// The parameter tensors, independent of any forward-model type.
    pub fn net_params(&self) -> Vec<Tensor> {
        self.net.params().to_vec()
    }

    /// Single-context denoise, the basic operation of the reverse process.
    pub fn denoise<M: ForwardModel>(
        &self,
        fm: &M,
        o_ctxt: &Tensor,
        o_trgt_t: &Tensor,
        t: usize,
        phi_ctxt: &M::Params,
        phi_trgt: &M::Params,
    ) -> Result<Tensor> {
        self.estimate_signal(
            &self.net.params().to_vec(),
            fm,
            &[(o_ctxt.clone(), phi_ctxt.clone())],
            o_trgt_t,
            t,
            phi_trgt,
        )
    }
}

impl<M: ForwardModel> Conditioner<M> for PlainConditioner {
    fn params(&self) -> Vec<Tensor> {
        self.net.params().to_vec()
    }

    fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        self.net.set_params(params)
    }

    fn estimate_signal(
        &self,
        params: &[Tensor],
        fm: &M,
        ctxts: &[(Tensor, M::Params)],
        o_trgt_t: &Tensor,
        t: usize,
        phi_trgt: &M::Params,
    ) -> Result<Tensor> {
        let t_feat = self.net.check_step(t)?;
        let (ctxt_obs, ctxt_enc) = pooled_context(fm, ctxts)?;
        let input = Tensor::concat(&[
            ctxt_obs,
            o_trgt_t.flatten()?,
            ctxt_enc,
            encode(fm, phi_trgt)?,
            t_feat,
        ])?;
        self.net.forward(params, &input)
    }

    fn t_max(&self) -> usize {
        self.net.t_max()
    }
}

/// Context-only estimator: flatten(ctxt) | enc(ctxt) | enc(trgt) -> signal
/// (optionally extended with per-cell feature channels for rendering).
#[derive(Debug, Clone)]
pub struct DeterministicEstimator {
    mlp: Mlp,
    out_shape: Vec<usize>,
}

impl DeterministicEstimator {
    /// Estimator emitting the model's raw signal shape.
    pub fn for_model<M: ForwardModel>(key: RngKey, fm: &M, cfg: &NetConfig) -> Self {
        Self::with_output(key, fm, cfg, fm.signal_shape())
    }

    /// Estimator for the rendering model: output grid carries 4 scene
    /// channels plus `cfg.feature_channels` learned feature channels.
    pub fn for_render(key: RngKey, fm: &RenderModel, cfg: &NetConfig) -> Self {
        let (h, w) = fm.grid_shape();
        Self::with_output(key, fm, cfg, vec![h, w, 4 + cfg.feature_channels])
    }

    fn with_output<M: ForwardModel>(
        key: RngKey,
        fm: &M,
        cfg: &NetConfig,
        out_shape: Vec<usize>,
    ) -> Self {
        let obs_len: usize = fm.observation_shape().iter().product();
        let phi_len = fm.param_encoding_len();
        let input_len = obs_len + phi_len * 2;
        let out: usize = out_shape.iter().product();
        let mut dims = vec![input_len];
        dims.extend(std::iter::repeat_n(cfg.width, cfg.hidden_layers));
        dims.push(out);
        DeterministicEstimator {
            mlp: Mlp::new(key, &dims),
            out_shape,
        }
    }

    pub fn params(&self) -> &[Tensor] {
        self.mlp.params()
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        self.mlp.set_params(params)
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    pub fn estimate<M: ForwardModel>(
        &self,
        params: &[Tensor],
        fm: &M,
        ctxts: &[(Tensor, M::Params)],
        phi_trgt: &M::Params,
    ) -> Result<Tensor> {
        let (ctxt_obs, ctxt_enc) = pooled_context(fm, ctxts)?;
        let input = Tensor::concat(&[ctxt_obs, ctxt_enc, encode(fm, phi_trgt)?])?;
        Ok(self.mlp.forward(params, &input)?.reshape(&self.out_shape)?)
    }
}

/// Deterministic-estimate conditioning for the rendering model: the denoiser
/// sees ctxt | det-render | det-features | noisy target | encodings | t.
#[derive(Debug, Clone)]
pub struct RenderConditioner {
    net: DenoiserNet,
    est: DeterministicEstimator,
    feature_channels: usize,
    /// Ablation hook: zero the rendered feature channels before conditioning.
    pub zero_features: bool,
}

impl RenderConditioner {
    pub fn new(key: RngKey, fm: &RenderModel, t_max: usize, cfg: &NetConfig) -> Self {
        let obs_len: usize = fm.observation_shape().iter().product();
        let phi_len = fm.param_encoding_len();
        let feat_len = fm.image_width() * cfg.feature_channels;
        let input_len = obs_len * 3 + feat_len + phi_len * 2 + cfg.t_features;
        RenderConditioner {
            net: DenoiserNet::new(key.child(0), input_len, fm.signal_shape(), t_max, cfg),
            est: DeterministicEstimator::for_render(key.child(1), fm, cfg),
            feature_channels: cfg.feature_channels,
            zero_features: false,
        }
    }

    pub fn estimator(&self) -> &DeterministicEstimator {
        &self.est
    }

    /// Context-only deterministic estimate: the predicted scene, its render
    /// at the target pose, and the rendered feature image.
    pub fn det_estimate(
        &self,
        est_params: &[Tensor],
        fm: &RenderModel,
        ctxts: &[(Tensor, CameraPoseParams)],
        phi_trgt: &CameraPoseParams,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let (h, w) = fm.grid_shape();
        let k = self.feature_channels;
        let full = self.est.estimate(est_params, fm, ctxts, phi_trgt)?;
        let scene = full.slice(&[0, 0, 0], &[h, w, 4])?;
        let feats = full.slice(&[0, 0, 4], &[h, w, k])?;
        let (image, feat_image) = fm.render_with_features(&scene, &feats, phi_trgt)?;
        Ok((scene, image, feat_image))
    }
}

type CameraPoseParams = <RenderModel as ForwardModel>::Params;

impl Conditioner<RenderModel> for RenderConditioner {
    fn params(&self) -> Vec<Tensor> {
        let mut all = self.net.params().to_vec();
        all.extend_from_slice(self.est.params());
        all
    }

    fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        let n_net = self.net.params().len();
        if params.len() != n_net + self.est.param_count() {
            return Err(DenoiserError::ParamCount {
                expected: n_net + self.est.param_count(),
                got: params.len(),
            });
        }
        let mut params = params;
        let est_params = params.split_off(n_net);
        self.net.set_params(params)?;
        self.est.set_params(est_params)
    }

    fn estimate_signal(
        &self,
        params: &[Tensor],
        fm: &RenderModel,
        ctxts: &[(Tensor, CameraPoseParams)],
        o_trgt_t: &Tensor,
        t: usize,
        phi_trgt: &CameraPoseParams,
    ) -> Result<Tensor> {
        let t_feat = self.net.check_step(t)?;
        let n_net = self.net.params().len();
        let (net_params, est_params) = params.split_at(n_net);
        let (_, det_image, feat_image) = self.det_estimate(est_params, fm, ctxts, phi_trgt)?;
        let feat_in = if self.zero_features {
            feat_image.scale(0.0)?
        } else {
            feat_image
        };
        let (ctxt_obs, ctxt_enc) = pooled_context(fm, ctxts)?;
        let input = Tensor::concat(&[
            ctxt_obs,
            det_image.flatten()?,
            feat_in.flatten()?,
            o_trgt_t.flatten()?,
            ctxt_enc,
            encode(fm, phi_trgt)?,
            t_feat,
        ])?;
        self.net.forward(net_params, &input)
    }

    fn t_max(&self) -> usize {
        self.net.t_max()
    }
}

/// Bind every parameter onto a fresh tape, returning the traced copies.
pub fn bind_params(tape: &Tape, params: &[Tensor]) -> Vec<Tensor> {
    params.iter().map(|p| tape.var(p)).collect()
}

// -- checkpoints ---------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

/// Write parameters as a flat little-endian f64 array plus a JSON shape
/// manifest: `<base>.json` and `<base>.bin`.
pub fn save_params(base: &std::path::Path, params: &[Tensor]) -> Result<()> {
    let manifest = Manifest {
        tensors: params
            .iter()
            .enumerate()
            .map(|(i, p)| TensorMeta {
                name: format!("p{i}"),
                shape: p.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DenoiserError::Checkpoint(e.to_string()))?;
    std::fs::write(base.with_extension("json"), json)
        .map_err(|e| DenoiserError::Checkpoint(e.to_string()))?;
    let mut bytes = Vec::new();
    for p in params {
        for v in p.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(base.with_extension("bin"), bytes)
        .map_err(|e| DenoiserError::Checkpoint(e.to_string()))?;
    Ok(())
}

pub fn load_params(base: &std::path::Path) -> Result<Vec<Tensor>> {
    let json = std::fs::read_to_string(base.with_extension("json"))
        .map_err(|e| DenoiserError::Checkpoint(e.to_string()))?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| DenoiserError::Checkpoint(e.to_string()))?;
    let bytes = std::fs::read(base.with_extension("bin"))
        .map_err(|e| DenoiserError::Checkpoint(e.to_string()))?;
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut out = Vec::new();
    for meta in manifest.tensors {
        let n: usize = meta.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        if data.len() != n {
            return Err(DenoiserError::Checkpoint("payload too short".into()));
        }
        out.push(Tensor::from_vec(meta.shape, data)?);
    }
    Ok(out)
}
