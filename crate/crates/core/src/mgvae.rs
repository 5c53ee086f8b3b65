//! Majority-guided VAE.
//!
//! The encoder maps `x` through a tanh trunk into a mean head and a
//! log-variance head. The prior over `z` is a uniform mixture of isotropic
//! Gaussians `N(z | μ(x⁺), σ²I)` centred at the encoder means of majority
//! samples, so the prior mean function *is* the encoder mean pathway. The
//! scale `σ = exp(prior_log_sigma)` is a learnable scalar.
//!
//! The training loss is the single-sample negative ELBO
//! `−log p(x|z) + log q(z|x) − log p(z | X⁺)` averaged over the batch.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{gaussian_log_density_pairwise, Graph, Var, LN_2PI};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, Linear, Mlp};
use crate::params::{ParamId, ParamStore};
use crate::rng::{index, normal_tensor, Rng};
use crate::tensor::Tensor;

/// Bounds applied to encoder log-variances before exponentiation.
pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Mixture over encoded majority samples.
    MajorityMixture,
    /// `N(0, I)`, ignoring the majority.
    StandardNormal,
}

impl PriorMode {
    pub fn tag(self) -> &'static str {
        match self {
            PriorMode::MajorityMixture => "majority_mixture",
            PriorMode::StandardNormal => "standard_normal",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "majority_mixture" | "mixture" => Ok(PriorMode::MajorityMixture),
            "standard_normal" | "normal" => Ok(PriorMode::StandardNormal),
            _ => Err(Error::Config(format!("unknown prior mode {tag:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputLikelihood {
    /// Decoder emits logits; data must lie in `[0, 1]`.
    Bernoulli,
    /// Decoder emits means of a unit-variance Gaussian.
    GaussianFixedVariance,
}

impl OutputLikelihood {
    pub fn tag(self) -> &'static str {
        match self {
            OutputLikelihood::Bernoulli => "bernoulli",
            OutputLikelihood::GaussianFixedVariance => "gaussian_fixed_variance",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "bernoulli" => Ok(OutputLikelihood::Bernoulli),
            "gaussian_fixed_variance" => Ok(OutputLikelihood::GaussianFixedVariance),
            _ => Err(Error::Config(format!("unknown output likelihood {tag:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MgvaeConfig {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub likelihood: OutputLikelihood,
    #[serde(default = "default_prior")]
    pub prior_mode: PriorMode,
}

fn default_hidden() -> Vec<usize> {
    vec![300, 300]
}

fn default_prior() -> PriorMode {
    PriorMode::MajorityMixture
}

impl MgvaeConfig {
    /// 784→300→300→40 style network for image data in `[0, 1]`.
    pub fn image(input_dim: usize) -> Self {
        MgvaeConfig {
            input_dim,
            hidden: default_hidden(),
            latent_dim: 40,
            likelihood: OutputLikelihood::Bernoulli,
            prior_mode: PriorMode::MajorityMixture,
        }
    }

    /// d→300→300→10 network for tabular data; the likelihood follows the
    /// data range.
    pub fn tabular(input_dim: usize, signed: bool) -> Self {
        MgvaeConfig {
            input_dim,
            hidden: default_hidden(),
            latent_dim: 10,
            likelihood: if signed {
                OutputLikelihood::GaussianFixedVariance
            } else {
                OutputLikelihood::Bernoulli
            },
            prior_mode: PriorMode::MajorityMixture,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::Config("mgvae.input_dim and mgvae.latent_dim must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("mgvae.hidden must be non-empty and positive, got {:?}", self.hidden)));
        }
        Ok(())
    }
}

/// Source of the reparameterization noise `ε`.
pub enum Noise<'a> {
    Sample(&'a mut Rng),
    /// A fixed `batch×latent` matrix, for gradient checks.
    Fixed(&'a Tensor),
}

impl Noise<'_> {
    fn draw(&mut self, rows: usize, cols: usize) -> Result<Tensor> {
        match self {
            Noise::Sample(rng) => Ok(normal_tensor(rng, &[rows, cols])),
            Noise::Fixed(t) => {
                if t.shape() != [rows, cols] {
                    return Err(Error::Shape(format!(
                        "fixed noise has shape {:?}, need [{rows}, {cols}]",
                        t.shape()
                    )));
                }
                Ok((*t).clone())
            }
        }
    }
}

/// Batch-mean loss and its two parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// Negative ELBO.
    pub loss: f64,
    /// Mean negative log-likelihood.
    pub recon: f64,
    /// Mean KL term (Monte-Carlo for the mixture prior, closed form for the
    /// standard normal).
    pub kl: f64,
}

/// Graph handles of one negative-ELBO evaluation.
pub struct ElboVars<'g> {
    pub loss: Var<'g>,
    /// Per-row negative log-likelihood, shape `[B]`.
    pub recon: Var<'g>,
    /// Per-row KL term, shape `[B]`.
    pub kl: Var<'g>,
}

#[derive(Debug, Clone)]
pub struct MgvaeModel {
    config: MgvaeConfig,
    store: ParamStore,
    trunk: Mlp,
    mean_head: Linear,
    logvar_head: Linear,
    decoder: Mlp,
    prior_log_sigma: ParamId,
}

impl MgvaeModel {
    pub fn new(config: MgvaeConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut dims = vec![config.input_dim];
        dims.extend_from_slice(&config.hidden);
        let trunk = Mlp::new(&mut store, "encoder.trunk", &dims, Activation::Tanh, Activation::Tanh, rng)?;
        let h = *config.hidden.last().expect("validated non-empty");
        let mean_head = Linear::new(&mut store, "encoder.mean", h, config.latent_dim, rng);
        let logvar_head = Linear::new(&mut store, "encoder.logvar", h, config.latent_dim, rng);
        let mut dec_dims = vec![config.latent_dim];
        dec_dims.extend(config.hidden.iter().rev());
        dec_dims.push(config.input_dim);
        let decoder = Mlp::new(&mut store, "decoder", &dec_dims, Activation::Tanh, Activation::Identity, rng)?;
        let prior_log_sigma = store.register("prior_log_sigma", Tensor::scalar(0.0));
        Ok(MgvaeModel {
            config,
            store,
            trunk,
            mean_head,
            logvar_head,
            decoder,
            prior_log_sigma,
        })
    }

    pub fn config(&self) -> &MgvaeConfig {
        &self.config
    }

    pub fn prior_mode(&self) -> PriorMode {
        self.config.prior_mode
    }

    pub fn set_prior_mode(&mut self, mode: PriorMode) {
        self.config.prior_mode = mode;
    }

    pub fn likelihood(&self) -> OutputLikelihood {
        self.config.likelihood
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn mean_head(&self) -> Linear {
        self.mean_head
    }

    pub fn logvar_head(&self) -> Linear {
        self.logvar_head
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn prior_log_sigma_id(&self) -> ParamId {
        self.prior_log_sigma
    }

    pub fn prior_log_sigma(&self) -> f64 {
        self.store.value(self.prior_log_sigma).data()[0]
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "model expects batch×{} input, got {:?}",
                self.config.input_dim,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Encoder mean `μ(x)`. The prior component means use this same path.
    pub fn encode_mean_on<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Var<'g>> {
        let h = self.trunk.forward(g, &self.store, x)?;
        self.mean_head.forward(g, &self.store, h)
    }

    /// Posterior mean and clamped log-variance.
    pub fn encode_on<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        let h = self.trunk.forward(g, &self.store, x)?;
        let mean = self.mean_head.forward(g, &self.store, h)?;
        let logvar = self
            .logvar_head
            .forward(g, &self.store, h)?
            .clamp(LOGVAR_MIN, LOGVAR_MAX)?;
        Ok((mean, logvar))
    }

    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let g = Graph::new();
        let (m, lv) = self.encode_on(&g, g.constant(x.clone()))?;
        Ok((m.value(), lv.value()))
    }

    /// Prior component means `μ(x⁺)` for a batch of majority rows.
    pub fn prior_means(&self, majority: &Tensor) -> Result<Tensor> {
        self.check_input(majority)?;
        let g = Graph::new();
        Ok(self.encode_mean_on(&g, g.constant(majority.clone()))?.value())
    }

    /// Decoder output: logits (Bernoulli) or means (Gaussian).
    pub fn decode_on<'g>(&self, g: &'g Graph, z: Var<'g>) -> Result<Var<'g>> {
        self.decoder.forward(g, &self.store, z)
    }

    pub fn log_sigma_on<'g>(&self, g: &'g Graph) -> Var<'g> {
        g.param(&self.store, self.prior_log_sigma)
    }

    /// Per-row `log (1/S) Σ_s N(z_i | μ(x⁺_s), σ²I)` for `z` of shape
    /// `B×L` and majority rows of shape `S×d`.
    pub fn log_mixture_prior_on<'g>(&self, g: &'g Graph, z: Var<'g>, prior_x: Var<'g>) -> Result<Var<'g>> {
        let s = prior_x.shape().first().copied().unwrap_or(0);
        if s == 0 {
            return Err(Error::Config("the prior batch is empty".into()));
        }
        let means = self.encode_mean_on(g, prior_x)?;
        let comp = gaussian_log_density_pairwise(z, means, self.log_sigma_on(g))?;
        comp.log_sum_exp(1)?.add_scalar(-(s as f64).ln())
    }

    /// Value form of [`Self::log_mixture_prior_on`]: one entry per row of `z`.
    pub fn log_mixture_prior(&self, z: &Tensor, prior_x: &Tensor) -> Result<Vec<f64>> {
        self.check_input(prior_x)?;
        let z = if z.rank() == 1 {
            z.clone().reshape(vec![1, z.numel()])?
        } else {
            z.clone()
        };
        if z.cols() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "z has {} columns, latent dimension is {}",
                z.cols(),
                self.config.latent_dim
            )));
        }
        let g = Graph::new();
        let out = self.log_mixture_prior_on(&g, g.constant(z), g.constant(prior_x.clone()))?;
        Ok(out.value().into_data())
    }

    /// `z = mean + exp(logvar/2) ⊙ ε`.
    pub fn reparameterize_on<'g>(
        &self,
        g: &'g Graph,
        mean: Var<'g>,
        logvar: Var<'g>,
        noise: &mut Noise<'_>,
    ) -> Result<Var<'g>> {
        let shape = mean.shape();
        if shape != logvar.shape() || shape.len() != 2 {
            return Err(Error::Shape(format!(
                "reparameterize needs equal matrix shapes, got {shape:?} and {:?}",
                logvar.shape()
            )));
        }
        let eps = g.constant(noise.draw(shape[0], shape[1])?);
        logvar.scale(0.5)?.exp()?.mul(eps)?.add(mean)
    }

    /// Builds the negative ELBO of `x` on `g`. `prior_x` holds the majority
    /// prior batch and is required in mixture mode.
    pub fn elbo_on<'g>(
        &self,
        g: &'g Graph,
        x: &Tensor,
        prior_x: Option<&Tensor>,
        noise: &mut Noise<'_>,
    ) -> Result<ElboVars<'g>> {
        self.check_input(x)?;
        if x.rows() == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        if self.config.likelihood == OutputLikelihood::Bernoulli {
            if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Data(format!(
                    "Bernoulli likelihood needs data in [0, 1], found {v}"
                )));
            }
        }
        let l = self.config.latent_dim as f64;
        let xv = g.constant(x.clone());
        let (mean, logvar) = self.encode_on(g, xv)?;
        let z = self.reparameterize_on(g, mean, logvar, noise)?;
        let out = self.decode_on(g, z)?;

        let recon = match self.config.likelihood {
            OutputLikelihood::Bernoulli => out.softplus()?.sub(xv.mul(out)?)?.sum_axis(1)?,
            OutputLikelihood::GaussianFixedVariance => {
                let d = self.config.input_dim as f64;
                out.sub(xv)?.square()?.sum_axis(1)?.scale(0.5)?.add_scalar(0.5 * d * LN_2PI)?
            }
        };

        let kl = match self.config.prior_mode {
            PriorMode::StandardNormal => {
                // 0.5 Σ (μ² + e^{lv} − 1 − lv)
                mean.square()?
                    .add(logvar.exp()?)?
                    .sub(logvar)?
                    .sum_axis(1)?
                    .add_scalar(-l)?
                    .scale(0.5)?
            }
            PriorMode::MajorityMixture => {
                let prior_x = prior_x.ok_or_else(|| {
                    Error::Config("mixture prior needs a majority prior batch".into())
                })?;
                self.check_input(prior_x)?;
                // log q(z|x) = −½ Σ [(z−μ)² e^{−lv} + lv + log 2π]
                let log_q = z
                    .sub(mean)?
                    .square()?
                    .mul(logvar.neg()?.exp()?)?
                    .add(logvar)?
                    .sum_axis(1)?
                    .add_scalar(l * LN_2PI)?
                    .scale(-0.5)?;
                let log_p = self.log_mixture_prior_on(g, z, g.constant(prior_x.clone()))?;
                log_q.sub(log_p)?
            }
        };
        let loss = recon.add(kl)?.mean()?;
        Ok(ElboVars { loss, recon, kl })
    }

    /// Negative ELBO without gradients.
    pub fn elbo(&self, x: &Tensor, prior_x: Option<&Tensor>, noise: &mut Noise<'_>) -> Result<ElboTerms> {
        let g = Graph::new();
        let v = self.elbo_on(&g, x, prior_x, noise)?;
        terms(&v)
    }

    /// Negative ELBO with its gradient added into the parameter store's
    /// accumulators.
    pub fn elbo_backward(&mut self, x: &Tensor, prior_x: Option<&Tensor>, noise: &mut Noise<'_>) -> Result<ElboTerms> {
        let g = Graph::new();
        let v = self.elbo_on(&g, x, prior_x, noise)?;
        let t = terms(&v)?;
        let grads = g.backward(v.loss)?;
        grads.accumulate_into(&mut self.store);
        Ok(t)
    }

    /// Generation: for each output row draw `n` uniformly from the
    /// majority, sample `z ~ N(μ(x⁺_n), σ²I)` and decode. Bernoulli models
    /// emit the sigmoid mean. Returns the samples and the indices `n`.
    /// Under the standard-normal prior `z ~ N(0, I)` and no indices are
    /// returned.
    pub fn generate(&self, majority: &Tensor, count: usize, rng: &mut Rng) -> Result<(Tensor, Vec<usize>)> {
        self.check_input(majority)?;
        if majority.rows() == 0 {
            return Err(Error::Data("cannot generate from an empty majority set".into()));
        }
        if let Some(p) = self.store.iter().find(|p| !p.value.all_finite()) {
            return Err(Error::Numeric(format!("parameter {} is not finite", p.name)));
        }
        if self.config.prior_mode == PriorMode::StandardNormal {
            let zeros = vec![0; count];
            return Ok((self.generate_from(majority, &zeros, rng)?, Vec::new()));
        }
        let refs: Vec<usize> = (0..count).map(|_| index(rng, majority.rows())).collect();
        let samples = self.generate_from(majority, &refs, rng)?;
        Ok((samples, refs))
    }

    /// Decodes one latent draw `z ~ N(μ(x⁺_n), σ²I)` per entry `n` of
    /// `refs`. Under the standard-normal prior the rows are ignored.
    pub fn generate_from(&self, majority: &Tensor, refs: &[usize], rng: &mut Rng) -> Result<Tensor> {
        self.check_input(majority)?;
        if let Some(&bad) = refs.iter().find(|&&n| n >= majority.rows()) {
            return Err(Error::Shape(format!("reference row {bad} outside {} majority rows", majority.rows())));
        }
        let d = self.config.input_dim;
        let mut data = Vec::with_capacity(refs.len() * d);
        if self.config.prior_mode == PriorMode::StandardNormal {
            for chunk in refs.chunks(GEN_CHUNK) {
                let g = Graph::new();
                let z = g.constant(normal_tensor(rng, &[chunk.len(), self.config.latent_dim]));
                data.extend(self.decoder_mean_on(&g, z)?.value().into_data());
            }
            return finish_samples(refs.len(), d, data);
        }
        let sigma = self.prior_log_sigma().exp();
        for chunk in refs.chunks(GEN_CHUNK) {
            let g = Graph::new();
            let mu = self.encode_mean_on(&g, g.constant(majority.select_rows(chunk)))?;
            let eps = normal_tensor(rng, &[chunk.len(), self.config.latent_dim]).map(|e| sigma * e);
            let z = mu.add(g.constant(eps))?;
            data.extend(self.decoder_mean_on(&g, z)?.value().into_data());
        }
        finish_samples(refs.len(), d, data)
    }

    /// Decoder output mapped to the data scale (sigmoid for Bernoulli).
    fn decoder_mean_on<'g>(&self, g: &'g Graph, z: Var<'g>) -> Result<Var<'g>> {
        let mut out = self.decode_on(g, z)?;
        if self.config.likelihood == OutputLikelihood::Bernoulli {
            out = out.sigmoid()?;
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let hidden: Vec<String> = self.config.hidden.iter().map(ToString::to_string).collect();
        Checkpoint::from_store(&self.store)
            .with_meta("kind", "mgvae")
            .with_meta("input_dim", self.config.input_dim)
            .with_meta("hidden", hidden.join(","))
            .with_meta("latent_dim", self.config.latent_dim)
            .with_meta("prior_mode", self.config.prior_mode.tag())
            .with_meta("output_likelihood", self.config.likelihood.tag())
            .with_meta("prior_log_sigma", format!("{:e}", self.prior_log_sigma()))
            .with_layers("encoder.trunk", &self.trunk.specs())
            .with_layers("encoder.mean", &[head_spec(self.mean_head)])
            .with_layers("encoder.logvar", &[head_spec(self.logvar_head)])
            .with_layers("decoder", &self.decoder.specs())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.require_meta("kind")? != "mgvae" {
            return Err(Error::Config("checkpoint is not an mgvae model".into()));
        }
        let parse = |key: &str| -> Result<usize> {
            ck.require_meta(key)?
                .parse()
                .map_err(|_| Error::Config(format!("checkpoint meta {key} is not an integer")))
        };
        let hidden = ck
            .require_meta("hidden")?
            .split(',')
            .map(|h| h.parse().map_err(|_| Error::Config(format!("bad hidden size {h:?}"))))
            .collect::<Result<Vec<usize>>>()?;
        let config = MgvaeConfig {
            input_dim: parse("input_dim")?,
            hidden,
            latent_dim: parse("latent_dim")?,
            likelihood: OutputLikelihood::from_tag(ck.require_meta("output_likelihood")?)?,
            prior_mode: PriorMode::from_tag(ck.require_meta("prior_mode")?)?,
        };
        let mut model = MgvaeModel::new(config, &mut crate::rng::seeded(0))?;
        if ck.layers_of("encoder.trunk") != model.trunk.specs() || ck.layers_of("decoder") != model.decoder.specs() {
            return Err(Error::Config("checkpoint layer manifest does not match its meta fields".into()));
        }
        ck.load_into(&mut model.store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        MgvaeModel::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn head_spec(l: Linear) -> LayerSpec {
    LayerSpec {
        in_dim: l.in_dim,
        out_dim: l.out_dim,
        activation: Activation::Identity,
    }
}

fn terms(v: &ElboVars<'_>) -> Result<ElboTerms> {
    let loss = v.loss.item()?;
    let b = v.recon.value().numel() as f64;
    Ok(ElboTerms {
        loss,
        recon: v.recon.value().sum() / b,
        kl: v.kl.value().sum() / b,
    })
}

/// Rows decoded per forward pass during generation.
const GEN_CHUNK: usize = 512;

fn finish_samples(count: usize, d: usize, data: Vec<f64>) -> Result<Tensor> {
    let samples = Tensor::matrix(count, d, data)?;
    if !samples.all_finite() {
        return Err(Error::Numeric("generated samples are not finite".into()));
    }
    Ok(samples)
}
