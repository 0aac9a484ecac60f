//! Flat key-value run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mergefront::channel::{ChannelSpec, Codec};
use mergefront::gp::{GammaPrior, GpPriors};
use mergefront::merging::MAX_PROPORTION;
use mergefront::mobo::{default_n_init, AccuracyDrop, BoSettings};
use mergefront::task::DatasetSpec;
use mergefront::ModelDims;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    Identity,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropKind {
    Absolute,
    Relative,
}

/// Every key of the config file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,

    #[serde(default)]
    pub weights_path: Option<PathBuf>,
    #[serde(default = "d::layers")]
    pub layers: usize,
    #[serde(default = "d::dim")]
    pub dim: usize,
    #[serde(default = "d::heads")]
    pub heads: usize,
    #[serde(default = "d::mlp_dim")]
    pub mlp_dim: usize,
    #[serde(default = "d::tokens")]
    pub tokens: usize,
    #[serde(default = "d::patch")]
    pub patch: usize,
    #[serde(default = "d::channels")]
    pub channels: usize,
    #[serde(default = "d::num_classes")]
    pub num_classes: usize,

    pub weights_seed: u64,
    pub dataset_seed: u64,
    pub channel_seed: u64,
    pub bo_seed: u64,

    #[serde(default = "d::noise_level")]
    pub noise_level: f64,
    #[serde(default = "d::calibration_per_class")]
    pub calibration_per_class: usize,
    #[serde(default = "d::eval_per_class")]
    pub eval_per_class: usize,
    #[serde(default = "d::bo_subset")]
    pub bo_subset: usize,

    #[serde(default = "d::max_proportion")]
    pub max_proportion: f64,

    #[serde(default = "d::codec")]
    pub codec: CodecKind,
    #[serde(default)]
    pub codec_dim: Option<usize>,
    /// Optimize under this SNR instead of a noiseless link.
    #[serde(default)]
    pub optimize_snr_db: Option<f64>,
    #[serde(default = "d::sweep_snrs")]
    pub sweep_snrs: Vec<f64>,
    #[serde(default = "d::policy_drop")]
    pub policy_drop: f64,
    #[serde(default = "d::policy_drop_kind")]
    pub policy_drop_kind: DropKind,
    #[serde(default = "d::random_baselines")]
    pub random_baselines: usize,

    #[serde(default = "d::budget")]
    pub budget: usize,
    #[serde(default)]
    pub n_init: Option<usize>,
    #[serde(default = "d::gp_restarts")]
    pub gp_restarts: usize,
    #[serde(default = "d::full_refit_every")]
    pub full_refit_every: usize,
    /// `[shape, rate]` of the Gamma prior on the signal variance.
    #[serde(default = "d::prior_signal_variance")]
    pub prior_signal_variance: [f64; 2],
    #[serde(default = "d::prior_noise_variance")]
    pub prior_noise_variance: [f64; 2],
    /// `[shape, rate]` of the Gamma prior on each inverse squared lengthscale.
    #[serde(default = "d::prior_inverse_sq_lengthscale")]
    pub prior_inverse_sq_lengthscale: [f64; 2],
}

mod d {
    use super::*;

    pub fn layers() -> usize {
        4
    }
    pub fn dim() -> usize {
        32
    }
    pub fn heads() -> usize {
        4
    }
    pub fn mlp_dim() -> usize {
        128
    }
    pub fn tokens() -> usize {
        16
    }
    pub fn patch() -> usize {
        4
    }
    pub fn channels() -> usize {
        3
    }
    pub fn num_classes() -> usize {
        8
    }
    pub fn noise_level() -> f64 {
        0.3
    }
    pub fn calibration_per_class() -> usize {
        32
    }
    pub fn eval_per_class() -> usize {
        128
    }
    pub fn bo_subset() -> usize {
        256
    }
    pub fn max_proportion() -> f64 {
        MAX_PROPORTION
    }
    pub fn codec() -> CodecKind {
        CodecKind::Identity
    }
    pub fn sweep_snrs() -> Vec<f64> {
        (0..8).map(|i| -10.0 + 5.0 * i as f64).collect()
    }
    pub fn policy_drop() -> f64 {
        0.05
    }
    pub fn policy_drop_kind() -> DropKind {
        DropKind::Relative
    }
    pub fn random_baselines() -> usize {
        20
    }
    pub fn budget() -> usize {
        150
    }
    pub fn gp_restarts() -> usize {
        8
    }
    pub fn full_refit_every() -> usize {
        1
    }
    pub fn prior_signal_variance() -> [f64; 2] {
        let p = GpPriors::default().signal_variance;
        [p.shape, p.rate]
    }
    pub fn prior_noise_variance() -> [f64; 2] {
        let p = GpPriors::default().noise_variance;
        [p.shape, p.rate]
    }
    pub fn prior_inverse_sq_lengthscale() -> [f64; 2] {
        let p = GpPriors::default().inverse_sq_lengthscale;
        [p.shape, p.rate]
    }
}

fn bad(key: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}`: {why}"))
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.weights_path = cfg.weights_path.map(|p| base.join(p));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(p) = &self.weights_path {
            if !p.is_file() {
                return Err(bad("weights_path", format!("file {} does not exist", p.display())));
            }
        } else {
            self.dims().validate().map_err(|e| bad("layers/dim/heads/mlp_dim/tokens/patch/channels", e))?;
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(bad("noise_level", "must be finite and non-negative"));
        }
        for (key, v) in [
            ("calibration_per_class", self.calibration_per_class),
            ("eval_per_class", self.eval_per_class),
            ("bo_subset", self.bo_subset),
            ("gp_restarts", self.gp_restarts),
            ("full_refit_every", self.full_refit_every),
        ] {
            if v == 0 {
                return Err(bad(key, "must be positive"));
            }
        }
        if !(self.max_proportion > 0.0 && self.max_proportion <= MAX_PROPORTION) {
            return Err(bad("max_proportion", format!("must lie in (0, {MAX_PROPORTION}]")));
        }
        match (self.codec, self.codec_dim) {
            (CodecKind::Linear, None) => return Err(bad("codec_dim", "required when codec = \"linear\"")),
            (CodecKind::Linear, Some(0)) => return Err(bad("codec_dim", "must be positive")),
            (CodecKind::Identity, Some(_)) => return Err(bad("codec_dim", "only valid with codec = \"linear\"")),
            _ => {}
        }
        if let Some(snr) = self.optimize_snr_db {
            if !snr.is_finite() {
                return Err(bad("optimize_snr_db", "must be finite"));
            }
        }
        if self.sweep_snrs.is_empty() || self.sweep_snrs.iter().any(|s| !s.is_finite()) {
            return Err(bad("sweep_snrs", "must be a non-empty list of finite numbers"));
        }
        if !(0.0..=1.0).contains(&self.policy_drop) {
            return Err(bad("policy_drop", "must lie in [0, 1]"));
        }
        let layers = self.layers;
        let n_init = self.n_init();
        if n_init < 2 * layers {
            return Err(bad("n_init", format!("must be at least 2 * layers = {}", 2 * layers)));
        }
        if self.budget < n_init {
            return Err(bad("budget", format!("must be at least n_init = {n_init}")));
        }
        for (key, [shape, rate]) in [
            ("prior_signal_variance", self.prior_signal_variance),
            ("prior_noise_variance", self.prior_noise_variance),
            ("prior_inverse_sq_lengthscale", self.prior_inverse_sq_lengthscale),
        ] {
            if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
                return Err(bad(key, "shape and rate must be positive"));
            }
        }
        Ok(())
    }

    /// Model shape from the config keys; a weight file overrides these.
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            layers: self.layers,
            dim: self.dim,
            heads: self.heads,
            mlp_dim: self.mlp_dim,
            tokens: self.tokens,
            patch: self.patch,
            channels: self.channels,
            num_classes: self.num_classes,
        }
    }

    pub fn n_init(&self) -> usize {
        self.n_init.unwrap_or_else(|| default_n_init(self.layers))
    }

    pub fn dataset_spec(&self, dims: &ModelDims, per_class: usize) -> DatasetSpec {
        DatasetSpec::for_model(dims, per_class, self.noise_level)
    }

    pub fn codec(&self) -> Codec {
        match self.codec {
            CodecKind::Identity => Codec::Identity,
            CodecKind::Linear => Codec::Linear {
                dim: self.codec_dim.unwrap_or(0),
            },
        }
    }

    pub fn channel(&self, snr_db: f64) -> ChannelSpec {
        ChannelSpec {
            snr_db,
            seed: self.channel_seed,
            codec: self.codec(),
        }
    }

    pub fn policy_drop(&self) -> AccuracyDrop {
        match self.policy_drop_kind {
            DropKind::Absolute => AccuracyDrop::Absolute(self.policy_drop),
            DropKind::Relative => AccuracyDrop::Relative(self.policy_drop),
        }
    }

    pub fn priors(&self) -> GpPriors {
        let g = |[shape, rate]: [f64; 2]| GammaPrior::new(shape, rate);
        GpPriors {
            signal_variance: g(self.prior_signal_variance),
            noise_variance: g(self.prior_noise_variance),
            inverse_sq_lengthscale: g(self.prior_inverse_sq_lengthscale),
        }
    }

    pub fn bo_settings(&self, layers: usize) -> BoSettings {
        BoSettings {
            budget: self.budget,
            n_init: self.n_init.unwrap_or_else(|| default_n_init(layers)),
            seed: self.bo_seed,
            restarts: self.gp_restarts,
            priors: self.priors(),
            full_refit_every: self.full_refit_every,
            max_proportion: self.max_proportion,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "output_dir = \"out\"\nweights_seed = 1\ndataset_seed = 2\nchannel_seed = 3\nbo_seed = 4\n";

    #[test]
    fn minimal_config_uses_toy_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.dims(), ModelDims::toy());
        assert_eq!(cfg.n_init(), 16);
        assert_eq!(cfg.budget, 150);
        assert_eq!(cfg.sweep_snrs.len(), 8);
        assert_eq!(cfg.priors(), GpPriors::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse(&format!("{MINIMAL}bugdet = 3\n")).unwrap_err();
        assert!(err.to_string().contains("bugdet"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_seed_is_named() {
        let err = RunConfig::parse("output_dir = \"out\"\nweights_seed = 1\ndataset_seed = 2\nchannel_seed = 3\n").unwrap_err();
        assert!(err.to_string().contains("bo_seed"), "{err}");
    }

    #[test]
    fn invalid_values_are_named() {
        for (extra, key) in [
            ("budget = 3\n", "budget"),
            ("max_proportion = 0.5\n", "max_proportion"),
            ("codec = \"linear\"\n", "codec_dim"),
            ("weights_path = \"/nonexistent/w.bin\"\n", "/nonexistent/w.bin"),
            ("policy_drop = -1.0\n", "policy_drop"),
        ] {
            let cfg = RunConfig::parse(&format!("{MINIMAL}{extra}")).unwrap();
            let err = cfg.validate().unwrap_err();
            assert!(err.to_string().contains(key), "{extra}: {err}");
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn wrong_type_is_named() {
        let err = RunConfig::parse(&format!("{MINIMAL}budget = \"many\"\n")).unwrap_err();
        assert!(err.to_string().contains("budget"), "{err}");
    }
}
