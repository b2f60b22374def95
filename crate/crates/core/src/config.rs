//! Pipeline configuration and its plain-text `key = value` format.

use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::{LossWeights, VoteNorm};
use crate::rays::RayParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    Predicted,
    Oracle,
}

/// Every tunable of the pipeline. Defaults follow the reference architecture
/// where it fixes a value (1024 seeds upsampled to 2048, 18 rays from five
/// polar rings, 128-wide level features) and are plain choices elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub n_input_points: usize,
    pub n_seeds: usize,
    pub upsampled_seeds: usize,
    pub clusters: usize,
    pub rays: RayParams,

    pub use_fbs: bool,
    /// Size of the top-ranked foreground set; `None` means half the points.
    pub kappa: Option<usize>,
    /// Foreground samples; `None` means half the samples.
    pub m_fore: Option<usize>,

    pub sa1_radius: f64,
    pub sa1_max_group: usize,
    pub sa2_radius: f64,
    pub sa2_max_group: usize,
    pub propagate_k: usize,
    pub cluster_radius: f64,

    pub surface_proximity: f64,
    pub surface_band: f64,
    pub positive_radius: f64,
    pub mask_mode: MaskMode,

    pub sa1_width: usize,
    pub seed_width: usize,
    pub cluster_width: usize,
    pub attention_inner: usize,
    pub attention_groups: usize,
    pub vote_hidden: usize,
    pub anchor_width: usize,
    pub ray_hidden: usize,
    pub fuse_width: usize,
    pub head_hidden: usize,

    pub ppc: bool,
    pub ooc: bool,
    pub gsc: bool,

    pub loss_weights: LossWeights,
    pub smooth_l1_beta: f64,
    pub vote_norm: VoteNorm,
    pub iou_threshold: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_input_points: 2048,
            n_seeds: 1024,
            upsampled_seeds: 2048,
            clusters: 256,
            rays: RayParams::default(),
            use_fbs: true,
            kappa: None,
            m_fore: None,
            sa1_radius: 0.2,
            sa1_max_group: 32,
            sa2_radius: 0.4,
            sa2_max_group: 32,
            propagate_k: 3,
            cluster_radius: 0.3,
            surface_proximity: 0.1,
            surface_band: 0.05,
            positive_radius: 0.3,
            mask_mode: MaskMode::Predicted,
            sa1_width: 32,
            seed_width: 32,
            cluster_width: 32,
            attention_inner: 16,
            attention_groups: 1,
            vote_hidden: 32,
            anchor_width: 16,
            ray_hidden: 128,
            fuse_width: 64,
            head_hidden: 128,
            ppc: true,
            ooc: true,
            gsc: true,
            loss_weights: LossWeights::default(),
            smooth_l1_beta: 1.0,
            vote_norm: VoteNorm::Euclidean,
            iou_threshold: 0.25,
            seed: 0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("config key `{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("config key `{key}`: expected a boolean, got `{v}`"))),
    }
}

impl PipelineConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let lw = &mut self.loss_weights;
        match key {
            "n_input_points" => self.n_input_points = parse_value(key, v)?,
            "n_seeds" => self.n_seeds = parse_value(key, v)?,
            "upsampled_seeds" => self.upsampled_seeds = parse_value(key, v)?,
            "clusters" | "k" => self.clusters = parse_value(key, v)?,
            "polar_count" | "p" => self.rays.polar_count = parse_value(key, v)?,
            "ring_multiplier" => self.rays.ring_multiplier = parse_value(key, v)?,
            "coarse_bins" | "kc" => self.rays.coarse_bins = parse_value(key, v)?,
            "fine_bins" | "kf" => self.rays.fine_bins = parse_value(key, v)?,
            "anchor_radius_ratio" => self.rays.radius_ratio = parse_value(key, v)?,
            "anchor_max_group" => self.rays.max_group = parse_value(key, v)?,
            "use_fbs" => self.use_fbs = parse_bool(key, v)?,
            "kappa" => self.kappa = Some(parse_value(key, v)?),
            "m_fore" => self.m_fore = Some(parse_value(key, v)?),
            "sa1_radius" => self.sa1_radius = parse_value(key, v)?,
            "sa1_max_group" => self.sa1_max_group = parse_value(key, v)?,
            "sa2_radius" => self.sa2_radius = parse_value(key, v)?,
            "sa2_max_group" => self.sa2_max_group = parse_value(key, v)?,
            "propagate_k" => self.propagate_k = parse_value(key, v)?,
            "cluster_radius" => self.cluster_radius = parse_value(key, v)?,
            "surface_proximity" => self.surface_proximity = parse_value(key, v)?,
            "surface_band" => self.surface_band = parse_value(key, v)?,
            "positive_radius" => self.positive_radius = parse_value(key, v)?,
            "mask_mode" => {
                self.mask_mode = match v {
                    "predicted" => MaskMode::Predicted,
                    "oracle" => MaskMode::Oracle,
                    _ => return Err(Error::invalid(format!("mask_mode must be `predicted` or `oracle`, got `{v}`"))),
                }
            }
            "sa1_width" => self.sa1_width = parse_value(key, v)?,
            "seed_width" => self.seed_width = parse_value(key, v)?,
            "cluster_width" => self.cluster_width = parse_value(key, v)?,
            "attention_inner" => self.attention_inner = parse_value(key, v)?,
            "attention_groups" => self.attention_groups = parse_value(key, v)?,
            "vote_hidden" => self.vote_hidden = parse_value(key, v)?,
            "anchor_width" => self.anchor_width = parse_value(key, v)?,
            "ray_hidden" => self.ray_hidden = parse_value(key, v)?,
            "fuse_width" => self.fuse_width = parse_value(key, v)?,
            "head_hidden" => self.head_hidden = parse_value(key, v)?,
            "ppc" => self.ppc = parse_bool(key, v)?,
            "ooc" => self.ooc = parse_bool(key, v)?,
            "gsc" => self.gsc = parse_bool(key, v)?,
            "lambda_vote_reg" => lw.vote_reg = parse_value(key, v)?,
            "lambda_fbs" => lw.fbs = parse_value(key, v)?,
            "lambda_rbfg" => lw.rbfg = parse_value(key, v)?,
            "lambda_obj_cls" => lw.obj_cls = parse_value(key, v)?,
            "lambda_box" => lw.box_reg = parse_value(key, v)?,
            "lambda_sem_cls" => lw.sem_cls = parse_value(key, v)?,
            "lambda_scale_reg" => lw.scale_reg = parse_value(key, v)?,
            "lambda_c_cls" => lw.c_cls = parse_value(key, v)?,
            "lambda_f_cls" => lw.f_cls = parse_value(key, v)?,
            "smooth_l1_beta" => self.smooth_l1_beta = parse_value(key, v)?,
            "vote_norm" => {
                self.vote_norm = match v {
                    "euclidean" | "l2" => VoteNorm::Euclidean,
                    "l1" => VoteNorm::L1,
                    _ => return Err(Error::invalid(format!("vote_norm must be `euclidean` or `l1`, got `{v}`"))),
                }
            }
            "iou_threshold" => self.iou_threshold = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::invalid(format!("config line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        PipelineConfig::parse(&crate::io::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_input_points", self.n_input_points),
            ("n_seeds", self.n_seeds),
            ("upsampled_seeds", self.upsampled_seeds),
            ("clusters", self.clusters),
            ("coarse_bins", self.rays.coarse_bins),
            ("fine_bins", self.rays.fine_bins),
            ("anchor_max_group", self.rays.max_group),
            ("sa1_max_group", self.sa1_max_group),
            ("sa2_max_group", self.sa2_max_group),
            ("propagate_k", self.propagate_k),
            ("sa1_width", self.sa1_width),
            ("seed_width", self.seed_width),
            ("cluster_width", self.cluster_width),
            ("attention_inner", self.attention_inner),
            ("vote_hidden", self.vote_hidden),
            ("anchor_width", self.anchor_width),
            ("ray_hidden", self.ray_hidden),
            ("fuse_width", self.fuse_width),
            ("head_hidden", self.head_hidden),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.rays.polar_count < 2 {
            return Err(Error::invalid("polar_count must be at least 2"));
        }
        if self.n_seeds > self.upsampled_seeds {
            return Err(Error::invalid("n_seeds cannot exceed upsampled_seeds"));
        }
        if self.clusters > self.n_seeds {
            return Err(Error::invalid("clusters cannot exceed n_seeds"));
        }
        if self.propagate_k > self.n_seeds {
            return Err(Error::invalid("propagate_k cannot exceed n_seeds"));
        }
        if self.attention_groups == 0 || self.attention_inner % self.attention_groups != 0 {
            return Err(Error::invalid("attention_inner must be divisible by attention_groups"));
        }
        let reals = [
            ("sa1_radius", self.sa1_radius),
            ("sa2_radius", self.sa2_radius),
            ("cluster_radius", self.cluster_radius),
            ("anchor_radius_ratio", self.rays.radius_ratio),
            ("surface_proximity", self.surface_proximity),
            ("surface_band", self.surface_band),
            ("positive_radius", self.positive_radius),
            ("smooth_l1_beta", self.smooth_l1_beta),
            ("iou_threshold", self.iou_threshold),
        ];
        for (name, v) in reals {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be a positive real, got {v}")));
            }
        }
        self.loss_weights.validate()
    }

    /// Number of rays per cluster implied by the ring parameters.
    pub fn ray_count(&self) -> Result<usize> {
        Ok(crate::rays::ray_distribution_with(self.rays.polar_count, self.rays.ring_multiplier)?
            .iter()
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.ray_count().unwrap(), 18);
    }

    #[test]
    fn parse_overrides_and_comments() {
        let c = PipelineConfig::parse("# demo\nclusters = 64\nppc = off  # no patch context\nlambda_box=0.5\n").unwrap();
        assert_eq!(c.clusters, 64);
        assert!(!c.ppc);
        assert_eq!(c.loss_weights.box_reg, 0.5);
    }

    #[test]
    fn parse_rejects_bad_input() {
        assert!(PipelineConfig::parse("nonsense = 1\n").is_err());
        assert!(PipelineConfig::parse("clusters\n").is_err());
        assert!(PipelineConfig::parse("clusters = many\n").is_err());
        assert!(PipelineConfig::parse("lambda_fbs = -1\n").is_err());
        assert!(PipelineConfig::parse("clusters = 2000\n").is_err());
    }
}
