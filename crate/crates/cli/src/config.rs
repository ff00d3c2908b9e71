//! Run configuration: built-in defaults, then a `key = value` file, then
//! command-line flags.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use clap::Args;
use csk_core::codec::{DEFAULT_DOWNSIZE, DEFAULT_MIN_IOU, DEFAULT_SCORE_THRESH, DEFAULT_TOP_K};
use csk_core::loss::FocalParams;
use csk_core::points::{SamplingConfig, DEFAULT_BETA, DEFAULT_DENSITY_DIVISOR, DEFAULT_K};
use csk_core::roi::DEFAULT_MASK_THRESH;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n: u32,
    pub min_iou: f64,
    pub top_k: usize,
    pub score_thresh: f64,
    pub mask_thresh: f64,
    pub k: f64,
    pub beta_sample: f64,
    pub d: usize,
    pub seed: u64,
    pub focal_alpha: f64,
    pub focal_beta: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let focal = FocalParams::default();
        Self {
            n: DEFAULT_DOWNSIZE,
            min_iou: DEFAULT_MIN_IOU,
            top_k: DEFAULT_TOP_K,
            score_thresh: DEFAULT_SCORE_THRESH,
            mask_thresh: DEFAULT_MASK_THRESH,
            k: DEFAULT_K,
            beta_sample: DEFAULT_BETA,
            d: DEFAULT_DENSITY_DIVISOR,
            seed: 0,
            focal_alpha: focal.alpha,
            focal_beta: focal.beta,
        }
    }
}

/// Config keys as they appear in files, with a one-line description.
pub const KEYS: [(&str, &str); 11] = [
    ("n", "heatmap downsize factor"),
    ("min_iou", "IOU the Gaussian radius must preserve"),
    ("top_k", "peaks kept per image when decoding"),
    ("score_thresh", "minimum peak score when decoding"),
    ("mask_thresh", "probability threshold for instance masks"),
    ("k", "point oversampling factor"),
    ("beta_sample", "fraction of N kept as most uncertain points"),
    ("D", "pixels per sampled point (N = H*W/D)"),
    ("seed", "seed for every random step"),
    ("focal_alpha", "focal loss exponent alpha"),
    ("focal_beta", "focal loss penalty-reduction exponent beta"),
];

/// Flags that override individual config keys.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Heatmap downsize factor [default: 4]
    #[arg(long, global = true)]
    pub n: Option<u32>,
    /// IOU the Gaussian radius must preserve [default: 0.7]
    #[arg(long, global = true)]
    pub min_iou: Option<f64>,
    /// Peaks kept per image when decoding [default: 100]
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    /// Minimum peak score when decoding [default: 0.05]
    #[arg(long, global = true)]
    pub score_thresh: Option<f64>,
    /// Probability threshold for instance masks [default: 0.5]
    #[arg(long, global = true)]
    pub mask_thresh: Option<f64>,
    /// Point oversampling factor k [default: 3]
    #[arg(long, global = true)]
    pub k: Option<f64>,
    /// Fraction of N kept as most uncertain points [default: 0.75]
    #[arg(long, global = true)]
    pub beta_sample: Option<f64>,
    /// Pixels per sampled point, N = H*W/D [default: 8]
    #[arg(long = "D", global = true, value_name = "D")]
    pub d: Option<usize>,
    /// Seed for every random step [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Focal loss exponent alpha [default: 2]
    #[arg(long, global = true)]
    pub focal_alpha: Option<f64>,
    /// Focal loss exponent beta [default: 4]
    #[arg(long, global = true)]
    pub focal_beta: Option<f64>,
}

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str) -> anyhow::Result<T> {
    raw.parse()
        .map_err(|_| UsageError(format!("{key}: cannot parse {raw:?}")).into())
}

impl RunConfig {
    fn set(&mut self, key: &str, raw: &str) -> anyhow::Result<()> {
        match key {
            "n" => self.n = parse_value(key, raw)?,
            "min_iou" => self.min_iou = parse_value(key, raw)?,
            "top_k" => self.top_k = parse_value(key, raw)?,
            "score_thresh" => self.score_thresh = parse_value(key, raw)?,
            "mask_thresh" => self.mask_thresh = parse_value(key, raw)?,
            "k" => self.k = parse_value(key, raw)?,
            "beta_sample" => self.beta_sample = parse_value(key, raw)?,
            "D" => self.d = parse_value(key, raw)?,
            "seed" => self.seed = parse_value(key, raw)?,
            "focal_alpha" => self.focal_alpha = parse_value(key, raw)?,
            "focal_beta" => self.focal_beta = parse_value(key, raw)?,
            _ => bail!(UsageError(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "n" => self.n.to_string(),
            "min_iou" => self.min_iou.to_string(),
            "top_k" => self.top_k.to_string(),
            "score_thresh" => self.score_thresh.to_string(),
            "mask_thresh" => self.mask_thresh.to_string(),
            "k" => self.k.to_string(),
            "beta_sample" => self.beta_sample.to_string(),
            "D" => self.d.to_string(),
            "seed" => self.seed.to_string(),
            "focal_alpha" => self.focal_alpha.to_string(),
            "focal_beta" => self.focal_beta.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and text
    /// after `#` are ignored; unknown and repeated keys are rejected.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> anyhow::Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = || format!("{origin}:{}", i + 1);
            let Some((key, value)) = line.split_once('=') else {
                bail!(UsageError(format!("{}: expected `key = value`, got {line:?}", at())));
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                bail!(UsageError(format!("{}: key {key:?} given twice", at())));
            }
            self.set(key, value.trim()).with_context(at)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> anyhow::Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn apply_args(&mut self, a: &ConfigArgs) {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = a.$field {
                    self.$field = v;
                }
            )*};
        }
        take!(n, min_iou, top_k, score_thresh, mask_thresh, k, beta_sample, d, seed, focal_alpha, focal_beta);
    }

    pub fn resolve(file: Option<&Path>, args: &ConfigArgs) -> anyhow::Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        cfg.apply_args(args);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let fail = |m: String| -> anyhow::Result<()> { Err(UsageError(m).into()) };
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if !(self.min_iou > 0.0 && self.min_iou < 1.0) {
            return fail(format!("min_iou must lie in (0, 1), got {}", self.min_iou));
        }
        if self.top_k == 0 {
            return fail("top_k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.score_thresh) {
            return fail(format!("score_thresh must lie in [0, 1], got {}", self.score_thresh));
        }
        if !(0.0..=1.0).contains(&self.mask_thresh) {
            return fail(format!("mask_thresh must lie in [0, 1], got {}", self.mask_thresh));
        }
        SamplingConfig::new(self.k, self.beta_sample, self.d, self.seed)?;
        FocalParams::new(self.focal_alpha, self.focal_beta)?;
        Ok(())
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            k: self.k,
            beta: self.beta_sample,
            density_divisor: self.d,
            seed: self.seed,
        }
    }

    pub fn focal(&self) -> FocalParams {
        FocalParams {
            alpha: self.focal_alpha,
            beta: self.focal_beta,
        }
    }

    /// Help section listing every config key with its default.
    pub fn keys_help() -> String {
        let defaults = RunConfig::default();
        let mut out = String::from("Config file keys (`key = value`, `#` starts a comment; flags override the file):\n");
        for (key, what) in KEYS {
            let _ = writeln!(out, "  {key:<13} {what} [default: {}]", defaults.get(key));
        }
        out.push_str("\nEnvironment:\n  CSK_THREADS   worker threads, 0 or unset for one per core\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\nn = 2\n  seed=7   # trailing\n\nD = 16\n", "t").unwrap();
        assert_eq!((cfg.n, cfg.seed, cfg.d), (2, 7, 16));
        cfg.apply_args(&ConfigArgs {
            seed: Some(9),
            ..ConfigArgs::default()
        });
        assert_eq!((cfg.n, cfg.seed), (2, 9));
    }

    #[test]
    fn rejects_unknown_repeated_and_malformed() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("speed = 3\n", "t").unwrap_err();
        assert!(err.chain().any(|e| e.is::<UsageError>()));
        assert!(format!("{err:#}").contains("t:1"));
        assert!(cfg.apply_text("n = 2\nn = 3\n", "t").is_err());
        assert!(cfg.apply_text("n 2\n", "t").is_err());
        assert!(cfg.apply_text("n = two\n", "t").is_err());
    }

    #[test]
    fn validation() {
        let bad = RunConfig {
            beta_sample: 5.0,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn help_lists_every_key_with_default() {
        let help = RunConfig::keys_help();
        let defaults = RunConfig::default();
        for (key, _) in KEYS {
            assert!(help.contains(&format!("  {key} ")), "{key}");
            assert!(help.contains(&format!("[default: {}]", defaults.get(key))));
        }
        assert!(help.contains("[default: 0.75]") && help.contains("[default: 8]"));
    }
}
