//! Training, mining and inference hyper-parameters, read from a plain
//! `key = value` text file with `#` comments and overridable key by key.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::ApMode;
use crate::inference::{InferenceConfig, ScoreScale};
use crate::mining::{AnnotationStrategy, ExpansionMode, MiningConfig};
use crate::model::ModelDims;
use crate::numeric::AdamConfig;
use crate::objectives::{LossTerms, LossWeights};

/// Named rungs of the ablation ladder: video labels only, then single
/// frames, then background mining, actionness and expansion added in turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ablation {
    Weak,
    Sf,
    Sfb,
    Sfba,
    Sfbae,
}

impl Ablation {
    pub const LADDER: [Ablation; 5] = [Self::Weak, Self::Sf, Self::Sfb, Self::Sfba, Self::Sfbae];

    pub fn name(self) -> &'static str {
        match self {
            Self::Weak => "weak",
            Self::Sf => "sf",
            Self::Sfb => "sfb",
            Self::Sfba => "sfba",
            Self::Sfbae => "sfbae",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::LADDER
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown preset {s:?} (weak, sf, sfb, sfba, sfbae)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Video loss weight.
    pub alpha: f64,
    /// Actionness loss weight.
    pub beta: f64,
    /// Background frames mined per labelled frame.
    pub eta: f64,
    pub radius: usize,
    pub xi: f64,
    pub expansion_mode: ExpansionMode,
    pub theta: f64,
    pub video_threshold: f64,
    pub k_ratio: usize,
    pub gap_fill: usize,
    pub score_scale: ScoreScale,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub hidden: usize,
    pub kernel_width: usize,
    pub seed: u64,
    pub strategy: AnnotationStrategy,
    pub use_background: bool,
    pub use_actionness: bool,
    pub use_expansion: bool,
    pub weak_only: bool,
    pub expanded_actionness: bool,
    pub eleven_point_ap: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 1.0,
            eta: 5.0,
            radius: 5,
            xi: 0.9,
            expansion_mode: ExpansionMode::StopOnFailure,
            theta: 0.65,
            video_threshold: 0.5,
            k_ratio: 8,
            gap_fill: 0,
            score_scale: ScoreScale::Probability,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            iterations: 500,
            hidden: 256,
            kernel_width: 3,
            seed: 0,
            strategy: AnnotationStrategy::HumanLike,
            use_background: true,
            use_actionness: true,
            use_expansion: true,
            weak_only: false,
            expanded_actionness: true,
            eleven_point_ap: false,
        }
    }
}

/// Turn a bare text value into the JSON scalar serde expects.
fn scalar(raw: &str) -> Value {
    if let Ok(b) = raw.parse::<bool>() {
        return Value::Bool(b);
    }
    if let Ok(u) = raw.parse::<u64>() {
        return Value::from(u);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return Value::from(i);
    }
    match raw.parse::<f64>() {
        Ok(f) if f.is_finite() => Value::from(f),
        _ => Value::String(raw.to_string()),
    }
}

/// Split `key = value` lines, dropping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Overwrite one field of a serde struct from its text form.
pub fn set_field<T: Serialize + DeserializeOwned>(current: &T, key: &str, raw: &str) -> Result<T> {
    let Value::Object(mut map) = serde_json::to_value(current).expect("config serializes") else {
        return Err(Error::config("only structs take key = value settings"));
    };
    if !map.contains_key(key) {
        return Err(Error::config(format!("unknown key {key:?}")));
    }
    map.insert(key.to_string(), scalar(raw));
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::config(format!("{key} = {raw}: {e}")))
}

/// Every field as `key = value` lines in alphabetical order.
pub fn to_pairs_text<T: Serialize>(value: &T) -> String {
    let Value::Object(map) = serde_json::to_value(value).expect("config serializes") else {
        return String::new();
    };
    let mut out = String::new();
    for (k, v) in map {
        let v = match v {
            Value::String(s) => s,
            other => other.to_string(),
        };
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

impl TrainConfig {
    pub fn preset(ablation: Ablation) -> Self {
        let mut c = TrainConfig::default();
        c.apply_preset(ablation);
        c
    }

    pub fn apply_preset(&mut self, ablation: Ablation) {
        let rung = Ablation::LADDER.iter().position(|&a| a == ablation).unwrap();
        self.weak_only = rung == 0;
        self.use_background = rung >= 2;
        self.use_actionness = rung >= 3;
        self.use_expansion = rung >= 4;
    }

    /// The ladder rung these flags describe, if any.
    pub fn ablation(&self) -> Option<Ablation> {
        Ablation::LADDER.into_iter().find(|&a| {
            let mut c = self.clone();
            c.apply_preset(a);
            c == *self
        })
    }

    /// Apply `key=value` assignments in order. `preset` sets the four
    /// ablation flags; later keys override it.
    pub fn with_overrides<K: AsRef<str>, V: AsRef<str>>(&self, pairs: impl IntoIterator<Item = (K, V)>) -> Result<Self> {
        let mut current = self.clone();
        for (key, raw) in pairs {
            let (key, raw) = (key.as_ref().trim(), raw.as_ref().trim());
            if key == "preset" {
                current.apply_preset(raw.parse()?);
            } else {
                current = set_field(&current, key, raw)?;
            }
        }
        current.validate()?;
        Ok(current)
    }

    /// Parse the text format on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        TrainConfig::default().with_overrides(parse_pairs(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    /// Every key in alphabetical order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        to_pairs_text(self)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("eta", self.eta),
            ("lr", self.lr),
            ("gap_fill", self.gap_fill as f64),
        ];
        for (name, v) in rates {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return Err(Error::config(format!("xi must lie in (0, 1], got {}", self.xi)));
        }
        if !self.theta.is_finite() || !(0.0..=1.0).contains(&self.video_threshold) {
            return Err(Error::config("theta must be finite and video_threshold in [0, 1]"));
        }
        if self.k_ratio == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::config("k_ratio, batch_size and hidden must be at least 1"));
        }
        if self.kernel_width % 2 == 0 {
            return Err(Error::config(format!("kernel_width must be odd, got {}", self.kernel_width)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::config("adam betas must lie in [0, 1) and eps be positive"));
        }
        Ok(())
    }

    pub fn model_dims(&self, input_dim: usize, num_classes: usize) -> ModelDims {
        ModelDims {
            input_dim,
            hidden: self.hidden,
            num_classes,
            kernel_width: self.kernel_width,
        }
    }

    pub fn mining(&self) -> MiningConfig {
        MiningConfig {
            expand: self.use_expansion && !self.weak_only,
            radius: self.radius,
            xi: self.xi,
            mode: self.expansion_mode,
            background: self.use_background && !self.weak_only,
            eta: self.eta,
        }
    }

    pub fn loss_terms(&self) -> LossTerms {
        let frames = !self.weak_only;
        LossTerms {
            frame: frames,
            background: frames && self.use_background,
            actionness: frames && self.use_actionness,
            video: true,
            expanded_actionness: self.expanded_actionness,
        }
    }

    pub fn loss_weights(&self, num_classes: usize) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            num_classes,
        }
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            theta: self.theta,
            video_threshold: self.video_threshold,
            k_ratio: self.k_ratio,
            gap_fill: self.gap_fill,
            scale: self.score_scale,
            use_actionness: self.use_actionness && !self.weak_only,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn ap_mode(&self) -> ApMode {
        if self.eleven_point_ap {
            ApMode::ElevenPoint
        } else {
            ApMode::Staircase
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.alpha, c.beta, c.eta, c.radius, c.xi), (1.0, 1.0, 5.0, 5, 0.9));
        assert_eq!((c.theta, c.video_threshold, c.k_ratio), (0.65, 0.5, 8));
        assert_eq!((c.lr, c.batch_size, c.iterations), (1e-3, 32, 500));
        assert_eq!(c.ablation(), Some(Ablation::Sfbae));
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let c = TrainConfig::parse(
            "# ladder run\n preset = sfb\neta = 2.5\nstrategy = uniform   # annotator\nexpansion_mode=scan_all\nseed=12\n",
        )
        .unwrap();
        assert_eq!(c.ablation(), Some(Ablation::Sfb));
        assert_eq!((c.eta, c.seed), (2.5, 12));
        assert_eq!(c.strategy, AnnotationStrategy::Uniform);
        assert_eq!(c.expansion_mode, ExpansionMode::ScanAll);
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn integer_for_float_key() {
        let c = TrainConfig::parse("alpha = 0\nbeta = 2").unwrap();
        assert_eq!((c.alpha, c.beta), (0.0, 2.0));
    }

    #[test]
    fn bad_input_is_a_config_error() {
        for text in [
            "nonsense = 1",
            "eta = -1",
            "xi = 0",
            "kernel_width = 4",
            "batch_size = 0",
            "strategy = psychic",
            "preset = strong",
            "just words",
            "use_background = maybe",
        ] {
            assert!(matches!(TrainConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn ladder_flags() {
        let weak = TrainConfig::preset(Ablation::Weak);
        let t = weak.loss_terms();
        assert!(!t.frame && !t.background && !t.actionness && t.video);
        assert!(!weak.mining().expand && !weak.mining().background);
        assert!(!weak.inference().use_actionness);

        let sf = TrainConfig::preset(Ablation::Sf);
        assert!(sf.loss_terms().frame && !sf.loss_terms().background && !sf.mining().expand);
        let sfba = TrainConfig::preset(Ablation::Sfba);
        assert!(sfba.loss_terms().actionness && !sfba.mining().expand);
        assert!(sfba.inference().use_actionness);
        for a in Ablation::LADDER {
            assert_eq!(TrainConfig::preset(a).ablation(), Some(a));
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
    }
}
