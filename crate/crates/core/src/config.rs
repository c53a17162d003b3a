//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown and repeated
//! keys are errors. [`ExperimentConfig::to_text`] writes every key with its
//! description, so a resolved config is also the reference for the format.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::TaskConfig;
use crate::decoder::SkipConfig;
use crate::error::{Error, Result};
use crate::losses::FsrConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub train_utterances: usize,
    pub dev_utterances: usize,
    pub test_utterances: usize,
    pub hidden: usize,
    pub context: usize,
    pub subsample: usize,
    pub init_seed: u64,
    pub fsr: FsrConfig,
    pub skip: SkipConfig,
    pub train: TrainConfig,
    pub data_dir: String,
    pub out_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            task: TaskConfig::default(),
            train_utterances: 2000,
            dev_utterances: 200,
            test_utterances: 200,
            hidden: model.hidden,
            context: model.context,
            subsample: model.subsample,
            init_seed: 1,
            fsr: FsrConfig::default(),
            skip: SkipConfig::default(),
            train: TrainConfig::default(),
            data_dir: "data".into(),
            out_dir: "runs/default".into(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

macro_rules! keys {
    ($($key:literal => $c:ident . $($field:ident).+ , $doc:literal;)*) => {
        /// Every accepted key with its description, in file order.
        pub const KEYS: &[(&str, &str)] = &[$(($key, $doc)),*];

        fn get_key(cfg: &ExperimentConfig, key: &str) -> Option<String> {
            match key {
                $($key => { let $c = cfg; Some($c.$($field).+.to_string()) })*
                _ => None,
            }
        }

        fn set_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
            match key {
                $($key => { let $c = cfg; $c.$($field).+ = parse(key, value)?; })*
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
            Ok(())
        }
    };
}

keys! {
    "vocab_size" => c.task.vocab_size, "number of non-blank tokens";
    "feat_dim" => c.task.feat_dim, "feature dimension";
    "min_target_len" => c.task.min_target_len, "shortest target sequence";
    "max_target_len" => c.task.max_target_len, "longest target sequence";
    "min_frames_per_token" => c.task.min_frames_per_token, "shortest token rendering in frames";
    "max_frames_per_token" => c.task.max_frames_per_token, "longest token rendering in frames";
    "silence_gap_prob" => c.task.silence_gap_prob, "probability of a silence gap between tokens";
    "min_silence_frames" => c.task.min_silence_frames, "shortest silence gap";
    "max_silence_frames" => c.task.max_silence_frames, "longest silence gap";
    "edge_silence_frames" => c.task.edge_silence_frames, "silence before the first and after the last token";
    "allow_repeats" => c.task.allow_repeats, "whether a token may directly follow itself";
    "noise_std" => c.task.noise_std, "per-frame Gaussian noise";
    "data_seed" => c.task.seed, "seed for prototypes and utterances";
    "train_utterances" => c.train_utterances, "utterances in the train split";
    "dev_utterances" => c.dev_utterances, "utterances in the dev split";
    "test_utterances" => c.test_utterances, "utterances in the test split";
    "hidden" => c.hidden, "encoder, embedding and joint width";
    "context" => c.context, "frames of context on each side of the encoder input";
    "subsample" => c.subsample, "encoder frame stride";
    "init_seed" => c.init_seed, "parameter initialization seed";
    "lambda" => c.fsr.lambda, "fast-skip regularization weight";
    "ctc_weight" => c.fsr.ctc_weight, "weight of the CTC loss";
    "delta" => c.skip.delta, "skip-trigger threshold on the CTC blank probability";
    "w_left" => c.skip.w_left, "spike-window frames to the left of a trigger";
    "w_right" => c.skip.w_right, "spike-window frames to the right of a trigger";
    "max_symbols_per_frame" => c.skip.max_symbols_per_frame, "greedy emission cap per frame";
    "steps" => c.train.steps, "total SGD steps";
    "batch_size" => c.train.batch_size, "utterances per step";
    "learning_rate" => c.train.learning_rate, "SGD step size";
    "clip_norm" => c.train.clip_norm, "global gradient-norm clip, 0 disables";
    "train_seed" => c.train.seed, "minibatch sampling seed";
    "threads" => c.train.threads, "worker threads for training and evaluation";
    "data_dir" => c.data_dir, "directory holding the dataset splits";
    "out_dir" => c.out_dir, "directory for checkpoints, logs and reports";
}

impl ExperimentConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.task.vocab_size,
            feat_dim: self.task.feat_dim,
            hidden: self.hidden,
            context: self.context,
            subsample: self.subsample,
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        get_key(self, key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        set_key(self, key, value.trim())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(key.trim(), value)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model_config().validate()?;
        self.fsr.validate()?;
        self.skip.validate()?;
        self.train.validate()?;
        if self.train_utterances == 0 || self.dev_utterances == 0 || self.test_utterances == 0 {
            return Err(Error::Config("split sizes must be at least 1".into()));
        }
        Ok(())
    }

    /// Parse a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::io::read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# fsr {VERSION} resolved configuration\n");
        for (key, doc) in KEYS {
            let value = self.get(key).expect("listed key");
            let _ = writeln!(out, "\n# {doc}\n{key} = {value}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_text();
        crate::io::write_atomically(path, |w| std::io::Write::write_all(w, text.as_bytes()))
    }
}
