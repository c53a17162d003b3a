//! Synthetic speech-like utterances and the binary dataset container.
//!
//! Each label owns a fixed random prototype vector. An utterance renders its
//! tokens as runs of that prototype plus Gaussian noise, with optional
//! silence runs (noise around zero) between and around the tokens.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic   b"FSRDATA\0"
//! version u32
//! V       u32   number of labels
//! F       u32   feature dimension
//! count   u64
//! per utterance:
//!   id_len u32, id bytes (UTF-8)
//!   U      u32, U × u32 token ids (1..=V)
//!   T      u32, T × F × f64 features, row-major
//! ```

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::io::{write_atomically, Reader};
use crate::tensor::Matrix;

pub const DATASET_MAGIC: &[u8; 8] = b"FSRDATA\0";
pub const DATASET_VERSION: u32 = 1;

/// Utterances are regenerated until a CTC alignment exists at this frame rate.
pub const FEASIBILITY_SUBSAMPLE: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub min_target_len: usize,
    pub max_target_len: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    pub silence_gap_prob: f64,
    pub min_silence_frames: usize,
    pub max_silence_frames: usize,
    /// Silence frames before the first and after the last token.
    pub edge_silence_frames: usize,
    /// Whether a token may directly follow itself.
    pub allow_repeats: bool,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            feat_dim: 8,
            min_target_len: 3,
            max_target_len: 12,
            min_frames_per_token: 2,
            max_frames_per_token: 4,
            silence_gap_prob: 1.0,
            min_silence_frames: 10,
            max_silence_frames: 20,
            edge_silence_frames: 8,
            allow_repeats: false,
            noise_std: 0.3,
            seed: 1234,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 || self.feat_dim == 0 {
            return bad("vocab_size and feat_dim must be positive".into());
        }
        if self.min_target_len == 0 || self.min_target_len > self.max_target_len {
            return bad(format!(
                "target length range {}..={} invalid",
                self.min_target_len, self.max_target_len
            ));
        }
        if self.min_frames_per_token == 0 || self.min_frames_per_token > self.max_frames_per_token {
            return bad(format!(
                "frames-per-token range {}..={} invalid",
                self.min_frames_per_token, self.max_frames_per_token
            ));
        }
        if !self.allow_repeats && self.vocab_size < 2 && self.max_target_len > 1 {
            return bad("a single-token vocabulary needs allow_repeats".into());
        }
        if self.min_silence_frames > self.max_silence_frames {
            return bad(format!(
                "silence range {}..={} invalid",
                self.min_silence_frames, self.max_silence_frames
            ));
        }
        if !(0.0..=1.0).contains(&self.silence_gap_prob) {
            return bad(format!("silence_gap_prob {} outside [0,1]", self.silence_gap_prob));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad(format!("noise_std {} must be >= 0", self.noise_std));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: Matrix,
    /// Token ids in `1..=V`.
    pub targets: Vec<usize>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// One line per utterance: `id T U tokens…`.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            let tokens: Vec<String> = u.targets.iter().map(|k| k.to_string()).collect();
            out.push_str(&format!(
                "{} {} {} {}\n",
                u.id,
                u.frames(),
                u.targets.len(),
                tokens.join(" ")
            ));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(DATASET_MAGIC);
        buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        buf.extend_from_slice(&(self.feat_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.utterances.len() as u64).to_le_bytes());
        for u in &self.utterances {
            buf.extend_from_slice(&(u.id.len() as u32).to_le_bytes());
            buf.extend_from_slice(u.id.as_bytes());
            buf.extend_from_slice(&(u.targets.len() as u32).to_le_bytes());
            for &k in &u.targets {
                buf.extend_from_slice(&(k as u32).to_le_bytes());
            }
            buf.extend_from_slice(&(u.frames() as u32).to_le_bytes());
            for x in u.features.as_slice() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != DATASET_MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let vocab_size = r.u32()? as usize;
        let feat_dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut utterances = Vec::new();
        for _ in 0..count {
            let id_len = r.u32()? as usize;
            let id = String::from_utf8(r.take(id_len)?.to_vec())
                .map_err(|_| Error::Corrupt("utterance id is not UTF-8".into()))?;
            let target_len = r.u32()? as usize;
            let mut targets = Vec::with_capacity(target_len.min(r.remaining() / 4));
            for _ in 0..target_len {
                let k = r.u32()? as usize;
                if k == 0 || k > vocab_size {
                    return Err(Error::Corrupt(format!("token {k} outside 1..={vocab_size}")));
                }
                targets.push(k);
            }
            let frames = r.u32()? as usize;
            let n = frames
                .checked_mul(feat_dim)
                .ok_or_else(|| Error::Corrupt("frame count overflows".into()))?;
            if n.saturating_mul(8) > r.remaining() {
                return Err(Error::Corrupt("truncated feature block".into()));
            }
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                values.push(r.f64()?);
            }
            utterances.push(Utterance {
                id,
                features: Matrix::from_vec(frames, feat_dim, values)?,
                targets,
            });
        }
        r.finish()?;
        Ok(Self {
            vocab_size,
            feat_dim,
            utterances,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomically(path, |w| w.write_all(&self.to_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&crate::io::read_file(path)?)
    }
}

/// Holds the label prototypes shared by every split of one task.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: TaskConfig,
    prototypes: Matrix,
}

impl Generator {
    pub fn new(cfg: TaskConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let prototypes = Matrix::from_fn(cfg.vocab_size, cfg.feat_dim, |_, _| {
            StandardNormal.sample(&mut rng)
        });
        Ok(Self { cfg, prototypes })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.cfg
    }

    /// Prototype of label `k` (`1..=V`).
    pub fn prototype(&self, k: usize) -> &[f64] {
        self.prototypes.row(k - 1)
    }

    pub fn generate(&self, split: Split, n: usize) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Config("utterance count must be at least 1".into()));
        }
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(split.stream());
        let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let mut utterances = Vec::with_capacity(n);
        while utterances.len() < n {
            let u = self.sample(&mut rng, &noise, format!("{}-{:06}", split.name(), utterances.len()));
            let repeats = u.targets.windows(2).filter(|w| w[0] == w[1]).count();
            if u.frames().div_ceil(FEASIBILITY_SUBSAMPLE) < u.targets.len() + repeats {
                continue;
            }
            utterances.push(u);
        }
        Ok(Dataset {
            vocab_size: cfg.vocab_size,
            feat_dim: cfg.feat_dim,
            utterances,
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng, noise: &Normal<f64>, id: String) -> Utterance {
        let cfg = &self.cfg;
        let target_len = rng.random_range(cfg.min_target_len..=cfg.max_target_len);
        let mut targets: Vec<usize> = Vec::with_capacity(target_len);
        for _ in 0..target_len {
            let k = match targets.last() {
                Some(&prev) if !cfg.allow_repeats => {
                    let k = rng.random_range(1..cfg.vocab_size);
                    if k >= prev {
                        k + 1
                    } else {
                        k
                    }
                }
                _ => rng.random_range(1..=cfg.vocab_size),
            };
            targets.push(k);
        }
        // None renders silence
        let mut runs: Vec<(Option<usize>, usize)> = Vec::new();
        if cfg.edge_silence_frames > 0 {
            runs.push((None, cfg.edge_silence_frames));
        }
        for (i, &k) in targets.iter().enumerate() {
            if i > 0 && rng.random::<f64>() < cfg.silence_gap_prob {
                let len = rng.random_range(cfg.min_silence_frames..=cfg.max_silence_frames);
                if len > 0 {
                    runs.push((None, len));
                }
            }
            let len = rng.random_range(cfg.min_frames_per_token..=cfg.max_frames_per_token);
            runs.push((Some(k), len));
        }
        if cfg.edge_silence_frames > 0 {
            runs.push((None, cfg.edge_silence_frames));
        }
        let total: usize = runs.iter().map(|(_, len)| len).sum();
        let mut features = Matrix::zeros(total, cfg.feat_dim);
        let mut row = 0;
        for (token, len) in runs {
            for _ in 0..len {
                let frame = features.row_mut(row);
                if let Some(k) = token {
                    frame.copy_from_slice(self.prototype(k));
                }
                if cfg.noise_std > 0.0 {
                    for x in frame.iter_mut() {
                        *x += noise.sample(rng);
                    }
                }
                row += 1;
            }
        }
        Utterance {
            id,
            features,
            targets,
        }
    }
}

/// Generate one split from a task config.
pub fn generate(cfg: &TaskConfig, split: Split, n: usize) -> Result<Dataset> {
    Generator::new(cfg.clone())?.generate(split, n)
}
