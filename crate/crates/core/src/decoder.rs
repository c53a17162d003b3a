//! Greedy transducer decoding and fast-skip decoding.
//!
//! Fast-skip decoding reads the CTC head's blank probability for every
//! encoded frame first. Frames with `cb(t) <= delta` trigger; each trigger
//! also rescues `w_left` frames before it and `w_right` frames after it.
//! Frames that are not triggered are consumed as blank without touching the
//! predictor or the joint network.
//!
//! Frame indices in traces and reports are 0-based encoded-frame indices.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::losses::{BlankPosterior, BLANK};
use crate::model::{EncodedUtterance, TinyTransducer};

/// CTC blank probability at or below which a frame counts as a spike.
pub const SPIKE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipConfig {
    pub delta: f64,
    pub w_left: usize,
    pub w_right: usize,
    pub max_symbols_per_frame: usize,
}

impl Default for SkipConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            w_left: 1,
            w_right: 1,
            max_symbols_per_frame: 5,
        }
    }
}

impl SkipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta {} outside [0,1]", self.delta)));
        }
        if self.max_symbols_per_frame == 0 {
            return Err(Error::Config("max_symbols_per_frame must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emission {
    pub token: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeTrace {
    pub tokens: Vec<Emission>,
    pub triggered: Vec<bool>,
    pub joint_calls: u64,
    pub pred_calls: u64,
    /// Joint evaluations whose argmax was blank.
    pub blank_calls: u64,
    pub wall_nanos: u64,
}

impl DecodeTrace {
    pub fn token_ids(&self) -> Vec<usize> {
        self.tokens.iter().map(|e| e.token).collect()
    }

    pub fn triggered_count(&self) -> usize {
        self.triggered.iter().filter(|&&b| b).count()
    }

    /// Blank transitions, counting every skipped frame as one blank.
    pub fn blank_transitions(&self) -> u64 {
        self.blank_calls + (self.triggered.len() - self.triggered_count()) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    FastSkip,
}

impl DecodeMode {
    pub fn name(self) -> &'static str {
        match self {
            DecodeMode::Greedy => "greedy",
            DecodeMode::FastSkip => "fastskip",
        }
    }
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodeMode::Greedy),
            "fastskip" | "fast-skip" => Ok(DecodeMode::FastSkip),
            other => Err(Error::Config(format!("unknown decode mode {other:?}"))),
        }
    }
}

/// Expanded trigger mask: frame `t` is triggered when some frame in
/// `[t - w_right, t + w_left]` has `cb <= delta`.
pub fn trigger_mask(cb: &BlankPosterior, cfg: &SkipConfig) -> Vec<bool> {
    let cb = cb.as_slice();
    let n = cb.len();
    let mut mask = vec![false; n];
    for (j, _) in cb.iter().enumerate().filter(|(_, &c)| c <= cfg.delta) {
        let lo = j.saturating_sub(cfg.w_left);
        let hi = (j + cfg.w_right).min(n.saturating_sub(1));
        mask[lo..=hi].iter_mut().for_each(|m| *m = true);
    }
    mask
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding restricted to the frames set in `mask`.
pub fn decode_with_mask(
    model: &TinyTransducer,
    encoded: &EncodedUtterance,
    mask: &[bool],
    max_symbols_per_frame: usize,
) -> DecodeTrace {
    let start = Instant::now();
    let (h, v) = (model.config.hidden, model.config.outputs());
    let mut trace = DecodeTrace {
        tokens: Vec::new(),
        triggered: mask.to_vec(),
        joint_calls: 0,
        pred_calls: 0,
        blank_calls: 0,
        wall_nanos: 0,
    };
    let mut prev = BLANK;
    let mut pred_proj: Option<Vec<f64>> = None;
    let mut hidden = vec![0.0; h];
    let mut logits = vec![0.0; v];
    for (t, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let enc_proj = model.project_encoder(encoded.enc_states.row(t));
        let mut emitted = 0;
        while emitted < max_symbols_per_frame {
            let pp = pred_proj.get_or_insert_with(|| {
                trace.pred_calls += 1;
                model.project_predictor(model.params.pred_embed.row(prev))
            });
            model.joint_logits_into(&enc_proj, pp, &mut hidden, &mut logits);
            trace.joint_calls += 1;
            let k = argmax(&logits);
            if k == BLANK {
                trace.blank_calls += 1;
                break;
            }
            trace.tokens.push(Emission { token: k, frame: t });
            prev = k;
            pred_proj = None;
            emitted += 1;
        }
    }
    trace.wall_nanos = start.elapsed().as_nanos() as u64;
    trace
}

pub fn greedy_decode(model: &TinyTransducer, encoded: &EncodedUtterance, max_symbols_per_frame: usize) -> DecodeTrace {
    decode_with_mask(model, encoded, &vec![true; encoded.frames()], max_symbols_per_frame)
}

/// The mask is computed inside the timed region.
pub fn fast_skip_decode(model: &TinyTransducer, encoded: &EncodedUtterance, cfg: &SkipConfig) -> DecodeTrace {
    let start = Instant::now();
    let mask = trigger_mask(&encoded.blank_posterior(), cfg);
    let mut trace = decode_with_mask(model, encoded, &mask, cfg.max_symbols_per_frame);
    trace.wall_nanos = start.elapsed().as_nanos() as u64;
    trace
}

pub fn decode(model: &TinyTransducer, encoded: &EncodedUtterance, mode: DecodeMode, cfg: &SkipConfig) -> DecodeTrace {
    match mode {
        DecodeMode::Greedy => greedy_decode(model, encoded, cfg.max_symbols_per_frame),
        DecodeMode::FastSkip => fast_skip_decode(model, encoded, cfg),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentFrame {
    pub frame: usize,
    pub cb: f64,
    pub triggered: bool,
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub frames: Vec<AlignmentFrame>,
    /// Emissions landing on frames with `cb <= 0.5`.
    pub emissions_on_spikes: usize,
    pub emissions: usize,
}

impl AlignmentReport {
    /// Fraction of emissions on spike frames; `None` when nothing was emitted.
    pub fn agreement(&self) -> Option<f64> {
        (self.emissions > 0).then(|| self.emissions_on_spikes as f64 / self.emissions as f64)
    }

    /// Tab-separated records `frame_index cb triggered tokens`, tokens
    /// comma-joined and possibly empty.
    pub fn to_records(&self) -> String {
        let mut out = String::from("# frame_index\tcb\ttriggered\temitted_tokens\n");
        for f in &self.frames {
            let tokens: Vec<String> = f.tokens.iter().map(|k| k.to_string()).collect();
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{}\t{}",
                f.frame,
                f.cb,
                u8::from(f.triggered),
                tokens.join(",")
            );
        }
        out
    }

    pub fn write_records(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(self.to_records().as_bytes())
    }
}

pub fn extract_alignment(trace: &DecodeTrace, cb: &BlankPosterior) -> AlignmentReport {
    let mut frames: Vec<AlignmentFrame> = cb
        .as_slice()
        .iter()
        .enumerate()
        .map(|(t, &c)| AlignmentFrame {
            frame: t,
            cb: c,
            triggered: trace.triggered.get(t).copied().unwrap_or(false),
            tokens: Vec::new(),
        })
        .collect();
    let mut on_spikes = 0;
    for e in &trace.tokens {
        frames[e.frame].tokens.push(e.token);
        if cb.as_slice()[e.frame] <= SPIKE_THRESHOLD {
            on_spikes += 1;
        }
    }
    AlignmentReport {
        frames,
        emissions_on_spikes: on_spikes,
        emissions: trace.tokens.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tensor::Matrix;

    fn post(cb: &[f64]) -> BlankPosterior {
        BlankPosterior::new(cb.to_vec()).unwrap()
    }

    fn cfg(delta: f64, w_left: usize, w_right: usize) -> SkipConfig {
        SkipConfig {
            delta,
            w_left,
            w_right,
            max_symbols_per_frame: 5,
        }
    }

    #[test]
    fn mask_all_blank_skips_everything() {
        assert_eq!(trigger_mask(&post(&[1.0; 4]), &cfg(0.99, 1, 1)), vec![false; 4]);
        assert_eq!(trigger_mask(&post(&[1.0; 4]), &cfg(1.0, 0, 0)), vec![true; 4]);
    }

    #[test]
    fn mask_window_expansion() {
        let cb = post(&[0.9, 0.2, 0.9, 0.9]);
        assert_eq!(trigger_mask(&cb, &cfg(0.5, 1, 1)), vec![true, true, true, false]);
        assert_eq!(trigger_mask(&cb, &cfg(0.5, 0, 0)), vec![false, true, false, false]);
        assert_eq!(trigger_mask(&cb, &cfg(0.5, 1, 0)), vec![true, true, false, false]);
        assert_eq!(trigger_mask(&cb, &cfg(0.5, 0, 2)), vec![false, true, true, true]);
    }

    #[test]
    fn mask_is_monotone_in_window() {
        let cb = post(&[0.9, 0.1, 0.95, 0.8, 0.3, 0.99, 0.99, 0.4]);
        let mut prev = 0;
        for w in 0..4 {
            let n = trigger_mask(&cb, &cfg(0.5, w, w)).iter().filter(|&&b| b).count();
            assert!(n >= prev);
            prev = n;
        }
    }

    /// Two encoded frames, hidden size 2. The joint sees
    /// `h = tanh(enc + pred)` and scores label 1 on `h[0]` and blank on
    /// `h[1]`. Frame 0 carries a strong label cue that the predictor cancels
    /// once label 1 has been emitted.
    fn forcing_model() -> (TinyTransducer, EncodedUtterance) {
        let config = ModelConfig {
            vocab_size: 1,
            feat_dim: 2,
            hidden: 2,
            context: 0,
            subsample: 1,
        };
        let mut m = TinyTransducer::zeros(config).unwrap();
        m.params.enc_w = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        m.params.join_w_a = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        m.params.join_w_p = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        // row 0 = start, row 1 = after label 1
        m.params.pred_embed = Matrix::from_vec(2, 2, vec![0.0, 0.0, -3.0, 0.0]).unwrap();
        // logits: blank = h[1] + 0.2, label = 3 h[0]
        m.params.out_w = Matrix::from_vec(2, 2, vec![0.0, 1.0, 3.0, 0.0]).unwrap();
        m.params.out_b = Matrix::from_vec(1, 2, vec![0.2, 0.0]).unwrap();
        let feats = Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let enc = m.encode(&feats).unwrap();
        (m, enc)
    }

    #[test]
    fn hand_trace_emits_on_first_frame() {
        let (m, enc) = forcing_model();
        let trace = greedy_decode(&m, &enc, 5);
        assert_eq!(trace.tokens, vec![Emission { token: 1, frame: 0 }]);
        assert_eq!(trace.joint_calls, 3);
        assert_eq!(trace.pred_calls, 2);
        assert!(trace.joint_calls >= trace.pred_calls);
    }

    #[test]
    fn always_blank_model() {
        let config = ModelConfig::default();
        let mut m = TinyTransducer::init(config, 3).unwrap();
        m.params.out_w.fill(0.0);
        m.params.out_b.fill(0.0);
        m.params.out_b.set(0, BLANK, 5.0);
        let feats = Matrix::from_fn(9, 8, |r, c| ((r * 3 + c) as f64).sin());
        let enc = m.encode(&feats).unwrap();
        let trace = greedy_decode(&m, &enc, 5);
        assert!(trace.tokens.is_empty());
        assert_eq!(trace.joint_calls, enc.frames() as u64);
    }

    #[test]
    fn skip_extremes() {
        let (m, enc) = forcing_model();
        let none = decode_with_mask(&m, &enc, &[false, false], 5);
        assert!(none.tokens.is_empty());
        assert_eq!((none.joint_calls, none.pred_calls), (0, 0));

        let greedy = greedy_decode(&m, &enc, 5);
        let full = fast_skip_decode(&m, &enc, &cfg(1.0, 0, 0));
        assert_eq!(full.tokens, greedy.tokens);
        assert_eq!(full.triggered, greedy.triggered);
        assert_eq!(
            (full.joint_calls, full.pred_calls, full.blank_calls),
            (greedy.joint_calls, greedy.pred_calls, greedy.blank_calls)
        );
    }

    #[test]
    fn symbol_cap_bounds_emissions() {
        let config = ModelConfig::default();
        let mut m = TinyTransducer::init(config, 4).unwrap();
        m.params.out_w.fill(0.0);
        m.params.out_b.fill(0.0);
        m.params.out_b.set(0, 3, 5.0);
        let feats = Matrix::from_fn(4, 8, |_, _| 0.1);
        let enc = m.encode(&feats).unwrap();
        let trace = greedy_decode(&m, &enc, 2);
        assert_eq!(trace.tokens.len(), 2 * enc.frames());
        assert_eq!(trace.joint_calls, 2 * enc.frames() as u64);
        assert_eq!(trace.blank_calls, 0);
    }

    #[test]
    fn alignment_agreement() {
        let trace = DecodeTrace {
            tokens: vec![Emission { token: 2, frame: 1 }, Emission { token: 5, frame: 1 }],
            triggered: vec![true, true, false],
            joint_calls: 4,
            pred_calls: 3,
            blank_calls: 2,
            wall_nanos: 0,
        };
        let report = extract_alignment(&trace, &post(&[0.9, 0.1, 0.8]));
        assert_eq!(report.agreement(), Some(1.0));
        assert_eq!(
            report.to_records(),
            "# frame_index\tcb\ttriggered\temitted_tokens\n\
             0\t0.900000\t1\t\n\
             1\t0.100000\t1\t2,5\n\
             2\t0.800000\t0\t\n"
        );
        let empty = DecodeTrace {
            tokens: vec![],
            ..trace
        };
        assert_eq!(extract_alignment(&empty, &post(&[0.9, 0.1, 0.8])).agreement(), None);
    }

    #[test]
    fn skip_config_validation() {
        assert!(cfg(1.2, 1, 1).validate().is_err());
        assert!(SkipConfig { max_symbols_per_frame: 0, ..SkipConfig::default() }.validate().is_err());
        assert!(SkipConfig::default().validate().is_ok());
        assert_eq!("fastskip".parse::<DecodeMode>().unwrap(), DecodeMode::FastSkip);
        assert!("beam".parse::<DecodeMode>().is_err());
    }
}
