//! A minimal transducer with explicit forward and backward passes.
//!
//! * encoder: raw frames stacked with `±context` neighbours (zero padded),
//!   strided by `subsample`, then `tanh(enc_w · x + enc_b)`;
//! * predictor: stateless, the embedding row of the previous token
//!   (row 0 doubles as the start symbol);
//! * joint: `out_w · tanh(join_w_a · enc + join_w_p · pred + join_b) + out_b`;
//! * CTC head: `ctc_w · enc + ctc_b`, applied to every encoded frame.
//!
//! Output index 0 is blank; labels are `1..=vocab_size`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, NodeProbs};
use crate::logspace::{log_softmax, log_softmax_in_place};
use crate::losses::{
    ctc_loss_and_grad, fsr_lattice_grads, fsr_surrogate, softmax_backward_pair, transducer_loss,
    BlankPosterior, FsrConfig, LatticeGrad, BLANK,
};
use crate::tensor::{axpy, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of non-blank labels.
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub hidden: usize,
    /// Frames of left and right context stacked into each encoder input.
    pub context: usize,
    pub subsample: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            feat_dim: 8,
            hidden: 32,
            context: 1,
            subsample: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.feat_dim == 0 || self.hidden == 0 || self.subsample == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Output width, labels plus blank.
    pub fn outputs(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn encoder_inputs(&self) -> usize {
        self.feat_dim * (2 * self.context + 1)
    }

    pub fn encoded_len(&self, raw_frames: usize) -> usize {
        raw_frames.div_ceil(self.subsample)
    }
}

/// Every trainable tensor. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub enc_w: Matrix,
    pub enc_b: Matrix,
    pub pred_embed: Matrix,
    pub join_w_a: Matrix,
    pub join_w_p: Matrix,
    pub join_b: Matrix,
    pub out_w: Matrix,
    pub out_b: Matrix,
    pub ctc_w: Matrix,
    pub ctc_b: Matrix,
}

/// Tensor names in checkpoint order.
pub const PARAMETER_NAMES: [&str; 10] = [
    "enc_w",
    "enc_b",
    "pred_embed",
    "join_w_a",
    "join_w_p",
    "join_b",
    "out_w",
    "out_b",
    "ctc_w",
    "ctc_b",
];

impl Parameters {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (h, v, x) = (cfg.hidden, cfg.outputs(), cfg.encoder_inputs());
        Self {
            enc_w: Matrix::zeros(h, x),
            enc_b: Matrix::zeros(1, h),
            pred_embed: Matrix::zeros(v, h),
            join_w_a: Matrix::zeros(h, h),
            join_w_p: Matrix::zeros(h, h),
            join_b: Matrix::zeros(1, h),
            out_w: Matrix::zeros(v, h),
            out_b: Matrix::zeros(1, v),
            ctc_w: Matrix::zeros(v, h),
            ctc_b: Matrix::zeros(1, v),
        }
    }

    pub fn tensors(&self) -> [&Matrix; 10] {
        [
            &self.enc_w,
            &self.enc_b,
            &self.pred_embed,
            &self.join_w_a,
            &self.join_w_p,
            &self.join_b,
            &self.out_w,
            &self.out_b,
            &self.ctc_w,
            &self.ctc_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 10] {
        [
            &mut self.enc_w,
            &mut self.enc_b,
            &mut self.pred_embed,
            &mut self.join_w_a,
            &mut self.join_w_p,
            &mut self.join_b,
            &mut self.out_w,
            &mut self.out_b,
            &mut self.ctc_w,
            &mut self.ctc_b,
        ]
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|m| m.as_slice())
            .map(|x| x * x)
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for m in self.tensors_mut() {
            m.as_mut_slice().iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, factor: f64, other: &Parameters) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(factor, src.as_slice(), dst.as_mut_slice());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|m| m.as_slice().iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyTransducer {
    pub config: ModelConfig,
    pub params: Parameters,
}

/// Encoder output for one utterance.
#[derive(Debug, Clone)]
pub struct EncodedUtterance {
    pub raw_frames: usize,
    pub subsample_factor: usize,
    /// Context-stacked encoder inputs, one row per encoded frame.
    pub inputs: Matrix,
    pub enc_states: Matrix,
    pub ctc_logprobs: Matrix,
}

impl EncodedUtterance {
    pub fn frames(&self) -> usize {
        self.enc_states.rows()
    }

    /// Per-frame blank probability of the CTC head.
    pub fn blank_posterior(&self) -> BlankPosterior {
        let cb = (0..self.frames())
            .map(|t| self.ctc_logprobs.get(t, BLANK).exp().clamp(0.0, 1.0))
            .collect();
        BlankPosterior::new(cb).expect("clamped probabilities")
    }
}

/// Everything the backward pass needs from a full-lattice forward pass.
#[derive(Debug, Clone)]
pub struct LatticeForward {
    pub encoded: EncodedUtterance,
    pub targets: Vec<usize>,
    pub node_probs: NodeProbs,
    pub blank_post: BlankPosterior,
    /// Joint hidden activations, `(T'·(U+1)) × H`.
    hidden: Matrix,
    /// Joint output distributions, `(T'·(U+1)) × (V+1)`.
    probs: Matrix,
    pub joint_evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub transducer: f64,
    pub ctc: f64,
    pub fsr_surrogate: f64,
    pub joint: f64,
}

impl TinyTransducer {
    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Parameters::zeros(&config);
        let (h, x) = (config.hidden as f64, config.encoder_inputs() as f64);
        let fan_ins = [x, x, 1.0, h, h, 2.0 * h, h, h, h, h];
        for (m, fan_in) in params.tensors_mut().into_iter().zip(fan_ins) {
            let s = 1.0 / fan_in.sqrt();
            m.as_mut_slice()
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-s..=s));
        }
        Ok(Self { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            params: Parameters::zeros(&config),
        })
    }

    pub fn encode(&self, features: &Matrix) -> Result<EncodedUtterance> {
        let cfg = &self.config;
        if features.rows() == 0 {
            return Err(Error::Empty("utterance has no frames".into()));
        }
        if features.cols() != cfg.feat_dim {
            return Err(Error::Shape(format!(
                "features have {} dims, model expects {}",
                features.cols(),
                cfg.feat_dim
            )));
        }
        let raw = features.rows();
        let frames = cfg.encoded_len(raw);
        let width = 2 * cfg.context + 1;
        let mut inputs = Matrix::zeros(frames, cfg.encoder_inputs());
        for i in 0..frames {
            let center = (i * cfg.subsample) as isize;
            let row = inputs.row_mut(i);
            for w in 0..width {
                let src = center + w as isize - cfg.context as isize;
                if src >= 0 && (src as usize) < raw {
                    row[w * cfg.feat_dim..(w + 1) * cfg.feat_dim]
                        .copy_from_slice(features.row(src as usize));
                }
            }
        }
        let p = &self.params;
        let mut enc_states = Matrix::zeros(frames, cfg.hidden);
        let mut ctc_logprobs = Matrix::zeros(frames, cfg.outputs());
        for i in 0..frames {
            let state = enc_states.row_mut(i);
            p.enc_w.matvec_into(inputs.row(i), state);
            for (s, b) in state.iter_mut().zip(p.enc_b.as_slice()) {
                *s = (*s + b).tanh();
            }
            let logits = ctc_logprobs.row_mut(i);
            p.ctc_w.matvec_into(enc_states.row(i), logits);
            axpy(1.0, p.ctc_b.as_slice(), logits);
            log_softmax_in_place(logits);
        }
        Ok(EncodedUtterance {
            raw_frames: raw,
            subsample_factor: cfg.subsample,
            inputs,
            enc_states,
            ctc_logprobs,
        })
    }

    /// Stateless predictor output for the previous token (0 = start).
    pub fn predict_step(&self, prev_token: usize) -> Result<&[f64]> {
        if prev_token >= self.config.outputs() {
            return Err(Error::Index(format!("token {prev_token} not in vocabulary")));
        }
        Ok(self.params.pred_embed.row(prev_token))
    }

    /// Acoustic half of the joint pre-activation, `join_w_a · enc + join_b`.
    pub fn project_encoder(&self, enc_state: &[f64]) -> Vec<f64> {
        let mut a = self.params.join_w_a.matvec(enc_state);
        axpy(1.0, self.params.join_b.as_slice(), &mut a);
        a
    }

    /// Linguistic half of the joint pre-activation, `join_w_p · pred`.
    pub fn project_predictor(&self, pred_state: &[f64]) -> Vec<f64> {
        self.params.join_w_p.matvec(pred_state)
    }

    /// Joint output logits from the two projections; `hidden` receives the
    /// tanh activations.
    pub fn joint_logits_into(&self, enc_proj: &[f64], pred_proj: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        for ((h, a), p) in hidden.iter_mut().zip(enc_proj).zip(pred_proj) {
            *h = (a + p).tanh();
        }
        self.params.out_w.matvec_into(hidden, logits);
        axpy(1.0, self.params.out_b.as_slice(), logits);
    }

    /// Log-distribution over blank and labels.
    pub fn joint_step(&self, enc_state: &[f64], pred_state: &[f64]) -> Result<Vec<f64>> {
        let h = self.config.hidden;
        if enc_state.len() != h || pred_state.len() != h {
            return Err(Error::Shape(format!("joint inputs must have {h} entries")));
        }
        let mut hidden = vec![0.0; h];
        let mut logits = vec![0.0; self.config.outputs()];
        self.joint_logits_into(
            &self.project_encoder(enc_state),
            &self.project_predictor(pred_state),
            &mut hidden,
            &mut logits,
        );
        Ok(log_softmax(&logits))
    }

    fn check_targets(&self, targets: &[usize]) -> Result<()> {
        if let Some(&bad) = targets
            .iter()
            .find(|&&k| k == BLANK || k > self.config.vocab_size)
        {
            return Err(Error::Index(format!("target token {bad} not a label")));
        }
        Ok(())
    }

    /// Evaluate the joint at every lattice node.
    pub fn build_lattice(&self, encoded: EncodedUtterance, targets: &[usize]) -> Result<LatticeForward> {
        self.check_targets(targets)?;
        let frames = encoded.frames();
        if frames == 0 {
            return Err(Error::Empty("no encoded frames".into()));
        }
        let target_len = targets.len();
        let (h, v) = (self.config.hidden, self.config.outputs());
        let nodes = frames * (target_len + 1);

        let enc_proj: Vec<Vec<f64>> = (0..frames)
            .map(|t| self.project_encoder(encoded.enc_states.row(t)))
            .collect();
        let pred_proj: Vec<Vec<f64>> = (0..=target_len)
            .map(|u| {
                let prev = if u == 0 { BLANK } else { targets[u - 1] };
                self.project_predictor(self.params.pred_embed.row(prev))
            })
            .collect();

        let mut hidden = Matrix::zeros(nodes, h);
        let mut probs = Matrix::zeros(nodes, v);
        let mut blank = Vec::with_capacity(nodes);
        let mut label = Vec::with_capacity(frames * target_len);
        for t in 0..frames {
            for u in 0..=target_len {
                let n = t * (target_len + 1) + u;
                let row = probs.row_mut(n);
                self.joint_logits_into(&enc_proj[t], &pred_proj[u], hidden.row_mut(n), row);
                log_softmax_in_place(row);
                blank.push(row[BLANK]);
                if u < target_len {
                    label.push(row[targets[u]]);
                }
                row.iter_mut().for_each(|x| *x = x.exp());
            }
        }
        let node_probs = NodeProbs::new(frames, target_len, blank, label)?;
        let blank_post = encoded.blank_posterior();
        Ok(LatticeForward {
            encoded,
            targets: targets.to_vec(),
            node_probs,
            blank_post,
            hidden,
            probs,
            joint_evaluations: nodes,
        })
    }

    pub fn forward(&self, features: &Matrix, targets: &[usize]) -> Result<LatticeForward> {
        self.build_lattice(self.encode(features)?, targets)
    }

    /// Reverse-mode pass through the fixed architecture.
    ///
    /// `ctc_logit_grad` is the (already weighted) gradient w.r.t. the CTC
    /// head's pre-softmax logits.
    pub fn backward(
        &self,
        fwd: &LatticeForward,
        lattice_grad: &LatticeGrad,
        ctc_logit_grad: Option<&Matrix>,
    ) -> Result<Parameters> {
        let cfg = &self.config;
        let p = &self.params;
        let enc = &fwd.encoded;
        let frames = enc.frames();
        let target_len = fwd.targets.len();
        let (h, v) = (cfg.hidden, cfg.outputs());
        if lattice_grad.frames() != frames || lattice_grad.target_len() != target_len {
            return Err(Error::Shape("lattice gradient does not match forward pass".into()));
        }
        if let Some(g) = ctc_logit_grad {
            if g.rows() != frames || g.cols() != v {
                return Err(Error::Shape("CTC gradient does not match forward pass".into()));
            }
        }

        let mut grads = Parameters::zeros(cfg);
        let mut d_enc_proj = Matrix::zeros(frames, h);
        let mut d_pred_proj = Matrix::zeros(target_len + 1, h);
        let mut dz = vec![0.0; v];
        let mut dh = vec![0.0; h];
        for t in 0..frames {
            for u in 0..=target_len {
                let n = t * (target_len + 1) + u;
                let label = (u < target_len).then(|| (fwd.targets[u], lattice_grad.d_label(t + 1, u)));
                softmax_backward_pair(fwd.probs.row(n), lattice_grad.d_blank(t + 1, u), label, &mut dz);
                let hidden = fwd.hidden.row(n);
                grads.out_w.add_outer(&dz, hidden);
                axpy(1.0, &dz, grads.out_b.as_mut_slice());
                dh.iter_mut().for_each(|x| *x = 0.0);
                p.out_w.matvec_t_acc(&dz, &mut dh);
                for (d, hv) in dh.iter_mut().zip(hidden) {
                    *d *= 1.0 - hv * hv;
                }
                axpy(1.0, &dh, d_enc_proj.row_mut(t));
                axpy(1.0, &dh, d_pred_proj.row_mut(u));
            }
        }

        let mut d_enc_states = Matrix::zeros(frames, h);
        for t in 0..frames {
            let da = d_enc_proj.row(t);
            axpy(1.0, da, grads.join_b.as_mut_slice());
            grads.join_w_a.add_outer(da, enc.enc_states.row(t));
            p.join_w_a.matvec_t_acc(da, d_enc_states.row_mut(t));
        }
        let mut d_embed_row = vec![0.0; h];
        for u in 0..=target_len {
            let prev = if u == 0 { BLANK } else { fwd.targets[u - 1] };
            let dp = d_pred_proj.row(u);
            grads.join_w_p.add_outer(dp, p.pred_embed.row(prev));
            d_embed_row.iter_mut().for_each(|x| *x = 0.0);
            p.join_w_p.matvec_t_acc(dp, &mut d_embed_row);
            axpy(1.0, &d_embed_row, grads.pred_embed.row_mut(prev));
        }

        if let Some(g) = ctc_logit_grad {
            for t in 0..frames {
                let dzc = g.row(t);
                grads.ctc_w.add_outer(dzc, enc.enc_states.row(t));
                axpy(1.0, dzc, grads.ctc_b.as_mut_slice());
                p.ctc_w.matvec_t_acc(dzc, d_enc_states.row_mut(t));
            }
        }

        let mut d_pre = vec![0.0; h];
        for t in 0..frames {
            for ((d, g), s) in d_pre
                .iter_mut()
                .zip(d_enc_states.row(t))
                .zip(enc.enc_states.row(t))
            {
                *d = g * (1.0 - s * s);
            }
            grads.enc_w.add_outer(&d_pre, enc.inputs.row(t));
            axpy(1.0, &d_pre, grads.enc_b.as_mut_slice());
        }
        Ok(grads)
    }

    /// Joint objective on one utterance and the gradient used for training:
    /// fast-skip-scaled transducer gradients plus `ctc_weight` times the CTC
    /// gradient.
    pub fn loss_and_grads(
        &self,
        features: &Matrix,
        targets: &[usize],
        fsr: &FsrConfig,
    ) -> Result<(LossBreakdown, Parameters)> {
        fsr.validate()?;
        let fwd = self.forward(features, targets)?;
        let lattice = Lattice::new(fwd.node_probs.clone())?;
        let transducer = transducer_loss(&lattice);
        let lattice_grad = fsr_lattice_grads(&lattice, &fwd.blank_post, fsr)?;
        let surrogate = fsr_surrogate(&lattice, &fwd.blank_post)?;
        let (ctc, ctc_grad) = if fsr.ctc_weight > 0.0 {
            let (loss, mut g) = ctc_loss_and_grad(&fwd.encoded.ctc_logprobs, targets)?;
            g.as_mut_slice().iter_mut().for_each(|x| *x *= fsr.ctc_weight);
            (loss, Some(g))
        } else {
            (0.0, None)
        };
        let grads = self.backward(&fwd, &lattice_grad, ctc_grad.as_ref())?;
        let breakdown = LossBreakdown {
            transducer,
            ctc,
            fsr_surrogate: surrogate,
            joint: crate::losses::joint_loss(transducer, ctc, surrogate, fsr),
        };
        Ok((breakdown, grads))
    }
}
