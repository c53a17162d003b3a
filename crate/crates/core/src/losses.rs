//! Loss values and lattice-facing gradients.
//!
//! The fast-skip regularizer is applied through its gradient rule: every
//! linear-domain lattice gradient is the classic transducer gradient scaled by
//! `1 + lambda * c`, where `c` is the CTC head's non-blank probability for
//! label moves and its blank probability for blank moves at that frame.

use crate::error::{Error, Result};
use crate::lattice::{node_posterior_split, sequence_logprob, Lattice};
use crate::logspace::{log_add, log_sum_exp, LOG_ZERO};
use crate::tensor::Matrix;

/// Index of the blank symbol in every output distribution.
pub const BLANK: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsrConfig {
    /// Regularization weight; `0` disables it.
    pub lambda: f64,
    /// Coefficient of the CTC loss in the joint objective.
    pub ctc_weight: f64,
}

impl Default for FsrConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            ctc_weight: 1.0,
        }
    }
}

impl FsrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("fsr lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.ctc_weight >= 0.0) || !self.ctc_weight.is_finite() {
            return Err(Error::Config(format!(
                "ctc weight must be >= 0, got {}",
                self.ctc_weight
            )));
        }
        Ok(())
    }
}

/// Per-frame blank probability of the CTC head.
#[derive(Debug, Clone, PartialEq)]
pub struct BlankPosterior {
    cb: Vec<f64>,
}

impl BlankPosterior {
    pub fn new(cb: Vec<f64>) -> Result<Self> {
        if let Some((t, v)) = cb.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("blank probability {v} at frame {t} outside [0,1]")));
        }
        Ok(Self { cb })
    }

    pub fn len(&self) -> usize {
        self.cb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cb.is_empty()
    }

    /// Blank probability at 1-based frame `t`.
    #[inline]
    pub fn cb(&self, t: usize) -> f64 {
        self.cb[t - 1]
    }

    #[inline]
    pub fn cnb(&self, t: usize) -> f64 {
        1.0 - self.cb(t)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.cb
    }
}

/// Gradient of the loss w.r.t. the linear-domain blank and target-label
/// probabilities at every lattice node.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGrad {
    frames: usize,
    target_len: usize,
    d_blank: Vec<f64>,
    d_label: Vec<f64>,
}

impl LatticeGrad {
    pub fn zeros(frames: usize, target_len: usize) -> Self {
        Self {
            frames,
            target_len,
            d_blank: vec![0.0; frames * (target_len + 1)],
            d_label: vec![0.0; frames * target_len],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    #[inline]
    pub fn d_blank(&self, t: usize, u: usize) -> f64 {
        self.d_blank[(t - 1) * (self.target_len + 1) + u]
    }

    #[inline]
    pub fn d_label(&self, t: usize, u: usize) -> f64 {
        if u >= self.target_len {
            return 0.0;
        }
        self.d_label[(t - 1) * self.target_len + u]
    }

    pub fn blank_entries(&self) -> &[f64] {
        &self.d_blank
    }

    pub fn label_entries(&self) -> &[f64] {
        &self.d_label
    }
}

/// `-ln P(y|x)`.
pub fn transducer_loss(lattice: &Lattice) -> f64 {
    -sequence_logprob(lattice)
}

/// Lattice gradients with the fast-skip scaling applied.
///
/// With `lambda = 0` these are the gradients of `-ln P(y|x)`. At the terminal
/// node the blank gradient is `-(1 + lambda cb(T)) alpha(T,U) / P(y|x)`.
pub fn fsr_lattice_grads(
    lattice: &Lattice,
    blank_post: &BlankPosterior,
    cfg: &FsrConfig,
) -> Result<LatticeGrad> {
    cfg.validate()?;
    let (frames, target_len) = (lattice.frames(), lattice.target_len());
    if blank_post.len() != frames {
        return Err(Error::Shape(format!(
            "blank posterior has {} frames, lattice has {frames}",
            blank_post.len()
        )));
    }
    let logp = sequence_logprob(lattice);
    let mut grad = LatticeGrad::zeros(frames, target_len);
    for t in 1..=frames {
        let blank_scale = 1.0 + cfg.lambda * blank_post.cb(t);
        let label_scale = 1.0 + cfg.lambda * blank_post.cnb(t);
        for u in 0..=target_len {
            let alpha = lattice.alpha(t, u);
            let beta_next = if t == frames && u == target_len {
                0.0
            } else {
                lattice.beta(t + 1, u)
            };
            grad.d_blank[(t - 1) * (target_len + 1) + u] =
                -blank_scale * (alpha + beta_next - logp).exp();
            if u < target_len {
                grad.d_label[(t - 1) * target_len + u] =
                    -label_scale * (alpha + lattice.beta(t, u + 1) - logp).exp();
            }
        }
    }
    Ok(grad)
}

/// Monitoring value for the regularizer:
/// `sum over nodes of cnb(t) P(nb|t,u)/P + cb(t) P(b|t,u)/P`.
pub fn fsr_surrogate(lattice: &Lattice, blank_post: &BlankPosterior) -> Result<f64> {
    let (frames, target_len) = (lattice.frames(), lattice.target_len());
    if blank_post.len() != frames {
        return Err(Error::Shape(format!(
            "blank posterior has {} frames, lattice has {frames}",
            blank_post.len()
        )));
    }
    let logp = sequence_logprob(lattice);
    let mut total = 0.0;
    for t in 1..=frames {
        for u in 0..=target_len {
            let (nb, b) = node_posterior_split(lattice, t, u)?;
            total += blank_post.cnb(t) * (nb - logp).exp() + blank_post.cb(t) * (b - logp).exp();
        }
    }
    Ok(total)
}

/// Softmax backward at one node where only the blank and one target label
/// carry a nonzero upstream gradient. `out` receives `dL/dz`.
#[inline]
pub fn softmax_backward_pair(
    probs: &[f64],
    d_blank: f64,
    label: Option<(usize, f64)>,
    out: &mut [f64],
) {
    let mut s = d_blank * probs[BLANK];
    if let Some((k, g)) = label {
        s += g * probs[k];
    }
    for (o, &p) in out.iter_mut().zip(probs) {
        *o = -p * s;
    }
    out[BLANK] += d_blank * probs[BLANK];
    if let Some((k, g)) = label {
        out[k] += g * probs[k];
    }
}

/// Full per-node output distributions (linear domain), `T × (U+1) × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTable {
    frames: usize,
    target_len: usize,
    width: usize,
    data: Vec<f64>,
}

impl NodeTable {
    pub fn zeros(frames: usize, target_len: usize, width: usize) -> Self {
        Self {
            frames,
            target_len,
            width,
            data: vec![0.0; frames * (target_len + 1) * width],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    fn offset(&self, t: usize, u: usize) -> usize {
        ((t - 1) * (self.target_len + 1) + u) * self.width
    }

    pub fn node(&self, t: usize, u: usize) -> &[f64] {
        let o = self.offset(t, u);
        &self.data[o..o + self.width]
    }

    pub fn node_mut(&mut self, t: usize, u: usize) -> &mut [f64] {
        let o = self.offset(t, u);
        &mut self.data[o..o + self.width]
    }
}

/// Compose lattice gradients with the per-node softmax Jacobian.
///
/// `targets[u]` is the vocabulary index of `y_{u+1}`.
pub fn chain_to_logits(
    lattice_grad: &LatticeGrad,
    node_softmax: &NodeTable,
    targets: &[usize],
) -> Result<NodeTable> {
    let (frames, target_len) = (lattice_grad.frames(), lattice_grad.target_len());
    if node_softmax.frames != frames || node_softmax.target_len != target_len {
        return Err(Error::Shape("node distributions do not match lattice gradient".into()));
    }
    if targets.len() != target_len {
        return Err(Error::Shape(format!(
            "{} targets for a lattice with U = {target_len}",
            targets.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&k| k == BLANK || k >= node_softmax.width) {
        return Err(Error::Index(format!("target label {bad} invalid")));
    }
    let mut out = NodeTable::zeros(frames, target_len, node_softmax.width);
    for t in 1..=frames {
        for u in 0..=target_len {
            let label = (u < target_len).then(|| (targets[u], lattice_grad.d_label(t, u)));
            softmax_backward_pair(
                node_softmax.node(t, u),
                lattice_grad.d_blank(t, u),
                label,
                out.node_mut(t, u),
            );
        }
    }
    Ok(out)
}

/// Blank-interleaved extended label sequence `[∅, y1, ∅, y2, …, ∅]`.
fn extended_labels(y: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * y.len() + 1);
    ext.push(BLANK);
    for &k in y {
        ext.push(k);
        ext.push(BLANK);
    }
    ext
}

fn check_ctc_inputs(logprobs: &Matrix, y: &[usize]) -> Result<()> {
    if logprobs.rows() == 0 {
        return Err(Error::Empty("CTC input has no frames".into()));
    }
    if let Some(&bad) = y.iter().find(|&&k| k == BLANK || k >= logprobs.cols()) {
        return Err(Error::Index(format!("CTC label {bad} invalid")));
    }
    let repeats = y.windows(2).filter(|w| w[0] == w[1]).count();
    if logprobs.rows() < y.len() + repeats {
        return Err(Error::Infeasible {
            frames: logprobs.rows(),
            target_len: y.len(),
        });
    }
    Ok(())
}

/// CTC forward and backward tables over the extended sequence.
struct CtcTables {
    ext: Vec<usize>,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    logp: f64,
}

fn ctc_skip_allowed(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

fn ctc_tables(logprobs: &Matrix, y: &[usize]) -> Result<CtcTables> {
    check_ctc_inputs(logprobs, y)?;
    let ext = extended_labels(y);
    let frames = logprobs.rows();
    let states = ext.len();

    // alpha[t][s]: prefix mass ending in state s at frame t, emission at t included.
    let mut alpha = vec![vec![LOG_ZERO; states]; frames];
    alpha[0][0] = logprobs.get(0, ext[0]);
    if states > 1 {
        alpha[0][1] = logprobs.get(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..states {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, alpha[t - 1][s - 1]);
            }
            if ctc_skip_allowed(&ext, s) {
                acc = log_add(acc, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = acc + logprobs.get(t, ext[s]);
        }
    }

    // beta[t][s]: suffix mass after frame t given state s at frame t.
    let mut beta = vec![vec![LOG_ZERO; states]; frames];
    beta[frames - 1][states - 1] = 0.0;
    if states > 1 {
        beta[frames - 1][states - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let mut acc = beta[t + 1][s] + logprobs.get(t + 1, ext[s]);
            if s + 1 < states {
                acc = log_add(acc, beta[t + 1][s + 1] + logprobs.get(t + 1, ext[s + 1]));
            }
            if s + 2 < states && ctc_skip_allowed(&ext, s + 2) {
                acc = log_add(acc, beta[t + 1][s + 2] + logprobs.get(t + 1, ext[s + 2]));
            }
            beta[t][s] = acc;
        }
    }

    let last = &alpha[frames - 1];
    let logp = if states > 1 {
        log_add(last[states - 1], last[states - 2])
    } else {
        last[0]
    };
    if logp == LOG_ZERO {
        return Err(Error::Infeasible {
            frames,
            target_len: y.len(),
        });
    }
    Ok(CtcTables {
        ext,
        alpha,
        beta,
        logp,
    })
}

/// `ln P_CTC(y|x)` from per-frame log-softmax rows (blank at index 0).
pub fn ctc_forward(ctc_frame_logprobs: &Matrix, y: &[usize]) -> Result<f64> {
    Ok(ctc_tables(ctc_frame_logprobs, y)?.logp)
}

/// `-ln P_CTC(y|x)` and its gradient w.r.t. the pre-softmax frame logits.
pub fn ctc_loss_and_grad(ctc_frame_logprobs: &Matrix, y: &[usize]) -> Result<(f64, Matrix)> {
    let tables = ctc_tables(ctc_frame_logprobs, y)?;
    let (frames, width) = (ctc_frame_logprobs.rows(), ctc_frame_logprobs.cols());
    let mut grad = Matrix::zeros(frames, width);
    let mut occupancy = vec![Vec::with_capacity(4); width];
    for t in 0..frames {
        occupancy.iter_mut().for_each(Vec::clear);
        for (s, &k) in tables.ext.iter().enumerate() {
            let g = tables.alpha[t][s] + tables.beta[t][s];
            if g != LOG_ZERO {
                occupancy[k].push(g);
            }
        }
        let row = grad.row_mut(t);
        for k in 0..width {
            let p = ctc_frame_logprobs.get(t, k).exp();
            let post = if occupancy[k].is_empty() {
                0.0
            } else {
                (log_sum_exp(&occupancy[k]) - tables.logp).exp()
            };
            row[k] = p - post;
        }
    }
    Ok((-tables.logp, grad))
}

/// Gradient of `-ln P_CTC(y|x)` w.r.t. the frame logits.
pub fn ctc_grad(ctc_frame_logprobs: &Matrix, y: &[usize]) -> Result<Matrix> {
    Ok(ctc_loss_and_grad(ctc_frame_logprobs, y)?.1)
}

/// Reported joint objective: `ctc_weight * L_ctc + L_transducer + lambda * L_fsr`.
pub fn joint_loss(transducer: f64, ctc: f64, fsr_surrogate: f64, cfg: &FsrConfig) -> f64 {
    cfg.ctc_weight * ctc + transducer + cfg.lambda * fsr_surrogate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::NodeProbs;
    use crate::logspace::log_softmax;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random node logits for a `T × (U+1)` lattice over `vocab` symbols.
    fn random_logits(rng: &mut impl Rng, frames: usize, target_len: usize, vocab: usize) -> Vec<Vec<f64>> {
        (0..frames * (target_len + 1))
            .map(|_| (0..vocab).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    fn lattice_from_logits(logits: &[Vec<f64>], frames: usize, targets: &[usize]) -> (Lattice, NodeTable) {
        let target_len = targets.len();
        let width = logits[0].len();
        let mut table = NodeTable::zeros(frames, target_len, width);
        let lp: Vec<Vec<f64>> = logits.iter().map(|z| log_softmax(z)).collect();
        for t in 1..=frames {
            for u in 0..=target_len {
                let idx = (t - 1) * (target_len + 1) + u;
                for (dst, &src) in table.node_mut(t, u).iter_mut().zip(&lp[idx]) {
                    *dst = src.exp();
                }
            }
        }
        let np = NodeProbs::from_fn(
            frames,
            target_len,
            |t, u| lp[(t - 1) * (target_len + 1) + u][BLANK],
            |t, u| lp[(t - 1) * (target_len + 1) + u][targets[u]],
        )
        .unwrap();
        (Lattice::new(np).unwrap(), table)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn loss_zero_for_certain_blank() {
        let np = NodeProbs::new(1, 0, vec![0.0], vec![]).unwrap();
        assert_eq!(transducer_loss(&Lattice::new(np).unwrap()), 0.0);
    }

    #[test]
    fn loss_uniform_two_by_one() {
        let h = 0.5f64.ln();
        let np = NodeProbs::from_fn(2, 1, |_, _| h, |_, _| h).unwrap();
        let loss = transducer_loss(&Lattice::new(np).unwrap());
        assert!((loss - (-(0.25f64).ln())).abs() < 1e-14);
    }

    #[test]
    fn negative_lambda_rejected() {
        let h = 0.5f64.ln();
        let lattice = Lattice::new(NodeProbs::from_fn(2, 1, |_, _| h, |_, _| h).unwrap()).unwrap();
        let post = BlankPosterior::new(vec![0.5, 0.5]).unwrap();
        let cfg = FsrConfig { lambda: -0.1, ctc_weight: 1.0 };
        assert!(matches!(fsr_lattice_grads(&lattice, &post, &cfg), Err(Error::Config(_))));
        assert!(BlankPosterior::new(vec![1.5]).is_err());
    }

    #[test]
    fn lambda_zero_matches_finite_differences_on_probabilities() {
        // Perturb each linear-domain node probability independently; the
        // lattice is treated as a polynomial in those probabilities.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (frames, target_len) = (3, 2);
        let blank: Vec<f64> = (0..frames * 3).map(|_| rng.random_range(0.1..0.9)).collect();
        let label: Vec<f64> = (0..frames * 2).map(|_| rng.random_range(0.1..0.9)).collect();
        let loss = |b: &[f64], l: &[f64]| {
            let np = NodeProbs::new(
                frames,
                target_len,
                b.iter().map(|p| p.ln()).collect(),
                l.iter().map(|p| p.ln()).collect(),
            )
            .unwrap();
            transducer_loss(&Lattice::new(np).unwrap())
        };
        let np = NodeProbs::new(
            frames,
            target_len,
            blank.iter().map(|p| p.ln()).collect(),
            label.iter().map(|p| p.ln()).collect(),
        )
        .unwrap();
        let lattice = Lattice::new(np).unwrap();
        let post = BlankPosterior::new(vec![0.3; frames]).unwrap();
        let g = fsr_lattice_grads(&lattice, &post, &FsrConfig { lambda: 0.0, ctc_weight: 1.0 }).unwrap();
        let h = 1e-5;
        for i in 0..blank.len() {
            let (mut up, mut dn) = (blank.clone(), blank.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (loss(&up, &label) - loss(&dn, &label)) / (2.0 * h);
            assert!(rel_err(fd, g.blank_entries()[i]) < 1e-4, "blank {i}: {fd} vs {}", g.blank_entries()[i]);
        }
        for i in 0..label.len() {
            let (mut up, mut dn) = (label.clone(), label.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (loss(&blank, &up) - loss(&blank, &dn)) / (2.0 * h);
            assert!(rel_err(fd, g.label_entries()[i]) < 1e-4, "label {i}");
        }
    }

    #[test]
    fn full_blank_posterior_scales_only_blank() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = random_logits(&mut rng, 3, 2, 4);
        let (lattice, _) = lattice_from_logits(&logits, 3, &[1, 2]);
        let post = BlankPosterior::new(vec![1.0; 3]).unwrap();
        let g0 = fsr_lattice_grads(&lattice, &post, &FsrConfig { lambda: 0.0, ctc_weight: 1.0 }).unwrap();
        let g1 = fsr_lattice_grads(&lattice, &post, &FsrConfig { lambda: 0.01, ctc_weight: 1.0 }).unwrap();
        for (a, b) in g0.blank_entries().iter().zip(g1.blank_entries()) {
            assert!((b - 1.01 * a).abs() <= 1e-15 * a.abs().max(1e-300));
        }
        assert_eq!(g0.label_entries(), g1.label_entries());
    }

    #[test]
    fn scaling_law_with_random_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = random_logits(&mut rng, 4, 2, 5);
        let (lattice, _) = lattice_from_logits(&logits, 4, &[3, 1]);
        let post = BlankPosterior::new((0..4).map(|_| rng.random::<f64>()).collect()).unwrap();
        let g0 = fsr_lattice_grads(&lattice, &post, &FsrConfig { lambda: 0.0, ctc_weight: 1.0 }).unwrap();
        let lambda = 0.01;
        let g = fsr_lattice_grads(&lattice, &post, &FsrConfig { lambda, ctc_weight: 1.0 }).unwrap();
        for t in 1..=4 {
            for u in 0..=2 {
                let want = (1.0 + lambda * post.cb(t)) * g0.d_blank(t, u);
                assert!(rel_err(g.d_blank(t, u), want) < 1e-12);
                assert!(g.d_blank(t, u) <= 0.0);
                if u < 2 {
                    let want = (1.0 + lambda * post.cnb(t)) * g0.d_label(t, u);
                    assert!(rel_err(g.d_label(t, u), want) < 1e-12);
                    assert!(g.d_label(t, u) <= 0.0);
                }
            }
        }
    }

    #[test]
    fn softmax_jacobian_by_hand() {
        let mut grad = LatticeGrad::zeros(1, 0);
        grad.d_blank[0] = 1.0;
        let mut table = NodeTable::zeros(1, 0, 2);
        table.node_mut(1, 0).copy_from_slice(&[0.5, 0.5]);
        let out = chain_to_logits(&grad, &table, &[]).unwrap();
        assert_eq!(out.node(1, 0), &[0.25, -0.25]);

        let zero = chain_to_logits(&LatticeGrad::zeros(1, 0), &table, &[]).unwrap();
        assert_eq!(zero.node(1, 0), &[0.0, 0.0]);
    }

    #[test]
    fn chain_matches_finite_differences_through_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (frames, targets) = (4, vec![2usize, 4]);
        let logits = random_logits(&mut rng, frames, 2, 5);
        let (lattice, table) = lattice_from_logits(&logits, frames, &targets);
        let post = BlankPosterior::new(vec![0.5; frames]).unwrap();
        let g = fsr_lattice_grads(&lattice, &post, &FsrConfig { lambda: 0.0, ctc_weight: 1.0 }).unwrap();
        let dz = chain_to_logits(&g, &table, &targets).unwrap();
        let h = 1e-5;
        for node in 0..logits.len() {
            for k in 0..5 {
                let mut up = logits.clone();
                let mut dn = logits.clone();
                up[node][k] += h;
                dn[node][k] -= h;
                let fd = (transducer_loss(&lattice_from_logits(&up, frames, &targets).0)
                    - transducer_loss(&lattice_from_logits(&dn, frames, &targets).0))
                    / (2.0 * h);
                let (t, u) = (node / 3 + 1, node % 3);
                let an = dz.node(t, u)[k];
                assert!(fd.abs() < 1e-9 && an.abs() < 1e-9 || rel_err(fd, an) < 1e-4, "node {node} k {k}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn surrogate_and_joint() {
        let h = 0.5f64.ln();
        let lattice = Lattice::new(NodeProbs::from_fn(2, 1, |_, _| h, |_, _| h).unwrap()).unwrap();
        // cb = 0 everywhere: surrogate is the summed non-blank posterior mass,
        // one label move per path.
        let post = BlankPosterior::new(vec![0.0, 0.0]).unwrap();
        assert!((fsr_surrogate(&lattice, &post).unwrap() - 1.0).abs() < 1e-12);
        // cb = 1: summed blank posterior mass, two blank moves per path.
        let post = BlankPosterior::new(vec![1.0, 1.0]).unwrap();
        assert!((fsr_surrogate(&lattice, &post).unwrap() - 2.0).abs() < 1e-12);

        let cfg = FsrConfig { lambda: 0.0, ctc_weight: 0.0 };
        assert_eq!(joint_loss(1.5, 2.0, 3.0, &cfg), 1.5);
        let cfg = FsrConfig { lambda: 0.0, ctc_weight: 1.0 };
        assert_eq!(joint_loss(1.5, 2.0, 3.0, &cfg), 3.5);
        let cfg = FsrConfig { lambda: 0.01, ctc_weight: 1.0 };
        assert!((joint_loss(1.5, 2.0, 3.0, &cfg) - 3.53).abs() < 1e-12);
    }

    fn ctc_matrix(rows: &[Vec<f64>]) -> Matrix {
        let width = rows[0].len();
        Matrix::from_vec(rows.len(), width, rows.iter().flat_map(|r| log_softmax(r)).collect()).unwrap()
    }

    /// Sum over every frame labelling that collapses to `y`.
    fn ctc_brute_force(lp: &Matrix, y: &[usize]) -> f64 {
        let (frames, width) = (lp.rows(), lp.cols());
        let mut terms = Vec::new();
        let total = width.pow(frames as u32);
        for code in 0..total {
            let mut c = code;
            let mut seq = Vec::with_capacity(frames);
            for _ in 0..frames {
                seq.push(c % width);
                c /= width;
            }
            let mut collapsed = Vec::new();
            let mut prev = None;
            for &k in &seq {
                if Some(k) != prev && k != BLANK {
                    collapsed.push(k);
                }
                prev = Some(k);
            }
            if collapsed == y {
                terms.push(seq.iter().enumerate().map(|(t, &k)| lp.get(t, k)).sum());
            }
        }
        log_sum_exp(&terms)
    }

    #[test]
    fn ctc_single_frame() {
        let lp = ctc_matrix(&[vec![0.2, 1.0, -0.3]]);
        assert!((ctc_forward(&lp, &[1]).unwrap() - lp.get(0, 1)).abs() < 1e-14);
    }

    #[test]
    fn ctc_two_frames_by_hand() {
        let lp = ctc_matrix(&[vec![0.2, 1.0, -0.3], vec![0.7, -0.5, 0.1]]);
        let p = |t: usize, k: usize| lp.get(t, k).exp();
        let expected = (p(0, 1) * p(1, 1) + p(0, 0) * p(1, 1) + p(0, 1) * p(1, 0)).ln();
        assert!((ctc_forward(&lp, &[1]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ctc_infeasible() {
        let lp = ctc_matrix(&[vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]);
        assert!(matches!(ctc_forward(&lp, &[1, 1]), Err(Error::Infeasible { .. })));
        assert!(matches!(ctc_grad(&lp, &[1, 2, 1]), Err(Error::Infeasible { .. })));
        assert!(ctc_forward(&lp, &[1, 2]).is_ok());
        assert!(matches!(ctc_forward(&lp, &[0]), Err(Error::Index(_))));
    }

    #[test]
    fn ctc_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let targets: [&[usize]; 6] = [&[], &[1], &[2], &[1, 2], &[2, 2], &[1, 1]];
        for frames in 1..=5 {
            for y in targets {
                let rows: Vec<Vec<f64>> = (0..frames)
                    .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .collect();
                let lp = ctc_matrix(&rows);
                let oracle = ctc_brute_force(&lp, y);
                match ctc_forward(&lp, y) {
                    Ok(v) => assert!((v - oracle).abs() < 1e-8, "T={frames} y={y:?}"),
                    Err(Error::Infeasible { .. }) => assert_eq!(oracle, LOG_ZERO),
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }

    #[test]
    fn ctc_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let y = [1usize, 3];
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let grad = ctc_grad(&ctc_matrix(&rows), &y).unwrap();
        let h = 1e-5;
        for t in 0..4 {
            let row_sum: f64 = grad.row(t).iter().sum();
            assert!(row_sum.abs() < 1e-12);
            for k in 0..4 {
                let mut up = rows.clone();
                let mut dn = rows.clone();
                up[t][k] += h;
                dn[t][k] -= h;
                let fd = (-ctc_forward(&ctc_matrix(&up), &y).unwrap()
                    + ctc_forward(&ctc_matrix(&dn), &y).unwrap())
                    / (2.0 * h);
                assert!(rel_err(fd, grad.get(t, k)) < 1e-4, "t {t} k {k}");
            }
        }
    }
}
