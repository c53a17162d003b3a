//! Log-space dynamic programming over the transducer output lattice.
//!
//! Nodes are addressed as `(t, u)` with `t` in `1..=T` (frame, 1-based) and
//! `u` in `0..=U` (number of labels already emitted). A blank move goes from
//! `(t, u)` to `(t + 1, u)`, a label move from `(t, u)` to `(t, u + 1)`, and
//! every path ends with the terminal blank out of `(T, U)`.
//!
//! Every accessor returns `-inf` for out-of-range nodes so the recursions can
//! be written without edge cases.

use crate::error::{Error, Result};
use crate::logspace::{log_add, log_sum_exp, LOG_ZERO};

/// Largest `T + U` accepted by [`enumerate_paths`].
pub const MAX_ENUMERATION_SIZE: usize = 14;

/// Per-node blank and next-label log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProbs {
    frames: usize,
    target_len: usize,
    /// `T × (U + 1)`, row-major by frame.
    blank: Vec<f64>,
    /// `T × U`, log-probability of emitting `y_{u+1}` at `(t, u)`.
    label: Vec<f64>,
}

impl NodeProbs {
    pub fn new(frames: usize, target_len: usize, blank: Vec<f64>, label: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Shape("lattice needs at least one frame".into()));
        }
        if blank.len() != frames * (target_len + 1) {
            return Err(Error::Shape(format!(
                "blank grid has {} entries, expected {}x{}",
                blank.len(),
                frames,
                target_len + 1
            )));
        }
        if label.len() != frames * target_len {
            return Err(Error::Shape(format!(
                "label grid has {} entries, expected {}x{}",
                label.len(),
                frames,
                target_len
            )));
        }
        Ok(Self {
            frames,
            target_len,
            blank,
            label,
        })
    }

    /// Build from closures over 1-based `t` and 0-based `u`.
    pub fn from_fn(
        frames: usize,
        target_len: usize,
        mut blank: impl FnMut(usize, usize) -> f64,
        mut label: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut b = Vec::with_capacity(frames * (target_len + 1));
        let mut l = Vec::with_capacity(frames * target_len);
        for t in 1..=frames {
            for u in 0..=target_len {
                b.push(blank(t, u));
            }
            for u in 0..target_len {
                l.push(label(t, u));
            }
        }
        Self::new(frames, target_len, b, l)
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn target_len(&self) -> usize {
        self.target_len
    }

    #[inline]
    pub fn blank_lp(&self, t: usize, u: usize) -> f64 {
        if t == 0 || t > self.frames || u > self.target_len {
            return LOG_ZERO;
        }
        self.blank[(t - 1) * (self.target_len + 1) + u]
    }

    #[inline]
    pub fn label_lp(&self, t: usize, u: usize) -> f64 {
        if t == 0 || t > self.frames || u >= self.target_len {
            return LOG_ZERO;
        }
        self.label[(t - 1) * self.target_len + u]
    }

    fn check_dims(&self, frames: usize, target_len: usize) -> Result<()> {
        if self.frames != frames || self.target_len != target_len {
            return Err(Error::Shape(format!(
                "node probabilities are {}x{}, requested {}x{}",
                self.frames,
                self.target_len + 1,
                frames,
                target_len + 1
            )));
        }
        Ok(())
    }
}

/// A `T × (U + 1)` grid of log-probabilities with 1-based frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    frames: usize,
    target_len: usize,
    values: Vec<f64>,
}

impl Grid {
    fn filled(frames: usize, target_len: usize) -> Self {
        Self {
            frames,
            target_len,
            values: vec![LOG_ZERO; frames * (target_len + 1)],
        }
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize) -> f64 {
        if t == 0 || t > self.frames || u > self.target_len {
            return LOG_ZERO;
        }
        self.values[(t - 1) * (self.target_len + 1) + u]
    }

    #[inline]
    fn set(&mut self, t: usize, u: usize, v: f64) {
        self.values[(t - 1) * (self.target_len + 1) + u] = v;
    }
}

/// Forward variables: `alpha(1,0) = 0` and
/// `alpha(t,u) = lse(alpha(t-1,u) + blank(t-1,u), alpha(t,u-1) + label(t,u-1))`.
pub fn forward_vars(node_probs: &NodeProbs, frames: usize, target_len: usize) -> Result<Grid> {
    node_probs.check_dims(frames, target_len)?;
    let mut alpha = Grid::filled(frames, target_len);
    for t in 1..=frames {
        for u in 0..=target_len {
            let value = if t == 1 && u == 0 {
                0.0
            } else {
                let from_blank = alpha.get(t - 1, u) + node_probs.blank_lp(t - 1, u);
                let from_label = if u > 0 {
                    alpha.get(t, u - 1) + node_probs.label_lp(t, u - 1)
                } else {
                    LOG_ZERO
                };
                log_add(from_blank, from_label)
            };
            alpha.set(t, u, value);
        }
    }
    Ok(alpha)
}

/// Backward variables: `beta(T,U) = blank(T,U)` and
/// `beta(t,u) = lse(beta(t+1,u) + blank(t,u), beta(t,u+1) + label(t,u))`.
pub fn backward_vars(node_probs: &NodeProbs, frames: usize, target_len: usize) -> Result<Grid> {
    node_probs.check_dims(frames, target_len)?;
    let mut beta = Grid::filled(frames, target_len);
    for t in (1..=frames).rev() {
        for u in (0..=target_len).rev() {
            let value = if t == frames && u == target_len {
                node_probs.blank_lp(t, u)
            } else {
                log_add(
                    beta.get(t + 1, u) + node_probs.blank_lp(t, u),
                    beta.get(t, u + 1) + node_probs.label_lp(t, u),
                )
            };
            beta.set(t, u, value);
        }
    }
    Ok(beta)
}

/// Node probabilities together with their forward and backward variables.
#[derive(Debug, Clone)]
pub struct Lattice {
    node_probs: NodeProbs,
    alpha: Grid,
    beta: Grid,
}

impl Lattice {
    pub fn new(node_probs: NodeProbs) -> Result<Self> {
        let (t, u) = (node_probs.frames(), node_probs.target_len());
        let alpha = forward_vars(&node_probs, t, u)?;
        let beta = backward_vars(&node_probs, t, u)?;
        Ok(Self {
            node_probs,
            alpha,
            beta,
        })
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.node_probs.frames()
    }

    #[inline]
    pub fn target_len(&self) -> usize {
        self.node_probs.target_len()
    }

    pub fn node_probs(&self) -> &NodeProbs {
        &self.node_probs
    }

    #[inline]
    pub fn alpha(&self, t: usize, u: usize) -> f64 {
        self.alpha.get(t, u)
    }

    #[inline]
    pub fn beta(&self, t: usize, u: usize) -> f64 {
        self.beta.get(t, u)
    }

    /// Sum of `alpha + beta` over the nodes with `t + u = n`.
    pub fn diagonal_logprob(&self, n: usize) -> f64 {
        let terms: Vec<f64> = (1..=self.frames())
            .filter(|&t| n >= t && n - t <= self.target_len())
            .map(|t| self.alpha(t, n - t) + self.beta(t, n - t))
            .collect();
        log_sum_exp(&terms)
    }
}

/// `ln P(y|x) = alpha(T,U) + blank(T,U)`.
pub fn sequence_logprob(lattice: &Lattice) -> f64 {
    let (t, u) = (lattice.frames(), lattice.target_len());
    lattice.alpha(t, u) + lattice.node_probs.blank_lp(t, u)
}

/// Split of the probability mass through `(t, u)` into the paths that leave it
/// with a label move and those that leave it with a blank move.
///
/// Returns `(non_blank, blank)` in log domain; they recombine to
/// `alpha(t,u) + beta(t,u)`.
pub fn node_posterior_split(lattice: &Lattice, t: usize, u: usize) -> Result<(f64, f64)> {
    let (frames, target_len) = (lattice.frames(), lattice.target_len());
    if t == 0 || t > frames || u > target_len {
        return Err(Error::Index(format!(
            "node ({t},{u}) outside {frames}x{}",
            target_len + 1
        )));
    }
    let np = lattice.node_probs();
    let alpha = lattice.alpha(t, u);
    let non_blank = alpha + np.label_lp(t, u) + lattice.beta(t, u + 1);
    let blank = if t == frames && u == target_len {
        alpha + np.blank_lp(t, u)
    } else {
        alpha + np.blank_lp(t, u) + lattice.beta(t + 1, u)
    };
    Ok((non_blank, blank))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    Blank,
    Label,
}

/// Every monotone path from `(1,0)` through the terminal blank at `(T,U)`,
/// with its log-probability. Exponential; intended as a test oracle.
pub fn enumerate_paths(
    node_probs: &NodeProbs,
    frames: usize,
    target_len: usize,
) -> Result<Vec<(Vec<Step>, f64)>> {
    node_probs.check_dims(frames, target_len)?;
    if frames + target_len > MAX_ENUMERATION_SIZE {
        return Err(Error::TooLarge(format!(
            "T + U = {} exceeds {MAX_ENUMERATION_SIZE}",
            frames + target_len
        )));
    }

    fn walk(
        np: &NodeProbs,
        t: usize,
        u: usize,
        prefix: &mut Vec<Step>,
        logp: f64,
        out: &mut Vec<(Vec<Step>, f64)>,
    ) {
        let (frames, target_len) = (np.frames(), np.target_len());
        if t == frames && u == target_len {
            prefix.push(Step::Blank);
            out.push((prefix.clone(), logp + np.blank_lp(t, u)));
            prefix.pop();
            return;
        }
        if u < target_len {
            prefix.push(Step::Label);
            walk(np, t, u + 1, prefix, logp + np.label_lp(t, u), out);
            prefix.pop();
        }
        if t < frames {
            prefix.push(Step::Blank);
            walk(np, t + 1, u, prefix, logp + np.blank_lp(t, u), out);
            prefix.pop();
        }
    }

    let mut out = Vec::new();
    walk(node_probs, 1, 0, &mut Vec::new(), 0.0, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random lattice where every node's blank/label pair comes from a
    /// normalized distribution over `vocab` outcomes.
    pub(crate) fn random_node_probs(rng: &mut impl Rng, frames: usize, target_len: usize) -> NodeProbs {
        let vocab = 4;
        let mut blank = Vec::new();
        let mut label = Vec::new();
        for _t in 0..frames {
            for u in 0..=target_len {
                let w: Vec<f64> = (0..vocab).map(|_| rng.random::<f64>() + 0.05).collect();
                let z: f64 = w.iter().sum();
                blank.push((w[0] / z).ln());
                if u < target_len {
                    label.push((w[1] / z).ln());
                }
            }
        }
        NodeProbs::new(frames, target_len, blank, label).unwrap()
    }

    fn uniform_half(frames: usize, target_len: usize) -> NodeProbs {
        let h = 0.5f64.ln();
        NodeProbs::from_fn(frames, target_len, |_, _| h, |_, _| h).unwrap()
    }

    #[test]
    fn alpha_initial_condition() {
        let np = NodeProbs::new(1, 0, vec![0.3f64.ln()], vec![]).unwrap();
        let alpha = forward_vars(&np, 1, 0).unwrap();
        assert_eq!(alpha.get(1, 0), 0.0);
    }

    #[test]
    fn alpha_two_paths_uniform() {
        // alpha(2,1) = 0.5*0.5 + 0.5*0.5
        let alpha = forward_vars(&uniform_half(2, 1), 2, 1).unwrap();
        assert!((alpha.get(2, 1) - 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn beta_initial_condition() {
        let np = NodeProbs::new(1, 0, vec![0.9f64.ln()], vec![]).unwrap();
        let beta = backward_vars(&np, 1, 0).unwrap();
        assert_eq!(beta.get(1, 0), 0.9f64.ln());
        let lattice = Lattice::new(np).unwrap();
        assert!((sequence_logprob(&lattice) - 0.9f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let np = uniform_half(3, 2);
        assert!(matches!(forward_vars(&np, 3, 1), Err(Error::Shape(_))));
        assert!(matches!(backward_vars(&np, 2, 2), Err(Error::Shape(_))));
        assert!(matches!(NodeProbs::new(2, 1, vec![0.0; 3], vec![0.0; 2]), Err(Error::Shape(_))));
        assert!(matches!(NodeProbs::new(0, 0, vec![], vec![]), Err(Error::Shape(_))));
    }

    #[test]
    fn path_counts_follow_interleavings() {
        // T-1 free blank moves interleaved with U label moves, then the final
        // blank: C(T-1+U, U). For T=3, U=2 that is C(4,2) = 6.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let paths = enumerate_paths(&random_node_probs(&mut rng, 3, 2), 3, 2).unwrap();
        assert_eq!(paths.len(), 6);
        assert_eq!(enumerate_paths(&uniform_half(1, 0), 1, 0).unwrap().len(), 1);
        let p = enumerate_paths(&uniform_half(2, 0), 2, 0).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].0, vec![Step::Blank, Step::Blank]);
    }

    #[test]
    fn two_by_one_path_set() {
        let paths = enumerate_paths(&uniform_half(2, 1), 2, 1).unwrap();
        let mut set: Vec<Vec<Step>> = paths.into_iter().map(|(p, _)| p).collect();
        set.sort_by_key(|p| format!("{p:?}"));
        let mut expected = vec![
            vec![Step::Label, Step::Blank, Step::Blank],
            vec![Step::Blank, Step::Label, Step::Blank],
        ];
        expected.sort_by_key(|p| format!("{p:?}"));
        assert_eq!(set, expected);
    }

    #[test]
    fn enumeration_refuses_large_instances() {
        let np = uniform_half(10, 5);
        assert!(matches!(enumerate_paths(&np, 10, 5), Err(Error::TooLarge(_))));
    }

    #[test]
    fn forward_matches_enumeration_in_linear_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let np = random_node_probs(&mut rng, 4, 2);
        let lattice = Lattice::new(np.clone()).unwrap();
        let oracle: f64 = enumerate_paths(&np, 4, 2)
            .unwrap()
            .iter()
            .map(|(_, lp)| lp.exp())
            .sum();
        let via_alpha = (lattice.alpha(4, 2) + np.blank_lp(4, 2)).exp();
        assert!((oracle - via_alpha).abs() < 1e-10);
    }

    #[test]
    fn backward_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lattice = Lattice::new(random_node_probs(&mut rng, 4, 2)).unwrap();
        assert!((lattice.beta(1, 0) - sequence_logprob(&lattice)).abs() < 1e-10);
    }

    #[test]
    fn diagonal_identity_every_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lattice = Lattice::new(random_node_probs(&mut rng, 5, 3)).unwrap();
        let logp = sequence_logprob(&lattice);
        for n in 1..=8 {
            assert!((lattice.diagonal_logprob(n) - logp).abs() < 1e-8, "diagonal {n}");
        }
    }

    #[test]
    fn posterior_split_at_corner() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let lattice = Lattice::new(random_node_probs(&mut rng, 3, 2)).unwrap();
        let (nb, b) = node_posterior_split(&lattice, 3, 2).unwrap();
        assert_eq!(nb, LOG_ZERO);
        assert!((b - sequence_logprob(&lattice)).abs() < 1e-14);
        assert!(matches!(node_posterior_split(&lattice, 4, 0), Err(Error::Index(_))));
        assert!(matches!(node_posterior_split(&lattice, 0, 0), Err(Error::Index(_))));
    }

    #[test]
    fn posterior_split_recombines_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lattice = Lattice::new(random_node_probs(&mut rng, 4, 3)).unwrap();
        let logp = sequence_logprob(&lattice);
        for t in 1..=4 {
            for u in 0..=3 {
                let (nb, b) = node_posterior_split(&lattice, t, u).unwrap();
                let total = lattice.alpha(t, u) + lattice.beta(t, u);
                assert!((log_add(nb, b) - total).abs() < 1e-10, "node ({t},{u})");
            }
        }
        // diagonal n = 3: linear posteriors sum to P(y|x)
        let diag: f64 = (1..=3)
            .map(|t| {
                let (nb, b) = node_posterior_split(&lattice, t, 3 - t).unwrap();
                nb.exp() + b.exp()
            })
            .sum();
        assert!((diag - logp.exp()).abs() < 1e-10);
    }

    #[test]
    fn no_labels_is_product_of_blanks() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let np = random_node_probs(&mut rng, 5, 0);
        let expected: f64 = (1..=5).map(|t| np.blank_lp(t, 0)).sum();
        let lattice = Lattice::new(np).unwrap();
        assert!((sequence_logprob(&lattice) - expected).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn oracle_agrees(seed in any::<u64>(), frames in 1usize..=5, target_len in 0usize..=3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let np = random_node_probs(&mut rng, frames, target_len);
                let paths = enumerate_paths(&np, frames, target_len).unwrap();
                for (path, _) in &paths {
                    prop_assert_eq!(path.iter().filter(|s| **s == Step::Blank).count(), frames);
                    prop_assert_eq!(path.iter().filter(|s| **s == Step::Label).count(), target_len);
                    prop_assert_eq!(*path.last().unwrap(), Step::Blank);
                }
                let oracle = log_sum_exp(&paths.iter().map(|(_, lp)| *lp).collect::<Vec<_>>());
                let lattice = Lattice::new(np).unwrap();
                prop_assert!((sequence_logprob(&lattice) - oracle).abs() < 1e-8);
                for n in 1..=frames + target_len {
                    prop_assert!((lattice.diagonal_logprob(n) - oracle).abs() < 1e-8);
                }
            }
        }
    }
}
