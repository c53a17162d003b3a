//! Character error rate, skip and speed statistics.

use std::fmt::Write as _;

use crate::decoder::{AlignmentReport, DecodeTrace};
use crate::error::{Error, Result};

/// Nominal frame shift of the synthetic features, seconds.
pub const FRAME_SHIFT_SECS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditOps {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditOps {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Minimal edit script from `reference` to `hypothesis`. The backtrace prefers
/// a substitution over a deletion+insertion pair.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditOps {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    let mut ops = EditOps::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if dp[i][j] == dp[i - 1][j - 1] + usize::from(!same) {
                if !same {
                    ops.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            ops.deletions += 1;
            i -= 1;
        } else {
            ops.insertions += 1;
            j -= 1;
        }
    }
    ops
}

/// Everything measured for one decoded utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceResult {
    pub id: String,
    pub reference: Vec<usize>,
    pub hypothesis: Vec<usize>,
    pub ops: EditOps,
    pub raw_frames: usize,
    pub encoded_frames: usize,
    pub triggered_frames: usize,
    pub joint_calls: u64,
    pub pred_calls: u64,
    pub blank_transitions: u64,
    pub wall_nanos: u64,
    pub emissions_on_spikes: usize,
}

impl UtteranceResult {
    pub fn new(
        id: &str,
        reference: &[usize],
        raw_frames: usize,
        trace: &DecodeTrace,
        alignment: &AlignmentReport,
    ) -> Self {
        let hypothesis = trace.token_ids();
        Self {
            id: id.to_string(),
            ops: edit_distance(reference, &hypothesis),
            reference: reference.to_vec(),
            hypothesis,
            raw_frames,
            encoded_frames: trace.triggered.len(),
            triggered_frames: trace.triggered_count(),
            joint_calls: trace.joint_calls,
            pred_calls: trace.pred_calls,
            blank_transitions: trace.blank_transitions(),
            wall_nanos: trace.wall_nanos,
            emissions_on_spikes: alignment.emissions_on_spikes,
        }
    }

    pub fn csv_header() -> &'static str {
        "id,ref_len,hyp_len,sub,del,ins,raw_frames,encoded_frames,triggered_frames,joint_calls,pred_calls,wall_nanos,emissions_on_spikes"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.id,
            self.reference.len(),
            self.hypothesis.len(),
            self.ops.substitutions,
            self.ops.deletions,
            self.ops.insertions,
            self.raw_frames,
            self.encoded_frames,
            self.triggered_frames,
            self.joint_calls,
            self.pred_calls,
            self.wall_nanos,
            self.emissions_on_spikes
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub utterances: usize,
    pub cer: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_tokens: usize,
    /// Decode seconds per second of nominal audio.
    pub rtf_proxy: f64,
    pub joint_calls_total: u64,
    pub pred_calls_total: u64,
    pub triggered_frames: usize,
    pub encoded_frames: usize,
    pub skip_ratio: f64,
    /// Fraction of emitted tokens landing on CTC spike frames.
    pub agreement: Option<f64>,
    /// Blank transitions over all transitions (emissions plus blanks).
    pub blank_fraction: f64,
    pub wall_nanos_total: u64,
}

/// Column order of [`EvalReport::csv_row`].
pub const REPORT_COLUMNS: [&str; 15] = [
    "utterances",
    "cer",
    "substitutions",
    "deletions",
    "insertions",
    "reference_tokens",
    "rtf_proxy",
    "joint_calls_total",
    "pred_calls_total",
    "triggered_frames",
    "encoded_frames",
    "skip_ratio",
    "agreement",
    "blank_fraction",
    "wall_nanos_total",
];

impl EvalReport {
    fn values(&self) -> [String; 15] {
        [
            self.utterances.to_string(),
            format!("{:.6}", self.cer),
            self.substitutions.to_string(),
            self.deletions.to_string(),
            self.insertions.to_string(),
            self.reference_tokens.to_string(),
            format!("{:.6e}", self.rtf_proxy),
            self.joint_calls_total.to_string(),
            self.pred_calls_total.to_string(),
            self.triggered_frames.to_string(),
            self.encoded_frames.to_string(),
            format!("{:.6}", self.skip_ratio),
            self.agreement.map_or_else(|| "n/a".to_string(), |a| format!("{a:.6}")),
            format!("{:.6}", self.blank_fraction),
            self.wall_nanos_total.to_string(),
        ]
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in REPORT_COLUMNS.iter().zip(self.values()) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn csv_header() -> String {
        REPORT_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().join(",")
    }
}

/// Corpus-level aggregation. Utterances with empty references contribute
/// their insertions to the error count but nothing to the denominator.
pub fn aggregate(results: &[UtteranceResult]) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::Empty("no utterances to aggregate".into()));
    }
    let mut r = EvalReport {
        utterances: results.len(),
        cer: 0.0,
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        reference_tokens: 0,
        rtf_proxy: 0.0,
        joint_calls_total: 0,
        pred_calls_total: 0,
        triggered_frames: 0,
        encoded_frames: 0,
        skip_ratio: 0.0,
        agreement: None,
        blank_fraction: 0.0,
        wall_nanos_total: 0,
    };
    let mut raw_frames = 0usize;
    let mut emissions = 0usize;
    let mut on_spikes = 0usize;
    let mut blanks = 0u64;
    for u in results {
        r.substitutions += u.ops.substitutions;
        r.deletions += u.ops.deletions;
        r.insertions += u.ops.insertions;
        r.reference_tokens += u.reference.len();
        r.joint_calls_total += u.joint_calls;
        r.pred_calls_total += u.pred_calls;
        r.triggered_frames += u.triggered_frames;
        r.encoded_frames += u.encoded_frames;
        r.wall_nanos_total += u.wall_nanos;
        raw_frames += u.raw_frames;
        emissions += u.hypothesis.len();
        on_spikes += u.emissions_on_spikes;
        blanks += u.blank_transitions;
    }
    if r.reference_tokens == 0 {
        return Err(Error::UndefinedCer);
    }
    r.cer = (r.substitutions + r.deletions + r.insertions) as f64 / r.reference_tokens as f64;
    let audio_secs = raw_frames as f64 * FRAME_SHIFT_SECS;
    r.rtf_proxy = r.wall_nanos_total as f64 * 1e-9 / audio_secs;
    r.skip_ratio = if r.encoded_frames == 0 {
        0.0
    } else {
        1.0 - r.triggered_frames as f64 / r.encoded_frames as f64
    };
    r.agreement = (emissions > 0).then(|| on_spikes as f64 / emissions as f64);
    let transitions = blanks + emissions as u64;
    r.blank_fraction = if transitions == 0 {
        0.0
    } else {
        blanks as f64 / transitions as f64
    };
    Ok(r)
}
