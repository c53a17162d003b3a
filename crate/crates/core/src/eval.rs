//! Decoding a whole dataset and aggregating the results.

use std::thread;

use crate::data::{Dataset, Utterance};
use crate::decoder::{decode, extract_alignment, AlignmentReport, DecodeMode, DecodeTrace, SkipConfig};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, EvalReport, UtteranceResult};
use crate::model::TinyTransducer;

#[derive(Debug, Clone)]
pub struct DecodedUtterance {
    pub trace: DecodeTrace,
    pub alignment: AlignmentReport,
    pub result: UtteranceResult,
}

pub fn decode_utterance(
    model: &TinyTransducer,
    utt: &Utterance,
    mode: DecodeMode,
    skip: &SkipConfig,
) -> Result<DecodedUtterance> {
    let encoded = model.encode(&utt.features)?;
    let trace = decode(model, &encoded, mode, skip);
    let alignment = extract_alignment(&trace, &encoded.blank_posterior());
    let result = UtteranceResult::new(&utt.id, &utt.targets, utt.frames(), &trace, &alignment);
    Ok(DecodedUtterance { trace, alignment, result })
}

/// Decode every utterance, in dataset order. With `threads > 1` utterances
/// decode concurrently, which makes the wall-clock numbers noisy.
pub fn decode_dataset(
    model: &TinyTransducer,
    data: &Dataset,
    mode: DecodeMode,
    skip: &SkipConfig,
    threads: usize,
) -> Result<Vec<DecodedUtterance>> {
    skip.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    if data.feat_dim != model.config.feat_dim || data.vocab_size != model.config.vocab_size {
        return Err(Error::Config(format!(
            "dataset (V={}, F={}) does not match checkpoint (V={}, F={})",
            data.vocab_size, data.feat_dim, model.config.vocab_size, model.config.feat_dim
        )));
    }
    let run = |utts: &[Utterance]| -> Result<Vec<DecodedUtterance>> {
        utts.iter().map(|u| decode_utterance(model, u, mode, skip)).collect()
    };
    if threads <= 1 {
        return run(&data.utterances);
    }
    let chunk = data.len().div_ceil(threads);
    thread::scope(|s| {
        let handles: Vec<_> = data.utterances.chunks(chunk).map(|part| s.spawn(move || run(part))).collect();
        let mut out = Vec::with_capacity(data.len());
        for h in handles {
            out.extend(h.join().expect("decode worker panicked")?);
        }
        Ok(out)
    })
}

pub fn evaluate(
    model: &TinyTransducer,
    data: &Dataset,
    mode: DecodeMode,
    skip: &SkipConfig,
    threads: usize,
) -> Result<(Vec<DecodedUtterance>, EvalReport)> {
    let decoded = decode_dataset(model, data, mode, skip, threads)?;
    let results: Vec<UtteranceResult> = decoded.iter().map(|d| d.result.clone()).collect();
    let report = aggregate(&results)?;
    Ok((decoded, report))
}
