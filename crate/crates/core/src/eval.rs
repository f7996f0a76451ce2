//! Frame error rate, greedy token decoding, token error rate and
//! comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{fill_context, Bandwidth, Utterance};
use crate::model::Model;

/// Argmax class of every frame of an utterance.
pub fn predict_frames(model: &Model, utt: &Utterance) -> Result<Vec<usize>> {
    let cfg = model.config();
    let f = &utt.features;
    if f.dim != cfg.n_mels {
        return Err(Error::Shape(format!(
            "utterance {} has {}-dim features, model expects {}",
            utt.id(),
            f.dim,
            cfg.n_mels
        )));
    }
    let mut ws = model.workspace();
    let mut patch = vec![0.0; cfg.input_len()];
    (0..f.n_frames)
        .map(|t| {
            fill_context(f, t, cfg.context, &mut patch);
            model.predict(&mut ws, &patch, f.bandwidth)
        })
        .collect()
}

fn labels_of(utt: &Utterance) -> Result<&[u32]> {
    let labels = utt
        .labels
        .as_deref()
        .ok_or_else(|| Error::Data(format!("utterance {} has no labels", utt.id())))?;
    if labels.len() != utt.n_frames() {
        return Err(Error::Data(format!(
            "utterance {}: {} labels for {} frames",
            utt.id(),
            labels.len(),
            utt.n_frames()
        )));
    }
    Ok(labels)
}

/// Collapsed class sequence of one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub utterance_id: String,
    pub tokens: Vec<u32>,
}

/// Run-length collapse of a frame-level class path.
pub fn collapse(path: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::new();
    for &c in path {
        if out.last() != Some(&c) {
            out.push(c);
        }
    }
    out
}

/// Per-frame argmax of row-major `T x K` posteriors, collapsed.
pub fn greedy_decode(utterance_id: &str, posteriors: &[f64], n_classes: usize) -> TokenSequence {
    let path: Vec<u32> = posteriors
        .chunks(n_classes)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect();
    TokenSequence { utterance_id: utterance_id.to_string(), tokens: collapse(&path) }
}

/// Levenshtein distance with unit costs.
pub fn edit_distance(a: &[u32], b: &[u32]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the reference length. May exceed 1.
pub fn token_error_rate(hyp: &[u32], reference: &[u32]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::UndefinedRate);
    }
    Ok(edit_distance(hyp, reference) as f64 / reference.len() as f64)
}

/// Integer tallies for one bandwidth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub n_utts: usize,
    pub n_frames: usize,
    pub frame_errors: usize,
    pub token_edits: usize,
    pub ref_tokens: usize,
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.n_utts += o.n_utts;
        self.n_frames += o.n_frames;
        self.frame_errors += o.frame_errors;
        self.token_edits += o.token_edits;
        self.ref_tokens += o.ref_tokens;
    }

    pub fn frame_error_rate(&self) -> Option<f64> {
        (self.n_frames > 0).then(|| self.frame_errors as f64 / self.n_frames as f64)
    }

    pub fn frame_accuracy(&self) -> Option<f64> {
        self.frame_error_rate().map(|e| 1.0 - e)
    }

    /// Corpus-level token error rate: total edits over total reference
    /// tokens.
    pub fn token_error_rate(&self) -> Option<f64> {
        (self.ref_tokens > 0).then(|| self.token_edits as f64 / self.ref_tokens as f64)
    }
}

/// Metrics of one model on one test set, split by bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scenario: String,
    pub wideband: Counts,
    pub narrowband: Counts,
}

impl EvalReport {
    pub fn counts(&self, bw: Bandwidth) -> &Counts {
        match bw {
            Bandwidth::Wideband => &self.wideband,
            Bandwidth::Narrowband => &self.narrowband,
        }
    }

    fn counts_mut(&mut self, bw: Bandwidth) -> &mut Counts {
        match bw {
            Bandwidth::Wideband => &mut self.wideband,
            Bandwidth::Narrowband => &mut self.narrowband,
        }
    }

    pub fn frame_error_rate(&self, bw: Bandwidth) -> Option<f64> {
        self.counts(bw).frame_error_rate()
    }

    pub fn frame_accuracy(&self, bw: Bandwidth) -> Option<f64> {
        self.counts(bw).frame_accuracy()
    }

    pub fn token_error_rate(&self, bw: Bandwidth) -> Option<f64> {
        self.counts(bw).token_error_rate()
    }

    /// Tab-separated rows: bandwidth, utterances, frames, frame error rate,
    /// token error rate.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("scenario\tbandwidth\tn_utts\tn_frames\tframe_error_rate\ttoken_error_rate\n");
        for bw in Bandwidth::ALL {
            let c = self.counts(bw);
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                self.scenario,
                bw.short_name(),
                c.n_utts,
                c.n_frames,
                fmt_opt(c.frame_error_rate(), 6),
                fmt_opt(c.token_error_rate(), 6)
            )
            .unwrap();
        }
        out
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

fn score_utterance(model: &Model, utt: &Utterance) -> Result<Counts> {
    let labels = labels_of(utt)?;
    let pred = predict_frames(model, utt)?;
    let frame_errors = pred.iter().zip(labels).filter(|(p, l)| **p as u32 != **l).count();
    let hyp = collapse(&pred.iter().map(|&p| p as u32).collect::<Vec<_>>());
    let reference = collapse(labels);
    Ok(Counts {
        n_utts: 1,
        n_frames: labels.len(),
        frame_errors,
        token_edits: edit_distance(&hyp, &reference),
        ref_tokens: reference.len(),
    })
}

/// Scores every utterance (in parallel) and sums the integer tallies per
/// bandwidth, so the result does not depend on utterance order.
pub fn evaluate(model: &Model, utterances: &[Utterance], scenario: &str) -> Result<EvalReport> {
    let per_utt: Vec<(Bandwidth, Counts)> = utterances
        .par_iter()
        .map(|u| Ok((u.bandwidth(), score_utterance(model, u)?)))
        .collect::<Result<_>>()?;
    let mut report = EvalReport {
        scenario: scenario.to_string(),
        wideband: Counts::default(),
        narrowband: Counts::default(),
    };
    for (bw, c) in &per_utt {
        report.counts_mut(*bw).add(c);
    }
    Ok(report)
}

/// `1 - correct / total` per bandwidth; `None` for a bandwidth without
/// frames.
pub fn frame_error_rate(model: &Model, utterances: &[Utterance]) -> Result<BTreeMap<Bandwidth, Option<f64>>> {
    let report = evaluate(model, utterances, "")?;
    Ok(Bandwidth::ALL.into_iter().map(|bw| (bw, report.frame_error_rate(bw))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    FrameErrorRate,
    TokenErrorRate,
}

impl Metric {
    fn value(self, r: &EvalReport, bw: Bandwidth) -> Option<f64> {
        match self {
            Metric::FrameErrorRate => r.frame_error_rate(bw),
            Metric::TokenErrorRate => r.token_error_rate(bw),
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Metric::FrameErrorRate => "Frame error (%)",
            Metric::TokenErrorRate => "Token error (%)",
        }
    }
}

/// A rendered comparison: aligned text and tab-separated values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonTable {
    pub text: String,
    pub tsv: String,
}

pub(crate) const MISSING: &str = "—";

/// One row per report with WB and NB columns, values in percent with one
/// decimal; a bandwidth without test data shows "—".
pub fn compare_scenarios(rows: &[(String, EvalReport)], metric: Metric) -> ComparisonTable {
    let cells: Vec<[String; 3]> = rows
        .iter()
        .map(|(name, r)| {
            let cell = |bw| metric.value(r, bw).map_or_else(|| MISSING.to_string(), |v| format!("{:.1}", 100.0 * v));
            [name.clone(), cell(Bandwidth::Wideband), cell(Bandwidth::Narrowband)]
        })
        .collect();
    render_table(&["Model", "WB", "NB"], metric.title(), &cells)
}

/// Renders rows under a header, first column left-aligned and the rest
/// right-aligned.
pub fn render_table<const N: usize>(header: &[&str; N], title: &str, rows: &[[String; N]]) -> ComparisonTable {
    let width = |s: &str| s.chars().count();
    let mut widths: Vec<usize> = header.iter().map(|h| width(h)).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(width(c));
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            let pad = widths[i] - width(c);
            if i == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_string()
    };
    let mut text = String::new();
    if !title.is_empty() {
        writeln!(text, "{title}").unwrap();
    }
    writeln!(text, "{}", line(header.to_vec())).unwrap();
    writeln!(text, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (N - 1))).unwrap();
    for r in rows {
        writeln!(text, "{}", line(r.iter().map(String::as_str).collect())).unwrap();
    }
    let mut tsv = header.join("\t");
    tsv.push('\n');
    for r in rows {
        tsv.push_str(&r.iter().map(|c| if c == MISSING { "-" } else { c.as_str() }).collect::<Vec<_>>().join("\t"));
        tsv.push('\n');
    }
    ComparisonTable { text, tsv }
}
