//! Bidirectional recall@k over an audio × caption similarity matrix.
//!
//! Text-to-audio: each caption is a query over all audios, and it hits when
//! its owning audio ranks within `k`. Audio-to-text: each audio is a query
//! over all captions, and it hits when its best-ranked caption is within
//! `k`. Ranks count candidates scoring strictly higher than the target, so
//! ties resolve optimistically and independent of candidate order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embedding::Matrix;
use crate::error::{Error, Result};

/// The cut-offs reported everywhere.
pub const REPORTED_KS: [usize; 3] = [1, 5, 10];

/// Ownership structure of a retrieval pool: which audio each caption
/// describes. Audios and captions are addressed by position.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    text_to_audio: Vec<usize>,
    audio_to_texts: Vec<Vec<usize>>,
}

impl RetrievalIndex {
    /// `text_to_audio[t]` is the audio that owns caption `t`. Every audio in
    /// `0..n_audios` must own at least one caption.
    pub fn new(n_audios: usize, text_to_audio: Vec<usize>) -> Result<Self> {
        let mut audio_to_texts = vec![Vec::new(); n_audios];
        for (t, &a) in text_to_audio.iter().enumerate() {
            let owned = audio_to_texts.get_mut(a).ok_or_else(|| {
                Error::InvalidIndex(format!(
                    "caption {t} points at audio {a}, pool has {n_audios}"
                ))
            })?;
            owned.push(t);
        }
        if let Some(a) = audio_to_texts.iter().position(Vec::is_empty) {
            return Err(Error::InvalidIndex(format!("audio {a} owns no caption")));
        }
        Ok(Self {
            text_to_audio,
            audio_to_texts,
        })
    }

    /// One caption per audio, caption `i` belonging to audio `i`.
    pub fn one_to_one(n: usize) -> Self {
        Self::new(n, (0..n).collect()).expect("identity index is valid")
    }

    /// `captions_per_audio` consecutive captions per audio.
    pub fn grouped(n_audios: usize, captions_per_audio: usize) -> Self {
        let map = (0..n_audios * captions_per_audio)
            .map(|t| t / captions_per_audio)
            .collect();
        Self::new(n_audios, map).expect("grouped index is valid")
    }

    pub fn n_audios(&self) -> usize {
        self.audio_to_texts.len()
    }

    pub fn n_texts(&self) -> usize {
        self.text_to_audio.len()
    }

    pub fn audio_of(&self, text: usize) -> usize {
        self.text_to_audio[text]
    }

    pub fn texts_of(&self, audio: usize) -> &[usize] {
        &self.audio_to_texts[audio]
    }
}

/// `1 +` the number of candidates scoring strictly above the best target.
pub fn rank_of_target(scores: &[f64], targets: &[usize]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if targets.is_empty() {
        return Err(Error::InvalidTarget {
            index: 0,
            len: scores.len(),
        });
    }
    let mut best = f64::NEG_INFINITY;
    for &t in targets {
        let v = *scores.get(t).ok_or(Error::InvalidTarget {
            index: t,
            len: scores.len(),
        })?;
        best = best.max(v);
    }
    Ok(1 + scores.iter().filter(|&&s| s > best).count())
}

/// Per-query ranks in both directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRanks {
    /// One entry per caption query.
    pub text_to_audio: Vec<usize>,
    /// One entry per audio query (best caption).
    pub audio_to_text: Vec<usize>,
}

impl QueryRanks {
    pub fn recall(ranks: &[usize], k: usize) -> f64 {
        if ranks.is_empty() {
            return 0.0;
        }
        ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
    }
}

fn check_sims(index: &RetrievalIndex, sims: &Matrix) -> Result<()> {
    if sims.shape() != (index.n_audios(), index.n_texts()) {
        return Err(Error::shape(
            "recall_at_k",
            format!(
                "{}x{} (audios x captions)",
                index.n_audios(),
                index.n_texts()
            ),
            format!("{}x{}", sims.rows(), sims.cols()),
        ));
    }
    Ok(())
}

/// Ranks every query of both directions against `sims` (audios × captions).
pub fn query_ranks(index: &RetrievalIndex, sims: &Matrix) -> Result<QueryRanks> {
    check_sims(index, sims)?;
    let mut column = vec![0.0; index.n_audios()];
    let mut t2a = Vec::with_capacity(index.n_texts());
    for t in 0..index.n_texts() {
        for (a, c) in column.iter_mut().enumerate() {
            *c = sims.get(a, t);
        }
        t2a.push(rank_of_target(&column, &[index.audio_of(t)])?);
    }
    let a2t = (0..index.n_audios())
        .map(|a| rank_of_target(sims.row(a), index.texts_of(a)))
        .collect::<Result<Vec<_>>>()?;
    Ok(QueryRanks {
        text_to_audio: t2a,
        audio_to_text: a2t,
    })
}

/// Hit fractions for one cut-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalRecall {
    pub text_to_audio: f64,
    pub audio_to_text: f64,
}

pub fn recall_at_k(index: &RetrievalIndex, sims: &Matrix, k: usize) -> Result<DirectionalRecall> {
    let ranks = query_ranks(index, sims)?;
    Ok(DirectionalRecall {
        text_to_audio: QueryRanks::recall(&ranks.text_to_audio, k),
        audio_to_text: QueryRanks::recall(&ranks.audio_to_text, k),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Recalls {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

impl Recalls {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        Self {
            r1: QueryRanks::recall(ranks, 1),
            r5: QueryRanks::recall(ranks, 5),
            r10: QueryRanks::recall(ranks, 10),
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.r1, self.r5, self.r10]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self {
            r1: v[0],
            r5: v[1],
            r10: v[2],
        }
    }
}

/// R@1/5/10 in both directions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RecallReport {
    pub text_to_audio: Recalls,
    pub audio_to_text: Recalls,
}

impl RecallReport {
    pub fn from_ranks(ranks: &QueryRanks) -> Self {
        Self {
            text_to_audio: Recalls::from_ranks(&ranks.text_to_audio),
            audio_to_text: Recalls::from_ranks(&ranks.audio_to_text),
        }
    }

    /// The six values in the order t2a R@1, R@5, R@10, a2t R@1, R@5, R@10.
    pub fn values(&self) -> [f64; 6] {
        let [a, b, c] = self.text_to_audio.as_array();
        let [d, e, f] = self.audio_to_text.as_array();
        [a, b, c, d, e, f]
    }

    pub fn from_values(v: [f64; 6]) -> Self {
        Self {
            text_to_audio: Recalls::from_array([v[0], v[1], v[2]]),
            audio_to_text: Recalls::from_array([v[3], v[4], v[5]]),
        }
    }

    pub fn sum_of_recalls(&self) -> f64 {
        self.values().iter().sum()
    }

    /// `direction,r1,r5,r10` with one row per direction; values are
    /// fractions in `[0, 1]`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("direction,r1,r5,r10\n");
        for (name, r) in [("t2a", &self.text_to_audio), ("a2t", &self.audio_to_text)] {
            let _ = writeln!(out, "{name},{},{},{}", r.r1, r.r5, r.r10);
        }
        out
    }

    /// Aligned plain-text table in percent, followed by the sum of recalls.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10}{:>8}{:>8}{:>8}\n", "direction", "R@1", "R@5", "R@10");
        for (name, r) in [("t2a", &self.text_to_audio), ("a2t", &self.audio_to_text)] {
            let _ = writeln!(
                out,
                "{:<10}{:>8.1}{:>8.1}{:>8.1}",
                name,
                100.0 * r.r1,
                100.0 * r.r5,
                100.0 * r.r10
            );
        }
        let _ = writeln!(out, "sum of recalls: {:.4}", self.sum_of_recalls());
        out
    }
}

/// Evaluates R@1/5/10 in both directions.
pub fn evaluate(index: &RetrievalIndex, sims: &Matrix) -> Result<RecallReport> {
    Ok(RecallReport::from_ranks(&query_ranks(index, sims)?))
}

pub fn sum_of_recalls(report: &RecallReport) -> f64 {
    report.sum_of_recalls()
}
