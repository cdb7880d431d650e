//! Centered asymptotic rank transform of residuals.
//!
//! Score i is (1/n)·#{l : e_l ≤ e_i} − (n+1)/(2n). Ties take the maximal rank,
//! exactly as the ≤ indicator counts them.

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{RdreamError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScores {
    pub scores: Vec<f64>,
    /// FNV-1a digest of the residual bit patterns the scores came from.
    pub source_hash: u64,
}

impl RankScores {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Stable FNV-1a over the IEEE bit patterns.
struct Fnv1a(u64);

impl Hasher for Fnv1a {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

pub(crate) fn digest_f64(values: &[f64]) -> u64 {
    let mut h = Fnv1a(0xcbf2_9ce4_8422_2325);
    for v in values {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Sort-based O(n log n) rank transform.
pub fn centered_rank_transform(residuals: &[f64]) -> Result<RankScores> {
    if let Some(index) = residuals.iter().position(|v| !v.is_finite()) {
        return Err(RdreamError::NonFinite {
            what: "residuals",
            index,
        });
    }
    let n = residuals.len();
    let nf = n as f64;
    let center = (nf + 1.0) / (2.0 * nf);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| residuals[a].total_cmp(&residuals[b]));

    let mut scores = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let value = residuals[order[start]];
        let mut end = start + 1;
        while end < n && residuals[order[end]] == value {
            end += 1;
        }
        // every member of the tie block has ≤-count equal to `end`
        let score = end as f64 / nf - center;
        for &i in &order[start..end] {
            scores[i] = score;
        }
        start = end;
    }
    Ok(RankScores {
        scores,
        source_hash: digest_f64(residuals),
    })
}

#[cfg(test)]
pub(crate) fn rank_transform_oracle(residuals: &[f64]) -> Vec<f64> {
    let n = residuals.len() as f64;
    residuals
        .iter()
        .map(|ei| {
            let count = residuals.iter().filter(|el| **el <= *ei).count() as f64;
            count / n - (n + 1.0) / (2.0 * n)
        })
        .collect()
}
