//! Empirical autocorrelation lag maps: every (lagged value, current value,
//! lag) triple of a second frame.
//!
//! For a frame v(1..S) and lag u, the triples are (v(s-u), v(s), u) for
//! s = u+1..S, giving S-u triples per lag and S(S-1)/2 over all lags. The
//! full distribution of these triples, not a summary statistic of it, is the
//! predictor object everything downstream consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SecondFrame;

/// One point of the lag map: `d` is the lagged magnitude v(s-u), `v` the
/// current magnitude v(s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagTriple {
    pub d: f64,
    pub v: f64,
    pub u: u16,
}

/// Which lags of a frame to expand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagSelection {
    /// Every lag 1..=S-1.
    All,
    /// An explicit set of lags; order and duplicates are ignored.
    Lags(Vec<u16>),
}

impl LagSelection {
    /// The sorted, deduplicated lags this selection denotes for frame length `s`.
    pub fn resolve(&self, s: usize) -> Result<Vec<u16>> {
        let max = (s - 1) as u16;
        let mut lags = match self {
            LagSelection::All => (1..=max).collect::<Vec<u16>>(),
            LagSelection::Lags(ls) => {
                let mut ls = ls.clone();
                ls.sort_unstable();
                ls.dedup();
                ls
            }
        };
        if lags.is_empty() {
            return Err(Error::Config("lag selection is empty".to_string()));
        }
        for &u in &lags {
            if u == 0 || u > max {
                return Err(Error::LagOutOfRange { u, max, s });
            }
        }
        lags.shrink_to_fit();
        Ok(lags)
    }
}

/// The lag map of one frame. Triples are stored lag-major (u ascending) and
/// within a lag by current position s ascending, so each lag is a contiguous
/// slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagMap {
    pub j: u32,
    /// Frame length the map was built from.
    pub s: usize,
    /// Lags present, ascending.
    pub lags: Vec<u16>,
    /// Start offset of each lag's slice in `triples`.
    offsets: Vec<usize>,
    pub triples: Vec<LagTriple>,
}

impl LagMap {
    /// The (d, v, u) triples for one lag, in s order. The lag must be present.
    pub fn lag_slice(&self, u: u16) -> Result<&[LagTriple]> {
        let i = self
            .lags
            .binary_search(&u)
            .map_err(|_| Error::LagNotPresent { u })?;
        let start = self.offsets[i];
        let end = self
            .offsets
            .get(i + 1)
            .copied()
            .unwrap_or(self.triples.len());
        Ok(&self.triples[start..end])
    }
}

/// Expands a frame into its lag map for the selected lags.
pub fn build_lagmap(frame: &SecondFrame, selection: &LagSelection) -> Result<LagMap> {
    let s = frame.v.len();
    if s < 2 {
        return Err(Error::Data(format!(
            "frame {} has {s} samples; lag maps need at least 2",
            frame.j
        )));
    }
    let lags = selection.resolve(s)?;
    let total: usize = lags.iter().map(|&u| s - u as usize).sum();
    let mut triples = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(lags.len());
    for &u in &lags {
        offsets.push(triples.len());
        let ui = u as usize;
        for cur in ui..s {
            triples.push(LagTriple {
                d: frame.v[cur - ui],
                v: frame.v[cur],
                u,
            });
        }
    }
    Ok(LagMap {
        j: frame.j,
        s,
        lags,
        offsets,
        triples,
    })
}
