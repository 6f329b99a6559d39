//! Frame and agent similarity, and each agent's initial importance scores
//! for itself and its neighbors.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::agent::SelectionBuffer;
use crate::netsim::CommGraph;

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Initial score of an agent with no neighbors.
pub const ISOLATED_SCORE: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("feature dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("alpha must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("agent {owner} has no buffer for neighborhood member {missing}")]
    MissingBuffer { owner: usize, missing: usize },
}

/// `exp(-alpha * ||x - y||_2)`.
pub fn frame_similarity(x: &[f32], y: &[f32], alpha: f64) -> Result<f64, ScoringError> {
    check_alpha(alpha)?;
    if x.len() != y.len() {
        return Err(ScoringError::DimensionMismatch(x.len(), y.len()));
    }
    Ok(similarity_unchecked(x, y, alpha))
}

fn check_alpha(alpha: f64) -> Result<(), ScoringError> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(ScoringError::InvalidAlpha(alpha))
    }
}

fn similarity_unchecked(x: &[f32], y: &[f32], alpha: f64) -> f64 {
    let sq: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    (-alpha * sq.sqrt()).exp()
}

/// How well `f_i` covers `f_j`: every frame of `f_j` takes its best match
/// among the frames of `f_i`, averaged over `f_j`. Not symmetric.
/// Either buffer empty gives 0.
pub fn agent_similarity(f_i: &SelectionBuffer, f_j: &SelectionBuffer, alpha: f64) -> Result<f64, ScoringError> {
    check_alpha(alpha)?;
    if f_i.is_empty() || f_j.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in &f_j.selected {
        let mut best = 0.0f64;
        for a in &f_i.selected {
            if a.feature.len() != p.feature.len() {
                return Err(ScoringError::DimensionMismatch(a.feature.len(), p.feature.len()));
            }
            best = best.max(similarity_unchecked(&p.feature, &a.feature, alpha));
        }
        total += best;
    }
    Ok(total / f_j.len() as f64)
}

/// Agent `owner`'s estimates `x0_{owner,j}` for every `j` in its
/// neighborhood (itself included). Agents outside it are implicitly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialScoreSet {
    pub owner: usize,
    /// Number of neighbors of `owner`.
    pub degree: usize,
    pub scores: BTreeMap<usize, f64>,
}

impl InitialScoreSet {
    pub fn get(&self, j: usize) -> f64 {
        self.scores.get(&j).copied().unwrap_or(0.0)
    }
}

/// `x0_ij` is the mean, over the other members `k` of `V_i`, of how well
/// `j`'s buffer covers `k`'s.
pub fn initial_scores(
    owner: usize,
    buffers: &BTreeMap<usize, &SelectionBuffer>,
    graph: &CommGraph,
    alpha: f64,
) -> Result<InitialScoreSet, ScoringError> {
    check_alpha(alpha)?;
    let members = graph.neighborhood(owner);
    let lookup = |k: usize| {
        buffers
            .get(&k)
            .copied()
            .ok_or(ScoringError::MissingBuffer { owner, missing: k })
    };
    let mut scores = BTreeMap::new();
    if members.len() == 1 {
        lookup(owner)?;
        scores.insert(owner, ISOLATED_SCORE);
    } else {
        for &j in &members {
            let fj = lookup(j)?;
            let mut sum = 0.0;
            for &k in members.iter().filter(|&&k| k != j) {
                sum += agent_similarity(fj, lookup(k)?, alpha)?;
            }
            scores.insert(j, sum / (members.len() - 1) as f64);
        }
    }
    Ok(InitialScoreSet {
        owner,
        degree: graph.degree(owner),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::SelectedFrame;
    use proptest::prelude::*;

    fn buf(view: usize, features: &[Vec<f32>]) -> SelectionBuffer {
        let selected = features
            .iter()
            .enumerate()
            .map(|(index, f)| SelectedFrame {
                index,
                feature: f.clone(),
            })
            .collect();
        SelectionBuffer::new(view, 0, selected)
    }

    #[test]
    fn frame_similarity_basics() {
        let x = [1.0, -2.0, 0.5];
        assert_eq!(frame_similarity(&x, &x, 0.05).unwrap(), 1.0);
        let y = [3.0, 1.0, 0.0];
        assert_eq!(
            frame_similarity(&x, &y, 0.05).unwrap(),
            frame_similarity(&y, &x, 0.05).unwrap()
        );
        let far = [20.0, 0.0];
        let v = frame_similarity(&[0.0, 0.0], &far, 0.05).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
        assert!((v - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn frame_similarity_errors() {
        assert_eq!(
            frame_similarity(&[0.0], &[0.0, 1.0], 0.05),
            Err(ScoringError::DimensionMismatch(1, 2))
        );
        assert!(matches!(
            frame_similarity(&[0.0], &[0.0], 0.0),
            Err(ScoringError::InvalidAlpha(_))
        ));
    }

    #[test]
    fn agent_similarity_examples() {
        let a = buf(0, &[vec![0.0, 1.0], vec![4.0, 2.0]]);
        assert_eq!(agent_similarity(&a, &a, 0.05).unwrap(), 1.0);
        let single = buf(1, &[vec![4.0, 2.0]]);
        assert_eq!(agent_similarity(&a, &single, 0.05).unwrap(), 1.0);

        let fi = buf(0, &[vec![0.0, 0.0]]);
        let fj = buf(1, &[vec![20.0, 0.0], vec![0.0, 0.0]]);
        let v = agent_similarity(&fi, &fj, 0.05).unwrap();
        assert!((v - ((-1.0f64).exp() + 1.0) / 2.0).abs() < 1e-12);
        assert!((v - 0.68394).abs() < 1e-5);
    }

    #[test]
    fn empty_buffers_score_zero() {
        let a = buf(0, &[vec![1.0]]);
        let empty = buf(1, &[]);
        assert_eq!(agent_similarity(&a, &empty, 0.05).unwrap(), 0.0);
        assert_eq!(agent_similarity(&empty, &a, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn pair_neighborhood_scores() {
        let g = CommGraph::path(3);
        let b0 = buf(0, &[vec![0.0], vec![10.0]]);
        let b1 = buf(1, &[vec![3.0]]);
        let map: BTreeMap<usize, &SelectionBuffer> = [(0, &b0), (1, &b1)].into_iter().collect();
        let s = initial_scores(0, &map, &g, 0.05).unwrap();
        assert_eq!(s.degree, 1);
        assert_eq!(s.get(1), agent_similarity(&b1, &b0, 0.05).unwrap());
        assert_eq!(s.get(0), agent_similarity(&b0, &b1, 0.05).unwrap());
        assert_eq!(s.get(2), 0.0);
        assert!(!s.scores.contains_key(&2));
    }

    #[test]
    fn clique_scores_match_pairwise_table() {
        let g = CommGraph::complete(3);
        let feats = [vec![0.0f32, 0.0], vec![3.0, 4.0], vec![6.0, 8.0]];
        let bufs: Vec<SelectionBuffer> = feats
            .iter()
            .enumerate()
            .map(|(v, f)| buf(v, std::slice::from_ref(f)))
            .collect();
        let map: BTreeMap<usize, &SelectionBuffer> = bufs.iter().enumerate().collect();
        // One-frame buffers: agent similarity is the frame similarity.
        let dist = |a: usize, b: usize| {
            let (x, y) = (&feats[a], &feats[b]);
            ((x[0] - y[0]).powi(2) as f64 + (x[1] - y[1]).powi(2) as f64).sqrt()
        };
        let table = |a: usize, b: usize| (-0.05 * dist(a, b)).exp();
        for owner in 0..3 {
            let s = initial_scores(owner, &map, &g, 0.05).unwrap();
            for j in 0..3 {
                let others: Vec<usize> = (0..3).filter(|&k| k != j).collect();
                let expect = (table(j, others[0]) + table(j, others[1])) / 2.0;
                assert!((s.get(j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isolated_agent_is_neutral() {
        let g = CommGraph::new(2, []).unwrap();
        let b = buf(0, &[vec![1.0]]);
        let map: BTreeMap<usize, &SelectionBuffer> = [(0, &b)].into_iter().collect();
        let s = initial_scores(0, &map, &g, 0.05).unwrap();
        assert_eq!(s.scores.len(), 1);
        assert_eq!(s.get(0), ISOLATED_SCORE);
    }

    #[test]
    fn missing_buffer_is_reported() {
        let g = CommGraph::path(2);
        let b = buf(0, &[vec![1.0]]);
        let map: BTreeMap<usize, &SelectionBuffer> = [(0, &b)].into_iter().collect();
        assert_eq!(
            initial_scores(0, &map, &g, 0.05),
            Err(ScoringError::MissingBuffer { owner: 0, missing: 1 })
        );
    }

    fn features(max: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
        prop::collection::vec(prop::collection::vec(-20.0f32..20.0, 3), 1..max)
    }

    proptest! {
        #[test]
        fn covering_buffer_growth_never_lowers_similarity(x in features(6), extra in features(4), y in features(6)) {
            let small = buf(0, &x);
            let mut grown = x.clone();
            grown.extend(extra);
            let big = buf(0, &grown);
            let target = buf(1, &y);
            let before = agent_similarity(&small, &target, 0.05).unwrap();
            let after = agent_similarity(&big, &target, 0.05).unwrap();
            prop_assert!(after >= before);
            prop_assert!(before > 0.0 && after <= 1.0);
        }

        #[test]
        fn frame_order_does_not_matter(x in features(6), y in features(6)) {
            let a = buf(0, &x);
            let b = buf(1, &y);
            let mut xr = x.clone();
            xr.reverse();
            let mut yr = y.clone();
            yr.rotate_left(1);
            let v = agent_similarity(&a, &b, 0.05).unwrap();
            let w = agent_similarity(&buf(0, &xr), &buf(1, &yr), 0.05).unwrap();
            prop_assert!((v - w).abs() < 1e-12);
        }

        #[test]
        fn scores_stay_in_unit_interval(x in features(4), y in features(4), z in features(4)) {
            let g = CommGraph::path(3);
            let bufs = [buf(0, &x), buf(1, &y), buf(2, &z)];
            let map: BTreeMap<usize, &SelectionBuffer> = bufs.iter().enumerate().collect();
            for owner in 0..3 {
                let s = initial_scores(owner, &map, &g, 0.05).unwrap();
                for v in s.scores.values() {
                    prop_assert!((0.0..=1.0).contains(v));
                }
            }
        }
    }
}
