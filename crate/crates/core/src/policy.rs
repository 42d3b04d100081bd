//! Stationary Markov policy profiles on a product of simplices.
//!
//! A profile is stored as one flat vector laid out player-major, then state,
//! then own action: coordinate `(i, s, a_i)` lives at
//! `offset(i) + s * A_i + a_i`. Every gradient, score vector and Jacobian in
//! the crate uses this layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for profiles built in memory.
pub const ROW_TOL: f64 = 1e-12;
/// Row-sum tolerance for profiles read from text files; rows are
/// re-normalized when they are off by more than [`ROW_TOL`].
pub const LOAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyShape {
    n_states: usize,
    actions: Vec<usize>,
    offsets: Vec<usize>,
    dim: usize,
}

impl PolicyShape {
    pub fn new(n_states: usize, actions: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(actions.len());
        let mut acc = 0;
        for &a in &actions {
            offsets.push(acc);
            acc += n_states * a;
        }
        PolicyShape {
            n_states,
            actions,
            offsets,
            dim: acc,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_players(&self) -> usize {
        self.actions.len()
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn n_actions(&self, player: usize) -> usize {
        self.actions[player]
    }

    /// Σ_i A_i.
    pub fn total_actions(&self) -> usize {
        self.actions.iter().sum()
    }

    /// Flattened dimension |S| · Σ_i A_i.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn player_range(&self, player: usize) -> std::ops::Range<usize> {
        let start = self.offsets[player];
        start..start + self.n_states * self.actions[player]
    }

    pub fn block_start(&self, player: usize, state: usize) -> usize {
        self.offsets[player] + state * self.actions[player]
    }

    pub fn block_range(&self, player: usize, state: usize) -> std::ops::Range<usize> {
        let start = self.block_start(player, state);
        start..start + self.actions[player]
    }

    pub fn index(&self, player: usize, state: usize, action: usize) -> usize {
        self.block_start(player, state) + action
    }

    /// Iterates over all `(player, state)` blocks in layout order.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_players()).flat_map(move |i| (0..self.n_states).map(move |s| (i, s)))
    }

    pub fn n_blocks(&self) -> usize {
        self.n_players() * self.n_states
    }

    /// Number of deterministic profiles, Π_i A_i^{|S|}, or `None` on overflow.
    pub fn deterministic_count(&self) -> Option<u128> {
        let mut count: u128 = 1;
        for &a in &self.actions {
            for _ in 0..self.n_states {
                count = count.checked_mul(a as u128)?;
            }
        }
        Some(count)
    }

    /// Decodes a mixed-radix index into per-block action choices, with the
    /// last block varying fastest.
    pub fn deterministic_choices(&self, mut index: u128) -> Vec<usize> {
        let blocks: Vec<(usize, usize)> = self.blocks().collect();
        let mut choices = vec![0; blocks.len()];
        for (k, &(i, _)) in blocks.iter().enumerate().rev() {
            let a = self.actions[i] as u128;
            choices[k] = (index % a) as usize;
            index /= a;
        }
        choices
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyProfile {
    shape: PolicyShape,
    probs: Vec<f64>,
}

impl PolicyProfile {
    /// Builds a profile from a flat vector, requiring every row to be a
    /// probability vector within [`ROW_TOL`].
    pub fn from_flat(shape: &PolicyShape, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != shape.dim() {
            return Err(Error::DimensionMismatch {
                expected: shape.dim(),
                got: probs.len(),
            });
        }
        for (i, s) in shape.blocks() {
            let row = &probs[shape.block_range(i, s)];
            if let Some(bad) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
                return Err(Error::InvalidPolicy(format!(
                    "player {i} state {s}: entry {bad} is not a probability"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidPolicy(format!(
                    "player {i} state {s}: row sums to {sum}"
                )));
            }
        }
        Ok(PolicyProfile {
            shape: shape.clone(),
            probs,
        })
    }

    /// Builds a profile from nested rows `[player][state][action]` with the
    /// looser file tolerance, re-normalizing rows that drift past [`ROW_TOL`].
    pub fn from_nested(shape: &PolicyShape, rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        if rows.len() != shape.n_players() {
            return Err(Error::InvalidPolicy(format!(
                "expected {} players, got {}",
                shape.n_players(),
                rows.len()
            )));
        }
        let mut probs = Vec::with_capacity(shape.dim());
        for (i, per_state) in rows.iter().enumerate() {
            if per_state.len() != shape.n_states() {
                return Err(Error::InvalidPolicy(format!(
                    "player {i}: expected {} states, got {}",
                    shape.n_states(),
                    per_state.len()
                )));
            }
            for (s, row) in per_state.iter().enumerate() {
                if row.len() != shape.n_actions(i) {
                    return Err(Error::InvalidPolicy(format!(
                        "player {i} state {s}: expected {} actions, got {}",
                        shape.n_actions(i),
                        row.len()
                    )));
                }
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::InvalidPolicy(format!(
                        "player {i} state {s}: negative or non-finite entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > LOAD_TOL {
                    return Err(Error::InvalidPolicy(format!(
                        "player {i} state {s}: row sums to {sum}"
                    )));
                }
                if (sum - 1.0).abs() > ROW_TOL {
                    probs.extend(row.iter().map(|p| p / sum));
                } else {
                    probs.extend_from_slice(row);
                }
            }
        }
        PolicyProfile::from_flat(shape, probs)
    }

    pub fn uniform(shape: &PolicyShape) -> Self {
        let mut probs = vec![0.0; shape.dim()];
        for (i, s) in shape.blocks() {
            let a = shape.n_actions(i) as f64;
            for p in &mut probs[shape.block_range(i, s)] {
                *p = 1.0 / a;
            }
        }
        PolicyProfile {
            shape: shape.clone(),
            probs,
        }
    }

    /// Deterministic profile from per-block choices in [`PolicyShape::blocks`] order.
    pub fn deterministic(shape: &PolicyShape, choices: &[usize]) -> Result<Self> {
        if choices.len() != shape.n_blocks() {
            return Err(Error::DimensionMismatch {
                expected: shape.n_blocks(),
                got: choices.len(),
            });
        }
        let mut probs = vec![0.0; shape.dim()];
        for ((i, s), &a) in shape.blocks().zip(choices) {
            if a >= shape.n_actions(i) {
                return Err(Error::InvalidPolicy(format!(
                    "player {i} state {s}: action {a} out of range"
                )));
            }
            probs[shape.index(i, s, a)] = 1.0;
        }
        Ok(PolicyProfile {
            shape: shape.clone(),
            probs,
        })
    }

    /// Same mixed row `row` for every player and state (all players must
    /// share the action count).
    pub fn constant_rows(shape: &PolicyShape, row: &[f64]) -> Result<Self> {
        let mut probs = Vec::with_capacity(shape.dim());
        for (i, _) in shape.blocks() {
            if shape.n_actions(i) != row.len() {
                return Err(Error::DimensionMismatch {
                    expected: shape.n_actions(i),
                    got: row.len(),
                });
            }
            probs.extend_from_slice(row);
        }
        PolicyProfile::from_flat(shape, probs)
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    pub fn row(&self, player: usize, state: usize) -> &[f64] {
        &self.probs[self.shape.block_range(player, state)]
    }

    pub fn prob(&self, player: usize, state: usize, action: usize) -> f64 {
        self.probs[self.shape.index(player, state, action)]
    }

    /// κ_i = min_{s, a_i} π_i(a_i | s).
    pub fn kappa(&self, player: usize) -> f64 {
        self.probs[self.shape.player_range(player)]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_kappa(&self) -> f64 {
        (0..self.shape.n_players())
            .map(|i| self.kappa(i))
            .fold(f64::INFINITY, f64::min)
    }

    /// Per-block chosen actions when every row is a vertex.
    pub fn deterministic_choices(&self) -> Option<Vec<usize>> {
        self.shape
            .blocks()
            .map(|(i, s)| {
                let row = self.row(i, s);
                let ones: Vec<usize> = row
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p == 1.0)
                    .map(|(a, _)| a)
                    .collect();
                if ones.len() == 1 && row.iter().filter(|p| **p != 0.0).count() == 1 {
                    Some(ones[0])
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic_choices().is_some()
    }

    pub fn dist_sq(&self, other: &PolicyProfile) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Rows as nested `[player][state][action]` vectors.
    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.shape.n_players())
            .map(|i| {
                (0..self.shape.n_states())
                    .map(|s| self.row(i, s).to_vec())
                    .collect()
            })
            .collect()
    }

    /// Replaces player `i`'s rows with those of `other`.
    pub fn with_player_from(&self, player: usize, other: &PolicyProfile) -> PolicyProfile {
        let mut probs = self.probs.clone();
        let range = self.shape.player_range(player);
        probs[range.clone()].copy_from_slice(&other.probs[range]);
        PolicyProfile {
            shape: self.shape.clone(),
            probs,
        }
    }

    /// Maximum deviation of any row sum from one.
    pub fn max_row_error(&self) -> f64 {
        self.shape
            .blocks()
            .map(|(i, s)| (self.row(i, s).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_parts_unchecked(shape: &PolicyShape, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), shape.dim());
        PolicyProfile {
            shape: shape.clone(),
            probs,
        }
    }
}

/// On-disk policy document: `{"policy": [[[p, ...], ...], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub policy: Vec<Vec<Vec<f64>>>,
}

impl PolicyFile {
    pub fn from_profile(pi: &PolicyProfile) -> Self {
        PolicyFile {
            policy: pi.to_nested(),
        }
    }
}

pub fn parse_policy_json(text: &str, shape: &PolicyShape) -> Result<PolicyProfile> {
    let file: PolicyFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: "policy file".into(),
        message: e.to_string(),
    })?;
    PolicyProfile::from_nested(shape, &file.policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> PolicyShape {
        PolicyShape::new(2, vec![2, 3])
    }

    #[test]
    fn layout_offsets() {
        let sh = shape();
        assert_eq!(sh.dim(), 2 * 5);
        assert_eq!(sh.index(0, 1, 1), 3);
        assert_eq!(sh.index(1, 0, 0), 4);
        assert_eq!(sh.index(1, 1, 2), 9);
        assert_eq!(sh.deterministic_count(), Some(4 * 9));
    }

    #[test]
    fn deterministic_round_trip() {
        let sh = shape();
        let choices = sh.deterministic_choices(7);
        let pi = PolicyProfile::deterministic(&sh, &choices).unwrap();
        assert_eq!(pi.deterministic_choices().unwrap(), choices);
        assert!(pi.is_deterministic());
        assert!(!PolicyProfile::uniform(&sh).is_deterministic());
    }

    #[test]
    fn rejects_bad_rows() {
        let sh = PolicyShape::new(1, vec![2]);
        assert!(PolicyProfile::from_flat(&sh, vec![0.5, 0.6]).is_err());
        assert!(PolicyProfile::from_flat(&sh, vec![1.5, -0.5]).is_err());
        assert!(PolicyProfile::from_flat(&sh, vec![1.0]).is_err());
    }

    #[test]
    fn nested_load_renormalizes_within_tolerance() {
        let sh = PolicyShape::new(1, vec![2]);
        let pi = PolicyProfile::from_nested(&sh, &[vec![vec![0.5, 0.5000000001]]]).unwrap();
        assert!(pi.max_row_error() <= ROW_TOL);
        assert!(PolicyProfile::from_nested(&sh, &[vec![vec![0.5, 0.6]]]).is_err());
    }

    #[test]
    fn kappa_is_row_minimum() {
        let sh = PolicyShape::new(1, vec![2, 2]);
        let pi = PolicyProfile::from_flat(&sh, vec![0.9, 0.1, 0.3, 0.7]).unwrap();
        assert_eq!(pi.kappa(0), 0.1);
        assert_eq!(pi.kappa(1), 0.3);
    }

    #[test]
    fn malformed_policy_json_is_parse_error() {
        let sh = PolicyShape::new(1, vec![2]);
        let err = parse_policy_json("{\"policy\": [[0.5]", &sh).unwrap_err();
        assert_eq!(err.code(), "PARSE_ERROR");
    }
}
