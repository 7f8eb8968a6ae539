//! Synthetic sequence tasks.
//!
//! Content tokens are `0..alphabet`. Special tokens (delimiters and keys) are
//! taken from the top of the model vocabulary: special `j` is `vocab - 1 - j`.
//! A prompt is `content ++ [special]`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::TokenId;
use crate::tensor::Rng;

use super::{Example, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TaskKind {
    Copy,
    Reverse,
    /// `target[i] = (content[i] + k) mod alphabet`.
    Shift(usize),
    /// The final prompt token selects the shift: key `j` shifts by `j`.
    KeyedLookup,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Copy => f.write_str("copy"),
            TaskKind::Reverse => f.write_str("reverse"),
            TaskKind::Shift(k) => write!(f, "shift_{k}"),
            TaskKind::KeyedLookup => f.write_str("keyed_lookup"),
        }
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "keyed_lookup" => Ok(TaskKind::KeyedLookup),
            _ => s
                .strip_prefix("shift_")
                .and_then(|k| k.parse().ok())
                .map(TaskKind::Shift)
                .ok_or_else(|| format!("unknown task {s:?} (copy, reverse, shift_<k>, keyed_lookup)")),
        }
    }
}

impl TryFrom<String> for TaskKind {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<TaskKind> for String {
    fn from(k: TaskKind) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Number of content tokens.
    pub alphabet: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Delimiters drawn uniformly per example (copy, reverse, shift), or
    /// number of keys (keyed lookup).
    pub specials: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            kind: TaskKind::Copy,
            alphabet: 16,
            min_len: 4,
            max_len: 8,
            specials: 1,
            n_train: 2000,
            n_dev: 200,
            n_test: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub name: String,
    pub spec: TaskSpec,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

/// Target for `content` under `kind`; `special` is the index of the final
/// prompt token among the special tokens.
pub fn task_target(kind: TaskKind, content: &[TokenId], special: usize, alphabet: usize) -> Vec<TokenId> {
    let shift = |k: usize| content.iter().map(|&t| ((t as usize + k) % alphabet) as TokenId).collect();
    match kind {
        TaskKind::Copy => content.to_vec(),
        TaskKind::Reverse => content.iter().rev().copied().collect(),
        TaskKind::Shift(k) => shift(k),
        TaskKind::KeyedLookup => shift(special),
    }
}

pub fn special_token(vocab_size: usize, j: usize) -> TokenId {
    (vocab_size - 1 - j) as TokenId
}

impl TaskSpec {
    fn validate(&self, vocab_size: usize, max_seq_len: usize) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidTask(m));
        if self.alphabet < 2 {
            return bad(format!("alphabet {} must be at least 2", self.alphabet));
        }
        if self.specials == 0 {
            return bad("need at least one delimiter or key".into());
        }
        if self.alphabet + self.specials > vocab_size {
            return bad(format!(
                "alphabet {} plus {} special tokens exceeds vocab {vocab_size}",
                self.alphabet, self.specials
            ));
        }
        if self.kind == TaskKind::KeyedLookup && self.specials < 2 {
            return bad("keyed_lookup needs at least two keys".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("invalid length range {}..={}", self.min_len, self.max_len));
        }
        // prompt (content + special) plus all but the last target token
        let seq = 2 * self.max_len;
        if seq > max_seq_len {
            return bad(format!("sequences of {seq} tokens exceed max_seq_len {max_seq_len}"));
        }
        if self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 {
            return bad("every split needs at least one example".into());
        }
        Ok(())
    }
}

/// Deterministic dataset for `spec`. Prompts are unique across all splits.
pub fn make_task(spec: &TaskSpec, vocab_size: usize, max_seq_len: usize) -> Result<TaskDataset, TrainError> {
    spec.validate(vocab_size, max_seq_len)?;
    let total = spec.n_train + spec.n_dev + spec.n_test;
    let mut rng = Rng::new(spec.seed).fork(0x7a5c);
    let mut seen = HashSet::with_capacity(total);
    let mut examples = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while examples.len() < total {
        attempts += 1;
        if attempts > 50 * total + 1000 {
            return Err(TrainError::InvalidTask(format!(
                "could not draw {total} distinct prompts from this alphabet and length range"
            )));
        }
        let len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
        let content: Vec<TokenId> = (0..len).map(|_| rng.below(spec.alphabet) as TokenId).collect();
        let special = rng.below(spec.specials);
        let mut prompt = content.clone();
        prompt.push(special_token(vocab_size, special));
        if !seen.insert(prompt.clone()) {
            continue;
        }
        let target = task_target(spec.kind, &content, special, spec.alphabet);
        examples.push(Example { prompt, target });
    }
    let test = examples.split_off(spec.n_train + spec.n_dev);
    let dev = examples.split_off(spec.n_train);
    Ok(TaskDataset { name: spec.kind.to_string(), spec: spec.clone(), train: examples, dev, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definitions() {
        assert_eq!(task_target(TaskKind::Copy, &[5, 9, 2], 0, 16), [5, 9, 2]);
        assert_eq!(task_target(TaskKind::Shift(1), &[5, 9, 2], 0, 10), [6, 0, 3]);
        assert_eq!(task_target(TaskKind::Reverse, &[5, 9, 2], 0, 10), [2, 9, 5]);
        let a = task_target(TaskKind::KeyedLookup, &[5, 9, 2], 0, 10);
        let b = task_target(TaskKind::KeyedLookup, &[5, 9, 2], 1, 10);
        assert_ne!(a, b);
    }

    #[test]
    fn names_round_trip() {
        for k in [TaskKind::Copy, TaskKind::Reverse, TaskKind::Shift(3), TaskKind::KeyedLookup] {
            assert_eq!(k.to_string().parse::<TaskKind>().unwrap(), k);
        }
        assert!("shift_x".parse::<TaskKind>().is_err());
    }

    #[test]
    fn splits_are_disjoint_and_reproducible() {
        let spec = TaskSpec { kind: TaskKind::KeyedLookup, specials: 2, n_train: 300, n_dev: 50, n_test: 50, ..TaskSpec::default() };
        let a = make_task(&spec, 64, 64).unwrap();
        let b = make_task(&spec, 64, 64).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<_> = a.train.iter().chain(&a.dev).chain(&a.test).map(|e| &e.prompt).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
        assert!(a.train.iter().all(|e| *e.prompt.last().unwrap() >= 62));
    }

    #[test]
    fn keyed_prompts_differing_only_in_key() {
        let spec = TaskSpec { kind: TaskKind::KeyedLookup, specials: 2, ..TaskSpec::default() };
        let content = [1, 2, 3];
        let t0 = task_target(spec.kind, &content, 0, spec.alphabet);
        let t1 = task_target(spec.kind, &content, 1, spec.alphabet);
        assert_ne!(t0, t1);
    }

    #[test]
    fn invalid_sizes() {
        let tiny = TaskSpec { alphabet: 2, min_len: 1, max_len: 1, n_train: 10, ..TaskSpec::default() };
        assert!(matches!(make_task(&tiny, 64, 64), Err(TrainError::InvalidTask(_))));
        let long = TaskSpec { max_len: 40, ..TaskSpec::default() };
        assert!(make_task(&long, 64, 64).is_err());
        let wide = TaskSpec { alphabet: 64, ..TaskSpec::default() };
        assert!(make_task(&wide, 64, 64).is_err());
    }
}
