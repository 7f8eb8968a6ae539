use serde::{Deserialize, Serialize};

use crate::backbone::{forward_sequence, Model, SequenceOutput, TokenId};
use crate::peft::AdapterSet;
use crate::tensor::{log_softmax, Matrix, Scalar};

use super::TrainError;

/// One prompt/target pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub prompt: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl Example {
    /// Teacher-forced input `prompt ++ target[..m-1]`. Row `prompt_len - 1 + i`
    /// of the logits predicts `target[i]`.
    pub fn input(&self) -> Vec<TokenId> {
        let mut v = self.prompt.clone();
        v.extend_from_slice(&self.target[..self.target.len().saturating_sub(1)]);
        v
    }

    fn check(&self) -> Result<(), TrainError> {
        if self.target.is_empty() {
            return Err(TrainError::EmptyTargets);
        }
        if self.prompt.is_empty() {
            return Err(TrainError::Model(crate::backbone::ModelError::EmptyPrompt));
        }
        Ok(())
    }
}

/// Cross-entropy of one logit row against `target`, in nats.
pub fn cross_entropy<T: Scalar>(logits: &[T], target: TokenId) -> Result<f64, TrainError> {
    let lp = log_softmax(logits)?;
    Ok(-lp[target as usize].as_f64())
}

/// Forward pass for one example with the summed target loss, the number of
/// target tokens, and how many of them the argmax predicts correctly.
pub struct ExampleForward<T> {
    pub output: SequenceOutput<T>,
    pub loss_sum: f64,
    pub tokens: usize,
    pub correct: usize,
}

pub fn forward_example<T: Scalar>(
    model: &Model<T>,
    adapter: &AdapterSet<T>,
    ex: &Example,
    record: bool,
) -> Result<ExampleForward<T>, TrainError> {
    ex.check()?;
    let output = forward_sequence(model, adapter, &ex.input(), ex.prompt.len(), record)?;
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for (i, &t) in ex.target.iter().enumerate() {
        let row = output.logits.row(ex.prompt.len() - 1 + i);
        loss_sum += cross_entropy(row, t)?;
        if argmax(row) == t as usize {
            correct += 1;
        }
    }
    Ok(ExampleForward { output, loss_sum, tokens: ex.target.len(), correct })
}

/// Gradient of `weight · Σ CE` with respect to the logits; prompt rows are zero.
pub fn dlogits<T: Scalar>(logits: &Matrix<T>, ex: &Example, weight: f64) -> Matrix<T> {
    let mut d = Matrix::zeros(logits.rows(), logits.cols());
    for (i, &t) in ex.target.iter().enumerate() {
        let r = ex.prompt.len() - 1 + i;
        let lp = log_softmax(logits.row(r)).expect("checked by forward");
        for (j, (g, l)) in d.row_mut(r).iter_mut().zip(lp).enumerate() {
            let p = l.as_f64().exp() - if j == t as usize { 1.0 } else { 0.0 };
            *g = T::of(p * weight);
        }
    }
    d
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Aggregate loss and teacher-forced token accuracy over a set of examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub tokens: usize,
}

/// Mean cross-entropy over every target token in `examples`.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    adapter: &AdapterSet<T>,
    examples: &[Example],
) -> Result<Evaluation, TrainError> {
    let (mut loss, mut tokens, mut correct) = (0.0, 0, 0);
    for ex in examples {
        let f = forward_example(model, adapter, ex, false)?;
        loss += f.loss_sum;
        tokens += f.tokens;
        correct += f.correct;
    }
    if tokens == 0 {
        return Err(TrainError::EmptyTargets);
    }
    Ok(Evaluation {
        loss: loss / tokens as f64,
        accuracy: correct as f64 / tokens as f64,
        tokens,
    })
}

pub fn loss<T: Scalar>(
    model: &Model<T>,
    adapter: &AdapterSet<T>,
    batch: &[Example],
) -> Result<f64, TrainError> {
    Ok(evaluate(model, adapter, batch)?.loss)
}
