use std::sync::Arc;

use serde::Serialize;

use crate::peft::AdapterSet;
use crate::tensor::{log_softmax, Scalar};

use super::{forward_sequence, Model, ModelError, Session, TokenId};

/// Result of one generation request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    /// Sum of token log-probabilities of the returned hypothesis.
    pub log_prob: f64,
    /// Vector-generator runs attributed to this request.
    pub generator_invocations: usize,
}

/// Source of next-token logits for beam search.
pub trait BeamStepper<T> {
    type State: Clone;

    /// Consumes the prompt and returns the state plus next-token logits.
    fn start(&self, prompt: &[TokenId]) -> Result<(Self::State, Vec<T>), ModelError>;
    /// Appends `token` to `state` and returns the following logits.
    fn step(&self, state: &mut Self::State, token: TokenId) -> Result<Vec<T>, ModelError>;
    fn generator_invocations(&self, _state: &Self::State) -> usize {
        0
    }
}

/// Steps through a KV-cached [`Session`]; beams are expanded by cloning
/// their parent's session.
pub struct CachedStepper<T> {
    pub model: Arc<Model<T>>,
    pub adapter: Arc<AdapterSet<T>>,
}

impl<T: Scalar> BeamStepper<T> for CachedStepper<T> {
    type State = Session<T>;

    fn start(&self, prompt: &[TokenId]) -> Result<(Session<T>, Vec<T>), ModelError> {
        let mut s = Session::new(Arc::clone(&self.model), Arc::clone(&self.adapter))?;
        let logits = s.prefill(prompt)?;
        Ok((s, logits))
    }

    fn step(&self, state: &mut Session<T>, token: TokenId) -> Result<Vec<T>, ModelError> {
        state.decode_step(token)
    }

    fn generator_invocations(&self, state: &Session<T>) -> usize {
        state.generator_invocations()
    }
}

/// Recomputes the whole sequence at every step; the reference for cached
/// decoding.
pub struct UncachedStepper<'a, T> {
    pub model: &'a Model<T>,
    pub adapter: &'a AdapterSet<T>,
}

#[derive(Clone)]
pub struct UncachedState {
    tokens: Vec<TokenId>,
    prompt_len: usize,
}

impl<T: Scalar> UncachedStepper<'_, T> {
    fn last_logits(&self, s: &UncachedState) -> Result<Vec<T>, ModelError> {
        let out = forward_sequence(self.model, self.adapter, &s.tokens, s.prompt_len, false)?;
        Ok(out.logits.row(out.logits.rows() - 1).to_vec())
    }
}

impl<T: Scalar> BeamStepper<T> for UncachedStepper<'_, T> {
    type State = UncachedState;

    fn start(&self, prompt: &[TokenId]) -> Result<(UncachedState, Vec<T>), ModelError> {
        if prompt.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        let s = UncachedState {
            tokens: prompt.to_vec(),
            prompt_len: prompt.len(),
        };
        let logits = self.last_logits(&s)?;
        Ok((s, logits))
    }

    fn step(&self, state: &mut UncachedState, token: TokenId) -> Result<Vec<T>, ModelError> {
        state.tokens.push(token);
        self.last_logits(state)
    }
}

struct Beam<S> {
    tokens: Vec<TokenId>,
    log_prob: f64,
    state: Option<S>,
    logits: Vec<f64>,
    invocations: usize,
}

struct Candidate {
    score: f64,
    total: f64,
    token: TokenId,
    parent: usize,
}

/// Beam search over `max_new` tokens.
///
/// Hypotheses are ranked by length-normalized log-probability; ties go to
/// the lower token id, then the lower parent beam index. `beam_size == 1` is
/// greedy decoding.
pub fn beam_search<T: Scalar, S: BeamStepper<T>>(
    stepper: &S,
    prompt: &[TokenId],
    max_new: usize,
    beam_size: usize,
) -> Result<Generation, ModelError> {
    if beam_size == 0 {
        return Err(ModelError::InvalidBeam);
    }
    if prompt.is_empty() {
        return Err(ModelError::EmptyPrompt);
    }
    if max_new == 0 {
        return Ok(Generation {
            tokens: Vec::new(),
            log_prob: 0.0,
            generator_invocations: 0,
        });
    }
    let (state, logits) = stepper.start(prompt)?;
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        log_prob: 0.0,
        invocations: stepper.generator_invocations(&state),
        state: Some(state),
        logits: logits.iter().map(|v| v.as_f64()).collect(),
    }];

    for step in 0..max_new {
        let len = (step + 1) as f64;
        let mut cands = Vec::with_capacity(beams.len() * beams[0].logits.len());
        for (bi, b) in beams.iter().enumerate() {
            let lp = log_softmax(&b.logits)?;
            for (tok, l) in lp.into_iter().enumerate() {
                let total = b.log_prob + l;
                cands.push(Candidate {
                    score: total / len,
                    total,
                    token: tok as TokenId,
                    parent: bi,
                });
            }
        }
        cands.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.token.cmp(&b.token))
                .then(a.parent.cmp(&b.parent))
        });
        cands.truncate(beam_size);

        let last_step = step + 1 == max_new;
        let mut remaining_children = vec![0usize; beams.len()];
        for c in &cands {
            remaining_children[c.parent] += 1;
        }
        let mut next = Vec::with_capacity(cands.len());
        for c in cands {
            let parent = &mut beams[c.parent];
            remaining_children[c.parent] -= 1;
            let mut tokens = parent.tokens.clone();
            tokens.push(c.token);
            let (state, logits, invocations) = if last_step {
                (None, Vec::new(), parent.invocations)
            } else {
                let mut st = if remaining_children[c.parent] == 0 {
                    parent.state.take().expect("parent state present")
                } else {
                    parent.state.as_ref().expect("parent state present").clone()
                };
                let logits = stepper.step(&mut st, c.token)?;
                let inv = stepper.generator_invocations(&st);
                (Some(st), logits.iter().map(|v| v.as_f64()).collect(), inv)
            };
            next.push(Beam {
                tokens,
                log_prob: c.total,
                state,
                logits,
                invocations,
            });
        }
        beams = next;
    }

    // Candidates were sorted, so the first surviving beam is the best.
    let best = beams.into_iter().next().expect("at least one beam");
    Ok(Generation {
        tokens: best.tokens,
        log_prob: best.log_prob,
        generator_invocations: best.invocations,
    })
}

/// KV-cached generation.
pub fn generate<T: Scalar>(
    model: &Arc<Model<T>>,
    adapter: &Arc<AdapterSet<T>>,
    prompt: &[TokenId],
    max_new: usize,
    beam_size: usize,
) -> Result<Generation, ModelError> {
    adapter.check_compatible(model.config())?;
    let stepper = CachedStepper {
        model: Arc::clone(model),
        adapter: Arc::clone(adapter),
    };
    beam_search(&stepper, prompt, max_new, beam_size)
}

/// Generation that recomputes the full sequence for every token.
pub fn generate_uncached<T: Scalar>(
    model: &Model<T>,
    adapter: &AdapterSet<T>,
    prompt: &[TokenId],
    max_new: usize,
    beam_size: usize,
) -> Result<Generation, ModelError> {
    let stepper = UncachedStepper { model, adapter };
    beam_search(&stepper, prompt, max_new, beam_size)
}
