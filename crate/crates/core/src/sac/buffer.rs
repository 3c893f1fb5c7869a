use rand::Rng;

use super::SacError;
use crate::imaging::ImageState;
use crate::neural::{Scalar, Tensor, ACTION_DIM};
use crate::tone_curve::ActionVector;

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: ImageState,
    pub action: ActionVector,
    pub reward: f64,
    pub next_state: ImageState,
    /// Set on the last step of an episode.
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions, sampled uniformly with replacement.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self, SacError> {
        if capacity == 0 {
            return Err(SacError::Config(vec!["buffer capacity must be positive".into()]));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            pushed: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total pushes since construction, including overwritten ones.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    /// Adds a transition, evicting the oldest once full.
    pub fn push(&mut self, t: Transition) -> Result<(), SacError> {
        if !t.reward.is_finite() {
            return Err(SacError::Precondition(format!("non-finite reward {}", t.reward)));
        }
        if t.state.x().dims() != t.next_state.x().dims() {
            return Err(SacError::Precondition("state and next state differ in shape".into()));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushed += 1;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<&Transition>, SacError> {
        if self.items.is_empty() {
            return Err(SacError::Precondition("cannot sample from an empty replay buffer".into()));
        }
        Ok((0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}

/// Network-ready tensors for a set of transitions.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub states: Tensor<T>,
    pub actions: Tensor<T>,
    pub rewards: Vec<T>,
    pub next_states: Tensor<T>,
    pub terminals: Vec<bool>,
}

fn stack_states(states: &[&ImageState]) -> Result<Tensor<f32>, SacError> {
    let first = states
        .first()
        .ok_or_else(|| SacError::Precondition("empty batch".into()))?;
    let (h, w) = first.spatial();
    let c = first.channels();
    let per = first.len();
    let mut data = vec![0.0f32; per * states.len()];
    for (s, chunk) in states.iter().zip(data.chunks_exact_mut(per)) {
        if s.len() != per {
            return Err(SacError::Precondition("states in a batch differ in shape".into()));
        }
        s.write_combined(chunk);
    }
    Ok(Tensor::from_vec(&[states.len(), c, h, w], data)?)
}

/// Single-state tensor `[1, 2C, h, w]`.
pub fn state_tensor(state: &ImageState) -> Result<Tensor<f32>, SacError> {
    stack_states(&[state])
}

impl Batch<f32> {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self, SacError> {
        let states: Vec<&ImageState> = items.iter().map(|t| &t.state).collect();
        let next: Vec<&ImageState> = items.iter().map(|t| &t.next_state).collect();
        let actions = items
            .iter()
            .flat_map(|t| t.action.to_array().map(|v| v as f32))
            .collect();
        Ok(Self {
            states: stack_states(&states)?,
            actions: Tensor::from_vec(&[items.len(), ACTION_DIM], actions)?,
            rewards: items.iter().map(|t| t.reward as f32).collect(),
            next_states: stack_states(&next)?,
            terminals: items.iter().map(|t| t.terminal).collect(),
        })
    }
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Batch<U> {
        Batch {
            states: self.states.cast(),
            actions: self.actions.cast(),
            rewards: self
                .rewards
                .iter()
                .map(|&r| U::from_f64_lossy(r.to_f64_lossy()))
                .collect(),
            next_states: self.next_states.cast(),
            terminals: self.terminals.clone(),
        }
    }
}
