//! Particle containers.

use serde::{Deserialize, Serialize};

/// A state path x_{1:t} together with the parameter vector carried with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedState<S, P> {
    pub path: Vec<S>,
    pub params: P,
}

impl<S, P> ExtendedState<S, P> {
    pub fn new(path: Vec<S>, params: P) -> Self {
        Self { path, params }
    }

    /// Current time index; equals the path length.
    pub fn t(&self) -> usize {
        self.path.len()
    }
}

/// N weighted particles at a single time index.
///
/// Only the current state value of each particle is held here; full paths
/// are recovered from a [`Genealogy`].
#[derive(Clone, Debug)]
pub struct ParticleSystem<S, P, St> {
    pub states: Vec<S>,
    pub params: Vec<P>,
    pub stats: Vec<St>,
    pub log_weights: Vec<f64>,
    pub ancestors: Vec<usize>,
    pub t: usize,
}

impl<S, P, St> ParticleSystem<S, P, St> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.states.len();
        n >= 1 && self.params.len() == n && self.stats.len() == n && self.log_weights.len() == n && self.ancestors.len() == n
    }
}

/// Per-time particle values and ancestor links, enough to trace any
/// surviving particle back to time 1.
#[derive(Clone, Debug)]
pub struct Genealogy<S> {
    states: Vec<Vec<S>>,
    /// `ancestors[t][i]` is the index at time t−1 of particle i at time t;
    /// `ancestors[0]` is unused.
    ancestors: Vec<Vec<usize>>,
}

impl<S: Clone> Genealogy<S> {
    pub fn with_capacity(t: usize) -> Self {
        Self { states: Vec::with_capacity(t), ancestors: Vec::with_capacity(t) }
    }

    pub fn push(&mut self, states: Vec<S>, ancestors: Vec<usize>) {
        self.states.push(states);
        self.ancestors.push(ancestors);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states_at(&self, t: usize) -> &[S] {
        &self.states[t]
    }

    /// Path of particle `i` at the final time.
    pub fn trace(&self, mut i: usize) -> Vec<S> {
        let t_len = self.states.len();
        let mut out = Vec::with_capacity(t_len);
        for t in (0..t_len).rev() {
            out.push(self.states[t][i].clone());
            if t > 0 {
                i = self.ancestors[t][i];
            }
        }
        out.reverse();
        out
    }

    /// Index at time `t` of the ancestor of final particle `i`.
    pub fn ancestor_at(&self, mut i: usize, t: usize) -> usize {
        for s in (t + 1..self.states.len()).rev() {
            i = self.ancestors[s][i];
        }
        i
    }
}
