//! Centralized critic with a shared trunk.
//!
//! The trunk (two ReLU layers on the global state) feeds a state-value head
//! `V(s)` and an action-value head `Q(s, w)`; the scheduling weights `w` join
//! the trunk features at the input of the Q head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, NetSpec};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticParams<T> {
    pub trunk: Mlp<T>,
    pub v_head: Mlp<T>,
    pub q_head: Mlp<T>,
    pub n_agents: usize,
}

/// Gradients of a critic objective, one buffer per part.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticGrads<T> {
    pub trunk: Vec<T>,
    pub v_head: Vec<T>,
    pub q_head: Vec<T>,
}

fn specs(state_dim: usize, n_agents: usize, hidden: usize) -> Result<[NetSpec; 3]> {
    Ok([
        NetSpec::new(state_dim, vec![hidden], hidden, Activation::Relu)?,
        NetSpec::new(hidden, vec![hidden], 1, Activation::Linear)?,
        NetSpec::new(hidden + n_agents, vec![hidden], 1, Activation::Linear)?,
    ])
}

impl<T: Scalar> CriticParams<T> {
    pub fn new(state_dim: usize, n_agents: usize, hidden: usize, seed: u64) -> Result<Self> {
        let [t, v, q] = specs(state_dim, n_agents, hidden)?;
        Ok(Self {
            trunk: Mlp::new(t, seed.wrapping_mul(3))?,
            v_head: Mlp::new(v, seed.wrapping_mul(3).wrapping_add(1))?,
            q_head: Mlp::new(q, seed.wrapping_mul(3).wrapping_add(2))?,
            n_agents,
        })
    }

    pub fn zeros(state_dim: usize, n_agents: usize, hidden: usize) -> Result<Self> {
        let [t, v, q] = specs(state_dim, n_agents, hidden)?;
        Ok(Self {
            trunk: Mlp::zeros(t)?,
            v_head: Mlp::zeros(v)?,
            q_head: Mlp::zeros(q)?,
            n_agents,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.spec.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.trunk.spec.output_dim
    }

    pub fn zero_grads(&self) -> CriticGrads<T> {
        CriticGrads {
            trunk: self.trunk.zero_grad(),
            v_head: self.v_head.zero_grad(),
            q_head: self.q_head.zero_grad(),
        }
    }

    fn q_inputs(&self, features: &[T], ws: &[T], batch: usize) -> Result<Vec<T>> {
        let h = self.hidden();
        let n = self.n_agents;
        if ws.len() != batch * n {
            return Err(Error::dims("weight vector", batch * n, ws.len()));
        }
        let mut input = Vec::with_capacity(batch * (h + n));
        for b in 0..batch {
            input.extend_from_slice(&features[b * h..(b + 1) * h]);
            input.extend_from_slice(&ws[b * n..(b + 1) * n]);
        }
        Ok(input)
    }

    pub fn value_batch(&self, states: &[T], batch: usize) -> Result<Vec<T>> {
        let trunk = self.trunk.forward_batch(states, batch)?;
        Ok(self.v_head.forward_batch(trunk.output(), batch)?.output().to_vec())
    }

    pub fn q_batch(&self, states: &[T], ws: &[T], batch: usize) -> Result<Vec<T>> {
        let trunk = self.trunk.forward_batch(states, batch)?;
        let input = self.q_inputs(trunk.output(), ws, batch)?;
        Ok(self.q_head.forward_batch(&input, batch)?.output().to_vec())
    }

    /// `V(s)` for one state.
    pub fn value(&self, state: &[T]) -> Result<T> {
        Ok(self.value_batch(state, 1)?[0])
    }

    /// `Q(s, w)` for one state.
    pub fn q_value(&self, state: &[T], w: &[T]) -> Result<T> {
        Ok(self.q_batch(state, w, 1)?[0])
    }

    /// `Q(s, w)` per row together with `dQ/dw` per row, each row scaled by `scale`.
    pub fn q_and_weight_grad(
        &self,
        states: &[T],
        ws: &[T],
        batch: usize,
        scale: T,
    ) -> Result<(Vec<T>, Vec<T>)> {
        let trunk = self.trunk.forward_batch(states, batch)?;
        let input = self.q_inputs(trunk.output(), ws, batch)?;
        let cache = self.q_head.forward_batch(&input, batch)?;
        let q = cache.output().to_vec();
        let mut scratch = self.q_head.zero_grad();
        let dinput = self.q_head.backward_into(cache, &vec![scale; batch], &mut scratch)?;
        let (h, n) = (self.hidden(), self.n_agents);
        let mut dw = Vec::with_capacity(batch * n);
        for row in dinput.chunks_exact(h + n) {
            dw.extend_from_slice(&row[h..]);
        }
        Ok((q, dw))
    }

    /// Backpropagates an objective over `(V, Q)` into `grads`.
    ///
    /// `loss_grad` receives the forward values `(V, Q)` per row and returns
    /// `(dL/dV, dL/dQ)` per row; both heads and the shared trunk accumulate.
    /// Returns whatever scalar `loss_grad` reports alongside its gradients.
    pub fn backprop_with<F>(
        &self,
        states: &[T],
        ws: &[T],
        batch: usize,
        grads: &mut CriticGrads<T>,
        loss_grad: F,
    ) -> Result<T>
    where
        F: FnOnce(&[T], &[T]) -> (T, Vec<T>, Vec<T>),
    {
        let trunk = self.trunk.forward_batch(states, batch)?;
        let v_cache = self.v_head.forward_batch(trunk.output(), batch)?;
        let q_input = self.q_inputs(trunk.output(), ws, batch)?;
        let q_cache = self.q_head.forward_batch(&q_input, batch)?;
        let (loss, dv, dq) = loss_grad(v_cache.output(), q_cache.output());

        let mut dfeat = self.v_head.backward_into(v_cache, &dv, &mut grads.v_head)?;
        let dq_in = self.q_head.backward_into(q_cache, &dq, &mut grads.q_head)?;
        let (h, n) = (self.hidden(), self.n_agents);
        for (b, row) in dq_in.chunks_exact(h + n).enumerate() {
            for (d, &g) in dfeat[b * h..(b + 1) * h].iter_mut().zip(&row[..h]) {
                *d += g;
            }
        }
        self.trunk.backward_into(trunk, &dfeat, &mut grads.trunk)?;
        Ok(loss)
    }
}
