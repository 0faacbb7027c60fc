//! Per-agent decentralized networks and the broadcast message bus.
//!
//! Each agent owns three networks: a message encoder (observation to an
//! `l`-unit message), a weight generator (observation to a scheduling weight
//! in `[0, 1]`) and an action selector (observation plus the aggregated
//! broadcast to a softmax policy). One bandwidth unit is one half-precision
//! float on the wire.

use half::f16;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, NetSpec};
use crate::scalar::Scalar;
use crate::wsa::ScheduleProfile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorDims {
    pub obs_dim: usize,
    pub n_actions: usize,
    /// Message length `l` in bandwidth units.
    pub msg_len: usize,
    /// Number of messages in every broadcast (k, or n under full communication).
    pub scheduled: usize,
    pub hidden: usize,
    /// Length of the sender-identity field appended to every broadcast (0 or n).
    #[serde(default)]
    pub sender_ids: usize,
}

impl ActorDims {
    pub fn agg_len(&self) -> usize {
        self.scheduled * self.msg_len + self.sender_ids
    }

    pub fn encoder_spec(&self) -> Result<NetSpec> {
        NetSpec::new(self.obs_dim, vec![self.hidden; 3], self.msg_len, Activation::Linear)
    }

    pub fn weight_spec(&self) -> Result<NetSpec> {
        NetSpec::new(self.obs_dim, vec![self.hidden; 3], 1, Activation::Sigmoid)
    }

    pub fn selector_spec(&self) -> Result<NetSpec> {
        NetSpec::new(
            self.obs_dim + self.agg_len(),
            vec![self.hidden],
            self.n_actions,
            Activation::Softmax,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Sample,
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentActor<T> {
    pub dims: ActorDims,
    pub encoder: Mlp<T>,
    pub weight_gen: Mlp<T>,
    pub selector: Mlp<T>,
}

impl<T: Scalar> AgentActor<T> {
    /// Fresh networks; the three parts draw from distinct seeds derived from `seed`.
    pub fn new(dims: ActorDims, seed: u64) -> Result<Self> {
        Ok(Self {
            dims,
            encoder: Mlp::new(dims.encoder_spec()?, seed.wrapping_mul(3))?,
            weight_gen: Mlp::new(dims.weight_spec()?, seed.wrapping_mul(3).wrapping_add(1))?,
            selector: Mlp::new(dims.selector_spec()?, seed.wrapping_mul(3).wrapping_add(2))?,
        })
    }

    pub fn zeros(dims: ActorDims) -> Result<Self> {
        Ok(Self {
            dims,
            encoder: Mlp::zeros(dims.encoder_spec()?)?,
            weight_gen: Mlp::zeros(dims.weight_spec()?)?,
            selector: Mlp::zeros(dims.selector_spec()?)?,
        })
    }

    pub fn encode(&self, obs: &[T]) -> Result<Vec<T>> {
        self.encoder.infer(obs)
    }

    pub fn generate_weight(&self, obs: &[T]) -> Result<T> {
        Ok(self.weight_gen.infer(obs)?[0])
    }

    pub fn policy(&self, obs: &[T], agg: &[T]) -> Result<Vec<T>> {
        if agg.len() != self.dims.agg_len() {
            return Err(Error::dims("aggregated message", self.dims.agg_len(), agg.len()));
        }
        let mut input = Vec::with_capacity(obs.len() + agg.len());
        input.extend_from_slice(obs);
        input.extend_from_slice(agg);
        self.selector.infer(&input)
    }

    pub fn select_action<R: Rng + ?Sized>(
        &self,
        obs: &[T],
        agg: &[T],
        rng: &mut R,
        mode: ActionMode,
    ) -> Result<usize> {
        let pi = self.policy(obs, agg)?;
        Ok(match mode {
            ActionMode::Greedy => argmax(&pi),
            ActionMode::Sample => sample_categorical(&pi, rng),
        })
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn sample_categorical<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let mut u = T::lit(rng.random::<f64>());
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}

/// Adds `N(0, sigma^2)` exploration noise to a weight and clamps it to `[0, 1]`.
pub fn explore_weight<T: Scalar, R: Rng + ?Sized>(w: T, sigma: f64, rng: &mut R) -> T {
    if sigma <= 0.0 {
        return w;
    }
    let noise = Normal::new(0.0, sigma).expect("positive sigma").sample(rng);
    (w + T::lit(noise)).max(T::zero()).min(T::one())
}

/// Round trip through the 2-byte wire format. Out-of-range values saturate.
pub fn quantize<T: Scalar>(x: T) -> T {
    let v = x.to_f64().unwrap_or(0.0).clamp(-65504.0, 65504.0);
    T::lit(f16::from_f64(v).to_f64())
}

pub fn to_wire<T: Scalar>(message: &[T]) -> Vec<u8> {
    message
        .iter()
        .flat_map(|x| f16::from_f64(x.to_f64().unwrap_or(0.0).clamp(-65504.0, 65504.0)).to_le_bytes())
        .collect()
}

pub fn from_wire<T: Scalar>(bytes: &[u8]) -> Result<Vec<T>> {
    if bytes.len() % 2 != 0 {
        return Err(Error::InvalidArgument("wire message has odd byte length".into()));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| T::lit(f16::from_le_bytes([b[0], b[1]]).to_f64()))
        .collect())
}

/// `m ⊗ c`: the scheduled agents' messages, in ascending agent order, after
/// wire quantization. `expected` is the number of senders every broadcast carries.
pub fn aggregate<T: Scalar>(
    messages: &[Vec<T>],
    schedule: &ScheduleProfile,
    expected: usize,
) -> Result<Vec<T>> {
    if messages.len() != schedule.len() {
        return Err(Error::dims("message list", schedule.len(), messages.len()));
    }
    if schedule.count() != expected {
        return Err(Error::dims("scheduled senders", expected, schedule.count()));
    }
    let l = messages.first().map_or(0, Vec::len);
    let mut agg = Vec::with_capacity(expected * l);
    for i in schedule.scheduled() {
        if messages[i].len() != l {
            return Err(Error::dims("message length", l, messages[i].len()));
        }
        agg.extend(messages[i].iter().map(|&x| quantize(x)));
    }
    Ok(agg)
}

/// One row of a per-step message trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageTraceRecord {
    pub t: u64,
    pub agent: usize,
    pub scheduled: bool,
    pub message: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SimRng;
    use rand::SeedableRng;

    fn dims() -> ActorDims {
        ActorDims {
            obs_dim: 5,
            n_actions: 5,
            msg_len: 2,
            scheduled: 1,
            hidden: 32,
            sender_ids: 0,
        }
    }

    #[test]
    fn zero_parameters() {
        let a = AgentActor::<f64>::zeros(dims()).unwrap();
        let o = [0.1, 0.2, 0.3, 0.4, 1.0];
        assert_eq!(a.encode(&o).unwrap(), vec![0.0, 0.0]);
        assert_eq!(a.generate_weight(&o).unwrap(), 0.5);
        let pi = a.policy(&o, &[0.3, -0.2]).unwrap();
        assert_eq!(pi.len(), 5);
        assert!(pi.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn uniform_policy_sampling() {
        let a = AgentActor::<f64>::zeros(dims()).unwrap();
        let mut rng = SimRng::seed_from_u64(5);
        let mut counts = [0usize; 5];
        let n = 100_000;
        for _ in 0..n {
            counts[a.select_action(&[0.0; 5], &[0.0; 2], &mut rng, ActionMode::Sample).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.2).abs() < 0.01);
        }
    }

    #[test]
    fn deterministic_encoding_and_greedy_selection() {
        let a = AgentActor::<f64>::new(dims(), 42).unwrap();
        let o = [0.5, 0.1, 0.0, 0.0, 0.0];
        let m = a.encode(&o).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m, a.encode(&o).unwrap());
        let mut r1 = SimRng::seed_from_u64(1);
        let mut r2 = SimRng::seed_from_u64(2);
        let g1 = a.select_action(&o, &m, &mut r1, ActionMode::Greedy).unwrap();
        let g2 = a.select_action(&o, &m, &mut r2, ActionMode::Greedy).unwrap();
        assert_eq!(g1, g2);
        let w = a.generate_weight(&o).unwrap();
        assert!(w > 0.0 && w < 1.0);
    }

    #[test]
    fn selector_rejects_wrong_broadcast_length() {
        let a = AgentActor::<f64>::zeros(dims()).unwrap();
        assert!(a.policy(&[0.0; 5], &[0.0; 3]).is_err());
        assert!(a.encode(&[0.0; 4]).is_err());
    }

    #[test]
    fn concatenation_in_agent_order() {
        let m = vec![vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 1.0], vec![1.0, 0.0, 1.0]];
        let c = ScheduleProfile::from_bools(vec![true, true, false]);
        assert_eq!(aggregate(&m, &c, 2).unwrap(), vec![0.0, 1.0, 0.0, 1.0, 1.0, 1.0]);

        let m1 = vec![vec![0.25], vec![-0.5], vec![0.75]];
        let only_two = ScheduleProfile::from_indices(3, &[1]);
        assert_eq!(aggregate(&m1, &only_two, 1).unwrap(), vec![-0.5]);
        assert!(aggregate(&m1, &only_two, 2).is_err());
    }

    #[test]
    fn wire_precision() {
        let q = quantize(0.1f64);
        assert!((q - 0.1).abs() <= 0.1 * 2f64.powi(-11));
        assert_eq!(quantize(1e9f64), 65504.0);
        let bytes = to_wire(&[0.1f64, -3.5]);
        assert_eq!(bytes.len(), 4);
        let back: Vec<f64> = from_wire(&bytes).unwrap();
        assert_eq!(back[1], -3.5);
        assert_eq!(back[0], q);
    }

    #[test]
    fn exploration_noise_clamped() {
        let mut rng = SimRng::seed_from_u64(3);
        let mut at_edge = 0;
        let n = 20_000;
        for _ in 0..n {
            let w = explore_weight(0.98f64, 0.1, &mut rng);
            assert!((0.0..=1.0).contains(&w));
            if w == 1.0 {
                at_edge += 1;
            }
        }
        // P(N(0, 0.1) > 0.02) = 1 - Phi(0.2) ~= 0.4207.
        let frac = at_edge as f64 / n as f64;
        assert!((frac - 0.4207).abs() < 0.015, "{frac}");
        assert_eq!(explore_weight(0.3f64, 0.0, &mut rng), 0.3);
    }

    proptest::proptest! {
        #[test]
        fn quantization_relative_error(x in 6.2e-5f64..65000.0, neg in proptest::bool::ANY) {
            let x = if neg { -x } else { x };
            let q = quantize(x);
            proptest::prop_assert!((q - x).abs() <= 2f64.powi(-11) * x.abs());
        }
    }
}
