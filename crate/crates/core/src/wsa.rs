//! Weight-based scheduling: maps per-agent weights to the set of agents
//! allowed to broadcast this step.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::softmax;
use crate::scalar::Scalar;

/// Binary schedule vector: `true` marks an agent allowed to broadcast.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScheduleProfile(Vec<bool>);

impl ScheduleProfile {
    pub fn from_bools(c: Vec<bool>) -> Self {
        Self(c)
    }

    pub fn from_indices(n: usize, scheduled: &[usize]) -> Self {
        let mut c = vec![false; n];
        for &i in scheduled {
            c[i] = true;
        }
        Self(c)
    }

    pub fn all(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_scheduled(&self, agent: usize) -> bool {
        self.0[agent]
    }

    /// Scheduled agent indices in ascending order.
    pub fn scheduled(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn as_bools(&self) -> &[bool] {
        &self.0
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| b as u8).collect()
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "schedule size k = {k} must satisfy 1 <= k <= n = {n}"
        )));
    }
    Ok(())
}

/// The `k` largest weights; ties go to the lower agent index.
pub fn top_k<T: Scalar>(w: &[T], k: usize) -> Result<ScheduleProfile> {
    check_k(k, w.len())?;
    let mut order: Vec<usize> = (0..w.len()).collect();
    // Stable sort keeps lower indices first among equal weights.
    order.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap_or(std::cmp::Ordering::Equal));
    Ok(ScheduleProfile::from_indices(w.len(), &order[..k]))
}

/// `exp(w_i) / sum_j exp(w_j)`.
pub fn softmax_probs<T: Scalar>(w: &[T]) -> Vec<T> {
    softmax(w)
}

/// Draw `k` distinct agents, each draw proportional to the softmax
/// probability among the agents not yet drawn.
pub fn softmax_k<T: Scalar, R: Rng + ?Sized>(
    w: &[T],
    k: usize,
    rng: &mut R,
) -> Result<ScheduleProfile> {
    check_k(k, w.len())?;
    let mut probs: Vec<f64> = softmax_probs(w)
        .into_iter()
        .map(|p| p.to_f64().unwrap_or(0.0))
        .collect();
    let mut chosen = vec![false; w.len()];
    for _ in 0..k {
        let total: f64 = probs.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &p) in probs.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            pick = Some(i);
            if u < p {
                break;
            }
            u -= p;
        }
        // Rounding can leave `u` past the last mass; `pick` is then the last free agent.
        let i = pick.expect("k <= n leaves a free agent");
        chosen[i] = true;
        probs[i] = 0.0;
    }
    Ok(ScheduleProfile(chosen))
}

/// Agents `t*k mod n, ..., t*k + k - 1 mod n`.
pub fn round_robin(t: u64, n: usize, k: usize) -> Result<ScheduleProfile> {
    check_k(k, n)?;
    let start = ((t % n as u64) * k as u64 % n as u64) as usize;
    let idx: Vec<usize> = (0..k).map(|j| (start + j) % n).collect();
    Ok(ScheduleProfile::from_indices(n, &idx))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wsa {
    TopK,
    SoftmaxK,
    RoundRobin,
    Full,
}

impl Wsa {
    /// Number of agents this rule schedules per step.
    pub fn scheduled_count(self, n: usize, k: usize) -> usize {
        match self {
            Wsa::Full => n,
            _ => k,
        }
    }

    pub fn schedule<T: Scalar, R: Rng + ?Sized>(
        self,
        w: &[T],
        k: usize,
        t: u64,
        rng: &mut R,
    ) -> Result<ScheduleProfile> {
        match self {
            Wsa::TopK => top_k(w, k),
            Wsa::SoftmaxK => softmax_k(w, k, rng),
            Wsa::RoundRobin => round_robin(t, w.len(), k),
            Wsa::Full => Ok(ScheduleProfile::all(w.len())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Wsa::TopK => "top_k",
            Wsa::SoftmaxK => "softmax_k",
            Wsa::RoundRobin => "round_robin",
            Wsa::Full => "full",
        }
    }
}

impl fmt::Display for Wsa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Wsa {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "top_k" => Wsa::TopK,
            "softmax_k" => Wsa::SoftmaxK,
            "round_robin" => Wsa::RoundRobin,
            "full" => Wsa::Full,
            other => return Err(Error::config("wsa", format!("unknown scheduler `{other}`"))),
        })
    }
}
