//! Medium-access realizations of the weight-based schedulers.
//!
//! [`distributed_topk`] runs Top(k) as CSMA rounds where every contender
//! arms a backoff timer of `1 - w` and the first expiry seizes the channel.
//! [`ocsma_simulate`] runs the continuous-time oCSMA chain whose long-run
//! share of busy time approaches `softmax(w)` on a complete interference graph.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wsa::{softmax_probs, ScheduleProfile};

/// Airtime of one Top(k) winner before the next contention round.
pub const TOPK_TX_TIME: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    BackoffExpiry,
    TransmissionStart,
    TransmissionEnd,
    Collision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumEvent {
    pub time: f64,
    pub kind: EventKind,
    pub agents: Vec<usize>,
}

/// Outcome of one contention round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub winner: usize,
    /// Agents whose timers fired within the sensing window of the first expiry (winner included).
    pub colliders: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub rounds: Vec<RoundOutcome>,
    pub collisions: usize,
    pub events: Vec<MediumEvent>,
}

/// Top(k) by `k` rounds of backoff contention.
///
/// Timers that expire within `sensing_window` of the earliest one cannot hear
/// each other; one of those colliders is scheduled uniformly at random.
pub fn distributed_topk<R: Rng + ?Sized>(
    w: &[f64],
    k: usize,
    sensing_window: f64,
    rng: &mut R,
) -> Result<(ScheduleProfile, CollisionReport)> {
    let n = w.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must satisfy 1 <= k <= n = {n}")));
    }
    if !(sensing_window >= 0.0) {
        return Err(Error::InvalidArgument("sensing window must be non-negative".into()));
    }
    let mut scheduled = vec![false; n];
    let mut report = CollisionReport::default();
    let mut round_start = 0.0;
    for _ in 0..k {
        let mut expiries: Vec<(f64, usize)> = (0..n)
            .filter(|&i| !scheduled[i])
            .map(|i| (round_start + (1.0 - w[i]), i))
            .collect();
        expiries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(t, i) in &expiries {
            report.events.push(MediumEvent {
                time: t,
                kind: EventKind::BackoffExpiry,
                agents: vec![i],
            });
        }
        let first = expiries[0].0;
        let colliders: Vec<usize> = expiries
            .iter()
            .take_while(|(t, _)| *t - first <= sensing_window)
            .map(|&(_, i)| i)
            .collect();
        let winner = if colliders.len() > 1 {
            report.collisions += 1;
            report.events.push(MediumEvent {
                time: first,
                kind: EventKind::Collision,
                agents: colliders.clone(),
            });
            colliders[rng.random_range(0..colliders.len())]
        } else {
            colliders[0]
        };
        scheduled[winner] = true;
        report.events.push(MediumEvent {
            time: first,
            kind: EventKind::TransmissionStart,
            agents: vec![winner],
        });
        round_start = first + TOPK_TX_TIME;
        report.events.push(MediumEvent {
            time: round_start,
            kind: EventKind::TransmissionEnd,
            agents: vec![winner],
        });
        report.rounds.push(RoundOutcome { winner, colliders });
    }
    report.events.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok((ScheduleProfile::from_bools(scheduled), report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyStats {
    pub duration: f64,
    /// Channel-holding time per agent.
    pub holding_time: Vec<f64>,
    /// Share of all simulated time each agent held the channel.
    pub fractions: Vec<f64>,
    /// Share of busy time each agent held the channel.
    pub busy_conditional: Vec<f64>,
    pub busy_fraction: f64,
    pub transmissions: Vec<u64>,
    pub collisions: u64,
}

/// oCSMA with backoff rate `b_i = exp(w_i)` and unit mean holding time.
pub fn ocsma_simulate<R: Rng + ?Sized>(w: &[f64], duration: f64, rng: &mut R) -> Result<OccupancyStats> {
    let rates: Vec<f64> = w.iter().map(|x| x.exp()).collect();
    ocsma_simulate_with(&rates, &vec![1.0; w.len()], duration, rng)
}

/// oCSMA on a complete interference graph.
///
/// Idle agents run exponential backoff clocks (rate `backoff_rates[i]`) that
/// freeze while the channel is busy. The first clock to expire transmits for
/// an exponential holding time (mean `holding_means[i]`), then redraws its
/// backoff; the others resume their frozen residuals.
pub fn ocsma_simulate_with<R: Rng + ?Sized>(
    backoff_rates: &[f64],
    holding_means: &[f64],
    duration: f64,
    rng: &mut R,
) -> Result<OccupancyStats> {
    let n = backoff_rates.len();
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one agent".into()));
    }
    if holding_means.len() != n {
        return Err(Error::dims("holding means", n, holding_means.len()));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    let backoff = backoff_rates
        .iter()
        .map(|&b| Exp::new(b).map_err(|_| Error::InvalidArgument(format!("bad backoff rate {b}"))))
        .collect::<Result<Vec<_>>>()?;
    let holding = holding_means
        .iter()
        .map(|&h| {
            if h > 0.0 && h.is_finite() {
                Ok(Exp::new(1.0 / h).expect("positive rate"))
            } else {
                Err(Error::InvalidArgument(format!("bad holding mean {h}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut residual: Vec<f64> = backoff.iter().map(|d| d.sample(rng)).collect();
    let mut held = vec![0.0; n];
    let mut tx = vec![0u64; n];
    let mut collisions = 0u64;
    let mut released_at = 0.0;
    let mut now = 0.0;
    while now < duration {
        // Idle period: all clocks run until the first expiry.
        let (who, wait) = residual
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("n >= 1");
        if residual.iter().filter(|&&r| r == wait).count() > 1 {
            collisions += 1;
        }
        if now + wait >= duration {
            break;
        }
        now += wait;
        for r in residual.iter_mut() {
            *r -= wait;
        }
        // Exclusivity: a transmission may only start once the previous one ended.
        assert!(now >= released_at, "channel already held");
        tx[who] += 1;
        let hold = holding[who].sample(rng);
        let end = (now + hold).min(duration);
        held[who] += end - now;
        now = end;
        released_at = end;
        residual[who] = backoff[who].sample(rng);
    }
    let busy: f64 = held.iter().sum();
    Ok(OccupancyStats {
        duration,
        fractions: held.iter().map(|h| h / duration).collect(),
        busy_conditional: held.iter().map(|h| if busy > 0.0 { h / busy } else { 0.0 }).collect(),
        busy_fraction: busy / duration,
        holding_time: held,
        transmissions: tx,
        collisions,
    })
}

/// Closed-form busy-conditional share of each agent: `softmax(w)`.
pub fn ocsma_stationary(w: &[f64]) -> Vec<f64> {
    softmax_probs(w)
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
