//! Generative player: scores an unlabeled candidate pool against a query,
//! samples hard candidates, and turns discriminator rewards into a policy
//! gradient.
//!
//! For a query `q` and candidates `c_k` of the opposite modality, the
//! selection probability is a softmax over negated squared hash distances:
//!
//! ```text
//! p(c_k | q) ∝ exp(−‖h(q) − h(c_k)‖²)
//! ```
//!
//! Sampling from that categorical distribution is discrete, so the player
//! is trained by REINFORCE: sampled candidates are scored by the (frozen)
//! discriminator, and the update ascends
//! `(1/K) Σ_k ∇ log p(c_k|q) · reward_k`. The gradient of `log p` flows
//! through both the candidate's pathway and the query's pathway, since both
//! appear in the selection score.

use crate::model::{Direction, ForwardTrace, Modality, NetGrads, TwoPathwayNet};
use crate::tensor::{softmax, squared_distance};
use crate::{Error, Result};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

/// Non-empty pool of unlabeled candidates of a single modality, with
/// borrowed feature vectors.
#[derive(Debug, Clone)]
pub struct CandidatePool<'a> {
    modality: Modality,
    ids: Vec<u32>,
    features: Vec<&'a [f64]>,
}

impl<'a> CandidatePool<'a> {
    pub fn new(modality: Modality, entries: Vec<(u32, &'a [f64])>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("candidate pool"));
        }
        let mut seen = std::collections::HashSet::new();
        for (id, _) in &entries {
            if !seen.insert(*id) {
                return Err(Error::Data(format!("duplicate candidate id {id} in pool")));
            }
        }
        let (ids, features) = entries.into_iter().unzip();
        Ok(CandidatePool {
            modality,
            ids,
            features,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, pos: usize) -> u32 {
        self.ids[pos]
    }

    pub fn feature(&self, pos: usize) -> &'a [f64] {
        self.features[pos]
    }
}

/// Selection distribution from precomputed hash activations. Exposed
/// separately because during discriminator steps the generator is frozen
/// and its hashes can be computed once for the whole epoch.
pub fn selection_distribution_from_hashes(
    query_hash: &[f64],
    candidate_hashes: &[impl AsRef<[f64]>],
) -> Result<Vec<f64>> {
    if candidate_hashes.is_empty() {
        return Err(Error::EmptyInput("selection distribution"));
    }
    let scores: Vec<f64> = candidate_hashes
        .iter()
        .map(|c| -squared_distance(query_hash, c.as_ref()))
        .collect();
    softmax(&scores)
}

/// Selection distribution of a pool for a query, through the generator
/// network. The query must be of the opposite modality to the pool.
pub fn selection_distribution(
    net: &TwoPathwayNet,
    direction: Direction,
    query: &[f64],
    pool: &CandidatePool<'_>,
) -> Result<Vec<f64>> {
    check_pool_modality(direction, pool)?;
    let hq = net.forward(direction.query_modality(), query)?;
    let hashes: Vec<Vec<f64>> = pool
        .features
        .iter()
        .map(|f| Ok(net.forward(pool.modality, f)?.hash().to_vec()))
        .collect::<Result<_>>()?;
    selection_distribution_from_hashes(hq.hash(), &hashes)
}

fn check_pool_modality(direction: Direction, pool: &CandidatePool<'_>) -> Result<()> {
    if pool.modality != direction.target_modality() {
        return Err(Error::Config(format!(
            "pool modality {} does not match direction {}",
            pool.modality.name(),
            direction.name()
        )));
    }
    Ok(())
}

/// One sampled candidate: its position in the pool, its id, the log of its
/// selection probability at draw time, and the reward later assigned by the
/// discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawnCandidate {
    pub pool_pos: usize,
    pub candidate_id: u32,
    pub log_prob: f64,
    pub reward: f64,
}

/// The candidates drawn for one query, with their log-probabilities and
/// rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionBatch {
    pub query_id: u32,
    pub samples: Vec<DrawnCandidate>,
}

impl SelectionBatch {
    pub fn mean_reward(&self) -> f64 {
        self.samples.iter().map(|s| s.reward).sum::<f64>() / self.samples.len() as f64
    }
}

/// Draws `k` candidates i.i.d. (with replacement) from a selection
/// distribution, recording each draw's log-probability. Rewards start at 0
/// and are filled in by the caller.
pub fn sample_candidates(
    query_id: u32,
    pool: &CandidatePool<'_>,
    dist: &[f64],
    k: usize,
    rng: &mut impl Rng,
) -> Result<SelectionBatch> {
    if k == 0 {
        return Err(Error::Config("samples_per_query must be >= 1".into()));
    }
    if dist.len() != pool.len() {
        return Err(Error::DimMismatch {
            op: "sample_candidates",
            expected: pool.len(),
            got: dist.len(),
        });
    }
    let weighted = WeightedIndex::new(dist)
        .map_err(|e| Error::Runtime(format!("invalid selection distribution: {e}")))?;
    let samples = (0..k)
        .map(|_| {
            let pos = weighted.sample(rng);
            DrawnCandidate {
                pool_pos: pos,
                candidate_id: pool.id(pos),
                log_prob: dist[pos].ln(),
                reward: 0.0,
            }
        })
        .collect();
    Ok(SelectionBatch { query_id, samples })
}

/// Forward passes for the query and every pool candidate under the current
/// generator, plus the resulting selection distribution.
struct PoolForward {
    query_trace: ForwardTrace,
    candidate_traces: Vec<ForwardTrace>,
    dist: Vec<f64>,
}

fn pool_forward(
    net: &TwoPathwayNet,
    direction: Direction,
    query: &[f64],
    pool: &CandidatePool<'_>,
) -> Result<PoolForward> {
    check_pool_modality(direction, pool)?;
    let query_trace = net.forward(direction.query_modality(), query)?;
    let candidate_traces: Vec<ForwardTrace> = pool
        .features
        .iter()
        .map(|f| net.forward(pool.modality, f))
        .collect::<Result<_>>()?;
    let hashes: Vec<&[f64]> = candidate_traces.iter().map(|t| t.hash()).collect();
    let dist = selection_distribution_from_hashes(query_trace.hash(), &hashes)?;
    Ok(PoolForward {
        query_trace,
        candidate_traces,
        dist,
    })
}

/// Accumulates `Σ_j w_j ∇θ s_j` where `s_j = −‖h(q) − h(c_j)‖²`, pushing
/// gradient through both the candidate and query pathways.
fn accumulate_score_grads(
    net: &TwoPathwayNet,
    direction: Direction,
    fwd: &PoolForward,
    weights: &[f64],
) -> Result<NetGrads> {
    let q = net.config.code_len;
    let hq = fwd.query_trace.hash();
    let mut grads = NetGrads::zeros_like(net);
    let mut grad_hq = vec![0.0; q];
    let mut grad_hc = vec![0.0; q];
    for (j, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let hc = fwd.candidate_traces[j].hash();
        for b in 0..q {
            let diff = hq[b] - hc[b];
            grad_hc[b] = w * 2.0 * diff;
            grad_hq[b] += w * (-2.0) * diff;
        }
        net.pathway(direction.target_modality()).backward_into(
            &fwd.candidate_traces[j],
            &grad_hc,
            1.0,
            grads.pathway_mut(direction.target_modality()),
        )?;
    }
    net.pathway(direction.query_modality()).backward_into(
        &fwd.query_trace,
        &grad_hq,
        1.0,
        grads.pathway_mut(direction.query_modality()),
    )?;
    Ok(grads)
}

/// REINFORCE gradient for one query:
/// `(1/K) Σ_k reward_k · ∇ log p(c_k | q)` under the current parameters.
///
/// Written as score-gradient weights this is
/// `Σ_j w_j ∇ s_j` with `w_j = (1/K) Σ_{k: c_k = j} r_k − r̄ · p_j`,
/// where `r̄` is the mean sampled reward.
pub fn policy_gradient_grads(
    net: &TwoPathwayNet,
    direction: Direction,
    query: &[f64],
    pool: &CandidatePool<'_>,
    batch: &SelectionBatch,
) -> Result<NetGrads> {
    if batch.samples.is_empty() {
        return Err(Error::EmptyInput("policy gradient batch"));
    }
    if !batch.samples.iter().all(|s| s.reward.is_finite()) {
        return Err(Error::NonFinite("policy gradient rewards"));
    }
    let fwd = pool_forward(net, direction, query, pool)?;
    let k = batch.samples.len() as f64;
    let mut weights = vec![0.0; pool.len()];
    let mut reward_sum = 0.0;
    for s in &batch.samples {
        if s.pool_pos >= pool.len() {
            return Err(Error::Data(format!(
                "sampled pool position {} out of range",
                s.pool_pos
            )));
        }
        weights[s.pool_pos] += s.reward / k;
        reward_sum += s.reward;
    }
    let mean_reward = reward_sum / k;
    if mean_reward != 0.0 {
        for (w, &p) in weights.iter_mut().zip(&fwd.dist) {
            *w -= mean_reward * p;
        }
    }
    accumulate_score_grads(net, direction, &fwd, &weights)
}

/// One REINFORCE ascent step on the generator parameters.
pub fn policy_gradient_step(
    net: &mut TwoPathwayNet,
    direction: Direction,
    query: &[f64],
    pool: &CandidatePool<'_>,
    batch: &SelectionBatch,
    lr: f64,
) -> Result<()> {
    let grads = policy_gradient_grads(net, direction, query, pool, batch)?;
    net.apply_grads(&grads, lr);
    Ok(())
}

/// `Σ_j p(c_j|q) · reward_j`: the objective the policy gradient ascends in
/// expectation, given a fixed per-candidate reward table.
pub fn expected_reward(
    net: &TwoPathwayNet,
    direction: Direction,
    query: &[f64],
    pool: &CandidatePool<'_>,
    rewards: &[f64],
) -> Result<f64> {
    if rewards.len() != pool.len() {
        return Err(Error::DimMismatch {
            op: "expected_reward",
            expected: pool.len(),
            got: rewards.len(),
        });
    }
    let dist = selection_distribution(net, direction, query, pool)?;
    Ok(dist.iter().zip(rewards).map(|(p, r)| p * r).sum())
}

/// Analytic gradient of [`expected_reward`]:
/// `∇ Σ_j p_j r_j = Σ_j p_j (r_j − Σ_l p_l r_l) ∇ s_j`.
pub fn expected_reward_grads(
    net: &TwoPathwayNet,
    direction: Direction,
    query: &[f64],
    pool: &CandidatePool<'_>,
    rewards: &[f64],
) -> Result<NetGrads> {
    if rewards.len() != pool.len() {
        return Err(Error::DimMismatch {
            op: "expected_reward_grads",
            expected: pool.len(),
            got: rewards.len(),
        });
    }
    let fwd = pool_forward(net, direction, query, pool)?;
    let mean: f64 = fwd.dist.iter().zip(rewards).map(|(p, r)| p * r).sum();
    let weights: Vec<f64> = fwd
        .dist
        .iter()
        .zip(rewards)
        .map(|(&p, &r)| p * (r - mean))
        .collect();
    accumulate_score_grads(net, direction, &fwd, &weights)
}
