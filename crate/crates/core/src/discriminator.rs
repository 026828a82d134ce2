//! Discriminative player: triplet relevance scores, pairing probabilities,
//! generator rewards, and the discriminator update objective.
//!
//! All scores are built from squared distances between relaxed hash
//! activations. The relevance score of a contrast item against a query and
//! a true positive is a hinge:
//!
//! ```text
//! f(contrast | q) = max(0, margin + ‖h(q) − h(pos)‖² − ‖h(q) − h(contrast)‖²)
//! ```
//!
//! so it is positive exactly when the contrast item sits within `margin` of
//! the true positive, which is what makes it a useful hard-example signal.

use crate::data::LabeledItem;
use crate::model::{Direction, ForwardTrace, NetGrads, TwoPathwayNet};
use crate::tensor::{hinge, hinge_subgrad, sigmoid_scalar, softplus, squared_distance};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Margin used in the triplet hinges. Must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    pub margin: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig { margin: 1.0 }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Which side of a triplet the contrast item came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletKind {
    /// Contrast is a labeled negative (shares no label with the query).
    Labeled,
    /// Contrast is an unlabeled candidate picked by the generator.
    Generated,
}

/// How the discriminator objective combines the two triplet sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Minimize both hinge means: pull true positives within margin of the
    /// query relative to labeled negatives, and push generated candidates
    /// at least margin beyond the true positive. Default.
    #[default]
    Triplet,
    /// The log-likelihood form: minimize
    /// `mean[softplus(−f_labeled)] + mean[softplus(f_generated)]`, i.e.
    /// ascend `log σ(f_labeled) + log(1 − σ(f_generated))` as written.
    /// Kept selectable for fidelity experiments; note that on the labeled
    /// term this *rewards* margin violations instead of fixing them.
    Literal,
}

/// Relevance score on raw hash activations: the generated-candidate hinge.
pub fn relevance_from_hashes(
    query_hash: &[f64],
    positive_hash: &[f64],
    contrast_hash: &[f64],
    margin: f64,
) -> f64 {
    let d_pos = squared_distance(query_hash, positive_hash);
    let d_con = squared_distance(query_hash, contrast_hash);
    hinge(margin + d_pos - d_con)
}

/// Relevance score of a generator-selected candidate, computed through the
/// network. `query` is in the direction's query modality; `positive` and
/// `generated` are features of the target modality.
pub fn relevance_generated(
    net: &TwoPathwayNet,
    direction: Direction,
    query: &[f64],
    positive: &[f64],
    generated: &[f64],
    margin: f64,
) -> Result<f64> {
    let hq = net.forward(direction.query_modality(), query)?;
    let hp = net.forward(direction.target_modality(), positive)?;
    let hg = net.forward(direction.target_modality(), generated)?;
    Ok(relevance_from_hashes(
        hq.hash(),
        hp.hash(),
        hg.hash(),
        margin,
    ))
}

/// Relevance score of a labeled triplet `(query, positive, negative)`; the
/// hinge is positive while the negative is not yet `margin` further from
/// the query than the positive.
pub fn relevance_labeled(
    net: &TwoPathwayNet,
    direction: Direction,
    query: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<f64> {
    // same functional form, with the labeled negative as contrast
    relevance_generated(net, direction, query, positive, negative, margin)
}

/// Probability that a pair is a true relevant pair: a numerically stable
/// `σ(score)`.
pub fn disc_probability(score: f64) -> f64 {
    sigmoid_scalar(score)
}

/// Generator reward for a selected candidate: `ln(1 + exp(score))`.
/// Strictly increasing in the score and asymptotically linear.
pub fn reward(score: f64) -> f64 {
    softplus(score)
}

/// A triplet expressed as borrowed feature vectors. The query is in the
/// direction's query modality, the other two in the target modality.
#[derive(Debug, Clone, Copy)]
pub struct TripletRefs<'a> {
    pub query: &'a [f64],
    pub positive: &'a [f64],
    pub contrast: &'a [f64],
}

/// Loss value and parameter gradients of one discriminator step.
#[derive(Debug)]
pub struct DStepEval {
    pub loss: f64,
    pub grads: NetGrads,
}

/// Discriminator objective over a batch of labeled and generated triplets.
///
/// Returns the loss to *minimize* and its gradients with respect to the
/// discriminator parameters. `generated` may be empty (the
/// discriminator-only ablation trains from labeled triplets alone);
/// `labeled` may not.
pub fn d_step_loss(
    net: &TwoPathwayNet,
    direction: Direction,
    labeled: &[TripletRefs<'_>],
    generated: &[TripletRefs<'_>],
    mode: LossMode,
    margin: f64,
) -> Result<DStepEval> {
    if labeled.is_empty() {
        return Err(Error::EmptyInput("d_step_loss labeled triplets"));
    }
    let query_mod = direction.query_modality();
    let target_mod = direction.target_modality();
    let q = net.config.code_len;

    // Forward once per distinct feature slice; triplets within a batch
    // share queries and positives heavily. Slots keep interning order so
    // the backward reduction below is deterministic.
    struct TraceSlot {
        is_query: bool,
        trace: ForwardTrace,
        grad_hash: Vec<f64>,
    }
    fn intern(
        net: &TwoPathwayNet,
        direction: Direction,
        slots: &mut Vec<TraceSlot>,
        index: &mut HashMap<(bool, usize, usize), usize>,
        is_query: bool,
        feat: &[f64],
    ) -> Result<usize> {
        let key = (is_query, feat.as_ptr() as usize, feat.len());
        if let Some(&i) = index.get(&key) {
            return Ok(i);
        }
        let modality = if is_query {
            direction.query_modality()
        } else {
            direction.target_modality()
        };
        let trace = net.forward(modality, feat)?;
        let grad_hash = vec![0.0; net.config.code_len];
        slots.push(TraceSlot {
            is_query,
            trace,
            grad_hash,
        });
        index.insert(key, slots.len() - 1);
        Ok(slots.len() - 1)
    }

    let mut slots: Vec<TraceSlot> = Vec::new();
    let mut index: HashMap<(bool, usize, usize), usize> = HashMap::new();
    let mut loss = 0.0;
    for (triplets, kind) in [
        (labeled, TripletKind::Labeled),
        (generated, TripletKind::Generated),
    ] {
        if triplets.is_empty() {
            continue;
        }
        let weight = 1.0 / triplets.len() as f64;
        for t in triplets {
            let qi = intern(net, direction, &mut slots, &mut index, true, t.query)?;
            let pi = intern(net, direction, &mut slots, &mut index, false, t.positive)?;
            let ci = intern(net, direction, &mut slots, &mut index, false, t.contrast)?;
            let d_pos = squared_distance(slots[qi].trace.hash(), slots[pi].trace.hash());
            let d_con = squared_distance(slots[qi].trace.hash(), slots[ci].trace.hash());
            let arg = margin + d_pos - d_con;
            let f = hinge(arg);
            // dL/df for this triplet under the selected mode
            let (contrib, dl_df) = match (mode, kind) {
                (LossMode::Triplet, _) => (f, 1.0),
                (LossMode::Literal, TripletKind::Labeled) => {
                    // softplus(−f), derivative −σ(−f)
                    (softplus(-f), -sigmoid_scalar(-f))
                }
                (LossMode::Literal, TripletKind::Generated) => {
                    // softplus(f), derivative σ(f)
                    (softplus(f), sigmoid_scalar(f))
                }
            };
            loss += weight * contrib;
            let chain = weight * dl_df * hinge_subgrad(arg);
            if chain != 0.0 {
                for b in 0..q {
                    let hq = slots[qi].trace.hash()[b];
                    let hp = slots[pi].trace.hash()[b];
                    let hc = slots[ci].trace.hash()[b];
                    let gq = 2.0 * (hq - hp) - 2.0 * (hq - hc);
                    let gp = -2.0 * (hq - hp);
                    let gc = 2.0 * (hq - hc);
                    slots[qi].grad_hash[b] += chain * gq;
                    slots[pi].grad_hash[b] += chain * gp;
                    slots[ci].grad_hash[b] += chain * gc;
                }
            }
        }
    }

    // One backward pass per distinct trace, in interning order.
    let mut grads = NetGrads::zeros_like(net);
    for slot in &slots {
        let modality = if slot.is_query { query_mod } else { target_mod };
        net.pathway(modality).backward_into(
            &slot.trace,
            &slot.grad_hash,
            1.0,
            grads.pathway_mut(modality),
        )?;
    }

    Ok(DStepEval { loss, grads })
}

/// Positive/negative pools per labeled query, by label overlap.
///
/// Positives of a query are *other* labeled items sharing at least one
/// label; negatives share none. A query whose positive or negative pool is
/// empty cannot form triplets and is reported by [`PosNegIndex::usable`].
#[derive(Debug, Clone)]
pub struct PosNegIndex {
    pos: Vec<Vec<u32>>,
    neg: Vec<Vec<u32>>,
}

impl PosNegIndex {
    pub fn build(labeled: &[LabeledItem]) -> Self {
        let n = labeled.len();
        let mut pos = vec![Vec::new(); n];
        let mut neg = vec![Vec::new(); n];
        for i in 0..n {
            for (j, item) in labeled.iter().enumerate() {
                if i == j {
                    continue;
                }
                if labeled[i].labels.is_disjoint(&item.labels) {
                    neg[i].push(j as u32);
                } else {
                    pos[i].push(j as u32);
                }
            }
        }
        PosNegIndex { pos, neg }
    }

    pub fn positives(&self, query: usize) -> &[u32] {
        &self.pos[query]
    }

    pub fn negatives(&self, query: usize) -> &[u32] {
        &self.neg[query]
    }

    /// Whether the query has at least one positive and one negative.
    pub fn usable(&self, query: usize) -> bool {
        !self.pos[query].is_empty() && !self.neg[query].is_empty()
    }

    /// Uniform draw of a (positive, negative) pair for a query, `None` when
    /// the query is degenerate and must be skipped.
    pub fn sample_pair(&self, query: usize, rng: &mut impl Rng) -> Option<(u32, u32)> {
        if !self.usable(query) {
            return None;
        }
        let p = self.pos[query][rng.gen_range(0..self.pos[query].len())];
        let n = self.neg[query][rng.gen_range(0..self.neg[query].len())];
        Some((p, n))
    }

    pub fn sample_positive(&self, query: usize, rng: &mut impl Rng) -> Option<u32> {
        if self.pos[query].is_empty() {
            return None;
        }
        Some(self.pos[query][rng.gen_range(0..self.pos[query].len())])
    }
}
