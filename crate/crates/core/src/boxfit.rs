//! Contrastive fitting of a table of boxes from relation triplets.
//!
//! Each item owns a center and an unconstrained raw width; the effective
//! half-width is `softplus(raw) + WIDTH_FLOOR`, so any parameter value maps to
//! a valid box. A triplet is scored as softmax cross-entropy over its positive
//! and negatives, where a candidate's score is the (log) smoothed
//! intersection volume with the anchor for similarity, or the (log) smoothed
//! entailment probability `p(candidate | anchor)` for entailment.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::boxcore::{
    log_gumbel_entailment_prob, log_gumbel_interval_overlap_grad, log_gumbel_intersection_volume,
    sigmoid, softplus, BoxEmbed, BoxTable, GumbelParams, MIN_WIDTH,
};
use crate::error::{Error, Result};
use crate::synthgen::{RelationKind, RelationTriplet};

const WIDTH_FLOOR: f64 = 10.0 * MIN_WIDTH;

/// Whether candidate scores enter the softmax as log-volumes or raw volumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSpace {
    Log,
    Raw,
}

impl std::str::FromStr for LossSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(LossSpace::Log),
            "raw" => Ok(LossSpace::Raw),
            other => Err(Error::InvalidParameter(format!("unknown loss space `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gumbel: GumbelParams,
    pub seed: u64,
    pub loss_space: LossSpace,
    /// 0 for plain gradient descent.
    pub momentum: f64,
    /// Multiplies scores before the softmax.
    pub softmax_scale: f64,
    /// Cap on the L2 norm of each batch gradient.
    pub clip_norm: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            learning_rate: 0.05,
            epochs: 500,
            batch_size: 4,
            gumbel: GumbelParams::default(),
            seed: 0,
            loss_space: LossSpace::Log,
            momentum: 0.9,
            softmax_scale: 1.0,
            clip_norm: Some(1.0),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidParameter("learning_rate must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidParameter("batch_size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter("momentum must lie in [0, 1)".into()));
        }
        if self.softmax_scale.is_nan() || self.softmax_scale <= 0.0 {
            return Err(Error::InvalidParameter("softmax_scale must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidParameter("clip_norm must be positive".into()));
            }
        }
        GumbelParams::new(self.gumbel.beta_vol, self.gumbel.beta_int)?;
        Ok(())
    }
}

/// Trainable box: center plus unconstrained raw width.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    pub center: Vec<f64>,
    pub raw_width: Vec<f64>,
}

impl ParamBox {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn width(&self) -> Vec<f64> {
        self.raw_width.iter().map(|&r| softplus(r) + WIDTH_FLOOR).collect()
    }

    fn corners(&self) -> (Vec<f64>, Vec<f64>) {
        let w = self.width();
        let lo = self.center.iter().zip(&w).map(|(c, w)| c - w).collect();
        let hi = self.center.iter().zip(&w).map(|(c, w)| c + w).collect();
        (lo, hi)
    }

    pub fn to_box(&self) -> Result<BoxEmbed> {
        BoxEmbed::new(self.center.clone(), self.width())
    }
}

/// Gradient with respect to one [`ParamBox`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGrad {
    pub center: Vec<f64>,
    pub raw_width: Vec<f64>,
}

impl BoxGrad {
    fn zeros(dim: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            raw_width: vec![0.0; dim],
        }
    }

    fn axpy(&mut self, scale: f64, other: &BoxGrad) {
        for (a, b) in self.center.iter_mut().zip(&other.center) {
            *a += scale * b;
        }
        for (a, b) in self.raw_width.iter_mut().zip(&other.raw_width) {
            *a += scale * b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTable {
    ids: Vec<String>,
    boxes: Vec<ParamBox>,
    index: HashMap<String, usize>,
}

impl ParamTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn boxes(&self) -> &[ParamBox] {
        &self.boxes
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn to_box_table(&self) -> Result<BoxTable> {
        let dim = self.boxes.first().map_or(0, ParamBox::dim);
        BoxTable::from_entries(
            dim,
            self.ids
                .iter()
                .zip(&self.boxes)
                .map(|(id, b)| Ok((id.clone(), b.to_box()?)))
                .collect::<Result<Vec<_>>>()?,
        )
    }
}

/// Centers from `N(0, 0.1²)`, effective widths `1 ± small jitter`.
pub fn init_table(ids: &[String], config: &FitConfig) -> Result<ParamTable> {
    config.validate()?;
    if ids.is_empty() {
        return Err(Error::EmptyInput("cannot initialise an empty table".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let center_dist = Normal::<f64>::new(0.0, 0.1).expect("valid normal");
    let width_dist = Normal::<f64>::new(0.0, 0.05).expect("valid normal");
    // softplus(raw_one) == 1
    let raw_one = (1f64.exp() - 1.0).ln();
    let mut index = HashMap::with_capacity(ids.len());
    let mut boxes = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::InvalidParameter(format!("duplicate id `{id}`")));
        }
        boxes.push(ParamBox {
            center: (0..config.dim).map(|_| center_dist.sample(&mut rng)).collect(),
            raw_width: (0..config.dim)
                .map(|_| raw_one + width_dist.sample(&mut rng).clamp(-0.2, 0.2))
                .collect(),
        });
    }
    Ok(ParamTable {
        ids: ids.to_vec(),
        boxes,
        index,
    })
}

/// `−log softmax(scores)[0]`, where `scores[0]` is the positive.
pub fn softmax_cross_entropy(scores: &[f64]) -> f64 {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    (lse - scores[0]).max(0.0)
}

fn check_candidates(anchor: &ParamBox, candidates: &[&ParamBox]) -> Result<()> {
    for c in candidates {
        if c.dim() != anchor.dim() {
            return Err(Error::DimensionMismatch {
                left: anchor.dim(),
                right: c.dim(),
            });
        }
    }
    Ok(())
}

/// Log score of `candidate` for `anchor`, with its gradient.
fn log_score_grad(
    anchor: &ParamBox,
    candidate: &ParamBox,
    kind: RelationKind,
    gumbel: &GumbelParams,
) -> (f64, BoxGrad, BoxGrad) {
    let dim = anchor.dim();
    let (alo, ahi) = anchor.corners();
    let (clo, chi) = candidate.corners();
    let mut ga = BoxGrad::zeros(dim);
    let mut gc = BoxGrad::zeros(dim);
    let mut value = 0.0;
    // d(width)/d(raw)
    let sa: Vec<f64> = anchor.raw_width.iter().map(|&r| sigmoid(r)).collect();
    let sc: Vec<f64> = candidate.raw_width.iter().map(|&r| sigmoid(r)).collect();
    for d in 0..dim {
        let (h, dl, du) =
            log_gumbel_interval_overlap_grad(&[alo[d], clo[d]], &[ahi[d], chi[d]], gumbel.beta_int);
        value += h;
        ga.center[d] += dl[0] + du[0];
        ga.raw_width[d] += (du[0] - dl[0]) * sa[d];
        gc.center[d] += dl[1] + du[1];
        gc.raw_width[d] += (du[1] - dl[1]) * sc[d];
        if kind == RelationKind::Entailment {
            let (h, dl, du) = log_gumbel_interval_overlap_grad(&[alo[d]], &[ahi[d]], gumbel.beta_vol);
            value -= h;
            ga.center[d] -= dl[0] + du[0];
            ga.raw_width[d] -= (du[0] - dl[0]) * sa[d];
        }
    }
    (value, ga, gc)
}

/// Loss and gradients for one triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub anchor: BoxGrad,
    pub positive: BoxGrad,
    pub negatives: Vec<BoxGrad>,
}

pub fn triplet_loss(
    anchor: &ParamBox,
    positive: &ParamBox,
    negatives: &[&ParamBox],
    kind: RelationKind,
    config: &FitConfig,
) -> Result<f64> {
    Ok(triplet_loss_grad(anchor, positive, negatives, kind, config)?.loss)
}

pub fn triplet_loss_grad(
    anchor: &ParamBox,
    positive: &ParamBox,
    negatives: &[&ParamBox],
    kind: RelationKind,
    config: &FitConfig,
) -> Result<TripletGrad> {
    if negatives.is_empty() {
        return Err(Error::EmptyInput("triplet has no negatives".into()));
    }
    let mut candidates = Vec::with_capacity(negatives.len() + 1);
    candidates.push(positive);
    candidates.extend_from_slice(negatives);
    check_candidates(anchor, &candidates)?;

    let mut scores = Vec::with_capacity(candidates.len());
    let mut grads = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let (ls, ga, gc) = log_score_grad(anchor, c, kind, &config.gumbel);
        let (s, factor) = match config.loss_space {
            LossSpace::Log => (ls, 1.0),
            LossSpace::Raw => {
                let s = ls.exp();
                (s, s)
            }
        };
        scores.push(config.softmax_scale * s);
        grads.push((ga, gc, config.softmax_scale * factor));
    }
    let loss = softmax_cross_entropy(&scores);
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();

    let dim = anchor.dim();
    let mut anchor_grad = BoxGrad::zeros(dim);
    let mut cand_grads = Vec::with_capacity(candidates.len());
    for (k, (ga, gc, chain)) in grads.into_iter().enumerate() {
        let p = (scores[k] - m).exp() / z;
        let dl_ds = (p - if k == 0 { 1.0 } else { 0.0 }) * chain;
        anchor_grad.axpy(dl_ds, &ga);
        let mut g = BoxGrad::zeros(dim);
        g.axpy(dl_ds, &gc);
        cand_grads.push(g);
    }
    let positive_grad = cand_grads.remove(0);
    Ok(TripletGrad {
        loss,
        anchor: anchor_grad,
        positive: positive_grad,
        negatives: cand_grads,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub mean: f64,
    pub similarity: Option<f64>,
    pub entailment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
}

struct Resolved {
    anchor: usize,
    positive: usize,
    negatives: Vec<usize>,
    kind: RelationKind,
}

fn resolve(table: &ParamTable, triplets: &[RelationTriplet]) -> Result<Vec<Resolved>> {
    let find = |id: &str| table.index_of(id).ok_or_else(|| Error::UnknownId(id.to_string()));
    triplets
        .iter()
        .map(|t| {
            Ok(Resolved {
                anchor: find(&t.anchor)?,
                positive: find(&t.positive)?,
                negatives: t.negatives.iter().map(|n| find(n)).collect::<Result<_>>()?,
                kind: t.kind,
            })
        })
        .collect()
}

fn eval_resolved(table: &ParamTable, t: &Resolved, config: &FitConfig) -> Result<TripletGrad> {
    let b = &table.boxes;
    let negs: Vec<&ParamBox> = t.negatives.iter().map(|&n| &b[n]).collect();
    triplet_loss_grad(&b[t.anchor], &b[t.positive], &negs, t.kind, config)
}

/// Mean triplet loss at the current parameters.
pub fn mean_loss(table: &ParamTable, triplets: &[RelationTriplet], config: &FitConfig) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyInput("no triplets".into()));
    }
    let resolved = resolve(table, triplets)?;
    let mut total = 0.0;
    for t in &resolved {
        total += eval_resolved(table, t, config)?.loss;
    }
    Ok(total / resolved.len() as f64)
}

/// Mini-batch gradient descent. Batches contain a single relation kind and
/// alternate round-robin between kinds. The recorded loss of an epoch is the
/// mean over its triplets, each evaluated just before its batch's update.
pub fn train(
    table: &mut ParamTable,
    triplets: &[RelationTriplet],
    config: &FitConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let resolved = resolve(table, triplets)?;
    for t in &resolved {
        if t.negatives.is_empty() {
            return Err(Error::EmptyInput(format!(
                "triplet anchored at `{}` has no negatives",
                table.ids[t.anchor]
            )));
        }
    }
    let dim = table.boxes.first().map_or(config.dim, ParamBox::dim);
    let mut velocity: Vec<BoxGrad> = (0..table.len()).map(|_| BoxGrad::zeros(dim)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut by_kind: Vec<(RelationKind, Vec<usize>)> = Vec::new();
    for (i, t) in resolved.iter().enumerate() {
        match by_kind.iter_mut().find(|(k, _)| *k == t.kind) {
            Some((_, v)) => v.push(i),
            None => by_kind.push((t.kind, vec![i])),
        }
    }

    let mut report = TrainReport { epochs: Vec::new() };
    for _ in 0..config.epochs {
        let mut queues: Vec<Vec<Vec<usize>>> = by_kind
            .iter()
            .map(|(_, idx)| {
                let mut idx = idx.clone();
                idx.shuffle(&mut rng);
                idx.chunks(config.batch_size).rev().map(<[usize]>::to_vec).collect()
            })
            .collect();
        let mut sums: HashMap<RelationKind, (f64, usize)> = HashMap::new();
        loop {
            let mut any = false;
            for q in queues.iter_mut() {
                let Some(batch) = q.pop() else { continue };
                any = true;
                let results: Vec<TripletGrad> = batch
                    .par_iter()
                    .map(|&i| eval_resolved(table, &resolved[i], config))
                    .collect::<Result<_>>()?;
                let mut grads: Vec<BoxGrad> = (0..table.len()).map(|_| BoxGrad::zeros(dim)).collect();
                let scale = 1.0 / batch.len() as f64;
                for (&i, r) in batch.iter().zip(&results) {
                    let t = &resolved[i];
                    let entry = sums.entry(t.kind).or_insert((0.0, 0));
                    entry.0 += r.loss;
                    entry.1 += 1;
                    grads[t.anchor].axpy(scale, &r.anchor);
                    grads[t.positive].axpy(scale, &r.positive);
                    for (&n, g) in t.negatives.iter().zip(&r.negatives) {
                        grads[n].axpy(scale, g);
                    }
                }
                if let Some(max) = config.clip_norm {
                    let norm = grads
                        .iter()
                        .flat_map(|g| g.center.iter().chain(&g.raw_width))
                        .map(|x| x * x)
                        .sum::<f64>()
                        .sqrt();
                    if norm > max {
                        let shrink = max / norm;
                        for g in grads.iter_mut() {
                            g.center.iter_mut().chain(g.raw_width.iter_mut()).for_each(|x| *x *= shrink);
                        }
                    }
                }
                for ((p, v), g) in table.boxes.iter_mut().zip(velocity.iter_mut()).zip(&grads) {
                    for d in 0..dim {
                        v.center[d] = config.momentum * v.center[d] - config.learning_rate * g.center[d];
                        v.raw_width[d] =
                            config.momentum * v.raw_width[d] - config.learning_rate * g.raw_width[d];
                        p.center[d] += v.center[d];
                        p.raw_width[d] += v.raw_width[d];
                    }
                }
            }
            if !any {
                break;
            }
        }
        let (total, count) = sums.values().fold((0.0, 0), |(a, b), (s, c)| (a + s, b + c));
        let kind_mean = |k| sums.get(&k).map(|(s, c)| s / *c as f64);
        report.epochs.push(EpochLoss {
            mean: if count > 0 { total / count as f64 } else { 0.0 },
            similarity: kind_mean(RelationKind::Similarity),
            entailment: kind_mean(RelationKind::Entailment),
        });
    }
    Ok(report)
}

/// Smoothed log score used for ranking candidates.
pub fn candidate_score(
    anchor: &BoxEmbed,
    candidate: &BoxEmbed,
    kind: RelationKind,
    gumbel: &GumbelParams,
) -> Result<f64> {
    match kind {
        RelationKind::Similarity => log_gumbel_intersection_volume(anchor, candidate, gumbel),
        RelationKind::Entailment => log_gumbel_entailment_prob(anchor, candidate, gumbel),
    }
}

/// Fraction of triplets whose positive strictly outscores every negative.
pub fn eval_triplet_accuracy(
    table: &BoxTable,
    triplets: &[RelationTriplet],
    kind: RelationKind,
    gumbel: &GumbelParams,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::EmptyInput("no triplets to evaluate".into()));
    }
    let mut correct = 0usize;
    for t in triplets {
        let anchor = table.lookup(&t.anchor)?;
        let pos = candidate_score(anchor, table.lookup(&t.positive)?, kind, gumbel)?;
        let mut ok = true;
        for n in &t.negatives {
            if candidate_score(anchor, table.lookup(n)?, kind, gumbel)? >= pos {
                ok = false;
            }
        }
        correct += usize::from(ok);
    }
    Ok(correct as f64 / triplets.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("i{i}")).collect()
    }

    #[test]
    fn init_ranges() {
        let cfg = FitConfig::default();
        let t = init_table(&ids(1), &cfg).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.boxes()[0].width().iter().all(|w| *w > 0.5 && *w < 2.0));
        assert!(init_table(&[], &cfg).is_err());
        let a = init_table(&ids(100), &cfg).unwrap();
        let b = init_table(&ids(100), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cross_entropy_examples() {
        assert_abs_diff_eq!(softmax_cross_entropy(&[0.3, 0.3]), 2f64.ln(), epsilon = 1e-15);
        assert!(softmax_cross_entropy(&[20.0, 0.0]) < 1e-4);
        let e = 1f64.exp();
        assert_abs_diff_eq!(
            softmax_cross_entropy(&[1.0, 0.0, 0.0]),
            -(e / (e + 2.0)).ln(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(softmax_cross_entropy(&[1.0, 0.0, 0.0]), 0.551, epsilon = 5e-4);
    }

    #[test]
    fn uniform_scores_give_log_of_candidates() {
        let cfg = FitConfig::default();
        let b = ParamBox {
            center: vec![0.0, 0.0],
            raw_width: vec![0.3, 0.3],
        };
        let a = ParamBox {
            center: vec![0.1, -0.2],
            raw_width: vec![0.1, 0.5],
        };
        for kind in [RelationKind::Similarity, RelationKind::Entailment] {
            let l = triplet_loss(&a, &b, &[&b, &b], kind, &cfg).unwrap();
            assert_abs_diff_eq!(l, 3f64.ln(), epsilon = 1e-12);
        }
        assert!(triplet_loss(&a, &b, &[], RelationKind::Similarity, &cfg).is_err());
    }

    #[test]
    fn zero_epochs_is_noop() {
        let cfg = FitConfig { epochs: 0, ..FitConfig::default() };
        let mut t = init_table(&ids(3), &cfg).unwrap();
        let before = t.clone();
        let trip = vec![RelationTriplet {
            anchor: "i0".into(),
            positive: "i1".into(),
            negatives: vec!["i2".into()],
            kind: RelationKind::Entailment,
        }];
        let r = train(&mut t, &trip, &cfg).unwrap();
        assert!(r.epochs.is_empty());
        assert_eq!(t, before);
    }

    #[test]
    fn unknown_ids_rejected() {
        let cfg = FitConfig::default();
        let mut t = init_table(&ids(2), &cfg).unwrap();
        let trip = vec![RelationTriplet {
            anchor: "i0".into(),
            positive: "zz".into(),
            negatives: vec!["i1".into()],
            kind: RelationKind::Entailment,
        }];
        assert!(matches!(train(&mut t, &trip, &cfg), Err(Error::UnknownId(_))));
    }

    #[test]
    fn batch_size_one_rejected() {
        let cfg = FitConfig { batch_size: 1, ..FitConfig::default() };
        assert!(init_table(&ids(2), &cfg).is_err());
    }

    #[test]
    fn eval_accuracy_empty() {
        let t = BoxTable::new(2);
        assert!(eval_triplet_accuracy(&t, &[], RelationKind::Entailment, &GumbelParams::default()).is_err());
    }
}
