//! Downstream evaluation: kNN score prediction, local score consistency,
//! specificity-depth agreement and weakness-cluster counting.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boxcore::{
    cosine, csdelta_entailment, is_valid_id, log_gumbel_intersection_volume, log_gumbel_volume, BoxEmbed,
    BoxTable, GumbelParams, VectorEmbed,
};
use crate::error::{Error, Result};
use crate::hcluster::{leaf_neighbors, node_depths, ClusterTree};

/// Item id → real score, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    entries: Vec<(String, f64)>,
    index: HashMap<String, usize>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, score: f64) -> Result<()> {
        let id = id.into();
        if !is_valid_id(&id) {
            return Err(Error::InvalidParameter(format!("invalid id `{id}`")));
        }
        if !score.is_finite() {
            return Err(Error::InvalidParameter(format!("score for `{id}` is not finite")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::InvalidParameter(format!("duplicate score for `{id}`")));
        }
        self.index.insert(id.clone(), self.entries.len());
        self.entries.push((id, score));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.index.get(id).map(|&i| self.entries[i].1)
    }

    pub fn require(&self, id: &str) -> Result<f64> {
        self.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(id, s)| (id.as_str(), *s))
    }
}

// ---------------------------------------------------------------------------
// kNN score prediction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnMetric {
    /// Smoothed intersection volume with the query.
    Intersection,
    /// Smoothed `p(query | item)`: how much of the item lies inside the query.
    Entailment,
    /// Cosine of box centers.
    Cosine,
    /// CSDelta score of box centers, query first.
    CsDelta,
    /// Uniform sample of `k` items.
    Random,
}

impl std::str::FromStr for KnnMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "intersection" => KnnMetric::Intersection,
            "entailment" => KnnMetric::Entailment,
            "cosine" => KnnMetric::Cosine,
            "csdelta" => KnnMetric::CsDelta,
            "random" => KnnMetric::Random,
            other => return Err(Error::InvalidParameter(format!("unknown metric `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: KnnMetric,
    pub gumbel: GumbelParams,
    pub seed: u64,
}

fn knn_score(query: &BoxEmbed, item: &BoxEmbed, metric: KnnMetric, gumbel: &GumbelParams) -> Result<f64> {
    let vector_score = |r: Result<f64>| match r {
        Err(Error::ZeroVector) => Ok(f64::NEG_INFINITY),
        other => other,
    };
    match metric {
        KnnMetric::Intersection => log_gumbel_intersection_volume(query, item, gumbel),
        KnnMetric::Entailment => {
            Ok(log_gumbel_intersection_volume(item, query, gumbel)? - log_gumbel_volume(item, gumbel))
        }
        KnnMetric::Cosine => vector_score(cosine(
            &VectorEmbed(query.center().to_vec()),
            &VectorEmbed(item.center().to_vec()),
        )),
        KnnMetric::CsDelta => vector_score(csdelta_entailment(
            &VectorEmbed(query.center().to_vec()),
            &VectorEmbed(item.center().to_vec()),
        )),
        KnnMetric::Random => unreachable!("random metric has no score"),
    }
}

/// Corpus positions of the `k` retrieved items. Ties go to the earlier item.
pub fn knn_select(query: &BoxEmbed, corpus: &BoxTable, config: &KnnConfig) -> Result<Vec<usize>> {
    let n = corpus.len();
    if config.k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    if config.k > n {
        return Err(Error::InvalidParameter(format!(
            "k = {} exceeds corpus size {n}",
            config.k
        )));
    }
    if config.metric == KnnMetric::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut picked = sample(&mut rng, n, config.k).into_vec();
        picked.sort_unstable();
        return Ok(picked);
    }
    let mut scored: Vec<(f64, usize)> = corpus
        .boxes()
        .iter()
        .enumerate()
        .map(|(i, b)| Ok((knn_score(query, b, config.metric, &config.gumbel)?, i)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(config.k).map(|(_, i)| i).collect())
}

/// Mean score of the retrieved neighbours.
pub fn knn_predict(query: &BoxEmbed, corpus: &BoxTable, scores: &ScoreTable, config: &KnnConfig) -> Result<f64> {
    let picked = knn_select(query, corpus, config)?;
    let mut total = 0.0;
    for &i in &picked {
        total += scores.require(&corpus.ids()[i])?;
    }
    Ok(total / picked.len() as f64)
}

/// Leave-one-out predictions for every scored item of `table`, each queried
/// against all other scored items. Returns `(predictions, gold)`.
pub fn knn_leave_one_out(table: &BoxTable, scores: &ScoreTable, config: &KnnConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let scored: Vec<usize> = (0..table.len())
        .filter(|&i| scores.get(&table.ids()[i]).is_some())
        .collect();
    let mut preds = Vec::with_capacity(scored.len());
    let mut gold = Vec::with_capacity(scored.len());
    for (qi, &q) in scored.iter().enumerate() {
        let corpus = BoxTable::from_entries(
            table.dim(),
            scored
                .iter()
                .filter(|&&i| i != q)
                .map(|&i| (table.ids()[i].clone(), table.boxes()[i].clone())),
        )?;
        let cfg = KnnConfig {
            seed: config.seed.wrapping_add(qi as u64),
            ..*config
        };
        preds.push(knn_predict(&table.boxes()[q], &corpus, scores, &cfg)?);
        gold.push(scores.require(&table.ids()[q])?);
    }
    Ok((preds, gold))
}

pub fn rmse(predictions: &[f64], gold: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("rmse of no predictions".into()));
    }
    if predictions.len() != gold.len() {
        return Err(Error::DimensionMismatch {
            left: predictions.len(),
            right: gold.len(),
        });
    }
    let mse = predictions
        .iter()
        .zip(gold)
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        / predictions.len() as f64;
    Ok(mse.sqrt())
}

// ---------------------------------------------------------------------------
// Tree metrics
// ---------------------------------------------------------------------------

fn leaf_scores(tree: &ClusterTree, scores: &ScoreTable) -> Result<Vec<f64>> {
    tree.leaf_ids.iter().map(|id| scores.require(id)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consistency {
    pub method_diff: f64,
    pub random_diff: f64,
    /// `(random − method) / random` in percent; 0 when `random_diff` is 0.
    pub improvement_pct: f64,
}

/// Mean absolute score gap between sibling leaves, against a baseline that
/// pairs each of those leaves with a uniformly drawn other leaf.
pub fn local_score_consistency(tree: &ClusterTree, scores: &ScoreTable, seed: u64) -> Result<Consistency> {
    let pairs = leaf_neighbors(tree);
    if pairs.is_empty() {
        return Err(Error::EmptyInput("tree has no sibling leaf pairs".into()));
    }
    let mut s = vec![f64::NAN; tree.n_leaves()];
    for &(a, b) in &pairs {
        s[a] = scores.require(&tree.leaf_ids[a])?;
        s[b] = scores.require(&tree.leaf_ids[b])?;
    }
    let method_diff = pairs.iter().map(|&(a, b)| (s[a] - s[b]).abs()).sum::<f64>() / pairs.len() as f64;

    let all = leaf_scores(tree, scores)?;
    let n = all.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for &(a, b) in &pairs {
        for leaf in [a, b] {
            let mut other = rng.random_range(0..n - 1);
            if other >= leaf {
                other += 1;
            }
            total += (all[leaf] - all[other]).abs();
            count += 1;
        }
    }
    let random_diff = total / count as f64;
    let improvement_pct = if random_diff == 0.0 {
        0.0
    } else {
        100.0 * (random_diff - method_diff) / random_diff
    };
    Ok(Consistency {
        method_diff,
        random_diff,
        improvement_pct,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoreSpecific {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecificityPair {
    pub id_a: String,
    pub id_b: String,
    pub more_specific: MoreSpecific,
}

/// Per pair: 1 if the more specific leaf is deeper, 0.5 at equal depth, −1
/// otherwise. Returns the mean times 100.
pub fn specificity_agreement(tree: &ClusterTree, pairs: &[SpecificityPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no specificity pairs".into()));
    }
    let depths = node_depths(tree);
    let depth_of = |id: &str| {
        tree.leaf_index(id)
            .map(|i| depths[i])
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    };
    let mut total = 0.0;
    for p in pairs {
        if p.id_a == p.id_b {
            return Err(Error::InvalidParameter(format!("pair compares `{}` with itself", p.id_a)));
        }
        let (da, db) = (depth_of(&p.id_a)?, depth_of(&p.id_b)?);
        let (specific, general) = match p.more_specific {
            MoreSpecific::A => (da, db),
            MoreSpecific::B => (db, da),
        };
        total += match specific.cmp(&general) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Equal => 0.5,
            std::cmp::Ordering::Less => -1.0,
        };
    }
    Ok(100.0 * total / pairs.len() as f64)
}

/// `max(s, 100 − s)` for baselines without a preferred direction.
pub fn direction_free(agreement_pct: f64) -> f64 {
    agreement_pct.max(100.0 - agreement_pct)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeaknessReport {
    pub threshold: f64,
    /// `counts[t - 1]` is the number of weak clusters of size at least `t`.
    pub counts: Vec<usize>,
    pub auc: usize,
}

impl WeaknessReport {
    /// Count at minimum size `t` (1-based); 0 beyond the largest cluster.
    pub fn count_at(&self, t: usize) -> usize {
        if t == 0 {
            return self.counts.first().copied().unwrap_or(0);
        }
        self.counts.get(t - 1).copied().unwrap_or(0)
    }
}

/// Nearest-rank percentile of `values`.
pub fn nearest_rank_percentile(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of no values".into()));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidParameter(format!("percentile {percentile} outside [0, 100]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * v.len() as f64).ceil() as usize;
    Ok(v[rank.clamp(1, v.len()) - 1])
}

/// Clusters (leaves included) whose mean leaf score is at or below the
/// percentile threshold, counted per minimum size. With `integer_snap` the
/// threshold is floored to an integer.
pub fn weakness_clusters(
    tree: &ClusterTree,
    scores: &ScoreTable,
    percentile: f64,
    integer_snap: bool,
) -> Result<WeaknessReport> {
    let leaf = leaf_scores(tree, scores)?;
    let p = nearest_rank_percentile(&leaf, percentile)?;
    let threshold = if integer_snap { p.floor() } else { p };
    let n = tree.n_leaves();
    let mut by_size = vec![0usize; n + 1];
    for node in &tree.nodes {
        let mean = node.members.iter().map(|&m| leaf[m]).sum::<f64>() / node.members.len() as f64;
        if mean <= threshold {
            by_size[node.members.len()] += 1;
        }
    }
    let mut counts = vec![0usize; n];
    let mut running = 0;
    for t in (1..=n).rev() {
        running += by_size[t];
        counts[t - 1] = running;
    }
    let auc = counts.iter().skip(1).sum();
    Ok(WeaknessReport {
        threshold,
        counts,
        auc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeaknessComparison {
    pub size2_pct: f64,
    pub auc_pct: f64,
}

/// Relative change of `a` over `b` in weak clusters of size ≥ 2 and in AUC.
pub fn compare_weakness(a: &WeaknessReport, b: &WeaknessReport) -> Result<WeaknessComparison> {
    let (a2, b2) = (a.count_at(2) as f64, b.count_at(2) as f64);
    if b2 == 0.0 {
        return Err(Error::Undefined("baseline has no weak clusters of size 2".into()));
    }
    if b.auc == 0 {
        return Err(Error::Undefined("baseline weakness AUC is zero".into()));
    }
    Ok(WeaknessComparison {
        size2_pct: 100.0 * (a2 - b2) / b2,
        auc_pct: 100.0 * (a.auc as f64 - b.auc as f64) / b.auc as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line_table(n: usize) -> BoxTable {
        BoxTable::from_entries(
            1,
            (0..n).map(|i| (format!("l{i}"), BoxEmbed::new(vec![i as f64 * 3.0], vec![0.5]).unwrap())),
        )
        .unwrap()
    }

    fn scores(vals: &[f64]) -> ScoreTable {
        let mut s = ScoreTable::new();
        for (i, v) in vals.iter().enumerate() {
            s.insert(format!("l{i}"), *v).unwrap();
        }
        s
    }

    fn cfg(k: usize, metric: KnnMetric) -> KnnConfig {
        KnnConfig {
            k,
            metric,
            gumbel: GumbelParams::default(),
            seed: 3,
        }
    }

    #[test]
    fn knn_forced_selection() {
        let t = line_table(4);
        let s = scores(&[1.0, 2.0, 3.0, 6.0]);
        let q = BoxEmbed::new(vec![1.0], vec![0.5]).unwrap();
        for m in [KnnMetric::Intersection, KnnMetric::Entailment, KnnMetric::Cosine, KnnMetric::CsDelta, KnnMetric::Random] {
            assert_abs_diff_eq!(knn_predict(&q, &t, &s, &cfg(4, m)).unwrap(), 3.0, epsilon = 1e-12);
        }
        assert!(knn_predict(&q, &t, &s, &cfg(5, KnnMetric::Intersection)).is_err());
    }

    #[test]
    fn knn_identical_box() {
        let t = line_table(5);
        let s = scores(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let q = t.boxes()[3].clone();
        assert_eq!(knn_predict(&q, &t, &s, &cfg(1, KnnMetric::Intersection)).unwrap(), 4.0);
    }

    #[test]
    fn knn_random_reproducible() {
        let t = line_table(20);
        let s = scores(&(0..20).map(|i| i as f64).collect::<Vec<_>>());
        let q = BoxEmbed::new(vec![0.0], vec![1.0]).unwrap();
        let a = knn_predict(&q, &t, &s, &cfg(5, KnnMetric::Random)).unwrap();
        let b = knn_predict(&q, &t, &s, &cfg(5, KnnMetric::Random)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        let v = [9.0, 2.0, 2.0, 2.0, 2.0, 9.0, 9.0, 9.0];
        assert_eq!(nearest_rank_percentile(&v, 25.0).unwrap(), 2.0);
        assert_eq!(nearest_rank_percentile(&[5.0], 25.0).unwrap(), 5.0);
        assert_eq!(nearest_rank_percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 25.0).unwrap(), 2.0);
    }

    #[test]
    fn compare_weakness_rows() {
        let r = |c2: usize, auc: usize| WeaknessReport { threshold: 3.0, counts: vec![500, c2], auc };
        let same = compare_weakness(&r(35, 80), &r(35, 80)).unwrap();
        assert_eq!(same.size2_pct, 0.0);
        assert_eq!(same.auc_pct, 0.0);
        let alpaca = compare_weakness(&r(141, 592), &r(130, 403)).unwrap();
        assert_abs_diff_eq!(alpaca.size2_pct, 8.46, epsilon = 5e-3);
        assert_abs_diff_eq!(alpaca.auc_pct, 46.90, epsilon = 5e-3);
        assert!(compare_weakness(&r(3, 4), &r(2, 0)).is_err());
        assert!(compare_weakness(&r(3, 4), &r(0, 3)).is_err());
    }
}
