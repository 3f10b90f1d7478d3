//! Deterministic generators for nested box hierarchies, relation triplets and
//! planted score fields, plus the Monte-Carlo volume oracle.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analytics::ScoreTable;
use crate::boxcore::{join, BoxEmbed, BoxTable};
use crate::error::{Error, Result};

/// Shape of a generated hierarchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchySpec {
    pub depth: usize,
    pub branching: usize,
    pub dim: usize,
    pub shrink: f64,
    pub seed: u64,
}

impl HierarchySpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::InvalidParameter("depth must be at least 1".into()));
        }
        if self.branching < 2 {
            return Err(Error::InvalidParameter("branching must be at least 2".into()));
        }
        if self.dim < 1 {
            return Err(Error::InvalidParameter("dim must be at least 1".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "shrink must lie in (0, 1), got {}",
                self.shrink
            )));
        }
        Ok(())
    }
}

/// Nodes are stored breadth-first; index 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTree {
    pub nodes: BoxTable,
    pub parent: Vec<Option<usize>>,
    pub level: Vec<usize>,
    pub children: Vec<Vec<usize>>,
}

impl GroundTruthTree {
    /// Exactly one node must have no parent and the links must be acyclic.
    pub fn from_parents(nodes: BoxTable, parent: Vec<Option<usize>>) -> Result<Self> {
        let n = nodes.len();
        if parent.len() != n {
            return Err(Error::DimensionMismatch {
                left: n,
                right: parent.len(),
            });
        }
        if parent.iter().filter(|p| p.is_none()).count() != 1 {
            return Err(Error::InvalidParameter("a hierarchy needs exactly one root".into()));
        }
        let mut children = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n {
                    return Err(Error::InvalidParameter(format!("parent index {p} out of range")));
                }
                children[p].push(i);
            }
        }
        let mut level = vec![usize::MAX; n];
        let root = parent.iter().position(Option::is_none).expect("one root");
        level[root] = 0;
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            for &c in &children[i] {
                level[c] = level[i] + 1;
                stack.push(c);
            }
        }
        if level.contains(&usize::MAX) {
            return Err(Error::InvalidParameter("hierarchy contains a cycle".into()));
        }
        Ok(Self {
            nodes,
            parent,
            level,
            children,
        })
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.nodes.ids()[i]
    }

    /// Ancestors of `i`, nearest first.
    pub fn ancestors(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.parent[i];
        while let Some(p) = cur {
            out.push(p);
            cur = self.parent[p];
        }
        out
    }

    pub fn is_ancestor(&self, candidate: usize, of: usize) -> bool {
        self.ancestors(of).contains(&candidate)
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.children[i].is_empty()).collect()
    }

    /// Leaves in the subtree rooted at `i` (including `i` itself if a leaf).
    pub fn subtree_leaves(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![i];
        while let Some(n) = stack.pop() {
            if self.children[n].is_empty() {
                out.push(n);
            } else {
                stack.extend(self.children[n].iter().rev());
            }
        }
        out.sort_unstable();
        out
    }

    pub fn siblings(&self, i: usize) -> Vec<usize> {
        match self.parent[i] {
            Some(p) => self.children[p].iter().copied().filter(|&c| c != i).collect(),
            None => Vec::new(),
        }
    }
}

/// Root is `[-1, 1]^dim`; each child shrinks its parent's half-width by
/// `shrink` and is placed uniformly inside the parent, leaving a margin so
/// containment is strict.
pub fn gen_nested_boxes(spec: &HierarchySpec) -> Result<GroundTruthTree> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut boxes = vec![BoxEmbed::new(vec![0.0; spec.dim], vec![1.0; spec.dim])?];
    let mut parent = vec![None];
    let mut level = vec![0];
    let mut children: Vec<Vec<usize>> = vec![Vec::new()];

    let mut frontier = vec![0usize];
    for lvl in 1..spec.depth {
        let mut next = Vec::new();
        for &p in &frontier {
            let (pc, pd) = (boxes[p].center().to_vec(), boxes[p].delta().to_vec());
            let cd: Vec<f64> = pd.iter().map(|w| w * spec.shrink).collect();
            let mut placed: Vec<Vec<f64>> = Vec::new();
            for _ in 0..spec.branching {
                let center = loop {
                    let c: Vec<f64> = (0..spec.dim)
                        .map(|d| {
                            let slack = 0.95 * (pd[d] - cd[d]);
                            pc[d] + rng.random_range(-1.0..=1.0) * slack
                        })
                        .collect();
                    if !placed.contains(&c) {
                        break c;
                    }
                };
                placed.push(center.clone());
                let idx = boxes.len();
                boxes.push(BoxEmbed::new(center, cd.clone())?);
                parent.push(Some(p));
                level.push(lvl);
                children.push(Vec::new());
                children[p].push(idx);
                next.push(idx);
            }
        }
        frontier = next;
    }

    let nodes = BoxTable::from_entries(
        spec.dim,
        boxes.into_iter().enumerate().map(|(i, b)| (format!("n{i}"), b)),
    )?;
    Ok(GroundTruthTree {
        nodes,
        parent,
        level,
        children,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelationKind {
    Similarity,
    Entailment,
}

impl RelationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RelationKind::Similarity => "similarity",
            RelationKind::Entailment => "entailment",
        }
    }
}

impl std::str::FromStr for RelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similarity" => Ok(RelationKind::Similarity),
            "entailment" => Ok(RelationKind::Entailment),
            other => Err(Error::InvalidParameter(format!("unknown relation kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationTriplet {
    pub anchor: String,
    pub positive: String,
    pub negatives: Vec<String>,
    pub kind: RelationKind,
}

/// Entailment triplets: every non-root node is an anchor, its parent the
/// positive, and negatives are its siblings followed by random non-ancestors.
///
/// Similarity triplets: every leaf is an anchor, the sibling with the largest
/// intersection is the positive, and negatives are random nodes outside its
/// family (never ancestors).
pub fn gen_triplets(
    tree: &GroundTruthTree,
    kind: RelationKind,
    negatives_per: usize,
    seed: u64,
) -> Result<Vec<RelationTriplet>> {
    let depth = tree.level.iter().max().map_or(0, |l| l + 1);
    if depth < 2 {
        return Err(Error::InvalidParameter(format!(
            "{} triplets need a tree of depth at least 2",
            kind.as_str()
        )));
    }
    if negatives_per == 0 {
        return Err(Error::InvalidParameter("negatives_per must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    match kind {
        RelationKind::Entailment => {
            for anchor in 1..tree.len() {
                let parent = tree.parent[anchor].expect("non-root has a parent");
                let ancestors = tree.ancestors(anchor);
                let mut siblings = tree.siblings(anchor);
                siblings.shuffle(&mut rng);
                let mut negatives: Vec<usize> = siblings.into_iter().take(negatives_per).collect();
                if negatives.len() < negatives_per {
                    let mut rest: Vec<usize> = (0..tree.len())
                        .filter(|&n| n != anchor && !ancestors.contains(&n) && !negatives.contains(&n))
                        .collect();
                    rest.shuffle(&mut rng);
                    negatives.extend(rest.into_iter().take(negatives_per - negatives.len()));
                }
                if negatives.is_empty() {
                    continue;
                }
                out.push(RelationTriplet {
                    anchor: tree.id(anchor).to_string(),
                    positive: tree.id(parent).to_string(),
                    negatives: negatives.iter().map(|&n| tree.id(n).to_string()).collect(),
                    kind,
                });
            }
        }
        RelationKind::Similarity => {
            let boxes = tree.nodes.boxes();
            for anchor in tree.leaves() {
                let siblings = tree.siblings(anchor);
                let Some(positive) = siblings
                    .iter()
                    .copied()
                    .map(|s| {
                        let v = crate::boxcore::log_intersection_volume(&boxes[anchor], &boxes[s])
                            .expect("same dimension");
                        (s, v)
                    })
                    .fold(None::<(usize, f64)>, |best, (s, v)| match best {
                        Some((_, bv)) if bv >= v => best,
                        _ => Some((s, v)),
                    })
                    .map(|(s, _)| s)
                else {
                    continue;
                };
                let ancestors = tree.ancestors(anchor);
                let family: Vec<usize> = siblings.clone();
                let mut pool: Vec<usize> = (0..tree.len())
                    .filter(|&n| n != anchor && n != positive && !ancestors.contains(&n))
                    .filter(|n| !family.contains(n))
                    .collect();
                if pool.is_empty() {
                    pool = family.into_iter().filter(|&n| n != positive).collect();
                }
                pool.shuffle(&mut rng);
                let negatives: Vec<usize> = pool.into_iter().take(negatives_per).collect();
                if negatives.is_empty() {
                    continue;
                }
                out.push(RelationTriplet {
                    anchor: tree.id(anchor).to_string(),
                    positive: tree.id(positive).to_string(),
                    negatives: negatives.iter().map(|&n| tree.id(n).to_string()).collect(),
                    kind,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("tree admits no triplets".into()));
    }
    Ok(out)
}

/// One single-negative entailment triplet `(anchor, parent, n)` for every
/// non-ancestor `n` of every non-root anchor, skipping `(anchor, n)` pairs
/// already used as negatives in `seen`.
pub fn heldout_entailment_pairs(tree: &GroundTruthTree, seen: &[RelationTriplet]) -> Result<Vec<RelationTriplet>> {
    let used: HashSet<(&str, &str)> = seen
        .iter()
        .filter(|t| t.kind == RelationKind::Entailment)
        .flat_map(|t| t.negatives.iter().map(move |n| (t.anchor.as_str(), n.as_str())))
        .collect();
    let mut out = Vec::new();
    for anchor in 1..tree.len() {
        let parent = tree.parent[anchor].expect("non-root has a parent");
        let ancestors = tree.ancestors(anchor);
        for n in 0..tree.len() {
            if n == anchor || ancestors.contains(&n) || used.contains(&(tree.id(anchor), tree.id(n))) {
                continue;
            }
            out.push(RelationTriplet {
                anchor: tree.id(anchor).to_string(),
                positive: tree.id(parent).to_string(),
                negatives: vec![tree.id(n).to_string()],
                kind: RelationKind::Entailment,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("no unseen entailment pairs".into()));
    }
    Ok(out)
}

/// Leaf scores: `weak_mean ± noise` under `weak_subtree`, `strong_mean ±
/// noise` elsewhere, clipped to `[1, 10]`.
pub fn gen_scores(
    tree: &GroundTruthTree,
    weak_subtree: &str,
    weak_mean: f64,
    strong_mean: f64,
    noise: f64,
    seed: u64,
) -> Result<ScoreTable> {
    if weak_mean >= strong_mean {
        return Err(Error::InvalidParameter(format!(
            "weak_mean ({weak_mean}) must be below strong_mean ({strong_mean})"
        )));
    }
    if noise.is_nan() || noise < 0.0 {
        return Err(Error::InvalidParameter("noise must be non-negative".into()));
    }
    let weak_root = tree
        .nodes
        .index_of(weak_subtree)
        .ok_or_else(|| Error::UnknownId(weak_subtree.to_string()))?;
    let weak = tree.subtree_leaves(weak_root);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = ScoreTable::new();
    for leaf in tree.leaves() {
        let mean = if weak.binary_search(&leaf).is_ok() {
            weak_mean
        } else {
            strong_mean
        };
        let jitter = if noise > 0.0 {
            rng.random_range(-1.0..=1.0) * noise
        } else {
            0.0
        };
        scores.insert(tree.id(leaf), (mean + jitter).clamp(1.0, 10.0))?;
    }
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McMode {
    /// Volume of the union of the set.
    Volume,
    /// Volume of the common intersection of the set.
    Intersection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Volume of the sampling region.
    pub region: f64,
    pub samples: usize,
}

impl McEstimate {
    /// Standard error the estimator would have if the true volume were
    /// `volume`. Unlike `std_error` it stays positive when no sample hits a
    /// small but non-empty target.
    pub fn std_error_at(&self, volume: f64) -> f64 {
        let q = (volume / self.region).clamp(0.0, 1.0);
        self.region * (q * (1.0 - q) / self.samples as f64).sqrt()
    }
}

/// Largest dimensionality the sampling oracle accepts.
pub const MC_MAX_DIM: usize = 8;

const MC_CHUNK: usize = 1 << 16;

/// Uniform hit-rate estimate. Points are drawn from the joint bounding box of
/// the set, padded by a quarter of its extent on each side.
pub fn monte_carlo_volume(
    boxes: &[BoxEmbed],
    mode: McMode,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let first = boxes
        .first()
        .ok_or_else(|| Error::EmptyInput("no boxes to sample".into()))?;
    let dim = first.dim();
    if dim > MC_MAX_DIM {
        return Err(Error::InvalidParameter(format!(
            "Monte-Carlo oracle is limited to {MC_MAX_DIM} dimensions, got {dim}"
        )));
    }
    if samples < 10_000 {
        return Err(Error::InvalidParameter("at least 10^4 samples are required".into()));
    }
    let mut hull = first.clone();
    for b in &boxes[1..] {
        hull = join(&hull, b)?;
    }
    let lo: Vec<f64> = hull
        .lower()
        .iter()
        .zip(hull.delta())
        .map(|(l, w)| l - 0.5 * w)
        .collect();
    let hi: Vec<f64> = hull
        .upper()
        .iter()
        .zip(hull.delta())
        .map(|(u, w)| u + 0.5 * w)
        .collect();
    let region: f64 = lo.iter().zip(&hi).map(|(l, h)| h - l).product();

    let chunks = samples.div_ceil(MC_CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut point = vec![0.0; dim];
            let mut hits = 0usize;
            for _ in 0..n {
                for d in 0..dim {
                    point[d] = rng.random_range(lo[d]..hi[d]);
                }
                let inside = |b: &BoxEmbed| {
                    (0..dim).all(|d| point[d] >= b.lower()[d] && point[d] <= b.upper()[d])
                };
                let hit = match mode {
                    McMode::Volume => boxes.iter().any(inside),
                    McMode::Intersection => boxes.iter().all(inside),
                };
                hits += usize::from(hit);
            }
            hits
        })
        .sum();
    let p = hits as f64 / samples as f64;
    Ok(McEstimate {
        value: p * region,
        std_error: region * (p * (1.0 - p) / samples as f64).sqrt(),
        region,
        samples,
    })
}
