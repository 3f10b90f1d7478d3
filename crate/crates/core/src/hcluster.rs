//! Agglomerative clustering of boxes under the volume-based join distance
//! `d(A, B) = Vol(A ∨ B) − (Vol(A) + Vol(B) − Vol(A ∩ B))`.
//!
//! Clusters are represented by the bounding box of their members. Distances
//! are compared in log form with the join volume factored out, which keeps
//! the comparison meaningful in hundreds of dimensions.

use rayon::prelude::*;

use crate::boxcore::{join, log_intersection_volume, BoxEmbed, BoxTable};
use crate::error::{Error, Result};

/// `(d / Vol(A ∨ B), ln Vol(A ∨ B))`, exactly zero under containment.
fn relative_join_distance(a: &BoxEmbed, b: &BoxEmbed) -> Result<(f64, f64)> {
    let (small, large) = if a.log_volume() <= b.log_volume() { (a, b) } else { (b, a) };
    let j = join(small, large)?;
    let lj = j.log_volume();
    let ls = small.log_volume();
    let ll = large.log_volume();
    let li = log_intersection_volume(small, large)?;
    let r = (1.0 - (ll - lj).exp()) + ((li - lj).exp() - (ls - lj).exp());
    Ok((r.max(0.0), lj))
}

/// Join distance in raw units. May underflow or overflow in high dimensions;
/// [`log_join_distance`] does not.
pub fn join_distance(a: &BoxEmbed, b: &BoxEmbed) -> Result<f64> {
    let (r, lj) = relative_join_distance(a, b)?;
    Ok(r * lj.exp())
}

/// `ln d_join`; `-inf` when the distance is zero.
pub fn log_join_distance(a: &BoxEmbed, b: &BoxEmbed) -> Result<f64> {
    let (r, lj) = relative_join_distance(a, b)?;
    Ok(r.ln() + lj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterNode {
    pub bbox: BoxEmbed,
    /// Sorted leaf indices.
    pub members: Vec<usize>,
    pub children: Option<(usize, usize)>,
    pub parent: Option<usize>,
    pub depth: usize,
}

impl ClusterNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Binary merge tree. Nodes `0..n` are the leaves in table order; merged
/// nodes follow in creation order, so the root is the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    pub nodes: Vec<ClusterNode>,
    pub leaf_ids: Vec<String>,
}

impl ClusterTree {
    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_ids.len()
    }

    pub fn leaf_index(&self, id: &str) -> Option<usize> {
        self.leaf_ids.iter().position(|x| x == id)
    }

    /// Assembles a tree from explicit merges `(left, right)`; merge `k`
    /// creates node `leaves.len() + k`. Used for hand-built fixtures and when
    /// reading tree files.
    pub fn from_merges(leaves: &BoxTable, merges: &[(usize, usize)]) -> Result<Self> {
        let n = leaves.len();
        if n == 0 {
            return Err(Error::EmptyInput("no leaves".into()));
        }
        if merges.len() + 1 != n {
            return Err(Error::InvalidParameter(format!(
                "{} leaves need {} merges, got {}",
                n,
                n - 1,
                merges.len()
            )));
        }
        let mut nodes: Vec<ClusterNode> = leaves
            .boxes()
            .iter()
            .enumerate()
            .map(|(i, b)| ClusterNode {
                bbox: b.clone(),
                members: vec![i],
                children: None,
                parent: None,
                depth: 0,
            })
            .collect();
        for &(a, b) in merges {
            let c = nodes.len();
            if a >= c || b >= c || a == b || nodes[a].parent.is_some() || nodes[b].parent.is_some() {
                return Err(Error::InvalidParameter(format!("invalid merge ({a}, {b})")));
            }
            nodes.push(merged(&nodes[a], &nodes[b], a, b)?);
            nodes[a].parent = Some(c);
            nodes[b].parent = Some(c);
        }
        let mut tree = Self {
            nodes,
            leaf_ids: leaves.ids().to_vec(),
        };
        tree.assign_depths();
        Ok(tree)
    }

    fn assign_depths(&mut self) {
        let root = self.root();
        self.nodes[root].depth = 0;
        for i in (0..root).rev() {
            // parents are always created after their children
            let p = self.nodes[i].parent.expect("non-root has a parent");
            self.nodes[i].depth = self.nodes[p].depth + 1;
        }
    }
}

fn merged(a: &ClusterNode, b: &ClusterNode, ia: usize, ib: usize) -> Result<ClusterNode> {
    let mut members = Vec::with_capacity(a.members.len() + b.members.len());
    members.extend_from_slice(&a.members);
    members.extend_from_slice(&b.members);
    members.sort_unstable();
    Ok(ClusterNode {
        bbox: join(&a.bbox, &b.bbox)?,
        members,
        children: Some((ia.min(ib), ia.max(ib))),
        parent: None,
        depth: 0,
    })
}

/// Candidate merge; ordered by distance, then by the creation-index pair.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f64,
    lo: usize,
    hi: usize,
}

impl Candidate {
    fn new(dist: f64, a: usize, b: usize) -> Self {
        Self {
            dist,
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    fn better_than(&self, other: &Candidate) -> bool {
        match self.dist.total_cmp(&other.dist) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => (self.lo, self.hi) < (other.lo, other.hi),
        }
    }

    fn partner(&self, of: usize) -> usize {
        if self.lo == of {
            self.hi
        } else {
            self.lo
        }
    }
}

fn best_partner(nodes: &[ClusterNode], of: usize, active: &[usize]) -> Option<Candidate> {
    active
        .iter()
        .filter(|&&k| k != of)
        .map(|&k| {
            let d = log_join_distance(&nodes[of].bbox, &nodes[k].bbox).expect("dimensions checked");
            Candidate::new(d, of, k)
        })
        .fold(None, |best, c| match best {
            Some(b) if !c.better_than(&b) => Some(b),
            _ => Some(c),
        })
}

/// Greedy nearest-pair merging. Each active cluster caches its nearest
/// partner; only clusters whose cached partner was consumed by a merge are
/// rescanned.
pub fn agglomerate(table: &BoxTable) -> Result<ClusterTree> {
    let n = table.len();
    if n == 0 {
        return Err(Error::EmptyInput("cannot cluster an empty table".into()));
    }
    let mut nodes: Vec<ClusterNode> = table
        .boxes()
        .iter()
        .enumerate()
        .map(|(i, b)| ClusterNode {
            bbox: b.clone(),
            members: vec![i],
            children: None,
            parent: None,
            depth: 0,
        })
        .collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut best: Vec<Option<Candidate>> = {
        let snapshot = &nodes;
        let act = &active;
        (0..n)
            .into_par_iter()
            .map(|i| best_partner(snapshot, i, act))
            .collect()
    };

    while active.len() > 1 {
        let pick = active
            .iter()
            .filter_map(|&i| best[i])
            .fold(None::<Candidate>, |acc, c| match acc {
                Some(a) if !c.better_than(&a) => Some(a),
                _ => Some(c),
            })
            .expect("at least two active clusters");
        let (a, b) = (pick.lo, pick.hi);
        let c = nodes.len();
        let node = merged(&nodes[a], &nodes[b], a, b)?;
        nodes.push(node);
        nodes[a].parent = Some(c);
        nodes[b].parent = Some(c);
        active.retain(|&k| k != a && k != b);
        best.push(None);

        let to_new: Vec<Candidate> = {
            let snapshot = &nodes;
            active
                .par_iter()
                .map(|&k| {
                    let d = log_join_distance(&snapshot[c].bbox, &snapshot[k].bbox).expect("dimensions checked");
                    Candidate::new(d, k, c)
                })
                .collect()
        };
        best[c] = to_new.iter().copied().fold(None, |acc, x| match acc {
            Some(b) if !x.better_than(&b) => Some(b),
            _ => Some(x),
        });

        let mut with_new = active.clone();
        with_new.push(c);
        let stale: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&k| best[k].is_some_and(|bk| {
                let p = bk.partner(k);
                p == a || p == b
            }))
            .collect();
        let refreshed: Vec<(usize, Option<Candidate>)> = {
            let snapshot = &nodes;
            let with_new = &with_new;
            stale
                .par_iter()
                .map(|&k| (k, best_partner(snapshot, k, with_new)))
                .collect()
        };
        for (k, cand) in refreshed {
            best[k] = cand;
        }
        for (&k, cand) in active.iter().zip(&to_new) {
            if best[k].is_none_or(|bk| cand.better_than(&bk)) {
                best[k] = Some(*cand);
            }
        }
        active.push(c);
    }

    let mut tree = ClusterTree {
        nodes,
        leaf_ids: table.ids().to_vec(),
    };
    tree.assign_depths();
    Ok(tree)
}

/// Pairs of leaves that are the two children of one parent.
pub fn leaf_neighbors(tree: &ClusterTree) -> Vec<(usize, usize)> {
    tree.nodes
        .iter()
        .filter_map(|n| n.children)
        .filter(|&(a, b)| tree.nodes[a].is_leaf() && tree.nodes[b].is_leaf())
        .collect()
}

/// Edge count from the root for every leaf, in leaf order.
pub fn node_depths(tree: &ClusterTree) -> Vec<usize> {
    (0..tree.n_leaves()).map(|i| tree.nodes[i].depth).collect()
}
