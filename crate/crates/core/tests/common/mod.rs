#![allow(dead_code)]

use boxlab::analytics::ScoreTable;
use boxlab::boxcore::{BoxEmbed, BoxTable};
use boxlab::hcluster::ClusterTree;
use rand::Rng;

/// Leaves `l0..l{n-1}` as disjoint unit intervals, merged as given.
pub fn fixture_tree(n: usize, merges: &[(usize, usize)]) -> ClusterTree {
    let leaves = BoxTable::from_entries(
        1,
        (0..n).map(|i| (format!("l{i}"), BoxEmbed::new(vec![3.0 * i as f64], vec![0.5]).unwrap())),
    )
    .unwrap();
    ClusterTree::from_merges(&leaves, merges).unwrap()
}

pub fn fixture_scores(values: &[f64]) -> ScoreTable {
    let mut s = ScoreTable::new();
    for (i, v) in values.iter().enumerate() {
        s.insert(format!("l{i}"), *v).unwrap();
    }
    s
}

/// Balanced merge order over leaves `0..n` (n a power of two).
pub fn balanced_merges(n: usize) -> Vec<(usize, usize)> {
    let mut level: Vec<usize> = (0..n).collect();
    let mut next_id = n;
    let mut merges = Vec::new();
    while level.len() > 1 {
        let mut up = Vec::new();
        for pair in level.chunks(2) {
            merges.push((pair[0], pair[1]));
            up.push(next_id);
            next_id += 1;
        }
        level = up;
    }
    merges
}

/// Four weak leaves (score 2) followed by twelve strong leaves (score 9).
pub fn weakness_scores() -> ScoreTable {
    let v: Vec<f64> = (0..16).map(|i| if i < 4 { 2.0 } else { 9.0 }).collect();
    fixture_scores(&v)
}

/// The weak leaves form one subtree of the balanced tree.
pub fn planted_weak_tree() -> ClusterTree {
    fixture_tree(16, &balanced_merges(16))
}

/// Each weak leaf is paired with a strong leaf first.
pub fn adversarial_weak_tree() -> ClusterTree {
    let mut merges = vec![(0, 4), (1, 5), (2, 6), (3, 7), (8, 9), (10, 11), (12, 13), (14, 15)];
    let mut level: Vec<usize> = (16..24).collect();
    let mut next_id = 24;
    while level.len() > 1 {
        let mut up = Vec::new();
        for pair in level.chunks(2) {
            merges.push((pair[0], pair[1]));
            up.push(next_id);
            next_id += 1;
        }
        level = up;
    }
    fixture_tree(16, &merges)
}

pub fn random_box(rng: &mut impl Rng, dim: usize, spread: f64, wmin: f64, wmax: f64) -> BoxEmbed {
    let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-spread..=spread)).collect();
    let d: Vec<f64> = (0..dim).map(|_| rng.random_range(wmin..=wmax)).collect();
    BoxEmbed::new(c, d).unwrap()
}

/// Box strictly inside `outer`, built by shrinking each side.
pub fn shrunk_inside(rng: &mut impl Rng, outer: &BoxEmbed) -> BoxEmbed {
    let mut lo = Vec::with_capacity(outer.dim());
    let mut hi = Vec::with_capacity(outer.dim());
    for d in 0..outer.dim() {
        let (l, u) = (outer.lower()[d], outer.upper()[d]);
        let a = l + rng.random_range(0.0..0.4) * (u - l);
        let b = u - rng.random_range(0.0..0.4) * (u - l);
        lo.push(a);
        hi.push(b);
    }
    BoxEmbed::from_corners(lo, hi).unwrap()
}

/// `|a − f| / max(|a|, |f|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for near-zero coordinates: a millionth of the largest
/// gradient component, and never below 1e-6.
fn grad_floor<'a>(components: impl Iterator<Item = &'a f64>) -> f64 {
    (components.fold(0.0f64, |m, g| m.max(g.abs())) * 1e-6).max(1e-6)
}

/// Worst per-coordinate relative error between the analytic triplet-loss
/// gradient and central differences, over one random configuration.
pub fn triplet_gradcheck(rng: &mut impl Rng, config: &boxlab::boxfit::FitConfig) -> f64 {
    use boxlab::boxfit::{triplet_loss, triplet_loss_grad, BoxGrad, ParamBox};
    use boxlab::synthgen::RelationKind;

    let dim = rng.random_range(1..=4);
    let n_neg = rng.random_range(1..=3);
    let kind = if rng.random_bool(0.5) { RelationKind::Entailment } else { RelationKind::Similarity };
    let mut boxes: Vec<ParamBox> = (0..2 + n_neg)
        .map(|_| ParamBox {
            center: (0..dim).map(|_| rng.random_range(-0.6..0.6)).collect(),
            raw_width: (0..dim).map(|_| rng.random_range(-0.5..1.5)).collect(),
        })
        .collect();
    let loss_of = |b: &[ParamBox]| {
        let negs: Vec<&ParamBox> = b[2..].iter().collect();
        triplet_loss(&b[0], &b[1], &negs, kind, config).unwrap()
    };
    let negs: Vec<&ParamBox> = boxes[2..].iter().collect();
    let g = triplet_loss_grad(&boxes[0], &boxes[1], &negs, kind, config).unwrap();
    let mut analytic: Vec<BoxGrad> = vec![g.anchor, g.positive];
    analytic.extend(g.negatives);

    let floor = grad_floor(analytic.iter().flat_map(|g| g.center.iter().chain(&g.raw_width)));
    let mut worst: f64 = 0.0;
    for b in 0..boxes.len() {
        for d in 0..dim {
            for field in 0..2 {
                let orig = if field == 0 { boxes[b].center[d] } else { boxes[b].raw_width[d] };
                let set = |bx: &mut Vec<ParamBox>, v: f64| {
                    if field == 0 {
                        bx[b].center[d] = v
                    } else {
                        bx[b].raw_width[d] = v
                    }
                };
                set(&mut boxes, orig + FD_STEP);
                let up = loss_of(&boxes);
                set(&mut boxes, orig - FD_STEP);
                let down = loss_of(&boxes);
                set(&mut boxes, orig);
                let numeric = (up - down) / (2.0 * FD_STEP);
                let a = if field == 0 { analytic[b].center[d] } else { analytic[b].raw_width[d] };
                worst = worst.max(rel_err(a, numeric, floor));
            }
        }
    }
    worst
}

/// Same check for the Box-SNE objective on `n` boxes reduced to `p = 2`.
pub fn sne_gradcheck(rng: &mut impl Rng, n: usize) -> f64 {
    use boxlab::boxcore::GumbelParams;
    use boxlab::boxsne::{LowDimBox, SneObjective, SneWeights};

    let high_dim = rng.random_range(2..=5);
    let high = BoxTable::from_entries(
        high_dim,
        (0..n).map(|i| (format!("h{i}"), random_box(rng, high_dim, 0.8, 0.3, 1.0))),
    )
    .unwrap();
    let mut low: Vec<LowDimBox> = (0..n)
        .map(|_| LowDimBox {
            center: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            delta: rng.random_range(0.3..1.0),
        })
        .collect();
    let weights = SneWeights::new(rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)).unwrap();
    let obj = SneObjective::new(&high, weights, GumbelParams::default()).unwrap();
    let (_, grads) = obj.loss_grad(&low).unwrap();

    let floor = grad_floor(grads.iter().flat_map(|g| g.center.iter().chain(std::iter::once(&g.delta))));
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for k in 0..3 {
            let get = |l: &Vec<LowDimBox>| if k < 2 { l[i].center[k] } else { l[i].delta };
            let set = |l: &mut Vec<LowDimBox>, v: f64| {
                if k < 2 {
                    l[i].center[k] = v
                } else {
                    l[i].delta = v
                }
            };
            let orig = get(&low);
            set(&mut low, orig + FD_STEP);
            let up = obj.loss(&low).unwrap();
            set(&mut low, orig - FD_STEP);
            let down = obj.loss(&low).unwrap();
            set(&mut low, orig);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = if k < 2 { grads[i].center[k] } else { grads[i].delta };
            worst = worst.max(rel_err(a, numeric, floor));
        }
    }
    worst
}
