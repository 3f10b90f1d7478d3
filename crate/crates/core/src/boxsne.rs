//! Box-SNE: stochastic neighbour embedding for boxes.
//!
//! A high-dimensional table is mapped to low-dimensional boxes with a single
//! scalar half-width each. Two relation functions are matched at once: the
//! symmetric intersection volume and the asymmetric entailment score
//! `BoxEnt(i, j) = p(a_i | a_j)`. For each, rows are normalised into
//! conditional distributions over `j ≠ i`, and the objective is
//! `α · KL(P_int ‖ Q_int) + β · KL(P_ent ‖ Q_ent)`.
//!
//! Relations are held as logarithms of Gumbel-smoothed volumes; normalising
//! in log-space keeps every conditional strictly positive even for boxes far
//! apart at a tight intersection temperature.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::boxcore::{
    log_gumbel_interval_overlap, log_gumbel_interval_overlap_grad, log_gumbel_intersection_volume,
    log_gumbel_volume, BoxEmbed, BoxTable, GumbelParams,
};
use crate::error::{Error, Result};
use crate::stats::spearman;

/// Weights of the intersection and entailment terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SneWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for SneWeights {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 0.2,
        }
    }
}

impl SneWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha + beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weights must be non-negative with positive sum, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

/// Low-dimensional box with one half-width shared by all axes.
#[derive(Debug, Clone, PartialEq)]
pub struct LowDimBox {
    pub center: Vec<f64>,
    pub delta: f64,
}

impl LowDimBox {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn to_box(&self) -> Result<BoxEmbed> {
        BoxEmbed::new(self.center.clone(), vec![self.delta; self.center.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationKindSne {
    VolInt,
    BoxEnt,
}

/// Pairwise relation values, stored as logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMatrix {
    pub n: usize,
    pub kind: RelationKindSne,
    log_values: Vec<f64>,
}

impl RelationMatrix {
    /// Wraps raw non-negative values (zeros become `-inf`).
    pub fn from_values(n: usize, kind: RelationKindSne, values: &[f64]) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                left: n * n,
                right: values.len(),
            });
        }
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::InvalidParameter("relation values must be non-negative".into()));
        }
        Ok(Self {
            n,
            kind,
            log_values: values.iter().map(|v| v.ln()).collect(),
        })
    }

    pub fn log_value(&self, i: usize, j: usize) -> f64 {
        self.log_values[i * self.n + j]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.log_value(i, j).exp()
    }
}

fn relation_from_boxes(boxes: &[BoxEmbed], kind: RelationKindSne, gumbel: &GumbelParams) -> Result<RelationMatrix> {
    let n = boxes.len();
    if n < 2 {
        return Err(Error::InvalidParameter("relation matrices need at least 2 boxes".into()));
    }
    let dim = boxes[0].dim();
    if let Some(b) = boxes.iter().find(|b| b.dim() != dim) {
        return Err(Error::DimensionMismatch {
            left: dim,
            right: b.dim(),
        });
    }
    let log_vol: Vec<f64> = boxes.iter().map(|b| log_gumbel_volume(b, gumbel)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let int = log_gumbel_intersection_volume(&boxes[i], &boxes[j], gumbel)
                        .expect("dimensions checked");
                    match kind {
                        RelationKindSne::VolInt => int,
                        // p(a_i | a_j) = VolInt(a_j, a_i) / Vol(a_j)
                        RelationKindSne::BoxEnt => int - log_vol[j],
                    }
                })
                .collect()
        })
        .collect();
    Ok(RelationMatrix {
        n,
        kind,
        log_values: rows.concat(),
    })
}

/// Smoothed relation matrix over a table.
pub fn relation_matrix(table: &BoxTable, kind: RelationKindSne, gumbel: &GumbelParams) -> Result<RelationMatrix> {
    relation_from_boxes(table.boxes(), kind, gumbel)
}

/// Row-normalised conditionals `p_{j|i}`; the diagonal is zero. Logarithms
/// are kept alongside so ratios survive underflow of tiny entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CondProbs {
    pub n: usize,
    values: Vec<f64>,
    log_values: Vec<f64>,
}

impl CondProbs {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                left: n * n,
                right: values.len(),
            });
        }
        let log_values = values.iter().map(|v| v.ln()).collect();
        Ok(Self { n, values, log_values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn log_get(&self, i: usize, j: usize) -> f64 {
        self.log_values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

pub fn conditional_probs(m: &RelationMatrix) -> Result<CondProbs> {
    let n = m.n;
    let mut values = vec![0.0; n * n];
    let mut log_values = vec![f64::NEG_INFINITY; n * n];
    for i in 0..n {
        let lse = row_lse(m, i);
        if lse == f64::NEG_INFINITY {
            return Err(Error::Undefined(format!(
                "row {i} has no positive off-diagonal relation"
            )));
        }
        for j in (0..n).filter(|&j| j != i) {
            let l = m.log_value(i, j) - lse;
            log_values[i * n + j] = l;
            values[i * n + j] = l.exp();
        }
    }
    Ok(CondProbs { n, values, log_values })
}

fn row_lse(m: &RelationMatrix, i: usize) -> f64 {
    let mx = (0..m.n)
        .filter(|&j| j != i)
        .map(|j| m.log_value(i, j))
        .fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    let s: f64 = (0..m.n)
        .filter(|&j| j != i)
        .map(|j| (m.log_value(i, j) - mx).exp())
        .sum();
    mx + s.ln()
}

/// `Σ_i Σ_{j≠i} p ln(p / q)`.
pub fn kl_cost(p: &CondProbs, q: &CondProbs) -> Result<f64> {
    if p.n != q.n {
        return Err(Error::DimensionMismatch { left: p.n, right: q.n });
    }
    let mut c = 0.0;
    for i in 0..p.n {
        for j in (0..p.n).filter(|&j| j != i) {
            let pij = p.get(i, j);
            if pij > 0.0 {
                let lq = q.log_get(i, j);
                if lq == f64::NEG_INFINITY {
                    return Err(Error::Undefined(format!(
                        "q[{i}][{j}] is zero where p is positive"
                    )));
                }
                c += pij * (p.log_get(i, j) - lq);
            }
        }
    }
    Ok(c)
}

/// High-dimensional targets, computed once and reused for every evaluation
/// of the objective.
#[derive(Debug, Clone)]
pub struct SneObjective {
    pub weights: SneWeights,
    pub gumbel: GumbelParams,
    p_int: CondProbs,
    p_ent: CondProbs,
}

/// Gradient of the objective with respect to each low-dimensional box.
#[derive(Debug, Clone, PartialEq)]
pub struct LowDimGrad {
    pub center: Vec<f64>,
    pub delta: f64,
}

impl SneObjective {
    pub fn new(high: &BoxTable, weights: SneWeights, gumbel: GumbelParams) -> Result<Self> {
        let p_int = conditional_probs(&relation_matrix(high, RelationKindSne::VolInt, &gumbel)?)?;
        let p_ent = conditional_probs(&relation_matrix(high, RelationKindSne::BoxEnt, &gumbel)?)?;
        Ok(Self {
            weights,
            gumbel,
            p_int,
            p_ent,
        })
    }

    pub fn n(&self) -> usize {
        self.p_int.n
    }

    fn low_boxes(&self, low: &[LowDimBox]) -> Result<Vec<BoxEmbed>> {
        if low.len() != self.n() {
            return Err(Error::DimensionMismatch {
                left: self.n(),
                right: low.len(),
            });
        }
        low.iter().map(LowDimBox::to_box).collect()
    }

    pub fn loss(&self, low: &[LowDimBox]) -> Result<f64> {
        let boxes = self.low_boxes(low)?;
        let mut total = 0.0;
        if self.weights.alpha > 0.0 {
            let q = conditional_probs(&relation_from_boxes(&boxes, RelationKindSne::VolInt, &self.gumbel)?)?;
            total += self.weights.alpha * kl_cost(&self.p_int, &q)?;
        }
        if self.weights.beta > 0.0 {
            let q = conditional_probs(&relation_from_boxes(&boxes, RelationKindSne::BoxEnt, &self.gumbel)?)?;
            total += self.weights.beta * kl_cost(&self.p_ent, &q)?;
        }
        Ok(total)
    }

    /// Loss and analytic gradient with respect to centers and scalar deltas.
    pub fn loss_grad(&self, low: &[LowDimBox]) -> Result<(f64, Vec<LowDimGrad>)> {
        let boxes = self.low_boxes(low)?;
        let n = self.n();
        let p = low[0].dim();
        let g = &self.gumbel;
        let w = self.weights;
        let q_int_m = relation_from_boxes(&boxes, RelationKindSne::VolInt, g)?;
        let q_ent_m = relation_from_boxes(&boxes, RelationKindSne::BoxEnt, g)?;
        let q_int = conditional_probs(&q_int_m)?;
        let q_ent = conditional_probs(&q_ent_m)?;
        let loss = w.alpha * kl_cost(&self.p_int, &q_int)? + w.beta * kl_cost(&self.p_ent, &q_ent)?;

        // ∂L/∂ log s_ij = weight · (q_ij − p_ij) for j ≠ i.
        // log BoxEnt_ij = log VolInt_ij − log Vol_j.
        let mut g_int = vec![0.0; n * n];
        let mut g_logvol = vec![0.0; n];
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let gi = w.alpha * (q_int.get(i, j) - self.p_int.get(i, j));
                let ge = w.beta * (q_ent.get(i, j) - self.p_ent.get(i, j));
                g_int[i * n + j] += gi + ge;
                g_logvol[j] -= ge;
            }
        }

        let mut grads: Vec<LowDimGrad> = (0..n)
            .map(|_| LowDimGrad {
                center: vec![0.0; p],
                delta: 0.0,
            })
            .collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let coef = g_int[i * n + j] + g_int[j * n + i];
                if coef == 0.0 {
                    continue;
                }
                let (bi, bj) = (&boxes[i], &boxes[j]);
                for d in 0..p {
                    let (_, dl, du) = log_gumbel_interval_overlap_grad(
                        &[bi.lower()[d], bj.lower()[d]],
                        &[bi.upper()[d], bj.upper()[d]],
                        g.beta_int,
                    );
                    grads[i].center[d] += coef * (dl[0] + du[0]);
                    grads[i].delta += coef * (du[0] - dl[0]);
                    grads[j].center[d] += coef * (dl[1] + du[1]);
                    grads[j].delta += coef * (du[1] - dl[1]);
                }
            }
        }
        for j in 0..n {
            if g_logvol[j] == 0.0 {
                continue;
            }
            let b = &boxes[j];
            for d in 0..p {
                let (_, dl, du) = log_gumbel_interval_overlap_grad(&[b.lower()[d]], &[b.upper()[d]], g.beta_vol);
                grads[j].center[d] += g_logvol[j] * (dl[0] + du[0]);
                grads[j].delta += g_logvol[j] * (du[0] - dl[0]);
            }
        }
        Ok((loss, grads))
    }
}

/// `α · C_VolInt + β · C_BoxEnt` for a low-dimensional layout.
pub fn sne_loss(high: &BoxTable, low: &[LowDimBox], weights: SneWeights, gumbel: GumbelParams) -> Result<f64> {
    SneObjective::new(high, weights, gumbel)?.loss(low)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReduceConfig {
    pub dim: usize,
    pub weights: SneWeights,
    pub gumbel: GumbelParams,
    pub iters: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            weights: SneWeights::default(),
            gumbel: GumbelParams::default(),
            iters: 2000,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReduceResult {
    pub boxes: Vec<LowDimBox>,
    /// Loss after each iteration, preceded by the initial loss.
    pub trace: Vec<f64>,
}

/// Centers projected on the leading principal directions; each box's scalar
/// half-width is the geometric mean of its high-dimensional half-widths.
pub fn initial_layout(high: &BoxTable, dim: usize, seed: u64) -> Result<Vec<LowDimBox>> {
    let n = high.len();
    let d = high.dim();
    if n == 0 {
        return Err(Error::EmptyInput("empty table".into()));
    }
    let centers = DMatrix::from_fn(n, d, |i, k| high.boxes()[i].center()[k]);
    let mean = centers.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, k| centers[(i, k)] - mean[k]);
    let cov = centered.transpose() * &centered / (n as f64);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];
    let usable = order
        .iter()
        .take(dim)
        .filter(|&&k| eig.eigenvalues[k] > 1e-12 * top.max(1e-300))
        .count();

    let mut out: Vec<LowDimBox> = high
        .boxes()
        .iter()
        .map(|b| LowDimBox {
            center: vec![0.0; dim],
            delta: (b.delta().iter().map(|w| w.ln()).sum::<f64>() / d as f64).exp(),
        })
        .collect();

    if usable == dim && top > 0.0 {
        for (i, lb) in out.iter_mut().enumerate() {
            for (slot, &k) in order.iter().take(dim).enumerate() {
                let v = eig.eigenvectors.column(k);
                // fix the sign so the largest-magnitude loading is positive
                let pivot = v.iter().cloned().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
                let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
                lb.center[slot] = sign * centered.row(i).dot(&v.transpose());
            }
        }
    } else {
        let scale = out.iter().map(|b| b.delta).sum::<f64>() / n as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).expect("valid normal");
        for lb in out.iter_mut() {
            lb.center.iter_mut().for_each(|c| *c = normal.sample(&mut rng));
        }
    }
    Ok(out)
}

/// Rescales the initial centers about their mean by the power of two in
/// `[2^-6, 2^6]` with the lowest objective.
fn scaled_start(objective: &SneObjective, init: Vec<LowDimBox>) -> Result<Vec<LowDimBox>> {
    let n = init.len() as f64;
    let p = init[0].dim();
    let mean: Vec<f64> = (0..p).map(|d| init.iter().map(|b| b.center[d]).sum::<f64>() / n).collect();
    let mut best: Option<(f64, Vec<LowDimBox>)> = None;
    for e in -6..=6 {
        let f = 2f64.powi(e);
        let cand: Vec<LowDimBox> = init
            .iter()
            .map(|b| LowDimBox {
                center: b.center.iter().zip(&mean).map(|(c, m)| m + f * (c - m)).collect(),
                delta: b.delta,
            })
            .collect();
        let loss = match objective.loss(&cand) {
            Ok(l) if l.is_finite() => l,
            _ => continue,
        };
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, cand));
        }
    }
    Ok(best.map(|(_, b)| b).unwrap_or(init))
}

/// Gradient descent with momentum over centers and log half-widths. A step
/// that raises the loss is rejected, the learning rate halved and the
/// momentum cleared; accepted steps let the rate recover towards its
/// starting value.
pub fn reduce(high: &BoxTable, config: &ReduceConfig) -> Result<ReduceResult> {
    if config.dim < 1 {
        return Err(Error::InvalidParameter("target dimension must be at least 1".into()));
    }
    if high.len() < 3 {
        return Err(Error::InvalidParameter("Box-SNE needs at least 3 boxes".into()));
    }
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(Error::InvalidParameter("learning_rate must be positive".into()));
    }
    let objective = SneObjective::new(high, config.weights, config.gumbel)?;
    let mut boxes = scaled_start(&objective, initial_layout(high, config.dim, config.seed)?)?;
    let n = boxes.len();
    let p = config.dim;
    let mut loss = objective.loss(&boxes)?;
    let mut trace = vec![loss];
    let mut lr = config.learning_rate;
    let mut vel_c = vec![vec![0.0; p]; n];
    let mut vel_r = vec![0.0; n];

    for _ in 0..config.iters {
        let (_, grads) = objective.loss_grad(&boxes)?;
        let mut cand = boxes.clone();
        let mut next_vc = vel_c.clone();
        let mut next_vr = vel_r.clone();
        for i in 0..n {
            for d in 0..p {
                next_vc[i][d] = config.momentum * vel_c[i][d] - lr * grads[i].center[d];
                cand[i].center[d] += next_vc[i][d];
            }
            // δ = exp(ρ), ∂L/∂ρ = δ ∂L/∂δ
            let g_rho = grads[i].delta * boxes[i].delta;
            next_vr[i] = config.momentum * vel_r[i] - lr * g_rho;
            cand[i].delta = (boxes[i].delta.ln() + next_vr[i]).exp().max(1e-8);
        }
        let cand_loss = match objective.loss(&cand) {
            Ok(l) if l.is_finite() => l,
            _ => f64::INFINITY,
        };
        if cand_loss <= loss {
            boxes = cand;
            loss = cand_loss;
            vel_c = next_vc;
            vel_r = next_vr;
            lr = (lr * 1.05).min(config.learning_rate);
        } else {
            lr *= 0.5;
            vel_c.iter_mut().for_each(|v| v.iter_mut().for_each(|x| *x = 0.0));
            vel_r.iter_mut().for_each(|x| *x = 0.0);
        }
        trace.push(loss);
    }
    Ok(ReduceResult { boxes, trace })
}

/// Rank agreement between the high- and low-dimensional layouts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preservation {
    pub volume: Option<f64>,
    pub intersection: Option<f64>,
    pub entailment: Option<f64>,
}

/// Spearman correlations of per-box volumes, pairwise intersections (i < j)
/// and pairwise entailments (i ≠ j). Volumes are hard; pairwise quantities are
/// the smoothed log relations used by the objective.
pub fn evaluate_preservation(high: &BoxTable, low: &[LowDimBox], gumbel: &GumbelParams) -> Result<Preservation> {
    let n = high.len();
    if low.len() != n {
        return Err(Error::DimensionMismatch { left: n, right: low.len() });
    }
    let low_boxes: Vec<BoxEmbed> = low.iter().map(LowDimBox::to_box).collect::<Result<_>>()?;
    // position-free, so equal widths tie exactly
    let width_log_volume = |b: &BoxEmbed| b.delta().iter().map(|w| (2.0 * w).ln()).sum::<f64>();
    let vh: Vec<f64> = high.boxes().iter().map(width_log_volume).collect();
    let vl: Vec<f64> = low_boxes.iter().map(width_log_volume).collect();
    let ih = relation_from_boxes(high.boxes(), RelationKindSne::VolInt, gumbel)?;
    let il = relation_from_boxes(&low_boxes, RelationKindSne::VolInt, gumbel)?;
    let eh = relation_from_boxes(high.boxes(), RelationKindSne::BoxEnt, gumbel)?;
    let el = relation_from_boxes(&low_boxes, RelationKindSne::BoxEnt, gumbel)?;
    let upper = |m: &RelationMatrix| -> Vec<f64> {
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m.log_value(i, j))
            .collect()
    };
    let off = |m: &RelationMatrix| -> Vec<f64> {
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.log_value(i, j))
            .collect()
    };
    Ok(Preservation {
        volume: spearman(&vh, &vl),
        intersection: spearman(&upper(&ih), &upper(&il)),
        entailment: spearman(&off(&eh), &off(&el)),
    })
}

/// Log of the smoothed volume of a low-dimensional box; exposed for plotting.
pub fn low_log_gumbel_volume(b: &LowDimBox, gumbel: &GumbelParams) -> f64 {
    b.center
        .iter()
        .map(|c| log_gumbel_interval_overlap(&[c - b.delta], &[c + b.delta], gumbel.beta_vol))
        .sum()
}
