//! Box algebra: hard and Gumbel-smoothed volumes, intersections, entailment
//! probabilities, joins, and the CSDelta vector score.
//!
//! A box is stored by its center and half-width together with the derived
//! corners. Hard quantities read the corners; containment yields
//! `p(b|a) == 1.0` exactly.
//!
//! Above [`LOG_SPACE_DIM`] dimensions, volumes are accumulated as sums of
//! logarithms and ratios are formed as differences of log-volumes.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Smallest accepted half-width.
pub const MIN_WIDTH: f64 = 1e-9;

/// Dimensions above which products are carried out in log-space.
pub const LOG_SPACE_DIM: usize = 16;

/// Axis-aligned box `[center - delta, center + delta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxEmbed {
    center: Vec<f64>,
    delta: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxEmbed {
    pub fn new(center: Vec<f64>, delta: Vec<f64>) -> Result<Self> {
        if center.len() != delta.len() {
            return Err(Error::DimensionMismatch {
                left: center.len(),
                right: delta.len(),
            });
        }
        if center.is_empty() {
            return Err(Error::InvalidBox("zero-dimensional box".into()));
        }
        for (d, (&c, &w)) in center.iter().zip(&delta).enumerate() {
            if !c.is_finite() || !w.is_finite() {
                return Err(Error::InvalidBox(format!("non-finite value in dimension {d}")));
            }
            if w < MIN_WIDTH {
                return Err(Error::InvalidBox(format!(
                    "half-width {w} in dimension {d} is below {MIN_WIDTH}"
                )));
            }
        }
        let lower: Vec<f64> = center.iter().zip(&delta).map(|(c, w)| c - w).collect();
        let upper: Vec<f64> = center.iter().zip(&delta).map(|(c, w)| c + w).collect();
        for (d, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && 0.5 * (hi - lo) >= MIN_WIDTH) {
                return Err(Error::InvalidBox(format!(
                    "corners in dimension {d} are not representable at center {}",
                    center[d]
                )));
            }
        }
        Ok(Self {
            center,
            delta,
            lower,
            upper,
        })
    }

    /// Builds a box from its corners, keeping the corners exactly.
    pub fn from_corners(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                left: lower.len(),
                right: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidBox("zero-dimensional box".into()));
        }
        let mut center = Vec::with_capacity(lower.len());
        let mut delta = Vec::with_capacity(lower.len());
        for (d, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidBox(format!("non-finite corner in dimension {d}")));
            }
            let w = 0.5 * (hi - lo);
            if w < MIN_WIDTH {
                return Err(Error::InvalidBox(format!(
                    "half-width {w} in dimension {d} is below {MIN_WIDTH}"
                )));
            }
            center.push(0.5 * (lo + hi));
            delta.push(w);
        }
        Ok(Self {
            center,
            delta,
            lower,
            upper,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// `Σ_d ln(upper_d - lower_d)`.
    pub fn log_volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo).ln())
            .sum()
    }

    /// Corner-wise containment of `other` in `self`.
    pub fn contains(&self, other: &BoxEmbed) -> bool {
        self.dim() == other.dim()
            && self
                .lower
                .iter()
                .zip(&other.lower)
                .all(|(outer, inner)| outer <= inner)
            && self
                .upper
                .iter()
                .zip(&other.upper)
                .all(|(outer, inner)| outer >= inner)
    }

    /// Shifts the center by `offset`.
    pub fn translated(&self, offset: &[f64]) -> Result<Self> {
        check_dims(self.dim(), offset.len())?;
        let center = self.center.iter().zip(offset).map(|(c, o)| c + o).collect();
        Self::new(center, self.delta.clone())
    }
}

fn check_dims(left: usize, right: usize) -> Result<()> {
    if left != right {
        Err(Error::DimensionMismatch { left, right })
    } else {
        Ok(())
    }
}

/// Returns `(lower, upper)` corners.
/// Ids are non-empty, free of whitespace, do not start with `#` and are not
/// the placeholder `-`.
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty() && id != "-" && !id.starts_with('#') && !id.chars().any(char::is_whitespace)
}

pub fn corners(b: &BoxEmbed) -> (Vec<f64>, Vec<f64>) {
    (b.lower.clone(), b.upper.clone())
}

pub fn hard_volume(b: &BoxEmbed) -> f64 {
    if b.dim() > LOG_SPACE_DIM {
        b.log_volume().exp()
    } else {
        b.lower.iter().zip(&b.upper).map(|(lo, hi)| hi - lo).product()
    }
}

/// Per-dimension overlap lengths, clamped at zero.
fn overlaps<'a>(a: &'a BoxEmbed, b: &'a BoxEmbed) -> impl Iterator<Item = f64> + 'a {
    (0..a.dim()).map(move |d| {
        let hi = a.upper[d].min(b.upper[d]);
        let lo = a.lower[d].max(b.lower[d]);
        (hi - lo).max(0.0)
    })
}

/// Log of the hard intersection volume; `-inf` for disjoint boxes.
pub fn log_intersection_volume(a: &BoxEmbed, b: &BoxEmbed) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(overlaps(a, b).map(f64::ln).sum())
}

pub fn hard_intersection_volume(a: &BoxEmbed, b: &BoxEmbed) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    if a.dim() > LOG_SPACE_DIM {
        Ok(log_intersection_volume(a, b)?.exp())
    } else {
        Ok(overlaps(a, b).product())
    }
}

/// `p(b | a) = VolInt(a, b) / Vol(a)`.
pub fn entailment_prob(a: &BoxEmbed, b: &BoxEmbed) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    if a.dim() > LOG_SPACE_DIM {
        let log_int = log_intersection_volume(a, b)?;
        Ok((log_int - a.log_volume()).exp().min(1.0))
    } else {
        Ok((hard_intersection_volume(a, b)? / hard_volume(a)).min(1.0))
    }
}

/// Smallest box containing both inputs.
pub fn join(a: &BoxEmbed, b: &BoxEmbed) -> Result<BoxEmbed> {
    check_dims(a.dim(), b.dim())?;
    let lower = a.lower.iter().zip(&b.lower).map(|(x, y)| x.min(*y)).collect();
    let upper = a.upper.iter().zip(&b.upper).map(|(x, y)| x.max(*y)).collect();
    BoxEmbed::from_corners(lower, upper)
}

// ---------------------------------------------------------------------------
// Gumbel smoothing
// ---------------------------------------------------------------------------

/// Gumbel temperatures for single-box volumes and cross-box intersections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelParams {
    pub beta_vol: f64,
    pub beta_int: f64,
}

impl Default for GumbelParams {
    fn default() -> Self {
        Self {
            beta_vol: 1.0,
            beta_int: 0.001,
        }
    }
}

impl GumbelParams {
    pub fn new(beta_vol: f64, beta_int: f64) -> Result<Self> {
        if !(beta_vol > 0.0 && beta_vol.is_finite() && beta_int > 0.0 && beta_int.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gumbel temperatures must be positive, got beta_vol={beta_vol}, beta_int={beta_int}"
            )));
        }
        Ok(Self { beta_vol, beta_int })
    }

    /// Same temperature for volumes and intersections.
    pub fn uniform(beta: f64) -> Result<Self> {
        Self::new(beta, beta)
    }
}

/// `β · ln Σ exp(x_i / β)`, shifted by the extremum. A negative `β` gives a
/// smooth minimum.
pub fn lse(values: &[f64], beta: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let m = values
        .iter()
        .map(|x| x / beta)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = values.iter().map(|x| (x / beta - m).exp()).sum();
    beta * (m + s.ln())
}

/// Weights `∂ lse / ∂ x_i`, i.e. the softmax of `x / β`.
fn lse_weights(values: &[f64], beta: f64) -> Vec<f64> {
    let m = values
        .iter()
        .map(|x| x / beta)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = values.iter().map(|x| (x / beta - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

/// `ln(1 + e^z)`.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `ln(softplus(z))`, finite for every finite `z`.
fn log_softplus(z: f64) -> f64 {
    if z < -30.0 {
        z
    } else {
        softplus(z).ln()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `d ln(softplus(z)) / dz`.
fn dlog_softplus(z: f64) -> f64 {
    if z < -30.0 {
        1.0
    } else {
        sigmoid(z) / softplus(z)
    }
}

fn smooth_gap(lowers: &[f64], uppers: &[f64], beta: f64) -> f64 {
    lse(uppers, -beta) - lse(lowers, beta)
}

/// Smoothed overlap `LSE_β(LSE_{-β}(uppers) - LSE_β(lowers), 0)` of a set of
/// intervals.
pub fn gumbel_interval_overlap(lowers: &[f64], uppers: &[f64], beta: f64) -> f64 {
    let x = smooth_gap(lowers, uppers, beta);
    beta * softplus(x / beta)
}

/// Logarithm of [`gumbel_interval_overlap`], accurate where the overlap
/// itself would underflow.
pub fn log_gumbel_interval_overlap(lowers: &[f64], uppers: &[f64], beta: f64) -> f64 {
    let x = smooth_gap(lowers, uppers, beta);
    beta.ln() + log_softplus(x / beta)
}

/// Gradient of [`log_gumbel_interval_overlap`] with respect to every lower and
/// upper endpoint. Returns `(value, d_lowers, d_uppers)`.
pub fn log_gumbel_interval_overlap_grad(
    lowers: &[f64],
    uppers: &[f64],
    beta: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let x = smooth_gap(lowers, uppers, beta);
    let z = x / beta;
    let value = beta.ln() + log_softplus(z);
    let dx = dlog_softplus(z) / beta;
    let d_upper = lse_weights(uppers, -beta)
        .into_iter()
        .map(|w| w * dx)
        .collect();
    let d_lower = lse_weights(lowers, beta)
        .into_iter()
        .map(|w| -w * dx)
        .collect();
    (value, d_lower, d_upper)
}

/// Log smoothed volume of a single box at `beta_vol`.
pub fn log_gumbel_volume(b: &BoxEmbed, params: &GumbelParams) -> f64 {
    (0..b.dim())
        .map(|d| log_gumbel_interval_overlap(&[b.lower[d]], &[b.upper[d]], params.beta_vol))
        .sum()
}

pub fn gumbel_volume(b: &BoxEmbed, params: &GumbelParams) -> f64 {
    if b.dim() > LOG_SPACE_DIM {
        log_gumbel_volume(b, params).exp()
    } else {
        (0..b.dim())
            .map(|d| gumbel_interval_overlap(&[b.lower[d]], &[b.upper[d]], params.beta_vol))
            .product()
    }
}

/// Log smoothed intersection volume at `beta_int`.
pub fn log_gumbel_intersection_volume(
    a: &BoxEmbed,
    b: &BoxEmbed,
    params: &GumbelParams,
) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok((0..a.dim())
        .map(|d| {
            log_gumbel_interval_overlap(
                &[a.lower[d], b.lower[d]],
                &[a.upper[d], b.upper[d]],
                params.beta_int,
            )
        })
        .sum())
}

pub fn gumbel_intersection_volume(
    a: &BoxEmbed,
    b: &BoxEmbed,
    params: &GumbelParams,
) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    if a.dim() > LOG_SPACE_DIM {
        Ok(log_gumbel_intersection_volume(a, b, params)?.exp())
    } else {
        Ok((0..a.dim())
            .map(|d| {
                gumbel_interval_overlap(
                    &[a.lower[d], b.lower[d]],
                    &[a.upper[d], b.upper[d]],
                    params.beta_int,
                )
            })
            .product())
    }
}

/// `ln p(b | a)` with both volumes smoothed.
pub fn log_gumbel_entailment_prob(a: &BoxEmbed, b: &BoxEmbed, params: &GumbelParams) -> Result<f64> {
    Ok(log_gumbel_intersection_volume(a, b, params)? - log_gumbel_volume(a, params))
}

pub fn gumbel_entailment_prob(a: &BoxEmbed, b: &BoxEmbed, params: &GumbelParams) -> Result<f64> {
    Ok(log_gumbel_entailment_prob(a, b, params)?.exp())
}

// ---------------------------------------------------------------------------
// Vector baseline
// ---------------------------------------------------------------------------

/// Plain vector embedding used by the cosine and CSDelta baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorEmbed(pub Vec<f64>);

impl VectorEmbed {
    pub fn l1(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    pub fn l2(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub fn cosine(a: &VectorEmbed, b: &VectorEmbed) -> Result<f64> {
    check_dims(a.0.len(), b.0.len())?;
    let (na, nb) = (a.l2(), b.l2());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// `cos(w_a, w_b) · (‖w_a‖₁ − ‖w_b‖₁)`.
pub fn csdelta_entailment(w_a: &VectorEmbed, w_b: &VectorEmbed) -> Result<f64> {
    Ok(cosine(w_a, w_b)? * (w_a.l1() - w_b.l1()))
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

/// Ordered, identified boxes of one dimensionality.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoxTable {
    ids: Vec<String>,
    boxes: Vec<BoxEmbed>,
    index: HashMap<String, usize>,
    dim: usize,
}

impl BoxTable {
    /// Empty table of the given dimensionality.
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn from_entries<I>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, BoxEmbed)>,
    {
        let mut t = Self::new(dim);
        for (id, b) in entries {
            t.push(id, b)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, id: impl Into<String>, b: BoxEmbed) -> Result<()> {
        let id = id.into();
        if !is_valid_id(&id) {
            return Err(Error::InvalidParameter(format!("invalid id `{id}`")));
        }
        if self.ids.is_empty() && self.dim == 0 {
            self.dim = b.dim();
        }
        check_dims(self.dim, b.dim())?;
        if self.index.contains_key(&id) {
            return Err(Error::InvalidParameter(format!("duplicate id `{id}`")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.boxes.push(b);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn boxes(&self) -> &[BoxEmbed] {
        &self.boxes
    }

    pub fn get(&self, i: usize) -> (&str, &BoxEmbed) {
        (&self.ids[i], &self.boxes[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn lookup(&self, id: &str) -> Result<&BoxEmbed> {
        self.index_of(id)
            .map(|i| &self.boxes[i])
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BoxEmbed)> {
        self.ids.iter().map(String::as_str).zip(&self.boxes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bx(c: &[f64], d: &[f64]) -> BoxEmbed {
        BoxEmbed::new(c.to_vec(), d.to_vec()).unwrap()
    }

    #[test]
    fn corners_substitute() {
        assert_eq!(corners(&bx(&[0.0, 0.0], &[1.0, 1.0])), (vec![-1.0, -1.0], vec![1.0, 1.0]));
        assert_eq!(corners(&bx(&[2.0], &[0.5])), (vec![1.5], vec![2.5]));
        assert_eq!(
            corners(&bx(&[1.0, -1.0, 0.0], &[0.5, 0.5, 0.5])),
            (vec![0.5, -1.5, -0.5], vec![1.5, -0.5, 0.5])
        );
    }

    #[test]
    fn rejects_thin_or_mismatched() {
        assert!(BoxEmbed::new(vec![0.0], vec![0.0]).is_err());
        assert!(BoxEmbed::new(vec![0.0], vec![1e-10]).is_err());
        assert!(BoxEmbed::new(vec![0.0], vec![-1.0]).is_err());
        assert!(BoxEmbed::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(BoxEmbed::new(vec![f64::NAN], vec![1.0]).is_err());
        assert!(BoxEmbed::new(vec![1e30], vec![1e-6]).is_err());
        assert!(BoxEmbed::new(vec![f64::MAX], vec![f64::MAX]).is_err());
    }

    #[test]
    fn id_rules() {
        for ok in ["a", "n1.2", "x-y", "a#b", "--"] {
            assert!(is_valid_id(ok), "{ok}");
        }
        for bad in ["", "-", "#a", "a b", "a\tb"] {
            assert!(!is_valid_id(bad), "{bad:?}");
        }
        let mut t = BoxTable::new(1);
        assert!(t.push("#c", bx(&[0.0], &[1.0])).is_err());
    }

    #[test]
    fn hard_volumes() {
        assert_eq!(hard_volume(&bx(&[0.0, 0.0], &[1.0, 1.0])), 4.0);
        assert_eq!(hard_volume(&bx(&[0.0; 3], &[0.5; 3])), 1.0);
    }

    #[test]
    fn intersection_examples() {
        let a = bx(&[0.0, 0.0], &[1.0, 1.0]);
        let b = bx(&[0.5, 0.0], &[0.5, 1.0]);
        assert_eq!(hard_intersection_volume(&a, &b).unwrap(), 2.0);
        let c = bx(&[0.0], &[1.0]);
        let d = bx(&[5.0], &[1.0]);
        assert_eq!(hard_intersection_volume(&c, &d).unwrap(), 0.0);
        assert_eq!(hard_intersection_volume(&a, &a).unwrap(), hard_volume(&a));
        assert!(matches!(
            hard_intersection_volume(&a, &c),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn entailment_examples() {
        let inner = bx(&[0.5, 0.0], &[0.5, 1.0]);
        let outer = bx(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(entailment_prob(&inner, &outer).unwrap(), 1.0);
        assert_eq!(entailment_prob(&outer, &inner).unwrap(), 0.5);
        let c = bx(&[0.0], &[1.0]);
        let d = bx(&[5.0], &[1.0]);
        assert_eq!(entailment_prob(&c, &d).unwrap(), 0.0);
        assert_eq!(entailment_prob(&outer, &outer).unwrap(), 1.0);
    }

    #[test]
    fn log_space_entailment_high_dim() {
        let outer = bx(&vec![0.0; 768], &vec![0.1; 768]);
        let inner = bx(&vec![0.01; 768], &vec![0.05; 768]);
        assert_eq!(hard_volume(&outer), 0.0); // underflows
        assert_eq!(entailment_prob(&inner, &outer).unwrap(), 1.0);
        assert_eq!(entailment_prob(&outer, &outer).unwrap(), 1.0);
        let lp = log_intersection_volume(&outer, &inner).unwrap() - outer.log_volume();
        assert_abs_diff_eq!(lp, 768.0 * 0.5f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn interval_overlap_limits() {
        let v = gumbel_interval_overlap(&[0.0], &[2.0], 0.001);
        assert!((v - 2.0).abs() < 0.01);
        let v = gumbel_interval_overlap(&[0.0, 5.0], &[1.0, 6.0], 0.001);
        assert!((0.0..0.01).contains(&v));
    }

    #[test]
    fn interval_overlap_lse_bound() {
        // |smooth − hard| ≤ β(ln n + ln 2)
        let beta = 0.001;
        let cases: &[(&[f64], &[f64])] = &[
            (&[0.0, 0.3, -0.2], &[1.0, 0.9, 1.4]),
            (&[0.0, 0.0], &[1.0, 1.0]),
            (&[-1.0, 0.999], &[1.0, 2.0]),
            (&[0.0, 3.0], &[1.0, 4.0]),
        ];
        for (lo, hi) in cases {
            let hard = (hi.iter().cloned().fold(f64::INFINITY, f64::min)
                - lo.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .max(0.0);
            let smooth = gumbel_interval_overlap(lo, hi, beta);
            let n = lo.len() as f64;
            assert!(
                (smooth - hard).abs() <= beta * (n.ln() + 2f64.ln()) + 1e-12,
                "{lo:?} {hi:?}: {smooth} vs {hard}"
            );
            assert!(smooth >= 0.0);
            assert!(log_gumbel_interval_overlap(lo, hi, beta).is_finite());
        }
    }

    #[test]
    fn gumbel_volume_examples() {
        let cube = bx(&[0.0; 3], &[0.5; 3]);
        let tight = GumbelParams::uniform(0.001).unwrap();
        assert!((gumbel_volume(&cube, &tight) - 1.0).abs() < 0.01);
        let loose = GumbelParams::uniform(1.0).unwrap();
        assert!(gumbel_volume(&cube, &loose) > hard_volume(&cube));
        // softplus(20) = 20 + ln(1 + e^-20)
        let wide = bx(&[0.0], &[10.0]);
        let v = gumbel_volume(&wide, &loose);
        assert!((v - 20.0).abs() < 2.0);
        assert_abs_diff_eq!(v, 20.0 + (-20f64).exp().ln_1p(), epsilon = 1e-12);
    }

    #[test]
    fn gumbel_intersection_examples() {
        let tight = GumbelParams::uniform(0.001).unwrap();
        let cube = bx(&[0.0; 3], &[0.5; 3]);
        let v = gumbel_intersection_volume(&cube, &cube, &tight).unwrap();
        assert!((v - 1.0).abs() < 0.01);
        let far = bx(&[5.0; 3], &[0.5; 3]);
        let v = gumbel_intersection_volume(&cube, &far, &tight).unwrap();
        assert!((0.0..1e-3).contains(&v));
        assert!(log_gumbel_intersection_volume(&cube, &far, &tight).unwrap().is_finite());
        let inner = bx(&[0.5, 0.0], &[0.5, 1.0]);
        let outer = bx(&[0.0, 0.0], &[1.0, 1.0]);
        let r = gumbel_intersection_volume(&inner, &outer, &tight).unwrap()
            / gumbel_volume(&inner, &tight);
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn gumbel_entailment_examples() {
        let tight = GumbelParams::uniform(0.001).unwrap();
        let a = bx(&[0.2, -0.3], &[0.7, 0.4]);
        assert!((gumbel_entailment_prob(&a, &a, &tight).unwrap() - 1.0).abs() < 0.01);
        let far = bx(&[9.0, 9.0], &[0.7, 0.4]);
        let p = gumbel_entailment_prob(&a, &far, &GumbelParams::default()).unwrap();
        assert!((0.0..1e-2).contains(&p));
        assert!(log_gumbel_entailment_prob(&a, &far, &GumbelParams::default()).unwrap().is_finite());
        let inner = bx(&[0.5, 0.0], &[0.5, 1.0]);
        let outer = bx(&[0.0, 0.0], &[1.0, 1.0]);
        let p = gumbel_entailment_prob(&inner, &outer, &tight).unwrap();
        assert!(p >= entailment_prob(&inner, &outer).unwrap() - 0.02);
    }

    #[test]
    fn log_gumbel_stays_finite_when_raw_underflows() {
        let p = GumbelParams::default();
        let a = bx(&[0.0, 0.0], &[0.5, 0.5]);
        let b = bx(&[3.0, 0.0], &[0.5, 0.5]);
        assert_eq!(gumbel_intersection_volume(&a, &b, &p).unwrap(), 0.0);
        let l = log_gumbel_intersection_volume(&a, &b, &p).unwrap();
        assert!(l.is_finite() && l < -1000.0);
    }

    #[test]
    fn overlap_gradient_matches_finite_differences() {
        let lo = [0.1, -0.2];
        let hi = [0.9, 0.7];
        for beta in [1.0, 0.1, 0.01] {
            let (_, dl, du) = log_gumbel_interval_overlap_grad(&lo, &hi, beta);
            let h = 1e-6;
            for i in 0..2 {
                let mut p = lo;
                let mut m = lo;
                p[i] += h;
                m[i] -= h;
                let fd = (log_gumbel_interval_overlap(&p, &hi, beta)
                    - log_gumbel_interval_overlap(&m, &hi, beta))
                    / (2.0 * h);
                assert_abs_diff_eq!(fd, dl[i], epsilon = 1e-5 * (1.0 + fd.abs()));
                let mut p = hi;
                let mut m = hi;
                p[i] += h;
                m[i] -= h;
                let fd = (log_gumbel_interval_overlap(&lo, &p, beta)
                    - log_gumbel_interval_overlap(&lo, &m, beta))
                    / (2.0 * h);
                assert_abs_diff_eq!(fd, du[i], epsilon = 1e-5 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn join_examples() {
        let a = BoxEmbed::from_corners(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let b = BoxEmbed::from_corners(vec![2.0, 0.0], vec![3.0, 1.0]).unwrap();
        let j = join(&a, &b).unwrap();
        assert_eq!(j.lower(), &[0.0, 0.0]);
        assert_eq!(j.upper(), &[3.0, 1.0]);
        let outer = bx(&[0.0, 0.0], &[2.0, 2.0]);
        assert_eq!(join(&a, &outer).unwrap(), outer);
        assert_eq!(join(&a, &a).unwrap(), a);
    }

    #[test]
    fn csdelta_examples() {
        let v = |x: &[f64]| VectorEmbed(x.to_vec());
        assert_eq!(csdelta_entailment(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            csdelta_entailment(&v(&[2.0, 0.0]), &v(&[1.0, 0.0])).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            csdelta_entailment(&v(&[1.0, 1.0]), &v(&[3.0, 0.0])).unwrap(),
            -std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert!(matches!(
            csdelta_entailment(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn table_rejects_duplicates_and_mixed_dims() {
        let mut t = BoxTable::new(2);
        t.push("a", bx(&[0.0, 0.0], &[1.0, 1.0])).unwrap();
        assert!(t.push("a", bx(&[0.0, 0.0], &[1.0, 1.0])).is_err());
        assert!(t.push("b", bx(&[0.0], &[1.0])).is_err());
        assert_eq!(t.index_of("a"), Some(0));
        assert!(matches!(t.lookup("zz"), Err(Error::UnknownId(_))));
    }
}
