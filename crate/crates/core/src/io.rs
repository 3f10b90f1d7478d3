//! Tab-separated text formats.
//!
//! Every file starts with a header line `boxlab-<kind>\tv1[\t...]`. Blank
//! lines and lines starting with `#` are ignored. Reals are written with the
//! shortest representation that parses back to the same `f64`.
//!
//! | kind      | header extras | record                                              |
//! |-----------|---------------|-----------------------------------------------------|
//! | boxes     | `N  D`        | `id  c_1..c_D  δ_1..δ_D`                            |
//! | lowdim    | `N  p`        | `id  c_1..c_p  δ`                                   |
//! | scores    |               | `id  score`                                         |
//! | pairs     |               | `id_a  id_b  a|b` (which one is more specific)      |
//! | triplets  |               | `kind  anchor  positive  negative...`               |
//! | hierarchy |               | `id  parent|-`                                      |
//! | tree      | `M  D`        | `node  parent  depth  size  item|-  lo_1..lo_D  hi_1..hi_D` |
//!
//! In tree files the root's parent is `-1`, leaves come first in item order
//! and every parent is listed after its children.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::analytics::{MoreSpecific, ScoreTable, SpecificityPair};
use crate::boxcore::{is_valid_id, BoxEmbed, BoxTable, MIN_WIDTH};
use crate::boxsne::LowDimBox;
use crate::error::{Error, Result};
use crate::hcluster::ClusterTree;
use crate::synthgen::{GroundTruthTree, RelationKind, RelationTriplet};

pub const FORMAT_VERSION: &str = "v1";

/// Non-comment lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn header<'a>(it: &mut impl Iterator<Item = (usize, &'a str)>, kind: &str, extras: usize) -> Result<(usize, Vec<&'a str>)> {
    let (line, text) = it.next().ok_or(Error::MalformedHeader {
        line: 1,
        msg: format!("missing `boxlab-{kind}` header"),
    })?;
    let fields: Vec<&str> = text.split('\t').collect();
    let want = format!("boxlab-{kind}");
    if fields[0] != want {
        return Err(Error::MalformedHeader {
            line,
            msg: format!("expected `{want}`, found `{}`", fields[0]),
        });
    }
    if fields.get(1) != Some(&FORMAT_VERSION) {
        return Err(Error::MalformedHeader {
            line,
            msg: format!("unsupported version {:?}", fields.get(1)),
        });
    }
    if fields.len() != 2 + extras {
        return Err(Error::MalformedHeader {
            line,
            msg: format!("expected {} header fields, found {}", 2 + extras, fields.len()),
        });
    }
    Ok((line, fields[2..].to_vec()))
}

fn parse_usize(s: &str, line: usize, what: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::MalformedHeader {
        line,
        msg: format!("{what} `{s}` is not a non-negative integer"),
    })
}

fn parse_real(s: &str, line: usize, field: usize) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::MalformedRecord {
            line,
            msg: format!("field {field}: `{s}` is not a finite number"),
        }),
    }
}

fn check_id(id: &str, line: usize) -> Result<()> {
    if !is_valid_id(id) {
        return Err(Error::MalformedRecord {
            line,
            msg: format!("invalid id `{id}`"),
        });
    }
    Ok(())
}

fn check_known(id: &str, line: usize, known: Option<&HashSet<String>>) -> Result<()> {
    match known {
        Some(k) if !k.contains(id) => Err(Error::UnknownIdAt {
            line,
            id: id.to_string(),
        }),
        _ => Ok(()),
    }
}

fn join_reals(out: &mut String, values: &[f64]) {
    for v in values {
        out.push('\t');
        out.push_str(&v.to_string());
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Box tables
// ---------------------------------------------------------------------------

pub fn format_box_table(table: &BoxTable) -> String {
    let mut out = format!("boxlab-boxes\t{FORMAT_VERSION}\t{}\t{}\n", table.len(), table.dim());
    for (id, b) in table.iter() {
        out.push_str(id);
        join_reals(&mut out, b.center());
        join_reals(&mut out, b.delta());
        out.push('\n');
    }
    out
}

pub fn parse_box_table(text: &str) -> Result<BoxTable> {
    let mut it = lines(text);
    let (hline, extras) = header(&mut it, "boxes", 2)?;
    let n = parse_usize(extras[0], hline, "N")?;
    let dim = parse_usize(extras[1], hline, "D")?;
    if n > 0 && dim == 0 {
        return Err(Error::MalformedHeader {
            line: hline,
            msg: "D must be positive".into(),
        });
    }
    let mut table = BoxTable::new(dim);
    let mut last = hline;
    for (line, text) in it {
        last = line;
        let f: Vec<&str> = text.split('\t').collect();
        if f.len() != 1 + 2 * dim {
            return Err(Error::MalformedRecord {
                line,
                msg: format!("expected {} fields, found {}", 1 + 2 * dim, f.len()),
            });
        }
        check_id(f[0], line)?;
        if table.index_of(f[0]).is_some() {
            return Err(Error::DuplicateId {
                line,
                id: f[0].to_string(),
            });
        }
        let center = (1..=dim).map(|k| parse_real(f[k], line, k + 1)).collect::<Result<Vec<_>>>()?;
        let mut delta = Vec::with_capacity(dim);
        for (k, text) in f.iter().enumerate().skip(dim + 1) {
            let v = parse_real(text, line, k + 1)?;
            if v <= 0.0 {
                return Err(Error::NonPositiveDelta { line, field: k + 1 });
            }
            if v < MIN_WIDTH {
                return Err(Error::MalformedRecord {
                    line,
                    msg: format!("field {}: delta {v} is below {MIN_WIDTH}", k + 1),
                });
            }
            delta.push(v);
        }
        let b = BoxEmbed::new(center, delta).map_err(|e| Error::MalformedRecord { line, msg: e.to_string() })?;
        table.push(f[0], b)?;
    }
    if table.len() != n {
        return Err(Error::MalformedRecord {
            line: last,
            msg: format!("header declares {n} records, found {}", table.len()),
        });
    }
    Ok(table)
}

pub fn write_box_table(table: &BoxTable, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &format_box_table(table))
}

pub fn read_box_table(path: impl AsRef<Path>) -> Result<BoxTable> {
    parse_box_table(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Low-dimensional layouts
// ---------------------------------------------------------------------------

pub fn format_lowdim(ids: &[String], boxes: &[LowDimBox]) -> String {
    let p = boxes.first().map_or(0, LowDimBox::dim);
    let mut out = format!("boxlab-lowdim\t{FORMAT_VERSION}\t{}\t{p}\n", boxes.len());
    for (id, b) in ids.iter().zip(boxes) {
        out.push_str(id);
        join_reals(&mut out, &b.center);
        join_reals(&mut out, &[b.delta]);
        out.push('\n');
    }
    out
}

pub fn parse_lowdim(text: &str) -> Result<(Vec<String>, Vec<LowDimBox>)> {
    let mut it = lines(text);
    let (hline, extras) = header(&mut it, "lowdim", 2)?;
    let n = parse_usize(extras[0], hline, "N")?;
    let p = parse_usize(extras[1], hline, "p")?;
    if n > 0 && p == 0 {
        return Err(Error::MalformedHeader {
            line: hline,
            msg: "p must be positive".into(),
        });
    }
    let mut ids: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    let mut boxes = Vec::new();
    let mut last = hline;
    for (line, text) in it {
        last = line;
        let f: Vec<&str> = text.split('\t').collect();
        if f.len() != p + 2 {
            return Err(Error::MalformedRecord {
                line,
                msg: format!("expected {} fields, found {}", p + 2, f.len()),
            });
        }
        check_id(f[0], line)?;
        if !seen.insert(f[0].to_string()) {
            return Err(Error::DuplicateId {
                line,
                id: f[0].to_string(),
            });
        }
        let center = (1..=p).map(|k| parse_real(f[k], line, k + 1)).collect::<Result<Vec<_>>>()?;
        let delta = parse_real(f[p + 1], line, p + 2)?;
        if delta <= 0.0 {
            return Err(Error::NonPositiveDelta { line, field: p + 2 });
        }
        ids.push(f[0].to_string());
        boxes.push(LowDimBox { center, delta });
    }
    if boxes.len() != n {
        return Err(Error::MalformedRecord {
            line: last,
            msg: format!("header declares {n} records, found {}", boxes.len()),
        });
    }
    Ok((ids, boxes))
}

pub fn write_lowdim(ids: &[String], boxes: &[LowDimBox], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &format_lowdim(ids, boxes))
}

pub fn read_lowdim(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<LowDimBox>)> {
    parse_lowdim(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

pub fn format_scores(scores: &ScoreTable) -> String {
    let mut out = format!("boxlab-scores\t{FORMAT_VERSION}\n");
    for (id, s) in scores.iter() {
        out.push_str(&format!("{id}\t{s}\n"));
    }
    out
}

pub fn parse_scores(text: &str, known: Option<&HashSet<String>>) -> Result<ScoreTable> {
    let mut it = lines(text);
    header(&mut it, "scores", 0)?;
    let mut scores = ScoreTable::new();
    for (line, text) in it {
        let f: Vec<&str> = text.split('\t').collect();
        if f.len() != 2 {
            return Err(Error::MalformedRecord {
                line,
                msg: format!("expected 2 fields, found {}", f.len()),
            });
        }
        check_id(f[0], line)?;
        check_known(f[0], line, known)?;
        if scores.get(f[0]).is_some() {
            return Err(Error::DuplicateId {
                line,
                id: f[0].to_string(),
            });
        }
        scores.insert(f[0], parse_real(f[1], line, 2)?)?;
    }
    Ok(scores)
}

pub fn write_scores(scores: &ScoreTable, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &format_scores(scores))
}

pub fn read_scores(path: impl AsRef<Path>, known: Option<&HashSet<String>>) -> Result<ScoreTable> {
    parse_scores(&fs::read_to_string(path)?, known)
}

// ---------------------------------------------------------------------------
// Specificity pairs
// ---------------------------------------------------------------------------

pub fn format_pairs(pairs: &[SpecificityPair]) -> String {
    let mut out = format!("boxlab-pairs\t{FORMAT_VERSION}\n");
    for p in pairs {
        let which = match p.more_specific {
            MoreSpecific::A => "a",
            MoreSpecific::B => "b",
        };
        out.push_str(&format!("{}\t{}\t{which}\n", p.id_a, p.id_b));
    }
    out
}

pub fn parse_pairs(text: &str, known: Option<&HashSet<String>>) -> Result<Vec<SpecificityPair>> {
    let mut it = lines(text);
    header(&mut it, "pairs", 0)?;
    let mut out = Vec::new();
    for (line, text) in it {
        let f: Vec<&str> = text.split('\t').collect();
        if f.len() != 3 {
            return Err(Error::MalformedRecord {
                line,
                msg: format!("expected 3 fields, found {}", f.len()),
            });
        }
        for id in &f[..2] {
            check_id(id, line)?;
            check_known(id, line, known)?;
        }
        if f[0] == f[1] {
            return Err(Error::MalformedRecord {
                line,
                msg: "pair ids must differ".into(),
            });
        }
        let more_specific = match f[2] {
            "a" => MoreSpecific::A,
            "b" => MoreSpecific::B,
            other => {
                return Err(Error::MalformedRecord {
                    line,
                    msg: format!("field 3: expected `a` or `b`, found `{other}`"),
                })
            }
        };
        out.push(SpecificityPair {
            id_a: f[0].to_string(),
            id_b: f[1].to_string(),
            more_specific,
        });
    }
    Ok(out)
}

pub fn write_pairs(pairs: &[SpecificityPair], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &format_pairs(pairs))
}

pub fn read_pairs(path: impl AsRef<Path>, known: Option<&HashSet<String>>) -> Result<Vec<SpecificityPair>> {
    parse_pairs(&fs::read_to_string(path)?, known)
}

// ---------------------------------------------------------------------------
// Triplets
// ---------------------------------------------------------------------------

pub fn format_triplets(triplets: &[RelationTriplet]) -> String {
    let mut out = format!("boxlab-triplets\t{FORMAT_VERSION}\n");
    for t in triplets {
        out.push_str(&format!("{}\t{}\t{}", t.kind.as_str(), t.anchor, t.positive));
        for n in &t.negatives {
            out.push('\t');
            out.push_str(n);
        }
        out.push('\n');
    }
    out
}

pub fn parse_triplets(text: &str, known: Option<&HashSet<String>>) -> Result<Vec<RelationTriplet>> {
    let mut it = lines(text);
    header(&mut it, "triplets", 0)?;
    let mut out = Vec::new();
    for (line, text) in it {
        let f: Vec<&str> = text.split('\t').collect();
        if f.len() < 4 {
            return Err(Error::MalformedRecord {
                line,
                msg: "expected kind, anchor, positive and at least one negative".into(),
            });
        }
        let kind: RelationKind = f[0].parse().map_err(|e: Error| Error::MalformedRecord {
            line,
            msg: e.to_string(),
        })?;
        for id in &f[1..] {
            check_id(id, line)?;
            check_known(id, line, known)?;
        }
        out.push(RelationTriplet {
            anchor: f[1].to_string(),
            positive: f[2].to_string(),
            negatives: f[3..].iter().map(|s| s.to_string()).collect(),
            kind,
        });
    }
    Ok(out)
}

pub fn write_triplets(triplets: &[RelationTriplet], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &format_triplets(triplets))
}

pub fn read_triplets(path: impl AsRef<Path>, known: Option<&HashSet<String>>) -> Result<Vec<RelationTriplet>> {
    parse_triplets(&fs::read_to_string(path)?, known)
}

// ---------------------------------------------------------------------------
// Ground-truth hierarchies
// ---------------------------------------------------------------------------

/// Parent links of a generated hierarchy; boxes travel in a separate table.
pub fn format_hierarchy(tree: &GroundTruthTree) -> String {
    let mut out = format!("boxlab-hierarchy\t{FORMAT_VERSION}\n");
    for (i, p) in tree.parent.iter().enumerate() {
        let parent = p.map_or("-", |p| tree.id(p));
        out.push_str(&format!("{}\t{parent}\n", tree.id(i)));
    }
    out
}

/// Rebuilds a hierarchy from parent links and the table holding its boxes.
/// Parents must be listed before their children.
pub fn parse_hierarchy(text: &str, nodes: BoxTable) -> Result<GroundTruthTree> {
    let mut it = lines(text);
    header(&mut it, "hierarchy", 0)?;
    let mut order = Vec::with_capacity(nodes.len());
    let mut parent = vec![None; nodes.len()];
    let mut seen = vec![false; nodes.len()];
    let mut last = 1;
    for (line, text) in it {
        last = line;
        let f: Vec<&str> = text.split('\t').collect();
        if f.len() != 2 {
            return Err(Error::MalformedRecord {
                line,
                msg: format!("expected 2 fields, found {}", f.len()),
            });
        }
        let i = nodes.index_of(f[0]).ok_or_else(|| Error::UnknownIdAt {
            line,
            id: f[0].to_string(),
        })?;
        if seen[i] {
            return Err(Error::DuplicateId {
                line,
                id: f[0].to_string(),
            });
        }
        if f[1] == "-" {
            if !order.is_empty() {
                return Err(Error::MalformedRecord {
                    line,
                    msg: "only the first record may be the root".into(),
                });
            }
        } else {
            let p = nodes.index_of(f[1]).ok_or_else(|| Error::UnknownIdAt {
                line,
                id: f[1].to_string(),
            })?;
            if !seen[p] {
                return Err(Error::MalformedRecord {
                    line,
                    msg: format!("parent `{}` must be listed first", f[1]),
                });
            }
            parent[i] = Some(p);
        }
        seen[i] = true;
        order.push(i);
    }
    if order.len() != nodes.len() {
        return Err(Error::MalformedRecord {
            line: last,
            msg: format!("{} boxes but {} hierarchy records", nodes.len(), order.len()),
        });
    }
    GroundTruthTree::from_parents(nodes, parent).map_err(|e| Error::MalformedRecord {
        line: last,
        msg: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Cluster trees
// ---------------------------------------------------------------------------

pub fn format_tree(tree: &ClusterTree) -> String {
    let dim = tree.nodes[0].bbox.dim();
    let mut out = format!("boxlab-tree\t{FORMAT_VERSION}\t{}\t{dim}\n", tree.nodes.len());
    for (i, node) in tree.nodes.iter().enumerate() {
        let parent = node.parent.map_or(-1, |p| p as i64);
        let item = if i < tree.n_leaves() { tree.leaf_ids[i].as_str() } else { "-" };
        out.push_str(&format!("{i}\t{parent}\t{}\t{}\t{item}", node.depth, node.members.len()));
        join_reals(&mut out, node.bbox.lower());
        join_reals(&mut out, node.bbox.upper());
        out.push('\n');
    }
    out
}

pub fn parse_tree(text: &str) -> Result<ClusterTree> {
    let mut it = lines(text);
    let (hline, extras) = header(&mut it, "tree", 2)?;
    let m = parse_usize(extras[0], hline, "node count")?;
    let dim = parse_usize(extras[1], hline, "D")?;
    if m == 0 || m % 2 == 0 {
        return Err(Error::MalformedHeader {
            line: hline,
            msg: format!("a binary tree has an odd, positive node count, found {m}"),
        });
    }
    let n = m.div_ceil(2);
    let mut leaves = BoxTable::new(dim);
    let mut parents: Vec<(usize, Option<usize>)> = Vec::with_capacity(m);
    let mut depths = Vec::with_capacity(m);
    let mut corners = Vec::with_capacity(m);
    let mut last = hline;
    for (line, text) in it {
        last = line;
        let f: Vec<&str> = text.split('\t').collect();
        if f.len() != 5 + 2 * dim {
            return Err(Error::MalformedRecord {
                line,
                msg: format!("expected {} fields, found {}", 5 + 2 * dim, f.len()),
            });
        }
        let idx = parents.len();
        let node: usize = f[0].parse().map_err(|_| Error::MalformedRecord {
            line,
            msg: format!("field 1: bad node id `{}`", f[0]),
        })?;
        if node != idx {
            return Err(Error::MalformedRecord {
                line,
                msg: format!("expected node {idx}, found {node}"),
            });
        }
        let parent: i64 = f[1].parse().map_err(|_| Error::MalformedRecord {
            line,
            msg: format!("field 2: bad parent id `{}`", f[1]),
        })?;
        let parent = match parent {
            -1 => None,
            p if p > idx as i64 && (p as usize) < m => Some(p as usize),
            p => {
                return Err(Error::MalformedRecord {
                    line,
                    msg: format!("field 2: parent {p} must be -1 or a later node"),
                })
            }
        };
        let depth: usize = f[2].parse().map_err(|_| Error::MalformedRecord {
            line,
            msg: format!("field 3: bad depth `{}`", f[2]),
        })?;
        let size: usize = f[3].parse().map_err(|_| Error::MalformedRecord {
            line,
            msg: format!("field 4: bad size `{}`", f[3]),
        })?;
        let lower = (0..dim).map(|k| parse_real(f[5 + k], line, 6 + k)).collect::<Result<Vec<_>>>()?;
        let upper = (0..dim)
            .map(|k| parse_real(f[5 + dim + k], line, 6 + dim + k))
            .collect::<Result<Vec<_>>>()?;
        let (lower, upper) = if idx < n {
            check_id(f[4], line)?;
            if leaves.index_of(f[4]).is_some() {
                return Err(Error::DuplicateId {
                    line,
                    id: f[4].to_string(),
                });
            }
            let b = BoxEmbed::from_corners(lower.clone(), upper.clone())
                .map_err(|e| Error::MalformedRecord { line, msg: e.to_string() })?;
            leaves.push(f[4], b)?;
            (lower, upper)
        } else if f[4] != "-" {
            return Err(Error::MalformedRecord {
                line,
                msg: "internal nodes must have item `-`".into(),
            });
        } else {
            (lower, upper)
        };
        parents.push((line, parent));
        depths.push((line, depth, size));
        corners.push((lower, upper));
    }
    if parents.len() != m {
        return Err(Error::MalformedRecord {
            line: last,
            msg: format!("header declares {m} nodes, found {}", parents.len()),
        });
    }
    let mut kids: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, (line, p)) in parents.iter().enumerate() {
        match p {
            Some(p) => kids[*p].push(i),
            None if i != m - 1 => {
                return Err(Error::MalformedRecord {
                    line: *line,
                    msg: "only the last node may be the root".into(),
                })
            }
            None => {}
        }
    }
    if let Some(c) = (0..n).find(|&c| !kids[c].is_empty()) {
        return Err(Error::MalformedRecord {
            line: parents[kids[c][0]].0,
            msg: format!("leaf {c} cannot be a parent"),
        });
    }
    let mut merges = Vec::with_capacity(n - 1);
    for (c, k) in kids.iter().enumerate().skip(n) {
        if k.len() != 2 {
            return Err(Error::MalformedRecord {
                line: parents[c].0,
                msg: format!("internal node {c} has {} children", k.len()),
            });
        }
        merges.push((k[0], k[1]));
    }
    let tree = ClusterTree::from_merges(&leaves, &merges).map_err(|e| Error::MalformedRecord {
        line: last,
        msg: e.to_string(),
    })?;
    for (i, &(line, d, size)) in depths.iter().enumerate() {
        if tree.nodes[i].depth != d {
            return Err(Error::MalformedRecord {
                line,
                msg: format!("depth {d} disagrees with structure ({})", tree.nodes[i].depth),
            });
        }
        let (lower, upper) = &corners[i];
        if tree.nodes[i].bbox.lower() != lower.as_slice() || tree.nodes[i].bbox.upper() != upper.as_slice() {
            return Err(Error::MalformedRecord {
                line,
                msg: "corners disagree with the join of the children".into(),
            });
        }
        if tree.nodes[i].members.len() != size {
            return Err(Error::MalformedRecord {
                line,
                msg: format!("size {size} disagrees with structure ({})", tree.nodes[i].members.len()),
            });
        }
    }
    Ok(tree)
}

pub fn write_tree(tree: &ClusterTree, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &format_tree(tree))
}

pub fn read_tree(path: impl AsRef<Path>) -> Result<ClusterTree> {
    parse_tree(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Loss traces
// ---------------------------------------------------------------------------

/// Two-column TSV with a header row.
pub fn format_trace(columns: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = columns.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hcluster::agglomerate;

    #[test]
    fn empty_table_header_only() {
        let t = BoxTable::new(3);
        let s = format_box_table(&t);
        assert_eq!(s, "boxlab-boxes\tv1\t0\t3\n");
        assert_eq!(parse_box_table(&s).unwrap().len(), 0);
    }

    #[test]
    fn single_box_bit_identical() {
        let b = BoxEmbed::new(vec![0.1 + 0.2, -1e-300, 12345.678901234567], vec![1.0 / 3.0, 2e-9, 7.0]).unwrap();
        let t = BoxTable::from_entries(3, [("x".to_string(), b.clone())]).unwrap();
        let back = parse_box_table(&format_box_table(&t)).unwrap();
        let r = back.lookup("x").unwrap();
        for (a, b) in r.center().iter().zip(b.center()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in r.delta().iter().zip(b.delta()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_delta_names_line() {
        let text = "boxlab-boxes\tv1\t2\t1\na\t0\t1\nb\t0\t0\n";
        match parse_box_table(text) {
            Err(Error::NonPositiveDelta { line: 3, field: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn distinct_box_errors() {
        assert!(matches!(parse_box_table("boxes\tv1\t1\t1\n"), Err(Error::MalformedHeader { line: 1, .. })));
        assert!(matches!(parse_box_table("boxlab-boxes\tv1\tx\t1\n"), Err(Error::MalformedHeader { .. })));
        assert!(matches!(
            parse_box_table("boxlab-boxes\tv1\t2\t1\na\t0\t1\na\t0\t1\n"),
            Err(Error::DuplicateId { line: 3, .. })
        ));
        assert!(matches!(
            parse_box_table("boxlab-boxes\tv1\t1\t1\na\t0\n"),
            Err(Error::MalformedRecord { line: 2, .. })
        ));
        assert!(matches!(
            parse_box_table("boxlab-boxes\tv1\t1\t1\na\tNaN\t1\n"),
            Err(Error::MalformedRecord { line: 2, .. })
        ));
        assert!(matches!(
            parse_box_table("boxlab-boxes\tv1\t2\t1\na\t0\t1\n"),
            Err(Error::MalformedRecord { line: 2, .. })
        ));
        assert!(matches!(parse_box_table(""), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn scores_non_numeric() {
        let text = "boxlab-scores\tv1\na\t3\nb\tgood\n";
        assert!(matches!(parse_scores(text, None), Err(Error::MalformedRecord { line: 3, .. })));
        let known: HashSet<String> = ["a".to_string()].into();
        assert!(matches!(
            parse_scores("boxlab-scores\tv1\nz\t3\n", Some(&known)),
            Err(Error::UnknownIdAt { line: 2, .. })
        ));
    }

    #[test]
    fn triplets_missing_id() {
        let known: HashSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let text = "boxlab-triplets\tv1\nentailment\ta\tb\tc\nentailment\ta\tb\tghost\n";
        match parse_triplets(text, Some(&known)) {
            Err(Error::UnknownIdAt { line: 3, id }) => assert_eq!(id, "ghost"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_triplets("boxlab-triplets\tv1\nsideways\ta\tb\tc\n", None),
            Err(Error::MalformedRecord { line: 2, .. })
        ));
    }

    #[test]
    fn pairs_round_trip_and_errors() {
        let pairs = vec![
            SpecificityPair { id_a: "x".into(), id_b: "y".into(), more_specific: MoreSpecific::B },
            SpecificityPair { id_a: "y".into(), id_b: "z".into(), more_specific: MoreSpecific::A },
        ];
        assert_eq!(parse_pairs(&format_pairs(&pairs), None).unwrap(), pairs);
        assert!(parse_pairs("boxlab-pairs\tv1\nx\ty\tc\n", None).is_err());
        assert!(parse_pairs("boxlab-pairs\tv1\nx\tx\ta\n", None).is_err());
    }

    #[test]
    fn two_leaf_tree_round_trip() {
        let t = BoxTable::from_entries(
            2,
            [
                ("p".to_string(), BoxEmbed::new(vec![0.0, 0.0], vec![0.5, 0.5]).unwrap()),
                ("q".to_string(), BoxEmbed::new(vec![2.0, 0.0], vec![0.5, 0.5]).unwrap()),
            ],
        )
        .unwrap();
        let tree = agglomerate(&t).unwrap();
        let text = format_tree(&tree);
        assert_eq!(parse_tree(&text).unwrap(), tree);
    }

    #[test]
    fn tree_rejects_bad_structure() {
        let good = "boxlab-tree\tv1\t3\t1\n0\t2\t1\t1\ta\t0\t1\n1\t2\t1\t1\tb\t2\t3\n2\t-1\t0\t2\t-\t0\t3\n";
        assert!(parse_tree(good).is_ok());
        let bad_depth = good.replace("0\t2\t1\t1\ta", "0\t2\t4\t1\ta");
        assert!(matches!(parse_tree(&bad_depth), Err(Error::MalformedRecord { line: 2, .. })));
        let bad_parent = good.replace("1\t2\t1\t1\tb", "1\t0\t1\t1\tb");
        assert!(matches!(parse_tree(&bad_parent), Err(Error::MalformedRecord { line: 3, .. })));
        assert!(parse_tree("boxlab-tree\tv1\t2\t1\n").is_err());
        let bad_size = good.replace("2\t-1\t0\t2\t-", "2\t-1\t0\t3\t-");
        assert!(matches!(parse_tree(&bad_size), Err(Error::MalformedRecord { line: 4, .. })));
        let bad_corner = good.replace("-\t0\t3", "-\t0\t3.5");
        assert!(matches!(parse_tree(&bad_corner), Err(Error::MalformedRecord { line: 4, .. })));
        let leaf_parent = "boxlab-tree\tv1\t3\t1\n0\t1\t1\t1\ta\t0\t1\n1\t2\t1\t1\tb\t2\t3\n2\t-1\t0\t2\t-\t0\t3\n";
        assert!(matches!(parse_tree(leaf_parent), Err(Error::MalformedRecord { line: 2, .. })));
    }

    #[test]
    fn hierarchy_round_trip() {
        let spec = crate::synthgen::HierarchySpec { depth: 3, branching: 2, dim: 2, shrink: 0.5, seed: 4 };
        let tree = crate::synthgen::gen_nested_boxes(&spec).unwrap();
        let boxes = parse_box_table(&format_box_table(&tree.nodes)).unwrap();
        let back = parse_hierarchy(&format_hierarchy(&tree), boxes).unwrap();
        assert_eq!(back, tree);
        let t2 = BoxTable::from_entries(1, [("r".to_string(), BoxEmbed::new(vec![0.0], vec![1.0]).unwrap())]).unwrap();
        assert!(matches!(
            parse_hierarchy("boxlab-hierarchy\tv1\nr\tq\n", t2),
            Err(Error::UnknownIdAt { line: 2, .. })
        ));
    }

    #[test]
    fn lowdim_round_trip() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let boxes = vec![
            LowDimBox { center: vec![0.1, -0.2], delta: 0.3 },
            LowDimBox { center: vec![1.0 / 7.0, 5.0], delta: 1e-3 },
        ];
        let (i2, b2) = parse_lowdim(&format_lowdim(&ids, &boxes)).unwrap();
        assert_eq!(i2, ids);
        assert_eq!(b2, boxes);
        assert!(matches!(
            parse_lowdim("boxlab-lowdim\tv1\t1\t1\na\t0\t0\n"),
            Err(Error::NonPositiveDelta { line: 2, field: 3 })
        ));
    }
}
