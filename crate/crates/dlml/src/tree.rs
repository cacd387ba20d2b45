//! The homogeneous tree `T_q` in horocyclic coordinates.
//!
//! `T_q` is the tree in which every vertex has exactly `q + 1` neighbours.
//! We fix a reference end `omega` and orient the tree so that every vertex
//! `v` has one neighbour `v^-` closer to `omega` (its predecessor) and `q`
//! neighbours further away (its successors). The Busemann function `hor`
//! ("horocycle index") increases by one along each successor step.
//!
//! A vertex is encoded by its horocycle index together with the finite word
//! of successor labels that separates it from the `omega`-directed spine
//! through the root: the root `o` is `(0, empty)`, and following successor
//! label `0` everywhere stays on the spine. Words are normalized to carry no
//! leading zero, which makes the encoding bijective.
//!
//! Besides vertex arithmetic the module provides the two confluent
//! operations (with respect to `omega` and with respect to the root), the
//! ends of the tree other than `omega`, and ultrametrics on the end
//! compactification.

use std::fmt;
use std::str::FromStr;

use crate::error::{DlmlError, Result};

/// Vertex of `T_q` in horocyclic coordinates.
///
/// Invariants: every letter of `word` is `< branching`, and the first letter
/// (if any) is nonzero. The vertex lies on horocycle `level` (`hor` value);
/// its word lists successor labels from shallowest to deepest, so the last
/// letter is the label of the step that entered `level`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreeVertex {
    level: i64,
    word: Vec<u8>,
    branching: u8,
}

impl TreeVertex {
    /// Builds a vertex, validating normalization.
    pub fn new(branching: u8, level: i64, word: Vec<u8>) -> Result<Self> {
        if branching < 2 {
            return Err(DlmlError::InvalidInput(format!(
                "branching must be at least 2, got {branching}"
            )));
        }
        if let Some(&first) = word.first() {
            if first == 0 {
                return Err(DlmlError::InvalidInput(
                    "word has a leading zero (not normalized)".into(),
                ));
            }
        }
        if let Some(&bad) = word.iter().find(|&&l| l >= branching) {
            return Err(DlmlError::InvalidInput(format!(
                "label {bad} out of range for branching {branching}"
            )));
        }
        Ok(TreeVertex {
            level,
            word,
            branching,
        })
    }

    /// Root vertex `o = (0, empty)`.
    pub fn root(branching: u8) -> Self {
        TreeVertex {
            level: 0,
            word: Vec::new(),
            branching,
        }
    }

    /// Horocycle index (`hor` value).
    pub fn level(&self) -> i64 {
        self.level
    }

    /// Successor-label word, shallowest first.
    pub fn word(&self) -> &[u8] {
        &self.word
    }

    /// Branching number `q` (the vertex has `q + 1` neighbours).
    pub fn branching(&self) -> u8 {
        self.branching
    }

    /// The neighbour towards `omega`; decreases `hor` by one.
    pub fn predecessor(&self) -> TreeVertex {
        let mut word = self.word.clone();
        word.pop();
        TreeVertex {
            level: self.level - 1,
            word,
            branching: self.branching,
        }
    }

    /// The `label`-th neighbour away from `omega`; increases `hor` by one.
    pub fn successor(&self, label: u8) -> Result<TreeVertex> {
        if label >= self.branching {
            return Err(DlmlError::InvalidInput(format!(
                "successor label {label} out of range for branching {}",
                self.branching
            )));
        }
        let mut word = self.word.clone();
        if !(word.is_empty() && label == 0) {
            word.push(label);
        }
        Ok(TreeVertex {
            level: self.level + 1,
            word,
            branching: self.branching,
        })
    }

    /// Ancestor `m` predecessor steps up.
    pub fn ancestor(&self, m: u64) -> TreeVertex {
        let keep = self.word.len().saturating_sub(m as usize);
        TreeVertex {
            level: self.level - m as i64,
            word: self.word[..keep].to_vec(),
            branching: self.branching,
        }
    }

    /// All `q + 1` neighbours: predecessor first, then successors by label.
    pub fn neighbours(&self) -> Vec<TreeVertex> {
        let mut out = Vec::with_capacity(self.branching as usize + 1);
        out.push(self.predecessor());
        for l in 0..self.branching {
            out.push(self.successor(l).expect("label in range"));
        }
        out
    }

    /// Label of the edge entering this vertex from its predecessor.
    fn entering_label(&self) -> u8 {
        *self.word.last().unwrap_or(&0)
    }

    /// Confluent with respect to `omega`: the deepest common ancestor
    /// `c = x meet y`, together with `(up, dn) = (d(x, c), d(c, y))`.
    ///
    /// `d(x, y) = up + dn` and `hor(y) - hor(x) = dn - up`.
    pub fn confluent_omega(&self, other: &TreeVertex) -> Result<(TreeVertex, u64, u64)> {
        if self.branching != other.branching {
            return Err(DlmlError::Incompatible(format!(
                "branching mismatch: {} vs {}",
                self.branching, other.branching
            )));
        }
        let mut a = self.clone();
        let mut b = other.clone();
        let mut up = 0u64;
        let mut dn = 0u64;
        while a.level > b.level {
            a = a.predecessor();
            up += 1;
        }
        while b.level > a.level {
            b = b.predecessor();
            dn += 1;
        }
        while a != b {
            a = a.predecessor();
            b = b.predecessor();
            up += 1;
            dn += 1;
        }
        Ok((a, up, dn))
    }

    /// Graph distance `d(x, y)`.
    pub fn distance(&self, other: &TreeVertex) -> Result<u64> {
        let (_, up, dn) = self.confluent_omega(other)?;
        Ok(up + dn)
    }

    /// Geodesic from the root `o` to this vertex, described as the number of
    /// rising steps followed by the labels of the falling steps.
    ///
    /// The geodesic climbs from `o` to the root-confluent peak and then
    /// descends; the descent labels are exactly the successor labels along
    /// the ancestor chain.
    fn ray_from_root(&self) -> (u64, Vec<u8>) {
        let o = TreeVertex::root(self.branching);
        let (c, up, dn) = o.confluent_omega(self).expect("same branching");
        let mut labels = Vec::with_capacity(dn as usize);
        let mut v = self.clone();
        let mut stack = Vec::with_capacity(dn as usize);
        while v != c {
            stack.push(v.entering_label());
            v = v.predecessor();
        }
        while let Some(l) = stack.pop() {
            labels.push(l);
        }
        (up, labels)
    }
}

impl fmt::Display for TreeVertex {
    /// Text form `q=<branching>;h=<level>;w=<labels>`, labels most
    /// significant (shallowest) first, one character per label
    /// (`0..9a..z`).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q={};h={};w=", self.branching, self.level)?;
        for &l in &self.word {
            write!(f, "{}", char::from_digit(l as u32, 36).expect("label < 36"))?;
        }
        Ok(())
    }
}

impl FromStr for TreeVertex {
    type Err = DlmlError;

    fn from_str(s: &str) -> Result<Self> {
        let mut branching = None;
        let mut level = None;
        let mut word = None;
        for part in s.split(';') {
            let (key, value) = part.split_once('=').ok_or_else(|| {
                DlmlError::Parse(format!("expected key=value, got {part:?}"))
            })?;
            match key {
                "q" => {
                    branching = Some(value.parse::<u8>().map_err(|e| {
                        DlmlError::Parse(format!("bad branching {value:?}: {e}"))
                    })?)
                }
                "h" => {
                    level = Some(value.parse::<i64>().map_err(|e| {
                        DlmlError::Parse(format!("bad level {value:?}: {e}"))
                    })?)
                }
                "w" => {
                    let mut labels = Vec::with_capacity(value.len());
                    for ch in value.chars() {
                        let l = ch.to_digit(36).ok_or_else(|| {
                            DlmlError::Parse(format!("bad word character {ch:?}"))
                        })?;
                        labels.push(l as u8);
                    }
                    word = Some(labels);
                }
                other => {
                    return Err(DlmlError::Parse(format!("unknown key {other:?}")));
                }
            }
        }
        match (branching, level, word) {
            (Some(q), Some(h), Some(w)) => TreeVertex::new(q, h, w)
                .map_err(|e| DlmlError::Parse(format!("invalid vertex: {e}"))),
            _ => Err(DlmlError::Parse(
                "vertex text needs q=, h= and w= fields".into(),
            )),
        }
    }
}

/// End of `T_q` other than the reference end `omega` itself, or `omega`.
///
/// A non-`omega` end is the limit of the ray that descends from some vertex
/// along successor label `0` forever. Two bases describe the same end when
/// one lies on the zero-ray below the other, so the canonical base is the
/// shallowest: its word must not end in `0`, and a base with empty word is
/// normalized to level `0` (the ray through the root's spine).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TreeEnd {
    /// The distinguished reference end.
    Omega,
    /// The end reached by descending from `base` along label `0` forever.
    Lower(TreeVertex),
}

impl TreeEnd {
    /// Canonicalizes a base vertex into the end through its zero-ray.
    pub fn lower_through(base: &TreeVertex) -> TreeEnd {
        let mut level = base.level;
        let mut word = base.word.clone();
        while word.last() == Some(&0) {
            word.pop();
            level -= 1;
        }
        if word.is_empty() {
            level = 0;
        }
        TreeEnd::Lower(TreeVertex {
            level,
            word,
            branching: base.branching,
        })
    }

    /// Branching of the underlying tree.
    pub fn branching(&self) -> Option<u8> {
        match self {
            TreeEnd::Omega => None,
            TreeEnd::Lower(b) => Some(b.branching),
        }
    }

    /// A vertex on the ray to this end at depth `>= depth` below the base
    /// (for `Omega`: an ancestor of the root). Used to reduce end
    /// computations to deep vertex representatives.
    pub fn representative(&self, depth: u64, branching: u8) -> TreeVertex {
        match self {
            TreeEnd::Omega => TreeVertex::root(branching).ancestor(depth),
            TreeEnd::Lower(base) => {
                let mut v = base.clone();
                for _ in 0..depth {
                    v = v.successor(0).expect("label 0 valid");
                }
                v
            }
        }
    }
}

impl fmt::Display for TreeEnd {
    /// Text form: `omega`, or `end:<vertex text>` for the canonical base.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeEnd::Omega => write!(f, "omega"),
            TreeEnd::Lower(base) => write!(f, "end:{base}"),
        }
    }
}

impl FromStr for TreeEnd {
    type Err = DlmlError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "omega" {
            return Ok(TreeEnd::Omega);
        }
        if let Some(rest) = s.strip_prefix("end:") {
            let base: TreeVertex = rest.parse()?;
            let canonical = TreeEnd::lower_through(&base);
            match &canonical {
                TreeEnd::Lower(c) if *c == base => Ok(canonical),
                _ => Err(DlmlError::Parse(format!(
                    "end base {base} is not canonical (word ends in 0 or spine base off level 0)"
                ))),
            }
        } else {
            Err(DlmlError::Parse(format!("bad end text {s:?}")))
        }
    }
}

/// Vertex or end of the compactified tree, as accepted by the root
/// confluent and the end-metric.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TreePoint {
    /// An ordinary vertex.
    Vertex(TreeVertex),
    /// A boundary end.
    End(TreeEnd),
}

impl TreePoint {
    fn branching(&self) -> Option<u8> {
        match self {
            TreePoint::Vertex(v) => Some(v.branching),
            TreePoint::End(e) => e.branching(),
        }
    }

    /// Canonicalizes contained ends so that equality means equality of
    /// points of the compactification.
    fn canonicalized(&self) -> TreePoint {
        match self {
            TreePoint::End(TreeEnd::Lower(base)) => {
                TreePoint::End(TreeEnd::lower_through(base))
            }
            other => other.clone(),
        }
    }

    /// Number of rising steps of the geodesic from the root, and its
    /// descent labels (`None` length means infinite rise, i.e. `omega`).
    fn ray_from_root(&self, branching: u8) -> Option<(u64, Vec<u8>, bool)> {
        // Returns (rise, labels, descends_forever_with_zeros).
        match self {
            TreePoint::Vertex(v) => {
                let (rise, labels) = v.ray_from_root();
                Some((rise, labels, false))
            }
            TreePoint::End(TreeEnd::Omega) => None,
            TreePoint::End(TreeEnd::Lower(base)) => {
                debug_assert_eq!(base.branching, branching);
                let (rise, labels) = base.ray_from_root();
                Some((rise, labels, true))
            }
        }
    }
}

/// Confluent with respect to the root: the vertex where the geodesics from
/// the root to `x` and to `y` separate.
///
/// Errors when the arguments are the same end (the geodesics never
/// separate) or come from trees of different branching.
pub fn confluent_root(x: &TreePoint, y: &TreePoint) -> Result<TreeVertex> {
    let x = x.canonicalized();
    let y = y.canonicalized();
    let qx = x.branching();
    let qy = y.branching();
    let branching = match (qx, qy) {
        (Some(a), Some(b)) if a == b => a,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => {
            return Err(DlmlError::Degenerate(
                "confluent of the reference end with itself".into(),
            ))
        }
        (Some(a), Some(b)) => {
            return Err(DlmlError::Incompatible(format!(
                "branching mismatch: {a} vs {b}"
            )))
        }
    };
    if x == y {
        if let TreePoint::End(_) = x {
            return Err(DlmlError::Degenerate(
                "confluent of an end with itself".into(),
            ));
        }
    }
    let rx = x.ray_from_root(branching);
    let ry = y.ray_from_root(branching);
    let ((rise_a, labels_a, inf_a), (rise_b, labels_b, inf_b)) = match (rx, ry) {
        (None, None) => {
            return Err(DlmlError::Degenerate(
                "confluent of the reference end with itself".into(),
            ))
        }
        (None, Some(r)) | (Some(r), None) => {
            // One argument is omega: the shared segment is the rise of the
            // other geodesic.
            return Ok(TreeVertex::root(branching).ancestor(r.0));
        }
        (Some(a), Some(b)) => (a, b),
    };
    if rise_a != rise_b {
        let shared = rise_a.min(rise_b);
        return Ok(TreeVertex::root(branching).ancestor(shared));
    }
    // Equal rises: walk the descent labels together. An exhausted finite
    // descent continues with virtual zeros when the point is a lower end.
    // Distinct canonical points always separate within max word length + 1
    // steps; equal ends were rejected above.
    let peak = TreeVertex::root(branching).ancestor(rise_a);
    let get = |labels: &[u8], inf: bool, i: usize| -> Option<u8> {
        if i < labels.len() {
            Some(labels[i])
        } else if inf {
            Some(0)
        } else {
            None
        }
    };
    let mut c = peak;
    for i in 0..=labels_a.len().max(labels_b.len()) {
        match (get(&labels_a, inf_a, i), get(&labels_b, inf_b, i)) {
            (Some(a), Some(b)) if a == b => {
                c = c.successor(a)?;
            }
            // Separation, or one geodesic ends at a vertex lying on the
            // other: both give the current vertex.
            _ => return Ok(c),
        }
    }
    Ok(c)
}

/// Variant selector for the end-compactification ultrametric.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaVariant {
    /// `q^{-d(c, o)}`: deep separation means close. This variant metrizes
    /// the end compactification and is the one used everywhere else in the
    /// crate.
    Decaying,
    /// `q^{+d(c, o)}`: the literal printed form, kept for comparison. It is
    /// unbounded along rays and does not induce the compact topology.
    Printed,
}

/// Ultrametric-type kernel on the compactified tree.
///
/// Vanishes exactly on the diagonal; otherwise `q^{±d(c, o)}` where `c` is
/// the root confluent of the two points.
pub fn end_metric_theta(x: &TreePoint, y: &TreePoint, variant: ThetaVariant) -> Result<f64> {
    if x.canonicalized() == y.canonicalized() {
        return Ok(0.0);
    }
    let c = confluent_root(x, y)?;
    let q = c.branching;
    let o = TreeVertex::root(q);
    let d = c.distance(&o)? as i32;
    let exp = match variant {
        ThetaVariant::Decaying => -d,
        ThetaVariant::Printed => d,
    };
    Ok((q as f64).powi(exp))
}

/// Enumerates the ball of the given radius around `center` (breadth-first).
pub fn tree_ball(center: &TreeVertex, radius: u64) -> Vec<TreeVertex> {
    let mut seen = std::collections::HashSet::new();
    let mut frontier = vec![center.clone()];
    let mut out = vec![center.clone()];
    seen.insert(center.clone());
    for _ in 0..radius {
        let mut next = Vec::new();
        for v in &frontier {
            for n in v.neighbours() {
                if seen.insert(n.clone()) {
                    out.push(n.clone());
                    next.push(n);
                }
            }
        }
        frontier = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    fn v(q: u8, h: i64, w: &[u8]) -> TreeVertex {
        TreeVertex::new(q, h, w.to_vec()).unwrap()
    }

    /// Breadth-first distances within a radius, used as the independent
    /// oracle for the algebraic distance.
    fn bfs_distances(start: &TreeVertex, radius: u64) -> HashMap<TreeVertex, u64> {
        let mut dist = HashMap::new();
        dist.insert(start.clone(), 0);
        let mut frontier = vec![start.clone()];
        for d in 1..=radius {
            let mut next = Vec::new();
            for u in &frontier {
                for n in u.neighbours() {
                    if !dist.contains_key(&n) {
                        dist.insert(n.clone(), d);
                        next.push(n);
                    }
                }
            }
            frontier = next;
        }
        dist
    }

    /// Explicit geodesic from the root as a vertex list (rise then fall).
    fn root_path(x: &TreeVertex) -> Vec<TreeVertex> {
        let o = TreeVertex::root(x.branching());
        let (c, up, _) = o.confluent_omega(x).unwrap();
        let mut path = Vec::new();
        let mut cur = o;
        path.push(cur.clone());
        for _ in 0..up {
            cur = cur.predecessor();
            path.push(cur.clone());
        }
        assert_eq!(cur, c);
        let mut tail = Vec::new();
        let mut w = x.clone();
        while w != c {
            tail.push(w.clone());
            w = w.predecessor();
        }
        while let Some(t) = tail.pop() {
            path.push(t);
        }
        path
    }

    #[test]
    fn predecessor_examples() {
        assert_eq!(v(2, 2, &[1, 0]).predecessor(), v(2, 1, &[1]));
        assert_eq!(v(2, 1, &[1]).predecessor(), TreeVertex::root(2));
        assert_eq!(TreeVertex::root(2).predecessor(), v(2, -1, &[]));
        assert_eq!(v(2, -1, &[]).predecessor(), v(2, -2, &[]));
    }

    #[test]
    fn successor_examples() {
        let o = TreeVertex::root(2);
        assert_eq!(o.successor(0).unwrap(), v(2, 1, &[]));
        assert_eq!(o.successor(1).unwrap(), v(2, 1, &[1]));
        assert_eq!(v(2, 1, &[1]).successor(0).unwrap(), v(2, 2, &[1, 0]));
        assert!(o.successor(2).is_err());
    }

    #[test]
    fn normalization_rejects_leading_zero_and_bad_labels() {
        assert!(TreeVertex::new(2, 1, vec![0]).is_err());
        assert!(TreeVertex::new(2, 2, vec![1, 2]).is_err());
        assert!(TreeVertex::new(1, 0, vec![]).is_err());
        assert!(TreeVertex::new(3, 2, vec![2, 0]).is_ok());
    }

    #[test]
    fn successor_predecessor_roundtrip_on_ball() {
        for q in [2u8, 3] {
            for x in tree_ball(&TreeVertex::root(q), 5) {
                for l in 0..q {
                    assert_eq!(x.successor(l).unwrap().predecessor(), x);
                }
            }
        }
    }

    #[test]
    fn ancestor_matches_iterated_predecessor() {
        for x in tree_ball(&TreeVertex::root(3), 6) {
            let mut cur = x.clone();
            for m in 0..=6u64 {
                assert_eq!(x.ancestor(m), cur);
                cur = cur.predecessor();
            }
        }
    }

    #[test]
    fn degree_is_branching_plus_one() {
        for q in [2u8, 3, 4] {
            let o = TreeVertex::root(q);
            let n = o.neighbours();
            assert_eq!(n.len(), q as usize + 1);
            let distinct: HashSet<_> = n.into_iter().collect();
            assert_eq!(distinct.len(), q as usize + 1);
        }
    }

    #[test]
    fn horocycle_levels_partition_ball() {
        // Distinct coordinates encode distinct vertices; levels change by
        // exactly one along every edge.
        let ball = tree_ball(&TreeVertex::root(2), 5);
        let distinct: HashSet<_> = ball.iter().cloned().collect();
        assert_eq!(distinct.len(), ball.len());
        for x in &ball {
            for n in x.neighbours() {
                assert_eq!((n.level() - x.level()).abs(), 1);
            }
        }
    }

    #[test]
    fn confluent_omega_examples() {
        let o = TreeVertex::root(2);
        assert_eq!(o.confluent_omega(&o).unwrap(), (o.clone(), 0, 0));
        // Siblings below the root.
        let a = o.successor(0).unwrap();
        let b = o.successor(1).unwrap();
        assert_eq!(a.confluent_omega(&b).unwrap(), (o.clone(), 1, 1));
        // Ancestor chain.
        let deep = v(2, 3, &[1, 0, 1]);
        let mid = v(2, 1, &[1]);
        assert_eq!(deep.confluent_omega(&mid).unwrap(), (mid.clone(), 2, 0));
        assert_eq!(mid.confluent_omega(&deep).unwrap(), (mid.clone(), 0, 2));
    }

    #[test]
    fn distance_matches_bfs_on_ball() {
        for q in [2u8, 3] {
            let center = TreeVertex::root(q);
            let oracle = bfs_distances(&center, 4);
            for (x, d) in &oracle {
                assert_eq!(center.distance(x).unwrap(), *d);
                // Symmetry and the hor identity d >= |hor difference|.
                assert_eq!(x.distance(&center).unwrap(), *d);
                let (_, up, dn) = center.confluent_omega(x).unwrap();
                assert_eq!(up + dn, *d);
                assert_eq!(dn as i64 - up as i64, x.level() - center.level());
            }
        }
    }

    #[test]
    fn pairwise_distance_matches_bfs() {
        let ball = tree_ball(&TreeVertex::root(2), 3);
        for x in &ball {
            let oracle = bfs_distances(x, 6);
            for y in &ball {
                assert_eq!(x.distance(y).unwrap(), oracle[y]);
            }
        }
    }

    #[test]
    fn confluent_root_examples() {
        let o = TreeVertex::root(2);
        let x = v(2, 2, &[1, 1]);
        // Root on the geodesic: confluent is the shallower point.
        assert_eq!(
            confluent_root(&TreePoint::Vertex(o.clone()), &TreePoint::Vertex(x.clone()))
                .unwrap(),
            o
        );
        // x equal to y: the point itself.
        assert_eq!(
            confluent_root(&TreePoint::Vertex(x.clone()), &TreePoint::Vertex(x.clone()))
                .unwrap(),
            x
        );
        // Distinct rises: ancestor of the root at the smaller rise.
        let high = v(2, -3, &[]);
        let side = v(2, 0, &[1]); // rises 1 then falls; peak at (-1, empty)
        assert_eq!(
            confluent_root(&TreePoint::Vertex(high), &TreePoint::Vertex(side)).unwrap(),
            v(2, -1, &[])
        );
    }

    #[test]
    fn confluent_root_matches_path_intersection() {
        // The confluent is the last common vertex of the two root geodesics.
        let ball = tree_ball(&TreeVertex::root(2), 4);
        for x in &ball {
            let px = root_path(x);
            let sx: HashSet<_> = px.iter().cloned().collect();
            for y in &ball {
                let py = root_path(y);
                let mut last_common = None;
                for t in &py {
                    if sx.contains(t) {
                        last_common = Some(t.clone());
                    } else if last_common.is_some() {
                        break;
                    }
                }
                let expect = last_common.expect("paths share the root");
                let got = confluent_root(
                    &TreePoint::Vertex(x.clone()),
                    &TreePoint::Vertex(y.clone()),
                )
                .unwrap();
                assert_eq!(got, expect, "x={x} y={y}");
            }
        }
    }

    #[test]
    fn confluent_root_with_ends() {
        // End through the zero-ray below (1, [1]).
        let base = v(2, 1, &[1]);
        let xi = TreeEnd::lower_through(&base);
        let o = TreeVertex::root(2);
        assert_eq!(
            confluent_root(&TreePoint::Vertex(o.clone()), &TreePoint::End(xi.clone()))
                .unwrap(),
            o
        );
        // A vertex below the same ray: confluent is that vertex.
        let on_ray = base.successor(0).unwrap().successor(0).unwrap();
        assert_eq!(
            confluent_root(&TreePoint::Vertex(on_ray.clone()), &TreePoint::End(xi.clone()))
                .unwrap(),
            on_ray
        );
        // Omega against a vertex: ancestor of the root at the rise.
        let deep = v(2, -2, &[]);
        assert_eq!(
            confluent_root(
                &TreePoint::End(TreeEnd::Omega),
                &TreePoint::Vertex(deep.clone())
            )
            .unwrap(),
            deep
        );
        // Equal ends are degenerate.
        assert!(confluent_root(&TreePoint::End(xi.clone()), &TreePoint::End(xi)).is_err());
        assert!(confluent_root(
            &TreePoint::End(TreeEnd::Omega),
            &TreePoint::End(TreeEnd::Omega)
        )
        .is_err());
    }

    #[test]
    fn end_canonicalization_strips_trailing_zeros() {
        let deep = v(2, 4, &[1, 0, 0, 0]);
        let canon = TreeEnd::lower_through(&deep);
        assert_eq!(canon, TreeEnd::Lower(v(2, 1, &[1])));
        // Spine bases collapse to the root.
        assert_eq!(
            TreeEnd::lower_through(&v(2, -3, &[])),
            TreeEnd::Lower(TreeVertex::root(2))
        );
        assert_eq!(
            TreeEnd::lower_through(&v(2, 5, &[])),
            TreeEnd::Lower(TreeVertex::root(2))
        );
    }

    #[test]
    fn deepening_the_base_preserves_confluents() {
        let base = v(2, 2, &[1, 1]);
        let xi = TreeEnd::lower_through(&base);
        let probe = TreePoint::Vertex(v(2, 1, &[1]));
        let reference = confluent_root(&probe, &TreePoint::End(xi.clone())).unwrap();
        for depth in 1..6 {
            let rep = xi.representative(depth, 2);
            let again = confluent_root(&probe, &TreePoint::End(TreeEnd::lower_through(&rep)))
                .unwrap();
            assert_eq!(again, reference);
        }
    }

    #[test]
    fn theta_examples_and_ultrametric() {
        let o = TreePoint::Vertex(TreeVertex::root(2));
        assert_eq!(end_metric_theta(&o, &o, ThetaVariant::Decaying).unwrap(), 0.0);
        let y = TreePoint::Vertex(v(2, 1, &[1]));
        // Confluent of o and (1,[1]) is o itself: both variants give 1.
        assert_eq!(end_metric_theta(&o, &y, ThetaVariant::Decaying).unwrap(), 1.0);
        assert_eq!(end_metric_theta(&o, &y, ThetaVariant::Printed).unwrap(), 1.0);
        // Ultrametric inequality for the decaying variant on a small ball.
        let pts: Vec<TreePoint> = tree_ball(&TreeVertex::root(2), 3)
            .into_iter()
            .map(TreePoint::Vertex)
            .collect();
        for a in &pts {
            for b in &pts {
                for c in &pts {
                    let ab = end_metric_theta(a, b, ThetaVariant::Decaying).unwrap();
                    let bc = end_metric_theta(b, c, ThetaVariant::Decaying).unwrap();
                    let ac = end_metric_theta(a, c, ThetaVariant::Decaying).unwrap();
                    assert!(ac <= ab.max(bc) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn theta_separates_points_and_decays_along_rays() {
        // Along the zero-ray below (1,[1]) the decaying variant goes to 0
        // against the end, while the printed variant blows up between
        // distinct deep vertices.
        let base = v(2, 1, &[1]);
        let xi = TreePoint::End(TreeEnd::lower_through(&base));
        let mut prev = f64::INFINITY;
        let mut cur = base.clone();
        for _ in 0..6 {
            cur = cur.successor(0).unwrap();
            let t = end_metric_theta(&TreePoint::Vertex(cur.clone()), &xi, ThetaVariant::Decaying)
                .unwrap();
            assert!(t < prev);
            prev = t;
        }
        // Their confluent is (4, [1,0,0,0]) at distance 4 from the root.
        let deep_a = v(2, 5, &[1, 0, 0, 0, 1]);
        let deep_b = v(2, 5, &[1, 0, 0, 0, 0]);
        let printed = end_metric_theta(
            &TreePoint::Vertex(deep_a.clone()),
            &TreePoint::Vertex(deep_b.clone()),
            ThetaVariant::Printed,
        )
        .unwrap();
        assert_eq!(printed, 2f64.powi(4));
        let decaying = end_metric_theta(
            &TreePoint::Vertex(deep_a),
            &TreePoint::Vertex(deep_b),
            ThetaVariant::Decaying,
        )
        .unwrap();
        assert_eq!(decaying, 2f64.powi(-4));
    }

    #[test]
    fn text_roundtrip_and_rejection() {
        for x in tree_ball(&TreeVertex::root(3), 4) {
            let s = x.to_string();
            let back: TreeVertex = s.parse().unwrap();
            assert_eq!(back, x);
        }
        assert_eq!(v(2, 2, &[1, 0]).to_string(), "q=2;h=2;w=10");
        assert!("q=2;h=1;w=01".parse::<TreeVertex>().is_err());
        assert!("q=2;h=1;w=2".parse::<TreeVertex>().is_err());
        assert!("q=2;h=x;w=".parse::<TreeVertex>().is_err());
        assert!("h=1;w=".parse::<TreeVertex>().is_err());
    }

    #[test]
    fn end_text_roundtrip() {
        let xi = TreeEnd::lower_through(&v(2, 2, &[1, 1]));
        let s = xi.to_string();
        assert_eq!(s, "end:q=2;h=2;w=11");
        assert_eq!(s.parse::<TreeEnd>().unwrap(), xi);
        assert_eq!("omega".parse::<TreeEnd>().unwrap(), TreeEnd::Omega);
        // Non-canonical bases are rejected.
        assert!("end:q=2;h=3;w=110".parse::<TreeEnd>().is_err());
        assert!("end:q=2;h=-2;w=".parse::<TreeEnd>().is_err());
    }
}
