//! The Diestel-Leader graph `DL(q, r)` and its lamplighter description.
//!
//! Vertices are pairs `x1 x2` with `x1` in `T_q`, `x2` in `T_r` and
//! `hor(x1) + hor(x2) = 0`. Neighbours move the pair in opposite vertical
//! directions: an "up" move takes a successor in the first tree and the
//! predecessor in the second (`q` choices), a "down" move does the reverse
//! (`r` choices), so the graph is `(q + r)`-regular.
//!
//! The relative position of an ordered pair of vertices is the quadruple of
//! confluent distances in the two trees; it determines the pair up to
//! automorphisms fixing the first vertex, carries the graph distance in
//! closed form, and is the argument of every Green kernel formula in this
//! crate.
//!
//! For `q = r` the graph is a Cayley graph of the lamplighter group
//! `Z_q wr Z`: a group element is a finitely supported lamp configuration
//! `eta: Z -> Z_q` plus a lamplighter position `k`. [`LampConfig`] realizes
//! that correspondence concretely.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DlmlError, Result};
use crate::tree::TreeVertex;

/// Vertex `x1 x2` of `DL(q, r)`.
///
/// Invariant: `first.level() + second.level() == 0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DLVertex {
    first: TreeVertex,
    second: TreeVertex,
}

impl DLVertex {
    /// Pairs two tree vertices, checking the level constraint.
    pub fn new(first: TreeVertex, second: TreeVertex) -> Result<Self> {
        if first.level() + second.level() != 0 {
            return Err(DlmlError::InvalidInput(format!(
                "levels must cancel: hor(x1) = {}, hor(x2) = {}",
                first.level(),
                second.level()
            )));
        }
        Ok(DLVertex { first, second })
    }

    /// Origin `o1 o2`.
    pub fn origin(q: u8, r: u8) -> Self {
        DLVertex {
            first: TreeVertex::root(q),
            second: TreeVertex::root(r),
        }
    }

    /// First (tree `T_q`) component.
    pub fn first(&self) -> &TreeVertex {
        &self.first
    }

    /// Second (tree `T_r`) component.
    pub fn second(&self) -> &TreeVertex {
        &self.second
    }

    /// Branching pair `(q, r)`.
    pub fn branching(&self) -> (u8, u8) {
        (self.first.branching(), self.second.branching())
    }

    /// Height of the vertex: `hor(x1)`.
    pub fn level(&self) -> i64 {
        self.first.level()
    }

    /// All `q + r` neighbours: the `q` up moves (successor in the first
    /// tree, label order) followed by the `r` down moves (successor in the
    /// second tree, label order).
    pub fn neighbours(&self) -> Vec<DLVertex> {
        let (q, r) = self.branching();
        let mut out = Vec::with_capacity(q as usize + r as usize);
        let down1 = self.second.predecessor();
        for l in 0..q {
            out.push(DLVertex {
                first: self.first.successor(l).expect("label in range"),
                second: down1.clone(),
            });
        }
        let down0 = self.first.predecessor();
        for l in 0..r {
            out.push(DLVertex {
                first: down0.clone(),
                second: self.second.successor(l).expect("label in range"),
            });
        }
        out
    }

    /// Checks that `other` lives on the same graph.
    fn check_same_graph(&self, other: &DLVertex) -> Result<()> {
        if self.branching() != other.branching() {
            return Err(DlmlError::Incompatible(format!(
                "different graphs: DL{:?} vs DL{:?}",
                self.branching(),
                other.branching()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for DLVertex {
    /// Text form `<first>|<second>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.first, self.second)
    }
}

impl FromStr for DLVertex {
    type Err = DlmlError;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('|')
            .ok_or_else(|| DlmlError::Parse(format!("expected <tree>|<tree>, got {s:?}")))?;
        DLVertex::new(a.parse()?, b.parse()?)
    }
}

/// Relative position of an ordered vertex pair: confluent distances
/// `(up1, dn1)` in the first tree and `(up2, dn2)` in the second.
///
/// Invariant: `up1 + up2 == dn1 + dn2`; this common value is the span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RelPos {
    /// Distance from `x1` up to the first-tree confluent.
    pub up1: u64,
    /// Distance from the first-tree confluent down to `y1`.
    pub dn1: u64,
    /// Distance from `x2` up to the second-tree confluent.
    pub up2: u64,
    /// Distance from the second-tree confluent down to `y2`.
    pub dn2: u64,
}

/// The four extreme relative positions at a given span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaseCase {
    /// `up1 = dn1 = 0`: both confluent distances live in the second tree.
    I,
    /// `up1 = dn2 = span`, `dn1 = up2 = 0`.
    II,
    /// `dn1 = up2 = span`, `up1 = dn2 = 0`.
    III,
    /// `up2 = dn2 = 0`: both confluent distances live in the first tree.
    IV,
}

impl RelPos {
    /// Builds a relative position, checking the span identity.
    pub fn new(up1: u64, dn1: u64, up2: u64, dn2: u64) -> Result<Self> {
        if up1 + up2 != dn1 + dn2 {
            return Err(DlmlError::InvalidInput(format!(
                "inconsistent relative position: up1 + up2 = {} but dn1 + dn2 = {}",
                up1 + up2,
                dn1 + dn2
            )));
        }
        Ok(RelPos { up1, dn1, up2, dn2 })
    }

    /// Common value `up1 + up2 = dn1 + dn2`.
    pub fn span(&self) -> u64 {
        self.up1 + self.up2
    }

    /// The extreme case realized at this position, if any.
    ///
    /// At span zero (coincident vertices) all four degenerate to the same
    /// point and `None` is returned.
    pub fn base_case(&self) -> Option<BaseCase> {
        let s = self.span();
        if s == 0 {
            return None;
        }
        match (self.up1, self.dn1, self.up2, self.dn2) {
            (0, 0, a, b) if a == s && b == s => Some(BaseCase::I),
            (a, 0, 0, b) if a == s && b == s => Some(BaseCase::II),
            (0, a, b, 0) if a == s && b == s => Some(BaseCase::III),
            (a, b, 0, 0) if a == s && b == s => Some(BaseCase::IV),
            _ => None,
        }
    }

    /// The extreme case of the given span.
    pub fn of_case(case: BaseCase, span: u64) -> Self {
        match case {
            BaseCase::I => RelPos {
                up1: 0,
                dn1: 0,
                up2: span,
                dn2: span,
            },
            BaseCase::II => RelPos {
                up1: span,
                dn1: 0,
                up2: 0,
                dn2: span,
            },
            BaseCase::III => RelPos {
                up1: 0,
                dn1: span,
                up2: span,
                dn2: 0,
            },
            BaseCase::IV => RelPos {
                up1: span,
                dn1: span,
                up2: 0,
                dn2: 0,
            },
        }
    }

    /// Relative position of the reversed pair.
    pub fn reversed(&self) -> Self {
        RelPos {
            up1: self.dn1,
            dn1: self.up1,
            up2: self.dn2,
            dn2: self.up2,
        }
    }

    /// Graph distance of any pair in this relative position:
    /// `d1 + d2 - |hor difference|`.
    pub fn distance(&self) -> u64 {
        let d1 = self.up1 + self.dn1;
        let d2 = self.up2 + self.dn2;
        let dh = (self.dn1 as i64 - self.up1 as i64).unsigned_abs();
        d1 + d2 - dh
    }

    /// Height change `hor(y1) - hor(x1)` of any pair in this position.
    pub fn level_change(&self) -> i64 {
        self.dn1 as i64 - self.up1 as i64
    }

    /// A canonical vertex `x` with `rel_position(x, origin) = self`.
    ///
    /// Each component ascends from the origin's confluent along the zero
    /// ray and branches off with the letter 1, so the confluent sits
    /// exactly where the position prescribes.
    pub fn witness(&self, q: u8, r: u8) -> DLVertex {
        let component = |branching: u8, up: u64, dn: u64| -> TreeVertex {
            let level = up as i64 - dn as i64;
            let word = if up == 0 {
                Vec::new()
            } else {
                let mut w = vec![0u8; up as usize];
                w[0] = 1;
                w
            };
            TreeVertex::new(branching, level, word).expect("witness word is canonical")
        };
        DLVertex {
            first: component(q, self.up1, self.dn1),
            second: component(r, self.up2, self.dn2),
        }
    }
}

/// Relative position of the ordered pair `(x, y)`.
pub fn rel_position(x: &DLVertex, y: &DLVertex) -> Result<RelPos> {
    x.check_same_graph(y)?;
    let (_, up1, dn1) = x.first.confluent_omega(&y.first)?;
    let (_, up2, dn2) = x.second.confluent_omega(&y.second)?;
    RelPos::new(up1, dn1, up2, dn2)
}

/// Graph distance in `DL(q, r)`.
pub fn dl_distance(x: &DLVertex, y: &DLVertex) -> Result<u64> {
    Ok(rel_position(x, y)?.distance())
}

/// Enumerates the ball of the given radius around `center` in breadth-first
/// order (so distances are nondecreasing along the result).
pub fn dl_ball(center: &DLVertex, radius: u64) -> Vec<DLVertex> {
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

/// Breadth-first distances from `start` out to the given radius. This is
/// the independent oracle for [`dl_distance`].
pub fn bfs_distances(start: &DLVertex, radius: u64) -> HashMap<DLVertex, u64> {
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

/// Lamplighter group element: finitely many lamps `site -> state` (states
/// nonzero) and the lamplighter position `k`.
///
/// JSON form: `{"k": <int>, "lamps": [[site, state], ...]}` with sites
/// strictly ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LampConfig {
    position: i64,
    lamps: std::collections::BTreeMap<i64, u8>,
}

impl LampConfig {
    /// Identity element: all lamps off, position `0`.
    pub fn identity() -> Self {
        LampConfig {
            position: 0,
            lamps: Default::default(),
        }
    }

    /// Builds a configuration from `(site, state)` pairs; states must be
    /// nonzero and sites distinct.
    pub fn new(position: i64, lamps: impl IntoIterator<Item = (i64, u8)>) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (site, state) in lamps {
            if state == 0 {
                return Err(DlmlError::InvalidInput(format!(
                    "lamp at site {site} has state 0; off lamps are omitted"
                )));
            }
            if map.insert(site, state).is_some() {
                return Err(DlmlError::InvalidInput(format!(
                    "duplicate lamp site {site}"
                )));
            }
        }
        Ok(LampConfig {
            position,
            lamps: map,
        })
    }

    /// Lamplighter position.
    pub fn position(&self) -> i64 {
        self.position
    }

    /// Lamp states, ascending by site.
    pub fn lamps(&self) -> impl Iterator<Item = (i64, u8)> + '_ {
        self.lamps.iter().map(|(&s, &v)| (s, v))
    }

    /// State of one lamp (0 when off).
    pub fn lamp(&self, site: i64) -> u8 {
        self.lamps.get(&site).copied().unwrap_or(0)
    }

    /// Right multiplication by the generator that adds `l` to the lamp at
    /// the arrival position and steps the lamplighter by `dir`.
    ///
    /// `dir = +1` touches site `k + 1` and moves to `k + 1`;
    /// `dir = -1` touches site `k` and moves to `k - 1`. Addition is modulo
    /// `q`. The `2 q` generators (all `l` in `0..q`, both directions)
    /// correspond exactly to the `q + r = 2 q` graph neighbours.
    pub fn right_multiply(&self, l: u8, dir: i8, q: u8) -> Result<LampConfig> {
        if l >= q {
            return Err(DlmlError::InvalidInput(format!(
                "lamp increment {l} out of range for q = {q}"
            )));
        }
        let (site, new_pos) = match dir {
            1 => (self.position + 1, self.position + 1),
            -1 => (self.position, self.position - 1),
            _ => {
                return Err(DlmlError::InvalidInput(format!(
                    "generator direction must be +1 or -1, got {dir}"
                )))
            }
        };
        let mut lamps = self.lamps.clone();
        let state = (self.lamp(site) + l) % q;
        if state == 0 {
            lamps.remove(&site);
        } else {
            lamps.insert(site, state);
        }
        Ok(LampConfig {
            position: new_pos,
            lamps,
        })
    }

    /// Encodes the group element as a vertex of `DL(q, q)`.
    ///
    /// The first tree stores the lamps at sites `<= k` (the letter entering
    /// level `j` is the state at site `j`); the second tree stores the lamps
    /// at sites `>= k + 1` (the letter entering level `i` is the state at
    /// site `1 - i`). Lamp states must be `< q`.
    pub fn encode(&self, q: u8) -> Result<DLVertex> {
        if let Some((site, state)) = self.lamps.iter().find(|&(_, &v)| v >= q) {
            return Err(DlmlError::InvalidInput(format!(
                "lamp state {state} at site {site} out of range for q = {q}"
            )));
        }
        let k = self.position;
        // First component: sites <= k, shallowest nonzero first.
        let word1 = match self.lamps.iter().filter(|&(&s, _)| s <= k).next() {
            None => Vec::new(),
            Some((&lo, _)) => (lo..=k).map(|s| self.lamp(s)).collect(),
        };
        // Second component: sites >= k + 1, deepest letter is site k + 1,
        // so the word runs from the maximal nonzero site downwards.
        let word2 = match self.lamps.iter().filter(|&(&s, _)| s >= k + 1).next_back() {
            None => Vec::new(),
            Some((&hi, _)) => (k + 1..=hi).rev().map(|s| self.lamp(s)).collect(),
        };
        let first = TreeVertex::new(q, k, word1)?;
        let second = TreeVertex::new(q, -k, word2)?;
        DLVertex::new(first, second)
    }

    /// Decodes a vertex of `DL(q, q)` back into a group element.
    pub fn decode(v: &DLVertex) -> Result<LampConfig> {
        let (q, r) = v.branching();
        if q != r {
            return Err(DlmlError::Domain(format!(
                "lamplighter structure needs q = r, got DL({q}, {r})"
            )));
        }
        let k = v.level();
        let mut lamps = std::collections::BTreeMap::new();
        // First component: deepest letter is site k.
        let w1 = v.first().word();
        for (t, &state) in w1.iter().rev().enumerate() {
            if state != 0 {
                lamps.insert(k - t as i64, state);
            }
        }
        // Second component: deepest letter is site k + 1.
        let w2 = v.second().word();
        for (t, &state) in w2.iter().rev().enumerate() {
            if state != 0 {
                lamps.insert(k + 1 + t as i64, state);
            }
        }
        Ok(LampConfig {
            position: k,
            lamps,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct LampConfigWire {
    k: i64,
    lamps: Vec<(i64, u8)>,
}

impl Serialize for LampConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LampConfigWire {
            k: self.position,
            lamps: self.lamps().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LampConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = LampConfigWire::deserialize(d)?;
        if !wire.lamps.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(serde::de::Error::custom(
                "lamp sites must be strictly ascending",
            ));
        }
        LampConfig::new(wire.k, wire.lamps).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn tv(q: u8, h: i64, w: &[u8]) -> TreeVertex {
        TreeVertex::new(q, h, w.to_vec()).unwrap()
    }

    #[test]
    fn vertex_construction_enforces_level_sum() {
        assert!(DLVertex::new(tv(2, 1, &[1]), tv(3, -1, &[])).is_ok());
        assert!(DLVertex::new(tv(2, 1, &[1]), tv(3, 0, &[])).is_err());
    }

    #[test]
    fn degree_and_level_alternation() {
        for (q, r) in [(2u8, 2u8), (2, 3), (3, 4)] {
            let o = DLVertex::origin(q, r);
            let n = o.neighbours();
            assert_eq!(n.len(), (q + r) as usize);
            let distinct: HashSet<_> = n.iter().cloned().collect();
            assert_eq!(distinct.len(), n.len());
            for v in &n {
                assert_eq!(v.first().level() + v.second().level(), 0);
                assert_eq!((v.level() - o.level()).abs(), 1);
            }
        }
    }

    #[test]
    fn adjacency_is_symmetric() {
        let o = DLVertex::origin(2, 3);
        for x in dl_ball(&o, 3) {
            for y in x.neighbours() {
                assert!(
                    y.neighbours().contains(&x),
                    "edge {x} -> {y} not symmetric"
                );
            }
        }
    }

    #[test]
    fn rel_position_along_an_explicit_path() {
        // Two up moves then three down moves from the origin of DL(2, 3).
        let o = DLVertex::origin(2, 3);
        let mut v = o.clone();
        v = v.neighbours()[1].clone(); // up, label 1
        v = v.neighbours()[0].clone(); // up, label 0
        v = v.neighbours()[2].clone(); // down, label 0
        v = v.neighbours()[2].clone(); // down, label 0
        v = v.neighbours()[3].clone(); // down, label 1
        let rel = rel_position(&o, &v).unwrap();
        assert_eq!(rel.up1 + rel.up2, rel.dn1 + rel.dn2);
        assert_eq!(rel.level_change(), -1);
        assert_eq!(v.level(), -1);
    }

    #[test]
    fn rel_position_reverses() {
        let o = DLVertex::origin(2, 3);
        for y in dl_ball(&o, 4) {
            let fwd = rel_position(&o, &y).unwrap();
            let back = rel_position(&y, &o).unwrap();
            assert_eq!(back, fwd.reversed());
            assert_eq!(fwd.span(), back.span());
        }
    }

    #[test]
    fn distance_matches_bfs_pairwise() {
        let o = DLVertex::origin(2, 3);
        let ball = dl_ball(&o, 3);
        for x in &ball {
            let oracle = bfs_distances(x, 6);
            for y in &ball {
                let d = dl_distance(x, y).unwrap();
                assert_eq!(d, oracle[y], "x={x} y={y}");
            }
        }
    }

    #[test]
    fn span_brackets_distance() {
        let o = DLVertex::origin(2, 2);
        for y in dl_ball(&o, 5) {
            let rel = rel_position(&o, &y).unwrap();
            let d = rel.distance();
            assert!(rel.span() <= d && d <= 2 * rel.span() || d == 0);
        }
    }

    #[test]
    fn base_cases_roundtrip() {
        for case in [BaseCase::I, BaseCase::II, BaseCase::III, BaseCase::IV] {
            let rel = RelPos::of_case(case, 5);
            assert_eq!(rel.span(), 5);
            assert_eq!(rel.base_case(), Some(case));
        }
        assert_eq!(RelPos::new(1, 1, 1, 1).unwrap().base_case(), None);
        assert!(RelPos::new(1, 0, 0, 0).is_err());
    }

    #[test]
    fn vertex_text_roundtrip() {
        let o = DLVertex::origin(2, 3);
        for v in dl_ball(&o, 3) {
            let s = v.to_string();
            assert_eq!(s.parse::<DLVertex>().unwrap(), v);
        }
        assert!("q=2;h=1;w=1|q=3;h=0;w=".parse::<DLVertex>().is_err());
    }

    #[test]
    fn identity_encodes_to_origin() {
        let id = LampConfig::identity();
        assert_eq!(id.encode(2).unwrap(), DLVertex::origin(2, 2));
        assert_eq!(
            LampConfig::decode(&DLVertex::origin(3, 3)).unwrap(),
            LampConfig::identity()
        );
    }

    #[test]
    fn lamp_roundtrip_exhaustive() {
        // All configurations supported on sites -2..=2 with q = 2, all
        // positions -2..=2.
        let sites = [-2i64, -1, 0, 1, 2];
        for mask in 0u32..32 {
            let lamps: Vec<(i64, u8)> = sites
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &s)| (s, 1u8))
                .collect();
            for k in -2i64..=2 {
                let cfg = LampConfig::new(k, lamps.clone()).unwrap();
                let v = cfg.encode(2).unwrap();
                assert_eq!(v.first().level(), k);
                assert_eq!(LampConfig::decode(&v).unwrap(), cfg);
            }
        }
    }

    #[test]
    fn lamp_roundtrip_q3() {
        let cfg = LampConfig::new(1, [(-1, 2), (1, 1), (3, 2)]).unwrap();
        let v = cfg.encode(3).unwrap();
        assert_eq!(LampConfig::decode(&v).unwrap(), cfg);
        // State out of range for q = 2.
        assert!(cfg.encode(2).is_err());
    }

    #[test]
    fn generators_realize_the_neighbour_set() {
        let q = 2u8;
        let cfg = LampConfig::new(0, [(-1, 1), (1, 1)]).unwrap();
        let v = cfg.encode(q).unwrap();
        let expect: HashSet<_> = v.neighbours().into_iter().collect();
        let mut got = HashSet::new();
        for dir in [1i8, -1] {
            for l in 0..q {
                let w = cfg.right_multiply(l, dir, q).unwrap().encode(q).unwrap();
                got.insert(w);
            }
        }
        assert_eq!(got, expect);
    }

    #[test]
    fn generators_walk_matches_graph_walk() {
        // A short word in the generators, checked to be a path in DL(2, 2).
        let q = 2u8;
        let mut cfg = LampConfig::identity();
        let mut v = cfg.encode(q).unwrap();
        for &(l, dir) in &[(1u8, 1i8), (0, 1), (1, -1), (1, -1), (0, -1), (1, 1)] {
            let next = cfg.right_multiply(l, dir, q).unwrap();
            let nv = next.encode(q).unwrap();
            assert!(v.neighbours().contains(&nv));
            cfg = next;
            v = nv;
        }
    }

    #[test]
    fn lamp_json_roundtrip() {
        let cfg = LampConfig::new(-1, [(-3, 1), (0, 1), (2, 1)]).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(json, r#"{"k":-1,"lamps":[[-3,1],[0,1],[2,1]]}"#);
        let back: LampConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        // Zero states and unsorted sites are rejected.
        assert!(serde_json::from_str::<LampConfig>(r#"{"k":0,"lamps":[[1,0]]}"#).is_err());
        assert!(
            serde_json::from_str::<LampConfig>(r#"{"k":0,"lamps":[[2,1],[1,1]]}"#).is_err()
        );
    }

    #[test]
    fn ball_growth_is_graph_regular() {
        // |B(R)| for a vertex-transitive 4-regular graph does not depend on
        // the center.
        let o = DLVertex::origin(2, 2);
        let other: DLVertex = "q=2;h=2;w=11|q=2;h=-2;w=".parse().unwrap();
        for radius in 0..4 {
            assert_eq!(
                dl_ball(&o, radius).len(),
                dl_ball(&other, radius).len()
            );
        }
    }

    #[test]
    fn witness_realizes_every_relative_position() {
        let o = DLVertex::origin(2, 3);
        for span in 0..=4u64 {
            for up1 in 0..=span {
                for dn1 in 0..=span {
                    let rel =
                        RelPos::new(up1, dn1, span - up1, span - dn1).unwrap();
                    let x = rel.witness(2, 3);
                    assert_eq!(rel_position(&x, &o).unwrap(), rel);
                }
            }
        }
    }
}
