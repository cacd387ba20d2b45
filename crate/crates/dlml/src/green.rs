//! Numerical Green kernels: exact restricted Green functions on balls,
//! Monte Carlo visit counting, resolvents, and the stop-time distribution
//! behind the boundary constants.
//!
//! The restricted kernel `G^D(x, y)` counts the expected visits to `y` of
//! the walk from `x` killed on leaving `D`; it increases to `G(x, y)` as
//! `D` grows. Balls are stored with packed integer keys so that domains of
//! ten million states fit comfortably; the float solver runs conjugate
//! gradients on a symmetrized system (the height weight `psi` makes every
//! edge weight equal to `sqrt(alpha (1 - alpha) / (q r))`, so the
//! symmetrized operator is that constant times the adjacency matrix of the
//! ball). The rational mode performs dense exact elimination on small
//! domains.
//!
//! Monte Carlo comes in two flavours: a direct sampler following the walk
//! on explicit vertices, and a class sampler following only the relative
//! position of the walker against its starting point, which is itself a
//! Markov chain on four counters. The class sampler aggregates all targets
//! sharing a relative position and is the engine behind the statistical
//! acceptance checks. Both samplers split work into a fixed number of
//! chunks with per-chunk deterministic generator streams, so results are
//! bit-reproducible for a fixed seed regardless of thread count.

use std::collections::HashMap;

use num::rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algebra::{big_ratio, rational_to_f64, solve_dense_rational};
use crate::closed_form::asym_green_ln;
use crate::dl::{dl_distance, rel_position, DLVertex, RelPos};
use crate::error::{DlmlError, Result};
use crate::tree::TreeVertex;
use crate::walk::{up_threshold, WalkParams};

/// Hard cap on enumerated ball states.
pub const MAX_BALL_STATES: usize = 16_000_000;
/// Cap for the dense exact solver.
pub const RATIONAL_MAX_STATES: usize = 400;
/// Target sup-norm defect of the float ball solver.
pub const FLOAT_RESIDUAL_TOL: f64 = 1e-12;
/// Fixed number of Monte Carlo chunks (one generator stream each).
const MC_CHUNKS: u64 = 512;

/// How a Green value was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GreenMethod {
    BallExact,
    BallRational,
    MonteCarlo,
    MonteCarloClass,
    Resolvent,
    Asymptotic,
}

impl GreenMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            GreenMethod::BallExact => "ball_exact",
            GreenMethod::BallRational => "ball_exact_rational",
            GreenMethod::MonteCarlo => "monte_carlo",
            GreenMethod::MonteCarloClass => "monte_carlo_class",
            GreenMethod::Resolvent => "resolvent",
            GreenMethod::Asymptotic => "asym",
        }
    }
}

impl std::fmt::Display for GreenMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One Green kernel estimate with its provenance and accuracy metadata.
///
/// `error_bound` is the solver defect for ball values (0 for exact
/// rational ones) and a 95% confidence half-width for Monte Carlo values.
/// `r_or_n` carries the ball radius or the sample count.
#[derive(Clone, Debug)]
pub struct GreenEstimate {
    pub value: f64,
    pub exact: Option<BigRational>,
    pub method: GreenMethod,
    pub error_bound: f64,
    pub r_or_n: u64,
    pub t_max: Option<u64>,
    pub seed: Option<u64>,
    pub truncated_fraction: Option<f64>,
}

/// Arithmetic mode of the ball solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BallMode {
    Float,
    Rational,
}

// ---------------------------------------------------------------------------
// Packed vertex keys.
//
// Inside a ball every component word is short, so a vertex packs into one
// u128: the first-tree level (offset to stay positive), both word lengths,
// and both words as base-2^bits integers with the deepest letter in the
// least significant position. Pushing and popping letters are shifts, and
// the no-leading-zero normalization is preserved because a zero letter
// pushed onto an empty word is absorbed (the vertex stays on its reference
// ray), exactly as in `TreeVertex`.
// ---------------------------------------------------------------------------

const LEVEL_OFFSET: i64 = 1 << 23;
const W1_SHIFT: u32 = 0;
const W2_SHIFT: u32 = 44;
const LEN1_SHIFT: u32 = 88;
const LEN2_SHIFT: u32 = 94;
const LEVEL_SHIFT: u32 = 100;
const WORD_BITS: u32 = 44;

#[derive(Clone, Copy)]
struct PackedVertex {
    level: i64, // hor of the first component; the second is its negative
    len1: u32,
    w1: u64,
    len2: u32,
    w2: u64,
}

#[derive(Clone, Copy)]
struct BallGeometry {
    q: u8,
    r: u8,
    bits1: u32,
    bits2: u32,
}

fn letter_bits(branching: u8) -> u32 {
    (64 - ((branching - 1) as u64).leading_zeros()).max(1)
}

impl PackedVertex {
    fn pack(&self) -> u128 {
        debug_assert!(self.w1 < (1u64 << WORD_BITS) && self.w2 < (1u64 << WORD_BITS));
        ((self.level + LEVEL_OFFSET) as u128) << LEVEL_SHIFT
            | (self.len2 as u128) << LEN2_SHIFT
            | (self.len1 as u128) << LEN1_SHIFT
            | (self.w2 as u128) << W2_SHIFT
            | (self.w1 as u128) << W1_SHIFT
    }

    fn level_of_key(key: u128) -> i64 {
        (key >> LEVEL_SHIFT) as i64 - LEVEL_OFFSET
    }

    fn unpack(key: u128) -> PackedVertex {
        PackedVertex {
            level: Self::level_of_key(key),
            len1: ((key >> LEN1_SHIFT) & 0x3f) as u32,
            w1: ((key >> W1_SHIFT) & ((1u128 << WORD_BITS) - 1)) as u64,
            len2: ((key >> LEN2_SHIFT) & 0x3f) as u32,
            w2: ((key >> W2_SHIFT) & ((1u128 << WORD_BITS) - 1)) as u64,
        }
    }

    fn from_vertex(v: &DLVertex, geo: &BallGeometry) -> PackedVertex {
        let encode = |word: &[u8], bits: u32| -> u64 {
            let mut w = 0u64;
            for &l in word {
                w = (w << bits) | l as u64;
            }
            w
        };
        PackedVertex {
            level: v.level(),
            len1: v.first().word().len() as u32,
            w1: encode(v.first().word(), geo.bits1),
            len2: v.second().word().len() as u32,
            w2: encode(v.second().word(), geo.bits2),
        }
    }

    fn to_vertex(self, geo: &BallGeometry) -> DLVertex {
        let decode = |w: u64, len: u32, bits: u32| -> Vec<u8> {
            let mask = (1u64 << bits) - 1;
            (0..len)
                .rev()
                .map(|i| ((w >> (bits * i)) & mask) as u8)
                .collect()
        };
        let first = TreeVertex::new(geo.q, self.level, decode(self.w1, self.len1, geo.bits1))
            .expect("packed word is canonical");
        let second = TreeVertex::new(geo.r, -self.level, decode(self.w2, self.len2, geo.bits2))
            .expect("packed word is canonical");
        DLVertex::new(first, second).expect("levels cancel by construction")
    }

    /// Neighbour move: indices `0..q` push that letter in the first tree
    /// and pop the second; indices `q..q+r` pop the first and push in the
    /// second. The ordering matches `DLVertex::neighbours`.
    fn apply(&self, mv: u32, geo: &BallGeometry) -> PackedVertex {
        let mut n = *self;
        if mv < geo.q as u32 {
            let l = mv as u64;
            if !(n.len1 == 0 && l == 0) {
                n.w1 = (n.w1 << geo.bits1) | l;
                n.len1 += 1;
            }
            if n.len2 > 0 {
                n.w2 >>= geo.bits2;
                n.len2 -= 1;
            }
            n.level += 1;
        } else {
            let l = (mv - geo.q as u32) as u64;
            if n.len1 > 0 {
                n.w1 >>= geo.bits1;
                n.len1 -= 1;
            }
            if !(n.len2 == 0 && l == 0) {
                n.w2 = (n.w2 << geo.bits2) | l;
                n.len2 += 1;
            }
            n.level -= 1;
        }
        n
    }
}

// ---------------------------------------------------------------------------
// Ball domains.
// ---------------------------------------------------------------------------

/// A ball in `DL(q, r)` with its adjacency structure, indexed in breadth-
/// first discovery order. The exterior is absorbing: adjacency entries
/// pointing outside hold the sentinel `u32::MAX`.
pub struct Ball {
    geo: BallGeometry,
    center: DLVertex,
    radius: u64,
    keys: Vec<u128>,
    index: HashMap<u128, u32>,
    adj: Vec<u32>,
}

const OUTSIDE: u32 = u32::MAX;

impl Ball {
    /// Enumerates the ball and its adjacency. Fails with a resource error
    /// when the state count would exceed `max_states` (the enumerated
    /// count so far is reported) and when the words near the boundary
    /// would overflow the packed representation.
    pub fn new(center: &DLVertex, radius: u64, max_states: usize) -> Result<Ball> {
        let (q, r) = center.branching();
        let geo = BallGeometry {
            q,
            r,
            bits1: letter_bits(q),
            bits2: letter_bits(r),
        };
        let max_len1 = center.first().word().len() as u64 + radius;
        let max_len2 = center.second().word().len() as u64 + radius;
        if max_len1 * geo.bits1 as u64 > WORD_BITS as u64
            || max_len2 * geo.bits2 as u64 > WORD_BITS as u64
            || max_len1.max(max_len2) > 63
        {
            return Err(DlmlError::Resource(format!(
                "radius {radius} around a word of length {} exceeds the packed key capacity",
                center.first().word().len().max(center.second().word().len())
            )));
        }

        let start = PackedVertex::from_vertex(center, &geo);
        let mut keys: Vec<u128> = vec![start.pack()];
        let mut index: HashMap<u128, u32> = HashMap::new();
        index.insert(start.pack(), 0);
        let mut frontier = vec![start];
        let moves = (q as u32 + r as u32) as u32;
        for _ in 0..radius {
            let mut next = Vec::new();
            for v in &frontier {
                for mv in 0..moves {
                    let n = v.apply(mv, &geo);
                    let key = n.pack();
                    if let std::collections::hash_map::Entry::Vacant(e) = index.entry(key) {
                        if keys.len() >= max_states {
                            return Err(DlmlError::Resource(format!(
                                "ball of radius {radius} exceeds {max_states} states \
                                 (more than {} enumerated)",
                                keys.len()
                            )));
                        }
                        e.insert(keys.len() as u32);
                        keys.push(key);
                        next.push(n);
                    }
                }
            }
            frontier = next;
        }

        let adj: Vec<u32> = keys
            .par_iter()
            .flat_map_iter(|&key| {
                let v = PackedVertex::unpack(key);
                (0..moves).map(move |mv| v.apply(mv, &geo).pack())
            })
            .map(|key| index.get(&key).copied().unwrap_or(OUTSIDE))
            .collect();

        Ok(Ball {
            geo,
            center: center.clone(),
            radius,
            keys,
            index,
            adj,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn center(&self) -> &DLVertex {
        &self.center
    }

    pub fn radius(&self) -> u64 {
        self.radius
    }

    pub fn branching(&self) -> (u8, u8) {
        (self.geo.q, self.geo.r)
    }

    /// Moves per vertex (the vertex degree `q + r`).
    fn stride(&self) -> usize {
        self.geo.q as usize + self.geo.r as usize
    }

    pub fn index_of(&self, v: &DLVertex) -> Option<usize> {
        if v.branching() != (self.geo.q, self.geo.r) {
            return None;
        }
        let p = PackedVertex::from_vertex(v, &self.geo);
        self.index.get(&p.pack()).map(|&i| i as usize)
    }

    pub fn contains(&self, v: &DLVertex) -> bool {
        self.index_of(v).is_some()
    }

    pub fn vertex(&self, i: usize) -> DLVertex {
        PackedVertex::unpack(self.keys[i]).to_vertex(&self.geo)
    }

    /// First-component height of the `i`-th vertex.
    pub fn level(&self, i: usize) -> i64 {
        PackedVertex::level_of_key(self.keys[i])
    }

    /// `out = (I - c * Adjacency) x`, the symmetrized operator.
    fn sym_matvec(&self, c: f64, x: &[f64], out: &mut [f64]) {
        let stride = self.stride();
        let adj = &self.adj;
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut acc = 0.0;
            for &j in &adj[i * stride..(i + 1) * stride] {
                if j != OUTSIDE {
                    acc += x[j as usize];
                }
            }
            *o = x[i] - c * acc;
        });
    }

    /// Sup-norm defect of `g = delta_y + P_D g` for the unsymmetrized
    /// transition probabilities.
    fn green_defect(&self, alpha: f64, g: &[f64], y_index: usize) -> f64 {
        let stride = self.stride();
        let q = self.geo.q as usize;
        let cu = alpha / q as f64;
        let cd = (1.0 - alpha) / self.geo.r as f64;
        let adj = &self.adj;
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let row = &adj[i * stride..(i + 1) * stride];
                let mut acc = 0.0;
                for &j in &row[..q] {
                    if j != OUTSIDE {
                        acc += cu * g[j as usize];
                    }
                }
                for &j in &row[q..] {
                    if j != OUTSIDE {
                        acc += cd * g[j as usize];
                    }
                }
                let delta = if i == y_index { 1.0 } else { 0.0 };
                (g[i] - delta - acc).abs()
            })
            .reduce(|| 0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Float solver.
// ---------------------------------------------------------------------------

/// One restricted Green column `G^D(., y)` on a ball, with the reversal
/// identity available to read the matching row `G^D(y, .)`.
pub struct BallColumn<'a> {
    ball: &'a Ball,
    y_level: i64,
    psi: f64,
    values: Vec<f64>,
    defect: f64,
    iterations: u64,
}

impl<'a> BallColumn<'a> {
    pub fn ball(&self) -> &Ball {
        self.ball
    }

    /// Sup-norm defect of the solved system.
    pub fn defect(&self) -> f64 {
        self.defect
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `G^D(x, y)` by ball index.
    pub fn from_index(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// `G^D(y, x)` by ball index, through the reversal identity
    /// `G(y, x) = psi(hor(x1) - hor(y1)) G(x, y)`, which restricted
    /// kernels inherit from the reversing measure.
    pub fn to_index(&self, i: usize) -> f64 {
        let dh = self.ball.level(i) - self.y_level;
        self.values[i] * self.psi.powi(dh as i32)
    }

    /// `G^D(x, y)` for a vertex.
    pub fn from_vertex(&self, x: &DLVertex) -> Result<f64> {
        let i = self
            .ball
            .index_of(x)
            .ok_or_else(|| DlmlError::Domain(format!("{x} lies outside the ball")))?;
        Ok(self.from_index(i))
    }

    /// `G^D(y, x)` for a vertex.
    pub fn to_vertex(&self, x: &DLVertex) -> Result<f64> {
        let i = self
            .ball
            .index_of(x)
            .ok_or_else(|| DlmlError::Domain(format!("{x} lies outside the ball")))?;
        Ok(self.to_index(i))
    }
}

/// Solves the whole restricted Green column `G^D(., y)` for a float upward
/// probability (used directly by the resolvent backend, where the tilted
/// probability is a quadratic irrational).
pub fn green_ball_column_f64<'a>(
    ball: &'a Ball,
    y: &DLVertex,
    alpha: f64,
) -> Result<BallColumn<'a>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DlmlError::InvalidInput(format!(
            "upward probability {alpha} outside (0, 1)"
        )));
    }
    let y_index = ball
        .index_of(y)
        .ok_or_else(|| DlmlError::Domain(format!("{y} lies outside the ball")))?;
    let n = ball.len();
    let (q, r) = ball.branching();
    let c = (alpha * (1.0 - alpha) / (q as f64 * r as f64)).sqrt();
    let psi = alpha * r as f64 / ((1.0 - alpha) * q as f64);
    let y_level = ball.level(y_index);

    // Conjugate gradients on (I - c A) ghat = e_y; the matrix is positive
    // definite because the ball's substochastic spectral radius is < 1.
    let mut ghat = vec![0.0f64; n];
    let mut res = vec![0.0f64; n];
    res[y_index] = 1.0;
    let mut dir = res.clone();
    let mut a_dir = vec![0.0f64; n];
    let mut rs = 1.0f64;
    let mut iterations = 0u64;
    let mut values = vec![0.0f64; n];
    let unscale = |ghat: &[f64], values: &mut [f64]| {
        let ln_psi = psi.ln();
        values
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, v)| {
                let dh = (y_level - PackedVertex::level_of_key(ball.keys[i])) as f64;
                *v = ghat[i] * (0.5 * dh * ln_psi).exp();
            });
    };

    const MAX_ITERS: u64 = 200_000;
    let defect = loop {
        // An exactly vanishing Krylov residual means no further progress is
        // possible, so it forces a final defect check.
        let stalled = rs < 1e-280;
        if iterations % 32 == 0 || stalled || iterations >= MAX_ITERS {
            unscale(&ghat, &mut values);
            let defect = ball.green_defect(alpha, &values, y_index);
            if defect < FLOAT_RESIDUAL_TOL {
                break defect;
            }
            if stalled || iterations >= MAX_ITERS {
                return Err(DlmlError::Numerical(format!(
                    "ball solver stalled at defect {defect:.3e} after {iterations} iterations"
                )));
            }
        }
        ball.sym_matvec(c, &dir, &mut a_dir);
        let denom: f64 = dir.iter().zip(&a_dir).map(|(p, ap)| p * ap).sum();
        let step = rs / denom;
        for i in 0..n {
            ghat[i] += step * dir[i];
            res[i] -= step * a_dir[i];
        }
        let rs_new: f64 = res.iter().map(|v| v * v).sum();
        let ratio = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            dir[i] = res[i] + ratio * dir[i];
        }
        iterations += 1;
    };

    Ok(BallColumn {
        ball,
        y_level,
        psi,
        values,
        defect,
        iterations,
    })
}

/// Solves the restricted Green column for exact walk parameters.
pub fn green_ball_column<'a>(
    ball: &'a Ball,
    y: &DLVertex,
    p: &WalkParams,
) -> Result<BallColumn<'a>> {
    if ball.branching() != (p.q(), p.r()) {
        return Err(DlmlError::Incompatible(format!(
            "ball over DL{:?} but walk on DL(({}, {}))",
            ball.branching(),
            p.q(),
            p.r()
        )));
    }
    green_ball_column_f64(ball, y, p.alpha_f64())
}

// ---------------------------------------------------------------------------
// Exact rational solver on small balls.
// ---------------------------------------------------------------------------

/// Exact restricted Green value on a small ball by dense elimination.
fn green_ball_rational(
    ball: &Ball,
    x: &DLVertex,
    y: &DLVertex,
    p: &WalkParams,
) -> Result<BigRational> {
    let n = ball.len();
    if n > RATIONAL_MAX_STATES {
        return Err(DlmlError::Resource(format!(
            "rational mode handles at most {RATIONAL_MAX_STATES} states, ball has {n}"
        )));
    }
    let xi = ball
        .index_of(x)
        .ok_or_else(|| DlmlError::Domain(format!("{x} lies outside the ball")))?;
    let yi = ball
        .index_of(y)
        .ok_or_else(|| DlmlError::Domain(format!("{y} lies outside the ball")))?;
    let zero = big_ratio(0, 1);
    let one = big_ratio(1, 1);
    let up = p.alpha() / big_ratio(p.q() as i64, 1);
    let down = (one.clone() - p.alpha()) / big_ratio(p.r() as i64, 1);
    let stride = ball.stride();
    let q = p.q() as usize;
    let mut a = vec![vec![zero.clone(); n]; n];
    for i in 0..n {
        a[i][i] = one.clone();
        let row = &ball.adj[i * stride..(i + 1) * stride];
        for (k, &j) in row.iter().enumerate() {
            if j == OUTSIDE {
                continue;
            }
            let w = if k < q { &up } else { &down };
            a[i][j as usize] -= w;
        }
    }
    let mut b = vec![zero; n];
    b[yi] = one;
    let sol = solve_dense_rational(a, b)
        .ok_or_else(|| DlmlError::Numerical("singular restricted system".into()))?;
    Ok(sol[xi].clone())
}

/// Midpoint of a geodesic from `x` to `y` (greedy distance descent).
fn geodesic_midpoint(x: &DLVertex, y: &DLVertex) -> Result<DLVertex> {
    let mut cur = x.clone();
    let mut remaining = dl_distance(x, y)?;
    let half = remaining / 2;
    for _ in 0..half {
        let next = cur
            .neighbours()
            .into_iter()
            .find(|n| dl_distance(n, y).map(|d| d < remaining).unwrap_or(false))
            .expect("some neighbour lies on a geodesic");
        remaining -= 1;
        cur = next;
    }
    Ok(cur)
}

/// Restricted Green value `G^D(x, y)` with `D` the ball of the given
/// radius around a geodesic midpoint of `x` and `y`.
pub fn green_ball_exact(
    x: &DLVertex,
    y: &DLVertex,
    radius: u64,
    p: &WalkParams,
    mode: BallMode,
) -> Result<GreenEstimate> {
    p.check_vertex(x)?;
    p.check_vertex(y)?;
    let mid = geodesic_midpoint(x, y)?;
    let ball = Ball::new(&mid, radius, MAX_BALL_STATES)?;
    if !ball.contains(x) || !ball.contains(y) {
        return Err(DlmlError::Domain(format!(
            "distance {} exceeds the reach of radius {radius} around the midpoint",
            dl_distance(x, y)?
        )));
    }
    match mode {
        BallMode::Float => {
            let col = green_ball_column(&ball, y, p)?;
            Ok(GreenEstimate {
                value: col.from_vertex(x)?,
                exact: None,
                method: GreenMethod::BallExact,
                error_bound: col.defect(),
                r_or_n: radius,
                t_max: None,
                seed: None,
                truncated_fraction: None,
            })
        }
        BallMode::Rational => {
            let exact = green_ball_rational(&ball, x, y, p)?;
            Ok(GreenEstimate {
                value: rational_to_f64(&exact),
                exact: Some(exact),
                method: GreenMethod::BallRational,
                error_bound: 0.0,
                r_or_n: radius,
                t_max: None,
                seed: None,
                truncated_fraction: None,
            })
        }
    }
}

/// Exact restricted Green value of the projected tree walk (descent mass
/// `a` split over `b` successors, ascent mass `1 - a`) on the tree ball of
/// the given radius around a geodesic midpoint of `x` and `y`.
pub fn tree_green_ball(
    x: &TreeVertex,
    y: &TreeVertex,
    radius: u64,
    a: &BigRational,
    b: u8,
) -> Result<BigRational> {
    if x.branching() != b || y.branching() != b {
        return Err(DlmlError::Incompatible(
            "tree vertices do not match the branching".into(),
        ));
    }
    if *a <= big_ratio(0, 1) || *a >= big_ratio(1, 1) {
        return Err(DlmlError::InvalidInput(format!(
            "descent mass {a} outside (0, 1)"
        )));
    }
    // Midpoint along the geodesic through the confluent.
    let (_conf, up, dn) = x.confluent_omega(y)?;
    let total = up + dn;
    let half = total / 2;
    let mid = if half <= up {
        x.ancestor(half)
    } else {
        y.ancestor(total - half)
    };
    let verts = crate::tree::tree_ball(&mid, radius);
    let n = verts.len();
    if n > RATIONAL_MAX_STATES {
        return Err(DlmlError::Resource(format!(
            "rational mode handles at most {RATIONAL_MAX_STATES} states, tree ball has {n}"
        )));
    }
    let mut index = HashMap::new();
    for (i, v) in verts.iter().enumerate() {
        index.insert(v.clone(), i);
    }
    let (xi, yi) = match (index.get(x), index.get(y)) {
        (Some(&xi), Some(&yi)) => (xi, yi),
        _ => {
            return Err(DlmlError::Domain(format!(
                "tree distance {total} exceeds the reach of radius {radius}"
            )))
        }
    };
    let zero = big_ratio(0, 1);
    let one = big_ratio(1, 1);
    let down = a / big_ratio(b as i64, 1);
    let up_mass = one.clone() - a;
    let mut mat = vec![vec![zero.clone(); n]; n];
    for (i, v) in verts.iter().enumerate() {
        mat[i][i] = one.clone();
        if let Some(&j) = index.get(&v.predecessor()) {
            mat[i][j] -= &up_mass;
        }
        for l in 0..b {
            if let Some(&j) = index.get(&v.successor(l).unwrap()) {
                mat[i][j] -= &down;
            }
        }
    }
    let mut rhs = vec![zero; n];
    rhs[yi] = one;
    let sol = solve_dense_rational(mat, rhs)
        .ok_or_else(|| DlmlError::Numerical("singular restricted system".into()))?;
    Ok(sol[xi].clone())
}

// ---------------------------------------------------------------------------
// Direct Monte Carlo.
// ---------------------------------------------------------------------------

/// Mutable walk state on explicit stacks, one step in O(1).
struct FastWalker {
    q: u8,
    r: u8,
    up_thresh: u64,
    level1: i64,
    word1: Vec<u8>,
    word2: Vec<u8>,
}

impl FastWalker {
    fn new(p: &WalkParams) -> FastWalker {
        FastWalker {
            q: p.q(),
            r: p.r(),
            up_thresh: up_threshold(p),
            level1: 0,
            word1: Vec::with_capacity(64),
            word2: Vec::with_capacity(64),
        }
    }

    fn reset(&mut self, x: &DLVertex) {
        self.level1 = x.level();
        self.word1.clear();
        self.word1.extend_from_slice(x.first().word());
        self.word2.clear();
        self.word2.extend_from_slice(x.second().word());
    }

    #[inline]
    fn step(&mut self, rng: &mut ChaCha8Rng) {
        if rng.random::<u64>() < self.up_thresh {
            let l = rng.random_range(0..self.q as u32) as u8;
            if !(self.word1.is_empty() && l == 0) {
                self.word1.push(l);
            }
            self.word2.pop();
            self.level1 += 1;
        } else {
            let l = rng.random_range(0..self.r as u32) as u8;
            if !(self.word2.is_empty() && l == 0) {
                self.word2.push(l);
            }
            self.word1.pop();
            self.level1 -= 1;
        }
    }

    #[inline]
    fn matches(&self, level: i64, word1: &[u8], word2: &[u8]) -> bool {
        self.level1 == level && self.word1 == word1 && self.word2 == word2
    }

    fn vertex(&self) -> DLVertex {
        let first = TreeVertex::new(self.q, self.level1, self.word1.clone())
            .expect("walker words stay canonical");
        let second = TreeVertex::new(self.r, -self.level1, self.word2.clone())
            .expect("walker words stay canonical");
        DLVertex::new(first, second).expect("levels cancel")
    }
}

fn chunk_sizes(n: u64) -> Vec<u64> {
    let chunks = MC_CHUNKS.min(n.max(1));
    (0..chunks)
        .map(|c| n / chunks + u64::from(c < n % chunks))
        .collect()
}

/// Default trajectory truncation horizon for a target at the given span:
/// the diffusive scale `50 span^2` for the centred walk and the ballistic
/// scale `20 span / |2 alpha - 1|` otherwise, with floors so that nearby
/// targets still get an effectively exhaustive horizon.
pub fn default_t_max(span: u64, p: &WalkParams) -> u64 {
    if p.is_centred() {
        (50 * span * span).max(5_000)
    } else {
        let drift = (2.0 * p.alpha_f64() - 1.0).abs();
        ((20.0 * span as f64 / drift).ceil() as u64).max(2_000)
    }
}

/// Estimates `G(x, y)` as the mean visit count to `y` over `N` sampled
/// trajectories from `x`, each truncated at `t_max` steps. Trajectories
/// that wander more than 80 steps of graph distance beyond `d(x, y)` are
/// finished early (the return probability across such a gap is below
/// 1e-12). The truncated fraction reports trajectories that hit `t_max`
/// while within height distance 2 of the target's horocycle, the
/// indicator that truncation may still bias the estimate.
pub fn green_monte_carlo(
    x: &DLVertex,
    y: &DLVertex,
    p: &WalkParams,
    n: u64,
    t_max: u64,
    seed: u64,
) -> Result<GreenEstimate> {
    p.check_vertex(x)?;
    p.check_vertex(y)?;
    if n == 0 {
        return Err(DlmlError::InvalidInput("sample count must be positive".into()));
    }
    let d0 = dl_distance(x, y)?;
    let cutoff = d0 + 80;
    let y_level = y.level();
    let y_word1 = y.first().word().to_vec();
    let y_word2 = y.second().word().to_vec();

    let sizes = chunk_sizes(n);
    let stats: Vec<(u64, u128, u64)> = sizes
        .par_iter()
        .enumerate()
        .map(|(chunk, &paths)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64 + 1);
            let mut walker = FastWalker::new(p);
            let mut sum = 0u64;
            let mut sumsq = 0u128;
            let mut near_truncated = 0u64;
            for _ in 0..paths {
                walker.reset(x);
                let mut visits = 0u64;
                if walker.matches(y_level, &y_word1, &y_word2) {
                    visits += 1;
                }
                let mut escaped = false;
                for t in 1..=t_max {
                    walker.step(&mut rng);
                    if walker.matches(y_level, &y_word1, &y_word2) {
                        visits += 1;
                    }
                    if t % 64 == 0 {
                        let d = dl_distance(&walker.vertex(), y).expect("same graph");
                        if d > cutoff {
                            escaped = true;
                            break;
                        }
                    }
                }
                if !escaped && (walker.level1 - y_level).abs() <= 2 {
                    near_truncated += 1;
                }
                sum += visits;
                sumsq += (visits as u128) * (visits as u128);
            }
            (sum, sumsq, near_truncated)
        })
        .collect();

    let total: u64 = stats.iter().map(|s| s.0).sum();
    let total_sq: u128 = stats.iter().map(|s| s.1).sum();
    let near: u64 = stats.iter().map(|s| s.2).sum();
    let nf = n as f64;
    let mean = total as f64 / nf;
    let var = if n > 1 {
        ((total_sq as f64) - nf * mean * mean) / (nf - 1.0)
    } else {
        0.0
    };
    Ok(GreenEstimate {
        value: mean,
        exact: None,
        method: GreenMethod::MonteCarlo,
        error_bound: 1.96 * (var.max(0.0) / nf).sqrt(),
        r_or_n: n,
        t_max: Some(t_max),
        seed: Some(seed),
        truncated_fraction: Some(near as f64 / nf),
    })
}

// ---------------------------------------------------------------------------
// Class-reduced Monte Carlo.
// ---------------------------------------------------------------------------

/// Number of vertices sharing a relative position against a fixed base
/// point: the product over the two trees of the count of descent words
/// branching off the prescribed confluent.
pub fn class_vertex_count(rel: &RelPos, q: u8, r: u8) -> u128 {
    fn tree_count(up: u64, dn: u64, b: u8) -> u128 {
        let b = b as u128;
        if dn == 0 {
            1
        } else if up == 0 {
            b.pow(dn as u32)
        } else {
            (b - 1) * b.pow(dn as u32 - 1)
        }
    }
    tree_count(rel.up1, rel.dn1, q) * tree_count(rel.up2, rel.dn2, r)
}

fn fraction_threshold(denominator: u8) -> u64 {
    ((1u128 << 64) / denominator as u128) as u64
}

/// Estimates the common Green value of the whole class of targets at one
/// relative position from the start: the chain of relative-position
/// counters is itself a Markov chain, and the expected visit count to the
/// class equals the class size times the Green value. Every trajectory
/// runs the full horizon; the ascent counters can shrink again, so there
/// is no safe early exit.
pub fn green_monte_carlo_class(
    rel: &RelPos,
    p: &WalkParams,
    n: u64,
    t_max: u64,
    seed: u64,
) -> Result<GreenEstimate> {
    if n == 0 {
        return Err(DlmlError::InvalidInput("sample count must be positive".into()));
    }
    let target = (rel.up1, rel.dn1, rel.up2, rel.dn2);
    let target_dh = rel.level_change();
    let up_thresh = up_threshold(p);
    let retrace1 = fraction_threshold(p.q());
    let retrace2 = fraction_threshold(p.r());

    let sizes = chunk_sizes(n);
    let stats: Vec<(u64, u128, u64)> = sizes
        .par_iter()
        .enumerate()
        .map(|(chunk, &paths)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64 + 1);
            let mut sum = 0u64;
            let mut sumsq = 0u128;
            let mut near_truncated = 0u64;
            for _ in 0..paths {
                let (mut u1, mut d1, mut u2, mut d2) = (0u64, 0u64, 0u64, 0u64);
                let mut visits = 0u64;
                if target == (0, 0, 0, 0) {
                    visits += 1;
                }
                for _ in 0..t_max {
                    if rng.random::<u64>() < up_thresh {
                        // First tree descends one letter, second ascends.
                        if d1 > 0 {
                            d1 += 1;
                        } else if u1 > 0 {
                            if rng.random::<u64>() < retrace1 {
                                u1 -= 1;
                            } else {
                                d1 = 1;
                            }
                        } else {
                            d1 = 1;
                        }
                        if d2 > 0 {
                            d2 -= 1;
                        } else {
                            u2 += 1;
                        }
                    } else {
                        if d2 > 0 {
                            d2 += 1;
                        } else if u2 > 0 {
                            if rng.random::<u64>() < retrace2 {
                                u2 -= 1;
                            } else {
                                d2 = 1;
                            }
                        } else {
                            d2 = 1;
                        }
                        if d1 > 0 {
                            d1 -= 1;
                        } else {
                            u1 += 1;
                        }
                    }
                    if (u1, d1, u2, d2) == target {
                        visits += 1;
                    }
                }
                let dh = d1 as i64 - u1 as i64;
                if (dh - target_dh).abs() <= 2 {
                    near_truncated += 1;
                }
                sum += visits;
                sumsq += (visits as u128) * (visits as u128);
            }
            (sum, sumsq, near_truncated)
        })
        .collect();

    let total: u64 = stats.iter().map(|s| s.0).sum();
    let total_sq: u128 = stats.iter().map(|s| s.1).sum();
    let near: u64 = stats.iter().map(|s| s.2).sum();
    let class = class_vertex_count(rel, p.q(), p.r()) as f64;
    let nf = n as f64;
    let mean_visits = total as f64 / nf;
    let var = if n > 1 {
        ((total_sq as f64) - nf * mean_visits * mean_visits) / (nf - 1.0)
    } else {
        0.0
    };
    Ok(GreenEstimate {
        value: mean_visits / class,
        exact: None,
        method: GreenMethod::MonteCarloClass,
        error_bound: 1.96 * (var.max(0.0) / nf).sqrt() / class,
        r_or_n: n,
        t_max: Some(t_max),
        seed: Some(seed),
        truncated_fraction: Some(near as f64 / nf),
    })
}

// ---------------------------------------------------------------------------
// Resolvents.
// ---------------------------------------------------------------------------

/// Backend selection for [`resolvent_green`].
#[derive(Clone, Copy, Debug)]
pub enum ResolventBackend {
    Ball { radius: u64 },
    MonteCarlo { n: u64, t_max: u64, seed: u64 },
}

/// `G(x, y | t) = sum_n p^(n)(x, y) / t^n` for `t >= rho`, evaluated by
/// tilting: the conjugation maps the series to the plain Green kernel of
/// the tilted walk, scaled by `lambda^(hor(x1) - hor(y1))`.
pub fn resolvent_green(
    x: &DLVertex,
    y: &DLVertex,
    t: &BigRational,
    p: &WalkParams,
    backend: ResolventBackend,
) -> Result<GreenEstimate> {
    p.check_vertex(x)?;
    p.check_vertex(y)?;
    let conj = crate::closed_form::conjugation(p, t)?;
    let alpha_t = crate::algebra::Scalar::to_f64(conj.alpha_t());
    let rel = rel_position(x, y)?;
    let scale = crate::algebra::Scalar::to_f64(&conj.green_scale(rel.level_change()));
    let (value, error_bound, r_or_n, t_max, seed, truncated) = match backend {
        ResolventBackend::Ball { radius } => {
            let mid = geodesic_midpoint(x, y)?;
            let ball = Ball::new(&mid, radius, MAX_BALL_STATES)?;
            if !ball.contains(x) || !ball.contains(y) {
                return Err(DlmlError::Domain(format!(
                    "distance {} exceeds the reach of radius {radius} around the midpoint",
                    dl_distance(x, y)?
                )));
            }
            let col = green_ball_column_f64(&ball, y, alpha_t)?;
            (
                col.from_vertex(x)?,
                col.defect(),
                radius,
                None,
                None,
                None,
            )
        }
        ResolventBackend::MonteCarlo { n, t_max, seed } => {
            // The tilted walk is sampled with the float threshold; the
            // class chain needs only the relative position of the pair.
            let est = monte_carlo_class_f64(&rel, alpha_t, p.q(), p.r(), n, t_max, seed)?;
            (
                est.value,
                est.error_bound,
                n,
                Some(t_max),
                Some(seed),
                est.truncated_fraction,
            )
        }
    };
    Ok(GreenEstimate {
        value: value * scale,
        exact: None,
        method: GreenMethod::Resolvent,
        error_bound: error_bound * scale,
        r_or_n,
        t_max,
        seed,
        truncated_fraction: truncated,
    })
}

/// Class Monte Carlo with a float upward probability (for tilted walks).
fn monte_carlo_class_f64(
    rel: &RelPos,
    alpha: f64,
    q: u8,
    r: u8,
    n: u64,
    t_max: u64,
    seed: u64,
) -> Result<GreenEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DlmlError::InvalidInput(format!(
            "upward probability {alpha} outside (0, 1)"
        )));
    }
    // Reuse the exact-parameter sampler by routing through a threshold.
    let up_thresh = (alpha * (u64::MAX as f64)) as u64;
    let target = (rel.up1, rel.dn1, rel.up2, rel.dn2);
    let retrace1 = fraction_threshold(q);
    let retrace2 = fraction_threshold(r);
    let sizes = chunk_sizes(n);
    let stats: Vec<(u64, u128)> = sizes
        .par_iter()
        .enumerate()
        .map(|(chunk, &paths)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64 + 1);
            let mut sum = 0u64;
            let mut sumsq = 0u128;
            for _ in 0..paths {
                let (mut u1, mut d1, mut u2, mut d2) = (0u64, 0u64, 0u64, 0u64);
                let mut visits = 0u64;
                if target == (0, 0, 0, 0) {
                    visits += 1;
                }
                for _ in 0..t_max {
                    if rng.random::<u64>() < up_thresh {
                        if d1 > 0 {
                            d1 += 1;
                        } else if u1 > 0 {
                            if rng.random::<u64>() < retrace1 {
                                u1 -= 1;
                            } else {
                                d1 = 1;
                            }
                        } else {
                            d1 = 1;
                        }
                        if d2 > 0 {
                            d2 -= 1;
                        } else {
                            u2 += 1;
                        }
                    } else {
                        if d2 > 0 {
                            d2 += 1;
                        } else if u2 > 0 {
                            if rng.random::<u64>() < retrace2 {
                                u2 -= 1;
                            } else {
                                d2 = 1;
                            }
                        } else {
                            d2 = 1;
                        }
                        if d1 > 0 {
                            d1 -= 1;
                        } else {
                            u1 += 1;
                        }
                    }
                    if (u1, d1, u2, d2) == target {
                        visits += 1;
                    }
                }
                sum += visits;
                sumsq += (visits as u128) * (visits as u128);
            }
            (sum, sumsq)
        })
        .collect();
    let total: u64 = stats.iter().map(|s| s.0).sum();
    let total_sq: u128 = stats.iter().map(|s| s.1).sum();
    let class = class_vertex_count(rel, q, r) as f64;
    let nf = n as f64;
    let mean_visits = total as f64 / nf;
    let var = if n > 1 {
        ((total_sq as f64) - nf * mean_visits * mean_visits) / (nf - 1.0)
    } else {
        0.0
    };
    Ok(GreenEstimate {
        value: mean_visits / class,
        exact: None,
        method: GreenMethod::MonteCarloClass,
        error_bound: 1.96 * (var.max(0.0) / nf).sqrt() / class,
        r_or_n: n,
        t_max: Some(t_max),
        seed: Some(seed),
        truncated_fraction: None,
    })
}

/// Reference for the resolvent: the truncated series
/// `sum_{n <= N} p^(n)(x, y) / t^n` evaluated exactly through the
/// relative-position chain, plus a geometric bound on the dropped tail
/// (`p^(n)(x, y) <= rho^n sqrt(psi(level change))`). Returns
/// `(truncated value, tail bound)`.
pub fn resolvent_series_reference(
    rel: &RelPos,
    p: &WalkParams,
    t: &BigRational,
    terms: u32,
) -> Result<(f64, f64)> {
    let t_f = rational_to_f64(t);
    let rho = p.spectral_radius();
    if t_f <= rho {
        return Err(DlmlError::Domain(format!(
            "series reference needs t > rho = {rho}, got {t_f}"
        )));
    }
    let alpha = p.alpha_f64();
    let q = p.q() as f64;
    let r = p.r() as f64;
    let target = (rel.up1, rel.dn1, rel.up2, rel.dn2);
    let class = class_vertex_count(rel, p.q(), p.r()) as f64;
    let mut dist: HashMap<(u64, u64, u64, u64), f64> = HashMap::new();
    dist.insert((0, 0, 0, 0), 1.0);
    let mut value = 0.0f64;
    let mut t_pow = 1.0f64;
    for n in 0..=terms {
        if let Some(&mass) = dist.get(&target) {
            value += mass / class / t_pow;
        }
        t_pow *= t_f;
        if n == terms {
            break;
        }
        let mut next: HashMap<(u64, u64, u64, u64), f64> =
            HashMap::with_capacity(dist.len() * 2);
        for (&(u1, d1, u2, d2), &mass) in &dist {
            let push =
                |m: &mut HashMap<(u64, u64, u64, u64), f64>, s: (u64, u64, u64, u64), w: f64| {
                    *m.entry(s).or_insert(0.0) += w;
                };
            // Upward move.
            let t2 = if d2 > 0 { (u2, d2 - 1) } else { (u2 + 1, 0u64) };
            if d1 > 0 {
                push(&mut next, (u1, d1 + 1, t2.0, t2.1), mass * alpha);
            } else if u1 > 0 {
                push(&mut next, (u1 - 1, 0, t2.0, t2.1), mass * alpha / q);
                push(
                    &mut next,
                    (u1, 1, t2.0, t2.1),
                    mass * alpha * (q - 1.0) / q,
                );
            } else {
                push(&mut next, (0, 1, t2.0, t2.1), mass * alpha);
            }
            // Downward move.
            let t1 = if d1 > 0 { (u1, d1 - 1) } else { (u1 + 1, 0u64) };
            let down = 1.0 - alpha;
            if d2 > 0 {
                push(&mut next, (t1.0, t1.1, u2, d2 + 1), mass * down);
            } else if u2 > 0 {
                push(&mut next, (t1.0, t1.1, u2 - 1, 0), mass * down / r);
                push(
                    &mut next,
                    (t1.0, t1.1, u2, 1),
                    mass * down * (r - 1.0) / r,
                );
            } else {
                push(&mut next, (t1.0, t1.1, 0, 1), mass * down);
            }
        }
        dist = next;
    }
    let psi = rational_to_f64(&p.psi_base());
    let amp = psi.powi(rel.level_change() as i32).sqrt();
    let ratio = rho / t_f;
    let tail = amp * ratio.powi(terms as i32 + 1) / (1.0 - ratio);
    Ok((value, tail))
}

// ---------------------------------------------------------------------------
// Stop-time distribution and hitting order.
// ---------------------------------------------------------------------------

/// Empirical versus closed-form distribution of the second-tree descent
/// depth at the first passage to a line level.
#[derive(Clone, Debug)]
pub struct DstopReport {
    /// Empirical masses by depth (finished trajectories only).
    pub empirical: Vec<f64>,
    /// Reference masses by depth.
    pub reference: Vec<f64>,
    /// Total variation distance between the two.
    pub total_variation: f64,
    /// Fraction of trajectories that never reached the level in `t_max`.
    pub unfinished_fraction: f64,
    /// Finished sample count.
    pub finished: u64,
}

/// Closed-form reference masses: for depth `d`,
/// `eps_d sum_{m >= d} r^(d - m) span / ((span + m)(span + m + 1))` with
/// `eps_0 = 1` and `eps_d = (r - 1)/r` otherwise.
pub fn dstop_reference(span: u64, r: u8, depths: usize) -> Vec<f64> {
    let rf = r as f64;
    let s = span as f64;
    (0..depths)
        .map(|d| {
            let eps = if d == 0 { 1.0 } else { (rf - 1.0) / rf };
            let mut sum = 0.0;
            let mut geo = 1.0; // r^(d - m) at m = d
            // The inner sum converges geometrically in m (ratio 1/r), so a
            // few hundred terms exhaust it to double precision.
            for m in d..d + 256 {
                let mf = m as f64;
                sum += geo * s / ((s + mf) * (s + mf + 1.0));
                geo /= rf;
            }
            eps * sum
        })
        .collect()
}

/// Samples the first passage of the height to `-span` and the second-tree
/// descent depth `D` at that moment (how many letters separate the walker
/// from its confluence with the start in the second tree). The truncation
/// horizon is 800 000 steps; unfinished trajectories are dropped from the
/// histogram and reported. Defined for the centred walk, where the height
/// is recurrent and the closed-form reference applies.
pub fn dstop_distribution(
    span: u64,
    p: &WalkParams,
    n: u64,
    seed: u64,
) -> Result<DstopReport> {
    if !p.is_centred() {
        return Err(DlmlError::Domain(
            "the stop-depth reference applies to the centred walk only".into(),
        ));
    }
    if span == 0 || n == 0 {
        return Err(DlmlError::InvalidInput(
            "span and sample count must be positive".into(),
        ));
    }
    const T_MAX: u64 = 800_000;
    // Depth histogram size: the depth tail decays only harmonically
    // (like span/depth), so the range must be generous for the total
    // variation comparison to be meaningful.
    const DEPTHS: usize = 4096;
    let retrace2 = fraction_threshold(p.r());
    let up_thresh = up_threshold(p);
    let sizes = chunk_sizes(n);
    let hists: Vec<(Vec<u64>, u64)> = sizes
        .par_iter()
        .enumerate()
        .map(|(chunk, &paths)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64 + 1);
            let mut hist = vec![0u64; DEPTHS];
            let mut unfinished = 0u64;
            for _ in 0..paths {
                let (mut u2, mut d2) = (0u64, 0u64);
                let mut h = 0i64;
                let mut finished = false;
                for _ in 0..T_MAX {
                    if rng.random::<u64>() < up_thresh {
                        // Second tree ascends.
                        if d2 > 0 {
                            d2 -= 1;
                        } else {
                            u2 += 1;
                        }
                        h += 1;
                    } else {
                        if d2 > 0 {
                            d2 += 1;
                        } else if u2 > 0 {
                            if rng.random::<u64>() < retrace2 {
                                u2 -= 1;
                            } else {
                                d2 = 1;
                            }
                        } else {
                            d2 = 1;
                        }
                        h -= 1;
                    }
                    if h == -(span as i64) {
                        let d = (u2 as usize).min(hist.len() - 1);
                        hist[d] += 1;
                        finished = true;
                        break;
                    }
                }
                if !finished {
                    unfinished += 1;
                }
            }
            (hist, unfinished)
        })
        .collect();

    let mut hist = vec![0u64; DEPTHS];
    let mut unfinished = 0u64;
    for (h, u) in hists {
        for (a, b) in hist.iter_mut().zip(h) {
            *a += b;
        }
        unfinished += u;
    }
    let finished: u64 = hist.iter().sum();
    if finished == 0 {
        return Err(DlmlError::Numerical(
            "no trajectory reached the level within the horizon".into(),
        ));
    }
    let empirical: Vec<f64> = hist.iter().map(|&c| c as f64 / finished as f64).collect();
    let reference = dstop_reference(span, p.r(), empirical.len());
    let total_variation = 0.5
        * empirical
            .iter()
            .zip(&reference)
            .map(|(e, f)| (e - f).abs())
            .sum::<f64>();
    Ok(DstopReport {
        empirical,
        reference,
        total_variation,
        unfinished_fraction: unfinished as f64 / n as f64,
        finished,
    })
}

/// Empirical probability that the height walk from 0 hits `-k` before
/// `+l`, with its 95% half-width. The closed form is the first component
/// of [`crate::closed_form::barrier_hit_split`].
pub fn hitting_order_frequency(
    k: u64,
    l: u64,
    p: &WalkParams,
    n: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if k == 0 && l == 0 {
        return Err(DlmlError::Degenerate(
            "both barriers of the height walk at distance zero".into(),
        ));
    }
    if n == 0 {
        return Err(DlmlError::InvalidInput("sample count must be positive".into()));
    }
    let up_thresh = up_threshold(p);
    let sizes = chunk_sizes(n);
    let low_hits: u64 = sizes
        .par_iter()
        .enumerate()
        .map(|(chunk, &paths)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64 + 1);
            let mut lows = 0u64;
            for _ in 0..paths {
                let mut h = 0i64;
                loop {
                    if h == -(k as i64) {
                        lows += 1;
                        break;
                    }
                    if h == l as i64 {
                        break;
                    }
                    h += if rng.random::<u64>() < up_thresh { 1 } else { -1 };
                }
            }
            lows
        })
        .sum();
    let freq = low_hits as f64 / n as f64;
    let half = 1.96 * (freq * (1.0 - freq) / n as f64).sqrt();
    Ok((freq, half))
}

/// Asymptotic estimate packaged as a [`GreenEstimate`] (no error bar; the
/// guarantee is only `ratio -> 1` at large spans).
pub fn asym_estimate(rel: &RelPos, p: &WalkParams) -> Result<GreenEstimate> {
    Ok(GreenEstimate {
        value: asym_green_ln(rel, p)?.exp(),
        exact: None,
        method: GreenMethod::Asymptotic,
        error_bound: f64::NAN,
        r_or_n: 0,
        t_max: None,
        seed: None,
        truncated_fraction: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{barrier_hit_split, green_decompose, tree_green, ParamView, TreeSide};
    use crate::dl::BaseCase;
    use crate::walk::{sample_path, StopRule};

    fn params(n: i64, d: i64, q: u8, r: u8) -> WalkParams {
        WalkParams::from_ratio(n, d, q, r).unwrap()
    }

    #[test]
    fn radius_zero_ball_gives_one_at_the_center() {
        let p = params(1, 2, 2, 2);
        let o = DLVertex::origin(2, 2);
        for mode in [BallMode::Float, BallMode::Rational] {
            let est = green_ball_exact(&o, &o, 0, &p, mode).unwrap();
            assert!((est.value - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ball_roundtrips_vertices_and_matches_bfs_enumeration() {
        let o = DLVertex::origin(2, 3);
        let ball = Ball::new(&o, 4, MAX_BALL_STATES).unwrap();
        let listed = crate::dl::dl_ball(&o, 4);
        assert_eq!(ball.len(), listed.len());
        for v in &listed {
            let i = ball.index_of(v).unwrap();
            assert_eq!(&ball.vertex(i), v);
            assert_eq!(ball.level(i), v.level());
        }
        // Adjacency rows list real neighbours in canonical order.
        for i in 0..ball.len() {
            let v = ball.vertex(i);
            let neigh = v.neighbours();
            for (k, n) in neigh.iter().enumerate() {
                let entry = ball.adj[i * ball.stride() + k];
                match ball.index_of(n) {
                    Some(j) => assert_eq!(entry as usize, j),
                    None => assert_eq!(entry, OUTSIDE),
                }
            }
        }
    }

    #[test]
    fn float_solver_matches_exact_rational_on_a_small_ball() {
        let p = params(1, 3, 2, 2);
        let o = DLVertex::origin(2, 2);
        let ball = Ball::new(&o, 3, MAX_BALL_STATES).unwrap();
        let col = green_ball_column(&ball, &o, &p).unwrap();
        for i in (0..ball.len()).step_by(3) {
            let x = ball.vertex(i);
            let exact = green_ball_rational(&ball, &x, &o, &p).unwrap();
            assert!(
                (col.from_index(i) - rational_to_f64(&exact)).abs() < 1e-11,
                "index {i}"
            );
        }
    }

    #[test]
    fn restricted_green_grows_with_the_domain_and_stabilizes() {
        let p = params(1, 3, 2, 2);
        let o = DLVertex::origin(2, 2);
        let mut last = 0.0;
        let mut values = Vec::new();
        for radius in [2u64, 4, 6, 8, 10, 12, 14] {
            let est = green_ball_exact(&o, &o, radius, &p, BallMode::Float).unwrap();
            assert!(est.value >= last - 1e-12, "monotone in the radius");
            last = est.value;
            values.push((radius, est.value));
        }
        // Transience makes the truncation error decay geometrically.
        let at_12 = values.iter().find(|v| v.0 == 12).unwrap().1;
        let at_14 = values.iter().find(|v| v.0 == 14).unwrap().1;
        assert!((at_14 - at_12) / at_14 < 0.01);
    }

    #[test]
    fn ball_values_respect_the_reversal_identity() {
        let p = params(1, 3, 2, 3);
        let o = DLVertex::origin(2, 3);
        let ball = Ball::new(&o, 8, MAX_BALL_STATES).unwrap();
        let psi = rational_to_f64(&p.psi_base());
        let col_o = green_ball_column(&ball, &o, &p).unwrap();
        for rel in [
            RelPos::new(1, 0, 0, 1).unwrap(),
            RelPos::new(1, 2, 2, 1).unwrap(),
            RelPos::new(0, 2, 2, 0).unwrap(),
        ] {
            let x = rel.witness(2, 3);
            let col_x = green_ball_column(&ball, &x, &p).unwrap();
            // G^D(x, o) and G^D(o, x) from independent solves.
            let fwd = col_o.from_vertex(&x).unwrap();
            let bwd = col_x.from_vertex(&o).unwrap();
            let expect = psi.powi(x.level() as i32) * fwd;
            assert!(
                (bwd - expect).abs() <= 1e-9 * expect.max(1e-12),
                "rel {rel:?}: {bwd} vs {expect}"
            );
            // The same identity read off one solve.
            assert!((col_o.to_vertex(&x).unwrap() - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn ball_green_depends_only_on_the_relative_position() {
        let p = params(1, 3, 2, 2);
        let rel = RelPos::new(1, 2, 2, 1).unwrap();
        // Two distinct pairs in the same relative position.
        let o = DLVertex::origin(2, 2);
        let x = rel.witness(2, 2);
        let shift = DLVertex::new(
            TreeVertex::new(2, 1, vec![1]).unwrap(),
            TreeVertex::new(2, -1, vec![]).unwrap(),
        )
        .unwrap();
        let ball_x = Ball::new(&geodesic_midpoint(&x, &o).unwrap(), 10, MAX_BALL_STATES).unwrap();
        let col = green_ball_column(&ball_x, &o, &p).unwrap();
        let v1 = col.from_vertex(&x).unwrap();
        // Second pair: walk the same relative position from another base.
        let y2 = shift.clone();
        let x2 = {
            // Realize rel against `shift` by translating the witness
            // construction: ascend from shift's components and branch off.
            let up_then = |v: &TreeVertex, up: u64, dn: u64| {
                let a = v.ancestor(dn);
                let mut w = a;
                if up > 0 {
                    w = w.successor(1).unwrap();
                    for _ in 1..up {
                        w = w.successor(0).unwrap();
                    }
                }
                w
            };
            DLVertex::new(
                up_then(shift.first(), rel.up1, rel.dn1),
                up_then(shift.second(), rel.up2, rel.dn2),
            )
            .unwrap()
        };
        assert_eq!(rel_position(&x2, &y2).unwrap(), rel);
        let ball_2 =
            Ball::new(&geodesic_midpoint(&x2, &y2).unwrap(), 10, MAX_BALL_STATES).unwrap();
        let col2 = green_ball_column(&ball_2, &y2, &p).unwrap();
        let v2 = col2.from_vertex(&x2).unwrap();
        assert!(
            (v1 - v2).abs() < 1e-3 * v1,
            "position-only dependence: {v1} vs {v2}"
        );
    }

    #[test]
    fn tree_ball_green_stays_below_the_closed_form_and_converges() {
        // Exact elimination only reaches modest radii, so the convergence
        // check asks for a clear shrink of the truncation gap, not for
        // convergence to working precision.
        for (num, den, b, max_radius) in
            [(2i64, 3i64, 2u8, 4u64), (2, 3, 3, 3), (1, 2, 2, 4)]
        {
            let a = big_ratio(num, den);
            let root = TreeVertex::root(b);
            let p = WalkParams::new(a.clone(), b, b).unwrap();
            let v: ParamView<BigRational> = p.view();
            // With q = r = b and alpha = a the first side has descent mass a.
            let closed = tree_green(0, 0, TreeSide::First, &v);
            let mut last = big_ratio(0, 1);
            let mut first_gap = None;
            for radius in 1..=max_radius {
                let g = tree_green_ball(&root, &root, radius, &a, b).unwrap();
                assert!(g >= last, "monotone");
                assert!(g <= closed, "bounded by the full-tree kernel");
                if first_gap.is_none() {
                    first_gap = Some(rational_to_f64(&(closed.clone() - &g)));
                }
                last = g;
            }
            // The gap closes geometrically off balance and only like 1/radius
            // at balance, so the shrink requirement is regime dependent.
            let shrink = if a == big_ratio(1, 2) { 0.8 } else { 0.5 };
            let final_gap = rational_to_f64(&(closed.clone() - &last));
            assert!(
                final_gap < shrink * first_gap.unwrap(),
                "branching {b}, mass {a}: gap {final_gap} barely shrank"
            );
        }
    }

    #[test]
    fn fiber_sums_are_bounded_by_the_tree_projection_kernel() {
        // Visits to a fixed second component equal the tree walk's visits,
        // so the ball sum is bounded by the projected Green value and
        // approaches it as the ball grows.
        let p = params(1, 3, 2, 3);
        let o = DLVertex::origin(2, 3);
        let ball = Ball::new(&o, 10, MAX_BALL_STATES).unwrap();
        let col = green_ball_column(&ball, &o, &p).unwrap();
        let v: ParamView<BigRational> = p.view();
        let mut sums: HashMap<TreeVertex, f64> = HashMap::new();
        for i in 0..ball.len() {
            let y = ball.vertex(i);
            // Row value G^D(o, y) via the reversal identity.
            *sums.entry(y.second().clone()).or_insert(0.0) += col.to_index(i);
        }
        let o2 = o.second();
        for (up, dn) in [(0u64, 0u64), (1, 0), (1, 1)] {
            let target = {
                let a = o2.ancestor(up);
                if dn == 0 {
                    a
                } else {
                    let mut w = a.successor(1).unwrap();
                    for _ in 1..dn {
                        w = w.successor(0).unwrap();
                    }
                    w
                }
            };
            let bound = rational_to_f64(&tree_green(up, dn, TreeSide::Second, &v));
            let sum = sums.get(&target).copied().unwrap_or(0.0);
            assert!(sum <= bound * (1.0 + 1e-9), "({up},{dn}): {sum} > {bound}");
            assert!(sum >= 0.8 * bound, "({up},{dn}): {sum} far below {bound}");
        }
    }

    #[test]
    fn direct_monte_carlo_agrees_with_the_ball_solver() {
        // Strong upward drift; the origin value converges quickly.
        let p = params(2, 3, 2, 2);
        let o = DLVertex::origin(2, 2);
        let ball = green_ball_exact(&o, &o, 12, &p, BallMode::Float).unwrap();
        let t_max = default_t_max(0, &p);
        let mc = green_monte_carlo(&o, &o, &p, 200_000, t_max, 7).unwrap();
        assert!(
            (mc.value - ball.value).abs() <= 3.0 * mc.error_bound,
            "mc {} +- {} vs ball {}",
            mc.value,
            mc.error_bound,
            ball.value
        );
        assert!(mc.truncated_fraction.unwrap() < 1e-3);
    }

    #[test]
    fn unreachable_target_returns_zero_with_zero_variance() {
        let p = params(1, 2, 2, 2);
        let o = DLVertex::origin(2, 2);
        let far = RelPos::of_case(BaseCase::IV, 4).witness(2, 2);
        let est = green_monte_carlo(&o, &far, &p, 1_000, 3, 11).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.error_bound, 0.0);
    }

    #[test]
    fn monte_carlo_is_reproducible_for_a_fixed_seed() {
        let p = params(1, 2, 2, 2);
        let rel = RelPos::new(1, 1, 1, 1).unwrap();
        let a = green_monte_carlo_class(&rel, &p, 30_000, 500, 42).unwrap();
        let b = green_monte_carlo_class(&rel, &p, 30_000, 500, 42).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.error_bound, b.error_bound);
        let c = green_monte_carlo_class(&rel, &p, 30_000, 500, 43).unwrap();
        assert_ne!(a.value, c.value);
    }

    #[test]
    fn class_count_matches_explicit_enumeration() {
        let o = DLVertex::origin(2, 3);
        for span in 1..=3u64 {
            for up1 in 0..=span {
                for dn1 in 0..=span {
                    let rel = RelPos::new(up1, dn1, span - up1, span - dn1).unwrap();
                    let count = crate::dl::dl_ball(&o, rel.distance())
                        .into_iter()
                        .filter(|z| rel_position(&o, z).unwrap() == rel)
                        .count() as u128;
                    assert_eq!(count, class_vertex_count(&rel, 2, 3), "rel {rel:?}");
                }
            }
        }
    }

    #[test]
    fn class_and_direct_estimators_agree() {
        let p = params(1, 3, 2, 3);
        let rel = RelPos::new(1, 0, 0, 1).unwrap();
        let t_max = default_t_max(1, &p);
        let class = green_monte_carlo_class(&rel, &p, 400_000, t_max, 5).unwrap();
        // The witness realizes rel from x to the origin; the class chain
        // measures positions relative to the start, so sample from o to a
        // vertex realizing the reversed relation.
        let y = rel.reversed().witness(2, 3);
        let o = DLVertex::origin(2, 3);
        assert_eq!(rel_position(&o, &y).unwrap(), rel);
        let direct = green_monte_carlo(&o, &y, &p, 400_000, t_max, 6).unwrap();
        let gap = (class.value - direct.value).abs();
        let band = 3.0 * (class.error_bound + direct.error_bound);
        assert!(gap <= band, "class {} vs direct {}", class.value, direct.value);
    }

    #[test]
    fn class_estimate_matches_the_exact_ball_value() {
        let p = params(1, 2, 2, 2);
        let rel = RelPos::new(1, 1, 1, 1).unwrap();
        let x = rel.witness(2, 2);
        let o = DLVertex::origin(2, 2);
        let ball = green_ball_exact(&x, &o, 13, &p, BallMode::Float).unwrap();
        let t_max = default_t_max(1, &p);
        let class = green_monte_carlo_class(&rel, &p, 300_000, t_max, 9).unwrap();
        // The ball value at radius 13 still misses some mass; allow its
        // truncation gap on top of the statistical band.
        assert!(
            (class.value - ball.value).abs() <= 3.0 * class.error_bound + 0.02 * ball.value,
            "class {} +- {} vs ball {}",
            class.value,
            class.error_bound,
            ball.value
        );
    }

    #[test]
    fn every_path_hits_both_confluents_before_the_target() {
        // First-visit structure: a walk reaching y must first lift each
        // tree component to its confluence with the target's component.
        let p = params(1, 2, 2, 2);
        let rel = RelPos::new(1, 1, 1, 1).unwrap();
        let x = rel.witness(2, 2);
        let o = DLVertex::origin(2, 2);
        let c1 = x.first().ancestor(rel.up1);
        let c2 = x.second().ancestor(rel.up2);
        let mut hits = 0;
        for seed in 0..400u64 {
            let path = sample_path(
                &x,
                &p,
                &StopRule::HitVertex {
                    target: o.clone(),
                    max_steps: 400,
                },
                seed,
            )
            .unwrap();
            let verts = path.vertices;
            let hit_y = verts.iter().position(|v| v == &o);
            if let Some(ty) = hit_y {
                hits += 1;
                let t1 = verts.iter().position(|v| v.first() == &c1);
                let t2 = verts.iter().position(|v| v.second() == &c2);
                assert!(t1.is_some_and(|t| t <= ty), "first confluent after target");
                assert!(t2.is_some_and(|t| t <= ty), "second confluent after target");
            }
        }
        assert!(hits > 20, "the target is hit often enough to test");
    }

    #[test]
    fn resolvent_at_one_is_the_plain_green_value() {
        let p = params(1, 3, 2, 2);
        let o = DLVertex::origin(2, 2);
        let rel = RelPos::new(1, 1, 1, 1).unwrap();
        let x = rel.witness(2, 2);
        let plain = green_ball_exact(&x, &o, 10, &p, BallMode::Float).unwrap();
        let resolvent = resolvent_green(
            &x,
            &o,
            &big_ratio(1, 1),
            &p,
            ResolventBackend::Ball { radius: 10 },
        )
        .unwrap();
        assert!((plain.value - resolvent.value).abs() < 1e-10);
    }

    #[test]
    fn resolvent_matches_the_truncated_series() {
        // Centred walk, t = 5/4: the tilt is strongly drifted, so a modest
        // ball already carries the full kernel; the series reference is
        // exact up to its reported geometric tail.
        let p = params(1, 2, 2, 2);
        let o = DLVertex::origin(2, 2);
        for rel in [
            RelPos::new(0, 0, 0, 0).unwrap(),
            RelPos::new(1, 1, 1, 1).unwrap(),
            RelPos::new(2, 0, 0, 2).unwrap(),
        ] {
            let x = rel.witness(2, 2);
            let t = big_ratio(5, 4);
            let (series, tail) = resolvent_series_reference(
                &rel_position(&x, &o).unwrap(),
                &p,
                &t,
                40,
            )
            .unwrap();
            let est = resolvent_green(&x, &o, &t, &p, ResolventBackend::Ball { radius: 10 })
                .unwrap();
            assert!(
                (est.value - series).abs() <= tail + 1e-9,
                "rel {rel:?}: {} vs series {series} (tail {tail:.2e})",
                est.value
            );
        }
    }

    #[test]
    fn resolvent_reversal_uses_the_plain_height_weight() {
        use crate::algebra::Scalar;
        // Reversibility survives the series in t term by term, so
        // G(x,y|t) = psi(dh) G(y,x|t) with the untilted weight base; in
        // tilted coordinates that is the identity psi_t = psi lambda^2
        // (the rescaling exponent flips sign together with the pair).
        let p = params(1, 3, 2, 2);
        let t = big_ratio(5, 4);
        let conj = crate::closed_form::conjugation(&p, &t).unwrap();
        let alpha_t = conj.alpha_t().to_f64();
        let lambda = conj.lambda().to_f64();
        let psi = rational_to_f64(&p.psi_base());
        let psi_t = alpha_t * p.r() as f64 / ((1.0 - alpha_t) * p.q() as f64);
        assert!((psi_t - psi * lambda * lambda).abs() < 1e-12);

        let o = DLVertex::origin(2, 2);
        let rel = RelPos::new(2, 1, 0, 1).unwrap();
        let x = rel.witness(2, 2);
        let fwd = resolvent_green(&x, &o, &t, &p, ResolventBackend::Ball { radius: 10 })
            .unwrap();
        let bwd = resolvent_green(&o, &x, &t, &p, ResolventBackend::Ball { radius: 10 })
            .unwrap();
        let dh = rel.level_change() as i32;
        let expect = bwd.value * psi.powi(dh);
        // The two directions truncate on different midpoint balls, so the
        // agreement is only up to the (tiny, drifted) truncation error.
        assert!(
            (fwd.value - expect).abs() < 1e-4 * fwd.value.max(1e-12),
            "{} vs {}",
            fwd.value,
            expect
        );
    }

    #[test]
    fn stop_depth_reference_is_a_probability_distribution() {
        // The depth tail is harmonic: truncating below depth D drops at
        // most the probability that the pre-stop maximum reaches D, which
        // is span / (span + D). The truncated total must land between
        // that bound and one.
        for span in [2u64, 5, 10] {
            for depths in [400usize, 1600] {
                let masses = dstop_reference(span, 2, depths);
                let total: f64 = masses.iter().sum();
                let tail = span as f64 / (span as f64 + depths as f64);
                assert!(total <= 1.0 + 1e-12, "span {span}: total {total}");
                assert!(
                    total >= 1.0 - tail - 1e-12,
                    "span {span}, depths {depths}: total {total}, tail bound {tail}"
                );
                assert!(masses.iter().all(|&m| m >= 0.0));
            }
        }
    }

    #[test]
    fn stop_depth_samples_match_the_reference() {
        let p = params(1, 2, 2, 2);
        let report = dstop_distribution(3, &p, 150_000, 17).unwrap();
        assert!(
            report.total_variation < 0.05,
            "tv {}",
            report.total_variation
        );
        assert!(report.unfinished_fraction < 0.02);
        assert!(dstop_distribution(3, &params(1, 3, 2, 2), 100, 1).is_err());
    }

    #[test]
    fn hitting_order_matches_the_exact_split() {
        let p = params(1, 3, 2, 2);
        let v: ParamView<BigRational> = p.view();
        for (k, l) in [(2u64, 3u64), (1, 4), (3, 3)] {
            let (split, _) = barrier_hit_split(k, l, &v).unwrap();
            let expect = rational_to_f64(&split);
            let (freq, half) = hitting_order_frequency(k, l, &p, 400_000, 23).unwrap();
            assert!(
                (freq - expect).abs() <= 3.0 * half.max(1e-4),
                "(k,l)=({k},{l}): {freq} vs {expect}"
            );
        }
    }

    #[test]
    fn decomposition_identity_holds_on_a_float_ball() {
        // Mid-size check of the four-term decomposition against restricted
        // kernels, all values read from one solve per parameter set.
        for p in [params(1, 2, 2, 2), params(1, 3, 2, 2)] {
            let o = DLVertex::origin(2, 2);
            let ball = Ball::new(&o, 12, MAX_BALL_STATES).unwrap();
            let col = green_ball_column(&ball, &o, &p).unwrap();
            let view: ParamView<BigRational> = p.view();
            for rel in [
                RelPos::new(1, 1, 1, 1).unwrap(),
                RelPos::new(2, 1, 0, 1).unwrap(),
                RelPos::new(0, 2, 2, 0).unwrap(),
            ] {
                let lhs = col.from_vertex(&rel.witness(2, 2)).unwrap();
                let bases: Vec<f64> = [BaseCase::I, BaseCase::II, BaseCase::III, BaseCase::IV]
                    .into_iter()
                    .map(|c| {
                        col.from_vertex(&RelPos::of_case(c, rel.span()).witness(2, 2))
                            .unwrap()
                    })
                    .collect();
                let base_rat: [BigRational; 4] = std::array::from_fn(|i| {
                    BigRational::from_float(bases[i]).unwrap()
                });
                let rhs = rational_to_f64(
                    &green_decompose(&rel, &base_rat, &view).unwrap(),
                );
                assert!(
                    (lhs - rhs).abs() <= 0.02 * lhs,
                    "rel {rel:?}: lhs {lhs} rhs {rhs}"
                );
            }
        }
    }

    #[test]
    fn monte_carlo_tracks_the_asymptotic_order() {
        // Sanity band only; the tight statistical suite lives in the
        // acceptance tests.
        let p = params(1, 3, 2, 2);
        let rel = RelPos::of_case(BaseCase::IV, 8);
        let t_max = default_t_max(8, &p);
        let mc = green_monte_carlo_class(&rel, &p, 300_000, t_max, 31).unwrap();
        let asym = asym_estimate(&rel, &p).unwrap();
        let ratio = mc.value / asym.value;
        assert!(
            (0.7..1.3).contains(&ratio),
            "mc {} vs asym {} (ratio {ratio})",
            mc.value,
            asym.value
        );
    }

}
