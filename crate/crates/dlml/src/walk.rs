//! The drifted nearest-neighbour walk `P_alpha` on `DL(q, r)`.
//!
//! From `x1 x2` the walk moves up (successor in the first tree, predecessor
//! in the second) with probability `alpha`, split uniformly over the `q`
//! successors, and down with probability `1 - alpha`, split over the `r`
//! choices. Key derived quantities:
//!
//! * `beta = (1 - alpha) / alpha`; the walk drifts downwards iff `beta > 1`;
//! * the spectral radius `rho = 2 sqrt(alpha (1 - alpha))`;
//! * the reversing measure `m(x) = (alpha r / ((1 - alpha) q))^{hor(x1)}`,
//!   with `m(x) p(x, y) = m(y) p(y, x)` on every edge;
//! * the projections: onto the first tree the walk is the tree walk with
//!   upward mass `alpha` split over `q` successors; onto the second tree the
//!   roles of `alpha` and `1 - alpha` swap; onto the height line it is the
//!   birth-and-death chain stepping `+1` with probability `alpha`.
//!
//! Path sampling is deterministic in the seed.

use num::rational::BigRational;
use num::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algebra::{big_ratio, rational_to_f64, Scalar};
use crate::dl::{dl_distance, DLVertex};
use crate::error::{DlmlError, Result};
use crate::tree::TreeVertex;

/// Parameters of the walk `P_alpha` on `DL(q, r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkParams {
    alpha: BigRational,
    q: u8,
    r: u8,
}

impl WalkParams {
    /// Builds parameters; requires `0 < alpha < 1` and branchings `>= 2`.
    pub fn new(alpha: BigRational, q: u8, r: u8) -> Result<Self> {
        if alpha <= Zero::zero() || alpha >= big_ratio(1, 1) {
            return Err(DlmlError::InvalidInput(format!(
                "alpha must lie strictly between 0 and 1, got {alpha}"
            )));
        }
        if q < 2 || r < 2 {
            return Err(DlmlError::InvalidInput(format!(
                "branchings must be at least 2, got q = {q}, r = {r}"
            )));
        }
        Ok(WalkParams { alpha, q, r })
    }

    /// Convenience constructor from an integer ratio.
    pub fn from_ratio(num: i64, den: i64, q: u8, r: u8) -> Result<Self> {
        WalkParams::new(big_ratio(num, den), q, r)
    }

    /// Upward step probability.
    pub fn alpha(&self) -> &BigRational {
        &self.alpha
    }

    /// First-tree branching.
    pub fn q(&self) -> u8 {
        self.q
    }

    /// Second-tree branching.
    pub fn r(&self) -> u8 {
        self.r
    }

    /// `alpha` as a float.
    pub fn alpha_f64(&self) -> f64 {
        rational_to_f64(&self.alpha)
    }

    /// `beta = (1 - alpha) / alpha`.
    pub fn beta(&self) -> BigRational {
        (big_ratio(1, 1) - &self.alpha) / &self.alpha
    }

    /// `beta` as a float.
    pub fn beta_f64(&self) -> f64 {
        rational_to_f64(&self.beta())
    }

    /// Whether the walk is centred (`alpha = 1/2`).
    pub fn is_centred(&self) -> bool {
        self.alpha == big_ratio(1, 2)
    }

    /// Square of the spectral radius: `4 alpha (1 - alpha)` (rational).
    pub fn rho_squared(&self) -> BigRational {
        big_ratio(4, 1) * &self.alpha * (big_ratio(1, 1) - &self.alpha)
    }

    /// Spectral radius `rho = 2 sqrt(alpha (1 - alpha))`.
    pub fn spectral_radius(&self) -> f64 {
        rational_to_f64(&self.rho_squared()).sqrt()
    }

    /// Base of the reversing measure:
    /// `m(x) = psi_base^{hor(x1)}` with `psi_base = alpha r / ((1 - alpha) q)`.
    pub fn psi_base(&self) -> BigRational {
        &self.alpha * big_ratio(self.r as i64, self.q as i64)
            / (big_ratio(1, 1) - &self.alpha)
    }

    /// Reversing measure `m(x)` of a vertex.
    pub fn vertex_weight(&self, x: &DLVertex) -> BigRational {
        Scalar::powi(&self.psi_base(), x.level())
    }

    /// Probability of each individual up move: `alpha / q`.
    pub fn up_prob_each(&self) -> BigRational {
        &self.alpha / big_ratio(self.q as i64, 1)
    }

    /// Probability of each individual down move: `(1 - alpha) / r`.
    pub fn down_prob_each(&self) -> BigRational {
        (big_ratio(1, 1) - &self.alpha) / big_ratio(self.r as i64, 1)
    }

    /// Parameters of the same walk on the tree-swapped graph `DL(r, q)`
    /// (components exchanged, so up and down trade places).
    pub fn swapped(&self) -> WalkParams {
        WalkParams {
            alpha: big_ratio(1, 1) - &self.alpha,
            q: self.r,
            r: self.q,
        }
    }

    /// Parameters with the drift flipped on the same graph
    /// (`alpha -> 1 - alpha`).
    pub fn drift_flipped(&self) -> WalkParams {
        WalkParams {
            alpha: big_ratio(1, 1) - &self.alpha,
            q: self.q,
            r: self.r,
        }
    }

    /// Checks that a vertex belongs to the graph these parameters describe.
    pub fn check_vertex(&self, x: &DLVertex) -> Result<()> {
        if x.branching() != (self.q, self.r) {
            return Err(DlmlError::Incompatible(format!(
                "vertex of DL{:?} used with walk on DL({}, {})",
                x.branching(),
                self.q,
                self.r
            )));
        }
        Ok(())
    }
}

/// One-step distribution from `x`: the `q + r` neighbours with their exact
/// probabilities, in the order of [`DLVertex::neighbours`].
pub fn step_distribution(x: &DLVertex, p: &WalkParams) -> Result<Vec<(DLVertex, BigRational)>> {
    p.check_vertex(x)?;
    let up = p.up_prob_each();
    let down = p.down_prob_each();
    Ok(x.neighbours()
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let prob = if i < p.q as usize { up.clone() } else { down.clone() };
            (v, prob)
        })
        .collect())
}

/// Factor graphs of `DL(q, r)` onto which the walk projects.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    /// First tree component.
    Tree1,
    /// Second tree component.
    Tree2,
    /// Height line `hor(x1)`.
    Line,
}

/// Image of a vertex under a projection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProjectedPoint {
    /// A tree vertex (projections onto either tree).
    Tree(TreeVertex),
    /// An integer height (projection onto the line).
    Line(i64),
}

/// Projects a vertex.
pub fn project(x: &DLVertex, onto: Projection) -> ProjectedPoint {
    match onto {
        Projection::Tree1 => ProjectedPoint::Tree(x.first().clone()),
        Projection::Tree2 => ProjectedPoint::Tree(x.second().clone()),
        Projection::Line => ProjectedPoint::Line(x.level()),
    }
}

/// Stopping rule for path sampling.
#[derive(Clone, Debug)]
pub enum StopRule {
    /// Exactly this many steps.
    Steps(u64),
    /// First visit to `target`, capped at `max_steps`.
    HitVertex { target: DLVertex, max_steps: u64 },
    /// First visit to height `level`, capped at `max_steps`.
    HitLevel { level: i64, max_steps: u64 },
    /// First exit from the ball of `radius` around `center`, capped at
    /// `max_steps`.
    LeaveBall {
        center: DLVertex,
        radius: u64,
        max_steps: u64,
    },
}

/// Why a sampled path ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// The step budget ran out (also the normal outcome of
    /// [`StopRule::Steps`]).
    MaxSteps,
    /// The target vertex or level was hit.
    Hit,
    /// The path left the prescribed ball.
    Left,
}

/// A sampled trajectory.
#[derive(Clone, Debug)]
pub struct PathSample {
    /// Visited vertices, starting point first.
    pub vertices: Vec<DLVertex>,
    /// Why sampling stopped.
    pub reason: StopReason,
    /// Seed that produced the path.
    pub seed: u64,
}

/// Threshold `floor(alpha * 2^64)` so that a uniform `u64` draw below it has
/// probability `alpha` up to one part in `2^64`.
pub(crate) fn up_threshold(p: &WalkParams) -> u64 {
    let scaled = &p.alpha * BigRational::from(num::BigInt::from(1u128 << 64));
    let floor = scaled.floor().to_integer();
    num::ToPrimitive::to_u64(&floor).unwrap_or(u64::MAX)
}

/// Samples a single path of `P_alpha`, deterministic in the seed.
pub fn sample_path(
    start: &DLVertex,
    p: &WalkParams,
    rule: &StopRule,
    seed: u64,
) -> Result<PathSample> {
    p.check_vertex(start)?;
    if let StopRule::HitVertex { target, .. } = rule {
        p.check_vertex(target)?;
    }
    if let StopRule::LeaveBall { center, .. } = rule {
        p.check_vertex(center)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let threshold = up_threshold(p);
    let max_steps = match rule {
        StopRule::Steps(n) => *n,
        StopRule::HitVertex { max_steps, .. }
        | StopRule::HitLevel { max_steps, .. }
        | StopRule::LeaveBall { max_steps, .. } => *max_steps,
    };
    let mut vertices = Vec::with_capacity((max_steps.min(1 << 20) + 1) as usize);
    let mut cur = start.clone();
    vertices.push(cur.clone());
    let mut reason = StopReason::MaxSteps;
    let stopped = |v: &DLVertex| -> Result<Option<StopReason>> {
        match rule {
            StopRule::Steps(_) => Ok(None),
            StopRule::HitVertex { target, .. } => {
                Ok((v == target).then_some(StopReason::Hit))
            }
            StopRule::HitLevel { level, .. } => {
                Ok((v.level() == *level).then_some(StopReason::Hit))
            }
            StopRule::LeaveBall { center, radius, .. } => {
                Ok((dl_distance(center, v)? > *radius).then_some(StopReason::Left))
            }
        }
    };
    if let Some(early) = stopped(&cur)? {
        return Ok(PathSample {
            vertices,
            reason: early,
            seed,
        });
    }
    for _ in 0..max_steps {
        let neighbours = cur.neighbours();
        let idx = if rng.random::<u64>() < threshold {
            rng.random_range(0..p.q as usize)
        } else {
            p.q as usize + rng.random_range(0..p.r as usize)
        };
        cur = neighbours[idx].clone();
        vertices.push(cur.clone());
        if let Some(why) = stopped(&cur)? {
            reason = why;
            break;
        }
    }
    Ok(PathSample {
        vertices,
        reason,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dl::dl_ball;

    fn params(n: i64, d: i64, q: u8, r: u8) -> WalkParams {
        WalkParams::from_ratio(n, d, q, r).unwrap()
    }

    #[test]
    fn parameter_validation() {
        assert!(WalkParams::from_ratio(0, 1, 2, 2).is_err());
        assert!(WalkParams::from_ratio(1, 1, 2, 2).is_err());
        assert!(WalkParams::from_ratio(1, 2, 1, 2).is_err());
        assert!(WalkParams::from_ratio(1, 2, 2, 2).is_ok());
    }

    #[test]
    fn derived_quantities() {
        let p = params(1, 3, 2, 3);
        assert_eq!(p.beta(), big_ratio(2, 1));
        assert!(!p.is_centred());
        assert_eq!(p.rho_squared(), big_ratio(8, 9));
        assert!((p.spectral_radius() - (8f64 / 9.0).sqrt()).abs() < 1e-15);
        // psi_base = alpha r / ((1 - alpha) q) = (1/3 * 3) / (2/3 * 2) = 3/4.
        assert_eq!(p.psi_base(), big_ratio(3, 4));
        let c = params(1, 2, 2, 2);
        assert_eq!(c.spectral_radius(), 1.0);
        assert_eq!(c.psi_base(), big_ratio(1, 1));
    }

    #[test]
    fn step_distribution_examples() {
        // Simple random walk on DL(2, 2): four neighbours, 1/4 each.
        let p = params(1, 2, 2, 2);
        let o = DLVertex::origin(2, 2);
        let dist = step_distribution(&o, &p).unwrap();
        assert_eq!(dist.len(), 4);
        for (_, prob) in &dist {
            assert_eq!(*prob, big_ratio(1, 4));
        }
        // alpha = 1/3 on DL(2, 3): ups 1/6 each, downs 2/9 each; total 1.
        let p = params(1, 3, 2, 3);
        let o = DLVertex::origin(2, 3);
        let dist = step_distribution(&o, &p).unwrap();
        assert_eq!(dist[0].1, big_ratio(1, 6));
        assert_eq!(dist[1].1, big_ratio(1, 6));
        for (_, prob) in &dist[2..] {
            assert_eq!(*prob, big_ratio(2, 9));
        }
        let total: BigRational = dist.iter().map(|(_, p)| p.clone()).sum();
        assert_eq!(total, big_ratio(1, 1));
        // Graph mismatch is rejected.
        assert!(step_distribution(&DLVertex::origin(2, 2), &p).is_err());
    }

    #[test]
    fn walk_is_reversible_for_the_height_measure() {
        // m(x) p(x, y) = m(y) p(y, x) on every edge of a ball.
        let p = params(1, 3, 2, 3);
        let o = DLVertex::origin(2, 3);
        for x in dl_ball(&o, 3) {
            let fwd = step_distribution(&x, &p).unwrap();
            for (y, pxy) in fwd {
                let back = step_distribution(&y, &p).unwrap();
                let pyx = back
                    .iter()
                    .find(|(z, _)| *z == x)
                    .map(|(_, pr)| pr.clone())
                    .expect("adjacency is symmetric");
                assert_eq!(
                    p.vertex_weight(&x) * pxy,
                    p.vertex_weight(&y) * pyx,
                    "edge {x} -> {y}"
                );
            }
        }
    }

    #[test]
    fn projections_follow_the_walk() {
        let p = params(1, 2, 2, 3);
        let o = DLVertex::origin(2, 3);
        let path = sample_path(&o, &p, &StopRule::Steps(200), 7).unwrap();
        assert_eq!(path.vertices.len(), 201);
        for w in path.vertices.windows(2) {
            // Tree projections move by exactly one tree edge, line by 1.
            let (a, b) = (&w[0], &w[1]);
            assert_eq!(a.first().distance(b.first()).unwrap(), 1);
            assert_eq!(a.second().distance(b.second()).unwrap(), 1);
            assert_eq!((a.level() - b.level()).abs(), 1);
            match (project(a, Projection::Line), project(b, Projection::Line)) {
                (ProjectedPoint::Line(u), ProjectedPoint::Line(v)) => {
                    assert_eq!((u - v).abs(), 1)
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn tree_class_mass_depends_only_on_projection() {
        // Summing p(x, .) over a fiber of the first-tree projection gives
        // the tree walk step weight, independent of the representative x.
        let p = params(1, 3, 2, 3);
        let o = DLVertex::origin(2, 3);
        let ball = dl_ball(&o, 3);
        let x_a = &ball[0];
        let x_b = ball
            .iter()
            .find(|v| v.first() == x_a.first() && *v != x_a)
            .expect("another vertex over the same first component");
        let mass = |x: &DLVertex, target: &TreeVertex| -> BigRational {
            step_distribution(x, &p)
                .unwrap()
                .into_iter()
                .filter(|(y, _)| y.first() == target)
                .map(|(_, pr)| pr)
                .sum()
        };
        let up_target = x_a.first().successor(0).unwrap();
        let down_target = x_a.first().predecessor();
        assert_eq!(mass(x_a, &up_target), mass(x_b, &up_target));
        assert_eq!(mass(x_a, &down_target), mass(x_b, &down_target));
        // Up mass alpha/q to each successor, down mass 1 - alpha total.
        assert_eq!(mass(x_a, &up_target), big_ratio(1, 6));
        assert_eq!(mass(x_a, &down_target), big_ratio(2, 3));
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let p = params(1, 2, 2, 2);
        let o = DLVertex::origin(2, 2);
        let a = sample_path(&o, &p, &StopRule::Steps(500), 42).unwrap();
        let b = sample_path(&o, &p, &StopRule::Steps(500), 42).unwrap();
        assert_eq!(a.vertices, b.vertices);
        let c = sample_path(&o, &p, &StopRule::Steps(500), 43).unwrap();
        assert_ne!(a.vertices, c.vertices);
    }

    #[test]
    fn stop_rules_fire() {
        let p = params(1, 3, 2, 3);
        let o = DLVertex::origin(2, 3);
        // Downward drift hits level -3 almost surely.
        let path = sample_path(
            &o,
            &p,
            &StopRule::HitLevel {
                level: -3,
                max_steps: 10_000,
            },
            11,
        )
        .unwrap();
        assert_eq!(path.reason, StopReason::Hit);
        assert_eq!(path.vertices.last().unwrap().level(), -3);
        // Leaving a ball.
        let path = sample_path(
            &o,
            &p,
            &StopRule::LeaveBall {
                center: o.clone(),
                radius: 4,
                max_steps: 10_000,
            },
            11,
        )
        .unwrap();
        assert_eq!(path.reason, StopReason::Left);
        assert_eq!(dl_distance(&o, path.vertices.last().unwrap()).unwrap(), 5);
        // Hitting a fixed vertex (start's neighbour). The walk is transient,
        // so keep the cap small; either outcome is checked for consistency.
        let target = o.neighbours()[2].clone();
        let path = sample_path(
            &o,
            &p,
            &StopRule::HitVertex {
                target: target.clone(),
                max_steps: 2_000,
            },
            5,
        )
        .unwrap();
        if path.reason == StopReason::Hit {
            assert_eq!(path.vertices.last().unwrap(), &target);
        }
        // Immediate stop when already at the target.
        let path = sample_path(
            &o,
            &p,
            &StopRule::HitVertex {
                target: o.clone(),
                max_steps: 10,
            },
            5,
        )
        .unwrap();
        assert_eq!(path.reason, StopReason::Hit);
        assert_eq!(path.vertices.len(), 1);
    }

    #[test]
    fn empirical_up_fraction_matches_alpha() {
        // Paths store every vertex, and a drifted path deepens linearly, so
        // the budget is kept moderate.
        let p = params(1, 3, 2, 3);
        let o = DLVertex::origin(2, 3);
        let n = 5_000;
        let path = sample_path(&o, &p, &StopRule::Steps(n), 1).unwrap();
        let ups = path
            .vertices
            .windows(2)
            .filter(|w| w[1].level() > w[0].level())
            .count();
        let frac = ups as f64 / n as f64;
        assert!((frac - 1.0 / 3.0).abs() < 0.025, "up fraction {frac}");
    }
}
