//! Boundary of `DL(q, r)` and the extended Martin kernels.
//!
//! Two compactifications are in play. The geometric one glues the end
//! compactifications of the two trees: its boundary splits into five pieces,
//! `(xi1, omega2)`, `(omega1, xi2)`, the single point `(omega1, omega2)`,
//! and the two vertex pieces `(y1, omega2)` and `(omega1, y2)`. The
//! horocyclic one refines the middle piece into a line of points
//! `(omega1^k, omega2^{-k})` indexed by `k` in `Z` together with `+inf` and
//! `-inf`, and decorates the other pieces with the height limit they force.
//! Dropping the decoration maps the horocyclic boundary onto the geometric
//! one.
//!
//! The Martin kernels of the walk extend continuously to the boundary that
//! matches its drift: the geometric boundary for the centred walk, the
//! horocyclic one otherwise. [`boundary_kernel_in`] evaluates the limit
//! kernels in closed form, [`martin_kernel_finite`] evaluates interior
//! quotients `G(x, y) / G(o, y)` numerically, [`classify_limit`] reads the
//! boundary point off a vertex sequence, and [`check_harmonic`] certifies
//! `P h = t h` exactly on a finite region.

use num::BigRational;
use rayon::prelude::*;
use serde_json::{json, Value};
use std::fmt;

use crate::algebra::{QuadRat, Scalar};
use crate::closed_form::{
    spherical_kernel, tree_hitting_prob, Conjugation, ParamView, TreeSide,
};
use crate::dl::{dl_ball, rel_position, DLVertex};
use crate::error::{DlmlError, Result};
use crate::green::{
    default_t_max, green_ball_column, green_monte_carlo_class, Ball, MAX_BALL_STATES,
};
use crate::tree::{confluent_root, end_metric_theta, ThetaVariant, TreeEnd, TreePoint, TreeVertex};
use crate::walk::WalkParams;

/// Float-mode harmonicity tolerance of [`HarmonicReport::is_harmonic`].
pub const HARMONIC_FLOAT_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Boundary points.
// ---------------------------------------------------------------------------

/// Which compactification a boundary point belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Compactification {
    /// Product of the two end compactifications.
    Geometric,
    /// The geometric compactification with the omega pair refined by the
    /// height limit.
    Horocyclic,
}

impl Compactification {
    /// Stable lowercase name, used in the JSON form.
    pub fn as_str(&self) -> &'static str {
        match self {
            Compactification::Geometric => "geometric",
            Compactification::Horocyclic => "horocyclic",
        }
    }
}

impl fmt::Display for Compactification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Height limit `k` of a horocyclic omega-pair point: an integer or one of
/// the two infinities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExtendedLevel {
    /// A finite height.
    Finite(i64),
    /// Heights increasing without bound.
    PlusInfinity,
    /// Heights decreasing without bound.
    MinusInfinity,
}

impl ExtendedLevel {
    /// The JSON value: the integer itself, or `"+inf"` / `"-inf"`.
    pub fn to_json(&self) -> Value {
        match self {
            ExtendedLevel::Finite(k) => json!(k),
            ExtendedLevel::PlusInfinity => json!("+inf"),
            ExtendedLevel::MinusInfinity => json!("-inf"),
        }
    }

    /// Parses the JSON value form.
    pub fn from_json(v: &Value) -> Result<ExtendedLevel> {
        if let Some(k) = v.as_i64() {
            return Ok(ExtendedLevel::Finite(k));
        }
        match v.as_str() {
            Some("+inf") => Ok(ExtendedLevel::PlusInfinity),
            Some("-inf") => Ok(ExtendedLevel::MinusInfinity),
            _ => Err(DlmlError::Parse(format!(
                "expected an integer, \"+inf\" or \"-inf\", got {v}"
            ))),
        }
    }

    /// `k / (1 + |k|)` with the convention that the infinities map to `+-1`.
    fn squashed(&self) -> f64 {
        match self {
            ExtendedLevel::Finite(k) => {
                let k = *k as f64;
                k / (1.0 + k.abs())
            }
            ExtendedLevel::PlusInfinity => 1.0,
            ExtendedLevel::MinusInfinity => -1.0,
        }
    }
}

impl fmt::Display for ExtendedLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedLevel::Finite(k) => write!(f, "{k}"),
            ExtendedLevel::PlusInfinity => f.write_str("+inf"),
            ExtendedLevel::MinusInfinity => f.write_str("-inf"),
        }
    }
}

/// One of the five boundary pieces, with its payload.
///
/// The omega pair carries the height limit exactly when the point is
/// horocyclic; the other pieces determine their height limit (ends force an
/// infinity, vertex pieces force `k = -hor(y1)` resp. `k = hor(y2)`), so
/// they carry none.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    /// `(xi1, omega2)`: a first-tree end other than `omega1`.
    FirstEnd(TreeEnd),
    /// `(omega1, xi2)`: a second-tree end other than `omega2`.
    SecondEnd(TreeEnd),
    /// `(omega1, omega2)`, refined by the height limit when horocyclic.
    OmegaPair(Option<ExtendedLevel>),
    /// `(y1, omega2)`: a first-tree vertex.
    FirstVertex(TreeVertex),
    /// `(omega1, y2)`: a second-tree vertex.
    SecondVertex(TreeVertex),
}

impl BoundaryKind {
    /// Stable kind name, used in the JSON form.
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryKind::FirstEnd(_) => "first_end",
            BoundaryKind::SecondEnd(_) => "second_end",
            BoundaryKind::OmegaPair(_) => "omega_pair",
            BoundaryKind::FirstVertex(_) => "first_vertex",
            BoundaryKind::SecondVertex(_) => "second_vertex",
        }
    }
}

/// A point of the geometric or horocyclic boundary.
///
/// Build through the constructors, which keep two invariants: end payloads
/// are canonical and never the reference end itself, and the omega pair
/// carries a height limit exactly in the horocyclic case.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BoundaryPoint {
    compactification: Compactification,
    kind: BoundaryKind,
}

impl BoundaryPoint {
    /// Boundary point `(xi1, omega2)`. Rejects the reference end (that
    /// pair is the omega-pair piece, not an end piece).
    pub fn first_end(c: Compactification, end: TreeEnd) -> Result<BoundaryPoint> {
        let canonical = canonical_lower_end(end, "first")?;
        Ok(BoundaryPoint {
            compactification: c,
            kind: BoundaryKind::FirstEnd(canonical),
        })
    }

    /// Boundary point `(omega1, xi2)`.
    pub fn second_end(c: Compactification, end: TreeEnd) -> Result<BoundaryPoint> {
        let canonical = canonical_lower_end(end, "second")?;
        Ok(BoundaryPoint {
            compactification: c,
            kind: BoundaryKind::SecondEnd(canonical),
        })
    }

    /// The geometric point `(omega1, omega2)`.
    pub fn omega_pair() -> BoundaryPoint {
        BoundaryPoint {
            compactification: Compactification::Geometric,
            kind: BoundaryKind::OmegaPair(None),
        }
    }

    /// The horocyclic point `(omega1^k, omega2^{-k})`.
    pub fn omega_pair_at(k: ExtendedLevel) -> BoundaryPoint {
        BoundaryPoint {
            compactification: Compactification::Horocyclic,
            kind: BoundaryKind::OmegaPair(Some(k)),
        }
    }

    /// Boundary point `(y1, omega2)`.
    pub fn first_vertex(c: Compactification, y1: TreeVertex) -> BoundaryPoint {
        BoundaryPoint {
            compactification: c,
            kind: BoundaryKind::FirstVertex(y1),
        }
    }

    /// Boundary point `(omega1, y2)`.
    pub fn second_vertex(c: Compactification, y2: TreeVertex) -> BoundaryPoint {
        BoundaryPoint {
            compactification: c,
            kind: BoundaryKind::SecondVertex(y2),
        }
    }

    /// The compactification this point belongs to.
    pub fn compactification(&self) -> Compactification {
        self.compactification
    }

    /// The piece and payload.
    pub fn kind(&self) -> &BoundaryKind {
        &self.kind
    }

    /// Drops the height decoration: the image of this point under the
    /// surjection onto the geometric compactification. Geometric points map
    /// to themselves.
    pub fn to_geometric(&self) -> BoundaryPoint {
        let kind = match &self.kind {
            BoundaryKind::OmegaPair(_) => BoundaryKind::OmegaPair(None),
            other => other.clone(),
        };
        BoundaryPoint {
            compactification: Compactification::Geometric,
            kind,
        }
    }

    /// JSON form
    /// `{"compactification": ..., "kind": ..., "k": ..., "payload": ...}`.
    /// `k` appears only on the horocyclic omega pair, `payload` (the tree
    /// vertex or end in text form) only on the pieces that carry one.
    pub fn to_json(&self) -> Value {
        let mut obj = serde_json::Map::new();
        obj.insert(
            "compactification".into(),
            json!(self.compactification.as_str()),
        );
        obj.insert("kind".into(), json!(self.kind.as_str()));
        match &self.kind {
            BoundaryKind::FirstEnd(e) | BoundaryKind::SecondEnd(e) => {
                obj.insert("payload".into(), json!(e.to_string()));
            }
            BoundaryKind::OmegaPair(Some(k)) => {
                obj.insert("k".into(), k.to_json());
            }
            BoundaryKind::OmegaPair(None) => {}
            BoundaryKind::FirstVertex(v) | BoundaryKind::SecondVertex(v) => {
                obj.insert("payload".into(), json!(v.to_string()));
            }
        }
        Value::Object(obj)
    }

    /// Parses the JSON form produced by [`BoundaryPoint::to_json`].
    pub fn from_json(v: &Value) -> Result<BoundaryPoint> {
        let field = |name: &str| -> Result<&Value> {
            v.get(name).ok_or_else(|| {
                DlmlError::Parse(format!("boundary point JSON lacks {name:?}: {v}"))
            })
        };
        let text = |name: &str| -> Result<&str> {
            field(name)?.as_str().ok_or_else(|| {
                DlmlError::Parse(format!("boundary point field {name:?} must be a string"))
            })
        };
        let c = match text("compactification")? {
            "geometric" => Compactification::Geometric,
            "horocyclic" => Compactification::Horocyclic,
            other => {
                return Err(DlmlError::Parse(format!(
                    "unknown compactification {other:?}"
                )))
            }
        };
        match text("kind")? {
            "first_end" => BoundaryPoint::first_end(c, text("payload")?.parse()?),
            "second_end" => BoundaryPoint::second_end(c, text("payload")?.parse()?),
            "omega_pair" => match (c, v.get("k")) {
                (Compactification::Geometric, None | Some(Value::Null)) => {
                    Ok(BoundaryPoint::omega_pair())
                }
                (Compactification::Geometric, Some(k)) => Err(DlmlError::Parse(format!(
                    "geometric omega pair carries no height limit, got k = {k}"
                ))),
                (Compactification::Horocyclic, Some(k)) => {
                    Ok(BoundaryPoint::omega_pair_at(ExtendedLevel::from_json(k)?))
                }
                (Compactification::Horocyclic, None) => Err(DlmlError::Parse(
                    "horocyclic omega pair needs a height limit k".into(),
                )),
            },
            "first_vertex" => Ok(BoundaryPoint::first_vertex(c, text("payload")?.parse()?)),
            "second_vertex" => Ok(BoundaryPoint::second_vertex(c, text("payload")?.parse()?)),
            other => Err(DlmlError::Parse(format!("unknown boundary kind {other:?}"))),
        }
    }
}

impl fmt::Display for BoundaryPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let horo = self.compactification == Compactification::Horocyclic;
        match &self.kind {
            BoundaryKind::FirstEnd(e) => {
                if horo {
                    write!(f, "({e}, omega2^-inf)")
                } else {
                    write!(f, "({e}, omega2)")
                }
            }
            BoundaryKind::SecondEnd(e) => {
                if horo {
                    write!(f, "(omega1^-inf, {e})")
                } else {
                    write!(f, "(omega1, {e})")
                }
            }
            BoundaryKind::OmegaPair(None) => f.write_str("(omega1, omega2)"),
            BoundaryKind::OmegaPair(Some(k)) => write!(f, "(omega1^{k}, omega2^-({k}))"),
            BoundaryKind::FirstVertex(v) => {
                if horo {
                    write!(f, "({v}, omega2^{})", -v.level())
                } else {
                    write!(f, "({v}, omega2)")
                }
            }
            BoundaryKind::SecondVertex(v) => {
                if horo {
                    write!(f, "(omega1^{}, {v})", -v.level())
                } else {
                    write!(f, "(omega1, {v})")
                }
            }
        }
    }
}

/// Canonicalizes an end payload and rejects the reference end.
fn canonical_lower_end(end: TreeEnd, which: &str) -> Result<TreeEnd> {
    match end {
        TreeEnd::Omega => Err(DlmlError::InvalidInput(format!(
            "the reference end of the {which} tree is not an end-piece payload; \
             use the omega pair"
        ))),
        TreeEnd::Lower(base) => Ok(TreeEnd::lower_through(&base)),
    }
}

// ---------------------------------------------------------------------------
// Closed-form boundary kernels.
// ---------------------------------------------------------------------------

/// Tree Martin kernel `K_i(x_i, xi_i)`: the hitting-probability ratio
/// `F(x_i, c) / F(o_i, c)`, where `c` is the point where the geodesics from
/// the root to `x_i` and to `xi_i` separate. The value depends on the end
/// only through that confluent.
fn tree_martin_kernel<S: Scalar>(
    x: &TreeVertex,
    end: &TreeEnd,
    side: TreeSide,
    v: &ParamView<S>,
) -> Result<S> {
    let o = TreeVertex::root(x.branching());
    let c = confluent_root(
        &TreePoint::Vertex(x.clone()),
        &TreePoint::End(end.clone()),
    )?;
    let (_, up_x, dn_x) = x.confluent_omega(&c)?;
    let (_, up_o, dn_o) = o.confluent_omega(&c)?;
    Ok(tree_hitting_prob(up_x, dn_x, side, v) / tree_hitting_prob(up_o, dn_o, side, v))
}

/// Spherical-function ratio `phi(x_i, y_i) / phi(o_i, y_i)` on one tree.
fn spherical_ratio<S: Scalar>(
    x: &TreeVertex,
    y: &TreeVertex,
    side: TreeSide,
    v: &ParamView<S>,
) -> Result<S> {
    let o = TreeVertex::root(x.branching());
    let (_, up_x, dn_x) = x.confluent_omega(y)?;
    let (_, up_o, dn_o) = o.confluent_omega(y)?;
    Ok(spherical_kernel(up_x, dn_x, side, v) / spherical_kernel(up_o, dn_o, side, v))
}

/// Kernel at the omega-pair points, `(beta^k + beta^{hor(x1)}) / (beta^k + 1)`
/// with its limits at the infinite heights. The limit values assume
/// `beta > 1`, which the caller guarantees (`alpha < 1/2`).
fn omega_pair_kernel<S: Scalar>(hor_x1: i64, k: ExtendedLevel, v: &ParamView<S>) -> S {
    let beta = v.beta();
    match k {
        ExtendedLevel::Finite(k) => {
            let bk = beta.powi(k);
            (bk.clone() + beta.powi(hor_x1)) / (bk + S::one())
        }
        ExtendedLevel::PlusInfinity => S::one(),
        ExtendedLevel::MinusInfinity => beta.powi(hor_x1),
    }
}

/// Extended Martin kernel `K(x, b)` at a boundary point, in any scalar.
///
/// The compactification of `b` must match the drift: geometric for the
/// centred walk, horocyclic otherwise. The drift-reversed regime
/// (`alpha > 1/2`) is evaluated through the height-weight exchange,
/// `K_alpha(x, b) = beta^{hor(x1)} K_{1-alpha}(x, b)`.
pub fn boundary_kernel_in<S: Scalar>(
    x: &DLVertex,
    b: &BoundaryPoint,
    v: &ParamView<S>,
) -> Result<S> {
    if x.branching() != (v.q, v.r) {
        return Err(DlmlError::Incompatible(format!(
            "vertex on DL{:?} but parameters for DL(({}, {}))",
            x.branching(),
            v.q,
            v.r
        )));
    }
    check_payload_branching(b, v.q, v.r)?;
    let expected = if v.is_centred() {
        Compactification::Geometric
    } else {
        Compactification::Horocyclic
    };
    if b.compactification() != expected {
        return Err(DlmlError::Domain(format!(
            "wrong compactification: this walk's kernels extend to the {expected} \
             boundary, got a {} point",
            b.compactification()
        )));
    }
    let half = S::from_ratio(1, 2);
    if v.alpha > half {
        let flipped = ParamView {
            alpha: S::one() - v.alpha.clone(),
            q: v.q,
            r: v.r,
        };
        return Ok(v.beta().powi(x.level()) * boundary_kernel_in(x, b, &flipped)?);
    }
    match b.kind() {
        BoundaryKind::FirstEnd(e) => tree_martin_kernel(x.first(), e, TreeSide::First, v),
        BoundaryKind::SecondEnd(e) => tree_martin_kernel(x.second(), e, TreeSide::Second, v),
        BoundaryKind::OmegaPair(None) => Ok(S::one()),
        BoundaryKind::OmegaPair(Some(k)) => Ok(omega_pair_kernel(x.level(), *k, v)),
        BoundaryKind::FirstVertex(y1) => spherical_ratio(x.first(), y1, TreeSide::First, v),
        BoundaryKind::SecondVertex(y2) => spherical_ratio(x.second(), y2, TreeSide::Second, v),
    }
}

/// Extended Martin kernel as an exact rational. See [`boundary_kernel_in`].
pub fn boundary_kernel(x: &DLVertex, b: &BoundaryPoint, p: &WalkParams) -> Result<BigRational> {
    boundary_kernel_in(x, b, &p.view::<BigRational>())
}

/// Extended Martin kernel of the `t`-resolvent:
/// `K(x, b | t) = K_tilted(x, b) * lambda^{hor(x1)}`, where the tilted walk
/// and `lambda` come from the conjugation at `t`. The point `b` must belong
/// to the compactification matching the tilt: geometric at `t = rho`
/// (centred tilt), horocyclic for `t > rho`. The result is `t`-harmonic for
/// the original walk and normalized at the origin.
pub fn resolvent_boundary_kernel(
    x: &DLVertex,
    b: &BoundaryPoint,
    conj: &Conjugation,
) -> Result<QuadRat> {
    let v = conj.tilted_view();
    Ok(boundary_kernel_in(x, b, &v)? * conj.lambda().powi(x.level()))
}

/// Checks that an end or vertex payload lives in the tree its piece refers
/// to.
fn check_payload_branching(b: &BoundaryPoint, q: u8, r: u8) -> Result<()> {
    let (want, got, side) = match b.kind() {
        BoundaryKind::FirstEnd(e) => (q, e.branching(), "first"),
        BoundaryKind::SecondEnd(e) => (r, e.branching(), "second"),
        BoundaryKind::OmegaPair(_) => return Ok(()),
        BoundaryKind::FirstVertex(v) => (q, Some(v.branching()), "first"),
        BoundaryKind::SecondVertex(v) => (r, Some(v.branching()), "second"),
    };
    match got {
        Some(g) if g != want => Err(DlmlError::Incompatible(format!(
            "boundary payload lives in a branching-{g} tree, the {side} tree here \
             has branching {want}"
        ))),
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Finite Martin quotients.
// ---------------------------------------------------------------------------

/// Numerical backend of [`martin_kernel_finite`].
#[derive(Clone, Copy, Debug)]
pub enum KernelBackend {
    /// Restricted Green kernel on the ball of this radius around `y`; one
    /// linear solve serves numerator and denominator.
    BallExact {
        /// Ball radius; must reach both `x` and the origin.
        radius: u64,
    },
    /// Class-chain Monte Carlo with common random numbers for numerator and
    /// denominator.
    MonteCarlo {
        /// Paths per estimate.
        n: u64,
        /// Step cut-off; `None` picks the span-scaled default.
        t_max: Option<u64>,
        /// Seed shared by both estimates (the coupling is the point).
        seed: u64,
    },
    /// Asymptotic estimates of numerator and denominator.
    Asymptotic,
}

/// Martin quotient `K(x, y) = G(x, y) / G(o, y)` at an interior vertex `y`,
/// with numerator and denominator from the same backend so their biases
/// cancel. Errors with an indeterminate-kernel error when the denominator
/// estimate is consistent with zero.
pub fn martin_kernel_finite(
    x: &DLVertex,
    y: &DLVertex,
    p: &WalkParams,
    backend: &KernelBackend,
) -> Result<f64> {
    let (q, r) = (p.q(), p.r());
    p.check_vertex(x)?;
    p.check_vertex(y)?;
    let o = DLVertex::origin(q, r);
    match *backend {
        KernelBackend::BallExact { radius } => {
            let ball = Ball::new(y, radius, MAX_BALL_STATES)?;
            let col = green_ball_column(&ball, y, p)?;
            let num = col.from_vertex(x)?;
            let den = col.from_vertex(&o)?;
            if !(den > 0.0) {
                return Err(DlmlError::Indeterminate(format!(
                    "denominator G(o, y) came out as {den} on the radius-{radius} ball"
                )));
            }
            Ok(num / den)
        }
        KernelBackend::MonteCarlo { n, t_max, seed } => {
            let rel_xy = rel_position(x, y)?;
            let rel_oy = rel_position(&o, y)?;
            let t = t_max.unwrap_or_else(|| {
                default_t_max(rel_xy.span(), p).max(default_t_max(rel_oy.span(), p))
            });
            // Same seed on purpose: the class chain's trajectory does not
            // depend on the target, so the two estimates ride the same
            // paths and the ratio's variance collapses.
            let num = green_monte_carlo_class(&rel_xy, p, n, t, seed)?;
            let den = green_monte_carlo_class(&rel_oy, p, n, t, seed)?;
            if den.value <= den.error_bound {
                return Err(DlmlError::Indeterminate(format!(
                    "denominator estimate {} +- {} is consistent with zero",
                    den.value, den.error_bound
                )));
            }
            Ok(num.value / den.value)
        }
        KernelBackend::Asymptotic => {
            let rel_xy = rel_position(x, y)?;
            let rel_oy = rel_position(&o, y)?;
            let num = crate::closed_form::asym_green_ln(&rel_xy, p)?;
            let den = crate::closed_form::asym_green_ln(&rel_oy, p)?;
            Ok((num - den).exp())
        }
    }
}

// ---------------------------------------------------------------------------
// Limit classification.
// ---------------------------------------------------------------------------

/// Verdict of [`classify_limit`].
#[derive(Clone, Debug, PartialEq)]
pub enum LimitClass {
    /// The sequence settles on an interior vertex.
    Interior(DLVertex),
    /// The sequence converges to this boundary point.
    Boundary(BoundaryPoint),
    /// The sample is consistent with several kinds (or with none).
    Undecided,
}

/// Behaviour of one tree component along the sample tail.
enum Trend {
    Fixed(TreeVertex),
    /// Deepest common ancestors of consecutive elements march towards the
    /// reference end.
    ToOmega,
    /// They march away from it; the payload is the canonical end through
    /// the deepest one observed.
    ToEnd(TreeEnd),
    Unclear,
}

fn component_trend(tail: &[&TreeVertex]) -> Result<Trend> {
    let last = tail[tail.len() - 1];
    if tail.iter().all(|v| *v == last) {
        return Ok(Trend::Fixed(last.clone()));
    }
    // Levels of the deepest common ancestors of consecutive elements. Two
    // of them are needed for a trend, so a tail of two distinct vertices
    // stays unclear.
    if tail.len() < 3 {
        return Ok(Trend::Unclear);
    }
    let mut confluents = Vec::with_capacity(tail.len() - 1);
    for pair in tail.windows(2) {
        let (c, _, _) = pair[0].confluent_omega(pair[1])?;
        confluents.push(c);
    }
    let levels: Vec<i64> = confluents.iter().map(|c| c.level()).collect();
    let first = levels[0];
    let last_level = levels[levels.len() - 1];
    if levels.windows(2).all(|w| w[0] <= w[1]) && first < last_level {
        let deepest = &confluents[confluents.len() - 1];
        return Ok(Trend::ToEnd(TreeEnd::lower_through(deepest)));
    }
    if levels.windows(2).all(|w| w[0] >= w[1]) && first > last_level {
        return Ok(Trend::ToOmega);
    }
    Ok(Trend::Unclear)
}

/// Height limit read off the tail, for the horocyclic omega pair.
fn level_trend(tail: &[&TreeVertex]) -> Option<ExtendedLevel> {
    let levels: Vec<i64> = tail.iter().map(|v| v.level()).collect();
    let first = levels[0];
    let last = levels[levels.len() - 1];
    if levels.iter().all(|&l| l == last) {
        return Some(ExtendedLevel::Finite(last));
    }
    if levels.windows(2).all(|w| w[0] <= w[1]) && first < last {
        return Some(ExtendedLevel::PlusInfinity);
    }
    if levels.windows(2).all(|w| w[0] >= w[1]) && first > last {
        return Some(ExtendedLevel::MinusInfinity);
    }
    None
}

/// Classifies where a vertex sequence is heading in the chosen
/// compactification, from the trend of its tail (the later half, at least
/// three elements when available).
///
/// The verdict is a finite-sample judgement: a tail settled on one vertex
/// reads as interior, componentwise monotone confluent motion reads as the
/// matching boundary piece, and anything mixed is undecided. End payloads
/// are reported as the canonical end through the deepest confluent seen;
/// this determines every kernel value whose confluent branches within the
/// observed depth.
pub fn classify_limit(
    seq: &[DLVertex],
    compactification: Compactification,
) -> Result<LimitClass> {
    if seq.len() < 2 {
        return Err(DlmlError::InvalidInput(format!(
            "classification needs at least two vertices, got {}",
            seq.len()
        )));
    }
    let branching = seq[0].branching();
    if let Some(bad) = seq.iter().find(|v| v.branching() != branching) {
        return Err(DlmlError::Incompatible(format!(
            "mixed graphs in one sequence: DL{:?} vs DL{:?}",
            branching,
            bad.branching()
        )));
    }
    let tail_len = (seq.len() / 2).max(3).min(seq.len());
    let tail = &seq[seq.len() - tail_len..];
    let last = &tail[tail.len() - 1];
    if tail.iter().all(|v| v == last) {
        return Ok(LimitClass::Interior(last.clone()));
    }
    let first_tail: Vec<&TreeVertex> = tail.iter().map(|v| v.first()).collect();
    let second_tail: Vec<&TreeVertex> = tail.iter().map(|v| v.second()).collect();
    let t1 = component_trend(&first_tail)?;
    let t2 = component_trend(&second_tail)?;
    let c = compactification;
    let class = match (t1, t2) {
        (Trend::ToEnd(e), Trend::ToOmega) => {
            LimitClass::Boundary(BoundaryPoint::first_end(c, e)?)
        }
        (Trend::ToOmega, Trend::ToEnd(e)) => {
            LimitClass::Boundary(BoundaryPoint::second_end(c, e)?)
        }
        (Trend::Fixed(y1), Trend::ToOmega) => {
            LimitClass::Boundary(BoundaryPoint::first_vertex(c, y1))
        }
        (Trend::ToOmega, Trend::Fixed(y2)) => {
            LimitClass::Boundary(BoundaryPoint::second_vertex(c, y2))
        }
        (Trend::ToOmega, Trend::ToOmega) => match c {
            Compactification::Geometric => LimitClass::Boundary(BoundaryPoint::omega_pair()),
            Compactification::Horocyclic => match level_trend(&first_tail) {
                Some(k) => LimitClass::Boundary(BoundaryPoint::omega_pair_at(k)),
                None => LimitClass::Undecided,
            },
        },
        _ => LimitClass::Undecided,
    };
    Ok(class)
}

// ---------------------------------------------------------------------------
// Harmonicity checking.
// ---------------------------------------------------------------------------

/// Arithmetic the residuals were computed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualMode {
    /// Rational or quadratic-extension arithmetic; a zero is a proof.
    Exact,
    /// Floating point; zero only up to [`HARMONIC_FLOAT_TOL`].
    Float,
}

/// Result of a [`check_harmonic`] scan.
#[derive(Clone, Debug)]
pub struct HarmonicReport {
    /// Largest `|P h(x) - t h(x)|` over the region (as a float, whatever
    /// the arithmetic).
    pub max_residual: f64,
    /// Number of region vertices scanned.
    pub vertices_checked: u64,
    /// Arithmetic the scan ran in.
    pub mode: ResidualMode,
    /// The eigenvalue tested.
    pub t: f64,
    /// Exact mode only: every residual was literally zero.
    pub exactly_zero: bool,
    /// A vertex with nonzero residual, when one exists.
    pub witness: Option<DLVertex>,
}

impl HarmonicReport {
    /// Whether the scan certifies `P h = t h` on the region: exact zero in
    /// exact mode, residual within [`HARMONIC_FLOAT_TOL`] in float mode.
    pub fn is_harmonic(&self) -> bool {
        match self.mode {
            ResidualMode::Exact => self.exactly_zero,
            ResidualMode::Float => self.max_residual <= HARMONIC_FLOAT_TOL,
        }
    }
}

/// Scans `|P h - t h|` over the ball of the given radius around `center`.
///
/// `P h(x)` sums `h` over the neighbours of `x`, upward moves weighted
/// `alpha / q` and downward moves `(1 - alpha) / r`, so `h` must evaluate on
/// the ball and its neighbour shell; a failing evaluation is reported as an
/// incomplete-region error. In an exact scalar a zero maximum is a proof of
/// `t`-harmonicity on the region; pass `t = 1` for plain harmonicity.
pub fn check_harmonic<S, H>(
    h: H,
    center: &DLVertex,
    radius: u64,
    v: &ParamView<S>,
    t: &S,
) -> Result<HarmonicReport>
where
    S: Scalar + Send + Sync,
    H: Fn(&DLVertex) -> Result<S> + Sync,
{
    if center.branching() != (v.q, v.r) {
        return Err(DlmlError::Incompatible(format!(
            "region on DL{:?} but parameters for DL(({}, {}))",
            center.branching(),
            v.q,
            v.r
        )));
    }
    let region = dl_ball(center, radius);
    let up_w = v.alpha.clone() / S::from_ratio(v.q as i64, 1);
    let down_w = (S::one() - v.alpha.clone()) / S::from_ratio(v.r as i64, 1);
    let evaluate = |x: &DLVertex| -> Result<S> {
        h(x).map_err(|e| {
            DlmlError::Domain(format!(
                "incomplete region: the function failed at {x} ({e})"
            ))
        })
    };
    let residuals: Vec<(f64, bool)> = region
        .par_iter()
        .map(|x| {
            let mut acc = -(t.clone() * evaluate(x)?);
            for (i, nb) in x.neighbours().iter().enumerate() {
                let w = if i < v.q as usize {
                    up_w.clone()
                } else {
                    down_w.clone()
                };
                acc = acc + w * evaluate(nb)?;
            }
            Ok((acc.to_f64().abs(), Scalar::is_zero(&acc)))
        })
        .collect::<Result<_>>()?;
    let mut max_residual = 0.0f64;
    let mut witness = None;
    let mut exactly_zero = true;
    for (i, (res, zero)) in residuals.iter().enumerate() {
        if !zero {
            exactly_zero = false;
            if witness.is_none() || *res > max_residual {
                witness = Some(region[i].clone());
            }
        }
        max_residual = max_residual.max(*res);
    }
    Ok(HarmonicReport {
        max_residual,
        vertices_checked: region.len() as u64,
        mode: if S::EXACT {
            ResidualMode::Exact
        } else {
            ResidualMode::Float
        },
        t: t.to_f64(),
        exactly_zero,
        witness,
    })
}

// ---------------------------------------------------------------------------
// Metric on the compactification.
// ---------------------------------------------------------------------------

/// Interior vertex or boundary point, as accepted by the metric.
#[derive(Clone, Debug, PartialEq)]
pub enum CompactPoint {
    /// An ordinary vertex.
    Interior(DLVertex),
    /// A boundary point.
    Boundary(BoundaryPoint),
}

impl From<DLVertex> for CompactPoint {
    fn from(v: DLVertex) -> Self {
        CompactPoint::Interior(v)
    }
}

impl From<BoundaryPoint> for CompactPoint {
    fn from(b: BoundaryPoint) -> Self {
        CompactPoint::Boundary(b)
    }
}

impl CompactPoint {
    /// The compactification the point commits to (`None` for interior
    /// vertices, which live in both).
    fn committed(&self) -> Option<Compactification> {
        match self {
            CompactPoint::Interior(_) => None,
            CompactPoint::Boundary(b) => Some(b.compactification()),
        }
    }

    /// Tree-component pair and height limit.
    fn parts(&self) -> (TreePoint, TreePoint, Option<ExtendedLevel>) {
        match self {
            CompactPoint::Interior(v) => (
                TreePoint::Vertex(v.first().clone()),
                TreePoint::Vertex(v.second().clone()),
                Some(ExtendedLevel::Finite(v.level())),
            ),
            CompactPoint::Boundary(b) => match b.kind() {
                BoundaryKind::FirstEnd(e) => (
                    TreePoint::End(e.clone()),
                    TreePoint::End(TreeEnd::Omega),
                    Some(ExtendedLevel::PlusInfinity),
                ),
                BoundaryKind::SecondEnd(e) => (
                    TreePoint::End(TreeEnd::Omega),
                    TreePoint::End(e.clone()),
                    Some(ExtendedLevel::MinusInfinity),
                ),
                BoundaryKind::OmegaPair(k) => (
                    TreePoint::End(TreeEnd::Omega),
                    TreePoint::End(TreeEnd::Omega),
                    *k,
                ),
                BoundaryKind::FirstVertex(y1) => (
                    TreePoint::Vertex(y1.clone()),
                    TreePoint::End(TreeEnd::Omega),
                    Some(ExtendedLevel::Finite(y1.level())),
                ),
                BoundaryKind::SecondVertex(y2) => (
                    TreePoint::End(TreeEnd::Omega),
                    TreePoint::Vertex(y2.clone()),
                    Some(ExtendedLevel::Finite(-y2.level())),
                ),
            },
        }
    }
}

/// Metric on the compactified graph: the end-separation kernels of the two
/// tree components plus, on the horocyclic compactification, the squashed
/// height difference `|k/(1+|k|) - k'/(1+|k'|)|` with the infinities
/// squashing to `+-1`.
///
/// Interior vertices belong to both compactifications; the height term is
/// dropped exactly when a geometric boundary point is involved. Mixing
/// geometric and horocyclic boundary points is an error.
pub fn horocyclic_metric(z: &CompactPoint, w: &CompactPoint) -> Result<f64> {
    let mode = match (z.committed(), w.committed()) {
        (Some(Compactification::Geometric), Some(Compactification::Horocyclic))
        | (Some(Compactification::Horocyclic), Some(Compactification::Geometric)) => {
            return Err(DlmlError::Incompatible(
                "one point is geometric, the other horocyclic".into(),
            ))
        }
        (Some(Compactification::Geometric), _) | (_, Some(Compactification::Geometric)) => {
            Compactification::Geometric
        }
        _ => Compactification::Horocyclic,
    };
    let (z1, z2, zk) = z.parts();
    let (w1, w2, wk) = w.parts();
    let mut total = end_metric_theta(&z1, &w1, ThetaVariant::Decaying)?
        + end_metric_theta(&z2, &w2, ThetaVariant::Decaying)?;
    if mode == Compactification::Horocyclic {
        // Geometric points never reach this arm, so both heights exist.
        let zk = zk.expect("horocyclic point carries a height");
        let wk = wk.expect("horocyclic point carries a height");
        total += (zk.squashed() - wk.squashed()).abs();
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Witness sequences.
// ---------------------------------------------------------------------------

/// An interior sequence converging to the boundary point, `depth` vertices
/// long. [`classify_limit`] recovers `b` from it, and Martin quotients
/// along it approach the boundary kernel.
pub fn witness_sequence(
    b: &BoundaryPoint,
    q: u8,
    r: u8,
    depth: u64,
) -> Result<Vec<DLVertex>> {
    check_payload_branching(b, q, r)?;
    if depth < 2 {
        return Err(DlmlError::InvalidInput(format!(
            "a witness sequence needs at least two vertices, got {depth}"
        )));
    }
    // A spine-climbing escape to omega at a prescribed height: level h,
    // word [1, 0, ..., 0] of length n.
    let escape = |branching: u8, h: i64, n: u64| -> Result<TreeVertex> {
        let mut word = vec![1u8];
        word.extend(std::iter::repeat(0).take(n as usize - 1));
        TreeVertex::new(branching, h, word)
    };
    let mut out = Vec::with_capacity(depth as usize);
    for n in 1..=depth {
        let v = match b.kind() {
            BoundaryKind::FirstEnd(e) => {
                let y1 = e.representative(n, q);
                let y2 = TreeVertex::new(r, -y1.level(), Vec::new())?;
                DLVertex::new(y1, y2)?
            }
            BoundaryKind::SecondEnd(e) => {
                let y2 = e.representative(n, r);
                let y1 = TreeVertex::new(q, -y2.level(), Vec::new())?;
                DLVertex::new(y1, y2)?
            }
            BoundaryKind::OmegaPair(None | Some(ExtendedLevel::Finite(_))) => {
                let k = match b.kind() {
                    BoundaryKind::OmegaPair(Some(ExtendedLevel::Finite(k))) => *k,
                    _ => 0,
                };
                DLVertex::new(escape(q, k, n)?, escape(r, -k, n)?)?
            }
            BoundaryKind::OmegaPair(Some(ExtendedLevel::PlusInfinity)) => {
                let h = n as i64;
                DLVertex::new(escape(q, h, 2 * n)?, escape(r, -h, 1)?)?
            }
            BoundaryKind::OmegaPair(Some(ExtendedLevel::MinusInfinity)) => {
                let h = -(n as i64);
                DLVertex::new(escape(q, h, 1)?, escape(r, -h, 2 * n)?)?
            }
            BoundaryKind::FirstVertex(y1) => {
                DLVertex::new(y1.clone(), escape(r, -y1.level(), n)?)?
            }
            BoundaryKind::SecondVertex(y2) => {
                DLVertex::new(escape(q, -y2.level(), n)?, y2.clone())?
            }
        };
        out.push(v);
    }
    Ok(out)
}
