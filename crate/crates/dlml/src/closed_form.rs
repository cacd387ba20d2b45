//! Closed forms for hitting probabilities, Green kernels and their
//! asymptotics.
//!
//! Everything here is driven by the relative position `(up1, dn1, up2, dn2)`
//! of an ordered vertex pair and by `beta = (1 - alpha) / alpha`:
//!
//! * tree hitting probabilities and the tree Green kernel for either
//!   projection of the walk;
//! * the two-barrier splitting probabilities of the height walk (the
//!   gambler's ruin quantities) and the height weight
//!   `psi(k) = (alpha r / ((1 - alpha) q))^k`;
//! * the exact decomposition of the Green kernel of `DL(q, r)` into the four
//!   extreme configurations of the same span;
//! * spherical kernels on the trees (radial eigenfunctions of the tree
//!   walk);
//! * the constants `A`, `B`, `B*` and the asymptotic Green kernel estimates
//!   in both the centred and drifted regimes, with a log-space evaluation
//!   for very distant pairs;
//! * resolvent conjugation: for `t >= rho` the `t`-resolvent quantities of
//!   `P_alpha` reduce to the plain quantities of a tilted walk `P_alpha(t)`,
//!   at the cost of passing to the quadratic extension generated by
//!   `sqrt(t^2 - rho^2)`.
//!
//! All rational formulas are generic over [`Scalar`], so they evaluate
//! exactly over rationals and quadratic extensions, or quickly over `f64`;
//! see [`ParamView`].

use num::rational::BigRational;
use num::Signed;

use crate::algebra::{big_ratio, rational_to_f64, QuadRat, Scalar};
use crate::dl::{BaseCase, RelPos};
use crate::error::{DlmlError, Result};
use crate::walk::WalkParams;

/// Selects one of the two tree projections of the walk.
///
/// The first projection moves away from its reference end with total mass
/// `alpha` split over `q` successors; the second swaps `alpha` with
/// `1 - alpha` and `q` with `r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeSide {
    /// Projection onto `T_q`.
    First,
    /// Projection onto `T_r`.
    Second,
}

/// Walk parameters embedded into a scalar field `S`.
///
/// This is the parameter object the kernel formulas consume. It is obtained
/// from [`WalkParams::view`] (exact rational parameters) or from a
/// [`Conjugation`] (tilted parameters living in a quadratic extension).
#[derive(Clone, Debug)]
pub struct ParamView<S: Scalar> {
    /// Upward step probability.
    pub alpha: S,
    /// First-tree branching.
    pub q: u8,
    /// Second-tree branching.
    pub r: u8,
}

impl WalkParams {
    /// Embeds the parameters into a scalar field.
    pub fn view<S: Scalar>(&self) -> ParamView<S> {
        ParamView {
            alpha: S::from_rational(self.alpha()),
            q: self.q(),
            r: self.r(),
        }
    }
}

impl<S: Scalar> ParamView<S> {
    /// `beta = (1 - alpha) / alpha`.
    pub fn beta(&self) -> S {
        (S::one() - self.alpha.clone()) / self.alpha.clone()
    }

    /// Exact test for `alpha = 1/2`.
    pub fn is_centred(&self) -> bool {
        self.alpha == S::from_ratio(1, 2)
    }

    /// Upward mass and branching of a projection.
    fn side(&self, side: TreeSide) -> (S, u8) {
        match side {
            TreeSide::First => (self.alpha.clone(), self.q),
            TreeSide::Second => (S::one() - self.alpha.clone(), self.r),
        }
    }

    /// Height weight `psi(k) = (alpha r / ((1 - alpha) q))^k`, the density
    /// of the reversing measure along the height.
    pub fn height_weight(&self, k: i64) -> S {
        let base = self.alpha.clone() * S::from_ratio(self.r as i64, self.q as i64)
            / (S::one() - self.alpha.clone());
        base.powi(k)
    }
}

/// Probability that the tree projection ever moves one level towards its
/// reference end (hits the predecessor of its starting point):
/// `min(1, (1 - a) / a)` for upward mass `a`.
pub fn ascent_hit_prob<S: Scalar>(side: TreeSide, v: &ParamView<S>) -> S {
    let (a, _) = v.side(side);
    let ratio = (S::one() - a.clone()) / a;
    if ratio > S::one() {
        S::one()
    } else {
        ratio
    }
}

/// Probability that the tree projection ever hits one fixed successor of
/// its starting point: `a / ((1 - a) b)` when `a <= 1/2`, else `1 / b`.
pub fn descent_hit_prob<S: Scalar>(side: TreeSide, v: &ParamView<S>) -> S {
    let (a, b) = v.side(side);
    let b = S::from_ratio(b as i64, 1);
    if a <= S::from_ratio(1, 2) {
        a.clone() / ((S::one() - a) * b)
    } else {
        S::one() / b
    }
}

/// Probability that the tree projection ever hits the vertex `up` levels up
/// and `dn` fixed successor steps down from its start: the hit
/// probabilities multiply along the geodesic.
pub fn tree_hitting_prob<S: Scalar>(up: u64, dn: u64, side: TreeSide, v: &ParamView<S>) -> S {
    ascent_hit_prob(side, v).powi(up as i64) * descent_hit_prob(side, v).powi(dn as i64)
}

/// Green kernel of the tree projection at relative position `(up, dn)`:
/// the hitting probability times the expected number of returns,
/// `b / ((b + 1) max(a, 1 - a) - 1)`.
pub fn tree_green<S: Scalar>(up: u64, dn: u64, side: TreeSide, v: &ParamView<S>) -> S {
    let (a, b) = v.side(side);
    let a_max = if a >= S::from_ratio(1, 2) {
        a.clone()
    } else {
        S::one() - a.clone()
    };
    let b_s = S::from_ratio(b as i64, 1);
    let on_diagonal = b_s.clone() / ((b_s + S::one()) * a_max - S::one());
    tree_hitting_prob(up, dn, side, v) * on_diagonal
}

/// Two-barrier splitting probabilities of the height walk started at 0:
/// `(hit -k before +l, hit +l before -k)`.
///
/// Both barriers at distance zero is degenerate. A single zero distance
/// means the corresponding barrier is hit immediately: `k = 0` gives
/// `(1, 0)` and `l = 0` gives `(0, 1)`, which is also what the closed forms
/// evaluate to.
pub fn barrier_hit_split<S: Scalar>(k: u64, l: u64, v: &ParamView<S>) -> Result<(S, S)> {
    if k == 0 && l == 0 {
        return Err(DlmlError::Degenerate(
            "both barriers of the height walk at distance zero".into(),
        ));
    }
    if v.is_centred() {
        let total = (k + l) as i64;
        return Ok((
            S::from_ratio(l as i64, total),
            S::from_ratio(k as i64, total),
        ));
    }
    let beta = v.beta();
    let bk = beta.powi(k as i64);
    let bkl = beta.powi((k + l) as i64);
    let den = bkl.clone() - S::one();
    let low = (bkl - bk.clone()) / den.clone();
    let high = (bk - S::one()) / den;
    Ok((low, high))
}

/// Coefficients of the Green kernel decomposition: the kernel at any
/// relative position of span `s >= 1` is the dot product of these four
/// coefficients with the kernel values at the four extreme positions
/// ([`BaseCase`]) of the same span, ordered `I, II, III, IV`.
pub fn green_decompose_coefficients<S: Scalar>(
    rel: &RelPos,
    v: &ParamView<S>,
) -> Result<[S; 4]> {
    if rel.span() == 0 {
        return Err(DlmlError::Degenerate(
            "decomposition needs span >= 1".into(),
        ));
    }
    let (asc_first, asc_second) = barrier_hit_split(rel.up1, rel.up2, v)?;
    let (dsc_first, dsc_second) = barrier_hit_split(rel.dn1, rel.dn2, v)?;
    let w_dn1 = v.height_weight(rel.dn1 as i64);
    let w_neg_dn2 = v.height_weight(-(rel.dn2 as i64));
    Ok([
        asc_first.clone() * dsc_first.clone() * w_dn1.clone(),
        asc_first * dsc_second.clone() * w_dn1,
        asc_second.clone() * dsc_first * w_neg_dn2.clone(),
        asc_second * dsc_second * w_neg_dn2,
    ])
}

/// Evaluates the decomposition against given values at the four extreme
/// positions of the same span (ordered `I, II, III, IV`).
pub fn green_decompose<S: Scalar>(
    rel: &RelPos,
    base_values: &[S; 4],
    v: &ParamView<S>,
) -> Result<S> {
    let coeff = green_decompose_coefficients(rel, v)?;
    let mut acc = S::zero();
    for (c, g) in coeff.into_iter().zip(base_values.iter()) {
        acc = acc + c * g.clone();
    }
    Ok(acc)
}

/// Spherical kernel of the tree projection: the radial eigenfunction of the
/// tree walk, evaluated at relative position `(up, dn)`. It is harmonic for
/// the projection everywhere (including at the base point), unlike the
/// Green kernel.
pub fn spherical_kernel<S: Scalar>(up: u64, dn: u64, side: TreeSide, v: &ParamView<S>) -> S {
    let (a, b) = v.side(side);
    let b_s = S::from_ratio(b as i64, 1);
    let half = S::from_ratio(1, 2);
    let dn_i = dn as i64;
    let up_i = up as i64;
    if a == half {
        // (1/b^dn) ((b+1)/(b-1) + up + dn)
        let lead = (b_s.clone() + S::one()) / (b_s.clone() - S::one());
        b_s.powi(-dn_i) * (lead + S::from_ratio((up + dn) as i64, 1))
    } else if a < half {
        // beta' > 1.
        let beta = (S::one() - a.clone()) / a;
        let bb2 = b_s.clone() * beta.clone() * beta.clone();
        let lead = (b_s * beta.clone() + S::one()) / (bb2.clone() - S::one());
        let ramp = |m: i64| -> S {
            (beta.powi(m) - S::one()) / (beta.clone() - S::one())
        };
        bb2.powi(-dn_i) * (lead + ramp(up_i) + ramp(dn_i))
    } else {
        // beta' < 1.
        let beta = (S::one() - a.clone()) / a;
        let inv = S::one() / beta.clone();
        let lead = (b_s.clone() * inv.clone() + S::one())
            / (b_s.clone() * inv.clone() * inv.clone() - S::one());
        let ramp = |m: i64| -> S {
            (beta.powi(-m) - S::one()) / (inv.clone() - S::one())
        };
        beta.powi(up_i + dn_i) * b_s.powi(-dn_i) * (lead + ramp(up_i) + ramp(dn_i))
    }
}

/// Green kernel of the height walk, `sum_n P[height_n = k]` from height 0.
///
/// Defined for drifted walks only (the centred height walk is recurrent).
pub fn line_green(k: i64, p: &WalkParams) -> Result<BigRational> {
    if p.is_centred() {
        return Err(DlmlError::Domain(
            "the centred height walk is recurrent; its Green kernel diverges".into(),
        ));
    }
    let alpha = p.alpha().clone();
    let beta = p.beta();
    let origin = (big_ratio(1, 1)
        - big_ratio(2, 1) * alpha.clone())
    .abs()
    .recip();
    // Probability of ever moving one step towards the barrier direction.
    let climb = if beta > big_ratio(1, 1) {
        beta.recip()
    } else {
        big_ratio(1, 1)
    };
    let fall = if beta < big_ratio(1, 1) {
        beta.clone()
    } else {
        big_ratio(1, 1)
    };
    let reach = if k >= 0 {
        Scalar::powi(&climb, k)
    } else {
        Scalar::powi(&fall, -k)
    };
    Ok(origin * reach)
}

/// The constants of the asymptotic Green kernel estimates, kept as exact
/// rationals. Defined for `alpha <= 1/2`; the drift-reversed regime is
/// reached through the height-weight exchange (see [`asym_green_ln`]).
#[derive(Clone, Debug)]
pub struct AsymptoticConstants {
    a: BigRational,
    b: BigRational,
    b_star: BigRational,
    tree_green_first: BigRational,
    tree_green_second: BigRational,
    line_green_origin: BigRational,
}

impl AsymptoticConstants {
    /// Computes the constants for `alpha <= 1/2`.
    pub fn for_params(p: &WalkParams) -> Result<Self> {
        if *p.alpha() > big_ratio(1, 2) {
            return Err(DlmlError::Domain(
                "asymptotic constants are defined for alpha <= 1/2; flip the drift first"
                    .into(),
            ));
        }
        let view: ParamView<BigRational> = p.view();
        let g1 = tree_green(0, 0, TreeSide::First, &view);
        let g2 = tree_green(0, 0, TreeSide::Second, &view);
        let (line_green_origin, a) = if p.is_centred() {
            // The expected time the centred height walk spends at 0 before
            // the span grows is 2 in the normalization of the estimates.
            let two = big_ratio(2, 1);
            (two.clone(), g1.clone() * g2.clone() / two)
        } else {
            let lg = line_green(0, p)?;
            (lg.clone(), g1.clone() * g2.clone() / lg)
        };
        let (q, r) = (big_ratio(p.q() as i64, 1), big_ratio(p.r() as i64, 1));
        let (b, b_star) = if p.is_centred() {
            (
                (q.clone() + big_ratio(1, 1)) / (q - big_ratio(1, 1)),
                (r.clone() + big_ratio(1, 1)) / (r - big_ratio(1, 1)),
            )
        } else {
            let beta = p.beta();
            let one = big_ratio(1, 1);
            let b = (beta.clone() - one.clone()) * (q.clone() * beta.clone() + one.clone())
                / (q * beta.clone() * beta.clone() - one.clone());
            let b_star = (beta.clone() - one.clone())
                * (r.clone() * beta.clone() + one.clone())
                / (r * beta.clone() * beta - one);
            (b, b_star)
        };
        Ok(AsymptoticConstants {
            a,
            b,
            b_star,
            tree_green_first: g1,
            tree_green_second: g2,
            line_green_origin,
        })
    }

    /// Leading constant `A = G1 G2 / line factor`.
    pub fn a(&self) -> &BigRational {
        &self.a
    }

    /// First-tree boundary constant `B`.
    pub fn b(&self) -> &BigRational {
        &self.b
    }

    /// Second-tree boundary constant `B*`.
    pub fn b_star(&self) -> &BigRational {
        &self.b_star
    }

    /// Tree Green kernel `G1` at coincident points.
    pub fn tree_green_first(&self) -> &BigRational {
        &self.tree_green_first
    }

    /// Tree Green kernel `G2` at coincident points.
    pub fn tree_green_second(&self) -> &BigRational {
        &self.tree_green_second
    }

    /// Height-walk factor in the definition of `A` (the height Green kernel
    /// at the origin for drifted walks, `2` for centred ones).
    pub fn line_green_origin(&self) -> &BigRational {
        &self.line_green_origin
    }
}

/// Natural logarithm of the asymptotic Green kernel estimate at a relative
/// position. Evaluates stably for spans far beyond float range of the
/// kernel itself.
///
/// For `alpha > 1/2` the estimate is obtained from the flipped walk through
/// the exchange identity
/// `G_alpha(x, y) = beta^{up1 - dn1} G_{1 - alpha}(x, y)`.
pub fn asym_green_ln(rel: &RelPos, p: &WalkParams) -> Result<f64> {
    let s = rel.span();
    if s == 0 {
        return Err(DlmlError::Degenerate(
            "asymptotic estimates need span >= 1".into(),
        ));
    }
    if *p.alpha() > big_ratio(1, 2) {
        let flipped = p.drift_flipped();
        let correction =
            (rel.up1 as f64 - rel.dn1 as f64) * rational_to_f64(&p.beta()).ln();
        return Ok(correction + asym_green_ln(rel, &flipped)?);
    }
    let consts = AsymptoticConstants::for_params(p)?;
    let ln_a = rational_to_f64(consts.a()).ln();
    let ln_q = (p.q() as f64).ln();
    let ln_r = (p.r() as f64).ln();
    let (up1, dn1, up2, dn2) = (
        rel.up1 as f64,
        rel.dn1 as f64,
        rel.up2 as f64,
        rel.dn2 as f64,
    );
    let sf = s as f64;
    if p.is_centred() {
        let bq = rational_to_f64(consts.b());
        let br = rational_to_f64(consts.b_star());
        let poly = bq * up2 * dn2 + sf * up2 * dn1 + sf * up1 * dn2 + br * up1 * dn1;
        Ok(ln_a - 4.0 * sf.ln() - dn1 * ln_q - dn2 * ln_r + poly.ln())
    } else {
        let ln_beta = rational_to_f64(&p.beta()).ln();
        // Factors (beta^s - beta^v)/(beta^s - 1) and
        // (beta^v - 1)/(beta^s - 1), in log space.
        let ln_denom = ln_one_minus_exp(-sf * ln_beta);
        let ln_hi = |vv: f64| -> f64 {
            if vv == sf {
                f64::NEG_INFINITY
            } else {
                ln_one_minus_exp((vv - sf) * ln_beta) - ln_denom
            }
        };
        let ln_lo = |vv: f64| -> f64 {
            if vv == 0.0 {
                f64::NEG_INFINITY
            } else {
                (vv - sf) * ln_beta + ln_one_minus_exp(-vv * ln_beta) - ln_denom
            }
        };
        let ln_b = rational_to_f64(consts.b()).ln();
        let ln_b_star = rational_to_f64(consts.b_star()).ln();
        let terms = [
            ln_b + ln_hi(up1) + ln_hi(dn1) - sf * ln_beta,
            ln_hi(up1) + ln_lo(dn1),
            ln_lo(up1) + ln_hi(dn1),
            ln_b_star + ln_lo(up1) + ln_lo(dn1),
        ];
        let ln_qb = ln_q + ln_beta;
        Ok(ln_a - dn1 * ln_qb - dn2 * ln_r + ln_sum_exp(&terms))
    }
}

/// `ln(1 - e^x)` for `x < 0`, stable near both ends.
fn ln_one_minus_exp(x: f64) -> f64 {
    debug_assert!(x < 0.0);
    if x > -0.693 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Log-sum-exp, ignoring `-inf` entries.
fn ln_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms.iter().map(|&t| (t - m).exp()).sum();
    m + sum.ln()
}

/// The asymptotic Green kernel estimate itself (may underflow to zero for
/// very distant pairs; use [`asym_green_ln`] then).
pub fn asym_green(rel: &RelPos, p: &WalkParams) -> Result<f64> {
    Ok(asym_green_ln(rel, p)?.exp())
}

/// Asymptotic estimate at one of the four extreme positions of a span.
pub fn asym_base_case(case: BaseCase, span: u64, p: &WalkParams) -> Result<f64> {
    asym_green(&RelPos::of_case(case, span), p)
}

/// Resolvent conjugation data at `t >= rho`: the tilted upward probability
/// `alpha(t)` and the eigenvalue root `lambda(t)`, with
/// `alpha lambda^2 - t lambda + (1 - alpha) = 0`, so that
/// `h(x) = lambda^{hor(x1)}` satisfies `P h = t h` and
/// `p(x, y) lambda^{hor(y1) - hor(x1)} / t` is the one-step kernel of the
/// tilted walk.
#[derive(Clone, Debug)]
pub struct Conjugation {
    t: QuadRat,
    alpha_t: QuadRat,
    lambda: QuadRat,
    q: u8,
    r: u8,
}

/// Builds the conjugation for a rational `t`. Fails for `t < rho` (no
/// positive eigenfunction there) and for nonpositive `t`.
pub fn conjugation(p: &WalkParams, t: &BigRational) -> Result<Conjugation> {
    if *t <= big_ratio(0, 1) {
        return Err(DlmlError::Domain(format!(
            "resolvent parameter must be positive, got {t}"
        )));
    }
    let disc = t * t - p.rho_squared();
    if disc < big_ratio(0, 1) {
        return Err(DlmlError::Domain(format!(
            "no positive eigenfunction below the spectral radius: t = {t} < rho"
        )));
    }
    let root = QuadRat::sqrt_of_rational(&disc)?;
    let t_q = QuadRat::from_big(t.clone());
    let alpha_q = QuadRat::from_big(p.alpha().clone());
    let two = <QuadRat as Scalar>::from_ratio(2, 1);
    let lambda = (t_q.clone() - root.clone()) / (two.clone() * alpha_q);
    let alpha_t = (t_q.clone() - root) / (two * t_q.clone());
    Ok(Conjugation {
        t: t_q,
        alpha_t,
        lambda,
        q: p.q(),
        r: p.r(),
    })
}

/// Builds the conjugation at `t = rho` itself. The discriminant vanishes
/// there, so the tilt is centred (`alpha(rho) = 1/2` exactly) and
/// `lambda = rho / (2 alpha)` lives in the quadratic extension generated by
/// `rho = 2 sqrt(alpha (1 - alpha))`.
pub fn conjugation_at_rho(p: &WalkParams) -> Result<Conjugation> {
    let rho = QuadRat::sqrt_of_rational(&p.rho_squared())?;
    let two_alpha = QuadRat::from_big(big_ratio(2, 1) * p.alpha());
    Ok(Conjugation {
        t: rho.clone(),
        alpha_t: <QuadRat as Scalar>::from_ratio(1, 2),
        lambda: rho / two_alpha,
        q: p.q(),
        r: p.r(),
    })
}

impl Conjugation {
    /// The resolvent parameter (rational except at `t = rho` with an
    /// irrational spectral radius).
    pub fn t(&self) -> &QuadRat {
        &self.t
    }

    /// Tilted upward probability `alpha(t) = (t - sqrt(t^2 - rho^2)) / (2t)`.
    pub fn alpha_t(&self) -> &QuadRat {
        &self.alpha_t
    }

    /// Eigenvalue root `lambda(t) = (t - sqrt(t^2 - rho^2)) / (2 alpha)`.
    pub fn lambda(&self) -> &QuadRat {
        &self.lambda
    }

    /// Parameters of the tilted walk in the quadratic extension.
    pub fn tilted_view(&self) -> ParamView<QuadRat> {
        ParamView {
            alpha: self.alpha_t.clone(),
            q: self.q,
            r: self.r,
        }
    }

    /// Tilted walk parameters as exact rationals, when the discriminant is
    /// a perfect square.
    pub fn tilted_params(&self) -> Option<WalkParams> {
        let alpha = self.alpha_t.as_rational()?;
        WalkParams::new(alpha.clone(), self.q, self.r).ok()
    }

    /// Scales a tilted Green value back to the `t`-resolvent of the
    /// original walk: multiplies by `lambda^{hor(x1) - hor(y1)}`, where the
    /// height change is `dn1 - up1`.
    pub fn green_scale(&self, level_change: i64) -> QuadRat {
        self.lambda.powi(-level_change)
    }
}
