//! Command line around the experiment drivers: closed-form constant tables,
//! Green values, Martin quotient tables, the Harnack ratio table,
//! asymptotics convergence tables and a fast self-check battery.
//!
//! Exit codes: 0 when the run (and every check, for `verify`) succeeded,
//! 1 when a `verify` check failed, 2 on usage or configuration errors.

use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use num::BigRational;

use dlml::algebra::{big_ratio, Scalar};
use dlml::boundary::{
    boundary_kernel_in, check_harmonic, BoundaryPoint, Compactification, ExtendedLevel,
};
use dlml::closed_form::{
    ascent_hit_prob, descent_hit_prob, green_decompose, tree_green, AsymptoticConstants,
    ParamView, TreeSide,
};
use dlml::dl::{bfs_distances, rel_position, BaseCase, DLVertex, LampConfig, RelPos};
use dlml::error::{DlmlError, Result};
use dlml::experiment::{
    emit_table, formula_table, run_asym_convergence, run_harnack, run_martin_convergence,
    BackendKind, CaseFamily, ExperimentConfig, GreenRow, OutputFormat,
};
use dlml::green::{asym_estimate, green_ball_exact, green_monte_carlo_class, BallMode};
use dlml::tree::{TreeEnd, TreeVertex};
use dlml::walk::WalkParams;

#[derive(Parser)]
#[command(
    name = "dlml",
    version,
    about = "Green kernels, asymptotic estimates and Martin kernels for \
             random walks with drift on Diestel-Leader graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Walk selection shared by most subcommands.
#[derive(Args)]
struct WalkArgs {
    /// Ascent probability: a rational like 1/3 or a decimal like 0.4.
    #[arg(long, default_value = "1/2")]
    alpha: String,
    /// First-tree branching.
    #[arg(long, default_value_t = 2)]
    q: u8,
    /// Second-tree branching.
    #[arg(long, default_value_t = 2)]
    r: u8,
}

/// Numeric backend selection and knobs.
#[derive(Args)]
struct BackendArgs {
    /// Backend: ball (exact solve on a finite ball), mc (seeded Monte
    /// Carlo) or asym (closed asymptotic estimate).
    #[arg(long, default_value = "ball")]
    backend: String,
    /// Ball radius for the ball backend.
    #[arg(long, default_value_t = 12)]
    radius: u64,
    /// Monte Carlo sample count.
    #[arg(long = "N", default_value_t = 1_000_000)]
    n: u64,
    /// Monte Carlo horizon; defaults to a per-span choice.
    #[arg(long = "t-max")]
    t_max: Option<u64>,
    /// Monte Carlo seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Table destination and format.
#[derive(Args)]
struct OutputArgs {
    /// Output file; omitted means standard output.
    #[arg(long)]
    out: Option<String>,
    /// Output format: csv or jsonl.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Print the closed-form values of a walk: drift and spectral data,
    /// hitting probabilities, origin Green values and estimate constants.
    Formulas {
        #[command(flatten)]
        walk: WalkArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Green values at explicit relative positions.
    Green {
        #[command(flatten)]
        walk: WalkArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// First-tree ascent of one explicit relative position.
        #[arg(long)]
        up1: Option<u64>,
        /// First-tree descent of the position.
        #[arg(long)]
        dn1: Option<u64>,
        /// Second-tree ascent of the position.
        #[arg(long)]
        up2: Option<u64>,
        /// Second-tree descent of the position.
        #[arg(long)]
        dn2: Option<u64>,
        /// Base-case family to sweep instead of one explicit position
        /// (I, II, III, IV or mixed); needs --span-list.
        #[arg(long)]
        case: Option<String>,
        /// Spans for --case, comma separated.
        #[arg(long = "span-list", value_delimiter = ',')]
        span_list: Vec<u64>,
    },
    /// Finite Martin quotients along the witness sequence of a boundary
    /// point, against the boundary kernel they converge to.
    Martin {
        #[command(flatten)]
        walk: WalkArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Observation vertex, written <tree>|<tree> as in
        /// "q=2;h=0;w=|q=2;h=0;w=".
        #[arg(long)]
        x: String,
        /// Boundary point as JSON, e.g.
        /// {"compactification":"geometric","kind":"omega_pair"} or
        /// {"compactification":"horocyclic","kind":"omega_pair","k":0} or
        /// {"compactification":"geometric","kind":"first_end",
        ///  "payload":"end:q=2;h=0;w=1"}.
        #[arg(long)]
        boundary: String,
        /// Witness sequence depths, comma separated.
        #[arg(long = "depth-list", value_delimiter = ',', default_values_t = [2u64, 4, 8, 16, 32])]
        depth_list: Vec<u64>,
    },
    /// Green ratio G(o,x)/G(o,y) over point pairs at equal distance, one
    /// deep below the origin and one on its horocycle. The ratio tends to
    /// zero, so no Harnack-type constant can compare the two.
    Harnack {
        /// Branching of both trees (the table needs q = r).
        #[arg(long, default_value_t = 2)]
        q: u8,
        /// Second-tree branching; must equal q.
        #[arg(long, default_value_t = 2)]
        r: u8,
        /// Scales R, comma separated; x sits at distance 2R deep, y at
        /// distance 2R on the origin's horocycle.
        #[arg(long = "R", value_delimiter = ',', required = true)]
        scale_list: Vec<u64>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Numeric Green values against the closed asymptotic estimate along a
    /// base-case family, one row per span.
    Converge {
        #[command(flatten)]
        walk: WalkArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Family: I, II, III, IV or mixed.
        #[arg(long, default_value = "II")]
        case: String,
        /// Spans, comma separated.
        #[arg(long = "span-list", value_delimiter = ',', required = true)]
        span_list: Vec<u64>,
    },
    /// Fast self-checks: exact identities, codec round-trips, solver and
    /// sampler cross-checks. Exits 1 if any check fails.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Formulas { walk, output } => {
            let config = build_config(&walk, None, &output, Vec::new())?;
            let rows = formula_table(&config.params()?)?;
            emit_table(&config, &rows)?;
        }
        Command::Green {
            walk,
            backend,
            output,
            up1,
            dn1,
            up2,
            dn2,
            case,
            span_list,
        } => {
            let positions = green_positions(up1, dn1, up2, dn2, case, &span_list)?;
            let spans = positions.iter().map(RelPos::span).collect();
            let config = build_config(&walk, Some(&backend), &output, spans)?;
            let p = config.params()?;
            let mut rows = Vec::with_capacity(positions.len());
            for rel in &positions {
                let est = match config.backend {
                    BackendKind::Asym => asym_estimate(rel, &p)?,
                    _ => config.green_backend()?.estimate(rel, &p)?,
                };
                rows.push(GreenRow::new(rel, &est));
            }
            emit_table(&config, &rows)?;
        }
        Command::Martin {
            walk,
            backend,
            output,
            x,
            boundary,
            depth_list,
        } => {
            let config = build_config(&walk, Some(&backend), &output, depth_list.clone())?;
            let p = config.params()?;
            let x: DLVertex = x.parse()?;
            let b = parse_boundary(&boundary)?;
            let rows = run_martin_convergence(&x, &b, &depth_list, &p, &config.kernel_backend())?;
            emit_table(&config, &rows)?;
        }
        Command::Harnack {
            q,
            r,
            scale_list,
            backend,
            output,
        } => {
            let walk = WalkArgs {
                alpha: "1/2".to_string(),
                q,
                r,
            };
            let config = build_config(&walk, Some(&backend), &output, scale_list.clone())?;
            let numeric = match config.backend {
                BackendKind::Asym => None,
                _ => Some(config.green_backend()?),
            };
            let rows = run_harnack(q, r, &scale_list, numeric.as_ref())?;
            emit_table(&config, &rows)?;
        }
        Command::Converge {
            walk,
            backend,
            output,
            case,
            span_list,
        } => {
            let family: CaseFamily = case.parse()?;
            let config = build_config(&walk, Some(&backend), &output, span_list.clone())?;
            let rows = run_asym_convergence(
                &config.params()?,
                family,
                &span_list,
                &config.green_backend()?,
            )?;
            emit_table(&config, &rows)?;
        }
        Command::Verify => return Ok(run_verify()),
    }
    Ok(ExitCode::SUCCESS)
}

/// Assembles and validates the embedded configuration record.
fn build_config(
    walk: &WalkArgs,
    backend: Option<&BackendArgs>,
    output: &OutputArgs,
    list: Vec<u64>,
) -> Result<ExperimentConfig> {
    let kind = match backend {
        Some(b) => BackendKind::from_str(&b.backend)?,
        None => BackendKind::Asym,
    };
    let mut config = ExperimentConfig::new(&walk.alpha, walk.q, walk.r, kind);
    config.list = list;
    if let Some(b) = backend {
        config.radius = b.radius;
        config.n = b.n;
        config.t_max = b.t_max;
        config.seed = b.seed;
    }
    config.out = output.out.clone();
    config.format = OutputFormat::from_str(&output.format)?;
    config.validate()?;
    Ok(config)
}

/// Resolves the `green` position flags: either one explicit relative
/// position or a base-case family swept over a span list.
fn green_positions(
    up1: Option<u64>,
    dn1: Option<u64>,
    up2: Option<u64>,
    dn2: Option<u64>,
    case: Option<String>,
    span_list: &[u64],
) -> Result<Vec<RelPos>> {
    let explicit = [up1, dn1, up2, dn2];
    match (explicit.iter().all(Option::is_some), case) {
        (true, None) => {
            if !span_list.is_empty() {
                return Err(DlmlError::InvalidInput(
                    "--span-list only combines with --case".into(),
                ));
            }
            Ok(vec![RelPos::new(
                up1.unwrap(),
                dn1.unwrap(),
                up2.unwrap(),
                dn2.unwrap(),
            )?])
        }
        (false, Some(case)) if explicit.iter().all(Option::is_none) => {
            let family: CaseFamily = case.parse()?;
            if span_list.is_empty() {
                return Err(DlmlError::InvalidInput(
                    "--case needs a nonempty --span-list".into(),
                ));
            }
            span_list.iter().map(|&s| family.rel(s)).collect()
        }
        _ => Err(DlmlError::InvalidInput(
            "pick a position: either all of --up1 --dn1 --up2 --dn2, \
             or --case with --span-list"
                .into(),
        )),
    }
}

/// Parses a boundary point from its JSON text form.
fn parse_boundary(text: &str) -> Result<BoundaryPoint> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| DlmlError::Parse(format!("bad boundary JSON: {e}")))?;
    BoundaryPoint::from_json(&value)
}

// ---------------------------------------------------------------------------
// Self-checks.

type CheckResult = std::result::Result<(), String>;

fn run_verify() -> ExitCode {
    let checks: [(&str, fn() -> CheckResult); 8] = [
        ("distance_formula_vs_bfs", verify_distances),
        ("degree_is_q_plus_r", verify_degrees),
        ("lamplighter_codec", verify_lamplighter),
        ("first_passage_identities", verify_first_passage),
        ("constant_identities", verify_constants),
        ("kernel_harmonicity", verify_harmonicity),
        ("green_decomposition", verify_decomposition),
        ("mc_reproducibility", verify_mc),
    ];
    let mut failures = 0u32;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("check {name}: PASS"),
            Err(why) => {
                failures += 1;
                println!("check {name}: FAIL ({why})");
            }
        }
    }
    if failures == 0 {
        println!("all checks passed");
        ExitCode::SUCCESS
    } else {
        println!("{failures} check(s) failed");
        ExitCode::from(1)
    }
}

fn fail(msg: impl Into<String>) -> CheckResult {
    Err(msg.into())
}

fn errstr(e: DlmlError) -> String {
    e.to_string()
}

/// The closed distance formula agrees with breadth-first search distances
/// on a radius-4 ball, on one graph with q = r and one without.
fn verify_distances() -> CheckResult {
    for (q, r) in [(2u8, 3u8), (2, 2)] {
        let o = DLVertex::origin(q, r);
        for (v, d) in bfs_distances(&o, 4) {
            let formula = rel_position(&o, &v).map_err(errstr)?.distance();
            if formula != d {
                return fail(format!(
                    "DL({q},{r}): formula {formula} vs BFS {d} at {v}"
                ));
            }
        }
    }
    Ok(())
}

/// Every vertex of a radius-3 ball has exactly q + r neighbours, and each
/// neighbour changes the level by exactly one.
fn verify_degrees() -> CheckResult {
    for (q, r) in [(2u8, 3u8), (2, 2)] {
        let o = DLVertex::origin(q, r);
        for (v, _) in bfs_distances(&o, 3) {
            let nbs = v.neighbours();
            if nbs.len() != (q + r) as usize {
                return fail(format!(
                    "DL({q},{r}): {} neighbours at {v}",
                    nbs.len()
                ));
            }
            if nbs.iter().any(|n| (n.level() - v.level()).abs() != 1) {
                return fail(format!("DL({q},{r}): non-unit level step at {v}"));
            }
        }
    }
    Ok(())
}

/// Lamp-group elements over a small window encode to vertices and decode
/// back, and right multiplication by the walk generators lands on graph
/// neighbours.
fn verify_lamplighter() -> CheckResult {
    let q = 2u8;
    let sites = [-2i64, -1, 0, 1, 2];
    for position in -2i64..=2 {
        for mask in 0u32..32 {
            let lamps = sites
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &s)| (s, 1u8));
            let g = LampConfig::new(position, lamps).map_err(errstr)?;
            let v = g.encode(q).map_err(errstr)?;
            let back = LampConfig::decode(&v).map_err(errstr)?;
            if back != g {
                return fail(format!("round trip changed {g:?} into {back:?}"));
            }
            let nbs = v.neighbours();
            for l in 0..q {
                for dir in [-1i8, 1] {
                    let moved = g.right_multiply(l, dir, q).map_err(errstr)?;
                    let w = moved.encode(q).map_err(errstr)?;
                    if !nbs.contains(&w) {
                        return fail(format!(
                            "generator (l={l}, dir={dir}) left the neighbourhood of {v}"
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

/// First-passage probabilities satisfy their one-step equations exactly:
/// ascent f = (1-a) + a f^2, and descent g = a/b + a (b-1)/b f g
/// + (1-a) g^2, per tree side; the origin Green value inverts the return
/// mass.
fn verify_first_passage() -> CheckResult {
    for (num, den, q, r) in [(1i64, 3i64, 2u8, 3u8), (1, 2, 2, 2), (2, 3, 3, 2)] {
        let p = WalkParams::from_ratio(num, den, q, r).map_err(errstr)?;
        let view: ParamView<BigRational> = p.view();
        for side in [TreeSide::First, TreeSide::Second] {
            let (a, b) = match side {
                TreeSide::First => (view.alpha.clone(), q),
                TreeSide::Second => (big_ratio(1, 1) - view.alpha.clone(), r),
            };
            let bq = big_ratio(b as i64, 1);
            let one = big_ratio(1, 1);
            let f = ascent_hit_prob(side, &view);
            let g = descent_hit_prob(side, &view);
            let f_step = (&one - &a) + &a * &f * &f;
            let g_step = &a / &bq
                + &a * (&bq - &one) / &bq * &f * &g
                + (&one - &a) * &g * &g;
            if f != f_step {
                return fail(format!("ascent equation broken at alpha={num}/{den}, {side:?}"));
            }
            if g != g_step {
                return fail(format!(
                    "descent equation broken at alpha={num}/{den}, {side:?}"
                ));
            }
            let ret = (&one - &a) * &g + &a * &f;
            let green = tree_green(0, 0, side, &view);
            if green * (&one - &ret) != one {
                return fail(format!(
                    "origin Green vs return mass at alpha={num}/{den}, {side:?}"
                ));
            }
        }
    }
    Ok(())
}

/// The leading estimate constant equals its closed form
/// qr (beta^2 - 1) / ((q beta - 1)(r beta - 1)) exactly, and the boundary
/// constants match their exit-tail geometric expectations.
fn verify_constants() -> CheckResult {
    for (num, den, q, r) in [
        (1i64, 3i64, 2u8, 3u8),
        (1, 3, 3, 2),
        (1, 4, 2, 3),
        (2, 5, 3, 2),
    ] {
        let p = WalkParams::from_ratio(num, den, q, r).map_err(errstr)?;
        let consts = AsymptoticConstants::for_params(&p).map_err(errstr)?;
        let one = big_ratio(1, 1);
        let beta = p.beta();
        let qb = big_ratio(q as i64, 1);
        let rb = big_ratio(r as i64, 1);
        let closed = &qb * &rb * (&beta * &beta - &one)
            / ((&qb * &beta - &one) * (&rb * &beta - &one));
        if consts.a() != &closed {
            return fail(format!(
                "leading constant {} differs from closed form {closed} at \
                 alpha={num}/{den}, q={q}, r={r}",
                consts.a()
            ));
        }
        // E[(b beta)^{-D}] where P[D >= m] = beta^{-m} (b beta - beta)
        // / (b beta - 1) for m >= 1: a two-term geometric sum.
        let expectation = |branch: u8| -> BigRational {
            let b = big_ratio(branch as i64, 1);
            let c = (&beta * &b - &beta) / (&beta * &b - &one);
            let z = (&beta * &b).recip();
            let zb = &z / &beta;
            &one - &c / &beta + c * (&one - beta.recip()) * &zb / (&one - &zb)
        };
        if consts.b() != &expectation(q) || consts.b_star() != &expectation(r) {
            return fail(format!(
                "boundary constants vs exit-tail expectations at alpha={num}/{den}, \
                 q={q}, r={r}"
            ));
        }
    }
    Ok(())
}

/// Boundary kernels and the height weight are exactly harmonic on a
/// radius-3 region, in rational arithmetic.
fn verify_harmonicity() -> CheckResult {
    let one = big_ratio(1, 1);

    // Centred walk, geometric boundary, a first-tree end.
    let p = WalkParams::from_ratio(1, 2, 2, 2).map_err(errstr)?;
    let view: ParamView<BigRational> = p.view();
    let end = TreeEnd::lower_through(&TreeVertex::new(2, 0, vec![1]).map_err(errstr)?);
    let b = BoundaryPoint::first_end(Compactification::Geometric, end).map_err(errstr)?;
    let o = DLVertex::origin(2, 2);
    let report = check_harmonic(
        |x| boundary_kernel_in(x, &b, &view),
        &o,
        3,
        &view,
        &one,
    )
    .map_err(errstr)?;
    if !report.is_harmonic() {
        return fail("centred end kernel left a residual".to_string());
    }

    // Drifted walk, horocyclic boundary, the height-0 omega pair.
    let p = WalkParams::from_ratio(1, 3, 2, 3).map_err(errstr)?;
    let view: ParamView<BigRational> = p.view();
    let b = BoundaryPoint::omega_pair_at(ExtendedLevel::Finite(0));
    let o = DLVertex::origin(2, 3);
    let report = check_harmonic(
        |x| boundary_kernel_in(x, &b, &view),
        &o,
        3,
        &view,
        &one,
    )
    .map_err(errstr)?;
    if !report.is_harmonic() {
        return fail("drifted omega-pair kernel left a residual".to_string());
    }

    // The exponential of the level is harmonic for every drift.
    let beta = p.beta();
    let report = check_harmonic(
        |x: &DLVertex| Ok(Scalar::powi(&beta, x.level())),
        &o,
        3,
        &view,
        &one,
    )
    .map_err(errstr)?;
    if !report.is_harmonic() {
        return fail("level exponential left a residual".to_string());
    }
    Ok(())
}

/// The four-term decomposition over the extreme positions reproduces the
/// ball-solver Green value at a mixed position within 2%.
fn verify_decomposition() -> CheckResult {
    let p = WalkParams::from_ratio(1, 3, 2, 2).map_err(errstr)?;
    let o = DLVertex::origin(2, 2);
    let radius = 10;
    let solve = |rel: &RelPos| -> std::result::Result<f64, String> {
        let x = rel.witness(2, 2);
        Ok(green_ball_exact(&x, &o, radius, &p, BallMode::Float)
            .map_err(errstr)?
            .value)
    };
    let rel = RelPos::new(1, 1, 1, 1).map_err(errstr)?;
    let direct = solve(&rel)?;
    let base = [
        solve(&RelPos::of_case(BaseCase::I, 2))?,
        solve(&RelPos::of_case(BaseCase::II, 2))?,
        solve(&RelPos::of_case(BaseCase::III, 2))?,
        solve(&RelPos::of_case(BaseCase::IV, 2))?,
    ];
    let view: ParamView<f64> = p.view();
    let composed = green_decompose(&rel, &base, &view).map_err(errstr)?;
    let gap = (direct - composed).abs() / composed;
    if gap > 0.02 {
        return fail(format!(
            "direct {direct:.6e} vs composed {composed:.6e} (relative gap {gap:.3})"
        ));
    }
    Ok(())
}

/// The seeded sampler returns bit-identical estimates across runs.
fn verify_mc() -> CheckResult {
    let p = WalkParams::from_ratio(1, 3, 2, 2).map_err(errstr)?;
    let rel = RelPos::of_case(BaseCase::II, 3);
    let run = || green_monte_carlo_class(&rel, &p, 20_000, 1_500, 9).map_err(errstr);
    let (a, b) = (run()?, run()?);
    if a.value != b.value || a.error_bound != b.error_bound {
        return fail(format!("values {} vs {}", a.value, b.value));
    }
    Ok(())
}
