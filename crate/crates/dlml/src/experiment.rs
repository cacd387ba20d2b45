//! Experiment drivers behind the `dlml` binary: Harnack ratio tables,
//! convergence tables for the asymptotic Green estimate, convergence tables
//! for finite Martin quotients, a closed-form value dump, and table emission
//! as CSV or JSON lines.
//!
//! Every driver is deterministic. Monte Carlo backends run on fixed seeds
//! with a fixed chunk layout, so a table is bit-identical across runs with
//! the same configuration. Emitted tables embed that configuration, as a
//! `# config:` comment line in CSV and as the first record in JSON lines;
//! a table file alone is enough to reproduce itself.

use std::fmt;
use std::fs::File;
use std::io;
use std::str::FromStr;

use num::{BigInt, BigRational};
use serde::{Deserialize, Serialize};

use crate::algebra::{big_ratio, rational_to_f64, QuadRat, Scalar};
use crate::boundary::{
    boundary_kernel, martin_kernel_finite, witness_sequence, BoundaryPoint, KernelBackend,
};
use crate::closed_form::{
    ascent_hit_prob, descent_hit_prob, tree_green, AsymptoticConstants, ParamView, TreeSide,
};
use crate::dl::{rel_position, BaseCase, DLVertex, RelPos};
use crate::error::{DlmlError, Result};
use crate::green::{
    asym_estimate, default_t_max, green_ball_exact, green_monte_carlo_class, BallMode,
    GreenEstimate,
};
use crate::walk::WalkParams;

/// Parses an exact rational from `"p/q"`, an integer, or a finite decimal
/// literal such as `"0.25"`.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    if let Some((int_part, frac_part)) = s.split_once('.') {
        let digits = format!("{int_part}{frac_part}");
        let numer = BigInt::from_str(&digits)
            .map_err(|_| DlmlError::Parse(format!("invalid rational '{s}'")))?;
        let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
        return Ok(BigRational::new(numer, denom));
    }
    BigRational::from_str(s).map_err(|_| DlmlError::Parse(format!("invalid rational '{s}'")))
}

/// Table serialization format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

impl OutputFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Jsonl => "jsonl",
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutputFormat {
    type Err = DlmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" | "json-lines" | "ndjson" => Ok(OutputFormat::Jsonl),
            other => Err(DlmlError::Parse(format!(
                "unknown output format '{other}' (expected csv or jsonl)"
            ))),
        }
    }
}

/// Which evaluation backend a command should use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Ball,
    Mc,
    Asym,
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Ball => "ball",
            BackendKind::Mc => "mc",
            BackendKind::Asym => "asym",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = DlmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ball" => Ok(BackendKind::Ball),
            "mc" | "monte-carlo" => Ok(BackendKind::Mc),
            "asym" | "asymptotic" => Ok(BackendKind::Asym),
            other => Err(DlmlError::Parse(format!(
                "unknown backend '{other}' (expected ball, mc or asym)"
            ))),
        }
    }
}

fn default_radius() -> u64 {
    12
}

fn default_samples() -> u64 {
    1_000_000
}

fn default_seed() -> u64 {
    1
}

fn default_format() -> OutputFormat {
    OutputFormat::Csv
}

/// Full configuration of one experiment run.
///
/// Every emitted table embeds this record, so results stay attached to the
/// walk parameters, backend knobs and seed that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Ascent probability as an exact rational or decimal literal.
    pub alpha: String,
    pub q: u8,
    pub r: u8,
    pub backend: BackendKind,
    /// Span, scale or depth list, depending on the command.
    #[serde(default)]
    pub list: Vec<u64>,
    /// Ball radius for the `ball` backend.
    #[serde(default = "default_radius")]
    pub radius: u64,
    /// Monte Carlo sample count.
    #[serde(default = "default_samples")]
    pub n: u64,
    /// Monte Carlo horizon; `None` picks a per-span default.
    #[serde(default)]
    pub t_max: Option<u64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output path; `None` writes to standard output.
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default = "default_format")]
    pub format: OutputFormat,
}

impl ExperimentConfig {
    /// A configuration with every knob at its default.
    pub fn new(alpha: &str, q: u8, r: u8, backend: BackendKind) -> ExperimentConfig {
        ExperimentConfig {
            alpha: alpha.to_string(),
            q,
            r,
            backend,
            list: Vec::new(),
            radius: default_radius(),
            n: default_samples(),
            t_max: None,
            seed: default_seed(),
            out: None,
            format: default_format(),
        }
    }

    /// The walk the configuration describes.
    pub fn params(&self) -> Result<WalkParams> {
        WalkParams::new(parse_rational(&self.alpha)?, self.q, self.r)
    }

    /// Rejects configurations that no driver could run.
    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if self.backend == BackendKind::Ball && self.radius == 0 {
            return Err(DlmlError::InvalidInput(
                "the ball backend needs a radius of at least 1".into(),
            ));
        }
        if self.backend == BackendKind::Mc && self.n == 0 {
            return Err(DlmlError::InvalidInput(
                "the Monte Carlo backend needs a positive sample count".into(),
            ));
        }
        if self.t_max == Some(0) {
            return Err(DlmlError::InvalidInput("t_max must be positive".into()));
        }
        Ok(())
    }

    /// The numeric Green backend the configuration selects. The `asym`
    /// backend is the comparison column of every table, not a numeric
    /// source, so it is rejected here.
    pub fn green_backend(&self) -> Result<GreenBackend> {
        match self.backend {
            BackendKind::Ball => Ok(GreenBackend::Ball {
                radius: self.radius,
            }),
            BackendKind::Mc => Ok(GreenBackend::MonteCarlo {
                n: self.n,
                t_max: self.t_max,
                seed: self.seed,
            }),
            BackendKind::Asym => Err(DlmlError::InvalidInput(
                "this table compares a numeric backend against the asymptotics; \
                 pick ball or mc"
                    .into(),
            )),
        }
    }

    /// The Martin kernel backend the configuration selects.
    pub fn kernel_backend(&self) -> KernelBackend {
        match self.backend {
            BackendKind::Ball => KernelBackend::BallExact {
                radius: self.radius,
            },
            BackendKind::Mc => KernelBackend::MonteCarlo {
                n: self.n,
                t_max: self.t_max,
                seed: self.seed,
            },
            BackendKind::Asym => KernelBackend::Asymptotic,
        }
    }
}

/// A numeric evaluation strategy for Green values at a relative position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GreenBackend {
    /// Exact solve on a finite ball (restricted Green value).
    Ball { radius: u64 },
    /// Seeded class-chain Monte Carlo; `None` horizon picks the per-span
    /// default.
    MonteCarlo {
        n: u64,
        t_max: Option<u64>,
        seed: u64,
    },
}

impl GreenBackend {
    /// Method tag recorded in table rows.
    pub fn tag(&self) -> &'static str {
        match self {
            GreenBackend::Ball { .. } => "ball_exact",
            GreenBackend::MonteCarlo { .. } => "monte_carlo_class",
        }
    }

    /// Green value for any vertex pair at the given relative position (the
    /// value is a class function, so the pair itself never matters).
    pub fn estimate(&self, rel: &RelPos, p: &WalkParams) -> Result<GreenEstimate> {
        match self {
            GreenBackend::Ball { radius } => {
                let d = rel.distance();
                // The ball is centered on a geodesic midpoint, so anything
                // farther than twice the radius is out of reach; refuse
                // before enumerating a large ball that cannot help.
                if d.div_ceil(2) > *radius {
                    return Err(DlmlError::Domain(format!(
                        "distance {d} exceeds the reach of a radius {radius} ball"
                    )));
                }
                let x = rel.witness(p.q(), p.r());
                let o = DLVertex::origin(p.q(), p.r());
                green_ball_exact(&x, &o, *radius, p, BallMode::Float)
            }
            GreenBackend::MonteCarlo { n, t_max, seed } => {
                let horizon = t_max.unwrap_or_else(|| default_t_max(rel.span(), p));
                green_monte_carlo_class(rel, p, *n, horizon, *seed)
            }
        }
    }
}

/// A one-parameter family of relative positions indexed by span.
///
/// The four corner families are the extreme positions (each tree component
/// all ascent or all descent); the mixed family splits both ascents and
/// descents as evenly as possible so that all four legs are positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseFamily {
    I,
    II,
    III,
    IV,
    Mixed,
}

impl CaseFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaseFamily::I => "I",
            CaseFamily::II => "II",
            CaseFamily::III => "III",
            CaseFamily::IV => "IV",
            CaseFamily::Mixed => "mixed",
        }
    }

    /// The family member at the given span. Corner families need span >= 1,
    /// the mixed family span >= 2.
    pub fn rel(&self, span: u64) -> Result<RelPos> {
        let corner = |case| {
            if span == 0 {
                return Err(DlmlError::InvalidInput(
                    "corner families need span >= 1".into(),
                ));
            }
            Ok(RelPos::of_case(case, span))
        };
        match self {
            CaseFamily::I => corner(BaseCase::I),
            CaseFamily::II => corner(BaseCase::II),
            CaseFamily::III => corner(BaseCase::III),
            CaseFamily::IV => corner(BaseCase::IV),
            CaseFamily::Mixed => {
                if span < 2 {
                    return Err(DlmlError::InvalidInput(
                        "the mixed family needs span >= 2 to keep all four legs positive"
                            .into(),
                    ));
                }
                let up1 = span.div_ceil(2);
                let dn1 = span / 2;
                RelPos::new(up1, dn1, span - up1, span - dn1)
            }
        }
    }
}

impl fmt::Display for CaseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseFamily {
    type Err = DlmlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(CaseFamily::I),
            "II" | "2" => Ok(CaseFamily::II),
            "III" | "3" => Ok(CaseFamily::III),
            "IV" | "4" => Ok(CaseFamily::IV),
            "MIXED" => Ok(CaseFamily::Mixed),
            other => Err(DlmlError::Parse(format!(
                "unknown case family '{other}' (expected I, II, III, IV or mixed)"
            ))),
        }
    }
}

fn append_note(note: &mut String, msg: impl fmt::Display) {
    if !note.is_empty() {
        note.push_str("; ");
    }
    note.push_str(&msg.to_string());
}

// ---------------------------------------------------------------------------
// Harnack ratio table.

/// One row of the Harnack ratio table.
///
/// `x` sits straight down in the first tree at height `2R`, so its height
/// equals its distance from the origin; `y` sits back on the origin's
/// horocycle at the same distance `2R`. Asymptotic values are always
/// present; the numeric columns are filled when a backend was given and
/// could reach the row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarnackRow {
    pub r: u64,
    pub g_ox_asym: f64,
    pub g_oy_asym: f64,
    pub ratio_asym: f64,
    pub method: String,
    pub g_ox: Option<f64>,
    pub g_oy: Option<f64>,
    pub ratio: Option<f64>,
    pub note: String,
}

/// Tabulates the Green ratio `G(o,x) / G(o,y)` over pairs of points at the
/// same distance `2R` from the origin, one deep below it, one on its own
/// horocycle. The ratio tends to zero as `R` grows, so no constant can
/// compare Green values at equal distances: the elliptic Harnack
/// inequality fails on these graphs.
///
/// The table is about the simple random walk on the lamplighter-type
/// graphs, so it needs `q = r` (the walk is the centred one). Per-row
/// numeric failures are noted in the row rather than aborting the run.
pub fn run_harnack(
    q: u8,
    r: u8,
    r_list: &[u64],
    numeric: Option<&GreenBackend>,
) -> Result<Vec<HarnackRow>> {
    if q != r {
        return Err(DlmlError::Incompatible(
            "the Harnack ratio table needs q = r".into(),
        ));
    }
    if r_list.is_empty() || r_list.contains(&0) {
        return Err(DlmlError::InvalidInput(
            "the scale list must be nonempty with entries >= 1".into(),
        ));
    }
    let p = WalkParams::from_ratio(1, 2, q, r)?;
    let mut rows = Vec::with_capacity(r_list.len());
    for &scale in r_list {
        // rel(o, x): o's first component is already the confluent and x
        // hangs 2R below it; the second component mirrors this upward.
        let rel_ox = RelPos::of_case(BaseCase::III, 2 * scale);
        // rel(o, y): both first components at the confluent, y's second
        // component R below o's ascent, level change zero.
        let rel_oy = RelPos::of_case(BaseCase::I, scale);
        let g_ox_asym = asym_estimate(&rel_ox, &p)?.value;
        let g_oy_asym = asym_estimate(&rel_oy, &p)?.value;
        let mut row = HarnackRow {
            r: scale,
            g_ox_asym,
            g_oy_asym,
            ratio_asym: g_ox_asym / g_oy_asym,
            method: String::new(),
            g_ox: None,
            g_oy: None,
            ratio: None,
            note: String::new(),
        };
        if let Some(backend) = numeric {
            row.method = backend.tag().to_string();
            let pair = backend
                .estimate(&rel_ox, &p)
                .and_then(|gx| Ok((gx, backend.estimate(&rel_oy, &p)?)));
            match pair {
                Ok((gx, gy)) => {
                    row.g_ox = Some(gx.value);
                    row.g_oy = Some(gy.value);
                    row.ratio = Some(gx.value / gy.value);
                }
                Err(e) => append_note(&mut row.note, e),
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Asymptotic convergence table.

/// One row of an asymptotics convergence table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymRow {
    pub case: String,
    pub span: u64,
    pub up1: u64,
    pub dn1: u64,
    pub up2: u64,
    pub dn2: u64,
    pub method: String,
    pub numeric: Option<f64>,
    pub half_width: Option<f64>,
    pub asym: Option<f64>,
    pub ratio: Option<f64>,
    pub ratio_half_width: Option<f64>,
    pub note: String,
}

/// Compares a numeric Green backend against the closed asymptotic estimate
/// along a family of relative positions, one row per span. `half_width` is
/// the backend's own error measure (solver defect or 95% confidence
/// half-width) and `ratio_half_width` is the same scaled into ratio units.
/// Rows the backend cannot reach carry a note and the run continues.
pub fn run_asym_convergence(
    p: &WalkParams,
    family: CaseFamily,
    span_list: &[u64],
    backend: &GreenBackend,
) -> Result<Vec<AsymRow>> {
    if span_list.is_empty() {
        return Err(DlmlError::InvalidInput("the span list must not be empty".into()));
    }
    let mut rows = Vec::with_capacity(span_list.len());
    for &span in span_list {
        let mut row = AsymRow {
            case: family.to_string(),
            span,
            up1: 0,
            dn1: 0,
            up2: 0,
            dn2: 0,
            method: backend.tag().to_string(),
            numeric: None,
            half_width: None,
            asym: None,
            ratio: None,
            ratio_half_width: None,
            note: String::new(),
        };
        let rel = match family.rel(span) {
            Ok(rel) => rel,
            Err(e) => {
                append_note(&mut row.note, e);
                rows.push(row);
                continue;
            }
        };
        row.up1 = rel.up1;
        row.dn1 = rel.dn1;
        row.up2 = rel.up2;
        row.dn2 = rel.dn2;
        match asym_estimate(&rel, p) {
            Ok(est) => row.asym = Some(est.value),
            Err(e) => append_note(&mut row.note, e),
        }
        match backend.estimate(&rel, p) {
            Ok(est) => {
                row.numeric = Some(est.value);
                row.half_width = Some(est.error_bound);
            }
            Err(e) => append_note(&mut row.note, e),
        }
        if let (Some(value), Some(asym)) = (row.numeric, row.asym) {
            row.ratio = Some(value / asym);
            row.ratio_half_width = row.half_width.map(|h| h / asym);
        }
        rows.push(row);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Martin convergence table.

/// One row of a Martin convergence table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MartinRow {
    pub depth: u64,
    pub y: String,
    pub span: u64,
    pub method: String,
    pub finite: Option<f64>,
    pub boundary: f64,
    pub gap: Option<f64>,
    pub note: String,
}

/// Follows the canonical witness sequence of a boundary point and
/// tabulates the finite Martin quotient `G(x, y_n) / G(o, y_n)` against
/// the boundary kernel value it converges to. Per-row backend failures
/// are noted and the run continues.
pub fn run_martin_convergence(
    x: &DLVertex,
    b: &BoundaryPoint,
    depth_list: &[u64],
    p: &WalkParams,
    backend: &KernelBackend,
) -> Result<Vec<MartinRow>> {
    if depth_list.is_empty() || depth_list.contains(&0) {
        return Err(DlmlError::InvalidInput(
            "the depth list must be nonempty with entries >= 1".into(),
        ));
    }
    p.check_vertex(x)?;
    let boundary = rational_to_f64(&boundary_kernel(x, b, p)?);
    let deepest = *depth_list.iter().max().expect("nonempty list");
    let seq = witness_sequence(b, p.q(), p.r(), deepest.max(2))?;
    let method = kernel_backend_tag(backend);
    let mut rows = Vec::with_capacity(depth_list.len());
    for &depth in depth_list {
        let y = &seq[(depth - 1) as usize];
        let mut row = MartinRow {
            depth,
            y: y.to_string(),
            span: rel_position(x, y)?.span(),
            method: method.to_string(),
            finite: None,
            boundary,
            gap: None,
            note: String::new(),
        };
        match martin_kernel_finite(x, y, p, backend) {
            Ok(v) => {
                row.finite = Some(v);
                row.gap = Some((v - boundary).abs());
            }
            Err(e) => append_note(&mut row.note, e),
        }
        rows.push(row);
    }
    Ok(rows)
}

fn kernel_backend_tag(backend: &KernelBackend) -> &'static str {
    match backend {
        KernelBackend::BallExact { .. } => "ball_exact",
        KernelBackend::MonteCarlo { .. } => "monte_carlo_class",
        KernelBackend::Asymptotic => "asym",
    }
}

// ---------------------------------------------------------------------------
// Closed-form value dump.

/// One named closed-form value with its exact form where one exists.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FormulaRow {
    pub name: String,
    pub value: f64,
    pub exact: String,
}

fn rat_row(name: &str, v: &BigRational) -> FormulaRow {
    FormulaRow {
        name: name.to_string(),
        value: rational_to_f64(v),
        exact: v.to_string(),
    }
}

/// The closed-form values of a walk: drift and spectral data, the one-step
/// tree hitting probabilities, the tree and height Green values at the
/// origin, and the constants of the asymptotic estimate. The estimate
/// constants are defined for `alpha <= 1/2` and are omitted otherwise
/// (flip the drift to see them).
pub fn formula_table(p: &WalkParams) -> Result<Vec<FormulaRow>> {
    let view: ParamView<BigRational> = p.view();
    let rho = QuadRat::sqrt_of_rational(&p.rho_squared())?;
    let mut rows = vec![
        rat_row("alpha", p.alpha()),
        rat_row("beta", &p.beta()),
        FormulaRow {
            name: "rho".to_string(),
            value: rho.to_f64(),
            exact: rho.to_string(),
        },
        rat_row("height_weight", &view.height_weight(1)),
        rat_row("f_minus_1", &ascent_hit_prob(TreeSide::First, &view)),
        rat_row("f_plus_1", &descent_hit_prob(TreeSide::First, &view)),
        rat_row("f_minus_2", &ascent_hit_prob(TreeSide::Second, &view)),
        rat_row("f_plus_2", &descent_hit_prob(TreeSide::Second, &view)),
        rat_row("g1_origin", &tree_green(0, 0, TreeSide::First, &view)),
        rat_row("g2_origin", &tree_green(0, 0, TreeSide::Second, &view)),
    ];
    if let Ok(consts) = AsymptoticConstants::for_params(p) {
        rows.push(rat_row("line_green_origin", consts.line_green_origin()));
        rows.push(rat_row("const_a", consts.a()));
        rows.push(rat_row("const_b", consts.b()));
        rows.push(rat_row("const_b_star", consts.b_star()));
        if !p.is_centred() {
            // Closed form of const_a, and a nearby variant with (qr - 1) in
            // place of (r beta - 1) in the denominator. The variant agrees
            // exactly when r beta = qr and silently drifts otherwise, so the
            // table carries it, and its gap, as a transcription probe.
            let one = big_ratio(1, 1);
            let q = big_ratio(p.q() as i64, 1);
            let r = big_ratio(p.r() as i64, 1);
            let beta = p.beta();
            let numer = &q * &r * (&beta * &beta - &one);
            let closed = &numer / ((&q * &beta - &one) * (&r * &beta - &one));
            let alt = &numer / ((&q * &beta - &one) * (&q * &r - &one));
            let gap = consts.a() - &alt;
            rows.push(rat_row("const_a_closed", &closed));
            rows.push(rat_row("const_a_alt_denominator", &alt));
            rows.push(rat_row("const_a_alt_gap", &gap));
        }
    }
    Ok(rows)
}

/// Maps one Green estimate to a table row keyed by its relative position.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GreenRow {
    pub up1: u64,
    pub dn1: u64,
    pub up2: u64,
    pub dn2: u64,
    pub span: u64,
    pub distance: u64,
    pub method: String,
    pub value: f64,
    pub error: f64,
    pub r_or_n: u64,
    pub t_max: Option<u64>,
    pub seed: Option<u64>,
}

impl GreenRow {
    pub fn new(rel: &RelPos, est: &GreenEstimate) -> GreenRow {
        GreenRow {
            up1: rel.up1,
            dn1: rel.dn1,
            up2: rel.up2,
            dn2: rel.dn2,
            span: rel.span(),
            distance: rel.distance(),
            method: est.method.as_str().to_string(),
            value: est.value,
            error: est.error_bound,
            r_or_n: est.r_or_n,
            t_max: est.t_max,
            seed: est.seed,
        }
    }
}

// ---------------------------------------------------------------------------
// Emission.

fn encode_err(e: impl fmt::Display) -> DlmlError {
    DlmlError::Io(io::Error::other(e.to_string()))
}

/// Writes a table to the given sink in the configured format: CSV with a
/// `# config:` comment line before the header, or JSON lines with the
/// configuration as the first record.
pub fn write_table<T: Serialize, W: io::Write>(
    w: &mut W,
    config: &ExperimentConfig,
    rows: &[T],
) -> Result<()> {
    match config.format {
        OutputFormat::Csv => {
            let echo = serde_json::to_string(config).map_err(encode_err)?;
            writeln!(w, "# config: {echo}")?;
            let mut wtr = csv::Writer::from_writer(w);
            for row in rows {
                wtr.serialize(row).map_err(encode_err)?;
            }
            wtr.flush()?;
        }
        OutputFormat::Jsonl => {
            let first = serde_json::json!({ "config": config });
            writeln!(w, "{first}")?;
            for row in rows {
                let line = serde_json::to_string(row).map_err(encode_err)?;
                writeln!(w, "{line}")?;
            }
        }
    }
    Ok(())
}

/// Writes a table to the configured destination (standard output when no
/// path is set).
pub fn emit_table<T: Serialize>(config: &ExperimentConfig, rows: &[T]) -> Result<()> {
    match &config.out {
        Some(path) => {
            let mut f = File::create(path)?;
            write_table(&mut f, config, rows)
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_table(&mut lock, config, rows)
        }
    }
}
