//! Command line front end for the exact Ward identity engine.
//!
//! Each subcommand parses the small polynomial input language, dispatches
//! one verification task, and prints a report as text or JSON. The exit
//! status encodes the outcome: 0 when every checked identity holds, 1 when
//! an identity is violated (the residual is part of the report), 2 on
//! input errors.

use clap::{Parser, Subcommand, ValueEnum};
use mwi_core::anomaly::{self, Case2Variant};
use mwi_core::canon::{Idx, DUMMY_BASE};
use mwi_core::delta::{DeltaError, DeltaPoly};
use mwi_core::dsl;
use mwi_core::fields::{
    self, admissible, FieldPolynomial, Generator, MembershipPolicy, Species, TestBase,
    TestFactor,
};
use mwi_core::rengroup::{verify_sp_membership, RenMap, SpReport};
use mwi_core::scalar::{Scalar, Sym};
use mwi_core::tproduct::{selection_rules, verify_theorem, Direction};
use mwi_core::unitary;
use mwi_core::wick::{
    check_order2_wi, smatrix_order2, KernelKind, NormOpts, PointFactor, WTerm,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

/// Report rendering selected with `--format`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
}

/// Exact checker for Ward identities of scalar electrodynamics.
#[derive(Debug, Parser)]
#[command(name = "mwi", version, disable_help_subcommand = true)]
pub struct Cli {
    /// Output format for reports.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply the charge grading, or its gradient companion with --mu.
    #[command(name = "theta")]
    Theta {
        /// Polynomial in the input language.
        #[arg(long)]
        poly: String,
        /// Free index for the gradient companion, as a number or mN.
        #[arg(long)]
        mu: Option<String>,
    },
    /// Pair the derivative-field gradients of two polynomials.
    #[command(name = "zeta")]
    Zeta {
        #[arg(long)]
        left: String,
        #[arg(long)]
        right: String,
    },
    /// List the submonomials of a polynomial with their multiplicities.
    #[command(name = "submono")]
    Submono {
        #[arg(long)]
        poly: String,
    },
    /// Check the order-2 interpolated Ward identity for one entry.
    #[command(name = "wick-check")]
    WickCheck {
        /// The entry polynomial.
        #[arg(long = "B")]
        b: String,
        /// Interpolation parameter: exact rational or the symbol c.
        #[arg(long, default_value = "c", allow_hyphen_values = true)]
        c: String,
        /// Sign of the delta the wave operator produces on a propagator;
        /// the physical convention is 1.
        #[arg(long = "kg-sign", default_value_t = 1, allow_hyphen_values = true)]
        kg_sign: i64,
    },
    /// Print the local part of the second-order S expansion.
    #[command(name = "smatrix2")]
    Smatrix2 {
        /// Interpolation parameter: exact rational or the symbol c.
        #[arg(long, default_value = "c", allow_hyphen_values = true)]
        c: String,
    },
    /// Verify the divergence identity equivalence for an entry tuple.
    #[command(name = "verify-theorem")]
    VerifyTheorem {
        /// Expected number of entries; checked against --entries.
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated entry polynomials.
        #[arg(long)]
        entries: String,
        /// mwi-to-wi, wi-to-mwi, or both.
        #[arg(long, default_value = "both")]
        direction: String,
        /// Interpolation parameter: exact rational or the symbol c.
        #[arg(long, default_value = "c", allow_hyphen_values = true)]
        c: String,
    },
    /// Classify an entry tuple by its selection rules and anomaly case.
    #[command(name = "classify")]
    Classify {
        /// Comma-separated entry polynomials.
        #[arg(long)]
        entries: String,
    },
    /// Solve the local anomaly constraints for one case.
    #[command(name = "solve-case")]
    SolveCase {
        /// One of 1, 2a, 2b, 2c, 3.
        #[arg(long)]
        case: String,
        /// Number of interaction points for case 1.
        #[arg(long, default_value_t = 2)]
        m: usize,
    },
    /// Solve d = d/dy_mu u^mu for u, or run seeded roundtrip trials.
    #[command(name = "poincare")]
    Poincare {
        /// JSON file holding the distribution, or - for stdin.
        #[arg(long)]
        input: Option<String>,
        /// Label of the fresh solution index.
        #[arg(long, default_value_t = 1)]
        mu: u32,
        /// Run this many randomized roundtrip trials instead.
        #[arg(long)]
        random: Option<usize>,
        /// Seed for the randomized trials.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Check the truncated flow relations of the unitary formulation.
    #[command(name = "unitary")]
    Unitary {
        /// One of Fa, dL0, derivations.
        #[arg(long)]
        check: String,
        /// Truncation order; defaults to MWI_TRUNCATION_ORDER or 3.
        #[arg(long = "K")]
        k: Option<usize>,
    },
    /// Verify the group membership of the finite renormalization map.
    #[command(name = "sp-check")]
    SpCheck,
}

/// Runs one parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let format = cli.format;
    match dispatch(cli.command, format) {
        Ok(code) => code,
        Err(msg) => {
            match format {
                OutputFormat::Text => eprintln!("error: {msg}"),
                OutputFormat::Json => {
                    let j = json!({ "status": "error", "message": msg });
                    println!("{}", serde_json::to_string_pretty(&j).expect("serializable"));
                }
            }
            2
        }
    }
}

fn dispatch(command: Command, format: OutputFormat) -> Result<i32, String> {
    match command {
        Command::Theta { poly, mu } => cmd_theta(format, &poly, mu.as_deref()),
        Command::Zeta { left, right } => cmd_zeta(format, &left, &right),
        Command::Submono { poly } => cmd_submono(format, &poly),
        Command::WickCheck { b, c, kg_sign } => cmd_wick_check(format, &b, &c, kg_sign),
        Command::Smatrix2 { c } => cmd_smatrix2(format, &c),
        Command::VerifyTheorem { n, entries, direction, c } => {
            cmd_verify_theorem(format, n, &entries, &direction, &c)
        }
        Command::Classify { entries } => cmd_classify(format, &entries),
        Command::SolveCase { case, m } => cmd_solve_case(format, &case, m),
        Command::Poincare { input, mu, random, seed } => {
            cmd_poincare(format, input.as_deref(), mu, random, seed)
        }
        Command::Unitary { check, k } => cmd_unitary(format, &check, k),
        Command::SpCheck => cmd_sp_check(format),
    }
}

fn emit(format: OutputFormat, text: &str, j: Value) {
    match format {
        OutputFormat::Text => println!("{text}"),
        OutputFormat::Json => {
            println!("{}", serde_json::to_string_pretty(&j).expect("serializable"))
        }
    }
}

/// Parses the interpolation parameter: the symbol c or an exact rational.
fn parse_c(text: &str) -> Result<Scalar, String> {
    let text = text.trim();
    if text == "c" {
        return Ok(Scalar::sym(Sym::C));
    }
    let (num, den) = match text.split_once('/') {
        Some((p, q)) => (p.trim(), q.trim()),
        None => (text, "1"),
    };
    let p: i64 = num.parse().map_err(|_| format!("invalid value for c: {text:?}"))?;
    let q: i64 = den.parse().map_err(|_| format!("invalid value for c: {text:?}"))?;
    if q == 0 {
        return Err("zero denominator in c".into());
    }
    Ok(Scalar::ratio(p, q))
}

/// Parses a free-index argument given as a bare number or as mN.
fn parse_index(text: &str) -> Result<Idx, String> {
    let digits = text.strip_prefix('m').unwrap_or(text);
    let n: u32 = digits
        .parse()
        .map_err(|_| format!("invalid index {text:?}, expected a number or mN"))?;
    if n == 0 || n >= DUMMY_BASE {
        return Err(format!("index label {n} out of range"));
    }
    Ok(Idx(n))
}

fn parse_poly_arg(text: &str) -> Result<FieldPolynomial, String> {
    dsl::parse_poly(text).map_err(|e| format!("in {text:?}: {e}"))
}

/// Splits a comma-separated entry list, keeping bracketed indices intact.
fn split_entries(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '[' => {
                depth += 1;
                cur.push(ch);
            }
            ']' => {
                depth = depth.saturating_sub(1);
                cur.push(ch);
            }
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur = String::new();
            }
            _ => cur.push(ch),
        }
    }
    out.push(cur.trim().to_string());
    out.retain(|s| !s.is_empty());
    out
}

fn parse_entries(text: &str) -> Result<Vec<FieldPolynomial>, String> {
    let parts = split_entries(text);
    if parts.is_empty() {
        return Err("empty entry list".into());
    }
    parts.iter().map(|p| parse_poly_arg(p)).collect()
}

fn species_name(s: Species) -> &'static str {
    match s {
        Species::A => "A",
        Species::Phi => "phi",
        Species::PhiStar => "phistar",
        Species::DPhi => "dphi",
        Species::DPhiStar => "dphistar",
    }
}

fn fmt_generator(g: &Generator) -> String {
    match g.index {
        Some(i) => format!("{}[{}]", species_name(g.species), fields::index_name(i)),
        None => species_name(g.species).to_string(),
    }
}

fn fmt_test(t: &TestFactor) -> String {
    match t.deriv {
        Some(i) => format!("d{}[{}]", t.base.name(), fields::index_name(i)),
        None => t.base.name().to_string(),
    }
}

/// Renders one two-point term for residual reports.
fn fmt_wterm(t: &WTerm) -> String {
    let mut parts = vec![format!("({})", t.coeff)];
    for (a, b) in &t.metrics {
        parts.push(format!(
            "metric[{},{}]",
            fields::index_name(*a),
            fields::index_name(*b)
        ));
    }
    for k in &t.kernels {
        let base = match k.kind {
            KernelKind::DeltaF => "DF",
            KernelKind::DFree => "D0",
            KernelKind::Dirac => "delta",
        };
        if k.derivs.is_empty() {
            parts.push(base.to_string());
        } else {
            let list: Vec<String> =
                k.derivs.iter().map(|i| fields::index_name(*i)).collect();
            parts.push(format!("{base}[{}]", list.join(",")));
        }
    }
    for (p, f) in &t.factors {
        let at = if *p == 0 { "x" } else { "y" };
        let body = match f {
            PointFactor::Gen(g) => fmt_generator(g),
            PointFactor::BoxG(s) => format!("box({})", species_name(*s)),
            PointFactor::Test(tf) => fmt_test(tf),
        };
        parts.push(format!("{body}@{at}"));
    }
    parts.join(" ")
}

fn cmd_theta(format: OutputFormat, poly: &str, mu: Option<&str>) -> Result<i32, String> {
    let p = parse_poly_arg(poly)?;
    let (op, out) = match mu {
        None => ("theta".to_string(), p.theta()),
        Some(raw) => {
            let idx = parse_index(raw)?;
            if p.free_indices().contains(&idx) {
                return Err(format!(
                    "gradient index {} is already free in the input",
                    fields::index_name(idx)
                ));
            }
            (format!("theta[{}]", fields::index_name(idx)), p.theta_mu(idx))
        }
    };
    emit(
        format,
        &format!("{op} ({p})  =  {out}"),
        json!({
            "task": "theta",
            "status": "report",
            "operator": op,
            "input": p.to_string(),
            "output": out.to_string(),
        }),
    );
    Ok(0)
}

fn cmd_zeta(format: OutputFormat, left: &str, right: &str) -> Result<i32, String> {
    let l = parse_poly_arg(left)?;
    let r = parse_poly_arg(right)?;
    let out = l.zeta(&r);
    emit(
        format,
        &format!("zeta ({l} ; {r})  =  {out}"),
        json!({
            "task": "zeta",
            "status": "report",
            "left": l.to_string(),
            "right": r.to_string(),
            "output": out.to_string(),
        }),
    );
    Ok(0)
}

fn cmd_submono(format: OutputFormat, poly: &str) -> Result<i32, String> {
    let p = parse_poly_arg(poly)?;
    let subs = p.submonomials();
    let mut text = format!("submonomials of {p}:");
    let mut rows = Vec::new();
    for e in &subs {
        text += &format!("\n  {}  x  {}   (cofactor {})", e.factor, e.sub, e.comp);
        rows.push(json!({
            "factor": e.factor,
            "sub": e.sub.to_string(),
            "cofactor": e.comp.to_string(),
        }));
    }
    emit(
        format,
        &text,
        json!({
            "task": "submono",
            "status": "report",
            "input": p.to_string(),
            "entries": rows,
        }),
    );
    Ok(0)
}

fn cmd_wick_check(
    format: OutputFormat,
    b: &str,
    c: &str,
    kg_sign: i64,
) -> Result<i32, String> {
    if kg_sign != 1 && kg_sign != -1 {
        return Err("--kg-sign must be 1 or -1".into());
    }
    let bp = parse_poly_arg(b)?;
    let cv = parse_c(c)?;
    let opts = NormOpts { kg_delta_sign: kg_sign, ..NormOpts::default() };
    let residual = check_order2_wi(&bp, &cv, &opts).map_err(|e| e.to_string())?;
    let ok = residual.is_zero();
    let premises = vec![
        "tree-level pair contractions at second order".to_string(),
        format!("free field equations on shell, wave-operator delta sign {kg_sign:+}"),
    ];
    let res_lines: Vec<String> = residual.terms().iter().map(fmt_wterm).collect();
    let status = if ok { "verified" } else { "violated" };
    let mut text = format!("order-2 identity for {bp} at c = {cv}: {status}");
    for p in &premises {
        text += &format!("\n  premise: {p}");
    }
    if !ok {
        text += &format!("\n  residual ({} terms):", res_lines.len());
        for l in &res_lines {
            text += &format!("\n    {l}");
        }
    }
    emit(
        format,
        &text,
        json!({
            "task": "wick-check",
            "status": status,
            "entry": bp.to_string(),
            "c": cv.to_string(),
            "premises": premises,
            "residual": res_lines,
        }),
    );
    Ok(if ok { 0 } else { 1 })
}

fn cmd_smatrix2(format: OutputFormat, c: &str) -> Result<i32, String> {
    let cv = parse_c(c)?;
    let local = smatrix_order2(&cv, &NormOpts::default()).map_err(|e| e.to_string())?;
    emit(
        format,
        &format!("local second-order part at c = {cv}:  {local}"),
        json!({
            "task": "smatrix2",
            "status": "report",
            "c": cv.to_string(),
            "local_part": local.to_string(),
            "premises": ["tree-level pair contractions", "delta-supported part only"],
        }),
    );
    Ok(0)
}

fn cmd_verify_theorem(
    format: OutputFormat,
    n: Option<usize>,
    entries: &str,
    direction: &str,
    c: &str,
) -> Result<i32, String> {
    let es = parse_entries(entries)?;
    if let Some(n) = n {
        if n != es.len() {
            return Err(format!("--n {} disagrees with {} parsed entries", n, es.len()));
        }
    }
    for (i, b) in es.iter().enumerate() {
        if !admissible(b, MembershipPolicy::Permissive) {
            return Err(format!(
                "entry {} is not a single-derivative charge eigenvector: {b}",
                i + 1
            ));
        }
    }
    let cv = parse_c(c)?;
    let dirs: Vec<Direction> = match direction {
        "both" => vec![Direction::MwiToWi, Direction::WiToMwi],
        other => vec![other.parse::<Direction>()?],
    };
    let shown: Vec<String> = es.iter().map(|b| b.to_string()).collect();
    let mut text = format!("entries: {}   (c = {cv})", shown.join(" , "));
    let mut reports = Vec::new();
    let mut ok_all = true;
    for d in dirs {
        let rep = verify_theorem(&es, &cv, d);
        ok_all &= rep.ok();
        let premise = match d {
            Direction::MwiToWi => {
                "assumes the divergence identity of the T family for these entries"
            }
            Direction::WiToMwi => {
                "assumes the divergence identity of the T^ family for these entries"
            }
        };
        text += &format!("\n{rep}");
        text += &format!("\n  premise: {premise}");
        let residual: Vec<String> =
            rep.residual.iter().map(|(s, t)| format!("({s}) {t}")).collect();
        reports.push(json!({
            "direction": d.name(),
            "n": rep.n,
            "ok": rep.ok(),
            "premise": premise,
            "residual": residual,
        }));
    }
    let status = if ok_all { "verified" } else { "violated" };
    emit(
        format,
        &text,
        json!({
            "task": "verify-theorem",
            "status": status,
            "entries": shown,
            "c": cv.to_string(),
            "reports": reports,
        }),
    );
    Ok(if ok_all { 0 } else { 1 })
}

fn cmd_classify(format: OutputFormat, entries: &str) -> Result<i32, String> {
    let es = parse_entries(entries)?;
    let cls = selection_rules(&es);
    let shown: Vec<String> = es.iter().map(|b| b.to_string()).collect();
    let charges: Vec<Value> = es
        .iter()
        .map(|b| match b.charge_number() {
            Ok(q) => json!(q),
            Err(_) => Value::Null,
        })
        .collect();
    let mut text = format!("classification: {}", cls.label());
    for (b, q) in shown.iter().zip(&charges) {
        match q {
            Value::Null => text += &format!("\n  {b}   (not a charge eigenvector)"),
            q => text += &format!("\n  {b}   (charge {q})"),
        }
    }
    emit(
        format,
        &text,
        json!({
            "task": "classify",
            "status": "report",
            "classification": cls.label(),
            "entries": shown,
            "charge_numbers": charges,
        }),
    );
    Ok(0)
}

fn check_rows(checks: &[(&str, bool)]) -> (String, Value) {
    let mut text = String::new();
    let mut map = serde_json::Map::new();
    for (name, ok) in checks {
        text += &format!("\n  [{}] {name}", if *ok { "ok" } else { "FAIL" });
        map.insert((*name).to_string(), json!(ok));
    }
    (text, Value::Object(map))
}

fn cmd_solve_case(format: OutputFormat, case: &str, m: usize) -> Result<i32, String> {
    match case {
        "1" => {
            if m < 1 {
                return Err("--m must be at least 1".into());
            }
            let r = anomaly::solve_case1(m);
            let checks = [
                ("span-equal", r.span_equal),
                ("first-group-invariant", r.group1_invariant),
                ("single-constraint", r.independent_conditions == 1),
                ("constraint-sufficient", r.constraint_verified),
                ("replacement-symmetric", r.replacement_symmetric),
                ("divergence-preserved", r.divergence_preserved),
                ("scalar-term-symmetric", r.scalar_term_symmetric),
                ("entry-exchange-symmetric", r.exchange_symmetric),
            ];
            let ok = checks.iter().all(|(_, b)| *b);
            let (rows, jchecks) = check_rows(&checks);
            let zeros: Vec<usize> = r.zero_ops.clone();
            let mut text = format!(
                "case 1 with m = {m} interaction points\n  basis rank {} of 9, alternate rank {}\n  constraint: {}   ({} independent condition)",
                r.rank, r.alt_rank, r.constraint, r.independent_conditions
            );
            if !zeros.is_empty() {
                text += &format!("\n  identically zero operators at positions {zeros:?}");
            }
            text += &rows;
            emit(
                format,
                &text,
                json!({
                    "task": "solve-case",
                    "case": "1",
                    "status": if ok { "verified" } else { "violated" },
                    "checks": jchecks,
                    "report": serde_json::to_value(&r).expect("serializable"),
                }),
            );
            Ok(if ok { 0 } else { 1 })
        }
        "2a" | "2b" | "2c" => {
            let v: Case2Variant = case.parse()?;
            let r = anomaly::solve_case2(v);
            let checks = [
                ("constraints-verified", r.verified),
                ("epsilon-excluded", r.epsilon_excluded),
                ("entry-exchange-symmetric", r.exchange_symmetric),
            ];
            let ok = checks.iter().all(|(_, b)| *b);
            let (rows, jchecks) = check_rows(&checks);
            let mut text = format!(
                "case {}\n  constraints: {}\n  solution dimension {}",
                r.variant,
                if r.constraints.is_empty() { "none".to_string() } else { r.constraints.join(" ; ") },
                r.solution_dimension
            );
            text += &rows;
            emit(
                format,
                &text,
                json!({
                    "task": "solve-case",
                    "case": r.variant,
                    "status": if ok { "verified" } else { "violated" },
                    "checks": jchecks,
                    "report": serde_json::to_value(&r).expect("serializable"),
                }),
            );
            Ok(if ok { 0 } else { 1 })
        }
        "3" => {
            let r = anomaly::solve_case3();
            let checks =
                [("dimension-one", r.dimension == 1), ("representative-symmetric", r.symmetric)];
            let ok = checks.iter().all(|(_, b)| *b);
            let (rows, jchecks) = check_rows(&checks);
            let mut text = format!(
                "case 3\n  solution dimension {} over {} points",
                r.dimension, r.points
            );
            text += &rows;
            emit(
                format,
                &text,
                json!({
                    "task": "solve-case",
                    "case": "3",
                    "status": if ok { "verified" } else { "violated" },
                    "checks": jchecks,
                    "report": serde_json::to_value(&r).expect("serializable"),
                }),
            );
            Ok(if ok { 0 } else { 1 })
        }
        other => Err(format!("unknown case {other:?}, expected 1, 2a, 2b, 2c or 3")),
    }
}

fn cmd_poincare(
    format: OutputFormat,
    input: Option<&str>,
    mu: u32,
    random: Option<usize>,
    seed: u64,
) -> Result<i32, String> {
    if mu == 0 || mu >= DUMMY_BASE {
        return Err(format!("index label {mu} out of range"));
    }
    let mu = Idx(mu);
    match (input, random) {
        (Some(path), None) => cmd_poincare_input(format, path, mu),
        (None, Some(trials)) => cmd_poincare_random(format, trials, mu, seed),
        _ => Err("pass exactly one of --input and --random".into()),
    }
}

fn cmd_poincare_input(format: OutputFormat, path: &str, mu: Idx) -> Result<i32, String> {
    let text = if path == "-" {
        let mut s = String::new();
        std::io::Read::read_to_string(&mut std::io::stdin(), &mut s)
            .map_err(|e| format!("reading stdin: {e}"))?;
        s
    } else {
        std::fs::read_to_string(path).map_err(|e| format!("reading {path}: {e}"))?
    };
    let d: DeltaPoly =
        serde_json::from_str(&text).map_err(|e| format!("invalid distribution JSON: {e}"))?;
    if !d.has_y {
        return Err("the distribution has no y point to solve in".into());
    }
    if d.free_indices().contains(&mu) {
        return Err(format!(
            "solution index {} must not be free in the input",
            fields::index_name(mu)
        ));
    }
    match d.poincare_solve(mu) {
        Ok(u) => {
            let ok = u.divergence_y(mu).sub(&d).is_zero();
            let status = if ok { "verified" } else { "violated" };
            emit(
                format,
                &format!(
                    "solved: potential with {} terms; divergence reproduces the input: {}",
                    u.terms().len(),
                    ok
                ),
                json!({
                    "task": "poincare",
                    "mode": "input",
                    "status": status,
                    "solution_index": fields::index_name(mu),
                    "potential": serde_json::to_value(&u).expect("serializable"),
                    "roundtrip": ok,
                }),
            );
            Ok(if ok { 0 } else { 1 })
        }
        Err(DeltaError::NotCoexact) => {
            let obstruction = d.integrate_out_y();
            emit(
                format,
                &format!(
                    "not a y-divergence: integrating out y leaves {} terms",
                    obstruction.terms().len()
                ),
                json!({
                    "task": "poincare",
                    "mode": "input",
                    "status": "violated",
                    "error": "not-coexact",
                    "obstruction": serde_json::to_value(&obstruction).expect("serializable"),
                }),
            );
            Ok(1)
        }
        Err(e) => Err(e.to_string()),
    }
}

/// Pool of derivative index labels; reusing a label once builds an exact
/// contraction, and no label is used more than twice.
struct IdxPool {
    next: u32,
    once: Vec<u32>,
}

impl IdxPool {
    fn new(start: u32) -> Self {
        IdxPool { next: start, once: Vec::new() }
    }

    fn pick(&mut self, rng: &mut ChaCha8Rng) -> Idx {
        if !self.once.is_empty() && rng.gen_bool(0.35) {
            let k = rng.gen_range(0..self.once.len());
            Idx(self.once.swap_remove(k))
        } else {
            let i = self.next;
            self.next += 1;
            self.once.push(i);
            Idx(i)
        }
    }

    fn fresh(&mut self) -> Idx {
        let i = self.next;
        self.next += 1;
        Idx(i)
    }
}

fn cmd_poincare_random(
    format: OutputFormat,
    trials: usize,
    mu: Idx,
    seed: u64,
) -> Result<i32, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut solved = 0usize;
    let mut rejected = 0usize;
    let mut failures: Vec<String> = Vec::new();
    for trial in 0..trials {
        let n = rng.gen_range(1..=3usize);
        let mut pool = IdxPool::new(mu.0 + 1);
        let mut u = DeltaPoly::delta(n, true);
        // One slot carries the solution index: a derivative at a random
        // point, a derivative at y, or a metric factor.
        match rng.gen_range(0..3) {
            0 => u = u.deriv_y(mu),
            1 => {
                let p = rng.gen_range(0..n);
                u = u.deriv_x(p, mu);
            }
            _ => {
                let nu = pool.fresh();
                u = u.mul_metric(mu, nu);
            }
        }
        let extra = rng.gen_range(0..=2u32);
        for _ in 0..extra {
            let idx = pool.pick(&mut rng);
            if rng.gen_bool(0.4) {
                u = u.deriv_y(idx);
            } else {
                let p = rng.gen_range(0..n);
                u = u.deriv_x(p, idx);
            }
        }
        let num = rng.gen_range(-4..=4i64);
        let mut co = Scalar::ratio(if num == 0 { 1 } else { num }, rng.gen_range(1..=3i64));
        if rng.gen_bool(0.3) {
            co = co.mul(&Scalar::sym(Sym::E));
        }
        u = u.scale(&co);
        let mut d = u.divergence_y(mu);
        if rng.gen_bool(0.25) {
            // Candidate obstruction with the same free indices; it only
            // stays co-exact when momentum conservation absorbs it.
            let k = rng.gen_range(1..=3i64);
            let mut spoiler = DeltaPoly::delta(n, true);
            for idx in d.free_indices() {
                spoiler = spoiler.deriv_x(0, idx);
            }
            d = d.add(&spoiler.scale(&Scalar::from_int(k)));
        }
        let io_zero = d.integrate_out_y().is_zero();
        match d.poincare_solve(mu) {
            Ok(v) => {
                if !io_zero {
                    failures.push(format!(
                        "trial {trial}: solved although the y integral is nonzero"
                    ));
                } else if !v.divergence_y(mu).sub(&d).is_zero() {
                    failures.push(format!(
                        "trial {trial}: divergence of the solution differs from the input"
                    ));
                } else {
                    solved += 1;
                }
            }
            Err(DeltaError::NotCoexact) => {
                if io_zero {
                    failures.push(format!("trial {trial}: co-exact input rejected"));
                } else {
                    rejected += 1;
                }
            }
            Err(e) => failures.push(format!("trial {trial}: {e}")),
        }
    }
    let ok = failures.is_empty();
    let status = if ok { "verified" } else { "violated" };
    let mut text = format!(
        "poincare roundtrip: {trials} trials with seed {seed}: {status}\n  {solved} solved and round-tripped, {rejected} correctly rejected"
    );
    for f in &failures {
        text += &format!("\n  {f}");
    }
    emit(
        format,
        &text,
        json!({
            "task": "poincare",
            "mode": "random",
            "status": status,
            "seed": seed,
            "trials": trials,
            "solved": solved,
            "rejected": rejected,
            "failures": failures,
        }),
    );
    Ok(if ok { 0 } else { 1 })
}

/// Expected first-order variation of the interaction under the flow.
fn gauge_variation_order1() -> FieldPolynomial {
    let mu = Idx(1);
    let base = fields::a_phistar_phi(mu);
    let terms = base
        .terms()
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.tests.push(TestFactor::plain(TestBase::G));
            t.tests.push(TestFactor::deriv(TestBase::Alpha, mu));
            t
        })
        .collect();
    FieldPolynomial::from_terms(terms)
        .scale(&Scalar::from_int(-2).mul(&Scalar::i()).mul(&Scalar::sym(Sym::E)))
}

fn cmd_unitary(format: OutputFormat, check: &str, k: Option<usize>) -> Result<i32, String> {
    let k = k.unwrap_or_else(unitary::default_truncation);
    let premises = vec![
        format!("series truncated at order {k} in the flow parameter"),
        "minimal coupling interaction".to_string(),
    ];
    match check {
        "Fa" => {
            let family = unitary::functional_family();
            let mut violations = Vec::new();
            for (i, f) in family.iter().enumerate() {
                if !unitary::check_fa(f, k).is_zero() {
                    violations.push(json!({ "position": i, "functional": f.to_string() }));
                }
            }
            let ok = violations.is_empty();
            let status = if ok { "verified" } else { "violated" };
            emit(
                format,
                &format!(
                    "flow relation on {} functionals to order {k}: {status}",
                    family.len()
                ),
                json!({
                    "task": "unitary",
                    "check": "Fa",
                    "status": status,
                    "order": k,
                    "functionals": family.len(),
                    "violations": violations,
                    "premises": premises,
                }),
            );
            Ok(if ok { 0 } else { 1 })
        }
        "dL0" => {
            let series = unitary::check_dl0_da(k);
            let ok = series.is_zero();
            let dl = unitary::delta_l0();
            let coeffs: Vec<String> = (0..dl.len()).map(|j| dl.coeff(j).to_string()).collect();
            let residual: Vec<String> =
                (0..series.len()).map(|j| series.coeff(j).to_string()).collect();
            let status = if ok { "verified" } else { "violated" };
            let mut text =
                format!("flow derivative of the quadratic shift to order {k}: {status}");
            for (j, s) in coeffs.iter().enumerate() {
                text += &format!("\n  shift coefficient of a^{j}: {s}");
            }
            if !ok {
                for (j, s) in residual.iter().enumerate() {
                    if s != "0" {
                        text += &format!("\n  residual at a^{j}: {s}");
                    }
                }
            }
            emit(
                format,
                &text,
                json!({
                    "task": "unitary",
                    "check": "dL0",
                    "status": status,
                    "order": k,
                    "shift_coefficients": coeffs,
                    "residual": residual,
                    "premises": premises,
                }),
            );
            Ok(if ok { 0 } else { 1 })
        }
        "derivations" => {
            let (d0, d1) = unitary::derivations();
            let expected = gauge_variation_order1();
            let ok = d0.is_zero() && d1.sub(&expected).is_zero();
            let status = if ok { "verified" } else { "violated" };
            emit(
                format,
                &format!(
                    "derivation values on the interaction: {status}\n  order 0: {d0}\n  order 1: {d1}\n  expected order 1: {expected}"
                ),
                json!({
                    "task": "unitary",
                    "check": "derivations",
                    "status": status,
                    "order_0": d0.to_string(),
                    "order_1": d1.to_string(),
                    "expected_order_1": expected.to_string(),
                    "premises": premises,
                }),
            );
            Ok(if ok { 0 } else { 1 })
        }
        other => Err(format!("unknown check {other:?}, expected Fa, dL0 or derivations")),
    }
}

fn sp_section(label: &str, report: &SpReport) -> (String, Value) {
    let mut text = format!("{label}:");
    let props: Vec<Value> = report
        .properties
        .iter()
        .map(|p| {
            text += &format!("\n  [{}] {}: {}", if p.ok { "ok" } else { "FAIL" }, p.name, p.detail);
            json!({ "name": p.name, "ok": p.ok, "detail": p.detail })
        })
        .collect();
    (text, json!({ "map": label, "ok": report.ok(), "properties": props }))
}

fn cmd_sp_check(format: OutputFormat) -> Result<i32, String> {
    let z = RenMap::z(&Scalar::sym(Sym::C));
    let y = z.inverse();
    let rz = verify_sp_membership(&z);
    let ry = verify_sp_membership(&y);
    let ok = rz.ok() && ry.ok();
    let (tz, jz) = sp_section("renormalization map z(c)", &rz);
    let (ty, jy) = sp_section("inverse map y(c)", &ry);
    let status = if ok { "verified" } else { "violated" };
    emit(
        format,
        &format!("group membership: {status}\n{tz}\n{ty}"),
        json!({
            "task": "sp-check",
            "status": status,
            "maps": [jz, jy],
        }),
    );
    Ok(if ok { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_values_parse_exactly() {
        assert_eq!(parse_c("c").unwrap(), Scalar::sym(Sym::C));
        assert_eq!(parse_c("1").unwrap(), Scalar::one());
        assert_eq!(parse_c("-3/2").unwrap(), Scalar::ratio(-3, 2));
        assert!(parse_c("1/0").is_err());
        assert!(parse_c("x").is_err());
    }

    #[test]
    fn entry_lists_split_outside_brackets_only() {
        assert_eq!(
            split_entries("L, j[nu], metric[a,b] phi phistar"),
            vec!["L", "j[nu]", "metric[a,b] phi phistar"]
        );
        assert_eq!(split_entries("phi"), vec!["phi"]);
    }

    #[test]
    fn index_arguments_accept_numbers_and_names() {
        assert_eq!(parse_index("3").unwrap(), Idx(3));
        assert_eq!(parse_index("m7").unwrap(), Idx(7));
        assert!(parse_index("0").is_err());
        assert!(parse_index("s1").is_err());
    }

    #[test]
    fn dispatch_codes_follow_the_outcome() {
        let ok = dispatch(
            Command::WickCheck { b: "dphi[nu]".into(), c: "1".into(), kg_sign: 1 },
            OutputFormat::Json,
        )
        .unwrap();
        assert_eq!(ok, 0);
        let flipped = dispatch(
            Command::WickCheck { b: "dphi[nu]".into(), c: "1".into(), kg_sign: -1 },
            OutputFormat::Json,
        )
        .unwrap();
        assert_eq!(flipped, 1);
        let bad = dispatch(
            Command::Theta { poly: "qux".into(), mu: None },
            OutputFormat::Json,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn input_mode_solves_a_boxed_delta_and_rejects_a_bare_one() {
        let dir = std::env::temp_dir();
        let good = dir.join("mwi-poincare-good.json");
        let boxed = DeltaPoly::delta(2, true).deriv_y(Idx(3)).deriv_y(Idx(3));
        std::fs::write(&good, serde_json::to_string(&boxed).unwrap()).unwrap();
        let code =
            cmd_poincare_input(OutputFormat::Json, good.to_str().unwrap(), Idx(1)).unwrap();
        assert_eq!(code, 0);

        let bad = dir.join("mwi-poincare-bad.json");
        std::fs::write(&bad, serde_json::to_string(&DeltaPoly::delta(2, true)).unwrap())
            .unwrap();
        let code =
            cmd_poincare_input(OutputFormat::Json, bad.to_str().unwrap(), Idx(1)).unwrap();
        assert_eq!(code, 1);
    }

    #[test]
    fn randomized_poincare_trials_are_reproducible() {
        let code =
            cmd_poincare_random(OutputFormat::Json, 40, Idx(1), 11).unwrap();
        assert_eq!(code, 0);
        let again = cmd_poincare_random(OutputFormat::Json, 40, Idx(1), 11).unwrap();
        assert_eq!(again, 0);
    }
}
