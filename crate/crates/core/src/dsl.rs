//! Text syntax for field polynomials: a sum of terms, each a product of
//! coefficient atoms and factors.
//!
//! Factors are the generators `phi`, `phistar`, `A[mu]`, `dphi[mu]`,
//! `dphistar[mu]`, the named polynomials `j[mu]`, `L`, `S`, the test
//! factors `g`, `alpha`, `beta`, `h` with derivative forms `dg[mu]` and
//! so on, and `metric[a,b]`. Coefficients are rationals, `i` and the
//! formal symbols with optional integer powers. An index name used twice
//! in a term contracts; a name of the shape `mN` denotes the label N
//! directly and `sN` a contracted label, so printed polynomials parse
//! back to themselves.

use crate::canon::{DUMMY_BASE, Idx};
use crate::fields::{
    self, FTerm, FieldPolynomial, TestBase, TestFactor, in_strict_set,
};
use crate::scalar::{GaussRat, Scalar, Sym};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Errors from parsing, with one-based source positions.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("free-index mismatch at line {line}, column {column}: {message}")]
    FreeIndexMismatch { line: usize, column: usize, message: String },
    #[error("polynomial outside the strict generator set (line {line}, column {column})")]
    OutsideStrictSet { line: usize, column: usize },
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, column, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Plus,
    Minus,
    Caret,
    Slash,
    Comma,
    LBrack,
    RBrack,
    Ident(String),
    Int(i64),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut column = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&ch) = chars.peek() {
        let (l, c) = (line, column);
        let bump = |ch: char, line: &mut usize, column: &mut usize| {
            if ch == '\n' {
                *line += 1;
                *column = 1;
            } else {
                *column += 1;
            }
        };
        if ch.is_whitespace() {
            chars.next();
            bump(ch, &mut line, &mut column);
            continue;
        }
        let simple = match ch {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '^' => Some(Tok::Caret),
            '/' => Some(Tok::Slash),
            ',' => Some(Tok::Comma),
            '[' => Some(Tok::LBrack),
            ']' => Some(Tok::RBrack),
            _ => None,
        };
        if let Some(tok) = simple {
            chars.next();
            bump(ch, &mut line, &mut column);
            out.push(Token { tok, line: l, column: c });
            continue;
        }
        if ch.is_ascii_digit() {
            let mut s = String::new();
            while let Some(&d) = chars.peek() {
                if d.is_ascii_digit() {
                    s.push(d);
                    chars.next();
                    bump(d, &mut line, &mut column);
                } else {
                    break;
                }
            }
            let v: i64 = s
                .parse()
                .map_err(|_| syntax(l, c, format!("number `{s}` is too large")))?;
            out.push(Token { tok: Tok::Int(v), line: l, column: c });
            continue;
        }
        if ch.is_ascii_alphabetic() {
            let mut s = String::new();
            while let Some(&d) = chars.peek() {
                if d.is_ascii_alphanumeric() {
                    s.push(d);
                    chars.next();
                    bump(d, &mut line, &mut column);
                } else {
                    break;
                }
            }
            out.push(Token { tok: Tok::Ident(s), line: l, column: c });
            continue;
        }
        return Err(syntax(l, c, format!("unexpected character `{ch}`")));
    }
    Ok(out)
}

/// Which generator or named polynomial a factor denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GenKind {
    Phi,
    PhiStar,
    A,
    DPhi,
    DPhiStar,
    Current,
    Lagrangian,
    Interaction,
}

#[derive(Debug, Clone)]
enum Atom {
    Rational(i64, i64),
    Imag,
    SymPow(Sym, u8),
    Gen(GenKind, Option<String>),
    Metric(String, String),
    Test(TestBase, Option<String>),
}

#[derive(Debug, Clone)]
struct TermAst {
    neg: bool,
    atoms: Vec<(Atom, usize, usize)>,
    line: usize,
    column: usize,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn end_pos(&self) -> (usize, usize) {
        self.tokens
            .last()
            .map(|t| (t.line, t.column + 1))
            .unwrap_or((1, 1))
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token, ParseError> {
        match self.next() {
            Some(t) if t.tok == tok => Ok(t),
            Some(t) => Err(syntax(t.line, t.column, format!("expected {what}"))),
            None => {
                let (l, c) = self.end_pos();
                Err(syntax(l, c, format!("expected {what}, found end of input")))
            }
        }
    }

    fn index_name(&mut self) -> Result<String, ParseError> {
        match self.next() {
            Some(Token { tok: Tok::Ident(s), .. }) => Ok(s),
            Some(t) => Err(syntax(t.line, t.column, "expected an index name")),
            None => {
                let (l, c) = self.end_pos();
                Err(syntax(l, c, "expected an index name, found end of input"))
            }
        }
    }

    fn bracketed_index(&mut self) -> Result<String, ParseError> {
        self.expect(Tok::LBrack, "`[`")?;
        let name = self.index_name()?;
        self.expect(Tok::RBrack, "`]`")?;
        Ok(name)
    }

    fn power(&mut self) -> Result<u8, ParseError> {
        if matches!(self.peek(), Some(Token { tok: Tok::Caret, .. })) {
            self.next();
            match self.next() {
                Some(Token { tok: Tok::Int(v), line, column }) => {
                    u8::try_from(v).map_err(|_| syntax(line, column, "power out of range"))
                }
                Some(t) => Err(syntax(t.line, t.column, "expected a power")),
                None => {
                    let (l, c) = self.end_pos();
                    Err(syntax(l, c, "expected a power, found end of input"))
                }
            }
        } else {
            Ok(1)
        }
    }

    fn atom(&mut self) -> Result<(Atom, usize, usize), ParseError> {
        let t = self.next().expect("caller checked for a token");
        let (l, c) = (t.line, t.column);
        let atom = match t.tok {
            Tok::Int(num) => {
                if matches!(self.peek(), Some(Token { tok: Tok::Slash, .. })) {
                    self.next();
                    match self.next() {
                        Some(Token { tok: Tok::Int(den), line, column }) => {
                            if den == 0 {
                                return Err(syntax(line, column, "zero denominator"));
                            }
                            Atom::Rational(num, den)
                        }
                        Some(t) => {
                            return Err(syntax(t.line, t.column, "expected a denominator"));
                        }
                        None => {
                            let (l, c) = self.end_pos();
                            return Err(syntax(l, c, "expected a denominator"));
                        }
                    }
                } else {
                    Atom::Rational(num, 1)
                }
            }
            Tok::Ident(name) => match name.as_str() {
                "i" => Atom::Imag,
                "e" => Atom::SymPow(Sym::E, self.power()?),
                "m" => Atom::SymPow(Sym::M, self.power()?),
                "c" => Atom::SymPow(Sym::C, self.power()?),
                "c1" => Atom::SymPow(Sym::C1, self.power()?),
                "c2" => Atom::SymPow(Sym::C2, self.power()?),
                "c3" => Atom::SymPow(Sym::C3, self.power()?),
                "c4" => Atom::SymPow(Sym::C4, self.power()?),
                "phi" => Atom::Gen(GenKind::Phi, None),
                "phistar" => Atom::Gen(GenKind::PhiStar, None),
                "A" => Atom::Gen(GenKind::A, Some(self.bracketed_index()?)),
                "dphi" => Atom::Gen(GenKind::DPhi, Some(self.bracketed_index()?)),
                "dphistar" => {
                    Atom::Gen(GenKind::DPhiStar, Some(self.bracketed_index()?))
                }
                "j" => Atom::Gen(GenKind::Current, Some(self.bracketed_index()?)),
                "L" => Atom::Gen(GenKind::Lagrangian, None),
                "S" => Atom::Gen(GenKind::Interaction, None),
                "g" => Atom::Test(TestBase::G, None),
                "alpha" => Atom::Test(TestBase::Alpha, None),
                "beta" => Atom::Test(TestBase::Beta, None),
                "h" => Atom::Test(TestBase::H, None),
                "dg" => Atom::Test(TestBase::G, Some(self.bracketed_index()?)),
                "dalpha" => Atom::Test(TestBase::Alpha, Some(self.bracketed_index()?)),
                "dbeta" => Atom::Test(TestBase::Beta, Some(self.bracketed_index()?)),
                "dh" => Atom::Test(TestBase::H, Some(self.bracketed_index()?)),
                "metric" => {
                    self.expect(Tok::LBrack, "`[`")?;
                    let a = self.index_name()?;
                    self.expect(Tok::Comma, "`,`")?;
                    let b = self.index_name()?;
                    self.expect(Tok::RBrack, "`]`")?;
                    Atom::Metric(a, b)
                }
                other => {
                    return Err(syntax(l, c, format!("unknown name `{other}`")));
                }
            },
            _ => return Err(syntax(l, c, "expected a factor or coefficient")),
        };
        Ok((atom, l, c))
    }

    fn terms(&mut self) -> Result<Vec<TermAst>, ParseError> {
        let mut out = Vec::new();
        loop {
            let mut neg = false;
            let mut signed = false;
            while let Some(t) = self.peek() {
                match t.tok {
                    Tok::Minus => {
                        neg = !neg;
                        signed = true;
                        self.next();
                    }
                    Tok::Plus => {
                        signed = true;
                        self.next();
                    }
                    _ => break,
                }
            }
            let Some(start) = self.peek() else {
                let (l, c) = self.end_pos();
                if out.is_empty() || signed {
                    return Err(syntax(l, c, "expected a term"));
                }
                break;
            };
            if !out.is_empty() && !signed {
                return Err(syntax(start.line, start.column, "expected `+` or `-`"));
            }
            let (line, column) = (start.line, start.column);
            let mut atoms = Vec::new();
            while let Some(t) = self.peek() {
                if matches!(t.tok, Tok::Plus | Tok::Minus) {
                    break;
                }
                atoms.push(self.atom()?);
            }
            if atoms.is_empty() {
                return Err(syntax(line, column, "expected a term"));
            }
            out.push(TermAst { neg, atoms, line, column });
            if self.peek().is_none() {
                break;
            }
        }
        Ok(out)
    }
}

fn atom_index_names(atom: &Atom) -> Vec<&String> {
    match atom {
        Atom::Gen(_, Some(n)) | Atom::Test(_, Some(n)) => vec![n],
        Atom::Metric(a, b) => vec![a, b],
        _ => vec![],
    }
}

/// Maps index names to labels: `mN` is the label N, `sN` a contracted
/// label, any other name gets the smallest label not claimed explicitly.
fn assign_labels(terms: &[TermAst]) -> Result<BTreeMap<String, Idx>, ParseError> {
    let mut claimed: BTreeSet<u32> = BTreeSet::new();
    let mut named: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Idx> = BTreeMap::new();
    for t in terms {
        for (atom, l, c) in &t.atoms {
            for name in atom_index_names(atom) {
                if map.contains_key(name) || named.contains(name) {
                    continue;
                }
                if let Some(rest) = name.strip_prefix('m') {
                    if !rest.is_empty() && rest.chars().all(|d| d.is_ascii_digit()) {
                        let v: u32 = rest.parse().map_err(|_| {
                            syntax(*l, *c, format!("index label `{name}` is too large"))
                        })?;
                        if v >= DUMMY_BASE {
                            return Err(syntax(
                                *l,
                                *c,
                                format!("index label `{name}` is out of range"),
                            ));
                        }
                        claimed.insert(v);
                        map.insert(name.clone(), Idx(v));
                        continue;
                    }
                }
                if let Some(rest) = name.strip_prefix('s') {
                    if !rest.is_empty() && rest.chars().all(|d| d.is_ascii_digit()) {
                        let v: u32 = rest.parse().map_err(|_| {
                            syntax(*l, *c, format!("index label `{name}` is too large"))
                        })?;
                        if v >= DUMMY_BASE {
                            return Err(syntax(
                                *l,
                                *c,
                                format!("index label `{name}` is out of range"),
                            ));
                        }
                        map.insert(name.clone(), Idx(DUMMY_BASE + v));
                        continue;
                    }
                }
                named.push(name.clone());
            }
        }
    }
    let mut next = 1u32;
    for name in named {
        while claimed.contains(&next) {
            next += 1;
        }
        claimed.insert(next);
        map.insert(name, Idx(next));
    }
    Ok(map)
}

fn build_factor(kind: GenKind, index: Option<Idx>) -> FieldPolynomial {
    match kind {
        GenKind::Phi => fields::phi(),
        GenKind::PhiStar => fields::phistar(),
        GenKind::A => fields::a_field(index.expect("indexed factor")),
        GenKind::DPhi => fields::dphi(index.expect("indexed factor")),
        GenKind::DPhiStar => fields::dphistar(index.expect("indexed factor")),
        GenKind::Current => fields::current(index.expect("indexed factor")),
        GenKind::Lagrangian => fields::lagrangian(),
        GenKind::Interaction => fields::interaction_s(),
    }
}

fn single_term(coeff: Scalar, tests: Vec<TestFactor>, metrics: Vec<(Idx, Idx)>) -> FieldPolynomial {
    FieldPolynomial::from_terms(vec![FTerm { coeff, tests, metrics, gens: vec![] }])
}

/// Parses a polynomial; contraction is by repeated index names within a
/// term and every term must expose the same free names.
pub fn parse_poly(text: &str) -> Result<FieldPolynomial, ParseError> {
    let tokens = lex(text)?;
    if tokens.is_empty() {
        return Err(syntax(1, 1, "empty input"));
    }
    let mut parser = Parser { tokens, pos: 0 };
    let terms = parser.terms()?;

    // An index name is used at most twice per term; a contracted-by-name
    // label must actually be contracted wherever it appears.
    for t in &terms {
        let mut counts: BTreeMap<&String, u32> = BTreeMap::new();
        for (atom, _, _) in &t.atoms {
            for name in atom_index_names(atom) {
                *counts.entry(name).or_insert(0) += 1;
            }
        }
        for (atom, l, c) in &t.atoms {
            for name in atom_index_names(atom) {
                if counts[name] > 2 {
                    return Err(syntax(
                        *l,
                        *c,
                        format!("index name `{name}` appears more than twice in a term"),
                    ));
                }
                if counts[name] == 1
                    && name.strip_prefix('s').is_some_and(|rest| {
                        !rest.is_empty() && rest.chars().all(|d| d.is_ascii_digit())
                    })
                {
                    return Err(syntax(
                        *l,
                        *c,
                        format!("contracted index name `{name}` appears only once"),
                    ));
                }
            }
        }
    }

    // Every term exposes the same free index names.
    let free_names = |t: &TermAst| -> BTreeSet<String> {
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for (atom, _, _) in &t.atoms {
            for name in atom_index_names(atom) {
                *counts.entry(name.clone()).or_insert(0) += 1;
            }
        }
        counts.into_iter().filter(|(_, k)| *k == 1).map(|(n, _)| n).collect()
    };
    let first_free = free_names(&terms[0]);
    for t in &terms[1..] {
        let free = free_names(t);
        if free != first_free {
            let show = |s: &BTreeSet<String>| {
                let names: Vec<&str> = s.iter().map(|n| n.as_str()).collect();
                format!("{{{}}}", names.join(", "))
            };
            return Err(ParseError::FreeIndexMismatch {
                line: t.line,
                column: t.column,
                message: format!(
                    "term exposes {} but the first term exposes {}",
                    show(&free),
                    show(&first_free)
                ),
            });
        }
    }

    let labels = assign_labels(&terms)?;
    let mut total = FieldPolynomial::zero();
    for t in &terms {
        let mut coeff = if t.neg { Scalar::from_int(-1) } else { Scalar::one() };
        let mut poly = FieldPolynomial::one();
        for (atom, _, _) in &t.atoms {
            match atom {
                Atom::Rational(num, den) => {
                    coeff = coeff.mul_gauss(&GaussRat::ratio(*num, *den));
                }
                Atom::Imag => coeff = coeff.mul_gauss(&GaussRat::i()),
                Atom::SymPow(s, k) => coeff = coeff.mul(&Scalar::sym_pow(*s, *k)),
                Atom::Gen(kind, name) => {
                    let ix = name.as_ref().map(|n| labels[n]);
                    poly = poly.mul(&build_factor(*kind, ix));
                }
                Atom::Metric(a, b) => {
                    poly = poly.mul(&single_term(
                        Scalar::one(),
                        vec![],
                        vec![(labels[a], labels[b])],
                    ));
                }
                Atom::Test(base, name) => {
                    let tf = match name {
                        None => TestFactor::plain(*base),
                        Some(n) => TestFactor::deriv(*base, labels[n]),
                    };
                    poly = poly.mul(&single_term(Scalar::one(), vec![tf], vec![]));
                }
            }
        }
        total = total.add(&poly.scale(&coeff));
    }
    Ok(total)
}

/// Parses and additionally requires membership in the strict interaction
/// set.
pub fn parse_poly_strict(text: &str) -> Result<FieldPolynomial, ParseError> {
    let p = parse_poly(text)?;
    if !in_strict_set(&p) {
        let tokens = lex(text).expect("already lexed");
        let (line, column) =
            tokens.first().map(|t| (t.line, t.column)).unwrap_or((1, 1));
        return Err(ParseError::OutsideStrictSet { line, column });
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Scalar;

    fn roundtrip(p: &FieldPolynomial) {
        let printed = p.to_string();
        let parsed = parse_poly(&printed).unwrap_or_else(|e| {
            panic!("failed to parse printed form `{printed}`: {e}");
        });
        assert_eq!(&parsed, p, "roundtrip changed `{printed}`");
    }

    #[test]
    fn named_polynomials_expand() {
        assert_eq!(parse_poly("j[m1]").unwrap(), fields::current(Idx(1)));
        assert_eq!(parse_poly("L").unwrap(), fields::lagrangian());
        assert_eq!(parse_poly("S").unwrap(), fields::interaction_s());
    }

    #[test]
    fn products_and_coefficients() {
        assert_eq!(
            parse_poly("phi phistar").unwrap(),
            fields::phi().mul(&fields::phistar())
        );
        let half_i_e2 = Scalar::sym_pow(Sym::E, 2)
            .mul_gauss(&GaussRat::i())
            .mul_gauss(&GaussRat::ratio(1, 2));
        assert_eq!(
            parse_poly("1/2 i e^2 phi").unwrap(),
            fields::phi().scale(&half_i_e2)
        );
        assert_eq!(
            parse_poly("2 e - 2 e").unwrap(),
            FieldPolynomial::zero()
        );
    }

    #[test]
    fn repeated_names_contract() {
        let p = parse_poly("dphi[mu] dphi[mu] dphistar[nu]").unwrap();
        // The contracted pair canonicalizes identically whatever label
        // seeded it; the free name takes the next unclaimed label after
        // the contracted one.
        let expected = fields::dphi(Idx(7))
            .mul(&fields::dphi(Idx(7)))
            .mul(&fields::dphistar(Idx(2)));
        assert_eq!(p, expected);
        assert_eq!(p.free_indices().len(), 1);
    }

    #[test]
    fn strict_set_is_enforced_only_when_asked() {
        assert!(parse_poly("dphi[mu] dphi[mu] dphistar[nu]").is_ok());
        assert!(matches!(
            parse_poly_strict("dphi[mu] dphi[mu] dphistar[nu]"),
            Err(ParseError::OutsideStrictSet { .. })
        ));
        assert!(parse_poly_strict("L").is_ok());
        assert!(parse_poly_strict("j[m1]").is_ok());
    }

    #[test]
    fn explicit_and_automatic_labels_coexist() {
        let p = parse_poly("A[m5] dphi[nu]").unwrap();
        let free = p.free_indices();
        assert!(free.contains(&Idx(5)));
        assert!(free.contains(&Idx(1)));
    }

    #[test]
    fn error_positions() {
        match parse_poly("phi +\n  qux") {
            Err(ParseError::Syntax { line, column, .. }) => {
                assert_eq!((line, column), (2, 3));
            }
            other => panic!("expected a syntax error, got {other:?}"),
        }
        assert!(matches!(
            parse_poly("A[m1] + phi"),
            Err(ParseError::FreeIndexMismatch { .. })
        ));
        assert!(matches!(
            parse_poly("A[mu] A[mu] A[mu]"),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(parse_poly(""), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse_poly("3/0 phi"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse_poly("dphi[s0]"), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn printed_forms_parse_back() {
        let mut family = vec![
            FieldPolynomial::zero(),
            FieldPolynomial::constant(Scalar::sym(Sym::E).mul_int(2)),
            fields::phi(),
            fields::phistar(),
            fields::dphi(Idx(1)),
            fields::dphistar(Idx(2)),
            fields::a_field(Idx(1)),
            fields::current(Idx(1)),
            fields::j_dot_a(),
            fields::a_phistar_phi(Idx(3)),
            fields::phiphistar(),
            fields::a_squared(),
            fields::lagrangian(),
            fields::interaction_s(),
            fields::current(Idx(1)).theta_mu(Idx(2)),
            fields::lagrangian().theta_mu(Idx(1)),
            fields::current(Idx(1)).scale(
                &Scalar::sym(Sym::C1).mul_gauss(&GaussRat::ratio(-3, 4)),
            ),
            fields::phi().scale(&Scalar::constant(GaussRat::one().add(&GaussRat::i()))),
            crate::rengroup::interacting_current_shift(
                &crate::rengroup::RenMap::z(&Scalar::one()),
                Idx(1),
            ),
        ];
        family.push(crate::unitary::delta_l0().coeff(1));
        family.push(crate::unitary::delta_l0().coeff(2));
        family.push(crate::unitary::derivations().1);
        for p in &family {
            roundtrip(p);
        }
    }
}
