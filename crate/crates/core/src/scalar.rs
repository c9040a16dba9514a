//! Exact coefficient arithmetic.
//!
//! A [`Scalar`] is an element of the Gaussian rationals adjoined a fixed set
//! of formal commuting symbols: the coupling `e`, the mass `m`, the
//! interpolation parameter `c`, and four ansatz constants `c1..c4` used by
//! the anomaly solvers. Internally it is a sparse sum of symbol monomials
//! with Gaussian rational coefficients.

use num::{BigInt, BigRational, One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Formal commuting symbols that may appear in coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sym {
    /// Electric coupling `e`.
    E,
    /// Scalar mass `m`.
    M,
    /// Interpolation parameter `c` between the two time-ordering
    /// prescriptions.
    C,
    /// Ansatz constant `c1`.
    C1,
    /// Ansatz constant `c2`.
    C2,
    /// Ansatz constant `c3`.
    C3,
    /// Ansatz constant `c4`.
    C4,
}

pub const SYMS: [Sym; 7] = [Sym::E, Sym::M, Sym::C, Sym::C1, Sym::C2, Sym::C3, Sym::C4];

impl Sym {
    pub fn name(self) -> &'static str {
        match self {
            Sym::E => "e",
            Sym::M => "m",
            Sym::C => "c",
            Sym::C1 => "c1",
            Sym::C2 => "c2",
            Sym::C3 => "c3",
            Sym::C4 => "c4",
        }
    }

    pub fn slot(self) -> usize {
        match self {
            Sym::E => 0,
            Sym::M => 1,
            Sym::C => 2,
            Sym::C1 => 3,
            Sym::C2 => 4,
            Sym::C3 => 5,
            Sym::C4 => 6,
        }
    }
}

/// Exponent vector of a symbol monomial, one slot per [`Sym`].
pub type SymPow = [u8; 7];

/// A Gaussian rational `re + im * i` with exact rational parts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct GaussRat {
    pub re: BigRational,
    pub im: BigRational,
}

impl GaussRat {
    pub fn zero() -> Self {
        GaussRat::default()
    }

    pub fn one() -> Self {
        GaussRat { re: BigRational::one(), im: BigRational::zero() }
    }

    pub fn i() -> Self {
        GaussRat { re: BigRational::zero(), im: BigRational::one() }
    }

    pub fn from_int(n: i64) -> Self {
        GaussRat { re: BigRational::from_integer(BigInt::from(n)), im: BigRational::zero() }
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        GaussRat {
            re: BigRational::new(BigInt::from(num), BigInt::from(den)),
            im: BigRational::zero(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn add(&self, o: &GaussRat) -> GaussRat {
        GaussRat { re: &self.re + &o.re, im: &self.im + &o.im }
    }

    pub fn neg(&self) -> GaussRat {
        GaussRat { re: -self.re.clone(), im: -self.im.clone() }
    }

    pub fn mul(&self, o: &GaussRat) -> GaussRat {
        GaussRat {
            re: &self.re * &o.re - &self.im * &o.im,
            im: &self.re * &o.im + &self.im * &o.re,
        }
    }

    /// Complex conjugate.
    pub fn conj(&self) -> GaussRat {
        GaussRat { re: self.re.clone(), im: -self.im.clone() }
    }

    /// Multiplicative inverse. Panics on zero.
    pub fn inv(&self) -> GaussRat {
        let n = &self.re * &self.re + &self.im * &self.im;
        assert!(!n.is_zero(), "inverse of zero");
        GaussRat { re: &self.re / &n, im: -(&self.im / &n) }
    }
}

/// Exact coefficient: a sparse sum of symbol monomials over [`GaussRat`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(from = "ScalarSer", into = "ScalarSer")]
pub struct Scalar(BTreeMap<SymPow, GaussRat>);

/// Serialization mirror: maps keyed by arrays do not survive JSON, pairs do.
#[derive(Serialize, Deserialize)]
struct ScalarSer(Vec<(SymPow, GaussRat)>);

impl From<ScalarSer> for Scalar {
    fn from(s: ScalarSer) -> Self {
        Scalar(s.0.into_iter().filter(|(_, g)| !g.is_zero()).collect())
    }
}

impl From<Scalar> for ScalarSer {
    fn from(s: Scalar) -> Self {
        ScalarSer(s.0.into_iter().collect())
    }
}

impl Scalar {
    pub fn zero() -> Self {
        Scalar(BTreeMap::new())
    }

    pub fn one() -> Self {
        Scalar::constant(GaussRat::one())
    }

    pub fn i() -> Self {
        Scalar::constant(GaussRat::i())
    }

    pub fn minus_i() -> Self {
        Scalar::constant(GaussRat::i().neg())
    }

    pub fn from_int(n: i64) -> Self {
        Scalar::constant(GaussRat::from_int(n))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Scalar::constant(GaussRat::ratio(num, den))
    }

    pub fn constant(g: GaussRat) -> Self {
        let mut m = BTreeMap::new();
        if !g.is_zero() {
            m.insert([0u8; 7], g);
        }
        Scalar(m)
    }

    pub fn sym(s: Sym) -> Self {
        Scalar::sym_pow(s, 1)
    }

    pub fn sym_pow(s: Sym, k: u8) -> Self {
        let mut pow = [0u8; 7];
        pow[s.slot()] = k;
        let mut m = BTreeMap::new();
        m.insert(pow, GaussRat::one());
        Scalar(m)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.0.len() == 1
            && self.0.get(&[0u8; 7]).map(|g| *g == GaussRat::one()).unwrap_or(false)
    }

    pub fn add(&self, o: &Scalar) -> Scalar {
        let mut m = self.0.clone();
        for (k, v) in &o.0 {
            let entry = m.entry(*k).or_insert_with(GaussRat::zero);
            *entry = entry.add(v);
            if entry.is_zero() {
                m.remove(k);
            }
        }
        Scalar(m)
    }

    pub fn sub(&self, o: &Scalar) -> Scalar {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> Scalar {
        Scalar(self.0.iter().map(|(k, v)| (*k, v.neg())).collect())
    }

    pub fn mul(&self, o: &Scalar) -> Scalar {
        let mut m: BTreeMap<SymPow, GaussRat> = BTreeMap::new();
        for (ka, va) in &self.0 {
            for (kb, vb) in &o.0 {
                let mut k = *ka;
                for (slot, e) in kb.iter().enumerate() {
                    k[slot] = k[slot].checked_add(*e).expect("symbol exponent overflow");
                }
                let prod = va.mul(vb);
                let entry = m.entry(k).or_insert_with(GaussRat::zero);
                *entry = entry.add(&prod);
                if entry.is_zero() {
                    m.remove(&k);
                }
            }
        }
        Scalar(m)
    }

    pub fn mul_gauss(&self, g: &GaussRat) -> Scalar {
        if g.is_zero() {
            return Scalar::zero();
        }
        Scalar(self.0.iter().map(|(k, v)| (*k, v.mul(g))).collect())
    }

    pub fn mul_int(&self, n: i64) -> Scalar {
        self.mul_gauss(&GaussRat::from_int(n))
    }

    pub fn div_int(&self, n: i64) -> Scalar {
        assert!(n != 0, "division by zero");
        self.mul_gauss(&GaussRat::ratio(1, n))
    }

    /// Complex conjugation; the formal symbols are treated as real.
    pub fn conj(&self) -> Scalar {
        Scalar(self.0.iter().map(|(k, v)| (*k, v.conj())).collect())
    }

    /// Substitute a scalar value for one symbol.
    pub fn substitute(&self, s: Sym, value: &Scalar) -> Scalar {
        let slot = s.slot();
        let mut out = Scalar::zero();
        for (k, v) in &self.0 {
            let e = k[slot];
            let mut k0 = *k;
            k0[slot] = 0;
            let mut term = Scalar(std::iter::once((k0, v.clone())).collect());
            for _ in 0..e {
                term = term.mul(value);
            }
            out = out.add(&term);
        }
        out
    }

    /// The constant part, if the scalar has no symbol content.
    pub fn as_gauss(&self) -> Option<GaussRat> {
        if self.0.is_empty() {
            return Some(GaussRat::zero());
        }
        if self.0.len() == 1 {
            if let Some(g) = self.0.get(&[0u8; 7]) {
                return Some(g.clone());
            }
        }
        None
    }

    /// Iterate over (exponents, coefficient) pairs.
    pub fn iter(&self) -> impl Iterator<Item = (&SymPow, &GaussRat)> {
        self.0.iter()
    }

    pub(crate) fn from_parts(parts: BTreeMap<SymPow, GaussRat>) -> Scalar {
        Scalar(parts.into_iter().filter(|(_, v)| !v.is_zero()).collect())
    }
}

fn fmt_rat(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Render one Gaussian rational as a product-style token sequence, together
/// with its sign. `(sign, body)` where body omits the leading sign.
pub fn gauss_tokens(g: &GaussRat) -> Vec<(bool, String)> {
    // Each call site prints re and im parts as separate summands.
    let mut out = Vec::new();
    if !g.re.is_zero() {
        let neg = g.re.is_negative();
        let a = g.re.abs();
        out.push((neg, fmt_rat(&a)));
    }
    if !g.im.is_zero() {
        let neg = g.im.is_negative();
        let a = g.im.abs();
        if a.is_one() {
            out.push((neg, "i".to_string()));
        } else {
            out.push((neg, format!("{} i", fmt_rat(&a))));
        }
    }
    out
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (pow, g) in &self.0 {
            let mut mono = String::new();
            for (slot, e) in pow.iter().enumerate() {
                if *e > 0 {
                    let s = SYMS[slot].name();
                    if !mono.is_empty() {
                        mono.push(' ');
                    }
                    if *e == 1 {
                        mono.push_str(s);
                    } else {
                        mono.push_str(&format!("{}^{}", s, e));
                    }
                }
            }
            for (neg, body) in gauss_tokens(g) {
                if first {
                    if neg {
                        write!(f, "-")?;
                    }
                    first = false;
                } else if neg {
                    write!(f, " - ")?;
                } else {
                    write!(f, " + ")?;
                }
                let unit_body = body == "1";
                if unit_body && !mono.is_empty() {
                    write!(f, "{}", mono)?;
                } else if mono.is_empty() {
                    write!(f, "{}", body)?;
                } else {
                    write!(f, "{} {}", body, mono)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_basics() {
        let two = Scalar::from_int(2);
        let half = Scalar::ratio(1, 2);
        assert!(two.mul(&half).is_one());
        let i = Scalar::i();
        assert_eq!(i.mul(&i), Scalar::from_int(-1));
        let e = Scalar::sym(Sym::E);
        let e2 = e.mul(&e);
        assert_eq!(e2, Scalar::sym_pow(Sym::E, 2));
        assert!(e2.sub(&e2).is_zero());
    }

    #[test]
    fn substitution() {
        // (c - 1) at c = 1 vanishes, at c = 0 gives -1.
        let c = Scalar::sym(Sym::C);
        let expr = c.sub(&Scalar::one());
        assert!(expr.substitute(Sym::C, &Scalar::one()).is_zero());
        assert_eq!(expr.substitute(Sym::C, &Scalar::zero()), Scalar::from_int(-1));
    }

    #[test]
    fn conjugation() {
        let z = Scalar::i().mul(&Scalar::sym(Sym::E)).add(&Scalar::from_int(3));
        let zc = z.conj();
        assert_eq!(zc, Scalar::minus_i().mul(&Scalar::sym(Sym::E)).add(&Scalar::from_int(3)));
        assert_eq!(zc.conj(), z);
    }

    #[test]
    fn display_form() {
        let x = Scalar::from_int(2)
            .mul(&Scalar::i())
            .mul(&Scalar::sym_pow(Sym::E, 2))
            .sub(&Scalar::ratio(1, 2));
        let s = format!("{}", x);
        assert!(s.contains("2 i e^2"), "got {s}");
        assert!(s.contains("1/2"), "got {s}");
    }
}
