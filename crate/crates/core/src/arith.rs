//! Two's-complement bit-vector circuits.
//!
//! Bit vectors are MSB-first: index 0 is the sign bit. Arithmetic never wraps
//! silently; each step returns the equalities that must hold for the result to
//! be exact, and the caller decides when to assert them.

use crate::cnf::{Assignment, CnfFormula, Lit};
use crate::error::{Error, Result};
use crate::params::{signed_range, Hyperparams};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitVec {
    bits: Vec<Lit>,
}

impl BitVec {
    pub fn from_bits(bits: Vec<Lit>) -> Result<BitVec> {
        if bits.is_empty() {
            return Err(Error::Shape("bit-vector width must be >= 1".into()));
        }
        Ok(BitVec { bits })
    }

    /// `width` fresh labeled variables, MSB first; `label(i)` names bit `i`.
    pub fn fresh(formula: &mut CnfFormula, width: u32, label: impl Fn(u32) -> String) -> BitVec {
        assert!(width >= 1);
        BitVec {
            bits: (0..width).map(|i| formula.fresh_var(label(i))).collect(),
        }
    }

    /// Constant literals spelling `value` in `width`-bit two's complement.
    pub fn constant(value: i64, width: u32) -> Result<BitVec> {
        if width == 0 || width > 63 {
            return Err(Error::Shape(format!("unsupported width {width}")));
        }
        let (lo, hi) = signed_range(width);
        if value < lo || value > hi {
            return Err(Error::Range(format!(
                "{value} not representable in {width} signed bits"
            )));
        }
        let bits = (0..width)
            .map(|i| Lit::constant((value >> (width - 1 - i)) & 1 == 1))
            .collect();
        Ok(BitVec { bits })
    }

    pub fn zeros(width: u32) -> BitVec {
        BitVec {
            bits: vec![Lit::FALSE; width as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.bits.len() as u32
    }

    pub fn bits(&self) -> &[Lit] {
        &self.bits
    }

    pub fn sign(&self) -> Lit {
        self.bits[0]
    }

    /// Least-significant bit.
    pub fn lsb(&self) -> Lit {
        self.bits[self.bits.len() - 1]
    }

    /// Decoded signed value, or `None` if some bit is unassigned.
    pub fn decode(&self, assignment: &Assignment) -> Option<i64> {
        let bits: Option<Vec<bool>> = self.bits.iter().map(|&l| assignment.lit(l)).collect();
        Some(twos_complement(&bits?))
    }

    /// Value of an all-constant vector.
    pub fn const_value(&self) -> Option<i64> {
        let bits: Option<Vec<bool>> = self.bits.iter().map(|l| l.as_const()).collect();
        Some(twos_complement(&bits?))
    }

    /// The `width` least-significant bits.
    pub fn low_bits(&self, width: u32) -> Result<BitVec> {
        if width == 0 || width > self.width() {
            return Err(Error::Shape(format!(
                "cannot take {width} low bits of a {}-bit vector",
                self.width()
            )));
        }
        let start = (self.width() - width) as usize;
        Ok(BitVec {
            bits: self.bits[start..].to_vec(),
        })
    }
}

/// MSB-first two's-complement value: `-2^(w-1)*b0 + sum 2^(w-1-i)*bi`.
pub fn twos_complement(bits: &[bool]) -> i64 {
    let w = bits.len();
    bits.iter().enumerate().fold(0i64, |acc, (i, &b)| {
        if !b {
            acc
        } else if i == 0 {
            acc - (1i64 << (w - 1))
        } else {
            acc + (1i64 << (w - 1 - i))
        }
    })
}

/// Equalities an arithmetic step needs for its result to be exact.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SideConstraints {
    equalities: Vec<(Lit, Lit)>,
}

impl SideConstraints {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, a: Lit, b: Lit) {
        // trivially true pairs carry no information
        if a != b {
            self.equalities.push((a, b));
        }
    }

    pub fn extend(&mut self, other: SideConstraints) {
        self.equalities.extend(other.equalities);
    }

    pub fn equalities(&self) -> &[(Lit, Lit)] {
        &self.equalities
    }

    pub fn len(&self) -> usize {
        self.equalities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equalities.is_empty()
    }

    pub fn assert_into(&self, formula: &mut CnfFormula) {
        for &(a, b) in &self.equalities {
            formula.assert_equal(a, b);
        }
    }

    /// Whether all equalities hold under `assignment`.
    pub fn holds(&self, assignment: &Assignment) -> bool {
        self.equalities
            .iter()
            .all(|&(a, b)| assignment.lit(a).is_some() && assignment.lit(a) == assignment.lit(b))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AddMode {
    /// No overflow: carry into the sign position equals carry out of it.
    Signed,
    /// No overflow: carry out of the most significant position is zero.
    Unsigned,
}

/// Ripple adder built from generate/propagate terms, LSB to MSB:
/// `y_i = G ^ P ^ c`, `c' = G | (P & c)` with `G = a_i & b_i`, `P = a_i | b_i`.
pub fn bitwise_add(
    formula: &mut CnfFormula,
    a: &BitVec,
    b: &BitVec,
    mode: AddMode,
) -> Result<(BitVec, SideConstraints)> {
    if a.width() != b.width() {
        return Err(Error::Shape(format!(
            "adder operands differ in width: {} vs {}",
            a.width(),
            b.width()
        )));
    }
    let n = a.bits.len();
    let mut sum = vec![Lit::FALSE; n];
    let mut carry = Lit::FALSE;
    let mut carry_prev = Lit::FALSE;
    for i in (0..n).rev() {
        carry_prev = carry;
        let g = formula.and(a.bits[i], b.bits[i]);
        let p = formula.or(a.bits[i], b.bits[i]);
        let gp = formula.xor(g, p);
        sum[i] = formula.xor(gp, carry_prev);
        let pc = formula.and(p, carry_prev);
        carry = formula.or(g, pc);
    }
    let mut side = SideConstraints::new();
    match mode {
        AddMode::Signed => side.push(carry, carry_prev),
        AddMode::Unsigned => side.push(carry, Lit::FALSE),
    }
    Ok((BitVec { bits: sum }, side))
}

/// `|a|` at the same width: flip every bit by the sign, then add the sign at
/// the LSB. The side-constraint fails exactly for the most negative value.
pub fn conditional_negate(formula: &mut CnfFormula, a: &BitVec) -> (BitVec, SideConstraints) {
    let sign = a.sign();
    negate_if(formula, a, sign)
}

fn negate_if(formula: &mut CnfFormula, a: &BitVec, cond: Lit) -> (BitVec, SideConstraints) {
    let flipped = BitVec {
        bits: a.bits.iter().map(|&bit| formula.xor(cond, bit)).collect(),
    };
    let mut addend = BitVec::zeros(a.width());
    *addend.bits.last_mut().unwrap() = cond;
    bitwise_add(formula, &flipped, &addend, AddMode::Signed).expect("equal widths")
}

/// Signed shift-and-add multiplication producing a `slack_bits`-wide result.
///
/// Magnitudes are accumulated with unsigned additions (one partial product per
/// multiplier bit, LSB first); the product magnitude is then bounded below
/// `2^product_magnitude_bits` and the sign `a0 ^ b0` is applied by
/// conditional negation.
pub fn bitwise_mul(
    formula: &mut CnfFormula,
    a: &BitVec,
    b: &BitVec,
    hp: &Hyperparams,
) -> Result<(BitVec, SideConstraints)> {
    let n = hp.num_bits;
    let s = hp.slack_bits;
    if a.width() != n || b.width() != n {
        return Err(Error::Shape(format!(
            "multiplier operands must be {n} bits, got {} and {}",
            a.width(),
            b.width()
        )));
    }
    if hp.product_magnitude_bits >= s {
        return Err(Error::Config(format!(
            "product_magnitude_bits {} must be < slack_bits {s}",
            hp.product_magnitude_bits
        )));
    }
    if 2 * n - 1 > s {
        return Err(Error::Config(format!(
            "slack_bits {s} cannot hold a product of two {n}-bit operands"
        )));
    }

    let mut side = SideConstraints::new();
    let (a_mag, c) = conditional_negate(formula, a);
    side.extend(c);
    let (b_mag, c) = conditional_negate(formula, b);
    side.extend(c);

    let (n, s) = (n as usize, s as usize);
    let mut product = BitVec::zeros(s as u32);
    for i in (0..n).rev() {
        let shift = n - 1 - i;
        let mut partial = BitVec::zeros(s as u32);
        for j in 0..n {
            partial.bits[s - 1 - j - shift] = formula.and(b_mag.bits[n - 1 - j], a_mag.bits[i]);
        }
        let (sum, c) = bitwise_add(formula, &product, &partial, AddMode::Unsigned)?;
        product = sum;
        side.extend(c);
    }
    for k in 0..(s - hp.product_magnitude_bits as usize) {
        side.push(product.bits[k], Lit::FALSE);
    }

    let sign = formula.xor(a.sign(), b.sign());
    let (signed, c) = negate_if(formula, &product, sign);
    side.extend(c);
    Ok((signed, side))
}

/// Prepends copies of the sign bit; the value is unchanged.
pub fn sign_extend(a: &BitVec, new_width: u32) -> Result<BitVec> {
    if new_width < a.width() {
        return Err(Error::Shape(format!(
            "cannot sign-extend {} bits to {new_width}",
            a.width()
        )));
    }
    let mut bits = vec![a.sign(); (new_width - a.width()) as usize];
    bits.extend_from_slice(&a.bits);
    Ok(BitVec { bits })
}

/// Arithmetic right shift by `k`: value becomes `floor(v / 2^k)`.
pub fn drop_lsbs(a: &BitVec, k: u32) -> Result<BitVec> {
    if k >= a.width() {
        return Err(Error::Shape(format!(
            "cannot drop {k} bits of a {}-bit vector",
            a.width()
        )));
    }
    let keep = (a.width() - k) as usize;
    let mut bits = vec![a.sign(); k as usize];
    bits.extend_from_slice(&a.bits[..keep]);
    Ok(BitVec { bits })
}
