//! Reference oracles for the test suites.
//!
//! Nothing here shares code with `pconj-core`: the incomplete gamma oracle is
//! evaluated in big-integer fixed point through the lower series and its
//! complement, and the closed-testing oracle enumerates supersets directly
//! from the definition.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Fractional bits carried by the fixed-point oracle.
const FRAC_BITS: u32 = 640;

/// Fixed-point number `value / 2^FRAC_BITS`.
#[derive(Clone, Debug)]
struct Fixed(BigInt);

impl Fixed {
    fn one() -> Self {
        Fixed(BigInt::one() << FRAC_BITS)
    }

    /// Exact conversion of a finite f64.
    fn from_f64(x: f64) -> Self {
        assert!(x.is_finite());
        if x == 0.0 {
            return Fixed(BigInt::zero());
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1 } else { 1 };
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, e) = if exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), exp - 1075)
        };
        let mut v = BigInt::from(mant) * sign;
        let shift = e + FRAC_BITS as i64;
        if shift >= 0 {
            v <<= shift as u32;
        } else {
            v >>= (-shift) as u32;
        }
        Fixed(v)
    }

    fn mul(&self, other: &Fixed) -> Fixed {
        Fixed((&self.0 * &other.0) >> FRAC_BITS)
    }

    fn div_int(&self, d: u64) -> Fixed {
        Fixed(&self.0 / BigInt::from(d))
    }

    fn div(&self, other: &Fixed) -> Fixed {
        Fixed((&self.0 << FRAC_BITS) / &other.0)
    }

    fn to_f64(&self) -> f64 {
        // Shift so the integer carries ~80 significant bits, then scale.
        let bits = self.0.bits() as i64;
        let keep = 80i64;
        let drop = (bits - keep).max(0);
        let head = (&self.0 >> drop as u32).to_f64().expect("finite");
        head * 2f64.powi((drop - FRAC_BITS as i64) as i32)
    }
}

/// Regularized upper incomplete gamma `Q(a, y)` for positive integer `a`,
/// computed as `1 - e^{-y} Σ_{k≥a} y^k/k!` in 640-bit fixed point.
pub fn upper_gamma_q_integer(a: u32, y: f64) -> f64 {
    assert!(a >= 1 && y >= 0.0);
    if y == 0.0 {
        return 1.0;
    }
    let yf = Fixed::from_f64(y);
    let mut term = Fixed::one();
    let mut exp_y = Fixed(BigInt::zero());
    let mut tail = Fixed(BigInt::zero());
    let mut k: u64 = 0;
    loop {
        exp_y.0 += &term.0;
        if k >= a as u64 {
            tail.0 += &term.0;
        }
        k += 1;
        term = term.mul(&yf).div_int(k);
        if term.0.is_zero() || (k as f64 > y && term.0.abs() < BigInt::from(4)) {
            break;
        }
    }
    let lower = tail.div(&exp_y);
    let q = Fixed(Fixed::one().0 - lower.0);
    q.to_f64()
}

/// Survival function of the chi-square distribution with even degrees of
/// freedom, via [`upper_gamma_q_integer`].
pub fn chisq_survival_even(df: u32, x: f64) -> f64 {
    assert!(df >= 2 && df.is_multiple_of(2));
    upper_gamma_q_integer(df / 2, x / 2.0)
}

/// Relative error `|a - b| / |b|`, with `b == 0` treated as absolute.
pub fn rel_err(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

/// Closed-testing rejections computed straight from the definition: an
/// intersection `I` (bitmask over input positions) is rejected iff every
/// `J ⊇ I` has `local(J) ≤ alpha`.
pub struct BruteClosedTest {
    n: usize,
    rejected: Vec<bool>,
}

impl BruteClosedTest {
    pub fn new<F>(ps: &[f64], alpha: f64, local: F) -> Self
    where
        F: Fn(&[f64]) -> f64,
    {
        let n = ps.len();
        assert!(n <= 16, "oracle is exponential in n");
        let full = (1usize << n) - 1;
        let mut locally = vec![false; full + 1];
        for (mask, slot) in locally.iter_mut().enumerate().skip(1) {
            let members: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ps[i]).collect();
            *slot = local(&members) <= alpha;
        }
        let mut rejected = vec![false; full + 1];
        for mask in 1..=full {
            let rest = full & !mask;
            // every superset J = mask | s for s ⊆ rest
            let mut s = rest;
            let mut ok = true;
            loop {
                if !locally[mask | s] {
                    ok = false;
                    break;
                }
                if s == 0 {
                    break;
                }
                s = (s - 1) & rest;
            }
            rejected[mask] = ok;
        }
        BruteClosedTest { n, rejected }
    }

    pub fn is_rejected(&self, mask: usize) -> bool {
        self.rejected[mask]
    }

    /// `|R| - max{|I| : ∅ ≠ I ⊆ R, I not rejected}`.
    pub fn bound(&self, r_mask: usize) -> usize {
        let size = r_mask.count_ones() as usize;
        let mut best = 0;
        for mask in 1..self.rejected.len() {
            if mask & !r_mask == 0 && !self.rejected[mask] {
                best = best.max(mask.count_ones() as usize);
            }
        }
        size - best
    }

    pub fn full_bound(&self) -> usize {
        self.bound((1usize << self.n) - 1)
    }
}
