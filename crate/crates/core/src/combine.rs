//! Sufficient combining functions and the distribution kernels behind them.
//!
//! A combiner maps `m >= 1` p-values to one p-value. It must be
//! coordinate-wise non-decreasing and, when its inputs are independent and
//! uniform (or stochastically larger), produce an output that is itself
//! stochastically no smaller than uniform.
//!
//! Every combiner here is additive in a per-p score: the output depends on
//! the inputs only through `m` and the sum of `score(p_i)`. Closed testing
//! exploits this to build intersection statistics incrementally; see
//! [`Accumulator`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Lower clamp for Stouffer inputs (and `1 - p` for the upper end).
pub const STOUFFER_EPS: f64 = 1e-300;

/// Below this the direct Poisson-weight recursion cannot underflow.
const DIRECT_SERIES_LIMIT: f64 = 700.0;

/// `P(χ²_df ≥ x)` for even `df`.
///
/// Uses the closed form `exp(-x/2) Σ_{j<df/2} (x/2)^j / j!`, summed with
/// compensation. Large statistics switch to log-space terms and underflow
/// cleanly to 0.
pub fn chisq_even_df_survival(df: u64, x: f64) -> Result<f64> {
    if df == 0 || !df.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "degrees of freedom must be even and positive, got {df}"
        )));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::InvalidArgument(format!("chi-square statistic must be >= 0, got {x}")));
    }
    Ok(upper_poisson_tail(df / 2, x / 2.0))
}

/// `Q(m, y) = e^{-y} Σ_{j<m} y^j / j!` for integer `m ≥ 1`, `y ≥ 0`.
fn upper_poisson_tail(m: u64, y: f64) -> f64 {
    if y == 0.0 {
        return 1.0;
    }
    if y.is_infinite() {
        return 0.0;
    }
    if y <= DIRECT_SERIES_LIMIT {
        let mut term = (-y).exp();
        let mut acc = CompensatedSum::new().plus(term);
        for j in 1..m {
            term = term * y / j as f64;
            acc.add(term);
            if term == 0.0 && j as f64 > y {
                break;
            }
        }
        return acc.value().clamp(0.0, 1.0);
    }

    // log t_j = -y + j ln y - ln j!
    let ln_y = y.ln();
    let peak = (m - 1).min(y.floor() as u64);
    let mut log_terms = Vec::with_capacity(m.min(1 << 16) as usize);
    let mut log_t = -y;
    log_terms.push(log_t);
    let mut log_peak = log_t;
    for j in 1..m {
        log_t += ln_y - (j as f64).ln();
        log_terms.push(log_t);
        if j <= peak {
            log_peak = log_t;
        } else if log_t < log_peak - 50.0 {
            break;
        }
    }
    let scaled: CompensatedSum = log_terms.iter().map(|&l| (l - log_peak).exp()).collect();
    let log_q = log_peak + scaled.value().ln();
    if log_q < -745.2 {
        0.0
    } else {
        log_q.exp().clamp(0.0, 1.0)
    }
}

/// Standard normal survival `P(Z ≥ z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Inverse of [`normal_sf`] on (0, 1): Wichura's AS 241 (PPND16), relative
/// accuracy around 1e-16.
pub fn normal_isf(p: f64) -> f64 {
    -normal_quantile(p)
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Lower-tail standard normal quantile.
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_545e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_546,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_9e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_88e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_8e-15,
    ];
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

/// A combiner's transform of one p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    /// The input sat on a boundary (0 for Fisher; 0 or 1 for Stouffer).
    pub degenerate: bool,
}

/// Output of a combiner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CombineResult {
    pub value: f64,
    /// The combiner's test statistic (`-2 Σ ln p` for Fisher, `Σ z / √m`
    /// for Stouffer).
    pub statistic: f64,
    pub m: usize,
    pub combiner: CombinerKind,
    pub degenerate: bool,
}

/// A sufficient combining function, expressed through an additive score.
pub trait Combiner: Send + Sync {
    fn kind(&self) -> CombinerKind;

    fn score(&self, p: f64) -> Score;

    /// Map a summed score over `m` inputs to the combined p-value.
    fn finish(&self, score_sum: f64, m: usize, degenerate: bool) -> CombineResult;

    /// The `m = 1` case; combiners with an exact identity override this.
    fn single(&self, p: f64) -> CombineResult {
        let s = self.score(p);
        self.finish(s.value, 1, s.degenerate)
    }

    fn combine(&self, ps: &[f64]) -> Result<CombineResult> {
        if ps.is_empty() {
            return Err(Error::InvalidArgument("cannot combine an empty set of p-values".into()));
        }
        if let Some(&bad) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!("p-value outside [0, 1]: {bad}")));
        }
        // Largest first: the same order the conjunction curve and the
        // closed-testing lattice accumulate in, and exactly order-invariant.
        let mut sorted = ps.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut acc = Accumulator::new();
        for p in sorted {
            acc.push(self, p);
        }
        Ok(acc.result(self).expect("non-empty"))
    }
}

/// Running score sum for one set of p-values.
///
/// Feeding the same p-values in the same order always yields the same bits,
/// which is what keeps the conjunction curve and the closed-testing lattice
/// in exact agreement.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    sum: CompensatedSum,
    m: usize,
    degenerate: bool,
    /// The p-value when `m == 1`.
    first: f64,
}

impl Accumulator {
    pub const fn new() -> Self {
        Accumulator {
            sum: CompensatedSum::new(),
            m: 0,
            degenerate: false,
            first: f64::NAN,
        }
    }

    pub fn push<C: Combiner + ?Sized>(&mut self, c: &C, p: f64) {
        let s = c.score(p);
        self.sum.add(s.value);
        self.degenerate |= s.degenerate;
        if self.m == 0 {
            self.first = p;
        }
        self.m += 1;
    }

    pub fn with<C: Combiner + ?Sized>(mut self, c: &C, p: f64) -> Self {
        self.push(c, p);
        self
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn result<C: Combiner + ?Sized>(&self, c: &C) -> Option<CombineResult> {
        match self.m {
            0 => None,
            1 => Some(c.single(self.first)),
            m => Some(c.finish(self.sum.value(), m, self.degenerate)),
        }
    }
}

/// Fisher's method: `P(χ²_{2m} ≥ -2 Σ ln p_i)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Fisher;

impl Combiner for Fisher {
    fn kind(&self) -> CombinerKind {
        CombinerKind::Fisher
    }

    fn score(&self, p: f64) -> Score {
        Score {
            value: p.ln(),
            degenerate: p == 0.0,
        }
    }

    fn finish(&self, score_sum: f64, m: usize, degenerate: bool) -> CombineResult {
        let statistic = -2.0 * score_sum;
        let value = if statistic == f64::INFINITY {
            0.0
        } else {
            chisq_even_df_survival(2 * m as u64, statistic.max(0.0)).expect("valid by construction")
        };
        CombineResult {
            value,
            statistic,
            m,
            combiner: CombinerKind::Fisher,
            degenerate,
        }
    }

    /// `P(χ²_2 ≥ -2 ln p) = p` exactly.
    fn single(&self, p: f64) -> CombineResult {
        CombineResult {
            value: p,
            statistic: -2.0 * p.ln(),
            m: 1,
            combiner: CombinerKind::Fisher,
            degenerate: p == 0.0,
        }
    }
}

/// Stouffer's method: `Φ̄(Σ Φ̄⁻¹(p_i) / √m)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Stouffer;

impl Combiner for Stouffer {
    fn kind(&self) -> CombinerKind {
        CombinerKind::Stouffer
    }

    fn score(&self, p: f64) -> Score {
        // 1 - 1e-300 rounds to 1, so the upper clamp is applied through the
        // symmetry Φ̄⁻¹(1 - e) = -Φ̄⁻¹(e).
        if p <= STOUFFER_EPS {
            Score {
                value: normal_isf(STOUFFER_EPS),
                degenerate: p < STOUFFER_EPS,
            }
        } else if 1.0 - p <= STOUFFER_EPS {
            Score {
                value: -normal_isf(STOUFFER_EPS),
                degenerate: true,
            }
        } else {
            Score {
                value: normal_isf(p),
                degenerate: false,
            }
        }
    }

    fn finish(&self, score_sum: f64, m: usize, degenerate: bool) -> CombineResult {
        let statistic = score_sum / (m as f64).sqrt();
        CombineResult {
            value: normal_sf(statistic).clamp(0.0, 1.0),
            statistic,
            m,
            combiner: CombinerKind::Stouffer,
            degenerate,
        }
    }
}

/// Named combiner, used for configuration and dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombinerKind {
    Fisher,
    Stouffer,
}

impl CombinerKind {
    pub const ALL: [CombinerKind; 2] = [CombinerKind::Fisher, CombinerKind::Stouffer];

    pub fn name(self) -> &'static str {
        match self {
            CombinerKind::Fisher => "fisher",
            CombinerKind::Stouffer => "stouffer",
        }
    }
}

impl fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CombinerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fisher" => Ok(CombinerKind::Fisher),
            "stouffer" => Ok(CombinerKind::Stouffer),
            other => Err(Error::InvalidArgument(format!(
                "unknown combiner {other:?} (expected fisher or stouffer)"
            ))),
        }
    }
}

impl Combiner for CombinerKind {
    fn kind(&self) -> CombinerKind {
        *self
    }

    fn score(&self, p: f64) -> Score {
        match self {
            CombinerKind::Fisher => Fisher.score(p),
            CombinerKind::Stouffer => Stouffer.score(p),
        }
    }

    fn finish(&self, score_sum: f64, m: usize, degenerate: bool) -> CombineResult {
        match self {
            CombinerKind::Fisher => Fisher.finish(score_sum, m, degenerate),
            CombinerKind::Stouffer => Stouffer.finish(score_sum, m, degenerate),
        }
    }

    fn single(&self, p: f64) -> CombineResult {
        match self {
            CombinerKind::Fisher => Fisher.single(p),
            CombinerKind::Stouffer => Stouffer.single(p),
        }
    }
}

pub fn fisher_combine(ps: &[f64]) -> Result<CombineResult> {
    Fisher.combine(ps)
}

pub fn stouffer_combine(ps: &[f64]) -> Result<CombineResult> {
    Stouffer.combine(ps)
}

pub fn combine(kind: CombinerKind, ps: &[f64]) -> Result<CombineResult> {
    kind.combine(ps)
}
