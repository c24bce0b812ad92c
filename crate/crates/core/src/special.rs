//! Normal distribution functions and the bivariate Gaussian copula.
//!
//! `norm_ppf` is Wichura's AS241 (PPND16) rational approximation, `norm_cdf`
//! goes through `libm::erfc`, and the bivariate normal orthant probability
//! follows Genz's BVNU Gauss-Legendre scheme (Drezner-Wesolowsky for
//! `|rho| < 0.925`, a series-corrected integral above that).

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Arguments of `norm_ppf` are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-10;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Standard normal quantile for `p` in `(0, 1)`. Not clamped; see [`norm_ppf_clamped`].
pub fn norm_ppf(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        let num = ((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r
            + 6.726_577_092_700_870_1e4)
            * r
            + 4.592_195_393_154_987_1e4)
            * r
            + 1.373_169_376_550_946_1e4)
            * r
            + 1.971_590_950_306_551_4e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((5.226_495_278_852_854_6e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271_1e4)
            * r
            + 2.121_379_430_158_659_6e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    if tail <= 0.0 {
        return if q < 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
    }
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_6)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_6;
        let den = ((((((1.050_750_071_644_416_8e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_3e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_445_9e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

#[inline]
pub fn norm_ppf_clamped(p: f64) -> f64 {
    norm_ppf(clamp_prob(p))
}

// Half of the symmetric Gauss-Legendre rules (negative nodes) used by BVNU.
const GL6_X: [f64; 3] = [-0.932_469_514_203_152, -0.661_209_386_466_264_5, -0.238_619_186_083_196_93];
const GL6_W: [f64; 3] = [0.171_324_492_379_169_75, 0.360_761_573_048_138_94, 0.467_913_934_572_691_37];
const GL12_X: [f64; 6] = [
    -0.981_560_634_246_719_2,
    -0.904_117_256_370_474_8,
    -0.769_902_674_194_304_7,
    -0.587_317_954_286_617_5,
    -0.367_831_498_998_180_2,
    -0.125_233_408_511_468_9,
];
const GL12_W: [f64; 6] = [
    0.047_175_336_386_512_02,
    0.106_939_325_995_318_88,
    0.160_078_328_543_346_1,
    0.203_167_426_723_065_65,
    0.233_492_536_538_354_64,
    0.249_147_045_813_402_7,
];
const GL20_X: [f64; 10] = [
    -0.993_128_599_185_094_9,
    -0.963_971_927_277_913_8,
    -0.912_234_428_251_325_8,
    -0.839_116_971_822_218_8,
    -0.746_331_906_460_150_8,
    -0.636_053_680_726_515,
    -0.510_867_001_950_827_1,
    -0.373_706_088_715_419_55,
    -0.227_785_851_141_645_1,
    -0.076_526_521_133_497_34,
];
const GL20_W: [f64; 10] = [
    0.017_614_007_139_153_273,
    0.040_601_429_800_386_22,
    0.062_672_048_334_109_44,
    0.083_276_741_576_704_67,
    0.101_930_119_817_240_26,
    0.118_194_531_961_518_25,
    0.131_688_638_449_176_53,
    0.142_096_109_318_381_87,
    0.149_172_986_472_603_66,
    0.152_753_387_130_725_78,
];

fn gl_rule(r: f64) -> (&'static [f64], &'static [f64]) {
    let a = r.abs();
    if a < 0.3 {
        (&GL6_X, &GL6_W)
    } else if a < 0.75 {
        (&GL12_X, &GL12_W)
    } else {
        (&GL20_X, &GL20_W)
    }
}

/// Upper orthant probability `P(X > h, Y > k)` for a standard bivariate
/// normal with correlation `r`.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let (xs, ws) = gl_rule(r);
    let mut h = h;
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for (x, w) in xs.iter().zip(ws) {
            for sign in [-1.0, 1.0] {
                let sn = (asr * (sign * x + 1.0) / 2.0).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        return bvn * asr / (4.0 * PI) + norm_cdf(-h) * norm_cdf(-k);
    }
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let as_ = (1.0 - r) * (1.0 + r);
        let mut a = as_.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-(bs / as_ + hk) / 2.0).exp()
            * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp()
                * (2.0 * PI).sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for (x, w) in xs.iter().zip(ws) {
            for sign in [-1.0, 1.0] {
                let xs2 = (a * (sign * x + 1.0)).powi(2);
                let rs = (1.0 - xs2).sqrt();
                let asr = -(bs / xs2 + hk) / 2.0;
                if asr > -100.0 {
                    bvn += a
                        * w
                        * asr.exp()
                        * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                            - (1.0 + c * xs2 * (1.0 + d * xs2)));
                }
            }
        }
        bvn = -bvn / (2.0 * PI);
    }
    if r > 0.0 {
        bvn += norm_cdf(-h.max(k));
    } else {
        bvn = -bvn;
        if k > h {
            if h < 0.0 {
                bvn += norm_cdf(k) - norm_cdf(h);
            } else {
                bvn += norm_cdf(-h) - norm_cdf(-k);
            }
        }
    }
    // restore the caller's sign convention for k (only used above)
    let _ = &mut h;
    bvn.clamp(0.0, 1.0)
}

/// Lower orthant probability `P(X <= a, Y <= b)` with correlation `r`.
#[inline]
pub fn bvn_lower(a: f64, b: f64, r: f64) -> f64 {
    bvn_upper(-a, -b, r)
}

/// Bivariate Gaussian copula with correlation `rho`, `0 <= rho < 1`.
///
/// The Drezner-Wesolowsky nodes depend only on `rho`, so they are computed
/// once here and reused by every CDF evaluation.
#[derive(Clone, Debug)]
pub struct GaussianCopula {
    rho: f64,
    scale: f64,
    log_norm: f64,
    // sin-transformed nodes and weights for |rho| < 0.925
    nodes: Vec<(f64, f64, f64)>,
    asr_factor: f64,
}

impl GaussianCopula {
    pub fn new(rho: f64) -> Self {
        assert!((0.0..1.0).contains(&rho), "copula correlation must lie in [0, 1)");
        let scale = (1.0 - rho * rho).sqrt();
        let mut nodes = Vec::new();
        let asr = rho.asin();
        if rho < 0.925 {
            let (xs, ws) = gl_rule(rho);
            for (x, w) in xs.iter().zip(ws) {
                for sign in [-1.0, 1.0] {
                    let sn = (asr * (sign * x + 1.0) / 2.0).sin();
                    nodes.push((sn, 1.0 / (1.0 - sn * sn), *w));
                }
            }
        }
        Self {
            rho,
            scale,
            log_norm: -scale.ln(),
            nodes,
            asr_factor: asr / (4.0 * PI),
        }
    }

    #[inline]
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `sqrt(1 - rho^2)`.
    #[inline]
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Log copula density with both arguments already on the normal-score scale.
    #[inline]
    pub fn log_density_z(&self, a: f64, b: f64) -> f64 {
        let r = self.rho;
        self.log_norm - (r * r * (a * a + b * b) - 2.0 * r * a * b) / (2.0 * self.scale * self.scale)
    }

    pub fn density(&self, u: f64, v: f64) -> f64 {
        self.log_density_z(norm_ppf_clamped(u), norm_ppf_clamped(v)).exp()
    }

    /// Conditional distribution `P(U <= u | V = v)` on normal scores.
    #[inline]
    pub fn h_z(&self, a: f64, b: f64) -> f64 {
        norm_cdf((a - self.rho * b) / self.scale)
    }

    pub fn h(&self, u: f64, v: f64) -> f64 {
        self.h_z(norm_ppf_clamped(u), norm_ppf_clamped(v))
    }

    /// Copula CDF on normal scores, `P(Z1 <= a, Z2 <= b)`.
    pub fn cdf_z(&self, a: f64, b: f64) -> f64 {
        if self.nodes.is_empty() {
            return bvn_lower(a, b, self.rho);
        }
        // upper orthant at (-a, -b)
        let (h, k) = (-a, -b);
        let hk = h * k;
        let hs = (h * h + k * k) / 2.0;
        let mut acc = 0.0;
        for &(sn, inv, w) in &self.nodes {
            acc += w * ((sn * hk - hs) * inv).exp();
        }
        (acc * self.asr_factor + norm_cdf(a) * norm_cdf(b)).clamp(0.0, 1.0)
    }

    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        self.cdf_z(norm_ppf_clamped(u), norm_ppf_clamped(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Plackett: d/dr Phi2(h, k; r) = phi2(h, k; r). Integrating from 0 gives an
    // oracle independent of the Gauss-Legendre tables.
    fn bvn_oracle(a: f64, b: f64, r: f64) -> f64 {
        let phi2 = |t: f64| {
            let s = 1.0 - t * t;
            (-(a * a - 2.0 * t * a * b + b * b) / (2.0 * s)).exp() / (2.0 * PI * s.sqrt())
        };
        // composite Simpson, fine enough for smooth integrands away from |r| = 1
        let n = 20_000;
        let hstep = r / n as f64;
        let mut sum = phi2(0.0) + phi2(r);
        for i in 1..n {
            let t = i as f64 * hstep;
            sum += if i % 2 == 1 { 4.0 } else { 2.0 } * phi2(t);
        }
        norm_cdf(a) * norm_cdf(b) + sum * hstep / 3.0
    }

    #[test]
    fn ppf_inverts_cdf() {
        for &p in &[1e-12, 1e-8, 1e-4, 0.01, 0.2, 0.424, 0.5, 0.7, 0.93, 0.999, 1.0 - 1e-9] {
            let x = norm_ppf(p);
            let back = norm_cdf(x);
            assert!(((back - p) / p.min(1.0 - p)).abs() < 1e-12, "p={p} x={x} back={back}");
        }
        assert_eq!(norm_ppf(0.5), 0.0);
    }

    #[test]
    fn bvn_matches_plackett_quadrature() {
        for &r in &[-0.95, -0.8, -0.5, -0.2, 0.0, 0.1, 0.5, 0.8, 0.9, 0.95] {
            for &a in &[-3.0, -1.2, 0.0, 0.4, 2.5] {
                for &b in &[-2.0, -0.3, 0.0, 1.1, 3.0] {
                    let got = bvn_lower(a, b, r);
                    let want = bvn_oracle(a, b, r);
                    assert!((got - want).abs() < 1e-10, "a={a} b={b} r={r}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn orthant_identity() {
        for &r in &[0.0f64, 0.3, 0.8, 0.95] {
            let want = 0.25 + r.asin() / (2.0 * PI);
            assert!((bvn_lower(0.0, 0.0, r) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn copula_cdf_uses_cached_nodes_consistently() {
        let cop = GaussianCopula::new(0.8);
        for &u in &[0.01, 0.3, 0.5, 0.77, 0.99] {
            for &v in &[0.05, 0.5, 0.9] {
                let direct = bvn_lower(norm_ppf(u), norm_ppf(v), 0.8);
                assert!((cop.cdf(u, v) - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn copula_density_at_median() {
        let cop = GaussianCopula::new(0.8);
        assert!((cop.density(0.5, 0.5) - 1.0 / 0.36f64.sqrt()).abs() < 1e-4);
        assert!((cop.density(0.5, 0.5) - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn independence_copula_limits() {
        let cop = GaussianCopula::new(0.0);
        assert!((cop.cdf(0.3, 0.6) - 0.18).abs() < 1e-12);
        assert!((cop.h(0.3, 0.9) - 0.3).abs() < 1e-9);
        assert!((cop.density(0.2, 0.7) - 1.0).abs() < 1e-12);
    }
}
