//! Integer DCT-II approximation and dead-zone scalar quantization.
//!
//! The basis is the familiar 8-bit integer DCT whose rows are scaled by
//! roughly `64 * sqrt(N)`; forward output is renormalized to orthonormal
//! scale so the quantizer step is in the same units as the residual.
//! Only dequantization and the inverse transform are normative and both
//! are pure integer arithmetic.

use std::sync::LazyLock;

/// Transform sizes supported by the residual layer.
pub const TRANSFORM_SIZES: [usize; 4] = [4, 8, 16, 32];
pub const MAX_TRANSFORM: usize = 32;

/// `64 * sqrt(2) * cos(j * pi / 64)` rounded the way the standard
/// integer basis does, for `j = 0..=32`.
const COS_TABLE: [i32; 33] = [
    90, 90, 90, 90, 89, 88, 87, 85, 83, 82, 80, 78, 75, 73, 70, 67, 64, 61, 57, 54, 50, 46, 43, 38,
    36, 31, 25, 22, 18, 13, 9, 4, 0,
];

fn basis32(k: usize, n: usize) -> i32 {
    if k == 0 {
        return 64;
    }
    let m = ((2 * n + 1) * k) % 128;
    match m {
        0..=32 => COS_TABLE[m],
        33..=63 => -COS_TABLE[64 - m],
        64..=96 => -COS_TABLE[m - 64],
        _ => COS_TABLE[128 - m],
    }
}

static MATRICES: LazyLock<[Vec<i32>; 4]> = LazyLock::new(|| {
    TRANSFORM_SIZES.map(|n| {
        let step = MAX_TRANSFORM / n;
        let mut m = vec![0; n * n];
        for k in 0..n {
            for i in 0..n {
                m[k * n + i] = basis32(k * step, i);
            }
        }
        m
    })
});

fn matrix(n: usize) -> &'static [i32] {
    let idx = TRANSFORM_SIZES
        .iter()
        .position(|&s| s == n)
        .unwrap_or_else(|| panic!("unsupported transform size {n}"));
    &MATRICES[idx]
}

/// `2^(i/6)` for `i = 0..6`.
const QSTEP_FRAC: [f64; 6] = [
    1.0,
    1.122_462_048_309_373,
    1.259_921_049_894_873_2,
    std::f64::consts::SQRT_2,
    1.587_401_051_968_199_4,
    1.781_797_436_280_678_6,
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantParams {
    pub qp: u8,
    /// `2^((qp - 4) / 6)`.
    pub qstep: f64,
}

impl QuantParams {
    pub fn new(qp: u8) -> QuantParams {
        let e = qp as i32 - 4;
        let whole = e.div_euclid(6);
        let frac = e.rem_euclid(6) as usize;
        QuantParams {
            qp,
            qstep: QSTEP_FRAC[frac] * 2f64.powi(whole),
        }
    }

    /// Lagrange multiplier used by mode decision.
    pub fn lambda(&self) -> f64 {
        0.85 * self.qstep * self.qstep
    }

    /// Dequantized coefficient in units of 1/64.
    #[inline]
    pub fn dequant_fixed(&self, level: i32) -> i64 {
        (level as f64 * self.qstep * 64.0).round() as i64
    }
}

/// Orthonormal-scale DCT coefficients of an `n x n` residual block.
pub fn forward(residual: &[i32], n: usize) -> Vec<f64> {
    let c = matrix(n);
    let mut tmp = vec![0i64; n * n];
    // tmp = C * X
    for k in 0..n {
        for j in 0..n {
            let mut s = 0i64;
            for i in 0..n {
                s += c[k * n + i] as i64 * residual[i * n + j] as i64;
            }
            tmp[k * n + j] = s;
        }
    }
    let scale = 1.0 / (4096.0 * n as f64);
    let mut out = vec![0.0; n * n];
    // Y = tmp * C^T
    for k in 0..n {
        for l in 0..n {
            let mut s = 0i64;
            for j in 0..n {
                s += tmp[k * n + j] * c[l * n + j] as i64;
            }
            out[k * n + l] = s as f64 * scale;
        }
    }
    out
}

/// Dead-zone quantizer: `sign(c) * floor(|c| / qstep + 1/3)`.
#[inline]
pub fn quantize(c: f64, q: &QuantParams) -> i32 {
    let l = (c.abs() / q.qstep + 1.0 / 3.0).floor() as i32;
    if c < 0.0 {
        -l
    } else {
        l
    }
}

/// Residual block reconstructed from quantized levels.
pub fn inverse(levels: &[i32], n: usize, q: &QuantParams) -> Vec<i32> {
    let c = matrix(n);
    let dq: Vec<i64> = levels
        .iter()
        .map(|&l| if l == 0 { 0 } else { q.dequant_fixed(l) })
        .collect();
    // tmp = C^T * DQ
    let mut tmp = vec![0i64; n * n];
    for i in 0..n {
        for l in 0..n {
            let mut s = 0i64;
            for k in 0..n {
                let v = dq[k * n + l];
                if v != 0 {
                    s += c[k * n + i] as i64 * v;
                }
            }
            tmp[i * n + l] = s;
        }
    }
    let shift = 12 + n.trailing_zeros() + 6;
    let half = 1i64 << (shift - 1);
    let mut out = vec![0i32; n * n];
    // R = tmp * C
    for i in 0..n {
        for j in 0..n {
            let mut s = 0i64;
            for l in 0..n {
                s += tmp[i * n + l] * c[l * n + j] as i64;
            }
            out[i * n + j] = ((s + half) >> shift) as i32;
        }
    }
    out
}

/// Forward transform plus quantization of one residual block.
pub fn transform_quantize(residual: &[i32], n: usize, q: &QuantParams) -> Vec<i32> {
    forward(residual, n)
        .into_iter()
        .map(|c| quantize(c, q))
        .collect()
}

static SCANS: LazyLock<[Vec<usize>; 4]> = LazyLock::new(|| TRANSFORM_SIZES.map(zigzag));

fn zigzag(n: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n * n);
    for s in 0..2 * n - 1 {
        let range: Vec<usize> = (0..n).filter(|&y| s >= y && s - y < n).collect();
        if s % 2 == 0 {
            for &y in range.iter().rev() {
                order.push(y * n + (s - y));
            }
        } else {
            for &y in &range {
                order.push(y * n + (s - y));
            }
        }
    }
    order
}

/// Zig-zag scan positions (raster indices) for an `n x n` block.
pub fn scan(n: usize) -> &'static [usize] {
    let idx = TRANSFORM_SIZES
        .iter()
        .position(|&s| s == n)
        .expect("transform size");
    &SCANS[idx]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn qstep_law() {
        assert_eq!(QuantParams::new(4).qstep, 1.0);
        assert!((QuantParams::new(25).qstep - 2f64.powf(21.0 / 6.0)).abs() < 1e-12);
        assert!((QuantParams::new(0).qstep - 2f64.powf(-4.0 / 6.0)).abs() < 1e-12);
        for qp in 0..51 {
            assert!(QuantParams::new(qp + 1).qstep > QuantParams::new(qp).qstep);
        }
    }

    #[test]
    fn basis_rows_are_nearly_orthogonal() {
        for &n in &TRANSFORM_SIZES {
            let c = matrix(n);
            let norm = 4096.0 * n as f64;
            for a in 0..n {
                for b in 0..n {
                    let dot: i64 = (0..n)
                        .map(|i| c[a * n + i] as i64 * c[b * n + i] as i64)
                        .sum();
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!(
                        (dot as f64 / norm - expect).abs() < 0.02,
                        "n={n} rows {a},{b}: {dot}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_residual_gives_zero_levels() {
        for &n in &TRANSFORM_SIZES {
            for qp in [0, 22, 51] {
                let l = transform_quantize(&vec![0; n * n], n, &QuantParams::new(qp));
                assert!(l.iter().all(|&v| v == 0));
            }
        }
    }

    #[test]
    fn constant_block_is_dc_only() {
        let q = QuantParams::new(4);
        let l = transform_quantize(&[10; 16], 4, &q);
        assert_eq!(l[0], 40);
        assert!(l[1..].iter().all(|&v| v == 0));
        let r = inverse(&l, 4, &q);
        assert!(r.iter().all(|&v| (v - 10).abs() <= 1), "{r:?}");
    }

    #[test]
    fn dead_zone_rounding() {
        let q = QuantParams::new(4);
        assert_eq!(quantize(0.66, &q), 0);
        assert_eq!(quantize(0.67, &q), 1);
        assert_eq!(quantize(-1.7, &q), -2);
    }

    #[test]
    fn scans_are_permutations() {
        for &n in &TRANSFORM_SIZES {
            let mut s = scan(n).to_vec();
            assert_eq!(s[0], 0);
            s.sort();
            assert_eq!(s, (0..n * n).collect::<Vec<_>>());
        }
        assert_eq!(scan(4)[..6], [0, 1, 4, 8, 5, 2]);
    }

    proptest! {
        #[test]
        fn parseval(n_idx in 0usize..4, vals in prop::collection::vec(-255i32..=255, 1024)) {
            let n = TRANSFORM_SIZES[n_idx];
            let res = &vals[..n * n];
            let e_in: f64 = res.iter().map(|&v| (v as f64).powi(2)).sum();
            prop_assume!(e_in > 0.0);
            let e_out: f64 = forward(res, n).iter().map(|c| c * c).sum();
            prop_assert!((e_out / e_in - 1.0).abs() < 0.01, "ratio {}", e_out / e_in);
        }

        #[test]
        fn fine_quantization_reconstructs(n_idx in 0usize..4, vals in prop::collection::vec(-255i32..=255, 1024)) {
            let n = TRANSFORM_SIZES[n_idx];
            let res = &vals[..n * n];
            let q = QuantParams::new(0);
            let rec = inverse(&transform_quantize(res, n, &q), n, &q);
            let max_err = res.iter().zip(&rec).map(|(a, b)| (a - b).abs()).max().unwrap();
            prop_assert!(max_err <= 8, "max error {max_err}");
        }
    }
}
