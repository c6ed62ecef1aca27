//! Brute-force reference implementations for the test suites.
//!
//! Nothing here calls into `dfast-core`; every routine is a direct, slow
//! transcription of its definition over plain `f64` slices.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("naive conv limited to {limit} multiply-adds, case needs {needed}")]
    TooLarge { needed: usize, limit: usize },
    #[error("{0}")]
    Shape(String),
    #[error("AUROC needs at least one positive and one negative score")]
    Empty,
}

/// Reference values and the verdict of comparing them against a candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub reference: Vec<f64>,
    pub tolerance: f64,
    /// Largest `|a - r| / max(|r|, 1)` over all entries.
    pub worst: f64,
    pub pass: bool,
}

impl OracleResult {
    /// Mixed relative/absolute comparison: relative for `|r| >= 1`,
    /// absolute below.
    pub fn compare(reference: Vec<f64>, actual: &[f64], tolerance: f64) -> OracleResult {
        let worst = if reference.len() != actual.len() {
            f64::INFINITY
        } else {
            reference
                .iter()
                .zip(actual)
                .map(|(r, a)| {
                    if r == a {
                        0.0
                    } else {
                        (a - r).abs() / r.abs().max(1.0)
                    }
                })
                .fold(0.0, f64::max)
        };
        OracleResult {
            reference,
            tolerance,
            worst,
            pass: worst <= tolerance,
        }
    }

    /// Bitwise equality, treating any two NaNs as equal.
    pub fn exact(reference: Vec<f64>, actual: &[f64]) -> OracleResult {
        let same = reference.len() == actual.len()
            && reference
                .iter()
                .zip(actual)
                .all(|(r, a)| r.to_bits() == a.to_bits() || (r.is_nan() && a.is_nan()));
        OracleResult {
            reference,
            tolerance: 0.0,
            worst: if same { 0.0 } else { f64::INFINITY },
            pass: same,
        }
    }
}

pub const CONV_MAC_LIMIT: usize = 10_000;

/// Direct nested-loop grouped 2-D convolution with zero padding and unit
/// stride. `input` is `[b, cin, h, w]`, `kernel` is `[cout, cin/g, kh, kw]`.
/// Returns the output and its shape.
pub fn naive_conv(
    input: &[f64],
    input_shape: [usize; 4],
    kernel: &[f64],
    kernel_shape: [usize; 4],
    groups: usize,
    padding: (usize, usize),
) -> Result<(Vec<f64>, [usize; 4]), OracleError> {
    let [b, cin, h, w] = input_shape;
    let [cout, cg, kh, kw] = kernel_shape;
    if groups == 0 || cin % groups != 0 || cout % groups != 0 || cg != cin / groups {
        return Err(OracleError::Shape(format!(
            "channels {cin} -> {cout} with {groups} groups and kernel depth {cg}"
        )));
    }
    if input.len() != b * cin * h * w || kernel.len() != cout * cg * kh * kw {
        return Err(OracleError::Shape("buffer sizes do not match shapes".into()));
    }
    let (ph, pw) = padding;
    if h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(OracleError::Shape("kernel larger than padded input".into()));
    }
    let (oh, ow) = (h + 2 * ph - kh + 1, w + 2 * pw - kw + 1);
    let needed = b * cout * oh * ow * cg * kh * kw;
    if needed > CONV_MAC_LIMIT {
        return Err(OracleError::TooLarge {
            needed,
            limit: CONV_MAC_LIMIT,
        });
    }
    let cout_g = cout / groups;
    let mut out = vec![0.0; b * cout * oh * ow];
    for n in 0..b {
        for co in 0..cout {
            let g = co / cout_g;
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cg {
                        let c = g * cg + ci;
                        for i in 0..kh {
                            for j in 0..kw {
                                let yy = (y + i) as isize - ph as isize;
                                let xx = (x + j) as isize - pw as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let iv = input[((n * cin + c) * h + yy as usize) * w + xx as usize];
                                let kv = kernel[((co * cg + ci) * kh + i) * kw + j];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[((n * cout + co) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    Ok((out, [b, cout, oh, ow]))
}

/// Share of (positive, negative) pairs with the positive scored higher,
/// ties counting one half.
pub fn pairwise_auroc(pos: &[f64], neg: &[f64]) -> Result<f64, OracleError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(OracleError::Empty);
    }
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Number of entries `ceil(tau * n)` kept per row, at least 1.
pub fn keep_of(tau: f64, n: usize) -> usize {
    let mut k = 0;
    while k < n && (k as f64) < tau * n as f64 - 1e-9 {
        k += 1;
    }
    k.max(1)
}

/// The row with every entry outside its `ceil(tau * n)` largest replaced by
/// `-inf`. Equal values rank by ascending index.
pub fn naive_topk_mask(row: &[f64], tau: f64) -> Vec<f64> {
    let n = row.len();
    let keep = keep_of(tau, n);
    let mut idx: Vec<usize> = (0..n).collect();
    // Insertion sort: descending value, ascending index on ties.
    for i in 1..n {
        let mut j = i;
        while j > 0 {
            let (a, b) = (idx[j - 1], idx[j]);
            let swap = row[b] > row[a] || (row[b] == row[a] && b < a);
            if !swap {
                break;
            }
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut out = vec![f64::NEG_INFINITY; n];
    for &i in &idx[..keep.min(n)] {
        out[i] = row[i];
    }
    out
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every `i`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
