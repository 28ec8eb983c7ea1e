//! Histograms on a fixed grid and a least-squares Gaussian fit.
//!
//! Bin edges sit at integer multiples of the bin width, so histograms of
//! the same quantity built from different runs share one grid. The fit
//! model integrates the Gaussian over each bin,
//! `A · (Φ((e_{k+1} − μ)/σ) − Φ((e_k − μ)/σ))`, and is solved by
//! Levenberg–Marquardt on the nonzero bins with unit weights.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::stats::{normal_cdf, normal_pdf};

/// 2·sqrt(2·ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Upper bound on the number of bins a histogram may span.
pub const MAX_BINS: usize = 1 << 22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Left edge of bin 0.
    pub origin: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_values(values: &[f64], bin_width: f64) -> Result<Self, AnalysisError> {
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(AnalysisError::InvalidParameter(format!(
                "bin width must be positive, got {bin_width}"
            )));
        }
        if values.is_empty() {
            return Err(AnalysisError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AnalysisError::InvalidParameter("non-finite value".into()));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let first = (lo / bin_width).floor();
        let span = (hi / bin_width).floor() - first + 1.0;
        if span > MAX_BINS as f64 {
            return Err(AnalysisError::RangeTooWide {
                lo,
                hi,
                bins: span as u64,
            });
        }
        let n = span as usize;
        let mut counts = vec![0u64; n];
        for &v in values {
            let k = ((v / bin_width).floor() - first) as usize;
            counts[k.min(n - 1)] += 1;
        }
        Ok(Self {
            bin_width,
            origin: first * bin_width,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn edge(&self, k: usize) -> f64 {
        self.origin + k as f64 * self.bin_width
    }

    pub fn center(&self, k: usize) -> f64 {
        self.origin + (k as f64 + 0.5) * self.bin_width
    }

    pub fn nonzero_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Two-column CSV `center_ps,count`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), AnalysisError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["center_ps", "count"])?;
        for (k, c) in self.counts.iter().enumerate() {
            out.write_record([self.center(k).to_string(), c.to_string()])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Value below which a fraction `q` of the counts lie, interpolated
    /// within the bin.
    fn quantile(&self, q: f64) -> f64 {
        let target = q * self.total() as f64;
        let mut acc = 0.0;
        for (k, &c) in self.counts.iter().enumerate() {
            let next = acc + c as f64;
            if next >= target && c > 0 {
                return self.edge(k) + (target - acc) / c as f64 * self.bin_width;
            }
            acc = next;
        }
        self.edge(self.counts.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    /// Integrated area of the fitted Gaussian, in counts.
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
    /// `sqrt(Σ r²)` over the fitted bins.
    pub residual_norm: f64,
    /// `residual_norm / sqrt(Σ y²)`; near 0 for Gaussian data, large when
    /// the histogram is not Gaussian-shaped.
    pub relative_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl GaussianFit {
    pub fn fwhm(&self) -> f64 {
        FWHM_PER_SIGMA * self.sigma
    }
}

fn bin_model(a: f64, mu: f64, sigma: f64, lo: f64, hi: f64) -> (f64, [f64; 3]) {
    let zl = (lo - mu) / sigma;
    let zh = (hi - mu) / sigma;
    let mass = normal_cdf(zh) - normal_cdf(zl);
    let (pl, ph) = (normal_pdf(zl), normal_pdf(zh));
    let d_mu = a * (pl - ph) / sigma;
    let d_sigma = a * (zl * pl - zh * ph) / sigma;
    (a * mass, [mass, d_mu, d_sigma])
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d.abs() < 1e-300 || !d.is_finite() {
        return None;
    }
    let mut x = [0.0; 3];
    for (col, xi) in x.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = b[row];
        }
        *xi = det(&mc) / d;
    }
    Some(x)
}

/// Fits a bin-integrated Gaussian to the nonzero bins of `hist`.
///
/// Returns `None` when fewer than two bins are populated: the width is then
/// unresolvable below the bin size.
pub fn fit_gaussian(hist: &Histogram) -> Option<GaussianFit> {
    let bins: Vec<(f64, f64, f64)> = hist
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| (hist.edge(k), hist.edge(k + 1), c as f64))
        .collect();
    if bins.len() < 2 {
        return None;
    }
    let w = hist.bin_width;
    let q1 = hist.quantile(0.25);
    let q3 = hist.quantile(0.75);
    let mut p = [
        hist.total() as f64,
        hist.quantile(0.5),
        ((q3 - q1) / 1.349).max(0.25 * w),
    ];
    let ssr = |p: &[f64; 3]| -> f64 {
        bins.iter()
            .map(|&(lo, hi, y)| {
                let r = y - bin_model(p[0], p[1], p[2], lo, hi).0;
                r * r
            })
            .sum()
    };
    let mut cost = ssr(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..500 {
        iterations = it + 1;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(lo, hi, y) in &bins {
            let (m, g) = bin_model(p[0], p[1], p[2], lo, hi);
            let r = y - m;
            for i in 0..3 {
                jtr[i] += g[i] * r;
                for j in 0..3 {
                    jtj[i][j] += g[i] * g[j];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12);
            }
            let Some(step) = solve3(a, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            if trial[2] > 0.0 && trial[0] > 0.0 {
                let c = ssr(&trial);
                if c <= cost {
                    let rel = (cost - c) / cost.max(1e-300);
                    let small = step[1].abs() < 1e-10 * w && step[2].abs() < 1e-10 * trial[2];
                    p = trial;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if rel < 1e-14 || small {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            converged = true;
        }
        if converged {
            break;
        }
    }
    let y2: f64 = bins.iter().map(|b| b.2 * b.2).sum();
    Some(GaussianFit {
        amplitude: p[0],
        mean: p[1],
        sigma: p[2],
        residual_norm: cost.sqrt(),
        relative_residual: (cost / y2).sqrt(),
        iterations,
        converged,
    })
}
