//! Convergence-rate constants.
//!
//! Everything is driven by `W = E[A^T H A]`, the expected projection matrix
//! of the sketch distribution, through its smallest nonzero eigenvalue
//! `lambda_min_plus` and its largest eigenvalue `lambda_max`:
//!
//! * sketch-and-project without momentum contracts the expected squared
//!   error by `rho = 1 - lambda_min_plus` per step;
//! * the heavy ball method contracts it by `q` (with prefactor `1 + delta`)
//!   whenever `a1 + a2 < 1`;
//! * for `omega <= 1 / lambda_max` and `beta` in `((1 - sqrt(omega *
//!   lambda_min_plus))^2, 1)` the expected iterate itself decays like
//!   `beta^k`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng;
use crate::solver::{LinearSystem, SketchDistribution, ThinSvd};

/// Eigenvalues below this fraction of `lambda_max` count as zero.
pub const ZERO_EIGENVALUE_CUTOFF: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectationOptions {
    /// Block distributions with at most this many subsets are averaged exactly.
    pub exact_limit: u64,
    /// Subsets drawn when the exact average is too large.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for ExpectationOptions {
    fn default() -> Self {
        ExpectationOptions {
            exact_limit: 100_000,
            mc_samples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedW {
    pub matrix: DMatrix<f64>,
    /// True when `matrix` is a Monte Carlo estimate.
    pub approximate: bool,
    /// Entrywise standard error of the estimate (Monte Carlo only).
    pub standard_error: Option<DMatrix<f64>>,
}

/// Sparse list of `(row, col, value)` entries of one sketch projector.
type Entries = Vec<(usize, usize, f64)>;

fn block_projector(sys: &LinearSystem, rows: &[usize]) -> Entries {
    let mut out = Vec::new();
    if sys.is_average_consensus() {
        // A_C^+ A_C is the identity minus averaging over each component of the block
        let graph_edges: Vec<(usize, usize)> = rows
            .iter()
            .map(|&r| {
                let row = sys.matrix().row(r);
                let plus = row.iter().position(|&v| v > 0.0).unwrap();
                let minus = row.iter().position(|&v| v < 0.0).unwrap();
                (plus, minus)
            })
            .collect();
        for comp in components(sys.cols(), &graph_edges) {
            let inv = 1.0 / comp.len() as f64;
            for &u in &comp {
                for &v in &comp {
                    out.push((u, v, if u == v { 1.0 - inv } else { -inv }));
                }
            }
        }
        return out;
    }
    let (a_c, _) = sys.row_block(rows);
    let svd = ThinSvd::new(&a_c);
    let n = sys.cols();
    let v_r = svd.v.columns(0, svd.rank());
    let p = v_r * v_r.transpose();
    for u in 0..n {
        for v in 0..n {
            if p[(u, v)] != 0.0 {
                out.push((u, v, p[(u, v)]));
            }
        }
    }
    out
}

/// Non-singleton components of the graph on `n` nodes with edges `edges`.
fn components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let mut touched: Vec<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    touched.sort_unstable();
    touched.dedup();
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for v in touched {
        let root = find(&mut parent, v);
        groups.entry(root).or_default().push(v);
    }
    groups.into_values().collect()
}

fn binomial_capped(m: usize, k: usize, cap: u64) -> Option<u64> {
    let k = k.min(m - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (m - i) as u128 / (i + 1) as u128;
        if acc > cap as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Advances `idx` to the next `k`-subset of `0..m` in lexicographic order.
fn next_combination(idx: &mut [usize], m: usize) -> bool {
    let k = idx.len();
    for pos in (0..k).rev() {
        if idx[pos] < m - k + pos {
            idx[pos] += 1;
            for next in pos + 1..k {
                idx[next] = idx[next - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// `W = E[A^T H A]` for the given sketch distribution.
pub fn expected_w(
    sys: &LinearSystem,
    dist: &SketchDistribution,
    opts: &ExpectationOptions,
) -> Result<ExpectedW> {
    let m = sys.rows();
    let n = sys.cols();
    dist.validate(m)?;
    match dist {
        SketchDistribution::Rows(p) => {
            let mut w = DMatrix::zeros(n, n);
            for (i, &pi) in p.iter().enumerate() {
                if pi == 0.0 {
                    continue;
                }
                let row = sys.matrix().row(i);
                let norm_sq = row.norm_squared();
                if norm_sq == 0.0 {
                    return Err(Error::SingularRow(i));
                }
                w += row.transpose() * row * (pi / norm_sq);
            }
            Ok(ExpectedW {
                matrix: w,
                approximate: false,
                standard_error: None,
            })
        }
        SketchDistribution::UniformBlock(tau) => {
            let tau = *tau;
            if let Some(count) = binomial_capped(m, tau, opts.exact_limit) {
                let mut w = DMatrix::zeros(n, n);
                let mut idx: Vec<usize> = (0..tau).collect();
                loop {
                    for (u, v, val) in block_projector(sys, &idx) {
                        w[(u, v)] += val;
                    }
                    if !next_combination(&mut idx, m) {
                        break;
                    }
                }
                Ok(ExpectedW {
                    matrix: w / count as f64,
                    approximate: false,
                    standard_error: None,
                })
            } else {
                monte_carlo_w(sys, tau, opts)
            }
        }
    }
}

fn monte_carlo_w(sys: &LinearSystem, tau: usize, opts: &ExpectationOptions) -> Result<ExpectedW> {
    let k = opts.mc_samples;
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "Monte Carlo estimate needs at least 2 samples, got {k}"
        )));
    }
    let n = sys.cols();
    let sampler = SketchDistribution::UniformBlock(tau).sampler(sys.rows())?;
    let mut stream = rng::derive_stream(opts.seed, &[b"expected-w"]);
    let mut sum = DMatrix::<f64>::zeros(n, n);
    let mut sum_sq = DMatrix::<f64>::zeros(n, n);
    for _ in 0..k {
        let crate::solver::SketchSample::Block(rows) = sampler.sample(&mut stream) else {
            unreachable!("block sampler yields blocks")
        };
        for (u, v, val) in block_projector(sys, &rows) {
            sum[(u, v)] += val;
            sum_sq[(u, v)] += val * val;
        }
    }
    let kf = k as f64;
    let mean = &sum / kf;
    let se = DMatrix::from_fn(n, n, |u, v| {
        let var = (sum_sq[(u, v)] - sum[(u, v)] * sum[(u, v)] / kf) / (kf - 1.0);
        (var.max(0.0) / kf).sqrt()
    });
    Ok(ExpectedW {
        matrix: mean,
        approximate: true,
        standard_error: Some(se),
    })
}

/// Eigenvalues in ascending order with matching eigenvector columns.
pub fn symmetric_eigen(w: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if !w.is_square() || w.nrows() == 0 {
        return Err(Error::InvalidParameter(format!(
            "expected a non-empty square matrix, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let asym = (w - w.transpose()).amax();
    if asym > 1e-10 * w.amax().max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let sym = (w + w.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..w.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = eig.eigenvectors.select_columns(order.iter());
    Ok((values, vectors))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spectrum {
    pub lambda_min_plus: f64,
    pub lambda_max: f64,
}

/// Smallest nonzero and largest eigenvalue of a symmetric PSD matrix.
pub fn extreme_spectrum(w: &DMatrix<f64>) -> Result<Spectrum> {
    let (values, _) = symmetric_eigen(w)?;
    let lambda_max = *values.last().unwrap();
    if lambda_max.is_nan() || lambda_max <= 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    let cutoff = ZERO_EIGENVALUE_CUTOFF * lambda_max;
    let lambda_min_plus = values
        .iter()
        .copied()
        .find(|&v| v >= cutoff)
        .ok_or(Error::DegenerateSpectrum)?;
    Ok(Spectrum {
        lambda_min_plus,
        lambda_max,
    })
}

/// `rho = 1 - lambda_min_plus`.
pub fn rate_basic(lambda_min_plus: f64) -> Result<f64> {
    if !(lambda_min_plus > 0.0 && lambda_min_plus <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda_min_plus {lambda_min_plus} outside (0, 1]"
        )));
    }
    Ok(1.0 - lambda_min_plus)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShbRate {
    pub a1: f64,
    pub a2: f64,
    pub q: f64,
    pub delta: f64,
    /// `a1 + a2 < 1`; the bound only holds when this is true.
    pub valid: bool,
}

/// Heavy ball constants: `E|x_k - x*|^2 <= q^k (1 + delta) |x_0 - x*|^2`
/// whenever `valid`.
pub fn rate_shb(lambda_min_plus: f64, lambda_max: f64, omega: f64, beta: f64) -> Result<ShbRate> {
    if !(omega > 0.0 && omega < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "relaxation {omega} outside (0, 2)"
        )));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "momentum {beta} must be finite and non-negative"
        )));
    }
    if !(lambda_min_plus > 0.0 && lambda_max >= lambda_min_plus && lambda_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < lambda_min_plus <= lambda_max, got {lambda_min_plus} and {lambda_max}"
        )));
    }
    let a1 = 1.0 + 3.0 * beta + 2.0 * beta * beta
        - (omega * (2.0 - omega) + omega * beta) * lambda_min_plus;
    let a2 = beta + 2.0 * beta * beta + omega * beta * lambda_max;
    let q = 0.5 * (a1 + (a1 * a1 + 4.0 * a2).sqrt());
    Ok(ShbRate {
        a1,
        a2,
        q,
        delta: q - a1,
        valid: a1 + a2 < 1.0,
    })
}

/// Momentum interval `((1 - sqrt(omega * lambda_min_plus))^2, 1)` on which
/// the expected iterate decays like `beta^k`. Requires
/// `0 < omega <= 1 / lambda_max`.
pub fn accelerated_beta_range(
    omega: f64,
    lambda_min_plus: f64,
    lambda_max: f64,
) -> Result<(f64, f64)> {
    if !(omega > 0.0 && omega <= 1.0 / lambda_max) {
        return Err(Error::InvalidParameter(format!(
            "relaxation {omega} outside (0, 1/lambda_max = {}]",
            1.0 / lambda_max
        )));
    }
    if lambda_min_plus.is_nan() || lambda_min_plus <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lambda_min_plus {lambda_min_plus} must be positive"
        )));
    }
    let root = 1.0 - (omega * lambda_min_plus).sqrt();
    Ok((root * root, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Preset {
    pub omega: f64,
    pub beta: f64,
    pub complexity: &'static str,
}

/// The two accelerated parameter choices: unit relaxation, and relaxation
/// `1 / lambda_max`.
pub fn accelerated_presets(lambda_min_plus: f64, lambda_max: f64) -> [Preset; 2] {
    let unit = 1.0 - (0.99 * lambda_min_plus).sqrt();
    let scaled = 1.0 - (0.99 * lambda_min_plus / lambda_max).sqrt();
    [
        Preset {
            omega: 1.0,
            beta: unit * unit,
            complexity: "O~(sqrt(1/lambda_min_plus))",
        },
        Preset {
            omega: 1.0 / lambda_max,
            beta: scaled * scaled,
            complexity: "O~(sqrt(lambda_max/lambda_min_plus))",
        },
    ]
}

/// Exact expected error `E[x_k] - x*` of the heavy ball iteration started
/// at `x_0 = x_1`, for `k = 0..=iters`. Sampling is independent of the
/// iterate, so the mean follows the deterministic recursion
/// `m_{k+1} = m_k - omega W m_k + beta (m_k - m_{k-1})`.
pub fn mean_error_trajectory(
    w: &DMatrix<f64>,
    omega: f64,
    beta: f64,
    initial_error: &DVector<f64>,
    iters: usize,
) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(iters + 1);
    let mut prev = initial_error.clone();
    let mut cur = initial_error.clone();
    out.push(cur.clone());
    for _ in 0..iters {
        let next = &cur - (w * &cur) * omega + (&cur - &prev) * beta;
        prev = std::mem::replace(&mut cur, next);
        out.push(cur.clone());
    }
    out
}

/// Everything the `rates` command prints.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateReport {
    pub lambda_min_plus: f64,
    pub lambda_max: f64,
    pub rho: f64,
    pub omega: f64,
    pub beta: f64,
    pub a1: f64,
    pub a2: f64,
    pub q: f64,
    pub delta: f64,
    pub valid: bool,
    /// `None` when `omega > 1 / lambda_max`.
    pub accelerated_range: Option<(f64, f64)>,
    pub presets: [Preset; 2],
    pub approximate: bool,
}

impl RateReport {
    pub fn new(spectrum: Spectrum, omega: f64, beta: f64, approximate: bool) -> Result<Self> {
        let Spectrum {
            lambda_min_plus,
            lambda_max,
        } = spectrum;
        let rho = rate_basic(lambda_min_plus)?;
        let shb = rate_shb(lambda_min_plus, lambda_max, omega, beta)?;
        Ok(RateReport {
            lambda_min_plus,
            lambda_max,
            rho,
            omega,
            beta,
            a1: shb.a1,
            a2: shb.a2,
            q: shb.q,
            delta: shb.delta,
            valid: shb.valid,
            accelerated_range: accelerated_beta_range(omega, lambda_min_plus, lambda_max).ok(),
            presets: accelerated_presets(lambda_min_plus, lambda_max),
            approximate,
        })
    }

    /// One `key = value` line per field, floats with 17 significant digits.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut num = |k: &str, v: f64| {
            let _ = writeln!(out, "{k} = {v:.16e}");
        };
        num("lambda_min_plus", self.lambda_min_plus);
        num("lambda_max", self.lambda_max);
        num("rho", self.rho);
        num("omega", self.omega);
        num("beta", self.beta);
        num("a1", self.a1);
        num("a2", self.a2);
        num("q", self.q);
        num("delta", self.delta);
        let _ = writeln!(out, "valid = {}", self.valid);
        match self.accelerated_range {
            Some((lo, hi)) => {
                let _ = writeln!(out, "thm4_beta_lo = {lo:.16e}");
                let _ = writeln!(out, "thm4_beta_hi = {hi:.16e}");
            }
            None => {
                out.push_str("thm4_beta_lo = none\nthm4_beta_hi = none\n");
            }
        }
        for (name, p) in ["preset_i", "preset_ii"].iter().zip(&self.presets) {
            let _ = writeln!(out, "{name}_omega = {:.16e}", p.omega);
            let _ = writeln!(out, "{name}_beta = {:.16e}", p.beta);
            let _ = writeln!(out, "{name}_complexity = {}", p.complexity);
        }
        let _ = writeln!(out, "approximate = {}", self.approximate);
        out
    }
}
