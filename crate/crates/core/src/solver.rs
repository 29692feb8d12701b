//! Sketch-and-project iteration with relaxation and heavy-ball momentum.
//!
//! One step of the stochastic heavy ball method on a consistent system
//! `A x = b` reads
//!
//! ```text
//! x_{k+1} = x_k - omega * A^T H_k (A x_k - b) + beta * (x_k - x_{k-1})
//! ```
//!
//! where `H_k = S (S^T A A^T S)^+ S^T` for the sampled sketch `S`. For a
//! single row `i` the correction is `(A_i x - b_i) / |A_i|^2 * A_i^T`; for a
//! row block `C` it is `A_C^+ (A_C x - b_C)`, computed as a minimum-norm
//! least-squares solve so rank-deficient blocks are handled without
//! inverting a singular Gram matrix.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::topology::Graph;

/// Relative singular-value cutoff for pseudoinverse actions.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

/// Absolute tolerance on the least-squares residual of a consistent system.
pub const CONSISTENCY_TOLERANCE: f64 = 1e-8;

const PROBABILITY_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    average_consensus: bool,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidParameter(format!(
                "system matrix must be non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.len() != a.nrows() {
            return Err(Error::InvalidParameter(format!(
                "right-hand side has length {} but the matrix has {} rows",
                b.len(),
                a.nrows()
            )));
        }
        Ok(LinearSystem {
            a,
            b,
            average_consensus: false,
        })
    }

    /// `A x = 0` with `A` the incidence matrix of `graph`. Its solution set
    /// is the span of the all-ones vector.
    pub fn average_consensus(graph: &Graph) -> Self {
        let a = graph.incidence_matrix();
        let b = DVector::zeros(a.nrows());
        LinearSystem {
            a,
            b,
            average_consensus: true,
        }
    }

    pub fn is_average_consensus(&self) -> bool {
        self.average_consensus
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    pub(crate) fn row_block(&self, rows: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let a = self.a.select_rows(rows.iter());
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.b[r]));
        (a, b)
    }

    fn check_dimension(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.cols() {
            return Err(Error::InvalidParameter(format!(
                "vector has length {} but the system has {} unknowns",
                x.len(),
                self.cols()
            )));
        }
        Ok(())
    }
}

/// The pair `(x_k, x_{k-1})` carried by momentum methods.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateState {
    pub current: DVector<f64>,
    pub previous: DVector<f64>,
}

impl IterateState {
    /// Starts with `x_0 = x_1`, so the first step has no momentum.
    pub fn new(x0: DVector<f64>) -> Self {
        IterateState {
            previous: x0.clone(),
            current: x0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SketchSample {
    Row(usize),
    Block(Vec<usize>),
}

impl SketchSample {
    pub fn validate(&self, rows: usize) -> Result<()> {
        match self {
            SketchSample::Row(i) if *i >= rows => Err(Error::InvalidParameter(format!(
                "row {i} out of range for {rows} rows"
            ))),
            SketchSample::Row(_) => Ok(()),
            SketchSample::Block(block) => validate_block(block, rows),
        }
    }
}

fn validate_block(block: &[usize], rows: usize) -> Result<()> {
    if block.is_empty() {
        return Err(Error::InvalidParameter("row block is empty".into()));
    }
    let mut seen = vec![false; rows];
    for &r in block {
        if r >= rows {
            return Err(Error::InvalidParameter(format!(
                "row {r} out of range for {rows} rows"
            )));
        }
        if std::mem::replace(&mut seen[r], true) {
            return Err(Error::InvalidParameter(format!(
                "row {r} repeated in block"
            )));
        }
    }
    Ok(())
}

/// Distribution of sketches over the rows of an `m`-row system.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum SketchDistribution {
    /// Single row `i` with probability `p[i]`.
    Rows(Vec<f64>),
    /// Uniformly random subset of `tau` distinct rows.
    UniformBlock(usize),
}

impl SketchDistribution {
    pub fn uniform_rows(m: usize) -> Self {
        SketchDistribution::Rows(vec![1.0 / m as f64; m])
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            SketchDistribution::Rows(p) => {
                if p.len() != m {
                    return Err(Error::InvalidParameter(format!(
                        "{} row probabilities for {m} rows",
                        p.len()
                    )));
                }
                if let Some(bad) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(Error::InvalidParameter(format!(
                        "row probability {bad} is not a non-negative number"
                    )));
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
                    return Err(Error::InvalidParameter(format!(
                        "row probabilities sum to {total}, not 1"
                    )));
                }
                Ok(())
            }
            SketchDistribution::UniformBlock(tau) => {
                if *tau == 0 || *tau > m {
                    return Err(Error::InvalidParameter(format!(
                        "block size {tau} outside 1..={m}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn sampler(&self, m: usize) -> Result<SketchSampler> {
        self.validate(m)?;
        let inner = match self {
            SketchDistribution::Rows(p) => SamplerInner::Rows(
                WeightedIndex::new(p).map_err(|e| Error::InvalidParameter(e.to_string()))?,
            ),
            SketchDistribution::UniformBlock(tau) => SamplerInner::Block { m, tau: *tau },
        };
        Ok(SketchSampler { inner })
    }
}

/// A validated [`SketchDistribution`] ready to draw from.
#[derive(Clone, Debug)]
pub struct SketchSampler {
    inner: SamplerInner,
}

#[derive(Clone, Debug)]
enum SamplerInner {
    Rows(WeightedIndex<f64>),
    Block { m: usize, tau: usize },
}

impl SketchSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SketchSample {
        match &self.inner {
            SamplerInner::Rows(w) => SketchSample::Row(w.sample(rng)),
            SamplerInner::Block { m, tau } => {
                let mut block = rand::seq::index::sample(rng, *m, *tau).into_vec();
                block.sort_unstable();
                SketchSample::Block(block)
            }
        }
    }
}

fn row_correction(sys: &LinearSystem, x: &DVector<f64>, i: usize) -> Result<DVector<f64>> {
    if i >= sys.rows() {
        return Err(Error::InvalidParameter(format!(
            "row {i} out of range for {} rows",
            sys.rows()
        )));
    }
    let row = sys.a.row(i);
    let norm_sq = row.norm_squared();
    if norm_sq == 0.0 {
        return Err(Error::SingularRow(i));
    }
    let scale = (row.dot(&x.transpose()) - sys.b[i]) / norm_sq;
    Ok(row.transpose() * scale)
}

/// Thin SVD `m = u diag(s) v^T`, singular values in descending order.
pub(crate) struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub(crate) fn new(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            return ThinSvd {
                u: DMatrix::zeros(rows, 0),
                s: Vec::new(),
                v: DMatrix::zeros(cols, 0),
            };
        }
        // nalgebra's bidiagonal SVD loses accuracy on rank-deficient
        // incidence blocks, so the factorisation is done in faer.
        let f = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
        let svd = f
            .thin_svd()
            .expect("SVD iteration failed to converge on a finite matrix");
        let (u, s, v) = (svd.U(), svd.S(), svd.V());
        let mut order: Vec<usize> = (0..s.dim()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let k = order.len();
        ThinSvd {
            u: DMatrix::from_fn(rows, k, |i, t| u[(i, order[t])]),
            s: order.iter().map(|&t| s[t]).collect(),
            v: DMatrix::from_fn(cols, k, |j, t| v[(j, order[t])]),
        }
    }

    /// Number of singular values above `PINV_RELATIVE_CUTOFF * sigma_max`.
    pub(crate) fn rank(&self) -> usize {
        let Some(&sigma_max) = self.s.first() else {
            return 0;
        };
        let cut = PINV_RELATIVE_CUTOFF * sigma_max;
        self.s.iter().filter(|&&x| x > cut && x > 0.0).count()
    }
}

/// Minimum-norm solution of `m y = r` with singular values below
/// `PINV_RELATIVE_CUTOFF * sigma_max` discarded.
pub(crate) fn min_norm_solve(m: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    let svd = ThinSvd::new(m);
    let mut y = DVector::zeros(m.ncols());
    for t in 0..svd.rank() {
        let coef = svd.u.column(t).dot(r) / svd.s[t];
        y += svd.v.column(t) * coef;
    }
    y
}

fn block_correction(sys: &LinearSystem, x: &DVector<f64>, rows: &[usize]) -> Result<DVector<f64>> {
    validate_block(rows, sys.rows())?;
    let (a_c, b_c) = sys.row_block(rows);
    let r = &a_c * x - b_c;
    Ok(min_norm_solve(&a_c, &r))
}

/// Stochastic gradient `A^T H_S (A x - b)` of the sketched loss.
pub fn sketch_gradient(
    sys: &LinearSystem,
    x: &DVector<f64>,
    sample: &SketchSample,
) -> Result<DVector<f64>> {
    sys.check_dimension(x)?;
    match sample {
        SketchSample::Row(i) => row_correction(sys, x, *i),
        SketchSample::Block(rows) => block_correction(sys, x, rows),
    }
}

/// Sketched loss `0.5 (A x - b)^T H_S (A x - b)`. Diagnostic only; the
/// iteration never forms `H_S`.
pub fn sketch_loss(sys: &LinearSystem, x: &DVector<f64>, sample: &SketchSample) -> Result<f64> {
    sys.check_dimension(x)?;
    sample.validate(sys.rows())?;
    let rows = match sample {
        SketchSample::Row(i) => vec![*i],
        SketchSample::Block(rows) => rows.clone(),
    };
    let (a_c, b_c) = sys.row_block(&rows);
    let r = &a_c * x - b_c;
    let gram = &a_c * a_c.transpose();
    let y = min_norm_solve(&gram, &r);
    Ok(0.5 * r.dot(&y))
}

/// Randomized Kaczmarz: project `x` onto the hyperplane of row `i`.
pub fn rk_step(sys: &LinearSystem, x: &DVector<f64>, i: usize) -> Result<DVector<f64>> {
    sys.check_dimension(x)?;
    Ok(x - row_correction(sys, x, i)?)
}

/// Block Kaczmarz: Euclidean projection of `x` onto `{z : A_C z = b_C}`.
pub fn rbk_step(sys: &LinearSystem, x: &DVector<f64>, rows: &[usize]) -> Result<DVector<f64>> {
    sys.check_dimension(x)?;
    Ok(x - block_correction(sys, x, rows)?)
}

pub(crate) fn check_relaxation(omega: f64) -> Result<()> {
    if !(omega > 0.0 && omega < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "relaxation {omega} outside (0, 2)"
        )));
    }
    Ok(())
}

pub(crate) fn check_momentum(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "momentum {beta} must be a finite non-negative number"
        )));
    }
    Ok(())
}

/// One stochastic heavy ball step. The relaxed projection displacement is
/// applied first, then the momentum term.
pub fn shb_step(
    sys: &LinearSystem,
    state: &IterateState,
    sample: &SketchSample,
    omega: f64,
    beta: f64,
) -> Result<IterateState> {
    check_relaxation(omega)?;
    check_momentum(beta)?;
    sys.check_dimension(&state.previous)?;
    let x = &state.current;
    let grad = sketch_gradient(sys, x, sample)?;
    let next = (x - grad * omega) + (x - &state.previous) * beta;
    Ok(IterateState {
        current: next,
        previous: x.clone(),
    })
}

/// Projection of `x` onto the solution set of the system. Consensus systems
/// use the mean; everything else goes through the pseudoinverse.
pub fn project_to_solution(sys: &LinearSystem, x: &DVector<f64>) -> Result<DVector<f64>> {
    sys.check_dimension(x)?;
    if sys.is_average_consensus() {
        Ok(DVector::from_element(x.len(), x.mean()))
    } else {
        project_to_solution_general(sys, x)
    }
}

/// `x - A^+ (A x - b)`, failing when the system is inconsistent.
pub fn project_to_solution_general(sys: &LinearSystem, x: &DVector<f64>) -> Result<DVector<f64>> {
    sys.check_dimension(x)?;
    let projected = x - min_norm_solve(&sys.a, &sys.residual(x));
    let residual = sys.residual(&projected).norm();
    if residual > CONSISTENCY_TOLERANCE * sys.b.norm().max(1.0) {
        return Err(Error::NoSolution { residual });
    }
    Ok(projected)
}
