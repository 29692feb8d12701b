//! Gossip protocols over node values.
//!
//! Every node keeps two registers, its current value and its value one
//! iteration earlier. A protocol step picks an edge (or a block of edges) and
//! updates the registers in place:
//!
//! * pairwise: the two endpoints replace their values by the pair average;
//! * mRK: the endpoints mix with relaxation `omega`, and every node (active
//!   or not) adds the momentum term `beta * (x - x_prev)`;
//! * mRBK: every connected component of the sampled edges is pulled towards
//!   its average with relaxation `omega`, plus momentum on every node;
//! * shift register: only the endpoints move, mixing the pair average with
//!   their own previous register;
//! * diagonal momentum: the mRK exchange with a per-node momentum weight;
//! * lazy mRK: mRK where idle nodes defer their momentum updates until they
//!   are next activated, using only a shared iteration counter.
//!
//! Starting from `x_prev = x`, mRK and mRBK keep the sum of all values fixed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{check_momentum, check_relaxation, SketchDistribution, SketchSample};
use crate::topology::{Edge, Graph};

#[derive(Clone, Debug, PartialEq)]
pub struct GossipState {
    values: Vec<f64>,
    previous: Vec<f64>,
    iter: u64,
    last_active: Vec<u64>,
}

impl GossipState {
    /// Both registers of node `i` hold the private value `c[i]`.
    pub fn new(initial: Vec<f64>) -> Self {
        let n = initial.len();
        GossipState {
            previous: initial.clone(),
            values: initial,
            iter: 0,
            last_active: vec![0; n],
        }
    }

    pub fn from_registers(values: Vec<f64>, previous: Vec<f64>) -> Result<Self> {
        if values.len() != previous.len() {
            return Err(Error::InvalidParameter(format!(
                "register lengths differ ({} vs {})",
                values.len(),
                previous.len()
            )));
        }
        let n = values.len();
        Ok(GossipState {
            values,
            previous,
            iter: 0,
            last_active: vec![0; n],
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn previous(&self) -> &[f64] {
        &self.previous
    }

    pub fn iter(&self) -> u64 {
        self.iter
    }

    pub fn last_active(&self) -> &[u64] {
        &self.last_active
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    fn check_graph(&self, graph: &Graph) -> Result<()> {
        if graph.node_count() != self.values.len() {
            return Err(Error::InvalidParameter(format!(
                "state has {} nodes but the graph has {}",
                self.values.len(),
                graph.node_count()
            )));
        }
        Ok(())
    }

    fn resolve_edge(&self, graph: &Graph, (i, j): Edge) -> Result<Edge> {
        self.check_graph(graph)?;
        graph
            .edge_index(i, j)
            .map(|_| (i, j))
            .ok_or(Error::InvalidEdge(i, j))
    }

    /// Idle update `x <- x + beta (x - x_prev)` for every node.
    fn extrapolate_all(&mut self, beta: f64) {
        for (x, p) in self.values.iter_mut().zip(self.previous.iter_mut()) {
            let old = *x;
            *x = old + beta * (old - *p);
            *p = old;
        }
    }

    /// Randomized pairwise gossip: both endpoints take the pair average.
    pub fn pairwise_step(&mut self, graph: &Graph, edge: Edge) -> Result<()> {
        let (i, j) = self.resolve_edge(graph, edge)?;
        self.previous.copy_from_slice(&self.values);
        let avg = 0.5 * self.values[i] + 0.5 * self.values[j];
        self.values[i] = avg;
        self.values[j] = avg;
        self.iter += 1;
        Ok(())
    }

    /// Randomized Kaczmarz gossip with relaxation and momentum.
    pub fn mrk_step(&mut self, graph: &Graph, edge: Edge, omega: f64, beta: f64) -> Result<()> {
        check_relaxation(omega)?;
        check_momentum(beta)?;
        let (i, j) = self.resolve_edge(graph, edge)?;
        let (xi, xj) = (self.values[i], self.values[j]);
        let (pi, pj) = (self.previous[i], self.previous[j]);
        self.extrapolate_all(beta);
        let keep = (2.0 - omega) / 2.0;
        let mix = omega / 2.0;
        self.values[i] = keep * xi + mix * xj + beta * (xi - pi);
        self.values[j] = keep * xj + mix * xi + beta * (xj - pj);
        self.iter += 1;
        Ok(())
    }

    /// Randomized block Kaczmarz gossip with relaxation and momentum over the
    /// subgraph formed by `edge_subset` (edge indices).
    pub fn mrbk_step(
        &mut self,
        graph: &Graph,
        edge_subset: &[usize],
        omega: f64,
        beta: f64,
    ) -> Result<()> {
        check_relaxation(omega)?;
        check_momentum(beta)?;
        self.check_graph(graph)?;
        // Only endpoints of sampled edges leave the idle update, so the
        // components are found over those nodes alone.
        let mut touched = Vec::with_capacity(2 * edge_subset.len());
        let mut pairs = Vec::with_capacity(edge_subset.len());
        for &e in edge_subset {
            let (i, j) = graph.edge(e)?;
            touched.extend([i, j]);
            pairs.push((i, j));
        }
        touched.sort_unstable();
        touched.dedup();
        let slot = |v: usize| touched.binary_search(&v).expect("endpoint was recorded");
        let mut parent: Vec<usize> = (0..touched.len()).collect();
        fn root(parent: &mut [usize], mut a: usize) -> usize {
            while parent[a] != a {
                parent[a] = parent[parent[a]];
                a = parent[a];
            }
            a
        }
        for (i, j) in pairs {
            let (a, b) = (root(&mut parent, slot(i)), root(&mut parent, slot(j)));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        // sums run over members in increasing node order
        let mut sum = vec![0.0; touched.len()];
        let mut count = vec![0usize; touched.len()];
        let roots: Vec<usize> = (0..touched.len()).map(|k| root(&mut parent, k)).collect();
        for (k, &r) in roots.iter().enumerate() {
            sum[r] += self.values[touched[k]];
            count[r] += 1;
        }
        let old: Vec<(f64, f64)> = touched
            .iter()
            .map(|&v| (self.values[v], self.previous[v]))
            .collect();
        self.extrapolate_all(beta);
        for (k, &v) in touched.iter().enumerate() {
            let r = roots[k];
            let (x, p) = old[k];
            self.values[v] =
                omega * (sum[r] / count[r] as f64) + (1.0 - omega) * x + beta * (x - p);
        }
        self.iter += 1;
        Ok(())
    }

    /// Two-register shift-register gossip. Only the endpoints change, and
    /// only their registers shift; idle nodes keep both registers.
    pub fn shift_register_step(&mut self, graph: &Graph, edge: Edge, omega: f64) -> Result<()> {
        if !(1.0..2.0).contains(&omega) {
            return Err(Error::InvalidParameter(format!(
                "shift-register relaxation {omega} outside [1, 2)"
            )));
        }
        let (i, j) = self.resolve_edge(graph, edge)?;
        let (xi, xj) = (self.values[i], self.values[j]);
        let avg = omega * ((xi + xj) / 2.0);
        self.values[i] = avg + (1.0 - omega) * self.previous[i];
        self.values[j] = avg + (1.0 - omega) * self.previous[j];
        self.previous[i] = xi;
        self.previous[j] = xj;
        self.iter += 1;
        Ok(())
    }

    /// Pairwise exchange with a diagonal momentum matrix:
    /// `x <- x - (omega/2)(x_i - x_j)(e_i - e_j) + B (x - x_prev)`.
    pub fn diagonal_momentum_step(
        &mut self,
        graph: &Graph,
        edge: Edge,
        omega: f64,
        momentum_diag: &[f64],
    ) -> Result<()> {
        check_relaxation(omega)?;
        check_momentum_diag(momentum_diag, self.values.len())?;
        let (i, j) = self.resolve_edge(graph, edge)?;
        let half_gap = omega / 2.0 * (self.values[i] - self.values[j]);
        for ((x, p), &b) in self
            .values
            .iter_mut()
            .zip(self.previous.iter_mut())
            .zip(momentum_diag)
        {
            let old = *x;
            *x = old + b * (old - *p);
            *p = old;
        }
        self.values[i] -= half_gap;
        self.values[j] += half_gap;
        self.iter += 1;
        Ok(())
    }

    /// Registers of `node` brought forward to iteration `counter` by
    /// replaying its deferred idle updates.
    pub fn caught_up(&self, node: usize, counter: u64, beta: f64) -> Result<(f64, f64)> {
        let since = self.last_active[node];
        if counter < since {
            return Err(Error::InvalidState(format!(
                "counter {counter} precedes last activation {since} of node {node}"
            )));
        }
        let m = idle_power(beta, counter - since);
        let (x, p) = (self.values[node], self.previous[node]);
        Ok((m[0][0] * x + m[0][1] * p, m[1][0] * x + m[1][1] * p))
    }

    /// Full value vector of a lazily updated state at iteration `counter`.
    pub fn materialize(&self, counter: u64, beta: f64) -> Result<Vec<f64>> {
        (0..self.values.len())
            .map(|v| self.caught_up(v, counter, beta).map(|(x, _)| x))
            .collect()
    }

    /// mRK driven by a shared counter. The endpoints first replay their
    /// deferred idle updates, then exchange; everyone else is untouched.
    pub fn lazy_mrk_step(
        &mut self,
        graph: &Graph,
        edge: Edge,
        omega: f64,
        beta: f64,
        counter: u64,
    ) -> Result<()> {
        check_relaxation(omega)?;
        check_momentum(beta)?;
        let (i, j) = self.resolve_edge(graph, edge)?;
        if counter < self.iter {
            return Err(Error::InvalidState(format!(
                "counter {counter} went backwards from {}",
                self.iter
            )));
        }
        let (xi, pi) = self.caught_up(i, counter, beta)?;
        let (xj, pj) = self.caught_up(j, counter, beta)?;
        let keep = (2.0 - omega) / 2.0;
        let mix = omega / 2.0;
        self.values[i] = keep * xi + mix * xj + beta * (xi - pi);
        self.values[j] = keep * xj + mix * xi + beta * (xj - pj);
        self.previous[i] = xi;
        self.previous[j] = xj;
        self.last_active[i] = counter + 1;
        self.last_active[j] = counter + 1;
        self.iter = counter + 1;
        Ok(())
    }
}

fn check_momentum_diag(diag: &[f64], n: usize) -> Result<()> {
    if diag.len() != n {
        return Err(Error::InvalidParameter(format!(
            "momentum diagonal has length {} for {n} nodes",
            diag.len()
        )));
    }
    if let Some(b) = diag.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "momentum diagonal entry {b} is not a finite non-negative number"
        )));
    }
    Ok(())
}

/// `[[1 + beta, -beta], [1, 0]]^k`, the map `(x, x_prev)` takes over `k`
/// idle iterations.
fn idle_power(beta: f64, mut k: u64) -> [[f64; 2]; 2] {
    let mul = |a: [[f64; 2]; 2], b: [[f64; 2]; 2]| {
        [
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ]
    };
    let mut result = [[1.0, 0.0], [0.0, 1.0]];
    let mut base = [[1.0 + beta, -beta], [1.0, 0.0]];
    while k > 0 {
        if k & 1 == 1 {
            result = mul(result, base);
        }
        base = mul(base, base);
        k >>= 1;
    }
    result
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    Pairwise,
    Mrk,
    Mrbk,
    ShiftRegister,
    DiagB,
    LazyMrk,
}

impl ProtocolKind {
    fn single_edge(self) -> bool {
        !matches!(self, ProtocolKind::Mrbk)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    pub omega: f64,
    pub beta: f64,
    pub sampling: SampleSpec,
    pub momentum_diag: Option<Vec<f64>>,
}

/// Edge-sampling distribution, sized to the graph when the run starts.
#[derive(Clone, Debug, PartialEq)]
pub enum SampleSpec {
    UniformEdges,
    EdgeProbabilities(Vec<f64>),
    UniformBlock(usize),
}

impl SampleSpec {
    pub fn distribution(&self, edges: usize) -> SketchDistribution {
        match self {
            SampleSpec::UniformEdges => SketchDistribution::uniform_rows(edges),
            SampleSpec::EdgeProbabilities(p) => SketchDistribution::Rows(p.clone()),
            SampleSpec::UniformBlock(tau) => SketchDistribution::UniformBlock(*tau),
        }
    }
}

impl ProtocolConfig {
    pub fn pairwise() -> Self {
        Self::single(ProtocolKind::Pairwise, 1.0, 0.0)
    }

    pub fn mrk(omega: f64, beta: f64) -> Self {
        Self::single(ProtocolKind::Mrk, omega, beta)
    }

    pub fn lazy_mrk(omega: f64, beta: f64) -> Self {
        Self::single(ProtocolKind::LazyMrk, omega, beta)
    }

    pub fn shift_register(omega: f64) -> Self {
        Self::single(ProtocolKind::ShiftRegister, omega, 0.0)
    }

    pub fn diag_b(omega: f64, momentum_diag: Vec<f64>) -> Self {
        ProtocolConfig {
            momentum_diag: Some(momentum_diag),
            ..Self::single(ProtocolKind::DiagB, omega, 0.0)
        }
    }

    pub fn mrbk(omega: f64, beta: f64, block_size: usize) -> Self {
        ProtocolConfig {
            kind: ProtocolKind::Mrbk,
            omega,
            beta,
            sampling: SampleSpec::UniformBlock(block_size),
            momentum_diag: None,
        }
    }

    fn single(kind: ProtocolKind, omega: f64, beta: f64) -> Self {
        ProtocolConfig {
            kind,
            omega,
            beta,
            sampling: SampleSpec::UniformEdges,
            momentum_diag: None,
        }
    }

    pub fn with_edge_probabilities(mut self, p: Vec<f64>) -> Self {
        self.sampling = SampleSpec::EdgeProbabilities(p);
        self
    }

    /// Checks parameter ranges for this kind and the sampling spec against
    /// `graph`.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        match self.kind {
            ProtocolKind::Pairwise => {}
            ProtocolKind::ShiftRegister => {
                if !(1.0..2.0).contains(&self.omega) {
                    return Err(Error::InvalidParameter(format!(
                        "shift-register relaxation {} outside [1, 2)",
                        self.omega
                    )));
                }
            }
            ProtocolKind::DiagB => {
                check_relaxation(self.omega)?;
                let diag = self.momentum_diag.as_deref().ok_or_else(|| {
                    Error::InvalidParameter("diag-b protocol needs a momentum diagonal".into())
                })?;
                check_momentum_diag(diag, graph.node_count())?;
            }
            ProtocolKind::Mrk | ProtocolKind::Mrbk | ProtocolKind::LazyMrk => {
                check_relaxation(self.omega)?;
                check_momentum(self.beta)?;
            }
        }
        let block = matches!(self.sampling, SampleSpec::UniformBlock(_));
        if self.kind.single_edge() == block {
            return Err(Error::InvalidParameter(format!(
                "{:?} protocol cannot use {:?} sampling",
                self.kind, self.sampling
            )));
        }
        self.sampling
            .distribution(graph.edge_count())
            .validate(graph.edge_count())
    }

    /// Applies one iteration given an already drawn sample.
    pub fn apply(
        &self,
        state: &mut GossipState,
        graph: &Graph,
        sample: &SketchSample,
    ) -> Result<()> {
        match (self.kind, sample) {
            (ProtocolKind::Mrbk, SketchSample::Block(edges)) => {
                state.mrbk_step(graph, edges, self.omega, self.beta)
            }
            (ProtocolKind::Mrbk, SketchSample::Row(e)) => {
                state.mrbk_step(graph, &[*e], self.omega, self.beta)
            }
            (kind, SketchSample::Row(e)) => {
                let edge = graph.edge(*e)?;
                match kind {
                    ProtocolKind::Pairwise => state.pairwise_step(graph, edge),
                    ProtocolKind::Mrk => state.mrk_step(graph, edge, self.omega, self.beta),
                    ProtocolKind::ShiftRegister => {
                        state.shift_register_step(graph, edge, self.omega)
                    }
                    ProtocolKind::DiagB => state.diagonal_momentum_step(
                        graph,
                        edge,
                        self.omega,
                        self.momentum_diag.as_deref().unwrap_or(&[]),
                    ),
                    ProtocolKind::LazyMrk => {
                        let counter = state.iter();
                        state.lazy_mrk_step(graph, edge, self.omega, self.beta, counter)
                    }
                    ProtocolKind::Mrbk => unreachable!(),
                }
            }
            (kind, SketchSample::Block(_)) => Err(Error::InvalidParameter(format!(
                "{kind:?} protocol got a block sample"
            ))),
        }
    }

    /// Node values at the state's current iteration, replaying deferred
    /// updates for the lazy variant.
    pub fn current_values(&self, state: &GossipState) -> Result<Vec<f64>> {
        match self.kind {
            ProtocolKind::LazyMrk => state.materialize(state.iter(), self.beta),
            _ => Ok(state.values().to_vec()),
        }
    }
}

/// Relative errors `|x_k - x*|^2 / |x_0 - x*|^2` for `k = 0..=iters`, and
/// optionally the value vectors themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub rel_err: Vec<f64>,
    pub states: Option<Vec<Vec<f64>>>,
}

/// Relative squared distance to the consensus vector of `initial`. A start
/// that is already at consensus reports zero.
pub fn relative_error(values: &[f64], target: f64, initial_sq: f64) -> f64 {
    if initial_sq == 0.0 {
        return 0.0;
    }
    values.iter().map(|v| (v - target).powi(2)).sum::<f64>() / initial_sq
}

pub fn run_protocol<R: Rng + ?Sized>(
    cfg: &ProtocolConfig,
    graph: &Graph,
    initial: &[f64],
    iters: usize,
    rng: &mut R,
    keep_states: bool,
) -> Result<Trace> {
    cfg.validate(graph)?;
    if initial.len() != graph.node_count() {
        return Err(Error::InvalidParameter(format!(
            "{} initial values for {} nodes",
            initial.len(),
            graph.node_count()
        )));
    }
    let sampler = cfg
        .sampling
        .distribution(graph.edge_count())
        .sampler(graph.edge_count())?;
    let target = initial.iter().sum::<f64>() / initial.len() as f64;
    let initial_sq: f64 = initial.iter().map(|v| (v - target).powi(2)).sum();

    let mut state = GossipState::new(initial.to_vec());
    let mut rel_err = Vec::with_capacity(iters + 1);
    let mut states = keep_states.then(|| Vec::with_capacity(iters + 1));
    let lazy = cfg.kind == ProtocolKind::LazyMrk;

    let mut record = |state: &GossipState| -> Result<()> {
        let owned;
        let values = if lazy {
            owned = cfg.current_values(state)?;
            &owned[..]
        } else {
            state.values()
        };
        rel_err.push(relative_error(values, target, initial_sq));
        if let Some(states) = states.as_mut() {
            states.push(values.to_vec());
        }
        Ok(())
    };

    record(&state)?;
    for _ in 0..iters {
        let sample = sampler.sample(rng);
        cfg.apply(&mut state, graph, &sample)?;
        record(&state)?;
    }
    Ok(Trace { rel_err, states })
}

/// First iteration at which the relative error drops to `tol`, or `None`
/// if that does not happen within `max_iters` iterations.
pub fn iterations_to_tolerance<R: Rng + ?Sized>(
    cfg: &ProtocolConfig,
    graph: &Graph,
    initial: &[f64],
    tol: f64,
    max_iters: usize,
    rng: &mut R,
) -> Result<Option<usize>> {
    cfg.validate(graph)?;
    if initial.len() != graph.node_count() {
        return Err(Error::InvalidParameter(format!(
            "{} initial values for {} nodes",
            initial.len(),
            graph.node_count()
        )));
    }
    let sampler = cfg
        .sampling
        .distribution(graph.edge_count())
        .sampler(graph.edge_count())?;
    let target = initial.iter().sum::<f64>() / initial.len() as f64;
    let initial_sq: f64 = initial.iter().map(|v| (v - target).powi(2)).sum();
    let mut state = GossipState::new(initial.to_vec());
    for k in 0..=max_iters {
        let err = relative_error(&cfg.current_values(&state)?, target, initial_sq);
        if err <= tol {
            return Ok(Some(k));
        }
        if k < max_iters {
            cfg.apply(&mut state, graph, &sampler.sample(rng))?;
        }
    }
    Ok(None)
}
