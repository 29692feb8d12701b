//! Seeded multi-trial experiments and their CSV output.
//!
//! Trial `t` draws its starting vector from a standard normal stream keyed by
//! `(master_seed, t)`; every protocol in the experiment starts from that same
//! vector and samples edges from its own stream keyed by
//! `(master_seed, t, label)`. Output depends only on the config, whether
//! trials run in parallel or not.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocols::{run_protocol, ProtocolConfig, ProtocolKind, SampleSpec, Trace};
use crate::rng;
use crate::topology::Graph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    Cycle { n: usize },
    Grid { rows: usize, cols: usize },
    Rgg { n: usize, seed: u64 },
    File { path: PathBuf },
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph> {
        match self {
            GraphSpec::Cycle { n } => Graph::cycle(*n),
            GraphSpec::Grid { rows, cols } => Graph::grid2d(*rows, *cols),
            GraphSpec::Rgg { n, seed } => Graph::random_geometric(*n, *seed),
            GraphSpec::File { path } => Graph::from_edge_list(&fs::read_to_string(path)?),
        }
    }

    fn rebase(&mut self, base: &Path) {
        if let GraphSpec::File { path } = self {
            rebase(base, path);
        }
    }
}

fn config_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new(""))
}

fn rebase(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

fn default_omega() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolEntry {
    pub label: String,
    pub kind: ProtocolKind,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default)]
    pub beta: f64,
    /// Block size, mRBK only.
    pub tau: Option<usize>,
    /// Per-node momentum weights, diag-b only.
    pub momentum_diag: Option<Vec<f64>>,
    /// Per-edge sampling probabilities in edge-list order; uniform if absent.
    pub edge_probabilities: Option<Vec<f64>>,
}

impl ProtocolEntry {
    pub fn new(label: impl Into<String>, cfg: &ProtocolConfig) -> Self {
        let (tau, edge_probabilities) = match &cfg.sampling {
            SampleSpec::UniformEdges => (None, None),
            SampleSpec::EdgeProbabilities(p) => (None, Some(p.clone())),
            SampleSpec::UniformBlock(t) => (Some(*t), None),
        };
        ProtocolEntry {
            label: label.into(),
            kind: cfg.kind,
            omega: cfg.omega,
            beta: cfg.beta,
            tau,
            momentum_diag: cfg.momentum_diag.clone(),
            edge_probabilities,
        }
    }

    pub fn to_config(&self) -> Result<ProtocolConfig> {
        let sampling = match (self.kind, self.tau, &self.edge_probabilities) {
            (ProtocolKind::Mrbk, Some(tau), None) => SampleSpec::UniformBlock(tau),
            (ProtocolKind::Mrbk, None, _) => {
                return Err(Error::Config(format!(
                    "protocol `{}`: mrbk needs a block size `tau`",
                    self.label
                )))
            }
            (ProtocolKind::Mrbk, Some(_), Some(_)) => {
                return Err(Error::Config(format!(
                    "protocol `{}`: mrbk samples uniform blocks, drop `edge_probabilities`",
                    self.label
                )))
            }
            (_, Some(_), _) => {
                return Err(Error::Config(format!(
                    "protocol `{}`: `tau` only applies to mrbk",
                    self.label
                )))
            }
            (_, None, Some(p)) => SampleSpec::EdgeProbabilities(p.clone()),
            (_, None, None) => SampleSpec::UniformEdges,
        };
        if self.momentum_diag.is_some() && self.kind != ProtocolKind::DiagB {
            return Err(Error::Config(format!(
                "protocol `{}`: `momentum_diag` only applies to diag-b",
                self.label
            )));
        }
        Ok(ProtocolConfig {
            kind: self.kind,
            omega: self.omega,
            beta: self.beta,
            sampling,
            momentum_diag: self.momentum_diag.clone(),
        })
    }
}

fn default_trials() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub protocols: Vec<ProtocolEntry>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub iters: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub dump_states: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative graph and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = config_dir(path);
        cfg.graph.rebase(base);
        if let Some(out) = cfg.output.as_mut() {
            rebase(base, out);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.iters == 0 {
            return Err(Error::Config("iters must be at least 1".into()));
        }
        if self.protocols.is_empty() {
            return Err(Error::Config("no protocols listed".into()));
        }
        let mut seen = HashSet::new();
        for p in &self.protocols {
            if !seen.insert(p.label.as_str()) {
                return Err(Error::Config(format!("duplicate label `{}`", p.label)));
            }
        }
        Ok(())
    }
}

/// Standard normal starting vector of trial `trial`.
pub fn initial_values(master_seed: u64, trial: u64, n: usize) -> Vec<f64> {
    let mut stream = rng::initial_values_stream(master_seed, trial);
    (0..n).map(|_| stream.sample(StandardNormal)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceTable {
    pub labels: Vec<String>,
    pub iters: usize,
    /// `traces[p][t]` is protocol `p` in trial `t`.
    pub traces: Vec<Vec<Trace>>,
}

impl TraceTable {
    pub fn trials(&self) -> usize {
        self.traces.first().map_or(0, Vec::len)
    }

    /// Mean relative error over trials, per protocol and iteration.
    pub fn aggregate(&self) -> Vec<Vec<f64>> {
        self.traces
            .iter()
            .map(|trials| {
                let k = trials.len() as f64;
                (0..=self.iters)
                    .map(|it| trials.iter().map(|t| t.rel_err[it]).sum::<f64>() / k)
                    .collect()
            })
            .collect()
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("label,trial,iter,rel_err\n");
        for (label, trials) in self.labels.iter().zip(&self.traces) {
            let label = csv_field(label);
            for (t, trace) in trials.iter().enumerate() {
                for (it, e) in trace.rel_err.iter().enumerate() {
                    let _ = writeln!(out, "{label},{t},{it},{e:.16e}");
                }
            }
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("label,iter,mean_rel_err\n");
        for (label, means) in self.labels.iter().zip(self.aggregate()) {
            let label = csv_field(label);
            for (it, e) in means.iter().enumerate() {
                let _ = writeln!(out, "{label},{it},{e:.16e}");
            }
        }
        out
    }

    /// Full node values, present only when states were kept.
    pub fn states_csv(&self) -> Option<String> {
        let mut out = String::from("label,trial,iter,node,value\n");
        for (label, trials) in self.labels.iter().zip(&self.traces) {
            let label = csv_field(label);
            for (t, trace) in trials.iter().enumerate() {
                for (it, values) in trace.states.as_ref()?.iter().enumerate() {
                    for (node, v) in values.iter().enumerate() {
                        let _ = writeln!(out, "{label},{t},{it},{node},{v:.16e}");
                    }
                }
            }
        }
        Some(out)
    }

    /// Writes the trace CSV to `path`, aggregates to the sibling
    /// `<stem>.agg.csv` and, if kept, states to `<stem>.states.csv`.
    /// Returns the paths written.
    pub fn write(&self, path: &Path) -> Result<Vec<PathBuf>> {
        let mut files = vec![
            (path.to_path_buf(), self.trace_csv()),
            (sibling(path, "agg"), self.aggregate_csv()),
        ];
        if let Some(states) = self.states_csv() {
            files.push((sibling(path, "states"), states));
        }
        for (p, body) in &files {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let tmp = p.with_extension("csv.tmp");
            fs::write(&tmp, body)?;
            fs::rename(&tmp, p)?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

/// `out.csv` -> `out.<tag>.csv`.
pub fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut name = stem.into_os_string();
    name.push(format!(".{tag}.csv"));
    PathBuf::from(name)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<TraceTable> {
    cfg.validate()?;
    let graph = cfg.graph.build()?;
    let protocols: Vec<ProtocolConfig> = cfg
        .protocols
        .iter()
        .map(|p| {
            let c = p.to_config()?;
            c.validate(&graph)
                .map_err(|e| Error::Config(format!("protocol `{}`: {e}", p.label)))?;
            Ok(c)
        })
        .collect::<Result<_>>()?;

    let per_trial: Vec<Vec<Trace>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let init = initial_values(cfg.master_seed, t as u64, graph.node_count());
            cfg.protocols
                .iter()
                .zip(&protocols)
                .map(|(entry, pc)| {
                    let mut stream = rng::protocol_stream(cfg.master_seed, t as u64, &entry.label);
                    run_protocol(pc, &graph, &init, cfg.iters, &mut stream, cfg.dump_states)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut traces: Vec<Vec<Trace>> = vec![Vec::with_capacity(cfg.trials); protocols.len()];
    for trial in per_trial {
        for (p, trace) in trial.into_iter().enumerate() {
            traces[p].push(trace);
        }
    }
    Ok(TraceTable {
        labels: cfg.protocols.iter().map(|p| p.label.clone()).collect(),
        iters: cfg.iters,
        traces,
    })
}

fn default_betas() -> Vec<f64> {
    vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
}

fn default_shift_omegas() -> Vec<f64> {
    vec![1.2, 1.3]
}

fn default_block_size() -> usize {
    5
}

/// The three head-to-head studies: momentum sweep for mRK at unit
/// relaxation, mRK against the shift-register method with tied momentum,
/// and momentum sweep for mRBK.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub graph: GraphSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub iters: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub output: PathBuf,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    #[serde(default = "default_shift_omegas")]
    pub shift_omegas: Vec<f64>,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
}

impl CompareConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file, resolving relative paths as
    /// [`ExperimentConfig::load`] does.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = config_dir(path);
        cfg.graph.rebase(base);
        rebase(base, &mut cfg.output);
        Ok(cfg)
    }

    /// `(name, experiment)` for each study; outputs go to
    /// `<output stem>.<name>.csv`.
    pub fn experiments(&self) -> Vec<(&'static str, ExperimentConfig)> {
        let exp = |name: &'static str, protocols: Vec<ProtocolEntry>| {
            (
                name,
                ExperimentConfig {
                    graph: self.graph.clone(),
                    protocols,
                    trials: self.trials,
                    iters: self.iters,
                    master_seed: self.master_seed,
                    output: Some(sibling(&self.output, name)),
                    dump_states: false,
                },
            )
        };
        let momentum = self
            .betas
            .iter()
            .map(|&b| ProtocolEntry::new(format!("mRK beta={b}"), &ProtocolConfig::mrk(1.0, b)))
            .collect();
        let mut shift = vec![ProtocolEntry::new("pairwise", &ProtocolConfig::pairwise())];
        for &w in &self.shift_omegas {
            let b = w - 1.0;
            // w - 1 carries representation noise (1.2 - 1 = 0.19999999999999996)
            let shown = (b * 1e12).round() / 1e12;
            shift.push(ProtocolEntry::new(
                format!("mRK omega={w} beta={shown}"),
                &ProtocolConfig::mrk(w, b),
            ));
            shift.push(ProtocolEntry::new(
                format!("shift-register omega={w}"),
                &ProtocolConfig::shift_register(w),
            ));
        }
        let mut block = vec![ProtocolEntry::new("pairwise", &ProtocolConfig::pairwise())];
        block.extend(self.betas.iter().map(|&b| {
            ProtocolEntry::new(
                format!("mRBK tau={} beta={b}", self.block_size),
                &ProtocolConfig::mrbk(1.0, b, self.block_size),
            )
        }));
        vec![
            exp("momentum", momentum),
            exp("shift_register", shift),
            exp("block", block),
        ]
    }
}
