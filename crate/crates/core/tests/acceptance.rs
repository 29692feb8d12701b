//! Acceptance suite. Each criterion prints one PASS/FAIL line with its
//! runtime; the process exits non-zero if any criterion fails other than
//! those listed in `KNOWN_FAILURES`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use gossip_momentum::harness::initial_values;
use gossip_momentum::solver::shb_step;
use gossip_momentum::theory::{
    accelerated_beta_range, expected_w, extreme_spectrum, mean_error_trajectory, rate_basic,
    rate_shb, ExpectationOptions,
};
use gossip_momentum::{
    iterations_to_tolerance, rng, run_protocol, GossipState, Graph, IterateState, LinearSystem,
    ProtocolConfig, SketchDistribution, SketchSample,
};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

/// Criteria that fail when implemented as stated, because the iterates
/// diverge for some of the prescribed parameters.
///
/// * AC3: with omega = 1.5 and beta in {0.3, 0.5} a pair step plus its
///   momentum tail overshoots by omega / (1 - beta) > 2, the iterates blow
///   up, and rounding errors in the sum grow with them.
/// * AC7: at the midpoint of the accelerated momentum range the second
///   moment grows without bound, so a 5000-trial sample mean is noise. The
///   exact mean recursion does decay as claimed and is reported alongside.
const KNOWN_FAILURES: &[&str] = &["AC3", "AC7"];

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Mean and standard error of the mean, per iteration, of a set of traces.
fn mean_and_sem(traces: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let t = traces.len() as f64;
    let len = traces[0].len();
    let mut mean = vec![0.0; len];
    let mut sem = vec![0.0; len];
    for k in 0..len {
        let m = traces.iter().map(|tr| tr[k]).sum::<f64>() / t;
        let var = traces.iter().map(|tr| (tr[k] - m).powi(2)).sum::<f64>() / (t - 1.0);
        mean[k] = m;
        sem[k] = (var / t).sqrt();
    }
    (mean, sem)
}

/// `mean_k <= bound_k * (1 + 5 * relative SEM_k)` for every `k`.
fn bound_with_margin(mean: &[f64], sem: &[f64], bound: impl Fn(usize) -> f64) -> (bool, f64) {
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    for k in 0..mean.len() {
        let rel_sem = if mean[k] > 0.0 { sem[k] / mean[k] } else { 0.0 };
        let limit = bound(k) * (1.0 + 5.0 * rel_sem);
        pass &= mean[k] <= limit;
        worst = worst.max(mean[k] / bound(k));
    }
    (pass, worst)
}

fn reduction_chain() -> Outcome {
    let g = Graph::cycle(20).unwrap();
    let n = g.node_count();
    let c = initial_values(SEED, 0, n);
    let mut r = rng::seeded(SEED);
    let edges: Vec<usize> = (0..1000)
        .map(|_| r.random_range(0..g.edge_count()))
        .collect();

    let mut block_diff = 0.0f64;
    let mut diag_diff = 0.0f64;
    for (omega, beta) in [(1.0, 0.3), (1.4, 0.2), (0.6, 0.5)] {
        let mrk = ProtocolConfig::mrk(omega, beta);
        let mrbk = ProtocolConfig::mrbk(omega, beta, 1);
        let diag = ProtocolConfig::diag_b(omega, vec![beta; n]);
        let (mut a, mut b, mut d) = (
            GossipState::new(c.clone()),
            GossipState::new(c.clone()),
            GossipState::new(c.clone()),
        );
        for &e in &edges {
            mrk.apply(&mut a, &g, &SketchSample::Row(e)).unwrap();
            mrbk.apply(&mut b, &g, &SketchSample::Block(vec![e]))
                .unwrap();
            diag.apply(&mut d, &g, &SketchSample::Row(e)).unwrap();
            block_diff = block_diff.max(max_abs_diff(a.values(), b.values()));
            diag_diff = diag_diff.max(max_abs_diff(a.values(), d.values()));
        }
    }

    let mut identical = true;
    let (mut p, mut m) = (GossipState::new(c.clone()), GossipState::new(c));
    let mrk = ProtocolConfig::mrk(1.0, 0.0);
    let pairwise = ProtocolConfig::pairwise();
    for &e in &edges {
        pairwise.apply(&mut p, &g, &SketchSample::Row(e)).unwrap();
        mrk.apply(&mut m, &g, &SketchSample::Row(e)).unwrap();
        identical &= p
            .values()
            .iter()
            .zip(m.values())
            .all(|(x, y)| x.to_bits() == y.to_bits());
    }
    Outcome::new(
        block_diff <= 1e-12 && diag_diff <= 1e-12 && identical,
        format!(
            "block(1) vs mRK {block_diff:.2e}, diag-B vs mRK {diag_diff:.2e}, pairwise bit-identical: {identical}"
        ),
    )
}

fn protocol_solver_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for inst in 0..20u64 {
        let g = Graph::random_geometric(15, SEED + inst).unwrap();
        let sys = LinearSystem::average_consensus(&g);
        let tau = 1 + (inst as usize % 5);
        let (omega, beta) = [(1.0, 0.3), (0.7, 0.5), (1.3, 0.1)][inst as usize % 3];
        let sampler = SketchDistribution::UniformBlock(tau)
            .sampler(g.edge_count())
            .unwrap();
        let mut r = rng::seeded(inst);
        let c = initial_values(SEED, inst, 15);
        let mut gossip = GossipState::new(c.clone());
        let mut it = IterateState::new(DVector::from_vec(c));
        for _ in 0..100 {
            let sample = sampler.sample(&mut r);
            let SketchSample::Block(edges) = &sample else {
                unreachable!()
            };
            gossip.mrbk_step(&g, edges, omega, beta).unwrap();
            it = shb_step(&sys, &it, &sample, omega, beta).unwrap();
            worst = worst.max(max_abs_diff(gossip.values(), it.current.as_slice()));
        }
    }
    Outcome::new(
        worst <= 1e-10,
        format!("max per-step difference {worst:.2e}"),
    )
}

fn mass_preservation() -> Outcome {
    let g = Graph::grid2d(10, 10).unwrap();
    let n = g.node_count();
    let c = initial_values(SEED, 0, n);
    let total: f64 = c.iter().sum();
    let scale = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let limit = 1e-9 * n as f64 * scale;
    let mut worst = 0.0f64;
    let mut over = Vec::new();
    for omega in [0.5, 1.0, 1.5] {
        for beta in [0.0, 0.3, 0.5] {
            let mut pair_worst = 0.0f64;
            for cfg in [
                ProtocolConfig::mrk(omega, beta),
                ProtocolConfig::mrbk(omega, beta, 5),
            ] {
                let sampler = cfg
                    .sampling
                    .distribution(g.edge_count())
                    .sampler(g.edge_count())
                    .unwrap();
                let mut r = rng::protocol_stream(SEED, 0, &format!("{cfg:?}"));
                let mut st = GossipState::new(c.clone());
                for _ in 0..100_000 {
                    cfg.apply(&mut st, &g, &sampler.sample(&mut r)).unwrap();
                    let drift = (st.sum() - total).abs();
                    // NaN after overflow counts as unbounded drift
                    pair_worst = pair_worst.max(if drift.is_nan() { f64::INFINITY } else { drift });
                }
            }
            if pair_worst > limit {
                let ratio = omega / (1.0 - beta);
                over.push(format!(
                    "(omega {omega}, beta {beta}: drift {pair_worst:.2e}, omega/(1-beta) {ratio:.3})"
                ));
            }
            worst = worst.max(pair_worst);
        }
    }
    let detail = if over.is_empty() {
        format!("max |sum drift| {worst:.2e} (limit {limit:.2e})")
    } else {
        format!("limit {limit:.2e} exceeded for {}", over.join(", "))
    };
    Outcome::new(over.is_empty(), detail)
}

/// Relative-error traces of `cfg` on `g` over `trials` seeded trials.
fn traces(
    cfg: &ProtocolConfig,
    g: &Graph,
    trials: u64,
    iters: usize,
    label: &str,
) -> Vec<Vec<f64>> {
    (0..trials)
        .map(|t| {
            let c = initial_values(SEED, t, g.node_count());
            let mut r = rng::protocol_stream(SEED, t, label);
            run_protocol(cfg, g, &c, iters, &mut r, false)
                .unwrap()
                .rel_err
        })
        .collect()
}

fn triangle_lambda() -> f64 {
    let g = Graph::cycle(3).unwrap();
    let w = expected_w(
        &LinearSystem::average_consensus(&g),
        &SketchDistribution::uniform_rows(3),
        &Default::default(),
    )
    .unwrap();
    extreme_spectrum(&w.matrix).unwrap().lambda_min_plus
}

fn basic_bound() -> Outcome {
    let lambda = triangle_lambda();
    let rho = rate_basic(lambda).unwrap();
    let g = Graph::cycle(3).unwrap();
    let tr = traces(&ProtocolConfig::pairwise(), &g, 1000, 25, "pairwise");
    let (mean, sem) = mean_and_sem(&tr);
    let (pass, worst) = bound_with_margin(&mean, &sem, |k| rho.powi(k as i32));
    Outcome::new(
        pass && (lambda - 0.5).abs() <= 1e-12 && (rho - 0.5).abs() <= 1e-12,
        format!("lambda {lambda:.6}, rho {rho:.6}, max mean/bound {worst:.4}"),
    )
}

fn heavy_ball_bound() -> Outcome {
    let lambda = triangle_lambda();
    let rate = rate_shb(lambda, lambda, 1.0, 0.1).unwrap();
    // closed forms at lambda_min = lambda_max = 1/2, omega = 1, beta = 0.1
    let a1: f64 = 1.0 + 0.3 + 0.02 - 1.1 * 0.5;
    let a2: f64 = 0.1 + 0.02 + 0.1 * 0.5;
    let q_ref = (a1 + (a1 * a1 + 4.0 * a2).sqrt()) / 2.0;
    let g = Graph::cycle(3).unwrap();
    let tr = traces(&ProtocolConfig::mrk(1.0, 0.1), &g, 1000, 60, "mrk");
    let (mean, sem) = mean_and_sem(&tr);
    let (pass, worst) =
        bound_with_margin(&mean, &sem, |k| rate.q.powi(k as i32) * (1.0 + rate.delta));
    Outcome::new(
        pass && rate.valid
            && (rate.q - q_ref).abs() <= 1e-12
            && (rate.delta - (q_ref - a1)).abs() <= 1e-12,
        format!(
            "q {:.5}, delta {:.5}, max mean/bound {worst:.4}",
            rate.q, rate.delta
        ),
    )
}

fn zero_momentum_collapse() -> Outcome {
    let mut r = rng::seeded(SEED);
    let mut mismatches = 0;
    for _ in 0..100 {
        let lambda: f64 = 1.0 - r.random::<f64>(); // (0, 1]
        let lambda_max = lambda + (1.0 - lambda) * r.random::<f64>();
        if rate_shb(lambda, lambda_max, 1.0, 0.0).unwrap().q != rate_basic(lambda).unwrap() {
            mismatches += 1;
        }
    }
    Outcome::new(mismatches == 0, format!("{mismatches} of 100 differ"))
}

fn mean_decay() -> Outcome {
    let g = Graph::cycle(10).unwrap();
    let n = g.node_count();
    let sys = LinearSystem::average_consensus(&g);
    let w = expected_w(
        &sys,
        &SketchDistribution::uniform_rows(n),
        &Default::default(),
    )
    .unwrap()
    .matrix;
    let s = extreme_spectrum(&w).unwrap();
    let (lo, hi) = accelerated_beta_range(1.0, s.lambda_min_plus, s.lambda_max).unwrap();
    let beta = (lo + hi) / 2.0;

    let c = initial_values(SEED, 0, n);
    let target = c.iter().sum::<f64>() / n as f64;
    let e0 = DVector::from_iterator(n, c.iter().map(|v| v - target));
    let e0_sq = e0.norm_squared();
    let cfg = ProtocolConfig::mrk(1.0, beta);
    let trials = 5000;
    let mut sum = vec![DVector::<f64>::zeros(n); 201];
    for t in 0..trials {
        let mut r = rng::protocol_stream(SEED, t, "mrk");
        let states = run_protocol(&cfg, &g, &c, 200, &mut r, true)
            .unwrap()
            .states
            .unwrap();
        for (acc, x) in sum.iter_mut().zip(&states) {
            for (a, v) in acc.iter_mut().zip(x) {
                *a += v - target;
            }
        }
    }
    let mean_sq = |k: usize| (&sum[k] / trials as f64).norm_squared();
    let check = |m100: f64, m200: f64| {
        let slope = (m200.ln() - m100.ln()) / 100.0;
        let level = m200 <= beta.powi(200) * e0_sq * 10.0;
        (level && slope <= beta.ln() + 0.05, slope)
    };
    let (pass, slope) = check(mean_sq(100), mean_sq(200));
    let exact = mean_error_trajectory(&w, 1.0, beta, &e0, 200);
    let (exact_pass, exact_slope) = check(exact[100].norm_squared(), exact[200].norm_squared());
    Outcome::new(
        pass,
        format!(
            "beta {beta:.5}; sampled |mean err|^2/|e0|^2 at k=200 {:.3e} vs limit {:.3e}, slope {slope:.4} vs {:.4}; \
             exact mean recursion: {:.3e}, slope {exact_slope:.4} ({})",
            mean_sq(200) / e0_sq,
            beta.powi(200) * 10.0,
            beta.ln() + 0.05,
            exact[200].norm_squared() / e0_sq,
            if exact_pass { "within bound" } else { "outside bound" },
        ),
    )
}

fn momentum_speedup() -> Outcome {
    let mut summary = Vec::new();
    let mut pass = true;
    for (name, g) in [
        ("cycle30", Graph::cycle(30).unwrap()),
        ("grid6x6", Graph::grid2d(6, 6).unwrap()),
    ] {
        for (proto, make) in [
            (
                "mRK",
                (|b| ProtocolConfig::mrk(1.0, b)) as fn(f64) -> ProtocolConfig,
            ),
            ("mRBK5", |b| ProtocolConfig::mrbk(1.0, b, 5)),
        ] {
            let mut wins = 0;
            for t in 0..10 {
                let c = initial_values(SEED, t, g.node_count());
                let count = |beta: f64| {
                    let mut r = rng::protocol_stream(SEED, t, proto);
                    iterations_to_tolerance(&make(beta), &g, &c, 1e-6, 2_000_000, &mut r)
                        .unwrap()
                        .unwrap_or(usize::MAX)
                };
                let base = count(0.0);
                let best = [0.1, 0.2, 0.3, 0.4, 0.5]
                    .into_iter()
                    .map(count)
                    .min()
                    .unwrap();
                if best < base {
                    wins += 1;
                }
            }
            pass &= wins >= 9;
            summary.push(format!("{name}/{proto} {wins}/10"));
        }
    }
    Outcome::new(pass, summary.join(", "))
}

fn shift_register_identity() -> Outcome {
    let g = Graph::random_geometric(20, SEED).unwrap();
    let n = g.node_count();
    let mut r = rng::seeded(SEED);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        let p: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        let (i, j) = g.edge(r.random_range(0..g.edge_count())).unwrap();
        for omega in [1.2, 1.3] {
            let mut a = GossipState::from_registers(x.clone(), p.clone()).unwrap();
            let mut b = a.clone();
            a.mrk_step(&g, (i, j), omega, omega - 1.0).unwrap();
            b.shift_register_step(&g, (i, j), omega).unwrap();
            for v in [i, j] {
                worst = worst.max((a.values()[v] - b.values()[v]).abs());
            }
        }
    }
    Outcome::new(worst <= 1e-12, format!("max pair difference {worst:.2e}"))
}

fn lazy_equivalence() -> Outcome {
    let g = Graph::cycle(10).unwrap();
    let (omega, beta) = (1.0, 0.3);
    let c = initial_values(SEED, 0, 10);
    let mut eager = GossipState::new(c.clone());
    let mut lazy = GossipState::new(c);
    let mut r = rng::seeded(SEED);
    let mut worst = 0.0f64;
    for t in 0..1000u64 {
        let (i, j) = g.edge(r.random_range(0..g.edge_count())).unwrap();
        for v in [i, j] {
            let (caught, _) = lazy.caught_up(v, t, beta).unwrap();
            worst = worst.max((caught - eager.values()[v]).abs());
        }
        eager.mrk_step(&g, (i, j), omega, beta).unwrap();
        lazy.lazy_mrk_step(&g, (i, j), omega, beta, t).unwrap();
        for v in [i, j] {
            worst = worst.max((lazy.values()[v] - eager.values()[v]).abs());
        }
    }
    Outcome::new(
        worst <= 1e-10,
        format!("max activation difference {worst:.2e}"),
    )
}

fn spectrum_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for n in 4..=12 {
        let g = Graph::cycle(n).unwrap();
        let w = expected_w(
            &LinearSystem::average_consensus(&g),
            &SketchDistribution::uniform_rows(n),
            &Default::default(),
        )
        .unwrap();
        let got = extreme_spectrum(&w.matrix).unwrap().lambda_min_plus;
        let closed = (2.0 - 2.0 * (2.0 * std::f64::consts::PI / n as f64).cos()) / (2.0 * n as f64);
        worst = worst.max((got - closed).abs());
    }

    let g = Graph::grid2d(3, 3).unwrap();
    let sys = LinearSystem::average_consensus(&g);
    let dist = SketchDistribution::UniformBlock(3);
    let exact = expected_w(&sys, &dist, &Default::default()).unwrap();
    let sampled = expected_w(
        &sys,
        &dist,
        &ExpectationOptions {
            exact_limit: 0,
            mc_samples: 10_000,
            seed: SEED,
        },
    )
    .unwrap();
    let se = sampled.standard_error.as_ref().unwrap();
    let mut outside = 0;
    let mut worst_z = 0.0f64;
    for (k, (s, e)) in sampled.matrix.iter().zip(exact.matrix.iter()).enumerate() {
        let diff = (s - e).abs();
        if diff > 3.0 * se[k] + 1e-12 {
            outside += 1;
        }
        if se[k] > 0.0 {
            worst_z = worst_z.max(diff / se[k]);
        }
    }
    Outcome::new(
        worst <= 1e-10 && !exact.approximate && sampled.approximate && outside == 0,
        format!(
            "closed-form error {worst:.2e}; grid 3x3 tau=3: {outside} of 81 entries beyond 3 SE, max |z| {worst_z:.2}"
        ),
    )
}

type Criterion = (&'static str, &'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let criteria: [Criterion; 11] = [
        ("AC1", "reduction chain", secs(1), reduction_chain),
        (
            "AC2",
            "protocol/solver equivalence",
            secs(5),
            protocol_solver_equivalence,
        ),
        ("AC3", "mass preservation", secs(10), mass_preservation),
        ("AC4", "basic rate bound", secs(5), basic_bound),
        ("AC5", "heavy ball rate bound", secs(5), heavy_ball_bound),
        (
            "AC6",
            "zero-momentum rate collapse",
            secs(1),
            zero_momentum_collapse,
        ),
        ("AC7", "accelerated mean decay", secs(30), mean_decay),
        ("AC8", "momentum speedup", secs(30), momentum_speedup),
        (
            "AC9",
            "shift-register pair identity",
            secs(1),
            shift_register_identity,
        ),
        ("AC10", "lazy mRK equivalence", secs(2), lazy_equivalence),
        ("AC11", "spectrum oracle", secs(5), spectrum_oracle),
    ];
    let mut unexpected = Vec::new();
    let mut passed = 0;
    for (id, title, limit, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let pass = outcome.pass && elapsed < limit;
        let known = KNOWN_FAILURES.contains(&id);
        println!(
            "{} {id:<4} {title}: {} [{:.2} s, limit {} s]{}",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if !pass && known {
                " (known failure)"
            } else {
                ""
            },
        );
        if pass {
            passed += 1;
        }
        if pass == known {
            unexpected.push(id);
        }
    }
    println!(
        "acceptance: {passed}/{} passed, known failures: {:?}",
        criteria.len(),
        KNOWN_FAILURES
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected outcome for {unexpected:?}");
        ExitCode::FAILURE
    }
}
