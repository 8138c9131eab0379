//! End-to-end acceptance checks on the three built-in studies.
//!
//! Every check writes one `A<n> PASS|FAIL ...` line straight to stderr so the
//! lines survive the test harness's output capture. Runs shared between
//! checks are computed once.

use std::io::Write;
use std::sync::OnceLock;

use dagcsp::domains::{BoxDomain, SampleSet};
use dagcsp::models::{
    approximator_graph, brute_force_oracle, coupling_box, fit_joint_classifier, linear_example_graph, nonconvex_target,
    reactor_graph, reactor_graph_with, sip_solve, smallest_error_starts, ReactorParams, SipConfig, SipResult,
};
use dagcsp::optim::{box_minimize, MinimizeOptions};
use dagcsp::propagate::{propagate, PropagateConfig, PropagationState};
use dagcsp::reconstruct::{reconstruct, simultaneous, ReconstructionResult};
use dagcsp::samplers::{sobol, SamplerConfig};
use dagcsp::surrogates::{krr_jacobian, krr_predict, svm_decision, svm_gradient, CvReport, SvmClassifier, SvmGrid};
use dagcsp::Error;
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 11;

fn report(id: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{id} {verdict} {detail}");
}

fn note(id: &str, detail: &str) {
    let _ = writeln!(std::io::stderr(), "{id} INFO {detail}");
}

// ---------------------------------------------------------------------------
// Linear example, written out independently of the library's wiring.
// Columns: v = [v0a, v0b, v1a, v1b, v2a, v2b, v3a, v3b, v4a, v4b].

#[derive(Clone, Copy)]
struct Lin {
    a: [f64; 10],
    c: f64,
}

impl Lin {
    fn var(k: usize, w: f64) -> Lin {
        let mut a = [0.0; 10];
        a[k] = w;
        Lin { a, c: 0.0 }
    }
    fn plus(self, o: Lin, w: f64) -> Lin {
        let mut a = self.a;
        for k in 0..10 {
            a[k] += w * o.a[k];
        }
        Lin { a, c: self.c + w * o.c }
    }
    fn at(&self, v: &[f64]) -> f64 {
        self.c + self.a.iter().zip(v).map(|(a, x)| a * x).sum::<f64>()
    }
}

struct LinearWiring {
    /// Inputs each node receives, by node.
    inputs: Vec<Vec<Lin>>,
    /// Constraints `≤ 0`, by node.
    constraints: Vec<Vec<Lin>>,
}

fn linear_wiring() -> LinearWiring {
    let y0 = Lin::var(0, 1.0).plus(Lin::var(1, 1.0), -1.0);
    let y1 = Lin::var(2, 0.5).plus(Lin::var(3, 1.0), 0.5);
    let y23 = Lin::var(4, 1.0).plus(Lin::var(5, 1.0), 0.5).plus(y0, 0.1).plus(y1, 0.1);
    let y24 = Lin::var(4, -0.5).plus(Lin::var(5, 1.0), 1.0).plus(y0, 0.1).plus(y1, 0.1);
    let g3 = Lin::var(6, 1.0).plus(Lin::var(7, 1.0), 1.0).plus(y23, 0.1);
    let g4 = Lin::var(8, 1.0).plus(Lin::var(9, 1.0), -0.5).plus(y24, 0.1);
    LinearWiring {
        inputs: vec![vec![], vec![], vec![y0, y1], vec![y23], vec![y24]],
        constraints: vec![vec![y0], vec![y1], vec![y23, y24], vec![g3], vec![g4]],
    }
}

impl LinearWiring {
    fn feasible(&self, v: &[f64], tol: f64) -> bool {
        self.constraints.iter().flatten().all(|g| g.at(v) <= tol)
    }

    /// Node subproblem point `[v_i | u_i]` seen when the graph runs at `v`.
    fn projection(&self, i: usize, v: &[f64]) -> Vec<f64> {
        let mut x = v[2 * i..2 * i + 2].to_vec();
        x.extend(self.inputs[i].iter().map(|l| l.at(v)));
        x
    }

    /// Exact projection label by linear programming: does some joint `v`
    /// with these local parameters and inputs satisfy every constraint?
    fn projection_feasible(&self, i: usize, x: &[f64]) -> bool {
        let mut p = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = (0..10)
            .map(|k| {
                if k / 2 == i {
                    p.add_var(0.0, (x[k % 2], x[k % 2]))
                } else {
                    p.add_var(0.0, (-1.0, 1.0))
                }
            })
            .collect();
        let expr = |l: &Lin| vars.iter().zip(l.a).map(|(&v, a)| (v, a)).collect::<Vec<_>>();
        for (m, l) in self.inputs[i].iter().enumerate() {
            p.add_constraint(expr(l), ComparisonOp::Eq, x[2 + m] - l.c);
        }
        for l in self.constraints.iter().flatten() {
            p.add_constraint(expr(l), ComparisonOp::Le, -l.c);
        }
        p.solve().is_ok()
    }
}

#[test]
fn linear_wiring_matches_library_graph() {
    let g = linear_example_graph();
    let w = linear_wiring();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let v: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = dagcsp::reconstruct::evaluate_composite(&g, &v, &[]).unwrap();
        for i in 0..5 {
            let x = w.projection(i, &v);
            for (a, b) in x[2..].iter().zip(&c.inputs[i]) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in w.constraints[i].iter().zip(&c.evals[i].constraints) {
                assert!((a.at(&v) - b).abs() < 1e-12);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Shared runs.

fn linear_oracle() -> &'static SampleSet {
    static S: OnceLock<SampleSet> = OnceLock::new();
    S.get_or_init(|| brute_force_oracle(&linear_example_graph(), 1_000_000, SEED).unwrap())
}

fn linear_state(directions: &str) -> PropagationState {
    let cfg = PropagateConfig { directions: directions.into(), seed: SEED, ..Default::default() };
    propagate(&linear_example_graph(), &cfg).unwrap()
}

fn linear_f() -> &'static PropagationState {
    static S: OnceLock<PropagationState> = OnceLock::new();
    S.get_or_init(|| linear_state("f"))
}

fn linear_fb() -> &'static PropagationState {
    static S: OnceLock<PropagationState> = OnceLock::new();
    S.get_or_init(|| linear_state("fb"))
}

fn linear_runs() -> &'static (ReconstructionResult, ReconstructionResult) {
    static S: OnceLock<(ReconstructionResult, ReconstructionResult)> = OnceLock::new();
    S.get_or_init(|| {
        let g = linear_example_graph();
        let dec = reconstruct(&g, linear_f(), 2000, 2_000_000, SEED).unwrap();
        let cfg = SamplerConfig { target_feasible: 2000, max_evaluations: 5_000_000, seed: SEED, ..Default::default() };
        let sim = simultaneous(&g, &cfg).unwrap();
        (dec, sim)
    })
}

fn approx_config() -> PropagateConfig {
    let mut cfg = PropagateConfig { directions: "b".into(), seed: SEED, ..Default::default() };
    cfg.nlp.coupling_terms = false;
    cfg
}

struct ApproxRuns {
    state: PropagationState,
    dec: ReconstructionResult,
    sim: ReconstructionResult,
}

fn approx_runs() -> &'static ApproxRuns {
    static S: OnceLock<ApproxRuns> = OnceLock::new();
    S.get_or_init(|| {
        let g = approximator_graph();
        let state = propagate(&g, &approx_config()).unwrap();
        let dec = reconstruct(&g, &state, 2000, 500_000, SEED).unwrap();
        let cfg = SamplerConfig { target_feasible: 2000, max_evaluations: 500_000, seed: SEED, ..Default::default() };
        let sim = simultaneous(&g, &cfg).unwrap();
        ApproxRuns { state, dec, sim }
    })
}

fn joint_grid() -> SvmGrid {
    SvmGrid { reg_c: vec![10.0, 100.0, 1000.0], rbf_gamma: vec![0.05, 0.2, 0.5, 1.0] }
}

fn approx_sip(samples: &SampleSet) -> (SvmClassifier, CvReport, Result<SipResult, Error>) {
    let g = approximator_graph();
    let (clf, cv) = fit_joint_classifier(samples, &joint_grid(), 1500, SEED).unwrap();
    let cb = coupling_box();
    let cfg = SipConfig { warm_starts: smallest_error_starts(samples, g.param_dim(), 5), seed: SEED, ..Default::default() };
    let sip = sip_solve(&clf, &g.param_box(), &cb.slice(0..2), &cb.slice(2..3), &cfg);
    (clf, cv, sip)
}

// ---------------------------------------------------------------------------

fn collect_reports(states: &[&PropagationState]) -> (Vec<(String, f64)>, Vec<(String, f64)>) {
    let (mut acc, mut mse) = (Vec::new(), Vec::new());
    for st in states {
        for pass in &st.passes {
            for s in pass {
                if let Some(r) = &s.classifier_report {
                    acc.push((format!("{}:{}", s.direction_tag, s.node), r.mean_cv()));
                }
                for (k, r) in &s.regressor_reports {
                    mse.push((format!("{}:{}->{}", s.direction_tag, s.node, k), r.mean_cv()));
                }
            }
        }
    }
    (acc, mse)
}

#[test]
fn a1_forward_pass_outer_approximates() {
    let oracle = linear_oracle();
    let st = linear_f();
    let w = linear_wiring();
    let feas: Vec<&[f64]> = oracle.feasible_rows().collect();
    let mut per_node = [0usize; 5];
    let mut all = 0;
    for v in &feas {
        let mut every = true;
        for (i, s) in st.passes[0].iter().enumerate() {
            let ok = s.classifier_feasible(&w.projection(i, v), 1e-3);
            per_node[i] += ok as usize;
            every &= ok;
        }
        all += every as usize;
    }
    let n = feas.len() as f64;
    let frac = all as f64 / n;
    let per: Vec<String> = per_node.iter().map(|c| format!("{:.4}", *c as f64 / n)).collect();
    report(
        "A1",
        frac >= 0.95,
        &format!("covered {frac:.4} of {} oracle-feasible points (per node {})", feas.len(), per.join(" ")),
    );
    assert!(frac >= 0.95);
}

#[test]
fn a2_composed_pass_matches_projections() {
    let oracle = linear_oracle();
    let st = linear_fb();
    let w = linear_wiring();
    let n = 10_000;
    let mut worst: f64 = 0.0;
    let mut rates = Vec::new();
    for (i, s) in st.latest().iter().enumerate() {
        let mut disagree = 0;
        for k in 0..n {
            let x = w.projection(i, oracle.row(k));
            if w.projection_feasible(i, &x) != s.classifier_feasible(&x, 0.0) {
                disagree += 1;
            }
        }
        let rate = disagree as f64 / n as f64;
        worst = worst.max(rate);
        rates.push(format!("{rate:.4}"));
    }
    report("A2", worst <= 0.07, &format!("disagreement per node {} (max {worst:.4})", rates.join(" ")));
    assert!(worst <= 0.07);
}

#[test]
fn a3_decomposition_beats_simultaneous() {
    let (dec, sim) = linear_runs();
    let ratio = dec.acceptance_ratio / sim.acceptance_ratio;
    report(
        "A3",
        ratio >= 10.0 && dec.joint_samples.n_feasible() == 2000 && sim.joint_samples.n_feasible() == 2000,
        &format!(
            "AR decomposition {:.5} ({} evals) vs simultaneous {:.5} ({} evals), ratio {ratio:.2}",
            dec.acceptance_ratio, dec.counts.constituent_evals, sim.acceptance_ratio, sim.counts.constituent_evals
        ),
    );
    assert!(ratio >= 10.0);
}

/// Largest B fraction the literal reactor pair can reach, by dense search
/// over both reactors' settings.
fn reactor_b_fraction_bound() -> f64 {
    let p = ReactorParams::default();
    let mut best: f64 = 0.0;
    for a in 0..=12 {
        for b in 0..=12 {
            let (tau1, t1) = (300.0 + 50.0 * a as f64, 300.0 + 400.0 * b as f64 / 12.0);
            let c1 = p.run_batch(0, tau1, t1, p.c0).unwrap();
            for c in 0..=12 {
                for d in 0..=12 {
                    let (tau2, t2) = (300.0 + 50.0 * c as f64, 300.0 + 400.0 * d as f64 / 12.0);
                    let c2 = p.run_batch(1, tau2, t2, [c1[0], c1[1], 0.0]).unwrap();
                    best = best.max(c2[1] / (c2[0] + c2[1] + c2[2]));
                }
            }
        }
    }
    best
}

fn reactor_sim() -> &'static Result<ReconstructionResult, Error> {
    static S: OnceLock<Result<ReconstructionResult, Error>> = OnceLock::new();
    S.get_or_init(|| {
        let cfg = SamplerConfig { target_feasible: 1000, max_evaluations: 3_000_000, seed: SEED, ..Default::default() };
        simultaneous(&reactor_graph(), &cfg)
    })
}

fn reactor_b() -> &'static Result<PropagationState, Error> {
    static S: OnceLock<Result<PropagationState, Error>> = OnceLock::new();
    S.get_or_init(|| {
        let cfg = PropagateConfig { directions: "b".into(), seed: SEED, ..Default::default() };
        propagate(&reactor_graph(), &cfg)
    })
}

fn reactor_fb() -> &'static Result<PropagationState, Error> {
    static S: OnceLock<Result<PropagationState, Error>> = OnceLock::new();
    S.get_or_init(|| {
        let cfg = PropagateConfig { directions: "fb".into(), seed: SEED, ..Default::default() };
        propagate(&reactor_graph(), &cfg)
    })
}

/// With the stated kinetics the second reactor never gets near the B purity
/// target, so parts (ii) and (iii) cannot hold. They are run as stated, the
/// failure is reported, and the test pins the cause. The strict version is
/// `a4_reactor_strict`.
#[test]
fn a4_reactor_study() {
    let p = ReactorParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut drift: f64 = 0.0;
    for _ in 0..100 {
        let (tau, t) = (rng.gen_range(300.0..900.0), rng.gen_range(300.0..700.0));
        let c = p.run_batch(0, tau, t, p.c0).unwrap();
        drift = drift.max((c[0] + 2.0 * c[1] + 2.0 * c[2] - 2.0).abs());
        let (tau, t) = (rng.gen_range(300.0..900.0), rng.gen_range(300.0..700.0));
        let d = p.run_batch(1, tau, t, [c[0], c[1], 0.0]).unwrap();
        drift = drift.max((d[0] + 2.0 * d[1] + 2.0 * d[2] - (c[0] + 2.0 * c[1])).abs());
    }
    report("A4(i)", drift <= 1e-6, &format!("conservation drift {drift:.2e} over 100 trajectories per reactor"));
    assert!(drift <= 1e-6);

    let bound = reactor_b_fraction_bound();
    note("A4", &format!("largest reachable B fraction {bound:.3e} against the target {}", p.b_purity_min));
    assert!(bound < p.b_purity_min);

    let sim = reactor_sim();
    report("A4(ii)", sim.is_ok(), &format!("simultaneous within 3e6 evals: {:?}", sim.as_ref().map(|r| r.summary())));
    assert!(matches!(sim, Err(Error::BudgetExhaustedEmpty)));

    let dec = reactor_b();
    report("A4(iii)", false, &format!("decomposition b: {:?}", dec.as_ref().map(|s| s.counts)));
    assert!(matches!(dec, Err(Error::EmptySubproblemSolution(1))));
}

#[test]
#[ignore = "unreachable with the stated reactor kinetics; see a4_reactor_study"]
fn a4_reactor_strict() {
    let sim = reactor_sim().as_ref().expect("simultaneous found nothing");
    let st = reactor_b().as_ref().expect("decomposition failed");
    let dec = reconstruct(&reactor_graph(), st, 1000, 3_000_000, SEED).unwrap();
    assert!(dec.acceptance_ratio >= 2.0 * sim.acceptance_ratio);
}

/// The same pipeline with purity targets the kinetics can meet.
#[test]
fn reactor_reachable_targets_supplement() {
    let g = reactor_graph_with(ReactorParams::reachable_targets());
    let cfg = PropagateConfig { directions: "b".into(), seed: SEED, ..Default::default() };
    let st = propagate(&g, &cfg).unwrap();
    let dec = reconstruct(&g, &st, 1000, 3_000_000, SEED).unwrap();
    let scfg = SamplerConfig { target_feasible: 1000, max_evaluations: 3_000_000, seed: SEED, ..Default::default() };
    let sim = simultaneous(&g, &scfg).unwrap();
    let (acc, mse) = collect_reports(&[&st]);
    note(
        "A4",
        &format!(
            "reachable targets: AR decomposition b {:.5} vs simultaneous {:.5} (ratio {:.2}); classifier CV {:?}; regressor MSE {:?}",
            dec.acceptance_ratio,
            sim.acceptance_ratio,
            dec.acceptance_ratio / sim.acceptance_ratio,
            acc,
            mse
        ),
    );
    assert_eq!(dec.joint_samples.n_feasible(), 1000);
    assert_eq!(sim.joint_samples.n_feasible(), 1000);
    for x in dec.joint_samples.feasible_rows().chain(sim.joint_samples.feasible_rows()) {
        assert!(reactor_pair_feasible(&ReactorParams::reachable_targets(), x));
    }
}

fn reactor_pair_feasible(p: &ReactorParams, x: &[f64]) -> bool {
    let c1 = p.run_batch(0, x[0], x[1], p.c0).unwrap();
    let c2 = p.run_batch(1, x[2], x[3], [c1[0], c1[1], 0.0]).unwrap();
    c1[2] / (c1[0] + c1[1] + c1[2]) <= p.c_purity_max && c2[1] / (c2[0] + c2[1] + c2[2]) >= p.b_purity_min
}

fn inclusion_fraction(f: &PropagationState, fb: &PropagationState) -> (f64, usize) {
    let (mut inside, mut total) = (0, 0);
    for (sf, sb) in f.passes[0].iter().zip(fb.latest()) {
        for &r in sb.feasible_rows() {
            total += 1;
            inside += (sf.decision(sb.samples.row(r)) <= 1e-3) as usize;
        }
    }
    (inside as f64 / total.max(1) as f64, total)
}

#[test]
fn a5_monotone_inclusion() {
    let (frac, total) = inclusion_fraction(linear_f(), linear_fb());
    report("A5(linear)", frac >= 0.95, &format!("{frac:.4} of {total} fb-feasible node samples accepted by the f classifiers"));
    assert!(frac >= 0.95);

    let fb = reactor_fb();
    report("A5(reactor)", false, &format!("fb pass on the stated reactor targets: {:?}", fb.as_ref().map(|s| s.counts)));
    assert!(matches!(fb, Err(Error::EmptySubproblemSolution(1))));
}

#[test]
fn a6_surrogate_quality() {
    let mut states = vec![linear_f(), linear_fb()];
    if let Ok(s) = reactor_b() {
        states.push(s);
    }
    let (acc, mse) = collect_reports(&states);
    let worst_acc = acc.iter().map(|a| a.1).fold(1.0, f64::min);
    let worst_mse = mse.iter().map(|a| a.1).fold(0.0, f64::max);
    let ok = worst_acc >= 0.95 && worst_mse <= 1e-2;
    report(
        "A6",
        ok,
        &format!(
            "{} classifiers, lowest CV accuracy {worst_acc:.4}; {} regressors, largest CV MSE {worst_mse:.2e}; stated reactor runs trained none",
            acc.len(),
            mse.len()
        ),
    );
    assert!(ok, "{acc:?} {mse:?}");
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-3);
    diff / scale
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|k| {
            y[k] = x[k] + h;
            let up = f(&y);
            y[k] = x[k] - h;
            let down = f(&y);
            y[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn gray_code_sobol_2d(n: usize) -> Vec<[f64; 2]> {
    // first axis: van der Corput; second axis: x + 1 with m = 1
    let mut v1 = [0u32; 32];
    let mut v2 = [0u32; 32];
    for k in 0..32 {
        v1[k] = 1 << (31 - k);
        v2[k] = if k == 0 { 1 << 31 } else { v2[k - 1] ^ (v2[k - 1] >> 1) };
    }
    let (mut x1, mut x2) = (0u32, 0u32);
    let mut out = vec![[0.0, 0.0]];
    for i in 1..n {
        let c = (i - 1).trailing_ones() as usize;
        x1 ^= v1[c];
        x2 ^= v2[c];
        out.push([x1 as f64 / 2f64.powi(32), x2 as f64 / 2f64.powi(32)]);
    }
    out
}

#[test]
fn a7_numerical_kernels() {
    let st = linear_f();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut svm_worst, mut krr_worst): (f64, f64) = (0.0, 0.0);
    let (mut n_svm, mut n_krr) = (0, 0);
    for s in &st.passes[0] {
        let d = s.domain.dim();
        let points: Vec<Vec<f64>> =
            (0..10).map(|_| s.domain.from_unit(&(0..d).map(|_| rng.gen()).collect::<Vec<_>>())).collect();
        if s.classifier_report.is_some() {
            n_svm += 1;
            for x in &points {
                let mut g = vec![0.0; d];
                svm_gradient(&s.classifier, x, &mut g);
                let fd = central_diff(|y| svm_decision(&s.classifier, y), x, 1e-5);
                svm_worst = svm_worst.max(rel_err(&g, &fd));
            }
        }
        for r in s.regressors.values() {
            n_krr += 1;
            let n_in = r.input_dim();
            let sub = BoxDomain::new(s.domain.lo[..n_in].to_vec(), s.domain.hi[..n_in].to_vec()).unwrap();
            for _ in 0..10 {
                let x = sub.from_unit(&(0..n_in).map(|_| rng.gen()).collect::<Vec<_>>());
                let n_out = krr_predict(r, &x).len();
                let mut jac = vec![0.0; n_out * n_in];
                krr_jacobian(r, &x, &mut jac);
                for o in 0..n_out {
                    let fd = central_diff(|y| krr_predict(r, y)[o], &x, 1e-5);
                    krr_worst = krr_worst.max(rel_err(&jac[o * n_in..(o + 1) * n_in], &fd));
                }
            }
        }
    }
    let grad_ok = svm_worst <= 1e-5 && krr_worst <= 1e-5 && n_svm > 0 && n_krr > 0;
    report(
        "A7(derivatives)",
        grad_ok,
        &format!("SVM gradient rel err {svm_worst:.2e} over {n_svm} models, KRR Jacobian {krr_worst:.2e} over {n_krr}"),
    );

    let rosen = |x: &[f64], g: &mut [f64]| {
        let (a, b) = (1.0 - x[0], x[1] - x[0] * x[0]);
        g[0] = -2.0 * a - 400.0 * x[0] * b;
        g[1] = 200.0 * b;
        a * a + 100.0 * b * b
    };
    let opts = MinimizeOptions { max_iter: 1000, ..Default::default() };
    let r = box_minimize(&rosen, &BoxDomain::cube(2, -2.0, 2.0), &[-1.2, 1.0], &opts);
    report("A7(rosenbrock)", r.f_star <= 1e-8, &format!("f* {:.2e} after {} iterations", r.f_star, r.iterations));

    let lib = sobol(2, 8, 0).unwrap();
    let reference = gray_code_sobol_2d(8);
    let listed = [[0.0, 0.0], [0.5, 0.5], [0.75, 0.25], [0.25, 0.75], [0.375, 0.375], [0.875, 0.875], [0.625, 0.125], [0.125, 0.625]];
    let sobol_ok = (0..8).all(|k| lib[k] == reference[k].to_vec() && reference[k] == listed[k]);
    report("A7(sobol)", sobol_ok, &format!("first 8 points {lib:?}"));
    assert!(grad_ok && r.f_star <= 1e-8 && sobol_ok);
}

/// Largest error of the approximator at `v` over a `n × n` grid of the
/// coupling box, computed term by term.
fn approximator_grid_error(v: &[f64], n: usize) -> f64 {
    let cb = coupling_box();
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let z1 = cb.lo[0] + cb.width(0) * a as f64 / (n - 1) as f64;
            let z2 = cb.lo[1] + cb.width(1) * b as f64 / (n - 1) as f64;
            worst = worst.max((approximator_terms(v, z1, z2) - nonconvex_target(&[z1, z2])).abs());
        }
    }
    worst
}

fn approximator_terms(v: &[f64], z1: f64, z2: f64) -> f64 {
    let (l1, l2) = ((1.0 + z1).ln(), (1.0 + z2).ln());
    let constant = v[0];
    let log = -v[1] * l1 - v[2] * l2;
    let zlog = v[3] * z1 * l1 + v[4] * z2 * l2;
    let linear = v[5] * z1 + v[6] * z2;
    let quadratic = (v[7] * z1 + v[8] * z2).powi(2) + (v[9] * z2).powi(2);
    constant + log + zlog + linear + quadratic
}

fn direct_target(z1: f64, z2: f64) -> f64 {
    z1.powi(3) - z1.powi(2) + z2.powi(3) - z2.powi(2) - z1 * z2
}

#[test]
fn a8_function_approximation() {
    let runs = approx_runs();
    let n_feas = runs.dec.joint_samples.n_feasible();
    let lifted = runs.state.lifted && runs.state.passes.len() == 1;
    report(
        "A8(reconstruct)",
        lifted && n_feas >= 500 && runs.dec.joint_samples.n_evaluations <= 500_000,
        &format!(
            "lifted b pass, {n_feas} joint feasible samples from {} reconstruction evals (AR {:.4}, simultaneous {:.4})",
            runs.dec.joint_samples.n_evaluations, runs.dec.acceptance_ratio, runs.sim.acceptance_ratio
        ),
    );
    let cb = coupling_box();
    let mut eps = Vec::new();
    let mut ok = lifted && n_feas >= 500;
    for (name, samples) in [("decomposition", &runs.dec.joint_samples), ("simultaneous", &runs.sim.joint_samples)] {
        let (clf, cv, sip) = approx_sip(samples);
        let sip = match sip {
            Ok(s) => s,
            Err(e) => {
                report("A8(sip)", false, &format!("{name}: {e}"));
                ok = false;
                continue;
            }
        };
        let mut grid_viol = f64::NEG_INFINITY;
        for a in 0..40 {
            for b in 0..40 {
                let mut x = sip.v_star.clone();
                x.push(cb.lo[0] + cb.width(0) * a as f64 / 39.0);
                x.push(cb.lo[1] + cb.width(1) * b as f64 / 39.0);
                x.push(sip.eps_star);
                grid_viol = grid_viol.max(svm_decision(&clf, &x));
            }
        }
        let this_ok = (0.0..=0.25).contains(&sip.eps_star) && grid_viol <= 1e-2;
        ok &= this_ok;
        report(
            "A8(sip)",
            this_ok,
            &format!("{name}: eps* {:.4} after {} iterations, classifier max on 40x40 z-grid {grid_viol:.2e}", sip.eps_star, sip.iterations),
        );
        note(
            "A8",
            &format!(
                "{name}: joint classifier CV accuracy {:.3}; true error of v* on the grid {:.3}",
                cv.mean_cv(),
                approximator_grid_error(&sip.v_star, 40)
            ),
        );
        eps.push(sip.eps_star);
    }
    let agree = eps.len() == 2 && (eps[0] - eps[1]).abs() <= 0.05;
    report("A8(agreement)", agree, &format!("eps* {eps:?}"));
    assert!(ok && agree);
}

#[test]
fn a9_reconstruction_soundness() {
    let w = linear_wiring();
    let (dec, sim) = linear_runs();
    let mut checked = 0;
    let mut bad = 0;
    for x in dec.joint_samples.feasible_rows().chain(sim.joint_samples.feasible_rows()) {
        checked += 1;
        bad += !w.feasible(x, 1e-12) as usize;
    }
    let runs = approx_runs();
    for x in runs.dec.joint_samples.feasible_rows().chain(runs.sim.joint_samples.feasible_rows()) {
        checked += 1;
        let (z1, z2, e) = (x[10], x[11], x[12]);
        bad += ((approximator_terms(&x[..10], z1, z2) - direct_target(z1, z2)).abs() - e > 1e-12) as usize;
    }
    report("A9", bad == 0, &format!("{checked} feasible joint samples re-evaluated, {bad} violate a constraint"));
    assert_eq!(bad, 0);
}
