use std::sync::Arc;

use dagcsp::domains::{contains, BoxDomain};
use dagcsp::graph::{build_graph, FnModel, GraphSpec, NodeEval, NodeSpec};
use dagcsp::models::{approximator_graph, linear_example_graph, reactor_graph, ReactorParams};
use dagcsp::propagate::{
    estimate_backward_domains, load_state, propagate, reduced_coupling_domain, save_state, PropagateConfig,
    PropagationState,
};
use dagcsp::reconstruct::{compare_runs, evaluate_composite, joint_box, reconstruct, simultaneous, CompareReport};
use dagcsp::samplers::{sobol, EvalCounter, SamplerConfig};
use dagcsp::Error;

fn small(directions: &str, target: usize, seed: u64) -> PropagateConfig {
    let mut cfg = PropagateConfig { directions: directions.into(), seed, ..Default::default() };
    cfg.sampler.target_feasible = target;
    cfg.domain.n_sobol = 1024;
    cfg
}

fn single(constraint: fn(&[f64]) -> f64) -> GraphSpec {
    let m = FnModel::new(0, vec![], 1, move |v, _, _| Ok(NodeEval { outputs: vec![], constraints: vec![constraint(v)] }));
    let node = NodeSpec { id: 0, name: "only".into(), param_box: BoxDomain::cube(2, 0.0, 1.0), model: Arc::new(m) };
    build_graph(vec![node], vec![], None).unwrap()
}

#[test]
fn backward_domains_enclose_sampled_inputs() {
    let g = linear_example_graph();
    let counter = EvalCounter::new();
    let doms = estimate_backward_domains(&g, 512, 0.0, &counter).unwrap();
    assert_eq!(doms[0].dim(), 0);
    assert_eq!(doms[1].dim(), 0);
    assert_eq!(doms[2].dim(), 2);
    // nodes 0, 1 and 2 emit payloads; the leaves are never run
    assert_eq!(counter.snapshot().constituent_evals, 512 * 3);
    let b = joint_box(&g);
    for p in sobol(10, 512, 0).unwrap() {
        let c = evaluate_composite(&g, &b.from_unit(&p), &[]).unwrap();
        for i in 2..5 {
            assert!(contains(&doms[i], &c.inputs[i]).unwrap());
        }
    }
    let wide = estimate_backward_domains(&g, 512, 0.05, &EvalCounter::new()).unwrap();
    for i in 2..5 {
        for k in 0..doms[i].dim() {
            assert!(wide[i].lo[k] < doms[i].lo[k] && wide[i].hi[k] > doms[i].hi[k]);
        }
    }
    let lone = single(|v| v[0] - 1.0);
    assert!(estimate_backward_domains(&lone, 16, 0.05, &EvalCounter::new()).unwrap().iter().all(|d| d.dim() == 0));
    assert!(matches!(estimate_backward_domains(&g, 1, 0.05, &EvalCounter::new()), Err(Error::InvalidArgument(_))));
}

#[test]
fn propagation_is_reproducible() {
    let g = linear_example_graph();
    let a = propagate(&g, &small("f", 150, 4)).unwrap();
    let b = propagate(&g, &small("f", 150, 4)).unwrap();
    assert_eq!(a.counts, b.counts);
    for (x, y) in a.latest().iter().zip(b.latest()) {
        assert_eq!(x.samples, y.samples);
        assert_eq!(x.classifier, y.classifier);
    }
    assert!(matches!(propagate(&g, &small("fx", 150, 4)), Err(Error::InvalidDirectionString(_))));
}

#[test]
fn every_feasible_node_sample_satisfies_its_own_constraints() {
    let g = linear_example_graph();
    let st = propagate(&g, &small("fb", 150, 2)).unwrap();
    assert_eq!(st.passes.len(), 2);
    assert!(st.backward_domains.is_none());
    for pass in &st.passes {
        for s in pass {
            let n_v = g.node(s.node).param_box.dim();
            for &r in s.feasible_rows() {
                let x = s.samples.row(r);
                let e = g.node(s.node).model.evaluate(&x[..n_v], &x[n_v..], &[]).unwrap();
                assert!(e.feasible());
            }
        }
    }
    // roots of a forward pass never solve an embedded problem
    assert_eq!(st.passes[0][0].counts.nlp_solves, 0);
    assert_eq!(st.passes[0][1].counts.nlp_solves, 0);
}

fn assert_same_state(a: &PropagationState, b: &PropagationState) {
    assert_eq!(a.directions, b.directions);
    assert_eq!(a.counts, b.counts);
    assert_eq!(a.domain_counts, b.domain_counts);
    assert_eq!(a.graph_fingerprint, b.graph_fingerprint);
    assert_eq!(a.config_hash, b.config_hash);
    assert_eq!(a.lifted, b.lifted);
    assert_eq!(a.passes.len(), b.passes.len());
    for (pa, pb) in a.passes.iter().zip(&b.passes) {
        for (x, y) in pa.iter().zip(pb) {
            assert_eq!(x.samples, y.samples);
            assert_eq!(x.domain, y.domain);
            assert_eq!(x.payloads, y.payloads);
            assert_eq!(x.classifier, y.classifier);
            assert_eq!(x.regressors, y.regressors);
            assert_eq!(x.feasible_rows(), y.feasible_rows());
        }
    }
}

#[test]
fn state_survives_a_round_trip_on_disk() {
    let g = linear_example_graph();
    let mut st = propagate(&g, &small("b", 120, 9)).unwrap();
    st.config_hash = "abc123".into();
    let dir = tempfile::tempdir().unwrap();
    save_state(&st, dir.path()).unwrap();
    let back = load_state(dir.path()).unwrap();
    assert_same_state(&st, &back);
    assert!(back.backward_domains.is_some());
    let r1 = reconstruct(&g, &st, 50, 100_000, 1).unwrap();
    let r2 = reconstruct(&g, &back, 50, 100_000, 1).unwrap();
    assert_eq!(r1.joint_samples, r2.joint_samples);
    assert!(load_state(&dir.path().join("missing")).is_err());
}

#[test]
fn lifted_runs_expose_the_reduced_coupling_domain() {
    let g = approximator_graph();
    let mut cfg = small("b", 120, 3);
    cfg.nlp.coupling_terms = false;
    let st = propagate(&g, &cfg).unwrap();
    assert!(st.lifted);
    let z = reduced_coupling_domain(&st).unwrap();
    assert_eq!(z.dim(), 3);
    assert_eq!(z.len(), 120);
    let cb = dagcsp::models::coupling_box();
    assert!(z.rows().all(|r| contains(&cb, r).unwrap()));

    let plain = propagate(&linear_example_graph(), &small("f", 100, 3)).unwrap();
    assert!(matches!(reduced_coupling_domain(&plain), Err(Error::NotLiftedRun)));
}

#[test]
fn reconstruction_keeps_only_jointly_feasible_points() {
    let g = linear_example_graph();
    let st = propagate(&g, &small("f", 150, 5)).unwrap();
    let r = reconstruct(&g, &st, 100, 200_000, 8).unwrap();
    assert_eq!(r.joint_samples.n_feasible(), 100);
    for (k, x) in r.joint_samples.rows().enumerate() {
        let ok = evaluate_composite(&g, x, &[]).unwrap().feasible();
        assert_eq!(ok, r.joint_samples.labels[k] == -1);
    }
    // propagation cost is charged to the run
    assert_eq!(r.counts.constituent_evals, st.counts.constituent_evals + r.joint_samples.n_evaluations);
    assert_eq!(r.joint_samples.n_evaluations, 5 * r.joint_samples.len() as u64);
    assert!((r.acceptance_ratio - 100.0 / r.counts.constituent_evals as f64).abs() < 1e-15);

    assert!(matches!(reconstruct(&g, &st, 0, 100, 1), Err(Error::InvalidArgument(_))));
    assert!(matches!(reconstruct(&reactor_graph(), &st, 10, 100, 1), Err(Error::StateMismatch(_))));
}

#[test]
fn simultaneous_baseline_edges() {
    let always = single(|_| -1.0);
    let cfg = SamplerConfig { target_feasible: 50, max_evaluations: 1000, ..Default::default() };
    let r = simultaneous(&always, &cfg).unwrap();
    assert_eq!(r.acceptance_ratio, 1.0);
    assert_eq!(r.joint_samples.len(), 50);

    let never = single(|_| 1.0);
    assert!(matches!(simultaneous(&never, &cfg), Err(Error::BudgetExhaustedEmpty)));
}

#[test]
fn comparison_ratios() {
    let g = linear_example_graph();
    let cfg = SamplerConfig { target_feasible: 20, max_evaluations: 100_000, ..Default::default() };
    let a = simultaneous(&g, &cfg).unwrap().summary();
    let same = compare_runs(&a, &a).unwrap();
    assert_eq!((same.ar_ratio, same.eval_ratio), (1.0, 1.0));

    let mut empty = a.clone();
    empty.acceptance_ratio = 0.0;
    let rep = compare_runs(&a, &empty).unwrap();
    assert!(rep.ar_ratio.is_infinite());
    let json = serde_json::to_string(&rep).unwrap();
    assert!(json.contains("\"ar_ratio\":\"inf\""));
    let back: CompareReport = serde_json::from_str(&json).unwrap();
    assert!(back.ar_ratio.is_infinite());
    assert_eq!(back.a, rep.a);

    let other = simultaneous(&single(|_| -1.0), &cfg).unwrap().summary();
    assert!(matches!(compare_runs(&a, &other), Err(Error::GraphMismatch)));
}

#[test]
fn reactor_inputs_are_the_first_outlet() {
    let g = reactor_graph();
    let p = ReactorParams::default();
    let c = evaluate_composite(&g, &[600.0, 400.0, 600.0, 400.0], &[]).unwrap();
    let first = p.run_batch(0, 600.0, 400.0, p.c0).unwrap();
    assert_eq!(c.inputs[1], vec![first[0], first[1]]);
    assert_eq!(c.n_evals, 2);
}
