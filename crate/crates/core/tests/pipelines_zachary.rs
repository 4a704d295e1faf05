use std::collections::BTreeSet;
use std::path::Path;

use acd::em::{FitOptions, Threshold};
use acd::graph::{load_edgelist, Network, Pair};
use acd::model::Hyperparams;
use acd::pipelines::{
    make_folds, max_additions, run_add_2step, run_injection, run_link_prediction_cv, run_remove_2step, AddConfig,
    AucNegatives, CvConfig, InjectionConfig, RemoveConfig,
};
use acd::AcdError;

fn zachary() -> Network {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    load_edgelist(dir.join("zachary.tsv"), false, false)
        .unwrap()
        .load_attributes(dir.join("zachary.attributes.tsv"))
        .unwrap()
}

fn quick() -> FitOptions {
    FitOptions { n_seeds: 2, max_iter: 200, rng_seed: 1, ..Default::default() }
}

#[test]
fn fixture_shape() {
    let net = zachary();
    assert_eq!(net.n_nodes(), 34);
    assert_eq!(net.n_edges(), 78);
    assert!(net.attributes().unwrap().iter().all(Option::is_some));
}

#[test]
fn removal_drops_selected_edges() {
    let net = zachary();
    let cfg = RemoveConfig {
        selection: Threshold::TopK(2),
        replicates: 2,
        fit: quick(),
        hyper: Hyperparams::new(2),
        cv_folds: None,
    };
    let report = run_remove_2step(&net, &cfg).unwrap();
    assert_eq!(report.metric("n_removed", None).unwrap().values, vec![2.0, 2.0]);
    let labels: Vec<String> = (0..34).map(|i| net.node_label(i)).collect();
    for rep in report.details["removed"].as_array().unwrap() {
        let rep = rep.as_array().unwrap();
        assert_eq!(rep.len(), 2);
        for pair in rep {
            let a = labels.iter().position(|l| l == pair[0].as_str().unwrap()).unwrap();
            let b = labels.iter().position(|l| l == pair[1].as_str().unwrap()).unwrap();
            assert!(net.has_pair(Pair::new(a, b)));
        }
    }
    let agree = report.metric("agree_before", None).unwrap();
    assert!(agree.values.iter().all(|&x| (0.0..=34.0).contains(&x)));
}

#[test]
fn removing_nothing_leaves_baseline_unchanged() {
    let net = zachary();
    let cfg = RemoveConfig {
        selection: Threshold::TopK(0),
        replicates: 1,
        fit: quick(),
        hyper: Hyperparams::new(2),
        cv_folds: None,
    };
    let report = run_remove_2step(&net, &cfg).unwrap();
    let before = report.metric("cs_before", None).unwrap().mean;
    let after = report.metric("cs_after", None).unwrap().mean;
    assert_eq!(before, after);
    assert_eq!(report.metric("n_removed", None).unwrap().mean, 0.0);
    assert!(!report.warnings.is_empty());
}

#[test]
fn addition_respects_cap() {
    let net = zachary();
    assert_eq!(max_additions(&net), 3);
    let mut cfg = AddConfig { n_add: 4, replicates: 1, fit: quick(), hyper: Hyperparams::new(2) };
    assert!(matches!(run_add_2step(&net, &cfg), Err(AcdError::InvalidParam(_))));
    cfg.n_add = 3;
    let report = run_add_2step(&net, &cfg).unwrap();
    let added = report.details["added"][0].as_array().unwrap();
    assert_eq!(added.len(), 3);
    for m in ["cs_before", "cs_after", "f1_before", "f1_after"] {
        let v = report.metric(m, None).unwrap().mean;
        assert!((0.0..=1.0).contains(&v), "{m} = {v}");
    }
}

#[test]
fn folds_partition_edges() {
    let net = zachary();
    let folds = make_folds(&net, 5, 3).unwrap();
    let mut seen = BTreeSet::new();
    for f in &folds {
        assert_eq!(f.edges.len(), f.non_edges.len());
        assert!(f.non_edges.iter().all(|p| !net.has_pair(*p)));
        for p in &f.edges {
            assert!(seen.insert(*p), "edge in two folds");
        }
    }
    assert_eq!(seen.len(), net.n_edges());
    assert_eq!(make_folds(&net, 5, 3).unwrap(), folds);
}

#[test]
fn cv_and_injection_are_deterministic() {
    let net = zachary();
    let cv = CvConfig { folds: 3, seed: 2, fit: quick(), hyper: Hyperparams::new(2) };
    let a = run_link_prediction_cv(&net, &cv).unwrap();
    let b = run_link_prediction_cv(&net, &cv).unwrap();
    assert_eq!(a.metric("auc", None), b.metric("auc", None));
    let auc = a.metric("auc", None).unwrap();
    assert_eq!(auc.n, 3);
    assert!(auc.mean > 0.5, "link prediction no better than chance: {}", auc.mean);

    let inj = InjectionConfig {
        rho_a: 0.1,
        replicates: 2,
        seed: 5,
        fit: quick(),
        hyper: Hyperparams::new(2),
        threshold: Threshold::Absolute(0.5),
        auc_negatives: AucNegatives::Edges,
    };
    let x = run_injection(&net, &inj).unwrap();
    let y = run_injection(&net, &inj).unwrap();
    assert_eq!(x.to_json().unwrap(), y.to_json().unwrap());
    assert_eq!(x.metric("n_injected", None).unwrap().mean, 8.0);
}
