use icc_core::data::{generate_synthetic, SyntheticSpec};
use icc_core::experiment::{run_cluster, ClusterSettings};
use icc_core::icc::{
    cost_matrix, fit_icc, fit_icc_from_labels, penalized_log_likelihood, random_labels, viterbi_assign, IccConfig, Segmentation,
};
use icc_core::report::{emit_report, read_segmentation_csv, read_summary, Experiment};
use proptest::prelude::*;

#[test]
fn cluster_report_round_trips_through_disk() {
    let (panel, _) = generate_synthetic(&SyntheticSpec::two_regime(12, 800, 60.0, 5)).unwrap();
    let outcome = run_cluster(&panel, &ClusterSettings { gamma: 8.0, ..ClusterSettings::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = emit_report(&[Experiment::Cluster(&outcome)], dir.path()).unwrap();
    let summary = read_summary(&path).unwrap();
    assert_eq!(summary.clusters.len(), 1);
    let file = std::fs::File::open(dir.path().join(&summary.clusters[0].segmentation_file)).unwrap();
    let (dates, labels) = read_segmentation_csv(file).unwrap();
    assert_eq!(dates, outcome.dates);
    assert_eq!(labels, outcome.labels);
}

#[test]
fn restarts_keep_the_best_scoring_fit() {
    let (panel, _) = generate_synthetic(&SyntheticSpec::two_regime(20, 1500, 100.0, 7)).unwrap();
    let cfg = IccConfig { sparse: false, gamma: 16.0, seed: 7, ..IccConfig::default() };
    let chosen = fit_icc(&panel, &cfg).unwrap();
    let mut seen = 0;
    for r in 0..cfg.restarts {
        let Ok(f) = fit_icc_from_labels(&panel, &cfg, random_labels(1500, 2, 7, r)) else { continue };
        seen += 1;
        if f.segmentation.cluster_sizes(2).iter().all(|&s| s > 20) {
            let score = penalized_log_likelihood(&panel, &f.states, &f.segmentation, 16.0).unwrap();
            assert!(chosen.score >= score, "restart {r} scored {score} above the chosen {}", chosen.score);
        }
    }
    assert!(seen > 0);
    assert_eq!(chosen.segmentation, fit_icc_from_labels(&panel, &cfg, random_labels(1500, 2, 7, chosen.restart)).unwrap().segmentation);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // No relabelling of the optimum can be cheaper.
    #[test]
    fn viterbi_beats_single_flips(seed in 0u64..1000, gamma in 0.0f64..5.0) {
        let (panel, truth) = generate_synthetic(&SyntheticSpec::two_regime(8, 120, 10.0, seed)).unwrap();
        let outcome = run_cluster(&panel, &ClusterSettings { gamma, max_iters: 5, restarts: 1, ..ClusterSettings::default() });
        prop_assume!(outcome.is_ok());
        let states = outcome.unwrap().states;
        let costs = cost_matrix(&panel.returns, &states).unwrap();
        let best = viterbi_assign(&costs, gamma).unwrap();
        prop_assert!(best.total_cost <= Segmentation::from_labels(truth, &costs, gamma).total_cost + 1e-9);
        for t in 0..best.labels.len() {
            let mut flipped = best.labels.clone();
            flipped[t] = 1 - flipped[t];
            prop_assert!(best.total_cost <= Segmentation::from_labels(flipped, &costs, gamma).total_cost + 1e-9);
        }
    }
}
