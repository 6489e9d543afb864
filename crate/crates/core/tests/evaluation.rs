use icon_core::dataset::{generate_family, Dataset, ParamBounds, ProblemFamily};
use icon_core::evaluator::{
    check_disjoint, eval_in_distribution, eval_new_equation, eval_ood, eval_resolution, plan_in_distribution,
    relative_error, write_report, IndConfig, NewOdeConfig, NewOdeMode, OodConfig, ResolutionConfig,
};
use icon_core::model::ModelConfig;
use icon_core::stochastic::SeedTree;
use icon_core::IconModel32;
use proptest::prelude::*;

fn tiny_model() -> IconModel32 {
    let config =
        ModelConfig { d_model: 8, n_heads: 1, n_enc_layers: 1, n_dec_layers: 1, d_ff: 16, ..ModelConfig::default() };
    IconModel32::init(config, &mut SeedTree::new(0).rng()).unwrap()
}

fn dataset(families: &[u8], m: usize, n: usize, seed: u64) -> Dataset {
    let mut ds = Dataset::default();
    for &f in families {
        ds.insert(generate_family(ProblemFamily::new(f).unwrap(), m, n, seed, &ParamBounds::new()).unwrap());
    }
    ds
}

fn newode(mode: NewOdeMode, b_values: Vec<f64>) -> NewOdeConfig {
    NewOdeConfig { b_values, mode, operators: 20, cases_per_operator: 2, ..NewOdeConfig::default() }
}

#[test]
fn wrong_operator_baseline_is_exact_at_zero_b() {
    let report = eval_new_equation(&tiny_model(), &newode(NewOdeMode::WrongOperator, vec![0.0])).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert!(report.rows[0].stats.rel_err <= 1e-6, "{}", report.rows[0].stats.rel_err);
}

#[test]
fn wrong_operator_error_grows_with_b() {
    let report =
        eval_new_equation(&tiny_model(), &newode(NewOdeMode::WrongOperator, vec![-0.3, -0.1, 0.0, 0.1, 0.3])).unwrap();
    let err: Vec<f64> = report.rows.iter().map(|r| r.stats.rel_err).collect();
    assert!(err[0] > err[1] && err[1] > err[2]);
    assert!(err[4] > err[3] && err[3] > err[2]);
    assert!(err[0] > 1e-3 && err[4] > 1e-3);
}

#[test]
fn new_equation_sweep_has_one_row_per_b() {
    let cfg = NewOdeConfig { operators: 3, cases_per_operator: 1, ..NewOdeConfig::default() };
    assert_eq!(cfg.b_values.len(), 7);
    for mode in [NewOdeMode::CorrectDemos, NewOdeMode::WrongDemos] {
        let report = eval_new_equation(&tiny_model(), &NewOdeConfig { mode, ..cfg.clone() }).unwrap();
        assert_eq!(report.rows.len(), 7);
        assert!(report.rows.iter().all(|r| r.mode == Some(mode) && r.stats.cases == 3));
    }
}

#[test]
fn in_distribution_uses_500_disjoint_cases_per_demo_count() {
    let ds = dataset(&[1, 2], 100, 30, 4);
    let cfg = IndConfig { families: vec![1, 2], ..IndConfig::default() };
    for &f in &cfg.families {
        let data = ds.family(ProblemFamily::new(f).unwrap()).unwrap();
        for &j in &cfg.demos {
            let (cases, reduced) = plan_in_distribution(data, j, &cfg);
            assert_eq!(cases.len(), 500);
            assert!(!reduced);
            check_disjoint(&cases).unwrap();
            for c in &cases {
                c.validate(100, 30).unwrap();
                assert_eq!(c.demos.len(), j);
                assert!(!c.demos.contains(&c.question));
            }
        }
    }
    let report = eval_in_distribution(&tiny_model(), &ds, &cfg).unwrap();
    assert_eq!(report.rows.len(), 10);
    assert!(report.rows.iter().all(|r| r.stats.cases == 500 && !r.reduced));
    assert_eq!(report.trends.len(), 2);
}

#[test]
fn short_data_reduces_the_case_count() {
    let ds = dataset(&[1], 10, 8, 4);
    let cfg = IndConfig { families: vec![1], demos: vec![5], ..IndConfig::default() };
    let (cases, reduced) = plan_in_distribution(ds.family(ProblemFamily::new(1).unwrap()).unwrap(), 5, &cfg);
    assert!(reduced);
    assert_eq!(cases.len(), 10);
}

#[test]
fn reports_are_reproducible_files() {
    let ds = dataset(&[2], 6, 12, 1);
    let cfg =
        IndConfig { families: vec![2], demos: vec![1, 3], operators: 6, cases_per_operator: 2, ..IndConfig::default() };
    let model = tiny_model();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = write_report(&eval_in_distribution(&model, &ds, &cfg).unwrap(), &cfg, a.path(), true).unwrap();
    let pb = write_report(&eval_in_distribution(&model, &ds, &cfg).unwrap(), &cfg, b.path(), true).unwrap();
    assert_eq!(pa.len(), 3);
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let csv = std::fs::read_to_string(&pa[0]).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn resolution_sweep_covers_every_count() {
    let ds = dataset(&[17], 2, 4, 2);
    let cfg = ResolutionConfig {
        counts: vec![10, 200],
        demos: vec![1, 2],
        operators: 2,
        cases_per_operator: 1,
        ..ResolutionConfig::default()
    };
    let report = eval_resolution(&tiny_model(), &ds, &cfg).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert!(report.rows.iter().all(|r| r.resolution.is_some()));
    let too_many = ResolutionConfig { counts: vec![5000], ..cfg };
    assert!(eval_resolution(&tiny_model(), &ds, &too_many).is_err());
}

#[test]
fn ood_grid_has_one_row_per_cell() {
    let cfg = OodConfig { grid: [2, 3], operators_per_cell: 2, cases_per_operator: 1, ..OodConfig::default() };
    let report = eval_ood(&tiny_model(), &cfg).unwrap();
    assert_eq!(report.rows.len(), 6);
    let bounds: Vec<[f64; 4]> = report.rows.iter().map(|r| r.cell_bounds.unwrap()).collect();
    assert!(bounds.iter().all(|b| b[0] < b[1] && b[2] < b[3]));
}

proptest! {
    #[test]
    fn relative_error_is_scale_invariant(
        truth in prop::collection::vec(0.1f64..10.0, 1..20),
        noise in prop::collection::vec(-1.0f64..1.0, 20),
        scale in 0.01f64..100.0,
    ) {
        let pred: Vec<f64> = truth.iter().zip(&noise).map(|(t, e)| t + e).collect();
        let (abs, rel) = relative_error(&[(pred.clone(), truth.clone())]).unwrap();
        let scaled = |v: &[f64]| v.iter().map(|x| x * scale).collect::<Vec<_>>();
        let (abs_s, rel_s) = relative_error(&[(scaled(&pred), scaled(&truth))]).unwrap();
        prop_assert!((rel - rel_s).abs() <= 1e-12 * rel.max(1.0));
        prop_assert!((abs * scale - abs_s).abs() <= 1e-12 * abs_s.max(1.0));
        prop_assert!(rel >= 0.0);
    }

    #[test]
    fn exact_predictions_have_zero_error(truth in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        prop_assume!(truth.iter().any(|t| *t != 0.0));
        let (abs, rel) = relative_error(&[(truth.clone(), truth.clone())]).unwrap();
        prop_assert_eq!((abs, rel), (0.0, 0.0));
    }
}
