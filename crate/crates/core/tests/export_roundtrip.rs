use scr_core::evolution::{evolution_grid, load_grid};
use scr_core::export::{export, import, import_runs, Format};
use scr_core::harness::{
    figure_sweep, monte_carlo, AggregateMetrics, CurvePoint, ExperimentConfig,
};
use scr_core::model::{DegreeDistribution, SystemConfig};
use scr_core::Error;

fn sample_runs() -> (Vec<scr_core::model::RunRecord>, Vec<AggregateMetrics>) {
    let system =
        SystemConfig::new(200, 0.2, 2, 10, DegreeDistribution::constant(10).unwrap()).unwrap();
    let mut e = ExperimentConfig::new(system, 0.7).unwrap();
    e.runs = 15;
    e.beta_grid = vec![8, 10];
    let s = monte_carlo(&e).unwrap();
    (s.records, s.per_beta)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

#[test]
fn runs_round_trip_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let (runs, _) = sample_runs();
    for (name, fmt) in [("r.csv", Format::Csv), ("r.jsonl", Format::JsonLines)] {
        let p = dir.path().join(name);
        export(&runs, &p, fmt).unwrap();
        let back = import_runs(&p, fmt).unwrap();
        assert_eq!(back.len(), runs.len());
        for (a, b) in runs.iter().zip(&back) {
            assert_eq!(
                (a.seed, a.k, a.m, a.n_a, a.n_r, a.n_e),
                (b.seed, b.k, b.m, b.n_a, b.n_r, b.n_e)
            );
            for (x, y) in [
                (a.beta, b.beta),
                (a.f_re, b.f_re),
                (a.f_ra, b.f_ra),
                (a.t, b.t),
                (a.delta_ne, b.delta_ne),
                (a.abs_delta_ne, b.abs_delta_ne),
            ] {
                assert!(close(x, y), "{x} vs {y}");
            }
        }
    }
}

#[test]
fn aggregates_and_curves_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (_, agg) = sample_runs();
    let p = dir.path().join("agg.csv");
    export(&agg, &p, Format::Csv).unwrap();
    let back: Vec<AggregateMetrics> = import(&p, Format::Csv).unwrap();
    assert_eq!(back.len(), agg.len());
    for (a, b) in agg.iter().zip(&back) {
        assert!(close(a.t_mean, b.t_mean) && close(a.t_se, b.t_se) && close(a.m_mean, b.m_mean));
        assert_eq!(a.runs_used, b.runs_used);
    }

    let loads = load_grid(0.05, 0.3);
    let (curves, _) = figure_sweep(0.2, &[1, 2, 4], &loads, 30).unwrap();
    assert_eq!(curves.len(), 3 * loads.len());
    let p = dir.path().join("curves.csv");
    export(&curves, &p, Format::Csv).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("K,M_over_N,beta_star,p_R_star,T_star,p_U")
    );
    let back: Vec<CurvePoint> = import(&p, Format::Csv).unwrap();
    for (a, b) in curves.iter().zip(&back) {
        assert_eq!((a.k, a.beta_star), (b.k, b.beta_star));
        assert!(
            close(a.m_over_n, b.m_over_n)
                && close(a.p_r_star, b.p_r_star)
                && close(a.t_star, b.t_star)
        );
    }
}

#[test]
fn identical_inputs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let rows = evolution_grid(0.2, &[2], &load_grid(0.02, 0.2), 1..=25).unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    export(&rows, &a, Format::Csv).unwrap();
    export(&rows, &b, Format::Csv).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let (r1, _) = sample_runs();
    let (r2, _) = sample_runs();
    export(&r1, &a, Format::JsonLines).unwrap();
    export(&r2, &b, Format::JsonLines).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn missing_input_reports_path() {
    let err = import::<CurvePoint>("/no/such/curves.csv", Format::Csv).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/no/such/curves.csv"));
}
