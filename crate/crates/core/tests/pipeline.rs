use levylab_core::diagnostics::mean_se;
use levylab_core::environment::{quenched_summary, WindowPolicy};
use levylab_core::io::{read_paths, write_paths};
use levylab_core::{
    euler_chain_simulate, explosion_stats, floor_embed, rwre_simulate, CompensationFunction, EnvironmentSpec, GridSpec,
    IncrementPlan, RwreConfig, SimConfig, Start, State, TripletConfig,
};

#[test]
fn killing_rate_from_config_survives_csv_round_trip() {
    let cfg = TripletConfig::from_json(r#"{"drift": [0], "nu": {"kind": "atoms", "atoms": [{"jump": null, "mass": 1}]}}"#).unwrap();
    let field = cfg.to_field().unwrap();
    let sim = SimConfig::new(1.0, 4000, 17).with_grid(GridSpec::Uniform(11));
    let paths = euler_chain_simulate(
        &field,
        &CompensationFunction::Chi1,
        &Start::Point(vec![0.0]),
        0.01,
        &IncrementPlan::default(),
        &sim,
    )
    .unwrap();
    let hits: Vec<f64> = paths.iter().map(|p| if p.exploded() { 1.0 } else { 0.0 }).collect();
    let (frac, se) = mean_se(&hits);
    let exact = 1.0 - (-1.0f64).exp();
    assert!((frac - exact).abs() < 4.0 * se, "{frac} vs {exact}");

    let mut buf = Vec::new();
    write_paths(&mut buf, &paths).unwrap();
    let back = read_paths(&buf[..]).unwrap();
    let before = explosion_stats(&paths).unwrap();
    let after = explosion_stats(&back).unwrap();
    assert_eq!(before.fraction_by_time, after.fraction_by_time);
    assert!(after.absorption_ok);
}

#[test]
fn rwre_pooled_variance_dominates_quenched_average() {
    let spec = EnvironmentSpec::BernoulliPoisson { q: 1.5, lambda: 2.0 };
    let cfg = RwreConfig {
        eps: 0.1,
        horizon: 1.0,
        environments: 6,
        paths_per_env: 400,
        seed: 5,
        grid: GridSpec::Uniform(5),
        window: WindowPolicy::default(),
    };
    let runs = rwre_simulate(&spec, &Start::Point(vec![0.0]), &cfg).unwrap();
    assert_eq!(runs.len(), 6);
    let again = rwre_simulate(&spec, &Start::Point(vec![0.0]), &cfg).unwrap();
    assert!(runs.iter().zip(&again).all(|(a, b)| a.q == b.q && a.paths == b.paths));
    let s = quenched_summary(&runs, 1.0).unwrap();
    assert_eq!(s.per_env.len(), 6);
    assert!(s.annealed_variance >= 0.99 * s.mean_quenched_variance, "{s:?}");
}

#[test]
fn floor_embedding_reads_chain_on_step_grid() {
    let chain: Vec<State> = (0..=10).map(|k| State::Point(vec![k as f64])).collect();
    let p = floor_embed(&chain, 0.1, &[0.0, 0.05, 0.1, 0.55, 1.0]).unwrap();
    let xs: Vec<f64> = (0..5).map(|i| p.state(i).as_point().unwrap()[0]).collect();
    assert_eq!(xs, vec![0.0, 0.0, 1.0, 5.0, 10.0]);
}
