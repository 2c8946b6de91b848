use phasekit::model::builtin::ModelRegistry;
use phasekit::orbit::{find_periodic_orbit, OrbitOptions, HYPERBOLIC_MARGIN};

#[test]
fn every_registered_model_has_a_hyperbolic_orbit() {
    let registry = ModelRegistry::builtin();
    assert!(registry.names().len() >= 6);
    for m in registry.iter() {
        let o = find_periodic_orbit(&m, m.default_parameters(), m.seed(), &OrbitOptions::default())
            .unwrap_or_else(|e| panic!("{}: {e}", m.name()));
        assert!(o.hyperbolic, "{}", m.name());
        for mu in &o.multipliers {
            assert!(mu.norm() <= 1.0 - HYPERBOLIC_MARGIN, "{}: {mu}", m.name());
        }
        assert!((o.trivial_multiplier.re - 1.0).abs() < 1e-6, "{}", m.name());
        assert!(o.periodicity_residual < 1e-8, "{}", m.name());
    }
}

#[test]
fn names_are_unique() {
    let registry = ModelRegistry::builtin();
    let mut names = registry.names();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), registry.names().len());
}
