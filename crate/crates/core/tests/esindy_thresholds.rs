use hypersindy_core::dynamics::{make_dataset, Split};
use hypersindy_core::evaluation::{esindy_threshold, ground_truth, stlsq, tune_threshold};
use hypersindy_core::{Library, LibrarySpec, SystemKind, SystemSpec};

const GRID: [f64; 9] = [0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];

fn retune(kind: SystemKind, expected_terms: usize) {
    let spec = SystemSpec::from_kind(kind, 0.0);
    let lib = LibrarySpec::for_system(kind, spec.state_dim).unwrap();
    let data = make_dataset(&spec, Split::Train, 0).unwrap();
    let truth = ground_truth(&spec, &lib).unwrap();
    let picked = tune_threshold(&data, &lib, &truth.mean, &GRID, 0.0, 10).unwrap();
    assert_eq!(picked, esindy_threshold(kind), "{kind}");

    let theta = Library::new(lib).unwrap().evaluate(&data.states).unwrap();
    let fit = stlsq(&theta, data.derivatives.as_ref().unwrap(), picked, 0.0, 10).unwrap();
    let support: Vec<usize> = (0..fit.data().len()).filter(|&k| fit.data()[k] != 0.0).collect();
    assert_eq!(support.len(), expected_terms, "{kind}");
    assert_eq!(support, truth.support(), "{kind}");
}

#[test]
fn lorenz_threshold_is_reproducible() {
    retune(SystemKind::Lorenz, 7);
}

#[test]
fn rossler_threshold_is_reproducible() {
    retune(SystemKind::Rossler, 7);
}

#[test]
fn lotka_volterra_threshold_is_reproducible() {
    retune(SystemKind::LotkaVolterra, 4);
}

#[test]
fn lorenz96_threshold_is_reproducible() {
    retune(SystemKind::Lorenz96, 40);
}
