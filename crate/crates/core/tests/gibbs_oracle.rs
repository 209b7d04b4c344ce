//! Sampler estimates against quadrature on instances small enough for both.

use std::collections::BTreeMap;
use std::sync::Arc;

use loopgibbs::energy::{BoundaryData, EnergyContext};
use loopgibbs::gaussian::Mass;
use loopgibbs::gibbs::{expectations, CylinderFunction, GibbsTarget, McParams, ProposalScope};
use loopgibbs::lattice::{BoundaryMode, CouplingSpec, EvenPolynomial, LatticeBox, PotentialSpec};
use loopgibbs::loops::{equivalence_class_member, ExteriorLoops, ModeBasis, Parity, TemperatureLoop};
use loopgibbs::observables::{CoefficientSquare, TimeAverageFn};
use loopgibbs::oracle::{oracle_expectation, oracle_expectations, QuadratureOptions};
use proptest::prelude::*;

fn quartic_site(beta: f64, n_max: usize, boundary: BoundaryData, j0: f64) -> Arc<EnergyContext> {
    let coupling = if j0 == 0.0 {
        CouplingSpec::zero(BoundaryMode::Fixed)
    } else {
        CouplingSpec::nearest_neighbor(j0, BoundaryMode::Fixed).unwrap()
    };
    Arc::new(
        EnergyContext::new(
            LatticeBox::cube(1, 1).unwrap(),
            coupling,
            PotentialSpec::new(EvenPolynomial::new(0.5, vec![0.25])).unwrap(),
            ModeBasis::new(beta, n_max).unwrap(),
            None,
            boundary,
        )
        .unwrap(),
    )
}

fn compare(target: GibbsTarget, fs: &[&dyn CylinderFunction], scope: ProposalScope, seed: u64) {
    let oracle = oracle_expectations(&target, fs, &QuadratureOptions::default()).unwrap();
    let params = McParams { burn_in: 1_000, samples: 40_000, chains: 4, scope, ..McParams::default() };
    let run = expectations(&Arc::new(target), fs, &params, seed).unwrap();
    for ((f, est), exact) in fs.iter().zip(&run.estimates).zip(&oracle) {
        assert!(exact.self_check_passed(), "{}", f.name());
        assert!(
            est.agrees_with_value(exact.value, 3.0),
            "{}: {} ± {} vs {}",
            f.name(),
            est.estimate,
            est.stderr,
            exact.value
        );
    }
}

#[test]
fn quantum_quartic_site_matches_quadrature() {
    let ctx = quartic_site(1.0, 1, BoundaryData::Zero, 0.0);
    let target = GibbsTarget::loops(ctx, Mass::Finite(1.0)).unwrap();
    let square = TimeAverageFn::clipped_power(vec![0], 2, 10.0);
    let cos = CoefficientSquare { site: 0, mode: 1 };
    let sin = CoefficientSquare { site: 0, mode: 2 };
    compare(target, &[&square, &cos, &sin], ProposalScope::PerSite, 1);
}

#[test]
fn global_moves_match_quadrature_with_a_boundary() {
    let basis = ModeBasis::new(1.0, 1).unwrap();
    let zeta: ExteriorLoops = [vec![-1], vec![1]]
        .into_iter()
        .map(|s| (s, TemperatureLoop::constant(basis, 0.6)))
        .collect();
    let ctx = quartic_site(1.0, 1, BoundaryData::Loops(zeta), 0.3);
    let target = GibbsTarget::loops(ctx, Mass::Finite(0.5)).unwrap();
    let tanh = TimeAverageFn::tanh(vec![0]);
    let cos = CoefficientSquare { site: 0, mode: 1 };
    compare(target, &[&tanh, &cos], ProposalScope::Global, 2);
}

#[test]
fn classical_quartic_pair_matches_quadrature() {
    let lattice = LatticeBox::cube(1, 2).unwrap();
    let y: BTreeMap<Vec<i64>, f64> = [(vec![-1], 0.8), (vec![2], -0.2)].into();
    let ctx = Arc::new(
        EnergyContext::new(
            lattice,
            CouplingSpec::nearest_neighbor(0.4, BoundaryMode::Fixed).unwrap(),
            PotentialSpec::new(EvenPolynomial::double_well()).unwrap(),
            ModeBasis::new(2.0, 4).unwrap(),
            None,
            BoundaryData::Averages(y),
        )
        .unwrap(),
    );
    let target = GibbsTarget::classical(ctx).unwrap();
    let a = TimeAverageFn::clipped_power(vec![0], 2, 10.0);
    let b = TimeAverageFn::tanh(vec![1]);
    compare(target, &[&a, &b], ProposalScope::PerSite, 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Quasiclassical expectations of class-invariant observables ignore
    /// the oscillating part of the boundary loops.
    #[test]
    fn quasiclassical_kernel_is_constant_on_a_class(
        y in -1.0f64..1.0,
        amplitude in -5.0f64..5.0,
        harmonic in 1usize..4,
        sine in any::<bool>(),
    ) {
        let basis = ModeBasis::new(1.5, 3).unwrap();
        let sites = [vec![-1], vec![1]];
        let values: BTreeMap<Vec<i64>, f64> = sites.iter().map(|s| (s.clone(), y)).collect();
        let parity = if sine { Parity::Sin } else { Parity::Cos };
        let wave = TemperatureLoop::harmonic(basis, harmonic, parity, amplitude).unwrap();
        let perturbation: ExteriorLoops = sites.iter().map(|s| (s.clone(), wave.clone())).collect();
        let plain = equivalence_class_member(&values, &ExteriorLoops::new(), basis).unwrap();
        let waved = equivalence_class_member(&values, &perturbation, basis).unwrap();
        let f = TimeAverageFn::tanh(vec![0]);
        let options = QuadratureOptions { self_check: false, ..QuadratureOptions::default() };
        let value = |zeta| {
            let target = GibbsTarget::loops(quartic_site(1.5, 3, BoundaryData::Loops(zeta), 0.7), Mass::Infinite).unwrap();
            oracle_expectation(&target, &f, &options).unwrap().value
        };
        prop_assert!((value(plain) - value(waved)).abs() < 1e-12);
    }
}
