use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctdg_spectral::{exact_basis, gft, inter_perturb, intra_perturb, Band, Direction, NormalizedLaplacian, SpectralBasis, SpectrumEnd};

const N: usize = 40;

fn basis(rank: usize) -> SpectralBasis {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut edges: Vec<(usize, usize)> = (1..N).map(|i| (i - 1, i)).collect();
    for _ in 0..80 {
        edges.push((rng.random_range(0..N), rng.random_range(0..N)));
    }
    let lap = NormalizedLaplacian::from_edges(N, &edges, true).unwrap();
    exact_basis(&lap, rank, SpectrumEnd::Low).unwrap()
}

fn signal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, N)
}

fn band(rank: usize) -> impl Strategy<Value = Band> {
    prop::collection::vec(0..rank, 0..rank).prop_map(move |ix| Band::new(ix, rank).unwrap())
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rejected_band_has_no_support(y in signal(), s in band(N)) {
        let b = basis(N);
        let out = gft(&b, &intra_perturb(&b, &y, &s).unwrap(), Direction::Forward).unwrap();
        for &l in s.indices() {
            prop_assert!(out[l].abs() <= 1e-10, "index {l}: {}", out[l]);
        }
    }

    #[test]
    fn swapped_band_takes_first_spectrum(y1 in signal(), y2 in signal(), s in band(N)) {
        let b = basis(N);
        let out = gft(&b, &inter_perturb(&b, &y1, &y2, &s).unwrap(), Direction::Forward).unwrap();
        let f1 = gft(&b, &y1, Direction::Forward).unwrap();
        let f2 = gft(&b, &y2, Direction::Forward).unwrap();
        for l in 0..N {
            let want = if s.indices().contains(&l) { f1[l] } else { f2[l] };
            prop_assert!((out[l] - want).abs() <= 1e-10, "index {l}");
        }
    }

    #[test]
    fn perturbations_are_linear(a in signal(), c in signal(), d in signal(), k in -3.0f64..3.0, s in band(24)) {
        let b = basis(24);
        let mix: Vec<f64> = a.iter().zip(&c).map(|(x, y)| k * x + y).collect();
        let lhs = intra_perturb(&b, &mix, &s).unwrap();
        let (pa, pc) = (intra_perturb(&b, &a, &s).unwrap(), intra_perturb(&b, &c, &s).unwrap());
        let rhs: Vec<f64> = pa.iter().zip(&pc).map(|(x, y)| k * x + y).collect();
        prop_assert!(max_diff(&lhs, &rhs) <= 1e-10);
        // jointly linear in (y1, y2)
        let lhs = inter_perturb(&b, &mix, &mix, &s).unwrap();
        prop_assert!(max_diff(&lhs, &mix) <= 1e-10);
        let e1 = inter_perturb(&b, &a, &d, &s).unwrap();
        let e2 = inter_perturb(&b, &c, &a, &s).unwrap();
        let mix2: Vec<f64> = d.iter().zip(&a).map(|(x, y)| k * x + y).collect();
        let joint = inter_perturb(&b, &mix, &mix2, &s).unwrap();
        let sum: Vec<f64> = e1.iter().zip(&e2).map(|(x, y)| k * x + y).collect();
        prop_assert!(max_diff(&joint, &sum) <= 1e-10);
    }

    #[test]
    fn rejection_is_idempotent(y in signal(), s in band(24)) {
        let b = basis(24);
        let once = intra_perturb(&b, &y, &s).unwrap();
        let twice = intra_perturb(&b, &once, &s).unwrap();
        prop_assert!(max_diff(&once, &twice) <= 1e-10);
    }
}

#[test]
fn empty_band_is_identity_and_full_band_annihilates() {
    let b = basis(N);
    let y: Vec<f64> = (0..N).map(|i| (i as f64 * 0.37).cos()).collect();
    let empty = Band::default();
    assert_eq!(intra_perturb(&b, &y, &empty).unwrap(), y);
    let other: Vec<f64> = y.iter().map(|v| v * 2.0 + 1.0).collect();
    assert_eq!(inter_perturb(&b, &other, &y, &empty).unwrap(), y);
    let all = Band::range(0..N, N).unwrap();
    assert!(intra_perturb(&b, &y, &all).unwrap().iter().all(|v| v.abs() <= 1e-10));
}

#[test]
fn bands_parse_and_validate() {
    let b = basis(N);
    assert_eq!(Band::parse_range("3..7", N).unwrap().indices(), &[3, 4, 5, 6]);
    assert!(Band::parse_range("7..3", N).is_err());
    assert!(Band::parse_range("0..41", N).is_err());
    assert!(Band::parse_range("x", N).is_err());
    let hi = Band::above(&b, 1.0);
    assert!(hi.indices().iter().all(|&i| b.eigenvalues[i] > 1.0));
    assert_eq!(hi.indices().len(), b.eigenvalues.iter().filter(|&&l| l > 1.0).count());
    let small = basis(10);
    assert!(intra_perturb(&small, &vec![0.0; N], &Band::range(0..20, N).unwrap()).is_err());
}
