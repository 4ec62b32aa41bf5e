mod common;

use common::{grid, perturbed, random_orthonormal, rng};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use whofdm::paraunitary::{biorthogonal_partner, BiorthParams};
use whofdm::transmux::{crossambiguity, demultiplex, fft_multiplex, multiplex, SymbolFrames};
use whofdm::weyl_heisenberg::cross_orthonormality_defect;
use whofdm::{GridParams, LaurentPoly, PolyMatrix, Waveform};

fn random_frames(n: usize, frames: usize, seed: u64) -> SymbolFrames {
    let mut r = rng(seed);
    let data = (0..n * frames)
        .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    SymbolFrames::new(n, data).unwrap()
}

fn random_a(g: &GridParams, seed: u64) -> BiorthParams {
    let mut r = rng(seed);
    let blocks = (0..g.p)
        .map(|_| {
            let entries = (0..(g.l - g.j) * g.j)
                .map(|_| {
                    let coeffs: Vec<f64> = (0..r.random_range(0..3)).map(|_| r.random_range(-0.5..0.5)).collect();
                    LaurentPoly::new(coeffs, r.random_range(-1..=1))
                })
                .collect();
            PolyMatrix::from_entries(g.l - g.j, g.j, entries).unwrap()
        })
        .collect();
    BiorthParams::new(g, blocks).unwrap()
}

/// Largest `|A(qK, p) - delta|` over the lattice points where `A` can be nonzero.
fn lattice_defect(v: &Waveform, w: &Waveform) -> f64 {
    let g = v.grid();
    let k = g.k as i64;
    let qmax = (v.len() + w.len()) as i64 / k + 1;
    let mut worst: f64 = 0.0;
    for q in -qmax..=qmax {
        for p in 0..g.n {
            let a = crossambiguity(v, w, q * k, p as f64);
            let target = if q == 0 && p == 0 { 1.0 } else { 0.0 };
            worst = worst.max((a - target).norm());
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn multiplexing_is_linear(gi in 0usize..5, frames in 1usize..6, seed: u64) {
        let g = grid(gi);
        let v = random_orthonormal(&g, 1, seed);
        let a = random_frames(g.n, frames, seed ^ 1);
        let b = random_frames(g.n, frames, seed ^ 2);
        let sum = SymbolFrames::new(g.n, a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap();
        let (sa, sb, ss) = (multiplex(&a, &v).unwrap(), multiplex(&b, &v).unwrap(), multiplex(&sum, &v).unwrap());
        prop_assert_eq!(sa.start, ss.start);
        for (t, s) in ss.samples.iter().enumerate() {
            prop_assert!((s - sa.samples[t] - sb.samples[t]).norm() < 1e-12);
        }
    }

    #[test]
    fn fast_and_direct_multiplexers_agree(gi in 0usize..6, degree in 0usize..3, frames in 1usize..5, seed: u64) {
        let g = grid(gi);
        let v = random_orthonormal(&g, degree, seed);
        let a = random_frames(g.n, frames, seed ^ 3);
        let direct = multiplex(&a, &v).unwrap();
        let fast = fft_multiplex(&a, &v).unwrap();
        prop_assert!(direct.max_abs_diff(&fast) < 1e-10);
    }

    #[test]
    fn biorthogonal_pairs_reconstruct(gi in 0usize..5, degree in 0usize..2, frames in 1usize..5, seed: u64) {
        let g = grid(gi);
        let v = random_orthonormal(&g, degree, seed);
        let w = if g.l > g.j { biorthogonal_partner(&v, &random_a(&g, seed ^ 4)).unwrap() } else { v.clone() };
        let a = random_frames(g.n, frames, seed ^ 5);
        let s = fft_multiplex(&a, &v).unwrap();
        let back = demultiplex(&s, &w, frames);
        prop_assert!(back.max_abs_diff(&a) < 1e-10);
    }

    #[test]
    fn lattice_zeros_iff_biorthogonal(gi in 0usize..4, degree in 0usize..2, seed: u64, size in 0.01f64..0.2) {
        let g = grid(gi);
        let v = random_orthonormal(&g, degree, seed);
        let w = if g.l > g.j { biorthogonal_partner(&v, &random_a(&g, seed ^ 6)).unwrap() } else { v.clone() };
        prop_assert!(cross_orthonormality_defect(&v, &w) < 1e-10);
        prop_assert!(lattice_defect(&v, &w) < 1e-10);

        let bent = perturbed(&w, size, seed ^ 8);
        let direct = cross_orthonormality_defect(&v, &bent);
        let lattice = lattice_defect(&v, &bent);
        prop_assert!(direct > 1e-6 && lattice > 1e-6);
    }
}
