#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whofdm::paraunitary::{rect_paraunitary, ParaunitaryParams};
use whofdm::weyl_heisenberg::synthesize_orthonormal;
use whofdm::{grid_params, GridParams, Waveform};

pub const GRIDS: [(usize, usize); 6] = [(4, 6), (6, 9), (8, 12), (5, 8), (36, 40), (128, 160)];

pub fn grid(idx: usize) -> GridParams {
    let (n, k) = GRIDS[idx % GRIDS.len()];
    grid_params(n, k).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_orthonormal(g: &GridParams, degree: usize, seed: u64) -> Waveform {
    let mut r = rng(seed);
    let blocks: Vec<_> = (0..g.p)
        .map(|_| rect_paraunitary(&ParaunitaryParams::random(g.l, g.j, degree, &mut r)).unwrap())
        .collect();
    synthesize_orthonormal(&blocks, g).unwrap()
}

/// Adds `size` to one randomly chosen nonzero tap.
pub fn perturbed(v: &Waveform, size: f64, seed: u64) -> Waveform {
    let mut r = rng(seed);
    let mut taps = v.taps().to_vec();
    let nz: Vec<usize> = (0..taps.len()).filter(|&t| taps[t] != 0.0).collect();
    let t = nz[r.random_range(0..nz.len())];
    taps[t] += size;
    Waveform::new(taps, v.offset(), *v.grid()).unwrap()
}

pub fn random_waveform(g: &GridParams, len: usize, seed: u64) -> Waveform {
    let mut r = rng(seed);
    let mut taps: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
    taps[0] = 0.5;
    taps[len - 1] = -0.25;
    Waveform::new(taps, r.random_range(-20..20), *g).unwrap()
}
