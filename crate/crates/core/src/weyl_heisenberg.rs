//! Polyphase structure of Weyl-Heisenberg sets.
//!
//! A prototype `v[n]` generates the set `v[n - iK] exp(j 2 pi k (n - iK) / N)`.
//! The set is orthonormal exactly when each of the `P` polyphase blocks
//! `V_r^o(z)` (size `L x J`) is paraunitary with scale `1/N`. This module
//! moves between waveforms and those blocks, and checks orthonormality
//! directly on the taps and through the dual tight frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{index_maps, GridParams};
use crate::laurent::{LaurentPoly, PolyMatrix};
use crate::waveform::Waveform;

/// `M`-component polyphase decomposition: component `j` holds `v[j + nM]` at `z^-n`.
pub fn polyphase_decompose(v: &Waveform) -> Vec<LaurentPoly> {
    let m = v.grid().m as i64;
    let mut parts: Vec<Vec<(i64, f64)>> = vec![Vec::new(); m as usize];
    for (t, &c) in v.taps().iter().enumerate() {
        let a = v.offset() + t as i64;
        parts[a.rem_euclid(m) as usize].push((a.div_euclid(m), c));
    }
    parts
        .into_iter()
        .map(|terms| {
            let Some(lo) = terms.first().map(|&(d, _)| d) else {
                return LaurentPoly::zero();
            };
            let hi = terms.last().unwrap().0;
            let mut coeffs = vec![0.0; (hi - lo + 1) as usize];
            for (d, c) in terms {
                coeffs[(d - lo) as usize] = c;
            }
            LaurentPoly::new(coeffs, lo)
        })
        .collect()
}

/// Interleaves `M` polyphase components back into a waveform.
pub fn polyphase_interleave(components: &[LaurentPoly], grid: &GridParams) -> Result<Waveform> {
    if components.len() != grid.m {
        return Err(Error::Shape(format!(
            "{} polyphase components for M={}",
            components.len(),
            grid.m
        )));
    }
    let m = grid.m as i64;
    let mut samples: Vec<(i64, f64)> = Vec::new();
    for (j, comp) in components.iter().enumerate() {
        for (d, c) in comp.terms() {
            samples.push((j as i64 + d * m, c));
        }
    }
    samples_to_waveform(samples, 0, grid)
}

fn samples_to_waveform(samples: Vec<(i64, f64)>, shift: i64, grid: &GridParams) -> Result<Waveform> {
    let nonzero = samples.iter().filter(|s| s.1 != 0.0);
    let (Some(lo), Some(hi)) = (
        nonzero.clone().map(|s| s.0).min(),
        nonzero.map(|s| s.0).max(),
    ) else {
        return Err(Error::InvalidArgument("all polyphase components vanish".into()));
    };
    let mut taps = vec![0.0; (hi - lo + 1) as usize];
    for (a, c) in samples {
        if a >= lo && a <= hi {
            taps[(a - lo) as usize] += c;
        }
    }
    Waveform::new(taps, lo + shift, *grid)
}

/// The `K x N` matrix `V(z)` with `M(z) = V(z) F_N`.
pub fn build_v(v: &Waveform) -> PolyMatrix {
    let g = *v.grid();
    let comps = polyphase_decompose(v);
    let mut out = PolyMatrix::zeros(g.k, g.n);
    for r in 0..g.p {
        for i in 0..g.l {
            for j in 0..g.j {
                let (p, _) = index_maps(&g, i, j);
                let poly = comps[p * g.k + i * g.p + r]
                    .upsampled(g.j)
                    .delayed(p as i64);
                out.set(i * g.p + r, j * g.p + r, poly);
            }
        }
    }
    out
}

/// The `P` blocks `V_r^o(z)`, each `L x J`, with entry `(i, j)` equal to
/// `z^{n(i,j)} V_{p(i,j)K + iP + r}(z)`.
pub fn extract_blocks(v: &Waveform) -> Vec<PolyMatrix> {
    let g = *v.grid();
    let comps = polyphase_decompose(v);
    (0..g.p)
        .map(|r| {
            let mut b = PolyMatrix::zeros(g.l, g.j);
            for i in 0..g.l {
                for j in 0..g.j {
                    let (p, n) = index_maps(&g, i, j);
                    b.set(i, j, comps[p * g.k + i * g.p + r].delayed(-(n as i64)));
                }
            }
            b
        })
        .collect()
}

/// Inverse of [`extract_blocks`].
///
/// The result is delayed by a multiple of `M` (the only delays that act on
/// every block alike) so that its first nonzero tap lies in `[0, M)`.
pub fn synthesize_from_blocks(blocks: &[PolyMatrix], grid: &GridParams) -> Result<Waveform> {
    interleave_blocks(blocks, grid, true)
}

/// Inverse of [`extract_blocks`] with no normalizing delay, so that the result
/// keeps its alignment relative to the waveform the blocks were taken from.
pub fn interleave_blocks_exact(blocks: &[PolyMatrix], grid: &GridParams) -> Result<Waveform> {
    interleave_blocks(blocks, grid, false)
}

fn interleave_blocks(blocks: &[PolyMatrix], grid: &GridParams, normalize: bool) -> Result<Waveform> {
    if blocks.len() != grid.p {
        return Err(Error::Shape(format!(
            "{} blocks for P={}",
            blocks.len(),
            grid.p
        )));
    }
    let m = grid.m as i64;
    let mut samples = Vec::with_capacity(grid.m);
    for (r, block) in blocks.iter().enumerate() {
        if block.shape() != (grid.l, grid.j) {
            return Err(Error::Shape(format!(
                "block {r} is {}x{}, expected {}x{}",
                block.rows(),
                block.cols(),
                grid.l,
                grid.j
            )));
        }
        for i in 0..grid.l {
            for j in 0..grid.j {
                let (p, n) = index_maps(grid, i, j);
                let base = (p * grid.k + i * grid.p + r) as i64;
                for (d, c) in block.get(i, j).terms() {
                    samples.push((base + (d + n as i64) * m, c));
                }
            }
        }
    }
    let first = samples
        .iter()
        .filter(|s| s.1 != 0.0)
        .map(|s| s.0)
        .min()
        .ok_or_else(|| Error::InvalidArgument("all blocks vanish".into()))?;
    let shift = if normalize { -first.div_euclid(m) * m } else { 0 };
    samples_to_waveform(samples, shift, grid)
}

/// Synthesizes an orthonormal prototype from unit-scale paraunitary blocks by
/// applying the `1/sqrt(N)` amplitude before interleaving.
pub fn synthesize_orthonormal(unit_blocks: &[PolyMatrix], grid: &GridParams) -> Result<Waveform> {
    let s = 1.0 / (grid.n as f64).sqrt();
    let scaled: Vec<PolyMatrix> = unit_blocks.iter().map(|b| b.scaled(s)).collect();
    synthesize_from_blocks(&scaled, grid)
}

/// Max deviation of `sum_i v[n + iN] v[n + iN + jK]` from `delta[j] / N` over
/// `n` in `[0, N)` and every `j` with overlapping support.
pub fn orthonormality_defect(v: &Waveform) -> f64 {
    cross_orthonormality_defect(v, v)
}

/// Same sums with one factor taken from `w`: zero exactly when the modulated
/// translates of `w` are biorthogonal to those of `v`.
pub fn cross_orthonormality_defect(v: &Waveform, w: &Waveform) -> f64 {
    let g = v.grid();
    let (n, k) = (g.n as i64, g.k as i64);
    let target = 1.0 / n as f64;
    let mut defect: f64 = 0.0;
    for n0 in 0..n {
        // i such that n0 + iN lies in the support of w
        let i_lo = (w.offset() - n0).div_euclid(n) - 1;
        let i_hi = (w.end() - 1 - n0).div_euclid(n) + 1;
        let j_lo = (v.offset() - (n0 + i_hi * n)).div_euclid(k) - 1;
        let j_hi = (v.end() - 1 - (n0 + i_lo * n)).div_euclid(k) + 1;
        for j in j_lo..=j_hi {
            let s: f64 = (i_lo..=i_hi)
                .map(|i| {
                    let a = n0 + i * n;
                    w.at(a) * v.at(a + j * k)
                })
                .sum();
            let t = if j == 0 { target } else { 0.0 };
            defect = defect.max((s - t).abs());
        }
    }
    defect
}

/// Orthonormal prototype supported on one frame interval (`K <= 2N`), built
/// from `K - N` angles.
pub fn short_window(grid: &GridParams, angles: &[f64]) -> Result<Waveform> {
    let (n, k) = (grid.n, grid.k);
    if k > 2 * n {
        return Err(Error::InvalidArgument(format!(
            "single-frame windows need K <= 2N (N={n}, K={k})"
        )));
    }
    if angles.len() != k - n {
        return Err(Error::Shape(format!(
            "{} angles for K-N={}",
            angles.len(),
            k - n
        )));
    }
    let s = 1.0 / (n as f64).sqrt();
    let taps = (0..k)
        .map(|t| {
            s * if t < k - n {
                angles[t].cos()
            } else if t < n {
                1.0
            } else {
                angles[t - n].sin()
            }
        })
        .collect();
    Waveform::new(taps, 0, *grid)
}

/// Applies the frame operator of the dual set
/// `v[n - iN] exp(j 2 pi q (n - iN) / K)`, `q` in `Z_K`, to a real signal `x`
/// starting at `x_offset`. Returns the first output index and the samples.
pub fn dual_frame_operator(v: &Waveform, x: &[f64], x_offset: i64) -> (i64, Vec<f64>) {
    let g = v.grid();
    let (n, k) = (g.n as i64, g.k as i64);
    let x_end = x_offset + x.len() as i64;
    // i with [offset + iN, end + iN) meeting [x_offset, x_end)
    let i_lo = (x_offset - (v.end() - 1)).div_euclid(n);
    let i_hi = (x_end - 1 - v.offset()).div_euclid(n) + 1;
    let out_start = v.offset() + i_lo * n;
    let out_end = v.end() + i_hi * n;
    let mut out = vec![0.0; (out_end - out_start) as usize];
    let mut g_res = vec![0.0; k as usize];
    for i in i_lo..=i_hi {
        let lo = (v.offset() + i * n).max(x_offset);
        let hi = (v.end() + i * n).min(x_end);
        if lo >= hi {
            continue;
        }
        g_res.iter_mut().for_each(|c| *c = 0.0);
        for m in lo..hi {
            g_res[m.rem_euclid(k) as usize] += v.at(m - i * n) * x[(m - x_offset) as usize];
        }
        for (t, &tap) in v.taps().iter().enumerate() {
            let idx = v.offset() + t as i64 + i * n;
            out[(idx - out_start) as usize] += k as f64 * tap * g_res[idx.rem_euclid(k) as usize];
        }
    }
    (out_start, out)
}

/// Result of probing the dual frame operator with random signals.
#[derive(Clone, Copy, Debug)]
pub struct FrameProbe {
    /// Max over trials and samples of `|(Sx)[n] - c x[n]|`.
    pub defect: f64,
    /// Frame bound `c` estimated from the first trial.
    pub bound: f64,
}

pub fn tight_frame_probe(v: &Waveform, trials: usize, rng_seed: u64) -> FrameProbe {
    assert!(trials >= 2, "at least two probe signals are needed");
    let g = v.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let len = 2 * (v.len() + g.m);
    let mut bound = 0.0;
    let mut defect: f64 = 0.0;
    for trial in 0..trials {
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (start, sx) = dual_frame_operator(v, &x, 0);
        let xs = |n: i64| if n >= 0 && (n as usize) < len { x[n as usize] } else { 0.0 };
        if trial == 0 {
            let num: f64 = sx.iter().enumerate().map(|(t, s)| s * xs(start + t as i64)).sum();
            let den: f64 = x.iter().map(|a| a * a).sum();
            bound = num / den;
        }
        for (t, s) in sx.iter().enumerate() {
            defect = defect.max((s - bound * xs(start + t as i64)).abs());
        }
        // samples of x not covered by the operator output
        for n in 0..len as i64 {
            if n < start || n >= start + sx.len() as i64 {
                defect = defect.max((bound * xs(n)).abs());
            }
        }
    }
    FrameProbe { defect, bound }
}

/// Near zero exactly when the dual set is a tight frame.
pub fn tight_frame_defect(v: &Waveform, trials: usize, rng_seed: u64) -> f64 {
    tight_frame_probe(v, trials, rng_seed).defect
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::grid_params;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn g46() -> GridParams {
        grid_params(4, 6).unwrap()
    }

    #[test]
    fn polyphase_examples() {
        let g = g46();
        let imp = Waveform::new(vec![1.0], 0, g).unwrap();
        let c = polyphase_decompose(&imp);
        assert_eq!(c[0], LaurentPoly::one());
        assert!(c[1..].iter().all(|p| p.is_zero()));

        let rect = Waveform::rectangular(g, 4, 0.5, 0).unwrap();
        let c = polyphase_decompose(&rect);
        for (j, p) in c.iter().enumerate() {
            if j < 4 {
                assert_eq!(*p, LaurentPoly::constant(0.5));
            } else {
                assert!(p.is_zero());
            }
        }

        let taps: Vec<f64> = (0..24).map(|t| 1.0 + t as f64).collect();
        let w = Waveform::new(taps, 0, g).unwrap();
        let c = polyphase_decompose(&w);
        assert!(c.iter().all(|p| p.len() == 2));
        assert_eq!(polyphase_interleave(&c, &g).unwrap(), w);
    }

    #[test]
    fn build_v_impulse_and_square_grid() {
        let imp = Waveform::new(vec![1.0], 0, g46()).unwrap();
        let v = build_v(&imp);
        assert_eq!(v.shape(), (6, 4));
        for r in 0..6 {
            for c in 0..4 {
                let e = v.get(r, c);
                if (r, c) == (0, 0) {
                    assert_eq!(*e, LaurentPoly::one());
                } else {
                    assert!(e.is_zero());
                }
            }
        }

        let g = grid_params(5, 5).unwrap();
        let w = Waveform::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], 0, g).unwrap();
        let comps = polyphase_decompose(&w);
        let v = build_v(&w);
        for r in 0..5 {
            for c in 0..5 {
                if r == c {
                    assert_eq!(*v.get(r, c), comps[r]);
                } else {
                    assert!(v.get(r, c).is_zero());
                }
            }
        }
    }

    #[test]
    fn example_two_block_layout() {
        // V_0^o = [[V0, V6], [V8, z V2], [V4, V10]] for N=4, K=6
        let g = g46();
        let taps: Vec<f64> = (0..12).map(|t| 10.0 + t as f64).collect();
        let w = Waveform::new(taps, 0, g).unwrap();
        let b = extract_blocks(&w);
        assert_eq!(b.len(), 2);
        let c = |j: usize| 10.0 + j as f64;
        let b0 = &b[0];
        assert_eq!(*b0.get(0, 0), LaurentPoly::constant(c(0)));
        assert_eq!(*b0.get(0, 1), LaurentPoly::constant(c(6)));
        assert_eq!(*b0.get(1, 0), LaurentPoly::constant(c(8)));
        assert_eq!(*b0.get(1, 1), LaurentPoly::monomial(c(2), -1));
        assert_eq!(*b0.get(2, 0), LaurentPoly::constant(c(4)));
        assert_eq!(*b0.get(2, 1), LaurentPoly::constant(c(10)));
        let b1 = &b[1];
        assert_eq!(*b1.get(1, 1), LaurentPoly::monomial(c(3), -1));
        assert_eq!(*b1.get(2, 1), LaurentPoly::constant(c(11)));
    }

    #[test]
    fn rectangular_window_blocks() {
        let g = grid_params(128, 160).unwrap();
        let s = 1.0 / 128f64.sqrt();
        // rectangular window occupying the last N residues of one period
        let rect = Waveform::rectangular(g, 128, s, (g.m - g.n) as i64).unwrap();
        let mut expected = PolyMatrix::zeros(5, 4);
        for j in 0..4 {
            expected.set(j + 1, j, LaurentPoly::constant(s));
        }
        for b in extract_blocks(&rect) {
            assert_eq!(b, expected);
        }
        let back = synthesize_from_blocks(&vec![expected; 32], &g).unwrap();
        assert_eq!(back, rect);
        assert!(orthonormality_defect(&rect) < 1e-17);
    }

    #[test]
    fn orthonormality_defect_examples() {
        let g = g46();
        let rect = Waveform::rectangular(g, 4, 0.5, 0).unwrap();
        assert!(orthonormality_defect(&rect) < 1e-15);
        let rect2 = Waveform::rectangular(g, 4, 1.0, 0).unwrap();
        assert!((orthonormality_defect(&rect2) - 0.75).abs() < 1e-15);
        let sw = short_window(&g, &[0.3, 1.1]).unwrap();
        assert!(orthonormality_defect(&sw) < 1e-15);
    }

    #[test]
    fn short_window_examples() {
        let g = g46();
        let w = short_window(&g, &[0.0, 0.0]).unwrap();
        assert_eq!(w, Waveform::rectangular(g, 4, 0.5, 0).unwrap());

        let w = short_window(&g, &[FRAC_PI_2, FRAC_PI_2]).unwrap();
        for n in 0..2 {
            assert!(w.at(n).abs() < 1e-16);
        }
        for n in 2..6 {
            assert!((w.at(n) - 0.5).abs() < 1e-16);
        }

        let w = short_window(&g, &[FRAC_PI_4, FRAC_PI_4]).unwrap();
        let h = 0.5 * 2f64.sqrt() / 2.0;
        let expect = [h, h, 0.5, 0.5, h, h];
        for (a, b) in w.taps().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }

        assert!(short_window(&grid_params(4, 9).unwrap(), &[0.0; 5]).is_err());
        assert!(short_window(&g, &[0.0]).is_err());
    }

    #[test]
    fn shape_errors() {
        let g = g46();
        assert!(synthesize_from_blocks(&[PolyMatrix::identity(2)], &g).is_err());
        assert!(synthesize_from_blocks(&[PolyMatrix::identity(2), PolyMatrix::identity(2)], &g)
            .is_err());
        assert!(synthesize_from_blocks(&[PolyMatrix::zeros(3, 2), PolyMatrix::zeros(3, 2)], &g)
            .is_err());
    }
}
