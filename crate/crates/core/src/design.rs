//! Waveform design by unconstrained optimization over the paraunitary
//! parameterization.
//!
//! The objective is `lambda * freq_leakage + (1 - lambda) * time_leakage`,
//! where the frequency leakage is the energy outside `|w| <= pi/N` and the
//! time leakage is the energy outside the best window of `mainlobe_len`
//! samples. Every iterate is orthonormal (or biorthogonal) by construction.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{index_maps, GridParams};
use crate::laurent::PolyMatrix;
use crate::paraunitary::{
    completed_blocks, factorize_rect, givens_product, rect_paraunitary, sphere_angles,
    BiorthParams, ParaunitaryParams,
};
use crate::waveform::Waveform;
use crate::weyl_heisenberg::{
    cross_orthonormality_defect, extract_blocks, orthonormality_defect, short_window,
    synthesize_orthonormal,
};

/// Weights and extents of the design objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignObjective {
    /// Weight on the frequency leakage, in `[0, 1]`.
    pub lambda: f64,
    /// Upper edge of the passband in radians, normally `pi / N`.
    pub band_edge: f64,
    /// Main lobe length in samples.
    pub mainlobe_len: usize,
    /// Spectral sampling size; `None` picks the power of two at or above
    /// 16 times the waveform length.
    pub fft_size: Option<usize>,
}

impl DesignObjective {
    /// `lambda = 0.5`, band edge `pi/N`, main lobe of `K` samples.
    pub fn new(grid: &GridParams) -> Self {
        Self {
            lambda: 0.5,
            band_edge: PI / grid.n as f64,
            mainlobe_len: grid.k,
            fft_size: None,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn fft_size_for(&self, len: usize) -> usize {
        self.fft_size.unwrap_or_else(|| (16 * len).next_power_of_two())
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda={} outside [0, 1]", self.lambda)));
        }
        if !(self.band_edge > 0.0 && self.band_edge < PI) {
            return Err(Error::InvalidArgument("band edge must lie in (0, pi)".into()));
        }
        if self.mainlobe_len == 0 || self.mainlobe_len > len {
            return Err(Error::InvalidArgument(format!(
                "main lobe of {} samples for a {len}-tap waveform",
                self.mainlobe_len
            )));
        }
        if self.fft_size_for(len) < 4 * len {
            return Err(Error::InvalidArgument(format!(
                "fft size {} below 4x the waveform length {len}",
                self.fft_size_for(len)
            )));
        }
        Ok(())
    }
}

/// Trapezoid weights on the FFT bins covering `[0, band_edge]`, including a
/// partial last segment, scaled so that `sum w_m |V(w_m)|^2` is the band
/// energy `(1/2pi) int_{|w| <= band_edge} |V(w)|^2 dw`.
fn band_weights(fft_size: usize, band_edge: f64) -> Vec<f64> {
    let step = 2.0 * PI / fft_size as f64;
    let full = (band_edge / step).floor() as usize;
    let mut w = vec![0.0; full + 2];
    for m in 0..full {
        w[m] += step / 2.0;
        w[m + 1] += step / 2.0;
    }
    let h = band_edge - full as f64 * step;
    if h > 1e-15 * step {
        let tau = h / step;
        w[full] += h / 2.0 * (2.0 - tau);
        w[full + 1] += h / 2.0 * tau;
    }
    w.iter().map(|x| x / PI).collect()
}

pub fn freq_leakage(v: &Waveform, obj: &DesignObjective) -> f64 {
    let f = obj.fft_size_for(v.len());
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); f.max(v.len())];
    for (b, &t) in buf.iter_mut().zip(v.taps()) {
        *b = Complex64::new(t, 0.0);
    }
    // fold so that a short transform still samples the DTFT exactly
    if buf.len() > f {
        for i in f..buf.len() {
            let x = buf[i];
            buf[i % f] += x;
        }
        buf.truncate(f);
    }
    FftPlanner::new().plan_fft_forward(f).process(&mut buf);
    let band: f64 = band_weights(f, obj.band_edge)
        .iter()
        .enumerate()
        .map(|(m, w)| w * buf[m % f].norm_sqr())
        .sum();
    (1.0 - band / v.energy()).clamp(0.0, 1.0)
}

pub fn time_leakage(v: &Waveform, obj: &DesignObjective) -> Result<f64> {
    if obj.mainlobe_len == 0 || obj.mainlobe_len > v.len() {
        return Err(Error::InvalidArgument(format!(
            "main lobe of {} samples for a {}-tap waveform",
            obj.mainlobe_len,
            v.len()
        )));
    }
    let (best, _) = best_window(v.taps(), obj.mainlobe_len);
    Ok((1.0 - best / v.energy()).clamp(0.0, 1.0))
}

/// Largest energy over windows of `len` samples and the first start attaining it.
fn best_window(taps: &[f64], len: usize) -> (f64, usize) {
    let mut acc: f64 = taps[..len].iter().map(|t| t * t).sum();
    let (mut best, mut start) = (acc, 0);
    for s in 1..=(taps.len() - len) {
        acc += taps[s + len - 1].powi(2) - taps[s - 1].powi(2);
        if acc > best {
            best = acc;
            start = s;
        }
    }
    (best, start)
}

pub fn objective(v: &Waveform, obj: &DesignObjective) -> Result<f64> {
    obj.validate(v.len())?;
    Ok(obj.lambda * freq_leakage(v, obj) + (1.0 - obj.lambda) * time_leakage(v, obj)?)
}

/// Objective with gradient on a fixed tap layout.
struct TapObjective {
    lambda: f64,
    mainlobe: usize,
    weights: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

struct Evaluation {
    value: f64,
    freq: f64,
    time: f64,
}

impl TapObjective {
    fn new(len: usize, obj: &DesignObjective) -> Result<Self> {
        obj.validate(len)?;
        let f = obj.fft_size_for(len);
        let weights = band_weights(f, obj.band_edge);
        let mut cos = Vec::with_capacity(weights.len() * len);
        let mut sin = Vec::with_capacity(weights.len() * len);
        for m in 0..weights.len() {
            for t in 0..len {
                let phase = 2.0 * PI * ((m * t) % f) as f64 / f as f64;
                cos.push(phase.cos());
                sin.push(phase.sin());
            }
        }
        Ok(Self {
            lambda: obj.lambda,
            mainlobe: obj.mainlobe_len,
            weights,
            cos,
            sin,
        })
    }

    fn eval(&self, taps: &[f64], grad: Option<&mut [f64]>) -> Evaluation {
        let len = taps.len();
        let energy: f64 = taps.iter().map(|t| t * t).sum();
        let mut spectrum = Vec::with_capacity(self.weights.len());
        let mut band = 0.0;
        for (m, w) in self.weights.iter().enumerate() {
            let (c, s) = (&self.cos[m * len..(m + 1) * len], &self.sin[m * len..(m + 1) * len]);
            let re: f64 = taps.iter().zip(c).map(|(a, b)| a * b).sum();
            let im: f64 = -taps.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
            band += w * (re * re + im * im);
            spectrum.push((re, im));
        }
        let (win, start) = best_window(taps, self.mainlobe);
        let freq = 1.0 - band / energy;
        let time = 1.0 - win / energy;
        if let Some(g) = grad {
            let (lf, lt) = (self.lambda, 1.0 - self.lambda);
            for (t, gt) in g.iter_mut().enumerate() {
                let v = taps[t];
                let in_win = if t >= start && t < start + self.mainlobe { 1.0 } else { 0.0 };
                *gt = -lt * (2.0 * v * in_win / energy - win * 2.0 * v / (energy * energy))
                    + lf * band * 2.0 * v / (energy * energy);
            }
            for (m, w) in self.weights.iter().enumerate() {
                let (re, im) = spectrum[m];
                let (c, s) = (&self.cos[m * len..(m + 1) * len], &self.sin[m * len..(m + 1) * len]);
                let scale = -lf * 2.0 * w / energy;
                for t in 0..len {
                    g[t] += scale * (re * c[t] - im * s[t]);
                }
            }
        }
        Evaluation {
            value: self.lambda * freq + (1.0 - self.lambda) * time,
            freq,
            time,
        }
    }
}

/// A smooth map from free parameters to taps on a fixed layout.
trait Family: Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn taps(&self, x: &[f64], out: &mut [f64]);
    /// Gradient with respect to `x` from the gradient with respect to the taps.
    fn pullback(&self, x: &[f64], g_taps: &[f64], g: &mut [f64]);
    fn waveform(&self, x: &[f64]) -> Result<Waveform>;
    fn defect(&self, w: &Waveform) -> f64;
}

/// Causal `L x J` coefficients `C_0..C_D`, row-major per degree, written into `out`.
fn block_coefficients(l: usize, j: usize, degree: usize, x: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    let nb = ParaunitaryParams::base_len(l);
    scratch.clear();
    scratch.resize(l * l, 0.0);
    for i in 0..l {
        scratch[i * l + i] = 1.0;
    }
    let mut k = 0;
    for a in 0..l {
        for b in (a + 1)..l {
            let (s, c) = x[k].sin_cos();
            k += 1;
            for row in 0..l {
                let (p, q) = (scratch[row * l + a], scratch[row * l + b]);
                scratch[row * l + a] = c * p + s * q;
                scratch[row * l + b] = -s * p + c * q;
            }
        }
    }
    let stride = l * j;
    out[..stride * (degree + 1)].iter_mut().for_each(|c| *c = 0.0);
    for row in 0..l {
        out[row * j..row * j + j].copy_from_slice(&scratch[row * l..row * l + j]);
    }
    let mut u = vec![0.0; l];
    let mut proj = vec![0.0; j];
    for (stage, d_top) in (0..degree).rev().zip(1..) {
        let ang = &x[nb + stage * (l - 1)..nb + (stage + 1) * (l - 1)];
        let mut tail = 1.0;
        for (i, a) in ang.iter().enumerate() {
            u[i] = tail * a.cos();
            tail *= a.sin();
        }
        u[l - 1] = tail;
        // C_d <- C_d - u u^T C_d + u u^T C_{d-1}, highest degree first
        for d in (0..=d_top).rev() {
            for (col, pc) in proj.iter_mut().enumerate() {
                let cur: f64 = (0..l).map(|r| u[r] * out[d * stride + r * j + col]).sum();
                let prev: f64 = if d > 0 {
                    (0..l).map(|r| u[r] * out[(d - 1) * stride + r * j + col]).sum()
                } else {
                    0.0
                };
                *pc = prev - cur;
            }
            for r in 0..l {
                for col in 0..j {
                    out[d * stride + r * j + col] += u[r] * proj[col];
                }
            }
        }
    }
}

/// Orthonormal prototypes from `P` blocks of degree at most `degree`.
struct BlockFamily {
    grid: GridParams,
    degree: usize,
    per_block: usize,
    /// Tap index of coefficient `(d, i, j)` of block `r`, at `r * stride + (d * L + i) * J + j`.
    index: Vec<usize>,
    len: usize,
}

impl BlockFamily {
    fn new(grid: &GridParams, degree: usize) -> Self {
        let g = *grid;
        let m = g.m as i64;
        let mut pos = Vec::new();
        for r in 0..g.p {
            for d in 0..=degree {
                for i in 0..g.l {
                    for j in 0..g.j {
                        let (p, n) = index_maps(&g, i, j);
                        pos.push((p * g.k + i * g.p + r) as i64 + (d as i64 + n as i64) * m);
                    }
                }
            }
        }
        let start = *pos.iter().min().unwrap();
        let end = *pos.iter().max().unwrap();
        Self {
            grid: g,
            degree,
            per_block: ParaunitaryParams::param_len(g.l, degree),
            index: pos.iter().map(|p| (p - start) as usize).collect(),
            len: (end - start + 1) as usize,
        }
    }

    fn stride(&self) -> usize {
        self.grid.l * self.grid.j * (self.degree + 1)
    }

    fn params(&self, x: &[f64]) -> Vec<ParaunitaryParams> {
        (0..self.grid.p)
            .map(|r| &x[r * self.per_block..(r + 1) * self.per_block])
            .map(|c| ParaunitaryParams::from_flat(self.grid.l, self.grid.j, self.degree, c).unwrap())
            .collect()
    }
}

impl Family for BlockFamily {
    fn dim(&self) -> usize {
        self.per_block * self.grid.p
    }

    fn len(&self) -> usize {
        self.len
    }

    fn taps(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let scale = 1.0 / (g.n as f64).sqrt();
        let stride = self.stride();
        let mut coeffs = vec![0.0; stride];
        let mut scratch = Vec::new();
        out.iter_mut().for_each(|t| *t = 0.0);
        for r in 0..g.p {
            let xr = &x[r * self.per_block..(r + 1) * self.per_block];
            block_coefficients(g.l, g.j, self.degree, xr, &mut coeffs, &mut scratch);
            for (c, &idx) in coeffs.iter().zip(&self.index[r * stride..(r + 1) * stride]) {
                out[idx] = c * scale;
            }
        }
    }

    fn pullback(&self, x: &[f64], g_taps: &[f64], g: &mut [f64]) {
        const H: f64 = 1e-5;
        let gp = &self.grid;
        let scale = 1.0 / (gp.n as f64).sqrt();
        let stride = self.stride();
        let (mut plus, mut minus) = (vec![0.0; stride], vec![0.0; stride]);
        let mut scratch = Vec::new();
        let mut xr = vec![0.0; self.per_block];
        for r in 0..gp.p {
            let idx = &self.index[r * stride..(r + 1) * stride];
            xr.copy_from_slice(&x[r * self.per_block..(r + 1) * self.per_block]);
            for q in 0..self.per_block {
                let orig = xr[q];
                xr[q] = orig + H;
                block_coefficients(gp.l, gp.j, self.degree, &xr, &mut plus, &mut scratch);
                xr[q] = orig - H;
                block_coefficients(gp.l, gp.j, self.degree, &xr, &mut minus, &mut scratch);
                xr[q] = orig;
                g[r * self.per_block + q] = plus
                    .iter()
                    .zip(&minus)
                    .zip(idx)
                    .map(|((a, b), &i)| g_taps[i] * (a - b))
                    .sum::<f64>()
                    * scale
                    / (2.0 * H);
            }
        }
    }

    fn waveform(&self, x: &[f64]) -> Result<Waveform> {
        let blocks = self
            .params(x)
            .iter()
            .map(rect_paraunitary)
            .collect::<Result<Vec<PolyMatrix>>>()?;
        synthesize_orthonormal(&blocks, &self.grid)
    }

    fn defect(&self, w: &Waveform) -> f64 {
        orthonormality_defect(w)
    }
}

/// Single-frame prototypes from `K - N` angles.
struct ShortFamily {
    grid: GridParams,
}

impl Family for ShortFamily {
    fn dim(&self) -> usize {
        self.grid.guard
    }

    fn len(&self) -> usize {
        self.grid.k
    }

    fn taps(&self, x: &[f64], out: &mut [f64]) {
        let (n, k) = (self.grid.n, self.grid.k);
        let s = 1.0 / (n as f64).sqrt();
        for (t, o) in out.iter_mut().enumerate().take(k) {
            *o = s * if t < k - n {
                x[t].cos()
            } else if t < n {
                1.0
            } else {
                x[t - n].sin()
            };
        }
    }

    fn pullback(&self, x: &[f64], g_taps: &[f64], g: &mut [f64]) {
        let n = self.grid.n;
        let s = 1.0 / (n as f64).sqrt();
        for (t, gt) in g.iter_mut().enumerate() {
            *gt = s * (-x[t].sin() * g_taps[t] + x[t].cos() * g_taps[n + t]);
        }
    }

    fn waveform(&self, x: &[f64]) -> Result<Waveform> {
        short_window(&self.grid, x)
    }

    fn defect(&self, w: &Waveform) -> f64 {
        orthonormality_defect(w)
    }
}

/// Demultiplexing waveforms `w = w_0 + sum_c x_c b_c`, linear in the
/// coefficients of `A_r(z)` over a fixed exponent window.
struct BiorthFamily {
    v: Waveform,
    grid: GridParams,
    lo: i64,
    hi: i64,
    base: Vec<f64>,
    basis: Vec<Vec<(usize, f64)>>,
    start: i64,
    len: usize,
}

impl BiorthFamily {
    fn new(v: &Waveform, lo: i64, hi: i64) -> Result<Self> {
        if hi < lo {
            return Err(Error::InvalidArgument(format!("empty exponent window [{lo}, {hi}]")));
        }
        let g = *v.grid();
        let m = g.m as i64;
        let scale = 1.0 / (g.n as f64).sqrt();
        let completed = completed_blocks(v)?;
        let position = |r: usize, i: usize, j: usize, d: i64| {
            let (p, n) = index_maps(&g, i, j);
            (p * g.k + i * g.p + r) as i64 + (d + n as i64) * m
        };
        let mut raw_basis: Vec<Vec<(i64, f64)>> = Vec::new();
        for (r, vs) in completed.iter().enumerate() {
            for a in 0..(g.l - g.j) {
                for j in 0..g.j {
                    for e in lo..=hi {
                        let mut terms = Vec::new();
                        for i in 0..g.l {
                            for (d, c) in vs.get(i, g.j + a).terms() {
                                terms.push((position(r, i, j, d + e), c * scale));
                            }
                        }
                        raw_basis.push(terms);
                    }
                }
            }
        }
        let all = raw_basis
            .iter()
            .flatten()
            .map(|t| t.0)
            .chain([v.offset(), v.end() - 1]);
        let (start, end) = all.fold((i64::MAX, i64::MIN), |(a, b), p| (a.min(p), b.max(p)));
        let len = (end - start + 1) as usize;
        let mut base = vec![0.0; len];
        for (t, &c) in v.taps().iter().enumerate() {
            base[(v.offset() + t as i64 - start) as usize] = c;
        }
        let basis = raw_basis
            .into_iter()
            .map(|terms| terms.into_iter().map(|(p, c)| ((p - start) as usize, c)).collect())
            .collect();
        Ok(Self {
            v: v.clone(),
            grid: g,
            lo,
            hi,
            base,
            basis,
            start,
            len,
        })
    }

    fn params(&self, x: &[f64]) -> BiorthParams {
        let g = &self.grid;
        let width = (self.hi - self.lo + 1) as usize;
        let rows = g.l - g.j;
        let blocks = (0..g.p)
            .map(|r| {
                let mut a = PolyMatrix::zeros(rows, g.j);
                for row in 0..rows {
                    for j in 0..g.j {
                        let off = ((r * rows + row) * g.j + j) * width;
                        a.set(row, j, crate::laurent::LaurentPoly::new(x[off..off + width].to_vec(), self.lo));
                    }
                }
                a
            })
            .collect();
        BiorthParams { blocks }
    }
}

impl Family for BiorthFamily {
    fn dim(&self) -> usize {
        self.basis.len()
    }

    fn len(&self) -> usize {
        self.len
    }

    fn taps(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.base);
        for (b, &c) in self.basis.iter().zip(x) {
            for &(i, val) in b {
                out[i] += c * val;
            }
        }
    }

    fn pullback(&self, _x: &[f64], g_taps: &[f64], g: &mut [f64]) {
        for (gc, b) in g.iter_mut().zip(&self.basis) {
            *gc = b.iter().map(|&(i, val)| g_taps[i] * val).sum();
        }
    }

    fn waveform(&self, x: &[f64]) -> Result<Waveform> {
        let mut taps = vec![0.0; self.len];
        self.taps(x, &mut taps);
        Waveform::new(taps, self.start, self.grid)
    }

    fn defect(&self, w: &Waveform) -> f64 {
        cross_orthonormality_defect(&self.v, w)
    }
}

/// Search space of [`optimize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parameterization {
    /// Paraunitary blocks of degree at most `degree`.
    Blocks { degree: usize },
    /// Single-frame windows (requires `K <= 2N`).
    ShortWindow,
}

/// Starting point of restart 0; later restarts perturb it.
#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    Random,
    /// The `N`-tap rectangular window.
    Rectangular,
    Given(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    /// Objective evaluations per restart; 1 evaluates the start and stops.
    pub budget: usize,
    pub restarts: usize,
    pub master_seed: u64,
    /// Half-width of the uniform perturbation applied to later restarts.
    pub jitter: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            budget: 2000,
            restarts: 8,
            master_seed: 0,
            jitter: 0.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DesignReport {
    pub waveform: Waveform,
    pub params: Vec<f64>,
    pub objective_value: f64,
    pub freq_leakage: f64,
    pub time_leakage: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Largest (bi)orthonormality defect over all accepted iterates.
    pub defect: f64,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
    /// Restart that produced the result.
    pub restart: usize,
}

impl DesignReport {
    pub fn summary(&self) -> String {
        format!(
            "objective {:.9e}\nfreq_leakage {:.9e}\ntime_leakage {:.9e}\niterations {}\nevaluations {}\ndefect {:.3e}\nrestart {}\ntaps {} (nonzero {})\n",
            self.objective_value,
            self.freq_leakage,
            self.time_leakage,
            self.iterations,
            self.evaluations,
            self.defect,
            self.restart,
            self.waveform.len(),
            self.waveform.nonzero_taps()
        )
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic per-task seed derived from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

struct Run {
    x: Vec<f64>,
    eval: Evaluation,
    iterations: usize,
    evaluations: usize,
    defect: f64,
    history: Vec<f64>,
}

struct Problem<'a, F: Family> {
    family: &'a F,
    objective: TapObjective,
}

impl<F: Family> Problem<'_, F> {
    fn value(&self, x: &[f64], taps: &mut [f64]) -> f64 {
        self.family.taps(x, taps);
        self.objective.eval(taps, None).value
    }

    fn value_grad(&self, x: &[f64], taps: &mut [f64], g: &mut [f64]) -> f64 {
        self.family.taps(x, taps);
        let mut gt = vec![0.0; taps.len()];
        let e = self.objective.eval(taps, Some(&mut gt));
        self.family.pullback(x, &gt, g);
        e.value
    }

    fn defect(&self, x: &[f64]) -> f64 {
        match self.family.waveform(x) {
            Ok(w) => self.family.defect(&w),
            Err(_) => f64::INFINITY,
        }
    }

    /// BFGS with Armijo backtracking; a coordinate-wise golden-section sweep
    /// takes over when the gradient vanishes or the line search fails.
    fn minimize(&self, x0: Vec<f64>, budget: usize) -> Run {
        let n = self.family.dim();
        let mut taps = vec![0.0; self.family.len()];
        let mut x = x0;
        let mut g = vec![0.0; n];
        let mut f = self.value_grad(&x, &mut taps, &mut g);
        let mut evals = 1;
        let mut defect = self.defect(&x);
        let mut history = vec![f];
        let mut iterations = 0;
        let mut h = DMatrix::<f64>::identity(n, n);
        let mut fresh = true;
        while evals < budget && n > 0 {
            let gnorm = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            let mut step_ok = false;
            if gnorm >= 1e-8 {
                let gv = nalgebra::DVector::from_column_slice(&g);
                let mut d: Vec<f64> = (-(&h * &gv)).iter().copied().collect();
                let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
                if slope >= 0.0 {
                    h = DMatrix::identity(n, n);
                    fresh = true;
                    d = g.iter().map(|a| -a).collect();
                    slope = -gnorm * gnorm;
                }
                let dmax = d.iter().fold(0.0f64, |m, a| m.max(a.abs()));
                let mut t = if dmax > 1.0 { 1.0 / dmax } else { 1.0 };
                let mut trial = vec![0.0; n];
                for _ in 0..40 {
                    if evals >= budget {
                        break;
                    }
                    for i in 0..n {
                        trial[i] = x[i] + t * d[i];
                    }
                    let ft = self.value(&trial, &mut taps);
                    evals += 1;
                    if ft <= f + 1e-4 * t * slope && ft < f {
                        let mut g_new = vec![0.0; n];
                        let f_new = self.value_grad(&trial, &mut taps, &mut g_new);
                        evals += 1;
                        let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
                        if sy > 1e-12 {
                            let sv = nalgebra::DVector::from_vec(s);
                            let yv = nalgebra::DVector::from_vec(y);
                            if fresh {
                                let yy = yv.dot(&yv);
                                h = DMatrix::identity(n, n) * (sy / yy);
                                fresh = false;
                            }
                            let rho = 1.0 / sy;
                            let hy = &h * &yv;
                            let yhy = yv.dot(&hy);
                            h += (&sv * sv.transpose()) * (rho * rho * yhy + rho)
                                - (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
                        }
                        x = trial.clone();
                        f = f_new;
                        g = g_new;
                        step_ok = true;
                        break;
                    }
                    t *= 0.5;
                }
            }
            if !step_ok {
                if !fresh && gnorm >= 1e-8 {
                    h = DMatrix::identity(n, n);
                    fresh = true;
                    continue;
                }
                let (improved, used) = self.golden_sweep(&mut x, &mut f, budget - evals.min(budget), &mut taps);
                evals += used;
                if !improved {
                    break;
                }
                f = self.value_grad(&x, &mut taps, &mut g);
                evals += 1;
                h = DMatrix::identity(n, n);
                fresh = true;
            }
            iterations += 1;
            defect = defect.max(self.defect(&x));
            history.push(f);
            let w = history.len();
            if w > 20 && history[w - 21] - history[w - 1] <= 1e-9 * history[w - 21].abs() {
                break;
            }
        }
        self.family.taps(&x, &mut taps);
        let eval = self.objective.eval(&taps, None);
        Run {
            x,
            eval,
            iterations,
            evaluations: evals,
            defect,
            history,
        }
    }

    fn golden_sweep(&self, x: &mut [f64], f: &mut f64, budget: usize, taps: &mut [f64]) -> (bool, usize) {
        const R: f64 = 0.618_033_988_749_895;
        let mut used = 0;
        let mut improved = false;
        let mut y = x.to_vec();
        for i in 0..x.len() {
            if used + 30 > budget {
                break;
            }
            let orig = x[i];
            let (mut a, mut b) = (orig - 0.5, orig + 0.5);
            let mut eval = |t: f64, used: &mut usize| {
                y[i] = t;
                *used += 1;
                self.value(&y, taps)
            };
            let mut c = b - R * (b - a);
            let mut d = a + R * (b - a);
            let mut fc = eval(c, &mut used);
            let mut fd = eval(d, &mut used);
            for _ in 0..26 {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - R * (b - a);
                    fc = eval(c, &mut used);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + R * (b - a);
                    fd = eval(d, &mut used);
                }
            }
            let (t, ft) = if fc < fd { (c, fc) } else { (d, fd) };
            if ft < *f {
                x[i] = t;
                *f = ft;
                improved = true;
            }
            y[i] = x[i];
        }
        (improved, used)
    }
}

fn run_restarts<F: Family>(
    family: &F,
    obj: &DesignObjective,
    start: Vec<f64>,
    random_start: bool,
    opts: &OptimizeOptions,
) -> Result<DesignReport> {
    if opts.budget == 0 || opts.restarts == 0 {
        return Err(Error::InvalidArgument("budget and restarts must be positive".into()));
    }
    if start.len() != family.dim() {
        return Err(Error::Shape(format!(
            "{} initial parameters for a {}-dimensional family",
            start.len(),
            family.dim()
        )));
    }
    let problem = Problem {
        family,
        objective: TapObjective::new(family.len(), obj)?,
    };
    let runs: Vec<Run> = (0..opts.restarts)
        .into_par_iter()
        .map(|idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.master_seed, idx as u64));
            let x0: Vec<f64> = if idx == 0 && !random_start {
                start.clone()
            } else if random_start {
                (0..start.len()).map(|_| rng.random_range(-PI..PI)).collect()
            } else {
                start
                    .iter()
                    .map(|a| a + rng.random_range(-opts.jitter..=opts.jitter))
                    .collect()
            };
            problem.minimize(x0, opts.budget)
        })
        .collect();
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .fold(None::<(usize, Run)>, |acc, (i, r)| match acc {
            Some((j, b)) if b.eval.value <= r.eval.value => Some((j, b)),
            _ => Some((i, r)),
        })
        .unwrap();
    Ok(DesignReport {
        waveform: family.waveform(&best.x)?,
        params: best.x,
        objective_value: best.eval.value,
        freq_leakage: best.eval.freq,
        time_leakage: best.eval.time,
        iterations: best.iterations,
        evaluations: best.evaluations,
        defect: best.defect,
        history: best.history,
        restart,
    })
}

/// Flat parameters of the rectangular `N`-tap window in the block family.
pub fn rectangular_block_params(grid: &GridParams, degree: usize) -> Result<Vec<f64>> {
    let mut v = PolyMatrix::zeros(grid.l, grid.j);
    for j in 0..grid.j {
        v.set(grid.l - grid.j + j, j, crate::laurent::LaurentPoly::one());
    }
    let (p, _) = factorize_rect(&v, 1e-12)?;
    let mut flat = p.base_angles;
    flat.resize(ParaunitaryParams::param_len(grid.l, degree), 0.0);
    Ok(flat.repeat(grid.p))
}

/// Flat block parameters reproducing an orthonormal prototype, up to a delay
/// by a multiple of `M`. Blocks of lower degree are padded with stages that
/// act on coordinates their columns do not touch, when such a choice exists.
pub fn block_params_of(v: &Waveform, degree: usize) -> Result<Vec<f64>> {
    let g = v.grid();
    let root_n = (g.n as f64).sqrt();
    let blocks = extract_blocks(v);
    let lo = blocks
        .iter()
        .filter_map(|b| b.degree_range().map(|r| r.0))
        .min()
        .ok_or_else(|| Error::InvalidArgument("waveform has no blocks".into()))?;
    let mut flat = Vec::new();
    for b in &blocks {
        let (p, shift) = factorize_rect(&b.scaled(root_n).delayed(-lo), 1e-8)?;
        if p.degree > degree || shift != 0 {
            return Err(Error::InvalidArgument(format!(
                "block needs degree {} with delay {shift}, family allows {degree}",
                p.degree
            )));
        }
        let padded = pad_stages(&p, degree)?;
        flat.extend(padded.to_flat());
    }
    Ok(flat)
}

/// Appends stages that leave the first `J` columns unchanged: a stage placed
/// right before `R` with `u` along a column of `R` beyond the first `J`.
fn pad_stages(p: &ParaunitaryParams, degree: usize) -> Result<ParaunitaryParams> {
    if p.degree == degree {
        return Ok(p.clone());
    }
    if p.j >= p.l {
        return Err(Error::InvalidArgument("square blocks cannot be padded".into()));
    }
    let r = givens_product(p.l, &p.base_angles);
    let angles = sphere_angles(&r.column(p.l - 1).into_owned());
    let mut stages = p.stage_angles.clone();
    stages.resize(degree, angles);
    ParaunitaryParams::new(p.l, p.j, degree, p.base_angles.clone(), stages)
}

pub fn optimize(
    grid: &GridParams,
    param: Parameterization,
    init: &Init,
    obj: &DesignObjective,
    opts: &OptimizeOptions,
) -> Result<DesignReport> {
    match param {
        Parameterization::Blocks { degree } => {
            let family = BlockFamily::new(grid, degree);
            let (start, random) = match init {
                Init::Random => (vec![0.0; family.dim()], true),
                Init::Rectangular => (rectangular_block_params(grid, degree)?, false),
                Init::Given(x) => (x.clone(), false),
            };
            run_restarts(&family, obj, start, random, opts)
        }
        Parameterization::ShortWindow => {
            if grid.k > 2 * grid.n {
                return Err(Error::InvalidArgument("short windows need K <= 2N".into()));
            }
            let family = ShortFamily { grid: *grid };
            let (start, random) = match init {
                Init::Random => (vec![0.0; family.dim()], true),
                Init::Rectangular => (vec![PI / 2.0; family.dim()], false),
                Init::Given(x) => (x.clone(), false),
            };
            run_restarts(&family, obj, start, random, opts)
        }
    }
}

/// Splits flat block parameters into one [`ParaunitaryParams`] per block.
pub fn split_block_params(grid: &GridParams, degree: usize, flat: &[f64]) -> Result<Vec<ParaunitaryParams>> {
    let per = ParaunitaryParams::param_len(grid.l, degree);
    if flat.len() != per * grid.p {
        return Err(Error::Shape(format!("{} parameters for {} blocks of {per}", flat.len(), grid.p)));
    }
    (0..grid.p)
        .map(|r| ParaunitaryParams::from_flat(grid.l, grid.j, degree, &flat[r * per..(r + 1) * per]))
        .collect()
}

/// Key-value text with one `[block r]` section per block.
pub fn block_params_to_kv(params: &[ParaunitaryParams]) -> String {
    params
        .iter()
        .enumerate()
        .map(|(r, p)| format!("[block {r}]\n{}", p.to_kv()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn block_params_from_kv(text: &str) -> Result<Vec<ParaunitaryParams>> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut expected = 0usize;
    let mut started = false;
    for line in text.lines() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("[block ").and_then(|r| r.strip_suffix(']')) {
            if started {
                out.push(ParaunitaryParams::from_kv(&current)?);
                current.clear();
            }
            let idx: usize = rest
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad section header {t:?}")))?;
            if idx != expected {
                return Err(Error::Parse(format!("expected block {expected}, found {idx}")));
            }
            expected += 1;
            started = true;
        } else if started {
            current.push_str(line);
            current.push('\n');
        } else if !t.is_empty() && !t.starts_with('#') {
            return Err(Error::Parse("content before the first [block] section".into()));
        }
    }
    if started {
        out.push(ParaunitaryParams::from_kv(&current)?);
    }
    Ok(out)
}

/// Optimizes the coefficients of `A_r(z)` on exponents `lo..=hi` for the
/// demultiplexing waveform, starting from `a` (coefficients outside the
/// window are rejected).
pub fn design_biorthogonal(
    v: &Waveform,
    a: &BiorthParams,
    lo: i64,
    hi: i64,
    obj: &DesignObjective,
    opts: &OptimizeOptions,
) -> Result<DesignReport> {
    let family = BiorthFamily::new(v, lo, hi)?;
    let g = v.grid();
    if a.blocks.len() != g.p {
        return Err(Error::Shape(format!("{} A blocks for P={}", a.blocks.len(), g.p)));
    }
    let width = (hi - lo + 1) as usize;
    let mut start = Vec::with_capacity(family.dim());
    for b in &a.blocks {
        if b.shape() != (g.l - g.j, g.j) {
            return Err(Error::Shape("A block has the wrong shape".into()));
        }
        for row in 0..b.rows() {
            for j in 0..g.j {
                let p = b.get(row, j);
                if p.terms().any(|(d, _)| d < lo || d > hi) {
                    return Err(Error::InvalidArgument(format!(
                        "A has exponents outside [{lo}, {hi}]"
                    )));
                }
                start.extend((0..width).map(|e| p.coeff(lo + e as i64)));
            }
        }
    }
    let report = run_restarts(&family, obj, start, false, opts)?;
    debug_assert_eq!(family.params(&report.params).blocks.len(), g.p);
    Ok(report)
}

/// `floor(n_z (2 N L_v / K - N - 1))`, the number of linear constraints that
/// `n_z` zeros per lattice cell impose on a demultiplexing waveform.
pub fn zero_constraint_count(n: usize, k: usize, lv: usize, n_z: usize) -> i64 {
    let (n, k, lv, nz) = (n as i128, k as i128, lv as i128, n_z as i128);
    (nz * (2 * n * lv - (n + 1) * k)).div_euclid(k) as i64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::grid_params;
    use crate::paraunitary::rect_coefficients;

    #[test]
    fn fast_block_coefficients_match_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (l, j, degree) in [(5, 4, 0), (5, 4, 2), (3, 2, 1), (10, 9, 1), (1, 1, 2)] {
            let p = ParaunitaryParams::random(l, j, degree, &mut rng);
            let mut out = vec![0.0; l * j * (degree + 1)];
            block_coefficients(l, j, degree, &p.to_flat(), &mut out, &mut Vec::new());
            let reference = rect_coefficients(&p);
            for (d, c) in reference.iter().enumerate() {
                for r in 0..l {
                    for col in 0..j {
                        assert!((out[d * l * j + r * j + col] - c[(r, col)]).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn block_family_matches_synthesis() {
        let g = grid_params(4, 6).unwrap();
        let fam = BlockFamily::new(&g, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..fam.dim()).map(|_| rng.random_range(-PI..PI)).collect();
        let mut taps = vec![0.0; fam.len()];
        fam.taps(&x, &mut taps);
        let w = fam.waveform(&x).unwrap();
        for (t, tap) in taps.iter().enumerate() {
            assert!((tap - w.at(w.offset() + t as i64)).abs() < 1e-14);
        }
    }

    fn check_gradient<F: Family>(fam: &F, obj: &DesignObjective, seed: u64) {
        let problem = Problem {
            family: fam,
            objective: TapObjective::new(fam.len(), obj).unwrap(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..fam.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut taps = vec![0.0; fam.len()];
        let mut g = vec![0.0; fam.dim()];
        problem.value_grad(&x, &mut taps, &mut g);
        for i in 0..fam.dim() {
            let mut xp = x.clone();
            xp[i] += 1e-6;
            let mut xm = x.clone();
            xm[i] -= 1e-6;
            let fd = (problem.value(&xp, &mut taps) - problem.value(&xm, &mut taps)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6, "coordinate {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = grid_params(4, 6).unwrap();
        let obj = DesignObjective::new(&g).with_lambda(0.3);
        check_gradient(&BlockFamily::new(&g, 1), &obj, 3);
        check_gradient(&ShortFamily { grid: g }, &obj, 4);
        let v = short_window(&g, &[0.3, 1.1]).unwrap();
        check_gradient(&BiorthFamily::new(&v, -1, 1).unwrap(), &obj, 5);
    }

    #[test]
    fn fast_objective_matches_public_functions() {
        let g = grid_params(36, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let taps: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = Waveform::new(taps.clone(), 0, g).unwrap();
        let obj = DesignObjective::new(&g).with_lambda(0.7);
        let e = TapObjective::new(300, &obj).unwrap().eval(&taps, None);
        assert!((e.freq - freq_leakage(&v, &obj)).abs() < 1e-12);
        assert!((e.time - time_leakage(&v, &obj).unwrap()).abs() < 1e-12);
        assert!((e.value - objective(&v, &obj).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn window_examples() {
        let g = grid_params(8, 10).unwrap();
        let mut obj = DesignObjective::new(&g);
        obj.mainlobe_len = 8;
        let rect = Waveform::rectangular(g, 8, 1.0, 0).unwrap();
        assert_eq!(time_leakage(&rect, &obj).unwrap(), 0.0);
        let mut taps = vec![0.0; 30];
        taps[0] = 1.0;
        taps[29] = -1.0;
        let two = Waveform::new(taps, 0, g).unwrap();
        assert!((time_leakage(&two, &obj).unwrap() - 0.5).abs() < 1e-15);
        obj.mainlobe_len = 31;
        assert!(time_leakage(&two, &obj).is_err());
    }

    #[test]
    fn zero_count_examples() {
        assert_eq!(zero_constraint_count(128, 160, 1024, 1), 1509);
        assert_eq!(zero_constraint_count(128, 160, 1024, 0), 0);
    }

    #[test]
    fn budget_of_one_returns_start() {
        let g = grid_params(4, 6).unwrap();
        let mut obj = DesignObjective::new(&g);
        obj.mainlobe_len = 4;
        obj.fft_size = Some(256);
        let opts = OptimizeOptions {
            budget: 1,
            restarts: 1,
            ..Default::default()
        };
        let r = optimize(&g, Parameterization::Blocks { degree: 1 }, &Init::Rectangular, &obj, &opts).unwrap();
        let rect = Waveform::rectangular(g, 4, 0.5, 0).unwrap();
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.history.len(), 1);
        assert!((r.objective_value - objective(&rect, &obj).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn block_kv_round_trip() {
        let g = grid_params(4, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let flat: Vec<f64> = (0..ParaunitaryParams::param_len(3, 2) * 2)
            .map(|_| rng.random_range(-PI..PI))
            .collect();
        let params = split_block_params(&g, 2, &flat).unwrap();
        let text = block_params_to_kv(&params);
        assert_eq!(block_params_from_kv(&text).unwrap(), params);
        assert!(block_params_from_kv("[block 1]\nL=3\n").is_err());
    }
}
