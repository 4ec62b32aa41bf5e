//! OFDM multiplexer and demultiplexer, the crossambiguity function and the
//! closed-form expected interference under multipath and offsets.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridParams;
use crate::waveform::Waveform;

/// Symbols `a_k[i]`, stored frame by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolFrames {
    n: usize,
    data: Vec<Complex64>,
}

impl SymbolFrames {
    pub fn new(n: usize, data: Vec<Complex64>) -> Result<Self> {
        if n == 0 || data.len() % n != 0 {
            return Err(Error::Shape(format!("{} symbols do not fill frames of {n}", data.len())));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidArgument("symbols must be finite".into()));
        }
        Ok(Self { n, data })
    }

    pub fn zeros(n: usize, frames: usize) -> Self {
        Self {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * frames],
        }
    }

    pub fn width(&self) -> usize {
        self.n
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / self.n
    }

    pub fn frame(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, k: usize) -> Complex64 {
        self.data[i * self.n + k]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// A finitely supported complex baseband signal `s[start + t] = samples[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub start: i64,
    pub samples: Vec<Complex64>,
}

impl Signal {
    pub fn zeros(start: i64, len: usize) -> Self {
        Self {
            start,
            samples: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn end(&self) -> i64 {
        self.start + self.samples.len() as i64
    }

    pub fn at(&self, n: i64) -> Complex64 {
        let t = n - self.start;
        if t < 0 || t >= self.samples.len() as i64 {
            Complex64::new(0.0, 0.0)
        } else {
            self.samples[t as usize]
        }
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let lo = self.start.min(other.start);
        let hi = self.end().max(other.end());
        (lo..hi)
            .map(|n| (self.at(n) - other.at(n)).norm())
            .fold(0.0, f64::max)
    }
}

fn unit_roots(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|m| Complex64::from_polar(1.0, 2.0 * PI * m as f64 / n as f64))
        .collect()
}

fn output_span(frames: usize, v: &Waveform) -> (i64, usize) {
    let k = v.grid().k;
    (v.offset(), v.len() + frames.saturating_sub(1) * k)
}

fn check_width(a: &SymbolFrames, g: &GridParams) -> Result<()> {
    if a.width() != g.n {
        return Err(Error::Shape(format!("frames of {} symbols for N={}", a.width(), g.n)));
    }
    Ok(())
}

/// `s[n] = sum_i sum_k a_k[i] v[n - iK] exp(j 2 pi k (n - iK) / N)`.
pub fn multiplex(a: &SymbolFrames, v: &Waveform) -> Result<Signal> {
    let g = v.grid();
    check_width(a, g)?;
    let (n, k) = (g.n, g.k as i64);
    let roots = unit_roots(n);
    let (start, len) = output_span(a.num_frames(), v);
    let mut s = Signal::zeros(start, len);
    for i in 0..a.num_frames() {
        let frame = a.frame(i);
        for (t, &tap) in v.taps().iter().enumerate() {
            let rel = v.offset() + t as i64;
            let m = rel.rem_euclid(n as i64) as usize;
            let acc: Complex64 = frame
                .iter()
                .enumerate()
                .map(|(kk, &sym)| sym * roots[(kk * m) % n])
                .sum();
            s.samples[(rel + i as i64 * k - start) as usize] += acc * tap;
        }
    }
    Ok(s)
}

/// Same output as [`multiplex`]: one inverse DFT per frame, then the
/// polyphase filtering by the entries of `V(z)`, which weights the
/// `N`-periodic extension of the frame by the prototype taps.
pub fn fft_multiplex(a: &SymbolFrames, v: &Waveform) -> Result<Signal> {
    let g = v.grid();
    check_width(a, g)?;
    let (n, k) = (g.n, g.k as i64);
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let (start, len) = output_span(a.num_frames(), v);
    let mut s = Signal::zeros(start, len);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..a.num_frames() {
        buf.copy_from_slice(a.frame(i));
        ifft.process(&mut buf);
        for (t, &tap) in v.taps().iter().enumerate() {
            let rel = v.offset() + t as i64;
            s.samples[(rel + i as i64 * k - start) as usize] +=
                buf[rel.rem_euclid(n as i64) as usize] * tap;
        }
    }
    Ok(s)
}

/// `b_k[i] = sum_n w[n - iK] exp(-j 2 pi k (n - iK) / N) s[n]` for frames `0..num_frames`.
pub fn demultiplex(s: &Signal, w: &Waveform, num_frames: usize) -> SymbolFrames {
    let g = w.grid();
    let (n, k) = (g.n, g.k as i64);
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut out = SymbolFrames::zeros(n, num_frames);
    for i in 0..num_frames {
        let frame = out.frame_mut(i);
        for (t, &tap) in w.taps().iter().enumerate() {
            let rel = w.offset() + t as i64;
            frame[rel.rem_euclid(n as i64) as usize] += s.at(rel + i as i64 * k) * tap;
        }
        fft.process(frame);
    }
    out
}

/// `A(x, y) = sum_n v[n - x] w[n] exp(j 2 pi y n / N)`, with `w` the
/// demultiplexing waveform (not its time-reversed filter).
pub fn crossambiguity(v: &Waveform, w: &Waveform, x: i64, y: f64) -> Complex64 {
    let lo = (v.offset() + x).max(w.offset());
    let hi = (v.end() + x).min(w.end());
    let step = 2.0 * PI * y / w.grid().n as f64;
    (lo..hi)
        .map(|t| Complex64::from_polar(v.at(t - x) * w.at(t), step * t as f64))
        .sum()
}

/// Sampled crossambiguity surface, row-major in `x` then `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbiguityGrid {
    pub xs: Vec<i64>,
    pub ys: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl AmbiguityGrid {
    pub fn get(&self, xi: usize, yi: usize) -> Complex64 {
        self.values[xi * self.ys.len() + yi]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,re,im,abs\n");
        for (xi, x) in self.xs.iter().enumerate() {
            for (yi, y) in self.ys.iter().enumerate() {
                let a = self.get(xi, yi);
                writeln!(s, "{x},{y},{:.17e},{:.17e},{:.17e}", a.re, a.im, a.norm()).unwrap();
            }
        }
        s
    }
}

pub fn ambiguity_grid(v: &Waveform, w: &Waveform, x_min: i64, x_max: i64, ys: &[f64]) -> AmbiguityGrid {
    let xs: Vec<i64> = (x_min..=x_max).collect();
    let values = xs
        .par_iter()
        .flat_map_iter(|&x| ys.iter().map(move |&y| crossambiguity(v, w, x, y)))
        .collect();
    AmbiguityGrid {
        xs,
        ys: ys.to_vec(),
        values,
    }
}

/// Second-order channel statistics: tap `l` sits at delay `delays[l]` with
/// mean power `powers[l]` (linear). Tap 0 is the direct path at delay 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub delays: Vec<usize>,
    pub powers: Vec<f64>,
}

impl ChannelStats {
    pub fn new(delays: Vec<usize>, powers: Vec<f64>) -> Result<Self> {
        if delays.is_empty() || delays.len() != powers.len() {
            return Err(Error::Shape("delays and powers must be non-empty and aligned".into()));
        }
        if delays[0] != 0 || delays.windows(2).any(|d| d[1] <= d[0]) {
            return Err(Error::InvalidArgument(
                "delays must start at 0 and increase strictly".into(),
            ));
        }
        if powers.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("tap powers must be finite and >= 0".into()));
        }
        Ok(Self { delays, powers })
    }

    /// Consecutive taps at delays `0, 1, 2, ...` with powers in dB.
    pub fn from_db(powers_db: &[f64]) -> Result<Self> {
        Self::new(
            (0..powers_db.len()).collect(),
            powers_db.iter().map(|d| 10f64.powf(d / 10.0)).collect(),
        )
    }

    /// Direct path only.
    pub fn ideal() -> Self {
        Self {
            delays: vec![0],
            powers: vec![1.0],
        }
    }

    pub fn max_delay(&self) -> usize {
        *self.delays.last().unwrap()
    }
}

/// 33-tap profile: 0 to -24 dB in 1 dB steps, then -1 to -8 dB.
pub fn profile_33_tap() -> ChannelStats {
    let db: Vec<f64> = (0..=24).chain(1..=8).map(|d| -(d as f64)).collect();
    ChannelStats::from_db(&db).unwrap()
}

/// 3-tap profile: 0, -3 and -6 dB.
pub fn profile_3_tap() -> ChannelStats {
    ChannelStats::from_db(&[0.0, -3.0, -6.0]).unwrap()
}

/// Frame offsets `q` over which the interference sum runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QWindow {
    pub q_min: i64,
    pub q_max: i64,
}

impl QWindow {
    /// Every `q` for which some channel tap makes the supports of the shifted
    /// `v` and `w` overlap.
    pub fn covering(v: &Waveform, w: &Waveform, stats: &ChannelStats, eps_t: i64) -> Self {
        let k = v.grid().k as i64;
        // overlap needs w.offset - v.end < x < w.end - v.offset, x = qK + d - eps_t
        let x_lo = w.offset() - v.end() + 1 + eps_t - stats.max_delay() as i64;
        let x_hi = w.end() - v.offset() - 1 + eps_t;
        Self {
            q_min: x_lo.div_euclid(k),
            q_max: x_hi.div_euclid(k) + 1,
        }
    }
}

/// `sum_{(p,q) != (0,0)} sum_l s_l |A(qK + d_l - eps_t, p + eps_f)|^2`, with
/// `s_0 = 1` for the direct path and `s_l = powers[l]` otherwise. `p` runs over
/// one period `0..N`, since `A(x, y)` is `N`-periodic in `y`.
pub fn expected_interference(
    v: &Waveform,
    w: &Waveform,
    stats: &ChannelStats,
    eps_t: i64,
    eps_f: f64,
    window: Option<QWindow>,
) -> f64 {
    let g = v.grid();
    let (n, k) = (g.n, g.k as i64);
    let window = window.unwrap_or_else(|| QWindow::covering(v, w, stats, eps_t));
    let fft = FftPlanner::new().plan_fft_inverse(n);
    let step = 2.0 * PI * eps_f / n as f64;
    let mut total = 0.0;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (l, &d) in stats.delays.iter().enumerate() {
        let weight = if l == 0 { 1.0 } else { stats.powers[l] };
        if weight == 0.0 {
            continue;
        }
        for q in window.q_min..=window.q_max {
            let x = q * k + d as i64 - eps_t;
            let lo = (v.offset() + x).max(w.offset());
            let hi = (v.end() + x).min(w.end());
            if lo >= hi {
                continue;
            }
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for t in lo..hi {
                buf[t.rem_euclid(n as i64) as usize] +=
                    Complex64::from_polar(v.at(t - x) * w.at(t), step * t as f64);
            }
            fft.process(&mut buf);
            for (p, a) in buf.iter().enumerate() {
                if p == 0 && q == 0 {
                    continue;
                }
                total += weight * a.norm_sqr();
            }
        }
    }
    total
}

/// Tail shape of [`tapered_rect_window`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rolloff {
    RaisedCosine,
    Linear,
}

impl Rolloff {
    /// Rising tail value at position `s` of `alpha` tail samples, in `(0, 1)`.
    fn rise(self, s: usize, alpha: usize) -> f64 {
        let u = (s + 1) as f64 / (alpha + 1) as f64;
        match self {
            Rolloff::RaisedCosine => 0.5 * (1.0 - (PI * u).cos()),
            Rolloff::Linear => u,
        }
    }
}

/// Demultiplexing window of `K` taps: flat `1/sqrt(N)` on `[0, N + d_s)` with
/// `alpha = (K - N - d_s) / 2` tail samples on either side.
pub fn tapered_rect_window(grid: &GridParams, d_s: usize, rolloff: Rolloff) -> Result<Waveform> {
    let (n, k) = (grid.n, grid.k);
    if d_s > k - n || (k - n - d_s) % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "K-N-d_s must be even and non-negative (N={n}, K={k}, d_s={d_s})"
        )));
    }
    let alpha = (k - n - d_s) / 2;
    let amp = 1.0 / (n as f64).sqrt();
    let rise: Vec<f64> = (0..alpha).map(|s| amp * rolloff.rise(s, alpha)).collect();
    let mut taps = rise.clone();
    taps.extend(std::iter::repeat(amp).take(n + d_s));
    taps.extend(rise.iter().rev());
    Waveform::new(taps, -(alpha as i64), *grid)
}
