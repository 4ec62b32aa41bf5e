//! Link simulation: Rayleigh multipath, timing and carrier offsets,
//! narrowband interference, AWGN, a rate-1/2 convolutional code with BPSK,
//! one-tap equalization and bit error counting.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::design::derive_seed;
use crate::error::{Error, Result};
use crate::grid::GridParams;
use crate::transmux::{demultiplex, fft_multiplex, ChannelStats, Signal, SymbolFrames};
use crate::waveform::Waveform;

/// One static draw of the multipath channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub delays: Vec<usize>,
    pub taps: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn identity() -> Self {
        Self {
            delays: vec![0],
            taps: vec![Complex64::new(1.0, 0.0)],
        }
    }

    /// `sum_l r_l s[n - d_l]`.
    pub fn apply(&self, s: &Signal) -> Signal {
        let max_d = self.delays.iter().copied().max().unwrap_or(0);
        let mut out = Signal::zeros(s.start, s.samples.len() + max_d);
        for (&d, &r) in self.delays.iter().zip(&self.taps) {
            for (t, &x) in s.samples.iter().enumerate() {
                out.samples[t + d] += r * x;
            }
        }
        out
    }
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * sigma
}

/// Circular complex Gaussian taps with the profile's variances, optionally
/// divided by the drawn direct-path gain so that `r_0 = 1`.
pub fn draw_channel<R: Rng + ?Sized>(stats: &ChannelStats, normalize_r0: bool, rng: &mut R) -> ChannelRealization {
    let mut taps: Vec<Complex64> = stats
        .powers
        .iter()
        .map(|p| complex_normal(rng, (p / 2.0).sqrt()))
        .collect();
    if normalize_r0 && taps[0].norm() > 0.0 {
        let r0 = taps[0];
        taps.iter_mut().for_each(|t| *t /= r0);
    }
    ChannelRealization {
        delays: stats.delays.clone(),
        taps,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InterfererKind {
    /// Band-limited Gaussian noise one subcarrier wide.
    #[default]
    Gaussian,
    /// A single complex tone with random phase.
    Tone,
}

/// Narrowband interferer centred on (possibly fractional) tone `center_tone`,
/// with mean power `power_db_rel` dB relative to the mean signal power.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interferer {
    pub center_tone: f64,
    pub power_db_rel: f64,
    #[serde(default)]
    pub kind: InterfererKind,
}

/// Interferer samples over `len` samples with mean power `power`.
///
/// Gaussian mode shapes white noise in blocks of `16 N` samples, keeping
/// the FFT bins inside `[center - 1/2, center + 1/2]` subcarriers, and
/// overlap-adds the blocks at half-block hops with a sine window.
pub fn interferer_samples<R: Rng + ?Sized>(
    grid: &GridParams,
    intf: &Interferer,
    power: f64,
    start: i64,
    len: usize,
    rng: &mut R,
) -> Vec<Complex64> {
    let n = grid.n;
    match intf.kind {
        InterfererKind::Tone => {
            let phase = rng.random_range(0.0..2.0 * PI);
            let w = 2.0 * PI * intf.center_tone / n as f64;
            (0..len)
                .map(|t| Complex64::from_polar(power.sqrt(), phase + w * (start + t as i64) as f64))
                .collect()
        }
        InterfererKind::Gaussian => {
            let block = 16 * n;
            let hop = block / 2;
            let per_tone = block / n;
            let lo = ((intf.center_tone - 0.5) * per_tone as f64).ceil() as i64;
            let hi = ((intf.center_tone + 0.5) * per_tone as f64).ceil() as i64;
            let kept = (hi - lo) as usize;
            let mut planner = FftPlanner::new();
            let fwd = planner.plan_fft_forward(block);
            let inv = planner.plan_fft_inverse(block);
            let scale = (power * block as f64 / kept as f64).sqrt() / block as f64;
            let window: Vec<f64> = (0..block)
                .map(|t| (PI * (t as f64 + 0.5) / block as f64).sin())
                .collect();
            let mut out = vec![Complex64::new(0.0, 0.0); len + 2 * block];
            let mut buf = vec![Complex64::new(0.0, 0.0); block];
            let mut masked = vec![Complex64::new(0.0, 0.0); block];
            // blocks start half a block early so every output sample sees two
            let mut pos = 0usize;
            while pos < len + hop {
                for b in buf.iter_mut() {
                    *b = complex_normal(rng, std::f64::consts::FRAC_1_SQRT_2);
                }
                fwd.process(&mut buf);
                masked.iter_mut().for_each(|m| *m = Complex64::new(0.0, 0.0));
                for bin in lo..hi {
                    let idx = bin.rem_euclid(block as i64) as usize;
                    masked[idx] = buf[idx];
                }
                inv.process(&mut masked);
                for (t, m) in masked.iter().enumerate() {
                    out[pos + t] += m * (scale * window[t]);
                }
                pos += hop;
            }
            out.drain(..hop);
            out.truncate(len);
            out
        }
    }
}

/// Receiver-side impairments, observed over `[window.0, window.0 + window.1)`.
#[derive(Clone, Debug)]
pub struct Impairments<'a> {
    pub channel: &'a ChannelRealization,
    /// The receiver sees `s[n + eps_t]`.
    pub eps_t: i64,
    /// Carrier offset in subcarrier spacings.
    pub eps_f: f64,
    /// Per-dimension noise standard deviation (complex variance `2 sigma^2`).
    pub noise_sigma: f64,
    /// Interferer and its absolute mean power.
    pub interferer: Option<(Interferer, f64)>,
}

/// Applies, in order: multipath, timing shift, carrier offset
/// `exp(j 2 pi eps_f n / N)`, interferer, AWGN.
pub fn impair<R: Rng + ?Sized>(
    s: &Signal,
    grid: &GridParams,
    imp: &Impairments,
    window: (i64, usize),
    rng: &mut R,
) -> Signal {
    let faded = imp.channel.apply(s);
    let (start, len) = window;
    let mut out = Signal::zeros(start, len);
    let step = 2.0 * PI * imp.eps_f / grid.n as f64;
    for (t, o) in out.samples.iter_mut().enumerate() {
        let n = start + t as i64;
        let x = faded.at(n + imp.eps_t);
        *o = if imp.eps_f != 0.0 {
            x * Complex64::from_polar(1.0, step * n as f64)
        } else {
            x
        };
    }
    if let Some((intf, power)) = &imp.interferer {
        let extra = interferer_samples(grid, intf, *power, start, len, rng);
        for (o, e) in out.samples.iter_mut().zip(extra) {
            *o += e;
        }
    }
    if imp.noise_sigma > 0.0 {
        for o in out.samples.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *o += Complex64::new(re, im) * imp.noise_sigma;
        }
    }
    out
}

/// Constraint length 7, generators 133 and 171 (octal).
pub const CONSTRAINT_LEN: usize = 7;
const G0: u32 = 0o133;
const G1: u32 = 0o171;
const STATES: usize = 1 << (CONSTRAINT_LEN - 1);

fn outputs(reg: u32) -> (u8, u8) {
    (((reg & G0).count_ones() & 1) as u8, ((reg & G1).count_ones() & 1) as u8)
}

/// Rate-1/2 encoding followed by six zero tail bits.
pub fn conv_encode(bits: &[u8]) -> Vec<u8> {
    let mut state = 0u32;
    let mut out = Vec::with_capacity(2 * (bits.len() + CONSTRAINT_LEN - 1));
    for &b in bits.iter().chain(std::iter::repeat(&0u8).take(CONSTRAINT_LEN - 1)) {
        let reg = ((b as u32 & 1) << (CONSTRAINT_LEN - 1)) | state;
        let (o0, o1) = outputs(reg);
        out.push(o0);
        out.push(o1);
        state = reg >> 1;
    }
    out
}

/// Soft-input maximum-likelihood decoding of a zero-terminated codeword.
/// Positive LLRs favour bit 0.
pub fn viterbi_decode(llrs: &[f64]) -> Result<Vec<u8>> {
    if llrs.len() % 2 != 0 || llrs.len() < 2 * (CONSTRAINT_LEN - 1) {
        return Err(Error::InvalidArgument(format!(
            "{} soft values do not form a terminated codeword",
            llrs.len()
        )));
    }
    let steps = llrs.len() / 2;
    let mut metric = vec![f64::NEG_INFINITY; STATES];
    metric[0] = 0.0;
    let mut next = vec![0.0; STATES];
    let mut decisions = vec![0u8; steps * STATES];
    let branch: Vec<(u8, u8)> = (0..2 * STATES as u32).map(outputs).collect();
    for t in 0..steps {
        let (l0, l1) = (llrs[2 * t], llrs[2 * t + 1]);
        next.iter_mut().for_each(|m| *m = f64::NEG_INFINITY);
        for ns in 0..STATES {
            let b = ns >> (CONSTRAINT_LEN - 2);
            for lsb in 0..2 {
                let s = ((ns << 1) & (STATES - 1)) | lsb;
                if metric[s] == f64::NEG_INFINITY {
                    continue;
                }
                let (o0, o1) = branch[(b << (CONSTRAINT_LEN - 1)) | s];
                let bm = if o0 == 0 { l0 } else { -l0 } + if o1 == 0 { l1 } else { -l1 };
                let m = metric[s] + bm;
                if m > next[ns] {
                    next[ns] = m;
                    decisions[t * STATES + ns] = lsb as u8;
                }
            }
        }
        std::mem::swap(&mut metric, &mut next);
    }
    let mut state = 0usize;
    let mut bits = vec![0u8; steps];
    for t in (0..steps).rev() {
        bits[t] = (state >> (CONSTRAINT_LEN - 2)) as u8;
        let lsb = decisions[t * STATES + state] as usize;
        state = ((state << 1) & (STATES - 1)) | lsb;
    }
    bits.truncate(steps - (CONSTRAINT_LEN - 1));
    Ok(bits)
}

/// Operating-point sweep of [`run_ber`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// Eb/N0 values in dB.
    EbN0(Vec<f64>),
    /// E_B/E_I values in dB at the configured Eb/N0; needs an interferer.
    EbI(Vec<f64>),
}

impl Sweep {
    pub fn points(&self) -> &[f64] {
        match self {
            Sweep::EbN0(v) | Sweep::EbI(v) => v,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinkConfig {
    pub tx_waveform: Waveform,
    pub rx_waveform: Waveform,
    pub ebn0_db: f64,
    /// Drop AWGN entirely (for reconstruction checks).
    pub noiseless: bool,
    pub eps_f: f64,
    pub eps_t: i64,
    pub channel: ChannelStats,
    pub normalize_r0: bool,
    pub interferer: Option<Interferer>,
    /// Remove the carrier-offset phase advance `2 pi eps_f i K / N` of frame
    /// `i` relative to the training frame.
    pub cpe_correction: bool,
    /// One training frame plus data frames.
    pub frames_per_trial: usize,
    pub trials: usize,
    pub master_seed: u64,
    /// Rayon worker count; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl LinkConfig {
    pub fn new(tx: Waveform, rx: Waveform, channel: ChannelStats) -> Self {
        Self {
            tx_waveform: tx,
            rx_waveform: rx,
            ebn0_db: 10.0,
            noiseless: false,
            eps_f: 0.0,
            eps_t: 0,
            channel,
            normalize_r0: true,
            interferer: None,
            cpe_correction: true,
            frames_per_trial: 17,
            trials: 100,
            master_seed: 0,
            workers: None,
        }
    }

    pub fn grid(&self) -> &GridParams {
        self.tx_waveform.grid()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tx_waveform.grid() != self.rx_waveform.grid() {
            return Err(Error::Grid("transmit and receive waveforms use different lattices".into()));
        }
        if !self.ebn0_db.is_finite() {
            return Err(Error::InvalidArgument("Eb/N0 must be finite".into()));
        }
        if !(self.eps_f.abs() < 1.0) {
            return Err(Error::InvalidArgument("|eps_f| must be below 1".into()));
        }
        if self.frames_per_trial < 2 || self.trials == 0 {
            return Err(Error::InvalidArgument(
                "need at least one trial of one training and one data frame".into(),
            ));
        }
        if self.info_bits_per_trial() == 0 {
            return Err(Error::InvalidArgument("data frames too short for the code tail".into()));
        }
        if self.normalize_r0 && self.channel.powers[0] == 0.0 {
            return Err(Error::InvalidArgument("r_0 normalization needs a direct path".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("workers must be positive".into()));
        }
        Ok(())
    }

    pub fn data_frames(&self) -> usize {
        self.frames_per_trial - 1
    }

    pub fn info_bits_per_trial(&self) -> usize {
        let coded = self.data_frames() * self.grid().n;
        (coded / 2).saturating_sub(CONSTRAINT_LEN - 1)
    }

    /// Energy per information bit: transmit energy per BPSK symbol over the code rate.
    pub fn eb(&self) -> f64 {
        self.tx_waveform.energy() * 2.0
    }

    /// Per-dimension noise standard deviation for `ebn0_db`, from `N0 = 2 sigma^2 = Eb / (Eb/N0)`.
    pub fn noise_sigma(&self, ebn0_db: f64) -> f64 {
        let n0 = self.eb() / 10f64.powf(ebn0_db / 10.0);
        (n0 / 2.0).sqrt()
    }

    /// Mean transmit power per sample for unit-energy symbols.
    pub fn signal_power(&self) -> f64 {
        let g = self.grid();
        g.n as f64 * self.tx_waveform.energy() / g.k as f64
    }

    fn pad_frames(&self) -> usize {
        let k = self.grid().k;
        let span = self.tx_waveform.len().max(self.rx_waveform.len()) + self.channel.max_delay() + self.eps_t.unsigned_abs() as usize;
        span.div_ceil(k) + 1
    }
}

/// BER measured at one operating point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BerPoint {
    pub x_db: f64,
    pub ber: f64,
    pub bits: u64,
    pub errors: u64,
}

impl BerPoint {
    pub fn new(x_db: f64, bits: u64, errors: u64) -> Self {
        Self {
            x_db,
            ber: if bits == 0 { 0.0 } else { errors as f64 / bits as f64 },
            bits,
            errors,
        }
    }

    /// 95% Wilson score interval.
    pub fn ci95(&self) -> (f64, f64) {
        wilson_interval(self.errors, self.bits, 1.959_963_984_540_054)
    }
}

pub fn wilson_interval(errors: u64, bits: u64, z: f64) -> (f64, f64) {
    if bits == 0 {
        return (0.0, 1.0);
    }
    let n = bits as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn ber_csv(points: &[BerPoint]) -> String {
    let mut s = String::from("x_db,ber,bits,errors\n");
    for p in points {
        writeln!(s, "{},{:.6e},{},{}", p.x_db, p.ber, p.bits, p.errors).unwrap();
    }
    s
}

/// Per-tone gains from one all-ones frame sent alone, without noise or
/// interference but with the channel and both offsets.
pub fn train_equalizer(cfg: &LinkConfig, channel: &ChannelRealization) -> Result<Vec<Complex64>> {
    let g = *cfg.grid();
    let ones = SymbolFrames::new(g.n, vec![Complex64::new(1.0, 0.0); g.n])?;
    let s = fft_multiplex(&ones, &cfg.tx_waveform)?;
    let imp = Impairments {
        channel,
        eps_t: cfg.eps_t,
        eps_f: cfg.eps_f,
        noise_sigma: 0.0,
        interferer: None,
    };
    let window = observation_window(cfg, 1);
    // no randomness is consumed without noise or interference
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = impair(&s, &g, &imp, window, &mut rng);
    Ok(demultiplex(&r, &cfg.rx_waveform, 1).frame(0).to_vec())
}

fn observation_window(cfg: &LinkConfig, frames: usize) -> (i64, usize) {
    let w = &cfg.rx_waveform;
    let k = cfg.grid().k;
    (w.offset(), w.len() + (frames.max(1) - 1) * k)
}

/// Equalized, phase-corrected soft symbols of the data frames.
struct TrialOutput {
    info: Vec<u8>,
    decoded: Vec<u8>,
    symbols: Vec<Complex64>,
    sent: Vec<Complex64>,
}

fn run_trial(cfg: &LinkConfig, noise_sigma: f64, interferer_power: f64, seed: u64) -> Result<TrialOutput> {
    let g = *cfg.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channel = draw_channel(&cfg.channel, cfg.normalize_r0, &mut rng);
    let gains = train_equalizer(cfg, &channel)?;

    let info: Vec<u8> = (0..cfg.info_bits_per_trial()).map(|_| rng.random_range(0..2u8)).collect();
    let mut coded = conv_encode(&info);
    let data_syms = cfg.data_frames() * g.n;
    coded.resize(data_syms, 0);
    let pad = cfg.pad_frames();
    let total = 2 * pad + cfg.data_frames();
    let bpsk = |b: u8| Complex64::new(if b == 0 { 1.0 } else { -1.0 }, 0.0);
    let mut symbols = Vec::with_capacity(total * g.n);
    for _ in 0..pad * g.n {
        symbols.push(bpsk(rng.random_range(0..2u8)));
    }
    symbols.extend(coded.iter().map(|&b| bpsk(b)));
    for _ in 0..pad * g.n {
        symbols.push(bpsk(rng.random_range(0..2u8)));
    }
    let frames = SymbolFrames::new(g.n, symbols)?;
    let s = fft_multiplex(&frames, &cfg.tx_waveform)?;
    let imp = Impairments {
        channel: &channel,
        eps_t: cfg.eps_t,
        eps_f: cfg.eps_f,
        noise_sigma,
        interferer: cfg.interferer.map(|i| (i, interferer_power)),
    };
    let r = impair(&s, &g, &imp, observation_window(cfg, total), &mut rng);
    let b = demultiplex(&r, &cfg.rx_waveform, total);

    let mut llrs = Vec::with_capacity(data_syms);
    let mut eq = Vec::with_capacity(data_syms);
    let mut sent = Vec::with_capacity(data_syms);
    for i in pad..pad + cfg.data_frames() {
        let rot = if cfg.cpe_correction {
            Complex64::from_polar(1.0, -2.0 * PI * cfg.eps_f * (i * g.k) as f64 / g.n as f64)
        } else {
            Complex64::new(1.0, 0.0)
        };
        for (k, h) in gains.iter().enumerate() {
            let y = b.get(i, k) * rot;
            llrs.push((h.conj() * y).re);
            eq.push(y / h);
            sent.push(frames.get(i, k));
        }
    }
    let coded_len = 2 * (info.len() + CONSTRAINT_LEN - 1);
    let decoded = viterbi_decode(&llrs[..coded_len])?;
    Ok(TrialOutput {
        info,
        decoded,
        symbols: eq,
        sent,
    })
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// BER at each operating point; trials run in parallel, each with its own
/// generator seeded from `(master_seed, point, trial)`.
pub fn run_ber(cfg: &LinkConfig, sweep: &Sweep) -> Result<Vec<BerPoint>> {
    cfg.validate()?;
    if matches!(sweep, Sweep::EbI(_)) && cfg.interferer.is_none() {
        return Err(Error::InvalidArgument("an E_B/E_I sweep needs an interferer".into()));
    }
    with_pool(cfg.workers, || {
        sweep
            .points()
            .iter()
            .enumerate()
            .map(|(pi, &x)| {
                let (ebn0, ebi) = match sweep {
                    Sweep::EbN0(_) => (x, None),
                    Sweep::EbI(_) => (cfg.ebn0_db, Some(x)),
                };
                let sigma = if cfg.noiseless { 0.0 } else { cfg.noise_sigma(ebn0) };
                let ipow = match (ebi, cfg.interferer) {
                    (Some(db), _) => cfg.signal_power() / 10f64.powf(db / 10.0),
                    (None, Some(i)) => cfg.signal_power() * 10f64.powf(i.power_db_rel / 10.0),
                    (None, None) => 0.0,
                };
                let point_seed = derive_seed(cfg.master_seed, pi as u64);
                let counts = (0..cfg.trials)
                    .into_par_iter()
                    .map(|t| {
                        let out = run_trial(cfg, sigma, ipow, derive_seed(point_seed, t as u64))?;
                        let errors = out.info.iter().zip(&out.decoded).filter(|(a, b)| a != b).count();
                        Ok((out.info.len() as u64, errors as u64))
                    })
                    .collect::<Result<Vec<(u64, u64)>>>()?;
                let (bits, errors) = counts.iter().fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1));
                Ok(BerPoint::new(x, bits, errors))
            })
            .collect::<Result<Vec<BerPoint>>>()
    })?
}

/// Largest deviation between equalized and transmitted data symbols over
/// `trials` noiseless trials (before decoding).
pub fn symbol_error(cfg: &LinkConfig, trials: usize) -> Result<f64> {
    cfg.validate()?;
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let out = run_trial(cfg, 0.0, 0.0, derive_seed(cfg.master_seed, t as u64))?;
        for (y, a) in out.symbols.iter().zip(&out.sent) {
            worst = worst.max((y - a).norm());
        }
    }
    Ok(worst)
}
