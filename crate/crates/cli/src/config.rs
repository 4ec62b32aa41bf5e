use std::path::{Path, PathBuf};

use serde::Deserialize;
use whofdm::channel::{Interferer, Sweep};
use whofdm::design::{DesignObjective, Init, OptimizeOptions, Parameterization};
use whofdm::transmux::ChannelStats;
use whofdm::{grid_params, Error, GridParams, Result, Waveform};

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Rectangular,
    Random,
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    #[default]
    Blocks,
    ShortWindow,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub n: usize,
    pub k: usize,
    #[serde(default)]
    pub family: FamilyKind,
    #[serde(default)]
    pub degree: usize,
    pub lambda: Option<f64>,
    pub mainlobe_len: Option<usize>,
    pub band_edge: Option<f64>,
    pub fft_size: Option<usize>,
    pub restarts: Option<usize>,
    pub budget: Option<usize>,
    #[serde(default)]
    pub master_seed: u64,
    pub jitter: Option<f64>,
    #[serde(default)]
    pub init: InitKind,
    pub output: Option<PathBuf>,
}

impl DesignConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn grid(&self) -> Result<GridParams> {
        grid_params(self.n, self.k)
    }

    pub fn parameterization(&self) -> Parameterization {
        match self.family {
            FamilyKind::Blocks => Parameterization::Blocks { degree: self.degree },
            FamilyKind::ShortWindow => Parameterization::ShortWindow,
        }
    }

    pub fn init(&self) -> Init {
        match self.init {
            InitKind::Rectangular => Init::Rectangular,
            InitKind::Random => Init::Random,
        }
    }

    pub fn objective(&self, grid: &GridParams) -> DesignObjective {
        let mut obj = DesignObjective::new(grid);
        if let Some(l) = self.lambda {
            obj.lambda = l;
        }
        if let Some(m) = self.mainlobe_len {
            obj.mainlobe_len = m;
        }
        if let Some(b) = self.band_edge {
            obj.band_edge = b;
        }
        obj.fft_size = self.fft_size;
        obj
    }

    pub fn options(&self) -> OptimizeOptions {
        let d = OptimizeOptions::default();
        OptimizeOptions {
            budget: self.budget.unwrap_or(d.budget),
            restarts: self.restarts.unwrap_or(d.restarts),
            master_seed: self.master_seed,
            jitter: self.jitter.unwrap_or(d.jitter),
        }
    }
}

/// A waveform file, or a rectangular window of amplitude `1/sqrt(N)`.
#[derive(Debug, Deserialize, Clone)]
#[serde(untagged)]
pub enum WaveformSource {
    File(PathBuf),
    Rect { rect_len: usize, offset: i64 },
}

impl WaveformSource {
    fn resolve(&self, base: &Path, grid: Option<GridParams>) -> Result<Waveform> {
        match self {
            WaveformSource::File(p) => Waveform::read(base.join(p)),
            WaveformSource::Rect { rect_len, offset } => {
                let g = grid.ok_or_else(|| {
                    Error::InvalidArgument("rectangular waveforms need n and k in the config".into())
                })?;
                Waveform::rectangular(g, *rect_len, 1.0 / (g.n as f64).sqrt(), *offset)
            }
        }
    }
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub name: String,
    pub tx: WaveformSource,
    /// Defaults to the transmit waveform.
    pub rx: Option<WaveformSource>,
}

pub struct Scheme {
    pub name: String,
    pub tx: Waveform,
    pub rx: Waveform,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub schemes: Vec<SchemeConfig>,
    /// Tap powers in dB at consecutive delays unless `delays` is given.
    pub channel_db: Vec<f64>,
    pub delays: Option<Vec<usize>>,
    #[serde(default = "zero_list_f")]
    pub eps_f: Vec<f64>,
    #[serde(default = "zero_list_i")]
    pub eps_t: Vec<i64>,
    pub sweep: Sweep,
    /// Eb/N0 held fixed during an E_B/E_I sweep.
    #[serde(default = "default_ebn0")]
    pub ebn0_db: f64,
    pub interferer: Option<Interferer>,
    #[serde(default = "default_frames")]
    pub frames_per_trial: usize,
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "yes")]
    pub normalize_r0: bool,
    #[serde(default = "yes")]
    pub cpe_correction: bool,
    #[serde(default)]
    pub noiseless: bool,
}

fn zero_list_f() -> Vec<f64> {
    vec![0.0]
}

fn zero_list_i() -> Vec<i64> {
    vec![0]
}

fn default_ebn0() -> f64 {
    10.0
}

fn default_frames() -> usize {
    17
}

fn yes() -> bool {
    true
}

impl SimulateConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn channel(&self) -> Result<ChannelStats> {
        let powers: Vec<f64> = self.channel_db.iter().map(|d| 10f64.powf(d / 10.0)).collect();
        match &self.delays {
            Some(d) => ChannelStats::new(d.clone(), powers),
            None => ChannelStats::from_db(&self.channel_db),
        }
    }

    pub fn schemes(&self, base: &Path) -> Result<Vec<Scheme>> {
        if self.schemes.is_empty() {
            return Err(Error::InvalidArgument("no schemes configured".into()));
        }
        let grid = match (self.n, self.k) {
            (Some(n), Some(k)) => Some(grid_params(n, k)?),
            (None, None) => None,
            _ => return Err(Error::InvalidArgument("give both n and k or neither".into())),
        };
        self.schemes
            .iter()
            .map(|s| {
                let tx = s.tx.resolve(base, grid)?;
                let rx = match &s.rx {
                    Some(r) => r.resolve(base, grid)?,
                    None => tx.clone(),
                };
                if let Some(g) = grid {
                    if *tx.grid() != g {
                        return Err(Error::Grid(format!("scheme {} does not use N={} K={}", s.name, g.n, g.k)));
                    }
                }
                Ok(Scheme {
                    name: s.name.clone(),
                    tx,
                    rx,
                })
            })
            .collect()
    }
}
