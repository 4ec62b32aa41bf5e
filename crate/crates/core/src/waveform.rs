//! Real prototype waveforms and their text file format.
//!
//! The file format is a single header line
//! `# wfm v1 N=<int> K=<int> offset=<int> len=<int>` followed by one tap per
//! line, written with 17 significant digits so that a read after a write
//! reproduces every tap bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{grid_params, GridParams};

/// A finitely supported real waveform `v[offset + t] = taps[t]` attached to a lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    taps: Vec<f64>,
    offset: i64,
    grid: GridParams,
}

impl Waveform {
    /// Builds a waveform, trimming exact zeros at both ends.
    pub fn new(taps: Vec<f64>, offset: i64, grid: GridParams) -> Result<Self> {
        let Some(first) = taps.iter().position(|&t| t != 0.0) else {
            return Err(Error::InvalidArgument("waveform has no nonzero taps".into()));
        };
        let last = taps.iter().rposition(|&t| t != 0.0).unwrap();
        if taps[first..=last].iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("waveform has non-finite taps".into()));
        }
        Ok(Self {
            taps: taps[first..=last].to_vec(),
            offset: offset + first as i64,
            grid,
        })
    }

    /// Rectangular window of `len` taps with value `amplitude`, starting at `offset`.
    pub fn rectangular(grid: GridParams, len: usize, amplitude: f64, offset: i64) -> Result<Self> {
        Self::new(vec![amplitude; len], offset, grid)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn grid(&self) -> &GridParams {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// One past the last supported sample index.
    pub fn end(&self) -> i64 {
        self.offset + self.taps.len() as i64
    }

    /// Sample at absolute index `n` (zero outside the support).
    pub fn at(&self, n: i64) -> f64 {
        let t = n - self.offset;
        if t < 0 || t >= self.taps.len() as i64 {
            0.0
        } else {
            self.taps[t as usize]
        }
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }

    pub fn nonzero_taps(&self) -> usize {
        self.taps.iter().filter(|&&t| t != 0.0).count()
    }

    /// Delays the waveform by `d` samples.
    pub fn shifted(&self, d: i64) -> Self {
        Self {
            taps: self.taps.clone(),
            offset: self.offset + d,
            grid: self.grid,
        }
    }

    /// The same taps starting at sample 0.
    pub fn canonical(&self) -> Self {
        self.shifted(-self.offset)
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.taps.iter().map(|t| t * s).collect(), self.offset, self.grid)
    }

    /// Time reverse `v[-n]`.
    pub fn reversed(&self) -> Self {
        let mut taps = self.taps.clone();
        taps.reverse();
        Self {
            taps,
            offset: -(self.end() - 1),
            grid: self.grid,
        }
    }

    pub fn with_grid(&self, grid: GridParams) -> Self {
        Self {
            taps: self.taps.clone(),
            offset: self.offset,
            grid,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# wfm v1 N={} K={} offset={} len={}\n",
            self.grid.n,
            self.grid.k,
            self.offset,
            self.taps.len()
        );
        for t in &self.taps {
            writeln!(s, "{t:.16e}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty waveform file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 || fields[0] != "#" || fields[1] != "wfm" || fields[2] != "v1" {
            return Err(Error::Parse(format!("bad waveform header: {header:?}")));
        }
        let value = |idx: usize, key: &str| -> Result<i64> {
            fields[idx]
                .strip_prefix(key)
                .and_then(|v| v.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad header field {:?}", fields[idx])))
        };
        let (n, k, offset, len) = (
            value(3, "N")?,
            value(4, "K")?,
            value(5, "offset")?,
            value(6, "len")?,
        );
        if n <= 0 || k <= 0 || len <= 0 {
            return Err(Error::Parse("header values must be positive".into()));
        }
        let grid = grid_params(n as usize, k as usize)?;
        let taps = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad tap value {l:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if taps.len() != len as usize {
            return Err(Error::Parse(format!(
                "header announces {len} taps, file has {}",
                taps.len()
            )));
        }
        if taps[0] == 0.0 || taps[taps.len() - 1] == 0.0 {
            return Err(Error::Parse("first and last taps must be nonzero".into()));
        }
        Self::new(taps, offset, grid)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
