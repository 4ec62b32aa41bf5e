//! Arithmetic skeleton of an `N`-channel, `K`-sample Weyl-Heisenberg lattice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lattice parameters derived from the channel count `n` and frame interval `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct GridParams {
    /// Channels (symbols) per frame.
    pub n: usize,
    /// Frame interval in samples.
    pub k: usize,
    /// `gcd(n, k)`, the number of paraunitary blocks.
    pub p: usize,
    /// `n / p`, block width.
    pub j: usize,
    /// `k / p`, block height.
    pub l: usize,
    /// `lcm(n, k)`, the polyphase order.
    pub m: usize,
    /// Guard interval `k - n`.
    pub guard: usize,
}

#[derive(Serialize, Deserialize)]
struct GridSpec {
    n: usize,
    k: usize,
}

impl TryFrom<GridSpec> for GridParams {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Self> {
        grid_params(s.n, s.k)
    }
}

impl From<GridParams> for GridSpec {
    fn from(g: GridParams) -> Self {
        GridSpec { n: g.n, k: g.k }
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn grid_params(n: usize, k: usize) -> Result<GridParams> {
    if n == 0 {
        return Err(Error::Grid("at least one channel is required".into()));
    }
    if k < n {
        return Err(Error::Grid(format!(
            "frame interval K={k} is shorter than N={n}"
        )));
    }
    let p = gcd(n, k);
    let (j, l) = (n / p, k / p);
    Ok(GridParams {
        n,
        k,
        p,
        j,
        l,
        m: j * k,
        guard: k - n,
    })
}

impl GridParams {
    /// Efficiency `N / K`.
    pub fn efficiency(&self) -> f64 {
        self.n as f64 / self.k as f64
    }

    /// Polyphase index `p(i,j) K + i P + r` feeding block `r`, entry `(i, j)`.
    pub fn component_index(&self, i: usize, j: usize, r: usize) -> usize {
        let (p, _) = index_maps(self, i, j);
        p * self.k + i * self.p + r
    }
}

/// Solves `j = p L + i (mod J)` for `p` in `[0, J)` and returns it with the
/// advance exponent `n(i,j) = (p(i,0) + p(0,j) - p(i,j)) / J`, which is 0 or 1.
pub fn index_maps(grid: &GridParams, i: usize, j: usize) -> (usize, usize) {
    let p = solve_p(grid, i, j);
    let s = solve_p(grid, i, 0) + solve_p(grid, 0, j);
    debug_assert!(s >= p && (s - p) % grid.j == 0);
    (p, (s - p) / grid.j)
}

fn solve_p(grid: &GridParams, i: usize, j: usize) -> usize {
    let jj = grid.j;
    (0..jj)
        .find(|&p| (p * grid.l + i) % jj == j % jj)
        .expect("L and J are coprime, so the congruence is solvable")
}
