//! Real paraunitary polynomial matrices from free rotation parameters.
//!
//! Square `L x L` matrices are built as
//! `Q(z) = prod_d (I - u_d u_d^T + z^-1 u_d u_d^T) * R`, with `R` a product of
//! Givens rotations and each `u_d` a unit vector in spherical coordinates.
//! Rectangular `L x J` matrices are the first `J` columns. The module also
//! completes rectangular paraunitary matrices to square ones and builds the
//! family of left inverses used for biorthogonal demultiplexing.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::GridParams;
use crate::laurent::{paraunitarity_defect, LaurentPoly, PolyMatrix};
use crate::waveform::Waveform;
use crate::weyl_heisenberg::{extract_blocks, interleave_blocks_exact, orthonormality_defect};

/// Coefficients below this magnitude are dropped while peeling degree-one factors.
const PEEL_TOL: f64 = 1e-9;
/// Gram-Schmidt residuals below this norm are skipped.
const GS_TOL: f64 = 1e-8;

/// Free parameters of one `L x J` paraunitary matrix of degree at most `degree`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParaunitaryParams {
    pub l: usize,
    pub j: usize,
    pub degree: usize,
    /// `L(L-1)/2` Givens angles of the constant factor.
    pub base_angles: Vec<f64>,
    /// `degree` groups of `L-1` spherical angles, one unit vector per stage.
    pub stage_angles: Vec<Vec<f64>>,
}

impl ParaunitaryParams {
    pub fn base_len(l: usize) -> usize {
        l * l.saturating_sub(1) / 2
    }

    /// Number of real parameters per matrix.
    pub fn param_len(l: usize, degree: usize) -> usize {
        Self::base_len(l) + degree * l.saturating_sub(1)
    }

    pub fn new(
        l: usize,
        j: usize,
        degree: usize,
        base_angles: Vec<f64>,
        stage_angles: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if l == 0 || j == 0 {
            return Err(Error::InvalidArgument("empty paraunitary shape".into()));
        }
        if base_angles.len() != Self::base_len(l)
            || stage_angles.len() != degree
            || stage_angles.iter().any(|s| s.len() != l - 1)
        {
            return Err(Error::Shape(format!(
                "angle counts do not match L={l}, degree={degree}"
            )));
        }
        if base_angles.iter().chain(stage_angles.iter().flatten()).any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("angles must be finite".into()));
        }
        Ok(Self {
            l,
            j,
            degree,
            base_angles,
            stage_angles,
        })
    }

    /// All-zero angles: the first `J` columns of the identity.
    pub fn zeros(l: usize, j: usize, degree: usize) -> Self {
        Self::from_flat(l, j, degree, &vec![0.0; Self::param_len(l, degree)]).unwrap()
    }

    pub fn random<R: Rng + ?Sized>(l: usize, j: usize, degree: usize, rng: &mut R) -> Self {
        let flat: Vec<f64> = (0..Self::param_len(l, degree))
            .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        Self::from_flat(l, j, degree, &flat).unwrap()
    }

    /// Base angles followed by the stage angles, stage by stage.
    pub fn from_flat(l: usize, j: usize, degree: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != Self::param_len(l, degree) {
            return Err(Error::Shape(format!(
                "{} parameters for L={l}, degree={degree}",
                flat.len()
            )));
        }
        let nb = Self::base_len(l);
        let stages = flat[nb..]
            .chunks(l.saturating_sub(1).max(1))
            .take(degree)
            .map(|c| if l > 1 { c.to_vec() } else { Vec::new() })
            .collect::<Vec<_>>();
        let stages = if l == 1 { vec![Vec::new(); degree] } else { stages };
        Self::new(l, j, degree, flat[..nb].to_vec(), stages)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.base_angles.clone();
        for s in &self.stage_angles {
            v.extend_from_slice(s);
        }
        v
    }

    /// Key-value text block: `L=`, `J=`, `degree=`, `base_angles=`, `stage_angles=`.
    /// Stage groups are separated by `;`, values by `,`.
    pub fn to_kv(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|a| format!("{a:.16e}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = String::new();
        writeln!(s, "L={}", self.l).unwrap();
        writeln!(s, "J={}", self.j).unwrap();
        writeln!(s, "degree={}", self.degree).unwrap();
        writeln!(s, "base_angles={}", join(&self.base_angles)).unwrap();
        let stages: Vec<String> = self.stage_angles.iter().map(|g| join(g)).collect();
        writeln!(s, "stage_angles={}", stages.join(";")).unwrap();
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut l = None;
        let mut j = None;
        let mut degree = None;
        let mut base = None;
        let mut stages = None;
        let parse_list = |v: &str| -> Result<Vec<f64>> {
            if v.trim().is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad angle {x:?}")))
                })
                .collect()
        };
        let parse_int = |v: &str| -> Result<usize> {
            v.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad integer {v:?}")))
        };
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got {line:?}")))?;
            match key.trim() {
                "L" => l = Some(parse_int(value)?),
                "J" => j = Some(parse_int(value)?),
                "degree" => degree = Some(parse_int(value)?),
                "base_angles" => base = Some(parse_list(value)?),
                "stage_angles" => {
                    stages = Some(if value.trim().is_empty() {
                        Vec::new()
                    } else {
                        value.split(';').map(parse_list).collect::<Result<Vec<_>>>()?
                    })
                }
                other => return Err(Error::Parse(format!("unknown key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("missing key {k}"));
        let l = l.ok_or_else(|| missing("L"))?;
        let degree = degree.ok_or_else(|| missing("degree"))?;
        let mut stages = stages.unwrap_or_default();
        if l == 1 {
            stages = vec![Vec::new(); degree];
        }
        Self::new(
            l,
            j.ok_or_else(|| missing("J"))?,
            degree,
            base.ok_or_else(|| missing("base_angles"))?,
            stages,
        )
    }
}

/// Product of Givens rotations over the planes `(a, b)`, `a < b`, in lexicographic order.
pub fn givens_product(l: usize, angles: &[f64]) -> DMatrix<f64> {
    assert_eq!(angles.len(), ParaunitaryParams::base_len(l));
    let mut r = DMatrix::<f64>::identity(l, l);
    let mut k = 0;
    for a in 0..l {
        for b in (a + 1)..l {
            let (s, c) = angles[k].sin_cos();
            k += 1;
            // right-multiply by the rotation in plane (a, b)
            for row in 0..l {
                let (x, y) = (r[(row, a)], r[(row, b)]);
                r[(row, a)] = c * x + s * y;
                r[(row, b)] = -s * x + c * y;
            }
        }
    }
    r
}

/// Unit vector from `L - 1` spherical angles.
pub fn unit_vector(l: usize, angles: &[f64]) -> DVector<f64> {
    assert_eq!(angles.len(), l.saturating_sub(1));
    let mut u = DVector::<f64>::zeros(l);
    let mut tail = 1.0;
    for (k, &a) in angles.iter().enumerate() {
        u[k] = tail * a.cos();
        tail *= a.sin();
    }
    u[l - 1] = tail;
    u
}

/// Left-multiplies a causal coefficient sequence by `I - uu^T + z^-1 uu^T`.
pub(crate) fn apply_stage(coeffs: &mut Vec<DMatrix<f64>>, u: &DVector<f64>) {
    let cols = coeffs[0].ncols();
    let mut projected: Vec<DMatrix<f64>> = coeffs.iter().map(|c| u * (u.transpose() * c)).collect();
    coeffs.push(DMatrix::zeros(u.len(), cols));
    for d in (0..coeffs.len()).rev() {
        if d < projected.len() {
            coeffs[d] -= &projected[d];
        }
        if d > 0 {
            coeffs[d] += &projected[d - 1];
        }
    }
    projected.clear();
}

/// Causal coefficient matrices `C_0, ..., C_D` (each `L x J`) of the first
/// `J` columns of the square matrix described by `p`.
pub fn rect_coefficients(p: &ParaunitaryParams) -> Vec<DMatrix<f64>> {
    let r = givens_product(p.l, &p.base_angles);
    let mut coeffs = vec![r.columns(0, p.j.min(p.l)).into_owned()];
    for angles in p.stage_angles.iter().rev() {
        let u = unit_vector(p.l, angles);
        apply_stage(&mut coeffs, &u);
    }
    coeffs
}

fn coefficients_to_poly(coeffs: &[DMatrix<f64>], min_deg: i64) -> PolyMatrix {
    let (rows, cols) = coeffs[0].shape();
    let mut m = PolyMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let seq: Vec<f64> = coeffs.iter().map(|x| x[(r, c)]).collect();
            m.set(r, c, LaurentPoly::new(seq, min_deg));
        }
    }
    m
}

pub fn build_square_paraunitary(p: &ParaunitaryParams) -> PolyMatrix {
    let square = ParaunitaryParams { j: p.l, ..p.clone() };
    coefficients_to_poly(&rect_coefficients(&square), 0)
}

pub fn rect_paraunitary(p: &ParaunitaryParams) -> Result<PolyMatrix> {
    if p.j > p.l {
        return Err(Error::Shape(format!(
            "cannot take {} columns of an {}x{} matrix",
            p.j, p.l, p.l
        )));
    }
    Ok(coefficients_to_poly(&rect_coefficients(p), 0))
}

/// Completes an `L x J` paraunitary matrix (unit scale) to a square one whose
/// first `J` columns are the input, unchanged.
///
/// Degree-one factors are peeled off by projecting onto the column space of
/// the highest coefficient, the remaining constant orthonormal columns are
/// completed by Gram-Schmidt over the standard basis (in index order), and
/// the factors are reapplied to the new columns.
pub fn complete_to_square(v: &PolyMatrix, tol: f64) -> Result<PolyMatrix> {
    let (l, j) = v.shape();
    if j > l {
        return Err(Error::Shape(format!("cannot complete a {l}x{j} matrix")));
    }
    let defect = paraunitarity_defect(v, 1.0);
    if defect > tol {
        return Err(Error::NotParaunitary(defect));
    }
    if j == l {
        return Ok(v.clone());
    }
    let (lo, hi) = v.degree_range().ok_or(Error::NotParaunitary(1.0))?;
    let mut coeffs: Vec<DMatrix<f64>> = (lo..=hi)
        .map(|d| DMatrix::from_row_slice(l, j, &v.coefficient(d)))
        .collect();

    let mut stages: Vec<DVector<f64>> = Vec::new();
    let max_steps = j * coeffs.len() + l;
    loop {
        while coeffs.len() > 1 && coeffs.last().unwrap().amax() < PEEL_TOL {
            coeffs.pop();
        }
        if coeffs.len() == 1 {
            break;
        }
        if stages.len() >= max_steps {
            return Err(Error::NotParaunitary(defect));
        }
        let top = coeffs.last().unwrap();
        let (best, _) = top
            .column_iter()
            .enumerate()
            .map(|(c, col)| (c, col.norm()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        let u: DVector<f64> = top.column(best).normalize();
        // F~(z) V(z) = (I - uu^T) V(z) + z uu^T V(z)
        let projected: Vec<DMatrix<f64>> = coeffs.iter().map(|c| &u * (u.transpose() * c)).collect();
        if projected[0].amax() > 1e3 * PEEL_TOL.max(tol) {
            return Err(Error::NotParaunitary(defect));
        }
        for d in 0..coeffs.len() {
            coeffs[d] -= &projected[d];
            if d + 1 < projected.len() {
                coeffs[d] += &projected[d + 1];
            }
        }
        stages.push(u);
    }

    let base = &coeffs[0];
    let mut basis: Vec<DVector<f64>> = base.column_iter().map(|c| c.into_owned()).collect();
    let mut extra: Vec<DVector<f64>> = Vec::new();
    for e in 0..l {
        if basis.len() == l {
            break;
        }
        let mut r = DVector::<f64>::zeros(l);
        r[e] = 1.0;
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&r) / q.dot(q);
                r -= q * proj;
            }
        }
        let norm = r.norm();
        if norm < GS_TOL {
            continue;
        }
        r /= norm;
        basis.push(r.clone());
        extra.push(r);
    }
    if extra.len() != l - j {
        return Err(Error::NotParaunitary(defect));
    }
    let mut completion = vec![DMatrix::from_columns(&extra)];
    for u in stages.iter().rev() {
        apply_stage(&mut completion, u);
    }
    let completion = coefficients_to_poly(&completion, lo);
    v.hcat(&completion)
}

/// `U(z) = V_s(z) [I; A(z)]`; `U(z^-1)^T` is a left inverse of the first `J`
/// columns of `V_s`.
pub fn left_inverse_family(v_s: &PolyMatrix, a: &PolyMatrix) -> Result<PolyMatrix> {
    let l = v_s.rows();
    if v_s.cols() != l || a.rows() > l || a.rows() + a.cols() != l {
        return Err(Error::Shape(format!(
            "V_s is {}x{}, A is {}x{}",
            v_s.rows(),
            v_s.cols(),
            a.rows(),
            a.cols()
        )));
    }
    let j = a.cols();
    let stacked = PolyMatrix::identity(j).vcat(a)?;
    v_s.mat_mul(&stacked)
}

/// Spherical angles of a unit vector, inverse of [`unit_vector`] up to sign.
pub fn sphere_angles(u: &DVector<f64>) -> Vec<f64> {
    let l = u.len();
    let mut angles = Vec::with_capacity(l.saturating_sub(1));
    for k in 0..l.saturating_sub(1) {
        if k + 2 == l {
            angles.push(u[k + 1].atan2(u[k]));
        } else {
            let tail = u.rows(k + 1, l - k - 1).norm();
            angles.push(tail.atan2(u[k]));
        }
    }
    angles
}

/// Givens angles of a rotation matrix, inverse of [`givens_product`].
pub fn givens_angles(r: &DMatrix<f64>) -> Result<Vec<f64>> {
    let l = r.nrows();
    let mut x = r.clone();
    let mut angles = Vec::with_capacity(ParaunitaryParams::base_len(l));
    for a in 0..l {
        // column a of A_a = G(a, a+1) ... G(a, l-1) acting on e_a
        let col: Vec<f64> = (0..l).map(|i| x[(i, a)]).collect();
        let mut thetas = vec![0.0; l];
        let mut rest: Vec<f64> = col.clone();
        for b in ((a + 1)..l).rev() {
            let head = if b == a + 1 {
                rest[a]
            } else {
                rest[a..b].iter().map(|c| c * c).sum::<f64>().sqrt()
            };
            let theta = rest[b].atan2(head);
            thetas[b] = theta;
            let c = theta.cos();
            if c.abs() > 1e-300 {
                for item in rest.iter_mut().take(b) {
                    *item /= c;
                }
            }
        }
        // left-multiply by A_a^T, which mixes rows a and b
        for b in (a + 1)..l {
            let (s, c) = thetas[b].sin_cos();
            for col in 0..l {
                let (p, q) = (x[(a, col)], x[(b, col)]);
                x[(a, col)] = c * p + s * q;
                x[(b, col)] = -s * p + c * q;
            }
        }
        angles.extend_from_slice(&thetas[(a + 1)..]);
    }
    let residual = (x - DMatrix::<f64>::identity(l, l)).amax();
    if residual > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "matrix is not a rotation (residual {residual:e})"
        )));
    }
    Ok(angles)
}

/// Parameters reproducing a unit-scale `L x J` paraunitary matrix, and the
/// delay `d` with `v(z) = z^-d rect_paraunitary(params)`.
///
/// The degree of the result is the number of degree-one factors needed,
/// which is the McMillan degree of the square completion.
pub fn factorize_rect(v: &PolyMatrix, tol: f64) -> Result<(ParaunitaryParams, i64)> {
    let (l, j) = v.shape();
    let (lo, _) = v.degree_range().ok_or(Error::NotParaunitary(1.0))?;
    let causal = v.delayed(-lo);
    let square = complete_to_square(&causal, tol)?;
    let (_, hi) = square.degree_range().unwrap();
    let mut coeffs: Vec<DMatrix<f64>> = (0..=hi)
        .map(|d| DMatrix::from_row_slice(l, l, &square.coefficient(d)))
        .collect();
    let mut stages: Vec<Vec<f64>> = Vec::new();
    let max_steps = l * coeffs.len();
    loop {
        while coeffs.len() > 1 && coeffs.last().unwrap().amax() < PEEL_TOL {
            coeffs.pop();
        }
        if coeffs.len() == 1 {
            break;
        }
        if stages.len() >= max_steps {
            return Err(Error::NotParaunitary(tol));
        }
        let top = coeffs.last().unwrap();
        let best = top
            .column_iter()
            .enumerate()
            .map(|(c, col)| (c, col.norm()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
            .0;
        let u: DVector<f64> = top.column(best).normalize();
        let projected: Vec<DMatrix<f64>> = coeffs.iter().map(|c| &u * (u.transpose() * c)).collect();
        for d in 0..coeffs.len() {
            coeffs[d] -= &projected[d];
            if d + 1 < projected.len() {
                coeffs[d] += &projected[d + 1];
            }
        }
        stages.push(sphere_angles(&u));
    }
    let mut r = coeffs.swap_remove(0);
    if r.determinant() < 0.0 {
        if j == l {
            return Err(Error::InvalidArgument(
                "square matrix with determinant -1 has no rotation factorization".into(),
            ));
        }
        r.column_mut(l - 1).neg_mut();
    }
    let base = givens_angles(&r)?;
    let degree = stages.len();
    Ok((ParaunitaryParams::new(l, j, degree, base, stages)?, lo))
}

/// Free polynomial matrices `A_r(z)`, one `(L-J) x J` matrix per block.
#[derive(Clone, Debug, PartialEq)]
pub struct BiorthParams {
    pub blocks: Vec<PolyMatrix>,
}

impl BiorthParams {
    pub fn new(grid: &GridParams, blocks: Vec<PolyMatrix>) -> Result<Self> {
        if blocks.len() != grid.p
            || blocks.iter().any(|b| b.shape() != (grid.l - grid.j, grid.j))
        {
            return Err(Error::Shape(format!(
                "expected {} blocks of size {}x{}",
                grid.p,
                grid.l - grid.j,
                grid.j
            )));
        }
        Ok(Self { blocks })
    }

    /// `A = 0`, which selects the orthogonal partner.
    pub fn zeros(grid: &GridParams) -> Self {
        Self {
            blocks: vec![PolyMatrix::zeros(grid.l - grid.j, grid.j); grid.p],
        }
    }

    /// The same matrix in every block.
    pub fn uniform(grid: &GridParams, a: PolyMatrix) -> Result<Self> {
        Self::new(grid, vec![a; grid.p])
    }
}

/// Interleaves left-inverse blocks into a demultiplexing waveform, using the
/// same polyphase layout (and time origin) as the multiplexing prototype.
pub fn synthesize_biorthogonal(blocks_u: &[PolyMatrix], grid: &GridParams) -> Result<Waveform> {
    interleave_blocks_exact(blocks_u, grid)
}

/// Unit-scale square completions of the blocks of an orthonormal prototype.
pub fn completed_blocks(v: &Waveform) -> Result<Vec<PolyMatrix>> {
    let defect = orthonormality_defect(v);
    if defect > 1e-9 {
        return Err(Error::NotOrthonormal(defect));
    }
    let root_n = (v.grid().n as f64).sqrt();
    extract_blocks(v)
        .iter()
        .map(|b| complete_to_square(&b.scaled(root_n), 1e-8))
        .collect()
}

/// Left-inverse blocks `U_r^o` at waveform scale for the given `A_r(z)`.
pub fn biorthogonal_blocks(v: &Waveform, a: &BiorthParams) -> Result<Vec<PolyMatrix>> {
    let g = v.grid();
    if a.blocks.len() != g.p {
        return Err(Error::Shape(format!("{} A blocks for P={}", a.blocks.len(), g.p)));
    }
    let inv_root_n = 1.0 / (g.n as f64).sqrt();
    completed_blocks(v)?
        .iter()
        .zip(&a.blocks)
        .map(|(vs, ar)| Ok(left_inverse_family(vs, ar)?.scaled(inv_root_n)))
        .collect()
}

/// Demultiplexing waveform biorthogonal to the orthonormal prototype `v`.
pub fn biorthogonal_partner(v: &Waveform, a: &BiorthParams) -> Result<Waveform> {
    synthesize_biorthogonal(&biorthogonal_blocks(v, a)?, v.grid())
}
