//! Dense kernels used throughout the crate: the matrix exponential, Van Loan
//! block integrals, Kronecker products and sums, and LU solves.
//!
//! Matrices are `ndarray::Array2<f64>` (row-major). Where a vectorisation is
//! needed the convention is column stacking, so that
//! `(a ⊕ b) · vec(V) = vec(b·V + V·aᵀ)`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

pub type Matrix = Array2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular to working precision (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("negative or non-finite scale {0}")]
    InvalidScale(f64),
}

/// Padé(13) coefficients (Higham 2005).
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which Padé(13) is accurate to unit roundoff.
const THETA13: f64 = 5.371_920_351_148_152;

fn check_square(m: &ArrayView2<f64>) -> Result<usize, LinalgError> {
    let (rows, cols) = m.dim();
    if rows != cols {
        return Err(LinalgError::NotSquare { rows, cols });
    }
    Ok(rows)
}

fn check_finite(m: &ArrayView2<f64>) -> Result<(), LinalgError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

/// Maximum absolute column sum.
pub fn one_norm(m: &ArrayView2<f64>) -> f64 {
    m.axis_iter(Axis(1))
        .map(|col| col.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Maximum absolute row sum.
pub fn inf_norm(m: &ArrayView2<f64>) -> f64 {
    m.axis_iter(Axis(0))
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Lower-degree Padé coefficients and the 1-norm bounds up to which each
/// degree is accurate to unit roundoff (Higham 2005).
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30_240.0, 15_120.0, 3_360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17_297_280.0, 8_648_640.0, 1_995_840.0, 277_200.0, 25_200.0, 1_512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const THETA: [(f64, usize); 4] = [
    (1.495_585_217_958_292e-2, 3),
    (2.539_398_330_063_23e-1, 5),
    (9.504_178_996_162_932e-1, 7),
    (2.097_847_961_257_068, 9),
];

/// `exp(m · scale)` by scaling and squaring with a Padé approximant whose
/// degree (3 to 13) is chosen from the 1-norm.
pub fn expm(m: &Matrix, scale: f64) -> Result<Matrix, LinalgError> {
    let n = check_square(&m.view())?;
    check_finite(&m.view())?;
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(LinalgError::InvalidScale(scale));
    }
    if n == 0 {
        return Ok(Matrix::zeros((0, 0)));
    }
    if n == 1 {
        return Ok(Matrix::from_elem((1, 1), (m[[0, 0]] * scale).exp()));
    }
    let a: Vec<f64> = m.iter().map(|v| v * scale).collect();
    let out = expm_flat(&a, n)?;
    if !out.iter().all(|v| v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(Matrix::from_shape_vec((n, n), out).expect("n*n buffer"))
}

/// Row-major work on plain buffers: at these sizes allocation, not
/// arithmetic, dominates.
fn expm_flat(a: &[f64], n: usize) -> Result<Vec<f64>, LinalgError> {
    let norm = (0..n)
        .map(|j| (0..n).map(|i| a[i * n + j].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if norm == 0.0 {
        return Ok(identity(n));
    }
    for (theta, degree) in THETA {
        if norm <= theta {
            let b: &[f64] = match degree {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            return pade_flat(a, n, b);
        }
    }
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let f = 2f64.powi(-squarings);
    let scaled: Vec<f64> = a.iter().map(|v| v * f).collect();
    let mut result = pade_flat(&scaled, n, &PADE13)?;
    let mut tmp = vec![0.0; n * n];
    for _ in 0..squarings {
        matmul(&result, &result, n, &mut tmp);
        std::mem::swap(&mut result, &mut tmp);
    }
    Ok(result)
}

fn identity(n: usize) -> Vec<f64> {
    let mut id = vec![0.0; n * n];
    for i in 0..n {
        id[i * n + i] = 1.0;
    }
    id
}

fn matmul(a: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
}

/// `r(A) = (V − U)⁻¹ (V + U)` with `U` the odd and `V` the even part of the
/// Padé numerator with coefficients `b`.
fn pade_flat(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let nn = n * n;
    let mut a2 = vec![0.0; nn];
    matmul(a, a, n, &mut a2);
    let mut u_inner = vec![0.0; nn];
    let mut v = vec![0.0; nn];
    if b.len() == 14 {
        // degree 13 with the A⁶ factorisation
        let mut a4 = vec![0.0; nn];
        matmul(&a2, &a2, n, &mut a4);
        let mut a6 = vec![0.0; nn];
        matmul(&a4, &a2, n, &mut a6);
        let mut hi = vec![0.0; nn];
        let mut prod = vec![0.0; nn];
        for k in 0..nn {
            hi[k] = b[13] * a6[k] + b[11] * a4[k] + b[9] * a2[k];
        }
        matmul(&a6, &hi, n, &mut prod);
        for k in 0..nn {
            u_inner[k] = prod[k] + b[7] * a6[k] + b[5] * a4[k] + b[3] * a2[k];
            hi[k] = b[12] * a6[k] + b[10] * a4[k] + b[8] * a2[k];
        }
        matmul(&a6, &hi, n, &mut prod);
        for k in 0..nn {
            v[k] = prod[k] + b[6] * a6[k] + b[4] * a4[k] + b[2] * a2[k];
        }
        for i in 0..n {
            u_inner[i * n + i] += b[1];
            v[i * n + i] += b[0];
        }
    } else {
        let mut power = identity(n);
        let mut next = vec![0.0; nn];
        for k in 0..b.len() / 2 {
            for idx in 0..nn {
                u_inner[idx] += b[2 * k + 1] * power[idx];
                v[idx] += b[2 * k] * power[idx];
            }
            if k + 1 < b.len() / 2 {
                matmul(&power, &a2, n, &mut next);
                std::mem::swap(&mut power, &mut next);
            }
        }
    }
    let mut u = vec![0.0; nn];
    matmul(a, &u_inner, n, &mut u);
    let mut den: Vec<f64> = v.iter().zip(&u).map(|(v, u)| v - u).collect();
    let mut num: Vec<f64> = v.iter().zip(&u).map(|(v, u)| v + u).collect();
    lu_solve_flat(&mut den, &mut num, n)?;
    Ok(num)
}

/// Solves `a · x = b` in place (`b` becomes `x`) with partial pivoting.
fn lu_solve_flat(a: &mut [f64], b: &mut [f64], n: usize) -> Result<(), LinalgError> {
    let tol = (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
        .fold(f64::MIN_POSITIVE, f64::max)
        * f64::EPSILON
        * n as f64;
    for k in 0..n {
        let mut piv = k;
        for i in (k + 1)..n {
            if a[i * n + k].abs() > a[piv * n + k].abs() {
                piv = i;
            }
        }
        let pmax = a[piv * n + k].abs();
        if pmax <= tol {
            return Err(LinalgError::Singular { column: k, pivot: pmax });
        }
        if piv != k {
            for j in 0..n {
                a.swap(k * n + j, piv * n + j);
                b.swap(k * n + j, piv * n + j);
            }
        }
        let d = a[k * n + k];
        for i in (k + 1)..n {
            let f = a[i * n + k] / d;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                a[i * n + j] -= f * a[k * n + j];
            }
            for j in 0..n {
                b[i * n + j] -= f * b[k * n + j];
            }
        }
    }
    for i in (0..n).rev() {
        for j in 0..n {
            let mut acc = b[i * n + j];
            for k in (i + 1)..n {
                acc -= a[i * n + k] * b[k * n + j];
            }
            b[i * n + j] = acc / a[i * n + i];
        }
    }
    Ok(())
}

/// Both blocks of `exp([[t, c], [0, t]] · x)`.
#[derive(Debug, Clone)]
pub struct BlockIntegral {
    /// `exp(t·x)`
    pub left: Matrix,
    /// `∫₀ˣ exp(t(x−s))·c·exp(t s) ds`
    pub upper_right: Matrix,
}

/// Van Loan's block-matrix construction for integrals of matrix exponentials.
pub fn van_loan_integral(t: &Matrix, c: &Matrix, x: f64) -> Result<BlockIntegral, LinalgError> {
    let p = check_square(&t.view())?;
    if c.dim() != (p, p) {
        return Err(LinalgError::DimensionMismatch(format!(
            "generator is {p}x{p} but coupling block is {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    let mut block = Matrix::zeros((2 * p, 2 * p));
    block.slice_mut(s![..p, ..p]).assign(t);
    block.slice_mut(s![..p, p..]).assign(c);
    block.slice_mut(s![p.., p..]).assign(t);
    let e = expm(&block, x)?;
    Ok(BlockIntegral {
        left: e.slice(s![..p, ..p]).to_owned(),
        upper_right: e.slice(s![..p, p..]).to_owned(),
    })
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = Matrix::zeros((ra * rb, ca * cb));
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[[i, j]];
            if aij == 0.0 {
                continue;
            }
            out.slice_mut(s![i * rb..(i + 1) * rb, j * cb..(j + 1) * cb])
                .assign(&(b * aij));
        }
    }
    out
}

/// Kronecker product of two vectors.
pub fn kron_vec(a: &Array1<f64>, b: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.len() * b.len());
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    out
}

/// Kronecker sum `a ⊕ b = a ⊗ I + I ⊗ b`.
pub fn kron_sum(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    let n = check_square(&a.view())?;
    let m = check_square(&b.view())?;
    Ok(kron(a, &Matrix::eye(m)) + kron(&Matrix::eye(n), b))
}

/// LU factorisation with partial pivoting, stored compactly.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(a: &Matrix) -> Result<Self, LinalgError> {
        let n = check_square(&a.view())?;
        check_finite(&a.view())?;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let tol = inf_norm(&a.view()).max(f64::MIN_POSITIVE) * f64::EPSILON * n as f64;
        for k in 0..n {
            let (piv, pmax) = (k..n)
                .map(|i| (i, lu[[i, k]].abs()))
                .fold((k, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            if pmax <= tol {
                return Err(LinalgError::Singular { column: k, pivot: pmax });
            }
            if piv != k {
                for j in 0..n {
                    lu.swap([k, j], [piv, j]);
                }
                perm.swap(k, piv);
            }
            let d = lu[[k, k]];
            for i in (k + 1)..n {
                let f = lu[[i, k]] / d;
                lu[[i, k]] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu[[i, j]] -= f * lu[[k, j]];
                    }
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn solve_vec(&self, b: &Array1<f64>) -> Result<Array1<f64>, LinalgError> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "system is {n}x{n} but right-hand side has length {}",
                b.len()
            )));
        }
        let mut x: Array1<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[[i, j]] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[[i, j]] * x[j];
            }
            x[i] = acc / self.lu[[i, i]];
        }
        Ok(x)
    }

    pub fn solve(&self, b: &Matrix) -> Result<Matrix, LinalgError> {
        let n = self.dim();
        if b.nrows() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "system is {n}x{n} but right-hand side has {} rows",
                b.nrows()
            )));
        }
        let mut out = Matrix::zeros(b.dim());
        for (j, col) in b.axis_iter(Axis(1)).enumerate() {
            let x = self.solve_vec(&col.to_owned())?;
            out.column_mut(j).assign(&x);
        }
        Ok(out)
    }
}

/// Solves `a · x = b`.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.nrows() != b.nrows() {
        return Err(LinalgError::DimensionMismatch(format!(
            "left side has {} rows, right side {}",
            a.nrows(),
            b.nrows()
        )));
    }
    Lu::new(a)?.solve(b)
}

pub fn solve_vec(a: &Matrix, b: &Array1<f64>) -> Result<Array1<f64>, LinalgError> {
    Lu::new(a)?.solve_vec(b)
}
