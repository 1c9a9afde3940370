//! Dense exact linear algebra over ℚ and small polynomial matrices.

use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::poly::Poly;

pub type Matrix = Vec<Vec<BigRational>>;

pub fn identity(n: usize) -> Matrix {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { BigRational::one() } else { BigRational::zero() })
                .collect()
        })
        .collect()
}

/// Reduced row echelon form in place; returns the pivot columns.
pub fn rref(m: &mut Matrix) -> Vec<usize> {
    let rows = m.len();
    let cols = m.first().map_or(0, |r| r.len());
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = BigRational::one() / &m[r][c];
        for x in m[r].iter_mut() {
            *x *= &inv;
        }
        for i in 0..rows {
            if i != r && !m[i][c].is_zero() {
                let factor = m[i][c].clone();
                for j in c..cols {
                    let delta = &factor * &m[r][j];
                    m[i][j] -= delta;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

pub fn rank(m: &Matrix) -> usize {
    let mut a = m.clone();
    rref(&mut a).len()
}

/// Solves `a x = b`. Free variables are set to zero, so among all solutions the
/// one supported on pivot columns is returned. `None` if inconsistent.
pub fn solve(a: &Matrix, b: &[BigRational]) -> Option<Vec<BigRational>> {
    let cols = a.first().map_or(0, |r| r.len());
    let mut aug: Matrix = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();
    let pivots = rref(&mut aug);
    if pivots.contains(&cols) {
        return None;
    }
    let mut x = vec![BigRational::zero(); cols];
    for (i, &c) in pivots.iter().enumerate() {
        x[c] = aug[i][cols].clone();
    }
    Some(x)
}

pub fn inverse(a: &Matrix) -> Option<Matrix> {
    let n = a.len();
    let mut aug: Matrix = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { BigRational::one() } else { BigRational::zero() }));
            r
        })
        .collect();
    let pivots = rref(&mut aug);
    if pivots.len() < n || pivots[n - 1] != n - 1 {
        return None;
    }
    Some(aug.into_iter().map(|r| r[n..].to_vec()).collect())
}

pub fn mat_vec(a: &Matrix, x: &[BigRational]) -> Vec<BigRational> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

pub fn transpose(a: &Matrix) -> Matrix {
    let cols = a.first().map_or(0, |r| r.len());
    (0..cols).map(|j| a.iter().map(|r| r[j].clone()).collect()).collect()
}

/// Determinant of a square polynomial matrix by Laplace expansion along the
/// first row with memoization over column subsets. Fine for n ≤ 12 or so.
pub fn poly_det(m: &[Vec<Poly>], nvars: usize) -> Poly {
    let n = m.len();
    let mut memo = std::collections::HashMap::new();
    det_rec(m, nvars, 0, (1u64 << n) - 1, &mut memo)
}

fn det_rec(
    m: &[Vec<Poly>],
    nvars: usize,
    row: usize,
    cols: u64,
    memo: &mut std::collections::HashMap<u64, Poly>,
) -> Poly {
    if cols == 0 {
        return Poly::one(nvars);
    }
    if let Some(p) = memo.get(&cols) {
        return p.clone();
    }
    let mut acc = Poly::zero(nvars);
    let mut sign_positive = true;
    for c in 0..m.len() {
        if cols & (1 << c) == 0 {
            continue;
        }
        if !m[row][c].is_zero() {
            let minor = det_rec(m, nvars, row + 1, cols & !(1 << c), memo);
            let term = &m[row][c] * &minor;
            if sign_positive {
                acc += &term;
            } else {
                acc -= &term;
            }
        }
        sign_positive = !sign_positive;
    }
    memo.insert(cols, acc.clone());
    acc
}

/// Replaces column `col` of `m` with `v`.
pub fn replace_column(m: &[Vec<Poly>], col: usize, v: &[Poly]) -> Vec<Vec<Poly>> {
    m.iter()
        .zip(v)
        .map(|(row, x)| {
            let mut r = row.clone();
            r[col] = x.clone();
            r
        })
        .collect()
}
