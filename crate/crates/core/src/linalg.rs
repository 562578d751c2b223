//! Small dense linear algebra on row-major `Vec<f64>` matrices.

use crate::error::{CoagError, Result};

/// Determinant of the `k×k` row-major matrix `a`.
///
/// Closed forms up to 3×3, Gaussian elimination with full pivoting above.
pub fn determinant(a: &[f64], k: usize) -> f64 {
    debug_assert_eq!(a.len(), k * k);
    match k {
        0 => 1.0,
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        3 => {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
        _ => lu_full_pivot_det(a.to_vec(), k),
    }
}

fn lu_full_pivot_det(mut a: Vec<f64>, k: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..k {
        let (mut pr, mut pc, mut best) = (col, col, 0.0);
        for r in col..k {
            for c in col..k {
                let v = a[r * k + c].abs();
                if v > best {
                    best = v;
                    pr = r;
                    pc = c;
                }
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if pr != col {
            for c in 0..k {
                a.swap(pr * k + c, col * k + c);
            }
            det = -det;
        }
        if pc != col {
            for r in 0..k {
                a.swap(r * k + pc, r * k + col);
            }
            det = -det;
        }
        let pivot = a[col * k + col];
        det *= pivot;
        for r in col + 1..k {
            let factor = a[r * k + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in col + 1..k {
                a[r * k + c] -= factor * a[col * k + c];
            }
        }
    }
    det
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let k = b.len();
    debug_assert_eq!(a.len(), k * k);
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..k {
        let pr = (col..k)
            .max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs()))
            .unwrap_or(col);
        if a[pr * k + col].abs() < f64::MIN_POSITIVE {
            return Err(CoagError::Numerical("singular linear system".into()));
        }
        if pr != col {
            for c in 0..k {
                a.swap(pr * k + c, col * k + c);
            }
            x.swap(pr, col);
        }
        let pivot = a[col * k + col];
        for r in col + 1..k {
            let factor = a[r * k + col] / pivot;
            for c in col..k {
                a[r * k + c] -= factor * a[col * k + c];
            }
            x[r] -= factor * x[col];
        }
    }
    for col in (0..k).rev() {
        let mut s = x[col];
        for c in col + 1..k {
            s -= a[col * k + c] * x[c];
        }
        x[col] = s / a[col * k + col];
    }
    Ok(x)
}

/// Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations,
/// sorted ascending.
pub fn symmetric_eigenvalues(a: &[f64], k: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), k * k);
    let mut a = a.to_vec();
    let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; k];
    }
    for _sweep in 0..100 {
        let off: f64 = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * k + j] * a[i * k + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-300 || off <= f64::EPSILON * 1e-3 * norm {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = a[p * k + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * k + p];
                let aqq = a[q * k + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let arp = a[r * k + p];
                    let arq = a[r * k + q];
                    a[r * k + p] = c * arp - s * arq;
                    a[r * k + q] = s * arp + c * arq;
                }
                for r in 0..k {
                    let apr = a[p * k + r];
                    let aqr = a[q * k + r];
                    a[p * k + r] = c * apr - s * aqr;
                    a[q * k + r] = s * apr + c * aqr;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..k).map(|i| a[i * k + i]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
