//! Convex QP through Lemke's complementary pivoting on the KKT system.
//!
//! `min 1/2 z'Hz + c'z` subject to variable bounds and two-sided rows is
//! shifted to nonnegative variables (free ones split in two), and the KKT
//! conditions become `w = M y + q, y, w >= 0, y'w = 0` with
//! `M = [[Q, G'], [-G, 0]]`, which is copositive-plus when `H` is PSD.
//! Degenerate ratio ties are resolved lexicographically.

use super::SolveError;

pub(crate) struct QpInput<'a> {
    pub h: &'a [Vec<f64>],
    pub c: &'a [f64],
    pub lo: &'a [f64],
    pub hi: &'a [f64],
    pub rows: &'a [Vec<f64>],
    pub row_lo: &'a [f64],
    pub row_hi: &'a [f64],
}

/// Each original variable is `x0 + sum sign * y[col]` over its columns.
struct VarMap {
    x0: Vec<f64>,
    cols: Vec<Vec<(usize, f64)>>,
    ny: usize,
}

fn shift(lo: &[f64], hi: &[f64]) -> VarMap {
    let mut x0 = Vec::with_capacity(lo.len());
    let mut cols = Vec::with_capacity(lo.len());
    let mut ny = 0;
    for j in 0..lo.len() {
        if lo[j].is_finite() {
            x0.push(lo[j]);
            cols.push(vec![(ny, 1.0)]);
            ny += 1;
        } else if hi[j].is_finite() {
            x0.push(hi[j]);
            cols.push(vec![(ny, -1.0)]);
            ny += 1;
        } else {
            x0.push(0.0);
            cols.push(vec![(ny, 1.0), (ny + 1, -1.0)]);
            ny += 2;
        }
    }
    VarMap { x0, cols, ny }
}

pub(crate) fn solve_qp(inp: &QpInput, max_iters: usize) -> Result<Vec<f64>, SolveError> {
    let n = inp.c.len();
    let vm = shift(inp.lo, inp.hi);
    let ny = vm.ny;
    let hx = |j: usize, x: &[f64]| -> f64 {
        if inp.h.is_empty() || j >= inp.h.len() {
            0.0
        } else {
            inp.h[j].iter().zip(x).map(|(a, b)| a * b).sum()
        }
    };
    let hij = |i: usize, j: usize| -> f64 {
        if i < inp.h.len() && j < inp.h.len() {
            inp.h[i][j]
        } else {
            0.0
        }
    };

    let mut q_mat = vec![vec![0.0; ny]; ny];
    let mut p = vec![0.0; ny];
    for i in 0..n {
        let gi = hx(i, &vm.x0) + inp.c[i];
        for &(ci, si) in &vm.cols[i] {
            p[ci] += si * gi;
            for j in 0..n {
                let h = hij(i, j);
                if h != 0.0 {
                    for &(cj, sj) in &vm.cols[j] {
                        q_mat[ci][cj] += si * sj * h;
                    }
                }
            }
        }
    }

    // G y <= g
    let mut g_rows: Vec<Vec<f64>> = Vec::new();
    let mut g_rhs: Vec<f64> = Vec::new();
    for j in 0..n {
        if inp.lo[j].is_finite() && inp.hi[j].is_finite() {
            let mut r = vec![0.0; ny];
            r[vm.cols[j][0].0] = 1.0;
            g_rows.push(r);
            g_rhs.push(inp.hi[j] - inp.lo[j]);
        }
    }
    for (k, a) in inp.rows.iter().enumerate() {
        let mut ad = vec![0.0; ny];
        let mut ax0 = 0.0;
        for (j, &aj) in a.iter().enumerate() {
            if aj != 0.0 {
                ax0 += aj * vm.x0[j];
                for &(c, s) in &vm.cols[j] {
                    ad[c] += aj * s;
                }
            }
        }
        if inp.row_hi[k].is_finite() {
            g_rows.push(ad.clone());
            g_rhs.push(inp.row_hi[k] - ax0);
        }
        if inp.row_lo[k].is_finite() {
            g_rows.push(ad.iter().map(|v| -v).collect());
            g_rhs.push(ax0 - inp.row_lo[k]);
        }
    }
    let mg = g_rows.len();
    let size = ny + mg;
    let mut m = vec![vec![0.0; size]; size];
    let mut q = vec![0.0; size];
    for i in 0..ny {
        m[i][..ny].copy_from_slice(&q_mat[i]);
        for k in 0..mg {
            m[i][ny + k] = g_rows[k][i];
        }
        q[i] = p[i];
    }
    for k in 0..mg {
        for i in 0..ny {
            m[ny + k][i] = -g_rows[k][i];
        }
        q[ny + k] = g_rhs[k];
    }
    let z = lemke(&m, &q, max_iters)?;
    let mut x = vm.x0.clone();
    for j in 0..n {
        for &(c, s) in &vm.cols[j] {
            x[j] += s * z[c];
        }
        x[j] = x[j].clamp(inp.lo[j], inp.hi[j]);
    }
    Ok(x)
}

/// Solves `w = M z + q, w, z >= 0, w'z = 0`.
pub(crate) fn lemke(m: &[Vec<f64>], q: &[f64], max_iters: usize) -> Result<Vec<f64>, SolveError> {
    let n = q.len();
    if n == 0 {
        return Ok(vec![]);
    }
    let qmin_idx = (0..n).fold(0, |b, i| if q[i] < q[b] { i } else { b });
    if q[qmin_idx] >= 0.0 {
        return Ok(vec![0.0; n]);
    }
    // columns: w 0..n, z n..2n, z0 2n, rhs 2n+1
    let width = 2 * n + 2;
    let z0 = 2 * n;
    let rhs = 2 * n + 1;
    let mut t = vec![0.0; n * width];
    for i in 0..n {
        t[i * width + i] = 1.0;
        for j in 0..n {
            t[i * width + n + j] = -m[i][j];
        }
        t[i * width + z0] = -1.0;
        t[i * width + rhs] = q[i];
    }
    let mut basis: Vec<usize> = (0..n).collect();
    pivot(&mut t, width, n, qmin_idx, z0);
    let mut leaving = basis[qmin_idx];
    basis[qmin_idx] = z0;

    for _ in 0..max_iters {
        let enter = if leaving < n {
            leaving + n
        } else {
            leaving - n
        };
        let mut best: Option<usize> = None;
        for i in 0..n {
            let a = t[i * width + enter];
            if a <= 1e-12 {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    if lex_less(&t, width, n, i, b, enter, &basis, z0) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        let Some(r) = best else {
            return Err(SolveError::Unbounded);
        };
        pivot(&mut t, width, n, r, enter);
        leaving = basis[r];
        basis[r] = enter;
        if leaving == z0 {
            let mut z = vec![0.0; n];
            for (i, &b) in basis.iter().enumerate() {
                if (n..2 * n).contains(&b) {
                    z[b - n] = t[i * width + rhs].max(0.0);
                }
            }
            return Ok(z);
        }
    }
    Err(SolveError::Numerical(
        "complementary pivoting did not terminate".into(),
    ))
}

/// Lexicographic ratio comparison of rows `i` and `b` for entering column
/// `enter`; a row holding `z0` wins exact ratio ties.
#[allow(clippy::too_many_arguments)]
fn lex_less(
    t: &[f64],
    width: usize,
    n: usize,
    i: usize,
    b: usize,
    enter: usize,
    basis: &[usize],
    z0: usize,
) -> bool {
    let rhs = 2 * n + 1;
    let (ai, ab) = (t[i * width + enter], t[b * width + enter]);
    let (ri, rb) = (t[i * width + rhs] / ai, t[b * width + rhs] / ab);
    let eps = 1e-12 * (1.0 + ri.abs().max(rb.abs()));
    if ri < rb - eps {
        return true;
    }
    if ri > rb + eps {
        return false;
    }
    if basis[i] == z0 {
        return true;
    }
    if basis[b] == z0 {
        return false;
    }
    for k in 0..n {
        let (vi, vb) = (t[i * width + k] / ai, t[b * width + k] / ab);
        if vi < vb - 1e-14 {
            return true;
        }
        if vi > vb + 1e-14 {
            return false;
        }
    }
    i < b
}

fn pivot(t: &mut [f64], width: usize, n: usize, r: usize, col: usize) {
    let p = t[r * width + col];
    for k in 0..width {
        t[r * width + k] /= p;
    }
    let pr: Vec<f64> = t[r * width..(r + 1) * width].to_vec();
    for i in 0..n {
        if i == r {
            continue;
        }
        let f = t[i * width + col];
        if f != 0.0 {
            for k in 0..width {
                t[i * width + k] -= f * pr[k];
            }
            t[i * width + col] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    const INF: f64 = f64::INFINITY;

    #[test]
    fn unconstrained_quadratic() {
        // 1/2(x-1)^2 + 1/2 x^2 -> x = 0.5
        let h = vec![vec![2.0]];
        let x = solve_qp(
            &QpInput {
                h: &h,
                c: &[-1.0],
                lo: &[-INF],
                hi: &[INF],
                rows: &[],
                row_lo: &[],
                row_hi: &[],
            },
            1000,
        )
        .unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bound_constrained_quadratic() {
        // min x^2 + y^2 - 4x - 6y on [0,1]x[0,5] -> (1, 3)
        let h = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
        let x = solve_qp(
            &QpInput {
                h: &h,
                c: &[-4.0, -6.0],
                lo: &[0.0, 0.0],
                hi: &[1.0, 5.0],
                rows: &[],
                row_lo: &[],
                row_hi: &[],
            },
            1000,
        )
        .unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_plus_abs_epigraph() {
        // min x^2 + t, t >= x - 1, t >= -x + 1 -> x = 0.5, t = 0.5
        let h = vec![vec![2.0, 0.0], vec![0.0, 0.0]];
        let x = solve_qp(
            &QpInput {
                h: &h,
                c: &[0.0, 1.0],
                lo: &[-INF, -INF],
                hi: &[INF, INF],
                rows: &[vec![1.0, -1.0], vec![-1.0, -1.0]],
                row_lo: &[-INF, -INF],
                row_hi: &[1.0, -1.0],
            },
            1000,
        )
        .unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_lcp_reports_ray() {
        // x >= 1 and x <= 0
        let r = solve_qp(
            &QpInput {
                h: &[vec![1.0]],
                c: &[0.0],
                lo: &[-INF],
                hi: &[INF],
                rows: &[vec![1.0], vec![1.0]],
                row_lo: &[1.0, -INF],
                row_hi: &[INF, 0.0],
            },
            1000,
        );
        assert!(r.is_err());
    }
}
