//! Dense bounded-variable primal simplex on a compact tableau.
//!
//! Every row `i` defines a logical variable `r_i = <a_i, z>` with bounds
//! `[row_lo_i, row_hi_i]`, so the whole system is homogeneous and the tableau
//! stores basic variables as linear combinations of nonbasic ones. Nonbasic
//! variables may sit anywhere inside their bounds (free variables start at
//! their hint). Phase 1 minimizes the sum of infeasibilities from whatever
//! basis is current, which makes warm starts after bound changes or appended
//! rows work without artificials.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

const PIVOT_TOL: f64 = 1e-9;
const BLAND_AFTER: usize = 50;
const REFRESH_EVERY: usize = 100;

#[derive(Clone, Debug)]
pub(crate) struct Simplex {
    n: usize,
    m: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    val: Vec<f64>,
    basis: Vec<usize>,
    nonbasic: Vec<usize>,
    /// Position of each variable: `Ok(col)` nonbasic, `Err(row)` basic.
    place: Vec<Result<usize, usize>>,
    tab: Vec<f64>,
    feas_tol: f64,
}

impl Simplex {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        a: &[Vec<f64>],
        row_lo: &[f64],
        row_hi: &[f64],
        lo: &[f64],
        hi: &[f64],
        cost: &[f64],
        start: &[f64],
        feas_tol: f64,
    ) -> Self {
        let n = lo.len();
        let m = a.len();
        let mut s = Simplex {
            n,
            m: 0,
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            cost: cost.to_vec(),
            val: (0..n).map(|j| clamp(start[j], lo[j], hi[j])).collect(),
            basis: Vec::with_capacity(m),
            nonbasic: (0..n).collect(),
            place: (0..n).map(Ok).collect(),
            tab: Vec::with_capacity(m * n),
            feas_tol,
        };
        for (i, row) in a.iter().enumerate() {
            s.add_row(row, row_lo[i], row_hi[i]);
        }
        s
    }

    pub(crate) fn rows(&self) -> usize {
        self.m
    }

    /// Appends the row `lo <= <a, z> <= hi`, expressed in the current basis.
    pub(crate) fn add_row(&mut self, a: &[f64], lo: f64, hi: f64) {
        let n = self.n;
        let mut row = vec![0.0; n];
        let mut value = 0.0;
        for (j, &aj) in a.iter().enumerate() {
            if aj == 0.0 {
                continue;
            }
            value += aj * self.val[j];
            match self.place[j] {
                Ok(col) => row[col] += aj,
                Err(r) => {
                    let t = &self.tab[r * n..(r + 1) * n];
                    for (x, tk) in row.iter_mut().zip(t) {
                        *x += aj * tk;
                    }
                }
            }
        }
        let var = n + self.m;
        self.lo.push(lo);
        self.hi.push(hi);
        self.cost.push(0.0);
        self.val.push(value);
        self.place.push(Err(self.m));
        self.basis.push(var);
        self.tab.extend_from_slice(&row);
        self.m += 1;
    }

    pub(crate) fn set_cost(&mut self, cost: &[f64]) {
        self.cost[..self.n].copy_from_slice(cost);
    }

    /// Replaces structural bounds; nonbasic values are pulled into range.
    pub(crate) fn set_bounds(&mut self, lo: &[f64], hi: &[f64]) {
        for j in 0..self.n {
            self.lo[j] = lo[j];
            self.hi[j] = hi[j];
            if self.place[j].is_ok() {
                self.val[j] = clamp(self.val[j], lo[j], hi[j]);
            }
        }
        self.refresh();
    }

    pub(crate) fn structural(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                // basic values may drift by round-off past a bound
                if self.place[j].is_err() {
                    clamp(self.val[j], self.lo[j], self.hi[j])
                } else {
                    self.val[j]
                }
            })
            .collect()
    }

    fn refresh(&mut self) {
        let n = self.n;
        for i in 0..self.m {
            let t = &self.tab[i * n..(i + 1) * n];
            let v: f64 = t
                .iter()
                .zip(&self.nonbasic)
                .map(|(tk, &k)| tk * self.val[k])
                .sum();
            self.val[self.basis[i]] = v;
        }
    }

    fn tol(&self, bound: f64) -> f64 {
        self.feas_tol * (1.0 + bound.abs())
    }

    fn below(&self, v: usize) -> bool {
        self.val[v] < self.lo[v] - self.tol(self.lo[v])
    }

    fn above(&self, v: usize) -> bool {
        self.val[v] > self.hi[v] + self.tol(self.hi[v])
    }

    fn infeasible(&self) -> bool {
        self.basis.iter().any(|&b| self.below(b) || self.above(b))
    }

    pub(crate) fn solve(&mut self, max_iters: usize) -> LpStatus {
        self.refresh();
        let n = self.n;
        let cmax = self.cost.iter().fold(1.0f64, |a, c| a.max(c.abs()));
        let mut degenerate_run = 0usize;
        let mut d = vec![0.0; n];
        let mut cb = vec![0.0; self.m];
        for iter in 0..max_iters {
            if iter > 0 && iter % REFRESH_EVERY == 0 {
                self.refresh();
            }
            let phase1 = self.infeasible();
            cb.resize(self.m, 0.0);
            for (i, &b) in self.basis.iter().enumerate() {
                cb[i] = if phase1 {
                    if self.below(b) {
                        -1.0
                    } else if self.above(b) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    self.cost[b]
                };
            }
            for (j, dj) in d.iter_mut().enumerate() {
                *dj = if phase1 {
                    0.0
                } else {
                    self.cost[self.nonbasic[j]]
                };
            }
            for (i, &c) in cb.iter().enumerate() {
                if c != 0.0 {
                    let t = &self.tab[i * n..(i + 1) * n];
                    for (dj, tk) in d.iter_mut().zip(t) {
                        *dj += c * tk;
                    }
                }
            }
            let dtol = 1e-10 * if phase1 { 1.0 } else { cmax };
            let bland = degenerate_run > BLAND_AFTER;
            let mut enter: Option<(usize, f64)> = None;
            for (j, &dj) in d.iter().enumerate() {
                let v = self.nonbasic[j];
                let dir = if dj < -dtol && self.val[v] < self.hi[v] {
                    1.0
                } else if dj > dtol && self.val[v] > self.lo[v] {
                    -1.0
                } else {
                    continue;
                };
                enter = match enter {
                    None => Some((j, dir)),
                    Some((bj, _)) => {
                        let bv = self.nonbasic[bj];
                        let better = if bland {
                            v < bv
                        } else {
                            dj.abs() > d[bj].abs() || (dj.abs() == d[bj].abs() && v < bv)
                        };
                        if better {
                            Some((j, dir))
                        } else {
                            enter
                        }
                    }
                };
            }
            let Some((j, dir)) = enter else {
                return if phase1 {
                    LpStatus::Infeasible
                } else {
                    LpStatus::Optimal
                };
            };
            let e = self.nonbasic[j];
            let mut step = if dir > 0.0 {
                self.hi[e] - self.val[e]
            } else {
                self.val[e] - self.lo[e]
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let tij = self.tab[i * n + j];
                if tij.abs() <= PIVOT_TOL {
                    continue;
                }
                let r = tij * dir;
                let b = self.basis[i];
                let v = self.val[b];
                let (lim, target) = if r > 0.0 {
                    if phase1 && self.below(b) {
                        ((self.lo[b] - v) / r, self.lo[b])
                    } else if (phase1 && self.above(b)) || self.hi[b] == f64::INFINITY {
                        continue;
                    } else {
                        ((self.hi[b] - v) / r, self.hi[b])
                    }
                } else if phase1 && self.above(b) {
                    ((self.hi[b] - v) / r, self.hi[b])
                } else if (phase1 && self.below(b)) || self.lo[b] == f64::NEG_INFINITY {
                    continue;
                } else {
                    ((self.lo[b] - v) / r, self.lo[b])
                };
                let lim = lim.max(0.0);
                let eps = 1e-12 * (1.0 + lim.abs());
                let take = match leave {
                    _ if lim < step - eps => true,
                    Some((bi, _)) if (lim - step).abs() <= eps => {
                        let bb = self.basis[bi];
                        if bland {
                            b < bb
                        } else {
                            let (a1, a2) = (tij.abs(), self.tab[bi * n + j].abs());
                            a1 > a2 || (a1 == a2 && b < bb)
                        }
                    }
                    _ => false,
                };
                if take {
                    step = lim;
                    leave = Some((i, target));
                }
            }
            if !step.is_finite() {
                return LpStatus::Unbounded;
            }
            if step <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            let delta = dir * step;
            self.val[e] += delta;
            for i in 0..self.m {
                let tij = self.tab[i * n + j];
                if tij != 0.0 {
                    self.val[self.basis[i]] += tij * delta;
                }
            }
            match leave {
                Some((r, target)) => {
                    self.val[self.basis[r]] = target;
                    self.pivot(r, j);
                }
                None => {
                    self.val[e] = if dir > 0.0 { self.hi[e] } else { self.lo[e] };
                }
            }
        }
        LpStatus::IterationLimit
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let n = self.n;
        let p = self.tab[r * n + j];
        {
            let row = &mut self.tab[r * n..(r + 1) * n];
            for (k, x) in row.iter_mut().enumerate() {
                *x = if k == j { 1.0 / p } else { -*x / p };
            }
        }
        let pivot_row: Vec<f64> = self.tab[r * n..(r + 1) * n].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.tab[i * n + j];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.tab[i * n..(i + 1) * n];
            for (k, x) in row.iter_mut().enumerate() {
                if k == j {
                    *x = f * pivot_row[j];
                } else {
                    *x += f * pivot_row[k];
                }
            }
        }
        let leaving = self.basis[r];
        let entering = self.nonbasic[j];
        self.basis[r] = entering;
        self.nonbasic[j] = leaving;
        self.place[entering] = Err(r);
        self.place[leaving] = Ok(j);
    }
}

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}
