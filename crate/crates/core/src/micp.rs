//! Big-M machinery: bounds on component gaps over a region, the parametric
//! epigraph model and its value function, a best-first branch-and-bound,
//! and local certification of candidate points.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::funcs::{dot, max_eigenvalue, min_eigenvalue, ConvexAtom, Norm};
use crate::local::{ram_run, LocalError, Schedule, Weights};
use crate::smc::{Selection, SmcError, SmcProblem};
use crate::subsolve::{
    ConvexSolver, FeasibleSet, NormBall, Objective, SolveError, SolverConfig, StandardModel,
};

pub const DEFAULT_RHO: f64 = 1e-12;
pub const DEFAULT_DELTA_GLOB: f64 = 5e-7;
pub const CERT_TOL: f64 = 1e-9;
/// Degeneracy factor up to which local problems are solved by enumeration.
pub const LOCAL_ENUM_THRESHOLD: u128 = 256;
pub const DEFAULT_TIME_LIMIT: Duration = Duration::from_secs(120);
pub const STATS_HEADER: &str = "terms,binaries,continuous,rows";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MicpError {
    #[error("missing bounds: {0}")]
    MissingBounds(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("the region is unbounded")]
    Unbounded,
    #[error("{count} local selections exceed the cap {cap}")]
    CapExceeded { count: u128, cap: u128 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Smc(#[from] SmcError),
    #[error(transparent)]
    Local(#[from] LocalError),
}

fn lift(e: SolveError) -> MicpError {
    match e {
        SolveError::Unbounded => MicpError::Unbounded,
        e => MicpError::Solve(e),
    }
}

/// A gap bound; `Forbidden` marks a component that cannot be selected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundEntry {
    Finite(f64),
    Forbidden,
}

impl Serialize for BoundEntry {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BoundEntry::Finite(v) => s.serialize_f64(*v),
            BoundEntry::Forbidden => s.serialize_str("forbidden"),
        }
    }
}

impl<'de> Deserialize<'de> for BoundEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(BoundEntry::Finite(v)),
            Raw::Text(t) if t == "forbidden" => Ok(BoundEntry::Forbidden),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unknown bound `{t}`"))),
        }
    }
}

/// Per term an `n_s x n_s` matrix indexed `[l+][l]`, zero diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SBounds {
    pub terms: Vec<Vec<Vec<BoundEntry>>>,
}

impl SBounds {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self::from_fn(sizes, |_, _, _| BoundEntry::Finite(0.0))
    }

    /// Entries from `f(s, l+, l)`; the diagonal is always zero.
    pub fn from_fn(sizes: &[usize], mut f: impl FnMut(usize, usize, usize) -> BoundEntry) -> Self {
        let terms = sizes
            .iter()
            .enumerate()
            .map(|(s, &n)| {
                (0..n)
                    .map(|lp| {
                        (0..n)
                            .map(|l| {
                                if lp == l {
                                    BoundEntry::Finite(0.0)
                                } else {
                                    f(s, lp, l)
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        SBounds { terms }
    }

    pub fn get(&self, s: usize, lp: usize, l: usize) -> BoundEntry {
        self.terms[s][lp][l]
    }

    pub fn set(&mut self, s: usize, lp: usize, l: usize, e: BoundEntry) {
        if lp != l {
            self.terms[s][lp][l] = e;
        }
    }

    /// `l` is selectable in term `s` (no forbidden entry in its column).
    pub fn allowed(&self, s: usize, l: usize) -> bool {
        self.terms[s]
            .iter()
            .all(|row| row[l] != BoundEntry::Forbidden)
    }

    pub fn check_shape(&self, p: &SmcProblem) -> Result<(), MicpError> {
        let sizes = p.sizes();
        let ok = self.terms.len() == sizes.len()
            && self
                .terms
                .iter()
                .zip(&sizes)
                .all(|(t, &n)| t.len() == n && t.iter().all(|r| r.len() == n));
        if !ok {
            return Err(MicpError::ShapeMismatch(
                "bounds do not match the problem's term sizes".into(),
            ));
        }
        for (s, t) in self.terms.iter().enumerate() {
            for (lp, row) in t.iter().enumerate() {
                match row[lp] {
                    BoundEntry::Finite(v) if v == 0.0 => {}
                    _ => {
                        return Err(MicpError::Invalid(format!(
                            "nonzero diagonal bound in term {s}"
                        )))
                    }
                }
                if row
                    .iter()
                    .any(|e| matches!(e, BoundEntry::Finite(v) if !v.is_finite()))
                {
                    return Err(MicpError::Invalid(format!("non-finite bound in term {s}")));
                }
            }
            if (0..t.len()).all(|l| !self.allowed(s, l)) {
                return Err(MicpError::Invalid(format!(
                    "every component of term {s} is forbidden"
                )));
            }
        }
        Ok(())
    }

    /// Largest violation of the bound inequality at `u` over pairs where
    /// `l` is active within `tol` (zero when all hold).
    pub fn violation(&self, p: &SmcProblem, u: &[f64], tol: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for s in 0..p.num_terms() {
            let h = p.component_values(u, s);
            let m = h.iter().copied().fold(f64::INFINITY, f64::min);
            for l in (0..h.len()).filter(|&l| h[l] <= m + tol) {
                for lp in 0..h.len() {
                    match self.get(s, lp, l) {
                        BoundEntry::Finite(v) => worst = worst.max(h[lp] - h[l] - v),
                        BoundEntry::Forbidden => worst = f64::INFINITY,
                    }
                }
            }
        }
        worst
    }
}

/// Bound from the descent lemma: `h+(x̄) + <∇h+(x̄), x - x̄> + (L/2) D² - h_l(x)`
/// maximized over the problem's set.
#[allow(clippy::too_many_arguments)]
pub fn sbounds_smooth(
    p: &SmcProblem,
    s: usize,
    lp: usize,
    l: usize,
    lip: f64,
    diam: f64,
    xbar: &[f64],
    cfg: &SolverConfig,
) -> Result<f64, MicpError> {
    if p.set().diameter_bound().is_none() {
        return Err(MicpError::Unbounded);
    }
    let hp = &p.term(s)[lp];
    let g = hp.subgradient(xbar).map_err(SmcError::from)?;
    let mut obj = Objective::default();
    obj.push(1.0, &p.term(s)[l]);
    obj.push_owned(1.0, ConvexAtom::affine(g.iter().map(|v| -v).collect(), 0.0));
    let sol = ConvexSolver::new(cfg.clone())
        .minimize(&obj, p.set())
        .map_err(lift)?;
    Ok(hp.value(xbar) - dot(&g, xbar) + 0.5 * lip * diam * diam - sol.value)
}

/// Max over the affine rows of `h+` of `max_x row(x) - h_l(x)`.
pub fn sbounds_maxaffine(
    p: &SmcProblem,
    s: usize,
    lp: usize,
    l: usize,
    cfg: &SolverConfig,
) -> Result<f64, MicpError> {
    let rows = p.term(s)[lp]
        .affine_rows(p.dim())
        .ok_or_else(|| MicpError::ShapeMismatch("component is not max-affine".into()))?;
    let mut solver = ConvexSolver::new(cfg.clone());
    let mut best = f64::NEG_INFINITY;
    for r in rows {
        let mut obj = Objective::default();
        obj.push(1.0, &p.term(s)[l]);
        obj.push_owned(
            1.0,
            ConvexAtom::affine(r.a.iter().map(|v| -v).collect(), -r.b),
        );
        let sol = solver.minimize(&obj, p.set()).map_err(lift)?;
        best = best.max(-sol.value);
    }
    Ok(best)
}

/// `(P, a, b)` with value `x'Px/2 + a'x + b` for quadratic, affine and
/// constant atoms.
fn quad_parts(atom: &ConvexAtom, d: usize) -> Option<(Vec<Vec<f64>>, Vec<f64>, f64)> {
    match atom {
        ConvexAtom::Quadratic { p, a, b } => Some((p.clone(), a.clone(), *b)),
        ConvexAtom::Affine { a, b } => Some((vec![vec![0.0; d]; d], a.clone(), *b)),
        ConvexAtom::Const { value } => Some((vec![vec![0.0; d]; d], vec![0.0; d], *value)),
        _ => None,
    }
}

/// Maximum of the quadratic gap `h+ - h_l` over the Euclidean ball
/// `B(center; radius)`, via the convex bound
/// `-min_x { -(h+ - h_l)(x) + min(λ/2, 0) (R² - |x - z|²) }` where `λ` is the
/// smallest eigenvalue of the negated Hessian.
#[allow(clippy::too_many_arguments)]
pub fn sbounds_trs(
    p: &SmcProblem,
    s: usize,
    lp: usize,
    l: usize,
    center: &[f64],
    radius: f64,
    cfg: &SolverConfig,
) -> Result<f64, MicpError> {
    let d = p.dim();
    if center.len() != d || !(radius >= 0.0) {
        return Err(MicpError::ShapeMismatch("ball center or radius".into()));
    }
    let (pp, ap, bp) = quad_parts(&p.term(s)[lp], d)
        .ok_or_else(|| MicpError::ShapeMismatch("component is not quadratic".into()))?;
    let (pl, al, bl) = quad_parts(&p.term(s)[l], d)
        .ok_or_else(|| MicpError::ShapeMismatch("component is not quadratic".into()))?;
    let neg_v: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| pl[i][j] - pp[i][j]).collect())
        .collect();
    let lam = min_eigenvalue(&neg_v);
    // pushed slightly further below so the shifted form stays PSD under rounding
    let m = lam.min(0.0) - 1e-12 * (1.0 + lam.abs());
    let q: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| neg_v[i][j] - if i == j { m } else { 0.0 })
                .collect()
        })
        .collect();
    let a: Vec<f64> = (0..d).map(|i| al[i] - ap[i] + m * center[i]).collect();
    let b = bl - bp + 0.5 * m * (radius * radius - dot(center, center));
    let atom = ConvexAtom::quadratic(q, a, b).map_err(SmcError::from)?;
    let set = FeasibleSet::free(d).with_ball(NormBall {
        norm: Norm::L2,
        indices: (0..d).collect(),
        center: center.to_vec(),
        radius,
    });
    let mut obj = Objective::default();
    obj.push_owned(1.0, atom);
    let sol = ConvexSolver::new(cfg.clone())
        .minimize(&obj, &set)
        .map_err(lift)?;
    Ok(-sol.value)
}

/// Upper bound of `h+` minus lower bound of `h_l`.
pub fn sbounds_crude(upper: f64, lower: f64) -> f64 {
    upper - lower
}

/// Bounds for every pair over the problem's (bounded) set: row LPs for
/// polyhedral `h+`, the descent-lemma bound for quadratic `h+`.
pub fn auto_sbounds(p: &SmcProblem, cfg: &SolverConfig) -> Result<SBounds, MicpError> {
    let diam = p.set().diameter_bound().ok_or(MicpError::Unbounded)?;
    let d = p.dim();
    let center: Vec<f64> = (0..d)
        .map(|j| 0.5 * (p.set().lower[j] + p.set().upper[j]))
        .collect();
    // the box center is within the diameter of every feasible point when projection is unavailable
    let xbar = match p.set().project(&center, 10_000, 1e-12) {
        Ok(x) => x,
        Err(SolveError::UnsupportedAtom(_)) if p.set().is_bounded_box() => center,
        Err(e) => return Err(e.into()),
    };
    let mut out = SBounds::zeros(&p.sizes());
    for s in 0..p.num_terms() {
        let n = p.term(s).len();
        for lp in 0..n {
            for l in (0..n).filter(|&l| l != lp) {
                let hp = &p.term(s)[lp];
                let v = if hp.affine_rows(d).is_some() {
                    sbounds_maxaffine(p, s, lp, l, cfg)?
                } else if let ConvexAtom::Quadratic { p: pm, .. } = hp {
                    sbounds_smooth(p, s, lp, l, max_eigenvalue(pm).max(0.0), diam, &xbar, cfg)?
                } else if hp.is_polyhedral() {
                    // Lipschitz bound around the center
                    let lipschitz = lipschitz_bound(hp).ok_or_else(|| {
                        MicpError::MissingBounds(format!("no bound rule for component ({s}, {lp})"))
                    })?;
                    let upper = hp.value(&xbar) + lipschitz * diam;
                    let mut obj = Objective::default();
                    obj.push(1.0, &p.term(s)[l]);
                    let lo = ConvexSolver::new(cfg.clone())
                        .minimize(&obj, p.set())
                        .map_err(lift)?;
                    sbounds_crude(upper, lo.value)
                } else {
                    return Err(MicpError::MissingBounds(format!(
                        "no bound rule for component ({s}, {lp})"
                    )));
                };
                out.set(s, lp, l, BoundEntry::Finite(v.max(0.0)));
            }
        }
    }
    Ok(out)
}

/// Euclidean Lipschitz constant of norm atoms.
fn lipschitz_bound(atom: &ConvexAtom) -> Option<f64> {
    match atom {
        ConvexAtom::NormAffine { norm, a, w, .. } => {
            let fro: f64 = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            let m = a.len() as f64;
            let factor = match norm {
                Norm::L1 => m.sqrt(),
                Norm::L2 | Norm::Linf => 1.0,
            };
            Some(w * factor * fro)
        }
        ConvexAtom::Sum { terms } => terms
            .iter()
            .map(|t| lipschitz_bound(&t.atom).map(|v| v * t.weight))
            .sum(),
        _ => None,
    }
}

/// `h̄(x) + (1/N) sum_s min_{allowed l} max_{l+} (h_l+(x) - C M_{l+,l})`
pub fn value_function(p: &SmcProblem, bounds: &SBounds, c: f64, x: &[f64]) -> f64 {
    let n = p.num_terms() as f64;
    let mut acc = 0.0;
    for s in 0..p.num_terms() {
        let h = p.component_values(x, s);
        acc += term_value(
            &h,
            bounds,
            s,
            c,
            &(0..h.len()).collect::<Vec<_>>(),
            &(0..h.len()).collect::<Vec<_>>(),
        )
        .0;
    }
    p.hbar().value(x) + acc / n
}

fn finite(e: BoundEntry) -> f64 {
    match e {
        BoundEntry::Finite(v) => v,
        BoundEntry::Forbidden => f64::NAN,
    }
}

/// Term value and minimizing choice, over `choices` (skipping forbidden
/// ones) with maxima over `rows`.
fn term_value(
    h: &[f64],
    bounds: &SBounds,
    s: usize,
    c: f64,
    choices: &[usize],
    rows: &[usize],
) -> (f64, usize) {
    let mut best = (f64::INFINITY, usize::MAX);
    for &l in choices.iter().filter(|&&l| bounds.allowed(s, l)) {
        let v = rows
            .iter()
            .map(|&lp| h[lp] - c * finite(bounds.get(s, lp, l)))
            .fold(f64::NEG_INFINITY, f64::max);
        if v < best.0 {
            best = (v, l);
        }
    }
    best
}

/// Epigraph model `min h̄ + (1/N) sum eta_s` with
/// `h_l+(x) <= eta_s + C sum_l M_{l+,l} t_l`, `sum_l t_l = 1`.
#[derive(Clone, Debug)]
pub struct BigMModel<'a> {
    pub problem: &'a SmcProblem,
    pub bounds: SBounds,
    pub c: f64,
    pub set: FeasibleSet,
    /// selectable components per term; a single entry fixes the term
    pub choices: Vec<Vec<usize>>,
    /// components entering the epigraph rows of each term
    pub rows: Vec<Vec<usize>>,
    /// `sum_s t_l^(s) >= 1` for every index `l`
    pub coverage: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStats {
    pub terms: usize,
    pub binaries: usize,
    pub continuous: usize,
    pub rows: usize,
}

impl ModelStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.terms, self.binaries, self.continuous, self.rows
        )
    }
}

pub fn build_global_model<'a>(
    p: &'a SmcProblem,
    bounds: &SBounds,
    c: f64,
) -> Result<BigMModel<'a>, MicpError> {
    if !(0.0..=1.0).contains(&c) {
        return Err(MicpError::Invalid("C must lie in [0, 1]".into()));
    }
    bounds
        .check_shape(p)
        .map_err(|e| MicpError::MissingBounds(e.to_string()))?;
    let choices = (0..p.num_terms())
        .map(|s| {
            (0..p.term(s).len())
                .filter(|&l| bounds.allowed(s, l))
                .collect()
        })
        .collect();
    let rows = p.sizes().iter().map(|&n| (0..n).collect()).collect();
    Ok(BigMModel {
        problem: p,
        bounds: bounds.clone(),
        c,
        set: p.set().clone(),
        choices,
        rows,
        coverage: false,
    })
}

impl<'a> BigMModel<'a> {
    pub fn with_coverage(mut self) -> Self {
        self.coverage = true;
        self
    }

    fn branching(&self, s: usize) -> bool {
        self.choices[s].len() >= 2
    }

    pub fn stats(&self) -> ModelStats {
        let binaries: usize = (0..self.choices.len())
            .filter(|&s| self.branching(s))
            .map(|s| self.choices[s].len())
            .sum();
        let epi: usize = self.rows.iter().map(|r| r.len()).sum();
        let simplex = (0..self.choices.len())
            .filter(|&s| self.branching(s))
            .count();
        let cover = if self.coverage { self.max_index() } else { 0 };
        ModelStats {
            terms: self.choices.len(),
            binaries,
            continuous: self.problem.dim() + self.choices.len(),
            rows: epi + simplex + cover,
        }
    }

    fn max_index(&self) -> usize {
        self.problem.sizes().into_iter().max().unwrap_or(0)
    }

    /// Value of the model at `x` with the best selection, ignoring coverage.
    pub fn value_at(&self, x: &[f64]) -> (f64, Selection) {
        let n = self.problem.num_terms() as f64;
        let mut acc = 0.0;
        let mut sel = Vec::with_capacity(self.choices.len());
        for s in 0..self.choices.len() {
            let h = self.problem.component_values(x, s);
            let (v, l) = term_value(&h, &self.bounds, s, self.c, &self.choices[s], &self.rows[s]);
            acc += v;
            sel.push(l);
        }
        (self.problem.hbar().value(x) + acc / n, Selection(sel))
    }

    /// Lowered relaxation with `t` columns; returns the model and the index
    /// of the first `t` column of every branching term.
    fn lower(&self) -> (StandardModel, Vec<Option<usize>>) {
        let p = self.problem;
        let inv_n = 1.0 / p.num_terms() as f64;
        let mut m = StandardModel::for_set(&self.set);
        m.add_objective_atom(p.hbar(), 1.0);
        let mut tcols = Vec::with_capacity(self.choices.len());
        let mut etas = Vec::with_capacity(self.choices.len());
        for s in 0..self.choices.len() {
            let eta = m.add_var(f64::NEG_INFINITY, f64::INFINITY, inv_n, 0.0, "eta");
            etas.push(eta);
            if self.branching(s) {
                let k = self.choices[s].len();
                let first = m.num_vars();
                for _ in 0..k {
                    m.add_var(0.0, 1.0, 0.0, 1.0 / k as f64, "t");
                }
                m.add_row((first..first + k).map(|j| (j, 1.0)).collect(), 1.0, 1.0);
                tcols.push(Some(first));
            } else {
                tcols.push(None);
            }
        }
        for s in 0..self.choices.len() {
            for &lp in &self.rows[s] {
                let atom = &p.term(s)[lp];
                let mut rhs = vec![(etas[s], 1.0)];
                let mut konst = 0.0;
                match tcols[s] {
                    Some(first) => {
                        for (k, &l) in self.choices[s].iter().enumerate() {
                            let v = self.c * finite(self.bounds.get(s, lp, l));
                            if v != 0.0 {
                                rhs.push((first + k, v));
                            }
                        }
                    }
                    None => konst = self.c * finite(self.bounds.get(s, lp, self.choices[s][0])),
                }
                m.add_atom_le(atom, rhs, konst);
            }
        }
        if self.coverage {
            for l in 0..self.max_index() {
                let mut coefs = vec![];
                let mut fixed = 0.0;
                for s in 0..self.choices.len() {
                    match tcols[s] {
                        Some(first) => {
                            if let Some(k) = self.choices[s].iter().position(|&c| c == l) {
                                coefs.push((first + k, 1.0));
                            }
                        }
                        None if self.choices[s][0] == l => fixed += 1.0,
                        None => {}
                    }
                }
                m.add_row(coefs, 1.0 - fixed, f64::INFINITY);
            }
        }
        (m, tcols)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Budget {
    pub time_limit: Option<Duration>,
    pub node_cap: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            time_limit: Some(DEFAULT_TIME_LIMIT),
            node_cap: 1_000_000,
        }
    }
}

impl Budget {
    pub fn is_zero(&self) -> bool {
        self.node_cap == 0 || self.time_limit == Some(Duration::ZERO)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicpSolution {
    pub value: f64,
    pub x: Vec<f64>,
    pub selection: Selection,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MicpResult {
    Optimal(MicpSolution),
    /// budget exhausted with an incumbent
    Feasible(MicpSolution),
    Infeasible,
    /// budget exhausted before any integral point was found
    Unsolved {
        nodes: usize,
    },
}

#[derive(PartialEq)]
struct Key(f64, usize);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Best-first branch-and-bound over the `t` columns: nodes ordered by
/// parent bound then creation order, children fix one term to each of its
/// choices, the relaxation point seeds incumbents.
pub fn solve_micp(
    model: &BigMModel,
    budget: &Budget,
    cfg: &SolverConfig,
) -> Result<MicpResult, MicpError> {
    if budget.is_zero() {
        return Ok(MicpResult::Unsolved { nodes: 0 });
    }
    let t0 = Instant::now();
    let (base, tcols) = model.lower();
    let d = model.problem.dim();
    let terms = model.choices.len();
    let mut solver = ConvexSolver::new(cfg.clone());
    let mut nodes: Vec<Vec<Option<usize>>> = vec![vec![None; terms]];
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Key(f64::NEG_INFINITY, 0)));
    let mut incumbent: Option<(f64, Vec<f64>, Selection)> = None;
    let mut processed = 0usize;
    let tol = |v: f64| 1e-9 * (1.0 + v.abs());
    while let Some(Reverse(Key(bound, id))) = heap.pop() {
        if let Some((inc, _, _)) = &incumbent {
            if bound >= inc - tol(*inc) {
                continue;
            }
        }
        let over_time = budget.time_limit.is_some_and(|t| t0.elapsed() >= t);
        if processed >= budget.node_cap || over_time {
            return Ok(match incumbent {
                Some((value, x, selection)) => MicpResult::Feasible(MicpSolution {
                    value,
                    x,
                    selection,
                    nodes: processed,
                }),
                None => MicpResult::Unsolved { nodes: processed },
            });
        }
        processed += 1;
        let fix = nodes[id].clone();
        let mut m = base.clone();
        for s in 0..terms {
            if let (Some(first), Some(k)) = (tcols[s], fix[s]) {
                for j in 0..model.choices[s].len() {
                    let v = if j == k { 1.0 } else { 0.0 };
                    m.lo[first + j] = v;
                    m.hi[first + j] = v;
                }
            }
        }
        let sol = match solver.solve_model(&m) {
            Ok(sol) => sol,
            Err(SolveError::Infeasible) => continue,
            Err(e) => return Err(lift(e)),
        };
        let x = &sol.z[..d];
        let relax = sol.value;
        let frac = (0..terms).find(|&s| {
            tcols[s].is_some_and(|first| {
                (0..model.choices[s].len()).all(|j| sol.z[first + j] < 1.0 - 1e-9)
            })
        });
        let mut offer = |v: f64, x: &[f64], sel: Selection| {
            if incumbent.as_ref().map_or(true, |(inc, _, _)| v < *inc) {
                incumbent = Some((v, x.to_vec(), sel));
            }
        };
        if !model.coverage {
            let (v, sel) = model.value_at(x);
            offer(v, x, sel);
        }
        let Some(s) = frac else {
            let sel = (0..terms)
                .map(|s| match tcols[s] {
                    Some(first) => {
                        let k = (0..model.choices[s].len())
                            .max_by(|&a, &b| {
                                sol.z[first + a]
                                    .total_cmp(&sol.z[first + b])
                                    .then(b.cmp(&a))
                            })
                            .unwrap_or(0);
                        model.choices[s][k]
                    }
                    None => model.choices[s][0],
                })
                .collect();
            offer(relax, x, Selection(sel));
            continue;
        };
        if let Some((inc, _, _)) = &incumbent {
            if relax >= inc - tol(*inc) {
                continue;
            }
        }
        for k in 0..model.choices[s].len() {
            let mut child = fix.clone();
            child[s] = Some(k);
            nodes.push(child);
            heap.push(Reverse(Key(relax, nodes.len() - 1)));
        }
    }
    Ok(match incumbent {
        Some((value, x, selection)) => MicpResult::Optimal(MicpSolution {
            value,
            x,
            selection,
            nodes: processed,
        }),
        None => MicpResult::Infeasible,
    })
}

/// Model of `F̂(.|x̂) = h̄ + (1/N) sum_s min_{l in A_s(x̂)} h_l` over
/// `X ∩ S`: binaries only for degenerate terms.
pub fn build_local_model<'a>(
    p: &'a SmcProblem,
    xhat: &[f64],
    rho: f64,
    region: &FeasibleSet,
    local_bounds: Option<&SBounds>,
) -> Result<BigMModel<'a>, MicpError> {
    let set = p.set().intersect(region)?;
    let choices: Vec<Vec<usize>> = (0..p.num_terms())
        .map(|s| p.active_set(xhat, s, rho))
        .collect();
    let bounds = match local_bounds {
        Some(b) => {
            b.check_shape(p)?;
            b.clone()
        }
        None if choices.iter().all(|c| c.len() == 1) => SBounds::zeros(&p.sizes()),
        None => auto_sbounds(&p.with_set(set.clone())?, &SolverConfig::default())?,
    };
    Ok(BigMModel {
        problem: p,
        bounds,
        c: 1.0,
        set,
        rows: choices.clone(),
        choices,
        coverage: false,
    })
}

/// Exact minimum of `F̂(.|x̂)` over `X ∩ S` by scanning the local pieces.
pub fn local_enumeration(
    p: &SmcProblem,
    xhat: &[f64],
    rho: f64,
    region: &FeasibleSet,
    cap: u128,
    cfg: &SolverConfig,
) -> Result<(f64, Vec<f64>), MicpError> {
    let set = p.set().intersect(region)?;
    let act: Vec<Vec<usize>> = (0..p.num_terms())
        .map(|s| p.active_set(xhat, s, rho))
        .collect();
    let count: u128 = act.iter().map(|a| a.len() as u128).product();
    if count > cap {
        return Err(MicpError::CapExceeded { count, cap });
    }
    let inv_n = 1.0 / p.num_terms() as f64;
    let mut solver = ConvexSolver::new(cfg.clone());
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mut idx in 0..count {
        let mut obj = Objective::default();
        obj.push(1.0, p.hbar());
        let mut pick = vec![0; act.len()];
        for s in (0..act.len()).rev() {
            let n = act[s].len() as u128;
            pick[s] = act[s][(idx % n) as usize];
            idx /= n;
        }
        for (s, &l) in pick.iter().enumerate() {
            obj.push(inv_n, &p.term(s)[l]);
        }
        match solver.minimize(&obj, &set) {
            Ok(sol) => {
                if best.as_ref().map_or(true, |b| sol.value < b.0) {
                    best = Some((sol.value, sol.x));
                }
            }
            Err(SolveError::Infeasible) => return Err(MicpError::Solve(SolveError::Infeasible)),
            Err(e) => return Err(lift(e)),
        }
    }
    best.ok_or(MicpError::Solve(SolveError::Infeasible))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    CertifiedLocalMin { value: f64 },
    Improved { x: Vec<f64>, value: f64 },
    Inconclusive { reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertifyOptions {
    pub rho: f64,
    pub delta_glob: f64,
    pub budget: Budget,
    pub enum_threshold: u128,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            rho: DEFAULT_RHO,
            delta_glob: DEFAULT_DELTA_GLOB,
            budget: Budget::default(),
            enum_threshold: LOCAL_ENUM_THRESHOLD,
        }
    }
}

/// Either proves `x̂` minimizes `F` over `X ∩ S` or finds a point better by
/// at least `delta_glob`.
pub fn certify_or_improve(
    p: &SmcProblem,
    xhat: &[f64],
    region: &FeasibleSet,
    local_bounds: Option<&SBounds>,
    opts: &CertifyOptions,
    cfg: &SolverConfig,
) -> Result<Verdict, MicpError> {
    if xhat.len() != p.dim() {
        return Err(MicpError::ShapeMismatch("anchor dimension".into()));
    }
    if opts.budget.is_zero() {
        return Ok(Verdict::Inconclusive {
            reason: "zero budget".into(),
        });
    }
    let fx = p.objective(xhat);
    let factor = p.degeneracy(xhat, opts.rho).factor;
    let (value, x, exact) = if factor <= opts.enum_threshold {
        let (v, x) = local_enumeration(p, xhat, opts.rho, region, opts.enum_threshold, cfg)?;
        (v, x, true)
    } else {
        let model = build_local_model(p, xhat, opts.rho, region, local_bounds)?;
        match solve_micp(&model, &opts.budget, cfg)? {
            MicpResult::Optimal(s) => (s.value, s.x, true),
            MicpResult::Feasible(s) => (s.value, s.x, false),
            MicpResult::Infeasible => return Err(MicpError::Solve(SolveError::Infeasible)),
            MicpResult::Unsolved { .. } => {
                return Ok(Verdict::Inconclusive {
                    reason: "budget exhausted".into(),
                })
            }
        }
    };
    if exact && value >= fx - CERT_TOL {
        return Ok(Verdict::CertifiedLocalMin { value: fx });
    }
    let fnew = p.objective(&x);
    if fnew <= fx - opts.delta_glob {
        return Ok(Verdict::Improved { x, value: fnew });
    }
    Ok(Verdict::Inconclusive {
        reason: if exact {
            "local optimum below the anchor without sufficient decrease".into()
        } else {
            "budget exhausted".into()
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub start_value: f64,
    pub x: Vec<f64>,
    pub value: f64,
    pub restarts: usize,
    pub verdicts: Vec<Verdict>,
    /// relative decrease in percent
    pub enhancement: f64,
}

/// Certify-or-improve loop: after each improvement, local search restarts
/// from the greedy weights at the new point; stops at a certificate, an
/// inconclusive verdict or `max_restarts`.
#[allow(clippy::too_many_arguments)]
pub fn refine_loop(
    p: &SmcProblem,
    x_start: &[f64],
    neighbourhood: &dyn Fn(&[f64]) -> Result<(FeasibleSet, Option<SBounds>), MicpError>,
    schedule: &Schedule,
    opts: &CertifyOptions,
    max_restarts: usize,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<RefineReport, MicpError> {
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let start_value = p.objective(x_start);
    let mut x = x_start.to_vec();
    let mut value = start_value;
    let mut verdicts = vec![];
    let mut restarts = 0;
    loop {
        let (region, bounds) = neighbourhood(&x)?;
        let v = certify_or_improve(p, &x, &region, bounds.as_ref(), opts, cfg)?;
        verdicts.push(v.clone());
        let Verdict::Improved { x: xn, value: vn } = v else {
            break;
        };
        if restarts >= max_restarts {
            x = xn;
            value = vn;
            break;
        }
        restarts += 1;
        let q = Weights::greedy(p, &xn);
        let t = ram_run(
            p,
            &q,
            schedule,
            crate::local::DEFAULT_DELTA,
            crate::local::DEFAULT_KMAX,
            cfg,
            &mut rng,
        )?;
        if t.best_value < vn {
            x = t.best_x;
            value = t.best_value;
        } else {
            x = xn;
            value = vn;
        }
    }
    let enhancement = if start_value == value {
        0.0
    } else {
        100.0 * (start_value - value) / start_value.abs().max(1e-12)
    };
    Ok(RefineReport {
        start_value,
        x,
        value,
        restarts,
        verdicts,
        enhancement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcs::testutil;
    use crate::problems;
    use crate::smc::DEFAULT_ENUM_CAP;
    use rand::Rng;

    fn abs_three() -> SmcProblem {
        problems::toy_library().remove("abs_three").unwrap()
    }

    fn one_term(hp: ConvexAtom, hl: ConvexAtom, set: FeasibleSet) -> SmcProblem {
        SmcProblem::new("pair", ConvexAtom::constant(0.0), vec![vec![hp, hl]], set).unwrap()
    }

    #[test]
    fn smooth_bound_example() {
        let p = one_term(
            ConvexAtom::poly2(1.0, 0.0, 0.0).unwrap(),
            ConvexAtom::constant(0.0),
            FeasibleSet::cube(1, 1.0).unwrap(),
        );
        let v = sbounds_smooth(&p, 0, 0, 1, 2.0, 2.0, &[0.0], &SolverConfig::default()).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        let v = sbounds_smooth(&p, 0, 0, 0, 2.0, 2.0, &[0.0], &SolverConfig::default()).unwrap();
        assert!(v >= 0.0);
        let free = one_term(
            ConvexAtom::poly2(1.0, 0.0, 0.0).unwrap(),
            ConvexAtom::constant(0.0),
            FeasibleSet::free(1),
        );
        assert_eq!(
            sbounds_smooth(&free, 0, 0, 1, 2.0, 2.0, &[0.0], &SolverConfig::default()),
            Err(MicpError::Unbounded)
        );
    }

    #[test]
    fn maxaffine_bound_example() {
        let abs = ConvexAtom::max_affine(vec![
            crate::funcs::AffineRow {
                a: vec![1.0],
                b: 0.0,
            },
            crate::funcs::AffineRow {
                a: vec![-1.0],
                b: 0.0,
            },
        ])
        .unwrap();
        let p = one_term(
            abs,
            ConvexAtom::constant(0.0),
            FeasibleSet::cube(1, 1.0).unwrap(),
        );
        assert!(
            (sbounds_maxaffine(&p, 0, 0, 1, &SolverConfig::default()).unwrap() - 1.0).abs() < 1e-12
        );
        let q = one_term(
            ConvexAtom::affine(vec![2.0], 1.0),
            ConvexAtom::poly2(1.0, 0.0, 0.0).unwrap(),
            FeasibleSet::cube(1, 3.0).unwrap(),
        );
        // max 2x + 1 - x^2 = 2 at x = 1
        assert!(
            (sbounds_maxaffine(&q, 0, 0, 1, &SolverConfig::default()).unwrap() - 2.0).abs() < 1e-7
        );
    }

    #[test]
    fn trs_bound_examples() {
        let cfg = SolverConfig::default();
        let ball = FeasibleSet::cube(1, 1.0).unwrap();
        let p = one_term(
            ConvexAtom::constant(0.0),
            ConvexAtom::poly2(1.0, 0.0, 0.0).unwrap(),
            ball.clone(),
        );
        assert!(sbounds_trs(&p, 0, 0, 1, &[0.0], 1.0, &cfg).unwrap().abs() < 1e-7);
        let p = one_term(
            ConvexAtom::poly2(1.0, 0.0, 0.0).unwrap(),
            ConvexAtom::constant(0.0),
            ball.clone(),
        );
        assert!((sbounds_trs(&p, 0, 0, 1, &[0.0], 1.0, &cfg).unwrap() - 1.0).abs() < 1e-7);
        let p = one_term(ConvexAtom::constant(3.5), ConvexAtom::constant(1.0), ball);
        assert!((sbounds_trs(&p, 0, 0, 1, &[0.0], 1.0, &cfg).unwrap() - 2.5).abs() < 1e-7);
    }

    #[test]
    fn crude_examples() {
        assert_eq!(sbounds_crude(4.0, 1.0), 3.0);
        assert_eq!(sbounds_crude(0.7, 0.7), 0.0);
    }

    #[test]
    fn auto_bounds_are_valid_by_sampling() {
        let mut r = testutil::rng(3);
        let lib = problems::toy_library();
        for name in ["abs_three", "plane_pair", "parabolas"] {
            let p = &lib[name];
            let b = auto_sbounds(p, &SolverConfig::default()).unwrap();
            for _ in 0..3000 {
                let u: Vec<f64> = (0..p.dim())
                    .map(|j| r.gen_range(p.set().lower[j]..=p.set().upper[j]))
                    .collect();
                assert!(b.violation(p, &u, 1e-9) <= 1e-9, "{name}");
            }
        }
    }

    #[test]
    fn value_function_interpolates() {
        let p = abs_three();
        let b = auto_sbounds(&p, &SolverConfig::default()).unwrap();
        let mut r = testutil::rng(8);
        for _ in 0..1000 {
            let x = [r.gen_range(-2.0..=2.0)];
            assert!((value_function(&p, &b, 1.0, &x) - p.objective(&x)).abs() < 1e-9);
            let hs = p.component_values(&x, 0);
            let summax = p.hbar().value(&x) + hs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((value_function(&p, &b, 0.0, &x) - summax).abs() < 1e-12);
            let vals: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
                .iter()
                .map(|&c| value_function(&p, &b, c, &x))
                .collect();
            assert!(vals.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn forbidden_is_structural() {
        let p = abs_three();
        let mut b = auto_sbounds(&p, &SolverConfig::default()).unwrap();
        b.set(0, 0, 2, BoundEntry::Forbidden);
        assert!(!b.allowed(0, 2));
        let m = build_global_model(&p, &b, 1.0).unwrap();
        assert_eq!(m.choices[0], vec![0, 1]);
        let json = serde_json::to_string(&b).unwrap();
        assert!(json.contains("\"forbidden\""));
        assert_eq!(serde_json::from_str::<SBounds>(&json).unwrap(), b);
    }

    #[test]
    fn micp_matches_enumeration() {
        let cfg = SolverConfig::default();
        let p = abs_three();
        let b = auto_sbounds(&p, &cfg).unwrap();
        let m = build_global_model(&p, &b, 1.0).unwrap();
        assert_eq!(m.stats().binaries, 3);
        let MicpResult::Optimal(s) = solve_micp(&m, &Budget::default(), &cfg).unwrap() else {
            panic!()
        };
        assert!((s.value + 33.0 / 16.0).abs() < 1e-9);

        let p = problems::fully_active(
            2,
            &[2, 3],
            2,
            ConvexAtom::quadratic(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, -0.25], 0.0)
                .unwrap(),
            FeasibleSet::cube(2, 4.0).unwrap(),
        )
        .unwrap();
        let b = auto_sbounds(&p, &cfg).unwrap();
        let m = build_global_model(&p, &b, 1.0).unwrap();
        let MicpResult::Optimal(s) = solve_micp(&m, &Budget::default(), &cfg).unwrap() else {
            panic!()
        };
        let g = p.enumerate_global(&cfg, DEFAULT_ENUM_CAP).unwrap();
        assert!(
            (s.value - g.value).abs() < 1e-6,
            "{} vs {}",
            s.value,
            g.value
        );
    }

    #[test]
    fn single_selection_model_is_one_solve() {
        let p = SmcProblem::new(
            "convex",
            ConvexAtom::constant(0.0),
            vec![vec![ConvexAtom::poly2(1.0, -1.0, 0.0).unwrap()]],
            FeasibleSet::cube(1, 2.0).unwrap(),
        )
        .unwrap();
        let m = build_global_model(&p, &SBounds::zeros(&[1]), 1.0).unwrap();
        let MicpResult::Optimal(s) =
            solve_micp(&m, &Budget::default(), &SolverConfig::default()).unwrap()
        else {
            panic!()
        };
        assert_eq!(s.nodes, 1);
        assert!((s.value + 0.25).abs() < 1e-9);
    }

    #[test]
    fn coverage_forces_the_single_choice() {
        let p = SmcProblem::new(
            "cover",
            ConvexAtom::constant(0.0),
            vec![vec![ConvexAtom::affine(vec![1.0], 0.0)]],
            FeasibleSet::cube(1, 1.0).unwrap(),
        )
        .unwrap();
        let m = build_global_model(&p, &SBounds::zeros(&[1]), 1.0)
            .unwrap()
            .with_coverage();
        let MicpResult::Optimal(s) =
            solve_micp(&m, &Budget::default(), &SolverConfig::default()).unwrap()
        else {
            panic!()
        };
        assert_eq!(s.selection, Selection(vec![0]));
        // two terms, two indices: coverage forbids picking the same index twice
        let comps = vec![
            ConvexAtom::affine(vec![1.0], 0.0),
            ConvexAtom::affine(vec![1.0], 1.0),
        ];
        let p = SmcProblem::new(
            "cover2",
            ConvexAtom::constant(0.0),
            vec![comps.clone(), comps],
            FeasibleSet::cube(1, 1.0).unwrap(),
        )
        .unwrap();
        let b = auto_sbounds(&p, &SolverConfig::default()).unwrap();
        let m = build_global_model(&p, &b, 1.0).unwrap().with_coverage();
        let MicpResult::Optimal(s) =
            solve_micp(&m, &Budget::default(), &SolverConfig::default()).unwrap()
        else {
            panic!()
        };
        let mut sel = s.selection.0.clone();
        sel.sort();
        assert_eq!(sel, vec![0, 1]);
        assert!((s.value + 0.5).abs() < 1e-9);
    }

    #[test]
    fn local_model_shape() {
        let p = abs_three();
        let region = FeasibleSet::boxed(vec![-0.5], vec![0.25]).unwrap();
        let m = build_local_model(&p, &[-1.0 / 16.0], DEFAULT_RHO, &region, None).unwrap();
        assert_eq!(m.stats().binaries, 2);
        assert_eq!(m.choices, vec![vec![0, 2]]);
        let m = build_local_model(&p, &[0.0], DEFAULT_RHO, &region, None).unwrap();
        assert_eq!(m.stats().binaries, 0);
    }

    #[test]
    fn certification_examples() {
        let cfg = SolverConfig::default();
        let p = abs_three();
        let opts = CertifyOptions::default();
        let s0 = FeasibleSet::boxed(vec![-0.1], vec![0.1]).unwrap();
        assert_eq!(
            certify_or_improve(&p, &[0.0], &s0, None, &opts, &cfg).unwrap(),
            Verdict::CertifiedLocalMin { value: -0.125 }
        );
        let s1 = FeasibleSet::boxed(vec![-0.5], vec![0.25]).unwrap();
        let Verdict::Improved { x, value } =
            certify_or_improve(&p, &[-1.0 / 16.0], &s1, None, &opts, &cfg).unwrap()
        else {
            panic!()
        };
        assert!((x[0] + 0.5).abs() < 1e-9 && (value + 9.0 / 16.0).abs() < 1e-9);
        // the same through branch-and-bound instead of enumeration
        let forced = CertifyOptions {
            enum_threshold: 1,
            ..CertifyOptions::default()
        };
        let Verdict::Improved { value, .. } =
            certify_or_improve(&p, &[-1.0 / 16.0], &s1, None, &forced, &cfg).unwrap()
        else {
            panic!()
        };
        assert!((value + 9.0 / 16.0).abs() < 1e-9);
        let zero = CertifyOptions {
            budget: Budget {
                time_limit: Some(Duration::ZERO),
                node_cap: 10,
            },
            ..CertifyOptions::default()
        };
        assert!(matches!(
            certify_or_improve(&p, &[0.0], &s0, None, &zero, &cfg).unwrap(),
            Verdict::Inconclusive { .. }
        ));
        let two = problems::toy_library().remove("two_clip").unwrap();
        let s2 = FeasibleSet::boxed(vec![0.4], vec![0.6]).unwrap();
        assert!(matches!(
            certify_or_improve(&two, &[0.5], &s2, None, &opts, &cfg).unwrap(),
            Verdict::CertifiedLocalMin { value } if value.abs() < 1e-12
        ));
    }

    #[test]
    fn certification_agrees_with_grid() {
        let cfg = SolverConfig::default();
        let p = abs_three();
        let opts = CertifyOptions::default();
        for i in 0..40 {
            let xhat = -2.0 + 0.1 * i as f64 + 0.013;
            let (lo, hi) = ((xhat - 0.3f64).max(-2.0), (xhat + 0.3f64).min(2.0));
            let region = FeasibleSet::boxed(vec![lo], vec![hi]).unwrap();
            let v = certify_or_improve(&p, &[xhat], &region, None, &opts, &cfg).unwrap();
            let fx = p.objective(&[xhat]);
            let grid = (0..=((hi - lo) / 1e-3) as usize)
                .map(|k| p.objective(&[lo + 1e-3 * k as f64]))
                .fold(f64::INFINITY, f64::min);
            match v {
                Verdict::CertifiedLocalMin { .. } => assert!(grid >= fx - 1e-9),
                Verdict::Improved { value, .. } => assert!(value < fx),
                Verdict::Inconclusive { .. } => {}
            }
        }
    }

    #[test]
    fn refine_reaches_global_on_abs_three() {
        let p = abs_three();
        let nb = |x: &[f64]| -> Result<(FeasibleSet, Option<SBounds>), MicpError> {
            Ok((
                FeasibleSet::boxed(vec![x[0] - 0.4375], vec![x[0] + 0.3125])?,
                None,
            ))
        };
        let r = refine_loop(
            &p,
            &[-1.0 / 16.0],
            &nb,
            &Schedule::am(),
            &CertifyOptions::default(),
            10,
            &SolverConfig::default(),
            0,
        )
        .unwrap();
        assert!(r.restarts >= 1);
        assert!((r.value + 33.0 / 16.0).abs() < 1e-9);
        assert!(matches!(
            r.verdicts.last(),
            Some(Verdict::CertifiedLocalMin { .. })
        ));
        assert!(r.enhancement > 0.0);
    }
}
