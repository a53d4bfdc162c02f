//! Deterministic convex subproblem oracle.
//!
//! Objectives are nonnegative combinations of atoms minimized over a
//! [`FeasibleSet`]. They are lowered to a [`StandardModel`] and solved by a
//! dense simplex (linear objective) or Lemke's method (quadratic objective).
//! Quadratic and Euclidean-norm constraints are handled by adding
//! subgradient cuts until the violation drops below tolerance. The
//! projected-subgradient method is available as an explicit fallback.

mod fallback;
pub mod feasible;
mod lemke;
pub mod model;
mod simplex;

use std::borrow::Cow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use feasible::{EpigraphLink, FeasibleSet, Halfspace, NormBall};
pub use model::{NonlinearRow, Row, StandardModel};

use crate::funcs::{ConvexAtom, FuncError, SimplexVector};
use crate::smc::SmcProblem;
use lemke::QpInput;
use simplex::{LpStatus, Simplex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("feasible set is empty")]
    Infeasible,
    #[error("objective is unbounded below on the feasible set")]
    Unbounded,
    #[error("iteration limit reached (best value {value})")]
    IterationLimit { x: Vec<f64>, value: f64 },
    #[error("unsupported atom: {0}")]
    UnsupportedAtom(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Func(#[from] FuncError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Simplex for linear objectives, Lemke for quadratic ones.
    #[default]
    Auto,
    Lp,
    Qp,
    SubgradientFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iters: usize,
    pub method: Method,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_abs: 1e-9,
            tol_rel: 1e-9,
            max_iters: 100_000,
            method: Method::Auto,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.tol_abs > 0.0 && self.tol_rel > 0.0) {
            return Err(SolveError::Invalid("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Solution of a standard-form model: all variables and the model objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSolution {
    pub z: Vec<f64>,
    pub value: f64,
}

/// `sum_i w_i * atom_i(x)` with `w_i >= 0`.
#[derive(Clone, Debug, Default)]
pub struct Objective<'a> {
    pub terms: Vec<(f64, Cow<'a, ConvexAtom>)>,
}

impl<'a> Objective<'a> {
    pub fn push(&mut self, weight: f64, atom: &'a ConvexAtom) {
        self.terms.push((weight, Cow::Borrowed(atom)));
    }

    pub fn push_owned(&mut self, weight: f64, atom: ConvexAtom) {
        self.terms.push((weight, Cow::Owned(atom)));
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(w, a)| w * a.value(x)).sum()
    }

    pub fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for (w, a) in &self.terms {
            a.add_subgradient(x, *w, &mut g);
        }
        g
    }

    /// Standard-form model of this objective over `set`.
    pub fn lower(&self, set: &FeasibleSet) -> StandardModel {
        let mut model = StandardModel::for_set(set);
        for (w, a) in &self.terms {
            model.add_objective_atom(a, *w);
        }
        model
    }
}

/// `h̄(x) + (1/N) sum_s sum_l q_l^(s) h_l^(s)(x)`.
#[derive(Clone, Copy, Debug)]
pub struct WeightedSubproblem<'a> {
    pub problem: &'a SmcProblem,
    pub weights: &'a [SimplexVector],
}

impl<'a> WeightedSubproblem<'a> {
    pub fn new(problem: &'a SmcProblem, weights: &'a [SimplexVector]) -> Result<Self, SolveError> {
        if weights.len() != problem.num_terms() {
            return Err(SolveError::Invalid(format!(
                "expected {} weight vectors, got {}",
                problem.num_terms(),
                weights.len()
            )));
        }
        for (s, q) in weights.iter().enumerate() {
            if q.len() != problem.term(s).len() {
                return Err(SolveError::Invalid(format!(
                    "weight vector {s} has wrong length"
                )));
            }
        }
        Ok(WeightedSubproblem { problem, weights })
    }

    /// Every component enters the objective, including zero-weight ones, so
    /// the lowered structure does not depend on the weights.
    pub fn objective(&self) -> Objective<'a> {
        let p = self.problem;
        let inv_n = 1.0 / p.num_terms() as f64;
        let mut obj = Objective::default();
        obj.push(1.0, p.hbar());
        for (s, q) in self.weights.iter().enumerate() {
            for (l, h) in p.term(s).iter().enumerate() {
                obj.push(q[l] * inv_n, h);
            }
        }
        obj
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.objective().value(x)
    }
}

/// Minimizes a weighted subproblem with a fresh solver.
pub fn solve_convex(sp: &WeightedSubproblem, cfg: &SolverConfig) -> Result<Solution, SolveError> {
    ConvexSolver::new(cfg.clone()).solve_weighted(sp)
}

/// Lowers a weighted subproblem to a pure LP/QP model.
pub fn lower_to_lp_or_qp(sp: &WeightedSubproblem) -> Result<StandardModel, SolveError> {
    let model = sp.objective().lower(sp.problem.set());
    if !model.nonlinear.is_empty() {
        return Err(SolveError::UnsupportedAtom(
            "Euclidean norms or quadratics appear inside constraints".into(),
        ));
    }
    Ok(model)
}

struct WarmLp {
    n: usize,
    a: Vec<Vec<f64>>,
    row_lo: Vec<f64>,
    row_hi: Vec<f64>,
    simplex: Simplex,
}

const TRUST_BOX: f64 = 1e6;
const MAX_CUT_ROUNDS: usize = 5_000;

/// Solver instance; reuses the last simplex tableau when consecutive linear
/// models share their rows, so a sequence of solves is deterministic given
/// its history.
pub struct ConvexSolver {
    cfg: SolverConfig,
    warm: Option<WarmLp>,
}

impl ConvexSolver {
    pub fn new(cfg: SolverConfig) -> Self {
        ConvexSolver { cfg, warm: None }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn solve_weighted(&mut self, sp: &WeightedSubproblem) -> Result<Solution, SolveError> {
        self.minimize(&sp.objective(), sp.problem.set())
    }

    /// Minimizes `obj` over `set`; the reported value is the exact objective.
    pub fn minimize(&mut self, obj: &Objective, set: &FeasibleSet) -> Result<Solution, SolveError> {
        if self.cfg.method == Method::SubgradientFallback {
            return fallback::minimize(obj, set, &self.cfg);
        }
        let model = obj.lower(set);
        let sol = self.solve_model(&model)?;
        let x = sol.z[..set.dim].to_vec();
        let value = obj.value(&x);
        Ok(Solution { x, value })
    }

    pub fn solve_model(&mut self, model: &StandardModel) -> Result<ModelSolution, SolveError> {
        let quad = model.has_quadratic();
        let use_qp = match self.cfg.method {
            Method::Lp if quad => {
                return Err(SolveError::UnsupportedAtom(
                    "quadratic objective with the LP method".into(),
                ))
            }
            Method::Qp => true,
            _ => quad,
        };
        let n = model.num_vars();
        let (a, row_lo, row_hi) = model.dense_rows();
        if model.nonlinear.is_empty() && !use_qp {
            return self.solve_warm_lp(model, a, row_lo, row_hi);
        }
        let mut lo = model.lo.clone();
        let mut hi = model.hi.clone();
        let mut cuts: Vec<Vec<f64>> = Vec::new();
        let mut cut_hi: Vec<f64> = Vec::new();
        for nl in &model.nonlinear {
            let (r, h) = cut_at(model, nl, &model.start);
            cuts.push(r);
            cut_hi.push(h);
        }
        let mut trust = false;
        let mut lp: Option<Simplex> = None;
        for _ in 0..MAX_CUT_ROUNDS {
            let z = if use_qp {
                let mut rows = a.clone();
                rows.extend(cuts.iter().cloned());
                let mut rlo = row_lo.clone();
                rlo.extend(std::iter::repeat(f64::NEG_INFINITY).take(cuts.len()));
                let mut rhi = row_hi.clone();
                rhi.extend(cut_hi.iter().copied());
                let inp = QpInput {
                    h: &model.quad,
                    c: &model.cost,
                    lo: &lo,
                    hi: &hi,
                    rows: &rows,
                    row_lo: &rlo,
                    row_hi: &rhi,
                };
                match lemke::solve_qp(&inp, self.lp_iters()) {
                    Ok(z) => Ok(z),
                    Err(SolveError::Unbounded) => {
                        let mut s = Simplex::new(
                            &rows,
                            &rlo,
                            &rhi,
                            &lo,
                            &hi,
                            &vec![0.0; n],
                            &model.start,
                            self.cfg.tol_abs,
                        );
                        match s.solve(self.lp_iters()) {
                            LpStatus::Infeasible => Err(SolveError::Infeasible),
                            _ => Err(SolveError::Unbounded),
                        }
                    }
                    Err(e) => Err(e),
                }
            } else {
                let iters = self.lp_iters();
                let s = lp.get_or_insert_with(|| {
                    let mut s = Simplex::new(
                        &a,
                        &row_lo,
                        &row_hi,
                        &lo,
                        &hi,
                        &model.cost,
                        &model.start,
                        self.cfg.tol_abs,
                    );
                    for (r, h) in cuts.iter().zip(&cut_hi) {
                        s.add_row(r, f64::NEG_INFINITY, *h);
                    }
                    s
                });
                while s.rows() < a.len() + cuts.len() {
                    let k = s.rows() - a.len();
                    s.add_row(&cuts[k], f64::NEG_INFINITY, cut_hi[k]);
                }
                s.set_bounds(&lo, &hi);
                let st = s.solve(iters);
                lp_result(s, st, model)
            };
            let z = match z {
                Ok(z) => z,
                Err(SolveError::Unbounded) if !trust => {
                    trust = true;
                    for j in 0..n {
                        lo[j] = lo[j].max(-TRUST_BOX);
                        hi[j] = hi[j].min(TRUST_BOX);
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut added = false;
            for nl in &model.nonlinear {
                let viol = model.nonlinear_violation(nl, &z);
                let fx = nl.atom.value(&z[..model.dim]);
                let scale = fx.abs().max((fx - viol).abs());
                // the LP only resolves a cut up to its feasibility tolerance times the row size
                let (r, h) = cut_at(model, nl, &z);
                let width = r.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                if viol > self.cfg.tol_abs * width + self.cfg.tol_rel * scale {
                    cuts.push(r);
                    cut_hi.push(h);
                    added = true;
                }
            }
            if !added {
                if trust && (0..n).any(|j| z[j].abs() >= TRUST_BOX * (1.0 - 1e-9)) {
                    return Err(SolveError::Unbounded);
                }
                let value = model.objective_value(&z);
                return Ok(ModelSolution { z, value });
            }
        }
        Err(SolveError::Numerical(
            "outer approximation did not converge".into(),
        ))
    }

    fn lp_iters(&self) -> usize {
        self.cfg.max_iters
    }

    fn solve_warm_lp(
        &mut self,
        model: &StandardModel,
        a: Vec<Vec<f64>>,
        row_lo: Vec<f64>,
        row_hi: Vec<f64>,
    ) -> Result<ModelSolution, SolveError> {
        let n = model.num_vars();
        let reuse = matches!(&self.warm, Some(w) if w.n == n && w.a == a && w.row_lo == row_lo && w.row_hi == row_hi);
        if !reuse {
            let simplex = Simplex::new(
                &a,
                &row_lo,
                &row_hi,
                &model.lo,
                &model.hi,
                &model.cost,
                &model.start,
                self.cfg.tol_abs,
            );
            self.warm = Some(WarmLp {
                n,
                a,
                row_lo,
                row_hi,
                simplex,
            });
        }
        let iters = self.lp_iters();
        let w = self.warm.as_mut().expect("warm state just set");
        w.simplex.set_cost(&model.cost);
        w.simplex.set_bounds(&model.lo, &model.hi);
        let st = w.simplex.solve(iters);
        let out = lp_result(&w.simplex, st, model);
        if out.is_err() {
            self.warm = None;
        }
        out.map(|z| {
            let value = model.objective_value(&z);
            ModelSolution { z, value }
        })
    }
}

fn lp_result(s: &Simplex, st: LpStatus, model: &StandardModel) -> Result<Vec<f64>, SolveError> {
    match st {
        LpStatus::Optimal => Ok(s.structural()),
        LpStatus::Infeasible => Err(SolveError::Infeasible),
        LpStatus::Unbounded => Err(SolveError::Unbounded),
        LpStatus::IterationLimit => {
            let z = s.structural();
            let value = model.objective_value(&z);
            Err(SolveError::IterationLimit { x: z, value })
        }
    }
}

/// Subgradient cut `atom(x_k) + <g, x - x_k> <= <rhs, z> + rhs_const` as a
/// dense row with its upper bound.
fn cut_at(model: &StandardModel, nl: &NonlinearRow, z: &[f64]) -> (Vec<f64>, f64) {
    let x = &z[..model.dim];
    let mut g = vec![0.0; model.dim];
    nl.atom.add_subgradient(x, 1.0, &mut g);
    let fx = nl.atom.value(x);
    let mut row = vec![0.0; model.num_vars()];
    row[..model.dim].copy_from_slice(&g);
    for &(j, c) in &nl.rhs {
        row[j] -= c;
    }
    let gx: f64 = g.iter().zip(x).map(|(a, b)| a * b).sum();
    (row, nl.rhs_const - fx + gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcs::{testutil, AffineRow, Norm};
    use rand::Rng;

    fn minimize(
        terms: Vec<(f64, ConvexAtom)>,
        set: &FeasibleSet,
        cfg: SolverConfig,
    ) -> Result<Solution, SolveError> {
        let mut obj = Objective::default();
        for (w, a) in terms {
            obj.push_owned(w, a);
        }
        ConvexSolver::new(cfg).minimize(&obj, set)
    }

    fn abs1() -> ConvexAtom {
        ConvexAtom::max_affine(vec![
            AffineRow {
                a: vec![1.0],
                b: 0.0,
            },
            AffineRow {
                a: vec![-1.0],
                b: 0.0,
            },
        ])
        .unwrap()
    }

    #[test]
    fn spec_examples() {
        let box2 = FeasibleSet::cube(1, 2.0).unwrap();
        let cfg = SolverConfig::default();
        let s = minimize(
            vec![(1.0, ConvexAtom::poly2(1.0, 0.0, 0.0).unwrap())],
            &box2,
            cfg.clone(),
        )
        .unwrap();
        assert_eq!((s.x[0], s.value), (0.0, 0.0));
        let s = minimize(
            vec![
                (1.0, abs1()),
                (1.0, ConvexAtom::poly2(1.0, 0.0, 0.0).unwrap()),
            ],
            &box2,
            cfg.clone(),
        )
        .unwrap();
        assert!(s.x[0].abs() < 1e-12 && s.value.abs() < 1e-12);
        let s = minimize(
            vec![
                (0.5, ConvexAtom::poly2(1.0, -2.0, 1.0).unwrap()),
                (0.5, ConvexAtom::poly2(1.0, 0.0, 0.0).unwrap()),
            ],
            &FeasibleSet::free(1),
            cfg,
        )
        .unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-12 && (s.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn euclidean_norm_objective_via_cuts() {
        // min ||x - (3, 4)||_2 over the unit box -> corner (1, 1)
        let atom = ConvexAtom::norm_affine(
            Norm::L2,
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![-3.0, -4.0],
            1.0,
        )
        .unwrap();
        let s = minimize(
            vec![(1.0, atom)],
            &FeasibleSet::cube(2, 1.0).unwrap(),
            SolverConfig::default(),
        )
        .unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-6 && (s.x[1] - 1.0).abs() < 1e-6);
        assert!((s.value - 13f64.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn linear_objective_over_euclidean_ball() {
        let set = FeasibleSet::free(2).with_ball(NormBall {
            norm: Norm::L2,
            indices: vec![0, 1],
            center: vec![0.0, 0.0],
            radius: 1.0,
        });
        let s = minimize(
            vec![(1.0, ConvexAtom::affine(vec![1.0, 1.0], 0.0))],
            &set,
            SolverConfig::default(),
        )
        .unwrap();
        assert!((s.value + 2f64.sqrt()).abs() < 1e-8, "{}", s.value);
    }

    #[test]
    fn unbounded_is_reported() {
        let r = minimize(
            vec![(1.0, ConvexAtom::affine(vec![1.0], 0.0))],
            &FeasibleSet::free(1),
            SolverConfig::default(),
        );
        assert_eq!(r, Err(SolveError::Unbounded));
    }

    #[test]
    fn lp_method_rejects_quadratics() {
        let cfg = SolverConfig {
            method: Method::Lp,
            ..Default::default()
        };
        let r = minimize(
            vec![(1.0, ConvexAtom::poly2(1.0, 0.0, 0.0).unwrap())],
            &FeasibleSet::cube(1, 1.0).unwrap(),
            cfg,
        );
        assert!(matches!(r, Err(SolveError::UnsupportedAtom(_))));
    }

    #[test]
    fn forced_qp_method_solves_lps() {
        let cfg = SolverConfig {
            method: Method::Qp,
            ..Default::default()
        };
        let s = minimize(
            vec![(1.0, abs1())],
            &FeasibleSet::cube(1, 1.0).unwrap(),
            cfg,
        )
        .unwrap();
        assert!(s.value.abs() < 1e-12);
    }

    fn random_objective(r: &mut impl Rng, d: usize) -> Vec<(f64, ConvexAtom)> {
        let mut terms = vec![];
        for kind in [1usize, 2, 4, 5] {
            if kind == 1 || r.gen_bool(0.7) {
                terms.push((r.gen_range(0.2..1.0), testutil::random_atom(r, kind, d)));
            }
        }
        terms.push((1.0, ConvexAtom::affine(testutil::vec_in(r, d, 1.0), 0.0)));
        terms
    }

    #[test]
    fn optimality_against_random_feasible_points() {
        let mut r = testutil::rng(21);
        for _ in 0..30 {
            let d = r.gen_range(1..4);
            let set = FeasibleSet::cube(d, 2.0).unwrap();
            let terms = random_objective(&mut r, d);
            let s = minimize(terms.clone(), &set, SolverConfig::default()).unwrap();
            let f = |x: &[f64]| terms.iter().map(|(w, a)| w * a.value(x)).sum::<f64>();
            for _ in 0..100 {
                let y = testutil::vec_in(&mut r, d, 2.0);
                assert!(f(&y) >= s.value - 1e-6);
            }
        }
    }

    #[test]
    fn lowered_model_matches_subgradient_fallback() {
        let mut r = testutil::rng(8);
        let fb = SolverConfig {
            method: Method::SubgradientFallback,
            ..Default::default()
        };
        for _ in 0..50 {
            let d = r.gen_range(1..4);
            let set = FeasibleSet::cube(d, 2.0).unwrap();
            let terms = random_objective(&mut r, d);
            let a = minimize(terms.clone(), &set, SolverConfig::default()).unwrap();
            let b = match minimize(terms, &set, fb.clone()) {
                Ok(s) => s,
                Err(SolveError::IterationLimit { x, value }) => Solution { x, value },
                Err(e) => panic!("{e}"),
            };
            assert!(a.value <= b.value + 1e-9, "{} vs {}", a.value, b.value);
            assert!(
                b.value - a.value <= 1e-4 * (1.0 + a.value.abs()),
                "{} vs {}",
                a.value,
                b.value
            );
        }
    }

    #[test]
    fn repeated_solves_are_bit_identical() {
        let mut r = testutil::rng(2);
        let d = 3;
        let set = FeasibleSet::cube(d, 2.0).unwrap();
        let terms = random_objective(&mut r, d);
        let a = minimize(terms.clone(), &set, SolverConfig::default()).unwrap();
        let b = minimize(terms, &set, SolverConfig::default()).unwrap();
        assert_eq!(
            a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn warm_started_sequence_matches_cold_solves_in_value() {
        let mut r = testutil::rng(4);
        let d = 4;
        let set = FeasibleSet::cube(d, 1.0).unwrap();
        let rows: Vec<AffineRow> = (0..6)
            .map(|_| AffineRow {
                a: testutil::vec_in(&mut r, d, 1.0),
                b: r.gen_range(-1.0..1.0),
            })
            .collect();
        let hinge = ConvexAtom::max_affine(rows).unwrap();
        let mut warm = ConvexSolver::new(SolverConfig::default());
        for _ in 0..20 {
            let lin = ConvexAtom::affine(testutil::vec_in(&mut r, d, 1.0), 0.0);
            let mut obj = Objective::default();
            obj.push(1.0, &hinge);
            obj.push_owned(1.0, lin);
            let w = warm.minimize(&obj, &set).unwrap();
            let c = ConvexSolver::new(SolverConfig::default())
                .minimize(&obj, &set)
                .unwrap();
            assert!((w.value - c.value).abs() < 1e-9);
        }
    }
}
