//! Sum-of-minima-of-convex problems: objective, active sets, degeneracy,
//! convex pieces and the brute-force enumeration solver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funcs::{ConvexAtom, FuncError, SimplexVector};
use crate::subsolve::{solve_convex, FeasibleSet, SolveError, SolverConfig, WeightedSubproblem};

/// Absolute slack added to the relative active-set rule.
pub const ACTIVE_SLACK: f64 = 1e-12;
/// Default cap on the number of pieces scanned by [`SmcProblem::enumerate_global`].
pub const DEFAULT_ENUM_CAP: u128 = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmcError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("{count} selections exceed the enumeration cap {cap}")]
    CapExceeded { count: u128, cap: u128 },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Func(#[from] FuncError),
    #[error("json: {0}")]
    Json(String),
}

/// `F(x) = h̄(x) + (1/N) sum_s min_l h_l^(s)(x)` over a convex set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmcProblem {
    name: String,
    dim: usize,
    hbar: ConvexAtom,
    terms: Vec<Vec<ConvexAtom>>,
    set: FeasibleSet,
}

#[derive(Deserialize)]
struct ProblemDoc {
    #[serde(default)]
    name: String,
    dim: usize,
    hbar: ConvexAtom,
    terms: Vec<Vec<ConvexAtom>>,
    set: FeasibleSet,
}

/// One component index per term (0-based).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Selection(pub Vec<usize>);

impl Selection {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Degeneracy {
    /// Terms with at least two active components.
    pub set: Vec<usize>,
    /// Product of active-set sizes over all terms.
    pub factor: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GlobalOptimum {
    pub value: f64,
    pub x: Vec<f64>,
    pub sigma: Selection,
}

impl SmcProblem {
    pub fn new(
        name: impl Into<String>,
        hbar: ConvexAtom,
        terms: Vec<Vec<ConvexAtom>>,
        set: FeasibleSet,
    ) -> Result<Self, SmcError> {
        let dim = set.dim;
        let p = SmcProblem {
            name: name.into(),
            dim,
            hbar,
            terms,
            set,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), SmcError> {
        if self.terms.is_empty() {
            return Err(SmcError::Invalid("at least one term is required".into()));
        }
        if self.set.dim != self.dim {
            return Err(SmcError::Invalid(
                "feasible set dimension differs from problem".into(),
            ));
        }
        let check = |a: &ConvexAtom, what: String| -> Result<(), SmcError> {
            match a.validate()? {
                Some(d) if d != self.dim => Err(SmcError::Invalid(format!(
                    "{what} has dimension {d}, expected {}",
                    self.dim
                ))),
                _ => Ok(()),
            }
        };
        check(&self.hbar, "main function".into())?;
        for (s, t) in self.terms.iter().enumerate() {
            if t.is_empty() {
                return Err(SmcError::Invalid(format!("term {s} has no components")));
            }
            for (l, h) in t.iter().enumerate() {
                check(h, format!("component ({s}, {l})"))?;
            }
        }
        self.set.check_nonempty(&SolverConfig::default())?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SmcError> {
        let doc: ProblemDoc =
            serde_json::from_str(text).map_err(|e| SmcError::Json(e.to_string()))?;
        if doc.set.dim != doc.dim {
            return Err(SmcError::Invalid(
                "dim does not match the feasible set".into(),
            ));
        }
        Self::new(doc.name, doc.hbar, doc.terms, doc.set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hbar(&self) -> &ConvexAtom {
        &self.hbar
    }

    pub fn terms(&self) -> &[Vec<ConvexAtom>] {
        &self.terms
    }

    pub fn term(&self, s: usize) -> &[ConvexAtom] {
        &self.terms[s]
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.terms.iter().map(|t| t.len()).collect()
    }

    /// `n = prod n_s`, saturating.
    pub fn num_selections(&self) -> u128 {
        self.terms
            .iter()
            .fold(1u128, |acc, t| acc.saturating_mul(t.len() as u128))
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.set
    }

    /// Same functions over another feasible set.
    pub fn with_set(&self, set: FeasibleSet) -> Result<Self, SmcError> {
        Self::new(
            self.name.clone(),
            self.hbar.clone(),
            self.terms.clone(),
            set,
        )
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let inv_n = 1.0 / self.num_terms() as f64;
        let mut total = 0.0;
        for t in &self.terms {
            total += t.iter().map(|h| h.value(x)).fold(f64::INFINITY, f64::min);
        }
        self.hbar.value(x) + inv_n * total
    }

    pub fn component_values(&self, x: &[f64], s: usize) -> Vec<f64> {
        self.terms[s].iter().map(|h| h.value(x)).collect()
    }

    /// Indices `l` with `h_l - min h <= rho (max h - min h) + 1e-12`.
    pub fn active_set(&self, x: &[f64], s: usize, rho: f64) -> Vec<usize> {
        active_indices(&self.component_values(x, s), rho)
    }

    pub fn degeneracy(&self, x: &[f64], rho: f64) -> Degeneracy {
        let mut set = vec![];
        let mut factor = 1u128;
        for s in 0..self.num_terms() {
            let a = self.active_set(x, s, rho).len();
            if a >= 2 {
                set.push(s);
            }
            factor = factor.saturating_mul(a as u128);
        }
        Degeneracy { set, factor }
    }

    pub fn check_selection(&self, sigma: &Selection) -> Result<(), SmcError> {
        if sigma.0.len() != self.num_terms()
            || sigma.0.iter().zip(&self.terms).any(|(&l, t)| l >= t.len())
        {
            return Err(SmcError::Invalid(format!(
                "selection {:?} out of range",
                sigma.0
            )));
        }
        Ok(())
    }

    /// Vertex weights of a selection.
    pub fn selection_weights(&self, sigma: &Selection) -> Vec<SimplexVector> {
        sigma
            .0
            .iter()
            .zip(&self.terms)
            .map(|(&l, t)| SimplexVector::vertex(t.len(), l))
            .collect()
    }

    /// `F_sigma(x) = h̄(x) + (1/N) sum_s h_{sigma_s}^(s)(x)`.
    pub fn piece_objective(&self, sigma: &Selection, x: &[f64]) -> f64 {
        let inv_n = 1.0 / self.num_terms() as f64;
        let s: f64 = sigma
            .0
            .iter()
            .zip(&self.terms)
            .map(|(&l, t)| t[l].value(x))
            .sum();
        self.hbar.value(x) + inv_n * s
    }

    /// Minimum and minimizer of the convex piece `F_sigma` over `X`.
    pub fn piece_value(
        &self,
        sigma: &Selection,
        cfg: &SolverConfig,
    ) -> Result<(f64, Vec<f64>), SmcError> {
        self.check_selection(sigma)?;
        let w = self.selection_weights(sigma);
        let sol = solve_convex(&WeightedSubproblem::new(self, &w)?, cfg)?;
        Ok((sol.value, sol.x))
    }

    /// Selection at mixed-radix position `idx` (last term varies fastest).
    pub fn selection_at(&self, mut idx: u128) -> Selection {
        let mut sigma = vec![0; self.num_terms()];
        for s in (0..self.num_terms()).rev() {
            let n = self.terms[s].len() as u128;
            sigma[s] = (idx % n) as usize;
            idx /= n;
        }
        Selection(sigma)
    }

    /// Exact global minimum by scanning all pieces; ties go to the
    /// lexicographically smallest selection.
    pub fn enumerate_global(
        &self,
        cfg: &SolverConfig,
        cap: u128,
    ) -> Result<GlobalOptimum, SmcError> {
        let count = self.num_selections();
        if count > cap {
            return Err(SmcError::CapExceeded { count, cap });
        }
        let results: Vec<Result<(f64, Vec<f64>), SmcError>> = (0..count as u64)
            .into_par_iter()
            .map(|i| self.piece_value(&self.selection_at(i as u128), cfg))
            .collect();
        let mut values = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(v) => values.push(Some(v)),
                Err(SmcError::Solve(SolveError::Infeasible)) => values.push(None),
                Err(e) => return Err(e),
            }
        }
        let best = values
            .iter()
            .flatten()
            .map(|(v, _)| *v)
            .fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            return Err(SmcError::Solve(SolveError::Infeasible));
        }
        let tol = 1e-12 * (1.0 + best.abs());
        let (idx, (value, x)) = values
            .iter()
            .enumerate()
            .find_map(|(i, v)| {
                v.as_ref()
                    .filter(|(val, _)| *val <= best + tol)
                    .map(|v| (i, v.clone()))
            })
            .expect("a minimal piece exists");
        Ok(GlobalOptimum {
            value,
            x,
            sigma: self.selection_at(idx as u128),
        })
    }
}

/// Active indices of a vector of component values.
pub fn active_indices(h: &[f64], rho: f64) -> Vec<usize> {
    let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let thr = rho * (hi - lo) + ACTIVE_SLACK;
    (0..h.len()).filter(|&l| h[l] - lo <= thr).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcs::{testutil, AffineRow};
    use crate::problems;
    use rand::Rng;

    fn abs_three() -> SmcProblem {
        problems::toy_library().remove("abs_three").unwrap()
    }

    #[test]
    fn objective_examples() {
        let two = problems::toy_library().remove("two_clip").unwrap();
        for x in [0.0, 1.0, 0.5] {
            assert!(two.objective(&[x]).abs() < 1e-15);
        }
        let fa = problems::fully_active(
            1,
            &[2],
            1,
            ConvexAtom::constant(0.0),
            FeasibleSet::cube(1, 10.0).unwrap(),
        )
        .unwrap();
        assert_eq!(fa.objective(&[-1.5]), -2.0);
        assert_eq!(fa.component_values(&[-1.5], 0), vec![-1.5, -2.0]);
    }

    #[test]
    fn active_set_examples() {
        let two = problems::toy_library().remove("two_clip").unwrap();
        assert_eq!(two.active_set(&[0.0], 0, 1.0), vec![0, 1]);
        assert_eq!(two.active_set(&[0.0], 0, 0.0), vec![1]);
        let r = abs_three();
        assert_eq!(r.active_set(&[-1.0 / 16.0], 0, 0.0), vec![0, 2]);
        assert_eq!(
            r.degeneracy(&[-1.0 / 16.0], 0.0),
            Degeneracy {
                set: vec![0],
                factor: 2
            }
        );
        assert_eq!(r.degeneracy(&[1.0], 0.0).factor, 1);
        assert!(r.degeneracy(&[1.0], 0.0).set.is_empty());
    }

    #[test]
    fn two_way_ties_multiply() {
        // both terms min{x, -x}: tied at 0
        let abs_parts = vec![
            ConvexAtom::affine(vec![1.0], 0.0),
            ConvexAtom::affine(vec![-1.0], 0.0),
        ];
        let p = SmcProblem::new(
            "ties",
            ConvexAtom::constant(0.0),
            vec![abs_parts.clone(), abs_parts],
            FeasibleSet::cube(1, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(p.degeneracy(&[0.0], 0.0).factor, 4);
    }

    #[test]
    fn piece_values_of_the_abs_three_instance() {
        let r = abs_three();
        let cfg = SolverConfig::default();
        let (v, x) = r.piece_value(&Selection(vec![2]), &cfg).unwrap();
        assert!((v + 33.0 / 16.0).abs() < 1e-12 && (x[0] + 2.0).abs() < 1e-12);
        let (v, x) = r.piece_value(&Selection(vec![1]), &cfg).unwrap();
        assert!(v.abs() < 1e-12 && x[0].abs() < 1e-12);
        let (v, _) = r.piece_value(&Selection(vec![0]), &cfg).unwrap();
        assert!((v + 0.125).abs() < 1e-12);
        assert!(r.piece_value(&Selection(vec![3]), &cfg).is_err());
    }

    #[test]
    fn enumeration_examples() {
        let cfg = SolverConfig::default();
        let g = abs_three()
            .enumerate_global(&cfg, DEFAULT_ENUM_CAP)
            .unwrap();
        assert!((g.value + 33.0 / 16.0).abs() < 1e-12);
        assert!((g.x[0] + 2.0).abs() < 1e-12);
        assert_eq!(g.sigma, Selection(vec![2]));
        let two = problems::toy_library().remove("two_clip").unwrap();
        assert!(
            two.enumerate_global(&cfg, DEFAULT_ENUM_CAP)
                .unwrap()
                .value
                .abs()
                < 1e-12
        );
        assert!(matches!(
            abs_three().enumerate_global(&cfg, 2),
            Err(SmcError::CapExceeded { count: 3, cap: 2 })
        ));
    }

    #[test]
    fn enumeration_matches_grid_on_fully_active() {
        let hbar =
            ConvexAtom::quadratic(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0; 2], 0.0).unwrap();
        let p = problems::fully_active(
            2,
            &[2, 3],
            2,
            hbar,
            FeasibleSet::boxed(vec![-4.0; 2], vec![1.0; 2]).unwrap(),
        )
        .unwrap();
        let g = p
            .enumerate_global(&SolverConfig::default(), DEFAULT_ENUM_CAP)
            .unwrap();
        let mut grid = f64::INFINITY;
        for i in 0..=500 {
            for j in 0..=500 {
                let x = [-4.0 + 0.01 * i as f64, -4.0 + 0.01 * j as f64];
                grid = grid.min(p.objective(&x));
            }
        }
        assert!((g.value - grid).abs() < 1e-4, "{} vs {grid}", g.value);
        assert!(g.value <= grid + 1e-12);
    }

    #[test]
    fn objective_is_min_over_pieces() {
        let p = problems::toy_library().remove("plane_pair").unwrap();
        let mut r = testutil::rng(1);
        let sels: Vec<Selection> = (0..p.num_selections()).map(|i| p.selection_at(i)).collect();
        for _ in 0..1000 {
            let x = testutil::vec_in(&mut r, 2, 10.0);
            let m = sels
                .iter()
                .map(|s| p.piece_objective(s, &x))
                .fold(f64::INFINITY, f64::min);
            assert!((m - p.objective(&x)).abs() < 1e-9 * (1.0 + m.abs()));
        }
    }

    #[test]
    fn enumeration_lower_bounds_samples() {
        let p = problems::toy_library().remove("plane_pair").unwrap();
        let g = p
            .enumerate_global(&SolverConfig::default(), DEFAULT_ENUM_CAP)
            .unwrap();
        let mut r = testutil::rng(3);
        for _ in 0..1000 {
            let x = testutil::vec_in(&mut r, 2, 10.0);
            assert!(g.value <= p.objective(&x) + 1e-9);
        }
    }

    #[test]
    fn active_sets_are_stable_under_small_moves() {
        // components with Lipschitz constant <= 3 on the box; a move of radius
        // r changes every gap by at most 6r, so rho-active sets with
        // rho * (max - min) >= 6r contain all nearby 0-active indices.
        let mut r = testutil::rng(9);
        for _ in 0..200 {
            let comps: Vec<ConvexAtom> = (0..4)
                .map(|_| {
                    ConvexAtom::max_affine(vec![
                        AffineRow {
                            a: vec![r.gen_range(-1.0..1.0)],
                            b: r.gen_range(-1.0..1.0),
                        },
                        AffineRow {
                            a: vec![r.gen_range(-3.0..3.0)],
                            b: r.gen_range(-1.0..1.0),
                        },
                    ])
                    .unwrap()
                })
                .collect();
            let p = SmcProblem::new(
                "stab",
                ConvexAtom::constant(0.0),
                vec![comps],
                FeasibleSet::cube(1, 2.0).unwrap(),
            )
            .unwrap();
            let xh = [r.gen_range(-2.0..2.0)];
            let h = p.component_values(&xh, 0);
            let spread = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - h.iter().cloned().fold(f64::INFINITY, f64::min);
            let rho = (6e-6 / spread.max(1e-300)).min(1.0);
            let big = p.active_set(&xh, 0, rho);
            for _ in 0..20 {
                let x = [xh[0] + r.gen_range(-1e-6..1e-6)];
                for l in p.active_set(&x, 0, 0.0) {
                    assert!(big.contains(&l));
                }
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let p = abs_three();
        let back = SmcProblem::from_json(&p.to_json()).unwrap();
        assert_eq!(p, back);
        assert!(SmcProblem::from_json("{\"dim\": 1}").is_err());
    }

    #[test]
    fn rejects_bad_problems() {
        let set = FeasibleSet::cube(1, 1.0).unwrap();
        assert!(SmcProblem::new("x", ConvexAtom::constant(0.0), vec![], set.clone()).is_err());
        assert!(
            SmcProblem::new("x", ConvexAtom::constant(0.0), vec![vec![]], set.clone()).is_err()
        );
        assert!(SmcProblem::new(
            "x",
            ConvexAtom::affine(vec![1.0, 2.0], 0.0),
            vec![vec![ConvexAtom::constant(0.0)]],
            set
        )
        .is_err());
    }
}
