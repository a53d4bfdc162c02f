//! Structured convex functions and simplex utilities.
//!
//! Every atom is finite on all of `R^d`; domain restrictions belong to the
//! feasible set of the problem, never to the atom itself.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest eigenvalue accepted for a quadratic form to count as PSD.
pub const PSD_FLOOR: f64 = -1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuncError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid atom: {0}")]
    Invalid(String),
    #[error("invalid simplex vector: {0}")]
    NotOnSimplex(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    pub fn of(self, y: &[f64]) -> f64 {
        match self {
            Norm::L1 => y.iter().map(|v| v.abs()).sum(),
            Norm::L2 => y.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Norm::Linf => y.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// The dual norm (`L1 <-> Linf`, `L2` self-dual).
    pub fn dual(self) -> Norm {
        match self {
            Norm::L1 => Norm::Linf,
            Norm::L2 => Norm::L2,
            Norm::Linf => Norm::L1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineRow {
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedAtom {
    pub weight: f64,
    pub atom: ConvexAtom,
}

/// A closed convex function from a small structured algebra.
///
/// JSON layout: `{"kind": "<variant>", ...fields}` with matrices stored as
/// arrays of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexAtom {
    /// `<a, x> + b`
    Affine {
        a: Vec<f64>,
        b: f64,
    },
    /// `1/2 <P x, x> + <a, x> + b` with `P` symmetric PSD.
    Quadratic {
        p: Vec<Vec<f64>>,
        a: Vec<f64>,
        b: f64,
    },
    /// `w * ||A x + c||_norm`
    NormAffine {
        norm: Norm,
        a: Vec<Vec<f64>>,
        c: Vec<f64>,
        w: f64,
    },
    /// `max_i <a_i, x> + b_i`
    MaxAffine {
        rows: Vec<AffineRow>,
    },
    Const {
        value: f64,
    },
    /// Nonnegative combination of atoms.
    Sum {
        terms: Vec<WeightedAtom>,
    },
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn merge_dim(acc: Option<usize>, d: Option<usize>) -> Result<Option<usize>, FuncError> {
    match (acc, d) {
        (Some(a), Some(b)) if a != b => Err(FuncError::DimensionMismatch {
            expected: a,
            got: b,
        }),
        (Some(a), _) => Ok(Some(a)),
        (None, d) => Ok(d),
    }
}

/// Smallest eigenvalue of a symmetric matrix given as rows.
pub fn min_eigenvalue(p: &[Vec<f64>]) -> f64 {
    eigenvalues(p).into_iter().fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric matrix given as rows.
pub fn max_eigenvalue(p: &[Vec<f64>]) -> f64 {
    eigenvalues(p).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

fn eigenvalues(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    if n == 0 {
        return vec![0.0];
    }
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (p[i][j] + p[j][i]));
    SymmetricEigen::new(m).eigenvalues.iter().copied().collect()
}

impl ConvexAtom {
    pub fn affine(a: Vec<f64>, b: f64) -> Self {
        ConvexAtom::Affine { a, b }
    }

    pub fn constant(value: f64) -> Self {
        ConvexAtom::Const { value }
    }

    pub fn quadratic(p: Vec<Vec<f64>>, a: Vec<f64>, b: f64) -> Result<Self, FuncError> {
        let atom = ConvexAtom::Quadratic { p, a, b };
        atom.validate()?;
        Ok(atom)
    }

    /// One-dimensional `c2 x^2 + c1 x + c0` with `c2 >= 0`.
    pub fn poly2(c2: f64, c1: f64, c0: f64) -> Result<Self, FuncError> {
        Self::quadratic(vec![vec![2.0 * c2]], vec![c1], c0)
    }

    pub fn norm_affine(
        norm: Norm,
        a: Vec<Vec<f64>>,
        c: Vec<f64>,
        w: f64,
    ) -> Result<Self, FuncError> {
        let atom = ConvexAtom::NormAffine { norm, a, c, w };
        atom.validate()?;
        Ok(atom)
    }

    pub fn max_affine(rows: Vec<AffineRow>) -> Result<Self, FuncError> {
        let atom = ConvexAtom::MaxAffine { rows };
        atom.validate()?;
        Ok(atom)
    }

    pub fn sum(terms: Vec<(f64, ConvexAtom)>) -> Result<Self, FuncError> {
        let atom = ConvexAtom::Sum {
            terms: terms
                .into_iter()
                .map(|(weight, atom)| WeightedAtom { weight, atom })
                .collect(),
        };
        atom.validate()?;
        Ok(atom)
    }

    /// Checks the structural invariants and returns the input dimension
    /// (`None` when the atom is constant and accepts any dimension).
    pub fn validate(&self) -> Result<Option<usize>, FuncError> {
        match self {
            ConvexAtom::Affine { a, b } => {
                if !b.is_finite() || a.iter().any(|v| !v.is_finite()) {
                    return Err(FuncError::Invalid("non-finite affine data".into()));
                }
                Ok(Some(a.len()))
            }
            ConvexAtom::Quadratic { p, a, b } => {
                let d = a.len();
                if p.len() != d || p.iter().any(|r| r.len() != d) {
                    return Err(FuncError::Invalid(format!(
                        "quadratic matrix must be {d}x{d}"
                    )));
                }
                if !b.is_finite() || a.iter().chain(p.iter().flatten()).any(|v| !v.is_finite()) {
                    return Err(FuncError::Invalid("non-finite quadratic data".into()));
                }
                let scale = p.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
                for i in 0..d {
                    for j in 0..i {
                        if (p[i][j] - p[j][i]).abs() > 1e-12 * scale {
                            return Err(FuncError::Invalid(
                                "quadratic matrix not symmetric".into(),
                            ));
                        }
                    }
                }
                let lmin = min_eigenvalue(p);
                if lmin < PSD_FLOOR {
                    return Err(FuncError::Invalid(format!(
                        "quadratic matrix not PSD (min eigenvalue {lmin:e})"
                    )));
                }
                Ok(Some(d))
            }
            ConvexAtom::NormAffine { a, c, w, .. } => {
                if a.is_empty() || a.len() != c.len() {
                    return Err(FuncError::Invalid(
                        "norm atom needs m >= 1 rows matching c".into(),
                    ));
                }
                let d = a[0].len();
                if a.iter().any(|r| r.len() != d) {
                    return Err(FuncError::Invalid("ragged norm matrix".into()));
                }
                if !(*w >= 0.0) || !w.is_finite() {
                    return Err(FuncError::Invalid(
                        "norm weight must be finite and >= 0".into(),
                    ));
                }
                if c.iter().chain(a.iter().flatten()).any(|v| !v.is_finite()) {
                    return Err(FuncError::Invalid("non-finite norm data".into()));
                }
                Ok(Some(d))
            }
            ConvexAtom::MaxAffine { rows } => {
                if rows.is_empty() {
                    return Err(FuncError::Invalid(
                        "max-affine needs at least one row".into(),
                    ));
                }
                let d = rows[0].a.len();
                for r in rows {
                    if r.a.len() != d {
                        return Err(FuncError::DimensionMismatch {
                            expected: d,
                            got: r.a.len(),
                        });
                    }
                    if !r.b.is_finite() || r.a.iter().any(|v| !v.is_finite()) {
                        return Err(FuncError::Invalid("non-finite max-affine row".into()));
                    }
                }
                Ok(Some(d))
            }
            ConvexAtom::Const { value } => {
                if !value.is_finite() {
                    return Err(FuncError::Invalid("non-finite constant".into()));
                }
                Ok(None)
            }
            ConvexAtom::Sum { terms } => {
                let mut dim = None;
                for t in terms {
                    if !(t.weight >= 0.0) || !t.weight.is_finite() {
                        return Err(FuncError::Invalid(
                            "sum weights must be finite and >= 0".into(),
                        ));
                    }
                    dim = merge_dim(dim, t.atom.validate()?)?;
                }
                Ok(dim)
            }
        }
    }

    /// Input dimension, `None` for constants. Assumes a validated atom.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ConvexAtom::Affine { a, .. } | ConvexAtom::Quadratic { a, .. } => Some(a.len()),
            ConvexAtom::NormAffine { a, .. } => a.first().map(|r| r.len()),
            ConvexAtom::MaxAffine { rows } => rows.first().map(|r| r.a.len()),
            ConvexAtom::Const { .. } => None,
            ConvexAtom::Sum { terms } => terms.iter().find_map(|t| t.atom.dim()),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), FuncError> {
        match self.dim() {
            Some(d) if d != x.len() => Err(FuncError::DimensionMismatch {
                expected: d,
                got: x.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Exact value at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<f64, FuncError> {
        self.check_dim(x)?;
        Ok(self.value(x))
    }

    /// Unchecked evaluation; the caller guarantees matching dimensions.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ConvexAtom::Affine { a, b } => dot(a, x) + b,
            ConvexAtom::Quadratic { p, a, b } => {
                let quad: f64 = p.iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum();
                0.5 * quad + dot(a, x) + b
            }
            ConvexAtom::NormAffine { norm, a, c, w } => {
                let y: Vec<f64> = a.iter().zip(c).map(|(r, ci)| dot(r, x) + ci).collect();
                w * norm.of(&y)
            }
            ConvexAtom::MaxAffine { rows } => rows
                .iter()
                .map(|r| dot(&r.a, x) + r.b)
                .fold(f64::NEG_INFINITY, f64::max),
            ConvexAtom::Const { value } => *value,
            ConvexAtom::Sum { terms } => terms.iter().map(|t| t.weight * t.atom.value(x)).sum(),
        }
    }

    /// A deterministic subgradient: smallest active row at max-affine kinks,
    /// `sign(0) = +1` for absolute values, first maximal entry for `Linf`.
    pub fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>, FuncError> {
        self.check_dim(x)?;
        let mut g = vec![0.0; x.len()];
        self.add_subgradient(x, 1.0, &mut g);
        Ok(g)
    }

    /// Adds `scale * g(x)` to `out`.
    pub fn add_subgradient(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            ConvexAtom::Affine { a, .. } => {
                for (o, ai) in out.iter_mut().zip(a) {
                    *o += scale * ai;
                }
            }
            ConvexAtom::Quadratic { p, a, .. } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += scale * (dot(&p[i], x) + a[i]);
                }
            }
            ConvexAtom::NormAffine { norm, a, c, w } => {
                let y: Vec<f64> = a.iter().zip(c).map(|(r, ci)| dot(r, x) + ci).collect();
                let s: Vec<f64> = match norm {
                    Norm::L1 => y.iter().map(|v| sign(*v)).collect(),
                    Norm::L2 => {
                        let n = Norm::L2.of(&y);
                        if n > 0.0 {
                            y.iter().map(|v| v / n).collect()
                        } else {
                            vec![0.0; y.len()]
                        }
                    }
                    Norm::Linf => {
                        let mut best = 0;
                        for (i, v) in y.iter().enumerate() {
                            if v.abs() > y[best].abs() {
                                best = i;
                            }
                        }
                        let mut s = vec![0.0; y.len()];
                        s[best] = sign(y[best]);
                        s
                    }
                };
                for (row, si) in a.iter().zip(&s) {
                    if *si != 0.0 {
                        for (o, aij) in out.iter_mut().zip(row) {
                            *o += scale * w * si * aij;
                        }
                    }
                }
            }
            ConvexAtom::MaxAffine { rows } => {
                let mut best = 0;
                let mut best_val = f64::NEG_INFINITY;
                for (i, r) in rows.iter().enumerate() {
                    let v = dot(&r.a, x) + r.b;
                    if v > best_val {
                        best_val = v;
                        best = i;
                    }
                }
                for (o, ai) in out.iter_mut().zip(&rows[best].a) {
                    *o += scale * ai;
                }
            }
            ConvexAtom::Const { .. } => {}
            ConvexAtom::Sum { terms } => {
                for t in terms {
                    t.atom.add_subgradient(x, scale * t.weight, out);
                }
            }
        }
    }

    /// The same function of the leading coordinates, taking `new_dim >= dim`
    /// inputs (the extra coordinates do not enter).
    pub fn padded(&self, new_dim: usize) -> ConvexAtom {
        let pad = |v: &[f64]| {
            let mut w = v.to_vec();
            w.resize(new_dim.max(v.len()), 0.0);
            w
        };
        match self {
            ConvexAtom::Affine { a, b } => ConvexAtom::Affine { a: pad(a), b: *b },
            ConvexAtom::Quadratic { p, a, b } => {
                let mut q: Vec<Vec<f64>> = p.iter().map(|r| pad(r)).collect();
                q.resize(new_dim.max(p.len()), vec![0.0; new_dim.max(p.len())]);
                ConvexAtom::Quadratic {
                    p: q,
                    a: pad(a),
                    b: *b,
                }
            }
            ConvexAtom::NormAffine { norm, a, c, w } => ConvexAtom::NormAffine {
                norm: *norm,
                a: a.iter().map(|r| pad(r)).collect(),
                c: c.clone(),
                w: *w,
            },
            ConvexAtom::MaxAffine { rows } => ConvexAtom::MaxAffine {
                rows: rows
                    .iter()
                    .map(|r| AffineRow {
                        a: pad(&r.a),
                        b: r.b,
                    })
                    .collect(),
            },
            ConvexAtom::Const { value } => ConvexAtom::Const { value: *value },
            ConvexAtom::Sum { terms } => ConvexAtom::Sum {
                terms: terms
                    .iter()
                    .map(|t| WeightedAtom {
                        weight: t.weight,
                        atom: t.atom.padded(new_dim),
                    })
                    .collect(),
            },
        }
    }

    /// True when the atom is representable with linear constraints only.
    pub fn is_polyhedral(&self) -> bool {
        match self {
            ConvexAtom::Affine { .. } | ConvexAtom::MaxAffine { .. } | ConvexAtom::Const { .. } => {
                true
            }
            ConvexAtom::Quadratic { .. } => false,
            ConvexAtom::NormAffine { norm, .. } => *norm != Norm::L2,
            ConvexAtom::Sum { terms } => terms.iter().all(|t| t.atom.is_polyhedral()),
        }
    }

    /// Affine rows when the atom is affine or max-affine (constants count as
    /// a single zero-slope row of dimension `d`).
    pub fn affine_rows(&self, d: usize) -> Option<Vec<AffineRow>> {
        match self {
            ConvexAtom::Affine { a, b } => Some(vec![AffineRow {
                a: a.clone(),
                b: *b,
            }]),
            ConvexAtom::MaxAffine { rows } => Some(rows.clone()),
            ConvexAtom::Const { value } => Some(vec![AffineRow {
                a: vec![0.0; d],
                b: *value,
            }]),
            _ => None,
        }
    }
}

/// A probability vector: nonnegative entries summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(q: Vec<f64>) -> Result<Self, FuncError> {
        if q.is_empty() {
            return Err(FuncError::NotOnSimplex("empty vector".into()));
        }
        if q.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(FuncError::NotOnSimplex(format!(
                "negative or non-finite entry in {q:?}"
            )));
        }
        let s: f64 = q.iter().sum();
        if (s - 1.0).abs() > Self::SUM_TOL * (q.len() as f64).max(1.0) {
            return Err(FuncError::NotOnSimplex(format!("entries sum to {s}")));
        }
        Ok(SimplexVector(q))
    }

    pub fn uniform(n: usize) -> Self {
        SimplexVector(vec![1.0 / n as f64; n])
    }

    pub fn vertex(n: usize, index: usize) -> Self {
        let mut q = vec![0.0; n];
        q[index] = 1.0;
        SimplexVector(q)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the single unit entry when `self` is a vertex.
    pub fn vertex_index(&self) -> Option<usize> {
        let mut idx = None;
        for (i, v) in self.0.iter().enumerate() {
            if *v == 1.0 {
                idx = Some(i);
            } else if *v != 0.0 {
                return None;
            }
        }
        idx
    }

    /// Wraps a vector produced by a simplex-preserving computation.
    pub(crate) fn from_raw(q: Vec<f64>) -> Self {
        SimplexVector(q)
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Euclidean projection onto the standard simplex (sort-and-threshold).
pub fn project_simplex(v: &[f64]) -> SimplexVector {
    assert!(!v.is_empty(), "projection onto an empty simplex");
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut p: Vec<f64> = v.iter().map(|vi| (vi - theta).max(0.0)).collect();
    // absorb rounding so the invariant holds tightly
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        p.iter_mut().for_each(|x| *x /= s);
    }
    SimplexVector(p)
}

/// `v_l = exp(-u_l) / sum exp(-u_l')`, shifted by `min(u)` for stability.
pub fn softmin(u: &[f64]) -> SimplexVector {
    assert!(!u.is_empty(), "softmin of an empty vector");
    let m = u.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = u.iter().map(|ui| (-(ui - m)).exp()).collect();
    let s: f64 = e.iter().sum();
    SimplexVector(e.into_iter().map(|x| x / s).collect())
}

/// Vertex at the smallest index attaining `min(h)`.
pub fn greedy_vertex(h: &[f64]) -> SimplexVector {
    SimplexVector::vertex(h.len(), argmin(h))
}

/// Smallest index of the minimum entry.
pub fn argmin(h: &[f64]) -> usize {
    assert!(!h.is_empty(), "argmin of an empty vector");
    let mut best = 0;
    for (i, v) in h.iter().enumerate() {
        if *v < h[best] {
            best = i;
        }
    }
    best
}
