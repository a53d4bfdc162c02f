//! Instance library: worst-case and toy instances, piecewise-linear
//! regression (PLR), restricted facility location (RFL) and clustering cuts.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::funcs::{AffineRow, ConvexAtom, FuncError, Norm};
use crate::micp::{BoundEntry, SBounds};
use crate::smc::{SmcError, SmcProblem};
use crate::subsolve::{FeasibleSet, NormBall, SolveError};

/// Lower bound used in place of the strict `R > 0` of the facility model.
pub const RFL_MIN_RADIUS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("bad dimensions: {0}")]
    BadDims(String),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error(transparent)]
    Smc(#[from] SmcError),
    #[error(transparent)]
    Func(#[from] FuncError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// `h_l^(s)(x) = (l+1) x_s + l(l+1)/2` (0-based `l`): every selection is
/// the unique 0-active one on a nonempty open set.
pub fn fully_active(
    n_terms: usize,
    sizes: &[usize],
    dim: usize,
    hbar: ConvexAtom,
    set: FeasibleSet,
) -> Result<SmcProblem, ProblemError> {
    if sizes.len() != n_terms || n_terms == 0 {
        return Err(ProblemError::BadDims(format!(
            "{} sizes for {n_terms} terms",
            sizes.len()
        )));
    }
    if dim < n_terms {
        return Err(ProblemError::BadDims(format!(
            "dimension {dim} is below the term count {n_terms}"
        )));
    }
    if set.dim != dim {
        return Err(ProblemError::BadDims("feasible set dimension".into()));
    }
    if sizes.contains(&0) {
        return Err(ProblemError::BadDims("empty term".into()));
    }
    let terms = sizes
        .iter()
        .enumerate()
        .map(|(s, &n)| {
            (0..n)
                .map(|l| {
                    let k = (l + 1) as f64;
                    let mut a = vec![0.0; dim];
                    a[s] = k;
                    ConvexAtom::affine(a, k * (k - 1.0) / 2.0)
                })
                .collect()
        })
        .collect();
    Ok(SmcProblem::new(
        format!("fully_active_{n_terms}"),
        hbar,
        terms,
        set,
    )?)
}

fn quad2(p: [[f64; 2]; 2], a: [f64; 2], b: f64) -> ConvexAtom {
    ConvexAtom::quadratic(vec![p[0].to_vec(), p[1].to_vec()], a.to_vec(), b)
        .expect("convex toy quadratic")
}

fn poly(c2: f64, c1: f64, c0: f64) -> ConvexAtom {
    ConvexAtom::poly2(c2, c1, c0).expect("convex toy polynomial")
}

/// The small named instances: `plane_pair`, `two_clip`, `abs_three`, `parabolas`.
pub fn toy_library() -> BTreeMap<String, SmcProblem> {
    let mut m = BTreeMap::new();
    let mut add = |p: SmcProblem| {
        m.insert(p.name().to_string(), p);
    };

    // min{q1, q2, 15} + min{q3, |x1 + 2|} in the plane; components are
    // doubled so that the 1/N factor gives the plain sum of the two minima
    let t1 = vec![
        quad2([[4.0, 0.0], [0.0, 4.0 / 3.0]], [-12.0, 4.0], 24.0),
        quad2([[4.0, 0.0], [0.0, 2.0 / 3.0]], [12.0, 0.0], 18.0),
        ConvexAtom::constant(30.0),
    ];
    let t2 = vec![
        quad2([[16.0, -8.0], [-8.0, 4.0]], [-8.0, 4.0], 2.0),
        ConvexAtom::norm_affine(Norm::L1, vec![vec![1.0, 0.0]], vec![2.0], 2.0).expect("valid"),
    ];
    add(SmcProblem::new(
        "plane_pair",
        ConvexAtom::constant(0.0),
        vec![t1, t2],
        FeasibleSet::cube(2, 10.0).unwrap(),
    )
    .unwrap());

    // -1/4 + 1/2 (min{(x-1)^2, 1/2} + min{x^2, 1/2}) on the line
    add(SmcProblem::new(
        "two_clip",
        ConvexAtom::constant(-0.25),
        vec![
            vec![poly(1.0, -2.0, 1.0), ConvexAtom::constant(0.5)],
            vec![poly(1.0, 0.0, 0.0), ConvexAtom::constant(0.5)],
        ],
        FeasibleSet::free(1),
    )
    .unwrap());

    // |x| + min{x - 1/8, x^2, 2x - 1/16} on [-2, 2]
    add(SmcProblem::new(
        "abs_three",
        ConvexAtom::norm_affine(Norm::L1, vec![vec![1.0]], vec![0.0], 1.0).unwrap(),
        vec![vec![
            ConvexAtom::affine(vec![1.0], -0.125),
            poly(1.0, 0.0, 0.0),
            ConvexAtom::affine(vec![2.0], -1.0 / 16.0),
        ]],
        FeasibleSet::cube(1, 2.0).unwrap(),
    )
    .unwrap());

    // two terms of shifted parabolas on [-5, 5]
    add(SmcProblem::new(
        "parabolas",
        ConvexAtom::constant(0.0),
        vec![
            vec![
                poly(1.0, -3.0, -2.0),
                poly(1.0, 0.0, 2.0),
                poly(1.0, 1.0, -2.0),
                poly(1.0, 4.0, 2.0),
            ],
            vec![
                poly(0.5, 2.0, -2.0),
                poly(1.0, 4.0, 2.0),
                poly(1.0, 0.0, -1.0),
            ],
        ],
        FeasibleSet::cube(1, 5.0).unwrap(),
    )
    .unwrap());
    m
}

/// Piecewise-linear regression with a difference of two max-affine models,
/// fitted under the mean absolute deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct PlrSpec {
    pub gamma: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub b1: usize,
    pub b2: usize,
    /// `||x||_inf <= l_box`
    pub l_box: f64,
}

impl PlrSpec {
    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.gamma.is_empty() || self.gamma.len() != self.beta.len() {
            return Err(ProblemError::BadDims(
                "need one target per feature row and N >= 1".into(),
            ));
        }
        let p = self.beta[0].len();
        if p == 0 || self.beta.iter().any(|b| b.len() != p) {
            return Err(ProblemError::BadDims(
                "feature rows must share a positive length".into(),
            ));
        }
        if self.b1 == 0 || self.b2 == 0 {
            return Err(ProblemError::Invalid(
                "piece counts must be positive".into(),
            ));
        }
        if !(self.l_box > 0.0) {
            return Err(ProblemError::Invalid("box radius must be positive".into()));
        }
        let finite = self
            .gamma
            .iter()
            .chain(self.beta.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(ProblemError::Invalid("non-finite data".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.gamma.len()
    }

    pub fn p(&self) -> usize {
        self.beta[0].len()
    }

    pub fn dim(&self) -> usize {
        self.p() * (self.b1 + self.b2)
    }

    /// Components per term, `B1 * B2`.
    pub fn n_bar(&self) -> usize {
        self.b1 * self.b2
    }

    /// Piece of the first model used by component `l` (all 0-based).
    pub fn e1(&self, l: usize) -> usize {
        l / self.b2
    }

    pub fn e2(&self, l: usize) -> usize {
        l % self.b2
    }

    /// Coordinates of piece `i` of model `k` (`k` is 1 or 2).
    pub fn block(&self, k: usize, i: usize) -> Range<usize> {
        let p = self.p();
        let start = if k == 1 { i * p } else { (self.b1 + i) * p };
        start..start + p
    }

    fn dot_block(&self, x: &[f64], k: usize, i: usize, s: usize) -> f64 {
        x[self.block(k, i)]
            .iter()
            .zip(&self.beta[s])
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `max_i <beta_s, x^(1)_i>`
    pub fn ell1(&self, x: &[f64], s: usize) -> f64 {
        (0..self.b1)
            .map(|i| self.dot_block(x, 1, i, s))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn ell2(&self, x: &[f64], s: usize) -> f64 {
        (0..self.b2)
            .map(|i| self.dot_block(x, 2, i, s))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mean absolute deviation of the model `ell1 - ell2` from the targets.
    pub fn loss(&self, x: &[f64]) -> f64 {
        let n = self.n() as f64;
        (0..self.n())
            .map(|s| (self.gamma[s] - self.ell1(x, s) + self.ell2(x, s)).abs())
            .sum::<f64>()
            / n
    }
}

/// `|g - l1 + l2| = max{g + l2, l1} + max{-g + l1, l2} - (l1 + l2)`, with
/// `l1 + l2 = max_l <beta, x1_e1(l) + x2_e2(l)>` going into the minima as
/// negated affine components.
pub fn plr_build(spec: &PlrSpec) -> Result<SmcProblem, ProblemError> {
    spec.validate()?;
    let (d, n) = (spec.dim(), spec.n());
    let row = |s: usize, k: usize, i: usize, sign: f64, b: f64| {
        let mut a = vec![0.0; d];
        for (j, bj) in spec.block(k, i).zip(&spec.beta[s]) {
            a[j] = sign * bj;
        }
        AffineRow { a, b }
    };
    let mut parts = Vec::with_capacity(2 * n);
    for s in 0..n {
        let g = spec.gamma[s];
        // max{g + l2, l1}
        let mut rows: Vec<AffineRow> = (0..spec.b2).map(|i| row(s, 2, i, 1.0, g)).collect();
        rows.extend((0..spec.b1).map(|i| row(s, 1, i, 1.0, 0.0)));
        parts.push((1.0 / n as f64, ConvexAtom::max_affine(rows)?));
        // max{-g + l1, l2}
        let mut rows: Vec<AffineRow> = (0..spec.b1).map(|i| row(s, 1, i, 1.0, -g)).collect();
        rows.extend((0..spec.b2).map(|i| row(s, 2, i, 1.0, 0.0)));
        parts.push((1.0 / n as f64, ConvexAtom::max_affine(rows)?));
    }
    let hbar = ConvexAtom::sum(parts)?;
    let terms = (0..n)
        .map(|s| {
            (0..spec.n_bar())
                .map(|l| {
                    let mut a = row(s, 1, spec.e1(l), -1.0, 0.0).a;
                    for (j, bj) in spec.block(2, spec.e2(l)).zip(&spec.beta[s]) {
                        a[j] = -bj;
                    }
                    ConvexAtom::affine(a, 0.0)
                })
                .collect()
        })
        .collect();
    Ok(SmcProblem::new(
        format!("plr_n{n}_p{}_b{}x{}", spec.p(), spec.b1, spec.b2),
        hbar,
        terms,
        FeasibleSet::cube(d, spec.l_box)?,
    )?)
}

/// Raw features followed by all second-order products `r_i r_j`, `i <= j`.
pub fn plr_feature_expand(raw: &[f64]) -> Vec<f64> {
    let mut out = raw.to_vec();
    for i in 0..raw.len() {
        for j in i..raw.len() {
            out.push(raw[i] * raw[j]);
        }
    }
    out
}

/// Product of `norm`-balls of radius `r` around every block of `xhat`,
/// intersected with the box.
pub fn plr_neighbourhood(
    spec: &PlrSpec,
    xhat: &[f64],
    r: f64,
    norm: Norm,
) -> Result<FeasibleSet, ProblemError> {
    spec.validate()?;
    if xhat.len() != spec.dim() {
        return Err(ProblemError::BadDims("anchor dimension".into()));
    }
    let mut set = FeasibleSet::cube(spec.dim(), spec.l_box)?;
    let blocks = (0..spec.b1)
        .map(|i| spec.block(1, i))
        .chain((0..spec.b2).map(|i| spec.block(2, i)));
    for b in blocks {
        if norm == Norm::Linf {
            let lo: Vec<f64> = (0..spec.dim())
                .map(|j| {
                    if b.contains(&j) {
                        xhat[j] - r
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let hi: Vec<f64> = (0..spec.dim())
                .map(|j| {
                    if b.contains(&j) {
                        xhat[j] + r
                    } else {
                        f64::INFINITY
                    }
                })
                .collect();
            set = set.intersect_box(&lo, &hi);
        } else {
            set = set.with_ball(NormBall {
                norm,
                indices: b.clone().collect(),
                center: xhat[b].to_vec(),
                radius: r,
            });
        }
    }
    Ok(set)
}

/// Bounds on the neighbourhood of [`plr_neighbourhood`]: the current gap plus
/// `2 R ||beta||_*` for every block in which the two components differ.
pub fn plr_local_sbounds(
    spec: &PlrSpec,
    xhat: &[f64],
    r: f64,
    norm: Norm,
) -> Result<SBounds, ProblemError> {
    let p = plr_build(spec)?;
    if !(r > 0.0) {
        return Err(ProblemError::Invalid("radius must be positive".into()));
    }
    let dual = norm.dual();
    Ok(SBounds::from_fn(&p.sizes(), |s, lp, l| {
        let h = p.component_values(xhat, s);
        let diff = (spec.e1(lp) != spec.e1(l)) as u8 + (spec.e2(lp) != spec.e2(l)) as u8;
        BoundEntry::Finite(h[lp] - h[l] + 2.0 * diff as f64 * r * dual.of(&spec.beta[s]))
    }))
}

/// Random PLR instance: features uniform in `[-1, 1]^p`, targets from a
/// random difference of max-affine models plus uniform noise.
pub fn plr_synthetic(n: usize, p: usize, b1: usize, b2: usize, l_box: f64, seed: u64) -> PlrSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth1: Vec<Vec<f64>> = (0..b1)
        .map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let truth2: Vec<Vec<f64>> = (0..b2)
        .map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mx = |w: &[Vec<f64>], b: &[f64]| {
        w.iter()
            .map(|r| r.iter().zip(b).map(|(u, v)| u * v).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut beta = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    for _ in 0..n {
        let b: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        gamma.push(mx(&truth1, &b) - mx(&truth2, &b) + rng.gen_range(-0.1..0.1));
        beta.push(b);
    }
    PlrSpec {
        gamma,
        beta,
        b1,
        b2,
        l_box,
    }
}

/// Reads a CSV with a header, a `target` column and numeric features.
pub fn load_plr_csv(
    path: &Path,
    b1: usize,
    b2: usize,
    l_box: f64,
    expand: bool,
) -> Result<PlrSpec, ProblemError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let target = header
        .iter()
        .position(|h| h.trim() == "target")
        .ok_or_else(|| ProblemError::Invalid("missing `target` column".into()))?;
    let mut gamma = vec![];
    let mut beta = vec![];
    for rec in rdr.records() {
        let rec = rec?;
        let mut feats = vec![];
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| ProblemError::Invalid(format!("non-numeric value `{field}`")))?;
            if j == target {
                gamma.push(v);
            } else {
                feats.push(v);
            }
        }
        beta.push(if expand {
            plr_feature_expand(&feats)
        } else {
            feats
        });
    }
    let spec = PlrSpec {
        gamma,
        beta,
        b1,
        b2,
        l_box,
    };
    spec.validate()?;
    Ok(spec)
}

/// Facility location with `B` stores around a hub and a penalty on the
/// hub radius `R` beyond `R_ref`.
#[derive(Clone, Debug, PartialEq)]
pub struct RflSpec {
    pub population: Vec<f64>,
    pub coords: Vec<[f64; 2]>,
    pub b: usize,
    pub r_ref: f64,
    pub lambda: f64,
}

impl RflSpec {
    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.population.is_empty() || self.population.len() != self.coords.len() {
            return Err(ProblemError::BadDims(
                "need one population per city and N >= 1".into(),
            ));
        }
        if self
            .population
            .iter()
            .any(|&p| !(p >= 1.0) || !p.is_finite())
        {
            return Err(ProblemError::Invalid("populations must be >= 1".into()));
        }
        if self.coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ProblemError::Invalid("non-finite coordinates".into()));
        }
        if self.b == 0 {
            return Err(ProblemError::Invalid("need at least one store".into()));
        }
        if !(self.lambda >= 0.0) || !self.r_ref.is_finite() {
            return Err(ProblemError::Invalid("penalty parameters".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.population.len()
    }

    /// `(R, x0, x1, ..., xB)`
    pub fn dim(&self) -> usize {
        1 + 2 * (self.b + 1)
    }

    /// Coordinates of `x_l`, `l = 0` being the hub.
    pub fn block(&self, l: usize) -> Range<usize> {
        1 + 2 * l..3 + 2 * l
    }

    /// Blocks of the stores `x_1..x_B`.
    pub fn store_blocks(&self) -> Vec<Range<usize>> {
        (1..=self.b).map(|l| self.block(l)).collect()
    }

    pub fn total_population(&self) -> f64 {
        self.population.iter().sum()
    }

    /// Component scale `N P_s / P̄`.
    pub fn scale(&self, s: usize) -> f64 {
        self.n() as f64 * self.population[s] / self.total_population()
    }

    /// Penalty plus the population-weighted mean distance to the nearest store.
    pub fn cost(&self, x: &[f64]) -> f64 {
        let pen = self.lambda * (x[0] - self.r_ref).max(0.0);
        let mut acc = 0.0;
        for (s, c) in self.coords.iter().enumerate() {
            let best = (1..=self.b)
                .map(|l| {
                    let xl = &x[self.block(l)];
                    (c[0] - xl[0]).abs() + (c[1] - xl[1]).abs()
                })
                .fold(f64::INFINITY, f64::min);
            acc += self.population[s] * best;
        }
        pen + acc / self.total_population()
    }
}

pub fn rfl_build(spec: &RflSpec) -> Result<SmcProblem, ProblemError> {
    spec.validate()?;
    let d = spec.dim();
    let hbar = if spec.lambda == 0.0 {
        ConvexAtom::constant(0.0)
    } else {
        let mut a = vec![0.0; d];
        a[0] = spec.lambda;
        ConvexAtom::max_affine(vec![
            AffineRow {
                a,
                b: -spec.lambda * spec.r_ref,
            },
            AffineRow {
                a: vec![0.0; d],
                b: 0.0,
            },
        ])?
    };
    let select = |l: usize| -> Vec<Vec<f64>> {
        spec.block(l)
            .map(|j| {
                let mut r = vec![0.0; d];
                r[j] = 1.0;
                r
            })
            .collect()
    };
    let mut terms = Vec::with_capacity(spec.n());
    for s in 0..spec.n() {
        let c = spec.coords[s];
        let mut t = Vec::with_capacity(spec.b);
        for l in 1..=spec.b {
            t.push(ConvexAtom::norm_affine(
                Norm::L1,
                select(l),
                vec![-c[0], -c[1]],
                spec.scale(s),
            )?);
        }
        terms.push(t);
    }
    let mut lo = vec![f64::NEG_INFINITY; d];
    lo[0] = RFL_MIN_RADIUS;
    let mut set = FeasibleSet::boxed(lo, vec![f64::INFINITY; d])?;
    for l in 1..=spec.b {
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|k| {
                let mut r = vec![0.0; d];
                r[spec.block(0).start + k] = 1.0;
                r[spec.block(l).start + k] = -1.0;
                r
            })
            .collect();
        set = set.with_link(
            0,
            ConvexAtom::norm_affine(Norm::L1, rows, vec![0.0; 2], 1.0)?,
        );
    }
    Ok(SmcProblem::new(
        format!("rfl_n{}_b{}", spec.n(), spec.b),
        hbar,
        terms,
        set,
    )?)
}

/// `[R̂ - r, R̂ + r]` times `r`-boxes around the hub and every store.
pub fn rfl_neighbourhood(
    spec: &RflSpec,
    xhat: &[f64],
    r_inf: f64,
) -> Result<FeasibleSet, ProblemError> {
    let p = rfl_build(spec)?;
    if xhat.len() != spec.dim() {
        return Err(ProblemError::BadDims("anchor dimension".into()));
    }
    let lo: Vec<f64> = xhat.iter().map(|v| v - r_inf).collect();
    let hi: Vec<f64> = xhat.iter().map(|v| v + r_inf).collect();
    Ok(p.set().intersect_box(&lo, &hi))
}

fn sign0(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Largest possible distance to store `l+` minus the smallest possible
/// distance to store `l` while both move by at most `r_inf` per coordinate.
pub fn rfl_local_sbounds(
    spec: &RflSpec,
    xhat: &[f64],
    r_inf: f64,
) -> Result<SBounds, ProblemError> {
    spec.validate()?;
    if !(r_inf > 0.0) {
        return Err(ProblemError::Invalid("radius must be positive".into()));
    }
    if xhat.len() != spec.dim() {
        return Err(ProblemError::BadDims("anchor dimension".into()));
    }
    let sizes = vec![spec.b; spec.n()];
    Ok(SBounds::from_fn(&sizes, |s, lp, l| {
        let beta = spec.coords[s];
        let xp = &xhat[spec.block(lp + 1)];
        let xl = &xhat[spec.block(l + 1)];
        let mut far = 0.0;
        let mut near = 0.0;
        for k in 0..2 {
            let dp = beta[k] - xp[k];
            far += (dp + r_inf * sign0(dp)).abs();
            let dl = beta[k] - xl[k];
            near += (dl - r_inf.min(dl.abs()) * sign0(dl)).abs();
        }
        BoundEntry::Finite(spec.scale(s) * (far - near))
    }))
}

/// Cities uniform in `[0, 10]^2` with integer populations in `[1, 100]`.
pub fn rfl_synthetic(n: usize, b: usize, r_ref: f64, lambda: f64, seed: u64) -> RflSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(n);
    let mut population = Vec::with_capacity(n);
    for _ in 0..n {
        coords.push([rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)]);
        population.push(rng.gen_range(1..=100) as f64);
    }
    RflSpec {
        population,
        coords,
        b,
        r_ref,
        lambda,
    }
}

/// Reads a CSV with columns `lat`, `lng`, `population`.
pub fn load_rfl_csv(
    path: &Path,
    b: usize,
    r_ref: f64,
    lambda: f64,
) -> Result<RflSpec, ProblemError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| ProblemError::Invalid(format!("missing `{name}` column")))
    };
    let (ilat, ilng, ipop) = (col("lat")?, col("lng")?, col("population")?);
    let mut coords = vec![];
    let mut population = vec![];
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64, ProblemError> {
            let f = rec.get(i).unwrap_or("");
            f.trim()
                .parse()
                .map_err(|_| ProblemError::Invalid(format!("non-numeric value `{f}`")))
        };
        coords.push([num(ilat)?, num(ilng)?]);
        population.push(num(ipop)?);
    }
    let spec = RflSpec {
        population,
        coords,
        b,
        r_ref,
        lambda,
    };
    spec.validate()?;
    Ok(spec)
}

/// Each centroid block lies in the convex hull of `points`. Adds one
/// coefficient per (centroid, point) after the original coordinates.
pub fn hull_constraints(
    p: &SmcProblem,
    blocks: &[Range<usize>],
    points: &[Vec<f64>],
) -> Result<SmcProblem, ProblemError> {
    if points.is_empty() {
        return Err(ProblemError::Invalid("hull of no points".into()));
    }
    let d = p.dim();
    for b in blocks {
        if b.end > d || points.iter().any(|q| q.len() != b.len()) {
            return Err(ProblemError::BadDims(
                "centroid block and point lengths differ".into(),
            ));
        }
    }
    let k = points.len();
    let new_dim = d + blocks.len() * k;
    let mut set = p.set().padded(new_dim, 0.0, 1.0);
    let mut both = |g: Vec<f64>, rhs: f64| {
        set.halfspaces.push(crate::subsolve::Halfspace {
            g: g.iter().map(|v| -v).collect(),
            rhs: -rhs,
        });
        set.halfspaces.push(crate::subsolve::Halfspace { g, rhs });
    };
    for (c, b) in blocks.iter().enumerate() {
        let lam = d + c * k;
        for (i, j) in b.clone().enumerate() {
            let mut g = vec![0.0; new_dim];
            g[j] = 1.0;
            for (q, pt) in points.iter().enumerate() {
                g[lam + q] = -pt[i];
            }
            both(g, 0.0);
        }
        let mut g = vec![0.0; new_dim];
        g[lam..lam + k].iter_mut().for_each(|v| *v = 1.0);
        both(g, 1.0);
    }
    let terms = p
        .terms()
        .iter()
        .map(|t| t.iter().map(|h| h.padded(new_dim)).collect())
        .collect();
    Ok(SmcProblem::new(
        format!("{}_hull", p.name()),
        p.hbar().padded(new_dim),
        terms,
        set,
    )?)
}

/// Symmetry breaking: `<1, x_l1 - x_l2> >= delta` for every pair `l1 < l2`.
pub fn order_constraints(
    p: &SmcProblem,
    blocks: &[Range<usize>],
    delta: f64,
) -> Result<SmcProblem, ProblemError> {
    let d = p.dim();
    let mut set = p.set().clone();
    for (i, b1) in blocks.iter().enumerate() {
        for b2 in &blocks[i + 1..] {
            if b1.end > d || b2.end > d {
                return Err(ProblemError::BadDims("centroid block out of range".into()));
            }
            let mut g = vec![0.0; d];
            b2.clone().for_each(|j| g[j] += 1.0);
            b1.clone().for_each(|j| g[j] -= 1.0);
            set = set.with_halfspace(g, -delta);
        }
    }
    Ok(p.with_set(set)?)
}
