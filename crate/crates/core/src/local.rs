//! Local search on the bi-convex surrogate
//! `F̄(x, Q) = h̄(x) + (1/N) sum_s <q_s, h_s(x)>`: alternating minimization,
//! its relaxed variants with exploratory weight candidates, gains and the
//! DCA baseline.

use std::borrow::Cow;
use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funcs::{
    argmin, dot, greedy_vertex, project_simplex, softmin, ConvexAtom, SimplexVector,
};
use crate::smc::SmcProblem;
use crate::subsolve::{ConvexSolver, Objective, SolveError, SolverConfig, WeightedSubproblem};

pub const DEFAULT_DELTA: f64 = 1e-8;
pub const DEFAULT_KMAX: usize = 400;
/// Denominator below which the exploration factor is set to one.
pub const EPSILON_GUARD: f64 = 1e-14;
/// Half-width of the tie-breaking perturbation of the softmin candidate.
pub const SM_NOISE: f64 = 5e-7;
pub const TRACE_SCHEMA: &str = "smc-trace v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// One probability vector per term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Weights(pub Vec<SimplexVector>);

impl Weights {
    /// Uniform sample on the product of simplices (normalized exponentials).
    pub fn sample_uniform(sizes: &[usize], rng: &mut impl Rng) -> Self {
        Weights(
            sizes
                .iter()
                .map(|&n| {
                    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                    let s: f64 = e.iter().sum();
                    SimplexVector::from_raw(e.into_iter().map(|v| v / s).collect())
                })
                .collect(),
        )
    }

    /// Greedy vertices at `x`.
    pub fn greedy(p: &SmcProblem, x: &[f64]) -> Self {
        Weights(
            (0..p.num_terms())
                .map(|s| greedy_vertex(&p.component_values(x, s)))
                .collect(),
        )
    }

    pub fn check(&self, p: &SmcProblem) -> Result<(), LocalError> {
        if self.0.len() != p.num_terms() {
            return Err(LocalError::Invalid(format!(
                "{} weight vectors for {} terms",
                self.0.len(),
                p.num_terms()
            )));
        }
        for (s, q) in self.0.iter().enumerate() {
            if q.len() != p.term(s).len() {
                return Err(LocalError::Invalid(format!(
                    "weight vector {s} has the wrong length"
                )));
            }
        }
        Ok(())
    }
}

/// `F̄(x, Q)`
pub fn surrogate(p: &SmcProblem, x: &[f64], q: &Weights) -> f64 {
    let n = p.num_terms() as f64;
    let mut acc = 0.0;
    for (s, qs) in q.0.iter().enumerate() {
        acc += dot(qs.as_slice(), &p.component_values(x, s));
    }
    p.hbar().value(x) + acc / n
}

/// `F̄(x, Q) - min_Q' F̄(x, Q')`
pub fn gain(p: &SmcProblem, x: &[f64], q: &Weights) -> f64 {
    let n = p.num_terms() as f64;
    let mut acc = 0.0;
    for (s, qs) in q.0.iter().enumerate() {
        let h = p.component_values(x, s);
        let m = h.iter().copied().fold(f64::INFINITY, f64::min);
        acc += h
            .iter()
            .zip(qs.as_slice())
            .map(|(hl, ql)| ql * (hl - m))
            .sum::<f64>();
    }
    (acc / n).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Certificate {
    Critical,
    Unknown(f64),
}

/// Zero gain is sufficient (not necessary) for criticality.
pub fn criticality_certificate(p: &SmcProblem, x: &[f64], q: &Weights, tol: f64) -> Certificate {
    let g = gain(p, x, q);
    if g <= tol {
        Certificate::Critical
    } else {
        Certificate::Unknown(g)
    }
}

/// `proj(q + kappa u)` with `u = +1` at `index` and `-1` elsewhere.
pub fn candidate_bb(q: &SimplexVector, index: usize, kappa: f64) -> SimplexVector {
    let v: Vec<f64> = q
        .as_slice()
        .iter()
        .enumerate()
        .map(|(l, ql)| ql + if l == index { kappa } else { -kappa })
        .collect();
    project_simplex(&v)
}

/// Normalized softmin with an explicit perturbation `u`.
pub fn candidate_sm_with(h: &[f64], kappa: f64, u: &[f64]) -> SimplexVector {
    let scale = h.iter().sum::<f64>().abs().max(1e-4);
    let v: Vec<f64> = h
        .iter()
        .zip(u)
        .map(|(hl, ul)| kappa * (hl + ul) / scale)
        .collect();
    softmin(&v)
}

/// Normalized softmin, perturbation drawn from `rng`.
pub fn candidate_sm(h: &[f64], kappa: f64, rng: &mut impl Rng) -> SimplexVector {
    let u: Vec<f64> = (0..h.len())
        .map(|_| rng.gen_range(-SM_NOISE..=SM_NOISE))
        .collect();
    candidate_sm_with(h, kappa, &u)
}

/// `proj(kappa (max h - h) / (max h - min h))`, uniform for constant `h`.
pub fn candidate_mm(h: &[f64], kappa: f64) -> SimplexVector {
    let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
    if hi == lo {
        return SimplexVector::uniform(h.len());
    }
    let v: Vec<f64> = h.iter().map(|hl| kappa * (hi - hl) / (hi - lo)).collect();
    project_simplex(&v)
}

/// Largest step towards the candidate keeping a `(1 - c)` share of the gain.
pub fn exploration_epsilon(
    q: &SimplexVector,
    q_star: &SimplexVector,
    cand: &SimplexVector,
    h: &[f64],
    c: f64,
) -> f64 {
    let gap = |a: &SimplexVector| {
        a.as_slice()
            .iter()
            .zip(q_star.as_slice())
            .zip(h)
            .map(|((x, y), hl)| (x - y) * hl)
            .sum::<f64>()
    };
    let den = gap(cand);
    if den <= EPSILON_GUARD {
        return 1.0;
    }
    (c * gap(q) / den).clamp(0.0, 1.0)
}

/// `eps cand + (1 - eps) q*`
pub fn q_update(q_star: &SimplexVector, cand: &SimplexVector, eps: f64) -> SimplexVector {
    let v: Vec<f64> = q_star
        .as_slice()
        .iter()
        .zip(cand.as_slice())
        .map(|(a, b)| eps * b + (1.0 - eps) * a)
        .collect();
    SimplexVector::from_raw(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Kappa {
    Const {
        value: f64,
    },
    /// `base^(k^exp)`
    Power {
        base: f64,
        exp: f64,
    },
    /// `k^exp`
    Poly {
        exp: f64,
    },
}

impl Kappa {
    pub fn at(&self, k: usize) -> f64 {
        let k = k as f64;
        match *self {
            Kappa::Const { value } => value,
            Kappa::Power { base, exp } => base.powf(k.powf(exp)),
            Kappa::Poly { exp } => k.powf(exp),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CSeq {
    Const {
        value: f64,
    },
    /// `2 / (sqrt(k - 1) + 3)`
    Decreasing,
}

impl CSeq {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            CSeq::Const { value } => value,
            CSeq::Decreasing => 2.0 / (((k - 1) as f64).sqrt() + 3.0),
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            CSeq::Const { value } => value,
            CSeq::Decreasing => 2.0 / 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    Zero,
    One,
    Safeguarded,
    /// zero on odd iterations, one on even ones
    Alternating,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    None,
    Bb,
    Sm,
    Mm,
    /// plain `softmin(kappa h)`
    Softmin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kappa: Kappa,
    pub c: CSeq,
    pub epsilon: EpsilonRule,
    pub candidate: Candidate,
}

impl Schedule {
    pub fn am() -> Self {
        Schedule {
            kappa: Kappa::Const { value: 0.0 },
            c: CSeq::Const { value: 0.0 },
            epsilon: EpsilonRule::Zero,
            candidate: Candidate::None,
        }
    }

    pub fn bb() -> Self {
        Schedule {
            kappa: Kappa::Const { value: 0.1 },
            c: CSeq::Const { value: 0.0 },
            epsilon: EpsilonRule::One,
            candidate: Candidate::Bb,
        }
    }

    pub fn sm() -> Self {
        Schedule {
            kappa: Kappa::Power {
                base: 1.5,
                exp: 0.75,
            },
            c: CSeq::Decreasing,
            epsilon: EpsilonRule::Safeguarded,
            candidate: Candidate::Sm,
        }
    }

    pub fn mm() -> Self {
        Schedule {
            kappa: Kappa::Poly { exp: 2.0 / 3.0 },
            c: CSeq::Decreasing,
            epsilon: EpsilonRule::Safeguarded,
            candidate: Candidate::Mm,
        }
    }

    pub fn alter() -> Self {
        Schedule {
            kappa: Kappa::Const { value: 0.25 },
            c: CSeq::Const { value: 0.0 },
            epsilon: EpsilonRule::Alternating,
            candidate: Candidate::Softmin,
        }
    }

    /// Named presets: `am`, `bb`, `sm`, `mm`, `alter`.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "am" => Some(Self::am()),
            "bb" => Some(Self::bb()),
            "sm" => Some(Self::sm()),
            "mm" => Some(Self::mm()),
            "alter" => Some(Self::alter()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), LocalError> {
        if self.epsilon == EpsilonRule::Safeguarded && !(self.c.sup() < 1.0 && self.c.sup() >= 0.0)
        {
            return Err(LocalError::Invalid(
                "the safeguarded rule needs sup C < 1".into(),
            ));
        }
        if matches!(
            self.epsilon,
            EpsilonRule::One | EpsilonRule::Safeguarded | EpsilonRule::Alternating
        ) && self.candidate == Candidate::None
        {
            return Err(LocalError::Invalid("exploration needs a candidate".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub fbar: f64,
    pub f: f64,
    pub gain: f64,
    pub epsilon_min: f64,
    pub time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    SolverError(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterRecord>,
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub termination: Termination,
}

impl RunTrace {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# {TRACE_SCHEMA}\nk,Fbar,F,gain,epsilon_min,time_ms\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:.3}",
                r.k, r.fbar, r.f, r.gain, r.epsilon_min, r.time_ms
            );
        }
        out
    }

    /// `(k, Fbar, F, gain, epsilon_min)` rows of a CSV written by [`RunTrace::to_csv`].
    pub fn parse_csv(text: &str) -> Result<Vec<(usize, f64, f64, f64, f64)>, csv::Error> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        rdr.deserialize()
            .map(|r| r.map(|(k, a, b, c, d, _t): (usize, f64, f64, f64, f64, f64)| (k, a, b, c, d)))
            .collect()
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

fn bb_index(h: &[f64]) -> usize {
    argmin(h)
}

/// The relaxed alternating minimization loop: x-update by the convex
/// solver, then per term a mix of the greedy vertex and a candidate.
/// Stops once the previous surrogate value exceeds `F(x_k)` by less than
/// `delta`, and returns the best iterate.
pub fn ram_run(
    p: &SmcProblem,
    q_init: &Weights,
    schedule: &Schedule,
    delta: f64,
    kmax: usize,
    cfg: &SolverConfig,
    rng: &mut impl Rng,
) -> Result<RunTrace, LocalError> {
    q_init.check(p)?;
    schedule.validate()?;
    let t0 = Instant::now();
    let mut solver = ConvexSolver::new(cfg.clone());
    let mut q = q_init.clone();
    let mut upsilon = f64::INFINITY;
    let mut records: Vec<IterRecord> = Vec::new();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut termination = Termination::MaxIterations;
    for k in 1..=kmax {
        let sp = WeightedSubproblem::new(p, &q.0)?;
        let x = match solver.solve_weighted(&sp) {
            Ok(sol) => sol.x,
            Err(e) if records.is_empty() => return Err(e.into()),
            Err(e) => {
                termination = Termination::SolverError(e.to_string());
                break;
            }
        };
        let f = p.objective(&x);
        let fbar = surrogate(p, &x, &q);
        let g = gain(p, &x, &q);
        let kappa = schedule.kappa.at(k);
        let ck = schedule.c.at(k);
        let mut next = Vec::with_capacity(p.num_terms());
        let mut eps_min = f64::INFINITY;
        for (s, qs) in q.0.iter().enumerate() {
            let h = p.component_values(&x, s);
            let star = greedy_vertex(&h);
            let explore = match schedule.epsilon {
                EpsilonRule::Zero => false,
                EpsilonRule::Alternating => k % 2 == 0,
                EpsilonRule::One | EpsilonRule::Safeguarded => true,
            };
            if !explore {
                eps_min = eps_min.min(0.0);
                next.push(star);
                continue;
            }
            let cand = match schedule.candidate {
                Candidate::None => star.clone(),
                Candidate::Bb => candidate_bb(qs, bb_index(&h), kappa),
                Candidate::Sm => candidate_sm(&h, kappa, rng),
                Candidate::Mm => candidate_mm(&h, kappa),
                Candidate::Softmin => softmin(&h.iter().map(|v| kappa * v).collect::<Vec<_>>()),
            };
            let eps = match schedule.epsilon {
                EpsilonRule::Safeguarded => exploration_epsilon(qs, &star, &cand, &h, ck),
                _ => 1.0,
            };
            eps_min = eps_min.min(eps);
            next.push(q_update(&star, &cand, eps));
        }
        if best.as_ref().map_or(true, |b| f < b.1) {
            best = Some((x.clone(), f));
        }
        records.push(IterRecord {
            k,
            x,
            fbar,
            f,
            gain: g,
            epsilon_min: if eps_min.is_finite() { eps_min } else { 0.0 },
            time_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        if upsilon - f < delta {
            termination = Termination::Converged;
            break;
        }
        q = Weights(next);
        upsilon = fbar;
    }
    let (best_x, best_value) = best.expect("at least one iterate");
    Ok(RunTrace {
        records,
        best_x,
        best_value,
        termination,
    })
}

/// `h_l - <g, .>`, kept affine when `h_l` is.
fn remainder(h: &ConvexAtom, g: &[f64]) -> ConvexAtom {
    match h {
        ConvexAtom::Affine { a, b } => {
            ConvexAtom::affine(a.iter().zip(g).map(|(ai, gi)| ai - gi).collect(), *b)
        }
        other => ConvexAtom::Sum {
            terms: vec![
                crate::funcs::WeightedAtom {
                    weight: 1.0,
                    atom: other.clone(),
                },
                crate::funcs::WeightedAtom {
                    weight: 1.0,
                    atom: ConvexAtom::affine(g.iter().map(|v| -v).collect(), 0.0),
                },
            ],
        },
    }
}

/// Classic DCA on `F = f1 - f2` with `f1 = h̄ + (1/N) sum_s sum_l h_l` and
/// `f2 = (1/N) sum_s max_l sum_{l' != l} h_l'`; the maximizer is the
/// smallest index attaining `min_l h_l`.
pub fn dca_run(
    p: &SmcProblem,
    x_init: &[f64],
    delta: f64,
    kmax: usize,
    cfg: &SolverConfig,
) -> Result<RunTrace, LocalError> {
    if x_init.len() != p.dim() {
        return Err(LocalError::Invalid("start point dimension".into()));
    }
    let t0 = Instant::now();
    let d = p.dim();
    let inv_n = 1.0 / p.num_terms() as f64;
    let mut solver = ConvexSolver::new(cfg.clone());
    let mut x = x_init.to_vec();
    let mut prev_f = p.objective(&x);
    let mut records = Vec::new();
    let mut best = (x.clone(), prev_f);
    let mut termination = Termination::MaxIterations;
    for k in 1..=kmax {
        let mut obj = Objective::default();
        obj.push(1.0, p.hbar());
        for s in 0..p.num_terms() {
            let term = p.term(s);
            let lt = argmin(&p.component_values(&x, s));
            for (l, h) in term.iter().enumerate() {
                if l == lt {
                    obj.terms.push((inv_n, Cow::Borrowed(h)));
                } else {
                    let mut g = vec![0.0; d];
                    h.add_subgradient(&x, 1.0, &mut g);
                    obj.terms.push((inv_n, Cow::Owned(remainder(h, &g))));
                }
            }
        }
        let next = match solver.minimize(&obj, p.set()) {
            Ok(sol) => sol.x,
            Err(e) if records.is_empty() => return Err(e.into()),
            Err(e) => {
                termination = Termination::SolverError(e.to_string());
                break;
            }
        };
        let f = p.objective(&next);
        let fbar = obj.value(&next);
        if f < best.1 {
            best = (next.clone(), f);
        }
        records.push(IterRecord {
            k,
            x: next.clone(),
            fbar,
            f,
            gain: f64::NAN,
            epsilon_min: 0.0,
            time_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        x = next;
        if prev_f - f < delta {
            termination = Termination::Converged;
            break;
        }
        prev_f = f;
    }
    Ok(RunTrace {
        records,
        best_x: best.0,
        best_value: best.1,
        termination,
    })
}
