//! Convex feasible sets built from boxes, norm balls, halfspaces and
//! epigraph links.

use serde::{Deserialize, Serialize};

use super::model::StandardModel;
use super::{ConvexSolver, SolveError, SolverConfig};
use crate::funcs::{dot, ConvexAtom, Norm};

/// `||x[indices] - center||_norm <= radius`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBall {
    pub norm: Norm,
    pub indices: Vec<usize>,
    pub center: Vec<f64>,
    pub radius: f64,
}

/// `<g, x> <= rhs`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub g: Vec<f64>,
    pub rhs: f64,
}

/// `x[aux] >= atom(x)`, e.g. a radius variable bounding a distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpigraphLink {
    pub aux: usize,
    pub atom: ConvexAtom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub dim: usize,
    #[serde(with = "bound_serde")]
    pub lower: Vec<f64>,
    #[serde(with = "bound_serde")]
    pub upper: Vec<f64>,
    #[serde(default)]
    pub balls: Vec<NormBall>,
    #[serde(default)]
    pub halfspaces: Vec<Halfspace>,
    #[serde(default)]
    pub links: Vec<EpigraphLink>,
}

impl FeasibleSet {
    /// All of `R^d`.
    pub fn free(dim: usize) -> Self {
        FeasibleSet {
            dim,
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            balls: vec![],
            halfspaces: vec![],
            links: vec![],
        }
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, SolveError> {
        if lower.len() != upper.len() {
            return Err(SolveError::Invalid("box bounds differ in length".into()));
        }
        let mut s = Self::free(lower.len());
        s.lower = lower;
        s.upper = upper;
        s.validate()?;
        Ok(s)
    }

    /// `[-r, r]^d`
    pub fn cube(dim: usize, r: f64) -> Result<Self, SolveError> {
        Self::boxed(vec![-r; dim], vec![r; dim])
    }

    pub fn with_ball(mut self, ball: NormBall) -> Self {
        self.balls.push(ball);
        self
    }

    pub fn with_halfspace(mut self, g: Vec<f64>, rhs: f64) -> Self {
        self.halfspaces.push(Halfspace { g, rhs });
        self
    }

    pub fn with_link(mut self, aux: usize, atom: ConvexAtom) -> Self {
        self.links.push(EpigraphLink { aux, atom });
        self
    }

    /// Intersection with the box `[lo, hi]`.
    pub fn intersect_box(&self, lo: &[f64], hi: &[f64]) -> Self {
        let mut s = self.clone();
        for j in 0..self.dim {
            s.lower[j] = s.lower[j].max(lo[j]);
            s.upper[j] = s.upper[j].min(hi[j]);
        }
        s
    }

    /// Intersection with another set of the same dimension.
    pub fn intersect(&self, other: &FeasibleSet) -> Result<Self, SolveError> {
        if other.dim != self.dim {
            return Err(SolveError::Invalid(format!(
                "intersecting sets of dimension {} and {}",
                self.dim, other.dim
            )));
        }
        let mut s = self.intersect_box(&other.lower, &other.upper);
        s.balls.extend(other.balls.iter().cloned());
        s.halfspaces.extend(other.halfspaces.iter().cloned());
        s.links.extend(other.links.iter().cloned());
        Ok(s)
    }

    /// The same set embedded in `R^new_dim`, with the appended coordinates
    /// bounded by `[lo, hi]`.
    pub fn padded(&self, new_dim: usize, lo: f64, hi: f64) -> Self {
        let mut s = self.clone();
        s.dim = new_dim;
        s.lower.resize(new_dim, lo);
        s.upper.resize(new_dim, hi);
        for h in &mut s.halfspaces {
            h.g.resize(new_dim, 0.0);
        }
        for l in &mut s.links {
            l.atom = l.atom.padded(new_dim);
        }
        s
    }

    /// Structural checks (dimensions, ordering of simple bounds).
    pub fn validate(&self) -> Result<(), SolveError> {
        let d = self.dim;
        if self.lower.len() != d || self.upper.len() != d {
            return Err(SolveError::Invalid(
                "box bounds must have length dim".into(),
            ));
        }
        for j in 0..d {
            if self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(SolveError::Invalid("NaN bound".into()));
            }
            if self.lower[j] > self.upper[j] {
                return Err(SolveError::Infeasible);
            }
        }
        for b in &self.balls {
            if b.indices.len() != b.center.len() || b.indices.iter().any(|&i| i >= d) {
                return Err(SolveError::Invalid("ball indices out of range".into()));
            }
            if !(b.radius >= 0.0) {
                return Err(SolveError::Invalid("ball radius must be >= 0".into()));
            }
        }
        for h in &self.halfspaces {
            if h.g.len() != d {
                return Err(SolveError::Invalid(
                    "halfspace normal has wrong length".into(),
                ));
            }
        }
        for l in &self.links {
            if l.aux >= d {
                return Err(SolveError::Invalid(
                    "link auxiliary index out of range".into(),
                ));
            }
            if let Some(ad) = l.atom.validate()? {
                if ad != d {
                    return Err(SolveError::Invalid("link atom has wrong dimension".into()));
                }
            }
        }
        Ok(())
    }

    /// Confirms nonemptiness with a phase-1 solve.
    pub fn check_nonempty(&self, cfg: &SolverConfig) -> Result<(), SolveError> {
        self.validate()?;
        if self.is_box_only() {
            return Ok(());
        }
        let mut model = StandardModel::for_set(self);
        model.cost.iter_mut().for_each(|c| *c = 0.0);
        ConvexSolver::new(cfg.clone())
            .solve_model(&model)
            .map(|_| ())
    }

    pub fn is_box_only(&self) -> bool {
        self.balls.is_empty() && self.halfspaces.is_empty() && self.links.is_empty()
    }

    pub fn is_bounded_box(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim {
            return false;
        }
        for j in 0..self.dim {
            if x[j] < self.lower[j] - tol || x[j] > self.upper[j] + tol {
                return false;
            }
        }
        for b in &self.balls {
            let y: Vec<f64> = b
                .indices
                .iter()
                .zip(&b.center)
                .map(|(&i, c)| x[i] - c)
                .collect();
            if b.norm.of(&y) > b.radius + tol {
                return false;
            }
        }
        for h in &self.halfspaces {
            if dot(&h.g, x) > h.rhs + tol {
                return false;
            }
        }
        for l in &self.links {
            if l.atom.value(x) > x[l.aux] + tol {
                return false;
            }
        }
        true
    }

    /// Upper bound on the Euclidean diameter, `None` if none is known.
    pub fn diameter_bound(&self) -> Option<f64> {
        let mut best = f64::INFINITY;
        if self.is_bounded_box() {
            let s: f64 = self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| (u - l).powi(2))
                .sum();
            best = s.sqrt();
        }
        for b in &self.balls {
            if b.indices.len() == self.dim {
                let scale = match b.norm {
                    Norm::L1 | Norm::L2 => 1.0,
                    Norm::Linf => (self.dim as f64).sqrt(),
                };
                best = best.min(2.0 * b.radius * scale);
            }
        }
        best.is_finite().then_some(best)
    }

    /// Euclidean projection by Dykstra's alternating scheme. Epigraph links
    /// are not supported here.
    pub fn project(&self, x: &[f64], max_iters: usize, tol: f64) -> Result<Vec<f64>, SolveError> {
        if !self.links.is_empty() {
            return Err(SolveError::UnsupportedAtom(
                "projection onto sets with epigraph links".into(),
            ));
        }
        let clamp_box = |y: &mut [f64]| {
            for j in 0..self.dim {
                y[j] = y[j].clamp(self.lower[j], self.upper[j]);
            }
        };
        let mut y = x.to_vec();
        if self.is_box_only() {
            clamp_box(&mut y);
            return Ok(y);
        }
        let parts = 1 + self.balls.len() + self.halfspaces.len();
        let mut incr = vec![vec![0.0; self.dim]; parts];
        for _ in 0..max_iters {
            let prev = y.clone();
            for (k, inc) in incr.iter_mut().enumerate() {
                let z: Vec<f64> = y.iter().zip(inc.iter()).map(|(a, b)| a + b).collect();
                let mut p = z.clone();
                if k == 0 {
                    clamp_box(&mut p);
                } else if k <= self.balls.len() {
                    project_ball(&self.balls[k - 1], &mut p);
                } else {
                    let h = &self.halfspaces[k - 1 - self.balls.len()];
                    let viol = dot(&h.g, &p) - h.rhs;
                    let nn = dot(&h.g, &h.g);
                    if viol > 0.0 && nn > 0.0 {
                        for (pj, gj) in p.iter_mut().zip(&h.g) {
                            *pj -= viol / nn * gj;
                        }
                    }
                }
                for j in 0..self.dim {
                    inc[j] = z[j] - p[j];
                }
                y = p;
            }
            let moved: f64 = y
                .iter()
                .zip(&prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if moved <= tol && self.contains(&y, 1e-9) {
                return Ok(y);
            }
        }
        if self.contains(&y, 1e-7) {
            Ok(y)
        } else {
            Err(SolveError::Numerical("projection did not converge".into()))
        }
    }
}

fn project_ball(b: &NormBall, p: &mut [f64]) {
    let mut y: Vec<f64> = b
        .indices
        .iter()
        .zip(&b.center)
        .map(|(&i, c)| p[i] - c)
        .collect();
    match b.norm {
        Norm::Linf => y.iter_mut().for_each(|v| *v = v.clamp(-b.radius, b.radius)),
        Norm::L2 => {
            let n = Norm::L2.of(&y);
            if n > b.radius {
                y.iter_mut().for_each(|v| *v *= b.radius / n);
            }
        }
        Norm::L1 => {
            if Norm::L1.of(&y) > b.radius {
                // soft-threshold at the level found by sorting magnitudes
                let mut a: Vec<f64> = y.iter().map(|v| v.abs()).collect();
                a.sort_by(|u, v| v.total_cmp(u));
                let mut cum = 0.0;
                let mut theta = 0.0;
                for (j, aj) in a.iter().enumerate() {
                    cum += aj;
                    let t = (cum - b.radius) / (j + 1) as f64;
                    if aj - t > 0.0 {
                        theta = t;
                    }
                }
                y.iter_mut()
                    .for_each(|v| *v = v.signum() * (v.abs() - theta).max(0.0));
            }
        }
    }
    for (k, &i) in b.indices.iter().enumerate() {
        p[i] = b.center[k] + y[k];
    }
}

/// Serializes bound vectors with `"inf"` / `"-inf"` strings for infinities.
pub(crate) mod bound_serde {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Bound {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let out: Vec<Bound> = v
            .iter()
            .map(|x| {
                if x.is_finite() {
                    Bound::Num(*x)
                } else if *x > 0.0 {
                    Bound::Text("inf".into())
                } else {
                    Bound::Text("-inf".into())
                }
            })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Bound>::deserialize(d)?;
        raw.into_iter()
            .map(|b| match b {
                Bound::Num(x) => Ok(x),
                Bound::Text(t) => match t.as_str() {
                    "inf" | "+inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    other => Err(D::Error::custom(format!("bad bound {other:?}"))),
                },
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_box_is_infeasible() {
        assert_eq!(
            FeasibleSet::boxed(vec![1.0], vec![0.0]),
            Err(SolveError::Infeasible)
        );
    }

    #[test]
    fn halfspaces_can_empty_a_box() {
        let s = FeasibleSet::cube(1, 1.0)
            .unwrap()
            .with_halfspace(vec![-1.0], -2.0);
        assert_eq!(
            s.check_nonempty(&SolverConfig::default()),
            Err(SolveError::Infeasible)
        );
        let ok = FeasibleSet::cube(1, 1.0)
            .unwrap()
            .with_halfspace(vec![-1.0], -0.5);
        assert!(ok.check_nonempty(&SolverConfig::default()).is_ok());
    }

    #[test]
    fn euclidean_ball_feasibility_uses_cuts() {
        let ball = NormBall {
            norm: Norm::L2,
            indices: vec![0, 1],
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        // x + y reaches sqrt(2) on the unit disc
        let s = FeasibleSet::free(2)
            .with_ball(ball.clone())
            .with_halfspace(vec![-1.0, -1.0], -1.4);
        assert!(s.check_nonempty(&SolverConfig::default()).is_ok());
        let t = FeasibleSet::free(2)
            .with_ball(ball)
            .with_halfspace(vec![-1.0, -1.0], -1.5);
        assert_eq!(
            t.check_nonempty(&SolverConfig::default()),
            Err(SolveError::Infeasible)
        );
    }

    #[test]
    fn projection_onto_ball_and_halfspace() {
        let s = FeasibleSet::free(2)
            .with_ball(NormBall {
                norm: Norm::L2,
                indices: vec![0, 1],
                center: vec![0.0, 0.0],
                radius: 1.0,
            })
            .with_halfspace(vec![1.0, 0.0], 0.0);
        let p = s.project(&[2.0, 0.0], 10_000, 1e-12).unwrap();
        assert!(p[0].abs() < 1e-8 && p[1].abs() < 1e-8);
        let q = s.project(&[-3.0, 4.0], 10_000, 1e-12).unwrap();
        assert!((q[0] + 0.6).abs() < 1e-8 && (q[1] - 0.8).abs() < 1e-8);
    }

    #[test]
    fn l1_ball_projection() {
        let s = FeasibleSet::free(2).with_ball(NormBall {
            norm: Norm::L1,
            indices: vec![0, 1],
            center: vec![0.0, 0.0],
            radius: 1.0,
        });
        let p = s.project(&[2.0, 0.5], 100, 1e-14).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_with_infinite_bounds() {
        let s = FeasibleSet::boxed(vec![f64::NEG_INFINITY, 0.0], vec![1.0, f64::INFINITY]).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"-inf\""));
        let back: FeasibleSet = serde_json::from_str(&j).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn diameter_of_box() {
        let s = FeasibleSet::cube(2, 1.0).unwrap();
        assert!((s.diameter_bound().unwrap() - 8f64.sqrt()).abs() < 1e-15);
        assert_eq!(FeasibleSet::free(1).diameter_bound(), None);
    }
}
