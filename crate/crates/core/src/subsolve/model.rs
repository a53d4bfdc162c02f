//! Standard-form models and the lowering of atoms into them.
//!
//! A model has variables `z` with bounds, a linear objective plus an optional
//! quadratic form on the leading `dim` variables (the original `x`), two-sided
//! linear rows, and nonlinear rows `atom(x) <= <r, z> + r0` that the solver
//! handles by outer approximation. Auxiliary variables created by lowering:
//!
//! * `epi*`: objective epigraph of a max-affine, `Linf` or `L2` atom;
//! * `abs*`: one per row of an `L1` norm atom, `abs_i >= |A_i x + c_i|`;
//! * `inf*`: bound on the largest entry of an `Linf` norm atom;
//! * `sum*`: epigraph of a summand inside a constraint.

use std::fmt::Write as _;

use super::feasible::FeasibleSet;
use crate::funcs::{dot, ConvexAtom, Norm};

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub coefs: Vec<(usize, f64)>,
    pub lo: f64,
    pub hi: f64,
}

/// `atom(z[..dim]) <= <rhs, z> + rhs_const`
#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearRow {
    pub atom: ConvexAtom,
    pub rhs: Vec<(usize, f64)>,
    pub rhs_const: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StandardModel {
    pub dim: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cost: Vec<f64>,
    pub cost_const: f64,
    /// `dim x dim` quadratic form, empty when absent.
    pub quad: Vec<Vec<f64>>,
    pub rows: Vec<Row>,
    pub nonlinear: Vec<NonlinearRow>,
    /// Starting values used by the simplex and by cut generation.
    pub start: Vec<f64>,
    pub labels: Vec<String>,
}

fn sparse(a: &[f64], scale: f64) -> Vec<(usize, f64)> {
    a.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(j, v)| (j, scale * v))
        .collect()
}

impl StandardModel {
    /// Model with the `dim` original variables bounded by `[lo, hi]`.
    pub fn new(lo: &[f64], hi: &[f64]) -> Self {
        let dim = lo.len();
        StandardModel {
            dim,
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            cost: vec![0.0; dim],
            cost_const: 0.0,
            quad: vec![],
            rows: vec![],
            nonlinear: vec![],
            start: (0..dim).map(|j| 0.0f64.clamp(lo[j], hi[j])).collect(),
            labels: (0..dim).map(|j| format!("x{j}")).collect(),
        }
    }

    /// Model over the feasible set with a zero objective.
    pub fn for_set(set: &FeasibleSet) -> Self {
        let mut m = Self::new(&set.lower, &set.upper);
        m.add_feasible_set(set);
        m
    }

    pub fn num_vars(&self) -> usize {
        self.lo.len()
    }

    pub fn add_var(&mut self, lo: f64, hi: f64, cost: f64, start: f64, label: &str) -> usize {
        self.lo.push(lo);
        self.hi.push(hi);
        self.cost.push(cost);
        self.start.push(start.clamp(lo, hi));
        self.labels.push(format!("{label}{}", self.lo.len() - 1));
        self.lo.len() - 1
    }

    pub fn add_row(&mut self, coefs: Vec<(usize, f64)>, lo: f64, hi: f64) {
        self.rows.push(Row { coefs, lo, hi });
    }

    fn x0(&self) -> &[f64] {
        &self.start[..self.dim]
    }

    pub fn has_quadratic(&self) -> bool {
        self.quad.iter().flatten().any(|v| *v != 0.0)
    }

    /// Adds `weight * atom(x)` to the objective.
    pub fn add_objective_atom(&mut self, atom: &ConvexAtom, weight: f64) {
        match atom {
            ConvexAtom::Const { value } => self.cost_const += weight * value,
            ConvexAtom::Affine { a, b } => {
                for (j, aj) in a.iter().enumerate() {
                    self.cost[j] += weight * aj;
                }
                self.cost_const += weight * b;
            }
            ConvexAtom::Quadratic { p, a, b } => {
                if self.quad.is_empty() {
                    self.quad = vec![vec![0.0; self.dim]; self.dim];
                }
                for (qi, pi) in self.quad.iter_mut().zip(p) {
                    for (q, v) in qi.iter_mut().zip(pi) {
                        *q += weight * v;
                    }
                }
                for (j, aj) in a.iter().enumerate() {
                    self.cost[j] += weight * aj;
                }
                self.cost_const += weight * b;
            }
            ConvexAtom::MaxAffine { rows } if rows.len() == 1 => {
                self.add_objective_atom(&ConvexAtom::affine(rows[0].a.clone(), rows[0].b), weight)
            }
            ConvexAtom::Sum { terms } => {
                for t in terms {
                    self.add_objective_atom(&t.atom, weight * t.weight);
                }
            }
            ConvexAtom::NormAffine {
                norm: Norm::L1,
                a,
                c,
                w,
            } => {
                for (ai, ci) in a.iter().zip(c) {
                    let y = dot(ai, self.x0()) + ci;
                    let u = self.add_var(0.0, f64::INFINITY, weight * w, y.abs(), "abs");
                    let mut up = sparse(ai, 1.0);
                    up.push((u, -1.0));
                    self.add_row(up, f64::NEG_INFINITY, -ci);
                    let mut dn = sparse(ai, -1.0);
                    dn.push((u, -1.0));
                    self.add_row(dn, f64::NEG_INFINITY, *ci);
                }
            }
            _ => {
                let start = atom.value(self.x0());
                let t = self.add_var(f64::NEG_INFINITY, f64::INFINITY, weight, start, "epi");
                self.add_atom_le(atom, vec![(t, 1.0)], 0.0);
            }
        }
    }

    /// Adds the constraint `atom(x) <= <rhs, z> + rhs_const`.
    pub fn add_atom_le(&mut self, atom: &ConvexAtom, rhs: Vec<(usize, f64)>, rhs_const: f64) {
        let neg = |rhs: &[(usize, f64)]| -> Vec<(usize, f64)> {
            rhs.iter().map(|&(j, v)| (j, -v)).collect()
        };
        match atom {
            ConvexAtom::Const { value } => {
                self.add_row(neg(&rhs), f64::NEG_INFINITY, rhs_const - value);
            }
            ConvexAtom::Affine { a, b } => {
                let mut c = sparse(a, 1.0);
                c.extend(neg(&rhs));
                self.add_row(c, f64::NEG_INFINITY, rhs_const - b);
            }
            ConvexAtom::MaxAffine { rows } => {
                for r in rows {
                    let mut c = sparse(&r.a, 1.0);
                    c.extend(neg(&rhs));
                    self.add_row(c, f64::NEG_INFINITY, rhs_const - r.b);
                }
            }
            ConvexAtom::NormAffine {
                norm: Norm::L1,
                a,
                c,
                w,
            } => {
                let mut total = neg(&rhs);
                for (ai, ci) in a.iter().zip(c) {
                    let y = dot(ai, self.x0()) + ci;
                    let u = self.add_var(0.0, f64::INFINITY, 0.0, y.abs(), "abs");
                    let mut up = sparse(ai, 1.0);
                    up.push((u, -1.0));
                    self.add_row(up, f64::NEG_INFINITY, -ci);
                    let mut dn = sparse(ai, -1.0);
                    dn.push((u, -1.0));
                    self.add_row(dn, f64::NEG_INFINITY, *ci);
                    total.push((u, *w));
                }
                self.add_row(total, f64::NEG_INFINITY, rhs_const);
            }
            ConvexAtom::NormAffine {
                norm: Norm::Linf,
                a,
                c,
                w,
            } => {
                let y: Vec<f64> = a
                    .iter()
                    .zip(c)
                    .map(|(ai, ci)| dot(ai, self.x0()) + ci)
                    .collect();
                let t = self.add_var(0.0, f64::INFINITY, 0.0, Norm::Linf.of(&y), "inf");
                for (ai, ci) in a.iter().zip(c) {
                    let mut up = sparse(ai, 1.0);
                    up.push((t, -1.0));
                    self.add_row(up, f64::NEG_INFINITY, -ci);
                    let mut dn = sparse(ai, -1.0);
                    dn.push((t, -1.0));
                    self.add_row(dn, f64::NEG_INFINITY, *ci);
                }
                let mut total = neg(&rhs);
                total.push((t, *w));
                self.add_row(total, f64::NEG_INFINITY, rhs_const);
            }
            ConvexAtom::Sum { terms } => {
                let mut total = neg(&rhs);
                let mut konst = rhs_const;
                for t in terms {
                    match &t.atom {
                        ConvexAtom::Const { value } => konst -= t.weight * value,
                        ConvexAtom::Affine { a, b } => {
                            total.extend(sparse(a, t.weight));
                            konst -= t.weight * b;
                        }
                        other => {
                            let start = other.value(self.x0());
                            let s =
                                self.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0, start, "sum");
                            self.add_atom_le(other, vec![(s, 1.0)], 0.0);
                            total.push((s, t.weight));
                        }
                    }
                }
                self.add_row(total, f64::NEG_INFINITY, konst);
            }
            ConvexAtom::Quadratic { .. } | ConvexAtom::NormAffine { norm: Norm::L2, .. } => {
                self.nonlinear.push(NonlinearRow {
                    atom: atom.clone(),
                    rhs,
                    rhs_const,
                });
            }
        }
    }

    /// Adds the constraints of `set` (whose dimension must equal `dim`).
    pub fn add_feasible_set(&mut self, set: &FeasibleSet) {
        for j in 0..self.dim {
            self.lo[j] = self.lo[j].max(set.lower[j]);
            self.hi[j] = self.hi[j].min(set.upper[j]);
            self.start[j] = self.start[j].clamp(self.lo[j], self.hi[j]);
        }
        for b in &set.balls {
            let k = b.indices.len();
            let a: Vec<Vec<f64>> = b
                .indices
                .iter()
                .map(|&i| {
                    let mut r = vec![0.0; self.dim];
                    r[i] = 1.0;
                    r
                })
                .collect();
            let c: Vec<f64> = b.center.iter().map(|v| -v).collect();
            match b.norm {
                Norm::Linf => {
                    for (t, &i) in b.indices.iter().enumerate() {
                        self.lo[i] = self.lo[i].max(b.center[t] - b.radius);
                        self.hi[i] = self.hi[i].min(b.center[t] + b.radius);
                        self.start[i] = self.start[i].clamp(self.lo[i], self.hi[i]);
                    }
                }
                _ if k == 0 => {}
                norm => {
                    let atom = ConvexAtom::NormAffine { norm, a, c, w: 1.0 };
                    self.add_atom_le(&atom, vec![], b.radius);
                }
            }
        }
        for h in &set.halfspaces {
            self.add_row(sparse(&h.g, 1.0), f64::NEG_INFINITY, h.rhs);
        }
        for l in &set.links {
            self.add_atom_le(&l.atom, vec![(l.aux, 1.0)], 0.0);
        }
    }

    /// Linear-plus-quadratic objective at `z`.
    pub fn objective_value(&self, z: &[f64]) -> f64 {
        let mut v = self.cost_const + dot(&self.cost, z);
        if !self.quad.is_empty() {
            let x = &z[..self.dim];
            let q: f64 = self.quad.iter().zip(x).map(|(r, xi)| xi * dot(r, x)).sum();
            v += 0.5 * q;
        }
        v
    }

    /// Largest violation among rows, bounds and nonlinear rows at `z`.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, zj) in z.iter().enumerate() {
            worst = worst.max(self.lo[j] - zj).max(zj - self.hi[j]);
        }
        for r in &self.rows {
            let v: f64 = r.coefs.iter().map(|&(j, c)| c * z[j]).sum();
            worst = worst.max(r.lo - v).max(v - r.hi);
        }
        for nl in &self.nonlinear {
            worst = worst.max(self.nonlinear_violation(nl, z));
        }
        worst
    }

    pub(crate) fn nonlinear_violation(&self, nl: &NonlinearRow, z: &[f64]) -> f64 {
        let rhs: f64 = nl.rhs.iter().map(|&(j, c)| c * z[j]).sum::<f64>() + nl.rhs_const;
        nl.atom.value(&z[..self.dim]) - rhs
    }

    /// Dense rows over all variables (for the pivoting engines).
    pub(crate) fn dense_rows(&self) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let n = self.num_vars();
        let mut a = Vec::with_capacity(self.rows.len());
        let mut lo = Vec::with_capacity(self.rows.len());
        let mut hi = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let mut d = vec![0.0; n];
            for &(j, c) in &r.coefs {
                d[j] += c;
            }
            a.push(d);
            lo.push(r.lo);
            hi.push(r.hi);
        }
        (a, lo, hi)
    }

    /// Plain-text dump: one `var`, `quad`, `row` or `nl` record per line.
    ///
    /// ```text
    /// var <index> <label> <lo> <hi> <cost>
    /// quad <i> <j> <value>
    /// row <index> <lo> <hi> <j>:<coef> ...
    /// nl <index> <rhs_const> <j>:<coef> ... | <atom json>
    /// ```
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "model vars={} rows={} nonlinear={}",
            self.num_vars(),
            self.rows.len(),
            self.nonlinear.len()
        );
        let _ = writeln!(s, "objective_const {}", self.cost_const);
        for j in 0..self.num_vars() {
            let _ = writeln!(
                s,
                "var {j} {} {} {} {}",
                self.labels[j], self.lo[j], self.hi[j], self.cost[j]
            );
        }
        for (i, r) in self.quad.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                if *v != 0.0 {
                    let _ = writeln!(s, "quad {i} {j} {v}");
                }
            }
        }
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(s, "row {i} {} {}", r.lo, r.hi);
            for (j, c) in &r.coefs {
                let _ = write!(s, " {j}:{c}");
            }
            s.push('\n');
        }
        for (i, nl) in self.nonlinear.iter().enumerate() {
            let _ = write!(s, "nl {i} {}", nl.rhs_const);
            for (j, c) in &nl.rhs {
                let _ = write!(s, " {j}:{c}");
            }
            let _ = writeln!(
                s,
                " | {}",
                serde_json::to_string(&nl.atom).unwrap_or_default()
            );
        }
        s
    }
}
