//! Projected subgradient method with a Polyak step towards an adaptive
//! target level (the optimal value is unknown, so the level is lowered
//! whenever the travelled path exceeds a budget without sufficient descent).

use super::{Objective, Solution, SolveError, SolverConfig};
use crate::funcs::dot;
use crate::subsolve::feasible::FeasibleSet;

pub(crate) fn minimize(
    obj: &Objective,
    set: &FeasibleSet,
    cfg: &SolverConfig,
) -> Result<Solution, SolveError> {
    let d = set.dim;
    let project = |y: &[f64]| set.project(y, 10_000, 1e-13);
    let start: Vec<f64> = (0..d)
        .map(|j| 0.0f64.clamp(set.lower[j], set.upper[j]))
        .collect();
    let mut x = project(&start)?;
    let mut fx = obj.value(&x);
    let mut best = (x.clone(), fx);
    let g0 = obj.subgradient(&x);
    let g0n = dot(&g0, &g0).sqrt();
    if g0n == 0.0 {
        return Ok(Solution { x, value: fx });
    }
    let radius = set.diameter_bound().unwrap_or(1.0 + dot(&x, &x).sqrt());
    let budget = radius.max(1e-6);
    let mut delta = (g0n * radius).max(1e-3 * (1.0 + fx.abs()));
    let stop = 0.1 * cfg.tol_abs * (1.0 + fx.abs());
    let mut path = 0.0;
    for _ in 0..cfg.max_iters {
        if delta <= stop {
            return Ok(Solution {
                x: best.0,
                value: best.1,
            });
        }
        let g = obj.subgradient(&x);
        let gn2 = dot(&g, &g);
        if gn2 == 0.0 {
            return Ok(Solution { x, value: fx });
        }
        let level = best.1 - delta;
        let t = (fx - level) / gn2;
        let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - t * gi).collect();
        let next = project(&trial)?;
        path += t * gn2.sqrt();
        x = next;
        fx = obj.value(&x);
        if fx <= best.1 - 0.5 * delta {
            best = (x.clone(), fx);
            path = 0.0;
        } else if path > budget {
            delta *= 0.5;
            path = 0.0;
            x = best.0.clone();
            fx = best.1;
        }
        if fx < best.1 {
            best = (x.clone(), fx);
        }
    }
    Err(SolveError::IterationLimit {
        x: best.0,
        value: best.1,
    })
}
