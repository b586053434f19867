//! Price equilibrium for a single school and the acceptable fractional set
//! it induces.
//!
//! Each member buys students with a random budget on `[1 - eps, 1]`, the
//! school allocates `c` seats to maximise revenue, and member demand scaled
//! by α never exceeds the allocation (with slack only on free students).
//!
//! The search runs in allocation space. For a fixed allocation `z` every
//! member's equilibrium prices follow from a greedy fill (see the `agent`
//! module), so an equilibrium is an allocation that is revenue-maximal
//! against its own prices. We run extragradient steps on a smoothed version
//! of that price map while shrinking the smoothing, then pin down the exact
//! equilibrium with a small linear program over the allocation and the free
//! rank prices, and finally recompute demands from scratch to certify the
//! result.

use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{self, fill, fill_prices, project_capped_simplex, smooth_prices, Fill};
use crate::lp::Lp;
use crate::model::{Ranking, School};
use crate::num::{int, to_f64, Rational};

/// Smoothing widths of the price map, from coarse to nearly exact.
pub(crate) const SIGMAS: [f64; 6] = [1.0, 0.3, 0.1, 0.03, 0.01, 0.003];
/// Distances within which a coordinate counts as 0 or 1, or a fill as
/// exact, when guessing the equilibrium's structure.
pub(crate) const SNAPS: [f64; 7] = [1e-9, 1e-6, 1e-4, 1e-3, 1e-2, 3e-2, 1e-1];
const STAGE_ITERS: usize = 2500;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverParams {
    /// Budget window; chosen from the instance when absent.
    pub eps: Option<f64>,
    /// Initial step of the allocation dynamics.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams { eps: None, damping: 0.25, tol: 1e-7, max_iter: 50_000, restarts: 3, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeoState {
    /// Member prices over students; the outside option costs 0.
    pub p: Vec<Vec<f64>>,
    /// Member demand over students.
    pub y: Vec<Vec<f64>>,
    /// Member demand for the outside option.
    pub y_outside: Vec<f64>,
    pub z: Vec<f64>,
    pub eps: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum LeoError {
    #[error("no equilibrium within tolerance after {iterations} iterations (best residual {residual:.3e})")]
    NonConvergence { best: Option<Box<LeoState>>, residual: f64, iterations: usize },
    #[error("capacity {capacity} exceeds the {students} students available")]
    TooFewStudents { capacity: usize, students: usize },
    #[error("equilibrium inconsistent with its bounds: {0}")]
    Inconsistent(String),
}

/// Demand of one member; see [`agent::random_demand`].
pub fn random_demand(prices: &[f64], ranking: &Ranking, eps: f64) -> (Vec<f64>, f64) {
    agent::random_demand(prices, ranking.order(), eps)
}

/// Revenue-maximising allocation of `capacity` seats against total prices.
pub fn central_allocation(totals: &[f64], capacity: usize) -> Vec<f64> {
    agent::greedy_allocation(totals, capacity, 1e-12)
}

/// Largest `2^-j` with `eps < c / (Σα + c)`.
pub fn choose_eps(school: &School) -> f64 {
    let c = int(school.capacity);
    let bound = c.clone() / (school.alpha_sum() + c);
    let mut eps = Rational::new(1.into(), 2.into());
    while eps >= bound {
        eps /= Rational::from_integer(2.into());
    }
    to_f64(&eps)
}

fn alphas(school: &School) -> Vec<f64> {
    school.committee.iter().map(|k| k.alpha.to_f64().unwrap_or(0.0)).collect()
}

/// Largest violation of the equilibrium conditions at prices `p` and
/// allocation `z`. Demands are recomputed from the prices.
pub fn residual(school: &School, p: &[Vec<f64>], z: &[f64], eps: f64) -> f64 {
    let a = alphas(school);
    let mut r = (z.iter().sum::<f64>() - school.capacity as f64).abs();
    for &x in z {
        r = r.max(-x).max(x - 1.0);
    }
    let n = z.len();
    let mut total = vec![0.0; n];
    for (k, member) in school.committee.iter().enumerate() {
        let (y, _) = random_demand(&p[k], &member.ranking, eps);
        for i in 0..n {
            let pk = p[k][i];
            r = r.max(-pk).max(pk - 1.0);
            let gap = a[k] * y[i] - z[i];
            r = r.max(gap).max((-gap).min(pk));
            total[i] += pk;
        }
    }
    r.max(argmax_gap(&total, z))
}

/// How far `z` is from maximising `Σ totals·z`: the best price among items
/// with room left minus the worst price among items in use.
pub(crate) fn argmax_gap(totals: &[f64], z: &[f64]) -> f64 {
    let used = totals.iter().zip(z).filter(|(_, &x)| x > 1e-9).map(|(&t, _)| t).fold(f64::INFINITY, f64::min);
    let room = totals.iter().zip(z).filter(|(_, &x)| x < 1.0 - 1e-9).map(|(&t, _)| t).fold(f64::NEG_INFINITY, f64::max);
    (room - used).max(0.0)
}

struct Problem<'a> {
    school: &'a School,
    alpha: Vec<f64>,
    orders: Vec<&'a [usize]>,
    eps: f64,
    c: f64,
}

impl Problem<'_> {
    fn smooth_totals(&self, z: &[f64], sigma: f64, out: &mut [f64], buf: &mut [f64]) {
        out.fill(0.0);
        for (k, order) in self.orders.iter().enumerate() {
            smooth_prices(z, order, self.alpha[k], self.eps, 0.0, sigma, buf);
            for (o, b) in out.iter_mut().zip(buf.iter()) {
                *o += b;
            }
        }
    }

    /// Extragradient steps with a backtracking step size. Returns the
    /// number of iterations used.
    fn dynamics(&self, z: &mut [f64], sigma: f64, step: &mut f64, iters: usize) -> usize {
        let n = z.len();
        let (mut g, mut g2, mut buf) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let (mut zh, mut zn, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for it in 0..iters {
            self.smooth_totals(z, sigma, &mut g, &mut buf);
            let (mut dz, mut dg);
            loop {
                for i in 0..n {
                    tmp[i] = z[i] + *step * g[i];
                }
                project_capped_simplex(&tmp, self.c, &mut zh);
                self.smooth_totals(&zh, sigma, &mut g2, &mut buf);
                dz = dist(&zh, z);
                dg = dist(&g2, &g);
                if *step * dg <= 0.9 * dz || *step < 1e-6 {
                    break;
                }
                *step *= 0.5;
            }
            for i in 0..n {
                tmp[i] = z[i] + *step * g2[i];
            }
            project_capped_simplex(&tmp, self.c, &mut zn);
            let moved = zn.iter().zip(z.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            z.copy_from_slice(&zn);
            if moved < 1e-12 {
                return it + 1;
            }
            if *step * dg < 0.5 * dz {
                *step = (*step * 1.2).min(1.0);
            }
        }
        iters
    }

    /// Exact equilibrium with the structure suggested by `zd`, staying as
    /// close to `zd` as possible.
    fn polish(&self, zd: &[f64], snap: f64) -> Option<(Vec<f64>, Vec<f64>, Vec<Fill>)> {
        let n = zd.len();
        let z0: Vec<f64> = zd.iter().map(|&x| if x < snap { 0.0 } else if x > 1.0 - snap { 1.0 } else { x }).collect();
        let mut lp = Lp::minimize();
        let zv: Vec<usize> = z0
            .iter()
            .map(|&x| match x {
                x if x == 0.0 => lp.var(0.0, 0.0, 0.0),
                x if x == 1.0 => lp.var(0.0, 1.0, 1.0),
                _ => lp.var(0.0, 0.0, 1.0),
            })
            .collect();
        let lam = lp.var(1e-6, 0.0, f64::INFINITY);
        lp.eq(&zv.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(), self.c);
        // price of student i as constant + terms
        let mut pc = vec![0.0; n];
        let mut pt: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut fills = Vec::with_capacity(self.orders.len());
        let mut tvars = Vec::with_capacity(self.orders.len());
        for (k, order) in self.orders.iter().enumerate() {
            let a = self.alpha[k];
            let f = fill(&z0, order, a, snap);
            let r = f.rank?;
            let above: Vec<(usize, f64)> = f.above.iter().map(|&i| (zv[i], 1.0)).collect();
            lp.le(&above, a);
            let mut through = above.clone();
            through.push((zv[r], 1.0));
            if f.tight {
                lp.eq(&through, a);
                let t = lp.var(0.0, 0.0, 1.0 - self.eps);
                pt[r].push((t, 1.0));
                tvars.push(Some(t));
            } else {
                lp.ge(&through, a);
                tvars.push(None);
            }
            for (j, &i) in f.above.iter().enumerate() {
                pc[i] += 1.0;
                for &prev in &f.above[..=j] {
                    pt[i].push((zv[prev], -self.eps / a));
                }
            }
            fills.push(f);
        }
        for i in 0..n {
            let mut terms = pt[i].clone();
            terms.push((lam, -1.0));
            if z0[i] == 1.0 {
                lp.ge(&terms, -pc[i]);
            } else if z0[i] == 0.0 {
                lp.le(&terms, -pc[i]);
            } else {
                lp.eq(&terms, -pc[i]);
            }
            let d = lp.var(1.0, 0.0, f64::INFINITY);
            lp.le(&[(zv[i], 1.0), (d, -1.0)], zd[i]);
            lp.le(&[(zv[i], -1.0), (d, -1.0)], -zd[i]);
        }
        let x = lp.solve()?;
        let z: Vec<f64> = zv.iter().map(|&v| x[v].clamp(0.0, 1.0)).collect();
        let t: Vec<f64> = tvars.iter().map(|t| t.map_or(0.0, |v| x[v].clamp(0.0, 1.0 - self.eps))).collect();
        Some((z, t, fills))
    }

    fn state(&self, z: Vec<f64>, t: &[f64], fills: &[Fill], iterations: usize) -> LeoState {
        let mut p = Vec::with_capacity(fills.len());
        let mut y = Vec::with_capacity(fills.len());
        let mut y_outside = Vec::with_capacity(fills.len());
        for (k, f) in fills.iter().enumerate() {
            let pk = fill_prices(&z, f, self.alpha[k], self.eps, 0.0, t[k]);
            let (yk, yo) = agent::random_demand(&pk, self.orders[k], self.eps);
            p.push(pk);
            y.push(yk);
            y_outside.push(yo);
        }
        let residual = residual(self.school, &p, &z, self.eps);
        LeoState { p, y, y_outside, z, eps: self.eps, residual, iterations }
    }

    fn starts(&self, n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let c = self.c;
        let mut out = vec![vec![c / n as f64; n]];
        // students ranked high by many members, blended with uniform mass
        let mut score = vec![0.0; n];
        for (k, order) in self.orders.iter().enumerate() {
            for (pos, &i) in order.iter().enumerate() {
                score[i] += (1.0 - pos as f64 / (self.alpha[k] + c)).max(0.0);
            }
        }
        let top = agent::greedy_allocation(&score, self.school.capacity, 0.0);
        let blend: Vec<f64> = top.iter().map(|&t| 0.5 * t + 0.5 * c / n as f64).collect();
        let mut w = vec![0.0; n];
        project_capped_simplex(&blend, c, &mut w);
        out.push(w);
        while out.len() < count {
            let raw: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
            let s: f64 = raw.iter().sum();
            let scaled: Vec<f64> = raw.iter().map(|x| x * c / s).collect();
            let mut w = vec![0.0; n];
            project_capped_simplex(&scaled, c, &mut w);
            out.push(w);
        }
        out.truncate(count);
        out
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Computes an equilibrium for one school whose committee ranks all
/// students of the instance.
pub fn leo_iterate(school: &School, params: &SolverParams) -> Result<LeoState, LeoError> {
    let n = school.num_students();
    if school.capacity > n {
        return Err(LeoError::TooFewStudents { capacity: school.capacity, students: n });
    }
    let eps = params.eps.unwrap_or_else(|| choose_eps(school));
    let prob = Problem {
        school,
        alpha: alphas(school),
        orders: school.committee.iter().map(|k| k.ranking.order()).collect(),
        eps,
        c: school.capacity as f64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<LeoState> = None;
    let mut used = 0;
    for (r, start) in prob.starts(n, params.restarts + 1, &mut rng).into_iter().enumerate() {
        let mut z = start;
        let mut step = params.damping / f64::powi(2.0, r as i32);
        for &sigma in &SIGMAS {
            if used >= params.max_iter {
                break;
            }
            used += prob.dynamics(&mut z, sigma, &mut step, STAGE_ITERS.min(params.max_iter - used));
            for &snap in &SNAPS {
                let Some((zp, t, fills)) = prob.polish(&z, snap) else { continue };
                let st = prob.state(zp, &t, &fills, used);
                if st.residual <= params.tol {
                    return Ok(st);
                }
                if best.as_ref().map_or(true, |b| st.residual < b.residual) {
                    best = Some(st);
                }
            }
        }
    }
    let residual = best.as_ref().map_or(f64::INFINITY, |b| b.residual);
    Err(LeoError::NonConvergence { best: best.map(Box::new), residual, iterations: used })
}

/// Support threshold read off an equilibrium.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaReadout {
    /// Smallest total price over students with positive allocation.
    pub raw: f64,
    /// `⌊raw / (1 - eps)⌋`.
    pub beta: Rational,
}

pub fn extract_beta(state: &LeoState, school: &School) -> Result<BetaReadout, LeoError> {
    let raw = (0..state.z.len())
        .filter(|&i| state.z[i] > 1e-9)
        .map(|i| state.p.iter().map(|pk| pk[i]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let bound = to_f64(&school.alpha_sum()) / school.capacity as f64;
    if raw > bound + 1e-6 {
        return Err(LeoError::Inconsistent(format!("price level {raw} exceeds Σα/c = {bound}")));
    }
    let beta = (raw / (1.0 - state.eps) + 1e-9).floor().max(0.0) as usize;
    Ok(BetaReadout { raw, beta: int(beta) })
}
