//! Matching equilibrium over several schools and the stable fractional
//! matching it induces.
//!
//! Students price schools and members price students. A school's utility
//! for a student is the student's price for the school times the total price
//! the school's committee puts on the student, and each school allocates its
//! seats to maximise total utility. Students' and members' scaled demands
//! never exceed the allocation, with slack only where the price sits at its
//! floor (0 for students, `delta` for members).
//!
//! As in the single-school solver the search runs over allocations: prices
//! follow from greedy fills of each agent, the dynamics are extragradient
//! steps on smoothed utilities, and a sequence of linear programs with the
//! utilities linearised around the current point recovers the exact
//! equilibrium. Pairs a student finds unacceptable carry no mass.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{self, fill, fill_prices, project_capped_simplex, smooth_prices, Fill};
use crate::leo::{argmax_gap, SIGMAS, SNAPS};
use crate::lp::Lp;
use crate::model::{Instance, SchoolId, StudentId};
use crate::num::{int, to_f64, Rational};

const STAGE_ITERS: usize = 20_000;
const CHUNK_ITERS: usize = 2500;
/// Projected-gradient norm below which a smoothing stage counts as settled.
const SETTLED: f64 = 1e-6;
const POLISH_ROUNDS: usize = 30;
const REPAIRS: usize = 4;
/// Cost per unit of violating a linearised utility comparison.
const ELASTIC: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct MeoParams {
    /// Budget window; chosen from the instance when absent.
    pub eps: Option<f64>,
    /// Member price floor; chosen from the instance when absent.
    pub delta: Option<f64>,
    /// Initial step of the allocation dynamics.
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for MeoParams {
    fn default() -> Self {
        MeoParams { eps: None, delta: None, damping: 0.25, tol: 1e-7, max_iter: 200_000, restarts: 3, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeoState {
    /// `q[i][h]`: student `i`'s price for school `h`; the outside option costs 0.
    pub q: Vec<Vec<f64>>,
    /// `p[h][k][i]`: member `k` of school `h`'s price for student `i`; the
    /// outside option costs `delta`.
    pub p: Vec<Vec<Vec<f64>>>,
    /// `x[i][h]`: student demand.
    pub x: Vec<Vec<f64>>,
    pub x_outside: Vec<f64>,
    /// `y[h][k][i]`: member demand.
    pub y: Vec<Vec<Vec<f64>>>,
    pub y_outside: Vec<Vec<f64>>,
    /// `z[h][i]`: allocation.
    pub z: Vec<Vec<f64>>,
    pub eps: f64,
    pub delta: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl MeoState {
    /// `u[h][i]`, the school's utility for each student.
    pub fn utilities(&self) -> Vec<Vec<f64>> {
        utilities(&self.q, &self.p)
    }

    /// Largest gap between a student's demand and the allocation.
    pub fn demand_gap(&self) -> f64 {
        let mut r: f64 = 0.0;
        for (h, row) in self.z.iter().enumerate() {
            for (i, &z) in row.iter().enumerate() {
                r = r.max((z - self.x[i][h]).abs());
            }
        }
        r
    }
}

#[derive(Debug, Error)]
pub enum MeoError {
    #[error("no equilibrium within tolerance after {iterations} iterations (best residual {residual:.3e})")]
    NonConvergence { best: Option<Box<MeoState>>, residual: f64, iterations: usize },
    #[error("equilibrium inconsistent with its bounds: {0}")]
    Inconsistent(String),
}

fn utilities(q: &[Vec<f64>], p: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    p.iter()
        .enumerate()
        .map(|(h, ph)| (0..q.len()).map(|i| q[i][h] * ph.iter().map(|pk| pk[i]).sum::<f64>()).collect())
        .collect()
}

/// Budget window and member price floor. With `m` the largest committee,
/// `eps` is the largest `2^-j` with `m / (1 - eps)^2 - m <= 1/10` and
/// `1 / (1 - eps)^2 <= 2`, and `delta = 1 / (10 m)`.
pub fn choose_eps_delta(instance: &Instance) -> (f64, f64) {
    let m = instance.schools.iter().map(|s| s.committee.len()).max().unwrap_or(1).max(1);
    let mr = int(m);
    let tenth = Rational::new(1.into(), 10.into());
    let two = int(2);
    let mut eps = Rational::new(1.into(), 2.into());
    loop {
        let sq = (int(1) - &eps) * (int(1) - &eps);
        let inv = sq.recip();
        if &mr * &inv - &mr <= tenth && inv <= two {
            break;
        }
        eps /= int(2);
    }
    (to_f64(&eps), 1.0 / (10.0 * m as f64))
}

/// Utility-maximising allocation of `capacity` seats; see
/// [`crate::leo::central_allocation`].
pub fn school_allocation(utilities: &[f64], capacity: usize) -> Vec<f64> {
    agent::greedy_allocation(utilities, capacity, 1e-12)
}

/// Largest violation of the equilibrium conditions. Demands are recomputed
/// from the prices.
pub fn residual(instance: &Instance, q: &[Vec<f64>], p: &[Vec<Vec<f64>>], z: &[Vec<f64>], eps: f64, delta: f64) -> f64 {
    let n = instance.num_students();
    let caps = effective_capacities(instance);
    let mut r: f64 = 0.0;
    for (h, row) in z.iter().enumerate() {
        r = r.max((row.iter().sum::<f64>() - caps[h] as f64).abs());
        for (i, &v) in row.iter().enumerate() {
            r = r.max(-v).max(v - 1.0);
            if !instance.students[i].prefs.contains(&h) {
                r = r.max(v.abs());
            }
        }
    }
    for (i, student) in instance.students.iter().enumerate() {
        let (x, _) = agent::random_demand(&q[i], &student.prefs, eps);
        for &h in &student.prefs {
            let qh = q[i][h];
            r = r.max(-qh).max(qh - 1.0);
            let gap = x[h] - z[h][i];
            r = r.max(gap).max((-gap).min(qh));
        }
    }
    for (h, school) in instance.schools.iter().enumerate() {
        for (k, member) in school.committee.iter().enumerate() {
            let a = member.alpha.to_f64().unwrap_or(0.0);
            let (y, _) = agent::random_demand(&p[h][k], member.ranking.order(), eps);
            for i in 0..n {
                let pk = p[h][k][i];
                r = r.max(delta - pk).max(pk - 1.0);
                let gap = a * y[i] - z[h][i];
                r = r.max(gap).max((-gap).min(pk - delta));
            }
        }
    }
    let u = utilities(q, p);
    for (h, row) in u.iter().enumerate() {
        let allowed: Vec<usize> = (0..n).filter(|&i| instance.students[i].prefs.contains(&h)).collect();
        let us: Vec<f64> = allowed.iter().map(|&i| row[i]).collect();
        let zs: Vec<f64> = allowed.iter().map(|&i| z[h][i]).collect();
        r = r.max(argmax_gap(&us, &zs));
    }
    r
}

/// Seats each school can fill from students who accept it.
fn effective_capacities(instance: &Instance) -> Vec<usize> {
    let mut acc = vec![0; instance.num_schools()];
    for s in &instance.students {
        for &h in &s.prefs {
            acc[h] += 1;
        }
    }
    instance.schools.iter().zip(acc).map(|(s, a)| s.capacity.min(a)).collect()
}

/// An affine expression over LP variables.
#[derive(Clone, Debug, Default)]
struct Affine {
    c: f64,
    terms: Vec<(usize, f64)>,
}

impl Affine {
    fn constant(c: f64) -> Self {
        Affine { c, terms: Vec::new() }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.c + self.terms.iter().map(|&(v, a)| a * x[v]).sum::<f64>()
    }

    fn add(&mut self, other: &Affine) {
        self.c += other.c;
        self.terms.extend_from_slice(&other.terms);
    }
}

struct Problem<'a> {
    instance: &'a Instance,
    n: usize,
    m: usize,
    caps: Vec<f64>,
    /// Students who accept each school.
    allowed: Vec<Vec<StudentId>>,
    alpha: Vec<Vec<f64>>,
    eps: f64,
    delta: f64,
}

/// Fills of every agent at a candidate allocation.
struct Fills {
    students: Vec<Fill>,
    members: Vec<Vec<Fill>>,
}

impl Problem<'_> {
    fn column(&self, z: &[Vec<f64>], i: StudentId, out: &mut [f64]) {
        for h in 0..self.m {
            out[h] = z[h][i];
        }
    }

    /// Smoothed utilities `u[h][i]` at allocation `z`.
    fn smooth_utilities(&self, z: &[Vec<f64>], sigma: f64, out: &mut [Vec<f64>]) {
        let (mut col, mut qi) = (vec![0.0; self.m], vec![0.0; self.m]);
        let mut q = vec![vec![0.0; self.m]; self.n];
        for (i, s) in self.instance.students.iter().enumerate() {
            self.column(z, i, &mut col);
            smooth_prices(&col, &s.prefs, 1.0, self.eps, 0.0, sigma, &mut qi);
            q[i].copy_from_slice(&qi);
        }
        let mut buf = vec![0.0; self.n];
        for (h, school) in self.instance.schools.iter().enumerate() {
            let row = &mut out[h];
            row.fill(0.0);
            for (k, member) in school.committee.iter().enumerate() {
                smooth_prices(&z[h], member.ranking.order(), self.alpha[h][k], self.eps, self.delta, sigma, &mut buf);
                for (r, b) in row.iter_mut().zip(&buf) {
                    *r += b;
                }
            }
            for (i, r) in row.iter_mut().enumerate() {
                *r *= q[i][h];
            }
        }
    }

    fn project(&self, v: &[Vec<f64>], out: &mut [Vec<f64>]) {
        for h in 0..self.m {
            let idx = &self.allowed[h];
            let sub: Vec<f64> = idx.iter().map(|&i| v[h][i]).collect();
            let mut proj = vec![0.0; idx.len()];
            project_capped_simplex(&sub, self.caps[h], &mut proj);
            out[h].fill(0.0);
            for (&i, w) in idx.iter().zip(proj) {
                out[h][i] = w;
            }
        }
    }

    fn dynamics(&self, z: &mut Vec<Vec<f64>>, sigma: f64, step: &mut f64, iters: usize) -> usize {
        let shape = vec![vec![0.0; self.n]; self.m];
        let (mut g, mut g2) = (shape.clone(), shape.clone());
        let (mut zh, mut zn, mut tmp) = (shape.clone(), shape.clone(), shape);
        for it in 0..iters {
            self.smooth_utilities(z, sigma, &mut g);
            let (mut dz, mut dg);
            loop {
                axpy(z, *step, &g, &mut tmp);
                self.project(&tmp, &mut zh);
                self.smooth_utilities(&zh, sigma, &mut g2);
                dz = dist(&zh, z);
                dg = dist(&g2, &g);
                if *step * dg <= 0.9 * dz || *step < 1e-7 {
                    break;
                }
                *step *= 0.5;
            }
            axpy(z, *step, &g2, &mut tmp);
            self.project(&tmp, &mut zn);
            let moved = zn
                .iter()
                .flatten()
                .zip(z.iter().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            std::mem::swap(z, &mut zn);
            if moved < 1e-12 {
                return it + 1;
            }
            if *step * dg < 0.5 * dz {
                *step = (*step * 1.2).min(10.0);
            }
        }
        iters
    }

    /// Identifies the structure a polish would impose, so that repeated
    /// structures can be skipped.
    fn structure_key(&self, zd: &[Vec<f64>], snap: f64) -> u64 {
        let snapped = |x: f64| if x < snap { 0u8 } else if x > 1.0 - snap { 1 } else { 2 };
        let z0: Vec<Vec<f64>> =
            zd.iter().map(|r| r.iter().map(|&x| match snapped(x) { 0 => 0.0, 1 => 1.0, _ => x }).collect()).collect();
        let mut hasher = DefaultHasher::new();
        for r in zd {
            for &x in r {
                snapped(x).hash(&mut hasher);
            }
        }
        if let Some(f) = self.fills(&z0, snap) {
            f.students.hash(&mut hasher);
            f.members.hash(&mut hasher);
        }
        hasher.finish()
    }

    fn natural_residual(&self, z: &[Vec<f64>], sigma: f64) -> f64 {
        let h = 1e-3;
        let mut g = vec![vec![0.0; self.n]; self.m];
        self.smooth_utilities(z, sigma, &mut g);
        let mut tmp = g.clone();
        axpy(z, h, &g, &mut tmp);
        let mut out = g;
        self.project(&tmp, &mut out);
        dist(&out, z) / h
    }

    fn fills(&self, z: &[Vec<f64>], snap: f64) -> Option<Fills> {
        let mut col = vec![0.0; self.m];
        let students = (0..self.n)
            .map(|i| {
                self.column(z, i, &mut col);
                fill(&col, &self.instance.students[i].prefs, 1.0, snap)
            })
            .collect();
        let mut members = Vec::with_capacity(self.m);
        for (h, school) in self.instance.schools.iter().enumerate() {
            let mut fs = Vec::with_capacity(school.committee.len());
            for (k, member) in school.committee.iter().enumerate() {
                let f = fill(&z[h], member.ranking.order(), self.alpha[h][k], snap);
                f.rank?;
                fs.push(f);
            }
            members.push(fs);
        }
        Some(Fills { students, members })
    }

    /// Exact equilibrium with the structure suggested by `zd`, found by
    /// linear programs with the utilities linearised around the previous
    /// solution.
    fn polish(&self, zd: &[Vec<f64>], snap: f64, sigma: f64) -> Option<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, Fills)> {
        let (n, m) = (self.n, self.m);
        let snapped = |x: f64| if x < snap { 0.0 } else if x > 1.0 - snap { 1.0 } else { x };
        let z0: Vec<Vec<f64>> = zd.iter().map(|r| r.iter().map(|&x| snapped(x)).collect()).collect();
        let mut fills = self.fills(&z0, snap)?;
        // demand equals allocation at equilibrium, so no student is
        // over-assigned and every completed fill is exact
        for f in &mut fills.students {
            f.tight = f.rank.is_some();
        }

        // variable layout: z, then free rank prices, then one threshold per
        // school, then deviations
        let mut bounds: Vec<(f64, f64)> = Vec::new();
        let mut zv = vec![vec![None; n]; m];
        for h in 0..m {
            for &i in &self.allowed[h] {
                zv[h][i] = Some(bounds.len());
                let b = match z0[h][i] {
                    x if x == 0.0 => (0.0, 0.0),
                    x if x == 1.0 => (1.0, 1.0),
                    _ => (0.0, 1.0),
                };
                bounds.push(b);
            }
        }
        let zterm = |h: SchoolId, i: StudentId| zv[h][i].map(|v| (v, 1.0));
        let mut eqs: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        let mut les: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        let mut ges: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        let mut start: Vec<f64> = Vec::new();

        // student prices as affine expressions
        let mut qx = vec![vec![Affine::default(); m]; n];
        let mut s_vars = vec![None; n];
        let mut col = vec![0.0; m];
        let mut smooth = vec![0.0; m];
        for (i, f) in fills.students.iter().enumerate() {
            let all: Vec<(usize, f64)> = (0..m).filter_map(|h| zterm(h, i)).collect();
            les.push((all, 1.0));
            let above: Vec<(usize, f64)> = f.above.iter().filter_map(|&h| zterm(h, i)).collect();
            les.push((above.clone(), 1.0));
            let mut cum = Vec::new();
            for &h in &f.above {
                cum.extend(zterm(h, i).map(|(v, _)| (v, -self.eps)));
                qx[i][h] = Affine { c: 1.0, terms: cum.clone() };
            }
            if let Some(r) = f.rank {
                let mut through = above;
                through.extend(zterm(r, i));
                if f.tight {
                    eqs.push((through, 1.0));
                    let v = bounds.len();
                    bounds.push((0.0, 1.0 - self.eps));
                    self.column(zd, i, &mut col);
                    smooth_prices(&col, &self.instance.students[i].prefs, 1.0, self.eps, 0.0, sigma, &mut smooth);
                    start.push(smooth[r].clamp(0.0, 1.0 - self.eps));
                    s_vars[i] = Some(v);
                    qx[i][r] = Affine { c: 0.0, terms: vec![(v, 1.0)] };
                } else {
                    ges.push((through, 1.0));
                }
            }
        }
        let s_start = start.clone();

        // total committee price of each student at each school
        let mut px = vec![vec![Affine::constant(0.0); n]; m];
        let mut t_vars = Vec::with_capacity(m);
        let mut t_start = Vec::new();
        let mut buf = vec![0.0; n];
        for (h, school) in self.instance.schools.iter().enumerate() {
            let mut th = Vec::with_capacity(school.committee.len());
            for (k, f) in fills.members[h].iter().enumerate() {
                let a = self.alpha[h][k];
                let r = f.rank.expect("fills checked");
                let mut own = vec![Affine::constant(self.delta); n];
                let above: Vec<(usize, f64)> = f.above.iter().filter_map(|&i| zterm(h, i)).collect();
                les.push((above.clone(), a));
                let mut cum = Vec::new();
                for &i in &f.above {
                    cum.extend(zterm(h, i).map(|(v, _)| (v, -self.eps / a)));
                    own[i] = Affine { c: 1.0, terms: cum.clone() };
                }
                let mut through = above;
                through.extend(zterm(h, r));
                if f.tight {
                    eqs.push((through, a));
                    let v = bounds.len();
                    bounds.push((self.delta, 1.0 - self.eps));
                    smooth_prices(&zd[h], school.committee[k].ranking.order(), a, self.eps, self.delta, sigma, &mut buf);
                    t_start.push(buf[r].clamp(self.delta, 1.0 - self.eps));
                    own[r] = Affine { c: 0.0, terms: vec![(v, 1.0)] };
                    th.push(Some(v));
                } else {
                    ges.push((through, a));
                    th.push(None);
                }
                for i in 0..n {
                    px[h][i].add(&own[i]);
                }
            }
            t_vars.push(th);
        }
        let lam: Vec<usize> = (0..m)
            .map(|_| {
                bounds.push((0.0, f64::INFINITY));
                bounds.len() - 1
            })
            .collect();
        let dev_base = bounds.len();

        // linearisation point
        let mut x = vec![0.0; dev_base];
        for h in 0..m {
            for &i in &self.allowed[h] {
                let v = zv[h][i].expect("allowed");
                x[v] = if bounds[v].0 == bounds[v].1 { bounds[v].0 } else { zd[h][i] };
            }
        }
        let mut si = s_start.iter();
        for v in s_vars.iter().flatten() {
            x[*v] = *si.next().expect("one start per variable");
        }
        let mut ti = t_start.iter();
        for v in t_vars.iter().flatten().flatten() {
            x[*v] = *ti.next().expect("one start per variable");
        }

        // sum of violations of the exact utility comparisons at a point
        let violation = |x: &[f64]| -> f64 {
            let mut total = 0.0;
            for h in 0..m {
                for &i in &self.allowed[h] {
                    let d = qx[i][h].eval(x) * px[h][i].eval(x) - x[lam[h]];
                    let v = zv[h][i].expect("allowed");
                    total += match bounds[v] {
                        (lo, _) if lo == 1.0 => (-d).max(0.0),
                        (_, hi) if hi == 0.0 => d.max(0.0),
                        _ => d.abs(),
                    };
                }
            }
            total
        };
        let mut merit = f64::INFINITY;
        let mut radius = 1.0;
        let mut stalls = 0;
        for _ in 0..POLISH_ROUNDS {
            let mut lp = Lp::minimize();
            for (v, &(lo, hi)) in bounds.iter().enumerate() {
                let cost = if lam.contains(&v) { 1e-6 } else { 0.0 };
                if merit.is_finite() && lo < hi {
                    lp.var(cost, lo.max(x[v] - radius), hi.min(x[v] + radius));
                } else {
                    lp.var(cost, lo, hi);
                }
            }
            for (terms, rhs) in &eqs {
                lp.eq(terms, *rhs);
            }
            for (terms, rhs) in &les {
                lp.le(terms, *rhs);
            }
            for (terms, rhs) in &ges {
                lp.ge(terms, *rhs);
            }
            for h in 0..m {
                let row: Vec<(usize, f64)> = self.allowed[h].iter().filter_map(|&i| zterm(h, i)).collect();
                lp.eq(&row, self.caps[h]);
                for &i in &self.allowed[h] {
                    let (q, p) = (&qx[i][h], &px[h][i]);
                    let (q0, p0) = (q.eval(&x), p.eval(&x));
                    // u ≈ q0·P + p0·Q − q0·p0, compared with the threshold
                    let mut terms: Vec<(usize, f64)> = p.terms.iter().map(|&(v, a)| (v, a * q0)).collect();
                    terms.extend(q.terms.iter().map(|&(v, a)| (v, a * p0)));
                    terms.push((lam[h], -1.0));
                    let rhs = -(q0 * p.c + p0 * q.c - q0 * p0);
                    let v = zv[h][i].expect("allowed");
                    // elastic so that a poor linearisation point stays feasible
                    terms.push((lp.var(ELASTIC, 0.0, f64::INFINITY), 1.0));
                    terms.push((lp.var(ELASTIC, 0.0, f64::INFINITY), -1.0));
                    match bounds[v] {
                        (lo, _) if lo == 1.0 => lp.ge(&terms, rhs),
                        (_, hi) if hi == 0.0 => lp.le(&terms, rhs),
                        _ => lp.eq(&terms, rhs),
                    }
                    let d = lp.var(1.0, 0.0, f64::INFINITY);
                    lp.le(&[(v, 1.0), (d, -1.0)], zd[h][i]);
                    lp.le(&[(v, -1.0), (d, -1.0)], -zd[h][i]);
                }
            }
            let sol = lp.solve()?;
            let cand = &sol[..dev_base];
            let m_new = violation(cand);
            let moved = cand.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if m_new > 0.99 * merit {
                stalls += 1;
            } else {
                stalls = 0;
            }
            if stalls >= 4 && merit > 1e-9 {
                break;
            }
            if m_new < merit || m_new <= 1e-12 {
                x.copy_from_slice(cand);
                merit = m_new;
                if moved < 1e-12 || (merit <= 1e-12 && moved < 1e-9) {
                    break;
                }
                if moved >= 0.5 * radius {
                    radius = (radius * 2.0).min(1.0);
                }
            } else {
                radius = 0.25 * moved.min(radius);
                if radius < 1e-12 {
                    break;
                }
            }
        }
        let z: Vec<Vec<f64>> = (0..m)
            .map(|h| (0..n).map(|i| zv[h][i].map_or(0.0, |v| x[v].clamp(0.0, 1.0))).collect())
            .collect();
        let s: Vec<f64> = s_vars.iter().map(|v| v.map_or(0.0, |v| x[v].clamp(0.0, 1.0 - self.eps))).collect();
        let t: Vec<Vec<f64>> = t_vars
            .iter()
            .map(|th| th.iter().map(|v| v.map_or(self.delta, |v| x[v].clamp(self.delta, 1.0 - self.eps))).collect())
            .collect();
        Some((z, s, t, fills))
    }

    /// Polishes, then repeatedly frees pairs whose utility comparison fails
    /// and polishes again from the result.
    fn refine(&self, zd: &[Vec<f64>], snap: f64, sigma: f64, used: usize, tol: f64) -> Option<MeoState> {
        let (zp, s, t, fills) = self.polish(zd, snap, sigma)?;
        let mut best = self.state(zp, &s, &t, &fills, used);
        for _ in 0..REPAIRS {
            if best.residual <= tol {
                break;
            }
            let target = self.repaired(&best, snap);
            let Some((zp, s, t, fills)) = self.polish(&target, snap, sigma) else { break };
            let st = self.state(zp, &s, &t, &fills, used);
            if st.residual >= best.residual {
                break;
            }
            best = st;
        }
        Some(best)
    }

    /// Allocation nudged so that pairs at a bound that violate the school's
    /// utility ordering become free.
    fn repaired(&self, st: &MeoState, snap: f64) -> Vec<Vec<f64>> {
        let u = st.utilities();
        let nudge = (2.0 * snap).min(0.25);
        let mut out = st.z.clone();
        for h in 0..self.m {
            let idx = &self.allowed[h];
            let used = idx.iter().filter(|&&i| st.z[h][i] > 1e-9).map(|&i| u[h][i]).fold(f64::INFINITY, f64::min);
            let room = idx.iter().filter(|&&i| st.z[h][i] < 1.0 - 1e-9).map(|&i| u[h][i]).fold(f64::NEG_INFINITY, f64::max);
            for &i in idx {
                if st.z[h][i] <= 1e-9 && u[h][i] > used + 1e-12 {
                    out[h][i] = nudge;
                } else if st.z[h][i] >= 1.0 - 1e-9 && u[h][i] < room - 1e-12 {
                    out[h][i] = 1.0 - nudge;
                }
            }
        }
        out
    }

    fn state(&self, z: Vec<Vec<f64>>, s: &[f64], t: &[Vec<f64>], fills: &Fills, iterations: usize) -> MeoState {
        let mut col = vec![0.0; self.m];
        let mut q = Vec::with_capacity(self.n);
        let mut x = Vec::with_capacity(self.n);
        let mut x_outside = Vec::with_capacity(self.n);
        for (i, f) in fills.students.iter().enumerate() {
            self.column(&z, i, &mut col);
            let qi = fill_prices(&col, f, 1.0, self.eps, 0.0, s[i]);
            let (xi, xo) = agent::random_demand(&qi, &self.instance.students[i].prefs, self.eps);
            q.push(qi);
            x.push(xi);
            x_outside.push(xo);
        }
        let mut p = Vec::with_capacity(self.m);
        let mut y = Vec::with_capacity(self.m);
        let mut y_outside = Vec::with_capacity(self.m);
        for (h, school) in self.instance.schools.iter().enumerate() {
            let (mut ph, mut yh, mut yo) = (Vec::new(), Vec::new(), Vec::new());
            for (k, f) in fills.members[h].iter().enumerate() {
                let pk = fill_prices(&z[h], f, self.alpha[h][k], self.eps, self.delta, t[h][k]);
                let (yk, o) = agent::random_demand(&pk, school.committee[k].ranking.order(), self.eps);
                ph.push(pk);
                yh.push(yk);
                yo.push(o);
            }
            p.push(ph);
            y.push(yh);
            y_outside.push(yo);
        }
        let residual = residual(self.instance, &q, &p, &z, self.eps, self.delta);
        MeoState { q, p, x, x_outside, y, y_outside, z, eps: self.eps, delta: self.delta, residual, iterations }
    }

    fn starts(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Vec<f64>>> {
        let uniform: Vec<Vec<f64>> = (0..self.m)
            .map(|h| {
                let share = self.caps[h] / self.allowed[h].len().max(1) as f64;
                let mut row = vec![0.0; self.n];
                for &i in &self.allowed[h] {
                    row[i] = share;
                }
                row
            })
            .collect();
        let mut out = vec![uniform];
        while out.len() < count {
            let raw: Vec<Vec<f64>> =
                (0..self.m).map(|_| (0..self.n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect()).collect();
            let scaled: Vec<Vec<f64>> = raw
                .iter()
                .enumerate()
                .map(|(h, r)| {
                    let s: f64 = self.allowed[h].iter().map(|&i| r[i]).sum();
                    r.iter().map(|v| v * self.caps[h] / s.max(1e-300)).collect()
                })
                .collect();
            let mut w = vec![vec![0.0; self.n]; self.m];
            self.project(&scaled, &mut w);
            out.push(w);
        }
        out.truncate(count);
        out
    }
}

fn axpy(z: &[Vec<f64>], step: f64, g: &[Vec<f64>], out: &mut [Vec<f64>]) {
    for ((o, zr), gr) in out.iter_mut().zip(z).zip(g) {
        for ((o, a), b) in o.iter_mut().zip(zr).zip(gr) {
            *o = a + step * b;
        }
    }
}

fn dist(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Computes a matching equilibrium. The instance should carry at least as
/// many students as seats (see [`Instance::pad_with_dummies`]).
pub fn meo_iterate(instance: &Instance, params: &MeoParams) -> Result<MeoState, MeoError> {
    let (eps0, delta0) = choose_eps_delta(instance);
    let eps = params.eps.unwrap_or(eps0);
    let delta = params.delta.unwrap_or(delta0);
    let n = instance.num_students();
    let m = instance.num_schools();
    let allowed: Vec<Vec<StudentId>> =
        (0..m).map(|h| (0..n).filter(|&i| instance.students[i].prefs.contains(&h)).collect()).collect();
    let prob = Problem {
        instance,
        n,
        m,
        caps: effective_capacities(instance).into_iter().map(|c| c as f64).collect(),
        allowed,
        alpha: instance
            .schools
            .iter()
            .map(|s| s.committee.iter().map(|k| k.alpha.to_f64().unwrap_or(0.0)).collect())
            .collect(),
        eps,
        delta,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<MeoState> = None;
    let mut used = 0;
    let mut tried = HashSet::new();
    for (r, start) in prob.starts(params.restarts + 1, &mut rng).into_iter().enumerate() {
        let mut z = start;
        let mut step = params.damping / f64::powi(2.0, r as i32);
        for &sigma in &SIGMAS {
            let mut stage = 0;
            while stage < STAGE_ITERS && used < params.max_iter {
                let chunk = CHUNK_ITERS.min(params.max_iter - used);
                let done = prob.dynamics(&mut z, sigma, &mut step, chunk);
                used += done;
                stage += done;
                for &snap in &SNAPS {
                    if !tried.insert(prob.structure_key(&z, snap)) {
                        continue;
                    }
                    let Some(st) = prob.refine(&z, snap, sigma, used, params.tol) else { continue };
                    if st.residual <= params.tol {
                        return Ok(st);
                    }
                    if best.as_ref().map_or(true, |b| st.residual < b.residual) {
                        best = Some(st);
                    }
                }
                if done < chunk || prob.natural_residual(&z, sigma) < SETTLED {
                    break;
                }
            }
        }
    }
    let residual = best.as_ref().map_or(f64::INFINITY, |b| b.residual);
    Err(MeoError::NonConvergence { best: best.map(Box::new), residual, iterations: used })
}

/// Per-school support thresholds read off an equilibrium.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaReadouts {
    /// Smallest utility over students with positive allocation.
    pub raw: Vec<f64>,
    /// `⌊raw / (1 - eps)^2⌋`.
    pub betas: Vec<Rational>,
}

pub fn extract_betas(state: &MeoState, instance: &Instance, tol: f64) -> Result<BetaReadouts, MeoError> {
    let u = state.utilities();
    let mut raw = Vec::with_capacity(u.len());
    let mut betas = Vec::with_capacity(u.len());
    let scale = (1.0 - state.eps) * (1.0 - state.eps);
    for (h, school) in instance.schools.iter().enumerate() {
        let lo = (0..u[h].len())
            .filter(|&i| state.z[h][i] > 1e-9)
            .map(|i| u[h][i])
            .fold(f64::INFINITY, f64::min);
        let lo = if lo.is_finite() { lo } else { 0.0 };
        let bound = to_f64(&school.alpha_sum()) / school.capacity.max(1) as f64
            + state.delta * school.committee.len() as f64;
        if lo > bound + tol {
            return Err(MeoError::Inconsistent(format!("utility level {lo} at {} exceeds {bound}", school.label)));
        }
        let beta = ((lo / scale + 1e-9).floor().max(0.0) as usize).min(school.beta_bound());
        raw.push(lo);
        betas.push(int(beta));
    }
    Ok(BetaReadouts { raw, betas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{FractionalAssignment, Member, Ranking, School, Student};
    use crate::verify::{check_frac_stable, FRAC_TOL};
    use crate::num::rat;
    use approx::assert_abs_diff_eq;

    #[test]
    fn eps_delta_examples() {
        let mut inst = fixtures::aligned_market();
        for s in &mut inst.schools {
            s.committee.truncate(1);
        }
        assert_eq!(choose_eps_delta(&inst), (1.0 / 32.0, 0.1));
        let member = inst.schools[0].committee[0].clone();
        inst.schools[0].committee = vec![member; 5];
        let (eps, delta) = choose_eps_delta(&inst);
        assert_abs_diff_eq!(delta, 0.02, epsilon = 1e-15);
        let e = 1.0 - eps;
        assert!(5.0 / (e * e) - 5.0 <= 0.1);
        let e2 = 1.0 - 2.0 * eps;
        assert!(5.0 / (e2 * e2) - 5.0 > 0.1);
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(school_allocation(&[0.9, 0.5, 0.5], 2), vec![1.0, 0.5, 0.5]);
        assert_eq!(school_allocation(&[0.9, 0.7, 0.5], 2), vec![1.0, 1.0, 0.0]);
        assert_eq!(school_allocation(&[0.4; 5], 2), vec![0.4; 5]);
    }

    #[test]
    fn one_school_responsive_choice() {
        let order = vec![3, 1, 4, 0, 2];
        let inst = Instance {
            students: (0..5).map(|i| Student { label: format!("s{i}"), prefs: vec![0], is_dummy: false }).collect(),
            schools: vec![School {
                label: "h".into(),
                capacity: 3,
                committee: vec![Member { label: "k".into(), ranking: Ranking::new(order).unwrap(), alpha: rat(3, 1) }],
            }],
        };
        let st = meo_iterate(&inst, &MeoParams::default()).unwrap();
        assert_abs_diff_eq!(st.z[0].iter().sum::<f64>(), 3.0, epsilon = 1e-7);
        let b = extract_betas(&st, &inst, 1e-7).unwrap();
        assert!(b.betas[0] <= int(1));
        let z = FractionalAssignment { rows: st.z.clone() };
        assert!(check_frac_stable(&inst, &z, &b.betas, FRAC_TOL).ok);
    }

    #[test]
    fn aligned_market_is_stable_and_consistent() {
        let inst = fixtures::aligned_market();
        let st = meo_iterate(&inst, &MeoParams::default()).unwrap();
        assert!(st.residual <= 1e-7);
        assert!(st.demand_gap() <= 1e-6);
        let b = extract_betas(&st, &inst, 1e-7).unwrap();
        let z = FractionalAssignment { rows: st.z.clone() };
        assert!(check_frac_stable(&inst, &z, &b.betas, FRAC_TOL).ok);
    }

    #[test]
    fn same_seed_same_state() {
        let inst = fixtures::aligned_market();
        let p = MeoParams { seed: 5, ..Default::default() };
        assert_eq!(meo_iterate(&inst, &p).unwrap(), meo_iterate(&inst, &p).unwrap());
    }
}
