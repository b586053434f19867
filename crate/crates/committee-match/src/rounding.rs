//! Iterative rounding of fractional sets and matchings in exact arithmetic.
//!
//! Each round moves the current point to a vertex of the remaining LP, fixes
//! the coordinates that became integral, and deletes constraints that cover
//! few enough remaining variables. Vertices are found by purification: from a
//! feasible point, step along a null direction of the tight constraints until
//! another constraint binds, which raises the tight rank by at least one.

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::model::{FractionalAssignment, Instance, Matching, School, SchoolId, StudentId};
use crate::num::{ceil_to_usize, int, Rational};
use crate::support::upper_sets;

#[derive(Debug, Error, PartialEq)]
pub enum RoundingError {
    #[error("starting point violates the system: {0}")]
    Infeasible(String),
    #[error("rounding stalled in round {round} with {remaining} fractional variables and {constraints} live constraints")]
    Stall { round: usize, remaining: usize, constraints: usize },
    #[error("adjusted parameters out of bounds: {0}")]
    BoundViolation(String),
    #[error("input is not a valid fractional object: {0}")]
    BadInput(String),
}

/// `lo ≤ Σ_{vars} x ≤ hi` over variables bounded in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Interval {
    pub vars: Vec<usize>,
    pub lo: Rational,
    pub hi: Rational,
}

/// Box-bounded 0/1-coefficient system.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LpSystem {
    pub num_vars: usize,
    pub constraints: Vec<Interval>,
}

impl LpSystem {
    fn check(&self, x: &[Rational]) -> Result<(), RoundingError> {
        if x.len() != self.num_vars {
            return Err(RoundingError::Infeasible(format!("{} values for {} variables", x.len(), self.num_vars)));
        }
        if let Some(j) = x.iter().position(|v| v.is_negative() || *v > Rational::one()) {
            return Err(RoundingError::Infeasible(format!("variable {j} = {} outside [0, 1]", x[j])));
        }
        for (c, con) in self.constraints.iter().enumerate() {
            let s = sum_over(x, &con.vars);
            if s < con.lo || s > con.hi {
                return Err(RoundingError::Infeasible(format!("constraint {c}: {s} not in [{}, {}]", con.lo, con.hi)));
            }
        }
        Ok(())
    }
}

fn sum_over(x: &[Rational], vars: &[usize]) -> Rational {
    vars.iter().fold(Rational::zero(), |acc, &j| acc + &x[j])
}

/// A vertex of `system` reached from the feasible point `start`. Integral
/// coordinates of `start` stay put, and a vertex input is returned unchanged.
pub fn lp_vertex(system: &LpSystem, start: &[Rational]) -> Result<Vec<Rational>, RoundingError> {
    system.check(start)?;
    let r = system.num_vars;
    let mut x = start.to_vec();
    loop {
        let mut tight: Vec<Vec<usize>> = Vec::new();
        for j in 0..r {
            if x[j].is_zero() || x[j].is_one() {
                tight.push(vec![j]);
            }
        }
        let sums: Vec<Rational> = system.constraints.iter().map(|c| sum_over(&x, &c.vars)).collect();
        for (c, s) in system.constraints.iter().zip(&sums) {
            if !c.vars.is_empty() && (*s == c.lo || *s == c.hi) {
                tight.push(c.vars.clone());
            }
        }
        let Some(d) = null_direction(&tight, r) else { return Ok(x) };
        // longest step keeping every bound and loose constraint satisfied
        let mut step: Option<Rational> = None;
        let mut shrink = |t: Rational| {
            if step.as_ref().map_or(true, |s| t < *s) {
                step = Some(t);
            }
        };
        for j in 0..r {
            if d[j].is_positive() {
                shrink((Rational::one() - &x[j]) / &d[j]);
            } else if d[j].is_negative() {
                shrink(-&x[j] / &d[j]);
            }
        }
        for (c, s) in system.constraints.iter().zip(&sums) {
            let ds = sum_over(&d, &c.vars);
            if ds.is_positive() {
                shrink((&c.hi - s) / &ds);
            } else if ds.is_negative() {
                shrink((&c.lo - s) / &ds);
            }
        }
        let t = step.expect("a nonzero direction meets a variable bound");
        for j in 0..r {
            x[j] += &t * &d[j];
        }
    }
}

/// A nonzero vector orthogonal to every row (given as 0/1 supports), taking
/// the first free column of the reduced row echelon form; `None` when the
/// rows have full column rank.
fn null_direction(rows: &[Vec<usize>], r: usize) -> Option<Vec<Rational>> {
    let mut m: Vec<Vec<Rational>> = rows
        .iter()
        .map(|s| {
            let mut row = vec![Rational::zero(); r];
            for &j in s {
                row[j] = Rational::one();
            }
            row
        })
        .collect();
    let mut pivots: Vec<usize> = Vec::new();
    let mut top = 0;
    for col in 0..r {
        let Some(p) = (top..m.len()).find(|&i| !m[i][col].is_zero()) else { continue };
        m.swap(top, p);
        let inv = m[top][col].recip();
        for v in m[top].iter_mut() {
            *v *= &inv;
        }
        for i in 0..m.len() {
            if i != top && !m[i][col].is_zero() {
                let f = m[i][col].clone();
                for j in col..r {
                    let delta = &f * &m[top][j];
                    m[i][j] -= delta;
                }
            }
        }
        pivots.push(col);
        top += 1;
        if top == m.len() {
            break;
        }
    }
    let free = (0..r).find(|c| !pivots.contains(c))?;
    let mut d = vec![Rational::zero(); r];
    d[free] = Rational::one();
    for (row, &p) in pivots.iter().enumerate() {
        d[p] = -m[row][free].clone();
    }
    Some(d)
}

/// Integral rows with the parameters they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundingResult {
    /// `rows[h][i]`: student `i` ends up at school `h`.
    pub rows: Vec<Vec<bool>>,
    /// Per school, per member: `Σ_{i ∈ U_k(z)} z'_{h,i}`.
    pub alpha_prime: Vec<Vec<Rational>>,
    /// Per school: number of students placed.
    pub c_prime: Vec<usize>,
    /// One line per fixing or deletion step.
    pub log: Vec<String>,
}

impl RoundingResult {
    /// The rounded rows as a matching. Panics if a student sits in two rows,
    /// which the student constraints rule out.
    pub fn matching(&self) -> Matching {
        let n = self.rows.first().map_or(0, |r| r.len());
        let mut assignment = vec![None; n];
        for (h, row) in self.rows.iter().enumerate() {
            for (i, &b) in row.iter().enumerate() {
                if b {
                    assert!(assignment[i].is_none(), "student {i} rounded into two schools");
                    assignment[i] = Some(h);
                }
            }
        }
        Matching::new(assignment, self.rows.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Capacity(SchoolId),
    Committee(SchoolId, usize),
    Student(StudentId),
}

struct Cons {
    kind: Kind,
    /// Variables as (school, student) pairs.
    vars: Vec<(SchoolId, StudentId)>,
    lo: Rational,
    hi: Rational,
    /// Delete once at most this many variables are still fractional.
    threshold: Option<usize>,
}

/// Runs the fix-and-delete loop on `z`, whose fractional entries are the
/// variables. Integral entries are never touched.
fn iterate(z: &[Vec<Rational>], mut cons: Vec<Cons>) -> Result<(Vec<Vec<bool>>, Vec<String>), RoundingError> {
    let mut val: Vec<Vec<Rational>> = z.to_vec();
    let is_frac = |v: &Rational| v.is_positive() && *v < Rational::one();
    let mut log = Vec::new();
    let mut round = 0;
    loop {
        let live: Vec<(SchoolId, StudentId)> = (0..val.len())
            .flat_map(|h| (0..val[h].len()).map(move |i| (h, i)))
            .filter(|&(h, i)| is_frac(&val[h][i]))
            .collect();
        cons.retain(|c| c.vars.iter().any(|&(h, i)| is_frac(&val[h][i])));
        if live.is_empty() {
            break;
        }
        let mut index = vec![vec![usize::MAX; val[0].len()]; val.len()];
        for (j, &(h, i)) in live.iter().enumerate() {
            index[h][i] = j;
        }
        let system = LpSystem {
            num_vars: live.len(),
            constraints: cons
                .iter()
                .map(|c| {
                    let fixed = c
                        .vars
                        .iter()
                        .filter(|&&(h, i)| index[h][i] == usize::MAX)
                        .fold(Rational::zero(), |acc, &(h, i)| acc + &val[h][i]);
                    Interval {
                        vars: c.vars.iter().map(|&(h, i)| index[h][i]).filter(|&j| j != usize::MAX).collect(),
                        lo: &c.lo - &fixed,
                        hi: &c.hi - &fixed,
                    }
                })
                .collect(),
        };
        let start: Vec<Rational> = live.iter().map(|&(h, i)| val[h][i].clone()).collect();
        let vertex = lp_vertex(&system, &start)?;
        let (mut zeros, mut ones) = (0, 0);
        for (&(h, i), v) in live.iter().zip(vertex) {
            if v.is_zero() {
                zeros += 1;
            } else if v.is_one() {
                ones += 1;
            }
            val[h][i] = v;
        }
        if zeros + ones > 0 {
            log.push(format!("round {round}: fixed {zeros} zeros and {ones} ones"));
        } else {
            // an all-fractional vertex: drop the constraints that are
            // allowed to go, and only those
            let before = cons.len();
            cons.retain(|c| {
                let remaining = c.vars.iter().filter(|&&(h, i)| is_frac(&val[h][i])).count();
                let keep = c.threshold.map_or(true, |t| remaining > t);
                if !keep {
                    log.push(format!("round {round}: deleted {:?} with {remaining} fractional variables", c.kind));
                }
                keep
            });
            if cons.len() == before {
                return Err(RoundingError::Stall { round, remaining: live.len(), constraints: cons.len() });
            }
        }
        round += 1;
    }
    let rows = val.iter().map(|r| r.iter().map(|v| v.is_one()).collect()).collect();
    Ok((rows, log))
}

fn check_row(z: &[Rational], what: &str) -> Result<(), RoundingError> {
    match z.iter().position(|v| v.is_negative() || *v > Rational::one()) {
        Some(i) => Err(RoundingError::BadInput(format!("{what}: entry {i} = {} outside [0, 1]", z[i]))),
        None => Ok(()),
    }
}

/// Rounds an acceptable fractional set for one school. Committee intervals
/// sit on the strong upper sets; a committee constraint is dropped once at
/// most `2⌈β⌉` of its variables are fractional. If that stalls or misses the
/// bound, one retry uses `2⌈β⌉ + 1`.
pub fn round_single(z: &[Rational], school: &School, beta: &Rational) -> Result<RoundingResult, RoundingError> {
    check_row(z, "row")?;
    let total = sum_over(z, &(0..z.len()).collect::<Vec<_>>());
    if total != int(school.capacity) {
        return Err(RoundingError::BadInput(format!("row sums to {total}, capacity is {}", school.capacity)));
    }
    let t = 2 * ceil_to_usize(beta);
    match round_single_with(z, school, beta, t) {
        Ok(r) => Ok(r),
        Err(RoundingError::Stall { .. } | RoundingError::BoundViolation(_)) => {
            let mut r = round_single_with(z, school, beta, t + 1)?;
            r.log.push(format!("retried with deletion threshold {}", t + 1));
            Ok(r)
        }
        Err(e) => Err(e),
    }
}

fn round_single_with(z: &[Rational], school: &School, beta: &Rational, t: usize) -> Result<RoundingResult, RoundingError> {
    let n = z.len();
    let mut cons = vec![Cons {
        kind: Kind::Capacity(0),
        vars: (0..n).map(|i| (0, i)).collect(),
        lo: int(school.capacity),
        hi: int(school.capacity),
        threshold: None,
    }];
    for (k, member) in school.committee.iter().enumerate() {
        let strong = upper_sets(&member.ranking, z, &member.alpha, school.capacity).strong;
        let mass = sum_over(z, &strong);
        cons.push(Cons {
            kind: Kind::Committee(0, k),
            vars: strong.iter().map(|&i| (0, i)).collect(),
            lo: mass.floor(),
            hi: mass.ceil(),
            threshold: Some(t),
        });
    }
    let (rows, log) = iterate(&[z.to_vec()], cons)?;
    let frac = FractionalAssignment { rows: vec![z.to_vec()] };
    let single = Instance { students: Vec::new(), schools: vec![school.clone()] };
    let (alpha_prime, c_prime) = adjusted_params(&frac, &rows, &single);
    let placed = c_prime[0];
    if placed != school.capacity {
        return Err(RoundingError::BoundViolation(format!("placed {placed}, capacity {}", school.capacity)));
    }
    let bound = int(2) * beta;
    for (k, (a, member)) in alpha_prime[0].iter().zip(&school.committee).enumerate() {
        if (a - &member.alpha).abs() > bound {
            return Err(RoundingError::BoundViolation(format!("member {k}: alpha {} -> {a}, allowed {bound}", member.alpha)));
        }
    }
    Ok(RoundingResult { rows, alpha_prime, c_prime, log })
}

/// Rounds a stable fractional matching. Students whose mass is exactly one
/// keep it; every other student takes at most one seat. Capacity constraints
/// are dropped at `2|K_h| + 1` fractional variables and committee
/// constraints, on the weak upper sets, at `2|K_h| + 2`.
pub fn round_matching(z: &FractionalAssignment<Rational>, instance: &Instance) -> Result<RoundingResult, RoundingError> {
    let m = instance.num_schools();
    let n = instance.num_students();
    if z.rows.len() != m || z.rows.iter().any(|r| r.len() != n) {
        return Err(RoundingError::BadInput(format!("expected {m} rows of {n} entries")));
    }
    for (h, row) in z.rows.iter().enumerate() {
        check_row(row, &format!("row {h}"))?;
        let total = sum_over(row, &(0..n).collect::<Vec<_>>());
        if total > int(instance.schools[h].capacity) {
            return Err(RoundingError::BadInput(format!("row {h} sums to {total} above capacity")));
        }
    }
    let mut cons = Vec::new();
    for i in 0..n {
        let mass = z.student_mass(i);
        if mass > Rational::one() {
            return Err(RoundingError::BadInput(format!("student {i} has mass {mass}")));
        }
        let lo = if mass.is_one() { Rational::one() } else { Rational::zero() };
        cons.push(Cons { kind: Kind::Student(i), vars: (0..m).map(|h| (h, i)).collect(), lo, hi: Rational::one(), threshold: None });
    }
    for (h, school) in instance.schools.iter().enumerate() {
        let row = &z.rows[h];
        let size = school.committee.len();
        let cap = sum_over(row, &(0..n).collect::<Vec<_>>());
        cons.push(Cons {
            kind: Kind::Capacity(h),
            vars: (0..n).map(|i| (h, i)).collect(),
            lo: cap.clone(),
            hi: cap,
            threshold: Some(2 * size + 1),
        });
        for (k, member) in school.committee.iter().enumerate() {
            let weak = upper_sets(&member.ranking, row, &member.alpha, school.capacity).weak;
            let mass = sum_over(row, &weak);
            cons.push(Cons {
                kind: Kind::Committee(h, k),
                vars: weak.iter().map(|&i| (h, i)).collect(),
                lo: mass.floor(),
                hi: mass.ceil(),
                threshold: Some(2 * size + 2),
            });
        }
    }
    let (rows, log) = iterate(&z.rows, cons)?;
    let (alpha_prime, c_prime) = adjusted_params(z, &rows, instance);
    for (h, school) in instance.schools.iter().enumerate() {
        let size = school.committee.len();
        if c_prime[h].abs_diff(school.capacity) > 2 * size + 1 {
            return Err(RoundingError::BoundViolation(format!("school {h}: capacity {} -> {}", school.capacity, c_prime[h])));
        }
        let bound = int(2 * size + 2);
        for (k, member) in school.committee.iter().enumerate() {
            if (&alpha_prime[h][k] - &member.alpha).abs() > bound {
                return Err(RoundingError::BoundViolation(format!(
                    "school {h} member {k}: alpha {} -> {}",
                    member.alpha, alpha_prime[h][k]
                )));
            }
        }
    }
    Ok(RoundingResult { rows, alpha_prime, c_prime, log })
}

/// Recomputes `α'_k = Σ_{i ∈ U_k(z_h)} z'_{h,i}` and `c'_h = Σ_i z'_{h,i}`
/// from scratch.
pub fn adjusted_params(
    z: &FractionalAssignment<Rational>,
    rounded: &[Vec<bool>],
    instance: &Instance,
) -> (Vec<Vec<Rational>>, Vec<usize>) {
    let mut alpha = Vec::new();
    let mut cap = Vec::new();
    for (h, school) in instance.schools.iter().enumerate() {
        let row = &z.rows[h];
        alpha.push(
            school
                .committee
                .iter()
                .map(|k| {
                    let weak = upper_sets(&k.ranking, row, &k.alpha, school.capacity).weak;
                    int(weak.iter().filter(|&&i| rounded[h][i]).count())
                })
                .collect(),
        );
        cap.push(rounded[h].iter().filter(|&&b| b).count());
    }
    (alpha, cap)
}
