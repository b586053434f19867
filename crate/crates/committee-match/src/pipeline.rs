//! End-to-end solves: equilibrium, snap to rationals, exact rounding, and an
//! independent certificate under the adjusted parameters.

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::leo::{self, LeoError, SolverParams};
use crate::meo::{self, MeoError, MeoParams};
use crate::model::{FractionalAssignment, Instance, Matching, School, SchoolId, StudentId};
use crate::num::{dyadic, int, simplest_near, solve_linear, to_f64, Rational};
use crate::rounding::{self, RoundingError};
use crate::verify::{check_acceptable, check_frac_acceptable, check_frac_stable, check_stable, Verdict, Violation};

/// Largest denominator tried before falling back to the `2^-40` grid.
const MAX_DEN: u64 = 1 << 20;
/// Distance within which a float is replaced by a simple fraction.
const SNAP_TOL: f64 = 1e-9;
/// Student masses this close to one are treated as one.
const FULL_TOL: f64 = 1e-6;
/// Entries and cumulative fills this close to a boundary snap onto it.
const EDGE_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid instance: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("no school labelled {0}")]
    UnknownSchool(String),
    #[error(transparent)]
    Leo(#[from] LeoError),
    #[error(transparent)]
    Meo(#[from] MeoError),
    #[error("fractional solution failed its check after snapping: {0}")]
    Snap(String),
    #[error(transparent)]
    Rounding(#[from] RoundingError),
}

impl PipelineError {
    /// The solver ran out of iterations, as opposed to a wrong answer.
    pub fn is_non_convergence(&self) -> bool {
        matches!(self, PipelineError::Leo(LeoError::NonConvergence { .. }) | PipelineError::Meo(MeoError::NonConvergence { .. }))
    }
}

/// Solver-side numbers reported next to every answer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub residual: f64,
    pub iterations: usize,
    pub eps: f64,
    pub delta: Option<f64>,
    /// Per school, the price or utility level the threshold was read from.
    pub beta_raw: Vec<f64>,
    /// Largest gap between student demand and allocation.
    pub demand_gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingleOutcome {
    pub school: SchoolId,
    pub applicants: Vec<StudentId>,
    pub selected: Vec<StudentId>,
    pub beta: Rational,
    pub alpha_prime: Vec<Rational>,
    pub certificate: Verdict,
    pub diagnostics: Diagnostics,
    pub rounding_log: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchOutcome {
    /// The instance the matching lives in, padded with dummy students.
    pub instance: Instance,
    pub matching: Matching,
    pub betas: Vec<Rational>,
    pub alpha_prime: Vec<Vec<Rational>>,
    pub c_prime: Vec<usize>,
    pub certificate: Verdict,
    pub diagnostics: Diagnostics,
    pub rounding_log: Vec<String>,
}

fn validated(instance: &Instance) -> Result<(), PipelineError> {
    let v = instance.validate();
    if v.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Invalid(v.into_iter().map(|v| v.0).collect()))
    }
}

pub fn school_index(instance: &Instance, label: &str) -> Result<SchoolId, PipelineError> {
    instance
        .schools
        .iter()
        .position(|s| s.label == label)
        .ok_or_else(|| PipelineError::UnknownSchool(label.into()))
}

/// Exact stand-in for a float in `[0, 1]`: the simplest nearby fraction,
/// else the nearest multiple of `2^-40`.
pub fn snap(x: f64) -> Rational {
    let x = x.clamp(0.0, 1.0);
    let r = simplest_near(x, SNAP_TOL, MAX_DEN).unwrap_or_else(|| dyadic(x, 40));
    r.clamp(Rational::zero(), Rational::one())
}

/// Certificate for a single-school answer: acceptability under the
/// adjusted ranks, plus the guaranteed bounds on β and on the rank shifts.
pub fn certify_single(
    school: &School,
    applicants: &[StudentId],
    selected: &[StudentId],
    alpha_prime: &[Rational],
    beta: &Rational,
) -> Verdict {
    let mut adjusted = school.clone();
    for (k, a) in adjusted.committee.iter_mut().zip(alpha_prime) {
        k.alpha = a.clone();
    }
    let mut v = check_acceptable(&adjusted, applicants, selected, beta);
    let mut extra = Vec::new();
    if applicants.len() > school.capacity {
        let cap = int(school.beta_bound());
        if *beta > cap {
            extra.push(bound_violation("threshold bound", school.label.clone(), beta, cap));
        }
        let allowed = int(2) * beta;
        for (k, a) in school.committee.iter().zip(alpha_prime) {
            let shift = (a - &k.alpha).abs();
            if shift > allowed {
                extra.push(bound_violation("rank shift bound", k.label.clone(), shift, &allowed));
            }
        }
    }
    v = v.merge(Verdict { ok: extra.is_empty(), violations: extra });
    v
}

fn bound_violation(condition: &str, entity: String, measured: impl ToString, bound: impl ToString) -> Violation {
    Violation { condition: condition.into(), entity, measured: measured.to_string(), bound: format!("<= {}", bound.to_string()) }
}

/// Certificate for a matching: stability under adjusted capacities and
/// ranks, plus the guaranteed bounds on the adjustments and thresholds.
pub fn certify_match(
    instance: &Instance,
    matching: &Matching,
    betas: &[Rational],
    alpha_prime: &[Vec<Rational>],
    c_prime: &[usize],
) -> Verdict {
    let adjusted = instance.with_adjusted(alpha_prime, c_prime);
    let v = check_stable(&adjusted, matching, betas);
    let mut extra = Vec::new();
    for (h, school) in instance.schools.iter().enumerate() {
        let size = school.committee.len();
        let cap = int(school.beta_bound());
        if betas[h] > cap {
            extra.push(bound_violation("threshold bound", school.label.clone(), &betas[h], cap));
        }
        let shift = c_prime[h].abs_diff(school.capacity);
        if shift > 2 * size + 1 {
            extra.push(bound_violation("capacity shift bound", school.label.clone(), shift, 2 * size + 1));
        }
        for (k, a) in school.committee.iter().zip(&alpha_prime[h]) {
            let shift = (a - &k.alpha).abs();
            if shift > int(2 * size + 2) {
                extra.push(bound_violation("rank shift bound", k.label.clone(), shift, 2 * size + 2));
            }
        }
    }
    v.merge(Verdict { ok: extra.is_empty(), violations: extra })
}

/// Acceptable choice set for one school over a pool of applicants (all
/// students when `applicants` is `None`).
pub fn solve_single(
    instance: &Instance,
    h: SchoolId,
    applicants: Option<&[StudentId]>,
    params: &SolverParams,
) -> Result<SingleOutcome, PipelineError> {
    validated(instance)?;
    let all: Vec<StudentId> = (0..instance.num_students()).collect();
    let pool = applicants.unwrap_or(&all);
    let (sub, back) = instance.restrict(h, pool);
    let school = &sub.schools[0];
    let applicants = back.clone();
    if back.len() <= school.capacity {
        // everyone gets in; nobody is rejected, so β = 0 works
        let alpha_prime: Vec<Rational> = school.committee.iter().map(|k| k.alpha.clone()).collect();
        let beta = Rational::zero();
        let certificate = certify_single(&instance.schools[h], &applicants, &applicants, &alpha_prime, &beta);
        return Ok(SingleOutcome {
            school: h,
            selected: applicants.clone(),
            applicants,
            beta,
            alpha_prime,
            certificate,
            diagnostics: Diagnostics::default(),
            rounding_log: Vec::new(),
        });
    }
    let state = leo::leo_iterate(school, params)?;
    let readout = leo::extract_beta(&state, school)?;
    let z = snap_exact(&sub, &[state.z.clone()], false)?.rows.remove(0);
    let frac = check_frac_acceptable(school, &z, &readout.beta, 0.0);
    if !frac.ok {
        return Err(PipelineError::Snap(describe(&frac)));
    }
    let rounded = rounding::round_single(&z, school, &readout.beta)?;
    let selected: Vec<StudentId> = (0..back.len()).filter(|&i| rounded.rows[0][i]).map(|i| back[i]).collect();
    let alpha_prime = rounded.alpha_prime[0].clone();
    let certificate = certify_single(&instance.schools[h], &applicants, &selected, &alpha_prime, &readout.beta);
    Ok(SingleOutcome {
        school: h,
        applicants,
        selected,
        beta: readout.beta,
        alpha_prime,
        certificate,
        diagnostics: Diagnostics {
            residual: state.residual,
            iterations: state.iterations,
            eps: state.eps,
            delta: None,
            beta_raw: vec![readout.raw],
            demand_gap: 0.0,
        },
        rounding_log: rounded.log,
    })
}

fn describe(v: &Verdict) -> String {
    v.violations
        .iter()
        .take(3)
        .map(|x| format!("{} at {}: {} vs {}", x.condition, x.entity, x.measured, x.bound))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Exact version of a floating allocation. Entries within `EDGE_TOL` of 0
/// or 1 become 0 or 1, the rest become nearby simple fractions. Then a
/// minimum-norm exact correction restores the equalities the float solution
/// meets within tolerance: row sums, full student masses (in a market), and
/// member fills that end exactly at their rank student.
pub fn snap_exact(instance: &Instance, z: &[Vec<f64>], market: bool) -> Result<FractionalAssignment<Rational>, PipelineError> {
    let m = z.len();
    let n = instance.num_students();
    let mut rows: Vec<Vec<Rational>> = z
        .iter()
        .map(|r| {
            r.iter()
                .map(|&x| match x {
                    x if x <= EDGE_TOL => Rational::zero(),
                    x if x >= 1.0 - EDGE_TOL => Rational::one(),
                    x => snap(x),
                })
                .collect()
        })
        .collect();
    let mut eqs: Vec<(Vec<(SchoolId, StudentId)>, Rational)> = Vec::new();
    for (h, school) in instance.schools.iter().enumerate() {
        eqs.push(((0..n).map(|i| (h, i)).collect(), int(school.capacity.min(n))));
        for k in &school.committee {
            let alpha = to_f64(&k.alpha);
            let mut cum = 0.0;
            for (p, &i) in k.ranking.order().iter().enumerate() {
                cum += z[h][i];
                if cum >= alpha - EDGE_TOL {
                    if (cum - alpha).abs() <= EDGE_TOL {
                        eqs.push((k.ranking.order()[..=p].iter().map(|&j| (h, j)).collect(), k.alpha.clone()));
                    }
                    break;
                }
            }
        }
    }
    if market {
        for i in 0..n {
            if (0..m).map(|h| z[h][i]).sum::<f64>() >= 1.0 - FULL_TOL {
                eqs.push(((0..m).map(|h| (h, i)).collect(), Rational::one()));
            }
        }
    }
    let mut index = vec![vec![usize::MAX; n]; m];
    let mut free = Vec::new();
    for h in 0..m {
        for i in 0..n {
            if !rows[h][i].is_integer() {
                index[h][i] = free.len();
                free.push((h, i));
            }
        }
    }
    let support: Vec<Vec<usize>> = eqs
        .iter()
        .map(|(vars, _)| vars.iter().map(|&(h, i)| index[h][i]).filter(|&j| j != usize::MAX).collect())
        .collect();
    let resid: Vec<Rational> = eqs
        .iter()
        .map(|(vars, target)| vars.iter().fold(target.clone(), |acc, &(h, i)| acc - &rows[h][i]))
        .collect();
    // (A Aᵀ) w = r, then shift by Aᵀ w
    let gram: Vec<Vec<Rational>> = support
        .iter()
        .map(|a| support.iter().map(|b| int(a.iter().filter(|j| b.contains(j)).count())).collect())
        .collect();
    let w = solve_linear(&gram, &resid).ok_or_else(|| PipelineError::Snap("snapped equalities are inconsistent".into()))?;
    for (a, wk) in support.iter().zip(&w) {
        for &j in a {
            let (h, i) = free[j];
            rows[h][i] += wk;
        }
    }
    if let Some((h, i)) = free.iter().copied().find(|&(h, i)| rows[h][i].is_negative() || rows[h][i] > Rational::one()) {
        return Err(PipelineError::Snap(format!("entry ({h}, {i}) left [0, 1] after correction")));
    }
    Ok(FractionalAssignment { rows })
}

/// Approximately stable matching for a market. Pads with dummy students
/// first, so the answer lives in the padded instance.
pub fn solve_match(instance: &Instance, params: &MeoParams) -> Result<MatchOutcome, PipelineError> {
    validated(instance)?;
    let padded = instance.pad_with_dummies();
    let state = meo::meo_iterate(&padded, params)?;
    let readouts = meo::extract_betas(&state, &padded, params.tol)?;
    let z = snap_exact(&padded, &state.z, true)?;
    let frac = check_frac_stable(&padded, &z, &readouts.betas, 0.0);
    if !frac.ok {
        return Err(PipelineError::Snap(describe(&frac)));
    }
    let rounded = rounding::round_matching(&z, &padded)?;
    let matching = rounded.matching();
    matching.assert_feasible(&padded.with_adjusted(&rounded.alpha_prime, &rounded.c_prime));
    let certificate = certify_match(&padded, &matching, &readouts.betas, &rounded.alpha_prime, &rounded.c_prime);
    Ok(MatchOutcome {
        diagnostics: Diagnostics {
            residual: state.residual,
            iterations: state.iterations,
            eps: state.eps,
            delta: Some(state.delta),
            beta_raw: readouts.raw,
            demand_gap: state.demand_gap(),
        },
        instance: padded,
        matching,
        betas: readouts.betas,
        alpha_prime: rounded.alpha_prime,
        c_prime: rounded.c_prime,
        certificate,
        rounding_log: rounded.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::num::rat;

    #[test]
    fn snapping_prefers_simple_fractions() {
        assert_eq!(snap(0.5 + 1e-12), rat(1, 2));
        assert_eq!(snap(1.0 / 3.0), rat(1, 3));
        assert_eq!(snap(-1e-13), rat(0, 1));
        let inst = fixtures::two_rankings();
        let z = snap_exact(&inst, &[vec![1.0 - 1e-9, 0.3333333333, 0.6666666668]], false).unwrap();
        assert_eq!(z.rows[0], vec![rat(1, 1), rat(1, 3), rat(2, 3)]);
    }

    #[test]
    fn two_rankings_end_to_end() {
        let inst = fixtures::two_rankings();
        let out = solve_single(&inst, 0, None, &SolverParams::default()).unwrap();
        assert!(out.certificate.ok, "{:?}", out.certificate);
        assert_eq!(out.beta, rat(0, 1));
        assert!(out.selected == vec![0, 1] || out.selected == vec![0, 2]);
    }

    #[test]
    fn small_pool_takes_everyone() {
        let inst = fixtures::two_rankings();
        let out = solve_single(&inst, 0, Some(&[1, 2]), &SolverParams::default()).unwrap();
        assert_eq!(out.selected, vec![1, 2]);
        assert!(out.certificate.ok);
    }

    #[test]
    fn aligned_market_end_to_end() {
        let inst = fixtures::aligned_market();
        let out = solve_match(&inst, &MeoParams::default()).unwrap();
        assert!(out.certificate.ok, "{:?}", out.certificate);
        assert!(out.matching.assignment().iter().all(|a| a.is_some()));
    }
}
