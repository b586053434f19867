//! Checks of acceptable sets, stable matchings and their fractional
//! counterparts, with itemised violations.

use serde::{Deserialize, Serialize};

use crate::model::{FractionalAssignment, Instance, Matching, School, SchoolId, StudentId};
use crate::num::{int, Rational, Scalar};
use crate::support::{fractional_supports, integral_supports};

/// Default tolerance on mass constraints of fractional objects.
pub const FRAC_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: String,
    pub entity: String,
    pub measured: String,
    pub bound: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl Verdict {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Verdict { ok: violations.is_empty(), violations }
    }

    /// Folds another verdict into this one.
    pub fn merge(mut self, other: Verdict) -> Self {
        self.violations.extend(other.violations);
        self.ok = self.violations.is_empty();
        self
    }
}

fn violation(condition: &str, entity: String, measured: impl ToString, bound: impl ToString) -> Violation {
    Violation { condition: condition.into(), entity, measured: measured.to_string(), bound: bound.to_string() }
}

/// Supports at which a selection is acceptable: any β in `lo..=hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BetaWindow {
    /// Largest support among rejected applicants (0 if none).
    pub lo: usize,
    /// Smallest support among selected students (committee size if none).
    pub hi: usize,
}

impl BetaWindow {
    pub fn feasible(&self) -> bool {
        self.lo <= self.hi
    }

    pub fn contains(&self, beta: &Rational) -> bool {
        int(self.lo) <= *beta && *beta <= int(self.hi)
    }
}

fn mask(n: usize, ids: &[StudentId]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &i in ids {
        m[i] = true;
    }
    m
}

pub fn beta_window(school: &School, applicants: &[StudentId], selected: &[StudentId]) -> BetaWindow {
    let sel = mask(school.num_students(), selected);
    let sup = integral_supports(school, &sel);
    let lo = applicants.iter().filter(|&&i| !sel[i]).map(|&i| sup[i]).max().unwrap_or(0);
    let hi = selected.iter().map(|&i| sup[i]).min().unwrap_or(school.committee.len());
    BetaWindow { lo, hi }
}

pub fn check_acceptable(school: &School, applicants: &[StudentId], selected: &[StudentId], beta: &Rational) -> Verdict {
    let n = school.num_students();
    let app = mask(n, applicants);
    let sel = mask(n, selected);
    let mut v = Vec::new();
    for i in 0..n {
        if sel[i] && !app[i] {
            v.push(violation("selection within applicants", format!("student {i}"), "selected", "not an applicant"));
        }
    }
    let want = school.capacity.min(applicants.len());
    if selected.len() != want {
        v.push(violation("non-wastefulness", school.label.clone(), selected.len(), want));
    }
    let sup = integral_supports(school, &sel);
    for i in 0..n {
        if sel[i] && int(sup[i]) < *beta {
            v.push(violation("individual rationality", format!("student {i}"), sup[i], format!(">= {beta}")));
        }
    }
    for j in 0..n {
        if app[j] && !sel[j] && int(sup[j]) > *beta {
            v.push(violation("no blocking", format!("student {j}"), sup[j], format!("<= {beta}")));
        }
    }
    Verdict::from_violations(v)
}

/// Pairs (student, school) where the student prefers the school to its
/// assignment and the school has a free seat or supports the student above
/// its threshold.
pub fn blocking_pairs(instance: &Instance, matching: &Matching, betas: &[Rational]) -> Vec<(StudentId, SchoolId)> {
    let masks = matching.masks();
    let sizes: Vec<usize> = masks.iter().map(|m| m.iter().filter(|&&b| b).count()).collect();
    let supports: Vec<Vec<usize>> =
        instance.schools.iter().zip(&masks).map(|(s, m)| integral_supports(s, m)).collect();
    let mut out = Vec::new();
    for (j, student) in instance.students.iter().enumerate() {
        let current = matching.school_of(j);
        for &h in &student.prefs {
            if Some(h) == current {
                break;
            }
            let open = sizes[h] < instance.schools[h].capacity;
            if open || int(supports[h][j]) > betas[h] {
                out.push((j, h));
            }
        }
    }
    out
}

pub fn check_stable(instance: &Instance, matching: &Matching, betas: &[Rational]) -> Verdict {
    let mut v = Vec::new();
    let masks = matching.masks();
    for (h, school) in instance.schools.iter().enumerate() {
        let size = masks[h].iter().filter(|&&b| b).count();
        if size > school.capacity {
            v.push(violation("capacity", school.label.clone(), size, school.capacity));
        }
        let sup = integral_supports(school, &masks[h]);
        for i in 0..masks[h].len() {
            if masks[h][i] && int(sup[i]) < betas[h] {
                v.push(violation(
                    "individual rationality",
                    format!("student {i} at {}", school.label),
                    sup[i],
                    format!(">= {}", betas[h]),
                ));
            }
        }
    }
    for (j, h) in blocking_pairs(instance, matching, betas) {
        v.push(violation("no blocking", format!("student {j} with {}", instance.schools[h].label), "blocking", "none"));
    }
    Verdict::from_violations(v)
}

pub fn check_frac_acceptable<T: Scalar>(school: &School, x: &[T], beta: &Rational, tol: f64) -> Verdict {
    let mut v = Vec::new();
    let total = x.iter().fold(T::zero(), |acc, t| acc.plus(t));
    let cap = T::from_rational(&int(school.capacity));
    let exact = total.reaches(&cap) && cap.reaches(&total);
    if !exact && (total.as_f64() - school.capacity as f64).abs() > tol {
        v.push(violation("non-wastefulness", school.label.clone(), total.as_f64(), school.capacity));
    }
    for (i, t) in x.iter().enumerate() {
        let f = t.as_f64();
        if f < -tol || f > 1.0 + tol {
            v.push(violation("bounds", format!("student {i}"), f, "[0, 1]"));
        }
    }
    let (weak, strong) = fractional_supports(school, x);
    for (i, t) in x.iter().enumerate() {
        if t.positive() && int(weak[i]) < *beta {
            v.push(violation("individual rationality", format!("student {i}"), weak[i], format!(">= {beta}")));
        }
        if t.below_one() && int(strong[i]) > *beta {
            v.push(violation("no blocking", format!("student {i}"), strong[i], format!("<= {beta}")));
        }
    }
    Verdict::from_violations(v)
}

/// Least preferred school holding some of the student, if the student is
/// fully assigned.
pub fn boundary_school<T: Scalar>(instance: &Instance, i: StudentId, z: &FractionalAssignment<T>) -> Option<SchoolId> {
    let mass = z.rows.iter().fold(T::zero(), |acc, r| acc.plus(&r[i]));
    if !mass.reaches(&T::from_rational(&int(1))) {
        return None;
    }
    instance.students[i].prefs.iter().rev().copied().find(|&h| z.rows[h][i].positive())
}

pub fn check_frac_stable<T: Scalar>(
    instance: &Instance,
    z: &FractionalAssignment<T>,
    betas: &[Rational],
    tol: f64,
) -> Verdict {
    let mut v = Vec::new();
    for (h, school) in instance.schools.iter().enumerate() {
        let row = &z.rows[h];
        let total = row.iter().fold(T::zero(), |acc, t| acc.plus(t));
        let cap = T::from_rational(&int(school.capacity));
        if !cap.reaches(&total) && total.as_f64() > school.capacity as f64 + tol {
            let total = total.as_f64();
            v.push(violation("capacity", school.label.clone(), total, school.capacity));
        }
        for (i, t) in row.iter().enumerate() {
            let f = t.as_f64();
            if f < -tol || f > 1.0 + tol {
                v.push(violation("bounds", format!("student {i} at {}", school.label), f, "[0, 1]"));
            }
        }
    }
    for i in 0..instance.num_students() {
        let mass = z.rows.iter().fold(T::zero(), |acc, r| acc.plus(&r[i]));
        if !T::from_rational(&int(1)).reaches(&mass) && mass.as_f64() > 1.0 + tol {
            v.push(violation("student mass", format!("student {i}"), mass.as_f64(), 1));
        }
    }
    let boundary: Vec<Option<SchoolId>> = (0..instance.num_students()).map(|i| boundary_school(instance, i, z)).collect();
    for (h, school) in instance.schools.iter().enumerate() {
        let row = &z.rows[h];
        let (weak, strong) = fractional_supports(school, row);
        let total = row.iter().fold(T::zero(), |acc, t| acc.plus(t));
        let open = !total.reaches(&T::from_rational(&int(school.capacity))) && total.as_f64() < school.capacity as f64 - tol;
        for (i, t) in row.iter().enumerate() {
            if open && t.below_one() && instance.students[i].prefers(h, boundary[i]) {
                v.push(violation("no blocking", format!("student {i} with {}", school.label), "open seat", "none"));
                continue;
            }
            if t.positive() && int(weak[i]) < betas[h] {
                v.push(violation(
                    "individual rationality",
                    format!("student {i} at {}", school.label),
                    weak[i],
                    format!(">= {}", betas[h]),
                ));
            }
            if t.below_one() && instance.students[i].prefers(h, boundary[i]) && int(strong[i]) > betas[h] {
                v.push(violation(
                    "no blocking",
                    format!("student {i} with {}", school.label),
                    strong[i],
                    format!("<= {}", betas[h]),
                ));
            }
        }
    }
    Verdict::from_violations(v)
}

/// Fractional indicator rows of an integral matching.
pub fn indicator(matching: &Matching) -> FractionalAssignment<Rational> {
    FractionalAssignment {
        rows: matching
            .masks()
            .into_iter()
            .map(|r| r.into_iter().map(|b| int(b as usize)).collect())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::num::{int, rat};
    use crate::support::fractional_supports;

    #[test]
    fn two_rankings_windows() {
        let inst = fixtures::two_rankings();
        let s = &inst.schools[0];
        let all = [0, 1, 2];
        assert!(check_acceptable(s, &all, &[0, 1], &int(0)).ok);
        assert_eq!(beta_window(s, &all, &[0, 1]), BetaWindow { lo: 0, hi: 0 });
        let bc = check_acceptable(s, &all, &[1, 2], &int(0));
        assert!(!bc.ok);
        assert!(bc.violations.iter().any(|v| v.condition == "no blocking" && v.entity == "student 0"));
        assert!(!beta_window(s, &all, &[1, 2]).feasible());
    }

    #[test]
    fn non_substitutable_window_contains_one() {
        let inst = fixtures::non_substitutable();
        let w = beta_window(&inst.schools[0], &[0, 1, 2, 3], &[2, 3]);
        assert!(w.feasible() && w.contains(&int(1)));
    }

    #[test]
    fn condorcet_window() {
        let inst = fixtures::condorcet_cycle();
        assert_eq!(beta_window(&inst.schools[0], &[0, 1, 2], &[0]), BetaWindow { lo: 2, hi: 3 });
    }

    #[test]
    fn taking_everyone_is_always_acceptable() {
        let inst = fixtures::two_rankings();
        assert!(check_acceptable(&inst.schools[0], &[1, 2], &[1, 2], &int(0)).ok);
    }

    #[test]
    fn open_seat_blocks() {
        let inst = fixtures::aligned_market();
        let m = Matching::new(vec![Some(0), None], 2);
        let betas = [int(0), int(0)];
        assert_eq!(blocking_pairs(&inst, &m, &betas), vec![(1, 1)]);
        let good = Matching::new(vec![Some(0), Some(1)], 2);
        assert!(check_stable(&inst, &good, &betas).ok);
        let swapped = Matching::new(vec![Some(1), Some(0)], 2);
        assert!(!check_stable(&inst, &swapped, &betas).ok);
    }

    #[test]
    fn frac_checks_on_examples() {
        let inst = fixtures::two_rankings();
        let s = &inst.schools[0];
        assert!(check_frac_acceptable(s, &[1.0, 1.0, 0.0], &int(0), FRAC_TOL).ok);
        let short = check_frac_acceptable(s, &[0.5, 0.5, 0.5], &int(0), FRAC_TOL);
        assert!(short.violations.iter().any(|v| v.condition == "non-wastefulness"));
        // uniform mass 2/3: weak supports (2, 1, 1), strong supports (2, 0, 0)
        let u = [rat(2, 3), rat(2, 3), rat(2, 3)];
        assert_eq!(fractional_supports(s, &u), (vec![2, 1, 1], vec![2, 0, 0]));
        let v = check_frac_acceptable(s, &u, &int(1), 0.0);
        assert!(v.violations.iter().all(|v| v.condition != "individual rationality"));
        assert_eq!(v.violations.len(), 1);
        assert_eq!(v.violations[0].entity, "student 0");
        assert!(!check_frac_acceptable(s, &u, &int(2), 0.0).ok);
    }

    #[test]
    fn boundary_school_cases() {
        let inst = fixtures::aligned_market();
        let z = FractionalAssignment { rows: vec![vec![1.0, 0.0], vec![0.0, 0.7]] };
        assert_eq!(boundary_school(&inst, 0, &z), Some(0));
        assert_eq!(boundary_school(&inst, 1, &z), None);
        let split = FractionalAssignment { rows: vec![vec![0.5, 0.5], vec![0.5, 0.5]] };
        assert_eq!(boundary_school(&inst, 0, &split), Some(1));
    }

    #[test]
    fn unassigned_high_support_student_blocks_fractionally() {
        let inst = fixtures::aligned_market();
        // s0 wants h0, h0's member ranks s0 first, but h0 is filled by s1
        let z = FractionalAssignment { rows: vec![vec![0.0, 1.0], vec![0.0, 0.0]] };
        let v = check_frac_stable(&inst, &z, &[int(0), int(0)], FRAC_TOL);
        assert!(v.violations.iter().any(|v| v.condition == "no blocking"));
    }

    #[test]
    fn frac_stable_agrees_with_integral_check() {
        let inst = fixtures::aligned_market();
        let betas = [int(0), int(0)];
        for m in [vec![Some(0), Some(1)], vec![Some(1), Some(0)], vec![Some(0), None]] {
            let m = Matching::new(m, 2);
            let a = check_stable(&inst, &m, &betas).ok;
            let b = check_frac_stable(&inst, &indicator(&m), &betas, 0.0).ok;
            assert_eq!(a, b);
        }
    }
}
