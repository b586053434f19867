//! Domain types: students, schools, committees, matchings and fractional
//! assignments, plus validation and dummy-student padding.

use num_traits::{One, Signed, Zero};
use std::collections::HashSet;

use crate::num::{ceil_to_usize, Rational};

pub type StudentId = usize;
pub type SchoolId = usize;
pub type MemberId = usize;

/// A strict order over the students of an instance, most preferred first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ranking {
    order: Vec<StudentId>,
    pos: Vec<usize>,
}

impl Ranking {
    /// Builds a ranking from an order. Returns `None` unless `order` is a
    /// permutation of `0..order.len()`.
    pub fn new(order: Vec<StudentId>) -> Option<Self> {
        let n = order.len();
        let mut pos = vec![usize::MAX; n];
        for (rank, &i) in order.iter().enumerate() {
            if i >= n || pos[i] != usize::MAX {
                return None;
            }
            pos[i] = rank;
        }
        Some(Ranking { order, pos })
    }

    pub fn order(&self) -> &[StudentId] {
        &self.order
    }

    /// 0-based position of `i`; smaller is better.
    pub fn position(&self, i: StudentId) -> usize {
        self.pos[i]
    }

    /// True when `a` is strictly preferred to `b`.
    pub fn prefers(&self, a: StudentId, b: StudentId) -> bool {
        self.pos[a] < self.pos[b]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub label: String,
    pub ranking: Ranking,
    pub alpha: Rational,
}

#[derive(Clone, Debug, PartialEq)]
pub struct School {
    pub label: String,
    pub capacity: usize,
    pub committee: Vec<Member>,
}

impl School {
    pub fn alpha_sum(&self) -> Rational {
        self.committee.iter().map(|m| m.alpha.clone()).sum()
    }

    /// ⌈Σα / c⌉, the support level every solver output must stay within.
    pub fn beta_bound(&self) -> usize {
        ceil_to_usize(&(self.alpha_sum() / Rational::from_integer(self.capacity.into())))
    }

    pub fn num_students(&self) -> usize {
        self.committee.first().map_or(0, |m| m.ranking.len())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Student {
    pub label: String,
    /// Schools, most preferred first.
    pub prefs: Vec<SchoolId>,
    pub is_dummy: bool,
}

impl Student {
    /// True when `a` is strictly preferred to `b`; `None` is the outside
    /// option and ranks below every school.
    pub fn prefers(&self, a: SchoolId, b: Option<SchoolId>) -> bool {
        match b {
            None => true,
            Some(b) => self.rank_of(a) < self.rank_of(b),
        }
    }

    pub fn rank_of(&self, h: SchoolId) -> usize {
        self.prefs.iter().position(|&x| x == h).unwrap_or(usize::MAX)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub students: Vec<Student>,
    pub schools: Vec<School>,
}

/// A single problem with its validation findings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation(pub String);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl Instance {
    pub fn num_students(&self) -> usize {
        self.students.len()
    }

    pub fn num_schools(&self) -> usize {
        self.schools.len()
    }

    pub fn total_capacity(&self) -> usize {
        self.schools.iter().map(|s| s.capacity).sum()
    }

    /// Every invariant violation, empty when the instance is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.students.len();
        let m = self.schools.len();
        let mut seen = HashSet::new();
        for s in &self.students {
            if !seen.insert(s.label.as_str()) {
                out.push(Violation(format!("duplicate student label {}", s.label)));
            }
            if !is_permutation(&s.prefs, m) {
                out.push(Violation(format!(
                    "preferences of {} are not a permutation of the schools",
                    s.label
                )));
            }
        }
        let mut seen = HashSet::new();
        let mut members = HashSet::new();
        for h in &self.schools {
            if !seen.insert(h.label.as_str()) {
                out.push(Violation(format!("duplicate school label {}", h.label)));
            }
            if h.capacity == 0 {
                out.push(Violation(format!("capacity of {} must be positive", h.label)));
            }
            if h.committee.is_empty() {
                out.push(Violation(format!("committee of {} is empty", h.label)));
            }
            let cap = Rational::from_integer(h.capacity.into());
            for k in &h.committee {
                if !members.insert(k.label.as_str()) {
                    out.push(Violation(format!("duplicate member label {}", k.label)));
                }
                if k.ranking.len() != n {
                    out.push(Violation(format!("ranking of {} is not a permutation", k.label)));
                }
                if k.alpha.is_negative() {
                    out.push(Violation(format!("alpha of {} is negative", k.label)));
                }
                if k.alpha > cap {
                    out.push(Violation(format!("alpha of {} exceeds capacity", k.label)));
                }
            }
        }
        out
    }

    /// Members whose alpha is below 1, which the integral definitions never
    /// exercise. Reported as warnings, not errors.
    pub fn integral_mode_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for h in &self.schools {
            for k in &h.committee {
                if k.alpha < Rational::one() {
                    out.push(format!("alpha of {} is below 1", k.label));
                }
            }
        }
        out
    }

    /// Appends dummy students until there are at least as many students as
    /// seats. Dummies sit below every real student in every committee
    /// ranking, in index order, and list schools in index order.
    pub fn pad_with_dummies(&self) -> Instance {
        let need = self.total_capacity();
        let n = self.students.len();
        if n >= need {
            return self.clone();
        }
        let m = self.schools.len();
        let mut out = self.clone();
        for d in n..need {
            out.students.push(Student {
                label: format!("dummy{}", d - n),
                prefs: (0..m).collect(),
                is_dummy: true,
            });
        }
        for h in &mut out.schools {
            for k in &mut h.committee {
                let mut order = k.ranking.order().to_vec();
                order.extend(n..need);
                k.ranking = Ranking::new(order).expect("padding keeps a permutation");
            }
        }
        out
    }

    /// Copy of the instance with replaced alphas and capacities, used to
    /// verify rounded outputs under their adjusted parameters.
    pub fn with_adjusted(&self, alpha: &[Vec<Rational>], capacity: &[usize]) -> Instance {
        let mut out = self.clone();
        for (h, school) in out.schools.iter_mut().enumerate() {
            school.capacity = capacity[h];
            for (k, member) in school.committee.iter_mut().enumerate() {
                member.alpha = alpha[h][k].clone();
            }
        }
        out
    }

    /// One-school instance over a pool of applicants. Rankings keep their
    /// relative order; the returned map sends new indices to old ones.
    pub fn restrict(&self, h: SchoolId, applicants: &[StudentId]) -> (Instance, Vec<StudentId>) {
        let mut back: Vec<StudentId> = applicants.to_vec();
        back.sort_unstable();
        back.dedup();
        let mut fwd = vec![usize::MAX; self.students.len()];
        for (new, &old) in back.iter().enumerate() {
            fwd[old] = new;
        }
        let school = &self.schools[h];
        let committee = school
            .committee
            .iter()
            .map(|k| Member {
                label: k.label.clone(),
                ranking: Ranking::new(
                    k.ranking.order().iter().filter(|&&i| fwd[i] != usize::MAX).map(|&i| fwd[i]).collect(),
                )
                .expect("restriction keeps a permutation"),
                alpha: k.alpha.clone(),
            })
            .collect();
        let students = back
            .iter()
            .map(|&i| Student { label: self.students[i].label.clone(), prefs: vec![0], is_dummy: self.students[i].is_dummy })
            .collect();
        let inst = Instance {
            students,
            schools: vec![School { label: school.label.clone(), capacity: school.capacity, committee }],
        };
        (inst, back)
    }
}

fn is_permutation(v: &[usize], n: usize) -> bool {
    if v.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &x in v {
        if x >= n || seen[x] {
            return false;
        }
        seen[x] = true;
    }
    true
}

/// An integral many-to-one assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching {
    assignment: Vec<Option<SchoolId>>,
    num_schools: usize,
}

impl Matching {
    pub fn new(assignment: Vec<Option<SchoolId>>, num_schools: usize) -> Self {
        Matching { assignment, num_schools }
    }

    pub fn empty(num_students: usize, num_schools: usize) -> Self {
        Matching { assignment: vec![None; num_students], num_schools }
    }

    pub fn school_of(&self, i: StudentId) -> Option<SchoolId> {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[Option<SchoolId>] {
        &self.assignment
    }

    pub fn num_schools(&self) -> usize {
        self.num_schools
    }

    pub fn roster(&self, h: SchoolId) -> Vec<StudentId> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == Some(h)).collect()
    }

    pub fn rosters(&self) -> Vec<Vec<StudentId>> {
        let mut out = vec![Vec::new(); self.num_schools];
        for (i, h) in self.assignment.iter().enumerate() {
            if let Some(h) = h {
                out[*h].push(i);
            }
        }
        out
    }

    /// Rosters as membership masks, one row per school.
    pub fn masks(&self) -> Vec<Vec<bool>> {
        let mut out = vec![vec![false; self.assignment.len()]; self.num_schools];
        for (i, h) in self.assignment.iter().enumerate() {
            if let Some(h) = h {
                out[*h][i] = true;
            }
        }
        out
    }

    /// Capacity and range checks shared by every producer of matchings.
    pub fn assert_feasible(&self, instance: &Instance) {
        assert_eq!(self.assignment.len(), instance.num_students());
        for (h, r) in self.rosters().iter().enumerate() {
            assert!(
                r.len() <= instance.schools[h].capacity,
                "school {} over capacity",
                instance.schools[h].label
            );
        }
    }
}

/// Per-school rows of a fractional assignment, `rows[h][i] = z_{h,i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FractionalAssignment<T> {
    pub rows: Vec<Vec<T>>,
}

impl FractionalAssignment<Rational> {
    /// Column sum Σ_h z_{h,i}.
    pub fn student_mass(&self, i: StudentId) -> Rational {
        self.rows.iter().map(|r| r[i].clone()).sum()
    }

    pub fn is_integral(&self) -> bool {
        self.rows.iter().flatten().all(|x| x.is_zero() || x.is_one())
    }
}

impl FractionalAssignment<f64> {
    pub fn student_mass(&self, i: StudentId) -> f64 {
        self.rows.iter().map(|r| r[i]).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::rat;

    fn tiny(n: usize, caps: &[usize]) -> Instance {
        let schools = caps
            .iter()
            .enumerate()
            .map(|(h, &c)| School {
                label: format!("h{h}"),
                capacity: c,
                committee: vec![Member {
                    label: format!("k{h}"),
                    ranking: Ranking::new((0..n).rev().collect()).unwrap(),
                    alpha: rat(1, 1),
                }],
            })
            .collect();
        let students = (0..n)
            .map(|i| Student {
                label: format!("s{i}"),
                prefs: (0..caps.len()).collect(),
                is_dummy: false,
            })
            .collect();
        Instance { students, schools }
    }

    #[test]
    fn well_formed_instance_has_no_violations() {
        assert!(tiny(3, &[1]).validate().is_empty());
    }

    #[test]
    fn short_ranking_is_reported() {
        let mut inst = tiny(3, &[1]);
        inst.schools[0].committee[0].ranking = Ranking::new(vec![0, 1]).unwrap();
        let v = inst.validate();
        assert_eq!(v, vec![Violation("ranking of k0 is not a permutation".into())]);
    }

    #[test]
    fn alpha_above_capacity_is_reported() {
        let mut inst = tiny(3, &[1]);
        inst.schools[0].committee[0].alpha = rat(2, 1);
        assert_eq!(inst.validate(), vec![Violation("alpha of k0 exceeds capacity".into())]);
    }

    #[test]
    fn padding_appends_dummies_last() {
        let inst = tiny(2, &[3]);
        let p = inst.pad_with_dummies();
        assert_eq!(p.num_students(), 3);
        assert!(p.students[2].is_dummy);
        assert_eq!(p.schools[0].committee[0].ranking.order(), &[1, 0, 2]);
        assert!(p.validate().is_empty());
    }

    #[test]
    fn padding_is_identity_when_enough_students() {
        let inst = tiny(5, &[2, 2]);
        assert_eq!(inst.pad_with_dummies(), inst);
        let p = tiny(1, &[2, 2]).pad_with_dummies();
        assert_eq!(p.num_students(), 4);
        assert_eq!(p.students.iter().filter(|s| s.is_dummy).count(), 3);
    }

    #[test]
    fn ranking_rejects_non_permutations() {
        assert!(Ranking::new(vec![0, 0]).is_none());
        assert!(Ranking::new(vec![1, 2]).is_none());
        let r = Ranking::new(vec![2, 0, 1]).unwrap();
        assert!(r.prefers(2, 1));
        assert_eq!(r.position(1), 2);
    }
}
