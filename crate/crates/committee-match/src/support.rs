//! Rank benchmarks, upper sets, and integral, weak and strong support.

use num_traits::ToPrimitive;

use crate::model::{Ranking, School, StudentId};
use crate::num::{Rational, Scalar};

/// The benchmark a member compares candidates against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Benchmark {
    /// A concrete student: candidates at or above it are approved.
    Student(StudentId),
    /// The outside option: every candidate is approved.
    Outside,
    /// A zero rank parameter in integral mode: nobody is approved.
    AboveAll,
}

impl Benchmark {
    /// `i` is weakly above the benchmark.
    pub fn weakly_below(&self, ranking: &Ranking, i: StudentId) -> bool {
        match *self {
            Benchmark::Student(b) => ranking.position(i) <= ranking.position(b),
            Benchmark::Outside => true,
            Benchmark::AboveAll => false,
        }
    }

    /// `i` is strictly above the benchmark.
    pub fn strictly_below(&self, ranking: &Ranking, i: StudentId) -> bool {
        match *self {
            Benchmark::Student(b) => ranking.position(i) < ranking.position(b),
            Benchmark::Outside => true,
            Benchmark::AboveAll => false,
        }
    }

    pub fn student(&self) -> Option<StudentId> {
        match *self {
            Benchmark::Student(b) => Some(b),
            _ => None,
        }
    }
}

fn ceil_index(alpha: &Rational) -> usize {
    alpha.ceil().to_integer().to_usize().unwrap_or(0)
}

/// The ⌈α⌉-th favourite of `selected` under `ranking`, or the outside option
/// when fewer are selected.
pub fn alpha_rank_integral(ranking: &Ranking, selected: &[bool], alpha: &Rational) -> Benchmark {
    let want = ceil_index(alpha);
    if want == 0 {
        return Benchmark::AboveAll;
    }
    let mut seen = 0;
    for &i in ranking.order() {
        if selected[i] {
            seen += 1;
            if seen == want {
                return Benchmark::Student(i);
            }
        }
    }
    Benchmark::Outside
}

/// Number of members whose benchmark within `selected` does not beat `i`.
pub fn support_integral(school: &School, i: StudentId, selected: &[bool]) -> usize {
    school
        .committee
        .iter()
        .filter(|k| alpha_rank_integral(&k.ranking, selected, &k.alpha).weakly_below(&k.ranking, i))
        .count()
}

/// Integral support of every student at once.
pub fn integral_supports(school: &School, selected: &[bool]) -> Vec<usize> {
    let n = selected.len();
    let mut out = vec![0; n];
    for k in &school.committee {
        let b = alpha_rank_integral(&k.ranking, selected, &k.alpha);
        for (i, s) in out.iter_mut().enumerate() {
            if b.weakly_below(&k.ranking, i) {
                *s += 1;
            }
        }
    }
    out
}

/// Most preferred student at which the cumulative mass reaches α, or the
/// outside option when the row carries less than `capacity`.
pub fn alpha_rank_fractional<T: Scalar>(
    ranking: &Ranking,
    x: &[T],
    alpha: &Rational,
    capacity: usize,
) -> Benchmark {
    let total = x.iter().fold(T::zero(), |acc, v| acc.plus(v));
    if !total.reaches(&T::from_rational(&Rational::from_integer(capacity.into()))) {
        return Benchmark::Outside;
    }
    let a = T::from_rational(alpha);
    let mut cum = T::zero();
    for &i in ranking.order() {
        cum = cum.plus(&x[i]);
        if cum.reaches(&a) {
            return Benchmark::Student(i);
        }
    }
    Benchmark::Outside
}

/// Weak and strong upper sets of one member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpperSets {
    pub rank_student: Option<StudentId>,
    pub weak: Vec<StudentId>,
    pub strong: Vec<StudentId>,
}

pub fn upper_sets<T: Scalar>(ranking: &Ranking, x: &[T], alpha: &Rational, capacity: usize) -> UpperSets {
    let b = alpha_rank_fractional(ranking, x, alpha, capacity);
    let weak: Vec<_> = ranking.order().iter().copied().filter(|&i| b.weakly_below(ranking, i)).collect();
    let strong: Vec<_> = ranking.order().iter().copied().filter(|&i| b.strictly_below(ranking, i)).collect();
    if b.student().is_some() {
        let (w, s) = masses(x, &weak, &strong);
        let a = alpha.to_f64().unwrap_or(f64::NAN);
        debug_assert!(w >= a - 1e-6 && a > s - 1e-6 && s >= a - 1.0 - 1e-6, "upper sets out of order");
    }
    UpperSets { rank_student: b.student(), weak, strong }
}

fn masses<T: Scalar>(x: &[T], weak: &[StudentId], strong: &[StudentId]) -> (f64, f64) {
    let w = weak.iter().map(|&i| x[i].as_f64()).sum();
    let s = strong.iter().map(|&i| x[i].as_f64()).sum();
    (w, s)
}

/// Masses of the weak and strong upper sets, `None` when the benchmark is
/// the outside option.
pub fn upper_masses<T: Scalar>(ranking: &Ranking, x: &[T], alpha: &Rational, capacity: usize) -> Option<(T, T)> {
    let b = alpha_rank_fractional(ranking, x, alpha, capacity).student()?;
    let mut strong = T::zero();
    for &i in ranking.order() {
        if i == b {
            return Some((strong.plus(&x[i]), strong));
        }
        strong = strong.plus(&x[i]);
    }
    unreachable!("rank student appears in the ranking")
}

/// Members whose weak upper set contains `i`.
pub fn weak_support<T: Scalar>(school: &School, i: StudentId, x: &[T]) -> usize {
    school
        .committee
        .iter()
        .filter(|k| alpha_rank_fractional(&k.ranking, x, &k.alpha, school.capacity).weakly_below(&k.ranking, i))
        .count()
}

/// Members whose strong upper set contains `i`.
pub fn strong_support<T: Scalar>(school: &School, i: StudentId, x: &[T]) -> usize {
    school
        .committee
        .iter()
        .filter(|k| alpha_rank_fractional(&k.ranking, x, &k.alpha, school.capacity).strictly_below(&k.ranking, i))
        .count()
}

/// Weak and strong support of every student.
pub fn fractional_supports<T: Scalar>(school: &School, x: &[T]) -> (Vec<usize>, Vec<usize>) {
    let n = x.len();
    let mut weak = vec![0; n];
    let mut strong = vec![0; n];
    for k in &school.committee {
        let b = alpha_rank_fractional(&k.ranking, x, &k.alpha, school.capacity);
        for i in 0..n {
            if b.weakly_below(&k.ranking, i) {
                weak[i] += 1;
            }
            if b.strictly_below(&k.ranking, i) {
                strong[i] += 1;
            }
        }
    }
    (weak, strong)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::num::rat;

    fn abc() -> Ranking {
        Ranking::new(vec![0, 1, 2]).unwrap()
    }

    #[test]
    fn integral_rank_examples() {
        let r = abc();
        assert_eq!(alpha_rank_integral(&r, &[true, true, false], &rat(1, 1)), Benchmark::Student(0));
        assert_eq!(alpha_rank_integral(&r, &[false, true, true], &rat(2, 1)), Benchmark::Student(2));
        assert_eq!(alpha_rank_integral(&r, &[true, false, false], &rat(2, 1)), Benchmark::Outside);
        assert_eq!(alpha_rank_integral(&r, &[true, false, false], &rat(0, 1)), Benchmark::AboveAll);
    }

    #[test]
    fn non_substitutable_supports() {
        let inst = fixtures::non_substitutable();
        let s = &inst.schools[0];
        // students a, b, c, d
        let ab = [true, true, false, false];
        assert_eq!(integral_supports(s, &ab)[..3], [3, 2, 1]);
        let dc = [false, false, true, true];
        let sup = integral_supports(s, &dc);
        assert_eq!((sup[0], sup[1]), (0, 0));
    }

    #[test]
    fn every_member_supports_when_benchmark_is_outside() {
        let mut inst = fixtures::two_rankings();
        for k in &mut inst.schools[0].committee {
            k.alpha = rat(2, 1);
        }
        let s = &inst.schools[0];
        for i in 0..3 {
            assert_eq!(support_integral(s, i, &[false, true, false]), 2);
        }
    }

    #[test]
    fn fractional_rank_examples() {
        let r = abc();
        let x = [0.5, 0.5, 1.0];
        assert_eq!(alpha_rank_fractional(&r, &x, &rat(1, 1), 2), Benchmark::Student(1));
        assert_eq!(alpha_rank_fractional(&r, &[1.0, 1.0, 0.0], &rat(2, 1), 2), Benchmark::Student(1));
        assert_eq!(alpha_rank_fractional(&r, &[0.5, 0.5, 0.5], &rat(1, 1), 2), Benchmark::Outside);
    }

    #[test]
    fn upper_set_examples() {
        let r = abc();
        let u = upper_sets(&r, &[0.5, 0.5, 1.0], &rat(1, 1), 2);
        assert_eq!((u.weak, u.strong), (vec![0, 1], vec![0]));
        let u = upper_sets(&r, &[0.5, 0.5, 0.5], &rat(1, 1), 2);
        assert_eq!((u.weak.clone(), u.strong), (vec![0, 1, 2], vec![0, 1, 2]));
        assert_eq!(u.rank_student, None);
        let u = upper_sets(&r, &[1.0, 1.0, 0.0], &rat(2, 1), 2);
        assert_eq!((u.weak, u.strong), (vec![0, 1], vec![0]));
    }

    #[test]
    fn fractional_support_examples() {
        let inst = fixtures::two_rankings();
        let s = &inst.schools[0];
        let x = [1.0, 1.0, 0.0];
        assert_eq!(weak_support(s, 0, &x), 2);
        assert_eq!(strong_support(s, 2, &x), 0);
        let short = [0.5, 0.5, 0.5];
        assert!((0..3).all(|i| weak_support(s, i, &short) == 2));

        let cyc = fixtures::condorcet_cycle();
        let x = [rat(1, 1), rat(0, 1), rat(0, 1)];
        assert_eq!(strong_support(&cyc.schools[0], 2, &x), 2);
    }

    #[test]
    fn zero_alpha_in_fractional_mode_picks_the_top_student() {
        let r = abc();
        let u = upper_sets(&r, &[0.0, 1.0, 1.0], &rat(0, 1), 2);
        assert_eq!(u.rank_student, Some(0));
        assert!(u.strong.is_empty());
    }
}
