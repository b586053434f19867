//! Small hand-checkable instances used by tests, the CLI and the docs.

use crate::model::{Instance, Member, Ranking, School, Student};
use crate::num::{int, Rational};

/// One school whose committee has the given rankings (over students named by
/// `names`) and rank parameters.
pub fn single_school(names: &[&str], capacity: usize, rankings: &[(&[usize], Rational)]) -> Instance {
    let students = names
        .iter()
        .map(|n| Student { label: (*n).to_string(), prefs: vec![0], is_dummy: false })
        .collect();
    let committee = rankings
        .iter()
        .enumerate()
        .map(|(k, (order, alpha))| Member {
            label: format!("k{}", k + 1),
            ranking: Ranking::new(order.to_vec()).expect("fixture rankings are permutations"),
            alpha: alpha.clone(),
        })
        .collect();
    Instance {
        students,
        schools: vec![School { label: "h".into(), capacity, committee }],
    }
}

/// Rankings a≻b≻c and a≻c≻b, both with α = 1, capacity 2.
/// Acceptable sets: {a,b} and {a,c}, each at β = 0.
pub fn two_rankings() -> Instance {
    single_school(&["a", "b", "c"], 2, &[(&[0, 1, 2], int(1)), (&[0, 2, 1], int(1))])
}

/// Five members over a, b, c, d with α = 1 and capacity 2: members 1-2 rank
/// d a b c, members 3-4 rank d b a c, member 5 ranks c d a b.
pub fn non_substitutable() -> Instance {
    let dabc: &[usize] = &[3, 0, 1, 2];
    let dbac: &[usize] = &[3, 1, 0, 2];
    single_school(
        &["a", "b", "c", "d"],
        2,
        &[(dabc, int(1)), (dabc, int(1)), (dbac, int(1)), (dbac, int(1)), (&[2, 3, 0, 1], int(1))],
    )
}

/// Three voters a≻b≻c, b≻c≻a, c≻a≻b with α = 1 and capacity 1.
pub fn condorcet_cycle() -> Instance {
    single_school(
        &["a", "b", "c"],
        1,
        &[(&[0, 1, 2], int(1)), (&[1, 2, 0], int(1)), (&[2, 0, 1], int(1))],
    )
}

/// Two schools, two students, one seat each, everyone agreeing that s0 ≻ s1
/// and h0 ≻ h1. The unique stable matching at β = 0 is assortative.
pub fn aligned_market() -> Instance {
    let member = |label: &str| Member {
        label: label.into(),
        ranking: Ranking::new(vec![0, 1]).unwrap(),
        alpha: int(1),
    };
    Instance {
        students: (0..2)
            .map(|i| Student { label: format!("s{i}"), prefs: vec![0, 1], is_dummy: false })
            .collect(),
        schools: vec![
            School { label: "h0".into(), capacity: 1, committee: vec![member("k0")] },
            School { label: "h1".into(), capacity: 1, committee: vec![member("k1")] },
        ],
    }
}
