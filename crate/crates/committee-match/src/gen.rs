//! Seeded random instances.
//!
//! All randomness comes from ChaCha8 with the user seed as key. Each
//! (role, index) pair reads its own stream, numbered `role << 48 | index`,
//! so adding a school or member never changes the draws of the others:
//!
//! | role | index        | draws                           |
//! |------|--------------|---------------------------------|
//! | 1    | student      | school preference order         |
//! | 2    | `h << 16 | k` | member ranking and rank parameter |
//! | 3    | school       | capacity and committee size      |

use std::str::FromStr;

use num_traits::ToPrimitive;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{Instance, Member, Ranking, School, Student};
use crate::num::{int, Rational};

const ROLE_STUDENT: u64 = 1;
const ROLE_MEMBER: u64 = 2;
const ROLE_SCHOOL: u64 = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenError {
    #[error("invalid shape: {0}")]
    Shape(String),
}

/// How rank parameters are drawn.
#[derive(Clone, Debug, PartialEq)]
pub enum AlphaMode {
    /// The same value for every member, capped at the school's capacity.
    Fixed(Rational),
    /// Uniform integer in `1..=capacity`.
    Uniform,
    /// `max(1, round(p · capacity))` for `p` in `(0, 1]`.
    Percentile(f64),
}

impl FromStr for AlphaMode {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GenError::Shape(format!("alpha mode {s:?}; expected fixed:K, uniform or percentile:P"));
        match s.split_once(':') {
            None if s == "uniform" => Ok(AlphaMode::Uniform),
            Some(("fixed", k)) => {
                let k: Rational = k.parse().map_err(|_| bad())?;
                if k < int(0) {
                    return Err(bad());
                }
                Ok(AlphaMode::Fixed(k))
            }
            Some(("percentile", p)) => {
                let p: f64 = p.parse().map_err(|_| bad())?;
                if !(p > 0.0 && p <= 1.0) {
                    return Err(bad());
                }
                Ok(AlphaMode::Percentile(p))
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub students: usize,
    pub schools: usize,
    /// Committee size, or its maximum when `vary` is set.
    pub members: usize,
    /// School capacity, or its maximum when `vary` is set.
    pub capacity: usize,
    pub alpha_mode: AlphaMode,
    /// Draw each school's capacity and committee size uniformly from
    /// `1..=capacity` and `1..=members`.
    pub vary: bool,
    pub seed: u64,
}

impl GenParams {
    /// Small enough for both exhaustive searches in [`crate::oracle`].
    pub fn oracle_compatible(&self) -> bool {
        let space = ((self.schools + 1) as f64).powi(self.students as i32);
        self.students <= crate::oracle::MAX_APPLICANTS && space <= crate::oracle::MAX_ASSIGNMENTS as f64
    }
}

fn stream(seed: u64, role: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(role << 48 | index);
    rng
}

pub fn generate(p: &GenParams) -> Result<Instance, GenError> {
    if p.students == 0 || p.schools == 0 || p.members == 0 || p.capacity == 0 {
        return Err(GenError::Shape("students, schools, members and capacity must be positive".into()));
    }
    if p.schools > 1 << 16 || p.members > 1 << 16 {
        return Err(GenError::Shape("at most 65536 schools and members per school".into()));
    }
    let n = p.students;
    let students = (0..n)
        .map(|i| {
            let mut prefs: Vec<usize> = (0..p.schools).collect();
            prefs.shuffle(&mut stream(p.seed, ROLE_STUDENT, i as u64));
            Student { label: format!("s{i}"), prefs, is_dummy: false }
        })
        .collect();
    let schools = (0..p.schools)
        .map(|h| {
            let (capacity, size) = if p.vary {
                let mut rng = stream(p.seed, ROLE_SCHOOL, h as u64);
                (rng.gen_range(1..=p.capacity), rng.gen_range(1..=p.members))
            } else {
                (p.capacity, p.members)
            };
            let committee = (0..size)
                .map(|k| {
                    let mut rng = stream(p.seed, ROLE_MEMBER, (h as u64) << 16 | k as u64);
                    let mut order: Vec<usize> = (0..n).collect();
                    order.shuffle(&mut rng);
                    let alpha = match &p.alpha_mode {
                        AlphaMode::Fixed(a) => a.clone().min(int(capacity)),
                        AlphaMode::Uniform => int(rng.gen_range(1..=capacity)),
                        AlphaMode::Percentile(q) => {
                            int((q * capacity as f64).round().to_usize().unwrap_or(1).max(1))
                        }
                    };
                    Member { label: format!("h{h}k{k}"), ranking: Ranking::new(order).expect("shuffled permutation"), alpha }
                })
                .collect();
            School { label: format!("h{h}"), capacity, committee }
        })
        .collect();
    Ok(Instance { students, schools })
}
