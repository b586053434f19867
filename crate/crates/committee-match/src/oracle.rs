//! Exhaustive ground truth for small instances.

use thiserror::Error;

use crate::exec::Exec;
use crate::model::{Instance, Matching, School, StudentId};
use crate::num::Rational;
use crate::verify::{beta_window, check_stable, BetaWindow};

/// Largest applicant pool [`enumerate_acceptable`] accepts.
pub const MAX_APPLICANTS: usize = 22;
/// Largest number of assignments [`enumerate_stable`] walks.
pub const MAX_ASSIGNMENTS: u64 = 10_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("search space too large: {what} is {size}, limit {limit}")]
    SizeGuard { what: &'static str, size: u64, limit: u64 },
}

/// Subsets of `pool` of size `k`, as sorted index vectors, in lexicographic
/// order.
fn subsets(pool: &[StudentId], k: usize) -> Vec<Vec<StudentId>> {
    let n = pool.len();
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&j| pool[j]).collect());
        // advance to the next combination
        let Some(pos) = (0..k).rev().find(|&p| idx[p] < n - k + p) else { break };
        idx[pos] += 1;
        for p in pos + 1..k {
            idx[p] = idx[p - 1] + 1;
        }
    }
    out
}

/// Every non-wasteful selection from `applicants` that is acceptable for some
/// β, with its window, sorted by the window's lower end and then by the
/// selection.
pub fn enumerate_acceptable(
    school: &School,
    applicants: &[StudentId],
    exec: Exec,
) -> Result<Vec<(Vec<StudentId>, BetaWindow)>, OracleError> {
    if applicants.len() > MAX_APPLICANTS {
        return Err(OracleError::SizeGuard {
            what: "applicant pool",
            size: applicants.len() as u64,
            limit: MAX_APPLICANTS as u64,
        });
    }
    let mut pool = applicants.to_vec();
    pool.sort_unstable();
    pool.dedup();
    let k = school.capacity.min(pool.len());
    let candidates = subsets(&pool, k);
    let windows = exec.map_slice(&candidates, |sel| beta_window(school, &pool, sel));
    let mut out: Vec<_> = candidates.into_iter().zip(windows).filter(|(_, w)| w.feasible()).collect();
    out.sort_by(|a, b| a.1.lo.cmp(&b.1.lo).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// Smallest β admitting an acceptable set, `None` when no selection works.
pub fn min_beta(school: &School, applicants: &[StudentId], exec: Exec) -> Result<Option<usize>, OracleError> {
    Ok(enumerate_acceptable(school, applicants, exec)?.first().map(|(_, w)| w.lo))
}

/// Every matching of `instance` that is stable at `betas`, in lexicographic
/// order of the assignment with "unassigned" first.
pub fn enumerate_stable(instance: &Instance, betas: &[Rational], exec: Exec) -> Result<Vec<Matching>, OracleError> {
    let n = instance.num_students();
    let m = instance.num_schools();
    let radix = (m + 1) as u64;
    let total = (0..n).try_fold(1u64, |acc, _| acc.checked_mul(radix).filter(|&t| t <= MAX_ASSIGNMENTS));
    let Some(total) = total else {
        return Err(OracleError::SizeGuard {
            what: "assignment space",
            size: radix.saturating_pow(n as u32),
            limit: MAX_ASSIGNMENTS,
        });
    };
    const CHUNK: u64 = 4096;
    let chunks = total.div_ceil(CHUNK) as usize;
    let found = exec.map(chunks, |c| {
        let mut out = Vec::new();
        let lo = c as u64 * CHUNK;
        for code in lo..(lo + CHUNK).min(total) {
            // student 0 is the most significant digit
            let mut assignment = vec![None; n];
            let mut rest = code;
            let mut sizes = vec![0usize; m];
            for i in (0..n).rev() {
                let d = (rest % radix) as usize;
                rest /= radix;
                if d > 0 {
                    assignment[i] = Some(d - 1);
                    sizes[d - 1] += 1;
                }
            }
            if sizes.iter().zip(&instance.schools).any(|(&s, h)| s > h.capacity) {
                continue;
            }
            let matching = Matching::new(assignment, m);
            if check_stable(instance, &matching, betas).ok {
                out.push(matching);
            }
        }
        out
    });
    Ok(found.into_iter().flatten().collect())
}
