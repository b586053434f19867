//! Bound-versus-achieved tables over seeded random trials.
//!
//! Each trial draws its shape from its own ChaCha8 stream (role 4, index =
//! trial), builds an instance with [`crate::gen`], solves it and compares
//! the answer with the guaranteed bounds. Trials may run in parallel; the
//! report is assembled in trial order, so it is byte-identical across runs
//! as long as wall-clock times are left out.

use std::fmt::Write as _;
use std::time::Instant;

use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exec::Exec;
use crate::gen::{generate, AlphaMode, GenParams};
use crate::leo::SolverParams;
use crate::meo::MeoParams;
use crate::model::Instance;
use crate::num::{int, Rational};
use crate::pipeline::{solve_match, solve_single};

const ROLE_TRIAL: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// One school: n ≤ 25, c ≤ 8, |K| ≤ 4, α uniform in `1..=c`.
    Single,
    /// A market: m ≤ 4, n ≤ 30, c ≤ 6, |K| ≤ 3, α uniform in `1..=c`.
    Match,
    /// One school with |K| = 10 and c = 1000, α at a fixed percentile of c.
    Percentile,
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub scenario: Scenario,
    pub trials: usize,
    pub seed: u64,
    /// Include wall-clock columns. Makes the report non-reproducible.
    pub timing: bool,
    pub exec: Exec,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Status {
    Ok,
    /// Certificate failed; the bounds below say where.
    Failed,
    NonConvergence,
    Error(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub shape: String,
    pub status: Status,
    /// Largest β over schools and ⌈Σα/c⌉ at that school.
    pub beta: Option<(Rational, usize)>,
    /// Largest |α′ − α| and the bound it must meet.
    pub alpha_shift: Option<(Rational, Rational)>,
    /// Largest |c′ − c| and its bound; markets only.
    pub cap_shift: Option<(usize, usize)>,
    /// max |α′ − α| / c, for the percentile scenario.
    pub relative_shift: Option<(f64, f64)>,
    pub millis: u128,
}

fn shape_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ROLE_TRIAL << 48 | trial as u64);
    rng
}

/// The instance for one trial of a scenario.
pub fn trial_instance(scenario: Scenario, seed: u64, trial: usize) -> Instance {
    let mut rng = shape_rng(seed, trial);
    let inst_seed = rng.gen();
    let p = match scenario {
        Scenario::Single => {
            let n = rng.gen_range(3..=25);
            GenParams {
                students: n,
                schools: 1,
                members: rng.gen_range(1..=4),
                capacity: rng.gen_range(1..=n.min(8)),
                alpha_mode: AlphaMode::Uniform,
                vary: false,
                seed: inst_seed,
            }
        }
        Scenario::Match => {
            let m = rng.gen_range(1..=4);
            GenParams {
                students: rng.gen_range(2..=30),
                schools: m,
                members: 3,
                capacity: 6,
                alpha_mode: AlphaMode::Uniform,
                vary: true,
                seed: inst_seed,
            }
        }
        Scenario::Percentile => GenParams {
            students: 1200,
            schools: 1,
            members: 10,
            capacity: 1000,
            alpha_mode: AlphaMode::Percentile(rng.gen_range(0.05..=0.95)),
            vary: false,
            seed: inst_seed,
        },
    };
    generate(&p).expect("bench shapes are valid")
}

fn shape_of(inst: &Instance) -> String {
    let caps: Vec<String> = inst.schools.iter().map(|s| s.capacity.to_string()).collect();
    let ks: Vec<String> = inst.schools.iter().map(|s| s.committee.len().to_string()).collect();
    format!("n={} c={} K={}", inst.num_students(), caps.join("/"), ks.join("/"))
}

fn max_by_key<T: Clone, K: PartialOrd>(items: impl IntoIterator<Item = T>, key: impl Fn(&T) -> K) -> Option<T> {
    items.into_iter().fold(None, |best: Option<T>, x| match best {
        Some(b) if key(&b) >= key(&x) => Some(b),
        _ => Some(x),
    })
}

pub fn run_trial(scenario: Scenario, seed: u64, trial: usize) -> TrialRow {
    let inst = trial_instance(scenario, seed, trial);
    let start = Instant::now();
    let mut row = TrialRow {
        trial,
        shape: shape_of(&inst),
        status: Status::Ok,
        beta: None,
        alpha_shift: None,
        cap_shift: None,
        relative_shift: None,
        millis: 0,
    };
    let result = match scenario {
        Scenario::Single | Scenario::Percentile => {
            let params = SolverParams { seed, ..SolverParams::default() };
            solve_single(&inst, 0, None, &params).map(|out| {
                let school = &inst.schools[0];
                row.beta = Some((out.beta.clone(), school.beta_bound()));
                let shift = school
                    .committee
                    .iter()
                    .zip(&out.alpha_prime)
                    .map(|(k, a)| (a - &k.alpha).abs())
                    .max()
                    .unwrap_or_else(Rational::zero);
                if scenario == Scenario::Percentile {
                    let c = school.capacity as f64;
                    let k = school.committee.len() as f64;
                    row.relative_shift = Some((shift.to_f64().unwrap_or(f64::NAN) / c, 2.0 * k / c));
                }
                row.alpha_shift = Some((shift, int(2) * &out.beta));
                out.certificate.ok
            })
        }
        Scenario::Match => {
            let params = MeoParams { seed, ..MeoParams::default() };
            solve_match(&inst, &params).map(|out| {
                let schools = &out.instance.schools;
                row.beta = max_by_key(schools.iter().enumerate(), |(h, _)| out.betas[*h].clone())
                    .map(|(h, s)| (out.betas[h].clone(), s.beta_bound()));
                row.alpha_shift = max_by_key(
                    schools.iter().enumerate().flat_map(|(h, s)| {
                        let bound = int(2 * s.committee.len() + 2);
                        s.committee.iter().zip(&out.alpha_prime[h]).map(move |(k, a)| ((a - &k.alpha).abs(), bound.clone()))
                    }),
                    |(d, _)| d.clone(),
                );
                row.cap_shift = max_by_key(
                    schools.iter().enumerate().map(|(h, s)| (out.c_prime[h].abs_diff(s.capacity), 2 * s.committee.len() + 1)),
                    |(d, _)| *d,
                );
                out.certificate.ok
            })
        }
    };
    row.millis = start.elapsed().as_millis();
    row.status = match result {
        Ok(true) => Status::Ok,
        Ok(false) => Status::Failed,
        Err(e) if e.is_non_convergence() => Status::NonConvergence,
        Err(e) => Status::Error(e.to_string()),
    };
    row
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub scenario: Scenario,
    pub seed: u64,
    pub rows: Vec<TrialRow>,
}

impl Report {
    pub fn count(&self, pred: impl Fn(&Status) -> bool) -> usize {
        self.rows.iter().filter(|r| pred(&r.status)).count()
    }

    /// Plain-text table, one line per trial and a summary line.
    pub fn render(&self, timing: bool) -> String {
        let pair = |x: Option<String>, b: Option<String>| match (x, b) {
            (Some(x), Some(b)) => format!("{x} <= {b}"),
            _ => "-".into(),
        };
        let mut out = String::new();
        let _ = writeln!(out, "# scenario {:?}, seed {}, {} trials", self.scenario, self.seed, self.rows.len());
        let mut head = format!("{:>5}  {:<24} {:<10} {:<14} {:<18} {:<12}", "trial", "shape", "converged", "beta", "max|a'-a|", "max|c'-c|");
        if self.scenario == Scenario::Percentile {
            head.push_str(&format!(" {:<18}", "max|a'-a|/c"));
        }
        head.push_str(" status");
        if timing {
            head.push_str("  ms");
        }
        let _ = writeln!(out, "{head}");
        for r in &self.rows {
            let beta = pair(r.beta.as_ref().map(|b| b.0.to_string()), r.beta.as_ref().map(|b| b.1.to_string()));
            let alpha = pair(
                r.alpha_shift.as_ref().map(|a| a.0.to_string()),
                r.alpha_shift.as_ref().map(|a| a.1.to_string()),
            );
            let cap = pair(r.cap_shift.map(|c| c.0.to_string()), r.cap_shift.map(|c| c.1.to_string()));
            let converged = if r.status == Status::NonConvergence { "no" } else { "yes" };
            let status = match &r.status {
                Status::Ok => "ok".to_string(),
                Status::Failed => "FAILED".to_string(),
                Status::NonConvergence => "nonconv".to_string(),
                Status::Error(e) => format!("error: {e}"),
            };
            let mut line = format!("{:>5}  {:<24} {:<10} {:<14} {:<18} {:<12}", r.trial, r.shape, converged, beta, alpha, cap);
            if self.scenario == Scenario::Percentile {
                let rel = r.relative_shift.map_or("-".into(), |(x, b)| format!("{:.4} <= {:.4}", x, b));
                line.push_str(&format!(" {rel:<18}"));
            }
            line.push(' ');
            line.push_str(&status);
            if timing {
                line.push_str(&format!("  {}", r.millis));
            }
            let _ = writeln!(out, "{}", line.trim_end());
        }
        let n = self.rows.len().max(1);
        let nonconv = self.count(|s| *s == Status::NonConvergence);
        let mut summary = format!(
            "summary: ok {}/{}, failed {}, nonconverged {} ({:.1}%), errors {}",
            self.count(|s| *s == Status::Ok),
            self.rows.len(),
            self.count(|s| *s == Status::Failed),
            nonconv,
            100.0 * nonconv as f64 / n as f64,
            self.count(|s| matches!(s, Status::Error(_))),
        );
        if self.scenario == Scenario::Percentile {
            let worst = self.rows.iter().filter_map(|r| r.relative_shift).map(|x| x.0).fold(0.0, f64::max);
            summary.push_str(&format!(", worst max|a'-a|/c {worst:.4}"));
        }
        if timing {
            summary.push_str(&format!(", total ms {}", self.rows.iter().map(|r| r.millis).sum::<u128>()));
        }
        let _ = writeln!(out, "{summary}");
        out
    }
}

pub fn run(cfg: &BenchConfig) -> Report {
    let rows = cfg.exec.map(cfg.trials, |t| run_trial(cfg.scenario, cfg.seed, t));
    Report { scenario: cfg.scenario, seed: cfg.seed, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_is_reproducible() {
        let cfg = BenchConfig { scenario: Scenario::Single, trials: 6, seed: 7, timing: false, exec: Exec::Parallel };
        let a = run(&cfg).render(false);
        let b = run(&BenchConfig { exec: Exec::Sequential, ..cfg }).render(false);
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 6 + 3);
        assert!(a.lines().last().unwrap().starts_with("summary: ok"));
    }

    #[test]
    fn shapes_follow_the_scenario() {
        for t in 0..20 {
            let s = trial_instance(Scenario::Single, 1, t);
            assert_eq!(s.num_schools(), 1);
            assert!(s.num_students() <= 25 && s.schools[0].capacity <= 8 && s.schools[0].committee.len() <= 4);
            let m = trial_instance(Scenario::Match, 1, t);
            assert!(m.num_schools() <= 4 && m.num_students() <= 30);
            assert!(m.schools.iter().all(|h| h.capacity <= 6 && h.committee.len() <= 3));
        }
    }
}
