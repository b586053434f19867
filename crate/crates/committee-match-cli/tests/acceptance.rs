//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line whether or not it succeeds.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use committee_match::exec::Exec;
use committee_match::fixtures;
use committee_match::gen::{generate, AlphaMode, GenParams};
use committee_match::io;
use committee_match::leo::{self, SolverParams};
use committee_match::meo::MeoParams;
use committee_match::model::{Instance, Ranking, School};
use committee_match::num::{ceil_to_usize, int, rat};
use committee_match::oracle;
use committee_match::pipeline::{solve_match, solve_single, MatchOutcome};
use committee_match::support::{integral_supports, upper_masses};
use committee_match::verify::check_acceptable;
use committee_match::Rational;
use num_traits::{One, Signed, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_committee-match")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn archive(name: &str, inst: &Instance) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("nonconverged");
    std::fs::create_dir_all(&dir).expect("archive dir");
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, io::write_instance(inst, None)).expect("archive write");
    path
}

/// ⌈Σα / c⌉, computed here rather than through the model.
fn beta_cap(school: &School) -> usize {
    let sum: Rational = school.committee.iter().map(|k| k.alpha.clone()).sum();
    ceil_to_usize(&(sum / int(school.capacity)))
}

fn adjusted(school: &School, alpha: &[Rational]) -> School {
    let mut s = school.clone();
    for (k, a) in s.committee.iter_mut().zip(alpha) {
        k.alpha = a.clone();
    }
    s
}

fn two_ranking_example() -> Check {
    let file = data("two_rankings.json");
    let file = file.to_str().unwrap();
    let (code, out) = cli(&["oracle", "acceptable", file, "--school", "h"]);
    ensure(code == 0, || format!("oracle exit {code}"))?;
    let lines: Vec<&str> = out.lines().collect();
    ensure(lines == ["{a,b}  beta in [0, 0]", "{a,c}  beta in [0, 0]"], || format!("oracle rows {lines:?}"))?;
    let sol = std::env::temp_dir().join(format!("acceptance-example-{}.json", std::process::id()));
    let (code, _) = cli(&["solve-single", file, "--school", "h", "-o", sol.to_str().unwrap()]);
    ensure(code == 0, || format!("solve-single exit {code}"))?;
    let s = io::parse_solution(&std::fs::read_to_string(&sol).unwrap()).map_err(|e| e.to_string())?;
    let _ = std::fs::remove_file(&sol);
    let selected = s.selected.clone().unwrap_or_default();
    ensure(selected == ["a", "b"] || selected == ["a", "c"], || format!("selected {selected:?}"))?;
    ensure(s.schools[0].beta.is_zero(), || format!("beta {}", s.schools[0].beta))?;
    ensure(s.certificate.ok, || "certificate not ok".into())?;
    Ok(format!("oracle {{a,b}},{{a,c}} at [0,0]; solver chose {{{}}} at beta 0", selected.join(",")))
}

fn non_substitutable() -> Check {
    let inst = fixtures::non_substitutable();
    let school = &inst.schools[0];
    let abc = oracle::enumerate_acceptable(school, &[0, 1, 2], Exec::Sequential).map_err(|e| e.to_string())?;
    ensure(abc.len() == 1 && abc[0].0 == [0, 1], || format!("pool abc gives {abc:?}"))?;
    let sup = integral_supports(school, &[true, true, false, false]);
    ensure(sup[..3] == [3, 2, 1], || format!("supports {sup:?}"))?;
    let all = oracle::enumerate_acceptable(school, &[0, 1, 2, 3], Exec::Sequential).map_err(|e| e.to_string())?;
    ensure(all.len() == 1 && all[0].0 == [2, 3], || format!("pool abcd gives {all:?}"))?;
    let p = SolverParams::default();
    let a = solve_single(&inst, 0, Some(&[0, 1, 2]), &p).map_err(|e| e.to_string())?;
    ensure(a.selected == [0, 1] && a.certificate.ok, || format!("solver on abc chose {:?}", a.selected))?;
    let b = solve_single(&inst, 0, None, &p).map_err(|e| e.to_string())?;
    ensure(b.selected == [2, 3] && b.certificate.ok, || format!("solver on abcd chose {:?}", b.selected))?;
    let (code, out) = cli(&["oracle", "acceptable", data("non_substitutable.json").to_str().unwrap(), "--school", "h"]);
    ensure(code == 0 && out.lines().count() == 1 && out.starts_with("{c,d}"), || format!("cli oracle gave {out:?}"))?;
    Ok("abc -> {a,b} with supports 3,2,1; abcd -> {c,d}; solver agrees".into())
}

fn responsive() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in 0..50 {
        let n = rng.gen_range(3..=25);
        let c = rng.gen_range(1..=n.min(8));
        let inst = generate(&GenParams {
            students: n,
            schools: 1,
            members: 1,
            capacity: c,
            alpha_mode: AlphaMode::Fixed(int(c)),
            vary: false,
            seed: rng.gen(),
        })
        .unwrap();
        let out = solve_single(&inst, 0, None, &SolverParams::default()).map_err(|e| format!("trial {t}: {e}"))?;
        let mut top = inst.schools[0].committee[0].ranking.order()[..c].to_vec();
        top.sort_unstable();
        ensure(out.selected == top, || format!("trial {t}: chose {:?}, top {top:?}", out.selected))?;
    }
    Ok("50/50 selections equal the top c".into())
}

fn single_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut ok, mut nonconv, mut archived) = (0, 0, Vec::new());
    for t in 0..200 {
        let n = rng.gen_range(3..=25);
        let inst = generate(&GenParams {
            students: n,
            schools: 1,
            members: rng.gen_range(1..=4),
            capacity: rng.gen_range(1..=n.min(8)),
            alpha_mode: AlphaMode::Uniform,
            vary: false,
            seed: rng.gen(),
        })
        .unwrap();
        let school = &inst.schools[0];
        let out = match solve_single(&inst, 0, None, &SolverParams::default()) {
            Ok(o) => o,
            Err(e) if e.is_non_convergence() => {
                nonconv += 1;
                archived.push(archive(&format!("single-{t}"), &inst));
                continue;
            }
            Err(e) => return Err(format!("trial {t}: {e}")),
        };
        let beta = &out.beta;
        ensure(*beta <= int(beta_cap(school)), || format!("trial {t}: beta {beta} over {}", beta_cap(school)))?;
        for (k, a) in school.committee.iter().zip(&out.alpha_prime) {
            ensure((a - &k.alpha).abs() <= int(2) * beta, || format!("trial {t}: alpha {} -> {a} at beta {beta}", k.alpha))?;
        }
        let all: Vec<usize> = (0..n).collect();
        let v = check_acceptable(&adjusted(school, &out.alpha_prime), &all, &out.selected, beta);
        ensure(v.ok, || format!("trial {t}: not acceptable: {:?}", v.violations))?;
        ok += 1;
    }
    let rate = nonconv as f64 / 200.0;
    ensure(rate <= 0.05, || format!("non-convergence {:.1}% over the 5% target; archived {archived:?}", 100.0 * rate))?;
    Ok(format!("{ok}/200 converged and certified, non-convergence {:.1}%", 100.0 * rate))
}

fn random_market(rng: &mut ChaCha8Rng) -> Instance {
    generate(&GenParams {
        students: rng.gen_range(2..=30),
        schools: rng.gen_range(1..=4),
        members: 3,
        capacity: 6,
        alpha_mode: AlphaMode::Uniform,
        vary: true,
        seed: rng.gen(),
    })
    .unwrap()
}

fn market_checks(t: usize, out: &MatchOutcome) -> Result<(), String> {
    let inst = &out.instance;
    for (h, school) in inst.schools.iter().enumerate() {
        let size = school.committee.len();
        let dc = out.c_prime[h].abs_diff(school.capacity);
        ensure(dc <= 2 * size + 1, || format!("trial {t}: capacity shift {dc} at {}", school.label))?;
        ensure(out.betas[h] <= int(beta_cap(school)), || format!("trial {t}: beta {} at {}", out.betas[h], school.label))?;
        for (k, a) in school.committee.iter().zip(&out.alpha_prime[h]) {
            ensure((a - &k.alpha).abs() <= int(2 * size + 2), || format!("trial {t}: alpha shift at {}", k.label))?;
        }
    }
    let adj = inst.with_adjusted(&out.alpha_prime, &out.c_prime);
    let v = committee_match::verify::check_stable(&adj, &out.matching, &out.betas);
    ensure(v.ok, || format!("trial {t}: unstable: {:?}", v.violations))
}

/// Runs the market suite once; returns the bounds verdict and the
/// allocation-demand agreement verdict.
fn market_suite() -> (Check, Check) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let markets: Vec<Instance> = (0..100).map(|_| random_market(&mut rng)).collect();
    let results = Exec::Parallel.map_slice(&markets, |m| solve_match(m, &MeoParams::default()));
    let (mut ok, mut nonconv, mut worst_gap) = (0, 0, 0.0f64);
    let mut bounds: Result<(), String> = Ok(());
    let mut gaps: Result<(), String> = Ok(());
    for (t, (inst, r)) in markets.iter().zip(results).enumerate() {
        match r {
            Ok(out) => {
                if let Err(e) = market_checks(t, &out) {
                    bounds = bounds.and(Err(e));
                } else {
                    ok += 1;
                }
                let gap = out.diagnostics.demand_gap;
                worst_gap = worst_gap.max(gap);
                if gap > 1e-6 {
                    gaps = gaps.and(Err(format!("trial {t}: demand gap {gap:.2e}")));
                }
            }
            Err(e) if e.is_non_convergence() => {
                nonconv += 1;
                archive(&format!("market-{t}"), inst);
            }
            Err(e) => bounds = bounds.and(Err(format!("trial {t}: {e}"))),
        }
    }
    let converged = 100 - nonconv;
    (
        bounds.map(|_| format!("{ok}/{converged} converged markets certified, non-convergence {nonconv}%")),
        gaps.map(|_| format!("max |z - x| {worst_gap:.2e} over {converged} converged states")),
    )
}

fn sandwich() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for t in 0..10_000 {
        let n: usize = rng.gen_range(1..=12);
        let c: usize = rng.gen_range(1..=n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let ranking = Ranking::new(order.clone()).unwrap();
        // start uniform, then move mass between random pairs
        let mut x = vec![rat(c as i64, n as i64); n];
        for _ in 0..2 * n {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let room = x[i].clone().min(Rational::one() - &x[j]);
            let amount = room * rat(rng.gen_range(0..=6), 6);
            x[i] -= &amount;
            x[j] += &amount;
        }
        let d: i64 = rng.gen_range(1..=6);
        let alpha = rat(rng.gen_range(1..=c as i64 * d), d);
        let total: Rational = x.iter().cloned().sum();
        ensure(total == int(c), || format!("case {t}: mass {total}"))?;
        // the α-rank student by direct scan
        let mut cum = Rational::zero();
        let mut expected = None;
        for &i in &order {
            let before = cum.clone();
            cum += &x[i];
            if cum >= alpha {
                expected = Some((cum.clone(), before));
                break;
            }
        }
        let got = upper_masses(&ranking, &x, &alpha, c);
        ensure(got == expected, || format!("case {t}: library {got:?}, scan {expected:?}"))?;
        let (weak, strong) = got.ok_or_else(|| format!("case {t}: no rank student"))?;
        ensure(weak >= alpha && alpha > strong && strong >= &alpha - Rational::one(), || {
            format!("case {t}: {weak} >= {alpha} > {strong} >= alpha - 1 fails")
        })?;
    }
    Ok("10000/10000 exact".into())
}

fn oracle_consistency() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut singles, mut markets, mut skipped) = (0, 0, 0);
    for t in 0..100 {
        if t % 2 == 0 {
            let n = rng.gen_range(3..=10);
            let inst = generate(&GenParams {
                students: n,
                schools: 1,
                members: rng.gen_range(1..=4),
                capacity: rng.gen_range(1..=n.min(4)),
                alpha_mode: AlphaMode::Uniform,
                vary: false,
                seed: rng.gen(),
            })
            .unwrap();
            let out = match solve_single(&inst, 0, None, &SolverParams::default()) {
                Ok(o) if o.certificate.ok => o,
                _ => {
                    skipped += 1;
                    continue;
                }
            };
            let school = adjusted(&inst.schools[0], &out.alpha_prime);
            let all: Vec<usize> = (0..n).collect();
            let sets = oracle::enumerate_acceptable(&school, &all, Exec::Sequential).map_err(|e| e.to_string())?;
            ensure(sets.iter().any(|(s, w)| *s == out.selected && w.contains(&out.beta)), || {
                format!("instance {t}: {:?} at beta {} missing from oracle", out.selected, out.beta)
            })?;
            singles += 1;
        } else {
            let p = GenParams {
                students: rng.gen_range(2..=7),
                schools: rng.gen_range(1..=2),
                members: 2,
                capacity: 3,
                alpha_mode: AlphaMode::Uniform,
                vary: true,
                seed: rng.gen(),
            };
            ensure(p.oracle_compatible(), || format!("instance {t}: shape too large"))?;
            let inst = generate(&p).unwrap();
            let out = match solve_match(&inst, &MeoParams::default()) {
                Ok(o) if o.certificate.ok => o,
                _ => {
                    skipped += 1;
                    continue;
                }
            };
            let adj = out.instance.with_adjusted(&out.alpha_prime, &out.c_prime);
            let stable = oracle::enumerate_stable(&adj, &out.betas, Exec::Sequential).map_err(|e| e.to_string())?;
            ensure(stable.contains(&out.matching), || format!("instance {t}: matching missing from oracle"))?;
            markets += 1;
        }
    }
    Ok(format!("{singles} selections and {markets} matchings found by the oracle, {skipped} uncertified runs skipped"))
}

fn random_demand_monte_carlo() -> Check {
    const DRAWS: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut compared = 0;
    for v in 0..20 {
        let eps = if v % 2 == 0 { 0.1 } else { 0.5 };
        let n = rng.gen_range(2..=6);
        let prices: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.1)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let (y, outside) = leo::random_demand(&prices, &Ranking::new(order.clone()).unwrap(), eps);
        let mut counts = vec![0usize; n + 1];
        for _ in 0..DRAWS {
            let budget = 1.0 - eps * rng.gen::<f64>();
            let pick = order.iter().copied().find(|&i| prices[i] <= budget).unwrap_or(n);
            counts[pick] += 1;
        }
        for (i, p) in y.iter().chain(std::iter::once(&outside)).enumerate() {
            let est = counts[i] as f64 / DRAWS as f64;
            let sigma = (p * (1.0 - p) / DRAWS as f64).sqrt();
            ensure((est - p).abs() <= 3.0 * sigma + 1e-12, || {
                format!("vector {v}, option {i}: closed form {p:.6}, estimate {est:.6}, 3 sigma {:.6}", 3.0 * sigma)
            })?;
            compared += 1;
        }
    }
    Ok(format!("{compared} coordinates within 3 sigma over 20 price vectors"))
}

/// Largest number of members preferring some other candidate to `j`: the
/// largest rejected support when {j} takes the only seat.
fn max_rejected_support(school: &School, n: usize, j: usize) -> usize {
    (0..n)
        .filter(|&i| i != j)
        .map(|i| school.committee.iter().filter(|k| k.ranking.prefers(i, j)).count())
        .max()
        .unwrap_or(0)
}

fn condorcet_probe() -> Check {
    let cyc = fixtures::condorcet_cycle();
    let b = oracle::min_beta(&cyc.schools[0], &[0, 1, 2], Exec::Sequential).map_err(|e| e.to_string())?;
    ensure(b == Some(2), || format!("Condorcet cycle min beta {b:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for t in 0..300 {
        let n = rng.gen_range(2..=7);
        let inst = generate(&GenParams {
            students: n,
            schools: 1,
            members: rng.gen_range(1..=9),
            capacity: 1,
            alpha_mode: AlphaMode::Fixed(int(1)),
            vary: false,
            seed: rng.gen(),
        })
        .unwrap();
        let school = &inst.schools[0];
        let all: Vec<usize> = (0..n).collect();
        let floors: Vec<usize> = (0..n).map(|j| max_rejected_support(school, n, j)).collect();
        let min = oracle::min_beta(school, &all, Exec::Sequential).map_err(|e| e.to_string())?;
        let expected = floors.iter().copied().min();
        ensure(min == expected, || format!("instance {t}: oracle {min:?}, pairwise count {expected:?}"))?;
        let sets = oracle::enumerate_acceptable(school, &all, Exec::Sequential).map_err(|e| e.to_string())?;
        ensure(sets.len() == n, || format!("instance {t}: {} one-seat sets listed", sets.len()))?;
        for (s, w) in &sets {
            let j = s[0];
            ensure(w.lo == floors[j], || format!("instance {t}: window of {j} starts at {}, expected {}", w.lo, floors[j]))?;
            // below the largest rejected support nothing is acceptable
            for beta in 0..floors[j] {
                ensure(!check_acceptable(school, &all, &[j], &int(beta)).ok, || {
                    format!("instance {t}: {{{j}}} acceptable at beta {beta} below {}", floors[j])
                })?;
            }
        }
    }
    Ok("Condorcet cycle needs 2; 300 one-seat instances agree with pairwise counts".into())
}

fn main() {
    let mut criteria: Vec<(&str, Duration, Box<dyn FnOnce() -> Check>)> = vec![
        ("1 example acceptable sets", Duration::from_secs(1), Box::new(two_ranking_example)),
        ("2 non-substitutable pools", Duration::from_secs(1), Box::new(non_substitutable)),
        ("3 responsive choice", Duration::from_secs(5), Box::new(responsive)),
        ("4 single-school bounds", Duration::from_secs(120), Box::new(single_suite)),
    ];
    let mut failed = 0;
    let mut report = |name: &str, limit: Duration, elapsed: Duration, r: Check| {
        let r = r.and_then(|msg| {
            if elapsed <= limit {
                Ok(msg)
            } else {
                Err(format!("{msg}; took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
            }
        });
        match r {
            Ok(msg) => println!("criterion {name}: PASS ({:.2}s) {msg}", elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("criterion {name}: FAIL ({:.2}s) {msg}", elapsed.as_secs_f64());
            }
        }
    };
    let guarded = |f: Box<dyn FnOnce() -> Check>| -> (Check, Duration) {
        let start = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        (r, start.elapsed())
    };
    for (name, limit, f) in criteria.drain(..) {
        let (r, t) = guarded(f);
        report(name, limit, t, r);
    }
    // criteria 5 and 6 share one set of solver runs
    let start = Instant::now();
    let (bounds, gaps) = catch_unwind(market_suite).unwrap_or_else(|_| (Err("panicked".into()), Err("panicked".into())));
    let t = start.elapsed();
    report("5 market bounds", Duration::from_secs(300), t, bounds);
    report("6 allocation equals demand", Duration::from_secs(300), t, gaps);
    let rest: Vec<(&str, Duration, Box<dyn FnOnce() -> Check>)> = vec![
        ("7 upper-set sandwich", Duration::from_secs(30), Box::new(sandwich)),
        ("8 oracle consistency", Duration::from_secs(120), Box::new(oracle_consistency)),
        ("9 random demand closed form", Duration::from_secs(60), Box::new(random_demand_monte_carlo)),
        ("10 one-seat lower bound", Duration::from_secs(30), Box::new(condorcet_probe)),
    ];
    for (name, limit, f) in rest {
        let (r, t) = guarded(f);
        report(name, limit, t, r);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
