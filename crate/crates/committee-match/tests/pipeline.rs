use committee_match::fixtures;
use committee_match::gen::{generate, AlphaMode, GenParams};
use committee_match::io::{self, SolutionFile};
use committee_match::leo::SolverParams;
use committee_match::meo::MeoParams;
use committee_match::num::int;
use committee_match::pipeline::{solve_match, solve_single};

#[test]
fn single_solutions_reverify_from_files() {
    for inst in [fixtures::two_rankings(), fixtures::non_substitutable(), fixtures::condorcet_cycle()] {
        let out = solve_single(&inst, 0, None, &SolverParams::default()).unwrap();
        assert!(out.certificate.ok);
        let text = io::write_solution(&SolutionFile::from_single(&inst, &out));
        let sol = io::parse_solution(&text).unwrap();
        let reparsed = io::parse_instance(&io::write_instance(&inst, None), true).unwrap().instance;
        assert_eq!(io::verify_solution(&reparsed, &sol).unwrap(), sol.certificate);
    }
}

#[test]
fn condorcet_cycle_needs_threshold_two() {
    let out = solve_single(&fixtures::condorcet_cycle(), 0, None, &SolverParams::default()).unwrap();
    assert!(out.certificate.ok);
    assert!(out.beta >= int(2));
}

#[test]
fn market_solutions_reverify_from_files() {
    for seed in 0..4 {
        let inst = generate(&GenParams {
            students: 8,
            schools: 2,
            members: 2,
            capacity: 3,
            alpha_mode: AlphaMode::Uniform,
            vary: true,
            seed,
        })
        .unwrap();
        let Ok(out) = solve_match(&inst, &MeoParams::default()) else { continue };
        let sol = SolutionFile::from_match(&out);
        let back = io::parse_solution(&io::write_solution(&sol)).unwrap();
        assert_eq!(back, sol);
        assert_eq!(io::verify_solution(&inst, &back).unwrap(), sol.certificate);
    }
}

#[test]
fn invalid_instances_are_refused() {
    let mut inst = fixtures::two_rankings();
    inst.schools[0].capacity = 0;
    assert!(solve_single(&inst, 0, None, &SolverParams::default()).is_err());
}
