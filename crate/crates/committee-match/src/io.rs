//! JSON instance and solution files.
//!
//! Both formats carry `"format": 1`. Rank parameters and thresholds are
//! written as exact fraction strings such as `"3/2"`; plain integers are also
//! accepted on input. Unknown fields are an error in strict mode and a
//! warning otherwise.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::leo::SolverParams;
use crate::meo::MeoParams;
use crate::model::{Instance, Matching, Member, Ranking, School, Student, StudentId};
use crate::num::Rational;
use crate::pipeline::{certify_match, certify_single, Diagnostics, MatchOutcome, SingleOutcome};
use crate::verify::Verdict;

pub const FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format {0}, expected {FORMAT}")]
    Format(u32),
    #[error("unknown fields: {}", .0.join(", "))]
    UnknownFields(Vec<String>),
    #[error("unknown {kind} {label:?}")]
    Label { kind: &'static str, label: String },
    #[error("invalid instance: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("solution does not fit the instance: {0}")]
    Mismatch(String),
}

mod fraction {
    use serde::{de, Deserialize, Deserializer, Serializer};

    use crate::num::Rational;

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Int(i64),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Text(t) => t.trim().parse().map_err(|_| de::Error::custom(format!("not a fraction: {t:?}"))),
            Raw::Int(n) => Ok(Rational::from_integer(n.into())),
        }
    }
}

type Extra = BTreeMap<String, Value>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentEntry {
    pub id: String,
    pub prefs: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub dummy: bool,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberEntry {
    pub id: String,
    #[serde(with = "fraction")]
    pub alpha: Rational,
    pub ranking: Vec<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchoolEntry {
    pub id: String,
    pub capacity: usize,
    pub committee: Vec<MemberEntry>,
    #[serde(flatten)]
    pub extra: Extra,
}

/// Per-instance solver settings; every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl SolverOverrides {
    pub fn apply_leo(&self, p: &mut SolverParams) {
        p.eps = self.eps.or(p.eps);
        p.damping = self.damping.unwrap_or(p.damping);
        p.tol = self.tol.unwrap_or(p.tol);
        p.max_iter = self.max_iter.unwrap_or(p.max_iter);
        p.seed = self.seed.unwrap_or(p.seed);
    }

    pub fn apply_meo(&self, p: &mut MeoParams) {
        p.eps = self.eps.or(p.eps);
        p.delta = self.delta.or(p.delta);
        p.damping = self.damping.unwrap_or(p.damping);
        p.tol = self.tol.unwrap_or(p.tol);
        p.max_iter = self.max_iter.unwrap_or(p.max_iter);
        p.seed = self.seed.unwrap_or(p.seed);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub format: u32,
    pub students: Vec<StudentEntry>,
    pub schools: Vec<SchoolEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverOverrides>,
    #[serde(flatten)]
    pub extra: Extra,
}

fn unknown(prefix: &str, extra: &Extra, out: &mut Vec<String>) {
    out.extend(extra.keys().map(|k| format!("{prefix}{k}")));
}

impl InstanceFile {
    pub fn from_instance(instance: &Instance, solver: Option<SolverOverrides>) -> Self {
        let names: Vec<&str> = instance.students.iter().map(|s| s.label.as_str()).collect();
        InstanceFile {
            format: FORMAT,
            students: instance
                .students
                .iter()
                .map(|s| StudentEntry {
                    id: s.label.clone(),
                    prefs: s.prefs.iter().map(|&h| instance.schools[h].label.clone()).collect(),
                    dummy: s.is_dummy,
                    extra: Extra::new(),
                })
                .collect(),
            schools: instance
                .schools
                .iter()
                .map(|h| SchoolEntry {
                    id: h.label.clone(),
                    capacity: h.capacity,
                    committee: h
                        .committee
                        .iter()
                        .map(|k| MemberEntry {
                            id: k.label.clone(),
                            alpha: k.alpha.clone(),
                            ranking: k.ranking.order().iter().map(|&i| names[i].to_string()).collect(),
                            extra: Extra::new(),
                        })
                        .collect(),
                    extra: Extra::new(),
                })
                .collect(),
            solver,
            extra: Extra::new(),
        }
    }

    /// Dotted paths of every field the format does not know.
    pub fn unknown_fields(&self) -> Vec<String> {
        let mut out = Vec::new();
        unknown("", &self.extra, &mut out);
        if let Some(s) = &self.solver {
            unknown("solver.", &s.extra, &mut out);
        }
        for (i, s) in self.students.iter().enumerate() {
            unknown(&format!("students[{i}]."), &s.extra, &mut out);
        }
        for (h, s) in self.schools.iter().enumerate() {
            unknown(&format!("schools[{h}]."), &s.extra, &mut out);
            for (k, m) in s.committee.iter().enumerate() {
                unknown(&format!("schools[{h}].committee[{k}]."), &m.extra, &mut out);
            }
        }
        out
    }

    pub fn to_instance(&self) -> Result<Instance, IoError> {
        if self.format != FORMAT {
            return Err(IoError::Format(self.format));
        }
        let student_ix: HashMap<&str, usize> = self.students.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        let school_ix: HashMap<&str, usize> = self.schools.iter().enumerate().map(|(h, s)| (s.id.as_str(), h)).collect();
        let lookup = |map: &HashMap<&str, usize>, kind: &'static str, label: &str| {
            map.get(label).copied().ok_or_else(|| IoError::Label { kind, label: label.into() })
        };
        let mut students = Vec::new();
        for s in &self.students {
            let prefs = s.prefs.iter().map(|p| lookup(&school_ix, "school", p)).collect::<Result<_, _>>()?;
            students.push(Student { label: s.id.clone(), prefs, is_dummy: s.dummy });
        }
        let mut schools = Vec::new();
        for h in &self.schools {
            let mut committee = Vec::new();
            for k in &h.committee {
                let order: Vec<usize> =
                    k.ranking.iter().map(|i| lookup(&student_ix, "student", i)).collect::<Result<_, _>>()?;
                let ranking = Ranking::new(order)
                    .ok_or_else(|| IoError::Invalid(vec![format!("ranking of {} is not a permutation", k.id)]))?;
                committee.push(Member { label: k.id.clone(), ranking, alpha: k.alpha.clone() });
            }
            schools.push(School { label: h.id.clone(), capacity: h.capacity, committee });
        }
        let inst = Instance { students, schools };
        let v = inst.validate();
        if !v.is_empty() {
            return Err(IoError::Invalid(v.into_iter().map(|v| v.0).collect()));
        }
        Ok(inst)
    }
}

/// A parsed instance file.
#[derive(Clone, Debug)]
pub struct LoadedInstance {
    pub instance: Instance,
    pub solver: SolverOverrides,
    /// Unknown fields, when parsing leniently.
    pub warnings: Vec<String>,
}

pub fn parse_instance(text: &str, strict: bool) -> Result<LoadedInstance, IoError> {
    let file: InstanceFile = serde_json::from_str(text)?;
    let unknown = file.unknown_fields();
    if strict && !unknown.is_empty() {
        return Err(IoError::UnknownFields(unknown));
    }
    let instance = file.to_instance()?;
    let warnings = unknown.into_iter().map(|f| format!("ignored unknown field {f}")).collect();
    Ok(LoadedInstance { instance, solver: file.solver.unwrap_or_default(), warnings })
}

pub fn write_instance(instance: &Instance, solver: Option<SolverOverrides>) -> String {
    serde_json::to_string_pretty(&InstanceFile::from_instance(instance, solver)).expect("instance serializes") + "\n"
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolutionKind {
    Single,
    Match,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberResult {
    pub id: String,
    #[serde(with = "fraction")]
    pub alpha: Rational,
    #[serde(with = "fraction")]
    pub adjusted_alpha: Rational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchoolResult {
    pub id: String,
    #[serde(with = "fraction")]
    pub beta: Rational,
    pub capacity: usize,
    pub adjusted_capacity: usize,
    pub members: Vec<MemberResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub student: String,
    pub school: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsEntry {
    pub residual: f64,
    pub iterations: usize,
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub beta_raw: Vec<f64>,
    pub demand_gap: f64,
}

impl From<&Diagnostics> for DiagnosticsEntry {
    fn from(d: &Diagnostics) -> Self {
        DiagnosticsEntry {
            residual: d.residual,
            iterations: d.iterations,
            eps: d.eps,
            delta: d.delta,
            beta_raw: d.beta_raw.clone(),
            demand_gap: d.demand_gap,
        }
    }
}

/// Everything needed to re-verify an answer without the solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format: u32,
    pub kind: SolutionKind,
    /// Single-school answers: the school, its applicant pool and selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub school: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applicants: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<Vec<String>>,
    /// Market answers: every student of the padded instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<Vec<AssignmentEntry>>,
    pub schools: Vec<SchoolResult>,
    pub certificate: Verdict,
    pub diagnostics: DiagnosticsEntry,
}

fn school_result(school: &School, beta: &Rational, c_prime: usize, alpha_prime: &[Rational]) -> SchoolResult {
    SchoolResult {
        id: school.label.clone(),
        beta: beta.clone(),
        capacity: school.capacity,
        adjusted_capacity: c_prime,
        members: school
            .committee
            .iter()
            .zip(alpha_prime)
            .map(|(k, a)| MemberResult { id: k.label.clone(), alpha: k.alpha.clone(), adjusted_alpha: a.clone() })
            .collect(),
    }
}

impl SolutionFile {
    pub fn from_single(instance: &Instance, out: &SingleOutcome) -> Self {
        let label = |i: &StudentId| instance.students[*i].label.clone();
        let school = &instance.schools[out.school];
        SolutionFile {
            format: FORMAT,
            kind: SolutionKind::Single,
            school: Some(school.label.clone()),
            applicants: Some(out.applicants.iter().map(label).collect()),
            selected: Some(out.selected.iter().map(label).collect()),
            assignment: None,
            schools: vec![school_result(school, &out.beta, out.selected.len(), &out.alpha_prime)],
            certificate: out.certificate.clone(),
            diagnostics: (&out.diagnostics).into(),
        }
    }

    pub fn from_match(out: &MatchOutcome) -> Self {
        let inst = &out.instance;
        SolutionFile {
            format: FORMAT,
            kind: SolutionKind::Match,
            school: None,
            applicants: None,
            selected: None,
            assignment: Some(
                inst.students
                    .iter()
                    .enumerate()
                    .map(|(i, s)| AssignmentEntry {
                        student: s.label.clone(),
                        school: out.matching.school_of(i).map(|h| inst.schools[h].label.clone()),
                    })
                    .collect(),
            ),
            schools: inst
                .schools
                .iter()
                .enumerate()
                .map(|(h, s)| school_result(s, &out.betas[h], out.c_prime[h], &out.alpha_prime[h]))
                .collect(),
            certificate: out.certificate.clone(),
            diagnostics: (&out.diagnostics).into(),
        }
    }
}

pub fn parse_solution(text: &str) -> Result<SolutionFile, IoError> {
    let sol: SolutionFile = serde_json::from_str(text)?;
    if sol.format != FORMAT {
        return Err(IoError::Format(sol.format));
    }
    Ok(sol)
}

pub fn write_solution(sol: &SolutionFile) -> String {
    serde_json::to_string_pretty(sol).expect("solution serializes") + "\n"
}

fn index_of<'a>(labels: impl Iterator<Item = &'a str>, kind: &'static str, want: &str) -> Result<usize, IoError> {
    labels
        .into_iter()
        .position(|l| l == want)
        .ok_or_else(|| IoError::Label { kind, label: want.into() })
}

fn adjusted_alphas(school: &School, res: &SchoolResult) -> Result<Vec<Rational>, IoError> {
    if res.members.len() != school.committee.len() {
        return Err(IoError::Mismatch(format!("school {} lists {} members", res.id, res.members.len())));
    }
    school
        .committee
        .iter()
        .zip(&res.members)
        .map(|(k, m)| {
            if k.label == m.id {
                Ok(m.adjusted_alpha.clone())
            } else {
                Err(IoError::Mismatch(format!("member {} where {} was expected", m.id, k.label)))
            }
        })
        .collect()
}

/// Recomputes a solution's certificate from the instance alone.
pub fn verify_solution(instance: &Instance, sol: &SolutionFile) -> Result<Verdict, IoError> {
    match sol.kind {
        SolutionKind::Single => {
            let missing = |f: &str| IoError::Mismatch(format!("single-school solution without {f}"));
            let label = sol.school.as_deref().ok_or_else(|| missing("school"))?;
            let h = index_of(instance.schools.iter().map(|s| s.label.as_str()), "school", label)?;
            let ids = |names: &[String]| -> Result<Vec<StudentId>, IoError> {
                names
                    .iter()
                    .map(|n| index_of(instance.students.iter().map(|s| s.label.as_str()), "student", n))
                    .collect()
            };
            let applicants = ids(sol.applicants.as_deref().ok_or_else(|| missing("applicants"))?)?;
            let selected = ids(sol.selected.as_deref().ok_or_else(|| missing("selected"))?)?;
            let [res] = sol.schools.as_slice() else { return Err(missing("exactly one school result")) };
            let school = &instance.schools[h];
            let alpha_prime = adjusted_alphas(school, res)?;
            Ok(certify_single(school, &applicants, &selected, &alpha_prime, &res.beta))
        }
        SolutionKind::Match => {
            let padded = instance.pad_with_dummies();
            let entries = sol.assignment.as_ref().ok_or_else(|| IoError::Mismatch("market solution without assignment".into()))?;
            if entries.len() != padded.num_students() {
                return Err(IoError::Mismatch(format!(
                    "{} assignment entries for {} students after padding",
                    entries.len(),
                    padded.num_students()
                )));
            }
            let mut assignment = vec![None; padded.num_students()];
            for e in entries {
                let i = index_of(padded.students.iter().map(|s| s.label.as_str()), "student", &e.student)?;
                assignment[i] = match &e.school {
                    Some(l) => Some(index_of(padded.schools.iter().map(|s| s.label.as_str()), "school", l)?),
                    None => None,
                };
            }
            if sol.schools.len() != padded.num_schools() {
                return Err(IoError::Mismatch(format!("{} school results for {} schools", sol.schools.len(), padded.num_schools())));
            }
            let mut betas = Vec::new();
            let mut alpha_prime = Vec::new();
            let mut c_prime = Vec::new();
            for (school, res) in padded.schools.iter().zip(&sol.schools) {
                if school.label != res.id {
                    return Err(IoError::Mismatch(format!("school {} where {} was expected", res.id, school.label)));
                }
                betas.push(res.beta.clone());
                alpha_prime.push(adjusted_alphas(school, res)?);
                c_prime.push(res.adjusted_capacity);
            }
            let matching = Matching::new(assignment, padded.num_schools());
            Ok(certify_match(&padded, &matching, &betas, &alpha_prime, &c_prime))
        }
    }
}
