//! Synthetic classroom sessions for tests, demos and benchmarks.
//!
//! Groups mix students who passed the individual attempt with students who
//! did not, and every group gets at least one passer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ChatPayload, CodeIssue, EventBody, EventRecord, MessageCategory, RosterGroup, RosterPayload, StudentId,
    SubmissionPayload, MAX_GROUP_SIZE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub students: usize,
    pub group_size: usize,
    pub seed: u64,
    /// Share of students marked as having passed; raised if needed so
    /// every group can get one.
    pub pass_fraction: f64,
    pub duration_s: u32,
    pub tests_total: u32,
    /// Mean seconds between messages within one group.
    pub mean_message_gap_s: f64,
    /// Write message categories into the log instead of leaving them to
    /// live tagging.
    pub pre_tag: bool,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            students: 111,
            group_size: 3,
            seed: 0,
            pass_fraction: 0.4,
            duration_s: 300,
            tests_total: 4,
            mean_message_gap_s: 12.0,
            pre_tag: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub student_id: StudentId,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub students: Vec<StudentRecord>,
    pub groups: Vec<RosterGroup>,
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixtureError {
    #[error("need at least one student")]
    NoStudents,
    #[error("group size must be between 1 and {MAX_GROUP_SIZE}, got {0}")]
    InvalidGroupSize(usize),
    #[error("{passers} passers cannot cover {groups} groups")]
    TooFewPassers { passers: usize, groups: usize },
    #[error("tests_total must be positive")]
    NoTests,
}

const ID_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

fn opaque_id<R: Rng>(rng: &mut R, len: usize) -> String {
    (0..len).map(|_| ID_ALPHABET[rng.random_range(0..ID_ALPHABET.len())] as char).collect()
}

/// Sizes of `groups` groups holding `students` students, differing by at
/// most one.
fn group_sizes(students: usize, groups: usize) -> Vec<usize> {
    (0..groups).map(|i| students / groups + usize::from(i < students % groups)).collect()
}

/// Deals one passer to every group, then fills the remaining seats with
/// non-passers before any further passers.
pub fn assign_groups<R: Rng>(students: &[StudentRecord], group_size: usize, rng: &mut R) -> Result<Vec<Vec<StudentId>>, FixtureError> {
    if students.is_empty() {
        return Err(FixtureError::NoStudents);
    }
    if group_size == 0 || group_size > MAX_GROUP_SIZE {
        return Err(FixtureError::InvalidGroupSize(group_size));
    }
    let groups = students.len().div_ceil(group_size);
    let mut passers: Vec<&StudentRecord> = students.iter().filter(|s| s.passed).collect();
    let mut others: Vec<&StudentRecord> = students.iter().filter(|s| !s.passed).collect();
    if passers.len() < groups {
        return Err(FixtureError::TooFewPassers { passers: passers.len(), groups });
    }
    passers.shuffle(rng);
    others.shuffle(rng);
    let mut out: Vec<Vec<StudentId>> = passers.drain(..groups).map(|s| vec![s.student_id.clone()]).collect();
    let mut rest = others.into_iter().chain(passers);
    for (group, size) in out.iter_mut().zip(group_sizes(students.len(), groups)) {
        while group.len() < size {
            group.push(rest.next().expect("sizes sum to the student count").student_id.clone());
        }
    }
    Ok(out)
}

const ON_TASK: &[(&str, MessageCategory)] = &[
    ("how do I loop over the list", MessageCategory::HelpSeeking),
    ("where is the count variable used", MessageCategory::HelpSeeking),
    ("my loop returns zero every time", MessageCategory::HelpSeeking),
    ("why is the index out of range", MessageCategory::HelpSeeking),
    ("start the count at zero before the loop", MessageCategory::HelpGiving),
    ("check if each number is less than 100", MessageCategory::HelpGiving),
    ("you need to return count after the loop", MessageCategory::HelpGiving),
    ("try range len of the list", MessageCategory::HelpGiving),
    ("I passed two of the four tests", MessageCategory::ExchangingInfoFeedback),
    ("the hidden test uses an empty list", MessageCategory::ExchangingInfoFeedback),
    ("your condition looks right to me", MessageCategory::ExchangingInfoFeedback),
    ("so we compare each element then add one", MessageCategory::JointReflection),
    ("maybe the problem is the less than sign", MessageCategory::JointReflection),
    ("we almost have it", MessageCategory::MutualEncouragement),
    ("nice job that worked", MessageCategory::MutualEncouragement),
];

const OFF_TASK: &[&str] = &["wassup", "anyone going to lunch after", "that movie last weekend was great", "hi", "lol"];

/// A typical interpreter message for each issue.
fn error_message(issue: CodeIssue) -> &'static str {
    match issue {
        CodeIssue::NoCompilingError | CodeIssue::LogicalError => "",
        CodeIssue::TypeError => "'int' object is not subscriptable",
        CodeIssue::NameError => "name 'count' is not defined",
        CodeIssue::IndentationError => "expected an indented block",
        CodeIssue::IndexError => "list index out of range",
        CodeIssue::SyntaxError => "invalid syntax",
        CodeIssue::OtherError => "unexpected error",
    }
}

fn failing_submission<R: Rng>(rng: &mut R, student: &str, tests_total: u32, best: u32) -> SubmissionPayload {
    let runtime = [CodeIssue::TypeError, CodeIssue::NameError, CodeIssue::IndentationError, CodeIssue::IndexError, CodeIssue::SyntaxError];
    let (tests_passed, error_type) = if rng.random_bool(0.5) {
        (0, runtime[rng.random_range(0..runtime.len())])
    } else {
        (rng.random_range(best.min(tests_total - 1)..tests_total), CodeIssue::LogicalError)
    };
    SubmissionPayload {
        student_id: student.to_owned(),
        tests_passed,
        tests_total,
        error_type,
        error_message: error_message(error_type).to_owned(),
    }
}

/// A full session: roster at 0, then submissions and chat up to
/// `duration_s`, sorted by time.
pub fn generate_fixture(config: &FixtureConfig) -> Result<Fixture, FixtureError> {
    if config.tests_total == 0 {
        return Err(FixtureError::NoTests);
    }
    if config.students == 0 {
        return Err(FixtureError::NoStudents);
    }
    if config.group_size == 0 || config.group_size > MAX_GROUP_SIZE {
        return Err(FixtureError::InvalidGroupSize(config.group_size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let groups_needed = config.students.div_ceil(config.group_size);
    let passers = ((config.students as f64 * config.pass_fraction.clamp(0.0, 1.0)).round() as usize).max(groups_needed);
    let mut students: Vec<StudentRecord> =
        (0..config.students).map(|i| StudentRecord { student_id: opaque_id(&mut rng, 20), passed: i < passers }).collect();
    students.shuffle(&mut rng);
    let members = assign_groups(&students, config.group_size, &mut rng)?;
    let groups: Vec<RosterGroup> =
        members.into_iter().map(|member_ids| RosterGroup { group_id: opaque_id(&mut rng, 20), member_ids }).collect();
    let passed = |id: &str| students.iter().any(|s| s.student_id == id && s.passed);

    let duration = config.duration_s.max(1);
    let mut timed: Vec<(u32, usize, EventBody)> = Vec::new();
    let push = |t: u32, body: EventBody, timed: &mut Vec<(u32, usize, EventBody)>| {
        let seq = timed.len();
        timed.push((t, seq, body));
    };
    for group in &groups {
        for student in &group.member_ids {
            let first = rng.random_range(1..=duration.min(20));
            if passed(student) {
                let sub = SubmissionPayload {
                    student_id: student.clone(),
                    tests_passed: config.tests_total,
                    tests_total: config.tests_total,
                    error_type: CodeIssue::NoCompilingError,
                    error_message: String::new(),
                };
                push(first, EventBody::Submission(sub), &mut timed);
            } else {
                let mut t = first;
                let mut best = 0;
                while t <= duration {
                    let sub = if rng.random_bool(0.15) {
                        SubmissionPayload {
                            student_id: student.clone(),
                            tests_passed: config.tests_total,
                            tests_total: config.tests_total,
                            error_type: CodeIssue::NoCompilingError,
                            error_message: String::new(),
                        }
                    } else {
                        failing_submission(&mut rng, student, config.tests_total, best)
                    };
                    best = best.max(sub.tests_passed);
                    let done = sub.tests_passed == config.tests_total;
                    push(t, EventBody::Submission(sub), &mut timed);
                    if done {
                        break;
                    }
                    t += rng.random_range(15..=60);
                }
            }
        }
        let talkative: f64 = rng.random_range(0.3..1.6);
        let mut t = rng.random_range(0.0..config.mean_message_gap_s.max(1.0) * 2.0);
        loop {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            t += -u.ln() * config.mean_message_gap_s.max(0.5) / talkative;
            let second = t.ceil() as u32;
            if second > duration {
                break;
            }
            let sender = &group.member_ids[rng.random_range(0..group.member_ids.len())];
            let (text, category) = if rng.random_bool(0.15) {
                (OFF_TASK[rng.random_range(0..OFF_TASK.len())], MessageCategory::NotClassRelated)
            } else {
                ON_TASK[rng.random_range(0..ON_TASK.len())]
            };
            let chat = ChatPayload {
                student_id: sender.clone(),
                group_id: group.group_id.clone(),
                text: text.to_owned(),
                category: config.pre_tag.then_some(category),
            };
            push(second.max(1), EventBody::ChatMessage(chat), &mut timed);
        }
    }
    timed.sort_by_key(|(t, seq, _)| (*t, *seq));
    let mut events = vec![EventRecord::session_start(), EventRecord::new(0.0, EventBody::Roster(RosterPayload { groups: groups.clone() }))];
    events.extend(timed.into_iter().map(|(t, _, body)| EventRecord::new(f64::from(t), body)));
    Ok(Fixture { students, groups, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_event_log_str, write_event_log};
    use proptest::prelude::*;
    use std::collections::{BTreeMap, BTreeSet};

    #[test]
    fn reference_session_shape() {
        let f = generate_fixture(&FixtureConfig::default()).unwrap();
        assert_eq!(f.groups.len(), 37);
        assert!(f.groups.iter().all(|g| g.member_ids.len() == 3));
        let passed: BTreeSet<&str> = f.students.iter().filter(|s| s.passed).map(|s| s.student_id.as_str()).collect();
        assert!(f.groups.iter().all(|g| g.member_ids.iter().any(|m| passed.contains(m.as_str()))));
        let round_trip = parse_event_log_str(&write_event_log(&f.events)).unwrap();
        assert_eq!(round_trip, f.events);
        assert_eq!(generate_fixture(&FixtureConfig::default()).unwrap(), f, "deterministic for a seed");
    }

    #[test]
    fn errors() {
        let s = |passed| StudentRecord { student_id: "x".into(), passed };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(assign_groups(&[], 3, &mut rng), Err(FixtureError::NoStudents));
        assert_eq!(assign_groups(&[s(true)], 4, &mut rng), Err(FixtureError::InvalidGroupSize(4)));
        assert_eq!(assign_groups(&[s(false), s(true)], 1, &mut rng), Err(FixtureError::TooFewPassers { passers: 1, groups: 2 }));
    }

    proptest! {
        #[test]
        fn every_group_has_a_passer(
            n in 1usize..150,
            size in 1usize..=3,
            extra in 0usize..50,
            seed in any::<u64>(),
        ) {
            let groups = n.div_ceil(size);
            let passers = (groups + extra).min(n);
            let students: Vec<StudentRecord> =
                (0..n).map(|i| StudentRecord { student_id: format!("s{i}"), passed: i < passers }).collect();
            let out = assign_groups(&students, size, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(out.len(), groups);
            let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
            for g in &out {
                prop_assert!(!g.is_empty() && g.len() <= size);
                prop_assert!(g.iter().any(|m| students.iter().any(|s| &s.student_id == m && s.passed)));
                for m in g {
                    *seen.entry(m.as_str()).or_default() += 1;
                }
            }
            prop_assert_eq!(seen.len(), n);
            prop_assert!(seen.values().all(|c| *c == 1));
            let sizes: BTreeSet<usize> = out.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
