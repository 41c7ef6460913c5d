//! Deterministic offline backend.
//!
//! Answers are pure functions of the request payload and the seed:
//!
//! * tagging: a question mark or "help" is help-seeking; greetings and
//!   off-topic words are not class related; explanation verbs are
//!   help-giving; anything else is information exchange.
//! * ranking: a severity score from pass rate, silence, participation and
//!   repeated errors; ties break by id.
//! * issue summaries: aspects ordered by frequency, rendered as a sentence.
//! * topic titles: the three most frequent content words of the input.
//! * embeddings: token counts feature-hashed into 64 buckets, L2-normalized.

use std::collections::BTreeMap;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{Backend, GatewayError, StructuredRequest, Task};

pub const STUB_EMBEDDING_DIM: usize = 64;

const GREETINGS_AND_OFF_TOPIC: &[&str] = &[
    "hi", "hello", "hey", "heyy", "yo", "sup", "wassup", "whatsup", "lol", "lmao", "haha", "bye", "weekend", "game",
    "games", "lunch", "dinner", "movie", "party", "bored", "tired",
];

const EXPLANATION_VERBS: &[&str] = &[
    "initializes", "initialize", "returns", "return", "means", "because", "try", "use", "need", "needs", "should",
    "change", "add", "set", "loop", "loops", "checks", "check", "iterate", "increment", "compare", "append",
];

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "so", "is", "are", "was", "were", "be", "it", "its", "to", "of", "in", "on",
    "for", "with", "that", "this", "i", "you", "we", "they", "he", "she", "my", "your", "our", "do", "does", "did",
    "what", "where", "how", "why", "when", "if", "then", "at", "as", "by", "from", "me", "im", "not", "no", "yes",
    "just", "can", "have", "has", "there", "like", "ok", "okay",
];

/// Lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubBackend {
    seed: u64,
    dim: usize,
}

impl StubBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed, dim: STUB_EMBEDDING_DIM }
    }

    pub fn with_dim(seed: u64, dim: usize) -> Self {
        Self { seed, dim: dim.max(1) }
    }

    /// Bucket index of a token under this seed.
    pub fn bucket(&self, token: &str) -> usize {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest = hasher.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(head) % self.dim as u64) as usize
    }
}

impl Backend for StubBackend {
    fn complete(&self, request: &StructuredRequest, _feedback: &[String]) -> Result<String, GatewayError> {
        let payload = &request.user_payload;
        let answer = match request.task {
            Task::TagMessage => json!({ "category": tag(payload["message"].as_str().unwrap_or_default()) }),
            Task::RankGroups => rank_groups(payload),
            Task::RankStudents => rank_students(payload),
            Task::SummarizeGroupIssues => summarize_issues(payload, "groupIssueList"),
            Task::SummarizeStudentIssues => summarize_issues(payload, "studentIssueList"),
            Task::SummarizeTopic => json!({ "summary": topic_title(payload) }),
        };
        Ok(answer.to_string())
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            let trimmed = text.trim();
            if trimmed.is_empty() {
                return Err(GatewayError::InvalidInput("cannot embed empty text".into()));
            }
            tokens.push(trimmed.to_string());
        }
        let mut v = vec![0.0; self.dim];
        for token in &tokens {
            v[self.bucket(token)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

fn tag(message: &str) -> &'static str {
    let tokens = tokenize(message);
    if message.contains('?') || tokens.iter().any(|t| t == "help") {
        "help-seeking"
    } else if tokens.iter().any(|t| GREETINGS_AND_OFF_TOPIC.contains(&t.as_str())) {
        "not related to the class"
    } else if tokens.iter().any(|t| EXPLANATION_VERBS.contains(&t.as_str())) {
        "help-giving"
    } else {
        "exchanging information and feedback"
    }
}

const ASPECT_PASS: &str = "pass rate";
const ASPECT_MESSAGES: &str = "amount of related messages in the conversation";
const ASPECT_TOPIC: &str = "topic of conversation";
const ASPECT_PARTICIPATION: &str = "member's participation in discussion";
const ASPECT_CODE: &str = "code issue";

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or(0.0)
}

fn off_topic_share(messages: &[Value]) -> f64 {
    if messages.is_empty() {
        return 0.0;
    }
    let off = messages
        .iter()
        .filter(|m| m["activity"].as_str().is_some_and(|a| a.eq_ignore_ascii_case("not related to the class")))
        .count();
    off as f64 / messages.len() as f64
}

struct Assessment {
    id: String,
    severity: f64,
    aspect: &'static str,
    issue: String,
}

fn ranked_list(mut assessed: Vec<Assessment>, key: &str) -> Value {
    assessed.sort_by(|a, b| b.severity.total_cmp(&a.severity).then_with(|| a.id.cmp(&b.id)));
    let list: Vec<Value> = assessed
        .into_iter()
        .enumerate()
        .map(|(i, a)| json!({ "rank": i + 1, "id": a.id, "aspect": a.aspect, "issue": a.issue }))
        .collect();
    json!({ key: list })
}

fn entries(payload: &Value, key: &str) -> Vec<(String, Value)> {
    payload[key]
        .as_object()
        .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
        .unwrap_or_default()
}

fn rank_groups(payload: &Value) -> Value {
    let assessed = entries(payload, "groupHistory")
        .into_iter()
        .map(|(id, g)| {
            let status = &g["currentStatus"];
            let pass = num(&status["groupPassRate"]);
            let activity = num(&status["teamActivity"]);
            let participated = num(&status["membersParticipatedNum"]);
            let members = g["teamMembers"].as_array().map_or(1, Vec::len).max(1) as f64;
            let messages = g["messageHistory"].as_array().cloned().unwrap_or_default();
            let submissions = g["submissionHistory"].as_array().map_or(0, Vec::len);
            let off_topic = off_topic_share(&messages);
            let severity = 2.0 * (100.0 - pass) / 100.0
                + if messages.is_empty() { 1.5 } else { 0.0 }
                + (1.0 - participated / members).max(0.0)
                + off_topic
                + if activity < 1.0 { 0.5 } else { 0.0 };
            let (aspect, issue) = if messages.is_empty() {
                let issue = if submissions > 0 {
                    "No active conversation despite submission attempts."
                } else {
                    "No active conversation and no submission attempts."
                };
                (ASPECT_MESSAGES, issue)
            } else if off_topic > 0.5 {
                (ASPECT_TOPIC, "The main content of the conversation is not related to class.")
            } else if participated < members {
                (ASPECT_PARTICIPATION, "Not every member is taking part in the discussion.")
            } else if pass < 100.0 {
                (ASPECT_PASS, "Keeps discussing the problem but the pass rate is not increasing.")
            } else {
                (ASPECT_PASS, "The group has passed all tests.")
            };
            Assessment { id, severity, aspect, issue: issue.to_string() }
        })
        .collect();
    ranked_list(assessed, "rankedGroupList")
}

fn rank_students(payload: &Value) -> Value {
    let assessed = entries(payload, "studentHistory")
        .into_iter()
        .map(|(id, s)| {
            let pass = num(&s["currentStatus"]["passRate"]);
            let messages = s["messageHistory"].as_array().cloned().unwrap_or_default();
            let submissions = s["submissionHistory"].as_array().cloned().unwrap_or_default();
            let related = messages
                .iter()
                .filter(|m| !m["activity"].as_str().is_some_and(|a| a.eq_ignore_ascii_case("not related to the class")))
                .count();
            let repeated_error = submissions.len() >= 2 && {
                let last = &submissions[submissions.len() - 1]["errorType"];
                let prev = &submissions[submissions.len() - 2]["errorType"];
                last == prev && last.as_str().is_some_and(|e| e != "No Compiling Error")
            };
            let severity = 2.0 * (100.0 - pass) / 100.0
                + if related == 0 { 1.0 } else { 0.0 }
                + if repeated_error { 1.0 } else { 0.0 }
                + if submissions.is_empty() { 0.5 } else { 0.0 };
            let (aspect, issue) = if repeated_error {
                (ASPECT_CODE, "Keeps having the same code issue across submissions.")
            } else if related == 0 && !messages.is_empty() {
                (ASPECT_TOPIC, "The main content of the student's messages is not related to class.")
            } else if related == 0 {
                (ASPECT_MESSAGES, "Insufficient discussion with group members.")
            } else if pass < 100.0 {
                (ASPECT_PASS, "Asking for help but the pass rate is not increasing.")
            } else {
                (ASPECT_PASS, "The student has passed all tests.")
            };
            Assessment { id, severity, aspect, issue: issue.to_string() }
        })
        .collect();
    ranked_list(assessed, "rankedStudentList")
}

fn aspect_phrase(aspect: &str, leading: bool) -> &'static str {
    match (aspect.trim(), leading) {
        (ASPECT_PASS, true) => "Low pass rates",
        (ASPECT_PASS, false) => "low pass rates",
        (ASPECT_MESSAGES, true) => "Inadequate or no conversation",
        (ASPECT_MESSAGES, false) => "inadequate or no conversation",
        (ASPECT_TOPIC, true) => "Conversations drifting away from the exercise",
        (ASPECT_TOPIC, false) => "conversations drifting away from the exercise",
        (ASPECT_PARTICIPATION, true) => "Uneven participation in discussion",
        (ASPECT_PARTICIPATION, false) => "uneven participation in discussion",
        (_, true) => "Recurring code errors",
        (_, false) => "recurring code errors",
    }
}

fn summarize_issues(payload: &Value, key: &str) -> Value {
    let items = payload[key].as_array().cloned().unwrap_or_default();
    // (count, first position) per aspect
    let mut seen: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (pos, item) in items.iter().enumerate() {
        if let Some(aspect) = item["aspect"].as_str() {
            let entry = seen.entry(aspect.trim().to_string()).or_insert((0, pos));
            entry.0 += 1;
        }
    }
    let mut aspects: Vec<(String, (usize, usize))> = seen.into_iter().collect();
    aspects.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    let aspects: Vec<String> = aspects.into_iter().map(|(a, _)| a).collect();
    let summary = match aspects.as_slice() {
        [] => "No common issues identified".to_string(),
        [only] => aspect_phrase(only, true).to_string(),
        [first, rest @ ..] => {
            let rest: Vec<&str> = rest.iter().map(|a| aspect_phrase(a, false)).collect();
            format!("{} paired with {}", aspect_phrase(first, true), rest.join(" and "))
        }
    };
    let aspects = if aspects.is_empty() { vec![ASPECT_PASS.to_string()] } else { aspects };
    json!({ "summary": { "issueSummary": summary, "aspectList": aspects } })
}

fn topic_title(payload: &Value) -> String {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for message in payload["messages"].as_array().into_iter().flatten() {
        for token in tokenize(message.as_str().unwrap_or_default()) {
            if token.len() > 2 && !STOPWORDS.contains(&token.as_str()) {
                *counts.entry(token).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if ranked.is_empty() {
        return "General Discussion".to_string();
    }
    let words: Vec<String> = ranked.into_iter().take(3).map(|(w, _)| w).collect();
    format!("Discussing {}", words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Disjoint token sets with no shared bucket embed orthogonally.
    #[test]
    fn disjoint_tokens_are_orthogonal() {
        let stub = StubBackend::new(11);
        let left = ["loop", "list", "count"];
        let right = ["weekend", "movie", "lunch"];
        let lb: Vec<usize> = left.iter().map(|t| stub.bucket(t)).collect();
        let rb: Vec<usize> = right.iter().map(|t| stub.bucket(t)).collect();
        assert!(lb.iter().all(|b| !rb.contains(b)), "pick tokens without bucket collisions");
        let a = stub.embed(&left.join(" ")).unwrap();
        let b = stub.embed(&right.join(" ")).unwrap();
        assert_eq!(cosine(&a, &b), 0.0);
    }

    #[test]
    fn summary_matches_reference_example() {
        let payload = json!({"groupIssueList": [
            {"aspect": "pass rate", "issue": "a"},
            {"aspect": "pass rate", "issue": "b"},
            {"aspect": "pass rate", "issue": "c"},
            {"aspect": "amount of related messages in the conversation", "issue": "d"},
            {"aspect": "amount of related messages in the conversation", "issue": "e"}
        ]});
        let out = summarize_issues(&payload, "groupIssueList");
        assert_eq!(out["summary"]["issueSummary"], "Low pass rates paired with inadequate or no conversation");
        assert_eq!(out["summary"]["aspectList"], json!(["pass rate", "amount of related messages in the conversation"]));
    }

    #[test]
    fn student_ranking_matches_reference_example() {
        let payload = json!({"studentHistory": {
            "0gL8b8z4viC8SXQiQi6x": {
                "currentStatus": {"passRate": 0, "teamActivity": 1.3, "topic": "x"},
                "submissionHistory": [],
                "messageHistory": [
                    {"time": 71, "message": "wassup", "activity": "not related to the class"},
                    {"time": 90, "message": "same ", "activity": "help-seeking"}
                ]
            },
            "DrMqavekheeqmxbSCSeg": {
                "currentStatus": {"passRate": 25, "teamActivity": 0.3, "topic": "x"},
                "submissionHistory": [
                    {"time": 59, "passRate": 25, "errorType": "Logical Error", "errorMessage": ""},
                    {"time": 82, "passRate": 25, "errorType": "Logical Error", "errorMessage": ""}
                ],
                "messageHistory": [{"time": 63, "message": "hi", "activity": "not related to the class"}]
            }
        }});
        let out = rank_students(&payload);
        let list = out["rankedStudentList"].as_array().unwrap();
        assert_eq!(list[0]["id"], "DrMqavekheeqmxbSCSeg");
        assert_eq!(list[0]["aspect"], "code issue");
        assert_eq!(list[1]["aspect"], "pass rate");
    }

    #[test]
    fn topic_title_depends_only_on_token_multiset() {
        let a = topic_title(&json!({"messages": ["count the loop", "loop count variable"]}));
        let b = topic_title(&json!({"messages": ["variable count loop", "Loop the COUNT"]}));
        assert_eq!(a, b);
        assert_eq!(a, "Discussing count loop variable");
    }
}
