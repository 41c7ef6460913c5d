use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::StructuredRequest;

/// Exercise used when a session does not provide its own.
pub const DEFAULT_PROBLEM: &str =
    "Write a function called under100 that accepts a list of integers and returns the number of values in the list that are less than 100.";

/// Versioned prompt asset: system prompt, task text with few-shot examples,
/// and the output schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub version: u32,
    pub system: &'static str,
    pub task: &'static str,
    pub schema: &'static str,
}

macro_rules! template {
    ($name:literal) => {
        PromptTemplate {
            name: $name,
            version: 1,
            system: include_str!(concat!("../../assets/prompts/", $name, ".system.txt")),
            task: include_str!(concat!("../../assets/prompts/", $name, ".task.txt")),
            schema: include_str!(concat!("../../assets/schemas/", $name, ".json")),
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    RankGroups,
    RankStudents,
    SummarizeGroupIssues,
    SummarizeStudentIssues,
    TagMessage,
    SummarizeTopic,
}

impl Task {
    pub fn template(self) -> PromptTemplate {
        match self {
            Task::RankGroups => template!("rank_groups"),
            Task::RankStudents => template!("rank_students"),
            Task::SummarizeGroupIssues => template!("summarize_group_issues"),
            Task::SummarizeStudentIssues => template!("summarize_student_issues"),
            Task::TagMessage => template!("tag_message"),
            Task::SummarizeTopic => template!("summarize_topic"),
        }
    }

    pub fn request(self, problem: &str, payload: Value) -> StructuredRequest {
        let template = self.template();
        StructuredRequest {
            task: self,
            system_prompt: template.system.trim_end().to_string(),
            instructions: template.task.replace("{{problem}}", problem).trim_end().to_string(),
            user_payload: payload,
            output_schema: serde_json::from_str(template.schema).expect("bundled schemas are valid JSON"),
        }
    }
}
