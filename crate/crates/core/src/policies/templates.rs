//! Plain-text prompt templates with named `{placeholder}` slots.
//!
//! Only placeholders that are supplied get substituted, so literal braces
//! such as `\boxed{42}` in a template pass through untouched.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::Task;

macro_rules! asset {
    ($name:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/prompts/", $name, ".txt"))
    };
}

/// Built-in task prompt formats, selected by name in the run config.
pub const TASK_FORMATS: &[(&str, &str)] = &[
    ("plain", asset!("task_plain")),
    ("aime", asset!("task_aime")),
    ("math500", asset!("task_math500")),
    ("mmlu_pro", asset!("task_mmlu_pro")),
    ("humaneval", asset!("task_humaneval")),
    ("apibench", asset!("task_apibench")),
    ("alfworld", asset!("task_alfworld")),
];

pub fn task_format(name: &str) -> Result<&'static str> {
    TASK_FORMATS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let known: Vec<&str> = TASK_FORMATS.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("unknown task format {name:?}; expected one of {known:?}"))
        })
}

/// Substitute `{name}` for each supplied pair, leaving other braces alone.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter().find(|(n, _)| *n == name).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Templates {
    /// Formats the raw task into the question the model sees.
    pub task: String,
    pub solve_with_memory: String,
    pub dc_curator: String,
    pub dc_generator: String,
    pub awm_induction: String,
    pub awm_one_shot: String,
    pub awm_solve: String,
    pub expel_solve: String,
    pub expel_insight: String,
    pub reflection: String,
}

fn clean(t: &str) -> String {
    t.trim_end_matches(['\n', '\r']).to_string()
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            task: clean(asset!("task_plain")),
            solve_with_memory: clean(asset!("solve_with_memory")),
            dc_curator: clean(asset!("dc_curator")),
            dc_generator: clean(asset!("dc_generator")),
            awm_induction: clean(asset!("awm_induction")),
            awm_one_shot: clean(asset!("awm_one_shot")),
            awm_solve: clean(asset!("awm_solve")),
            expel_solve: clean(asset!("expel_solve")),
            expel_insight: clean(asset!("expel_insight")),
            reflection: clean(asset!("reflection")),
        }
    }
}

impl Templates {
    pub fn with_task_format(mut self, name: &str) -> Result<Self> {
        self.task = clean(task_format(name)?);
        Ok(self)
    }

    /// Override any template whose `<name>.txt` exists in `dir`; `task.txt`
    /// replaces the task format.
    pub fn with_overrides(mut self, dir: &Path) -> Result<Self> {
        let slots: [(&str, &mut String); 10] = [
            ("task", &mut self.task),
            ("solve_with_memory", &mut self.solve_with_memory),
            ("dc_curator", &mut self.dc_curator),
            ("dc_generator", &mut self.dc_generator),
            ("awm_induction", &mut self.awm_induction),
            ("awm_one_shot", &mut self.awm_one_shot),
            ("awm_solve", &mut self.awm_solve),
            ("expel_solve", &mut self.expel_solve),
            ("expel_insight", &mut self.expel_insight),
            ("reflection", &mut self.reflection),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = fs::read_to_string(&path)
                    .map_err(|e| Error::io(format!("reading template {}", path.display()), e))?;
                *slot = clean(&text);
            }
        }
        Ok(self)
    }

    /// The task as the model sees it, before any memory is attached.
    pub fn question(&self, task: &Task) -> String {
        let mut owned: Vec<(String, String)> = task
            .metadata
            .keys()
            .filter(|k| k.as_str() != "question")
            .filter_map(|k| task.metadata_text(k).map(|v| (k.clone(), v)))
            .collect();
        owned.push(("question".into(), task.prompt.clone()));
        let vars: Vec<(&str, &str)> = owned.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        render(&self.task, &vars)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_leaves_unknown_braces() {
        let t = r"Put it in \boxed{...}: {question} and {unknown}";
        assert_eq!(render(t, &[("question", "2+2")]), r"Put it in \boxed{...}: 2+2 and {unknown}");
        assert_eq!(render("{a}{a}{", &[("a", "x")]), "xx{");
        assert_eq!(render("{}", &[]), "{}");
    }

    #[test]
    fn substituted_values_are_not_rescanned() {
        assert_eq!(render("{a}", &[("a", "{a}")]), "{a}");
    }

    #[test]
    fn question_fills_metadata_placeholders() {
        let mut task = Task::new("h1", "def add(a, b):", "x");
        task.metadata.insert("entry_point".into(), "add".into());
        let t = Templates::default().with_task_format("humaneval").unwrap();
        let q = t.question(&task);
        assert!(q.contains("named exactly add."));
        assert!(q.contains("def add(a, b):"));
        assert!(!q.contains("{entry_point}"));
    }

    #[test]
    fn mmlu_options_from_metadata_list() {
        let mut task = Task::new("m1", "Which?", "B");
        task.metadata.insert("subject".into(), "engineering".into());
        task.metadata.insert("options".into(), serde_json::json!(["A. 1", "B. 2"]));
        let t = Templates::default().with_task_format("mmlu_pro").unwrap();
        let q = t.question(&task);
        assert!(q.contains("multiple-choice engineering question"));
        assert!(q.ends_with("Options:\nA. 1\nB. 2"));
        assert!(q.contains(r"\boxed{C}"));
    }

    #[test]
    fn unknown_format_lists_known_ones() {
        let err = task_format("gsm8k").unwrap_err().to_string();
        assert!(err.contains("math500"), "{err}");
    }

    #[test]
    fn overrides_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("reflection.txt"), "reflect on {context}\n").unwrap();
        let t = Templates::default().with_overrides(dir.path()).unwrap();
        assert_eq!(t.reflection, "reflect on {context}");
        assert_eq!(t.dc_curator, Templates::default().dc_curator);
    }
}
