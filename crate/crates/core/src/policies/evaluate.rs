use serde::{Deserialize, Serialize};

use crate::stream::Task;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    #[default]
    ExactMatch,
    BoxedExtract,
    OptionLetter,
}

impl EvaluatorKind {
    pub fn id(self) -> &'static str {
        match self {
            EvaluatorKind::ExactMatch => "exact_match",
            EvaluatorKind::BoxedExtract => "boxed_extract",
            EvaluatorKind::OptionLetter => "option_letter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub correct: bool,
    pub evaluator_id: String,
    pub detail: String,
}

/// Contents of the last `\boxed{...}`, with nested braces balanced.
pub fn last_boxed(text: &str) -> Option<&str> {
    let start = text.rfind("\\boxed")?;
    let rest = &text[start + "\\boxed".len()..];
    let rest = rest.trim_start();
    let body = rest.strip_prefix('{')?;
    let mut depth = 1usize;
    for (i, c) in body.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&body[..i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn normalize_math(s: &str) -> String {
    let s = s.trim().trim_matches('$');
    let s = s.strip_prefix("\\text{").and_then(|r| r.strip_suffix('}')).unwrap_or(s);
    let mut out: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    for (from, to) in [("\\dfrac", "\\frac"), ("\\tfrac", "\\frac"), ("\\left", ""), ("\\right", ""), ("\\!", "")] {
        out = out.replace(from, to);
    }
    out.trim_end_matches('.').to_string()
}

fn option_letter(s: &str) -> Option<char> {
    let s = s.trim().trim_matches(|c: char| c == '(' || c == ')' || c == '.' || c == '$');
    let s = s.strip_prefix("\\text{").and_then(|r| r.strip_suffix('}')).unwrap_or(s);
    let mut chars = s.trim().chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(c.to_ascii_uppercase()),
        _ => None,
    }
}

pub fn evaluate_answer(prediction: &str, task: &Task, evaluator: EvaluatorKind) -> Feedback {
    let (correct, detail) = match evaluator {
        EvaluatorKind::ExactMatch => {
            let ok = normalize_text(prediction) == normalize_text(&task.target);
            (ok, String::new())
        }
        EvaluatorKind::BoxedExtract => match last_boxed(prediction) {
            None => (false, "no boxed answer".to_string()),
            Some(inner) => {
                let target = last_boxed(&task.target).unwrap_or(&task.target);
                let ok = normalize_math(inner) == normalize_math(target);
                (ok, format!("extracted {inner:?}"))
            }
        },
        EvaluatorKind::OptionLetter => {
            let extracted = last_boxed(prediction).map_or_else(|| option_letter(prediction), option_letter);
            match extracted {
                None => (false, "no option letter".to_string()),
                Some(letter) => {
                    let ok = option_letter(&task.target) == Some(letter);
                    (ok, format!("extracted {letter}"))
                }
            }
        }
    };
    Feedback {
        correct,
        evaluator_id: evaluator.id().to_string(),
        detail,
    }
}
