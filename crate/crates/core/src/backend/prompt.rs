//! Prompt templates for the grounding, summarization and focus stages.
//!
//! Placeholders are `{instruction}`, `{summary}` and `{context}`; `{{` and
//! `}}` produce literal braces. Substituted values are inserted verbatim
//! and never re-scanned.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("{stage:?} prompt needs {what} context")]
    MissingContext { stage: PromptStage, what: &'static str },
    #[error("malformed {template} template: {reason}")]
    MalformedTemplate { template: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStage {
    Ground,
    Summarize,
    Focus,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptContext {
    pub summary: Option<String>,
    pub focus: Option<String>,
}

impl PromptContext {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn summary(summary: impl Into<String>) -> Self {
        Self {
            summary: Some(summary.into()),
            focus: None,
        }
    }

    pub fn full(summary: impl Into<String>, focus: impl Into<String>) -> Self {
        Self {
            summary: Some(summary.into()),
            focus: Some(focus.into()),
        }
    }
}

/// Default wording. The grounding template asks for normalized center
/// coordinates; the summary and focus wordings are this toolkit's own.
const DEFAULT_GROUNDING: &str = "You are an expert at grounding elements in GUI screenshots. \
Given the screenshot and the instruction, locate the target element and answer with the \
normalized coordinates (x,y) of its center point, each value in [0,1].{context}\n\
Instruction: {instruction}";

const DEFAULT_SUMMARY: &str = "Describe the layout of this GUI screenshot with the following \
task in mind: {instruction}\nCover the overall organization of the interface and the \
hierarchy of its elements. Do not predict coordinates.";

const DEFAULT_FOCUS: &str = "Interface summary: {summary}\nTask: {instruction}\n\
Examine the candidate elements for this task in detail: relative and absolute position, \
shape, color, and the surrounding interactive elements. Do not predict coordinates.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplates")]
pub struct PromptTemplateSet {
    grounding_template: String,
    summary_template: String,
    focus_template: String,
}

#[derive(Deserialize)]
struct RawTemplates {
    grounding_template: String,
    summary_template: String,
    focus_template: String,
}

impl TryFrom<RawTemplates> for PromptTemplateSet {
    type Error = PromptError;
    fn try_from(r: RawTemplates) -> Result<Self, Self::Error> {
        Self::new(r.grounding_template, r.summary_template, r.focus_template)
    }
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        Self::new(DEFAULT_GROUNDING, DEFAULT_SUMMARY, DEFAULT_FOCUS)
            .expect("default templates are well-formed")
    }
}

#[derive(Debug)]
enum Piece<'a> {
    Lit(&'a str),
    Brace(char),
    Slot(&'a str),
}

fn pieces<'a>(name: &'static str, t: &'a str) -> Result<Vec<Piece<'a>>, PromptError> {
    let malformed = |reason: String| PromptError::MalformedTemplate {
        template: name,
        reason,
    };
    let mut out = Vec::new();
    let mut rest = t;
    while let Some(i) = rest.find(['{', '}']) {
        if i > 0 {
            out.push(Piece::Lit(&rest[..i]));
        }
        let tail = &rest[i..];
        if tail.starts_with("{{") {
            out.push(Piece::Brace('{'));
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push(Piece::Brace('}'));
            rest = &tail[2..];
        } else if tail.starts_with('}') {
            return Err(malformed("unmatched '}'".into()));
        } else {
            let close = tail
                .find('}')
                .ok_or_else(|| malformed("unterminated placeholder".into()))?;
            out.push(Piece::Slot(&tail[1..close]));
            rest = &tail[close + 1..];
        }
    }
    if !rest.is_empty() {
        out.push(Piece::Lit(rest));
    }
    Ok(out)
}

fn check_slots(
    name: &'static str,
    t: &str,
    exactly_once: &[&str],
) -> Result<(), PromptError> {
    let ps = pieces(name, t)?;
    for p in &ps {
        if let Piece::Slot(s) = p {
            if !exactly_once.contains(s) {
                return Err(PromptError::MalformedTemplate {
                    template: name,
                    reason: format!("unknown placeholder {{{s}}}"),
                });
            }
        }
    }
    for want in exactly_once {
        let n = ps
            .iter()
            .filter(|p| matches!(p, Piece::Slot(s) if s == want))
            .count();
        if n != 1 {
            return Err(PromptError::MalformedTemplate {
                template: name,
                reason: format!("placeholder {{{want}}} must appear exactly once, found {n}"),
            });
        }
    }
    Ok(())
}

fn fill(t: &str, values: &[(&str, &str)]) -> String {
    // Templates are validated at construction.
    let ps = pieces("validated", t).expect("template validated");
    let mut out = String::with_capacity(t.len());
    for p in ps {
        match p {
            Piece::Lit(s) => out.push_str(s),
            Piece::Brace(c) => out.push(c),
            Piece::Slot(s) => {
                let (_, v) = values
                    .iter()
                    .find(|(k, _)| *k == s)
                    .expect("placeholder validated");
                out.push_str(v);
            }
        }
    }
    out
}

impl PromptTemplateSet {
    pub fn new(
        grounding: impl Into<String>,
        summary: impl Into<String>,
        focus: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let set = Self {
            grounding_template: grounding.into(),
            summary_template: summary.into(),
            focus_template: focus.into(),
        };
        check_slots("grounding", &set.grounding_template, &["instruction", "context"])?;
        check_slots("summary", &set.summary_template, &["instruction"])?;
        check_slots("focus", &set.focus_template, &["instruction", "summary"])?;
        Ok(set)
    }

    pub fn grounding_template(&self) -> &str {
        &self.grounding_template
    }

    pub fn summary_template(&self) -> &str {
        &self.summary_template
    }

    pub fn focus_template(&self) -> &str {
        &self.focus_template
    }
}

fn context_block(ctx: &PromptContext) -> String {
    let mut block = String::new();
    if let Some(s) = &ctx.summary {
        block.push_str("\nInterface summary: ");
        block.push_str(s);
    }
    if let Some(f) = &ctx.focus {
        block.push_str("\nFocused analysis: ");
        block.push_str(f);
    }
    block
}

pub fn build_prompt(
    stage: PromptStage,
    instruction: &str,
    context: &PromptContext,
    templates: &PromptTemplateSet,
) -> Result<String, PromptError> {
    match stage {
        PromptStage::Ground => {
            if context.focus.is_some() && context.summary.is_none() {
                return Err(PromptError::MissingContext {
                    stage,
                    what: "summary",
                });
            }
            let block = context_block(context);
            Ok(fill(
                &templates.grounding_template,
                &[("instruction", instruction), ("context", &block)],
            ))
        }
        PromptStage::Summarize => Ok(fill(
            &templates.summary_template,
            &[("instruction", instruction)],
        )),
        PromptStage::Focus => {
            let summary = context.summary.as_deref().ok_or(PromptError::MissingContext {
                stage,
                what: "summary",
            })?;
            Ok(fill(
                &templates.focus_template,
                &[("instruction", instruction), ("summary", summary)],
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INSTR: &str = "click the search button";

    #[test]
    fn grounding_prompt_contains_instruction_once() {
        let t = PromptTemplateSet::default();
        let p = build_prompt(PromptStage::Ground, INSTR, &PromptContext::none(), &t).unwrap();
        assert_eq!(p.matches(INSTR).count(), 1);
        assert!(!p.contains("Interface summary"));
    }

    #[test]
    fn focus_prompt_embeds_summary() {
        let t = PromptTemplateSet::default();
        let p = build_prompt(PromptStage::Focus, INSTR, &PromptContext::summary("S"), &t).unwrap();
        assert!(p.contains(INSTR));
        assert!(p.contains("Interface summary: S"));
    }

    #[test]
    fn focus_without_summary_is_missing_context() {
        let t = PromptTemplateSet::default();
        assert_eq!(
            build_prompt(PromptStage::Focus, INSTR, &PromptContext::none(), &t),
            Err(PromptError::MissingContext {
                stage: PromptStage::Focus,
                what: "summary"
            })
        );
        let focus_only = PromptContext {
            summary: None,
            focus: Some("f".into()),
        };
        assert!(matches!(
            build_prompt(PromptStage::Ground, INSTR, &focus_only, &t),
            Err(PromptError::MissingContext { .. })
        ));
    }

    #[test]
    fn stage_three_prompt_embeds_both_verbatim() {
        let t = PromptTemplateSet::default();
        let ctx = PromptContext::full("the {summary} text", "focus: red {x}");
        let p = build_prompt(PromptStage::Ground, INSTR, &ctx, &t).unwrap();
        assert!(p.contains("the {summary} text"));
        assert!(p.contains("focus: red {x}"));
    }

    #[test]
    fn template_validation() {
        assert!(PromptTemplateSet::new("{instruction}{context}", "{instruction}", "{instruction}{summary}").is_ok());
        assert!(matches!(
            PromptTemplateSet::new("{instruction}", "{instruction}", "{instruction}{summary}"),
            Err(PromptError::MalformedTemplate { template: "grounding", .. })
        ));
        assert!(matches!(
            PromptTemplateSet::new("{instruction}{context}{instruction}", "{instruction}", "{instruction}{summary}"),
            Err(PromptError::MalformedTemplate { .. })
        ));
        assert!(matches!(
            PromptTemplateSet::new("{instruction}{context}", "{instruction} {bogus}", "{instruction}{summary}"),
            Err(PromptError::MalformedTemplate { template: "summary", .. })
        ));
        assert!(matches!(
            PromptTemplateSet::new("{instruction}{context", "{instruction}", "{instruction}{summary}"),
            Err(PromptError::MalformedTemplate { .. })
        ));
    }

    #[test]
    fn escaped_braces() {
        let t = PromptTemplateSet::new("{{json}} {instruction}{context}", "{instruction}", "{instruction}{summary}").unwrap();
        let p = build_prompt(PromptStage::Ground, "x", &PromptContext::none(), &t).unwrap();
        assert_eq!(p, "{json} x");
    }

    #[test]
    fn templates_deserialize_with_validation() {
        let ok = r#"{"grounding_template":"{instruction}{context}","summary_template":"{instruction}","focus_template":"{summary} {instruction}"}"#;
        assert!(serde_json::from_str::<PromptTemplateSet>(ok).is_ok());
        let bad = r#"{"grounding_template":"{context}","summary_template":"{instruction}","focus_template":"{summary} {instruction}"}"#;
        assert!(serde_json::from_str::<PromptTemplateSet>(bad).is_err());
    }
}
