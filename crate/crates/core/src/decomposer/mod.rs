//! Question decomposition: ask a chat model for sub-questions, answer each one
//! against the same visual context, then fold the answers into the final query.

mod client;
mod parse;
mod template;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

pub use client::{
    ChatBackend, ChatEndpointConfig, ChatMessage, ContentPart, EndpointError, FrameImage,
    HttpChatClient, ImageUrl, MessageContent, QaBackend, VisualContext, API_KEY_ENV,
};
pub use parse::{parse_subquestions, ParseError};
pub use template::{build_prompt, PromptTemplate, PLACEHOLDER};

pub const DEFAULT_TEMPERATURE: f64 = 0.5;
pub const AGGREGATE_HEADER: &str = "Context from sub-questions:";

#[derive(Debug, thiserror::Error)]
pub enum DecomposeError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("prompt template: {0}")]
    Template(String),
    #[error("endpoint failure: {0}")]
    Endpoint(#[from] EndpointError),
    #[error("could not parse sub-questions: {0}")]
    Parse(#[from] ParseError),
    #[error("all {0} sub-question calls failed")]
    AllSubAnswersFailed(usize),
}

/// What the final query is built from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContentMode {
    /// Answers to each sub-question.
    #[default]
    SubAnswers,
    /// The sub-question strings themselves.
    SubQuestions,
    /// No decomposition; the bare question.
    None,
}

impl ContentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ContentMode::SubAnswers => "sub-answers",
            ContentMode::SubQuestions => "sub-questions",
            ContentMode::None => "none",
        }
    }
}

impl fmt::Display for ContentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sub-answers" => Ok(ContentMode::SubAnswers),
            "sub-questions" => Ok(ContentMode::SubQuestions),
            "none" => Ok(ContentMode::None),
            other => Err(format!(
                "unknown content mode `{other}` (expected sub-answers, sub-questions or none)"
            )),
        }
    }
}

/// Full record of one decomposed query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionPlan {
    pub original_question: String,
    pub sub_questions: Vec<String>,
    /// Aligned with `sub_questions`; `None` marks a failed call.
    pub sub_answers: Vec<Option<String>>,
    pub final_prompt: Option<String>,
    pub temperature: f64,
    pub content_mode: ContentMode,
    /// Set when decomposition failed and the bare question was used instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

/// Asks the chat model for sub-questions. `max_subquestions` keeps only the first `k`.
pub fn decompose(
    question: &str,
    chat: &dyn ChatBackend,
    template: &PromptTemplate,
    temperature: f64,
    max_subquestions: Option<usize>,
) -> Result<Vec<String>, DecomposeError> {
    let prompt = build_prompt(template, question)?;
    let raw = chat.complete(&[ChatMessage::user(prompt)], temperature)?;
    let mut subs = parse_subquestions(&raw)?;
    if let Some(k) = max_subquestions {
        subs.truncate(k);
    }
    Ok(subs)
}

/// Answers every sub-question against the same visual context with at most
/// `concurrency` calls in flight. Slot `i` always holds the outcome for
/// `sub_questions[i]`. Fails only when every call fails.
pub fn answer_subquestions(
    sub_questions: &[String],
    qa: &dyn QaBackend,
    visual: &VisualContext,
    concurrency: usize,
) -> Result<Vec<Result<String, EndpointError>>, DecomposeError> {
    let n = sub_questions.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let slots: Mutex<Vec<Option<Result<String, EndpointError>>>> = Mutex::new(vec![None; n]);
    let next = AtomicUsize::new(0);
    thread::scope(|scope| {
        for _ in 0..concurrency.clamp(1, n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let outcome = qa.answer(&sub_questions[i], visual);
                if let Err(e) = &outcome {
                    log::warn!("sub-question {i} failed: {e}");
                }
                slots.lock().expect("slot lock poisoned")[i] = Some(outcome);
            });
        }
    });
    let results: Vec<_> = slots
        .into_inner()
        .expect("slot lock poisoned")
        .into_iter()
        .map(|s| s.expect("every slot is filled"))
        .collect();
    if results.iter().all(Result::is_err) {
        return Err(DecomposeError::AllSubAnswersFailed(n));
    }
    Ok(results)
}

/// Header line, one `- ` line per item, a blank line, then the question.
/// With no items the question is returned unchanged.
pub fn aggregate(question: &str, answers: &[String]) -> String {
    if answers.is_empty() {
        return question.to_string();
    }
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for a in answers {
        out.push_str("- ");
        out.push_str(a);
        out.push('\n');
    }
    out.push('\n');
    out.push_str(question);
    out
}

#[derive(Clone, Debug)]
pub struct AskOptions {
    pub template: PromptTemplate,
    pub temperature: f64,
    pub max_subquestions: Option<usize>,
    pub content_mode: ContentMode,
    pub concurrency: usize,
}

impl Default for AskOptions {
    fn default() -> Self {
        Self {
            template: PromptTemplate::default_template(),
            temperature: DEFAULT_TEMPERATURE,
            max_subquestions: None,
            content_mode: ContentMode::default(),
            concurrency: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AskOutcome {
    pub answer: String,
    pub plan: DecompositionPlan,
    /// Calls made to the video-QA backend, including failed ones.
    pub backend_calls: usize,
}

struct CountingQa<'a> {
    inner: &'a dyn QaBackend,
    calls: AtomicUsize,
}

impl QaBackend for CountingQa<'_> {
    fn answer(&self, prompt: &str, visual: &VisualContext) -> Result<String, EndpointError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.answer(prompt, visual)
    }
}

/// Runs decomposition, sub-question answering, aggregation and the final call.
/// Any failure before the final call degrades to the bare question; only a
/// failed final call is an error.
pub fn ask(
    question: &str,
    chat: &dyn ChatBackend,
    qa: &dyn QaBackend,
    visual: &VisualContext,
    opts: &AskOptions,
) -> Result<AskOutcome, DecomposeError> {
    if question.trim().is_empty() {
        return Err(DecomposeError::Validation("question must not be empty".into()));
    }
    let qa = CountingQa {
        inner: qa,
        calls: AtomicUsize::new(0),
    };
    let mut plan = DecompositionPlan {
        original_question: question.to_string(),
        sub_questions: Vec::new(),
        sub_answers: Vec::new(),
        final_prompt: None,
        temperature: opts.temperature,
        content_mode: opts.content_mode,
        fallback: None,
    };

    let content: Vec<String> = match opts.content_mode {
        ContentMode::None => Vec::new(),
        mode => match decompose(question, chat, &opts.template, opts.temperature, opts.max_subquestions) {
            Err(e) => {
                log::warn!("decomposition failed, using the bare question: {e}");
                plan.fallback = Some(e.to_string());
                Vec::new()
            }
            Ok(subs) => {
                plan.sub_questions = subs;
                if mode == ContentMode::SubQuestions {
                    plan.sub_questions.clone()
                } else {
                    match answer_subquestions(&plan.sub_questions, &qa, visual, opts.concurrency) {
                        Ok(slots) => {
                            plan.sub_answers = slots.into_iter().map(Result::ok).collect();
                            plan.sub_answers.iter().flatten().cloned().collect()
                        }
                        Err(e) => {
                            log::warn!("sub-question answering failed, using the bare question: {e}");
                            plan.sub_answers = vec![None; plan.sub_questions.len()];
                            plan.fallback = Some(e.to_string());
                            Vec::new()
                        }
                    }
                }
            }
        },
    };

    let final_prompt = aggregate(question, &content);
    let answer = qa.answer(&final_prompt, visual)?;
    plan.final_prompt = Some(final_prompt);
    Ok(AskOutcome {
        answer,
        plan,
        backend_calls: qa.calls.load(Ordering::Relaxed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::{MockScript, ScriptedBackend};

    fn script(decomposition: &str) -> ScriptedBackend {
        ScriptedBackend::new(MockScript {
            decomposition: decomposition.into(),
            ..MockScript::default()
        })
    }

    #[test]
    fn aggregate_layout() {
        assert_eq!(aggregate("why?", &[]), "why?");
        assert_eq!(
            aggregate("why?", &["a1".into(), "a2".into()]),
            "Context from sub-questions:\n- a1\n- a2\n\nwhy?"
        );
    }

    #[test]
    fn decompose_parses_and_truncates() {
        let t = PromptTemplate::default_template();
        let b = script(r#"["s1","s2"]"#);
        assert_eq!(decompose("q?", &b, &t, 0.5, None).unwrap(), vec!["s1", "s2"]);
        let six = script(r#"["1","2","3","4","5","6"]"#);
        assert_eq!(decompose("q?", &six, &t, 0.5, Some(5)).unwrap().len(), 5);
        assert!(matches!(
            decompose("q?", &script("nope"), &t, 0.5, None),
            Err(DecomposeError::Parse(_))
        ));
    }

    #[test]
    fn decompose_sends_filled_template() {
        let b = script("[]");
        decompose("What is a man sitting on?", &b, &PromptTemplate::default_template(), 0.5, None).unwrap();
        let sent = b.chat_prompts();
        assert_eq!(sent.len(), 1);
        assert!(sent[0].contains("Question: \"What is a man sitting on?\""));
    }

    #[test]
    fn answers_in_order() {
        let b = script("[]");
        let qs: Vec<String> = ["one", "two", "three"].iter().map(|s| s.to_string()).collect();
        let out = answer_subquestions(&qs, &b, &VisualContext::default(), 3).unwrap();
        let got: Vec<String> = out.into_iter().map(Result::unwrap).collect();
        assert_eq!(got, vec!["echo: one", "echo: two", "echo: three"]);
        assert!(answer_subquestions(&[], &b, &VisualContext::default(), 3).unwrap().is_empty());
    }

    #[test]
    fn partial_and_total_failure() {
        let b = ScriptedBackend::new(MockScript {
            fail: vec!["two".into()],
            ..MockScript::default()
        });
        let qs: Vec<String> = ["one", "two", "three"].iter().map(|s| s.to_string()).collect();
        let out = answer_subquestions(&qs, &b, &VisualContext::default(), 2).unwrap();
        assert!(out[0].is_ok() && out[1].is_err() && out[2].is_ok());

        let all = ScriptedBackend::new(MockScript {
            fail: qs.clone(),
            ..MockScript::default()
        });
        assert!(matches!(
            answer_subquestions(&qs, &all, &VisualContext::default(), 2),
            Err(DecomposeError::AllSubAnswersFailed(3))
        ));
    }

    #[test]
    fn ask_none_mode_single_call() {
        let b = script(r#"["s1"]"#);
        let opts = AskOptions {
            content_mode: ContentMode::None,
            ..AskOptions::default()
        };
        let out = ask("why?", &b, &b, &VisualContext::default(), &opts).unwrap();
        assert_eq!(out.backend_calls, 1);
        assert_eq!(out.plan.final_prompt.as_deref(), Some("why?"));
        assert!(b.chat_prompts().is_empty());
    }

    #[test]
    fn ask_sub_questions_mode() {
        let b = script(r#"["q1"]"#);
        let opts = AskOptions {
            content_mode: ContentMode::SubQuestions,
            ..AskOptions::default()
        };
        let out = ask("why?", &b, &b, &VisualContext::default(), &opts).unwrap();
        assert_eq!(out.backend_calls, 1);
        assert_eq!(out.plan.final_prompt.unwrap(), aggregate("why?", &["q1".into()]));
    }

    #[test]
    fn ask_sub_answers_with_one_failure() {
        let b = ScriptedBackend::new(MockScript {
            decomposition: r#"["a","b","c"]"#.into(),
            fail: vec!["b".into()],
            ..MockScript::default()
        });
        let out = ask("why?", &b, &b, &VisualContext::default(), &AskOptions::default()).unwrap();
        assert_eq!(out.backend_calls, 4);
        assert_eq!(out.plan.sub_answers, vec![Some("echo: a".into()), None, Some("echo: c".into())]);
        assert_eq!(
            out.plan.final_prompt.unwrap(),
            "Context from sub-questions:\n- echo: a\n- echo: c\n\nwhy?"
        );
    }

    #[test]
    fn ask_falls_back_on_unparsable_decomposition() {
        let b = script("I cannot help with that.");
        let out = ask("why?", &b, &b, &VisualContext::default(), &AskOptions::default()).unwrap();
        assert!(out.plan.fallback.is_some());
        assert_eq!(out.plan.final_prompt.as_deref(), Some("why?"));
        assert_eq!(out.backend_calls, 1);
    }

    #[test]
    fn ask_fails_when_final_call_fails() {
        let b = ScriptedBackend::new(MockScript {
            decomposition: "[]".into(),
            fail: vec!["why?".into()],
            ..MockScript::default()
        });
        assert!(matches!(
            ask("why?", &b, &b, &VisualContext::default(), &AskOptions::default()),
            Err(DecomposeError::Endpoint(_))
        ));
    }

    #[test]
    fn content_mode_parse() {
        for m in [ContentMode::SubAnswers, ContentMode::SubQuestions, ContentMode::None] {
            assert_eq!(m.as_str().parse::<ContentMode>().unwrap(), m);
        }
        assert!("answers".parse::<ContentMode>().is_err());
        assert_eq!(ContentMode::default(), ContentMode::SubAnswers);
    }
}
