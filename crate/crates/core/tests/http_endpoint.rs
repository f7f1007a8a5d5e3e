use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use dcode_core::decomposer::{
    answer_subquestions, ask, AskOptions, ChatBackend, ChatEndpointConfig, ChatMessage, ContentMode, EndpointError,
    HttpChatClient, QaBackend, VisualContext, FrameImage,
};
use dcode_core::mock::{request_text, MockReply, MockScript, MockServer};

fn client(server: &MockServer, timeout_secs: f64, max_retries: u32) -> HttpChatClient {
    HttpChatClient::new(ChatEndpointConfig {
        timeout_secs,
        max_retries,
        backoff_ms: 10,
        ..ChatEndpointConfig::new(server.base_url(), "test-model")
    })
    .unwrap()
}

#[test]
fn request_body_follows_chat_completion_shape() {
    let server = MockServer::start(|_| MockReply::Content("hi".into())).unwrap();
    let reply = client(&server, 5.0, 0).complete(&[ChatMessage::user("hello")], 0.5).unwrap();
    assert_eq!(reply, "hi");
    let req = &server.requests()[0];
    assert_eq!(req["model"], "test-model");
    assert_eq!(req["temperature"], 0.5);
    assert_eq!(req["messages"][0]["role"], "user");
    assert_eq!(req["messages"][0]["content"], "hello");
}

#[test]
fn server_errors_are_retried_until_success() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = calls.clone();
    let server = MockServer::start(move |_| {
        if seen.fetch_add(1, Ordering::SeqCst) < 2 {
            MockReply::Status(503, "busy".into())
        } else {
            MockReply::Content("third time".into())
        }
    })
    .unwrap();
    assert_eq!(client(&server, 5.0, 2).complete(&[ChatMessage::user("q")], 0.5).unwrap(), "third time");
    assert_eq!(server.request_count(), 3);
}

#[test]
fn retries_are_bounded() {
    let server = MockServer::start(|_| MockReply::Status(500, "down".into())).unwrap();
    let err = client(&server, 5.0, 1).complete(&[ChatMessage::user("q")], 0.5).unwrap_err();
    assert!(matches!(err, EndpointError::Status { status: 500, .. }), "{err:?}");
    assert_eq!(server.request_count(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(|_| MockReply::Status(400, "bad".into())).unwrap();
    let err = client(&server, 5.0, 3).complete(&[ChatMessage::user("q")], 0.5).unwrap_err();
    assert!(matches!(err, EndpointError::Status { status: 400, .. }));
    assert_eq!(server.request_count(), 1);
}

#[test]
fn slow_endpoint_times_out() {
    let server =
        MockServer::start(|_| MockReply::Delay(Duration::from_secs(3), Box::new(MockReply::Content("late".into()))))
            .unwrap();
    let start = Instant::now();
    let err = client(&server, 0.3, 0).complete(&[ChatMessage::user("q")], 0.5).unwrap_err();
    assert!(matches!(err, EndpointError::Timeout), "{err:?}");
    assert!(start.elapsed() < Duration::from_secs(3));
}

#[test]
fn one_of_three_subquestions_times_out() {
    let server = MockServer::start(|req| {
        let text = request_text(req);
        if text == "second?" {
            MockReply::Delay(Duration::from_secs(3), Box::new(MockReply::Content("late".into())))
        } else {
            MockReply::Content(format!("answer to {text}"))
        }
    })
    .unwrap();
    let qa = client(&server, 0.3, 0);
    let subs: Vec<String> = ["first?", "second?", "third?"].iter().map(|s| s.to_string()).collect();
    let slots = answer_subquestions(&subs, &qa, &VisualContext::default(), 3).unwrap();
    assert_eq!(slots[0].as_deref().unwrap(), "answer to first?");
    assert!(matches!(slots[1], Err(EndpointError::Timeout)));
    assert_eq!(slots[2].as_deref().unwrap(), "answer to third?");

    let chat = MockServer::scripted_chat(MockScript {
        decomposition: r#"["first?", "second?", "third?"]"#.into(),
        ..MockScript::default()
    })
    .unwrap();
    let out = ask("Why?", &client(&chat, 5.0, 0), &qa, &VisualContext::default(), &AskOptions::default()).unwrap();
    assert_eq!(
        out.plan.sub_answers,
        vec![Some("answer to first?".into()), None, Some("answer to third?".into())]
    );
    assert_eq!(
        out.plan.final_prompt.as_deref().unwrap(),
        "Context from sub-questions:\n- answer to first?\n- answer to third?\n\nWhy?"
    );
    assert_eq!(out.backend_calls, 4);
}

#[test]
fn full_pipeline_over_http() {
    let script = MockScript {
        decomposition: "Sure:\n```python\n['What is he holding?', 'Where does he go next?']\n```".into(),
        answers: [
            ("What is he holding?".to_string(), "a cup".to_string()),
            ("Where does he go next?".to_string(), "the kitchen".to_string()),
        ]
        .into_iter()
        .collect(),
        fail: vec![],
    };
    let chat = MockServer::scripted_chat(script.clone()).unwrap();
    let qa = MockServer::scripted_qa(script).unwrap();
    let out = ask(
        "Why does he leave?",
        &client(&chat, 5.0, 0),
        &client(&qa, 5.0, 0),
        &VisualContext::default(),
        &AskOptions::default(),
    )
    .unwrap();
    assert_eq!(out.plan.sub_answers, vec![Some("a cup".into()), Some("the kitchen".into())]);
    assert_eq!(
        out.answer,
        "echo: Context from sub-questions:\n- a cup\n- the kitchen\n\nWhy does he leave?"
    );
    assert_eq!(chat.request_count(), 1);
    assert_eq!(qa.request_count(), 3);
    assert_eq!(chat.requests()[0]["temperature"], 0.5);
}

#[test]
fn no_content_mode_makes_a_single_qa_request() {
    let chat = MockServer::scripted_chat(MockScript::default()).unwrap();
    let qa = MockServer::scripted_qa(MockScript::default()).unwrap();
    let opts = AskOptions {
        content_mode: ContentMode::None,
        ..AskOptions::default()
    };
    let out = ask("What?", &client(&chat, 5.0, 0), &client(&qa, 5.0, 0), &VisualContext::default(), &opts).unwrap();
    assert_eq!(out.answer, "echo: What?");
    assert_eq!(chat.request_count(), 0);
    assert_eq!(qa.request_count(), 1);
}

#[test]
fn unreachable_decomposer_falls_back_to_bare_question() {
    let dead = {
        let s = MockServer::start(|_| MockReply::Content(String::new())).unwrap();
        s.base_url()
    };
    let chat = HttpChatClient::new(ChatEndpointConfig {
        max_retries: 0,
        timeout_secs: 2.0,
        ..ChatEndpointConfig::new(dead, "m")
    })
    .unwrap();
    let qa = MockServer::scripted_qa(MockScript::default()).unwrap();
    let out = ask("What?", &chat, &client(&qa, 5.0, 0), &VisualContext::default(), &AskOptions::default()).unwrap();
    assert!(out.plan.fallback.is_some());
    assert_eq!(out.plan.final_prompt.as_deref(), Some("What?"));
    assert_eq!(qa.request_count(), 1);
}

#[test]
fn images_precede_the_question_text() {
    let server = MockServer::start(|_| MockReply::Content("ok".into())).unwrap();
    let visual = VisualContext {
        frame_indices: vec![0, 4],
        images: vec![
            FrameImage {
                frame_index: 0,
                mime: "image/jpeg".into(),
                data: vec![0xff, 0xd8],
            },
            FrameImage {
                frame_index: 4,
                mime: "image/jpeg".into(),
                data: vec![0xff, 0xd9],
            },
        ],
    };
    client(&server, 5.0, 0).answer("what now?", &visual).unwrap();
    let content = &server.requests()[0]["messages"][0]["content"];
    assert_eq!(content[0]["type"], "image_url");
    assert_eq!(content[1]["image_url"]["url"], "data:image/jpeg;base64,/9k=");
    assert_eq!(content[2], serde_json::json!({"type": "text", "text": "what now?"}));
}
