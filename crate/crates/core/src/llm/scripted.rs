use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, ChatRequest, ChatResponse, LlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnExhaust {
    #[default]
    RepeatLast,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptItem {
    Text(String),
    Fail(LlmError),
}

#[derive(Debug, Default)]
struct Tape {
    position: usize,
    requests: Vec<ChatRequest>,
}

/// Plays back a fixed list of replies and records every request.
#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    script: Vec<ScriptItem>,
    on_exhaust: OnExhaust,
    tape: Mutex<Tape>,
}

impl ScriptedBackend {
    pub fn new(script: Vec<ScriptItem>, on_exhaust: OnExhaust) -> Result<Self, LlmError> {
        if script.is_empty() {
            return Err(LlmError::InvalidRequest("script needs at least one response".into()));
        }
        Ok(Self {
            id: "scripted".into(),
            script,
            on_exhaust,
            tape: Mutex::new(Tape::default()),
        })
    }

    pub fn from_texts<S: Into<String>>(
        texts: impl IntoIterator<Item = S>,
        on_exhaust: OnExhaust,
    ) -> Result<Self, LlmError> {
        Self::new(
            texts.into_iter().map(|t| ScriptItem::Text(t.into())).collect(),
            on_exhaust,
        )
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.lock().requests.clone()
    }

    pub fn calls(&self) -> usize {
        self.lock().requests.len()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Tape> {
        self.tape.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn default_temperature(&self) -> f64 {
        0.0
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let mut tape = self.lock();
        tape.requests.push(request.clone());
        let index = tape.position;
        tape.position += 1;
        let item = match self.script.get(index) {
            Some(item) => item,
            None if self.on_exhaust == OnExhaust::RepeatLast => self.script.last().expect("non-empty"),
            None => return Err(LlmError::Exhausted(self.script.len())),
        };
        match item {
            ScriptItem::Text(text) => Ok(ChatResponse {
                text: text.clone(),
                usage: None,
                latency: 0.0,
                backend: self.id.clone(),
            }),
            ScriptItem::Fail(e) => Err(e.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ask(b: &ScriptedBackend) -> Result<String, LlmError> {
        b.chat(&ChatRequest::new("m", "go", 0.0)).map(|r| r.text)
    }

    #[test]
    fn plays_back_in_order() {
        let b = ScriptedBackend::from_texts(["A", "B"], OnExhaust::Error).unwrap();
        assert_eq!(ask(&b).unwrap(), "A");
        assert_eq!(ask(&b).unwrap(), "B");
        assert_eq!(ask(&b), Err(LlmError::Exhausted(2)));
    }

    #[test]
    fn order_preserved_over_fifty_calls() {
        let script: Vec<String> = (0..50).map(|i| format!("r{i}")).collect();
        let b = ScriptedBackend::from_texts(script.clone(), OnExhaust::Error).unwrap();
        let got: Vec<String> = (0..50).map(|_| ask(&b).unwrap()).collect();
        assert_eq!(got, script);
        assert_eq!(b.calls(), 50);
    }

    #[test]
    fn repeat_last_never_runs_dry() {
        let b = ScriptedBackend::from_texts(["x", "y"], OnExhaust::RepeatLast).unwrap();
        let got: Vec<String> = (0..4).map(|_| ask(&b).unwrap()).collect();
        assert_eq!(got, ["x", "y", "y", "y"]);
    }

    #[test]
    fn empty_script_and_empty_message_are_rejected() {
        assert!(ScriptedBackend::from_texts(Vec::<String>::new(), OnExhaust::Error).is_err());
        let b = ScriptedBackend::from_texts(["x"], OnExhaust::Error).unwrap();
        assert_eq!(b.chat(&ChatRequest::new("m", "", 0.0)), Err(LlmError::EmptyMessage));
        assert_eq!(b.calls(), 0);
    }

    #[test]
    fn scripted_failures_are_returned() {
        let b = ScriptedBackend::new(
            vec![
                ScriptItem::Fail(LlmError::Timeout("t".into())),
                ScriptItem::Text("ok".into()),
            ],
            OnExhaust::Error,
        )
        .unwrap();
        assert!(matches!(ask(&b), Err(LlmError::Timeout(_))));
        assert_eq!(ask(&b).unwrap(), "ok");
        assert_eq!(b.requests().len(), 2);
    }
}
