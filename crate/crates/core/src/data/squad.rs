//! SQuAD v1.1 JSON: `data[].paragraphs[].{context, qas[].{id, question, answers[].{text, answer_start}}}`.

use std::path::Path;

use serde_json::{json, Map, Value};

use super::DataError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SquadAnswer {
    pub text: String,
    /// Character (not byte) offset into the context.
    pub answer_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SquadExample {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answers: Vec<SquadAnswer>,
}

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value, DataError> {
    obj.get(key).ok_or_else(|| DataError::SchemaError(format!("{path}.{key}")))
}

fn array<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Vec<Value>, DataError> {
    field(obj, key, path)?.as_array().ok_or_else(|| DataError::SchemaError(format!("{path}.{key}")))
}

fn string(obj: &Value, key: &str, path: &str) -> Result<String, DataError> {
    field(obj, key, path)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| DataError::SchemaError(format!("{path}.{key}")))
}

fn answer_matches(context: &str, a: &SquadAnswer) -> bool {
    let start = context.char_indices().map(|(b, _)| b).chain(std::iter::once(context.len())).nth(a.answer_start);
    start.is_some_and(|b| context[b..].starts_with(&a.text))
}

/// Flattens a SQuAD v1.1 document into one example per question, in file
/// order, validating every answer offset.
pub fn parse_squad(text: &str) -> Result<Vec<SquadExample>, DataError> {
    let root: Value = serde_json::from_str(text)?;
    let mut out = Vec::new();
    for (ai, article) in array(&root, "data", "$")?.iter().enumerate() {
        let apath = format!("$.data[{ai}]");
        for (pi, para) in array(article, "paragraphs", &apath)?.iter().enumerate() {
            let ppath = format!("{apath}.paragraphs[{pi}]");
            let context = string(para, "context", &ppath)?;
            for (qi, qa) in array(para, "qas", &ppath)?.iter().enumerate() {
                let qpath = format!("{ppath}.qas[{qi}]");
                let id = string(qa, "id", &qpath)?;
                let question = string(qa, "question", &qpath)?;
                let raw = array(qa, "answers", &qpath)?;
                if raw.is_empty() {
                    return Err(DataError::SchemaError(format!("{qpath}.answers")));
                }
                let mut answers = Vec::with_capacity(raw.len());
                for (ni, a) in raw.iter().enumerate() {
                    let npath = format!("{qpath}.answers[{ni}]");
                    let text = string(a, "text", &npath)?;
                    let answer_start = field(a, "answer_start", &npath)?
                        .as_u64()
                        .ok_or_else(|| DataError::SchemaError(format!("{npath}.answer_start")))?
                        as usize;
                    let ans = SquadAnswer { text, answer_start };
                    if !answer_matches(&context, &ans) {
                        return Err(DataError::OffsetError(id));
                    }
                    answers.push(ans);
                }
                out.push(SquadExample { id, context: context.clone(), question, answers });
            }
        }
    }
    Ok(out)
}

pub fn ingest_squad(path: impl AsRef<Path>) -> Result<Vec<SquadExample>, DataError> {
    parse_squad(&std::fs::read_to_string(path)?)
}

/// Serializes examples back to the v1.1 layout. Consecutive examples that
/// share a context share a paragraph; everything sits in one article.
pub fn squad_to_json(examples: &[SquadExample]) -> Value {
    let mut paragraphs: Vec<Value> = Vec::new();
    let mut last_context: Option<&str> = None;
    for ex in examples {
        let qa = json!({
            "id": ex.id,
            "question": ex.question,
            "answers": ex.answers.iter().map(|a| json!({"text": a.text, "answer_start": a.answer_start})).collect::<Vec<_>>(),
        });
        if last_context == Some(ex.context.as_str()) {
            let para = paragraphs.last_mut().expect("paragraph exists");
            para["qas"].as_array_mut().expect("qas array").push(qa);
        } else {
            let mut para = Map::new();
            para.insert("context".into(), Value::String(ex.context.clone()));
            para.insert("qas".into(), Value::Array(vec![qa]));
            paragraphs.push(Value::Object(para));
            last_context = Some(&ex.context);
        }
    }
    json!({"version": "1.1", "data": [{"title": "export", "paragraphs": paragraphs}]})
}
