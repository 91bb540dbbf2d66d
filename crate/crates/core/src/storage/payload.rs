//! Read-only views over stored thread documents.
//!
//! The raw bytes are the archive's source of truth; [`PostRecord`] is a parsed
//! view of the fields the crawler itself needs. Comments keep their markup.

use chrono::{DateTime, Utc};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::api_client::BoardId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PayloadError {
    #[error("payload is empty")]
    Empty,
    #[error("malformed thread payload: {0}")]
    Malformed(String),
    #[error("thread payload has no posts")]
    NoPosts,
    #[error("first post is {found}, expected thread {expected}")]
    ThreadMismatch { expected: u64, found: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ImageProps {
    pub width: Option<u64>,
    pub height: Option<u64>,
    pub thumb_width: Option<u64>,
    pub thumb_height: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FileProps {
    pub md5: Option<String>,
    pub filesize: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostRecord {
    pub post_no: u64,
    pub time: i64,
    pub poster_name: String,
    pub comment_raw: String,
    /// Original file name as uploaded (metadata only).
    pub attached_filename: Option<String>,
    pub attached_ext: Option<String>,
    /// Server-assigned rename token (`tim`) that addresses the media file.
    pub attachment_token: Option<String>,
    pub image_props: Option<ImageProps>,
    pub file_props: Option<FileProps>,
}

fn uint(obj: &Map<String, Value>, key: &str) -> Option<u64> {
    obj.get(key).and_then(Value::as_u64)
}

fn string(obj: &Map<String, Value>, key: &str) -> Option<String> {
    obj.get(key).and_then(Value::as_str).map(str::to_owned)
}

impl PostRecord {
    fn from_object(obj: &Map<String, Value>) -> Result<Self, PayloadError> {
        let post_no = uint(obj, "no")
            .filter(|n| *n > 0)
            .ok_or_else(|| PayloadError::Malformed("post without a positive \"no\"".into()))?;
        let attachment_token = match obj.get("tim") {
            Some(Value::Number(n)) => Some(n.to_string()),
            Some(Value::String(s)) => Some(s.clone()),
            _ => None,
        };
        let image = ImageProps {
            width: uint(obj, "w"),
            height: uint(obj, "h"),
            thumb_width: uint(obj, "tn_w"),
            thumb_height: uint(obj, "tn_h"),
        };
        let file = FileProps {
            md5: string(obj, "md5"),
            filesize: uint(obj, "fsize"),
        };
        Ok(Self {
            post_no,
            time: obj.get("time").and_then(Value::as_i64).unwrap_or(0),
            poster_name: string(obj, "name").unwrap_or_default(),
            comment_raw: string(obj, "com").unwrap_or_default(),
            attached_filename: string(obj, "filename"),
            attached_ext: string(obj, "ext"),
            attachment_token,
            image_props: (image != ImageProps::default()).then_some(image),
            file_props: (file != FileProps::default()).then_some(file),
        })
    }
}

/// Extracts the `posts` list. Never touches `raw`; unknown fields are ignored.
pub fn parse_thread_payload(raw: &[u8]) -> Result<Vec<PostRecord>, PayloadError> {
    if raw.is_empty() {
        return Err(PayloadError::Empty);
    }
    let doc: Value =
        serde_json::from_slice(raw).map_err(|e| PayloadError::Malformed(e.to_string()))?;
    let posts = doc
        .get("posts")
        .and_then(Value::as_array)
        .ok_or_else(|| PayloadError::Malformed("document lacks a \"posts\" list".into()))?;
    posts
        .iter()
        .map(|p| {
            p.as_object()
                .ok_or_else(|| PayloadError::Malformed("post is not an object".into()))
                .and_then(PostRecord::from_object)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadSnapshot {
    pub board: BoardId,
    pub thread_no: u64,
    pub fetched_at: DateTime<Utc>,
    pub raw: Vec<u8>,
    pub posts: Vec<PostRecord>,
}

impl ThreadSnapshot {
    pub fn parse(
        board: BoardId,
        thread_no: u64,
        fetched_at: DateTime<Utc>,
        raw: Vec<u8>,
    ) -> Result<Self, PayloadError> {
        let posts = parse_thread_payload(&raw)?;
        let first = posts.first().ok_or(PayloadError::NoPosts)?;
        if first.post_no != thread_no {
            return Err(PayloadError::ThreadMismatch {
                expected: thread_no,
                found: first.post_no,
            });
        }
        Ok(Self {
            board,
            thread_no,
            fetched_at,
            raw,
            posts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{"posts":[
        {"no":570368,"resto":0,"time":1546294897,"name":"Anonymous",
         "com":"Hello <br><span class=\"quote\">&gt;x</span>",
         "filename":"cat","ext":".jpg","tim":1546294897412,"w":800,"h":600,
         "tn_w":250,"tn_h":187,"md5":"abc==","fsize":12345,"semantic_url":"s"},
        {"no":570369,"resto":570368,"time":1546294900,"name":"Anonymous"}
    ]}"#;

    #[test]
    fn parses_fields() {
        let posts = parse_thread_payload(DOC.as_bytes()).unwrap();
        assert_eq!(posts.len(), 2);
        let op = &posts[0];
        assert_eq!(op.post_no, 570368);
        assert_eq!(op.time, 1546294897);
        assert_eq!(op.poster_name, "Anonymous");
        assert_eq!(
            op.comment_raw,
            "Hello <br><span class=\"quote\">&gt;x</span>"
        );
        assert_eq!(op.attached_filename.as_deref(), Some("cat"));
        assert_eq!(op.attached_ext.as_deref(), Some(".jpg"));
        assert_eq!(op.attachment_token.as_deref(), Some("1546294897412"));
        assert_eq!(op.image_props.unwrap().width, Some(800));
        assert_eq!(op.image_props.unwrap().thumb_height, Some(187));
        assert_eq!(op.file_props.as_ref().unwrap().filesize, Some(12345));

        let reply = &posts[1];
        assert_eq!(reply.comment_raw, "");
        assert_eq!(reply.attached_ext, None);
        assert_eq!(reply.image_props, None);
        assert_eq!(reply.file_props, None);
    }

    #[test]
    fn snapshot_checks_thread_identity() {
        let b = BoardId::new("b").unwrap();
        let now = Utc::now();
        let raw = DOC.as_bytes().to_vec();
        let s = ThreadSnapshot::parse(b.clone(), 570368, now, raw.clone()).unwrap();
        assert_eq!(s.raw, raw);
        assert_eq!(
            ThreadSnapshot::parse(b.clone(), 1, now, raw),
            Err(PayloadError::ThreadMismatch {
                expected: 1,
                found: 570368
            })
        );
        assert_eq!(
            ThreadSnapshot::parse(b, 1, now, br#"{"posts":[]}"#.to_vec()),
            Err(PayloadError::NoPosts)
        );
    }

    #[test]
    fn rejects_documents_without_posts() {
        assert_eq!(parse_thread_payload(b""), Err(PayloadError::Empty));
        assert!(matches!(
            parse_thread_payload(br#"{"threads":[]}"#),
            Err(PayloadError::Malformed(_))
        ));
        assert!(matches!(
            parse_thread_payload(br#"{"posts":{}}"#),
            Err(PayloadError::Malformed(_))
        ));
        assert!(matches!(
            parse_thread_payload(b"not json"),
            Err(PayloadError::Malformed(_))
        ));
    }
}
