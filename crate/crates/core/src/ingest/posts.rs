//! Streaming reader for Stack Exchange `Posts.xml` dumps.

use std::io::BufRead;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostType {
    Question,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPost {
    pub id: u64,
    pub post_type: PostType,
    pub parent_id: Option<u64>,
    pub accepted_answer_id: Option<u64>,
    pub owner_user_id: Option<u64>,
    pub body: String,
    pub creation_date: String,
}

/// Tallies of rows that did not become posts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseTally {
    /// Rows with a post type other than question or answer.
    pub skipped: usize,
    /// Rows missing `Id`/`PostTypeId` or carrying unparsable values.
    pub rejected: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedPosts {
    pub posts: Vec<RawPost>,
    pub tally: ParseTally,
}

/// Pulls one `row` at a time out of a `posts` document.
///
/// Only the current row is buffered, so memory stays flat no matter how
/// large the dump is.
pub struct PostReader<R: BufRead> {
    reader: Reader<R>,
    buf: Vec<u8>,
    depth: usize,
    seen_root: bool,
    done: bool,
    tally: ParseTally,
}

impl<R: BufRead> PostReader<R> {
    pub fn new(source: R) -> Self {
        Self {
            reader: Reader::from_reader(source),
            buf: Vec::with_capacity(4096),
            depth: 0,
            seen_root: false,
            done: false,
            tally: ParseTally::default(),
        }
    }

    pub fn tally(&self) -> ParseTally {
        self.tally
    }

    /// Capacity of the internal event buffer; bounded by the longest row.
    pub fn buffer_capacity(&self) -> usize {
        self.buf.capacity()
    }

    fn xml_error(&self, message: impl ToString) -> IngestError {
        IngestError::Xml {
            offset: self.reader.error_position().max(self.reader.buffer_position()),
            message: message.to_string(),
        }
    }

    /// Next question or answer post, `Ok(None)` at the end of the document.
    pub fn next_post(&mut self) -> Result<Option<RawPost>, IngestError> {
        if self.done {
            return Ok(None);
        }
        loop {
            self.buf.clear();
            let event = match self.reader.read_event_into(&mut self.buf) {
                Ok(ev) => ev,
                Err(e) => {
                    let err = IngestError::Xml {
                        offset: self.reader.error_position(),
                        message: e.to_string(),
                    };
                    self.done = true;
                    return Err(err);
                }
            };
            match event {
                Event::Start(start) => {
                    let is_row = start.local_name().as_ref() == b"row";
                    if self.depth == 0 {
                        if start.local_name().as_ref() != b"posts" {
                            let name = String::from_utf8_lossy(start.local_name().as_ref()).into_owned();
                            self.done = true;
                            return Err(self.xml_error(format!("expected <posts> root, found <{name}>")));
                        }
                        self.seen_root = true;
                    } else if self.depth == 1 && is_row {
                        let outcome = row_to_post(&start);
                        self.depth += 1;
                        if let Some(post) = self.account(outcome) {
                            return Ok(Some(post));
                        }
                        continue;
                    }
                    self.depth += 1;
                }
                Event::Empty(start) => {
                    if self.depth == 0 {
                        if start.local_name().as_ref() == b"posts" {
                            self.seen_root = true;
                            continue;
                        }
                        self.done = true;
                        return Err(self.xml_error("expected <posts> root"));
                    }
                    if self.depth == 1 && start.local_name().as_ref() == b"row" {
                        let outcome = row_to_post(&start);
                        if let Some(post) = self.account(outcome) {
                            return Ok(Some(post));
                        }
                    }
                }
                Event::End(_) => {
                    self.depth = self.depth.saturating_sub(1);
                }
                Event::Eof => {
                    self.done = true;
                    if self.depth != 0 {
                        return Err(self.xml_error("unexpected end of document inside <posts>"));
                    }
                    if !self.seen_root {
                        return Err(self.xml_error("document has no <posts> root"));
                    }
                    return Ok(None);
                }
                Event::Text(text) if self.depth == 0 && !text.iter().all(u8::is_ascii_whitespace) => {
                    self.done = true;
                    return Err(self.xml_error("text outside the <posts> root"));
                }
                _ => {}
            }
        }
    }

    fn account(&mut self, outcome: RowOutcome) -> Option<RawPost> {
        match outcome {
            RowOutcome::Post(p) => Some(p),
            RowOutcome::Skipped => {
                self.tally.skipped += 1;
                None
            }
            RowOutcome::Rejected => {
                self.tally.rejected += 1;
                None
            }
        }
    }
}

impl<R: BufRead> Iterator for PostReader<R> {
    type Item = Result<RawPost, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_post().transpose()
    }
}

enum RowOutcome {
    Post(RawPost),
    Skipped,
    Rejected,
}

fn row_to_post(row: &BytesStart<'_>) -> RowOutcome {
    let mut id = None;
    let mut type_id = None;
    let mut parent_id = None;
    let mut accepted_answer_id = None;
    let mut owner_user_id = None;
    let mut body = String::new();
    let mut creation_date = String::new();

    for attr in row.attributes() {
        let Ok(attr) = attr else {
            return RowOutcome::Rejected;
        };
        let Ok(value) = attr.unescape_value() else {
            return RowOutcome::Rejected;
        };
        let parse = |v: &str| v.trim().parse::<u64>().ok();
        match attr.key.as_ref() {
            b"Id" => match parse(&value) {
                Some(v) => id = Some(v),
                None => return RowOutcome::Rejected,
            },
            b"PostTypeId" => match parse(&value) {
                Some(v) => type_id = Some(v),
                None => return RowOutcome::Rejected,
            },
            b"ParentId" => parent_id = parse(&value),
            b"AcceptedAnswerId" => accepted_answer_id = parse(&value),
            b"OwnerUserId" => owner_user_id = parse(&value),
            b"Body" => body = value.into_owned(),
            b"CreationDate" => creation_date = value.into_owned(),
            _ => {}
        }
    }

    let (Some(id), Some(type_id)) = (id, type_id) else {
        return RowOutcome::Rejected;
    };
    let post_type = match type_id {
        1 => PostType::Question,
        2 => PostType::Answer,
        _ => return RowOutcome::Skipped,
    };
    match post_type {
        PostType::Answer if parent_id.is_none() => return RowOutcome::Rejected,
        PostType::Question => parent_id = None,
        PostType::Answer => accepted_answer_id = None,
    }
    RowOutcome::Post(RawPost {
        id,
        post_type,
        parent_id,
        accepted_answer_id,
        owner_user_id,
        body,
        creation_date,
    })
}

/// Reads every question and answer row from a `Posts.xml` document.
pub fn parse_posts<R: BufRead>(source: R) -> Result<ParsedPosts, IngestError> {
    let mut reader = PostReader::new(source);
    let mut posts = Vec::new();
    while let Some(post) = reader.next_post()? {
        posts.push(post);
    }
    Ok(ParsedPosts {
        posts,
        tally: reader.tally(),
    })
}
