use std::io::{BufReader, Read};

use midl::ingest::{
    build_bags, ingest_dump, parse_posts, read_bags, stats, write_bags, Label, PostReader, PostType, Tokenizer, UNK_ID,
};

const FIXTURE: &str = include_str!("fixtures/posts.xml");

#[test]
fn fixture_rows() {
    let parsed = parse_posts(FIXTURE.as_bytes()).unwrap();
    assert_eq!(parsed.posts.len(), 8);
    assert_eq!(parsed.tally.skipped, 1);
    assert_eq!(parsed.tally.rejected, 0);
    let questions = parsed.posts.iter().filter(|p| p.post_type == PostType::Question).count();
    assert_eq!(questions, 3);
    let q1 = &parsed.posts[0];
    assert_eq!(q1.accepted_answer_id, Some(4));
    assert_eq!(q1.owner_user_id, Some(100));
    assert!(q1.body.starts_with("<p>How do I root"));
}

#[test]
fn fixture_bags_and_stats() {
    let out = ingest_dump(FIXTURE.as_bytes(), &Tokenizer::default(), 1).unwrap();
    let bags = &out.report.bags;
    assert_eq!(bags.len(), 2);
    assert_eq!(out.report.dropped_unanswered, 1);
    assert_eq!(out.report.orphan_answers, 0);
    assert_eq!(out.tally.skipped, 1);
    let labels: Vec<(u64, Label)> = bags.iter().map(|b| (b.question_id, b.label)).collect();
    assert_eq!(labels, vec![(1, Label::Satisfied), (2, Label::Unsatisfied)]);
    assert_eq!(bags[0].answers.len(), 3);
    assert_eq!(bags[1].answers.len(), 2);

    let s = stats(bags);
    assert_eq!((s.question_count, s.answer_count, s.user_count), (2, 5, 2));
    assert_eq!(s.satisfied_fraction, 0.5);

    // "phone" appears in three bodies, "tag" only in the skipped row
    let phone = out.vocab.id("phone");
    assert_ne!(phone, UNK_ID);
    assert_eq!(out.vocab.count(phone), Some(3));
    assert_eq!(out.vocab.id("wiki"), UNK_ID);
}

#[test]
fn bags_file_round_trip() {
    let out = ingest_dump(FIXTURE.as_bytes(), &Tokenizer::default(), 1).unwrap();
    let mut buf = Vec::new();
    write_bags(&out.report.bags, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().next().unwrap().contains("\"label\":1"));
    assert_eq!(read_bags(buf.as_slice()).unwrap(), out.report.bags);
}

#[test]
fn ownerless_and_orphans_are_counted() {
    let xml = r#"<posts>
      <row Id="1" PostTypeId="1" Body="a b" />
      <row Id="2" PostTypeId="2" ParentId="1" Body="c" OwnerUserId="5" />
      <row Id="3" PostTypeId="2" ParentId="99" Body="d" OwnerUserId="5" />
      <row Id="4" PostTypeId="1" Body="&lt;img src=x&gt;" OwnerUserId="6" />
      <row Id="5" PostTypeId="2" ParentId="4" Body="" OwnerUserId="5" />
    </posts>"#;
    let parsed = parse_posts(xml.as_bytes()).unwrap();
    let vocab = midl::ingest::Vocab::build(parsed.posts.iter().map(|p| Tokenizer::default().tokenize(&p.body)), 1);
    let report = build_bags(&parsed.posts, &vocab, &Tokenizer::default());
    assert_eq!(report.dropped_no_owner, 1);
    assert_eq!(report.orphan_answers, 1);
    assert_eq!(report.bags.len(), 1);
    // texts that tokenize to nothing still encode to one unknown token
    assert_eq!(report.bags[0].question, vec![UNK_ID]);
    assert_eq!(report.bags[0].answers, vec![vec![UNK_ID]]);
}

/// Produces a `posts` document with `rows` rows without holding it in memory.
struct GeneratedDump {
    rows: usize,
    next: usize,
    pending: Vec<u8>,
    pos: usize,
    closed: bool,
}

impl GeneratedDump {
    fn new(rows: usize) -> Self {
        Self {
            rows,
            next: 0,
            pending: b"<?xml version=\"1.0\"?>\n<posts>\n".to_vec(),
            pos: 0,
            closed: false,
        }
    }

    fn refill(&mut self) {
        self.pending.clear();
        self.pos = 0;
        if self.next < self.rows {
            let id = self.next + 1;
            let row = if id % 3 == 1 {
                format!("  <row Id=\"{id}\" PostTypeId=\"1\" OwnerUserId=\"{}\" Body=\"&lt;p&gt;question number {id} about phones and batteries&lt;/p&gt;\" />\n", id % 97)
            } else {
                let parent = id - (id - 1) % 3;
                format!("  <row Id=\"{id}\" PostTypeId=\"2\" ParentId=\"{parent}\" OwnerUserId=\"7\" Body=\"&lt;p&gt;an answer with several words in it&lt;/p&gt;\" />\n")
            };
            self.pending.extend_from_slice(row.as_bytes());
            self.next += 1;
        } else if !self.closed {
            self.pending.extend_from_slice(b"</posts>\n");
            self.closed = true;
        }
    }
}

impl Read for GeneratedDump {
    fn read(&mut self, out: &mut [u8]) -> std::io::Result<usize> {
        if self.pos == self.pending.len() {
            self.refill();
        }
        let n = out.len().min(self.pending.len() - self.pos);
        out[..n].copy_from_slice(&self.pending[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

#[test]
fn reader_memory_is_bounded_by_one_row() {
    // about 30 MB of XML
    let rows = 300_000;
    let mut reader = PostReader::new(BufReader::with_capacity(8192, GeneratedDump::new(rows)));
    let mut count = 0;
    let mut peak = 0;
    while let Some(post) = reader.next_post().unwrap() {
        count += 1;
        assert_eq!(post.id, count as u64);
        peak = peak.max(reader.buffer_capacity());
    }
    assert_eq!(count, rows);
    assert!(peak <= 4096, "event buffer grew to {peak} bytes");
}
