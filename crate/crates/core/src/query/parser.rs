use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Query, QueryError, TimeRange};
use crate::domain::{StreamId, Timestamp};
use crate::lexer::{describe, Cursor, Pos};
use crate::period::Period;

fn syntax(pos: Pos, expected: impl Into<String>) -> QueryError {
    QueryError::Syntax {
        line: pos.line,
        col: pos.col,
        expected: expected.into(),
    }
}

struct Parser<'a> {
    cur: Cursor<'a>,
}

impl<'a> Parser<'a> {
    fn found(&self) -> String {
        describe(self.cur.peek())
    }

    fn keyword(&mut self, word: &str) -> Result<(), QueryError> {
        self.cur.skip_trivia();
        let pos = self.cur.pos();
        if self.cur.eat_keyword(word) {
            Ok(())
        } else {
            Err(syntax(pos, format!("`{word}`, found {}", self.found())))
        }
    }

    fn optional_keyword(&mut self, word: &str) -> bool {
        self.cur.skip_trivia();
        self.cur.eat_keyword(word)
    }

    fn path(&mut self) -> Result<StreamId, QueryError> {
        self.cur.skip_trivia();
        let start = self.cur.rest();
        let mut len = 0;
        loop {
            let pos = self.cur.pos();
            let seg = self
                .cur
                .ident()
                .ok_or_else(|| syntax(pos, format!("stream path segment, found {}", self.found())))?;
            len += seg.len();
            if self.cur.peek() == Some('.') && self.cur.peek_nth(1) != Some('.') {
                self.cur.bump();
                len += 1;
            } else {
                break;
            }
        }
        Ok(StreamId::new(&start[..len]).expect("grammar admits only valid stream ids"))
    }

    fn timestamp(&mut self) -> Result<Timestamp, QueryError> {
        self.cur.skip_trivia();
        let pos = self.cur.pos();
        let rest = self.cur.rest();
        let mut len = 0;
        for (i, c) in rest.char_indices() {
            let range_dots = c == '.' && rest[i + 1..].starts_with('.');
            if range_dots || !(c.is_ascii_alphanumeric() || matches!(c, ':' | '-' | '+' | '.')) {
                break;
            }
            len = i + c.len_utf8();
        }
        if len == 0 {
            return Err(syntax(pos, format!("RFC 3339 timestamp, found {}", self.found())));
        }
        let text = &rest[..len];
        let ts = chrono::DateTime::parse_from_rfc3339(text).map_err(|_| QueryError::InvalidTimestamp {
            line: pos.line,
            col: pos.col,
            text: text.into(),
        })?;
        for _ in text.chars() {
            self.cur.bump();
        }
        Ok(ts.with_timezone(&chrono::Utc))
    }

    fn duration(&mut self) -> Result<Period, QueryError> {
        self.cur.skip_trivia();
        let pos = self.cur.pos();
        let digits = self.cur.take_while(|c| c.is_ascii_digit());
        if digits.is_empty() {
            return Err(syntax(pos, format!("duration such as 15s, found {}", self.found())));
        }
        let unit_pos = self.cur.pos();
        let unit = self.cur.take_while(|c| c.is_ascii_alphabetic());
        let scale = match unit {
            "s" => 1,
            "m" => 60,
            "h" => 3600,
            "" => return Err(syntax(unit_pos, format!("duration unit (s, m or h), found {}", self.found()))),
            other => {
                return Err(QueryError::UnknownDurationUnit {
                    line: unit_pos.line,
                    col: unit_pos.col,
                    unit: other.into(),
                })
            }
        };
        digits
            .parse::<u64>()
            .ok()
            .and_then(|n| n.checked_mul(scale))
            .and_then(Period::from_secs)
            .ok_or_else(|| syntax(pos, "positive duration"))
    }

    fn query(&mut self) -> Result<Query, QueryError> {
        self.keyword("GET")?;
        let mut items = Vec::new();
        items.push(self.path()?);
        loop {
            self.cur.skip_trivia();
            if self.cur.eat(",") {
                items.push(self.path()?);
            } else {
                break;
            }
        }
        self.keyword("RANGE")?;
        let start = self.timestamp()?;
        self.cur.skip_trivia();
        let pos = self.cur.pos();
        if !self.cur.eat("..") {
            return Err(syntax(pos, format!("`..`, found {}", self.found())));
        }
        let end = self.timestamp()?;
        let sample_period = if self.optional_keyword("SAMPLE") {
            Some(self.duration()?)
        } else {
            None
        };
        let noise_epsilon = if self.optional_keyword("NOISE") {
            self.keyword("eps")?;
            self.cur.skip_trivia();
            let pos = self.cur.pos();
            if !self.cur.eat("=") {
                return Err(syntax(pos, format!("`=`, found {}", self.found())));
            }
            self.cur.skip_trivia();
            let pos = self.cur.pos();
            Some(
                self.cur
                    .number()
                    .ok_or_else(|| syntax(pos, format!("number, found {}", self.found())))?,
            )
        } else {
            None
        };
        let purpose = if self.optional_keyword("PURPOSE") {
            self.cur.skip_trivia();
            Some(
                self.cur
                    .string_lit()
                    .map_err(|(pos, expected)| syntax(pos, expected))?,
            )
        } else {
            None
        };
        self.cur.skip_trivia();
        if !self.cur.is_eof() {
            let expected = match (sample_period, noise_epsilon, &purpose) {
                (None, None, None) => "`SAMPLE`, `NOISE`, `PURPOSE` or end of input",
                (_, None, None) => "`NOISE`, `PURPOSE` or end of input",
                (_, _, None) => "`PURPOSE` or end of input",
                _ => "end of input",
            };
            return Err(syntax(self.cur.pos(), format!("{expected}, found {}", self.found())));
        }
        let q = Query {
            items,
            range: TimeRange { start, end },
            sample_period,
            noise_epsilon,
            purpose,
        };
        q.validate()?;
        Ok(q)
    }
}

/// Parses one query in the concrete syntax documented on [`Query`].
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    Parser {
        cur: Cursor::new(text, None),
    }
    .query()
}
