use crate::error::ParseError;

use super::{ProgramNode, Token};

/// Nesting limit; deeper input is rejected instead of overflowing the stack.
const MAX_NESTING: usize = 256;

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

fn err(offset: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        offset,
        message: message.into(),
    }
}

fn is_name_byte(b: u8) -> bool {
    b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-'
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, b: u8) -> Result<(), ParseError> {
        match self.peek() {
            Some(c) if c == b => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(err(self.pos, format!("expected `{}`, found `{}`", b as char, c as char))),
            None => Err(err(self.pos, format!("expected `{}`, found end of input", b as char))),
        }
    }

    fn name(&mut self) -> Result<&'a str, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && is_name_byte(self.src[self.pos]) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.src.get(start) {
                Some(c) => err(start, format!("expected a token, found `{}`", *c as char)),
                None => err(start, "expected a token, found end of input"),
            });
        }
        Ok(std::str::from_utf8(&self.src[start..self.pos]).expect("ascii name"))
    }

    fn call(&mut self, nesting: usize) -> Result<ProgramNode, ParseError> {
        if nesting > MAX_NESTING {
            return Err(err(self.pos, format!("nesting deeper than {MAX_NESTING}")));
        }
        self.skip_ws();
        let start = self.pos;
        let name = self.name()?;
        let arg = if self.peek() == Some(b'[') {
            self.pos += 1;
            let a = self.name()?;
            self.expect(b']')?;
            Some(a)
        } else {
            None
        };
        let text = match arg {
            Some(a) => format!("{name}[{a}]"),
            None => name.to_string(),
        };
        let token = Token::from_parts(name, arg).ok_or_else(|| err(start, format!("unknown token `{text}`")))?;

        let mut children = Vec::new();
        if self.peek() == Some(b'(') {
            if token.arity() == 0 {
                return Err(err(start, format!("`{text}` takes no argument list")));
            }
            let open = self.pos;
            self.pos += 1;
            if self.peek() == Some(b')') {
                self.pos += 1;
            } else {
                self.arguments(open, nesting, &mut children)?;
            }
        }
        if children.len() != token.arity() {
            return Err(err(
                start,
                format!(
                    "`{text}` takes {} argument{}, got {}",
                    token.arity(),
                    if token.arity() == 1 { "" } else { "s" },
                    children.len()
                ),
            ));
        }
        Ok(ProgramNode { token, children })
    }

    fn arguments(&mut self, open: usize, nesting: usize, children: &mut Vec<ProgramNode>) -> Result<(), ParseError> {
        loop {
            if self.peek().is_none() {
                return Err(err(open, "unbalanced `(`"));
            }
            children.push(self.call(nesting + 1)?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    return Ok(());
                }
                None => return Err(err(open, "unbalanced `(`")),
                Some(c) => return Err(err(self.pos, format!("expected `,` or `)`, found `{}`", c as char))),
            }
        }
    }
}

/// Parses one program. Error offsets are byte positions into `text`.
pub fn parse_program(text: &str) -> Result<ProgramNode, ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let node = p.call(0)?;
    match p.peek() {
        None => Ok(node),
        Some(b')') => Err(err(p.pos, "unbalanced `)`")),
        Some(c) => Err(err(p.pos, format!("trailing input starting with `{}`", c as char))),
    }
}
