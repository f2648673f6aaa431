//! Tokenizer shared by the parser and the token-aware rewrite rules.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    /// Content of `<...>`, not yet resolved against BASE.
    IriRef(String),
    /// `prefix:local` with PLX escapes in the local part already decoded.
    PrefixedName { prefix: String, local: String },
    BlankNodeLabel(String),
    Var(String),
    /// Decoded string literal body.
    String(String),
    LangTag(String),
    Integer(String),
    Decimal(String),
    Double(String),
    /// Keywords, built-in names, `a`, `true`, `false`.
    Word(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Dot,
    Semicolon,
    Comma,
    Star,
    Eq,
    NotEq,
    Lt,
    Gt,
    Le,
    Ge,
    AndAnd,
    OrOr,
    Bang,
    Plus,
    Minus,
    Slash,
    Caret,
    DoubleCaret,
    Pipe,
    /// A `?` not followed by a variable name (property-path modifier).
    Question,
    Eof,
}

impl TokenKind {
    pub fn is_word(&self, keyword: &str) -> bool {
        matches!(self, TokenKind::Word(w) if w.eq_ignore_ascii_case(keyword))
    }

    pub fn describe(&self) -> String {
        match self {
            TokenKind::IriRef(i) => format!("IRI <{i}>"),
            TokenKind::PrefixedName { prefix, local } => format!("prefixed name {prefix}:{local}"),
            TokenKind::BlankNodeLabel(l) => format!("blank node _:{l}"),
            TokenKind::Var(v) => format!("variable ?{v}"),
            TokenKind::String(_) => "string literal".into(),
            TokenKind::LangTag(t) => format!("language tag @{t}"),
            TokenKind::Integer(n) | TokenKind::Decimal(n) | TokenKind::Double(n) => {
                format!("number {n}")
            }
            TokenKind::Word(w) => format!("'{w}'"),
            TokenKind::Eof => "end of input".into(),
            other => format!("'{}'", other.punct_text()),
        }
    }

    fn punct_text(&self) -> &'static str {
        match self {
            TokenKind::LBrace => "{",
            TokenKind::RBrace => "}",
            TokenKind::LParen => "(",
            TokenKind::RParen => ")",
            TokenKind::LBracket => "[",
            TokenKind::RBracket => "]",
            TokenKind::Dot => ".",
            TokenKind::Semicolon => ";",
            TokenKind::Comma => ",",
            TokenKind::Star => "*",
            TokenKind::Eq => "=",
            TokenKind::NotEq => "!=",
            TokenKind::Lt => "<",
            TokenKind::Gt => ">",
            TokenKind::Le => "<=",
            TokenKind::Ge => ">=",
            TokenKind::AndAnd => "&&",
            TokenKind::OrOr => "||",
            TokenKind::Bang => "!",
            TokenKind::Plus => "+",
            TokenKind::Minus => "-",
            TokenKind::Slash => "/",
            TokenKind::Caret => "^",
            TokenKind::DoubleCaret => "^^",
            TokenKind::Pipe => "|",
            TokenKind::Question => "?",
            _ => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    /// Byte range in the source text.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for LexError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at byte {}", self.message, self.offset)
    }
}

impl std::error::Error for LexError {}

/// Tokenize the whole input. The returned vector always ends with `Eof`.
pub fn tokenize(text: &str) -> Result<Vec<Token>, LexError> {
    let mut lexer = Lexer { text, pos: 0 };
    let mut tokens = Vec::new();
    loop {
        let token = lexer.next_token()?;
        let done = token.kind == TokenKind::Eof;
        tokens.push(token);
        if done {
            return Ok(tokens);
        }
    }
}

struct Lexer<'a> {
    text: &'a str,
    pos: usize,
}

fn is_pn_chars_base(c: char) -> bool {
    c.is_ascii_alphabetic() || (!c.is_ascii() && c.is_alphanumeric())
}

fn is_pn_chars_u(c: char) -> bool {
    is_pn_chars_base(c) || c == '_'
}

fn is_pn_chars(c: char) -> bool {
    is_pn_chars_u(c) || c == '-' || c.is_ascii_digit() || c == '\u{00B7}'
}

fn is_varname_char(c: char) -> bool {
    is_pn_chars_u(c) || c.is_ascii_digit() || c == '\u{00B7}'
}

const LOCAL_ESCAPABLE: &str = "_~.-!$&'()*+,;=/?#@%";

impl<'a> Lexer<'a> {
    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn peek_nth(&self, n: usize) -> Option<char> {
        self.rest().chars().nth(n)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn error(&self, offset: usize, message: impl Into<String>) -> LexError {
        LexError {
            offset,
            message: message.into(),
        }
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('#') => {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                }
                _ => return,
            }
        }
    }

    fn next_token(&mut self) -> Result<Token, LexError> {
        self.skip_trivia();
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok(Token {
                kind: TokenKind::Eof,
                start,
                end: start,
            });
        };
        let kind = match c {
            '<' => self.lex_angle()?,
            '?' | '$' => self.lex_var()?,
            '"' | '\'' => self.lex_string()?,
            '@' => self.lex_langtag()?,
            '_' if self.peek_nth(1) == Some(':') => self.lex_blank()?,
            '0'..='9' => self.lex_number(),
            '.' if self.peek_nth(1).is_some_and(|d| d.is_ascii_digit()) => self.lex_number(),
            ':' => {
                self.bump();
                let local = self.lex_local()?;
                TokenKind::PrefixedName {
                    prefix: String::new(),
                    local,
                }
            }
            c if is_pn_chars_base(c) || c == '_' => self.lex_word_or_pname()?,
            _ => self.lex_punct()?,
        };
        Ok(Token {
            kind,
            start,
            end: self.pos,
        })
    }

    fn lex_angle(&mut self) -> Result<TokenKind, LexError> {
        let rest = self.rest();
        let body = &rest[1..];
        let mut end = None;
        for (i, ch) in body.char_indices() {
            match ch {
                '>' => {
                    end = Some(i);
                    break;
                }
                '<' | '"' | '{' | '}' | '|' | '^' | '`' | '\\' => break,
                c if (c as u32) <= 0x20 => break,
                _ => {}
            }
        }
        if let Some(i) = end {
            let iri = body[..i].to_owned();
            self.pos += 1 + i + 1;
            return Ok(TokenKind::IriRef(iri));
        }
        self.bump();
        if self.peek() == Some('=') {
            self.bump();
            Ok(TokenKind::Le)
        } else {
            Ok(TokenKind::Lt)
        }
    }

    fn lex_var(&mut self) -> Result<TokenKind, LexError> {
        let start = self.pos;
        let sigil = self.bump().unwrap_or('?');
        let name_start = self.pos;
        while self.peek().is_some_and(is_varname_char) {
            self.bump();
        }
        if self.pos == name_start {
            if sigil == '?' {
                return Ok(TokenKind::Question);
            }
            return Err(self.error(start, "expected a variable name after '$'"));
        }
        Ok(TokenKind::Var(self.text[name_start..self.pos].to_owned()))
    }

    fn lex_string(&mut self) -> Result<TokenKind, LexError> {
        let start = self.pos;
        let quote = self.bump().unwrap_or('"');
        let long = self.peek() == Some(quote) && self.peek_nth(1) == Some(quote);
        if long {
            self.bump();
            self.bump();
        }
        let mut out = String::new();
        loop {
            let Some(c) = self.bump() else {
                return Err(self.error(start, "unterminated string literal"));
            };
            if c == quote {
                if !long {
                    break;
                }
                if self.peek() == Some(quote) && self.peek_nth(1) == Some(quote) {
                    self.bump();
                    self.bump();
                    // Quotes directly before the closing delimiter belong to the body.
                    while self.peek() == Some(quote) {
                        out.push(quote);
                        self.bump();
                    }
                    break;
                }
                out.push(c);
            } else if c == '\\' {
                out.push(self.lex_escape(start)?);
            } else if !long && (c == '\n' || c == '\r') {
                return Err(self.error(start, "line break in short string literal"));
            } else {
                out.push(c);
            }
        }
        Ok(TokenKind::String(out))
    }

    fn lex_escape(&mut self, start: usize) -> Result<char, LexError> {
        let c = self
            .bump()
            .ok_or_else(|| self.error(start, "unterminated escape sequence"))?;
        Ok(match c {
            't' => '\t',
            'b' => '\u{8}',
            'n' => '\n',
            'r' => '\r',
            'f' => '\u{c}',
            '"' => '"',
            '\'' => '\'',
            '\\' => '\\',
            'u' | 'U' => {
                let len = if c == 'u' { 4 } else { 8 };
                let hex: String = (0..len).filter_map(|_| self.bump()).collect();
                u32::from_str_radix(&hex, 16)
                    .ok()
                    .and_then(char::from_u32)
                    .ok_or_else(|| self.error(start, "invalid unicode escape"))?
            }
            other => return Err(self.error(self.pos - 1, format!("invalid escape '\\{other}'"))),
        })
    }

    fn lex_langtag(&mut self) -> Result<TokenKind, LexError> {
        let start = self.pos;
        self.bump();
        let tag_start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
            self.bump();
        }
        if self.pos == tag_start {
            return Err(self.error(start, "empty language tag"));
        }
        while self.peek() == Some('-') && self.peek_nth(1).is_some_and(|c| c.is_ascii_alphanumeric()) {
            self.bump();
            while self.peek().is_some_and(|c| c.is_ascii_alphanumeric()) {
                self.bump();
            }
        }
        Ok(TokenKind::LangTag(self.text[tag_start..self.pos].to_owned()))
    }

    fn lex_blank(&mut self) -> Result<TokenKind, LexError> {
        let start = self.pos;
        self.pos += 2;
        let label_start = self.pos;
        match self.peek() {
            Some(c) if is_pn_chars_u(c) || c.is_ascii_digit() => {
                self.bump();
            }
            _ => return Err(self.error(start, "empty blank node label")),
        }
        while self.peek().is_some_and(|c| is_pn_chars(c) || c == '.') {
            self.bump();
        }
        while self.text[label_start..self.pos].ends_with('.') {
            self.pos -= 1;
        }
        Ok(TokenKind::BlankNodeLabel(self.text[label_start..self.pos].to_owned()))
    }

    fn lex_number(&mut self) -> TokenKind {
        let start = self.pos;
        let mut decimal = false;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        if self.peek() == Some('.') && self.peek_nth(1).is_some_and(|c| c.is_ascii_digit()) {
            decimal = true;
            self.bump();
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let exp_digits = match self.peek_nth(1) {
                Some('+' | '-') => self.peek_nth(2),
                other => other,
            };
            if exp_digits.is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
                if matches!(self.peek(), Some('+' | '-')) {
                    self.bump();
                }
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.bump();
                }
                return TokenKind::Double(self.text[start..self.pos].to_owned());
            }
        }
        let text = self.text[start..self.pos].to_owned();
        if decimal {
            TokenKind::Decimal(text)
        } else {
            TokenKind::Integer(text)
        }
    }

    fn lex_word_or_pname(&mut self) -> Result<TokenKind, LexError> {
        let start = self.pos;
        let run_len: usize = self
            .rest()
            .chars()
            .take_while(|&c| is_pn_chars(c) || c == '.')
            .map(char::len_utf8)
            .sum();
        let run = &self.rest()[..run_len];
        let after = self.rest()[run_len..].chars().next();
        if after == Some(':') && !run.ends_with('.') {
            let prefix = run.to_owned();
            self.pos += run_len + 1;
            let local = self.lex_local()?;
            return Ok(TokenKind::PrefixedName { prefix, local });
        }
        let word_len: usize = self
            .rest()
            .chars()
            .take_while(|&c| c.is_ascii_alphanumeric() || c == '_' || (!c.is_ascii() && c.is_alphanumeric()))
            .map(char::len_utf8)
            .sum();
        if word_len == 0 {
            return Err(self.error(start, "unexpected character"));
        }
        self.pos += word_len;
        Ok(TokenKind::Word(self.text[start..self.pos].to_owned()))
    }

    fn lex_local(&mut self) -> Result<String, LexError> {
        let mut out = String::new();
        // Byte offset in `out` after the last char that may legally end the name.
        let mut committed = (0usize, self.pos);
        let mut first = true;
        while let Some(c) = self.peek() {
            let ok_first = is_pn_chars_u(c) || c == ':' || c.is_ascii_digit();
            let ok_rest = is_pn_chars(c) || c == '.' || c == ':';
            if (first && ok_first) || (!first && ok_rest) {
                self.bump();
                out.push(c);
            } else if c == '%'
                && self.peek_nth(1).is_some_and(|h| h.is_ascii_hexdigit())
                && self.peek_nth(2).is_some_and(|h| h.is_ascii_hexdigit())
            {
                for _ in 0..3 {
                    out.push(self.bump().unwrap_or_default());
                }
            } else if c == '\\' && self.peek_nth(1).is_some_and(|e| LOCAL_ESCAPABLE.contains(e)) {
                self.bump();
                out.push(self.bump().unwrap_or_default());
                first = false;
                committed = (out.len(), self.pos);
                continue;
            } else {
                break;
            }
            first = false;
            if c != '.' {
                committed = (out.len(), self.pos);
            }
        }
        // A trailing '.' terminates the triple rather than the name.
        out.truncate(committed.0);
        self.pos = committed.1;
        Ok(out)
    }

    fn lex_punct(&mut self) -> Result<TokenKind, LexError> {
        let start = self.pos;
        let c = self.bump().unwrap_or('\0');
        let next = self.peek();
        let two = |lexer: &mut Self, kind: TokenKind| {
            lexer.bump();
            Ok(kind)
        };
        match (c, next) {
            ('&', Some('&')) => two(self, TokenKind::AndAnd),
            ('|', Some('|')) => two(self, TokenKind::OrOr),
            ('!', Some('=')) => two(self, TokenKind::NotEq),
            ('>', Some('=')) => two(self, TokenKind::Ge),
            ('^', Some('^')) => two(self, TokenKind::DoubleCaret),
            ('{', _) => Ok(TokenKind::LBrace),
            ('}', _) => Ok(TokenKind::RBrace),
            ('(', _) => Ok(TokenKind::LParen),
            (')', _) => Ok(TokenKind::RParen),
            ('[', _) => Ok(TokenKind::LBracket),
            (']', _) => Ok(TokenKind::RBracket),
            ('.', _) => Ok(TokenKind::Dot),
            (';', _) => Ok(TokenKind::Semicolon),
            (',', _) => Ok(TokenKind::Comma),
            ('*', _) => Ok(TokenKind::Star),
            ('=', _) => Ok(TokenKind::Eq),
            ('>', _) => Ok(TokenKind::Gt),
            ('!', _) => Ok(TokenKind::Bang),
            ('+', _) => Ok(TokenKind::Plus),
            ('-', _) => Ok(TokenKind::Minus),
            ('/', _) => Ok(TokenKind::Slash),
            ('^', _) => Ok(TokenKind::Caret),
            ('|', _) => Ok(TokenKind::Pipe),
            (other, _) => Err(self.error(start, format!("unexpected character '{other}'"))),
        }
    }
}
