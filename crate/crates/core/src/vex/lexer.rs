use super::ast::Span;
use super::Diagnostic;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    // keywords
    Pub,
    Fn,
    Let,
    If,
    Else,
    While,
    Return,
    Throw,
    Try,
    Catch,
    True,
    False,
    Null,
    And,
    Or,
    Not,
    // punctuation
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    ColonColon,
    Dot,
    At,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    Assign,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(i) => format!("integer `{i}`"),
            Tok::Float(x) => format!("float `{x}`"),
            Tok::Str(_) => "string literal".to_string(),
            Tok::Eof => "end of file".to_string(),
            other => format!("`{}`", other.text()),
        }
    }

    fn text(&self) -> &'static str {
        match self {
            Tok::Pub => "pub",
            Tok::Fn => "fn",
            Tok::Let => "let",
            Tok::If => "if",
            Tok::Else => "else",
            Tok::While => "while",
            Tok::Return => "return",
            Tok::Throw => "throw",
            Tok::Try => "try",
            Tok::Catch => "catch",
            Tok::True => "true",
            Tok::False => "false",
            Tok::Null => "null",
            Tok::And => "and",
            Tok::Or => "or",
            Tok::Not => "not",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::Colon => ":",
            Tok::ColonColon => "::",
            Tok::Dot => ".",
            Tok::At => "@",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Percent => "%",
            Tok::EqEq => "==",
            Tok::NotEq => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::Assign => "=",
            Tok::Ident(_) | Tok::Int(_) | Tok::Float(_) | Tok::Str(_) | Tok::Eof => "",
        }
    }
}

fn keyword(s: &str) -> Option<Tok> {
    Some(match s {
        "pub" => Tok::Pub,
        "fn" => Tok::Fn,
        "let" => Tok::Let,
        "if" => Tok::If,
        "else" => Tok::Else,
        "while" => Tok::While,
        "return" => Tok::Return,
        "throw" => Tok::Throw,
        "try" => Tok::Try,
        "catch" => Tok::Catch,
        "true" => Tok::True,
        "false" => Tok::False,
        "null" => Tok::Null,
        "and" => Tok::And,
        "or" => Tok::Or,
        "not" => Tok::Not,
        _ => return None,
    })
}

pub fn is_keyword(s: &str) -> bool {
    keyword(s).is_some()
}

pub fn tokenize(text: &str) -> Result<Vec<(Tok, Span)>, Diagnostic> {
    Lexer {
        chars: text.chars().collect(),
        pos: 0,
        line: 1,
        col: 1,
    }
    .run()
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    col: u32,
}

impl Lexer {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<char> {
        self.chars.get(self.pos + 1).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn run(mut self) -> Result<Vec<(Tok, Span)>, Diagnostic> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let span = Span::new(self.line, self.col);
            let Some(c) = self.peek() else {
                out.push((Tok::Eof, span));
                return Ok(out);
            };
            let tok = if c.is_ascii_alphabetic() || c == '_' {
                let mut s = String::new();
                while let Some(c) = self.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                keyword(&s).unwrap_or(Tok::Ident(s))
            } else if c.is_ascii_digit() {
                self.number(span)?
            } else if c == '"' {
                self.string(span)?
            } else {
                self.bump();
                match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    ',' => Tok::Comma,
                    ';' => Tok::Semi,
                    '.' => Tok::Dot,
                    '@' => Tok::At,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    '%' => Tok::Percent,
                    ':' if self.peek() == Some(':') => {
                        self.bump();
                        Tok::ColonColon
                    }
                    ':' => Tok::Colon,
                    '=' if self.peek() == Some('=') => {
                        self.bump();
                        Tok::EqEq
                    }
                    '=' => Tok::Assign,
                    '!' if self.peek() == Some('=') => {
                        self.bump();
                        Tok::NotEq
                    }
                    '<' if self.peek() == Some('=') => {
                        self.bump();
                        Tok::Le
                    }
                    '<' => Tok::Lt,
                    '>' if self.peek() == Some('=') => {
                        self.bump();
                        Tok::Ge
                    }
                    '>' => Tok::Gt,
                    other => {
                        return Err(Diagnostic::at(span, format!("unexpected character `{other}`")))
                    }
                }
            };
            out.push((tok, span));
        }
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c == '#' {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn number(&mut self, span: Span) -> Result<Tok, Diagnostic> {
        let mut s = String::new();
        let mut is_float = false;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                s.push(c);
                self.bump();
            } else if c == '.' && !is_float && self.peek2().is_some_and(|d| d.is_ascii_digit()) {
                is_float = true;
                s.push(c);
                self.bump();
            } else if (c == 'e' || c == 'E')
                && (self.peek2().is_some_and(|d| d.is_ascii_digit())
                    || (matches!(self.peek2(), Some('+') | Some('-'))
                        && self
                            .chars
                            .get(self.pos + 2)
                            .is_some_and(|d| d.is_ascii_digit())))
            {
                is_float = true;
                s.push(c);
                self.bump();
                if let Some(sign @ ('+' | '-')) = self.peek() {
                    s.push(sign);
                    self.bump();
                }
            } else {
                break;
            }
        }
        if is_float {
            s.parse::<f64>()
                .map(Tok::Float)
                .map_err(|_| Diagnostic::at(span, format!("malformed float `{s}`")))
        } else {
            s.parse::<i64>()
                .map(Tok::Int)
                .map_err(|_| Diagnostic::at(span, format!("integer literal `{s}` out of range")))
        }
    }

    fn string(&mut self, span: Span) -> Result<Tok, Diagnostic> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                None => return Err(Diagnostic::at(span, "unterminated string literal")),
                Some('"') => return Ok(Tok::Str(s)),
                Some('\\') => {
                    let esc_span = Span::new(self.line, self.col);
                    match self.bump() {
                        Some('n') => s.push('\n'),
                        Some('t') => s.push('\t'),
                        Some('r') => s.push('\r'),
                        Some('0') => s.push('\0'),
                        Some('"') => s.push('"'),
                        Some('\\') => s.push('\\'),
                        Some('u') => s.push(self.unicode_escape(esc_span)?),
                        _ => return Err(Diagnostic::at(esc_span, "unknown escape sequence")),
                    }
                }
                Some(c) => s.push(c),
            }
        }
    }

    // \u{XXXX}
    fn unicode_escape(&mut self, span: Span) -> Result<char, Diagnostic> {
        if self.bump() != Some('{') {
            return Err(Diagnostic::at(span, "expected `{` after \\u"));
        }
        let mut hex = String::new();
        loop {
            match self.bump() {
                Some('}') => break,
                Some(c) if c.is_ascii_hexdigit() && hex.len() < 6 => hex.push(c),
                _ => return Err(Diagnostic::at(span, "malformed unicode escape")),
            }
        }
        u32::from_str_radix(&hex, 16)
            .ok()
            .and_then(char::from_u32)
            .ok_or_else(|| Diagnostic::at(span, "invalid unicode scalar value"))
    }
}
