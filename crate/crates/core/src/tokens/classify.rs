//! Built-in classifier for a small Java-like subset.
//!
//! Lexes a single-function snippet, assigns each leaf token the class of the
//! innermost recognised construct, and lays tokens out on a monospace grid.
//! Constructs are applied outermost first so inner ones overwrite:
//! function headers, then conditionals and loops, then local declarations,
//! then calls.

use crate::error::{Error, Result};

use super::{
    AstToken, BBox, Taxonomy, TokenMap, ARGUMENT, CONDITIONAL_STATEMENT, FUNCTION_CALL, FUNCTION_DECLARATION, LOOP,
    OTHER, PARAMETER, VARIABLE_DECLARATION,
};

/// Monospace layout used to synthesize token boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub cell_w: f64,
    pub cell_h: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub tab_width: usize,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            cell_w: 16.0,
            cell_h: 32.0,
            origin_x: 40.0,
            origin_y: 40.0,
            tab_width: 4,
        }
    }
}

const KEYWORDS: &[&str] = &[
    "abstract",
    "assert",
    "boolean",
    "break",
    "byte",
    "case",
    "catch",
    "char",
    "class",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extends",
    "final",
    "finally",
    "float",
    "for",
    "if",
    "implements",
    "import",
    "instanceof",
    "int",
    "interface",
    "long",
    "native",
    "new",
    "package",
    "private",
    "protected",
    "public",
    "return",
    "short",
    "static",
    "strictfp",
    "super",
    "switch",
    "synchronized",
    "this",
    "throw",
    "throws",
    "transient",
    "try",
    "void",
    "volatile",
    "while",
    "true",
    "false",
    "null",
];

const PRIMITIVES: &[&str] = &[
    "boolean", "byte", "char", "double", "float", "int", "long", "short", "void",
];

const MODIFIERS: &[&str] = &[
    "public",
    "private",
    "protected",
    "static",
    "final",
    "abstract",
    "synchronized",
    "native",
    "transient",
    "volatile",
    "strictfp",
    "default",
];

const MULTI_OPS: &[&str] = &[
    "<<=", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "->", "::",
    "<<",
];

const SINGLE_OPS: &str = "+-*/%=<>!&|^~?:.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Ident,
    Keyword,
    Number,
    Literal,
    Op,
    Open,
    Close,
    Semi,
    Comma,
    At,
}

#[derive(Debug, Clone)]
struct Lexeme {
    kind: Kind,
    text: String,
    line: usize,
    col: usize,
    width: usize,
}

impl Lexeme {
    fn is(&self, text: &str) -> bool {
        self.text == text
    }
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    col: usize,
    tab_width: usize,
}

impl Lexer {
    fn new(src: &str, tab_width: usize) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            col: 0,
            tab_width,
        }
    }

    fn peek(&self, ahead: usize) -> Option<char> {
        self.chars.get(self.pos + ahead).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek(0)?;
        self.pos += 1;
        match c {
            '\n' => {
                self.line += 1;
                self.col = 0;
            }
            '\t' => self.col += self.tab_width - self.col % self.tab_width,
            _ => self.col += 1,
        }
        Some(c)
    }

    fn error(&self, line: usize, col: usize, message: impl Into<String>) -> Error {
        Error::Syntax {
            line,
            column: col + 1,
            message: message.into(),
        }
    }

    fn run(mut self) -> Result<Vec<Lexeme>> {
        let mut out = Vec::new();
        while let Some(c) = self.peek(0) {
            if c.is_whitespace() {
                self.bump();
                continue;
            }
            let (line, col, start) = (self.line, self.col, self.pos);
            if c == '/' && self.peek(1) == Some('/') {
                while self.peek(0).is_some_and(|c| c != '\n') {
                    self.bump();
                }
                continue;
            }
            if c == '/' && self.peek(1) == Some('*') {
                self.bump();
                self.bump();
                loop {
                    match self.peek(0) {
                        None => return Err(self.error(line, col, "unterminated block comment")),
                        Some('*') if self.peek(1) == Some('/') => {
                            self.bump();
                            self.bump();
                            break;
                        }
                        Some(_) => {
                            self.bump();
                        }
                    }
                }
                continue;
            }
            let kind = if c.is_ascii_alphabetic() || c == '_' || c == '$' {
                while self
                    .peek(0)
                    .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
                {
                    self.bump();
                }
                let word: String = self.chars[start..self.pos].iter().collect();
                if KEYWORDS.contains(&word.as_str()) {
                    Kind::Keyword
                } else {
                    Kind::Ident
                }
            } else if c.is_ascii_digit() {
                while self
                    .peek(0)
                    .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
                {
                    self.bump();
                }
                Kind::Number
            } else if c == '"' || c == '\'' {
                self.bump();
                loop {
                    match self.bump() {
                        None | Some('\n') => return Err(self.error(line, col, "unterminated literal")),
                        Some('\\') => {
                            self.bump();
                        }
                        Some(q) if q == c => break,
                        Some(_) => {}
                    }
                }
                Kind::Literal
            } else if "([{".contains(c) {
                self.bump();
                Kind::Open
            } else if ")]}".contains(c) {
                self.bump();
                Kind::Close
            } else if c == ';' {
                self.bump();
                Kind::Semi
            } else if c == ',' {
                self.bump();
                Kind::Comma
            } else if c == '@' {
                self.bump();
                Kind::At
            } else if let Some(op) = MULTI_OPS.iter().find(|op| self.starts_with(op)) {
                for _ in 0..op.len() {
                    self.bump();
                }
                Kind::Op
            } else if SINGLE_OPS.contains(c) {
                self.bump();
                Kind::Op
            } else {
                return Err(self.error(line, col, format!("unexpected character `{c}`")));
            };
            let text: String = self.chars[start..self.pos].iter().collect();
            out.push(Lexeme {
                kind,
                width: text.chars().count(),
                text,
                line,
                col,
            });
        }
        Ok(out)
    }

    fn starts_with(&self, s: &str) -> bool {
        s.chars().enumerate().all(|(k, c)| self.peek(k) == Some(c))
    }
}

/// Matching bracket index for every open/close lexeme.
fn match_brackets(lex: &[Lexeme]) -> Result<Vec<Option<usize>>> {
    let mut partner = vec![None; lex.len()];
    let mut stack: Vec<usize> = Vec::new();
    for (i, l) in lex.iter().enumerate() {
        match l.kind {
            Kind::Open => stack.push(i),
            Kind::Close => {
                let want = match l.text.as_str() {
                    ")" => "(",
                    "]" => "[",
                    _ => "{",
                };
                match stack.pop() {
                    Some(o) if lex[o].is(want) => {
                        partner[o] = Some(i);
                        partner[i] = Some(o);
                    }
                    _ => {
                        return Err(Error::Syntax {
                            line: l.line,
                            column: l.col + 1,
                            message: format!("unmatched `{}`", l.text),
                        })
                    }
                }
            }
            _ => {}
        }
    }
    if let Some(&o) = stack.last() {
        return Err(Error::Syntax {
            line: lex[o].line,
            column: lex[o].col + 1,
            message: format!("unclosed `{}`", lex[o].text),
        });
    }
    Ok(partner)
}

struct Classifier<'a> {
    lex: &'a [Lexeme],
    partner: Vec<Option<usize>>,
    classes: Vec<&'static str>,
    header_names: Vec<usize>,
}

impl<'a> Classifier<'a> {
    fn at(&self, i: usize) -> Option<&'a Lexeme> {
        self.lex.get(i)
    }

    fn is_text(&self, i: usize, text: &str) -> bool {
        self.at(i).is_some_and(|l| l.is(text))
    }

    fn is_ident(&self, i: usize) -> bool {
        self.at(i).is_some_and(|l| l.kind == Kind::Ident)
    }

    fn paint(&mut self, range: std::ops::RangeInclusive<usize>, class: &'static str) {
        for i in range {
            self.classes[i] = class;
        }
    }

    fn is_stmt_start(&self, i: usize) -> bool {
        if i == 0 {
            return true;
        }
        let prev = &self.lex[i - 1];
        match prev.kind {
            Kind::Semi => true,
            Kind::Open => prev.is("{") || (prev.is("(") && i >= 2 && self.lex[i - 2].is("for")),
            Kind::Close => prev.is("}"),
            _ => false,
        }
    }

    /// Skips modifiers and annotations starting at `i`.
    fn skip_modifiers(&self, mut i: usize) -> usize {
        loop {
            match self.at(i) {
                Some(l) if l.kind == Kind::Keyword && MODIFIERS.contains(&l.text.as_str()) => {
                    // `synchronized (x)` is a block, not a modifier.
                    if l.is("synchronized") && self.is_text(i + 1, "(") {
                        return i;
                    }
                    i += 1;
                }
                Some(l) if l.kind == Kind::At && self.is_ident(i + 1) => {
                    i += 2;
                    if self.is_text(i, "(") {
                        i = self.partner[i].map_or(i, |c| c + 1);
                    }
                }
                _ => return i,
            }
        }
    }

    /// Skips a `<...>` type-argument list at `i`; `None` if it is not one.
    fn skip_type_args(&self, i: usize) -> Option<usize> {
        if !self.is_text(i, "<") {
            return Some(i);
        }
        let mut depth = 0usize;
        let mut j = i;
        while let Some(l) = self.at(j) {
            match l.text.as_str() {
                "<" => depth += 1,
                ">" => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(j + 1);
                    }
                }
                "," | "." | "?" | "&" | "[" | "]" | "extends" | "super" => {}
                _ if l.kind == Kind::Ident => {}
                _ if PRIMITIVES.contains(&l.text.as_str()) => {}
                _ => return None,
            }
            j += 1;
        }
        None
    }

    /// End (exclusive) of a type expression starting at `i`.
    fn parse_type(&self, i: usize) -> Option<usize> {
        let first = self.at(i)?;
        let mut j = match first.kind {
            Kind::Ident => {
                let mut j = i + 1;
                while self.is_text(j, ".") && self.is_ident(j + 1) {
                    j += 2;
                }
                self.skip_type_args(j)?
            }
            Kind::Keyword if PRIMITIVES.contains(&first.text.as_str()) => i + 1,
            _ => return None,
        };
        while self.is_text(j, "[") && self.is_text(j + 1, "]") {
            j += 2;
        }
        Some(j)
    }

    fn function_headers(&mut self) {
        for i in 0..self.lex.len() {
            if !self.is_stmt_start(i) {
                continue;
            }
            let mut j = self.skip_modifiers(i);
            if self.is_text(j, "<") {
                match self.skip_type_args(j) {
                    Some(k) => j = k,
                    None => continue,
                }
            }
            let name = if self.is_ident(j) && self.is_text(j + 1, "(") {
                j
            } else {
                match self.parse_type(j) {
                    Some(t) if self.is_ident(t) && self.is_text(t + 1, "(") => t,
                    _ => continue,
                }
            };
            let open = name + 1;
            let Some(close) = self.partner[open] else { continue };
            let mut k = close + 1;
            if self.is_text(k, "throws") {
                k += 1;
                while let Some(t) = self.parse_type(k) {
                    k = t;
                    if self.is_text(k, ",") {
                        k += 1;
                    } else {
                        break;
                    }
                }
            }
            if !self.is_text(k, "{") {
                continue;
            }
            self.header_names.push(name);
            self.paint(i..=open, FUNCTION_DECLARATION);
            self.classes[close] = FUNCTION_DECLARATION;
            if k > close + 1 {
                self.paint(close + 1..=k - 1, FUNCTION_DECLARATION);
            }
            let mut p = open + 1;
            while p < close {
                let l = &self.lex[p];
                if l.kind == Kind::Comma {
                    self.classes[p] = OTHER;
                    p += 1;
                    continue;
                }
                let end = if l.kind == Kind::Open {
                    self.partner[p].unwrap_or(p)
                } else {
                    p
                };
                self.paint(p..=end, PARAMETER);
                p = end + 1;
            }
        }
    }

    fn control_flow(&mut self) {
        for i in 0..self.lex.len() {
            let l = &self.lex[i];
            if l.kind != Kind::Keyword {
                continue;
            }
            let class = match l.text.as_str() {
                "if" | "switch" | "else" | "case" | "default" => CONDITIONAL_STATEMENT,
                "while" | "for" | "do" => LOOP,
                _ => continue,
            };
            match l.text.as_str() {
                "if" | "switch" | "while" | "for" => {
                    let end = if self.is_text(i + 1, "(") {
                        self.partner[i + 1].unwrap_or(i)
                    } else {
                        i
                    };
                    self.paint(i..=end, class);
                }
                "case" => {
                    let mut j = i + 1;
                    while let Some(t) = self.at(j) {
                        if t.is(":") || t.is("->") || t.kind == Kind::Semi || t.is("{") {
                            break;
                        }
                        j += 1;
                    }
                    let end = if self.is_text(j, ":") || self.is_text(j, "->") {
                        j
                    } else {
                        j - 1
                    };
                    self.paint(i..=end, class);
                }
                "default" => {
                    if self.is_text(i + 1, ":") || self.is_text(i + 1, "->") {
                        self.paint(i..=i + 1, class);
                    }
                }
                _ => self.classes[i] = class,
            }
        }
    }

    fn declarations(&mut self) {
        for i in 0..self.lex.len() {
            if !self.is_stmt_start(i) {
                continue;
            }
            let j = self.skip_modifiers(i);
            let Some(t) = self.parse_type(j) else { continue };
            if !self.is_ident(t) {
                continue;
            }
            let follows = self.at(t + 1).map(|l| l.text.as_str());
            if !matches!(follows, Some("=" | ";" | "," | ":" | "[")) {
                continue;
            }
            let Some(end) = self.statement_end(t + 1) else { continue };
            self.paint(i..=end, VARIABLE_DECLARATION);
        }
    }

    /// Terminating `;`, enhanced-for `:`, or the token before an enclosing
    /// closer, scanning from `i` and jumping over bracketed groups.
    fn statement_end(&self, mut i: usize) -> Option<usize> {
        while let Some(l) = self.at(i) {
            match l.kind {
                Kind::Semi => return Some(i),
                Kind::Open => i = self.partner[i]? + 1,
                Kind::Close => return i.checked_sub(1),
                _ if l.is(":") => return Some(i),
                _ => i += 1,
            }
        }
        None
    }

    fn calls(&mut self) {
        for i in 0..self.lex.len() {
            let l = &self.lex[i];
            let callee = l.kind == Kind::Ident || l.is("this") || l.is("super");
            if !callee || !self.is_text(i + 1, "(") || self.header_names.contains(&i) {
                continue;
            }
            let open = i + 1;
            let Some(close) = self.partner[open] else { continue };
            let mut start = i;
            while start >= 2 && self.lex[start - 1].is(".") {
                if matches!(self.lex[start - 2].kind, Kind::Ident) || self.lex[start - 2].is("this") {
                    start -= 2;
                } else {
                    start -= 1;
                    break;
                }
            }
            if start >= 1 && self.lex[start - 1].is("new") {
                start -= 1;
            }
            self.paint(start..=open, FUNCTION_CALL);
            self.classes[close] = FUNCTION_CALL;
            for a in open + 1..close {
                self.classes[a] = if self.lex[a].kind == Kind::Comma {
                    OTHER
                } else {
                    ARGUMENT
                };
            }
        }
    }
}

/// Classify `source` with the default layout and taxonomy.
pub fn classify_source(source: &str) -> Result<TokenMap> {
    classify_source_with(source, &Layout::default())
}

pub fn classify_source_with(source: &str, layout: &Layout) -> Result<TokenMap> {
    let lex = Lexer::new(source, layout.tab_width.max(1)).run()?;
    let partner = match_brackets(&lex)?;
    let mut c = Classifier {
        lex: &lex,
        partner,
        classes: vec![OTHER; lex.len()],
        header_names: Vec::new(),
    };
    c.function_headers();
    c.control_flow();
    c.declarations();
    c.calls();
    let tokens = lex
        .iter()
        .zip(&c.classes)
        .enumerate()
        .map(|(id, (l, class))| {
            let x0 = layout.origin_x + l.col as f64 * layout.cell_w;
            let y0 = layout.origin_y + (l.line - 1) as f64 * layout.cell_h;
            AstToken {
                id,
                text: l.text.clone(),
                class: (*class).to_string(),
                line: l.line as u32,
                bbox: BBox {
                    x0,
                    y0,
                    x1: x0 + l.width as f64 * layout.cell_w,
                    y1: y0 + layout.cell_h,
                },
            }
        })
        .collect();
    TokenMap::new(Taxonomy::default(), tokens)
}
