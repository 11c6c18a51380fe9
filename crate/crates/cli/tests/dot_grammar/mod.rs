//! Minimal independent DOT parser used as the grammar oracle for exported
//! graphs. Covers the directed-graph subset: node statements, edge
//! statements, attribute statements, assignments, and nested subgraphs,
//! with quoted or bare identifiers.

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Id(String),
    Quoted(String),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Equals,
    Arrow,
}

fn tokenize(text: &str) -> Result<Vec<Token>, String> {
    let mut out = Vec::new();
    let bytes: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '{' => {
                out.push(Token::LBrace);
                i += 1;
            }
            '}' => {
                out.push(Token::RBrace);
                i += 1;
            }
            '[' => {
                out.push(Token::LBracket);
                i += 1;
            }
            ']' => {
                out.push(Token::RBracket);
                i += 1;
            }
            ';' => {
                out.push(Token::Semi);
                i += 1;
            }
            ',' => {
                out.push(Token::Comma);
                i += 1;
            }
            '=' => {
                out.push(Token::Equals);
                i += 1;
            }
            '-' => {
                if bytes.get(i + 1) == Some(&'>') {
                    out.push(Token::Arrow);
                    i += 2;
                } else {
                    return Err(format!("stray '-' at offset {}", i));
                }
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                while i < bytes.len() && bytes[i] != '"' {
                    if bytes[i] == '\\' && i + 1 < bytes.len() {
                        s.push(bytes[i + 1]);
                        i += 2;
                    } else {
                        s.push(bytes[i]);
                        i += 1;
                    }
                }
                if i >= bytes.len() {
                    return Err("unterminated quoted string".into());
                }
                i += 1;
                out.push(Token::Quoted(s));
            }
            c if c.is_ascii_alphanumeric() || c == '_' || c == '.' => {
                let mut s = String::new();
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_' || bytes[i] == '.')
                {
                    s.push(bytes[i]);
                    i += 1;
                }
                out.push(Token::Id(s));
            }
            other => return Err(format!("unexpected character '{}'", other)),
        }
    }
    Ok(out)
}

pub struct Parsed {
    pub node_statements: usize,
    pub edge_statements: usize,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    nodes: usize,
    edges: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, t: &Token) -> Result<(), String> {
        match self.next() {
            Some(got) if &got == t => Ok(()),
            got => Err(format!("expected {:?}, found {:?}", t, got)),
        }
    }

    fn name(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Token::Id(s)) | Some(Token::Quoted(s)) => Ok(s),
            got => Err(format!("expected an identifier, found {:?}", got)),
        }
    }

    fn attr_list(&mut self) -> Result<(), String> {
        self.expect(&Token::LBracket)?;
        loop {
            match self.peek() {
                Some(Token::RBracket) => {
                    self.next();
                    return Ok(());
                }
                _ => {
                    self.name()?;
                    self.expect(&Token::Equals)?;
                    self.name()?;
                    if matches!(self.peek(), Some(Token::Semi) | Some(Token::Comma)) {
                        self.next();
                    }
                }
            }
        }
    }

    fn statement(&mut self) -> Result<(), String> {
        match self.peek().cloned() {
            Some(Token::Id(id)) if id == "subgraph" => {
                self.next();
                if matches!(self.peek(), Some(Token::Id(_)) | Some(Token::Quoted(_))) {
                    self.name()?;
                }
                self.block()
            }
            Some(Token::LBrace) => self.block(),
            Some(Token::Id(_)) | Some(Token::Quoted(_)) => {
                let first = self.name()?;
                match self.peek() {
                    Some(Token::Equals) => {
                        self.next();
                        self.name()?;
                    }
                    Some(Token::Arrow) => {
                        self.next();
                        self.name()?;
                        self.edges += 1;
                        if matches!(self.peek(), Some(Token::LBracket)) {
                            self.attr_list()?;
                        }
                    }
                    Some(Token::LBracket) => {
                        if first == "node" || first == "edge" || first == "graph" {
                            self.attr_list()?;
                        } else {
                            self.attr_list()?;
                            self.nodes += 1;
                        }
                    }
                    _ => {
                        self.nodes += 1;
                    }
                }
                if matches!(self.peek(), Some(Token::Semi)) {
                    self.next();
                }
                Ok(())
            }
            got => Err(format!("unexpected statement start {:?}", got)),
        }
    }

    fn block(&mut self) -> Result<(), String> {
        self.expect(&Token::LBrace)?;
        loop {
            match self.peek() {
                Some(Token::RBrace) => {
                    self.next();
                    return Ok(());
                }
                None => return Err("unterminated block".into()),
                _ => self.statement()?,
            }
        }
    }

    fn graph(&mut self) -> Result<(), String> {
        match self.next() {
            Some(Token::Id(kw)) if kw == "digraph" || kw == "graph" => {}
            got => return Err(format!("expected 'digraph', found {:?}", got)),
        }
        if matches!(self.peek(), Some(Token::Id(_)) | Some(Token::Quoted(_))) {
            self.name()?;
        }
        self.block()?;
        if self.pos != self.tokens.len() {
            return Err(format!("trailing tokens after the graph body at {}", self.pos));
        }
        Ok(())
    }
}

pub fn parse(text: &str) -> Result<Parsed, String> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0, nodes: 0, edges: 0 };
    p.graph()?;
    Ok(Parsed { node_statements: p.nodes, edge_statements: p.edges })
}

pub fn count_nodes(text: &str) -> Result<usize, String> {
    parse(text).map(|p| p.node_statements)
}

pub fn count_edges(text: &str) -> Result<usize, String> {
    parse(text).map(|p| p.edge_statements)
}
