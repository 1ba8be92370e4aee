//! Line-oriented graph DSL.
//!
//! ```text
//! robot <id> "<label>"
//! node <id> <grasp|release|waiting|end> <robot-id> ["<description>"] [at <target>] [after <id> ...]
//! node <id> complete after <id> ...
//! ```
//!
//! `#` starts a comment outside quotes. Identifiers are ASCII letters,
//! digits, `_` and `-`, starting with a letter or `_`.

use std::collections::HashSet;
use std::fmt::Write as _;

use super::validate::validate;
use super::{DependencyEdge, EgotError, RobotDecl, TaskGraph, TaskNode, TaskType};

const RESERVED: [&str; 4] = ["after", "at", "robot", "node"];

#[derive(Debug)]
struct Tok {
    text: String,
    col: usize,
    quoted: bool,
}

fn syntax(line: usize, col: usize, expected: impl Into<String>) -> EgotError {
    EgotError::Syntax { line, col, expected: expected.into() }
}

fn lex(line: &str, line_no: usize) -> Result<(Vec<Tok>, usize), EgotError> {
    let chars: Vec<char> = line.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            break;
        } else if c == '"' {
            let start = i;
            let mut text = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(syntax(line_no, start + 1, "closing `\"`")),
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        match chars.get(i + 1) {
                            Some(&e @ ('"' | '\\')) => text.push(e),
                            _ => return Err(syntax(line_no, i + 1, "`\\\"` or `\\\\` escape")),
                        }
                        i += 2;
                    }
                    Some(&ch) => {
                        text.push(ch);
                        i += 1;
                    }
                }
            }
            toks.push(Tok { text, col: start + 1, quoted: true });
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && chars[i] != '"' && chars[i] != '#' {
                i += 1;
            }
            toks.push(Tok { text: chars[start..i].iter().collect(), col: start + 1, quoted: false });
        }
    }
    Ok((toks, chars.len() + 1))
}

fn is_ident(s: &str) -> bool {
    let mut it = s.chars();
    matches!(it.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && it.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        && !RESERVED.contains(&s)
}

struct Cursor<'a> {
    toks: &'a [Tok],
    pos: usize,
    line: usize,
    eol_col: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos)
    }

    fn col(&self) -> usize {
        self.peek().map(|t| t.col).unwrap_or(self.eol_col)
    }

    fn err(&self, expected: &str) -> EgotError {
        syntax(self.line, self.col(), expected)
    }

    fn ident(&mut self, what: &str) -> Result<String, EgotError> {
        match self.peek() {
            Some(t) if !t.quoted && is_ident(&t.text) => {
                self.pos += 1;
                Ok(t.text.clone())
            }
            _ => Err(self.err(what)),
        }
    }

    fn quoted(&mut self, what: &str) -> Result<String, EgotError> {
        match self.peek() {
            Some(t) if t.quoted => {
                self.pos += 1;
                Ok(t.text.clone())
            }
            _ => Err(self.err(what)),
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        match self.peek() {
            Some(t) if !t.quoted && t.text == kw => {
                self.pos += 1;
                true
            }
            _ => false,
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn end(&self, expected: &str) -> Result<(), EgotError> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err(expected))
        }
    }

    fn after_list(&mut self) -> Result<Vec<String>, EgotError> {
        let mut ids = vec![self.ident("node id after `after`")?];
        while !self.at_end() {
            ids.push(self.ident("node id")?);
        }
        Ok(ids)
    }
}

/// Parses and resolves references without applying the structural rules.
///
/// Reference problems (unknown robot or node, self edges, duplicate ids)
/// are kept in the returned graph and reported by [`validate`].
pub fn parse_graph_unchecked(text: &str) -> Result<TaskGraph, EgotError> {
    let mut robots = Vec::new();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let (toks, eol_col) = lex(raw, line)?;
        if toks.is_empty() {
            continue;
        }
        let mut c = Cursor { toks: &toks, pos: 0, line, eol_col };
        if c.keyword("robot") {
            let id = c.ident("robot id")?;
            let label = c.quoted("quoted robot label")?;
            c.end("end of line after robot label")?;
            robots.push(RobotDecl { id, label });
        } else if c.keyword("node") {
            let id = c.ident("node id")?;
            let type_col = c.col();
            let kw = c.peek().filter(|t| !t.quoted).map(|t| t.text.clone());
            let task_type = kw
                .as_deref()
                .and_then(TaskType::from_keyword)
                .ok_or_else(|| syntax(line, type_col, "task type (grasp, release, waiting, end, complete)"))?;
            c.pos += 1;
            let mut node =
                TaskNode { id: id.clone(), task_type, robot: None, description: String::new(), target: None };
            let mut deps = Vec::new();
            if task_type == TaskType::Complete {
                if c.keyword("after") {
                    deps = c.after_list()?;
                }
                c.end("`after` or end of line")?;
            } else {
                node.robot = Some(c.ident("robot id")?);
                if matches!(c.peek(), Some(t) if t.quoted) {
                    node.description = c.quoted("description")?;
                }
                if c.keyword("at") {
                    node.target = Some(c.ident("target id after `at`")?);
                }
                if c.keyword("after") {
                    deps = c.after_list()?;
                }
                c.end("`at`, `after` or end of line")?;
            }
            edges.extend(deps.into_iter().map(|d| DependencyEdge::new(d, id.clone())));
            nodes.push(node);
        } else {
            return Err(c.err("`robot` or `node`"));
        }
    }
    Ok(TaskGraph::from_parts(robots, nodes, edges))
}

/// Parses DSL text and checks every structural rule.
pub fn parse_graph(text: &str) -> Result<TaskGraph, EgotError> {
    let graph = parse_graph_unchecked(text)?;
    match validate(&graph) {
        Ok(()) => Ok(graph),
        Err(v) => Err(EgotError::Semantic(v)),
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// Canonical DSL text: robots, then nodes, in declaration order.
pub fn serialize(graph: &TaskGraph) -> String {
    let mut s = String::new();
    for r in graph.robots() {
        let _ = writeln!(s, "robot {} {}", r.id, quote(&r.label));
    }
    let mut emitted: HashSet<&DependencyEdge> = HashSet::new();
    for n in graph.nodes() {
        let _ = write!(s, "node {} {}", n.id, n.task_type);
        if let Some(r) = &n.robot {
            let _ = write!(s, " {r}");
        }
        if (!n.description.is_empty() || n.task_type.is_physical())
            && n.task_type != TaskType::Complete {
                let _ = write!(s, " {}", quote(&n.description));
            }
        if let Some(t) = &n.target {
            let _ = write!(s, " at {t}");
        }
        let deps: Vec<&DependencyEdge> = graph.edges().iter().filter(|e| e.to == n.id && emitted.insert(*e)).collect();
        if !deps.is_empty() {
            s.push_str(" after");
            for e in deps {
                let _ = write!(s, " {}", e.from);
            }
        }
        s.push('\n');
    }
    s
}
