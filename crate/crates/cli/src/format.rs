//! The line-oriented program format.
//!
//! ```text
//! width 2
//! inputs r0 r1
//! outputs r0 r1
//! r0 = mul r0 r1   # comment
//! ```
//!
//! A file that mentions a temporary `tmpK` anywhere is a graph: registers
//! and temporaries are names rebound by each assignment, the listed input
//! registers are the graph inputs in order, and the outputs are the final
//! bindings of the listed names. Otherwise it is a trace in overwrite form.

use std::collections::HashMap;

use adtool_core::lumpify::{Dag, DagArg, NodeId};
use adtool_core::trace::{Instruction, Operand};
use adtool_core::{AdError, BasisOp, Program, Trace};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("line {line}, column {col}: {message}")]
    Parse { line: usize, col: usize, message: String },
    #[error("{0}")]
    Validation(String),
}

impl FormatError {
    pub fn kind(&self) -> &'static str {
        match self {
            FormatError::Parse { .. } => "ParseError",
            FormatError::Validation(_) => "ValidationError",
        }
    }
}

impl From<AdError> for FormatError {
    fn from(e: AdError) -> FormatError {
        match e {
            AdError::InvalidProgram(msg) => FormatError::Validation(msg),
            other => FormatError::Validation(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, FormatError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Name {
    Reg(usize),
    Tmp(usize),
}

#[derive(Debug, Clone, Copy)]
enum Arg {
    Name(Name, usize),
    Literal(f64),
}

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    col: usize,
}

struct Line<'a> {
    number: usize,
    tokens: Vec<Token<'a>>,
}

impl Line<'_> {
    fn error(&self, col: usize, message: impl Into<String>) -> FormatError {
        FormatError::Parse {
            line: self.number,
            col,
            message: message.into(),
        }
    }

    fn end_col(&self) -> usize {
        self.tokens.last().map_or(1, |t| t.col + t.text.chars().count())
    }
}

fn tokenize(number: usize, raw: &str) -> Line<'_> {
    let code = raw.split('#').next().unwrap_or("");
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in code.char_indices().chain(std::iter::once((code.len(), ' '))) {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                tokens.push(Token {
                    text: &code[s..i],
                    col: code[..s].chars().count() + 1,
                });
                start = None;
            }
            _ => {}
        }
    }
    Line { number, tokens }
}

fn parse_index(digits: &str) -> Option<usize> {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn parse_name(text: &str) -> Option<Name> {
    if let Some(rest) = text.strip_prefix("tmp") {
        return parse_index(rest).map(Name::Tmp);
    }
    text.strip_prefix('r').and_then(parse_index).map(Name::Reg)
}

fn name_of(line: &Line, tok: Token) -> Result<Name> {
    parse_name(tok.text).ok_or_else(|| line.error(tok.col, format!("expected a register `rK` or temporary `tmpK`, found `{}`", tok.text)))
}

fn parse_arg(line: &Line, tok: Token) -> Result<Arg> {
    if let Some(name) = parse_name(tok.text) {
        return Ok(Arg::Name(name, tok.col));
    }
    match tok.text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Arg::Literal(v)),
        Ok(_) => Err(line.error(tok.col, format!("literal `{}` is not finite", tok.text))),
        Err(_) => Err(line.error(tok.col, format!("expected a register, temporary or number, found `{}`", tok.text))),
    }
}

struct Header {
    width: usize,
    inputs: Vec<(Name, usize, usize)>,
    outputs: Vec<(Name, usize, usize)>,
}

struct Assignment {
    line: usize,
    dest: Name,
    op: BasisOp,
    args: Vec<Arg>,
}

struct Parsed {
    header: Header,
    body: Vec<Assignment>,
    has_temporaries: bool,
}

fn expect_keyword<'a>(lines: &mut impl Iterator<Item = Line<'a>>, keyword: &str, last_line: usize) -> Result<Line<'a>> {
    let line = lines.next().ok_or(FormatError::Parse {
        line: last_line + 1,
        col: 1,
        message: format!("missing `{keyword}` line"),
    })?;
    if line.tokens[0].text != keyword {
        return Err(line.error(line.tokens[0].col, format!("expected `{keyword}`, found `{}`", line.tokens[0].text)));
    }
    Ok(line)
}

fn parse_name_list(line: &Line) -> Result<Vec<(Name, usize, usize)>> {
    line.tokens[1..]
        .iter()
        .map(|&t| name_of(line, t).map(|n| (n, line.number, t.col)))
        .collect()
}

fn parse_assignment(line: &Line) -> Result<Assignment> {
    let toks = &line.tokens;
    let dest = name_of(line, toks[0])?;
    match toks.get(1) {
        Some(t) if t.text == "=" => {}
        Some(t) => return Err(line.error(t.col, format!("expected `=`, found `{}`", t.text))),
        None => return Err(line.error(line.end_col(), "expected `=`")),
    }
    let op_tok = *toks.get(2).ok_or_else(|| line.error(line.end_col(), "expected an op name"))?;
    let op = BasisOp::from_name(op_tok.text).ok_or_else(|| line.error(op_tok.col, format!("unknown op `{}`", op_tok.text)))?;
    let arg_toks = &toks[3..];
    if arg_toks.len() != op.operand_count() {
        let col = arg_toks.get(op.operand_count()).map_or(line.end_col(), |t| t.col);
        return Err(line.error(
            col,
            format!("`{op}` takes {} operands, found {}", op.operand_count(), arg_toks.len()),
        ));
    }
    let mut args = Vec::with_capacity(arg_toks.len());
    for (pos, &tok) in arg_toks.iter().enumerate() {
        let arg = parse_arg(line, tok)?;
        let wants_literal = op.takes_literal() && pos == op.operand_count() - 1;
        match (arg, wants_literal) {
            (Arg::Literal(_), false) => {
                return Err(line.error(tok.col, format!("operand {} of `{op}` must be a register or temporary", pos + 1)))
            }
            (Arg::Name(..), true) => return Err(line.error(tok.col, format!("last operand of `{op}` must be a number"))),
            _ => args.push(arg),
        }
    }
    Ok(Assignment {
        line: line.number,
        dest,
        op,
        args,
    })
}

fn parse_lines(text: &str) -> Result<Parsed> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, raw)| tokenize(i + 1, raw))
        .filter(|l| !l.tokens.is_empty());
    let width_line = expect_keyword(&mut lines, "width", 0)?;
    let width = match &width_line.tokens[1..] {
        [t] => parse_index(t.text).ok_or_else(|| width_line.error(t.col, format!("expected a register count, found `{}`", t.text)))?,
        [] => return Err(width_line.error(width_line.end_col(), "expected a register count")),
        [_, extra, ..] => return Err(width_line.error(extra.col, format!("unexpected `{}` after width", extra.text))),
    };
    let inputs_line = expect_keyword(&mut lines, "inputs", width_line.number)?;
    let inputs = parse_name_list(&inputs_line)?;
    let outputs_line = expect_keyword(&mut lines, "outputs", inputs_line.number)?;
    let outputs = parse_name_list(&outputs_line)?;
    for &(name, line, col) in &inputs {
        if matches!(name, Name::Tmp(_)) {
            return Err(FormatError::Parse {
                line,
                col,
                message: "inputs must be registers".to_string(),
            });
        }
    }
    let mut has_temporaries = outputs.iter().any(|(n, ..)| matches!(n, Name::Tmp(_)));
    let mut body = Vec::new();
    for line in lines {
        let a = parse_assignment(&line)?;
        has_temporaries |= matches!(a.dest, Name::Tmp(_)) || a.args.iter().any(|arg| matches!(arg, Arg::Name(Name::Tmp(_), _)));
        body.push(a);
    }
    Ok(Parsed {
        header: Header { width, inputs, outputs },
        body,
        has_temporaries,
    })
}

fn reg_or_error(name: Name, line: usize, col: usize) -> Result<usize> {
    match name {
        Name::Reg(k) => Ok(k),
        Name::Tmp(k) => Err(FormatError::Validation(format!(
            "line {line}, column {col}: temporary `tmp{k}` is only allowed in graph files"
        ))),
    }
}

fn build_trace(p: &Parsed) -> Result<Trace> {
    let slots = |names: &[(Name, usize, usize)]| {
        names
            .iter()
            .map(|&(n, line, col)| reg_or_error(n, line, col))
            .collect::<Result<Vec<_>>>()
    };
    let inputs = slots(&p.header.inputs)?;
    let outputs = slots(&p.header.outputs)?;
    let mut instrs = Vec::with_capacity(p.body.len());
    for a in &p.body {
        let dest = reg_or_error(a.dest, a.line, 1)?;
        let args = a
            .args
            .iter()
            .map(|arg| match *arg {
                Arg::Name(n, col) => reg_or_error(n, a.line, col).map(Operand::slot),
                Arg::Literal(v) => Ok(Operand::Literal(v)),
            })
            .collect::<Result<Vec<_>>>()?;
        instrs.push(Instruction::new(a.op, dest, args));
    }
    Trace::new(p.header.width, instrs, inputs, outputs).map_err(|e| match e {
        AdError::InvalidProgram(msg) => {
            let step = msg
                .strip_prefix("step ")
                .and_then(|rest| rest.split(':').next())
                .and_then(|s| s.parse::<usize>().ok());
            match step.and_then(|t| p.body.get(t)) {
                Some(a) => FormatError::Validation(format!("line {}: {msg}", a.line)),
                None => FormatError::Validation(msg),
            }
        }
        other => other.into(),
    })
}

fn check_register(width: usize, name: Name, line: usize, col: usize) -> Result<()> {
    match name {
        Name::Reg(k) if k >= width => Err(FormatError::Validation(format!(
            "line {line}, column {col}: register r{k} out of range for width {width}"
        ))),
        _ => Ok(()),
    }
}

fn build_dag(p: &Parsed) -> Result<Dag> {
    let width = p.header.width;
    let mut bound: HashMap<Name, DagArg> = HashMap::new();
    for (i, &(name, line, col)) in p.header.inputs.iter().enumerate() {
        check_register(width, name, line, col)?;
        if bound.insert(name, DagArg::Input(i)).is_some() {
            return Err(FormatError::Validation(format!("line {line}, column {col}: duplicate input")));
        }
    }
    let lookup = |bound: &HashMap<Name, DagArg>, name: Name, line: usize, col: usize| {
        bound.get(&name).copied().ok_or_else(|| {
            let shown = match name {
                Name::Reg(k) => format!("r{k}"),
                Name::Tmp(k) => format!("tmp{k}"),
            };
            FormatError::Validation(format!(
                "line {line}, column {col}: `{shown}` is read before it is assigned"
            ))
        })
    };
    let mut nodes = Vec::with_capacity(p.body.len());
    for (id, a) in p.body.iter().enumerate() {
        check_register(width, a.dest, a.line, 1)?;
        let mut args = Vec::with_capacity(a.args.len());
        for arg in &a.args {
            args.push(match *arg {
                Arg::Name(n, col) => {
                    check_register(width, n, a.line, col)?;
                    lookup(&bound, n, a.line, col)?
                }
                Arg::Literal(v) => DagArg::Literal(v),
            });
        }
        nodes.push((a.op, args));
        bound.insert(a.dest, DagArg::Node(NodeId(id)));
    }
    let outputs = p
        .header
        .outputs
        .iter()
        .map(|&(n, line, col)| {
            check_register(width, n, line, col)?;
            lookup(&bound, n, line, col)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dag::new(p.header.inputs.len(), nodes, outputs)?)
}

/// Parses a trace or a graph, depending on whether temporaries appear.
pub fn parse_program(text: &str) -> Result<Program> {
    let parsed = parse_lines(text)?;
    if parsed.has_temporaries {
        build_dag(&parsed).map(Program::Dag)
    } else {
        build_trace(&parsed).map(Program::Trace)
    }
}

/// Parses a trace; temporaries are a validation error.
pub fn parse_trace(text: &str) -> Result<Trace> {
    build_trace(&parse_lines(text)?)
}

/// Parses a graph, whether or not temporaries appear.
pub fn parse_dag(text: &str) -> Result<Dag> {
    build_dag(&parse_lines(text)?)
}

fn dag_arg(arg: &DagArg) -> String {
    match arg {
        DagArg::Input(i) => format!("r{i}"),
        DagArg::Node(NodeId(j)) => format!("tmp{j}"),
        DagArg::Literal(v) => format!("{v:?}"),
    }
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

fn header(width: usize, inputs: &str, outputs: &str) -> String {
    let line = |kw: &str, rest: &str| {
        if rest.is_empty() {
            format!("{kw}\n")
        } else {
            format!("{kw} {rest}\n")
        }
    };
    format!("width {width}\n{}{}", line("inputs", inputs), line("outputs", outputs))
}

/// Normalized text of a program. Graphs name input `i` as `ri` and node `j`
/// as `tmpj`.
pub fn print_program(program: &Program) -> String {
    match program {
        Program::Trace(t) => {
            let mut s = header(t.width(), &join(t.input_slots()), &join(t.output_slots()));
            for instr in t.instrs() {
                s.push_str(&format!("{instr}\n"));
            }
            s
        }
        Program::Dag(d) => {
            let inputs = join((0..d.n_inputs()).map(|i| format!("r{i}")));
            let mut s = header(d.n_inputs(), &inputs, &join(d.outputs().iter().map(dag_arg)));
            for node in d.nodes() {
                s.push_str(&format!("tmp{} = {}", node.id.0, node.op));
                for a in &node.args {
                    s.push(' ');
                    s.push_str(&dag_arg(a));
                }
                s.push('\n');
            }
            s
        }
    }
}
