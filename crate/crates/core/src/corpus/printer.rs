use std::fmt::Write;

use super::ast::*;
use super::Corpus;

/// Renders a corpus back to `.jsub` source, one class after another.
pub fn pretty_print(corpus: &Corpus) -> String {
    let mut out = String::new();
    for class in &corpus.classes {
        out.push_str(&print_class(corpus, class));
    }
    out
}

pub fn print_class(corpus: &Corpus, class: &ClassDecl) -> String {
    let mut out = format!("class {} {{\n", class.name);
    for fq in &class.methods {
        if let Some(m) = corpus.source_index.get(fq) {
            out.push_str(&print_method(m));
        }
    }
    out.push_str("}\n");
    out
}

pub fn print_method(m: &MethodSource) -> String {
    let mut out = String::new();
    let params: Vec<String> = m
        .params
        .iter()
        .map(|p| format!("{} {}", p.ty.keyword(), p.name))
        .collect();
    let _ = writeln!(
        out,
        "    {}{} {}({}) {{",
        if m.is_static { "static " } else { "" },
        m.ret.keyword(),
        m.name,
        params.join(", ")
    );
    print_block(&mut out, &m.body, 2);
    out.push_str("    }\n");
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn print_block(out: &mut String, block: &[Stmt], depth: usize) {
    for s in block {
        print_stmt(out, s, depth);
    }
}

fn simple_text(kind: &StmtKind) -> String {
    match kind {
        StmtKind::Assign { ty, target, value } => match ty {
            Some(t) => format!("{} {target} = {value}", t.keyword()),
            None => format!("{target} = {value}"),
        },
        StmtKind::Call(c) => {
            let args: Vec<String> = c.args.iter().map(|a| a.to_string()).collect();
            let call = format!("{}({})", c.written, args.join(", "));
            match &c.assign {
                Some((Some(t), v)) => format!("{} {v} = {call}", t.keyword()),
                Some((None, v)) => format!("{v} = {call}"),
                None => call,
            }
        }
        _ => unreachable!("not a simple assignment/call"),
    }
}

fn print_stmt(out: &mut String, s: &Stmt, depth: usize) {
    indent(out, depth);
    match &s.kind {
        StmtKind::Assign { .. } | StmtKind::Call(_) => {
            let _ = writeln!(out, "{};", simple_text(&s.kind));
        }
        StmtKind::Log(l) => {
            let mut args = vec![escape_str(&l.template)];
            args.extend(l.args.iter().map(|a| a.to_string()));
            let _ = writeln!(out, "log.{}({});", l.level.method_name(), args.join(", "));
        }
        StmtKind::Return(None) => out.push_str("return;\n"),
        StmtKind::Return(Some(e)) => {
            let _ = writeln!(out, "return {e};");
        }
        StmtKind::Throw { exception } => {
            let _ = writeln!(out, "throw new {exception}();");
        }
        StmtKind::If {
            cond,
            then_branch,
            else_branch,
        } => {
            let _ = writeln!(out, "if ({cond}) {{");
            print_block(out, then_branch, depth + 1);
            indent(out, depth);
            match else_branch {
                Some(e) => {
                    out.push_str("} else {\n");
                    print_block(out, e, depth + 1);
                    indent(out, depth);
                    out.push_str("}\n");
                }
                None => out.push_str("}\n"),
            }
        }
        StmtKind::While { cond, body } => {
            let _ = writeln!(out, "while ({cond}) {{");
            print_block(out, body, depth + 1);
            indent(out, depth);
            out.push_str("}\n");
        }
        StmtKind::For {
            init,
            cond,
            update,
            body,
        } => {
            let init = init.as_ref().map(|s| simple_text(&s.kind)).unwrap_or_default();
            let update = update
                .as_ref()
                .map(|s| simple_text(&s.kind))
                .unwrap_or_default();
            let _ = writeln!(out, "for ({init}; {cond}; {update}) {{");
            print_block(out, body, depth + 1);
            indent(out, depth);
            out.push_str("}\n");
        }
        StmtKind::Switch {
            scrutinee,
            cases,
            default,
        } => {
            let _ = writeln!(out, "switch ({scrutinee}) {{");
            for (label, body) in cases {
                indent(out, depth + 1);
                let _ = writeln!(out, "case {label}: {{");
                print_block(out, body, depth + 2);
                indent(out, depth + 1);
                out.push_str("}\n");
            }
            if let Some(d) = default {
                indent(out, depth + 1);
                out.push_str("default: {\n");
                print_block(out, d, depth + 2);
                indent(out, depth + 1);
                out.push_str("}\n");
            }
            indent(out, depth);
            out.push_str("}\n");
        }
        StmtKind::Try {
            body,
            catches,
            finally,
        } => {
            out.push_str("try {\n");
            print_block(out, body, depth + 1);
            for c in catches {
                indent(out, depth);
                let _ = writeln!(out, "}} catch ({} {}) {{", c.exception, c.var);
                print_block(out, &c.body, depth + 1);
            }
            if let Some(f) = finally {
                indent(out, depth);
                out.push_str("} finally {\n");
                print_block(out, f, depth + 1);
            }
            indent(out, depth);
            out.push_str("}\n");
        }
    }
}
