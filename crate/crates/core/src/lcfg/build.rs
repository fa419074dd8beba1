use std::collections::{BTreeMap, BTreeSet};

use super::{
    CallNode, CallRef, EdgeLabel, Lcfg, LcfgEdge, LcfgNode, LogNode, NodeId, NodeKind, StmtOp,
};
use crate::corpus::{Block, CallTarget, Expr, LogKey, MethodSource, Stmt, StmtKind};

/// A call the enhancer decided to materialise after an existing statement.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct InsertedCall {
    pub callee: String,
    pub args: Vec<Expr>,
    pub assign_to: Option<String>,
}

/// Knowledge the plain structural build lacks; supplied by the enhancer.
#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    /// Exception types each callee (fq name or dynamic key) may let escape.
    pub throws: BTreeMap<String, BTreeSet<String>>,
    /// Calls to insert right after the statement with the given id.
    pub insertions: BTreeMap<u32, Vec<InsertedCall>>,
    /// Dispatch candidates per dynamic key.
    pub dynamic: BTreeMap<String, Vec<String>>,
}

/// Structural translation of a method body.
///
/// Calls inside a `try` are treated as able to throw any type caught by an
/// enclosing handler, since without corpus knowledge the callee is opaque.
pub fn build_lcfg(method: &MethodSource) -> Lcfg {
    build_with(method, &BuildOptions::default())
}

pub fn build_with(method: &MethodSource, opts: &BuildOptions) -> Lcfg {
    let mut b = Builder {
        method,
        opts,
        nodes: Vec::new(),
        edges: Vec::new(),
        frames: Vec::new(),
        returns: Vec::new(),
        escapes: BTreeMap::new(),
    };
    let entry = b.add(
        NodeKind::Entry {
            params: method.params.iter().map(|p| p.name.clone()).collect(),
        },
        method.span.start_line,
        None,
    );
    let end = b.lower_block(&method.body, vec![(entry, EdgeLabel::Seq)]);
    let exit = b.add(NodeKind::Exit { exception: None }, method.span.end_line, None);
    b.connect(end, exit);
    for r in std::mem::take(&mut b.returns) {
        b.edge(r, exit, EdgeLabel::Seq, None);
    }
    let mut exits = BTreeSet::from([exit]);
    for (ty, sources) in std::mem::take(&mut b.escapes) {
        let x = b.add(
            NodeKind::Exit {
                exception: Some(ty.clone()),
            },
            method.span.end_line,
            None,
        );
        exits.insert(x);
        for s in sources {
            b.edge(s, x, EdgeLabel::Exception, Some(ty.clone()));
        }
    }
    let mut lcfg = Lcfg {
        owner: method.fq_name.clone(),
        nodes: b.nodes,
        edges: b.edges,
        entry,
        exits,
    };
    lcfg.edges.sort();
    lcfg.edges.dedup();
    let live = lcfg.reachable();
    for n in &mut lcfg.nodes {
        n.unresolved = !live.contains(&n.id);
    }
    lcfg
}

type Pending = Vec<(NodeId, EdgeLabel)>;

struct Handler {
    exception: String,
    sources: Vec<NodeId>,
}

struct Frame<'a> {
    line: u32,
    handlers: Vec<Handler>,
    finally: Option<&'a Block>,
}

struct Builder<'a> {
    method: &'a MethodSource,
    opts: &'a BuildOptions,
    nodes: Vec<LcfgNode>,
    edges: Vec<LcfgEdge>,
    frames: Vec<Frame<'a>>,
    returns: Vec<NodeId>,
    escapes: BTreeMap<String, Vec<NodeId>>,
}

impl<'a> Builder<'a> {
    fn add(&mut self, kind: NodeKind, line: u32, stmt: Option<u32>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(LcfgNode {
            id,
            kind,
            line,
            stmt,
            constraints: Vec::new(),
            unresolved: false,
        });
        id
    }

    fn edge(&mut self, from: NodeId, to: NodeId, label: EdgeLabel, exception: Option<String>) {
        self.edges.push(LcfgEdge {
            from,
            to,
            label,
            exception,
            back: false,
        });
    }

    fn connect(&mut self, pending: Pending, to: NodeId) {
        for (from, label) in pending {
            self.edge(from, to, label, None);
        }
    }

    /// Adds a node and wires all pending edges into it.
    fn chain(&mut self, pending: Pending, kind: NodeKind, s: &Stmt) -> NodeId {
        let n = self.add(kind, s.line, Some(s.id));
        self.connect(pending, n);
        n
    }

    fn lower_block(&mut self, block: &'a [Stmt], mut pending: Pending) -> Pending {
        for s in block {
            if pending.is_empty() {
                // unreachable tail after return/throw
                break;
            }
            pending = self.lower_stmt(s, pending);
        }
        pending
    }

    fn lower_stmt(&mut self, s: &'a Stmt, pending: Pending) -> Pending {
        match &s.kind {
            StmtKind::Assign { target, value, .. } => {
                let n = self.chain(
                    pending,
                    NodeKind::Statement(StmtOp::Assign {
                        target: target.clone(),
                        value: value.clone(),
                    }),
                    s,
                );
                self.after_simple(s, vec![(n, EdgeLabel::Seq)])
            }
            StmtKind::Log(l) => {
                let node = LogNode {
                    key: LogKey {
                        owner: self.method.fq_name.clone(),
                        line: s.line,
                        column: l.column,
                    },
                    level: l.level,
                    template: l.template.clone(),
                    params: l.args.clone(),
                };
                let n = self.chain(pending, NodeKind::Log(node), s);
                self.after_simple(s, vec![(n, EdgeLabel::Seq)])
            }
            StmtKind::Call(c) => {
                let (target, resolved, dynamic) = match &c.target {
                    CallTarget::Static(fq) => (CallRef::Method(fq.clone()), true, false),
                    CallTarget::Dynamic(key) => {
                        let candidates = self.opts.dynamic.get(key).cloned().unwrap_or_default();
                        let resolved = !candidates.is_empty();
                        (
                            CallRef::Dynamic {
                                key: key.clone(),
                                candidates,
                            },
                            resolved,
                            true,
                        )
                    }
                };
                let node = CallNode {
                    target,
                    written: c.written.clone(),
                    args: c.args.clone(),
                    assign_to: c.assign.as_ref().map(|(_, v)| v.clone()),
                    resolved,
                    dynamic,
                    implicit: false,
                };
                let n = self.lower_call(pending, node, s.line, Some(s.id));
                self.after_simple(s, vec![(n, EdgeLabel::Seq)])
            }
            StmtKind::Return(value) => {
                let n = self.chain(
                    pending,
                    NodeKind::Statement(StmtOp::Return {
                        value: value.clone(),
                    }),
                    s,
                );
                self.route_return(n, self.frames.len());
                Vec::new()
            }
            StmtKind::Throw { exception } => {
                let n = self.chain(
                    pending,
                    NodeKind::Throw {
                        exception: exception.clone(),
                    },
                    s,
                );
                self.route_exception(n, exception, self.frames.len());
                Vec::new()
            }
            StmtKind::If {
                cond,
                then_branch,
                else_branch,
            } => {
                let b = self.chain(pending, NodeKind::Branch { cond: cond.clone() }, s);
                let mut out = self.lower_block(then_branch, vec![(b, EdgeLabel::True)]);
                match else_branch {
                    Some(e) => out.extend(self.lower_block(e, vec![(b, EdgeLabel::False)])),
                    None => out.push((b, EdgeLabel::False)),
                }
                out
            }
            StmtKind::While { cond, body } => {
                let head = self.chain(pending, NodeKind::LoopHead { cond: cond.clone() }, s);
                let end = self.lower_block(body, vec![(head, EdgeLabel::LoopBody)]);
                self.close_loop(end, head);
                vec![(head, EdgeLabel::LoopExit)]
            }
            StmtKind::For {
                init,
                cond,
                update,
                body,
            } => {
                let pending = match init {
                    Some(i) => self.lower_stmt(i, pending),
                    None => pending,
                };
                let head = self.chain(pending, NodeKind::LoopHead { cond: cond.clone() }, s);
                let mut end = self.lower_block(body, vec![(head, EdgeLabel::LoopBody)]);
                if let Some(u) = update {
                    if !end.is_empty() {
                        end = self.lower_stmt(u, end);
                    }
                }
                self.close_loop(end, head);
                vec![(head, EdgeLabel::LoopExit)]
            }
            StmtKind::Switch {
                scrutinee,
                cases,
                default,
            } => {
                let mut pending = pending;
                let mut out = Vec::new();
                for (label, body) in cases {
                    let cond = Expr::binary(
                        crate::corpus::BinaryOp::Eq,
                        scrutinee.clone(),
                        label.clone(),
                    );
                    let b = self.chain(pending, NodeKind::Branch { cond }, s);
                    out.extend(self.lower_block(body, vec![(b, EdgeLabel::True)]));
                    pending = vec![(b, EdgeLabel::False)];
                }
                match default {
                    Some(d) => out.extend(self.lower_block(d, pending)),
                    None => out.extend(pending),
                }
                out
            }
            StmtKind::Try {
                body,
                catches,
                finally,
            } => {
                self.frames.push(Frame {
                    line: s.line,
                    handlers: catches
                        .iter()
                        .map(|c| Handler {
                            exception: c.exception.clone(),
                            sources: Vec::new(),
                        })
                        .collect(),
                    finally: finally.as_ref(),
                });
                let mut ends = self.lower_block(body, pending);
                let frame = self.frames.pop().expect("frame pushed above");
                for (clause, handler) in catches.iter().zip(frame.handlers) {
                    let entry = self.add(
                        NodeKind::CatchEntry {
                            exception: clause.exception.clone(),
                            var: clause.var.clone(),
                        },
                        clause.line,
                        Some(s.id),
                    );
                    for src in handler.sources {
                        self.edge(src, entry, EdgeLabel::Exception, Some(clause.exception.clone()));
                    }
                    self.frames.push(Frame {
                        line: s.line,
                        handlers: Vec::new(),
                        finally: finally.as_ref(),
                    });
                    ends.extend(self.lower_block(&clause.body, vec![(entry, EdgeLabel::Seq)]));
                    self.frames.pop();
                }
                match finally {
                    Some(fin) if !ends.is_empty() => {
                        let marker = self.add(
                            NodeKind::Statement(StmtOp::Marker("finally".into())),
                            s.line,
                            Some(s.id),
                        );
                        self.connect(ends, marker);
                        self.lower_block(fin, vec![(marker, EdgeLabel::Finally)])
                    }
                    _ => ends,
                }
            }
        }
    }

    fn close_loop(&mut self, end: Pending, head: NodeId) {
        for (from, label) in end {
            self.edges.push(LcfgEdge {
                from,
                to: head,
                label,
                exception: None,
                back: true,
            });
        }
    }

    /// Runs insertions anchored after a simple statement.
    fn after_simple(&mut self, s: &Stmt, mut pending: Pending) -> Pending {
        let Some(calls) = self.opts.insertions.get(&s.id) else {
            return pending;
        };
        for ins in calls {
            let node = CallNode {
                target: CallRef::Method(ins.callee.clone()),
                written: ins.callee.split('/').next().unwrap_or(&ins.callee).to_string(),
                args: ins.args.clone(),
                assign_to: ins.assign_to.clone(),
                resolved: true,
                dynamic: false,
                implicit: true,
            };
            let n = self.lower_call(pending, node, s.line, None);
            pending = vec![(n, EdgeLabel::Seq)];
        }
        pending
    }

    fn lower_call(&mut self, pending: Pending, node: CallNode, line: u32, stmt: Option<u32>) -> NodeId {
        let mut types: BTreeSet<String> = self
            .frames
            .iter()
            .flat_map(|f| f.handlers.iter().map(|h| h.exception.clone()))
            .collect();
        let mut keys: Vec<&str> = node.targets();
        if let CallRef::Dynamic { key, .. } = &node.target {
            keys.push(key);
        }
        for k in keys {
            if let Some(t) = self.opts.throws.get(k) {
                types.extend(t.iter().cloned());
            }
        }
        let n = self.add(NodeKind::Call(node), line, stmt);
        self.connect(pending, n);
        for ty in types {
            self.route_exception(n, &ty, self.frames.len());
        }
        n
    }

    /// Sends an exception raised at `from` to the innermost matching handler
    /// among the first `depth` frames, running intervening `finally` blocks.
    fn route_exception(&mut self, from: NodeId, ty: &str, depth: usize) {
        for i in (0..depth).rev() {
            if let Some(h) = self.frames[i].handlers.iter_mut().find(|h| h.exception == ty) {
                h.sources.push(from);
                return;
            }
            if let Some(fin) = self.frames[i].finally {
                let line = self.frames[i].line;
                let marker = self.add(NodeKind::Statement(StmtOp::Marker("finally".into())), line, None);
                self.edge(from, marker, EdgeLabel::Exception, Some(ty.to_string()));
                let end = self.in_outer_frames(i, |b| b.lower_block(fin, vec![(marker, EdgeLabel::Finally)]));
                if !end.is_empty() {
                    let resume = self.add(
                        NodeKind::Statement(StmtOp::Marker(format!("rethrow {ty}"))),
                        line,
                        None,
                    );
                    self.connect(end, resume);
                    self.route_exception(resume, ty, i);
                }
                return;
            }
        }
        self.escapes.entry(ty.to_string()).or_default().push(from);
    }

    fn route_return(&mut self, from: NodeId, depth: usize) {
        for i in (0..depth).rev() {
            if let Some(fin) = self.frames[i].finally {
                let line = self.frames[i].line;
                let marker = self.add(NodeKind::Statement(StmtOp::Marker("finally".into())), line, None);
                self.edge(from, marker, EdgeLabel::Seq, None);
                let end = self.in_outer_frames(i, |b| b.lower_block(fin, vec![(marker, EdgeLabel::Finally)]));
                if !end.is_empty() {
                    let resume = self.add(
                        NodeKind::Statement(StmtOp::Marker("resume return".into())),
                        line,
                        None,
                    );
                    self.connect(end, resume);
                    self.route_return(resume, i);
                }
                return;
            }
        }
        self.returns.push(from);
    }

    /// Lowers a `finally` copy with only the frames outside frame `i` active.
    fn in_outer_frames<T>(&mut self, i: usize, f: impl FnOnce(&mut Self) -> T) -> T {
        let saved = self.frames.split_off(i);
        let out = f(self);
        self.frames.extend(saved);
        out
    }
}
