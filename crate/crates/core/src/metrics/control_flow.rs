//! Control-flow and complexity features.
//!
//! Cyclomatic complexity is counted per function as `1 + decision points`
//! and summed; the module body counts as one function. Decision points:
//! each `if`/`elif` arm, each loop header, each boolean operator inside a
//! condition, each exception handler, each conditional expression and each
//! comprehension filter. Lambdas and class bodies belong to the enclosing
//! function.
//!
//! Basic blocks come from a structural pass over each function body: a run
//! of simple statements is one block; branch and loop headers end a block;
//! `return`/`raise`/`break`/`continue` end a block; loop headers and join
//! points start a new one. Empty blocks are not counted.

use rustpython_parser::ast::{self, Expr, Stmt};

use super::{FeatureMap, PARSE_FAILED};

pub const CONTROL_FLOW_FEATURES: [&str; 7] = [
    "cyclomatic_total",
    "num_loops",
    "num_branches",
    "num_functions",
    "max_nesting_depth",
    "num_basic_blocks",
    "avg_basic_block_size",
];

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ControlFlowStats {
    pub cyclomatic_total: usize,
    pub num_loops: usize,
    pub num_branches: usize,
    pub num_functions: usize,
    pub max_nesting_depth: usize,
    pub num_basic_blocks: usize,
    pub block_statements: usize,
}

impl ControlFlowStats {
    pub fn avg_basic_block_size(&self) -> f64 {
        if self.num_basic_blocks == 0 {
            0.0
        } else {
            self.block_statements as f64 / self.num_basic_blocks as f64
        }
    }

    fn to_map(self) -> FeatureMap {
        let values = [
            self.cyclomatic_total as f64,
            self.num_loops as f64,
            self.num_branches as f64,
            self.num_functions as f64,
            self.max_nesting_depth as f64,
            self.num_basic_blocks as f64,
            self.avg_basic_block_size(),
        ];
        CONTROL_FLOW_FEATURES
            .iter()
            .zip(values)
            .map(|(n, v)| (n.to_string(), v))
            .collect()
    }
}

#[derive(Default)]
struct Analyzer<'a> {
    stats: ControlFlowStats,
    pending: Vec<(&'a [Stmt], usize)>,
    decisions: usize,
    open_block: usize,
}

impl<'a> Analyzer<'a> {
    fn run(mut self, module: &'a [Stmt]) -> ControlFlowStats {
        self.pending.push((module, 0));
        while let Some((body, depth)) = self.pending.pop() {
            self.stats.num_functions += 1;
            self.decisions = 0;
            self.open_block = 0;
            self.body(body, depth);
            self.close_block();
            self.stats.cyclomatic_total += 1 + self.decisions;
        }
        self.stats
    }

    fn close_block(&mut self) {
        if self.open_block > 0 {
            self.stats.num_basic_blocks += 1;
            self.stats.block_statements += self.open_block;
            self.open_block = 0;
        }
    }

    fn enter(&mut self, depth: usize) -> usize {
        let inner = depth + 1;
        self.stats.max_nesting_depth = self.stats.max_nesting_depth.max(inner);
        inner
    }

    fn body(&mut self, stmts: &'a [Stmt], depth: usize) {
        for s in stmts {
            self.stmt(s, depth);
        }
    }

    fn arguments(&mut self, args: &ast::Arguments) {
        for a in args.posonlyargs.iter().chain(&args.args).chain(&args.kwonlyargs) {
            if let Some(d) = &a.default {
                self.expr(d, false);
            }
        }
    }

    fn stmt(&mut self, s: &'a Stmt, depth: usize) {
        match s {
            Stmt::FunctionDef(ast::StmtFunctionDef { args, body, decorator_list, .. })
            | Stmt::AsyncFunctionDef(ast::StmtAsyncFunctionDef { args, body, decorator_list, .. }) => {
                self.open_block += 1;
                for d in decorator_list {
                    self.expr(d, false);
                }
                self.arguments(args);
                self.pending.push((body, depth));
            }
            Stmt::ClassDef(c) => {
                self.open_block += 1;
                for e in c.bases.iter().chain(&c.decorator_list) {
                    self.expr(e, false);
                }
                self.body(&c.body, depth);
            }
            Stmt::Return(r) => {
                self.open_block += 1;
                if let Some(v) = &r.value {
                    self.expr(v, false);
                }
                self.close_block();
            }
            Stmt::Raise(r) => {
                self.open_block += 1;
                for e in r.exc.iter().chain(&r.cause) {
                    self.expr(e, false);
                }
                self.close_block();
            }
            Stmt::Break(_) | Stmt::Continue(_) => {
                self.open_block += 1;
                self.close_block();
            }
            Stmt::If(i) => self.if_stmt(i, depth),
            Stmt::For(ast::StmtFor { target, iter, body, orelse, .. })
            | Stmt::AsyncFor(ast::StmtAsyncFor { target, iter, body, orelse, .. }) => {
                self.close_block();
                self.open_block += 1;
                self.expr(target, false);
                self.expr(iter, false);
                self.loop_rest(body, orelse, depth);
            }
            Stmt::While(w) => {
                self.close_block();
                self.open_block += 1;
                self.expr(&w.test, true);
                self.loop_rest(&w.body, &w.orelse, depth);
            }
            Stmt::With(ast::StmtWith { items, body, .. })
            | Stmt::AsyncWith(ast::StmtAsyncWith { items, body, .. }) => {
                self.open_block += 1;
                for item in items {
                    self.expr(&item.context_expr, false);
                }
                let inner = self.enter(depth);
                self.body(body, inner);
            }
            Stmt::Try(ast::StmtTry { body, handlers, orelse, finalbody, .. })
            | Stmt::TryStar(ast::StmtTryStar { body, handlers, orelse, finalbody, .. }) => {
                let inner = self.enter(depth);
                self.close_block();
                self.body(body, inner);
                self.close_block();
                for h in handlers {
                    let ast::ExceptHandler::ExceptHandler(h) = h;
                    self.decisions += 1;
                    self.open_block += 1;
                    if let Some(t) = &h.type_ {
                        self.expr(t, false);
                    }
                    self.body(&h.body, inner);
                    self.close_block();
                }
                self.body(orelse, inner);
                self.close_block();
                self.body(finalbody, inner);
                self.close_block();
            }
            Stmt::Match(m) => {
                self.open_block += 1;
                self.expr(&m.subject, false);
                self.close_block();
                let inner = self.enter(depth);
                for case in &m.cases {
                    if let Some(g) = &case.guard {
                        self.expr(g, true);
                    }
                    self.body(&case.body, inner);
                    self.close_block();
                }
            }
            Stmt::Assert(a) => {
                self.open_block += 1;
                self.expr(&a.test, false);
                if let Some(m) = &a.msg {
                    self.expr(m, false);
                }
            }
            Stmt::Expr(e) => {
                self.open_block += 1;
                self.expr(&e.value, false);
            }
            Stmt::Assign(a) => {
                self.open_block += 1;
                for t in &a.targets {
                    self.expr(t, false);
                }
                self.expr(&a.value, false);
            }
            Stmt::AugAssign(a) => {
                self.open_block += 1;
                self.expr(&a.target, false);
                self.expr(&a.value, false);
            }
            Stmt::AnnAssign(a) => {
                self.open_block += 1;
                self.expr(&a.target, false);
                if let Some(v) = &a.value {
                    self.expr(v, false);
                }
            }
            Stmt::Delete(d) => {
                self.open_block += 1;
                for t in &d.targets {
                    self.expr(t, false);
                }
            }
            Stmt::TypeAlias(_)
            | Stmt::Import(_)
            | Stmt::ImportFrom(_)
            | Stmt::Global(_)
            | Stmt::Nonlocal(_)
            | Stmt::Pass(_) => self.open_block += 1,
        }
    }

    fn if_stmt(&mut self, i: &'a ast::StmtIf, depth: usize) {
        self.open_block += 1;
        self.decisions += 1;
        self.stats.num_branches += 1;
        self.expr(&i.test, true);
        self.close_block();
        let inner = self.enter(depth);
        self.body(&i.body, inner);
        self.close_block();
        match i.orelse.as_slice() {
            // elif stays at the same nesting level
            [Stmt::If(elif)] => self.if_stmt(elif, depth),
            orelse => {
                self.body(orelse, inner);
                self.close_block();
            }
        }
    }

    fn loop_rest(&mut self, body: &'a [Stmt], orelse: &'a [Stmt], depth: usize) {
        self.decisions += 1;
        self.stats.num_loops += 1;
        self.close_block();
        let inner = self.enter(depth);
        self.body(body, inner);
        self.close_block();
        self.body(orelse, inner);
        self.close_block();
    }

    fn comprehensions(&mut self, gens: &[ast::Comprehension], in_condition: bool) {
        for g in gens {
            self.expr(&g.target, false);
            self.expr(&g.iter, in_condition);
            for cond in &g.ifs {
                self.decisions += 1;
                self.expr(cond, true);
            }
        }
    }

    fn expr(&mut self, e: &Expr, in_condition: bool) {
        match e {
            Expr::BoolOp(b) => {
                if in_condition {
                    self.decisions += b.values.len().saturating_sub(1);
                }
                for v in &b.values {
                    self.expr(v, in_condition);
                }
            }
            Expr::IfExp(i) => {
                self.decisions += 1;
                self.expr(&i.test, true);
                self.expr(&i.body, in_condition);
                self.expr(&i.orelse, in_condition);
            }
            Expr::ListComp(c) => {
                self.expr(&c.elt, false);
                self.comprehensions(&c.generators, in_condition);
            }
            Expr::SetComp(c) => {
                self.expr(&c.elt, false);
                self.comprehensions(&c.generators, in_condition);
            }
            Expr::GeneratorExp(c) => {
                self.expr(&c.elt, false);
                self.comprehensions(&c.generators, in_condition);
            }
            Expr::DictComp(c) => {
                self.expr(&c.key, false);
                self.expr(&c.value, false);
                self.comprehensions(&c.generators, in_condition);
            }
            Expr::Lambda(l) => {
                self.arguments(&l.args);
                self.expr(&l.body, false);
            }
            Expr::NamedExpr(n) => {
                self.expr(&n.target, in_condition);
                self.expr(&n.value, in_condition);
            }
            Expr::BinOp(b) => {
                self.expr(&b.left, in_condition);
                self.expr(&b.right, in_condition);
            }
            Expr::UnaryOp(u) => self.expr(&u.operand, in_condition),
            Expr::Dict(d) => {
                for k in d.keys.iter().flatten() {
                    self.expr(k, in_condition);
                }
                for v in &d.values {
                    self.expr(v, in_condition);
                }
            }
            Expr::Set(ast::ExprSet { elts, .. })
            | Expr::List(ast::ExprList { elts, .. })
            | Expr::Tuple(ast::ExprTuple { elts, .. }) => {
                for v in elts {
                    self.expr(v, in_condition);
                }
            }
            Expr::JoinedStr(j) => {
                for v in &j.values {
                    self.expr(v, in_condition);
                }
            }
            Expr::Await(ast::ExprAwait { value, .. })
            | Expr::YieldFrom(ast::ExprYieldFrom { value, .. })
            | Expr::Attribute(ast::ExprAttribute { value, .. })
            | Expr::Starred(ast::ExprStarred { value, .. }) => self.expr(value, in_condition),
            Expr::FormattedValue(f) => {
                self.expr(&f.value, in_condition);
                if let Some(spec) = &f.format_spec {
                    self.expr(spec, in_condition);
                }
            }
            Expr::Yield(y) => {
                if let Some(v) = &y.value {
                    self.expr(v, in_condition);
                }
            }
            Expr::Compare(c) => {
                self.expr(&c.left, in_condition);
                for v in &c.comparators {
                    self.expr(v, in_condition);
                }
            }
            Expr::Call(c) => {
                self.expr(&c.func, in_condition);
                for a in &c.args {
                    self.expr(a, in_condition);
                }
                for k in &c.keywords {
                    self.expr(&k.value, in_condition);
                }
            }
            Expr::Subscript(s) => {
                self.expr(&s.value, in_condition);
                self.expr(&s.slice, in_condition);
            }
            Expr::Slice(s) => {
                for part in s.lower.iter().chain(&s.upper).chain(&s.step) {
                    self.expr(part, in_condition);
                }
            }
            Expr::Constant(_) | Expr::Name(_) => {}
        }
    }
}

pub fn control_flow_stats(suite: &[Stmt]) -> ControlFlowStats {
    Analyzer::default().run(suite)
}

pub(crate) fn failed_control_flow_features() -> FeatureMap {
    let mut map = ControlFlowStats::default().to_map();
    map.insert(PARSE_FAILED.to_string(), 1.0);
    map
}

pub(crate) fn control_flow_features(suite: &[Stmt]) -> FeatureMap {
    let mut map = control_flow_stats(suite).to_map();
    map.insert(PARSE_FAILED.to_string(), 0.0);
    map
}

/// Control-flow family for a program; parse failure yields zeros with
/// `parse_failed` set.
pub fn extract_control_flow(code: &str) -> FeatureMap {
    match super::syntax::parse(code) {
        Ok(suite) => control_flow_features(&suite),
        Err(_) => failed_control_flow_features(),
    }
}
