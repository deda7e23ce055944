//! Parsing and conversion of the Python AST into a plain labeled tree.
//!
//! Node kinds use the standard library `ast` class names (`Module`, `Assign`,
//! `Name`, `Constant`, `arguments`, `comprehension`, ...). Operator nodes
//! (`Add`, `And`, `Eq`, ...) are kept as leaves; expression contexts
//! (`Load`/`Store`/`Del`) are not materialized.

use rustpython_parser::ast::{self, Expr, Pattern, Stmt};
use rustpython_parser::Parse;

pub type Suite = Vec<Stmt>;

pub fn parse(code: &str) -> Result<Suite, rustpython_parser::ParseError> {
    ast::Suite::parse(code, "<program>")
}

/// A rooted tree stored as parent links in preorder.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyntaxTree {
    pub kinds: Vec<&'static str>,
    pub parents: Vec<Option<usize>>,
}

impl SyntaxTree {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    fn add(&mut self, kind: &'static str, parent: Option<usize>) -> usize {
        self.kinds.push(kind);
        self.parents.push(parent);
        self.kinds.len() - 1
    }

    /// Undirected adjacency lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.len()];
        for (child, parent) in self.parents.iter().enumerate() {
            if let Some(p) = *parent {
                adj[p].push(child);
                adj[child].push(p);
            }
        }
        adj
    }

    /// Depth of every node, root at 0. Relies on preorder numbering.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0usize; self.len()];
        for i in 0..self.len() {
            if let Some(p) = self.parents[i] {
                depth[i] = depth[p] + 1;
            }
        }
        depth
    }

    pub fn child_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.len()];
        for p in self.parents.iter().flatten() {
            counts[*p] += 1;
        }
        counts
    }
}

pub fn syntax_tree(suite: &[Stmt]) -> SyntaxTree {
    let mut b = Builder::default();
    let root = b.tree.add("Module", None);
    b.stmts(suite, root);
    b.tree
}

#[derive(Default)]
struct Builder {
    tree: SyntaxTree,
}

fn operator_kind(op: &ast::Operator) -> &'static str {
    use ast::Operator::*;
    match op {
        Add => "Add",
        Sub => "Sub",
        Mult => "Mult",
        MatMult => "MatMult",
        Div => "Div",
        Mod => "Mod",
        Pow => "Pow",
        LShift => "LShift",
        RShift => "RShift",
        BitOr => "BitOr",
        BitXor => "BitXor",
        BitAnd => "BitAnd",
        FloorDiv => "FloorDiv",
    }
}

fn unary_kind(op: &ast::UnaryOp) -> &'static str {
    match op {
        ast::UnaryOp::Invert => "Invert",
        ast::UnaryOp::Not => "Not",
        ast::UnaryOp::UAdd => "UAdd",
        ast::UnaryOp::USub => "USub",
    }
}

fn cmp_kind(op: &ast::CmpOp) -> &'static str {
    use ast::CmpOp::*;
    match op {
        Eq => "Eq",
        NotEq => "NotEq",
        Lt => "Lt",
        LtE => "LtE",
        Gt => "Gt",
        GtE => "GtE",
        Is => "Is",
        IsNot => "IsNot",
        In => "In",
        NotIn => "NotIn",
    }
}

impl Builder {
    fn stmts(&mut self, body: &[Stmt], parent: usize) {
        for s in body {
            self.stmt(s, parent);
        }
    }

    fn exprs(&mut self, es: &[Expr], parent: usize) {
        for e in es {
            self.expr(e, parent);
        }
    }

    fn opt_expr(&mut self, e: &Option<Box<Expr>>, parent: usize) {
        if let Some(e) = e {
            self.expr(e, parent);
        }
    }

    fn leaf(&mut self, kind: &'static str, parent: usize) {
        self.tree.add(kind, Some(parent));
    }

    fn arguments(&mut self, args: &ast::Arguments, parent: usize) {
        let node = self.tree.add("arguments", Some(parent));
        let with_defaults = args
            .posonlyargs
            .iter()
            .chain(&args.args)
            .chain(&args.kwonlyargs);
        let mut defaults = Vec::new();
        for a in with_defaults {
            self.arg(&a.def, node);
            if let Some(d) = &a.default {
                defaults.push(d);
            }
        }
        if let Some(a) = &args.vararg {
            self.arg(a, node);
        }
        if let Some(a) = &args.kwarg {
            self.arg(a, node);
        }
        for d in defaults {
            self.expr(d, node);
        }
    }

    fn arg(&mut self, a: &ast::Arg, parent: usize) {
        let node = self.tree.add("arg", Some(parent));
        self.opt_expr(&a.annotation, node);
    }

    fn keyword(&mut self, k: &ast::Keyword, parent: usize) {
        let node = self.tree.add("keyword", Some(parent));
        self.expr(&k.value, node);
    }

    fn type_params(&mut self, params: &[ast::TypeParam], parent: usize) {
        for p in params {
            match p {
                ast::TypeParam::TypeVar(t) => {
                    let node = self.tree.add("TypeVar", Some(parent));
                    self.opt_expr(&t.bound, node);
                }
                ast::TypeParam::ParamSpec(_) => self.leaf("ParamSpec", parent),
                ast::TypeParam::TypeVarTuple(_) => self.leaf("TypeVarTuple", parent),
            }
        }
    }

    fn handlers(&mut self, handlers: &[ast::ExceptHandler], parent: usize) {
        for h in handlers {
            let ast::ExceptHandler::ExceptHandler(h) = h;
            let node = self.tree.add("ExceptHandler", Some(parent));
            self.opt_expr(&h.type_, node);
            self.stmts(&h.body, node);
        }
    }

    fn with_items(&mut self, items: &[ast::WithItem], parent: usize) {
        for item in items {
            let node = self.tree.add("withitem", Some(parent));
            self.expr(&item.context_expr, node);
            self.opt_expr(&item.optional_vars, node);
        }
    }

    fn comprehensions(&mut self, gens: &[ast::Comprehension], parent: usize) {
        for g in gens {
            let node = self.tree.add("comprehension", Some(parent));
            self.expr(&g.target, node);
            self.expr(&g.iter, node);
            self.exprs(&g.ifs, node);
        }
    }

    fn pattern(&mut self, p: &Pattern, parent: usize) {
        match p {
            Pattern::MatchValue(v) => {
                let node = self.tree.add("MatchValue", Some(parent));
                self.expr(&v.value, node);
            }
            Pattern::MatchSingleton(_) => self.leaf("MatchSingleton", parent),
            Pattern::MatchSequence(s) => {
                let node = self.tree.add("MatchSequence", Some(parent));
                for q in &s.patterns {
                    self.pattern(q, node);
                }
            }
            Pattern::MatchMapping(m) => {
                let node = self.tree.add("MatchMapping", Some(parent));
                self.exprs(&m.keys, node);
                for q in &m.patterns {
                    self.pattern(q, node);
                }
            }
            Pattern::MatchClass(c) => {
                let node = self.tree.add("MatchClass", Some(parent));
                self.expr(&c.cls, node);
                for q in c.patterns.iter().chain(&c.kwd_patterns) {
                    self.pattern(q, node);
                }
            }
            Pattern::MatchStar(_) => self.leaf("MatchStar", parent),
            Pattern::MatchAs(a) => {
                let node = self.tree.add("MatchAs", Some(parent));
                if let Some(q) = &a.pattern {
                    self.pattern(q, node);
                }
            }
            Pattern::MatchOr(o) => {
                let node = self.tree.add("MatchOr", Some(parent));
                for q in &o.patterns {
                    self.pattern(q, node);
                }
            }
        }
    }

    fn stmt(&mut self, s: &Stmt, parent: usize) {
        let p = Some(parent);
        match s {
            Stmt::FunctionDef(f) => {
                let node = self.tree.add("FunctionDef", p);
                self.type_params(&f.type_params, node);
                self.arguments(&f.args, node);
                self.stmts(&f.body, node);
                self.exprs(&f.decorator_list, node);
                self.opt_expr(&f.returns, node);
            }
            Stmt::AsyncFunctionDef(f) => {
                let node = self.tree.add("AsyncFunctionDef", p);
                self.type_params(&f.type_params, node);
                self.arguments(&f.args, node);
                self.stmts(&f.body, node);
                self.exprs(&f.decorator_list, node);
                self.opt_expr(&f.returns, node);
            }
            Stmt::ClassDef(c) => {
                let node = self.tree.add("ClassDef", p);
                self.type_params(&c.type_params, node);
                self.exprs(&c.bases, node);
                for k in &c.keywords {
                    self.keyword(k, node);
                }
                self.stmts(&c.body, node);
                self.exprs(&c.decorator_list, node);
            }
            Stmt::Return(r) => {
                let node = self.tree.add("Return", p);
                self.opt_expr(&r.value, node);
            }
            Stmt::Delete(d) => {
                let node = self.tree.add("Delete", p);
                self.exprs(&d.targets, node);
            }
            Stmt::Assign(a) => {
                let node = self.tree.add("Assign", p);
                self.exprs(&a.targets, node);
                self.expr(&a.value, node);
            }
            Stmt::TypeAlias(t) => {
                let node = self.tree.add("TypeAlias", p);
                self.expr(&t.name, node);
                self.type_params(&t.type_params, node);
                self.expr(&t.value, node);
            }
            Stmt::AugAssign(a) => {
                let node = self.tree.add("AugAssign", p);
                self.expr(&a.target, node);
                self.leaf(operator_kind(&a.op), node);
                self.expr(&a.value, node);
            }
            Stmt::AnnAssign(a) => {
                let node = self.tree.add("AnnAssign", p);
                self.expr(&a.target, node);
                self.expr(&a.annotation, node);
                self.opt_expr(&a.value, node);
            }
            Stmt::For(f) => {
                let node = self.tree.add("For", p);
                self.expr(&f.target, node);
                self.expr(&f.iter, node);
                self.stmts(&f.body, node);
                self.stmts(&f.orelse, node);
            }
            Stmt::AsyncFor(f) => {
                let node = self.tree.add("AsyncFor", p);
                self.expr(&f.target, node);
                self.expr(&f.iter, node);
                self.stmts(&f.body, node);
                self.stmts(&f.orelse, node);
            }
            Stmt::While(w) => {
                let node = self.tree.add("While", p);
                self.expr(&w.test, node);
                self.stmts(&w.body, node);
                self.stmts(&w.orelse, node);
            }
            Stmt::If(i) => {
                let node = self.tree.add("If", p);
                self.expr(&i.test, node);
                self.stmts(&i.body, node);
                self.stmts(&i.orelse, node);
            }
            Stmt::With(w) => {
                let node = self.tree.add("With", p);
                self.with_items(&w.items, node);
                self.stmts(&w.body, node);
            }
            Stmt::AsyncWith(w) => {
                let node = self.tree.add("AsyncWith", p);
                self.with_items(&w.items, node);
                self.stmts(&w.body, node);
            }
            Stmt::Match(m) => {
                let node = self.tree.add("Match", p);
                self.expr(&m.subject, node);
                for case in &m.cases {
                    let c = self.tree.add("match_case", Some(node));
                    self.pattern(&case.pattern, c);
                    self.opt_expr(&case.guard, c);
                    self.stmts(&case.body, c);
                }
            }
            Stmt::Raise(r) => {
                let node = self.tree.add("Raise", p);
                self.opt_expr(&r.exc, node);
                self.opt_expr(&r.cause, node);
            }
            Stmt::Try(t) => {
                let node = self.tree.add("Try", p);
                self.stmts(&t.body, node);
                self.handlers(&t.handlers, node);
                self.stmts(&t.orelse, node);
                self.stmts(&t.finalbody, node);
            }
            Stmt::TryStar(t) => {
                let node = self.tree.add("TryStar", p);
                self.stmts(&t.body, node);
                self.handlers(&t.handlers, node);
                self.stmts(&t.orelse, node);
                self.stmts(&t.finalbody, node);
            }
            Stmt::Assert(a) => {
                let node = self.tree.add("Assert", p);
                self.expr(&a.test, node);
                self.opt_expr(&a.msg, node);
            }
            Stmt::Import(i) => {
                let node = self.tree.add("Import", p);
                for _ in &i.names {
                    self.leaf("alias", node);
                }
            }
            Stmt::ImportFrom(i) => {
                let node = self.tree.add("ImportFrom", p);
                for _ in &i.names {
                    self.leaf("alias", node);
                }
            }
            Stmt::Global(_) => self.leaf("Global", parent),
            Stmt::Nonlocal(_) => self.leaf("Nonlocal", parent),
            Stmt::Expr(e) => {
                let node = self.tree.add("Expr", p);
                self.expr(&e.value, node);
            }
            Stmt::Pass(_) => self.leaf("Pass", parent),
            Stmt::Break(_) => self.leaf("Break", parent),
            Stmt::Continue(_) => self.leaf("Continue", parent),
        }
    }

    fn expr(&mut self, e: &Expr, parent: usize) {
        let p = Some(parent);
        match e {
            Expr::BoolOp(b) => {
                let node = self.tree.add("BoolOp", p);
                self.leaf(
                    match b.op {
                        ast::BoolOp::And => "And",
                        ast::BoolOp::Or => "Or",
                    },
                    node,
                );
                self.exprs(&b.values, node);
            }
            Expr::NamedExpr(n) => {
                let node = self.tree.add("NamedExpr", p);
                self.expr(&n.target, node);
                self.expr(&n.value, node);
            }
            Expr::BinOp(b) => {
                let node = self.tree.add("BinOp", p);
                self.expr(&b.left, node);
                self.leaf(operator_kind(&b.op), node);
                self.expr(&b.right, node);
            }
            Expr::UnaryOp(u) => {
                let node = self.tree.add("UnaryOp", p);
                self.leaf(unary_kind(&u.op), node);
                self.expr(&u.operand, node);
            }
            Expr::Lambda(l) => {
                let node = self.tree.add("Lambda", p);
                self.arguments(&l.args, node);
                self.expr(&l.body, node);
            }
            Expr::IfExp(i) => {
                let node = self.tree.add("IfExp", p);
                self.expr(&i.test, node);
                self.expr(&i.body, node);
                self.expr(&i.orelse, node);
            }
            Expr::Dict(d) => {
                let node = self.tree.add("Dict", p);
                for k in d.keys.iter().flatten() {
                    self.expr(k, node);
                }
                self.exprs(&d.values, node);
            }
            Expr::Set(s) => {
                let node = self.tree.add("Set", p);
                self.exprs(&s.elts, node);
            }
            Expr::ListComp(c) => {
                let node = self.tree.add("ListComp", p);
                self.expr(&c.elt, node);
                self.comprehensions(&c.generators, node);
            }
            Expr::SetComp(c) => {
                let node = self.tree.add("SetComp", p);
                self.expr(&c.elt, node);
                self.comprehensions(&c.generators, node);
            }
            Expr::DictComp(c) => {
                let node = self.tree.add("DictComp", p);
                self.expr(&c.key, node);
                self.expr(&c.value, node);
                self.comprehensions(&c.generators, node);
            }
            Expr::GeneratorExp(c) => {
                let node = self.tree.add("GeneratorExp", p);
                self.expr(&c.elt, node);
                self.comprehensions(&c.generators, node);
            }
            Expr::Await(a) => {
                let node = self.tree.add("Await", p);
                self.expr(&a.value, node);
            }
            Expr::Yield(y) => {
                let node = self.tree.add("Yield", p);
                self.opt_expr(&y.value, node);
            }
            Expr::YieldFrom(y) => {
                let node = self.tree.add("YieldFrom", p);
                self.expr(&y.value, node);
            }
            Expr::Compare(c) => {
                let node = self.tree.add("Compare", p);
                self.expr(&c.left, node);
                for op in &c.ops {
                    self.leaf(cmp_kind(op), node);
                }
                self.exprs(&c.comparators, node);
            }
            Expr::Call(c) => {
                let node = self.tree.add("Call", p);
                self.expr(&c.func, node);
                self.exprs(&c.args, node);
                for k in &c.keywords {
                    self.keyword(k, node);
                }
            }
            Expr::FormattedValue(f) => {
                let node = self.tree.add("FormattedValue", p);
                self.expr(&f.value, node);
                self.opt_expr(&f.format_spec, node);
            }
            Expr::JoinedStr(j) => {
                let node = self.tree.add("JoinedStr", p);
                self.exprs(&j.values, node);
            }
            Expr::Constant(_) => self.leaf("Constant", parent),
            Expr::Attribute(a) => {
                let node = self.tree.add("Attribute", p);
                self.expr(&a.value, node);
            }
            Expr::Subscript(s) => {
                let node = self.tree.add("Subscript", p);
                self.expr(&s.value, node);
                self.expr(&s.slice, node);
            }
            Expr::Starred(s) => {
                let node = self.tree.add("Starred", p);
                self.expr(&s.value, node);
            }
            Expr::Name(_) => self.leaf("Name", parent),
            Expr::List(l) => {
                let node = self.tree.add("List", p);
                self.exprs(&l.elts, node);
            }
            Expr::Tuple(t) => {
                let node = self.tree.add("Tuple", p);
                self.exprs(&t.elts, node);
            }
            Expr::Slice(s) => {
                let node = self.tree.add("Slice", p);
                self.opt_expr(&s.lower, node);
                self.opt_expr(&s.upper, node);
                self.opt_expr(&s.step, node);
            }
        }
    }
}
