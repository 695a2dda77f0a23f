//! Abstract evaluation of programs into a trace of sample nodes.
//!
//! Every value carries a concrete part and the set of sample nodes it was
//! computed from. A sample statement creates a node whose parents are the
//! nodes behind its distribution parameters plus the nodes behind any
//! enclosing branch condition. Sampled values are a fixed function of the
//! parameters (the mean, or the point for `dirac`) unless overridden, so the
//! extracted graph never depends on random draws.

use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ppl::parse::{Defn, Expr, Pos, ProgramAst};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistKind {
    Normal,
    Dirac,
    Bernoulli,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceNode {
    pub id: usize,
    pub address: String,
    /// Creation index among nodes with the same address.
    pub ordinal: usize,
    pub dist: DistKind,
    pub parents: BTreeSet<usize>,
    /// Concrete distribution parameters at creation.
    pub params: Vec<f64>,
    pub value: f64,
}

type Taint = BTreeSet<usize>;

#[derive(Debug, Clone)]
enum Val {
    Num(f64),
    Str(String),
    Vec(Rc<Vec<Tv>>),
    Dist(DistKind, Vec<Tv>),
}

/// A value with its taint.
#[derive(Debug, Clone)]
struct Tv {
    val: Val,
    taint: Taint,
}

impl Tv {
    fn num(v: f64) -> Self {
        Self { val: Val::Num(v), taint: Taint::new() }
    }
}

fn cerr(pos: Pos, msg: impl Into<String>) -> Error {
    Error::Compile(format!("{}:{}: {}", pos.line, pos.column, msg.into()))
}

/// Taint of a value including everything nested inside it.
fn deep_taint(v: &Tv) -> Taint {
    let mut t = v.taint.clone();
    match &v.val {
        Val::Vec(items) => items.iter().for_each(|x| t.extend(deep_taint(x))),
        Val::Dist(_, ps) => ps.iter().for_each(|x| t.extend(deep_taint(x))),
        _ => {}
    }
    t
}

fn flatten_nums(v: &Tv, out: &mut Vec<f64>) {
    match &v.val {
        Val::Num(x) => out.push(*x),
        Val::Vec(items) => items.iter().for_each(|x| flatten_nums(x, out)),
        Val::Dist(_, ps) => ps.iter().for_each(|x| flatten_nums(x, out)),
        Val::Str(_) => {}
    }
}

const MAX_DEPTH: usize = 256;

pub struct Evaluator<'a> {
    defns: HashMap<&'a str, &'a Defn>,
    overrides: &'a HashMap<usize, f64>,
    pub trace: Vec<TraceNode>,
    counts: HashMap<String, usize>,
    path: Vec<Taint>,
    depth: usize,
}

type Env = Vec<(String, Tv)>;

fn lookup<'e>(env: &'e Env, name: &str) -> Option<&'e Tv> {
    env.iter().rev().find(|(n, _)| n == name).map(|(_, v)| v)
}

impl<'a> Evaluator<'a> {
    pub fn new(ast: &'a ProgramAst, overrides: &'a HashMap<usize, f64>) -> Result<Self> {
        let mut defns = HashMap::new();
        for d in &ast.defns {
            if defns.insert(d.name.as_str(), d).is_some() {
                return Err(Error::Compile(format!("function {} defined twice", d.name)));
            }
        }
        Ok(Self {
            defns,
            overrides,
            trace: Vec::new(),
            counts: HashMap::new(),
            path: Vec::new(),
            depth: 0,
        })
    }

    pub fn run(&mut self, body: &Expr) -> Result<()> {
        let mut env = Env::new();
        self.eval(body, &mut env).map(|_| ())
    }

    fn number(&self, v: &Tv, pos: Pos, what: &str) -> Result<f64> {
        match v.val {
            Val::Num(x) => Ok(x),
            _ => Err(cerr(pos, format!("{what} must be a number"))),
        }
    }

    /// An untainted non-negative integer.
    fn count(&self, v: &Tv, pos: Pos, what: &str) -> Result<usize> {
        if !deep_taint(v).is_empty() {
            return Err(cerr(pos, format!("{what} depends on sampled values; it must be a constant integer")));
        }
        let x = self.number(v, pos, what)?;
        if x < 0.0 || x.fract() != 0.0 {
            return Err(cerr(pos, format!("{what} must be a non-negative integer, got {x}")));
        }
        Ok(x as usize)
    }

    fn vector<'v>(&self, v: &'v Tv, pos: Pos) -> Result<&'v Rc<Vec<Tv>>> {
        match &v.val {
            Val::Vec(items) => Ok(items),
            _ => Err(cerr(pos, "expected a vector")),
        }
    }

    fn body(&mut self, exprs: &[Expr], env: &mut Env) -> Result<Tv> {
        let mut last = Tv::num(0.0);
        for e in exprs {
            last = self.eval(e, env)?;
        }
        Ok(last)
    }

    fn eval(&mut self, expr: &Expr, env: &mut Env) -> Result<Tv> {
        match expr {
            Expr::Int(v, _) => Ok(Tv::num(*v as f64)),
            Expr::Real(v, _) => Ok(Tv::num(*v)),
            Expr::Str(s, _) => Ok(Tv { val: Val::Str(s.clone()), taint: Taint::new() }),
            Expr::Symbol(s, pos) => lookup(env, s)
                .cloned()
                .ok_or_else(|| cerr(*pos, format!("unbound symbol {s}"))),
            Expr::Vector(items, _) => {
                let vals = items.iter().map(|e| self.eval(e, env)).collect::<Result<Vec<_>>>()?;
                Ok(Tv { val: Val::Vec(Rc::new(vals)), taint: Taint::new() })
            }
            Expr::List(items, pos) => {
                let Some(head) = items.first() else {
                    return Err(cerr(*pos, "empty application"));
                };
                let Some(op) = head.as_symbol() else {
                    return Err(cerr(head.pos(), "unsupported form: only named functions can be applied"));
                };
                self.form(op, &items[1..], *pos, env)
            }
        }
    }

    fn args(&mut self, exprs: &[Expr], env: &mut Env) -> Result<Vec<Tv>> {
        exprs.iter().map(|e| self.eval(e, env)).collect()
    }

    fn arity(&self, op: &str, args: &[Expr], n: usize, pos: Pos) -> Result<()> {
        if args.len() != n {
            return Err(cerr(pos, format!("{op} takes {n} arguments, got {}", args.len())));
        }
        Ok(())
    }

    fn form(&mut self, op: &str, args: &[Expr], pos: Pos, env: &mut Env) -> Result<Tv> {
        match op {
            "let" => {
                let Some(Expr::Vector(binds, bpos)) = args.first() else {
                    return Err(cerr(pos, "let needs a binding vector"));
                };
                if binds.len() % 2 != 0 {
                    return Err(cerr(*bpos, "let bindings come in pairs"));
                }
                let mark = env.len();
                for pair in binds.chunks(2) {
                    let name = pair[0].as_symbol().ok_or_else(|| cerr(pair[0].pos(), "binding name must be a symbol"))?;
                    let v = self.eval(&pair[1], env)?;
                    env.push((name.to_string(), v));
                }
                let out = self.body(&args[1..], env);
                env.truncate(mark);
                out
            }
            "if" => {
                if args.len() != 3 && args.len() != 2 {
                    return Err(cerr(pos, "if takes a condition and one or two branches"));
                }
                let c = self.eval(&args[0], env)?;
                let truth = self.number(&c, args[0].pos(), "if condition")? != 0.0;
                let cond_taint = deep_taint(&c);
                self.path.push(cond_taint.clone());
                let out = if truth {
                    self.eval(&args[1], env)
                } else if let Some(e) = args.get(2) {
                    self.eval(e, env)
                } else {
                    Ok(Tv::num(0.0))
                };
                self.path.pop();
                let mut out = out?;
                out.taint.extend(cond_taint);
                Ok(out)
            }
            "foreach" => {
                if args.len() < 3 {
                    return Err(cerr(pos, "foreach needs a count, a binding vector and a body"));
                }
                let c = self.eval(&args[0], env)?;
                let n = self.count(&c, args[0].pos(), "foreach count")?;
                let Expr::Vector(binds, bpos) = &args[1] else {
                    return Err(cerr(args[1].pos(), "foreach needs a binding vector"));
                };
                if binds.len() % 2 != 0 {
                    return Err(cerr(*bpos, "foreach bindings come in pairs"));
                }
                let mut seqs = Vec::new();
                for pair in binds.chunks(2) {
                    let name = pair[0].as_symbol().ok_or_else(|| cerr(pair[0].pos(), "binding name must be a symbol"))?;
                    let v = self.eval(&pair[1], env)?;
                    let items = self.vector(&v, pair[1].pos())?.clone();
                    if items.len() < n {
                        return Err(cerr(pair[1].pos(), format!("sequence of {} items for {n} iterations", items.len())));
                    }
                    seqs.push((name.to_string(), items));
                }
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let mark = env.len();
                    for (name, items) in &seqs {
                        env.push((name.clone(), items[i].clone()));
                    }
                    let v = self.body(&args[2..], env);
                    env.truncate(mark);
                    out.push(v?);
                }
                Ok(Tv { val: Val::Vec(Rc::new(out)), taint: Taint::new() })
            }
            "loop" => {
                if args.len() < 3 {
                    return Err(cerr(pos, "loop needs a count, an initial value and a function"));
                }
                let c = self.eval(&args[0], env)?;
                let n = self.count(&c, args[0].pos(), "loop count")?;
                let mut acc = self.eval(&args[1], env)?;
                let fname = args[2].as_symbol().ok_or_else(|| cerr(args[2].pos(), "loop function must be a name"))?;
                let extra = self.args(&args[3..], env)?;
                for t in 0..n {
                    let mut call = vec![Tv::num(t as f64), acc];
                    call.extend(extra.iter().cloned());
                    acc = self.call(fname, call, args[2].pos())?;
                }
                Ok(acc)
            }
            "sample" => {
                self.arity(op, args, 2, pos)?;
                let addr = self.eval(&args[0], env)?;
                let Val::Str(address) = addr.val else {
                    return Err(cerr(args[0].pos(), "sample address must be a string"));
                };
                let d = self.eval(&args[1], env)?;
                let Val::Dist(kind, ps) = &d.val else {
                    return Err(cerr(args[1].pos(), "sample needs a distribution"));
                };
                Ok(self.sample(address, *kind, ps, &d))
            }
            "normal" | "uniform" | "bernoulli" | "dirac" => {
                let (kind, n) = match op {
                    "normal" => (DistKind::Normal, 2),
                    "uniform" => (DistKind::Uniform, 2),
                    "bernoulli" => (DistKind::Bernoulli, 1),
                    _ => (DistKind::Dirac, 1),
                };
                self.arity(op, args, n, pos)?;
                let ps = self.args(args, env)?;
                Ok(Tv { val: Val::Dist(kind, ps), taint: Taint::new() })
            }
            "+" | "-" | "*" | "/" => {
                let vals = self.args(args, env)?;
                if vals.is_empty() {
                    return Err(cerr(pos, format!("{op} needs arguments")));
                }
                let mut taint = Taint::new();
                let mut nums = Vec::with_capacity(vals.len());
                for (v, e) in vals.iter().zip(args) {
                    nums.push(self.number(v, e.pos(), "arithmetic operand")?);
                    taint.extend(v.taint.iter().copied());
                }
                let x = match (op, nums.len()) {
                    ("-", 1) => -nums[0],
                    ("/", 1) => 1.0 / nums[0],
                    ("+", _) => nums.iter().sum(),
                    ("*", _) => nums.iter().product(),
                    ("-", _) => nums[1..].iter().fold(nums[0], |a, b| a - b),
                    _ => nums[1..].iter().fold(nums[0], |a, b| a / b),
                };
                Ok(Tv { val: Val::Num(x), taint })
            }
            "<" | ">" | "<=" | ">=" | "=" => {
                self.arity(op, args, 2, pos)?;
                let a = self.eval(&args[0], env)?;
                let b = self.eval(&args[1], env)?;
                let (x, y) = (self.number(&a, args[0].pos(), "comparison operand")?, self.number(&b, args[1].pos(), "comparison operand")?);
                let r = match op {
                    "<" => x < y,
                    ">" => x > y,
                    "<=" => x <= y,
                    ">=" => x >= y,
                    _ => x == y,
                };
                let mut taint = a.taint;
                taint.extend(b.taint);
                Ok(Tv { val: Val::Num(if r { 1.0 } else { 0.0 }), taint })
            }
            "get" => {
                self.arity(op, args, 2, pos)?;
                let v = self.eval(&args[0], env)?;
                let i = self.eval(&args[1], env)?;
                let items = self.vector(&v, args[0].pos())?;
                let idx = self.number(&i, args[1].pos(), "index")?;
                if idx < 0.0 || idx.fract() != 0.0 || idx as usize >= items.len() {
                    return Err(cerr(args[1].pos(), format!("index {idx} out of range for {} items", items.len())));
                }
                let mut out = items[idx as usize].clone();
                if !i.taint.is_empty() {
                    // a data-dependent index may select any element
                    out.taint.extend(i.taint.iter().copied());
                    for x in items.iter() {
                        out.taint.extend(deep_taint(x));
                    }
                }
                out.taint.extend(v.taint.iter().copied());
                Ok(out)
            }
            "conj" => {
                if args.len() < 2 {
                    return Err(cerr(pos, "conj needs a vector and at least one item"));
                }
                let v = self.eval(&args[0], env)?;
                let mut items = (**self.vector(&v, args[0].pos())?).clone();
                items.extend(self.args(&args[1..], env)?);
                Ok(Tv { val: Val::Vec(Rc::new(items)), taint: v.taint })
            }
            "count" => {
                self.arity(op, args, 1, pos)?;
                let v = self.eval(&args[0], env)?;
                let n = self.vector(&v, args[0].pos())?.len();
                Ok(Tv { val: Val::Num(n as f64), taint: v.taint })
            }
            "first" | "second" => {
                self.arity(op, args, 1, pos)?;
                let v = self.eval(&args[0], env)?;
                let items = self.vector(&v, args[0].pos())?;
                let k = if op == "first" { 0 } else { 1 };
                let mut out = items
                    .get(k)
                    .cloned()
                    .ok_or_else(|| cerr(pos, format!("{op} of a vector with {} items", items.len())))?;
                out.taint.extend(v.taint.iter().copied());
                Ok(out)
            }
            "range" => {
                self.arity(op, args, 1, pos)?;
                let c = self.eval(&args[0], env)?;
                let n = self.count(&c, args[0].pos(), "range bound")?;
                let items = (0..n).map(|i| Tv::num(i as f64)).collect();
                Ok(Tv { val: Val::Vec(Rc::new(items)), taint: Taint::new() })
            }
            "vector" => {
                let items = self.args(args, env)?;
                Ok(Tv { val: Val::Vec(Rc::new(items)), taint: Taint::new() })
            }
            "defn" => Err(cerr(pos, "defn is only allowed at top level")),
            "fn" | "observe" => Err(cerr(pos, format!("unsupported form {op}"))),
            name => {
                let vals = self.args(args, env)?;
                self.call(name, vals, pos)
            }
        }
    }

    fn call(&mut self, name: &str, args: Vec<Tv>, pos: Pos) -> Result<Tv> {
        let Some(defn) = self.defns.get(name).copied() else {
            return Err(cerr(pos, format!("unbound function {name}")));
        };
        if defn.params.len() != args.len() {
            return Err(cerr(pos, format!("{name} takes {} arguments, got {}", defn.params.len(), args.len())));
        }
        if self.depth >= MAX_DEPTH {
            return Err(cerr(pos, "call depth limit reached (recursion is not supported)"));
        }
        self.depth += 1;
        let mut env: Env = defn.params.iter().cloned().zip(args).collect();
        let out = self.body(&defn.body, &mut env);
        self.depth -= 1;
        out
    }

    fn sample(&mut self, address: String, kind: DistKind, ps: &[Tv], dist: &Tv) -> Tv {
        let id = self.trace.len();
        let mut parents = deep_taint(dist);
        for t in &self.path {
            parents.extend(t.iter().copied());
        }
        let mut params = Vec::new();
        for p in ps {
            flatten_nums(p, &mut params);
        }
        let default = match kind {
            DistKind::Normal | DistKind::Dirac => params.first().copied().unwrap_or(0.0),
            DistKind::Uniform => params.iter().sum::<f64>() / params.len().max(1) as f64,
            DistKind::Bernoulli => {
                if params.first().copied().unwrap_or(0.0) >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        let value = self.overrides.get(&id).copied().unwrap_or(default);
        let ordinal = self.counts.entry(address.clone()).or_insert(0);
        let node = TraceNode {
            id,
            address,
            ordinal: *ordinal,
            dist: kind,
            parents,
            params,
            value,
        };
        *ordinal += 1;
        self.trace.push(node);
        Tv {
            val: Val::Num(value),
            taint: Taint::from([id]),
        }
    }
}
