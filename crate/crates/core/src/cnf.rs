//! Literals, clauses and the growing clause database that every circuit in
//! this crate compiles into.
//!
//! Gates are emitted in Tseitin form: each AND/OR/XOR gets one fresh output
//! variable constrained by 3 (AND, OR) or 4 (XOR) clauses. Constant inputs,
//! equal inputs and complementary inputs are folded away before anything is
//! emitted, and identical gates are emitted once (structural hashing).
//!
//! The constants [`Lit::TRUE`] and [`Lit::FALSE`] are ordinary literal values
//! for the purpose of the API, but they never reach the clause database.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::io::{self, Write};
use std::ops::Not;

use crate::error::{Error, Result};

/// Variable id, `>= 1`.
pub type Var = u32;

const CONST_CODE: i32 = i32::MAX;

/// A literal in DIMACS encoding (`+v` / `-v`), or one of the two constants.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lit(i32);

impl Lit {
    pub const TRUE: Lit = Lit(CONST_CODE);
    pub const FALSE: Lit = Lit(-CONST_CODE);

    pub fn new(var: Var, positive: bool) -> Lit {
        assert!(
            var >= 1 && (var as i64) < CONST_CODE as i64,
            "variable id {var} out of range"
        );
        let v = var as i32;
        Lit(if positive { v } else { -v })
    }

    pub fn constant(value: bool) -> Lit {
        if value {
            Lit::TRUE
        } else {
            Lit::FALSE
        }
    }

    /// Parses a non-zero DIMACS integer.
    pub fn from_dimacs(code: i32) -> Option<Lit> {
        if code == 0 || code.unsigned_abs() >= CONST_CODE as u32 {
            None
        } else {
            Some(Lit(code))
        }
    }

    /// Variable of a non-constant literal.
    pub fn var(self) -> Option<Var> {
        if self.is_const() {
            None
        } else {
            Some(self.0.unsigned_abs())
        }
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn is_const(self) -> bool {
        self.0.unsigned_abs() == CONST_CODE as u32
    }

    pub fn as_const(self) -> Option<bool> {
        match self {
            Lit::TRUE => Some(true),
            Lit::FALSE => Some(false),
            _ => None,
        }
    }

    /// DIMACS integer. Panics on constants, which have no DIMACS form.
    pub fn to_dimacs(self) -> i32 {
        assert!(!self.is_const(), "constant literal has no DIMACS encoding");
        self.0
    }
}

impl Not for Lit {
    type Output = Lit;
    fn not(self) -> Lit {
        Lit(-self.0)
    }
}

impl fmt::Debug for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_const() {
            Some(true) => f.write_str("TRUE"),
            Some(false) => f.write_str("FALSE"),
            None => write!(f, "{}", self.0),
        }
    }
}

impl fmt::Display for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Gate {
    And,
    Or,
    Xor,
}

/// Clause database with fresh-variable allocation and debug labels.
#[derive(Clone, Debug, Default)]
pub struct CnfFormula {
    clauses: Vec<Vec<Lit>>,
    var_count: u32,
    labels: BTreeMap<Var, String>,
    gates: HashMap<(Gate, Lit, Lit), Lit>,
}

impl CnfFormula {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocates a labeled variable and returns its positive literal.
    pub fn fresh_var(&mut self, label: impl Into<String>) -> Lit {
        let lit = self.fresh_anon();
        self.labels.insert(lit.0 as Var, label.into());
        lit
    }

    /// Allocates an unlabeled (temporary) variable.
    pub fn fresh_anon(&mut self) -> Lit {
        self.var_count += 1;
        Lit::new(self.var_count, true)
    }

    pub fn var_count(&self) -> u32 {
        self.var_count
    }

    pub fn clauses(&self) -> &[Vec<Lit>] {
        &self.clauses
    }

    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }

    pub fn labels(&self) -> &BTreeMap<Var, String> {
        &self.labels
    }

    pub fn label(&self, var: Var) -> Option<&str> {
        self.labels.get(&var).map(String::as_str)
    }

    /// Adds a clause after folding constants, dropping duplicate literals and
    /// discarding tautologies. A clause that folds to empty makes the formula
    /// unsatisfiable. Returns `false` if nothing was emitted.
    pub fn add_clause<I: IntoIterator<Item = Lit>>(&mut self, lits: I) -> bool {
        let mut clause: Vec<Lit> = Vec::new();
        let mut seen: HashSet<Lit> = HashSet::new();
        for lit in lits {
            match lit.as_const() {
                Some(true) => return false,
                Some(false) => continue,
                None => {}
            }
            if let Some(v) = lit.var() {
                assert!(v <= self.var_count, "literal {lit} not allocated in formula");
            }
            if seen.contains(&!lit) {
                return false;
            }
            if seen.insert(lit) {
                clause.push(lit);
            }
        }
        if clause.is_empty() {
            let v = self.fresh_anon();
            self.clauses.push(vec![v]);
            self.clauses.push(vec![!v]);
        } else {
            self.clauses.push(clause);
        }
        true
    }

    /// `y <-> a & b`.
    pub fn and(&mut self, a: Lit, b: Lit) -> Lit {
        match (a.as_const(), b.as_const()) {
            (Some(false), _) | (_, Some(false)) => return Lit::FALSE,
            (Some(true), _) => return b,
            (_, Some(true)) => return a,
            _ => {}
        }
        if a == b {
            return a;
        }
        if a == !b {
            return Lit::FALSE;
        }
        let key = (Gate::And, a.min(b), a.max(b));
        if let Some(&y) = self.gates.get(&key) {
            return y;
        }
        let y = self.fresh_anon();
        self.clauses.push(vec![!y, a]);
        self.clauses.push(vec![!y, b]);
        self.clauses.push(vec![y, !a, !b]);
        self.gates.insert(key, y);
        y
    }

    /// `y <-> a | b`.
    pub fn or(&mut self, a: Lit, b: Lit) -> Lit {
        match (a.as_const(), b.as_const()) {
            (Some(true), _) | (_, Some(true)) => return Lit::TRUE,
            (Some(false), _) => return b,
            (_, Some(false)) => return a,
            _ => {}
        }
        if a == b {
            return a;
        }
        if a == !b {
            return Lit::TRUE;
        }
        let key = (Gate::Or, a.min(b), a.max(b));
        if let Some(&y) = self.gates.get(&key) {
            return y;
        }
        let y = self.fresh_anon();
        self.clauses.push(vec![y, !a]);
        self.clauses.push(vec![y, !b]);
        self.clauses.push(vec![!y, a, b]);
        self.gates.insert(key, y);
        y
    }

    /// `y <-> a ^ b`.
    pub fn xor(&mut self, a: Lit, b: Lit) -> Lit {
        match (a.as_const(), b.as_const()) {
            (Some(false), _) => return b,
            (Some(true), _) => return !b,
            (_, Some(false)) => return a,
            (_, Some(true)) => return !a,
            _ => {}
        }
        if a == b {
            return Lit::FALSE;
        }
        if a == !b {
            return Lit::TRUE;
        }
        // xor(!a, b) = !xor(a, b): hash on positive inputs
        let flip = a.is_positive() != b.is_positive();
        let (pa, pb) = (Lit(a.0.abs()), Lit(b.0.abs()));
        let key = (Gate::Xor, pa.min(pb), pa.max(pb));
        let y = match self.gates.get(&key) {
            Some(&y) => y,
            None => {
                let y = self.fresh_anon();
                self.clauses.push(vec![!y, pa, pb]);
                self.clauses.push(vec![!y, !pa, !pb]);
                self.clauses.push(vec![y, !pa, pb]);
                self.clauses.push(vec![y, pa, !pb]);
                self.gates.insert(key, y);
                y
            }
        };
        if flip {
            !y
        } else {
            y
        }
    }

    /// Asserts `a <-> b` with the two clauses `(!a | b)` and `(a | !b)`.
    pub fn assert_equal(&mut self, a: Lit, b: Lit) {
        self.add_clause([!a, b]);
        self.add_clause([a, !b]);
    }

    pub fn assert_lit(&mut self, a: Lit) {
        self.add_clause([a]);
    }

    /// Evaluates every clause under `assignment`; returns the index of the
    /// first clause that is not satisfied (unassigned literals count as false).
    pub fn first_violated(&self, assignment: &Assignment) -> Option<usize> {
        self.clauses
            .iter()
            .position(|c| !c.iter().any(|&l| assignment.lit(l) == Some(true)))
    }

    pub fn is_satisfied_by(&self, assignment: &Assignment) -> bool {
        self.first_violated(assignment).is_none()
    }

    pub fn to_dimacs(&self) -> String {
        let mut out = Vec::new();
        self.write_dimacs(&mut out, &[])
            .expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("DIMACS output is ASCII")
    }

    /// Writes the formula in DIMACS form, with `units` appended as unit
    /// clauses. Label comments precede the header, one `c <id> <label>` line
    /// per labeled variable in id order.
    pub fn write_dimacs<W: Write>(&self, out: &mut W, units: &[Lit]) -> io::Result<()> {
        let mut w = io::BufWriter::new(out);
        for (var, label) in &self.labels {
            writeln!(w, "c {var} {label}")?;
        }
        writeln!(
            w,
            "p cnf {} {}",
            self.var_count,
            self.clauses.len() + units.len()
        )?;
        let mut line = String::new();
        for clause in &self.clauses {
            line.clear();
            for lit in clause {
                write!(line, "{} ", lit.to_dimacs()).unwrap();
            }
            line.push('0');
            writeln!(w, "{line}")?;
        }
        for &unit in units {
            writeln!(w, "{} 0", unit.to_dimacs())?;
        }
        w.flush()
    }

    /// Parses DIMACS CNF. `c <id> <label>` comments restore labels; other
    /// comments are ignored. Clauses may span lines.
    pub fn parse_dimacs(text: &str) -> Result<CnfFormula> {
        let mut formula = CnfFormula::new();
        let mut declared: Option<(u32, usize)> = None;
        let mut current: Vec<Lit> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('c') {
                let mut parts = rest.trim().splitn(2, ' ');
                if let (Some(id), Some(label)) = (parts.next(), parts.next()) {
                    if let Ok(id) = id.parse::<Var>() {
                        formula.labels.insert(id, label.trim().to_string());
                    }
                }
                continue;
            }
            if line.starts_with('p') {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 4 || fields[1] != "cnf" {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("bad header `{line}`"),
                    });
                }
                let vars = fields[2].parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: "bad variable count".into(),
                })?;
                let clauses = fields[3].parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: "bad clause count".into(),
                })?;
                declared = Some((vars, clauses));
                formula.var_count = vars;
                continue;
            }
            let Some((vars, _)) = declared else {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "clause before `p cnf` header".into(),
                });
            };
            for tok in line.split_whitespace() {
                let code: i32 = tok.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad literal `{tok}`"),
                })?;
                if code == 0 {
                    formula.clauses.push(std::mem::take(&mut current));
                    continue;
                }
                let lit = Lit::from_dimacs(code)
                    .filter(|l| l.var().is_some_and(|v| v <= vars))
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: format!("literal {code} outside declared {vars} variables"),
                    })?;
                current.push(lit);
            }
        }
        if !current.is_empty() {
            return Err(Error::Parse {
                line: text.lines().count(),
                msg: "unterminated final clause".into(),
            });
        }
        match declared {
            Some((_, n)) if n != formula.clauses.len() => Err(Error::Parse {
                line: text.lines().count(),
                msg: format!(
                    "header declares {n} clauses, found {}",
                    formula.clauses.len()
                ),
            }),
            Some(_) => Ok(formula),
            None => Err(Error::Parse {
                line: 0,
                msg: "missing `p cnf` header".into(),
            }),
        }
    }
}

/// Partial truth assignment indexed by variable id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment {
    values: Vec<Option<bool>>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, var: Var, value: bool) {
        let idx = var as usize;
        if self.values.len() <= idx {
            self.values.resize(idx + 1, None);
        }
        self.values[idx] = Some(value);
    }

    pub fn get(&self, var: Var) -> Option<bool> {
        self.values.get(var as usize).copied().flatten()
    }

    /// Truth value of a literal; constants always have one.
    pub fn lit(&self, lit: Lit) -> Option<bool> {
        if let Some(c) = lit.as_const() {
            return Some(c);
        }
        let v = self.get(lit.var()?)?;
        Some(if lit.is_positive() { v } else { !v })
    }

    /// Highest variable id with a value.
    pub fn max_var(&self) -> Var {
        self.values
            .iter()
            .rposition(Option::is_some)
            .map_or(0, |i| i as Var)
    }

    /// Assigned `(var, value)` pairs in variable order.
    pub fn iter(&self) -> impl Iterator<Item = (Var, bool)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|b| (i as Var, b)))
    }

    pub fn restricted_to(&self, vars: &[Var]) -> Vec<Option<bool>> {
        vars.iter().map(|&v| self.get(v)).collect()
    }
}

impl FromIterator<Lit> for Assignment {
    fn from_iter<T: IntoIterator<Item = Lit>>(iter: T) -> Self {
        let mut a = Assignment::new();
        for lit in iter {
            if let Some(v) = lit.var() {
                a.set(v, lit.is_positive());
            }
        }
        a
    }
}
