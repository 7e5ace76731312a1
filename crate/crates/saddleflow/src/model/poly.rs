//! Dense multi-index polynomials with exact differentiation, plus a small
//! expression parser (`+`, `-`, `*`, `^`, parentheses) for problem files.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Polynomial in `nvars` variables, stored as exponent-vector -> coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Vec<u16>, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        if c != 0.0 {
            p.terms.insert(vec![0; nvars], c);
        }
        p
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars);
        let mut exps = vec![0u16; nvars];
        exps[i] = 1;
        let mut p = Self::zero(nvars);
        p.terms.insert(exps, 1.0);
        p
    }

    /// Builds a polynomial from explicit (exponents, coefficient) terms.
    pub fn from_terms(nvars: usize, terms: &[(Vec<u16>, f64)]) -> Result<Self> {
        let mut p = Self::zero(nvars);
        for (exps, c) in terms {
            if exps.len() != nvars {
                return Err(Error::input(format!(
                    "term has {} exponents but the polynomial has {} variables",
                    exps.len(),
                    nvars
                )));
            }
            if !c.is_finite() {
                return Err(Error::input("non-finite polynomial coefficient"));
            }
            *p.terms.entry(exps.clone()).or_insert(0.0) += c;
        }
        p.prune();
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().map(|&x| x as u32).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u16>, &f64)> {
        self.terms.iter()
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() > 0.0);
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, other.nvars);
        let mut out = self.clone();
        for (e, c) in &other.terms {
            *out.terms.entry(e.clone()).or_insert(0.0) += c;
        }
        out.prune();
        out
    }

    pub fn neg(&self) -> Polynomial {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = -*c;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= s;
        }
        out.prune();
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, other.nvars);
        let mut out = Self::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let exps: Vec<u16> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *out.terms.entry(exps).or_insert(0.0) += ca * cb;
            }
        }
        out.prune();
        out
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut out = Self::constant(self.nvars, 1.0);
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    /// Exact partial derivative with respect to variable `i`.
    pub fn partial(&self, i: usize) -> Polynomial {
        assert!(i < self.nvars);
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut exps = e.clone();
            exps[i] -= 1;
            *out.terms.entry(exps).or_insert(0.0) += c * e[i] as f64;
        }
        out.prune();
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars);
        let mut sum = 0.0;
        for (e, c) in &self.terms {
            let mut term = *c;
            for (xi, &p) in x.iter().zip(e) {
                for _ in 0..p {
                    term *= xi;
                }
            }
            sum += term;
        }
        sum
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.nvars, |i, _| self.partial(i).eval(x))
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let partials: Vec<Polynomial> = (0..self.nvars).map(|i| self.partial(i)).collect();
        DMatrix::from_fn(self.nvars, self.nvars, |i, j| {
            partials[i].partial(j).eval(x)
        })
    }

    /// Substitutes `x_i -> s_i * x_i`.
    pub fn scale_vars(&self, s: &[f64]) -> Polynomial {
        assert_eq!(s.len(), self.nvars);
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            let mut coeff = *c;
            for (si, &p) in s.iter().zip(e) {
                for _ in 0..p {
                    coeff *= si;
                }
            }
            out.terms.insert(e.clone(), coeff);
        }
        out.prune();
        out
    }

    /// Embeds an `nvars`-variable polynomial into a larger variable space,
    /// mapping variable `i` to `offset + i`.
    pub fn embed(&self, total_vars: usize, offset: usize) -> Polynomial {
        assert!(offset + self.nvars <= total_vars);
        let mut out = Polynomial::zero(total_vars);
        for (e, c) in &self.terms {
            let mut exps = vec![0u16; total_vars];
            exps[offset..offset + self.nvars].copy_from_slice(e);
            out.terms.insert(exps, *c);
        }
        out
    }

    /// Gram matrix of the order-`k` derivative tensor at `x`, with one slot
    /// left free: `G[i][j] = sum_rest T(i, rest) T(j, rest)` where
    /// `T(i1..ik)` is the order-`k` partial derivative. A direction `d` has
    /// `T(d, ., .., .) = 0` exactly when `d` lies in the kernel of `G`.
    pub fn derivative_gram(&self, k: u32, x: &[f64]) -> DMatrix<f64> {
        assert!(k >= 1);
        let n = self.nvars;
        let mut gram = DMatrix::<f64>::zeros(n, n);
        let mut rest = vec![0usize; (k - 1) as usize];
        let mut memo: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        self.gram_recurse(&mut rest, 0, 0, x, &mut gram, &mut memo);
        gram
    }

    fn derivative_at(
        &self,
        multiset: &[usize],
        x: &[f64],
        memo: &mut BTreeMap<Vec<usize>, f64>,
    ) -> f64 {
        let key = multiset.to_vec();
        if let Some(v) = memo.get(&key) {
            return *v;
        }
        let mut p = self.clone();
        for &i in multiset {
            p = p.partial(i);
        }
        let v = p.eval(x);
        memo.insert(key, v);
        v
    }

    fn gram_recurse(
        &self,
        rest: &mut Vec<usize>,
        depth: usize,
        min_var: usize,
        x: &[f64],
        gram: &mut DMatrix<f64>,
        memo: &mut BTreeMap<Vec<usize>, f64>,
    ) {
        let n = self.nvars;
        if depth == rest.len() {
            // Number of distinct orderings of this multiset.
            let mut counts = vec![0usize; n];
            for &i in rest.iter() {
                counts[i] += 1;
            }
            let mut weight = factorial(rest.len());
            for &c in &counts {
                weight /= factorial(c);
            }
            let t: Vec<f64> = (0..n)
                .map(|i| {
                    let mut ms: Vec<usize> = rest.clone();
                    ms.push(i);
                    ms.sort_unstable();
                    self.derivative_at(&ms, x, memo)
                })
                .collect();
            for i in 0..n {
                for j in 0..n {
                    gram[(i, j)] += weight as f64 * t[i] * t[j];
                }
            }
            return;
        }
        for v in min_var..n {
            rest[depth] = v;
            self.gram_recurse(rest, depth + 1, v, x, gram, memo);
        }
    }
}

fn factorial(k: usize) -> usize {
    (1..=k).product::<usize>().max(1)
}

// ---------------------------------------------------------------------------
// Expression parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let bytes: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                tokens.push(Token::Plus);
                i += 1;
            }
            '-' => {
                tokens.push(Token::Minus);
                i += 1;
            }
            '*' => {
                tokens.push(Token::Star);
                i += 1;
            }
            '^' => {
                tokens.push(Token::Caret);
                i += 1;
            }
            '(' => {
                tokens.push(Token::LParen);
                i += 1;
            }
            ')' => {
                tokens.push(Token::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == '.') {
                    i += 1;
                }
                // Scientific notation.
                if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == '+' || bytes[j] == '-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = bytes[start..i].iter().collect();
                let value = text
                    .parse::<f64>()
                    .map_err(|_| Error::Schema(format!("bad number literal `{text}`")))?;
                tokens.push(Token::Number(value));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                    i += 1;
                }
                tokens.push(Token::Ident(bytes[start..i].iter().collect()));
            }
            other => {
                return Err(Error::Schema(format!(
                    "unexpected character `{other}` in expression"
                )))
            }
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    vars: &'a [String],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Polynomial> {
        let mut acc = self.term()?;
        while let Some(t) = self.peek() {
            match t {
                Token::Plus => {
                    self.next();
                    acc = acc.add(&self.term()?);
                }
                Token::Minus => {
                    self.next();
                    acc = acc.add(&self.term()?.neg());
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Polynomial> {
        let mut acc = self.factor()?;
        while matches!(self.peek(), Some(Token::Star)) {
            self.next();
            acc = acc.mul(&self.factor()?);
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Polynomial> {
        // Unary minus binds looser than `^`: -x^4 is -(x^4).
        if matches!(self.peek(), Some(Token::Minus)) {
            self.next();
            return Ok(self.factor()?.neg());
        }
        let base = self.atom()?;
        if matches!(self.peek(), Some(Token::Caret)) {
            self.next();
            match self.next() {
                Some(Token::Number(k)) if k >= 0.0 && k.fract() == 0.0 && k <= 64.0 => {
                    Ok(base.pow(k as u32))
                }
                other => Err(Error::Schema(format!(
                    "exponent must be a small non-negative integer, got {other:?}"
                ))),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Polynomial> {
        match self.next() {
            Some(Token::Number(v)) => Ok(Polynomial::constant(self.vars.len(), v)),
            Some(Token::Ident(name)) => match self.vars.iter().position(|v| *v == name) {
                Some(i) => Ok(Polynomial::var(self.vars.len(), i)),
                None => Err(Error::Schema(format!(
                    "unknown variable `{name}` (expected one of {:?})",
                    self.vars
                ))),
            },
            Some(Token::LParen) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Token::RParen) => Ok(inner),
                    _ => Err(Error::Schema("missing closing parenthesis".into())),
                }
            }
            other => Err(Error::Schema(format!("unexpected token {other:?}"))),
        }
    }
}

/// Parses an expression over the named variables into a polynomial.
/// Only `+`, `-`, `*`, `^` and parentheses are accepted.
pub fn parse_polynomial(src: &str, vars: &[String]) -> Result<Polynomial> {
    let tokens = tokenize(src)?;
    if tokens.is_empty() {
        return Err(Error::Schema("empty expression".into()));
    }
    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        vars,
    };
    let poly = parser.expr()?;
    if parser.pos != tokens.len() {
        return Err(Error::Schema(format!(
            "trailing input after position {}",
            parser.pos
        )));
    }
    Ok(poly)
}
