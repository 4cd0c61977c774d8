//! Dependency trees read from CoNLL-U.
//!
//! Only basic dependencies (HEAD/DEPREL) are used. Multiword-token ranges
//! (`3-4`) and empty nodes (`5.1`) are skipped and reported as warnings.
//! Tokens are identified by index, never by surface form.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub form: String,
    /// Index of the syntactic head; 0 attaches to the virtual root.
    pub head: usize,
    pub deprel: Option<String>,
}

impl Token {
    pub fn new(index: usize, form: impl Into<String>, head: usize) -> Self {
        Token {
            index,
            form: form.into(),
            head,
            deprel: None,
        }
    }

    pub fn with_deprel(mut self, deprel: impl Into<String>) -> Self {
        self.deprel = Some(deprel.into());
        self
    }
}

/// One structural problem found by [`validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Empty,
    /// Token at `position` (0-based) carries an index other than `position + 1`.
    BadIndex { position: usize, index: usize },
    NoRoot,
    MultipleRoots(Vec<usize>),
    SelfHead(usize),
    DanglingHead { token: usize, head: usize },
    Cycle(Vec<usize>),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty sentence"),
            Violation::BadIndex { position, index } => {
                write!(f, "token {} has index {index}, expected {}", position + 1, position + 1)
            }
            Violation::NoRoot => write!(f, "no root (no token with head 0)"),
            Violation::MultipleRoots(r) => write!(f, "multiple roots {}", set_str(r)),
            Violation::SelfHead(t) => write!(f, "token {t} is its own head"),
            Violation::DanglingHead { token, head } => {
                write!(f, "dangling head: token {token} points to {head}")
            }
            Violation::Cycle(c) => write!(f, "cycle through tokens {}", set_str(c)),
        }
    }
}

fn set_str(ix: &[usize]) -> String {
    let inner: Vec<String> = ix.iter().map(ToString::to_string).collect();
    format!("{{{}}}", inner.join(","))
}

/// Lists every invariant violation of a token sequence. Empty means the
/// tokens form a valid single-rooted tree.
pub fn validate(tokens: &[Token]) -> Vec<Violation> {
    let n = tokens.len();
    if n == 0 {
        return vec![Violation::Empty];
    }
    let mut out = Vec::new();
    for (pos, t) in tokens.iter().enumerate() {
        if t.index != pos + 1 {
            out.push(Violation::BadIndex {
                position: pos,
                index: t.index,
            });
        }
    }
    if !out.is_empty() {
        return out;
    }

    let roots: Vec<usize> = tokens.iter().filter(|t| t.head == 0).map(|t| t.index).collect();
    match roots.len() {
        0 => out.push(Violation::NoRoot),
        1 => {}
        _ => out.push(Violation::MultipleRoots(roots)),
    }
    for t in tokens {
        if t.head == t.index {
            out.push(Violation::SelfHead(t.index));
        } else if t.head > n {
            out.push(Violation::DanglingHead {
                token: t.index,
                head: t.head,
            });
        }
    }

    // 0 = unvisited, 1 = on current path, 2 = done
    let mut state = vec![0u8; n + 1];
    let mut seen_cycles: BTreeSet<Vec<usize>> = BTreeSet::new();
    for start in 1..=n {
        let mut path = Vec::new();
        let mut cur = start;
        while cur != 0 && cur <= n && state[cur] == 0 {
            state[cur] = 1;
            path.push(cur);
            let h = tokens[cur - 1].head;
            if h == cur {
                break;
            }
            cur = h;
        }
        if cur != 0 && cur <= n && state[cur] == 1 && tokens[cur - 1].head != cur {
            let from = path.iter().position(|&p| p == cur).unwrap_or(0);
            let mut cyc = path[from..].to_vec();
            cyc.sort_unstable();
            if seen_cycles.insert(cyc.clone()) {
                out.push(Violation::Cycle(cyc));
            }
        }
        for p in path {
            state[p] = 2;
        }
    }
    out
}

/// A validated dependency tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Token>", into = "Vec<Token>")]
pub struct DependencyTree {
    tokens: Vec<Token>,
    root: usize,
    children: Vec<Vec<usize>>,
}

impl DependencyTree {
    pub fn from_tokens(tokens: Vec<Token>) -> Result<Self> {
        let violations = validate(&tokens);
        if !violations.is_empty() {
            let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(Error::InvalidTree(msgs.join("; ")));
        }
        let n = tokens.len();
        let mut children = vec![Vec::new(); n + 1];
        let mut root = 0;
        for t in &tokens {
            if t.head == 0 {
                root = t.index;
            }
            children[t.head].push(t.index);
        }
        Ok(DependencyTree {
            tokens,
            root,
            children,
        })
    }

    /// Builds a tree from surface forms and 1-based heads (0 for the root).
    pub fn from_heads<S: AsRef<str>>(forms: &[S], heads: &[usize]) -> Result<Self> {
        if forms.len() != heads.len() {
            return Err(Error::InvalidTree(format!(
                "{} forms but {} heads",
                forms.len(),
                heads.len()
            )));
        }
        let tokens = forms
            .iter()
            .zip(heads)
            .enumerate()
            .map(|(i, (f, &h))| Token::new(i + 1, f.as_ref(), h))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false for a constructed tree; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn token(&self, index: usize) -> Result<&Token> {
        self.check(index)?;
        Ok(&self.tokens[index - 1])
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    fn check(&self, index: usize) -> Result<()> {
        if index == 0 || index > self.tokens.len() {
            return Err(Error::InvalidNode {
                index,
                len: self.tokens.len(),
            });
        }
        Ok(())
    }

    /// Dependents of `node` in ascending surface order.
    pub fn children(&self, node: usize) -> Result<&[usize]> {
        self.check(node)?;
        Ok(&self.children[node])
    }

    pub fn is_leaf(&self, node: usize) -> Result<bool> {
        Ok(self.children(node)?.is_empty())
    }

    /// Serialises the tree as one CoNLL-U sentence (trailing blank line included).
    pub fn to_conllu(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            let _ = writeln!(
                s,
                "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_",
                t.index,
                t.form,
                t.head,
                t.deprel.as_deref().unwrap_or("_")
            );
        }
        s.push('\n');
        s
    }

    /// Removes tokens labelled `punct`, reattaching their dependents to the
    /// removed token's head and renumbering the remainder.
    pub fn without_punct(&self) -> Result<Self> {
        let is_punct = |t: &Token| t.deprel.as_deref() == Some("punct");
        if !self.tokens.iter().any(is_punct) {
            return Ok(self.clone());
        }
        let mut new_index = vec![0usize; self.len() + 1];
        let mut next = 0;
        for t in &self.tokens {
            if !is_punct(t) {
                next += 1;
                new_index[t.index] = next;
            }
        }
        let mut tokens = Vec::with_capacity(next);
        for t in self.tokens.iter().filter(|t| !is_punct(t)) {
            let mut h = t.head;
            while h != 0 && is_punct(&self.tokens[h - 1]) {
                h = self.tokens[h - 1].head;
            }
            tokens.push(Token {
                index: new_index[t.index],
                form: t.form.clone(),
                head: new_index[h],
                deprel: t.deprel.clone(),
            });
        }
        Self::from_tokens(tokens)
    }
}

impl TryFrom<Vec<Token>> for DependencyTree {
    type Error = Error;

    fn try_from(tokens: Vec<Token>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<DependencyTree> for Vec<Token> {
    fn from(tree: DependencyTree) -> Self {
        tree.tokens
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParseOptions {
    /// Drop tokens whose relation is `punct`.
    pub drop_punct: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Parsed {
    pub trees: Vec<DependencyTree>,
    pub warnings: Vec<String>,
}

/// Parses CoNLL-U text with default options, discarding warnings.
pub fn parse_conllu(text: &str) -> Result<Vec<DependencyTree>> {
    Ok(parse_conllu_with(text, &ParseOptions::default())?.trees)
}

pub fn parse_conllu_with(text: &str, opts: &ParseOptions) -> Result<Parsed> {
    let mut out = Parsed::default();
    let mut tokens: Vec<Token> = Vec::new();
    let mut start_line = 1;

    let finish = |tokens: &mut Vec<Token>, start_line: usize, out: &mut Parsed| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let toks = std::mem::take(tokens);
        let violations = validate(&toks);
        if let Some(v) = violations.first() {
            return Err(Error::Parse {
                line: start_line,
                msg: v.to_string(),
            });
        }
        let mut tree = DependencyTree::from_tokens(toks)?;
        if opts.drop_punct {
            tree = tree.without_punct()?;
        }
        out.trees.push(tree);
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut tokens, start_line, &mut out)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if tokens.is_empty() {
            start_line = line_no;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            out.warnings.push(format!(
                "line {line_no}: skipped {} '{id}'",
                if id.contains('-') {
                    "multiword token"
                } else {
                    "empty node"
                }
            ));
            continue;
        }
        let index: usize = id.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("non-integer token id '{id}'"),
        })?;
        if index == 0 {
            return Err(Error::Parse {
                line: line_no,
                msg: "token id must be >= 1".into(),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("non-integer head '{}'", cols[6]),
        })?;
        if tokens.iter().any(|t| t.index == index) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate index {index}"),
            });
        }
        let deprel = match cols[7] {
            "_" => None,
            r => Some(r.to_string()),
        };
        tokens.push(Token {
            index,
            form: cols[1].to_string(),
            head,
            deprel,
        });
    }
    finish(&mut tokens, start_line, &mut out)?;
    Ok(out)
}

/// A five-token parse ("girl in green sitting on") used in examples and tests.
pub const SAMPLE_CONLLU: &str = "\
# text = girl in green sitting on
1\tgirl\t_\tNOUN\t_\t_\t0\troot\t_\t_
2\tin\t_\tADP\t_\t_\t1\tnmod\t_\t_
3\tgreen\t_\tADJ\t_\t_\t2\tobj\t_\t_
4\tsitting\t_\tVERB\t_\t_\t1\tacl\t_\t_
5\ton\t_\tADP\t_\t_\t4\tobl\t_\t_
";

#[cfg(test)]
mod tests {
    use super::*;


    #[test]
    fn single_token_sentence() {
        let trees = parse_conllu("1\thi\t_\t_\t_\t_\t0\troot\t_\t_\n").unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].root(), 1);
        assert!(trees[0].children(1).unwrap().is_empty());
    }

    #[test]
    fn sample_parse_structure() {
        let trees = parse_conllu(SAMPLE_CONLLU).unwrap();
        let t = &trees[0];
        assert_eq!(t.forms(), ["girl", "in", "green", "sitting", "on"]);
        assert_eq!(t.root(), 1);
        assert_eq!(t.children(1).unwrap(), &[2, 4]);
        assert_eq!(t.children(2).unwrap(), &[3]);
        assert_eq!(t.children(4).unwrap(), &[5]);
        assert!(t.children(3).unwrap().is_empty());
        assert!(validate(t.tokens()).is_empty());
    }

    #[test]
    fn multiple_roots_rejected() {
        let text = "1\ta\t_\t_\t_\t_\t0\t_\t_\t_\n2\tb\t_\t_\t_\t_\t0\t_\t_\t_\n";
        let err = parse_conllu(text).unwrap_err().to_string();
        assert!(err.contains("multiple roots"), "{err}");
    }

    #[test]
    fn malformed_lines_name_their_line() {
        let cases = [
            ("1\ta\t_\t_\t_\t_\t0\t_\t_\n", 1, "columns"),
            ("# c\n1\ta\t_\t_\t_\t_\tx\t_\t_\t_\n", 2, "non-integer head"),
            (
                "1\ta\t_\t_\t_\t_\t0\t_\t_\t_\n1\tb\t_\t_\t_\t_\t1\t_\t_\t_\n",
                2,
                "duplicate index",
            ),
        ];
        for (text, line, needle) in cases {
            match parse_conllu(text) {
                Err(Error::Parse { line: l, msg }) => {
                    assert_eq!(l, line, "{msg}");
                    assert!(msg.contains(needle), "{msg}");
                }
                other => panic!("expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn skips_ranges_and_empty_nodes_with_warnings() {
        let text = "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n\
                    1\tdo\t_\t_\t_\t_\t0\troot\t_\t_\n\
                    2\tn't\t_\t_\t_\t_\t1\tadvmod\t_\t_\n\
                    2.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n\n\
                    1\tok\t_\t_\t_\t_\t0\troot\t_\t_\n";
        let parsed = parse_conllu_with(text, &ParseOptions::default()).unwrap();
        assert_eq!(parsed.trees.len(), 2);
        assert_eq!(parsed.trees[0].len(), 2);
        assert_eq!(parsed.warnings.len(), 2);
    }

    #[test]
    fn children_domain() {
        let t = &parse_conllu(SAMPLE_CONLLU).unwrap()[0];
        assert!(matches!(t.children(0), Err(Error::InvalidNode { .. })));
        assert!(t.children(6).is_err());
        assert!(t.children(5).unwrap().is_empty());
    }

    #[test]
    fn validate_reports_cycles_and_dangling_heads() {
        let toks = vec![
            Token::new(1, "a", 0),
            Token::new(2, "b", 3),
            Token::new(3, "c", 2),
        ];
        let v = validate(&toks);
        assert!(v.contains(&Violation::Cycle(vec![2, 3])));
        assert_eq!(v[0].to_string(), "cycle through tokens {2,3}");

        let toks = vec![Token::new(1, "a", 0), Token::new(2, "b", 7)];
        let v = validate(&toks);
        assert_eq!(v, vec![Violation::DanglingHead { token: 2, head: 7 }]);
        assert!(v[0].to_string().starts_with("dangling head"));

        assert!(validate(&[Token::new(1, "a", 1)]).contains(&Violation::SelfHead(1)));
    }

    #[test]
    fn punct_is_kept_unless_dropped() {
        let text = "1\twho\t_\t_\t_\t_\t0\troot\t_\t_\n\
                    2\truns\t_\t_\t_\t_\t1\tacl\t_\t_\n\
                    3\t?\t_\t_\t_\t_\t1\tpunct\t_\t_\n";
        assert_eq!(parse_conllu(text).unwrap()[0].len(), 3);
        let dropped = parse_conllu_with(text, &ParseOptions { drop_punct: true }).unwrap();
        assert_eq!(dropped.trees[0].forms(), ["who", "runs"]);
    }

    #[test]
    fn duplicate_forms_are_distinct_nodes() {
        let t = DependencyTree::from_heads(&["the", "cat", "the"], &[2, 0, 2]).unwrap();
        assert_eq!(t.children(2).unwrap(), &[1, 3]);
    }
}
