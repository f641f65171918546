//! Textual surface form of queries.
//!
//! Grammar, by example (`up`):
//!
//! ```text
//! q =?d : ∃ c : (Rel_1(A, c) ∨ Rel_2(B, c)) ∧ Rel_3(c, d)
//! ```
//!
//! A quantifier prefix names the free variable (`?d`) and any bound
//! variables; atoms are `relation(arg, arg)` with constants written as
//! entity labels. ASCII fallbacks `&`, `|`, `!`, `exists` are accepted for
//! `∧`, `∨`, `¬`, `∃`. Atoms are printed in the raw direction of the
//! underlying fact, so an inverse-direction edge shows up with swapped
//! argument order rather than a marker on the relation.
//!
//! Constants that could be mistaken for variables (single lowercase
//! letters) or that contain `,`/`(`/`)`/`"` are printed double-quoted;
//! the parser accepts quotes around any constant.

use crate::error::{Error, Result};
use crate::kg::{DirectedRelation, Direction, KnowledgeGraph};
use crate::patterns::{self, PatternTag, SlotTerm, TemplateAtom, ALL_PATTERNS};

use super::{Bindings, FolQuery};

/// Renders `q` in the canonical surface form.
pub fn format_fol(g: &KnowledgeGraph, q: &FolQuery) -> String {
    let tag = q.pattern();
    let atoms = patterns::pattern_atoms(tag);
    let bound = patterns::bound_vars(tag);
    let free = patterns::free_var(tag);

    let term = |t: SlotTerm| -> String {
        match t {
            SlotTerm::Free => free.to_string(),
            SlotTerm::Bound(i) => bound[i].to_string(),
            SlotTerm::Anchor(slot) => quote_label(g.entity_label(q.bindings().anchors[slot])),
        }
    };
    let atom_text = |a: &TemplateAtom| -> String {
        let dr = q.bindings().relations[a.rel_slot];
        let rel = quote_relation(g.relation_label(dr.relation));
        let (first, second) = match dr.direction {
            Direction::Forward => (term(a.src), term(a.dst)),
            Direction::Inverse => (term(a.dst), term(a.src)),
        };
        let neg = if a.negated { "¬" } else { "" };
        format!("{neg}{rel}({first}, {second})")
    };

    let mut body = String::new();
    let union_atoms: Vec<&TemplateAtom> = atoms.iter().filter(|a| a.in_union).collect();
    let plain_atoms: Vec<&TemplateAtom> = atoms.iter().filter(|a| !a.in_union).collect();
    if union_atoms.is_empty() {
        body = plain_atoms
            .iter()
            .map(|a| atom_text(a))
            .collect::<Vec<_>>()
            .join(" ∧ ");
    } else {
        let disjunction = union_atoms
            .iter()
            .map(|a| atom_text(a))
            .collect::<Vec<_>>()
            .join(" ∨ ");
        if plain_atoms.is_empty() {
            body = disjunction;
        } else {
            body.push('(');
            body.push_str(&disjunction);
            body.push(')');
            for a in &plain_atoms {
                body.push_str(" ∧ ");
                body.push_str(&atom_text(a));
            }
        }
    }

    let prefix = if bound.is_empty() {
        String::new()
    } else {
        let vars: Vec<String> = bound.iter().map(char::to_string).collect();
        format!("∃ {} : ", vars.join(", "))
    };
    format!("q =?{free} : {prefix}{body}")
}

fn quote_label(label: &str) -> String {
    let single_lowercase =
        label.len() == 1 && label.chars().next().is_some_and(|c| c.is_ascii_lowercase());
    let needs_quotes = label.is_empty()
        || single_lowercase
        || label != label.trim()
        || label.chars().any(|c| matches!(c, ',' | '(' | ')' | '"'));
    if needs_quotes {
        quoted(label)
    } else {
        label.to_string()
    }
}

/// Relation names are quoted when they would confuse the atom scanner:
/// parentheses or quotes anywhere, a leading negation marker, or a shape
/// that reads as the existential keyword.
fn quote_relation(label: &str) -> String {
    let needs_quotes = label.is_empty()
        || label != label.trim()
        || label.chars().any(|c| matches!(c, '(' | ')' | '"'))
        || label.starts_with('¬')
        || label.starts_with('!')
        || label.starts_with('∃')
        || label == "exists";
    if needs_quotes {
        quoted(label)
    } else {
        label.to_string()
    }
}

fn quoted(text: &str) -> String {
    format!("\"{}\"", text.replace('\\', "\\\\").replace('"', "\\\""))
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum RawTerm {
    Quoted(String),
    Bare(String),
}

#[derive(Debug, Clone)]
struct RawAtom {
    negated: bool,
    in_union: bool,
    relation: String,
    args: [RawTerm; 2],
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor { text, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.text.len()
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    /// Like [`eat`], but only at a word boundary (keywords must not
    /// swallow the head of an identifier-like relation name).
    ///
    /// [`eat`]: Cursor::eat
    fn eat_keyword(&mut self, word: &str) -> bool {
        self.skip_ws();
        let rest = self.rest();
        if !rest.starts_with(word) {
            return false;
        }
        let boundary = rest[word.len()..]
            .chars()
            .next()
            .is_none_or(|c| !(c.is_ascii_alphanumeric() || c == '_'));
        if boundary {
            self.pos += word.len();
        }
        boundary
    }

    fn expect(&mut self, token: &str) -> Result<()> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.error(format!("expected {token:?}")))
        }
    }

    fn error(&self, message: String) -> Error {
        Error::FolSyntax {
            position: self.pos,
            message,
        }
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let rest = self.rest();
        let end = rest
            .char_indices()
            .find(|(_, c)| !(c.is_ascii_alphanumeric() || *c == '_'))
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        if end == 0 {
            return Err(self.error("expected an identifier".into()));
        }
        let ident = rest[..end].to_string();
        self.pos += end;
        Ok(ident)
    }

    /// Reads a double-quoted string starting at the cursor.
    fn quoted(&mut self) -> Result<String> {
        self.pos += 1;
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '\\' => match chars.next() {
                    Some((_, escaped)) => out.push(escaped),
                    None => return Err(self.error("unterminated escape in quoted text".into())),
                },
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                other => out.push(other),
            }
        }
        Err(self.error("unterminated quoted text".into()))
    }

    /// Term inside an atom: quoted string or raw text up to `,` / `)`.
    fn term(&mut self) -> Result<RawTerm> {
        self.skip_ws();
        if self.peek() == Some('"') {
            self.quoted().map(RawTerm::Quoted)
        } else {
            let rest = self.rest();
            let end = rest
                .char_indices()
                .find(|(_, c)| matches!(c, ',' | ')' | '('))
                .map(|(i, _)| i)
                .ok_or_else(|| self.error("unterminated atom argument".into()))?;
            let raw = rest[..end].trim();
            if raw.is_empty() {
                return Err(self.error("empty atom argument".into()));
            }
            let raw = raw.to_string();
            self.pos += end;
            Ok(RawTerm::Bare(raw))
        }
    }

    fn atom(&mut self, in_union: bool) -> Result<RawAtom> {
        self.skip_ws();
        let negated = self.eat("¬") || self.eat("!");
        self.skip_ws();
        let relation = if self.peek() == Some('"') {
            let quoted = self.quoted()?;
            self.skip_ws();
            quoted
        } else {
            let rest = self.rest();
            let open = rest
                .find('(')
                .ok_or_else(|| self.error("expected a relation atom `rel(arg, arg)`".into()))?;
            let relation = rest[..open].trim().to_string();
            self.pos += open;
            relation
        };
        if relation.is_empty() {
            return Err(self.error("missing relation name before `(`".into()));
        }
        self.expect("(")?;
        let a = self.term()?;
        self.expect(",")?;
        let b = self.term()?;
        self.expect(")")?;
        Ok(RawAtom {
            negated,
            in_union,
            relation,
            args: [a, b],
        })
    }
}

/// Parses the surface form into an instantiated query over `g`.
///
/// Entity and relation labels must resolve in `g`; the atom structure must
/// match one of the 14 catalogued shapes.
pub fn parse_fol(g: &KnowledgeGraph, text: &str) -> Result<FolQuery> {
    let mut cur = Cursor::new(text);
    cur.expect("q")?;
    cur.expect("=")?;
    cur.expect("?")?;
    let free = cur.ident()?;
    cur.expect(":")?;

    let mut declared: Vec<String> = Vec::new();
    cur.skip_ws();
    if cur.eat("∃") || cur.eat_keyword("exists") {
        loop {
            declared.push(cur.ident()?);
            cur.skip_ws();
            if !cur.eat(",") {
                break;
            }
        }
        cur.expect(":")?;
    }

    // Body: conjunction of groups, or a single top-level disjunction.
    let mut atoms: Vec<RawAtom> = Vec::new();
    parse_group(&mut cur, &mut atoms)?;
    loop {
        cur.skip_ws();
        if cur.at_end() {
            break;
        }
        if cur.eat("∧") || cur.eat("&") {
            parse_group(&mut cur, &mut atoms)?;
        } else if cur.eat("∨") || cur.eat("|") {
            if atoms.len() != 1 || atoms[0].negated {
                return Err(cur.error("disjunction must cover exactly two plain atoms".into()));
            }
            atoms[0].in_union = true;
            let second = cur.atom(true)?;
            if second.negated {
                return Err(cur.error("negation inside a disjunction".into()));
            }
            atoms.push(second);
            if !cur.at_end() {
                return Err(cur.error("unexpected trailing input after disjunction".into()));
            }
            break;
        } else {
            return Err(cur.error("expected a connective".into()));
        }
    }

    classify_and_match(g, &free, &declared, &atoms)
}

fn parse_group(cur: &mut Cursor<'_>, atoms: &mut Vec<RawAtom>) -> Result<()> {
    cur.skip_ws();
    if cur.eat("(") {
        let first = cur.atom(true)?;
        cur.skip_ws();
        if !(cur.eat("∨") || cur.eat("|")) {
            return Err(cur.error("parenthesized group must be a disjunction".into()));
        }
        let second = cur.atom(true)?;
        cur.expect(")")?;
        if first.negated || second.negated {
            return Err(cur.error("negation inside a disjunction".into()));
        }
        atoms.push(first);
        atoms.push(second);
        Ok(())
    } else {
        let atom = cur.atom(false)?;
        atoms.push(atom);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum MatchTerm {
    Var(String),
    Const(String),
}

#[derive(Debug, Clone)]
struct MatchAtom {
    negated: bool,
    in_union: bool,
    relation: String,
    args: [MatchTerm; 2],
}

fn classify_and_match(
    g: &KnowledgeGraph,
    free: &str,
    declared: &[String],
    atoms: &[RawAtom],
) -> Result<FolQuery> {
    // Undeclared single lowercase letters recurring across atoms are read
    // as bound variables (the catalogued 2p form omits its quantifier).
    let mut bare_counts: Vec<(&str, usize)> = Vec::new();
    for atom in atoms {
        for arg in &atom.args {
            if let RawTerm::Bare(s) = arg {
                match bare_counts.iter_mut().find(|(l, _)| l == s) {
                    Some((_, n)) => *n += 1,
                    None => bare_counts.push((s, 1)),
                }
            }
        }
    }
    let is_var = |term: &RawTerm| -> Option<String> {
        let RawTerm::Bare(s) = term else { return None };
        if s == free || declared.iter().any(|d| d == s) {
            return Some(s.clone());
        }
        let single = s.len() == 1 && s.chars().next().is_some_and(|c| c.is_ascii_lowercase());
        let recurring = bare_counts.iter().any(|(l, n)| l == s && *n >= 2);
        (single && recurring).then(|| s.clone())
    };

    let match_atoms: Vec<MatchAtom> = atoms
        .iter()
        .map(|a| MatchAtom {
            negated: a.negated,
            in_union: a.in_union,
            relation: a.relation.clone(),
            args: [
                match is_var(&a.args[0]) {
                    Some(v) => MatchTerm::Var(v),
                    None => MatchTerm::Const(raw_text(&a.args[0])),
                },
                match is_var(&a.args[1]) {
                    Some(v) => MatchTerm::Var(v),
                    None => MatchTerm::Const(raw_text(&a.args[1])),
                },
            ],
        })
        .collect();

    for tag in ALL_PATTERNS {
        if let Some((anchors, relations)) = try_match(tag, &match_atoms, free, declared) {
            let anchors = anchors
                .into_iter()
                .map(|label| {
                    g.entity_id(&label).ok_or(Error::UnknownLabel {
                        kind: "entity",
                        label,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let relations = relations
                .into_iter()
                .map(|(label, direction)| {
                    g.relation_id(&label)
                        .map(|relation| DirectedRelation {
                            relation,
                            direction,
                        })
                        .ok_or(Error::UnknownLabel {
                            kind: "relation",
                            label,
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            return FolQuery::new(tag, Bindings { anchors, relations });
        }
    }
    Err(Error::InvalidQuery {
        reason: "formula matches no catalogued pattern shape".into(),
    })
}

fn raw_text(t: &RawTerm) -> String {
    match t {
        RawTerm::Quoted(s) | RawTerm::Bare(s) => s.clone(),
    }
}

type SlotAssignment = (Vec<String>, Vec<(String, Direction)>);

/// Backtracking alignment of parsed atoms against a pattern's template.
fn try_match(
    tag: PatternTag,
    atoms: &[MatchAtom],
    free: &str,
    declared: &[String],
) -> Option<SlotAssignment> {
    let templates = patterns::pattern_atoms(tag);
    if templates.len() != atoms.len() {
        return None;
    }

    struct State {
        used: Vec<bool>,
        bound: Vec<Option<String>>,
        anchors: Vec<Option<String>>,
        relations: Vec<Option<(String, Direction)>>,
    }

    fn term_matches(
        slot: SlotTerm,
        term: &MatchTerm,
        free: &str,
        state: &mut State,
    ) -> Option<Vec<(usize, bool)>> {
        // Returns the undo list of bound-slot writes made by this match.
        match (slot, term) {
            (SlotTerm::Free, MatchTerm::Var(v)) => (v == free).then(Vec::new),
            (SlotTerm::Bound(k), MatchTerm::Var(v)) => {
                if v == free {
                    return None;
                }
                match &state.bound[k] {
                    Some(existing) => (existing == v).then(Vec::new),
                    None => {
                        if state.bound.iter().flatten().any(|b| b == v) {
                            return None;
                        }
                        state.bound[k] = Some(v.clone());
                        Some(vec![(k, true)])
                    }
                }
            }
            (SlotTerm::Anchor(s), MatchTerm::Const(label)) => match &state.anchors[s] {
                Some(existing) => (existing == label).then(Vec::new),
                None => {
                    state.anchors[s] = Some(label.clone());
                    Some(vec![(s, false)])
                }
            },
            _ => None,
        }
    }

    fn undo(state: &mut State, writes: &[(usize, bool)]) {
        for &(idx, is_bound) in writes {
            if is_bound {
                state.bound[idx] = None;
            } else {
                state.anchors[idx] = None;
            }
        }
    }

    fn solve(
        templates: &[TemplateAtom],
        atoms: &[MatchAtom],
        free: &str,
        state: &mut State,
        depth: usize,
    ) -> bool {
        if depth == templates.len() {
            return true;
        }
        let t = templates[depth];
        for (j, atom) in atoms.iter().enumerate() {
            if state.used[j] || atom.negated != t.negated || atom.in_union != t.in_union {
                continue;
            }
            for direction in [Direction::Forward, Direction::Inverse] {
                let (src_arg, dst_arg) = match direction {
                    Direction::Forward => (&atom.args[0], &atom.args[1]),
                    Direction::Inverse => (&atom.args[1], &atom.args[0]),
                };
                let Some(w1) = term_matches(t.src, src_arg, free, state) else {
                    continue;
                };
                let Some(w2) = term_matches(t.dst, dst_arg, free, state) else {
                    undo(state, &w1);
                    continue;
                };
                state.used[j] = true;
                state.relations[t.rel_slot] = Some((atom.relation.clone(), direction));
                if solve(templates, atoms, free, state, depth + 1) {
                    return true;
                }
                state.relations[t.rel_slot] = None;
                state.used[j] = false;
                undo(state, &w2);
                undo(state, &w1);
            }
        }
        false
    }

    let mut state = State {
        used: vec![false; atoms.len()],
        bound: vec![None; patterns::bound_vars(tag).len()],
        anchors: vec![None; patterns::anchor_count(tag)],
        relations: vec![None; patterns::relation_count(tag)],
    };
    if !solve(&templates, atoms, free, &mut state, 0) {
        return None;
    }
    // Every declared bound variable must actually occur in the formula.
    for d in declared {
        if !state.bound.iter().flatten().any(|b| b == d) {
            return None;
        }
    }
    Some((
        state.anchors.into_iter().map(Option::unwrap).collect(),
        state.relations.into_iter().map(Option::unwrap).collect(),
    ))
}
