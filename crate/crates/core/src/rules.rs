//! Text format for rule bases (`.frl`), validation and the default generator.
//!
//! One rule per line:
//!
//! ```text
//! IF C IS NB AND N IS PB AND G IS NB THEN U IS PB   # comment
//! ```
//!
//! Keywords, variable names and labels are case-insensitive. Parsed rules get
//! positional ids `R1`, `R2`, ... in file order.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzzy::{FuzzyVariable, InputVar, Rule, RuleBase, Term};

/// The eight bundled example rules. R3 and R8 share an antecedent triple.
pub const EXAMPLE_RULES_FRL: &str = include_str!("../assets/example_rules.frl");

pub const DEFAULT_MU1: f64 = 0.6;
pub const DEFAULT_MU2: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    Syntax,
    UnknownLabel,
    DuplicateAntecedentTriple,
    CoverageGap,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiagnosticKind::Syntax => "syntax",
            DiagnosticKind::UnknownLabel => "unknown-label",
            DiagnosticKind::DuplicateAntecedentTriple => "duplicate-antecedent-triple",
            DiagnosticKind::CoverageGap => "coverage-gap",
        })
    }
}

/// `line`/`column` are 1-based; coverage gaps have no source position and use 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}: {}", self.line, self.column, self.kind, self.message)
    }
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (byte, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(byte),
            (true, Some(s)) => {
                tokens.push(Token {
                    text: &line[s..byte],
                    column: line[..s].chars().count() + 1,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: &line[s..],
            column: line[..s].chars().count() + 1,
        });
    }
    tokens
}

// Expected token shape; `None` slots are labels.
const SHAPE: [Option<&str>; 16] = [
    Some("IF"),
    Some("C"),
    Some("IS"),
    None,
    Some("AND"),
    Some("N"),
    Some("IS"),
    None,
    Some("AND"),
    Some("G"),
    Some("IS"),
    None,
    Some("THEN"),
    Some("U"),
    Some("IS"),
    None,
];

fn parse_line(line_no: usize, text: &str, diagnostics: &mut Vec<Diagnostic>) -> Option<[Term; 4]> {
    let tokens = tokenize(text);
    let end_column = text.chars().count() + 1;
    let mut labels = [Term::ZO; 4];
    let mut ok = true;
    for (slot, expected) in SHAPE.iter().enumerate() {
        let Some(tok) = tokens.get(slot) else {
            diagnostics.push(Diagnostic {
                line: line_no,
                column: end_column,
                kind: DiagnosticKind::Syntax,
                message: match expected {
                    Some(kw) => format!("unexpected end of rule, expected `{kw}`"),
                    None => "unexpected end of rule, expected a label".to_string(),
                },
            });
            return None;
        };
        match expected {
            Some(kw) if !tok.text.eq_ignore_ascii_case(kw) => {
                diagnostics.push(Diagnostic {
                    line: line_no,
                    column: tok.column,
                    kind: DiagnosticKind::Syntax,
                    message: format!("expected `{kw}`, found `{}`", tok.text),
                });
                return None;
            }
            Some(_) => {}
            None => match tok.text.parse::<Term>() {
                Ok(term) => labels[slot / 4] = term,
                Err(_) => {
                    diagnostics.push(Diagnostic {
                        line: line_no,
                        column: tok.column,
                        kind: DiagnosticKind::UnknownLabel,
                        message: format!(
                            "unknown label `{}`, expected one of NB NS ZO PS PB",
                            tok.text
                        ),
                    });
                    ok = false;
                }
            },
        }
    }
    if let Some(extra) = tokens.get(SHAPE.len()) {
        diagnostics.push(Diagnostic {
            line: line_no,
            column: extra.column,
            kind: DiagnosticKind::Syntax,
            message: format!("unexpected trailing token `{}`", extra.text),
        });
        return None;
    }
    ok.then_some(labels)
}

/// Parses a rule document, collecting every syntax and label diagnostic.
pub fn parse_rulebase(src: &str) -> std::result::Result<RuleBase, Vec<Diagnostic>> {
    let mut rules = Vec::new();
    let mut diagnostics = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let line_no = i + 1;
        let body = raw.strip_suffix('\r').unwrap_or(raw);
        let body = match body.find('#') {
            Some(pos) => &body[..pos],
            None => body,
        };
        if body.trim().is_empty() {
            continue;
        }
        if let Some([c, n, g, u]) = parse_line(line_no, body, &mut diagnostics) {
            let mut rule = Rule::new(format!("R{}", rules.len() + 1), c, n, g, u);
            rule.line = line_no;
            rules.push(rule);
        }
    }
    if diagnostics.is_empty() {
        Ok(RuleBase::new(rules))
    } else {
        Err(diagnostics)
    }
}

/// [`parse_rulebase`] with the diagnostics wrapped in [`Error::Parse`].
pub fn parse_str(src: &str) -> Result<RuleBase> {
    parse_rulebase(src).map_err(Error::Parse)
}

fn all_triples() -> impl Iterator<Item = [Term; 3]> {
    Term::ALL.into_iter().flat_map(|c| {
        Term::ALL
            .into_iter()
            .flat_map(move |n| Term::ALL.into_iter().map(move |g| [c, n, g]))
    })
}

fn triple_str(t: &[Term; 3]) -> String {
    format!("C={} N={} G={}", t[0], t[1], t[2])
}

fn rule_position(rule: &Rule, ordinal: usize) -> usize {
    if rule.line > 0 {
        rule.line
    } else {
        ordinal + 1
    }
}

/// Duplicate antecedent triples always; uncovered triples too when `strict`.
pub fn validate(rulebase: &RuleBase, strict: bool) -> Vec<Diagnostic> {
    let mut diagnostics = Vec::new();
    let mut first_seen: [[[Option<usize>; 5]; 5]; 5] = Default::default();
    for (ordinal, rule) in rulebase.iter().enumerate() {
        let [c, n, g] = rule.antecedents.map(Term::index);
        let line = rule_position(rule, ordinal);
        match first_seen[c][n][g] {
            Some(prev) => diagnostics.push(Diagnostic {
                line,
                column: 1,
                kind: DiagnosticKind::DuplicateAntecedentTriple,
                message: format!(
                    "rule {} repeats antecedents {} of rule {} (consequents {} vs {})",
                    rule.id,
                    triple_str(&rule.antecedents),
                    rulebase.rules()[prev].id,
                    rulebase.rules()[prev].consequent,
                    rule.consequent
                ),
            }),
            None => first_seen[c][n][g] = Some(ordinal),
        }
    }
    if strict {
        for t in all_triples() {
            let [c, n, g] = t.map(Term::index);
            if first_seen[c][n][g].is_none() {
                diagnostics.push(Diagnostic {
                    line: 0,
                    column: 0,
                    kind: DiagnosticKind::CoverageGap,
                    message: format!("no rule for {}", triple_str(&t)),
                });
            }
        }
    }
    diagnostics
}

/// Index of the peak nearest to `value`; exact midpoints go to the lower peak.
fn nearest_term(variable: &FuzzyVariable, value: f64) -> Term {
    const TIE: f64 = 1e-9;
    let mut best = Term::NB;
    let mut best_dist = f64::INFINITY;
    for term in Term::ALL {
        let d = (variable.peak(term) - value).abs();
        if d < best_dist - TIE {
            best = term;
            best_dist = d;
        }
    }
    best
}

fn normalized_peak(variable: &FuzzyVariable, term: Term) -> f64 {
    let uni = variable.universe();
    (variable.peak(term) - uni.lower()) / uni.width()
}

/// Full 125-rule base: each consequent is the `U` peak nearest to
/// `mu1*C + mu2*N + (1 - mu1 - mu2)*G` evaluated at the antecedent peaks
/// (rescaled to [0, 1]); `overrides` then replace rules by antecedent triple.
pub fn generate_default_rulebase(mu1: f64, mu2: f64, overrides: &[Rule]) -> Result<RuleBase> {
    let valid = |w: f64| w.is_finite() && w >= 0.0;
    if !valid(mu1) || !valid(mu2) || mu1 + mu2 > 1.0 + 1e-12 {
        return Err(Error::InvalidInput(format!(
            "weights need mu1, mu2 >= 0 and mu1 + mu2 <= 1, got ({mu1}, {mu2})"
        )));
    }
    let mu3 = (1.0 - mu1 - mu2).max(0.0);
    let vars = [
        FuzzyVariable::confidence(),
        FuzzyVariable::correlation(),
        FuzzyVariable::position(),
    ];
    let output = FuzzyVariable::effectiveness();
    let uni = output.universe();
    let rules = all_triples()
        .enumerate()
        .map(|(k, t)| {
            let consequent = match overrides.iter().rev().find(|r| r.antecedents == t) {
                Some(o) => o.consequent,
                None => {
                    let [c, n, g] = [0, 1, 2].map(|i| normalized_peak(&vars[i], t[i]));
                    let combined = mu1 * c + mu2 * n + mu3 * g;
                    nearest_term(&output, uni.lower() + combined * uni.width())
                }
            };
            Rule::new(format!("R{}", k + 1), t[0], t[1], t[2], consequent)
        })
        .collect();
    Ok(RuleBase::new(rules))
}

/// Example rules used as overrides for the shipped base: R1 through R7.
/// R8 is dropped because it contradicts R3 on the same antecedents.
pub fn example_overrides() -> Vec<Rule> {
    let table = parse_str(EXAMPLE_RULES_FRL).expect("bundled rule table parses");
    table.rules().iter().take(7).cloned().collect()
}

/// Generated base with weights 0.6 / 0.2 and the example rules applied.
pub fn shipped_rulebase() -> RuleBase {
    generate_default_rulebase(DEFAULT_MU1, DEFAULT_MU2, &example_overrides())
        .expect("default weights are valid")
}

pub fn format_rule(rule: &Rule) -> String {
    format!(
        "IF C IS {} AND N IS {} AND G IS {} THEN U IS {}",
        rule.antecedent(InputVar::C),
        rule.antecedent(InputVar::N),
        rule.antecedent(InputVar::G),
        rule.consequent
    )
}

/// One canonical line per rule, LF terminated.
pub fn serialize(rulebase: &RuleBase) -> String {
    let mut out = String::new();
    for rule in rulebase.iter() {
        out.push_str(&format_rule(rule));
        out.push('\n');
    }
    out
}
