//! Mamdani inference over five-level triangular fuzzy variables.
//!
//! Three antecedent variables (confidence `C`, adjacent-action correlation `N`,
//! position score `G`) drive rules whose consequent is the effectiveness `U`.
//! Activation is the minimum of the antecedent degrees, each consequent set is
//! clipped at its strongest activation, the clipped sets are combined by
//! pointwise maximum and the result is reduced to a scalar by its centroid on a
//! uniform sample grid.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted sample grid for the output universe.
pub const MIN_RESOLUTION: usize = 1001;
pub const DEFAULT_RESOLUTION: usize = 2001;

/// Linguistic term of the five-level partition, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    NB,
    NS,
    ZO,
    PS,
    PB,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::NB, Term::NS, Term::ZO, Term::PS, Term::PB];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Term> {
        Term::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Term::NB => "NB",
            Term::NS => "NS",
            Term::ZO => "ZO",
            Term::PS => "PS",
            Term::PB => "PB",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Term::ALL
            .iter()
            .copied()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

/// Antecedent variable of a rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InputVar {
    C,
    N,
    G,
}

impl InputVar {
    pub const ALL: [InputVar; 3] = [InputVar::C, InputVar::N, InputVar::G];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            InputVar::C => "C",
            InputVar::N => "N",
            InputVar::G => "G",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Universe {
    name: String,
    lower: f64,
    upper: f64,
}

impl Universe {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Result<Self> {
        let name = name.into();
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidInput(format!(
                "universe `{name}` needs finite bounds with lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { name, lower, upper })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lower, self.upper)
    }
}

/// Triangular membership function; a shouldered side stays at 1 beyond the peak.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipFunction {
    term: Term,
    left: f64,
    peak: f64,
    right: f64,
    left_shoulder: bool,
    right_shoulder: bool,
}

impl MembershipFunction {
    pub fn triangle(term: Term, left: f64, peak: f64, right: f64) -> Result<Self> {
        Self::shouldered(term, left, peak, right, false, false)
    }

    pub fn shouldered(
        term: Term,
        left: f64,
        peak: f64,
        right: f64,
        left_shoulder: bool,
        right_shoulder: bool,
    ) -> Result<Self> {
        if !(left.is_finite() && peak.is_finite() && right.is_finite()) || left > peak || peak > right
        {
            return Err(Error::InvalidInput(format!(
                "{term}: feet must satisfy left <= peak <= right, got ({left}, {peak}, {right})"
            )));
        }
        Ok(Self {
            term,
            left,
            peak,
            right,
            left_shoulder,
            right_shoulder,
        })
    }

    pub fn term(&self) -> Term {
        self.term
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn feet(&self) -> (f64, f64) {
        (self.left, self.right)
    }

    pub fn degree(&self, x: f64) -> f64 {
        if x < self.peak {
            if self.left_shoulder {
                1.0
            } else if x <= self.left {
                0.0
            } else {
                (x - self.left) / (self.peak - self.left)
            }
        } else if x > self.peak {
            if self.right_shoulder {
                1.0
            } else if x >= self.right {
                0.0
            } else {
                (self.right - x) / (self.right - self.peak)
            }
        } else {
            1.0
        }
    }
}

/// A universe partitioned by exactly five membership functions, NB through PB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzyVariable {
    universe: Universe,
    sets: [MembershipFunction; 5],
}

impl FuzzyVariable {
    pub fn new(universe: Universe, sets: [MembershipFunction; 5]) -> Result<Self> {
        let name = universe.name().to_string();
        for (k, set) in sets.iter().enumerate() {
            if set.term.index() != k {
                return Err(Error::InvalidInput(format!(
                    "{name}: set {k} is {}, expected canonical order NB NS ZO PS PB",
                    set.term
                )));
            }
        }
        for pair in sets.windows(2) {
            if pair[0].peak >= pair[1].peak {
                return Err(Error::InvalidInput(format!(
                    "{name}: peaks of {} and {} are not strictly increasing",
                    pair[0].term, pair[1].term
                )));
            }
            if !pair[0].right_shoulder && !pair[1].left_shoulder && pair[1].left >= pair[0].right {
                return Err(Error::InvalidInput(format!(
                    "{name}: gap in coverage between {} and {}",
                    pair[0].term, pair[1].term
                )));
            }
        }
        let (first, last) = (&sets[0], &sets[4]);
        if !first.left_shoulder && first.peak > universe.lower() {
            return Err(Error::InvalidInput(format!(
                "{name}: lower edge of the universe is not covered"
            )));
        }
        if !last.right_shoulder && last.peak < universe.upper() {
            return Err(Error::InvalidInput(format!(
                "{name}: upper edge of the universe is not covered"
            )));
        }
        Ok(Self { universe, sets })
    }

    /// Evenly spaced peaks at the universe bounds and quarter points, feet on
    /// the neighbouring peaks, NB and PB shouldered toward the edges.
    pub fn five_level(universe: Universe) -> Self {
        let lo = universe.lower();
        let step = universe.width() / 4.0;
        let peaks: Vec<f64> = (0..5).map(|k| lo + step * k as f64).collect();
        let sets = Term::ALL.map(|term| {
            let k = term.index();
            let peak = if k == 4 { universe.upper() } else { peaks[k] };
            let left = if k == 0 { peak } else { peaks[k - 1] };
            let right = if k == 4 { peak } else { peaks[k + 1] };
            MembershipFunction {
                term,
                left,
                peak,
                right,
                left_shoulder: k == 0,
                right_shoulder: k == 4,
            }
        });
        Self { universe, sets }
    }

    /// Confidence `C` on [0, 1].
    pub fn confidence() -> Self {
        Self::five_level(Universe::new("C", 0.0, 1.0).expect("static bounds"))
    }

    /// Adjacent-action correlation `N` on [-1, 1].
    pub fn correlation() -> Self {
        Self::five_level(Universe::new("N", -1.0, 1.0).expect("static bounds"))
    }

    /// Position score `G` on [0, 1].
    pub fn position() -> Self {
        Self::five_level(Universe::new("G", 0.0, 1.0).expect("static bounds"))
    }

    /// Effectiveness `U` on [0, 1].
    pub fn effectiveness() -> Self {
        Self::five_level(Universe::new("U", 0.0, 1.0).expect("static bounds"))
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn set(&self, term: Term) -> &MembershipFunction {
        &self.sets[term.index()]
    }

    pub fn sets(&self) -> &[MembershipFunction; 5] {
        &self.sets
    }

    pub fn peak(&self, term: Term) -> f64 {
        self.sets[term.index()].peak
    }

    pub fn fuzzify(&self, x: f64) -> Result<FuzzyValue> {
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!(
                "cannot fuzzify non-finite value {x} on {}",
                self.universe.name()
            )));
        }
        let x = self.universe.clamp(x);
        Ok(FuzzyValue {
            degrees: self.sets.each_ref().map(|s| s.degree(x)),
        })
    }
}

/// Membership degrees of one crisp value, indexed by [`Term`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzyValue {
    degrees: [f64; 5],
}

impl FuzzyValue {
    pub fn from_degrees(degrees: [f64; 5]) -> Result<Self> {
        if degrees.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::InvalidInput(format!(
                "membership degrees must lie in [0, 1], got {degrees:?}"
            )));
        }
        Ok(Self { degrees })
    }

    pub fn degree(&self, term: Term) -> f64 {
        self.degrees[term.index()]
    }

    pub fn degrees(&self) -> &[f64; 5] {
        &self.degrees
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    /// Indexed by [`InputVar`].
    pub antecedents: [Term; 3],
    pub consequent: Term,
    /// 1-based source line, 0 when the rule was not parsed from text.
    #[serde(default)]
    pub line: usize,
}

impl Rule {
    pub fn new(id: impl Into<String>, c: Term, n: Term, g: Term, consequent: Term) -> Self {
        Self {
            id: id.into(),
            antecedents: [c, n, g],
            consequent,
            line: 0,
        }
    }

    pub fn antecedent(&self, var: InputVar) -> Term {
        self.antecedents[var.index()]
    }
}

// Source position is presentation metadata, not part of rule identity.
impl PartialEq for Rule {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.antecedents == other.antecedents
            && self.consequent == other.consequent
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleBase {
    rules: Vec<Rule>,
}

impl RuleBase {
    pub fn new(rules: Vec<Rule>) -> Self {
        Self { rules }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn push(&mut self, rule: Rule) {
        self.rules.push(rule);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter()
    }

    pub fn find(&self, antecedents: [Term; 3]) -> Option<&Rule> {
        self.rules.iter().find(|r| r.antecedents == antecedents)
    }
}

/// Conjunction of the antecedent degrees (minimum).
pub fn activate(rule: &Rule, inputs: &BTreeMap<InputVar, FuzzyValue>) -> Result<f64> {
    let mut strength = 1.0_f64;
    for var in InputVar::ALL {
        let value = inputs.get(&var).ok_or_else(|| {
            Error::Contract(format!("rule {}: no input value for {}", rule.id, var.name()))
        })?;
        strength = strength.min(value.degree(rule.antecedent(var)));
    }
    Ok(strength)
}

fn activation(rule: &Rule, inputs: &[FuzzyValue; 3]) -> f64 {
    InputVar::ALL
        .iter()
        .map(|&v| inputs[v.index()].degree(rule.antecedent(v)))
        .fold(1.0, f64::min)
}

/// Aggregated output set sampled on a uniform grid over the output universe.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputSet {
    pub xs: Vec<f64>,
    pub membership: Vec<f64>,
}

impl OutputSet {
    pub fn area(&self) -> f64 {
        self.membership.iter().sum()
    }
}

/// Discrete centroid `sum(x * mu) / sum(mu)` over the sample grid.
pub fn defuzzify_centroid(set: &OutputSet) -> Result<f64> {
    let (num, den) = set
        .xs
        .iter()
        .zip(&set.membership)
        .fold((0.0, 0.0), |(n, d), (&x, &m)| (n + x * m, d + m));
    centroid(num, den)
}

/// Centroid snapped to a 1e-12 grid, so an output set symmetric about a
/// point lands on it exactly instead of a rounding error to either side.
fn centroid(num: f64, den: f64) -> Result<f64> {
    if den <= 0.0 {
        return Err(Error::NoActiveRules);
    }
    Ok((num / den * 1e12).round() / 1e12)
}

fn uniform_grid(universe: &Universe, resolution: usize) -> Vec<f64> {
    let step = universe.width() / (resolution - 1) as f64;
    (0..resolution)
        .map(|k| {
            if k + 1 == resolution {
                universe.upper()
            } else {
                universe.lower() + step * k as f64
            }
        })
        .collect()
}

/// Immutable inference engine: variables, rule base and the sampled output sets.
#[derive(Clone, Debug)]
pub struct Engine {
    inputs: [FuzzyVariable; 3],
    output: FuzzyVariable,
    rulebase: RuleBase,
    grid: Vec<f64>,
    // output set curves sampled on `grid`, indexed by Term
    curves: [Vec<f64>; 5],
}

impl Engine {
    pub fn new(
        inputs: [FuzzyVariable; 3],
        output: FuzzyVariable,
        rulebase: RuleBase,
        resolution: usize,
    ) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::InvalidInput(format!(
                "output grid needs at least {MIN_RESOLUTION} points, got {resolution}"
            )));
        }
        let grid = uniform_grid(output.universe(), resolution);
        let curves = output
            .sets()
            .each_ref()
            .map(|set| grid.iter().map(|&x| set.degree(x)).collect());
        Ok(Self {
            inputs,
            output,
            rulebase,
            grid,
            curves,
        })
    }

    /// Default universes `C`, `N`, `G`, `U` with a 2001-point output grid.
    pub fn standard(rulebase: RuleBase) -> Self {
        Self::with_resolution(rulebase, DEFAULT_RESOLUTION).expect("default resolution is valid")
    }

    pub fn with_resolution(rulebase: RuleBase, resolution: usize) -> Result<Self> {
        Self::new(
            [
                FuzzyVariable::confidence(),
                FuzzyVariable::correlation(),
                FuzzyVariable::position(),
            ],
            FuzzyVariable::effectiveness(),
            rulebase,
            resolution,
        )
    }

    pub fn input(&self, var: InputVar) -> &FuzzyVariable {
        &self.inputs[var.index()]
    }

    pub fn output(&self) -> &FuzzyVariable {
        &self.output
    }

    pub fn rulebase(&self) -> &RuleBase {
        &self.rulebase
    }

    pub fn resolution(&self) -> usize {
        self.grid.len()
    }

    pub fn fuzzify(&self, c: f64, n: f64, g: f64) -> Result<[FuzzyValue; 3]> {
        Ok([
            self.inputs[0].fuzzify(c)?,
            self.inputs[1].fuzzify(n)?,
            self.inputs[2].fuzzify(g)?,
        ])
    }

    /// Strongest activation per consequent term.
    fn clip_levels(&self, inputs: &[FuzzyValue; 3]) -> [f64; 5] {
        let mut levels = [0.0_f64; 5];
        for rule in self.rulebase.iter() {
            let slot = &mut levels[rule.consequent.index()];
            *slot = slot.max(activation(rule, inputs));
        }
        levels
    }

    fn aggregate_levels(&self, levels: &[f64; 5]) -> Result<OutputSet> {
        if levels.iter().all(|&a| a <= 0.0) {
            return Err(Error::NoActiveRules);
        }
        let membership = (0..self.grid.len())
            .map(|k| {
                levels
                    .iter()
                    .zip(&self.curves)
                    .map(|(&a, curve)| a.min(curve[k]))
                    .fold(0.0, f64::max)
            })
            .collect();
        Ok(OutputSet {
            xs: self.grid.clone(),
            membership,
        })
    }

    pub fn aggregate(&self, inputs: &BTreeMap<InputVar, FuzzyValue>) -> Result<OutputSet> {
        let mut levels = [0.0_f64; 5];
        for rule in self.rulebase.iter() {
            let slot = &mut levels[rule.consequent.index()];
            *slot = slot.max(activate(rule, inputs)?);
        }
        self.aggregate_levels(&levels)
    }

    /// Fuzzify, fire every rule, aggregate and take the centroid.
    pub fn infer(&self, c: f64, n: f64, g: f64) -> Result<f64> {
        let inputs = self.fuzzify(c, n, g)?;
        let levels = self.clip_levels(&inputs);
        if levels.iter().all(|&a| a <= 0.0) {
            return Err(Error::NoActiveRules);
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (k, &x) in self.grid.iter().enumerate() {
            let mu = levels
                .iter()
                .zip(&self.curves)
                .map(|(&a, curve)| a.min(curve[k]))
                .fold(0.0, f64::max);
            num += x * mu;
            den += mu;
        }
        centroid(num, den)
    }
}
