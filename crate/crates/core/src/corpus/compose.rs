use std::collections::{BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::negation::NegationRuleTable;
use super::{
    CorpusError, LogicalForm, Polarity, Provenance, Statement, StatementSet, CURATED_TOPICS,
    TEMPLATED_TOPICS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisjunctionStyle {
    /// Two end words for one subject, the second known to be wrong for it.
    EndWord,
    /// Two independently sampled statements.
    Independent,
}

/// Tokens that stay capitalised when a statement is embedded mid-sentence:
/// every token seen capitalised at a non-initial position in the source set.
#[derive(Debug, Clone, Default)]
pub struct ProperNounLexicon {
    tokens: HashSet<String>,
}

fn bare_token(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

impl ProperNounLexicon {
    pub fn from_set(set: &StatementSet) -> Self {
        let mut tokens = HashSet::new();
        for text in set.texts() {
            for tok in text.split_whitespace().skip(1) {
                let tok = bare_token(tok);
                if tok.chars().next().is_some_and(char::is_uppercase) {
                    tokens.insert(tok.to_string());
                }
            }
        }
        Self { tokens }
    }

    pub fn keeps_capital(&self, token: &str) -> bool {
        let tok = bare_token(token);
        // Acronyms and "I" are never lowercased.
        tok == "I" || tok.chars().skip(1).any(char::is_uppercase) || self.tokens.contains(tok)
    }
}

/// Prepares a statement for embedding: drops the final period and lowercases
/// the first letter unless it starts with a proper noun.
fn embed(text: &str, starts_with_entity: bool, lexicon: &ProperNounLexicon) -> String {
    let body = text.strip_suffix('.').unwrap_or(text);
    let first = body.split_whitespace().next().unwrap_or("");
    if starts_with_entity || lexicon.keeps_capital(first) {
        return body.to_string();
    }
    let mut chars = body.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

struct Pools {
    truthy: Vec<usize>,
    falsy: Vec<usize>,
}

impl Pools {
    fn new(set: &StatementSet) -> Self {
        let (truthy, falsy) = (0..set.len()).partition(|&i| set.statements[i].label);
        Self { truthy, falsy }
    }

    fn require(&self, dataset_id: &str, min: usize) -> Result<(), CorpusError> {
        if self.truthy.len() < min || self.falsy.len() < min {
            return Err(CorpusError::Generation(format!(
                "{dataset_id} needs at least {min} true and {min} false statements, has {} and {}",
                self.truthy.len(),
                self.falsy.len()
            )));
        }
        Ok(())
    }

    fn pool(&self, truth: bool) -> &[usize] {
        if truth {
            &self.truthy
        } else {
            &self.falsy
        }
    }
}

/// Uniform draw from `pool`, skipping `exclude` when it is a member.
fn draw(rng: &mut ChaCha8Rng, pool: &[usize], exclude: Option<usize>) -> usize {
    match exclude.and_then(|e| pool.binary_search(&e).ok()) {
        Some(pos) => {
            let k = rng.gen_range(0..pool.len() - 1);
            pool[if k >= pos { k + 1 } else { k }]
        }
        None => pool[rng.gen_range(0..pool.len())],
    }
}

fn require_affirmative_topic(set: &StatementSet) -> Result<(), CorpusError> {
    if !CURATED_TOPICS.contains(&set.dataset_id.as_str()) {
        return Err(CorpusError::Config(format!(
            "logical variants are generated from the curated topics, not {}",
            set.dataset_id
        )));
    }
    if let Some((row, s)) = set
        .statements
        .iter()
        .enumerate()
        .find(|(_, s)| s.logical_form != LogicalForm::Affirmative)
    {
        return Err(CorpusError::NotAffirmative {
            dataset_id: set.dataset_id.clone(),
            row,
            form: s.logical_form,
        });
    }
    Ok(())
}

/// Whether statement `row` of `set` begins with an entity slot.
fn entity_start(table: Option<&NegationRuleTable>, text: &str) -> bool {
    table
        .and_then(|t| t.match_affirmative(text).map(|(i, _)| i).map(|i| &t.rules[i]))
        .is_some_and(|r| r.affirmative.starts_with_slot())
}

fn independent_pairs(
    set: &StatementSet,
    n: usize,
    seed: u64,
    p_true: f64,
    connective: (&str, &str),
    suffix: &str,
    form: LogicalForm,
    combine: fn(bool, bool) -> bool,
) -> Result<StatementSet, CorpusError> {
    require_affirmative_topic(set)?;
    let pools = Pools::new(set);
    pools.require(&set.dataset_id, 2)?;
    let lexicon = ProperNounLexicon::from_set(set);
    let table = NegationRuleTable::for_dataset(&set.dataset_id);
    let out_id = format!("{}{suffix}", set.dataset_id);
    let embed_row = |i: usize| {
        let text = &set.statements[i].text;
        embed(text, entity_start(table.as_ref(), text), &lexicon)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t1 = rng.gen_bool(p_true);
        let i1 = draw(&mut rng, pools.pool(t1), None);
        let t2 = rng.gen_bool(p_true);
        let i2 = draw(&mut rng, pools.pool(t2), Some(i1));
        let (a, b) = (&set.statements[i1], &set.statements[i2]);
        out.push(Statement {
            text: format!(
                "It is the case {} that {} {} that {}.",
                connective.0,
                embed_row(i1),
                connective.1,
                embed_row(i2)
            ),
            label: combine(a.label, b.label),
            polarity: Polarity::Affirmative,
            logical_form: form,
            dataset_id: out_id.clone(),
            source_ids: vec![i1, i2],
        });
    }
    StatementSet::new(out_id, out, Provenance::Generated)
}

/// Conjunctions "It is the case both that A and that B." with each component
/// independently true with probability 1/√2, so the AND is balanced.
pub fn make_conjunctions(set: &StatementSet, n: usize, seed: u64) -> Result<StatementSet, CorpusError> {
    independent_pairs(
        set,
        n,
        seed,
        std::f64::consts::FRAC_1_SQRT_2,
        ("both", "and"),
        "_conj",
        LogicalForm::Conjunction,
        |a, b| a && b,
    )
}

/// Disjunctions "It is the case either that A or that B.".
///
/// `Independent` samples each component true with probability 1 − 1/√2.
/// `EndWord` restates one subject with two end words: the first statement is
/// true with probability 1/2, the second end word is drawn from another row
/// and is never correct for the first subject, and the two end words swap
/// places with probability 1/2.
pub fn make_disjunctions(
    set: &StatementSet,
    n: usize,
    seed: u64,
    style: DisjunctionStyle,
) -> Result<StatementSet, CorpusError> {
    let templated = TEMPLATED_TOPICS.contains(&set.dataset_id.as_str());
    match style {
        DisjunctionStyle::EndWord if !templated => Err(CorpusError::Config(format!(
            "end-word disjunctions need a templated topic, got {}",
            set.dataset_id
        ))),
        DisjunctionStyle::Independent if set.dataset_id != "facts" => Err(CorpusError::Config(format!(
            "independent disjunctions are for the facts topic, got {}",
            set.dataset_id
        ))),
        DisjunctionStyle::Independent => independent_pairs(
            set,
            n,
            seed,
            1.0 - std::f64::consts::FRAC_1_SQRT_2,
            ("either", "or"),
            "_disj",
            LogicalForm::Disjunction,
            |a, b| a || b,
        ),
        DisjunctionStyle::EndWord => end_word_disjunctions(set, n, seed),
    }
}

/// Parsed view of a templated statement: rule, subject slots, end word.
struct Parsed {
    rule: usize,
    slots: Vec<(String, String)>,
}

impl Parsed {
    fn subject(&self) -> String {
        let n = self.slots.len().saturating_sub(1);
        self.slots[..n]
            .iter()
            .map(|(_, v)| v.as_str())
            .collect::<Vec<_>>()
            .join("\u{1f}")
    }

    fn end(&self) -> &str {
        self.slots.last().map_or("", |(_, v)| v.as_str())
    }

    fn with_end(&self, end: &str) -> Vec<(String, String)> {
        let mut slots = self.slots.clone();
        if let Some(last) = slots.last_mut() {
            last.1 = end.to_string();
        }
        slots
    }
}

/// Splits a templated statement into its subject key and end word. Shared with
/// label re-evaluation in tests.
#[cfg(test)]
pub(crate) fn subject_and_end(table: &NegationRuleTable, text: &str) -> Option<(String, String)> {
    let (rule, slots) = table.match_affirmative(text)?;
    let p = Parsed { rule, slots };
    Some((p.subject(), p.end().to_string()))
}

fn end_word_disjunctions(set: &StatementSet, n: usize, seed: u64) -> Result<StatementSet, CorpusError> {
    require_affirmative_topic(set)?;
    let table = NegationRuleTable::for_dataset(&set.dataset_id)
        .ok_or_else(|| CorpusError::Config(format!("no template table for {}", set.dataset_id)))?;
    let parsed = set
        .statements
        .iter()
        .enumerate()
        .map(|(row, s)| {
            table
                .match_affirmative(&s.text)
                .map(|(rule, slots)| Parsed { rule, slots })
                .ok_or_else(|| CorpusError::UnhandledTemplate {
                    dataset_id: set.dataset_id.clone(),
                    row,
                    text: s.text.clone(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut correct: HashMap<String, BTreeSet<String>> = HashMap::new();
    for (p, s) in parsed.iter().zip(&set.statements) {
        if s.label {
            correct.entry(p.subject()).or_default().insert(p.end().to_string());
        }
    }
    let truthy: Vec<usize> = (0..set.len()).filter(|&i| set.statements[i].label).collect();
    let falsy: Vec<usize> = (0..set.len())
        .filter(|&i| !set.statements[i].label && correct.contains_key(&parsed[i].subject()))
        .collect();
    let pools = Pools { truthy, falsy };
    pools.require(&set.dataset_id, 1)?;

    let out_id = format!("{}_disj", set.dataset_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t1 = rng.gen_bool(0.5);
        let i1 = draw(&mut rng, pools.pool(t1), None);
        let first = &parsed[i1];
        let subject = first.subject();
        let right = &correct[&subject];
        let candidates: Vec<usize> = (0..set.len())
            .filter(|&j| {
                j != i1 && parsed[j].end() != first.end() && !right.contains(parsed[j].end())
            })
            .collect();
        if candidates.is_empty() {
            return Err(CorpusError::Generation(format!(
                "no incorrect end word available for row {i1} of {}",
                set.dataset_id
            )));
        }
        let i2 = candidates[rng.gen_range(0..candidates.len())];
        let (e1, e2) = (first.end(), parsed[i2].end());
        let (lead, trail) = if rng.gen_bool(0.5) { (e2, e1) } else { (e1, e2) };

        let rule = &table.rules[first.rule];
        let clause = rule.affirmative.render(&first.with_end(lead));
        let clause = embed(&clause, rule.affirmative.starts_with_slot(), &ProperNounLexicon::default());
        let cont = rule
            .continuation
            .as_ref()
            .expect("templated rules carry a continuation")
            .render(&first.with_end(trail));
        out.push(Statement {
            text: format!("It is the case either that {clause} or that {cont}."),
            label: set.statements[i1].label,
            polarity: Polarity::Affirmative,
            logical_form: LogicalForm::Disjunction,
            dataset_id: out_id.clone(),
            source_ids: vec![i1, i2],
        });
    }
    StatementSet::new(out_id, out, Provenance::Generated)
}
