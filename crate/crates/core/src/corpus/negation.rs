use super::template::Template;
use super::{CorpusError, LogicalForm, Polarity, Provenance, Statement, StatementSet};

/// One affirmative surface form, its negation, and the pronoun clause used
/// when the rule's end word is restated in a disjunction ("it is in X").
#[derive(Debug, Clone, PartialEq)]
pub struct NegationRule {
    pub affirmative: Template,
    pub negated: Template,
    pub continuation: Option<Template>,
}

impl NegationRule {
    pub fn new(affirmative: &str, negated: &str) -> Self {
        Self {
            affirmative: Template::new(affirmative),
            negated: Template::new(negated),
            continuation: None,
        }
    }

    pub fn with_continuation(mut self, clause: &str) -> Self {
        self.continuation = Some(Template::new(clause));
        self
    }
}

/// Ordered rule list for one dataset. When several rules match, the one whose
/// keyword appears earliest in the sentence wins; remaining ties go to the
/// earlier rule.
#[derive(Debug, Clone, PartialEq)]
pub struct NegationRuleTable {
    pub rules: Vec<NegationRule>,
}

/// Third-person verbs negated with "does not"; plural forms use "do not".
const DO_SUPPORT_VERBS: [(&str, &str); 16] = [
    ("has", "have"),
    ("contains", "contain"),
    ("causes", "cause"),
    ("produces", "produce"),
    ("orbits", "orbit"),
    ("lives", "live"),
    ("needs", "need"),
    ("requires", "require"),
    ("boils", "boil"),
    ("freezes", "freeze"),
    ("consists", "consist"),
    ("means", "mean"),
    ("rises", "rise"),
    ("sets", "set"),
    ("absorbs", "absorb"),
    ("flows", "flow"),
];

impl NegationRuleTable {
    /// Built-in table for a curated topic, `None` for other datasets.
    pub fn for_dataset(dataset_id: &str) -> Option<Self> {
        let rules = match dataset_id {
            "cities" => vec![NegationRule::new(
                "The city of {city} is in {country}.",
                "The city of {city} is not in {country}.",
            )
            .with_continuation("it is in {country}")],
            "sp_en_trans" => vec![NegationRule::new(
                "The Spanish word {word} means {english}.",
                "The Spanish word {word} does not mean {english}.",
            )
            .with_continuation("it means {english}")],
            "element_symb" => vec![
                NegationRule::new(
                    "{element} has the symbol of {symbol}.",
                    "{element} does not have the symbol of {symbol}.",
                )
                .with_continuation("it has the symbol of {symbol}"),
                NegationRule::new(
                    "{element} has the symbol {symbol}.",
                    "{element} does not have the symbol {symbol}.",
                )
                .with_continuation("it has the symbol {symbol}"),
            ],
            "animal_class" => vec![NegationRule::new(
                "The {animal} is {a} {class}.",
                "The {animal} is not {a} {class}.",
            )
            .with_continuation("it is {a} {class}")],
            "inventors" => vec![NegationRule::new(
                "{inventor} lived in {country}.",
                "{inventor} did not live in {country}.",
            )
            .with_continuation("they lived in {country}")],
            "facts" => Self::general().rules,
            _ => return None,
        };
        Some(Self { rules })
    }

    /// Verb-keyed rules for free-form declaratives.
    pub fn general() -> Self {
        let mut rules = Vec::new();
        for (aux, neg) in [
            ("is", "is not"),
            ("are", "are not"),
            ("was", "was not"),
            ("were", "were not"),
            ("can", "cannot"),
            ("will", "will not"),
        ] {
            rules.push(NegationRule::new(
                &format!("{{subject}} {aux} {{rest}}."),
                &format!("{{subject}} {neg} {{rest}}."),
            ));
        }
        for (third, base) in DO_SUPPORT_VERBS {
            rules.push(NegationRule::new(
                &format!("{{subject}} {third} {{rest}}."),
                &format!("{{subject}} does not {base} {{rest}}."),
            ));
            rules.push(NegationRule::new(
                &format!("{{subject}} {base} {{rest}}."),
                &format!("{{subject}} do not {base} {{rest}}."),
            ));
        }
        Self { rules }
    }

    /// The matching rule index and its slot values for an affirmative sentence.
    pub fn match_affirmative(&self, text: &str) -> Option<(usize, Vec<(String, String)>)> {
        Self::best(self.rules.iter().map(|r| &r.affirmative), text)
    }

    /// Same as [`match_affirmative`](Self::match_affirmative) for negated sentences.
    pub fn match_negated(&self, text: &str) -> Option<(usize, Vec<(String, String)>)> {
        Self::best(self.rules.iter().map(|r| &r.negated), text)
    }

    fn best<'a>(
        templates: impl Iterator<Item = &'a Template>,
        text: &str,
    ) -> Option<(usize, Vec<(String, String)>)> {
        let mut best: Option<(usize, usize, &Template)> = None;
        for (i, t) in templates.enumerate() {
            if let Some(split) = t.first_split(text) {
                if best.is_none_or(|(_, s, _)| split < s) {
                    best = Some((i, split, t));
                }
            }
        }
        let (i, _, t) = best?;
        Some((i, t.captures(text)?))
    }

    /// Negates one sentence, or `None` if no rule matches.
    pub fn negate_text(&self, text: &str) -> Option<String> {
        let (i, slots) = self.match_affirmative(text)?;
        Some(self.rules[i].negated.render(&slots))
    }
}

/// Negates every statement of an affirmative set: labels flip, polarity
/// becomes −1, and the dataset id gains the `neg_` prefix.
pub fn negate(set: &StatementSet, rules: &NegationRuleTable) -> Result<StatementSet, CorpusError> {
    let mut out = Vec::with_capacity(set.len());
    let neg_id = format!("neg_{}", set.dataset_id);
    for (row, s) in set.statements.iter().enumerate() {
        if s.logical_form != LogicalForm::Affirmative || s.polarity != Polarity::Affirmative {
            return Err(CorpusError::NotAffirmative {
                dataset_id: set.dataset_id.clone(),
                row,
                form: s.logical_form,
            });
        }
        let text = rules
            .negate_text(&s.text)
            .ok_or_else(|| CorpusError::UnhandledTemplate {
                dataset_id: set.dataset_id.clone(),
                row,
                text: s.text.clone(),
            })?;
        out.push(Statement {
            text,
            label: !s.label,
            polarity: Polarity::Negated,
            logical_form: LogicalForm::Negated,
            dataset_id: neg_id.clone(),
            source_ids: Vec::new(),
        });
    }
    StatementSet::new(neg_id, out, Provenance::Generated)
}
