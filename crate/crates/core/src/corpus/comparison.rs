use super::{CorpusError, LogicalForm, Polarity, Provenance, Statement, StatementSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Larger,
    Smaller,
}

impl Direction {
    pub fn dataset_id(self) -> &'static str {
        match self {
            Direction::Larger => "larger_than",
            Direction::Smaller => "smaller_than",
        }
    }
}

/// All ordered pairs `x != y` over `lo..=hi`, x-major. The range 1..=45 gives
/// the 1980 rows of the released comparison sets.
pub fn make_comparisons(lo: i64, hi: i64, direction: Direction) -> Result<StatementSet, CorpusError> {
    if hi <= lo {
        return Err(CorpusError::Config(format!("comparison range needs hi > lo, got [{lo}, {hi}]")));
    }
    let id = direction.dataset_id();
    let word = match direction {
        Direction::Larger => "larger",
        Direction::Smaller => "smaller",
    };
    let mut out = Vec::new();
    for x in lo..=hi {
        for y in lo..=hi {
            if x == y {
                continue;
            }
            out.push(Statement {
                text: format!("{x} is {word} than {y}."),
                label: match direction {
                    Direction::Larger => x > y,
                    Direction::Smaller => x < y,
                },
                polarity: Polarity::Affirmative,
                logical_form: LogicalForm::Comparison,
                dataset_id: id.to_string(),
                source_ids: Vec::new(),
            });
        }
    }
    StatementSet::new(id, out, Provenance::Generated)
}
