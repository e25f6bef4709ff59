use regex::Regex;

/// Name of the pseudo-slot holding an indefinite article that agrees with the
/// slot after it.
const ARTICLE: &str = "a";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Literal(String),
    Slot(String),
}

/// A sentence pattern with named `{slot}` placeholders, e.g.
/// `"The city of {city} is in {country}."`.
///
/// The reserved slot `{a}` renders as "a" or "an" depending on the first
/// letter of the following slot's value.
#[derive(Debug, Clone)]
pub struct Template {
    pattern: String,
    parts: Vec<Part>,
    regex: Regex,
}

impl PartialEq for Template {
    fn eq(&self, other: &Self) -> bool {
        self.pattern == other.pattern
    }
}

impl Template {
    /// Panics on malformed patterns; patterns are compile-time constants.
    pub fn new(pattern: &str) -> Self {
        let mut parts = Vec::new();
        let mut rest = pattern;
        while let Some(open) = rest.find('{') {
            if open > 0 {
                parts.push(Part::Literal(rest[..open].to_string()));
            }
            let close = rest[open..]
                .find('}')
                .unwrap_or_else(|| panic!("unclosed slot in template {pattern:?}"))
                + open;
            parts.push(Part::Slot(rest[open + 1..close].to_string()));
            rest = &rest[close + 1..];
        }
        if !rest.is_empty() {
            parts.push(Part::Literal(rest.to_string()));
        }

        let mut re = String::from("^");
        for part in &parts {
            match part {
                Part::Literal(l) => re.push_str(&regex::escape(l)),
                Part::Slot(s) if s == ARTICLE => re.push_str("(an|a)"),
                Part::Slot(_) => re.push_str("(.+?)"),
            }
        }
        re.push('$');
        let regex = Regex::new(&re).expect("template regex");
        Self { pattern: pattern.to_string(), parts, regex }
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn starts_with_slot(&self) -> bool {
        matches!(self.parts.first(), Some(Part::Slot(s)) if s != ARTICLE)
    }

    /// Named slot values in pattern order, excluding the article slot.
    pub fn captures(&self, text: &str) -> Option<Vec<(String, String)>> {
        let caps = self.regex.captures(text)?;
        let mut out = Vec::new();
        let mut group = 1;
        for part in &self.parts {
            if let Part::Slot(name) = part {
                let value = caps.get(group)?.as_str();
                group += 1;
                if name != ARTICLE {
                    out.push((name.clone(), value.to_string()));
                }
            }
        }
        Some(out)
    }

    /// Byte offset where the first literal after the leading slot begins.
    /// Used to prefer the rule whose keyword appears earliest.
    pub(crate) fn first_split(&self, text: &str) -> Option<usize> {
        let caps = self.regex.captures(text)?;
        Some(caps.get(1).map_or(0, |m| m.end()))
    }

    /// Substitutes slot values. Missing slots render as an empty string.
    pub fn render(&self, slots: &[(String, String)]) -> String {
        let lookup = |name: &str| {
            slots
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v.as_str())
                .unwrap_or("")
        };
        let mut out = String::new();
        for (i, part) in self.parts.iter().enumerate() {
            match part {
                Part::Literal(l) => out.push_str(l),
                Part::Slot(s) if s == ARTICLE => {
                    let next = self.parts[i + 1..].iter().find_map(|p| match p {
                        Part::Slot(n) if n != ARTICLE => Some(lookup(n)),
                        _ => None,
                    });
                    out.push_str(indefinite_article(next.unwrap_or("")));
                }
                Part::Slot(s) => out.push_str(lookup(s)),
            }
        }
        out
    }
}

fn indefinite_article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}
