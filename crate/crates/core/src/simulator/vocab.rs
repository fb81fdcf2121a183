use std::sync::LazyLock;

use super::SimError;

const BUILTIN: &str = include_str!("vocabulary.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TermKind {
    Category,
    Area,
    Color,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub categories: Vec<String>,
    pub areas: Vec<String>,
    pub colors: Vec<String>,
}

static BUILTIN_VOCAB: LazyLock<Vocabulary> =
    LazyLock::new(|| Vocabulary::parse(BUILTIN).expect("builtin vocabulary parses"));

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Vocabulary {
    pub fn builtin() -> &'static Vocabulary {
        &BUILTIN_VOCAB
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut v = Vocabulary {
            categories: Vec::new(),
            areas: Vec::new(),
            colors: Vec::new(),
        };
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (kind, name) = line
                .split_once(' ')
                .ok_or_else(|| SimError::Vocabulary(format!("line {}: expected `<kind> <name>`", n + 1)))?;
            let name = words(name).join(" ");
            let list = match kind {
                "category" => &mut v.categories,
                "area" => &mut v.areas,
                "color" => &mut v.colors,
                other => return Err(SimError::Vocabulary(format!("line {}: unknown kind {other:?}", n + 1))),
            };
            if name.is_empty() || list.contains(&name) {
                return Err(SimError::Vocabulary(format!("line {}: empty or repeated name", n + 1)));
            }
            list.push(name);
        }
        Ok(v)
    }

    pub fn kind_of(&self, name: &str) -> Option<TermKind> {
        if self.categories.iter().any(|c| c == name) {
            Some(TermKind::Category)
        } else if self.areas.iter().any(|a| a == name) {
            Some(TermKind::Area)
        } else if self.colors.iter().any(|c| c == name) {
            Some(TermKind::Color)
        } else {
            None
        }
    }

    fn entries(&self) -> impl Iterator<Item = (TermKind, &String)> {
        self.categories
            .iter()
            .map(|c| (TermKind::Category, c))
            .chain(self.areas.iter().map(|a| (TermKind::Area, a)))
            .chain(self.colors.iter().map(|c| (TermKind::Color, c)))
    }

    /// Vocabulary terms in `text`, left to right, longest match first. The
    /// second list holds the words no term covered.
    pub fn scan(&self, text: &str) -> (Vec<(TermKind, String)>, Vec<String>) {
        let ws = words(text);
        let entries: Vec<(TermKind, Vec<&str>, &String)> = self
            .entries()
            .map(|(k, name)| (k, name.split(' ').collect(), name))
            .collect();
        let mut terms = Vec::new();
        let mut rest = Vec::new();
        let mut i = 0;
        while i < ws.len() {
            let best = entries
                .iter()
                .filter(|(_, parts, _)| {
                    parts.len() <= ws.len() - i && parts.iter().zip(&ws[i..]).all(|(p, w)| p == w)
                })
                .max_by_key(|(_, parts, _)| parts.len());
            match best {
                Some((k, parts, name)) => {
                    terms.push((*k, (*name).clone()));
                    i += parts.len();
                }
                None => {
                    rest.push(ws[i].clone());
                    i += 1;
                }
            }
        }
        (terms, rest)
    }

    pub fn terms_of(&self, text: &str, kind: TermKind) -> Vec<String> {
        self.scan(text).0.into_iter().filter(|t| t.0 == kind).map(|t| t.1).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_loads() {
        let v = Vocabulary::builtin();
        assert!(v.categories.len() >= 30);
        assert_eq!(v.kind_of("living room"), Some(TermKind::Area));
        assert_eq!(v.kind_of("green"), Some(TermKind::Color));
        assert_eq!(v.kind_of("spaceship"), None);
    }

    #[test]
    fn longest_match_wins() {
        let v = Vocabulary::builtin();
        let (terms, rest) = v.scan("What color is the Coffee Table in the living room?");
        assert_eq!(
            terms,
            vec![
                (TermKind::Category, "coffee table".to_string()),
                (TermKind::Area, "living room".to_string()),
            ]
        );
        assert!(rest.contains(&"what".to_string()));
        assert_eq!(v.terms_of("find the office chair near the desk", TermKind::Category), ["office chair", "desk"]);
    }

    #[test]
    fn malformed_files_rejected() {
        assert!(Vocabulary::parse("category").is_err());
        assert!(Vocabulary::parse("shape round").is_err());
        assert!(Vocabulary::parse("area kitchen\narea Kitchen").is_err());
    }
}
