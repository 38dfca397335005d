//! Question and caption surface forms: a renderer from programs to text and
//! its exact inverse, a recursive-descent parser over the template grammar.
//!
//! ```text
//! question := "what is the" ATTR "of" REF
//!           | "is there" INDEF
//!           | "how many" NP-PL ("are there" | "are" REL REF [("and"|"or") REL REF]
//!                               | "have the same" ATTR "as" REF)
//!           | "does" REF "have the same" ATTR "as" REF
//!           | "are there" ("more"|"fewer") NP-PL "than" NP-PL
//!           | "are there the same number of" NP-PL "and" NP-PL
//! caption  := "there is" ART WORD REL ART WORD
//! REF      := "the" ADJ* NOUN [MOD]
//! MOD      := REL REF | "with the same" ATTR "as" REF
//! ```
//!
//! Adjectives and nouns are resolved through the lexicon; the noun is a shape
//! word or `thing`. Filters apply the noun first and then adjectives from
//! right to left, so `large red cube` is
//! `(filter (filter (filter scene cube) red) large)`.

use thiserror::Error;

use crate::concepts::{LexTarget, Lexicon};
use crate::dsl::{Comparison, Program, ProgramNode};

use super::domain::{SpatialRelation, SHAPES};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LanguageError {
    #[error("unknown word `{0}`")]
    UnknownWord(String),
    #[error("no template matches: {0}")]
    NoMatch(String),
    #[error("program has no surface form: {0}")]
    Unrenderable(String),
}

type Result<T> = std::result::Result<T, LanguageError>;

const STRUCTURAL: &[&str] = &[
    "what", "is", "the", "of", "there", "a", "an", "how", "many", "are", "have", "same", "as", "does", "more", "fewer",
    "than", "number", "and", "or", "with", "in", "thing", "things", "object", "objects",
];

fn is_shape(concept: &str) -> bool {
    SHAPES.contains(&concept)
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

fn relation_phrase(name: &str) -> Result<&'static str> {
    SpatialRelation::from_concept(name)
        .map(SpatialRelation::phrase)
        .ok_or_else(|| LanguageError::Unrenderable(format!("relation `{name}`")))
}

/// Peels filters off a set expression: surface concepts (outermost first) and the base.
fn decompose(node: &ProgramNode) -> (Vec<&str>, &ProgramNode) {
    let mut words = Vec::new();
    let mut cur = node;
    while let ProgramNode::Filter { child, concept } = cur {
        words.push(concept.as_str());
        cur = child;
    }
    (words, cur)
}

fn noun_phrase(words: &[&str], plural: bool) -> Result<String> {
    let (noun, adjectives) = match words.split_last() {
        Some((last, rest)) if is_shape(last) => (*last, rest),
        _ => ("thing", words),
    };
    if adjectives.iter().any(|w| is_shape(w)) {
        return Err(LanguageError::Unrenderable(format!("shape not innermost in {words:?}")));
    }
    let mut out: Vec<String> = adjectives.iter().map(|w| w.to_string()).collect();
    out.push(if plural { format!("{noun}s") } else { noun.to_string() });
    Ok(out.join(" "))
}

fn modifier(base: &ProgramNode) -> Result<String> {
    match base {
        ProgramNode::Scene => Ok(String::new()),
        ProgramNode::Relate { relation, reference } => {
            Ok(format!(" {} {}", relation_phrase(relation)?, render_ref(reference)?))
        }
        ProgramNode::RelateSame { attribute, reference } => {
            Ok(format!(" with the same {attribute} as {}", render_ref(reference)?))
        }
        other => Err(LanguageError::Unrenderable(format!("`{}` inside a noun phrase", other.head()))),
    }
}

fn render_ref(node: &ProgramNode) -> Result<String> {
    let ProgramNode::Unique(set) = node else {
        return Err(LanguageError::Unrenderable(format!("reference `{}` is not unique(..)", node.head())));
    };
    let (words, base) = decompose(set);
    Ok(format!("the {}{}", noun_phrase(&words, false)?, modifier(base)?))
}

fn render_plural(set: &ProgramNode) -> Result<String> {
    let (words, base) = decompose(set);
    Ok(format!("{}{}", noun_phrase(&words, true)?, modifier(base)?))
}

fn render_relate_clause(node: &ProgramNode) -> Result<String> {
    match node {
        ProgramNode::Relate { relation, reference } => {
            Ok(format!("{} {}", relation_phrase(relation)?, render_ref(reference)?))
        }
        other => Err(LanguageError::Unrenderable(format!("`{}` operand of a set operation", other.head()))),
    }
}

fn single_concept_np(concept: &str) -> String {
    let np = if is_shape(concept) { concept.to_string() } else { format!("{concept} thing") };
    format!("{} {np}", article(&np))
}

/// Canonical question text for a template-shaped program.
pub fn render_question(program: &Program) -> Result<String> {
    let body = match &program.root {
        ProgramNode::Query { attribute, reference } => {
            format!("what is the {attribute} of {}", render_ref(reference)?)
        }
        ProgramNode::Exist(set) => {
            let (words, base) = decompose(set);
            let np = noun_phrase(&words, false)?;
            format!("is there {} {np}{}", article(&np), modifier(base)?)
        }
        ProgramNode::Count(set) => {
            let (words, base) = decompose(set);
            let np = noun_phrase(&words, true)?;
            match base {
                ProgramNode::Scene => format!("how many {np} are there"),
                ProgramNode::Relate { .. } => format!("how many {np} are {}", render_relate_clause(base)?),
                ProgramNode::RelateSame { attribute, reference } => {
                    format!("how many {np} have the same {attribute} as {}", render_ref(reference)?)
                }
                ProgramNode::Intersect(a, b) | ProgramNode::Union(a, b) => {
                    let joiner = if matches!(base, ProgramNode::Intersect(..)) { "and" } else { "or" };
                    format!("how many {np} are {} {joiner} {}", render_relate_clause(a)?, render_relate_clause(b)?)
                }
                other => return Err(LanguageError::Unrenderable(format!("count over `{}`", other.head()))),
            }
        }
        ProgramNode::AttrEqual { attribute, left, right } => {
            format!("does {} have the same {attribute} as {}", render_ref(left)?, render_ref(right)?)
        }
        ProgramNode::CountCompare { cmp, left, right } => match cmp {
            Comparison::Greater => format!("are there more {} than {}", render_plural(left)?, render_plural(right)?),
            Comparison::Less => format!("are there fewer {} than {}", render_plural(left)?, render_plural(right)?),
            Comparison::Equal => {
                format!("are there the same number of {} and {}", render_plural(left)?, render_plural(right)?)
            }
        },
        ProgramNode::ExistPair { subject, object, relation } => {
            format!(
                "is there {} {} {}",
                single_concept_np(subject),
                relation_phrase(relation)?,
                single_concept_np(object)
            )
        }
        other => return Err(LanguageError::Unrenderable(format!("root `{}` is not a question", other.head()))),
    };
    Ok(format!("{body}?"))
}

/// Caption of the form `There is a <A> <relation> a <B>.`
pub fn render_caption(subject: &str, relation: &str, object: &str) -> Result<String> {
    let text = format!(
        "there is {} {} {}.",
        single_concept_np(subject),
        relation_phrase(relation)?,
        single_concept_np(object)
    );
    let mut chars = text.chars();
    let first = chars.next().map(|c| c.to_ascii_uppercase()).unwrap_or_default();
    Ok(format!("{first}{}", chars.as_str()))
}

/// Inverts [`render_question`] and [`render_caption`] using `lexicon` for content words.
pub fn parse_question(text: &str, lexicon: &Lexicon) -> Result<Program> {
    let cleaned = text.trim().trim_end_matches(['?', '.']).to_lowercase();
    let toks: Vec<String> = cleaned.split_whitespace().map(str::to_string).collect();
    let mut p = Parser { toks, pos: 0, lex: lexicon };
    let root = p.question()?;
    if p.pos != p.toks.len() {
        return Err(LanguageError::NoMatch(format!("unexpected `{}`", p.toks[p.pos])));
    }
    Ok(Program::new(root))
}

struct Parser<'a> {
    toks: Vec<String>,
    pos: usize,
    lex: &'a Lexicon,
}

enum WordClass {
    Adjective(String),
    Noun(Option<String>),
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).map(String::as_str)
    }

    fn peek_at(&self, k: usize) -> Option<&str> {
        self.toks.get(self.pos + k).map(String::as_str)
    }

    fn at_seq(&self, words: &[&str]) -> bool {
        words.iter().enumerate().all(|(k, w)| self.peek_at(k) == Some(*w))
    }

    fn eat_seq(&mut self, words: &[&str]) -> bool {
        if self.at_seq(words) {
            self.pos += words.len();
            true
        } else {
            false
        }
    }

    fn expect_seq(&mut self, words: &[&str]) -> Result<()> {
        if self.eat_seq(words) {
            Ok(())
        } else {
            Err(self.no_match(&format!("expected `{}`", words.join(" "))))
        }
    }

    fn no_match(&self, what: &str) -> LanguageError {
        match self.peek() {
            Some(t) if !STRUCTURAL.contains(&t) && self.lex.lookup(t).is_none() => {
                LanguageError::UnknownWord(t.to_string())
            }
            Some(t) => LanguageError::NoMatch(format!("{what} at `{t}`")),
            None => LanguageError::NoMatch(format!("{what} at end of input")),
        }
    }

    fn end(&self) -> Result<()> {
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(self.no_match("expected end of question")),
        }
    }

    fn attribute(&mut self) -> Result<String> {
        match self.peek().and_then(|t| self.lex.lookup(t)) {
            Some(LexTarget::Attribute(a)) => {
                let a = a.clone();
                self.pos += 1;
                Ok(a)
            }
            _ => Err(self.no_match("expected attribute")),
        }
    }

    fn relation_concept(&self, word: Option<&str>) -> Option<String> {
        match self.lex.lookup(word?) {
            Some(LexTarget::Concept(c)) if SpatialRelation::from_concept(c).is_some() => Some(c.clone()),
            _ => None,
        }
    }

    fn at_relation(&self) -> bool {
        if self.peek() == Some("in") {
            self.relation_concept(self.peek_at(1)).is_some()
        } else {
            self.relation_concept(self.peek()).is_some()
        }
    }

    fn relation(&mut self) -> Result<String> {
        self.eat_seq(&["in"]);
        let rel = self.relation_concept(self.peek()).ok_or_else(|| self.no_match("expected relation"))?;
        self.pos += 1;
        self.eat_seq(&["of"]);
        Ok(rel)
    }

    fn classify(&self, tok: &str) -> Result<WordClass> {
        if matches!(tok, "thing" | "things" | "object" | "objects") {
            return Ok(WordClass::Noun(None));
        }
        match self.lex.lookup(tok) {
            Some(LexTarget::Concept(c)) if SpatialRelation::from_concept(c).is_some() => {
                Err(LanguageError::NoMatch(format!("relation word `{tok}` inside a noun phrase")))
            }
            Some(LexTarget::Concept(c)) if is_shape(c) => Ok(WordClass::Noun(Some(c.clone()))),
            Some(LexTarget::Concept(c)) => Ok(WordClass::Adjective(c.clone())),
            Some(LexTarget::Attribute(_)) => Err(LanguageError::NoMatch(format!("attribute `{tok}` as a modifier"))),
            None if STRUCTURAL.contains(&tok) => Err(LanguageError::NoMatch(format!("expected noun at `{tok}`"))),
            None => Err(LanguageError::UnknownWord(tok.to_string())),
        }
    }

    /// `ADJ* NOUN`, returned in surface order.
    fn np_words(&mut self) -> Result<Vec<String>> {
        let mut words = Vec::new();
        loop {
            let tok = self.peek().ok_or_else(|| LanguageError::NoMatch("noun phrase cut short".into()))?.to_string();
            let class = self.classify(&tok)?;
            self.pos += 1;
            match class {
                WordClass::Adjective(c) => words.push(c),
                WordClass::Noun(shape) => {
                    words.extend(shape);
                    return Ok(words);
                }
            }
        }
    }

    fn modifier(&mut self) -> Result<ProgramNode> {
        if self.eat_seq(&["with", "the", "same"]) {
            let attribute = self.attribute()?;
            self.expect_seq(&["as"])?;
            let reference = self.reference()?;
            return Ok(ProgramNode::relate_same(&attribute, reference));
        }
        if self.at_relation() {
            let rel = self.relation()?;
            let reference = self.reference()?;
            return Ok(ProgramNode::relate(&rel, reference));
        }
        Ok(ProgramNode::Scene)
    }

    fn reference(&mut self) -> Result<ProgramNode> {
        self.expect_seq(&["the"])?;
        let words = self.np_words()?;
        let base = self.modifier()?;
        Ok(ProgramNode::unique(apply_filters(base, &words)))
    }

    fn plural_set(&mut self) -> Result<ProgramNode> {
        let words = self.np_words()?;
        let base = self.modifier()?;
        Ok(apply_filters(base, &words))
    }

    fn article(&mut self) -> Result<()> {
        if self.eat_seq(&["a"]) || self.eat_seq(&["an"]) {
            Ok(())
        } else {
            Err(self.no_match("expected article"))
        }
    }

    fn single_concept(&self, words: &[String]) -> Result<String> {
        match words {
            [one] => Ok(one.clone()),
            _ => Err(LanguageError::NoMatch(format!("pair phrase needs exactly one concept, found {words:?}"))),
        }
    }

    /// `ART WORD REL ART WORD` after the article of the subject has been consumed.
    fn pair_tail(&mut self, subject_words: Vec<String>) -> Result<ProgramNode> {
        let subject = self.single_concept(&subject_words)?;
        let relation = self.relation()?;
        self.article()?;
        let object_words = self.np_words()?;
        let object = self.single_concept(&object_words)?;
        self.end()?;
        Ok(ProgramNode::exist_pair(&subject, &object, &relation))
    }

    fn question(&mut self) -> Result<ProgramNode> {
        if self.eat_seq(&["what", "is", "the"]) {
            let attribute = self.attribute()?;
            self.expect_seq(&["of"])?;
            let reference = self.reference()?;
            self.end()?;
            return Ok(ProgramNode::query(&attribute, reference));
        }
        if self.eat_seq(&["there", "is"]) {
            self.article()?;
            let words = self.np_words()?;
            return self.pair_tail(words);
        }
        if self.eat_seq(&["is", "there"]) {
            self.article()?;
            let words = self.np_words()?;
            if self.at_relation() {
                let save = self.pos;
                self.relation()?;
                let indefinite = matches!(self.peek(), Some("a" | "an"));
                self.pos = save;
                if indefinite {
                    return self.pair_tail(words);
                }
            }
            let base = self.modifier()?;
            self.end()?;
            return Ok(ProgramNode::exist(apply_filters(base, &words)));
        }
        if self.eat_seq(&["how", "many"]) {
            let words = self.np_words()?;
            let base = if self.eat_seq(&["are", "there"]) {
                ProgramNode::Scene
            } else if self.eat_seq(&["have", "the", "same"]) {
                let attribute = self.attribute()?;
                self.expect_seq(&["as"])?;
                ProgramNode::relate_same(&attribute, self.reference()?)
            } else {
                self.expect_seq(&["are"])?;
                let rel = self.relation()?;
                let first = ProgramNode::relate(&rel, self.reference()?);
                let conj = if self.eat_seq(&["and"]) {
                    Some(true)
                } else if self.eat_seq(&["or"]) {
                    Some(false)
                } else {
                    None
                };
                match conj {
                    None => first,
                    Some(and) => {
                        let rel = self.relation()?;
                        let second = ProgramNode::relate(&rel, self.reference()?);
                        if and {
                            ProgramNode::Intersect(Box::new(first), Box::new(second))
                        } else {
                            ProgramNode::Union(Box::new(first), Box::new(second))
                        }
                    }
                }
            };
            self.end()?;
            return Ok(ProgramNode::count(apply_filters(base, &words)));
        }
        if self.eat_seq(&["does"]) {
            let left = self.reference()?;
            self.expect_seq(&["have", "the", "same"])?;
            let attribute = self.attribute()?;
            self.expect_seq(&["as"])?;
            let right = self.reference()?;
            self.end()?;
            return Ok(ProgramNode::attr_equal(&attribute, left, right));
        }
        if self.eat_seq(&["are", "there"]) {
            let (cmp, joiner) = if self.eat_seq(&["more"]) {
                (Comparison::Greater, "than")
            } else if self.eat_seq(&["fewer"]) {
                (Comparison::Less, "than")
            } else if self.eat_seq(&["the", "same", "number", "of"]) {
                (Comparison::Equal, "and")
            } else {
                return Err(self.no_match("expected comparison"));
            };
            let left = self.plural_set()?;
            self.expect_seq(&[joiner])?;
            let right = self.plural_set()?;
            self.end()?;
            return Ok(ProgramNode::count_compare(cmp, left, right));
        }
        Err(self.no_match("no question template"))
    }
}

fn apply_filters(base: ProgramNode, surface: &[String]) -> ProgramNode {
    surface.iter().rev().fold(base, |node, c| ProgramNode::filter(node, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::Registry;
    use crate::dsl::parse_program;

    fn lex() -> Lexicon {
        Registry::standard(Default::default(), 0).lexicon
    }

    fn parse(text: &str) -> Result<Program> {
        parse_question(text, &lex())
    }

    #[test]
    fn count_of_red_cubes() {
        let p = parse("how many red cubes are there?").unwrap();
        assert_eq!(
            p.root,
            ProgramNode::count(ProgramNode::filter(ProgramNode::filter(ProgramNode::Scene, "cube"), "red"))
        );
    }

    #[test]
    fn unbound_word_is_reported() {
        assert_eq!(parse("how many wug cubes are there?"), Err(LanguageError::UnknownWord("wug".into())));
        assert_eq!(parse("what is the color of the wug?"), Err(LanguageError::UnknownWord("wug".into())));
    }

    #[test]
    fn unmatched_text() {
        assert!(matches!(parse("why is the sky blue?"), Err(LanguageError::UnknownWord(_))));
        assert!(matches!(parse("how many red cubes are there now?"), Err(LanguageError::UnknownWord(_))));
        assert!(matches!(parse("is there the cube?"), Err(LanguageError::NoMatch(_))));
    }

    #[test]
    fn caption_from_the_transfer_example() {
        let p = parse("There is a box right of a cylinder.").unwrap();
        assert_eq!(p.root, ProgramNode::exist_pair("cube", "cylinder", "right-of"));
    }

    #[test]
    fn pair_question_and_definite_relate_differ() {
        let pair = parse("is there a cube right of a cylinder?").unwrap();
        assert_eq!(pair.root, ProgramNode::exist_pair("cube", "cylinder", "right-of"));
        let rel = parse("is there a cube right of the cylinder?").unwrap();
        assert_eq!(rel.to_string(), "(exist (filter (relate right-of (unique (filter scene cylinder))) cube))");
    }

    #[test]
    fn render_parse_round_trip_on_handwritten_programs() {
        let lex = lex();
        for text in [
            "(query color (unique (filter scene cube)))",
            "(query shape (unique (filter (relate left-of (unique (filter (filter scene sphere) red))) large)))",
            "(exist scene)",
            "(exist (filter (relate-same material (unique (filter scene cylinder))) metal))",
            "(count scene)",
            "(count (filter (filter (filter scene cube) metal) small))",
            "(count (relate behind (unique (filter (relate front-of (unique (filter scene sphere))) cube))))",
            "(count (filter (relate-same color (unique (filter scene cube))) sphere))",
            "(count (intersect (relate left-of (unique (filter scene cube))) (relate front-of (unique (filter scene sphere)))))",
            "(count (filter (union (relate right-of (unique (filter scene cube))) (relate behind (unique (filter scene sphere)))) red))",
            "(attr-equal size (unique (filter scene cube)) (unique (filter (filter scene sphere) blue)))",
            "(count-compare greater (filter scene cube) (filter scene red))",
            "(count-compare less scene (filter scene red))",
            "(count-compare equal (filter (filter scene cylinder) metal) (filter scene gray))",
            "(exist-pair red cylinder in-front)",
            "(exist-pair metal cylinder front-of)",
        ] {
            let program = parse_program(text).unwrap();
            match render_question(&program) {
                Ok(q) => assert_eq!(parse_question(&q, &lex).unwrap(), program, "{q}"),
                Err(LanguageError::Unrenderable(_)) => assert!(text.contains("in-front")),
                Err(e) => panic!("{text}: {e}"),
            }
        }
    }

    #[test]
    fn rendered_examples_read_naturally() {
        let q = render_question(&parse_program("(count (filter (filter scene cube) red))").unwrap()).unwrap();
        assert_eq!(q, "how many red cubes are there?");
        let q = render_question(&parse_program("(exist (filter scene metal))").unwrap()).unwrap();
        assert_eq!(q, "is there a metal thing?");
        let q = render_question(&parse_program("(query color (unique (filter scene cube)))").unwrap()).unwrap();
        assert_eq!(q, "what is the color of the cube?");
        assert_eq!(render_caption("cube", "right-of", "cylinder").unwrap(), "There is a cube right of a cylinder.");
        assert_eq!(
            render_caption("gray", "front-of", "sphere").unwrap(),
            "There is a gray thing in front of a sphere."
        );
    }

    #[test]
    fn unrenderable_shapes() {
        for text in ["(count (filter (filter scene red) cube))", "(exist (unique scene))", "(count (unique scene))"] {
            let p = parse_program(text).unwrap();
            assert!(matches!(render_question(&p), Err(LanguageError::Unrenderable(_))), "{text}");
        }
    }
}
