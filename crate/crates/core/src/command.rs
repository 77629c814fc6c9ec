//! A small closed grammar for conversational edit commands.
//!
//! Parsing is a deterministic recursive descent over lowercase word tokens.
//! Measure and beat numbers are written one-based in commands and stored
//! zero-based in the AST ("measure two" is measure index 1). The full grammar
//! is in `docs/grammar.ebnf`.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::query::{FieldPattern, NotePattern, Pattern};
use crate::transforms::{OperationDescriptor, PitchSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("cannot parse command at position {position}: expected {expected}")]
    CannotParse { position: usize, expected: String },
    #[error("unknown note name {name:?} at position {position}")]
    UnknownNoteName { position: usize, name: String },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match self {
            ParseError::CannotParse { position, .. } | ParseError::UnknownNoteName { position, .. } => *position,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Action {
    Move,
    Invert,
    Reverse,
    Delete,
    Undo,
    Show,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Magnitude {
    Semitones(i32),
    Degrees(i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum DeleteMode {
    AsRest,
    Shift,
}

/// A described note or set of notes. Indices are zero-based.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NoteRef {
    pub pitch_class: Option<u8>,
    pub measure: Option<u32>,
    pub beat: Option<u32>,
    pub plural: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum Referent {
    NoteRef(NoteRef),
    MeasureRef { measure: u32 },
    AllRef,
}

impl Referent {
    pub fn is_plural(&self) -> bool {
        match self {
            Referent::NoteRef(r) => r.plural,
            Referent::MeasureRef { .. } | Referent::AllRef => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CommandAst {
    pub action: Action,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub referent: Option<Referent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<Magnitude>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<PitchSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delete_mode: Option<DeleteMode>,
}

impl CommandAst {
    fn bare(action: Action) -> Self {
        CommandAst {
            action,
            referent: None,
            direction: None,
            magnitude: None,
            axis: None,
            delete_mode: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Token {
    text: String,
    position: usize,
}

/// The input without trailing whitespace, final punctuation and closing quotes.
fn content(input: &str) -> &str {
    input.trim_end_matches(|c: char| c.is_whitespace() || matches!(c, '.' | '!' | '"' | '\'' | '”' | '’'))
}

fn tokenize(input: &str) -> Vec<Token> {
    let trimmed_end = content(input).len();
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    for (pos, ch) in input.chars().enumerate().take(input[..trimmed_end].chars().count()) {
        let sep = ch.is_whitespace() || matches!(ch, ',' | '-' | '"' | '“' | '”' | '`');
        if sep {
            if !current.is_empty() {
                tokens.push(Token {
                    text: std::mem::take(&mut current),
                    position: start,
                });
            }
        } else {
            if current.is_empty() {
                start = pos;
            }
            current.extend(ch.to_lowercase());
        }
    }
    if !current.is_empty() {
        tokens.push(Token {
            text: current,
            position: start,
        });
    }
    tokens
}

const NUMBER_WORDS: [&str; 20] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

const ORDINAL_WORDS: [&str; 20] = [
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
    "eleventh", "twelfth", "thirteenth", "fourteenth", "fifteenth", "sixteenth", "seventeenth",
    "eighteenth", "nineteenth", "twentieth",
];

/// One-based cardinal: a word up to twenty or digits.
fn cardinal(word: &str) -> Option<u32> {
    if let Some(i) = NUMBER_WORDS.iter().position(|w| *w == word) {
        return Some(i as u32 + 1);
    }
    if word.chars().all(|c| c.is_ascii_digit()) && !word.is_empty() && word.len() <= 6 {
        return word.parse().ok();
    }
    None
}

/// One-based ordinal: `first`..`twentieth`, or `1st`, `2nd`, `3rd`, `4th`...
fn ordinal(word: &str) -> Option<u32> {
    if let Some(i) = ORDINAL_WORDS.iter().position(|w| *w == word) {
        return Some(i as u32 + 1);
    }
    let digits: String = word.chars().take_while(|c| c.is_ascii_digit()).collect();
    let suffix = &word[digits.len()..];
    let n: u32 = if digits.is_empty() || digits.len() > 6 {
        return None;
    } else {
        digits.parse().ok()?
    };
    let expected = match (n % 100, n % 10) {
        (11..=13, _) => "th",
        (_, 1) => "st",
        (_, 2) => "nd",
        (_, 3) => "rd",
        _ => "th",
    };
    (suffix == expected).then_some(n)
}

/// A note-name-shaped token: letter, optional accidental, optional octave,
/// optional plural `s`.
struct PitchWord {
    letter: char,
    accidental: Option<i32>,
    octave: Option<i32>,
    plural: bool,
}

fn pitch_word(word: &str) -> Option<PitchWord> {
    let mut chars = word.chars().peekable();
    let letter = chars.next().filter(|c| c.is_ascii_lowercase())?;
    let mut accidental = None;
    if let Some(&c) = chars.peek() {
        accidental = match c {
            '#' | '♯' => Some(1),
            'b' | '♭' => Some(-1),
            _ => None,
        };
        if accidental.is_some() {
            chars.next();
        }
    }
    let rest: String = chars.collect();
    let (octave, plural) = if rest.is_empty() {
        (None, false)
    } else if rest == "s" {
        (None, true)
    } else if let Ok(o) = rest.parse::<i32>() {
        if rest.len() > 3 {
            return None;
        }
        (Some(o), false)
    } else {
        return None;
    };
    Some(PitchWord {
        letter,
        accidental,
        octave,
        plural,
    })
}

fn letter_class(letter: char) -> Option<i32> {
    Some(match letter {
        'c' => 0,
        'd' => 2,
        'e' => 4,
        'f' => 5,
        'g' => 7,
        'a' => 9,
        'b' => 11,
        _ => return None,
    })
}

/// A spelled pitch: class offset from C before wrapping, plus octave.
struct Spelled {
    raw_class: i32,
    octave: Option<i32>,
    plural: bool,
}

impl Spelled {
    fn class(&self) -> u8 {
        self.raw_class.rem_euclid(12) as u8
    }

    /// Octave is carried over when the spelling crosses C (`B#3` is `C4`).
    fn spec(&self) -> Option<PitchSpec> {
        let oct = self.octave?;
        Some(PitchSpec {
            pc: self.raw_class.rem_euclid(12),
            oct: oct + self.raw_class.div_euclid(12),
        })
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end_position: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> Option<&str> {
        self.tokens.get(self.pos).map(|t| t.text.as_str())
    }

    fn peek_at(&self, offset: usize) -> Option<&str> {
        self.tokens.get(self.pos + offset).map(|t| t.text.as_str())
    }

    fn position(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end_position, |t| t.position)
    }

    fn fail<T>(&self, expected: &str) -> PResult<T> {
        Err(ParseError::CannotParse {
            position: self.position(),
            expected: expected.to_string(),
        })
    }

    fn eat(&mut self, word: &str) -> bool {
        if self.peek() == Some(word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_any(&mut self, words: &[&str]) -> bool {
        match self.peek() {
            Some(w) if words.contains(&w) => {
                self.pos += 1;
                true
            }
            _ => false,
        }
    }

    fn expect(&mut self, word: &str) -> PResult<()> {
        if self.eat(word) {
            Ok(())
        } else {
            self.fail(&format!("{word:?}"))
        }
    }

    fn expect_seq(&mut self, words: &[&str]) -> PResult<()> {
        words.iter().try_for_each(|w| self.expect(w))
    }

    fn finish(&self) -> PResult<()> {
        if self.pos == self.tokens.len() {
            Ok(())
        } else {
            self.fail("end of command")
        }
    }

    fn cardinal(&mut self) -> PResult<u32> {
        match self.peek().and_then(cardinal) {
            Some(n) => {
                self.pos += 1;
                Ok(n)
            }
            None => self.fail("a number"),
        }
    }

    /// One-based measure number, returned zero-based.
    fn measure_number(&mut self) -> PResult<u32> {
        match self.peek().and_then(cardinal) {
            Some(n) if n >= 1 => {
                self.pos += 1;
                Ok(n - 1)
            }
            _ => self.fail("a measure number (counting from one)"),
        }
    }

    fn pitch(&mut self, allow_plural: bool) -> PResult<Spelled> {
        let Some(tok) = self.tokens.get(self.pos).cloned() else {
            return self.fail("a note name");
        };
        let Some(word) = pitch_word(&tok.text) else {
            return self.fail("a note name");
        };
        let Some(base) = letter_class(word.letter) else {
            return Err(ParseError::UnknownNoteName {
                position: tok.position,
                name: tok.text.clone(),
            });
        };
        if word.plural && !allow_plural {
            return self.fail("a note name");
        }
        self.pos += 1;
        let mut accidental = word.accidental;
        let mut octave = word.octave;
        let mut plural = word.plural;
        if accidental.is_none() && octave.is_none() && !plural {
            let (acc, plural_word) = match self.peek() {
                Some("sharp") => (Some(1), false),
                Some("flat") => (Some(-1), false),
                Some("natural") => (Some(0), false),
                Some("sharps") if allow_plural => (Some(1), true),
                Some("flats") if allow_plural => (Some(-1), true),
                Some("naturals") if allow_plural => (Some(0), true),
                _ => (None, false),
            };
            if acc.is_some() {
                self.pos += 1;
                accidental = acc;
                plural = plural_word;
            }
        }
        if octave.is_none() && !plural {
            if let Some(o) = self.peek().and_then(|w| w.parse::<i32>().ok()).filter(|o| (-1..=10).contains(o)) {
                octave = Some(o);
                self.pos += 1;
            }
        }
        Ok(Spelled {
            raw_class: base + accidental.unwrap_or(0),
            octave,
            plural,
        })
    }

    /// `in measure N`, `on the ORD beat [of measure N]`, in either order.
    fn locators(&mut self, r: &mut NoteRef) -> PResult<()> {
        loop {
            match (self.peek(), self.peek_at(1)) {
                (Some("in"), Some("measure")) => {
                    if r.measure.is_some() {
                        return self.fail("a single measure");
                    }
                    self.pos += 2;
                    r.measure = Some(self.measure_number()?);
                }
                (Some("on"), Some("the")) if self.peek_at(2).and_then(ordinal).is_some() => {
                    if r.beat.is_some() {
                        return self.fail("a single beat");
                    }
                    self.pos += 2;
                    let n = ordinal(self.peek().unwrap_or_default()).unwrap_or(1);
                    self.pos += 1;
                    self.expect("beat")?;
                    r.beat = Some(n - 1);
                    if self.peek() == Some("of") {
                        if r.measure.is_some() {
                            return self.fail("a single measure");
                        }
                        self.pos += 1;
                        self.expect("measure")?;
                        r.measure = Some(self.measure_number()?);
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn referent(&mut self) -> PResult<Referent> {
        let mut r = NoteRef::default();
        let mut group = false;
        match self.peek() {
            Some("the") => {
                self.pos += 1;
                if self.eat("notes") {
                    group = true;
                } else {
                    let p = self.pitch(true)?;
                    if p.octave.is_some() {
                        return self.fail("a note name without octave");
                    }
                    r.pitch_class = Some(p.class());
                    r.plural = p.plural;
                }
            }
            Some("all") => {
                self.pos += 1;
                self.eat("the");
                if self.eat("notes") {
                    group = true;
                } else {
                    let p = self.pitch(true)?;
                    if !p.plural {
                        return self.fail("\"notes\" or a plural note name");
                    }
                    r.pitch_class = Some(p.class());
                    r.plural = true;
                }
            }
            Some("every") => {
                self.pos += 1;
                if self.eat("note") {
                    group = true;
                } else {
                    let p = self.pitch(false)?;
                    if p.octave.is_some() {
                        return self.fail("a note name without octave");
                    }
                    r.pitch_class = Some(p.class());
                    r.plural = true;
                }
            }
            _ => return self.fail("\"the\", \"all\" or \"every\""),
        }
        self.locators(&mut r)?;
        if group {
            return Ok(match (r.measure, r.beat) {
                (None, None) => Referent::AllRef,
                (Some(measure), None) => Referent::MeasureRef { measure },
                _ => Referent::NoteRef(NoteRef { plural: true, ..r }),
            });
        }
        Ok(Referent::NoteRef(r))
    }

    fn interval(&mut self) -> PResult<Magnitude> {
        let n = if self.eat_any(&["a", "an"]) { 1 } else { self.cardinal()? as i32 };
        let mag = match self.peek() {
            Some("half") => {
                self.pos += 1;
                self.expect_step()?;
                Magnitude::Semitones(n)
            }
            Some("semitones" | "semitone") => {
                self.pos += 1;
                Magnitude::Semitones(n)
            }
            Some("whole") => {
                self.pos += 1;
                self.expect_step()?;
                Magnitude::Semitones(2 * n)
            }
            Some("octaves" | "octave") => {
                self.pos += 1;
                Magnitude::Semitones(12 * n)
            }
            Some("scale") => {
                self.pos += 1;
                if !self.eat_any(&["degrees", "degree"]) {
                    return self.fail("\"degrees\"");
                }
                Magnitude::Degrees(n)
            }
            _ => return self.fail("\"half steps\", \"whole steps\", \"octaves\" or \"scale degrees\""),
        };
        match mag {
            Magnitude::Semitones(s) if s > 127 => self.fail("an interval of at most 127 half steps"),
            _ => Ok(mag),
        }
    }

    fn expect_step(&mut self) -> PResult<()> {
        if self.eat_any(&["steps", "step"]) {
            Ok(())
        } else {
            self.fail("\"steps\"")
        }
    }

    fn command(&mut self) -> PResult<CommandAst> {
        let ast = match self.peek() {
            Some("undo") => {
                self.pos += 1;
                CommandAst::bare(Action::Undo)
            }
            Some("show") => {
                self.pos += 1;
                if self.eat("the") {
                    self.expect("score")?;
                }
                CommandAst::bare(Action::Show)
            }
            Some("move") => {
                self.pos += 1;
                let referent = self.referent()?;
                let direction = if self.eat("up") {
                    Direction::Up
                } else if self.eat("down") {
                    Direction::Down
                } else {
                    return self.fail("\"up\" or \"down\"");
                };
                let magnitude = self.interval()?;
                CommandAst {
                    referent: Some(referent),
                    direction: Some(direction),
                    magnitude: Some(magnitude),
                    ..CommandAst::bare(Action::Move)
                }
            }
            Some("invert") => {
                self.pos += 1;
                let referent = self.referent()?;
                let axis = if self.eat("around") {
                    let p = self.pitch(false)?;
                    match p.spec() {
                        Some(spec) if spec.to_pitch().is_ok() => Some(spec),
                        _ => return self.fail("a pitch with octave, like G4"),
                    }
                } else {
                    None
                };
                CommandAst {
                    referent: Some(referent),
                    axis,
                    ..CommandAst::bare(Action::Invert)
                }
            }
            Some("reverse" | "retrograde") => {
                self.pos += 1;
                CommandAst {
                    referent: Some(self.referent()?),
                    ..CommandAst::bare(Action::Reverse)
                }
            }
            Some("delete" | "remove") => {
                self.pos += 1;
                let referent = self.referent()?;
                let mode = if self.eat("and") {
                    match self.peek() {
                        Some("close") => {
                            self.pos += 1;
                            self.expect_seq(&["the", "gap"])?;
                            DeleteMode::Shift
                        }
                        Some("leave") => {
                            self.pos += 1;
                            self.expect_seq(&["a", "rest"])?;
                            DeleteMode::AsRest
                        }
                        _ => return self.fail("\"close the gap\" or \"leave a rest\""),
                    }
                } else {
                    DeleteMode::AsRest
                };
                CommandAst {
                    referent: Some(referent),
                    delete_mode: Some(mode),
                    ..CommandAst::bare(Action::Delete)
                }
            }
            _ => return self.fail("\"move\", \"invert\", \"reverse\", \"delete\", \"undo\" or \"show\""),
        };
        self.finish()?;
        Ok(ast)
    }
}

/// Parses one command. Case-insensitive; a final period is optional.
pub fn parse_command(text: &str) -> Result<CommandAst, ParseError> {
    let tokens = tokenize(text);
    let end_position = content(text).chars().count();
    Parser {
        tokens,
        pos: 0,
        end_position,
    }
    .command()
}

/// Semitone count of an interval phrase such as `an octave` or `3 half steps`.
pub fn interval_to_semitones(phrase: &str) -> Result<i32, ParseError> {
    let mut p = Parser {
        tokens: tokenize(phrase),
        pos: 0,
        end_position: content(phrase).chars().count(),
    };
    match p.interval()? {
        Magnitude::Semitones(n) => {
            p.finish()?;
            Ok(n)
        }
        Magnitude::Degrees(_) => Err(ParseError::CannotParse {
            position: 0,
            expected: "a chromatic interval".into(),
        }),
    }
}

/// The select-then-operate pair a command translates to.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub pattern: Pattern,
    pub operation: OperationDescriptor,
    pub singular: bool,
}

impl Query {
    /// Compact rendering, e.g. `transpose(2, select(N((F,_), _, _, ...), m))`.
    pub fn echo(&self) -> String {
        self.operation.render(&format!("select({}, m)", self.pattern))
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.echo())
    }
}

fn referent_pattern(r: &Referent) -> NotePattern {
    let eq = |v: Option<f64>| v.map_or(FieldPattern::Any, FieldPattern::Eq);
    match r {
        Referent::NoteRef(n) => NotePattern {
            pitch_class: eq(n.pitch_class.map(f64::from)),
            measure: eq(n.measure.map(f64::from)),
            beat: eq(n.beat.map(f64::from)),
            ..NotePattern::default()
        },
        Referent::MeasureRef { measure } => NotePattern {
            measure: FieldPattern::Eq(f64::from(*measure)),
            ..NotePattern::default()
        },
        Referent::AllRef => NotePattern::default(),
    }
}

/// Translates an edit command; `undo` and `show` have no query.
pub fn to_query(ast: &CommandAst) -> Option<Query> {
    let referent = ast.referent.as_ref()?;
    let operation = match ast.action {
        Action::Undo | Action::Show => return None,
        Action::Move => {
            let sign = if ast.direction == Some(Direction::Down) { -1 } else { 1 };
            match ast.magnitude? {
                Magnitude::Semitones(n) => OperationDescriptor::transpose(sign * n),
                Magnitude::Degrees(n) => OperationDescriptor::transpose_diatonic(sign * n),
            }
        }
        Action::Invert => match ast.axis {
            Some(a) => OperationDescriptor::invert_at(a.pc, a.oct),
            None => OperationDescriptor::invert(),
        },
        Action::Reverse => OperationDescriptor::retrograde(),
        Action::Delete => match ast.delete_mode {
            Some(DeleteMode::Shift) => OperationDescriptor::delete_and_shift(),
            _ => OperationDescriptor::delete_as_rest(),
        },
    };
    Some(Query {
        pattern: Pattern::Note(referent_pattern(referent)),
        operation,
        singular: !referent.is_plural(),
    })
}
