//! The pieces behind the `scoretalk` binary: a line-oriented REPL, batch
//! application of commands, and format conversion.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::Path;

use scoretalk_core::ingest::{read_score_file, write_score_file, IngestError, SourceFormat};
use scoretalk_core::model::{Music, ScoreMeta};
use scoretalk_core::session::{Outcome, Session, Status};

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Ingest(String),
    Command(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Ingest(_) => 3,
            CliError::Command(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Ingest(m) | CliError::Command(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

fn ingest_error(path: &Path, e: IngestError) -> CliError {
    match e {
        IngestError::UnsupportedExtension(_) => CliError::Usage(format!("{}: {e}", path.display())),
        e => CliError::Ingest(format!("{}: {e}", path.display())),
    }
}

/// Reads a score, sending ingest warnings to `warn`.
pub fn load(path: &Path, warn: &mut dyn Write) -> Result<(Music, ScoreMeta), CliError> {
    let (music, meta, report) = read_score_file(path).map_err(|e| ingest_error(path, e))?;
    for w in &report.warnings {
        let _ = writeln!(warn, "warning: {w}");
    }
    Ok((music, meta))
}

fn check_output(path: &Path) -> Result<(), CliError> {
    match SourceFormat::from_path(path) {
        Ok(SourceFormat::Json | SourceFormat::Midi) => Ok(()),
        _ => Err(CliError::Usage(format!(
            "{}: output must end in .json, .mid or .midi",
            path.display()
        ))),
    }
}

fn save(path: &Path, music: &Music, meta: &ScoreMeta) -> Result<(), CliError> {
    write_score_file(path, music, meta).map_err(|e| ingest_error(path, e))
}

/// Applies `commands` in order and writes the result. Any ambiguity or
/// failed command stops the run before anything is written.
pub fn apply(input: &Path, commands: &[String], output: &Path, warn: &mut dyn Write) -> Result<Session, CliError> {
    check_output(output)?;
    let (music, meta) = load(input, warn)?;
    let mut session = Session::new(music, meta);
    for (i, text) in commands.iter().enumerate() {
        let o = session.apply_command(text);
        match o.status {
            Status::Applied | Status::Info => {}
            Status::Ambiguous => {
                return Err(CliError::Command(format!(
                    "command {}: ambiguous in batch mode: {} ({text:?})",
                    i + 1,
                    o.message
                )))
            }
            _ => return Err(CliError::Command(format!("command {}: {} ({text:?})", i + 1, o.message))),
        }
    }
    save(output, session.music(), session.meta())?;
    Ok(session)
}

pub fn convert(input: &Path, output: &Path, warn: &mut dyn Write) -> Result<(), CliError> {
    check_output(output)?;
    let (music, meta) = load(input, warn)?;
    save(output, &music, &meta)
}

/// Interactive loop over one session.
///
/// Every user line is answered by one or more `C:` lines. With `echo_input`
/// the user's text is repeated after the `U:` prompt, which makes piped
/// runs read as transcripts.
pub struct Repl<W: Write> {
    session: Option<Session>,
    out: W,
    echo_input: bool,
}

impl<W: Write> Repl<W> {
    pub fn new(session: Option<Session>, out: W, echo_input: bool) -> Self {
        Repl { session, out, echo_input }
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    pub fn into_output(self) -> W {
        self.out
    }

    pub fn run<R: BufRead>(&mut self, input: R) -> io::Result<()> {
        let mut lines = input.lines();
        loop {
            write!(self.out, "U: ")?;
            self.out.flush()?;
            let Some(line) = lines.next() else {
                writeln!(self.out)?;
                return Ok(());
            };
            let line = line?;
            let line = line.trim();
            if self.echo_input {
                writeln!(self.out, "{line}")?;
            }
            if line.is_empty() {
                continue;
            }
            if matches!(line, "quit" | "exit") {
                return Ok(());
            }
            self.handle(line)?;
        }
    }

    fn say(&mut self, text: &str) -> io::Result<()> {
        for l in text.lines() {
            writeln!(self.out, "C: {l}")?;
        }
        Ok(())
    }

    fn handle(&mut self, line: &str) -> io::Result<()> {
        if let Some(path) = line.strip_prefix("load ") {
            let mut warnings = Vec::new();
            let loaded = load(Path::new(path.trim()), &mut warnings);
            for w in String::from_utf8_lossy(&warnings).lines() {
                self.say(w)?;
            }
            return match loaded {
                Ok((music, meta)) => {
                    let n = music.note_count();
                    self.session = Some(Session::new(music, meta));
                    self.say(&format!("loaded {n} notes"))
                }
                Err(e) => self.say(&e.to_string()),
            };
        }
        let Some(session) = self.session.as_mut() else {
            return self.say("no score loaded; use load <path>");
        };
        if let Some(path) = line.strip_prefix("save ") {
            let path = Path::new(path.trim());
            let result = check_output(path).and_then(|_| save(path, session.music(), session.meta()));
            return match result {
                Ok(()) => self.say(&format!("saved {}", path.display())),
                Err(e) => self.say(&e.to_string()),
            };
        }
        let outcome = match line.parse::<usize>() {
            Ok(i) if session.has_pending() => session.resolve_choice(i),
            _ => session.apply_command(line),
        };
        self.report(&outcome)
    }

    fn report(&mut self, o: &Outcome) -> io::Result<()> {
        if let Some(echo) = &o.echo {
            self.say(echo)?;
        }
        self.say(&o.message)?;
        for c in &o.candidates {
            writeln!(self.out, "C:   [{}] {}", c.index, c.describe)?;
        }
        let undone = o.status == Status::Applied && o.message == "undone";
        if undone {
            if let Some(s) = &self.session {
                let view = scoretalk_core::render::piano_roll(s.music(), s.meta()).unwrap_or_default();
                self.say(&view)?;
            }
        }
        Ok(())
    }
}
