//! Random fence documents with their expected extraction, built independently
//! of the extractor.

use proptest::prelude::*;

#[derive(Debug, Clone)]
pub enum Part {
    Prose(Vec<String>),
    Block {
        indent: String,
        tag: String,
        lines: Vec<String>,
        closer: String,
    },
}

#[derive(Debug, Clone)]
pub struct FenceDoc {
    pub parts: Vec<Part>,
    /// Leave the last block without a closing fence.
    pub unclosed_tail: bool,
    pub trailing_newline: bool,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Expected {
    Empty,
    Whole(String),
    Fenced {
        source: String,
        languages: Vec<String>,
    },
}

impl FenceDoc {
    fn last_block(&self) -> Option<usize> {
        self.parts.iter().rposition(|p| matches!(p, Part::Block { .. }))
    }

    pub fn render(&self) -> String {
        let open_tail = self.unclosed_tail.then(|| self.last_block()).flatten();
        let mut lines: Vec<String> = Vec::new();
        for (i, part) in self.parts.iter().enumerate() {
            match part {
                Part::Prose(prose) => lines.extend(prose.iter().cloned()),
                Part::Block { indent, tag, lines: body, closer } => {
                    lines.push(format!("{indent}```{tag}"));
                    lines.extend(body.iter().cloned());
                    if open_tail != Some(i) {
                        lines.push(closer.clone());
                    }
                }
            }
            // Nothing may follow an unclosed block.
            if open_tail == Some(i) {
                break;
            }
        }
        let mut doc: String = lines.iter().map(|l| format!("{l}\n")).collect();
        // An empty last line only exists if its terminator stays.
        if !self.trailing_newline && lines.last().is_some_and(|l| !l.is_empty()) {
            doc.pop();
        }
        doc
    }

    /// Blocks' lines, each newline-terminated, blocks joined by a blank line.
    pub fn expected(&self) -> Expected {
        let doc = self.render();
        if doc.trim().is_empty() {
            return Expected::Empty;
        }
        let open_tail = self.unclosed_tail.then(|| self.last_block()).flatten();
        let mut chunks = Vec::new();
        let mut languages = Vec::new();
        for (i, part) in self.parts.iter().enumerate() {
            if let Part::Block { tag, lines, .. } = part {
                let mut chunk = String::new();
                for line in lines {
                    chunk.push_str(line);
                    chunk.push('\n');
                }
                chunks.push(chunk);
                languages.push(tag.trim().to_string());
            }
            if open_tail == Some(i) {
                break;
            }
        }
        if chunks.is_empty() {
            return Expected::Whole(doc);
        }
        let source = chunks.join("\n");
        if source.trim().is_empty() {
            return Expected::Empty;
        }
        Expected::Fenced { source, languages }
    }
}

/// Non-empty `source` lines occur among `doc` lines in the same order.
pub fn lines_in_order(source: &str, doc: &str) -> bool {
    let mut doc_lines = doc.lines();
    source
        .lines()
        .filter(|l| !l.is_empty())
        .all(|needle| doc_lines.any(|l| l == needle))
}

fn prose_line() -> impl Strategy<Value = String> {
    prop_oneof![
        "[A-Za-z][A-Za-z0-9 .,:'()=]{0,30}",
        Just(String::new()),
        Just("Use `x` inline, not ``y``.".to_string()),
        Just("   indented prose".to_string()),
    ]
}

fn code_line() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z_]{1,8} = [0-9]{1,3}",
        "    return [a-z]{1,6}",
        Just(String::new()),
        Just("# comment".to_string()),
        Just("print(`x`)".to_string()),
        Just("```python".to_string()),
        Just("s = '``'".to_string()),
        Just("  ``` not a closer".to_string()),
    ]
}

fn tag() -> impl Strategy<Value = String> {
    prop_oneof![
        Just(String::new()),
        Just("python".to_string()),
        Just("py".to_string()),
        Just("bash".to_string()),
        Just(" python ".to_string()),
    ]
}

fn closer() -> impl Strategy<Value = String> {
    ("[ ]{0,3}", 3usize..6, "[ \t]{0,2}").prop_map(|(lead, n, trail)| format!("{lead}{}{trail}", "`".repeat(n)))
}

fn part() -> impl Strategy<Value = Part> {
    prop_oneof![
        prop::collection::vec(prose_line(), 1..4).prop_map(Part::Prose),
        ("[ ]{0,2}", tag(), prop::collection::vec(code_line(), 0..6), closer()).prop_map(
            |(indent, tag, lines, closer)| Part::Block {
                indent,
                tag,
                lines,
                closer,
            }
        ),
    ]
}

pub fn fence_doc() -> impl Strategy<Value = FenceDoc> {
    (prop::collection::vec(part(), 0..6), any::<bool>(), any::<bool>()).prop_map(
        |(parts, unclosed_tail, trailing_newline)| FenceDoc {
            parts,
            unclosed_tail,
            trailing_newline,
        },
    )
}
