//! The two-field ReAct text format exchanged with policies and teachers:
//!
//! ```text
//! Thought: <free text, may span lines>
//! Action: <single line>
//! ```
//!
//! Markers are case-sensitive and must open a line (leading whitespace is
//! tolerated). Text before the `Thought:` line or after the `Action:` line is
//! discarded and reported through [`ParsedReact::lenient`].

pub const THOUGHT_MARKER: &str = "Thought:";
pub const ACTION_MARKER: &str = "Action:";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Thought,
    Action,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MalformedReact {
    #[error("missing `{}` marker", marker_of(*.0))]
    MissingMarker(Field),
    #[error("{0:?} field is empty")]
    EmptyField(Field),
    #[error("`Action:` appears before `Thought:`")]
    OutOfOrder,
    #[error("more than one `{}` marker before the action", marker_of(*.0))]
    DuplicateMarker(Field),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvalidField {
    #[error("{0:?} is empty")]
    Empty(Field),
    #[error("action spans more than one line")]
    MultiLineAction,
    #[error("{0:?} contains a line starting with a ReAct marker")]
    EmbeddedMarker(Field),
}

fn marker_of(f: Field) -> &'static str {
    match f {
        Field::Thought => THOUGHT_MARKER,
        Field::Action => ACTION_MARKER,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedReact {
    pub thought: String,
    pub action: String,
    /// Set when content outside the two fields was dropped.
    pub lenient: bool,
}

fn marker_line(line: &str) -> Option<(Field, &str)> {
    let l = line.trim_start();
    if let Some(rest) = l.strip_prefix(THOUGHT_MARKER) {
        Some((Field::Thought, rest))
    } else {
        l.strip_prefix(ACTION_MARKER).map(|rest| (Field::Action, rest))
    }
}

pub fn parse_react(text: &str) -> Result<ParsedReact, MalformedReact> {
    let lines: Vec<&str> = text.lines().collect();
    let find = |f: Field| {
        lines
            .iter()
            .position(|l| matches!(marker_line(l), Some((g, _)) if g == f))
    };
    let t_at = find(Field::Thought);
    let a_at = find(Field::Action);
    let (t_at, a_at) = match (t_at, a_at) {
        (None, _) => return Err(MalformedReact::MissingMarker(Field::Thought)),
        (Some(_), None) => return Err(MalformedReact::MissingMarker(Field::Action)),
        (Some(t), Some(a)) if a < t => return Err(MalformedReact::OutOfOrder),
        (Some(t), Some(a)) => (t, a),
    };
    if lines[t_at + 1..a_at]
        .iter()
        .any(|l| matches!(marker_line(l), Some((Field::Thought, _))))
    {
        return Err(MalformedReact::DuplicateMarker(Field::Thought));
    }

    let (_, first) = marker_line(lines[t_at]).expect("located above");
    let mut thought = first.to_string();
    for l in &lines[t_at + 1..a_at] {
        thought.push('\n');
        thought.push_str(l);
    }
    let thought = thought.trim().to_string();
    if thought.is_empty() {
        return Err(MalformedReact::EmptyField(Field::Thought));
    }
    let (_, action) = marker_line(lines[a_at]).expect("located above");
    let action = action.trim().to_string();
    if action.is_empty() {
        return Err(MalformedReact::EmptyField(Field::Action));
    }

    let lenient = lines[..t_at]
        .iter()
        .chain(&lines[a_at + 1..])
        .any(|l| !l.trim().is_empty());
    Ok(ParsedReact {
        thought,
        action,
        lenient,
    })
}

/// Renders the two-field template. Fields are trimmed; the rendered text always
/// parses back to the trimmed pair.
pub fn render_react(thought: &str, action: &str) -> Result<String, InvalidField> {
    let thought = thought.trim();
    let action = action.trim();
    if thought.is_empty() {
        return Err(InvalidField::Empty(Field::Thought));
    }
    if action.is_empty() {
        return Err(InvalidField::Empty(Field::Action));
    }
    if action.contains(['\n', '\r']) {
        return Err(InvalidField::MultiLineAction);
    }
    if thought.lines().skip(1).any(|l| marker_line(l).is_some()) {
        return Err(InvalidField::EmbeddedMarker(Field::Thought));
    }
    Ok(format!("{THOUGHT_MARKER} {thought}\n{ACTION_MARKER} {action}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_template() {
        let p = parse_react("Thought: I should search first.\nAction: search[red shoes]").unwrap();
        assert_eq!(p.thought, "I should search first.");
        assert_eq!(p.action, "search[red shoes]");
        assert!(!p.lenient);
    }

    #[test]
    fn missing_thought() {
        assert_eq!(
            parse_react("Action: go north"),
            Err(MalformedReact::MissingMarker(Field::Thought))
        );
    }

    #[test]
    fn trailing_content_is_lenient() {
        let p = parse_react("Thought: t\nAction: a\nExtra: x").unwrap();
        assert_eq!((p.thought.as_str(), p.action.as_str()), ("t", "a"));
        assert!(p.lenient);
    }

    #[test]
    fn multi_line_thought_and_indentation() {
        let p = parse_react("  Thought: first\nsecond line\n   Action:  open drawer 1  ").unwrap();
        assert_eq!(p.thought, "first\nsecond line");
        assert_eq!(p.action, "open drawer 1");
    }

    #[test]
    fn markers_are_case_sensitive() {
        assert_eq!(
            parse_react("thought: x\naction: y"),
            Err(MalformedReact::MissingMarker(Field::Thought))
        );
    }

    #[test]
    fn malformed_classes() {
        assert_eq!(
            parse_react("Thought: x"),
            Err(MalformedReact::MissingMarker(Field::Action))
        );
        assert_eq!(
            parse_react("Thought:   \nAction: a"),
            Err(MalformedReact::EmptyField(Field::Thought))
        );
        assert_eq!(
            parse_react("Thought: t\nAction:\ngo"),
            Err(MalformedReact::EmptyField(Field::Action))
        );
        assert_eq!(parse_react("Action: a\nThought: t"), Err(MalformedReact::OutOfOrder));
        assert_eq!(
            parse_react("Thought: a\nThought: b\nAction: c"),
            Err(MalformedReact::DuplicateMarker(Field::Thought))
        );
    }

    #[test]
    fn renders_template() {
        assert_eq!(
            render_react("check the drawer", "open drawer 1").unwrap(),
            "Thought: check the drawer\nAction: open drawer 1"
        );
        assert_eq!(render_react("x", "a\nb"), Err(InvalidField::MultiLineAction));
        assert_eq!(render_react(" ", "a"), Err(InvalidField::Empty(Field::Thought)));
        assert_eq!(
            render_react("x\nAction: sneaky", "a"),
            Err(InvalidField::EmbeddedMarker(Field::Thought))
        );
    }

    // Independent classifier for the enumeration oracle: works on a token
    // sequence instead of raw text.
    #[derive(Clone, Copy, Debug)]
    enum Tok {
        T(&'static str),
        A(&'static str),
        Other(&'static str),
        Blank,
    }

    fn oracle(toks: &[Tok]) -> Result<(String, String, bool), &'static str> {
        let t = toks.iter().position(|k| matches!(k, Tok::T(_)));
        let a = toks.iter().position(|k| matches!(k, Tok::A(_)));
        let (t, a) = match (t, a) {
            (None, _) => return Err("missing-thought"),
            (_, None) => return Err("missing-action"),
            (Some(t), Some(a)) if a < t => return Err("order"),
            (Some(t), Some(a)) => (t, a),
        };
        if toks[t + 1..a].iter().any(|k| matches!(k, Tok::T(_))) {
            return Err("duplicate");
        }
        let mut parts: Vec<&str> = vec![];
        if let Tok::T(s) = toks[t] {
            parts.push(s);
        }
        for k in &toks[t + 1..a] {
            parts.push(match k {
                Tok::Other(s) => s,
                _ => "",
            });
        }
        let thought = parts.join("\n").trim().to_string();
        if thought.is_empty() {
            return Err("empty-thought");
        }
        let action = match toks[a] {
            Tok::A(s) => s.trim().to_string(),
            _ => unreachable!(),
        };
        if action.is_empty() {
            return Err("empty-action");
        }
        let extra = toks[..t]
            .iter()
            .chain(&toks[a + 1..])
            .any(|k| matches!(k, Tok::T(_) | Tok::A(_) | Tok::Other(_)));
        Ok((thought, action, extra))
    }

    fn text_of(toks: &[Tok]) -> String {
        toks.iter()
            .map(|k| match k {
                Tok::T(s) => format!("Thought:{s}"),
                Tok::A(s) => format!("Action:{s}"),
                Tok::Other(s) => s.to_string(),
                Tok::Blank => String::new(),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn diag(e: &MalformedReact) -> &'static str {
        match e {
            MalformedReact::MissingMarker(Field::Thought) => "missing-thought",
            MalformedReact::MissingMarker(Field::Action) => "missing-action",
            MalformedReact::OutOfOrder => "order",
            MalformedReact::DuplicateMarker(_) => "duplicate",
            MalformedReact::EmptyField(Field::Thought) => "empty-thought",
            MalformedReact::EmptyField(Field::Action) => "empty-action",
        }
    }

    #[test]
    fn exhaustive_marker_permutations_match_oracle() {
        let alphabet = [
            Tok::T(" t"),
            Tok::T(""),
            Tok::A(" a"),
            Tok::A(" "),
            Tok::Other("x"),
            Tok::Blank,
        ];
        let mut checked = 0;
        for len in 0..=5u32 {
            for code in 0..alphabet.len().pow(len) {
                let mut c = code;
                let toks: Vec<Tok> = (0..len)
                    .map(|_| {
                        let k = alphabet[c % alphabet.len()];
                        c /= alphabet.len();
                        k
                    })
                    .collect();
                let text = text_of(&toks);
                let got = parse_react(&text)
                    .map(|p| (p.thought, p.action, p.lenient))
                    .map_err(|e| diag(&e));
                assert_eq!(got, oracle(&toks), "input {text:?}");
                checked += 1;
            }
        }
        assert_eq!(checked, 1 + 6 + 36 + 216 + 1296 + 7776);
    }

    fn field() -> impl Strategy<Value = String> {
        "[ -~]{1,40}".prop_filter("non-blank", |s| !s.trim().is_empty())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn render_then_parse_is_identity(t in field(), a in field()) {
            let text = render_react(&t, &a).unwrap();
            let p = parse_react(&text).unwrap();
            prop_assert_eq!(p.thought, t.trim());
            prop_assert_eq!(p.action, a.trim());
            prop_assert!(!p.lenient);
        }

        #[test]
        fn parse_is_total(s in "\\PC*|(Thought:|Action:|\n| |x)*") {
            let _ = parse_react(&s);
        }
    }
}
