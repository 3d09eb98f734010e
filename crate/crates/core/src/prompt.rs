//! Scenario → prompt text.
//!
//! Templates live in `templates/` as plain text with `{PLACEHOLDER}`
//! markers and `[section]` headers. The stimulus wording, including its
//! grammatical slips, is reproduced verbatim.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{validate, CharacterKind, Dimension, Legality, Manoeuvre, Scenario, Side};
use crate::seed::digest;

const SYSTEM: &str = include_str!("../templates/system.txt");
const STANDARD: &str = include_str!("../templates/standard.txt");
const INTERVENTION: &str = include_str!("../templates/intervention.txt");
const LAW: &str = include_str!("../templates/law.txt");
const SPECIES: &str = include_str!("../templates/species.txt");
const BARRIER: &str = include_str!("../templates/barrier.txt");

/// Text that opens every model answer.
pub const ASSISTANT_PREFIX: &str = "Case";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    /// "Case 1" / "Case 2".
    #[default]
    Case,
    /// "Option A" / "Option B" paraphrase.
    Option,
}

impl PromptStyle {
    pub fn labels(self) -> [&'static str; 2] {
        match self {
            PromptStyle::Case => ["Case 1", "Case 2"],
            PromptStyle::Option => ["Option A", "Option B"],
        }
    }

    /// Token the model emits after the prefix to pick case 1 / case 2.
    pub fn choice_tokens(self) -> [&'static str; 2] {
        match self {
            PromptStyle::Case => ["1", "2"],
            PromptStyle::Option => ["A", "B"],
        }
    }

    pub fn assistant_prefix(self) -> &'static str {
        match self {
            PromptStyle::Case => ASSISTANT_PREFIX,
            PromptStyle::Option => "Option",
        }
    }
}

impl std::str::FromStr for PromptStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case" => Ok(PromptStyle::Case),
            "option" => Ok(PromptStyle::Option),
            other => Err(Error::Parse(format!("unknown prompt style `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub assistant_prefix: String,
    pub template_version: String,
    pub style: PromptStyle,
}

impl PromptBundle {
    pub fn choice_tokens(&self) -> [&'static str; 2] {
        self.style.choice_tokens()
    }

    /// Single-string form for raw-completion endpoints: system, user and
    /// the assistant prefix, in that order.
    pub fn completion_text(&self) -> String {
        format!(
            "{}\n\n{}\n\n{}",
            self.system, self.user, self.assistant_prefix
        )
    }
}

/// Parsed `[section]` blocks of one template file.
struct Template {
    sections: BTreeMap<String, String>,
}

impl Template {
    fn parse(src: &str) -> Template {
        let mut sections = BTreeMap::new();
        let mut current: Option<String> = None;
        let mut body = String::new();
        for line in src.lines() {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if let Some(prev) = current.take() {
                    sections.insert(prev, body.trim_end().to_string());
                }
                current = Some(name.to_string());
                body.clear();
            } else {
                if !body.is_empty() {
                    body.push('\n');
                }
                body.push_str(line);
            }
        }
        if let Some(prev) = current {
            sections.insert(prev, body.trim_end().to_string());
        }
        Template { sections }
    }

    fn section(&self, name: &str) -> &str {
        self.sections
            .get(name)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("template section [{name}] missing"))
    }
}

struct Templates {
    standard: Template,
    intervention: Template,
    law: Template,
    species: Template,
    barrier: Template,
    version: String,
}

fn templates() -> &'static Templates {
    static CELL: OnceLock<Templates> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut all = String::new();
        for t in [SYSTEM, STANDARD, INTERVENTION, LAW, SPECIES, BARRIER] {
            all.push_str(t);
            all.push('\0');
        }
        Templates {
            standard: Template::parse(STANDARD),
            intervention: Template::parse(INTERVENTION),
            law: Template::parse(LAW),
            species: Template::parse(SPECIES),
            barrier: Template::parse(BARRIER),
            version: format!("mm-v1-{}", &digest(all.as_bytes())[..12]),
        }
    })
}

/// Version tag of the bundled templates; changes whenever any template
/// byte changes.
pub fn template_version() -> &'static str {
    &templates().version
}

fn pick_template(s: &Scenario) -> &'static Template {
    let t = templates();
    match s.dimension() {
        Some(Dimension::Intervention) => &t.intervention,
        Some(Dimension::Law) => &t.law,
        Some(Dimension::Species) => &t.species,
        Some(Dimension::RelationToAv) => &t.barrier,
        Some(_) => &t.standard,
        None if s.barrier => &t.barrier,
        None if s.is_active(Dimension::Law) => &t.law,
        None => &t.standard,
    }
}

/// "1 female doctor, 1 woman and 3 men": counts by kind in order of
/// first appearance.
pub fn describe_group(characters: &[CharacterKind]) -> Result<String> {
    if characters.is_empty() {
        return Err(Error::Empty("character group"));
    }
    if characters.len() > crate::scenario::MAX_GROUP {
        return Err(Error::InvalidArgument(format!(
            "group of {} exceeds {}",
            characters.len(),
            crate::scenario::MAX_GROUP
        )));
    }
    let mut counts: Vec<(CharacterKind, usize)> = Vec::new();
    for k in characters {
        match counts.iter_mut().find(|(kind, _)| kind == k) {
            Some((_, n)) => *n += 1,
            None => counts.push((*k, 1)),
        }
    }
    let parts: Vec<String> = counts
        .iter()
        .map(|(k, n)| {
            let noun = if *n == 1 { k.singular() } else { k.plural() };
            format!("{n} {noun}")
        })
        .collect();
    Ok(match parts.split_last() {
        Some((last, [])) => last.clone(),
        Some((last, rest)) => format!("{} and {last}", rest.join(", ")),
        None => unreachable!("non-empty checked above"),
    })
}

fn legality_clause(t: &Template, l: Legality) -> &str {
    match l {
        Legality::GreenSignal => t.section("green"),
        Legality::RedSignal => t.section("red"),
        Legality::None => "",
    }
}

fn fill(block: &str, vars: &[(&str, &str)]) -> String {
    let mut out = block.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Render a valid scenario into system/user text plus assistant prefix.
pub fn render(s: &Scenario, style: PromptStyle) -> Result<PromptBundle> {
    validate(s).into_result(&s.id)?;
    let t = pick_template(s);
    let path = s.side(s.path_side());
    let other = s.side(s.other_lane_side());
    let path_text = describe_group(&path.characters)?;
    let other_text = describe_group(&other.characters)?;
    let (path_who, other_who) = if t.sections.contains_key("green") {
        (
            legality_clause(t, path.legality),
            legality_clause(t, other.legality),
        )
    } else {
        ("", "")
    };
    let vars = [
        ("PATH", path_text.as_str()),
        ("OTHER", other_text.as_str()),
        ("PATH_WHO", path_who),
        ("OTHER_WHO", other_who),
    ];
    let block = |m: Manoeuvre| {
        let name = match m {
            Manoeuvre::Continue => "continue",
            Manoeuvre::Swerve => "swerve",
        };
        fill(t.section(name), &vars)
    };
    let [l1, l2] = style.labels();
    let user = format!(
        "{l1}.\n{}\n\n{l2}.\n{}",
        block(s.manoeuvre_for_case(0)),
        block(s.manoeuvre_for_case(1))
    );
    let system = fill(SYSTEM.trim_end(), &[("LABEL1", l1), ("LABEL2", l2)]);
    Ok(PromptBundle {
        system,
        user,
        assistant_prefix: style.assistant_prefix().to_string(),
        template_version: template_version().to_string(),
        style,
    })
}

/// Case index (0 = first listed) whose outcome spares `side`.
pub fn case_for_side(s: &Scenario, side: Side) -> usize {
    s.case_sparing(side)
}
