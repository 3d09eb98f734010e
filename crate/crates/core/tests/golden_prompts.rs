//! The nine reference stimuli render byte-exactly.

use std::fs;
use std::io::BufReader;
use std::path::PathBuf;

use moralunc::prompt::{render, PromptStyle};
use moralunc::scenario::{read_corpus, validate, Dimension};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/golden")
        .join(name)
}

fn golden_scenarios() -> Vec<moralunc::scenario::Scenario> {
    let f = fs::File::open(fixture("scenarios.jsonl")).unwrap();
    read_corpus(BufReader::new(f)).unwrap()
}

#[test]
fn all_nine_render_byte_exactly() {
    let scenarios = golden_scenarios();
    assert_eq!(scenarios.len(), 9);
    for s in &scenarios {
        let dim = s.dimension().unwrap();
        assert_eq!(dim.name(), s.id);
        let report = validate(s);
        assert!(report.is_valid(), "{}: {:?}", s.id, report.violations);

        let bundle = render(s, PromptStyle::Case).unwrap();
        let user = fs::read_to_string(fixture(&format!("{}.user.txt", s.id))).unwrap();
        let system = fs::read_to_string(fixture(&format!("{}.system.txt", s.id))).unwrap();
        assert_eq!(bundle.user, user, "user prompt for {}", s.id);
        assert_eq!(bundle.system, system, "system prompt for {}", s.id);
        assert_eq!(bundle.assistant_prefix, "Case");
    }
    let covered: Vec<_> = scenarios.iter().filter_map(|s| s.dimension()).collect();
    for d in Dimension::ALL {
        assert!(covered.contains(&d), "{d} missing");
    }
}

#[test]
fn age_and_species_phrases() {
    let scenarios = golden_scenarios();
    let by = |id: &str| scenarios.iter().find(|s| s.id == id).unwrap();
    let age = render(by("age"), PromptStyle::Case).unwrap();
    assert!(age
        .user
        .contains("This will result in the death of 2 girl, 1 boy and 2 women"));
    let species = render(by("species"), PromptStyle::Case).unwrap();
    assert!(species.user.contains("it will spare 2 cats"));
}

#[test]
fn option_paraphrase_differs_only_in_labels() {
    for s in golden_scenarios() {
        let case = render(&s, PromptStyle::Case).unwrap();
        let opt = render(&s, PromptStyle::Option).unwrap();
        let back = |t: &str| t.replace("Option A", "Case 1").replace("Option B", "Case 2");
        assert_eq!(back(&opt.user), case.user, "{}", s.id);
        assert_eq!(back(&opt.system), case.system, "{}", s.id);
        assert_ne!(opt.user, case.user);
        assert!(!opt.user.contains("Case 1") && !opt.user.contains("Case 2"));
    }
}
