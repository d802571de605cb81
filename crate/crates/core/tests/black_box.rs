//! The student side of the pipeline must only ever see teacher probabilities.
//! These checks scan the sources that implement training for any reference to
//! the generative model or the Bayes posterior behind the in-process teacher.

use std::fs;
use std::path::Path;

const STUDENT_SIDE: &[&str] = &[
    "src/pipeline/train.rs",
    "src/pipeline/cache.rs",
    "src/pseudolabel.rs",
    "src/refine.rs",
    "src/student/mod.rs",
    "src/student/model.rs",
    "src/student/loss.rs",
    "src/student/augment.rs",
    "src/student/optim.rs",
    "src/student/params.rs",
];

const FORBIDDEN: &[&str] = &[
    "DomainSpec",
    "bayes",
    "class_means",
    "benchmark::",
    "InProcessTeacher",
    "make_shifted_domain",
    "generate_dataset",
    ".priors",
    ".sigma",
];

fn non_test_source(rel: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(rel);
    let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    match text.find("#[cfg(test)]") {
        Some(i) => text[..i].to_string(),
        None => text,
    }
}

#[test]
fn student_side_never_names_the_generative_model() {
    for rel in STUDENT_SIDE {
        let src = non_test_source(rel);
        for word in FORBIDDEN {
            assert!(!src.contains(word), "{rel} mentions `{word}`");
        }
    }
}

#[test]
fn training_loop_imports_only_scene_samples_from_domain() {
    let src = non_test_source("src/pipeline/train.rs");
    let domain_imports: Vec<&str> = src.lines().filter(|l| l.contains("crate::domain")).collect();
    assert_eq!(domain_imports, ["use crate::domain::SceneSample;"]);
}

#[test]
fn training_labels_are_read_only_by_evaluation() {
    let src = non_test_source("src/pipeline/train.rs");
    let eval_start = src.find("pub fn evaluate").expect("evaluate exists");
    let eval_end = eval_start + src[eval_start..].find("\n}\n").expect("evaluate ends");
    let outside = format!("{}{}", &src[..eval_start], &src[eval_end..]);
    assert!(!outside.contains(".labels"), "labels used outside evaluate");
}
