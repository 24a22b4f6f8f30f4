//! Micro-F1 and the four-way error taxonomy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{candidate_set_for, CandidateSet, EntityCatalog};
use crate::decoder::LinkResult;
use crate::normalize::normalize_name;
use crate::preprocess::{MentionInstance, Task};

pub const REPORT_SCHEMA: &str = "DMEVAL/1";
pub const CONVENTION: &str = "micro P/R/F1; TP = non-nil prediction equal to non-nil gold after NFC and whitespace \
normalization; P = TP / non-nil predictions; R = TP / non-nil golds; nil-nil pairs enter neither denominator; \
a zero denominator gives 0 unless both are zero, which gives 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Correct,
    RetrievalError,
    Misidentification,
    OverPrediction,
    UnderPrediction,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::Correct,
        ErrorCategory::RetrievalError,
        ErrorCategory::Misidentification,
        ErrorCategory::OverPrediction,
        ErrorCategory::UnderPrediction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Correct => "correct",
            ErrorCategory::RetrievalError => "retrieval_error",
            ErrorCategory::Misidentification => "misidentification",
            ErrorCategory::OverPrediction => "over_prediction",
            ErrorCategory::UnderPrediction => "under_prediction",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// P, R and F1 from true positives and the non-nil prediction and gold counts.
pub fn prf_from_counts(tp: usize, predicted: usize, gold: usize) -> Prf {
    if predicted == 0 && gold == 0 {
        return Prf { precision: 1.0, recall: 1.0, f1: 1.0 };
    }
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, gold);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Prf { precision, recall, f1 }
}

fn same(a: &str, b: &str) -> bool {
    a == b || normalize_name(a) == normalize_name(b)
}

/// Micro P/R/F1 over (prediction, gold) pairs; `None` is nil.
pub fn micro_f1<P, G>(pairs: &[(Option<P>, Option<G>)]) -> Prf
where
    P: AsRef<str>,
    G: AsRef<str>,
{
    let mut tp = 0;
    let mut predicted = 0;
    let mut gold = 0;
    for (p, g) in pairs {
        predicted += p.is_some() as usize;
        gold += g.is_some() as usize;
        if let (Some(p), Some(g)) = (p, g) {
            tp += same(p.as_ref(), g.as_ref()) as usize;
        }
    }
    prf_from_counts(tp, predicted, gold)
}

/// Buckets one prediction. Precedence: correct, retrieval error,
/// over/under-prediction, misidentification.
pub fn classify_error(prediction: Option<&str>, gold: Option<&str>, candidates: &CandidateSet) -> ErrorCategory {
    classify(prediction, gold, |g| candidates.contains(g))
}

fn classify(prediction: Option<&str>, gold: Option<&str>, in_candidates: impl Fn(&str) -> bool) -> ErrorCategory {
    match (prediction, gold) {
        (None, None) => ErrorCategory::Correct,
        (Some(p), Some(g)) if same(p, g) => ErrorCategory::Correct,
        (_, Some(g)) if !in_candidates(g) => ErrorCategory::RetrievalError,
        (Some(_), None) => ErrorCategory::OverPrediction,
        (None, Some(_)) => ErrorCategory::UnderPrediction,
        (Some(_), Some(_)) => ErrorCategory::Misidentification,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub instances: usize,
    pub precision: f64,
    pub recall: f64,
    pub micro_f1: f64,
    pub counts: BTreeMap<ErrorCategory, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub convention: String,
    pub instances: usize,
    pub precision: f64,
    pub recall: f64,
    pub micro_f1: f64,
    pub counts: BTreeMap<ErrorCategory, usize>,
    pub per_task: BTreeMap<Task, TaskReport>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("result id {0:?} does not occur in the dataset")]
    UnknownId(String),
    #[error("dataset instance {0:?} has no result")]
    MissingResult(String),
    #[error("result id {0:?} appears more than once")]
    DuplicateResult(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One graded instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Graded {
    pub id: String,
    pub task: Task,
    pub prediction: Option<String>,
    pub gold: Option<String>,
    pub category: ErrorCategory,
}

#[derive(Default)]
struct Tally {
    instances: usize,
    tp: usize,
    predicted: usize,
    gold: usize,
    counts: BTreeMap<ErrorCategory, usize>,
}

impl Tally {
    fn add(&mut self, g: &Graded) {
        self.instances += 1;
        self.predicted += g.prediction.is_some() as usize;
        self.gold += g.gold.is_some() as usize;
        self.tp += (g.gold.is_some() && g.category == ErrorCategory::Correct) as usize;
        *self.counts.entry(g.category).or_default() += 1;
    }

    fn report(&self) -> TaskReport {
        let prf = prf_from_counts(self.tp, self.predicted, self.gold);
        let mut counts: BTreeMap<ErrorCategory, usize> = ErrorCategory::ALL.iter().map(|&c| (c, 0)).collect();
        counts.extend(self.counts.iter().map(|(&c, &n)| (c, n)));
        TaskReport { instances: self.instances, precision: prf.precision, recall: prf.recall, micro_f1: prf.f1, counts }
    }
}

/// Aligns `results` with `dataset` by id and grades each instance, in
/// dataset order. Instances without explicit candidates are graded against
/// the whole catalog.
pub fn grade(
    results: &[LinkResult],
    dataset: &[MentionInstance],
    catalog: &EntityCatalog,
) -> Result<Vec<Graded>, EvalError> {
    let known: HashSet<&str> = dataset.iter().map(|i| i.id.as_str()).collect();
    let mut by_id: HashMap<&str, &LinkResult> = HashMap::with_capacity(results.len());
    for r in results {
        if !known.contains(r.instance_id.as_str()) {
            return Err(EvalError::UnknownId(r.instance_id.clone()));
        }
        if by_id.insert(&r.instance_id, r).is_some() {
            return Err(EvalError::DuplicateResult(r.instance_id.clone()));
        }
    }
    let catalog_names: HashSet<String> = catalog.entries().iter().map(|e| e.name.clone()).collect();
    dataset
        .iter()
        .map(|inst| {
            let r = by_id.get(inst.id.as_str()).ok_or_else(|| EvalError::MissingResult(inst.id.clone()))?;
            let gold = inst.gold.as_deref().map(normalize_name);
            let prediction = r.prediction.as_deref().map(normalize_name);
            let category = match candidate_set_for(inst, catalog) {
                Ok(cs) => classify_error(prediction.as_deref(), gold.as_deref(), &cs),
                Err(_) => classify(prediction.as_deref(), gold.as_deref(), |g| catalog_names.contains(g)),
            };
            Ok(Graded { id: inst.id.clone(), task: inst.task, prediction, gold, category })
        })
        .collect()
}

pub fn aggregate(graded: &[Graded]) -> EvalReport {
    let mut all = Tally::default();
    let mut tasks: BTreeMap<Task, Tally> = BTreeMap::new();
    for g in graded {
        all.add(g);
        tasks.entry(g.task).or_default().add(g);
    }
    let total = all.report();
    EvalReport {
        schema: REPORT_SCHEMA.to_string(),
        convention: CONVENTION.to_string(),
        instances: total.instances,
        precision: total.precision,
        recall: total.recall,
        micro_f1: total.micro_f1,
        counts: total.counts,
        per_task: tasks.iter().map(|(&t, tally)| (t, tally.report())).collect(),
    }
}

pub fn evaluate(
    results: &[LinkResult],
    dataset: &[MentionInstance],
    catalog: &EntityCatalog,
) -> Result<EvalReport, EvalError> {
    Ok(aggregate(&grade(results, dataset, catalog)?))
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let line = |s: &mut String, label: &str, r: &TaskReport| {
            s.push_str(&format!(
                "{label}\n  instances  {}\n  precision  {:.4}\n  recall     {:.4}\n  micro F1   {:.4}\n",
                r.instances, r.precision, r.recall, r.micro_f1
            ));
            for c in ErrorCategory::ALL {
                s.push_str(&format!("  {:<18} {}\n", c.as_str(), r.counts.get(&c).copied().unwrap_or(0)));
            }
        };
        s.push_str(&format!("{}\n{}\n\n", self.schema, self.convention));
        let overall = TaskReport {
            instances: self.instances,
            precision: self.precision,
            recall: self.recall,
            micro_f1: self.micro_f1,
            counts: self.counts.clone(),
        };
        line(&mut s, "overall", &overall);
        for (task, r) in &self.per_task {
            s.push('\n');
            line(&mut s, task.as_str(), r);
        }
        s
    }
}

/// Paths written by [`emit_report`].
pub fn report_paths(out: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut p = out.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    };
    (with(".json"), with(".txt"))
}

/// Grades and writes `<out>.json` and `<out>.txt`. Nothing is written when
/// grading fails, and each file appears atomically via rename.
pub fn emit_report(
    results: &[LinkResult],
    dataset: &[MentionInstance],
    catalog: &EntityCatalog,
    out: &Path,
) -> Result<EvalReport, EvalError> {
    let report = evaluate(results, dataset, catalog)?;
    let (json_path, text_path) = report_paths(out);
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_atomic(&json_path, json.as_bytes())?;
    write_atomic(&text_path, report.to_text().as_bytes())?;
    Ok(report)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::EntityRecord;
    use crate::decoder::ScoredEntity;
    use crate::preprocess::Span;
    use proptest::prelude::*;

    fn cs(names: &[&str]) -> CandidateSet {
        CandidateSet::new("m", names.iter().map(|s| s.to_string()).collect(), true).unwrap()
    }

    #[test]
    fn f1_examples() {
        let all: Vec<(Option<&str>, Option<&str>)> = vec![(Some("A"), Some("A")), (Some("B"), Some("B"))];
        assert_eq!(micro_f1(&all).f1, 1.0);
        let half = vec![(Some("A"), Some("A")), (Some("C"), Some("B"))];
        assert_eq!(micro_f1(&half), Prf { precision: 0.5, recall: 0.5, f1: 0.5 });
        let nils: Vec<(Option<&str>, Option<&str>)> = vec![(None, Some("A")), (None, Some("B"))];
        assert_eq!(micro_f1(&nils), Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
        let nil_nil: Vec<(Option<&str>, Option<&str>)> = vec![(None, None), (Some("A"), Some("A"))];
        assert_eq!(micro_f1(&nil_nil).f1, 1.0);
        let spacing = vec![(Some("Manchester  City"), Some("Manchester City"))];
        assert_eq!(micro_f1(&spacing).f1, 1.0);
    }

    #[test]
    fn taxonomy_cases() {
        let c = cs(&["Histopathology", "Pathology"]);
        assert_eq!(classify_error(None, Some("Histopathology"), &c), ErrorCategory::UnderPrediction);
        let c = cs(&["Pilgrims ( Plymouth Colony )", "Pilgrim"]);
        assert_eq!(classify_error(Some("Pilgrims ( Plymouth Colony )"), None, &c), ErrorCategory::OverPrediction);
        let c = cs(&["Alpine Skiing World Cup", "Europa Cup"]);
        assert_eq!(classify_error(Some("Europa Cup"), Some("Nor-Am Cup"), &c), ErrorCategory::RetrievalError);
        assert_eq!(classify_error(None, Some("Nor-Am Cup"), &c), ErrorCategory::RetrievalError);
        assert_eq!(classify_error(Some("Europa Cup"), Some("Alpine Skiing World Cup"), &c), ErrorCategory::Misidentification);
        assert_eq!(classify_error(Some("Europa Cup"), Some("Europa Cup"), &c), ErrorCategory::Correct);
        assert_eq!(classify_error(None, None, &c), ErrorCategory::Correct);
    }

    fn instance(id: &str, gold: Option<&str>, candidates: Option<&[&str]>) -> MentionInstance {
        MentionInstance {
            id: id.into(),
            text: "x".into(),
            mention: Span { start: 0, end: 1 },
            table: None,
            image_ref: None,
            candidates: candidates.map(|c| c.iter().map(|s| s.to_string()).collect()),
            gold: gold.map(str::to_string),
            task: Task::EntityLinking,
        }
    }

    fn result(id: &str, pred: Option<&str>) -> LinkResult {
        let topk = pred.map(|p| vec![ScoredEntity { entity: p.into(), score: -1.0 }]).unwrap_or_default();
        let mut r = LinkResult::from_ranking(id, topk);
        r.prediction = pred.map(str::to_string);
        r
    }

    fn catalog(names: &[&str]) -> EntityCatalog {
        EntityCatalog::from_entries(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| EntityRecord { id: format!("Q{i}"), name: n.to_string(), aliases: vec![] })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_correct_instance() {
        let r = evaluate(&[result("a", Some("A"))], &[instance("a", Some("A"), Some(&["A", "B"]))], &catalog(&[]))
            .unwrap();
        assert_eq!(r.micro_f1, 1.0);
        assert_eq!(r.counts[&ErrorCategory::Correct], 1);
        assert_eq!(r.counts.values().sum::<usize>(), 1);
    }

    #[test]
    fn mixed_counts_sum_to_instances() {
        let cat = catalog(&["A", "B", "C"]);
        let data = vec![
            instance("1", Some("A"), None),
            instance("2", Some("B"), None),
            instance("3", None, None),
            instance("4", Some("Z"), None),
            instance("5", Some("C"), None),
        ];
        let results =
            vec![result("1", Some("A")), result("2", Some("C")), result("3", Some("A")), result("4", Some("A")), result("5", None)];
        let r = evaluate(&results, &data, &cat).unwrap();
        assert_eq!(r.instances, 5);
        assert_eq!(r.counts.values().sum::<usize>(), 5);
        assert_eq!(r.counts[&ErrorCategory::Correct], 1);
        assert_eq!(r.counts[&ErrorCategory::Misidentification], 1);
        assert_eq!(r.counts[&ErrorCategory::OverPrediction], 1);
        assert_eq!(r.counts[&ErrorCategory::RetrievalError], 1);
        assert_eq!(r.counts[&ErrorCategory::UnderPrediction], 1);
        // TP 1, predicted 4, gold 4.
        assert_eq!(r.precision, 0.25);
        assert_eq!(r.recall, 0.25);
        assert_eq!(r.per_task[&Task::EntityLinking].instances, 5);
    }

    #[test]
    fn id_alignment_errors() {
        let data = vec![instance("a", Some("A"), Some(&["A"])), instance("b", None, Some(&["A"]))];
        let e = evaluate(&[result("a", None), result("zz", None), result("yy", None)], &data, &catalog(&[]));
        assert!(matches!(e, Err(EvalError::UnknownId(ref id)) if id == "zz"));
        let e = evaluate(&[result("a", None)], &data, &catalog(&[]));
        assert!(matches!(e, Err(EvalError::MissingResult(ref id)) if id == "b"));
        let e = evaluate(&[result("a", None), result("a", None)], &data, &catalog(&[]));
        assert!(matches!(e, Err(EvalError::DuplicateResult(_))));
    }

    #[test]
    fn report_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("report");
        let data = vec![instance("a", Some("A"), Some(&["A", "B"])), instance("b", None, Some(&["A"]))];
        let r = emit_report(&[result("a", Some("A")), result("b", Some("A"))], &data, &catalog(&[]), &out).unwrap();
        let (json, text) = report_paths(&out);
        let back: EvalReport = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
        assert_eq!(back, r);
        let text = fs::read_to_string(text).unwrap();
        assert!(text.contains("over_prediction"));
        assert!(text.starts_with(REPORT_SCHEMA));

        let bad = dir.path().join("bad");
        assert!(emit_report(&[result("q", None)], &data, &catalog(&[]), &bad).is_err());
        let (j, t) = report_paths(&bad);
        assert!(!j.exists() && !t.exists());
    }

    fn recount(pairs: &[(Option<u8>, Option<u8>)]) -> (f64, f64, f64) {
        let tp = pairs.iter().filter(|(p, g)| p.is_some() && p == g).count() as f64;
        let np = pairs.iter().filter(|(p, _)| p.is_some()).count() as f64;
        let ng = pairs.iter().filter(|(_, g)| g.is_some()).count() as f64;
        if np == 0.0 && ng == 0.0 {
            return (1.0, 1.0, 1.0);
        }
        let p = if np > 0.0 { tp / np } else { 0.0 };
        let r = if ng > 0.0 { tp / ng } else { 0.0 };
        (p, r, if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
    }

    proptest! {
        #[test]
        fn micro_f1_matches_recount(pairs in proptest::collection::vec((proptest::option::of(0u8..6), proptest::option::of(0u8..6)), 1..2000)) {
            let strings: Vec<(Option<String>, Option<String>)> =
                pairs.iter().map(|(p, g)| (p.map(|x| format!("E{x}")), g.map(|x| format!("E{x}")))).collect();
            let got = micro_f1(&strings);
            let (p, r, f) = recount(&pairs);
            prop_assert!((got.precision - p).abs() <= 1e-12);
            prop_assert!((got.recall - r).abs() <= 1e-12);
            prop_assert!((got.f1 - f).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&got.f1));
        }

        #[test]
        fn classification_is_total_and_exclusive(p in proptest::option::of(0u8..4), g in proptest::option::of(0u8..4), k in 1u8..4) {
            let names: Vec<String> = (0..k).map(|i| format!("E{i}")).collect();
            let c = CandidateSet::new("m", names, true).unwrap();
            let ps = p.map(|x| format!("E{x}"));
            let gs = g.map(|x| format!("E{x}"));
            let cat = classify_error(ps.as_deref(), gs.as_deref(), &c);
            let expected = if ps == gs {
                ErrorCategory::Correct
            } else if gs.as_deref().is_some_and(|g| !c.contains(g)) {
                ErrorCategory::RetrievalError
            } else if gs.is_none() {
                ErrorCategory::OverPrediction
            } else if ps.is_none() {
                ErrorCategory::UnderPrediction
            } else {
                ErrorCategory::Misidentification
            };
            prop_assert_eq!(cat, expected);
        }
    }
}
