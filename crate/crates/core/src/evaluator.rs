//! Statement-level answer evaluation.
//!
//! Ground truth and answer are split into sentences ("statements"). A judge
//! decides whether two statements match; matching is greedy and one-to-one.
//! Answer correctness is `tp / (tp + 0.5 (fp + fn))`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, HttpClient};
use crate::sentence::split_sentences;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("judge failed: {0}")]
    Judge(#[from] BackendError),
    #[error("Q/A file line {line}: {reason}")]
    QaFile { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question_id: String,
    pub question: String,
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

/// Parses the newline-delimited Q/A dataset format.
pub fn parse_qa_file(text: &str) -> Result<Vec<QaPair>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| EvalError::QaFile { line: i + 1, reason };
        let pair: QaPair = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if pair.question.trim().is_empty() || pair.ground_truth.trim().is_empty() {
            return Err(err("question and ground_truth must be non-empty".into()));
        }
        out.push(pair);
    }
    Ok(out)
}

/// Decides whether two statements state the same thing.
pub trait StatementJudge: Send + Sync {
    fn backend_id(&self) -> &str;
    /// `candidate` comes from the answer (or context), `reference` from the ground truth.
    fn matches(&self, candidate: &str, reference: &str) -> Result<bool, BackendError>;
}

/// Equality after lowercasing, dropping punctuation and collapsing whitespace.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactJudge;

pub fn normalize_statement(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl StatementJudge for ExactJudge {
    fn backend_id(&self) -> &str {
        "exact-normalized"
    }

    fn matches(&self, candidate: &str, reference: &str) -> Result<bool, BackendError> {
        Ok(normalize_statement(candidate) == normalize_statement(reference))
    }
}

/// LLM judge asking a chat model for a yes/no verdict. Not necessarily symmetric.
#[derive(Debug, Clone)]
pub struct HttpJudge {
    client: HttpClient,
    backend_id: String,
}

impl HttpJudge {
    pub fn new(client: HttpClient) -> Self {
        let backend_id = format!("http-judge:{}", client.settings().model);
        HttpJudge { client, backend_id }
    }
}

impl StatementJudge for HttpJudge {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn matches(&self, candidate: &str, reference: &str) -> Result<bool, BackendError> {
        let prompt = format!(
            "Do the following two statements convey the same fact? Reply with only \"yes\" or \"no\".\n\n\
             Statement A: {candidate}\nStatement B: {reference}"
        );
        let reply = self.client.chat(&prompt)?.to_lowercase();
        let word = reply.trim_start_matches(|c: char| !c.is_alphanumeric());
        if word.starts_with("yes") {
            Ok(true)
        } else if word.starts_with("no") {
            Ok(false)
        } else {
            Err(BackendError::Protocol(format!("judge reply is not yes/no: {reply}")))
        }
    }
}

/// One statement per sentence.
pub fn decompose_statements(text: &str) -> Vec<String> {
    split_sentences(text)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Greedy first-fit matching: each answer statement, in order, takes the
/// first unmatched ground-truth statement the judge accepts.
pub fn count_matches(
    ground_truth: &[String],
    answer: &[String],
    judge: &dyn StatementJudge,
) -> Result<MatchCounts, BackendError> {
    let mut used = vec![false; ground_truth.len()];
    let mut tp = 0;
    for a in answer {
        for (j, g) in ground_truth.iter().enumerate() {
            if !used[j] && judge.matches(a, g)? {
                used[j] = true;
                tp += 1;
                break;
            }
        }
    }
    Ok(MatchCounts {
        tp,
        fp: answer.len() - tp,
        fn_: ground_truth.len() - tp,
    })
}

/// `tp / (tp + 0.5 (fp + fn))`, and 0 when all counts are zero.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = tp as f64 + 0.5 * (fp + fn_) as f64;
    if denom == 0.0 {
        0.0
    } else {
        tp as f64 / denom
    }
}

/// Fraction of ground-truth statements supported by some statement of the
/// context passages.
pub fn context_recall(
    ground_truth: &[String],
    passages: &[&str],
    judge: &dyn StatementJudge,
) -> Result<f64, BackendError> {
    if ground_truth.is_empty() {
        return Ok(0.0);
    }
    let context: Vec<String> = passages.iter().flat_map(|p| decompose_statements(p)).collect();
    let mut supported = 0;
    for g in ground_truth {
        for c in &context {
            if judge.matches(c, g)? {
                supported += 1;
                break;
            }
        }
    }
    Ok(supported as f64 / ground_truth.len() as f64)
}

/// What the evaluator needs about one generated answer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnswerForEval {
    pub answer: String,
    /// Texts of the chunks (or gold passages) the answer was generated from.
    pub context_passages: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionStatus {
    Evaluated,
    MissingAnswer,
    JudgeFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionReport {
    pub question_id: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: f64,
    pub context_recall: Option<f64>,
    pub status: QuestionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub questions: usize,
    pub evaluated: usize,
    pub excluded: usize,
    pub mean_f1: f64,
    pub mean_context_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub questions: Vec<QuestionReport>,
    pub aggregate: AggregateReport,
}

impl EvalReport {
    /// One JSON record per question followed by one aggregate record.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for q in &self.questions {
            let mut v = serde_json::to_value(q).expect("serializable");
            v["record"] = "question".into();
            out.push_str(&v.to_string());
            out.push('\n');
        }
        let mut v = serde_json::to_value(&self.aggregate).expect("serializable");
        v["record"] = "aggregate".into();
        out.push_str(&v.to_string());
        out.push('\n');
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores one question.
pub fn evaluate_question(qa: &QaPair, answer: Option<&AnswerForEval>, judge: &dyn StatementJudge) -> QuestionReport {
    let gt = decompose_statements(&qa.ground_truth);
    let Some(answer) = answer else {
        return QuestionReport {
            question_id: qa.question_id.clone(),
            tp: 0,
            fp: 0,
            fn_: gt.len(),
            f1: 0.0,
            context_recall: None,
            status: QuestionStatus::MissingAnswer,
            error: None,
        };
    };
    let ans = decompose_statements(&answer.answer);
    let scored = count_matches(&gt, &ans, judge).and_then(|counts| {
        let recall = if answer.context_passages.is_empty() {
            None
        } else {
            let passages: Vec<&str> = answer.context_passages.iter().map(String::as_str).collect();
            Some(context_recall(&gt, &passages, judge)?)
        };
        Ok((counts, recall))
    });
    match scored {
        Ok((c, recall)) => QuestionReport {
            question_id: qa.question_id.clone(),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            f1: f1_score(c.tp, c.fp, c.fn_),
            context_recall: recall,
            status: QuestionStatus::Evaluated,
            error: None,
        },
        Err(e) => QuestionReport {
            question_id: qa.question_id.clone(),
            tp: 0,
            fp: 0,
            fn_: 0,
            f1: 0.0,
            context_recall: None,
            status: QuestionStatus::JudgeFailed,
            error: Some(e.to_string()),
        },
    }
}

/// Scores every question and averages. Missing answers count as all-missed;
/// questions whose judge failed are excluded from the means.
pub fn evaluate_run(
    qa_pairs: &[QaPair],
    answers: &HashMap<String, AnswerForEval>,
    judge: &dyn StatementJudge,
) -> EvalReport {
    let questions: Vec<QuestionReport> = qa_pairs
        .iter()
        .map(|qa| evaluate_question(qa, answers.get(&qa.question_id), judge))
        .collect();
    aggregate(questions)
}

pub fn aggregate(questions: Vec<QuestionReport>) -> EvalReport {
    let counted = || questions.iter().filter(|q| q.status != QuestionStatus::JudgeFailed);
    let excluded = questions.len() - counted().count();
    let aggregate = AggregateReport {
        questions: questions.len(),
        evaluated: questions.len() - excluded,
        excluded,
        mean_f1: mean(counted().map(|q| q.f1)).unwrap_or(0.0),
        mean_context_recall: mean(counted().filter_map(|q| q.context_recall)),
    };
    EvalReport { questions, aggregate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn statements() {
        assert_eq!(decompose_statements("A binds B. C inhibits D.").len(), 2);
        assert_eq!(decompose_statements("One statement").len(), 1);
        assert_eq!(
            decompose_statements("Approx. 5 mg. Next point."),
            split_sentences("Approx. 5 mg. Next point.")
        );
    }

    #[test]
    fn matching_examples() {
        let j = ExactJudge;
        let n = s(&["A.", "B.", "C."]);
        assert_eq!(count_matches(&n, &n, &j).unwrap(), MatchCounts { tp: 3, fp: 0, fn_: 0 });
        assert_eq!(
            count_matches(&s(&["A.", "B."]), &s(&["C.", "D.", "E."]), &j).unwrap(),
            MatchCounts { tp: 0, fp: 3, fn_: 2 }
        );
        assert_eq!(
            count_matches(&s(&["A.", "B.", "C."]), &s(&["A.", "D."]), &j).unwrap(),
            MatchCounts { tp: 1, fp: 1, fn_: 2 }
        );
        // one-to-one: a repeated answer statement matches only once
        assert_eq!(
            count_matches(&s(&["A."]), &s(&["a", "A!"]), &j).unwrap(),
            MatchCounts { tp: 1, fp: 1, fn_: 0 }
        );
    }

    #[test]
    fn f1_examples() {
        assert!((f1_score(2, 1, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_score(5, 0, 0), 1.0);
        assert_eq!(f1_score(0, 0, 0), 0.0);
        assert_eq!(f1_score(0, 3, 2), 0.0);
    }

    #[test]
    fn recall_examples() {
        let j = ExactJudge;
        let gt = s(&["Glycans bind lectins.", "Sialic acid caps chains."]);
        assert_eq!(
            context_recall(&gt, &["Sialic acid caps chains. Glycans bind lectins."], &j).unwrap(),
            1.0
        );
        assert_eq!(context_recall(&gt, &["Nothing relevant."], &j).unwrap(), 0.0);
        assert_eq!(context_recall(&gt, &["Other text. Glycans bind lectins."], &j).unwrap(), 0.5);
    }

    fn qa(id: &str, gt: &str) -> QaPair {
        QaPair {
            question_id: id.into(),
            question: format!("question {id}?"),
            ground_truth: gt.into(),
            provenance: None,
        }
    }

    #[test]
    fn run_examples() {
        let pairs = vec![qa("1", "A x. B y."), qa("2", "C z.")];
        let perfect: HashMap<String, AnswerForEval> = pairs
            .iter()
            .map(|p| {
                (p.question_id.clone(), AnswerForEval { answer: p.ground_truth.clone(), context_passages: vec![] })
            })
            .collect();
        let r = evaluate_run(&pairs, &perfect, &ExactJudge);
        assert_eq!(r.aggregate.mean_f1, 1.0);
        assert_eq!(r.aggregate.mean_context_recall, None);

        let empty: HashMap<String, AnswerForEval> = pairs
            .iter()
            .map(|p| (p.question_id.clone(), AnswerForEval::default()))
            .collect();
        assert_eq!(evaluate_run(&pairs, &empty, &ExactJudge).aggregate.mean_f1, 0.0);

        let missing = evaluate_run(&pairs, &HashMap::new(), &ExactJudge);
        assert_eq!(missing.questions[0].status, QuestionStatus::MissingAnswer);
        assert_eq!((missing.questions[0].tp, missing.questions[0].fp, missing.questions[0].fn_), (0, 0, 2));
    }

    #[test]
    fn mean_of_two_thirds_and_one() {
        // tp 2, fp 1, fn 1 -> 2/3; and a perfect answer
        let pairs = vec![qa("1", "A. B. C."), qa("2", "D.")];
        let answers: HashMap<String, AnswerForEval> = [
            ("1".to_string(), AnswerForEval { answer: "A. B. X.".into(), context_passages: vec![] }),
            ("2".to_string(), AnswerForEval { answer: "D.".into(), context_passages: vec![] }),
        ]
        .into_iter()
        .collect();
        let r = evaluate_run(&pairs, &answers, &ExactJudge);
        assert!((r.questions[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.aggregate.mean_f1 - 5.0 / 6.0).abs() < 1e-15);
    }

    struct Broken;

    impl StatementJudge for Broken {
        fn backend_id(&self) -> &str {
            "broken"
        }
        fn matches(&self, _: &str, _: &str) -> Result<bool, BackendError> {
            Err(BackendError::Transport("down".into()))
        }
    }

    #[test]
    fn judge_failure_excluded() {
        let pairs = vec![qa("1", "A.")];
        let answers: HashMap<String, AnswerForEval> =
            [("1".to_string(), AnswerForEval { answer: "A.".into(), context_passages: vec![] })].into_iter().collect();
        let r = evaluate_run(&pairs, &answers, &Broken);
        assert_eq!(r.aggregate.excluded, 1);
        assert_eq!(r.aggregate.evaluated, 0);
        assert_eq!(r.questions[0].status, QuestionStatus::JudgeFailed);
    }

    #[test]
    fn report_ndjson_shape() {
        let r = evaluate_run(&[qa("1", "A.")], &HashMap::new(), &ExactJudge);
        let text = r.to_ndjson();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["record"], "question");
        assert_eq!(lines[0]["fn"], 1);
        assert_eq!(lines[1]["record"], "aggregate");
    }

    #[test]
    fn qa_file() {
        let pairs = parse_qa_file(
            "{\"question_id\":\"q1\",\"question\":\"Why?\",\"ground_truth\":\"Because.\",\"provenance\":{\"doc_id\":\"d\"}}\n",
        )
        .unwrap();
        assert_eq!(pairs[0].question_id, "q1");
        assert!(matches!(
            parse_qa_file("{\"question_id\":\"q\",\"question\":\"\",\"ground_truth\":\"x\"}"),
            Err(EvalError::QaFile { line: 1, .. })
        ));
    }

    #[test]
    fn http_judge_parses_verdicts() {
        use crate::backend::testing::{chat_reply, serve};
        use crate::backend::HttpSettings;
        let (url, _rx) = serve(vec![(200, chat_reply("Yes.")), (200, chat_reply("no")), (200, chat_reply("maybe"))]);
        let j = HttpJudge::new(HttpClient::new(HttpSettings::new(url, "judge"), None));
        assert!(j.matches("a", "b").unwrap());
        assert!(!j.matches("a", "b").unwrap());
        assert!(j.matches("a", "b").is_err());
    }

    proptest! {
        #[test]
        fn count_identities(gt in prop::collection::vec("[abc]", 0..6), ans in prop::collection::vec("[abcd]", 0..6)) {
            let c = count_matches(&gt, &ans, &ExactJudge).unwrap();
            prop_assert_eq!(c.tp + c.fn_, gt.len());
            prop_assert_eq!(c.tp + c.fp, ans.len());
        }

        #[test]
        fn f1_monotone(tp in 0usize..20, fp in 0usize..20, fn_ in 0usize..20) {
            let f = f1_score(tp, fp, fn_);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!(f1_score(tp + 1, fp, fn_) >= f);
            prop_assert!(f1_score(tp, fp + 1, fn_) <= f);
            prop_assert!(f1_score(tp, fp, fn_ + 1) <= f);
        }
    }
}
