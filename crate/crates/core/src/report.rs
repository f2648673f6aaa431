//! Aggregation of verdicts into per-criterion tables, ratios, class
//! cross-tabulations and false-case dumps.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Question, QuestionClass};
use crate::criteria::{Criterion, Severity, Verdict};
use crate::ratio::Fraction;
use crate::sparql::{parse_query, serialize, PrefixEnv};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("verdict for uid '{0}' appears more than once")]
    DuplicateUid(String),
    #[error("verdict uid '{0}' is not in the corpus")]
    UnknownUid(String),
}

/// First-error counts per criterion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionCounts {
    /// Indexed by `ordinal - 1`.
    pub per_criterion: [u64; 6],
    pub good: u64,
    pub total: u64,
}

impl CriterionCounts {
    pub fn get(&self, c: Criterion) -> u64 {
        self.per_criterion[usize::from(c.ordinal()) - 1]
    }

    pub fn from_row(row: [u64; 6], good: u64) -> Self {
        CriterionCounts {
            per_criterion: row,
            good,
            total: good + row.iter().sum::<u64>(),
        }
    }

    pub fn severity_sum(&self, severity: Severity) -> u64 {
        Criterion::ALL
            .into_iter()
            .filter(|c| c.severity() == severity)
            .map(|c| self.get(c))
            .sum()
    }

    fn assert_conserved(&self) {
        assert_eq!(
            self.good + self.per_criterion.iter().sum::<u64>(),
            self.total,
            "criterion counts do not add up to the total"
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioBlock {
    pub critical: Fraction,
    pub notice: Fraction,
}

impl RatioBlock {
    pub fn from_counts(counts: &CriterionCounts) -> Self {
        RatioBlock {
            critical: Fraction::new(counts.severity_sum(Severity::Critical), counts.total),
            notice: Fraction::new(counts.severity_sum(Severity::Notice), counts.total),
        }
    }
}

pub fn aggregate(verdicts: &[Verdict]) -> Result<(CriterionCounts, RatioBlock), ReportError> {
    let mut seen = BTreeSet::new();
    let mut counts = CriterionCounts::default();
    for v in verdicts {
        if !seen.insert(v.question_uid.as_str()) {
            return Err(ReportError::DuplicateUid(v.question_uid.clone()));
        }
        counts.total += 1;
        match v.first_error() {
            Some(f) => counts.per_criterion[usize::from(f.criterion.ordinal()) - 1] += 1,
            None => counts.good += 1,
        }
    }
    counts.assert_conserved();
    let ratios = RatioBlock::from_counts(&counts);
    Ok((counts, ratios))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassBucket {
    YesNo,
    Factoid,
    RangeFactoid,
}

impl From<&QuestionClass> for ClassBucket {
    fn from(c: &QuestionClass) -> Self {
        match c {
            QuestionClass::YesNo => ClassBucket::YesNo,
            QuestionClass::Factoid => ClassBucket::Factoid,
            QuestionClass::RangeFactoid { .. } => ClassBucket::RangeFactoid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBreakdown {
    /// `Factoid` here means factoid without a range; range-specified
    /// questions have their own row.
    pub rows: BTreeMap<ClassBucket, CriterionCounts>,
    /// Question-type errors among all factoid questions (ranged or not).
    pub factoid_judged_yes_no: Fraction,
    /// Question-type errors among yes/no questions.
    pub yes_no_judged_factoid: Fraction,
    /// Wrong-range first errors among range-specified questions.
    pub range_wrong: Fraction,
}

pub fn class_breakdown(verdicts: &[Verdict], corpus: &[Question]) -> Result<ClassBreakdown, ReportError> {
    let classes: BTreeMap<&str, ClassBucket> = corpus.iter().map(|q| (q.uid.as_str(), (&q.klass).into())).collect();
    let mut rows: BTreeMap<ClassBucket, Vec<&Verdict>> = BTreeMap::new();
    for v in verdicts {
        let bucket = classes
            .get(v.question_uid.as_str())
            .ok_or_else(|| ReportError::UnknownUid(v.question_uid.clone()))?;
        rows.entry(*bucket).or_default().push(v);
    }
    let mut out = BTreeMap::new();
    for bucket in [ClassBucket::YesNo, ClassBucket::Factoid, ClassBucket::RangeFactoid] {
        let owned: Vec<Verdict> = rows.get(&bucket).into_iter().flatten().map(|v| (*v).clone()).collect();
        out.insert(bucket, aggregate(&owned)?.0);
    }
    let row = |b: ClassBucket| &out[&b];
    let factoid_total = row(ClassBucket::Factoid).total + row(ClassBucket::RangeFactoid).total;
    let factoid_qt =
        row(ClassBucket::Factoid).get(Criterion::QuestionType) + row(ClassBucket::RangeFactoid).get(Criterion::QuestionType);
    let breakdown = ClassBreakdown {
        factoid_judged_yes_no: Fraction::new(factoid_qt, factoid_total),
        yes_no_judged_factoid: Fraction::new(
            row(ClassBucket::YesNo).get(Criterion::QuestionType),
            row(ClassBucket::YesNo).total,
        ),
        range_wrong: Fraction::new(
            row(ClassBucket::RangeFactoid).get(Criterion::WrongRange),
            row(ClassBucket::RangeFactoid).total,
        ),
        rows: out,
    };
    Ok(breakdown)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TgmReport {
    pub tgm: String,
    pub counts: CriterionCounts,
    pub ratios: RatioBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<ClassBreakdown>,
}

impl TgmReport {
    pub fn build(tgm: &str, verdicts: &[Verdict], corpus: Option<&[Question]>) -> Result<Self, ReportError> {
        let (counts, ratios) = aggregate(verdicts)?;
        let classes = corpus.map(|c| class_breakdown(verdicts, c)).transpose()?;
        Ok(TgmReport {
            tgm: tgm.to_owned(),
            counts,
            ratios,
            classes,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub tgms: Vec<TgmReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Text => "txt",
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

pub fn emit(report: &Report, format: ReportFormat, mut out: impl Write) -> io::Result<()> {
    match format {
        ReportFormat::Text => write_text(report, &mut out)?,
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, &report_json(report))?;
            out.write_all(b"\n")?;
        }
        ReportFormat::Csv => write_csv(report, &mut out)?,
    }
    out.flush()
}

fn report_json(report: &Report) -> serde_json::Value {
    let tgms: Vec<serde_json::Value> = report
        .tgms
        .iter()
        .map(|t| {
            let per: serde_json::Map<String, serde_json::Value> = Criterion::ALL
                .into_iter()
                .map(|c| (c.slug().to_owned(), t.counts.get(c).into()))
                .collect();
            let mut v = serde_json::json!({
                "tgm": t.tgm,
                "total": t.counts.total,
                "good": t.counts.good,
                "first_errors": per,
                "critical": {
                    "count": t.ratios.critical.numerator,
                    "percent": t.ratios.critical.percent_or_na(),
                },
                "notice": {
                    "count": t.ratios.notice.numerator,
                    "percent": t.ratios.notice.percent_or_na(),
                },
            });
            if let Some(classes) = &t.classes {
                let rows: serde_json::Map<String, serde_json::Value> = classes
                    .rows
                    .iter()
                    .map(|(bucket, counts)| {
                        let key = serde_json::to_value(bucket).expect("bucket serializes");
                        let per: serde_json::Map<String, serde_json::Value> = Criterion::ALL
                            .into_iter()
                            .map(|c| (c.slug().to_owned(), counts.get(c).into()))
                            .collect();
                        (
                            key.as_str().unwrap_or_default().to_owned(),
                            serde_json::json!({"total": counts.total, "good": counts.good, "first_errors": per}),
                        )
                    })
                    .collect();
                v["classes"] = serde_json::json!({
                    "rows": rows,
                    "factoid_judged_yes_no": fraction_json(&classes.factoid_judged_yes_no),
                    "yes_no_judged_factoid": fraction_json(&classes.yes_no_judged_factoid),
                    "range_wrong": fraction_json(&classes.range_wrong),
                });
            }
            v
        })
        .collect();
    serde_json::json!({ "tgms": tgms })
}

fn fraction_json(f: &Fraction) -> serde_json::Value {
    serde_json::json!({"count": f.numerator, "of": f.denominator, "percent": f.percent_or_na()})
}

fn write_text(report: &Report, out: &mut impl Write) -> io::Result<()> {
    let mut headers = vec!["TGM".to_owned(), "Total".to_owned()];
    headers.extend(Criterion::ALL.iter().map(|c| c.title().to_owned()));
    headers.extend(["Good", "Critical", "Notice"].map(String::from));
    let mut rows = vec![headers];
    for t in &report.tgms {
        let mut row = vec![t.tgm.clone(), t.counts.total.to_string()];
        row.extend(Criterion::ALL.iter().map(|c| t.counts.get(*c).to_string()));
        row.push(t.counts.good.to_string());
        row.push(t.ratios.critical.percent_or_na());
        row.push(t.ratios.notice.percent_or_na());
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end())?;
    }
    for t in &report.tgms {
        if let Some(c) = &t.classes {
            writeln!(out)?;
            writeln!(out, "{}: question classes", t.tgm)?;
            writeln!(
                out,
                "  factoid judged yes/no:      {:>6}  ({})",
                c.factoid_judged_yes_no.percent_or_na(),
                c.factoid_judged_yes_no
            )?;
            writeln!(
                out,
                "  yes/no judged factoid:      {:>6}  ({})",
                c.yes_no_judged_factoid.percent_or_na(),
                c.yes_no_judged_factoid
            )?;
            writeln!(
                out,
                "  range-specified wrong range: {:>5}  ({})",
                c.range_wrong.percent_or_na(),
                c.range_wrong
            )?;
        }
    }
    Ok(())
}

fn write_csv(report: &Report, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "tgm,criterion,ordinal,severity,count,total")?;
    for t in &report.tgms {
        for c in Criterion::ALL {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&t.tgm),
                c.slug(),
                c.ordinal(),
                c.severity(),
                t.counts.get(c),
                t.counts.total
            )?;
        }
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FalseCase {
    pub uid: String,
    pub nl_text: Option<String>,
    pub gold_text: Option<String>,
    pub template_text: Option<String>,
    /// Canonical rendering of the template, when it parses.
    pub template_canonical: Option<String>,
    pub verdict: Verdict,
}

/// Non-good verdicts whose first error is in `filter`, ordered by uid.
pub fn dump_false_cases(
    verdicts: &[Verdict],
    corpus: &[Question],
    filter: &BTreeSet<Criterion>,
    env: &PrefixEnv,
) -> Vec<FalseCase> {
    let by_uid: BTreeMap<&str, &Question> = corpus.iter().map(|q| (q.uid.as_str(), q)).collect();
    let mut cases: Vec<FalseCase> = verdicts
        .iter()
        .filter(|v| v.first_error().is_some_and(|f| filter.contains(&f.criterion)))
        .map(|v| {
            let q = by_uid.get(v.question_uid.as_str());
            FalseCase {
                uid: v.question_uid.clone(),
                nl_text: q.map(|q| q.nl_text.clone()),
                gold_text: q.map(|q| q.gold_text.clone()),
                template_text: v.template_text.clone(),
                template_canonical: v
                    .template_text
                    .as_deref()
                    .and_then(|t| parse_query(t, env).ok())
                    .map(|ast| serialize(&ast)),
                verdict: v.clone(),
            }
        })
        .collect();
    cases.sort_by(|a, b| a.uid.cmp(&b.uid));
    cases
}

/// Synthetic verdicts whose first errors reproduce a row of counts; used to
/// check the ratio arithmetic.
pub fn synthetic_verdicts(row: [u64; 6], good: u64) -> Vec<Verdict> {
    use crate::criteria::{Finding, FindingDetail};
    let mut out = Vec::new();
    let mut n = 0u64;
    let mut push = |findings: Vec<Finding>| {
        n += 1;
        out.push(Verdict {
            question_uid: format!("synthetic/{n:06}"),
            all_findings: findings,
            template_text: None,
        });
    };
    for (c, count) in Criterion::ALL.into_iter().zip(row) {
        for _ in 0..count {
            push(vec![Finding::new(c, FindingDetail::EmptyTemplateList)]);
        }
    }
    for _ in 0..good {
        push(vec![]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::{evaluate_one, Finding, FindingDetail};
    use crate::tgm_client::{TemplateCandidate, TgmOutcome};

    const TOTAL: u64 = 5988;

    fn row_report(name: &str, row: [u64; 6]) -> TgmReport {
        let good = TOTAL - row.iter().sum::<u64>();
        TgmReport::build(name, &synthetic_verdicts(row, good), None).unwrap()
    }

    #[test]
    fn rocknrole_row() {
        let r = row_report("rocknrole", [0, 0, 262, 330, 28, 2898]);
        assert_eq!(r.counts.total, TOTAL);
        assert!(r.ratios.critical.same_value(&Fraction::new(592, 5988)));
        assert_eq!(r.ratios.critical.percent().unwrap(), "9.9%");
        assert_eq!(r.ratios.notice.percent().unwrap(), "48.9%");
    }

    #[test]
    fn lodqa_row() {
        let r = row_report("lodqa", [1, 18, 446, 0, 64, 0]);
        assert!(r.ratios.critical.same_value(&Fraction::new(465, 5988)));
        assert_eq!(r.ratios.critical.percent().unwrap(), "7.8%");
        assert_eq!(r.ratios.notice.percent().unwrap(), "1.1%");
    }

    #[test]
    fn all_good_and_empty() {
        let (c, r) = aggregate(&synthetic_verdicts([0; 6], 10)).unwrap();
        assert_eq!(c.good, 10);
        assert_eq!(r.critical.numerator, 0);
        assert_eq!(r.notice.numerator, 0);
        let (c, r) = aggregate(&[]).unwrap();
        assert_eq!(c.total, 0);
        assert_eq!(r.critical.percent_or_na(), "n/a");
    }

    #[test]
    fn duplicate_uid_is_rejected() {
        let mut v = synthetic_verdicts([1, 0, 0, 0, 0, 0], 0);
        v.push(v[0].clone());
        assert!(matches!(aggregate(&v), Err(ReportError::DuplicateUid(_))));
    }

    #[test]
    fn order_independent() {
        let mut v = synthetic_verdicts([3, 1, 4, 1, 5, 9], 2);
        let a = aggregate(&v).unwrap();
        v.reverse();
        assert_eq!(a, aggregate(&v).unwrap());
    }

    #[test]
    fn text_and_csv_shapes() {
        let report = Report {
            tgms: vec![row_report("rocknrole", [0, 0, 262, 330, 28, 2898])],
        };
        let mut text = Vec::new();
        emit(&report, ReportFormat::Text, &mut text).unwrap();
        let text = String::from_utf8(text).unwrap();
        assert!(text.contains("2898"), "{text}");
        assert!(text.contains("48.9%"));

        let mut csv = Vec::new();
        emit(&Report::default(), ReportFormat::Csv, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "tgm,criterion,ordinal,severity,count,total\n");

        let mut csv = Vec::new();
        emit(&report, ReportFormat::Csv, &mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.contains("rocknrole,question-type,3,critical,262,5988"));

        let mut a = Vec::new();
        let mut b = Vec::new();
        emit(&report, ReportFormat::Json, &mut a).unwrap();
        emit(&report, ReportFormat::Json, &mut b).unwrap();
        assert_eq!(a, b);
    }

    fn question(uid: &str, gold: &str) -> Question {
        let env = PrefixEnv::with_defaults();
        let ast = parse_query(gold, &env).unwrap();
        Question {
            uid: uid.into(),
            nl_text: format!("question {uid}"),
            gold_text: gold.into(),
            klass: crate::corpus::classify(&ast),
            gold_ast: ast,
            provenance: crate::corpus::Provenance {
                dataset: "fixture".into(),
                family: crate::corpus::Family::Qald,
                order_index: 1,
                question_id: uid.into(),
            },
        }
    }

    #[test]
    fn class_rates() {
        let corpus: Vec<Question> = (0..4)
            .map(|i| question(&format!("r{i}"), "SELECT ?a WHERE { ?a ?b ?c } LIMIT 2"))
            .collect();
        let verdicts: Vec<Verdict> = corpus
            .iter()
            .enumerate()
            .map(|(i, q)| Verdict {
                question_uid: q.uid.clone(),
                all_findings: if i < 2 {
                    vec![Finding::new(
                        Criterion::WrongRange,
                        FindingDetail::RangeMismatch {
                            expected: crate::sparql::AnswerRange {
                                length: Some(2),
                                start: 1,
                            },
                            found: None,
                        },
                    )]
                } else {
                    vec![]
                },
                template_text: None,
            })
            .collect();
        let b = class_breakdown(&verdicts, &corpus).unwrap();
        assert_eq!(b.range_wrong.percent().unwrap(), "50.0%");
        assert_eq!(b.yes_no_judged_factoid.percent_or_na(), "n/a");

        let stranger = Verdict {
            question_uid: "nope".into(),
            all_findings: vec![],
            template_text: None,
        };
        assert!(matches!(
            class_breakdown(&[stranger], &corpus),
            Err(ReportError::UnknownUid(_))
        ));
    }

    #[test]
    fn false_case_dump() {
        let env = PrefixEnv::with_defaults();
        let corpus = vec![
            question("a", "SELECT ?x WHERE { ?x ?p ?o }"),
            question("b", "SELECT ?x WHERE { ?x ?p ?o } LIMIT 1"),
        ];
        let outcome = |t: &str| {
            TgmOutcome::templates(vec![TemplateCandidate {
                query_text: t.into(),
                slots: serde_json::Value::Null,
                score: None,
            }])
        };
        let verdicts = vec![
            evaluate_one("a", &corpus[0].gold_ast, &outcome("SELECT ?v4 WHERE { ?v1 ?v2 ?v3 }"), &env),
            evaluate_one("b", &corpus[1].gold_ast, &outcome("SELECT ?v1 WHERE { ?v1 ?v2 ?v3 }"), &env),
        ];
        let only = |c: &[Criterion]| c.iter().copied().collect::<BTreeSet<_>>();
        let cases = dump_false_cases(&verdicts, &corpus, &only(&[Criterion::DisconnectedTarget]), &env);
        assert_eq!(cases.len(), 1);
        assert!(serde_json::to_string(&cases[0]).unwrap().contains("?v4"));
        assert_eq!(
            cases[0].template_canonical.as_deref(),
            Some("SELECT ?v4 WHERE { ?v1 ?v2 ?v3 . }")
        );
        let notices = dump_false_cases(&verdicts, &corpus, &only(&[Criterion::WrongRange, Criterion::DisconnectedTriple]), &env);
        assert_eq!(notices.len(), 1);
        assert_eq!(notices[0].uid, "b");
        let all = dump_false_cases(&verdicts, &corpus, &Criterion::ALL.into_iter().collect(), &env);
        assert_eq!(all.len(), 2);
    }
}
