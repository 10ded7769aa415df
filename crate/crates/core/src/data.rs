//! Datasets, test metadata and their file formats.
//!
//! Responses are stored one record per individual. Internally every test is
//! coded `0..K_t`. In files, dichotomous results are written `0`/`1` and
//! ordinal results `1..=K_t`, so ordinal categories carry an offset of one
//! at the I/O boundary.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Dichotomous,
    Ordinal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestDefinition {
    pub id: usize,
    pub kind: TestKind,
    pub num_categories: usize,
    pub label: String,
}

impl TestDefinition {
    pub fn dichotomous(id: usize, label: impl Into<String>) -> Self {
        TestDefinition { id, kind: TestKind::Dichotomous, num_categories: 2, label: label.into() }
    }

    pub fn ordinal(id: usize, label: impl Into<String>, categories: usize) -> Result<Self> {
        let t = TestDefinition { id, kind: TestKind::Ordinal, num_categories: categories, label: label.into() };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TestKind::Dichotomous if self.num_categories != 2 => Err(Error::InvalidData(format!(
                "dichotomous test `{}` must have 2 categories",
                self.label
            ))),
            TestKind::Ordinal if self.num_categories < 3 => Err(Error::InvalidData(format!(
                "ordinal test `{}` needs at least 3 categories",
                self.label
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_ordinal(&self) -> bool {
        self.kind == TestKind::Ordinal
    }

    pub fn num_cutpoints(&self) -> usize {
        self.num_categories - 1
    }

    fn external_offset(&self) -> i64 {
        match self.kind {
            TestKind::Dichotomous => 0,
            TestKind::Ordinal => 1,
        }
    }

    /// File coding of an internal category.
    pub fn to_external(&self, cat: u8) -> i64 {
        cat as i64 + self.external_offset()
    }

    /// Internal category of a file-coded value, if in range.
    pub fn from_external(&self, v: i64) -> Option<u8> {
        let c = v - self.external_offset();
        (0..self.num_categories as i64).contains(&c).then_some(c as u8)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestFileEntry {
    label: String,
    kind: TestKind,
    categories: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestFile {
    test: Vec<TestFileEntry>,
}

/// Parses the test metadata file (`[[test]]` tables with `label`, `kind` and,
/// for ordinal tests, `categories`).
pub fn parse_tests(text: &str) -> Result<Vec<TestDefinition>> {
    let file: TestFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if file.test.is_empty() {
        return Err(Error::Config("no tests declared".into()));
    }
    file.test
        .into_iter()
        .enumerate()
        .map(|(id, e)| {
            let t = TestDefinition {
                id,
                kind: e.kind,
                num_categories: e.categories.unwrap_or(2),
                label: e.label,
            };
            t.validate()?;
            Ok(t)
        })
        .collect()
}

pub fn write_tests(tests: &[TestDefinition]) -> String {
    let mut s = String::new();
    for t in tests {
        s.push_str("[[test]]\n");
        s.push_str(&format!("label = {:?}\n", t.label));
        match t.kind {
            TestKind::Dichotomous => s.push_str("kind = \"dichotomous\"\n"),
            TestKind::Ordinal => {
                s.push_str("kind = \"ordinal\"\n");
                s.push_str(&format!("categories = {}\n", t.num_categories));
            }
        }
        s.push('\n');
    }
    s
}

/// Cross-classification counts for one study.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregatedStudy {
    pub study_id: String,
    pub counts: BTreeMap<Vec<u8>, u64>,
}

impl AggregatedStudy {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyData {
    pub study_id: String,
    /// One response vector per individual, internal coding.
    pub responses: Vec<Vec<u8>>,
}

impl StudyData {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Distinct response patterns (sorted) and, per individual, the index of
    /// its pattern.
    pub fn patterns(&self) -> (Vec<Vec<u8>>, Vec<usize>) {
        let mut map: BTreeMap<&[u8], usize> = BTreeMap::new();
        for r in &self.responses {
            map.entry(r.as_slice()).or_insert(0);
        }
        for (i, v) in map.values_mut().enumerate() {
            *v = i;
        }
        let index = self.responses.iter().map(|r| map[r.as_slice()]).collect();
        (map.keys().map(|k| k.to_vec()).collect(), index)
    }
}

/// Individual-level meta-analysis dataset. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaDataset {
    tests: Vec<TestDefinition>,
    studies: Vec<StudyData>,
}

impl MetaDataset {
    pub fn new(tests: Vec<TestDefinition>, studies: Vec<StudyData>) -> Result<Self> {
        if tests.is_empty() {
            return Err(Error::InvalidData("no tests".into()));
        }
        if studies.is_empty() {
            return Err(Error::NoStudies);
        }
        for t in &tests {
            t.validate()?;
        }
        for s in &studies {
            if s.responses.is_empty() {
                return Err(Error::InvalidData(format!("study `{}` has no individuals", s.study_id)));
            }
            for (n, r) in s.responses.iter().enumerate() {
                if r.len() != tests.len() {
                    return Err(Error::InvalidData(format!(
                        "study `{}` individual {n}: {} results for {} tests",
                        s.study_id,
                        r.len(),
                        tests.len()
                    )));
                }
                for (t, &y) in tests.iter().zip(r) {
                    if y as usize >= t.num_categories {
                        return Err(Error::InvalidData(format!(
                            "study `{}` individual {n}: category {y} out of range for `{}`",
                            s.study_id, t.label
                        )));
                    }
                }
            }
        }
        Ok(MetaDataset { tests, studies })
    }

    pub fn tests(&self) -> &[TestDefinition] {
        &self.tests
    }

    pub fn studies(&self) -> &[StudyData] {
        &self.studies
    }

    pub fn num_tests(&self) -> usize {
        self.tests.len()
    }

    pub fn num_studies(&self) -> usize {
        self.studies.len()
    }

    pub fn num_individuals(&self) -> usize {
        self.studies.iter().map(StudyData::len).sum()
    }

    /// Collapses individuals back into per-study pattern counts.
    pub fn aggregate(&self) -> Vec<AggregatedStudy> {
        self.studies
            .iter()
            .map(|s| {
                let mut counts = BTreeMap::new();
                for r in &s.responses {
                    *counts.entry(r.clone()).or_insert(0) += 1;
                }
                AggregatedStudy { study_id: s.study_id.clone(), counts }
            })
            .collect()
    }

    /// Recodes ordinal test `test` as dichotomous: categories below `k` become
    /// negative, the rest positive. A dichotomous target is returned unchanged
    /// together with a warning.
    pub fn dichotomise(&self, test: usize, k: usize) -> Result<(MetaDataset, Option<String>)> {
        let t = self
            .tests
            .get(test)
            .ok_or_else(|| Error::InvalidArgument(format!("no test with index {test}")))?;
        if !t.is_ordinal() {
            return Ok((self.clone(), Some(format!("test `{}` is already dichotomous", t.label))));
        }
        if k < 1 || k > t.num_cutpoints() {
            return Err(Error::InvalidArgument(format!(
                "cut index {k} outside 1..={} for `{}`",
                t.num_cutpoints(),
                t.label
            )));
        }
        let mut tests = self.tests.clone();
        tests[test] = TestDefinition::dichotomous(test, t.label.clone());
        let studies = self
            .studies
            .iter()
            .map(|s| StudyData {
                study_id: s.study_id.clone(),
                responses: s
                    .responses
                    .iter()
                    .map(|r| {
                        let mut r = r.clone();
                        r[test] = (r[test] as usize >= k) as u8;
                        r
                    })
                    .collect(),
            })
            .collect();
        Ok((MetaDataset { tests, studies }, None))
    }

    /// Long-format CSV: `study_id, individual_id, t1, ..., tT` (file coding).
    pub fn write_expanded<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["study_id".to_string(), "individual_id".to_string()];
        header.extend((1..=self.num_tests()).map(|t| format!("t{t}")));
        out.write_record(&header)?;
        for s in &self.studies {
            for (n, r) in s.responses.iter().enumerate() {
                let mut row = vec![s.study_id.clone(), (n + 1).to_string()];
                row.extend(self.tests.iter().zip(r).map(|(t, &y)| t.to_external(y).to_string()));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Aggregated CSV in the input layout.
    pub fn write_aggregated<W: Write>(&self, w: W) -> Result<()> {
        write_aggregated(&self.aggregate(), &self.tests, w)
    }
}

pub fn write_aggregated<W: Write>(studies: &[AggregatedStudy], tests: &[TestDefinition], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["study_id".to_string()];
    header.extend((1..=tests.len()).map(|t| format!("t{t}_cat")));
    header.push("count".into());
    out.write_record(&header)?;
    for s in studies {
        for (pattern, &count) in &s.counts {
            let mut row = vec![s.study_id.clone()];
            row.extend(tests.iter().zip(pattern).map(|(t, &y)| t.to_external(y).to_string()));
            row.push(count.to_string());
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Parses the aggregated CSV: header row, then
/// `study_id, t1_cat, ..., tT_cat, count` per (study, pattern). Rows sharing
/// a study id form one study, in order of first appearance.
pub fn parse_aggregated<R: Read>(reader: R, tests: &[TestDefinition]) -> Result<Vec<AggregatedStudy>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 3 {
        return Err(Error::Parse { line: 1, msg: "header needs study_id, one column per test, count".into() });
    }
    if header.len() != tests.len() + 2 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header has {} test columns, metadata declares {}", header.len() - 2, tests.len()),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, BTreeMap<Vec<u8>, u64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::Parse { line, msg: format!("expected {} fields, found {}", header.len(), rec.len()) });
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::Parse { line, msg: "empty study_id".into() });
        }
        let mut pattern = Vec::with_capacity(tests.len());
        for (t, field) in tests.iter().zip(rec.iter().skip(1)) {
            let v: i64 = field
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("`{field}` is not an integer category") })?;
            let c = t.from_external(v).ok_or_else(|| Error::Parse {
                line,
                msg: format!("category {v} out of range for test `{}`", t.label),
            })?;
            pattern.push(c);
        }
        let raw = &rec[rec.len() - 1];
        let count: i64 = raw
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("`{raw}` is not an integer count") })?;
        if count < 0 {
            return Err(Error::Parse { line, msg: format!("negative count {count}") });
        }
        if !by_id.contains_key(&id) {
            order.push(id.clone());
        }
        let counts = by_id.entry(id).or_default();
        if counts.insert(pattern, count as u64).is_some() {
            return Err(Error::Parse { line, msg: "duplicate pattern for study".into() });
        }
    }
    if order.is_empty() {
        return Err(Error::NoStudies);
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let counts = by_id.remove(&id).unwrap();
            AggregatedStudy { study_id: id, counts }
        })
        .collect())
}

/// One record per individual, in pattern order within each study.
pub fn expand_to_individuals(aggregated: &[AggregatedStudy], tests: &[TestDefinition]) -> Result<MetaDataset> {
    let studies = aggregated
        .iter()
        .map(|a| {
            let mut responses = Vec::with_capacity(a.total() as usize);
            for (pattern, &c) in &a.counts {
                if pattern.len() != tests.len() {
                    return Err(Error::InvalidData(format!(
                        "study `{}`: pattern of arity {} for {} tests",
                        a.study_id,
                        pattern.len(),
                        tests.len()
                    )));
                }
                responses.extend(std::iter::repeat_n(pattern.clone(), c as usize));
            }
            Ok(StudyData { study_id: a.study_id.clone(), responses })
        })
        .collect::<Result<Vec<_>>>()?;
    MetaDataset::new(tests.to_vec(), studies)
}

/// Reads a dataset from its aggregated CSV and test metadata file.
pub fn load_dataset(csv_path: &Path, tests_path: &Path) -> Result<MetaDataset> {
    let tests = parse_tests(&std::fs::read_to_string(tests_path)?)?;
    let agg = parse_aggregated(std::fs::File::open(csv_path)?, &tests)?;
    expand_to_individuals(&agg, &tests)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dvt_tests() -> Vec<TestDefinition> {
        vec![
            TestDefinition::dichotomous(0, "Ultrasound"),
            TestDefinition::dichotomous(1, "D-Dimer"),
            TestDefinition::ordinal(2, "Wells", 3).unwrap(),
        ]
    }

    fn single_row_csv() -> &'static str {
        "study_id,t1_cat,t2_cat,t3_cat,count\ns1,0,0,1,3\n"
    }

    #[test]
    fn test_definitions_validate() {
        assert!(TestDefinition::ordinal(0, "x", 2).is_err());
        let bad = TestDefinition { id: 0, kind: TestKind::Dichotomous, num_categories: 3, label: "x".into() };
        assert!(bad.validate().is_err());
        let t = parse_tests("[[test]]\nlabel=\"US\"\nkind=\"dichotomous\"\n[[test]]\nlabel=\"W\"\nkind=\"ordinal\"\ncategories=3\n").unwrap();
        assert_eq!(t[1].num_categories, 3);
        assert!(parse_tests("[[test]]\nlabel=\"US\"\nkind=\"dichotomous\"\ncolour=1\n").is_err());
        assert_eq!(parse_tests(&write_tests(&dvt_tests())).unwrap(), dvt_tests());
    }

    #[test]
    fn one_pattern_expands_to_identical_rows() {
        let agg = parse_aggregated(single_row_csv().as_bytes(), &dvt_tests()).unwrap();
        let ds = expand_to_individuals(&agg, &dvt_tests()).unwrap();
        assert_eq!(ds.studies()[0].responses, vec![vec![0, 0, 0]; 3]);
    }

    #[test]
    fn empty_file_has_no_studies() {
        let err = parse_aggregated("study_id,t1_cat,t2_cat,t3_cat,count\n".as_bytes(), &dvt_tests()).unwrap_err();
        assert_eq!(err.to_string(), "no studies");
        assert!(parse_aggregated("".as_bytes(), &dvt_tests()).is_err());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("study_id,t1_cat,t2_cat,t3_cat,count\ns1,0,0,1,3\ns1,0,1,4,2\n", "line 3"),
            ("study_id,t1_cat,t2_cat,t3_cat,count\ns1,0,0,1,-3\n", "line 2"),
            ("study_id,t1_cat,t2_cat,t3_cat,count\ns1,0,0,1,3\ns2,0,0\n", "line 3"),
            ("study_id,t1_cat,t2_cat,t3_cat,count\ns1,2,0,1,3\n", "line 2"),
            ("study_id,t1_cat,t2_cat,t3_cat,count\ns1,0,0,0,3\n", "line 2"),
        ];
        for (text, want) in cases {
            let err = parse_aggregated(text.as_bytes(), &dvt_tests()).unwrap_err();
            assert!(err.to_string().starts_with(want), "{err}");
        }
    }

    #[test]
    fn arity_mismatch_rejected() {
        let mut counts = BTreeMap::new();
        counts.insert(vec![0, 1], 2);
        let agg = vec![AggregatedStudy { study_id: "x".into(), counts }];
        assert!(expand_to_individuals(&agg, &dvt_tests()).is_err());
    }

    #[test]
    fn dichotomise_codes_and_conserves() {
        let agg = parse_aggregated(
            "study_id,t1_cat,t2_cat,t3_cat,count\na,0,0,1,2\na,0,1,2,1\na,1,1,3,4\n".as_bytes(),
            &dvt_tests(),
        )
        .unwrap();
        let ds = expand_to_individuals(&agg, &dvt_tests()).unwrap();
        let (hi, warn) = ds.dichotomise(2, 2).unwrap();
        assert!(warn.is_none());
        let (lo, _) = ds.dichotomise(2, 1).unwrap();
        let wells = |d: &MetaDataset| d.studies()[0].responses.iter().map(|r| r[2]).collect::<Vec<_>>();
        // L,L,M,H,H,H,H
        assert_eq!(wells(&ds), vec![0, 0, 1, 2, 2, 2, 2]);
        assert_eq!(wells(&hi), vec![0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(wells(&lo), vec![0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(hi.tests()[2].kind, TestKind::Dichotomous);
        assert_eq!(hi.num_individuals(), ds.num_individuals());
        assert!(ds.dichotomise(2, 0).is_err());
        assert!(ds.dichotomise(2, 3).is_err());
        let (same, warn) = ds.dichotomise(0, 1).unwrap();
        assert_eq!(same, ds);
        assert!(warn.is_some());
    }

    #[test]
    fn aggregate_inverts_expand() {
        let agg = parse_aggregated(
            "study_id,t1_cat,t2_cat,t3_cat,count\nb,1,0,3,5\nb,0,0,1,2\nc,1,1,2,1\n".as_bytes(),
            &dvt_tests(),
        )
        .unwrap();
        let ds = expand_to_individuals(&agg, &dvt_tests()).unwrap();
        assert_eq!(ds.aggregate(), agg);
        let mut buf = Vec::new();
        ds.write_aggregated(&mut buf).unwrap();
        assert_eq!(parse_aggregated(buf.as_slice(), &dvt_tests()).unwrap(), agg);
    }

    #[test]
    fn expanded_csv_uses_file_coding() {
        let agg = parse_aggregated(single_row_csv().as_bytes(), &dvt_tests()).unwrap();
        let ds = expand_to_individuals(&agg, &dvt_tests()).unwrap();
        let mut buf = Vec::new();
        ds.write_expanded(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "study_id,individual_id,t1,t2,t3");
        assert_eq!(text.lines().nth(1).unwrap(), "s1,1,0,0,1");
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn patterns_index_individuals() {
        let s = StudyData { study_id: "s".into(), responses: vec![vec![1, 0], vec![0, 0], vec![1, 0]] };
        let (p, idx) = s.patterns();
        assert_eq!(p, vec![vec![0, 0], vec![1, 0]]);
        assert_eq!(idx, vec![1, 0, 1]);
    }
}
