//! Scripted backend for offline runs and tests.
//!
//! Fixtures are JSONL: `{"match": <pattern>, "responses": [<text>, ...]}`.
//! The pattern is compiled as a regex; if it does not compile it is used
//! as a literal substring, so fixture authors can write plain prose
//! without escaping. The first fixture (in file order) whose pattern
//! matches the flattened prompt wins, and a request for `n` samples takes
//! the first `n` entries of its response list.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use regex::Regex;
use serde::Deserialize;

use super::{prompt_fingerprint, Backend, GenRequest, GenResponse, Usage};
use crate::error::{Error, Result};

#[derive(Debug)]
enum Matcher {
    Pattern(Box<Regex>),
    Substring(String),
}

impl Matcher {
    fn from_spec(spec: &str) -> Matcher {
        match Regex::new(spec) {
            Ok(re) => Matcher::Pattern(Box::new(re)),
            Err(_) => Matcher::Substring(spec.to_owned()),
        }
    }

    fn matches(&self, text: &str) -> bool {
        match self {
            Matcher::Pattern(re) => re.is_match(text),
            Matcher::Substring(s) => text.contains(s.as_str()),
        }
    }
}

#[derive(Debug, Deserialize)]
struct FixtureRecord {
    #[serde(rename = "match")]
    pattern: String,
    responses: Vec<String>,
}

#[derive(Debug)]
struct Fixture {
    spec: String,
    matcher: Matcher,
    responses: Vec<String>,
}

#[derive(Debug)]
pub struct MockBackend {
    fixtures: Vec<Fixture>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn from_fixtures_reader<R: BufRead>(reader: R, origin: &Path) -> Result<MockBackend> {
        let mut fixtures = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord =
                serde_json::from_str(&line).map_err(|e| Error::Jsonl {
                    path: origin.to_owned(),
                    line: i + 1,
                    detail: e.to_string(),
                })?;
            if record.responses.is_empty() {
                return Err(Error::Jsonl {
                    path: origin.to_owned(),
                    line: i + 1,
                    detail: "fixture has no responses".to_owned(),
                });
            }
            fixtures.push(Fixture {
                matcher: Matcher::from_spec(&record.pattern),
                spec: record.pattern,
                responses: record.responses,
            });
        }
        Ok(MockBackend {
            fixtures,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn from_fixtures(path: &Path) -> Result<MockBackend> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_fixtures_reader(BufReader::new(f), path)
    }

    /// Build directly from `(pattern, responses)` pairs; test convenience.
    pub fn from_records<S: Into<String>>(records: Vec<(S, Vec<S>)>) -> MockBackend {
        MockBackend {
            fixtures: records
                .into_iter()
                .map(|(pattern, responses)| {
                    let spec = pattern.into();
                    Fixture {
                        matcher: Matcher::from_spec(&spec),
                        spec,
                        responses: responses.into_iter().map(Into::into).collect(),
                    }
                })
                .collect(),
            calls: AtomicUsize::new(0),
        }
    }

    /// How many generate calls this mock has served.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse> {
        req.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = req.flat_text();
        let fixture = self
            .fixtures
            .iter()
            .find(|f| f.matcher.matches(&prompt))
            .ok_or_else(|| Error::FixtureMiss {
                prompt_hash: prompt_fingerprint(&prompt),
            })?;
        let n = req.n as usize;
        if fixture.responses.len() < n {
            return Err(Error::FixtureExhausted {
                pattern: fixture.spec.clone(),
                available: fixture.responses.len(),
                requested: n,
            });
        }
        let texts: Vec<String> = fixture.responses[..n].to_vec();
        // Deterministic whitespace-token usage so accounting is testable.
        let usage = Usage {
            prompt_tokens: prompt.split_whitespace().count() as u64,
            completion_tokens: texts
                .iter()
                .map(|t| t.split_whitespace().count() as u64)
                .sum(),
        };
        Ok(GenResponse {
            texts,
            backend_id: "mock".to_owned(),
            usage,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_matching_fixture_wins() {
        let mock = MockBackend::from_records(vec![
            ("STATEMENT:\nThe sky", vec!["[Not Supported]"]),
            ("STATEMENT:", vec!["[Supported]"]),
        ]);
        let specific = GenRequest::user("m", "...\nSTATEMENT:\nThe sky is plaid.", 0.0, 1, 64);
        assert_eq!(mock.generate(&specific).unwrap().texts, vec!["[Not Supported]"]);
        let generic = GenRequest::user("m", "...\nSTATEMENT:\nWater is wet.", 0.0, 1, 64);
        assert_eq!(mock.generate(&generic).unwrap().texts, vec!["[Supported]"]);
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn n_samples_come_back_in_fixture_order() {
        let mock = MockBackend::from_records(vec![(
            "QUESTION:",
            vec!["first", "second", "third", "fourth", "fifth"],
        )]);
        let req = GenRequest::user("m", "QUESTION:\npick one", 0.8, 5, 64);
        let resp = mock.generate(&req).unwrap();
        assert_eq!(resp.texts, vec!["first", "second", "third", "fourth", "fifth"]);
    }

    #[test]
    fn zero_samples_is_rejected_before_matching() {
        let mock = MockBackend::from_records(vec![("x", vec!["y"])]);
        let req = GenRequest::user("m", "x", 0.0, 0, 64);
        assert!(matches!(
            mock.generate(&req),
            Err(Error::InvalidRequest { .. })
        ));
    }

    #[test]
    fn exhausted_fixture_names_pattern_and_counts() {
        let mock = MockBackend::from_records(vec![("q", vec!["only one"])]);
        let err = mock
            .generate(&GenRequest::user("m", "q", 0.8, 3, 64))
            .unwrap_err();
        match err {
            Error::FixtureExhausted {
                pattern,
                available,
                requested,
            } => {
                assert_eq!(pattern, "q");
                assert_eq!(available, 1);
                assert_eq!(requested, 3);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn miss_reports_a_prompt_fingerprint() {
        let mock = MockBackend::from_records(vec![("nope", vec!["x"])]);
        let err = mock
            .generate(&GenRequest::user("m", "something else", 0.0, 1, 64))
            .unwrap_err();
        match err {
            Error::FixtureMiss { prompt_hash } => assert_eq!(prompt_hash.len(), 16),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn invalid_regex_degrades_to_substring() {
        // "**(D)" is an invalid regex (nothing to repeat) but a fine substring.
        let mock = MockBackend::from_records(vec![("**(D) Surgical", vec!["[Not Supported]"])]);
        let req = GenRequest::user("m", "STATEMENT:\n**(D) Surgical drainage**", 0.0, 1, 64);
        assert_eq!(mock.generate(&req).unwrap().texts, vec!["[Not Supported]"]);
    }

    #[test]
    fn regex_patterns_match_with_flags() {
        let mock = MockBackend::from_records(vec![(
            "(?s)KNOWLEDGE:\nN/A.*QUESTION:",
            vec!["round one"],
        )]);
        let hit = GenRequest::user("m", "KNOWLEDGE:\nN/A\n\nQUESTION:\nq", 0.0, 1, 64);
        assert_eq!(mock.generate(&hit).unwrap().texts, vec!["round one"]);
        let miss = GenRequest::user("m", "KNOWLEDGE:\n(1). doc\n\nQUESTION:\nq", 0.0, 1, 64);
        assert!(mock.generate(&miss).is_err());
    }

    #[test]
    fn identical_requests_get_identical_responses() {
        let mock = MockBackend::from_records(vec![("q", vec!["a", "b"])]);
        let req = GenRequest::user("m", "q", 0.8, 2, 64);
        let r1 = mock.generate(&req).unwrap();
        let r2 = mock.generate(&req).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.usage.prompt_tokens, 1);
        assert_eq!(r1.usage.completion_tokens, 2);
    }

    #[test]
    fn fixture_jsonl_errors_carry_line_numbers() {
        let good = br#"{"match": "a", "responses": ["x"]}"#;
        let mock = MockBackend::from_fixtures_reader(&good[..], Path::new("mem")).unwrap();
        assert_eq!(mock.fixtures.len(), 1);

        let bad = b"{\"match\": \"a\", \"responses\": [\"x\"]}\n{\"match\": \"b\"}\n";
        let err = MockBackend::from_fixtures_reader(&bad[..], Path::new("mem")).unwrap_err();
        match err {
            Error::Jsonl { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }

        let empty = b"{\"match\": \"a\", \"responses\": []}\n";
        assert!(MockBackend::from_fixtures_reader(&empty[..], Path::new("mem")).is_err());
    }
}
