//! Metric report document and its text rendering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemScores {
    pub name: String,
    pub fgd: f64,
    pub fdk: f64,
    /// Absent when no generated clip had a motion beat.
    pub beat_align: Option<f64>,
    pub n_clips: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub systems: Vec<SystemScores>,
    /// `audio` or `motion`: what the generated beats were aligned to.
    pub beat_reference: String,
    pub beat_sigma: f64,
    pub manifest_hashes: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct RenderError(pub String);

impl std::fmt::Display for RenderError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "report: {}", self.0)
    }
}

impl std::error::Error for RenderError {}

/// One row per system, best FGD first.
pub fn report_render(report: &serde_json::Value) -> Result<String, RenderError> {
    let parsed: MetricsReport = serde_json::from_value(report.clone()).map_err(|e| RenderError(e.to_string()))?;
    let mut systems = parsed.systems;
    systems.sort_by(|a, b| a.fgd.total_cmp(&b.fgd).then_with(|| a.name.cmp(&b.name)));
    let width = systems.iter().map(|s| s.name.chars().count()).chain(["System".len()]).max().unwrap_or(6);
    let mut out = format!("{:<width$}  {:>10}  {:>10}  {:>8}\n", "System", "FGD↓", "FD_k↓", "BA↑");
    for s in &systems {
        let ba = s.beat_align.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
        out.push_str(&format!("{:<width$}  {:>10.3}  {:>10.3}  {:>8}\n", s.name, s.fgd, s.fdk, ba));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use serde_json::json;

    fn doc(systems: serde_json::Value) -> serde_json::Value {
        json!({"systems": systems, "beat_reference": "audio", "beat_sigma": 0.1, "manifest_hashes": {}})
    }

    #[test]
    fn single_system_one_row() {
        let text = report_render(&doc(json!([
            {"name": "pase", "fgd": 1.5, "fdk": 2.25, "beat_align": 0.5, "n_clips": 3}
        ])))
        .unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("FGD↓") && lines[0].contains("FD_k↓") && lines[0].contains("BA↑"));
        let numbers: Vec<f64> = lines[1].split_whitespace().skip(1).map(|t| t.parse().unwrap()).collect();
        assert_eq!(numbers, vec![1.5, 2.25, 0.5]);
    }

    #[test]
    fn rows_sorted_by_fgd() {
        let text = report_render(&doc(json!([
            {"name": "b", "fgd": 9.0, "fdk": 0.0, "beat_align": null, "n_clips": 1},
            {"name": "a", "fgd": 3.0, "fdk": 0.0, "beat_align": 1.0, "n_clips": 1}
        ])))
        .unwrap();
        let names: Vec<&str> = text.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
        assert_eq!(names, vec!["a", "b"]);
        assert!(text.contains("n/a"));
    }

    #[test]
    fn empty_is_header_only() {
        assert_eq!(report_render(&doc(json!([]))).unwrap().lines().count(), 1);
    }

    #[test]
    fn rows_are_a_sorted_permutation() {
        proptest!(|(fgds in proptest::collection::vec(0.0f64..1e4, 0..12))| {
            let systems: Vec<serde_json::Value> = fgds
                .iter()
                .enumerate()
                .map(|(i, f)| json!({"name": format!("s{i}"), "fgd": f, "fdk": 1.0, "beat_align": null, "n_clips": 1}))
                .collect();
            let text = report_render(&doc(json!(systems))).unwrap();
            let rows: Vec<(String, f64)> = text
                .lines()
                .skip(1)
                .map(|l| {
                    let mut t = l.split_whitespace();
                    (t.next().unwrap().to_string(), t.next().unwrap().parse().unwrap())
                })
                .collect();
            prop_assert_eq!(rows.len(), fgds.len());
            prop_assert!(rows.windows(2).all(|w| w[0].1 <= w[1].1));
            let mut names: Vec<String> = rows.into_iter().map(|r| r.0).collect();
            names.sort();
            let mut expected: Vec<String> = (0..fgds.len()).map(|i| format!("s{i}")).collect();
            expected.sort();
            prop_assert_eq!(names, expected);
        });
    }

    #[test]
    fn missing_field_is_error() {
        let bad = doc(json!([{"name": "a", "fgd": 1.0, "beat_align": 1.0, "n_clips": 1}]));
        assert!(report_render(&bad).unwrap_err().0.contains("fdk"));
        assert!(report_render(&json!({"systems": []})).is_err());
    }
}
