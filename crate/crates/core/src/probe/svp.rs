use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};

/// Metric rows of the comparison table, in display order: (id, label).
pub const KNOWN_METRICS: [(&str, &str); 8] = [
    ("x_clip", "X-CLIP Score"),
    ("vqa", "VQA Score (Qwen-VL)"),
    ("subject_consistency", "Subject Consistency"),
    ("background_consistency", "Background Consistency"),
    ("motion_smoothness", "Motion smoothness"),
    ("dynamic_degree", "Dynamic Degree"),
    ("aesthetic_quality", "Aesthetic Quality"),
    ("imaging_quality", "Imaging Quality"),
];

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Maps an id or label (case and punctuation insensitive) to the label.
pub fn canonical_metric(name: &str) -> Option<&'static str> {
    let n = normalize(name);
    KNOWN_METRICS
        .iter()
        .find(|(id, label)| normalize(id) == n || normalize(label) == n)
        .map(|(_, label)| *label)
}

/// Pivoted metric × variant table. Cell text is kept verbatim.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SvpTable {
    pub variants: Vec<String>,
    /// Known metrics first in canonical order, then unknown ones in input order.
    pub metrics: Vec<String>,
    pub unknown_metrics: Vec<String>,
    pub cells: BTreeMap<String, BTreeMap<String, String>>,
    pub warnings: Vec<String>,
}

impl SvpTable {
    pub fn get(&self, metric: &str, variant: &str) -> Option<&str> {
        let m = canonical_metric(metric).map_or(metric.to_string(), String::from);
        self.cells.get(&m)?.get(variant).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// `metric,<variant>...`; missing cells stay empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Contract(format!("writing svp table: {e}"));
        let mut header = vec!["metric".to_string()];
        header.extend(self.variants.iter().cloned());
        out.write_record(&header).map_err(csv_err)?;
        for m in &self.metrics {
            let mut row = vec![m.clone()];
            for v in &self.variants {
                row.push(self.cells.get(m).and_then(|r| r.get(v)).cloned().unwrap_or_default());
            }
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::Contract(format!("writing svp table: {e}")))
    }
}

/// Reads `metric,variant,value` rows and pivots them. Nothing is computed.
pub fn svp_ingest<R: Read>(input: R) -> Result<SvpTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let bad = |m: String| Error::Format {
        path: "<svp scores>".into(),
        message: m,
    };
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| bad(format!("missing column '{name}'")))
    };
    let mut table = SvpTable::default();
    if headers.is_empty() {
        table.warnings.push("empty score file".into());
        return Ok(table);
    }
    let (mc, vc, xc) = (col("metric")?, col("variant")?, col("value")?);
    let mut unknown_order = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let (m, v, x) = (&rec[mc], &rec[vc], &rec[xc]);
        if x.parse::<f64>().is_err() {
            return Err(bad(format!("row {}: value '{x}' is not a number", line + 2)));
        }
        let metric = match canonical_metric(m) {
            Some(l) => l.to_string(),
            None => {
                if !unknown_order.iter().any(|u| u == m) {
                    unknown_order.push(m.to_string());
                }
                m.to_string()
            }
        };
        if !table.variants.iter().any(|x| x == v) {
            table.variants.push(v.to_string());
        }
        let row = table.cells.entry(metric.clone()).or_default();
        if let Some(old) = row.insert(v.to_string(), x.to_string()) {
            table
                .warnings
                .push(format!("duplicate ({metric}, {v}): '{old}' replaced by '{x}'"));
        }
    }
    if table.cells.is_empty() {
        table.warnings.push("empty score file".into());
    }
    table.metrics = KNOWN_METRICS
        .iter()
        .map(|(_, l)| l.to_string())
        .filter(|l| table.cells.contains_key(l))
        .chain(unknown_order.iter().cloned())
        .collect();
    table.unknown_metrics = unknown_order;
    for w in &table.warnings {
        log::warn!("svp: {w}");
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_xclip_round_trips() {
        let input = "metric,variant,value\nX-CLIP Score,Baseline,25.390\nvqa,Baseline,0.522\nX-CLIP Score,ST (dirty),25.295\n";
        let t = svp_ingest(input.as_bytes()).unwrap();
        assert_eq!(t.get("X-CLIP Score", "Baseline"), Some("25.390"));
        assert_eq!(t.get("x_clip", "ST (dirty)"), Some("25.295"));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("X-CLIP Score,25.390,25.295"));
        assert!(text.contains("VQA Score (Qwen-VL),0.522,"));
    }

    #[test]
    fn empty_input_gives_empty_table() {
        for input in ["", "metric,variant,value\n"] {
            let t = svp_ingest(input.as_bytes()).unwrap();
            assert!(t.is_empty());
            assert_eq!(t.warnings.len(), 1);
        }
    }

    #[test]
    fn duplicates_last_wins() {
        let t = svp_ingest("metric,variant,value\nvqa,B,0.1\nvqa,B,0.2\n".as_bytes()).unwrap();
        assert_eq!(t.get("vqa", "B"), Some("0.2"));
        assert_eq!(t.warnings.len(), 1);
    }

    #[test]
    fn unknown_metrics_are_kept() {
        let t = svp_ingest("metric,variant,value\nsharpness,B,3\nvqa,B,0.5\n".as_bytes()).unwrap();
        assert_eq!(t.unknown_metrics, vec!["sharpness"]);
        assert_eq!(t.metrics, vec!["VQA Score (Qwen-VL)", "sharpness"]);
        assert_eq!(t.get("sharpness", "B"), Some("3"));
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(svp_ingest("metric,variant\nvqa,B\n".as_bytes()).is_err());
        assert!(svp_ingest("metric,variant,value\nvqa,B,high\n".as_bytes()).is_err());
    }
}
