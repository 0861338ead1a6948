use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Plot panel names and the conformal metric each one draws.
pub const PLOT_PANELS: [(&str, &str); 4] = [
    ("empirical_coverage", "marginal_coverage"),
    ("group_coverage_error", "mean_group_coverage_error"),
    ("fraction_retained", "frac_entities_retained"),
    ("claims_retained", "mean_claims_retained"),
];

/// Series for one panel: method -> alpha -> (value, stderr). Alphas are kept
/// as their CSV text to stay byte-stable.
type Panel = BTreeMap<String, BTreeMap<String, (String, String)>>;

/// Turns the aggregated conformal table of a bundle into one CSV per panel
/// under `plots/`, with columns `method, target_coverage, value,
/// split_stderr`, ordered by method then target coverage. Every method must
/// be present at the same two or more alphas.
pub fn emit_plots(bundle_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let bundle = bundle_dir.as_ref();
    let source = bundle.join("aggregate").join("conformal.csv");
    let mut reader = csv::Reader::from_path(&source)?;
    let mut panels: BTreeMap<&str, Panel> = BTreeMap::new();
    let mut alphas_by_method: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or_default().to_string();
        let (method, alpha, metric, group) = (field(0), field(1), field(2), field(3));
        if group != "all" {
            continue;
        }
        alphas_by_method.entry(method.clone()).or_default().insert(alpha.clone());
        if let Some((panel, _)) = PLOT_PANELS.iter().find(|(_, m)| *m == metric) {
            panels
                .entry(panel)
                .or_default()
                .entry(method)
                .or_default()
                .insert(alpha, (field(4), field(5)));
        }
    }
    if alphas_by_method.is_empty() {
        return Err(Error::Validation(format!("{} holds no conformal results", source.display())));
    }
    let all_alphas: BTreeSet<String> = alphas_by_method.values().flatten().cloned().collect();
    for (method, alphas) in &alphas_by_method {
        let missing: Vec<&String> = all_alphas.difference(alphas).collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!("method {method} has no results at alpha {missing:?}")));
        }
        if alphas.len() < 2 {
            return Err(Error::Validation(format!(
                "method {method} has results at only {} alpha; plots need at least 2",
                alphas.len()
            )));
        }
    }

    let dir = bundle.join("plots");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = Vec::new();
    for (panel, _) in PLOT_PANELS {
        let path = dir.join(format!("{panel}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["method", "target_coverage", "value", "split_stderr"])?;
        if let Some(series) = panels.get(panel) {
            for (method, points) in series {
                let mut rows: Vec<(f64, &(String, String))> = points
                    .iter()
                    .map(|(a, v)| (1.0 - a.parse::<f64>().unwrap_or(f64::NAN), v))
                    .collect();
                rows.sort_by(|x, y| x.0.total_cmp(&y.0));
                for (coverage, (value, se)) in rows {
                    w.write_record([method.as_str(), &super::fmt_alpha(coverage), value, se])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
