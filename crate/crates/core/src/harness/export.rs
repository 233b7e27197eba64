use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{io_err, GenerationRecord, HarnessError, ARTIFACT_VERSION};

/// Width of the trailing running mean applied to learning curves.
pub const SMOOTHING_WINDOW: usize = 12;

/// Provenance line (without the comment marker) for every output file.
pub fn file_header(config_hash: &str) -> String {
    format!("{ARTIFACT_VERSION} config={config_hash}")
}

/// Trailing mean over the last `window` values (fewer at the start).
pub fn running_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let slice = &values[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOutput {
    pub csv: PathBuf,
    pub svg: PathBuf,
}

fn polyline(values: &[f64], x_of: impl Fn(usize) -> f64, y_of: impl Fn(f64) -> f64) -> String {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{:.2},{:.2}", x_of(i), y_of(*v)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes `curve.csv` (raw and smoothed returns per generation) and a simple
/// `curve.svg` learning-curve chart into `dir`.
pub fn plot(
    records: &[GenerationRecord],
    dir: &Path,
    config_hash: &str,
) -> Result<PlotOutput, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let best: Vec<f64> = records.iter().map(|r| r.best_manager_return).collect();
    let mean: Vec<f64> = records.iter().map(|r| r.mean_manager_return).collect();
    let worker: Vec<f64> = records.iter().map(|r| r.mean_worker_return).collect();
    let (best_s, mean_s, worker_s) = (
        running_mean(&best, SMOOTHING_WINDOW),
        running_mean(&mean, SMOOTHING_WINDOW),
        running_mean(&worker, SMOOTHING_WINDOW),
    );
    let mut csv = format!(
        "# {}\ngeneration,best_manager_return,mean_manager_return,mean_worker_return,best_manager_smoothed,mean_manager_smoothed,mean_worker_smoothed\n",
        file_header(config_hash)
    );
    for (i, r) in records.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.generation, best[i], mean[i], worker[i], best_s[i], mean_s[i], worker_s[i]
        );
    }
    let csv_path = dir.join("curve.csv");
    std::fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;

    let (w, h, pad) = (640.0, 360.0, 40.0);
    let lo = best_s
        .iter()
        .chain(&mean_s)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = best_s
        .iter()
        .chain(&mean_s)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if records.is_empty() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    };
    let n = records.len().max(2) - 1;
    let x_of = |i: usize| pad + (w - 2.0 * pad) * i as f64 / n as f64;
    let y_of = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
    let mut svg = String::new();
    let _ = writeln!(svg, "<!-- {} -->", file_header(config_hash));
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{y}" stroke="black"/>"#,
        y = h - pad,
        x2 = w - pad
    );
    let _ = writeln!(
        svg,
        r#"<text x="{pad}" y="{}" font-size="12">{hi:.3}</text>"#,
        pad - 6.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{pad}" y="{}" font-size="12">{lo:.3}</text>"#,
        h - pad + 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12">generation</text>"#,
        w / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#1f4e9c" stroke-width="2" points="{}"/>"##,
        polyline(&best_s, x_of, y_of)
    );
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#9c1f1f" stroke-width="2" points="{}"/>"##,
        polyline(&mean_s, x_of, y_of)
    );
    let _ = writeln!(
        svg,
        r##"<text x="{}" y="20" font-size="12" fill="#1f4e9c">best R_M</text>"##,
        w - 160.0
    );
    let _ = writeln!(
        svg,
        r##"<text x="{}" y="20" font-size="12" fill="#9c1f1f">mean R_M</text>"##,
        w - 90.0
    );
    svg.push_str("</svg>\n");
    let svg_path = dir.join("curve.svg");
    std::fs::write(&svg_path, svg).map_err(|e| io_err(&svg_path, e))?;
    Ok(PlotOutput {
        csv: csv_path,
        svg: svg_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_window() {
        let v: Vec<f64> = (1..=15).map(f64::from).collect();
        let s = running_mean(&v, 12);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 1.5);
        assert_eq!(s[11], 6.5);
        // values 2..=13
        assert_eq!(s[12], 7.5);
        assert_eq!(s[14], 9.5);
        assert_eq!(running_mean(&v, 1), v);
    }

    #[test]
    fn plot_files() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<GenerationRecord> = (0..20)
            .map(|g| GenerationRecord {
                generation: g,
                best_manager_return: g as f64,
                mean_manager_return: g as f64 / 2.0,
                std_manager_return: 1.0,
                best_worker_return: 0.0,
                mean_worker_return: 0.0,
                evaluations: 6 * (g + 1),
                wall_time: 0.1,
            })
            .collect();
        let out = plot(&records, dir.path(), "cafe").unwrap();
        let csv = std::fs::read_to_string(out.csv).unwrap();
        assert_eq!(csv.lines().count(), 22);
        assert!(csv.starts_with("# feudal "));
        let last = csv.lines().last().unwrap();
        // smoothed best over generations 8..=19
        assert!(last.contains(",13.5,"));
        let svg = std::fs::read_to_string(out.svg).unwrap();
        assert!(svg.contains("<polyline") && svg.contains("config=cafe"));
    }
}
