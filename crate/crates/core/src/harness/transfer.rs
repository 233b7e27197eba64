use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::export::file_header;
use super::{evaluate, io_err, Checkpoint, HarnessError};

/// Mean manager return of each training morphology (rows) evaluated
/// zero-shot on each test morphology (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub train_limbs: Vec<usize>,
    pub test_limbs: Vec<usize>,
    pub cells: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub episodes: usize,
    /// Config hashes of the checkpoints, one per row.
    pub config_hashes: Vec<String>,
}

pub fn transfer_matrix(
    checkpoints: &BTreeMap<usize, Checkpoint>,
    train_limbs: &[usize],
    test_limbs: &[usize],
    episodes: usize,
    parallel: usize,
) -> Result<TransferMatrix, HarnessError> {
    let mut cells = Vec::with_capacity(train_limbs.len());
    let mut stderr = Vec::with_capacity(train_limbs.len());
    let mut config_hashes = Vec::with_capacity(train_limbs.len());
    for &n in train_limbs {
        let ck = checkpoints
            .get(&n)
            .ok_or(HarnessError::MissingCheckpoint(n))?;
        if ck.config.env.limb_count != n {
            return Err(HarnessError::IncompatibleCheckpoint(format!(
                "checkpoint listed for {n} limbs was trained on {}",
                ck.config.env.limb_count
            )));
        }
        let mut row = Vec::with_capacity(test_limbs.len());
        let mut row_se = Vec::with_capacity(test_limbs.len());
        for &m in test_limbs {
            let report = evaluate(ck, Some(m), episodes, parallel)?;
            debug_assert_eq!(report.episodes(), episodes);
            row.push(report.mean_manager_return);
            row_se.push(report.stderr_manager_return);
        }
        cells.push(row);
        stderr.push(row_se);
        config_hashes.push(ck.config_hash.clone());
    }
    Ok(TransferMatrix {
        train_limbs: train_limbs.to_vec(),
        test_limbs: test_limbs.to_vec(),
        cells,
        stderr,
        episodes,
        config_hashes,
    })
}

/// Rows whose best test morphology lies within one limb of the training one,
/// out of all rows.
pub fn diagonal_trend(m: &TransferMatrix) -> (usize, usize) {
    let near = m
        .cells
        .iter()
        .zip(&m.train_limbs)
        .filter(|(row, &n)| {
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            m.test_limbs.get(best).is_some_and(|&t| t.abs_diff(n) <= 1)
        })
        .count();
    (near, m.cells.len())
}

/// White for the row minimum through to blue for the row maximum.
pub fn row_colors(row: &[f64]) -> Vec<(u8, u8, u8)> {
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter()
        .map(|&v| {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            let rg = (255.0 - t * (255.0 - 122.0)).round() as u8;
            (rg, rg, 255)
        })
        .collect()
}

impl TransferMatrix {
    fn provenance(&self) -> String {
        file_header(&self.config_hashes.join("+"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut text = format!(
            "# {} episodes={}\ntrain_limbs",
            self.provenance(),
            self.episodes
        );
        for t in &self.test_limbs {
            let _ = write!(text, ",test_{t}");
        }
        text.push('\n');
        for (n, row) in self.train_limbs.iter().zip(&self.cells) {
            let _ = write!(text, "{n}");
            for v in row {
                let _ = write!(text, ",{v}");
            }
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| io_err(path, e))
    }

    /// HTML table with a per-row colour scale.
    pub fn write_html(&self, path: &Path) -> Result<(), HarnessError> {
        let mut html = format!(
            "<!DOCTYPE html>\n<!-- {} -->\n<html><head><meta charset=\"utf-8\"><title>Transfer returns</title>\
             <style>table{{border-collapse:collapse;font-family:sans-serif}}td,th{{border:1px solid #999;padding:4px 10px;text-align:right}}</style>\
             </head><body>\n<p>Mean return over {} episodes; rows are training limbs, columns test limbs.</p>\n<table>\n<tr><th>train \\ test</th>",
            self.provenance(),
            self.episodes
        );
        for t in &self.test_limbs {
            let _ = write!(html, "<th>{t}</th>");
        }
        html.push_str("</tr>\n");
        for (n, row) in self.train_limbs.iter().zip(&self.cells) {
            let _ = write!(html, "<tr><th>{n}</th>");
            for (v, (r, g, b)) in row.iter().zip(row_colors(row)) {
                let _ = write!(
                    html,
                    "<td style=\"background:#{r:02x}{g:02x}{b:02x}\">{v:.3}</td>"
                );
            }
            html.push_str("</tr>\n");
        }
        html.push_str("</table>\n</body></html>\n");
        std::fs::write(path, html).map_err(|e| io_err(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SnakeConfig;
    use crate::harness::{train, ExperimentConfig, TrainOptions};

    fn tiny_checkpoints(limbs: &[usize]) -> BTreeMap<usize, Checkpoint> {
        limbs
            .iter()
            .map(|&n| {
                let cfg = ExperimentConfig {
                    env: SnakeConfig {
                        max_steps: 10,
                        ..SnakeConfig::with_limbs(n)
                    },
                    generations: 1,
                    popsize: 4,
                    ..Default::default()
                };
                (n, train(&cfg, &TrainOptions::default()).unwrap())
            })
            .collect()
    }

    #[test]
    fn matrix_cells_match_direct_evaluation() {
        let cks = tiny_checkpoints(&[3, 4]);
        let m = transfer_matrix(&cks, &[3, 4], &[3, 4, 5], 3, 1).unwrap();
        assert_eq!(m.cells.len(), 2);
        assert!(m.cells.iter().all(|r| r.len() == 3));
        for (i, n) in [3, 4].iter().enumerate() {
            for (j, t) in [3, 4, 5].iter().enumerate() {
                let direct = evaluate(&cks[n], Some(*t), 3, 1)
                    .unwrap()
                    .mean_manager_return;
                assert_eq!(m.cells[i][j].to_bits(), direct.to_bits());
            }
        }
        // diagonal cell is the training morphology itself
        let own = evaluate(&cks[&4], None, 3, 1).unwrap().mean_manager_return;
        assert_eq!(m.cells[1][1], own);
    }

    #[test]
    fn missing_checkpoint() {
        let cks = tiny_checkpoints(&[3]);
        assert!(matches!(
            transfer_matrix(&cks, &[3, 5], &[3], 1, 1),
            Err(HarnessError::MissingCheckpoint(5))
        ));
    }

    #[test]
    fn row_scale_is_per_row() {
        assert_eq!(
            row_colors(&[1.0, 3.0, 2.0]),
            vec![(255, 255, 255), (122, 122, 255), (189, 189, 255)]
        );
        assert_eq!(row_colors(&[-100.0, 100.0]), row_colors(&[0.1, 0.2]));
        assert_eq!(row_colors(&[5.0, 5.0]), vec![(255, 255, 255); 2]);
    }

    #[test]
    fn exports_and_trend() {
        let m = TransferMatrix {
            train_limbs: vec![3, 4, 5],
            test_limbs: vec![3, 4, 5],
            cells: vec![
                vec![3.0, 2.0, 1.0],
                vec![1.0, 2.0, 3.0],
                vec![9.0, 1.0, 1.0],
            ],
            stderr: vec![vec![0.0; 3]; 3],
            episodes: 100,
            config_hashes: vec!["a".into(), "b".into(), "c".into()],
        };
        assert_eq!(diagonal_trend(&m), (2, 3));
        let dir = tempfile::tempdir().unwrap();
        m.write_csv(&dir.path().join("t.csv")).unwrap();
        m.write_html(&dir.path().join("t.html")).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(csv.lines().nth(1), Some("train_limbs,test_3,test_4,test_5"));
        assert_eq!(csv.lines().nth(2), Some("3,3,2,1"));
        let html = std::fs::read_to_string(dir.path().join("t.html")).unwrap();
        assert_eq!(html.matches("<td").count(), 9);
        assert!(html.contains("#7a7aff"));
    }
}
