//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls into the library's numerical code: the solvers,
//! objective and AUC below are written from their textbook definitions.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use provrec::matrix::Entry;
use provrec::{Rating, UtilityMatrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Solves a dense square system by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Ridge regression through the normal equations `(XᵀX + λI) w = Xᵀy`.
pub fn ridge_oracle(rows: &[Vec<f64>], y: &[f64], k: usize, lambda: f64) -> Vec<f64> {
    let mut a = vec![vec![0.0; k]; k];
    let mut b = vec![0.0; k];
    for (x, &t) in rows.iter().zip(y) {
        for i in 0..k {
            b[i] += x[i] * t;
            for j in 0..k {
                a[i][j] += x[i] * x[j];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += lambda;
    }
    gauss_solve(a, b)
}

/// Σ (r − qᵀp)² + λ(Σ‖p‖² + Σ‖q‖²) over plain nested vectors.
pub fn objective_oracle(p: &[Vec<f64>], q: &[Vec<f64>], cells: &[(usize, usize, f64)], lambda: f64) -> f64 {
    let mut loss = 0.0;
    for &(u, i, r) in cells {
        let pred: f64 = p[u].iter().zip(&q[i]).map(|(a, b)| a * b).sum();
        loss += (r - pred).powi(2);
    }
    let reg: f64 = p.iter().chain(q).flatten().map(|x| x * x).sum();
    loss + lambda * reg
}

pub fn to_nested(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn cells(m: &UtilityMatrix) -> Vec<(usize, usize, f64)> {
    m.entries().iter().map(|e| (e.row, e.col, e.rating.as_f64())).collect()
}

/// Probability that a random success outscores a random failure, ties ½.
pub fn auc_oracle(scored: &[(f64, Rating)]) -> f64 {
    let pos: Vec<f64> = scored.iter().filter(|s| s.1.is_success()).map(|s| s.0).collect();
    let neg: Vec<f64> = scored.iter().filter(|s| !s.1.is_success()).map(|s| s.0).collect();
    let mut total = 0.0;
    for &a in &pos {
        for &b in &neg {
            total += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    total / (pos.len() * neg.len()) as f64
}

/// Random sparse matrix with uniform ratings. Rows and columns may be empty.
pub fn random_sparse(rng: &mut ChaCha8Rng, max_dim: usize, density: (f64, f64)) -> UtilityMatrix {
    loop {
        let np = rng.gen_range(2..=max_dim);
        let nd = rng.gen_range(2..=max_dim);
        let dens = rng.gen_range(density.0..=density.1);
        let mut entries = Vec::new();
        for row in 0..np {
            for col in 0..nd {
                if rng.gen::<f64>() < dens {
                    let rating = if rng.gen::<bool>() { Rating::Success } else { Rating::Failed };
                    entries.push(Entry { row, col, rating });
                }
            }
        }
        if entries.is_empty() {
            continue;
        }
        let pids: Vec<String> = (0..np).map(|i| format!("p{i}")).collect();
        let dids: Vec<String> = (0..nd).map(|i| format!("d{i}")).collect();
        return UtilityMatrix::new(pids, dids, entries).unwrap();
    }
}

/// Provenance fixture: records and manifests built from a known truth table.
pub struct ProvenanceFixture {
    pub records_jsonl: String,
    pub manifests_csv: String,
    /// Expected (pipeline, dataset, exit_code) per attributable record.
    pub expected: Vec<(String, String, i64)>,
    pub zero_overlap: Vec<String>,
    pub malformed_lines: usize,
}

/// `n_p` pipelines run against `n_d` datasets of three files each; a quarter
/// of the pairs are skipped, some pairs run twice, a few records touch no
/// known file, and one line is malformed.
pub fn provenance_fixture(seed: u64, n_p: usize, n_d: usize) -> ProvenanceFixture {
    let mut r = rng(seed);
    let hash = |d: usize, f: usize| format!("{:064x}", (d as u128 + 1) * 1_000_003 + f as u128);
    let mut manifests_csv = String::from("dataset_id,hash\n");
    for d in 0..n_d {
        for f in 0..3 {
            writeln!(manifests_csv, "ds-{d},{}", hash(d, f)).unwrap();
        }
    }
    let mut lines = Vec::new();
    let mut expected = Vec::new();
    let mut zero_overlap = Vec::new();
    let mut id = 0;
    for p in 0..n_p {
        for d in 0..n_d {
            if r.gen::<f64>() < 0.25 {
                continue;
            }
            let runs = if r.gen::<f64>() < 0.2 { 2 } else { 1 };
            for _ in 0..runs {
                let exit: i64 = if r.gen::<f64>() < 0.45 { 0 } else { r.gen_range(1..4) };
                let mut inputs: Vec<String> = (0..r.gen_range(1..=3)).map(|f| hash(d, f)).collect();
                inputs.push(format!("{:064x}", 0xdead_0000u64 + id as u64));
                inputs.shuffle(&mut r);
                id += 1;
                lines.push(serde_json::json!({
                    "record_id": format!("rec-{id}"),
                    "pipeline_id": format!("pl-{p}"),
                    "input_hashes": inputs,
                    "exit_code": exit,
                    "timestamp": format!("2021-03-{:02}T12:00:00Z", 1 + id % 28),
                }).to_string());
                expected.push((format!("pl-{p}"), format!("ds-{d}"), exit));
            }
        }
    }
    for z in 0..3 {
        id += 1;
        let rid = format!("rec-{id}");
        lines.push(serde_json::json!({
            "record_id": rid,
            "pipeline_id": format!("pl-{z}"),
            "input_hashes": [format!("{:064x}", 0xbeef_0000u64 + z)],
            "exit_code": 0,
        }).to_string());
        zero_overlap.push(rid);
    }
    lines.push("{\"pipeline_id\": \"pl-0\", \"exit_code\": ".to_string());
    let mut records_jsonl = lines.join("\n");
    records_jsonl.push('\n');
    ProvenanceFixture {
        records_jsonl,
        manifests_csv,
        expected,
        zero_overlap,
        malformed_lines: 1,
    }
}

pub fn write_fixture(dir: &Path, fx: &ProvenanceFixture) {
    std::fs::write(dir.join("records.jsonl"), &fx.records_jsonl).unwrap();
    std::fs::write(dir.join("manifests.csv"), &fx.manifests_csv).unwrap();
}

/// Survey in which experts lean towards the true outcome.
pub fn survey_csv(m: &UtilityMatrix, seed: u64) -> String {
    let mut r = rng(seed);
    let mut s = String::from("pipeline_id,dataset_id,expert_id,prediction,confidence\n");
    for e in m.entries() {
        let p = m.pipeline_id(e.row).unwrap();
        let d = m.dataset_id(e.col).unwrap();
        for ex in 0..r.gen_range(1..=2) {
            let correct = r.gen::<f64>() < 0.7;
            let says_success = e.rating.is_success() == correct;
            let (pred, conf) = if r.gen::<f64>() < 0.2 {
                ("", "some")
            } else {
                (if says_success { "success" } else { "failure" }, if r.gen::<bool>() { "good" } else { "expert" })
            };
            writeln!(s, "{p},{d},expert-{ex},{pred},{conf}").unwrap();
        }
    }
    s
}
