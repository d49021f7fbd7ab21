//! Brute-force reference implementations used to check the library.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vse_core::backbone::{cross_attention_maps, self_attention_maps, AttnMatrix, BackboneParams};
use vse_core::geometry::{ImageGrid, ViewSpec};
use vse_core::select::AttentionRecord;
use vse_core::Vec3;

pub fn dense(m: &AttnMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect()).collect()
}

/// Σ_i KL(row_i ‖ mean row), floored at `eps` inside the logs.
pub fn kl_layer(rows: &[Vec<f64>], eps: f64) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let cols = rows[0].len();
    let q: Vec<f64> = (0..cols)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
        .collect();
    let mut kl = 0.0;
    for r in rows {
        for j in 0..cols {
            if r[j] > 0.0 {
                kl += r[j] * (r[j].max(eps) / q[j].max(eps)).ln();
            }
        }
    }
    kl
}

pub fn informativeness(record: &AttentionRecord, eps: f64) -> Vec<f64> {
    let layers = record.cross[0].len();
    (0..layers)
        .map(|l| record.cross.iter().map(|pass| kl_layer(&dense(&pass[l]), eps)).sum())
        .collect()
}

/// Top `k` layers by score; on equal scores the earlier layer wins.
pub fn top_layers(d: &[f64], k: usize) -> Vec<usize> {
    let mut chosen = Vec::new();
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for l in 0..d.len() {
            if chosen.contains(&l) {
                continue;
            }
            if best.map_or(true, |b| d[l] > d[b]) {
                best = Some(l);
            }
        }
        chosen.push(best.unwrap());
    }
    chosen.sort();
    chosen
}

/// Ids whose score beats `alpha` times the mean of the top `ceil(n / m)`.
pub fn threshold_select(scores: &BTreeMap<u32, f64>, alpha: f64, m: usize) -> BTreeSet<u32> {
    if scores.is_empty() {
        return BTreeSet::new();
    }
    let n = scores.len();
    let k = n.div_ceil(m).max(1);
    let mut v: Vec<f64> = scores.values().copied().collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let tau = alpha * v[..k].iter().sum::<f64>() / k as f64;
    scores.iter().filter(|(_, s)| **s > tau).map(|(id, _)| *id).collect()
}

fn averaged(sums: BTreeMap<u32, (f64, f64)>) -> BTreeMap<u32, f64> {
    sums.into_iter().map(|(id, (s, n))| (id, s / n)).collect()
}

pub fn seeding(record: &AttentionRecord, mask: &[f64], live: &BTreeSet<u32>, k: usize, alpha: f64, m: usize, eps: f64) -> BTreeSet<u32> {
    if record.timesteps.is_empty() {
        return BTreeSet::new();
    }
    let d = informativeness(record, eps);
    let layers = top_layers(&d, k.min(d.len()));
    let mut sums: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for (pass, ids) in record.cross.iter().zip(&record.ids) {
        for &l in &layers {
            let a = dense(&pass[l]);
            for (i, id) in ids.iter().enumerate() {
                if !live.contains(id) {
                    continue;
                }
                let mass: f64 = a[i].iter().zip(mask).map(|(x, w)| x * w).sum();
                let e = sums.entry(*id).or_default();
                e.0 += mass;
                e.1 += 1.0;
            }
        }
    }
    threshold_select(&averaged(sums), alpha, m)
}

pub fn gating(record: &AttentionRecord, reference: &BTreeSet<u32>, live: &BTreeSet<u32>, alpha: f64, m: usize) -> BTreeSet<u32> {
    let mut sums: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for (pass, ids) in record.self_attn.iter().zip(&record.ids) {
        for layer in pass {
            let a = dense(layer);
            for (i, id) in ids.iter().enumerate() {
                if !live.contains(id) {
                    continue;
                }
                let mass: f64 = ids
                    .iter()
                    .enumerate()
                    .filter(|(_, j)| reference.contains(j))
                    .map(|(j, _)| a[i][j])
                    .sum();
                let e = sums.entry(*id).or_default();
                e.0 += mass;
                e.1 += 1.0;
            }
        }
    }
    threshold_select(&averaged(sums), alpha, m)
}

/// Element-by-element evaluation of `E \ (C \ S)`.
pub fn prune(e: &BTreeSet<u32>, c: &BTreeSet<u32>, s: &BTreeSet<u32>) -> BTreeSet<u32> {
    let mut out = BTreeSet::new();
    for x in e {
        let conflicting = c.contains(x) && !s.contains(x);
        if !conflicting {
            out.insert(*x);
        }
    }
    out
}

pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    let one = |x: &[Vec3], y: &[Vec3]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    0.5 * (one(a, b) + one(b, a))
}

fn random_softmax_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sharp: f64) -> AttnMatrix {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let logits: Vec<f64> = (0..cols).map(|_| sharp * rng.random::<f64>()).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        data.extend(e.iter().map(|x| x / z));
    }
    AttnMatrix::dense(rows, cols, data).unwrap()
}

/// A random record. Odd seeds use dense softmax matrices with a uniform layer
/// at a random position; even seeds use the synthetic backbone's maps over
/// random anchors. Ids are a random subset of `0..3n`.
pub fn random_record(seed: u64) -> (AttentionRecord, ImageGrid, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..40usize);
    let size = 8 + 4 * rng.random_range(0..3usize);
    let mut ids: Vec<u32> = (0..3 * n as u32).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    ids.truncate(n);
    ids.sort();
    let mut mask = ImageGrid::new(size, size, 1);
    let (r0, c0) = (rng.random_range(0..size / 2), rng.random_range(0..size / 2));
    let (h, w) = (rng.random_range(1..size / 2), rng.random_range(1..size / 2));
    for r in r0..r0 + h {
        for c in c0..c0 + w {
            mask.set(r, c, 0, 1.0);
        }
    }
    let mut record = AttentionRecord::default();
    let passes = rng.random_range(1..4);
    if seed % 2 == 1 {
        let layers = rng.random_range(2..5usize);
        let uniform_at = rng.random_range(0..layers);
        for p in 0..passes {
            let cross: Vec<Arc<AttnMatrix>> = (0..layers)
                .map(|l| {
                    Arc::new(if l == uniform_at {
                        AttnMatrix::Uniform { rows: n, cols: size * size }
                    } else {
                        random_softmax_rows(&mut rng, n, size * size, 2.0 + 6.0 * l as f64)
                    })
                })
                .collect();
            let slf = vec![Arc::new(random_softmax_rows(&mut rng, n, n, 5.0)); 2];
            record.push_maps(1.0 - 0.2 * p as f64, ids.clone(), cross, slf);
        }
    } else {
        let params = BackboneParams::default();
        let view = ViewSpec::front(size);
        for p in 0..passes {
            let pos: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)))
                .collect();
            let nrm: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize())
                .collect();
            let cross = cross_attention_maps(&pos, &nrm, &view, &params);
            let slf = self_attention_maps(&pos, &params);
            record.push_maps(1.0 - 0.2 * p as f64, ids.clone(), cross, slf);
        }
    }
    (record, mask, ids)
}
