//! Measurement harness: subset-decoding fidelity sweeps and preservation
//! metrics for edits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_mesh, encode, tokens_in_box, CodecParams, TokenSet};
use crate::geometry::{
    chamfer_distance, crop_mesh, crop_mesh_outside, render_view, sample_surface, BoundingBox, Channel, ImageGrid,
    PrimitiveScene, TriangleMesh, ViewSpec,
};
use crate::{Error, Result, Vec3};

pub const DEFAULT_EPS: [f64; 4] = [0.30, 0.10, 0.05, 0.01];
/// Points sampled per side for every Chamfer distance.
pub const CD_SAMPLES: usize = 10_000;
pub const PSNR_SENTINEL: f64 = 99.0;

const MIN_COVERAGE: f64 = 0.05;
const MAX_COVERAGE: f64 = 0.50;
const BOX_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub eps: Vec<f64>,
    /// Pass rate of decode-everything-then-crop, per ε.
    pub crop_pass_rate: Vec<f64>,
    /// Pass rate of decoding only the tokens inside the box, per ε.
    pub subset_pass_rate: Vec<f64>,
    pub trials: usize,
    pub skipped: usize,
    pub crop_cd: Vec<Option<f64>>,
    pub subset_cd: Vec<Option<f64>>,
    pub coverage: Vec<f64>,
}

impl PropertyReport {
    pub fn is_monotone(&self) -> bool {
        let mono = |r: &[f64]| r.windows(2).all(|w| w[1] <= w[0]);
        let mut order: Vec<usize> = (0..self.eps.len()).collect();
        order.sort_by(|&a, &b| self.eps[b].total_cmp(&self.eps[a]));
        let pick = |r: &[f64]| order.iter().map(|&i| r[i]).collect::<Vec<_>>();
        mono(&pick(&self.crop_pass_rate)) && mono(&pick(&self.subset_pass_rate))
    }

    pub fn crop_dominates(&self) -> bool {
        self.crop_pass_rate.iter().zip(&self.subset_pass_rate).all(|(c, s)| c >= s)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<22}", "eps");
        for e in &self.eps {
            s.push_str(&format!("{e:>9.2}"));
        }
        s.push('\n');
        for (name, rates) in [("decode-then-crop", &self.crop_pass_rate), ("subset-decode", &self.subset_pass_rate)] {
            s.push_str(&format!("{name:<22}"));
            for r in rates {
                s.push_str(&format!("{:>8.1}%", 100.0 * r));
            }
            s.push('\n');
        }
        s.push_str(&format!("trials {}  skipped {}\n", self.trials, self.skipped));
        s
    }
}

fn pass_rates(cds: &[Option<f64>], eps: &[f64]) -> Vec<f64> {
    eps.iter()
        .map(|&e| {
            if cds.is_empty() {
                return 0.0;
            }
            cds.iter().filter(|c| c.is_some_and(|c| c < e)).count() as f64 / cds.len() as f64
        })
        .collect()
}

struct Trial {
    crop: Option<f64>,
    subset: Option<f64>,
    coverage: f64,
}

/// For random boxes on each scene, compares the decoded surface inside the
/// box against the true surface inside the box two ways: cropping the full
/// decode, and decoding only the tokens whose anchors fall in the box.
pub fn geometry_property_sweep(
    scenes: &[PrimitiveScene],
    boxes_per_scene: usize,
    eps: &[f64],
    codec: &CodecParams,
    seed: u64,
) -> Result<PropertyReport> {
    if scenes.is_empty() {
        return Err(Error::InvalidParam("no scenes".into()));
    }
    codec.validate()?;
    let per_scene: Vec<Result<(Vec<Trial>, usize)>> = scenes
        .par_iter()
        .enumerate()
        .map(|(s, scene)| scene_trials(scene, boxes_per_scene, codec, seed.wrapping_add(s as u64 * 7919)))
        .collect();
    let mut trials = Vec::new();
    let mut skipped = 0;
    for r in per_scene {
        let (t, k) = r?;
        trials.extend(t);
        skipped += k;
    }
    let crop_cd: Vec<Option<f64>> = trials.iter().map(|t| t.crop).collect();
    let subset_cd: Vec<Option<f64>> = trials.iter().map(|t| t.subset).collect();
    Ok(PropertyReport {
        eps: eps.to_vec(),
        crop_pass_rate: pass_rates(&crop_cd, eps),
        subset_pass_rate: pass_rates(&subset_cd, eps),
        trials: trials.len(),
        skipped,
        crop_cd,
        subset_cd,
        coverage: trials.iter().map(|t| t.coverage).collect(),
    })
}

fn scene_trials(scene: &PrimitiveScene, boxes: usize, codec: &CodecParams, seed: u64) -> Result<(Vec<Trial>, usize)> {
    let tokens = encode(&scene.sample_surface(codec.n_surf, seed)?, codec, seed)?;
    let full = decode_mesh(&tokens, codec.grid_resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB0C5);
    let mut out = Vec::with_capacity(boxes);
    let mut skipped = 0;
    for b in 0..boxes {
        let Some(bx) = random_box(&tokens, &mut rng) else {
            skipped += 1;
            continue;
        };
        let ids = tokens_in_box(&tokens, &bx);
        let trial_seed = seed.wrapping_mul(31).wrapping_add(b as u64);
        let Some(truth) = truth_in_box(scene, &bx, trial_seed)? else {
            skipped += 1;
            continue;
        };
        let crop = cd_to(&crop_mesh(&full, &bx), &truth, trial_seed);
        let subset_mesh = decode_mesh(&tokens.subset(&ids), codec.grid_resolution)?;
        let subset = cd_to(&subset_mesh, &truth, trial_seed);
        out.push(Trial {
            crop,
            subset,
            coverage: ids.len() as f64 / tokens.len() as f64,
        });
    }
    Ok((out, skipped))
}

/// A box around a random anchor whose anchor coverage lies in 5–50%.
fn random_box(tokens: &TokenSet, rng: &mut ChaCha8Rng) -> Option<BoundingBox> {
    if tokens.is_empty() {
        return None;
    }
    for _ in 0..BOX_ATTEMPTS {
        let a = tokens.tokens[rng.random_range(0..tokens.len())].anchor_position;
        let center = a + Vec3::from_fn(|_, _| rng.random_range(-0.1..0.1));
        let half = Vec3::from_fn(|_, _| rng.random_range(0.1..0.5));
        let bx = BoundingBox::from_center_half(center, half).ok()?;
        let frac = tokens_in_box(tokens, &bx).len() as f64 / tokens.len() as f64;
        if (MIN_COVERAGE..=MAX_COVERAGE).contains(&frac) {
            return Some(bx);
        }
    }
    None
}

/// Exact surface samples of the scene inside `bx`, by rejection.
fn truth_in_box(scene: &PrimitiveScene, bx: &BoundingBox, seed: u64) -> Result<Option<Vec<Vec3>>> {
    let mut pts = Vec::with_capacity(CD_SAMPLES);
    for round in 0..40u64 {
        let batch = scene.sample_surface(4 * CD_SAMPLES, seed.wrapping_add(round * 104_729))?;
        pts.extend(batch.iter().map(|s| s.position).filter(|p| bx.contains(p)));
        if pts.len() >= CD_SAMPLES {
            pts.truncate(CD_SAMPLES);
            return Ok(Some(pts));
        }
    }
    Ok((!pts.is_empty()).then_some(pts))
}

fn cd_to(mesh: &TriangleMesh, truth: &[Vec3], seed: u64) -> Option<f64> {
    let pts = mesh_points(mesh, seed).ok()?;
    chamfer_distance(&pts, truth).ok()
}

pub fn mesh_points(mesh: &TriangleMesh, seed: u64) -> Result<Vec<Vec3>> {
    Ok(sample_surface(mesh, CD_SAMPLES, seed)?.iter().map(|s| s.position).collect())
}

/// Chamfer distance between two meshes from `CD_SAMPLES` points each.
pub fn mesh_chamfer(a: &TriangleMesh, b: &TriangleMesh, seed: u64) -> Result<f64> {
    chamfer_distance(&mesh_points(a, seed)?, &mesh_points(b, seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreservationReport {
    pub cd_unedited: f64,
    pub psnr_masked: f64,
    pub ssim_masked: f64,
    /// Wall-clock time; kept out of the serialized report so reruns match.
    #[serde(skip)]
    pub runtime_s: f64,
}

impl PreservationReport {
    pub fn table(&self) -> String {
        format!(
            "{:<14}{:>12}{:>12}\n{:<14.5}{:>12.3}{:>12.5}\n",
            "CD", "PSNR(M)", "SSIM(M)", self.cd_unedited, self.psnr_masked, self.ssim_masked
        )
    }
}

const PRESERVATION_SEED: u64 = 0;

/// How well `edited` keeps `src` outside `edit_box`: Chamfer distance of
/// the complements and masked PSNR/SSIM of the normal renders.
pub fn preservation_metrics(
    src: &TriangleMesh,
    edited: &TriangleMesh,
    edit_box: &BoundingBox,
    views: &[ViewSpec],
) -> Result<PreservationReport> {
    let start = std::time::Instant::now();
    let a = crop_mesh_outside(src, edit_box);
    let b = crop_mesh_outside(edited, edit_box);
    if a.is_empty() && b.is_empty() {
        return Err(Error::EditCoversEverything);
    }
    let cd_unedited = mesh_chamfer(&a, &b, PRESERVATION_SEED)?;
    let box_mesh = TriangleMesh::cuboid(edit_box);
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut ssim_sum = 0.0;
    let mut ssim_n = 0usize;
    for v in views {
        let x = render_view(src, v, Channel::Normal);
        let y = render_view(edited, v, Channel::Normal);
        let sil = render_view(&box_mesh, v, Channel::Silhouette);
        let keep: Vec<bool> = sil.pixels.iter().map(|&s| s == 0.0).collect();
        for (j, &k) in keep.iter().enumerate() {
            if k {
                for (p, q) in x.pixel(j).iter().zip(y.pixel(j)) {
                    sq += (p - q) * (p - q);
                }
                count += x.channels;
            }
        }
        if let Some((s, n)) = masked_ssim(&x, &y, &keep) {
            ssim_sum += s;
            ssim_n += n;
        }
    }
    if count == 0 {
        return Err(Error::EditCoversEverything);
    }
    Ok(PreservationReport {
        cd_unedited,
        psnr_masked: psnr(sq / count as f64),
        ssim_masked: if ssim_n == 0 { 1.0 } else { ssim_sum / ssim_n as f64 },
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// PSNR for unit-range signals, clipped at the sentinel.
pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_SENTINEL;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_SENTINEL)
}

pub fn image_psnr(a: &ImageGrid, b: &ImageGrid) -> f64 {
    let mse = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.pixels.len() as f64;
    psnr(mse)
}

const SSIM_WINDOW: usize = 8;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Sum and count of per-channel SSIM over non-overlapping 8×8 windows lying
/// entirely in the kept region.
fn masked_ssim(x: &ImageGrid, y: &ImageGrid, keep: &[bool]) -> Option<(f64, usize)> {
    let w = SSIM_WINDOW;
    let mut sum = 0.0;
    let mut n = 0;
    for r0 in (0..x.height.saturating_sub(w - 1)).step_by(w) {
        for c0 in (0..x.width.saturating_sub(w - 1)).step_by(w) {
            let pix: Vec<usize> = (r0..r0 + w)
                .flat_map(|r| (c0..c0 + w).map(move |c| r * x.width + c))
                .collect();
            if !pix.iter().all(|&j| keep[j]) {
                continue;
            }
            for ch in 0..x.channels {
                let a: Vec<f64> = pix.iter().map(|&j| x.pixel(j)[ch]).collect();
                let b: Vec<f64> = pix.iter().map(|&j| y.pixel(j)[ch]).collect();
                sum += ssim(&a, &b);
                n += 1;
            }
        }
    }
    (n > 0).then_some((sum, n))
}

pub fn ssim(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
    let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
}
