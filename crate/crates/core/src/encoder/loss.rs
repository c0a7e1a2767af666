use std::collections::BTreeMap;

use super::net::EmbeddedFrame;
use super::train::TrainConfig;
use crate::error::{Error, Result};

/// `A·B / (‖A‖‖B‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimsMismatch(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Smallest norm accepted in the loss; instance means that cancel below this
/// contribute nothing.
const MEAN_NORM_FLOOR: f64 = 1e-12;

/// Cosine and its gradients with respect to both arguments.
fn cos_with_grads(a: &[f64], b: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let na = norm(a);
    let nb = norm(b);
    if na < MEAN_NORM_FLOOR || nb < MEAN_NORM_FLOOR {
        return None;
    }
    let c = dot(a, b) / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - c * x / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - c * y / (nb * nb))
        .collect();
    Some((c, ga, gb))
}

/// Loss value, its unweighted parts, and gradients per window step.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub total: f64,
    pub pull: f64,
    pub push: f64,
    pub fg_bce: f64,
    pub neighbor_pairs: usize,
    /// Gradient w.r.t. each frame's embedding vectors, pixel-major.
    pub grad_vectors: Vec<Vec<f64>>,
    /// Gradient w.r.t. each frame's foreground scores.
    pub grad_fg_scores: Vec<Vec<f64>>,
    /// Gradient w.r.t. the pre-sigmoid foreground logits.
    pub grad_fg_logits: Vec<Vec<f64>>,
}

/// Instance pairs whose masks come within `radius` pixels in some valid frame.
fn neighbor_pairs(
    labels: &[Vec<u32>],
    valid: &[bool],
    h: usize,
    w: usize,
    radius: f64,
) -> Vec<(u32, u32)> {
    let mut pairs = std::collections::BTreeSet::new();
    let r2 = radius * radius;
    for (frame, _) in labels.iter().zip(valid).filter(|(_, v)| **v) {
        let mut boundary: BTreeMap<u32, Vec<(isize, isize)>> = BTreeMap::new();
        for y in 0..h {
            for x in 0..w {
                let id = frame[y * w + x];
                if id == 0 {
                    continue;
                }
                let edge = y == 0
                    || x == 0
                    || y + 1 == h
                    || x + 1 == w
                    || frame[(y - 1) * w + x] != id
                    || frame[(y + 1) * w + x] != id
                    || frame[y * w + x - 1] != id
                    || frame[y * w + x + 1] != id;
                if edge {
                    boundary
                        .entry(id)
                        .or_default()
                        .push((y as isize, x as isize));
                }
            }
        }
        let ids: Vec<u32> = boundary.keys().copied().collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                if pairs.contains(&(a, b)) {
                    continue;
                }
                let close = boundary[&a].iter().any(|&(ya, xa)| {
                    boundary[&b].iter().any(|&(yb, xb)| {
                        let dy = (ya - yb) as f64;
                        let dx = (xa - xb) as f64;
                        dy * dy + dx * dx <= r2
                    })
                });
                if close {
                    pairs.insert((a, b));
                }
            }
        }
    }
    pairs.into_iter().collect()
}

/// Cosine embedding loss over one window.
///
/// ```text
/// pull · mean_p (1 − cos(e_p, μ_c(p)))²  +  push · mean_(c,c') cos(μ_c, μ_c')²  +  BCE(fg)
/// ```
///
/// `μ_c` is the mean embedding of instance `c` over all labeled pixels of the
/// window; pairs are instances whose masks come within `neighbor_radius`.
/// Only frames flagged in `valid` contribute.
pub fn embedding_loss(
    frames: &[EmbeddedFrame],
    labels: &[Vec<u32>],
    valid: &[bool],
    cfg: &TrainConfig,
) -> Result<LossOutput> {
    if frames.len() != labels.len() || frames.len() != valid.len() {
        return Err(Error::DimsMismatch(format!(
            "{} frames, {} label frames, {} mask entries",
            frames.len(),
            labels.len(),
            valid.len()
        )));
    }
    if !valid.iter().any(|v| *v) {
        return Err(Error::NoValidLabels);
    }
    let d = crate::STREAM_EMBEDDING_DIM;
    let (h, w) = (frames[0].height, frames[0].width);
    let n = h * w;
    if frames.iter().any(|f| f.height != h || f.width != w) || labels.iter().any(|l| l.len() != n) {
        return Err(Error::DimsMismatch("window frames differ in size".into()));
    }

    let mut grad_vectors = vec![vec![0.0; n * d]; frames.len()];
    let mut grad_fg_scores = vec![vec![0.0; n]; frames.len()];
    let mut grad_fg_logits = vec![vec![0.0; n]; frames.len()];

    // instance members and means
    let mut members: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, (lab, _)) in labels
        .iter()
        .zip(valid)
        .enumerate()
        .filter(|(_, (_, v))| **v)
    {
        for (p, &id) in lab.iter().enumerate() {
            if id > 0 {
                members.entry(id).or_default().push((i, p));
            }
        }
    }
    let means: BTreeMap<u32, Vec<f64>> = members
        .iter()
        .map(|(&id, px)| {
            let mut mu = vec![0.0; d];
            for &(i, p) in px {
                for (m, v) in mu.iter_mut().zip(frames[i].vector(p)) {
                    *m += v;
                }
            }
            let k = px.len() as f64;
            mu.iter_mut().for_each(|m| *m /= k);
            (id, mu)
        })
        .collect();
    let mut grad_means: BTreeMap<u32, Vec<f64>> =
        members.keys().map(|&id| (id, vec![0.0; d])).collect();

    let fg_count: usize = members.values().map(Vec::len).sum();
    let mut pull = 0.0;
    if fg_count > 0 {
        let scale = cfg.pull_weight / fg_count as f64;
        for (id, px) in &members {
            let mu = &means[id];
            let g_mu = grad_means.get_mut(id).expect("same keys");
            for &(i, p) in px {
                let Some((c, ge, gm)) = cos_with_grads(frames[i].vector(p), mu) else {
                    continue;
                };
                pull += (1.0 - c) * (1.0 - c);
                let dc = -2.0 * (1.0 - c) * scale;
                let gv = &mut grad_vectors[i][p * d..(p + 1) * d];
                for k in 0..d {
                    gv[k] += dc * ge[k];
                    g_mu[k] += dc * gm[k];
                }
            }
        }
        pull /= fg_count as f64;
    }

    let pairs = neighbor_pairs(labels, valid, h, w, cfg.neighbor_radius);
    let mut push = 0.0;
    if !pairs.is_empty() {
        let scale = cfg.push_weight / pairs.len() as f64;
        for &(a, b) in &pairs {
            let Some((c, ga, gb)) = cos_with_grads(&means[&a], &means[&b]) else {
                continue;
            };
            push += c * c;
            let dc = 2.0 * c * scale;
            for (g, v) in grad_means.get_mut(&a).expect("key").iter_mut().zip(&ga) {
                *g += dc * v;
            }
            for (g, v) in grad_means.get_mut(&b).expect("key").iter_mut().zip(&gb) {
                *g += dc * v;
            }
        }
        push /= pairs.len() as f64;
    }

    // distribute mean gradients back onto the member pixels
    for (id, px) in &members {
        let k = px.len() as f64;
        let g_mu = &grad_means[id];
        for &(i, p) in px {
            for (g, m) in grad_vectors[i][p * d..(p + 1) * d].iter_mut().zip(g_mu) {
                *g += m / k;
            }
        }
    }

    let valid_pixels = valid.iter().filter(|v| **v).count() * n;
    let mut bce = 0.0;
    for (i, (lab, _)) in labels
        .iter()
        .zip(valid)
        .enumerate()
        .filter(|(_, (_, v))| **v)
    {
        for (p, &id) in lab.iter().enumerate() {
            let s = frames[i].fg_scores[p];
            let y = if id > 0 { 1.0 } else { 0.0 };
            let (term, ds) = if id > 0 {
                (
                    -s.max(f64::MIN_POSITIVE).ln(),
                    -1.0 / s.max(f64::MIN_POSITIVE),
                )
            } else {
                let q = 1.0 - s;
                (
                    -q.max(f64::MIN_POSITIVE).ln(),
                    1.0 / q.max(f64::MIN_POSITIVE),
                )
            };
            bce += term;
            grad_fg_scores[i][p] = ds / valid_pixels as f64;
            grad_fg_logits[i][p] = (s - y) / valid_pixels as f64;
        }
    }
    bce /= valid_pixels as f64;

    Ok(LossOutput {
        total: cfg.pull_weight * pull + cfg.push_weight * push + bce,
        pull,
        push,
        fg_bce: bce,
        neighbor_pairs: pairs.len(),
        grad_vectors,
        grad_fg_scores,
        grad_fg_logits,
    })
}
