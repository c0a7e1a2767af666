//! Label synchronization: across z inside one volume, and across time
//! between windows that share a frame.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::clustering::WindowLabeling;
use crate::error::{Error, Result};
use crate::grid::{Dims, InstanceLabeling, TrackTable};

/// `|R∩S| / |R∪S|`, and 0 when both sets are empty.
pub fn jaccard<T: Ord>(r: &BTreeSet<T>, s: &BTreeSet<T>) -> f64 {
    let inter = r.intersection(s).count();
    let union = r.len() + s.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Jaccard of two ascending index lists.
fn jaccard_sorted(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// The layer with most foreground voxels, smallest z on ties. `volume` holds
/// `depth` slices of equal size.
pub fn reference_layer(volume: &[u32], depth: usize) -> usize {
    assert!(
        depth > 0 && volume.len().is_multiple_of(depth),
        "volume does not split into {depth} slices"
    );
    let slice = volume.len() / depth;
    let mut best = (0, 0);
    for z in 0..depth {
        let fg = volume[z * slice..(z + 1) * slice]
            .iter()
            .filter(|i| **i != 0)
            .count();
        if fg > best.1 {
            best = (z, fg);
        }
    }
    best.0
}

/// All voxels of one id within one slice.
struct Mask {
    z: usize,
    id: u32,
    /// In-slice pixel indices, ascending.
    pixels: Vec<usize>,
}

fn masks(volume: &[u32], depth: usize) -> Vec<Mask> {
    let slice = volume.len() / depth;
    let mut out = Vec::new();
    for z in 0..depth {
        let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (p, id) in volume[z * slice..(z + 1) * slice].iter().enumerate() {
            if *id != 0 {
                by_id.entry(*id).or_default().push(p);
            }
        }
        out.extend(by_id.into_iter().map(|(id, pixels)| Mask { z, id, pixels }));
    }
    out
}

/// One pass of the z synchronization. Returns the relabeled volume.
///
/// Every mask joins the list of the reference-layer mask whose footprint it
/// overlaps best (lowest reference id on ties). Each list is relabeled with
/// its most common id; lists never share an id, and masks that overlap no
/// reference mask keep their id unless a list took it.
pub fn sync_pass(volume: &[u32], depth: usize) -> Vec<u32> {
    let slice = volume.len() / depth;
    let all = masks(volume, depth);
    let rz = reference_layer(volume, depth);
    let refs: Vec<usize> = (0..all.len()).filter(|&m| all[m].z == rz).collect();
    if refs.is_empty() {
        return volume.to_vec();
    }

    // list index (into refs) per mask, None when no overlap with any reference
    let member: Vec<Option<usize>> = all
        .iter()
        .map(|m| {
            let mut best: Option<(usize, f64)> = None;
            for (k, &r) in refs.iter().enumerate() {
                let j = jaccard_sorted(&m.pixels, &all[r].pixels);
                if j > 0.0 && best.is_none_or(|(_, bj)| j > bj) {
                    best = Some((k, j));
                }
            }
            best.map(|(k, _)| k)
        })
        .collect();

    // most common id per list: ties prefer the reference's own id, then the smaller id
    let mut votes: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new(); refs.len()];
    for (m, k) in member.iter().enumerate() {
        if let Some(k) = k {
            *votes[*k].entry(all[m].id).or_default() += 1;
        }
    }
    let mut choice: Vec<(usize, u32, usize)> = votes
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let own = all[refs[k]].id;
            let (id, count) = v
                .iter()
                .max_by(|a, b| {
                    a.1.cmp(b.1)
                        .then((*a.0 == own).cmp(&(*b.0 == own)))
                        .then(b.0.cmp(a.0))
                })
                .map(|(id, c)| (*id, *c))
                .expect("every list holds its reference mask");
            (k, id, count)
        })
        .collect();
    choice.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));

    let mut next_fresh = volume.iter().copied().max().unwrap_or(0) + 1;
    let mut used = BTreeSet::new();
    let mut list_label = vec![0u32; refs.len()];
    for (k, id, _) in &choice {
        let own = all[refs[*k]].id;
        let label = if used.insert(*id) {
            *id
        } else if used.insert(own) {
            own
        } else {
            next_fresh += 1;
            used.insert(next_fresh - 1);
            next_fresh - 1
        };
        list_label[*k] = label;
    }

    let mut out = vec![0u32; volume.len()];
    let mut fresh_for: HashMap<u32, u32> = HashMap::new();
    for (m, k) in all.iter().zip(&member) {
        let label = match k {
            Some(k) => list_label[*k],
            None if !used.contains(&m.id) => m.id,
            None => *fresh_for.entry(m.id).or_insert_with(|| {
                next_fresh += 1;
                next_fresh - 1
            }),
        };
        for p in &m.pixels {
            out[m.z * slice + p] = label;
        }
    }
    out
}

/// Bound on repeated passes; relabeling can merge masks within a slice,
/// which may change list membership once more.
const MAX_PASSES: usize = 32;

/// Repeats [`sync_pass`] until the labels stop changing, so the result is a
/// fixed point and syncing again leaves it unchanged.
pub fn sync_volume(volume: &[u32], depth: usize) -> Vec<u32> {
    let mut current = volume.to_vec();
    for _ in 0..MAX_PASSES {
        let next = sync_pass(&current, depth);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

/// Applies [`sync_volume`] to every frame.
pub fn sync_labeling(labeling: &InstanceLabeling) -> InstanceLabeling {
    let dims = labeling.dims();
    let mut out = labeling.clone();
    for t in 0..dims.t {
        let synced = sync_volume(labeling.volume(t), dims.z);
        out.volume_mut(t).copy_from_slice(&synced);
    }
    out
}

fn voxel_sets(volume: &[u32]) -> BTreeMap<u32, BTreeSet<usize>> {
    let mut sets: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for (i, id) in volume.iter().enumerate() {
        if *id != 0 {
            sets.entry(*id).or_default().insert(i);
        }
    }
    sets
}

/// Joins windows that overlap by exactly one frame into a full labeling.
///
/// Window 0 keeps its ids. Each later window is matched to the running result
/// on the shared frame, greedily by descending 3D Jaccard with `J ≥ 0.5`;
/// unmatched ids get fresh ids. The shared frame takes the later window's
/// (remapped) labels.
pub fn stitch_windows(windows: &[WindowLabeling]) -> Result<(InstanceLabeling, TrackTable)> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Empty("no windows to stitch".into()))?;
    if first.t_begin != 0 {
        return Err(Error::NonOverlappingWindows(format!(
            "first window starts at frame {}",
            first.t_begin
        )));
    }
    let wd = first.labeling.dims();
    for pair in windows.windows(2) {
        if pair[1].t_begin != pair[0].t_end() {
            return Err(Error::NonOverlappingWindows(format!(
                "window ending at frame {} followed by one starting at {}",
                pair[0].t_end(),
                pair[1].t_begin
            )));
        }
        let d = pair[1].labeling.dims();
        if (d.z, d.y, d.x) != (wd.z, wd.y, wd.x) {
            return Err(Error::DimsMismatch(format!("window volumes {wd} vs {d}")));
        }
    }
    let frames = windows.last().expect("nonempty").t_end() + 1;
    let dims = Dims::new(frames, wd.z, wd.y, wd.x)?;
    let vol = dims.volume_len();
    let mut ids = vec![0u32; dims.len()];
    ids[..first.labeling.ids().len()].copy_from_slice(first.labeling.ids());
    let mut next_fresh = first.labeling.ids().iter().copied().max().unwrap_or(0) + 1;

    for w in &windows[1..] {
        let shared = w.t_begin;
        let prev = voxel_sets(&ids[shared * vol..(shared + 1) * vol]);
        let cur = voxel_sets(w.labeling.volume(0));
        let mut candidates = Vec::new();
        for (g, gs) in &prev {
            for (l, ls) in &cur {
                let j = jaccard(gs, ls);
                if j >= 0.5 {
                    candidates.push((j, *g, *l));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut remap: HashMap<u32, u32> = HashMap::new();
        let mut taken = BTreeSet::new();
        for (_, g, l) in candidates {
            if !remap.contains_key(&l) && taken.insert(g) {
                remap.insert(l, g);
            }
        }
        for l in w.labeling.instance_ids() {
            remap.entry(l).or_insert_with(|| {
                next_fresh += 1;
                next_fresh - 1
            });
        }
        let dst = &mut ids[shared * vol..shared * vol + w.labeling.ids().len()];
        for (d, l) in dst.iter_mut().zip(w.labeling.ids()) {
            *d = if *l == 0 { 0 } else { remap[l] };
        }
    }
    let labeling = InstanceLabeling::new(dims, ids)?;
    let table = TrackTable::from_labeling(&labeling);
    Ok((labeling, table))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&set(&[1, 2]), &set(&[1, 2])), 1.0);
        assert_eq!(jaccard(&set(&[1, 2]), &set(&[3])), 0.0);
        assert!((jaccard(&set(&[1, 2]), &set(&[2, 3])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 0.0);
        assert_eq!(
            jaccard_sorted(&[1, 2], &[2, 3]),
            jaccard(&set(&[1, 2]), &set(&[2, 3]))
        );
    }

    #[test]
    fn jaccard_symmetric_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let a: BTreeSet<usize> = (0..rng.random_range(0..10))
                .map(|_| rng.random_range(0..12))
                .collect();
            let b: BTreeSet<usize> = (0..rng.random_range(0..10))
                .map(|_| rng.random_range(0..12))
                .collect();
            assert_eq!(jaccard(&a, &b), jaccard(&b, &a));
            let av: Vec<usize> = a.iter().copied().collect();
            let bv: Vec<usize> = b.iter().copied().collect();
            assert_eq!(jaccard_sorted(&av, &bv), jaccard(&a, &b));
        }
    }

    /// Volume of `depth` slices of a 1×`width` row, built from per-slice rows.
    fn vol(rows: &[&[u32]]) -> Vec<u32> {
        rows.iter().flat_map(|r| r.iter().copied()).collect()
    }

    #[test]
    fn reference_layer_examples() {
        assert_eq!(
            reference_layer(&vol(&[&[0, 0], &[0, 0], &[0, 0], &[1, 0]]), 4),
            3
        );
        assert_eq!(
            reference_layer(&vol(&[&[0, 0], &[1, 0], &[0, 0], &[0, 0], &[2, 0]]), 5),
            1
        );
        assert_eq!(reference_layer(&[0; 8], 4), 0);
        // counts (0, 5, 9, 2) on a 10-pixel slice
        let counts = [0usize, 5, 9, 2];
        let v: Vec<u32> = counts
            .iter()
            .flat_map(|&c| (0..10).map(move |p| (p < c) as u32))
            .collect();
        let argmax = (0..4).rev().max_by_key(|&z| counts[z]).unwrap();
        assert_eq!(reference_layer(&v, 4), argmax);
    }

    #[test]
    fn seven_seven_nine_seven() {
        // z = 2..5 carry the cell; z = 3 is the widest slice so it is the reference
        let v = vol(&[
            &[0, 0, 0, 0],
            &[0, 0, 0, 0],
            &[0, 7, 7, 0],
            &[7, 7, 7, 0],
            &[0, 9, 9, 0],
            &[0, 7, 0, 0],
        ]);
        let out = sync_volume(&v, 6);
        assert_eq!(
            out,
            vol(&[
                &[0, 0, 0, 0],
                &[0, 0, 0, 0],
                &[0, 7, 7, 0],
                &[7, 7, 7, 0],
                &[0, 7, 7, 0],
                &[0, 7, 0, 0]
            ])
        );
    }

    #[test]
    fn single_layer_unchanged() {
        let v = vec![0, 3, 3, 0, 5, 5, 1];
        assert_eq!(sync_volume(&v, 1), v);
    }

    #[test]
    fn separated_cells_stay_apart() {
        let v = vol(&[
            &[1, 1, 0, 0, 2, 2],
            &[1, 1, 1, 0, 2, 2],
            &[3, 0, 0, 0, 0, 4],
        ]);
        assert_eq!(
            sync_volume(&v, 3),
            vol(&[
                &[1, 1, 0, 0, 2, 2],
                &[1, 1, 1, 0, 2, 2],
                &[1, 0, 0, 0, 0, 2]
            ])
        );
    }

    #[test]
    fn unmatched_mask_keeps_or_refreshes_id() {
        // slice 1 id 4 overlaps nothing in the reference slice 0 and keeps its id
        let v = vol(&[&[1, 1, 1, 0, 0], &[0, 0, 0, 0, 4]]);
        assert_eq!(sync_volume(&v, 2), v);
        // same shape, but its id collides with the reference's id
        let v = vol(&[&[1, 1, 1, 0, 0], &[0, 0, 0, 0, 1]]);
        assert_eq!(
            sync_volume(&v, 2),
            vol(&[&[1, 1, 1, 0, 0], &[0, 0, 0, 0, 2]])
        );
    }

    #[test]
    fn list_labels_are_unique() {
        // id 5 is the most common label of both lists; the second list falls back to 6
        let v = vol(&[
            &[5, 5, 0, 0, 0, 0],
            &[5, 5, 0, 6, 6, 6],
            &[0, 0, 0, 5, 5, 0],
            &[0, 0, 0, 5, 5, 0],
        ]);
        assert_eq!(reference_layer(&v, 4), 1);
        assert_eq!(
            sync_volume(&v, 4),
            vol(&[
                &[5, 5, 0, 0, 0, 0],
                &[5, 5, 0, 6, 6, 6],
                &[0, 0, 0, 6, 6, 0],
                &[0, 0, 0, 6, 6, 0]
            ])
        );
    }

    fn random_volume(rng: &mut ChaCha8Rng, depth: usize, width: usize) -> Vec<u32> {
        (0..depth * width)
            .map(|_| {
                if rng.random_bool(0.4) {
                    0
                } else {
                    rng.random_range(1..5)
                }
            })
            .collect()
    }

    #[test]
    fn random_volumes_idempotent_and_foreground_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let depth = rng.random_range(1..6);
            let v = random_volume(&mut rng, depth, 9);
            let once = sync_volume(&v, depth);
            assert_eq!(sync_volume(&once, depth), once);
            assert!(v.iter().zip(&once).all(|(a, b)| (*a == 0) == (*b == 0)));
        }
    }

    fn window(t_begin: usize, dims: Dims, ids: Vec<u32>) -> WindowLabeling {
        WindowLabeling {
            t_begin,
            labeling: InstanceLabeling::new(dims, ids).unwrap(),
        }
    }

    #[test]
    fn stitch_identity_swap_and_new_cell() {
        let d2 = Dims::new(2, 1, 1, 6).unwrap();
        let a = window(0, d2, vec![1, 1, 0, 2, 2, 0, 1, 1, 0, 2, 2, 0]);
        // same cells with swapped ids, and a new cell in the last frame
        let b = window(1, d2, vec![2, 2, 0, 1, 1, 0, 2, 2, 0, 1, 1, 3]);
        let (lab, table) = stitch_windows(&[a, b]).unwrap();
        assert_eq!(lab.dims().t, 3);
        assert_eq!(lab.volume(2), &[1, 1, 0, 2, 2, 3]);
        let row = table.get(3).unwrap();
        assert_eq!((row.t_begin, row.t_end, row.parent), (2, 2, 0));
        assert_eq!(table.get(1).unwrap().t_end, 2);
    }

    #[test]
    fn stitch_fresh_id_starts_at_shared_frame() {
        let d2 = Dims::new(2, 1, 1, 4).unwrap();
        let a = window(0, d2, vec![1, 1, 0, 0, 1, 1, 0, 0]);
        let b = window(1, d2, vec![1, 1, 0, 4, 1, 1, 0, 4]);
        let (lab, table) = stitch_windows(&[a, b]).unwrap();
        assert_eq!(lab.volume(1), &[1, 1, 0, 2]);
        assert_eq!(table.get(2).unwrap().t_begin, 1);
    }

    #[test]
    fn stitch_rejects_gaps() {
        let d2 = Dims::new(2, 1, 1, 2).unwrap();
        let a = window(0, d2, vec![0; 4]);
        let b = window(2, d2, vec![0; 4]);
        assert!(matches!(
            stitch_windows(&[a, b]),
            Err(Error::NonOverlappingWindows(_))
        ));
        assert!(matches!(stitch_windows(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn stitch_below_threshold_gets_fresh_id() {
        let d1 = Dims::new(2, 1, 1, 4).unwrap();
        let a = window(0, d1, vec![0, 0, 0, 0, 1, 1, 1, 0]);
        // overlap 1 of union 4
        let b = window(1, d1, vec![0, 0, 1, 1, 0, 0, 1, 1]);
        let (lab, _) = stitch_windows(&[a, b]).unwrap();
        assert_eq!(lab.volume(1), &[0, 0, 2, 2]);
    }
}
