//! SEG, TRA (normalized AOGM) and OP scores.
//!
//! Detection test shared by both: a reference mask `R` is matched by the
//! predicted mask `S` when `|R∩S| > 0.5·|R|`.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::grid::{Annotation, InstanceLabeling, TrackTable};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AogmWeights {
    pub ns: f64,
    pub fn_: f64,
    pub fp: f64,
    pub ed: f64,
    pub ea: f64,
    pub ec: f64,
}

impl Default for AogmWeights {
    fn default() -> Self {
        AogmWeights {
            ns: 5.0,
            fn_: 10.0,
            fp: 1.0,
            ed: 1.0,
            ea: 1.5,
            ec: 1.0,
        }
    }
}

impl AogmWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.ns, self.fn_, self.fp, self.ed, self.ea, self.ec];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig(
                "AOGM weights must be finite and ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

fn check_dims(gt: &InstanceLabeling, pred: &InstanceLabeling) -> Result<()> {
    if gt.dims() != pred.dims() {
        return Err(Error::DimsMismatch(format!(
            "gt {} vs pred {}",
            gt.dims(),
            pred.dims()
        )));
    }
    Ok(())
}

/// Jaccard of every reference mask in `gt` with its matching mask in `pred`
/// (0 when unmatched). Both slices cover the same voxels.
fn matched_jaccards(gt: &[u32], pred: &[u32]) -> Vec<f64> {
    let mut gt_size: BTreeMap<u32, usize> = BTreeMap::new();
    let mut pred_size: HashMap<u32, usize> = HashMap::new();
    let mut overlap: HashMap<(u32, u32), usize> = HashMap::new();
    for (g, p) in gt.iter().zip(pred) {
        if *g != 0 {
            *gt_size.entry(*g).or_default() += 1;
        }
        if *p != 0 {
            *pred_size.entry(*p).or_default() += 1;
            if *g != 0 {
                *overlap.entry((*g, *p)).or_default() += 1;
            }
        }
    }
    let mut best: HashMap<u32, (u32, usize)> = HashMap::new();
    for ((g, p), n) in &overlap {
        if 2 * n > gt_size[g] {
            best.insert(*g, (*p, *n));
        }
    }
    gt_size
        .iter()
        .map(|(g, r)| match best.get(g) {
            Some((p, n)) => *n as f64 / (r + pred_size[p] - n) as f64,
            None => 0.0,
        })
        .collect()
}

/// Mean Jaccard over the annotated ground-truth masks: whole volumes for
/// frame annotation, single slices for slice annotation.
pub fn seg_score(gt: &InstanceLabeling, pred: &InstanceLabeling) -> Result<f64> {
    check_dims(gt, pred)?;
    let dims = gt.dims();
    if gt.annotation().is_empty() {
        return Err(Error::Empty("ground truth has no annotated frames".into()));
    }
    let mut scores = Vec::new();
    match gt.annotation() {
        Annotation::All => {
            for t in 0..dims.t {
                scores.extend(matched_jaccards(gt.volume(t), pred.volume(t)));
            }
        }
        Annotation::Frames(frames) => {
            for &t in frames {
                scores.extend(matched_jaccards(gt.volume(t), pred.volume(t)));
            }
        }
        Annotation::Slices(slices) => {
            for &(t, z) in slices {
                scores.extend(matched_jaccards(gt.slice(t, z), pred.slice(t, z)));
            }
        }
    }
    if scores.is_empty() {
        return Err(Error::Empty(
            "no ground-truth instances in the annotated set".into(),
        ));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrackNode {
    pub t: usize,
    pub id: u32,
}

/// Detections `(id, t)` and links between consecutive frames of one id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackingGraph {
    pub nodes: Vec<TrackNode>,
    /// Index pairs into `nodes`, earlier frame first.
    pub edges: Vec<(usize, usize)>,
}

impl TrackingGraph {
    fn index(&self) -> HashMap<(usize, u32), usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| ((n.t, n.id), i))
            .collect()
    }
}

pub fn build_tracking_graph(
    labeling: &InstanceLabeling,
    table: &TrackTable,
) -> Result<TrackingGraph> {
    let dims = labeling.dims();
    let mut graph = TrackingGraph::default();
    let mut last_seen: HashMap<u32, (usize, usize)> = HashMap::new();
    let mut seen = HashSet::new();
    for t in 0..dims.t {
        let mut ids: Vec<u32> = labeling
            .volume(t)
            .iter()
            .copied()
            .filter(|i| *i != 0)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        for id in ids {
            let row = table.get(id).ok_or_else(|| {
                Error::TrackTable(format!("id {id} at frame {t} has no track row"))
            })?;
            if t < row.t_begin || t > row.t_end {
                return Err(Error::TrackTable(format!(
                    "id {id} present at frame {t} outside its track span {}..={}",
                    row.t_begin, row.t_end
                )));
            }
            let node = graph.nodes.len();
            graph.nodes.push(TrackNode { t, id });
            if let Some((pt, pn)) = last_seen.get(&id) {
                if pt + 1 == t {
                    graph.edges.push((*pn, node));
                }
            }
            last_seen.insert(id, (t, node));
            seen.insert(id);
        }
    }
    if let Some(row) = table.rows().iter().find(|r| !seen.contains(&r.id)) {
        return Err(Error::TrackTable(format!(
            "track {} never occurs in the labeling",
            row.id
        )));
    }
    if let Some(row) = table.rows().iter().find(|r| r.t_end >= dims.t) {
        return Err(Error::TrackTable(format!(
            "track {} ends after the last frame",
            row.id
        )));
    }
    Ok(graph)
}

/// Counts of graph edit operations, before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AogmCounts {
    pub ns: usize,
    pub fn_: usize,
    pub fp: usize,
    pub ed: usize,
    pub ea: usize,
    pub ec: usize,
}

impl AogmCounts {
    pub fn weighted(&self, w: &AogmWeights) -> f64 {
        w.ns * self.ns as f64
            + w.fn_ * self.fn_ as f64
            + w.fp * self.fp as f64
            + w.ed * self.ed as f64
            + w.ea * self.ea as f64
            + w.ec * self.ec as f64
    }
}

pub fn aogm_counts(
    gt_graph: &TrackingGraph,
    pred_graph: &TrackingGraph,
    gt: &InstanceLabeling,
    pred: &InstanceLabeling,
) -> Result<AogmCounts> {
    check_dims(gt, pred)?;
    let gt_index = gt_graph.index();
    let pred_index = pred_graph.index();

    // matched pred node per gt node
    let mut matched: Vec<Option<usize>> = vec![None; gt_graph.nodes.len()];
    for t in 0..gt.dims().t {
        let mut size: HashMap<u32, usize> = HashMap::new();
        let mut overlap: HashMap<(u32, u32), usize> = HashMap::new();
        for (g, p) in gt.volume(t).iter().zip(pred.volume(t)) {
            if *g != 0 {
                *size.entry(*g).or_default() += 1;
                if *p != 0 {
                    *overlap.entry((*g, *p)).or_default() += 1;
                }
            }
        }
        for ((g, p), n) in overlap {
            if 2 * n > size[&g] {
                if let (Some(gi), Some(pi)) = (gt_index.get(&(t, g)), pred_index.get(&(t, p))) {
                    matched[*gi] = Some(*pi);
                }
            }
        }
    }

    let mut hits = vec![0usize; pred_graph.nodes.len()];
    for p in matched.iter().flatten() {
        hits[*p] += 1;
    }
    let pred_edges: HashSet<(usize, usize)> = pred_graph.edges.iter().copied().collect();
    let gt_edges_mapped: HashSet<(usize, usize)> = gt_graph
        .edges
        .iter()
        .filter_map(|(a, b)| Some((matched[*a]?, matched[*b]?)))
        .collect();
    Ok(AogmCounts {
        ns: hits.iter().map(|k| k * k.saturating_sub(1) / 2).sum(),
        fn_: matched.iter().filter(|m| m.is_none()).count(),
        fp: hits.iter().filter(|k| **k == 0).count(),
        ed: pred_graph
            .edges
            .iter()
            .filter(|e| !gt_edges_mapped.contains(e))
            .count(),
        ea: gt_graph
            .edges
            .iter()
            .filter(|(a, b)| match (matched[*a], matched[*b]) {
                (Some(pa), Some(pb)) => !pred_edges.contains(&(pa, pb)),
                _ => true,
            })
            .count(),
        ec: 0,
    })
}

pub fn aogm(
    gt_graph: &TrackingGraph,
    pred_graph: &TrackingGraph,
    gt: &InstanceLabeling,
    pred: &InstanceLabeling,
    w: &AogmWeights,
) -> Result<f64> {
    w.validate()?;
    Ok(aogm_counts(gt_graph, pred_graph, gt, pred)?.weighted(w))
}

/// `1 − min(AOGM, AOGM₀)/AOGM₀` with AOGM₀ the cost of building the ground
/// truth graph from nothing. The ground truth track table is derived from `gt`.
pub fn tra_score(
    gt: &InstanceLabeling,
    pred: &InstanceLabeling,
    table: &TrackTable,
    w: &AogmWeights,
) -> Result<f64> {
    check_dims(gt, pred)?;
    let gt_graph = build_tracking_graph(gt, &TrackTable::from_labeling(gt))?;
    let pred_graph = build_tracking_graph(pred, table)?;
    let empty = w.fn_ * gt_graph.nodes.len() as f64 + w.ea * gt_graph.edges.len() as f64;
    if !(empty > 0.0) {
        return Err(Error::Empty(
            "ground truth graph is empty; TRA is undefined".into(),
        ));
    }
    let cost = aogm(&gt_graph, &pred_graph, gt, pred, w)?;
    Ok(1.0 - cost.min(empty) / empty)
}

pub fn op_score(seg: f64, tra: f64) -> Result<f64> {
    for (name, v) in [("SEG", seg), ("TRA", tra)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(format!("{name} = {v} is outside [0, 1]")));
        }
    }
    Ok((seg + tra) / 2.0)
}
