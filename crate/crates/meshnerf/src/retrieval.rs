//! Model and pose retrieval from input silhouettes: IoU ranking against the
//! library, per-view model voting, and the multi-view backtracking search
//! that keeps chosen pose indices strictly increasing in input-view order.

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::library::Library;
use crate::mask::{mask_iou, MaskRaster};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Grid size silhouettes are normalized to before IoU matching.
pub const CANONICAL_MASK_SIZE: usize = 64;
/// Candidate poses kept per view.
pub const DEFAULT_TOP_K: usize = 10;
/// Views the backtracking search may drop before retrieval fails.
pub const DEFAULT_MAX_DISCARD: usize = 2;

/// Per-view ranked candidate lists: `(pose_index, iou)` sorted by descending
/// IoU, keyed by input-view order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTable {
    pub views: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub view: usize,
    pub pose_index: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub model_id: String,
    /// One entry per kept view, pose_index strictly increasing.
    pub assignments: Vec<Assignment>,
    pub total_score: f64,
    pub discarded_views: Vec<usize>,
}

/// Library with every mask normalized once onto the canonical grid.
pub struct PreparedLibrary<'a> {
    pub library: &'a Library,
    pub canonical: usize,
    normalized: Vec<Vec<MaskRaster>>,
}

impl<'a> PreparedLibrary<'a> {
    pub fn new(library: &'a Library, canonical: usize) -> Result<PreparedLibrary<'a>> {
        let normalized = library
            .entries
            .iter()
            .map(|entry| {
                entry
                    .masks
                    .iter()
                    .map(|m| m.normalize(canonical))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedLibrary {
            library,
            canonical,
            normalized,
        })
    }

    fn model_masks(&self, model_index: usize) -> &[MaskRaster] {
        &self.normalized[model_index]
    }
}

/// Crop to the foreground bbox and rescale onto the canonical square grid.
pub fn normalize_mask(mask: &MaskRaster, canonical: usize) -> Result<MaskRaster> {
    mask.normalize(canonical)
}

/// Top-k library poses per view by silhouette IoU against one model.
/// Ties rank the lower pose index first.
pub fn rank_candidates(
    inputs_normalized: &[MaskRaster],
    model_masks: &[MaskRaster],
    k: usize,
) -> Result<CandidateTable> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let views = inputs_normalized
        .par_iter()
        .map(|input| {
            let mut scored: Vec<(usize, f64)> = model_masks
                .iter()
                .enumerate()
                .map(|(index, mask)| Ok((index, mask_iou(input, mask)?)))
                .collect::<Result<Vec<_>>>()?;
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scored.truncate(k);
            Ok(scored)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateTable { views })
}

/// Majority vote over the views' single best-IoU matches. Ties break by the
/// higher summed best-IoU, then by lexicographic model id.
pub fn vote_model(inputs_normalized: &[MaskRaster], prepared: &PreparedLibrary) -> Result<String> {
    if inputs_normalized.is_empty() {
        return Err(Error::InvalidInput("voting needs at least one view".into()));
    }
    let n_models = prepared.library.entries.len();
    // best_iou[view][model]
    let best: Vec<Vec<f64>> = inputs_normalized
        .par_iter()
        .map(|input| {
            (0..n_models)
                .map(|m| {
                    prepared
                        .model_masks(m)
                        .iter()
                        .map(|mask| mask_iou(input, mask))
                        .try_fold(0.0_f64, |acc, iou| iou.map(|v| acc.max(v)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut votes = vec![0usize; n_models];
    for per_view in &best {
        let mut winner = 0;
        for m in 1..n_models {
            if per_view[m] > per_view[winner] {
                winner = m;
            }
        }
        votes[winner] += 1;
    }
    let sums: Vec<f64> = (0..n_models)
        .map(|m| best.iter().map(|v| v[m]).sum())
        .collect();
    let mut order: Vec<usize> = (0..n_models).collect();
    order.sort_by(|&a, &b| {
        votes[b]
            .cmp(&votes[a])
            .then(sums[b].partial_cmp(&sums[a]).unwrap())
            .then(
                prepared.library.entries[a]
                    .model_id
                    .cmp(&prepared.library.entries[b].model_id),
            )
    });
    Ok(prepared.library.entries[order[0]].model_id.clone())
}

/// Maximize total IoU over selections that take at most one candidate per
/// view with strictly increasing pose indices in view order. Views may be
/// skipped; skipped views score zero and are reported.
///
/// Depth-first search in candidate order with the skip branch last, plus an
/// upper-bound prune on the remaining views; the first optimum found wins,
/// which keeps the result deterministic.
pub fn backtrack_assign(table: &CandidateTable) -> Result<RetrievalResult> {
    if table.views.is_empty() {
        return Err(Error::InvalidInput("candidate table has no views".into()));
    }
    let n = table.views.len();
    // suffix_bound[i] = best possible score from views i..
    let mut suffix_bound = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let best_here = table.views[i]
            .first()
            .map(|&(_, iou)| iou)
            .unwrap_or(0.0);
        suffix_bound[i] = suffix_bound[i + 1] + best_here;
    }

    struct Search<'a> {
        table: &'a CandidateTable,
        suffix_bound: &'a [f64],
        best_score: f64,
        best: Vec<(usize, usize, f64)>,
        found: bool,
        current: Vec<(usize, usize, f64)>,
    }

    impl Search<'_> {
        fn run(&mut self, view: usize, last_index: Option<usize>, score: f64) {
            if view == self.table.views.len() {
                if score > self.best_score || (!self.found && !self.current.is_empty()) {
                    self.best_score = score;
                    self.best = self.current.clone();
                    self.found = true;
                }
                return;
            }
            if self.found && score + self.suffix_bound[view] <= self.best_score {
                return;
            }
            for &(index, iou) in &self.table.views[view] {
                if last_index.is_none_or(|last| index > last) {
                    self.current.push((view, index, iou));
                    self.run(view + 1, Some(index), score + iou);
                    self.current.pop();
                }
            }
            // skip this view
            self.run(view + 1, last_index, score);
        }
    }

    let mut search = Search {
        table,
        suffix_bound: &suffix_bound,
        best_score: 0.0,
        best: Vec::new(),
        found: false,
        current: Vec::new(),
    };
    search.run(0, None, 0.0);

    if search.best.is_empty() {
        return Err(Error::InvalidInput(
            "every view would need to be discarded; no assignment exists".into(),
        ));
    }
    let assigned_views: Vec<usize> = search.best.iter().map(|&(v, _, _)| v).collect();
    let discarded_views: Vec<usize> = (0..n).filter(|v| !assigned_views.contains(v)).collect();
    Ok(RetrievalResult {
        model_id: String::new(),
        assignments: search
            .best
            .iter()
            .map(|&(view, pose_index, iou)| Assignment {
                view,
                pose_index,
                iou,
            })
            .collect(),
        total_score: search.best_score,
        discarded_views,
    })
}

/// Full retrieval: vote for a model, rank candidates against it, and solve
/// the order-constrained assignment. Fails when more than `max_discard`
/// views would have to be dropped.
pub fn retrieve(
    inputs: &[MaskRaster],
    library: &Library,
    k: usize,
    max_discard: usize,
) -> Result<RetrievalResult> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("retrieval needs at least one view".into()));
    }
    let normalized: Vec<MaskRaster> = inputs
        .iter()
        .map(|m| m.normalize(CANONICAL_MASK_SIZE))
        .collect::<Result<Vec<_>>>()?;
    let prepared = PreparedLibrary::new(library, CANONICAL_MASK_SIZE)?;
    let model_id = vote_model(&normalized, &prepared)?;
    let model_index = library
        .entries
        .iter()
        .position(|e| e.model_id == model_id)
        .expect("vote returned a library model");
    let table = rank_candidates(&normalized, prepared.model_masks(model_index), k)?;
    let mut result = backtrack_assign(&table)?;
    if result.discarded_views.len() > max_discard {
        return Err(Error::TooManyDiscards {
            discarded: result.discarded_views.len(),
            allowed: max_discard,
            views: result.discarded_views,
        });
    }
    result.model_id = model_id;
    Ok(result)
}

/// Poses assigned to each kept view.
pub fn assigned_poses(result: &RetrievalResult, library: &Library) -> Vec<(usize, CameraPose)> {
    let entry = library
        .entry(&result.model_id)
        .expect("retrieval result references a library model");
    result
        .assignments
        .iter()
        .map(|a| (a.view, entry.poses[a.pose_index].clone()))
        .collect()
}

/// JSON report emitted by the `retrieve` CLI command.
#[derive(Debug, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub model_id: String,
    pub views: Vec<RetrievalReportView>,
    pub discarded_views: Vec<usize>,
    pub total_score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RetrievalReportView {
    pub view: usize,
    pub pose_index: usize,
    pub iou: f64,
    pub camera_to_world: Vec<f64>,
}

impl RetrievalReport {
    pub fn new(result: &RetrievalResult, library: &Library) -> RetrievalReport {
        let entry = library.entry(&result.model_id).expect("model exists");
        RetrievalReport {
            model_id: result.model_id.clone(),
            views: result
                .assignments
                .iter()
                .map(|a| RetrievalReportView {
                    view: a.view,
                    pose_index: a.pose_index,
                    iou: a.iou,
                    camera_to_world: entry.poses[a.pose_index]
                        .camera_to_world()
                        .to_row_major()
                        .to_vec(),
                })
                .collect(),
            discarded_views: result.discarded_views.clone(),
            total_score: result.total_score,
        }
    }
}

/// Exhaustive reference for the backtracking search: tries every selection
/// (each view keeps one candidate or is skipped) and keeps the best
/// order-respecting one. Exponential; only for small tables and tests.
pub fn exhaustive_assign_score(table: &CandidateTable) -> f64 {
    fn recurse(table: &CandidateTable, view: usize, last: Option<usize>, score: f64, best: &mut f64) {
        if view == table.views.len() {
            if score > *best {
                *best = score;
            }
            return;
        }
        for &(index, iou) in &table.views[view] {
            if last.is_none_or(|l| index > l) {
                recurse(table, view + 1, Some(index), score + iou, best);
            }
        }
        recurse(table, view + 1, last, score, best);
    }
    let mut best = 0.0;
    recurse(table, 0, None, 0.0, &mut best);
    best
}
