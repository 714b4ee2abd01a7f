//! One-slot action search: a greedy marginal-gain heuristic and the
//! exhaustive enumeration it is judged against.
//!
//! Both are clairvoyant: they score candidate updates against a supplied
//! set of target keyframes (the true next-slot keyframes in verification
//! runs, the current slot's keyframes when used as an online policy).

use std::collections::BTreeSet;

use crate::covis::{CovisibilityGraph, Frame, FrameId, UncertaintyParams};
use crate::env::{self, EnvState, MapAction};

use super::AgentError;

/// Enumeration caps: frames per slot and storage capacity.
pub const BRUTE_FORCE_BATCH_CAP: usize = 8;
pub const BRUTE_FORCE_CAPACITY_CAP: usize = 6;

fn score(
    g: &CovisibilityGraph,
    keyframes: &[&Frame],
    params: &UncertaintyParams,
    penalty: f64,
) -> f64 {
    env::reward(g, keyframes, params, penalty)
}

/// Greedy one-slot policy with exchange moves.
///
/// While the map is under capacity, the candidate with the best reward
/// gain is uploaded outright. At capacity, every remaining candidate is
/// paired with its cheapest connectivity-safe eviction and the best
/// net-positive exchange is committed. Stops when the budget is spent or
/// no move improves the reward. A committed eviction of an earlier upload
/// simply cancels that upload.
pub fn greedy_one_slot(
    state: &EnvState,
    target_keyframes: &[&Frame],
    budget: usize,
    capacity: usize,
    params: &UncertaintyParams,
    penalty: f64,
) -> MapAction {
    let record = state.current();
    let mut pool = record.graph.clone();
    let mut upload: BTreeSet<FrameId> = BTreeSet::new();
    let mut evict: BTreeSet<FrameId> = BTreeSet::new();
    let mut current = score(&pool, target_keyframes, params, penalty);

    while upload.len() < budget {
        // Best move: (reward, candidate, eviction to pair with it).
        let mut best: Option<(f64, FrameId, Option<FrameId>, CovisibilityGraph)> = None;
        let mut consider = |s: f64, id: FrameId, ev: Option<FrameId>, g: &CovisibilityGraph| {
            let better = match &best {
                None => true,
                Some((bs, bid, _, _)) => s > *bs || (s == *bs && id < *bid),
            };
            if better {
                best = Some((s, id, ev, g.clone()));
            }
        };
        for f in &record.batch.frames {
            if upload.contains(&f.frame_id) || evict.contains(&f.frame_id) {
                continue;
            }
            let Ok(grown) = pool.add_frame(f.clone()) else { continue };
            if !grown.is_connected() {
                continue;
            }
            if grown.len() <= capacity {
                consider(score(&grown, target_keyframes, params, penalty), f.frame_id, None, &grown);
            } else {
                // Over capacity: the upload must displace something.
                for out in grown.frame_ids().collect::<Vec<_>>() {
                    if out == f.frame_id || grown.is_cut_vertex(out) {
                        continue;
                    }
                    let swapped = grown.remove_frames(&[out].into()).expect("member");
                    consider(
                        score(&swapped, target_keyframes, params, penalty),
                        f.frame_id,
                        Some(out),
                        &swapped,
                    );
                }
            }
        }
        match best {
            Some((s, id, out, g)) if s > current => {
                pool = g;
                current = s;
                upload.insert(id);
                if let Some(out) = out {
                    if upload.remove(&out) {
                        // Cancelled upload: never sent, nothing to evict.
                    } else {
                        evict.insert(out);
                    }
                }
            }
            _ => break,
        }
    }

    // Under-capacity maps need no evictions; over-capacity cannot happen
    // because exchanges keep the pool at the capacity bound.
    debug_assert!(pool.len() <= capacity.max(record.graph.len()));
    MapAction { upload, evict }
}

/// Exhaustive one-slot search: enumerates every feasible (upload, evict)
/// pair and returns the reward-maximizing action with its reward.
/// Exponential; rejected above the caps.
pub fn bruteforce_one_slot(
    state: &EnvState,
    target_keyframes: &[&Frame],
    budget: usize,
    capacity: usize,
    params: &UncertaintyParams,
    penalty: f64,
) -> Result<(MapAction, f64), AgentError> {
    let record = state.current();
    let batch = &record.batch.frames;
    if batch.len() > BRUTE_FORCE_BATCH_CAP {
        return Err(AgentError::EnumerationCap {
            what: "batch frames",
            got: batch.len(),
            cap: BRUTE_FORCE_BATCH_CAP,
        });
    }
    if capacity > BRUTE_FORCE_CAPACITY_CAP {
        return Err(AgentError::EnumerationCap {
            what: "capacity",
            got: capacity,
            cap: BRUTE_FORCE_CAPACITY_CAP,
        });
    }

    let mut best: Option<(MapAction, f64)> = None;
    let m = batch.len();
    for mask in 0u32..(1 << m) {
        let picked = mask.count_ones() as usize;
        if picked > budget {
            continue;
        }
        let mut pool = record.graph.clone();
        let mut upload = BTreeSet::new();
        for (i, f) in batch.iter().enumerate() {
            if mask & (1 << i) != 0 {
                pool = pool.add_frame(f.clone()).expect("fresh ids");
                upload.insert(f.frame_id);
            }
        }
        let pool_ids: Vec<FrameId> = pool.frame_ids().collect();
        let need = pool.len() - capacity.min(pool.len());
        let mut chosen = Vec::new();
        enumerate_evictions(
            &pool_ids,
            0,
            need,
            &mut chosen,
            &mut |evict: &BTreeSet<FrameId>| {
                let g_next = pool.remove_frames(evict).expect("members");
                if !g_next.is_connected() {
                    return;
                }
                let r = score(&g_next, target_keyframes, params, penalty);
                let action = MapAction { upload: upload.clone(), evict: evict.clone() };
                match &best {
                    Some((_, br)) if *br >= r => {}
                    _ => best = Some((action, r)),
                }
            },
        );
    }
    Ok(best.expect("the do-nothing action is always feasible"))
}

fn enumerate_evictions(
    ids: &[FrameId],
    start: usize,
    need: usize,
    chosen: &mut Vec<FrameId>,
    visit: &mut impl FnMut(&BTreeSet<FrameId>),
) {
    if need == 0 {
        let set: BTreeSet<FrameId> = chosen.iter().copied().collect();
        visit(&set);
        return;
    }
    if ids.len() - start < need {
        return;
    }
    for i in start..ids.len() {
        chosen.push(ids[i]);
        enumerate_evictions(ids, i + 1, need - 1, chosen, visit);
        chosen.pop();
    }
}
