//! Reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trafficmon::ingest::FrameDetections;
use trafficmon::{BBox, ClassLabel, Detection};

/// IOU straight from the definition on `[x, y, w, h]` arrays.
pub fn naive_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

/// Output of the oracle: `(track id, [(frame, detection index in frame)])`.
pub type OracleTrack = (u64, Vec<(u64, usize)>);

struct OTrack {
    id: u64,
    items: Vec<(u64, usize, [f64; 4], f64)>,
}

/// Brute-force greedy IOU tracker written directly from its rules: every frame,
/// tracks in order of descending last score (then id) take the best unclaimed
/// detection at or above `sigma_iou`; leftovers with score >= `sigma_l` start
/// tracks; missed tracks end; a frame-index gap ends everything. Tracks are
/// reported if they have at least `t_min` boxes and one score >= `sigma_h`.
pub fn oracle_iou_tracker(
    frames: &[FrameDetections],
    sigma_iou: f64,
    sigma_l: f64,
    sigma_h: f64,
    t_min: usize,
) -> Vec<OracleTrack> {
    let mut next_id = 1u64;
    let mut active: Vec<OTrack> = Vec::new();
    let mut done: Vec<OTrack> = Vec::new();
    let mut prev: Option<u64> = None;
    for f in frames {
        if prev.is_some_and(|p| f.frame_index != p + 1) {
            done.append(&mut active);
        }
        prev = Some(f.frame_index);
        let dets: Vec<(usize, [f64; 4], f64)> = f
            .detections
            .iter()
            .enumerate()
            .filter(|(_, d)| d.score >= sigma_l)
            .map(|(i, d)| (i, [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h], d.score))
            .collect();
        let mut taken = vec![false; dets.len()];
        let mut order: Vec<usize> = (0..active.len()).collect();
        order.sort_by(|&a, &b| {
            let sa = active[a].items.last().unwrap().3;
            let sb = active[b].items.last().unwrap().3;
            sb.partial_cmp(&sa).unwrap().then(active[a].id.cmp(&active[b].id))
        });
        let mut keep = vec![false; active.len()];
        for &ti in &order {
            let last = active[ti].items.last().unwrap().2;
            let mut best_j = None;
            let mut best_v = -1.0;
            for j in 0..dets.len() {
                if taken[j] {
                    continue;
                }
                let v = naive_iou(last, dets[j].1);
                if v > best_v {
                    best_v = v;
                    best_j = Some(j);
                }
            }
            if let Some(j) = best_j.filter(|_| best_v >= sigma_iou) {
                taken[j] = true;
                active[ti].items.push((f.frame_index, dets[j].0, dets[j].1, dets[j].2));
                keep[ti] = true;
            }
        }
        let mut still = Vec::new();
        for (k, t) in active.drain(..).enumerate() {
            if keep[k] {
                still.push(t);
            } else {
                done.push(t);
            }
        }
        active = still;
        for (j, d) in dets.iter().enumerate() {
            if !taken[j] {
                active.push(OTrack { id: next_id, items: vec![(f.frame_index, d.0, d.1, d.2)] });
                next_id += 1;
            }
        }
    }
    done.append(&mut active);
    let mut out: Vec<OracleTrack> = done
        .into_iter()
        .filter(|t| t.items.len() >= t_min && t.items.iter().any(|i| i.3 >= sigma_h))
        .map(|t| (t.id, t.items.iter().map(|i| (i.0, i.1)).collect()))
        .collect();
    out.sort_by_key(|t| t.0);
    out
}

/// Random scene: up to `max_objects` boxes drifting with random velocities,
/// random scores, occasional misses and occasional frame-index gaps.
pub fn random_scene(seed: u64, max_objects: usize, max_frames: u64) -> Vec<FrameDetections> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_obj = rng.random_range(1..=max_objects);
    let n_frames = rng.random_range(1..=max_frames);
    let objs: Vec<([f64; 4], [f64; 2])> = (0..n_obj)
        .map(|_| {
            let w = rng.random_range(10.0..60.0);
            let h = rng.random_range(10.0..60.0);
            let b = [rng.random_range(0.0..200.0), rng.random_range(0.0..200.0), w, h];
            (b, [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)])
        })
        .collect();
    let mut frames = Vec::new();
    let mut idx = 0u64;
    for t in 0..n_frames {
        if rng.random_bool(0.03) {
            idx += 2;
        } else {
            idx += 1;
        }
        let mut f = FrameDetections::empty("scene", idx, idx as i64 * 100);
        for (b, v) in &objs {
            if rng.random_bool(0.1) {
                continue;
            }
            let bbox = BBox::new(b[0] + v[0] * t as f64, b[1] + v[1] * t as f64, b[2], b[3]).unwrap();
            let score = rng.random_range(0.0..1.0);
            f.detections.push(Detection::new(idx, idx as i64 * 100, ClassLabel::Car, bbox, score));
        }
        frames.push(f);
    }
    frames
}
