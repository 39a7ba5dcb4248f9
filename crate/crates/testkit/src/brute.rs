//! Brute-force geometry oracles. These recompute everything from scratch at
//! every step — no incremental state, no partial selection — but follow the
//! same arithmetic contract as the production kernels: squared Euclidean
//! distance evaluated in `f32` (`dx*dx + dy*dy + dz*dz`), ties broken toward
//! the lowest index. Matching the distance precision is what makes
//! index-for-index comparison meaningful.

fn dist2(a: [f32; 3], b: [f32; 3]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Quadratic farthest-point sampling: at each step, recompute every
/// unselected candidate's distance to its nearest selected point and take
/// the argmax (lowest index on ties). Panics on out-of-range arguments.
#[must_use]
pub fn fps_brute(coords: &[[f32; 3]], m: usize, seed_idx: usize) -> Vec<u32> {
    let n = coords.len();
    assert!(m >= 1 && m <= n, "need 1 <= m <= n");
    assert!(seed_idx < n, "seed out of range");
    let mut selected = vec![seed_idx as u32];
    let mut is_selected = vec![false; n];
    is_selected[seed_idx] = true;
    while selected.len() < m {
        let mut best: Option<(usize, f32)> = None;
        for i in 0..n {
            if is_selected[i] {
                continue;
            }
            let mut nearest = f32::INFINITY;
            for &s in &selected {
                let d = dist2(coords[i], coords[s as usize]);
                if d < nearest {
                    nearest = d;
                }
            }
            match best {
                Some((_, bd)) if nearest <= bd => {}
                _ => best = Some((i, nearest)),
            }
        }
        let (pick, _) = best.expect("m <= n leaves a candidate");
        selected.push(pick as u32);
        is_selected[pick] = true;
    }
    selected
}

/// Full-sort k-nearest-neighbor search: for each query, sort every point by
/// `(distance, index)` and take the first `k`. Panics on out-of-range
/// arguments.
#[must_use]
pub fn knn_brute(coords: &[[f32; 3]], queries: &[u32], k: usize) -> Vec<u32> {
    let n = coords.len();
    assert!(k >= 1 && k <= n, "need 1 <= k <= n");
    let mut out = Vec::with_capacity(queries.len() * k);
    for &q in queries {
        let qp = coords[q as usize];
        let mut order: Vec<(f32, u32)> = coords
            .iter()
            .enumerate()
            .map(|(i, &p)| (dist2(qp, p), i as u32))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        out.extend(order[..k].iter().map(|&(_, i)| i));
    }
    out
}

/// Index of the point nearest the `f64`-accumulated centroid (ties toward
/// the lowest index); 0 for an empty cloud.
#[must_use]
pub fn geometric_seed_brute(coords: &[[f32; 3]]) -> usize {
    if coords.is_empty() {
        return 0;
    }
    let mut sum = [0.0f64; 3];
    for p in coords {
        sum[0] += p[0] as f64;
        sum[1] += p[1] as f64;
        sum[2] += p[2] as f64;
    }
    let inv = 1.0 / coords.len() as f64;
    let c = [
        (sum[0] * inv) as f32,
        (sum[1] * inv) as f32,
        (sum[2] * inv) as f32,
    ];
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (i, &p) in coords.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}
