//! Event-to-line association through an image tessellation grid.
//!
//! The image is divided into m×n cells; at the start of each event window
//! every visible projected segment is registered in the cells it crosses
//! (found by walking its grid-line intersections) plus their 8-neighborhood,
//! so that any event within the accept threshold of a line finds it in its
//! own cell. A match is validated by three conditions, in order:
//!
//! a) distance to the closest candidate below `alpha`;
//! b) distance to the second-closest candidate above `beta`
//!    (vacuously true with a single candidate);
//! c) the orthogonal projection of the event onto the matched segment
//!    falls strictly between its endpoints.
//!
//! Candidate ordering and both thresholds use the Euclidean distance to the
//! segment itself (endpoints included), so a far-away segment whose
//! infinite line happens to graze the event cannot influence the decision;
//! this is what keeps the cell-local search equivalent to an exhaustive
//! scan over all segments. Condition c forces an interior foot point on an
//! accepted match, so the returned innovation — the signed distance to the
//! matched line — has exactly the magnitude that passed condition a.
//!
//! Cells are half-open: a coordinate on a shared boundary belongs to the
//! higher cell, and points on the outer image border are clamped inward.

use nalgebra::Vector2;

use crate::camera::VisibleLine;

#[derive(Clone, Copy, Debug)]
pub struct MatcherConfig {
    /// Accept threshold for the closest segment (pixels).
    pub alpha: f64,
    /// Ambiguity threshold for the second-closest segment (pixels).
    pub beta: f64,
    /// Grid cells along u.
    pub grid_m: usize,
    /// Grid cells along v.
    pub grid_n: usize,
    /// Register segments in the 8-neighborhood of each crossed cell.
    pub dilate: bool,
    /// Skip events lagging the processing clock by more than this (µs);
    /// `None` disables the policy.
    pub skip_lag_us: Option<f64>,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            alpha: 2.5,
            beta: 3.5,
            grid_m: 16,
            grid_n: 12,
            dilate: true,
            skip_lag_us: None,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0) {
            return Err("matcher alpha must be > 0".into());
        }
        if self.beta < self.alpha {
            return Err("matcher beta must be >= alpha".into());
        }
        if self.grid_m == 0 || self.grid_n == 0 {
            return Err("grid dimensions must be positive".into());
        }
        Ok(())
    }
}

/// True when the event should be dropped under the lag policy.
#[inline]
pub fn should_skip(event_ts_us: f64, processing_clock_us: f64, cfg: &MatcherConfig) -> bool {
    match cfg.skip_lag_us {
        Some(lag) => processing_clock_us - event_ts_us > lag,
        None => false,
    }
}

/// Walks every cell crossed by the segment between two points inside the
/// image rectangle, in traversal order. Visits exactly
/// `|Δcell_u| + |Δcell_v| + 1` cells.
pub fn walk_cells(
    p1: Vector2<f64>,
    p2: Vector2<f64>,
    grid_m: usize,
    grid_n: usize,
    width: f64,
    height: f64,
    mut visit: impl FnMut(usize, usize),
) {
    let cw = width / grid_m as f64;
    let ch = height / grid_n as f64;
    let cell = |x: f64, max: usize, size: f64| -> i64 {
        ((x / size).floor() as i64).clamp(0, max as i64 - 1)
    };
    let mut cu = cell(p1.x, grid_m, cw);
    let mut cv = cell(p1.y, grid_n, ch);
    let cu_end = cell(p2.x, grid_m, cw);
    let cv_end = cell(p2.y, grid_n, ch);

    visit(cu as usize, cv as usize);
    let mut remaining = (cu_end - cu).abs() + (cv_end - cv).abs();
    if remaining == 0 {
        return;
    }

    let du = p2.x - p1.x;
    let dv = p2.y - p1.y;
    let step_u: i64 = if du > 0.0 { 1 } else { -1 };
    let step_v: i64 = if dv > 0.0 { 1 } else { -1 };
    // Parameter t of the next vertical / horizontal grid-line crossing.
    let mut t_max_u = if du != 0.0 {
        let boundary = if du > 0.0 { (cu + 1) as f64 * cw } else { cu as f64 * cw };
        (boundary - p1.x) / du
    } else {
        f64::INFINITY
    };
    let mut t_max_v = if dv != 0.0 {
        let boundary = if dv > 0.0 { (cv + 1) as f64 * ch } else { cv as f64 * ch };
        (boundary - p1.y) / dv
    } else {
        f64::INFINITY
    };
    let t_delta_u = if du != 0.0 { cw / du.abs() } else { f64::INFINITY };
    let t_delta_v = if dv != 0.0 { ch / dv.abs() } else { f64::INFINITY };

    while remaining > 0 {
        if (t_max_u < t_max_v && cu != cu_end) || cv == cv_end {
            cu += step_u;
            t_max_u += t_delta_u;
        } else {
            cv += step_v;
            t_max_v += t_delta_v;
        }
        visit(cu as usize, cv as usize);
        remaining -= 1;
    }
}

/// Cells crossed by a clipped segment, in traversal order.
pub fn segment_cells(
    p1: Vector2<f64>,
    p2: Vector2<f64>,
    grid_m: usize,
    grid_n: usize,
    width: f64,
    height: f64,
) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    walk_cells(p1, p2, grid_m, grid_n, width, height, |u, v| cells.push((u, v)));
    cells
}

/// Per-window tessellation: each cell holds the indices of the visible
/// lines registered to it. Buffers are retained across windows.
pub struct TessellationGrid {
    m: usize,
    n: usize,
    width: f64,
    height: f64,
    cells: Vec<Vec<u16>>,
    stamp: Vec<u64>,
    epoch: u64,
}

impl TessellationGrid {
    pub fn new(grid_m: usize, grid_n: usize, width: f64, height: f64) -> Self {
        Self {
            m: grid_m,
            n: grid_n,
            width,
            height,
            cells: vec![Vec::new(); grid_m * grid_n],
            stamp: vec![0; grid_m * grid_n],
            epoch: 0,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn clear(&mut self) {
        for c in &mut self.cells {
            c.clear();
        }
    }

    #[inline]
    fn flat(&self, cu: usize, cv: usize) -> usize {
        cv * self.m + cu
    }

    /// Cell index of an image point (clamped to the grid).
    #[inline]
    pub fn cell_of(&self, u: f64, v: f64) -> (usize, usize) {
        let cu = ((u / (self.width / self.m as f64)).floor() as i64)
            .clamp(0, self.m as i64 - 1) as usize;
        let cv = ((v / (self.height / self.n as f64)).floor() as i64)
            .clamp(0, self.n as i64 - 1) as usize;
        (cu, cv)
    }

    #[inline]
    pub fn candidates(&self, u: f64, v: f64) -> &[u16] {
        let (cu, cv) = self.cell_of(u, v);
        &self.cells[self.flat(cu, cv)]
    }

    pub fn cell_list(&self, cu: usize, cv: usize) -> &[u16] {
        &self.cells[self.flat(cu, cv)]
    }

    /// Registers one line in the cells its clipped image crosses, dilated by
    /// one cell in every direction when enabled.
    pub fn register(&mut self, index: u16, clip1: Vector2<f64>, clip2: Vector2<f64>, dilate: bool) {
        self.epoch += 1;
        let epoch = self.epoch;
        let (m, n) = (self.m as i64, self.n as i64);
        let reach: i64 = if dilate { 1 } else { 0 };
        // Split borrows: the walk only needs geometry fields.
        let (cells, stamp) = (&mut self.cells, &mut self.stamp);
        let grid_m = self.m;
        walk_cells(
            clip1,
            clip2,
            self.m,
            self.n,
            self.width,
            self.height,
            |cu, cv| {
                for dv in -reach..=reach {
                    for du in -reach..=reach {
                        let nu = cu as i64 + du;
                        let nv = cv as i64 + dv;
                        if nu < 0 || nv < 0 || nu >= m || nv >= n {
                            continue;
                        }
                        let idx = nv as usize * grid_m + nu as usize;
                        if stamp[idx] != epoch {
                            stamp[idx] = epoch;
                            cells[idx].push(index);
                        }
                    }
                }
            },
        );
    }
}

/// Builds a fresh grid with every line registered.
pub fn build_grid(
    lines: &[VisibleLine],
    cfg: &MatcherConfig,
    width: f64,
    height: f64,
) -> TessellationGrid {
    let mut grid = TessellationGrid::new(cfg.grid_m, cfg.grid_n, width, height);
    rebuild_grid(&mut grid, lines, cfg);
    grid
}

/// Clears and re-registers all lines, reusing the grid's buffers.
pub fn rebuild_grid(grid: &mut TessellationGrid, lines: &[VisibleLine], cfg: &MatcherConfig) {
    grid.clear();
    for (i, line) in lines.iter().enumerate() {
        grid.register(i as u16, line.clip1, line.clip2, cfg.dilate);
    }
}

/// Matches an event against the lines registered in its cell. Returns the
/// index of the matched line and the signed distance, or `None`.
#[inline]
pub fn match_event(
    u: f64,
    v: f64,
    grid: &TessellationGrid,
    lines: &[VisibleLine],
    cfg: &MatcherConfig,
) -> Option<(u16, f64)> {
    let candidates = grid.candidates(u, v);
    match_among(u, v, candidates.iter().copied(), lines, cfg)
}

/// Shared condition logic over an arbitrary candidate set, sorted implicitly
/// from min to max distance (only the two smallest matter; comparisons use
/// squared segment distances). Ties are broken toward the lower line index
/// for deterministic replay.
pub fn match_among(
    u: f64,
    v: f64,
    candidates: impl Iterator<Item = u16>,
    lines: &[VisibleLine],
    cfg: &MatcherConfig,
) -> Option<(u16, f64)> {
    let mut best: Option<(f64, u16)> = None;
    let mut second_sq = f64::INFINITY;
    for idx in candidates {
        let d_sq = lines[idx as usize].segment_distance_sq(u, v);
        match &mut best {
            None => best = Some((d_sq, idx)),
            Some((b_sq, bidx)) => {
                if d_sq < *b_sq || (d_sq == *b_sq && idx < *bidx) {
                    second_sq = *b_sq;
                    (*b_sq, *bidx) = (d_sq, idx);
                } else if d_sq < second_sq {
                    second_sq = d_sq;
                }
            }
        }
    }
    let (d1_sq, idx) = best?;
    // a) closest below the accept threshold
    if !(d1_sq < cfg.alpha * cfg.alpha) {
        return None;
    }
    // b) runner-up above the ambiguity threshold
    if !(second_sq > cfg.beta * cfg.beta) {
        return None;
    }
    // c) orthogonal projection interior to the segment
    let wl = &lines[idx as usize];
    let s = wl.projection_parameter(u, v);
    if !(s > 0.0 && s < 1.0) {
        return None;
    }
    Some((idx, wl.distance(u, v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{ProjectedLine, VisibleLine};
    use crate::rng::SplitMix64;
    use nalgebra::Vector3;

    const W: f64 = 240.0;
    const H: f64 = 180.0;

    /// Visible line straight from two pixel endpoints (identity-like calib).
    pub(crate) fn line_from_px(id: u32, p1: Vector2<f64>, p2: Vector2<f64>) -> VisibleLine {
        let u1 = Vector3::new(p1.x, p1.y, 1.0);
        let u2 = Vector3::new(p2.x, p2.y, 1.0);
        let line = u1.cross(&u2);
        let clipped = crate::camera::clip_to_rect(p1, p2, W, H).unwrap_or((p1, p2));
        VisibleLine {
            proj: ProjectedLine {
                seg_id: id,
                u1,
                u2,
                line,
            },
            px1: p1,
            px2: p2,
            clip1: clipped.0,
            clip2: clipped.1,
            inv_line_norm: 1.0 / (line.x * line.x + line.y * line.y).sqrt(),
            inv_dir_norm_sq: 1.0 / (p2 - p1).norm_squared(),
        }
    }

    #[test]
    fn single_cell_segment() {
        let cells = segment_cells(
            Vector2::new(3.0, 4.0),
            Vector2::new(6.0, 7.0),
            16,
            12,
            W,
            H,
        );
        assert_eq!(cells, vec![(0, 0)]);
    }

    #[test]
    fn horizontal_segment_fills_a_row() {
        let cells = segment_cells(
            Vector2::new(0.0, 100.0),
            Vector2::new(239.9, 100.0),
            16,
            12,
            W,
            H,
        );
        let row = 100.0_f64 / (H / 12.0);
        let expected: Vec<(usize, usize)> = (0..16).map(|u| (u, row as usize)).collect();
        assert_eq!(cells, expected);
    }

    #[test]
    fn border_points_clamp_into_grid() {
        let cells = segment_cells(
            Vector2::new(240.0, 180.0),
            Vector2::new(240.0, 180.0),
            16,
            12,
            W,
            H,
        );
        assert_eq!(cells, vec![(15, 11)]);
    }

    /// Exact brute-force supercover: a cell is included iff the segment
    /// intersects it and the overlap's midpoint falls in the cell under the
    /// same half-open ownership rule.
    pub(crate) fn supercover_oracle(
        p1: Vector2<f64>,
        p2: Vector2<f64>,
        m: usize,
        n: usize,
        w: f64,
        h: f64,
    ) -> Vec<(usize, usize)> {
        let cw = w / m as f64;
        let ch = h / n as f64;
        let cell = |x: f64, max: usize, size: f64| -> i64 {
            ((x / size).floor() as i64).clamp(0, max as i64 - 1)
        };
        let lo_u = cell(p1.x.min(p2.x), m, cw) - 1;
        let hi_u = cell(p1.x.max(p2.x), m, cw) + 1;
        let lo_v = cell(p1.y.min(p2.y), n, ch) - 1;
        let hi_v = cell(p1.y.max(p2.y), n, ch) + 1;
        let mut out = Vec::new();
        for cv in lo_v.max(0)..=(hi_v.min(n as i64 - 1)) {
            for cu in lo_u.max(0)..=(hi_u.min(m as i64 - 1)) {
                let x0 = cu as f64 * cw;
                let y0 = cv as f64 * ch;
                let shifted1 = p1 - Vector2::new(x0, y0);
                let shifted2 = p2 - Vector2::new(x0, y0);
                if let Some((c1, c2)) = crate::camera::clip_to_rect(shifted1, shifted2, cw, ch) {
                    let mid = (c1 + c2) * 0.5 + Vector2::new(x0, y0);
                    if cell(mid.x, m, cw) == cu && cell(mid.y, n, ch) == cv {
                        out.push((cu as usize, cv as usize));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn walk_matches_supercover_oracle() {
        let mut rng = SplitMix64::new(21);
        for &(m, n) in &[(8usize, 6usize), (16, 12), (24, 18)] {
            for _ in 0..1000 {
                let p1 = Vector2::new(rng.uniform_in(0.0, W), rng.uniform_in(0.0, H));
                let p2 = Vector2::new(rng.uniform_in(0.0, W), rng.uniform_in(0.0, H));
                let mut walked = segment_cells(p1, p2, m, n, W, H);
                let mut oracle = supercover_oracle(p1, p2, m, n, W, H);
                walked.sort_unstable();
                walked.dedup();
                oracle.sort_unstable();
                assert_eq!(walked, oracle, "p1 {p1:?} p2 {p2:?} grid {m}x{n}");
            }
        }
    }

    #[test]
    fn dense_sampling_oracle_is_covered() {
        // 0.05 px sampling can miss sub-sample corner clips, so the sampled
        // set must be a subset of the walked set.
        let mut rng = SplitMix64::new(22);
        for _ in 0..300 {
            let p1 = Vector2::new(rng.uniform_in(0.0, W), rng.uniform_in(0.0, H));
            let p2 = Vector2::new(rng.uniform_in(0.0, W), rng.uniform_in(0.0, H));
            let mut walked = segment_cells(p1, p2, 16, 12, W, H);
            walked.sort_unstable();
            walked.dedup();
            let len = (p2 - p1).norm();
            let steps = (len / 0.05).ceil() as usize + 1;
            let mut sampled = Vec::new();
            for i in 0..=steps {
                let t = i as f64 / steps as f64;
                let p = p1 + (p2 - p1) * t;
                let cu = ((p.x / (W / 16.0)).floor() as i64).clamp(0, 15) as usize;
                let cv = ((p.y / (H / 12.0)).floor() as i64).clamp(0, 11) as usize;
                sampled.push((cu, cv));
            }
            sampled.sort_unstable();
            sampled.dedup();
            for c in &sampled {
                assert!(walked.binary_search(c).is_ok(), "missing cell {c:?}");
            }
        }
    }

    #[test]
    fn path_cost_is_crossings_plus_one() {
        let mut rng = SplitMix64::new(23);
        for _ in 0..1000 {
            let p1 = Vector2::new(rng.uniform_in(0.0, W), rng.uniform_in(0.0, H));
            let p2 = Vector2::new(rng.uniform_in(0.0, W), rng.uniform_in(0.0, H));
            let cells = segment_cells(p1, p2, 16, 12, W, H);
            let (c0, cn) = (cells[0], cells[cells.len() - 1]);
            let bound = (c0.0 as i64 - cn.0 as i64).unsigned_abs()
                + (c0.1 as i64 - cn.1 as i64).unsigned_abs()
                + 1;
            assert_eq!(cells.len() as u64, bound);
        }
    }

    #[test]
    fn empty_grid_has_empty_cells() {
        let cfg = MatcherConfig::default();
        let grid = build_grid(&[], &cfg, W, H);
        for cv in 0..12 {
            for cu in 0..16 {
                assert!(grid.cell_list(cu, cv).is_empty());
            }
        }
    }

    #[test]
    fn diagonal_line_occupies_dilated_corridor() {
        let cfg = MatcherConfig::default();
        let line = line_from_px(0, Vector2::new(0.0, 0.0), Vector2::new(239.0, 179.0));
        let grid = build_grid(&[line.clone()], &cfg, W, H);
        let mut corridor: Vec<(usize, usize)> =
            segment_cells(line.clip1, line.clip2, 16, 12, W, H);
        corridor.sort_unstable();
        corridor.dedup();
        for cv in 0..12usize {
            for cu in 0..16usize {
                let occupied = !grid.cell_list(cu, cv).is_empty();
                let near = corridor.iter().any(|&(u, v)| {
                    (u as i64 - cu as i64).abs() <= 1 && (v as i64 - cv as i64).abs() <= 1
                });
                assert_eq!(occupied, near, "cell ({cu},{cv})");
            }
        }
    }

    #[test]
    fn crossing_lines_share_cells() {
        let cfg = MatcherConfig::default();
        let a = line_from_px(0, Vector2::new(0.0, 90.0), Vector2::new(239.0, 90.0));
        let b = line_from_px(1, Vector2::new(120.0, 0.0), Vector2::new(120.0, 179.0));
        let grid = build_grid(&[a, b], &cfg, W, H);
        let list = grid.candidates(120.0, 90.0);
        assert!(list.contains(&0) && list.contains(&1));
    }

    #[test]
    fn skip_policy_cases() {
        let mut cfg = MatcherConfig::default();
        cfg.skip_lag_us = Some(1.0);
        assert!(!should_skip(100.0, 100.0, &cfg));
        assert!(should_skip(100.0, 102.0, &cfg));
        cfg.skip_lag_us = None;
        assert!(!should_skip(0.0, 1e12, &cfg));
    }

    #[test]
    fn lone_segment_within_alpha_matches() {
        let cfg = MatcherConfig::default();
        let line = line_from_px(7, Vector2::new(20.0, 90.0), Vector2::new(220.0, 90.0));
        let lines = vec![line];
        let grid = build_grid(&lines, &cfg, W, H);
        let (idx, z) = match_event(120.0, 91.0, &grid, &lines, &cfg).expect("match");
        assert_eq!(idx, 0);
        assert!((z.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equidistant_parallel_segments_are_ambiguous() {
        let cfg = MatcherConfig::default();
        let a = line_from_px(0, Vector2::new(20.0, 88.0), Vector2::new(220.0, 88.0));
        let b = line_from_px(1, Vector2::new(20.0, 92.0), Vector2::new(220.0, 92.0));
        let lines = vec![a, b];
        let grid = build_grid(&lines, &cfg, W, H);
        // d1 = d2 = 2 < beta = 3.5: rejected as ambiguous.
        assert_eq!(match_event(120.0, 90.0, &grid, &lines, &cfg), None);
    }

    #[test]
    fn projection_beyond_endpoint_is_rejected() {
        let cfg = MatcherConfig::default();
        let line = line_from_px(0, Vector2::new(100.0, 90.0), Vector2::new(150.0, 90.0));
        let lines = vec![line];
        let grid = build_grid(&lines, &cfg, W, H);
        // On the infinite line's extension: parameter 1.2.
        assert_eq!(match_event(160.0, 91.0, &grid, &lines, &cfg), None);
        // Interior point still matches.
        assert!(match_event(125.0, 91.0, &grid, &lines, &cfg).is_some());
    }

    #[test]
    fn tie_break_prefers_lower_index() {
        // Two coincident lines give d1 == d2; with beta below that distance
        // condition b passes and the tie must resolve to the lower index
        // regardless of iteration order.
        let cfg = MatcherConfig {
            beta: 0.5,
            ..Default::default()
        };
        let a = line_from_px(0, Vector2::new(20.0, 90.0), Vector2::new(220.0, 90.0));
        let b = line_from_px(1, Vector2::new(20.0, 90.0), Vector2::new(220.0, 90.0));
        let lines = vec![a, b];
        for order in [[0u16, 1u16], [1u16, 0u16]] {
            let got = match_among(120.0, 91.0, order.into_iter(), &lines, &cfg);
            assert_eq!(got.map(|(i, _)| i), Some(0));
        }
    }
}
