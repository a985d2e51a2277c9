//! Black-box saliency maps from occlusion experiments on a scorer.
//!
//! All four base methods perturb the probe face cell by cell on an
//! [`OcclusionGrid`] and only ever observe the scalar similarity returned
//! by a [`PairScorer`]:
//!
//! * single removal (S0−): occlude one cell at a time, record the drop;
//! * greedy removal (S1−): repeatedly occlude the cell with the largest drop;
//! * single aggregation (S0+): restore one cell onto a blurred baseline,
//!   record the gain;
//! * greedy aggregation (S1+): repeatedly restore the cell with the largest
//!   gain.
//!
//! Per-cell values are spread to pixels by averaging over the cells that
//! cover each pixel, then min-max normalized. The fifth map (AVG) is the
//! per-pixel mean of the four.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{AlignedFace, ALIGNED_SIZE};
use crate::backend::Backends;
use crate::verify::{cosine_similarity, embed, Embedding, VerifyError};

/// Gaussian blur sigma for the aggregation baseline.
pub const BASELINE_BLUR_SIGMA: f32 = 8.0;
pub const DEFAULT_WINDOW: u32 = 16;
pub const DEFAULT_STRIDE: u32 = 8;
pub const DEFAULT_GREEDY_STEPS: usize = 10;

const PIXELS: usize = (ALIGNED_SIZE * ALIGNED_SIZE) as usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SaliencyError {
    #[error("scorer failure: {0}")]
    ScorerFailure(String),
    #[error("invalid occlusion grid: {0}")]
    InvalidGrid(String),
    #[error("greedy steps must be in 1..={cells}, got {steps}")]
    InvalidSteps { steps: usize, cells: usize },
    #[error("maps belong to different pairs")]
    MismatchedPair,
}

/// Similarity of a probe raster against a fixed reference face.
pub trait PairScorer: Send + Sync {
    fn score(&self, probe: &RgbImage) -> Result<f64, SaliencyError>;

    fn reference_id(&self) -> &str;

    /// Whether `score` may be called from several threads at once.
    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Scores probes by embedding them and taking the cosine similarity to a
/// pre-embedded reference.
pub struct EmbeddingScorer {
    backends: Arc<Backends>,
    reference: Embedding,
    reference_id: String,
}

impl EmbeddingScorer {
    pub fn new(backends: Arc<Backends>, reference: Embedding, reference_id: impl Into<String>) -> Self {
        Self {
            backends,
            reference,
            reference_id: reference_id.into(),
        }
    }

    pub fn for_face(backends: Arc<Backends>, reference: &AlignedFace) -> Result<Self, VerifyError> {
        let e = embed(reference, &backends)?;
        Ok(Self::new(backends, e, reference.source_id()))
    }
}

impl PairScorer for EmbeddingScorer {
    fn score(&self, probe: &RgbImage) -> Result<f64, SaliencyError> {
        let face = AlignedFace::from_aligned_raster(probe.clone(), "probe");
        embed(&face, &self.backends)
            .and_then(|e| cosine_similarity(&e, &self.reference))
            .map_err(|e| SaliencyError::ScorerFailure(e.to_string()))
    }

    fn reference_id(&self) -> &str {
        &self.reference_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub x: u32,
    pub y: u32,
    pub size: u32,
}

impl Cell {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.size && y >= self.y && y < self.y + self.size
    }
}

/// Square occlusion windows sliding over the 112×112 frame. The last
/// window on each axis is pinned to the far edge so every pixel is covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionGrid {
    window: u32,
    stride: u32,
}

impl Default for OcclusionGrid {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
        }
    }
}

impl OcclusionGrid {
    pub fn new(window: u32, stride: u32) -> Result<Self, SaliencyError> {
        if window == 0 || window > ALIGNED_SIZE {
            return Err(SaliencyError::InvalidGrid(format!(
                "window {window} must be in 1..={ALIGNED_SIZE}"
            )));
        }
        if stride == 0 || stride > window {
            return Err(SaliencyError::InvalidGrid(format!(
                "stride {stride} must be in 1..={window}"
            )));
        }
        Ok(Self { window, stride })
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    /// Window origins along one axis.
    pub fn positions(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let mut p = 0;
        loop {
            if p + self.window >= ALIGNED_SIZE {
                let last = ALIGNED_SIZE - self.window;
                if out.last() != Some(&last) {
                    out.push(last);
                }
                break;
            }
            out.push(p);
            p += self.stride;
        }
        out
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> Vec<Cell> {
        let pos = self.positions();
        pos.iter()
            .flat_map(|&y| pos.iter().map(move |&x| Cell { x, y, size: self.window }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SaliencyMethod {
    #[serde(rename = "S0minus")]
    SingleRemoval,
    #[serde(rename = "S1minus")]
    GreedyRemoval,
    #[serde(rename = "S0plus")]
    SingleAggregation,
    #[serde(rename = "S1plus")]
    GreedyAggregation,
    #[serde(rename = "AVG")]
    Average,
}

impl SaliencyMethod {
    /// Table column order, which is also the order produced by [`explain_pair`].
    pub const ALL: [SaliencyMethod; 5] = [
        SaliencyMethod::SingleRemoval,
        SaliencyMethod::GreedyRemoval,
        SaliencyMethod::SingleAggregation,
        SaliencyMethod::GreedyAggregation,
        SaliencyMethod::Average,
    ];

    /// Short identifier used in URLs and file names.
    pub fn code(&self) -> &'static str {
        match self {
            SaliencyMethod::SingleRemoval => "S0minus",
            SaliencyMethod::GreedyRemoval => "S1minus",
            SaliencyMethod::SingleAggregation => "S0plus",
            SaliencyMethod::GreedyAggregation => "S1plus",
            SaliencyMethod::Average => "AVG",
        }
    }

    /// snake_case column name.
    pub fn column(&self) -> &'static str {
        match self {
            SaliencyMethod::SingleRemoval => "single_removal",
            SaliencyMethod::GreedyRemoval => "greedy_removal",
            SaliencyMethod::SingleAggregation => "single_aggregation",
            SaliencyMethod::GreedyAggregation => "greedy_aggregation",
            SaliencyMethod::Average => "average",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            SaliencyMethod::SingleRemoval => "single removal",
            SaliencyMethod::GreedyRemoval => "greedy removal",
            SaliencyMethod::SingleAggregation => "single aggregation",
            SaliencyMethod::GreedyAggregation => "greedy aggregation",
            SaliencyMethod::Average => "average",
        }
    }
}

impl fmt::Display for SaliencyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for SaliencyMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SaliencyMethod::ALL
            .into_iter()
            .find(|m| m.code() == s || m.column() == s)
            .ok_or_else(|| format!("unknown saliency method {s:?}"))
    }
}

/// A 112×112 importance raster normalized to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    values: Vec<f64>,
    method: SaliencyMethod,
    probe_id: String,
    reference_id: String,
    raw_range: (f64, f64),
}

impl SaliencyMap {
    /// Min-max normalizes a raw raster. A constant raster becomes 0.5
    /// everywhere.
    pub fn from_raw(
        raw: &[f64],
        method: SaliencyMethod,
        probe_id: impl Into<String>,
        reference_id: impl Into<String>,
    ) -> Self {
        assert_eq!(raw.len(), PIXELS, "saliency raster must be 112x112");
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let values = if hi - lo > 1e-12 {
            raw.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.5; PIXELS]
        };
        Self {
            values,
            method,
            probe_id: probe_id.into(),
            reference_id: reference_id.into(),
            raw_range: (lo, hi),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, x: u32, y: u32) -> f64 {
        self.values[(y * ALIGNED_SIZE + x) as usize]
    }

    pub fn method(&self) -> SaliencyMethod {
        self.method
    }

    pub fn probe_id(&self) -> &str {
        &self.probe_id
    }

    pub fn reference_id(&self) -> &str {
        &self.reference_id
    }

    pub fn raw_range(&self) -> (f64, f64) {
        self.raw_range
    }

    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|&v| v == 0.5) && self.raw_range.1 - self.raw_range.0 <= 1e-12
    }

    pub fn width(&self) -> u32 {
        ALIGNED_SIZE
    }

    pub fn height(&self) -> u32 {
        ALIGNED_SIZE
    }
}

/// Per-pixel mean of cell values over every cell covering the pixel.
pub fn expand_cells(cells: &[Cell], values: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; PIXELS];
    let mut count = vec![0u32; PIXELS];
    for (c, &v) in cells.iter().zip(values) {
        for y in c.y..c.y + c.size {
            for x in c.x..c.x + c.size {
                let i = (y * ALIGNED_SIZE + x) as usize;
                sum[i] += v;
                count[i] += 1;
            }
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect()
}

/// Per-channel mean color of a raster, rounded.
pub fn mean_color(img: &RgbImage) -> Rgb<u8> {
    let mut acc = [0u64; 3];
    for p in img.pixels() {
        for (a, v) in acc.iter_mut().zip(p.0) {
            *a += v as u64;
        }
    }
    let n = (img.width() * img.height()) as f64;
    Rgb(acc.map(|s| (s as f64 / n).round() as u8))
}

pub fn blurred_baseline(img: &RgbImage) -> RgbImage {
    image::imageops::blur(img, BASELINE_BLUR_SIGMA)
}

fn fill_cell(img: &mut RgbImage, cell: &Cell, color: Rgb<u8>) {
    for y in cell.y..cell.y + cell.size {
        for x in cell.x..cell.x + cell.size {
            img.put_pixel(x, y, color);
        }
    }
}

fn copy_cell(dst: &mut RgbImage, src: &RgbImage, cell: &Cell) {
    for y in cell.y..cell.y + cell.size {
        for x in cell.x..cell.x + cell.size {
            dst.put_pixel(x, y, *src.get_pixel(x, y));
        }
    }
}

/// Applies `edit` to a copy of `base` for each candidate cell and scores it,
/// in cell order. Runs in parallel when the scorer allows it.
fn sweep<F>(
    base: &RgbImage,
    cells: &[Cell],
    candidates: &[usize],
    scorer: &dyn PairScorer,
    edit: F,
) -> Result<Vec<f64>, SaliencyError>
where
    F: Fn(&mut RgbImage, &Cell) + Sync,
{
    let eval = |&i: &usize| {
        let mut img = base.clone();
        edit(&mut img, &cells[i]);
        scorer.score(&img)
    };
    if scorer.concurrent_safe() {
        candidates.par_iter().map(eval).collect()
    } else {
        candidates.iter().map(eval).collect()
    }
}

/// Score drop for occluding each cell with the probe's mean color.
/// Makes exactly `cells + 1` scorer calls.
pub fn single_removal_deltas(
    probe: &RgbImage,
    scorer: &dyn PairScorer,
    grid: &OcclusionGrid,
) -> Result<Vec<f64>, SaliencyError> {
    let cells = grid.cells();
    let fill = mean_color(probe);
    let base = scorer.score(probe)?;
    let all: Vec<usize> = (0..cells.len()).collect();
    let scores = sweep(probe, &cells, &all, scorer, |img, c| fill_cell(img, c, fill))?;
    Ok(scores.into_iter().map(|s| base - s).collect())
}

/// Score gain for restoring each cell onto the blurred baseline.
/// Makes exactly `cells + 1` scorer calls.
pub fn single_aggregation_deltas(
    probe: &RgbImage,
    scorer: &dyn PairScorer,
    grid: &OcclusionGrid,
) -> Result<Vec<f64>, SaliencyError> {
    let cells = grid.cells();
    let baseline = blurred_baseline(probe);
    let base = scorer.score(&baseline)?;
    let all: Vec<usize> = (0..cells.len()).collect();
    let scores = sweep(&baseline, &cells, &all, scorer, |img, c| copy_cell(img, probe, c))?;
    Ok(scores.into_iter().map(|s| s - base).collect())
}

#[derive(Clone, Copy)]
enum Greedy {
    Removal,
    Aggregation,
}

fn greedy_order(
    probe: &RgbImage,
    scorer: &dyn PairScorer,
    grid: &OcclusionGrid,
    steps: usize,
    mode: Greedy,
) -> Result<Vec<usize>, SaliencyError> {
    let cells = grid.cells();
    if steps == 0 || steps > cells.len() {
        return Err(SaliencyError::InvalidSteps {
            steps,
            cells: cells.len(),
        });
    }
    let fill = mean_color(probe);
    let mut current = match mode {
        Greedy::Removal => probe.clone(),
        Greedy::Aggregation => blurred_baseline(probe),
    };
    let edit = |img: &mut RgbImage, c: &Cell| match mode {
        Greedy::Removal => fill_cell(img, c, fill),
        Greedy::Aggregation => copy_cell(img, probe, c),
    };
    let mut remaining: Vec<usize> = (0..cells.len()).collect();
    let mut order = Vec::with_capacity(steps);
    for _ in 0..steps {
        let scores = sweep(&current, &cells, &remaining, scorer, edit)?;
        // removal wants the lowest resulting score, aggregation the highest;
        // ties go to the earliest cell
        let mut best = 0;
        for k in 1..scores.len() {
            let better = match mode {
                Greedy::Removal => scores[k] < scores[best],
                Greedy::Aggregation => scores[k] > scores[best],
            };
            if better {
                best = k;
            }
        }
        let chosen = remaining.remove(best);
        edit(&mut current, &cells[chosen]);
        order.push(chosen);
    }
    Ok(order)
}

/// Cells chosen by greedy removal, in selection order.
pub fn greedy_removal_order(
    probe: &RgbImage,
    scorer: &dyn PairScorer,
    grid: &OcclusionGrid,
    steps: usize,
) -> Result<Vec<usize>, SaliencyError> {
    greedy_order(probe, scorer, grid, steps, Greedy::Removal)
}

/// Cells chosen by greedy aggregation, in selection order.
pub fn greedy_aggregation_order(
    probe: &RgbImage,
    scorer: &dyn PairScorer,
    grid: &OcclusionGrid,
    steps: usize,
) -> Result<Vec<usize>, SaliencyError> {
    greedy_order(probe, scorer, grid, steps, Greedy::Aggregation)
}

/// Cell chosen in round `k` (1-based) of `steps` gets `steps - k + 1`;
/// unchosen cells get 0.
pub fn rank_importance(order: &[usize], n_cells: usize, steps: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_cells];
    for (k, &c) in order.iter().enumerate() {
        v[c] = (steps - k) as f64;
    }
    v
}

fn to_map(grid: &OcclusionGrid, cell_values: &[f64], method: SaliencyMethod, probe: &AlignedFace, scorer: &dyn PairScorer) -> SaliencyMap {
    let raw = expand_cells(&grid.cells(), cell_values);
    SaliencyMap::from_raw(&raw, method, probe.source_id(), scorer.reference_id())
}

pub fn single_removal(
    probe: &AlignedFace,
    scorer: &dyn PairScorer,
    grid: &OcclusionGrid,
) -> Result<SaliencyMap, SaliencyError> {
    let d = single_removal_deltas(probe.pixels(), scorer, grid)?;
    Ok(to_map(grid, &d, SaliencyMethod::SingleRemoval, probe, scorer))
}

pub fn single_aggregation(
    probe: &AlignedFace,
    scorer: &dyn PairScorer,
    grid: &OcclusionGrid,
) -> Result<SaliencyMap, SaliencyError> {
    let d = single_aggregation_deltas(probe.pixels(), scorer, grid)?;
    Ok(to_map(grid, &d, SaliencyMethod::SingleAggregation, probe, scorer))
}

pub fn greedy_removal(
    probe: &AlignedFace,
    scorer: &dyn PairScorer,
    grid: &OcclusionGrid,
    steps: usize,
) -> Result<SaliencyMap, SaliencyError> {
    let order = greedy_removal_order(probe.pixels(), scorer, grid, steps)?;
    let v = rank_importance(&order, grid.cells().len(), steps);
    Ok(to_map(grid, &v, SaliencyMethod::GreedyRemoval, probe, scorer))
}

pub fn greedy_aggregation(
    probe: &AlignedFace,
    scorer: &dyn PairScorer,
    grid: &OcclusionGrid,
    steps: usize,
) -> Result<SaliencyMap, SaliencyError> {
    let order = greedy_aggregation_order(probe.pixels(), scorer, grid, steps)?;
    let v = rank_importance(&order, grid.cells().len(), steps);
    Ok(to_map(grid, &v, SaliencyMethod::GreedyAggregation, probe, scorer))
}

/// Per-pixel mean of four normalized maps, renormalized.
pub fn average_map(maps: &[SaliencyMap; 4]) -> Result<SaliencyMap, SaliencyError> {
    let first = &maps[0];
    if maps
        .iter()
        .any(|m| m.probe_id != first.probe_id || m.reference_id != first.reference_id)
    {
        return Err(SaliencyError::MismatchedPair);
    }
    let mean: Vec<f64> = (0..PIXELS)
        .map(|i| maps.iter().map(|m| m.values[i]).sum::<f64>() / 4.0)
        .collect();
    Ok(SaliencyMap::from_raw(
        &mean,
        SaliencyMethod::Average,
        first.probe_id.clone(),
        first.reference_id.clone(),
    ))
}

/// The five maps for `probe` against the scorer's reference, in the order
/// S0−, S1−, S0+, S1+, AVG.
pub fn explain_pair(
    probe: &AlignedFace,
    scorer: &dyn PairScorer,
    grid: &OcclusionGrid,
    steps: usize,
) -> Result<[SaliencyMap; 5], SaliencyError> {
    let s0m = single_removal(probe, scorer, grid)?;
    let s1m = greedy_removal(probe, scorer, grid, steps)?;
    let s0p = single_aggregation(probe, scorer, grid)?;
    let s1p = greedy_aggregation(probe, scorer, grid, steps)?;
    let avg = average_map(&[s0m.clone(), s1m.clone(), s0p.clone(), s1p.clone()])?;
    Ok([s0m, s1m, s0p, s1p, avg])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Constant(f64);

    impl PairScorer for Constant {
        fn score(&self, _: &RgbImage) -> Result<f64, SaliencyError> {
            Ok(self.0)
        }
        fn reference_id(&self) -> &str {
            "ref"
        }
    }

    /// 1 minus the fraction of a marked patch that differs from the original.
    struct PatchScorer {
        original: RgbImage,
        patch: Cell,
    }

    impl PairScorer for PatchScorer {
        fn score(&self, img: &RgbImage) -> Result<f64, SaliencyError> {
            let mut changed = 0;
            for y in self.patch.y..self.patch.y + self.patch.size {
                for x in self.patch.x..self.patch.x + self.patch.size {
                    if img.get_pixel(x, y) != self.original.get_pixel(x, y) {
                        changed += 1;
                    }
                }
            }
            Ok(1.0 - changed as f64 / (self.patch.size * self.patch.size) as f64)
        }
        fn reference_id(&self) -> &str {
            "ref"
        }
    }

    struct Counting<S> {
        inner: S,
        calls: AtomicUsize,
    }

    impl<S: PairScorer> PairScorer for Counting<S> {
        fn score(&self, img: &RgbImage) -> Result<f64, SaliencyError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.score(img)
        }
        fn reference_id(&self) -> &str {
            self.inner.reference_id()
        }
    }

    fn noisy_face() -> AlignedFace {
        let img = RgbImage::from_fn(112, 112, |x, y| {
            let v = ((x * 7 + y * 13) % 200 + 30) as u8;
            Rgb([v, 255 - v, (x * y % 256) as u8])
        });
        AlignedFace::from_aligned_raster(img, "probe")
    }

    #[test]
    fn default_grid_has_169_cells_covering_everything() {
        let g = OcclusionGrid::default();
        assert_eq!(g.positions().len(), 13);
        let cells = g.cells();
        assert_eq!(cells.len(), 169);
        for y in 0..112 {
            for x in 0..112 {
                assert!(cells.iter().any(|c| c.contains(x, y)));
            }
        }
    }

    #[test]
    fn five_by_five_grid() {
        let g = OcclusionGrid::new(24, 22).unwrap();
        assert_eq!(g.positions(), vec![0, 22, 44, 66, 88]);
        let g = OcclusionGrid::new(112, 112).unwrap();
        assert_eq!(g.cells().len(), 1);
    }

    #[test]
    fn grid_validation() {
        assert!(OcclusionGrid::new(0, 1).is_err());
        assert!(OcclusionGrid::new(16, 17).is_err());
        assert!(OcclusionGrid::new(16, 0).is_err());
        assert!(OcclusionGrid::new(113, 8).is_err());
    }

    #[test]
    fn constant_scorer_gives_constant_maps() {
        let maps = explain_pair(&noisy_face(), &Constant(0.7), &OcclusionGrid::default(), 3).unwrap();
        for (m, method) in maps.iter().zip(SaliencyMethod::ALL) {
            assert_eq!(m.method(), method);
        }
        assert!(maps[0].is_constant());
        assert!(maps[2].is_constant());
        // every round is a tie, so greedy takes cells in index order
        let grid = OcclusionGrid::default();
        let order = greedy_removal_order(noisy_face().pixels(), &Constant(0.7), &grid, 3).unwrap();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn removal_peaks_inside_marked_patch() {
        let face = noisy_face();
        let patch = Cell { x: 40, y: 56, size: 16 };
        let scorer = PatchScorer { original: face.pixels().clone(), patch };
        let m = single_removal(&face, &scorer, &OcclusionGrid::default()).unwrap();
        let (mut bx, mut by, mut best) = (0, 0, -1.0);
        for y in 0..112 {
            for x in 0..112 {
                if m.value(x, y) > best {
                    (bx, by, best) = (x, y, m.value(x, y));
                }
            }
        }
        assert!(patch.contains(bx, by), "max at ({bx},{by})");
        assert_eq!(best, 1.0);
    }

    #[test]
    fn aggregation_peaks_inside_marked_patch() {
        let face = noisy_face();
        let patch = Cell { x: 72, y: 24, size: 16 };
        let baseline = blurred_baseline(face.pixels());
        // reward pixels that match the original rather than the baseline
        struct Restore {
            original: RgbImage,
            baseline: RgbImage,
            patch: Cell,
        }
        impl PairScorer for Restore {
            fn score(&self, img: &RgbImage) -> Result<f64, SaliencyError> {
                let mut restored = 0;
                for y in self.patch.y..self.patch.y + self.patch.size {
                    for x in self.patch.x..self.patch.x + self.patch.size {
                        let p = img.get_pixel(x, y);
                        if p == self.original.get_pixel(x, y) && p != self.baseline.get_pixel(x, y) {
                            restored += 1;
                        }
                    }
                }
                Ok(restored as f64 / 256.0)
            }
            fn reference_id(&self) -> &str {
                "ref"
            }
        }
        let scorer = Restore { original: face.pixels().clone(), baseline, patch };
        let m = single_aggregation(&face, &scorer, &OcclusionGrid::default()).unwrap();
        let argmax = (0..112 * 112).max_by(|&a, &b| m.values()[a].total_cmp(&m.values()[b])).unwrap();
        assert!(patch.contains(argmax as u32 % 112, argmax as u32 / 112));
    }

    #[test]
    fn single_methods_make_cells_plus_one_calls() {
        let face = noisy_face();
        let grid = OcclusionGrid::default();
        let n = grid.cells().len();
        let c = Counting { inner: Constant(0.2), calls: AtomicUsize::new(0) };
        single_removal(&face, &c, &grid).unwrap();
        assert_eq!(c.calls.load(Ordering::SeqCst), n + 1);
        c.calls.store(0, Ordering::SeqCst);
        single_aggregation(&face, &c, &grid).unwrap();
        assert_eq!(c.calls.load(Ordering::SeqCst), n + 1);
    }

    #[test]
    fn greedy_step_bounds() {
        let face = noisy_face();
        let grid = OcclusionGrid::new(56, 56).unwrap();
        assert_eq!(
            greedy_removal(&face, &Constant(0.0), &grid, 0).unwrap_err(),
            SaliencyError::InvalidSteps { steps: 0, cells: 4 }
        );
        assert!(greedy_aggregation(&face, &Constant(0.0), &grid, 5).is_err());
        assert!(greedy_aggregation(&face, &Constant(0.0), &grid, 4).is_ok());
    }

    #[test]
    fn one_greedy_step_agrees_with_single_removal() {
        let face = noisy_face();
        let patch = Cell { x: 30, y: 70, size: 16 };
        let scorer = PatchScorer { original: face.pixels().clone(), patch };
        let grid = OcclusionGrid::default();
        let deltas = single_removal_deltas(face.pixels(), &scorer, &grid).unwrap();
        let argmax = (0..deltas.len()).fold(0, |b, i| if deltas[i] > deltas[b] { i } else { b });
        let order = greedy_removal_order(face.pixels(), &scorer, &grid, 1).unwrap();
        assert_eq!(order, vec![argmax]);
    }

    #[test]
    fn rank_importance_counts_down() {
        assert_eq!(rank_importance(&[2, 0], 4, 2), vec![1.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn average_of_identical_maps_is_identity() {
        let raw: Vec<f64> = (0..PIXELS).map(|i| (i % 97) as f64).collect();
        let m = SaliencyMap::from_raw(&raw, SaliencyMethod::SingleRemoval, "p", "r");
        let avg = average_map(&[m.clone(), m.clone(), m.clone(), m.clone()]).unwrap();
        for (a, b) in avg.values().iter().zip(m.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(avg.method(), SaliencyMethod::Average);
    }

    #[test]
    fn average_of_zeros_and_ones_is_constant() {
        let zeros = SaliencyMap {
            values: vec![0.0; PIXELS],
            method: SaliencyMethod::SingleRemoval,
            probe_id: "p".into(),
            reference_id: "r".into(),
            raw_range: (0.0, 1.0),
        };
        let ones = SaliencyMap { values: vec![1.0; PIXELS], ..zeros.clone() };
        let avg = average_map(&[zeros.clone(), ones.clone(), zeros, ones]).unwrap();
        assert!(avg.values().iter().all(|&v| v == 0.5));
        assert_eq!(avg.raw_range(), (0.5, 0.5));
    }

    #[test]
    fn average_rejects_mixed_pairs() {
        let raw = vec![0.0; PIXELS];
        let a = SaliencyMap::from_raw(&raw, SaliencyMethod::SingleRemoval, "p", "r");
        let b = SaliencyMap::from_raw(&raw, SaliencyMethod::GreedyRemoval, "q", "r");
        assert_eq!(
            average_map(&[a.clone(), a.clone(), a, b]).unwrap_err(),
            SaliencyError::MismatchedPair
        );
    }

    #[test]
    fn normalized_maps_span_unit_interval() {
        let raw: Vec<f64> = (0..PIXELS).map(|i| ((i * 31) % 1000) as f64 - 300.0).collect();
        let m = SaliencyMap::from_raw(&raw, SaliencyMethod::GreedyAggregation, "p", "r");
        let lo = m.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = m.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
        assert_eq!(m.raw_range(), (-300.0, 699.0));
    }

    #[test]
    fn method_codes_parse() {
        for m in SaliencyMethod::ALL {
            assert_eq!(m.code().parse::<SaliencyMethod>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.code()));
        }
        assert!("bogus".parse::<SaliencyMethod>().is_err());
    }

    #[test]
    fn scorer_errors_propagate() {
        struct Failing;
        impl PairScorer for Failing {
            fn score(&self, _: &RgbImage) -> Result<f64, SaliencyError> {
                Err(SaliencyError::ScorerFailure("boom".into()))
            }
            fn reference_id(&self) -> &str {
                "r"
            }
        }
        assert!(matches!(
            single_removal(&noisy_face(), &Failing, &OcclusionGrid::default()),
            Err(SaliencyError::ScorerFailure(_))
        ));
    }
}
