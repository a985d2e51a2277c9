//! Fixed inputs with frozen outputs.
//!
//! Set `XFR_BLESS=1` to rewrite the golden files after an intended change.

use std::path::PathBuf;

use xfr_core::context::build_context;
use xfr_core::regions::{FacialRegion, Mask, RegionName};
use xfr_core::saliency::{SaliencyMap, SaliencyMethod};
use xfr_core::table::{build_table, rank_regions};
use xfr_core::{GeneralContextInfo, Point, VerificationRecord};

/// Per-region scores in column order single removal, greedy removal,
/// single aggregation, greedy aggregation, average.
const FIXTURE_SCORES: [[u8; 5]; 9] = [
    [1, 5, 1, 5, 1],
    [3, 5, 1, 4, 1],
    [1, 5, 2, 5, 1],
    [3, 5, 2, 5, 3],
    [4, 5, 5, 5, 5],
    [2, 5, 3, 5, 4],
    [4, 5, 1, 5, 4],
    [5, 5, 2, 5, 5],
    [5, 5, 5, 5, 5],
];

const FIXTURE_SUMMARY: [(f64, f64); 9] = [
    (2.6, 0.6),
    (2.8, 0.4),
    (2.8, 0.4),
    (3.6, 0.0),
    (4.8, 0.0),
    (3.8, 0.0),
    (3.8, 0.2),
    (4.4, 0.0),
    (5.0, 0.0),
];

/// Nine disjoint 30×30 squares on a 3×3 layout.
fn square_regions() -> Vec<FacialRegion> {
    RegionName::ALL
        .iter()
        .enumerate()
        .map(|(i, &name)| {
            let (x, y) = (4.0 + 36.0 * (i % 3) as f64, 4.0 + 36.0 * (i / 3) as f64);
            let poly = [Point::new(x, y), Point::new(x + 30.0, y), Point::new(x + 30.0, y + 30.0), Point::new(x, y + 30.0)];
            FacialRegion {
                name,
                mask: Mask::rasterize(&poly),
            }
        })
        .collect()
}

/// Maps whose value inside each region sits mid-interval for the wanted
/// score. Corner pixels pin the normalization range to [0, 1].
fn injected_maps(regions: &[FacialRegion]) -> Vec<SaliencyMap> {
    SaliencyMethod::ALL
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let mut raw = vec![0.5; 112 * 112];
            for (r, scores) in regions.iter().zip(FIXTURE_SCORES) {
                let v = (5 - scores[m]) as f64 / 5.0 + 0.1;
                for (px, &inside) in raw.iter_mut().zip(r.mask.bits()) {
                    if inside {
                        *px = v;
                    }
                }
            }
            raw[0] = 0.0;
            raw[112 * 112 - 1] = 1.0;
            SaliencyMap::from_raw(&raw, method, "a", "b")
        })
        .collect()
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/golden").join(name)
}

fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("XFR_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} differs from its golden file");
}

#[test]
fn table_from_injected_maps_reproduces_summaries() {
    let regions = square_regions();
    let table = build_table("a|b", &injected_maps(&regions), &regions).unwrap();
    for ((row, scores), summary) in table.rows.iter().zip(FIXTURE_SCORES).zip(FIXTURE_SUMMARY) {
        assert_eq!(row.scores(), scores, "{}", row.region);
        assert_eq!((row.mean, row.ratio_of_1s), summary, "{}", row.region);
    }
    let ranked = rank_regions(&table);
    assert_eq!(ranked[0], RegionName::LeftEyebrow);
    assert_eq!(ranked[8], RegionName::Nose);
    check_golden("region_table.csv", &table.to_csv());
}

#[test]
fn context_for_fixture_table_is_frozen() {
    let regions = square_regions();
    let table = build_table("a|b", &injected_maps(&regions), &regions).unwrap();
    let record = VerificationRecord::new("a|b", 0.812, 0.5).with_pic(0.93);
    let ctx = build_context(&record, &table, &GeneralContextInfo::for_record(&record)).unwrap();
    assert!(ctx.text.contains("The most important facial region is the left eyebrow."));
    assert!(ctx.text.contains("The least important facial region is the nose."));
    check_golden("context_fixture.txt", &ctx.text);
}
