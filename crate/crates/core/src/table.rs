//! The explainability table: nine regions × five saliency methods.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regions::{quantize_region_with, FacialRegion, RegionError, RegionName, RegionStatistic};
use crate::saliency::{SaliencyMap, SaliencyMethod};

pub const CSV_HEADER: &str =
    "region,single_removal,greedy_removal,single_aggregation,greedy_aggregation,average,mean,ratio_of_1s";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("missing saliency map for {0}")]
    MissingMethod(SaliencyMethod),
    #[error("region {0} appears more than once")]
    DuplicateRegion(RegionName),
    #[error("expected 9 regions, got {0}")]
    RegionCount(usize),
    #[error("importance score {0} outside 1..=5")]
    InvalidScore(u8),
    #[error("csv: {0}")]
    Csv(String),
}

/// One region's scores in column order single removal, greedy removal,
/// single aggregation, greedy aggregation, average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub region: RegionName,
    pub single_removal: u8,
    pub greedy_removal: u8,
    pub single_aggregation: u8,
    pub greedy_aggregation: u8,
    pub average: u8,
    pub mean: f64,
    pub ratio_of_1s: f64,
}

impl TableRow {
    pub fn from_scores(region: RegionName, scores: [u8; 5]) -> Result<Self, TableError> {
        if let Some(&bad) = scores.iter().find(|s| !(1..=5).contains(*s)) {
            return Err(TableError::InvalidScore(bad));
        }
        let sum: u32 = scores.iter().map(|&s| s as u32).sum();
        let ones = scores.iter().filter(|&&s| s == 1).count();
        Ok(Self {
            region,
            single_removal: scores[0],
            greedy_removal: scores[1],
            single_aggregation: scores[2],
            greedy_aggregation: scores[3],
            average: scores[4],
            mean: sum as f64 / 5.0,
            ratio_of_1s: ones as f64 / 5.0,
        })
    }

    pub fn scores(&self) -> [u8; 5] {
        [
            self.single_removal,
            self.greedy_removal,
            self.single_aggregation,
            self.greedy_aggregation,
            self.average,
        ]
    }

    pub fn score(&self, method: SaliencyMethod) -> u8 {
        let i = SaliencyMethod::ALL.iter().position(|m| *m == method).expect("known method");
        self.scores()[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainabilityTable {
    pub pair_id: String,
    pub rows: Vec<TableRow>,
}

impl ExplainabilityTable {
    /// Builds a table from precomputed scores, rows in region order.
    pub fn from_scores(pair_id: impl Into<String>, scores: [[u8; 5]; 9]) -> Result<Self, TableError> {
        let rows = RegionName::ALL
            .iter()
            .zip(scores)
            .map(|(r, s)| TableRow::from_scores(*r, s))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            pair_id: pair_id.into(),
            rows,
        })
    }

    pub fn row(&self, region: RegionName) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.region == region)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let s = r.scores();
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.1},{:.1}\n",
                r.region, s[0], s[1], s[2], s[3], s[4], r.mean, r.ratio_of_1s
            ));
        }
        out
    }

    pub fn from_csv(pair_id: impl Into<String>, text: &str) -> Result<Self, TableError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let rows = rdr
            .deserialize::<TableRow>()
            .map(|r| r.map_err(|e| TableError::Csv(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            pair_id: pair_id.into(),
            rows,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

/// Quantizes every map over every region.
pub fn build_table(
    pair_id: impl Into<String>,
    maps: &[SaliencyMap],
    regions: &[FacialRegion],
) -> Result<ExplainabilityTable, TableError> {
    build_table_with(pair_id, maps, regions, RegionStatistic::Mean)
}

pub fn build_table_with(
    pair_id: impl Into<String>,
    maps: &[SaliencyMap],
    regions: &[FacialRegion],
    stat: RegionStatistic,
) -> Result<ExplainabilityTable, TableError> {
    if regions.len() != RegionName::ALL.len() {
        return Err(TableError::RegionCount(regions.len()));
    }
    let ordered: Vec<&SaliencyMap> = SaliencyMethod::ALL
        .iter()
        .map(|m| {
            maps.iter()
                .find(|x| x.method() == *m)
                .ok_or(TableError::MissingMethod(*m))
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(9);
    for name in RegionName::ALL {
        let mut matching = regions.iter().filter(|r| r.name == name);
        let region = matching.next().ok_or(TableError::RegionCount(regions.len()))?;
        if matching.next().is_some() {
            return Err(TableError::DuplicateRegion(name));
        }
        let mut scores = [0u8; 5];
        for (s, map) in scores.iter_mut().zip(&ordered) {
            *s = quantize_region_with(map, region, stat)?;
        }
        rows.push(TableRow::from_scores(name, scores)?);
    }
    Ok(ExplainabilityTable {
        pair_id: pair_id.into(),
        rows,
    })
}

/// Regions by ascending mean (most important first), then descending
/// ratio of 1s, then the fixed region order.
pub fn rank_regions(table: &ExplainabilityTable) -> Vec<RegionName> {
    let mut rows: Vec<&TableRow> = table.rows.iter().collect();
    rows.sort_by(|a, b| {
        a.mean
            .total_cmp(&b.mean)
            .then(b.ratio_of_1s.total_cmp(&a.ratio_of_1s))
            .then(a.region.cmp(&b.region))
    });
    rows.into_iter().map(|r| r.region).collect()
}
