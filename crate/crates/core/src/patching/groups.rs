use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ImportanceMap;
use crate::error::{Error, Result};
use crate::model::HeadId;

/// Signed top-k head groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadGroups {
    /// Positive scores, descending.
    pub driving: Vec<HeadId>,
    /// Negative scores, descending by magnitude.
    pub resisting: Vec<HeadId>,
    pub k_plus: usize,
    pub k_minus: usize,
}

#[derive(Serialize, Deserialize)]
struct GroupsFile {
    format_version: u32,
    config_hash: String,
    #[serde(flatten)]
    groups: HeadGroups,
}

impl HeadGroups {
    pub fn check(&self) -> Result<()> {
        if self.driving.len() > self.k_plus || self.resisting.len() > self.k_minus {
            return Err(Error::Config("head group larger than its k".into()));
        }
        if self.driving.iter().any(|h| self.resisting.contains(h)) {
            return Err(Error::Config("driving and resisting groups overlap".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path, config_hash: &str) -> Result<()> {
        let file = GroupsFile { format_version: 1, config_hash: config_hash.to_string(), groups: self.clone() };
        fs::write(path, serde_json::to_string_pretty(&file)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<(Self, String)> {
        let file: GroupsFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if file.format_version != 1 {
            return Err(Error::Format(format!("unsupported groups format version {}", file.format_version)));
        }
        file.groups.check()?;
        Ok((file.groups, file.config_hash))
    }
}

/// Heads with `score > 0` (or `< 0`), strongest first, ties in canonical order.
fn ranked(imp: &ImportanceMap, positive: bool) -> Vec<(HeadId, f64)> {
    let mut v: Vec<(HeadId, f64)> =
        imp.iter().filter(|&(_, s)| if positive { s > 0.0 } else { s < 0.0 }).map(|(h, s)| (h, s.abs())).collect();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    v
}

pub fn select_groups(imp: &ImportanceMap, k_plus: usize, k_minus: usize) -> HeadGroups {
    let take = |positive, k| ranked(imp, positive).into_iter().take(k).map(|(h, _)| h).collect();
    HeadGroups { driving: take(true, k_plus), resisting: take(false, k_minus), k_plus, k_minus }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryStats {
    /// Sum of positive scores over sum of absolute negative scores.
    pub aggregate_ratio: f64,
    pub top_share_driving: f64,
    pub top_share_resisting: f64,
    pub top_n: usize,
}

pub fn asymmetry_stats(imp: &ImportanceMap, top_n: usize) -> Result<AsymmetryStats> {
    let pos = ranked(imp, true);
    let neg = ranked(imp, false);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Undefined("asymmetry needs at least one positive and one negative head".into()));
    }
    let total = |v: &[(HeadId, f64)]| v.iter().map(|p| p.1).sum::<f64>();
    let top = |v: &[(HeadId, f64)]| v.iter().take(top_n).map(|p| p.1).sum::<f64>();
    let (tp, tn) = (total(&pos), total(&neg));
    Ok(AsymmetryStats {
        aggregate_ratio: tp / tn,
        top_share_driving: top(&pos) / tp,
        top_share_resisting: top(&neg) / tn,
        top_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn map(scores: Vec<f64>) -> ImportanceMap {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: scores.len(),
            d_model: 4,
            d_head: 2,
            d_ff: 4,
            vocab_size: 5,
            max_seq: 4,
            n_visual_tokens: 1,
        };
        ImportanceMap::from_scores(&cfg, scores, 1).unwrap()
    }

    #[test]
    fn hand_map() {
        let m = map(vec![3.0, 1.0, -2.0, -0.5]);
        let g = select_groups(&m, 1, 1);
        assert_eq!(g.driving, vec![HeadId::new(0, 0)]);
        assert_eq!(g.resisting, vec![HeadId::new(0, 2)]);
        let s = asymmetry_stats(&m, 1).unwrap();
        assert_eq!(s.aggregate_ratio, 1.6);
        assert_eq!(s.top_share_driving, 0.75);
        assert_eq!(s.top_share_resisting, 0.8);
    }

    #[test]
    fn short_and_empty_groups() {
        let m = map(vec![-1.0, -2.0, 0.0, -3.0]);
        let g = select_groups(&m, 5, 10);
        assert!(g.driving.is_empty());
        assert_eq!(g.resisting, vec![HeadId::new(0, 3), HeadId::new(0, 1), HeadId::new(0, 0)]);
        assert!(matches!(asymmetry_stats(&m, 1), Err(Error::Undefined(_))));
    }

    #[test]
    fn ties_break_canonically() {
        let m = map(vec![1.0, 2.0, 2.0, 1.0]);
        assert_eq!(select_groups(&m, 3, 0).driving, vec![HeadId::new(0, 1), HeadId::new(0, 2), HeadId::new(0, 0)]);
    }

    #[test]
    fn symmetric_map() {
        let s = asymmetry_stats(&map(vec![0.5, -0.5, 2.0, -2.0]), 1).unwrap();
        assert_eq!(s.aggregate_ratio, 1.0);
        assert_eq!(s.top_share_driving, s.top_share_resisting);
        let single = asymmetry_stats(&map(vec![0.7, -0.5, -2.0]), 3).unwrap();
        assert_eq!(single.top_share_driving, 1.0);
    }
}
