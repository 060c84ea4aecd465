use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::eval::{evaluate, Method};
use super::fps::furthest_point_sampling;
use super::svg::{line_chart, Series};
use super::train::{train, TrainConfig};
use crate::data::PairSample;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    /// Points per cloud, by furthest point sampling.
    N,
    K,
    L,
    Dg,
}

impl AblationAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::N => "N",
            AblationAxis::K => "K",
            AblationAxis::L => "L",
            AblationAxis::Dg => "D_g",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n" => Ok(AblationAxis::N),
            "k" => Ok(AblationAxis::K),
            "l" => Ok(AblationAxis::L),
            "dg" | "d_g" => Ok(AblationAxis::Dg),
            _ => Err(Error::Config(format!("unknown ablation axis {s:?} (expected N, K, L or D_g)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub axis_value: usize,
    pub method: Method,
    pub corr0: f64,
}

/// Keeps `count` points of A chosen by furthest point sampling and their
/// ground-truth partners in B, renormalizing both clouds.
pub fn subsample_pair(pair: &PairSample, count: usize) -> Result<PairSample> {
    let keep = furthest_point_sampling(&pair.cloud_a, count)?;
    let b_keep: Vec<usize> = keep.iter().map(|&n| pair.gt[n]).collect();
    // The k-th kept A point maps to the k-th kept B point.
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by_key(|&k| b_keep[k]);
    let mut gt = vec![0; count];
    for (rank, &k) in order.iter().enumerate() {
        gt[k] = rank;
    }
    let b_sorted: Vec<usize> = order.iter().map(|&k| b_keep[k]).collect();
    let sample = PairSample {
        cloud_a: pair.cloud_a.select(&keep).normalized(),
        cloud_b: pair.cloud_b.select(&b_sorted).normalized(),
        gt,
        rotation: pair.rotation,
        translation: [0.0; 3],
        noise_sigma: pair.noise_sigma,
        deform: pair.deform.clone(),
    };
    sample.validate()?;
    Ok(sample)
}

/// Trains and evaluates one configuration per value of `axis`, reporting the
/// exact ESFW Corr on `test_pairs`: one row per value.
pub fn ablation_sweep(
    base: &TrainConfig,
    axis: AblationAxis,
    values: &[usize],
    train_pairs: &[PairSample],
    test_pairs: &[PairSample],
) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    let mut rows = Vec::new();
    for &value in values {
        let mut config = base.clone();
        let (train_set, test_set) = match axis {
            AblationAxis::N => {
                let sub = |pairs: &[PairSample]| pairs.iter().map(|p| subsample_pair(p, value)).collect::<Result<Vec<_>>>();
                (sub(train_pairs)?, sub(test_pairs)?)
            }
            other => {
                match other {
                    AblationAxis::K => config.weaving.k = value,
                    AblationAxis::L => config.weaving.layers = value,
                    AblationAxis::Dg => config.weaving.dg = value,
                    AblationAxis::N => unreachable!(),
                }
                (train_pairs.to_vec(), test_pairs.to_vec())
            }
        };
        log::info!("ablation {axis} = {value}: training");
        let outcome = train(&config, &train_set, &[], |_| {})?;
        let mut model = outcome.model;
        for curve in evaluate(&mut model, &test_set, &[0.0])? {
            if curve.method != Method::Esfw {
                continue;
            }
            rows.push(AblationRow {
                axis_value: value,
                method: curve.method,
                corr0: curve.corr[0],
            });
        }
    }
    Ok(rows)
}

/// CSV `axis_value,method,corr@0` plus an SVG chart.
pub fn write_ablation_csv(csv_path: &Path, svg_path: &Path, axis: AblationAxis, rows: &[AblationRow]) -> Result<()> {
    let mut text = String::from("axis_value,method,corr@0\n");
    for r in rows {
        text.push_str(&format!("{},{},{}\n", r.axis_value, r.method, r.corr0));
    }
    fs::write(csv_path, text)?;
    let series: Vec<Series> = Method::ALL
        .iter()
        .map(|&m| Series {
            name: m.to_string(),
            points: rows
                .iter()
                .filter(|r| r.method == m)
                .map(|r| (r.axis_value as f64, r.corr0))
                .collect(),
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    fs::write(
        svg_path,
        line_chart(&format!("Exact Corr versus {axis}"), axis.as_str(), "Corr (r = 0)", &series),
    )?;
    Ok(())
}
