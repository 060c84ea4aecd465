use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::metric::corr_curve;
use super::svg::{line_chart, Series};
use crate::baselines::{nn_match, nndr_match, row_argmax, sinkhorn, SinkhornConfig, DEFAULT_NNDR_RATIO};
use crate::data::PairSample;
use crate::error::{Error, Result};
use crate::graph::{pairwise_similarity, FeatureSet};
use crate::model::Esfw;
use crate::nn::{Mode, Tape};
use crate::weaving::predict_matches;

pub const DEFAULT_RADII: [f64; 7] = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06];
const EVAL_CHUNK: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Esfw,
    /// Sinkhorn on the encoder features, decoded by row argmax.
    Sinkhorn,
    /// Nearest neighbor on the encoder features.
    Nn,
    /// Ratio test on the encoder features.
    Nndr,
    /// Nearest neighbor on normalized coordinates, without any learned
    /// features.
    NnRaw,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Esfw, Method::Sinkhorn, Method::Nn, Method::Nndr, Method::NnRaw];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Esfw => "esfw",
            Method::Sinkhorn => "sinkhorn",
            Method::Nn => "nn",
            Method::Nndr => "nndr",
            Method::NnRaw => "nn-raw",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Predicted B index per A point for every method, on one pair.
#[derive(Clone, Debug)]
pub struct PairPredictions {
    pub by_method: Vec<(Method, Vec<Option<usize>>)>,
}

impl PairPredictions {
    pub fn get(&self, method: Method) -> &[Option<usize>] {
        &self
            .by_method
            .iter()
            .find(|(m, _)| *m == method)
            .expect("every method is predicted")
            .1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalCurve {
    pub method: Method,
    pub radii: Vec<f64>,
    pub corr: Vec<f64>,
    pub samples: usize,
}

impl EvalCurve {
    pub fn is_monotone(&self) -> bool {
        self.corr.windows(2).all(|w| w[1] >= w[0]) && self.corr.iter().all(|c| (0.0..=1.0).contains(c))
    }
}

fn baseline_predictions(fa: &FeatureSet, fb: &FeatureSet, pair: &PairSample) -> Result<Vec<(Method, Vec<Option<usize>>)>> {
    let s = pairwise_similarity(fa, fb)?;
    let sk = sinkhorn(&s, &SinkhornConfig::default())?;
    if !sk.deviations_monotone() {
        log::debug!("sinkhorn marginal deviations were not monotone on this pair");
    }
    let raw_a = FeatureSet::new(pair.cloud_a.normalized().positions().clone())?;
    let raw_b = FeatureSet::new(pair.cloud_b.normalized().positions().clone())?;
    let some = |v: Vec<usize>| v.into_iter().map(Some).collect::<Vec<_>>();
    Ok(vec![
        (Method::Sinkhorn, some(row_argmax(&sk.values))),
        (Method::Nn, some(nn_match(fa, fb)?)),
        (Method::Nndr, nndr_match(fa, fb, DEFAULT_NNDR_RATIO)?),
        (Method::NnRaw, some(nn_match(&raw_a, &raw_b)?)),
    ])
}

/// Runs every method on one pair with the model in eval mode.
pub fn evaluate_pair(model: &mut Esfw, pair: &PairSample) -> Result<PairPredictions> {
    Ok(predict_chunk(model, std::slice::from_ref(pair))?.remove(0))
}

fn predict_chunk(model: &mut Esfw, pairs: &[PairSample]) -> Result<Vec<PairPredictions>> {
    let mut tape = Tape::new();
    let refs: Vec<_> = pairs.iter().map(|p| (&p.cloud_a, &p.cloud_b)).collect();
    let out = model.forward_clouds(&mut tape, &refs, Mode::Eval)?;
    let features = tape.value(out.features);
    let mut result = Vec::with_capacity(pairs.len());
    for ((pair, scores), slot) in pairs.iter().zip(out.score_matrices(&tape)).zip(out.topology.slots()) {
        let (n, m) = (pair.cloud_a.len(), pair.cloud_b.len());
        let a_rows: Vec<usize> = (slot.a_node_offset..slot.a_node_offset + n).collect();
        let b_rows: Vec<usize> = (slot.b_node_offset..slot.b_node_offset + m).collect();
        let fa = FeatureSet::new(features.select_rows(&a_rows))?;
        let fb = FeatureSet::new(features.select_rows(&b_rows))?;
        let mut by_method = vec![(Method::Esfw, predict_matches(&scores))];
        by_method.extend(baseline_predictions(&fa, &fb, pair)?);
        result.push(PairPredictions { by_method });
    }
    Ok(result)
}

/// Corr curves of every method averaged over `pairs`. All matchers see the
/// same eval-mode encoder features.
pub fn evaluate(model: &mut Esfw, pairs: &[PairSample], radii: &[f64]) -> Result<Vec<EvalCurve>> {
    if pairs.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    if radii.is_empty() || radii.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("radii must be non-empty and sorted ascending".into()));
    }
    let mut sums = vec![vec![0.0; radii.len()]; Method::ALL.len()];
    for chunk in pairs.chunks(EVAL_CHUNK) {
        for (pair, preds) in chunk.iter().zip(predict_chunk(model, chunk)?) {
            for (k, method) in Method::ALL.iter().enumerate() {
                let c = corr_curve(preds.get(*method), &pair.gt, &pair.cloud_a, &pair.cloud_b, radii)?;
                for (s, v) in sums[k].iter_mut().zip(c) {
                    *s += v;
                }
            }
        }
    }
    let curves: Vec<EvalCurve> = Method::ALL
        .iter()
        .zip(sums)
        .map(|(&method, s)| EvalCurve {
            method,
            radii: radii.to_vec(),
            corr: s.into_iter().map(|v| v / pairs.len() as f64).collect(),
            samples: pairs.len(),
        })
        .collect();
    if let Some(bad) = curves.iter().find(|c| !c.is_monotone()) {
        return Err(Error::Contract(format!("{} curve is not monotone: {:?}", bad.method, bad.corr)));
    }
    Ok(curves)
}

/// CSV `radius,method,corr` plus an SVG chart next to it.
pub fn write_curves_csv(csv_path: &Path, svg_path: &Path, curves: &[EvalCurve]) -> Result<()> {
    let mut text = String::from("radius,method,corr\n");
    for c in curves {
        for (r, v) in c.radii.iter().zip(&c.corr) {
            text.push_str(&format!("{r},{},{v}\n", c.method));
        }
    }
    fs::write(csv_path, text)?;
    let series: Vec<Series> = curves
        .iter()
        .map(|c| Series {
            name: c.method.to_string(),
            points: c.radii.iter().copied().zip(c.corr.iter().copied()).collect(),
        })
        .collect();
    fs::write(
        svg_path,
        line_chart("Corr under tolerant error", "tolerant error (fraction of dist_max)", "Corr", &series),
    )?;
    Ok(())
}
