use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::{Tape, Var, XentBlock};
use crate::weaving::{NetOutput, ScoreMatrix};

#[derive(Clone, Copy, Debug)]
pub struct LossReport {
    pub loss: Var,
    /// Rows whose ground-truth cell is a valid candidate.
    pub gt_covered: usize,
    pub gt_total: usize,
}

fn check_gt(rows: usize, cols: usize, gt: &[usize]) -> Result<()> {
    if gt.len() != rows || gt.iter().any(|&m| m >= cols) {
        return Err(Error::Structure(format!(
            "ground truth of length {} does not fit a {rows}×{cols} score matrix",
            gt.len()
        )));
    }
    Ok(())
}

/// Number of rows whose ground-truth cell survived candidate selection.
pub fn gt_coverage(p: &ScoreMatrix, gt: &[usize]) -> usize {
    gt.iter().enumerate().filter(|&(n, &m)| p.is_valid(n, m)).count()
}

/// Masked softmax cross-entropy of every pair's scores against its ground
/// truth, averaged over pairs. Rows (and, when `symmetric`, columns) whose
/// target is masked out pay the constant `ln(candidate count)`.
pub fn matching_loss(tape: &mut Tape, output: &NetOutput, gts: &[&[usize]], symmetric: bool) -> Result<LossReport> {
    if gts.len() != output.layouts.len() {
        return Err(Error::Structure(format!(
            "{} ground truths for {} pairs",
            gts.len(),
            output.layouts.len()
        )));
    }
    let mut covered = 0;
    let mut total = 0;
    let mut blocks = Vec::with_capacity(gts.len());
    for (layout, gt) in output.layouts.iter().zip(gts) {
        check_gt(layout.rows, layout.cols, gt)?;
        covered += gt
            .iter()
            .enumerate()
            .filter(|&(n, &m)| layout.mask[n * layout.cols + m])
            .count();
        total += gt.len();
        blocks.push(XentBlock {
            offset: layout.offset,
            rows: layout.rows,
            cols: layout.cols,
            mask: layout.mask.clone(),
            target: gt.to_vec(),
        });
    }
    let loss = tape.masked_softmax_xent(output.cells, Rc::new(blocks), symmetric)?;
    Ok(LossReport {
        loss,
        gt_covered: covered,
        gt_total: total,
    })
}

/// Loss of a single finished score matrix.
pub fn score_matrix_loss(p: &ScoreMatrix, gt: &[usize], symmetric: bool) -> Result<f64> {
    check_gt(p.rows(), p.cols(), gt)?;
    let mut tape = Tape::new();
    let cells = tape.input(p.values.clone().reshape(&[p.rows() * p.cols(), 1])?);
    let block = XentBlock {
        offset: 0,
        rows: p.rows(),
        cols: p.cols(),
        mask: p.mask.clone(),
        target: gt.to_vec(),
    };
    let loss = tape.masked_softmax_xent(cells, Rc::new(vec![block]), symmetric)?;
    Ok(tape.value(loss).data()[0])
}
