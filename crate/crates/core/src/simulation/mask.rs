//! Classification-loss mask for partially labeled images.
//!
//! A heatmap cell contributes to the loss only if it holds a labeled
//! ground-truth positive and does not fall inside the 2D box of a predicted
//! object that is still unlabeled.

use crate::error::{Error, Result};
use crate::model::Box2D;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskGrid {
    pub width: usize,
    pub height: usize,
    /// Row-major, `values[y * width + x]`, each 0 or 1.
    pub values: Vec<u8>,
}

impl MaskGrid {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// Builds the mask. `gt_cells` are `(x, y)` cells of labeled ground-truth
/// centers and `unlabeled_boxes` are in cell units; a cell lies inside a box
/// when its center `(x + 0.5, y + 0.5)` does (edges inclusive).
pub fn build_class_mask(
    width: usize,
    height: usize,
    gt_cells: &[(usize, usize)],
    unlabeled_boxes: &[Box2D],
) -> MaskGrid {
    let mut values = vec![0u8; width * height];
    for &(x, y) in gt_cells {
        if x < width && y < height {
            values[y * width + x] = 1;
        }
    }
    for b in unlabeled_boxes {
        let (x0, y0, x1, y1) = b.corners();
        for y in 0..height {
            let cy = y as f64 + 0.5;
            if cy < y0 || cy > y1 {
                continue;
            }
            for x in 0..width {
                let cx = x as f64 + 0.5;
                if cx >= x0 && cx <= x1 {
                    values[y * width + x] = 0;
                }
            }
        }
    }
    MaskGrid {
        width,
        height,
        values,
    }
}

/// `sum_c sum_cells mask * loss_fn(pred, gt)`. `pred` and `gt` hold one
/// row-major grid per class.
pub fn masked_pointwise_loss<F: Fn(f64, f64) -> f64>(
    pred: &[Vec<f64>],
    gt: &[Vec<f64>],
    mask: &MaskGrid,
    loss_fn: F,
) -> Result<f64> {
    let cells = mask.width * mask.height;
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted class grids vs {} ground-truth grids",
            pred.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    for (c, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != cells || g.len() != cells {
            return Err(Error::InvalidArgument(format!(
                "class {c}: grids of {} and {} cells against a {}x{} mask",
                p.len(),
                g.len(),
                mask.width,
                mask.height
            )));
        }
        for ((&m, &pv), &gv) in mask.values.iter().zip(p).zip(g) {
            if m == 1 {
                total += loss_fn(pv, gv);
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(a: f64, b: f64) -> f64 {
        (a - b) * (a - b)
    }

    #[test]
    fn mask_examples() {
        let empty = build_class_mask(4, 3, &[], &[]);
        assert_eq!(empty.count_ones(), 0);

        let one = build_class_mask(4, 3, &[(2, 1)], &[]);
        assert_eq!(one.count_ones(), 1);
        assert_eq!(one.get(2, 1), 1);

        // box covering cells 1..=3 on both axes contains the GT cell (2, 2)
        let covered = build_class_mask(5, 5, &[(2, 2), (0, 4)], &[Box2D::new(2.5, 2.5, 2.0, 2.0)]);
        assert_eq!(covered.get(2, 2), 0);
        assert_eq!(covered.get(0, 4), 1);
        assert_eq!(covered.count_ones(), 1);
    }

    #[test]
    fn loss_examples() {
        let zero_mask = MaskGrid {
            width: 2,
            height: 1,
            values: vec![0, 0],
        };
        let pred = vec![vec![0.3, 0.9]];
        let gt = vec![vec![1.0, 0.0]];
        assert_eq!(
            masked_pointwise_loss(&pred, &gt, &zero_mask, sq).unwrap(),
            0.0
        );

        let ones = MaskGrid {
            width: 2,
            height: 1,
            values: vec![1, 1],
        };
        assert_eq!(masked_pointwise_loss(&gt, &gt, &ones, sq).unwrap(), 0.0);

        let single = MaskGrid {
            width: 2,
            height: 1,
            values: vec![1, 0],
        };
        let pred = vec![vec![0.6, 0.2]];
        let loss = masked_pointwise_loss(&pred, &gt, &single, sq).unwrap();
        assert!((loss - 0.16).abs() < 1e-15);
    }

    #[test]
    fn loss_sums_over_classes_and_checks_shapes() {
        let m = MaskGrid {
            width: 1,
            height: 2,
            values: vec![1, 1],
        };
        let pred = vec![vec![0.5, 0.5], vec![0.0, 1.0]];
        let gt = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        assert!((masked_pointwise_loss(&pred, &gt, &m, sq).unwrap() - 1.5).abs() < 1e-15);
        assert!(masked_pointwise_loss(&pred[..1], &gt, &m, sq).is_err());
        assert!(masked_pointwise_loss(&[vec![1.0]], &[vec![1.0]], &m, sq).is_err());
    }
}
