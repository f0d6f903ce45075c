//! Pairwise match cost and exact bipartite assignment.
//!
//! Rows of the cost matrix are candidate predictions (empty-query slots),
//! columns are new-born ground truths; rows must cover every column, so
//! `rows >= cols` is required. Matching uses the linear class probability
//! `-p_hat` (the training loss uses `-log p_hat` instead; the asymmetry is
//! intentional and mirrors how the matching and loss terms are defined).

use crate::error::{Error, Result};
use crate::geometry::{angle_loss, box_l1, giou, RotatedBox};
use crate::losses::LossWeights;
use crate::scalar::Scalar;

/// One candidate prediction entering the matching.
#[derive(Debug, Clone)]
pub struct MatchPred<S: Scalar = f64> {
    /// Text-class probability in [0, 1].
    pub score: S,
    pub bbox: RotatedBox<S>,
}

/// One new-born ground truth entering the matching.
#[derive(Debug, Clone)]
pub struct MatchGt<S: Scalar = f64> {
    pub bbox: RotatedBox<S>,
}

/// Finite rows-by-cols cost table.
#[derive(Debug, Clone)]
pub struct CostMatrix<S: Scalar = f64> {
    rows: usize,
    cols: usize,
    entries: Vec<S>,
}

impl<S: Scalar> CostMatrix<S> {
    pub fn new(rows: usize, cols: usize, entries: Vec<S>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "CostMatrix",
                lhs: vec![rows, cols],
                rhs: vec![entries.len()],
            });
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("cost matrix entry".into()));
        }
        Ok(CostMatrix {
            rows,
            cols,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn at(&self, row: usize, col: usize) -> S {
        self.entries[row * self.cols + col]
    }
}

/// Injective map from ground-truth columns to prediction rows, with the sum
/// of the mapped entries.
#[derive(Debug, Clone)]
pub struct Assignment<S: Scalar = f64> {
    rows: usize,
    row_for_col: Vec<usize>,
    pub total_cost: S,
}

impl<S: Scalar> Assignment<S> {
    /// Number of prediction rows the assignment was solved over.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Prediction row assigned to ground-truth column `col`.
    pub fn pred_for_gt(&self, col: usize) -> usize {
        self.row_for_col[col]
    }

    /// `(prediction row, ground-truth column)` pairs in column order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_for_col.iter().copied().zip(0..).map(|(r, c)| (r, c))
    }

    /// Per-prediction view: ground-truth column of each row, if assigned.
    pub fn gt_for_pred(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.rows];
        for (c, &r) in self.row_for_col.iter().enumerate() {
            out[r] = Some(c);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.row_for_col.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_for_col.is_empty()
    }
}

/// Pairwise matching cost
/// `-p_hat + lambda_iou (1 - giou) + lambda_l1 |b - b_hat|_1 + lambda_angle (1 - cos(da))`.
pub fn match_cost<S: Scalar>(pred: &MatchPred<S>, gt: &MatchGt<S>, weights: &LossWeights) -> S {
    let w_iou = S::lit(weights.lambda_iou);
    let w_l1 = S::lit(weights.lambda_l1);
    let w_angle = S::lit(weights.lambda_angle);
    -pred.score
        + w_iou * (S::one() - giou(&pred.bbox, &gt.bbox))
        + w_l1 * box_l1(&pred.bbox, &gt.bbox)
        + w_angle * angle_loss(gt.bbox.theta(), pred.bbox.theta())
}

/// Full cost table; errors when ground truths outnumber available slots
/// because no injective cover can exist.
pub fn build_cost_matrix<S: Scalar>(
    preds: &[MatchPred<S>],
    gts: &[MatchGt<S>],
    weights: &LossWeights,
) -> Result<CostMatrix<S>> {
    if !gts.is_empty() && preds.is_empty() {
        return Err(Error::Capacity(format!(
            "{} ground truths but no candidate predictions",
            gts.len()
        )));
    }
    let mut entries = Vec::with_capacity(preds.len() * gts.len());
    for pred in preds {
        for gt in gts {
            entries.push(match_cost(pred, gt, weights));
        }
    }
    CostMatrix::new(preds.len(), gts.len(), entries)
}

/// Exact minimum-cost assignment covering every column, via shortest
/// augmenting paths over dual potentials (O(rows * cols^2) here, which is
/// plenty below a hundred queries).
pub fn hungarian_solve<S: Scalar>(costs: &CostMatrix<S>) -> Result<Assignment<S>> {
    let (rows, cols) = (costs.rows, costs.cols);
    if rows < cols {
        return Err(Error::Capacity(format!(
            "assignment needs rows >= cols, got {rows} x {cols}"
        )));
    }
    if cols == 0 {
        return Ok(Assignment {
            rows,
            row_for_col: Vec::new(),
            total_cost: S::zero(),
        });
    }

    // jobs = columns, workers = rows; workers index `rows` is the sentinel.
    let sentinel = rows;
    let mut job_of: Vec<Option<usize>> = vec![None; rows + 1];
    let mut ys = vec![S::zero(); cols];
    let mut yt = vec![S::zero(); rows + 1];
    for job in 0..cols {
        let mut w_curr = sentinel;
        job_of[w_curr] = Some(job);
        let mut min_to = vec![S::infinity(); rows + 1];
        let mut prv: Vec<Option<usize>> = vec![None; rows + 1];
        let mut in_tree = vec![false; rows + 1];
        while let Some(j) = job_of[w_curr] {
            in_tree[w_curr] = true;
            let mut delta = S::infinity();
            let mut w_next = sentinel;
            for w in 0..rows {
                if !in_tree[w] {
                    let reduced = costs.at(w, j) - ys[j] - yt[w];
                    if reduced < min_to[w] {
                        min_to[w] = reduced;
                        prv[w] = Some(w_curr);
                    }
                    if min_to[w] < delta {
                        delta = min_to[w];
                        w_next = w;
                    }
                }
            }
            for w in 0..=rows {
                if in_tree[w] {
                    ys[job_of[w].expect("tree workers carry a job")] += delta;
                    yt[w] -= delta;
                } else {
                    min_to[w] -= delta;
                }
            }
            w_curr = w_next;
        }
        while w_curr != sentinel {
            let w_prev = prv[w_curr].expect("augmenting path is connected");
            job_of[w_curr] = job_of[w_prev];
            w_curr = w_prev;
        }
    }

    let mut row_for_col = vec![usize::MAX; cols];
    for w in 0..rows {
        if let Some(j) = job_of[w] {
            row_for_col[j] = w;
        }
    }
    debug_assert!(row_for_col.iter().all(|&r| r != usize::MAX));

    prefer_low_rows(costs, &mut row_for_col);

    let total_cost = row_for_col
        .iter()
        .enumerate()
        .map(|(c, &r)| costs.at(r, c))
        .sum();
    Ok(Assignment {
        rows,
        row_for_col,
        total_cost,
    })
}

/// Exchanges that keep the total bit-identical but move earlier columns onto
/// lower prediction rows, so exact ties resolve to the lowest index.
fn prefer_low_rows<S: Scalar>(costs: &CostMatrix<S>, row_for_col: &mut [usize]) {
    let cols = row_for_col.len();
    let mut col_of_row: Vec<Option<usize>> = vec![None; costs.rows];
    for (c, &r) in row_for_col.iter().enumerate() {
        col_of_row[r] = Some(c);
    }
    for _ in 0..cols.max(1) {
        let mut changed = false;
        for c1 in 0..cols {
            let r1 = row_for_col[c1];
            for r2 in 0..r1 {
                match col_of_row[r2] {
                    None => {
                        if costs.at(r2, c1) == costs.at(r1, c1) {
                            row_for_col[c1] = r2;
                            col_of_row[r2] = Some(c1);
                            col_of_row[r1] = None;
                            changed = true;
                            break;
                        }
                    }
                    Some(c2) if c2 > c1 => {
                        let keep = costs.at(r1, c1) + costs.at(r2, c2);
                        let swap = costs.at(r2, c1) + costs.at(r1, c2);
                        if keep == swap {
                            row_for_col[c1] = r2;
                            row_for_col[c2] = r1;
                            col_of_row[r2] = Some(c1);
                            col_of_row[r1] = Some(c2);
                            changed = true;
                            break;
                        }
                    }
                    _ => {}
                }
            }
        }
        if !changed {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossWeights;
    use rand::{Rng, SeedableRng};

    fn rb(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> RotatedBox<f64> {
        RotatedBox::new(cx, cy, w, h, theta).unwrap()
    }

    /// Exhaustive minimum over all injective column-to-row maps; iteration
    /// order makes the first optimum the lexicographically smallest one.
    fn brute_force(costs: &CostMatrix<f64>) -> (Vec<usize>, f64) {
        fn rec(
            costs: &CostMatrix<f64>,
            col: usize,
            used: &mut Vec<bool>,
            current: &mut Vec<usize>,
            acc: f64,
            best: &mut Option<(Vec<usize>, f64)>,
        ) {
            if col == costs.cols() {
                if best.as_ref().map_or(true, |(_, b)| acc < *b) {
                    *best = Some((current.clone(), acc));
                }
                return;
            }
            for row in 0..costs.rows() {
                if !used[row] {
                    used[row] = true;
                    current.push(row);
                    rec(costs, col + 1, used, current, acc + costs.at(row, col), best);
                    current.pop();
                    used[row] = false;
                }
            }
        }
        let mut best = None;
        rec(
            costs,
            0,
            &mut vec![false; costs.rows()],
            &mut Vec::new(),
            0.0,
            &mut best,
        );
        best.expect("rows >= cols")
    }

    #[test]
    fn worked_2x2_example() {
        let costs = CostMatrix::new(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        let a = hungarian_solve(&costs).unwrap();
        assert_eq!(a.pred_for_gt(0), 1);
        assert_eq!(a.pred_for_gt(1), 0);
        assert_eq!(a.total_cost, 4.0);
    }

    #[test]
    fn diagonal_dominant_prefers_identity() {
        let n = 5;
        let mut entries = vec![10.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 0.0;
        }
        let a = hungarian_solve(&CostMatrix::new(n, n, entries).unwrap()).unwrap();
        for c in 0..n {
            assert_eq!(a.pred_for_gt(c), c);
        }
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn all_equal_costs_pick_lowest_prediction_indices() {
        let costs = CostMatrix::new(4, 2, vec![3.0; 8]).unwrap();
        let a = hungarian_solve(&costs).unwrap();
        assert_eq!(a.pred_for_gt(0), 0);
        assert_eq!(a.pred_for_gt(1), 1);
    }

    #[test]
    fn rows_less_than_cols_is_capacity_error() {
        let costs = CostMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            hungarian_solve(&costs).unwrap_err(),
            Error::Capacity(_)
        ));
    }

    #[test]
    fn non_finite_costs_rejected() {
        assert!(matches!(
            CostMatrix::new(1, 1, vec![f64::NAN]).unwrap_err(),
            Error::NonFinite(_)
        ));
    }

    #[test]
    fn random_matrices_match_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let cols = rng.gen_range(1..=7usize);
            let rows = rng.gen_range(cols..=7usize);
            let entries: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let costs = CostMatrix::new(rows, cols, entries).unwrap();
            let a = hungarian_solve(&costs).unwrap();
            let (_, best) = brute_force(&costs);
            assert_eq!(a.total_cost, best, "totals must agree exactly");
        }
    }

    #[test]
    fn column_shift_moves_total_by_exactly_the_shift() {
        // dyadic entries keep every float sum exact
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let cols = rng.gen_range(1..=5usize);
            let rows = rng.gen_range(cols..=6usize);
            let entries: Vec<f64> = (0..rows * cols)
                .map(|_| rng.gen_range(-200i32..200) as f64 / 64.0)
                .collect();
            let costs = CostMatrix::new(rows, cols, entries.clone()).unwrap();
            let shift = rng.gen_range(-8i32..8) as f64 / 4.0;
            let target_col = rng.gen_range(0..cols);
            let mut shifted = entries;
            for r in 0..rows {
                shifted[r * cols + target_col] += shift;
            }
            let costs2 = CostMatrix::new(rows, cols, shifted).unwrap();
            let t1 = hungarian_solve(&costs).unwrap().total_cost;
            let t2 = hungarian_solve(&costs2).unwrap().total_cost;
            assert_eq!(t2, t1 + shift);
        }
    }

    #[test]
    fn match_cost_examples() {
        let w = LossWeights::default();
        let gt = MatchGt {
            bbox: rb(0.5, 0.5, 0.3, 0.1, 0.2),
        };
        let perfect = MatchPred {
            score: 1.0,
            bbox: gt.bbox,
        };
        assert!((match_cost(&perfect, &gt, &w) + 1.0).abs() < 1e-12);

        let gt0 = MatchGt {
            bbox: rb(0.5, 0.5, 0.3, 0.1, 0.0),
        };
        let off_angle = MatchPred {
            score: 1.0,
            bbox: rb(0.5, 0.5, 0.3, 0.1, std::f64::consts::FRAC_PI_2),
        };
        assert!(match_cost(&off_angle, &gt0, &w).abs() < 1e-12);

        // the literal arithmetic of the derived example
        let formula = |p: f64, g: f64, l1: f64, da: f64| {
            -p + w.lambda_iou * (1.0 - g) + w.lambda_l1 * l1 + w.lambda_angle * (1.0 - da.cos())
        };
        assert!((formula(0.5, 0.5, 0.1, 0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn match_cost_agrees_with_independent_recomposition() {
        use crate::geometry::{angle_loss, box_l1, giou};
        let w = LossWeights::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let pred = MatchPred {
                score: rng.gen_range(0.0..1.0),
                bbox: rb(
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.05..0.4),
                    rng.gen_range(0.05..0.4),
                    rng.gen_range(-1.5..1.5),
                ),
            };
            let gt = MatchGt {
                bbox: rb(
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.05..0.4),
                    rng.gen_range(0.05..0.4),
                    rng.gen_range(-1.5..1.5),
                ),
            };
            let expected = -pred.score
                + w.lambda_iou * (1.0 - giou(&pred.bbox, &gt.bbox))
                + w.lambda_l1 * box_l1(&pred.bbox, &gt.bbox)
                + w.lambda_angle * angle_loss(gt.bbox.theta(), pred.bbox.theta());
            assert_eq!(match_cost(&pred, &gt, &w), expected);
        }
    }

    #[test]
    fn perfect_prediction_beats_any_imperfect_one() {
        let w = LossWeights::default();
        let gt = MatchGt {
            bbox: rb(0.4, 0.6, 0.25, 0.1, 0.3),
        };
        let perfect = MatchPred {
            score: 1.0,
            bbox: gt.bbox,
        };
        let best = match_cost(&perfect, &gt, &w);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let other = MatchPred {
                score: rng.gen_range(0.0..1.0 - 1e-9),
                bbox: rb(
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.1..0.9),
                    rng.gen_range(0.05..0.5),
                    rng.gen_range(0.05..0.5),
                    rng.gen_range(-1.5..1.5),
                ),
            };
            assert!(match_cost(&other, &gt, &w) > best);
        }
    }

    #[test]
    fn build_cost_matrix_contract() {
        let w = LossWeights::default();
        let gt = MatchGt {
            bbox: rb(0.5, 0.5, 0.2, 0.1, 0.0),
        };
        let pred = MatchPred {
            score: 0.7,
            bbox: rb(0.45, 0.5, 0.2, 0.1, 0.1),
        };

        let empty = build_cost_matrix::<f64>(&[pred.clone()], &[], &w).unwrap();
        assert_eq!(empty.cols(), 0);
        assert!(hungarian_solve(&empty).unwrap().is_empty());

        let one = build_cost_matrix(&[pred.clone()], &[gt.clone()], &w).unwrap();
        assert_eq!(one.at(0, 0), match_cost(&pred, &gt, &w));

        assert!(matches!(
            build_cost_matrix::<f64>(&[], &[gt.clone()], &w).unwrap_err(),
            Error::Capacity(_)
        ));

        // 3 preds x 2 gts: every cell equals an independent recomputation
        let preds: Vec<_> = (0..3)
            .map(|i| MatchPred {
                score: 0.2 * i as f64,
                bbox: rb(0.3 + 0.1 * i as f64, 0.5, 0.2, 0.1, 0.05 * i as f64),
            })
            .collect();
        let gts = vec![
            MatchGt {
                bbox: rb(0.35, 0.5, 0.2, 0.1, 0.0),
            },
            MatchGt {
                bbox: rb(0.6, 0.4, 0.25, 0.12, -0.2),
            },
        ];
        let m = build_cost_matrix(&preds, &gts, &w).unwrap();
        for (i, p) in preds.iter().enumerate() {
            for (j, g) in gts.iter().enumerate() {
                assert_eq!(m.at(i, j), match_cost(p, g, &w));
            }
        }
    }
}
