//! Rotary position angles over the (frame, row, col) token grid.
//!
//! Each head dimension is partitioned into three even-sized blocks, one per
//! axis. Pair `i` of an axis block with `dim` dimensions rotates by
//! `pos * base^(-2i/dim)`, so query/key dot products depend only on position
//! differences along each axis.

use std::rc::Rc;

use super::tokens::PositionId;

/// Angle table for `Tape::rope`: token-major, `head_dim/2` entries per token,
/// laid out [frame pairs | row pairs | col pairs].
pub fn rope_angles(positions: &[PositionId], split: [usize; 3], base: f64) -> Rc<Vec<f64>> {
    assert!(split.iter().all(|&s| s > 0 && s % 2 == 0), "rope axis dims must be even");
    assert!(base > 1.0, "rope base must exceed 1");
    let half = split.iter().sum::<usize>() / 2;
    let mut out = Vec::with_capacity(positions.len() * half);
    for p in positions {
        for (axis, &dim) in split.iter().enumerate() {
            let pos = match axis {
                0 => p.frame,
                1 => p.row,
                _ => p.col,
            } as f64;
            for i in 0..dim / 2 {
                out.push(pos * base.powf(-((2 * i) as f64) / dim as f64));
            }
        }
    }
    Rc::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Tape, Tensor};

    #[test]
    fn angle_table_layout_follows_the_axis_split() {
        let positions = [
            PositionId { frame: 0, row: 0, col: 0 },
            PositionId { frame: 1, row: 2, col: 3 },
        ];
        let table = rope_angles(&positions, [4, 2, 2], 10.0);
        assert_eq!(table.len(), 8);
        assert_eq!(&table[0..4], &[0.0, 0.0, 0.0, 0.0]);
        assert!((table[4] - 1.0).abs() < 1e-15);
        assert!((table[5] - 10f64.powf(-0.5)).abs() < 1e-15);
        assert!((table[6] - 2.0).abs() < 1e-15);
        assert!((table[7] - 3.0).abs() < 1e-15);
    }

    /// Rotated dot products must be invariant to a rigid shift of all token
    /// positions along every axis at once.
    #[test]
    fn pairwise_dots_depend_only_on_position_differences() {
        let split = [4, 2, 2];
        let d: usize = split.iter().sum();
        let positions: Vec<PositionId> = (0..6)
            .map(|i| PositionId { frame: i % 3, row: (i * 2) % 5, col: (i * 3) % 4 })
            .collect();
        let shifted: Vec<PositionId> = positions
            .iter()
            .map(|p| PositionId { frame: p.frame + 5, row: p.row + 7, col: p.col + 11 })
            .collect();
        let n = positions.len();
        let vals: Vec<f64> = (0..2 * n * d).map(|i| ((i * 37 + 11) % 19) as f64 / 7.0 - 1.2).collect();
        let (qv, kv) = vals.split_at(n * d);

        let dots = |table: Rc<Vec<f64>>| -> Vec<f64> {
            let mut tape = Tape::new();
            let q = tape.leaf(Tensor::from_vec(vec![1, n, d], qv.to_vec()));
            let k = tape.leaf(Tensor::from_vec(vec![1, n, d], kv.to_vec()));
            let qr = tape.rope(q, table.clone());
            let kr = tape.rope(k, table);
            let (qd, kd) = (tape.value(qr).data().to_vec(), tape.value(kr).data().to_vec());
            let mut out = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    out.push(
                        (0..d).map(|c| qd[i * d + c] * kd[j * d + c]).sum::<f64>(),
                    );
                }
            }
            out
        };

        let base_dots = dots(rope_angles(&positions, split, 100.0));
        let shifted_dots = dots(rope_angles(&shifted, split, 100.0));
        for (a, b) in base_dots.iter().zip(&shifted_dots) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn origin_tokens_are_left_unrotated() {
        let positions = [PositionId { frame: 0, row: 0, col: 0 }];
        let table = rope_angles(&positions, [12, 10, 10], 10000.0);
        assert!(table.iter().all(|&a| a == 0.0));
    }
}
