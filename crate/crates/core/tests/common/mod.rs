#![allow(dead_code)]

use jcnce::data::TaskDataset;
use proptest::prelude::*;

/// Labeled dataset with every class in `0..k` present.
pub fn dataset_strategy(max_n: usize, max_k: usize, d: usize) -> impl Strategy<Value = TaskDataset> {
    (1..=max_k)
        .prop_flat_map(move |k| (Just(k), k.max(2)..=max_n))
        .prop_flat_map(move |(k, n)| sized_dataset(n, k, d))
}

pub fn sized_dataset(n: usize, k: usize, d: usize) -> impl Strategy<Value = TaskDataset> {
    (
        proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, d), n),
        proptest::collection::vec(0..k, n - k),
    )
        .prop_map(move |(rows, extra)| {
            let labels: Vec<usize> = (0..k).chain(extra).collect();
            TaskDataset::from_rows("t", &rows, &labels).unwrap()
        })
}

/// All permutations of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                prefix.push(j);
                go(prefix, used, out);
                prefix.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// `sum_ab p ln(p / row_sum)` evaluated cell by cell.
pub fn nce_oracle(p: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for row in p {
        let m: f64 = row.iter().sum();
        for &v in row {
            if v > 0.0 {
                s += v * (v / m).ln();
            }
        }
    }
    s
}
