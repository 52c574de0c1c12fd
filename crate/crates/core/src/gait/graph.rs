//! The COCO17 skeleton graph and its partitioned adjacency matrices.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::skeleton::NUM_JOINTS;
use crate::error::{Error, Result};

/// COCO person-skeleton links, 0-indexed.
pub const COCO_EDGES: [(usize, usize); 19] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

/// Joint whose hop distance defines centripetal/centrifugal neighbors.
pub const CENTER_JOINT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    /// One matrix: `D^-1/2 (A + I) D^-1/2`.
    Uniform,
    /// Self (plus equidistant neighbors), centripetal, centrifugal.
    Distance,
}

impl std::str::FromStr for PartitionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PartitionStrategy::Uniform),
            "distance" | "distance-partitioned" | "spatial" => Ok(PartitionStrategy::Distance),
            other => Err(Error::Config(format!(
                "unknown partition strategy {other:?} (expected uniform or distance)"
            ))),
        }
    }
}

/// Dense `V x V` matrices stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonGraph {
    pub strategy: PartitionStrategy,
    num_joints: usize,
    adjacency: Vec<f64>,
    partitions: Vec<Vec<f64>>,
}

impl SkeletonGraph {
    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    /// Raw 0/1 adjacency without self loops.
    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }

    pub fn partitions(&self) -> &[Vec<f64>] {
        &self.partitions
    }

    pub fn neighbors(&self, joint: usize) -> Vec<usize> {
        let v = self.num_joints;
        (0..v)
            .filter(|&j| self.adjacency[joint * v + j] != 0.0)
            .collect()
    }

    /// `D^-1 (A + I)`.
    pub fn row_normalized(&self) -> Vec<f64> {
        let v = self.num_joints;
        let mut out = self.adjacency.clone();
        for i in 0..v {
            out[i * v + i] += 1.0;
            let deg: f64 = out[i * v..(i + 1) * v].iter().sum();
            out[i * v..(i + 1) * v].iter_mut().for_each(|x| *x /= deg);
        }
        out
    }

    /// Relabels joints: old joint `j` becomes joint `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let v = self.num_joints;
        check_permutation(perm, v)?;
        let relabel = |m: &[f64]| {
            let mut out = vec![0.0; v * v];
            for i in 0..v {
                for j in 0..v {
                    out[perm[i] * v + perm[j]] = m[i * v + j];
                }
            }
            out
        };
        Ok(Self {
            strategy: self.strategy,
            num_joints: v,
            adjacency: relabel(&self.adjacency),
            partitions: self.partitions.iter().map(|p| relabel(p)).collect(),
        })
    }

    /// Nonzero entries of each partition row: `sparse[p][i] = [(j, a_ij)]`.
    pub(crate) fn sparse_partitions(&self) -> Vec<Vec<Vec<(usize, f64)>>> {
        let v = self.num_joints;
        self.partitions
            .iter()
            .map(|p| {
                (0..v)
                    .map(|i| {
                        (0..v)
                            .filter(|&j| p[i * v + j] != 0.0)
                            .map(|j| (j, p[i * v + j]))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::DimensionMismatch {
            context: "joint permutation",
            expected: n,
            actual: perm.len(),
        });
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidValue(format!(
                "{perm:?} is not a permutation"
            )));
        }
    }
    Ok(())
}

fn hop_distances(adjacency: &[f64], v: usize, root: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; v];
    dist[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(i) = queue.pop_front() {
        for j in 0..v {
            if adjacency[i * v + j] != 0.0 && dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    dist
}

pub fn build_adjacency(strategy: PartitionStrategy) -> SkeletonGraph {
    let v = NUM_JOINTS;
    let mut adjacency = vec![0.0; v * v];
    for &(i, j) in &COCO_EDGES {
        adjacency[i * v + j] = 1.0;
        adjacency[j * v + i] = 1.0;
    }
    let degree: Vec<f64> = (0..v)
        .map(|i| 1.0 + adjacency[i * v..(i + 1) * v].iter().sum::<f64>())
        .collect();
    let normalize = |m: &mut Vec<f64>| {
        for i in 0..v {
            for j in 0..v {
                m[i * v + j] /= (degree[i] * degree[j]).sqrt();
            }
        }
    };
    let partitions = match strategy {
        PartitionStrategy::Uniform => {
            let mut m = adjacency.clone();
            (0..v).for_each(|i| m[i * v + i] = 1.0);
            normalize(&mut m);
            vec![m]
        }
        PartitionStrategy::Distance => {
            let hop = hop_distances(&adjacency, v, CENTER_JOINT);
            let mut root = vec![0.0; v * v];
            let mut inward = vec![0.0; v * v];
            let mut outward = vec![0.0; v * v];
            for i in 0..v {
                root[i * v + i] = 1.0;
                for j in 0..v {
                    if adjacency[i * v + j] == 0.0 {
                        continue;
                    }
                    let target = match hop[j].cmp(&hop[i]) {
                        std::cmp::Ordering::Equal => &mut root,
                        std::cmp::Ordering::Less => &mut inward,
                        std::cmp::Ordering::Greater => &mut outward,
                    };
                    target[i * v + j] = 1.0;
                }
            }
            for m in [&mut root, &mut inward, &mut outward] {
                normalize(m);
            }
            vec![root, inward, outward]
        }
    };
    SkeletonGraph {
        strategy,
        num_joints: v,
        adjacency,
        partitions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_adjacency_is_symmetric() {
        let g = build_adjacency(PartitionStrategy::Distance);
        let a = g.adjacency();
        for i in 0..17 {
            for j in 0..17 {
                assert_eq!(a[i * 17 + j], a[j * 17 + i]);
            }
            assert_eq!(a[i * 17 + i], 0.0);
        }
        assert_eq!(a.iter().sum::<f64>(), 2.0 * COCO_EDGES.len() as f64);
    }

    #[test]
    fn left_wrist_has_only_the_elbow() {
        let g = build_adjacency(PartitionStrategy::Uniform);
        assert_eq!(g.neighbors(9), vec![7]);
    }

    #[test]
    fn row_normalized_rows_sum_to_one() {
        let g = build_adjacency(PartitionStrategy::Uniform);
        let m = g.row_normalized();
        for i in 0..17 {
            let s: f64 = m[i * 17..(i + 1) * 17].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn partitions_sum_to_uniform_matrix() {
        let u = build_adjacency(PartitionStrategy::Uniform);
        let d = build_adjacency(PartitionStrategy::Distance);
        assert_eq!(d.partitions().len(), 3);
        for k in 0..17 * 17 {
            let s: f64 = d.partitions().iter().map(|p| p[k]).sum();
            assert!((s - u.partitions()[0][k]).abs() < 1e-15);
        }
        for i in 0..17 {
            assert!(d.partitions()[0][i * 17 + i] > 0.0);
        }
        assert!(d.partitions().iter().flatten().all(|x| x.is_finite()));
    }

    #[test]
    fn unknown_strategy_is_rejected() {
        assert!("radial".parse::<PartitionStrategy>().is_err());
        assert_eq!(
            "uniform".parse::<PartitionStrategy>().unwrap(),
            PartitionStrategy::Uniform
        );
    }

    #[test]
    fn every_joint_is_reachable_from_the_center() {
        let g = build_adjacency(PartitionStrategy::Uniform);
        let hop = hop_distances(g.adjacency(), 17, CENTER_JOINT);
        assert!(hop.iter().all(|&h| h != usize::MAX));
        assert_eq!(hop[15], 6);
    }
}
