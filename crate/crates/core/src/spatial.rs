//! Infrastructure graphs and spatial contiguity of sub-areas.

use std::collections::{HashMap, VecDeque};

use crate::error::{Result, SccnError};
use crate::model::{Bipartition, InfrastructureGraph, Labeling, VoxelGrid};

/// Default adjacency radius: the 26-neighborhood on a unit grid.
pub const DEFAULT_EPSILON: f64 = 1.732_050_807_568_877_2;

// Distances are compared with a small relative slack so that a radius typed
// as a rounded decimal (1.7320508) still admits the diagonal neighbors.
const EPS_SLACK: f64 = 1e-6;

fn within(d2: i64, epsilon: f64) -> bool {
    (d2 as f64).sqrt() <= epsilon * (1.0 + EPS_SLACK)
}

/// Adjacency graph with an edge for every voxel pair at Euclidean distance
/// at most `epsilon`, built by hashing voxels into integer cells.
pub fn build_infrastructure(grid: &VoxelGrid, epsilon: f64) -> Result<InfrastructureGraph> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(SccnError::InvalidArgument(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    let n = grid.len();
    let cell = (epsilon * (1.0 + EPS_SLACK)).ceil().max(1.0) as i64;
    let key = |c: [i32; 3]| -> [i64; 3] {
        [
            (c[0] as i64).div_euclid(cell),
            (c[1] as i64).div_euclid(cell),
            (c[2] as i64).div_euclid(cell),
        ]
    };
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, v) in grid.voxels.iter().enumerate() {
        buckets.entry(key(v.coords())).or_default().push(i);
    }
    let mut neighbors = vec![Vec::new(); n];
    for (i, v) in grid.voxels.iter().enumerate() {
        let k = key(v.coords());
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    for &j in bucket {
                        if j == i {
                            continue;
                        }
                        let w = grid.voxels[j];
                        let d2 = sq(v.x - w.x) + sq(v.y - w.y) + sq(v.z - w.z);
                        if within(d2, epsilon) {
                            neighbors[i].push(j);
                        }
                    }
                }
            }
        }
    }
    InfrastructureGraph::from_neighbors(epsilon, neighbors)
}

fn sq(v: i32) -> i64 {
    (v as i64) * (v as i64)
}

/// Maximal connected subsets of `subset` under the graph restricted to it,
/// each sorted, ordered by smallest member.
pub fn connected_components(graph: &InfrastructureGraph, subset: &[usize]) -> Vec<Vec<usize>> {
    let mut in_subset = vec![false; graph.n];
    for &i in subset {
        in_subset[i] = true;
    }
    let mut visited = vec![false; graph.n];
    let mut order: Vec<usize> = subset.to_vec();
    order.sort_unstable();
    order.dedup();
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for &start in &order {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            for &j in graph.neighbors(i) {
                if in_subset[j] && !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

pub fn is_contiguous(labeling: &Labeling, graph: &InfrastructureGraph) -> bool {
    labeling
        .classes()
        .iter()
        .all(|members| connected_components(graph, members).len() <= 1)
}

/// Splits every class of one region's labeling into its connected
/// components. The component holding a class's smallest member keeps the
/// class label; further components receive fresh labels in order of class,
/// then smallest member.
pub fn split_noncontiguous(labeling: &Labeling, graph: &InfrastructureGraph) -> Labeling {
    let mut labels = labeling.labels().to_vec();
    let mut next = labeling.k();
    for members in labeling.classes() {
        for comp in connected_components(graph, &members).into_iter().skip(1) {
            for i in comp {
                labels[i] = next;
            }
            next += 1;
        }
    }
    Labeling::new(labels, next).expect("components are nonempty and labels dense")
}

pub fn enforce_contiguity(
    part: &Bipartition,
    sa: &InfrastructureGraph,
    sb: &InfrastructureGraph,
) -> Result<Bipartition> {
    part.validate()?;
    if part.u_labels.len() != sa.n || part.v_labels.len() != sb.n {
        return Err(SccnError::Dimension(format!(
            "partition sizes ({}, {}) vs graphs ({}, {})",
            part.u_labels.len(),
            part.v_labels.len(),
            sa.n,
            sb.n
        )));
    }
    Ok(Bipartition::new(
        split_noncontiguous(&part.u(), sa),
        split_noncontiguous(&part.v(), sb),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Voxel;
    use proptest::prelude::*;

    fn brute_force(grid: &VoxelGrid, epsilon: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..grid.len() {
            for j in i + 1..grid.len() {
                if grid.distance(i, j) <= epsilon * (1.0 + EPS_SLACK) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn grid_of(points: &[(i32, i32, i32)]) -> VoxelGrid {
        let voxels = points
            .iter()
            .enumerate()
            .map(|(k, &(x, y, z))| Voxel { id: k as u32, x, y, z })
            .collect();
        VoxelGrid::new("R", voxels).unwrap()
    }

    #[test]
    fn cube_center_has_26_neighbors() {
        let g = VoxelGrid::box_grid("A", [3, 3, 3]);
        let s = build_infrastructure(&g, DEFAULT_EPSILON).unwrap();
        assert_eq!(s.neighbors(13).len(), 26);
    }

    #[test]
    fn rounded_radius_still_reaches_diagonals() {
        let g = VoxelGrid::box_grid("A", [3, 3, 3]);
        let s = build_infrastructure(&g, 1.7320508).unwrap();
        assert_eq!(s.neighbors(13).len(), 26);
    }

    #[test]
    fn far_voxel_is_isolated() {
        let g = grid_of(&[(0, 0, 0), (1, 0, 0), (5, 5, 5)]);
        let s = build_infrastructure(&g, DEFAULT_EPSILON).unwrap();
        assert_eq!(s.edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn single_voxel_has_no_edges() {
        let g = grid_of(&[(3, 3, 3)]);
        assert_eq!(build_infrastructure(&g, 2.0).unwrap().edge_count(), 0);
    }

    #[test]
    fn nonpositive_epsilon_rejected() {
        let g = grid_of(&[(0, 0, 0)]);
        assert!(build_infrastructure(&g, 0.0).is_err());
    }

    #[test]
    fn components_examples() {
        let g = grid_of(&[(0, 0, 0), (1, 0, 0), (9, 9, 9)]);
        let s = build_infrastructure(&g, 1.0).unwrap();
        assert_eq!(connected_components(&s, &[2, 1, 0]), vec![vec![0, 1], vec![2]]);
        assert!(connected_components(&s, &[]).is_empty());
        let full = InfrastructureGraph::complete(4);
        assert_eq!(connected_components(&full, &[3, 1, 0]), vec![vec![0, 1, 3]]);
    }

    #[test]
    fn contiguous_partition_unchanged() {
        let g = VoxelGrid::box_grid("A", [4, 1, 1]);
        let s = build_infrastructure(&g, 1.0).unwrap();
        let part = Bipartition::from_labels(vec![0, 0, 1, 1], 2, vec![0, 1, 1, 1], 2).unwrap();
        assert_eq!(enforce_contiguity(&part, &s, &s).unwrap(), part);
    }

    #[test]
    fn two_component_class_is_split() {
        let g = VoxelGrid::box_grid("A", [4, 1, 1]);
        let s = build_infrastructure(&g, 1.0).unwrap();
        let part = Bipartition::from_labels(vec![0, 1, 1, 0], 2, vec![0, 0, 0, 0], 1).unwrap();
        let out = enforce_contiguity(&part, &s, &s).unwrap();
        assert_eq!(out.c, 3);
        assert_eq!(out.u_labels, vec![0, 1, 1, 2]);
        assert_eq!(out.d, 1);
    }

    #[test]
    fn edgeless_singletons_each_become_a_class() {
        let s = InfrastructureGraph::edgeless(4);
        let members = [0, 1, 2, 3];
        let expected = connected_components(&s, &members).len();
        let part = Bipartition::from_labels(vec![0; 4], 1, vec![0; 4], 1).unwrap();
        let out = enforce_contiguity(&part, &s, &s).unwrap();
        assert_eq!(out.c, expected);
        assert_eq!(out.c, 4);
        assert_eq!(out.u_labels, vec![0, 1, 2, 3]);
    }

    fn arb_grid() -> impl Strategy<Value = VoxelGrid> {
        prop::collection::hash_set((0i32..6, 0i32..6, 0i32..4), 1..40).prop_map(|set| {
            let mut pts: Vec<_> = set.into_iter().collect();
            pts.sort();
            grid_of(&pts)
        })
    }

    proptest! {
        #[test]
        fn hashing_matches_brute_force(g in arb_grid(), eps in 0.5f64..3.5) {
            let s = build_infrastructure(&g, eps).unwrap();
            prop_assert_eq!(s.edges().collect::<Vec<_>>(), brute_force(&g, eps));
            for (i, j) in s.edges() {
                prop_assert!(s.contains(j, i));
            }
        }

        #[test]
        fn edges_monotone_in_epsilon(g in arb_grid(), e1 in 0.5f64..3.0, extra in 0.0f64..2.0) {
            let small = build_infrastructure(&g, e1).unwrap();
            let large = build_infrastructure(&g, e1 + extra).unwrap();
            for (i, j) in small.edges() {
                prop_assert!(large.contains(i, j));
            }
        }

        #[test]
        fn enforcement_is_contiguous_and_idempotent(
            g in arb_grid(),
            raw in prop::collection::vec(0usize..4, 40),
        ) {
            let s = build_infrastructure(&g, 1.5).unwrap();
            let labels = Labeling::compact(&raw[..g.len()]);
            let part = Bipartition::new(labels.clone(), labels);
            let once = enforce_contiguity(&part, &s, &s).unwrap();
            prop_assert!(is_contiguous(&once.u(), &s));
            prop_assert!(is_contiguous(&once.v(), &s));
            let twice = enforce_contiguity(&once, &s, &s).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
