use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::skg::Triplet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
    Depth,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Horizontal, Axis::Vertical, Axis::Depth];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Consistency {
    Consistent,
    /// A directed cycle on one axis; the witness lists its triplets in
    /// cycle order.
    Contradiction { axis: Axis, witness: Vec<Triplet> },
}

impl Consistency {
    pub fn is_consistent(&self) -> bool {
        matches!(self, Consistency::Consistent)
    }
}

/// Necessary-condition check: each axis's ordering graph must be acyclic.
///
/// Edges point along the axis (left→right, top→bottom, back→front), so
/// `a right_of b` contributes the edge `b → a`. Metric infeasibility is left
/// to the layout solver. A single spec cannot carry both `near` and `far`
/// since canonicalization rejects such phrases.
pub fn check_consistency(triplets: &[Triplet]) -> Consistency {
    for axis in Axis::ALL {
        if let Some(witness) = find_cycle(triplets, axis) {
            return Consistency::Contradiction { axis, witness };
        }
    }
    Consistency::Consistent
}

fn find_cycle<'a>(triplets: &'a [Triplet], axis: Axis) -> Option<Vec<Triplet>> {
    let mut index: HashMap<&'a str, usize> = HashMap::new();
    // adjacency: node -> [(target, triplet index)]
    let mut adj: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut id_of = |s: &'a str, adj: &mut Vec<Vec<(usize, usize)>>| -> usize {
        *index.entry(s).or_insert_with(|| {
            adj.push(Vec::new());
            adj.len() - 1
        })
    };
    for (ti, t) in triplets.iter().enumerate() {
        let Some(d) = t.relation.direction else { continue };
        if d.axis() != axis {
            continue;
        }
        let (from, to) = if d.is_forward() {
            (t.subject.as_str(), t.object.as_str())
        } else {
            (t.object.as_str(), t.subject.as_str())
        };
        let f = id_of(from, &mut adj);
        let g = id_of(to, &mut adj);
        adj[f].push((g, ti));
    }

    // iterative three-color DFS; the parent-edge stack yields the witness
    let n = adj.len();
    let mut color = vec![0u8; n];
    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        let mut path_edges: Vec<usize> = Vec::new();
        color[root] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < adj[v].len() {
                let (w, ti) = adj[v][*next];
                *next += 1;
                match color[w] {
                    0 => {
                        color[w] = 1;
                        path_edges.push(ti);
                        stack.push((w, 0));
                    }
                    1 => {
                        // back edge closes a cycle starting at w
                        let start = stack.iter().position(|&(u, _)| u == w).expect("on stack");
                        let mut cycle: Vec<Triplet> =
                            path_edges[start..].iter().map(|&i| triplets[i].clone()).collect();
                        cycle.push(triplets[ti].clone());
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                color[v] = 2;
                stack.pop();
                path_edges.pop();
            }
        }
    }
    None
}
