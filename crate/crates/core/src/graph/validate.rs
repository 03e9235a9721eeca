use std::collections::HashSet;

use serde::Serialize;

use super::{reachable_from, NavGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EntryOutOfRange { entry: u32 },
    NeighborOutOfRange { vertex: u32, neighbor: u32 },
    SelfLoop { vertex: u32 },
    DuplicateEdge { vertex: u32, neighbor: u32 },
    Unreachable { vertex: u32 },
    /// Out-degree above `2R`, more than reachability repair can explain.
    DegreeExceeded { vertex: u32, degree: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub vertices: usize,
    pub edges: usize,
    pub max_out_degree: usize,
    /// Vertices above the degree bound, i.e. carrying repair edges.
    pub over_degree: Vec<u32>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl NavGraph {
    pub fn validate(&self) -> ValidationReport {
        let n = self.len();
        let mut report = ValidationReport {
            vertices: n,
            edges: self.edge_count(),
            ..Default::default()
        };
        if n == 0 {
            return report;
        }
        if self.entry as usize >= n {
            report.violations.push(Violation::EntryOutOfRange { entry: self.entry });
            return report;
        }
        let mut in_range = true;
        for (v, list) in self.adjacency.iter().enumerate() {
            let v = v as u32;
            report.max_out_degree = report.max_out_degree.max(list.len());
            if list.len() > self.r {
                report.over_degree.push(v);
            }
            if list.len() > 2 * self.r {
                report.violations.push(Violation::DegreeExceeded {
                    vertex: v,
                    degree: list.len(),
                });
            }
            let mut seen = HashSet::with_capacity(list.len());
            for &u in list {
                if u as usize >= n {
                    report.violations.push(Violation::NeighborOutOfRange { vertex: v, neighbor: u });
                    in_range = false;
                } else if u == v {
                    report.violations.push(Violation::SelfLoop { vertex: v });
                } else if !seen.insert(u) {
                    report.violations.push(Violation::DuplicateEdge { vertex: v, neighbor: u });
                }
            }
        }
        if in_range {
            let mut seen = vec![false; n];
            reachable_from(&self.adjacency, self.entry, &mut seen);
            report.violations.extend(
                seen.iter()
                    .enumerate()
                    .filter(|(_, s)| !**s)
                    .map(|(v, _)| Violation::Unreachable { vertex: v as u32 }),
            );
        }
        report
    }
}
