//! The finding ontology: parent→child edges between findings with the
//! derived ancestor/descendant closure, used to decide which findings are
//! excluded from a task's findings-audit design.

use serde::{Deserialize, Serialize};

use super::{FindingName, TaskName, N_FINDINGS};
use crate::error::{Error, Result};

/// The default ontology, shipped as data so it can be corrected without a
/// rebuild (and overridden entirely via a hierarchy file).
const DEFAULT_HIERARCHY_JSON: &str = include_str!("default_hierarchy.json");

#[derive(Serialize, Deserialize)]
struct EdgeFile {
    edges: Vec<(FindingName, FindingName)>,
}

/// An acyclic set of parent→child edges over the 14 findings, with the
/// transitive ancestor/descendant closure precomputed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelHierarchy {
    edges: Vec<(FindingName, FindingName)>,
    /// Bit `j` of `ancestors[i]`: finding `j` is a strict ancestor of `i`.
    ancestors: [u16; N_FINDINGS],
    /// Bit `j` of `descendants[i]`: finding `j` is a strict descendant of `i`.
    descendants: [u16; N_FINDINGS],
}

impl LabelHierarchy {
    /// Build a hierarchy from parent→child edges, rejecting self-edges,
    /// duplicate edges, and cycles.
    pub fn new(edges: Vec<(FindingName, FindingName)>) -> Result<LabelHierarchy> {
        let mut children: [u16; N_FINDINGS] = [0; N_FINDINGS];
        for (i, &(parent, child)) in edges.iter().enumerate() {
            if parent == child {
                return Err(Error::invalid(format!(
                    "hierarchy self-edge '{parent}' -> '{child}'"
                )));
            }
            if edges[..i].contains(&(parent, child)) {
                return Err(Error::invalid(format!(
                    "duplicate hierarchy edge '{parent}' -> '{child}'"
                )));
            }
            children[parent.index()] |= 1 << child.index();
        }

        // Transitive closure of the child relation, then cycle check:
        // a cycle exists exactly when some finding reaches itself.
        let mut descendants = children;
        loop {
            let mut changed = false;
            for i in 0..N_FINDINGS {
                let mut reach = descendants[i];
                let mut rest = descendants[i];
                while rest != 0 {
                    let j = rest.trailing_zeros() as usize;
                    rest &= rest - 1;
                    reach |= descendants[j];
                }
                if reach != descendants[i] {
                    descendants[i] = reach;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for (i, &reach) in descendants.iter().enumerate() {
            if reach & (1 << i) != 0 {
                return Err(Error::invalid(format!(
                    "hierarchy contains a cycle through '{}'",
                    FindingName::ALL[i]
                )));
            }
        }

        let mut ancestors = [0u16; N_FINDINGS];
        for (i, &mask) in descendants.iter().enumerate() {
            let mut rest = mask;
            while rest != 0 {
                let j = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                ancestors[j] |= 1 << i;
            }
        }

        Ok(LabelHierarchy {
            edges,
            ancestors,
            descendants,
        })
    }

    /// No edges: every finding stands alone.
    pub fn empty() -> LabelHierarchy {
        LabelHierarchy::new(Vec::new()).expect("empty edge set is valid")
    }

    /// The standard CheXpert ontology (Lung Opacity over its five
    /// subtypes, Consolidation over Pneumonia, Enlarged Cardiomediastinum
    /// over Cardiomegaly).
    pub fn default_chexpert() -> LabelHierarchy {
        let file: EdgeFile = serde_json::from_str(DEFAULT_HIERARCHY_JSON)
            .expect("embedded default hierarchy parses");
        LabelHierarchy::new(file.edges).expect("embedded default hierarchy is acyclic")
    }

    /// Parse `{"edges": [[parent, child], ...]}` JSON.
    pub fn from_json(json: &str) -> Result<LabelHierarchy> {
        let file: EdgeFile = serde_json::from_str(json)
            .map_err(|e| Error::invalid(format!("hierarchy JSON: {e}")))?;
        LabelHierarchy::new(file.edges)
    }

    pub fn to_json(&self) -> String {
        let file = EdgeFile {
            edges: self.edges.clone(),
        };
        serde_json::to_string_pretty(&file).expect("edge list serializes")
    }

    pub fn edges(&self) -> &[(FindingName, FindingName)] {
        &self.edges
    }

    fn unpack(mask: u16) -> Vec<FindingName> {
        FindingName::ALL
            .into_iter()
            .filter(|f| mask & (1 << f.index()) != 0)
            .collect()
    }

    /// Strict ancestors of `finding` under the transitive closure.
    pub fn ancestors(&self, finding: FindingName) -> Vec<FindingName> {
        Self::unpack(self.ancestors[finding.index()])
    }

    /// Strict descendants of `finding` under the transitive closure.
    pub fn descendants(&self, finding: FindingName) -> Vec<FindingName> {
        Self::unpack(self.descendants[finding.index()])
    }

    /// Findings excluded from a findings-audit design for `task`: the task
    /// disease itself plus its ancestors and descendants, in canonical
    /// finding order.
    pub fn excluded_features(&self, task: TaskName) -> Vec<FindingName> {
        let i = task.finding().index();
        Self::unpack(self.ancestors[i] | self.descendants[i] | (1 << i))
    }
}
