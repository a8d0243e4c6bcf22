//! Label hierarchy as a DAG with parent lookup.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub type LabelId = u32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelHierarchy {
    names: Vec<String>,
    index: HashMap<String, LabelId>,
    parents: Vec<Vec<LabelId>>,
    children: Vec<Vec<LabelId>>,
    edges: Vec<(LabelId, LabelId)>,
    removed: Vec<String>,
}

impl LabelHierarchy {
    /// Builds a hierarchy from `(child, parent)` name pairs plus any isolated
    /// labels. Label ids follow first appearance; duplicate edges collapse.
    pub fn from_edges<S: AsRef<str>>(edges: &[(S, S)], isolated: &[S]) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, LabelId> = HashMap::new();
        let mut intern = |name: &str| -> LabelId {
            if let Some(&id) = index.get(name) {
                return id;
            }
            let id = names.len() as LabelId;
            names.push(name.to_string());
            index.insert(name.to_string(), id);
            id
        };
        let mut pairs = BTreeSet::new();
        for (child, parent) in edges {
            let c = intern(child.as_ref());
            let p = intern(parent.as_ref());
            pairs.insert((c, p));
        }
        for name in isolated {
            intern(name.as_ref());
        }

        let n = names.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(c, p) in &pairs {
            parents[c as usize].push(p);
            children[p as usize].push(c);
        }
        let hierarchy = Self {
            names,
            index,
            parents,
            children,
            edges: pairs.into_iter().collect(),
            removed: Vec::new(),
        };
        hierarchy.check_acyclic()?;
        Ok(hierarchy)
    }

    /// Reads a `child<TAB>parent` edge list. A line holding a single label
    /// declares it without edges; blank lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut edges = Vec::new();
        let mut isolated = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            match fields.as_slice() {
                [label] => isolated.push(label.to_string()),
                [child, parent] if !child.is_empty() && !parent.is_empty() => {
                    edges.push((child.to_string(), parent.to_string()))
                }
                [_, _] => {
                    return Err(Error::Parse {
                        path: origin.to_path_buf(),
                        line: i + 1,
                        message: format!("dangling label in edge '{line}'"),
                    })
                }
                _ => {
                    return Err(Error::Parse {
                        path: origin.to_path_buf(),
                        line: i + 1,
                        message: format!("expected 'child<TAB>parent', got '{line}'"),
                    })
                }
            }
        }
        Self::from_edges(&edges, &isolated)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (c, p) in &self.edges {
            writeln!(out, "{}\t{}", self.names[*c as usize], self.names[*p as usize]).expect("write to vec");
        }
        for (id, name) in self.names.iter().enumerate() {
            if self.parents[id].is_empty() && self.children[id].is_empty() {
                writeln!(out, "{name}").expect("write to vec");
            }
        }
        fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Drops `root` and its edges; its children become roots.
    pub fn without_label(&self, root: &str) -> Result<Self> {
        let drop = self.id(root)?;
        let edges: Vec<(&str, &str)> = self
            .edges
            .iter()
            .filter(|(c, p)| *c != drop && *p != drop)
            .map(|&(c, p)| (self.name(c), self.name(p)))
            .collect();
        let isolated: Vec<&str> = self
            .names
            .iter()
            .enumerate()
            .filter(|&(id, _)| id as LabelId != drop)
            .map(|(_, n)| n.as_str())
            .collect();
        let mut out = Self::from_edges(&edges, &isolated)?;
        out.removed = self.removed.clone();
        out.removed.push(root.to_string());
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: LabelId) -> &str {
        &self.names[id as usize]
    }

    pub fn id(&self, name: &str) -> Result<LabelId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    /// Labels dropped by [`without_label`](Self::without_label).
    pub fn removed(&self) -> &[String] {
        &self.removed
    }

    pub fn is_removed(&self, name: &str) -> bool {
        self.removed.iter().any(|r| r == name)
    }

    /// Parent set of `label`; empty for roots.
    pub fn parents(&self, label: LabelId) -> Result<&[LabelId]> {
        self.parents
            .get(label as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownLabel(format!("#{label}")))
    }

    pub fn children(&self, label: LabelId) -> Result<&[LabelId]> {
        self.children
            .get(label as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownLabel(format!("#{label}")))
    }

    /// Every `(child, parent)` pair once, sorted by child then parent.
    pub fn edge_list(&self) -> &[(LabelId, LabelId)] {
        &self.edges
    }

    pub fn roots(&self) -> Vec<LabelId> {
        (0..self.len() as LabelId)
            .filter(|&l| self.parents[l as usize].is_empty())
            .collect()
    }

    /// All strict ancestors of `label`.
    pub fn ancestors(&self, label: LabelId) -> Result<BTreeSet<LabelId>> {
        let mut out = BTreeSet::new();
        let mut stack = self.parents(label)?.to_vec();
        while let Some(p) = stack.pop() {
            if out.insert(p) {
                stack.extend_from_slice(&self.parents[p as usize]);
            }
        }
        Ok(out)
    }

    /// Labels in an order where every parent precedes its children.
    pub fn topological_order(&self) -> Vec<LabelId> {
        let n = self.len();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: Vec<LabelId> = (0..n as LabelId)
            .filter(|&l| indegree[l as usize] == 0)
            .rev()
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(l) = ready.pop() {
            order.push(l);
            for &c in self.children[l as usize].iter().rev() {
                indegree[c as usize] -= 1;
                if indegree[c as usize] == 0 {
                    ready.push(c);
                }
            }
        }
        order
    }

    fn check_acyclic(&self) -> Result<()> {
        if self.topological_order().len() == self.len() {
            return Ok(());
        }
        // Walk parent links from any node left over; a cycle must close.
        let order: BTreeSet<LabelId> = self.topological_order().into_iter().collect();
        let start = (0..self.len() as LabelId)
            .find(|l| !order.contains(l))
            .expect("unsorted node exists");
        let mut path = vec![start];
        let mut seen: HashMap<LabelId, usize> = HashMap::from([(start, 0)]);
        let mut cur = start;
        loop {
            let next = *self.parents[cur as usize]
                .iter()
                .find(|p| !order.contains(p))
                .expect("node in a cycle has an unsorted parent");
            if let Some(&pos) = seen.get(&next) {
                let mut cycle: Vec<String> = path[pos..]
                    .iter()
                    .map(|&l| self.names[l as usize].clone())
                    .collect();
                cycle.push(self.names[next as usize].clone());
                return Err(Error::Cycle(cycle));
            }
            seen.insert(next, path.len());
            path.push(next);
            cur = next;
        }
    }
}
