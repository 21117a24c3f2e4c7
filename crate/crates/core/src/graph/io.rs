//! `nodes.jsonl` / `edges.tsv` / `splits.json` dataset directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Splits, TagGraph};
use crate::error::{KcotError, Result};

pub const NODES_FILE: &str = "nodes.jsonl";
pub const EDGES_FILE: &str = "edges.tsv";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeLine {
    id: usize,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
}

/// Counts observed while loading.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub node_count: usize,
    /// Non-blank lines in `edges.tsv`.
    pub edge_lines: usize,
    /// Distinct undirected edges after collapsing duplicates and reversals.
    pub edge_count: usize,
    pub duplicates_removed: usize,
    pub labeled_nodes: usize,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> KcotError {
    KcotError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| KcotError::io(path, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(TagGraph, LoadReport)> {
    let dir = dir.as_ref();
    let nodes_path = dir.join(NODES_FILE);
    let edges_path = dir.join(EDGES_FILE);

    let mut slots: Vec<Option<NodeLine>> = Vec::new();
    for (ln, line) in read(&nodes_path)?.lines().enumerate() {
        let ln = ln + 1;
        if line.trim().is_empty() {
            continue;
        }
        let node: NodeLine =
            serde_json::from_str(line).map_err(|e| parse_err(&nodes_path, ln, e.to_string()))?;
        let id = node.id;
        if id >= slots.len() {
            slots.resize_with(id + 1, || None);
        }
        if slots[id].is_some() {
            return Err(parse_err(&nodes_path, ln, format!("duplicate node id {id}")));
        }
        slots[id] = Some(node);
    }
    let n = slots.len();
    let mut texts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (id, slot) in slots.into_iter().enumerate() {
        let node = slot.ok_or_else(|| {
            KcotError::InvalidGraph(format!(
                "{}: node ids are not dense, {id} is missing",
                nodes_path.display()
            ))
        })?;
        texts.push(node.text);
        labels.push(node.label);
    }
    let labeled_nodes = labels.iter().filter(|l| l.is_some()).count();
    let labels = if labeled_nodes == n && n > 0 {
        Some(labels.into_iter().map(|l| l.unwrap()).collect())
    } else if labeled_nodes == 0 {
        None
    } else {
        return Err(KcotError::InvalidGraph(format!(
            "{}: {labeled_nodes} of {n} nodes carry labels; expected all or none",
            nodes_path.display()
        )));
    };

    let mut edges = Vec::new();
    for (ln, line) in read(&edges_path)?.lines().enumerate() {
        let ln = ln + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a.trim(), b.trim()),
            _ => return Err(parse_err(&edges_path, ln, "expected `src<TAB>dst`")),
        };
        let a: usize = a
            .parse()
            .map_err(|_| parse_err(&edges_path, ln, format!("bad source id {a:?}")))?;
        let b: usize = b
            .parse()
            .map_err(|_| parse_err(&edges_path, ln, format!("bad target id {b:?}")))?;
        if a == b {
            return Err(parse_err(&edges_path, ln, format!("self-loop on node {a}")));
        }
        if a >= n || b >= n {
            return Err(parse_err(
                &edges_path,
                ln,
                format!("dangling endpoint in ({a}, {b}); {n} nodes"),
            ));
        }
        edges.push((a, b));
    }
    let edge_lines = edges.len();

    let splits_path = dir.join(SPLITS_FILE);
    let splits = if splits_path.exists() {
        serde_json::from_str::<Splits>(&read(&splits_path)?)
            .map_err(|e| KcotError::json(&splits_path, e))?
    } else {
        Splits::default()
    };

    let g = TagGraph::new(texts, edges, labels, splits)?;
    let report = LoadReport {
        node_count: g.node_count(),
        edge_lines,
        edge_count: g.edge_count(),
        duplicates_removed: edge_lines - g.edge_count(),
        labeled_nodes,
    };
    log::info!(
        "loaded {}: {} nodes, {} edge lines, {} unique edges",
        dir.display(),
        report.node_count,
        report.edge_lines,
        report.edge_count
    );
    Ok((g, report))
}

fn write(path: PathBuf, contents: &[u8]) -> Result<()> {
    fs::write(&path, contents).map_err(|e| KcotError::io(path, e))
}

/// Writes the canonical form: one node per line in id order, edges sorted
/// as `lo<TAB>hi`, splits sorted. Saving a loaded dataset reproduces it
/// byte for byte.
pub fn save_dataset(g: &TagGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| KcotError::io(dir, e))?;
    let mut nodes = String::new();
    for i in 0..g.node_count() {
        let line = NodeLine {
            id: i,
            text: g.text(i).to_string(),
            label: g.labels().map(|l| l[i]),
        };
        nodes.push_str(&serde_json::to_string(&line).expect("node line serializes"));
        nodes.push('\n');
    }
    write(dir.join(NODES_FILE), nodes.as_bytes())?;
    let mut edges = String::new();
    for &(a, b) in g.edges() {
        edges.push_str(&format!("{a}\t{b}\n"));
    }
    write(dir.join(EDGES_FILE), edges.as_bytes())?;
    if !g.splits().is_empty() {
        let mut s = serde_json::to_string(g.splits()).expect("splits serialize");
        s.push('\n');
        write(dir.join(SPLITS_FILE), s.as_bytes())?;
    }
    Ok(())
}
