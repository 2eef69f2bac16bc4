//! Tab-separated node, link and label files.
//!
//! ```text
//! node file:  node_id \t node_name \t node_type_id [\t f1,f2,...,fk]
//! link file:  src_id \t dst_id \t edge_type_id \t weight
//! label file: node_id \t node_name \t node_type_id \t label[,label...]
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Edge, HetGraph};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_id(path: &Path, line: usize, field: &str, what: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid {what} {field:?}")))
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Reads a graph. With `undirected`, every link is also stored reversed with
/// the same edge type.
pub fn load_graph(node_file: &Path, link_file: &Path, undirected: bool) -> Result<HetGraph> {
    let node_text = fs::read_to_string(node_file).map_err(Error::file(node_file))?;
    let mut rows: Vec<(usize, usize, Option<Vec<f64>>, usize)> = Vec::new();
    for (ln, line) in lines(&node_text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(parse_err(
                node_file,
                ln,
                "expected at least 3 tab-separated fields",
            ));
        }
        let id = parse_id(node_file, ln, fields[0], "node id")?;
        let t = parse_id(node_file, ln, fields[2], "node type")?;
        let feats = match fields.get(3).map(|f| f.trim()).filter(|f| !f.is_empty()) {
            None => None,
            Some(f) => Some(
                f.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|_| parse_err(node_file, ln, format!("invalid feature {x:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        rows.push((id, t, feats, ln));
    }
    let n = rows.len();
    let mut node_type = vec![usize::MAX; n];
    let mut feat_of: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut line_of = vec![0; n];
    for (id, t, feats, ln) in rows {
        if id >= n {
            return Err(parse_err(
                node_file,
                ln,
                format!("node id {id} outside 0..{n}; ids must be contiguous"),
            ));
        }
        if node_type[id] != usize::MAX {
            return Err(parse_err(node_file, ln, format!("duplicate node id {id}")));
        }
        node_type[id] = t;
        feat_of[id] = feats;
        line_of[id] = ln;
    }
    let num_node_types = node_type.iter().max().map_or(0, |t| t + 1);

    // Per-type feature matrices in ascending node-id order; a type either has
    // features on every node or on none.
    let mut widths: Vec<Option<Option<usize>>> = vec![None; num_node_types];
    let mut blocks: Vec<Vec<f64>> = vec![Vec::new(); num_node_types];
    for v in 0..n {
        let t = node_type[v];
        let w = feat_of[v].as_ref().map(Vec::len);
        match widths[t] {
            None => widths[t] = Some(w),
            Some(expected) if expected != w => {
                return Err(parse_err(
                    node_file,
                    line_of[v],
                    format!(
                        "node {v} of type {t} has {} features, type expects {}",
                        w.map_or("no".to_string(), |w| w.to_string()),
                        expected.map_or("none".to_string(), |w| w.to_string()),
                    ),
                ));
            }
            _ => {}
        }
        if let Some(f) = &feat_of[v] {
            blocks[t].extend_from_slice(f);
        }
    }
    let mut features = Vec::with_capacity(num_node_types);
    for (t, block) in blocks.into_iter().enumerate() {
        features.push(match widths[t].flatten() {
            Some(w) => {
                let count = node_type.iter().filter(|&&x| x == t).count();
                Some(Tensor::from_vec(count, w, block)?)
            }
            None => None,
        });
    }

    let link_text = fs::read_to_string(link_file).map_err(Error::file(link_file))?;
    let mut edges = Vec::new();
    let mut max_type = None;
    for (ln, line) in lines(&link_text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(parse_err(
                link_file,
                ln,
                "expected at least 3 tab-separated fields",
            ));
        }
        let src = parse_id(link_file, ln, fields[0], "source id")?;
        let dst = parse_id(link_file, ln, fields[1], "destination id")?;
        let etype = parse_id(link_file, ln, fields[2], "edge type")?;
        if let Some(w) = fields.get(3) {
            w.trim()
                .parse::<f64>()
                .map_err(|_| parse_err(link_file, ln, format!("invalid weight {w:?}")))?;
        }
        if src >= n || dst >= n {
            return Err(parse_err(
                link_file,
                ln,
                format!("edge {src}->{dst} references a node outside 0..{n}"),
            ));
        }
        max_type = max_type.max(Some(etype));
        edges.push(Edge::new(src, dst, etype));
        if undirected && src != dst {
            edges.push(Edge::new(dst, src, etype));
        }
    }
    let num_edge_types = max_type.map_or(0, |t| t + 1);
    HetGraph::new(node_type, num_node_types, features, edges, num_edge_types)
}

/// Reads a label file into `(node, labels)` pairs in file order.
pub fn load_labels(path: &Path) -> Result<Vec<(usize, Vec<usize>)>> {
    let text = fs::read_to_string(path).map_err(Error::file(path))?;
    let mut out = Vec::new();
    for (ln, line) in lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(parse_err(path, ln, "expected 4 tab-separated fields"));
        }
        let id = parse_id(path, ln, fields[0], "node id")?;
        let labels = fields[3]
            .split(',')
            .map(|l| parse_id(path, ln, l, "label"))
            .collect::<Result<Vec<_>>>()?;
        out.push((id, labels));
    }
    Ok(out)
}

/// Writes `g` as a node file and a link file. Reserved self-loops are not
/// written; with `undirected`, only edges with `src <= dst` are written.
pub fn write_graph(
    g: &HetGraph,
    node_file: &Path,
    link_file: &Path,
    undirected: bool,
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(node_file)?);
    for v in 0..g.num_nodes() {
        let t = g.node_type(v);
        write!(w, "{v}\tn{v}\t{t}")?;
        if let Some(row) = g.feature_row(v) {
            let parts: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
            write!(w, "\t{}", parts.join(","))?;
        }
        writeln!(w)?;
    }
    w.flush()?;

    let mut w = BufWriter::new(fs::File::create(link_file)?);
    for e in g.edges() {
        if e.etype == g.self_loop_type() || (undirected && e.src > e.dst) {
            continue;
        }
        writeln!(w, "{}\t{}\t{}\t1", e.src, e.dst, e.etype)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn two_nodes_one_edge() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = write(dir.path(), "node.dat", "0\ta\t0\t1.0,2.0\n1\tb\t1\t3.5\n");
        let links = write(dir.path(), "link.dat", "0\t1\t0\t1.0\n");
        let g = load_graph(&nodes, &links, false).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.feature_row(0).unwrap(), &[1.0, 2.0]);
        assert_eq!(g.feature_row(1).unwrap(), &[3.5]);

        let g = load_graph(&nodes, &links, true).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.neighbors(0).unwrap(), vec![(1, 0)]);
    }

    #[test]
    fn errors_report_line() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = write(dir.path(), "node.dat", "0\ta\t0\t1.0\n1\tb\t0\t2.x\n");
        let links = write(dir.path(), "link.dat", "");
        match load_graph(&nodes, &links, false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }

        let nodes = write(dir.path(), "node2.dat", "0\ta\t0\t1.0\n1\tb\t0\t2.0,3.0\n");
        match load_graph(&nodes, &links, false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }

        let nodes = write(dir.path(), "node3.dat", "0\ta\t0\n1\tb\t0\n");
        let links = write(dir.path(), "link3.dat", "0\t1\t0\t1\n0\t7\t0\t1\n");
        match load_graph(&nodes, &links, false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn featureless_types_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = write(dir.path(), "node.dat", "1\tb\t1\n0\ta\t0\t0.5\n");
        let links = write(dir.path(), "link.dat", "1\t0\t0\n");
        let g = load_graph(&nodes, &links, false).unwrap();
        assert!(g.features(1).is_none());
        assert_eq!(g.feature_dim(0), Some(1));

        let labels = write(dir.path(), "label.dat", "0\ta\t0\t2\n1\tb\t1\t0,3\n");
        assert_eq!(
            load_labels(&labels).unwrap(),
            vec![(0, vec![2]), (1, vec![0, 3])]
        );
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = write(
            dir.path(),
            "node.dat",
            "0\ta\t0\t0.1,0.2\n1\tb\t1\t3\n2\tc\t0\t-1,1e-3\n",
        );
        let links = write(dir.path(), "link.dat", "0\t1\t0\t1\n1\t2\t1\t1\n");
        let g = load_graph(&nodes, &links, true).unwrap().add_self_loops();
        let (n2, l2) = (dir.path().join("n2"), dir.path().join("l2"));
        write_graph(&g, &n2, &l2, true).unwrap();
        let h = load_graph(&n2, &l2, true).unwrap().add_self_loops();
        assert_eq!(h.edges().len(), g.edges().len());
        assert_eq!(h.csr_src(), g.csr_src());
        assert_eq!(h.all_features(), g.all_features());
    }
}
