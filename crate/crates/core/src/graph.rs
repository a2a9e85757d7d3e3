//! Spatial adjacency of areal units: ingestion, validation, partitions,
//! k-order neighbourhood expansion and border detection.
//!
//! Graphs are immutable after construction; operations return new values.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected adjacency over named areal units, with optional partition
/// labels and centroid coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AreaGraph {
    ids: Vec<String>,
    edges: Vec<(usize, usize)>,
    partition: Option<Vec<u32>>,
    coords: Option<Vec<(f64, f64)>>,
    #[serde(skip)]
    adj: Vec<Vec<usize>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// One subdomain of a partition: the core areas plus a halo of areas within
/// graph distance k, and the subgraph they induce.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Subdomain {
    pub label: u32,
    /// parent-graph indices of core areas, ascending
    pub core: Vec<usize>,
    /// parent-graph indices of halo areas, ascending, disjoint from core
    pub halo: Vec<usize>,
    /// induced subgraph over core followed by halo (ids preserved)
    pub graph: AreaGraph,
    /// connected components of the induced subgraph
    pub components: usize,
}

impl Subdomain {
    /// Local indices (within `graph`) of the core areas.
    pub fn core_local(&self) -> std::ops::Range<usize> {
        0..self.core.len()
    }
}

impl AreaGraph {
    pub fn new(ids: Vec<String>, edges: Vec<(usize, usize)>) -> Result<AreaGraph> {
        let n = ids.len();
        let mut index = HashMap::with_capacity(n);
        for (k, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), k).is_some() {
                return Err(Error::graph(format!("duplicate area id {id:?}")));
            }
        }
        let mut norm: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::graph("edge endpoint out of range"));
            }
            if a == b {
                return Err(Error::graph(format!("self-loop at {:?}", ids[a])));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        norm.dedup();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &norm {
            adj[a].push(b);
            adj[b].push(a);
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        Ok(AreaGraph { ids, edges: norm, partition: None, coords: None, adj, index })
    }

    /// Rebuild the derived fields after deserialization.
    pub fn rehydrate(&mut self) {
        let n = self.ids.len();
        self.index = self.ids.iter().enumerate().map(|(k, id)| (id.clone(), k)).collect();
        self.adj = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            self.adj[a].push(b);
            self.adj[b].push(a);
        }
        for l in &mut self.adj {
            l.sort_unstable();
        }
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn coords(&self) -> Option<&[(f64, f64)]> {
        self.coords.as_deref()
    }

    pub fn set_coords(&mut self, coords: Vec<(f64, f64)>) -> Result<()> {
        if coords.len() != self.n() {
            return Err(Error::graph("coordinate count does not match area count"));
        }
        self.coords = Some(coords);
        Ok(())
    }

    pub fn partition(&self) -> Option<&[u32]> {
        self.partition.as_deref()
    }

    /// Number of subdomains D when a partition is assigned.
    pub fn n_subdomains(&self) -> Option<u32> {
        self.partition.as_ref().map(|p| p.iter().copied().max().unwrap_or(0))
    }

    /// Assign partition labels. Labels must cover 1..=D with no empty
    /// subdomain and exactly one label per area.
    pub fn with_partition(mut self, labels: Vec<u32>) -> Result<AreaGraph> {
        if labels.len() != self.n() {
            return Err(Error::graph(format!(
                "partition has {} labels for {} areas",
                labels.len(),
                self.n()
            )));
        }
        let d = *labels.iter().max().ok_or_else(|| Error::graph("empty graph"))?;
        if labels.iter().any(|&l| l == 0) {
            return Err(Error::graph("subdomain labels start at 1"));
        }
        let mut seen = vec![false; d as usize];
        for &l in &labels {
            seen[(l - 1) as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::graph(format!("empty subdomain {}", missing + 1)));
        }
        self.partition = Some(labels);
        Ok(self)
    }

    /// Parse a partition CSV (`area_id,subdomain` with header) and assign it.
    pub fn with_partition_csv(self, text: &str) -> Result<AreaGraph> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::data(e.to_string()))?.clone();
        let id_col = headers.iter().position(|h| h == "area_id");
        let sub_col = headers.iter().position(|h| h == "subdomain");
        let (id_col, sub_col) = match (id_col, sub_col) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::data("partition CSV needs `area_id` and `subdomain` columns")),
        };
        let mut labels = vec![0u32; self.n()];
        let mut assigned = vec![false; self.n()];
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::data(e.to_string()))?;
            let id = rec.get(id_col).unwrap_or("");
            let idx = self
                .index_of(id)
                .ok_or_else(|| Error::data(format!("partition references unknown area {id:?}")))?;
            if assigned[idx] {
                return Err(Error::data(format!("area {id:?} assigned twice")));
            }
            let label: u32 = rec
                .get(sub_col)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::data(format!("bad subdomain label for {id:?}")))?;
            labels[idx] = label;
            assigned[idx] = true;
        }
        if let Some(i) = assigned.iter().position(|&a| !a) {
            return Err(Error::data(format!("area {:?} missing from partition", self.ids[i])));
        }
        self.with_partition(labels)
    }

    /// Connected component label (0-based) per area, by BFS.
    pub fn connected_components(&self) -> Vec<usize> {
        let n = self.n();
        let mut comp = vec![usize::MAX; n];
        let mut c = 0;
        let mut queue = VecDeque::new();
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = c;
            queue.push_back(s);
            while let Some(v) = queue.pop_front() {
                for &u in &self.adj[v] {
                    if comp[u] == usize::MAX {
                        comp[u] = c;
                        queue.push_back(u);
                    }
                }
            }
            c += 1;
        }
        comp
    }

    pub fn n_components(&self) -> usize {
        self.connected_components().iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Parse an edge-list file: one `id1<TAB>id2` per line, `#` comments.
    /// Areas are registered in order of first appearance.
    pub fn from_edge_list_str(text: &str) -> Result<AreaGraph> {
        let mut ids: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let intern = |id: &str, ids: &mut Vec<String>, index: &mut HashMap<String, usize>| {
            *index.entry(id.to_string()).or_insert_with(|| {
                ids.push(id.to_string());
                ids.len() - 1
            })
        };
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (a, b) = match (parts.next(), parts.next()) {
                (Some(a), Some(b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
                    (a.trim(), b.trim())
                }
                _ => {
                    return Err(Error::data(format!(
                        "edge list line {}: expected `id1<TAB>id2`",
                        lineno + 1
                    )))
                }
            };
            let ia = intern(a, &mut ids, &mut index);
            let ib = intern(b, &mut ids, &mut index);
            if ia == ib {
                return Err(Error::graph(format!("self-loop at {a:?} (line {})", lineno + 1)));
            }
            edges.push((ia, ib));
        }
        AreaGraph::new(ids, edges)
    }

    pub fn from_edge_list_path(path: &Path) -> Result<AreaGraph> {
        Self::from_edge_list_str(&std::fs::read_to_string(path)?)
    }

    /// Parse a dense 0/1 adjacency CSV with a header row and a leading id
    /// column. Asymmetry, a nonzero diagonal, or non-binary entries are
    /// errors, not silently repaired.
    pub fn from_dense_csv_str(text: &str) -> Result<AreaGraph> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::data(e.to_string()))?.clone();
        if headers.len() < 2 {
            return Err(Error::data("dense adjacency needs id column plus area columns"));
        }
        let col_ids: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
        let n = col_ids.len();
        let mut matrix = vec![vec![0u8; n]; n];
        let mut row_ids = Vec::with_capacity(n);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::data(e.to_string()))?;
            if rec.len() != n + 1 {
                return Err(Error::data("non-square adjacency matrix"));
            }
            let r = row_ids.len();
            if r >= n {
                return Err(Error::data("non-square adjacency matrix"));
            }
            row_ids.push(rec.get(0).unwrap_or("").to_string());
            for c in 0..n {
                let cell = rec.get(c + 1).unwrap_or("");
                matrix[r][c] = match cell {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        return Err(Error::data(format!(
                            "adjacency entries must be 0/1, got {other:?}"
                        )))
                    }
                };
            }
        }
        if row_ids.len() != n {
            return Err(Error::data("non-square adjacency matrix"));
        }
        if row_ids != col_ids {
            return Err(Error::data("row and column ids disagree"));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            if matrix[i][i] != 0 {
                return Err(Error::data(format!("nonzero diagonal at {:?}", row_ids[i])));
            }
            for j in (i + 1)..n {
                if matrix[i][j] != matrix[j][i] {
                    return Err(Error::data(format!(
                        "asymmetric adjacency between {:?} and {:?}",
                        row_ids[i], row_ids[j]
                    )));
                }
                if matrix[i][j] == 1 {
                    edges.push((i, j));
                }
            }
        }
        AreaGraph::new(row_ids, edges)
    }

    pub fn from_dense_csv_path(path: &Path) -> Result<AreaGraph> {
        Self::from_dense_csv_str(&std::fs::read_to_string(path)?)
    }

    /// Merge disconnected components into one by adding bridging edges.
    ///
    /// Each secondary component is connected to the largest component via the
    /// pair of areas with minimal centroid distance when coordinates are
    /// available, otherwise via the lexicographically smallest id pair.
    /// Returns the connected graph and the list of added edges.
    pub fn connect_islands(&self) -> (AreaGraph, Vec<(String, String)>) {
        let comp = self.connected_components();
        let n_comp = comp.iter().copied().max().map_or(0, |m| m + 1);
        if n_comp <= 1 {
            return (self.clone(), Vec::new());
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_comp];
        for (v, &c) in comp.iter().enumerate() {
            members[c].push(v);
        }
        // largest component; ties break on smallest member id
        let main = (0..n_comp)
            .min_by(|&a, &b| {
                members[b]
                    .len()
                    .cmp(&members[a].len())
                    .then_with(|| self.ids[members[a][0]].cmp(&self.ids[members[b][0]]))
            })
            .unwrap();

        let mut new_edges = self.edges.clone();
        let mut added = Vec::new();
        for c in 0..n_comp {
            if c == main {
                continue;
            }
            let pair = if let Some(coords) = &self.coords {
                let mut best: Option<(f64, usize, usize)> = None;
                for &a in &members[main] {
                    for &b in &members[c] {
                        let (xa, ya) = coords[a];
                        let (xb, yb) = coords[b];
                        let d2 = (xa - xb).powi(2) + (ya - yb).powi(2);
                        let better = match best {
                            None => true,
                            Some((bd, ba, bb)) => {
                                d2 < bd
                                    || (d2 == bd
                                        && (self.ids[a].as_str(), self.ids[b].as_str())
                                            < (self.ids[ba].as_str(), self.ids[bb].as_str()))
                            }
                        };
                        if better {
                            best = Some((d2, a, b));
                        }
                    }
                }
                let (_, a, b) = best.unwrap();
                (a, b)
            } else {
                let mut best: Option<(usize, usize)> = None;
                for &a in &members[main] {
                    for &b in &members[c] {
                        let better = match best {
                            None => true,
                            Some((ba, bb)) => {
                                (self.ids[a].as_str(), self.ids[b].as_str())
                                    < (self.ids[ba].as_str(), self.ids[bb].as_str())
                            }
                        };
                        if better {
                            best = Some((a, b));
                        }
                    }
                }
                best.unwrap()
            };
            new_edges.push((pair.0.min(pair.1), pair.0.max(pair.1)));
            added.push((self.ids[pair.0].clone(), self.ids[pair.1].clone()));
        }
        let mut g = AreaGraph::new(self.ids.clone(), new_edges).expect("valid bridged graph");
        g.partition = self.partition.clone();
        g.coords = self.coords.clone();
        (g, added)
    }

    /// Expand subdomain `label` by a halo of all areas within graph distance
    /// k of its core.
    pub fn expand_korder(&self, label: u32, k: usize) -> Result<Subdomain> {
        let part = self
            .partition
            .as_ref()
            .ok_or_else(|| Error::graph("partition not assigned"))?;
        let core: Vec<usize> = (0..self.n()).filter(|&i| part[i] == label).collect();
        if core.is_empty() {
            return Err(Error::graph(format!("unknown subdomain label {label}")));
        }
        let mut dist = vec![usize::MAX; self.n()];
        let mut queue = VecDeque::new();
        for &c in &core {
            dist[c] = 0;
            queue.push_back(c);
        }
        while let Some(v) = queue.pop_front() {
            if dist[v] == k {
                continue;
            }
            for &u in &self.adj[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        let halo: Vec<usize> = (0..self.n()).filter(|&i| dist[i] >= 1 && dist[i] <= k).collect();

        // induced subgraph over core ++ halo, core first
        let mut local = HashMap::new();
        let mut ids = Vec::with_capacity(core.len() + halo.len());
        for (l, &g) in core.iter().chain(halo.iter()).enumerate() {
            local.insert(g, l);
            ids.push(self.ids[g].clone());
        }
        let mut edges = Vec::new();
        for &(a, b) in &self.edges {
            if let (Some(&la), Some(&lb)) = (local.get(&a), local.get(&b)) {
                edges.push((la, lb));
            }
        }
        let mut graph = AreaGraph::new(ids, edges)?;
        if let Some(coords) = &self.coords {
            let sub: Vec<(f64, f64)> = core.iter().chain(halo.iter()).map(|&g| coords[g]).collect();
            graph.set_coords(sub)?;
        }
        let components = graph.n_components();
        Ok(Subdomain { label, core, halo, graph, components })
    }

    /// Areas with at least one neighbour carrying a different partition label.
    pub fn border_units(&self) -> Result<Vec<usize>> {
        let part = self
            .partition
            .as_ref()
            .ok_or_else(|| Error::graph("partition not assigned"))?;
        let mut border = Vec::new();
        for v in 0..self.n() {
            if self.adj[v].iter().any(|&u| part[u] != part[v]) {
                border.push(v);
            }
        }
        Ok(border)
    }

    /// Neighbourhood structure as adjacency lists (used by structure-matrix
    /// assembly).
    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adj
    }
}

/// Contiguity rule for polygon-derived adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContiguityRule {
    /// Neighbours share at least one full boundary segment (two consecutive
    /// vertices). Corner contact does not count.
    Edge,
    /// Neighbours share at least one vertex.
    Queen,
}

/// Derive adjacency from a GeoJSON feature collection of polygons.
///
/// Feature ids are read from `id_key` (stringified if numeric). Under
/// [`ContiguityRule::Edge`], two areas are neighbours iff their boundaries
/// share a segment between two consecutive vertices, compared exactly.
pub fn derive_contiguity(geojson: &str, id_key: &str, rule: ContiguityRule) -> Result<AreaGraph> {
    let doc: serde_json::Value =
        serde_json::from_str(geojson).map_err(|e| Error::data(format!("geojson parse: {e}")))?;
    let features = doc
        .get("features")
        .and_then(|f| f.as_array())
        .ok_or_else(|| Error::data("geojson: missing features array"))?;

    let mut ids = Vec::new();
    let mut rings_per_area: Vec<Vec<Vec<(u64, u64)>>> = Vec::new();
    let mut centroids: Vec<(f64, f64)> = Vec::new();

    for (fi, feat) in features.iter().enumerate() {
        let props = feat.get("properties").and_then(|p| p.as_object());
        let id = props
            .and_then(|p| p.get(id_key))
            .map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .ok_or_else(|| Error::data(format!("feature {fi}: missing id property {id_key:?}")))?;
        let geom = feat
            .get("geometry")
            .ok_or_else(|| Error::data(format!("feature {fi}: missing geometry")))?;
        let gtype = geom.get("type").and_then(|t| t.as_str()).unwrap_or("");
        let coords = geom
            .get("coordinates")
            .ok_or_else(|| Error::data(format!("feature {fi}: missing coordinates")))?;

        let parse_ring = |ring: &serde_json::Value| -> Result<Vec<(u64, u64)>> {
            let pts =
                ring.as_array().ok_or_else(|| Error::data("geojson: ring is not an array"))?;
            let mut out = Vec::with_capacity(pts.len());
            for p in pts {
                let xy = p.as_array().ok_or_else(|| Error::data("geojson: bad vertex"))?;
                let x = xy.first().and_then(|v| v.as_f64());
                let y = xy.get(1).and_then(|v| v.as_f64());
                match (x, y) {
                    (Some(x), Some(y)) => out.push((x.to_bits(), y.to_bits())),
                    _ => return Err(Error::data("geojson: non-numeric vertex")),
                }
            }
            Ok(out)
        };

        let mut rings: Vec<Vec<(u64, u64)>> = Vec::new();
        match gtype {
            "Polygon" => {
                for ring in coords.as_array().into_iter().flatten() {
                    rings.push(parse_ring(ring)?);
                }
            }
            "MultiPolygon" => {
                for poly in coords.as_array().into_iter().flatten() {
                    for ring in poly.as_array().into_iter().flatten() {
                        rings.push(parse_ring(ring)?);
                    }
                }
            }
            other => {
                return Err(Error::data(format!(
                    "feature {id:?}: unsupported geometry type {other:?}"
                )))
            }
        }

        // flat centroid of ring vertices, recorded for island bridging
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut np = 0usize;
        for ring in &rings {
            for &(xb, yb) in ring {
                sx += f64::from_bits(xb);
                sy += f64::from_bits(yb);
                np += 1;
            }
        }
        centroids.push(if np > 0 { (sx / np as f64, sy / np as f64) } else { (0.0, 0.0) });

        ids.push(id);
        rings_per_area.push(rings);
    }

    let mut edge_pairs: HashMap<((u64, u64), (u64, u64)), Vec<usize>> = HashMap::new();
    let mut vertex_areas: HashMap<(u64, u64), Vec<usize>> = HashMap::new();
    for (a, rings) in rings_per_area.iter().enumerate() {
        for ring in rings {
            for w in ring.windows(2) {
                let (p, q) = (w[0], w[1]);
                if p == q {
                    continue;
                }
                let key = if p <= q { (p, q) } else { (q, p) };
                let list = edge_pairs.entry(key).or_default();
                if list.last() != Some(&a) {
                    list.push(a);
                }
            }
            if rule == ContiguityRule::Queen {
                for &p in ring {
                    let list = vertex_areas.entry(p).or_default();
                    if list.last() != Some(&a) {
                        list.push(a);
                    }
                }
            }
        }
    }

    let mut edges = Vec::new();
    let source: Box<dyn Iterator<Item = &Vec<usize>>> = match rule {
        ContiguityRule::Edge => Box::new(edge_pairs.values()),
        ContiguityRule::Queen => Box::new(vertex_areas.values()),
    };
    for areas in source {
        for i in 0..areas.len() {
            for j in (i + 1)..areas.len() {
                if areas[i] != areas[j] {
                    edges.push((areas[i], areas[j]));
                }
            }
        }
    }
    let mut g = AreaGraph::new(ids, edges)?;
    g.set_coords(centroids)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(ids: &[&str]) -> AreaGraph {
        let edges: Vec<(usize, usize)> = (0..ids.len() - 1).map(|i| (i, i + 1)).collect();
        AreaGraph::new(ids.iter().map(|s| s.to_string()).collect(), edges).unwrap()
    }

    #[test]
    fn edge_list_row_sums() {
        let g = AreaGraph::from_edge_list_str("A\tB\nB\tC\n# comment\n").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.degree(g.index_of("A").unwrap()), 1);
        assert_eq!(g.degree(g.index_of("B").unwrap()), 2);
        assert_eq!(g.degree(g.index_of("C").unwrap()), 1);
    }

    #[test]
    fn dense_csv_symmetric_pair() {
        let g = AreaGraph::from_dense_csv_str("id,1,2\n1,0,1\n2,1,0\n").unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn dense_csv_asymmetry_is_an_error() {
        let err = AreaGraph::from_dense_csv_str("id,1,2\n1,0,1\n2,0,0\n").unwrap_err();
        assert!(err.to_string().contains("asymmetric adjacency"));
    }

    #[test]
    fn dense_csv_diagonal_is_an_error() {
        let err = AreaGraph::from_dense_csv_str("id,1,2\n1,1,1\n2,1,0\n").unwrap_err();
        assert!(err.to_string().contains("diagonal"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = AreaGraph::new(vec!["A".into(), "A".into()], vec![]).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn connect_islands_noop_on_connected() {
        let g = path_graph(&["A", "B", "C"]);
        let (g2, added) = g.connect_islands();
        assert!(added.is_empty());
        assert_eq!(g2.edges(), g.edges());
    }

    #[test]
    fn connect_islands_bridges_two_components() {
        let g = AreaGraph::new(vec!["A".into(), "B".into(), "C".into()], vec![(0, 1)]).unwrap();
        let (g2, added) = g.connect_islands();
        assert_eq!(added.len(), 1);
        assert_eq!(g2.n_components(), 1);
        // lexicographically smallest pair from the main component
        assert_eq!(added[0], ("A".to_string(), "C".to_string()));
    }

    #[test]
    fn connect_islands_three_components_adds_two_edges() {
        let g = AreaGraph::new(
            vec!["A".into(), "B".into(), "C".into(), "D".into(), "E".into()],
            vec![(0, 1), (2, 3)],
        )
        .unwrap();
        let (g2, added) = g.connect_islands();
        assert_eq!(added.len(), 2);
        assert_eq!(g2.n_components(), 1);
    }

    #[test]
    fn expand_k0_has_empty_halo() {
        let g = path_graph(&["A", "B", "C", "D"]).with_partition(vec![1, 1, 2, 2]).unwrap();
        let sd = g.expand_korder(1, 0).unwrap();
        assert_eq!(sd.core, vec![0, 1]);
        assert!(sd.halo.is_empty());
    }

    #[test]
    fn expand_k1_on_path() {
        let g = path_graph(&["A", "B", "C", "D"]).with_partition(vec![1, 1, 2, 2]).unwrap();
        let sd = g.expand_korder(1, 1).unwrap();
        assert_eq!(sd.halo, vec![2]); // C only
        assert_eq!(sd.graph.n(), 3);
        assert_eq!(sd.graph.edges().len(), 2);
    }

    #[test]
    fn expand_unknown_label_errors() {
        let g = path_graph(&["A", "B"]).with_partition(vec![1, 1]).unwrap();
        assert!(g.expand_korder(9, 1).is_err());
    }

    #[test]
    fn border_units_on_path() {
        let g = path_graph(&["A", "B", "C"]).with_partition(vec![1, 1, 2]).unwrap();
        assert_eq!(g.border_units().unwrap(), vec![1, 2]);
    }

    #[test]
    fn border_units_single_subdomain_empty() {
        let g = path_graph(&["A", "B", "C"]).with_partition(vec![1, 1, 1]).unwrap();
        assert!(g.border_units().unwrap().is_empty());
    }

    fn square(x0: f64, y0: f64) -> String {
        format!(
            "[[[{x0},{y0}],[{x1},{y0}],[{x1},{y1}],[{x0},{y1}],[{x0},{y0}]]]",
            x0 = x0,
            y0 = y0,
            x1 = x0 + 1.0,
            y1 = y0 + 1.0
        )
    }

    fn feature(id: &str, poly: String) -> String {
        format!(
            r#"{{"type":"Feature","properties":{{"ID":"{id}"}},"geometry":{{"type":"Polygon","coordinates":{poly}}}}}"#
        )
    }

    #[test]
    fn contiguity_shared_edge() {
        let gj = format!(
            r#"{{"type":"FeatureCollection","features":[{},{}]}}"#,
            feature("a", square(0.0, 0.0)),
            feature("b", square(1.0, 0.0))
        );
        let g = derive_contiguity(&gj, "ID", ContiguityRule::Edge).unwrap();
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn contiguity_corner_touch_excluded() {
        let gj = format!(
            r#"{{"type":"FeatureCollection","features":[{},{}]}}"#,
            feature("a", square(0.0, 0.0)),
            feature("b", square(1.0, 1.0))
        );
        let g = derive_contiguity(&gj, "ID", ContiguityRule::Edge).unwrap();
        assert_eq!(g.edges().len(), 0);
        let q = derive_contiguity(&gj, "ID", ContiguityRule::Queen).unwrap();
        assert_eq!(q.edges().len(), 1);
    }

    #[test]
    fn contiguity_2x2_grid_is_rook() {
        let gj = format!(
            r#"{{"type":"FeatureCollection","features":[{},{},{},{}]}}"#,
            feature("a", square(0.0, 0.0)),
            feature("b", square(1.0, 0.0)),
            feature("c", square(0.0, 1.0)),
            feature("d", square(1.0, 1.0))
        );
        let g = derive_contiguity(&gj, "ID", ContiguityRule::Edge).unwrap();
        assert_eq!(g.edges().len(), 4);
        // diagonal pairs are not neighbours
        let a = g.index_of("a").unwrap();
        let d = g.index_of("d").unwrap();
        assert!(!g.neighbors(a).contains(&d));
    }

    #[test]
    fn missing_id_property_is_an_error() {
        let gj = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{},"geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]}}]}"#;
        assert!(derive_contiguity(gj, "ID", ContiguityRule::Edge).is_err());
    }

    #[test]
    fn non_polygon_geometry_is_an_error() {
        let gj = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{"ID":"x"},"geometry":{"type":"Point","coordinates":[0,0]}}]}"#;
        assert!(derive_contiguity(gj, "ID", ContiguityRule::Edge).is_err());
    }
}
