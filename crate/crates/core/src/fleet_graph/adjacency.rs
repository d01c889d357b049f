use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::FleetSeries;
use crate::error::{Error, Result};

/// Static undirected fleet graph. The adjacency matrix is symmetric with a zero
/// diagonal and `edges` lists each connected pair once as `(i, j)`, `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FleetGraph {
    adjacency: Array2<u8>,
    edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    /// Euclidean distance on raw (lat, lon) degrees.
    #[default]
    Planar,
    /// Great-circle distance in kilometres.
    Haversine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    Spatial,
    Correlation,
}

/// JSON sidecar written next to an edge-list export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub n_nodes: usize,
    pub epsilon: f64,
    pub mode: GraphMode,
}

impl FleetGraph {
    /// Builds a graph from an undirected edge list. Self-loops are rejected.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = Array2::<u8>::zeros((n_nodes, n_nodes));
        for &(i, j) in edges {
            if i >= n_nodes || j >= n_nodes {
                return Err(Error::InvalidInput(format!(
                    "edge ({i}, {j}) out of range for {n_nodes} nodes"
                )));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop at node {i}")));
            }
            adjacency[[i, j]] = 1;
            adjacency[[j, i]] = 1;
        }
        Ok(Self::from_adjacency_unchecked(adjacency))
    }

    /// Graph with no edges; every node only attends to itself.
    pub fn empty(n_nodes: usize) -> Self {
        Self::from_adjacency_unchecked(Array2::zeros((n_nodes, n_nodes)))
    }

    pub fn complete(n_nodes: usize) -> Self {
        let mut adjacency = Array2::<u8>::ones((n_nodes, n_nodes));
        for i in 0..n_nodes {
            adjacency[[i, i]] = 0;
        }
        Self::from_adjacency_unchecked(adjacency)
    }

    pub fn path(n_nodes: usize) -> Self {
        let edges: Vec<_> = (1..n_nodes).map(|i| (i - 1, i)).collect();
        Self::from_edges(n_nodes, &edges).expect("path edges are in range")
    }

    fn from_adjacency_unchecked(adjacency: Array2<u8>) -> Self {
        let n = adjacency.nrows();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if adjacency[[i, j]] == 1 {
                    edges.push((i, j));
                }
            }
        }
        Self { adjacency, edges }
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Array2<u8> {
        &self.adjacency
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[[i, j]] == 1
    }

    /// Attention neighbourhoods: each node's neighbours plus itself, ascending.
    pub fn neighborhoods(&self) -> Vec<Vec<usize>> {
        let n = self.n_nodes();
        (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j == i || self.adjacency[[i, j]] == 1)
                    .collect()
            })
            .collect()
    }

    /// Subgraph induced by `nodes`, re-indexed in the given order.
    pub fn induced(&self, nodes: &[usize]) -> Self {
        let m = nodes.len();
        let mut adjacency = Array2::<u8>::zeros((m, m));
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                adjacency[[a, b]] = self.adjacency[[i, j]];
            }
        }
        Self::from_adjacency_unchecked(adjacency)
    }

    /// Writes `i j` per line to `edges_path` and the sidecar JSON to `meta_path`.
    pub fn write_edge_list(&self, edges_path: &Path, meta_path: &Path, meta: &GraphMeta) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(edges_path)?);
        for (i, j) in &self.edges {
            writeln!(f, "{i} {j}")?;
        }
        f.flush()?;
        std::fs::write(meta_path, serde_json::to_string_pretty(meta)?)?;
        Ok(())
    }

    pub fn read_edge_list(edges_path: &Path, meta_path: &Path) -> Result<(Self, GraphMeta)> {
        let meta: GraphMeta = serde_json::from_str(&std::fs::read_to_string(meta_path)?)?;
        let text = std::fs::read_to_string(edges_path)?;
        let mut edges = Vec::new();
        for (row, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|v| v.parse().ok()).ok_or_else(|| Error::Load {
                    path: edges_path.to_path_buf(),
                    row: row + 1,
                    message: format!("expected `i j`, got {line:?}"),
                })
            };
            let mut parts = line.split_whitespace();
            edges.push((parse(parts.next())?, parse(parts.next())?));
        }
        Ok((Self::from_edges(meta.n_nodes, &edges)?, meta))
    }
}

fn planar(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn haversine_km(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    const EARTH_RADIUS_KM: f64 = 6371.0;
    let (lat1, lat2) = (a[0].to_radians(), b[0].to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b[1] - a[1]).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().asin()
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidInput(format!("epsilon {epsilon} outside [0, 1]")));
    }
    Ok(())
}

/// Thresholded Gaussian distance kernel: `i ~ j` iff `exp(-d_ij^2 / sigma^2) >= epsilon`,
/// with `sigma` the population standard deviation over all unordered pairwise distances.
pub fn build_spatial_adjacency(locations: &Array2<f64>, epsilon: f64) -> Result<FleetGraph> {
    build_spatial_adjacency_with(locations, epsilon, DistanceMetric::Planar)
}

pub fn build_spatial_adjacency_with(
    locations: &Array2<f64>,
    epsilon: f64,
    metric: DistanceMetric,
) -> Result<FleetGraph> {
    check_epsilon(epsilon)?;
    let n = locations.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 nodes, got {n}")));
    }
    if locations.ncols() != 2 {
        return Err(Error::shape("build_spatial_adjacency locations", (n, 2), locations.dim()));
    }
    if locations.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite location".into()));
    }
    let dist = match metric {
        DistanceMetric::Planar => planar,
        DistanceMetric::Haversine => haversine_km,
    };
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push(dist(locations.row(i), locations.row(j)));
        }
    }
    let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
    let var = pairs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / pairs.len() as f64;
    let sigma2 = var;
    if sigma2 == 0.0 {
        return Err(Error::DegenerateGeometry(
            "pairwise distances have zero spread; supply an explicit graph instead".into(),
        ));
    }
    let mut adjacency = Array2::<u8>::zeros((n, n));
    let mut idx = 0;
    for i in 0..n {
        for j in i + 1..n {
            let d = pairs[idx];
            idx += 1;
            if (-d * d / sigma2).exp() >= epsilon {
                adjacency[[i, j]] = 1;
                adjacency[[j, i]] = 1;
            }
        }
    }
    Ok(FleetGraph::from_adjacency_unchecked(adjacency))
}

/// `i ~ j` iff the absolute Pearson correlation of their series is at least `epsilon`.
pub fn build_correlation_adjacency(series: &FleetSeries, epsilon: f64) -> Result<FleetGraph> {
    check_epsilon(epsilon)?;
    let values = series.values();
    let n = values.nrows();
    let t = values.ncols() as f64;
    let mut centered = values.clone();
    let mut norms = vec![0.0; n];
    for (l, mut row) in centered.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / t;
        row.mapv_inplace(|v| v - mean);
        norms[l] = row.dot(&row).sqrt();
        if norms[l] == 0.0 || !norms[l].is_finite() {
            return Err(Error::InvalidInput(format!(
                "node {:?} has zero variance; correlation is undefined",
                series.node_ids()[l]
            )));
        }
    }
    let mut adjacency = Array2::<u8>::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let r = centered.row(i).dot(&centered.row(j)) / (norms[i] * norms[j]);
            if r.abs() >= epsilon {
                adjacency[[i, j]] = 1;
                adjacency[[j, i]] = 1;
            }
        }
    }
    Ok(FleetGraph::from_adjacency_unchecked(adjacency))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet_graph::series::default_start;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    fn brute_pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    fn fleet(rows: Vec<Vec<f64>>) -> FleetSeries {
        let n = rows.len();
        let t = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        FleetSeries::on_grid(
            (0..n).map(|i| format!("n{i}")).collect(),
            default_start(),
            365,
            Array2::from_shape_vec((n, t), flat).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn colinear_three_nodes() {
        // distances {1, 2, 3}, population sigma^2 = 2/3
        let loc = array![[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]];
        let s2: f64 = 2.0 / 3.0;
        let k01 = (-1.0 / s2).exp();
        let k12 = (-4.0 / s2).exp();
        let k02 = (-9.0 / s2).exp();
        assert!((k01 - 0.2231).abs() < 1e-4);
        assert!((k12 - 0.0025).abs() < 1e-4);
        assert!((k02 - 1.3e-6).abs() < 1e-6);
        let g = build_spatial_adjacency(&loc, 0.2).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn coincident_pair_is_connected() {
        let loc = array![[0.0, 0.0], [0.0, 0.0], [5.0, 5.0]];
        let g = build_spatial_adjacency(&loc, 0.5).unwrap();
        assert!(g.has_edge(0, 1));
    }

    #[test]
    fn zero_epsilon_gives_complete_graph() {
        let loc = array![[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [10.0, 4.0]];
        let g = build_spatial_adjacency(&loc, 0.0).unwrap();
        assert_eq!(g, FleetGraph::complete(4));
    }

    #[test]
    fn identical_locations_are_degenerate() {
        let loc = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(
            build_spatial_adjacency(&loc, 0.5),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn single_node_rejected() {
        assert!(matches!(
            build_spatial_adjacency(&array![[1.0, 1.0]], 0.5),
            Err(Error::InvalidInput(_))
        ));
        assert!(build_spatial_adjacency(&array![[0.0, 0.0], [1.0, 1.0]], 1.5).is_err());
    }

    #[test]
    fn haversine_metric_is_available() {
        let loc = array![[39.0, -105.0], [39.1, -105.0], [40.0, -104.0]];
        let g = build_spatial_adjacency_with(&loc, 0.5, DistanceMetric::Haversine).unwrap();
        assert!(g.has_edge(0, 1));
    }

    #[test]
    fn correlation_sign_invariance() {
        let x = vec![1.0, 3.0, 2.0, 5.0, 4.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let g = build_correlation_adjacency(&fleet(vec![x.clone(), x.clone()]), 0.9).unwrap();
        assert!(g.has_edge(0, 1));
        let g = build_correlation_adjacency(&fleet(vec![x, neg]), 0.9).unwrap();
        assert!(g.has_edge(0, 1));
    }

    #[test]
    fn correlation_triple_has_single_edge() {
        let t = 64;
        let x: Vec<f64> = (0..t).map(|i| ((i * 37 % 11) as f64).sin() + i as f64 * 0.05).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        // orthogonalize a noise series against the centered x and the constant vector
        let raw: Vec<f64> = (0..t).map(|i| ((i * i * 7 + 3) % 13) as f64).collect();
        let xm = x.iter().sum::<f64>() / t as f64;
        let xc: Vec<f64> = x.iter().map(|v| v - xm).collect();
        let rm = raw.iter().sum::<f64>() / t as f64;
        let rc: Vec<f64> = raw.iter().map(|v| v - rm).collect();
        let proj = rc.iter().zip(&xc).map(|(a, b)| a * b).sum::<f64>()
            / xc.iter().map(|b| b * b).sum::<f64>();
        let z: Vec<f64> = rc.iter().zip(&xc).map(|(a, b)| a - proj * b + 0.3).collect();
        assert!(brute_pearson(&x, &z).abs() < 0.1);
        assert!(brute_pearson(&y, &z).abs() < 0.1);
        assert!((brute_pearson(&x, &y) - 1.0).abs() < 1e-12);
        let g = build_correlation_adjacency(&fleet(vec![x, y, z]), 0.5).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn zero_variance_row_names_node() {
        let err = build_correlation_adjacency(&fleet(vec![vec![1.0, 2.0, 3.0], vec![4.0, 4.0, 4.0]]), 0.5)
            .unwrap_err();
        assert!(err.to_string().contains("n1"), "{err}");
    }

    #[test]
    fn neighborhoods_include_self() {
        let g = FleetGraph::path(3);
        assert_eq!(g.neighborhoods(), vec![vec![0, 1], vec![0, 1, 2], vec![1, 2]]);
        assert_eq!(FleetGraph::empty(2).neighborhoods(), vec![vec![0], vec![1]]);
    }

    #[test]
    fn edge_list_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = FleetGraph::from_edges(4, &[(0, 2), (1, 3), (2, 3)]).unwrap();
        let meta = GraphMeta { n_nodes: 4, epsilon: 0.5, mode: GraphMode::Spatial };
        let (e, m) = (dir.path().join("g.edges"), dir.path().join("g.json"));
        g.write_edge_list(&e, &m, &meta).unwrap();
        let (back, meta_back) = FleetGraph::read_edge_list(&e, &m).unwrap();
        assert_eq!(back, g);
        assert_eq!(meta_back, meta);
        assert!(std::fs::read_to_string(&m).unwrap().contains("\"spatial\""));
    }

    fn locations_strategy() -> impl Strategy<Value = Array2<f64>> {
        (3usize..9).prop_flat_map(|n| {
            prop::collection::vec(-50.0f64..50.0, n * 2)
                .prop_map(move |v| Array2::from_shape_vec((n, 2), v).unwrap())
        })
    }

    fn assert_well_formed(g: &FleetGraph) {
        let a = g.adjacency();
        for i in 0..g.n_nodes() {
            assert_eq!(a[[i, i]], 0);
            for j in 0..g.n_nodes() {
                assert_eq!(a[[i, j]], a[[j, i]]);
            }
        }
        let expected: Vec<_> = (0..g.n_nodes())
            .flat_map(|i| (i + 1..g.n_nodes()).map(move |j| (i, j)))
            .filter(|&(i, j)| a[[i, j]] == 1)
            .collect();
        assert_eq!(g.edges(), expected.as_slice());
    }

    proptest! {
        #[test]
        fn spatial_is_monotone_in_epsilon(loc in locations_strategy(), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let sparse = build_spatial_adjacency(&loc, hi);
            prop_assume!(!matches!(sparse, Err(Error::DegenerateGeometry(_))));
            let sparse = sparse.unwrap();
            let dense = build_spatial_adjacency(&loc, lo).unwrap();
            assert_well_formed(&sparse);
            assert_well_formed(&dense);
            for &(i, j) in sparse.edges() {
                prop_assert!(dense.has_edge(i, j));
            }
        }

        #[test]
        fn spatial_is_translation_invariant(loc in locations_strategy(), dx in -20.0f64..20.0, dy in -20.0f64..20.0, eps in 0.0f64..1.0) {
            let shifted = &loc + &Array1::from(vec![dx, dy]);
            let a = build_spatial_adjacency(&loc, eps);
            prop_assume!(!matches!(a, Err(Error::DegenerateGeometry(_))));
            let a = a.unwrap();
            let b = build_spatial_adjacency(&shifted, eps).unwrap();
            let n = loc.nrows();
            let d: Vec<f64> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .map(|(i, j)| planar(loc.row(i), loc.row(j)))
                .collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
            let mut idx = 0;
            for i in 0..n {
                for j in i + 1..n {
                    let kernel = (-d[idx] * d[idx] / var).exp();
                    idx += 1;
                    // rounding in the shifted coordinates may flip pairs sitting on the threshold
                    if (kernel - eps).abs() > 1e-9 {
                        prop_assert_eq!(a.has_edge(i, j), b.has_edge(i, j));
                    }
                }
            }
        }

        #[test]
        fn correlation_graph_is_well_formed(
            rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 12), 2..6),
            eps in 0.0f64..1.0,
        ) {
            let s = fleet(rows);
            if let Ok(g) = build_correlation_adjacency(&s, eps) {
                assert_well_formed(&g);
            }
        }
    }
}
