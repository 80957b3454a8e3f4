use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::preprocess::minmax_normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Biomarker {
    /// Glycated haemoglobin, percent.
    Hba1c,
    /// Central retinal thickness, µm.
    RetinalThickness,
    /// Vascular endothelial growth factor, pg/mL.
    Vegf,
}

impl Biomarker {
    pub const ALL: [Biomarker; 3] = [Biomarker::Hba1c, Biomarker::RetinalThickness, Biomarker::Vegf];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Biomarker::Hba1c => "hba1c",
            Biomarker::RetinalThickness => "retinal_thickness",
            Biomarker::Vegf => "vegf",
        }
    }

    /// Fixed physiological range used for cohort-consistent scaling.
    pub fn reference_range(self) -> (f64, f64) {
        match self {
            Biomarker::Hba1c => (4.0, 14.0),
            Biomarker::RetinalThickness => (150.0, 350.0),
            Biomarker::Vegf => (0.0, 300.0),
        }
    }
}

impl fmt::Display for Biomarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Biomarker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hba1c" => Ok(Biomarker::Hba1c),
            "retinal_thickness" | "thickness" => Ok(Biomarker::RetinalThickness),
            "vegf" => Ok(Biomarker::Vegf),
            other => Err(Error::Format(format!("unknown biomarker '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerSeries {
    pub biomarker: Biomarker,
    /// Months, strictly increasing.
    pub timestamps: Vec<f64>,
    pub values: Vec<f64>,
}

impl BiomarkerSeries {
    pub fn new(biomarker: Biomarker, timestamps: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let s = Self {
            biomarker,
            timestamps,
            values,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.is_empty() || self.timestamps.len() != self.values.len() {
            return Err(Error::contract(format!(
                "{} series needs matching, non-empty timestamps and values",
                self.biomarker
            )));
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract(format!("{} timestamps must strictly increase", self.biomarker)));
        }
        if self.values.iter().chain(&self.timestamps).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} series", self.biomarker)));
        }
        Ok(())
    }
}

/// How raw biomarker values become node features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueScaling {
    /// Min-max against [`Biomarker::reference_range`], clamped to `[0, 1]`.
    #[default]
    ReferenceRange,
    /// Min-max within each patient's own series.
    PerSeries,
}

/// Identity of one graph node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeKey {
    pub biomarker: Biomarker,
    pub month: f64,
}

/// Edge rule over canonically ordered nodes.
pub trait Topology {
    fn edges(&self, nodes: &[NodeKey]) -> Vec<(usize, usize)>;
}

/// Consecutive visits of one biomarker are linked, and so are different
/// biomarkers measured at the same month.
#[derive(Debug, Clone, Copy, Default)]
pub struct ChainAndSameTime;

impl Topology for ChainAndSameTime {
    fn edges(&self, nodes: &[NodeKey]) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                let (a, b) = (nodes[i], nodes[j]);
                // Nodes are grouped by biomarker and time-sorted, so chain
                // neighbours are adjacent indices.
                let chain = a.biomarker == b.biomarker && j == i + 1;
                let same_time = a.biomarker != b.biomarker && a.month == b.month;
                if chain || same_time {
                    edges.push((i, j));
                }
            }
        }
        edges
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalGraph {
    /// `[n × d_node]`: scaled value, scaled time, biomarker one-hot.
    pub features: Tensor,
    /// Symmetric 0/1 `[n × n]` with a zero diagonal.
    pub adjacency: Tensor,
    pub nodes: Vec<NodeKey>,
}

impl TemporalGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.data().iter().filter(|&&v| v != 0.0).count() / 2
    }

    /// Node feature width for the built-in layout.
    pub const NODE_DIM: usize = 2 + Biomarker::ALL.len();
}

/// Graph construction settings; `topology` is pluggable.
pub struct GraphBuilder<T: Topology = ChainAndSameTime> {
    pub time_scale: f64,
    pub scaling: ValueScaling,
    pub topology: T,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self {
            time_scale: 60.0,
            scaling: ValueScaling::ReferenceRange,
            topology: ChainAndSameTime,
        }
    }
}

impl<T: Topology> GraphBuilder<T> {
    /// One node per (biomarker, visit). Series are visited in biomarker order
    /// whatever order they are given in, so the result does not depend on input order.
    pub fn build(&self, series: &[BiomarkerSeries]) -> Result<TemporalGraph> {
        if series.is_empty() {
            return Err(Error::contract("cannot build a graph from zero biomarker series"));
        }
        if !(self.time_scale > 0.0) {
            return Err(Error::config("time_scale must be positive"));
        }
        let mut ordered: Vec<&BiomarkerSeries> = series.iter().collect();
        ordered.sort_by_key(|s| s.biomarker);
        if ordered.windows(2).any(|w| w[0].biomarker == w[1].biomarker) {
            return Err(Error::contract("each biomarker may appear in at most one series"));
        }
        let d = TemporalGraph::NODE_DIM;
        let mut nodes = Vec::new();
        let mut feats = Vec::new();
        for s in ordered {
            s.validate()?;
            let scaled = match self.scaling {
                ValueScaling::PerSeries => minmax_normalize(&s.values)?,
                ValueScaling::ReferenceRange => {
                    let (lo, hi) = s.biomarker.reference_range();
                    s.values.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
                }
            };
            for (&t, v) in s.timestamps.iter().zip(scaled) {
                nodes.push(NodeKey {
                    biomarker: s.biomarker,
                    month: t,
                });
                let mut row = vec![0.0; d];
                row[0] = v;
                row[1] = t / self.time_scale;
                row[2 + s.biomarker.index()] = 1.0;
                feats.extend(row);
            }
        }
        let n = nodes.len();
        let mut adj = vec![0.0; n * n];
        for (i, j) in self.topology.edges(&nodes) {
            if i != j {
                adj[i * n + j] = 1.0;
                adj[j * n + i] = 1.0;
            }
        }
        Ok(TemporalGraph {
            features: Tensor::new(vec![n, d], feats)?,
            adjacency: Tensor::new(vec![n, n], adj)?,
            nodes,
        })
    }
}

/// Builds with the default chain + same-time topology and reference-range scaling.
pub fn build_graph(series: &[BiomarkerSeries], time_scale: f64) -> Result<TemporalGraph> {
    GraphBuilder {
        time_scale,
        ..GraphBuilder::default()
    }
    .build(series)
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let n = match *a.shape() {
        [r, c] if r == c => r,
        ref s => return Err(Error::dim(format!("adjacency must be square, got {s:?}"))),
    };
    if a.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::contract("adjacency entries must be finite and non-negative"));
    }
    let mut m = a.data().to_vec();
    for i in 0..n {
        m[i * n + i] += 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| m[i * n..(i + 1) * n].iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    Tensor::new(vec![n, n], m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(b: Biomarker, t: &[f64], v: &[f64]) -> BiomarkerSeries {
        BiomarkerSeries::new(b, t.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn single_chain_is_a_path() {
        let g = build_graph(&[series(Biomarker::Hba1c, &[0.0, 6.0, 12.0], &[7.0, 7.5, 8.0])], 60.0).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.adjacency.at(0, 1), 1.0);
        assert_eq!(g.adjacency.at(1, 2), 1.0);
        assert_eq!(g.adjacency.at(0, 2), 0.0);
        assert_eq!(g.features.shape(), &[3, 5]);
        // (7 - 4) / 10 and 12 / 60.
        assert!((g.features.at(0, 0) - 0.3).abs() < 1e-12);
        assert!((g.features.at(2, 1) - 0.2).abs() < 1e-12);
        assert_eq!(&g.features.row_slice(1)[2..], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_timestamps_add_cross_edges() {
        let g = build_graph(
            &[
                series(Biomarker::Hba1c, &[0.0, 6.0], &[7.0, 7.2]),
                series(Biomarker::Vegf, &[0.0, 6.0], &[90.0, 95.0]),
            ],
            60.0,
        )
        .unwrap();
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.num_edges(), 4);
        // Nodes 0,1 are HbA1c; 2,3 are VEGF.
        for (i, j) in [(0, 1), (2, 3), (0, 2), (1, 3)] {
            assert_eq!(g.adjacency.at(i, j), 1.0, "({i},{j})");
        }
    }

    #[test]
    fn singleton_and_errors() {
        let g = build_graph(&[series(Biomarker::Vegf, &[3.0], &[100.0])], 60.0).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (1, 0));
        assert!(matches!(build_graph(&[], 60.0), Err(Error::Contract(_))));
        assert!(BiomarkerSeries::new(Biomarker::Vegf, vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
        let dup = [series(Biomarker::Vegf, &[0.0], &[1.0]), series(Biomarker::Vegf, &[1.0], &[1.0])];
        assert!(build_graph(&dup, 60.0).is_err());
    }

    #[test]
    fn series_order_does_not_change_the_graph() {
        let a = series(Biomarker::Hba1c, &[0.0, 6.0, 12.0], &[7.0, 7.4, 7.9]);
        let b = series(Biomarker::RetinalThickness, &[0.0, 12.0], &[250.0, 240.0]);
        let c = series(Biomarker::Vegf, &[6.0], &[120.0]);
        let g1 = build_graph(&[a.clone(), b.clone(), c.clone()], 60.0).unwrap();
        let g2 = build_graph(&[c, a, b], 60.0).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn per_series_scaling_spans_unit_range() {
        let b = GraphBuilder {
            scaling: ValueScaling::PerSeries,
            ..GraphBuilder::default()
        };
        let g = b.build(&[series(Biomarker::Hba1c, &[0.0, 6.0, 12.0], &[2.0, 4.0, 6.0])]).unwrap();
        let col: Vec<f64> = (0..3).map(|i| g.features.at(i, 0)).collect();
        assert_eq!(col, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn hub_rows_can_exceed_one() {
        // Star with 7 leaves: the hub row is 1/8 + 7/sqrt(16).
        let mut a = Tensor::zeros(&[8, 8]);
        for j in 1..8 {
            a.data_mut()[j] = 1.0;
            a.data_mut()[j * 8] = 1.0;
        }
        let h = normalize_adjacency(&a).unwrap();
        assert!((h.row_slice(0).iter().sum::<f64>() - (0.125 + 1.75)).abs() < 1e-12);
    }

    #[test]
    fn normalized_adjacency_examples() {
        assert_eq!(normalize_adjacency(&Tensor::zeros(&[1, 1])).unwrap().data(), &[1.0]);
        let two = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(normalize_adjacency(&two).unwrap().data(), &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(normalize_adjacency(&Tensor::zeros(&[3, 3])).unwrap(), Tensor::identity(3));
    }

    proptest! {
        #[test]
        fn normalized_adjacency_is_symmetric_with_sqrt_degree_eigenvector(
            bits in prop::collection::vec(any::<bool>(), 28),
        ) {
            // Upper triangle of an 8-node graph.
            let n = 8;
            let mut a = vec![0.0; n * n];
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if bits[k] {
                        a[i * n + j] = 1.0;
                        a[j * n + i] = 1.0;
                    }
                    k += 1;
                }
            }
            let a = Tensor::new(vec![n, n], a).unwrap();
            let h = normalize_adjacency(&a).unwrap();
            let deg: Vec<f64> = (0..n).map(|i| 1.0 + a.row_slice(i).iter().sum::<f64>()).collect();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(h.at(i, j), h.at(j, i));
                }
                // Â·√d = √d.
                let hv: f64 = (0..n).map(|j| h.at(i, j) * deg[j].sqrt()).sum();
                prop_assert!((hv - deg[i].sqrt()).abs() < 1e-12);
                let regular = (0..n).filter(|&j| a.at(i, j) > 0.0).all(|j| deg[j] == deg[i]);
                if regular {
                    prop_assert!((h.row_slice(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
