//! A city on disk: `demand.idt`, `regions.csv`, `graph.igr` and
//! `encodings.iemb` in one directory.

use std::path::Path;

use ndarray::Array2;

use crate::encodings::EncodingTable;
use crate::graphs::GraphSpec;
use crate::ingest::{build_covariates, read_regions_csv, write_regions_csv, DemandTensor, RegionSet};
use crate::synth::SyntheticCity;
use crate::{Error, Result};

pub const DEMAND_FILE: &str = "demand.idt";
pub const REGIONS_FILE: &str = "regions.csv";
pub const GRAPH_FILE: &str = "graph.igr";
pub const ENCODINGS_FILE: &str = "encodings.iemb";

/// Assignment radius given to regions read back from disk.
pub const DEFAULT_RADIUS_KM: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub regions: RegionSet,
    pub demand: DemandTensor,
    pub graph: GraphSpec,
    /// Rows aligned with `regions`.
    pub encodings: EncodingTable,
}

impl Dataset {
    /// Checks node counts and aligns encoding rows to the region order.
    pub fn new(regions: RegionSet, demand: DemandTensor, graph: GraphSpec, encodings: EncodingTable) -> Result<Self> {
        let n = regions.len();
        if demand.n_nodes() != n || graph.n_nodes() != n {
            return Err(Error::Shape(format!(
                "{n} regions, {} demand rows, {} graph nodes",
                demand.n_nodes(),
                graph.n_nodes()
            )));
        }
        let encodings = encodings.aligned_to(&regions.region_ids)?;
        Ok(Self { regions, demand, graph, encodings })
    }

    pub fn from_city(city: &SyntheticCity) -> Self {
        Self {
            regions: city.regions.clone(),
            demand: city.demand.clone(),
            graph: city.graph.clone(),
            encodings: city.encodings.clone(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.regions.len()
    }

    /// `T × 4` time covariates.
    pub fn covariates(&self) -> Result<Array2<f64>> {
        Ok(build_covariates(self.demand.t0, self.demand.n_steps(), self.demand.interval_seconds)?.values)
    }

    /// Induced sub-dataset on `nodes`, in that order.
    pub fn select(&self, nodes: &[usize]) -> Result<Self> {
        Ok(Self {
            regions: self.regions.select(nodes),
            demand: self.demand.select_nodes(nodes),
            graph: self.graph.select(nodes)?,
            encodings: self.encodings.select(nodes),
        })
    }

    pub fn node_indices(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| self.regions.index_of(id).ok_or_else(|| Error::Data(format!("unknown region id {id:?}"))))
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.demand.save(dir.join(DEMAND_FILE))?;
        write_regions_csv(&self.regions, std::fs::File::create(dir.join(REGIONS_FILE))?)?;
        self.graph.save(dir.join(GRAPH_FILE))?;
        self.encodings.save(dir.join(ENCODINGS_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let open = |name: &str| {
            std::fs::File::open(dir.join(name))
                .map_err(|e| Error::Data(format!("{}: {e}", dir.join(name).display())))
        };
        let regions = read_regions_csv(open(REGIONS_FILE)?, DEFAULT_RADIUS_KM)?;
        let demand = DemandTensor::read_from(std::io::BufReader::new(open(DEMAND_FILE)?))?;
        let graph = GraphSpec::read_from(std::io::BufReader::new(open(GRAPH_FILE)?))?;
        let encodings = EncodingTable::read_from(std::io::BufReader::new(open(ENCODINGS_FILE)?))?;
        Self::new(regions, demand, graph, encodings)
    }
}
