//! Regional infrastructure: carbon-intensity traces, pricing and RTTs.
//!
//! All tables inside an [`Infra`] bundle are indexed by the position of the
//! region in its [`RegionSet`], so hot paths in the optimizer can work with
//! plain `usize` region indices.
//!
//! On-disk layout of an infra directory:
//!
//! ```text
//! regions.json        [{"id", "display_name", "sovereignty_group"}, ...]
//! carbon/<id>.csv     timestamp_utc,ci_g_per_kwh
//! pricing.json        {"instances": {id: [...]}, "storage_price": .., "egress": {from: {to: ..}}}
//! rtt.csv             region,<id>,<id>,...
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timefmt::{fmt_ts, parse_ts};

/// Hours per billing month, used to turn GB-month storage prices into hourly rates.
pub const HOURS_PER_MONTH: f64 = 730.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub display_name: String,
    pub sovereignty_group: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSet {
    regions: Vec<Region>,
    index: HashMap<String, usize>,
}

impl RegionSet {
    pub fn new(regions: Vec<Region>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, r) in regions.iter().enumerate() {
            if r.sovereignty_group.trim().is_empty() {
                return Err(Error::Validation(format!("region {} has an empty sovereignty group", r.id)));
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate region id {}", r.id)));
            }
        }
        Ok(RegionSet { regions, index })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn get(&self, i: usize) -> &Region {
        &self.regions[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Region> {
        self.regions.iter()
    }

    pub fn ids(&self) -> Vec<String> {
        self.regions.iter().map(|r| r.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::UnknownRegion(id.to_string()))
    }
}

/// Hourly carbon intensity for one region, held constant within each hour.
#[derive(Debug, Clone, PartialEq)]
pub struct CarbonTrace {
    pub region_id: String,
    start: DateTime<Utc>,
    values: Vec<f64>,
}

impl CarbonTrace {
    pub fn new(region_id: impl Into<String>, start: DateTime<Utc>, values: Vec<f64>) -> Result<Self> {
        let region_id = region_id.into();
        if values.is_empty() {
            return Err(Error::MissingData(format!("empty carbon trace for {region_id}")));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Validation(format!("carbon intensity {v} in {region_id} is not a non-negative number")));
        }
        Ok(CarbonTrace { region_id, start, values })
    }

    pub fn from_samples(region_id: impl Into<String>, samples: &[(DateTime<Utc>, f64)]) -> Result<Self> {
        let region_id = region_id.into();
        let Some(&(start, _)) = samples.first() else {
            return Err(Error::MissingData(format!("empty carbon trace for {region_id}")));
        };
        for pair in samples.windows(2) {
            if pair[1].0 - pair[0].0 != Duration::hours(1) {
                return Err(Error::Validation(format!(
                    "carbon trace {region_id} is not hourly between {} and {}",
                    fmt_ts(pair[0].0),
                    fmt_ts(pair[1].0)
                )));
            }
        }
        Self::new(region_id, start, samples.iter().map(|s| s.1).collect())
    }

    pub fn load_csv(region_id: &str, path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::parse(path.display().to_string(), e))?;
            if rec.len() < 2 {
                return Err(Error::parse(path.display().to_string(), "expected timestamp_utc,ci_g_per_kwh"));
            }
            let t = parse_ts(&rec[0])?;
            let ci: f64 = rec[1]
                .trim()
                .parse()
                .map_err(|e| Error::parse(path.display().to_string(), format!("bad ci '{}': {e}", &rec[1])))?;
            samples.push((t, ci));
        }
        Self::from_samples(region_id, &samples)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
        let io = |e: csv::Error| Error::parse(path.display().to_string(), e);
        w.write_record(["timestamp_utc", "ci_g_per_kwh"]).map_err(io)?;
        for (t, v) in self.samples() {
            w.write_record([fmt_ts(t), fmt_num(v)]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    /// Exclusive end of the covered range: last sample + 1 h.
    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::hours(self.values.len() as i64)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn samples(&self) -> impl Iterator<Item = (DateTime<Utc>, f64)> + '_ {
        self.values.iter().enumerate().map(|(i, v)| (self.start + Duration::hours(i as i64), *v))
    }

    /// Zero-order hold lookup.
    pub fn ci_at(&self, t: DateTime<Utc>) -> Result<f64> {
        if t < self.start || t >= self.end() {
            return Err(Error::OutOfRange(format!("{} (carbon trace {})", fmt_ts(t), self.region_id)));
        }
        let idx = (t - self.start).num_seconds() / 3600;
        Ok(self.values[idx as usize])
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceType {
    pub name: String,
    pub vcpu: f64,
    pub mem_gb: f64,
    /// USD per hour.
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PricingFile {
    instances: BTreeMap<String, Vec<InstanceType>>,
    /// USD per GB-month.
    storage_price: f64,
    /// USD per GB, keyed `from -> to`.
    egress: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PricingCatalog {
    instances: Vec<Vec<InstanceType>>,
    storage_price: f64,
    egress: Vec<f64>,
    n: usize,
}

fn instance_order(a: &InstanceType, b: &InstanceType) -> std::cmp::Ordering {
    a.vcpu
        .total_cmp(&b.vcpu)
        .then(a.mem_gb.total_cmp(&b.mem_gb))
        .then(a.price.total_cmp(&b.price))
        .then(a.name.cmp(&b.name))
}

impl PricingCatalog {
    /// `egress` is a dense row-major `n x n` matrix in USD/GB.
    pub fn new(mut instances: Vec<Vec<InstanceType>>, storage_price: f64, egress: Vec<f64>) -> Result<Self> {
        let n = instances.len();
        if egress.len() != n * n {
            return Err(Error::Validation(format!("egress matrix has {} entries, expected {}", egress.len(), n * n)));
        }
        if !(storage_price.is_finite() && storage_price >= 0.0) {
            return Err(Error::Validation(format!("storage price {storage_price} must be non-negative")));
        }
        for (r, list) in instances.iter_mut().enumerate() {
            if list.is_empty() {
                return Err(Error::MissingData(format!("no instance types for region #{r}")));
            }
            for it in list.iter() {
                if !(it.price.is_finite() && it.price >= 0.0 && it.vcpu > 0.0 && it.mem_gb > 0.0) {
                    return Err(Error::Validation(format!("instance {} has an invalid shape or price", it.name)));
                }
            }
            list.sort_by(instance_order);
        }
        for i in 0..n {
            for j in 0..n {
                let e = egress[i * n + j];
                if !(e.is_finite() && e >= 0.0) {
                    return Err(Error::Validation(format!("negative egress price {e}")));
                }
                if i == j && e != 0.0 {
                    return Err(Error::Validation("intra-region egress must be free".into()));
                }
            }
        }
        Ok(PricingCatalog { instances, storage_price, egress, n })
    }

    pub fn instances(&self, region: usize) -> &[InstanceType] {
        &self.instances[region]
    }

    /// USD per GB-month.
    pub fn storage_price(&self) -> f64 {
        self.storage_price
    }

    pub fn egress(&self, from: usize, to: usize) -> f64 {
        self.egress[from * self.n + to]
    }

    /// First instance in sorted order that fits the footprint.
    pub fn smallest_instance(&self, region: usize, cpu: f64, mem_gb: f64) -> Option<&InstanceType> {
        self.instances[region].iter().find(|it| it.vcpu >= cpu && it.mem_gb >= mem_gb)
    }

    /// Price of the catalog's median instance shape in every region.
    pub fn reference_prices(&self) -> Vec<f64> {
        let mut shapes: Vec<(f64, f64)> =
            self.instances.iter().flatten().map(|it| (it.vcpu, it.mem_gb)).collect();
        shapes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        shapes.dedup();
        let (cpu, mem) = shapes[(shapes.len() - 1) / 2];
        (0..self.n)
            .map(|r| {
                self.smallest_instance(r, cpu, mem)
                    .or_else(|| self.instances[r].last())
                    .map(|it| it.price)
                    .expect("non-empty instance list")
            })
            .collect()
    }

    fn subset(&self, keep: &[usize]) -> Self {
        let n = keep.len();
        let mut egress = vec![0.0; n * n];
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                egress[a * n + b] = self.egress(i, j);
            }
        }
        PricingCatalog {
            instances: keep.iter().map(|&i| self.instances[i].clone()).collect(),
            storage_price: self.storage_price,
            egress,
            n,
        }
    }
}

/// Ordered RTT matrix in milliseconds; no symmetry is assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct RttMatrix {
    ids: Vec<String>,
    ms: Vec<f64>,
}

impl RttMatrix {
    pub fn new(ids: Vec<String>, ms: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if ms.len() != n * n {
            return Err(Error::Validation(format!("rtt matrix has {} entries, expected {}", ms.len(), n * n)));
        }
        for i in 0..n {
            let diag = ms[i * n + i];
            for j in 0..n {
                let v = ms[i * n + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Validation(format!("rtt {} -> {} is {v}", ids[i], ids[j])));
                }
                if j != i && v < diag {
                    return Err(Error::Validation(format!(
                        "rtt {} -> {} ({v}) is below the intra-region value {diag}",
                        ids[i], ids[j]
                    )));
                }
            }
        }
        Ok(RttMatrix { ids, ms })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let ctx = || path.display().to_string();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(ctx(), e))?;
        let header = rdr.headers().map_err(|e| Error::parse(ctx(), e))?.clone();
        let cols: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::parse(ctx(), e))?;
            if rec.len() != cols.len() + 1 {
                return Err(Error::parse(ctx(), format!("row has {} fields, expected {}", rec.len(), cols.len() + 1)));
            }
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::parse(ctx(), format!("bad rtt '{s}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.insert(rec[0].trim().to_string(), vals);
        }
        let mut ms = Vec::with_capacity(cols.len() * cols.len());
        for id in &cols {
            let row = rows.get(id).ok_or_else(|| Error::MissingData(format!("rtt row for {id}")))?;
            ms.extend_from_slice(row);
        }
        if rows.len() != cols.len() {
            return Err(Error::Validation("rtt rows and columns name different regions".into()));
        }
        Self::new(cols, ms)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::parse(path.display().to_string(), e);
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let mut header = vec!["region".to_string()];
        header.extend(self.ids.iter().cloned());
        w.write_record(&header).map_err(io)?;
        let n = self.ids.len();
        for (i, id) in self.ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.ms[i * n..(i + 1) * n].iter().map(|v| fmt_num(*v)));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.ms[from * self.ids.len() + to]
    }

    pub fn rtt(&self, from: &str, to: &str) -> Result<f64> {
        let pos = |id: &str| self.ids.iter().position(|x| x == id).ok_or_else(|| Error::UnknownRegion(id.into()));
        Ok(self.get(pos(from)?, pos(to)?))
    }

    fn reordered(&self, order: &[String]) -> Result<Self> {
        let n = order.len();
        let idx = order
            .iter()
            .map(|id| self.ids.iter().position(|x| x == id).ok_or_else(|| Error::MissingData(format!("rtt entries for {id}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut ms = vec![0.0; n * n];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                ms[a * n + b] = self.get(i, j);
            }
        }
        Ok(RttMatrix { ids: order.to_vec(), ms })
    }
}

/// Everything the optimizer and simulator need to know about the regions.
#[derive(Debug, Clone)]
pub struct Infra {
    pub regions: RegionSet,
    pub carbon: Vec<CarbonTrace>,
    pub pricing: PricingCatalog,
    pub rtt: RttMatrix,
}

impl Infra {
    pub fn new(regions: RegionSet, carbon: Vec<CarbonTrace>, pricing: PricingCatalog, rtt: RttMatrix) -> Result<Self> {
        let n = regions.len();
        if n == 0 {
            return Err(Error::MissingData("no regions".into()));
        }
        if carbon.len() != n || pricing.instances.len() != n {
            return Err(Error::MissingData("carbon or pricing coverage does not match the region set".into()));
        }
        for (r, trace) in regions.iter().zip(&carbon) {
            if trace.region_id != r.id {
                return Err(Error::Validation(format!("carbon trace {} listed for region {}", trace.region_id, r.id)));
            }
        }
        let rtt = rtt.reordered(&regions.ids())?;
        Ok(Infra { regions, carbon, pricing, rtt })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let regions_path = dir.join("regions.json");
        let text = fs::read_to_string(&regions_path).map_err(|e| Error::io(&regions_path, e))?;
        let list: Vec<Region> =
            serde_json::from_str(&text).map_err(|e| Error::parse(regions_path.display().to_string(), e))?;
        let regions = RegionSet::new(list)?;

        let carbon = regions
            .iter()
            .map(|r| {
                let p = dir.join("carbon").join(format!("{}.csv", r.id));
                if !p.exists() {
                    return Err(Error::MissingData(format!("carbon trace for region {}", r.id)));
                }
                CarbonTrace::load_csv(&r.id, &p)
            })
            .collect::<Result<Vec<_>>>()?;

        let pricing_path = dir.join("pricing.json");
        let text = fs::read_to_string(&pricing_path).map_err(|e| Error::io(&pricing_path, e))?;
        let file: PricingFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(pricing_path.display().to_string(), e))?;
        let ids = regions.ids();
        let instances = ids
            .iter()
            .map(|id| file.instances.get(id).cloned().ok_or_else(|| Error::MissingData(format!("pricing for region {id}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut egress = Vec::with_capacity(ids.len() * ids.len());
        for from in &ids {
            for to in &ids {
                let v = if from == to {
                    file.egress.get(from).and_then(|row| row.get(to)).copied().unwrap_or(0.0)
                } else {
                    *file
                        .egress
                        .get(from)
                        .and_then(|row| row.get(to))
                        .ok_or_else(|| Error::MissingData(format!("egress price {from} -> {to}")))?
                };
                egress.push(v);
            }
        }
        let pricing = PricingCatalog::new(instances, file.storage_price, egress)?;
        let rtt = RttMatrix::load_csv(&dir.join("rtt.csv"))?;
        Self::new(regions, carbon, pricing, rtt)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("carbon")).map_err(|e| Error::io(dir, e))?;
        let regions: Vec<&Region> = self.regions.iter().collect();
        write_json(&dir.join("regions.json"), &regions)?;
        for trace in &self.carbon {
            trace.write_csv(&dir.join("carbon").join(format!("{}.csv", trace.region_id)))?;
        }
        let ids = self.regions.ids();
        let file = PricingFile {
            instances: ids.iter().cloned().zip(self.pricing.instances.iter().cloned()).collect(),
            storage_price: self.pricing.storage_price,
            egress: ids
                .iter()
                .enumerate()
                .map(|(i, from)| {
                    let row = ids
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(j, to)| (to.clone(), self.pricing.egress(i, j)))
                        .collect();
                    (from.clone(), row)
                })
                .collect(),
        };
        write_json(&dir.join("pricing.json"), &file)?;
        self.rtt.write_csv(&dir.join("rtt.csv"))
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.regions.index_of(id)
    }

    /// Carbon intensity of every region at `t`.
    pub fn ci_vector(&self, t: DateTime<Utc>) -> Result<Vec<f64>> {
        self.carbon.iter().map(|c| c.ci_at(t)).collect()
    }

    /// Restricts the bundle to `ids`, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<Self> {
        let keep = ids.iter().map(|id| self.index_of(id)).collect::<Result<Vec<_>>>()?;
        let regions = RegionSet::new(keep.iter().map(|&i| self.regions.get(i).clone()).collect())?;
        Ok(Infra {
            carbon: keep.iter().map(|&i| self.carbon[i].clone()).collect(),
            pricing: self.pricing.subset(&keep),
            rtt: self.rtt.reordered(ids)?,
            regions,
        })
    }

    /// Latest start and earliest end over all carbon traces.
    pub fn carbon_coverage(&self) -> (DateTime<Utc>, DateTime<Utc>) {
        let start = self.carbon.iter().map(|c| c.start()).max().expect("non-empty");
        let end = self.carbon.iter().map(|c| c.end()).min().expect("non-empty");
        (start, end)
    }
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Shortest round-tripping decimal form.
pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v}")
}
