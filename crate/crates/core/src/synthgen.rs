//! Synthetic email-promo dataset generator.
//!
//! Each customer and campaign owns a fixed profile (means and standard
//! deviations of two known features and one hidden feature). A row picks a
//! customer from the normalized relative-frequency distribution, takes the
//! campaign from its contiguous block, draws all six features from the
//! profile Gaussians and labels the row with the angle-based optimal offer.
//!
//! Stream layout: profiles are drawn from `component_seed(seed, "profiles")`;
//! row `n` uses substream `n` of `component_seed(seed, "rows")`. Rows can
//! therefore be produced in any order or in parallel with identical output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{component_seed, Stream};

/// Smallest vector magnitude accepted by [`optimal_offer`].
pub const MIN_NORM: f64 = 1e-12;
/// Angles below this are treated as parallel vectors.
pub const PARALLEL_ANGLE: f64 = 1e-9;

pub const DATASET_FILE: &str = "dataset.csv";
pub const PROFILES_FILE: &str = "profiles.csv";
pub const DATASET_HEADER: &str =
    "index,user_id,campaign_id,cust_f1,cust_f2,cust_hidden,camp_f1,camp_f2,camp_hidden,offer";

const CHUNK_ROWS: usize = 1 << 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub n_samples: usize,
    pub n_customers: usize,
    pub n_campaigns: usize,
    #[serde(default = "defaults::known_mean_range")]
    pub known_mean_range: (f64, f64),
    #[serde(default = "defaults::customer_sd_caps")]
    pub customer_sd_caps: (f64, f64),
    #[serde(default = "defaults::customer_hidden_mean_range")]
    pub customer_hidden_mean_range: (f64, f64),
    #[serde(default = "defaults::customer_hidden_sd_cap")]
    pub customer_hidden_sd_cap: f64,
    #[serde(default = "defaults::campaign_sd_caps")]
    pub campaign_sd_caps: (f64, f64),
    #[serde(default = "defaults::campaign_hidden_mean_range")]
    pub campaign_hidden_mean_range: (f64, f64),
    #[serde(default = "defaults::campaign_hidden_sd_cap")]
    pub campaign_hidden_sd_cap: f64,
    #[serde(default = "defaults::n_offers")]
    pub n_offers: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn known_mean_range() -> (f64, f64) {
        (-0.5, 0.5)
    }
    pub fn customer_sd_caps() -> (f64, f64) {
        (0.2, 0.3)
    }
    pub fn customer_hidden_mean_range() -> (f64, f64) {
        (-0.2, 0.2)
    }
    pub fn customer_hidden_sd_cap() -> f64 {
        0.1
    }
    pub fn campaign_sd_caps() -> (f64, f64) {
        (0.1, 0.05)
    }
    pub fn campaign_hidden_mean_range() -> (f64, f64) {
        (-0.15, 0.15)
    }
    pub fn campaign_hidden_sd_cap() -> f64 {
        0.05
    }
    pub fn n_offers() -> usize {
        10
    }
}

impl GenSpec {
    /// Full-size dataset: 10M rows, 1,000 customers, 100 campaigns.
    pub fn paper_scale(seed: u64) -> Self {
        Self::with_sizes(10_000_000, 1_000, 100, seed)
    }

    /// Desk-scale dataset: 400k rows, 200 customers, 20 campaigns.
    pub fn desk(seed: u64) -> Self {
        Self::with_sizes(400_000, 200, 20, seed)
    }

    /// Default distribution ranges with the given sizes.
    pub fn with_sizes(n_samples: usize, n_customers: usize, n_campaigns: usize, seed: u64) -> Self {
        Self {
            n_samples,
            n_customers,
            n_campaigns,
            known_mean_range: defaults::known_mean_range(),
            customer_sd_caps: defaults::customer_sd_caps(),
            customer_hidden_mean_range: defaults::customer_hidden_mean_range(),
            customer_hidden_sd_cap: defaults::customer_hidden_sd_cap(),
            campaign_sd_caps: defaults::campaign_sd_caps(),
            campaign_hidden_mean_range: defaults::campaign_hidden_mean_range(),
            campaign_hidden_sd_cap: defaults::campaign_hidden_sd_cap(),
            n_offers: defaults::n_offers(),
            seed,
        }
    }

    /// All rule violations, each naming the offending field.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, value) in [
            ("gen.n_samples", self.n_samples),
            ("gen.n_customers", self.n_customers),
            ("gen.n_campaigns", self.n_campaigns),
            ("gen.n_offers", self.n_offers),
        ] {
            if value == 0 {
                v.push(format!("{name} must be positive"));
            }
        }
        if self.n_campaigns > 0 && self.n_samples % self.n_campaigns != 0 {
            v.push(format!(
                "gen.n_campaigns ({}) must divide gen.n_samples ({})",
                self.n_campaigns, self.n_samples
            ));
        }
        for (name, (lo, hi)) in [
            ("gen.known_mean_range", self.known_mean_range),
            ("gen.customer_hidden_mean_range", self.customer_hidden_mean_range),
            ("gen.campaign_hidden_mean_range", self.campaign_hidden_mean_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                v.push(format!("{name} must be a nonempty finite interval, got ({lo}, {hi})"));
            }
        }
        for (name, cap) in [
            ("gen.customer_sd_caps[0]", self.customer_sd_caps.0),
            ("gen.customer_sd_caps[1]", self.customer_sd_caps.1),
            ("gen.customer_hidden_sd_cap", self.customer_hidden_sd_cap),
            ("gen.campaign_sd_caps[0]", self.campaign_sd_caps.0),
            ("gen.campaign_sd_caps[1]", self.campaign_sd_caps.1),
            ("gen.campaign_hidden_sd_cap", self.campaign_hidden_sd_cap),
        ] {
            if !(cap.is_finite() && cap > 0.0) {
                v.push(format!("{name} must be a positive finite real, got {cap}"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Rows per campaign block.
    pub fn block_len(&self) -> usize {
        self.n_samples / self.n_campaigns
    }
}

/// Fixed feature distribution of one customer or campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityProfile {
    pub id: usize,
    pub mean_f1: f64,
    pub mean_f2: f64,
    pub mean_hidden: f64,
    pub sd_f1: f64,
    pub sd_f2: f64,
    pub sd_hidden: f64,
    /// Normalized occurrence probability (customers); `1 / n_campaigns` for campaigns.
    pub relative_frequency: f64,
}

impl EntityProfile {
    /// Draws one (f1, f2, hidden) triple.
    pub fn draw(&self, rng: &mut Stream) -> [f64; 3] {
        [
            rng.normal(self.mean_f1, self.sd_f1),
            rng.normal(self.mean_f2, self.sd_f2),
            rng.normal(self.mean_hidden, self.sd_hidden),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Profiles {
    pub customers: Vec<EntityProfile>,
    pub campaigns: Vec<EntityProfile>,
}

/// One labeled interaction row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub index: usize,
    pub user_id: usize,
    pub campaign_id: usize,
    pub cust_f1: f64,
    pub cust_f2: f64,
    pub cust_hidden: f64,
    pub camp_f1: f64,
    pub camp_f2: f64,
    pub camp_hidden: f64,
    /// Optimal offer, 1-based.
    pub offer: usize,
}

impl Sample {
    pub fn customer_vector(&self) -> [f64; 3] {
        [self.cust_f1, self.cust_f2, self.cust_hidden]
    }

    pub fn campaign_vector(&self) -> [f64; 3] {
        [self.camp_f1, self.camp_f2, self.camp_hidden]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Sample>,
    pub n_offers: usize,
    pub n_customers: usize,
    pub n_campaigns: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenSummary {
    pub rows: usize,
    /// Count per offer, index 0 is offer 1.
    pub label_histogram: Vec<usize>,
    pub customer_min: usize,
    pub customer_max: usize,
}

impl GenSummary {
    pub fn from_rows(rows: &[Sample], n_offers: usize, n_customers: usize) -> Self {
        let mut label_histogram = vec![0; n_offers];
        let mut per_customer = vec![0usize; n_customers];
        for r in rows {
            label_histogram[r.offer - 1] += 1;
            per_customer[r.user_id] += 1;
        }
        Self {
            rows: rows.len(),
            label_histogram,
            customer_min: per_customer.iter().copied().min().unwrap_or(0),
            customer_max: per_customer.iter().copied().max().unwrap_or(0),
        }
    }
}

/// Angle-based optimal offer in `1..=n_offers`.
///
/// Parallel vectors (angle below [`PARALLEL_ANGLE`]) get offer 1; otherwise
/// the angle is mapped onto `n_offers` equal sectors of `[0, π]` with `ceil`.
pub fn optimal_offer(c: [f64; 3], p: [f64; 3], n_offers: usize) -> Result<usize> {
    let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let (nc, np) = (norm(c), norm(p));
    if !(nc > MIN_NORM && np > MIN_NORM) {
        return Err(Error::Degenerate(format!(
            "vector magnitude below {MIN_NORM}: |c| = {nc:e}, |p| = {np:e}"
        )));
    }
    let dot = c[0] * p[0] + c[1] * p[1] + c[2] * p[2];
    let angle = (dot / (nc * np)).clamp(-1.0, 1.0).acos();
    if angle < PARALLEL_ANGLE {
        return Ok(1);
    }
    let sector = (n_offers as f64 / std::f64::consts::PI * angle).ceil() as usize;
    Ok(sector.clamp(1, n_offers))
}

/// Rounds to 9 significant digits and prints the shortest round-trip form.
pub fn format_real(x: f64) -> String {
    format!("{}", round_sig9(x))
}

/// The value a real takes after a trip through the dataset file.
pub fn round_sig9(x: f64) -> f64 {
    // `{:.8e}` keeps 9 significant digits; parsing back yields the nearest double.
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Draws every customer and campaign profile.
pub fn sample_profiles(spec: &GenSpec, rng: &mut Stream) -> Result<Profiles> {
    spec.validate()?;
    let mut customers = Vec::with_capacity(spec.n_customers);
    for id in 0..spec.n_customers {
        let (lo, hi) = spec.known_mean_range;
        let (hlo, hhi) = spec.customer_hidden_mean_range;
        customers.push(EntityProfile {
            id,
            mean_f1: rng.uniform_in(lo, hi),
            mean_f2: rng.uniform_in(lo, hi),
            mean_hidden: rng.uniform_in(hlo, hhi),
            sd_f1: rng.uniform_up_to(spec.customer_sd_caps.0),
            sd_f2: rng.uniform_up_to(spec.customer_sd_caps.1),
            sd_hidden: rng.uniform_up_to(spec.customer_hidden_sd_cap),
            relative_frequency: rng.uniform_open(),
        });
    }
    let total: f64 = customers.iter().map(|c| c.relative_frequency).sum();
    for c in &mut customers {
        c.relative_frequency /= total;
    }
    let mut campaigns = Vec::with_capacity(spec.n_campaigns);
    for id in 0..spec.n_campaigns {
        let (lo, hi) = spec.known_mean_range;
        let (hlo, hhi) = spec.campaign_hidden_mean_range;
        campaigns.push(EntityProfile {
            id,
            mean_f1: rng.uniform_in(lo, hi),
            mean_f2: rng.uniform_in(lo, hi),
            mean_hidden: rng.uniform_in(hlo, hhi),
            sd_f1: rng.uniform_up_to(spec.campaign_sd_caps.0),
            sd_f2: rng.uniform_up_to(spec.campaign_sd_caps.1),
            sd_hidden: rng.uniform_up_to(spec.campaign_hidden_sd_cap),
            relative_frequency: 1.0 / spec.n_campaigns as f64,
        });
    }
    Ok(Profiles {
        customers,
        campaigns,
    })
}

/// Draws the six features of one interaction: (customer triple, campaign triple).
pub fn draw_sample(
    customer: &EntityProfile,
    campaign: &EntityProfile,
    rng: &mut Stream,
) -> ([f64; 3], [f64; 3]) {
    (customer.draw(rng), campaign.draw(rng))
}

/// Immutable state shared by all row workers.
pub struct RowGenerator<'a> {
    spec: &'a GenSpec,
    profiles: &'a Profiles,
    cumulative: Vec<f64>,
    rows_seed: u64,
}

impl<'a> RowGenerator<'a> {
    pub fn new(spec: &'a GenSpec, profiles: &'a Profiles) -> Self {
        let mut acc = 0.0;
        let cumulative = profiles
            .customers
            .iter()
            .map(|c| {
                acc += c.relative_frequency;
                acc
            })
            .collect();
        Self {
            spec,
            profiles,
            cumulative,
            rows_seed: component_seed(spec.seed, "rows"),
        }
    }

    fn pick_customer(&self, u: f64) -> usize {
        let total = *self.cumulative.last().expect("at least one customer");
        let target = u * total;
        self.cumulative
            .partition_point(|&c| c <= target)
            .min(self.cumulative.len() - 1)
    }

    /// Row `index`, drawn from its own substream.
    pub fn row(&self, index: usize) -> Sample {
        let mut rng = Stream::substream(self.rows_seed, index as u64);
        let user_id = self.pick_customer(rng.uniform());
        let campaign_id = index / self.spec.block_len();
        let customer = &self.profiles.customers[user_id];
        let campaign = &self.profiles.campaigns[campaign_id];
        loop {
            let (c, p) = draw_sample(customer, campaign, &mut rng);
            let c = c.map(round_sig9);
            let p = p.map(round_sig9);
            // Near-zero vectors have no angle: redraw from the same substream.
            if let Ok(offer) = optimal_offer(c, p, self.spec.n_offers) {
                return Sample {
                    index,
                    user_id,
                    campaign_id,
                    cust_f1: c[0],
                    cust_f2: c[1],
                    cust_hidden: c[2],
                    camp_f1: p[0],
                    camp_f2: p[1],
                    camp_hidden: p[2],
                    offer,
                };
            }
        }
    }

    pub fn rows(&self, range: Range<usize>) -> Vec<Sample> {
        range.map(|i| self.row(i)).collect()
    }

    pub fn rows_parallel(&self, range: Range<usize>) -> Vec<Sample> {
        range.into_par_iter().map(|i| self.row(i)).collect()
    }
}

fn profiles_for(spec: &GenSpec) -> Result<Profiles> {
    let mut rng = Stream::new(component_seed(spec.seed, "profiles"));
    sample_profiles(spec, &mut rng)
}

/// Generates the whole dataset in memory (rows produced in parallel).
pub fn generate_in_memory(spec: &GenSpec) -> Result<(Profiles, Dataset)> {
    let profiles = profiles_for(spec)?;
    let rows = RowGenerator::new(spec, &profiles).rows_parallel(0..spec.n_samples);
    let dataset = Dataset {
        rows,
        n_offers: spec.n_offers,
        n_customers: spec.n_customers,
        n_campaigns: spec.n_campaigns,
    };
    Ok((profiles, dataset))
}

/// Serial counterpart of [`generate_in_memory`].
pub fn generate_serial(spec: &GenSpec) -> Result<(Profiles, Dataset)> {
    let profiles = profiles_for(spec)?;
    let rows = RowGenerator::new(spec, &profiles).rows(0..spec.n_samples);
    let dataset = Dataset {
        rows,
        n_offers: spec.n_offers,
        n_customers: spec.n_customers,
        n_campaigns: spec.n_campaigns,
    };
    Ok((profiles, dataset))
}

/// Streams the dataset CSV to `out`, generating chunks in parallel.
pub fn generate<W: Write>(spec: &GenSpec, out: &mut W) -> Result<GenSummary> {
    let profiles = profiles_for(spec)?;
    let gen = RowGenerator::new(spec, &profiles);
    let mut histogram = vec![0usize; spec.n_offers];
    let mut per_customer = vec![0usize; spec.n_customers];
    let mut written = 0usize;
    let partial = |rows_written, source| Error::PartialOutput {
        rows_written,
        source,
    };
    writeln!(out, "{DATASET_HEADER}").map_err(|e| partial(0, e))?;
    let mut start = 0;
    while start < spec.n_samples {
        let end = (start + CHUNK_ROWS).min(spec.n_samples);
        let rows = gen.rows_parallel(start..end);
        for row in &rows {
            write_row(out, row).map_err(|e| partial(written, e))?;
            written += 1;
            histogram[row.offer - 1] += 1;
            per_customer[row.user_id] += 1;
        }
        start = end;
    }
    out.flush().map_err(|e| partial(written, e))?;
    Ok(GenSummary {
        rows: written,
        label_histogram: histogram,
        customer_min: per_customer.iter().copied().min().unwrap_or(0),
        customer_max: per_customer.iter().copied().max().unwrap_or(0),
    })
}

fn write_row<W: Write>(out: &mut W, r: &Sample) -> std::io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{}",
        r.index,
        r.user_id,
        r.campaign_id,
        format_real(r.cust_f1),
        format_real(r.cust_f2),
        format_real(r.cust_hidden),
        format_real(r.camp_f1),
        format_real(r.camp_f2),
        format_real(r.camp_hidden),
        r.offer
    )
}

pub fn write_dataset_csv<W: Write>(rows: &[Sample], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{DATASET_HEADER}")?;
    for r in rows {
        write_row(out, r)?;
    }
    out.flush()
}

/// Profile sidecar: a `#`-prefixed spec echo line followed by one CSV row per entity.
pub fn write_profiles_csv<W: Write>(
    spec: &GenSpec,
    profiles: &Profiles,
    out: &mut W,
) -> std::io::Result<()> {
    let echo = serde_json::to_string(spec).expect("GenSpec serializes");
    writeln!(out, "# seed={} genspec={}", spec.seed, echo)?;
    writeln!(
        out,
        "kind,id,mean_f1,mean_f2,mean_hidden,sd_f1,sd_f2,sd_hidden,relative_frequency"
    )?;
    for (kind, list) in [("customer", &profiles.customers), ("campaign", &profiles.campaigns)] {
        for p in list.iter() {
            writeln!(
                out,
                "{kind},{},{},{},{},{},{},{},{}",
                p.id,
                p.mean_f1,
                p.mean_f2,
                p.mean_hidden,
                p.sd_f1,
                p.sd_f2,
                p.sd_hidden,
                p.relative_frequency
            )?;
        }
    }
    out.flush()
}

/// Reads a profile sidecar back into the spec echo and the profile tables.
pub fn read_profiles_csv(path: &Path) -> Result<(GenSpec, Profiles)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or_default();
    let json = first
        .split_once("genspec=")
        .map(|(_, j)| j)
        .ok_or_else(|| Error::Data(format!("{}: missing genspec echo", path.display())))?;
    let spec: GenSpec = serde_json::from_str(json)
        .map_err(|e| Error::Data(format!("{}: bad genspec echo: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut profiles = Profiles {
        customers: Vec::new(),
        campaigns: Vec::new(),
    };
    #[derive(Deserialize)]
    struct Row {
        kind: String,
        #[serde(flatten)]
        profile: EntityProfile,
    }
    for rec in reader.deserialize::<Row>() {
        let row = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        match row.kind.as_str() {
            "customer" => profiles.customers.push(row.profile),
            "campaign" => profiles.campaigns.push(row.profile),
            other => return Err(Error::Data(format!("unknown profile kind {other:?}"))),
        }
    }
    Ok((spec, profiles))
}

/// Generates `dataset.csv` and `profiles.csv` under `dir`.
pub fn generate_to_dir(spec: &GenSpec, dir: &Path) -> Result<GenSummary> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let profiles = profiles_for(spec)?;
    let ppath = dir.join(PROFILES_FILE);
    let mut pf = BufWriter::new(File::create(&ppath).map_err(|e| Error::io(&ppath, e))?);
    write_profiles_csv(spec, &profiles, &mut pf).map_err(|e| Error::io(&ppath, e))?;
    let dpath = dir.join(DATASET_FILE);
    let mut df = BufWriter::new(File::create(&dpath).map_err(|e| Error::io(&dpath, e))?);
    generate(spec, &mut df)
}

/// Loads `dataset.csv` (and the spec echo from `profiles.csv`) from `dir`.
pub fn load_dataset_dir(dir: &Path) -> Result<(GenSpec, Dataset)> {
    let (spec, _) = read_profiles_csv(&dir.join(PROFILES_FILE))?;
    let rows = read_dataset_csv(&dir.join(DATASET_FILE))?;
    for r in &rows {
        if r.user_id >= spec.n_customers || r.campaign_id >= spec.n_campaigns {
            return Err(Error::Data(format!("row {}: id out of range", r.index)));
        }
        if r.offer == 0 || r.offer > spec.n_offers {
            return Err(Error::Data(format!("row {}: offer {} out of range", r.index, r.offer)));
        }
    }
    let dataset = Dataset {
        rows,
        n_offers: spec.n_offers,
        n_customers: spec.n_customers,
        n_campaigns: spec.n_campaigns,
    };
    Ok((spec, dataset))
}

pub fn read_dataset_csv(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if headers != DATASET_HEADER {
        return Err(Error::Data(format!(
            "{}: unexpected header {headers:?}",
            path.display()
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
        .collect()
}

/// Indices of rows whose stored label disagrees with a fresh labeling of their features.
pub fn mislabeled_rows(rows: &[Sample], n_offers: usize) -> Vec<usize> {
    rows.iter()
        .filter(|r| {
            optimal_offer(r.customer_vector(), r.campaign_vector(), n_offers)
                .map_or(true, |o| o != r.offer)
        })
        .map(|r| r.index)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn offer_examples() {
        assert_eq!(optimal_offer([1., 0., 0.], [1., 0., 0.], 10).unwrap(), 1);
        assert_eq!(optimal_offer([1., 0., 0.], [0., 1., 0.], 10).unwrap(), 5);
        assert_eq!(optimal_offer([1., 0., 0.], [-1., 0., 0.], 10).unwrap(), 10);
        let a = 0.31 * PI;
        assert_eq!(optimal_offer([1., 0., 0.], [a.cos(), a.sin(), 0.], 10).unwrap(), 4);
    }

    #[test]
    fn zero_vector_is_degenerate() {
        assert!(matches!(
            optimal_offer([0., 0., 0.], [1., 0., 0.], 10),
            Err(Error::Degenerate(_))
        ));
        assert!(optimal_offer([1., 0., 0.], [1e-13, 0., 0.], 10).is_err());
    }

    #[test]
    fn paper_default_profiles_respect_ranges() {
        let spec = GenSpec::paper_scale(1);
        let p = sample_profiles(&spec, &mut Stream::new(1)).unwrap();
        assert_eq!(p.customers.len(), 1000);
        assert_eq!(p.campaigns.len(), 100);
        for c in &p.customers {
            assert!(c.mean_f1 > -0.5 && c.mean_f1 < 0.5);
            assert!(c.sd_f1 > 0.0 && c.sd_f1 <= 0.2);
            assert!(c.sd_f2 > 0.0 && c.sd_f2 <= 0.3);
            assert!(c.mean_hidden > -0.2 && c.mean_hidden < 0.2);
            assert!(c.relative_frequency > 0.0 && c.relative_frequency < 1.0);
        }
        for k in &p.campaigns {
            assert!(k.sd_f2 > 0.0 && k.sd_f2 <= 0.05);
            assert!(k.sd_hidden > 0.0 && k.sd_hidden <= 0.05);
            assert!(k.mean_hidden > -0.15 && k.mean_hidden < 0.15);
        }
        let total: f64 = p.customers.iter().map(|c| c.relative_frequency).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_customer_has_unit_frequency() {
        let spec = GenSpec::with_sizes(10, 1, 1, 3);
        let p = sample_profiles(&spec, &mut Stream::new(3)).unwrap();
        assert_eq!(p.customers.len(), 1);
        assert_eq!(p.customers[0].relative_frequency, 1.0);
    }

    #[test]
    fn profiles_are_deterministic() {
        let spec = GenSpec::desk(9);
        let a = sample_profiles(&spec, &mut Stream::new(9)).unwrap();
        let b = sample_profiles(&spec, &mut Stream::new(9)).unwrap();
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        write_profiles_csv(&spec, &a, &mut fa).unwrap();
        write_profiles_csv(&spec, &b, &mut fb).unwrap();
        assert_eq!(fa, fb);
    }

    #[test]
    fn invalid_spec_names_field() {
        let mut spec = GenSpec::with_sizes(100, 10, 7, 0);
        spec.campaign_hidden_sd_cap = 0.0;
        let v = spec.violations();
        assert_eq!(v.len(), 2);
        assert!(v[0].contains("gen.n_campaigns"));
        assert!(v[1].contains("gen.campaign_hidden_sd_cap"));
        assert!(sample_profiles(&spec, &mut Stream::new(0)).is_err());
    }

    fn profile(mean: f64, sd: f64) -> EntityProfile {
        EntityProfile {
            id: 0,
            mean_f1: mean,
            mean_f2: -mean,
            mean_hidden: 0.1,
            sd_f1: sd,
            sd_f2: sd,
            sd_hidden: sd,
            relative_frequency: 1.0,
        }
    }

    #[test]
    fn zero_sd_draws_means() {
        let c = profile(0.3, 0.0);
        let (cf, pf) = draw_sample(&c, &c, &mut Stream::new(1));
        assert_eq!(cf, [0.3, -0.3, 0.1]);
        assert_eq!(pf, [0.3, -0.3, 0.1]);
    }

    #[test]
    fn sample_mean_concentrates() {
        let c = profile(0.25, 0.2);
        let mut rng = Stream::new(77);
        let n = 10_000;
        let mean = (0..n).map(|_| c.draw(&mut rng)[0]).sum::<f64>() / n as f64;
        assert!((mean - 0.25).abs() < 4.0 * 0.2 / (n as f64).sqrt());
    }

    #[test]
    fn distinct_seeds_distinct_features() {
        let c = profile(0.25, 0.2);
        let a = c.draw(&mut Stream::new(1));
        let b = c.draw(&mut Stream::new(2));
        assert_ne!(a, b);
    }

    #[test]
    fn campaigns_occupy_blocks() {
        let spec = GenSpec::with_sizes(100, 5, 10, 4);
        let (_, ds) = generate_in_memory(&spec).unwrap();
        for r in &ds.rows {
            assert_eq!(r.campaign_id, r.index / 10);
        }
        assert!(mislabeled_rows(&ds.rows, 10).is_empty());
    }

    #[test]
    fn formatting_keeps_nine_digits() {
        assert_eq!(format_real(0.123456789123), "0.123456789");
        assert_eq!(format_real(-1.5), "-1.5");
        assert_eq!(format_real(1.0e-5), "0.00001");
        let x = 0.987654321987;
        assert_eq!(format_real(x).parse::<f64>().unwrap(), round_sig9(x));
    }

    #[test]
    fn streamed_file_matches_in_memory_rows() {
        let spec = GenSpec::with_sizes(500, 7, 5, 21);
        let mut streamed = Vec::new();
        let summary = generate(&spec, &mut streamed).unwrap();
        let (_, ds) = generate_serial(&spec).unwrap();
        let mut direct = Vec::new();
        write_dataset_csv(&ds.rows, &mut direct).unwrap();
        assert_eq!(streamed, direct);
        assert_eq!(summary, GenSummary::from_rows(&ds.rows, 10, 7));
    }

    struct FailAfter(usize);
    impl Write for FailAfter {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            if self.0 == 0 {
                return Err(std::io::Error::other("disk full"));
            }
            self.0 -= 1;
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn io_failure_reports_partial_output() {
        let spec = GenSpec::with_sizes(100, 3, 2, 0);
        // header takes one write, each row a handful
        let err = generate(&spec, &mut FailAfter(40)).unwrap_err();
        match err {
            Error::PartialOutput { rows_written, .. } => assert!(rows_written < 100),
            other => panic!("unexpected {other:?}"),
        }
    }
}
