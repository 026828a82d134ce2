//! Dataset model, split management, bit-exact on-disk formats, and a
//! synthetic two-modality dataset generator.
//!
//! A dataset is a set of (image feature, text feature) pairs with dense ids
//! `0..n`, partitioned into three disjoint splits:
//!
//! - **labeled**: items with training-visible label sets,
//! - **unlabeled**: items whose features are visible to training but whose
//!   ground-truth labels (when known at all) are stored separately and are
//!   only reachable through [`Dataset::eval_view`],
//! - **query**: held-out items used for evaluation; their labels are also
//!   evaluation-only.
//!
//! [`UnlabeledItem`] deliberately has no label field; the type system is
//! the guarantee that training code cannot peek.
//!
//! On-disk layout is a JSON manifest plus one binary feature file per
//! modality (see `docs/FORMATS.md`); writing is deterministic so that equal
//! configs and seeds produce byte-identical files.

use crate::model::Modality;
use crate::tensor::Vector;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub type ItemId = u32;
pub type LabelId = u32;
pub type LabelSet = BTreeSet<LabelId>;

/// An item from the labeled split; `labels` is never empty.
#[derive(Debug, Clone)]
pub struct LabeledItem {
    pub id: ItemId,
    pub image: Vector,
    pub text: Vector,
    pub labels: LabelSet,
}

/// An item from the unlabeled split: features only. Any known ground truth
/// lives in the dataset's evaluation-only section, not here.
#[derive(Debug, Clone)]
pub struct UnlabeledItem {
    pub id: ItemId,
    pub image: Vector,
    pub text: Vector,
}

/// A held-out query item: features only, labels evaluation-only.
#[derive(Debug, Clone)]
pub struct QueryItem {
    pub id: ItemId,
    pub image: Vector,
    pub text: Vector,
}

impl LabeledItem {
    pub fn feature(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Image => self.image.as_slice(),
            Modality::Text => self.text.as_slice(),
        }
    }
}

impl UnlabeledItem {
    pub fn feature(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Image => self.image.as_slice(),
            Modality::Text => self.text.as_slice(),
        }
    }
}

impl QueryItem {
    pub fn feature(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Image => self.image.as_slice(),
            Modality::Text => self.text.as_slice(),
        }
    }
}

/// In-memory dataset. Immutable after construction; share it behind a
/// reference across threads freely.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    image_dim: usize,
    text_dim: usize,
    labeled: Vec<LabeledItem>,
    unlabeled: Vec<UnlabeledItem>,
    queries: Vec<QueryItem>,
    eval_labels: BTreeMap<ItemId, LabelSet>,
}

impl Dataset {
    /// Validating constructor. Enforces: dense unique ids covering
    /// `0..total`, disjoint splits, consistent feature dimensions,
    /// non-empty label sets on labeled items, and evaluation labels for
    /// every query item.
    pub fn new(
        name: String,
        image_dim: usize,
        text_dim: usize,
        labeled: Vec<LabeledItem>,
        unlabeled: Vec<UnlabeledItem>,
        queries: Vec<QueryItem>,
        eval_labels: BTreeMap<ItemId, LabelSet>,
    ) -> Result<Self> {
        let total = labeled.len() + unlabeled.len() + queries.len();
        if total == 0 {
            return Err(Error::Data("dataset has no items".into()));
        }
        let mut seen = HashSet::with_capacity(total);
        let mut check = |id: ItemId, img: &Vector, txt: &Vector| -> Result<()> {
            if (id as usize) >= total {
                return Err(Error::Data(format!(
                    "item id {id} out of range for {total} items"
                )));
            }
            if !seen.insert(id) {
                return Err(Error::Data(format!("duplicate item id {id}")));
            }
            if img.dim() != image_dim {
                return Err(Error::Data(format!(
                    "item {id}: image dim {} != {image_dim}",
                    img.dim()
                )));
            }
            if txt.dim() != text_dim {
                return Err(Error::Data(format!(
                    "item {id}: text dim {} != {text_dim}",
                    txt.dim()
                )));
            }
            Ok(())
        };
        for it in &labeled {
            check(it.id, &it.image, &it.text)?;
            if it.labels.is_empty() {
                return Err(Error::Data(format!("labeled item {} has no labels", it.id)));
            }
        }
        for it in &unlabeled {
            check(it.id, &it.image, &it.text)?;
        }
        for it in &queries {
            check(it.id, &it.image, &it.text)?;
            if !eval_labels.contains_key(&it.id) {
                return Err(Error::Data(format!(
                    "query item {} has no evaluation labels",
                    it.id
                )));
            }
        }
        for id in eval_labels.keys() {
            if seen.contains(id)
                && labeled.iter().any(|l| l.id == *id)
            {
                return Err(Error::Data(format!(
                    "item {id} is labeled but also appears in eval_labels"
                )));
            }
            if !seen.contains(id) {
                return Err(Error::Data(format!("eval_labels refers to unknown id {id}")));
            }
        }
        Ok(Dataset {
            name,
            image_dim,
            text_dim,
            labeled,
            unlabeled,
            queries,
            eval_labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn image_dim(&self) -> usize {
        self.image_dim
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    pub fn dim(&self, m: Modality) -> usize {
        match m {
            Modality::Image => self.image_dim,
            Modality::Text => self.text_dim,
        }
    }

    pub fn labeled(&self) -> &[LabeledItem] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[UnlabeledItem] {
        &self.unlabeled
    }

    pub fn queries(&self) -> &[QueryItem] {
        &self.queries
    }

    /// Number of retrieval-database items (labeled + unlabeled; the
    /// database is also the training set).
    pub fn database_size(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    /// Evaluation-side view: the only way to reach hidden ground-truth
    /// labels of unlabeled and query items.
    pub fn eval_view(&self) -> EvalView<'_> {
        EvalView { dataset: self }
    }
}

/// Read-only evaluation view over a dataset, including hidden labels.
#[derive(Clone, Copy)]
pub struct EvalView<'a> {
    dataset: &'a Dataset,
}

/// One database entry as seen by the evaluator.
pub struct DbEntry<'a> {
    pub id: ItemId,
    pub image: &'a [f64],
    pub text: &'a [f64],
    /// `None` for unlabeled items whose ground truth is unknown; such items
    /// count as non-relevant for every query.
    pub labels: Option<&'a LabelSet>,
}

impl<'a> EvalView<'a> {
    /// Labels of any item: training labels for labeled items, hidden
    /// evaluation labels otherwise.
    pub fn labels_of(&self, id: ItemId) -> Option<&'a LabelSet> {
        if let Some(item) = self.dataset.labeled.iter().find(|l| l.id == id) {
            return Some(&item.labels);
        }
        self.dataset.eval_labels.get(&id)
    }

    /// Database iteration order: labeled items then unlabeled items, in
    /// stored order.
    pub fn database(&self) -> impl Iterator<Item = DbEntry<'a>> + '_ {
        let ds = self.dataset;
        ds.labeled
            .iter()
            .map(|l| DbEntry {
                id: l.id,
                image: l.image.as_slice(),
                text: l.text.as_slice(),
                labels: Some(&l.labels),
            })
            .chain(ds.unlabeled.iter().map(move |u| DbEntry {
                id: u.id,
                image: u.image.as_slice(),
                text: u.text.as_slice(),
                labels: ds.eval_labels.get(&u.id),
            }))
    }

    pub fn queries(&self) -> &'a [QueryItem] {
        &self.dataset.queries
    }
}

// ---------------------------------------------------------------------------
// binary feature files
// ---------------------------------------------------------------------------

const FEATURE_MAGIC: &[u8; 4] = b"CMHF";
const FEATURE_VERSION: u32 = 1;

/// Writes a feature file: magic, version, count, dim, then row-major
/// 32-bit little-endian floats.
pub fn write_feature_file<'r>(
    path: &Path,
    dim: usize,
    rows: impl ExactSizeIterator<Item = &'r [f64]>,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let count = rows.len() as u64;
    let io_err = |e| Error::io(path.display().to_string(), e);
    w.write_all(FEATURE_MAGIC).map_err(io_err)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&count.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
    for row in rows {
        if row.len() != dim {
            return Err(Error::Data(format!(
                "feature row has dim {} (expected {dim}) while writing {}",
                row.len(),
                path.display()
            )));
        }
        for &v in row {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Reads a feature file written by [`write_feature_file`]. Values are
/// widened back to `f64` (exact). Non-finite entries are rejected.
pub fn read_feature_file(path: &Path) -> Result<(usize, Vec<Vec<f64>>)> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let loc = || path.display().to_string();
    if bytes.len() < 20 || &bytes[0..4] != FEATURE_MAGIC {
        return Err(Error::Data(format!("{}: not a feature file", loc())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported feature file version {version}",
            loc()
        )));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let expected = 20 + count * dim * 4;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "{}: size {} does not match header (count {count} × dim {dim})",
            loc(),
            bytes.len()
        )));
    }
    let mut rows = Vec::with_capacity(count);
    let mut off = 20;
    for r in 0..count {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
            if !v.is_finite() {
                return Err(Error::Data(format!("{}: non-finite value in row {r}", loc())));
            }
            row.push(v);
            off += 4;
        }
        rows.push(row);
    }
    Ok((dim, rows))
}

const CODE_MAGIC: &[u8; 4] = b"CMHC";
const CODE_VERSION: u32 = 1;

/// Writes binarized codes: magic, version, count, code length in bits, then
/// one `ceil(bits/8)`-byte row per item (LSB-first within each byte,
/// padding bits zero).
pub fn write_code_file(path: &Path, codes: &[crate::model::HashCode]) -> Result<()> {
    let bits = codes.first().map_or(0, |c| c.len_bits());
    if codes.iter().any(|c| c.len_bits() != bits) {
        return Err(Error::Data("codes of mixed lengths in one file".into()));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    w.write_all(CODE_MAGIC).map_err(io_err)?;
    w.write_all(&CODE_VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(codes.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(bits as u32).to_le_bytes()).map_err(io_err)?;
    for code in codes {
        w.write_all(&code.to_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Reads a code file written by [`write_code_file`].
pub fn read_code_file(path: &Path) -> Result<Vec<crate::model::HashCode>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let loc = || path.display().to_string();
    if bytes.len() < 20 || &bytes[0..4] != CODE_MAGIC {
        return Err(Error::Data(format!("{}: not a code file", loc())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CODE_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported code file version {version}",
            loc()
        )));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let bits = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let row = bits.div_ceil(8);
    if bytes.len() != 20 + count * row {
        return Err(Error::Data(format!(
            "{}: size does not match header (count {count} × {bits} bits)",
            loc()
        )));
    }
    (0..count)
        .map(|i| {
            crate::model::HashCode::from_bytes(bits, &bytes[20 + i * row..20 + (i + 1) * row])
                .map_err(|e| Error::Data(format!("{}: row {i}: {e}", loc())))
        })
        .collect()
}

/// SHA-256 of a file, lowercase hex.
pub fn sha256_hex(path: &Path) -> Result<String> {
    let mut file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

/// `(id, labels)` pair in the manifest; kept as explicit entries so the
/// JSON form is order-stable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub id: ItemId,
    pub labels: Vec<LabelId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitLists {
    pub labeled: Vec<ItemId>,
    pub unlabeled: Vec<ItemId>,
    pub query: Vec<ItemId>,
}

/// JSON manifest describing a dataset on disk. Feature paths are relative
/// to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub name: String,
    pub image_dim: u32,
    pub text_dim: u32,
    pub image_features: String,
    pub text_features: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_sha256: Option<String>,
    pub splits: SplitLists,
    /// Training-visible labels, one entry per labeled item.
    pub labels: Vec<LabelEntry>,
    /// Evaluation-only ground truth for unlabeled and query items. Entries
    /// for unlabeled items are optional; query items must be covered.
    pub eval_labels: Vec<LabelEntry>,
}

const MANIFEST_VERSION: u32 = 1;

/// Loads and fully validates a dataset from a manifest path. Every failure
/// names the offending file or id.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        Error::Data(format!("{}: invalid manifest: {e}", manifest_path.display()))
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported manifest version {}",
            manifest_path.display(),
            manifest.version
        )));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let image_path = base.join(&manifest.image_features);
    let text_path = base.join(&manifest.text_features);

    for (declared, path) in [
        (&manifest.image_sha256, &image_path),
        (&manifest.text_sha256, &text_path),
    ] {
        if let Some(expected) = declared {
            let actual = sha256_hex(path)?;
            if &actual != expected {
                return Err(Error::Data(format!(
                    "{}: checksum mismatch (manifest {expected}, file {actual})",
                    path.display()
                )));
            }
        }
    }

    let (image_dim, image_rows) = read_feature_file(&image_path)?;
    let (text_dim, text_rows) = read_feature_file(&text_path)?;
    if image_dim != manifest.image_dim as usize {
        return Err(Error::Data(format!(
            "{}: image dim {} does not match manifest dim {}",
            image_path.display(),
            image_dim,
            manifest.image_dim
        )));
    }
    if text_dim != manifest.text_dim as usize {
        return Err(Error::Data(format!(
            "{}: text dim {} does not match manifest dim {}",
            text_path.display(),
            text_dim,
            manifest.text_dim
        )));
    }
    if image_rows.len() != text_rows.len() {
        return Err(Error::Data(format!(
            "feature files disagree on item count: {} has {}, {} has {}",
            image_path.display(),
            image_rows.len(),
            text_path.display(),
            text_rows.len()
        )));
    }

    let total = image_rows.len();
    let fetch = |id: ItemId| -> Result<(Vector, Vector)> {
        let idx = id as usize;
        if idx >= total {
            return Err(Error::Data(format!(
                "{}: split id {id} exceeds feature count {total}",
                manifest_path.display()
            )));
        }
        Ok((
            Vector::new(image_rows[idx].clone())?,
            Vector::new(text_rows[idx].clone())?,
        ))
    };

    let labels_by_id: BTreeMap<ItemId, &LabelEntry> =
        manifest.labels.iter().map(|e| (e.id, e)).collect();
    if labels_by_id.len() != manifest.labels.len() {
        return Err(Error::Data(format!(
            "{}: duplicate ids in labels section",
            manifest_path.display()
        )));
    }

    let mut labeled = Vec::with_capacity(manifest.splits.labeled.len());
    for &id in &manifest.splits.labeled {
        let (image, text) = fetch(id)?;
        let entry = labels_by_id.get(&id).ok_or_else(|| {
            Error::Data(format!(
                "{}: labeled item {id} missing from labels section",
                manifest_path.display()
            ))
        })?;
        labeled.push(LabeledItem {
            id,
            image,
            text,
            labels: entry.labels.iter().cloned().collect(),
        });
    }
    let mut unlabeled = Vec::with_capacity(manifest.splits.unlabeled.len());
    for &id in &manifest.splits.unlabeled {
        let (image, text) = fetch(id)?;
        unlabeled.push(UnlabeledItem { id, image, text });
    }
    let mut queries = Vec::with_capacity(manifest.splits.query.len());
    for &id in &manifest.splits.query {
        let (image, text) = fetch(id)?;
        queries.push(QueryItem { id, image, text });
    }

    let mut eval_labels = BTreeMap::new();
    for entry in &manifest.eval_labels {
        if eval_labels
            .insert(entry.id, entry.labels.iter().cloned().collect::<LabelSet>())
            .is_some()
        {
            return Err(Error::Data(format!(
                "{}: duplicate ids in eval_labels section ({})",
                manifest_path.display(),
                entry.id
            )));
        }
    }

    Dataset::new(
        manifest.name.clone(),
        image_dim,
        text_dim,
        labeled,
        unlabeled,
        queries,
        eval_labels,
    )
}

/// Writes a dataset to `dir` as `manifest.json` + two feature files, with
/// checksums. Returns the manifest path. Output is deterministic.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let total = dataset.labeled.len() + dataset.unlabeled.len() + dataset.queries.len();

    // rows indexed by id; ids are dense by the Dataset invariant
    let mut image_rows: Vec<&[f64]> = vec![&[]; total];
    let mut text_rows: Vec<&[f64]> = vec![&[]; total];
    for it in &dataset.labeled {
        image_rows[it.id as usize] = it.image.as_slice();
        text_rows[it.id as usize] = it.text.as_slice();
    }
    for it in &dataset.unlabeled {
        image_rows[it.id as usize] = it.image.as_slice();
        text_rows[it.id as usize] = it.text.as_slice();
    }
    for it in &dataset.queries {
        image_rows[it.id as usize] = it.image.as_slice();
        text_rows[it.id as usize] = it.text.as_slice();
    }

    let image_file = dir.join("images.feat");
    let text_file = dir.join("texts.feat");
    write_feature_file(&image_file, dataset.image_dim, image_rows.into_iter())?;
    write_feature_file(&text_file, dataset.text_dim, text_rows.into_iter())?;

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        name: dataset.name.clone(),
        image_dim: dataset.image_dim as u32,
        text_dim: dataset.text_dim as u32,
        image_features: "images.feat".into(),
        text_features: "texts.feat".into(),
        image_sha256: Some(sha256_hex(&image_file)?),
        text_sha256: Some(sha256_hex(&text_file)?),
        splits: SplitLists {
            labeled: dataset.labeled.iter().map(|i| i.id).collect(),
            unlabeled: dataset.unlabeled.iter().map(|i| i.id).collect(),
            query: dataset.queries.iter().map(|i| i.id).collect(),
        },
        labels: dataset
            .labeled
            .iter()
            .map(|i| LabelEntry {
                id: i.id,
                labels: i.labels.iter().cloned().collect(),
            })
            .collect(),
        eval_labels: dataset
            .eval_labels
            .iter()
            .map(|(&id, set)| LabelEntry {
                id,
                labels: set.iter().cloned().collect(),
            })
            .collect(),
    };
    let manifest_path = dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(&manifest_path, json)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    Ok(manifest_path)
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

/// Configuration of the synthetic two-modality generator. Per class a
/// latent center is drawn; each item perturbs its class center in latent
/// space, and the two modalities are independent random linear projections
/// of the item latent plus observation noise.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub latent_dim: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub noise: f64,
    pub labeled: usize,
    pub unlabeled: usize,
    pub query: usize,
    pub seed: u64,
    pub name: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 5,
            latent_dim: 16,
            image_dim: 128,
            text_dim: 64,
            noise: 0.1,
            labeled: 500,
            unlabeled: 2000,
            query: 250,
            seed: 7,
            name: "synth".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.latent_dim == 0 {
            return Err(Error::Config("num_classes and latent_dim must be >= 1".into()));
        }
        if self.image_dim == 0 || self.text_dim == 0 {
            return Err(Error::Config("feature dims must be >= 1".into()));
        }
        if self.labeled == 0 || self.unlabeled == 0 || self.query == 0 {
            return Err(Error::Config("split counts must be > 0".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be >= 0, got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

/// A generated dataset plus the per-item latents it was built from. The
/// latents never leave this struct into the dataset files; they exist so
/// tests can build latent-space oracles.
pub struct SynthOutput {
    pub dataset: Dataset,
    pub latents: BTreeMap<ItemId, Vec<f64>>,
    pub classes: BTreeMap<ItemId, u32>,
}

/// Generates a synthetic dataset. Deterministic in the config (including
/// its seed); features are rounded through `f32` so an immediate
/// save→load round trip is the identity.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = StandardNormal;
    let normal_vec = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| normal.sample(rng)).collect()
    };

    let centers: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| normal_vec(&mut rng, cfg.latent_dim))
        .collect();
    // projection matrices, entries scaled so feature magnitudes stay O(1)
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let proj = |rng: &mut ChaCha8Rng, out_dim: usize, latent: usize| -> Vec<Vec<f64>> {
        (0..out_dim)
            .map(|_| {
                (0..latent)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(rng);
                        g * scale
                    })
                    .collect()
            })
            .collect()
    };
    let map_image = proj(&mut rng, cfg.image_dim, cfg.latent_dim);
    let map_text = proj(&mut rng, cfg.text_dim, cfg.latent_dim);

    let apply = |map: &[Vec<f64>], z: &[f64]| -> Vec<f64> {
        map.iter()
            .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    };
    let round_f32 = |mut v: Vec<f64>| -> Vec<f64> {
        for x in v.iter_mut() {
            *x = *x as f32 as f64;
        }
        v
    };

    let mut latents = BTreeMap::new();
    let mut classes = BTreeMap::new();
    let mut next_id: ItemId = 0;
    let mut make_item =
        |rng: &mut ChaCha8Rng, within_split: usize| -> (ItemId, u32, Vector, Vector) {
            let class = (within_split % cfg.num_classes) as u32;
            let mut z = centers[class as usize].clone();
            for zi in z.iter_mut() {
                let g: f64 = StandardNormal.sample(rng);
                *zi += cfg.noise * g;
            }
            let mut image = apply(&map_image, &z);
            for v in image.iter_mut() {
                let g: f64 = StandardNormal.sample(rng);
                *v += cfg.noise * g;
            }
            let mut text = apply(&map_text, &z);
            for v in text.iter_mut() {
                let g: f64 = StandardNormal.sample(rng);
                *v += cfg.noise * g;
            }
            let id = next_id;
            next_id += 1;
            latents.insert(id, z);
            classes.insert(id, class);
            (
                id,
                class,
                Vector::from_raw(round_f32(image)),
                Vector::from_raw(round_f32(text)),
            )
        };

    let mut labeled = Vec::with_capacity(cfg.labeled);
    for i in 0..cfg.labeled {
        let (id, class, image, text) = make_item(&mut rng, i);
        labeled.push(LabeledItem {
            id,
            image,
            text,
            labels: std::iter::once(class).collect(),
        });
    }
    let mut eval_labels = BTreeMap::new();
    let mut unlabeled = Vec::with_capacity(cfg.unlabeled);
    for i in 0..cfg.unlabeled {
        let (id, class, image, text) = make_item(&mut rng, i);
        unlabeled.push(UnlabeledItem { id, image, text });
        eval_labels.insert(id, std::iter::once(class).collect::<LabelSet>());
    }
    let mut queries = Vec::with_capacity(cfg.query);
    for i in 0..cfg.query {
        let (id, class, image, text) = make_item(&mut rng, i);
        queries.push(QueryItem { id, image, text });
        eval_labels.insert(id, std::iter::once(class).collect::<LabelSet>());
    }

    let dataset = Dataset::new(
        cfg.name.clone(),
        cfg.image_dim,
        cfg.text_dim,
        labeled,
        unlabeled,
        queries,
        eval_labels,
    )?;
    Ok(SynthOutput {
        dataset,
        latents,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            num_classes: 3,
            latent_dim: 4,
            image_dim: 6,
            text_dim: 5,
            noise: 0.05,
            labeled: 12,
            unlabeled: 18,
            query: 9,
            seed: 11,
            name: "small".into(),
        }
    }

    #[test]
    fn synth_shapes_and_splits() {
        let out = synth_generate(&small_cfg()).unwrap();
        let ds = &out.dataset;
        assert_eq!(ds.labeled().len(), 12);
        assert_eq!(ds.unlabeled().len(), 18);
        assert_eq!(ds.queries().len(), 9);
        assert_eq!(ds.database_size(), 30);
        assert_eq!(ds.image_dim(), 6);
        assert_eq!(ds.text_dim(), 5);
        // dense ids
        let mut ids: Vec<u32> = ds
            .labeled()
            .iter()
            .map(|i| i.id)
            .chain(ds.unlabeled().iter().map(|i| i.id))
            .chain(ds.queries().iter().map(|i| i.id))
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..39).collect::<Vec<u32>>());
    }

    #[test]
    fn synth_zero_noise_collapses_classes() {
        let mut cfg = small_cfg();
        cfg.noise = 0.0;
        cfg.num_classes = 2;
        let out = synth_generate(&cfg).unwrap();
        let ds = &out.dataset;
        // all items of a class share identical features per modality
        let by_class = |class: u32| -> Vec<&LabeledItem> {
            ds.labeled()
                .iter()
                .filter(|i| i.labels.contains(&class))
                .collect()
        };
        for class in 0..2 {
            let members = by_class(class);
            assert!(members.len() > 1);
            for m in &members[1..] {
                assert_eq!(m.image.as_slice(), members[0].image.as_slice());
                assert_eq!(m.text.as_slice(), members[0].text.as_slice());
            }
        }
        // distinct classes map to distinct features
        assert_ne!(
            by_class(0)[0].image.as_slice(),
            by_class(1)[0].image.as_slice()
        );

        // nearest database neighbor of a query (in either feature space) is
        // always same-class
        let view = ds.eval_view();
        for q in ds.queries() {
            let q_class = view.labels_of(q.id).unwrap();
            let nearest = view
                .database()
                .min_by(|a, b| {
                    let da = crate::tensor::squared_distance(q.image.as_slice(), a.image);
                    let db = crate::tensor::squared_distance(q.image.as_slice(), b.image);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(view.labels_of(nearest.id).unwrap(), q_class);
        }
    }

    #[test]
    fn synth_is_deterministic_and_roundtrips_bytes() {
        let cfg = small_cfg();
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        let dir_a = TempDir::new().unwrap();
        let dir_b = TempDir::new().unwrap();
        save_dataset(&a.dataset, dir_a.path()).unwrap();
        save_dataset(&b.dataset, dir_b.path()).unwrap();
        for f in ["manifest.json", "images.feat", "texts.feat"] {
            let ba = std::fs::read(dir_a.path().join(f)).unwrap();
            let bb = std::fs::read(dir_b.path().join(f)).unwrap();
            assert_eq!(ba, bb, "file {f} differs between identical configs");
        }
    }

    #[test]
    fn save_load_roundtrip_is_identity() {
        let out = synth_generate(&small_cfg()).unwrap();
        let dir = TempDir::new().unwrap();
        let manifest = save_dataset(&out.dataset, dir.path()).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(loaded.labeled().len(), out.dataset.labeled().len());
        for (a, b) in loaded.labeled().iter().zip(out.dataset.labeled()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.image.as_slice(), b.image.as_slice());
            assert_eq!(a.text.as_slice(), b.text.as_slice());
            assert_eq!(a.labels, b.labels);
        }
        for (a, b) in loaded.queries().iter().zip(out.dataset.queries()) {
            assert_eq!(a.image.as_slice(), b.image.as_slice());
        }
        // second save produces identical bytes
        let dir2 = TempDir::new().unwrap();
        save_dataset(&loaded, dir2.path()).unwrap();
        for f in ["manifest.json", "images.feat", "texts.feat"] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(dir2.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn wrong_dim_manifest_is_rejected_naming_the_file() {
        let out = synth_generate(&small_cfg()).unwrap();
        let dir = TempDir::new().unwrap();
        let manifest_path = save_dataset(&out.dataset, dir.path()).unwrap();
        let mut manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
        manifest.image_dim += 1;
        std::fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        let err = load_dataset(&manifest_path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("images.feat"), "error should name the file: {msg}");
    }

    #[test]
    fn checksum_mismatch_is_rejected() {
        let out = synth_generate(&small_cfg()).unwrap();
        let dir = TempDir::new().unwrap();
        let manifest_path = save_dataset(&out.dataset, dir.path()).unwrap();
        // corrupt one float in the image file past the header
        let img = dir.path().join("images.feat");
        let mut bytes = std::fs::read(&img).unwrap();
        bytes[24] ^= 0xff;
        std::fs::write(&img, bytes).unwrap();
        let err = load_dataset(&manifest_path).unwrap_err();
        assert!(err.to_string().contains("checksum mismatch"));
    }

    #[test]
    fn dangling_and_duplicate_ids_are_rejected() {
        let out = synth_generate(&small_cfg()).unwrap();
        let dir = TempDir::new().unwrap();
        let manifest_path = save_dataset(&out.dataset, dir.path()).unwrap();
        let original = std::fs::read_to_string(&manifest_path).unwrap();

        let mut manifest: Manifest = serde_json::from_str(&original).unwrap();
        manifest.splits.unlabeled.push(10_000);
        std::fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(load_dataset(&manifest_path).is_err());

        let mut manifest: Manifest = serde_json::from_str(&original).unwrap();
        let dup = manifest.splits.labeled[0];
        manifest.splits.unlabeled.push(dup);
        std::fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        let err = load_dataset(&manifest_path).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn non_finite_features_are_rejected_at_read() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad.feat");
        let rows = [vec![1.0, f64::NAN], vec![0.0, 0.5]];
        write_feature_file(&path, 2, rows.iter().map(|r| r.as_slice())).unwrap();
        let err = read_feature_file(&path).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn unknown_manifest_keys_are_rejected() {
        let out = synth_generate(&small_cfg()).unwrap();
        let dir = TempDir::new().unwrap();
        let manifest_path = save_dataset(&out.dataset, dir.path()).unwrap();
        let mut value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
        value["surprise"] = serde_json::json!(1);
        std::fs::write(&manifest_path, serde_json::to_string(&value).unwrap()).unwrap();
        assert!(load_dataset(&manifest_path).is_err());
    }

    #[test]
    fn midsize_uneven_split_manifest_is_accepted() {
        // 2173 database items (1500 labeled + 673 unlabeled), 693 queries
        let cfg = SynthConfig {
            num_classes: 10,
            latent_dim: 4,
            image_dim: 8,
            text_dim: 6,
            noise: 0.05,
            labeled: 1500,
            unlabeled: 673,
            query: 693,
            seed: 3,
            name: "midsize".into(),
        };
        let out = synth_generate(&cfg).unwrap();
        let dir = TempDir::new().unwrap();
        let manifest = save_dataset(&out.dataset, dir.path()).unwrap();
        let ds = load_dataset(&manifest).unwrap();
        assert_eq!(ds.database_size(), 2173);
        assert_eq!(ds.queries().len(), 693);
    }

    #[test]
    fn hidden_labels_only_reachable_through_eval_view() {
        let out = synth_generate(&small_cfg()).unwrap();
        let ds = &out.dataset;
        // The training-facing unlabeled items carry no label information at
        // the type level; the evaluation view does.
        let first = &ds.unlabeled()[0];
        assert!(ds.eval_view().labels_of(first.id).is_some());
        // query labels exist but only via the eval view as well
        let q = &ds.queries()[0];
        assert!(ds.eval_view().labels_of(q.id).is_some());
    }

    /// With the default generator settings, an oracle that ranks the
    /// database by latent-space distance retrieves perfectly: class
    /// clusters are far apart relative to the noise.
    #[test]
    fn default_config_latent_oracle_reaches_map_one() {
        let out = synth_generate(&SynthConfig::default()).unwrap();
        let ds = &out.dataset;
        let view = ds.eval_view();
        let db: Vec<(ItemId, &Vec<f64>)> = view
            .database()
            .map(|e| (e.id, out.latents.get(&e.id).unwrap()))
            .collect();
        let lists: Vec<crate::eval::RankedList> = ds
            .queries()
            .iter()
            .map(|q| {
                let zq = out.latents.get(&q.id).unwrap();
                let mut ranked: Vec<(ItemId, f64)> = db
                    .iter()
                    .map(|(id, z)| (*id, crate::tensor::squared_distance(zq, z)))
                    .collect();
                ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
                let q_labels = view.labels_of(q.id).unwrap();
                let relevance: Vec<bool> = ranked
                    .iter()
                    .map(|(id, _)| crate::eval::relevance(q_labels, view.labels_of(*id).unwrap()))
                    .collect();
                crate::eval::RankedList {
                    query_id: q.id,
                    ranked_ids: ranked.iter().map(|(id, _)| *id).collect(),
                    distances: vec![0; ranked.len()],
                    relevance,
                }
            })
            .collect();
        let map = crate::eval::mean_average_precision(&lists).unwrap();
        assert_eq!(map, 1.0, "latent-space oracle should be perfect");
    }

    #[test]
    fn code_file_roundtrip() {
        use crate::model::binarize;
        let codes = vec![
            binarize(&[0.9, 0.2, 0.7, 0.1, 0.6, 0.8, 0.3, 0.55, 0.45]),
            binarize(&[0.1, 0.9, 0.1, 0.9, 0.1, 0.9, 0.1, 0.9, 0.9]),
        ];
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("codes.bin");
        write_code_file(&path, &codes).unwrap();
        assert_eq!(read_code_file(&path).unwrap(), codes);
        // writing again is byte-identical
        let path2 = dir.path().join("codes2.bin");
        write_code_file(&path2, &codes).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn invalid_synth_configs_are_rejected() {
        let mut cfg = small_cfg();
        cfg.noise = -0.1;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.query = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.num_classes = 0;
        assert!(cfg.validate().is_err());
    }
}
