//! On-disk processed dataset: one directory per field, one array file per bag.
//!
//! ```text
//! root/
//!   manifest.csv            "bag_id,label" header, one row per bag
//!   features/<id>.milt      float32 N×D
//!   labels/<id>.milt        float32 scalar
//!   inst_labels/<id>.milt   uint8 N
//!   coords/<id>.milt        int64 N×k
//!   adjacency/<id>.edges.milt    int64 E×2, each undirected edge once (i < j)
//!   adjacency/<id>.weights.milt  float32 E
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{arr0, Array1, Array2, Ix1, Ix2};

use super::array_file::{read_array, write_array, ArrayData};
use crate::bagdata::{Adjacency, Bag};
use crate::error::{MilError, Result};

pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "bag_id,label";
pub const FEATURES: &str = "features";
pub const LABELS: &str = "labels";
pub const INST_LABELS: &str = "inst_labels";
pub const COORDS: &str = "coords";
pub const ADJACENCY: &str = "adjacency";

const KNOWN_FIELDS: [&str; 5] = [FEATURES, LABELS, INST_LABELS, COORDS, ADJACENCY];

pub fn is_valid_bag_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|c| c.is_ascii_alphanumeric() || c == b'_' || c == b'-')
}

/// Read-only handle on a processed dataset directory.
///
/// Opening reads only the manifest; bags are loaded one at a time on demand,
/// so the handle can be shared by concurrent readers.
#[derive(Debug, Clone)]
pub struct ProcessedMILDataset {
    root: PathBuf,
    ids: Vec<String>,
    labels: Vec<u8>,
    index: HashMap<String, usize>,
    fields: BTreeSet<String>,
}

impl ProcessedMILDataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest_path = root.join(MANIFEST);
        let text =
            fs::read_to_string(&manifest_path).map_err(|e| MilError::io(&manifest_path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(MilError::Manifest(format!(
                "expected header `{MANIFEST_HEADER}`"
            )));
        }
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut index = HashMap::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id, label) = line.split_once(',').ok_or_else(|| {
                MilError::Manifest(format!("line {}: expected two columns", lineno + 2))
            })?;
            if !is_valid_bag_id(id) {
                return Err(MilError::InvalidBagId(id.to_string()));
            }
            let label = match label {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(MilError::Manifest(format!(
                        "line {}: label `{other}` is not 0 or 1",
                        lineno + 2
                    )))
                }
            };
            if index.insert(id.to_string(), ids.len()).is_some() {
                return Err(MilError::DuplicateBagId(id.to_string()));
            }
            ids.push(id.to_string());
            labels.push(label);
        }
        if ids.is_empty() {
            return Err(MilError::EmptyDataset);
        }
        let fields = KNOWN_FIELDS
            .iter()
            .filter(|f| root.join(f).is_dir())
            .map(|f| f.to_string())
            .collect::<BTreeSet<_>>();
        if !fields.contains(FEATURES) {
            return Err(MilError::Manifest(format!(
                "{} has no `{FEATURES}` directory",
                root.display()
            )));
        }
        Ok(ProcessedMILDataset {
            root,
            ids,
            labels,
            index,
            fields,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Bag ids in manifest order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Field directories present on disk.
    pub fn fields(&self) -> &BTreeSet<String> {
        &self.fields
    }

    pub fn label(&self, bag_id: &str) -> Option<u8> {
        self.index.get(bag_id).map(|&i| self.labels[i])
    }

    fn field_file(&self, field: &str, name: &str) -> Option<PathBuf> {
        if !self.fields.contains(field) {
            return None;
        }
        let p = self.root.join(field).join(name);
        p.is_file().then_some(p)
    }

    /// Loads a single bag, touching only that bag's files.
    pub fn load_bag(&self, bag_id: &str) -> Result<Bag> {
        let &i = self
            .index
            .get(bag_id)
            .ok_or_else(|| MilError::UnknownBag(bag_id.to_string()))?;
        let label = self.labels[i];
        let file = format!("{bag_id}.milt");

        let fpath = self.root.join(FEATURES).join(&file);
        let features = read_array(&fpath)?
            .into_f32()
            .and_then(|a| a.into_dimensionality::<Ix2>().ok())
            .ok_or_else(|| wrong_type(&fpath, "float32 N×D"))?;

        if let Some(p) = self.field_file(LABELS, &file) {
            let v = read_array(&p)?
                .into_f32()
                .filter(|a| a.len() == 1)
                .ok_or_else(|| wrong_type(&p, "float32 scalar"))?;
            let v = *v.iter().next().unwrap();
            if v != label as f32 {
                return Err(MilError::LabelMismatch {
                    bag_id: bag_id.to_string(),
                    manifest: label,
                    file: v,
                });
            }
        }

        let mut bag = Bag::new(bag_id, features, label)?;
        if let Some(p) = self.field_file(INST_LABELS, &file) {
            let y = read_array(&p)?
                .into_u8()
                .and_then(|a| a.into_dimensionality::<Ix1>().ok())
                .ok_or_else(|| wrong_type(&p, "uint8 N"))?;
            bag = bag.with_inst_labels(y)?;
        }
        if let Some(p) = self.field_file(COORDS, &file) {
            let c = read_array(&p)?
                .into_i64()
                .and_then(|a| a.into_dimensionality::<Ix2>().ok())
                .ok_or_else(|| wrong_type(&p, "int64 N×k"))?;
            bag = bag.with_coords(c)?;
        }
        if let Some(ep) = self.field_file(ADJACENCY, &format!("{bag_id}.edges.milt")) {
            let wp = self
                .root
                .join(ADJACENCY)
                .join(format!("{bag_id}.weights.milt"));
            let edges = read_array(&ep)?
                .into_i64()
                .and_then(|a| a.into_dimensionality::<Ix2>().ok())
                .filter(|a| a.ncols() == 2)
                .ok_or_else(|| wrong_type(&ep, "int64 E×2"))?;
            let weights = read_array(&wp)?
                .into_f32()
                .and_then(|a| a.into_dimensionality::<Ix1>().ok())
                .ok_or_else(|| wrong_type(&wp, "float32 E"))?;
            if weights.len() != edges.nrows() {
                return Err(MilError::InvalidAdjacency(format!(
                    "bag `{bag_id}`: {} edges but {} weights",
                    edges.nrows(),
                    weights.len()
                )));
            }
            let n = bag.n_instances();
            let mut pairs = Vec::with_capacity(edges.nrows());
            for row in edges.rows() {
                let (i, j) = (row[0], row[1]);
                if i < 0 || j < 0 || i as usize >= n || j as usize >= n {
                    return Err(MilError::FieldLengthMismatch {
                        bag_id: bag_id.to_string(),
                        field: "adjacency",
                        reference: "features",
                        found: i.max(j).max(0) as usize + 1,
                        expected: n,
                    });
                }
                pairs.push((i as usize, j as usize));
            }
            let adj = Adjacency::new(n, &pairs, weights.as_slice().unwrap())?;
            bag = bag.with_adjacency(adj)?;
        }
        Ok(bag)
    }

    /// Loads every bag in manifest order.
    pub fn load_all(&self) -> Result<Vec<Bag>> {
        self.ids.iter().map(|id| self.load_bag(id)).collect()
    }

    /// Feature dimension, read from the first bag's header.
    pub fn feature_dim(&self) -> Result<usize> {
        Ok(self.load_bag(&self.ids[0])?.dim())
    }
}

fn wrong_type(path: &Path, expected: &str) -> MilError {
    MilError::UnrecognizedArrayFile(format!("{}: expected {expected}", path.display()))
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| MilError::io(p, e))
}

/// Writes bags under `root` in the processed layout and reopens the result.
pub fn save_dataset(bags: &[Bag], root: impl AsRef<Path>) -> Result<ProcessedMILDataset> {
    let root = root.as_ref();
    if bags.is_empty() {
        return Err(MilError::EmptyDataset);
    }
    let mut seen = HashSet::new();
    for bag in bags {
        if !is_valid_bag_id(bag.bag_id()) {
            return Err(MilError::InvalidBagId(bag.bag_id().to_string()));
        }
        if !seen.insert(bag.bag_id()) {
            return Err(MilError::DuplicateBagId(bag.bag_id().to_string()));
        }
    }

    mkdir(root)?;
    mkdir(&root.join(FEATURES))?;
    mkdir(&root.join(LABELS))?;
    if bags.iter().any(|b| b.inst_labels().is_some()) {
        mkdir(&root.join(INST_LABELS))?;
    }
    if bags.iter().any(|b| b.coords().is_some()) {
        mkdir(&root.join(COORDS))?;
    }
    if bags.iter().any(|b| b.adjacency().is_some()) {
        mkdir(&root.join(ADJACENCY))?;
    }

    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for bag in bags {
        let id = bag.bag_id();
        let file = format!("{id}.milt");
        write_array(
            &ArrayData::F32(bag.features().clone().into_dyn()),
            root.join(FEATURES).join(&file),
        )?;
        write_array(
            &ArrayData::F32(arr0(bag.label() as f32).into_dyn()),
            root.join(LABELS).join(&file),
        )?;
        if let Some(y) = bag.inst_labels() {
            write_array(
                &ArrayData::U8(y.clone().into_dyn()),
                root.join(INST_LABELS).join(&file),
            )?;
        }
        if let Some(c) = bag.coords() {
            write_array(
                &ArrayData::I64(c.clone().into_dyn()),
                root.join(COORDS).join(&file),
            )?;
        }
        if let Some(a) = bag.adjacency() {
            let mut edges = Array2::<i64>::zeros((a.n_edges(), 2));
            for (k, &(i, j)) in a.edges().iter().enumerate() {
                edges[[k, 0]] = i as i64;
                edges[[k, 1]] = j as i64;
            }
            write_array(
                &ArrayData::I64(edges.into_dyn()),
                root.join(ADJACENCY).join(format!("{id}.edges.milt")),
            )?;
            write_array(
                &ArrayData::F32(Array1::from(a.weights().to_vec()).into_dyn()),
                root.join(ADJACENCY).join(format!("{id}.weights.milt")),
            )?;
        }
        manifest.push_str(&format!("{id},{}\n", bag.label()));
    }
    let mpath = root.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(|e| MilError::io(&mpath, e))?;
    ProcessedMILDataset::open(root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn plain_bag(id: &str, n: usize, d: usize) -> Bag {
        Bag::new(id, Array2::from_elem((n, d), 0.25f32), 0).unwrap()
    }

    #[test]
    fn features_only_bag_loads_without_optional_fields() {
        let dir = tempfile::tempdir().unwrap();
        let ds = save_dataset(&[plain_bag("b0", 5, 3)], dir.path()).unwrap();
        let bag = ds.load_bag("b0").unwrap();
        assert_eq!(bag.features().dim(), (5, 3));
        assert!(bag.coords().is_none());
        assert!(bag.adjacency().is_none());
    }

    #[test]
    fn manifest_preserves_input_order() {
        let dir = tempfile::tempdir().unwrap();
        let bags = [
            plain_bag("z", 1, 1),
            plain_bag("a", 2, 1),
            plain_bag("m", 3, 1),
        ];
        save_dataset(&bags, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(text, "bag_id,label\nz,0\na,0\nm,0\n");
    }

    #[test]
    fn save_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            save_dataset(&[], dir.path()).unwrap_err().to_string(),
            "empty dataset"
        );
        let dup = [plain_bag("a", 1, 1), plain_bag("a", 1, 1)];
        assert!(matches!(
            save_dataset(&dup, dir.path()),
            Err(MilError::DuplicateBagId(_))
        ));
        let bad = [plain_bag("a b", 1, 1)];
        assert!(matches!(
            save_dataset(&bad, dir.path()),
            Err(MilError::InvalidBagId(_))
        ));
    }

    #[test]
    fn unknown_bag_and_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ds = save_dataset(&[plain_bag("b0", 4, 2)], dir.path()).unwrap();
        assert!(matches!(ds.load_bag("nope"), Err(MilError::UnknownBag(_))));

        fs::create_dir_all(dir.path().join(INST_LABELS)).unwrap();
        write_array(
            &ArrayData::U8(array![0u8, 0, 0].into_dyn()),
            dir.path().join(INST_LABELS).join("b0.milt"),
        )
        .unwrap();
        let ds = ProcessedMILDataset::open(dir.path()).unwrap();
        let err = ds.load_bag("b0").unwrap_err().to_string();
        assert!(err.contains("field length mismatch"), "{err}");
        assert!(
            err.contains("inst_labels") && err.contains("features"),
            "{err}"
        );
    }

    #[test]
    fn label_file_must_agree_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&[plain_bag("b0", 2, 2)], dir.path()).unwrap();
        write_array(
            &ArrayData::F32(arr0(1.0f32).into_dyn()),
            dir.path().join(LABELS).join("b0.milt"),
        )
        .unwrap();
        let ds = ProcessedMILDataset::open(dir.path()).unwrap();
        assert!(matches!(
            ds.load_bag("b0"),
            Err(MilError::LabelMismatch { .. })
        ));
    }
}
