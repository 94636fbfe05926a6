//! Shape-space model persistence: a single little-endian binary file plus a
//! JSON sidecar for human-readable metadata.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! magic   4 bytes  "RGSS"
//! version u32      currently 1
//! V       u32      canonical vertex count
//! F       u32      canonical face count
//! L       u32      latent dimension
//! K       u32      training instance count
//! total_variance      f64
//! variances           L x f64
//! canonical vertices  V x 3 x f64
//! canonical faces     F x 3 x u32
//! mean field          V x 3 x f64
//! basis               L columns of 3V x f64 (column-major)
//! ```
//!
//! The sidecar lives at `<path>.json` and carries the category name, the
//! training mesh list and the functional grasp annotation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{RigidTransform, TriangleMesh};

use super::{DeformationField, ShapeError, ShapeSpaceModel};

const MAGIC: &[u8; 4] = b"RGSS";
const VERSION: u32 = 1;

/// Human-readable sidecar metadata.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelMeta {
    pub category: String,
    #[serde(default)]
    pub training_meshes: Vec<String>,
    /// Functional grasp annotation in the canonical object frame.
    #[serde(default)]
    pub functional_grasp: Option<RigidTransform>,
}

/// A trained model together with its sidecar metadata.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub model: ShapeSpaceModel,
    pub meta: ModelMeta,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    PathBuf::from(os)
}

pub fn save_model(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<(), ShapeError> {
    let path = path.as_ref();
    let model = &bundle.model;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let v = model.canonical().vertices().len();
    let f = model.canonical().faces().len();
    let l = model.latent_dim();
    w.write_u32::<LittleEndian>(v as u32)?;
    w.write_u32::<LittleEndian>(f as u32)?;
    w.write_u32::<LittleEndian>(l as u32)?;
    w.write_u32::<LittleEndian>(model.training_count() as u32)?;
    w.write_f64::<LittleEndian>(model.total_variance())?;
    for &var in model.training_variances() {
        w.write_f64::<LittleEndian>(var)?;
    }
    for vert in model.canonical().vertices() {
        for c in [vert.x, vert.y, vert.z] {
            w.write_f64::<LittleEndian>(c)?;
        }
    }
    for face in model.canonical().faces() {
        for &i in face {
            w.write_u32::<LittleEndian>(i)?;
        }
    }
    for d in model.mean_field().displacements() {
        for c in [d.x, d.y, d.z] {
            w.write_f64::<LittleEndian>(c)?;
        }
    }
    for col in 0..l {
        for row in 0..3 * v {
            w.write_f64::<LittleEndian>(model.basis()[(row, col)])?;
        }
    }
    drop(w);

    let sidecar = sidecar_path(path);
    let json = serde_json::to_string_pretty(&bundle.meta)?;
    std::fs::write(sidecar, json)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle, ShapeError> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ShapeError::BadModelFile("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(ShapeError::BadModelFile(format!(
            "unsupported version {version}"
        )));
    }
    let v = r.read_u32::<LittleEndian>()? as usize;
    let f = r.read_u32::<LittleEndian>()? as usize;
    let l = r.read_u32::<LittleEndian>()? as usize;
    let k = r.read_u32::<LittleEndian>()? as usize;
    let total_variance = r.read_f64::<LittleEndian>()?;
    let mut variances = Vec::with_capacity(l);
    for _ in 0..l {
        variances.push(r.read_f64::<LittleEndian>()?);
    }
    let mut vertices = Vec::with_capacity(v);
    for _ in 0..v {
        let x = r.read_f64::<LittleEndian>()?;
        let y = r.read_f64::<LittleEndian>()?;
        let z = r.read_f64::<LittleEndian>()?;
        vertices.push(Vector3::new(x, y, z));
    }
    let mut faces = Vec::with_capacity(f);
    for _ in 0..f {
        let a = r.read_u32::<LittleEndian>()?;
        let b = r.read_u32::<LittleEndian>()?;
        let c = r.read_u32::<LittleEndian>()?;
        faces.push([a, b, c]);
    }
    let canonical = TriangleMesh::new(vertices, faces)
        .map_err(|e| ShapeError::BadModelFile(format!("bad canonical mesh: {e}")))?;
    let mut displacements = Vec::with_capacity(v);
    for _ in 0..v {
        let x = r.read_f64::<LittleEndian>()?;
        let y = r.read_f64::<LittleEndian>()?;
        let z = r.read_f64::<LittleEndian>()?;
        displacements.push(Vector3::new(x, y, z));
    }
    let mut basis = DMatrix::<f64>::zeros(3 * v, l);
    for col in 0..l {
        for row in 0..3 * v {
            basis[(row, col)] = r.read_f64::<LittleEndian>()?;
        }
    }

    let meta = match std::fs::read_to_string(sidecar_path(path)) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(_) => ModelMeta::default(),
    };

    Ok(ModelBundle {
        model: ShapeSpaceModel::from_parts(
            canonical,
            DeformationField::new(displacements),
            basis,
            variances,
            total_variance,
            k,
        ),
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_meshes::*;
    use super::super::{train_shape_space, CpdParams, LatentDim};
    use super::*;

    #[test]
    fn model_round_trip_is_exact() {
        let canonical = canonical_box();
        let training = vec![
            scaled(&canonical, 0.9),
            scaled(&canonical, 1.05),
            scaled(&canonical, 1.2),
        ];
        let model =
            train_shape_space(&canonical, &training, LatentDim::Fixed(2), &CpdParams::default())
                .unwrap();
        let bundle = ModelBundle {
            model,
            meta: ModelMeta {
                category: "boxes".into(),
                training_meshes: vec!["a.obj".into(), "b.obj".into(), "c.obj".into()],
                functional_grasp: Some(RigidTransform::from_translation(Vector3::new(
                    0.0, 0.0, 0.1,
                ))),
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&bundle, &path).unwrap();
        let back = load_model(&path).unwrap();

        assert_eq!(back.meta.category, "boxes");
        assert_eq!(back.meta.training_meshes.len(), 3);
        assert!(back.meta.functional_grasp.is_some());
        assert_eq!(
            back.model.canonical().vertices().len(),
            bundle.model.canonical().vertices().len()
        );
        assert_eq!(back.model.canonical().faces(), bundle.model.canonical().faces());
        assert_eq!(back.model.latent_dim(), 2);
        assert_eq!(back.model.training_count(), 3);
        // Bit-exact payloads.
        assert_eq!(
            back.model.mean_field().to_flat(),
            bundle.model.mean_field().to_flat()
        );
        assert_eq!(back.model.basis(), bundle.model.basis());
        assert_eq!(back.model.training_variances(), bundle.model.training_variances());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(
            load_model(&path),
            Err(ShapeError::BadModelFile(_))
        ));
    }
}
