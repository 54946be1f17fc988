//! Scene persistence: a small versioned binary format.
//!
//! The appearance field dominates a scene's footprint, so it is not stored:
//! the file keeps the generation parameters plus a checksum, and loading
//! regenerates the field from the seed and verifies the checksum. Occupancy
//! (which may contain injected obstacles) and the object table are stored
//! verbatim and round-trip bit-exactly.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::Embedding;
use crate::geometry::Vec2;
use crate::simworld::gen::generate_scene;
use crate::simworld::{ObjectInstance, Scene, SceneParams, CATEGORIES};

const MAGIC: &[u8; 4] = b"MGSC";
const VERSION: u16 = 1;

pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    let bytes = scene_to_bytes(scene);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let bytes = std::fs::read(path)?;
    scene_from_bytes(&bytes)
}

pub(crate) fn scene_to_bytes(scene: &Scene) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());

    let p = scene.params();
    out.extend_from_slice(&p.extent.0.to_le_bytes());
    out.extend_from_slice(&p.extent.1.to_le_bytes());
    out.extend_from_slice(&p.resolution.to_le_bytes());
    out.extend_from_slice(&(p.embed_dim as u32).to_le_bytes());
    out.extend_from_slice(&(p.object_count as u32).to_le_bytes());
    out.extend_from_slice(&p.clutter_density.to_le_bytes());
    out.extend_from_slice(&p.seed.to_le_bytes());

    let (width, height) = scene.grid_size();
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());

    // Occupancy as run lengths, starting with the value of cell 0.
    out.push(scene.occupancy()[0] as u8);
    let mut run = 0u32;
    let mut current = scene.occupancy()[0];
    for &cell in scene.occupancy() {
        if cell == current {
            run += 1;
        } else {
            out.extend_from_slice(&run.to_le_bytes());
            current = cell;
            run = 1;
        }
    }
    out.extend_from_slice(&run.to_le_bytes());
    out.extend_from_slice(&u32::MAX.to_le_bytes()); // run terminator

    out.extend_from_slice(&(scene.objects().len() as u32).to_le_bytes());
    for object in scene.objects() {
        out.extend_from_slice(&object.id.to_le_bytes());
        out.push(object.category as u8);
        out.extend_from_slice(&object.position.x.to_le_bytes());
        out.extend_from_slice(&object.position.y.to_le_bytes());
        for &v in object.instance_embedding.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    out.extend_from_slice(&field_checksum(scene.appearance()));
    out
}

pub(crate) fn scene_from_bytes(bytes: &[u8]) -> Result<Scene> {
    let mut cursor = Cursor::new(bytes);
    if cursor.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not a scene file".into()));
    }
    let version = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported scene version {version}")));
    }

    let params = SceneParams {
        extent: (cursor.f64()?, cursor.f64()?),
        resolution: cursor.f64()?,
        embed_dim: cursor.u32()? as usize,
        object_count: cursor.u32()? as usize,
        clutter_density: cursor.f64()?,
        seed: cursor.u64()?,
    };
    let width = cursor.u32()? as usize;
    let height = cursor.u32()? as usize;

    let first = cursor.take(1)?[0] != 0;
    let mut occupancy = Vec::with_capacity(width * height);
    let mut current = first;
    loop {
        let run = cursor.u32()?;
        if run == u32::MAX {
            break;
        }
        occupancy.extend(std::iter::repeat(current).take(run as usize));
        current = !current;
    }
    if occupancy.len() != width * height {
        return Err(Error::Format(format!(
            "occupancy RLE decodes to {} cells, expected {}",
            occupancy.len(),
            width * height
        )));
    }

    let object_count = cursor.u32()? as usize;
    let mut objects = Vec::with_capacity(object_count);
    for _ in 0..object_count {
        let id = cursor.u32()?;
        let category = cursor.take(1)?[0] as usize;
        if category >= CATEGORIES.len() {
            return Err(Error::Format(format!("category index {category} out of range")));
        }
        let position = Vec2::new(cursor.f64()?, cursor.f64()?);
        let mut values = Vec::with_capacity(params.embed_dim);
        for _ in 0..params.embed_dim {
            values.push(cursor.f64()?);
        }
        let instance_embedding = Embedding::from_unit_values(values)
            .map_err(|_| Error::Format("instance embedding is not unit-norm".into()))?;
        objects.push(ObjectInstance {
            id,
            category,
            position,
            instance_embedding,
        });
    }

    let stored_checksum: [u8; 32] = cursor.take(32)?.try_into().unwrap();

    // Regenerate the field (and layout) from the stored parameters, then
    // splice in the stored occupancy and objects.
    let regenerated = generate_scene(&params)?;
    if regenerated.grid_size() != (width, height) {
        return Err(Error::Format("regenerated grid size mismatch".into()));
    }
    if field_checksum(regenerated.appearance()) != stored_checksum {
        return Err(Error::Format(
            "appearance checksum mismatch; file does not match its seed".into(),
        ));
    }
    let mut scene = regenerated.replace_occupancy(occupancy);
    scene.objects = objects;
    Ok(scene)
}

fn field_checksum(field: &[f32]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for &v in field {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().into()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Cursor<'a> {
        Cursor { bytes, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Format("truncated file".into()));
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
