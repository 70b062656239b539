//! Dataset and channel-cache loading.

use std::fs;
use std::path::{Path, PathBuf};

use grasp_dlsr::bundle::{channel_cache_bytes, channel_cache_from_bytes};
use grasp_dlsr::dataset::{discover_scenes, load_auxiliary, load_dataset, load_scene, Scene};
use grasp_dlsr::evaluation::{pixels_hash, PreparedScene};
use grasp_dlsr::imageproc::derive_channels;
use rayon::prelude::*;

use crate::Failure;

pub const CACHE_EXT: &str = "chan";

fn cache_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{CACHE_EXT}"))
}

/// Derive the channel image of `scene`, reading it from `cache` when a file
/// made from identical scene content exists there.
pub fn prepare(scene: Scene, cache: Option<&Path>) -> Result<PreparedScene, Failure> {
    if let Some(dir) = cache {
        let path = cache_path(dir, &scene.id);
        if path.is_file() {
            let bytes = fs::read(&path).map_err(|e| Failure::io(&path, e))?;
            let hash = pixels_hash(&scene);
            match channel_cache_from_bytes(&bytes, &hash)
                .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?
            {
                Some(image) => return Ok(PreparedScene { scene, image }),
                None => log::warn!("{}: stale cache entry, recomputing", path.display()),
            }
        }
    }
    let image = derive_channels(&scene);
    Ok(PreparedScene { scene, image })
}

pub fn load_prepared(root: &Path, cache: Option<&Path>) -> Result<Vec<PreparedScene>, Failure> {
    let scenes = load_dataset(root)?;
    log::info!("loaded {} scenes from {}", scenes.len(), root.display());
    scenes.into_par_iter().map(|s| prepare(s, cache)).collect()
}

/// Auxiliary (self-taught) scenes below `dir`; an empty directory yields none.
pub fn load_aux(dir: &Path) -> Result<Vec<PreparedScene>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::Data(format!("{}: not a directory", dir.display())));
    }
    let scenes = load_auxiliary(dir)?;
    Ok(scenes
        .into_par_iter()
        .map(|scene| PreparedScene {
            image: derive_channels(&scene),
            scene,
        })
        .collect())
}

/// Load the scene whose file stem is `id`.
pub fn load_one(root: &Path, id: &str, cache: Option<&Path>) -> Result<PreparedScene, Failure> {
    let paths = discover_scenes(root)?;
    let p = paths
        .iter()
        .find(|p| p.stem == id)
        .ok_or_else(|| Failure::Data(format!("{}: no scene `{id}`", root.display())))?;
    let mut scene = load_scene(&p.image, &p.cloud, &p.pos, &p.neg)?;
    scene.id = p.stem.clone();
    prepare(scene, cache)
}

/// Write the channel cache of every scene; returns the file names written.
pub fn write_cache(scenes: &[PreparedScene], dir: &Path) -> Result<Vec<String>, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    scenes
        .par_iter()
        .map(|s| {
            let hash = pixels_hash(&s.scene);
            let path = cache_path(dir, &s.scene.id);
            fs::write(&path, channel_cache_bytes(&s.image, &s.scene.id, &hash))
                .map_err(|e| Failure::io(&path, e))?;
            Ok(format!("{}.{CACHE_EXT}", s.scene.id))
        })
        .collect()
}
