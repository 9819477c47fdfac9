use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use latscope_core::format::from_bytes;
use latscope_core::fsutil::{sha256_hex, write_atomic};
use latscope_core::{AnchorStore, Error, GeneratorModel, LatentVector, Result};

use crate::error::ApiError;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Holds uploaded models, rendered images and the latent session file.
    pub cache_dir: PathBuf,
    pub store_path: PathBuf,
    /// Static UI bundle served at `/` when present.
    pub ui_dir: Option<PathBuf>,
}

/// Latent ids handed out to clients, persisted as `<id> <record>` lines.
struct LatentSession {
    path: PathBuf,
    map: HashMap<String, LatentVector>,
}

impl LatentSession {
    fn load(path: PathBuf) -> Result<Self> {
        let mut map = HashMap::new();
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate() {
                    let parsed = line
                        .split_once(' ')
                        .map(|(id, rec)| (id, LatentVector::from_line(rec)));
                    match parsed {
                        Some((id, Ok(z))) => {
                            map.insert(id.to_string(), z);
                        }
                        _ => log::warn!("{}: skipping bad line {}", path.display(), i + 1),
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(&path, e)),
        }
        Ok(Self { path, map })
    }

    fn register(&mut self, z: &LatentVector) -> Result<String> {
        let line = z.to_line();
        let id = sha256_hex(line.as_bytes())[..32].to_string();
        if !self.map.contains_key(&id) {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| Error::io(&self.path, e))?;
            writeln!(f, "{id} {line}").map_err(|e| Error::io(&self.path, e))?;
            self.map.insert(id.clone(), z.clone());
        }
        Ok(id)
    }
}

pub struct AppState {
    config: ServiceConfig,
    models: RwLock<BTreeMap<String, Arc<GeneratorModel>>>,
    store: Mutex<AnchorStore>,
    latents: Mutex<LatentSession>,
}

impl AppState {
    pub fn open(config: ServiceConfig) -> Result<Self> {
        for sub in ["models", "images"] {
            let d = config.cache_dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let mut models = BTreeMap::new();
        let model_dir = config.cache_dir.join("models");
        let entries = std::fs::read_dir(&model_dir).map_err(|e| Error::io(&model_dir, e))?;
        for entry in entries.flatten() {
            let path = entry.path();
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            match std::fs::read(&path)
                .map_err(|e| Error::io(&path, e))
                .and_then(|b| from_bytes(&b))
            {
                Ok(m) => {
                    models.insert(id.to_string(), Arc::new(m));
                }
                Err(e) => log::warn!("ignoring cached model {}: {e}", path.display()),
            }
        }
        let store = AnchorStore::open(&config.store_path)?;
        let latents = LatentSession::load(config.cache_dir.join("latents.txt"))?;
        Ok(Self {
            config,
            models: RwLock::new(models),
            store: Mutex::new(store),
            latents: Mutex::new(latents),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// Validate and register an LGW1 upload. Re-uploads return the same id.
    pub fn register_model(&self, bytes: &[u8]) -> Result<(String, Arc<GeneratorModel>)> {
        let id = sha256_hex(bytes);
        if let Some(m) = self.models.read().unwrap().get(&id) {
            return Ok((id, m.clone()));
        }
        let model = Arc::new(from_bytes(bytes)?);
        write_atomic(
            &self
                .config
                .cache_dir
                .join("models")
                .join(format!("{id}.lgw1")),
            bytes,
        )?;
        self.models
            .write()
            .unwrap()
            .insert(id.clone(), model.clone());
        Ok((id, model))
    }

    pub fn models(&self) -> Vec<(String, Arc<GeneratorModel>)> {
        self.models
            .read()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn model(&self, id: &str) -> std::result::Result<Arc<GeneratorModel>, ApiError> {
        self.models
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("model `{id}` not found")))
    }

    pub fn register_latent(&self, z: &LatentVector) -> Result<String> {
        self.latents.lock().unwrap().register(z)
    }

    pub fn latent(&self, id: &str) -> std::result::Result<LatentVector, ApiError> {
        self.latents
            .lock()
            .unwrap()
            .map
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("latent `{id}` not found")))
    }

    /// Store PNG bytes under their hash and return the image URL.
    pub fn store_image(&self, png: &[u8]) -> Result<String> {
        let hash = sha256_hex(png);
        let path = self.image_dir().join(format!("{hash}.png"));
        // content addressed: an existing file already has these bytes
        if !path.exists() {
            write_atomic(&path, png)?;
        }
        Ok(format!("/images/{hash}.png"))
    }

    pub fn image_dir(&self) -> PathBuf {
        self.config.cache_dir.join("images")
    }

    pub fn with_store<T>(&self, f: impl FnOnce(&mut AnchorStore) -> Result<T>) -> Result<T> {
        let mut store = self.store.lock().unwrap();
        store.reload()?;
        f(&mut store)
    }

    pub fn store_path(&self) -> &Path {
        &self.config.store_path
    }
}
