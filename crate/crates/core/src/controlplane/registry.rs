//! File-backed entity registry.
//!
//! Layout under the data directory:
//!
//! ```text
//! models/<id>.json  configurations/<id>.json  deployments/<id>.json
//! results/<id>.json inferences/<id>.json      datastreams/<id>.json
//! blobs/<name>      meta/counters.json        meta/logger.json
//! ```
//!
//! Every write goes to a temporary file that is fsynced and renamed into
//! place, so a restart always reloads the last acknowledged state.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::entities::{
    Configuration, Datastream, Id, InferenceDeployment, ModelEntity, ResultEntity,
    TrainingDeployment,
};

pub trait Entity: Serialize + DeserializeOwned + Clone {
    const KIND: &'static str;
    fn id(&self) -> Id;
    fn table(state: &RegistryState) -> &BTreeMap<Id, Self>;
    fn table_mut(state: &mut RegistryState) -> &mut BTreeMap<Id, Self>;
}

macro_rules! entity {
    ($ty:ty, $kind:literal, $field:ident) => {
        impl Entity for $ty {
            const KIND: &'static str = $kind;
            fn id(&self) -> Id {
                self.id
            }
            fn table(state: &RegistryState) -> &BTreeMap<Id, Self> {
                &state.$field
            }
            fn table_mut(state: &mut RegistryState) -> &mut BTreeMap<Id, Self> {
                &mut state.$field
            }
        }
    };
}

entity!(ModelEntity, "models", models);
entity!(Configuration, "configurations", configurations);
entity!(TrainingDeployment, "deployments", deployments);
entity!(ResultEntity, "results", results);
entity!(InferenceDeployment, "inferences", inferences);
entity!(Datastream, "datastreams", datastreams);

/// Last id handed out per entity kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    #[serde(default)]
    pub counters: BTreeMap<String, Id>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegistryState {
    pub models: BTreeMap<Id, ModelEntity>,
    pub configurations: BTreeMap<Id, Configuration>,
    pub deployments: BTreeMap<Id, TrainingDeployment>,
    pub results: BTreeMap<Id, ResultEntity>,
    pub inferences: BTreeMap<Id, InferenceDeployment>,
    pub datastreams: BTreeMap<Id, Datastream>,
    pub counters: Counters,
    /// Next control topic offset the logger will read.
    pub logger_offset: u64,
}

#[derive(Debug)]
pub struct Registry {
    dir: PathBuf,
    state: Mutex<RegistryState>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().expect("registry paths have a parent");
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    // persist the rename itself
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

fn load_table<T: Entity>(dir: &Path) -> io::Result<BTreeMap<Id, T>> {
    let kind_dir = dir.join(T::KIND);
    fs::create_dir_all(&kind_dir)?;
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(&kind_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let entity: T = serde_json::from_slice(&fs::read(&path)?).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: {e}", path.display()),
            )
        })?;
        out.insert(entity.id(), entity);
    }
    Ok(out)
}

impl Registry {
    /// Opens (or initializes) the registry rooted at `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("blobs"))?;
        fs::create_dir_all(dir.join("meta"))?;
        let mut state = RegistryState {
            models: load_table(&dir)?,
            configurations: load_table(&dir)?,
            deployments: load_table(&dir)?,
            results: load_table(&dir)?,
            inferences: load_table(&dir)?,
            datastreams: load_table(&dir)?,
            ..RegistryState::default()
        };
        let counters = dir.join("meta/counters.json");
        if counters.exists() {
            state.counters = serde_json::from_slice(&fs::read(&counters)?)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        }
        let logger = dir.join("meta/logger.json");
        if logger.exists() {
            let v: serde_json::Value = serde_json::from_slice(&fs::read(&logger)?)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            state.logger_offset = v["next_offset"].as_u64().unwrap_or(0);
        }
        // ids never go backwards, even if the counters file predates an entity
        fn bump<T: Entity>(state: &mut RegistryState) {
            let max = T::table(state).keys().next_back().copied().unwrap_or(0);
            let c = state
                .counters
                .counters
                .entry(T::KIND.to_string())
                .or_insert(0);
            *c = (*c).max(max);
        }
        bump::<ModelEntity>(&mut state);
        bump::<Configuration>(&mut state);
        bump::<TrainingDeployment>(&mut state);
        bump::<ResultEntity>(&mut state);
        bump::<InferenceDeployment>(&mut state);
        bump::<Datastream>(&mut state);
        Ok(Self {
            dir,
            state: Mutex::new(state),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn lock(&self) -> MutexGuard<'_, RegistryState> {
        self.state.lock().expect("registry poisoned")
    }

    pub fn read<R>(&self, f: impl FnOnce(&RegistryState) -> R) -> R {
        f(&self.lock())
    }

    pub fn snapshot(&self) -> RegistryState {
        self.lock().clone()
    }

    pub fn get<T: Entity>(&self, id: Id) -> Option<T> {
        T::table(&self.lock()).get(&id).cloned()
    }

    pub fn list<T: Entity>(&self) -> Vec<T> {
        T::table(&self.lock()).values().cloned().collect()
    }

    fn persist<T: Entity>(&self, entity: &T) -> io::Result<()> {
        let path = self.dir.join(T::KIND).join(format!("{}.json", entity.id()));
        write_atomic(&path, &serde_json::to_vec_pretty(entity)?)
    }

    /// Allocates the next id for `T` and stores the entity built from it.
    pub fn create<T: Entity>(&self, build: impl FnOnce(Id) -> T) -> io::Result<T> {
        self.try_create(|id| Ok::<_, io::Error>(build(id)))
    }

    /// Like [`Registry::create`], but `build` may fail (and may write blobs
    /// named after the id before the entity becomes visible).
    pub fn try_create<T: Entity, E: From<io::Error>>(
        &self,
        build: impl FnOnce(Id) -> Result<T, E>,
    ) -> Result<T, E> {
        let mut state = self.lock();
        let id = state.counters.counters.get(T::KIND).copied().unwrap_or(0) + 1;
        let entity = build(id)?;
        debug_assert_eq!(entity.id(), id);
        let mut counters = state.counters.clone();
        counters.counters.insert(T::KIND.to_string(), id);
        let bytes = serde_json::to_vec(&counters).map_err(io::Error::from)?;
        write_atomic(&self.dir.join("meta/counters.json"), &bytes)?;
        self.persist(&entity)?;
        state.counters = counters;
        T::table_mut(&mut state).insert(id, entity.clone());
        Ok(entity)
    }

    /// Applies `f` to the stored entity and persists the result. The entity is
    /// left untouched when `f` fails.
    pub fn update<T: Entity, R, E: From<io::Error>>(
        &self,
        id: Id,
        f: impl FnOnce(&mut T) -> Result<R, E>,
    ) -> Result<Option<R>, E> {
        let mut state = self.lock();
        let Some(current) = T::table(&state).get(&id) else {
            return Ok(None);
        };
        let mut next = current.clone();
        let out = f(&mut next)?;
        self.persist(&next)?;
        T::table_mut(&mut state).insert(id, next);
        Ok(Some(out))
    }

    /// Removes an entity if `allow` agrees, given the whole state.
    pub fn remove_if<T: Entity, E: From<io::Error>>(
        &self,
        id: Id,
        allow: impl FnOnce(&RegistryState) -> Result<(), E>,
    ) -> Result<Option<T>, E> {
        let mut state = self.lock();
        if !T::table(&state).contains_key(&id) {
            return Ok(None);
        }
        allow(&state)?;
        let path = self.dir.join(T::KIND).join(format!("{id}.json"));
        fs::remove_file(&path)?;
        Ok(T::table_mut(&mut state).remove(&id))
    }

    pub fn set_logger_offset(&self, next_offset: u64) -> io::Result<()> {
        let mut state = self.lock();
        write_atomic(
            &self.dir.join("meta/logger.json"),
            serde_json::json!({ "next_offset": next_offset })
                .to_string()
                .as_bytes(),
        )?;
        state.logger_offset = next_offset;
        Ok(())
    }

    pub fn put_blob(&self, name: &str, bytes: &[u8]) -> io::Result<()> {
        write_atomic(&self.dir.join("blobs").join(name), bytes)
    }

    pub fn read_blob(&self, name: &str) -> io::Result<Vec<u8>> {
        fs::read(self.dir.join("blobs").join(name))
    }
}
