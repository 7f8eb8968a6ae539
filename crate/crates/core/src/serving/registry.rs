use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use crate::backbone::{generate, Generation, Model, Session, TokenId};
use crate::format::load_adapter_for;
use crate::peft::AdapterSet;
use crate::tensor::Scalar;

use super::ServingError;

/// Tenant adapters over one shared backbone. Resolution takes a read lock;
/// registration takes the write lock only after the adapter is validated.
pub struct TenantRegistry<T> {
    model: Arc<Model<T>>,
    tenants: RwLock<HashMap<String, Arc<AdapterSet<T>>>>,
}

/// Produces fresh per-request sessions for one tenant.
#[derive(Clone)]
pub struct SessionFactory<T> {
    pub tenant: String,
    model: Arc<Model<T>>,
    adapter: Arc<AdapterSet<T>>,
}

impl<T: Scalar> SessionFactory<T> {
    pub fn adapter(&self) -> &Arc<AdapterSet<T>> {
        &self.adapter
    }

    pub fn session(&self) -> Result<Session<T>, ServingError> {
        Ok(Session::new(Arc::clone(&self.model), Arc::clone(&self.adapter))?)
    }

    pub fn generate(&self, prompt: &[TokenId], max_new: usize, beam: usize) -> Result<Generation, ServingError> {
        Ok(generate(&self.model, &self.adapter, prompt, max_new, beam)?)
    }
}

impl<T: Scalar> TenantRegistry<T> {
    pub fn new(model: Arc<Model<T>>) -> Self {
        TenantRegistry { model, tenants: RwLock::new(HashMap::new()) }
    }

    pub fn model(&self) -> &Arc<Model<T>> {
        &self.model
    }

    pub fn register(&self, id: &str, adapter: AdapterSet<T>) -> Result<(), ServingError> {
        adapter.check_compatible(self.model.config())?;
        let mut map = self.tenants.write().expect("registry lock poisoned");
        if map.contains_key(id) {
            return Err(ServingError::DuplicateTenant(id.to_string()));
        }
        map.insert(id.to_string(), Arc::new(adapter));
        Ok(())
    }

    /// Loads an adapter file, checks it against the backbone and registers it.
    pub fn register_file(&self, id: &str, path: &Path) -> Result<(), ServingError> {
        let bytes = std::fs::read(path).map_err(|source| crate::format::FormatError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let set = load_adapter_for::<T>(&bytes, self.model.config())?;
        self.register(id, set)
    }

    pub fn resolve(&self, id: &str) -> Result<SessionFactory<T>, ServingError> {
        let map = self.tenants.read().expect("registry lock poisoned");
        let adapter = map.get(id).ok_or_else(|| ServingError::UnknownTenant(id.to_string()))?;
        Ok(SessionFactory {
            tenant: id.to_string(),
            model: Arc::clone(&self.model),
            adapter: Arc::clone(adapter),
        })
    }

    /// Registered tenant ids, sorted.
    pub fn tenants(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.tenants.read().expect("registry lock poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn len(&self) -> usize {
        self.tenants.read().expect("registry lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A single generation request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub tenant: String,
    pub prompt: Vec<TokenId>,
    pub max_new: usize,
    pub beam: usize,
}

/// Serves `requests` on `threads` worker threads sharing the backbone.
/// Results come back in request order.
pub fn serve_concurrent<T: Scalar>(
    registry: &TenantRegistry<T>,
    requests: &[Request],
    threads: usize,
) -> Vec<Result<Generation, ServingError>> {
    let threads = threads.max(1);
    let mut results: Vec<Option<Result<Generation, ServingError>>> = (0..requests.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                s.spawn(move || {
                    requests
                        .iter()
                        .enumerate()
                        .skip(w)
                        .step_by(threads)
                        .map(|(i, r)| {
                            let out = registry
                                .resolve(&r.tenant)
                                .and_then(|f| f.generate(&r.prompt, r.max_new, r.beam));
                            (i, out)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, out) in h.join().expect("worker panicked") {
                results[i] = Some(out);
            }
        }
    });
    results.into_iter().map(|r| r.expect("every request served")).collect()
}
