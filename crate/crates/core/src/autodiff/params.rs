use std::collections::HashMap;

use super::{AdResult, AutodiffError, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
    /// Rows (of the leading axis) that the optimizer never updates.
    pub frozen_rows: Vec<usize>,
}

/// Named parameter registry in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> AdResult<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            trainable: true,
            frozen_rows: Vec::new(),
        });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> AdResult<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<T> {
        &mut self.entries[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn freeze_row(&mut self, id: ParamId, row: usize) {
        let rows = &mut self.entries[id.0].frozen_rows;
        if !rows.contains(&row) {
            rows.push(row);
        }
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Total scalar count over all parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Same registry with every value converted to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    trainable: e.trainable,
                    frozen_rows: e.frozen_rows.clone(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Overwrites values from `(name, tensor)` pairs; names and shapes must
    /// match the registry exactly.
    pub fn assign_from(&mut self, values: Vec<(String, Tensor<f64>)>) -> AdResult<()> {
        if values.len() != self.entries.len() {
            return Err(AutodiffError::Shape {
                op: "assign_from",
                detail: format!("{} parameters given, {} registered", values.len(), self.entries.len()),
            });
        }
        for (name, value) in values {
            let id = self.id(&name)?;
            let entry = &mut self.entries[id.0];
            if entry.value.shape() != value.shape() {
                return Err(AutodiffError::Shape {
                    op: "assign_from",
                    detail: format!("`{name}`: {:?} vs {:?}", entry.value.shape(), value.shape()),
                });
            }
            entry.value = value.cast();
        }
        Ok(())
    }
}
