//! Name-keyed registries of interchangeable strategies.
//!
//! Tokenizers, training objectives and decoders are each selected at runtime
//! from a string (config key or CLI flag). A registry maps that string to a
//! constructor returning a boxed trait object.

use crate::error::{Error, Result};

pub type Factory<T, A> = fn(&A) -> Box<T>;

pub struct Registry<T: ?Sized, A = ()> {
    kind: &'static str,
    entries: Vec<(&'static str, Factory<T, A>)>,
}

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &'static str, factory: Factory<T, A>) -> &mut Self {
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = factory;
        } else {
            self.entries.push((name, factory));
        }
        self
    }

    pub fn create(&self, name: &str, args: &A) -> Result<Box<T>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| f(args))
            .ok_or_else(|| Error::Unknown {
                kind: self.kind,
                name: name.to_string(),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}
