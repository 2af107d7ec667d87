//! Visited set: canonical keys packed in one arena, indexed by a hash table of ids.

use std::hash::BuildHasher;

use hashbrown::HashTable;
use rustc_hash::FxBuildHasher;

#[derive(Default)]
pub(crate) struct StateStore {
    arena: Vec<u8>,
    /// `ends[i]` is the arena offset one past key `i`.
    ends: Vec<u64>,
    table: HashTable<u32>,
    hasher: FxBuildHasher,
}

impl StateStore {
    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn key(&self, id: u32) -> &[u8] {
        let i = id as usize;
        let start = if i == 0 { 0 } else { self.ends[i - 1] as usize };
        &self.arena[start..self.ends[i] as usize]
    }

    fn hash(&self, key: &[u8]) -> u64 {
        self.hasher.hash_one(key)
    }

    pub fn find(&self, key: &[u8]) -> Option<u32> {
        let h = self.hash(key);
        self.table.find(h, |&id| self.key(id) == key).copied()
    }

    /// Id of `key`, and whether it was newly inserted.
    pub fn intern(&mut self, key: &[u8]) -> (u32, bool) {
        let h = self.hash(key);
        let Self {
            arena,
            ends,
            table,
            hasher,
        } = self;
        let slice = |id: u32| {
            let i = id as usize;
            let start = if i == 0 { 0 } else { ends[i - 1] as usize };
            &arena[start..ends[i] as usize]
        };
        if let Some(&id) = table.find(h, |&id| slice(id) == key) {
            return (id, false);
        }
        let id = u32::try_from(ends.len()).expect("state ids fit in u32");
        arena.extend_from_slice(key);
        ends.push(arena.len() as u64);
        let (arena, ends) = (&*arena, &*ends);
        table.insert_unique(h, id, |&other| {
            let i = other as usize;
            let start = if i == 0 { 0 } else { ends[i - 1] as usize };
            hasher.hash_one(&arena[start..ends[i] as usize])
        });
        (id, true)
    }
}
