use std::fmt;
use std::sync::{Arc, LazyLock};

use sharded_slab::Slab;

use super::task::Task;
use crate::backoff::KEEP_ACTIVE;

/// Tasks that published a handle and have not been resumed yet. Keys carry a
/// generation, so a handle that was already consumed no longer resolves.
static PARKED: LazyLock<Slab<Arc<Task>>> = LazyLock::new(Slab::new);

/// Token that reschedules one suspended task. Encoded as a single word
/// strictly greater than [`KEEP_ACTIVE`], so it can live in a resume word
/// next to the two sentinels.
#[derive(PartialEq, Eq, Hash)]
pub struct ResumeHandle(usize);

impl ResumeHandle {
    /// Rebuilds a handle from a word previously obtained through
    /// [`ResumeHandle::as_word`]. Sentinel values yield `None`.
    pub fn from_word(word: usize) -> Option<Self> {
        (word > KEEP_ACTIVE).then_some(Self(word))
    }

    pub fn as_word(&self) -> usize {
        self.0
    }

    pub fn into_word(self) -> usize {
        self.0
    }
}

impl fmt::Debug for ResumeHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ResumeHandle({:#x})", self.0)
    }
}

const OFFSET: usize = KEEP_ACTIVE + 1;

pub(super) fn register(task: Arc<Task>) -> ResumeHandle {
    let key = PARKED
        .insert(task)
        .expect("too many suspended tasks for the handle registry");
    ResumeHandle(key.checked_add(OFFSET).expect("handle key overflow"))
}

/// Consumes a handle. `None` if it was never issued or was already taken.
pub(super) fn take(word: usize) -> Option<Arc<Task>> {
    let key = word.checked_sub(OFFSET)?;
    PARKED.take(key)
}
