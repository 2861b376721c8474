use std::sync::Mutex;

use crate::protocol::ControlInput;

#[derive(Debug, Default)]
struct Slot {
    latest: Option<ControlInput>,
    last_seq: Option<u64>,
}

/// Latest-wins input slot between the network reader and the tick loop.
///
/// Inputs whose `seq` does not exceed the last accepted one are dropped.
#[derive(Debug, Default)]
pub struct Mailbox {
    slot: Mutex<Slot>,
}

impl Mailbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns whether the input was accepted.
    pub fn deposit(&self, input: ControlInput) -> bool {
        let mut slot = self.slot.lock().expect("mailbox poisoned");
        if slot.last_seq.is_some_and(|s| input.seq <= s) {
            return false;
        }
        slot.last_seq = Some(input.seq);
        slot.latest = Some(input);
        true
    }

    /// The newest input since the last call, if any.
    pub fn take(&self) -> Option<ControlInput> {
        self.slot.lock().expect("mailbox poisoned").latest.take()
    }

    /// Forget pending input and the sequence baseline, for a new client.
    pub fn reset(&self) {
        *self.slot.lock().expect("mailbox poisoned") = Slot::default();
    }
}
